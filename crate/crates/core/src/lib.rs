//! Transient-stability simulation with trajectory-tracking wide-area
//! synchronizing control for inverter-based resources.
//!
//! The crate is `no_std` (with `alloc`). File formats, the command line and
//! the batch harness live in the `synctrack` companion crate.
//!
//! Module map:
//!
//! * [`netmodel`]: case description, admittance matrix, power flow, topology events.
//! * [`machine`]: classical synchronous machine, droop governor, initialization.
//! * [`coi`]: center-of-inertia quantities, angle unwrapping, reference trajectories.
//! * [`wacs`]: the two-path synchronizing controller (washout, lead-lag, gain, limits).
//! * [`ibr`]: simplified converter interface with low-voltage power logic.
//! * [`comms`]: sensor lag, channel delay, jitter and noise.
//! * [`engine`]: network solve, fixed-step RK4 simulation, stability classification.
//! * [`linear`]: numerical linearization, eigenvalue sweeps, frequency response.
//! * [`analysis`]: first-swing statistics, COI-frame energy analysis, CCT and transfer-limit searches.
#![no_std]

extern crate alloc;

pub mod analysis;
pub mod coi;
pub mod comms;
pub mod engine;
pub mod ibr;
pub mod linear;
pub mod machine;
pub mod netmodel;
pub mod wacs;

mod dense;
mod util;

pub use num_complex::Complex64;
pub use util::wrap_angle;
