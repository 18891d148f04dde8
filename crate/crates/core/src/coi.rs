//! Center-of-inertia quantities, reference trajectories and the
//! measurement-based COI angle estimate.

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::util::wrap_angle;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoiState {
    /// COI speed (pu).
    pub omega: f64,
    /// COI angle (electrical radians).
    pub delta: f64,
    /// COI frequency (Hz).
    pub freq: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CoiError {
    #[error("no machines online")]
    Empty,
    #[error("inertia must be positive")]
    NonPositiveInertia,
    #[error("weights must be nonnegative and sum to one (sum {0})")]
    Weights(f64),
    #[error("length mismatch")]
    Length,
    #[error("reference anchors are not initialized")]
    NoAnchors,
}

/// Normalized inertia weights `h_i = H_i / H_T`.
pub fn inertia_weights(inertias: &[f64]) -> Result<Vec<f64>, CoiError> {
    if inertias.is_empty() {
        return Err(CoiError::Empty);
    }
    if inertias.iter().any(|h| !(*h > 0.0)) {
        return Err(CoiError::NonPositiveInertia);
    }
    let total: f64 = inertias.iter().sum();
    Ok(inertias.iter().map(|h| h / total).collect())
}

/// Inertia-weighted COI speed and angle. `f0`/`omega0` give the frequency.
pub fn coi_states(
    speeds: &[f64],
    angles: &[f64],
    inertias: &[f64],
    omega0: f64,
    f0: f64,
) -> Result<CoiState, CoiError> {
    if speeds.len() != inertias.len() || angles.len() != inertias.len() {
        return Err(CoiError::Length);
    }
    let h = inertia_weights(inertias)?;
    let omega: f64 = h.iter().zip(speeds).map(|(h, w)| h * w).sum();
    let delta: f64 = h.iter().zip(angles).map(|(h, d)| h * d).sum();
    Ok(CoiState {
        omega,
        delta,
        freq: f0 * omega / omega0,
    })
}

/// Streaming angle unwrapper.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Unwrapper {
    last: Option<(f64, f64)>,
}

impl Unwrapper {
    pub fn new() -> Self {
        Self { last: None }
    }

    /// Starts from a known continuous value.
    pub fn seeded(value: f64) -> Self {
        Self {
            last: Some((wrap_angle(value), value)),
        }
    }

    /// Feeds one wrapped sample and returns the continuous value.
    pub fn push(&mut self, wrapped: f64) -> f64 {
        let out = match self.last {
            None => wrapped,
            Some((prev_wrapped, prev_out)) => prev_out + wrap_angle(wrapped - prev_wrapped),
        };
        self.last = Some((wrapped, out));
        out
    }
}

/// Unwraps a sequence of angles given in `(-pi, pi]`.
pub fn unwrap(seq: &[f64]) -> Vec<f64> {
    let mut u = Unwrapper::new();
    seq.iter().map(|x| u.push(*x)).collect()
}

/// Checks that sensor weights are nonnegative and sum to one.
pub fn check_weights(weights: &[f64]) -> Result<(), CoiError> {
    let sum: f64 = weights.iter().sum();
    if weights.is_empty() || weights.iter().any(|w| !(*w >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(CoiError::Weights(sum));
    }
    Ok(())
}

/// Weighted average of unwrapped bus angles; the additive constant is zero.
pub fn estimate_coi_angle(angles: &[f64], weights: &[f64]) -> Result<f64, CoiError> {
    if angles.len() != weights.len() {
        return Err(CoiError::Length);
    }
    check_weights(weights)?;
    Ok(angles.iter().zip(weights).map(|(a, w)| a * w).sum())
}

/// Cumulative trapezoidal integral of `omega_b (omega - omega0)` over
/// uniformly spaced COI speed samples, starting at `c`.
pub fn coi_angle_by_integration(speeds: &[f64], dt: f64, omega_b: f64, omega0: f64, c: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(speeds.len());
    let mut acc = c;
    for (k, w) in speeds.iter().enumerate() {
        if k > 0 {
            acc += 0.5 * dt * omega_b * ((speeds[k - 1] - omega0) + (w - omega0));
        }
        out.push(acc);
    }
    out
}

/// Anchors captured at the pre-disturbance equilibrium.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReferenceAnchors {
    /// Per-actuator local angles at `t0`.
    pub theta_local: Vec<f64>,
    /// Wide-area reference angle at `t0`.
    pub theta_ref: Option<f64>,
    /// Per-machine rotor angles at `t0`.
    pub delta_machine: Vec<f64>,
    /// COI angle at `t0`.
    pub delta_coi: Option<f64>,
}

/// Desired trajectory of actuator `j`: COI translation plus fixed offset.
pub fn reference_angle(theta_ref_now: f64, anchors: &ReferenceAnchors, j: usize) -> Result<f64, CoiError> {
    let t0 = anchors.theta_ref.ok_or(CoiError::NoAnchors)?;
    let tj = *anchors.theta_local.get(j).ok_or(CoiError::NoAnchors)?;
    Ok(theta_ref_now - t0 + tj)
}

/// Desired rotor angle of machine `i`.
pub fn reference_rotor_angle(delta_coi_now: f64, anchors: &ReferenceAnchors, i: usize) -> Result<f64, CoiError> {
    let d0 = anchors.delta_coi.ok_or(CoiError::NoAnchors)?;
    let di = *anchors.delta_machine.get(i).ok_or(CoiError::NoAnchors)?;
    Ok(delta_coi_now - d0 + di)
}

/// Desired frequency in Hz at a bus, i.e. the COI frequency.
pub fn reference_frequency(coi: &CoiState) -> f64 {
    coi.freq
}

/// Degrees from radians, used for reporting.
pub fn to_degrees(rad: f64) -> f64 {
    rad * 180.0 / PI
}
