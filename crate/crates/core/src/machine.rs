//! Classical synchronous machine: constant EMF behind transient reactance,
//! swing equations, and a first-order droop governor.

use num_complex::Complex64;
#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;
use serde::{Deserialize, Serialize};

/// Droop governor parameters, system base.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GovernorParams {
    /// Droop `R` (pu speed per pu power).
    pub droop: f64,
    /// Lag time constant `T_g` in seconds.
    pub time_constant: f64,
    pub p_min: f64,
    pub p_max: f64,
}

/// Machine parameters on the system MVA base.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MachineParams {
    /// Inertia constant `H` (s).
    pub h: f64,
    /// Damping coefficient `D` (pu).
    pub d: f64,
    /// Transient reactance `X'` (pu).
    pub xd_prime: f64,
    pub governor: Option<GovernorParams>,
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct MachineState {
    /// Rotor angle, electrical radians.
    pub delta: f64,
    /// Rotor speed, pu.
    pub omega: f64,
    /// Mechanical power (governor output), pu.
    pub p_mech: f64,
    /// Electrical power, pu (recorded, not integrated).
    pub p_elec: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MachineError {
    #[error("terminal voltage is zero")]
    ZeroTerminalVoltage,
}

/// Swing equations in per-unit accelerating power:
/// `d(delta)/dt = wb (w - w0)`, `d(w)/dt = -D/(2H) (w - w0) + (Pm - Pe) / (2 H w)`.
pub fn swing_derivatives(
    state: &MachineState,
    params: &MachineParams,
    omega0: f64,
    omega_b: f64,
) -> (f64, f64) {
    let dw = state.omega - omega0;
    let ddelta = omega_b * dw;
    let domega = -params.d / (2.0 * params.h) * dw
        + (state.p_mech - state.p_elec) / (2.0 * params.h * state.omega);
    (ddelta, domega)
}

/// Electrical power of a machine behind reactance `x` against an infinite bus.
pub fn smib_electrical_power(e: f64, v: f64, x: f64, delta: f64) -> f64 {
    e * v / x * delta.sin()
}

/// Target of the governor lag: setpoint minus droop response, clamped.
pub fn governor_target(p_set: f64, speed_dev: f64, gov: &GovernorParams) -> f64 {
    (p_set - speed_dev / gov.droop).clamp(gov.p_min, gov.p_max)
}

/// Continuous-time governor derivative used inside the integrator.
pub fn governor_derivative(p_mech: f64, p_set: f64, speed_dev: f64, gov: &GovernorParams) -> f64 {
    (governor_target(p_set, speed_dev, gov) - p_mech) / gov.time_constant
}

/// Exact step of the governor lag over `dt` with the speed deviation held.
pub fn governor_step(p_mech: f64, p_set: f64, speed_dev: f64, gov: &GovernorParams, dt: f64) -> f64 {
    let target = governor_target(p_set, speed_dev, gov);
    target + (p_mech - target) * (-dt / gov.time_constant).exp()
}

/// Initial condition for a classical machine from its terminal voltage and
/// complex power output. Returns the equilibrium state and `|E|`.
pub fn init_from_terminal(
    v_t: Complex64,
    s_out: Complex64,
    xd_prime: f64,
    omega0: f64,
) -> Result<(MachineState, f64), MachineError> {
    if v_t.norm() == 0.0 {
        return Err(MachineError::ZeroTerminalVoltage);
    }
    let i_t = (s_out / v_t).conj();
    let e = v_t + Complex64::new(0.0, xd_prime) * i_t;
    let p_e = (e * i_t.conj()).re;
    Ok((
        MachineState {
            delta: e.arg(),
            omega: omega0,
            p_mech: p_e,
            p_elec: p_e,
        },
        e.norm(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::PI;

    fn params(h: f64, d: f64) -> MachineParams {
        MachineParams {
            h,
            d,
            xd_prime: 0.3,
            governor: None,
        }
    }

    #[test]
    fn swing_at_sync_speed() {
        let s = MachineState {
            delta: 0.3,
            omega: 1.0,
            p_mech: 0.8,
            p_elec: 0.8,
        };
        let (dd, dw) = swing_derivatives(&s, &params(3.0, 2.0), 1.0, 2.0 * PI * 60.0);
        assert_eq!(dd, 0.0);
        assert_eq!(dw, 0.0);
    }

    #[test]
    fn swing_substitution() {
        let s = MachineState {
            delta: 0.0,
            omega: 1.0,
            p_mech: 1.6,
            p_elec: 1.0,
        };
        let (_, dw) = swing_derivatives(&s, &params(3.0, 0.0), 1.0, 377.0);
        assert!((dw - 0.1).abs() < 1e-15);
    }

    #[test]
    fn swing_linear_in_accelerating_power() {
        let p = params(4.0, 1.5);
        let at = |pa: f64| {
            let s = MachineState {
                delta: 0.0,
                omega: 1.01,
                p_mech: pa,
                p_elec: 0.0,
            };
            swing_derivatives(&s, &p, 1.0, 377.0).1
        };
        let base = at(0.0);
        let slope = at(1.0) - base;
        for pa in [-2.0, -0.3, 0.7, 3.0] {
            assert!((at(pa) - base - slope * pa).abs() < 1e-14);
        }
    }

    #[test]
    fn smib_power() {
        assert_eq!(smib_electrical_power(1.0, 1.0, 0.5, 0.0), 0.0);
        assert!((smib_electrical_power(1.0, 1.0, 0.5, PI / 2.0) - 2.0).abs() < 1e-15);
        assert!((smib_electrical_power(1.05, 1.0, 0.3, PI / 6.0) - 1.75).abs() < 1e-12);
    }

    #[test]
    fn governor_droop() {
        let gov = GovernorParams {
            droop: 0.05,
            time_constant: 2.0,
            p_min: 0.0,
            p_max: 2.0,
        };
        assert_eq!(governor_step(0.5, 0.5, 0.0, &gov, 0.01), 0.5);
        let mut p = 0.5;
        for _ in 0..10_000 {
            p = governor_step(p, 0.5, -0.01, &gov, 0.01);
        }
        assert!((p - 0.7).abs() < 1e-9);
        let mut p = 1.9;
        for _ in 0..10_000 {
            p = governor_step(p, 1.9, -0.05, &gov, 0.01);
        }
        assert!((p - 2.0).abs() < 1e-12);
    }

    #[test]
    fn init_unloaded() {
        let v = Complex64::from_polar(1.02, 0.2);
        let (s, e) = init_from_terminal(v, Complex64::new(0.0, 0.0), 0.3, 1.0).unwrap();
        assert!((e - 1.02).abs() < 1e-15);
        assert!((s.delta - 0.2).abs() < 1e-15);
    }

    #[test]
    fn init_complex_oracle() {
        let (s, e) =
            init_from_terminal(Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0), 0.3, 1.0)
                .unwrap();
        // E = 1 + j0.3
        assert!((e - 1.044_030_650_891_055).abs() < 1e-12);
        assert!((s.delta - 0.291_456_794_477_867).abs() < 1e-12);
        assert!((s.p_mech - 1.0).abs() < 1e-14);
        assert!(init_from_terminal(Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0), 0.3, 1.0)
            .is_err());
    }
}
