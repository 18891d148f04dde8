//! Simplified converter interface for an inverter-based resource.
//!
//! The interface injects active current only. The signal chain is
//!
//! ```text
//! P_cmd = clamp(P_ref - p_s, ±L_e)
//! Î_p   = P_cmd / max(V_t, V_min)
//! I_lag : first-order lag T_i toward Î_p
//! I_p   = clamp(I_lag, ±L_v(V_t))      (low-voltage power logic)
//! ```
//!
//! A positive `p_s` is a charging command and lowers the injection.

#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IbrParams {
    /// Power rating, also the symmetric power-command bound `L_e` (pu).
    pub rating: f64,
    /// Floor on the voltage used as divisor (pu).
    pub v_min: f64,
    /// Interface lag time constant (s).
    pub t_i: f64,
    /// LVPL zero-current voltage (pu).
    pub v_zero: f64,
    /// LVPL breakpoint voltage (pu).
    pub v_break: f64,
    /// Rated active-current limit (pu).
    pub current_limit: f64,
    /// Storage capacity in pu-hours, if energy is tracked.
    pub energy_capacity: Option<f64>,
}

impl IbrParams {
    /// Parameters with the default interface values for a given rating.
    pub fn with_rating(rating: f64) -> Self {
        Self {
            rating,
            v_min: 0.1,
            t_i: 0.02,
            v_zero: 0.5,
            v_break: 0.9,
            current_limit: 1.1 * rating,
            energy_capacity: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct IbrState {
    /// Lagged active-current command (pu).
    pub i_lag: f64,
    /// Stored energy (pu-hours); only meaningful with a capacity.
    pub energy: f64,
}

/// Voltage-dependent active-current bound.
pub fn lvpl_limit(v_t: f64, p: &IbrParams) -> f64 {
    if v_t <= p.v_zero {
        0.0
    } else if v_t >= p.v_break {
        p.current_limit
    } else {
        p.current_limit * (v_t - p.v_zero) / (p.v_break - p.v_zero)
    }
}

/// Power bounds after optional state-of-charge derating. An empty store
/// cannot discharge and a full store cannot charge.
pub fn power_bounds(p: &IbrParams, state: &IbrState, soc_derating: bool) -> (f64, f64) {
    let (mut lo, mut hi) = (-p.rating, p.rating);
    if soc_derating {
        if let Some(cap) = p.energy_capacity {
            if state.energy <= 0.0 {
                hi = 0.0;
            }
            if state.energy >= cap {
                lo = 0.0;
            }
        }
    }
    (lo, hi)
}

pub fn power_command(p_ref: f64, p_s: f64, bounds: (f64, f64)) -> f64 {
    (p_ref - p_s).clamp(bounds.0, bounds.1)
}

pub fn current_command(p_cmd: f64, v_t: f64, p: &IbrParams) -> f64 {
    p_cmd / v_t.max(p.v_min)
}

pub fn lag_derivative(i_lag: f64, i_cmd: f64, p: &IbrParams) -> f64 {
    (i_cmd - i_lag) / p.t_i
}

/// Final LVPL saturation stage.
pub fn output_current(i_lag: f64, v_t: f64, p: &IbrParams) -> f64 {
    let lim = lvpl_limit(v_t, p);
    i_lag.clamp(-lim, lim)
}

/// One discrete step of the interface with inputs held over `dt`.
/// Returns the injected active current `I_p`.
pub fn converter_step(
    state: &mut IbrState,
    p_ref: f64,
    p_s: f64,
    v_t: f64,
    p: &IbrParams,
    dt: f64,
) -> f64 {
    let p_cmd = power_command(p_ref, p_s, power_bounds(p, state, false));
    let i_cmd = current_command(p_cmd, v_t, p);
    state.i_lag = i_cmd + (state.i_lag - i_cmd) * (-dt / p.t_i).exp();
    let i_p = output_current(state.i_lag, v_t, p);
    if p.energy_capacity.is_some() {
        state.energy -= i_p * v_t * dt / 3600.0;
    }
    i_p
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lvpl_breakpoints() {
        let mut p = IbrParams::with_rating(1.0);
        assert_eq!(lvpl_limit(0.0, &p), 0.0);
        assert!((lvpl_limit(1.0, &p) - 1.1).abs() < 1e-15);
        p.current_limit = 1.1;
        assert!((lvpl_limit(0.7, &p) - 0.55).abs() < 1e-12);
        assert_eq!(lvpl_limit(0.5, &p), 0.0);
        assert!((lvpl_limit(0.9, &p) - 1.1).abs() < 1e-15);
    }

    #[test]
    fn steady_state_current() {
        let p = IbrParams::with_rating(1.0);
        let mut s = IbrState::default();
        let mut ip = 0.0;
        for _ in 0..2000 {
            ip = converter_step(&mut s, 0.5, 0.0, 1.0, &p, 0.001);
        }
        assert!((ip - 0.5).abs() < 1e-12);
    }

    #[test]
    fn power_saturation() {
        assert_eq!(power_command(2.0, 0.0, (-1.0, 1.0)), 1.0);
        assert_eq!(power_command(0.0, 3.0, (-1.0, 1.0)), -1.0);
        // positive p_s is charging
        assert_eq!(power_command(0.2, 0.5, (-1.0, 1.0)), -0.3);
    }

    #[test]
    fn low_voltage_two_stage_limit() {
        let p = IbrParams::with_rating(1.0);
        assert_eq!(current_command(0.5, 0.01, &p), 5.0);
        let mut s = IbrState::default();
        let ip = converter_step(&mut s, 0.5, 0.0, 0.01, &p, 0.01);
        assert!(s.i_lag > 1.0);
        assert_eq!(ip, 0.0);
    }

    #[test]
    fn soc_derating_blocks_discharge_when_empty() {
        let mut p = IbrParams::with_rating(1.0);
        p.energy_capacity = Some(2.0);
        let empty = IbrState {
            i_lag: 0.0,
            energy: 0.0,
        };
        assert_eq!(power_bounds(&p, &empty, true), (-1.0, 0.0));
        assert_eq!(power_bounds(&p, &empty, false), (-1.0, 1.0));
        let full = IbrState {
            i_lag: 0.0,
            energy: 2.0,
        };
        assert_eq!(power_bounds(&p, &full, true), (0.0, 1.0));
    }
}
