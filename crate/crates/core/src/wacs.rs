//! Wide-area synchronizing controller: two-path control error, washout and
//! lead-lag compensation, gain and output saturation.
//!
//! Filters are cascades of first-order sections
//! `H(s) = (b1 s + b0) / (s + a0)`, realized as `x' = -a0 x + u`,
//! `y = (b0 - b1 a0) x + b1 u`, and discretized with the trapezoidal rule.

use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Section {
    pub b1: f64,
    pub b0: f64,
    pub a0: f64,
}

impl Section {
    /// `s / (s + wc)`.
    pub fn washout(corner_hz: f64) -> Self {
        Self {
            b1: 1.0,
            b0: 0.0,
            a0: 2.0 * PI * corner_hz,
        }
    }

    /// `(T1 s + 1) / (T2 s + 1)` with maximum phase `lead_deg` at `center_hz`.
    pub fn lead_lag(center_hz: f64, lead_deg: f64) -> Self {
        let s = (lead_deg * PI / 180.0).sin();
        let a = (1.0 + s) / (1.0 - s);
        let wm = 2.0 * PI * center_hz;
        let t2 = 1.0 / (wm * a.sqrt());
        let t1 = a * t2;
        Self {
            b1: t1 / t2,
            b0: 1.0 / t2,
            a0: 1.0 / t2,
        }
    }

    pub fn response(&self, s: Complex64) -> Complex64 {
        (s * self.b1 + self.b0) / (s + self.a0)
    }

    fn c(&self) -> f64 {
        self.b0 - self.b1 * self.a0
    }
}

/// Chain of first-order sections with trapezoidal state.
#[derive(Clone, Debug, PartialEq)]
pub struct Filter {
    pub sections: Vec<Section>,
    pub states: Vec<f64>,
    inputs: Vec<f64>,
}

impl Filter {
    pub fn new(sections: Vec<Section>) -> Self {
        let n = sections.len();
        Self {
            sections,
            states: alloc::vec![0.0; n],
            inputs: alloc::vec![0.0; n],
        }
    }

    /// Advances by `dt` with the new input sample, returning the output.
    /// `dt = 0` returns the instantaneous output without changing state.
    pub fn step(&mut self, input: f64, dt: f64) -> f64 {
        let mut u = input;
        for k in 0..self.sections.len() {
            let s = self.sections[k];
            if dt > 0.0 {
                let x = self.states[k];
                let half = 0.5 * dt;
                self.states[k] = ((1.0 - s.a0 * half) * x + half * (self.inputs[k] + u)) / (1.0 + s.a0 * half);
                self.inputs[k] = u;
            }
            u = s.c() * self.states[k] + s.b1 * u;
        }
        u
    }

    /// Output for the current states and a given input (no state change).
    pub fn output(&self, input: f64) -> f64 {
        let mut u = input;
        for (s, x) in self.sections.iter().zip(&self.states) {
            u = s.c() * x + s.b1 * u;
        }
        u
    }

    /// Continuous-time state derivatives for a given input.
    pub fn derivatives(&self, states: &[f64], input: f64, out: &mut [f64]) {
        let mut u = input;
        for (k, s) in self.sections.iter().enumerate() {
            out[k] = -s.a0 * states[k] + u;
            u = s.c() * states[k] + s.b1 * u;
        }
    }

    /// Output of the continuous realization for given states.
    pub fn output_with(&self, states: &[f64], input: f64) -> f64 {
        let mut u = input;
        for (s, x) in self.sections.iter().zip(states) {
            u = s.c() * x + s.b1 * u;
        }
        u
    }

    pub fn response(&self, s: Complex64) -> Complex64 {
        self.sections.iter().fold(Complex64::new(1.0, 0.0), |acc, sec| acc * sec.response(s))
    }

    pub fn reset(&mut self) {
        self.states.iter_mut().for_each(|x| *x = 0.0);
        self.inputs.iter_mut().for_each(|x| *x = 0.0);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WashoutConfig {
    pub corner_hz: f64,
    #[serde(default = "one_u32")]
    pub order: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeadLagConfig {
    pub center_hz: f64,
    /// Phase lead per stage (degrees).
    pub lead_deg: f64,
    #[serde(default = "one_u32")]
    pub stages: u32,
}

fn one_u32() -> u32 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    pub enabled: bool,
    pub alpha1: f64,
    pub alpha2: f64,
    /// Gain in device per unit per radian.
    pub gain: f64,
    pub washout1: WashoutConfig,
    pub washout2: WashoutConfig,
    pub leadlag1: Vec<LeadLagConfig>,
    pub leadlag2: Vec<LeadLagConfig>,
    /// Output limits in device per unit.
    pub limit_min: f64,
    pub limit_max: f64,
    /// IBR ids carrying a controller; all IBRs when absent.
    pub actuators: Option<Vec<alloc::string::String>>,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            alpha1: 1.0,
            alpha2: 0.01,
            gain: 10.0,
            washout1: WashoutConfig {
                corner_hz: 0.1,
                order: 1,
            },
            washout2: WashoutConfig {
                corner_hz: 0.01,
                order: 2,
            },
            leadlag1: Vec::new(),
            leadlag2: alloc::vec![LeadLagConfig {
                center_hz: 0.02,
                lead_deg: 15.0,
                stages: 1,
            }],
            limit_min: -1.0,
            limit_max: 1.0,
            actuators: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("controller: {0} out of range")]
    Range(&'static str),
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.alpha1) {
            return Err(ConfigError::Range("alpha1"));
        }
        if !unit(self.alpha2) {
            return Err(ConfigError::Range("alpha2"));
        }
        if !self.gain.is_finite() {
            return Err(ConfigError::Range("gain"));
        }
        for w in [self.washout1, self.washout2] {
            if !(w.corner_hz > 0.0) || w.order == 0 {
                return Err(ConfigError::Range("washout"));
            }
        }
        for l in self.leadlag1.iter().chain(&self.leadlag2) {
            if !(l.center_hz > 0.0) || !(l.lead_deg.abs() < 90.0) {
                return Err(ConfigError::Range("leadlag"));
            }
        }
        if !(self.limit_min <= 0.0 && self.limit_max >= 0.0) {
            return Err(ConfigError::Range("limit"));
        }
        Ok(())
    }

    fn path(w: &WashoutConfig, ll: &[LeadLagConfig]) -> Filter {
        let mut s = Vec::new();
        for _ in 0..w.order {
            s.push(Section::washout(w.corner_hz));
        }
        for l in ll {
            for _ in 0..l.stages {
                s.push(Section::lead_lag(l.center_hz, l.lead_deg));
            }
        }
        Filter::new(s)
    }

    pub fn path1(&self) -> Filter {
        Self::path(&self.washout1, &self.leadlag1)
    }

    pub fn path2(&self) -> Filter {
        Self::path(&self.washout2, &self.leadlag2)
    }
}

/// `(e1, e2)` with `e1 = a1 (theta_j - theta_bar_j)`, `e2 = a2 (theta_ref - theta_ref0)`.
pub fn control_error_components(
    theta_j: f64,
    theta_bar_j: f64,
    theta_ref: f64,
    theta_ref0: f64,
    alpha1: f64,
    alpha2: f64,
) -> (f64, f64) {
    (alpha1 * (theta_j - theta_bar_j), alpha2 * (theta_ref - theta_ref0))
}

/// One controller attached to an actuator.
#[derive(Clone, Debug, PartialEq)]
pub struct Controller {
    pub path1: Filter,
    pub path2: Filter,
    pub gain: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub limits: (f64, f64),
    /// Local angle at the anchor time.
    pub theta_local0: f64,
    /// Wide-area reference at the anchor time.
    pub theta_ref0: f64,
    pub e1: f64,
    pub e2: f64,
    /// Latest saturated output (device pu).
    pub output: f64,
}

impl Controller {
    pub fn new(cfg: &ControllerConfig, theta_local0: f64, theta_ref0: f64) -> Self {
        Self {
            path1: cfg.path1(),
            path2: cfg.path2(),
            gain: cfg.gain,
            alpha1: cfg.alpha1,
            alpha2: cfg.alpha2,
            limits: (cfg.limit_min, cfg.limit_max),
            theta_local0,
            theta_ref0,
            e1: 0.0,
            e2: 0.0,
            output: 0.0,
        }
    }

    /// Error pair for the given measurements.
    pub fn errors(&self, theta_local: f64, theta_ref: f64) -> (f64, f64) {
        let theta_bar = theta_ref - self.theta_ref0 + self.theta_local0;
        control_error_components(theta_local, theta_bar, theta_ref, self.theta_ref0, self.alpha1, self.alpha2)
    }

    /// Advances the compensation by `dt` and returns the saturated output.
    pub fn step(&mut self, theta_local: f64, theta_ref: f64, dt: f64) -> f64 {
        let (e1, e2) = self.errors(theta_local, theta_ref);
        self.e1 = e1;
        self.e2 = e2;
        let y = self.path1.step(e1, dt) + self.path2.step(e2, dt);
        self.output = saturate(self.gain * y, self.limits);
        self.output
    }

    pub fn n_states(&self) -> usize {
        self.path1.sections.len() + self.path2.sections.len()
    }

    /// Continuous realization: derivatives of the filter states and the
    /// saturated output.
    pub fn continuous(&self, states: &[f64], theta_local: f64, theta_ref: f64, dx: &mut [f64]) -> f64 {
        let (e1, e2) = self.errors(theta_local, theta_ref);
        let n1 = self.path1.sections.len();
        let (s1, s2) = states.split_at(n1);
        let (d1, d2) = dx.split_at_mut(n1);
        self.path1.derivatives(s1, e1, d1);
        self.path2.derivatives(s2, e2, d2);
        let y = self.path1.output_with(s1, e1) + self.path2.output_with(s2, e2);
        saturate(self.gain * y, self.limits)
    }

    /// Unsaturated transfer from the local angle to the output.
    pub fn local_response(&self, s: Complex64) -> Complex64 {
        self.path1.response(s) * self.alpha1 * self.gain
    }
}

pub fn saturate(x: f64, limits: (f64, f64)) -> f64 {
    x.clamp(limits.0, limits.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn error_examples() {
        // theta_j(t0) = 0.2, reference moved from 0.1 to 0.3
        let theta_bar = 0.3 - 0.1 + 0.2;
        let (e1, e2) = control_error_components(0.7, theta_bar, 0.3, 0.1, 1.0, 1.0);
        assert!((e1 + e2 - (0.7 - 0.2)).abs() < 1e-15);
        assert_eq!(control_error_components(0.4, 0.4, 0.2, 0.2, 1.0, 0.5), (0.0, 0.0));
        let (e1, e2) = control_error_components(0.5, 0.3, 9.0, 1.0, 1.0, 0.0);
        assert!((e1 + e2 - 0.2).abs() < 1e-15);
    }

    #[test]
    fn lti_identity_through_controller() {
        let mut cfg = ControllerConfig::default();
        cfg.alpha1 = 1.0;
        cfg.alpha2 = 1.0;
        let c = Controller::new(&cfg, 0.25, -0.4);
        for (tl, tr) in [(0.3, -0.2), (1.0, 0.5), (-2.0, 3.0)] {
            let (e1, e2) = c.errors(tl, tr);
            assert!((e1 + e2 - (tl - 0.25)).abs() < 1e-14);
        }
    }

    #[test]
    fn washout_dc_rejection() {
        let mut f = Filter::new(alloc::vec![Section::washout(0.1)]);
        let dt = 0.01;
        let first = f.step(1.0, dt);
        assert!((first - 1.0).abs() < 0.01);
        let tau = 1.0 / (2.0 * PI * 0.1);
        let n = (10.0 * tau / dt) as usize;
        let mut y = 0.0;
        for _ in 0..n {
            y = f.step(1.0, dt);
        }
        assert!(y.abs() < 1e-4);
        for _ in 0..n {
            y = f.step(1.0, dt);
        }
        assert!(y.abs() < 1e-6);
    }

    #[test]
    fn washout_unity_high_frequency_gain() {
        let mut f = Filter::new(alloc::vec![Section::washout(0.1)]);
        // zero-order input jump at t = 0+: the output jumps with unity gain
        assert_eq!(f.step(1.0, 0.0), 1.0);
        let s = Complex64::new(0.0, 1e6);
        assert!((Section::washout(0.1).response(s).norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn lead_lag_phase_at_center() {
        let l = Section::lead_lag(0.02, 15.0);
        let h = l.response(Complex64::new(0.0, 2.0 * PI * 0.02));
        assert!((h.arg().to_degrees() - 15.0).abs() < 1e-9);
        // measured from a simulated sinusoid
        let mut f = Filter::new(alloc::vec![l]);
        let dt = 0.01;
        let w = 2.0 * PI * 0.02;
        let n = (400.0 / dt) as usize;
        let (mut sc, mut ss) = (0.0, 0.0);
        let mut t = 0.0;
        let window = (100.0 / dt) as usize; // two periods
        for k in 0..n {
            t += dt;
            let y = f.step((w * t).sin(), dt);
            if k >= n - window {
                sc += y * (w * t).cos();
                ss += y * (w * t).sin();
            }
        }
        let phase = sc.atan2(ss).to_degrees();
        assert!((phase - 15.0).abs() < 0.5, "{phase}");
    }

    #[test]
    fn controller_zero_and_saturation() {
        let cfg = ControllerConfig::default();
        let mut c = Controller::new(&cfg, 0.1, 0.2);
        for _ in 0..100 {
            assert_eq!(c.step(0.1, 0.2, 0.01), 0.0);
        }
        let mut c = Controller::new(&cfg, 0.0, 0.0);
        assert_eq!(c.step(5.0, 0.0, 0.01), 1.0);
        assert_eq!(c.step(-5.0, 0.0, 0.01), -1.0);
    }

    #[test]
    fn positive_local_error_charges_then_decays() {
        let mut cfg = ControllerConfig::default();
        cfg.alpha2 = 0.0;
        let mut c = Controller::new(&cfg, 0.0, 0.0);
        let dt = 0.01;
        let mut out = Vec::new();
        for _ in 0..3000 {
            out.push(c.step(0.01, 0.0, dt));
        }
        assert!(out[0] > 0.09);
        assert!(out[100] > 0.0 && out[100] < out[0]);
        // oracle: exp(-wc t) for a first-order washout step
        let wc = 2.0 * PI * 0.1;
        assert!((out[100] - 0.1 * (-wc * 1.01).exp()).abs() < 1e-3);
        assert!(out[2999].abs() < 1e-6);
    }

    #[test]
    fn continuous_matches_transfer_function() {
        let cfg = ControllerConfig::default();
        let c = Controller::new(&cfg, 0.0, 0.0);
        // steady state of the continuous realization equals H(0) = 0
        let n = c.n_states();
        let mut dx = alloc::vec![0.0; n];
        let y = c.continuous(&alloc::vec![0.0; n], 0.0, 0.0, &mut dx);
        assert_eq!(y, 0.0);
    }

    proptest! {
        #[test]
        fn linear_inside_limits(a in -3.0f64..3.0, seq in proptest::collection::vec(-1e-3f64..1e-3, 5..60)) {
            let mut cfg = ControllerConfig::default();
            cfg.limit_min = -1e9;
            cfg.limit_max = 1e9;
            let mut c1 = Controller::new(&cfg, 0.0, 0.0);
            let mut c2 = Controller::new(&cfg, 0.0, 0.0);
            for (k, x) in seq.iter().enumerate() {
                let r = 0.5 * x * k as f64;
                let y1 = c1.step(*x, r, 0.01);
                let y2 = c2.step(a * x, a * r, 0.01);
                prop_assert!((y2 - a * y1).abs() <= 1e-12 * (1.0 + y2.abs()));
            }
        }

        #[test]
        fn alpha2_zero_ignores_common_shift(shift in -10.0f64..10.0, seq in proptest::collection::vec(-0.5f64..0.5, 5..40)) {
            let mut cfg = ControllerConfig::default();
            cfg.alpha2 = 0.0;
            let mut c1 = Controller::new(&cfg, 0.1, 0.3);
            let mut c2 = Controller::new(&cfg, 0.1, 0.3);
            for x in &seq {
                let y1 = c1.step(0.1 + x, 0.3 + 0.5 * x, 0.01);
                let y2 = c2.step(0.1 + x + shift, 0.3 + 0.5 * x + shift, 0.01);
                prop_assert!((y1 - y2).abs() < 1e-9);
            }
        }
    }
}
