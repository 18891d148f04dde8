mod common;

use std::f64::consts::PI;

use common::{case, NINEBUS};
use num_complex::Complex64;
use synctrack_core::engine::Scenario;
use synctrack_core::linear::{
    eig_sweep, freq_response, linearize, modal_analysis, ClosedLoopModel, DynamicSystem, LinearError,
};
use synctrack_core::wacs::{Controller, ControllerConfig, LeadLagConfig};

/// Controller alone: inputs `[theta_local, theta_ref]`, output the command.
struct Chain(Controller);

impl DynamicSystem for Chain {
    fn n_states(&self) -> usize {
        self.0.n_states()
    }
    fn n_inputs(&self) -> usize {
        2
    }
    fn n_outputs(&self) -> usize {
        1
    }
    fn derivatives(&self, x: &[f64], u: &[f64], dx: &mut [f64]) -> Result<(), LinearError> {
        self.0.continuous(x, u[0], u[1], dx);
        Ok(())
    }
    fn outputs(&self, x: &[f64], u: &[f64], y: &mut [f64]) -> Result<(), LinearError> {
        let mut dx = vec![0.0; x.len()];
        y[0] = self.0.continuous(x, u[0], u[1], &mut dx);
        Ok(())
    }
}

fn washout(s: Complex64, fc: f64) -> Complex64 {
    s / (s + 2.0 * PI * fc)
}

fn lead_lag(s: Complex64, center_hz: f64, lead_deg: f64) -> Complex64 {
    let sin = lead_deg.to_radians().sin();
    let ratio = (1.0 + sin) / (1.0 - sin);
    let t = 1.0 / (2.0 * PI * center_hz * ratio.sqrt());
    (s * ratio * t + 1.0) / (s * t + 1.0)
}

#[test]
fn controller_chain_matches_cascade() {
    let cfg = ControllerConfig {
        leadlag1: vec![LeadLagConfig {
            center_hz: 1.5,
            lead_deg: 30.0,
            stages: 2,
        }],
        alpha2: 0.3,
        gain: 0.5,
        ..ControllerConfig::default()
    };
    let sys = Chain(Controller::new(&cfg, 0.0, 0.0));
    let n = sys.n_states();
    let model = linearize(&sys, &vec![0.0; n], &[0.0, 0.0]).unwrap();
    let freqs = [0.003, 0.01, 0.02, 0.1, 0.5, 1.5, 4.0];
    let omegas: Vec<f64> = freqs.iter().map(|f| 2.0 * PI * f).collect();
    let local = freq_response(&model, 0, 0, &omegas).unwrap();
    let reference = freq_response(&model, 1, 0, &omegas).unwrap();
    for (k, w) in omegas.iter().enumerate() {
        let s = Complex64::new(0.0, *w);
        let p1 = washout(s, 0.1) * lead_lag(s, 1.5, 30.0).powi(2);
        let p2 = washout(s, 0.01).powi(2) * lead_lag(s, 0.02, 15.0);
        let h_local = p1 * cfg.alpha1 * cfg.gain;
        let h_ref = (p2 * cfg.alpha2 - p1 * cfg.alpha1) * cfg.gain;
        let (a, b) = (local[k].unwrap(), reference[k].unwrap());
        assert!((a - h_local).norm() < 1e-6 * (1.0 + h_local.norm()), "{} Hz: {a} vs {h_local}", freqs[k]);
        assert!((b - h_ref).norm() < 1e-6 * (1.0 + h_ref.norm()), "{} Hz: {b} vs {h_ref}", freqs[k]);
    }
}

#[test]
fn zero_gain_loci_do_not_move() {
    let base = Scenario::new(case(NINEBUS));
    let grid = [0.0, 0.25, 0.5, 0.75, 1.0];
    let sweep = eig_sweep(
        |a1| {
            let mut s = base.clone();
            s.controller = Some(ControllerConfig {
                gain: 0.0,
                alpha1: a1,
                ..ControllerConfig::default()
            });
            ClosedLoopModel::new(&s, None)
                .map_err(|e| LinearError::Setup(e.to_string()))?
                .linearize()
        },
        &grid,
    );
    assert!(sweep.catalogs.iter().all(|c| c.is_ok()));
    for locus in &sweep.loci {
        let z0 = locus[0].unwrap();
        for z in locus {
            let z = z.unwrap();
            assert!((z - z0).norm() < 1e-6 * (1.0 + z0.norm()), "{z0} -> {z}");
        }
    }
}

#[test]
fn open_loop_modes_are_stable_and_include_a_rigid_body_mode() {
    let s = Scenario::new(case(NINEBUS));
    let model = ClosedLoopModel::new(&s, None).unwrap().linearize().unwrap();
    let cat = modal_analysis(&model).unwrap();
    assert!(cat.modes.iter().all(|m| m.eigenvalue.re < 1e-6), "{:?}", cat.modes);
    // two electromechanical pairs for three machines
    let em = cat.electromechanical();
    assert_eq!(em.iter().filter(|m| m.eigenvalue.im > 0.0).count(), 2);
    assert!(em.iter().all(|m| (0.5..3.0).contains(&m.freq_hz)));
}
