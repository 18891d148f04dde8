//! Numerical linearization, modal analysis, parameter sweeps and
//! frequency response.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::dense::{CMatrix, CVector, ComplexLu};
use crate::engine::{initialize, plant_len, Plant, Scenario, SimError};
use crate::ibr::IbrState;
use crate::netmodel::Topology;
use crate::util::wrap_angle;
use crate::wacs::Controller;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LinearError {
    #[error("non-finite derivative at state {0}")]
    NonFinite(usize),
    #[error("network solution failed")]
    Network,
    #[error("eigenvalue computation failed")]
    Eigen,
    #[error("index out of range")]
    Index,
    #[error("{0}")]
    Setup(String),
}

/// A system `x' = f(x, u)`, `y = g(x, u)`.
pub trait DynamicSystem {
    fn n_states(&self) -> usize;
    fn n_inputs(&self) -> usize;
    fn n_outputs(&self) -> usize;
    fn derivatives(&self, x: &[f64], u: &[f64], dx: &mut [f64]) -> Result<(), LinearError>;
    fn outputs(&self, x: &[f64], u: &[f64], y: &mut [f64]) -> Result<(), LinearError>;
    fn state_labels(&self) -> Vec<String> {
        (0..self.n_states()).map(|i| format!("x{i}")).collect()
    }
    fn input_labels(&self) -> Vec<String> {
        (0..self.n_inputs()).map(|i| format!("u{i}")).collect()
    }
    fn output_labels(&self) -> Vec<String> {
        (0..self.n_outputs()).map(|i| format!("y{i}")).collect()
    }
}

/// State-space model about an operating point.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub state_labels: Vec<String>,
    pub input_labels: Vec<String>,
    pub output_labels: Vec<String>,
    pub x0: Vec<f64>,
    pub u0: Vec<f64>,
    /// `max |f(x0, u0)|`; near zero at an equilibrium.
    pub residual: f64,
}

impl LinearModel {
    pub fn state_index(&self, label: &str) -> Option<usize> {
        self.state_labels.iter().position(|l| l == label)
    }
    pub fn input_index(&self, label: &str) -> Option<usize> {
        self.input_labels.iter().position(|l| l == label)
    }
    pub fn output_index(&self, label: &str) -> Option<usize> {
        self.output_labels.iter().position(|l| l == label)
    }
}

/// Row-major copy of a matrix.
pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn fd_step(v: f64) -> f64 {
    1e-6f64.max(1e-6 * v.abs())
}

/// Central-difference Jacobians about `(x, u)`; the point need not be an
/// equilibrium.
pub fn linearize<S: DynamicSystem + ?Sized>(sys: &S, x: &[f64], u: &[f64]) -> Result<LinearModel, LinearError> {
    let (n, m, p) = (sys.n_states(), sys.n_inputs(), sys.n_outputs());
    if x.len() != n || u.len() != m {
        return Err(LinearError::Index);
    }
    let mut f0 = vec![0.0; n];
    sys.derivatives(x, u, &mut f0)?;
    let residual = f0.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, m);
    let mut c = DMatrix::zeros(p, n);
    let mut d = DMatrix::zeros(p, m);
    let (mut fp, mut fm) = (vec![0.0; n], vec![0.0; n]);
    let (mut yp, mut ym) = (vec![0.0; p], vec![0.0; p]);
    let mut xs = x.to_vec();
    for j in 0..n {
        let h = fd_step(x[j]);
        xs[j] = x[j] + h;
        sys.derivatives(&xs, u, &mut fp)?;
        sys.outputs(&xs, u, &mut yp)?;
        xs[j] = x[j] - h;
        sys.derivatives(&xs, u, &mut fm)?;
        sys.outputs(&xs, u, &mut ym)?;
        xs[j] = x[j];
        for i in 0..n {
            a[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
        for i in 0..p {
            c[(i, j)] = (yp[i] - ym[i]) / (2.0 * h);
        }
    }
    let mut us = u.to_vec();
    for j in 0..m {
        let h = fd_step(u[j]);
        us[j] = u[j] + h;
        sys.derivatives(x, &us, &mut fp)?;
        sys.outputs(x, &us, &mut yp)?;
        us[j] = u[j] - h;
        sys.derivatives(x, &us, &mut fm)?;
        sys.outputs(x, &us, &mut ym)?;
        us[j] = u[j];
        for i in 0..n {
            b[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
        for i in 0..p {
            d[(i, j)] = (yp[i] - ym[i]) / (2.0 * h);
        }
    }
    for (j, v) in a.iter().chain(b.iter()).chain(c.iter()).chain(d.iter()).enumerate() {
        if !v.is_finite() {
            return Err(LinearError::NonFinite(j));
        }
    }
    Ok(LinearModel {
        a,
        b,
        c,
        d,
        state_labels: sys.state_labels(),
        input_labels: sys.input_labels(),
        output_labels: sys.output_labels(),
        x0: x.to_vec(),
        u0: u.to_vec(),
        residual,
    })
}

/// Time-varying damping and synchronizing coefficients of one machine,
/// `D = -2H dw'/dw` and `T = -2H dw'/d(delta)`, by central differences.
pub fn ltv_coefficients<S: DynamicSystem + ?Sized>(
    sys: &S,
    x: &[f64],
    u: &[f64],
    delta_index: usize,
    omega_index: usize,
    h: f64,
) -> Result<(f64, f64), LinearError> {
    let n = sys.n_states();
    if delta_index >= n || omega_index >= n || x.len() != n {
        return Err(LinearError::Index);
    }
    let partial = |j: usize| -> Result<f64, LinearError> {
        let step = fd_step(x[j]);
        let mut xs = x.to_vec();
        let (mut fp, mut fm) = (vec![0.0; n], vec![0.0; n]);
        xs[j] = x[j] + step;
        sys.derivatives(&xs, u, &mut fp)?;
        xs[j] = x[j] - step;
        sys.derivatives(&xs, u, &mut fm)?;
        let v = (fp[omega_index] - fm[omega_index]) / (2.0 * step);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(LinearError::NonFinite(j))
        }
    };
    Ok((-2.0 * h * partial(omega_index)?, -2.0 * h * partial(delta_index)?))
}

/// Synchronizing coefficient of the classical machine against an infinite
/// bus, `(E V / X) cos(delta) / omega`.
pub fn smib_synchronizing_coefficient(e: f64, v: f64, x: f64, delta: f64, omega: f64) -> f64 {
    e * v / x * delta.cos() / omega
}

/// Classical machine against an infinite bus. States `[delta, omega]`,
/// input `[p_mech]`, outputs `[omega, p_elec]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Smib {
    pub h: f64,
    pub d: f64,
    pub e: f64,
    pub v: f64,
    pub x: f64,
    pub omega_b: f64,
}

impl Smib {
    /// Equilibrium angle for a mechanical power.
    pub fn equilibrium(&self, p_mech: f64) -> [f64; 2] {
        [(p_mech * self.x / (self.e * self.v)).asin(), 1.0]
    }
}

impl DynamicSystem for Smib {
    fn n_states(&self) -> usize {
        2
    }
    fn n_inputs(&self) -> usize {
        1
    }
    fn n_outputs(&self) -> usize {
        2
    }
    fn derivatives(&self, x: &[f64], u: &[f64], dx: &mut [f64]) -> Result<(), LinearError> {
        let pe = crate::machine::smib_electrical_power(self.e, self.v, self.x, x[0]);
        let st = crate::machine::MachineState {
            delta: x[0],
            omega: x[1],
            p_mech: u[0],
            p_elec: pe,
        };
        let params = crate::machine::MachineParams {
            h: self.h,
            d: self.d,
            xd_prime: self.x,
            governor: None,
        };
        let (a, b) = crate::machine::swing_derivatives(&st, &params, 1.0, self.omega_b);
        dx[0] = a;
        dx[1] = b;
        Ok(())
    }
    fn outputs(&self, x: &[f64], _u: &[f64], y: &mut [f64]) -> Result<(), LinearError> {
        y[0] = x[1];
        y[1] = crate::machine::smib_electrical_power(self.e, self.v, self.x, x[0]);
        Ok(())
    }
    fn state_labels(&self) -> Vec<String> {
        vec!["delta_G".into(), "omega_G".into()]
    }
    fn input_labels(&self) -> Vec<String> {
        vec!["pm_G".into()]
    }
    fn output_labels(&self) -> Vec<String> {
        vec!["omega_G".into(), "pe_G".into()]
    }
}

// ---------------------------------------------------------------------------
// Closed-loop multi-machine model
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
struct CtrlSlot {
    ibr: usize,
    local_sensor: usize,
    controller: Controller,
    offset: usize,
}

/// Continuous-time model of a scenario's case with its controllers. The
/// measurement chain is represented by the sensor lags only; channel
/// delays and noise are not part of the small-signal model.
///
/// States: `delta_*`, `omega_*` per machine, `pm_*` per governed machine,
/// `ilag_*` per converter, `sensor_*` per sensor (closed loop), and the
/// controller filter states. Inputs: `pm_*` (mechanical or governor
/// setpoint) per machine, `pref_*` and `ps_*` (external charging command)
/// per converter. Outputs: `ps_*` per controller (system pu) and `omega_*`
/// per machine.
#[derive(Clone, Debug)]
pub struct ClosedLoopModel {
    plant: Plant,
    v_eq: Vec<Complex64>,
    ctrls: Vec<CtrlSlot>,
    sensor_bus: Vec<usize>,
    sensor_t: Vec<f64>,
    weights: Vec<f64>,
    governed: Vec<Option<usize>>,
    open_loop: Option<usize>,
    n_states: usize,
    n_plant_states: usize,
    sensor_offset: usize,
    x0: Vec<f64>,
    u0: Vec<f64>,
}

impl ClosedLoopModel {
    /// Builds the model at the scenario's initial equilibrium. With
    /// `open_loop_actuator = Some(c)`, controller `c`'s output is computed
    /// but not applied, exposing `pref -> ps` as the loop transfer.
    pub fn new(scenario: &Scenario, open_loop_actuator: Option<usize>) -> Result<Self, SimError> {
        let case = &scenario.case;
        let mut integ = scenario.integration;
        integ.network_tol = 1e-13;
        integ.network_max_iter = 2000;
        let eq = initialize(case, &Topology::from_case(case), &integ)?;
        let nm = case.machines.len();
        let nu = case.ibrs.len();

        let mut governed = vec![None; nm];
        let mut n = 2 * nm;
        for (m, mach) in case.machines.iter().enumerate() {
            if mach.params.governor.is_some() {
                governed[m] = Some(n);
                n += 1;
            }
        }
        let ilag_offset = n;
        n += nu;
        let n_plant_states = n;

        let closed = scenario.closed_loop();
        let sensor_offset = n;
        let (sensor_bus, sensor_t, weights) = if closed {
            (
                case.sensors.iter().map(|s| s.bus).collect::<Vec<_>>(),
                case.sensors.iter().map(|s| s.time_constant).collect::<Vec<_>>(),
                case.sensors.iter().map(|s| s.weight).collect::<Vec<_>>(),
            )
        } else {
            (Vec::new(), Vec::new(), Vec::new())
        };
        n += sensor_bus.len();

        let angles: Vec<f64> = eq.snap.v.iter().map(|v| v.arg()).collect();
        let mut ctrls = Vec::new();
        if closed {
            let cfg = scenario.controller.as_ref().expect("closed loop has a config");
            if sensor_bus.is_empty() {
                return Err(SimError::NoSensors);
            }
            let theta_ref0: f64 = sensor_bus.iter().zip(&weights).map(|(b, w)| angles[*b] * w).sum();
            let ids: Vec<usize> = match &cfg.actuators {
                Some(list) => list
                    .iter()
                    .map(|id| {
                        case.ibr_index(id)
                            .ok_or_else(|| SimError::Event(crate::netmodel::EventError::UnknownIbr(id.clone())))
                    })
                    .collect::<Result<_, _>>()?,
                None => (0..nu).collect(),
            };
            for u in ids {
                let bus = case.ibrs[u].bus;
                let local_sensor = sensor_bus
                    .iter()
                    .position(|b| *b == bus)
                    .ok_or_else(|| SimError::NoLocalSensor(case.ibrs[u].id.clone()))?;
                let controller = Controller::new(cfg, angles[bus], theta_ref0);
                let k = controller.n_states();
                ctrls.push(CtrlSlot {
                    ibr: u,
                    local_sensor,
                    controller,
                    offset: n,
                });
                n += k;
            }
        }
        if let Some(c) = open_loop_actuator {
            if c >= ctrls.len() {
                return Err(SimError::Config(format!("no controller {c}")));
            }
        }

        let mut x0 = vec![0.0; n];
        for m in 0..nm {
            x0[2 * m] = eq.x[3 * m];
            x0[2 * m + 1] = eq.x[3 * m + 1];
            if let Some(k) = governed[m] {
                x0[k] = eq.x[3 * m + 2];
            }
        }
        for u in 0..nu {
            x0[ilag_offset + u] = eq.x[3 * nm + u];
        }
        for (k, b) in sensor_bus.iter().enumerate() {
            x0[sensor_offset + k] = angles[*b];
        }
        let mut u0 = vec![0.0; nm + 2 * nu];
        u0[..nm].copy_from_slice(&eq.p_set);
        for m in 0..nm {
            if governed[m].is_none() {
                u0[m] = eq.x[3 * m + 2];
            }
        }
        u0[nm..nm + nu].copy_from_slice(&eq.p_ref);

        Ok(Self {
            v_eq: eq.snap.v.clone(),
            plant: eq.plant,
            ctrls,
            sensor_bus,
            sensor_t,
            weights,
            governed,
            open_loop: open_loop_actuator,
            n_states: n,
            n_plant_states,
            sensor_offset,
            x0,
            u0,
        })
    }

    pub fn operating_point(&self) -> (&[f64], &[f64]) {
        (&self.x0, &self.u0)
    }

    /// Linearizes about the initial equilibrium.
    pub fn linearize(&self) -> Result<LinearModel, LinearError> {
        linearize(self, &self.x0, &self.u0)
    }

    pub fn plant_state_count(&self) -> usize {
        self.n_plant_states
    }

    fn evaluate(&self, x: &[f64], u: &[f64], dx: &mut [f64], ps_out: &mut [f64]) -> Result<(), LinearError> {
        let case = &self.plant.case;
        let nm = case.machines.len();
        let nu = case.ibrs.len();
        let mut xp = vec![0.0; plant_len(case)];
        let mut p_set = vec![0.0; nm];
        for m in 0..nm {
            xp[3 * m] = x[2 * m];
            xp[3 * m + 1] = x[2 * m + 1];
            match self.governed[m] {
                Some(k) => {
                    xp[3 * m + 2] = x[k];
                    p_set[m] = u[m];
                }
                None => xp[3 * m + 2] = u[m],
            }
        }
        let ilag_offset = self.n_plant_states - nu;
        xp[3 * nm..].copy_from_slice(&x[ilag_offset..ilag_offset + nu]);
        let snap = self.plant.network(&xp, &self.v_eq).map_err(|_| LinearError::Network)?;

        let theta_ref: f64 = (0..self.sensor_bus.len())
            .map(|k| self.weights[k] * x[self.sensor_offset + k])
            .sum();
        for (k, b) in self.sensor_bus.iter().enumerate() {
            let s = x[self.sensor_offset + k];
            dx[self.sensor_offset + k] = wrap_angle(snap.v[*b].arg() - s) / self.sensor_t[k];
        }
        let p_ref = &u[nm..nm + nu];
        let mut p_s: Vec<f64> = u[nm + nu..nm + 2 * nu].to_vec();
        for (c, slot) in self.ctrls.iter().enumerate() {
            let k = slot.controller.n_states();
            let states = &x[slot.offset..slot.offset + k];
            let local = x[self.sensor_offset + slot.local_sensor];
            let out = slot
                .controller
                .continuous(states, local, theta_ref, &mut dx[slot.offset..slot.offset + k]);
            let ps = out * case.ibrs[slot.ibr].params.rating;
            ps_out[c] = ps;
            if self.open_loop != Some(c) {
                p_s[slot.ibr] += ps;
            }
        }
        let ibr_states = vec![IbrState::default(); nu];
        let mut dxp = vec![0.0; xp.len()];
        self.plant
            .derivatives(&xp, &snap, &p_set, p_ref, &p_s, &ibr_states, &mut dxp);
        for m in 0..nm {
            dx[2 * m] = dxp[3 * m];
            dx[2 * m + 1] = dxp[3 * m + 1];
            if let Some(k) = self.governed[m] {
                dx[k] = dxp[3 * m + 2];
            }
        }
        dx[ilag_offset..ilag_offset + nu].copy_from_slice(&dxp[3 * nm..]);
        Ok(())
    }
}

impl DynamicSystem for ClosedLoopModel {
    fn n_states(&self) -> usize {
        self.n_states
    }
    fn n_inputs(&self) -> usize {
        self.plant.case.machines.len() + 2 * self.plant.case.ibrs.len()
    }
    fn n_outputs(&self) -> usize {
        self.ctrls.len() + self.plant.case.machines.len()
    }
    fn derivatives(&self, x: &[f64], u: &[f64], dx: &mut [f64]) -> Result<(), LinearError> {
        let mut ps = vec![0.0; self.ctrls.len()];
        self.evaluate(x, u, dx, &mut ps)
    }
    fn outputs(&self, x: &[f64], u: &[f64], y: &mut [f64]) -> Result<(), LinearError> {
        let mut dx = vec![0.0; self.n_states];
        let nc = self.ctrls.len();
        let mut ps = vec![0.0; nc];
        self.evaluate(x, u, &mut dx, &mut ps)?;
        y[..nc].copy_from_slice(&ps);
        for m in 0..self.plant.case.machines.len() {
            y[nc + m] = x[2 * m + 1];
        }
        Ok(())
    }
    fn state_labels(&self) -> Vec<String> {
        let case = &self.plant.case;
        let mut l = vec![String::new(); self.n_states];
        for (m, mach) in case.machines.iter().enumerate() {
            l[2 * m] = format!("delta_{}", mach.id);
            l[2 * m + 1] = format!("omega_{}", mach.id);
            if let Some(k) = self.governed[m] {
                l[k] = format!("pm_{}", mach.id);
            }
        }
        let off = self.n_plant_states - case.ibrs.len();
        for (u, unit) in case.ibrs.iter().enumerate() {
            l[off + u] = format!("ilag_{}", unit.id);
        }
        for (k, s) in case.sensors.iter().enumerate().take(self.sensor_bus.len()) {
            l[self.sensor_offset + k] = format!("sensor_{}", s.id);
        }
        for slot in &self.ctrls {
            for k in 0..slot.controller.n_states() {
                l[slot.offset + k] = format!("ctrl_{}_{}", case.ibrs[slot.ibr].id, k);
            }
        }
        l
    }
    fn input_labels(&self) -> Vec<String> {
        let case = &self.plant.case;
        case.machines
            .iter()
            .map(|m| format!("pm_{}", m.id))
            .chain(case.ibrs.iter().map(|u| format!("pref_{}", u.id)))
            .chain(case.ibrs.iter().map(|u| format!("ps_{}", u.id)))
            .collect()
    }
    fn output_labels(&self) -> Vec<String> {
        let case = &self.plant.case;
        self.ctrls
            .iter()
            .map(|s| format!("ps_{}", case.ibrs[s.ibr].id))
            .chain(case.machines.iter().map(|m| format!("omega_{}", m.id)))
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Modes
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeClass {
    FrequencyRegulation,
    InterArea,
    Local,
    /// Non-oscillatory, or dominated by control and measurement states.
    Other,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mode {
    /// Eigenvalue in rad/s.
    pub eigenvalue: Complex64,
    pub freq_hz: f64,
    pub damping: f64,
    pub class: ModeClass,
    /// Normalized participation factor per state.
    pub participation: Vec<f64>,
    /// Label of the most participating state.
    pub dominant: String,
    /// Right eigenvector (unit norm).
    pub vector: Vec<Complex64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModeCatalog {
    pub modes: Vec<Mode>,
}

/// Oscillatory modes below this imaginary part (rad/s) are treated as real.
const OSC_EPS: f64 = 1e-7;

fn inverse_iteration(a: &CMatrix, lambda: Complex64) -> Option<CVector> {
    let n = a.nrows();
    let mut shift = 1e-9 * (1.0 + lambda.norm());
    for _ in 0..6 {
        let mu = lambda + Complex64::new(shift, shift);
        let mut m = a.clone();
        for i in 0..n {
            m[(i, i)] -= mu;
        }
        if let Some(lu) = ComplexLu::new(m) {
            let mut v = CVector::from_fn(n, |i, _| Complex64::new(1.0 + 0.1 * i as f64, 0.3));
            let mut ok = true;
            for _ in 0..4 {
                match lu.solve(&v) {
                    Some(w) => {
                        let norm = w.norm();
                        if !(norm > 0.0) || !norm.is_finite() {
                            ok = false;
                            break;
                        }
                        v = w / Complex64::new(norm, 0.0);
                    }
                    None => {
                        ok = false;
                        break;
                    }
                }
            }
            if ok {
                return Some(v);
            }
        }
        shift *= 100.0;
    }
    None
}

/// Eigenvalues of a real matrix. The QR iteration is capped and retried on
/// the balanced matrix with looser deflation tolerances before giving up.
fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex64>, LinearError> {
    let cap = 200 * a.nrows().max(10);
    let mut balanced = a.clone();
    nalgebra::linalg::balancing::balance_parlett_reinsch(&mut balanced);
    for eps in [f64::EPSILON, 1e-14, 1e-12] {
        for m in [a, &balanced] {
            if let Some(schur) = nalgebra::linalg::Schur::try_new(m.clone(), eps, cap) {
                return Ok(schur.complex_eigenvalues().iter().copied().collect());
            }
        }
    }
    Err(LinearError::Eigen)
}

/// Eigenvalues, right/left eigenvectors and participation factors.
pub fn modal_analysis(model: &LinearModel) -> Result<ModeCatalog, LinearError> {
    let n = model.a.nrows();
    if n == 0 {
        return Ok(ModeCatalog { modes: Vec::new() });
    }
    let eig = eigenvalues(&model.a)?;
    if eig.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(LinearError::Eigen);
    }
    let ac: CMatrix = model.a.map(|v| Complex64::new(v, 0.0));
    let at = ac.transpose();
    let speed: Vec<usize> = (0..n).filter(|i| model.state_labels[*i].starts_with("omega_")).collect();
    let mech: Vec<usize> = (0..n)
        .filter(|i| {
            let l = &model.state_labels[*i];
            l.starts_with("omega_") || l.starts_with("delta_")
        })
        .collect();

    let mut modes = Vec::with_capacity(n);
    for lambda in eig.iter().copied() {
        let v = inverse_iteration(&ac, lambda).ok_or(LinearError::Eigen)?;
        let w = inverse_iteration(&at, lambda).ok_or(LinearError::Eigen)?;
        let raw: Vec<f64> = (0..n).map(|k| (v[k] * w[k]).norm()).collect();
        let total: f64 = raw.iter().sum();
        let participation: Vec<f64> = raw.iter().map(|p| if total > 0.0 { p / total } else { 0.0 }).collect();
        let dom = (0..n)
            .max_by(|a, b| participation[*a].total_cmp(&participation[*b]))
            .unwrap_or(0);
        let wn = lambda.norm();
        let damping = if wn > 0.0 { -lambda.re / wn } else { 1.0 };
        modes.push(Mode {
            eigenvalue: lambda,
            freq_hz: lambda.im.abs() / (2.0 * PI),
            damping,
            class: ModeClass::Other,
            participation,
            dominant: model.state_labels[dom].clone(),
            vector: v.iter().copied().collect(),
        });
    }

    // frequency regulation: lowest-frequency oscillatory mode in which all
    // machine speeds swing with the same sign
    let uniform = |m: &Mode| {
        if speed.is_empty() {
            return false;
        }
        let r = speed
            .iter()
            .copied()
            .max_by(|a, b| m.vector[*a].norm().total_cmp(&m.vector[*b].norm()))
            .unwrap();
        let vr = m.vector[r];
        if vr.norm() == 0.0 {
            return false;
        }
        speed.iter().all(|k| (m.vector[*k] / vr).re > 0.0)
    };
    let mut fr: Option<usize> = None;
    for (i, m) in modes.iter().enumerate() {
        if m.eigenvalue.im > OSC_EPS && uniform(m) && fr.is_none_or(|j| m.freq_hz < modes[j].freq_hz) {
            fr = Some(i);
        }
    }
    for (i, m) in modes.iter_mut().enumerate() {
        if m.eigenvalue.im.abs() <= OSC_EPS {
            continue;
        }
        let same_pair = fr.is_some_and(|j| {
            let f = eig[j];
            (m.eigenvalue - f.conj()).norm() <= 1e-9 * (1.0 + f.norm()) || i == j
        });
        if same_pair {
            m.class = ModeClass::FrequencyRegulation;
            continue;
        }
        let share: f64 = mech.iter().map(|k| m.participation[*k]).sum();
        if share >= 0.3 && !speed.is_empty() {
            m.class = if m.freq_hz < 1.0 { ModeClass::InterArea } else { ModeClass::Local };
        }
    }
    Ok(ModeCatalog { modes })
}

impl ModeCatalog {
    pub fn frequency_regulation(&self) -> Option<&Mode> {
        self.modes
            .iter()
            .find(|m| m.class == ModeClass::FrequencyRegulation && m.eigenvalue.im > 0.0)
    }

    /// Electromechanical modes with positive imaginary part.
    pub fn electromechanical(&self) -> Vec<&Mode> {
        self.modes
            .iter()
            .filter(|m| matches!(m.class, ModeClass::InterArea | ModeClass::Local) && m.eigenvalue.im > 0.0)
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub grid: Vec<f64>,
    /// Catalog at each grid point, or the error that prevented it.
    pub catalogs: Vec<Result<ModeCatalog, LinearError>>,
    /// `loci[track][grid point]`.
    pub loci: Vec<Vec<Option<Complex64>>>,
    /// Class of each track at the first grid point where it exists.
    pub track_class: Vec<ModeClass>,
}

fn correlation(a: &[Complex64], b: &[Complex64]) -> f64 {
    if a.len() != b.len() {
        return 0.0;
    }
    let dot: Complex64 = a.iter().zip(b).map(|(x, y)| x.conj() * y).sum();
    dot.norm()
}

/// Eigenvalues over a parameter grid with nearest-neighbour tracking.
/// Failing grid points are recorded and skipped.
pub fn eig_sweep<F>(mut builder: F, grid: &[f64]) -> SweepResult
where
    F: FnMut(f64) -> Result<LinearModel, LinearError>,
{
    let catalogs: Vec<Result<ModeCatalog, LinearError>> =
        grid.iter().map(|p| builder(*p).and_then(|m| modal_analysis(&m))).collect();
    let mut loci: Vec<Vec<Option<Complex64>>> = Vec::new();
    let mut track_class = Vec::new();
    let mut last: Vec<Option<(Complex64, Vec<Complex64>)>> = Vec::new();
    for (g, cat) in catalogs.iter().enumerate() {
        let Ok(cat) = cat else {
            for l in loci.iter_mut() {
                l.push(None);
            }
            continue;
        };
        if loci.is_empty() {
            for m in &cat.modes {
                let mut l = vec![None; g];
                l.push(Some(m.eigenvalue));
                loci.push(l);
                track_class.push(m.class);
                last.push(Some((m.eigenvalue, m.vector.clone())));
            }
            continue;
        }
        // greedy matching on distance, ties resolved by eigenvector correlation
        let mut pairs = Vec::new();
        for (t, prev) in last.iter().enumerate() {
            if let Some((z, v)) = prev {
                for (k, m) in cat.modes.iter().enumerate() {
                    pairs.push(((m.eigenvalue - z).norm(), correlation(v, &m.vector), t, k));
                }
            }
        }
        // distances equal to 1e-9 count as ties
        pairs.sort_by(|a, b| {
            let (qa, qb) = ((a.0 * 1e9).round(), (b.0 * 1e9).round());
            qa.total_cmp(&qb).then(b.1.total_cmp(&a.1))
        });
        let mut used_t = vec![false; last.len()];
        let mut used_k = vec![false; cat.modes.len()];
        for l in loci.iter_mut() {
            l.push(None);
        }
        for (_, _, t, k) in pairs {
            if used_t[t] || used_k[k] {
                continue;
            }
            used_t[t] = true;
            used_k[k] = true;
            loci[t][g] = Some(cat.modes[k].eigenvalue);
            last[t] = Some((cat.modes[k].eigenvalue, cat.modes[k].vector.clone()));
        }
        for (k, m) in cat.modes.iter().enumerate() {
            if !used_k[k] {
                let mut l = vec![None; g];
                l.push(Some(m.eigenvalue));
                loci.push(l);
                track_class.push(m.class);
                last.push(Some((m.eigenvalue, m.vector.clone())));
            }
        }
    }
    SweepResult {
        grid: grid.to_vec(),
        catalogs,
        loci,
        track_class,
    }
}

// ---------------------------------------------------------------------------
// Frequency response
// ---------------------------------------------------------------------------

/// `C (jwI - A)^-1 B + D` for one input/output pair at each frequency
/// (rad/s). Points where the resolvent is singular are `None`.
pub fn freq_response(
    model: &LinearModel,
    input: usize,
    output: usize,
    omegas: &[f64],
) -> Result<Vec<Option<Complex64>>, LinearError> {
    let n = model.a.nrows();
    if input >= model.b.ncols() || output >= model.c.nrows() {
        return Err(LinearError::Index);
    }
    let b: CVector = DVector::from_fn(n, |i, _| Complex64::new(model.b[(i, input)], 0.0));
    let d = model.d[(output, input)];
    Ok(omegas
        .iter()
        .map(|w| {
            let mut m: CMatrix = model.a.map(|v| Complex64::new(-v, 0.0));
            for i in 0..n {
                m[(i, i)] += Complex64::new(0.0, *w);
            }
            let x = ComplexLu::new(m)?.solve(&b)?;
            let mut y = Complex64::new(d, 0.0);
            for i in 0..n {
                y += x[i] * model.c[(output, i)];
            }
            Some(y)
        })
        .collect())
}

pub fn magnitude_db(h: Complex64) -> f64 {
    20.0 * h.norm().log10()
}

pub fn phase_deg(h: Complex64) -> f64 {
    h.arg() * 180.0 / PI
}

/// Logarithmically spaced frequencies in Hz.
pub fn log_grid(f_min: f64, f_max: f64, points: usize) -> Vec<f64> {
    if points < 2 {
        return vec![f_min];
    }
    let (a, b) = (f_min.ln(), f_max.ln());
    (0..points)
        .map(|k| (a + (b - a) * k as f64 / (points - 1) as f64).exp())
        .collect()
}
