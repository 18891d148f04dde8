//! Time-domain simulation: fixed-step RK4 over machine, governor and
//! converter states with an algebraic network solve at every stage, a
//! discrete measurement/control chain stepped at step boundaries, and an
//! event schedule applied at exact times.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::coi::Unwrapper;
use crate::comms::{self, Channel, CommsConfig, CommsRng, SensorModel, SensorState};
use crate::dense::{CMatrix, CVector, ComplexLu};
use crate::ibr;
use crate::machine::{self, MachineError, MachineState};
use crate::netmodel::{
    apply_event, build_ybus, solve_powerflow_with, Case, Event, EventError, PowerFlowError, PowerFlowOptions,
    Topology,
};
use crate::util::{mix_seed, wrap_angle};
use crate::wacs::{ConfigError, Controller, ControllerConfig};

// ---------------------------------------------------------------------------
// Scenario
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadModel {
    /// Constant impedance for both components.
    #[default]
    ConstantImpedance,
    /// Constant-current active component, constant-impedance reactive.
    ConstantCurrent,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegrationConfig {
    /// Step size (s); a quarter cycle when absent.
    pub dt: Option<f64>,
    pub t_end: f64,
    /// Run stops when the largest rotor-angle separation exceeds this (rad).
    pub divergence_bound: f64,
    /// Separation marking loss of synchronism (degrees).
    pub instability_threshold_deg: f64,
    pub load_model: LoadModel,
    /// Relative tolerance of the network fixed-point iteration.
    pub network_tol: f64,
    pub network_max_iter: usize,
    /// Feed storage state of charge back into the power bounds.
    pub soc_derating: bool,
}

impl Default for IntegrationConfig {
    fn default() -> Self {
        Self {
            dt: None,
            t_end: 10.0,
            divergence_bound: 2.0 * PI,
            instability_threshold_deg: 180.0,
            load_model: LoadModel::ConstantImpedance,
            network_tol: 1e-8,
            network_max_iter: 200,
            soc_derating: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecordConfig {
    pub bus_voltages: bool,
}

impl Default for RecordConfig {
    fn default() -> Self {
        Self { bus_voltages: true }
    }
}

/// Event with its time given in seconds or in cycles of `f0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduledEvent {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cycles: Option<f64>,
    pub event: Event,
}

impl ScheduledEvent {
    pub fn at(time: f64, event: Event) -> Self {
        Self {
            time: Some(time),
            cycles: None,
            event,
        }
    }

    pub fn seconds(&self, f0: f64) -> Result<f64, SimError> {
        match (self.time, self.cycles) {
            (Some(t), None) => Ok(t),
            (None, Some(c)) => Ok(c / f0),
            _ => Err(SimError::Config("event needs exactly one of `time` or `cycles`".into())),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub case: Case,
    pub events: Vec<ScheduledEvent>,
    /// `None` or a disabled config runs open loop.
    pub controller: Option<ControllerConfig>,
    pub comms: CommsConfig,
    pub integration: IntegrationConfig,
    pub record: RecordConfig,
    pub seed: u64,
}

impl Scenario {
    pub fn new(case: Case) -> Self {
        Self {
            case,
            events: Vec::new(),
            controller: None,
            comms: CommsConfig::ideal(),
            integration: IntegrationConfig::default(),
            record: RecordConfig::default(),
            seed: 0,
        }
    }

    pub fn dt(&self) -> f64 {
        self.integration.dt.unwrap_or(0.25 / self.case.f0)
    }

    pub fn closed_loop(&self) -> bool {
        self.controller.as_ref().is_some_and(|c| c.enabled)
    }

    /// Event times in seconds, sorted stably.
    pub fn timed_events(&self) -> Result<Vec<(f64, Event)>, SimError> {
        let mut ev = Vec::with_capacity(self.events.len());
        for e in &self.events {
            ev.push((e.seconds(self.case.f0)?, e.event.clone()));
        }
        ev.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(ev)
    }

    /// Time of the first scheduled event, if any.
    pub fn disturbance_time(&self) -> Option<f64> {
        self.timed_events().ok()?.first().map(|e| e.0)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let dt = self.dt();
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(SimError::Config("dt must be positive".into()));
        }
        let t_end = self.integration.t_end;
        if !(t_end > 0.0 && t_end.is_finite()) {
            return Err(SimError::Config("t_end must be positive".into()));
        }
        if !(self.integration.network_tol > 0.0) || self.integration.network_max_iter == 0 {
            return Err(SimError::Config("invalid network tolerance".into()));
        }
        for (t, e) in self.timed_events()? {
            if !(0.0..=t_end).contains(&t) {
                return Err(SimError::Config(format!("event time {t} outside [0, {t_end}]")));
            }
            e.validate(&self.case)?;
        }
        if let Some(c) = &self.controller {
            c.validate()?;
        }
        self.comms.validate().map_err(|e| SimError::Config(format!("{e}")))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("power flow: {0}")]
    PowerFlow(#[from] PowerFlowError),
    #[error("machine initialization: {0}")]
    Machine(#[from] MachineError),
    #[error("event: {0}")]
    Event(#[from] EventError),
    #[error("{0}")]
    Controller(#[from] ConfigError),
    #[error("scenario: {0}")]
    Config(String),
    #[error("actuator '{0}' has no sensor at its bus")]
    NoLocalSensor(String),
    #[error("controllers need at least one sensor")]
    NoSensors,
    #[error("network solution failed at initialization")]
    NetworkInit,
}

// ---------------------------------------------------------------------------
// Network solve
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
pub enum NetworkError {
    #[error("singular network admittance matrix")]
    Singular,
    #[error("network iteration did not converge")]
    NotConverged,
}

/// Network of one topology with machine Norton admittances and static
/// load admittances folded into the factorized matrix.
#[derive(Clone, Debug)]
pub struct DynamicNetwork {
    lu: ComplexLu,
    /// Norton admittance `1/(jX')` of each online machine (zero otherwise).
    pub machine_y: Vec<Complex64>,
    /// Constant-current active load magnitude per bus.
    pub cc_load: Vec<f64>,
    pub ibr_online: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSolution {
    pub v: Vec<Complex64>,
    pub iterations: usize,
}

impl DynamicNetwork {
    /// `v_ref` are the initial bus voltage magnitudes that define the
    /// static load characteristics.
    pub fn new(case: &Case, topo: &Topology, v_ref: &[f64], load_model: LoadModel) -> Result<Self, NetworkError> {
        let mut y: CMatrix = build_ybus(case, topo);
        let mut cc_load = vec![0.0; case.buses.len()];
        for (i, bus) in case.buses.iter().enumerate() {
            let k = topo.load_scale[i];
            let v2 = v_ref[i] * v_ref[i];
            let p = bus.p_load * k;
            let q = bus.q_load * k;
            match load_model {
                LoadModel::ConstantImpedance => y[(i, i)] += Complex64::new(p, -q) / v2,
                LoadModel::ConstantCurrent => {
                    y[(i, i)] += Complex64::new(0.0, -q) / v2;
                    cc_load[i] = p / v_ref[i];
                }
            }
        }
        let machine_y: Vec<Complex64> = case
            .machines
            .iter()
            .enumerate()
            .map(|(m, mach)| {
                if topo.machine_online[m] {
                    Complex64::new(0.0, -1.0 / mach.params.xd_prime)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
            .collect();
        for (m, mach) in case.machines.iter().enumerate() {
            y[(mach.bus, mach.bus)] += machine_y[m];
        }
        let lu = ComplexLu::new(y).ok_or(NetworkError::Singular)?;
        Ok(Self {
            lu,
            machine_y,
            cc_load,
            ibr_online: topo.ibr_online.clone(),
        })
    }

    /// Solves `Y V = I` for given machine EMFs (complex) and converter lag
    /// currents, iterating on the voltage-dependent injections.
    pub fn solve(
        &self,
        case: &Case,
        emf: &[Complex64],
        ibr_lag: &[f64],
        guess: &[Complex64],
        tol: f64,
        max_iter: usize,
    ) -> Result<NetworkSolution, NetworkError> {
        let n = case.buses.len();
        let mut base = CVector::zeros(n);
        for (m, mach) in case.machines.iter().enumerate() {
            base[mach.bus] += emf[m] * self.machine_y[m];
        }
        let iterative = self.cc_load.iter().any(|c| *c != 0.0)
            || case.ibrs.iter().enumerate().any(|(u, _)| self.ibr_online[u]);
        let dir = |z: Complex64| {
            let r = z.norm();
            if r > 1e-12 {
                z / r
            } else {
                Complex64::new(1.0, 0.0)
            }
        };
        let rhs = |v: &[Complex64]| {
            let mut i = base.clone();
            for (b, c) in self.cc_load.iter().enumerate() {
                if *c != 0.0 {
                    i[b] -= dir(v[b]) * *c;
                }
            }
            for (u, unit) in case.ibrs.iter().enumerate() {
                if self.ibr_online[u] {
                    let vb = v[unit.bus];
                    let ip = ibr::output_current(ibr_lag[u], vb.norm(), &unit.params);
                    i[unit.bus] += dir(vb) * ip;
                }
            }
            i
        };
        if !iterative {
            let v = self.lu.solve(&base).ok_or(NetworkError::Singular)?;
            return Ok(NetworkSolution {
                v: v.iter().copied().collect(),
                iterations: 1,
            });
        }
        let mut v: Vec<Complex64> = guess.to_vec();
        for it in 1..=max_iter {
            let next = self.lu.solve(&rhs(&v)).ok_or(NetworkError::Singular)?;
            // damp late iterations in case the voltage-dependent limits oscillate
            let relax = if it > 50 { 0.5 } else { 1.0 };
            let mut change = 0.0f64;
            let mut scale = 1.0f64;
            for b in 0..n {
                let new = v[b] + (next[b] - v[b]) * relax;
                change = change.max((new - v[b]).norm());
                scale = scale.max(new.norm());
                v[b] = new;
            }
            if !change.is_finite() {
                return Err(NetworkError::Singular);
            }
            if change <= tol * scale {
                return Ok(NetworkSolution { v, iterations: it });
            }
        }
        Err(NetworkError::NotConverged)
    }
}

// ---------------------------------------------------------------------------
// Plant: machines, governors and converter lags
// ---------------------------------------------------------------------------

/// Per-machine and per-converter constants of an initialized system.
#[derive(Clone, Debug)]
pub struct Plant {
    pub case: Case,
    pub topo: Topology,
    pub net: DynamicNetwork,
    pub e_mag: Vec<f64>,
    /// Voltage magnitudes defining static loads.
    pub v_ref: Vec<f64>,
    pub load_model: LoadModel,
    pub tol: f64,
    pub max_iter: usize,
    pub soc_derating: bool,
}

/// Continuous plant state; layout `[delta, omega, p_mech]` per machine then
/// one lag current per converter.
pub fn plant_len(case: &Case) -> usize {
    3 * case.machines.len() + case.ibrs.len()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlantSnapshot {
    pub v: Vec<Complex64>,
    pub p_elec: Vec<f64>,
    /// Injected active current per converter (zero when offline).
    pub i_p: Vec<f64>,
}

impl Plant {
    pub fn set_topology(&mut self, topo: Topology) -> Result<(), NetworkError> {
        self.net = DynamicNetwork::new(&self.case, &topo, &self.v_ref, self.load_model)?;
        self.topo = topo;
        Ok(())
    }

    pub fn emf(&self, x: &[f64]) -> Vec<Complex64> {
        (0..self.case.machines.len())
            .map(|m| Complex64::from_polar(self.e_mag[m], x[3 * m]))
            .collect()
    }

    pub fn network(&self, x: &[f64], guess: &[Complex64]) -> Result<PlantSnapshot, NetworkError> {
        let nm = self.case.machines.len();
        let emf = self.emf(x);
        let lag = &x[3 * nm..];
        let sol = self.net.solve(&self.case, &emf, lag, guess, self.tol, self.max_iter)?;
        let p_elec = (0..nm)
            .map(|m| {
                if self.topo.machine_online[m] {
                    let bus = self.case.machines[m].bus;
                    let i = (emf[m] - sol.v[bus]) * self.net.machine_y[m];
                    (emf[m] * i.conj()).re
                } else {
                    0.0
                }
            })
            .collect();
        let i_p = self
            .case
            .ibrs
            .iter()
            .enumerate()
            .map(|(u, unit)| {
                if self.topo.ibr_online[u] {
                    ibr::output_current(lag[u], sol.v[unit.bus].norm(), &unit.params)
                } else {
                    0.0
                }
            })
            .collect();
        Ok(PlantSnapshot {
            v: sol.v,
            p_elec,
            i_p,
        })
    }

    /// Plant derivatives for a solved network. `p_set` are governor or
    /// mechanical setpoints, `p_ref`/`p_s` per converter.
    #[allow(clippy::too_many_arguments)]
    pub fn derivatives(
        &self,
        x: &[f64],
        snap: &PlantSnapshot,
        p_set: &[f64],
        p_ref: &[f64],
        p_s: &[f64],
        ibr_states: &[ibr::IbrState],
        dx: &mut [f64],
    ) {
        let omega_b = self.case.omega_b();
        let nm = self.case.machines.len();
        for (m, mach) in self.case.machines.iter().enumerate() {
            let k = 3 * m;
            if !self.topo.machine_online[m] {
                dx[k] = 0.0;
                dx[k + 1] = 0.0;
                dx[k + 2] = 0.0;
                continue;
            }
            let st = MachineState {
                delta: x[k],
                omega: x[k + 1],
                p_mech: x[k + 2],
                p_elec: snap.p_elec[m],
            };
            let (dd, dw) = machine::swing_derivatives(&st, &mach.params, 1.0, omega_b);
            dx[k] = dd;
            dx[k + 1] = dw;
            dx[k + 2] = match &mach.params.governor {
                Some(g) => machine::governor_derivative(x[k + 2], p_set[m], x[k + 1] - 1.0, g),
                None => 0.0,
            };
        }
        for (u, unit) in self.case.ibrs.iter().enumerate() {
            let k = 3 * nm + u;
            if !self.topo.ibr_online[u] {
                dx[k] = 0.0;
                continue;
            }
            let vt = snap.v[unit.bus].norm();
            let bounds = ibr::power_bounds(&unit.params, &ibr_states[u], self.soc_derating);
            let p_cmd = ibr::power_command(p_ref[u], p_s[u], bounds);
            let i_cmd = ibr::current_command(p_cmd, vt, &unit.params);
            dx[k] = ibr::lag_derivative(x[k], i_cmd, &unit.params);
        }
    }
}

/// Initial equilibrium of a case: plant, state vector, bus voltages and
/// mechanical setpoints.
#[derive(Clone, Debug)]
pub struct Equilibrium {
    pub plant: Plant,
    pub x: Vec<f64>,
    pub snap: PlantSnapshot,
    pub p_set: Vec<f64>,
    pub p_ref: Vec<f64>,
}

/// Power flow, machine and converter initialization, and a network solve
/// that fixes mechanical power at the electrical power for exact balance.
pub fn initialize(case: &Case, topo: &Topology, integ: &IntegrationConfig) -> Result<Equilibrium, SimError> {
    let pf = solve_powerflow_with(case, topo, &PowerFlowOptions::default())?;
    let nm = case.machines.len();
    let mut x = vec![0.0; plant_len(case)];
    let mut e_mag = vec![0.0; nm];
    for (m, mach) in case.machines.iter().enumerate() {
        let (st, e) = if topo.machine_online[m] {
            machine::init_from_terminal(pf.voltage[mach.bus], pf.machine_output[m], mach.params.xd_prime, 1.0)?
        } else {
            (
                MachineState {
                    delta: pf.voltage[mach.bus].arg(),
                    omega: 1.0,
                    p_mech: 0.0,
                    p_elec: 0.0,
                },
                pf.voltage[mach.bus].norm(),
            )
        };
        x[3 * m] = st.delta;
        x[3 * m + 1] = 1.0;
        x[3 * m + 2] = st.p_mech;
        e_mag[m] = e;
    }
    let p_ref: Vec<f64> = case.ibrs.iter().map(|u| u.p_ref).collect();
    for (u, unit) in case.ibrs.iter().enumerate() {
        if topo.ibr_online[u] {
            x[3 * nm + u] = ibr::current_command(unit.p_ref, pf.voltage[unit.bus].norm(), &unit.params);
        }
    }
    let v_ref: Vec<f64> = pf.voltage.iter().map(|v| v.norm()).collect();
    let net = DynamicNetwork::new(case, topo, &v_ref, integ.load_model).map_err(|_| SimError::NetworkInit)?;
    let plant = Plant {
        case: case.clone(),
        topo: topo.clone(),
        net,
        e_mag,
        v_ref,
        load_model: integ.load_model,
        tol: integ.network_tol,
        max_iter: integ.network_max_iter,
        soc_derating: integ.soc_derating,
    };
    let snap = plant.network(&x, &pf.voltage).map_err(|_| SimError::NetworkInit)?;
    let mut p_set = vec![0.0; nm];
    for m in 0..nm {
        if topo.machine_online[m] {
            x[3 * m + 2] = snap.p_elec[m];
            p_set[m] = snap.p_elec[m];
        }
    }
    Ok(Equilibrium {
        plant,
        x,
        snap,
        p_set,
        p_ref,
    })
}

// ---------------------------------------------------------------------------
// Measurement and control chain
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
struct Actuator {
    ibr: usize,
    local_sensor: usize,
    local_unwrap: Unwrapper,
    local_angle: f64,
    controller: Controller,
}

/// Sensors, channels and controllers, stepped once per integration step.
#[derive(Clone, Debug)]
struct Chain {
    models: Vec<SensorModel>,
    sensors: Vec<SensorState>,
    buses: Vec<usize>,
    weights: Vec<f64>,
    channels: Vec<Channel>,
    remote_unwrap: Vec<Unwrapper>,
    last_sample: Vec<f64>,
    actuators: Vec<Actuator>,
    rng: CommsRng,
    decimation: u32,
    steps: u64,
    theta_ref: f64,
}

impl Chain {
    fn new(case: &Case, cfg: &ControllerConfig, comms_cfg: &CommsConfig, angles: &[f64], seed: u64) -> Result<Self, SimError> {
        if case.sensors.is_empty() {
            return Err(SimError::NoSensors);
        }
        let mut rng = CommsRng::seed_from_u64(mix_seed(seed));
        let models: Vec<SensorModel> = case
            .sensors
            .iter()
            .map(|s| SensorModel {
                time_constant: s.time_constant,
                noise_std: comms_cfg.noise_std,
                bias: comms_cfg.bias,
            })
            .collect();
        let buses: Vec<usize> = case.sensors.iter().map(|s| s.bus).collect();
        let sensors: Vec<SensorState> = buses.iter().map(|b| SensorState { value: angles[*b] }).collect();
        let channels: Vec<Channel> = sensors
            .iter()
            .map(|s| {
                let d = comms::channel_delay_draw(&mut rng, (comms_cfg.delay_min, comms_cfg.delay_max));
                Channel::new(d, comms_cfg.jitter, 0.0, wrap_angle(s.value))
            })
            .collect();
        let weights: Vec<f64> = case.sensors.iter().map(|s| s.weight).collect();
        let theta_ref: f64 = sensors.iter().zip(&weights).map(|(s, w)| s.value * w).sum();
        let ids: Vec<usize> = match &cfg.actuators {
            Some(list) => list
                .iter()
                .map(|id| case.ibr_index(id).ok_or_else(|| SimError::Event(EventError::UnknownIbr(id.clone()))))
                .collect::<Result<_, _>>()?,
            None => (0..case.ibrs.len()).collect(),
        };
        let mut actuators = Vec::new();
        for u in ids {
            let bus = case.ibrs[u].bus;
            let local_sensor = buses
                .iter()
                .position(|b| *b == bus)
                .ok_or_else(|| SimError::NoLocalSensor(case.ibrs[u].id.clone()))?;
            let local = sensors[local_sensor].value;
            actuators.push(Actuator {
                ibr: u,
                local_sensor,
                local_unwrap: Unwrapper::seeded(local),
                local_angle: local,
                controller: Controller::new(cfg, local, theta_ref),
            });
        }
        let remote_unwrap = sensors.iter().map(|s| Unwrapper::seeded(s.value)).collect();
        let last_sample = sensors.iter().map(|s| wrap_angle(s.value)).collect();
        Ok(Self {
            models,
            sensors,
            buses,
            weights,
            channels,
            remote_unwrap,
            last_sample,
            actuators,
            rng,
            decimation: comms_cfg.decimation.max(1),
            steps: 0,
            theta_ref,
        })
    }

    /// Advances by `h` to time `t` with the true (unwrapped) bus angles and
    /// writes the controller outputs (system pu) into `p_s`.
    fn step(&mut self, t: f64, h: f64, angles: &[f64], case: &Case, p_s: &mut [f64]) {
        self.steps += 1;
        let report = self.steps % self.decimation as u64 == 0;
        for k in 0..self.sensors.len() {
            let sample = comms::sensor_step(&mut self.sensors[k], angles[self.buses[k]], h, &self.models[k], &mut self.rng);
            if report {
                self.last_sample[k] = sample;
                self.channels[k].push(t, sample, &mut self.rng);
            }
        }
        let mut theta_ref = 0.0;
        for k in 0..self.sensors.len() {
            let delivered = self.channels[k].delayed_read(t);
            theta_ref += self.weights[k] * self.remote_unwrap[k].push(delivered);
        }
        self.theta_ref = theta_ref;
        for a in &mut self.actuators {
            a.local_angle = a.local_unwrap.push(self.last_sample[a.local_sensor]);
            let out = a.controller.step(a.local_angle, theta_ref, h);
            p_s[a.ibr] = out * case.ibrs[a.ibr].params.rating;
        }
    }
}

// ---------------------------------------------------------------------------
// Trajectory
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Completed,
    NetworkSingular,
    Diverged,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stability {
    Stable,
    Unstable,
}

/// Recorded simulation output. Series are indexed `[element][sample]`.
/// Event instants appear twice: before and after the event.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub f0: f64,
    pub omega_b: f64,
    pub machine_ids: Vec<String>,
    /// Inertia constants on the system base.
    pub inertia: Vec<f64>,
    pub bus_ids: Vec<u32>,
    pub ibr_ids: Vec<String>,
    /// IBR index of each controller.
    pub controller_ibr: Vec<usize>,
    pub time: Vec<f64>,
    pub delta: Vec<Vec<f64>>,
    pub omega: Vec<Vec<f64>>,
    pub p_mech: Vec<Vec<f64>>,
    pub p_elec: Vec<Vec<f64>>,
    pub online: Vec<Vec<bool>>,
    pub coi_omega: Vec<f64>,
    pub coi_delta: Vec<f64>,
    pub coi_freq: Vec<f64>,
    /// Bus voltage magnitudes and unwrapped angles (empty unless recorded).
    pub v_mag: Vec<Vec<f64>>,
    pub v_ang: Vec<Vec<f64>>,
    pub p_s: Vec<Vec<f64>>,
    pub i_p: Vec<Vec<f64>>,
    pub e1: Vec<Vec<f64>>,
    pub e2: Vec<Vec<f64>>,
    /// Wide-area reference angle seen by the controllers.
    pub theta_ref: Vec<f64>,
    pub status: Status,
    pub events: Vec<(f64, Event)>,
    pub disturbance_time: Option<f64>,
    pub instability_threshold_deg: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    /// Largest rotor-angle separation among online machines at sample `k`.
    pub fn separation(&self, k: usize) -> f64 {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for m in 0..self.delta.len() {
            if self.online[m][k] {
                lo = lo.min(self.delta[m][k]);
                hi = hi.max(self.delta[m][k]);
            }
        }
        if hi >= lo {
            hi - lo
        } else {
            0.0
        }
    }

    pub fn max_separation(&self) -> f64 {
        (0..self.len()).map(|k| self.separation(k)).fold(0.0, f64::max)
    }
}

/// Unstable when the run did not complete or any pair of machines
/// separates by more than the threshold.
pub fn classify_stability(traj: &Trajectory) -> Stability {
    let limit = traj.instability_threshold_deg * PI / 180.0;
    if traj.status != Status::Completed || traj.max_separation() > limit {
        Stability::Unstable
    } else {
        Stability::Stable
    }
}

fn coi_of(x: &[f64], case: &Case, topo: &Topology) -> (f64, f64) {
    let mut ht = 0.0;
    let (mut w, mut d) = (0.0, 0.0);
    for m in topo.online_machines() {
        let h = case.machines[m].params.h;
        ht += h;
        w += h * x[3 * m + 1];
        d += h * x[3 * m];
    }
    if ht > 0.0 {
        (w / ht, d / ht)
    } else {
        (1.0, 0.0)
    }
}

// ---------------------------------------------------------------------------
// Simulation loop
// ---------------------------------------------------------------------------

/// Bus voltage (pu) below which the bus angle is treated as undefined.
pub const ANGLE_VOLTAGE_FLOOR: f64 = 1e-3;

struct Runner {
    plant: Plant,
    x: Vec<f64>,
    snap: PlantSnapshot,
    p_set: Vec<f64>,
    p_ref: Vec<f64>,
    p_s: Vec<f64>,
    ibr_states: Vec<ibr::IbrState>,
    chain: Option<Chain>,
    bus_unwrap: Vec<Unwrapper>,
    bus_angle: Vec<f64>,
    traj: Trajectory,
    record_buses: bool,
    bound: f64,
}

impl Runner {
    fn eval(&self, x: &[f64], guess: &[Complex64]) -> Result<(Vec<f64>, PlantSnapshot), NetworkError> {
        let snap = self.plant.network(x, guess)?;
        let mut dx = vec![0.0; x.len()];
        self.plant
            .derivatives(x, &snap, &self.p_set, &self.p_ref, &self.p_s, &self.ibr_states, &mut dx);
        Ok((dx, snap))
    }

    /// One RK4 step of length `h` starting from the cached boundary snapshot.
    fn rk4(&mut self, h: f64) -> Result<(), NetworkError> {
        let n = self.x.len();
        let mut k1 = vec![0.0; n];
        self.plant
            .derivatives(&self.x, &self.snap, &self.p_set, &self.p_ref, &self.p_s, &self.ibr_states, &mut k1);
        let guess = self.snap.v.clone();
        let stage = |a: &[f64], k: &[f64], c: f64| -> Vec<f64> { a.iter().zip(k).map(|(a, k)| a + c * k).collect() };
        let (k2, s2) = self.eval(&stage(&self.x, &k1, 0.5 * h), &guess)?;
        let (k3, s3) = self.eval(&stage(&self.x, &k2, 0.5 * h), &s2.v)?;
        let (k4, s4) = self.eval(&stage(&self.x, &k3, h), &s3.v)?;
        for i in 0..n {
            self.x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        self.snap = self.plant.network(&self.x, &s4.v)?;
        for (u, unit) in self.plant.case.ibrs.iter().enumerate() {
            if unit.params.energy_capacity.is_some() {
                let p = self.snap.i_p[u] * self.snap.v[unit.bus].norm();
                self.ibr_states[u].energy -= p * h / 3600.0;
            }
        }
        Ok(())
    }

    fn update_angles(&mut self) {
        for (b, v) in self.snap.v.iter().enumerate() {
            // the angle of a collapsed voltage is set by the fault admittance,
            // not the system; keep the last defined one
            if v.norm() >= ANGLE_VOLTAGE_FLOOR {
                self.bus_angle[b] = self.bus_unwrap[b].push(v.arg());
            }
        }
    }

    fn record(&mut self, t: f64) {
        let case = &self.plant.case;
        let topo = &self.plant.topo;
        let tr = &mut self.traj;
        tr.time.push(t);
        for m in 0..case.machines.len() {
            tr.delta[m].push(self.x[3 * m]);
            tr.omega[m].push(self.x[3 * m + 1]);
            tr.p_mech[m].push(self.x[3 * m + 2]);
            tr.p_elec[m].push(self.snap.p_elec[m]);
            tr.online[m].push(topo.machine_online[m]);
        }
        let (w, d) = coi_of(&self.x, case, topo);
        tr.coi_omega.push(w);
        tr.coi_delta.push(d);
        tr.coi_freq.push(case.f0 * w);
        if self.record_buses {
            for (b, v) in self.snap.v.iter().enumerate() {
                tr.v_mag[b].push(v.norm());
                tr.v_ang[b].push(self.bus_angle[b]);
            }
        }
        for u in 0..case.ibrs.len() {
            tr.p_s[u].push(self.p_s[u]);
            tr.i_p[u].push(self.snap.i_p[u]);
        }
        if let Some(chain) = &self.chain {
            for (c, a) in chain.actuators.iter().enumerate() {
                tr.e1[c].push(a.controller.e1);
                tr.e2[c].push(a.controller.e2);
            }
            tr.theta_ref.push(chain.theta_ref);
        }
    }

    fn diverged(&self) -> bool {
        let k = self.traj.len() - 1;
        !self.x.iter().all(|v| v.is_finite()) || self.traj.separation(k) > self.bound
    }
}

/// Runs a scenario to `t_end` or until divergence or network failure.
pub fn simulate(scenario: &Scenario) -> Result<Trajectory, SimError> {
    scenario.validate()?;
    let case = &scenario.case;
    let topo0 = Topology::from_case(case);
    let eq = initialize(case, &topo0, &scenario.integration)?;
    let nm = case.machines.len();
    let nb = case.buses.len();
    let nu = case.ibrs.len();

    let mut bus_unwrap: Vec<Unwrapper> = eq.snap.v.iter().map(|v| Unwrapper::seeded(v.arg())).collect();
    let bus_angle: Vec<f64> = eq
        .snap
        .v
        .iter()
        .zip(bus_unwrap.iter_mut())
        .map(|(v, u)| u.push(v.arg()))
        .collect();

    let chain = match &scenario.controller {
        Some(cfg) if cfg.enabled => Some(Chain::new(case, cfg, &scenario.comms, &bus_angle, scenario.seed)?),
        _ => None,
    };
    let n_ctrl = chain.as_ref().map_or(0, |c| c.actuators.len());
    let events = scenario.timed_events()?;
    let record_buses = scenario.record.bus_voltages;

    let traj = Trajectory {
        f0: case.f0,
        omega_b: case.omega_b(),
        machine_ids: case.machines.iter().map(|m| m.id.clone()).collect(),
        inertia: case.machines.iter().map(|m| m.params.h).collect(),
        bus_ids: case.buses.iter().map(|b| b.id).collect(),
        ibr_ids: case.ibrs.iter().map(|u| u.id.clone()).collect(),
        controller_ibr: chain.as_ref().map_or(Vec::new(), |c| c.actuators.iter().map(|a| a.ibr).collect()),
        time: Vec::new(),
        delta: vec![Vec::new(); nm],
        omega: vec![Vec::new(); nm],
        p_mech: vec![Vec::new(); nm],
        p_elec: vec![Vec::new(); nm],
        online: vec![Vec::new(); nm],
        coi_omega: Vec::new(),
        coi_delta: Vec::new(),
        coi_freq: Vec::new(),
        v_mag: vec![Vec::new(); if record_buses { nb } else { 0 }],
        v_ang: vec![Vec::new(); if record_buses { nb } else { 0 }],
        p_s: vec![Vec::new(); nu],
        i_p: vec![Vec::new(); nu],
        e1: vec![Vec::new(); n_ctrl],
        e2: vec![Vec::new(); n_ctrl],
        theta_ref: Vec::new(),
        status: Status::Completed,
        events: events.clone(),
        disturbance_time: events.first().map(|e| e.0),
        instability_threshold_deg: scenario.integration.instability_threshold_deg,
    };

    let mut r = Runner {
        plant: eq.plant,
        x: eq.x,
        snap: eq.snap,
        p_set: eq.p_set,
        p_ref: eq.p_ref,
        p_s: vec![0.0; nu],
        ibr_states: case
            .ibrs
            .iter()
            .map(|u| ibr::IbrState {
                i_lag: 0.0,
                energy: u.params.energy_capacity.map_or(0.0, |c| 0.5 * c),
            })
            .collect(),
        chain,
        bus_unwrap,
        bus_angle,
        traj,
        record_buses,
        bound: scenario.integration.divergence_bound,
    };

    let dt = scenario.dt();
    let t_end = scenario.integration.t_end;
    let snap_tol = 1e-9 * dt;
    let mut next_event = 0;
    let mut t = 0.0;
    let mut grid = 0u64;
    r.record(t);

    let apply_due = |r: &mut Runner, t: f64, next_event: &mut usize| -> Result<bool, SimError> {
        let mut any = false;
        while *next_event < events.len() && events[*next_event].0 <= t + snap_tol {
            let topo = apply_event(&r.plant.case, &r.plant.topo, &events[*next_event].1)?;
            *next_event += 1;
            if topo != r.plant.topo {
                any = true;
                if r.plant.set_topology(topo).is_err() {
                    return Err(SimError::NetworkInit);
                }
            }
        }
        Ok(any)
    };

    // events scheduled at t = 0 act on the initialized state
    match apply_due(&mut r, t, &mut next_event) {
        Ok(true) => match r.plant.network(&r.x, &r.snap.v) {
            Ok(s) => {
                r.snap = s;
                r.update_angles();
                r.record(t);
            }
            Err(_) => {
                r.traj.status = Status::NetworkSingular;
                return Ok(r.traj);
            }
        },
        Ok(false) => {}
        Err(SimError::NetworkInit) => {
            r.traj.status = Status::NetworkSingular;
            return Ok(r.traj);
        }
        Err(e) => return Err(e),
    }

    while t < t_end - snap_tol {
        let t_grid = ((grid + 1) as f64 * dt).min(t_end);
        let mut t_next = t_grid;
        if next_event < events.len() && events[next_event].0 < t_grid - snap_tol {
            t_next = events[next_event].0;
        }
        let h = t_next - t;
        if r.rk4(h).is_err() {
            r.traj.status = Status::NetworkSingular;
            break;
        }
        t = t_next;
        if (t - t_grid).abs() <= snap_tol {
            t = t_grid;
            grid += 1;
        }
        r.update_angles();
        r.record(t);
        if r.diverged() {
            r.traj.status = Status::Diverged;
            break;
        }
        match apply_due(&mut r, t, &mut next_event) {
            Ok(true) => match r.plant.network(&r.x, &r.snap.v) {
                Ok(s) => {
                    r.snap = s;
                    r.update_angles();
                    r.record(t);
                }
                Err(_) => {
                    r.traj.status = Status::NetworkSingular;
                    break;
                }
            },
            Ok(false) => {}
            Err(SimError::NetworkInit) => {
                r.traj.status = Status::NetworkSingular;
                break;
            }
            Err(e) => return Err(e),
        }
        if let Some(chain) = &mut r.chain {
            chain.step(t, h, &r.bus_angle, &r.plant.case, &mut r.p_s);
            // controller outputs are recorded with the sample that produced them
            let k = r.traj.len() - 1;
            for u in 0..nu {
                r.traj.p_s[u][k] = r.p_s[u];
            }
            for (c, a) in chain.actuators.iter().enumerate() {
                r.traj.e1[c][k] = a.controller.e1;
                r.traj.e2[c][k] = a.controller.e2;
            }
            r.traj.theta_ref[k] = chain.theta_ref;
        }
    }
    Ok(r.traj)
}
