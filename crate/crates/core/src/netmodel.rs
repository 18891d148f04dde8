//! Case description, bus-admittance matrix, Newton-Raphson power flow and
//! topology events.
//!
//! All quantities are per unit on the system MVA base once a [`Case`] has
//! been built. Machine parameters arrive on their own MVA base in the
//! [`CaseDocument`] and are converted in [`Case::from_document`].

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dense::{solve_real, CMatrix, CVector};
use crate::ibr::IbrParams;
use crate::machine::{GovernorParams, MachineParams};

/// Shunt admittance used for a bolted three-phase fault.
pub const FAULT_ADMITTANCE: f64 = 1e7;

// ---------------------------------------------------------------------------
// Document types (as read from JSON)
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemData {
    #[serde(default)]
    pub name: Option<String>,
    pub base_mva: f64,
    /// Nominal frequency in Hz.
    pub f0: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusData {
    pub id: u32,
    pub kind: BusKind,
    /// Voltage magnitude setpoint for slack and PV buses.
    #[serde(default = "one")]
    pub v_set: f64,
    /// Voltage angle of the slack bus (radians).
    #[serde(default)]
    pub angle: f64,
    #[serde(default)]
    pub p_load: f64,
    #[serde(default)]
    pub q_load: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchData {
    pub id: String,
    pub from: u32,
    pub to: u32,
    #[serde(default)]
    pub r: f64,
    pub x: f64,
    /// Total line charging susceptance.
    #[serde(default)]
    pub b: f64,
    #[serde(default = "yes")]
    pub in_service: bool,
}

/// Governor data on the machine base.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GovernorData {
    pub droop: f64,
    pub t_g: f64,
    #[serde(default)]
    pub p_min: f64,
    pub p_max: f64,
}

/// Machine data. `h`, `d`, `xd_prime` and governor values are on the
/// machine base `mva`; `p_gen` is the dispatch on the system base.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MachineData {
    pub id: String,
    pub bus: u32,
    pub mva: f64,
    pub h: f64,
    #[serde(default)]
    pub d: f64,
    pub xd_prime: f64,
    #[serde(default)]
    pub p_gen: f64,
    #[serde(default)]
    pub governor: Option<GovernorData>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IbrData {
    pub id: String,
    pub bus: u32,
    /// Power rating (pu, system base).
    pub rating: f64,
    #[serde(default)]
    pub p_ref: f64,
    #[serde(default = "default_v_min")]
    pub v_min: f64,
    #[serde(default = "default_t_i")]
    pub t_i: f64,
    #[serde(default = "default_v_zero")]
    pub v_zero: f64,
    #[serde(default = "default_v_break")]
    pub v_break: f64,
    /// Defaults to 1.1 times the rating.
    #[serde(default)]
    pub current_limit: Option<f64>,
    /// Storage capacity in MWh.
    #[serde(default)]
    pub energy_mwh: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorData {
    pub id: String,
    pub bus: u32,
    /// Sensor time constant (s).
    #[serde(default = "default_sensor_t")]
    pub t: f64,
    /// Averaging weight; all sensors default to the arithmetic mean.
    #[serde(default)]
    pub weight: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseDocument {
    pub system: SystemData,
    pub buses: Vec<BusData>,
    pub branches: Vec<BranchData>,
    pub machines: Vec<MachineData>,
    #[serde(default)]
    pub ibr: Vec<IbrData>,
    #[serde(default)]
    pub sensors: Vec<SensorData>,
}

fn one() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}
fn default_v_min() -> f64 {
    0.1
}
fn default_t_i() -> f64 {
    0.02
}
fn default_v_zero() -> f64 {
    0.5
}
fn default_v_break() -> f64 {
    0.9
}
fn default_sensor_t() -> f64 {
    0.02
}

// ---------------------------------------------------------------------------
// Validated case
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct Bus {
    pub id: u32,
    pub kind: BusKind,
    pub v_set: f64,
    pub angle: f64,
    pub p_load: f64,
    pub q_load: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Branch {
    pub id: String,
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    pub b: f64,
    pub in_service: bool,
}

impl Branch {
    pub fn series_admittance(&self) -> Complex64 {
        Complex64::new(1.0, 0.0) / Complex64::new(self.r, self.x)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Machine {
    pub id: String,
    pub bus: usize,
    pub mva: f64,
    pub p_gen: f64,
    pub params: MachineParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ibr {
    pub id: String,
    pub bus: usize,
    pub p_ref: f64,
    pub params: IbrParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sensor {
    pub id: String,
    pub bus: usize,
    pub time_constant: f64,
    pub weight: f64,
}

/// Validated network description, system base.
#[derive(Clone, Debug, PartialEq)]
pub struct Case {
    pub name: String,
    pub base_mva: f64,
    pub f0: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub machines: Vec<Machine>,
    pub ibrs: Vec<Ibr>,
    pub sensors: Vec<Sensor>,
    pub slack: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CaseError {
    #[error("no slack bus")]
    NoSlack,
    #[error("more than one slack bus")]
    MultipleSlack,
    #[error("duplicate bus id {0}")]
    DuplicateBus(u32),
    #[error("duplicate {kind} id '{id}'")]
    DuplicateId { kind: &'static str, id: String },
    #[error("{kind} '{id}' references unknown bus {bus}")]
    UnknownBus { kind: &'static str, id: String, bus: u32 },
    #[error("{kind} '{id}': invalid {field} ({value})")]
    InvalidParameter {
        kind: &'static str,
        id: String,
        field: &'static str,
        value: f64,
    },
    #[error("sensor weights sum to {0}, expected 1")]
    WeightSum(f64),
    #[error("sensor weights must be given for all sensors or none")]
    PartialWeights,
}

fn check(ok: bool, kind: &'static str, id: &str, field: &'static str, value: f64) -> Result<(), CaseError> {
    if ok && value.is_finite() {
        Ok(())
    } else {
        Err(CaseError::InvalidParameter {
            kind,
            id: id.into(),
            field,
            value,
        })
    }
}

fn unique<'a>(kind: &'static str, ids: impl Iterator<Item = &'a String>) -> Result<(), CaseError> {
    let mut seen = BTreeSet::new();
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(CaseError::DuplicateId {
                kind,
                id: id.clone(),
            });
        }
    }
    Ok(())
}

impl Case {
    /// Validates a document and converts machine data to the system base.
    pub fn from_document(doc: &CaseDocument) -> Result<Case, CaseError> {
        let sys = &doc.system;
        check(sys.base_mva > 0.0, "system", "system", "base_mva", sys.base_mva)?;
        check(sys.f0 > 0.0, "system", "system", "f0", sys.f0)?;
        let base = sys.base_mva;

        let mut bus_ids = BTreeSet::new();
        for b in &doc.buses {
            if !bus_ids.insert(b.id) {
                return Err(CaseError::DuplicateBus(b.id));
            }
        }
        let slacks: Vec<usize> = doc
            .buses
            .iter()
            .enumerate()
            .filter(|(_, b)| b.kind == BusKind::Slack)
            .map(|(i, _)| i)
            .collect();
        let slack = match slacks.len() {
            0 => return Err(CaseError::NoSlack),
            1 => slacks[0],
            _ => return Err(CaseError::MultipleSlack),
        };
        let buses: Vec<Bus> = doc
            .buses
            .iter()
            .map(|b| {
                let id = alloc::format!("{}", b.id);
                check(b.v_set > 0.0, "bus", &id, "v_set", b.v_set)?;
                check(true, "bus", &id, "p_load", b.p_load)?;
                check(true, "bus", &id, "q_load", b.q_load)?;
                Ok(Bus {
                    id: b.id,
                    kind: b.kind,
                    v_set: b.v_set,
                    angle: b.angle,
                    p_load: b.p_load,
                    q_load: b.q_load,
                })
            })
            .collect::<Result<_, CaseError>>()?;
        let index = |kind: &'static str, id: &str, bus: u32| -> Result<usize, CaseError> {
            doc.buses
                .iter()
                .position(|b| b.id == bus)
                .ok_or_else(|| CaseError::UnknownBus {
                    kind,
                    id: id.into(),
                    bus,
                })
        };

        unique("branch", doc.branches.iter().map(|b| &b.id))?;
        let branches = doc
            .branches
            .iter()
            .map(|br| {
                let from = index("branch", &br.id, br.from)?;
                let to = index("branch", &br.id, br.to)?;
                check(from != to, "branch", &br.id, "to", br.to as f64)?;
                check(br.r >= 0.0, "branch", &br.id, "r", br.r)?;
                check(br.r != 0.0 || br.x != 0.0, "branch", &br.id, "x", br.x)?;
                check(true, "branch", &br.id, "b", br.b)?;
                Ok(Branch {
                    id: br.id.clone(),
                    from,
                    to,
                    r: br.r,
                    x: br.x,
                    b: br.b,
                    in_service: br.in_service,
                })
            })
            .collect::<Result<_, CaseError>>()?;

        unique("machine", doc.machines.iter().map(|m| &m.id))?;
        let machines = doc
            .machines
            .iter()
            .map(|m| {
                let bus = index("machine", &m.id, m.bus)?;
                check(m.mva > 0.0, "machine", &m.id, "mva", m.mva)?;
                check(m.h > 0.0, "machine", &m.id, "h", m.h)?;
                check(m.d >= 0.0, "machine", &m.id, "d", m.d)?;
                check(m.xd_prime > 0.0, "machine", &m.id, "xd_prime", m.xd_prime)?;
                check(true, "machine", &m.id, "p_gen", m.p_gen)?;
                let scale = m.mva / base;
                let governor = match &m.governor {
                    Some(g) => {
                        check(g.droop > 0.0, "machine", &m.id, "governor.droop", g.droop)?;
                        check(g.t_g > 0.0, "machine", &m.id, "governor.t_g", g.t_g)?;
                        check(g.p_max >= g.p_min, "machine", &m.id, "governor.p_max", g.p_max)?;
                        Some(GovernorParams {
                            droop: g.droop / scale,
                            time_constant: g.t_g,
                            p_min: g.p_min * scale,
                            p_max: g.p_max * scale,
                        })
                    }
                    None => None,
                };
                Ok(Machine {
                    id: m.id.clone(),
                    bus,
                    mva: m.mva,
                    p_gen: m.p_gen,
                    params: MachineParams {
                        h: m.h * scale,
                        d: m.d * scale,
                        xd_prime: m.xd_prime / scale,
                        governor,
                    },
                })
            })
            .collect::<Result<_, CaseError>>()?;

        unique("ibr", doc.ibr.iter().map(|u| &u.id))?;
        let ibrs = doc
            .ibr
            .iter()
            .map(|u| {
                let bus = index("ibr", &u.id, u.bus)?;
                check(u.rating > 0.0, "ibr", &u.id, "rating", u.rating)?;
                check(u.p_ref.abs() <= u.rating, "ibr", &u.id, "p_ref", u.p_ref)?;
                check(u.v_min > 0.0, "ibr", &u.id, "v_min", u.v_min)?;
                check(u.t_i > 0.0, "ibr", &u.id, "t_i", u.t_i)?;
                check(u.v_zero > 0.0, "ibr", &u.id, "v_zero", u.v_zero)?;
                check(u.v_break > u.v_zero && u.v_break <= 1.0, "ibr", &u.id, "v_break", u.v_break)?;
                let current_limit = u.current_limit.unwrap_or(1.1 * u.rating);
                check(current_limit > 0.0, "ibr", &u.id, "current_limit", current_limit)?;
                if let Some(e) = u.energy_mwh {
                    check(e > 0.0, "ibr", &u.id, "energy_mwh", e)?;
                }
                Ok(Ibr {
                    id: u.id.clone(),
                    bus,
                    p_ref: u.p_ref,
                    params: IbrParams {
                        rating: u.rating,
                        v_min: u.v_min,
                        t_i: u.t_i,
                        v_zero: u.v_zero,
                        v_break: u.v_break,
                        current_limit,
                        energy_capacity: u.energy_mwh.map(|e| e / base),
                    },
                })
            })
            .collect::<Result<_, CaseError>>()?;

        unique("sensor", doc.sensors.iter().map(|s| &s.id))?;
        let given = doc.sensors.iter().filter(|s| s.weight.is_some()).count();
        if given != 0 && given != doc.sensors.len() {
            return Err(CaseError::PartialWeights);
        }
        let n_sensors = doc.sensors.len();
        let sensors: Vec<Sensor> = doc
            .sensors
            .iter()
            .map(|s| {
                let bus = index("sensor", &s.id, s.bus)?;
                check(s.t > 0.0, "sensor", &s.id, "t", s.t)?;
                let weight = s.weight.unwrap_or(1.0 / n_sensors as f64);
                check(weight >= 0.0, "sensor", &s.id, "weight", weight)?;
                Ok(Sensor {
                    id: s.id.clone(),
                    bus,
                    time_constant: s.t,
                    weight,
                })
            })
            .collect::<Result<_, CaseError>>()?;
        if !sensors.is_empty() {
            let sum: f64 = sensors.iter().map(|s| s.weight).sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(CaseError::WeightSum(sum));
            }
        }

        Ok(Case {
            name: sys.name.clone().unwrap_or_default(),
            base_mva: base,
            f0: sys.f0,
            buses,
            branches,
            machines,
            ibrs,
            sensors,
            slack,
        })
    }

    /// Electrical speed base `2 pi f0` in rad/s.
    pub fn omega_b(&self) -> f64 {
        2.0 * PI * self.f0
    }

    pub fn bus_index(&self, id: u32) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }
    pub fn machine_index(&self, id: &str) -> Option<usize> {
        self.machines.iter().position(|m| m.id == id)
    }
    pub fn ibr_index(&self, id: &str) -> Option<usize> {
        self.ibrs.iter().position(|u| u.id == id)
    }
    pub fn branch_index(&self, id: &str) -> Option<usize> {
        self.branches.iter().position(|b| b.id == id)
    }

    /// Whether the in-service branch graph stays connected without `skip`.
    pub fn connected_without(&self, topo: &Topology, skip: Option<usize>) -> bool {
        let n = self.buses.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for (k, br) in self.branches.iter().enumerate() {
            if Some(k) == skip || !topo.branch_in_service[k] {
                continue;
            }
            let (a, b) = (find(&mut parent, br.from), find(&mut parent, br.to));
            parent[a] = b;
        }
        let root = find(&mut parent, 0);
        (0..n).all(|i| find(&mut parent, i) == root)
    }
}

// ---------------------------------------------------------------------------
// Topology and events
// ---------------------------------------------------------------------------

/// Switching state layered over a [`Case`].
#[derive(Clone, Debug, PartialEq)]
pub struct Topology {
    pub branch_in_service: Vec<bool>,
    pub faulted: Vec<bool>,
    /// Branch associated with a bus fault, opened on clearing.
    pub fault_branch: Vec<Option<usize>>,
    pub machine_online: Vec<bool>,
    pub ibr_online: Vec<bool>,
    pub load_scale: Vec<f64>,
}

impl Topology {
    pub fn from_case(case: &Case) -> Self {
        Self {
            branch_in_service: case.branches.iter().map(|b| b.in_service).collect(),
            faulted: vec![false; case.buses.len()],
            fault_branch: vec![None; case.buses.len()],
            machine_online: vec![true; case.machines.len()],
            ibr_online: vec![true; case.ibrs.len()],
            load_scale: vec![1.0; case.buses.len()],
        }
    }

    /// Indices of online machines (the set over which COI quantities are taken).
    pub fn online_machines(&self) -> impl Iterator<Item = usize> + '_ {
        self.machine_online
            .iter()
            .enumerate()
            .filter(|(_, on)| **on)
            .map(|(i, _)| i)
    }

    pub fn any_fault(&self) -> bool {
        self.faulted.iter().any(|f| *f)
    }
}

/// Discrete change to the network, generators, IBRs or loads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Event {
    TripMachine {
        machine: String,
    },
    RestoreMachine {
        machine: String,
    },
    TripIbr {
        ibr: String,
    },
    RestoreIbr {
        ibr: String,
    },
    /// Bolted three-phase fault at a bus, optionally located on a branch
    /// terminating there.
    Fault {
        bus: u32,
        #[serde(default)]
        branch: Option<String>,
    },
    /// Clears the fault at a bus. The associated branch, if any, is opened
    /// unless `keep_branch` is set.
    ClearFault {
        bus: u32,
        #[serde(default)]
        keep_branch: bool,
    },
    OpenBranch {
        branch: String,
    },
    CloseBranch {
        branch: String,
    },
    /// Drops `fraction` of the apparent power of the load at a bus.
    LoadLoss {
        bus: u32,
        fraction: f64,
    },
    SetLoadScale {
        bus: u32,
        scale: f64,
    },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EventError {
    #[error("unknown machine '{0}'")]
    UnknownMachine(String),
    #[error("unknown ibr '{0}'")]
    UnknownIbr(String),
    #[error("unknown bus {0}")]
    UnknownBus(u32),
    #[error("unknown branch '{0}'")]
    UnknownBranch(String),
    #[error("branch '{branch}' does not terminate at bus {bus}")]
    BranchNotAtBus { branch: String, bus: u32 },
    #[error("invalid load fraction {0}")]
    InvalidFraction(f64),
}

struct Resolver<'a>(&'a Case);

impl Resolver<'_> {
    fn machine(&self, id: &str) -> Result<usize, EventError> {
        self.0.machine_index(id).ok_or_else(|| EventError::UnknownMachine(id.into()))
    }
    fn ibr(&self, id: &str) -> Result<usize, EventError> {
        self.0.ibr_index(id).ok_or_else(|| EventError::UnknownIbr(id.into()))
    }
    fn bus(&self, id: u32) -> Result<usize, EventError> {
        self.0.bus_index(id).ok_or(EventError::UnknownBus(id))
    }
    fn branch(&self, id: &str) -> Result<usize, EventError> {
        self.0.branch_index(id).ok_or_else(|| EventError::UnknownBranch(id.into()))
    }
}

impl Event {
    /// Checks that every referenced element exists.
    pub fn validate(&self, case: &Case) -> Result<(), EventError> {
        apply_event(case, &Topology::from_case(case), self).map(|_| ())
    }

    /// Events that undo `self` when applied to the topology produced by
    /// applying `self` to `before`.
    pub fn inverse(&self, case: &Case, before: &Topology) -> Result<Vec<Event>, EventError> {
        let r = Resolver(case);
        Ok(match self {
            Event::TripMachine { machine } => {
                if before.machine_online[r.machine(machine)?] {
                    vec![Event::RestoreMachine {
                        machine: machine.clone(),
                    }]
                } else {
                    vec![]
                }
            }
            Event::RestoreMachine { machine } => {
                if before.machine_online[r.machine(machine)?] {
                    vec![]
                } else {
                    vec![Event::TripMachine {
                        machine: machine.clone(),
                    }]
                }
            }
            Event::TripIbr { ibr } => {
                if before.ibr_online[r.ibr(ibr)?] {
                    vec![Event::RestoreIbr { ibr: ibr.clone() }]
                } else {
                    vec![]
                }
            }
            Event::RestoreIbr { ibr } => {
                if before.ibr_online[r.ibr(ibr)?] {
                    vec![]
                } else {
                    vec![Event::TripIbr { ibr: ibr.clone() }]
                }
            }
            Event::Fault { bus, .. } => {
                let k = r.bus(*bus)?;
                if before.faulted[k] {
                    let branch = before.fault_branch[k].map(|b| case.branches[b].id.clone());
                    vec![Event::Fault { bus: *bus, branch }]
                } else {
                    vec![Event::ClearFault {
                        bus: *bus,
                        keep_branch: true,
                    }]
                }
            }
            Event::ClearFault { bus, keep_branch } => {
                let k = r.bus(*bus)?;
                let mut inv = Vec::new();
                if before.faulted[k] {
                    if let (Some(b), false) = (before.fault_branch[k], keep_branch) {
                        if before.branch_in_service[b] {
                            inv.push(Event::CloseBranch {
                                branch: case.branches[b].id.clone(),
                            });
                        }
                    }
                    inv.push(Event::Fault {
                        bus: *bus,
                        branch: before.fault_branch[k].map(|b| case.branches[b].id.clone()),
                    });
                }
                inv
            }
            Event::OpenBranch { branch } => {
                if before.branch_in_service[r.branch(branch)?] {
                    vec![Event::CloseBranch {
                        branch: branch.clone(),
                    }]
                } else {
                    vec![]
                }
            }
            Event::CloseBranch { branch } => {
                if before.branch_in_service[r.branch(branch)?] {
                    vec![]
                } else {
                    vec![Event::OpenBranch {
                        branch: branch.clone(),
                    }]
                }
            }
            Event::LoadLoss { bus, .. } | Event::SetLoadScale { bus, .. } => {
                vec![Event::SetLoadScale {
                    bus: *bus,
                    scale: before.load_scale[r.bus(*bus)?],
                }]
            }
        })
    }
}

/// Applies one event, returning the updated topology.
pub fn apply_event(case: &Case, topo: &Topology, event: &Event) -> Result<Topology, EventError> {
    let r = Resolver(case);
    let mut t = topo.clone();
    match event {
        Event::TripMachine { machine } => t.machine_online[r.machine(machine)?] = false,
        Event::RestoreMachine { machine } => t.machine_online[r.machine(machine)?] = true,
        Event::TripIbr { ibr } => t.ibr_online[r.ibr(ibr)?] = false,
        Event::RestoreIbr { ibr } => t.ibr_online[r.ibr(ibr)?] = true,
        Event::Fault { bus, branch } => {
            let k = r.bus(*bus)?;
            let br = match branch {
                Some(id) => {
                    let b = r.branch(id)?;
                    let br = &case.branches[b];
                    if br.from != k && br.to != k {
                        return Err(EventError::BranchNotAtBus {
                            branch: id.clone(),
                            bus: *bus,
                        });
                    }
                    Some(b)
                }
                None => None,
            };
            t.faulted[k] = true;
            t.fault_branch[k] = br;
        }
        Event::ClearFault { bus, keep_branch } => {
            let k = r.bus(*bus)?;
            if t.faulted[k] && !keep_branch {
                if let Some(b) = t.fault_branch[k] {
                    t.branch_in_service[b] = false;
                }
            }
            t.faulted[k] = false;
            t.fault_branch[k] = None;
        }
        Event::OpenBranch { branch } => t.branch_in_service[r.branch(branch)?] = false,
        Event::CloseBranch { branch } => t.branch_in_service[r.branch(branch)?] = true,
        Event::LoadLoss { bus, fraction } => {
            if !(0.0..=1.0).contains(fraction) {
                return Err(EventError::InvalidFraction(*fraction));
            }
            t.load_scale[r.bus(*bus)?] *= 1.0 - fraction;
        }
        Event::SetLoadScale { bus, scale } => {
            if !(*scale >= 0.0) {
                return Err(EventError::InvalidFraction(*scale));
            }
            t.load_scale[r.bus(*bus)?] = *scale;
        }
    }
    Ok(t)
}

// ---------------------------------------------------------------------------
// Admittance matrix
// ---------------------------------------------------------------------------

/// Bus admittance matrix of the in-service branches, including line
/// charging and bolted-fault shunts. Machine and load admittances are not
/// included here.
pub fn build_ybus(case: &Case, topo: &Topology) -> DMatrix<Complex64> {
    let n = case.buses.len();
    let mut y = CMatrix::zeros(n, n);
    for (k, br) in case.branches.iter().enumerate() {
        if !topo.branch_in_service[k] {
            continue;
        }
        let ys = br.series_admittance();
        let ysh = Complex64::new(0.0, br.b / 2.0);
        y[(br.from, br.from)] += ys + ysh;
        y[(br.to, br.to)] += ys + ysh;
        y[(br.from, br.to)] -= ys;
        y[(br.to, br.from)] -= ys;
    }
    for (i, f) in topo.faulted.iter().enumerate() {
        if *f {
            y[(i, i)] += Complex64::new(FAULT_ADMITTANCE, 0.0);
        }
    }
    y
}

// ---------------------------------------------------------------------------
// Power flow
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerFlowOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PowerFlowSolution {
    /// Complex bus voltages.
    pub voltage: Vec<Complex64>,
    /// Complex power output of each machine (zero when offline).
    pub machine_output: Vec<Complex64>,
    pub iterations: usize,
    pub max_mismatch: f64,
}

impl PowerFlowSolution {
    pub fn magnitude(&self, bus: usize) -> f64 {
        self.voltage[bus].norm()
    }
    pub fn angle(&self, bus: usize) -> f64 {
        self.voltage[bus].arg()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PowerFlowError {
    #[error("power flow did not converge after {iterations} iterations (mismatch {mismatch:e})")]
    NotConverged { iterations: usize, mismatch: f64 },
}

/// Scheduled net injection (generation minus load) at every bus.
pub fn scheduled_injection(case: &Case, topo: &Topology) -> Vec<Complex64> {
    let mut s: Vec<Complex64> = case
        .buses
        .iter()
        .zip(&topo.load_scale)
        .map(|(b, k)| -Complex64::new(b.p_load, b.q_load) * *k)
        .collect();
    for (m, mach) in case.machines.iter().enumerate() {
        if topo.machine_online[m] {
            s[mach.bus] += Complex64::new(mach.p_gen, 0.0);
        }
    }
    for (u, ibr) in case.ibrs.iter().enumerate() {
        if topo.ibr_online[u] {
            s[ibr.bus] += Complex64::new(ibr.p_ref, 0.0);
        }
    }
    s
}

/// Newton-Raphson power flow from a flat start using the case topology.
pub fn solve_powerflow(case: &Case) -> Result<PowerFlowSolution, PowerFlowError> {
    solve_powerflow_with(case, &Topology::from_case(case), &PowerFlowOptions::default())
}

pub fn solve_powerflow_with(
    case: &Case,
    topo: &Topology,
    opts: &PowerFlowOptions,
) -> Result<PowerFlowSolution, PowerFlowError> {
    let n = case.buses.len();
    let y = build_ybus(case, topo);
    let sched = scheduled_injection(case, topo);

    let pv: Vec<usize> = (0..n).filter(|&i| case.buses[i].kind == BusKind::Pv).collect();
    let pq: Vec<usize> = (0..n).filter(|&i| case.buses[i].kind == BusKind::Pq).collect();
    let pvpq: Vec<usize> = pv.iter().chain(&pq).copied().collect();

    let mut vm: Vec<f64> = case
        .buses
        .iter()
        .map(|b| if b.kind == BusKind::Pq { 1.0 } else { b.v_set })
        .collect();
    let mut va: Vec<f64> = vec![case.buses[case.slack].angle; n];

    let mismatch = |vm: &[f64], va: &[f64]| -> (CVector, Vec<f64>, f64) {
        let v = CVector::from_iterator(n, (0..n).map(|i| Complex64::from_polar(vm[i], va[i])));
        let ibus = &y * &v;
        let s = CVector::from_iterator(n, (0..n).map(|i| v[i] * ibus[i].conj()));
        let mut f = Vec::with_capacity(pvpq.len() + pq.len());
        for &i in &pvpq {
            f.push(s[i].re - sched[i].re);
        }
        for &i in &pq {
            f.push(s[i].im - sched[i].im);
        }
        let norm = f.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        (v, f, norm)
    };

    let (mut v, mut f, mut norm) = mismatch(&vm, &va);
    let mut it = 0;
    while !(norm < opts.tolerance) {
        if it >= opts.max_iterations || !norm.is_finite() {
            return Err(PowerFlowError::NotConverged {
                iterations: it,
                mismatch: norm,
            });
        }
        it += 1;
        // dS/dVa and dS/dVm in complex form
        let ibus = &y * &v;
        let vnorm = CVector::from_iterator(n, v.iter().map(|z| z / z.norm()));
        let mut ds_dva = CMatrix::zeros(n, n);
        let mut ds_dvm = CMatrix::zeros(n, n);
        for i in 0..n {
            for k in 0..n {
                let yik = y[(i, k)];
                ds_dva[(i, k)] = -Complex64::i() * v[i] * (yik * v[k]).conj();
                ds_dvm[(i, k)] = v[i] * (yik * vnorm[k]).conj();
            }
            ds_dva[(i, i)] += Complex64::i() * v[i] * ibus[i].conj();
            ds_dvm[(i, i)] += ibus[i].conj() * vnorm[i];
        }
        let (na, nm) = (pvpq.len(), pq.len());
        let mut jac = DMatrix::<f64>::zeros(na + nm, na + nm);
        for (r, &i) in pvpq.iter().enumerate() {
            for (c, &k) in pvpq.iter().enumerate() {
                jac[(r, c)] = ds_dva[(i, k)].re;
            }
            for (c, &k) in pq.iter().enumerate() {
                jac[(r, na + c)] = ds_dvm[(i, k)].re;
            }
        }
        for (r, &i) in pq.iter().enumerate() {
            for (c, &k) in pvpq.iter().enumerate() {
                jac[(na + r, c)] = ds_dva[(i, k)].im;
            }
            for (c, &k) in pq.iter().enumerate() {
                jac[(na + r, na + c)] = ds_dvm[(i, k)].im;
            }
        }
        let rhs = DVector::from_vec(f.iter().map(|x| -x).collect());
        let dx = match solve_real(jac, &rhs) {
            Some(dx) => dx,
            None => {
                return Err(PowerFlowError::NotConverged {
                    iterations: it,
                    mismatch: norm,
                })
            }
        };
        for (r, &i) in pvpq.iter().enumerate() {
            va[i] += dx[r];
        }
        for (r, &i) in pq.iter().enumerate() {
            vm[i] += dx[na + r];
        }
        (v, f, norm) = mismatch(&vm, &va);
    }

    let ibus = &y * &v;
    let s_calc: Vec<Complex64> = (0..n).map(|i| v[i] * ibus[i].conj()).collect();
    let machine_output = dispatch_machines(case, topo, &s_calc);
    Ok(PowerFlowSolution {
        voltage: v.iter().copied().collect(),
        machine_output,
        iterations: it,
        max_mismatch: norm,
    })
}

/// Splits the generation at each bus among its online machines. Active
/// power follows the scheduled dispatch (by rating when nothing is
/// scheduled), reactive power is shared by rating.
fn dispatch_machines(case: &Case, topo: &Topology, s_calc: &[Complex64]) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); case.machines.len()];
    for (bi, bus) in case.buses.iter().enumerate() {
        let at_bus: Vec<usize> = (0..case.machines.len())
            .filter(|&m| case.machines[m].bus == bi && topo.machine_online[m])
            .collect();
        if at_bus.is_empty() {
            continue;
        }
        let mut s_gen = s_calc[bi] + Complex64::new(bus.p_load, bus.q_load) * topo.load_scale[bi];
        for (u, ibr) in case.ibrs.iter().enumerate() {
            if ibr.bus == bi && topo.ibr_online[u] {
                s_gen -= Complex64::new(ibr.p_ref, 0.0);
            }
        }
        let p_sched: f64 = at_bus.iter().map(|&m| case.machines[m].p_gen).sum();
        let mva: f64 = at_bus.iter().map(|&m| case.machines[m].mva).sum();
        for &m in &at_bus {
            let share_p = if p_sched.abs() > 0.0 {
                case.machines[m].p_gen / p_sched
            } else {
                case.machines[m].mva / mva
            };
            let share_q = case.machines[m].mva / mva;
            out[m] = Complex64::new(s_gen.re * share_p, s_gen.im * share_q);
        }
    }
    out
}
