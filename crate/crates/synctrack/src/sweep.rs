//! Contingency sweeps run under the open-loop / closed-loop /
//! closed-loop-with-communications protocol.

use std::path::Path;

use anyhow::Result;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use synctrack_core::analysis::{compare_first_swings, summarize, EventClass, FirstSwingReport, SummaryRow};
use synctrack_core::comms::CommsConfig;
use synctrack_core::engine::{simulate, Scenario, ScheduledEvent, Trajectory};
use synctrack_core::netmodel::{Case, Event, Topology};

use crate::export::{create_dir, summarize_trajectory, write_json, write_summary_csv, write_trajectory_csv, TrajectorySummary};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    /// Controllers disabled.
    Ol,
    /// Controllers with ideal measurements.
    Cl,
    /// Controllers with delayed, noisy measurements.
    ClComms,
}

impl Protocol {
    pub const ALL: [Protocol; 3] = [Protocol::Ol, Protocol::Cl, Protocol::ClComms];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::Ol => "ol",
            Protocol::Cl => "cl",
            Protocol::ClComms => "cl-comms",
        }
    }

    /// `template` configured for this protocol. Closed loop uses the
    /// template's controller (defaults if none); the communications variant
    /// uses the template's channel settings, or the non-ideal defaults when
    /// those are ideal.
    pub fn apply(self, template: &Scenario) -> Scenario {
        let mut s = template.clone();
        match self {
            Protocol::Ol => s.controller = None,
            Protocol::Cl | Protocol::ClComms => {
                let mut c = s.controller.clone().unwrap_or_default();
                c.enabled = true;
                s.controller = Some(c);
                s.comms = if self == Protocol::Cl {
                    CommsConfig::ideal()
                } else if template.comms.is_ideal() {
                    CommsConfig::nonideal()
                } else {
                    template.comms
                };
            }
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Contingency {
    pub id: String,
    pub class: EventClass,
    pub events: Vec<ScheduledEvent>,
}

/// One trip per machine, one bolted fault per branch end cleared by opening
/// the branch after `fault_cycles`, and one 50% loss per load bus. Branch
/// outages that would split the network are left out.
pub fn auto_contingencies(case: &Case, start: f64, fault_cycles: f64) -> Vec<Contingency> {
    let mut out = Vec::new();
    for m in &case.machines {
        out.push(Contingency {
            id: format!("trip-{}", m.id),
            class: EventClass::GenTrip,
            events: vec![ScheduledEvent::at(start, Event::TripMachine { machine: m.id.clone() })],
        });
    }
    let topo = Topology::from_case(case);
    let clear = start + fault_cycles / case.f0;
    for (k, br) in case.branches.iter().enumerate() {
        if !br.in_service || !case.connected_without(&topo, Some(k)) {
            continue;
        }
        for end in [br.from, br.to] {
            let bus = case.buses[end].id;
            out.push(Contingency {
                id: format!("fault-{}-{}", br.id, bus),
                class: EventClass::Fault,
                events: vec![
                    ScheduledEvent::at(
                        start,
                        Event::Fault {
                            bus,
                            branch: Some(br.id.clone()),
                        },
                    ),
                    ScheduledEvent::at(clear, Event::ClearFault { bus, keep_branch: false }),
                ],
            });
        }
    }
    for b in &case.buses {
        if b.p_load != 0.0 || b.q_load != 0.0 {
            out.push(Contingency {
                id: format!("loadloss-{}", b.id),
                class: EventClass::LossOfLoad,
                events: vec![ScheduledEvent::at(start, Event::LoadLoss { bus: b.id, fraction: 0.5 })],
            });
        }
    }
    out
}

fn fnv1a(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Seed of one contingency, fixed by the master seed and the contingency id.
pub fn contingency_seed(master: u64, id: &str) -> u64 {
    let mut z = (master ^ fnv1a(id)).wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Debug)]
pub struct SweepSpec {
    pub template: Scenario,
    pub contingencies: Vec<Contingency>,
    pub protocols: Vec<Protocol>,
    pub jobs: usize,
    pub master_seed: u64,
    /// Keep trajectories in the result (for writing per-contingency CSVs).
    pub keep_trajectories: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunResult {
    pub protocol: Protocol,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary: Option<TrajectorySummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip)]
    pub trajectory: Option<Trajectory>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ContingencyResult {
    pub id: String,
    pub class: EventClass,
    pub seed: u64,
    pub runs: Vec<RunResult>,
    /// Open loop against each closed-loop protocol that ran.
    pub first_swing: Vec<(Protocol, FirstSwingReport)>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepReport {
    pub master_seed: u64,
    pub protocols: Vec<Protocol>,
    /// Summary rows per closed-loop protocol, open loop as the baseline.
    pub tables: Vec<(String, Vec<SummaryRow>)>,
    pub contingencies: Vec<ContingencyResult>,
}

fn run_one(spec: &SweepSpec, c: &Contingency) -> ContingencyResult {
    let seed = contingency_seed(spec.master_seed, &c.id);
    let mut base = spec.template.clone();
    base.events.extend(c.events.iter().cloned());
    base.seed = seed;
    let t_dist = base.disturbance_time().unwrap_or(0.0);
    let mut runs = Vec::new();
    let mut errors = Vec::new();
    for p in &spec.protocols {
        match simulate(&p.apply(&base)) {
            Ok(traj) => runs.push(RunResult {
                protocol: *p,
                summary: Some(summarize_trajectory(&traj)),
                error: None,
                trajectory: Some(traj),
            }),
            Err(e) => runs.push(RunResult {
                protocol: *p,
                summary: None,
                error: Some(e.to_string()),
                trajectory: None,
            }),
        }
    }
    let mut first_swing = Vec::new();
    let open = runs
        .iter()
        .find(|r| r.protocol == Protocol::Ol)
        .and_then(|r| r.trajectory.as_ref());
    if let Some(open) = open {
        for r in runs.iter().filter(|r| r.protocol != Protocol::Ol) {
            if let Some(closed) = &r.trajectory {
                match compare_first_swings(open, closed, t_dist) {
                    Ok(rep) => first_swing.push((r.protocol, rep)),
                    Err(e) => errors.push(format!("{}: {e}", r.protocol.name())),
                }
            }
        }
    }
    if !spec.keep_trajectories {
        for r in runs.iter_mut() {
            r.trajectory = None;
        }
    }
    ContingencyResult {
        id: c.id.clone(),
        class: c.class,
        seed,
        runs,
        first_swing,
        errors,
    }
}

/// Runs every contingency under every protocol. Results do not depend on
/// `jobs`.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepReport> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(spec.jobs.max(1)).build()?;
    let contingencies: Vec<ContingencyResult> =
        pool.install(|| spec.contingencies.par_iter().map(|c| run_one(spec, c)).collect());
    let mut tables = Vec::new();
    for p in spec.protocols.iter().filter(|p| **p != Protocol::Ol) {
        let reports: Vec<(EventClass, &FirstSwingReport)> = contingencies
            .iter()
            .flat_map(|c| c.first_swing.iter().filter(|(q, _)| q == p).map(move |(_, r)| (c.class, r)))
            .collect();
        tables.push((p.name().to_string(), summarize(&reports)));
    }
    Ok(SweepReport {
        master_seed: spec.master_seed,
        protocols: spec.protocols.clone(),
        tables,
        contingencies,
    })
}

/// `summary.json` and `summary.csv` at the root, one directory per
/// contingency with its results (and trajectories when kept).
pub fn write_sweep(dir: &Path, report: &SweepReport) -> Result<()> {
    create_dir(dir)?;
    write_json(&dir.join("summary.json"), report)?;
    write_summary_csv(&dir.join("summary.csv"), &report.tables)?;
    for c in &report.contingencies {
        let sub = dir.join(&c.id);
        create_dir(&sub)?;
        write_json(&sub.join("result.json"), c)?;
        for r in &c.runs {
            if let Some(t) = &r.trajectory {
                let f = std::fs::File::create(sub.join(format!("{}.csv", r.protocol.name())))?;
                write_trajectory_csv(t, std::io::BufWriter::new(f))?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::bundled_case;

    #[test]
    fn seeds_depend_on_id_and_master() {
        assert_eq!(contingency_seed(1, "a"), contingency_seed(1, "a"));
        assert_ne!(contingency_seed(1, "a"), contingency_seed(1, "b"));
        assert_ne!(contingency_seed(1, "a"), contingency_seed(2, "a"));
        assert_eq!(fnv1a(""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a("a"), 0xaf63_dc4c_8601_ec8c);
    }

    #[test]
    fn auto_contingencies_on_ninebus() {
        let case = bundled_case("ninebus").unwrap();
        let cs = auto_contingencies(&case, 0.1, 6.0);
        let count = |k| cs.iter().filter(|c| c.class == k).count();
        assert_eq!(count(EventClass::GenTrip), 3);
        // step-up transformers are radial; six lines, two ends each
        assert_eq!(count(EventClass::Fault), 12);
        assert_eq!(count(EventClass::LossOfLoad), 3);
        let f = cs.iter().find(|c| c.id == "fault-L57-7").unwrap();
        assert!((f.events[1].time.unwrap() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn protocol_configuration() {
        let s = Scenario::new(bundled_case("smib").unwrap());
        assert!(!Protocol::Ol.apply(&s).closed_loop());
        let cl = Protocol::Cl.apply(&s);
        assert!(cl.closed_loop() && cl.comms.is_ideal());
        let cc = Protocol::ClComms.apply(&s);
        assert_eq!(cc.comms, CommsConfig::nonideal());
    }
}
