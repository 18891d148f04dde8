//! Command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use synctrack_core::analysis::{cct_search, proportional_direction, transfer_limit_search, FaultSpec};
use synctrack_core::engine::{simulate, Scenario};
use synctrack_core::linear::{eig_sweep, log_grid, modal_analysis, ClosedLoopModel};
use synctrack_core::netmodel::solve_powerflow;

use crate::export::{
    create_dir, summarize_trajectory, write_bode_csv, write_json, write_linear_model, write_loci_csv,
    write_powerflow, write_trajectory_csv,
};
use crate::io::{load_case, load_scenario};
use crate::sweep::{auto_contingencies, run_sweep, write_sweep, Contingency, Protocol, SweepSpec};

#[derive(Parser, Debug)]
#[command(name = "synctrack", version, about = "Transient-stability simulation with wide-area synchronizing control")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Where the scenario comes from. A bare case runs event-free with
/// default settings.
#[derive(Args, Debug, Clone)]
pub struct Input {
    /// Case file or bundled case name (smib, two_machine, ninebus).
    #[arg(long)]
    pub case: Option<PathBuf>,
    /// Scenario file; `--case` overrides its case.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Master seed; overrides the scenario's seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Solve the power flow of a case.
    Powerflow {
        #[arg(long)]
        case: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a time-domain simulation.
    Simulate {
        #[command(flatten)]
        input: Input,
        #[arg(long, value_enum)]
        protocol: Option<Protocol>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Linearize about the initial equilibrium and list the modes.
    Linearize {
        #[command(flatten)]
        input: Input,
        #[arg(long, value_enum, default_value = "cl")]
        protocol: Protocol,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Open-loop frequency response from one converter's power reference
    /// to its controller output.
    Bode {
        #[command(flatten)]
        input: Input,
        /// Converter id of the broken loop.
        #[arg(long)]
        actuator: String,
        #[arg(long, default_value_t = 1e-3)]
        f_min: f64,
        #[arg(long, default_value_t = 10.0)]
        f_max: f64,
        #[arg(long, default_value_t = 200)]
        points: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Eigenvalue loci over a controller parameter grid.
    Rootlocus {
        #[command(flatten)]
        input: Input,
        #[arg(long, value_enum)]
        param: Param,
        /// `start:step:stop`
        #[arg(long)]
        grid: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Critical clearing time of a bus fault by bisection.
    Cct {
        #[command(flatten)]
        input: Input,
        #[arg(long, value_enum)]
        protocol: Option<Protocol>,
        /// Faulted bus, e.g. `bus7` or `7`.
        #[arg(long)]
        fault: String,
        /// Branch opened on clearing (at the faulted end).
        #[arg(long)]
        branch: Option<String>,
        /// `lo,hi` fault durations in seconds.
        #[arg(long)]
        bracket: String,
        #[arg(long, default_value_t = 0.1)]
        start: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Largest stable loading along a proportional load/generation increase.
    Limit {
        #[command(flatten)]
        input: Input,
        #[arg(long, value_enum)]
        protocol: Option<Protocol>,
        /// `lo,hi` loading increase in system pu.
        #[arg(long)]
        bracket: String,
        #[arg(long, default_value_t = 0.01)]
        tol: f64,
        /// Contingency fault bus; none checks power-flow feasibility only.
        #[arg(long)]
        fault: Option<String>,
        #[arg(long)]
        branch: Option<String>,
        #[arg(long, default_value_t = 6.0)]
        clear_cycles: f64,
        #[arg(long, default_value_t = 0.1)]
        start: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Contingency sweep under the open-loop / closed-loop protocols.
    Sweep {
        #[command(flatten)]
        input: Input,
        /// Protocols to run (repeatable); defaults to all three.
        #[arg(long, value_enum)]
        protocol: Vec<Protocol>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: PathBuf,
        /// JSON list of contingencies; generated from the case when absent.
        #[arg(long)]
        contingencies: Option<PathBuf>,
        #[arg(long, default_value_t = 6.0)]
        fault_cycles: f64,
        #[arg(long, default_value_t = 0.1)]
        start: f64,
        /// Also write each run's trajectory CSV.
        #[arg(long)]
        trajectories: bool,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Param {
    Alpha1,
    Alpha2,
    Gain,
}

enum Failure {
    Usage(anyhow::Error),
    Domain(anyhow::Error),
}

trait UsageContext<T> {
    fn usage(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> UsageContext<T> for Result<T, E> {
    fn usage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Usage(e.into()))
    }
}

trait DomainContext<T> {
    fn domain(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> DomainContext<T> for Result<T, E> {
    fn domain(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Domain(e.into()))
    }
}

fn scenario_from(input: &Input) -> anyhow::Result<Scenario> {
    let case = input.case.as_deref().map(load_case).transpose()?;
    let mut s = match (&input.scenario, case) {
        (Some(path), case) => load_scenario(path, case)?,
        (None, Some(case)) => Scenario::new(case),
        (None, None) => bail!("one of --case or --scenario is required"),
    };
    if let Some(seed) = input.seed {
        s.seed = seed;
    }
    Ok(s)
}

fn with_protocol(s: Scenario, p: Option<Protocol>) -> Scenario {
    match p {
        Some(p) => p.apply(&s),
        None => s,
    }
}

fn parse_pair(text: &str) -> anyhow::Result<(f64, f64)> {
    let (a, b) = text.split_once(',').ok_or_else(|| anyhow!("expected `lo,hi`, got `{text}`"))?;
    Ok((a.trim().parse()?, b.trim().parse()?))
}

/// `start:step:stop`, inclusive of `stop` within rounding.
pub fn parse_grid(text: &str) -> anyhow::Result<Vec<f64>> {
    let parts: Vec<f64> = text
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("grid `{text}`"))?;
    let [a, step, b] = parts[..] else {
        bail!("grid must be `start:step:stop`");
    };
    if !(step > 0.0) || b < a {
        bail!("grid needs a positive step and stop >= start");
    }
    let n = ((b - a) / step + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|k| a + k as f64 * step).collect())
}

fn parse_bus(text: &str) -> anyhow::Result<u32> {
    let digits = text.trim_start_matches(|c: char| c.is_ascii_alphabetic() || c == '-' || c == '_');
    digits.parse().with_context(|| format!("bus `{text}`"))
}

fn emit(out: &Option<PathBuf>, name: &str, value: &serde_json::Value) -> anyhow::Result<()> {
    if let Some(dir) = out {
        create_dir(dir)?;
        write_json(&dir.join(name), value)?;
    }
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

fn out_dir(out: &Option<PathBuf>) -> anyhow::Result<Option<&Path>> {
    if let Some(dir) = out {
        create_dir(dir)?;
    }
    Ok(out.as_deref())
}

fn execute(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Powerflow { case, out } => {
            let case = load_case(&case).usage()?;
            let pf = solve_powerflow(&case).domain()?;
            if let Some(dir) = out_dir(&out).usage()? {
                write_powerflow(dir, &case, &pf).usage()?;
            }
            let buses: Vec<_> = case
                .buses
                .iter()
                .zip(&pf.voltage)
                .map(|(b, v)| json!({ "bus": b.id, "vm": v.norm(), "va_deg": v.arg().to_degrees() }))
                .collect();
            println!(
                "{}",
                json!({ "iterations": pf.iterations, "max_mismatch": pf.max_mismatch, "buses": buses })
            );
        }
        Command::Simulate { input, protocol, out } => {
            let s = with_protocol(scenario_from(&input).usage()?, protocol);
            let traj = simulate(&s).domain()?;
            let summary = serde_json::to_value(summarize_trajectory(&traj)).usage()?;
            if let Some(dir) = out_dir(&out).usage()? {
                let f = std::fs::File::create(dir.join("trajectory.csv")).usage()?;
                write_trajectory_csv(&traj, std::io::BufWriter::new(f)).usage()?;
            }
            emit(&out, "summary.json", &summary).usage()?;
        }
        Command::Linearize { input, protocol, out } => {
            let s = protocol.apply(&scenario_from(&input).usage()?);
            let model = ClosedLoopModel::new(&s, None).domain()?.linearize().domain()?;
            let catalog = modal_analysis(&model).domain()?;
            if let Some(dir) = out_dir(&out).usage()? {
                write_linear_model(dir, &model, &catalog).usage()?;
            }
            let modes: Vec<_> = catalog
                .modes
                .iter()
                .filter(|m| m.eigenvalue.im >= 0.0)
                .map(|m| {
                    json!({ "re": m.eigenvalue.re, "im": m.eigenvalue.im, "freq_hz": m.freq_hz,
                            "damping": m.damping, "class": m.class, "dominant": m.dominant })
                })
                .collect();
            println!("{}", json!({ "states": model.state_labels.len(), "residual": model.residual, "modes": modes }));
        }
        Command::Bode {
            input,
            actuator,
            f_min,
            f_max,
            points,
            out,
        } => {
            let s = Protocol::Cl.apply(&scenario_from(&input).usage()?);
            let cfg = s.controller.clone().unwrap_or_default();
            let ids: Vec<String> = match &cfg.actuators {
                Some(list) => list.clone(),
                None => s.case.ibrs.iter().map(|u| u.id.clone()).collect(),
            };
            let c = ids
                .iter()
                .position(|id| *id == actuator)
                .ok_or_else(|| anyhow!("`{actuator}` is not a controlled converter"))
                .usage()?;
            if !(f_min > 0.0 && f_max > f_min && points >= 2) {
                return Err(Failure::Usage(anyhow!("need 0 < f_min < f_max and at least 2 points")));
            }
            let model = ClosedLoopModel::new(&s, Some(c)).domain()?.linearize().domain()?;
            let i = model.input_index(&format!("pref_{actuator}")).expect("input exists");
            let o = model.output_index(&format!("ps_{actuator}")).expect("output exists");
            let freqs = log_grid(f_min, f_max, points);
            let dir = out.clone().unwrap_or_else(|| PathBuf::from("."));
            create_dir(&dir).usage()?;
            write_bode_csv(&dir.join("bode.csv"), &model, i, o, &freqs).usage()?;
            println!("{}", json!({ "file": dir.join("bode.csv"), "points": freqs.len() }));
        }
        Command::Rootlocus { input, param, grid, out } => {
            let s = Protocol::Cl.apply(&scenario_from(&input).usage()?);
            let grid = parse_grid(&grid).usage()?;
            let sweep = eig_sweep(
                |p| {
                    let mut t = s.clone();
                    let c = t.controller.as_mut().expect("closed loop");
                    match param {
                        Param::Alpha1 => c.alpha1 = p,
                        Param::Alpha2 => c.alpha2 = p,
                        Param::Gain => c.gain = p,
                    }
                    ClosedLoopModel::new(&t, None)
                        .map_err(|e| synctrack_core::linear::LinearError::Setup(e.to_string()))?
                        .linearize()
                },
                &grid,
            );
            let dir = out.clone().unwrap_or_else(|| PathBuf::from("."));
            create_dir(&dir).usage()?;
            write_loci_csv(&dir.join("loci.csv"), &sweep).usage()?;
            let failed: Vec<f64> = sweep
                .grid
                .iter()
                .zip(&sweep.catalogs)
                .filter(|(_, c)| c.is_err())
                .map(|(p, _)| *p)
                .collect();
            println!("{}", json!({ "file": dir.join("loci.csv"), "grid": sweep.grid, "failed": failed }));
        }
        Command::Cct {
            input,
            protocol,
            fault,
            branch,
            bracket,
            start,
            out,
        } => {
            let s = with_protocol(scenario_from(&input).usage()?, protocol);
            let (lo, hi) = parse_pair(&bracket).usage()?;
            let spec = FaultSpec::bus_fault(start, parse_bus(&fault).usage()?, branch);
            let b = cct_search(&s, &spec, lo, hi).domain()?;
            let value = json!({
                "cct_s": b.value,
                "cct_cycles": b.value * s.case.f0,
                "first_unstable_s": b.unstable,
                "evaluations": b.evaluations,
            });
            emit(&out, "cct.json", &value).usage()?;
        }
        Command::Limit {
            input,
            protocol,
            bracket,
            tol,
            fault,
            branch,
            clear_cycles,
            start,
            out,
        } => {
            let s = with_protocol(scenario_from(&input).usage()?, protocol);
            let (lo, hi) = parse_pair(&bracket).usage()?;
            let events = match fault {
                Some(f) => FaultSpec::bus_fault(start, parse_bus(&f).usage()?, branch).events(clear_cycles / s.case.f0),
                None => Vec::new(),
            };
            let dir = proportional_direction(&s.case);
            let limit = transfer_limit_search(&s, &dir, &events, lo, hi, tol).domain()?;
            emit(&out, "limit.json", &json!({ "limit_pu": limit, "limit_mw": limit * s.case.base_mva })).usage()?;
        }
        Command::Sweep {
            input,
            protocol,
            jobs,
            out,
            contingencies,
            fault_cycles,
            start,
            trajectories,
        } => {
            let template = scenario_from(&input).usage()?;
            let list: Vec<Contingency> = match contingencies {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).usage()?;
                    serde_json::from_str(&text).usage()?
                }
                None => auto_contingencies(&template.case, start, fault_cycles),
            };
            let protocols = if protocol.is_empty() { Protocol::ALL.to_vec() } else { protocol };
            let spec = SweepSpec {
                master_seed: template.seed,
                template,
                contingencies: list,
                protocols,
                jobs,
                keep_trajectories: trajectories,
            };
            let report = run_sweep(&spec).domain()?;
            write_sweep(&out, &report).usage()?;
            println!("{}", json!({ "out": out, "contingencies": report.contingencies.len(), "tables": report.tables }));
        }
    }
    Ok(())
}

/// Runs the command line and returns the process exit code: 0 on success,
/// 1 for domain failures, 2 for usage errors.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            2
        }
        Err(Failure::Domain(e)) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_arithmetic() {
        let g = parse_grid("0:0.1:1").unwrap();
        assert_eq!(g.len(), 11);
        assert!((g[10] - 1.0).abs() < 1e-12);
        assert_eq!(parse_grid("0:0.05:0.1").unwrap().len(), 3);
        assert!(parse_grid("0:0:1").is_err());
        assert!(parse_grid("1:0.1").is_err());
    }

    #[test]
    fn bus_and_pair_parsing() {
        assert_eq!(parse_bus("bus7").unwrap(), 7);
        assert_eq!(parse_bus("12").unwrap(), 12);
        assert!(parse_bus("bus").is_err());
        assert_eq!(parse_pair("0.05,0.4").unwrap(), (0.05, 0.4));
        assert!(parse_pair("0.05").is_err());
    }
}
