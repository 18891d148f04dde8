//! Acceptance criteria. Runs without the libtest harness so that every
//! criterion prints one PASS/FAIL line. `ACCEPTANCE_ONLY=4,6` selects
//! criteria; `ACCEPTANCE_STRICT=1` exits non-zero when any fails.

use std::f64::consts::PI;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use synctrack::io::bundled_case;
use synctrack::sweep::{auto_contingencies, run_sweep, write_sweep, Protocol, SweepSpec};
use synctrack_core::analysis::{cct_search, coi_accelerating_power, Bisection, equal_area, fault_stability, FaultSpec};
use synctrack_core::comms::CommsConfig;
use synctrack_core::engine::{simulate, Scenario, ScheduledEvent, Stability, Trajectory};
use synctrack_core::linear::{eig_sweep, ltv_coefficients, ClosedLoopModel, LinearError, ModeClass, Smib};
use synctrack_core::netmodel::Event;
use synctrack_core::wacs::{ControllerConfig, LeadLagConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn ninebus(t_end: f64) -> Scenario {
    let mut s = Scenario::new(bundled_case("ninebus").unwrap());
    s.integration.t_end = t_end;
    s
}

fn closed(mut s: Scenario, cfg: ControllerConfig) -> Scenario {
    s.controller = Some(cfg);
    s
}

/// Fault at bus 7 on the bus-7 end of line 5-7, cleared by opening the line.
fn cct_fault() -> FaultSpec {
    FaultSpec::bus_fault(0.1, 7, Some("L57".into()))
}

fn cct_template() -> Scenario {
    ninebus(5.0)
}

fn c1() -> Outcome {
    let smib = Smib {
        h: 3.5,
        d: 1.0,
        e: 1.12,
        v: 1.0,
        x: 0.55,
        omega_b: 2.0 * PI * 60.0,
    };
    let n = 64;
    let mut worst = 0.0f64;
    for i in 0..n {
        // offset grid keeps clear of the zero of cos at pi/2
        let delta = (i as f64 + 0.5) * PI / n as f64;
        for j in 0..=10 {
            let omega = 0.95 + 0.01 * j as f64;
            let (_, t) = ltv_coefficients(&smib, &[delta, omega], &[0.9], 0, 1, smib.h).unwrap();
            let exact = smib.e * smib.v / smib.x * delta.cos() / omega;
            worst = worst.max(((t - exact) / exact).abs());
        }
    }
    let (_, t_half) = ltv_coefficients(&smib, &[PI / 2.0, 1.0], &[0.9], 0, 1, smib.h).unwrap();
    outcome(
        worst < 1e-6 && t_half.abs() < 1e-8,
        format!("max relative error {worst:.2e}, |T(pi/2)| = {:.1e}", t_half.abs()),
    )
}

fn c2() -> Outcome {
    let s = closed(ninebus(20.0), ControllerConfig::default());
    let traj = simulate(&s).unwrap();
    let dw = traj.omega.iter().flatten().fold(0.0f64, |a, w| a.max((w - 1.0).abs()));
    let ps = traj.p_s.iter().flatten().fold(0.0f64, |a, p| a.max(p.abs()));
    outcome(dw < 1e-8 && ps < 1e-8, format!("max|w-1| = {dw:.1e}, max|p_s| = {ps:.1e}"))
}

fn bundled_trajectories() -> Vec<(String, Trajectory)> {
    let mut out = Vec::new();
    let mut smib = Scenario::new(bundled_case("smib").unwrap());
    smib.integration.t_end = 3.0;
    smib.events = FaultSpec::bus_fault(0.1, 1, None).events(0.1);
    out.push(("smib fault".into(), simulate(&smib).unwrap()));
    let mut two = Scenario::new(bundled_case("two_machine").unwrap());
    two.integration.t_end = 3.0;
    two.events = FaultSpec::bus_fault(0.1, 3, None).events(0.1);
    out.push(("two-machine fault".into(), simulate(&two).unwrap()));
    let mut trip = ninebus(5.0);
    trip.events = vec![ScheduledEvent::at(0.5, Event::TripMachine { machine: "G3".into() })];
    out.push(("ninebus trip ol".into(), simulate(&trip).unwrap()));
    let mut f = closed(ninebus(5.0), ControllerConfig::default());
    f.events = cct_fault().events(0.1);
    f.comms = CommsConfig::nonideal();
    f.seed = 7;
    out.push(("ninebus fault cl-comms".into(), simulate(&f).unwrap()));
    let mut ll = closed(ninebus(5.0), ControllerConfig::default());
    ll.events = vec![ScheduledEvent::at(0.2, Event::LoadLoss { bus: 5, fraction: 0.5 })];
    out.push(("ninebus load loss cl".into(), simulate(&ll).unwrap()));
    out
}

fn c3() -> Outcome {
    let mut worst = 0.0f64;
    let mut samples = 0;
    for (_, traj) in bundled_trajectories() {
        let pa = coi_accelerating_power(&traj);
        for k in 0..traj.len() {
            let sum: f64 = pa.iter().map(|p| p[k]).sum();
            worst = worst.max(sum.abs());
            samples += 1;
        }
    }
    outcome(worst < 1e-12, format!("max |sum dPa| = {worst:.1e} over {samples} samples"))
}

fn two_machine_energy(dt: f64) -> (f64, f64) {
    let mut s = Scenario::new(bundled_case("two_machine").unwrap());
    s.integration.t_end = 3.0;
    s.integration.dt = Some(dt);
    s.events = FaultSpec::bus_fault(0.1, 3, None).events(5.0 / 60.0);
    let traj = simulate(&s).unwrap();
    let rep = equal_area(&traj, 0, 0.1).unwrap();
    (rep.residual, rep.peak_kinetic)
}

fn c4() -> Outcome {
    let dt = 1.0 / 60.0;
    let (r1, peak) = two_machine_energy(dt);
    let (r2, _) = two_machine_energy(dt / 2.0);
    let rel = r1 / peak;
    let gain = r1 / r2;
    outcome(
        rel < 0.01 && gain >= 4.0,
        format!("residual {:.3}% of peak KE at dt, improvement {gain:.2}x at dt/2", 100.0 * rel),
    )
}

fn final_state(dt: f64) -> Vec<f64> {
    let mut s = ninebus(2.0);
    s.integration.dt = Some(dt);
    s.integration.network_tol = 1e-13;
    s.events = vec![ScheduledEvent::at(0.0, Event::LoadLoss { bus: 5, fraction: 0.5 })];
    let traj = simulate(&s).unwrap();
    let k = traj.len() - 1;
    traj.delta
        .iter()
        .chain(&traj.omega)
        .chain(&traj.p_mech)
        .map(|x| x[k])
        .collect()
}

fn c5() -> Outcome {
    let dt = 0.02;
    let reference = final_state(dt / 8.0);
    let err = |x: Vec<f64>| x.iter().zip(&reference).fold(0.0f64, |a, (p, q)| a.max((p - q).abs()));
    let e1 = err(final_state(dt));
    let e2 = err(final_state(dt / 2.0));
    let ratio = e1 / e2;
    outcome(
        (12.0..=20.0).contains(&ratio),
        format!("error {e1:.2e} at dt, {e2:.2e} at dt/2, ratio {ratio:.2}"),
    )
}

/// Open-loop and closed-loop bisections of the same fault.
fn cct_pair() -> (Bisection, Bisection) {
    let ol = cct_search(&cct_template(), &cct_fault(), 0.02, 0.5).unwrap();
    let cl = cct_search(&closed(cct_template(), ControllerConfig::default()), &cct_fault(), 0.02, 0.5).unwrap();
    (ol, cl)
}

fn c6(ol: f64, cl: f64) -> Outcome {
    let f0 = 60.0;
    outcome(
        (cl - ol) * f0 >= 1.0,
        format!(
            "CCT open {:.2} cycles, closed {:.2} cycles, gain {:+.2} cycles",
            ol * f0,
            cl * f0,
            (cl - ol) * f0
        ),
    )
}

fn locus(param: &str, base: ControllerConfig, grid: &[f64]) -> synctrack_core::linear::SweepResult {
    let template = ninebus(5.0);
    eig_sweep(
        |p| {
            let mut cfg = base.clone();
            match param {
                "alpha1" => cfg.alpha1 = p,
                _ => cfg.alpha2 = p,
            }
            ClosedLoopModel::new(&closed(template.clone(), cfg), None)
                .map_err(|e| LinearError::Setup(e.to_string()))?
                .linearize()
        },
        grid,
    )
}

/// Default tuning plus a path-1 lead offsetting the sensor and converter lags
/// near the local-mode frequencies.
fn compensated() -> ControllerConfig {
    ControllerConfig {
        leadlag1: vec![LeadLagConfig {
            center_hz: 1.5,
            lead_deg: 30.0,
            stages: 1,
        }],
        ..ControllerConfig::default()
    }
}

fn c7() -> Outcome {
    let grid1: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
    let base = ControllerConfig {
        alpha2: 0.0,
        ..compensated()
    };
    let sw = locus("alpha1", base, &grid1);
    let mut part_a = None;
    for (t, l) in sw.loci.iter().enumerate() {
        if !matches!(sw.track_class[t], ModeClass::InterArea | ModeClass::Local) {
            continue;
        }
        let Some(z) = l.iter().copied().collect::<Option<Vec<_>>>() else { continue };
        if z[0].im <= 0.0 {
            continue;
        }
        let im_up = z.windows(2).all(|w| w[1].im > w[0].im);
        let re_ok = z.windows(2).all(|w| w[1].re <= w[0].re + 1e-9);
        if im_up && re_ok {
            part_a = Some(format!(
                "alpha1: mode {:.3}->{:.3} Hz, Re {:.4}->{:.4}",
                z[0].im / (2.0 * PI),
                z[10].im / (2.0 * PI),
                z[0].re,
                z[10].re
            ));
            break;
        }
    }

    let grid2 = [0.0, 0.05, 0.1];
    let sw2 = locus("alpha2", compensated(), &grid2);
    let cats: Vec<_> = sw2.catalogs.iter().map(|c| c.as_ref().unwrap()).collect();
    let fr0 = cats[0].frequency_regulation().map(|m| m.eigenvalue);
    let fr1 = cats[2].frequency_regulation().map(|m| m.eigenvalue);
    let fr_moved = match (fr0, fr1) {
        (Some(a), Some(b)) => (a - b).norm() > 1e-3 * a.norm(),
        _ => false,
    };
    let em = |c: &synctrack_core::linear::ModeCatalog| {
        let mut f: Vec<f64> = c.electromechanical().iter().map(|m| m.freq_hz).collect();
        f.sort_by(f64::total_cmp);
        f
    };
    let (e0, e1) = (em(cats[0]), em(cats[2]));
    let worst = if e0.len() == e1.len() && !e0.is_empty() {
        e0.iter().zip(&e1).map(|(a, b)| ((b - a) / a).abs()).fold(0.0, f64::max)
    } else {
        f64::INFINITY
    };
    let pass = part_a.is_some() && fr_moved && worst < 0.01;
    let show = |z: Option<(f64, f64)>| z.map_or("none".to_string(), |(re, im)| format!("{re:.4}{im:+.4}j"));
    outcome(
        pass,
        format!(
            "{}; alpha2: FR mode {} -> {}, EM frequency change {:.3}%",
            part_a.unwrap_or_else(|| "alpha1: no qualifying mode".into()),
            show(fr0.map(|z| (z.re, z.im))),
            show(fr1.map(|z| (z.re, z.im))),
            100.0 * worst
        ),
    )
}

fn c8() -> Outcome {
    let mut traces = Vec::new();
    let mut nadirs = Vec::new();
    for a2 in [0.0, 0.05, 0.1] {
        let cfg = ControllerConfig {
            alpha1: 0.0,
            alpha2: a2,
            gain: 5.0,
            ..ControllerConfig::default()
        };
        let mut s = closed(ninebus(20.0), cfg);
        s.events = vec![ScheduledEvent::at(0.5, Event::TripMachine { machine: "G3".into() })];
        let traj = simulate(&s).unwrap();
        // largest separation among machines still online
        traces.push((0..traj.len()).map(|k| traj.separation(k)).collect::<Vec<_>>());
        nadirs.push(traj.coi_freq.iter().copied().fold(f64::INFINITY, f64::min));
    }
    let dev = traces[1..]
        .iter()
        .flat_map(|t| t.iter().zip(&traces[0]).map(|(a, b)| (a - b).abs()))
        .fold(0.0f64, f64::max)
        .to_degrees();
    let shallower = nadirs.windows(2).all(|w| w[1] > w[0]);
    outcome(
        dev < 0.1 && shallower,
        format!("angle-difference deviation {dev:.3} deg, nadirs {nadirs:.4?} Hz"),
    )
}

fn sweep_spec(jobs: usize, protocols: Vec<Protocol>) -> SweepSpec {
    let template = ninebus(5.0);
    SweepSpec {
        contingencies: auto_contingencies(&template.case, 0.1, 6.0),
        template,
        protocols,
        jobs,
        master_seed: 2024,
        keep_trajectories: false,
    }
}

fn c9() -> Outcome {
    let report = run_sweep(&sweep_spec(4, Protocol::ALL.to_vec())).unwrap();
    let table = |p: &str| report.tables.iter().find(|(q, _)| q == p).unwrap().1.clone();
    let cl = table("cl");
    let cc = table("cl-comms");
    let total = |rows: &[synctrack_core::analysis::SummaryRow]| rows.last().unwrap().clone();
    let (t_cl, t_cc) = (total(&cl), total(&cc));
    let layout = cl.len() >= 2 && cl.iter().all(|r| r.first_swings > 0) && t_cl.event == "Total";
    outcome(
        layout && t_cc.improvement_rate_pct >= 90.0,
        format!(
            "{} first swings; cl-comms improved {:.1}% (mean decrease {:.1}%), ideal cl improved {:.1}% (mean decrease {:.1}%)",
            t_cc.first_swings,
            t_cc.improvement_rate_pct,
            t_cc.mean_decrease_pct,
            t_cl.improvement_rate_pct,
            t_cl.mean_decrease_pct
        ),
    )
}

fn delayed_stable_draws(duration: f64) -> usize {
    (0..10u64)
        .filter(|seed| {
            let mut s = closed(cct_template(), ControllerConfig::default());
            s.comms = CommsConfig::nonideal();
            s.seed = *seed;
            fault_stability(&s, &cct_fault(), duration).unwrap() == Stability::Stable
        })
        .count()
}

fn c10(ol: &Bisection, cl: &Bisection) -> Outcome {
    // shortest duration found to lose synchronism in open loop
    let duration = ol.unstable;
    let open = fault_stability(&cct_template(), &cct_fault(), duration).unwrap();
    let closed_ideal = fault_stability(&closed(cct_template(), ControllerConfig::default()), &cct_fault(), duration).unwrap();
    let stable = delayed_stable_draws(duration);
    // reported only: one cycle past the open-loop critical time
    let edge = (ol.value + 1.0 / 60.0).min(cl.value);
    let edge_stable = delayed_stable_draws(edge);
    outcome(
        stable == 10 && open == Stability::Unstable && closed_ideal == Stability::Stable,
        format!(
            "{:.3}-cycle fault: open loop {:?}, closed loop {:?}, with delays stable in {stable}/10 draws; \
             at {:.3} cycles {edge_stable}/10",
            duration * 60.0,
            open,
            closed_ideal,
            edge * 60.0
        ),
    )
}

fn c11() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let protocols = vec![Protocol::Ol, Protocol::ClComms];
    let mut files = Vec::new();
    for jobs in [1, 4] {
        let report = run_sweep(&sweep_spec(jobs, protocols.clone())).unwrap();
        let out = dir.path().join(format!("jobs{jobs}"));
        write_sweep(&out, &report).unwrap();
        files.push([
            std::fs::read(out.join("summary.json")).unwrap(),
            std::fs::read(out.join("summary.csv")).unwrap(),
        ]);
    }
    outcome(files[0] == files[1], format!("summary.json {} bytes", files[0][0].len()))
}

static CCT: OnceLock<(Bisection, Bisection)> = OnceLock::new();

fn cct_cached() -> &'static (Bisection, Bisection) {
    CCT.get_or_init(cct_pair)
}

type Criterion = (usize, &'static str, f64, fn() -> Outcome);

const CRITERIA: [Criterion; 11] = [
    (1, "synchronizing coefficient oracle", 1.0, c1),
    (2, "equilibrium preservation", 5.0, c2),
    (3, "COI accelerating power sums to zero", f64::INFINITY, c3),
    (4, "energy identity", f64::INFINITY, c4),
    (5, "RK4 order", f64::INFINITY, c5),
    (6, "critical clearing time improvement", 120.0, || {
        let (ol, cl) = cct_cached();
        c6(ol.value, cl.value)
    }),
    (7, "root-locus pattern", f64::INFINITY, c7),
    (8, "frequency-path invariance", f64::INFINITY, c8),
    (9, "first-swing improvement", f64::INFINITY, c9),
    (10, "robustness to communication delays", f64::INFINITY, || {
        let (ol, cl) = cct_cached();
        c10(ol, cl)
    }),
    (11, "sweep determinism", f64::INFINITY, c11),
];

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let selected: Vec<Criterion> = CRITERIA
        .iter()
        .copied()
        .filter(|c| only.as_ref().is_none_or(|o| o.contains(&c.0)))
        .collect();
    let t0 = Instant::now();
    let results: Vec<(Criterion, Outcome, Duration)> = std::thread::scope(|scope| {
        let handles: Vec<_> = selected
            .iter()
            .map(|c| {
                let f = c.3;
                scope.spawn(move || {
                    let t = Instant::now();
                    let o = f();
                    (o, t.elapsed())
                })
            })
            .collect();
        selected
            .iter()
            .zip(handles)
            .map(|(c, h)| {
                let (o, d) = h.join().unwrap();
                (*c, o, d)
            })
            .collect()
    });
    let mut failed = 0;
    for ((n, name, budget, _), o, d) in &results {
        let over = d.as_secs_f64() > *budget;
        let pass = o.pass && !over;
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {n:>2} {}: {name}: {} [{:.2} s{}]",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            d.as_secs_f64(),
            if over { ", over time budget" } else { "" }
        );
    }
    println!(
        "{} of {} criteria passed in {:.1} s",
        results.len() - failed,
        results.len(),
        t0.elapsed().as_secs_f64()
    );
    // failures are reported above; ACCEPTANCE_STRICT=1 also turns them into
    // a failing exit status
    if failed > 0 && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
