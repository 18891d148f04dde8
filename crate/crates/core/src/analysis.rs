//! Post-processing of trajectories: first-swing metrics and contingency
//! statistics, COI-frame accelerating power and energy, phase portraits,
//! and critical-clearing-time and transfer-limit searches.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::engine::{classify_stability, simulate, Scenario, ScheduledEvent, SimError, Stability, Trajectory};
use crate::netmodel::{BusKind, Event};

/// Below this (rad) a response counts as flat.
pub const SWING_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    #[error("unknown machine index {0}")]
    Machine(usize),
    #[error("trajectory has no samples at or after the disturbance")]
    Empty,
    #[error("invalid bracket: {0}")]
    Bracket(&'static str),
    #[error("power flow infeasible at the lower loading bound")]
    Infeasible,
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Machines online at every sample from index `k0` on.
fn persistent_machines(traj: &Trajectory, k0: usize) -> Vec<bool> {
    traj.online.iter().map(|o| o[k0..].iter().all(|b| *b)).collect()
}

fn sample_at(traj: &Trajectory, t: f64) -> usize {
    traj.time.iter().position(|s| *s >= t - 1e-12).unwrap_or(traj.len().saturating_sub(1))
}

/// Inertia-weighted mean of a per-machine series over a machine subset.
fn subset_mean(series: &[Vec<f64>], h: &[f64], set: &[bool], k: usize) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for m in 0..series.len() {
        if set[m] {
            num += h[m] * series[m][k];
            den += h[m];
        }
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Rotor-angle deviation of `machine` from its anchored COI-frame
/// trajectory, `(delta_i - delta_coi) - (delta_i - delta_coi)|_{t0}`. The
/// COI is taken over the machines that stay online from `t0` on.
pub fn delta_coi_frame(traj: &Trajectory, machine: usize, t0: f64) -> Result<Vec<f64>, AnalysisError> {
    if machine >= traj.delta.len() {
        return Err(AnalysisError::Machine(machine));
    }
    if traj.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let k0 = sample_at(traj, t0);
    let set = persistent_machines(traj, k0);
    let rel = |k: usize| traj.delta[machine][k] - subset_mean(&traj.delta, &traj.inertia, &set, k);
    let base = rel(k0);
    Ok((0..traj.len()).map(|k| rel(k) - base).collect())
}

/// Speed of `machine` relative to the COI of machines online from `t0` on.
pub fn omega_coi_frame(traj: &Trajectory, machine: usize, t0: f64) -> Result<Vec<f64>, AnalysisError> {
    if machine >= traj.omega.len() {
        return Err(AnalysisError::Machine(machine));
    }
    if traj.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let set = persistent_machines(traj, sample_at(traj, t0));
    Ok((0..traj.len())
        .map(|k| traj.omega[machine][k] - subset_mean(&traj.omega, &traj.inertia, &set, k))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FirstSwing {
    /// Magnitude of the first extremum (degrees); the largest magnitude seen
    /// when censored.
    pub magnitude_deg: f64,
    pub time: Option<f64>,
    /// No extremum before the end of the record.
    pub censored: bool,
}

/// First local extremum of a sampled signal after `t0`. Repeated time
/// stamps keep the last sample. The extremum is refined by a quadratic
/// through the three bracketing samples.
pub fn first_extremum(time: &[f64], x: &[f64], t0: f64) -> Result<FirstSwing, AnalysisError> {
    let mut t = Vec::new();
    let mut v = Vec::new();
    for (ti, xi) in time.iter().zip(x) {
        if *ti < t0 - 1e-12 {
            continue;
        }
        if t.last().is_some_and(|l: &f64| (ti - l).abs() <= 1e-12) {
            *v.last_mut().unwrap() = *xi;
        } else {
            t.push(*ti);
            v.push(*xi);
        }
    }
    if v.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let peak = v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    if peak < SWING_FLOOR {
        return Ok(FirstSwing {
            magnitude_deg: 0.0,
            time: None,
            censored: false,
        });
    }
    // direction of the last non-zero increment
    let mut dir = 0.0f64;
    for k in 1..v.len() {
        let d = v[k] - v[k - 1];
        if d == 0.0 {
            continue;
        }
        if dir != 0.0 && d.signum() != dir && v[k - 1].abs() >= SWING_FLOOR {
            let (m, p) = refine(&t, &v, k - 1);
            return Ok(FirstSwing {
                magnitude_deg: m.abs().to_degrees(),
                time: Some(p),
                censored: false,
            });
        }
        dir = d.signum();
    }
    Ok(FirstSwing {
        magnitude_deg: peak.to_degrees(),
        time: None,
        censored: true,
    })
}

fn refine(t: &[f64], v: &[f64], k: usize) -> (f64, f64) {
    if k == 0 || k + 1 >= v.len() {
        return (v[k], t[k]);
    }
    let (t0, t1, t2) = (t[k - 1], t[k], t[k + 1]);
    let (y0, y1, y2) = (v[k - 1], v[k], v[k + 1]);
    // divided differences
    let d01 = (y1 - y0) / (t1 - t0);
    let d12 = (y2 - y1) / (t2 - t1);
    let a = (d12 - d01) / (t2 - t0);
    if a == 0.0 {
        return (y1, t1);
    }
    let b = d01 - a * (t0 + t1);
    let ts = (-b / (2.0 * a)).clamp(t0, t2);
    let y = y0 + d01 * (ts - t0) + a * (ts - t0) * (ts - t1);
    (y, ts)
}

/// First swing of `machine` in the COI frame after `t_disturbance`.
pub fn first_swing(traj: &Trajectory, machine: usize, t_disturbance: f64) -> Result<FirstSwing, AnalysisError> {
    let dd = delta_coi_frame(traj, machine, t_disturbance)?;
    first_extremum(&traj.time, &dd, t_disturbance)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwingComparison {
    pub machine: String,
    pub open_loop_deg: f64,
    pub closed_loop_deg: f64,
    /// `100 (closed - open) / open`.
    pub change_pct: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FirstSwingReport {
    pub swings: Vec<SwingComparison>,
    /// Machines skipped because either run was censored, flat, or the
    /// machine left service.
    pub skipped: Vec<String>,
    pub improvement_rate_pct: f64,
    /// Mean percent decrease over the improved swings.
    pub mean_decrease_pct: f64,
}

impl FirstSwingReport {
    fn finish(mut self) -> Self {
        let (rate, mean) = rate_and_mean(self.swings.iter().map(|s| s.change_pct));
        self.improvement_rate_pct = rate;
        self.mean_decrease_pct = mean;
        self
    }
}

fn rate_and_mean(changes: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut n, mut improved, mut sum) = (0usize, 0usize, 0.0);
    for c in changes {
        n += 1;
        if c < 0.0 {
            improved += 1;
            sum -= c;
        }
    }
    let rate = if n > 0 { 100.0 * improved as f64 / n as f64 } else { 0.0 };
    let mean = if improved > 0 { sum / improved as f64 } else { 0.0 };
    (rate, mean)
}

/// Compares first swings of the machines that stay online in both runs.
pub fn compare_first_swings(
    open: &Trajectory,
    closed: &Trajectory,
    t_disturbance: f64,
) -> Result<FirstSwingReport, AnalysisError> {
    let mut report = FirstSwingReport::default();
    let ko = sample_at(open, t_disturbance);
    let kc = sample_at(closed, t_disturbance);
    let on_o = persistent_machines(open, ko);
    let on_c = persistent_machines(closed, kc);
    for m in 0..open.machine_ids.len() {
        let id = open.machine_ids[m].clone();
        if !(on_o[m] && on_c[m]) {
            report.skipped.push(id);
            continue;
        }
        let a = first_swing(open, m, t_disturbance)?;
        let b = first_swing(closed, m, t_disturbance)?;
        if a.censored || b.censored || a.magnitude_deg == 0.0 {
            report.skipped.push(id);
            continue;
        }
        report.swings.push(SwingComparison {
            machine: id,
            open_loop_deg: a.magnitude_deg,
            closed_loop_deg: b.magnitude_deg,
            change_pct: 100.0 * (b.magnitude_deg - a.magnitude_deg) / a.magnitude_deg,
        });
    }
    Ok(report.finish())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventClass {
    LossOfLoad,
    GenTrip,
    Fault,
}

impl EventClass {
    pub fn label(self) -> &'static str {
        match self {
            EventClass::LossOfLoad => "Loss of load",
            EventClass::GenTrip => "Gen. trip",
            EventClass::Fault => "Fault/line clearing",
        }
    }

    /// Class of the first classifiable event.
    pub fn of(events: &[ScheduledEvent]) -> Option<Self> {
        events.iter().find_map(|e| match e.event {
            Event::LoadLoss { .. } | Event::SetLoadScale { .. } => Some(EventClass::LossOfLoad),
            Event::TripMachine { .. } => Some(EventClass::GenTrip),
            Event::Fault { .. } | Event::OpenBranch { .. } => Some(EventClass::Fault),
            _ => None,
        })
    }
}

/// One row of the contingency first-swing summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub event: String,
    pub first_swings: usize,
    pub improvement_rate_pct: f64,
    pub mean_decrease_pct: f64,
}

/// Rows per event class (in class order, classes without swings omitted)
/// followed by a total row.
pub fn summarize(reports: &[(EventClass, &FirstSwingReport)]) -> Vec<SummaryRow> {
    let classes = [EventClass::LossOfLoad, EventClass::GenTrip, EventClass::Fault];
    let row = |label: &str, it: &mut dyn Iterator<Item = f64>| {
        let changes: Vec<f64> = it.collect();
        let (rate, mean) = rate_and_mean(changes.iter().copied());
        SummaryRow {
            event: label.into(),
            first_swings: changes.len(),
            improvement_rate_pct: rate,
            mean_decrease_pct: mean,
        }
    };
    let mut rows = Vec::new();
    for c in classes {
        let mut it = reports
            .iter()
            .filter(|(k, _)| *k == c)
            .flat_map(|(_, r)| r.swings.iter().map(|s| s.change_pct));
        let r = row(c.label(), &mut it);
        if r.first_swings > 0 {
            rows.push(r);
        }
    }
    let mut all = reports.iter().flat_map(|(_, r)| r.swings.iter().map(|s| s.change_pct));
    rows.push(row("Total", &mut all));
    rows
}

/// Per-machine accelerating power in the COI frame, `[machine][sample]`.
/// Offline machines contribute zero and are excluded from the inertia sum.
pub fn coi_accelerating_power(traj: &Trajectory) -> Vec<Vec<f64>> {
    let nm = traj.machine_ids.len();
    let mut out = vec![vec![0.0; traj.len()]; nm];
    for k in 0..traj.len() {
        let (mut total, mut h_total) = (0.0, 0.0);
        for m in 0..nm {
            if traj.online[m][k] {
                total += traj.p_mech[m][k] - traj.p_elec[m][k];
                h_total += traj.inertia[m];
            }
        }
        for m in 0..nm {
            if traj.online[m][k] {
                let imbalance = traj.p_mech[m][k] - traj.p_elec[m][k];
                out[m][k] = imbalance - traj.inertia[m] / h_total * total;
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AreaSegment {
    pub t_start: f64,
    pub t_end: f64,
    /// Signed integral of accelerating power over angle.
    pub area: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub machine: String,
    pub time: Vec<f64>,
    pub accelerating_power: Vec<f64>,
    pub delta_dev: Vec<f64>,
    pub omega_dev: Vec<f64>,
    /// Running trapezoidal integral of accelerating power over angle.
    pub work: Vec<f64>,
    /// `omega_b H (omega - omega_coi)^2`, relative to its value at the
    /// disturbance.
    pub kinetic: Vec<f64>,
    pub peak_kinetic: f64,
    /// `max |work - kinetic|`.
    pub residual: f64,
    /// Segments between sign changes of the accelerating power.
    pub areas: Vec<AreaSegment>,
    pub accelerating_area: f64,
    pub decelerating_area: f64,
}

/// Work-energy balance of one machine in the COI frame from
/// `t_disturbance` on. Exact for undamped machines up to the
/// `1/omega` factor of the swing equation and the integration error.
pub fn equal_area(traj: &Trajectory, machine: usize, t_disturbance: f64) -> Result<EnergyReport, AnalysisError> {
    if machine >= traj.machine_ids.len() {
        return Err(AnalysisError::Machine(machine));
    }
    if traj.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let k0 = sample_at(traj, t_disturbance);
    let pa_all = coi_accelerating_power(traj);
    let dd_all = delta_coi_frame(traj, machine, t_disturbance)?;
    let dw_all = omega_coi_frame(traj, machine, t_disturbance)?;
    let h = traj.inertia[machine];

    let mut time = Vec::new();
    let mut pa = Vec::new();
    let mut dd = Vec::new();
    let mut dw = Vec::new();
    // event instants keep both samples; the zero-width step adds no work
    for k in k0..traj.len() {
        time.push(traj.time[k]);
        pa.push(pa_all[machine][k]);
        dd.push(dd_all[k]);
        dw.push(dw_all[k]);
    }
    let ke0 = traj.omega_b * h * dw[0] * dw[0];
    let kinetic: Vec<f64> = dw.iter().map(|w| traj.omega_b * h * w * w - ke0).collect();
    let mut work = vec![0.0; time.len()];
    let mut areas: Vec<AreaSegment> = Vec::new();
    for k in 1..time.len() {
        let inc = 0.5 * (pa[k] + pa[k - 1]) * (dd[k] - dd[k - 1]);
        work[k] = work[k - 1] + inc;
        let sign = (pa[k] + pa[k - 1]).signum();
        match areas.last_mut() {
            Some(seg) if seg.area == 0.0 || seg.area.signum() == sign * (dd[k] - dd[k - 1]).signum() || inc == 0.0 => {
                seg.area += inc;
                seg.t_end = time[k];
            }
            _ => areas.push(AreaSegment {
                t_start: time[k - 1],
                t_end: time[k],
                area: inc,
            }),
        }
    }
    let peak_kinetic = kinetic.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let residual = work
        .iter()
        .zip(&kinetic)
        .fold(0.0f64, |a, (w, e)| a.max((w - e).abs()));
    let accelerating_area = areas.first().map_or(0.0, |s| s.area.abs());
    let decelerating_area = areas.get(1).map_or(0.0, |s| s.area.abs());
    Ok(EnergyReport {
        machine: traj.machine_ids[machine].clone(),
        time,
        accelerating_power: pa,
        delta_dev: dd,
        omega_dev: dw,
        work,
        kinetic,
        peak_kinetic,
        residual,
        areas,
        accelerating_area,
        decelerating_area,
    })
}

/// COI-frame angle deviation (degrees) against speed deviation (pu).
pub fn phase_portrait(traj: &Trajectory, machine: usize, t0: f64) -> Result<(Vec<f64>, Vec<f64>), AnalysisError> {
    let dd = delta_coi_frame(traj, machine, t0)?;
    let dw = omega_coi_frame(traj, machine, t0)?;
    Ok((dd.into_iter().map(f64::to_degrees).collect(), dw))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bisection {
    /// Last value found stable.
    pub value: f64,
    /// First value found unstable.
    pub unstable: f64,
    pub evaluations: usize,
}

/// Bisects a stable/unstable boundary, `lo` stable and `hi` unstable,
/// down to `resolution`.
pub fn bisect_stability<F>(mut is_stable: F, lo: f64, hi: f64, resolution: f64) -> Result<Bisection, AnalysisError>
where
    F: FnMut(f64) -> Result<bool, AnalysisError>,
{
    if !(lo < hi) || !(resolution > 0.0) {
        return Err(AnalysisError::Bracket("empty interval"));
    }
    if !is_stable(lo)? {
        return Err(AnalysisError::Bracket("unstable at the lower bound"));
    }
    if is_stable(hi)? {
        return Err(AnalysisError::Bracket("stable at the upper bound"));
    }
    let (mut a, mut b, mut n) = (lo, hi, 2);
    while b - a > resolution {
        let mid = 0.5 * (a + b);
        n += 1;
        if is_stable(mid)? {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(Bisection {
        value: a,
        unstable: b,
        evaluations: n,
    })
}

/// A fault and its clearing actions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub start: f64,
    pub apply: Vec<Event>,
    /// Applied `duration` seconds after `start`.
    pub clear: Vec<Event>,
}

impl FaultSpec {
    /// Bolted fault at `bus`, on the `bus` end of `branch` if given. Clearing
    /// removes the fault and opens the branch.
    pub fn bus_fault(start: f64, bus: u32, branch: Option<String>) -> Self {
        Self {
            start,
            apply: vec![Event::Fault { bus, branch }],
            clear: vec![Event::ClearFault { bus, keep_branch: false }],
        }
    }

    pub fn events(&self, duration: f64) -> Vec<ScheduledEvent> {
        self.apply
            .iter()
            .map(|e| ScheduledEvent::at(self.start, e.clone()))
            .chain(self.clear.iter().map(|e| ScheduledEvent::at(self.start + duration, e.clone())))
            .collect()
    }
}

/// Stability of `template` with the fault cleared after `duration`.
pub fn fault_stability(template: &Scenario, fault: &FaultSpec, duration: f64) -> Result<Stability, AnalysisError> {
    let mut s = template.clone();
    s.events.extend(fault.events(duration));
    let traj = simulate(&s)?;
    Ok(classify_stability(&traj))
}

/// Critical clearing time (s) by bisection to a quarter cycle.
pub fn cct_search(template: &Scenario, fault: &FaultSpec, lo: f64, hi: f64) -> Result<Bisection, AnalysisError> {
    let res = 0.25 / template.case.f0;
    bisect_stability(
        |d| Ok(fault_stability(template, fault, d)? == Stability::Stable),
        lo,
        hi,
        res,
    )
}

/// Loading direction for transfer-limit searches. Each unit of the loading
/// parameter adds `weight` (system pu) of load at each sink bus and of
/// scheduled generation at each source machine.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LoadingDirection {
    /// `(bus index, weight)`
    pub sinks: Vec<(usize, f64)>,
    /// `(machine index, weight)`
    pub sources: Vec<(usize, f64)>,
}

impl LoadingDirection {
    /// Scenario with the case loaded by `lambda`. Loads keep their power
    /// factor.
    pub fn apply(&self, template: &Scenario, lambda: f64) -> Scenario {
        let mut s = template.clone();
        for (b, w) in &self.sinks {
            let bus = &mut s.case.buses[*b];
            let dp = lambda * w;
            if bus.p_load != 0.0 {
                bus.q_load *= (bus.p_load + dp) / bus.p_load;
            }
            bus.p_load += dp;
        }
        for (m, w) in &self.sources {
            s.case.machines[*m].p_gen += lambda * w;
        }
        s
    }
}

/// Largest loading (within `tolerance`) for which the scenario with the
/// contingency events is stable. Power-flow failure counts as unstable.
/// Returns `hi` when the whole interval is stable.
pub fn transfer_limit_search(
    template: &Scenario,
    direction: &LoadingDirection,
    contingency: &[ScheduledEvent],
    lo: f64,
    hi: f64,
    tolerance: f64,
) -> Result<f64, AnalysisError> {
    let check = |lambda: f64| -> Result<bool, AnalysisError> {
        let mut s = direction.apply(template, lambda);
        s.events.extend(contingency.iter().cloned());
        match simulate(&s) {
            Ok(traj) => Ok(classify_stability(&traj) == Stability::Stable),
            Err(SimError::PowerFlow(_)) | Err(SimError::NetworkInit) | Err(SimError::Machine(_)) => Ok(false),
            Err(e) => Err(e.into()),
        }
    };
    if !check(lo)? {
        return Err(AnalysisError::Infeasible);
    }
    if check(hi)? {
        return Ok(hi);
    }
    bisect_stability(check, lo, hi, tolerance).map(|b| b.value)
}

/// Sinks at every load bus in proportion to its load and sources at every
/// machine in proportion to its rating, excluding the slack-bus machines
/// (which pick up the balance).
pub fn proportional_direction(case: &crate::netmodel::Case) -> LoadingDirection {
    let p_total: f64 = case.buses.iter().map(|b| b.p_load.max(0.0)).sum();
    let sinks = case
        .buses
        .iter()
        .enumerate()
        .filter(|(_, b)| b.p_load > 0.0)
        .map(|(i, b)| (i, b.p_load / p_total))
        .collect();
    let gens: Vec<usize> = (0..case.machines.len())
        .filter(|m| case.buses[case.machines[*m].bus].kind != BusKind::Slack)
        .collect();
    let mva: f64 = gens.iter().map(|m| case.machines[*m].mva).sum();
    let sources = gens.iter().map(|m| (*m, case.machines[*m].mva / mva)).collect();
    LoadingDirection { sinks, sources }
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::PI;

    #[test]
    fn decaying_sinusoid_peak() {
        let (a, sigma, wd) = (0.2, 0.3, 2.0 * PI * 1.2);
        let dt = 1e-3;
        let t: Vec<f64> = (0..3000).map(|k| k as f64 * dt).collect();
        let x: Vec<f64> = t.iter().map(|t| a * (-sigma * t).exp() * (wd * t).sin()).collect();
        let fs = first_extremum(&t, &x, 0.0).unwrap();
        // exact peak: tan(wd t) = wd / sigma
        let tp = (wd / sigma).atan() / wd;
        let exact = a * (-sigma * tp).exp() * (wd * tp).sin();
        assert!(!fs.censored);
        assert!((fs.magnitude_deg - exact.to_degrees()).abs() < 1e-6);
        assert!((fs.time.unwrap() - tp).abs() < 1e-5);
        let approx = a * (-sigma * PI / (2.0 * wd)).exp();
        assert!((fs.magnitude_deg.to_radians() - approx).abs() < 1e-3 * a);
    }

    #[test]
    fn flat_and_censored() {
        let t: Vec<f64> = (0..100).map(|k| k as f64 * 0.01).collect();
        let flat = vec![3e-7; 100];
        let fs = first_extremum(&t, &flat, 0.0).unwrap();
        assert_eq!(fs.magnitude_deg, 0.0);
        assert!(!fs.censored);
        let ramp: Vec<f64> = t.iter().map(|t| 0.1 * t).collect();
        let fs = first_extremum(&t, &ramp, 0.0).unwrap();
        assert!(fs.censored);
        assert!((fs.magnitude_deg - (0.1 * 0.99f64).to_degrees()).abs() < 1e-12);
    }

    #[test]
    fn repeated_stamps_keep_last() {
        let t = [0.0, 1.0, 1.0, 2.0, 3.0];
        let x = [0.0, 0.5, 1.0, 0.0, -0.5];
        let fs = first_extremum(&t, &x, 0.0).unwrap();
        assert!((fs.magnitude_deg - 1.0f64.to_degrees()).abs() < 1e-12);
    }

    #[test]
    fn bisection_finds_threshold() {
        let b = bisect_stability(|x| Ok(x < 0.123), 0.0, 1.0, 1e-3).unwrap();
        assert!(b.value < 0.123 && b.unstable >= 0.123);
        assert!(b.unstable - b.value <= 1e-3);
        assert!(bisect_stability(|_| Ok(true), 0.0, 1.0, 1e-3).is_err());
        assert!(bisect_stability(|_| Ok(false), 0.0, 1.0, 1e-3).is_err());
        assert!(bisect_stability(|x| Ok(x < 0.5), 0.2, 0.2, 1e-3).is_err());
    }

    #[test]
    fn summary_rows() {
        let mk = |changes: &[f64]| FirstSwingReport {
            swings: changes
                .iter()
                .map(|c| SwingComparison {
                    machine: "G".into(),
                    open_loop_deg: 1.0,
                    closed_loop_deg: 1.0 + c / 100.0,
                    change_pct: *c,
                })
                .collect(),
            ..Default::default()
        }
        .finish();
        let a = mk(&[-10.0, -20.0, 5.0]);
        let b = mk(&[-30.0]);
        assert!((a.improvement_rate_pct - 200.0 / 3.0).abs() < 1e-12);
        assert!((a.mean_decrease_pct - 15.0).abs() < 1e-12);
        let rows = summarize(&[(EventClass::Fault, &a), (EventClass::GenTrip, &b)]);
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].event, "Gen. trip");
        assert_eq!(rows[1].event, "Fault/line clearing");
        assert_eq!(rows[2].first_swings, 4);
        assert!((rows[2].improvement_rate_pct - 75.0).abs() < 1e-12);
        assert!((rows[2].mean_decrease_pct - 20.0).abs() < 1e-12);
        assert!(summarize(&[]).iter().all(|r| r.first_swings == 0));
    }
}
