//! CSV and JSON artifacts.

use std::fs::{self, File};
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::json;
use synctrack_core::analysis::SummaryRow;
use synctrack_core::engine::{classify_stability, Stability, Status, Trajectory};
use synctrack_core::linear::{
    freq_response, magnitude_db, matrix_rows, phase_deg, LinearModel, ModeCatalog, SweepResult,
};
use synctrack_core::netmodel::{Case, PowerFlowSolution};

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

fn num(v: f64) -> String {
    format!("{v}")
}

pub fn trajectory_header(traj: &Trajectory) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for prefix in ["delta", "omega", "pm", "pe"] {
        h.extend(traj.machine_ids.iter().map(|id| format!("{prefix}_{id}")));
    }
    h.extend(["coi_omega", "coi_delta", "coi_f"].map(String::from));
    if !traj.v_mag.is_empty() {
        h.extend(traj.bus_ids.iter().map(|id| format!("vm_{id}")));
        h.extend(traj.bus_ids.iter().map(|id| format!("va_{id}")));
    }
    h.extend(traj.ibr_ids.iter().map(|id| format!("ps_{id}")));
    h.extend(traj.ibr_ids.iter().map(|id| format!("ip_{id}")));
    for prefix in ["e1", "e2"] {
        h.extend(traj.controller_ibr.iter().map(|u| format!("{prefix}_{}", traj.ibr_ids[*u])));
    }
    h
}

/// One row per sample; event instants appear twice.
pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(trajectory_header(traj))?;
    for k in 0..traj.len() {
        let mut row = vec![num(traj.time[k])];
        for series in [&traj.delta, &traj.omega, &traj.p_mech, &traj.p_elec] {
            row.extend(series.iter().map(|s| num(s[k])));
        }
        row.extend([traj.coi_omega[k], traj.coi_delta[k], traj.coi_freq[k]].map(num));
        if !traj.v_mag.is_empty() {
            row.extend(traj.v_mag.iter().map(|s| num(s[k])));
            row.extend(traj.v_ang.iter().map(|s| num(s[k])));
        }
        row.extend(traj.p_s.iter().map(|s| num(s[k])));
        row.extend(traj.i_p.iter().map(|s| num(s[k])));
        row.extend(traj.e1.iter().map(|s| num(s[k])));
        row.extend(traj.e2.iter().map(|s| num(s[k])));
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectorySummary {
    pub status: Status,
    pub stability: Stability,
    pub t_end: f64,
    pub samples: usize,
    pub max_separation_deg: f64,
    pub max_speed_deviation: f64,
    pub min_coi_frequency: f64,
    pub max_abs_ps: f64,
}

pub fn summarize_trajectory(traj: &Trajectory) -> TrajectorySummary {
    let max_speed_deviation = traj
        .omega
        .iter()
        .flatten()
        .fold(0.0f64, |a, w| a.max((w - 1.0).abs()));
    TrajectorySummary {
        status: traj.status,
        stability: classify_stability(traj),
        t_end: traj.time.last().copied().unwrap_or(0.0),
        samples: traj.len(),
        max_separation_deg: traj.max_separation().to_degrees(),
        max_speed_deviation,
        min_coi_frequency: traj.coi_freq.iter().copied().fold(f64::INFINITY, f64::min),
        max_abs_ps: traj.p_s.iter().flatten().fold(0.0f64, |a, p| a.max(p.abs())),
    }
}

pub fn write_powerflow(dir: &Path, case: &Case, pf: &PowerFlowSolution) -> Result<()> {
    let mut w = csv_writer(&dir.join("buses.csv"))?;
    w.write_record(["bus", "vm", "va_deg"])?;
    for (b, v) in case.buses.iter().zip(&pf.voltage) {
        w.write_record([b.id.to_string(), num(v.norm()), num(v.arg().to_degrees())])?;
    }
    w.flush()?;
    let mut w = csv_writer(&dir.join("machines.csv"))?;
    w.write_record(["machine", "bus", "p", "q"])?;
    for (m, s) in case.machines.iter().zip(&pf.machine_output) {
        w.write_record([m.id.clone(), case.buses[m.bus].id.to_string(), num(s.re), num(s.im)])?;
    }
    w.flush()?;
    write_json(
        &dir.join("powerflow.json"),
        &json!({ "iterations": pf.iterations, "max_mismatch": pf.max_mismatch }),
    )
}

pub fn write_linear_model(dir: &Path, model: &LinearModel, catalog: &ModeCatalog) -> Result<()> {
    write_json(
        &dir.join("model.json"),
        &json!({
            "states": model.state_labels,
            "inputs": model.input_labels,
            "outputs": model.output_labels,
            "residual": model.residual,
            "a": matrix_rows(&model.a),
            "b": matrix_rows(&model.b),
            "c": matrix_rows(&model.c),
            "d": matrix_rows(&model.d),
        }),
    )?;
    write_modes_csv(&dir.join("modes.csv"), catalog)
}

pub fn write_modes_csv(path: &Path, catalog: &ModeCatalog) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["re", "im", "freq_hz", "damping", "class", "dominant"])?;
    for m in &catalog.modes {
        w.write_record([
            num(m.eigenvalue.re),
            num(m.eigenvalue.im),
            num(m.freq_hz),
            num(m.damping),
            serde_json::to_value(m.class)?.as_str().unwrap_or_default().to_string(),
            m.dominant.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Magnitude and phase of one channel over frequencies in Hz.
pub fn write_bode_csv(path: &Path, model: &LinearModel, input: usize, output: usize, freqs_hz: &[f64]) -> Result<()> {
    let omegas: Vec<f64> = freqs_hz.iter().map(|f| 2.0 * std::f64::consts::PI * f).collect();
    let h = freq_response(model, input, output, &omegas)?;
    let mut w = csv_writer(path)?;
    w.write_record(["f_hz", "mag_db", "phase_deg"])?;
    for (f, z) in freqs_hz.iter().zip(h) {
        if let Some(z) = z {
            w.write_record([num(*f), num(magnitude_db(z)), num(phase_deg(z))])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One row per (track, grid point) with the upper-half-plane tracks only.
pub fn write_loci_csv(path: &Path, sweep: &SweepResult) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["mode", "param", "re", "im", "freq_hz", "damping", "class"])?;
    let mut id = 0;
    for (t, locus) in sweep.loci.iter().enumerate() {
        if !locus.iter().flatten().any(|z| z.im > 0.0) {
            continue;
        }
        let class = serde_json::to_value(sweep.track_class[t])?;
        for (p, z) in sweep.grid.iter().zip(locus) {
            let (re, im, f, zeta) = match z {
                Some(z) => {
                    let wn = z.norm();
                    (
                        num(z.re),
                        num(z.im),
                        num(z.im.abs() / (2.0 * std::f64::consts::PI)),
                        num(if wn > 0.0 { -z.re / wn } else { 1.0 }),
                    )
                }
                None => Default::default(),
            };
            w.write_record([id.to_string(), num(*p), re, im, f, zeta, class.as_str().unwrap_or_default().into()])?;
        }
        id += 1;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary_csv(path: &Path, tables: &[(String, Vec<SummaryRow>)]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["protocol", "event", "first_swings", "improvement_rate_pct", "mean_decrease_pct"])?;
    for (protocol, rows) in tables {
        for r in rows {
            w.write_record([
                protocol.clone(),
                r.event.clone(),
                r.first_swings.to_string(),
                format!("{:.1}", r.improvement_rate_pct),
                format!("{:.1}", r.mean_decrease_pct),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
