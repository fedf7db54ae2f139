//! Run artifacts: CSV field dumps, solver diagnostics, fleet logs, summary
//! JSON, plot-ready report files and the run manifest.
//!
//! CSV is the single interchange format; values are written in scientific
//! notation with 12 significant digits so runs diff cleanly. Every file is
//! written atomically (temp file + rename) and every CSV carries a header
//! row naming its units. Reports are derived from run outputs alone — the
//! solve is never recomputed.

use crate::fleet::{FleetStats, SimulationResult};
use crate::grid::{DensityField, FlowField, Grid};
use crate::scenario::Scenario;
use crate::solver::{CpParams, SolveDiagnostics};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{path}: parse error at line {line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("missing input: {0}")]
    MissingInput(PathBuf),
    #[error("serialization failed: {0}")]
    Serialize(String),
}

/// 12 significant digits, scientific notation.
pub fn fmt_value(v: f64) -> String {
    format!("{v:.11e}")
}

/// Write-temp-then-rename; the destination is never observed half-written.
pub fn write_atomic(path: &Path, content: &str) -> Result<(), ReportError> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(content.as_bytes())?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Field dumps
// ---------------------------------------------------------------------------

pub fn density_csv(m: &DensityField, grid: &Grid) -> String {
    let mut out = String::from("k,time_s,mode");
    for l in 0..m.n_h {
        out.push_str(&format!(",cell_{l}"));
    }
    out.push('\n');
    for k in 0..=m.n_t {
        for i in 0..m.n_modes {
            out.push_str(&format!("{k},{},{i}", fmt_value(grid.time(k))));
            for &v in m.mode_slice(k, i) {
                out.push(',');
                out.push_str(&fmt_value(v));
            }
            out.push('\n');
        }
    }
    out
}

pub fn flow_csv(e: &FlowField, grid: &Grid) -> String {
    let n_modes = e.n_modes;
    let mut out = String::from("k,time_s,from_mode,to_mode");
    for l in 0..e.n_h {
        out.push_str(&format!(",cell_{l}"));
    }
    out.push('\n');
    for k in 0..e.n_t {
        for p in 0..e.n_pairs() {
            let i = p / (n_modes - 1);
            let r = p % (n_modes - 1);
            let j = if r < i { r } else { r + 1 };
            out.push_str(&format!("{k},{},{i},{j}", fmt_value(grid.time(k))));
            for &v in e.pair_slice(k, p) {
                out.push(',');
                out.push_str(&fmt_value(v));
            }
            out.push('\n');
        }
    }
    out
}

pub fn diagnostics_csv(d: &SolveDiagnostics) -> String {
    let mut out =
        String::from("iteration,objective,max_violation,primal_residual,dual_residual\n");
    for k in 0..d.objective.len() {
        out.push_str(&format!(
            "{k},{},{},{},{}\n",
            fmt_value(d.objective[k]),
            fmt_value(d.max_violation[k]),
            fmt_value(d.primal_residual[k]),
            fmt_value(d.dual_residual[k]),
        ));
    }
    out
}

pub fn headcounts_csv(result: &SimulationResult, dr: f64) -> String {
    let n_modes = result.headcounts[0].len();
    let mut out = String::from("step,time_s");
    for i in 0..n_modes {
        out.push_str(&format!(",mode_{i}"));
    }
    out.push('\n');
    for (k, counts) in result.headcounts.iter().enumerate() {
        out.push_str(&format!("{k},{}", fmt_value(k as f64 * dr)));
        for c in counts {
            out.push_str(&format!(",{c}"));
        }
        out.push('\n');
    }
    out
}

pub fn soc_paths_csv(result: &SimulationResult, dr: f64) -> String {
    let n = result.soc_paths[0].len();
    let mut out = String::from("step,time_s");
    for z in 0..n {
        out.push_str(&format!(",vehicle_{z}"));
    }
    out.push('\n');
    for (k, socs) in result.soc_paths.iter().enumerate() {
        out.push_str(&format!("{k},{}", fmt_value(k as f64 * dr)));
        for &s in socs {
            out.push(',');
            out.push_str(&fmt_value(s));
        }
        out.push('\n');
    }
    out
}

pub fn transfers_csv(result: &SimulationResult, dr: f64) -> String {
    let mut out = String::from("step,time_s,vehicle,from_mode,to_mode\n");
    for t in &result.transfers {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            t.step,
            fmt_value(t.step as f64 * dr),
            t.vehicle,
            t.from_mode,
            t.to_mode
        ));
    }
    out
}

// ---------------------------------------------------------------------------
// Readers (for the simulate/report stages)
// ---------------------------------------------------------------------------

fn read_lines(path: &Path) -> Result<Vec<Vec<String>>, ReportError> {
    if !path.exists() {
        return Err(ReportError::MissingInput(path.to_path_buf()));
    }
    let text = fs::read_to_string(path)?;
    Ok(text
        .lines()
        .skip(1)
        .map(|line| line.split(',').map(|s| s.to_string()).collect())
        .collect())
}

fn parse_f64(path: &Path, line: usize, field: &str) -> Result<f64, ReportError> {
    field.trim().parse::<f64>().map_err(|e| ReportError::Parse {
        path: path.to_path_buf(),
        line,
        msg: e.to_string(),
    })
}

pub fn read_density_csv(
    path: &Path,
    grid: &Grid,
    n_modes: usize,
) -> Result<DensityField, ReportError> {
    let mut m = DensityField::zeros(grid.n_t, n_modes, grid.n_h);
    for (idx, row) in read_lines(path)?.iter().enumerate() {
        let line = idx + 2;
        if row.len() != 3 + grid.n_h {
            return Err(ReportError::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("expected {} fields, got {}", 3 + grid.n_h, row.len()),
            });
        }
        let k = parse_f64(path, line, &row[0])? as usize;
        let i = parse_f64(path, line, &row[2])? as usize;
        for l in 0..grid.n_h {
            *m.at_mut(k, i, l) = parse_f64(path, line, &row[3 + l])?;
        }
    }
    Ok(m)
}

pub fn read_flow_csv(
    path: &Path,
    grid: &Grid,
    n_modes: usize,
) -> Result<FlowField, ReportError> {
    let mut e = FlowField::zeros(grid.n_t, n_modes, grid.n_h);
    for (idx, row) in read_lines(path)?.iter().enumerate() {
        let line = idx + 2;
        if row.len() != 4 + grid.n_h {
            return Err(ReportError::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("expected {} fields, got {}", 4 + grid.n_h, row.len()),
            });
        }
        let k = parse_f64(path, line, &row[0])? as usize;
        let i = parse_f64(path, line, &row[2])? as usize;
        let j = parse_f64(path, line, &row[3])? as usize;
        let pair = i * (n_modes - 1) + if j < i { j } else { j - 1 };
        for l in 0..grid.n_h {
            *e.at_mut(k, pair, l) = parse_f64(path, line, &row[4 + l])?;
        }
    }
    Ok(e)
}

pub fn read_headcounts_csv(path: &Path) -> Result<Vec<Vec<usize>>, ReportError> {
    let mut out = Vec::new();
    for (idx, row) in read_lines(path)?.iter().enumerate() {
        let line = idx + 2;
        let counts = row[2..]
            .iter()
            .map(|f| parse_f64(path, line, f).map(|v| v as usize))
            .collect::<Result<Vec<_>, _>>()?;
        out.push(counts);
    }
    Ok(out)
}

pub fn read_soc_paths_csv(path: &Path) -> Result<Vec<Vec<f64>>, ReportError> {
    let mut out = Vec::new();
    for (idx, row) in read_lines(path)?.iter().enumerate() {
        let line = idx + 2;
        let socs = row[2..]
            .iter()
            .map(|f| parse_f64(path, line, f))
            .collect::<Result<Vec<_>, _>>()?;
        out.push(socs);
    }
    Ok(out)
}

pub fn read_transfer_count_per_vehicle(
    path: &Path,
    n: usize,
) -> Result<Vec<usize>, ReportError> {
    let mut per_vehicle = vec![0usize; n];
    for (idx, row) in read_lines(path)?.iter().enumerate() {
        let line = idx + 2;
        let z = parse_f64(path, line, &row[2])? as usize;
        if z < n {
            per_vehicle[z] += 1;
        }
    }
    Ok(per_vehicle)
}

// ---------------------------------------------------------------------------
// Run manifest
// ---------------------------------------------------------------------------

/// Written atomically at the end of a run; every listed output exists by the
/// time the manifest appears.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub version: String,
    pub scenario_name: String,
    pub scenario_sha256: String,
    pub solver: CpParams,
    pub iterations: usize,
    pub wall_time_s: f64,
    pub outputs: Vec<String>,
}

pub fn scenario_hash(scenario_toml: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(scenario_toml.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<(), ReportError> {
    let json = serde_json::to_string_pretty(manifest)
        .map_err(|e| ReportError::Serialize(e.to_string()))?;
    write_atomic(&dir.join("manifest.json"), &json)
}

// ---------------------------------------------------------------------------
// Plot-data reports
// ---------------------------------------------------------------------------

fn histogram(values: impl Iterator<Item = f64>, lo: f64, hi: f64, bins: usize) -> Vec<usize> {
    let mut counts = vec![0usize; bins];
    let width = (hi - lo) / bins as f64;
    for v in values {
        if v.is_nan() {
            continue;
        }
        let idx = (((v - lo) / width).floor() as isize).clamp(0, bins as isize - 1) as usize;
        counts[idx] += 1;
    }
    counts
}

/// Occupancy comparison: continuum mode masses against empirical headcount
/// fractions at the deployment nodes.
pub fn occupancy_report(
    m: &DensityField,
    headcounts: &[Vec<usize>],
    grid: &Grid,
    dr: f64,
) -> String {
    let n_modes = m.n_modes;
    let n: usize = headcounts[0].iter().sum();
    let mut out = String::from("time_s");
    for i in 0..n_modes {
        out.push_str(&format!(",mode_{i}_continuum"));
    }
    for i in 0..n_modes {
        out.push_str(&format!(",mode_{i}_empirical"));
    }
    out.push('\n');
    for (k, counts) in headcounts.iter().enumerate() {
        let t = k as f64 * dr;
        let node = ((t / grid.dt).round() as usize).min(grid.n_t);
        out.push_str(&fmt_value(t));
        for i in 0..n_modes {
            out.push(',');
            out.push_str(&fmt_value(m.mode_mass(node, i)));
        }
        for &c in counts {
            out.push(',');
            out.push_str(&fmt_value(c as f64 / n as f64));
        }
        out.push('\n');
    }
    out
}

pub fn price_overlay_report(price: &[f64], grid: &Grid) -> String {
    let mut out = String::from("time_s,price_eur_per_kwh\n");
    for (k, &p) in price.iter().enumerate() {
        out.push_str(&format!("{},{}\n", fmt_value(grid.time(k)), fmt_value(p)));
    }
    out
}

/// Initial/final SoC histograms, 20 bins over [0.2, 1].
pub fn soc_histogram_report(initial: &[f64], final_soc: &[f64]) -> String {
    let bins = 20;
    let (lo, hi) = (0.2, 1.0);
    let initial_counts = histogram(initial.iter().cloned(), lo, hi, bins);
    let final_counts = histogram(final_soc.iter().cloned(), lo, hi, bins);
    let width = (hi - lo) / bins as f64;
    let mut out = String::from("bin_lo_soc,bin_hi_soc,initial_count,final_count\n");
    for b in 0..bins {
        out.push_str(&format!(
            "{},{},{},{}\n",
            fmt_value(lo + b as f64 * width),
            fmt_value(lo + (b + 1) as f64 * width),
            initial_counts[b],
            final_counts[b]
        ));
    }
    out
}

/// First-passage times to the SoC threshold, 40 bins over [0, horizon].
pub fn first_passage_report(times: &[Option<f64>], horizon: f64) -> String {
    let bins = 40;
    let counts = histogram(times.iter().filter_map(|t| *t), 0.0, horizon, bins);
    let width = horizon / bins as f64;
    let mut out = String::from("bin_lo_s,bin_hi_s,count\n");
    for b in 0..bins {
        out.push_str(&format!(
            "{},{},{}\n",
            fmt_value(b as f64 * width),
            fmt_value((b + 1) as f64 * width),
            counts[b]
        ));
    }
    out
}

/// SoC trajectories of up to `max_vehicles` evenly sampled vehicles.
pub fn trajectories_report(soc_paths: &[Vec<f64>], dr: f64, max_vehicles: usize) -> String {
    let n = soc_paths[0].len();
    let stride = (n / max_vehicles.min(n).max(1)).max(1);
    let sampled: Vec<usize> = (0..n).step_by(stride).take(max_vehicles).collect();
    let mut out = String::from("time_s");
    for &z in &sampled {
        out.push_str(&format!(",vehicle_{z}"));
    }
    out.push('\n');
    for (k, node) in soc_paths.iter().enumerate() {
        out.push_str(&fmt_value(k as f64 * dr));
        for &z in &sampled {
            out.push(',');
            out.push_str(&fmt_value(node[z]));
        }
        out.push('\n');
    }
    out
}

pub fn transfer_histogram_report(per_vehicle: &[usize]) -> String {
    let mut histogram = std::collections::BTreeMap::new();
    for &c in per_vehicle {
        *histogram.entry(c).or_insert(0usize) += 1;
    }
    let mut out = String::from("transfers,vehicles\n");
    for (transfers, vehicles) in histogram {
        out.push_str(&format!("{transfers},{vehicles}\n"));
    }
    out
}

/// Tracking comparison: nominal, target, continuum and empirical occupancy
/// of the tracked mode.
pub fn tracking_report(
    u_pred: &[f64],
    u_tar: &[f64],
    m: &DensityField,
    headcounts: &[Vec<usize>],
    mode: usize,
    grid: &Grid,
    dr: f64,
) -> String {
    let n: usize = headcounts[0].iter().sum();
    let mut out = String::from("time_s,u_pred,u_tar,u_cont,u_emp\n");
    for k in 0..u_pred.len() {
        let t = grid.time(k);
        let node_emp = ((t / dr).round() as usize).min(headcounts.len() - 1);
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt_value(t),
            fmt_value(u_pred[k]),
            fmt_value(u_tar[k]),
            fmt_value(m.mode_mass(k, mode)),
            fmt_value(headcounts[node_emp][mode] as f64 / n as f64),
        ));
    }
    out
}

/// Simulation summary written as stats.json.
#[derive(Debug, Serialize)]
pub struct SimulationSummary<'a> {
    pub n: usize,
    pub mesh_u: f64,
    pub mesh_dr_s: f64,
    pub mesh_condition: f64,
    pub mesh_condition_warn: bool,
    pub stats: &'a FleetStats,
}

pub fn scenario_toml(scenario: &Scenario) -> Result<String, ReportError> {
    toml::to_string(scenario).map_err(|e| ReportError::Serialize(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;

    #[test]
    fn value_formatting_is_twelve_digits() {
        assert_eq!(fmt_value(1.0), "1.00000000000e0");
        assert_eq!(fmt_value(0.1), "1.00000000000e-1");
        assert_eq!(fmt_value(-2.5e-7), "-2.50000000000e-7");
    }

    #[test]
    fn density_csv_round_trip() {
        let grid = build_grid(4.0, 1.0, 0.25).unwrap();
        let mut m = DensityField::zeros(4, 2, 4);
        for (i, v) in m.values_mut().iter_mut().enumerate() {
            *v = (i as f64) * 0.013 - 0.1;
        }
        let dir = std::env::temp_dir().join("mfcharge-report-test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.csv");
        write_atomic(&path, &density_csv(&m, &grid)).unwrap();
        let back = read_density_csv(&path, &grid, 2).unwrap();
        for (a, b) in m.values().iter().zip(back.values()) {
            assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
        }
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn histogram_counts_sum() {
        let values = [0.21, 0.25, 0.99, 1.0, 0.7, 0.69];
        let counts = histogram(values.iter().cloned(), 0.2, 1.0, 20);
        assert_eq!(counts.iter().sum::<usize>(), values.len());
    }

    #[test]
    fn manifest_hash_is_stable() {
        let h1 = scenario_hash("abc");
        let h2 = scenario_hash("abc");
        assert_eq!(h1, h2);
        assert_eq!(h1.len(), 64);
        assert_ne!(scenario_hash("abd"), h1);
    }
}
