//! Finite-fleet deployment of a mean-field control: discretized transfer
//! counts with floor/ceil rounding, FIFO vehicle selection, live cap
//! enforcement and explicit-Euler SoC updates.
//!
//! One simulation step applies the transfers prescribed by the cell-averaged
//! intensities (STEP 1) and then advances every vehicle's SoC along its
//! mode's rate (STEP 2). The simulator is single-threaded and fully
//! deterministic: caps create cross-vehicle ordering dependencies, so sweep
//! order (modes ascending, cells ascending, destinations ascending) and FIFO
//! tie-breaking by vehicle index are part of the contract.

use crate::dynamics::ConstraintSpec;
use crate::grid::{DensityField, FlowField, Grid, ModeSet};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FleetError {
    #[error("deployment mesh misaligned: {0}")]
    MeshMisaligned(String),
}

/// Deployment mesh: may be coarser than the solver mesh when the fleet is
/// small.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeploymentMesh {
    /// SoC cell width.
    pub u: f64,
    /// Time step, seconds.
    pub dr: f64,
    pub n_u: usize,
    pub n_steps: usize,
}

impl DeploymentMesh {
    pub fn new(u: f64, dr: f64, horizon: f64) -> Result<DeploymentMesh, FleetError> {
        let n_u = (1.0 / u).round();
        if !(u > 0.0) || (n_u * u - 1.0).abs() > 1e-9 {
            return Err(FleetError::MeshMisaligned(format!("n_u * u = {} != 1", n_u * u)));
        }
        let n_steps = (horizon / dr).round();
        if !(dr > 0.0) || (n_steps * dr - horizon).abs() > 1e-9 * horizon.max(1.0) {
            return Err(FleetError::MeshMisaligned(format!(
                "dr = {dr} does not divide the horizon {horizon}"
            )));
        }
        Ok(DeploymentMesh { u, dr, n_u: n_u as usize, n_steps: n_steps as usize })
    }

    /// The solver mesh itself.
    pub fn from_grid(grid: &Grid) -> DeploymentMesh {
        DeploymentMesh { u: grid.h, dr: grid.dt, n_u: grid.n_h, n_steps: grid.n_t }
    }

    /// Cell index of a SoC value (full charge maps to the last cell).
    pub fn cell_of(&self, soc: f64) -> usize {
        ((soc / self.u).floor() as usize).min(self.n_u - 1)
    }
}

/// Mesh-quality indicator `T/(n u dr) + sup|alpha| (dr + u)`; the deployment
/// is trustworthy when this is well below one. The caller decides what to do
/// with large values; 0.5 is the default warning threshold.
pub fn mesh_condition_value(
    n: usize,
    mesh: &DeploymentMesh,
    alpha_sup: f64,
    horizon: f64,
) -> f64 {
    horizon / (n as f64 * mesh.u * mesh.dr) + alpha_sup * (mesh.dr + mesh.u)
}

pub const MESH_CONDITION_WARN: f64 = 0.5;

/// One vehicle's state: SoC, charging mode, and the time it entered the mode
/// (drives FIFO selection).
#[derive(Debug, Clone, Serialize)]
pub struct Vehicle {
    pub soc: f64,
    pub mode: usize,
    pub mode_entry_time: f64,
}

/// The finite population.
#[derive(Debug, Clone)]
pub struct FleetState {
    pub vehicles: Vec<Vehicle>,
    pub time: f64,
}

impl FleetState {
    /// Stratified inverse-CDF sampling from the initial cell values: vehicle
    /// z receives the quantile (z + 1/2)/n of the (mode-major) initial
    /// distribution, placed uniformly within its cell. Deterministic given n.
    pub fn sample_from_initial(initial: &[Vec<f64>], grid: &Grid, n: usize) -> FleetState {
        let h = grid.h;
        let mut cells: Vec<(usize, usize, f64)> = Vec::new();
        for (mode, values) in initial.iter().enumerate() {
            for (l, &v) in values.iter().enumerate() {
                if v > 0.0 {
                    cells.push((mode, l, v * h));
                }
            }
        }
        let total: f64 = cells.iter().map(|c| c.2).sum();
        let mut vehicles = Vec::with_capacity(n);
        let mut acc = 0.0;
        let mut next_cell = 0usize;
        for z in 0..n {
            let q = (z as f64 + 0.5) / n as f64 * total;
            while next_cell + 1 < cells.len() && q > acc + cells[next_cell].2 {
                acc += cells[next_cell].2;
                next_cell += 1;
            }
            let (mode, l, mass) = cells[next_cell];
            let frac = ((q - acc) / mass).clamp(0.0, 1.0);
            vehicles.push(Vehicle {
                soc: (l as f64 + frac) * h,
                mode,
                mode_entry_time: 0.0,
            });
        }
        FleetState { vehicles, time: 0.0 }
    }

    pub fn headcounts(&self, n_modes: usize) -> Vec<usize> {
        let mut counts = vec![0usize; n_modes];
        for v in &self.vehicles {
            counts[v.mode] += 1;
        }
        counts
    }
}

/// Cell-averaged transfer intensities on the deployment mesh, indexed
/// (step, ordered pair, cell).
#[derive(Debug, Clone)]
pub struct ControlGrid {
    pub n_steps: usize,
    pub n_modes: usize,
    pub n_u: usize,
    pub values: Vec<f64>,
}

impl ControlGrid {
    pub fn zeros(n_steps: usize, n_modes: usize, n_u: usize) -> ControlGrid {
        ControlGrid {
            n_steps,
            n_modes,
            n_u,
            values: vec![0.0; n_steps * n_modes * (n_modes - 1) * n_u],
        }
    }

    #[inline]
    fn idx(&self, k: usize, pair: usize, l: usize) -> usize {
        (k * self.n_modes * (self.n_modes - 1) + pair) * self.n_u + l
    }

    pub fn at(&self, k: usize, pair: usize, l: usize) -> f64 {
        self.values[self.idx(k, pair, l)]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Averages the solver-mesh intensities onto the deployment mesh. The
/// interpolant is piecewise linear in SoC (knots at solver cell centres,
/// clamped tails) and piecewise constant in time; aligned meshes pass the
/// values through exactly.
pub fn interpolate_control(
    alpha: &FlowField,
    grid: &Grid,
    mesh: &DeploymentMesh,
) -> Result<ControlGrid, FleetError> {
    if (mesh.n_steps as f64 * mesh.dr - grid.horizon).abs() > 1e-9 * grid.horizon {
        return Err(FleetError::MeshMisaligned(format!(
            "deployment horizon {} != control horizon {}",
            mesh.n_steps as f64 * mesh.dr,
            grid.horizon
        )));
    }
    let n_pairs = alpha.n_pairs();
    let mut out = ControlGrid::zeros(mesh.n_steps, alpha.n_modes, mesh.n_u);
    let aligned = mesh.n_u == grid.n_h
        && mesh.n_steps == grid.n_t
        && (mesh.u - grid.h).abs() < 1e-12
        && (mesh.dr - grid.dt).abs() < 1e-9;
    if aligned {
        out.values.copy_from_slice(alpha.values());
        return Ok(out);
    }
    for k in 0..mesh.n_steps {
        // Piecewise-constant in time: the solver step containing t_k.
        let t = k as f64 * mesh.dr;
        let src_k = ((t / grid.dt).floor() as usize).min(grid.n_t - 1);
        for pair in 0..n_pairs {
            let cells = alpha.pair_slice(src_k, pair);
            for l in 0..mesh.n_u {
                let lo = l as f64 * mesh.u;
                let hi = (l + 1) as f64 * mesh.u;
                let idx = out.idx(k, pair, l);
                out.values[idx] = average_linear_interpolant(cells, grid.h, lo, hi);
            }
        }
    }
    Ok(out)
}

/// Mean over [lo, hi] of the piecewise-linear interpolant through the cell
/// centres (constant beyond the outermost centres), by exact segment
/// integration.
fn average_linear_interpolant(cells: &[f64], h: f64, lo: f64, hi: f64) -> f64 {
    let n = cells.len();
    let centre = |l: usize| (l as f64 + 0.5) * h;
    let value_at = |s: f64| -> f64 {
        if s <= centre(0) {
            return cells[0];
        }
        if s >= centre(n - 1) {
            return cells[n - 1];
        }
        let x = s / h - 0.5;
        let l = x.floor() as usize;
        let w = x - l as f64;
        cells[l] * (1.0 - w) + cells[l + 1] * w
    };
    // The interpolant is linear between consecutive knots, so a trapezoid on
    // each sub-segment integrates it exactly.
    let mut knots = vec![lo, hi];
    for l in 0..n {
        let c = centre(l);
        if c > lo && c < hi {
            knots.push(c);
        }
    }
    knots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut integral = 0.0;
    for w in knots.windows(2) {
        let (a, b) = (w[0], w[1]);
        integral += 0.5 * (value_at(a) + value_at(b)) * (b - a);
    }
    integral / (hi - lo)
}

/// Number of vehicles to transfer: `floor(N A dr)` when the destination is
/// capped (`d_upper < 1`), `ceil` otherwise; clamped to the available count.
pub fn transfer_count(n_cell: usize, a: f64, dr: f64, d_upper_dest: f64) -> usize {
    if a <= 0.0 || n_cell == 0 {
        return 0;
    }
    let expected = n_cell as f64 * a * dr;
    let raw = if d_upper_dest < 1.0 { expected.floor() } else { expected.ceil() };
    (raw as usize).min(n_cell)
}

/// One transfer event in the log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TransferEvent {
    pub step: usize,
    pub vehicle: usize,
    pub from_mode: usize,
    pub to_mode: usize,
}

/// STEP 1: mode transfers for one deployment step. Membership is the
/// snapshot at step start; within a cell, vehicles leave in FIFO order
/// (earliest mode entry first, ties by index). Transfers into a mode halt
/// when its headcount would exceed `n * d_upper`, transfers out halt at
/// `n * d_lower`.
pub fn step_transfers(
    fleet: &mut FleetState,
    control: &ControlGrid,
    step: usize,
    caps_upper: &[f64],
    caps_lower: &[f64],
    mesh: &DeploymentMesh,
    log: &mut Vec<TransferEvent>,
) {
    let n_modes = control.n_modes;
    let n = fleet.vehicles.len();
    // Snapshot membership per (mode, cell), FIFO-ordered.
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_modes * mesh.n_u];
    for (idx, v) in fleet.vehicles.iter().enumerate() {
        members[v.mode * mesh.n_u + mesh.cell_of(v.soc)].push(idx);
    }
    for group in members.iter_mut() {
        group.sort_by(|&a, &b| {
            fleet.vehicles[a]
                .mode_entry_time
                .partial_cmp(&fleet.vehicles[b].mode_entry_time)
                .unwrap()
                .then(a.cmp(&b))
        });
    }
    let mut headcounts = fleet.headcounts(n_modes);
    let next_time = (step as f64 + 1.0) * mesh.dr;
    let mut blocked_out = vec![false; n_modes];
    let mut blocked_in = vec![false; n_modes];
    for i in 0..n_modes {
        for l in 0..mesh.n_u {
            let group = &mut members[i * mesh.n_u + l];
            let n_cell = group.len();
            let mut cursor = 0usize;
            for j in 0..n_modes {
                if j == i {
                    continue;
                }
                let pair = i * (n_modes - 1) + if j < i { j } else { j - 1 };
                let want =
                    transfer_count(n_cell, control.at(step, pair, l), mesh.dr, caps_upper[j]);
                for _ in 0..want {
                    if blocked_out[i] || blocked_in[j] || cursor >= group.len() {
                        break;
                    }
                    if (headcounts[j] + 1) as f64 > n as f64 * caps_upper[j] + 1e-9 {
                        blocked_in[j] = true;
                        break;
                    }
                    if (headcounts[i] as f64 - 1.0) < n as f64 * caps_lower[i] - 1e-9 {
                        blocked_out[i] = true;
                        break;
                    }
                    let vehicle = group[cursor];
                    cursor += 1;
                    fleet.vehicles[vehicle].mode = j;
                    fleet.vehicles[vehicle].mode_entry_time = next_time;
                    headcounts[i] -= 1;
                    headcounts[j] += 1;
                    log.push(TransferEvent { step, vehicle, from_mode: i, to_mode: j });
                }
            }
            // Vehicles consumed by earlier destinations are gone for later
            // ones.
            group.drain(..cursor);
        }
    }
}

/// STEP 2: explicit Euler SoC update, rate evaluated at the current SoC,
/// clamped to [0, 1].
pub fn step_soc(fleet: &mut FleetState, modes: &ModeSet, dr: f64) {
    for v in fleet.vehicles.iter_mut() {
        let rate = modes.mode(v.mode).rate_at(v.soc);
        v.soc = (v.soc + rate * dr).clamp(0.0, 1.0);
    }
    fleet.time += dr;
}

/// Full simulation record.
#[derive(Debug, Clone)]
pub struct SimulationResult {
    /// Headcount per mode at every node 0..=n_steps.
    pub headcounts: Vec<Vec<usize>>,
    /// SoC of every vehicle at every node (node-major).
    pub soc_paths: Vec<Vec<f64>>,
    pub transfers: Vec<TransferEvent>,
    pub final_state: FleetState,
    pub mesh_condition: f64,
}

/// Runs STEP 1 / STEP 2 over the whole horizon. Mass-bound caps are sampled
/// from the solver-node arrays at each deployment step.
pub fn simulate(
    fleet0: FleetState,
    control: &ControlGrid,
    mesh: &DeploymentMesh,
    caps: &ConstraintSpec,
    modes: &ModeSet,
    grid: &Grid,
) -> SimulationResult {
    let n_modes = modes.len();
    let mut fleet = fleet0;
    let mesh_condition =
        mesh_condition_value(fleet.vehicles.len(), mesh, control.max_abs(), grid.horizon);
    let mut headcounts = vec![fleet.headcounts(n_modes)];
    let mut soc_paths = vec![fleet.vehicles.iter().map(|v| v.soc).collect::<Vec<f64>>()];
    let mut transfers = Vec::new();
    for k in 0..mesh.n_steps {
        let node = (((k as f64 * mesh.dr) / grid.dt).floor() as usize).min(grid.n_t);
        let upper: Vec<f64> = (0..n_modes).map(|i| caps.d_upper[i][node]).collect();
        let lower: Vec<f64> = (0..n_modes).map(|i| caps.d_lower[i][node]).collect();
        step_transfers(&mut fleet, control, k, &upper, &lower, mesh, &mut transfers);
        step_soc(&mut fleet, modes, mesh.dr);
        headcounts.push(fleet.headcounts(n_modes));
        soc_paths.push(fleet.vehicles.iter().map(|v| v.soc).collect());
    }
    SimulationResult { headcounts, soc_paths, transfers, final_state: fleet, mesh_condition }
}

/// Summary statistics of a simulation run.
#[derive(Debug, Clone, Serialize)]
pub struct FleetStats {
    /// Vehicles per number-of-transfers bucket.
    pub transfer_histogram: Vec<(usize, usize)>,
    pub total_transfers: usize,
    pub mean_transfers_per_vehicle: f64,
    pub final_soc: Vec<f64>,
    /// Fraction of vehicles strictly below the threshold at the end.
    pub fraction_below_threshold: f64,
    pub threshold: f64,
    /// First time each vehicle reached the threshold, seconds.
    pub first_passage_times: Vec<Option<f64>>,
    /// Occupancy fraction per mode per node.
    pub occupancy: Vec<Vec<f64>>,
}

/// Computes fleet statistics; `threshold` is the SoC level of interest
/// (first-passage times and the terminal shortfall fraction).
pub fn fleet_stats(result: &SimulationResult, threshold: f64, mesh: &DeploymentMesh) -> FleetStats {
    let n = result.final_state.vehicles.len();
    let mut per_vehicle = vec![0usize; n];
    for t in &result.transfers {
        per_vehicle[t.vehicle] += 1;
    }
    let mut histogram = std::collections::BTreeMap::new();
    for &c in &per_vehicle {
        *histogram.entry(c).or_insert(0usize) += 1;
    }
    let total_transfers = result.transfers.len();
    let final_soc: Vec<f64> = result.final_state.vehicles.iter().map(|v| v.soc).collect();
    let below = final_soc.iter().filter(|&&s| s < threshold).count();
    let first_passage_times = (0..n)
        .map(|z| {
            result
                .soc_paths
                .iter()
                .position(|node| node[z] >= threshold)
                .map(|k| k as f64 * mesh.dr)
        })
        .collect();
    let occupancy = result
        .headcounts
        .iter()
        .map(|counts| counts.iter().map(|&c| c as f64 / n as f64).collect())
        .collect();
    FleetStats {
        transfer_histogram: histogram.into_iter().collect(),
        total_transfers,
        mean_transfers_per_vehicle: total_transfers as f64 / n as f64,
        final_soc,
        fraction_below_threshold: below as f64 / n as f64,
        threshold,
        first_passage_times,
        occupancy,
    }
}

/// Sup-distance between the empirical occupancy curves and the continuum
/// occupancy of a density field (compared at the deployment nodes; the
/// continuum is sampled at the nearest solver node).
pub fn occupancy_sup_distance(
    occupancy: &[Vec<f64>],
    m: &DensityField,
    grid: &Grid,
    mesh: &DeploymentMesh,
) -> f64 {
    let mut worst = 0.0f64;
    for (k, emp) in occupancy.iter().enumerate() {
        let t = (k as f64 * mesh.dr).min(grid.horizon);
        let node = ((t / grid.dt).round() as usize).min(grid.n_t);
        for (i, &frac) in emp.iter().enumerate() {
            worst = worst.max((frac - m.mode_mass(node, i)).abs());
        }
    }
    worst
}
