//! Discrete transport dynamics: the reaction/advection splitting scheme, the
//! stacked linear constraint operator with its adjoint, the CFL check and
//! feasibility reporting for the inequality constraints.
//!
//! One step advances the occupancy in two sub-steps. The reaction sub-step
//! applies the mode transfers,
//!
//! ```text
//! m_half[i][l] = m[k][i][l] + dt * sum_{j != i} (E[j->i][l] - E[i->j][l])
//! ```
//!
//! and the advection sub-step transports each mode along the SoC axis with a
//! first-order upwind stencil, the direction chosen by the sign of the rate.
//! Ghost cells hold zero density; together with the boundary conditions on
//! the rates (b(1) = 0 for charging, b(0) = 0 for draining) the scheme is
//! exactly conservative.

use crate::grid::{DensityField, FlowField, Grid, Mode, ModeSet, RateSign};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConstraintError {
    #[error("mass bounds must satisfy 0 <= lower <= upper <= 1 (mode {mode}, node {node})")]
    BadBounds { mode: usize, node: usize },
    #[error("epsilon must lie in [0,1], got {0}")]
    BadEpsilon(f64),
    #[error("SoC threshold must lie in (0,1), got {0}")]
    BadThreshold(f64),
    #[error("bounds arrays must cover {expected} modes x {nodes} nodes")]
    BadShape { expected: usize, nodes: usize },
}

/// Largest Courant number over the mode set, `max_i ||b_i||_inf * dt/h`.
/// Values above 1 make the upwind step unstable; callers treat that as fatal.
pub fn check_cfl(grid: &Grid, modes: &ModeSet) -> f64 {
    modes.iter().map(|m| m.max_abs_rate()).fold(0.0f64, f64::max) * grid.courant_factor()
}

/// Reaction sub-step on one time node: applies the transfer fluxes of step
/// `k` to every (mode, cell). `m_node` has layout `[mode][cell]`, `e_step`
/// has layout `[pair][cell]`. Total mass is unchanged exactly.
pub fn reaction_step(m_node: &[f64], e_step: &[f64], modes: &ModeSet, dt: f64) -> Vec<f64> {
    let n_modes = modes.len();
    let n_h = m_node.len() / n_modes;
    let mut out = m_node.to_vec();
    for i in 0..n_modes {
        for j in 0..n_modes {
            if i == j {
                continue;
            }
            let p_out = modes.pair_index(i, j);
            let src = &e_step[p_out * n_h..(p_out + 1) * n_h];
            for l in 0..n_h {
                let flux = dt * src[l];
                out[i * n_h + l] -= flux;
                out[j * n_h + l] += flux;
            }
        }
    }
    out
}

/// Upwind transport of one mode's post-reaction slice. Requires CFL <= 1 for
/// positivity; conserves the slice sum to round-off.
pub fn advection_step(m_half: &[f64], mode: &Mode, grid: &Grid) -> Vec<f64> {
    let mut out = vec![0.0; m_half.len()];
    advect_apply(&mut out, m_half, mode.half_point_rates(), mode.sign(), grid.courant_factor());
    out
}

/// out = A v where A is the one-mode advection matrix.
#[inline]
pub(crate) fn advect_apply(out: &mut [f64], v: &[f64], rate: &[f64], sign: RateSign, nu: f64) {
    let n = v.len();
    match sign {
        RateSign::NonNegative => {
            // out[l] = v[l] (1 - nu b_{l+1/2}) + nu b_{l-1/2} v[l-1]
            let mut prev = 0.0;
            for l in 0..n {
                out[l] = v[l] * (1.0 - nu * rate[l + 1]) + nu * rate[l] * prev;
                prev = v[l];
            }
        }
        RateSign::NonPositive => {
            // out[l] = v[l] (1 + nu b_{l-1/2}) - nu b_{l+1/2} v[l+1]
            for l in 0..n {
                let next = if l + 1 < n { v[l + 1] } else { 0.0 };
                out[l] = v[l] * (1.0 + nu * rate[l]) - nu * rate[l + 1] * next;
            }
        }
    }
}

/// out = A^T w (transpose of `advect_apply`).
#[inline]
pub(crate) fn advect_apply_transpose(
    out: &mut [f64],
    w: &[f64],
    rate: &[f64],
    sign: RateSign,
    nu: f64,
) {
    let n = w.len();
    match sign {
        RateSign::NonNegative => {
            for l in 0..n {
                let next = if l + 1 < n { w[l + 1] } else { 0.0 };
                out[l] = w[l] * (1.0 - nu * rate[l + 1]) + nu * rate[l + 1] * next;
            }
        }
        RateSign::NonPositive => {
            let mut prev = 0.0;
            for l in 0..n {
                out[l] = w[l] * (1.0 + nu * rate[l]) - nu * rate[l] * prev;
                prev = w[l];
            }
        }
    }
}

/// Flat layout of the stacked primal unknowns: occupancy values first,
/// transfer fluxes second.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrimalLayout {
    pub n_t: usize,
    pub n_modes: usize,
    pub n_h: usize,
}

impl PrimalLayout {
    pub fn new(grid: &Grid, modes: &ModeSet) -> PrimalLayout {
        PrimalLayout { n_t: grid.n_t, n_modes: modes.len(), n_h: grid.n_h }
    }

    /// Occupancy block size, (n_t + 1) * I * n_h.
    pub fn n_m(&self) -> usize {
        (self.n_t + 1) * self.n_modes * self.n_h
    }

    /// Flux block size, n_t * I * (I - 1) * n_h.
    pub fn n_e(&self) -> usize {
        self.n_t * self.n_modes * (self.n_modes - 1) * self.n_h
    }

    pub fn len(&self) -> usize {
        self.n_m() + self.n_e()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn m_index(&self, k: usize, i: usize, l: usize) -> usize {
        (k * self.n_modes + i) * self.n_h + l
    }

    #[inline]
    pub fn e_index(&self, k: usize, pair: usize, l: usize) -> usize {
        self.n_m() + (k * self.n_modes * (self.n_modes - 1) + pair) * self.n_h + l
    }

    pub fn split<'a>(&self, y: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        y.split_at(self.n_m())
    }

    pub fn pack(&self, m: &DensityField, e: &FlowField) -> Vec<f64> {
        let mut y = Vec::with_capacity(self.len());
        y.extend_from_slice(m.values());
        y.extend_from_slice(e.values());
        y
    }

    pub fn unpack(&self, y: &[f64]) -> (DensityField, FlowField) {
        let (m, e) = self.split(y);
        (
            DensityField::from_values(self.n_t, self.n_modes, self.n_h, m.to_vec()),
            FlowField::from_values(self.n_t, self.n_modes, self.n_h, e.to_vec()),
        )
    }
}

/// Residual of the discrete dynamics, shaped like a `DensityField`: node 0
/// holds the initial-condition block, node k+1 the evolution equation of
/// step k. Zero everywhere iff (m, E) is a trajectory of the scheme.
#[derive(Debug, Clone)]
pub struct DynamicsResidual(pub DensityField);

impl DynamicsResidual {
    pub fn initial_block(&self) -> &[f64] {
        self.0.node_slice(0)
    }

    pub fn evolution_block(&self, k: usize) -> &[f64] {
        self.0.node_slice(k + 1)
    }

    pub fn max_abs(&self) -> f64 {
        self.0.values().iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// The stacked linear operator of the scheme equations, acting on the flat
/// primal vector. Rates and stencil factors are frozen at construction.
#[derive(Debug, Clone)]
pub struct TransportOperator {
    layout: PrimalLayout,
    dt: f64,
    nu: f64,
    /// Weight of the flux block in the reaction term: `dt / flux_scale`.
    /// Plain operators act on E (weight dt); the solver rescales its flux
    /// unknowns to dt*E so the operator columns stay O(1).
    coupling: f64,
    rates: Vec<Vec<f64>>,
    signs: Vec<RateSign>,
}

impl TransportOperator {
    pub fn new(grid: &Grid, modes: &ModeSet) -> TransportOperator {
        TransportOperator::with_flux_scale(grid, modes, 1.0)
    }

    /// Operator acting on `(m, flux_scale * E)` instead of `(m, E)`.
    pub fn with_flux_scale(grid: &Grid, modes: &ModeSet, flux_scale: f64) -> TransportOperator {
        TransportOperator {
            layout: PrimalLayout::new(grid, modes),
            dt: grid.dt,
            nu: grid.courant_factor(),
            coupling: grid.dt / flux_scale,
            rates: modes.iter().map(|m| m.half_point_rates().to_vec()).collect(),
            signs: modes.iter().map(|m| m.sign()).collect(),
        }
    }

    pub fn layout(&self) -> PrimalLayout {
        self.layout
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Applies the homogeneous operator: `out[node 0] = m[0]`,
    /// `out[node k+1] = m[k+1] - advect(m[k] + dt * net_flux(e[k]))`.
    /// `out` has `n_m` entries in `DensityField` layout.
    pub fn apply_forward(&self, y: &[f64], out: &mut [f64]) {
        let lay = self.layout;
        let (n_t, n_modes, n_h) = (lay.n_t, lay.n_modes, lay.n_h);
        let (m, e) = lay.split(y);
        out[..n_modes * n_h].copy_from_slice(&m[..n_modes * n_h]);
        let mut half = vec![0.0; n_h];
        let mut adv = vec![0.0; n_h];
        for k in 0..n_t {
            for i in 0..n_modes {
                self.reaction_slice(&mut half, m, e, k, i);
                advect_apply(&mut adv, &half, &self.rates[i], self.signs[i], self.nu);
                let row = (k + 1) * n_modes * n_h + i * n_h;
                let m_next = &m[row..row + n_h];
                for l in 0..n_h {
                    out[row + l] = m_next[l] - adv[l];
                }
            }
        }
    }

    /// half = m[k][i] + dt * sum_{j != i} (e[j->i] - e[i->j])
    #[inline]
    fn reaction_slice(&self, half: &mut [f64], m: &[f64], e: &[f64], k: usize, i: usize) {
        let lay = self.layout;
        let (n_modes, n_h) = (lay.n_modes, lay.n_h);
        let base = (k * n_modes + i) * n_h;
        half.copy_from_slice(&m[base..base + n_h]);
        let e_step = k * n_modes * (n_modes - 1) * n_h;
        for j in 0..n_modes {
            if j == i {
                continue;
            }
            let p_in = pair_index(n_modes, j, i);
            let p_out = pair_index(n_modes, i, j);
            let src_in = e_step + p_in * n_h;
            let src_out = e_step + p_out * n_h;
            for l in 0..n_h {
                half[l] += self.coupling * (e[src_in + l] - e[src_out + l]);
            }
        }
    }

    /// Adjoint of `apply_forward`: `lam` has `n_m` entries, `out` is a full
    /// primal vector with `<C y, lam> = <y, out>` for every `y`.
    pub fn apply_adjoint(&self, lam: &[f64], out: &mut [f64]) {
        let lay = self.layout;
        let (n_t, n_modes, n_h) = (lay.n_t, lay.n_modes, lay.n_h);
        out.fill(0.0);
        // Identity parts: every lambda row credits its own m coordinate.
        out[..lay.n_m()].copy_from_slice(lam);
        let mut at_lam = vec![0.0; n_h];
        for k in 0..n_t {
            for i in 0..n_modes {
                let row = (k + 1) * n_modes * n_h + i * n_h;
                advect_apply_transpose(
                    &mut at_lam,
                    &lam[row..row + n_h],
                    &self.rates[i],
                    self.signs[i],
                    self.nu,
                );
                // m[k][i] enters row k+1 through -A_i.
                let m_base = (k * n_modes + i) * n_h;
                for l in 0..n_h {
                    out[m_base + l] -= at_lam[l];
                }
                // e[k][i->j] enters row (k+1, i) with +dt A_i and row
                // (k+1, j) with -dt A_j.
                for j in 0..n_modes {
                    if j == i {
                        continue;
                    }
                    let p_out = lay.e_index(k, pair_index(n_modes, i, j), 0);
                    let p_in = lay.e_index(k, pair_index(n_modes, j, i), 0);
                    for l in 0..n_h {
                        out[p_out + l] += self.coupling * at_lam[l];
                        out[p_in + l] -= self.coupling * at_lam[l];
                    }
                }
            }
        }
    }

    /// `C(m, E) - (m0, 0)` as a typed residual.
    pub fn residual(&self, m: &DensityField, e: &FlowField, m0: &[f64]) -> DynamicsResidual {
        let y = self.layout.pack(m, e);
        let mut out = vec![0.0; self.layout.n_m()];
        self.apply_forward(&y, &mut out);
        for (o, m0v) in out.iter_mut().zip(m0) {
            *o -= m0v;
        }
        DynamicsResidual(DensityField::from_values(
            self.layout.n_t,
            self.layout.n_modes,
            self.layout.n_h,
            out,
        ))
    }

    /// Runs the scheme forward from the initial cell values under the given
    /// fluxes. `m0` has layout `[mode][cell]`.
    pub fn rollout(&self, m0: &[f64], e: &FlowField) -> DensityField {
        let lay = self.layout;
        let (n_t, n_modes, n_h) = (lay.n_t, lay.n_modes, lay.n_h);
        let mut m = DensityField::zeros(n_t, n_modes, n_h);
        m.values_mut()[..n_modes * n_h].copy_from_slice(m0);
        let mut adv = vec![0.0; n_h];
        for k in 0..n_t {
            // Reaction over the whole node, then per-mode transport.
            let mut half = m.node_slice(k).to_vec();
            let e_step = &e.values()
                [k * n_modes * (n_modes - 1) * n_h..(k + 1) * n_modes * (n_modes - 1) * n_h];
            for i in 0..n_modes {
                for j in 0..n_modes {
                    if i == j {
                        continue;
                    }
                    let p = pair_index(n_modes, i, j);
                    for l in 0..n_h {
                        let flux = self.coupling * e_step[p * n_h + l];
                        half[i * n_h + l] -= flux;
                        half[j * n_h + l] += flux;
                    }
                }
            }
            for i in 0..n_modes {
                advect_apply(
                    &mut adv,
                    &half[i * n_h..(i + 1) * n_h],
                    &self.rates[i],
                    self.signs[i],
                    self.nu,
                );
                m.mode_slice_mut(k + 1, i).copy_from_slice(&adv);
            }
        }
        m
    }
}

#[inline]
pub(crate) fn pair_index(n_modes: usize, i: usize, j: usize) -> usize {
    i * (n_modes - 1) + if j < i { j } else { j - 1 }
}

/// Applies the constraint operator and subtracts the right-hand side.
pub fn apply_constraint_operator(
    op: &TransportOperator,
    m: &DensityField,
    e: &FlowField,
    m0: &[f64],
) -> DynamicsResidual {
    op.residual(m, e, m0)
}

/// Adjoint of the homogeneous constraint operator on typed fields.
pub fn apply_adjoint(op: &TransportOperator, lam: &DensityField) -> (DensityField, FlowField) {
    let mut out = vec![0.0; op.layout().len()];
    op.apply_adjoint(lam.values(), &mut out);
    op.layout().unpack(&out)
}

/// Forward scheme rollout; see `TransportOperator::rollout`.
pub fn forward_rollout(
    m0: &[f64],
    e: &FlowField,
    grid: &Grid,
    modes: &ModeSet,
) -> DensityField {
    TransportOperator::new(grid, modes).rollout(m0, e)
}

/// Mass bounds per mode and time node, terminal SoC threshold and the
/// allowed terminal mass below it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstraintSpec {
    /// Lower mass bound per mode, per node 0..=n_t.
    pub d_lower: Vec<Vec<f64>>,
    /// Upper mass bound per mode, per node 0..=n_t.
    pub d_upper: Vec<Vec<f64>>,
    /// Terminal SoC threshold in (0,1).
    pub s_min: f64,
    /// Allowed terminal mass at or below the threshold.
    pub epsilon: f64,
    /// Index of the highest cell counted by the terminal constraint,
    /// ceil(s_min / h).
    pub s_min_cells: usize,
}

impl ConstraintSpec {
    pub fn new(
        d_lower: Vec<Vec<f64>>,
        d_upper: Vec<Vec<f64>>,
        s_min: f64,
        epsilon: f64,
        grid: &Grid,
    ) -> Result<ConstraintSpec, ConstraintError> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(ConstraintError::BadEpsilon(epsilon));
        }
        if !(s_min > 0.0 && s_min < 1.0) {
            return Err(ConstraintError::BadThreshold(s_min));
        }
        let nodes = grid.n_t + 1;
        if d_lower.len() != d_upper.len()
            || d_lower.iter().any(|v| v.len() != nodes)
            || d_upper.iter().any(|v| v.len() != nodes)
        {
            return Err(ConstraintError::BadShape { expected: d_lower.len(), nodes });
        }
        for (i, (lo, hi)) in d_lower.iter().zip(&d_upper).enumerate() {
            for k in 0..nodes {
                if !(0.0 <= lo[k] && lo[k] <= hi[k] && hi[k] <= 1.0) {
                    return Err(ConstraintError::BadBounds { mode: i, node: k });
                }
            }
        }
        let s_min_cells = ((s_min / grid.h) - 1e-9).ceil() as usize;
        Ok(ConstraintSpec { d_lower, d_upper, s_min, epsilon, s_min_cells })
    }

    /// Constant-in-time bounds from per-mode scalars.
    pub fn constant_bounds(
        lower: &[f64],
        upper: &[f64],
        s_min: f64,
        epsilon: f64,
        grid: &Grid,
    ) -> Result<ConstraintSpec, ConstraintError> {
        let nodes = grid.n_t + 1;
        ConstraintSpec::new(
            lower.iter().map(|&v| vec![v; nodes]).collect(),
            upper.iter().map(|&v| vec![v; nodes]).collect(),
            s_min,
            epsilon,
            grid,
        )
    }

    /// Vacuous constraints: bounds `[0,1]` and epsilon 1.
    pub fn unconstrained(n_modes: usize, grid: &Grid) -> ConstraintSpec {
        ConstraintSpec::constant_bounds(
            &vec![0.0; n_modes],
            &vec![1.0; n_modes],
            0.5,
            1.0,
            grid,
        )
        .expect("vacuous bounds are valid")
    }

    pub fn n_modes(&self) -> usize {
        self.d_lower.len()
    }
}

/// Worst violation of each inequality constraint family; zeros mean the
/// point is feasible. Violations are reported, never thrown.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FeasibilityReport {
    /// Per-cell flux budget: `dt * sum_j E[i->j] <= m[i]` (checked per cell).
    pub flow_budget: f64,
    /// Flux nonnegativity: E >= 0.
    pub flow_nonneg: f64,
    /// Mass bounds: d_lower <= h * sum_l m <= d_upper.
    pub mass_bounds: f64,
    /// Terminal mass at or below the SoC threshold <= epsilon.
    pub terminal_soc: f64,
}

impl FeasibilityReport {
    pub fn max(&self) -> f64 {
        self.flow_budget.max(self.flow_nonneg).max(self.mass_bounds).max(self.terminal_soc)
    }
}

/// Evaluates the worst violation of each inequality family at (m, E).
pub fn feasibility_report(
    m: &DensityField,
    e: &FlowField,
    spec: &ConstraintSpec,
    dt: f64,
) -> FeasibilityReport {
    let (n_t, n_modes, n_h) = (m.n_t, m.n_modes, m.n_h);
    let h = 1.0 / n_h as f64;
    let mut flow_budget = 0.0f64;
    let mut flow_nonneg = 0.0f64;
    for k in 0..n_t {
        for i in 0..n_modes {
            for l in 0..n_h {
                let mut out_flux = 0.0;
                for j in 0..n_modes {
                    if j == i {
                        continue;
                    }
                    let v = e.at(k, pair_index(n_modes, i, j), l);
                    flow_nonneg = flow_nonneg.max(-v);
                    out_flux += v;
                }
                flow_budget = flow_budget.max(dt * out_flux - m.at(k, i, l));
            }
        }
    }
    let mut mass_bounds = 0.0f64;
    for k in 0..=n_t {
        for i in 0..n_modes {
            let mass = m.mode_mass(k, i);
            mass_bounds = mass_bounds.max(spec.d_lower[i][k] - mass).max(mass - spec.d_upper[i][k]);
        }
    }
    let top = spec.s_min_cells.min(n_h - 1);
    let mut low_mass = 0.0;
    for i in 0..n_modes {
        for l in 0..=top {
            low_mass += m.at(n_t, i, l) * h;
        }
    }
    FeasibilityReport {
        flow_budget,
        flow_nonneg,
        mass_bounds,
        terminal_soc: (low_mass - spec.epsilon).max(0.0),
    }
}
