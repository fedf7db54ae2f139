//! Saddle-point assembly: the objective is split into a separable part
//! handled by exact primal proxes (switching perspectives with the per-cell
//! flux budget, linear energy weights, terminal penalty) and linear dual
//! blocks with closed-form conjugate proxes (scheme dynamics, mass-bound
//! intervals, terminal-SoC halfspace, tracking quadratic).

use crate::costs::{
    perspective_cost, prox_perspective_group, prox_terminal, CostSpec, PerspectiveParams,
};
use crate::dynamics::{check_cfl, ConstraintSpec, PrimalLayout, TransportOperator};
use crate::grid::{DensityField, FlowField, Grid, ModeSet};
use crate::scenario::Scenario;
use crate::solver::SolverError;

/// Combined norm budget for the secondary dual blocks; keeps the stacked
/// operator norm close to the identity block's 1 so the step sizes used by
/// the bundled scenarios remain admissible.
const SECONDARY_NORM_BUDGET: f64 = 0.08;

/// Mass-bound interval block: rows are `scale * h * sum_l m[k][i][l]`.
#[derive(Debug, Clone)]
pub struct MassBoundsBlock {
    pub scale: f64,
    /// Scaled interval per (mode, node), flattened mode-major.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Terminal low-SoC halfspace block: one row,
/// `scale * h * sum_{i, l <= top} m[n_t][i][l] <= scale * epsilon`.
#[derive(Debug, Clone)]
pub struct SocBlock {
    pub scale: f64,
    pub top_cell: usize,
    pub bound: f64,
}

/// Tracking penalty handled inside the separable prox: the sum coupling
/// reduces to one scalar consistency equation per step, solved exactly, so
/// the occupancy cells keep a single joint prox with their flux groups.
#[derive(Debug, Clone)]
pub struct TrackingPrimal {
    pub mode: usize,
    /// 2 * lambda_k * dt per step (curvature of the quadratic).
    pub curvature: Vec<f64>,
    pub target: Vec<f64>,
}

/// Separable terminal penalty data, one weight/target per (mode, cell).
#[derive(Debug, Clone)]
pub struct TerminalPenalty {
    pub beta: Vec<f64>,
    pub target: Vec<f64>,
}

pub struct SaddlePointProblem {
    pub grid: Grid,
    pub modes: ModeSet,
    pub layout: PrimalLayout,
    pub m0: Vec<f64>,
    pub constraints: ConstraintSpec,
    pub costs: CostSpec,
    /// Per (step, mode): linear objective weight on each occupancy cell
    /// (electricity term), pre-multiplied by h * dt / 3600.
    pub cell_linear: Vec<f64>,
    /// Per ordered pair: perspective weights scaled by h * dt.
    pub pair_weights: Vec<PerspectiveParams>,
    pub terminal: Option<TerminalPenalty>,
    pub tracking: Option<TrackingPrimal>,
    pub mass_block: MassBoundsBlock,
    pub soc_block: Option<SocBlock>,
    pub operator_norm_estimate: f64,
    /// Relative change of the estimate over the last power-iteration step.
    pub operator_norm_delta: f64,
}

/// Assembles the saddle-point problem from a scenario. Rejects unstable
/// grids (CFL > 1) and mismatched array lengths.
pub fn build_saddle_problem(scenario: &Scenario) -> Result<SaddlePointProblem, SolverError> {
    let grid = scenario.grid;
    let modes = scenario.modes.clone();
    let cfl = check_cfl(&grid, &modes);
    if cfl > 1.0 + 1e-12 {
        return Err(SolverError::CflViolation(cfl));
    }
    let layout = PrimalLayout::new(&grid, &modes);
    let costs = scenario.costs.clone();
    if costs.switching.len() != modes.n_pairs() {
        return Err(SolverError::ShapeMismatch(format!(
            "switching weights: {} pairs expected, got {}",
            modes.n_pairs(),
            costs.switching.len()
        )));
    }
    if let Some(p) = &costs.prices {
        if p.len() != grid.n_t {
            return Err(SolverError::ShapeMismatch(format!(
                "price signal: {} steps expected, got {}",
                grid.n_t,
                p.len()
            )));
        }
    }
    let m0: Vec<f64> = scenario.initial.concat();
    if m0.len() != modes.len() * grid.n_h {
        return Err(SolverError::ShapeMismatch("initial distribution shape".into()));
    }

    let mut cell_linear = vec![0.0; grid.n_t * modes.len()];
    if let Some(prices) = &costs.prices {
        for k in 0..grid.n_t {
            for (i, mode) in modes.iter().enumerate() {
                cell_linear[k * modes.len() + i] =
                    mode.power_kw * prices[k] * grid.h * grid.dt / 3600.0;
            }
        }
    }
    // The solver's flux unknowns are rescaled to dt*E so the constraint
    // operator's columns stay O(1); the h*dt objective weight of a transfer
    // term in E-units becomes theta*h / theta_tilde*h/dt in scaled units,
    // and the per-cell budget turns into sum(e_scaled) <= m.
    let pair_weights: Vec<PerspectiveParams> = costs
        .switching
        .iter()
        .map(|p| PerspectiveParams::new(p.theta * grid.h, p.theta_tilde * grid.h / grid.dt))
        .collect();

    let terminal = match &costs.terminal {
        None => None,
        Some(t) => {
            if t.beta.len() != modes.len()
                || t.target.len() != modes.len()
                || t.beta.iter().any(|b| b.len() != grid.n_h)
                || t.target.iter().any(|b| b.len() != grid.n_h)
            {
                return Err(SolverError::ShapeMismatch("terminal penalty shape".into()));
            }
            Some(TerminalPenalty {
                beta: t.beta.concat(),
                target: t.target.concat(),
            })
        }
    };

    // Secondary block scaling: interval/halfspace projections absorb a
    // positive row scale exactly, so shrink each block to fit the norm
    // budget next to the identity-mapped dynamics block.
    let spec = &scenario.constraints;
    if spec.n_modes() != modes.len() {
        return Err(SolverError::ShapeMismatch("constraint bounds shape".into()));
    }
    let soc_active = spec.epsilon < 1.0;
    let tracking = match &costs.tracking {
        None => None,
        Some(t) => {
            if t.lambda.len() != grid.n_t || t.target.len() != grid.n_t || t.mode >= modes.len() {
                return Err(SolverError::ShapeMismatch("tracking term shape".into()));
            }
            Some(TrackingPrimal {
                mode: t.mode,
                curvature: t.lambda.iter().map(|l| 2.0 * l * grid.dt).collect(),
                target: t.target.clone(),
            })
        }
    };
    let n_blocks = 1 + soc_active as usize;
    let per_block = SECONDARY_NORM_BUDGET / n_blocks as f64;

    let mass_norm = grid.h * (grid.n_h as f64).sqrt();
    let mass_scale = per_block.sqrt() / mass_norm;
    let nodes = grid.n_t + 1;
    let mut lower = vec![0.0; modes.len() * nodes];
    let mut upper = vec![0.0; modes.len() * nodes];
    for i in 0..modes.len() {
        for k in 0..nodes {
            lower[i * nodes + k] = mass_scale * spec.d_lower[i][k];
            upper[i * nodes + k] = mass_scale * spec.d_upper[i][k];
        }
    }
    let mass_block = MassBoundsBlock { scale: mass_scale, lower, upper };

    let soc_block = if soc_active {
        let top = spec.s_min_cells.min(grid.n_h - 1);
        let norm = grid.h * ((modes.len() * (top + 1)) as f64).sqrt();
        let scale = per_block.sqrt() / norm;
        Some(SocBlock { scale, top_cell: top, bound: scale * spec.epsilon })
    } else {
        None
    };

    let mut problem = SaddlePointProblem {
        grid,
        modes,
        layout,
        m0,
        constraints: scenario.constraints.clone(),
        costs,
        cell_linear,
        pair_weights,
        terminal,
        tracking,
        mass_block,
        soc_block,
        operator_norm_estimate: 1.0,
        operator_norm_delta: 0.0,
    };
    let (norm, delta) = problem.estimate_operator_norm(100);
    problem.operator_norm_estimate = norm;
    problem.operator_norm_delta = delta;
    Ok(problem)
}

impl SaddlePointProblem {
    pub fn transport_operator(&self) -> TransportOperator {
        TransportOperator::new(&self.grid, &self.modes)
    }

    /// The operator in the solver's internal scaling (flux block dt*E).
    pub fn scaled_operator(&self) -> TransportOperator {
        TransportOperator::with_flux_scale(&self.grid, &self.modes, self.grid.dt)
    }

    /// Packs plain fields into the solver's scaled vector.
    pub fn pack_scaled(&self, m: &DensityField, e: &FlowField) -> Vec<f64> {
        let mut y = self.layout.pack(m, e);
        for v in &mut y[self.layout.n_m()..] {
            *v *= self.grid.dt;
        }
        y
    }

    /// Splits the solver's scaled vector back into plain fields.
    pub fn unpack_scaled(&self, y: &[f64]) -> (DensityField, FlowField) {
        let mut plain = y.to_vec();
        for v in &mut plain[self.layout.n_m()..] {
            *v /= self.grid.dt;
        }
        self.layout.unpack(&plain)
    }

    /// Sizes of the secondary dual blocks (mass rows, soc rows).
    pub fn dual_sizes(&self) -> (usize, usize) {
        let mass = self.modes.len() * (self.grid.n_t + 1);
        let soc = self.soc_block.is_some() as usize;
        (mass, soc)
    }

    /// Scaled mass-sum rows: `out[(i, k)] = scale * h * sum_l m[k][i][l]`.
    pub fn apply_mass_rows(&self, y: &[f64], out: &mut [f64]) {
        let lay = self.layout;
        let nodes = lay.n_t + 1;
        let w = self.mass_block.scale * self.grid.h;
        for i in 0..lay.n_modes {
            for k in 0..nodes {
                let base = lay.m_index(k, i, 0);
                out[i * nodes + k] = w * y[base..base + lay.n_h].iter().sum::<f64>();
            }
        }
    }

    /// Adjoint of `apply_mass_rows`, accumulated into `out`.
    pub fn add_mass_rows_transpose(&self, sigma: &[f64], out: &mut [f64]) {
        let lay = self.layout;
        let nodes = lay.n_t + 1;
        let w = self.mass_block.scale * self.grid.h;
        for i in 0..lay.n_modes {
            for k in 0..nodes {
                let s = w * sigma[i * nodes + k];
                let base = lay.m_index(k, i, 0);
                for v in &mut out[base..base + lay.n_h] {
                    *v += s;
                }
            }
        }
    }

    /// Scaled terminal low-SoC row.
    pub fn apply_soc_row(&self, y: &[f64]) -> f64 {
        let Some(block) = &self.soc_block else { return 0.0 };
        let lay = self.layout;
        let w = block.scale * self.grid.h;
        let mut total = 0.0;
        for i in 0..lay.n_modes {
            let base = lay.m_index(lay.n_t, i, 0);
            total += y[base..base + block.top_cell + 1].iter().sum::<f64>();
        }
        w * total
    }

    pub fn add_soc_row_transpose(&self, sigma: f64, out: &mut [f64]) {
        let Some(block) = &self.soc_block else { return };
        let lay = self.layout;
        let w = block.scale * self.grid.h;
        for i in 0..lay.n_modes {
            let base = lay.m_index(lay.n_t, i, 0);
            for v in &mut out[base..base + block.top_cell + 1] {
                *v += w * sigma;
            }
        }
    }

    /// Power iteration on K^T K for the stacked operator `K = [I; mass; soc]`;
    /// returns (norm estimate, last relative change).
    pub fn estimate_operator_norm(&self, rounds: usize) -> (f64, f64) {
        let n = self.layout.len();
        let (mass_n, _) = self.dual_sizes();
        let mut v: Vec<f64> = (0..n).map(|i| 1.0 + ((i * 31 % 19) as f64) * 0.01).collect();
        normalize(&mut v);
        let mut mass = vec![0.0; mass_n];
        let mut estimate = 1.0f64;
        let mut delta = 0.0;
        for _ in 0..rounds {
            // w = K^T K v = v + sum_r K_r^T K_r v
            let mut w = v.clone();
            self.apply_mass_rows(&v, &mut mass);
            self.add_mass_rows_transpose(&mass, &mut w);
            if self.soc_block.is_some() {
                let s = self.apply_soc_row(&v);
                self.add_soc_row_transpose(s, &mut w);
            }
            let lambda = w.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
            let next = lambda.sqrt();
            delta = (next - estimate).abs() / next.max(1e-300);
            estimate = next;
            v = w;
            normalize(&mut v);
        }
        (estimate, delta)
    }

    /// In-place primal prox sweep: every occupancy cell below the horizon is
    /// grouped with its outgoing fluxes (perspective weights, linear energy
    /// shift, per-cell flux budget); the tracked mode's slices additionally
    /// solve the sum-coupled tracking term exactly through a scalar
    /// consistency equation; terminal cells take the terminal-penalty prox
    /// or pass through. `warm_mu` carries the per-step tracking multiplier
    /// between calls (pass zeros when cold).
    pub fn prox_primal(
        &self,
        z: &mut [f64],
        tau: f64,
        warm_mu: &mut [f64],
    ) -> Result<(), SolverError> {
        let lay = self.layout;
        let n_modes = lay.n_modes;
        let cap = 1.0; // scaled flux: sum(e) <= m
        let mut b0 = vec![0.0; n_modes - 1];
        let mut params = vec![PerspectiveParams::zero(); n_modes - 1];
        let mut e_idx = vec![0usize; n_modes - 1];
        for k in 0..lay.n_t {
            for i in 0..n_modes {
                if self.tracking.as_ref().map(|t| t.mode) == Some(i) {
                    continue; // sum-coupled slice handled below
                }
                for (slot, j) in (0..n_modes).filter(|&j| j != i).enumerate() {
                    let p = self.modes.pair_index(i, j);
                    params[slot] = self.pair_weights[p];
                    e_idx[slot] = lay.e_index(k, p, 0);
                }
                let linear = self.cell_linear[k * n_modes + i];
                for l in 0..lay.n_h {
                    let m_idx = lay.m_index(k, i, l);
                    let a0 = z[m_idx] - tau * linear;
                    for s in 0..n_modes - 1 {
                        b0[s] = z[e_idx[s] + l];
                    }
                    let (a, b) = prox_perspective_group(a0, &b0, tau, &params, Some(cap))
                        .map_err(|e| {
                            SolverError::ProxFailure(format!("cell ({k},{i},{l}): {e}"))
                        })?;
                    z[m_idx] = a;
                    for s in 0..n_modes - 1 {
                        z[e_idx[s] + l] = b[s];
                    }
                }
            }
            if self.tracking.is_some() {
                let mu = self.prox_tracked_slice(z, tau, k, warm_mu[k])?;
                warm_mu[k] = mu;
            }
        }
        if let Some(term) = &self.terminal {
            for i in 0..n_modes {
                for l in 0..lay.n_h {
                    let m_idx = lay.m_index(lay.n_t, i, l);
                    let flat = i * lay.n_h + l;
                    z[m_idx] = prox_terminal(
                        z[m_idx],
                        tau,
                        term.beta[flat],
                        term.target[flat],
                        self.grid.h,
                    );
                }
            }
        }
        Ok(())
    }

    /// Joint prox of the tracked mode's step-k slice: per-cell perspective
    /// groups plus the tracking quadratic of the cell sum. With the sum
    /// price mu fixed the cells separate, so the slice reduces to the
    /// strictly increasing consistency equation
    /// `F(mu) = mu - c_k (h S(mu) - u_k) = 0`, bracketed around the warm
    /// start and bisected. Returns the converged multiplier.
    fn prox_tracked_slice(
        &self,
        z: &mut [f64],
        tau: f64,
        k: usize,
        warm: f64,
    ) -> Result<f64, SolverError> {
        let tr = self.tracking.as_ref().expect("tracking data");
        let lay = self.layout;
        let n_modes = lay.n_modes;
        let (i, h, cap) = (tr.mode, self.grid.h, 1.0);
        let linear = self.cell_linear[k * n_modes + i];
        let mut params = vec![PerspectiveParams::zero(); n_modes - 1];
        let mut e_idx = vec![0usize; n_modes - 1];
        for (slot, j) in (0..n_modes).filter(|&j| j != i).enumerate() {
            let p = self.modes.pair_index(i, j);
            params[slot] = self.pair_weights[p];
            e_idx[slot] = lay.e_index(k, p, 0);
        }
        // Frozen inputs for the probes.
        let z0_m: Vec<f64> = (0..lay.n_h).map(|l| z[lay.m_index(k, i, l)]).collect();
        let z0_e: Vec<Vec<f64>> =
            (0..n_modes - 1).map(|s| (0..lay.n_h).map(|l| z[e_idx[s] + l]).collect()).collect();
        let mut b0 = vec![0.0; n_modes - 1];
        let mut sum_at = |mu: f64| -> Result<f64, SolverError> {
            let mut total = 0.0;
            for l in 0..lay.n_h {
                let a0 = z0_m[l] - tau * (linear + mu * h);
                for s in 0..n_modes - 1 {
                    b0[s] = z0_e[s][l];
                }
                let (a, _) = prox_perspective_group(a0, &b0, tau, &params, Some(cap))
                    .map_err(|e| SolverError::ProxFailure(format!("slice ({k},{i},{l}): {e}")))?;
                total += a;
            }
            Ok(total)
        };
        let c = tr.curvature[k];
        let u = tr.target[k];
        let f_of = |s: f64, mu: f64| mu - c * (h * s - u);
        // Bracket around the warm multiplier with geometric expansion.
        let mut d = 1e-3 * (1.0 + warm.abs());
        let mut lo = warm - d;
        let mut hi = warm + d;
        let mut f_lo = f_of(sum_at(lo)?, lo);
        let mut f_hi = f_of(sum_at(hi)?, hi);
        let mut guard = 0;
        while f_lo > 0.0 {
            hi = lo;
            f_hi = f_lo;
            d *= 4.0;
            lo -= d;
            f_lo = f_of(sum_at(lo)?, lo);
            guard += 1;
            if guard > 200 {
                return Err(SolverError::ProxFailure("tracking bracket (low)".into()));
            }
        }
        while f_hi < 0.0 {
            lo = hi;
            f_lo = f_hi;
            d *= 4.0;
            hi += d;
            f_hi = f_of(sum_at(hi)?, hi);
            guard += 1;
            if guard > 400 {
                return Err(SolverError::ProxFailure("tracking bracket (high)".into()));
            }
        }
        // Illinois iteration: regula falsi with endpoint damping.
        let mut side = 0i8;
        let mut mu = 0.5 * (lo + hi);
        for _ in 0..100 {
            if hi - lo <= 1e-12 * (1.0 + lo.abs().max(hi.abs())) {
                break;
            }
            let denom = f_hi - f_lo;
            mu = if denom.abs() > 1e-300 {
                (lo * f_hi - hi * f_lo) / denom
            } else {
                0.5 * (lo + hi)
            };
            if mu <= lo || mu >= hi {
                mu = 0.5 * (lo + hi);
            }
            let f_mid = f_of(sum_at(mu)?, mu);
            if f_mid >= 0.0 {
                hi = mu;
                f_hi = f_mid;
                if side == 1 {
                    f_lo *= 0.5;
                }
                side = 1;
            } else {
                lo = mu;
                f_lo = f_mid;
                if side == -1 {
                    f_hi *= 0.5;
                }
                side = -1;
            }
            if f_mid.abs() <= 1e-11 * (1.0 + mu.abs()) {
                break;
            }
        }
        // Final sweep writes the slice at the converged multiplier.
        for l in 0..lay.n_h {
            let a0 = z0_m[l] - tau * (linear + mu * h);
            for s in 0..n_modes - 1 {
                b0[s] = z0_e[s][l];
            }
            let (a, b) = prox_perspective_group(a0, &b0, tau, &params, Some(cap))
                .map_err(|e| SolverError::ProxFailure(format!("slice ({k},{i},{l}): {e}")))?;
            z[lay.m_index(k, i, l)] = a;
            for s in 0..n_modes - 1 {
                z[e_idx[s] + l] = b[s];
            }
        }
        Ok(mu)
    }

    /// Separable objective value (perspective + linear + terminal) plus the
    /// per-cell budget indicator, evaluated with membership tolerance `tol`.
    pub fn eval_separable(&self, y: &[f64], tol: f64) -> f64 {
        let lay = self.layout;
        let n_modes = lay.n_modes;
        let mut total = 0.0;
        for k in 0..lay.n_t {
            for i in 0..n_modes {
                let linear = self.cell_linear[k * n_modes + i];
                for l in 0..lay.n_h {
                    let a = y[lay.m_index(k, i, l)];
                    let mut out_flux = 0.0;
                    for j in 0..n_modes {
                        if j == i {
                            continue;
                        }
                        let p = self.modes.pair_index(i, j);
                        let b = y[lay.e_index(k, p, l)];
                        let v = perspective_cost(a, b, &self.pair_weights[p]);
                        if v.is_infinite() {
                            return f64::INFINITY;
                        }
                        total += v;
                        out_flux += b;
                    }
                    if out_flux > a + tol {
                        return f64::INFINITY;
                    }
                    total += linear * a;
                }
            }
        }
        if let Some(tr) = &self.tracking {
            for k in 0..lay.n_t {
                let base = lay.m_index(k, tr.mode, 0);
                let occ: f64 = y[base..base + lay.n_h].iter().sum::<f64>() * self.grid.h;
                let d = occ - tr.target[k];
                total += 0.5 * tr.curvature[k] * d * d;
            }
        }
        if let Some(term) = &self.terminal {
            for i in 0..n_modes {
                for l in 0..lay.n_h {
                    let m = y[lay.m_index(lay.n_t, i, l)];
                    let flat = i * lay.n_h + l;
                    let d = term.target[flat] - m;
                    total += term.beta[flat] * d * d * self.grid.h;
                }
            }
        }
        total
    }

    /// Coupled-block value: dynamics/mass/soc indicators with membership
    /// tolerance `tol`.
    pub fn eval_coupled(&self, y: &[f64], tol: f64) -> f64 {
        let op = self.scaled_operator();
        let mut res = vec![0.0; self.layout.n_m()];
        op.apply_forward(y, &mut res);
        for (r, m0) in res.iter_mut().zip(&self.m0) {
            *r -= *m0;
        }
        if res.iter().any(|r| r.abs() > tol) {
            return f64::INFINITY;
        }
        let (mass_n, _) = self.dual_sizes();
        let mut mass = vec![0.0; mass_n];
        self.apply_mass_rows(y, &mut mass);
        for (idx, &v) in mass.iter().enumerate() {
            if v < self.mass_block.lower[idx] - tol || v > self.mass_block.upper[idx] + tol {
                return f64::INFINITY;
            }
        }
        if let Some(block) = &self.soc_block {
            if self.apply_soc_row(y) > block.bound + tol {
                return f64::INFINITY;
            }
        }
        0.0
    }
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
    for x in v.iter_mut() {
        *x /= norm;
    }
}
