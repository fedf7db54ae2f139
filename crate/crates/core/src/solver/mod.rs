//! First-order primal-dual solver for the discretized charging problem.
//!
//! The iteration alternates a dual proximal step on the coupled blocks
//! (scheme dynamics as an affine-set projection, mass-bound intervals,
//! terminal-SoC halfspace, tracking quadratic) with an exact separable
//! primal prox (perspective switching costs with the per-cell flux budget,
//! linear energy weights, terminal penalty), followed by over-relaxation:
//!
//! ```text
//! sigma <- prox_{gamma psi*}(sigma + gamma K y_bar)
//! y     <- prox_{tau phi}(y - tau K^T sigma)
//! y_bar <- y + theta (y - y_prev)
//! ```
//!
//! Step sizes must satisfy `gamma tau ||K||^2 < 1`; the stacked operator
//! norm is estimated by power iteration at assembly time. The solver is
//! fully deterministic: fixed sweep orders, no randomized components.

mod problem;
mod projection;
mod slater;

pub use problem::{build_saddle_problem, SaddlePointProblem};
pub use projection::DynamicsProjector;
pub use slater::{binomial_cdf, slater_certificate, Premise, SlaterReport};

use crate::dynamics::feasibility_report;
use crate::grid::{DensityField, FlowField};
use serde::{Deserialize, Serialize};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("CFL condition violated: max Courant number {0} > 1")]
    CflViolation(f64),
    #[error("step sizes invalid: gamma*tau*||K||^2 = {0} must be < 1")]
    StepSizeInvalid(f64),
    #[error("affine projection stagnated after {iterations} iterations (residual {residual:e})")]
    LinearSolveStagnation { iterations: usize, residual: f64 },
    #[error("proximal step failed: {0}")]
    ProxFailure(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("certificate premise unmet: {0}")]
    PremiseUnmet(String),
}

/// Step sizes and stopping rules of the primal-dual iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CpParams {
    /// Over-relaxation weight, in [0, 1].
    pub theta_relax: f64,
    /// Primal step size.
    pub tau: f64,
    /// Dual step size.
    pub gamma: f64,
    pub max_iter: usize,
    /// Stop when the relative primal step falls below this.
    pub tol_primal: f64,
    /// ... and the worst constraint violation falls below this.
    pub tol_feasibility: f64,
}

impl CpParams {
    pub fn new(
        theta_relax: f64,
        tau: f64,
        gamma: f64,
        max_iter: usize,
    ) -> Result<CpParams, SolverError> {
        let p = CpParams {
            theta_relax,
            tau,
            gamma,
            max_iter,
            tol_primal: 1e-7,
            tol_feasibility: 1e-9,
        };
        p.validate_basic()?;
        Ok(p)
    }

    pub fn validate_basic(&self) -> Result<(), SolverError> {
        if !(0.0..=1.0).contains(&self.theta_relax) || self.tau <= 0.0 || self.gamma <= 0.0 {
            return Err(SolverError::StepSizeInvalid(self.gamma * self.tau));
        }
        Ok(())
    }

    /// Enforces `gamma tau ||K||^2 < 1` against the assembled problem's norm
    /// estimate (with a 1% safety margin for estimation error).
    pub fn validate_against(&self, problem: &SaddlePointProblem) -> Result<(), SolverError> {
        self.validate_basic()?;
        let norm = problem.operator_norm_estimate * 1.01;
        let product = self.gamma * self.tau * norm * norm;
        if product >= 1.0 {
            return Err(SolverError::StepSizeInvalid(product));
        }
        Ok(())
    }
}

/// Dual variables, one slot per coupled block.
#[derive(Debug, Clone)]
pub struct DualVars {
    /// Dynamics block (identity-mapped, so primal-sized).
    pub dynamics: Vec<f64>,
    /// Mass-bound rows, (mode, node) flattened mode-major.
    pub mass: Vec<f64>,
    /// Terminal low-SoC row.
    pub soc: f64,
}

impl DualVars {
    fn zeros(problem: &SaddlePointProblem) -> DualVars {
        let (mass, _) = problem.dual_sizes();
        DualVars {
            dynamics: vec![0.0; problem.layout.len()],
            mass: vec![0.0; mass],
            soc: 0.0,
        }
    }

    fn norm(&self) -> f64 {
        let mut s: f64 = self.dynamics.iter().map(|v| v * v).sum();
        s += self.mass.iter().map(|v| v * v).sum::<f64>();
        s += self.soc * self.soc;
        s.sqrt()
    }
}

/// Mutable iteration state, including the warm-started projector.
pub struct CpState {
    pub y: Vec<f64>,
    pub y_bar: Vec<f64>,
    pub sigma: DualVars,
    pub iteration: usize,
    projector: DynamicsProjector,
    scratch_rows: Vec<f64>,
    /// Warm-started tracking multipliers, one per step.
    track_mu: Vec<f64>,
    /// Relative primal/dual step sizes of the most recent iterate.
    pub last_primal_step: f64,
    pub last_dual_step: f64,
}

impl CpState {
    /// Initial state: the zero-flux rollout of the initial distribution,
    /// zero duals.
    pub fn new(problem: &SaddlePointProblem) -> CpState {
        let op = problem.scaled_operator();
        let m = op.rollout(
            &problem.m0,
            &FlowField::zeros(problem.layout.n_t, problem.layout.n_modes, problem.layout.n_h),
        );
        let mut y = vec![0.0; problem.layout.len()];
        y[..problem.layout.n_m()].copy_from_slice(m.values());
        let (mass_n, _) = problem.dual_sizes();
        CpState {
            y_bar: y.clone(),
            y,
            sigma: DualVars::zeros(problem),
            iteration: 0,
            projector: DynamicsProjector::new(op, &problem.m0),
            scratch_rows: vec![0.0; mass_n],
            track_mu: vec![0.0; problem.layout.n_t],
            last_primal_step: f64::INFINITY,
            last_dual_step: f64::INFINITY,
        }
    }

    pub fn projector_mut(&mut self) -> &mut DynamicsProjector {
        &mut self.projector
    }
}

/// One primal-dual iteration; deterministic given the state.
pub fn cp_iterate(
    state: &mut CpState,
    problem: &SaddlePointProblem,
    params: &CpParams,
) -> Result<(), SolverError> {
    let gamma = params.gamma;
    let tau = params.tau;
    let n = problem.layout.len();
    let mut dual_step2 = 0.0f64;

    // Dual step, dynamics block: sigma <- v - gamma * project(v / gamma)
    // with v = sigma + gamma * y_bar.
    {
        let w: Vec<f64> = state
            .sigma
            .dynamics
            .iter()
            .zip(&state.y_bar)
            .map(|(s, y)| s / gamma + y)
            .collect();
        let projected = state.projector.project(&w)?;
        for i in 0..n {
            let next = gamma * (w[i] - projected[i]);
            let d = next - state.sigma.dynamics[i];
            dual_step2 += d * d;
            state.sigma.dynamics[i] = next;
        }
    }
    // Mass-bound intervals.
    {
        problem.apply_mass_rows(&state.y_bar, &mut state.scratch_rows);
        let block = &problem.mass_block;
        for (idx, row) in state.scratch_rows.iter().enumerate() {
            let w = state.sigma.mass[idx] + gamma * row;
            let proj = (w / gamma).clamp(block.lower[idx], block.upper[idx]);
            let next = w - gamma * proj;
            let d = next - state.sigma.mass[idx];
            dual_step2 += d * d;
            state.sigma.mass[idx] = next;
        }
    }
    // Terminal low-SoC halfspace.
    if let Some(block) = &problem.soc_block {
        let row = problem.apply_soc_row(&state.y_bar);
        let w = state.sigma.soc + gamma * row;
        let proj = (w / gamma).min(block.bound);
        let next = w - gamma * proj;
        dual_step2 += (next - state.sigma.soc) * (next - state.sigma.soc);
        state.sigma.soc = next;
    }
    // K^T sigma, then the primal prox.
    let mut kt = state.sigma.dynamics.clone();
    problem.add_mass_rows_transpose(&state.sigma.mass, &mut kt);
    problem.add_soc_row_transpose(state.sigma.soc, &mut kt);

    let mut z: Vec<f64> = state.y.iter().zip(&kt).map(|(y, k)| y - tau * k).collect();
    problem.prox_primal(&mut z, tau, &mut state.track_mu)?;

    let mut primal_step2 = 0.0f64;
    let mut y_norm2 = 0.0f64;
    for i in 0..n {
        let d = z[i] - state.y[i];
        primal_step2 += d * d;
        y_norm2 += z[i] * z[i];
        state.y_bar[i] = z[i] + params.theta_relax * d;
    }
    state.y = z;
    state.iteration += 1;
    state.last_primal_step = (primal_step2 / (1.0 + y_norm2)).sqrt();
    let sigma_norm = state.sigma.norm();
    state.last_dual_step = dual_step2.sqrt() / (1.0 + sigma_norm);
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxIterations,
}

/// Per-iteration solve record plus final counters.
#[derive(Debug, Clone, Serialize)]
pub struct SolveDiagnostics {
    pub objective: Vec<f64>,
    pub max_violation: Vec<f64>,
    pub primal_residual: Vec<f64>,
    pub dual_residual: Vec<f64>,
    pub iterations: usize,
    pub wall_time_s: f64,
    pub stop_reason: StopReason,
}

pub struct SolveOutput {
    pub m: DensityField,
    pub e: FlowField,
    pub diagnostics: SolveDiagnostics,
}

/// Runs the primal-dual iteration until the stopping rule fires. Returns
/// the last iterate; non-convergence shows up in the diagnostics, not as an
/// error.
pub fn solve(problem: &SaddlePointProblem, params: &CpParams) -> Result<SolveOutput, SolverError> {
    params.validate_against(problem)?;
    let start = Instant::now();
    let mut state = CpState::new(problem);
    let op = problem.scaled_operator();
    let mut dyn_residual = vec![0.0; problem.layout.n_m()];
    let mut diagnostics = SolveDiagnostics {
        objective: Vec::with_capacity(params.max_iter),
        max_violation: Vec::with_capacity(params.max_iter),
        primal_residual: Vec::with_capacity(params.max_iter),
        dual_residual: Vec::with_capacity(params.max_iter),
        iterations: 0,
        wall_time_s: 0.0,
        stop_reason: StopReason::MaxIterations,
    };
    for _ in 0..params.max_iter {
        cp_iterate(&mut state, problem, params)?;
        let (m, e) = problem.unpack_scaled(&state.y);
        let objective =
            crate::costs::total_objective(&m, &e, &problem.costs, &problem.grid, &problem.modes)
                .map_err(|err| SolverError::ShapeMismatch(err.to_string()))?;
        op.apply_forward(&state.y, &mut dyn_residual);
        let mut violation = 0.0f64;
        for (r, m0) in dyn_residual.iter().zip(&problem.m0) {
            violation = violation.max((r - m0).abs());
        }
        for r in &dyn_residual[problem.m0.len()..] {
            violation = violation.max(r.abs());
        }
        let feas = feasibility_report(&m, &e, &problem.constraints, problem.grid.dt);
        violation = violation.max(feas.max());

        diagnostics.objective.push(objective);
        diagnostics.max_violation.push(violation);
        diagnostics.primal_residual.push(state.last_primal_step);
        diagnostics.dual_residual.push(state.last_dual_step);

        if state.last_primal_step <= params.tol_primal && violation <= params.tol_feasibility {
            diagnostics.stop_reason = StopReason::Converged;
            break;
        }
    }
    diagnostics.iterations = state.iteration;
    diagnostics.wall_time_s = start.elapsed().as_secs_f64();
    let (m, e) = problem.unpack_scaled(&state.y);
    Ok(SolveOutput { m, e, diagnostics })
}

/// Transition intensities from the optimal pair: `alpha = E / m` where the
/// occupancy exceeds `1e-9`, zero elsewhere (0/0 convention). Negative flux
/// round-off is clamped.
pub fn extract_alpha(m: &DensityField, e: &FlowField) -> FlowField {
    const TOL_DIV: f64 = 1e-9;
    let mut alpha = FlowField::zeros(e.n_t, e.n_modes, e.n_h);
    let n_modes = e.n_modes;
    for k in 0..e.n_t {
        for p in 0..e.n_pairs() {
            let i = p / (n_modes - 1);
            for l in 0..e.n_h {
                let occupancy = m.at(k, i, l);
                if occupancy > TOL_DIV {
                    *alpha.at_mut(k, p, l) = e.at(k, p, l).max(0.0) / occupancy;
                }
            }
        }
    }
    alpha
}
