//! Convex cost terms of the planner objective: electricity cost, perspective
//! switching penalties, signal tracking and terminal-distribution penalties.
//! Each term exposes evaluation and an exact proximal map.
//!
//! Conventions: transfer terms are weighted by `h * dt` and running terms by
//! `dt` with `dt` in seconds; electricity prices are EUR/kWh, so the energy
//! term carries a `dt/3600` factor to convert kW-seconds to kWh.

use crate::grid::{DensityField, FlowField, Grid, ModeSet};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CostError {
    #[error("proximal root-find exceeded its iteration budget (residual {residual})")]
    NoConvergence { residual: f64 },
    #[error("cost arrays must have length {expected}, got {got}")]
    BadLength { expected: usize, got: usize },
}

/// Weights of one switching penalty: `theta * b + theta_tilde * b^2 / a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerspectiveParams {
    pub theta: f64,
    pub theta_tilde: f64,
}

impl PerspectiveParams {
    pub fn new(theta: f64, theta_tilde: f64) -> PerspectiveParams {
        assert!(theta >= 0.0 && theta_tilde >= 0.0);
        PerspectiveParams { theta, theta_tilde }
    }

    pub fn zero() -> PerspectiveParams {
        PerspectiveParams { theta: 0.0, theta_tilde: 0.0 }
    }

    /// Same penalty scaled by a positive weight.
    pub fn scaled(&self, w: f64) -> PerspectiveParams {
        PerspectiveParams { theta: self.theta * w, theta_tilde: self.theta_tilde * w }
    }
}

/// Perspective switching cost: `theta b + theta_tilde b^2/a` for `a > 0`,
/// `b >= 0`; `0` at the origin; `+inf` elsewhere (lower semicontinuous
/// closure on the nonnegative quadrant).
pub fn perspective_cost(a: f64, b: f64, p: &PerspectiveParams) -> f64 {
    if a < 0.0 || b < 0.0 {
        return f64::INFINITY;
    }
    if a == 0.0 {
        if b == 0.0 {
            return 0.0;
        }
        // With no quadratic part the closure is linear on the b-axis.
        return if p.theta_tilde == 0.0 { p.theta * b } else { f64::INFINITY };
    }
    p.theta * b + p.theta_tilde * b * b / a
}

/// Proximal map of `tau * perspective_cost`: the unique minimizer of
/// `0.5 ((a - a0)^2 + (b - b0)^2) + tau * cost(a, b)` over the closed domain.
pub fn prox_perspective(
    a0: f64,
    b0: f64,
    tau: f64,
    p: &PerspectiveParams,
) -> Result<(f64, f64), CostError> {
    let (a, b) = prox_perspective_group(a0, &[b0], tau, &[*p], None)?;
    Ok((a, b[0]))
}

/// Joint prox of one occupancy cell `a` with its outgoing flux coordinates
/// `b_j`, covering `sum_j tau * Theta_j(a, b_j)` plus, when `cap_dt` is set,
/// the per-cell budget set `{b >= 0, dt * sum_j b_j <= a}`.
///
/// The linear parts are folded into the anchor point; the quadratic coupling
/// reduces to a monotone scalar root-find in `a` with the flux coordinates
/// eliminated in closed form (capped case: exact segment solve on the cap
/// for one flux, sorted-breakpoint multiplier solve for several).
pub fn prox_perspective_group(
    a0: f64,
    b0: &[f64],
    tau: f64,
    params: &[PerspectiveParams],
    cap_dt: Option<f64>,
) -> Result<(f64, Vec<f64>), CostError> {
    debug_assert_eq!(b0.len(), params.len());
    debug_assert!(tau > 0.0);
    // Fold the linear flux weights: prox of theta*b + g(b) at b0 is prox of
    // g at b0 - tau*theta.
    let bb: Vec<f64> = b0.iter().zip(params).map(|(b, p)| b - tau * p.theta).collect();

    let (a_free, b_free) = prox_group_uncapped(a0, &bb, tau, params)?;
    let cap_ok = match cap_dt {
        None => true,
        Some(dt) => dt * b_free.iter().sum::<f64>() <= a_free + 1e-15 * (1.0 + a_free.abs()),
    };
    if cap_ok {
        return Ok((a_free, b_free));
    }
    let dt = cap_dt.unwrap();
    if bb.len() == 1 {
        // On the cap b = a/dt the objective is an exact quadratic in a:
        // 0.5 (a-a0)^2 + 0.5 (a/dt - b0)^2 + tau*theta*a/dt + tau*tt*a/dt^2.
        let p = &params[0];
        let denom = 1.0 + 1.0 / (dt * dt);
        let num = a0 + bb[0] / dt - tau * p.theta_tilde / (dt * dt);
        let a = (num / denom).max(0.0);
        return Ok((a, vec![a / dt]));
    }
    prox_group_capped_multi(a0, &bb, tau, params, dt)
}

/// Unconstrained-domain group prox after the linear fold. `bb` holds the
/// shifted flux anchors.
fn prox_group_uncapped(
    a0: f64,
    bb: &[f64],
    tau: f64,
    params: &[PerspectiveParams],
) -> Result<(f64, Vec<f64>), CostError> {
    // Coupled flows: quadratic weight active and positive shifted anchor.
    let coupled: Vec<usize> = (0..bb.len())
        .filter(|&j| params[j].theta_tilde > 0.0 && bb[j] > 0.0)
        .collect();
    let b_at = |a: f64, bb: &[f64]| -> Vec<f64> {
        bb.iter()
            .zip(params)
            .map(|(&bbv, p)| {
                if bbv <= 0.0 {
                    0.0
                } else if p.theta_tilde == 0.0 {
                    bbv
                } else if a == 0.0 {
                    0.0
                } else {
                    a * bbv / (a + 2.0 * tau * p.theta_tilde)
                }
            })
            .collect()
    };
    if coupled.is_empty() {
        let a = a0.max(0.0);
        return Ok((a, b_at(a, bb)));
    }
    // Vertex test: stationarity in a can only hold at positive a when
    // a0 + sum bb^2/(4 tau tt) > 0.
    let pull: f64 = coupled
        .iter()
        .map(|&j| bb[j] * bb[j] / (4.0 * tau * params[j].theta_tilde))
        .sum();
    if a0 + pull <= 0.0 {
        return Ok((0.0, b_at(0.0, bb)));
    }
    // Monotone root of G(a) = a - a0 - sum_j tau tt_j bb_j^2/(a + 2 tau tt_j)^2.
    let g = |a: f64| -> (f64, f64) {
        let mut val = a - a0;
        let mut deriv = 1.0;
        for &j in &coupled {
            let tt = tau * params[j].theta_tilde;
            let d = a + 2.0 * tt;
            val -= tt * bb[j] * bb[j] / (d * d);
            deriv += 2.0 * tt * bb[j] * bb[j] / (d * d * d);
        }
        (val, deriv)
    };
    let mut lo = 0.0;
    let mut hi = a0.max(0.0) + pull + 1.0;
    debug_assert!(g(hi).0 >= 0.0);
    let mut a = hi.min(a0.max(pull));
    let scale = hi.max(1.0);
    for _ in 0..200 {
        let (val, deriv) = g(a);
        if val.abs() <= 1e-12 * scale {
            return Ok((a, b_at(a, bb)));
        }
        if val > 0.0 {
            hi = a;
        } else {
            lo = a;
        }
        let newton = a - val / deriv;
        a = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if hi - lo <= 1e-15 * scale {
            return Ok((a, b_at(a, bb)));
        }
    }
    Err(CostError::NoConvergence { residual: g(a).0.abs() })
}

/// Capped group prox for two or more flux coordinates: outer bisection on
/// `a`, inner exact multiplier solve on the sorted breakpoints.
fn prox_group_capped_multi(
    a0: f64,
    bb: &[f64],
    tau: f64,
    params: &[PerspectiveParams],
    dt: f64,
) -> Result<(f64, Vec<f64>), CostError> {
    // b_j(a, mu) = max(0, (bb_j - mu dt) * w_j(a)), with w_j = a/(a+2 tau tt_j)
    // (or 1 when tt_j = 0). The cap multiplier solves dt * sum_j b_j = a.
    let weights = |a: f64| -> Vec<f64> {
        params
            .iter()
            .map(|p| {
                if p.theta_tilde == 0.0 {
                    1.0
                } else if a == 0.0 {
                    0.0
                } else {
                    a / (a + 2.0 * tau * p.theta_tilde)
                }
            })
            .collect()
    };
    let solve_mu = |a: f64, w: &[f64]| -> (f64, Vec<f64>) {
        let unconstrained: f64 = bb
            .iter()
            .zip(w)
            .map(|(&bbv, &wv)| if bbv > 0.0 { bbv * wv } else { 0.0 })
            .sum();
        if dt * unconstrained <= a {
            let b = bb
                .iter()
                .zip(w)
                .map(|(&bbv, &wv)| if bbv > 0.0 { bbv * wv } else { 0.0 })
                .collect();
            return (0.0, b);
        }
        // Breakpoints where a flux leaves the active set.
        let mut breaks: Vec<f64> =
            bb.iter().filter(|&&v| v > 0.0).map(|&v| v / dt).collect();
        breaks.sort_by(|x, y| x.partial_cmp(y).unwrap());
        // On each segment sum_j dt (bb_j - mu dt) w_j is linear in mu.
        let mut mu_lo = 0.0;
        for &br in &breaks {
            let (sum_lo, slope): (f64, f64) = bb.iter().zip(w).fold((0.0, 0.0), |acc, (&bbv, &wv)| {
                if bbv > 0.0 && bbv - mu_lo * dt > 0.0 {
                    (acc.0 + dt * (bbv - mu_lo * dt) * wv, acc.1 + dt * dt * wv)
                } else {
                    acc
                }
            });
            if sum_lo <= a {
                break;
            }
            // Need sum(mu) = a on this segment: sum(mu) = sum_lo - (mu-mu_lo)*slope.
            let mu = mu_lo + (sum_lo - a) / slope;
            if mu <= br {
                let b = bb
                    .iter()
                    .zip(w)
                    .map(|(&bbv, &wv)| (bbv - mu * dt).max(0.0) * wv)
                    .collect();
                return (mu, b);
            }
            mu_lo = br;
        }
        // All fluxes clamped to zero: cap requires sum = a; with b = 0 the
        // cap holds iff a >= 0 (mu at the last breakpoint).
        (mu_lo, vec![0.0; bb.len()])
    };
    // F'(a) = (a - a0) - sum_j tau tt_j b_j^2/a^2 - mu(a); monotone by
    // convexity of the partially minimized objective.
    let fprime = |a: f64| -> f64 {
        let w = weights(a);
        let (mu, b) = solve_mu(a, &w);
        let mut v = a - a0 - mu;
        for (j, p) in params.iter().enumerate() {
            if p.theta_tilde > 0.0 && a > 0.0 {
                v -= tau * p.theta_tilde * b[j] * b[j] / (a * a);
            }
        }
        v
    };
    let pull: f64 = bb
        .iter()
        .zip(params)
        .map(|(&bbv, p)| {
            if bbv > 0.0 {
                if p.theta_tilde > 0.0 { bbv * bbv / (4.0 * tau * p.theta_tilde) } else { bbv / dt }
            } else {
                0.0
            }
        })
        .sum();
    let mut hi = a0.max(0.0) + pull + bb.iter().map(|v| v.abs()).sum::<f64>() + 1.0;
    let mut lo = 0.0;
    if fprime(hi) < 0.0 {
        hi *= 8.0; // generous; F' grows at least linearly
    }
    let scale = hi.max(1.0);
    let tiny = 1e-300;
    if fprime(tiny) >= 0.0 {
        return Ok((0.0, vec![0.0; bb.len()]));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if fprime(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-13 * scale {
            break;
        }
    }
    let a = 0.5 * (lo + hi);
    let w = weights(a);
    let (_, b) = solve_mu(a, &w);
    Ok((a, b))
}

/// Electricity cost of the occupancy trajectory: prices are EUR/kWh per step
/// and each mode draws its `power_kw` while occupied.
pub fn energy_cost(
    m: &DensityField,
    prices: &[f64],
    modes: &ModeSet,
    grid: &Grid,
) -> Result<f64, CostError> {
    if prices.len() != grid.n_t {
        return Err(CostError::BadLength { expected: grid.n_t, got: prices.len() });
    }
    let kwh_per_step = grid.dt / 3600.0;
    let mut total = 0.0;
    for (k, &price) in prices.iter().enumerate() {
        for (i, mode) in modes.iter().enumerate() {
            if mode.power_kw == 0.0 {
                continue;
            }
            let occupancy: f64 = m.mode_slice(k, i).iter().sum::<f64>() * grid.h;
            total += mode.power_kw * price * occupancy * kwh_per_step;
        }
    }
    Ok(total)
}

/// Tracking cost of one mode's occupancy against a per-step target.
pub fn tracking_cost(
    m: &DensityField,
    mode: usize,
    lambda: &[f64],
    u_tar: &[f64],
    grid: &Grid,
) -> Result<f64, CostError> {
    if lambda.len() != grid.n_t || u_tar.len() != grid.n_t {
        return Err(CostError::BadLength { expected: grid.n_t, got: lambda.len().min(u_tar.len()) });
    }
    let mut total = 0.0;
    for k in 0..grid.n_t {
        let occupancy: f64 = m.mode_slice(k, mode).iter().sum::<f64>() * grid.h;
        let dev = occupancy - u_tar[k];
        total += lambda[k] * dev * dev * grid.dt;
    }
    Ok(total)
}

/// Prox of the one-step tracking term `tau * lambda * dt * (h sum x - u)^2`
/// over the cell slice `x`; rank-one closed form.
pub fn prox_tracking(x: &[f64], tau: f64, lambda: f64, u: f64, h: f64, dt: f64) -> Vec<f64> {
    let n = x.len() as f64;
    let beta = 2.0 * tau * lambda * dt;
    let sum: f64 = x.iter().sum();
    let new_sum = (sum + beta * h * n * u) / (1.0 + beta * h * h * n);
    let shift = beta * h * (h * new_sum - u);
    x.iter().map(|v| v - shift).collect()
}

/// Terminal distribution penalty `sum beta (mu - m_T)^2 h` over (mode, cell).
pub fn terminal_cost(
    m_terminal: &[f64],
    beta: &[f64],
    mu: &[f64],
    h: f64,
) -> Result<f64, CostError> {
    if beta.len() != m_terminal.len() || mu.len() != m_terminal.len() {
        return Err(CostError::BadLength { expected: m_terminal.len(), got: beta.len().min(mu.len()) });
    }
    Ok(m_terminal
        .iter()
        .zip(beta)
        .zip(mu)
        .map(|((&m, &b), &t)| b * (t - m) * (t - m) * h)
        .sum())
}

/// Per-cell prox of the terminal penalty: minimizer of
/// `0.5 (x' - x)^2 + tau beta h (mu - x')^2`.
pub fn prox_terminal(x: f64, tau: f64, beta: f64, mu: f64, h: f64) -> f64 {
    let w = 2.0 * tau * beta * h;
    (x + w * mu) / (1.0 + w)
}

/// Per-step tracking data: which mode is tracked and with what weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrackingTerm {
    pub mode: usize,
    pub lambda: Vec<f64>,
    pub target: Vec<f64>,
}

/// Terminal penalty data per (mode, cell).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TerminalTerm {
    pub beta: Vec<Vec<f64>>,
    pub target: Vec<Vec<f64>>,
}

/// The composable planner objective. Disabled terms are `None`/zero weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostSpec {
    /// Electricity prices per step, EUR/kWh.
    pub prices: Option<Vec<f64>>,
    /// Switching penalty per ordered mode pair (pair-index order).
    pub switching: Vec<PerspectiveParams>,
    pub tracking: Option<TrackingTerm>,
    pub terminal: Option<TerminalTerm>,
}

impl CostSpec {
    pub fn free(n_modes: usize) -> CostSpec {
        CostSpec {
            prices: None,
            switching: vec![PerspectiveParams::zero(); n_modes * (n_modes - 1)],
            tracking: None,
            terminal: None,
        }
    }
}

/// Full objective value at (m, E): enabled terms with the `h dt` transfer
/// weights. Infinite outside the perspective domains.
pub fn total_objective(
    m: &DensityField,
    e: &FlowField,
    spec: &CostSpec,
    grid: &Grid,
    modes: &ModeSet,
) -> Result<f64, CostError> {
    let mut total = 0.0;
    let cell_weight = grid.h * grid.dt;
    for k in 0..grid.n_t {
        for p in 0..e.n_pairs() {
            let (i, _) = modes.pair_decode(p);
            let params = &spec.switching[p];
            for l in 0..grid.n_h {
                let v = perspective_cost(m.at(k, i, l), e.at(k, p, l), params);
                if v.is_infinite() {
                    return Ok(f64::INFINITY);
                }
                total += v * cell_weight;
            }
        }
    }
    if let Some(prices) = &spec.prices {
        total += energy_cost(m, prices, modes, grid)?;
    }
    if let Some(t) = &spec.tracking {
        total += tracking_cost(m, t.mode, &t.lambda, &t.target, grid)?;
    }
    if let Some(t) = &spec.terminal {
        for i in 0..m.n_modes {
            total += terminal_cost(m.mode_slice(grid.n_t, i), &t.beta[i], &t.target[i], grid.h)?;
        }
    }
    Ok(total)
}
