//! Shared test oracles, kept independent of the implementation paths they
//! check: a dense assembly of the scheme equations with an LU-based
//! projection, a projected-subgradient reference solver for linear-cost
//! instances, an exact-rational binomial CDF, and a brute-force prox oracle.

#![allow(dead_code)]

use mfcharge::costs::{perspective_cost, PerspectiveParams};
use mfcharge::dynamics::{ConstraintSpec, PrimalLayout};
use mfcharge::grid::{Grid, ModeSet, RateSign};
use num_bigint::BigInt;
use num_rational::BigRational;

/// Dense matrix form of the scheme equations, assembled coefficient by
/// coefficient from the update formulas rather than from the operator code.
pub struct DenseDynamics {
    pub layout: PrimalLayout,
    /// n_m rows of n = n_m + n_e coefficients.
    pub rows: Vec<Vec<f64>>,
    /// Right-hand side: initial cell values, then zeros.
    pub rhs: Vec<f64>,
}

impl DenseDynamics {
    pub fn assemble(grid: &Grid, modes: &ModeSet, m0: &[f64]) -> DenseDynamics {
        let lay = PrimalLayout::new(grid, modes);
        let (n_t, n_modes, n_h) = (lay.n_t, lay.n_modes, lay.n_h);
        let n = lay.len();
        let nu = grid.dt / grid.h;
        let mut rows = vec![vec![0.0; n]; lay.n_m()];
        let mut rhs = vec![0.0; lay.n_m()];

        // Initial block: m[0,i,l] = m0[i,l].
        for i in 0..n_modes {
            for l in 0..n_h {
                let r = i * n_h + l;
                rows[r][lay.m_index(0, i, l)] = 1.0;
                rhs[r] = m0[i * n_h + l];
            }
        }
        // Evolution rows: m[k+1] - advect(m[k] + dt * net_flux) = 0. The
        // advection stencil weights come straight from the upwind formulas.
        for k in 0..n_t {
            for i in 0..n_modes {
                let rates = modes.mode(i).half_point_rates();
                for l in 0..n_h {
                    let r = ((k + 1) * n_modes + i) * n_h + l;
                    rows[r][lay.m_index(k + 1, i, l)] = 1.0;
                    // Column weights of -(A half)[l] w.r.t. half[q].
                    let mut add_half = |q: usize, w: f64| {
                        // half[q] = m[k,i,q] + dt * sum_j (e[j->i,q] - e[i->j,q])
                        rows[r][lay.m_index(k, i, q)] += w;
                        for j in 0..n_modes {
                            if j == i {
                                continue;
                            }
                            let p_in = modes.pair_index(j, i);
                            let p_out = modes.pair_index(i, j);
                            rows[r][lay.e_index(k, p_in, q)] += w * grid.dt;
                            rows[r][lay.e_index(k, p_out, q)] -= w * grid.dt;
                        }
                    };
                    match modes.mode(i).sign() {
                        RateSign::NonNegative => {
                            add_half(l, -(1.0 - nu * rates[l + 1]));
                            if l > 0 {
                                add_half(l - 1, -(nu * rates[l]));
                            }
                        }
                        RateSign::NonPositive => {
                            add_half(l, -(1.0 + nu * rates[l]));
                            if l + 1 < n_h {
                                add_half(l + 1, nu * rates[l + 1]);
                            }
                        }
                    }
                }
            }
        }
        DenseDynamics { layout: lay, rows, rhs }
    }

    pub fn apply(&self, y: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| dot(r, y)).collect()
    }

    pub fn apply_transpose(&self, lam: &[f64]) -> Vec<f64> {
        let n = self.layout.len();
        let mut out = vec![0.0; n];
        for (r, l) in self.rows.iter().zip(lam) {
            for (o, c) in out.iter_mut().zip(r) {
                *o += c * l;
            }
        }
        out
    }

    /// Euclidean projection onto {y : C y = rhs} via the normal equations
    /// solved with dense LU.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.factor_gram().project(self, x)
    }

    /// Factors the Gram matrix once for repeated projections.
    pub fn factor_gram(&self) -> GramFactor {
        let m = self.rows.len();
        let mut gram = vec![vec![0.0; m]; m];
        for a in 0..m {
            for b in a..m {
                let v = dot(&self.rows[a], &self.rows[b]);
                gram[a][b] = v;
                gram[b][a] = v;
            }
        }
        GramFactor::new(gram)
    }
}

/// LU factorization with partial pivoting of the Gram matrix C C^T.
pub struct GramFactor {
    lu: Vec<Vec<f64>>,
    piv: Vec<usize>,
}

impl GramFactor {
    pub fn new_for_test(a: Vec<Vec<f64>>) -> GramFactor {
        GramFactor::new(a)
    }

    fn new(mut a: Vec<Vec<f64>>) -> GramFactor {
        let n = a.len();
        let mut piv = Vec::with_capacity(n);
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
                .unwrap();
            a.swap(col, pivot);
            piv.push(pivot);
            let diag = a[col][col];
            assert!(diag.abs() > 1e-300, "singular Gram matrix at column {col}");
            for row in col + 1..n {
                let f = a[row][col] / diag;
                a[row][col] = f;
                for k in col + 1..n {
                    a[row][k] -= f * a[col][k];
                }
            }
        }
        GramFactor { lu: a, piv }
    }

    pub fn solve(&self, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        // The stored multipliers live in fully permuted row order, so the
        // right-hand side must be permuted before the triangular solves.
        for col in 0..n {
            b.swap(col, self.piv[col]);
        }
        for col in 0..n {
            for row in col + 1..n {
                b[row] -= self.lu[row][col] * b[col];
            }
        }
        for row in (0..n).rev() {
            for k in row + 1..n {
                b[row] -= self.lu[row][k] * b[k];
            }
            b[row] /= self.lu[row][row];
        }
        b
    }

    pub fn project(&self, dense: &DenseDynamics, x: &[f64]) -> Vec<f64> {
        let defect: Vec<f64> =
            dense.apply(x).iter().zip(&dense.rhs).map(|(v, r)| v - r).collect();
        let lam = self.solve(defect);
        let correction = dense.apply_transpose(&lam);
        x.iter().zip(&correction).map(|(a, b)| a - b).collect()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Dense LU solve with partial pivoting; panics on a singular matrix.
pub fn lu_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = a.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        let diag = a[col][col];
        assert!(diag.abs() > 1e-300, "singular matrix at column {col}");
        for row in col + 1..n {
            let f = a[row][col] / diag;
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut v = b[row];
        for k in row + 1..n {
            v -= a[row][k] * x[k];
        }
        x[row] = v / a[row][row];
    }
    x
}

/// Worst violation of the inequality constraints at a flat primal vector,
/// computed directly from the constraint definitions.
pub fn raw_violations(y: &[f64], lay: &PrimalLayout, spec: &ConstraintSpec, grid: &Grid) -> f64 {
    let (n_t, n_modes, n_h) = (lay.n_t, lay.n_modes, lay.n_h);
    let h = grid.h;
    let mut worst = 0.0f64;
    for k in 0..n_t {
        for i in 0..n_modes {
            for l in 0..n_h {
                let mut out_flux = 0.0;
                for j in 0..n_modes {
                    if j == i {
                        continue;
                    }
                    let pair = i * (n_modes - 1) + if j < i { j } else { j - 1 };
                    let e = y[lay.e_index(k, pair, l)];
                    worst = worst.max(-e);
                    out_flux += e;
                }
                worst = worst.max(grid.dt * out_flux - y[lay.m_index(k, i, l)]);
            }
        }
    }
    for k in 0..=n_t {
        for i in 0..n_modes {
            let mass: f64 = (0..n_h).map(|l| y[lay.m_index(k, i, l)]).sum::<f64>() * h;
            worst = worst.max(spec.d_lower[i][k] - mass).max(mass - spec.d_upper[i][k]);
        }
    }
    let top = spec.s_min_cells.min(n_h - 1);
    let mut low = 0.0;
    for i in 0..n_modes {
        for l in 0..=top {
            low += y[lay.m_index(n_t, i, l)] * h;
        }
    }
    worst.max(low - spec.epsilon)
}

pub struct RefSolution {
    pub y: Vec<f64>,
    pub objective: f64,
    pub max_violation: f64,
    pub penalized_best: f64,
}

/// High-accuracy reference for linear-cost instances: projected subgradient
/// on the dynamics-affine set with an exact penalty for the inequality
/// constraints. Phase 1 uses diminishing steps to locate the level, phase 2
/// polishes with Polyak steps toward the best value seen.
pub fn reference_lp_solve(
    grid: &Grid,
    modes: &ModeSet,
    m0: &[f64],
    spec: &ConstraintSpec,
    cost: &[f64],
    penalty: f64,
    iters: usize,
) -> RefSolution {
    let dense = DenseDynamics::assemble(grid, modes, m0);
    let lay = dense.layout;
    let n = lay.len();
    let (n_t, n_modes, n_h) = (lay.n_t, lay.n_modes, lay.n_h);

    let penalized = |y: &[f64]| -> (f64, Vec<f64>) {
        let mut f = dot(cost, y);
        let mut g = cost.to_vec();
        for k in 0..n_t {
            for i in 0..n_modes {
                for l in 0..n_h {
                    let mut out_flux = 0.0;
                    let mut pairs = Vec::with_capacity(n_modes - 1);
                    for j in 0..n_modes {
                        if j == i {
                            continue;
                        }
                        let pair = i * (n_modes - 1) + if j < i { j } else { j - 1 };
                        let idx = lay.e_index(k, pair, l);
                        if y[idx] < 0.0 {
                            f += penalty * (-y[idx]);
                            g[idx] -= penalty;
                        }
                        out_flux += y[idx];
                        pairs.push(idx);
                    }
                    let midx = lay.m_index(k, i, l);
                    let v = grid.dt * out_flux - y[midx];
                    if v > 0.0 {
                        f += penalty * v;
                        for idx in pairs {
                            g[idx] += penalty * grid.dt;
                        }
                        g[midx] -= penalty;
                    }
                }
            }
        }
        for k in 0..=n_t {
            for i in 0..n_modes {
                let mass: f64 =
                    (0..n_h).map(|l| y[lay.m_index(k, i, l)]).sum::<f64>() * grid.h;
                if mass > spec.d_upper[i][k] {
                    f += penalty * (mass - spec.d_upper[i][k]);
                    for l in 0..n_h {
                        g[lay.m_index(k, i, l)] += penalty * grid.h;
                    }
                } else if mass < spec.d_lower[i][k] {
                    f += penalty * (spec.d_lower[i][k] - mass);
                    for l in 0..n_h {
                        g[lay.m_index(k, i, l)] -= penalty * grid.h;
                    }
                }
            }
        }
        let top = spec.s_min_cells.min(n_h - 1);
        let mut low = 0.0;
        for i in 0..n_modes {
            for l in 0..=top {
                low += y[lay.m_index(n_t, i, l)] * grid.h;
            }
        }
        if low > spec.epsilon {
            f += penalty * (low - spec.epsilon);
            for i in 0..n_modes {
                for l in 0..=top {
                    g[lay.m_index(n_t, i, l)] += penalty * grid.h;
                }
            }
        }
        (f, g)
    };

    // Start on the affine set: zero-flux rollout done densely.
    let mut y = vec![0.0; n];
    for i in 0..n_modes {
        for l in 0..n_h {
            y[lay.m_index(0, i, l)] = m0[i * n_h + l];
        }
    }
    let factor = dense.factor_gram();
    y = factor.project(&dense, &y);

    // Adaptive level method: Polyak steps toward best_f - delta, where the
    // level gap delta adapts to observed progress (down on stall, back up on
    // improvement). The gap keeps the step meaningful on the polyhedral
    // landscape where plain diminishing steps crawl.
    // Normalized diminishing steps (the textbook schedule) with a mild
    // restart ladder: each round halves the step constant and resumes from
    // the incumbent, keeping the best point ever seen. Accuracy is the
    // O(R G / sqrt(T)) of the method; the caller checks what it achieved.
    let mut best_y = y.clone();
    let mut best_f = penalized(&y).0;
    let rounds = 8;
    let per_round = iters / rounds;
    let mut alpha0 = 2.0;
    for _ in 0..rounds {
        y = best_y.clone();
        for t in 0..per_round {
            let (f, g) = penalized(&y);
            if f < best_f {
                best_f = f;
                best_y = y.clone();
            }
            let gnorm = dot(&g, &g).sqrt().max(1e-300);
            let step = alpha0 / ((t + 1) as f64).sqrt() / gnorm;
            for (yv, gv) in y.iter_mut().zip(&g) {
                *yv -= step * gv;
            }
            y = factor.project(&dense, &y);
        }
        alpha0 *= 0.5;
    }
    let objective = dot(cost, &best_y);
    let max_violation = raw_violations(&best_y, &lay, spec, grid);
    RefSolution { y: best_y, objective, max_violation, penalized_best: best_f }
}

/// Exact binomial CDF `sum_{k=0}^{s} C(tau, k) p^k (1-p)^(tau-k)` evaluated
/// in rational arithmetic via the term recurrence; `p = p_num / p_den`.
pub fn exact_binomial_cdf(tau: u64, p_num: u64, p_den: u64, s: u64) -> f64 {
    assert!(p_num <= p_den && p_den > 0);
    if p_num == p_den {
        return if s >= tau { 1.0 } else { 0.0 };
    }
    let q_num = p_den - p_num;
    let mut term = BigRational::new(
        BigInt::from(q_num).pow(tau as u32),
        BigInt::from(p_den).pow(tau as u32),
    );
    let ratio = BigRational::new(BigInt::from(p_num), BigInt::from(q_num));
    let mut total = term.clone();
    for k in 0..s.min(tau) {
        term = term * BigRational::from(BigInt::from(tau - k)) * &ratio
            / BigRational::from(BigInt::from(k + 1));
        total += &term;
    }
    rational_to_f64(&total)
}

fn rational_to_f64(r: &BigRational) -> f64 {
    use num_traits::ToPrimitive;
    r.to_f64().expect("rational fits in f64")
}

/// Brute-force perspective prox: grid passes with wide refinement windows,
/// then a coordinate-wise golden-section polish. The objective is strongly
/// convex, so the single basin guarantees the polish converges globally.
pub fn prox_perspective_oracle(
    a0: f64,
    b0: f64,
    tau: f64,
    p: &PerspectiveParams,
) -> (f64, f64) {
    let objective = |a: f64, b: f64| {
        0.5 * ((a - a0) * (a - a0) + (b - b0) * (b - b0)) + tau * perspective_cost(a, b, p)
    };
    let hi = 2.0_f64.max(a0.abs() + b0.abs());
    let (mut lo_a, mut hi_a, mut lo_b, mut hi_b) = (0.0, hi, 0.0, hi);
    let mut best = (0.0, 0.0);
    for _ in 0..3 {
        let steps = 200;
        let (da, db) = ((hi_a - lo_a) / steps as f64, (hi_b - lo_b) / steps as f64);
        let mut best_val = f64::INFINITY;
        for ia in 0..=steps {
            for ib in 0..=steps {
                let (a, b) = (lo_a + ia as f64 * da, lo_b + ib as f64 * db);
                let v = objective(a, b);
                if v < best_val {
                    best_val = v;
                    best = (a, b);
                }
            }
        }
        // Wide windows: flat valleys can put the grid best many cells away
        // from the true minimizer.
        lo_a = (best.0 - 25.0 * da).max(0.0);
        hi_a = best.0 + 25.0 * da;
        lo_b = (best.1 - 25.0 * db).max(0.0);
        hi_b = best.1 + 25.0 * db;
    }
    // Coordinate-wise golden-section polish over the full quadrant box.
    let golden = |f: &dyn Fn(f64) -> f64, mut lo: f64, mut hi: f64| -> f64 {
        let phi = 0.5 * (5.0f64.sqrt() - 1.0);
        let (mut x1, mut x2) = (hi - phi * (hi - lo), lo + phi * (hi - lo));
        let (mut f1, mut f2) = (f(x1), f(x2));
        for _ in 0..160 {
            if f1 < f2 {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - phi * (hi - lo);
                f1 = f(x1);
            } else {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + phi * (hi - lo);
                f2 = f(x2);
            }
        }
        0.5 * (lo + hi)
    };
    let (mut a, mut b) = best;
    for _ in 0..60 {
        let bb = b;
        a = golden(&|x| objective(x, bb), 0.0, hi);
        let aa = a;
        b = golden(&|x| objective(aa, x), 0.0, hi);
    }
    if objective(0.0, 0.0) <= objective(a, b) {
        return (0.0, 0.0);
    }
    (a, b)
}

/// Dense two-phase primal simplex with Bland's rule for
/// `min c x  s.t.  A x = b, x >= 0`. Returns the optimal value, or None if
/// the program is infeasible. Exact up to pivoting round-off; the instances
/// it serves are small enough that anti-cycling Bland pivots are affordable.
pub fn simplex_min(a_rows: &[Vec<f64>], b_rhs: &[f64], c: &[f64]) -> Option<f64> {
    const TOL: f64 = 1e-9;
    let m = a_rows.len();
    let n = c.len();
    // Tableau with artificial variables: columns [x | artificial | rhs].
    let mut t = vec![vec![0.0; n + m + 1]; m];
    for i in 0..m {
        let flip = if b_rhs[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[i][j] = flip * a_rows[i][j];
        }
        t[i][n + i] = 1.0;
        t[i][n + m] = flip * b_rhs[i];
    }
    let mut basis: Vec<usize> = (n..n + m).collect();

    let pivot = |t: &mut Vec<Vec<f64>>, basis: &mut Vec<usize>, row: usize, col: usize| {
        let w = t[row].len();
        let p = t[row][col];
        for j in 0..w {
            t[row][j] /= p;
        }
        for i in 0..t.len() {
            if i != row && t[i][col].abs() > 0.0 {
                let f = t[i][col];
                for j in 0..w {
                    t[i][j] -= f * t[row][j];
                }
            }
        }
        basis[row] = col;
    };

    // One simplex phase: minimize `obj` over the current tableau with Bland's
    // rule; `allowed` bounds the usable columns.
    let run_phase = |t: &mut Vec<Vec<f64>>,
                     basis: &mut Vec<usize>,
                     obj: &[f64],
                     allowed: usize|
     -> Option<f64> {
        loop {
            // Reduced costs via the basic solution's dual: z_j = c_j - c_B B^-1 A_j.
            let mut entering = None;
            for j in 0..allowed {
                if basis.contains(&j) {
                    continue;
                }
                let mut red = obj[j];
                for (i, &bv) in basis.iter().enumerate() {
                    if obj[bv] != 0.0 {
                        red -= obj[bv] * t[i][j];
                    }
                }
                if red < -TOL {
                    entering = Some(j);
                    break; // Bland: smallest eligible index
                }
            }
            let Some(col) = entering else {
                let mut value = 0.0;
                for (i, &bv) in basis.iter().enumerate() {
                    value += obj[bv] * t[i][t[i].len() - 1];
                }
                return Some(value);
            };
            // Ratio test, ties broken by smallest basis variable (Bland).
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..t.len() {
                if t[i][col] > TOL {
                    let ratio = t[i][t[i].len() - 1] / t[i][col];
                    match leave {
                        None => leave = Some((i, ratio)),
                        Some((li, lr)) => {
                            if ratio < lr - TOL
                                || ((ratio - lr).abs() <= TOL && basis[i] < basis[li])
                            {
                                leave = Some((i, ratio));
                            }
                        }
                    }
                }
            }
            let (row, _) = leave?; // None: unbounded
            pivot(t, basis, row, col);
        }
    };

    // Phase 1: drive the artificials to zero.
    let mut phase1_obj = vec![0.0; n + m];
    for j in n..n + m {
        phase1_obj[j] = 1.0;
    }
    let feas = run_phase(&mut t, &mut basis, &phase1_obj, n + m)?;
    if feas > 1e-7 {
        return None; // infeasible
    }
    // Pivot lingering artificials out of the basis where possible.
    for i in 0..m {
        if basis[i] >= n {
            if let Some(col) = (0..n).find(|&j| t[i][j].abs() > TOL) {
                pivot(&mut t, &mut basis, i, col);
            }
        }
    }
    // Phase 2 over the original columns only.
    let mut phase2_obj = vec![0.0; n + m];
    phase2_obj[..n].copy_from_slice(c);
    run_phase(&mut t, &mut basis, &phase2_obj, n)
}

/// The small linear-cost instance as a standard-form LP (occupancy cells are
/// provably nonnegative on the feasible set, so plain sign constraints are
/// valid). Returns the exact optimal value via the simplex.
pub fn lp_vertex_optimum(
    grid: &Grid,
    modes: &ModeSet,
    m0: &[f64],
    spec: &ConstraintSpec,
    cost: &[f64],
) -> Option<f64> {
    let dense = DenseDynamics::assemble(grid, modes, m0);
    let lay = dense.layout;
    let (n_t, n_modes, n_h) = (lay.n_t, lay.n_modes, lay.n_h);
    let n_vars = lay.len();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    // Dynamics equalities.
    for (r, row) in dense.rows.iter().enumerate() {
        let mut full = row.clone();
        full.resize(n_vars, 0.0); // placeholder; slacks appended later
        rows.push(full);
        rhs.push(dense.rhs[r]);
    }
    // Inequalities -> slack bookkeeping: collect (row over primal vars, rhs, sign).
    struct Ineq {
        coeffs: Vec<(usize, f64)>,
        rhs: f64,
    }
    let mut ineqs: Vec<Ineq> = Vec::new();
    for k in 0..n_t {
        for i in 0..n_modes {
            for l in 0..n_h {
                // dt sum_j e - m <= 0
                let mut coeffs = vec![(lay.m_index(k, i, l), -1.0)];
                for j in 0..n_modes {
                    if j == i {
                        continue;
                    }
                    let pair = i * (n_modes - 1) + if j < i { j } else { j - 1 };
                    coeffs.push((lay.e_index(k, pair, l), grid.dt));
                }
                ineqs.push(Ineq { coeffs, rhs: 0.0 });
            }
        }
    }
    for k in 0..=n_t {
        for i in 0..n_modes {
            let coeffs: Vec<(usize, f64)> =
                (0..n_h).map(|l| (lay.m_index(k, i, l), grid.h)).collect();
            if spec.d_upper[i][k] < 1.0 {
                ineqs.push(Ineq { coeffs: coeffs.clone(), rhs: spec.d_upper[i][k] });
            }
            if spec.d_lower[i][k] > 0.0 {
                let neg: Vec<(usize, f64)> =
                    coeffs.iter().map(|&(j, v)| (j, -v)).collect();
                ineqs.push(Ineq { coeffs: neg, rhs: -spec.d_lower[i][k] });
            }
        }
    }
    {
        let top = spec.s_min_cells.min(n_h - 1);
        let mut coeffs = Vec::new();
        for i in 0..n_modes {
            for l in 0..=top {
                coeffs.push((lay.m_index(n_t, i, l), grid.h));
            }
        }
        ineqs.push(Ineq { coeffs, rhs: spec.epsilon });
    }
    let n_slack = ineqs.len();
    let total_vars = n_vars + n_slack;
    for row in rows.iter_mut() {
        row.resize(total_vars, 0.0);
    }
    for (s, ineq) in ineqs.iter().enumerate() {
        let mut row = vec![0.0; total_vars];
        for &(j, v) in &ineq.coeffs {
            row[j] = v;
        }
        row[n_vars + s] = 1.0;
        rows.push(row);
        rhs.push(ineq.rhs);
    }
    let mut full_cost = vec![0.0; total_vars];
    full_cost[..n_vars].copy_from_slice(cost);
    simplex_min(&rows, &rhs, &full_cost)
}

/// Projection onto the polar domain of the perspective conjugate,
/// `{(u, v): u + ((v - theta)^+)^2 / (4 theta_tilde) <= 0}`, by case analysis
/// and bisection on the curved boundary. Independent of the prox code path.
pub fn project_perspective_polar(u0: f64, v0: f64, p: &PerspectiveParams) -> (f64, f64) {
    if p.theta_tilde == 0.0 {
        return (u0.min(0.0), v0.min(p.theta));
    }
    let q = |v: f64| {
        let s = (v - p.theta).max(0.0);
        s * s / (4.0 * p.theta_tilde)
    };
    if u0 + q(v0) <= 0.0 {
        return (u0, v0);
    }
    if v0 <= p.theta {
        return (0.0, v0);
    }
    let g = |v: f64| (q(v) + u0) * (v - p.theta).max(0.0) / (2.0 * p.theta_tilde) + (v - v0);
    let (mut lo, mut hi) = (p.theta, v0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let v = 0.5 * (lo + hi);
    (-q(v), v)
}

/// Deterministic xorshift generator for reproducible test data.
pub struct TestRng(pub u64);

impl TestRng {
    pub fn next_f64(&mut self) -> f64 {
        self.0 ^= self.0 << 13;
        self.0 ^= self.0 >> 7;
        self.0 ^= self.0 << 17;
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    pub fn index(&mut self, n: usize) -> usize {
        (self.next_f64() * n as f64) as usize % n
    }
}
