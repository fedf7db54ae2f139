//! Euclidean projection onto the affine set of scheme trajectories,
//! `{y : C y = (m0, 0)}`, via the normal equations `(C C^T) lambda = C y - rhs`
//! solved with Jacobi-preconditioned conjugate gradients. The multiplier is
//! kept between calls so consecutive projections warm-start each other.

use crate::dynamics::TransportOperator;
use crate::solver::SolverError;

pub struct DynamicsProjector {
    op: TransportOperator,
    rhs: Vec<f64>,
    lambda: Vec<f64>,
    /// Inverse diagonal of C C^T (Jacobi preconditioner).
    inv_diag: Vec<f64>,
    pub tol: f64,
    pub max_iterations: usize,
    /// CG iterations spent by the most recent call.
    pub last_iterations: usize,
    scratch: Scratch,
}

struct Scratch {
    r: Vec<f64>,
    z: Vec<f64>,
    p: Vec<f64>,
    mp: Vec<f64>,
    full: Vec<f64>,
    defect: Vec<f64>,
}

impl DynamicsProjector {
    /// `m0` holds the initial cell values in `[mode][cell]` layout.
    pub fn new(op: TransportOperator, m0: &[f64]) -> DynamicsProjector {
        let lay = op.layout();
        let n_m = lay.n_m();
        let mut rhs = vec![0.0; n_m];
        rhs[..m0.len()].copy_from_slice(m0);
        // diag(C C^T) by applying the operator pair to unit residual vectors
        // would cost n_m passes; instead accumulate row norms from the
        // adjoint of unit vectors in blocks of the time axis. The adjoint of
        // a single residual row is sparse and cheap through the stencil, but
        // the simplest exact route is one adjoint per row on a zero-padded
        // one-hot. That is O(n_m * n) once; acceptable at build time for the
        // problem sizes this solver targets.
        let mut inv_diag = vec![0.0; n_m];
        let mut unit = vec![0.0; n_m];
        let mut row = vec![0.0; lay.len()];
        for idx in 0..n_m {
            unit[idx] = 1.0;
            op.apply_adjoint(&unit, &mut row);
            let d: f64 = row.iter().map(|v| v * v).sum();
            inv_diag[idx] = 1.0 / d.max(1e-300);
            unit[idx] = 0.0;
        }
        DynamicsProjector {
            rhs,
            lambda: vec![0.0; n_m],
            inv_diag,
            tol: 1e-10,
            max_iterations: 200_000,
            last_iterations: 0,
            scratch: Scratch {
                r: vec![0.0; n_m],
                z: vec![0.0; n_m],
                p: vec![0.0; n_m],
                mp: vec![0.0; n_m],
                full: vec![0.0; lay.len()],
                defect: vec![0.0; n_m],
            },
            op,
        }
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    /// Drops the warm-start multiplier (used when projecting unrelated
    /// points, e.g. in tests).
    pub fn reset_warm_start(&mut self) {
        self.lambda.fill(0.0);
    }

    /// Returns `argmin ||z - x|| s.t. C z = rhs`.
    pub fn project(&mut self, x: &[f64]) -> Result<Vec<f64>, SolverError> {
        let n_m = self.rhs.len();
        let s = &mut self.scratch;
        // defect = C x - rhs
        self.op.apply_forward(x, &mut s.defect);
        for (d, r) in s.defect.iter_mut().zip(&self.rhs) {
            *d -= r;
        }
        let rhs_norm = norm2(&s.defect).max(1.0);
        let tol = self.tol * rhs_norm;

        // r = defect - M lambda, M = C C^T
        apply_normal(&self.op, &self.lambda, &mut s.mp, &mut s.full);
        for i in 0..n_m {
            s.r[i] = s.defect[i] - s.mp[i];
        }
        let mut rz = precondition(&mut s.z, &s.r, &self.inv_diag);
        s.p.copy_from_slice(&s.z);
        let mut res_norm = norm2(&s.r);
        let mut best_res = res_norm;
        let mut since_progress = 0usize;
        let mut iterations = 0usize;
        while res_norm > tol {
            if iterations >= self.max_iterations {
                return Err(SolverError::LinearSolveStagnation {
                    iterations,
                    residual: res_norm,
                });
            }
            apply_normal(&self.op, &s.p, &mut s.mp, &mut s.full);
            let denom = dot(&s.p, &s.mp);
            if denom <= 0.0 {
                return Err(SolverError::LinearSolveStagnation {
                    iterations,
                    residual: res_norm,
                });
            }
            let alpha = rz / denom;
            for i in 0..n_m {
                self.lambda[i] += alpha * s.p[i];
                s.r[i] -= alpha * s.mp[i];
            }
            let rz_next = precondition(&mut s.z, &s.r, &self.inv_diag);
            let beta = rz_next / rz;
            rz = rz_next;
            for i in 0..n_m {
                s.p[i] = s.z[i] + beta * s.p[i];
            }
            res_norm = norm2(&s.r);
            if res_norm < 0.99 * best_res {
                best_res = res_norm;
                since_progress = 0;
            } else {
                since_progress += 1;
                if since_progress > 1000 {
                    return Err(SolverError::LinearSolveStagnation {
                        iterations,
                        residual: res_norm,
                    });
                }
            }
            iterations += 1;
        }
        self.last_iterations = iterations;
        // out = x - C^T lambda
        self.op.apply_adjoint(&self.lambda, &mut s.full);
        Ok(x.iter().zip(&s.full).map(|(xv, cv)| xv - cv).collect())
    }
}

/// out = C (C^T lam)
fn apply_normal(op: &TransportOperator, lam: &[f64], out: &mut [f64], full: &mut [f64]) {
    op.apply_adjoint(lam, full);
    op.apply_forward(full, out);
}

fn precondition(z: &mut [f64], r: &[f64], inv_diag: &[f64]) -> f64 {
    let mut rz = 0.0;
    for i in 0..r.len() {
        z[i] = r[i] * inv_diag[i];
        rz += r[i] * z[i];
    }
    rz
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
