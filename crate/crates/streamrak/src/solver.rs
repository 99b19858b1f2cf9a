//! FALKON-style solve of the sketched ridge system.
//!
//! The level system is `H a = z` with `H = K_nm^T K_nm + lambda n K_mm`,
//! held entirely at landmark scale. Conjugate gradient runs on the
//! preconditioned form `B^T H B beta = B^T z`, `a = B beta`, where
//! `B B^T = (n/m K_mm^2 + lambda n K_mm)^-1` is the paper-standard
//! approximation of the ideal preconditioner, realized through two
//! Cholesky factors.

use crate::accumulator::{LevelAccumulator, Phase};
use crate::error::{Error, Result};
use crate::kernel::kernel_cross_matrix;
use crate::linalg::{cholesky_lower, euclidean, solve_lower, solve_lower_transpose};
use ndarray::{Array1, Array2};

/// Jitter escalation for near-degenerate landmark kernels.
const JITTER_START: f64 = 1e-12;
const JITTER_MAX: f64 = 1e-6;

/// Two-factor preconditioner `B = (1/sqrt(n)) L_t^-T L_a^-T` built from
/// lower-triangular Cholesky factors of `K_mm` and of the inner matrix
/// `(1/m) L_t^T L_t + lambda I`.
#[derive(Debug, Clone)]
pub struct Preconditioner {
    l_t: Array2<f64>,
    l_a: Array2<f64>,
    inv_sqrt_n: f64,
}

impl Preconditioner {
    /// `B v`
    pub fn apply(&self, v: &Array1<f64>) -> Array1<f64> {
        let y = solve_lower_transpose(&self.l_a, v);
        let x = solve_lower_transpose(&self.l_t, &y);
        x * self.inv_sqrt_n
    }

    /// `B^T v`
    pub fn apply_transpose(&self, v: &Array1<f64>) -> Array1<f64> {
        let y = solve_lower(&self.l_t, v);
        let x = solve_lower(&self.l_a, &y);
        x * self.inv_sqrt_n
    }
}

/// Factorize the preconditioner for an m-landmark system with `n` samples
/// and ridge `lambda`. Escalating diagonal jitter keeps near-degenerate
/// landmark kernels factorizable; persistent failure is a numerical error
/// carrying a condition diagnostic.
pub fn build_preconditioner(
    kmm: &Array2<f64>,
    n: u64,
    m: usize,
    lambda: f64,
) -> Result<Preconditioner> {
    if kmm.nrows() != m || kmm.ncols() != m {
        return Err(Error::usage(format!(
            "kmm must be {m}x{m}, got {}x{}",
            kmm.nrows(),
            kmm.ncols()
        )));
    }
    if n == 0 || m == 0 {
        return Err(Error::usage("preconditioner needs n >= 1 and m >= 1"));
    }
    if !(lambda > 0.0) {
        return Err(Error::usage(format!("lambda must be positive, got {lambda}")));
    }
    let trace_scale = (0..m).map(|i| kmm[(i, i)]).sum::<f64>() / m as f64;
    let mut jitter = JITTER_START;
    let mut next_jitter = JITTER_START * 10.0;
    loop {
        let mut shifted = kmm.clone();
        if jitter > 0.0 {
            for i in 0..m {
                shifted[(i, i)] += jitter * trace_scale;
            }
        }
        let attempt = (|| -> Result<Preconditioner> {
            let l_t = cholesky_lower(&shifted)?;
            // inner = (1/m) L_t^T L_t + lambda I
            let mut inner = l_t.t().dot(&l_t) / m as f64;
            for i in 0..m {
                inner[(i, i)] += lambda;
            }
            let l_a = cholesky_lower(&inner)?;
            Ok(Preconditioner {
                l_t,
                l_a,
                inv_sqrt_n: 1.0 / (n as f64).sqrt(),
            })
        })();
        match attempt {
            Ok(p) => return Ok(p),
            Err(_) if next_jitter <= JITTER_MAX => {
                jitter = next_jitter;
                next_jitter *= 10.0;
            }
            Err(e) => {
                return Err(Error::numerical(format!(
                    "preconditioner factorization failed after jitter {jitter:.1e} \
                     (mean diagonal {trace_scale:.3e}): {e}"
                )))
            }
        }
    }
}

/// Plain conjugate gradient on a symmetric positive-definite operator.
/// Stops at `||A x - b|| / ||b|| <= tol` or after `max_iter` iterations,
/// whichever comes first; hitting the cap is not an error.
pub fn conjugate_gradient<F>(
    apply: F,
    rhs: &Array1<f64>,
    max_iter: usize,
    tol: f64,
) -> Result<(Array1<f64>, usize, f64)>
where
    F: Fn(&Array1<f64>) -> Array1<f64>,
{
    let n = rhs.len();
    let rhs_norm = euclidean(rhs);
    if rhs_norm == 0.0 {
        return Ok((Array1::zeros(n), 0, 0.0));
    }
    let mut x = Array1::<f64>::zeros(n);
    let mut r = rhs.clone();
    let mut p = r.clone();
    let mut rr = r.dot(&r);
    let mut iterations = 0;
    let mut residual = 1.0;
    for _ in 0..max_iter {
        let ap = apply(&p);
        let pap = p.dot(&ap);
        if !pap.is_finite() {
            return Err(Error::numerical("non-finite curvature in conjugate gradient"));
        }
        if pap <= 0.0 {
            // Non-positive curvature on the very first direction means the
            // operator is not positive definite. Later on it signals the
            // floating-point noise floor of a semi-definite system; the
            // current iterate is the best answer available.
            if iterations == 0 {
                return Err(Error::numerical(format!(
                    "conjugate gradient breakdown: curvature {pap:.3e}"
                )));
            }
            return Ok((x, iterations, residual));
        }
        let alpha = rr / pap;
        x = &x + &(&p * alpha);
        r = &r - &(&ap * alpha);
        iterations += 1;
        let rr_new = r.dot(&r);
        residual = rr_new.sqrt() / rhs_norm;
        if !residual.is_finite() {
            return Err(Error::numerical("non-finite residual in conjugate gradient"));
        }
        if residual <= tol {
            return Ok((x, iterations, residual));
        }
        let beta = rr_new / rr;
        p = &r + &(&p * beta);
        rr = rr_new;
    }
    Ok((x, iterations, residual))
}

/// Coefficients of one trained level (one column per output).
#[derive(Debug, Clone)]
pub struct LevelSolution {
    pub coefficients: Array2<f64>,
    pub iterations_used: usize,
    pub final_relative_residual: f64,
}

/// Solve one level's sketched ridge system from a sufficient accumulator.
/// `H` is applied as two landmark-scale matrix-vector products; it is never
/// materialized against the stream.
pub fn solve_level(
    acc: &mut LevelAccumulator,
    lambda: f64,
    max_iter: usize,
    tol: f64,
) -> Result<LevelSolution> {
    if acc.phase() == Phase::Accumulating {
        return Err(Error::state(
            "solve_level requires a sufficient accumulator",
        ));
    }
    let m = acc.landmarks().count();
    let n = acc.n_seen();
    if n == 0 {
        return Err(Error::state("no samples accumulated"));
    }
    let kmm = kernel_cross_matrix(acc.landmarks(), acc.landmarks(), acc.bandwidth())?;
    let pre = build_preconditioner(&kmm, n, m, lambda)?;
    let lambda_n = lambda * n as f64;

    let outputs = acc.outputs();
    let gram = acc.gram().clone();
    let rhs = acc.rhs().clone();
    let mut coefficients = Array2::zeros((m, outputs));
    let mut iterations_used = 0;
    let mut final_relative_residual = 0.0f64;
    for col in 0..outputs {
        let z = rhs.column(col).to_owned();
        let pre_ref = &pre;
        let gram_ref = &gram;
        let kmm_ref = &kmm;
        let apply = move |beta: &Array1<f64>| -> Array1<f64> {
            let v = pre_ref.apply(beta);
            let hv = gram_ref.dot(&v) + kmm_ref.dot(&v) * lambda_n;
            pre_ref.apply_transpose(&hv)
        };
        let bz = pre.apply_transpose(&z);
        let (beta, iters, res) = conjugate_gradient(apply, &bz, max_iter, tol)?;
        let alpha = pre.apply(&beta);
        if alpha.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("non-finite level coefficients"));
        }
        coefficients.column_mut(col).assign(&alpha);
        iterations_used = iterations_used.max(iters);
        final_relative_residual = final_relative_residual.max(res);
    }
    Ok(LevelSolution {
        coefficients,
        iterations_used,
        final_relative_residual,
    })
}
