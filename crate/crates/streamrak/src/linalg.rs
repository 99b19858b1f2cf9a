//! Small dense linear-algebra kit used by the solver, the baselines and the
//! test oracles.
//!
//! Everything here operates on systems of at most a few thousand unknowns
//! (landmark counts), so plain O(n^3) routines are sufficient and keep the
//! crate free of native library linkage.

use crate::error::{Error, Result};
use ndarray::{Array1, Array2};

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
/// Fails with a numerical error when a non-positive pivot appears.
pub fn cholesky_lower(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::usage("cholesky requires a square matrix"));
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut diag = a[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if !(diag.is_finite() && diag > 0.0) {
            return Err(Error::numerical(format!(
                "cholesky breakdown at pivot {j}: diagonal {diag:.3e}"
            )));
        }
        let d = diag.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// Solve `L x = b` for lower-triangular `L` (forward substitution).
pub fn solve_lower(l: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for i in 0..n {
        let mut s = x[i];
        for k in 0..i {
            s -= l[(i, k)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// Solve `L^T x = b` for lower-triangular `L` (backward substitution).
pub fn solve_lower_transpose(l: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// Solve `A x = b` by LU with partial pivoting. General-purpose oracle path.
pub fn lu_solve(a: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return Err(Error::usage("lu_solve requires square A and matching b"));
    }
    let mut lu = a.clone();
    let mut x = b.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    for col in 0..n {
        let mut pivot = col;
        let mut best = lu[(col, col)].abs();
        for r in (col + 1)..n {
            let v = lu[(r, col)].abs();
            if v > best {
                best = v;
                pivot = r;
            }
        }
        if best == 0.0 || !best.is_finite() {
            return Err(Error::numerical(format!(
                "singular system: zero pivot in column {col}"
            )));
        }
        if pivot != col {
            perm.swap(pivot, col);
            for c in 0..n {
                let tmp = lu[(col, c)];
                lu[(col, c)] = lu[(pivot, c)];
                lu[(pivot, c)] = tmp;
            }
            x.swap(pivot, col);
        }
        let d = lu[(col, col)];
        for r in (col + 1)..n {
            let f = lu[(r, col)] / d;
            lu[(r, col)] = f;
            for c in (col + 1)..n {
                lu[(r, c)] -= f * lu[(col, c)];
            }
            x[r] -= f * x[col];
        }
    }
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in (i + 1)..n {
            s -= lu[(i, k)] * x[k];
        }
        x[i] = s / lu[(i, i)];
    }
    Ok(x)
}

/// Eigenvalues and orthonormal eigenvectors of a symmetric matrix via cyclic
/// Jacobi rotations. Returns `(values, vectors)` with `vectors` holding the
/// eigenvectors as columns, sorted by ascending eigenvalue.
pub fn symmetric_eigen(a: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::usage("symmetric_eigen requires a square matrix"));
    }
    let mut m = a.clone();
    let mut v = Array2::<f64>::eye(n);
    let max_sweeps = 64;
    for _ in 0..max_sweeps {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[(i, j)] * m[(i, j)];
            }
        }
        if off.sqrt() < 1e-14 * (1.0 + frobenius(&m)) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].partial_cmp(&m[(j, j)]).unwrap());
    let values = Array1::from_iter(order.iter().map(|&i| m[(i, i)]));
    let mut vectors = Array2::<f64>::zeros((n, n));
    for (new, &old) in order.iter().enumerate() {
        for k in 0..n {
            vectors[(k, new)] = v[(k, old)];
        }
    }
    Ok((values, vectors))
}

/// Eigenvalues only, ascending.
pub fn symmetric_eigenvalues(a: &Array2<f64>) -> Result<Array1<f64>> {
    symmetric_eigen(a).map(|(vals, _)| vals)
}

pub fn frobenius(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn euclidean(v: &Array1<f64>) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Array2::from_shape_fn((n, n), |_| rng.gen::<f64>() - 0.5);
        let mut a = g.t().dot(&g);
        for i in 0..n {
            a[(i, i)] += 0.5;
        }
        a
    }

    #[test]
    fn cholesky_reconstructs() {
        let a = random_spd(12, 1);
        let l = cholesky_lower(&a).unwrap();
        let back = l.dot(&l.t());
        for (x, y) in a.iter().zip(back.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-10);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(cholesky_lower(&a).is_err());
    }

    #[test]
    fn triangular_solves_invert() {
        let a = random_spd(10, 2);
        let l = cholesky_lower(&a).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = Array1::from_shape_fn(10, |_| rng.gen::<f64>());
        let y = solve_lower(&l, &b);
        let x = solve_lower_transpose(&l, &y);
        let back = a.dot(&x);
        for (u, w) in back.iter().zip(b.iter()) {
            assert_abs_diff_eq!(u, w, epsilon = 1e-9);
        }
    }

    #[test]
    fn lu_solves_general_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = Array2::from_shape_fn((15, 15), |_| rng.gen::<f64>() - 0.5);
        let xtrue = Array1::from_shape_fn(15, |_| rng.gen::<f64>());
        let b = a.dot(&xtrue);
        let x = lu_solve(&a, &b).unwrap();
        for (u, w) in x.iter().zip(xtrue.iter()) {
            assert_abs_diff_eq!(u, w, epsilon = 1e-9);
        }
    }

    #[test]
    fn jacobi_matches_known_eigenvalues() {
        let a = array![[2.0, 1.0], [1.0, 2.0]];
        let (vals, vecs) = symmetric_eigen(&a).unwrap();
        assert_abs_diff_eq!(vals[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(vals[1], 3.0, epsilon = 1e-12);
        // A v = lambda v for each column.
        for c in 0..2 {
            let v = vecs.column(c).to_owned();
            let av = a.dot(&v);
            for k in 0..2 {
                assert_abs_diff_eq!(av[k], vals[c] * v[k], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn jacobi_diagonalizes_random_symmetric() {
        let a = random_spd(25, 9);
        let (vals, vecs) = symmetric_eigen(&a).unwrap();
        for c in 0..25 {
            let v = vecs.column(c).to_owned();
            let av = a.dot(&v);
            for k in 0..25 {
                assert_abs_diff_eq!(av[k], vals[c] * v[k], epsilon = 1e-8);
            }
        }
        // Trace equals eigenvalue sum.
        let trace: f64 = (0..25).map(|i| a[(i, i)]).sum();
        assert_abs_diff_eq!(trace, vals.sum(), epsilon = 1e-9);
    }
}
