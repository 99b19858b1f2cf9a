//! Gaussian kernel, bandwidth schedule and kernel-matrix assembly.
//!
//! Every level of the pyramid uses the same radial kernel
//! `k(x, y) = exp(-||x - y||^2 / (2 r^2))` with a bandwidth tied to the
//! cover-tree level through the halving schedule `r_l = 2^-l r_0`.

use crate::error::{Error, Result};
use ndarray::{Array2, ArrayView1, ArrayView2};

/// Row tile size for blocked kernel-matrix assembly.
const ASSEMBLY_TILE: usize = 256;

/// Squared distances below this are treated as exactly zero.
const DIST_SQ_FLOOR: f64 = 1e-300;

/// A strictly positive kernel bandwidth, in the same units as the input
/// coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bandwidth(f64);

impl Bandwidth {
    pub fn new(value: f64) -> Result<Self> {
        if !(value.is_finite() && value > 0.0) {
            return Err(Error::usage(format!(
                "bandwidth must be a finite positive real, got {value}"
            )));
        }
        Ok(Bandwidth(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Bandwidth at tree level `l`: exactly `2^-l * r0` (binary exponent
/// scaling, no rounding drift).
pub fn bandwidth_at_level(level: u32, r0: Bandwidth) -> Bandwidth {
    Bandwidth(r0.0 * 2f64.powi(-(level as i32)))
}

/// A dense block of points, row-major `count x dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointBlock {
    data: Array2<f64>,
}

impl PointBlock {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.ncols() == 0 {
            return Err(Error::usage("point block dimension must be positive"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("point block contains non-finite coordinates"));
        }
        Ok(PointBlock { data })
    }

    pub fn from_rows(rows: &[Vec<f64>], dim: usize) -> Result<Self> {
        let mut data = Array2::zeros((rows.len(), dim));
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::usage(format!(
                    "row {i} has dimension {}, expected {dim}",
                    row.len()
                )));
            }
            for (j, v) in row.iter().enumerate() {
                data[(i, j)] = *v;
            }
        }
        PointBlock::new(data)
    }

    pub fn count(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.data.row(i)
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }
}

/// Squared Euclidean distance with the duplicate-point floor applied.
#[inline]
pub(crate) fn squared_distance(x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> f64 {
    let mut acc = 0.0;
    for (a, b) in x.iter().zip(y.iter()) {
        let d = a - b;
        acc += d * d;
    }
    if acc < DIST_SQ_FLOOR {
        0.0
    } else {
        acc
    }
}

#[inline]
pub(crate) fn gaussian_from_sq(dist_sq: f64, r: Bandwidth) -> f64 {
    (-dist_sq / (2.0 * r.0 * r.0)).exp()
}

/// Gaussian kernel value `exp(-||x - y||^2 / (2 r^2))`, in `(0, 1]`.
pub fn gaussian_kernel(x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>, r: Bandwidth) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::usage(format!(
            "kernel arguments have mismatched dimensions {} and {}",
            x.len(),
            y.len()
        )));
    }
    Ok(gaussian_from_sq(squared_distance(x, y), r))
}

/// Kernel matrix between two point blocks: entry `(i, j)` is
/// `k(a_i, b_j, r)`. Assembly is tiled by rows to bound peak temporary
/// memory on long blocks.
pub fn kernel_cross_matrix(a: &PointBlock, b: &PointBlock, r: Bandwidth) -> Result<Array2<f64>> {
    if a.dim() != b.dim() {
        return Err(Error::usage(format!(
            "point blocks have mismatched dimensions {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    let mut out = Array2::zeros((a.count(), b.count()));
    let inv = 1.0 / (2.0 * r.0 * r.0);
    let mut start = 0;
    while start < a.count() {
        let end = (start + ASSEMBLY_TILE).min(a.count());
        for i in start..end {
            let ai = a.row(i);
            for j in 0..b.count() {
                let d2 = squared_distance(ai, b.row(j));
                out[(i, j)] = (-d2 * inv).exp();
            }
        }
        start = end;
    }
    Ok(out)
}

/// Fill `out` with the kernel row `k(x, b_j, r)` for every landmark `b_j`.
pub(crate) fn kernel_row_into(
    x: ArrayView1<'_, f64>,
    b: &PointBlock,
    r: Bandwidth,
    out: &mut [f64],
) {
    debug_assert_eq!(out.len(), b.count());
    let inv = 1.0 / (2.0 * r.0 * r.0);
    for (j, slot) in out.iter_mut().enumerate() {
        let d2 = squared_distance(x, b.row(j));
        *slot = (-d2 * inv).exp();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn bw(v: f64) -> Bandwidth {
        Bandwidth::new(v).unwrap()
    }

    #[test]
    fn kernel_is_one_at_zero_distance() {
        let x = array![1.5, -2.0, 3.0];
        for r in [0.1, 1.0, 17.0] {
            assert_eq!(gaussian_kernel(x.view(), x.view(), bw(r)).unwrap(), 1.0);
        }
    }

    #[test]
    fn kernel_at_one_bandwidth_distance() {
        // ||x - y|| = r gives exp(-1/2).
        let x = array![0.0];
        let y = array![0.7];
        let k = gaussian_kernel(x.view(), y.view(), bw(0.7)).unwrap();
        assert_abs_diff_eq!(k, (-0.5f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(k, 0.6065306597126334, epsilon = 1e-15);
    }

    #[test]
    fn kernel_direct_substitution() {
        // ||x - y|| = 2, r = 1 gives exp(-2).
        let x = array![0.0, 0.0];
        let y = array![2.0, 0.0];
        let k = gaussian_kernel(x.view(), y.view(), bw(1.0)).unwrap();
        assert_abs_diff_eq!(k, (-2.0f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(k, 0.1353352832366127, epsilon = 1e-15);
    }

    #[test]
    fn kernel_dimension_mismatch_is_usage_error() {
        let x = array![0.0, 1.0];
        let y = array![0.0];
        assert!(matches!(
            gaussian_kernel(x.view(), y.view(), bw(1.0)),
            Err(crate::Error::Usage(_))
        ));
    }

    #[test]
    fn kernel_symmetric_in_arguments() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let x = array![rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
            let y = array![rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
            let a = gaussian_kernel(x.view(), y.view(), bw(0.5)).unwrap();
            let b = gaussian_kernel(y.view(), x.view(), bw(0.5)).unwrap();
            assert_eq!(a, b);
            assert!(a > 0.0 && a <= 1.0);
        }
    }

    #[test]
    fn bandwidth_schedule_is_exact() {
        let r0 = bw(2.0);
        assert_eq!(bandwidth_at_level(0, r0).value(), 2.0);
        assert_eq!(bandwidth_at_level(3, r0).value(), 0.25);
        assert_eq!(bandwidth_at_level(16, bw(1.0)).value(), 2f64.powi(-16));
        // Halving relation holds exactly at every level.
        for l in 0..40 {
            assert_eq!(
                bandwidth_at_level(l + 1, r0).value(),
                bandwidth_at_level(l, r0).value() / 2.0
            );
        }
    }

    #[test]
    fn cross_matrix_single_point() {
        let p = PointBlock::new(array![[0.3, 0.4]]).unwrap();
        let k = kernel_cross_matrix(&p, &p, bw(1.0)).unwrap();
        assert_eq!(k, array![[1.0]]);
    }

    #[test]
    fn cross_matrix_two_points_at_bandwidth() {
        let p = PointBlock::new(array![[0.0], [1.0]]).unwrap();
        let k = kernel_cross_matrix(&p, &p, bw(1.0)).unwrap();
        assert_eq!(k[(0, 0)], 1.0);
        assert_eq!(k[(1, 1)], 1.0);
        assert_abs_diff_eq!(k[(0, 1)], (-0.5f64).exp(), epsilon = 1e-16);
        assert_eq!(k[(0, 1)], k[(1, 0)]);
    }

    #[test]
    fn cross_matrix_matches_scalar_oracle() {
        // Entrywise loop oracle over random 5x3 and 4x3 blocks.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = Array2::from_shape_fn((5, 3), |_| rng.gen::<f64>() * 4.0 - 2.0);
        let b = Array2::from_shape_fn((4, 3), |_| rng.gen::<f64>() * 4.0 - 2.0);
        let pa = PointBlock::new(a.clone()).unwrap();
        let pb = PointBlock::new(b.clone()).unwrap();
        let r = bw(0.8);
        let k = kernel_cross_matrix(&pa, &pb, r).unwrap();
        for i in 0..5 {
            for j in 0..4 {
                let expect = gaussian_kernel(a.row(i), b.row(j), r).unwrap();
                assert_abs_diff_eq!(k[(i, j)], expect, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn self_matrix_symmetric_and_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let m = 40;
        let pts = Array2::from_shape_fn((m, 2), |_| rng.gen::<f64>());
        let p = PointBlock::new(pts).unwrap();
        let k = kernel_cross_matrix(&p, &p, bw(0.3)).unwrap();
        // Exact transpose symmetry and unit diagonal.
        for i in 0..m {
            assert_eq!(k[(i, i)], 1.0);
            for j in 0..m {
                assert_eq!(k[(i, j)], k[(j, i)]);
            }
        }
        // Smallest eigenvalue of a Gaussian kernel matrix is >= -1e-10 * m.
        let eigs = crate::linalg::symmetric_eigenvalues(&k).unwrap();
        let min = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min >= -1e-10 * m as f64, "min eigenvalue {min}");
    }

    #[test]
    fn monotone_decay_with_distance() {
        let r = bw(0.9);
        let x = array![0.0];
        let mut prev = f64::INFINITY;
        for step in 1..40 {
            let y = array![step as f64 * 0.05];
            let k = gaussian_kernel(x.view(), y.view(), r).unwrap();
            assert!(k < prev, "kernel must strictly decrease with distance");
            prev = k;
        }
    }
}
