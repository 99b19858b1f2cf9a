//! Landmark-geometry diagnostics: average distance of each point to its
//! nearest neighbors, summarized per level for model and tree inspection.

use crate::error::{Error, Result};
use crate::kernel::{squared_distance, PointBlock};

/// Average distance of every point to its `k` nearest neighbors within the
/// block (brute force over all pairs).
pub fn knn_mean_distances(points: &PointBlock, k: usize) -> Result<Vec<f64>> {
    let n = points.count();
    if k == 0 {
        return Err(Error::usage("neighbor count must be at least 1"));
    }
    if n < 2 {
        return Ok(vec![0.0; n]);
    }
    let k = k.min(n - 1);
    let mut out = Vec::with_capacity(n);
    let mut dists = Vec::with_capacity(n - 1);
    for i in 0..n {
        dists.clear();
        for j in 0..n {
            if i != j {
                dists.push(squared_distance(points.row(i), points.row(j)).sqrt());
            }
        }
        dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out.push(dists[..k].iter().sum::<f64>() / k as f64);
    }
    Ok(out)
}

/// Median of a slice (averaging the two central order statistics).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    })
}

/// Default neighbor count used in reports: 2 for 1-D data, 7 otherwise.
pub fn default_knn_k(dim: usize) -> usize {
    if dim <= 1 {
        2
    } else {
        7
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn knn_matches_hand_computation() {
        // Points 0, 1, 3 on a line with k = 2:
        //   0 -> (1 + 3)/2 = 2; 1 -> (1 + 2)/2 = 1.5; 3 -> (2 + 3)/2 = 2.5.
        let p = PointBlock::new(array![[0.0], [1.0], [3.0]]).unwrap();
        let d = knn_mean_distances(&p, 2).unwrap();
        assert_abs_diff_eq!(d[0], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d[1], 1.5, epsilon = 1e-15);
        assert_abs_diff_eq!(d[2], 2.5, epsilon = 1e-15);
    }

    #[test]
    fn knn_matches_brute_oracle_on_random_points() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let pts = ndarray::Array2::from_shape_fn((30, 2), |_| rng.gen::<f64>());
        let p = PointBlock::new(pts.clone()).unwrap();
        let got = knn_mean_distances(&p, 3).unwrap();
        // Independent all-pairs oracle.
        for i in 0..30 {
            let mut ds: Vec<f64> = (0..30)
                .filter(|&j| j != i)
                .map(|j| {
                    let dx = pts[(i, 0)] - pts[(j, 0)];
                    let dy = pts[(i, 1)] - pts[(j, 1)];
                    (dx * dx + dy * dy).sqrt()
                })
                .collect();
            ds.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let want = (ds[0] + ds[1] + ds[2]) / 3.0;
            assert_abs_diff_eq!(got[i], want, epsilon = 1e-12);
        }
    }

    #[test]
    fn median_and_defaults() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
        assert_eq!(default_knn_k(1), 2);
        assert_eq!(default_knn_k(5), 7);
    }
}
