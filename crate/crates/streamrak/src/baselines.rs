//! Reference estimators for head-to-head benchmarks: exact kernel ridge
//! regression, a Laplacian-pyramid KRR on uniform Nystrom landmarks, and
//! single-level FALKON with cross-validated bandwidth.

use crate::accumulator::LevelAccumulator;
use crate::bench::{mse, BatchDataset};
use crate::error::{Error, Result};
use crate::kernel::{bandwidth_at_level, kernel_cross_matrix, Bandwidth, PointBlock};
use crate::linalg::cholesky_lower;
use crate::pyramid::{LevelModel, PyramidModel};
use crate::solver::solve_level;
use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Exact KRR coefficients: solve `(K_nn + lambda n I) a = y` by Cholesky.
pub fn krr_fit(
    points: &PointBlock,
    y: &Array1<f64>,
    r: Bandwidth,
    lambda: f64,
) -> Result<Array1<f64>> {
    let n = points.count();
    if n == 0 || y.len() != n {
        return Err(Error::usage("krr_fit needs matching non-empty points and targets"));
    }
    let mut k = kernel_cross_matrix(points, points, r)?;
    let shift = lambda * n as f64;
    for i in 0..n {
        k[(i, i)] += shift;
    }
    let l = cholesky_lower(&k).map_err(|e| {
        Error::numerical(format!("krr system singular (lambda {lambda}): {e}"))
    })?;
    let z = crate::linalg::solve_lower(&l, y);
    Ok(crate::linalg::solve_lower_transpose(&l, &z))
}

/// Evaluate a plain KRR estimator `f(x) = sum_i a_i k(x, x_i)`.
pub fn krr_predict(
    points: &PointBlock,
    coeffs: &Array1<f64>,
    r: Bandwidth,
    x: ndarray::ArrayView1<'_, f64>,
) -> f64 {
    let mut acc = 0.0;
    for i in 0..points.count() {
        let d2 = crate::kernel::squared_distance(x, points.row(i));
        acc += coeffs[i] * (-d2 / (2.0 * r.value() * r.value())).exp();
    }
    acc
}

/// Uniform without-replacement Nystrom sample of `m` rows.
pub fn nystrom_sample(points: &PointBlock, m: usize, seed: u64) -> Result<PointBlock> {
    let n = points.count();
    if m == 0 || m > n {
        return Err(Error::usage(format!(
            "nystrom sample size {m} out of range for {n} points"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..m {
        let j = i + rng.gen_range(0..(n - i));
        idx.swap(i, j);
    }
    let mut data = Array2::zeros((m, points.dim()));
    for (row, &i) in idx[..m].iter().enumerate() {
        data.row_mut(row).assign(&points.row(i));
    }
    PointBlock::new(data)
}

fn fit_level_on_rows(
    points: &PointBlock,
    residuals: &[f64],
    rows: &[usize],
    landmarks: &PointBlock,
    bandwidth: Bandwidth,
    lambda: f64,
) -> Result<Array1<f64>> {
    let mut acc = LevelAccumulator::new(landmarks.clone(), bandwidth, 1)?;
    for &i in rows {
        let x: Vec<f64> = points.row(i).to_vec();
        acc.accumulate(&x, &[residuals[i]])?;
    }
    acc.sufficiency_check(f64::INFINITY, f64::INFINITY, rows.len() as u64);
    // The preconditioned system converges in a handful of iterations; the
    // budget is generous so batch fits run to the noise floor.
    let max_iter = (2 * landmarks.count()).clamp(50, 400);
    let sol = solve_level(&mut acc, lambda, max_iter, 1e-10)?;
    Ok(sol.coefficients.column(0).to_owned())
}

/// Laplacian-pyramid KRR on one uniformly sampled landmark set, reused at
/// every level. With `per_level_n` the training rows are split into
/// disjoint consecutive slices, one per level; otherwise every level sees
/// all rows.
#[allow(clippy::too_many_arguments)]
pub fn lp_krr_fit(
    data: &BatchDataset,
    target: usize,
    r0: Bandwidth,
    start_level: u16,
    levels: u16,
    lambda: f64,
    m: usize,
    per_level_n: Option<usize>,
    seed: u64,
) -> Result<PyramidModel> {
    if levels == 0 {
        return Err(Error::usage("lp_krr_fit needs at least one level"));
    }
    let n = data.len();
    if m > n {
        return Err(Error::usage(format!("m {m} exceeds n {n}")));
    }
    if let Some(k) = per_level_n {
        if k * levels as usize > n {
            return Err(Error::usage(format!(
                "per-level slice {k} x {levels} levels exceeds n {n}"
            )));
        }
    }
    let y = data.target_column(target);
    let landmarks = nystrom_sample(&data.points, m, seed)?;
    let mut model = PyramidModel::empty(r0, data.points.dim());
    let mut residuals: Vec<f64> = y.to_vec();
    for idx in 0..levels {
        let level = start_level + idx;
        let bandwidth = bandwidth_at_level(level as u32, r0);
        let rows: Vec<usize> = match per_level_n {
            Some(k) => ((idx as usize * k)..((idx as usize + 1) * k)).collect(),
            None => (0..n).collect(),
        };
        let coeffs = fit_level_on_rows(&data.points, &residuals, &rows, &landmarks, bandwidth, lambda)?;
        let lm = LevelModel::new(level, bandwidth, landmarks.clone(), coeffs)?;
        model = model.add_level(lm)?;
        let deepest = model.levels().last().unwrap();
        for i in 0..n {
            residuals[i] -= deepest.correction(data.points.row(i));
        }
    }
    Ok(model)
}

/// Single-level FALKON fit with uniform Nystrom centers.
pub fn falkon_fit(
    data: &BatchDataset,
    target: usize,
    r: Bandwidth,
    lambda: f64,
    m: usize,
    seed: u64,
) -> Result<LevelModel> {
    let n = data.len();
    if m > n {
        return Err(Error::usage(format!("m {m} exceeds n {n}")));
    }
    let y = data.target_column(target);
    let landmarks = nystrom_sample(&data.points, m, seed)?;
    let residuals: Vec<f64> = y.to_vec();
    let rows: Vec<usize> = (0..n).collect();
    let coeffs = fit_level_on_rows(&data.points, &residuals, &rows, &landmarks, r, lambda)?;
    LevelModel::new(0, r, landmarks, coeffs)
}

/// Bandwidth grid search for single-level FALKON: candidates
/// `r0 2^-l` for `l` in `[level_lo, level_hi]`, scored by k-fold
/// cross-validation on a random held-out slice of the data.
#[allow(clippy::too_many_arguments)]
pub fn cv_bandwidth(
    data: &BatchDataset,
    target: usize,
    r0: Bandwidth,
    level_lo: u16,
    level_hi: u16,
    lambda: f64,
    folds: usize,
    slice_n: usize,
    seed: u64,
) -> Result<(u16, Bandwidth, Vec<(u16, f64)>)> {
    if level_hi < level_lo {
        return Err(Error::usage("empty bandwidth grid"));
    }
    if folds < 2 {
        return Err(Error::usage("cross-validation needs at least 2 folds"));
    }
    let n = data.len();
    let slice_n = slice_n.min(n);
    if slice_n < folds * 2 {
        return Err(Error::usage(format!(
            "cv slice of {slice_n} too small for {folds} folds"
        )));
    }
    let y = data.target_column(target);
    // Random slice, then contiguous folds within it.
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_cafe);
    for i in 0..slice_n {
        let j = i + rng.gen_range(0..(n - i));
        idx.swap(i, j);
    }
    let slice = &idx[..slice_n];

    let mut scores = Vec::new();
    let mut best: Option<(u16, f64)> = None;
    for level in level_lo..=level_hi {
        let r = bandwidth_at_level(level as u32, r0);
        let mut fold_scores = Vec::with_capacity(folds);
        for f in 0..folds {
            let lo = f * slice_n / folds;
            let hi = (f + 1) * slice_n / folds;
            let train_rows: Vec<usize> = slice
                .iter()
                .enumerate()
                .filter(|(i, _)| *i < lo || *i >= hi)
                .map(|(_, &r)| r)
                .collect();
            let val_rows: Vec<usize> = slice[lo..hi].to_vec();
            if train_rows.is_empty() || val_rows.is_empty() {
                continue;
            }
            let mut train_pts = Array2::zeros((train_rows.len(), data.points.dim()));
            let mut train_y = Array2::zeros((train_rows.len(), 1));
            for (row, &i) in train_rows.iter().enumerate() {
                train_pts.row_mut(row).assign(&data.points.row(i));
                train_y[(row, 0)] = y[i];
            }
            let train =
                BatchDataset::new(PointBlock::new(train_pts)?, train_y)?;
            let m = ((train.len() as f64).sqrt() as usize).clamp(1, train.len());
            let fit = falkon_fit(&train, 0, r, lambda, m, seed.wrapping_add(level as u64))?;
            let targets: Vec<f64> = val_rows.iter().map(|&i| y[i]).collect();
            let preds: Vec<f64> = val_rows
                .iter()
                .map(|&i| fit.correction(data.points.row(i)))
                .collect();
            match mse(&[(targets, preds)]) {
                Ok(s) => fold_scores.push(s),
                Err(_) => continue, // constant validation targets
            }
        }
        if fold_scores.is_empty() {
            continue;
        }
        let score = fold_scores.iter().sum::<f64>() / fold_scores.len() as f64;
        scores.push((level, score));
        if best.map(|(_, b)| score < b).unwrap_or(true) {
            best = Some((level, score));
        }
    }
    let (level, _) = best.ok_or_else(|| Error::state("cross-validation produced no scores"))?;
    Ok((level, bandwidth_at_level(level as u32, r0), scores))
}
