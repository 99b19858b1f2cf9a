//! Streaming accumulation of the per-level sketched linear system.
//!
//! For a fixed landmark set the level's normal equations need only
//! `sum_i k_i k_i^T` (an m-by-m gram) and `sum_i k_i d_i` (an m-vector per
//! output), where `k_i` is the kernel row of sample `i` against the
//! landmarks and `d_i` its residual. Both are updated per sample, so memory
//! never depends on the stream length. Samples are micro-batched internally
//! and folded in with a matrix product; the buffer is flushed before any
//! observable read so the contract stays per-sample.

use crate::error::{Error, Result};
use crate::kernel::{kernel_row_into, Bandwidth, PointBlock};
use ndarray::Array2;

/// Rows buffered before a gram flush.
const BATCH_ROWS: usize = 128;

/// Lifecycle of one level's accumulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Accumulating,
    Sufficient,
    Solved,
}

/// Sketched system for one pyramid level.
#[derive(Debug, Clone)]
pub struct LevelAccumulator {
    landmarks: PointBlock,
    bandwidth: Bandwidth,
    outputs: usize,
    gram: Array2<f64>,
    rhs: Array2<f64>,
    n_seen: u64,
    phase: Phase,
    prev_avg_gram: Option<Array2<f64>>,
    prev_avg_rhs: Option<Array2<f64>>,
    batch_rows: Vec<f64>,
    batch_residuals: Vec<f64>,
    batch_len: usize,
}

impl LevelAccumulator {
    pub fn new(landmarks: PointBlock, bandwidth: Bandwidth, outputs: usize) -> Result<Self> {
        if landmarks.count() == 0 {
            return Err(Error::usage("accumulator needs at least one landmark"));
        }
        if outputs == 0 {
            return Err(Error::usage("accumulator needs at least one output"));
        }
        let m = landmarks.count();
        Ok(LevelAccumulator {
            landmarks,
            bandwidth,
            outputs,
            gram: Array2::zeros((m, m)),
            rhs: Array2::zeros((m, outputs)),
            n_seen: 0,
            phase: Phase::Accumulating,
            prev_avg_gram: None,
            prev_avg_rhs: None,
            batch_rows: Vec::new(),
            batch_residuals: Vec::new(),
            batch_len: 0,
        })
    }

    pub fn landmarks(&self) -> &PointBlock {
        &self.landmarks
    }

    pub fn bandwidth(&self) -> Bandwidth {
        self.bandwidth
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn n_seen(&self) -> u64 {
        self.n_seen
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn mark_solved(&mut self) {
        self.phase = Phase::Solved;
    }

    /// Fold one `(point, residuals)` pair into the sketch.
    pub fn accumulate(&mut self, x: &[f64], residuals: &[f64]) -> Result<()> {
        if self.phase != Phase::Accumulating {
            return Err(Error::state(
                "accumulate called after the level was declared sufficient",
            ));
        }
        if x.len() != self.landmarks.dim() {
            return Err(Error::usage(format!(
                "sample dimension {} does not match landmark dimension {}",
                x.len(),
                self.landmarks.dim()
            )));
        }
        if residuals.len() != self.outputs {
            return Err(Error::usage(format!(
                "got {} residuals, expected {}",
                residuals.len(),
                self.outputs
            )));
        }
        let m = self.landmarks.count();
        let start = self.batch_rows.len();
        self.batch_rows.resize(start + m, 0.0);
        kernel_row_into(
            ndarray::ArrayView1::from(x),
            &self.landmarks,
            self.bandwidth,
            &mut self.batch_rows[start..],
        );
        self.batch_residuals.extend_from_slice(residuals);
        self.batch_len += 1;
        self.n_seen += 1;
        if self.batch_len >= BATCH_ROWS {
            self.flush();
        }
        Ok(())
    }

    /// Fold any buffered rows into the gram and right-hand side.
    fn flush(&mut self) {
        if self.batch_len == 0 {
            return;
        }
        let m = self.landmarks.count();
        let rows = Array2::from_shape_vec((self.batch_len, m), std::mem::take(&mut self.batch_rows))
            .expect("batch buffer shape");
        let res =
            Array2::from_shape_vec((self.batch_len, self.outputs), std::mem::take(&mut self.batch_residuals))
                .expect("residual buffer shape");
        let update = rows.t().dot(&rows);
        // Mirror the upper triangle so the gram stays exactly symmetric.
        for i in 0..m {
            for j in i..m {
                let v = self.gram[(i, j)] + update[(i, j)];
                self.gram[(i, j)] = v;
                self.gram[(j, i)] = v;
            }
        }
        self.rhs = &self.rhs + &rows.t().dot(&res);
        self.batch_len = 0;
    }

    /// Current gram matrix (`K_nm^T K_nm` so far).
    pub fn gram(&mut self) -> &Array2<f64> {
        self.flush();
        &self.gram
    }

    /// Current right-hand side (`K_nm^T d` so far), one column per output.
    pub fn rhs(&mut self) -> &Array2<f64> {
        self.flush();
        &self.rhs
    }

    /// Sufficiency rule: the level has seen enough samples when `n >= delta3`
    /// or when the per-sample averages of the gram and right-hand side have
    /// stopped moving between checkpoints (max-norm within `delta1`,
    /// Euclidean norm within `delta2`). A `true` result transitions the
    /// phase to `Sufficient`.
    pub fn sufficiency_check(&mut self, delta1: f64, delta2: f64, delta3: u64) -> bool {
        if self.phase != Phase::Accumulating {
            return true;
        }
        self.flush();
        if self.n_seen >= delta3 {
            self.phase = Phase::Sufficient;
            return true;
        }
        if self.n_seen == 0 {
            return false;
        }
        let n = self.n_seen as f64;
        let avg_gram = &self.gram / n;
        let avg_rhs = &self.rhs / n;
        let mut sufficient = false;
        // The difference test needs two checkpoints, so the first call only
        // records a snapshot.
        if let (Some(pg), Some(pr)) = (&self.prev_avg_gram, &self.prev_avg_rhs) {
            let gram_diff = (&avg_gram - pg)
                .iter()
                .fold(0.0f64, |acc, v| acc.max(v.abs()));
            let mut rhs_diff = 0.0f64;
            for col in 0..self.outputs {
                let d = (&avg_rhs.column(col) - &pr.column(col))
                    .iter()
                    .map(|v| v * v)
                    .sum::<f64>()
                    .sqrt();
                rhs_diff = rhs_diff.max(d);
            }
            if gram_diff <= delta1 && rhs_diff <= delta2 {
                self.phase = Phase::Sufficient;
                sufficient = true;
            }
        }
        self.prev_avg_gram = Some(avg_gram);
        self.prev_avg_rhs = Some(avg_rhs);
        sufficient
    }
}
