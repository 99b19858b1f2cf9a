//! The Laplacian-pyramid estimator.
//!
//! A trained model is an ordered list of levels; the prediction at depth `L`
//! is the sum of the per-level correction terms
//! `s_l(x) = sum_i a_i k_l(x, landmark_i)`. Each level was fit on the
//! residuals of the model above it, so cutting the sum at any level yields
//! the coarser predictor.

use crate::error::{Error, Result};
use crate::kernel::{squared_distance, Bandwidth, PointBlock};
use ndarray::{Array1, Array2};

const MODEL_MAGIC: &[u8; 4] = b"SMRK";
const MODEL_FORMAT_VERSION: u32 = 1;

/// One trained correction term.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelModel {
    pub level: u16,
    pub bandwidth: Bandwidth,
    pub landmarks: PointBlock,
    pub coefficients: Array1<f64>,
}

impl LevelModel {
    pub fn new(
        level: u16,
        bandwidth: Bandwidth,
        landmarks: PointBlock,
        coefficients: Array1<f64>,
    ) -> Result<Self> {
        if coefficients.len() != landmarks.count() {
            return Err(Error::usage(format!(
                "level {level}: {} coefficients for {} landmarks",
                coefficients.len(),
                landmarks.count()
            )));
        }
        if coefficients.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical(format!(
                "level {level}: non-finite coefficients"
            )));
        }
        Ok(LevelModel {
            level,
            bandwidth,
            landmarks,
            coefficients,
        })
    }

    /// Correction term `s_l(x)`.
    pub fn correction(&self, x: ndarray::ArrayView1<'_, f64>) -> f64 {
        let inv = 1.0 / (2.0 * self.bandwidth.value() * self.bandwidth.value());
        let mut acc = 0.0;
        for i in 0..self.landmarks.count() {
            let d2 = squared_distance(x, self.landmarks.row(i));
            acc += self.coefficients[i] * (-d2 * inv).exp();
        }
        acc
    }
}

/// Metadata kept alongside a model in memory (not part of the file format).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelMeta {
    pub config_hash: u64,
    pub samples_per_level: Vec<u64>,
}

/// Immutable multi-level model. `add_level` returns a fresh snapshot, so
/// published models can be shared freely across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct PyramidModel {
    r0: Bandwidth,
    dim: usize,
    levels: Vec<LevelModel>,
    pub meta: ModelMeta,
}

impl PyramidModel {
    pub fn empty(r0: Bandwidth, dim: usize) -> Self {
        PyramidModel {
            r0,
            dim,
            levels: Vec::new(),
            meta: ModelMeta::default(),
        }
    }

    pub fn r0(&self) -> Bandwidth {
        self.r0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn levels(&self) -> &[LevelModel] {
        &self.levels
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn deepest_level(&self) -> Option<u16> {
        self.levels.last().map(|l| l.level)
    }

    /// Append one level, producing a new model. Levels must arrive in
    /// consecutive order; the starting level is free.
    pub fn add_level(&self, lm: LevelModel) -> Result<PyramidModel> {
        if lm.landmarks.dim() != self.dim {
            return Err(Error::usage(format!(
                "level dimension {} does not match model dimension {}",
                lm.landmarks.dim(),
                self.dim
            )));
        }
        if let Some(deepest) = self.deepest_level() {
            if lm.level != deepest + 1 {
                return Err(Error::usage(format!(
                    "out-of-order level: got {}, expected {}",
                    lm.level,
                    deepest + 1
                )));
            }
        }
        let mut next = self.clone();
        next.levels.push(lm);
        Ok(next)
    }

    /// Pyramid prediction: the sum of correction terms through `up_to`
    /// (default: the deepest trained level).
    pub fn predict(&self, x: ndarray::ArrayView1<'_, f64>, up_to: Option<u16>) -> Result<f64> {
        if self.levels.is_empty() {
            return Err(Error::state("prediction from an empty model"));
        }
        if x.len() != self.dim {
            return Err(Error::usage(format!(
                "input dimension {} does not match model dimension {}",
                x.len(),
                self.dim
            )));
        }
        let deepest = self.deepest_level().unwrap();
        let cut = match up_to {
            Some(l) => {
                if l > deepest {
                    return Err(Error::usage(format!(
                        "requested level {l} beyond deepest trained level {deepest}"
                    )));
                }
                l
            }
            None => deepest,
        };
        let mut acc = 0.0;
        for level in &self.levels {
            if level.level > cut {
                break;
            }
            acc += level.correction(x);
        }
        Ok(acc)
    }

    /// Cumulative predictions after each trained level, in level order.
    pub fn predict_cumulative(&self, x: ndarray::ArrayView1<'_, f64>) -> Result<Vec<f64>> {
        if self.levels.is_empty() {
            return Err(Error::state("prediction from an empty model"));
        }
        if x.len() != self.dim {
            return Err(Error::usage(format!(
                "input dimension {} does not match model dimension {}",
                x.len(),
                self.dim
            )));
        }
        let mut out = Vec::with_capacity(self.levels.len());
        let mut acc = 0.0;
        for level in &self.levels {
            acc += level.correction(x);
            out.push(acc);
        }
        Ok(out)
    }

    /// Training residual against this model: the raw target for an empty
    /// model, else `y - f(x)`.
    pub fn residual(&self, y: f64, x: ndarray::ArrayView1<'_, f64>) -> f64 {
        if self.levels.is_empty() {
            y
        } else {
            y - self.predict(x, None).expect("non-empty model")
        }
    }

    /// Versioned binary serialization: magic, version, dimension, root
    /// radius, level count, then per level its index, bandwidth, landmark
    /// count, landmark coordinates and coefficients.
    pub fn serialize(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&self.r0.value().to_le_bytes());
        out.extend_from_slice(&(self.levels.len() as u32).to_le_bytes());
        for level in &self.levels {
            out.extend_from_slice(&level.level.to_le_bytes());
            out.extend_from_slice(&level.bandwidth.value().to_le_bytes());
            out.extend_from_slice(&(level.landmarks.count() as u32).to_le_bytes());
            for row in 0..level.landmarks.count() {
                for v in level.landmarks.row(row).iter() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            for v in level.coefficients.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn deserialize(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            if *pos + n > bytes.len() {
                return Err(Error::data(format!("truncated model file at offset {pos}")));
            }
            let s = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        let magic = take(&mut pos, 4)?;
        if magic != MODEL_MAGIC {
            return Err(Error::data(format!(
                "bad model magic at offset 0: {:02x?}",
                magic
            )));
        }
        let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
        if version != MODEL_FORMAT_VERSION {
            return Err(Error::data(format!(
                "unsupported model format version {version}"
            )));
        }
        let dim = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let r0 = Bandwidth::new(f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()))?;
        let level_count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
        let mut model = PyramidModel::empty(r0, dim);
        for _ in 0..level_count {
            let level = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap());
            let bandwidth =
                Bandwidth::new(f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()))?;
            let m = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
            let mut data = Array2::zeros((m, dim));
            for r in 0..m {
                for c in 0..dim {
                    data[(r, c)] = f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
                }
            }
            let mut coeffs = Array1::zeros(m);
            for i in 0..m {
                coeffs[i] = f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
            }
            let lm = LevelModel::new(level, bandwidth, PointBlock::new(data)?, coeffs)?;
            model = model.add_level(lm)?;
        }
        if pos != bytes.len() {
            return Err(Error::data(format!(
                "trailing bytes after model records at offset {pos}"
            )));
        }
        Ok(model)
    }
}
