//! Run configuration: every tunable the pipeline exposes, with a flat
//! `key = value` text format so a run is reproducible from one file.

use crate::error::{Error, Result};
use std::fmt::Write as _;

/// How the root radius of the cover tree is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum R0Policy {
    /// Buffer `warmup` samples, then use twice the maximum distance from the
    /// first buffered point.
    Warmup,
    /// Use `r0_value` as given.
    Fixed,
}

/// All thresholds and constants of a streaming run.
///
/// Defaults follow the values used throughout the benchmark experiments;
/// each field is settable from the config file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Exponential running-average weight for covering fractions.
    pub alpha: f64,
    /// Node covering-fraction threshold (damping gate, landmark eligibility).
    pub d_cf: f64,
    /// Level covering-fraction threshold (level readiness).
    pub d_level: f64,
    /// Hardness of the soft separation threshold.
    pub h: f64,
    /// Whether the Bernoulli relaxation of the separation check is active.
    pub bypass: bool,
    /// Landmark count scale: `m = ceil(delta0 * sqrt(|Q_l|))`.
    pub delta0: f64,
    /// Sufficiency tolerance on the averaged gram matrix (max norm).
    pub delta1: f64,
    /// Sufficiency tolerance on the averaged right-hand side (Euclidean).
    pub delta2: f64,
    /// Hard cap on samples accumulated per level.
    pub delta3: u64,
    /// Ridge regularization per level.
    pub lambda: f64,
    /// Conjugate-gradient iteration cap.
    pub max_cg_iter: usize,
    /// Conjugate-gradient relative-residual tolerance.
    pub cg_tol: f64,
    /// Root radius policy.
    pub r0_policy: R0Policy,
    /// Root radius when the policy is `fixed`.
    pub r0_value: f64,
    /// Warm-up buffer length used by the `warmup` policy.
    pub warmup: usize,
    /// First tree level the pyramid trains.
    pub first_level: u32,
    /// Kernel bandwidth as a multiple of the level radius.
    pub bandwidth_scale: f64,
    /// Seed for every randomized choice in the run.
    pub seed: u64,
    /// How often (in accumulated samples) sufficiency is checked.
    pub sufficiency_cadence: u64,
    /// Maximum number of levels to train.
    pub max_levels: u32,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            alpha: 0.01,
            d_cf: 0.7,
            d_level: 0.8,
            h: 10.0,
            bypass: true,
            delta0: 10.0,
            delta1: 1e-3,
            delta2: 1e-4,
            delta3: 200_000,
            lambda: 1e-6,
            max_cg_iter: 20,
            cg_tol: 1e-8,
            r0_policy: R0Policy::Warmup,
            r0_value: 1.0,
            warmup: 1000,
            first_level: 1,
            bandwidth_scale: 1.0,
            seed: 0,
            sufficiency_cadence: 100,
            max_levels: 32,
        }
    }
}

impl RunConfig {
    /// Validate every field; reports all offending keys at once.
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            bad.push(format!("alpha: must be in (0, 1), got {}", self.alpha));
        }
        if !(self.d_cf > 0.0 && self.d_cf < 1.0) {
            bad.push(format!("d_cf: must be in (0, 1), got {}", self.d_cf));
        }
        if !(self.d_level > 0.0 && self.d_level < 1.0) {
            bad.push(format!("d_level: must be in (0, 1), got {}", self.d_level));
        }
        if !(self.h > 0.0 && self.h.is_finite()) {
            bad.push(format!("h: must be a positive real, got {}", self.h));
        }
        if !(self.delta0 > 0.0) {
            bad.push(format!("delta0: must be positive, got {}", self.delta0));
        }
        if !(self.delta1 > 0.0) {
            bad.push(format!("delta1: must be positive, got {}", self.delta1));
        }
        if !(self.delta2 > 0.0) {
            bad.push(format!("delta2: must be positive, got {}", self.delta2));
        }
        if self.delta3 == 0 {
            bad.push("delta3: must be at least 1".to_string());
        }
        if !(self.lambda > 0.0) {
            bad.push(format!("lambda: must be positive, got {}", self.lambda));
        }
        if self.max_cg_iter == 0 {
            bad.push("max_cg_iter: must be at least 1".to_string());
        }
        if !(self.cg_tol > 0.0) {
            bad.push(format!("cg_tol: must be positive, got {}", self.cg_tol));
        }
        if self.r0_policy == R0Policy::Fixed && !(self.r0_value > 0.0) {
            bad.push(format!(
                "r0_value: must be positive under r0_policy = fixed, got {}",
                self.r0_value
            ));
        }
        if self.warmup == 0 {
            bad.push("warmup: must be at least 1".to_string());
        }
        if !(self.bandwidth_scale > 0.0) {
            bad.push(format!(
                "bandwidth_scale: must be positive, got {}",
                self.bandwidth_scale
            ));
        }
        if self.sufficiency_cadence == 0 {
            bad.push("sufficiency_cadence: must be at least 1".to_string());
        }
        if self.max_levels == 0 {
            bad.push("max_levels: must be at least 1".to_string());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::usage(format!("invalid config: {}", bad.join("; "))))
        }
    }

    /// Emit the config in the `key = value` file format.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "alpha = {}", self.alpha);
        let _ = writeln!(s, "d_cf = {}", self.d_cf);
        let _ = writeln!(s, "d_level = {}", self.d_level);
        let _ = writeln!(s, "h = {}", self.h);
        let _ = writeln!(s, "bypass = {}", self.bypass);
        let _ = writeln!(s, "delta0 = {}", self.delta0);
        let _ = writeln!(s, "delta1 = {}", self.delta1);
        let _ = writeln!(s, "delta2 = {}", self.delta2);
        let _ = writeln!(s, "delta3 = {}", self.delta3);
        let _ = writeln!(s, "lambda = {}", self.lambda);
        let _ = writeln!(s, "max_cg_iter = {}", self.max_cg_iter);
        let _ = writeln!(s, "cg_tol = {}", self.cg_tol);
        let _ = writeln!(
            s,
            "r0_policy = {}",
            match self.r0_policy {
                R0Policy::Warmup => "warmup",
                R0Policy::Fixed => "fixed",
            }
        );
        let _ = writeln!(s, "r0_value = {}", self.r0_value);
        let _ = writeln!(s, "warmup = {}", self.warmup);
        let _ = writeln!(s, "first_level = {}", self.first_level);
        let _ = writeln!(s, "bandwidth_scale = {}", self.bandwidth_scale);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "sufficiency_cadence = {}", self.sufficiency_cadence);
        let _ = writeln!(s, "max_levels = {}", self.max_levels);
        s
    }

    /// Parse the `key = value` format. Unknown keys and unparsable values are
    /// all reported together. Lines starting with `#` and blank lines are
    /// ignored.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut bad = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bad.push(format!("line {}: expected `key = value`", lineno + 1));
                continue;
            };
            let key = key.trim();
            let value = value.trim();
            macro_rules! parse {
                ($field:expr, $ty:ty) => {
                    match value.parse::<$ty>() {
                        Ok(v) => $field = v,
                        Err(_) => bad.push(format!("{key}: cannot parse `{value}`")),
                    }
                };
            }
            match key {
                "alpha" => parse!(cfg.alpha, f64),
                "d_cf" => parse!(cfg.d_cf, f64),
                "d_level" => parse!(cfg.d_level, f64),
                "h" => parse!(cfg.h, f64),
                "bypass" => parse!(cfg.bypass, bool),
                "delta0" => parse!(cfg.delta0, f64),
                "delta1" => parse!(cfg.delta1, f64),
                "delta2" => parse!(cfg.delta2, f64),
                "delta3" => parse!(cfg.delta3, u64),
                "lambda" => parse!(cfg.lambda, f64),
                "max_cg_iter" => parse!(cfg.max_cg_iter, usize),
                "cg_tol" => parse!(cfg.cg_tol, f64),
                "r0_policy" => match value {
                    "warmup" => cfg.r0_policy = R0Policy::Warmup,
                    "fixed" => cfg.r0_policy = R0Policy::Fixed,
                    _ => bad.push(format!("r0_policy: expected `warmup` or `fixed`, got `{value}`")),
                },
                "r0_value" => parse!(cfg.r0_value, f64),
                "warmup" => parse!(cfg.warmup, usize),
                "first_level" => parse!(cfg.first_level, u32),
                "bandwidth_scale" => parse!(cfg.bandwidth_scale, f64),
                "seed" => parse!(cfg.seed, u64),
                "sufficiency_cadence" => parse!(cfg.sufficiency_cadence, u64),
                "max_levels" => parse!(cfg.max_levels, u32),
                _ => bad.push(format!("{key}: unknown key")),
            }
        }
        if !bad.is_empty() {
            return Err(Error::usage(format!("invalid config: {}", bad.join("; "))));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// FNV-1a hash of the canonical text form; stored in model metadata so a
    /// model file can be traced back to its configuration.
    pub fn hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.to_text().as_bytes() {
            h ^= *b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }
}
