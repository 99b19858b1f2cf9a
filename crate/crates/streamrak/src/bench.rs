//! Benchmark problems: dataset generators for the three experiments, the
//! double-pendulum simulator, recursive forecasting and the normalized
//! mean-square error used in every table.

use crate::error::{Error, Result};
use crate::kernel::PointBlock;
use crate::pyramid::PyramidModel;
use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};

/// Points with one or more target columns.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchDataset {
    pub points: PointBlock,
    pub targets: Array2<f64>,
}

impl BatchDataset {
    pub fn new(points: PointBlock, targets: Array2<f64>) -> Result<Self> {
        if points.count() != targets.nrows() {
            return Err(Error::usage(format!(
                "{} points but {} target rows",
                points.count(),
                targets.nrows()
            )));
        }
        if targets.ncols() == 0 {
            return Err(Error::usage("dataset needs at least one target column"));
        }
        Ok(BatchDataset { points, targets })
    }

    pub fn len(&self) -> usize {
        self.points.count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn outputs(&self) -> usize {
        self.targets.ncols()
    }

    pub fn target_column(&self, j: usize) -> Array1<f64> {
        self.targets.column(j).to_owned()
    }
}

/// Upper end of the 1-D benchmark domain.
pub const VARSINUS_MAX: f64 = std::f64::consts::FRAC_PI_4;

/// Target of the multi-resolution benchmark: `sin(1 / (x + 0.01))`.
pub fn varsinus_target(x: f64) -> f64 {
    (1.0 / (x + 0.01)).sin()
}

/// 1-D benchmark data: inputs drawn from a Gamma(1, 2) (an exponential with
/// rate 2), rejection-sampled into `[0, pi/4]`, labels noiseless.
pub fn varsinus_generate(n: usize, seed: u64) -> Result<BatchDataset> {
    if n == 0 {
        return Err(Error::usage("dataset size must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let exp = Exp::new(2.0).expect("positive rate");
    let mut pts = Array2::zeros((n, 1));
    let mut ys = Array2::zeros((n, 1));
    for i in 0..n {
        let x = loop {
            let cand = exp.sample(&mut rng);
            if cand <= VARSINUS_MAX {
                break cand;
            }
        };
        pts[(i, 0)] = x;
        ys[(i, 0)] = varsinus_target(x);
    }
    BatchDataset::new(PointBlock::new(pts)?, ys)
}

/// Whether a point sits in the 2-D bridge of the dumbbell domain.
pub fn dumbbell_in_bridge(x1: f64) -> bool {
    x1 > 1.0 && x1 < 3.0
}

/// Dumbbell target: constant in the two 5-dimensional bulbs, a windowed
/// oscillation on the 2-D bridge. The `sin^2` window zeroes both the value
/// offset and the slope at the joins, so the function is C^1 on the whole
/// domain.
pub fn dumbbell_target(x1: f64) -> f64 {
    if dumbbell_in_bridge(x1) {
        let window = (std::f64::consts::PI * (x1 - 1.0) / 2.0).sin().powi(2);
        let profile = (2.0 * std::f64::consts::PI * x1).sin() + x1 + 1.0;
        1.0 + window * profile
    } else {
        1.0
    }
}

/// 5-D dumbbell data: two unit balls centered at `x1 = 0` and `x1 = 4`
/// joined by a 2-D plane over `x1` in `[1, 3]`, components drawn with equal
/// probability, labels noiseless.
pub fn dumbbell_generate(n: usize, seed: u64) -> Result<BatchDataset> {
    if n == 0 {
        return Err(Error::usage("dataset size must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut pts = Array2::zeros((n, 5));
    let mut ys = Array2::zeros((n, 1));
    for i in 0..n {
        match rng.gen_range(0..3u8) {
            0 | 1 => {
                // Uniform point in a unit 5-ball.
                let mut v = [0.0f64; 5];
                let mut norm_sq = 0.0;
                for slot in v.iter_mut() {
                    let g = normal.sample(&mut rng);
                    *slot = g;
                    norm_sq += g * g;
                }
                let norm = norm_sq.sqrt().max(1e-300);
                let radius = rng.gen::<f64>().powf(0.2);
                let center = if rng.gen::<bool>() { 0.0 } else { 4.0 };
                for (j, slot) in v.iter().enumerate() {
                    pts[(i, j)] = slot / norm * radius + if j == 0 { center } else { 0.0 };
                }
            }
            _ => {
                pts[(i, 0)] = rng.gen::<f64>() * 2.0 + 1.0;
                pts[(i, 1)] = rng.gen::<f64>() * 2.0 - 1.0;
            }
        }
        ys[(i, 0)] = dumbbell_target(pts[(i, 0)]);
    }
    BatchDataset::new(PointBlock::new(pts)?, ys)
}

/// State of the double pendulum: two angles (radians, measured from the
/// downward vertical) and their angular velocities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendulumState {
    pub theta1: f64,
    pub theta2: f64,
    pub omega1: f64,
    pub omega2: f64,
}

impl PendulumState {
    pub fn new(theta1: f64, theta2: f64, omega1: f64, omega2: f64) -> Self {
        PendulumState {
            theta1,
            theta2,
            omega1,
            omega2,
        }
    }

    pub fn from_degrees(deg: [f64; 4]) -> Self {
        let r = std::f64::consts::PI / 180.0;
        PendulumState::new(deg[0] * r, deg[1] * r, deg[2] * r, deg[3] * r)
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.theta1, self.theta2, self.omega1, self.omega2]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        PendulumState::new(a[0], a[1], a[2], a[3])
    }

    pub fn is_finite(self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Paper setup of the low-energy system, in degrees.
pub const LOW_ENERGY_START_DEG: [f64; 4] = [-20.0, -20.0, 0.0, 0.0];
/// Paper setup of the high-energy system, in degrees.
pub const HIGH_ENERGY_START_DEG: [f64; 4] = [-120.0, -20.0, -7.57, 7.68];

/// Equal masses on massless rods of equal length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendulumParams {
    pub mass: f64,
    pub length: f64,
    pub gravity: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        PendulumParams {
            mass: 1.0,
            length: 1.0,
            gravity: 10.0,
        }
    }
}

impl PendulumParams {
    /// Right-hand side of the equations of motion. Derived from the
    /// equal-mass, equal-length Lagrangian
    /// `L = m l^2 (w1^2 + w2^2/2) + m l^2 w1 w2 cos(t1 - t2)
    ///    + m g l (2 cos t1 + cos t2)`:
    ///
    /// `2 a1 + a2 cos d + w2^2 sin d + 2 (g/l) sin t1 = 0`
    /// `a2 + a1 cos d - w1^2 sin d + (g/l) sin t2 = 0`
    ///
    /// solved for the angular accelerations `(a1, a2)`.
    pub fn derivatives(&self, s: PendulumState) -> [f64; 4] {
        let k = self.gravity / self.length;
        let d = s.theta1 - s.theta2;
        let (sin_d, cos_d) = d.sin_cos();
        let b1 = -s.omega2 * s.omega2 * sin_d - 2.0 * k * s.theta1.sin();
        let b2 = s.omega1 * s.omega1 * sin_d - k * s.theta2.sin();
        let det = 2.0 - cos_d * cos_d;
        let a1 = (b1 - cos_d * b2) / det;
        let a2 = (2.0 * b2 - cos_d * b1) / det;
        [s.omega1, s.omega2, a1, a2]
    }

    /// Total mechanical energy `T + V` of a state.
    pub fn energy(&self, s: PendulumState) -> f64 {
        let ml2 = self.mass * self.length * self.length;
        let d = s.theta1 - s.theta2;
        let kinetic = ml2
            * (s.omega1 * s.omega1
                + 0.5 * s.omega2 * s.omega2
                + s.omega1 * s.omega2 * d.cos());
        let potential =
            -self.mass * self.gravity * self.length * (2.0 * s.theta1.cos() + s.theta2.cos());
        kinetic + potential
    }

    /// One classical fourth-order Runge-Kutta step.
    pub fn rk4_step(&self, s: PendulumState, dt: f64) -> PendulumState {
        let add = |s: PendulumState, k: &[f64; 4], h: f64| {
            PendulumState::new(
                s.theta1 + k[0] * h,
                s.theta2 + k[1] * h,
                s.omega1 + k[2] * h,
                s.omega2 + k[3] * h,
            )
        };
        let k1 = self.derivatives(s);
        let k2 = self.derivatives(add(s, &k1, dt / 2.0));
        let k3 = self.derivatives(add(s, &k2, dt / 2.0));
        let k4 = self.derivatives(add(s, &k3, dt));
        PendulumState::new(
            s.theta1 + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            s.theta2 + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
            s.omega1 + dt / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
            s.omega2 + dt / 6.0 * (k1[3] + 2.0 * k2[3] + 2.0 * k3[3] + k4[3]),
        )
    }

    /// Horizontal center of mass `(x1 + x2) / 2` of the two bobs.
    pub fn center_of_mass_x(&self, s: PendulumState) -> f64 {
        self.length * (s.theta1.sin() + 0.5 * s.theta2.sin())
    }
}

/// Internal integration step; one recorded step spans
/// `RECORD_EVERY` internal steps.
pub const DEFAULT_DT: f64 = 1e-3;
pub const RECORD_EVERY: usize = 20;

/// Integrate and record `steps` states after the initial one (so the result
/// holds `steps + 1` states). `dt` is the internal step; every
/// `record_every`-th state is recorded.
pub fn pendulum_simulate(
    params: &PendulumParams,
    s0: PendulumState,
    steps: usize,
    dt: f64,
    record_every: usize,
) -> Result<Vec<PendulumState>> {
    if !(dt != 0.0 && dt.is_finite()) {
        return Err(Error::usage(format!("dt must be finite and nonzero, got {dt}")));
    }
    if steps == 0 || record_every == 0 {
        return Err(Error::usage("steps and record_every must be at least 1"));
    }
    let mut out = Vec::with_capacity(steps + 1);
    let mut s = s0;
    out.push(s);
    for step in 0..steps {
        for _ in 0..record_every {
            s = params.rk4_step(s, dt);
        }
        if !s.is_finite() {
            return Err(Error::numerical(format!(
                "non-finite pendulum state at recorded step {}",
                step + 1
            )));
        }
        out.push(s);
    }
    Ok(out)
}

/// Per-component standard deviations of the paper's initialization spread.
pub fn paper_sigma(base: PendulumState) -> [f64; 4] {
    [
        0.025 * base.theta1.abs(),
        0.15 * base.theta2.abs(),
        0.3 * base.omega1.abs(),
        0.3 * base.omega2.abs(),
    ]
}

/// Pooled one-step training pairs `(s_t, s_{t+delta})` over an ensemble of
/// perturbed pendulums: a 4-in, 4-out dataset with
/// `n_pendulums * (steps - delta)` rows.
pub fn pendulum_dataset(
    params: &PendulumParams,
    base: PendulumState,
    n_pendulums: usize,
    sigma: [f64; 4],
    steps: usize,
    delta: usize,
    seed: u64,
) -> Result<BatchDataset> {
    if n_pendulums == 0 || steps == 0 {
        return Err(Error::usage("need at least one pendulum and one step"));
    }
    if delta >= steps {
        return Err(Error::usage(format!(
            "stride {delta} must be smaller than steps {steps}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per = steps - delta;
    let n = n_pendulums * per;
    let mut pts = Array2::zeros((n, 4));
    let mut ys = Array2::zeros((n, 4));
    let mut row = 0;
    for _ in 0..n_pendulums {
        let mut s0 = base.to_array();
        for (slot, sd) in s0.iter_mut().zip(sigma.iter()) {
            if *sd > 0.0 {
                let dist = Normal::new(0.0, *sd).expect("positive sigma");
                *slot += dist.sample(&mut rng);
            }
        }
        let traj = pendulum_simulate(
            params,
            PendulumState::from_array(s0),
            steps,
            DEFAULT_DT,
            RECORD_EVERY,
        )?;
        for t in 0..per {
            let a = traj[t].to_array();
            let b = traj[t + delta].to_array();
            for j in 0..4 {
                pts[(row, j)] = a[j];
                ys[(row, j)] = b[j];
            }
            row += 1;
        }
    }
    BatchDataset::new(PointBlock::new(pts)?, ys)
}

/// Recursive forecast of a pendulum trajectory from trained per-coordinate
/// models. Applies the learned `delta`-step map `horizon / delta` times; a
/// non-finite prediction truncates the trajectory.
#[derive(Debug, Clone)]
pub struct ForecastResult {
    /// States every `delta` recorded steps, starting with the initial state.
    pub states: Vec<PendulumState>,
    /// Index at which a non-finite prediction stopped the recursion.
    pub truncated_at: Option<usize>,
}

pub fn forecast_recursive(
    models: &[PyramidModel; 4],
    s0: PendulumState,
    horizon: usize,
    delta: usize,
) -> Result<ForecastResult> {
    if delta == 0 {
        return Err(Error::usage("forecast stride must be at least 1"));
    }
    let hops = horizon / delta;
    let mut states = Vec::with_capacity(hops + 1);
    states.push(s0);
    let mut s = s0;
    for hop in 0..hops {
        let x = Array1::from(s.to_array().to_vec());
        let mut next = [0.0f64; 4];
        for (j, model) in models.iter().enumerate() {
            next[j] = model.predict(x.view(), None)?;
        }
        let candidate = PendulumState::from_array(next);
        if !candidate.is_finite() {
            return Ok(ForecastResult {
                states,
                truncated_at: Some(hop),
            });
        }
        s = candidate;
        states.push(s);
    }
    Ok(ForecastResult {
        states,
        truncated_at: None,
    })
}

/// Benchmark error metric: squared errors averaged within each test run,
/// averaged over runs, normalized by the global target range.
pub fn mse(runs: &[(Vec<f64>, Vec<f64>)]) -> Result<f64> {
    if runs.is_empty() {
        return Err(Error::usage("mse needs at least one run"));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (targets, preds) in runs {
        if targets.len() != preds.len() {
            return Err(Error::usage(format!(
                "run has {} targets but {} predictions",
                targets.len(),
                preds.len()
            )));
        }
        if targets.is_empty() {
            return Err(Error::usage("empty test run"));
        }
        for t in targets {
            lo = lo.min(*t);
            hi = hi.max(*t);
        }
    }
    let range = hi - lo;
    if !(range > 0.0) {
        return Err(Error::usage(format!(
            "constant targets: normalization range is {range}, cannot normalize"
        )));
    }
    let mut acc = 0.0;
    for (targets, preds) in runs {
        let sq: f64 = targets
            .iter()
            .zip(preds.iter())
            .map(|(t, p)| (t - p) * (t - p))
            .sum();
        acc += sq / targets.len() as f64;
    }
    Ok(acc / (runs.len() as f64 * range))
}

/// One row of a benchmark table.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub method: String,
    pub level: Option<u16>,
    pub landmarks: u64,
    pub mse: f64,
    pub seconds: f64,
}

/// Per-level results of one benchmark, mirrored into CSV.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TestReport {
    pub rows: Vec<ReportRow>,
}

impl TestReport {
    pub fn push(&mut self, row: ReportRow) -> Result<()> {
        if !(row.mse >= 0.0) {
            return Err(Error::usage(format!("negative mse {}", row.mse)));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("method,level,landmarks,mse,seconds\n");
        for r in &self.rows {
            let level = r
                .level
                .map(|l| l.to_string())
                .unwrap_or_else(|| "-".to_string());
            s.push_str(&format!(
                "{},{},{},{:e},{:.3}\n",
                r.method, level, r.landmarks, r.mse, r.seconds
            ));
        }
        s
    }
}
