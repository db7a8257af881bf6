//! Benchmark tasks, linear readout training and metrics.

use faer::linalg::solvers::Solve;
use faer::Mat;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reservoir::FeatureMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NarmaConstants {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl Default for NarmaConstants {
    fn default() -> Self {
        Self { alpha: 0.3, beta: 0.05, gamma: 1.5, delta: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskKind {
    /// `ȳ(k) = u(k-d)`
    Stm { delay: usize },
    /// `ȳ(k) = u(k-d)^n`
    Nlstm { delay: usize, power: u32 },
    Narma {
        order: usize,
        #[serde(default)]
        constants: NarmaConstants,
    },
    /// `ȳ(k) = (Σ_{d=0}^{n} u(k-d-b)) mod 2` on binary inputs.
    Parity { order: usize, bias: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    RSquared,
    Nmse,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::RSquared => "r2",
            Metric::Nmse => "nmse",
        }
    }
}

impl TaskKind {
    pub fn name(&self) -> &'static str {
        match self {
            TaskKind::Stm { .. } => "stm",
            TaskKind::Nlstm { .. } => "nlstm",
            TaskKind::Narma { .. } => "narma",
            TaskKind::Parity { .. } => "parity",
        }
    }

    /// Headline metric: NMSE for NARMA, R² for the memory-type tasks.
    pub fn primary_metric(&self) -> Metric {
        match self {
            TaskKind::Narma { .. } => Metric::Nmse,
            _ => Metric::RSquared,
        }
    }

    /// Short parameter string, e.g. `d=3` or `n=2,b=1`.
    pub fn params(&self) -> String {
        match *self {
            TaskKind::Stm { delay } => format!("d={delay}"),
            TaskKind::Nlstm { delay, power } => format!("d={delay},n={power}"),
            TaskKind::Narma { order, .. } => format!("n={order}"),
            TaskKind::Parity { order, bias } => format!("n={order},b={bias}"),
        }
    }

    pub fn is_binary(&self) -> bool {
        matches!(self, TaskKind::Parity { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "TaskSpecRepr")]
pub struct TaskSpec {
    #[serde(flatten)]
    pub kind: TaskKind,
    pub input_range: [f64; 2],
    pub encode_rescale: bool,
}

/// Wire form of [`TaskSpec`]; missing input settings take the task's defaults.
#[derive(Deserialize)]
struct TaskSpecRepr {
    #[serde(flatten)]
    kind: TaskKind,
    input_range: Option<[f64; 2]>,
    encode_rescale: Option<bool>,
}

impl From<TaskSpecRepr> for TaskSpec {
    fn from(r: TaskSpecRepr) -> Self {
        let base = match r.kind {
            TaskKind::Narma { .. } => TaskSpec::narma(1),
            _ => TaskSpec::stm(0),
        };
        Self {
            kind: r.kind,
            input_range: r.input_range.unwrap_or(base.input_range),
            encode_rescale: r.encode_rescale.unwrap_or(base.encode_rescale),
        }
    }
}

impl TaskSpec {
    pub fn stm(delay: usize) -> Self {
        Self { kind: TaskKind::Stm { delay }, input_range: [0.0, 1.0], encode_rescale: false }
    }

    pub fn nlstm(delay: usize, power: u32) -> Self {
        Self { kind: TaskKind::Nlstm { delay, power }, input_range: [0.0, 1.0], encode_rescale: false }
    }

    /// NARMA-`order` with inputs on `[0, 0.2]` rescaled to `[0, 1]` for encoding.
    pub fn narma(order: usize) -> Self {
        Self {
            kind: TaskKind::Narma { order, constants: NarmaConstants::default() },
            input_range: [0.0, 0.2],
            encode_rescale: true,
        }
    }

    pub fn parity(order: usize, bias: usize) -> Self {
        Self { kind: TaskKind::Parity { order, bias }, input_range: [0.0, 1.0], encode_rescale: false }
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.input_range;
        if !(lo < hi) {
            return Err(Error::InvalidTask(format!("input range [{lo}, {hi}] is empty")));
        }
        if !self.encode_rescale && (lo < 0.0 || hi > 1.0) {
            return Err(Error::InvalidTask(format!("input range [{lo}, {hi}] cannot be encoded without rescaling")));
        }
        match self.kind {
            TaskKind::Nlstm { power: 0, .. } => Err(Error::InvalidTask("nonlinear power must be >= 1".into())),
            TaskKind::Narma { order: 0, .. } => Err(Error::InvalidTask("NARMA order must be >= 1".into())),
            TaskKind::Parity { order: 0, .. } => Err(Error::InvalidTask("parity order must be >= 1".into())),
            _ => Ok(()),
        }
    }

    /// Number of leading steps whose target needs pre-sequence inputs.
    pub fn history(&self) -> usize {
        match self.kind {
            TaskKind::Stm { delay } | TaskKind::Nlstm { delay, .. } => delay,
            TaskKind::Narma { order, .. } => order,
            TaskKind::Parity { order, bias } => order + bias,
        }
    }

    pub fn targets(&self, inputs: &Inputs) -> Result<Targets> {
        match self.kind {
            TaskKind::Stm { delay } => target_stm(&inputs.raw, delay),
            TaskKind::Nlstm { delay, power } => target_nlstm(&inputs.raw, delay, power),
            TaskKind::Narma { order, constants } => target_narma(&inputs.raw, order, &constants),
            TaskKind::Parity { order, bias } => target_pc(&inputs.raw, order, bias),
        }
    }
}

/// Input sequence in task units (`raw`) and as fed to the reservoir (`encoded`).
#[derive(Debug, Clone, PartialEq)]
pub struct Inputs {
    pub raw: Vec<f64>,
    pub encoded: Vec<f64>,
}

impl Inputs {
    /// Map a stream of `U[0,1]` draws onto the task's input convention.
    /// Binary tasks threshold at one half.
    pub fn from_uniform(spec: &TaskSpec, uniform: &[f64]) -> Self {
        if spec.kind.is_binary() {
            let bits: Vec<f64> = uniform.iter().map(|&x| if x < 0.5 { 0.0 } else { 1.0 }).collect();
            return Self { raw: bits.clone(), encoded: bits };
        }
        let [lo, hi] = spec.input_range;
        let raw: Vec<f64> = uniform.iter().map(|&x| lo + (hi - lo) * x).collect();
        let encoded = if spec.encode_rescale { uniform.to_vec() } else { raw.clone() };
        Self { raw, encoded }
    }
}

pub fn gen_uniform<R: Rng + ?Sized>(length: usize, rng: &mut R) -> Vec<f64> {
    (0..length).map(|_| rng.random::<f64>()).collect()
}

pub fn gen_inputs<R: Rng + ?Sized>(spec: &TaskSpec, length: usize, rng: &mut R) -> Result<Inputs> {
    spec.validate()?;
    if length == 0 {
        return Err(Error::InvalidTask("input length must be >= 1".into()));
    }
    Ok(Inputs::from_uniform(spec, &gen_uniform(length, rng)))
}

/// Target sequence; entries before `first_valid` are placeholders and never used.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub values: Vec<f64>,
    pub first_valid: usize,
}

impl Targets {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_valid(&self, k: usize) -> bool {
        k >= self.first_valid && k < self.values.len()
    }
}

fn check_window(window: usize, len: usize) -> Result<()> {
    if window >= len {
        return Err(Error::HistoryTooLong { window, len });
    }
    Ok(())
}

pub fn target_stm(u: &[f64], delay: usize) -> Result<Targets> {
    check_window(delay, u.len())?;
    let values = (0..u.len()).map(|k| if k >= delay { u[k - delay] } else { f64::NAN }).collect();
    Ok(Targets { values, first_valid: delay })
}

pub fn target_nlstm(u: &[f64], delay: usize, power: u32) -> Result<Targets> {
    let mut t = target_stm(u, delay)?;
    if power != 1 {
        for x in &mut t.values[delay..] {
            *x = x.powi(power as i32);
        }
    }
    Ok(t)
}

pub const NARMA_DIVERGENCE: f64 = 1e3;

/// One NARMA update. `recent` holds `ȳ(k), ȳ(k-1), …, ȳ(k-n+1)`; returns `ȳ(k+1)`.
pub fn narma_step(c: &NarmaConstants, recent: &[f64], u_k: f64, u_k_minus_n_plus_1: f64) -> f64 {
    let y = recent[0];
    let sum: f64 = recent.iter().sum();
    c.alpha * y + c.beta * y * sum + c.gamma * u_k_minus_n_plus_1 * u_k + c.delta
}

/// NARMA-`n` targets with zero history before the sequence, so `ȳ(0) = δ`.
/// Steps `k < n` see padded inputs and are marked invalid.
pub fn target_narma(u: &[f64], order: usize, c: &NarmaConstants) -> Result<Targets> {
    if order == 0 {
        return Err(Error::InvalidTask("NARMA order must be >= 1".into()));
    }
    check_window(order, u.len())?;
    let len = u.len();
    let at = |v: &[f64], i: isize| if i < 0 { 0.0 } else { v[i as usize] };
    let mut y = vec![0.0; len];
    let mut recent = vec![0.0; order];
    for k in 0..len {
        // ȳ(k) from ȳ(k-1), …, ȳ(k-n) and u(k-1), u(k-n)
        for (j, r) in recent.iter_mut().enumerate() {
            *r = at(&y, k as isize - 1 - j as isize);
        }
        let v = narma_step(c, &recent, at(u, k as isize - 1), at(u, k as isize - order as isize));
        if !v.is_finite() || v.abs() >= NARMA_DIVERGENCE {
            return Err(Error::Diverged { step: k, value: v });
        }
        y[k] = v;
    }
    Ok(Targets { values: y, first_valid: order })
}

pub fn target_pc(u: &[f64], order: usize, bias: usize) -> Result<Targets> {
    let window = order + bias;
    check_window(window, u.len())?;
    if let Some(&bad) = u.iter().find(|&&x| x != 0.0 && x != 1.0) {
        return Err(Error::InvalidTask(format!("parity inputs must be binary, got {bad}")));
    }
    let values = (0..u.len())
        .map(|k| {
            if k < window {
                return f64::NAN;
            }
            let ones = (0..=order).filter(|&d| u[k - d - bias] == 1.0).count();
            (ones % 2) as f64
        })
        .collect();
    Ok(Targets { values, first_valid: window })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub n_washout: usize,
    pub n_train: usize,
    pub n_test: usize,
}

impl SplitSpec {
    pub fn new(n_washout: usize, n_train: usize, n_test: usize) -> Self {
        Self { n_washout, n_train, n_test }
    }

    pub fn desk() -> Self {
        Self::new(500, 1000, 1000)
    }

    pub fn paper() -> Self {
        Self::new(4000, 3000, 3000)
    }

    pub fn total(&self) -> usize {
        self.n_washout + self.n_train + self.n_test
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::InvalidSplit(format!("train and test windows must be nonempty ({self:?})")));
        }
        Ok(())
    }

    pub fn train(&self) -> std::ops::Range<usize> {
        self.n_washout..self.n_washout + self.n_train
    }

    pub fn test(&self) -> std::ops::Range<usize> {
        self.n_washout + self.n_train..self.total()
    }
}

/// Ridge strength for readout training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Ridge {
    /// `10⁻⁸ × mean diag(XᵀX)`.
    #[default]
    Auto,
    Fixed(f64),
}

pub const AUTO_RIDGE_SCALE: f64 = 1e-8;
/// Relative singular-value cutoff of the unregularized solve.
pub const RANK_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReadoutWeights {
    pub w: Vec<f64>,
    pub ridge_lambda: f64,
    /// Set when the unregularized system was singular and the minimum-norm
    /// solution was returned.
    pub rank_deficient: bool,
}

impl ReadoutWeights {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        row.iter().zip(&self.w).map(|(x, w)| x * w).sum()
    }

    pub fn predict(&self, rows: &[&[f64]]) -> Vec<f64> {
        rows.iter().map(|r| self.predict_row(r)).collect()
    }
}

/// `argmin ‖Xw - y‖² + λ‖w‖²`. Positive `λ` solves the regularized normal
/// equations by Cholesky; `λ = 0` uses an SVD and returns the minimum-norm
/// solution.
pub fn train_readout(rows: &[&[f64]], y: &[f64], ridge: Ridge) -> Result<ReadoutWeights> {
    let m = rows.len();
    if m == 0 || m != y.len() {
        return Err(Error::DimensionMismatch { expected: m, found: y.len() });
    }
    let p = rows[0].len();
    if let Some(r) = rows.iter().find(|r| r.len() != p) {
        return Err(Error::DimensionMismatch { expected: p, found: r.len() });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidTask("training targets must be finite".into()));
    }
    let x = Mat::<f64>::from_fn(m, p, |i, j| rows[i][j]);
    let yv = Mat::<f64>::from_fn(m, 1, |i, _| y[i]);
    let lambda = match ridge {
        Ridge::Fixed(l) if l < 0.0 || !l.is_finite() => {
            return Err(Error::InvalidTask(format!("ridge λ must be >= 0, got {l}")));
        }
        Ridge::Fixed(l) => l,
        Ridge::Auto => {
            let mean_diag = (0..p).map(|j| (0..m).map(|i| x[(i, j)] * x[(i, j)]).sum::<f64>()).sum::<f64>() / p as f64;
            AUTO_RIDGE_SCALE * mean_diag
        }
    };
    if lambda > 0.0 {
        let mut g = x.transpose() * &x;
        for j in 0..p {
            g[(j, j)] += lambda;
        }
        let rhs = x.transpose() * &yv;
        if let Ok(llt) = g.llt(faer::Side::Lower) {
            let w = llt.solve(&rhs);
            let w: Vec<f64> = (0..p).map(|j| w[(j, 0)]).collect();
            if w.iter().all(|v| v.is_finite()) {
                return Ok(ReadoutWeights { w, ridge_lambda: lambda, rank_deficient: false });
            }
        }
    }
    let svd = x.thin_svd().map_err(|_| Error::EigenConvergence)?;
    let (u, s, v) = (svd.U(), svd.S().column_vector(), svd.V());
    let k = s.nrows();
    let smax = (0..k).map(|i| s[i]).fold(0.0, f64::max);
    let cutoff = RANK_TOLERANCE * smax * (m.max(p) as f64);
    let mut rank_deficient = false;
    let mut w = vec![0.0; p];
    for i in 0..k {
        let si = s[i];
        // Tikhonov filter factor; reduces to 1/σ at λ = 0
        let f = if lambda > 0.0 {
            si / (si * si + lambda)
        } else if si > cutoff {
            1.0 / si
        } else {
            rank_deficient = true;
            0.0
        };
        if f == 0.0 {
            continue;
        }
        let coef = f * (0..m).map(|r| u[(r, i)] * y[r]).sum::<f64>();
        for (j, wj) in w.iter_mut().enumerate() {
            *wj += coef * v[(j, i)];
        }
    }
    Ok(ReadoutWeights { w, ridge_lambda: lambda, rank_deficient })
}

/// `cov²(y, ȳ) / (σ²(y) σ²(ȳ))`.
pub fn r_squared(y: &[f64], target: &[f64]) -> Result<f64> {
    if y.len() != target.len() || y.is_empty() {
        return Err(Error::DimensionMismatch { expected: target.len(), found: y.len() });
    }
    let n = y.len() as f64;
    let my = y.iter().sum::<f64>() / n;
    let mt = target.iter().sum::<f64>() / n;
    let (mut cov, mut vy, mut vt) = (0.0, 0.0, 0.0);
    for (a, b) in y.iter().zip(target) {
        let (da, db) = (a - my, b - mt);
        cov += da * db;
        vy += da * da;
        vt += db * db;
    }
    if vy <= 0.0 || vt <= 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((cov * cov / (vy * vt)).min(1.0))
}

/// `‖y - ȳ‖² / ‖ȳ‖²`.
pub fn nmse(y: &[f64], target: &[f64]) -> Result<f64> {
    if y.len() != target.len() || y.is_empty() {
        return Err(Error::DimensionMismatch { expected: target.len(), found: y.len() });
    }
    let den: f64 = target.iter().map(|t| t * t).sum();
    if den == 0.0 {
        return Err(Error::ZeroNormTarget);
    }
    let num: f64 = y.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(num / den)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub task: String,
    pub params: String,
    /// Test-window R²; `None` when a variance vanishes.
    pub r_squared: Option<f64>,
    pub nmse: Option<f64>,
    pub train_nmse: Option<f64>,
    pub ridge_lambda: f64,
    pub rank_deficient: bool,
    pub n_train: usize,
    pub n_test: usize,
}

impl Metrics {
    pub fn get(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::RSquared => self.r_squared,
            Metric::Nmse => self.nmse,
        }
    }
}

fn valid_rows<'a>(features: &'a FeatureMatrix, targets: &Targets, range: std::ops::Range<usize>) -> (Vec<&'a [f64]>, Vec<f64>) {
    range.filter(|&k| targets.is_valid(k)).map(|k| (features.row(k), targets.values[k])).unzip()
}

/// Drop the washout, train on the train window, score the test window.
/// Steps with invalid targets are excluded from both windows.
pub fn evaluate(features: &FeatureMatrix, task: &TaskSpec, targets: &Targets, split: &SplitSpec, ridge: Ridge) -> Result<Metrics> {
    split.validate()?;
    if features.n_rows() < split.total() || targets.len() < split.total() {
        return Err(Error::InvalidSplit(format!(
            "split needs {} steps, have {} features and {} targets",
            split.total(),
            features.n_rows(),
            targets.len()
        )));
    }
    let (x_train, y_train) = valid_rows(features, targets, split.train());
    let (x_test, y_test) = valid_rows(features, targets, split.test());
    if x_train.is_empty() || x_test.is_empty() {
        return Err(Error::InvalidSplit("no valid target rows inside the train or test window".into()));
    }
    let weights = train_readout(&x_train, &y_train, ridge)?;
    let pred_test = weights.predict(&x_test);
    let pred_train = weights.predict(&x_train);
    Ok(Metrics {
        task: task.kind.name().to_string(),
        params: task.kind.params(),
        r_squared: r_squared(&pred_test, &y_test).ok(),
        nmse: nmse(&pred_test, &y_test).ok(),
        train_nmse: nmse(&pred_train, &y_train).ok(),
        ridge_lambda: weights.ridge_lambda,
        rank_deficient: weights.rank_deficient,
        n_train: x_train.len(),
        n_test: x_test.len(),
    })
}
