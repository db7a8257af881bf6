//! Order-stable reductions used when averaging over realizations.

/// Pairwise (cascade) summation. The result depends only on the order of `xs`.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 16;
    if xs.len() <= LEAF {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| pairwise_sum(xs) / xs.len() as f64)
}

/// Sample standard deviation (`n - 1` denominator); zero for fewer than two values.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = pairwise_sum(xs) / xs.len() as f64;
    let sq: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    (pairwise_sum(&sq) / (xs.len() - 1) as f64).sqrt()
}

pub fn stderr(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    sample_std(xs) / (xs.len() as f64).sqrt()
}

/// Exact median; mean of the two central values for even lengths.
pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub stderr: f64,
    pub median: f64,
    pub count: usize,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Option<Self> {
        Some(Self {
            mean: mean(xs)?,
            std: sample_std(xs),
            stderr: stderr(xs),
            median: median(xs)?,
            count: xs.len(),
        })
    }
}
