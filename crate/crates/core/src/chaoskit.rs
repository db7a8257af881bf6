//! Random-matrix diagnostics: spacing ratios, reference densities, the
//! spectral form factor, its plateau time, and chaos boundaries on `⟨r⟩(κ)`.

use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::pairwise_sum;

/// Spacing pairs whose spacings are both below this fraction of the spectral
/// span are treated as degenerate and dropped.
pub const DEGENERACY_TOLERANCE: f64 = 1e-12;
pub const DEFAULT_HISTOGRAM_BINS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub densities: Vec<f64>,
}

impl Histogram {
    /// Density histogram of values in `[0, 1]` with `bins` equal bins.
    pub fn unit_interval(values: &[f64], bins: usize) -> Self {
        let bins = bins.max(1);
        let edges: Vec<f64> = (0..=bins).map(|b| b as f64 / bins as f64).collect();
        let mut counts = vec![0usize; bins];
        for &v in values {
            let b = ((v * bins as f64) as usize).min(bins - 1);
            counts[b] += 1;
        }
        let width = 1.0 / bins as f64;
        let total = values.len().max(1) as f64;
        let densities = counts.iter().map(|&c| c as f64 / (total * width)).collect();
        Self { edges, densities }
    }

    pub fn centers(&self) -> impl Iterator<Item = f64> + '_ {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1]))
    }

    pub fn integral(&self) -> f64 {
        self.edges.windows(2).zip(&self.densities).map(|(w, d)| (w[1] - w[0]) * d).sum()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["r", "density"])?;
        for (c, d) in self.centers().zip(&self.densities) {
            w.write_record([c.to_string(), d.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpacingStats {
    pub ratios: Vec<f64>,
    pub mean_r: f64,
    pub central_fraction: f64,
    pub discarded: usize,
    pub histogram: Histogram,
}

fn central_window(m: usize, central_fraction: f64) -> (usize, usize) {
    let cut = (m as f64 * (1.0 - central_fraction) / 2.0).floor() as usize;
    (cut, m.saturating_sub(cut).max(cut))
}

fn window_ratios(levels: &[f64], central_fraction: f64, out: &mut Vec<f64>) -> Result<usize> {
    if !(central_fraction > 0.0 && central_fraction <= 1.0) {
        return Err(Error::InvalidConfig(format!("central fraction {central_fraction} not in (0, 1]")));
    }
    let mut e = levels.to_vec();
    e.sort_by(f64::total_cmp);
    let (lo, hi) = central_window(e.len(), central_fraction);
    let w = &e[lo..hi];
    if w.len() < 4 {
        return Err(Error::TooFewLevels { found: w.len(), needed: 4 });
    }
    let span = e[e.len() - 1] - e[0];
    let eps = DEGENERACY_TOLERANCE * span;
    let mut discarded = 0;
    for t in w.windows(3) {
        let (a, b) = (t[1] - t[0], t[2] - t[1]);
        if a < eps && b < eps {
            discarded += 1;
            continue;
        }
        out.push(if a <= b { a / b } else { b / a });
    }
    Ok(discarded)
}

/// Ratios `r_n = min(s_n/s_{n+1}, s_{n+1}/s_n)` over the central window of one spectrum.
pub fn spacing_ratios(levels: &[f64], central_fraction: f64) -> Result<SpacingStats> {
    ensemble_spacing_ratios(std::slice::from_ref(&levels.to_vec()), central_fraction)
}

/// Ratios pooled over several spectra of the same sector.
pub fn ensemble_spacing_ratios(spectra: &[Vec<f64>], central_fraction: f64) -> Result<SpacingStats> {
    let first = spectra.first().ok_or(Error::EmptyEnsemble)?;
    if let Some(bad) = spectra.iter().find(|s| s.len() != first.len()) {
        return Err(Error::InconsistentSector { expected: first.len(), found: bad.len() });
    }
    let mut ratios = Vec::new();
    let mut discarded = 0;
    for s in spectra {
        discarded += window_ratios(s, central_fraction, &mut ratios)?;
    }
    if ratios.is_empty() {
        return Err(Error::TooFewLevels { found: 0, needed: 1 });
    }
    let mean_r = pairwise_sum(&ratios) / ratios.len() as f64;
    let histogram = Histogram::unit_interval(&ratios, DEFAULT_HISTOGRAM_BINS);
    Ok(SpacingStats { ratios, mean_r, central_fraction, discarded, histogram })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RmtClass {
    Poisson,
    Goe,
    Gue,
    Gse,
}

impl RmtClass {
    pub const ALL: [RmtClass; 4] = [RmtClass::Poisson, RmtClass::Goe, RmtClass::Gue, RmtClass::Gse];

    /// Large-matrix reference value of `⟨r⟩`.
    pub fn mean_r(self) -> f64 {
        match self {
            RmtClass::Poisson => 0.3862,
            RmtClass::Goe => 0.5307,
            RmtClass::Gue => 0.5996,
            RmtClass::Gse => 0.6744,
        }
    }

    pub fn beta(self) -> Option<u32> {
        match self {
            RmtClass::Poisson => None,
            RmtClass::Goe => Some(1),
            RmtClass::Gue => Some(2),
            RmtClass::Gse => Some(4),
        }
    }

    /// Normalization `Z_β` of the Wigner-like surmise on `[0, ∞)`.
    pub fn normalization(self) -> Option<f64> {
        let s3 = 3f64.sqrt();
        match self {
            RmtClass::Poisson => None,
            RmtClass::Goe => Some(8.0 / 27.0),
            RmtClass::Gue => Some(4.0 * PI / (81.0 * s3)),
            RmtClass::Gse => Some(4.0 * PI / (729.0 * s3)),
        }
    }

    /// Density of `r ∈ [0, 1]` (the surmise folded by `r → min(r, 1/r)`).
    pub fn pdf(self, r: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::RatioOutOfRange(r));
        }
        Ok(match (self.beta(), self.normalization()) {
            (Some(b), Some(z)) => {
                let b = b as f64;
                2.0 / z * (r + r * r).powf(b) / (1.0 + r + r * r).powf(1.0 + 1.5 * b)
            }
            _ => 2.0 / ((1.0 + r) * (1.0 + r)),
        })
    }

    /// Class whose reference `⟨r⟩` is closest to `mean_r`.
    pub fn nearest(mean_r: f64) -> Self {
        Self::ALL
            .into_iter()
            .min_by(|a, b| (a.mean_r() - mean_r).abs().total_cmp(&(b.mean_r() - mean_r).abs()))
            .expect("non-empty")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SffCurve {
    pub t_grid: Vec<f64>,
    pub k: Vec<f64>,
    /// Standard error of the ensemble mean at each time.
    pub k_stderr: Vec<f64>,
    pub ensemble_size: usize,
    pub sector_dim: usize,
}

impl SffCurve {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "K", "K_stderr"])?;
        for ((t, k), e) in self.t_grid.iter().zip(&self.k).zip(&self.k_stderr) {
            w.write_record([t.to_string(), k.to_string(), e.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `points` log-spaced times from `t_min` to `t_max` inclusive.
pub fn log_time_grid(t_min: f64, t_max: f64, points: usize) -> Vec<f64> {
    assert!(t_min > 0.0 && t_max >= t_min && points >= 1);
    if points == 1 {
        return vec![t_min];
    }
    let (a, b) = (t_min.ln(), t_max.ln());
    (0..points).map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp()).collect()
}

fn sff_single(levels: &[f64], t_grid: &[f64]) -> Vec<f64> {
    let nn = (levels.len() * levels.len()) as f64;
    t_grid
        .iter()
        .map(|&t| {
            let (mut re, mut im) = (0.0, 0.0);
            for &e in levels {
                let (s, c) = (e * t).sin_cos();
                re += c;
                im += s;
            }
            (re * re + im * im) / nn
        })
        .collect()
}

/// Ensemble-averaged form factor `K(t) = ⟨|Σ_m e^{iE_m t}|²⟩ / 𝒩²`.
pub fn sff(spectra: &[Vec<f64>], t_grid: &[f64]) -> Result<SffCurve> {
    let first = spectra.first().ok_or(Error::EmptyEnsemble)?;
    if first.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    if let Some(bad) = spectra.iter().find(|s| s.len() != first.len()) {
        return Err(Error::InconsistentSector { expected: first.len(), found: bad.len() });
    }
    let per: Vec<Vec<f64>> = spectra.par_iter().map(|s| sff_single(s, t_grid)).collect();
    let mut k = Vec::with_capacity(t_grid.len());
    let mut k_stderr = Vec::with_capacity(t_grid.len());
    let mut column = vec![0.0; per.len()];
    for ti in 0..t_grid.len() {
        for (c, row) in column.iter_mut().zip(&per) {
            *c = row[ti];
        }
        k.push(pairwise_sum(&column) / column.len() as f64);
        k_stderr.push(crate::stats::stderr(&column));
    }
    Ok(SffCurve { t_grid: t_grid.to_vec(), k, k_stderr, ensemble_size: spectra.len(), sector_dim: first.len() })
}

pub const PLATEAU_BAND: f64 = 1.3;

/// Earliest grid time after the global minimum of `K` from which `K` stays
/// within a factor [`PLATEAU_BAND`] of `1/𝒩`.
pub fn plateau_time(curve: &SffCurve) -> Result<f64> {
    plateau_time_with_band(curve, PLATEAU_BAND)
}

pub fn plateau_time_with_band(curve: &SffCurve, band: f64) -> Result<f64> {
    if curve.k.is_empty() || curve.sector_dim == 0 {
        return Err(Error::NotSaturated);
    }
    let p = 1.0 / curve.sector_dim as f64;
    let (lo, hi) = (p / band, p * band);
    let argmin = curve
        .k
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("non-empty");
    let mut start = None;
    for i in (argmin + 1..curve.k.len()).rev() {
        if (lo..=hi).contains(&curve.k[i]) {
            start = Some(i);
        } else {
            break;
        }
    }
    start.map(|i| curve.t_grid[i]).ok_or(Error::NotSaturated)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChaosBoundaries {
    /// Upper edge of the Wigner-Dyson regime.
    pub kappa_wd: Option<f64>,
    /// Lower edge of the Poisson regime.
    pub kappa_poi: Option<f64>,
}

pub const BOUNDARY_TOLERANCE: f64 = 1e-2;

/// Locate the crossover edges on an ascending `κ` grid: `κ_WD` ends the run of
/// points near the GUE value that starts at the low end, `κ_Poi` begins the
/// run near the Poisson value that reaches the high end.
pub fn chaos_boundaries(kappa: &[f64], mean_r: &[f64], tol: f64) -> ChaosBoundaries {
    let n = kappa.len().min(mean_r.len());
    let near = |i: usize, class: RmtClass| (mean_r[i] - class.mean_r()).abs() < tol;
    let wd_run = (0..n).take_while(|&i| near(i, RmtClass::Gue)).last();
    let poi_run = (0..n).rev().take_while(|&i| near(i, RmtClass::Poisson)).last();
    ChaosBoundaries { kappa_wd: wd_run.map(|i| kappa[i]), kappa_poi: poi_run.map(|i| kappa[i]) }
}

/// Rows of `(κ, ⟨r⟩, stderr)`.
pub fn write_mean_r_sweep_csv<W: Write>(writer: W, rows: &[(f64, f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["kappa", "mean_r", "stderr"])?;
    for (k, m, s) in rows {
        w.write_record([k.to_string(), m.to_string(), s.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensembles::sample_ginibre;
    use crate::hilbert::eigvalsh_matrix;
    use crate::dense::CMat;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Composite Gauss-Legendre (5 nodes per panel) on `[a, b]`.
    fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
        const X: [f64; 5] = [0.0, -0.538_469_310_105_683_1, 0.538_469_310_105_683_1, -0.906_179_845_938_664, 0.906_179_845_938_664];
        const W: [f64; 5] = [0.568_888_888_888_888_9, 0.478_628_670_499_366_5, 0.478_628_670_499_366_5, 0.236_926_885_056_189_1, 0.236_926_885_056_189_1];
        let panels = 400;
        let h = (b - a) / panels as f64;
        (0..panels)
            .map(|p| {
                let mid = a + (p as f64 + 0.5) * h;
                X.iter().zip(W).map(|(x, w)| w * f(mid + 0.5 * h * x)).sum::<f64>() * 0.5 * h
            })
            .sum()
    }

    #[test]
    fn trivial_ratio_examples() {
        let s = spacing_ratios(&[0.0, 1.0, 3.0, 4.0], 1.0).unwrap();
        assert_eq!(s.ratios, vec![0.5, 0.5]);
        assert_eq!(s.mean_r, 0.5);
        let ladder: Vec<f64> = (0..40).map(f64::from).collect();
        assert!(spacing_ratios(&ladder, 0.5).unwrap().ratios.iter().all(|&r| r == 1.0));
        assert!(matches!(spacing_ratios(&[0.0, 1.0, 2.0], 1.0), Err(Error::TooFewLevels { .. })));
        assert!(matches!(spacing_ratios(&ladder[..5], 0.5), Err(Error::TooFewLevels { .. })));
    }

    #[test]
    fn central_window_bounds() {
        assert_eq!(central_window(70, 0.5), (17, 53));
        assert_eq!(central_window(10, 1.0), (0, 10));
        assert_eq!(central_window(9, 0.5), (2, 7));
    }

    #[test]
    fn degenerate_pairs_are_discarded() {
        let s = spacing_ratios(&[0.0, 1.0, 1.0, 1.0, 2.0, 3.0], 1.0).unwrap();
        assert_eq!(s.discarded, 1);
        assert_eq!(s.ratios, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn poisson_levels_give_poisson_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let levels: Vec<f64> = (0..100_000).map(|_| rng.random::<f64>()).collect();
        let s = spacing_ratios(&levels, 1.0).unwrap();
        assert!((s.mean_r - 0.3862).abs() < 0.003, "{}", s.mean_r);
        assert!((s.histogram.integral() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn folded_pdfs_are_normalized() {
        for class in RmtClass::ALL {
            let z = integrate(|r| class.pdf(r).unwrap(), 0.0, 1.0);
            assert!((z - 1.0).abs() < 1e-6, "{class:?}: {z}");
        }
        assert_eq!(RmtClass::Gue.pdf(0.0).unwrap(), 0.0);
        assert_eq!(RmtClass::Poisson.pdf(0.0).unwrap(), 2.0);
        assert!(RmtClass::Goe.pdf(1.5).is_err());
    }

    #[test]
    fn surmise_means_match_closed_forms() {
        // the surmise means are not the large-N constants; compare each to its
        // closed form and the constants to the surmise at the 1e-2 level
        let s3 = 3f64.sqrt();
        let closed = [
            (RmtClass::Poisson, 2.0 * 2f64.ln() - 1.0),
            (RmtClass::Goe, 4.0 - 2.0 * s3),
            (RmtClass::Gue, 2.0 * s3 / PI - 0.5),
            (RmtClass::Gse, 32.0 * s3 / (15.0 * PI) - 0.5),
        ];
        for (class, exact) in closed {
            let m = integrate(|r| r * class.pdf(r).unwrap(), 0.0, 1.0);
            assert!((m - exact).abs() < 1e-9, "{class:?}: {m} vs {exact}");
            assert!((m - class.mean_r()).abs() < 6e-3, "{class:?}: {m} vs {}", class.mean_r());
        }
    }

    #[test]
    fn nearest_class() {
        assert_eq!(RmtClass::nearest(0.39), RmtClass::Poisson);
        assert_eq!(RmtClass::nearest(0.60), RmtClass::Gue);
    }

    #[test]
    fn gue_matrices_reproduce_reference_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        let spectra: Vec<Vec<f64>> = (0..2000)
            .map(|_| {
                let g = sample_ginibre(70, 70, &mut rng);
                let h = CMat::from_fn(70, 70, |i, j| (g[(i, j)] + g[(j, i)].conj()) * 0.5);
                eigvalsh_matrix(&h).unwrap()
            })
            .collect();
        let s = ensemble_spacing_ratios(&spectra, 0.5).unwrap();
        assert!((s.mean_r - 0.5996).abs() < 0.005, "{}", s.mean_r);
    }

    #[test]
    fn sff_trivial_values() {
        let c = sff(&[vec![0.3, -1.0, 2.0]], &[0.0]).unwrap();
        assert_eq!(c.k, vec![1.0]);
        let c = sff(&[vec![4.2]], &[0.1, 7.0, 1e3]).unwrap();
        assert!(c.k.iter().all(|&k| (k - 1.0).abs() < 1e-15));
        let c = sff(&[vec![0.0, PI]], &[1.0]).unwrap();
        assert!(c.k[0].abs() < 1e-15);
        assert!(matches!(sff(&[], &[1.0]), Err(Error::EmptyEnsemble)));
        assert!(matches!(sff(&[vec![1.0], vec![1.0, 2.0]], &[1.0]), Err(Error::InconsistentSector { .. })));
    }

    fn synthetic_curve(t_star: f64) -> SffCurve {
        let t_grid = log_time_grid(0.1, 1000.0, 81);
        let n = 70.0;
        let k = t_grid
            .iter()
            .map(|&t| if t >= t_star { 1.0 / n } else { (1.0 - 2.0 * t / t_star).max(0.3 / n) })
            .collect::<Vec<_>>();
        SffCurve { k_stderr: vec![0.0; k.len()], t_grid, k, ensemble_size: 1, sector_dim: 70 }
    }

    #[test]
    fn plateau_of_synthetic_curve() {
        let c = synthetic_curve(50.0);
        let tp = plateau_time(&c).unwrap();
        let first = *c.t_grid.iter().find(|&&t| t >= 50.0).unwrap();
        assert_eq!(tp, first);
        let mut never = c.clone();
        *never.k.last_mut().unwrap() = 0.5;
        assert!(matches!(plateau_time(&never), Err(Error::NotSaturated)));
    }

    #[test]
    fn boundary_examples() {
        let k = [0.1, 0.2, 0.5, 1.0];
        let b = chaos_boundaries(&k, &[0.5996; 4], BOUNDARY_TOLERANCE);
        assert_eq!(b, ChaosBoundaries { kappa_wd: Some(1.0), kappa_poi: None });
        let b = chaos_boundaries(&k, &[0.3862; 4], BOUNDARY_TOLERANCE);
        assert_eq!(b, ChaosBoundaries { kappa_wd: None, kappa_poi: Some(0.1) });
        let b = chaos_boundaries(&k, &[0.598, 0.55, 0.45, 0.39], BOUNDARY_TOLERANCE);
        assert_eq!(b, ChaosBoundaries { kappa_wd: Some(0.1), kappa_poi: Some(1.0) });
    }

    proptest! {
        #[test]
        fn sff_shift_invariant(levels in prop::collection::vec(-5.0f64..5.0, 1..30), c in -10.0f64..10.0, t in 0.0f64..20.0) {
            let shifted: Vec<f64> = levels.iter().map(|e| e + c).collect();
            let a = sff(&[levels], &[t]).unwrap().k[0];
            let b = sff(&[shifted], &[t]).unwrap().k[0];
            prop_assert!((a - b).abs() <= 1e-12);
            prop_assert!(a >= 0.0 && a <= 1.0 + 1e-12);
        }

        #[test]
        fn ratios_affine_invariant(levels in prop::collection::vec(-100.0f64..100.0, 8..60), a in prop::sample::select(vec![0.5f64, 2.0, 4.0, 0.25]), b in -50.0f64..50.0) {
            // power-of-two scales and dyadic shifts keep the arithmetic exact
            let b = (b * 8.0).round() / 8.0;
            let levels: Vec<f64> = levels.iter().map(|x| (x * 1024.0).round() / 1024.0).collect();
            let mapped: Vec<f64> = levels.iter().map(|x| a * x + b).collect();
            let s = spacing_ratios(&levels, 1.0).unwrap();
            let t = spacing_ratios(&mapped, 1.0).unwrap();
            prop_assert_eq!(&s.ratios, &t.ratios);
            prop_assert!(s.ratios.iter().all(|r| (0.0..=1.0).contains(r)));
            prop_assert!((s.histogram.integral() - 1.0).abs() < 1e-6);
        }
    }
}
