//! Random couplings and Hamiltonians of the complex SYK model
//!
//! ```text
//! H = Σ_{ijkl} J_ijkl c†_i c†_j c_k c_l + Σ_{ij} κ_ij c†_i c_j
//! ```
//!
//! with `E|J_ijkl|² = J4²/N³`, `E|κ_ij|² = κ2²/(2N)`, `κ_ij = κ*_ji`,
//! `J_ijkl = J*_klij = -J_jikl = -J_ijlk`. Only the independent entries are
//! stored; the quadruple sum runs over the full tensor rebuilt from them.
//!
//! Also hosts the Haar-unitary and random-mixed-state samplers.

use std::io::{Read, Write};

use faer::c64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dense::{CMat, ZERO};
use crate::error::{Error, Result};
use crate::hilbert::{
    eigvalsh_matrix, one_body_term, sector_project, two_body_term, DensityMatrix, FockSpace,
    HermitianOperator, SectorBasis, SparseTerm,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub n_modes: usize,
    pub j4: f64,
    pub kappa2: f64,
    #[serde(default)]
    pub phs_correction: bool,
    #[serde(default)]
    pub normalize: bool,
    #[serde(default)]
    pub seed: u64,
}

impl ModelSpec {
    pub fn new(n_modes: usize, j4: f64, kappa2: f64) -> Self {
        Self { n_modes, j4, kappa2, phs_correction: false, normalize: false, seed: 0 }
    }

    /// Pure four-body model, `(J4, κ2) = (1, 0)`.
    pub fn syk4(n_modes: usize) -> Self {
        Self::new(n_modes, 1.0, 0.0)
    }

    /// Pure quadratic model, `(J4, κ2) = (0, 1)`.
    pub fn syk2(n_modes: usize) -> Self {
        Self::new(n_modes, 0.0, 1.0)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_phs_correction(mut self, on: bool) -> Self {
        self.phs_correction = on;
        self
    }

    pub fn normalized(mut self, on: bool) -> Self {
        self.normalize = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=crate::hilbert::MAX_MODES).contains(&self.n_modes) {
            return Err(Error::InvalidModeCount(self.n_modes));
        }
        if !(self.j4 >= 0.0 && self.kappa2 >= 0.0) || !self.j4.is_finite() || !self.kappa2.is_finite() {
            return Err(Error::InvalidModel(format!("couplings must be finite and >= 0 (J4={}, κ2={})", self.j4, self.kappa2)));
        }
        if self.j4 == 0.0 && self.kappa2 == 0.0 {
            return Err(Error::InvalidModel("J4 and κ2 are both zero".into()));
        }
        Ok(())
    }
}

pub type Quartet = [usize; 4];

/// Independent coupling entries of one disorder realization.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingSet {
    pub n_modes: usize,
    pub j4: f64,
    pub kappa2: f64,
    pub seed: u64,
    /// `J_ijkl` for `i<j`, `k<l`, `(i,j) <= (k,l)`.
    pub j: Vec<(Quartet, c64)>,
    /// `κ_ij` for `i <= j`.
    pub kappa: Vec<((usize, usize), c64)>,
}

/// Ordered pairs `i < j`, lexicographic.
pub fn canonical_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
}

/// Canonical index set of the independent four-body couplings.
pub fn canonical_quartets(n: usize) -> Vec<Quartet> {
    let pairs = canonical_pairs(n);
    let mut out = Vec::with_capacity(pairs.len() * (pairs.len() + 1) / 2);
    for (a, &(i, j)) in pairs.iter().enumerate() {
        for &(k, l) in &pairs[a..] {
            out.push([i, j, k, l]);
        }
    }
    out
}

fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64, real: bool) -> c64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    if real {
        c64::new(re * variance.sqrt(), 0.0)
    } else {
        let s = (variance / 2.0).sqrt();
        c64::new(re * s, im * s)
    }
}

/// Draw one realization of the couplings.
///
/// Every entry consumes two standard normals regardless of the scales, so the
/// same stream yields the same underlying disorder for any `(J4, κ2)`.
pub fn sample_couplings<R: Rng + ?Sized>(spec: &ModelSpec, rng: &mut R) -> Result<CouplingSet> {
    spec.validate()?;
    let n = spec.n_modes;
    let nf = n as f64;
    let var_j = spec.j4 * spec.j4 / (nf * nf * nf);
    let var_k = spec.kappa2 * spec.kappa2 / (2.0 * nf);
    let j = canonical_quartets(n)
        .into_iter()
        .map(|q| {
            let self_conjugate = q[0] == q[2] && q[1] == q[3];
            (q, complex_gaussian(rng, var_j, self_conjugate))
        })
        .collect();
    let kappa = (0..n)
        .flat_map(|i| (i..n).map(move |j| (i, j)))
        .map(|(i, j)| ((i, j), complex_gaussian(rng, var_k, i == j)))
        .collect();
    Ok(CouplingSet { n_modes: n, j4: spec.j4, kappa2: spec.kappa2, seed: spec.seed, j, kappa })
}

impl CouplingSet {
    /// Sample with a generator seeded from `spec.seed`.
    pub fn from_spec(spec: &ModelSpec) -> Result<Self> {
        sample_couplings(spec, &mut ChaCha8Rng::seed_from_u64(spec.seed))
    }

    #[inline]
    fn flat(n: usize, i: usize, j: usize, k: usize, l: usize) -> usize {
        ((i * n + j) * n + k) * n + l
    }

    /// The full `N⁴` tensor with all conjugate and antisymmetric images filled in.
    pub fn j_tensor(&self) -> Vec<c64> {
        let n = self.n_modes;
        let mut t = vec![ZERO; n * n * n * n];
        for &([i, j, k, l], v) in &self.j {
            let w = v.conj();
            t[Self::flat(n, i, j, k, l)] = v;
            t[Self::flat(n, j, i, k, l)] = -v;
            t[Self::flat(n, i, j, l, k)] = -v;
            t[Self::flat(n, j, i, l, k)] = v;
            t[Self::flat(n, k, l, i, j)] = w;
            t[Self::flat(n, l, k, i, j)] = -w;
            t[Self::flat(n, k, l, j, i)] = -w;
            t[Self::flat(n, l, k, j, i)] = w;
        }
        t
    }

    /// Hermitian `N × N` matrix `κ_ij`.
    pub fn kappa_matrix(&self) -> CMat {
        let n = self.n_modes;
        let mut m = CMat::zeros(n, n);
        for &((i, j), v) in &self.kappa {
            m[(i, j)] = v;
            m[(j, i)] = v.conj();
        }
        m
    }

    /// One-body coefficients `h_ab` of the particle-hole-restoring correction
    /// `½ Σ J_ijkl (δ_ik c†_j c_l - δ_il c†_j c_k - δ_jk c†_i c_l + δ_jl c†_i c_k)`.
    pub fn phs_correction_matrix(&self) -> CMat {
        let n = self.n_modes;
        let t = self.j_tensor();
        let mut h = CMat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        let v = t[Self::flat(n, i, j, k, l)] * 0.5;
                        if v == ZERO {
                            continue;
                        }
                        if i == k {
                            h[(j, l)] += v;
                        }
                        if i == l {
                            h[(j, k)] -= v;
                        }
                        if j == k {
                            h[(i, l)] -= v;
                        }
                        if j == l {
                            h[(i, k)] += v;
                        }
                    }
                }
            }
        }
        h
    }

    /// Write the independent entries as CSV with 1-based site labels.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["kind", "i", "j", "k", "l", "re", "im"])?;
        w.write_record(["n_modes", &self.n_modes.to_string(), "", "", "", "", ""])?;
        w.write_record(["seed", &self.seed.to_string(), "", "", "", "", ""])?;
        w.write_record(["j4", "", "", "", "", &self.j4.to_string(), ""])?;
        w.write_record(["kappa2", "", "", "", "", &self.kappa2.to_string(), ""])?;
        for &(q, v) in &self.j {
            let idx = q.map(|x| (x + 1).to_string());
            w.write_record(["J", &idx[0], &idx[1], &idx[2], &idx[3], &v.re.to_string(), &v.im.to_string()])?;
        }
        for &((i, j), v) in &self.kappa {
            w.write_record([
                "kappa",
                &(i + 1).to_string(),
                &(j + 1).to_string(),
                "",
                "",
                &v.re.to_string(),
                &v.im.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(reader);
        let bad = |m: &str| Error::MalformedDump(m.to_string());
        let site = |s: &str| -> Result<usize> {
            let v: usize = s.parse().map_err(|_| bad("site label"))?;
            v.checked_sub(1).ok_or_else(|| bad("site labels are 1-based"))
        };
        let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| bad("number")) };
        let mut out = CouplingSet { n_modes: 0, j4: 0.0, kappa2: 0.0, seed: 0, j: vec![], kappa: vec![] };
        for rec in rd.records() {
            let r = rec?;
            let f = |i: usize| r.get(i).unwrap_or("");
            match f(0) {
                "n_modes" => out.n_modes = f(1).parse().map_err(|_| bad("n_modes"))?,
                "seed" => out.seed = f(1).parse().map_err(|_| bad("seed"))?,
                "j4" => out.j4 = num(f(5))?,
                "kappa2" => out.kappa2 = num(f(5))?,
                "J" => out.j.push((
                    [site(f(1))?, site(f(2))?, site(f(3))?, site(f(4))?],
                    c64::new(num(f(5))?, num(f(6))?),
                )),
                "kappa" => out.kappa.push(((site(f(1))?, site(f(2))?), c64::new(num(f(5))?, num(f(6))?))),
                other => return Err(bad(&format!("unknown row kind {other:?}"))),
            }
        }
        if out.n_modes < 2 {
            return Err(bad("missing n_modes"));
        }
        let n = out.n_modes;
        if out.j.iter().any(|(q, _)| q.iter().any(|&s| s >= n)) || out.kappa.iter().any(|((i, j), _)| *i >= n || *j >= n) {
            return Err(bad("site label exceeds n_modes"));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct AssembledHamiltonian {
    pub operator: HermitianOperator,
    /// Largest `|E|` before any normalization.
    pub spectral_norm: f64,
}

/// Precomputed sparse actions of every ladder product appearing in the model.
#[derive(Debug, Clone)]
pub struct HamiltonianAssembler {
    space: FockSpace,
    two_body: Vec<(Quartet, SparseTerm)>,
    one_body: Vec<((usize, usize), SparseTerm)>,
}

impl HamiltonianAssembler {
    pub fn new(space: FockSpace) -> Self {
        let n = space.n_modes();
        let mut two_body = Vec::new();
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        if i == j || k == l {
                            continue;
                        }
                        let term = two_body_term(&space, i, j, k, l).expect("sites in range");
                        if !term.is_zero() {
                            two_body.push(([i, j, k, l], term));
                        }
                    }
                }
            }
        }
        let one_body = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| ((i, j), one_body_term(&space, i, j).expect("sites in range")))
            .collect();
        Self { space, two_body, one_body }
    }

    pub fn space(&self) -> FockSpace {
        self.space
    }

    pub fn assemble(&self, c: &CouplingSet, spec: &ModelSpec) -> Result<AssembledHamiltonian> {
        let n = self.space.n_modes();
        if c.n_modes != n {
            return Err(Error::DimensionMismatch { expected: n, found: c.n_modes });
        }
        let dim = self.space.dim();
        let mut h = CMat::zeros(dim, dim);
        let t = c.j_tensor();
        for &([i, j, k, l], ref term) in &self.two_body {
            let v = t[CouplingSet::flat(n, i, j, k, l)];
            if v != ZERO {
                term.add_scaled_to(v, &mut h);
            }
        }
        let mut one = c.kappa_matrix();
        if spec.phs_correction {
            one = &one + &c.phs_correction_matrix();
        }
        for &((i, j), ref term) in &self.one_body {
            let v = one[(i, j)];
            if v != ZERO {
                term.add_scaled_to(v, &mut h);
            }
        }
        let operator = HermitianOperator::new(h, "H")?;
        let spectral_norm = spectral_norm_by_sector(&operator, &self.space)?;
        if !spec.normalize {
            return Ok(AssembledHamiltonian { operator, spectral_norm });
        }
        if spectral_norm == 0.0 {
            return Err(Error::InvalidModel("cannot normalize a zero Hamiltonian".into()));
        }
        let scaled = crate::dense::scaled(operator.matrix().as_ref(), c64::new(1.0 / spectral_norm, 0.0));
        Ok(AssembledHamiltonian { operator: HermitianOperator::new(scaled, "H/|H|")?, spectral_norm })
    }
}

/// Assemble the Hamiltonian of one realization. Builds the operator tables
/// on every call; use [`HamiltonianAssembler`] when sampling many.
pub fn assemble_hamiltonian(c: &CouplingSet, spec: &ModelSpec, space: &FockSpace) -> Result<AssembledHamiltonian> {
    HamiltonianAssembler::new(*space).assemble(c, spec)
}

/// Spectral norm of a number-conserving operator from its sector blocks.
pub fn spectral_norm_by_sector(h: &HermitianOperator, space: &FockSpace) -> Result<f64> {
    let mut norm = 0.0f64;
    for np in 0..=space.n_modes() {
        let sector = SectorBasis::new(space, np)?;
        let block = sector_project(h.matrix(), &sector)?;
        for e in eigvalsh_matrix(&block)? {
            norm = norm.max(e.abs());
        }
    }
    Ok(norm)
}

/// Ascending eigenvalues of `h` inside one particle-number sector.
pub fn sector_spectrum(h: &HermitianOperator, sector: &SectorBasis) -> Result<Vec<f64>> {
    eigvalsh_matrix(&sector_project(h.matrix(), sector)?)
}

/// Complex Ginibre matrix with i.i.d. entries of unit variance.
pub fn sample_ginibre<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMat {
    let mut m = CMat::zeros(rows, cols);
    for j in 0..cols {
        for i in 0..rows {
            m[(i, j)] = complex_gaussian(rng, 1.0, false);
        }
    }
    m
}

/// Haar-distributed unitary: QR of a Ginibre matrix with the phases of
/// `diag(R)` moved into `Q`.
pub fn sample_haar_unitary<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> CMat {
    assert!(dim >= 1, "Haar unitary needs dim >= 1");
    let g = sample_ginibre(dim, dim, rng);
    let qr = g.qr();
    let mut q = qr.compute_Q();
    let r = qr.R();
    for j in 0..dim {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { c64::new(1.0, 0.0) };
        for x in q.col_as_slice_mut(j) {
            *x *= phase;
        }
    }
    q
}

/// Where a random mixed state is supported.
#[derive(Debug, Clone, Copy)]
pub enum Support<'a> {
    Full(FockSpace),
    Sector(&'a SectorBasis),
}

/// Normalized Wishart state `G G† / Tr(G G†)` on the requested subspace,
/// embedded in the full Fock space.
pub fn sample_random_density<R: Rng + ?Sized>(support: Support<'_>, rng: &mut R) -> Result<DensityMatrix> {
    let (dim, idx): (usize, Vec<usize>) = match support {
        Support::Full(space) => (space.dim(), (0..space.dim()).collect()),
        Support::Sector(sector) => (1 << sector.n_modes(), sector.indices().to_vec()),
    };
    let d = idx.len();
    let g = sample_ginibre(d, d, rng);
    let w = crate::dense::mul(g.as_ref(), g.adjoint());
    let tr = crate::dense::trace(w.as_ref()).re;
    let mut full = CMat::zeros(dim, dim);
    for (a, &ra) in idx.iter().enumerate() {
        for (b, &rb) in idx.iter().enumerate() {
            full[(ra, rb)] = w[(a, b)] / tr;
        }
    }
    crate::dense::hermitize(&mut full);
    DensityMatrix::new(full)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::{self, max_abs, max_abs_diff};
    use crate::hilbert::{eigh_number_conserving, total_number};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn kappa_vanishes_when_scale_is_zero() {
        let c = CouplingSet::from_spec(&ModelSpec::syk4(6).with_seed(3)).unwrap();
        assert!(c.kappa.iter().all(|(_, v)| v.norm() == 0.0));
        let c = CouplingSet::from_spec(&ModelSpec::syk2(6).with_seed(3)).unwrap();
        assert!(c.j.iter().all(|(_, v)| v.norm() == 0.0));
    }

    #[test]
    fn canonical_count_matches_enumeration() {
        // brute force: unordered pairs of unordered site pairs, counted via
        // the orbit of (i,j,k,l) under the symmetry group
        for n in 2..=8 {
            let mut seen = std::collections::BTreeSet::new();
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        for l in 0..n {
                            if i == j || k == l {
                                continue;
                            }
                            let p = (i.min(j), i.max(j));
                            let q = (k.min(l), k.max(l));
                            seen.insert((p.min(q), p.max(q)));
                        }
                    }
                }
            }
            assert_eq!(canonical_quartets(n).len(), seen.len());
        }
        assert_eq!(canonical_quartets(8).len(), 406);
    }

    #[test]
    fn tensor_symmetries() {
        let c = CouplingSet::from_spec(&ModelSpec::new(5, 1.0, 0.7).with_seed(11)).unwrap();
        let n = 5;
        let t = c.j_tensor();
        let at = |i, j, k, l| t[CouplingSet::flat(n, i, j, k, l)];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        assert_eq!(at(i, j, k, l), at(k, l, i, j).conj());
                        assert_eq!(at(i, j, k, l), -at(j, i, k, l));
                        assert_eq!(at(i, j, k, l), -at(i, j, l, k));
                        if i == j || k == l {
                            assert_eq!(at(i, j, k, l), ZERO);
                        }
                    }
                }
            }
        }
        let km = c.kappa_matrix();
        for i in 0..n {
            assert_eq!(km[(i, i)].im, 0.0);
            for j in 0..n {
                assert_eq!(km[(i, j)], km[(j, i)].conj());
            }
        }
    }

    #[test]
    fn same_seed_same_couplings() {
        let spec = ModelSpec::new(6, 1.0, 2.0).with_seed(99);
        assert_eq!(CouplingSet::from_spec(&spec).unwrap(), CouplingSet::from_spec(&spec).unwrap());
        let other = CouplingSet::from_spec(&spec.clone().with_seed(100)).unwrap();
        assert_ne!(CouplingSet::from_spec(&spec).unwrap(), other);
    }

    #[test]
    fn kappa_moment_matches_variance() {
        // mean |κ_12|² over 10⁶ draws, κ2 = 1, N = 8 -> 1/16
        let spec = ModelSpec::syk2(8);
        let mut r = rng(5);
        let draws = 1_000_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..draws {
            let x = complex_gaussian(&mut r, 1.0 / 16.0, false).norm_sqr();
            sum += x;
            sum_sq += x * x;
        }
        let mean = sum / draws as f64;
        let se = ((sum_sq / draws as f64 - mean * mean) / draws as f64).sqrt();
        assert!((mean - 1.0 / 16.0).abs() < 3.0 * se, "mean {mean} se {se}");
        // through the sampler itself
        let mut acc = Vec::new();
        for s in 0..20_000u64 {
            let c = sample_couplings(&spec, &mut rng(s)).unwrap();
            acc.push(c.kappa.iter().find(|(p, _)| *p == (0, 1)).unwrap().1.norm_sqr());
        }
        let m = acc.iter().sum::<f64>() / acc.len() as f64;
        let v = acc.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (acc.len() - 1) as f64;
        assert!((m - 1.0 / 16.0).abs() < 3.0 * (v / acc.len() as f64).sqrt(), "sampler mean {m}");
    }

    #[test]
    fn j_moment_matches_variance() {
        let n = 6;
        let spec = ModelSpec::syk4(n);
        let target = 1.0 / (n as f64).powi(3);
        let mut acc = Vec::new();
        for s in 0..1000u64 {
            let c = sample_couplings(&spec, &mut rng(s)).unwrap();
            acc.extend(c.j.iter().map(|(_, v)| v.norm_sqr()));
        }
        assert!(acc.len() >= 100_000);
        let m = acc.iter().sum::<f64>() / acc.len() as f64;
        let v = acc.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (acc.len() - 1) as f64;
        assert!((m - target).abs() < 3.0 * (v / acc.len() as f64).sqrt(), "mean {m} vs {target}");
    }

    #[test]
    fn syk2_two_sites_single_particle_block_is_kappa() {
        let spec = ModelSpec::syk2(2).with_seed(7);
        let c = CouplingSet::from_spec(&spec).unwrap();
        let h = assemble_hamiltonian(&c, &spec, &FockSpace::new(2).unwrap()).unwrap();
        let k = c.kappa_matrix();
        let m = h.operator.matrix();
        // one-particle states: |10> = 1 (site 1), |01> = 2 (site 2)
        assert!((m[(1, 1)] - k[(0, 0)]).norm() < 1e-15);
        assert!((m[(2, 2)] - k[(1, 1)]).norm() < 1e-15);
        assert!((m[(1, 2)] - k[(0, 1)]).norm() < 1e-15);
        assert!((m[(2, 1)] - k[(1, 0)]).norm() < 1e-15);
        assert_eq!(m[(0, 0)], ZERO);
        assert!((m[(3, 3)] - (k[(0, 0)] + k[(1, 1)])).norm() < 1e-15);
        assert_eq!(m[(0, 3)], ZERO);
    }

    #[test]
    fn assembled_hamiltonians_are_hermitian_and_conserve_number() {
        let mut r = rng(1234);
        for trial in 0..100 {
            let n = 2 + trial % 5;
            let spec = ModelSpec::new(n, r.random::<f64>() * 2.0, r.random::<f64>() * 2.0)
                .with_seed(trial as u64)
                .with_phs_correction(trial % 3 == 0);
            let c = sample_couplings(&spec, &mut r).unwrap();
            let space = FockSpace::new(n).unwrap();
            let h = assemble_hamiltonian(&c, &spec, &space).unwrap();
            let m = h.operator.matrix();
            let scale = max_abs(m.as_ref()).max(1e-300);
            assert!(dense::hermiticity_defect(m.as_ref()) <= 1e-12 * scale);
            let nt = total_number(&space);
            let a = dense::mul(m.as_ref(), nt.matrix().as_ref());
            let b = dense::mul(nt.matrix().as_ref(), m.as_ref());
            assert!(max_abs_diff(a.as_ref(), b.as_ref()) <= 1e-10);
        }
    }

    #[test]
    fn normalization_sets_unit_spectral_norm() {
        let spec = ModelSpec::new(6, 1.0, 3.0).with_seed(8).normalized(true);
        let c = CouplingSet::from_spec(&spec).unwrap();
        let space = FockSpace::new(6).unwrap();
        let h = assemble_hamiltonian(&c, &spec, &space).unwrap();
        let es = eigh_number_conserving(&h.operator, &space).unwrap();
        assert!((es.spectral_norm() - 1.0).abs() < 1e-9);
        let raw = assemble_hamiltonian(&c, &spec.clone().normalized(false), &space).unwrap();
        assert!((raw.spectral_norm - h.spectral_norm).abs() < 1e-12);
        let full = crate::hilbert::eigh(&raw.operator).unwrap();
        assert!((full.spectral_norm() - raw.spectral_norm).abs() < 1e-10);
    }

    #[test]
    fn sector_blocks_reproduce_full_spectrum() {
        for n in 2..=4 {
            let spec = ModelSpec::new(n, 1.0, 0.5).with_seed(n as u64);
            let c = CouplingSet::from_spec(&spec).unwrap();
            let space = FockSpace::new(n).unwrap();
            let h = assemble_hamiltonian(&c, &spec, &space).unwrap();
            let full = crate::hilbert::eigh(&h.operator).unwrap();
            let mut blocks: Vec<f64> = (0..=n)
                .flat_map(|np| sector_spectrum(&h.operator, &SectorBasis::new(&space, np).unwrap()).unwrap())
                .collect();
            blocks.sort_by(f64::total_cmp);
            for (a, b) in blocks.iter().zip(&full.eigenvalues) {
                assert!((a - b).abs() < 1e-12);
            }
            let by_sector = eigh_number_conserving(&h.operator, &space).unwrap();
            assert!(max_abs_diff(by_sector.reconstruct().as_ref(), h.operator.matrix().as_ref()) < 1e-12);
            assert!(by_sector.unitarity_defect() < 1e-12);
        }
    }

    #[test]
    fn haar_unitary_is_unitary() {
        let mut r = rng(2);
        let u = sample_haar_unitary(1, &mut r);
        assert!((u[(0, 0)].norm() - 1.0).abs() < 1e-15);
        let u = sample_haar_unitary(256, &mut r);
        let g = dense::mul(u.adjoint(), u.as_ref());
        assert!(max_abs_diff(g.as_ref(), CMat::identity(256, 256).as_ref()) <= 1e-10);
    }

    /// Asymptotic Kolmogorov-Smirnov p-value for statistic `d` with `n` samples.
    fn ks_p_value(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
        samples.sort_by(f64::total_cmp);
        let n = samples.len() as f64;
        let d = samples
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = cdf(x);
                (f - i as f64 / n).max((i + 1) as f64 / n - f)
            })
            .fold(0.0, f64::max);
        let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
        let p: f64 = (1..=100)
            .map(|k| {
                let k = k as f64;
                2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp()
            })
            .sum();
        p.clamp(0.0, 1.0)
    }

    #[test]
    fn haar_eigenphases_are_uniform() {
        let mut r = rng(21);
        let mut phases = Vec::new();
        for _ in 0..200 {
            let u = sample_haar_unitary(16, &mut r);
            for z in u.eigenvalues().unwrap() {
                phases.push(z.arg().rem_euclid(2.0 * std::f64::consts::PI));
            }
        }
        let p = ks_p_value(&mut phases, |x| x / (2.0 * std::f64::consts::PI));
        assert!(p > 1e-3, "KS p-value {p}");
    }

    #[test]
    fn haar_entry_modulus_follows_beta_law() {
        // |U_00|² ~ Beta(1, d-1)
        let d = 8;
        let mut r = rng(22);
        let mut x: Vec<f64> = (0..4000).map(|_| sample_haar_unitary(d, &mut r)[(0, 0)].norm_sqr()).collect();
        let p = ks_p_value(&mut x, |t| 1.0 - (1.0 - t).powi(d as i32 - 1));
        assert!(p > 1e-3, "KS p-value {p}");
    }

    #[test]
    fn random_density_properties() {
        let mut r = rng(3);
        let space = FockSpace::new(8).unwrap();
        let half = SectorBasis::half_filling(&space);
        let rho = sample_random_density(Support::Sector(&half), &mut r).unwrap();
        assert!((rho.trace().re - 1.0).abs() < 1e-12);
        let block = sector_project(rho.matrix(), &half).unwrap();
        let vals = eigvalsh_matrix(&block).unwrap();
        assert!(vals[0] >= -1e-12);
        let outside: f64 = (0..256)
            .filter(|b: &usize| b.count_ones() != 4)
            .map(|b| rho.matrix()[(b, b)].norm())
            .sum();
        assert_eq!(outside, 0.0);

        let one = SectorBasis::new(&FockSpace::new(3).unwrap(), 3).unwrap();
        let pure = sample_random_density(Support::Sector(&one), &mut r).unwrap();
        assert!((pure.matrix()[(7, 7)].re - 1.0).abs() < 1e-15);
    }

    #[test]
    fn random_density_mean_is_maximally_mixed() {
        let mut r = rng(4);
        let space = FockSpace::new(4).unwrap();
        let sector = SectorBasis::half_filling(&space);
        let samples = 10_000;
        let mut mean = CMat::zeros(16, 16);
        for _ in 0..samples {
            let rho = sample_random_density(Support::Sector(&sector), &mut r).unwrap();
            mean = &mean + rho.matrix();
        }
        let mean = dense::scaled(mean.as_ref(), c64::new(1.0 / samples as f64, 0.0));
        let w = 1.0 / sector.dim() as f64;
        for &a in sector.indices() {
            for &b in sector.indices() {
                let expected = if a == b { w } else { 0.0 };
                assert!((mean[(a, b)].re - expected).abs() < 0.05 * w && mean[(a, b)].im.abs() < 0.05 * w);
            }
        }
    }

    #[test]
    fn coupling_dump_round_trip() {
        let spec = ModelSpec::new(5, 1.0, 0.3).with_seed(42);
        let c = CouplingSet::from_spec(&spec).unwrap();
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let back = CouplingSet::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, c);
        assert!(CouplingSet::read_csv("kind,i,j,k,l,re,im\nbogus,,,,,,\n".as_bytes()).is_err());
    }
}
