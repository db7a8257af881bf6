//! Fock-space machinery for `N` spinless fermionic modes.
//!
//! Basis index `b` stores the occupation of site `i` (0-based) in bit `i`, so
//! site index 0 is the input site of the reservoir and the lowest bit. The
//! Jordan-Wigner string of mode `i` is the parity of all lower bits:
//!
//! ```text
//! c_i |b> = (-1)^{popcount(b & (2^i - 1))} |b ^ 2^i>    if bit i of b is set
//! ```
//!
//! With this convention the partial trace over the input site only pairs
//! neighbouring basis indices `2r` and `2r + 1`.

use faer::{c64, Side};

use crate::dense::{self, CMat, ZERO};
use crate::error::{Error, Result};

/// Largest mode count accepted; dense matrices beyond this are impractical.
pub const MAX_MODES: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FockSpace {
    n_modes: usize,
}

impl FockSpace {
    pub fn new(n_modes: usize) -> Result<Self> {
        if !(2..=MAX_MODES).contains(&n_modes) {
            return Err(Error::InvalidModeCount(n_modes));
        }
        Ok(Self { n_modes })
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn dim(&self) -> usize {
        1 << self.n_modes
    }

    pub fn occupied(&self, basis: usize, site: usize) -> bool {
        basis >> site & 1 == 1
    }

    pub fn check_site(&self, site: usize) -> Result<()> {
        if site >= self.n_modes {
            Err(Error::SiteOutOfRange { site, n_modes: self.n_modes })
        } else {
            Ok(())
        }
    }
}

#[inline]
fn jw_sign(state: usize, site: usize) -> f64 {
    if (state & ((1usize << site) - 1)).count_ones() % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

#[inline]
fn annihilate(site: usize, state: usize) -> Option<(f64, usize)> {
    let mask = 1usize << site;
    (state & mask != 0).then(|| (jw_sign(state, site), state ^ mask))
}

#[inline]
fn create(site: usize, state: usize) -> Option<(f64, usize)> {
    let mask = 1usize << site;
    (state & mask == 0).then(|| (jw_sign(state, site), state | mask))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ladder {
    Create(usize),
    Annihilate(usize),
}

/// Apply a product of ladder operators written left to right, rightmost first.
fn apply_product(ops: &[Ladder], state: usize) -> Option<(f64, usize)> {
    let mut sign = 1.0;
    let mut cur = state;
    for op in ops.iter().rev() {
        let (s, next) = match *op {
            Ladder::Create(i) => create(i, cur)?,
            Ladder::Annihilate(i) => annihilate(i, cur)?,
        };
        sign *= s;
        cur = next;
    }
    Some((sign, cur))
}

/// A fermionic operator product as a signed permutation-like sparse matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseTerm {
    dim: usize,
    /// `(row, col, sign)`: the operator maps basis state `col` to `sign * row`.
    entries: Vec<(u32, u32, f64)>,
}

impl SparseTerm {
    fn from_product(space: &FockSpace, ops: &[Ladder]) -> Self {
        let entries = (0..space.dim())
            .filter_map(|col| apply_product(ops, col).map(|(s, row)| (row as u32, col as u32, s)))
            .collect();
        Self { dim: space.dim(), entries }
    }

    pub fn entries(&self) -> &[(u32, u32, f64)] {
        &self.entries
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    /// `target += coeff * self`.
    pub fn add_scaled_to(&self, coeff: c64, target: &mut CMat) {
        for &(r, c, s) in &self.entries {
            target[(r as usize, c as usize)] += coeff * s;
        }
    }

    pub fn to_dense(&self) -> CMat {
        let mut m = CMat::zeros(self.dim, self.dim);
        self.add_scaled_to(c64::new(1.0, 0.0), &mut m);
        m
    }
}

/// Sparse action of `c†_i c_j`.
pub fn one_body_term(space: &FockSpace, i: usize, j: usize) -> Result<SparseTerm> {
    space.check_site(i)?;
    space.check_site(j)?;
    Ok(SparseTerm::from_product(space, &[Ladder::Create(i), Ladder::Annihilate(j)]))
}

/// Sparse action of `c†_i c†_j c_k c_l`.
pub fn two_body_term(space: &FockSpace, i: usize, j: usize, k: usize, l: usize) -> Result<SparseTerm> {
    for s in [i, j, k, l] {
        space.check_site(s)?;
    }
    Ok(SparseTerm::from_product(
        space,
        &[Ladder::Create(i), Ladder::Create(j), Ladder::Annihilate(k), Ladder::Annihilate(l)],
    ))
}

/// Dense matrix of `c†_i c_j` (0-based sites).
pub fn build_one_body(i: usize, j: usize, space: &FockSpace) -> Result<CMat> {
    Ok(one_body_term(space, i, j)?.to_dense())
}

/// Dense matrix of `c†_i c†_j c_k c_l` (0-based sites); zero when `i == j` or `k == l`.
pub fn build_two_body(i: usize, j: usize, k: usize, l: usize, space: &FockSpace) -> Result<CMat> {
    Ok(two_body_term(space, i, j, k, l)?.to_dense())
}

#[derive(Debug, Clone)]
pub struct HermitianOperator {
    matrix: CMat,
    label: String,
}

impl HermitianOperator {
    /// Relative Hermiticity tolerance accepted at construction.
    pub const TOLERANCE: f64 = 1e-12;

    pub fn new(matrix: CMat, label: impl Into<String>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::DimensionMismatch { expected: matrix.nrows(), found: matrix.ncols() });
        }
        let defect = dense::hermiticity_defect(matrix.as_ref());
        let scale = dense::max_abs(matrix.as_ref());
        if defect > Self::TOLERANCE * scale {
            return Err(Error::NotHermitian { defect });
        }
        Ok(Self { matrix, label: label.into() })
    }

    pub fn matrix(&self) -> &CMat {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMat {
        self.matrix
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Site occupation `n_i = c†_i c_i`.
pub fn site_number(space: &FockSpace, site: usize) -> Result<HermitianOperator> {
    space.check_site(site)?;
    let m = CMat::from_fn(space.dim(), space.dim(), |r, c| {
        if r == c && space.occupied(r, site) {
            c64::new(1.0, 0.0)
        } else {
            ZERO
        }
    });
    HermitianOperator::new(m, format!("n_{}", site + 1))
}

/// Total particle number `Σ_i n_i`.
pub fn total_number(space: &FockSpace) -> HermitianOperator {
    let m = CMat::from_fn(space.dim(), space.dim(), |r, c| {
        if r == c {
            c64::new(r.count_ones() as f64, 0.0)
        } else {
            ZERO
        }
    });
    HermitianOperator { matrix: m, label: "N".into() }
}

/// Basis states of fixed particle number, in ascending Fock-index order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SectorBasis {
    n_modes: usize,
    particles: usize,
    indices: Vec<usize>,
}

impl SectorBasis {
    pub fn new(space: &FockSpace, particles: usize) -> Result<Self> {
        if particles > space.n_modes() {
            return Err(Error::ParticlesOutOfRange { particles, n_modes: space.n_modes() });
        }
        let indices = (0..space.dim()).filter(|b| b.count_ones() as usize == particles).collect();
        Ok(Self { n_modes: space.n_modes(), particles, indices })
    }

    /// Half filling, `⌊N/2⌋` particles.
    pub fn half_filling(space: &FockSpace) -> Self {
        Self::new(space, space.n_modes() / 2).expect("half filling is always in range")
    }

    pub fn particles(&self) -> usize {
        self.particles
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn dim(&self) -> usize {
        self.indices.len()
    }
}

/// Out-of-sector coupling tolerated by [`sector_project`].
pub const SECTOR_TOLERANCE: f64 = 1e-10;

/// Restrict `a` to the rows and columns of `sector`.
pub fn sector_project(a: &CMat, sector: &SectorBasis) -> Result<CMat> {
    let dim = 1usize << sector.n_modes;
    if a.nrows() != dim || a.ncols() != dim {
        return Err(Error::DimensionMismatch { expected: dim, found: a.nrows() });
    }
    let mut worst = 0.0f64;
    for &r in sector.indices() {
        for c in 0..dim {
            if c.count_ones() as usize != sector.particles {
                worst = worst.max(a[(r, c)].norm()).max(a[(c, r)].norm());
            }
        }
    }
    if worst > SECTOR_TOLERANCE {
        return Err(Error::NonBlockDiagonal { magnitude: worst });
    }
    let idx = sector.indices();
    Ok(CMat::from_fn(idx.len(), idx.len(), |i, j| a[(idx[i], idx[j])]))
}

/// Eigenvalues (ascending) and orthonormal eigenvectors (columns).
#[derive(Debug, Clone)]
pub struct EigenSystem {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: CMat,
}

impl EigenSystem {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `Q Λ Q†`.
    pub fn reconstruct(&self) -> CMat {
        let q = &self.eigenvectors;
        let ql = CMat::from_fn(q.nrows(), q.ncols(), |i, j| q[(i, j)] * self.eigenvalues[j]);
        dense::mul(ql.as_ref(), q.adjoint())
    }

    /// `max |Q†Q - I|`.
    pub fn unitarity_defect(&self) -> f64 {
        let q = &self.eigenvectors;
        let g = dense::mul(q.adjoint(), q.as_ref());
        let id = CMat::identity(g.nrows(), g.ncols());
        dense::max_abs_diff(g.as_ref(), id.as_ref())
    }

    pub fn spectral_norm(&self) -> f64 {
        self.eigenvalues.iter().fold(0.0f64, |m, e| m.max(e.abs()))
    }
}

pub(crate) fn eigh_matrix(a: &CMat) -> Result<EigenSystem> {
    let evd = a.self_adjoint_eigen(Side::Lower).map_err(|_| Error::EigenConvergence)?;
    let eigenvalues: Vec<f64> = (0..a.nrows()).map(|i| evd.S().column_vector()[i].re).collect();
    if eigenvalues.iter().any(|e| !e.is_finite()) {
        return Err(Error::EigenConvergence);
    }
    Ok(EigenSystem { eigenvalues, eigenvectors: evd.U().to_owned() })
}

pub(crate) fn eigvalsh_matrix(a: &CMat) -> Result<Vec<f64>> {
    let vals = a.self_adjoint_eigenvalues(Side::Lower).map_err(|_| Error::EigenConvergence)?;
    if vals.iter().any(|e| !e.is_finite()) {
        return Err(Error::EigenConvergence);
    }
    Ok(vals)
}

/// Dense Hermitian eigendecomposition.
pub fn eigh(a: &HermitianOperator) -> Result<EigenSystem> {
    eigh_matrix(&a.matrix)
}

/// Eigendecomposition of a number-conserving operator, one sector block at a
/// time. Every eigenvector lies inside a single particle-number sector.
pub fn eigh_number_conserving(a: &HermitianOperator, space: &FockSpace) -> Result<EigenSystem> {
    let dim = space.dim();
    if a.dim() != dim {
        return Err(Error::DimensionMismatch { expected: dim, found: a.dim() });
    }
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(dim);
    let mut blocks = Vec::with_capacity(space.n_modes() + 1);
    for np in 0..=space.n_modes() {
        let sector = SectorBasis::new(space, np)?;
        let block = sector_project(&a.matrix, &sector)?;
        let es = eigh_matrix(&block)?;
        for (col, &e) in es.eigenvalues.iter().enumerate() {
            pairs.push((e, np, col));
        }
        blocks.push((sector, es));
    }
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut vectors = CMat::zeros(dim, dim);
    for (out_col, &(_, np, col)) in pairs.iter().enumerate() {
        let (sector, es) = &blocks[np];
        for (local, &row) in sector.indices().iter().enumerate() {
            vectors[(row, out_col)] = es.eigenvectors[(local, col)];
        }
    }
    Ok(EigenSystem { eigenvalues: pairs.iter().map(|p| p.0).collect(), eigenvectors: vectors })
}

/// Density matrix on `2^k` basis states.
#[derive(Debug, Clone)]
pub struct DensityMatrix {
    matrix: CMat,
}

impl DensityMatrix {
    pub const TRACE_TOLERANCE: f64 = 1e-9;
    pub const HERMITICITY_TOLERANCE: f64 = 1e-9;

    /// Validates unit trace and Hermiticity; positivity is checked on demand.
    pub fn new(matrix: CMat) -> Result<Self> {
        let n = matrix.nrows();
        if n != matrix.ncols() {
            return Err(Error::DimensionMismatch { expected: n, found: matrix.ncols() });
        }
        if n == 0 || !n.is_power_of_two() {
            return Err(Error::InvalidDensity(format!("dimension {n} is not a power of two")));
        }
        let tr = dense::trace(matrix.as_ref());
        if (tr - c64::new(1.0, 0.0)).norm() > Self::TRACE_TOLERANCE {
            return Err(Error::InvalidDensity(format!("trace {tr}")));
        }
        let defect = dense::hermiticity_defect(matrix.as_ref());
        if defect > Self::HERMITICITY_TOLERANCE {
            return Err(Error::InvalidDensity(format!("Hermiticity defect {defect:e}")));
        }
        Ok(Self { matrix })
    }

    pub(crate) fn from_raw(matrix: CMat) -> Self {
        Self { matrix }
    }

    pub fn basis_state(dim: usize, index: usize) -> Result<Self> {
        if index >= dim {
            return Err(Error::DimensionMismatch { expected: dim, found: index });
        }
        let mut m = CMat::zeros(dim, dim);
        m[(index, index)] = c64::new(1.0, 0.0);
        Self::new(m)
    }

    pub fn maximally_mixed(dim: usize) -> Result<Self> {
        let w = 1.0 / dim as f64;
        Self::new(CMat::from_fn(dim, dim, |i, j| if i == j { c64::new(w, 0.0) } else { ZERO }))
    }

    /// `|ψ><ψ|` for a normalized amplitude vector.
    pub fn pure(amplitudes: &[c64]) -> Result<Self> {
        let n = amplitudes.len();
        Self::new(CMat::from_fn(n, n, |i, j| amplitudes[i] * amplitudes[j].conj()))
    }

    pub fn matrix(&self) -> &CMat {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMat {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_sites(&self) -> usize {
        self.dim().trailing_zeros() as usize
    }

    pub fn trace(&self) -> c64 {
        dense::trace(self.matrix.as_ref())
    }

    pub fn hermiticity_defect(&self) -> f64 {
        dense::hermiticity_defect(self.matrix.as_ref())
    }

    /// `Tr ρ²`.
    pub fn purity(&self) -> f64 {
        let m = &self.matrix;
        let mut acc = 0.0;
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                acc += (m[(i, j)] * m[(j, i)]).re;
            }
        }
        acc
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        let vals = eigvalsh_matrix(&self.matrix)?;
        Ok(vals.first().copied().unwrap_or(0.0))
    }

    pub fn frobenius_distance(&self, other: &DensityMatrix) -> f64 {
        dense::frobenius_distance(self.matrix.as_ref(), other.matrix.as_ref())
    }

    /// `ρ ← (ρ + ρ†)/2`, then rescale to unit trace.
    pub fn rehermitize_and_normalize(&mut self) {
        dense::hermitize(&mut self.matrix);
        let tr = self.trace().re;
        dense::scale(&mut self.matrix, 1.0 / tr);
    }
}

/// `ρ(t) = U ρ U†` with `U = Q e^{-iΛt} Q†`, carried out as a phase
/// multiplication in the eigenbasis.
pub fn evolve(rho: &DensityMatrix, eig: &EigenSystem, t: f64) -> Result<DensityMatrix> {
    let dim = eig.dim();
    if rho.dim() != dim {
        return Err(Error::DimensionMismatch { expected: dim, found: rho.dim() });
    }
    let q = &eig.eigenvectors;
    let tmp = dense::mul(rho.matrix.as_ref(), q.as_ref());
    let mut rt = dense::mul(q.adjoint(), tmp.as_ref());
    let phases: Vec<c64> = eig.eigenvalues.iter().map(|&e| c64::cis(-e * t)).collect();
    for n in 0..dim {
        let pn = phases[n].conj();
        for (m, x) in rt.col_as_slice_mut(n).iter_mut().enumerate() {
            *x *= phases[m] * pn;
        }
    }
    let tmp = dense::mul(q.as_ref(), rt.as_ref());
    Ok(DensityMatrix::from_raw(dense::mul(tmp.as_ref(), q.adjoint())))
}

/// Partial trace over the input site (lowest bit): `σ_{r r'} = ρ_{2r,2r'} + ρ_{2r+1,2r'+1}`.
pub fn partial_trace_site1(rho: &DensityMatrix) -> Result<DensityMatrix> {
    let dim = rho.dim();
    if dim < 2 {
        return Err(Error::InvalidDensity("cannot trace out a site from a scalar".into()));
    }
    let half = dim / 2;
    let m = &rho.matrix;
    Ok(DensityMatrix::from_raw(CMat::from_fn(half, half, |r, c| {
        m[(2 * r, 2 * c)] + m[(2 * r + 1, 2 * c + 1)]
    })))
}

/// `ρ_in ⊗ ρ_rest` with the input site as the lowest bit.
pub fn inject_site1(rho_in: &DensityMatrix, rho_rest: &DensityMatrix) -> Result<DensityMatrix> {
    if rho_in.dim() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, found: rho_in.dim() });
    }
    let a = &rho_in.matrix;
    let s = &rho_rest.matrix;
    let dim = 2 * rho_rest.dim();
    Ok(DensityMatrix::from_raw(CMat::from_fn(dim, dim, |r, c| a[(r & 1, c & 1)] * s[(r >> 1, c >> 1)])))
}

/// `Re Tr(ρ A)`.
pub fn expectation(rho: &DensityMatrix, a: &HermitianOperator) -> Result<f64> {
    if rho.dim() != a.dim() {
        return Err(Error::DimensionMismatch { expected: rho.dim(), found: a.dim() });
    }
    let (r, m) = (&rho.matrix, &a.matrix);
    let mut acc = ZERO;
    for j in 0..r.ncols() {
        for i in 0..r.nrows() {
            acc += r[(i, j)] * m[(j, i)];
        }
    }
    debug_assert!(acc.im.abs() <= 1e-9 * (1.0 + dense::max_abs(m.as_ref())));
    Ok(acc.re)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::max_abs_diff;

    fn c(re: f64, im: f64) -> c64 {
        c64::new(re, im)
    }

    fn diag(values: &[f64]) -> CMat {
        let n = values.len();
        CMat::from_fn(n, n, |i, j| if i == j { c(values[i], 0.0) } else { ZERO })
    }

    #[test]
    fn rejects_bad_sizes_and_sites() {
        assert!(matches!(FockSpace::new(1), Err(Error::InvalidModeCount(1))));
        let s = FockSpace::new(3).unwrap();
        assert!(matches!(build_one_body(3, 0, &s), Err(Error::SiteOutOfRange { site: 3, .. })));
        assert!(build_two_body(0, 1, 2, 5, &s).is_err());
    }

    #[test]
    fn number_operator_site1_is_diag_0101() {
        let s = FockSpace::new(2).unwrap();
        let n1 = build_one_body(0, 0, &s).unwrap();
        assert_eq!(max_abs_diff(n1.as_ref(), diag(&[0.0, 1.0, 0.0, 1.0]).as_ref()), 0.0);
    }

    #[test]
    fn hopping_moves_site2_to_site1_with_plus_sign() {
        // basis order |n1 n2>: |00>, |10>, |01>, |11>
        let s = FockSpace::new(2).unwrap();
        let h = build_one_body(0, 1, &s).unwrap();
        let mut expected = CMat::zeros(4, 4);
        expected[(1, 2)] = c(1.0, 0.0);
        assert_eq!(max_abs_diff(h.as_ref(), expected.as_ref()), 0.0);
    }

    #[test]
    fn one_body_adjoint_symmetry() {
        for n in 2..=4 {
            let s = FockSpace::new(n).unwrap();
            for i in 0..n {
                for j in 0..n {
                    let a = build_one_body(i, j, &s).unwrap();
                    let b = build_one_body(j, i, &s).unwrap();
                    assert_eq!(max_abs_diff(a.adjoint().to_owned().as_ref(), b.as_ref()), 0.0);
                }
            }
        }
    }

    #[test]
    fn two_body_pauli_exclusion_and_pair_density() {
        let s = FockSpace::new(4).unwrap();
        let z = build_two_body(1, 1, 2, 3, &s).unwrap();
        assert_eq!(dense::max_abs(z.as_ref()), 0.0);
        let z = build_two_body(0, 1, 2, 2, &s).unwrap();
        assert_eq!(dense::max_abs(z.as_ref()), 0.0);
        // c†1 c†2 c2 c1 = n1 n2
        let pair = build_two_body(0, 1, 1, 0, &s).unwrap();
        let n1n2 = CMat::from_fn(16, 16, |r, col| {
            if r == col && r & 0b11 == 0b11 {
                c(1.0, 0.0)
            } else {
                ZERO
            }
        });
        assert_eq!(max_abs_diff(pair.as_ref(), n1n2.as_ref()), 0.0);
    }

    #[test]
    fn two_body_commutes_with_total_number() {
        let s = FockSpace::new(4).unwrap();
        let nt = total_number(&s);
        for i in 0..4 {
            for j in 0..4 {
                for k in 0..4 {
                    for l in 0..4 {
                        let t = build_two_body(i, j, k, l, &s).unwrap();
                        let a = dense::mul(t.as_ref(), nt.matrix().as_ref());
                        let b = dense::mul(nt.matrix().as_ref(), t.as_ref());
                        assert_eq!(max_abs_diff(a.as_ref(), b.as_ref()), 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn canonical_anticommutation() {
        // {c_i, c†_j} = δ_ij from the ladder products, N = 3
        let s = FockSpace::new(3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let a = SparseTerm::from_product(&s, &[Ladder::Annihilate(i), Ladder::Create(j)]).to_dense();
                let b = SparseTerm::from_product(&s, &[Ladder::Create(j), Ladder::Annihilate(i)]).to_dense();
                let sum = &a + &b;
                let expected = if i == j { CMat::identity(8, 8) } else { CMat::zeros(8, 8) };
                assert_eq!(max_abs_diff(sum.as_ref(), expected.as_ref()), 0.0);
            }
        }
    }

    #[test]
    fn sector_projection() {
        let s = FockSpace::new(2).unwrap();
        let sector = SectorBasis::new(&s, 1).unwrap();
        let p = sector_project(total_number(&s).matrix(), &sector).unwrap();
        assert_eq!(max_abs_diff(p.as_ref(), diag(&[1.0, 1.0]).as_ref()), 0.0);

        let s8 = FockSpace::new(8).unwrap();
        let half = SectorBasis::half_filling(&s8);
        assert_eq!(half.dim(), 70);
        let p = sector_project(total_number(&s8).matrix(), &half).unwrap();
        assert_eq!((p.nrows(), p.ncols()), (70, 70));
        assert!(half.indices().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn sector_projection_rejects_mixing() {
        let s = FockSpace::new(2).unwrap();
        let sector = SectorBasis::new(&s, 1).unwrap();
        let mix = build_one_body(0, 0, &s).unwrap() + CMat::from_fn(4, 4, |i, j| {
            if (i, j) == (0, 1) || (i, j) == (1, 0) {
                c(0.5, 0.0)
            } else {
                ZERO
            }
        });
        assert!(matches!(sector_project(&mix, &sector), Err(Error::NonBlockDiagonal { .. })));
    }

    #[test]
    fn eigh_small_cases() {
        let es = eigh(&HermitianOperator::new(diag(&[3.0, 1.0, 2.0]), "d").unwrap()).unwrap();
        assert_eq!(es.eigenvalues, vec![1.0, 2.0, 3.0]);
        let x = CMat::from_fn(2, 2, |i, j| if i != j { c(1.0, 0.0) } else { ZERO });
        let es = eigh(&HermitianOperator::new(x, "x").unwrap()).unwrap();
        assert!((es.eigenvalues[0] + 1.0).abs() < 1e-14 && (es.eigenvalues[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn partial_trace_of_product_and_mixed_states() {
        let sigma = DensityMatrix::new(CMat::from_fn(4, 4, |i, j| {
            if i == j {
                c([0.1, 0.2, 0.3, 0.4][i], 0.0)
            } else if (i, j) == (0, 3) {
                c(0.05, 0.02)
            } else if (i, j) == (3, 0) {
                c(0.05, -0.02)
            } else {
                ZERO
            }
        }))
        .unwrap();
        let zero = DensityMatrix::basis_state(2, 0).unwrap();
        let joint = inject_site1(&zero, &sigma).unwrap();
        let back = partial_trace_site1(&joint).unwrap();
        assert_eq!(max_abs_diff(back.matrix().as_ref(), sigma.matrix().as_ref()), 0.0);

        let mm = DensityMatrix::maximally_mixed(16).unwrap();
        let red = partial_trace_site1(&mm).unwrap();
        let target = DensityMatrix::maximally_mixed(8).unwrap();
        assert!(max_abs_diff(red.matrix().as_ref(), target.matrix().as_ref()) < 1e-15);
    }

    #[test]
    fn inject_basis_states() {
        let one = DensityMatrix::basis_state(2, 1).unwrap();
        let vac = DensityMatrix::basis_state(8, 0).unwrap();
        let j = inject_site1(&one, &vac).unwrap();
        let expected = DensityMatrix::basis_state(16, 1).unwrap();
        assert_eq!(max_abs_diff(j.matrix().as_ref(), expected.matrix().as_ref()), 0.0);
        assert!((j.trace().re - 1.0).abs() < 1e-15);
    }

    #[test]
    fn expectation_of_basis_state() {
        let s = FockSpace::new(4).unwrap();
        // |1010> : sites 1 and 3 occupied -> bits 0 and 2
        let rho = DensityMatrix::basis_state(16, 0b0101).unwrap();
        assert_eq!(expectation(&rho, &site_number(&s, 0).unwrap()).unwrap(), 1.0);
        assert_eq!(expectation(&rho, &site_number(&s, 1).unwrap()).unwrap(), 0.0);
        let id = HermitianOperator::new(CMat::identity(16, 16), "1").unwrap();
        assert_eq!(expectation(&rho, &id).unwrap(), 1.0);
        assert!(expectation(&rho, &site_number(&FockSpace::new(2).unwrap(), 0).unwrap()).is_err());
    }

    #[test]
    fn density_validation() {
        assert!(DensityMatrix::new(CMat::identity(2, 2)).is_err());
        assert!(DensityMatrix::new(dense::scaled(CMat::identity(3, 3).as_ref(), c(1.0 / 3.0, 0.0))).is_err());
        let mut m = dense::scaled(CMat::identity(2, 2).as_ref(), c(0.5, 0.0));
        m[(0, 1)] = c(0.1, 0.0);
        assert!(DensityMatrix::new(m).is_err());
    }

    #[test]
    fn evolve_trivial_cases() {
        let h = HermitianOperator::new(diag(&[0.3, -1.0, 2.0, 0.5]), "h").unwrap();
        let es = eigh(&h).unwrap();
        let rho = DensityMatrix::new(CMat::from_fn(4, 4, |i, j| {
            if i == j {
                c(0.25, 0.0)
            } else if i < j {
                c(0.01 * (i + j) as f64, 0.02)
            } else {
                c(0.01 * (i + j) as f64, -0.02)
            }
        }))
        .unwrap();
        let same = evolve(&rho, &es, 0.0).unwrap();
        assert!(max_abs_diff(same.matrix().as_ref(), rho.matrix().as_ref()) < 1e-15);
        // diagonal in the eigenbasis stays put
        let d = DensityMatrix::new(diag(&[0.1, 0.2, 0.3, 0.4])).unwrap();
        let later = evolve(&d, &es, 17.3).unwrap();
        assert!(max_abs_diff(later.matrix().as_ref(), d.matrix().as_ref()) < 1e-15);
    }
}
