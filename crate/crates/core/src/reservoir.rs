//! The reservoir map: inject the encoded input on site 1, evolve, and read
//! all site occupations at `V` virtual nodes per input interval.
//!
//! For a fixed propagator the state is kept in the propagator's eigenbasis,
//! where each substep is an elementwise phase multiply and only the
//! injection needs dense products. A Haar reservoir that redraws its unitary
//! every step is evolved directly in the computational basis.

use std::io::Write;

use faer::c64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dense::{self, mul_add_into, mul_into, CMat, ONE};
use crate::ensembles::sample_haar_unitary;
use crate::error::{Error, Result};
use crate::hilbert::{eigh_number_conserving, eigvalsh_matrix, site_number, DensityMatrix, EigenSystem, FockSpace, HermitianOperator};

pub const DEFAULT_VIRTUAL_NODES: usize = 10;
/// Steps between positivity spot checks.
pub const POSITIVITY_CHECK_INTERVAL: usize = 100;

fn default_virtual_nodes() -> usize {
    DEFAULT_VIRTUAL_NODES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReservoirConfig {
    pub dt_in: f64,
    #[serde(default = "default_virtual_nodes")]
    pub virtual_nodes: usize,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub haar_redraw_per_step: bool,
}

impl ReservoirConfig {
    pub fn new(dt_in: f64) -> Self {
        Self { dt_in, virtual_nodes: DEFAULT_VIRTUAL_NODES, noise_sigma: 0.0, haar_redraw_per_step: false }
    }

    pub fn with_noise(mut self, sigma: f64) -> Self {
        self.noise_sigma = sigma;
        self
    }

    pub fn with_virtual_nodes(mut self, v: usize) -> Self {
        self.virtual_nodes = v;
        self
    }

    pub fn substep(&self) -> f64 {
        self.dt_in / self.virtual_nodes as f64
    }

    fn validate(&self, hamiltonian: bool) -> Result<()> {
        if self.virtual_nodes == 0 {
            return Err(Error::InvalidReservoir("need at least one virtual node".into()));
        }
        if hamiltonian && !(self.dt_in > 0.0 && self.dt_in.is_finite()) {
            return Err(Error::InvalidReservoir(format!("dt_in must be positive, got {}", self.dt_in)));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidReservoir(format!("noise sigma must be >= 0, got {}", self.noise_sigma)));
        }
        Ok(())
    }
}

/// What drives the reservoir between injections.
#[derive(Debug, Clone)]
pub enum Backend {
    /// Continuous evolution under a Hamiltonian given by its eigensystem.
    Hamiltonian(EigenSystem),
    /// A Haar unitary applied once per virtual substep. `seed` feeds the
    /// redraws when `haar_redraw_per_step` is set.
    Haar { unitary: CMat, seed: u64 },
}

/// `|ψ⟩⟨ψ|` with `|ψ⟩ = √(1-u)|0⟩ + √u|1⟩`.
pub fn encode_input(u: f64) -> Result<DensityMatrix> {
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::InputOutOfRange(u));
    }
    DensityMatrix::pure(&[c64::new((1.0 - u).sqrt(), 0.0), c64::new(u.sqrt(), 0.0)])
}

fn encode_block(u: f64) -> Result<[[c64; 2]; 2]> {
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::InputOutOfRange(u));
    }
    let off = ((1.0 - u) * u).sqrt();
    Ok([[c64::new(1.0 - u, 0.0), c64::new(off, 0.0)], [c64::new(off, 0.0), c64::new(u, 0.0)]])
}

pub type FeatureVector = Vec<f64>;

/// Row-major `steps × (N·V + 1)` feature matrix. Column `(v-1)·N + i`
/// holds site `i` at virtual node `v`; the last column is the constant 1.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n_sites: usize,
    virtual_nodes: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(n_sites: usize, virtual_nodes: usize) -> Self {
        Self { n_sites, virtual_nodes, data: Vec::new() }
    }

    pub fn with_capacity(n_sites: usize, virtual_nodes: usize, rows: usize) -> Self {
        Self { n_sites, virtual_nodes, data: Vec::with_capacity(rows * (n_sites * virtual_nodes + 1)) }
    }

    pub fn n_cols(&self) -> usize {
        self.n_sites * self.virtual_nodes + 1
    }

    pub fn n_rows(&self) -> usize {
        self.data.len() / self.n_cols()
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn virtual_nodes(&self) -> usize {
        self.virtual_nodes
    }

    pub fn row(&self, k: usize) -> &[f64] {
        let c = self.n_cols();
        &self.data[k * c..(k + 1) * c]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n_cols())
    }

    pub fn push_row(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.n_cols(), "feature row length");
        self.data.extend_from_slice(row);
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Feature of `site` at virtual node `v` (1-based) in row `k`.
    pub fn occupation(&self, k: usize, v: usize, site: usize) -> f64 {
        self.row(k)[(v - 1) * self.n_sites + site]
    }
}

/// Numerical health of the injected states over a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HygieneReport {
    pub steps: usize,
    /// Largest `|Tr ρ - 1|` right after injection, before renormalization.
    pub max_trace_defect: f64,
    /// Largest `max|ρ - ρ†|` right after injection, before re-Hermitization.
    pub max_hermiticity_defect: f64,
    /// Smallest eigenvalue seen at the spot checks (`+∞` if none ran).
    pub min_spot_eigenvalue: f64,
    pub spot_checks: usize,
}

impl Default for HygieneReport {
    fn default() -> Self {
        Self { steps: 0, max_trace_defect: 0.0, max_hermiticity_defect: 0.0, min_spot_eigenvalue: f64::INFINITY, spot_checks: 0 }
    }
}

impl HygieneReport {
    pub fn within(&self, trace_tol: f64, hermiticity_tol: f64, positivity_tol: f64) -> bool {
        self.max_trace_defect <= trace_tol
            && self.max_hermiticity_defect <= hermiticity_tol
            && (self.spot_checks == 0 || self.min_spot_eigenvalue >= -positivity_tol)
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub features: FeatureMatrix,
    pub final_state: DensityMatrix,
    pub inputs_consumed: usize,
    pub hygiene: HygieneReport,
}

/// One row of the readout-trace dump. `site` is 0-based here.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub step: usize,
    pub v: usize,
    pub t: f64,
    pub site: usize,
    pub occupation: f64,
}

/// CSV with columns `k,v,t,site,occupation`; sites are labelled from 1.
pub fn write_trace_csv<W: Write>(rows: &[TraceRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["k", "v", "t", "site", "occupation"])?;
    for r in rows {
        w.write_record([r.step.to_string(), r.v.to_string(), r.t.to_string(), (r.site + 1).to_string(), r.occupation.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `n + ε` with `ε ~ N(0, σ² n(1-n))`. Always consumes one normal draw.
#[inline]
pub fn noisy_occupation<R: Rng + ?Sized>(n: f64, sigma: f64, rng: &mut R) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    let var = (n * (1.0 - n)).max(0.0);
    n + sigma * var.sqrt() * z
}

fn add_noise_to_row<R: Rng + ?Sized>(row: &mut [f64], sigma: f64, rng: &mut R) {
    let last = row.len() - 1;
    for x in &mut row[..last] {
        *x = noisy_occupation(*x, sigma, rng);
    }
}

/// Noisy copy of a noiseless feature matrix. Draws in the same order as
/// per-step noise in [`Reservoir::run_sequence`], so both agree bit for bit
/// for the same noise generator.
pub fn apply_measurement_noise<R: Rng + ?Sized>(features: &FeatureMatrix, sigma: f64, rng: &mut R) -> FeatureMatrix {
    let mut out = features.clone();
    let c = out.n_cols();
    for row in out.data.chunks_exact_mut(c) {
        add_noise_to_row(row, sigma, rng);
    }
    out
}

#[derive(Debug, Clone)]
struct EigenEngine {
    q: CMat,
    /// Rows of `q` whose site-1 bit is `s`, and their adjoints.
    q_rows: [CMat; 2],
    q_rows_adj: [CMat; 2],
    /// Elementwise factor `d_m conj(d_n)` for one substep.
    phase: CMat,
    /// Conjugated site-number operators in the eigenbasis.
    numbers_conj: Vec<CMat>,
    scratch_t: CMat,
    scratch_sigma: CMat,
    scratch_y: [CMat; 2],
}

impl EigenEngine {
    fn new(q: CMat, substep_phases: &[c64], n_sites: usize) -> Result<Self> {
        let dim = q.nrows();
        let half = dim / 2;
        let q_rows: [CMat; 2] = std::array::from_fn(|s| CMat::from_fn(half, dim, |r, c| q[(2 * r + s, c)]));
        let q_rows_adj: [CMat; 2] = std::array::from_fn(|s| q_rows[s].adjoint().to_owned());
        let phase = CMat::from_fn(dim, dim, |m, n| substep_phases[m] * substep_phases[n].conj());
        let space = FockSpace::new(n_sites)?;
        let mut numbers_conj = Vec::with_capacity(n_sites);
        for i in 0..n_sites {
            let n = site_number(&space, i)?;
            let t = dense::mul(q.adjoint(), n.matrix().as_ref());
            let nt = dense::mul(t.as_ref(), q.as_ref());
            numbers_conj.push(CMat::from_fn(dim, dim, |a, b| nt[(a, b)].conj()));
        }
        Ok(Self {
            scratch_t: CMat::zeros(half, dim),
            scratch_sigma: CMat::zeros(half, half),
            scratch_y: [CMat::zeros(half, dim), CMat::zeros(half, dim)],
            q,
            q_rows,
            q_rows_adj,
            phase,
            numbers_conj,
        })
    }

    fn to_internal(&self, rho: &CMat) -> CMat {
        let t = dense::mul(self.q.adjoint(), rho.as_ref());
        dense::mul(t.as_ref(), self.q.as_ref())
    }

    fn to_external(&self, rho: &CMat) -> CMat {
        let t = dense::mul(self.q.as_ref(), rho.as_ref());
        dense::mul(t.as_ref(), self.q.adjoint())
    }

    fn inject(&mut self, rho: &mut CMat, a: &[[c64; 2]; 2]) {
        for s in 0..2 {
            mul_into(self.scratch_t.as_mut(), self.q_rows[s].as_ref(), rho.as_ref());
            if s == 0 {
                mul_into(self.scratch_sigma.as_mut(), self.scratch_t.as_ref(), self.q_rows_adj[0].as_ref());
            } else {
                mul_add_into(self.scratch_sigma.as_mut(), self.scratch_t.as_ref(), self.q_rows_adj[1].as_ref());
            }
        }
        for s in 0..2 {
            mul_into(self.scratch_y[s].as_mut(), self.scratch_sigma.as_ref(), self.q_rows[s].as_ref());
        }
        for s in 0..2 {
            // W_s = a[s][0] Y_0 + a[s][1] Y_1, stored in scratch_t
            let (y0, y1) = (&self.scratch_y[0], &self.scratch_y[1]);
            let (a0, a1) = (a[s][0], a[s][1]);
            self.scratch_t = CMat::from_fn(y0.nrows(), y0.ncols(), |i, j| a0 * y0[(i, j)] + a1 * y1[(i, j)]);
            if s == 0 {
                mul_into(rho.as_mut(), self.q_rows_adj[0].as_ref(), self.scratch_t.as_ref());
            } else {
                mul_add_into(rho.as_mut(), self.q_rows_adj[1].as_ref(), self.scratch_t.as_ref());
            }
        }
    }

    fn substep(&self, rho: &mut CMat) {
        let d = rho.nrows();
        for j in 0..d {
            let p = self.phase.col_as_slice(j);
            for (x, f) in rho.col_as_slice_mut(j).iter_mut().zip(p) {
                *x *= *f;
            }
        }
    }

    fn read(&self, rho: &CMat, out: &mut [f64]) {
        let d = rho.nrows();
        for (o, nc) in out.iter_mut().zip(&self.numbers_conj) {
            let mut acc = 0.0;
            for j in 0..d {
                for (x, y) in rho.col_as_slice(j).iter().zip(nc.col_as_slice(j)) {
                    acc += x.re * y.re - x.im * y.im;
                }
            }
            *o = acc;
        }
    }
}

#[derive(Debug, Clone)]
struct DirectEngine {
    u: CMat,
    u_adj: CMat,
    redraw: Option<ChaCha8Rng>,
    scratch: CMat,
}

impl DirectEngine {
    fn inject(&mut self, rho: &mut CMat, a: &[[c64; 2]; 2]) {
        let half = rho.nrows() / 2;
        let sigma = CMat::from_fn(half, half, |r, c| rho[(2 * r, 2 * c)] + rho[(2 * r + 1, 2 * c + 1)]);
        *rho = CMat::from_fn(2 * half, 2 * half, |r, c| a[r & 1][c & 1] * sigma[(r >> 1, c >> 1)]);
        if let Some(rng) = self.redraw.as_mut() {
            self.u = sample_haar_unitary(2 * half, rng);
            self.u_adj = self.u.adjoint().to_owned();
        }
    }

    fn substep(&mut self, rho: &mut CMat) {
        mul_into(self.scratch.as_mut(), self.u.as_ref(), rho.as_ref());
        mul_into(rho.as_mut(), self.scratch.as_ref(), self.u_adj.as_ref());
    }

    fn read(&self, rho: &CMat, out: &mut [f64]) {
        out.fill(0.0);
        for b in 0..rho.nrows() {
            let p = rho[(b, b)].re;
            for (i, o) in out.iter_mut().enumerate() {
                if (b >> i) & 1 == 1 {
                    *o += p;
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
enum Engine {
    Eigen(Box<EigenEngine>),
    Direct(Box<DirectEngine>),
}

/// A driven reservoir with its propagator prepared for repeated stepping.
#[derive(Debug, Clone)]
pub struct Reservoir {
    cfg: ReservoirConfig,
    n_sites: usize,
    engine: Engine,
}

impl Reservoir {
    pub fn new(cfg: ReservoirConfig, n_sites: usize, backend: Backend) -> Result<Self> {
        let space = FockSpace::new(n_sites)?;
        let dim = space.dim();
        let engine = match backend {
            Backend::Hamiltonian(eig) => {
                cfg.validate(true)?;
                if eig.dim() != dim {
                    return Err(Error::DimensionMismatch { expected: dim, found: eig.dim() });
                }
                let dt = cfg.substep();
                let phases: Vec<c64> = eig.eigenvalues.iter().map(|&e| c64::cis(-e * dt)).collect();
                Engine::Eigen(Box::new(EigenEngine::new(eig.eigenvectors, &phases, n_sites)?))
            }
            Backend::Haar { unitary, seed } => {
                cfg.validate(false)?;
                if unitary.nrows() != dim || unitary.ncols() != dim {
                    return Err(Error::DimensionMismatch { expected: dim, found: unitary.nrows() });
                }
                if cfg.haar_redraw_per_step {
                    Engine::Direct(Box::new(DirectEngine {
                        u_adj: unitary.adjoint().to_owned(),
                        u: unitary,
                        redraw: Some(ChaCha8Rng::seed_from_u64(seed)),
                        scratch: CMat::zeros(dim, dim),
                    }))
                } else {
                    match diagonalize_unitary(&unitary) {
                        Some((q, lambda)) => Engine::Eigen(Box::new(EigenEngine::new(q, &lambda, n_sites)?)),
                        None => Engine::Direct(Box::new(DirectEngine {
                            u_adj: unitary.adjoint().to_owned(),
                            u: unitary,
                            redraw: None,
                            scratch: CMat::zeros(dim, dim),
                        })),
                    }
                }
            }
        };
        Ok(Self { cfg, n_sites, engine })
    }

    /// Hamiltonian reservoir; diagonalizes `h` sector by sector.
    pub fn from_hamiltonian(cfg: ReservoirConfig, h: &HermitianOperator, space: &FockSpace) -> Result<Self> {
        let eig = eigh_number_conserving(h, space)?;
        Self::new(cfg, space.n_modes(), Backend::Hamiltonian(eig))
    }

    /// Haar reservoir with a unitary drawn from `rng`.
    pub fn haar<R: Rng + ?Sized>(cfg: ReservoirConfig, n_sites: usize, rng: &mut R) -> Result<Self> {
        let space = FockSpace::new(n_sites)?;
        let unitary = sample_haar_unitary(space.dim(), rng);
        let seed = rng.random();
        Self::new(cfg, n_sites, Backend::Haar { unitary, seed })
    }

    pub fn config(&self) -> &ReservoirConfig {
        &self.cfg
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn n_features(&self) -> usize {
        self.n_sites * self.cfg.virtual_nodes + 1
    }

    fn check_state(&self, rho: &DensityMatrix) -> Result<()> {
        if rho.n_sites() != self.n_sites {
            return Err(Error::DimensionMismatch { expected: 1 << self.n_sites, found: rho.dim() });
        }
        Ok(())
    }

    fn to_internal(&self, rho: &DensityMatrix) -> CMat {
        match &self.engine {
            Engine::Eigen(e) => e.to_internal(rho.matrix()),
            Engine::Direct(_) => rho.matrix().clone(),
        }
    }

    fn to_external(&self, rho: &CMat) -> DensityMatrix {
        match &self.engine {
            Engine::Eigen(e) => DensityMatrix::from_raw(e.to_external(rho)),
            Engine::Direct(_) => DensityMatrix::from_raw(rho.clone()),
        }
    }

    /// Inject `u`, tidy the state, and record its health.
    fn inject(&mut self, rho: &mut CMat, u: f64, hygiene: &mut HygieneReport) -> Result<()> {
        let a = encode_block(u)?;
        match &mut self.engine {
            Engine::Eigen(e) => e.inject(rho, &a),
            Engine::Direct(e) => e.inject(rho, &a),
        }
        let tr = dense::trace(rho.as_ref());
        hygiene.max_trace_defect = hygiene.max_trace_defect.max((tr - ONE).norm());
        hygiene.max_hermiticity_defect = hygiene.max_hermiticity_defect.max(dense::hermiticity_defect(rho.as_ref()));
        dense::hermitize(rho);
        let tr = dense::trace(rho.as_ref()).re;
        dense::scale(rho, 1.0 / tr);
        if hygiene.steps % POSITIVITY_CHECK_INTERVAL == 0 {
            let min = eigvalsh_matrix(rho)?.first().copied().unwrap_or(0.0);
            hygiene.min_spot_eigenvalue = hygiene.min_spot_eigenvalue.min(min);
            hygiene.spot_checks += 1;
        }
        hygiene.steps += 1;
        Ok(())
    }

    fn substep(&mut self, rho: &mut CMat) {
        match &mut self.engine {
            Engine::Eigen(e) => e.substep(rho),
            Engine::Direct(e) => e.substep(rho),
        }
    }

    fn read(&self, rho: &CMat, out: &mut [f64]) {
        match &self.engine {
            Engine::Eigen(e) => e.read(rho, out),
            Engine::Direct(e) => e.read(rho, out),
        }
    }

    /// One input step: inject, evolve through the `V` substeps recording
    /// occupations, append the bias entry. Noise touches features only.
    fn advance(&mut self, rho: &mut CMat, u: f64, row: &mut [f64], hygiene: &mut HygieneReport) -> Result<()> {
        self.inject(rho, u, hygiene)?;
        let n = self.n_sites;
        for v in 0..self.cfg.virtual_nodes {
            self.substep(rho);
            self.read(rho, &mut row[v * n..(v + 1) * n]);
        }
        *row.last_mut().expect("non-empty row") = 1.0;
        Ok(())
    }

    /// Single step from a computational-basis state.
    pub fn step<R: Rng + ?Sized>(&mut self, state: &DensityMatrix, u: f64, noise_rng: &mut R) -> Result<(DensityMatrix, FeatureVector)> {
        self.check_state(state)?;
        let mut rho = self.to_internal(state);
        let mut row = vec![0.0; self.n_features()];
        self.advance(&mut rho, u, &mut row, &mut HygieneReport::default())?;
        if self.cfg.noise_sigma > 0.0 {
            add_noise_to_row(&mut row, self.cfg.noise_sigma, noise_rng);
        }
        Ok((self.to_external(&rho), row))
    }

    /// Drive the reservoir with `inputs` from `initial`.
    pub fn run_sequence<R: Rng + ?Sized>(&mut self, inputs: &[f64], initial: &DensityMatrix, noise_rng: &mut R) -> Result<Trajectory> {
        if inputs.is_empty() {
            return Err(Error::InvalidReservoir("empty input sequence".into()));
        }
        self.check_state(initial)?;
        let mut rho = self.to_internal(initial);
        let mut features = FeatureMatrix::with_capacity(self.n_sites, self.cfg.virtual_nodes, inputs.len());
        let mut row = vec![0.0; self.n_features()];
        let mut hygiene = HygieneReport::default();
        let sigma = self.cfg.noise_sigma;
        for &u in inputs {
            self.advance(&mut rho, u, &mut row, &mut hygiene)?;
            if sigma > 0.0 {
                add_noise_to_row(&mut row, sigma, noise_rng);
            }
            features.push_row(&row);
        }
        Ok(Trajectory { features, final_state: self.to_external(&rho), inputs_consumed: inputs.len(), hygiene })
    }

    /// Frobenius distance between two trajectories driven by the same inputs,
    /// recorded after every step.
    pub fn esp_distance_series(&mut self, inputs: &[f64], a0: &DensityMatrix, b0: &DensityMatrix) -> Result<Vec<f64>> {
        self.check_state(a0)?;
        self.check_state(b0)?;
        // the Frobenius norm is unitarily invariant, so internal states suffice
        let mut a = self.to_internal(a0);
        let mut b = self.to_internal(b0);
        let mut row = vec![0.0; self.n_features()];
        let mut hygiene = HygieneReport::default();
        let mut out = Vec::with_capacity(inputs.len());
        for &u in inputs {
            // a redrawing Haar reservoir must apply the same unitaries to both
            let before = self.engine.clone();
            self.advance(&mut a, u, &mut row, &mut hygiene)?;
            let after = std::mem::replace(&mut self.engine, before);
            self.advance(&mut b, u, &mut row, &mut hygiene)?;
            self.engine = after;
            out.push(dense::frobenius_distance(a.as_ref(), b.as_ref()));
        }
        Ok(out)
    }

    /// Occupations at `v = 0…V` for every step; `v = 0` is the state right
    /// after injection.
    pub fn readout_trace(&mut self, inputs: &[f64], initial: &DensityMatrix) -> Result<Vec<TraceRow>> {
        self.check_state(initial)?;
        let mut rho = self.to_internal(initial);
        let n = self.n_sites;
        let vn = self.cfg.virtual_nodes;
        let dt = self.cfg.substep();
        let mut occ = vec![0.0; n];
        let mut hygiene = HygieneReport::default();
        let mut rows = Vec::with_capacity(inputs.len() * (vn + 1) * n);
        for (k, &u) in inputs.iter().enumerate() {
            self.inject(&mut rho, u, &mut hygiene)?;
            for v in 0..=vn {
                if v > 0 {
                    self.substep(&mut rho);
                }
                self.read(&rho, &mut occ);
                let t = k as f64 * self.cfg.dt_in + v as f64 * dt;
                rows.extend(occ.iter().enumerate().map(|(site, &occupation)| TraceRow { step: k, v, t, site, occupation }));
            }
        }
        Ok(rows)
    }
}

/// Eigenbasis of a unitary with the basis made exactly orthonormal.
/// `None` if the reconstruction is not accurate enough.
fn diagonalize_unitary(u: &CMat) -> Option<(CMat, Vec<c64>)> {
    let evd = u.eigen().ok()?;
    let w = evd.U().to_owned();
    let lambda: Vec<c64> = (0..u.nrows()).map(|i| evd.S().column_vector()[i]).collect();
    let q = w.qr().compute_Q();
    let dim = u.nrows();
    let ql = CMat::from_fn(dim, dim, |i, j| q[(i, j)] * lambda[j]);
    let rebuilt = dense::mul(ql.as_ref(), q.adjoint());
    (dense::max_abs_diff(rebuilt.as_ref(), u.as_ref()) <= 1e-11).then_some((q, lambda))
}

/// Convenience for the common zero-input state `|0…0⟩⟨0…0|`.
pub fn vacuum(n_sites: usize) -> Result<DensityMatrix> {
    DensityMatrix::basis_state(1 << n_sites, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensembles::{assemble_hamiltonian, sample_random_density, CouplingSet, ModelSpec, Support};
    use crate::hilbert::{eigh, evolve, expectation, inject_site1, partial_trace_site1, SectorBasis};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn syk_reservoir(n: usize, kappa2: f64, dt: f64, seed: u64) -> Reservoir {
        let spec = ModelSpec::new(n, 1.0, kappa2).with_seed(seed);
        let space = FockSpace::new(n).unwrap();
        let c = CouplingSet::from_spec(&spec).unwrap();
        let h = assemble_hamiltonian(&c, &spec, &space).unwrap();
        Reservoir::from_hamiltonian(ReservoirConfig::new(dt), &h.operator, &space).unwrap()
    }

    #[test]
    fn encoding_examples() {
        let m = encode_input(0.0).unwrap();
        assert_eq!(m.matrix()[(0, 0)].re, 1.0);
        assert_eq!(m.matrix()[(1, 1)].re, 0.0);
        let m = encode_input(1.0).unwrap();
        assert_eq!(m.matrix()[(1, 1)].re, 1.0);
        assert!(encode_input(0.5).unwrap().matrix().col_iter().flat_map(|c| c.iter().copied().collect::<Vec<_>>()).all(|x| (x.re - 0.5).abs() < 1e-15));
        assert!(encode_input(1.2).is_err());
        assert!(encode_input(-0.1).is_err());
        let u = 0.37;
        assert!((encode_input(u).unwrap().matrix()[(1, 1)].re - u).abs() < 1e-15);
    }

    #[test]
    fn zero_hamiltonian_holds_injected_occupation() {
        let n = 3;
        let eig = eigh(&HermitianOperator::new(CMat::zeros(8, 8), "0").unwrap()).unwrap();
        let mut r = Reservoir::new(ReservoirConfig::new(1.0), n, Backend::Hamiltonian(eig)).unwrap();
        let init = vacuum(n).unwrap();
        let inputs = [0.2, 0.9, 0.5];
        let t = r.run_sequence(&inputs, &init, &mut rng(0)).unwrap();
        assert_eq!(t.features.n_rows(), 3);
        for (k, &u) in inputs.iter().enumerate() {
            for v in 1..=10 {
                assert!((t.features.occupation(k, v, 0) - u).abs() < 1e-12);
                assert!(t.features.occupation(k, v, 1).abs() < 1e-12);
            }
            assert_eq!(*t.features.row(k).last().unwrap(), 1.0);
        }
    }

    #[test]
    fn step_matches_dense_reference_path() {
        // reference: explicit injection, evolution by the eigensystem in the
        // computational basis, expectation values of site-number operators
        let n = 4;
        let spec = ModelSpec::new(n, 1.0, 0.5).with_seed(3);
        let space = FockSpace::new(n).unwrap();
        let h = assemble_hamiltonian(&CouplingSet::from_spec(&spec).unwrap(), &spec, &space).unwrap();
        let eig = eigh(&h.operator).unwrap();
        let cfg = ReservoirConfig::new(0.7).with_virtual_nodes(3);
        let mut r = Reservoir::new(cfg.clone(), n, Backend::Hamiltonian(eig.clone())).unwrap();
        let mut state = sample_random_density(Support::Full(space), &mut rng(1)).unwrap();
        let numbers: Vec<_> = (0..n).map(|i| site_number(&space, i).unwrap()).collect();
        for (k, &u) in [0.1, 0.8, 0.45, 0.0, 1.0].iter().enumerate() {
            let (next, feats) = r.step(&state, u, &mut rng(9)).unwrap();
            let mut rho = inject_site1(&encode_input(u).unwrap(), &partial_trace_site1(&state).unwrap()).unwrap();
            for v in 1..=3 {
                rho = evolve(&rho, &eig, cfg.substep()).unwrap();
                for i in 0..n {
                    let want = expectation(&rho, &numbers[i]).unwrap();
                    assert!((feats[(v - 1) * n + i] - want).abs() < 1e-11, "step {k} v {v} site {i}");
                }
            }
            assert!(dense::max_abs_diff(next.matrix().as_ref(), rho.matrix().as_ref()) < 1e-11);
            state = next;
        }
    }

    #[test]
    fn haar_paths_agree() {
        let n = 3;
        let mut g = rng(5);
        let u = sample_haar_unitary(8, &mut g);
        let cfg = ReservoirConfig::new(1.0).with_virtual_nodes(4);
        let mut fast = Reservoir::new(cfg.clone(), n, Backend::Haar { unitary: u.clone(), seed: 0 }).unwrap();
        assert!(matches!(fast.engine, Engine::Eigen(_)));
        let mut slow = Reservoir {
            cfg: cfg.clone(),
            n_sites: n,
            engine: Engine::Direct(Box::new(DirectEngine { u_adj: u.adjoint().to_owned(), u, redraw: None, scratch: CMat::zeros(8, 8) })),
        };
        let inputs: Vec<f64> = (0..50).map(|_| g.random()).collect();
        let init = sample_random_density(Support::Full(FockSpace::new(n).unwrap()), &mut g).unwrap();
        let a = fast.run_sequence(&inputs, &init, &mut rng(0)).unwrap();
        let b = slow.run_sequence(&inputs, &init, &mut rng(0)).unwrap();
        for (x, y) in a.features.as_slice().iter().zip(b.features.as_slice()) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn redrawing_haar_runs_and_is_deterministic() {
        let mut cfg = ReservoirConfig::new(1.0);
        cfg.haar_redraw_per_step = true;
        let run = || {
            let mut r = Reservoir::haar(cfg.clone(), 3, &mut rng(8)).unwrap();
            r.run_sequence(&[0.3, 0.6, 0.9], &vacuum(3).unwrap(), &mut rng(1)).unwrap().features
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn run_is_deterministic_and_sized() {
        let mut r = syk_reservoir(4, 0.0, 2.0, 1);
        let inputs: Vec<f64> = (0..40).map(|k| (k as f64 * 0.37).fract()).collect();
        let init = vacuum(4).unwrap();
        let a = r.clone().run_sequence(&inputs, &init, &mut rng(4)).unwrap();
        let b = r.run_sequence(&inputs, &init, &mut rng(4)).unwrap();
        assert_eq!(a.features, b.features);
        assert_eq!(a.features.n_rows(), 40);
        assert_eq!(a.features.n_cols(), 41);
        assert!(a.features.as_slice().iter().all(|&x| (-1e-12..=1.0 + 1e-12).contains(&x)));
        assert!(a.hygiene.within(1e-9, 1e-9, 1e-8));
        assert!((a.final_state.trace().re - 1.0).abs() < 1e-9);
    }

    #[test]
    fn post_hoc_noise_equals_per_step_noise() {
        let mut clean = syk_reservoir(3, 0.0, 1.0, 2);
        let mut noisy = clean.clone();
        noisy.cfg.noise_sigma = 1e-2;
        let inputs = [0.1, 0.5, 0.9, 0.3];
        let init = vacuum(3).unwrap();
        let t_clean = clean.run_sequence(&inputs, &init, &mut rng(0)).unwrap();
        let t_noisy = noisy.run_sequence(&inputs, &init, &mut rng(77)).unwrap();
        let post = apply_measurement_noise(&t_clean.features, 1e-2, &mut rng(77));
        assert_eq!(post, t_noisy.features);
        assert!(t_noisy.features.rows().all(|r| r.last() == Some(&1.0)));
    }

    #[test]
    fn noise_variance_matches_model() {
        let (n, sigma) = (0.3, 1e-2);
        let mut g = rng(10);
        let eps: Vec<f64> = (0..10_000).map(|_| noisy_occupation(n, sigma, &mut g) - n).collect();
        let var = crate::stats::sample_std(&eps).powi(2);
        let want = sigma * sigma * n * (1.0 - n);
        assert!((var / want - 1.0).abs() < 0.1, "{var} vs {want}");
        assert_eq!(noisy_occupation(1.0, sigma, &mut g), 1.0);
    }

    #[test]
    fn identical_pair_has_zero_distance() {
        let mut r = syk_reservoir(4, 0.0, 1.0, 3);
        let half = SectorBasis::half_filling(&FockSpace::new(4).unwrap());
        let a = sample_random_density(Support::Sector(&half), &mut rng(2)).unwrap();
        let d = r.esp_distance_series(&[0.2; 20], &a, &a).unwrap();
        assert!(d.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn tiny_interval_distance_follows_tracing_only() {
        // without dynamics each injection replaces site 1 of both states;
        // at N=2 the remaining site is untouched so the distance freezes
        // after the first step at |σ_A - σ_B| of the reduced state of site 2
        let n = 2;
        let mut r = syk_reservoir(n, 0.0, 1e-9, 4);
        let space = FockSpace::new(n).unwrap();
        let a = sample_random_density(Support::Full(space), &mut rng(3)).unwrap();
        let b = sample_random_density(Support::Full(space), &mut rng(4)).unwrap();
        let d = r.esp_distance_series(&[0.4, 0.4, 0.4], &a, &b).unwrap();
        let sa = partial_trace_site1(&a).unwrap();
        let sb = partial_trace_site1(&b).unwrap();
        let enc = encode_input(0.4).unwrap();
        let want = inject_site1(&enc, &sa).unwrap().frobenius_distance(&inject_site1(&enc, &sb).unwrap());
        for x in d {
            assert!((x - want).abs() < 1e-7, "{x} vs {want}");
        }
    }

    #[test]
    fn trace_rows_start_from_injected_input() {
        let mut r = syk_reservoir(3, 0.0, 10.0, 5);
        let inputs = [0.25, 0.75];
        let rows = r.readout_trace(&inputs, &vacuum(3).unwrap()).unwrap();
        assert_eq!(rows.len(), 2 * 11 * 3);
        for (k, &u) in inputs.iter().enumerate() {
            let first = rows.iter().find(|x| x.step == k && x.v == 0 && x.site == 0).unwrap();
            assert!((first.occupation - u).abs() < 1e-12);
        }
        let mut buf = Vec::new();
        write_trace_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("k,v,t,site,occupation\n0,0,0,1,"));
    }

    #[test]
    fn rejects_bad_configs() {
        let eig = eigh(&HermitianOperator::new(CMat::zeros(4, 4), "0").unwrap()).unwrap();
        assert!(Reservoir::new(ReservoirConfig::new(0.0), 2, Backend::Hamiltonian(eig.clone())).is_err());
        assert!(Reservoir::new(ReservoirConfig::new(1.0).with_virtual_nodes(0), 2, Backend::Hamiltonian(eig.clone())).is_err());
        assert!(Reservoir::new(ReservoirConfig::new(1.0), 3, Backend::Hamiltonian(eig)).is_err());
    }
}
