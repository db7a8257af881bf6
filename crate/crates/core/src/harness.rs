//! Experiment orchestration: configuration, seed derivation, parallel sweeps
//! over realizations, aggregation, and CSV/JSON output.
//!
//! Every job is keyed by `(grid point, realization)` and seeded from
//! [`derive_seed`], so results do not depend on execution order or on the
//! thread count. Couplings, inputs and initial states are keyed by the
//! realization alone, which makes neighbouring grid points share their
//! disorder and input streams.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chaoskit::{self, ensemble_spacing_ratios, log_time_grid, sff, ChaosBoundaries, SffCurve, SpacingStats};
use crate::ensembles::{sample_haar_unitary, sample_random_density, sector_spectrum, CouplingSet, HamiltonianAssembler, ModelSpec, Support};
use crate::error::{Error, Result};
use crate::hilbert::{eigh_number_conserving, FockSpace, SectorBasis};
use crate::reservoir::{apply_measurement_noise, write_trace_csv, Backend, FeatureMatrix, HygieneReport, Reservoir, ReservoirConfig, TraceRow};
use crate::stats::{self, Summary};
use crate::tasks::{evaluate, gen_uniform, Inputs, Metrics, Ridge, SplitSpec, TaskKind, TaskSpec};

pub const SCHEMA_VERSION: u32 = 1;
/// Ramp onset of the four-body model at eight modes, read off by eye; used
/// only to annotate form-factor output.
pub const REFERENCE_THOULESS_TIME: f64 = 4.5;

// ---------------------------------------------------------------------------
// seeds

fn splitmix64(z: u64) -> u64 {
    let mut z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    tag.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Seed for one `(realization, role)` pair. For a fixed master seed and role
/// the map from index to seed is a bijection.
pub fn derive_seed(master_seed: u64, realization_index: u64, role_tag: &str) -> u64 {
    let base = splitmix64(splitmix64(master_seed) ^ fnv1a(role_tag));
    splitmix64(base.wrapping_add(realization_index.wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

pub fn seeded_rng(master_seed: u64, realization_index: usize, role_tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master_seed, realization_index as u64, role_tag))
}

// ---------------------------------------------------------------------------
// configuration

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    DtIn,
    KappaRatio,
    Delay,
    Order,
    Sigma,
    SystemSize,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::DtIn => "dt_in",
            Axis::KappaRatio => "kappa_ratio",
            Axis::Delay => "delay",
            Axis::Order => "order",
            Axis::Sigma => "sigma",
            Axis::SystemSize => "system_size",
        }
    }

    /// Whether the reservoir dynamics change along this axis.
    pub fn changes_dynamics(self) -> bool {
        matches!(self, Axis::DtIn | Axis::KappaRatio | Axis::SystemSize)
    }

    fn integer_valued(self) -> bool {
        matches!(self, Axis::Delay | Axis::Order | Axis::SystemSize)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub axis: Axis,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LevelsOptions {
    pub central_fraction: f64,
    /// Particle-number sector; `⌊N/2⌋` when absent.
    pub particles: Option<usize>,
    pub histogram_bins: usize,
}

impl Default for LevelsOptions {
    fn default() -> Self {
        Self { central_fraction: 0.5, particles: None, histogram_bins: chaoskit::DEFAULT_HISTOGRAM_BINS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SffOptions {
    pub t_min: f64,
    pub t_max: f64,
    pub points: usize,
}

impl Default for SffOptions {
    fn default() -> Self {
        Self { t_min: 1e-2, t_max: 1e4, points: 300 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EspOptions {
    pub steps: usize,
}

impl Default for EspOptions {
    fn default() -> Self {
        Self { steps: 500 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TraceOptions {
    pub steps: usize,
}

impl Default for TraceOptions {
    fn default() -> Self {
        Self { steps: 20 }
    }
}

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

fn default_reservoir() -> ReservoirConfig {
    ReservoirConfig::new(10.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub model: ModelSpec,
    #[serde(default = "default_reservoir")]
    pub reservoir: ReservoirConfig,
    #[serde(default)]
    pub tasks: Vec<TaskSpec>,
    #[serde(default = "SplitSpec::desk")]
    pub split: SplitSpec,
    #[serde(default)]
    pub sweep: Option<Sweep>,
    /// Realizations per grid point (pairs of initial states for `esp`).
    pub realizations: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub haar_baseline: bool,
    #[serde(default)]
    pub ridge: Ridge,
    #[serde(default)]
    pub levels: LevelsOptions,
    #[serde(default)]
    pub sff: SffOptions,
    #[serde(default)]
    pub esp: EspOptions,
    #[serde(default)]
    pub trace: TraceOptions,
    /// Worker threads; all available cores when absent.
    #[serde(default)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Levels,
    Sff,
    Qrc,
    Esp,
    Trace,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Levels => "levels",
            Command::Sff => "sff",
            Command::Qrc => "qrc",
            Command::Esp => "esp",
            Command::Trace => "trace",
        }
    }
}

/// Geometric grid of `points` values from `lo` to `hi`.
pub fn geometric_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    log_time_grid(lo, hi, points)
}

impl ExperimentConfig {
    /// Desk-scale defaults for each subcommand.
    pub fn default_for(cmd: Command) -> Self {
        let base = Self {
            schema_version: SCHEMA_VERSION,
            model: ModelSpec::syk4(6),
            reservoir: default_reservoir(),
            tasks: vec![TaskSpec::narma(2), TaskSpec::stm(1)],
            split: SplitSpec::desk(),
            sweep: None,
            realizations: 20,
            master_seed: 0,
            output_dir: None,
            haar_baseline: false,
            ridge: Ridge::Auto,
            levels: LevelsOptions::default(),
            sff: SffOptions::default(),
            esp: EspOptions::default(),
            trace: TraceOptions::default(),
            threads: None,
        };
        match cmd {
            Command::Levels => Self {
                model: ModelSpec::syk4(8),
                sweep: Some(Sweep { axis: Axis::KappaRatio, values: geometric_grid(0.01, 100.0, 15) }),
                realizations: 500,
                ..base
            },
            Command::Sff => Self { model: ModelSpec::syk4(8), realizations: 2000, ..base },
            Command::Qrc => Self {
                sweep: Some(Sweep { axis: Axis::DtIn, values: vec![0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 50.0] }),
                haar_baseline: true,
                ..base
            },
            Command::Esp => Self {
                sweep: Some(Sweep { axis: Axis::DtIn, values: vec![1.0, 10.0] }),
                realizations: 100,
                ..base
            },
            Command::Trace => Self { realizations: 1, ..base },
        }
    }

    /// Full-size preset: eight modes, 4000/3000/3000 split, 500 realizations,
    /// 4000-step echo-state runs. Long-running.
    pub fn apply_paper_mode(&mut self, cmd: Command) {
        self.model.n_modes = 8;
        self.split = SplitSpec::paper();
        match cmd {
            Command::Sff => self.realizations = self.realizations.max(2000),
            Command::Trace => {}
            Command::Esp => {
                self.realizations = 500;
                self.esp.steps = 4000;
            }
            _ => self.realizations = 500,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidConfig(format!(
                "schema version {} not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.realizations == 0 {
            return Err(Error::InvalidConfig("realizations must be >= 1".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::InvalidConfig("threads must be >= 1".into()));
        }
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return Err(Error::InvalidConfig("sweep grid is empty".into()));
            }
            for &v in &sweep.values {
                if !v.is_finite() || (sweep.axis.integer_valued() && (v.fract() != 0.0 || v < 0.0)) {
                    return Err(Error::InvalidConfig(format!("bad {} value {v}", sweep.axis.name())));
                }
            }
            if sweep.axis == Axis::KappaRatio && self.model.j4 == 0.0 {
                return Err(Error::InvalidConfig("kappa_ratio sweep needs J4 > 0".into()));
            }
        }
        self.split.validate()?;
        for t in &self.tasks {
            t.validate()?;
        }
        for value in self.grid() {
            self.point(value)?.model.validate()?;
        }
        Ok(())
    }

    /// Grid values, or a single `None` point without a sweep.
    pub fn grid(&self) -> Vec<Option<f64>> {
        match &self.sweep {
            Some(s) => s.values.iter().map(|&v| Some(v)).collect(),
            None => vec![None],
        }
    }

    pub fn axis(&self) -> Option<Axis> {
        self.sweep.as_ref().map(|s| s.axis)
    }

    /// Parameters at one grid value.
    pub fn point(&self, value: Option<f64>) -> Result<PointParams> {
        let mut p = PointParams { value, model: self.model.clone(), reservoir: self.reservoir.clone(), tasks: self.tasks.clone() };
        let (Some(axis), Some(v)) = (self.axis(), value) else {
            return Ok(p);
        };
        match axis {
            Axis::DtIn => p.reservoir.dt_in = v,
            Axis::KappaRatio => {
                p.model.kappa2 = v * p.model.j4;
                p.model.normalize = true;
            }
            Axis::SystemSize => p.model.n_modes = v as usize,
            Axis::Sigma => p.reservoir.noise_sigma = v,
            Axis::Delay => {
                for t in &mut p.tasks {
                    match &mut t.kind {
                        TaskKind::Stm { delay } | TaskKind::Nlstm { delay, .. } => *delay = v as usize,
                        _ => {}
                    }
                }
            }
            Axis::Order => {
                for t in &mut p.tasks {
                    match &mut t.kind {
                        TaskKind::Narma { order, .. } | TaskKind::Parity { order, .. } => *order = v as usize,
                        TaskKind::Nlstm { power, .. } => *power = v as u32,
                        TaskKind::Stm { .. } => {}
                    }
                }
            }
        }
        Ok(p)
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(t) = self.threads {
            b = b.num_threads(t);
        }
        b.build().map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointParams {
    pub value: Option<f64>,
    pub model: ModelSpec,
    pub reservoir: ReservoirConfig,
    pub tasks: Vec<TaskSpec>,
}

impl PointParams {
    pub fn particles(&self, opts: &LevelsOptions) -> usize {
        opts.particles.unwrap_or(self.model.n_modes / 2)
    }

    /// The model of realization `r`, with its coupling seed attached.
    pub fn realization_model(&self, master_seed: u64, r: usize) -> ModelSpec {
        self.model.clone().with_seed(derive_seed(master_seed, r as u64, "couplings"))
    }
}

// ---------------------------------------------------------------------------
// output

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointSummary {
    pub axis: Option<String>,
    pub value: Option<f64>,
    pub backend: String,
    pub quantity: String,
    pub summary: Option<Summary>,
    pub failures: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub schema_version: u32,
    pub code_version: String,
    pub config: ExperimentConfig,
    pub threads: usize,
    pub wall_time_s: f64,
    pub files: Vec<String>,
    pub points: Vec<PointSummary>,
    pub complete: bool,
    pub notes: BTreeMap<String, serde_json::Value>,
}

struct Sink {
    dir: Option<PathBuf>,
    files: Vec<String>,
}

impl Sink {
    fn new(dir: Option<&Path>) -> Result<Self> {
        if let Some(d) = dir {
            std::fs::create_dir_all(d)?;
        }
        Ok(Self { dir: dir.map(Path::to_path_buf), files: Vec::new() })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        if let Some(d) = &self.dir {
            std::fs::write(d.join(name), bytes)?;
            self.files.push(name.to_string());
        }
        Ok(())
    }

    fn csv(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        if self.dir.is_none() {
            return Ok(());
        }
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, &buf)
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn finish(
    cmd: Command,
    cfg: &ExperimentConfig,
    pool: &rayon::ThreadPool,
    started: Instant,
    mut sink: Sink,
    points: Vec<PointSummary>,
    notes: BTreeMap<String, serde_json::Value>,
) -> Result<RunManifest> {
    let complete = points.iter().all(|p| p.summary.is_some());
    let mut manifest = RunManifest {
        command: cmd.name().into(),
        schema_version: SCHEMA_VERSION,
        code_version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.clone(),
        threads: pool.current_num_threads(),
        wall_time_s: started.elapsed().as_secs_f64(),
        files: Vec::new(),
        points,
        complete,
        notes,
    };
    let name = format!("{}_manifest.json", cmd.name());
    manifest.files = sink.files.clone();
    if sink.dir.is_some() {
        let text = serde_json::to_string_pretty(&manifest)?;
        sink.write(&name, text.as_bytes())?;
    }
    Ok(manifest)
}

fn report_failure(what: &str, value: Option<f64>, r: usize, e: &Error) {
    eprintln!("warning: {what} at {} realization {r} failed: {e}", fmt_opt(value));
}

fn assemblers(points: &[PointParams]) -> Result<BTreeMap<usize, HamiltonianAssembler>> {
    let mut out = BTreeMap::new();
    for p in points {
        if let std::collections::btree_map::Entry::Vacant(e) = out.entry(p.model.n_modes) {
            e.insert(HamiltonianAssembler::new(FockSpace::new(p.model.n_modes)?));
        }
    }
    Ok(out)
}

/// Sector spectrum of realization `r` at one grid point.
fn realization_spectrum(cfg: &ExperimentConfig, p: &PointParams, asm: &HamiltonianAssembler, r: usize) -> Result<Vec<f64>> {
    let model = p.realization_model(cfg.master_seed, r);
    let couplings = CouplingSet::from_spec(&model)?;
    let h = asm.assemble(&couplings, &model)?;
    let sector = SectorBasis::new(&asm.space(), p.particles(&cfg.levels))?;
    sector_spectrum(&h.operator, &sector)
}

fn collect_spectra(cfg: &ExperimentConfig, points: &[PointParams], pool: &rayon::ThreadPool, what: &str) -> Result<Vec<(Vec<Vec<f64>>, usize)>> {
    let asm = assemblers(points)?;
    let jobs: Vec<(usize, usize)> = (0..points.len()).flat_map(|i| (0..cfg.realizations).map(move |r| (i, r))).collect();
    let results: Vec<Result<Vec<f64>>> =
        pool.install(|| jobs.par_iter().map(|&(i, r)| realization_spectrum(cfg, &points[i], &asm[&points[i].model.n_modes], r)).collect());
    let mut out: Vec<(Vec<Vec<f64>>, usize)> = vec![(Vec::new(), 0); points.len()];
    for (&(i, r), res) in jobs.iter().zip(results) {
        match res {
            Ok(s) => out[i].0.push(s),
            Err(e) => {
                report_failure(what, points[i].value, r, &e);
                out[i].1 += 1;
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// levels

#[derive(Debug, Clone)]
pub struct LevelPoint {
    pub value: Option<f64>,
    pub n_modes: usize,
    pub particles: usize,
    pub stats: Option<SpacingStats>,
    /// Spread of the per-realization means.
    pub per_realization: Option<Summary>,
    pub failures: usize,
}

#[derive(Debug, Clone)]
pub struct LevelsReport {
    pub points: Vec<LevelPoint>,
    pub boundaries: Option<ChaosBoundaries>,
    pub manifest: RunManifest,
}

pub fn run_levels(cfg: &ExperimentConfig) -> Result<LevelsReport> {
    cfg.validate()?;
    let started = Instant::now();
    let pool = cfg.pool()?;
    let params: Vec<PointParams> = cfg.grid().into_iter().map(|v| cfg.point(v)).collect::<Result<_>>()?;
    let spectra = collect_spectra(cfg, &params, &pool, "levels")?;
    let mut sink = Sink::new(cfg.output_dir.as_deref())?;
    let mut points = Vec::new();
    for (p, (specs, failures)) in params.iter().zip(spectra) {
        let stats = ensemble_spacing_ratios(&specs, cfg.levels.central_fraction).ok().map(|mut s| {
            s.histogram = chaoskit::Histogram::unit_interval(&s.ratios, cfg.levels.histogram_bins);
            s
        });
        let means: Vec<f64> = specs
            .iter()
            .filter_map(|s| chaoskit::spacing_ratios(s, cfg.levels.central_fraction).ok().map(|x| x.mean_r))
            .collect();
        points.push(LevelPoint {
            value: p.value,
            n_modes: p.model.n_modes,
            particles: p.particles(&cfg.levels),
            stats,
            per_realization: Summary::of(&means),
            failures,
        });
    }
    let boundaries = (cfg.axis() == Some(Axis::KappaRatio)).then(|| {
        let k: Vec<f64> = points.iter().map(|p| p.value.unwrap_or(f64::NAN)).collect();
        let r: Vec<f64> = points.iter().map(|p| p.stats.as_ref().map_or(f64::NAN, |s| s.mean_r)).collect();
        chaoskit::chaos_boundaries(&k, &r, chaoskit::BOUNDARY_TOLERANCE)
    });

    let axis = cfg.axis().map(|a| a.name().to_string());
    sink.csv("levels.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["axis", "value", "n_modes", "particles", "mean_r", "stderr", "std", "realizations", "discarded", "failures"])?;
        for p in &points {
            let s = p.per_realization;
            w.write_record([
                axis.clone().unwrap_or_default(),
                fmt_opt(p.value),
                p.n_modes.to_string(),
                p.particles.to_string(),
                fmt_opt(p.stats.as_ref().map(|s| s.mean_r)),
                fmt_opt(s.map(|s| s.stderr)),
                fmt_opt(s.map(|s| s.std)),
                s.map_or(0, |s| s.count).to_string(),
                p.stats.as_ref().map_or(0, |s| s.discarded).to_string(),
                p.failures.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;
    for (i, p) in points.iter().enumerate() {
        if let Some(s) = &p.stats {
            sink.csv(&format!("levels_hist_{i:02}.csv"), |buf| s.histogram.write_csv(buf))?;
        }
    }
    let summaries = points
        .iter()
        .map(|p| PointSummary {
            axis: axis.clone(),
            value: p.value,
            backend: "syk".into(),
            quantity: "mean_r".into(),
            summary: p.per_realization.map(|s| Summary { mean: p.stats.as_ref().map_or(s.mean, |x| x.mean_r), ..s }),
            failures: p.failures,
        })
        .collect();
    let mut notes = BTreeMap::new();
    if let Some(b) = boundaries {
        notes.insert("chaos_boundaries".into(), serde_json::to_value(b)?);
    }
    let manifest = finish(Command::Levels, cfg, &pool, started, sink, summaries, notes)?;
    Ok(LevelsReport { points, boundaries, manifest })
}

// ---------------------------------------------------------------------------
// spectral form factor

#[derive(Debug, Clone)]
pub struct SffPoint {
    pub value: Option<f64>,
    pub n_modes: usize,
    pub curve: Option<SffCurve>,
    pub plateau_time: Option<f64>,
    pub failures: usize,
}

#[derive(Debug, Clone)]
pub struct SffReport {
    pub points: Vec<SffPoint>,
    pub manifest: RunManifest,
}

pub fn run_sff(cfg: &ExperimentConfig) -> Result<SffReport> {
    cfg.validate()?;
    let started = Instant::now();
    let pool = cfg.pool()?;
    let params: Vec<PointParams> = cfg.grid().into_iter().map(|v| cfg.point(v)).collect::<Result<_>>()?;
    let spectra = collect_spectra(cfg, &params, &pool, "sff")?;
    let t_grid = log_time_grid(cfg.sff.t_min, cfg.sff.t_max, cfg.sff.points);
    let mut sink = Sink::new(cfg.output_dir.as_deref())?;
    let mut points = Vec::new();
    for (p, (specs, failures)) in params.iter().zip(spectra) {
        let curve = pool.install(|| sff(&specs, &t_grid)).ok();
        let plateau_time = curve.as_ref().and_then(|c| chaoskit::plateau_time(c).ok());
        points.push(SffPoint { value: p.value, n_modes: p.model.n_modes, curve, plateau_time, failures });
    }
    let axis = cfg.axis().map(|a| a.name().to_string());
    for (i, p) in points.iter().enumerate() {
        if let Some(c) = &p.curve {
            sink.csv(&format!("sff_{i:02}.csv"), |buf| c.write_csv(buf))?;
        }
    }
    sink.csv("sff_plateau.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["axis", "value", "n_modes", "sector_dim", "realizations", "plateau_level", "plateau_time", "status", "k_min", "t_at_k_min"])?;
        for p in &points {
            let (dim, n, kmin, tmin) = match &p.curve {
                Some(c) => {
                    let (i, k) = c.k.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map(|(i, k)| (i, *k)).unwrap_or((0, f64::NAN));
                    (c.sector_dim, c.ensemble_size, Some(k), Some(c.t_grid[i]))
                }
                None => (0, 0, None, None),
            };
            let status = match (&p.curve, p.plateau_time) {
                (None, _) => "failed",
                (Some(_), None) => "not_saturated",
                _ => "ok",
            };
            w.write_record([
                axis.clone().unwrap_or_default(),
                fmt_opt(p.value),
                p.n_modes.to_string(),
                dim.to_string(),
                n.to_string(),
                fmt_opt((dim > 0).then(|| 1.0 / dim as f64)),
                fmt_opt(p.plateau_time),
                status.into(),
                fmt_opt(kmin),
                fmt_opt(tmin),
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;
    let summaries = points
        .iter()
        .map(|p| PointSummary {
            axis: axis.clone(),
            value: p.value,
            backend: "syk".into(),
            quantity: "plateau_time".into(),
            summary: p.curve.as_ref().map(|c| Summary {
                mean: p.plateau_time.unwrap_or(f64::NAN),
                std: 0.0,
                stderr: 0.0,
                median: p.plateau_time.unwrap_or(f64::NAN),
                count: c.ensemble_size,
            }),
            failures: p.failures,
        })
        .collect();
    let mut notes = BTreeMap::new();
    notes.insert("reference_thouless_time".into(), serde_json::json!(REFERENCE_THOULESS_TIME));
    let manifest = finish(Command::Sff, cfg, &pool, started, sink, summaries, notes)?;
    Ok(SffReport { points, manifest })
}

// ---------------------------------------------------------------------------
// reservoir computing sweeps

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Syk,
    Haar,
}

impl BackendKind {
    pub fn name(self) -> &'static str {
        match self {
            BackendKind::Syk => "syk",
            BackendKind::Haar => "haar",
        }
    }
}

/// Build the reservoir of realization `r` at one grid point.
pub fn build_reservoir(cfg: &ExperimentConfig, p: &PointParams, backend: BackendKind, r: usize, asm: Option<&HamiltonianAssembler>) -> Result<Reservoir> {
    let n = p.model.n_modes;
    match backend {
        BackendKind::Syk => {
            let model = p.realization_model(cfg.master_seed, r);
            let couplings = CouplingSet::from_spec(&model)?;
            let owned;
            let asm = match asm {
                Some(a) => a,
                None => {
                    owned = HamiltonianAssembler::new(FockSpace::new(n)?);
                    &owned
                }
            };
            let h = asm.assemble(&couplings, &model)?;
            let eig = eigh_number_conserving(&h.operator, &asm.space())?;
            Reservoir::new(p.reservoir.clone(), n, Backend::Hamiltonian(eig))
        }
        BackendKind::Haar => {
            let mut rng = seeded_rng(cfg.master_seed, r, "haar");
            let unitary = sample_haar_unitary(1 << n, &mut rng);
            let seed = derive_seed(cfg.master_seed, r as u64, "haar-redraw");
            Reservoir::new(p.reservoir.clone(), n, Backend::Haar { unitary, seed })
        }
    }
}

/// Task inputs of realization `r`. Continuous tasks share one uniform stream;
/// binary tasks draw their own.
pub fn realization_inputs(cfg: &ExperimentConfig, task: &TaskSpec, r: usize, length: usize) -> Inputs {
    let role = if task.kind.is_binary() { "binary-inputs" } else { "inputs" };
    let uniform = gen_uniform(length, &mut seeded_rng(cfg.master_seed, r, role));
    Inputs::from_uniform(task, &uniform)
}

/// Random mixed washout state of realization `r`.
pub fn realization_initial_state(cfg: &ExperimentConfig, n_modes: usize, r: usize) -> Result<crate::hilbert::DensityMatrix> {
    sample_random_density(Support::Full(FockSpace::new(n_modes)?), &mut seeded_rng(cfg.master_seed, r, "initial-state"))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QrcSample {
    pub point: usize,
    pub backend: BackendKind,
    pub task: usize,
    pub realization: usize,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QrcPoint {
    /// `None` for a baseline that does not depend on the axis.
    pub value: Option<f64>,
    pub backend: BackendKind,
    pub task: TaskSpec,
    pub r_squared: Option<Summary>,
    pub nmse: Option<Summary>,
    pub failures: usize,
}

impl QrcPoint {
    pub fn primary(&self) -> Option<Summary> {
        match self.task.kind.primary_metric() {
            crate::tasks::Metric::Nmse => self.nmse,
            crate::tasks::Metric::RSquared => self.r_squared,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QrcReport {
    pub points: Vec<QrcPoint>,
    pub samples: Vec<QrcSample>,
    /// Worst numerical health over every trajectory that ran.
    pub hygiene: HygieneReport,
    pub manifest: RunManifest,
}

impl QrcReport {
    pub fn find(&self, backend: BackendKind, value: Option<f64>, task: &TaskSpec) -> Option<&QrcPoint> {
        self.points.iter().find(|p| p.backend == backend && p.value == value && &p.task == task)
    }
}

fn merge_hygiene(a: &mut HygieneReport, b: &HygieneReport) {
    a.steps += b.steps;
    a.max_trace_defect = a.max_trace_defect.max(b.max_trace_defect);
    a.max_hermiticity_defect = a.max_hermiticity_defect.max(b.max_hermiticity_defect);
    a.min_spot_eigenvalue = a.min_spot_eigenvalue.min(b.min_spot_eigenvalue);
    a.spot_checks += b.spot_checks;
}

/// One dynamics job: a reservoir, its trajectories, and every evaluation
/// point that reuses them.
struct QrcJob {
    dyn_point: usize,
    backend: BackendKind,
    realization: usize,
    eval_points: Vec<usize>,
}

type JobOutput = (Vec<(usize, usize, Result<Metrics>)>, HygieneReport);

fn run_qrc_job(cfg: &ExperimentConfig, params: &[PointParams], job: &QrcJob, asm: &BTreeMap<usize, HamiltonianAssembler>) -> Result<JobOutput> {
    let mut p = params[job.dyn_point].clone();
    p.reservoir.noise_sigma = 0.0;
    let r = job.realization;
    let reservoir = build_reservoir(cfg, &p, job.backend, r, asm.get(&p.model.n_modes))?;
    let init = realization_initial_state(cfg, p.model.n_modes, r)?;
    let length = cfg.split.total();
    let mut hygiene = HygieneReport::default();
    // noiseless trajectories keyed by their encoded input stream
    let mut cache: Vec<(Vec<f64>, FeatureMatrix)> = Vec::new();
    let mut out = Vec::new();
    for &e in &job.eval_points {
        let ep = &params[e];
        let sigma = ep.reservoir.noise_sigma;
        let mut noisy: Vec<Option<FeatureMatrix>> = Vec::new();
        for (ti, task) in ep.tasks.iter().enumerate() {
            let inputs = realization_inputs(cfg, task, r, length);
            let slot = match cache.iter().position(|(enc, _)| *enc == inputs.encoded) {
                Some(i) => i,
                None => {
                    let t = reservoir.clone().run_sequence(&inputs.encoded, &init, &mut seeded_rng(cfg.master_seed, r, "noise"))?;
                    merge_hygiene(&mut hygiene, &t.hygiene);
                    cache.push((inputs.encoded.clone(), t.features));
                    cache.len() - 1
                }
            };
            if noisy.len() < cache.len() {
                noisy.resize(cache.len(), None);
            }
            let features = if sigma > 0.0 {
                noisy[slot]
                    .get_or_insert_with(|| {
                        let mut rng = seeded_rng(cfg.master_seed, r, &format!("noise-{slot}"));
                        apply_measurement_noise(&cache[slot].1, sigma, &mut rng)
                    })
                    .clone()
            } else {
                cache[slot].1.clone()
            };
            let metrics = task.targets(&inputs).and_then(|t| evaluate(&features, task, &t, &cfg.split, cfg.ridge));
            out.push((e, ti, metrics));
        }
    }
    Ok((out, hygiene))
}

pub fn run_qrc_sweep(cfg: &ExperimentConfig) -> Result<QrcReport> {
    cfg.validate()?;
    if cfg.tasks.is_empty() {
        return Err(Error::InvalidConfig("qrc sweep needs at least one task".into()));
    }
    let started = Instant::now();
    let pool = cfg.pool()?;
    let grid = cfg.grid();
    let mut params: Vec<PointParams> = grid.iter().map(|&v| cfg.point(v)).collect::<Result<_>>()?;
    let dynamic = cfg.axis().is_some_and(|a| a.changes_dynamics());
    let n_grid = params.len();
    // baseline evaluation points: per grid value unless the baseline cannot
    // see the axis, in which case a single axis-free point
    let haar_points: Vec<usize> = if !cfg.haar_baseline {
        vec![]
    } else if matches!(cfg.axis(), Some(Axis::DtIn | Axis::KappaRatio)) {
        params.push(cfg.point(None)?);
        vec![n_grid]
    } else {
        (0..n_grid).collect()
    };
    let asm = assemblers(&params)?;
    let mut jobs = Vec::new();
    for r in 0..cfg.realizations {
        if dynamic {
            jobs.extend((0..n_grid).map(|i| QrcJob { dyn_point: i, backend: BackendKind::Syk, realization: r, eval_points: vec![i] }));
        } else {
            jobs.push(QrcJob { dyn_point: 0, backend: BackendKind::Syk, realization: r, eval_points: (0..n_grid).collect() });
        }
        if !haar_points.is_empty() {
            if cfg.axis() == Some(Axis::SystemSize) {
                jobs.extend(haar_points.iter().map(|&i| QrcJob { dyn_point: i, backend: BackendKind::Haar, realization: r, eval_points: vec![i] }));
            } else {
                jobs.push(QrcJob { dyn_point: haar_points[0], backend: BackendKind::Haar, realization: r, eval_points: haar_points.clone() });
            }
        }
    }
    let results: Vec<Result<JobOutput>> = pool.install(|| jobs.par_iter().map(|j| run_qrc_job(cfg, &params, j, &asm)).collect());

    let mut hygiene = HygieneReport::default();
    let mut samples = Vec::new();
    let mut failures: BTreeMap<(BackendKind, usize, usize), usize> = BTreeMap::new();
    for (job, res) in jobs.iter().zip(results) {
        match res {
            Ok((rows, h)) => {
                merge_hygiene(&mut hygiene, &h);
                for (e, ti, m) in rows {
                    match m {
                        Ok(metrics) => samples.push(QrcSample { point: e, backend: job.backend, task: ti, realization: job.realization, metrics }),
                        Err(err) => {
                            report_failure("qrc task", params[e].value, job.realization, &err);
                            *failures.entry((job.backend, e, ti)).or_default() += 1;
                        }
                    }
                }
            }
            Err(err) => {
                report_failure("qrc realization", params[job.dyn_point].value, job.realization, &err);
                for &e in &job.eval_points {
                    for ti in 0..params[e].tasks.len() {
                        *failures.entry((job.backend, e, ti)).or_default() += 1;
                    }
                }
            }
        }
    }
    samples.sort_by_key(|s| (s.backend, s.point, s.task, s.realization));

    let mut points = Vec::new();
    let mut keys: Vec<(BackendKind, usize)> = (0..n_grid).map(|i| (BackendKind::Syk, i)).collect();
    keys.extend(haar_points.iter().map(|&i| (BackendKind::Haar, i)));
    for (backend, e) in keys {
        for (ti, task) in params[e].tasks.iter().enumerate() {
            let mine: Vec<&Metrics> =
                samples.iter().filter(|s| s.backend == backend && s.point == e && s.task == ti).map(|s| &s.metrics).collect();
            let r2: Vec<f64> = mine.iter().filter_map(|m| m.r_squared).collect();
            let nm: Vec<f64> = mine.iter().filter_map(|m| m.nmse).collect();
            let value = if backend == BackendKind::Haar && e == n_grid { None } else { params[e].value };
            points.push(QrcPoint {
                value,
                backend,
                task: *task,
                r_squared: Summary::of(&r2),
                nmse: Summary::of(&nm),
                failures: failures.get(&(backend, e, ti)).copied().unwrap_or(0),
            });
        }
    }

    let axis = cfg.axis().map(|a| a.name().to_string());
    let mut sink = Sink::new(cfg.output_dir.as_deref())?;
    sink.csv("qrc_metrics.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["axis", "value", "backend", "task", "params", "metric", "mean", "std", "stderr", "median", "n_realizations", "failures"])?;
        for p in &points {
            for (metric, s) in [("r2", p.r_squared), ("nmse", p.nmse)] {
                w.write_record([
                    axis.clone().unwrap_or_default(),
                    fmt_opt(p.value),
                    p.backend.name().into(),
                    p.task.kind.name().into(),
                    p.task.kind.params(),
                    metric.into(),
                    fmt_opt(s.map(|s| s.mean)),
                    fmt_opt(s.map(|s| s.std)),
                    fmt_opt(s.map(|s| s.stderr)),
                    fmt_opt(s.map(|s| s.median)),
                    s.map_or(0, |s| s.count).to_string(),
                    p.failures.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    })?;
    sink.csv("qrc_samples.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["axis", "value", "backend", "realization", "task", "params", "r2", "nmse", "train_nmse", "ridge_lambda", "rank_deficient"])?;
        for s in &samples {
            let value = if s.backend == BackendKind::Haar && s.point == n_grid { None } else { params[s.point].value };
            w.write_record([
                axis.clone().unwrap_or_default(),
                fmt_opt(value),
                s.backend.name().into(),
                s.realization.to_string(),
                s.metrics.task.clone(),
                s.metrics.params.clone(),
                fmt_opt(s.metrics.r_squared),
                fmt_opt(s.metrics.nmse),
                fmt_opt(s.metrics.train_nmse),
                s.metrics.ridge_lambda.to_string(),
                s.metrics.rank_deficient.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;
    let summaries = points
        .iter()
        .map(|p| PointSummary {
            axis: axis.clone(),
            value: p.value,
            backend: p.backend.name().into(),
            quantity: format!("{}[{}].{}", p.task.kind.name(), p.task.kind.params(), p.task.kind.primary_metric().name()),
            summary: p.primary(),
            failures: p.failures,
        })
        .collect();
    let mut notes = BTreeMap::new();
    notes.insert("hygiene".into(), serde_json::to_value(hygiene)?);
    let manifest = finish(Command::Qrc, cfg, &pool, started, sink, summaries, notes)?;
    Ok(QrcReport { points, samples, hygiene, manifest })
}

// ---------------------------------------------------------------------------
// echo-state distances

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EspPoint {
    pub value: Option<f64>,
    pub mean: Vec<f64>,
    pub median: Vec<f64>,
    pub std: Vec<f64>,
    pub pairs: usize,
    pub failures: usize,
}

#[derive(Debug, Clone)]
pub struct EspReport {
    pub points: Vec<EspPoint>,
    pub manifest: RunManifest,
}

fn esp_pair(cfg: &ExperimentConfig, p: &PointParams, r: usize, asm: &HamiltonianAssembler) -> Result<Vec<f64>> {
    let mut reservoir = build_reservoir(cfg, p, BackendKind::Syk, r, Some(asm))?;
    let space = asm.space();
    let half = SectorBasis::new(&space, p.model.n_modes / 2)?;
    let mut rng = seeded_rng(cfg.master_seed, r, "esp-states");
    let a = sample_random_density(Support::Sector(&half), &mut rng)?;
    let b = sample_random_density(Support::Sector(&half), &mut rng)?;
    let inputs = gen_uniform(cfg.esp.steps, &mut seeded_rng(cfg.master_seed, r, "inputs"));
    reservoir.esp_distance_series(&inputs, &a, &b)
}

/// Distances between pairs of half-filling initial states driven by a common
/// input stream. Each pair has its own disorder realization and inputs.
pub fn run_esp(cfg: &ExperimentConfig) -> Result<EspReport> {
    cfg.validate()?;
    if cfg.esp.steps == 0 {
        return Err(Error::InvalidConfig("esp needs at least one step".into()));
    }
    let started = Instant::now();
    let pool = cfg.pool()?;
    let params: Vec<PointParams> = cfg.grid().into_iter().map(|v| cfg.point(v)).collect::<Result<_>>()?;
    let asm = assemblers(&params)?;
    let jobs: Vec<(usize, usize)> = (0..params.len()).flat_map(|i| (0..cfg.realizations).map(move |r| (i, r))).collect();
    let results: Vec<Result<Vec<f64>>> =
        pool.install(|| jobs.par_iter().map(|&(i, r)| esp_pair(cfg, &params[i], r, &asm[&params[i].model.n_modes])).collect());
    let mut per_point: Vec<(Vec<Vec<f64>>, usize)> = vec![(Vec::new(), 0); params.len()];
    for (&(i, r), res) in jobs.iter().zip(results) {
        match res {
            Ok(d) => per_point[i].0.push(d),
            Err(e) => {
                report_failure("esp", params[i].value, r, &e);
                per_point[i].1 += 1;
            }
        }
    }
    let mut points = Vec::new();
    for (p, (series, failures)) in params.iter().zip(per_point) {
        let steps = cfg.esp.steps;
        let (mut mean, mut median, mut std) = (Vec::new(), Vec::new(), Vec::new());
        if !series.is_empty() {
            let mut column = vec![0.0; series.len()];
            for k in 0..steps {
                for (c, s) in column.iter_mut().zip(&series) {
                    *c = s[k];
                }
                let s = Summary::of(&column).expect("non-empty");
                mean.push(s.mean);
                median.push(s.median);
                std.push(s.std);
            }
        }
        points.push(EspPoint { value: p.value, mean, median, std, pairs: series.len(), failures });
    }
    let axis = cfg.axis().map(|a| a.name().to_string());
    let mut sink = Sink::new(cfg.output_dir.as_deref())?;
    for (i, p) in points.iter().enumerate() {
        sink.csv(&format!("esp_{i:02}.csv"), |buf| {
            let mut w = csv::Writer::from_writer(buf);
            w.write_record(["k", "mean", "median", "std"])?;
            for k in 0..p.mean.len() {
                w.write_record([(k + 1).to_string(), p.mean[k].to_string(), p.median[k].to_string(), p.std[k].to_string()])?;
            }
            w.flush()?;
            Ok(())
        })?;
    }
    sink.csv("esp_summary.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["axis", "value", "pairs", "final_mean", "final_median", "failures"])?;
        for p in &points {
            w.write_record([
                axis.clone().unwrap_or_default(),
                fmt_opt(p.value),
                p.pairs.to_string(),
                fmt_opt(p.mean.last().copied()),
                fmt_opt(p.median.last().copied()),
                p.failures.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;
    let summaries = points
        .iter()
        .map(|p| PointSummary {
            axis: axis.clone(),
            value: p.value,
            backend: "syk".into(),
            quantity: "final_distance".into(),
            summary: p.mean.last().map(|&m| Summary {
                mean: m,
                std: *p.std.last().unwrap_or(&0.0),
                stderr: p.std.last().unwrap_or(&0.0) / (p.pairs as f64).sqrt(),
                median: *p.median.last().unwrap_or(&m),
                count: p.pairs,
            }),
            failures: p.failures,
        })
        .collect();
    let manifest = finish(Command::Esp, cfg, &pool, started, sink, summaries, BTreeMap::new())?;
    Ok(EspReport { points, manifest })
}

// ---------------------------------------------------------------------------
// readout traces

#[derive(Debug, Clone)]
pub struct TraceReport {
    pub traces: Vec<(Option<f64>, Vec<TraceRow>)>,
    pub manifest: RunManifest,
}

/// Occupation traces of realization 0 over a short input window.
pub fn run_trace(cfg: &ExperimentConfig) -> Result<TraceReport> {
    cfg.validate()?;
    let started = Instant::now();
    let pool = cfg.pool()?;
    let params: Vec<PointParams> = cfg.grid().into_iter().map(|v| cfg.point(v)).collect::<Result<_>>()?;
    let mut sink = Sink::new(cfg.output_dir.as_deref())?;
    let mut traces = Vec::new();
    let mut summaries = Vec::new();
    let axis = cfg.axis().map(|a| a.name().to_string());
    for (i, p) in params.iter().enumerate() {
        let mut reservoir = build_reservoir(cfg, p, BackendKind::Syk, 0, None)?;
        let inputs = gen_uniform(cfg.trace.steps, &mut seeded_rng(cfg.master_seed, 0, "inputs"));
        let init = realization_initial_state(cfg, p.model.n_modes, 0)?;
        let rows = reservoir.readout_trace(&inputs, &init)?;
        sink.csv(&format!("trace_{i:02}.csv"), |buf| write_trace_csv(&rows, buf))?;
        let occ: Vec<f64> = rows.iter().map(|r| r.occupation).collect();
        summaries.push(PointSummary {
            axis: axis.clone(),
            value: p.value,
            backend: "syk".into(),
            quantity: "occupation".into(),
            summary: Summary::of(&occ),
            failures: 0,
        });
        traces.push((p.value, rows));
    }
    let manifest = finish(Command::Trace, cfg, &pool, started, sink, summaries, BTreeMap::new())?;
    Ok(TraceReport { traces, manifest })
}

pub fn pooled_std(a: f64, b: f64) -> f64 {
    ((a * a + b * b) / 2.0).sqrt()
}

/// Mean of `xs` by pairwise summation.
pub fn mean(xs: &[f64]) -> f64 {
    stats::mean(xs).unwrap_or(f64::NAN)
}
