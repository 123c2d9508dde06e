//! Experiment runner: beampattern cuts, PEB maps, RMSE and PEB sweeps and
//! the interference sweep, with seeded Monte-Carlo trials and CSV output.
//!
//! Trial `k` of every sweep point draws from `ChaCha8Rng::seed_from_u64(s_k)`
//! where `s_k` is the `(k+1)`-th output of a SplitMix64 generator seeded
//! with the master seed. Sweep points therefore share random numbers, and
//! adding trials leaves earlier trials unchanged.

pub mod stats;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codebook::finite_state::{self, BcdConfig};
use crate::codebook::{self, synthesis, traditional, Codebook};
use crate::fim::analyze_codewords;
use crate::localization::{Localizer, LocalizerConfig};
use crate::patterns::PatternLibrary;
use crate::power_alloc::{Allocation, AllocationProblem, SolveOptions};
use crate::response::{ElementModel, ResponseModel};
use crate::scene::{compute_aod, distance, synthesize_received, Aod, PathComponent, PathKind, Scenario};
use crate::{Error, Result, C64};

pub use stats::{rmse, spearman, RmseSummary};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Beampattern,
    PebMap,
    RmseVsSnr,
    PebVsQ,
    PebVsS,
    LmrSweep,
    CodebookDump,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        Self::Beampattern,
        Self::PebMap,
        Self::RmseVsSnr,
        Self::PebVsQ,
        Self::PebVsS,
        Self::LmrSweep,
        Self::CodebookDump,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Beampattern => "beampattern",
            Self::PebMap => "peb-map",
            Self::RmseVsSnr => "rmse-vs-snr",
            Self::PebVsQ => "peb-vs-q",
            Self::PebVsS => "peb-vs-s",
            Self::LmrSweep => "lmr-sweep",
            Self::CodebookDump => "codebook-dump",
        }
    }

    /// Sweep used when the configuration leaves it empty.
    pub fn default_sweep(&self) -> Vec<f64> {
        match self {
            Self::Beampattern => (0..=720).map(|k| -90.0 + 0.25 * k as f64).collect(),
            Self::RmseVsSnr => (0..=7).map(|k| -20.0 + 5.0 * k as f64).collect(),
            Self::PebVsQ => vec![1.0, 4.0, 9.0, 16.0],
            Self::PebVsS => vec![8.0, 16.0, 32.0, 64.0],
            Self::LmrSweep => (0..=9).map(|k| 5.0 * k as f64).collect(),
            Self::PebMap | Self::CodebookDump => Vec::new(),
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment kind '{s}'")))
    }
}

impl std::fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LibrarySource {
    /// Synthetic analytic library drawn from this seed.
    Default { seed: u64 },
    /// Directory of tabulated states, or a single CSV file.
    Path { path: PathBuf },
}

impl Default for LibrarySource {
    fn default() -> Self {
        Self::Default { seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelSpec {
    /// Omnidirectional elements with the conjugate-beam codebook.
    Traditional,
    Synthesis { q: usize },
    FiniteState {
        s: usize,
        #[serde(default)]
        library: LibrarySource,
        #[serde(default)]
        bcd: BcdConfig,
    },
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self::Synthesis { q: 4 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerMode {
    #[default]
    Optimal,
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub scenario: Scenario,
    pub model: ModelSpec,
    /// LOS SNR at the UE, dB, for experiments that do not sweep it.
    pub snr_db: f64,
    /// Axis values; azimuth degrees, SNR dB, Q, S or LMR dB depending on
    /// the kind. Empty selects the kind's default.
    pub sweep: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub output: PathBuf,
    pub power: PowerMode,
    /// Lattice counts over the uncertainty region for the power allocation.
    pub allocation_grid: [usize; 3],
    /// `x`, `y` counts of the PEB map at height `map_z`. The map points are
    /// also the allocation points of that experiment.
    pub map_grid: [usize; 2],
    pub map_z: f64,
    pub scatterers: usize,
    /// Log-uniform range of scatterer cross-sections, m².
    pub cross_section: [f64; 2],
    /// Add traditional-array columns.
    pub baseline: bool,
    pub localizer: LocalizerConfig,
    pub solver: SolveOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::RmseVsSnr,
            scenario: Scenario::table_one(),
            model: ModelSpec::default(),
            snr_db: 0.0,
            sweep: Vec::new(),
            trials: 200,
            seed: 0,
            output: PathBuf::from("out.csv"),
            power: PowerMode::Optimal,
            allocation_grid: [5, 5, 3],
            map_grid: [5, 5],
            map_z: 2.0,
            scatterers: 40,
            cross_section: [0.1, 10.0],
            baseline: true,
            localizer: LocalizerConfig::default(),
            solver: SolveOptions::default(),
        }
    }
}

impl ExperimentConfig {
    /// Defaults for `kind`, writing to `<kind>.csv` (`.json` for dumps).
    pub fn for_kind(kind: ExperimentKind) -> Self {
        let ext = if kind == ExperimentKind::CodebookDump { "json" } else { "csv" };
        let mut config = Self { kind, output: PathBuf::from(format!("{}.{ext}", kind.name())), ..Self::default() };
        match kind {
            ExperimentKind::PebMap => config.snr_db = 5.0,
            ExperimentKind::PebVsS => config.model = ModelSpec::FiniteState {
                s: 64,
                library: LibrarySource::default(),
                bcd: BcdConfig::default(),
            },
            _ => {}
        }
        config
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// The configured sweep, or the kind's default when empty.
    pub fn sweep_values(&self) -> Vec<f64> {
        if self.sweep.is_empty() {
            self.kind.default_sweep()
        } else {
            self.sweep.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        let sweep = self.sweep_values();
        if sweep.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("sweep values must be finite".into()));
        }
        if sweep.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("sweep values must be strictly increasing".into()));
        }
        if matches!(self.kind, ExperimentKind::PebVsQ | ExperimentKind::PebVsS) {
            if sweep.is_empty() {
                return Err(Error::Config(format!("{} needs sweep values", self.kind)));
            }
            if sweep.iter().any(|v| *v < 1.0 || v.fract() != 0.0) {
                return Err(Error::Config(format!("{} sweep values must be positive integers", self.kind)));
            }
        }
        if self.kind == ExperimentKind::PebVsQ && matches!(self.model, ModelSpec::FiniteState { .. }) {
            return Err(Error::Config("peb-vs-q sweeps a synthesis model".into()));
        }
        if self.kind == ExperimentKind::PebVsS && !matches!(self.model, ModelSpec::FiniteState { .. }) {
            return Err(Error::Config("peb-vs-s needs a finite-state model".into()));
        }
        if self.allocation_grid.contains(&0) || self.map_grid.contains(&0) {
            return Err(Error::Config("grid counts must be positive".into()));
        }
        let [lo, hi] = self.cross_section;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::Config("cross-section range must satisfy 0 < lo <= hi".into()));
        }
        if self.kind == ExperimentKind::LmrSweep && self.scatterers == 0 {
            return Err(Error::Config("lmr-sweep needs at least one scatterer".into()));
        }
        Ok(())
    }
}

/// One Monte-Carlo localization trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    /// Index of the sweep point.
    pub point: usize,
    pub axis: f64,
    pub trial: usize,
    pub seed: u64,
    pub truth: [f64; 3],
    pub estimate: [f64; 3],
    pub coarse_position: [f64; 3],
    pub squared_error: f64,
    pub coarse_objective: f64,
    pub objective: f64,
}

/// Column names and rows of one result table.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| format_float(*v)))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// 17 significant digits.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Everything an experiment produced.
#[derive(Clone, Debug, Default)]
pub struct ExperimentOutput {
    pub table: Table,
    pub trials: Vec<TrialRecord>,
    pub codebook: Option<Codebook>,
}

impl ExperimentOutput {
    pub fn trials_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "point", "axis", "trial", "seed", "true_x", "true_y", "true_z", "est_x", "est_y", "est_z", "coarse_x",
            "coarse_y", "coarse_z", "squared_error", "coarse_objective", "objective",
        ])?;
        for r in &self.trials {
            let mut rec = vec![r.point.to_string(), format_float(r.axis), r.trial.to_string(), r.seed.to_string()];
            for p in [&r.truth, &r.estimate, &r.coarse_position] {
                rec.extend(p.iter().map(|v| format_float(*v)));
            }
            rec.extend([r.squared_error, r.coarse_objective, r.objective].iter().map(|v| format_float(*v)));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Writes the table (or the codebook JSON) to `path` and the trial
    /// records, if any, next to it as `<stem>_trials.csv`. Returns the
    /// files written.
    pub fn write(&self, path: &Path) -> Result<Vec<PathBuf>> {
        let mut written = Vec::new();
        if let Some(cb) = &self.codebook {
            cb.save(path)?;
        } else {
            std::fs::write(path, self.table.to_csv()?)?;
        }
        written.push(path.to_path_buf());
        if !self.trials.is_empty() {
            let p = trials_path(path);
            std::fs::write(&p, self.trials_csv()?)?;
            written.push(p);
        }
        Ok(written)
    }
}

pub fn trials_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into());
    path.with_file_name(format!("{stem}_trials.csv"))
}

/// One step of SplitMix64.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of trial `k` under master seed `master`.
pub fn trial_seed(master: u64, k: usize) -> u64 {
    let mut state = master.wrapping_add((k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    splitmix64(&mut state)
}

/// Scales all NLOS gain moduli by one factor so that
/// `ρ₀² / Σ_{i≥1} ρ_i²` equals `10^{lmr_db/10}`.
pub fn set_lmr(paths: &[PathComponent], lmr_db: f64) -> Result<Vec<PathComponent>> {
    let los: f64 = paths
        .iter()
        .filter(|p| p.kind == PathKind::Los)
        .map(|p| p.gain_modulus * p.gain_modulus)
        .sum();
    let nlos: f64 = paths
        .iter()
        .filter(|p| p.kind != PathKind::Los)
        .map(|p| p.gain_modulus * p.gain_modulus)
        .sum();
    if !paths.iter().any(|p| p.kind != PathKind::Los) {
        return Err(Error::Domain("set_lmr needs at least one NLOS path".into()));
    }
    if nlos <= 0.0 {
        return Err(Error::Domain("NLOS paths carry no power".into()));
    }
    let k = (los / (10f64.powf(lmr_db / 10.0) * nlos)).sqrt();
    Ok(paths
        .iter()
        .map(|p| {
            let mut q = *p;
            if q.kind != PathKind::Los {
                q.gain_modulus *= k;
            }
            q
        })
        .collect())
}

/// Response model for a model specification. Truncates a loaded library
/// to `s` states.
pub fn build_model(scenario: &Scenario, spec: &ModelSpec) -> Result<ResponseModel> {
    let element = match spec {
        ModelSpec::Traditional => ElementModel::Omni,
        ModelSpec::Synthesis { q } => ElementModel::synthesis(*q)?,
        ModelSpec::FiniteState { s, library, .. } => ElementModel::FiniteState { library: load_library(*s, library)? },
    };
    Ok(ResponseModel::new(scenario.array.clone(), element))
}

pub fn load_library(s: usize, source: &LibrarySource) -> Result<PatternLibrary> {
    if s == 0 {
        return Err(Error::Config("S must be at least 1".into()));
    }
    match source {
        LibrarySource::Default { seed } => PatternLibrary::default_library(s, &mut ChaCha8Rng::seed_from_u64(*seed)),
        LibrarySource::Path { path } => {
            let lib = PatternLibrary::load(path)?;
            if lib.len() < s {
                return Err(Error::Config(format!("library at {} has {} states, {s} requested", path.display(), lib.len())));
            }
            lib.truncated(s)
        }
    }
}

/// Uniform-power codebook for `model` over the scenario's uncertainty region.
pub fn design_codebook(
    scenario: &Scenario,
    model: &ResponseModel,
    spec: &ModelSpec,
    warm: Option<&[Vec<usize>]>,
) -> Result<Codebook> {
    let region = &scenario.uncertainty_region;
    match spec {
        ModelSpec::Traditional => traditional::build_codebook(region, scenario),
        ModelSpec::Synthesis { .. } => synthesis::build_codebook(region, scenario, model),
        ModelSpec::FiniteState { bcd, .. } => {
            finite_state::build_codebook_with_starts(region, scenario, model, bcd, warm)
        }
    }
}

/// A codebook with its power allocation.
#[derive(Clone, Debug)]
pub struct Design {
    pub model: ResponseModel,
    pub codebook: Codebook,
    pub problem: AllocationProblem,
    pub allocation: Option<Allocation>,
}

impl Design {
    /// Applies the power mode with `points` as the allocation set.
    pub fn new(
        scenario: &Scenario,
        model: ResponseModel,
        codebook: Codebook,
        points: Vec<[f64; 3]>,
        power: PowerMode,
        solver: &SolveOptions,
    ) -> Result<Self> {
        let mut codebook = codebook.with_uniform_power();
        let problem = AllocationProblem::new(&model, scenario, points, &codebook.unit())?;
        let allocation = match power {
            PowerMode::Uniform => None,
            PowerMode::Optimal => {
                let a = problem.solve(solver)?;
                codebook.set_deltas(&a.deltas)?;
                Some(a)
            }
        };
        Ok(Self { model, codebook, problem, allocation })
    }

    /// Worst-case PEB over the allocation points at the current deltas.
    pub fn worst_peb(&self) -> f64 {
        self.problem.worst_case_peb(&self.codebook.deltas()).0
    }

    pub fn peb_at(&self, scenario: &Scenario, ue: &[f64; 3]) -> Result<f64> {
        Ok(analyze_codewords(&self.model, scenario, ue, &self.codebook.weighted())?.peb.meters)
    }
}

fn design(config: &ExperimentConfig, scenario: &Scenario, spec: &ModelSpec) -> Result<Design> {
    let model = build_model(scenario, spec)?;
    let cb = design_codebook(scenario, &model, spec, None)?;
    let points = scenario.uncertainty_region.lattice(config.allocation_grid);
    Design::new(scenario, model, cb, points, config.power, &config.solver)
}

/// Runs `config` on the current rayon pool.
pub fn run(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    match config.kind {
        ExperimentKind::Beampattern => beampattern(config),
        ExperimentKind::PebMap => peb_map(config),
        ExperimentKind::RmseVsSnr => rmse_vs_snr(config),
        ExperimentKind::PebVsQ => peb_vs_q(config),
        ExperimentKind::PebVsS => peb_vs_s(config),
        ExperimentKind::LmrSweep => lmr_sweep(config),
        ExperimentKind::CodebookDump => codebook_dump(config),
    }
}

/// Runs `config` on a dedicated pool of `threads` workers (all cores when
/// `None`) and writes the outputs to `config.output`.
pub fn run_and_write(config: &ExperimentConfig, threads: Option<usize>) -> Result<(ExperimentOutput, Vec<PathBuf>)> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let out = pool.install(|| run(config))?;
    let written = out.write(&config.output)?;
    Ok((out, written))
}

fn with_db(v: f64) -> [f64; 2] {
    [v, 10.0 * v.log10()]
}

/// Type-1 codeword at the UE direction with unit power, evaluated on an
/// azimuth cut at the UE elevation.
fn beampattern(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let scenario = config.scenario.clone();
    let aod = compute_aod(&scenario.ue_position, &scenario)?;
    let model = build_model(&scenario, &config.model)?;
    let w = match &config.model {
        ModelSpec::Traditional => traditional::codeword(&scenario.array, &aod, 1, 1.0)?.w,
        ModelSpec::Synthesis { .. } => synthesis::codeword(&model, &aod, 1, 1.0)?.w,
        ModelSpec::FiniteState { bcd, .. } => {
            let grid = codebook::front_hemisphere_grid(bcd.grid_points.max(1));
            let mut rng = ChaCha8Rng::seed_from_u64(bcd.seed);
            finite_state::codeword(&model, &aod, 1, 1.0, &grid, bcd, &mut rng)?.w
        }
    };
    let omni = ResponseModel::new(scenario.array.clone(), ElementModel::Omni);
    let w_trad = traditional::codeword(&scenario.array, &aod, 1, 1.0)?.w;
    let mut header = vec!["az_deg", "el_deg", "gain", "gain_db"];
    if config.baseline {
        header.extend(["traditional_gain", "traditional_gain_db"]);
    }
    let mut table = Table::new(&header);
    let el_deg = aod.el.to_degrees();
    for az_deg in config.sweep_values() {
        let at = Aod::from_degrees(el_deg, az_deg);
        let mut row = vec![az_deg, el_deg];
        row.extend(with_db(model.beampattern(&w, &at)?));
        if config.baseline {
            row.extend(with_db(omni.beampattern(&w_trad, &at)?));
        }
        table.rows.push(row);
    }
    Ok(ExperimentOutput { table, ..Default::default() })
}

/// PEB over an `x`-`y` grid at height `map_z`, uniform and optimized power,
/// optimized over the map points themselves.
fn peb_map(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let scenario = config.scenario.clone().with_snr_db(config.snr_db);
    let r = &scenario.uncertainty_region;
    let mut points = Vec::new();
    for p in r.lattice([config.map_grid[0], config.map_grid[1], 1]) {
        points.push([p[0], p[1], config.map_z]);
    }
    let mut models = vec![config.model.clone()];
    if config.baseline {
        models.push(ModelSpec::Traditional);
    }
    let mut columns = Vec::new();
    for spec in &models {
        let model = build_model(&scenario, spec)?;
        let cb = design_codebook(&scenario, &model, spec, None)?;
        let d = Design::new(&scenario, model, cb, points.clone(), PowerMode::Optimal, &config.solver)?;
        let uniform = vec![1.0 / d.codebook.len() as f64; d.codebook.len()];
        columns.push(d.problem.per_point_pebs(&uniform));
        columns.push(d.problem.per_point_pebs(&d.codebook.deltas()));
    }
    let mut header = vec!["x", "y", "z", "peb_uniform", "peb_optimal"];
    if config.baseline {
        header.extend(["traditional_peb_uniform", "traditional_peb_optimal"]);
    }
    let mut table = Table::new(&header);
    for (i, p) in points.iter().enumerate() {
        let mut row = p.to_vec();
        row.extend(columns.iter().map(|c| c[i]));
        table.rows.push(row);
    }
    Ok(ExperimentOutput { table, ..Default::default() })
}

/// Observation generator for one localization experiment.
struct TrialSetup<'a> {
    scenario: &'a Scenario,
    model: &'a ResponseModel,
    codewords: Vec<Vec<C64>>,
    localizer: Localizer,
}

impl<'a> TrialSetup<'a> {
    fn new(config: &ExperimentConfig, scenario: &'a Scenario, design: &'a Design) -> Result<Self> {
        let localizer = Localizer::new(
            scenario,
            &design.model,
            &design.codebook,
            &scenario.uncertainty_region,
            &config.localizer,
        )?;
        Ok(Self { scenario, model: &design.model, codewords: design.codebook.weighted(), localizer })
    }

    fn observe(&self, paths: &[PathComponent], rng: &mut ChaCha8Rng) -> Result<DMatrix<C64>> {
        synthesize_received(self.scenario, paths, &self.codewords, self.model, Some(rng))
    }

    fn trial(&self, point: usize, axis: f64, trial: usize, seed: u64, paths: &[PathComponent], rng: &mut ChaCha8Rng) -> Result<TrialRecord> {
        let y = self.observe(paths, rng)?;
        let est = self.localizer.localize(&y)?;
        let truth = self.scenario.ue_position;
        let e = distance(&truth, &est.position);
        Ok(TrialRecord {
            point,
            axis,
            trial,
            seed,
            truth,
            estimate: est.position,
            coarse_position: est.coarse_position,
            squared_error: e * e,
            coarse_objective: est.coarse_objective,
            objective: est.objective,
        })
    }
}

fn summary_row(axis: f64, peb: f64, records: &[TrialRecord]) -> Vec<f64> {
    let sq: Vec<f64> = records.iter().map(|r| r.squared_error).collect();
    let s = rmse(&sq);
    vec![axis, peb, s.rmse, s.ci_low, s.ci_high, 0.5 * (s.ci_high - s.ci_low), s.trials as f64]
}

const SUMMARY_HEADER: [&str; 7] = ["{axis}", "peb", "rmse", "ci_low", "ci_high", "ci_half_width", "trials"];

fn summary_header(axis: &str, baseline: bool) -> Vec<&str> {
    let mut h: Vec<&str> = SUMMARY_HEADER.to_vec();
    h[0] = axis;
    if baseline {
        h.push("traditional_peb");
    }
    h
}

/// Monte-Carlo RMSE at the UE position against the PEB, per SNR. The
/// design does not depend on the SNR since every FIM scales with `P`.
fn rmse_vs_snr(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let base = config.scenario.clone();
    let d = design(config, &base, &config.model)?;
    let baseline = if config.baseline { Some(design(config, &base, &ModelSpec::Traditional)?) } else { None };
    let header = summary_header("snr_db", config.baseline);
    let mut table = Table::new(&header);
    let mut trials = Vec::new();
    for (point, &snr) in config.sweep_values().iter().enumerate() {
        let scenario = base.clone().with_snr_db(snr);
        let setup = TrialSetup::new(config, &scenario, &d)?;
        let records = (0..config.trials)
            .into_par_iter()
            .map(|k| {
                let seed = trial_seed(config.seed, k);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let phase = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
                let los = PathComponent::los(&scenario, &scenario.ue_position, phase)?;
                setup.trial(point, snr, k, seed, &[los], &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut row = summary_row(snr, d.peb_at(&scenario, &scenario.ue_position)?, &records);
        if let Some(b) = &baseline {
            row.push(b.peb_at(&scenario, &scenario.ue_position)?);
        }
        table.rows.push(row);
        trials.extend(records);
    }
    Ok(ExperimentOutput { table, trials, codebook: None })
}

fn pebs_row(axis: f64, scenario: &Scenario, d: &Design, baseline: Option<&Design>) -> Result<Vec<f64>> {
    let mut row = vec![axis, d.peb_at(scenario, &scenario.ue_position)?, d.worst_peb()];
    if let Some(b) = baseline {
        row.push(b.peb_at(scenario, &scenario.ue_position)?);
        row.push(b.worst_peb());
    }
    Ok(row)
}

fn pebs_header(axis: &str, baseline: bool) -> Vec<&str> {
    let mut h = vec![axis, "peb", "worst_peb"];
    if baseline {
        h.extend(["traditional_peb", "traditional_worst_peb"]);
    }
    h
}

/// PEB at the UE and worst case over the allocation lattice, per Q.
fn peb_vs_q(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let scenario = config.scenario.clone().with_snr_db(config.snr_db);
    let baseline = if config.baseline { Some(design(config, &scenario, &ModelSpec::Traditional)?) } else { None };
    let mut table = Table::new(&pebs_header("q", config.baseline));
    for q in config.sweep_values() {
        let d = design(config, &scenario, &ModelSpec::Synthesis { q: q as usize })?;
        table.rows.push(pebs_row(q, &scenario, &d, baseline.as_ref())?);
    }
    Ok(ExperimentOutput { table, ..Default::default() })
}

/// PEB per S over prefixes of one library. Each design also starts BCD
/// from the selections of the previous, smaller, library.
fn peb_vs_s(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let scenario = config.scenario.clone().with_snr_db(config.snr_db);
    let ModelSpec::FiniteState { library, bcd, .. } = &config.model else {
        return Err(Error::Config("peb-vs-s needs a finite-state model".into()));
    };
    let sweep = config.sweep_values();
    let s_max = *sweep.last().expect("validated non-empty") as usize;
    let full = load_library(s_max, library)?;
    let baseline = if config.baseline { Some(design(config, &scenario, &ModelSpec::Traditional)?) } else { None };
    let mut table = Table::new(&pebs_header("s", config.baseline));
    let mut warm: Option<Vec<Vec<usize>>> = None;
    for s in sweep {
        let spec = ModelSpec::FiniteState { s: s as usize, library: library.clone(), bcd: bcd.clone() };
        let model = finite_state::finite_state_model(&scenario, full.truncated(s as usize)?);
        let cb = design_codebook(&scenario, &model, &spec, warm.as_deref())?;
        warm = Some(finite_state::selections(&cb));
        let points = scenario.uncertainty_region.lattice(config.allocation_grid);
        let d = Design::new(&scenario, model, cb, points, config.power, &config.solver)?;
        table.rows.push(pebs_row(s, &scenario, &d, baseline.as_ref())?);
    }
    Ok(ExperimentOutput { table, ..Default::default() })
}

/// Random scatterers uniform in the uncertainty region with log-uniform
/// cross-sections and uniform phases.
pub fn random_nlos_paths<R: Rng + ?Sized>(
    scenario: &Scenario,
    count: usize,
    cross_section: [f64; 2],
    rng: &mut R,
) -> Result<Vec<PathComponent>> {
    let (lo, hi) = (cross_section[0].ln(), cross_section[1].ln());
    (0..count)
        .map(|_| {
            let p = scenario.uncertainty_region.sample(rng);
            let s = if hi > lo { rng.random_range(lo..hi).exp() } else { cross_section[0] };
            let phase = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            PathComponent::nlos(scenario, &scenario.ue_position, &p, s, phase)
        })
        .collect()
}

/// RMSE with NLOS interference, per LMR. The PEB column is the LOS-only bound.
fn lmr_sweep(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let scenario = config.scenario.clone().with_snr_db(config.snr_db);
    let d = design(config, &scenario, &config.model)?;
    let baseline = if config.baseline { Some(design(config, &scenario, &ModelSpec::Traditional)?) } else { None };
    let setup = TrialSetup::new(config, &scenario, &d)?;
    let peb = d.peb_at(&scenario, &scenario.ue_position)?;
    let header = summary_header("lmr_db", config.baseline);
    let mut table = Table::new(&header);
    let mut trials = Vec::new();
    for (point, &lmr) in config.sweep_values().iter().enumerate() {
        let records = (0..config.trials)
            .into_par_iter()
            .map(|k| {
                let seed = trial_seed(config.seed, k);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let phase = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
                let mut paths = vec![PathComponent::los(&scenario, &scenario.ue_position, phase)?];
                paths.extend(random_nlos_paths(&scenario, config.scatterers, config.cross_section, &mut rng)?);
                let paths = set_lmr(&paths, lmr)?;
                setup.trial(point, lmr, k, seed, &paths, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut row = summary_row(lmr, peb, &records);
        if let Some(b) = &baseline {
            row.push(b.peb_at(&scenario, &scenario.ue_position)?);
        }
        table.rows.push(row);
        trials.extend(records);
    }
    Ok(ExperimentOutput { table, trials, codebook: None })
}

/// The power-allocated codebook, plus a one-row-per-codeword summary table.
fn codebook_dump(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let scenario = config.scenario.clone().with_snr_db(config.snr_db);
    let d = design(config, &scenario, &config.model)?;
    let mut table = Table::new(&["index", "kind", "el_deg", "az_deg", "delta", "norm"]);
    for (i, c) in d.codebook.codewords.iter().enumerate() {
        let (el, az) = c.aod.to_degrees();
        let norm = c.w.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        table.rows.push(vec![i as f64, c.kind as f64, el, az, c.delta, norm]);
    }
    Ok(ExperimentOutput { table, trials: Vec::new(), codebook: Some(d.codebook) })
}

/// Human-readable summary of a result table, one line per row.
pub fn describe(table: &Table) -> String {
    let mut s = table.header.join("\t");
    s.push('\n');
    for row in &table.rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.6e}")).collect();
        let _ = writeln!(s, "{}", cells.join("\t"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn quick(kind: ExperimentKind) -> ExperimentConfig {
        let mut c = ExperimentConfig::for_kind(kind);
        c.localizer = LocalizerConfig { n_tau: 200, n_theta: 100, ..Default::default() };
        c.allocation_grid = [2, 2, 2];
        c
    }

    #[test]
    fn kind_names_round_trip() {
        for k in ExperimentKind::ALL {
            assert_eq!(k.name().parse::<ExperimentKind>().unwrap(), k);
            let json = serde_json::to_string(&k).unwrap();
            assert_eq!(json, format!("\"{}\"", k.name()));
        }
        assert!(matches!("peb-vs-x".parse::<ExperimentKind>(), Err(Error::Config(_))));
    }

    #[test]
    fn config_validation() {
        let mut c = ExperimentConfig::default();
        assert!(c.validate().is_ok());
        c.trials = 0;
        assert!(c.validate().is_err());
        c.trials = 1;
        c.sweep = vec![0.0, 0.0];
        assert!(c.validate().is_err());
        c.sweep = vec![1.0, 0.0];
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::for_kind(ExperimentKind::PebVsQ);
        c.sweep = vec![1.0, 2.5];
        assert!(c.validate().is_err());
        let text = ExperimentConfig::for_kind(ExperimentKind::PebVsS).to_json().unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), ExperimentConfig::for_kind(ExperimentKind::PebVsS));
        assert!(ExperimentConfig::from_json(r#"{"kind":"peb-map","bogus":1}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"kind":"nope"}"#).is_err());
    }

    #[test]
    fn trial_seeds_follow_splitmix_stream() {
        let mut state = 42u64;
        let stream: Vec<u64> = (0..5).map(|_| splitmix64(&mut state)).collect();
        let direct: Vec<u64> = (0..5).map(|k| trial_seed(42, k)).collect();
        assert_eq!(stream, direct);
        // First output of SplitMix64 seeded with 0.
        assert_eq!(trial_seed(0, 0), 0xE220_A839_7B1D_CDAF);
    }

    fn paths_for_lmr() -> Vec<PathComponent> {
        let s = Scenario::table_one();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = vec![PathComponent::los(&s, &s.ue_position, 0.3).unwrap()];
        p.extend(random_nlos_paths(&s, 5, [0.1, 10.0], &mut rng).unwrap());
        p
    }

    #[test]
    fn lmr_scaling() {
        let paths = paths_for_lmr();
        let los = paths[0].gain_modulus;
        let at0 = set_lmr(&paths, 0.0).unwrap();
        let nlos: f64 = at0[1..].iter().map(|p| p.gain_modulus.powi(2)).sum();
        assert_relative_eq!(nlos, los * los, max_relative = 1e-12);
        assert_eq!(at0[0], paths[0]);
        let k = at0[1].gain_modulus / paths[1].gain_modulus;
        for (a, b) in at0[1..].iter().zip(&paths[1..]) {
            assert_relative_eq!(a.gain_modulus / b.gain_modulus, k, max_relative = 1e-12);
            assert_eq!(a.delay, b.delay);
        }
        let huge = set_lmr(&paths, 1e9).unwrap();
        assert!(huge[1..].iter().all(|p| p.gain_modulus < 1e-300));
        assert!(set_lmr(&paths[..1], 10.0).is_err());
    }

    #[test]
    fn rmse_vs_snr_two_trials_reproducible() {
        let mut c = quick(ExperimentKind::RmseVsSnr);
        c.trials = 2;
        c.sweep = vec![0.0];
        c.baseline = false;
        let a = run(&c).unwrap();
        let b = run(&c).unwrap();
        assert_eq!(a.trials.len(), 2);
        assert_eq!(a.trials, b.trials);
        assert_eq!(a.table.to_csv().unwrap(), b.table.to_csv().unwrap());
        assert!(a.trials.iter().all(|t| t.squared_error >= 0.0));
        c.trials = 3;
        let more = run(&c).unwrap();
        assert_eq!(&more.trials[..2], &a.trials[..]);
    }

    #[test]
    fn csv_has_full_precision() {
        let mut t = Table::new(&["a", "b"]);
        t.rows.push(vec![0.1, 1.0 / 3.0]);
        let csv = t.to_csv().unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("a,b"));
        let vals: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(vals, vec![0.1, 1.0 / 3.0]);
    }

    #[test]
    fn unwritable_output_is_an_error() {
        let out = ExperimentOutput { table: Table::new(&["a"]), ..Default::default() };
        assert!(matches!(out.write(Path::new("/nonexistent-dir/x/out.csv")), Err(Error::Io(_))));
    }
}
