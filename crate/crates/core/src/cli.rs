//! JSON-configured experiment pipeline: `validate`, `simulate`, `analyze`.
//!
//! Every output file carries the SHA-256 hash of the effective configuration
//! and the master seed; `analyze` refuses inputs produced under a different
//! configuration. CSV files start with a `# config_hash=...,master_seed=...`
//! comment line followed by a header row.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffusivity::{
    estimate_a2_slope, lower_bound_c, sample_pi, variational_bound, DiffusivityReport, TrialFamily,
    DEFAULT_BURN_IN,
};
use crate::dynamics::{Scheme, DEFAULT_DT, DEFAULT_N_CELLS};
use crate::ensemble::{
    clt_l1_metric, concentration_stats, ks_gaussianity, run_ensemble, CltFunctional, EnsembleConfig,
    EnsembleStats, InitialCondition, KsResult, ReplicaRecord,
};
use crate::environment::{
    assumption_report, exponential_battery, sample_env, verify_divergence_free, verify_shift_covariance,
    AssumptionReport, Bump, DivFreeSpec, EnvKind, EnvModel, EnvPoint, PotentialMode,
};
use crate::error::{Error, Result};
use crate::lattice::{sample_wiener_shape, Grid};
use crate::rng::{stream_rng, Stream};

pub const VALIDATION_FILE: &str = "validation.json";
pub const CHECKPOINTS_FILE: &str = "checkpoints.csv";
pub const SAMPLES_FILE: &str = "samples.csv";
pub const REPLICAS_FILE: &str = "replicas.csv";
pub const RUN_META_FILE: &str = "run_meta.json";
pub const DIFFUSIVITY_FILE: &str = "diffusivity.json";
pub const CLT_METRIC_FILE: &str = "clt_metric.csv";
pub const KS_FILE: &str = "ks.json";
pub const PLOTDATA_DIR: &str = "plotdata";

/// Tolerance of the shift-covariance gate.
pub const SHIFT_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DivFreeSection {
    #[serde(default = "default_directions")]
    pub directions: [usize; 2],
    #[serde(default)]
    pub center: [f64; 2],
    /// Absolute bump radius in score units.
    #[serde(default)]
    pub radius: Option<f64>,
    /// Radius in multiples of the larger score standard deviation.
    #[serde(default)]
    pub radius_sd: Option<f64>,
    pub amplitude: f64,
}

fn default_directions() -> [usize; 2] {
    [0, 1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSection {
    pub kind: EnvKind,
    /// Mode list of the periodic potential.
    #[serde(default)]
    pub modes: Vec<PotentialMode>,
    /// Frequencies of the quasi-periodic potential.
    #[serde(default)]
    pub frequencies: Vec<f64>,
    /// One mode list per quasi-periodic coordinate.
    #[serde(default)]
    pub coordinate_modes: Vec<Vec<PotentialMode>>,
    #[serde(default)]
    pub divfree: Option<DivFreeSection>,
    /// Replace `B` by `DV`; exists to exercise the divergence validator.
    #[serde(default)]
    pub imposter: bool,
}

impl EnvironmentSection {
    pub fn build(&self, grid: &Grid) -> Result<EnvModel> {
        let model = match self.kind {
            EnvKind::Zero => {
                if !self.modes.is_empty() || !self.coordinate_modes.is_empty() {
                    return Err(Error::config("environment.kind = zero takes no modes"));
                }
                EnvModel::zero(grid)
            }
            EnvKind::Periodic => {
                if self.modes.is_empty() {
                    return Err(Error::config("environment.modes is required for a periodic potential"));
                }
                EnvModel::periodic(grid, self.modes.clone())?
            }
            EnvKind::QuasiPeriodic => {
                let freqs = if self.frequencies.is_empty() {
                    vec![1.0, 2f64.sqrt()]
                } else {
                    self.frequencies.clone()
                };
                EnvModel::quasi_periodic(grid, freqs, self.coordinate_modes.clone())?
            }
        };
        if self.imposter && self.divfree.is_some() {
            return Err(Error::config("environment.imposter and environment.divfree are exclusive"));
        }
        if self.imposter {
            return Ok(model.with_gradient_imposter());
        }
        match &self.divfree {
            None => Ok(model),
            Some(d) => {
                let spec = match (d.radius, d.radius_sd) {
                    (Some(r), None) => DivFreeSpec {
                        directions: d.directions,
                        bump: Bump { center: d.center, radius: r, amplitude: d.amplitude },
                    },
                    (None, Some(s)) => {
                        let mut spec =
                            DivFreeSpec::with_score_scaled_radius(grid, d.directions, s, d.amplitude)?;
                        spec.bump.center = d.center;
                        spec
                    }
                    _ => {
                        return Err(Error::config(
                            "environment.divfree needs exactly one of radius and radius_sd",
                        ))
                    }
                };
                model.with_divfree(&spec)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(default = "default_n_cells")]
    pub n_cells: usize,
}

fn default_n_cells() -> usize {
    DEFAULT_N_CELLS
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection { n_cells: DEFAULT_N_CELLS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsSection {
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub t_end: f64,
    /// Explicit checkpoint times; `n_checkpoints` uniform ones otherwise.
    #[serde(default)]
    pub checkpoints: Option<Vec<f64>>,
    #[serde(default = "default_n_checkpoints")]
    pub n_checkpoints: usize,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    #[serde(default)]
    pub initial: InitialCondition,
}

fn default_dt() -> f64 {
    DEFAULT_DT
}
fn default_n_checkpoints() -> usize {
    20
}
fn default_scheme() -> Scheme {
    Scheme::SemiImplicit
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    pub n_env: usize,
    pub n_noise: usize,
    #[serde(default)]
    pub master_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    #[serde(default = "CltFunctional::default_battery")]
    pub battery: Vec<CltFunctional>,
    #[serde(default = "default_trial_modes")]
    pub trial_modes: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in_fraction: f64,
    #[serde(default = "default_pi_samples")]
    pub pi_samples: usize,
}

fn default_trial_modes() -> usize {
    4
}
fn default_burn_in() -> f64 {
    DEFAULT_BURN_IN
}
fn default_pi_samples() -> usize {
    100_000
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            battery: CltFunctional::default_battery(),
            trial_modes: default_trial_modes(),
            burn_in_fraction: default_burn_in(),
            pi_samples: default_pi_samples(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationSection {
    #[serde(default = "default_divergence_samples")]
    pub divergence_samples: usize,
    #[serde(default = "default_test_functions")]
    pub test_functions: usize,
    #[serde(default = "default_report_samples")]
    pub report_samples: usize,
    #[serde(default = "default_shift_trials")]
    pub shift_trials: usize,
}

fn default_divergence_samples() -> usize {
    100_000
}
fn default_test_functions() -> usize {
    10
}
fn default_report_samples() -> usize {
    2_000
}
fn default_shift_trials() -> usize {
    100
}

impl Default for ValidationSection {
    fn default() -> Self {
        ValidationSection {
            divergence_samples: default_divergence_samples(),
            test_functions: default_test_functions(),
            report_samples: default_report_samples(),
            shift_trials: default_shift_trials(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_output_dir")]
    pub directory: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { directory: default_output_dir() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub environment: EnvironmentSection,
    #[serde(default)]
    pub grid: GridSection,
    pub dynamics: DynamicsSection,
    pub ensemble: EnsembleSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub validation: ValidationSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl ExperimentConfig {
    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)
            .map_err(|e| Error::Parse { path: origin.to_string(), detail: e.to_string() })?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, &path.display().to_string())
    }

    /// Range checks that serde cannot express.
    pub fn check(&self) -> Result<()> {
        let grid = Grid::new(self.grid.n_cells)?;
        self.environment.build(&grid)?;
        self.ensemble_config(None)?.validate()?;
        if !(self.dynamics.t_end > 0.0 && self.dynamics.t_end.is_finite()) {
            return Err(Error::config(format!("dynamics.t_end must be positive, got {}", self.dynamics.t_end)));
        }
        if self.dynamics.checkpoints.is_none() && self.dynamics.n_checkpoints == 0 {
            return Err(Error::config("dynamics.n_checkpoints must be positive"));
        }
        let a = &self.analysis;
        if a.battery.is_empty() {
            return Err(Error::config("analysis.battery must not be empty"));
        }
        if !(0.0..1.0).contains(&a.burn_in_fraction) {
            return Err(Error::config("analysis.burn_in_fraction must be in [0, 1)"));
        }
        if a.pi_samples < 100 {
            return Err(Error::config("analysis.pi_samples must be >= 100"));
        }
        if a.trial_modes > 64 {
            return Err(Error::config("analysis.trial_modes must be <= 64"));
        }
        let v = &self.validation;
        if v.divergence_samples < 100 || v.report_samples == 0 || v.shift_trials == 0 || v.test_functions == 0 {
            return Err(Error::config(
                "validation needs divergence_samples >= 100 and positive report_samples, shift_trials, test_functions",
            ));
        }
        Ok(())
    }

    pub fn checkpoints(&self) -> Vec<f64> {
        match &self.dynamics.checkpoints {
            Some(c) => c.clone(),
            None => EnsembleConfig::uniform_checkpoints(
                self.dynamics.t_end,
                self.dynamics.dt,
                self.dynamics.n_checkpoints,
            ),
        }
    }

    pub fn ensemble_config(&self, workers: Option<usize>) -> Result<EnsembleConfig> {
        Ok(EnsembleConfig {
            n_env: self.ensemble.n_env,
            n_noise: self.ensemble.n_noise,
            n_cells: self.grid.n_cells,
            dt: self.dynamics.dt,
            t_end: self.dynamics.t_end,
            checkpoints: self.checkpoints(),
            master_seed: self.ensemble.master_seed,
            scheme: self.dynamics.scheme,
            initial: self.dynamics.initial.clone(),
            workers,
        })
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.grid.n_cells)
    }

    pub fn model(&self) -> Result<EnvModel> {
        self.environment.build(&self.grid()?)
    }

    /// SHA-256 of the canonical JSON serialisation, output directory excluded.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output = OutputSection { directory: PathBuf::new() };
        let text = serde_json::to_string(&canonical).expect("config serialises");
        format!("{:x}", Sha256::digest(text.as_bytes()))
    }
}

/// Command-line overrides shared by all subcommands.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub skip_validate: bool,
}

impl RunOptions {
    /// Applies overrides and returns the effective configuration and output directory.
    pub fn apply(&self, cfg: &ExperimentConfig) -> (ExperimentConfig, PathBuf) {
        let mut eff = cfg.clone();
        if let Some(s) = self.seed {
            eff.ensemble.master_seed = s;
        }
        let out = self.out_dir.clone().unwrap_or_else(|| cfg.output.directory.clone());
        eff.output.directory = out.clone();
        (eff, out)
    }
}

/// Result of a subcommand: whether all gates passed, and the files written.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub passed: bool,
    pub files: Vec<PathBuf>,
    pub messages: Vec<String>,
}

impl Outcome {
    fn merge(&mut self, other: Outcome) {
        self.passed &= other.passed;
        self.files.extend(other.files);
        self.messages.extend(other.messages);
    }
}

fn header(hash: &str, seed: u64) -> String {
    format!("# config_hash={hash},master_seed={seed}\n")
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serialisable") + "\n";
    write_file(path, &text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceRow {
    pub test_function: String,
    pub estimate: f64,
    pub se: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub config_hash: String,
    pub master_seed: u64,
    pub assumptions: AssumptionReport,
    pub assumptions_pass: bool,
    pub divergence_sigma: EnvPoint,
    pub divergence: Vec<DivergenceRow>,
    pub divergence_pass: bool,
    pub shift_max_deviation: f64,
    pub shift_tolerance: f64,
    pub shift_pass: bool,
    pub passed: bool,
}

/// Runs the assumption, divergence-free and shift-covariance validators.
pub fn validate_model(cfg: &ExperimentConfig) -> Result<ValidationReport> {
    let model = cfg.model()?;
    let grid = model.grid().clone();
    let seed = cfg.ensemble.master_seed;
    let v = &cfg.validation;
    let assumptions = assumption_report(&model, v.report_samples, &mut stream_rng(seed, Stream::Validation, &[0]));
    let mut rng = stream_rng(seed, Stream::Validation, &[1]);
    let sigma = sample_env(&model, &mut rng);
    let battery = exponential_battery(&grid, v.test_functions);
    let est = verify_divergence_free(&model, &sigma, &battery, v.divergence_samples, &mut rng)?;
    let divergence: Vec<DivergenceRow> = battery
        .iter()
        .zip(&est)
        .map(|(f, e)| DivergenceRow {
            test_function: f.label.clone(),
            estimate: e.mean,
            se: e.se,
            pass: e.mean.abs() <= 3.0 * e.se,
        })
        .collect();
    let divergence_pass = divergence.iter().all(|d| d.pass);
    let mut rng = stream_rng(seed, Stream::Validation, &[2]);
    let mut shift_max: f64 = 0.0;
    for _ in 0..v.shift_trials {
        let sigma = sample_env(&model, &mut rng);
        let u = sample_wiener_shape(&grid, &mut rng).shifted(4.0 * rng.random::<f64>() - 2.0);
        let c = 10.0 * rng.random::<f64>() - 5.0;
        shift_max = shift_max.max(verify_shift_covariance(&model, &sigma, &u, c));
    }
    let shift_pass = shift_max <= SHIFT_TOLERANCE;
    let assumptions_pass = assumptions.passed();
    Ok(ValidationReport {
        config_hash: cfg.hash(),
        master_seed: seed,
        assumptions,
        assumptions_pass,
        divergence_sigma: sigma,
        divergence,
        divergence_pass,
        shift_max_deviation: shift_max,
        shift_tolerance: SHIFT_TOLERANCE,
        shift_pass,
        passed: assumptions_pass && divergence_pass && shift_pass,
    })
}

pub fn cmd_validate(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Outcome> {
    let (eff, out) = opts.apply(cfg);
    eff.check()?;
    let report = validate_model(&eff)?;
    let path = out.join(VALIDATION_FILE);
    write_json(&path, &report)?;
    let mut messages = vec![];
    if !report.assumptions_pass {
        messages.push(format!("assumption bounds violated: {}", report.assumptions.violations.join("; ")));
    }
    if !report.divergence_pass {
        messages.push("divergence-free check failed".to_string());
    }
    if !report.shift_pass {
        messages.push(format!("shift covariance deviation {}", report.shift_max_deviation));
    }
    Ok(Outcome { passed: report.passed, files: vec![path], messages })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub config_hash: String,
    pub master_seed: u64,
    pub crate_version: String,
    pub config: ExperimentConfig,
    pub times: Vec<f64>,
    pub n_env: usize,
    pub n_noise: usize,
    pub initial_mean: f64,
    pub probe_x: Vec<f64>,
    pub env_points: Vec<EnvPoint>,
}

fn checkpoints_csv(stats: &EnsembleStats, head: &str) -> String {
    let mut s = String::from(head);
    s.push_str("t,var_mean_mode,var_mean_mode_se,fluct_var_cell_01,fluct_var_cell_05,fluct_var_cell_09,fluct_h_norm_sq,n_env,n_noise\n");
    for c in stats.summaries() {
        let cell = |i: usize| c.fluct_var_cells.get(i).copied().unwrap_or(f64::NAN);
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            c.t, c.var_mean_mode, c.var_mean_mode_se, cell(0), cell(1), cell(2), c.fluct_h_norm_sq, c.n_env, c.n_noise
        )
        .expect("string write");
    }
    s
}

fn samples_csv(stats: &EnsembleStats, head: &str) -> String {
    let mut s = String::from(head);
    s.push_str("t,env_index,noise_index,mean_mode\n");
    for (i, t) in stats.times.iter().enumerate() {
        for r in &stats.records {
            writeln!(s, "{},{},{},{}", t, r.env, r.noise, r.mean_mode[i]).expect("string write");
        }
    }
    s
}

fn replicas_csv(stats: &EnsembleStats, head: &str) -> String {
    let mut s = String::from(head);
    s.push_str("env_index,noise_index,checkpoint,t,mean_mode,fluct_norm_sq,probe_01,probe_05,probe_09\n");
    for r in &stats.records {
        for (i, t) in stats.times.iter().enumerate() {
            write!(s, "{},{},{},{},{},{}", r.env, r.noise, i, t, r.mean_mode[i], r.fluct_norm_sq[i])
                .expect("string write");
            for p in &r.probes[i] {
                write!(s, ",{p}").expect("string write");
            }
            s.push('\n');
        }
    }
    s
}

pub fn cmd_simulate(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Outcome> {
    let (eff, out) = opts.apply(cfg);
    eff.check()?;
    let hash = eff.hash();
    let seed = eff.ensemble.master_seed;
    let paths: Vec<PathBuf> =
        [CHECKPOINTS_FILE, SAMPLES_FILE, REPLICAS_FILE, RUN_META_FILE].iter().map(|f| out.join(f)).collect();
    // stale outputs from an earlier run must not survive a failed one
    for p in &paths {
        if p.exists() {
            fs::remove_file(p).map_err(|e| Error::io(p, e))?;
        }
    }
    let model = eff.model()?;
    let stats = run_ensemble(&eff.ensemble_config(opts.workers)?, &model)?;
    let head = header(&hash, seed);
    let meta = RunMeta {
        config_hash: hash.clone(),
        master_seed: seed,
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        config: eff.clone(),
        times: stats.times.clone(),
        n_env: stats.n_env,
        n_noise: stats.n_noise,
        initial_mean: stats.initial_mean,
        probe_x: stats.probe_x.clone(),
        env_points: stats.env_points.clone(),
    };
    let result = (|| {
        write_file(&paths[0], &checkpoints_csv(&stats, &head))?;
        write_file(&paths[1], &samples_csv(&stats, &head))?;
        write_file(&paths[2], &replicas_csv(&stats, &head))?;
        write_json(&paths[3], &meta)
    })();
    if let Err(e) = result {
        for p in &paths {
            let _ = fs::remove_file(p);
        }
        return Err(e);
    }
    Ok(Outcome { passed: true, files: paths, messages: vec![] })
}

/// Reads a CSV produced by this module, checking its provenance line.
fn read_csv(path: &Path, hash: &str, seed: u64) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let first = lines.next().unwrap_or("");
    if first != header(hash, seed).trim_end() {
        return Err(Error::StaleInput(format!(
            "{} was produced under a different configuration ({first})",
            path.display()
        )));
    }
    lines.next();
    Ok(lines.filter(|l| !l.is_empty()).map(|l| l.split(',').map(str::to_string).collect()).collect())
}

/// Rebuilds ensemble statistics from the files written by `simulate`.
pub fn load_stats(dir: &Path, cfg: &ExperimentConfig) -> Result<EnsembleStats> {
    let hash = cfg.hash();
    let seed = cfg.ensemble.master_seed;
    let meta_path = dir.join(RUN_META_FILE);
    let meta: RunMeta = serde_json::from_str(&fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?)
        .map_err(|e| Error::Parse { path: meta_path.display().to_string(), detail: e.to_string() })?;
    if meta.config_hash != hash || meta.master_seed != seed {
        return Err(Error::StaleInput(format!(
            "{} has config hash {} (seed {}), expected {hash} (seed {seed})",
            meta_path.display(),
            meta.config_hash,
            meta.master_seed
        )));
    }
    for f in [CHECKPOINTS_FILE, SAMPLES_FILE] {
        let p = dir.join(f);
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        if text.lines().next() != Some(header(&hash, seed).trim_end()) {
            return Err(Error::StaleInput(format!("{} does not match the configuration", p.display())));
        }
    }
    let path = dir.join(REPLICAS_FILE);
    let rows = read_csv(&path, &hash, seed)?;
    let n_t = meta.times.len();
    let n_probe = meta.probe_x.len();
    let parse = |s: &str, line: usize| -> Result<f64> {
        s.parse::<f64>().map_err(|e| Error::Parse { path: path.display().to_string(), detail: format!("row {line}: {e}") })
    };
    let mut records: Vec<ReplicaRecord> = Vec::with_capacity(meta.n_env * meta.n_noise);
    for (line, row) in rows.iter().enumerate() {
        if row.len() != 6 + n_probe {
            return Err(Error::Parse { path: path.display().to_string(), detail: format!("row {line}: wrong field count") });
        }
        let env = parse(&row[0], line)? as usize;
        let noise = parse(&row[1], line)? as usize;
        let ci = parse(&row[2], line)? as usize;
        if ci == 0 {
            records.push(ReplicaRecord {
                env,
                noise,
                mean_mode: Vec::with_capacity(n_t),
                fluct_norm_sq: Vec::with_capacity(n_t),
                probes: Vec::with_capacity(n_t),
            });
        }
        let r = records.last_mut().ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            detail: format!("row {line}: record does not start at checkpoint 0"),
        })?;
        if r.env != env || r.noise != noise || r.mean_mode.len() != ci {
            return Err(Error::Parse { path: path.display().to_string(), detail: format!("row {line}: out of order") });
        }
        r.mean_mode.push(parse(&row[4], line)?);
        r.fluct_norm_sq.push(parse(&row[5], line)?);
        r.probes.push(row[6..].iter().map(|s| parse(s, line)).collect::<Result<_>>()?);
    }
    let mut stats = EnsembleStats::from_records(meta.times, meta.n_env, meta.n_noise, records, meta.initial_mean)?;
    stats.master_seed = seed;
    stats.probe_x = meta.probe_x;
    stats.env_points = meta.env_points;
    Ok(stats)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusivityFile {
    pub config_hash: String,
    pub master_seed: u64,
    #[serde(flatten)]
    pub report: DiffusivityReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsFile {
    pub config_hash: String,
    pub master_seed: u64,
    pub t: f64,
    pub a: f64,
    pub skipped: Option<String>,
    #[serde(flatten)]
    pub result: Option<KsResult>,
}

pub fn cmd_analyze(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Outcome> {
    let (eff, out) = opts.apply(cfg);
    eff.check()?;
    let hash = eff.hash();
    let seed = eff.ensemble.master_seed;
    let stats = load_stats(&out, &eff)?;
    let model = eff.model()?;
    let a = &eff.analysis;

    let slope = estimate_a2_slope(&stats, a.burn_in_fraction)?;
    let pi = sample_pi(&model, a.pi_samples, &mut stream_rng(seed, Stream::Pi, &[]))?;
    let lower = lower_bound_c(&model, &pi);
    let variational = if model.has_drift() || a.trial_modes == 0 {
        None
    } else {
        Some(variational_bound(&model, &TrialFamily { modes: a.trial_modes }, &pi)?)
    };
    let report = DiffusivityReport::new(
        &slope,
        &lower,
        variational.as_ref().map(|v| (v, a.trial_modes)),
        a.burn_in_fraction,
        a.pi_samples,
    );
    let mut files = vec![];
    let mut messages = vec![];
    let head = header(&hash, seed);

    let path = out.join(DIFFUSIVITY_FILE);
    write_json(&path, &DiffusivityFile { config_hash: hash.clone(), master_seed: seed, report: report.clone() })?;
    files.push(path);
    let mut passed = report.sandwich_pass && report.variational_pass.unwrap_or(true);
    if !report.sandwich_pass {
        messages.push(format!("a2_hat = {} outside [{} - 3SE, 1 + 3SE]", report.a2_hat, report.lower_c));
    }
    if report.variational_pass == Some(false) {
        messages.push("a2_hat exceeds the variational bound".into());
    }
    if report.a2_hat <= 0.0 {
        return Err(Error::Statistics(format!("non-positive a2_hat = {}", report.a2_hat)));
    }
    let a_hat = report.a2_hat.sqrt();

    let rows = clt_l1_metric(&stats, &a.battery, a_hat)?;
    let mut csv = head.clone();
    csv.push_str("t");
    for f in &a.battery {
        write!(csv, ",{0}_metric,{0}_floor", f.name()).expect("string write");
    }
    csv.push_str(",combined,combined_floor\n");
    let mut plot_metric = head.clone() + "t,combined\n";
    for r in &rows {
        write!(csv, "{}", r.t).expect("string write");
        for v in &r.values {
            write!(csv, ",{},{}", v.metric, v.floor).expect("string write");
        }
        writeln!(csv, ",{},{}", r.combined(), r.combined_floor()).expect("string write");
        writeln!(plot_metric, "{},{}", r.t, r.combined()).expect("string write");
    }
    let path = out.join(CLT_METRIC_FILE);
    write_file(&path, &csv)?;
    files.push(path);

    let last = stats.final_index();
    let samples = stats.scaled_mean_modes_at(last);
    let ks = if stats.times[last] <= 0.0 {
        KsFile { config_hash: hash.clone(), master_seed: seed, t: stats.times[last], a: a_hat, skipped: Some("final time is 0".into()), result: None }
    } else if samples.len() < 200 {
        KsFile {
            config_hash: hash.clone(),
            master_seed: seed,
            t: stats.times[last],
            a: a_hat,
            skipped: Some(format!("{} samples, at least 200 needed", samples.len())),
            result: None,
        }
    } else {
        let r = ks_gaussianity(&samples, a_hat)?;
        if !r.pass {
            passed = false;
            messages.push(format!("KS distance {} above threshold {}", r.d_n, r.threshold));
        }
        KsFile { config_hash: hash.clone(), master_seed: seed, t: stats.times[last], a: a_hat, skipped: None, result: Some(r) }
    };
    let path = out.join(KS_FILE);
    write_json(&path, &ks)?;
    files.push(path);

    let plot = out.join(PLOTDATA_DIR);
    let mut var = head.clone() + "t,var_mean_mode,var_mean_mode_se,fit\n";
    let mut fluct = head.clone() + "t,sup_cell_fluct_var,fluct_h_norm_sq\n";
    for s in stats.summaries() {
        writeln!(var, "{},{},{},{}", s.t, s.var_mean_mode, s.var_mean_mode_se, slope.intercept + slope.a2_hat * s.t)
            .expect("string write");
        let sup = s.fluct_var_cells.iter().copied().fold(0.0, f64::max);
        writeln!(fluct, "{},{},{}", s.t, sup, s.fluct_h_norm_sq).expect("string write");
    }
    if let Ok(conc) = concentration_stats(&stats) {
        let mut c = head.clone() + "t,sup_cell_fluct_var,var_mean_mode\n";
        for r in conc.rows {
            writeln!(c, "{},{},{}", r.t, r.sup_cell_fluct_var, r.var_mean_mode).expect("string write");
        }
        let p = plot.join("concentration.csv");
        write_file(&p, &c)?;
        files.push(p);
    }
    for (name, body) in [("var_mean_mode.csv", var), ("clt_metric.csv", plot_metric), ("fluctuation.csv", fluct)] {
        let p = plot.join(name);
        write_file(&p, &body)?;
        files.push(p);
    }
    Ok(Outcome { passed, files, messages })
}

/// `validate` (unless skipped), `simulate`, `analyze`.
pub fn cmd_full(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Outcome> {
    let mut outcome = Outcome { passed: true, files: vec![], messages: vec![] };
    if !opts.skip_validate {
        let v = cmd_validate(cfg, opts)?;
        let ok = v.passed;
        outcome.merge(v);
        if !ok {
            return Ok(outcome);
        }
    }
    outcome.merge(cmd_simulate(cfg, opts)?);
    outcome.merge(cmd_analyze(cfg, opts)?);
    Ok(outcome)
}

/// `simulate` preceded by the validation gate unless `skip_validate` is set.
pub fn cmd_simulate_gated(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Outcome> {
    if opts.skip_validate {
        return cmd_simulate(cfg, opts);
    }
    let mut v = cmd_validate(cfg, opts)?;
    if !v.passed {
        return Ok(v);
    }
    v.merge(cmd_simulate(cfg, opts)?);
    Ok(v)
}

/// Process exit status for a command result: 0 all gates pass, 1 a gate
/// failed, 2 usage or configuration error, 3 runtime failure.
pub fn exit_code(result: &Result<Outcome>) -> i32 {
    match result {
        Ok(o) if o.passed => 0,
        Ok(_) => 1,
        Err(Error::Config(_) | Error::Parse { .. } | Error::Conformity { .. }) => 2,
        Err(_) => 3,
    }
}
