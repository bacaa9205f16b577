//! Nested Monte Carlo over environments (outer) and noise (inner), and the
//! statistics built on it.
//!
//! Replica `(e, w)` uses the environment `sigma_e` drawn from the seed
//! `h(master, e)` and noise from `h(master, e, w)`, so any replica can be
//! recomputed in isolation and the output does not depend on how replicas
//! are scheduled across threads.

use rand::Rng;
use rayon::prelude::*;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dynamics::{checkpoint_steps, simulate_with, Scheme, Stepper, TrajectoryOptions};
use crate::environment::{sample_env, EnvModel, EnvPoint};
use crate::error::{Error, Result};
use crate::lattice::{Field, Grid};
use crate::quadrature::{normal_cdf, GaussHermite, MeanEstimate};
use crate::rng::{stream_rng, Stream};

pub const DEFAULT_PROBE_X: [f64; 3] = [0.1, 0.5, 0.9];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum InitialCondition {
    #[default]
    Zero,
    Constant {
        value: f64,
    },
    Field {
        values: Vec<f64>,
    },
}

impl InitialCondition {
    pub fn field(&self, grid: &Grid) -> Result<Field> {
        let f = match self {
            InitialCondition::Zero => grid.constant(0.0),
            InitialCondition::Constant { value } => grid.constant(*value),
            InitialCondition::Field { values } => {
                grid.check(values)?;
                Field::new(values.clone())
            }
        };
        if !f.is_finite() {
            return Err(Error::config("initial condition must be finite"));
        }
        Ok(f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub n_env: usize,
    pub n_noise: usize,
    pub n_cells: usize,
    pub dt: f64,
    pub t_end: f64,
    pub checkpoints: Vec<f64>,
    pub master_seed: u64,
    pub scheme: Scheme,
    pub initial: InitialCondition,
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
}

impl EnsembleConfig {
    /// `count` equally spaced checkpoints on `(0, t_end]`, snapped to the
    /// time step.
    pub fn uniform_checkpoints(t_end: f64, dt: f64, count: usize) -> Vec<f64> {
        (1..=count)
            .map(|k| {
                let t = t_end * k as f64 / count as f64;
                (t / dt).round() * dt
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_env < 2 || self.n_noise < 2 {
            return Err(Error::config(format!(
                "n_env and n_noise must both be >= 2 (got {} x {}); variances are undefined otherwise",
                self.n_env, self.n_noise
            )));
        }
        if self.n_cells == 0 {
            return Err(Error::config("n_cells must be positive"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::config(format!("dt must be positive, got {}", self.dt)));
        }
        if self.workers == Some(0) {
            return Err(Error::config("workers must be positive"));
        }
        checkpoint_steps(&self.checkpoints, self.dt, self.t_end)?;
        Ok(())
    }
}

/// Per-replica checkpoint data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaRecord {
    pub env: usize,
    pub noise: usize,
    pub mean_mode: Vec<f64>,
    pub fluct_norm_sq: Vec<f64>,
    /// `u(x) - mean_mode` at each probe cell, per checkpoint.
    pub probes: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointSummary {
    pub t: f64,
    pub var_mean_mode: f64,
    /// Clustered by environment.
    pub var_mean_mode_se: f64,
    pub fluct_var_cells: Vec<f64>,
    pub fluct_h_norm_sq: f64,
    pub n_env: usize,
    pub n_noise: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub times: Vec<f64>,
    pub n_env: usize,
    pub n_noise: usize,
    pub master_seed: u64,
    /// `<v0, 1>_H`.
    pub initial_mean: f64,
    pub probe_x: Vec<f64>,
    pub env_points: Vec<EnvPoint>,
    /// Environment-major: record `e * n_noise + w`.
    pub records: Vec<ReplicaRecord>,
}

impl EnsembleStats {
    /// Assembles statistics from externally produced records (synthetic data,
    /// files). Records must be complete and environment-major.
    pub fn from_records(
        times: Vec<f64>,
        n_env: usize,
        n_noise: usize,
        records: Vec<ReplicaRecord>,
        initial_mean: f64,
    ) -> Result<Self> {
        if records.len() != n_env * n_noise {
            return Err(Error::Statistics(format!(
                "expected {} records, found {}",
                n_env * n_noise,
                records.len()
            )));
        }
        let probes = records.first().map(|r| r.probes.first().map_or(0, |p| p.len())).unwrap_or(0);
        for (idx, r) in records.iter().enumerate() {
            if r.env != idx / n_noise || r.noise != idx % n_noise {
                return Err(Error::Statistics(format!("record {idx} is out of order")));
            }
            if r.mean_mode.len() != times.len()
                || r.fluct_norm_sq.len() != times.len()
                || r.probes.len() != times.len()
                || r.probes.iter().any(|p| p.len() != probes)
            {
                return Err(Error::Statistics(format!("record {idx} has inconsistent lengths")));
            }
        }
        Ok(EnsembleStats {
            times,
            n_env,
            n_noise,
            master_seed: 0,
            initial_mean,
            probe_x: vec![f64::NAN; probes],
            env_points: vec![],
            records,
        })
    }

    pub fn n_replicas(&self) -> usize {
        self.records.len()
    }

    pub fn final_index(&self) -> usize {
        self.times.len() - 1
    }

    /// Index of the checkpoint closest to `t`.
    pub fn index_near(&self, t: f64) -> usize {
        self.times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }

    pub fn mean_modes_at(&self, idx: usize) -> Vec<f64> {
        self.records.iter().map(|r| r.mean_mode[idx]).collect()
    }

    /// Pooled `u_bar(t) / sqrt(t)`.
    pub fn scaled_mean_modes_at(&self, idx: usize) -> Vec<f64> {
        let s = self.times[idx].sqrt();
        self.records.iter().map(|r| r.mean_mode[idx] / s).collect()
    }

    pub fn env_records(&self, e: usize) -> &[ReplicaRecord] {
        &self.records[e * self.n_noise..(e + 1) * self.n_noise]
    }

    pub fn summaries(&self) -> Vec<CheckpointSummary> {
        (0..self.times.len()).map(|i| self.summary_at(i)).collect()
    }

    pub fn summary_at(&self, idx: usize) -> CheckpointSummary {
        let n = self.records.len() as f64;
        let mm = self.mean_modes_at(idx);
        let mean = mm.iter().sum::<f64>() / n;
        let var = mm.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        // cluster-level SE: environment means of the squared deviations
        let per_env: Vec<f64> = (0..self.n_env)
            .map(|e| {
                self.env_records(e).iter().map(|r| (r.mean_mode[idx] - mean).powi(2)).sum::<f64>()
                    / self.n_noise as f64
            })
            .collect();
        let se = MeanEstimate::from_samples(&per_env).se * n / (n - 1.0);
        let n_probe = self.probe_x.len();
        let fluct_var_cells = (0..n_probe)
            .map(|p| {
                let vals: Vec<f64> = self.records.iter().map(|r| r.probes[idx][p]).collect();
                crate::quadrature::sample_variance(&vals)
            })
            .collect();
        let fluct = self.records.iter().map(|r| r.fluct_norm_sq[idx]).sum::<f64>() / n;
        CheckpointSummary {
            t: self.times[idx],
            var_mean_mode: var,
            var_mean_mode_se: se,
            fluct_var_cells,
            fluct_h_norm_sq: fluct,
            n_env: self.n_env,
            n_noise: self.n_noise,
        }
    }
}

/// Runs the full environment x noise ensemble.
pub fn run_ensemble(config: &EnsembleConfig, model: &EnvModel) -> Result<EnsembleStats> {
    config.validate()?;
    let grid = model.grid().clone();
    if grid.n_cells() != config.n_cells {
        return Err(Error::Conformity { expected: config.n_cells, found: grid.n_cells() });
    }
    let v0 = config.initial.field(&grid)?;
    let probe_cells: Vec<usize> = DEFAULT_PROBE_X.iter().map(|&x| grid.nearest_cell(x)).collect();
    let opts = TrajectoryOptions { probe_cells, keep_field_every: None };
    let master = config.master_seed;
    let env_points: Vec<EnvPoint> = (0..config.n_env)
        .map(|e| sample_env(model, &mut stream_rng(master, Stream::Environment, &[e as u64])))
        .collect();
    // fail early on a bad dt / scheme combination
    Stepper::new(&grid, config.dt, config.scheme)?;

    let n_noise = config.n_noise;
    let tasks = config.n_env * n_noise;
    let run = || -> Vec<Result<ReplicaRecord>> {
        (0..tasks)
            .into_par_iter()
            .map_init(
                || Stepper::new(&grid, config.dt, config.scheme).expect("checked above"),
                |stepper, idx| {
                    let (e, w) = (idx / n_noise, idx % n_noise);
                    let mut rng = stream_rng(master, Stream::Noise, &[e as u64, w as u64]);
                    let tr = simulate_with(
                        stepper,
                        model,
                        &env_points[e],
                        &v0,
                        config.t_end,
                        &config.checkpoints,
                        &mut rng,
                        &opts,
                    )
                    .map_err(|err| Error::Replica { env: e, noise: w, source: Box::new(err) })?;
                    Ok(ReplicaRecord {
                        env: e,
                        noise: w,
                        mean_mode: tr.records.iter().map(|r| r.mean_mode).collect(),
                        fluct_norm_sq: tr.records.iter().map(|r| r.fluct_norm_sq).collect(),
                        probes: tr.records.into_iter().map(|r| r.probes).collect(),
                    })
                },
            )
            .collect()
    };
    let results = match config.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| Error::config(format!("cannot build worker pool: {e}")))?
            .install(run),
        None => run(),
    };
    let records = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(EnsembleStats {
        times: config.checkpoints.clone(),
        n_env: config.n_env,
        n_noise,
        master_seed: master,
        initial_mean: grid.mean(&v0),
        probe_x: DEFAULT_PROBE_X.to_vec(),
        env_points,
        records,
    })
}

/// Bounded Lipschitz functionals of `w = u(t)/sqrt(t)`, written in terms of
/// `m = <w, 1>_H` and `r = ||w - m 1||_H^2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CltFunctional {
    /// `cos(m)`
    CosMean,
    /// `exp(-m^2)`
    GaussMean,
    /// `min(||w||_H, 1)`
    NormCap,
    /// `1 / (1 + r)`
    FluctDecay,
    /// `1`
    Constant,
}

impl CltFunctional {
    pub fn default_battery() -> Vec<CltFunctional> {
        vec![
            CltFunctional::CosMean,
            CltFunctional::GaussMean,
            CltFunctional::NormCap,
            CltFunctional::FluctDecay,
        ]
    }

    pub fn name(self) -> &'static str {
        match self {
            CltFunctional::CosMean => "cos_mean",
            CltFunctional::GaussMean => "gauss_mean",
            CltFunctional::NormCap => "norm_cap",
            CltFunctional::FluctDecay => "fluct_decay",
            CltFunctional::Constant => "constant",
        }
    }

    pub fn eval(self, m: f64, r: f64) -> f64 {
        match self {
            CltFunctional::CosMean => m.cos(),
            CltFunctional::GaussMean => (-m * m).exp(),
            CltFunctional::NormCap => (m * m + r).sqrt().min(1.0),
            CltFunctional::FluctDecay => 1.0 / (1.0 + r),
            CltFunctional::Constant => 1.0,
        }
    }

    /// `int f(1 y) Phi_a(y) dy`. Smooth members use the Gauss-Hermite rule;
    /// the kinked `min(|y|, 1)` has a closed form, which the rule would only
    /// reach to about `1e-3`.
    pub fn reference(self, a: f64, rule: &GaussHermite) -> f64 {
        match self {
            CltFunctional::Constant | CltFunctional::FluctDecay => 1.0,
            CltFunctional::NormCap => {
                2.0 * a / (2.0 * std::f64::consts::PI).sqrt() * (1.0 - (-0.5 / (a * a)).exp())
                    + 2.0 * (1.0 - normal_cdf(1.0, a))
            }
            _ => rule.gaussian_expectation(a, |y| self.eval(y, 0.0)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalMetric {
    pub name: String,
    pub reference: f64,
    /// `E_Q |E_P f - reference|`.
    pub metric: f64,
    /// Expected value of the metric from inner Monte Carlo noise alone.
    pub floor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CltMetricRow {
    pub t: f64,
    pub values: Vec<FunctionalMetric>,
}

impl CltMetricRow {
    pub fn combined(&self) -> f64 {
        self.values.iter().map(|v| v.metric).sum::<f64>() / self.values.len() as f64
    }

    pub fn combined_floor(&self) -> f64 {
        self.values.iter().map(|v| v.floor).sum::<f64>() / self.values.len() as f64
    }
}

/// L1-over-environments distance between the inner averages of each
/// functional and its Gaussian limit, at every checkpoint with `t > 0`.
pub fn clt_l1_metric(
    stats: &EnsembleStats,
    battery: &[CltFunctional],
    a: f64,
) -> Result<Vec<CltMetricRow>> {
    if battery.is_empty() {
        return Err(Error::config("CLT battery is empty"));
    }
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::config(format!("a must be positive, got {a}")));
    }
    let rule = GaussHermite::new(64);
    let refs: Vec<f64> = battery.iter().map(|f| f.reference(a, &rule)).collect();
    let k = (2.0 / std::f64::consts::PI).sqrt();
    let mut rows = vec![];
    for (idx, &t) in stats.times.iter().enumerate() {
        if t <= 0.0 {
            continue;
        }
        let sqrt_t = t.sqrt();
        let values = battery
            .iter()
            .zip(&refs)
            .map(|(&f, &reference)| {
                let mut metric = 0.0;
                let mut floor = 0.0;
                for e in 0..stats.n_env {
                    let vals: Vec<f64> = stats
                        .env_records(e)
                        .iter()
                        .map(|r| f.eval(r.mean_mode[idx] / sqrt_t, r.fluct_norm_sq[idx] / t))
                        .collect();
                    let est = MeanEstimate::from_samples(&vals);
                    metric += (est.mean - reference).abs();
                    floor += est.se * k;
                }
                FunctionalMetric {
                    name: f.name().to_string(),
                    reference,
                    metric: metric / stats.n_env as f64,
                    floor: floor / stats.n_env as f64,
                }
            })
            .collect();
        rows.push(CltMetricRow { t, values });
    }
    Ok(rows)
}

/// Simulated null distribution of the Kolmogorov-Smirnov distance for a
/// fully specified continuous law and a fixed sample size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsNull {
    pub n: usize,
    pub reps: usize,
    pub quantile_99: f64,
}

impl KsNull {
    pub fn simulate(n: usize, reps: usize, seed: u64) -> Self {
        let dists: Vec<f64> = (0..reps)
            .into_par_iter()
            .map(|r| {
                let mut rng = stream_rng(seed, Stream::KsNull, &[n as u64, r as u64]);
                let s: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
                ks_distance(s, 1.0)
            })
            .collect();
        let mut sorted = dists;
        sorted.sort_by(f64::total_cmp);
        let pos = ((0.99 * reps as f64).ceil() as usize).clamp(1, reps) - 1;
        KsNull { n, reps, quantile_99: sorted[pos] }
    }
}

/// `sup_x |F_n(x) - Phi(x / a)|`.
pub fn ks_distance(mut samples: Vec<f64>, a: f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = normal_cdf(x, a);
            ((i + 1) as f64 / n - c).max(c - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub n: usize,
    pub d_n: f64,
    pub threshold: f64,
    pub pass: bool,
}

pub const KS_NULL_REPS: usize = 2000;
const KS_NULL_SEED: u64 = 0x6b73_0001;

pub fn ks_gaussianity(samples: &[f64], a: f64) -> Result<KsResult> {
    check_ks_input(samples, a)?;
    let null = KsNull::simulate(samples.len(), KS_NULL_REPS, KS_NULL_SEED);
    ks_gaussianity_with(samples, a, &null)
}

/// KS test against `Normal(0, a^2)` with a precomputed null.
pub fn ks_gaussianity_with(samples: &[f64], a: f64, null: &KsNull) -> Result<KsResult> {
    check_ks_input(samples, a)?;
    if null.n != samples.len() {
        return Err(Error::Statistics(format!(
            "null simulated for n = {}, sample has {}",
            null.n,
            samples.len()
        )));
    }
    let d_n = ks_distance(samples.to_vec(), a);
    Ok(KsResult { n: samples.len(), d_n, threshold: null.quantile_99, pass: d_n <= null.quantile_99 })
}

fn check_ks_input(samples: &[f64], a: f64) -> Result<()> {
    if samples.len() < 200 {
        return Err(Error::Statistics(format!("KS test needs >= 200 samples, got {}", samples.len())));
    }
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::Statistics(format!("a must be positive, got {a}")));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::Statistics("non-finite samples".into()));
    }
    let first = samples[0];
    if samples.iter().all(|&v| v == first) {
        return Err(Error::Statistics("degenerate samples with zero variance".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationRow {
    pub t: f64,
    /// Largest pooled variance of `u(t, x) - u_bar(t)` over the probe cells.
    pub sup_cell_fluct_var: f64,
    pub fluct_h_norm_sq: f64,
    pub var_mean_mode: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub rows: Vec<ConcentrationRow>,
}

impl ConcentrationReport {
    /// `(fluctuation ratio, mean-mode variance ratio)` between the checkpoints
    /// nearest `t1` and `t2`.
    pub fn ratios(&self, t1: f64, t2: f64) -> (f64, f64) {
        let near = |t: f64| {
            self.rows
                .iter()
                .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
                .expect("non-empty")
        };
        let (a, b) = (near(t1), near(t2));
        (b.sup_cell_fluct_var / a.sup_cell_fluct_var, b.var_mean_mode / a.var_mean_mode)
    }
}

pub fn concentration_stats(stats: &EnsembleStats) -> Result<ConcentrationReport> {
    let positive: Vec<f64> = stats.times.iter().copied().filter(|t| *t > 0.0).collect();
    let spans_doubling = positive.first().zip(positive.last()).is_some_and(|(a, b)| *b >= 2.0 * a);
    if positive.len() < 2 || !spans_doubling {
        return Err(Error::Precondition(
            "concentration statistics need two checkpoints with t2 >= 2 t1".into(),
        ));
    }
    let rows = stats
        .summaries()
        .into_iter()
        .map(|s| ConcentrationRow {
            t: s.t,
            sup_cell_fluct_var: s.fluct_var_cells.iter().copied().fold(0.0, f64::max),
            fluct_h_norm_sq: s.fluct_h_norm_sq,
            var_mean_mode: s.var_mean_mode,
        })
        .collect();
    Ok(ConcentrationReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SimRng;
    use rand::SeedableRng;

    fn synthetic(n_env: usize, n_noise: usize, times: &[f64], s: f64, seed: u64) -> EnsembleStats {
        let mut rng = SimRng::seed_from_u64(seed);
        let mut records = vec![];
        for e in 0..n_env {
            for w in 0..n_noise {
                let z: f64 = rng.sample(StandardNormal);
                records.push(ReplicaRecord {
                    env: e,
                    noise: w,
                    mean_mode: times.iter().map(|t| s.sqrt() * z * t.sqrt()).collect(),
                    fluct_norm_sq: vec![0.0; times.len()],
                    probes: vec![vec![0.0; 3]; times.len()],
                });
            }
        }
        EnsembleStats::from_records(times.to_vec(), n_env, n_noise, records, 0.0).unwrap()
    }

    #[test]
    fn constant_functional_has_zero_metric() {
        let st = synthetic(5, 10, &[1.0, 2.0], 1.0, 1);
        let rows = clt_l1_metric(&st, &[CltFunctional::Constant], 0.7).unwrap();
        assert!(rows.iter().all(|r| r.values[0].metric == 0.0));
        assert!(clt_l1_metric(&st, &[], 1.0).is_err());
    }

    #[test]
    fn exact_gaussian_sits_at_noise_floor() {
        let a = 0.8;
        let st = synthetic(20, 1000, &[1.0, 4.0], a * a, 2);
        let rows = clt_l1_metric(&st, &CltFunctional::default_battery(), a).unwrap();
        for row in &rows {
            for v in &row.values {
                // floor = mean SE * sqrt(2/pi)
                let mean_se = v.floor / (2.0 / std::f64::consts::PI).sqrt();
                assert!(v.metric <= 3.0 * mean_se, "{}: {} vs {}", v.name, v.metric, mean_se);
            }
        }
    }

    #[test]
    fn references_match_closed_forms() {
        let rule = GaussHermite::new(64);
        let a: f64 = 0.9;
        let cos = CltFunctional::CosMean.reference(a, &rule);
        assert!((cos - (-a * a / 2.0).exp()).abs() < 1e-12);
        let gm = CltFunctional::GaussMean.reference(a, &rule);
        assert!((gm - 1.0 / (1.0 + 2.0 * a * a).sqrt()).abs() < 1e-12);
        let cap = CltFunctional::NormCap.reference(a, &rule);
        // fine trapezoid oracle for E min(|Y|, 1)
        let h = 1e-4;
        let exact: f64 = (-80_000..=80_000)
            .map(|i| {
                let y = i as f64 * h;
                y.abs().min(1.0) * (-0.5 * y * y / (a * a)).exp() * h
            })
            .sum::<f64>()
            / (a * (2.0 * std::f64::consts::PI).sqrt());
        assert!((cap - exact).abs() < 1e-7, "{cap} vs {exact}");
        assert_eq!(CltFunctional::FluctDecay.reference(a, &rule), 1.0);
    }

    #[test]
    fn ks_separates_scale_error() {
        let mut rng = SimRng::seed_from_u64(5);
        let a = 1.3;
        let null = KsNull::simulate(1000, KS_NULL_REPS, 11);
        let wide: Vec<f64> = (0..1000).map(|_| 2.0 * a * rng.sample::<f64, _>(StandardNormal)).collect();
        assert!(!ks_gaussianity_with(&wide, a, &null).unwrap().pass);
        let mut passes = 0;
        for _ in 0..200 {
            let s: Vec<f64> = (0..1000).map(|_| a * rng.sample::<f64, _>(StandardNormal)).collect();
            passes += ks_gaussianity_with(&s, a, &null).unwrap().pass as usize;
        }
        // nominal 99%; binomial slack
        assert!(passes >= 194, "{passes}/200");
        assert!(ks_gaussianity(&[1.0; 300], 1.0).is_err());
        assert!(ks_gaussianity(&[1.0, 2.0], 1.0).is_err());
    }

    #[test]
    fn ks_null_quantile_matches_asymptotics() {
        // asymptotic 1% critical value is 1.628 / sqrt(n), slightly smaller at finite n
        let null = KsNull::simulate(500, 4000, 3);
        let scaled = null.quantile_99 * 500f64.sqrt();
        assert!((scaled - 1.60).abs() < 0.08, "{scaled}");
    }

    #[test]
    fn concentration_needs_doubling() {
        let st = synthetic(2, 2, &[1.0, 1.5], 1.0, 1);
        assert!(concentration_stats(&st).is_err());
        let st = synthetic(2, 2, &[1.0, 2.0], 1.0, 1);
        let rep = concentration_stats(&st).unwrap();
        assert!(rep.rows.iter().all(|r| r.sup_cell_fluct_var == 0.0));
    }

    #[test]
    fn config_validation() {
        let mut c = EnsembleConfig {
            n_env: 2,
            n_noise: 2,
            n_cells: 4,
            dt: 1e-3,
            t_end: 0.01,
            checkpoints: vec![0.005, 0.01],
            master_seed: 1,
            scheme: Scheme::SemiImplicit,
            initial: InitialCondition::Zero,
            workers: None,
        };
        assert!(c.validate().is_ok());
        c.n_noise = 1;
        assert!(c.validate().is_err());
        c.n_noise = 2;
        c.dt = -1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn uniform_checkpoints_are_on_the_step_grid() {
        let c = EnsembleConfig::uniform_checkpoints(1.0, 1e-3, 3);
        assert_eq!(c.len(), 3);
        assert!(checkpoint_steps(&c, 1e-3, 1.0).is_ok());
    }
}
