//! Monte Carlo RMSE experiments.
//!
//! A sweep runs every (geometry, SNR, algorithm) combination for `R` trials.
//! Trial `i` always draws from RNG stream `i` of the master seed, whatever the
//! geometry, SNR or algorithm, so all points of a sweep see the same source
//! and noise realizations (common random numbers) and results do not depend
//! on how trials are scheduled across workers.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Deserialize;

use crate::coarray::DedupRule;
use crate::error::{invalid, Error, Result};
use crate::estimators::{estimate, Algorithm, DoaEstimate, SearchOptions, SpectrumGrid, DEFAULT_GRID_SIZE};
use crate::geometry::{compose_type2, GeometryKind, TypeIILayout};
use crate::linalg::CMatrix;
use crate::sigmodel::{exact_covariance, noise_power_for_snr, trial_rng, Realization, SourceSet};

/// RMSE reported for a point where every trial failed.
pub const FAILURE_RMSE: f64 = 1.0;

pub const CSV_HEADER: &str = "geometry,algorithm,snr_db,trials,failures,rmse";

fn default_subarrays() -> usize {
    3
}
fn default_mu() -> usize {
    1
}
fn default_snapshots() -> usize {
    100
}
fn default_trials() -> usize {
    200
}
fn default_grid() -> usize {
    DEFAULT_GRID_SIZE
}
fn default_true() -> bool {
    true
}

/// Experiment description, usually read from a TOML file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub geometries: Vec<GeometryKind>,
    /// Sensors per subarray.
    pub sensors: usize,
    /// Explicit nested level sizes; defaults to `(n - n/2, n/2)`.
    #[serde(default)]
    pub levels: Option<(usize, usize)>,
    #[serde(default = "default_subarrays")]
    pub subarrays: usize,
    #[serde(default = "default_mu")]
    pub mu: usize,
    pub thetas: Vec<f64>,
    /// Source powers; unit powers when absent.
    #[serde(default)]
    pub powers: Option<Vec<f64>>,
    #[serde(default = "default_snapshots")]
    pub snapshots: usize,
    pub snr_db: Vec<f64>,
    pub algorithms: Vec<Algorithm>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_grid")]
    pub grid_size: usize,
    #[serde(default = "default_true")]
    pub refine: bool,
    #[serde(default)]
    pub dedup: DedupRule,
    /// Use exact covariances instead of simulated snapshots.
    #[serde(default)]
    pub exact: bool,
    #[serde(default)]
    pub pin_first_phase: bool,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.geometries.is_empty() {
            return bad("geometries must not be empty");
        }
        if self.algorithms.is_empty() {
            return bad("algorithms must not be empty");
        }
        if self.snr_db.is_empty() {
            return bad("snr_db must not be empty");
        }
        if self.trials == 0 {
            return bad("trials must be at least 1");
        }
        if self.snapshots == 0 {
            return bad("snapshots must be at least 1");
        }
        if self.sensors == 0 || self.subarrays == 0 || self.mu == 0 {
            return bad("sensors, subarrays and mu must be positive");
        }
        self.sources().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn sources(&self) -> Result<SourceSet> {
        match &self.powers {
            Some(p) => SourceSet::new(self.thetas.clone(), p.clone()),
            None => SourceSet::equal_power(self.thetas.clone()),
        }
    }

    pub fn source_count(&self) -> usize {
        self.thetas.len()
    }

    pub fn layout(&self, kind: GeometryKind) -> Result<TypeIILayout> {
        let base = kind.build(self.sensors, self.levels)?;
        compose_type2(&base, self.subarrays, self.mu)
    }

    pub fn search_options(&self) -> SearchOptions {
        SearchOptions {
            grid_size: self.grid_size,
            refine: self.refine,
        }
    }
}

/// `sqrt( (1 / (D R)) Σ_i ‖θ - θ̂_i‖² )` with index-wise pairing of the
/// ascending truth and estimates.
pub fn rmse(truth: &SourceSet, estimates: &[DoaEstimate]) -> Result<f64> {
    let runs: Vec<&[f64]> = estimates.iter().map(|e| e.thetas.as_slice()).collect();
    rmse_of(truth.thetas(), &runs)
}

pub fn rmse_of(truth: &[f64], estimates: &[&[f64]]) -> Result<f64> {
    if estimates.is_empty() {
        return Err(invalid("RMSE over zero runs"));
    }
    let mut sum = 0.0;
    for est in estimates {
        if est.len() != truth.len() {
            return Err(invalid(format!(
                "estimate has {} directions, truth has {}",
                est.len(),
                truth.len()
            )));
        }
        sum += squared_error(truth, est);
    }
    Ok((sum / (truth.len() * estimates.len()) as f64).sqrt())
}

fn squared_error(truth: &[f64], est: &[f64]) -> f64 {
    truth.iter().zip(est).map(|(t, e)| (t - e).powi(2)).sum()
}

/// Per-subarray covariances seen by trial `trial_index`.
pub fn trial_covariances(
    config: &ExperimentConfig,
    layout: &TypeIILayout,
    snr_db: f64,
    trial_index: u64,
) -> Result<Vec<CMatrix>> {
    let sources = config.sources()?;
    let noise_power = noise_power_for_snr(snr_db);
    if config.exact {
        return (0..layout.subarray_count())
            .map(|l| exact_covariance(&layout.subarray_positions(l), &sources, noise_power))
            .collect();
    }
    let mut rng = trial_rng(config.seed, trial_index);
    let real = Realization::draw(
        &mut rng,
        layout.subarray_count(),
        layout.base().sensor_count(),
        sources.len(),
        config.snapshots,
        config.pin_first_phase,
    );
    Ok(real.synthesize(layout, &sources, noise_power).sample_covariances())
}

/// One trial of one algorithm, with its pseudo-spectrum.
pub fn run_trial_spectrum(
    config: &ExperimentConfig,
    kind: GeometryKind,
    snr_db: f64,
    algorithm: Algorithm,
    trial_index: u64,
) -> Result<(SpectrumGrid, DoaEstimate)> {
    let layout = config.layout(kind)?;
    let covs = trial_covariances(config, &layout, snr_db, trial_index)?;
    estimate(
        algorithm,
        &covs,
        &layout,
        config.source_count(),
        config.dedup,
        &config.search_options(),
    )
}

pub fn run_trial(
    config: &ExperimentConfig,
    kind: GeometryKind,
    snr_db: f64,
    algorithm: Algorithm,
    trial_index: u64,
) -> Result<DoaEstimate> {
    run_trial_spectrum(config, kind, snr_db, algorithm, trial_index).map(|(_, e)| e)
}

/// One point of an RMSE curve.
#[derive(Debug, Clone, PartialEq)]
pub struct RmseRow {
    pub geometry: GeometryKind,
    pub algorithm: Algorithm,
    pub snr_db: f64,
    /// Trials that produced an estimate.
    pub trials: usize,
    /// Trials where the estimator raised an error; excluded from `rmse`.
    pub failures: usize,
    /// Trials whose peak search fell back to non-maxima. Included in `rmse`.
    pub degraded: usize,
    pub rmse: f64,
}

impl RmseRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.geometry,
            self.algorithm,
            sig9(self.snr_db),
            self.trials,
            self.failures,
            sig9(self.rmse)
        )
    }
}

/// Nine significant digits, fixed notation where reasonable.
pub fn sig9(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    if (-4..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        format!("{x:.8e}")
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    sum_sq: f64,
    ok: usize,
    failed: usize,
    degraded: usize,
}

/// Runs the full sweep. `workers = None` uses rayon's default pool size.
pub fn sweep(config: &ExperimentConfig, workers: Option<usize>) -> Result<Vec<RmseRow>> {
    config.validate()?;
    let layouts: Vec<(GeometryKind, TypeIILayout)> = config
        .geometries
        .iter()
        .map(|&k| config.layout(k).map(|l| (k, l)))
        .collect::<Result<_>>()?;
    let truth = config.sources()?;
    let opts = config.search_options();

    let mut items = Vec::new();
    for g in 0..layouts.len() {
        for s in 0..config.snr_db.len() {
            for t in 0..config.trials {
                items.push((g, s, t as u64));
            }
        }
    }

    let run_item = |&(g, s, t): &(usize, usize, u64)| -> Result<Vec<Result<DoaEstimate>>> {
        let layout = &layouts[g].1;
        let covs = trial_covariances(config, layout, config.snr_db[s], t)?;
        Ok(config
            .algorithms
            .iter()
            .map(|&alg| {
                estimate(alg, &covs, layout, truth.len(), config.dedup, &opts).map(|(_, e)| e)
            })
            .collect())
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| invalid(format!("worker pool: {e}")))?;
    let outcomes: Vec<Vec<Result<DoaEstimate>>> =
        pool.install(|| items.par_iter().map(run_item).collect::<Result<_>>())?;

    // Reduce in item order so the sums do not depend on scheduling.
    let n_alg = config.algorithms.len();
    let mut tallies = vec![Tally::default(); layouts.len() * config.snr_db.len() * n_alg];
    for (&(g, s, _), per_alg) in items.iter().zip(&outcomes) {
        for (a, out) in per_alg.iter().enumerate() {
            let tally = &mut tallies[(g * config.snr_db.len() + s) * n_alg + a];
            match out {
                Ok(est) => {
                    tally.sum_sq += squared_error(truth.thetas(), &est.thetas);
                    tally.ok += 1;
                    tally.degraded += est.degraded as usize;
                }
                Err(_) => tally.failed += 1,
            }
        }
    }

    let mut rows = Vec::with_capacity(tallies.len());
    for (g, (kind, _)) in layouts.iter().enumerate() {
        for (s, &snr) in config.snr_db.iter().enumerate() {
            for (a, &alg) in config.algorithms.iter().enumerate() {
                let t = tallies[(g * config.snr_db.len() + s) * n_alg + a];
                let rmse = if t.ok == 0 {
                    FAILURE_RMSE
                } else {
                    (t.sum_sq / (truth.len() * t.ok) as f64).sqrt()
                };
                rows.push(RmseRow {
                    geometry: *kind,
                    algorithm: alg,
                    snr_db: snr,
                    trials: t.ok,
                    failures: t.failed,
                    degraded: t.degraded,
                    rmse,
                });
            }
        }
    }
    Ok(rows)
}

pub fn write_csv<W: Write>(rows: &[RmseRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(out, "{}", r.csv_line())?;
    }
    out.flush()
}

/// Creates the output file before any computation, then sweeps and writes.
pub fn sweep_to_csv(config: &ExperimentConfig, path: &Path, workers: Option<usize>) -> Result<Vec<RmseRow>> {
    let file = File::create(path)?;
    let rows = sweep(config, workers)?;
    write_csv(&rows, BufWriter::new(file))?;
    Ok(rows)
}

/// Human-readable table of a sweep.
pub fn summary(rows: &[RmseRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<8} {:<8} {:>8} {:>7} {:>9} {:>9} {:>12}",
        "geometry", "algo", "snr_db", "trials", "failures", "degraded", "rmse"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<8} {:<8} {:>8.2} {:>7} {:>9} {:>9} {:>12.4e}",
            r.geometry.name(),
            r.algorithm.name(),
            r.snr_db,
            r.trials,
            r.failures,
            r.degraded,
            r.rmse
        );
    }
    s
}
