use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::model::{sample_scene, Scene, SystemConfig};
use crate::solver::{solve, Scheme};

#[derive(Debug, Clone, PartialEq)]
pub enum Sweep {
    None,
    SnrDb(Vec<f64>),
    /// Upper edge of the region, in wavelengths.
    XmaxWavelengths(Vec<f64>),
    WeightComm(Vec<f64>),
}

impl Sweep {
    fn points(&self) -> Vec<Option<f64>> {
        match self {
            Sweep::None => vec![None],
            Sweep::SnrDb(v) | Sweep::XmaxWavelengths(v) | Sweep::WeightComm(v) => v.iter().copied().map(Some).collect(),
        }
    }

    fn apply(&self, base: &SystemConfig, value: Option<f64>) -> SystemConfig {
        let mut cfg = base.clone();
        match (self, value) {
            (Sweep::SnrDb(_), Some(v)) => cfg.set_snr_db(v),
            (Sweep::XmaxWavelengths(_), Some(v)) => cfg.region_max = v * cfg.wavelength,
            (Sweep::WeightComm(_), Some(v)) => cfg.set_weight_comm(v),
            _ => {}
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub base: SystemConfig,
    pub schemes: Vec<Scheme>,
    pub sweep: Sweep,
    pub n_trials: usize,
    pub base_seed: u64,
    pub workers: Option<usize>,
    pub output: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn new(base: SystemConfig, schemes: Vec<Scheme>, sweep: Sweep, n_trials: usize, base_seed: u64) -> Self {
        Self { base, schemes, sweep, n_trials, base_seed, workers: None, output: None }
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.schemes.is_empty() {
            return Err(invalid("no schemes selected"));
        }
        if self.n_trials == 0 {
            return Err(invalid("n_trials must be at least 1"));
        }
        if self.sweep != Sweep::None && self.sweep.points().is_empty() {
            return Err(invalid("sweep has no values"));
        }
        if self.workers == Some(0) {
            return Err(invalid("workers must be positive"));
        }
        for value in self.sweep.points() {
            self.sweep.apply(&self.base, value).validate()?;
        }
        Ok(())
    }
}

/// One line of the results CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    /// Empty when there is no sweep.
    pub sweep_value: Option<f64>,
    pub scheme: String,
    pub trial: usize,
    pub seed: u64,
    pub objective_bits: f64,
    pub sum_rate_bits: f64,
    pub mi_bits: f64,
    pub scnr_db: f64,
    pub iters: usize,
    pub wall_ms: f64,
    /// `ok`, `max-iters`, `flagged`, or `error: <message>`.
    pub status: String,
}

impl ResultRow {
    pub fn succeeded(&self) -> bool {
        !self.status.starts_with("error")
    }
}

fn run_trial(cfg: &SystemConfig, scene: &Scene, scheme: Scheme, sweep_value: Option<f64>, trial: usize, seed: u64) -> ResultRow {
    let mut row = ResultRow {
        sweep_value,
        scheme: scheme.name().to_string(),
        trial,
        seed,
        objective_bits: f64::NAN,
        sum_rate_bits: f64::NAN,
        mi_bits: f64::NAN,
        scnr_db: f64::NAN,
        iters: 0,
        wall_ms: 0.0,
        status: String::new(),
    };
    match solve(scene, cfg, scheme, seed) {
        Ok(r) => {
            row.objective_bits = r.metrics.objective_bits;
            row.sum_rate_bits = r.metrics.sum_rate_bits();
            row.mi_bits = r.metrics.mi_bits;
            row.scnr_db = r.metrics.scnr_db();
            row.iters = r.iterations;
            row.wall_ms = r.wall_time.as_secs_f64() * 1e3;
            row.status = if r.flags.failed {
                "flagged".into()
            } else if r.flags.converged {
                "ok".into()
            } else {
                "max-iters".into()
            };
        }
        Err(e) => {
            log::error!("{scheme} trial {trial} (seed {seed}) failed: {e}");
            row.status = format!("error: {e}");
        }
    }
    row
}

/// Runs every sweep point × scheme × trial. Trial `t` uses seed
/// `base_seed + t` and the same scene for every scheme and sweep point.
/// Rows come back in (sweep, scheme, trial) order whatever the scheduling.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<ResultRow>> {
    spec.validate()?;
    let seeds: Vec<u64> = (0..spec.n_trials).map(|t| spec.base_seed.wrapping_add(t as u64)).collect();
    let scenes: Vec<Scene> = seeds.iter().map(|&s| sample_scene(&spec.base, s)).collect();

    let mut units = Vec::new();
    for value in spec.sweep.points() {
        let cfg = spec.sweep.apply(&spec.base, value);
        for &scheme in &spec.schemes {
            for trial in 0..spec.n_trials {
                units.push((cfg.clone(), scheme, value, trial));
            }
        }
    }
    let work = || -> Vec<ResultRow> {
        units
            .par_iter()
            .map(|(cfg, scheme, value, trial)| run_trial(cfg, &scenes[*trial], *scheme, *value, *trial, seeds[*trial]))
            .collect()
    };
    let rows = match spec.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| invalid(format!("cannot start worker pool: {e}")))?
            .install(work),
        None => work(),
    };
    Ok(rows)
}

pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Mean and sample standard deviation per (sweep value, scheme) over the
/// trials that did not error.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub sweep_value: Option<f64>,
    pub scheme: String,
    pub n_ok: usize,
    pub n_failed: usize,
    pub objective_bits_mean: f64,
    pub objective_bits_std: f64,
    pub sum_rate_bits_mean: f64,
    pub sum_rate_bits_std: f64,
    pub mi_bits_mean: f64,
    pub mi_bits_std: f64,
    pub iters_mean: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

pub fn aggregate(rows: &[ResultRow]) -> Vec<AggregateRow> {
    let mut groups: Vec<(Option<f64>, String, Vec<&ResultRow>)> = Vec::new();
    for row in rows {
        match groups.iter_mut().find(|(v, s, _)| *v == row.sweep_value && *s == row.scheme) {
            Some(g) => g.2.push(row),
            None => groups.push((row.sweep_value, row.scheme.clone(), vec![row])),
        }
    }
    groups
        .into_iter()
        .map(|(sweep_value, scheme, members)| {
            let ok: Vec<&ResultRow> = members.iter().copied().filter(|r| r.succeeded()).collect();
            let col = |f: fn(&ResultRow) -> f64| mean_std(&ok.iter().map(|r| f(r)).collect::<Vec<_>>());
            let (om, os) = col(|r| r.objective_bits);
            let (rm, rs) = col(|r| r.sum_rate_bits);
            let (mm, ms) = col(|r| r.mi_bits);
            let (im, _) = col(|r| r.iters as f64);
            AggregateRow {
                sweep_value,
                scheme,
                n_ok: ok.len(),
                n_failed: members.len() - ok.len(),
                objective_bits_mean: om,
                objective_bits_std: os,
                sum_rate_bits_mean: rm,
                sum_rate_bits_std: rs,
                mi_bits_mean: mm,
                mi_bits_std: ms,
                iters_mean: im,
            }
        })
        .collect()
}

pub fn write_aggregates(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// `results.csv` → `results_summary.csv`.
pub fn summary_path(results: &Path) -> PathBuf {
    let stem = results.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "results".into());
    let name = match results.extension() {
        Some(ext) => format!("{stem}_summary.{}", ext.to_string_lossy()),
        None => format!("{stem}_summary"),
    };
    results.with_file_name(name)
}
