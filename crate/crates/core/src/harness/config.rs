use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::experiment::{ExperimentSpec, Sweep};
use crate::error::{invalid, Error, Result};
use crate::fp::XiMode;
use crate::model::SystemConfig;
use crate::position::GaConfig;
use crate::sensing::CrossTermConvention;
use crate::solver::{Scheme, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepKind {
    Snr,
    Xmax,
    Weight,
}

impl FromStr for SweepKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "snr" => Ok(SweepKind::Snr),
            "xmax" => Ok(SweepKind::Xmax),
            "weight" => Ok(SweepKind::Weight),
            other => Err(invalid(format!("unknown sweep axis '{other}'"))),
        }
    }
}

/// Experiment section of the configuration document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentDoc {
    pub schemes: Vec<Scheme>,
    pub sweep: Option<SweepKind>,
    pub snr_db_values: Vec<f64>,
    pub xmax_wavelengths_values: Vec<f64>,
    pub weight_comm_values: Vec<f64>,
    pub n_trials: usize,
    pub base_seed: u64,
    /// Worker threads; all cores when absent.
    pub workers: Option<usize>,
    pub output: Option<PathBuf>,
    pub angle_step_deg: f64,
}

impl Default for ExperimentDoc {
    fn default() -> Self {
        Self {
            schemes: vec![Scheme::SpgaFp, Scheme::DgaFp, Scheme::FpFpa],
            sweep: None,
            snr_db_values: vec![-20.0, -15.0, -10.0, -5.0, 0.0, 5.0, 10.0],
            xmax_wavelengths_values: vec![2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0, 16.0, 18.0, 20.0],
            weight_comm_values: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            n_trials: 200,
            base_seed: 0,
            workers: None,
            output: None,
            angle_step_deg: 0.5,
        }
    }
}

/// The JSON configuration document. Angles are in degrees, power in dB and
/// lengths in wavelengths; every field is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigDoc {
    pub n_antennas: usize,
    pub n_users: usize,
    pub n_clutters: usize,
    pub n_paths: usize,
    pub snr_db: f64,
    /// Meters.
    pub wavelength: f64,
    /// One entry per user; unit noise when absent.
    pub noise_user: Option<Vec<f64>>,
    pub noise_sense: f64,
    pub weight_comm: f64,
    /// Defaults to 1 − weight_comm.
    pub weight_sense: Option<f64>,
    pub region_min_wavelengths: f64,
    pub region_max_wavelengths: f64,
    pub min_spacing_wavelengths: f64,
    pub n_sense_symbols: usize,
    /// `null` draws the target angle per scene.
    pub target_angle_deg: Option<f64>,
    pub clutter_angles_deg: Option<Vec<f64>>,
    pub xi_mode: XiMode,
    pub fim_cross_term: CrossTermConvention,
    /// Step lengths in meters; scaled to the wavelength when absent.
    pub ga: Option<GaConfig>,
    pub solver: SolverConfig,
    pub experiment: ExperimentDoc,
}

impl Default for ConfigDoc {
    fn default() -> Self {
        Self {
            n_antennas: 4,
            n_users: 4,
            n_clutters: 3,
            n_paths: 13,
            snr_db: 0.0,
            wavelength: 0.1,
            noise_user: None,
            noise_sense: 1.0,
            weight_comm: 0.5,
            weight_sense: None,
            region_min_wavelengths: 0.0,
            region_max_wavelengths: 10.0,
            min_spacing_wavelengths: 0.5,
            n_sense_symbols: 64,
            target_angle_deg: Some(60.0),
            clutter_angles_deg: None,
            xi_mode: XiMode::StandardFp,
            fim_cross_term: CrossTermConvention::Printed,
            ga: None,
            solver: SolverConfig::default(),
            experiment: ExperimentDoc::default(),
        }
    }
}

impl ConfigDoc {
    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| invalid(format!("config: {e}")))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn system_config(&self) -> Result<SystemConfig> {
        let lam = self.wavelength;
        let mut cfg = SystemConfig::paper_default(self.n_antennas);
        cfg.n_users = self.n_users;
        cfg.n_clutters = self.n_clutters;
        cfg.n_paths = self.n_paths;
        cfg.wavelength = lam;
        cfg.noise_user = self.noise_user.clone().unwrap_or_else(|| vec![1.0; self.n_users]);
        cfg.noise_sense = self.noise_sense;
        cfg.set_snr_db(self.snr_db);
        cfg.weight_comm = self.weight_comm;
        cfg.weight_sense = self.weight_sense.unwrap_or(1.0 - self.weight_comm);
        cfg.region_min = self.region_min_wavelengths * lam;
        cfg.region_max = self.region_max_wavelengths * lam;
        cfg.min_spacing = self.min_spacing_wavelengths * lam;
        cfg.n_sense_symbols = self.n_sense_symbols;
        cfg.target_angle = self.target_angle_deg.map(f64::to_radians);
        cfg.clutter_angles = self.clutter_angles_deg.as_ref().map(|v| v.iter().map(|d| d.to_radians()).collect());
        cfg.xi_mode = self.xi_mode;
        cfg.fim_cross_term = self.fim_cross_term;
        cfg.ga = self.ga.clone().unwrap_or_else(|| GaConfig::for_wavelength(lam));
        cfg.solver = self.solver.clone();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn experiment_spec(&self) -> Result<ExperimentSpec> {
        let e = &self.experiment;
        let sweep = match e.sweep {
            None => Sweep::None,
            Some(SweepKind::Snr) => Sweep::SnrDb(e.snr_db_values.clone()),
            Some(SweepKind::Xmax) => Sweep::XmaxWavelengths(e.xmax_wavelengths_values.clone()),
            Some(SweepKind::Weight) => Sweep::WeightComm(e.weight_comm_values.clone()),
        };
        let spec = ExperimentSpec {
            base: self.system_config()?,
            schemes: e.schemes.clone(),
            sweep,
            n_trials: e.n_trials,
            base_seed: e.base_seed,
            workers: e.workers,
            output: e.output.clone(),
        };
        spec.validate()?;
        Ok(spec)
    }
}
