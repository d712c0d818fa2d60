use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{AntennaPositions, Beamformer, Scene, SystemConfig};
use crate::sensing::{beampattern, crb_theta, degree_grid, fim, scaled_unitary_beamformer};
use crate::solver::{solve, Scheme, SolveResult};

/// One `theta_deg,value` line. `value` is empty where the CRB is undefined.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AngleRow {
    pub theta_deg: f64,
    pub value: Option<f64>,
}

/// 0° to 180° inclusive.
pub fn angle_grid_deg(step_deg: f64) -> Result<Vec<f64>> {
    if !(step_deg > 0.0 && step_deg <= 180.0) {
        return Err(crate::error::invalid("angle step must lie in (0, 180] degrees"));
    }
    Ok(degree_grid(0.0, 180.0, step_deg))
}

pub fn beampattern_rows(x: &AntennaPositions, f: &Beamformer, cfg: &SystemConfig, grid_deg: &[f64]) -> Result<Vec<AngleRow>> {
    let radians: Vec<f64> = grid_deg.iter().map(|d| d.to_radians()).collect();
    let bp = beampattern(x, f, &radians, cfg.wavelength)?;
    Ok(grid_deg.iter().zip(bp).map(|(&theta_deg, v)| AngleRow { theta_deg, value: Some(v) }).collect())
}

/// CRB of the target angle as the target sweeps the grid, with positions
/// `x` and a scaled identity-like beamformer at full power.
pub fn crb_rows(scene: &Scene, x: &AntennaPositions, cfg: &SystemConfig, grid_deg: &[f64]) -> Result<Vec<AngleRow>> {
    let f = scaled_unitary_beamformer(x.len(), cfg.n_streams(), cfg.tx_power);
    let mut probe = scene.clone();
    grid_deg
        .iter()
        .map(|&theta_deg| {
            probe.target.angle = theta_deg.to_radians();
            let value = match crb_theta(&fim(&probe, x, &f, cfg)?) {
                Ok(v) => Some(v),
                Err(Error::SingularFim { .. }) => None,
                Err(e) => return Err(e),
            };
            Ok(AngleRow { theta_deg, value })
        })
        .collect()
}

pub fn write_angle_rows(path: &Path, rows: &[AngleRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Solves one scene and writes its beampattern.
pub fn emit_beampattern(
    scene: &Scene,
    cfg: &SystemConfig,
    scheme: Scheme,
    seed: u64,
    step_deg: f64,
    path: &Path,
) -> Result<(SolveResult, Vec<AngleRow>)> {
    let grid = angle_grid_deg(step_deg)?;
    let solved = solve(scene, cfg, scheme, seed)?;
    let rows = beampattern_rows(&solved.positions, &solved.beamformer, cfg, &grid)?;
    write_angle_rows(path, &rows)?;
    Ok((solved, rows))
}

/// Solves one scene for the antenna positions and writes the CRB curve.
pub fn emit_crb_sweep(
    scene: &Scene,
    cfg: &SystemConfig,
    scheme: Scheme,
    seed: u64,
    step_deg: f64,
    path: &Path,
) -> Result<(SolveResult, Vec<AngleRow>)> {
    let grid = angle_grid_deg(step_deg)?;
    let solved = solve(scene, cfg, scheme, seed)?;
    let rows = crb_rows(scene, &solved.positions, cfg, &grid)?;
    write_angle_rows(path, &rows)?;
    Ok((solved, rows))
}
