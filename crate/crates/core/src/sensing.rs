//! Sensing diagnostics: transmit beampattern and the angle CRB.

use nalgebra::{Matrix3, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::metrics::echo_power;
use crate::model::{steer, wavenumber, AntennaPositions, Beamformer, CMatrix, CVector, Scene, SystemConfig};

/// Sign convention of the angle/gain cross terms of the FIM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CrossTermConvention {
    /// Re{α ȧᴴFFᴴa} and Re{−jα ȧᴴFFᴴa}.
    #[default]
    Printed,
    /// The same with α replaced by its conjugate.
    Conjugated,
}

/// Condition number above which the FIM is treated as singular.
pub const MAX_FIM_CONDITION: f64 = 1e12;

/// BP(θ) = ‖aᴴ(θ) F‖² for each angle (radians).
pub fn beampattern(x: &AntennaPositions, f: &Beamformer, angles: &[f64], wavelength: f64) -> Result<Vec<f64>> {
    if angles.is_empty() {
        return Err(invalid("beampattern grid is empty"));
    }
    if f.n_antennas() != x.len() {
        return Err(Error::Dimension("beamformer rows differ from antenna count".into()));
    }
    if !(wavelength > 0.0) {
        return Err(invalid("wavelength must be positive"));
    }
    Ok(angles
        .iter()
        .map(|&th| echo_power(Complex64::new(1.0, 0.0), &steer(x.as_slice(), th, wavelength), f))
        .collect())
}

/// ∂a(x, θ)/∂θ: [ȧ]_n = −j κ x_n sinθ e^{jκ x_n cosθ}.
pub fn steering_derivative(x: &[f64], angle: f64, wavelength: f64) -> CVector {
    let kw = wavenumber(wavelength);
    CVector::from_iterator(
        x.len(),
        x.iter().map(|&xn| {
            Complex64::new(0.0, -kw * xn * angle.sin()) * Complex64::cis(kw * xn * angle.cos())
        }),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct FisherMatrix {
    /// Over [θ_s, Re α_s, Im α_s].
    pub j: Matrix3<f64>,
    pub effective_noise: f64,
    pub n_symbols: usize,
}

pub fn fim(scene: &Scene, x: &AntennaPositions, f: &Beamformer, cfg: &SystemConfig) -> Result<FisherMatrix> {
    if cfg.n_sense_symbols == 0 {
        return Err(invalid("n_sense_symbols must be at least 1"));
    }
    if f.n_antennas() != x.len() {
        return Err(Error::Dimension("beamformer rows differ from antenna count".into()));
    }
    let xs = x.as_slice();
    let lam = cfg.wavelength;
    let effective_noise = scene
        .clutter
        .iter()
        .map(|c| echo_power(c.coeff, &steer(xs, c.angle, lam), f))
        .sum::<f64>()
        + cfg.noise_sense;

    let a = steer(xs, scene.target.angle, lam);
    let da = steering_derivative(xs, scene.target.angle, lam);
    let fa = f.matrix().adjoint() * &a;
    let fda = f.matrix().adjoint() * &da;
    // ȧᴴFFᴴȧ, aᴴFFᴴa, ȧᴴFFᴴa
    let dd = fda.norm_squared();
    let aa = fa.norm_squared();
    let da_a = fda.dotc(&fa);

    let alpha = match cfg.fim_cross_term {
        CrossTermConvention::Printed => scene.target.coeff,
        CrossTermConvention::Conjugated => scene.target.coeff.conj(),
    };
    let scale = 2.0 * cfg.n_sense_symbols as f64 / effective_noise;
    let j_tt = scale * scene.target.coeff.norm_sqr() * dd;
    let j_rr = scale * aa;
    let j_tr = scale * (alpha * da_a).re;
    let j_ti = scale * (Complex64::new(0.0, -1.0) * alpha * da_a).re;
    let j = Matrix3::new(j_tt, j_tr, j_ti, j_tr, j_rr, 0.0, j_ti, 0.0, j_rr);
    Ok(FisherMatrix { j, effective_noise, n_symbols: cfg.n_sense_symbols })
}

/// [J⁻¹]₁₁ in radians².
pub fn crb_theta(fim: &FisherMatrix) -> Result<f64> {
    let eig = SymmetricEigen::new(fim.j);
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition <= MAX_FIM_CONDITION) {
        return Err(Error::SingularFim { condition });
    }
    let inv = fim.j.try_inverse().ok_or(Error::SingularFim { condition })?;
    Ok(inv[(0, 0)])
}

/// Identity-like N×S matrix scaled so that trace(FᴴF) = `power`.
pub fn scaled_unitary_beamformer(n_antennas: usize, n_streams: usize, power: f64) -> Beamformer {
    let m = CMatrix::identity(n_antennas, n_streams);
    let rank = n_antennas.min(n_streams).max(1) as f64;
    Beamformer(m * Complex64::new((power / rank).sqrt(), 0.0))
}

/// Uniform degree grid from `start` to `stop` inclusive.
pub fn degree_grid(start: f64, stop: f64, step: f64) -> Vec<f64> {
    let count = ((stop - start) / step).round() as usize + 1;
    (0..count).map(|i| start + i as f64 * step).collect()
}
