//! True (untransformed) performance metrics: SINR, rates, SCNR, sensing MI
//! and the weighted objective.

use std::f64::consts::LN_2;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{steer, user_channels, AntennaPositions, Beamformer, CMatrix, CVector, Scene, SystemConfig};

/// Channels of one scene evaluated at one antenna placement.
#[derive(Debug, Clone)]
pub struct Channels {
    /// User channels as columns, N×K.
    pub users: CMatrix,
    pub target: CVector,
    pub clutter: Vec<CVector>,
}

impl Channels {
    pub fn new(scene: &Scene, x: &[f64], wavelength: f64) -> Self {
        Self {
            users: user_channels(scene, x, wavelength),
            target: steer(x, scene.target.angle, wavelength),
            clutter: scene.clutter.iter().map(|c| steer(x, c.angle, wavelength)).collect(),
        }
    }

    /// K×(K+1) matrix of h_kᴴ f_j.
    pub fn user_gains(&self, f: &Beamformer) -> CMatrix {
        self.users.adjoint() * f.matrix()
    }
}

/// Power components of a SINR-type ratio: the useful term and everything
/// else in the denominator (interference + noise).
#[derive(Debug, Clone, Copy)]
pub(crate) struct RatioTerms {
    pub signal: f64,
    pub rest: f64,
}

impl RatioTerms {
    pub fn ratio(&self) -> f64 {
        self.signal / self.rest
    }

    pub fn total(&self) -> f64 {
        self.signal + self.rest
    }
}

/// Terms of user `k`'s SINR from the K×(K+1) gain matrix.
pub(crate) fn comm_terms(gains: &CMatrix, k: usize, noise: f64) -> RatioTerms {
    comm_terms_row(gains.row(k).iter(), k, noise)
}

/// Stream `k` is the signal, every other entry of the row interferes.
fn comm_terms_row<'a>(row: impl Iterator<Item = &'a num_complex::Complex64>, k: usize, noise: f64) -> RatioTerms {
    let (mut signal, mut interference) = (0.0, 0.0);
    for (j, g) in row.enumerate() {
        if j == k {
            signal = g.norm_sqr();
        } else {
            interference += g.norm_sqr();
        }
    }
    RatioTerms { signal, rest: interference + noise }
}

/// ‖α a^H F‖².
pub(crate) fn echo_power(coeff: num_complex::Complex64, a: &CVector, f: &Beamformer) -> f64 {
    coeff.norm_sqr() * (a.adjoint() * f.matrix()).norm_squared()
}

pub(crate) fn sense_terms(scene: &Scene, ch: &Channels, f: &Beamformer, noise: f64) -> RatioTerms {
    let signal = echo_power(scene.target.coeff, &ch.target, f);
    let clutter: f64 = scene
        .clutter
        .iter()
        .zip(&ch.clutter)
        .map(|(c, a)| echo_power(c.coeff, a, f))
        .sum();
    RatioTerms { signal, rest: clutter + noise }
}

fn check_dims(scene: &Scene, x: &AntennaPositions, f: &Beamformer) -> Result<()> {
    if f.n_antennas() != x.len() {
        return Err(Error::Dimension(format!(
            "beamformer has {} rows for {} antennas",
            f.n_antennas(),
            x.len()
        )));
    }
    if f.n_streams() != scene.n_users() + 1 {
        return Err(Error::Dimension(format!(
            "beamformer has {} columns, expected {}",
            f.n_streams(),
            scene.n_users() + 1
        )));
    }
    Ok(())
}

/// SINR of user `k` (zero-based).
pub fn sinr(scene: &Scene, x: &AntennaPositions, f: &Beamformer, k: usize, cfg: &SystemConfig) -> Result<f64> {
    check_dims(scene, x, f)?;
    if k >= scene.n_users() {
        return Err(Error::IndexOutOfRange { what: "user", index: k, len: scene.n_users() });
    }
    let paths = &scene.users[k];
    let h = crate::model::channel_from_paths(paths, x.as_slice(), cfg.wavelength);
    let gains = h.adjoint() * f.matrix();
    Ok(comm_terms_row(gains.iter(), k, cfg.noise_user[k]).ratio())
}

/// Radar signal-to-clutter-plus-noise ratio.
pub fn scnr(scene: &Scene, x: &AntennaPositions, f: &Beamformer, cfg: &SystemConfig) -> Result<f64> {
    check_dims(scene, x, f)?;
    let ch = Channels::new(scene, x.as_slice(), cfg.wavelength);
    Ok(sense_terms(scene, &ch, f, cfg.noise_sense).ratio())
}

/// Sensing mutual information in bits: log2(1 + SCNR).
pub fn sensing_mi_bits(scnr: f64) -> f64 {
    (1.0 + scnr).log2()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub sinr: Vec<f64>,
    pub rate_bits: Vec<f64>,
    pub scnr: f64,
    pub mi_bits: f64,
    pub objective_bits: f64,
    pub objective_nats: f64,
}

impl MetricsReport {
    pub fn sum_rate_bits(&self) -> f64 {
        self.rate_bits.iter().sum()
    }

    pub fn scnr_db(&self) -> f64 {
        10.0 * self.scnr.log10()
    }
}

/// Evaluates every metric and the weighted objective.
pub fn objective(scene: &Scene, x: &AntennaPositions, f: &Beamformer, cfg: &SystemConfig) -> Result<MetricsReport> {
    check_dims(scene, x, f)?;
    let ch = Channels::new(scene, x.as_slice(), cfg.wavelength);
    Ok(report_from_channels(scene, &ch, f, cfg))
}

pub(crate) fn report_from_channels(scene: &Scene, ch: &Channels, f: &Beamformer, cfg: &SystemConfig) -> MetricsReport {
    let gains = ch.user_gains(f);
    let sinr: Vec<f64> = (0..scene.n_users())
        .map(|k| comm_terms(&gains, k, cfg.noise_user[k]).ratio())
        .collect();
    let rate_bits: Vec<f64> = sinr.iter().map(|s| (1.0 + s).log2()).collect();
    let scnr = sense_terms(scene, ch, f, cfg.noise_sense).ratio();
    let mi_bits = sensing_mi_bits(scnr);
    let objective_bits = cfg.weight_comm * rate_bits.iter().sum::<f64>() + cfg.weight_sense * mi_bits;
    MetricsReport {
        sinr,
        rate_bits,
        scnr,
        mi_bits,
        objective_bits,
        objective_nats: LN_2 * objective_bits,
    }
}
