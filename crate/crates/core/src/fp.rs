//! Fractional-programming surrogate of the weighted rate + MI objective and
//! the closed-form updates of its auxiliary variables.
//!
//! The surrogate combines a Lagrangian dual transform (auxiliary `mu`) with a
//! quadratic transform (auxiliaries `xi_c`, `xi_s`):
//!
//! ```text
//! G̃ = Σ_k ϖ_k [ln(1+μ_k) − μ_k]
//!   + ϖ_c Σ_k [2√(1+μ_k) Re{ξ_k^c h_kᴴ f_k} − |ξ_k^c|² (Σ_j |h_kᴴ f_j|² + σ_k²)]
//!   + ϖ_s [2√(1+μ_{K+1}) Re{α_s a_sᴴ F ξ^s} − ‖ξ^s‖² (Σ_c ‖α_c a_cᴴ F‖² + ‖α_s a_sᴴ F‖² + σ_s²)]
//! ```
//!
//! All values are in nats.

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{comm_terms, sense_terms, Channels};
use crate::model::{AntennaPositions, Beamformer, CMatrix, CVector, Scene, SystemConfig};

/// How the quadratic-transform auxiliaries are refreshed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum XiMode {
    /// ξ scaled by √(1+γ) with γ the current SINR/SCNR, the joint maximizer
    /// of the surrogate over (μ, ξ). A subsequent μ update makes the
    /// surrogate equal the true objective.
    #[default]
    StandardFp,
    /// ξ = (numerator)/(full denominator), without the √(1+μ) factor.
    PaperLiteral,
}

impl std::str::FromStr for XiMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard-fp" => Ok(Self::StandardFp),
            "paper-literal" => Ok(Self::PaperLiteral),
            other => Err(Error::InvalidConfig(format!("unknown xi mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuxiliaryState {
    /// Length K+1; the last entry belongs to the sensing term.
    pub mu: Vec<f64>,
    /// Length K.
    pub xi_c: CVector,
    /// Length K+1.
    pub xi_s: CVector,
}

impl AuxiliaryState {
    pub fn zeros(n_users: usize) -> Self {
        Self {
            mu: vec![0.0; n_users + 1],
            xi_c: CVector::zeros(n_users),
            xi_s: CVector::zeros(n_users + 1),
        }
    }

    pub fn n_users(&self) -> usize {
        self.xi_c.len()
    }

    fn check(&self, n_users: usize) -> Result<()> {
        if self.mu.len() != n_users + 1 || self.xi_c.len() != n_users || self.xi_s.len() != n_users + 1 {
            return Err(Error::Dimension(format!(
                "auxiliary state sized for {} users, scene has {n_users}",
                self.xi_c.len()
            )));
        }
        Ok(())
    }
}

/// Surrogate value with its per-term breakdown.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateValue {
    pub value_nats: f64,
    /// Weighted per-user quadratic-transform terms (without the σ_k² part).
    pub comm_terms: Vec<f64>,
    /// Weighted sensing quadratic-transform term (without the σ_s² part).
    pub sensing_term: f64,
    /// Part independent of F and x: the μ terms and the noise terms.
    pub constant: f64,
}

/// Evaluates the surrogate.
pub fn surrogate_eval(
    scene: &Scene,
    x: &AntennaPositions,
    f: &Beamformer,
    aux: &AuxiliaryState,
    cfg: &SystemConfig,
) -> Result<SurrogateValue> {
    aux.check(scene.n_users())?;
    if f.n_antennas() != x.len() || f.n_streams() != scene.n_users() + 1 {
        return Err(Error::Dimension("beamformer does not match scene and positions".into()));
    }
    let ch = Channels::new(scene, x.as_slice(), cfg.wavelength);
    Ok(surrogate_from_channels(scene, &ch, f, aux, cfg))
}

/// μ/noise constant shared by the surrogate and the SP.1 quadratic form.
pub(crate) fn surrogate_constant(aux: &AuxiliaryState, cfg: &SystemConfig) -> f64 {
    let k = aux.n_users();
    let (wc, ws) = (cfg.weight_comm, cfg.weight_sense);
    let mu_terms: f64 = aux.mu[..k].iter().map(|&m| wc * (m.ln_1p() - m)).sum::<f64>()
        + ws * (aux.mu[k].ln_1p() - aux.mu[k]);
    let noise_terms: f64 = aux
        .xi_c
        .iter()
        .zip(&cfg.noise_user)
        .map(|(xi, s)| wc * xi.norm_sqr() * s)
        .sum::<f64>()
        + ws * aux.xi_s.norm_squared() * cfg.noise_sense;
    mu_terms - noise_terms
}

pub(crate) fn surrogate_from_channels(
    scene: &Scene,
    ch: &Channels,
    f: &Beamformer,
    aux: &AuxiliaryState,
    cfg: &SystemConfig,
) -> SurrogateValue {
    let k_users = scene.n_users();
    let (wc, ws) = (cfg.weight_comm, cfg.weight_sense);
    let gains = ch.user_gains(f);
    let comm: Vec<f64> = (0..k_users)
        .map(|k| {
            let xi = aux.xi_c[k];
            let linear = 2.0 * (1.0 + aux.mu[k]).sqrt() * (xi * gains[(k, k)]).re;
            let received: f64 = gains.row(k).iter().map(|g| g.norm_sqr()).sum();
            wc * (linear - xi.norm_sqr() * received)
        })
        .collect();
    let sensing = {
        let beam = sensing_beam(&ch.target, f);
        let linear = 2.0 * (1.0 + aux.mu[k_users]).sqrt() * (scene.target.coeff * beam.dot(&aux.xi_s)).re;
        let echoes = sense_terms(scene, ch, f, 0.0).total();
        ws * (linear - aux.xi_s.norm_squared() * echoes)
    };
    let constant = surrogate_constant(aux, cfg);
    SurrogateValue {
        value_nats: comm.iter().sum::<f64>() + sensing + constant,
        comm_terms: comm,
        sensing_term: sensing,
        constant,
    }
}

/// a_sᴴ F as a plain (transposed) vector of length K+1.
pub(crate) fn sensing_beam(a: &CVector, f: &Beamformer) -> CVector {
    f.matrix().ad_mul(a).map(|z| z.conj())
}

/// Result of a μ update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuUpdate {
    pub mu: f64,
    /// The stationary root was negative and has been clamped to zero.
    pub clamped: bool,
}

/// Stationary point of ln(1+μ) − μ + 2√(1+μ)·R in μ: (R² + R√(R²+4))/2.
pub fn update_mu(r: f64) -> MuUpdate {
    let mu = 0.5 * (r * r + r * (r * r + 4.0).sqrt());
    if mu < 0.0 {
        MuUpdate { mu: 0.0, clamped: true }
    } else {
        MuUpdate { mu, clamped: false }
    }
}

/// The R_k values feeding the μ update: Re{ξ_k^c h_kᴴ f_k} for users and
/// Re{α_s a_sᴴ F ξ^s} for the sensing term.
pub(crate) fn mu_drivers(scene: &Scene, ch: &Channels, f: &Beamformer, aux: &AuxiliaryState) -> Vec<f64> {
    let gains = ch.user_gains(f);
    let mut r: Vec<f64> = (0..scene.n_users()).map(|k| (aux.xi_c[k] * gains[(k, k)]).re).collect();
    let beam = sensing_beam(&ch.target, f);
    r.push((scene.target.coeff * beam.dot(&aux.xi_s)).re);
    r
}

/// Replaces every μ by its closed-form update; returns how many were clamped.
pub fn update_mu_all(
    scene: &Scene,
    x: &AntennaPositions,
    f: &Beamformer,
    aux: &mut AuxiliaryState,
    cfg: &SystemConfig,
) -> Result<usize> {
    aux.check(scene.n_users())?;
    let ch = Channels::new(scene, x.as_slice(), cfg.wavelength);
    Ok(update_mu_from_channels(scene, &ch, f, aux))
}

pub(crate) fn update_mu_from_channels(scene: &Scene, ch: &Channels, f: &Beamformer, aux: &mut AuxiliaryState) -> usize {
    let drivers = mu_drivers(scene, ch, f, aux);
    let mut clamped = 0;
    for (m, r) in aux.mu.iter_mut().zip(drivers) {
        let u = update_mu(r);
        clamped += usize::from(u.clamped);
        *m = u.mu;
    }
    clamped
}

/// Quadratic-transform auxiliary update; μ is carried over unchanged.
pub fn update_xi(
    scene: &Scene,
    x: &AntennaPositions,
    f: &Beamformer,
    aux: &AuxiliaryState,
    cfg: &SystemConfig,
    mode: XiMode,
) -> Result<AuxiliaryState> {
    aux.check(scene.n_users())?;
    let ch = Channels::new(scene, x.as_slice(), cfg.wavelength);
    Ok(update_xi_from_channels(scene, &ch, f, aux, cfg, mode))
}

pub(crate) fn update_xi_from_channels(
    scene: &Scene,
    ch: &Channels,
    f: &Beamformer,
    aux: &AuxiliaryState,
    cfg: &SystemConfig,
    mode: XiMode,
) -> AuxiliaryState {
    let k_users = scene.n_users();
    let gains: CMatrix = ch.user_gains(f);
    let scale = |signal: f64, rest: f64| match mode {
        XiMode::StandardFp => (1.0 + signal / rest).sqrt(),
        XiMode::PaperLiteral => 1.0,
    };
    let xi_c = DVector::from_iterator(
        k_users,
        (0..k_users).map(|k| {
            let t = comm_terms(&gains, k, cfg.noise_user[k]);
            gains[(k, k)].conj() * (scale(t.signal, t.rest) / t.total())
        }),
    );
    let t = sense_terms(scene, ch, f, cfg.noise_sense);
    // α_s* Fᴴ a_s
    let numerator = f.matrix().ad_mul(&ch.target) * scene.target.coeff.conj();
    let xi_s = numerator * Complex64::from(scale(t.signal, t.rest) / t.total());
    AuxiliaryState { mu: aux.mu.clone(), xi_c, xi_s }
}

/// ξ update followed by μ update. In standard-fp mode this is the joint
/// maximizer over all auxiliaries, after which the surrogate equals the
/// true objective in nats. Returns the number of clamped μ entries.
pub fn refresh_aux(
    scene: &Scene,
    x: &AntennaPositions,
    f: &Beamformer,
    aux: &AuxiliaryState,
    cfg: &SystemConfig,
    mode: XiMode,
) -> Result<(AuxiliaryState, usize)> {
    aux.check(scene.n_users())?;
    let ch = Channels::new(scene, x.as_slice(), cfg.wavelength);
    let mut next = update_xi_from_channels(scene, &ch, f, aux, cfg, mode);
    let clamped = update_mu_from_channels(scene, &ch, f, &mut next);
    Ok((next, clamped))
}
