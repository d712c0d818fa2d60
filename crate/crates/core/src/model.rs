//! Problem data and channel synthesis.
//!
//! Everything geometric lives here: the system configuration, one channel
//! realization ([`Scene`]), antenna coordinates and the beamforming matrix,
//! plus the field-response (steering) vectors built from antenna positions.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fp::XiMode;
use crate::position::GaConfig;
use crate::sensing::CrossTermConvention;
use crate::solver::SolverConfig;

pub type CVector = DVector<Complex64>;
pub type CMatrix = DMatrix<Complex64>;

/// Scalar parameters of one system instance. Internal units: radians,
/// meters, watts (linear).
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    pub n_antennas: usize,
    pub n_users: usize,
    pub n_clutters: usize,
    pub n_paths: usize,
    pub tx_power: f64,
    pub wavelength: f64,
    /// Per-user noise power, length `n_users`.
    pub noise_user: Vec<f64>,
    pub noise_sense: f64,
    pub weight_comm: f64,
    pub weight_sense: f64,
    pub region_min: f64,
    pub region_max: f64,
    pub min_spacing: f64,
    pub n_sense_symbols: usize,
    /// Fixed target angle; `None` draws it uniformly per scene.
    pub target_angle: Option<f64>,
    /// Fixed clutter angles; `None` draws them uniformly per scene.
    pub clutter_angles: Option<Vec<f64>>,
    pub xi_mode: XiMode,
    pub fim_cross_term: CrossTermConvention,
    pub ga: GaConfig,
    pub solver: SolverConfig,
}

impl SystemConfig {
    /// Simulation defaults: K=4 users, C=3 clutters, 13 paths, 0 dB SNR,
    /// λ = 0.1 m, unit noise, equal weights, region [0, 10λ], D0 = λ/2,
    /// target at 60°.
    pub fn paper_default(n_antennas: usize) -> Self {
        let wavelength = 0.1;
        let n_users = 4;
        Self {
            n_antennas,
            n_users,
            n_clutters: 3,
            n_paths: 13,
            tx_power: 1.0,
            wavelength,
            noise_user: vec![1.0; n_users],
            noise_sense: 1.0,
            weight_comm: 0.5,
            weight_sense: 0.5,
            region_min: 0.0,
            region_max: 10.0 * wavelength,
            min_spacing: 0.5 * wavelength,
            n_sense_symbols: 64,
            target_angle: Some(PI / 3.0),
            clutter_angles: None,
            xi_mode: XiMode::StandardFp,
            fim_cross_term: CrossTermConvention::Printed,
            ga: GaConfig::for_wavelength(wavelength),
            solver: SolverConfig::default(),
        }
    }

    pub fn n_streams(&self) -> usize {
        self.n_users + 1
    }

    /// Sets the transmit power from an SNR in dB, referenced to the
    /// sensing-receiver noise power.
    pub fn set_snr_db(&mut self, snr_db: f64) {
        self.tx_power = 10f64.powf(snr_db / 10.0) * self.noise_sense;
    }

    pub fn snr_db(&self) -> f64 {
        10.0 * (self.tx_power / self.noise_sense).log10()
    }

    /// Sets both weights from the communication weight.
    pub fn set_weight_comm(&mut self, weight_comm: f64) {
        self.weight_comm = weight_comm;
        self.weight_sense = 1.0 - weight_comm;
    }

    /// Changes the user count, resizing the per-user noise vector with the
    /// first user's noise power.
    pub fn set_n_users(&mut self, n_users: usize) {
        let fill = self.noise_user.first().copied().unwrap_or(1.0);
        self.noise_user.resize(n_users, fill);
        self.n_users = n_users;
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_antennas == 0 || self.n_users == 0 || self.n_paths == 0 {
            return Err(invalid("antenna, user and path counts must be positive"));
        }
        if self.noise_user.len() != self.n_users {
            return Err(invalid(format!(
                "noise_user has {} entries for {} users",
                self.noise_user.len(),
                self.n_users
            )));
        }
        let positive = [
            ("tx_power", self.tx_power),
            ("wavelength", self.wavelength),
            ("noise_sense", self.noise_sense),
            ("min_spacing", self.min_spacing),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.noise_user.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(invalid("user noise powers must be positive"));
        }
        for (name, w) in [("weight_comm", self.weight_comm), ("weight_sense", self.weight_sense)] {
            if !(0.0..=1.0).contains(&w) {
                return Err(invalid(format!("{name} must lie in [0, 1], got {w}")));
            }
        }
        if (self.weight_comm + self.weight_sense - 1.0).abs() > 1e-12 {
            return Err(invalid("weight_comm + weight_sense must equal 1"));
        }
        if !(self.region_max > self.region_min) {
            return Err(invalid("region_max must exceed region_min"));
        }
        let needed = (self.n_antennas as f64 - 1.0) * self.min_spacing;
        if self.region_max - self.region_min < needed {
            return Err(invalid(format!(
                "region [{}, {}] cannot hold {} antennas spaced {}",
                self.region_min, self.region_max, self.n_antennas, self.min_spacing
            )));
        }
        if self.n_sense_symbols == 0 {
            return Err(invalid("n_sense_symbols must be positive"));
        }
        let in_range = |a: f64| (0.0..=PI).contains(&a);
        if let Some(t) = self.target_angle {
            if !in_range(t) {
                return Err(invalid("target angle must lie in [0, π]"));
            }
        }
        if let Some(c) = &self.clutter_angles {
            if c.len() != self.n_clutters {
                return Err(invalid(format!(
                    "{} clutter angles given for {} clutters",
                    c.len(),
                    self.n_clutters
                )));
            }
            if !c.iter().copied().all(in_range) {
                return Err(invalid("clutter angles must lie in [0, π]"));
            }
        }
        self.ga.validate()?;
        self.solver.validate()?;
        Ok(())
    }

    /// Half-wavelength ULA starting at `region_min` (spacing widened to the
    /// minimum spacing if that is larger).
    pub fn ula(&self) -> AntennaPositions {
        let d = (0.5 * self.wavelength).max(self.min_spacing);
        let mut x = Vec::with_capacity(self.n_antennas);
        let mut next = self.region_min;
        for _ in 0..self.n_antennas {
            x.push(next);
            let prev = next;
            next = prev + d;
            // Keep the spacing test exact in floating point.
            while next - prev < d {
                next = next.next_up();
            }
        }
        AntennaPositions::new(x)
    }
}

/// One propagation path of a user channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Path {
    pub angle: f64,
    pub gain: Complex64,
}

/// A point reflector (target or clutter) seen along a single LoS path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reflector {
    pub angle: f64,
    pub coeff: Complex64,
}

/// One channel realization.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    /// `users[k][l]` is path `l` of user `k`.
    pub users: Vec<Vec<Path>>,
    pub target: Reflector,
    pub clutter: Vec<Reflector>,
}

impl Scene {
    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_paths(&self) -> usize {
        self.users.first().map_or(0, Vec::len)
    }

    pub fn check_against(&self, cfg: &SystemConfig) -> Result<()> {
        if self.users.len() != cfg.n_users {
            return Err(Error::Dimension(format!(
                "scene has {} users, config {}",
                self.users.len(),
                cfg.n_users
            )));
        }
        if self.users.iter().any(|u| u.len() != cfg.n_paths) {
            return Err(Error::Dimension(format!("every user needs {} paths", cfg.n_paths)));
        }
        if self.clutter.len() != cfg.n_clutters {
            return Err(Error::Dimension(format!(
                "scene has {} clutters, config {}",
                self.clutter.len(),
                cfg.n_clutters
            )));
        }
        let angles = self
            .users
            .iter()
            .flatten()
            .map(|p| p.angle)
            .chain(std::iter::once(self.target.angle))
            .chain(self.clutter.iter().map(|c| c.angle));
        for a in angles {
            if !(0.0..=PI).contains(&a) {
                return Err(invalid(format!("angle {a} outside [0, π]")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&SceneDoc::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: SceneDoc = serde_json::from_str(s)?;
        Ok(doc.into())
    }
}

#[derive(Serialize, Deserialize)]
struct PathDoc {
    angle_deg: f64,
    gain: Complex64,
}

#[derive(Serialize, Deserialize)]
struct ReflectorDoc {
    angle_deg: f64,
    coeff: Complex64,
}

/// On-disk scene: degrees, complex values as `[re, im]`.
#[derive(Serialize, Deserialize)]
struct SceneDoc {
    users: Vec<Vec<PathDoc>>,
    target: ReflectorDoc,
    clutter: Vec<ReflectorDoc>,
}

impl From<&Reflector> for ReflectorDoc {
    fn from(r: &Reflector) -> Self {
        Self { angle_deg: r.angle.to_degrees(), coeff: r.coeff }
    }
}

impl From<ReflectorDoc> for Reflector {
    fn from(r: ReflectorDoc) -> Self {
        Self { angle: r.angle_deg.to_radians(), coeff: r.coeff }
    }
}

impl From<&Scene> for SceneDoc {
    fn from(s: &Scene) -> Self {
        Self {
            users: s
                .users
                .iter()
                .map(|u| u.iter().map(|p| PathDoc { angle_deg: p.angle.to_degrees(), gain: p.gain }).collect())
                .collect(),
            target: (&s.target).into(),
            clutter: s.clutter.iter().map(Into::into).collect(),
        }
    }
}

impl From<SceneDoc> for Scene {
    fn from(d: SceneDoc) -> Self {
        Self {
            users: d
                .users
                .into_iter()
                .map(|u| u.into_iter().map(|p| Path { angle: p.angle_deg.to_radians(), gain: p.gain }).collect())
                .collect(),
            target: d.target.into(),
            clutter: d.clutter.into_iter().map(Into::into).collect(),
        }
    }
}

/// Antenna coordinates along the line, meters.
#[derive(Debug, Clone, PartialEq)]
pub struct AntennaPositions(pub Vec<f64>);

impl AntennaPositions {
    pub fn new(x: Vec<f64>) -> Self {
        Self(x)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Region and pairwise minimum-spacing constraints, checked exactly.
    pub fn is_feasible(&self, region_min: f64, region_max: f64, min_spacing: f64) -> bool {
        if self.0.iter().any(|&v| !(v >= region_min && v <= region_max)) {
            return false;
        }
        let mut sorted = self.0.clone();
        sorted.sort_by(f64::total_cmp);
        sorted.windows(2).all(|w| w[1] - w[0] >= min_spacing)
    }

    pub fn is_feasible_for(&self, cfg: &SystemConfig) -> bool {
        self.len() == cfg.n_antennas && self.is_feasible(cfg.region_min, cfg.region_max, cfg.min_spacing)
    }
}

/// Beamforming matrix, N rows by K+1 columns; column k feeds stream k and
/// the last column is the dedicated sensing stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Beamformer(pub CMatrix);

impl Beamformer {
    pub fn zeros(n_antennas: usize, n_streams: usize) -> Self {
        Self(CMatrix::zeros(n_antennas, n_streams))
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn n_antennas(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_streams(&self) -> usize {
        self.0.ncols()
    }

    /// trace(FᴴF).
    pub fn power(&self) -> f64 {
        self.0.norm_squared()
    }

    /// Rescales so that trace(FᴴF) equals `power`. A zero matrix stays zero.
    pub fn scaled_to_power(mut self, power: f64) -> Self {
        let p = self.power();
        if p > 0.0 {
            self.0 *= Complex64::from((power / p).sqrt());
        }
        self
    }
}

#[inline]
pub(crate) fn wavenumber(wavelength: f64) -> f64 {
    2.0 * PI / wavelength
}

/// Field-response vector: element n is exp(j·2π/λ·x_n·cos θ).
pub fn steering_vector(x: &[f64], angle: f64, wavelength: f64) -> Result<CVector> {
    if !(wavelength > 0.0) {
        return Err(invalid(format!("wavelength must be positive, got {wavelength}")));
    }
    let kc = wavenumber(wavelength) * angle.cos();
    Ok(CVector::from_iterator(x.len(), x.iter().map(|&xn| Complex64::cis(kc * xn))))
}

/// Infallible variant for internal callers holding a validated wavelength.
#[inline]
pub(crate) fn steer(x: &[f64], angle: f64, wavelength: f64) -> CVector {
    let kc = wavenumber(wavelength) * angle.cos();
    CVector::from_iterator(x.len(), x.iter().map(|&xn| Complex64::cis(kc * xn)))
}

/// Channel of user `k` (zero-based): sqrt(N/Lp)·Σ_l ρ_{k,l}·a(x, θ_{k,l}).
pub fn user_channel(scene: &Scene, k: usize, x: &[f64], wavelength: f64) -> Result<CVector> {
    let paths = scene.users.get(k).ok_or(Error::IndexOutOfRange {
        what: "user",
        index: k,
        len: scene.users.len(),
    })?;
    if !(wavelength > 0.0) {
        return Err(invalid(format!("wavelength must be positive, got {wavelength}")));
    }
    Ok(channel_from_paths(paths, x, wavelength))
}

pub(crate) fn channel_from_paths(paths: &[Path], x: &[f64], wavelength: f64) -> CVector {
    let n = x.len();
    let scale = (n as f64 / paths.len() as f64).sqrt();
    let kw = wavenumber(wavelength);
    CVector::from_iterator(
        n,
        x.iter().map(|&xn| {
            paths
                .iter()
                .map(|p| p.gain * Complex64::cis(kw * xn * p.angle.cos()))
                .sum::<Complex64>()
                * scale
        }),
    )
}

/// All user channels as columns of an N×K matrix.
pub(crate) fn user_channels(scene: &Scene, x: &[f64], wavelength: f64) -> CMatrix {
    let mut h = CMatrix::zeros(x.len(), scene.users.len());
    for (k, paths) in scene.users.iter().enumerate() {
        h.set_column(k, &channel_from_paths(paths, x, wavelength));
    }
    h
}

/// Circularly-symmetric complex Gaussian with unit variance.
pub fn sample_cn<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Draws one scene: angles uniform on [0, π] (unless fixed by the config),
/// all complex gains i.i.d. CN(0, 1). Deterministic in `seed`.
pub fn sample_scene(cfg: &SystemConfig, seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let users = (0..cfg.n_users)
        .map(|_| {
            (0..cfg.n_paths)
                .map(|_| {
                    let angle = rng.random_range(0.0..=PI);
                    Path { angle, gain: sample_cn(&mut rng) }
                })
                .collect()
        })
        .collect();
    let target_angle = rng.random_range(0.0..=PI);
    let target = Reflector {
        angle: cfg.target_angle.unwrap_or(target_angle),
        coeff: sample_cn(&mut rng),
    };
    let clutter = (0..cfg.n_clutters)
        .map(|c| {
            let drawn = rng.random_range(0.0..=PI);
            let angle = cfg.clutter_angles.as_ref().map_or(drawn, |a| a[c]);
            Reflector { angle, coeff: sample_cn(&mut rng) }
        })
        .collect();
    Scene { users, target, clutter }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const LAMBDA: f64 = 0.1;

    fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn steering_vector_examples() {
        let v = steering_vector(&[0.0], 1.234, LAMBDA).unwrap();
        assert!(close(v[0], Complex64::new(1.0, 0.0), 1e-15));

        let v = steering_vector(&[0.0, LAMBDA / 2.0], PI / 2.0, LAMBDA).unwrap();
        assert!(close(v[0], 1.0.into(), 1e-15));
        assert!(close(v[1], 1.0.into(), 1e-15));

        let v = steering_vector(&[0.0, LAMBDA / 2.0], 0.0, LAMBDA).unwrap();
        assert!(close(v[1], (-1.0).into(), 1e-15));
    }

    #[test]
    fn steering_vector_rejects_bad_wavelength() {
        assert!(matches!(steering_vector(&[0.0], 0.3, 0.0), Err(Error::InvalidConfig(_))));
        assert!(matches!(steering_vector(&[0.0], 0.3, -1.0), Err(Error::InvalidConfig(_))));
    }

    fn one_path_scene(angle: f64) -> Scene {
        Scene {
            users: vec![vec![Path { angle, gain: 1.0.into() }]],
            target: Reflector { angle: 1.0, coeff: 1.0.into() },
            clutter: vec![],
        }
    }

    #[test]
    fn user_channel_examples() {
        let h = user_channel(&one_path_scene(0.7), 0, &[0.0], LAMBDA).unwrap();
        assert!(close(h[0], 1.0.into(), 1e-15));

        let h = user_channel(&one_path_scene(PI / 2.0), 0, &[0.0, LAMBDA / 2.0], LAMBDA).unwrap();
        let s2 = 2f64.sqrt();
        assert!(close(h[0], s2.into(), 1e-15));
        assert!(close(h[1], s2.into(), 1e-15));
    }

    #[test]
    fn user_channel_index_out_of_range() {
        let err = user_channel(&one_path_scene(0.5), 3, &[0.0], LAMBDA).unwrap_err();
        assert!(matches!(err, Error::IndexOutOfRange { index: 3, len: 1, .. }));
    }

    #[test]
    fn user_channel_matches_triple_loop() {
        let mut cfg = SystemConfig::paper_default(4);
        cfg.n_paths = 3;
        let scene = sample_scene(&cfg, 11);
        let x = [0.013, 0.071, 0.2, 0.33];
        for k in 0..cfg.n_users {
            let h = user_channel(&scene, k, &x, LAMBDA).unwrap();
            for n in 0..4 {
                let mut acc = Complex64::new(0.0, 0.0);
                for l in 0..3 {
                    let p = scene.users[k][l];
                    let phase = 2.0 * PI / LAMBDA * x[n] * p.angle.cos();
                    acc += p.gain * Complex64::new(phase.cos(), phase.sin());
                }
                acc *= (4.0f64 / 3.0).sqrt();
                assert!((h[n] - acc).norm() <= 1e-12 * acc.norm().max(1.0));
            }
        }
    }

    #[test]
    fn sample_scene_is_deterministic() {
        let cfg = SystemConfig::paper_default(4);
        assert_eq!(sample_scene(&cfg, 42), sample_scene(&cfg, 42));
        assert_ne!(sample_scene(&cfg, 42), sample_scene(&cfg, 43));
    }

    #[test]
    fn sample_scene_fixed_target_angle() {
        let cfg = SystemConfig::paper_default(4);
        let scene = sample_scene(&cfg, 5);
        assert_eq!(scene.target.angle, PI / 3.0);
        assert_eq!(scene.target.angle, 60f64.to_radians());
        scene.check_against(&cfg).unwrap();
    }

    #[test]
    fn cn_unit_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 100_000;
        let (mut p, mut mean) = (0.0, Complex64::new(0.0, 0.0));
        for _ in 0..n {
            let z = sample_cn(&mut rng);
            p += z.norm_sqr();
            mean += z;
        }
        let p = p / n as f64;
        assert!((p - 1.0).abs() < 0.02, "mean |ρ|² = {p}");
        assert!((mean / n as f64).norm() < 0.02);
    }

    #[test]
    fn scene_json_round_trip() {
        let cfg = SystemConfig::paper_default(4);
        let scene = sample_scene(&cfg, 9);
        let back = Scene::from_json(&scene.to_json().unwrap()).unwrap();
        for (a, b) in scene.users.iter().flatten().zip(back.users.iter().flatten()) {
            assert_relative_eq!(a.angle, b.angle, epsilon = 1e-14);
            assert_eq!(a.gain, b.gain);
        }
        assert_relative_eq!(back.target.angle, PI / 3.0, epsilon = 1e-15);
        let doc: serde_json::Value = serde_json::from_str(&scene.to_json().unwrap()).unwrap();
        assert!((doc["target"]["angle_deg"].as_f64().unwrap() - 60.0).abs() < 1e-12);
        assert!(doc["target"]["coeff"].is_array());
    }

    #[test]
    fn validate_rejects_cramped_region() {
        let mut cfg = SystemConfig::paper_default(8);
        cfg.region_max = 3.0 * cfg.min_spacing;
        assert!(cfg.validate().is_err());
        cfg.region_max = 7.0 * cfg.min_spacing;
        cfg.validate().unwrap();
        cfg.weight_sense = 0.9;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn ula_is_feasible() {
        for n in 1..=8 {
            let cfg = SystemConfig::paper_default(n);
            assert!(cfg.ula().is_feasible_for(&cfg));
        }
    }

    proptest! {
        #[test]
        fn steering_entries_unit_modulus(x in prop::collection::vec(-5.0f64..5.0, 1..8), th in 0.0f64..PI) {
            let v = steering_vector(&x, th, LAMBDA).unwrap();
            for z in v.iter() {
                prop_assert!((z.norm() - 1.0).abs() <= 1e-14);
            }
        }

        #[test]
        fn single_path_channel_translation(seed in 0u64..1000, delta in -1.0f64..1.0) {
            let mut cfg = SystemConfig::paper_default(4);
            cfg.n_paths = 1;
            let scene = sample_scene(&cfg, seed);
            let x = [0.0, 0.05, 0.12, 0.3];
            let xs: Vec<f64> = x.iter().map(|v| v + delta).collect();
            let h = user_channel(&scene, 0, &x, LAMBDA).unwrap();
            let hs = user_channel(&scene, 0, &xs, LAMBDA).unwrap();
            let inner = hs.dotc(&h).norm();
            prop_assert!((inner - h.norm_squared()).abs() <= 1e-10 * h.norm_squared().max(1.0));
        }
    }
}
