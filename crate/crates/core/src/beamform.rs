//! Beamforming update: with positions and auxiliaries fixed the surrogate is
//! a concave quadratic in F, maximized under the power budget by a
//! dual-regularized linear solve plus bisection on the dual variable.

use nalgebra::linalg::SymmetricEigen;
use nalgebra::DVector;
use num_complex::Complex64;

use crate::error::{invalid, Result};
use crate::fp::{surrogate_constant, AuxiliaryState};
use crate::metrics::Channels;
use crate::model::{AntennaPositions, Beamformer, CMatrix, Scene, SystemConfig};

/// Surrogate as Σ_k (2 Re{φ_kᴴ f_k} − f_kᴴ Λ f_k) + B.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticForm {
    /// Hermitian PSD, shared by every stream.
    pub lambda: CMatrix,
    /// Column k is φ_k.
    pub phi: CMatrix,
    pub constant: f64,
}

impl QuadraticForm {
    /// Σ_k (2 Re{φ_kᴴ f_k} − f_kᴴ Λ f_k), the F-dependent part.
    pub fn sp1_objective(&self, f: &Beamformer) -> f64 {
        let fm = f.matrix();
        let lin: f64 = self.phi.iter().zip(fm.iter()).map(|(p, v)| (p.conj() * v).re).sum();
        let quad = (fm.adjoint() * &self.lambda * fm).trace().re;
        2.0 * lin - quad
    }

    pub fn value(&self, f: &Beamformer) -> f64 {
        self.sp1_objective(f) + self.constant
    }
}

/// Builds Λ, φ and B from the current positions and auxiliaries.
pub fn assemble_quadratic(
    scene: &Scene,
    x: &AntennaPositions,
    aux: &AuxiliaryState,
    cfg: &SystemConfig,
) -> Result<QuadraticForm> {
    if aux.n_users() != scene.n_users() {
        return Err(invalid("auxiliary state does not match the scene"));
    }
    let ch = Channels::new(scene, x.as_slice(), cfg.wavelength);
    Ok(quadratic_from_channels(scene, &ch, aux, cfg))
}

pub(crate) fn quadratic_from_channels(scene: &Scene, ch: &Channels, aux: &AuxiliaryState, cfg: &SystemConfig) -> QuadraticForm {
    let n = ch.target.len();
    let k_users = scene.n_users();
    let (wc, ws) = (cfg.weight_comm, cfg.weight_sense);

    // H̃ = [ξ_1 h_1, …, ξ_K h_K]
    let mut h_tilde = ch.users.clone();
    for (k, mut col) in h_tilde.column_iter_mut().enumerate() {
        col *= aux.xi_c[k];
    }
    let mut lambda = &h_tilde * h_tilde.adjoint() * Complex64::from(wc);
    let xi_s_energy = aux.xi_s.norm_squared();
    let mut echo = CMatrix::zeros(n, n);
    for (c, a) in scene.clutter.iter().zip(&ch.clutter) {
        echo += a * a.adjoint() * Complex64::from(c.coeff.norm_sqr());
    }
    echo += &ch.target * ch.target.adjoint() * Complex64::from(scene.target.coeff.norm_sqr());
    lambda += echo * Complex64::from(ws * xi_s_energy);

    let sense_scale = ws * (1.0 + aux.mu[k_users]).sqrt();
    let target_conj = scene.target.coeff.conj();
    let mut phi = CMatrix::zeros(n, k_users + 1);
    for k in 0..=k_users {
        let mut col = &ch.target * (target_conj * aux.xi_s[k].conj() * sense_scale);
        if k < k_users {
            col += ch.users.column(k) * (aux.xi_c[k].conj() * wc * (1.0 + aux.mu[k]).sqrt());
        }
        phi.set_column(k, &col);
    }
    QuadraticForm { lambda, phi, constant: surrogate_constant(aux, cfg) }
}

/// Eigendecomposition of Λ reused across streams and dual values.
struct DualSolver {
    vectors: CMatrix,
    values: DVector<f64>,
    /// Uᴴ Φ.
    projected: CMatrix,
    /// Σ_k |(Uᴴ φ_k)_i|² per eigen-direction.
    energy: Vec<f64>,
    scale: f64,
}

impl DualSolver {
    fn new(qf: &QuadraticForm) -> Self {
        let eig = SymmetricEigen::new(qf.lambda.clone());
        let projected = eig.eigenvectors.adjoint() * &qf.phi;
        let energy = projected.row_iter().map(|r| r.norm_squared()).collect();
        let scale = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Self { vectors: eig.eigenvectors, values: eig.eigenvalues, projected, energy, scale }
    }

    /// 1/(d_i + λ), or 0 for directions the pseudo-inverse discards.
    fn inverse(&self, i: usize, dual: f64) -> f64 {
        let d = self.values[i] + dual;
        let tol = 1e-12 * (self.scale + dual).max(f64::MIN_POSITIVE);
        if d.abs() <= tol {
            0.0
        } else {
            1.0 / d
        }
    }

    fn beamformer(&self, dual: f64) -> Beamformer {
        let mut scaled = self.projected.clone();
        for (i, mut row) in scaled.row_iter_mut().enumerate() {
            row *= Complex64::from(self.inverse(i, dual));
        }
        Beamformer(&self.vectors * scaled)
    }

    fn power(&self, dual: f64) -> f64 {
        self.energy
            .iter()
            .enumerate()
            .map(|(i, e)| e * self.inverse(i, dual).powi(2))
            .sum()
    }
}

/// f_k = (Λ + λI)† φ_k for every stream.
pub fn solve_f_given_lambda(qf: &QuadraticForm, dual: f64) -> Result<Beamformer> {
    if !(dual >= 0.0) {
        return Err(invalid(format!("dual variable must be non-negative, got {dual}")));
    }
    Ok(DualSolver::new(qf).beamformer(dual))
}

/// Outcome of the power-constrained beamforming solve.
#[derive(Debug, Clone, PartialEq)]
pub struct Sp1Solution {
    pub beamformer: Beamformer,
    pub dual: f64,
    pub bisection_steps: usize,
}

const MAX_BISECTION_STEPS: usize = 500;

/// Maximizes the quadratic form subject to trace(FᴴF) ≤ P0.
///
/// The unconstrained solution is returned when it already fits the budget;
/// otherwise λ is bisected on h(λ) = trace(F(λ)ᴴF(λ)) − P0, which decreases
/// monotonically, until |h(λ)| ≤ `tol`. The upper bracket starts at 1 and
/// doubles until h ≤ 0.
pub fn solve_sp1(qf: &QuadraticForm, power: f64, tol: f64) -> Result<Sp1Solution> {
    if !(power > 0.0) {
        return Err(invalid(format!("power budget must be positive, got {power}")));
    }
    if !(tol > 0.0) {
        return Err(invalid("bisection tolerance must be positive"));
    }
    let solver = DualSolver::new(qf);
    if solver.energy.iter().all(|&e| e == 0.0) {
        let (n, s) = qf.phi.shape();
        return Ok(Sp1Solution { beamformer: Beamformer::zeros(n, s), dual: 0.0, bisection_steps: 0 });
    }
    if solver.power(0.0) <= power {
        return Ok(Sp1Solution { beamformer: solver.beamformer(0.0), dual: 0.0, bisection_steps: 0 });
    }

    let excess = |dual: f64| solver.power(dual) - power;
    let mut hi = 1.0;
    while excess(hi) > 0.0 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    let mut dual = hi;
    let mut steps = 0;
    while steps < MAX_BISECTION_STEPS {
        steps += 1;
        let mid = 0.5 * (lo + hi);
        let h = excess(mid);
        if h.abs() <= tol {
            dual = mid;
            break;
        }
        if h > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        dual = hi;
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    Ok(Sp1Solution { beamformer: solver.beamformer(dual), dual, bisection_steps: steps })
}
