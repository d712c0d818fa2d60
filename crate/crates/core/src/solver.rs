//! Outer alternating-optimization loop and the comparison schemes.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::beamform::{assemble_quadratic, solve_sp1};
use crate::error::{invalid, Error, Result};
use crate::fp::{refresh_aux, surrogate_eval, AuxiliaryState};
use crate::metrics::{objective, Channels, MetricsReport};
use crate::model::{sample_cn, AntennaPositions, Beamformer, CMatrix, Scene, SystemConfig};
use crate::position::{solve_sp2, PositionMethod};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InitStrategy {
    /// Unit-norm user channels and target steering vector, equal power.
    #[default]
    MatchedFilter,
    /// Seeded Gaussian matrix scaled to the budget.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Stop once an outer iteration improves the surrogate by less (nats).
    pub outer_tol: f64,
    pub max_outer_iters: usize,
    /// Bisection tolerance on the power excess, relative to P0.
    pub bisect_tol_rel: f64,
    pub init: InitStrategy,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { outer_tol: 1e-4, max_outer_iters: 200, bisect_tol_rel: 1e-8, init: InitStrategy::MatchedFilter }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.outer_tol > 0.0) || !(self.bisect_tol_rel > 0.0) {
            return Err(invalid("solver tolerances must be positive"));
        }
        if self.max_outer_iters == 0 {
            return Err(invalid("max_outer_iters must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "SPGA_FP")]
    SpgaFp,
    #[serde(rename = "DGA_FP")]
    DgaFp,
    #[serde(rename = "FP_FPA")]
    FpFpa,
    #[serde(rename = "SPGA_RBF")]
    SpgaRbf,
    #[serde(rename = "DGA_RBF")]
    DgaRbf,
    #[serde(rename = "RBF_FPA")]
    RbfFpa,
}

impl Scheme {
    pub const ALL: [Scheme; 6] =
        [Scheme::SpgaFp, Scheme::DgaFp, Scheme::FpFpa, Scheme::SpgaRbf, Scheme::DgaRbf, Scheme::RbfFpa];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::SpgaFp => "SPGA_FP",
            Scheme::DgaFp => "DGA_FP",
            Scheme::FpFpa => "FP_FPA",
            Scheme::SpgaRbf => "SPGA_RBF",
            Scheme::DgaRbf => "DGA_RBF",
            Scheme::RbfFpa => "RBF_FPA",
        }
    }

    pub fn optimizes_beamformer(self) -> bool {
        matches!(self, Scheme::SpgaFp | Scheme::DgaFp | Scheme::FpFpa)
    }

    /// `None` for fixed-position schemes.
    pub fn position_method(self) -> Option<PositionMethod> {
        match self {
            Scheme::SpgaFp | Scheme::SpgaRbf => Some(PositionMethod::Spga),
            Scheme::DgaFp | Scheme::DgaRbf => Some(PositionMethod::Dga),
            Scheme::FpFpa | Scheme::RbfFpa => None,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let wanted = s.trim().to_ascii_uppercase().replace('-', "_");
        Scheme::ALL
            .into_iter()
            .find(|sc| sc.name() == wanted)
            .ok_or_else(|| invalid(format!("unknown scheme '{s}'")))
    }
}

/// Diagnostics collected during a solve.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SolveFlags {
    pub converged: bool,
    /// Total μ entries clamped to zero over all refreshes.
    pub mu_clamped: usize,
    /// Outer iterations in which the staged position update lost to the
    /// local constrained ascent.
    pub local_fallbacks: usize,
    /// A sub-problem produced non-finite values; the result is the last
    /// consistent iterate.
    pub failed: bool,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub beamformer: Beamformer,
    pub positions: AntennaPositions,
    /// Entry 0 is the initial point, then one entry per outer iteration.
    pub objective_trace_nats: Vec<f64>,
    pub surrogate_trace_nats: Vec<f64>,
    pub metrics: MetricsReport,
    pub iterations: usize,
    pub wall_time: Duration,
    pub flags: SolveFlags,
}

/// i.i.d. CN(0, 1) entries rescaled so that trace(FᴴF) = P0.
pub fn random_beamformer(cfg: &SystemConfig, seed: u64) -> Beamformer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Separate stream so the draws do not mirror the scene's.
    rng.set_stream(1);
    let m = CMatrix::from_fn(cfg.n_antennas, cfg.n_streams(), |_, _| sample_cn(&mut rng));
    Beamformer(m).scaled_to_power(cfg.tx_power)
}

/// Columns ∝ h_k for users and ∝ a_s for the sensing stream, each with
/// power P0/(K+1).
pub fn matched_filter_beamformer(scene: &Scene, x: &AntennaPositions, cfg: &SystemConfig) -> Beamformer {
    let ch = Channels::new(scene, x.as_slice(), cfg.wavelength);
    let streams = scene.n_users() + 1;
    let per_stream = (cfg.tx_power / streams as f64).sqrt();
    let mut m = CMatrix::zeros(x.len(), streams);
    for k in 0..streams {
        let col = if k < scene.n_users() { ch.users.column(k).into_owned() } else { ch.target.clone() };
        let norm = col.norm();
        if norm > 0.0 {
            m.set_column(k, &(col * Complex64::from(per_stream / norm)));
        }
    }
    Beamformer(m)
}

/// Runs the alternating optimization for one scheme.
///
/// `seed` drives the random beamformer of the RBF schemes and the random
/// initializer; the scene is supplied by the caller.
pub fn solve(scene: &Scene, cfg: &SystemConfig, scheme: Scheme, seed: u64) -> Result<SolveResult> {
    solve_from(scene, cfg, scheme, seed, cfg.ula())
}

/// Like [`solve`], starting from the feasible placement `x0` instead of the
/// half-wavelength array.
pub fn solve_from(
    scene: &Scene,
    cfg: &SystemConfig,
    scheme: Scheme,
    seed: u64,
    x0: AntennaPositions,
) -> Result<SolveResult> {
    cfg.validate()?;
    scene.check_against(cfg)?;
    if !x0.is_feasible_for(cfg) {
        return Err(invalid("initial placement is infeasible"));
    }
    let start = Instant::now();
    let mode = cfg.xi_mode;

    let mut sub_cfg = cfg.clone();
    if let Some(method) = scheme.position_method() {
        sub_cfg.ga.method = method;
    }

    let mut x = x0;
    let mut f = if !scheme.optimizes_beamformer() || cfg.solver.init == InitStrategy::Random {
        random_beamformer(cfg, seed)
    } else {
        matched_filter_beamformer(scene, &x, cfg)
    };

    let mut flags = SolveFlags::default();
    let (mut aux, clamped) = refresh_aux(scene, &x, &f, &AuxiliaryState::zeros(scene.n_users()), cfg, mode)?;
    flags.mu_clamped += clamped;
    let mut surrogate = surrogate_eval(scene, &x, &f, &aux, cfg)?.value_nats;
    let mut objective_trace = vec![objective(scene, &x, &f, cfg)?.objective_nats];
    let mut surrogate_trace = vec![surrogate];
    let mut iterations = 0;

    let fixed = !scheme.optimizes_beamformer() && scheme.position_method().is_none();
    if fixed {
        flags.converged = true;
    }

    while !fixed && iterations < cfg.solver.max_outer_iters {
        iterations += 1;
        let mut next_f = f.clone();
        if scheme.optimizes_beamformer() {
            let qf = assemble_quadratic(scene, &x, &aux, cfg)?;
            next_f = solve_sp1(&qf, cfg.tx_power, cfg.solver.bisect_tol_rel * cfg.tx_power)?.beamformer;
        }
        let mut next_x = x.clone();
        if scheme.position_method().is_some() {
            let out = solve_sp2(scene, &x, &next_f, &aux, &sub_cfg)?;
            flags.local_fallbacks += usize::from(out.used_local);
            flags.failed |= out.aborted;
            next_x = out.positions;
        }
        let (next_aux, clamped) = refresh_aux(scene, &next_x, &next_f, &aux, cfg, mode)?;
        let next_surrogate = surrogate_eval(scene, &next_x, &next_f, &next_aux, cfg)?.value_nats;
        let next_objective = objective(scene, &next_x, &next_f, cfg)?.objective_nats;
        if !next_surrogate.is_finite() || !next_objective.is_finite() {
            flags.failed = true;
            log::warn!("{scheme}: non-finite iterate at outer iteration {iterations}, keeping the previous one");
            break;
        }
        flags.mu_clamped += clamped;
        f = next_f;
        x = next_x;
        aux = next_aux;
        let improvement = next_surrogate - surrogate;
        surrogate = next_surrogate;
        surrogate_trace.push(surrogate);
        objective_trace.push(next_objective);
        if improvement < cfg.solver.outer_tol {
            flags.converged = true;
            break;
        }
        if flags.failed {
            break;
        }
    }

    let metrics = objective(scene, &x, &f, cfg)?;
    Ok(SolveResult {
        beamformer: f,
        positions: x,
        objective_trace_nats: objective_trace,
        surrogate_trace_nats: surrogate_trace,
        metrics,
        iterations,
        wall_time: start.elapsed(),
        flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::sample_scene;

    #[test]
    fn scheme_names_round_trip() {
        for s in Scheme::ALL {
            assert_eq!(s.name().parse::<Scheme>().unwrap(), s);
            assert_eq!(serde_json::to_string(&s).unwrap(), format!("\"{}\"", s.name()));
        }
        assert_eq!("spga-fp".parse::<Scheme>().unwrap(), Scheme::SpgaFp);
        assert!("SPGA".parse::<Scheme>().is_err());
    }

    #[test]
    fn random_beamformer_examples() {
        let cfg = SystemConfig::paper_default(4);
        for seed in 0..20 {
            let f = random_beamformer(&cfg, seed);
            assert!((f.power() - cfg.tx_power).abs() < 1e-12);
            assert_eq!(f, random_beamformer(&cfg, seed));
        }
        let f = random_beamformer(&cfg, 3);
        assert_eq!(f.matrix().shape(), (4, 5));
        assert!((f.matrix().norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn matched_filter_uses_full_budget() {
        let cfg = SystemConfig::paper_default(4);
        let scene = sample_scene(&cfg, 1);
        let f = matched_filter_beamformer(&scene, &cfg.ula(), &cfg);
        assert!((f.power() - cfg.tx_power).abs() < 1e-12);
    }

    #[test]
    fn fixed_random_scheme_does_nothing() {
        let cfg = SystemConfig::paper_default(4);
        let scene = sample_scene(&cfg, 5);
        let r = solve(&scene, &cfg, Scheme::RbfFpa, 5).unwrap();
        assert_eq!(r.iterations, 0);
        assert_eq!(r.positions, cfg.ula());
        assert_eq!(r.beamformer, random_beamformer(&cfg, 5));
    }

    #[test]
    fn scheme_contracts_hold() {
        let cfg = SystemConfig::paper_default(4);
        let scene = sample_scene(&cfg, 8);
        let fpa = solve(&scene, &cfg, Scheme::FpFpa, 8).unwrap();
        assert_eq!(fpa.positions, cfg.ula());
        for scheme in [Scheme::SpgaRbf, Scheme::DgaRbf] {
            let r = solve(&scene, &cfg, scheme, 8).unwrap();
            assert_eq!(r.beamformer, random_beamformer(&cfg, 8));
            assert!(r.positions.is_feasible_for(&cfg));
        }
    }

    #[test]
    fn solves_are_feasible_monotone_and_tight() {
        let cfg = SystemConfig::paper_default(4);
        for seed in 0..6 {
            let scene = sample_scene(&cfg, seed);
            for scheme in [Scheme::SpgaFp, Scheme::DgaFp, Scheme::FpFpa] {
                let r = solve(&scene, &cfg, scheme, seed).unwrap();
                assert!(r.positions.is_feasible_for(&cfg), "{scheme} seed {seed}");
                assert!(r.beamformer.power() <= cfg.tx_power * (1.0 + 1e-7));
                assert!(r.surrogate_trace_nats.windows(2).all(|w| w[1] >= w[0] - 1e-8));
                for (s, o) in r.surrogate_trace_nats.iter().zip(&r.objective_trace_nats) {
                    assert!((s - o).abs() <= 1e-9 * o.abs().max(1.0));
                }
                assert!(!r.flags.failed);
            }
        }
    }

    #[test]
    fn communication_only_weight_leaves_weak_sensing() {
        let mut cfg = SystemConfig::paper_default(4);
        cfg.set_weight_comm(1.0);
        let scene = sample_scene(&cfg, 11);
        let r = solve(&scene, &cfg, Scheme::SpgaFp, 11).unwrap();
        assert!(r.metrics.mi_bits > 0.0);
        let mut balanced = cfg.clone();
        balanced.set_weight_comm(0.5);
        let b = solve(&scene, &balanced, Scheme::SpgaFp, 11).unwrap();
        assert!(r.metrics.mi_bits < b.metrics.mi_bits);
    }
}
