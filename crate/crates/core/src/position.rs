//! Antenna position update.
//!
//! The proposed scheme runs three stages: a per-antenna grid search over the
//! whole region, unconstrained per-antenna gradient ascent, and a projection
//! back onto the feasible set (region plus minimum spacing). The direct
//! gradient ascent baseline instead walks from the previous placement and
//! rejects any step that would leave the feasible set.
//!
//! All stages work on one antenna at a time. [`AntennaSlice`] freezes every
//! other antenna and evaluates the surrogate (and its derivative) as a
//! function of the remaining coordinate in O(K·(K+1)·Lp) instead of
//! re-synthesizing every channel.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fp::{surrogate_constant, AuxiliaryState};
use crate::model::{wavenumber, AntennaPositions, Beamformer, Scene, SystemConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PositionMethod {
    /// Grid search, unconstrained gradient ascent, projection.
    #[default]
    Spga,
    /// Gradient ascent from the previous placement that rejects infeasible steps.
    Dga,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaConfig {
    pub grid_points_per_wavelength: usize,
    /// Initial displacement per antenna visit, meters.
    pub step_init: f64,
    pub backtrack_factor: f64,
    pub max_backtracks: usize,
    /// Maximum number of rounds (one visit per antenna each).
    pub max_inner_iters: usize,
    /// A round improving the surrogate by less than this (nats) ends the loop.
    pub inner_tol: f64,
    pub method: PositionMethod,
}

impl GaConfig {
    pub fn for_wavelength(wavelength: f64) -> Self {
        Self { step_init: wavelength / 100.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_points_per_wavelength == 0 {
            return Err(invalid("grid_points_per_wavelength must be positive"));
        }
        if !(self.step_init > 0.0) {
            return Err(invalid("step_init must be positive"));
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return Err(invalid("backtrack_factor must lie in (0, 1)"));
        }
        if self.max_inner_iters == 0 {
            return Err(invalid("max_inner_iters must be positive"));
        }
        if !(self.inner_tol > 0.0) {
            return Err(invalid("inner_tol must be positive"));
        }
        Ok(())
    }
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            grid_points_per_wavelength: 10,
            step_init: 1e-3,
            backtrack_factor: 0.5,
            max_backtracks: 30,
            max_inner_iters: 100,
            inner_tol: 1e-6,
            method: PositionMethod::Spga,
        }
    }
}

/// The surrogate restricted to antenna `n`, all other antennas frozen.
pub struct AntennaSlice<'a> {
    scene: &'a Scene,
    aux: &'a AuxiliaryState,
    cfg: &'a SystemConfig,
    kw: f64,
    /// sqrt(N/Lp).
    channel_scale: f64,
    /// Row n of F.
    f_row: Vec<Complex64>,
    /// Σ_{m≠n} conj(h_k[m]) F[m, j], K×(K+1) row-major.
    user_rest: Vec<Complex64>,
    /// Σ_{m≠n} conj(a_s[m]) F[m, j].
    target_rest: Vec<Complex64>,
    clutter_rest: Vec<Vec<Complex64>>,
    constant: f64,
}

/// Value and derivative of the sliced surrogate at one coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceEval {
    pub value: f64,
    pub derivative: f64,
}

impl<'a> AntennaSlice<'a> {
    pub fn new(
        scene: &'a Scene,
        x: &[f64],
        f: &'a Beamformer,
        aux: &'a AuxiliaryState,
        cfg: &'a SystemConfig,
        n: usize,
    ) -> Self {
        let fm = f.matrix();
        let streams = fm.ncols();
        let k_users = scene.n_users();
        let kw = wavenumber(cfg.wavelength);
        let channel_scale = (x.len() as f64 / scene.n_paths() as f64).sqrt();

        let mut user_rest = vec![Complex64::new(0.0, 0.0); k_users * streams];
        for (k, paths) in scene.users.iter().enumerate() {
            let row = &mut user_rest[k * streams..(k + 1) * streams];
            for (m, &xm) in x.iter().enumerate() {
                if m == n {
                    continue;
                }
                let hc: Complex64 = paths
                    .iter()
                    .map(|p| p.gain.conj() * Complex64::cis(-kw * xm * p.angle.cos()))
                    .sum::<Complex64>()
                    * channel_scale;
                for (j, r) in row.iter_mut().enumerate() {
                    *r += hc * fm[(m, j)];
                }
            }
        }
        let rest_for = |angle: f64| -> Vec<Complex64> {
            let c = angle.cos();
            (0..streams)
                .map(|j| {
                    x.iter()
                        .enumerate()
                        .filter(|&(m, _)| m != n)
                        .map(|(m, &xm)| Complex64::cis(-kw * xm * c) * fm[(m, j)])
                        .sum()
                })
                .collect()
        };
        Self {
            scene,
            aux,
            cfg,
            kw,
            channel_scale,
            f_row: (0..streams).map(|j| fm[(n, j)]).collect(),
            user_rest,
            target_rest: rest_for(scene.target.angle),
            clutter_rest: scene.clutter.iter().map(|c| rest_for(c.angle)).collect(),
            constant: surrogate_constant(aux, cfg),
        }
    }

    /// Surrogate value and ∂/∂x_n at x_n = `p`.
    ///
    /// The derivative is assembled from the five term families of the
    /// surrogate: the user linear terms (F1), the user received-power terms
    /// summed over every stream (F2), the target linear term (F3), and the
    /// clutter (F4) and target (F5) echo powers.
    pub fn eval(&self, p: f64) -> SliceEval {
        let aux = self.aux;
        let streams = self.f_row.len();
        let (wc, ws) = (self.cfg.weight_comm, self.cfg.weight_sense);

        let mut value = self.constant;
        let mut derivative = 0.0;

        for (k, paths) in self.scene.users.iter().enumerate() {
            // conj(h_k[n]) and its derivative in x_n.
            let (mut g, mut dg) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
            for path in paths {
                let c = path.angle.cos();
                let e = path.gain.conj() * Complex64::cis(-self.kw * p * c);
                g += e;
                dg += e * Complex64::new(0.0, -self.kw * c);
            }
            g *= self.channel_scale;
            dg *= self.channel_scale;

            let rest = &self.user_rest[k * streams..(k + 1) * streams];
            let xi = aux.xi_c[k];
            let amp = (1.0 + aux.mu[k]).sqrt();

            let own = rest[k] + g * self.f_row[k];
            let f1 = 2.0 * (xi * own).re;
            let df1 = 2.0 * (xi * dg * self.f_row[k]).re;

            let (mut f2, mut df2) = (0.0, 0.0);
            for (r, fj) in rest.iter().zip(&self.f_row) {
                let gain = r + g * fj;
                f2 += gain.norm_sqr();
                df2 += 2.0 * (gain.conj() * dg * fj).re;
            }
            let w = xi.norm_sqr();
            value += wc * (amp * f1 - w * f2);
            derivative += wc * (amp * df1 - w * df2);
        }

        let xi_s_energy = aux.xi_s.norm_squared();
        let sense_amp = (1.0 + aux.mu[self.scene.n_users()]).sqrt();

        // Row vector α a^H F at x_n = p: power and its derivative.
        let echo = |rest: &[Complex64], angle: f64| -> (f64, f64) {
            let c = angle.cos();
            let e = Complex64::cis(-self.kw * p * c);
            let de = e * Complex64::new(0.0, -self.kw * c);
            rest.iter().zip(&self.f_row).fold((0.0, 0.0), |(v, d), (r, fj)| {
                let b = r + e * fj;
                (v + b.norm_sqr(), d + 2.0 * (b.conj() * de * fj).re)
            })
        };

        // F3: 2 Re{α_s a_s^H F ξ^s}
        let target = self.scene.target;
        let c = target.angle.cos();
        let e = Complex64::cis(-self.kw * p * c);
        let de = e * Complex64::new(0.0, -self.kw * c);
        let (mut lin, mut dlin) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
        for ((r, fj), s) in self.target_rest.iter().zip(&self.f_row).zip(aux.xi_s.iter()) {
            lin += (r + e * fj) * s;
            dlin += de * fj * s;
        }
        let f3 = 2.0 * (target.coeff * lin).re;
        let df3 = 2.0 * (target.coeff * dlin).re;

        // F4 (clutter) and F5 (target) echo powers.
        let (mut f45, mut df45) = (0.0, 0.0);
        for (cl, rest) in self.scene.clutter.iter().zip(&self.clutter_rest) {
            let (v, d) = echo(rest, cl.angle);
            f45 += cl.coeff.norm_sqr() * v;
            df45 += cl.coeff.norm_sqr() * d;
        }
        let (v, d) = echo(&self.target_rest, target.angle);
        f45 += target.coeff.norm_sqr() * v;
        df45 += target.coeff.norm_sqr() * d;

        value += ws * (sense_amp * f3 - xi_s_energy * f45);
        derivative += ws * (sense_amp * df3 - xi_s_energy * df45);

        SliceEval { value, derivative }
    }
}

fn check_inputs(scene: &Scene, x: &AntennaPositions, f: &Beamformer, aux: &AuxiliaryState) -> Result<()> {
    if f.n_antennas() != x.len() || f.n_streams() != scene.n_users() + 1 {
        return Err(Error::Dimension("beamformer does not match scene and positions".into()));
    }
    if aux.n_users() != scene.n_users() {
        return Err(Error::Dimension("auxiliary state does not match the scene".into()));
    }
    Ok(())
}

/// ∂G̃/∂x_n (nats per meter) for antenna `n` (zero-based).
pub fn surrogate_grad_x(
    scene: &Scene,
    x: &AntennaPositions,
    f: &Beamformer,
    aux: &AuxiliaryState,
    cfg: &SystemConfig,
    n: usize,
) -> Result<f64> {
    check_inputs(scene, x, f, aux)?;
    if n >= x.len() {
        return Err(Error::IndexOutOfRange { what: "antenna", index: n, len: x.len() });
    }
    Ok(AntennaSlice::new(scene, x.as_slice(), f, aux, cfg, n).eval(x.0[n]).derivative)
}

/// Uniform candidate grid over the region.
pub fn search_grid(cfg: &SystemConfig) -> Vec<f64> {
    let span = cfg.region_max - cfg.region_min;
    let per = cfg.ga.grid_points_per_wavelength as f64;
    let count = ((span / cfg.wavelength * per).round() as usize + 1).max(2);
    let step = span / (count - 1) as f64;
    (0..count).map(|i| cfg.region_min + i as f64 * step).collect()
}

/// Per-antenna sweep over the configured grid, in index order, keeping the
/// maximizing candidate. Constraints are ignored here.
pub fn grid_search_init(
    scene: &Scene,
    f: &Beamformer,
    aux: &AuxiliaryState,
    cfg: &SystemConfig,
    x_current: &AntennaPositions,
) -> Result<AntennaPositions> {
    grid_search_on(scene, f, aux, cfg, x_current, &search_grid(cfg))
}

/// Like [`grid_search_init`] on an explicit grid. The current coordinate is
/// always a candidate, and replaces the best grid point only if strictly
/// better, so the surrogate never decreases.
pub fn grid_search_on(
    scene: &Scene,
    f: &Beamformer,
    aux: &AuxiliaryState,
    cfg: &SystemConfig,
    x_current: &AntennaPositions,
    grid: &[f64],
) -> Result<AntennaPositions> {
    check_inputs(scene, x_current, f, aux)?;
    if grid.is_empty() {
        return Err(invalid("search grid is empty"));
    }
    let mut x = x_current.0.clone();
    for n in 0..x.len() {
        let slice = AntennaSlice::new(scene, &x, f, aux, cfg, n);
        let mut best = (grid[0], slice.eval(grid[0]).value);
        for &p in &grid[1..] {
            let v = slice.eval(p).value;
            if v > best.1 {
                best = (p, v);
            }
        }
        if slice.eval(x[n]).value > best.1 {
            best.0 = x[n];
        }
        x[n] = best.0;
    }
    Ok(AntennaPositions::new(x))
}

/// Result of the per-antenna gradient ascent.
#[derive(Debug, Clone, PartialEq)]
pub struct GaOutcome {
    pub positions: AntennaPositions,
    /// Surrogate after every antenna visit, starting with the initial value.
    pub trace: Vec<f64>,
    pub rounds: usize,
    /// A non-finite derivative was met; `positions` is the starting point.
    pub aborted: bool,
}

/// Unconstrained per-antenna gradient ascent with backtracking.
pub fn ga_inner_loop(
    scene: &Scene,
    x0: &AntennaPositions,
    f: &Beamformer,
    aux: &AuxiliaryState,
    cfg: &SystemConfig,
) -> Result<GaOutcome> {
    check_inputs(scene, x0, f, aux)?;
    Ok(ascend(scene, x0, f, aux, cfg, false))
}

/// Per-antenna gradient ascent that rejects steps violating the region or
/// spacing constraints. `x0` must be feasible.
pub fn dga_inner_loop(
    scene: &Scene,
    x0: &AntennaPositions,
    f: &Beamformer,
    aux: &AuxiliaryState,
    cfg: &SystemConfig,
) -> Result<GaOutcome> {
    check_inputs(scene, x0, f, aux)?;
    if !x0.is_feasible_for(cfg) {
        return Err(invalid("direct gradient ascent needs a feasible starting placement"));
    }
    Ok(ascend(scene, x0, f, aux, cfg, true))
}

fn keeps_feasible(x: &[f64], n: usize, p: f64, cfg: &SystemConfig) -> bool {
    p >= cfg.region_min
        && p <= cfg.region_max
        && x.iter().enumerate().all(|(m, &xm)| m == n || (p - xm).abs() >= cfg.min_spacing)
}

fn ascend(
    scene: &Scene,
    x0: &AntennaPositions,
    f: &Beamformer,
    aux: &AuxiliaryState,
    cfg: &SystemConfig,
    constrained: bool,
) -> GaOutcome {
    let ga = &cfg.ga;
    let mut x = x0.0.clone();
    let start = AntennaSlice::new(scene, &x, f, aux, cfg, 0).eval(x[0]).value;
    let mut trace = vec![start];
    let mut current = start;
    let mut rounds = 0;

    while rounds < ga.max_inner_iters {
        rounds += 1;
        let round_start = current;
        for n in 0..x.len() {
            let slice = AntennaSlice::new(scene, &x, f, aux, cfg, n);
            let here = slice.eval(x[n]);
            if !here.derivative.is_finite() || !here.value.is_finite() {
                return GaOutcome { positions: x0.clone(), trace, rounds, aborted: true };
            }
            if here.derivative != 0.0 {
                let direction = here.derivative.signum();
                let mut step = ga.step_init;
                for _ in 0..=ga.max_backtracks {
                    let cand = x[n] + step * direction;
                    if !constrained || keeps_feasible(&x, n, cand, cfg) {
                        let v = slice.eval(cand).value;
                        if v > here.value {
                            x[n] = cand;
                            current = v;
                            break;
                        }
                    }
                    step *= ga.backtrack_factor;
                }
            }
            trace.push(current);
        }
        if current - round_start < ga.inner_tol {
            break;
        }
    }
    GaOutcome { positions: AntennaPositions::new(x), trace, rounds, aborted: false }
}

/// Sorts, applies the sequential clamp
/// x̃_1 ← max(X_min, min(x̃_1, X_max − (N−1)D0)),
/// x̃_n ← max(x̃_{n−1} + D0, min(x̃_n, X_max − (N−n)D0)),
/// and restores the original antenna order. Feasible inputs are returned
/// unchanged.
pub fn project_positions(x: &AntennaPositions, cfg: &SystemConfig) -> Result<AntennaPositions> {
    project_onto(x, cfg.region_min, cfg.region_max, cfg.min_spacing)
}

pub fn project_onto(x: &AntennaPositions, region_min: f64, region_max: f64, min_spacing: f64) -> Result<AntennaPositions> {
    let n = x.len();
    if n == 0 {
        return Ok(x.clone());
    }
    if region_max - region_min < (n - 1) as f64 * min_spacing || !(min_spacing >= 0.0) {
        return Err(invalid(format!(
            "region [{region_min}, {region_max}] cannot hold {n} antennas spaced {min_spacing}"
        )));
    }
    if x.0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("antenna positions"));
    }
    if x.is_feasible(region_min, region_max, min_spacing) {
        return Ok(x.clone());
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x.0[a].total_cmp(&x.0[b]).then(a.cmp(&b)));

    let mut out = vec![0.0; n];
    let mut prev = f64::NEG_INFINITY;
    for (rank, &idx) in order.iter().enumerate() {
        let upper = region_max - (n - 1 - rank) as f64 * min_spacing;
        let candidate = x.0[idx].min(upper);
        let value = if rank == 0 {
            candidate.max(region_min)
        } else if candidate - prev >= min_spacing {
            candidate
        } else {
            let mut lower = prev + min_spacing;
            // The clamp must satisfy the spacing test exactly in floating point.
            while lower - prev < min_spacing {
                lower = lower.next_up();
            }
            lower
        };
        out[idx] = value;
        prev = value;
    }
    // Rounding in the upper bounds can leave the top of the chain an ulp
    // outside the region; walk back down restoring exact feasibility.
    let mut next = f64::INFINITY;
    for &idx in order.iter().rev() {
        let mut value = out[idx].min(region_max);
        if next - value < min_spacing {
            value = next - min_spacing;
            while next - value < min_spacing {
                value = value.next_down();
            }
        }
        out[idx] = value;
        next = value;
    }
    Ok(AntennaPositions::new(out))
}

/// Outcome of the position sub-problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Sp2Outcome {
    pub positions: AntennaPositions,
    /// The staged result scored below a local constrained ascent from the
    /// previous placement, which was returned instead.
    pub used_local: bool,
    /// Gradient ascent hit a non-finite derivative.
    pub aborted: bool,
}

/// Solves the position sub-problem with the configured method. The result
/// is always feasible. For the staged method, when the previous placement
/// is feasible, a constrained ascent from it is also run and returned if it
/// scores strictly higher than the projected result, so the surrogate never
/// decreases.
pub fn solve_sp2(
    scene: &Scene,
    x_prev: &AntennaPositions,
    f: &Beamformer,
    aux: &AuxiliaryState,
    cfg: &SystemConfig,
) -> Result<Sp2Outcome> {
    check_inputs(scene, x_prev, f, aux)?;
    match cfg.ga.method {
        PositionMethod::Dga => {
            let start = if x_prev.is_feasible_for(cfg) { x_prev.clone() } else { project_positions(x_prev, cfg)? };
            let out = ascend(scene, &start, f, aux, cfg, true);
            Ok(Sp2Outcome { positions: out.positions, used_local: false, aborted: out.aborted })
        }
        PositionMethod::Spga => {
            let searched = grid_search_init(scene, f, aux, cfg, x_prev)?;
            let out = ascend(scene, &searched, f, aux, cfg, false);
            let projected = project_positions(&out.positions, cfg)?;
            if x_prev.is_feasible_for(cfg) {
                let score = |x: &AntennaPositions| AntennaSlice::new(scene, &x.0, f, aux, cfg, 0).eval(x.0[0]).value;
                let local = ascend(scene, x_prev, f, aux, cfg, true);
                if score(&local.positions) > score(&projected) {
                    return Ok(Sp2Outcome {
                        positions: local.positions,
                        used_local: true,
                        aborted: out.aborted || local.aborted,
                    });
                }
            }
            Ok(Sp2Outcome { positions: projected, used_local: false, aborted: out.aborted })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fp::{refresh_aux, surrogate_eval, XiMode};
    use crate::model::{sample_cn, sample_scene, CMatrix};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    struct Instance {
        cfg: SystemConfig,
        scene: Scene,
        x: AntennaPositions,
        f: Beamformer,
        aux: AuxiliaryState,
    }

    fn random_instance(seed: u64) -> Instance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=4);
        let k = rng.random_range(1..=3);
        let mut cfg = SystemConfig::paper_default(n);
        cfg.set_n_users(k);
        cfg.n_clutters = rng.random_range(0..=2);
        cfg.n_paths = rng.random_range(1..=3);
        cfg.set_weight_comm(rng.random_range(0.2..0.8));
        let scene = sample_scene(&cfg, seed.wrapping_mul(31) + 7);
        let x = AntennaPositions::new((0..n).map(|_| rng.random_range(0.0..1.0)).collect());
        let f = Beamformer(CMatrix::from_fn(n, k + 1, |_, _| sample_cn(&mut rng)));
        // Arbitrary auxiliaries: at the jointly optimal ones many derivatives
        // vanish identically, which makes a relative comparison meaningless.
        let aux = AuxiliaryState {
            mu: (0..=k).map(|_| rng.random_range(0.0..3.0)).collect(),
            xi_c: (0..k).map(|_| sample_cn(&mut rng)).collect::<Vec<_>>().into(),
            xi_s: (0..=k).map(|_| sample_cn(&mut rng)).collect::<Vec<_>>().into(),
        };
        Instance { cfg, scene, x, f, aux }
    }

    fn surrogate(inst: &Instance, x: &[f64]) -> f64 {
        surrogate_eval(&inst.scene, &AntennaPositions::new(x.to_vec()), &inst.f, &inst.aux, &inst.cfg)
            .unwrap()
            .value_nats
    }

    /// Term-by-term expansion of ∂G̃/∂x_n written out as sums over paths,
    /// antennas and streams. The l≠p same-antenna line of the F2 family
    /// carries a factor 1/2 relative to the other lines: the ordered (l, p)
    /// and (p, l) pairs are conjugates of one another.
    fn expanded_gradient(inst: &Instance, x: &[f64], n: usize) -> f64 {
        let cfg = &inst.cfg;
        let scene = &inst.scene;
        let f = inst.f.matrix();
        let aux = &inst.aux;
        let big_n = x.len();
        let lp = scene.n_paths();
        let kw = 2.0 * PI / cfg.wavelength;
        let j = Complex64::new(0.0, 1.0);
        let a = |m: usize, th: f64| Complex64::cis(kw * x[m] * th.cos());
        let s = (big_n as f64 / lp as f64).sqrt();
        let k_users = scene.n_users();

        let mut grad = 0.0;
        for k in 0..k_users {
            let paths = &scene.users[k];
            let xi = aux.xi_c[k];
            // ∂F1
            let mut acc = Complex64::new(0.0, 0.0);
            for p in paths {
                acc += -j * xi * s * p.gain.conj() * f[(n, k)] * kw * p.angle.cos() * a(n, p.angle).conj();
            }
            let df1 = 2.0 * acc.re;
            // ∂F2 summed over every stream
            let mut df2 = 0.0;
            for jj in 0..=k_users {
                let mut line1 = Complex64::new(0.0, 0.0);
                let mut line2 = Complex64::new(0.0, 0.0);
                let mut line3 = Complex64::new(0.0, 0.0);
                for (l, pl) in paths.iter().enumerate() {
                    let cl = pl.angle.cos();
                    for m in (0..big_n).filter(|&m| m != n) {
                        line1 += -j * kw * cl * pl.gain.norm_sqr() * f[(n, jj)] * f[(m, jj)].conj()
                            * a(n, pl.angle).conj() * a(m, pl.angle);
                    }
                    for (_, pq) in paths.iter().enumerate().filter(|&(q, _)| q != l) {
                        let cq = pq.angle.cos();
                        line2 += -j * kw * (cl - cq) * pl.gain.conj() * pq.gain * f[(n, jj)].norm_sqr()
                            * a(n, pl.angle).conj() * a(n, pq.angle);
                        for m in (0..big_n).filter(|&m| m != n) {
                            line3 += -j * kw * cl * pl.gain.conj() * pq.gain * f[(n, jj)] * f[(m, jj)].conj()
                                * a(n, pl.angle).conj() * a(m, pq.angle);
                        }
                    }
                }
                df2 += big_n as f64 / lp as f64 * 2.0 * (line1 + 0.5 * line2 + line3).re;
            }
            grad += cfg.weight_comm * ((1.0 + aux.mu[k]).sqrt() * df1 - xi.norm_sqr() * df2);
        }
        let ft = f * f.adjoint();
        let xi_bar = f * &aux.xi_s;
        let ts = scene.target;
        let df3 = 2.0 * (-j * ts.coeff * kw * ts.angle.cos() * xi_bar[n] * a(n, ts.angle).conj()).re;
        let echo_grad = |th: f64| -> f64 {
            let mut acc = Complex64::new(0.0, 0.0);
            for m in (0..big_n).filter(|&m| m != n) {
                acc += j * kw * th.cos() * a(m, th).conj() * a(n, th) * ft[(m, n)];
            }
            2.0 * acc.re
        };
        let df4: f64 = scene.clutter.iter().map(|c| c.coeff.norm_sqr() * echo_grad(c.angle)).sum();
        let df5 = ts.coeff.norm_sqr() * echo_grad(ts.angle);
        let mu_s = aux.mu[k_users];
        grad += cfg.weight_sense * ((1.0 + mu_s).sqrt() * df3 - aux.xi_s.norm_squared() * (df4 + df5));
        grad
    }

    fn central_difference(inst: &Instance, n: usize) -> f64 {
        let h = 1e-6 * inst.cfg.wavelength;
        let mut xp = inst.x.0.clone();
        let mut xm = inst.x.0.clone();
        xp[n] += h;
        xm[n] -= h;
        (surrogate(inst, &xp) - surrogate(inst, &xm)) / (2.0 * h)
    }

    #[test]
    fn gradient_matches_finite_difference_and_expansion() {
        for seed in 0..50 {
            let inst = random_instance(seed);
            for n in 0..inst.x.len() {
                let g = surrogate_grad_x(&inst.scene, &inst.x, &inst.f, &inst.aux, &inst.cfg, n).unwrap();
                let fd = central_difference(&inst, n);
                let rel = (g - fd).abs() / fd.abs().max(1e-6);
                assert!(rel <= 1e-5, "seed {seed} n {n}: analytic {g} fd {fd}");
                let ex = expanded_gradient(&inst, inst.x.as_slice(), n);
                assert!((g - ex).abs() <= 1e-9 * g.abs().max(1.0), "seed {seed} n {n}: {g} vs expansion {ex}");
            }
        }
    }

    #[test]
    fn single_antenna_gradient_has_only_same_antenna_terms() {
        for seed in 0..40 {
            let inst = random_instance(1000 + seed);
            if inst.x.len() != 1 {
                continue;
            }
            let g = surrogate_grad_x(&inst.scene, &inst.x, &inst.f, &inst.aux, &inst.cfg, 0).unwrap();
            assert!((g - expanded_gradient(&inst, inst.x.as_slice(), 0)).abs() < 1e-9 * g.abs().max(1.0));
            assert!((g - central_difference(&inst, 0)).abs() <= 1e-5 * g.abs().max(1e-6));
        }
    }

    #[test]
    fn sensing_only_slice_matches_finite_difference() {
        let mut cfg = SystemConfig::paper_default(4);
        cfg.set_n_users(1);
        cfg.n_clutters = 0;
        cfg.n_paths = 2;
        cfg.set_weight_comm(0.0);
        let scene = sample_scene(&cfg, 12);
        let x = AntennaPositions::new(vec![0.011, 0.062, 0.13, 0.21]);
        let a = crate::model::steering_vector(x.as_slice(), scene.target.angle, cfg.wavelength).unwrap();
        let mut fm = CMatrix::zeros(4, 2);
        fm.set_column(1, &a);
        // Perturb slightly away from exact alignment so the derivative is non-trivial.
        fm[(2, 1)] *= Complex64::cis(0.3);
        let f = Beamformer(fm);
        let (aux, _) = refresh_aux(&scene, &x, &f, &AuxiliaryState::zeros(1), &cfg, XiMode::StandardFp).unwrap();
        let inst = Instance { cfg, scene, x, f, aux };
        for n in 0..4 {
            let g = surrogate_grad_x(&inst.scene, &inst.x, &inst.f, &inst.aux, &inst.cfg, n).unwrap();
            let fd = central_difference(&inst, n);
            assert!((g - fd).abs() <= 1e-5 * fd.abs().max(1e-6), "n {n}: {g} vs {fd}");
        }
    }

    #[test]
    fn slice_value_matches_full_surrogate() {
        for seed in 0..20 {
            let inst = random_instance(300 + seed);
            for n in 0..inst.x.len() {
                let slice = AntennaSlice::new(&inst.scene, inst.x.as_slice(), &inst.f, &inst.aux, &inst.cfg, n);
                for p in [0.0, 0.17, 0.5, 0.93] {
                    let mut x = inst.x.0.clone();
                    x[n] = p;
                    let want = surrogate(&inst, &x);
                    assert!((slice.eval(p).value - want).abs() <= 1e-10 * want.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn grad_index_out_of_range() {
        let inst = random_instance(1);
        let err = surrogate_grad_x(&inst.scene, &inst.x, &inst.f, &inst.aux, &inst.cfg, 9).unwrap_err();
        assert!(matches!(err, Error::IndexOutOfRange { .. }));
    }

    /// Per-antenna exhaustive sweep through the full surrogate.
    fn exhaustive_sweep(inst: &Instance, grid: &[f64]) -> Vec<f64> {
        let mut x = inst.x.0.clone();
        for n in 0..x.len() {
            let mut best_p = grid[0];
            let mut best_v = f64::NEG_INFINITY;
            for &p in grid {
                let mut t = x.clone();
                t[n] = p;
                let v = surrogate(inst, &t);
                if v > best_v {
                    best_v = v;
                    best_p = p;
                }
            }
            if surrogate(inst, &x) > best_v {
                best_p = x[n];
            }
            x[n] = best_p;
        }
        x
    }

    #[test]
    fn grid_search_equals_exhaustive_sweep() {
        for seed in 0..10 {
            let inst = random_instance(500 + seed);
            let grid: Vec<f64> = (0..200).map(|i| i as f64 * inst.cfg.region_max / 199.0).collect();
            let got = grid_search_on(&inst.scene, &inst.f, &inst.aux, &inst.cfg, &inst.x, &grid).unwrap();
            let want = exhaustive_sweep(&inst, &grid);
            assert_eq!(got.0, want, "seed {seed}");
            assert!(surrogate(&inst, &got.0) >= surrogate(&inst, inst.x.as_slice()) - 1e-12);
        }
    }

    #[test]
    fn one_point_grid_places_every_antenna() {
        let inst = random_instance(4);
        let f = Beamformer::zeros(inst.x.len(), inst.cfg.n_streams());
        let out = grid_search_on(&inst.scene, &f, &inst.aux, &inst.cfg, &inst.x, &[0.25]).unwrap();
        assert!(out.0.iter().all(|&v| v == 0.25));
    }

    #[test]
    fn configured_grid_never_decreases_surrogate() {
        for seed in 0..20 {
            let inst = random_instance(700 + seed);
            let out = grid_search_init(&inst.scene, &inst.f, &inst.aux, &inst.cfg, &inst.x).unwrap();
            assert!(surrogate(&inst, &out.0) >= surrogate(&inst, inst.x.as_slice()));
        }
        let cfg = SystemConfig::paper_default(4);
        let grid = search_grid(&cfg);
        assert_eq!(grid.len(), 101);
        assert_eq!(grid[0], 0.0);
        assert!((grid[100] - cfg.region_max).abs() < 1e-15);
    }

    #[test]
    fn ga_zero_gradient_keeps_start() {
        let inst = random_instance(2);
        let f = Beamformer::zeros(inst.x.len(), inst.cfg.n_streams());
        let out = ga_inner_loop(&inst.scene, &inst.x, &f, &inst.aux, &inst.cfg).unwrap();
        assert_eq!(out.positions, inst.x);
        assert!(!out.aborted);
    }

    #[test]
    fn ga_trace_is_monotone() {
        for seed in 0..20 {
            let inst = random_instance(900 + seed);
            let out = ga_inner_loop(&inst.scene, &inst.x, &inst.f, &inst.aux, &inst.cfg).unwrap();
            assert!(out.trace.windows(2).all(|w| w[1] >= w[0]));
            let end = surrogate(&inst, out.positions.as_slice());
            assert!((end - out.trace.last().unwrap()).abs() <= 1e-9 * end.abs().max(1.0));
        }
    }

    #[test]
    fn ga_steps_in_every_antenna_visit() {
        // Default geometry: 4 antennas, 4 users, 3 clutters, 13 paths.
        let cfg = SystemConfig::paper_default(4);
        let scene = sample_scene(&cfg, 2024);
        let x = cfg.ula();
        let f = crate::solver::matched_filter_beamformer(&scene, &x, &cfg);
        let (aux, _) = refresh_aux(&scene, &x, &f, &AuxiliaryState::zeros(4), &cfg, XiMode::StandardFp).unwrap();
        let out = ga_inner_loop(&scene, &x, &f, &aux, &cfg).unwrap();
        let first_round = &out.trace[..=4];
        let rises = first_round.windows(2).filter(|w| w[1] > w[0]).count();
        assert_eq!(rises, 4, "trace {first_round:?}");
    }

    #[test]
    fn projection_examples() {
        let l = 0.1;
        let x = AntennaPositions::new(vec![5.0 * l; 3]);
        let out = project_onto(&x, 0.0, 10.0 * l, l / 2.0).unwrap();
        let want = [5.0 * l, 5.5 * l, 6.0 * l];
        for (a, b) in out.0.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        let cfg = SystemConfig::paper_default(4);
        assert_eq!(project_positions(&cfg.ula(), &cfg).unwrap(), cfg.ula());
        assert!(project_onto(&x, 0.0, 0.05, 0.05).is_err());
    }

    #[test]
    fn projection_restores_original_order() {
        let x = AntennaPositions::new(vec![0.9, 0.1, 0.5, 0.11]);
        let out = project_onto(&x, 0.0, 1.0, 0.05).unwrap();
        assert_eq!(out.0[0], 0.9);
        assert_eq!(out.0[1], 0.1);
        assert_eq!(out.0[2], 0.5);
        assert!((out.0[3] - 0.15).abs() < 1e-15);
    }

    #[test]
    fn dga_stays_feasible() {
        for seed in 0..10 {
            let cfg = SystemConfig::paper_default(4);
            let scene = sample_scene(&cfg, seed);
            let x = cfg.ula();
            let f = crate::solver::matched_filter_beamformer(&scene, &x, &cfg);
            let (aux, _) = refresh_aux(&scene, &x, &f, &AuxiliaryState::zeros(4), &cfg, XiMode::StandardFp).unwrap();
            let out = dga_inner_loop(&scene, &x, &f, &aux, &cfg).unwrap();
            assert!(out.positions.is_feasible_for(&cfg));
            assert!(out.trace.windows(2).all(|w| w[1] >= w[0]));
        }
    }

    fn sp1_point(cfg: &SystemConfig, seed: u64) -> (Scene, AntennaPositions, Beamformer, AuxiliaryState) {
        let scene = sample_scene(cfg, seed);
        let x = cfg.ula();
        let f0 = crate::solver::matched_filter_beamformer(&scene, &x, cfg);
        let (aux, _) = refresh_aux(&scene, &x, &f0, &AuxiliaryState::zeros(cfg.n_users), cfg, XiMode::StandardFp).unwrap();
        let qf = crate::beamform::assemble_quadratic(&scene, &x, &aux, cfg).unwrap();
        let f = crate::beamform::solve_sp1(&qf, cfg.tx_power, 1e-8).unwrap().beamformer;
        (scene, x, f, aux)
    }

    #[test]
    fn staged_update_never_loses_to_dga() {
        let cfg = SystemConfig::paper_default(4);
        let mut dga_cfg = cfg.clone();
        dga_cfg.ga.method = PositionMethod::Dga;
        let mut wins = 0;
        for seed in 0..100 {
            let (scene, x, f, aux) = sp1_point(&cfg, seed);
            let staged = solve_sp2(&scene, &x, &f, &aux, &cfg).unwrap();
            let local = solve_sp2(&scene, &x, &f, &aux, &dga_cfg).unwrap();
            assert!(staged.positions.is_feasible_for(&cfg));
            let s = surrogate_eval(&scene, &staged.positions, &f, &aux, &cfg).unwrap().value_nats;
            let d = surrogate_eval(&scene, &local.positions, &f, &aux, &cfg).unwrap().value_nats;
            let base = surrogate_eval(&scene, &x, &f, &aux, &cfg).unwrap().value_nats;
            assert!(s >= base - 1e-12);
            if s >= d - 1e-12 * d.abs() {
                wins += 1;
            }
        }
        assert!(wins >= 80, "staged >= DGA on {wins}/100");
    }

    proptest! {
        #[test]
        fn projection_is_feasible_idempotent(xs in prop::collection::vec(-0.5f64..1.5, 1..9), spacing in 0.01f64..0.12) {
            let n = xs.len();
            let region_max = 1.0f64.max((n as f64 - 1.0) * spacing * 1.5);
            let x = AntennaPositions::new(xs);
            let once = project_onto(&x, 0.0, region_max, spacing).unwrap();
            prop_assert!(once.is_feasible(0.0, region_max, spacing));
            let twice = project_onto(&once, 0.0, region_max, spacing).unwrap();
            prop_assert_eq!(&once, &twice);
            // Sorted order of the inputs is preserved by the outputs.
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| x.0[a].total_cmp(&x.0[b]).then(a.cmp(&b)));
            prop_assert!(idx.windows(2).all(|w| once.0[w[0]] < once.0[w[1]]));
        }
    }
}
