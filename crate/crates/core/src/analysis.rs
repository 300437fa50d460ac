//! Minimal regeneration distribution and truncation-error analysis.

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::Serialize;

use crate::clocks::{split_lifetime, SplitOptions};
use crate::dynamics::Dynamics;
use crate::error::{RestoreError, Result};
use crate::model::{partial_rate_diffusion, Drift, RateFn, RegenDistribution, TargetModel};
use crate::sampler::Parallelism;
use crate::streams::stream;

/// Relative size below which the minimal density counts as vanished on the box boundary.
pub const BOUNDARY_TOL: f64 = 1e-12;
pub const ENVELOPE_SLACK: f64 = 1.01;
pub const FACE_GRID: usize = 101;

/// `κ* = κ̃ ∨ κ̲`, the rate under the minimal regeneration distribution.
pub fn kappa_star(target: &TargetModel, drift: &Drift, kappa_floor: f64, x: &[f64]) -> Result<f64> {
    Ok(partial_rate_diffusion(target, drift, x)?.max(kappa_floor))
}

/// `μ* ∝ (κ̲ − κ̃)⁺ π̄`, with `C* = ∫ (κ̲ − κ̃)⁺ π̄` so that `κ̃ + C*μ*/π̄ = κ̃ ∨ κ̲`.
pub struct MinimalRegen {
    target: TargetModel,
    drift: Drift,
    kappa_floor: f64,
    c_star: f64,
    lo: Vec<f64>,
    hi: Vec<f64>,
    n_grid: usize,
    /// Sub-box of the envelope box holding the support found on the grid.
    sample_lo: Vec<f64>,
    sample_hi: Vec<f64>,
    envelope_height: f64,
    violations: AtomicUsize,
}

impl fmt::Debug for MinimalRegen {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MinimalRegen")
            .field("kappa_floor", &self.kappa_floor)
            .field("c_star", &self.c_star)
            .field("lo", &self.lo)
            .field("hi", &self.hi)
            .field("envelope_height", &self.envelope_height)
            .finish()
    }
}

/// Tensor grid with `n` points per axis on `[lo, hi]`.
fn grid_point(lo: &[f64], hi: &[f64], n: usize, mut index: usize) -> Vec<f64> {
    let mut x = Vec::with_capacity(lo.len());
    for (a, b) in lo.iter().zip(hi) {
        let k = index % n;
        index /= n;
        x.push(a + (b - a) * k as f64 / (n - 1) as f64);
    }
    x
}

fn grid_indices(d: usize, n: usize, mut index: usize) -> Vec<usize> {
    (0..d)
        .map(|_| {
            let k = index % n;
            index /= n;
            k
        })
        .collect()
}

impl MinimalRegen {
    pub fn kappa_floor(&self) -> f64 {
        self.kappa_floor
    }

    pub fn c_star(&self) -> f64 {
        self.c_star
    }

    pub fn envelope_height(&self) -> f64 {
        self.envelope_height
    }

    pub fn envelope_box(&self) -> (&[f64], &[f64]) {
        (&self.lo, &self.hi)
    }

    /// Points where the sampler found the density above its envelope.
    pub fn envelope_violations(&self) -> usize {
        self.violations.load(Ordering::Relaxed)
    }

    /// `(κ̲ − κ̃(x))⁺ π̄(x)`.
    pub fn unnormalized(&self, x: &[f64]) -> Result<f64> {
        let partial = partial_rate_diffusion(&self.target, &self.drift, x)?;
        let gap = self.kappa_floor - partial;
        if gap <= 0.0 {
            return Ok(0.0);
        }
        Ok(gap * self.target.log_density(x)?.exp())
    }

    pub fn log_mu_star_unnorm(&self, x: &[f64]) -> f64 {
        match self.unnormalized(x) {
            Ok(v) if v > 0.0 => v.ln(),
            _ => f64::NEG_INFINITY,
        }
    }

    /// Normalised `log μ*`.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        self.log_mu_star_unnorm(x) - self.c_star.ln()
    }

    /// Uniform-box rejection sampling under the envelope height.
    pub fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        loop {
            let x: Vec<f64> = self
                .sample_lo
                .iter()
                .zip(&self.sample_hi)
                .map(|(a, b)| a + (b - a) * rng.random::<f64>())
                .collect();
            let v = self.unnormalized(&x).unwrap_or(0.0);
            if v > self.envelope_height {
                self.violations.fetch_add(1, Ordering::Relaxed);
            }
            if rng.random::<f64>() * self.envelope_height < v {
                return x;
            }
        }
    }

    /// The tensor grid used for quadrature.
    pub fn grid_points(&self) -> Vec<Vec<f64>> {
        let total = self.n_grid.pow(self.lo.len() as u32);
        (0..total).map(|i| grid_point(&self.lo, &self.hi, self.n_grid, i)).collect()
    }

    /// As a regeneration distribution with `C = C*`.
    pub fn into_regen(self: Arc<Self>) -> Result<RegenDistribution> {
        let a = self.clone();
        let b = self.clone();
        RegenDistribution::new(
            Arc::new(move |x: &[f64]| a.log_density(x)),
            Arc::new(move |rng: &mut dyn RngCore| b.sample(rng)),
            self.c_star,
        )
    }
}

/// Builds `μ*` on the box `[lo, hi]` with `n_grid` points per axis.
pub fn build_minimal_regen(
    target: &TargetModel,
    drift: &Drift,
    kappa_floor: f64,
    lo: &[f64],
    hi: &[f64],
    n_grid: usize,
) -> Result<MinimalRegen> {
    let d = target.dim();
    if d > 3 {
        return Err(RestoreError::Config(format!("grid quadrature supports up to 3 dimensions, got {d}")));
    }
    if lo.len() != d || hi.len() != d || lo.iter().zip(hi).any(|(a, b)| !(a < b)) {
        return Err(RestoreError::Config("envelope box must have lo < hi in every dimension".into()));
    }
    if n_grid < 3 {
        return Err(RestoreError::Config("need at least 3 grid points per axis".into()));
    }
    if !(kappa_floor >= 0.0) {
        return Err(RestoreError::Config(format!("kappa floor must be nonnegative, got {kappa_floor}")));
    }
    let mut m = MinimalRegen {
        target: target.clone(),
        drift: drift.clone(),
        kappa_floor,
        c_star: f64::NAN,
        lo: lo.to_vec(),
        hi: hi.to_vec(),
        n_grid,
        sample_lo: lo.to_vec(),
        sample_hi: hi.to_vec(),
        envelope_height: f64::NAN,
        violations: AtomicUsize::new(0),
    };
    let total = n_grid.pow(d as u32);
    let values: Vec<f64> = (0..total)
        .into_par_iter()
        .map(|i| m.unnormalized(&grid_point(lo, hi, n_grid, i)))
        .collect::<Result<_>>()?;
    let max = values.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return Err(RestoreError::FloorTooLow { floor: kappa_floor });
    }
    let mut boundary: f64 = 0.0;
    let mut support_lo = vec![usize::MAX; d];
    let mut support_hi = vec![0usize; d];
    let cell: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| (b - a) / (n_grid - 1) as f64).collect();
    let mut integral = 0.0;
    for (i, v) in values.iter().enumerate() {
        let idx = grid_indices(d, n_grid, i);
        let edges = idx.iter().filter(|k| **k == 0 || **k == n_grid - 1).count();
        if edges > 0 {
            boundary = boundary.max(*v);
        }
        // trapezoid weights: halved once per boundary coordinate
        integral += v * 0.5f64.powi(edges as i32);
        if *v > 0.0 {
            for j in 0..d {
                support_lo[j] = support_lo[j].min(idx[j]);
                support_hi[j] = support_hi[j].max(idx[j]);
            }
        }
    }
    if boundary > BOUNDARY_TOL * max {
        return Err(RestoreError::BoxTooSmall { boundary_value: boundary });
    }
    m.c_star = integral * cell.iter().product::<f64>();
    m.envelope_height = max * ENVELOPE_SLACK;
    for j in 0..d {
        m.sample_lo[j] = lo[j] + cell[j] * support_lo[j].saturating_sub(1) as f64;
        m.sample_hi[j] = lo[j] + cell[j] * (support_hi[j] + 1).min(n_grid - 1) as f64;
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Minorization {
    /// `min Cμ̄/(C*μ*)` over grid points in the support of `μ*`.
    pub epsilon: f64,
    pub ok: bool,
    pub c_at_least_c_star: bool,
}

/// Checks `C μ ≥ C* μ*` pointwise on `grid`.
pub fn check_minorization(mu: &RegenDistribution, minimal: &MinimalRegen, grid: &[Vec<f64>]) -> Minorization {
    let mut epsilon = f64::INFINITY;
    for x in grid {
        let star = match minimal.unnormalized(x) {
            Ok(v) if v > 0.0 => v,
            _ => continue,
        };
        let lmu = mu.log_density(x);
        let ratio = if lmu == f64::NEG_INFINITY {
            0.0
        } else {
            mu.c() * lmu.exp() / star
        };
        epsilon = epsilon.min(ratio);
    }
    Minorization {
        epsilon,
        ok: epsilon >= 1.0 - 1e-9,
        c_at_least_c_star: mu.c() >= minimal.c_star() * (1.0 - 1e-9),
    }
}

/// Maximum of `κ` over the faces of `[−ℓ, ℓ]^d`, on a grid of
/// `FACE_GRID^(d−1)` points per face.
pub fn face_max(kappa: &dyn RateFn, d: usize, ell: f64) -> Result<f64> {
    if ell == 0.0 {
        return kappa.rate(&vec![0.0; d]);
    }
    let per_face = FACE_GRID.pow(d as u32 - 1);
    let mut best = f64::NEG_INFINITY;
    for axis in 0..d {
        for sign in [-1.0, 1.0] {
            for i in 0..per_face {
                let mut x = vec![0.0; d];
                let mut rest = i;
                for (j, xj) in x.iter_mut().enumerate() {
                    if j == axis {
                        *xj = sign * ell;
                    } else {
                        let k = rest % FACE_GRID;
                        rest /= FACE_GRID;
                        *xj = -ell + 2.0 * ell * k as f64 / (FACE_GRID - 1) as f64;
                    }
                }
                best = best.max(kappa.rate(&x)?);
            }
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LFlag {
    Solved,
    /// `κ(0) > M`: no cube avoids truncation.
    Empty,
    /// `κ ≤ M` on the whole search radius.
    Capped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LResult {
    pub l: f64,
    pub flag: LFlag,
}

/// Half-width `L(M)` of the largest cube with no truncation, by bisection.
pub fn compute_l(kappa: &dyn RateFn, m: f64, d: usize, search_radius: f64, tol: f64) -> Result<LResult> {
    if face_max(kappa, d, 0.0)? > m {
        return Ok(LResult { l: 0.0, flag: LFlag::Empty });
    }
    if face_max(kappa, d, search_radius)? <= m {
        return Ok(LResult {
            l: search_radius,
            flag: LFlag::Capped,
        });
    }
    let (mut lo, mut hi) = (0.0, search_radius);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if face_max(kappa, d, mid)? <= m {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(LResult { l: lo, flag: LFlag::Solved })
}

/// `(2d/κ̲)(1 + 1/(L√(2κ̲))) e^{−√(2κ̲) L}`: bounds `∫ P₀(T_M ≤ t) e^{−κ̲t} dt`
/// for Brownian motion leaving the cube of half-width `L`.
pub fn bm_truncation_bound(kappa_floor: f64, l: f64, d: usize) -> f64 {
    let r = (2.0 * kappa_floor).sqrt();
    (2.0 * d as f64 / kappa_floor) * (1.0 + 1.0 / (l * r)) * (-r * l).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McBound {
    /// `4 ∫ P(τ_M^e ≤ t) e^{−κ̲t} dt / E[τ∂]`.
    pub bound: f64,
    pub bound_se: f64,
    /// `E[e^{−κ̲ τ_M^e}] / κ̲`.
    pub integral: f64,
    pub mean_lifetime: f64,
    pub capped_fraction: f64,
}

/// Monte Carlo version of the general truncation bound. Capped excess
/// times count as `T_cap`, which overstates the bound. `E[τ∂]` is the mean
/// of `τ_M ∧ τ_M^e` on the same paths.
#[allow(clippy::too_many_arguments)]
pub fn mc_truncation_bound(
    dynamics: &Dynamics,
    mu: &RegenDistribution,
    kappa: &dyn RateFn,
    m: f64,
    kappa_floor: f64,
    n_paths: usize,
    t_cap: f64,
    par: Parallelism,
) -> Result<McBound> {
    if !(kappa_floor > 0.0) || n_paths < 2 {
        return Err(RestoreError::Config("need kappa_floor > 0 and at least 2 paths".into()));
    }
    let pool = par.pool()?;
    let samples: Vec<(f64, f64, bool)> = pool.install(|| {
        (0..n_paths as u64)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream(par.seed, i);
                let x0 = mu.sample(&mut rng);
                let s = split_lifetime(dynamics, &x0, kappa, m, SplitOptions::with_cap(t_cap), &mut rng)?;
                let te = if s.tau_excess.capped { t_cap } else { s.tau_excess.time };
                Ok(((-kappa_floor * te).exp(), s.tau_min, s.tau_excess.capped))
            })
            .collect::<Result<_>>()
    })?;
    let n = n_paths as f64;
    let w_mean = samples.iter().map(|s| s.0).sum::<f64>() / n;
    let t_mean = samples.iter().map(|s| s.1).sum::<f64>() / n;
    // delta method for the ratio of means
    let r = w_mean / t_mean;
    let var = samples.iter().map(|s| (s.0 - r * s.1).powi(2)).sum::<f64>() / (n - 1.0);
    let ratio_se = (var / n).sqrt() / t_mean;
    Ok(McBound {
        bound: 4.0 * r / kappa_floor,
        bound_se: 4.0 * ratio_se / kappa_floor,
        integral: w_mean / kappa_floor,
        mean_lifetime: t_mean,
        capped_fraction: samples.iter().filter(|s| s.2).count() as f64 / n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChooseM {
    pub l_target: f64,
    pub m: f64,
    /// `n ≤ 1` gives a zero-width cube.
    pub degenerate: bool,
}

/// Truncation level balancing bias against Monte Carlo error for `n` draws:
/// `L = ln n / (2√(2κ̲))`, `M` the rate maximum over the faces of that cube.
pub fn choose_m(n: f64, kappa_floor: f64, kappa: &dyn RateFn, d: usize) -> Result<ChooseM> {
    if !(kappa_floor > 0.0) {
        return Err(RestoreError::Config(format!("kappa_floor must be positive, got {kappa_floor}")));
    }
    let l_target = (n.ln() / (2.0 * (2.0 * kappa_floor).sqrt())).max(0.0);
    Ok(ChooseM {
        l_target,
        m: face_max(kappa, d, l_target)?,
        degenerate: n <= 1.0,
    })
}

/// One row of a truncation study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TruncationReport {
    pub m: f64,
    pub l_m: f64,
    pub bound_general: f64,
    pub bound_bm: f64,
    pub tv_estimate: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{gaussian, regen_rate};
    use crate::oracle::chi2_statistic;

    fn std_normal() -> TargetModel {
        gaussian(vec![0.0], vec![1.0]).unwrap()
    }

    #[test]
    fn kappa_star_examples() {
        let t = std_normal();
        let d = Drift::zero();
        assert_eq!(kappa_star(&t, &d, 0.0, &[0.0]).unwrap(), 0.0);
        assert!((kappa_star(&t, &d, 0.0, &[2.0]).unwrap() - 1.5).abs() < 1e-12);
        // κ̃(√3) = 1
        assert_eq!(kappa_star(&t, &d, 4.0, &[3f64.sqrt()]).unwrap(), 4.0);
    }

    #[test]
    fn minimal_regen_standard_normal() {
        // ∫₋₁¹ ½(1 − x²)φ(x) dx = φ(1)
        let phi1 = (-0.5f64).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let m = build_minimal_regen(&std_normal(), &Drift::zero(), 0.0, &[-3.0], &[3.0], 2001).unwrap();
        assert!((m.c_star() - phi1).abs() < 1e-5, "C* = {}", m.c_star());
        assert!(m.unnormalized(&[1.01]).unwrap() == 0.0);
        assert!(m.unnormalized(&[0.99]).unwrap() > 0.0);
    }

    #[test]
    fn minimal_regen_errors() {
        let t = std_normal();
        let d = Drift::zero();
        assert!(matches!(
            build_minimal_regen(&t, &d, 0.0, &[-0.5], &[3.0], 501),
            Err(RestoreError::BoxTooSmall { .. })
        ));
        assert!(matches!(
            build_minimal_regen(&t, &d, -1.0, &[-3.0], &[3.0], 501),
            Err(RestoreError::Config(_))
        ));
        // N(0, 0.5²): κ̃ = 8x² − 2, so a zero floor still leaves a support
        let narrow = gaussian(vec![0.0], vec![0.5]).unwrap();
        assert!(build_minimal_regen(&narrow, &d, 0.0, &[-3.0], &[3.0], 501).is_ok());
        let flat = TargetModel::with_analytic(
            1,
            Arc::new(|x: &[f64]| -x[0].abs().powi(3)),
            Arc::new(|x: &[f64]| vec![3.0 * x[0] * x[0] * x[0].signum()]),
            Arc::new(|x: &[f64]| 6.0 * x[0].abs() - 100.0),
        );
        // κ̃ = ½(9x⁴ − 6|x| + 100) > 0 for all x
        assert!(matches!(
            build_minimal_regen(&flat, &d, 0.0, &[-3.0], &[3.0], 501),
            Err(RestoreError::FloorTooLow { .. })
        ));
    }

    #[test]
    fn identity_and_sampler() {
        let t = std_normal();
        let d = Drift::zero();
        let floor = 0.8;
        let m = Arc::new(build_minimal_regen(&t, &d, floor, &[-4.0], &[4.0], 2001).unwrap());
        for x in m.grid_points() {
            let partial = partial_rate_diffusion(&t, &d, &x).unwrap();
            let lhs = partial + m.c_star() * (m.log_density(&x) - t.log_density(&x).unwrap()).exp();
            assert!((lhs - partial.max(floor)).abs() < 1e-9, "x = {x:?}");
        }
        let mut rng = stream(1, 0);
        let draws: Vec<f64> = (0..100_000).map(|_| m.sample(&mut rng)[0]).collect();
        assert_eq!(m.envelope_violations(), 0);
        let support = (2.0 * (floor + 0.5)).sqrt();
        let edges: Vec<f64> = (0..=50).map(|i| -support + 2.0 * support * i as f64 / 50.0).collect();
        let probs: Vec<f64> = edges
            .windows(2)
            .map(|w| {
                // Simpson per bin
                let k = 40;
                let h = (w[1] - w[0]) / k as f64;
                (0..=k)
                    .map(|j| {
                        let x = w[0] + j as f64 * h;
                        let c = if j == 0 || j == k { 1.0 } else if j % 2 == 1 { 4.0 } else { 2.0 };
                        c * m.log_density(&[x]).exp()
                    })
                    .sum::<f64>()
                    * h
                    / 3.0
            })
            .collect();
        let (_, p) = chi2_statistic(&draws, &edges, &probs).unwrap();
        assert!(p > 0.001, "p = {p}");
    }

    #[test]
    fn minorization_checks() {
        let t = std_normal();
        let d = Drift::zero();
        let m = Arc::new(build_minimal_regen(&t, &d, 0.5, &[-4.0], &[4.0], 1001).unwrap());
        let grid = m.grid_points();
        let itself = m.clone().into_regen().unwrap();
        let r = check_minorization(&itself, &m, &grid);
        assert!((r.epsilon - 1.0).abs() < 1e-12 && r.ok && r.c_at_least_c_star);
        let halved = itself.with_c(m.c_star() / 2.0).unwrap();
        let r = check_minorization(&halved, &m, &grid);
        assert!(!r.ok && !r.c_at_least_c_star);
        // a Gaussian μ with C large enough that κ ≥ κ̲ everywhere on the grid
        let mu = RegenDistribution::gaussian(vec![0.0], vec![1.0], 1.0).unwrap();
        let r = check_minorization(&mu, &m, &grid);
        assert!(r.ok);
        for x in &grid {
            assert!(regen_rate(&t, &mu, &d, x).unwrap() >= 0.5 - 1e-12);
        }
    }

    #[test]
    fn l_of_m_examples() {
        let kappa = |x: &[f64]| Ok(((x[0] * x[0] - 1.0) / 2.0).max(0.0) + 0.5);
        let r = compute_l(&kappa, 2.0, 1, 10.0, 1e-9).unwrap();
        assert_eq!(r.flag, LFlag::Solved);
        assert!((r.l - 2.0).abs() < 1e-8);
        assert_eq!(compute_l(&kappa, 0.4, 1, 10.0, 1e-6).unwrap(), LResult { l: 0.0, flag: LFlag::Empty });
        let flat = |_: &[f64]| Ok(1.0);
        assert_eq!(compute_l(&flat, 1.0, 2, 7.0, 1e-6).unwrap(), LResult { l: 7.0, flag: LFlag::Capped });
        // in 2D the face maximum of |x|²/2 on the cube is at the corners: ℓ² = M
        let bowl = |x: &[f64]| Ok(0.5 * (x[0] * x[0] + x[1] * x[1]));
        let r = compute_l(&bowl, 4.0, 2, 10.0, 1e-9).unwrap();
        assert!((r.l - 2.0).abs() < 1e-6);
    }

    #[test]
    fn bm_bound_shape() {
        let mut prev = f64::INFINITY;
        for i in 1..100 {
            let b = bm_truncation_bound(1.0, i as f64 * 0.2, 1);
            assert!(b < prev);
            prev = b;
        }
        assert!(bm_truncation_bound(1.0, 200.0, 1) < 1e-100);
        assert_eq!(bm_truncation_bound(0.7, 3.0, 2), 2.0 * bm_truncation_bound(0.7, 3.0, 1));
    }

    #[test]
    fn choose_m_examples() {
        let kappa = |x: &[f64]| Ok(0.5 * x[0] * x[0] + 1.0);
        let c = choose_m(1e6, 2.0, &kappa, 1).unwrap();
        assert!((c.l_target - 1e6f64.ln() / 4.0).abs() < 1e-12);
        assert!((c.l_target - 3.4539).abs() < 1e-4);
        let one = choose_m(1.0, 2.0, &kappa, 1).unwrap();
        assert!(one.degenerate && one.l_target == 0.0);
        let back = compute_l(&kappa, c.m, 1, 50.0, 1e-6).unwrap();
        assert!(back.l >= c.l_target - 1e-6);
    }

    #[test]
    fn mc_bound_frozen_excess() {
        // κ(x) = M + 1 on a frozen path: τ_M^e ~ Exp(1)
        let m = 3.0;
        let floor = 0.5;
        let mu = RegenDistribution::new(
            Arc::new(|x: &[f64]| if x[0] == 1.0 { 0.0 } else { f64::NEG_INFINITY }),
            Arc::new(|_: &mut dyn RngCore| vec![1.0]),
            1.0,
        )
        .unwrap();
        let kappa = move |_: &[f64]| Ok(m + 1.0);
        let r = mc_truncation_bound(&Dynamics::constant(1), &mu, &kappa, m, floor, 20_000, 200.0, Parallelism::new(3, 4))
            .unwrap();
        let want = 1.0 / (floor * (1.0 + floor));
        // Var e^{−κ̲E} = 1/(1+2κ̲) − 1/(1+κ̲)²
        let se = ((1.0 / (1.0 + 2.0 * floor) - (1.0 + floor).powi(-2)) / 20_000.0).sqrt() / floor;
        assert!((r.integral - want).abs() < 3.0 * se, "{} vs {want}", r.integral);
        assert!((r.mean_lifetime - 1.0 / (m + 1.0)).abs() < 0.01);
    }

    #[test]
    fn mc_bound_without_excess_vanishes_with_cap() {
        let mu = RegenDistribution::gaussian(vec![0.0], vec![1.0], 1.0).unwrap();
        let kappa = |_: &[f64]| Ok(1.0);
        let a = mc_truncation_bound(&Dynamics::brownian(1), &mu, &kappa, 2.0, 1.0, 200, 5.0, Parallelism::new(4, 2)).unwrap();
        let b = mc_truncation_bound(&Dynamics::brownian(1), &mu, &kappa, 2.0, 1.0, 200, 10.0, Parallelism::new(4, 2)).unwrap();
        assert_eq!(a.capped_fraction, 1.0);
        assert!((a.integral - (-5.0f64).exp()).abs() < 1e-12);
        assert!(b.bound < a.bound);
    }

    #[test]
    fn mc_bound_monotone_in_m() {
        let mu = RegenDistribution::gaussian(vec![0.0], vec![1.0], 1.0).unwrap();
        let kappa = |x: &[f64]| Ok(0.5 * x[0] * x[0] + 1.0);
        let par = Parallelism::new(5, 4);
        let lo = mc_truncation_bound(&Dynamics::brownian(1), &mu, &kappa, 1.5, 1.0, 4000, 30.0, par).unwrap();
        let hi = mc_truncation_bound(&Dynamics::brownian(1), &mu, &kappa, 3.0, 1.0, 4000, 30.0, par).unwrap();
        assert!(lo.bound >= hi.bound - 3.0 * (lo.bound_se.powi(2) + hi.bound_se.powi(2)).sqrt());
    }
}
