//! Built-in experiments with fixed parameters: the Gaussian-mixture jump
//! sampler, exact draws from a Cauchy posterior, a truncation study, and
//! the discrete invariance check.

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::analysis::{bm_truncation_bound, build_minimal_regen, compute_l, kappa_star, mc_truncation_bound, LFlag};
use crate::dynamics::Dynamics;
use crate::error::{RestoreError, Result};
use crate::estimators::{histogram, Histogram, WaldAccumulator};
use crate::model::{cauchy_posterior, gaussian, normal_cdf, DiscreteModel, Drift, Mixture1d, RegenDistribution};
use crate::oracle::{check_invariance, full_generator, random_model, stationary_vector};
use crate::sampler::{
    run_cftp_parallel, run_diffusion_restore_parallel, run_jump_restore_parallel, stream_jump_tours, CftpConfig,
    DiffusionRestore, EventKind, MetropolisRestore, Parallelism, RestoreProcess, RunLimit, Trajectory,
};
use crate::streams::{stream, substream_seed};

/// Equal-width bin edges.
pub fn uniform_edges(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    (0..=bins).map(|i| lo + (hi - lo) * i as f64 / bins as f64).collect()
}

fn bin_of(edges: &[f64]) -> impl Fn(&[f64]) -> Option<usize> + '_ {
    move |x: &[f64]| crate::oracle::bin_index(edges, x[0])
}

/// Total variation between binned distributions, counting the mass outside
/// the bins as one more bin.
pub fn tv_with_tail(p_hat: &[f64], p: &[f64]) -> f64 {
    let inner: f64 = p_hat.iter().zip(p).map(|(a, b)| (a - b).abs()).sum();
    let tail = (p.iter().sum::<f64>() - p_hat.iter().sum::<f64>()).abs();
    0.5 * (inner + tail)
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

// ---------------------------------------------------------------------------
// Gaussian-mixture target with a random-walk Metropolis jump process

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixtureJumpConfig {
    pub steps: usize,
    pub c: f64,
    pub proposal_sd: f64,
    pub bins: usize,
    pub hist_lo: f64,
    pub hist_hi: f64,
}

impl Default for MixtureJumpConfig {
    fn default() -> Self {
        Self {
            steps: 300_000,
            c: 1.0,
            proposal_sd: 1.0,
            bins: 100,
            hist_lo: -40.0,
            hist_hi: 25.0,
        }
    }
}

pub fn mixture_target() -> Mixture1d {
    Mixture1d::new(vec![0.1, 0.3, 0.6], vec![-22.0, -1.0, 15.0], vec![3.0, 0.2, 1.0]).unwrap()
}

pub fn mixture_regen(c: f64) -> Result<RegenDistribution> {
    RegenDistribution::gaussian_mixture(vec![1.0 / 3.0; 3], vec![-29.0, 3.0, 10.0], vec![0.3, 1.0, 1.0], c)
}

#[derive(Debug, Clone)]
pub struct MixtureJumpResult {
    pub trajectory: Trajectory,
    /// Regenerations among jump-chain steps (rejected proposals included).
    pub regen_fraction: f64,
    pub edges: Vec<f64>,
    pub histogram: Histogram,
    pub reference: Vec<f64>,
    pub tv: f64,
}

pub fn mixture_jump(cfg: &MixtureJumpConfig, par: Parallelism) -> Result<MixtureJumpResult> {
    let target = Arc::new(mixture_target());
    let t2 = target.clone();
    let model = MetropolisRestore {
        log_pi: Arc::new(move |x: &[f64]| t2.log_density(x[0])),
        proposal_sd: cfg.proposal_sd,
        regen: mixture_regen(cfg.c)?,
        dim: 1,
    };
    let traj = run_jump_restore_parallel(&model, None, RunLimit::steps(cfg.steps), par)?;
    let moves = traj.events().filter(|e| e.kind == EventKind::LocalMove).count();
    let regens = traj.regen_count();
    let edges = uniform_edges(cfg.hist_lo, cfg.hist_hi, cfg.bins);
    let histogram = histogram(&traj, bin_of(&edges), cfg.bins, true)?;
    let reference: Vec<f64> = edges.windows(2).map(|w| target.cdf(w[1]) - target.cdf(w[0])).collect();
    let tv = tv_with_tail(&histogram.probs, &reference);
    Ok(MixtureJumpResult {
        regen_fraction: regens as f64 / (moves + regens) as f64,
        trajectory: traj,
        edges,
        histogram,
        reference,
        tv,
    })
}

// ---------------------------------------------------------------------------
// Exact draws from a Cauchy-likelihood posterior

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CauchyCftpConfig {
    pub observations: Vec<f64>,
    /// Drift coefficient of the (unstable) OU local dynamics.
    pub theta: f64,
    pub kappa_floor: f64,
    pub box_lo: f64,
    pub box_hi: f64,
    pub n_grid: usize,
    /// `M` as a multiple of the grid maximum of `κ*`.
    pub m_factor: f64,
    pub n_draws: usize,
    pub bins: usize,
    pub hist_lo: f64,
    pub hist_hi: f64,
}

impl Default for CauchyCftpConfig {
    fn default() -> Self {
        Self {
            observations: vec![1.3, -11.6, 4.4],
            theta: 1.0,
            kappa_floor: 4.0,
            box_lo: -30.0,
            box_hi: 30.0,
            n_grid: 6001,
            m_factor: 1.1,
            n_draws: 30_000,
            bins: 50,
            hist_lo: -25.0,
            hist_hi: 15.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CauchyCftpResult {
    pub draws: Vec<f64>,
    pub exact: bool,
    pub c_star: f64,
    pub m: f64,
    pub mean_candidates: f64,
    pub mean_regenerations: f64,
    pub edges: Vec<f64>,
    pub empirical: Vec<f64>,
    pub reference: Vec<f64>,
    pub tv: f64,
}

pub fn cauchy_cftp(cfg: &CauchyCftpConfig, par: Parallelism) -> Result<CauchyCftpResult> {
    let target = cauchy_posterior(cfg.observations.clone())?;
    let drift = Drift::linear(vec![cfg.theta]);
    let minimal = Arc::new(build_minimal_regen(
        &target,
        &drift,
        cfg.kappa_floor,
        &[cfg.box_lo],
        &[cfg.box_hi],
        cfg.n_grid,
    )?);
    let c_star = minimal.c_star();
    let mut sup = f64::NEG_INFINITY;
    for x in minimal.grid_points() {
        sup = sup.max(kappa_star(&target, &drift, cfg.kappa_floor, &x)?);
    }
    let m = cfg.m_factor * sup;
    let (t2, d2, floor) = (target.clone(), drift.clone(), cfg.kappa_floor);
    // κ̃ + C*μ*/π̄ = κ̃ ∨ κ̲ exactly; evaluating the maximum avoids rounding below κ̲
    let rate = move |x: &[f64]| kappa_star(&t2, &d2, floor, x);
    let process = RestoreProcess::new(Dynamics::ou(vec![cfg.theta]), Arc::new(rate), minimal.into_regen()?);
    let cftp = CftpConfig {
        kappa_lower: cfg.kappa_floor,
        bound_m: m,
        process,
    };
    let out = run_cftp_parallel(&cftp, cfg.n_draws, par)?;
    let n = out.len() as f64;
    let draws: Vec<f64> = out.iter().map(|d| d.state[0]).collect();
    let edges = uniform_edges(cfg.hist_lo, cfg.hist_hi, cfg.bins);
    let mut empirical = vec![0.0; cfg.bins];
    for x in &draws {
        if let Some(b) = crate::oracle::bin_index(&edges, *x) {
            empirical[b] += 1.0 / n;
        }
    }
    let dens = |x: f64| target.log_density(&[x]).map(f64::exp).unwrap_or(0.0);
    let z = simpson(dens, -400.0, 400.0, 400_000);
    let reference: Vec<f64> = edges.windows(2).map(|w| simpson(dens, w[0], w[1], 200) / z).collect();
    let tv = tv_with_tail(&empirical, &reference);
    Ok(CauchyCftpResult {
        exact: out.iter().all(|d| d.exact),
        mean_candidates: out.iter().map(|d| d.n_candidates as f64).sum::<f64>() / n,
        mean_regenerations: out.iter().map(|d| d.n_regenerations as f64).sum::<f64>() / n,
        draws,
        c_star,
        m,
        edges,
        empirical,
        reference,
        tv,
    })
}

// ---------------------------------------------------------------------------
// Truncation study on a one-dimensional Gaussian testbed

/// Standard normal target, Brownian local dynamics and `μ = N(0, 1)` with
/// `C = 1.5`, so `κ(x) = x²/2 + 1` and `κ̲ = 1`.
pub fn truncation_testbed() -> Result<RestoreProcess> {
    let target = gaussian(vec![0.0], vec![1.0])?;
    let mu = RegenDistribution::gaussian(vec![0.0], vec![1.0], 1.5)?;
    Ok(RestoreProcess::diffusion(target, mu, Dynamics::brownian(1))?.with_floor(1.0))
}

pub const TESTBED_KAPPA_FLOOR: f64 = 1.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruncationConfig {
    pub levels: Vec<f64>,
    pub t_max: f64,
    pub n_paths: usize,
    pub t_cap: f64,
    pub bins: usize,
    pub hist_lo: f64,
    pub hist_hi: f64,
}

impl Default for TruncationConfig {
    fn default() -> Self {
        Self {
            levels: vec![2.0, 5.0, 10.0, 20.0],
            t_max: 20_000.0,
            n_paths: 20_000,
            t_cap: 50.0,
            bins: 40,
            hist_lo: -4.0,
            hist_hi: 4.0,
        }
    }
}

/// One truncation level. Bounds are on `‖π_M − π‖₁`; the closed-form
/// Brownian bound is scaled by the same `4/E[τ∂]` as the Monte Carlo one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TruncationRow {
    pub m: f64,
    pub l_m: f64,
    pub bound_bm: f64,
    pub bound_mc: f64,
    pub bound_mc_se: f64,
    pub tv_empirical: f64,
    /// Binned `‖π̂_M − π‖₁` (with the outside mass as one bin).
    pub l1_empirical: f64,
    /// Sum of per-bin standard errors: the scale of the sampling noise in `l1_empirical`.
    pub l1_noise: f64,
    pub mean_lifetime: f64,
}

pub fn truncation_study(cfg: &TruncationConfig, par: Parallelism) -> Result<Vec<TruncationRow>> {
    let process = truncation_testbed()?;
    let edges = uniform_edges(cfg.hist_lo, cfg.hist_hi, cfg.bins);
    let reference: Vec<f64> = edges.windows(2).map(|w| normal_cdf(w[1]) - normal_cdf(w[0])).collect();
    let kappa = process.rate.clone();
    let mut rows = Vec::new();
    for (k, &m) in cfg.levels.iter().enumerate() {
        let l = compute_l(kappa.as_ref(), m, 1, 50.0, 1e-9)?;
        if l.flag != LFlag::Solved {
            return Err(RestoreError::Config(format!("no finite L(M) for M = {m}")));
        }
        let mc_par = Parallelism::new(substream_seed(par.seed, 2 * k as u64 + 1), par.workers);
        let mc = mc_truncation_bound(
            &process.dynamics,
            &process.regen,
            kappa.as_ref(),
            m,
            TESTBED_KAPPA_FLOOR,
            cfg.n_paths,
            cfg.t_cap,
            mc_par,
        )?;
        let bound_bm = 4.0 * bm_truncation_bound(TESTBED_KAPPA_FLOOR, l.l, 1) / mc.mean_lifetime;
        // shared seed across levels
        let sampler = DiffusionRestore::new(process.clone(), m, None)?;
        let traj = run_diffusion_restore_parallel(&sampler, None, RunLimit::time(cfg.t_max), par)?;
        let h = histogram(&traj, bin_of(&edges), cfg.bins, true)?;
        let tv = tv_with_tail(&h.probs, &reference);
        rows.push(TruncationRow {
            m,
            l_m: l.l,
            bound_bm,
            bound_mc: mc.bound,
            bound_mc_se: mc.bound_se,
            tv_empirical: tv,
            l1_empirical: 2.0 * tv,
            l1_noise: h.se.iter().sum(),
            mean_lifetime: mc.mean_lifetime,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Discrete invariance check against the full generator

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleCheckConfig {
    pub n_models: usize,
    pub min_states: usize,
    pub max_states: usize,
    pub t_max: f64,
}

impl Default for OracleCheckConfig {
    fn default() -> Self {
        Self {
            n_models: 200,
            min_states: 2,
            max_states: 8,
            t_max: 1e5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleRow {
    pub index: usize,
    pub n_states: usize,
    /// `‖π L^μ‖_∞`.
    pub residual: f64,
    /// `max |v − π|` for the linear-solve stationary vector `v`.
    pub stationary_error: f64,
    /// Regenerative Wald test of the simulated occupation against `π`.
    pub chi2_p: f64,
}

pub const INVARIANCE_TOL: f64 = 1e-10;
pub const STATIONARY_TOL: f64 = 1e-9;
pub const OCCUPATION_LEVEL: f64 = 0.001;

#[derive(Debug, Clone, Serialize)]
pub struct OracleSummary {
    pub rows: Vec<OracleRow>,
    pub max_residual: f64,
    pub max_stationary_error: f64,
    pub occupation_pass_fraction: f64,
}

impl OracleSummary {
    pub fn passed(&self, min_pass_fraction: f64) -> bool {
        self.max_residual <= INVARIANCE_TOL
            && self.max_stationary_error <= STATIONARY_TOL
            && self.occupation_pass_fraction >= min_pass_fraction
    }
}

/// Streams a run into the occupation test; first and unfinished tours are dropped.
fn discrete_occupation_test(model: &DiscreteModel, t_max: f64, rng: &mut dyn RngCore) -> Result<(f64, f64)> {
    let n = model.n_states();
    let mut acc = WaldAccumulator::new(n)?;
    let mut row = vec![0.0; n];
    let mut first = true;
    stream_jump_tours(model, None, t_max, rng, |tour, complete| {
        if complete && !first {
            row.iter_mut().for_each(|v| *v = 0.0);
            for k in 0..tour.times.len() {
                let next = tour.times.get(k + 1).copied().unwrap_or(tour.length);
                row[tour.states[k] as usize] += next - tour.times[k];
            }
            acc.push(tour.length, &row);
        }
        first = false;
    })?;
    acc.test(model.pi())
}

pub fn oracle_check(cfg: &OracleCheckConfig, par: Parallelism) -> Result<OracleSummary> {
    if cfg.min_states < 2 || cfg.max_states < cfg.min_states {
        return Err(RestoreError::Config("need 2 <= min_states <= max_states".into()));
    }
    let span = cfg.max_states - cfg.min_states + 1;
    let model_seed = substream_seed(par.seed, 0x6d6f64656c);
    let pool = par.pool()?;
    let rows: Vec<OracleRow> = pool.install(|| {
        (0..cfg.n_models)
            .into_par_iter()
            .map(|i| {
                let n = cfg.min_states + i % span;
                let model = random_model(n, &mut stream(model_seed, i as u64));
                let residual = check_invariance(&model)?;
                let v = stationary_vector(&full_generator(&model)?)?;
                let stationary_error = v.iter().zip(model.pi()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                let (_, chi2_p) = discrete_occupation_test(&model, cfg.t_max, &mut stream(par.seed, i as u64))?;
                Ok(OracleRow {
                    index: i,
                    n_states: n,
                    residual,
                    stationary_error,
                    chi2_p,
                })
            })
            .collect::<Result<_>>()
    })?;
    Ok(OracleSummary {
        max_residual: rows.iter().map(|r| r.residual).fold(0.0, f64::max),
        max_stationary_error: rows.iter().map(|r| r.stationary_error).fold(0.0, f64::max),
        occupation_pass_fraction: rows.iter().filter(|r| r.chi2_p > OCCUPATION_LEVEL).count() as f64 / rows.len() as f64,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tv_counts_outside_mass() {
        assert_eq!(tv_with_tail(&[0.5, 0.5], &[0.5, 0.5]), 0.0);
        assert!((tv_with_tail(&[0.5, 0.3], &[0.5, 0.5]) - 0.2).abs() < 1e-15);
        assert!((tv_with_tail(&[1.0, 0.0], &[0.0, 1.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn simpson_is_exact_for_cubics() {
        let v = simpson(|x| x * x * x - 2.0 * x + 1.0, -1.0, 2.0, 6);
        assert!((v - (15.0 / 4.0 - 3.0 + 3.0)).abs() < 1e-12);
    }

    #[test]
    fn testbed_rate() {
        let p = truncation_testbed().unwrap();
        for x in [-3.0, -0.5, 0.0, 1.2, 4.0] {
            assert!((p.kappa(&[x]).unwrap() - (0.5 * x * x + 1.0)).abs() < 1e-6);
        }
        let l = compute_l(p.rate.as_ref(), 5.0, 1, 50.0, 1e-10).unwrap();
        assert!((l.l - 8f64.sqrt()).abs() < 1e-5);
    }

    #[test]
    fn small_mixture_run() {
        let cfg = MixtureJumpConfig {
            steps: 20_000,
            ..Default::default()
        };
        let r = mixture_jump(&cfg, Parallelism::new(1, 2)).unwrap();
        let steps = r.trajectory.events().filter(|e| matches!(e.kind, EventKind::LocalMove | EventKind::Regeneration)).count();
        assert_eq!(steps, 20_000);
        assert!(r.regen_fraction > 0.3 && r.regen_fraction < 0.7);
        assert!((r.reference.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn constant_rate_regen_fraction_is_a_fair_coin() {
        // μ = π: κ ≡ C = λ, so each step regenerates with probability 1/2
        let mu = RegenDistribution::gaussian(vec![0.0], vec![1.0], 1.0).unwrap();
        let model = MetropolisRestore {
            log_pi: Arc::new(|x: &[f64]| -0.5 * x[0] * x[0] - 0.5 * (2.0 * std::f64::consts::PI).ln()),
            proposal_sd: 1.0,
            regen: mu,
            dim: 1,
        };
        let n = 40_000;
        let t = run_jump_restore_parallel(&model, None, RunLimit::steps(n), Parallelism::new(6, 3)).unwrap();
        let frac = t.regen_count() as f64 / n as f64;
        assert!((frac - 0.5).abs() < 4.0 * (0.25 / n as f64).sqrt(), "{frac}");
    }

    #[test]
    fn small_oracle_check() {
        let cfg = OracleCheckConfig {
            n_models: 8,
            t_max: 5e3,
            ..Default::default()
        };
        let s = oracle_check(&cfg, Parallelism::new(42, 4)).unwrap();
        assert!(s.max_residual <= INVARIANCE_TOL);
        assert!(s.max_stationary_error <= STATIONARY_TOL);
        assert_eq!(s.rows.len(), 8);
    }
}
