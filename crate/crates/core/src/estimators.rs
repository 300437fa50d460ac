//! Regenerative estimation from tour decompositions.
//!
//! Tour path integrals are exact left-point sums on piecewise-constant
//! paths and trapezoidal sums over the recorded skeleton on continuous
//! paths, so `f ≡ 1` always integrates to the tour length.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{RestoreError, Result};
use crate::sampler::{PathKind, Trajectory};

/// Below this many tours the normal-approximation interval is flagged.
pub const MIN_TOURS_FOR_CI: usize = 30;

/// Lifetimes `τ_i` and path integrals `Z_i` of completed tours.
#[derive(Debug, Clone, PartialEq)]
pub struct TourStats {
    pub tau: Vec<f64>,
    pub z: Vec<f64>,
    /// Completed tours left out (the first tour, by default).
    pub excluded: usize,
}

impl TourStats {
    pub fn new(tau: Vec<f64>, z: Vec<f64>) -> Result<Self> {
        if tau.len() != z.len() {
            return Err(RestoreError::Config("tau and Z must have equal length".into()));
        }
        if tau.is_empty() {
            return Err(RestoreError::InsufficientData("no complete tours".into()));
        }
        Ok(Self { tau, z, excluded: 0 })
    }

    pub fn n_tours(&self) -> usize {
        self.tau.len()
    }

    pub fn total_time(&self) -> f64 {
        self.tau.iter().sum()
    }

    pub fn mean_lifetime(&self) -> f64 {
        self.total_time() / self.n_tours() as f64
    }
}

/// Integral of `f` over events `range` of the trajectory, up to `t_end`.
fn path_integral(traj: &Trajectory, start: usize, end: usize, t_end: f64, f: &impl Fn(&[f64]) -> f64) -> f64 {
    let mut acc = 0.0;
    match traj.path_kind() {
        PathKind::PiecewiseConstant => {
            for k in start..end {
                let next = if k + 1 < end { traj.time(k + 1) } else { t_end };
                acc += f(traj.state(k)) * (next - traj.time(k));
            }
        }
        PathKind::Continuous => {
            let mut prev = f(traj.state(start));
            for k in start + 1..end {
                let cur = f(traj.state(k));
                acc += 0.5 * (prev + cur) * (traj.time(k) - traj.time(k - 1));
                prev = cur;
            }
        }
    }
    acc
}

/// Per-tour lifetimes and integrals of `f`. The unfinished last tour is
/// always dropped; the first tour is dropped when `exclude_first`.
pub fn tour_integrals(traj: &Trajectory, f: impl Fn(&[f64]) -> f64, exclude_first: bool) -> Result<TourStats> {
    let mut tau = Vec::new();
    let mut z = Vec::new();
    let mut excluded = 0;
    for (idx, (range, complete)) in traj.tours().into_iter().enumerate() {
        if !complete {
            continue;
        }
        if idx == 0 && exclude_first {
            excluded += 1;
            continue;
        }
        let t_end = traj.time(range.end);
        tau.push(t_end - traj.time(range.start));
        z.push(path_integral(traj, range.start, range.end, t_end, &f));
    }
    if tau.is_empty() {
        return Err(RestoreError::InsufficientData("trajectory has no complete tour to use".into()));
    }
    Ok(TourStats { tau, z, excluded })
}

/// `Σ Z_i / Σ τ_i`.
pub fn estimate(stats: &TourStats) -> Result<f64> {
    if stats.n_tours() == 0 {
        return Err(RestoreError::InsufficientData("no tours".into()));
    }
    Ok(stats.z.iter().sum::<f64>() / stats.total_time())
}

/// `Σ (Z_i − f̄ τ_i)² / (n τ̄²)`.
pub fn sigma2_hat(stats: &TourStats) -> Result<f64> {
    let n = stats.n_tours();
    if n < 2 {
        return Err(RestoreError::InsufficientData(format!("variance needs at least 2 tours, got {n}")));
    }
    let fbar = estimate(stats)?;
    let tbar = stats.mean_lifetime();
    let ss: f64 = stats.z.iter().zip(&stats.tau).map(|(z, t)| (z - fbar * t).powi(2)).sum();
    Ok(ss / (n as f64 * tbar * tbar))
}

/// Effective sample size; `None` when the CLT variance vanishes.
///
/// Reported as `n · v/σ²` — the number of independent draws with the same
/// precision as the `n` tours used.
pub fn n_eff(stats: &TourStats, v_pi: f64) -> Result<Option<f64>> {
    let s2 = sigma2_hat(stats)?;
    if s2 <= 0.0 {
        return Ok(None);
    }
    Ok(Some(stats.n_tours() as f64 * v_pi / s2))
}

/// Time-weighted variance of `f` along the same tours, by plug-in.
pub fn time_weighted_variance(traj: &Trajectory, f: impl Fn(&[f64]) -> f64, exclude_first: bool) -> Result<f64> {
    let first = tour_integrals(traj, &f, exclude_first)?;
    let mean = estimate(&first)?;
    let second = tour_integrals(traj, |x| (f(x) - mean).powi(2), exclude_first)?;
    estimate(&second)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub low: f64,
    pub high: f64,
    /// Fewer tours than the normal approximation warrants.
    pub few_tours: bool,
}

/// `estimate ± z · sqrt(σ̂²/n)`.
pub fn confidence_interval(stats: &TourStats, level: f64) -> Result<Interval> {
    if !(level > 0.0 && level < 1.0) {
        return Err(RestoreError::Config(format!("confidence level must lie in (0, 1), got {level}")));
    }
    let est = estimate(stats)?;
    let s2 = sigma2_hat(stats)?;
    let z = Normal::standard().inverse_cdf(0.5 + level / 2.0);
    let half = z * (s2 / stats.n_tours() as f64).sqrt();
    Ok(Interval {
        low: est - half,
        high: est + half,
        few_tours: stats.n_tours() < MIN_TOURS_FOR_CI,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateReport {
    pub estimate: f64,
    pub sigma2_hat: f64,
    /// `None` stands for an infinite effective sample size.
    pub n_eff: Option<f64>,
    pub ci_low: f64,
    pub ci_high: f64,
    pub ci_warning: bool,
    pub n_tours: usize,
    pub excluded_tours: usize,
    pub total_time: f64,
}

pub fn report(traj: &Trajectory, f: impl Fn(&[f64]) -> f64, exclude_first: bool) -> Result<EstimateReport> {
    let stats = tour_integrals(traj, &f, exclude_first)?;
    let est = estimate(&stats)?;
    let s2 = sigma2_hat(&stats)?;
    let v = time_weighted_variance(traj, &f, exclude_first)?;
    let ci = confidence_interval(&stats, 0.95)?;
    Ok(EstimateReport {
        estimate: est,
        sigma2_hat: s2,
        n_eff: n_eff(&stats, v)?,
        ci_low: ci.low,
        ci_high: ci.high,
        ci_warning: ci.few_tours,
        n_tours: stats.n_tours(),
        excluded_tours: stats.excluded,
        total_time: traj.total_time(),
    })
}

/// Per-tour occupation times of `k` bins, with the same quadrature as
/// [`tour_integrals`]. Returns lifetimes and one row of bin times per tour.
pub fn tour_occupations(
    traj: &Trajectory,
    bin: impl Fn(&[f64]) -> Option<usize>,
    k: usize,
    exclude_first: bool,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let mut tau = Vec::new();
    let mut rows = Vec::new();
    for (idx, (range, complete)) in traj.tours().into_iter().enumerate() {
        if !complete || (idx == 0 && exclude_first) {
            continue;
        }
        let t_end = traj.time(range.end);
        let mut row = vec![0.0; k];
        let mut add = |b: Option<usize>, w: f64| {
            if let Some(b) = b {
                row[b] += w;
            }
        };
        match traj.path_kind() {
            PathKind::PiecewiseConstant => {
                for i in range.clone() {
                    let next = if i + 1 < range.end { traj.time(i + 1) } else { t_end };
                    add(bin(traj.state(i)), next - traj.time(i));
                }
            }
            PathKind::Continuous => {
                let mut prev = bin(traj.state(range.start));
                for i in range.start + 1..range.end {
                    let cur = bin(traj.state(i));
                    let dt = traj.time(i) - traj.time(i - 1);
                    add(prev, 0.5 * dt);
                    add(cur, 0.5 * dt);
                    prev = cur;
                }
            }
        }
        tau.push(t_end - traj.time(range.start));
        rows.push(row);
    }
    if tau.len() < 2 {
        return Err(RestoreError::InsufficientData("need at least 2 complete tours".into()));
    }
    Ok((tau, rows))
}

/// Time-weighted bin probabilities with regenerative standard errors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub probs: Vec<f64>,
    pub se: Vec<f64>,
    pub n_tours: usize,
}

pub fn histogram(
    traj: &Trajectory,
    bin: impl Fn(&[f64]) -> Option<usize>,
    k: usize,
    exclude_first: bool,
) -> Result<Histogram> {
    let (tau, rows) = tour_occupations(traj, bin, k, exclude_first)?;
    let n = tau.len() as f64;
    let total: f64 = tau.iter().sum();
    let tbar = total / n;
    let mut probs = vec![0.0; k];
    let mut se = vec![0.0; k];
    for b in 0..k {
        let p = rows.iter().map(|r| r[b]).sum::<f64>() / total;
        let ss: f64 = rows.iter().zip(&tau).map(|(r, t)| (r[b] - p * t).powi(2)).sum();
        probs[b] = p;
        se[b] = (ss / (n * tbar * tbar) / n).sqrt();
    }
    Ok(Histogram {
        probs,
        se,
        n_tours: tau.len(),
    })
}

/// Wald test of time-weighted occupation against `expected`, using the
/// regenerative covariance of the tour vectors. Bins are exhaustive; the
/// last one is dropped to make the covariance invertible.
pub fn regenerative_chi2(
    traj: &Trajectory,
    bin: impl Fn(&[f64]) -> Option<usize>,
    expected: &[f64],
    exclude_first: bool,
) -> Result<(f64, f64)> {
    let (tau, rows) = tour_occupations(traj, bin, expected.len(), exclude_first)?;
    wald_chi2(&tau, &rows, expected)
}

/// [`regenerative_chi2`] from per-tour lifetimes and bin occupation times.
pub fn wald_chi2(tau: &[f64], rows: &[Vec<f64>], expected: &[f64]) -> Result<(f64, f64)> {
    if tau.len() != rows.len() {
        return Err(RestoreError::Config("one occupation row per tour is required".into()));
    }
    let mut acc = WaldAccumulator::new(expected.len())?;
    for (t, r) in tau.iter().zip(rows) {
        acc.push(*t, r);
    }
    acc.test(expected)
}

/// Running sums for the regenerative Wald test, so tours can be streamed.
#[derive(Debug, Clone)]
pub struct WaldAccumulator {
    k: usize,
    n: f64,
    s_t: f64,
    s_tt: f64,
    s_z: Vec<f64>,
    s_zt: Vec<f64>,
    s_zz: DMatrix<f64>,
    nz: Vec<usize>,
}

impl WaldAccumulator {
    pub fn new(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(RestoreError::Config("need at least 2 bins".into()));
        }
        Ok(Self {
            k,
            n: 0.0,
            s_t: 0.0,
            s_tt: 0.0,
            s_z: vec![0.0; k],
            s_zt: vec![0.0; k],
            s_zz: DMatrix::zeros(k - 1, k - 1),
            nz: Vec::with_capacity(k),
        })
    }

    /// Adds a tour of length `tau` with occupation times `row`.
    pub fn push(&mut self, tau: f64, row: &[f64]) {
        self.n += 1.0;
        self.s_t += tau;
        self.s_tt += tau * tau;
        // short tours occupy few bins: only touch the non-zero ones
        self.nz.clear();
        self.nz.extend((0..self.k).filter(|&b| row[b] != 0.0));
        for &b in &self.nz {
            self.s_z[b] += row[b];
            self.s_zt[b] += row[b] * tau;
        }
        let m = self.k - 1;
        let s_zz = self.s_zz.as_mut_slice();
        for &i in self.nz.iter().filter(|&&i| i < m) {
            for &j in self.nz.iter().filter(|&&j| j < m) {
                s_zz[j * m + i] += row[i] * row[j];
            }
        }
    }

    pub fn n_tours(&self) -> usize {
        self.n as usize
    }

    /// Wald statistic and p-value against `expected`; the last bin is
    /// dropped to make the covariance invertible.
    pub fn test(&self, expected: &[f64]) -> Result<(f64, f64)> {
        if expected.len() != self.k {
            return Err(RestoreError::Config("expected has the wrong number of bins".into()));
        }
        if self.n < 2.0 {
            return Err(RestoreError::InsufficientData("need at least 2 complete tours".into()));
        }
        let m = self.k - 1;
        let p: Vec<f64> = self.s_z.iter().map(|z| z / self.s_t).collect();
        let tbar = self.s_t / self.n;
        // Σ (Z − pτ)(Z − pτ)ᵀ expanded in running sums
        let mut cov = DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                cov[(i, j)] = self.s_zz[(i, j)] - p[i] * self.s_zt[j] - p[j] * self.s_zt[i] + p[i] * p[j] * self.s_tt;
            }
        }
        cov /= self.n * tbar * tbar * self.n;
        let diff = DVector::from_iterator(m, (0..m).map(|b| p[b] - expected[b]));
        let stat = match cov.clone().cholesky() {
            Some(ch) => diff.dot(&ch.solve(&diff)),
            None => {
                let pinv = cov
                    .pseudo_inverse(1e-14)
                    .map_err(|e| RestoreError::InsufficientData(format!("singular occupation covariance: {e}")))?;
                diff.dot(&(pinv * &diff))
            }
        };
        let pvalue = ChiSquared::new(m as f64).unwrap().sf(stat);
        Ok((stat, pvalue))
    }
}
