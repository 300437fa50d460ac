//! Targets, regeneration distributions and the regeneration rate.
//!
//! All densities are stored as Lebesgue log-densities and may be
//! unnormalized. For a diffusion `dY = ∇A(Y) dt + dB` the partial rate is
//! evaluated with the potential of the target relative to the speed measure
//! `e^{2A} dx`, i.e. `U = −log π̄ + 2A`, so callers never supply densities
//! with respect to that measure. The ratio `μ/π` does not depend on the
//! reference measure.

use std::fmt;
use std::sync::Arc;

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{RestoreError, Result};

/// Rates in `[-NEGATIVE_RATE_TOL, 0)` are clamped to zero.
pub const NEGATIVE_RATE_TOL: f64 = 1e-9;

/// Default central-difference step.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

pub type LogDensityFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type VectorFieldFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
pub type ScalarFieldFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type SamplerFn = Arc<dyn Fn(&mut dyn RngCore) -> Vec<f64> + Send + Sync>;

/// A state-dependent nonnegative rate.
pub trait RateFn: Send + Sync {
    fn rate(&self, x: &[f64]) -> Result<f64>;
}

impl<F> RateFn for F
where
    F: Fn(&[f64]) -> Result<f64> + Send + Sync,
{
    fn rate(&self, x: &[f64]) -> Result<f64> {
        self(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DerivativeMode {
    Analytic,
    FiniteDifference { step: f64 },
}

/// Unnormalized target density `π̄ = e^{−U}` together with derivatives of `U`.
#[derive(Clone)]
pub struct TargetModel {
    dim: usize,
    log_density: LogDensityFn,
    grad_u: Option<VectorFieldFn>,
    laplacian_u: Option<ScalarFieldFn>,
    mode: DerivativeMode,
}

impl fmt::Debug for TargetModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TargetModel")
            .field("dim", &self.dim)
            .field("mode", &self.mode)
            .finish()
    }
}

impl TargetModel {
    /// Target known only through its log-density; derivatives by central differences.
    pub fn new(dim: usize, log_density: LogDensityFn) -> Self {
        assert!(dim > 0, "dimension must be positive");
        Self {
            dim,
            log_density,
            grad_u: None,
            laplacian_u: None,
            mode: DerivativeMode::FiniteDifference {
                step: DEFAULT_FD_STEP,
            },
        }
    }

    pub fn with_analytic(
        dim: usize,
        log_density: LogDensityFn,
        grad_u: VectorFieldFn,
        laplacian_u: ScalarFieldFn,
    ) -> Self {
        assert!(dim > 0, "dimension must be positive");
        Self {
            dim,
            log_density,
            grad_u: Some(grad_u),
            laplacian_u: Some(laplacian_u),
            mode: DerivativeMode::Analytic,
        }
    }

    /// Same target, derivatives forced to central differences with step `h`.
    pub fn finite_difference(&self, step: f64) -> Self {
        Self {
            dim: self.dim,
            log_density: self.log_density.clone(),
            grad_u: None,
            laplacian_u: None,
            mode: DerivativeMode::FiniteDifference { step },
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mode(&self) -> DerivativeMode {
        self.mode
    }

    /// `log π̄(x)`; errors where the density vanishes or is not finite.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        let v = (self.log_density)(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(eval_error(x, format!("target log-density is {v}")))
        }
    }

    pub fn grad_u(&self, x: &[f64]) -> Result<Vec<f64>> {
        let g = match (&self.grad_u, self.mode) {
            (Some(g), DerivativeMode::Analytic) => g(x),
            (_, DerivativeMode::FiniteDifference { step }) => self.fd_grad(x, step)?,
            (None, DerivativeMode::Analytic) => unreachable!("analytic mode without gradient"),
        };
        if g.iter().all(|v| v.is_finite()) {
            Ok(g)
        } else {
            Err(eval_error(x, "non-finite gradient of U".into()))
        }
    }

    pub fn laplacian_u(&self, x: &[f64]) -> Result<f64> {
        let l = match (&self.laplacian_u, self.mode) {
            (Some(l), DerivativeMode::Analytic) => l(x),
            (_, DerivativeMode::FiniteDifference { step }) => self.fd_laplacian(x, step)?,
            (None, DerivativeMode::Analytic) => unreachable!("analytic mode without laplacian"),
        };
        if l.is_finite() {
            Ok(l)
        } else {
            Err(eval_error(x, "non-finite laplacian of U".into()))
        }
    }

    fn fd_grad(&self, x: &[f64], h: f64) -> Result<Vec<f64>> {
        let mut y = x.to_vec();
        let mut g = Vec::with_capacity(x.len());
        for i in 0..x.len() {
            y[i] = x[i] + h;
            let up = self.log_density(&y)?;
            y[i] = x[i] - h;
            let down = self.log_density(&y)?;
            y[i] = x[i];
            g.push(-(up - down) / (2.0 * h));
        }
        Ok(g)
    }

    fn fd_laplacian(&self, x: &[f64], h: f64) -> Result<f64> {
        let centre = self.log_density(x)?;
        let mut y = x.to_vec();
        let mut acc = 0.0;
        for i in 0..x.len() {
            y[i] = x[i] + h;
            let up = self.log_density(&y)?;
            y[i] = x[i] - h;
            let down = self.log_density(&y)?;
            y[i] = x[i];
            acc += (up - 2.0 * centre + down) / (h * h);
        }
        Ok(-acc)
    }
}

/// Drift potential `A` of `dY = ∇A(Y) dt + dB`, through `∇A` and `ΔA`.
#[derive(Clone)]
pub struct Drift {
    grad: VectorFieldFn,
    laplacian: ScalarFieldFn,
    zero: bool,
}

impl fmt::Debug for Drift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Drift").field("zero", &self.zero).finish()
    }
}

impl Drift {
    pub fn zero() -> Self {
        Self {
            grad: Arc::new(|x| vec![0.0; x.len()]),
            laplacian: Arc::new(|_| 0.0),
            zero: true,
        }
    }

    /// `A(x) = Σ θ_i x_i² / 2`, the Ornstein–Uhlenbeck drift `∇A = θ ⊙ x`.
    pub fn linear(theta: Vec<f64>) -> Self {
        let lap: f64 = theta.iter().sum();
        let th = theta.clone();
        Self {
            grad: Arc::new(move |x| x.iter().zip(&th).map(|(xi, t)| t * xi).collect()),
            laplacian: Arc::new(move |_| lap),
            zero: theta.iter().all(|t| *t == 0.0),
        }
    }

    pub fn custom(grad: VectorFieldFn, laplacian: ScalarFieldFn) -> Self {
        Self {
            grad,
            laplacian,
            zero: false,
        }
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        (self.grad)(x)
    }

    pub fn laplacian(&self, x: &[f64]) -> f64 {
        (self.laplacian)(x)
    }

    pub fn is_zero(&self) -> bool {
        self.zero
    }
}

/// Regeneration density `μ̄` (unnormalized, Lebesgue), its sampler and the constant `C`.
#[derive(Clone)]
pub struct RegenDistribution {
    log_density: LogDensityFn,
    sampler: SamplerFn,
    c: f64,
}

impl fmt::Debug for RegenDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RegenDistribution").field("c", &self.c).finish()
    }
}

impl RegenDistribution {
    pub fn new(log_density: LogDensityFn, sampler: SamplerFn, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(RestoreError::Config(format!("C must be positive, got {c}")));
        }
        Ok(Self {
            log_density,
            sampler,
            c,
        })
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    /// Same density and sampler with another compensation constant.
    pub fn with_c(&self, c: f64) -> Result<Self> {
        Self::new(self.log_density.clone(), self.sampler.clone(), c)
    }

    /// `log μ̄(x)`, possibly `−∞` outside the support.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        (self.log_density)(x)
    }

    pub fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        (self.sampler)(rng)
    }

    /// Independent Gaussian coordinates, normalized density.
    pub fn gaussian(mean: Vec<f64>, sd: Vec<f64>, c: f64) -> Result<Self> {
        let target = gaussian(mean.clone(), sd.clone())?;
        let ld = target.log_density.clone();
        let sampler: SamplerFn = Arc::new(move |rng: &mut dyn RngCore| {
            mean.iter()
                .zip(&sd)
                .map(|(m, s)| {
                    let z: f64 = StandardNormal.sample(rng);
                    m + s * z
                })
                .collect()
        });
        Self::new(ld, sampler, c)
    }

    /// One-dimensional Gaussian mixture, normalized density.
    pub fn gaussian_mixture(weights: Vec<f64>, means: Vec<f64>, sds: Vec<f64>, c: f64) -> Result<Self> {
        let mix = Mixture1d::new(weights, means, sds)?;
        let ld = {
            let mix = mix.clone();
            Arc::new(move |x: &[f64]| mix.log_density(x[0])) as LogDensityFn
        };
        let sampler: SamplerFn = Arc::new(move |rng: &mut dyn RngCore| vec![mix.sample(rng)]);
        Self::new(ld, sampler, c)
    }
}

/// Finite-state model: rate matrix `Q`, target `π`, regeneration law `μ` and `C`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteModel {
    n: usize,
    q: Vec<f64>,
    pi: Vec<f64>,
    mu: Vec<f64>,
    c: f64,
    /// `(πQ)(x) / π(x)`, cached.
    partial: Vec<f64>,
    /// Checked regeneration rate per state, cached.
    kappa: Vec<Result<f64>>,
}

impl DiscreteModel {
    /// `q` is row-major `n × n`. `pi` may be unnormalized (it is rescaled);
    /// `mu` must already be a probability vector.
    pub fn new(q: Vec<Vec<f64>>, pi: Vec<f64>, mu: Vec<f64>, c: f64) -> Result<Self> {
        let n = q.len();
        if n == 0 {
            return Err(RestoreError::Config("empty state space".into()));
        }
        let mut problems = Vec::new();
        for (i, row) in q.iter().enumerate() {
            if row.len() != n {
                problems.push(format!("Q row {i} has length {}", row.len()));
                continue;
            }
            let sum: f64 = row.iter().sum();
            if sum.abs() > 1e-12 {
                problems.push(format!("Q row {i} sums to {sum}"));
            }
            for (j, v) in row.iter().enumerate() {
                if i != j && *v < 0.0 {
                    problems.push(format!("Q[{i}][{j}] = {v} is negative"));
                }
            }
        }
        if pi.len() != n || mu.len() != n {
            problems.push("pi and mu must have one entry per state".into());
        }
        if pi.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
            problems.push("pi must be strictly positive".into());
        }
        if mu.iter().any(|m| *m < 0.0) {
            problems.push("mu must be nonnegative".into());
        }
        let mu_sum: f64 = mu.iter().sum();
        if (mu_sum - 1.0).abs() > 1e-12 {
            problems.push(format!("mu sums to {mu_sum}"));
        }
        if !(c > 0.0 && c.is_finite()) {
            problems.push(format!("C must be positive, got {c}"));
        }
        if !problems.is_empty() {
            return Err(RestoreError::Config(problems.join("; ")));
        }
        let total: f64 = pi.iter().sum();
        let pi: Vec<f64> = pi.iter().map(|p| p / total).collect();
        let partial: Vec<f64> = (0..n)
            .map(|x| (0..n).map(|y| pi[y] * q[y][x]).sum::<f64>() / pi[x])
            .collect();
        let kappa = (0..n).map(|x| check_rate(&[x as f64], partial[x] + c * mu[x] / pi[x])).collect();
        Ok(Self {
            n,
            q: q.into_iter().flatten().collect(),
            pi,
            mu,
            c,
            partial,
            kappa,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n
    }

    pub fn q(&self, i: usize, j: usize) -> f64 {
        self.q[i * self.n + j]
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn with_c(&self, c: f64) -> Result<Self> {
        let q = (0..self.n)
            .map(|i| (0..self.n).map(|j| self.q(i, j)).collect())
            .collect();
        Self::new(q, self.pi.clone(), self.mu.clone(), c)
    }

    /// `(πQ)(x) / π(x)`.
    pub fn partial_rate(&self, x: usize) -> f64 {
        self.partial[x]
    }

    /// Holding rate `−Q[x][x]` of the local chain.
    pub fn holding_rate(&self, x: usize) -> f64 {
        -self.q(x, x)
    }
}

fn eval_error(x: &[f64], what: String) -> RestoreError {
    RestoreError::Evaluation {
        x: x.to_vec(),
        what,
    }
}

/// Applies the negativity contract: below `−tol` is an error, `[−tol, 0)` clamps to zero.
pub fn check_rate(x: &[f64], kappa: f64) -> Result<f64> {
    if !kappa.is_finite() {
        return Err(eval_error(x, format!("regeneration rate is {kappa}")));
    }
    if kappa < -NEGATIVE_RATE_TOL {
        return Err(RestoreError::NegativeRate {
            x: x.to_vec(),
            kappa,
        });
    }
    Ok(kappa.max(0.0))
}

/// Partial regeneration rate `κ̃ = ½(−ΔU + |∇U|²) − ∇A·∇U` with `U = −log π̄ + 2A`.
pub fn partial_rate_diffusion(target: &TargetModel, drift: &Drift, x: &[f64]) -> Result<f64> {
    let mut grad = target.grad_u(x)?;
    let mut lap = target.laplacian_u(x)?;
    if drift.is_zero() {
        let sq: f64 = grad.iter().map(|g| g * g).sum();
        return Ok(0.5 * (sq - lap));
    }
    let grad_a = drift.grad(x);
    let lap_a = drift.laplacian(x);
    if !(lap_a.is_finite() && grad_a.iter().all(|v| v.is_finite())) {
        return Err(eval_error(x, "non-finite drift".into()));
    }
    for (g, a) in grad.iter_mut().zip(&grad_a) {
        *g += 2.0 * a;
    }
    lap += 2.0 * lap_a;
    let sq: f64 = grad.iter().map(|g| g * g).sum();
    let cross: f64 = grad.iter().zip(&grad_a).map(|(g, a)| g * a).sum();
    Ok(0.5 * (sq - lap) - cross)
}

/// `C μ̄(x) / π̄(x)` computed in log space; zero off the support of `μ`.
pub fn compensation_term(target: &TargetModel, mu: &RegenDistribution, x: &[f64]) -> Result<f64> {
    let lmu = mu.log_density(x);
    if lmu == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    let lpi = target.log_density(x)?;
    let v = mu.c() * (lmu - lpi).exp();
    if v.is_finite() {
        Ok(v)
    } else {
        Err(eval_error(x, format!("mu/pi ratio is {v}")))
    }
}

/// Regeneration rate `κ = κ̃ + C μ̄/π̄` of diffusion Restore.
pub fn regen_rate(target: &TargetModel, mu: &RegenDistribution, drift: &Drift, x: &[f64]) -> Result<f64> {
    let partial = partial_rate_diffusion(target, drift, x)?;
    let comp = compensation_term(target, mu, x)?;
    check_rate(x, partial + comp)
}

/// Regeneration rate `(πQ)(x)/π(x) + C μ(x)/π(x)` on a finite state space.
pub fn regen_rate_discrete(model: &DiscreteModel, x: usize) -> Result<f64> {
    model.kappa[x].clone()
}

pub type KernelDensityFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

/// How the inflow `∫ π(y) λ(y) p(y, x) m(dy)` of a jump kernel is evaluated.
#[derive(Clone)]
pub enum Inflow {
    /// Kernel with a density `p(y, x)` against a node/weight rule for `m`.
    Kernel {
        density: KernelDensityFn,
        nodes: Vec<Vec<f64>>,
        weights: Vec<f64>,
    },
    /// Metropolis–Hastings kernel `α(x,y) q(x,y) m(dy) + (1 − j(x)) δ_x`.
    /// The inflow becomes `∫ π λ α(y,x) q(y,x) m(dy) + λ(x)(1 − j(x)) π(x)`.
    MetropolisHastings {
        acceptance: KernelDensityFn,
        proposal: KernelDensityFn,
        nodes: Vec<Vec<f64>>,
        weights: Vec<f64>,
    },
    /// The caller asserts `(πλ)P = λπ`, e.g. a π-invariant kernel with constant λ.
    Balanced,
}

impl fmt::Debug for Inflow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Inflow::Kernel { nodes, .. } => write!(f, "Inflow::Kernel({} nodes)", nodes.len()),
            Inflow::MetropolisHastings { nodes, .. } => {
                write!(f, "Inflow::MetropolisHastings({} nodes)", nodes.len())
            }
            Inflow::Balanced => write!(f, "Inflow::Balanced"),
        }
    }
}

/// Regeneration rate of jump-process Restore:
/// `κ(x) = [∫ π λ p(·, x) dm − λ(x) π(x)] / π(x) + C μ(x)/π(x)`.
#[derive(Clone)]
pub struct JumpRate {
    pub log_pi: LogDensityFn,
    pub holding_rate: ScalarFieldFn,
    pub inflow: Inflow,
    pub log_mu: LogDensityFn,
    pub c: f64,
}

impl JumpRate {
    pub fn rate(&self, x: &[f64]) -> Result<f64> {
        regen_rate_jump(self, x)
    }
}

impl RateFn for JumpRate {
    fn rate(&self, x: &[f64]) -> Result<f64> {
        regen_rate_jump(self, x)
    }
}

pub fn regen_rate_jump(model: &JumpRate, x: &[f64]) -> Result<f64> {
    let lpi = (model.log_pi)(x);
    if !lpi.is_finite() {
        return Err(eval_error(x, format!("target log-density is {lpi}")));
    }
    let pi_x = lpi.exp();
    let lmu = (model.log_mu)(x);
    let comp = if lmu == f64::NEG_INFINITY {
        0.0
    } else {
        model.c * (lmu - lpi).exp()
    };
    let partial = match &model.inflow {
        Inflow::Balanced => 0.0,
        Inflow::Kernel {
            density,
            nodes,
            weights,
        } => {
            let inflow: f64 = nodes
                .iter()
                .zip(weights)
                .map(|(y, w)| w * (model.log_pi)(y).exp() * (model.holding_rate)(y) * density(y, x))
                .sum();
            (inflow - (model.holding_rate)(x) * pi_x) / pi_x
        }
        Inflow::MetropolisHastings {
            acceptance,
            proposal,
            nodes,
            weights,
        } => {
            let mut inflow = 0.0;
            let mut jump_prob = 0.0;
            for (y, w) in nodes.iter().zip(weights) {
                inflow += w
                    * (model.log_pi)(y).exp()
                    * (model.holding_rate)(y)
                    * acceptance(y, x)
                    * proposal(y, x);
                jump_prob += w * acceptance(x, y) * proposal(x, y);
            }
            let lambda_x = (model.holding_rate)(x);
            inflow += lambda_x * (1.0 - jump_prob) * pi_x;
            (inflow - lambda_x * pi_x) / pi_x
        }
    };
    if !partial.is_finite() {
        return Err(eval_error(x, "quadrature of the kernel inflow failed".into()));
    }
    check_rate(x, partial + comp)
}

// ---------------------------------------------------------------------------
// Builtin targets

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Product of independent normals, normalized.
pub fn gaussian(mean: Vec<f64>, sd: Vec<f64>) -> Result<TargetModel> {
    if mean.is_empty() || mean.len() != sd.len() {
        return Err(RestoreError::Config(
            "gaussian: mean and sd must be non-empty and of equal length".into(),
        ));
    }
    if sd.iter().any(|s| !(*s > 0.0)) {
        return Err(RestoreError::Config("gaussian: sd must be positive".into()));
    }
    let dim = mean.len();
    let norm: f64 = sd.iter().map(|s| s.ln() + LN_SQRT_2PI).sum();
    let (m1, s1) = (mean.clone(), sd.clone());
    let ld: LogDensityFn = Arc::new(move |x: &[f64]| {
        let q: f64 = x
            .iter()
            .zip(&m1)
            .zip(&s1)
            .map(|((xi, m), s)| ((xi - m) / s).powi(2))
            .sum();
        -0.5 * q - norm
    });
    let (m2, s2) = (mean.clone(), sd.clone());
    let grad: VectorFieldFn = Arc::new(move |x: &[f64]| {
        x.iter()
            .zip(&m2)
            .zip(&s2)
            .map(|((xi, m), s)| (xi - m) / (s * s))
            .collect()
    });
    let lap_value: f64 = sd.iter().map(|s| 1.0 / (s * s)).sum();
    let lap: ScalarFieldFn = Arc::new(move |_| lap_value);
    Ok(TargetModel::with_analytic(dim, ld, grad, lap))
}

/// One-dimensional Gaussian mixture with normalized weights.
#[derive(Debug, Clone)]
pub struct Mixture1d {
    log_weights: Vec<f64>,
    weights: Vec<f64>,
    means: Vec<f64>,
    sds: Vec<f64>,
}

impl Mixture1d {
    pub fn new(weights: Vec<f64>, means: Vec<f64>, sds: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() || means.len() != sds.len() {
            return Err(RestoreError::Config(
                "gaussian-mixture: weights, means and sds must be non-empty and of equal length".into(),
            ));
        }
        if weights.iter().any(|w| !(*w > 0.0)) || sds.iter().any(|s| !(*s > 0.0)) {
            return Err(RestoreError::Config(
                "gaussian-mixture: weights and sds must be positive".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        Ok(Self {
            log_weights: weights.iter().map(|w| w.ln()).collect(),
            weights,
            means,
            sds,
        })
    }

    fn component_logs(&self, x: f64) -> impl Iterator<Item = f64> + '_ {
        self.log_weights
            .iter()
            .zip(&self.means)
            .zip(&self.sds)
            .map(move |((lw, m), s)| lw - 0.5 * ((x - m) / s).powi(2) - s.ln() - LN_SQRT_2PI)
    }

    pub fn log_density(&self, x: f64) -> f64 {
        let max = self.component_logs(x).fold(f64::NEG_INFINITY, f64::max);
        max + self.component_logs(x).map(|l| (l - max).exp()).sum::<f64>().ln()
    }

    fn responsibilities(&self, x: f64) -> Vec<f64> {
        let logs: Vec<f64> = self.component_logs(x).collect();
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut r: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let s: f64 = r.iter().sum();
        r.iter_mut().for_each(|v| *v /= s);
        r
    }

    /// `(U'(x), U''(x))` for `U = −log π`.
    pub fn potential_derivatives(&self, x: f64) -> (f64, f64) {
        let r = self.responsibilities(x);
        let mut d1 = 0.0; // π'/π
        let mut d2 = 0.0; // π''/π
        for ((rk, m), s) in r.iter().zip(&self.means).zip(&self.sds) {
            let z = (x - m) / (s * s);
            d1 -= rk * z;
            d2 += rk * (z * z - 1.0 / (s * s));
        }
        (-d1, d1 * d1 - d2)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.sds)
            .map(|((w, m), s)| w * normal_cdf((x - m) / s))
            .sum()
    }

    pub fn sample(&self, rng: &mut dyn RngCore) -> f64 {
        let u: f64 = rand::Rng::random(rng);
        let mut acc = 0.0;
        let mut k = self.weights.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        let z: f64 = StandardNormal.sample(rng);
        self.means[k] + self.sds[k] * z
    }
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2)
}

pub fn gaussian_mixture(weights: Vec<f64>, means: Vec<f64>, sds: Vec<f64>) -> Result<TargetModel> {
    let mix = Mixture1d::new(weights, means, sds)?;
    let (m1, m2, m3) = (mix.clone(), mix.clone(), mix);
    Ok(TargetModel::with_analytic(
        1,
        Arc::new(move |x: &[f64]| m1.log_density(x[0])),
        Arc::new(move |x: &[f64]| vec![m2.potential_derivatives(x[0]).0]),
        Arc::new(move |x: &[f64]| m3.potential_derivatives(x[0]).1),
    ))
}

/// Posterior of a Cauchy location under a flat prior: `π̄(x) ∝ Π 1/(1 + (y_i − x)²)`.
pub fn cauchy_posterior(observations: Vec<f64>) -> Result<TargetModel> {
    if observations.is_empty() {
        return Err(RestoreError::Config("cauchy-posterior: no observations".into()));
    }
    let (o1, o2, o3) = (observations.clone(), observations.clone(), observations);
    Ok(TargetModel::with_analytic(
        1,
        Arc::new(move |x: &[f64]| -o1.iter().map(|y| (x[0] - y).powi(2).ln_1p()).sum::<f64>()),
        Arc::new(move |x: &[f64]| {
            vec![o2
                .iter()
                .map(|y| {
                    let d = x[0] - y;
                    2.0 * d / (1.0 + d * d)
                })
                .sum()]
        }),
        Arc::new(move |x: &[f64]| {
            o3.iter()
                .map(|y| {
                    let d2 = (x[0] - y).powi(2);
                    2.0 * (1.0 - d2) / (1.0 + d2).powi(2)
                })
                .sum()
        }),
    ))
}

/// Natural cubic spline through tabulated values, extended linearly past the ends.
#[derive(Debug, Clone)]
pub struct CubicSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    m: Vec<f64>,
}

impl CubicSpline {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        let n = xs.len();
        if n < 3 || ys.len() != n {
            return Err(RestoreError::Config(
                "custom-grid: need at least 3 points and matching value count".into(),
            ));
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(RestoreError::Config("custom-grid: grid must be strictly increasing".into()));
        }
        if ys.iter().any(|y| !y.is_finite()) {
            return Err(RestoreError::Config("custom-grid: log-density values must be finite".into()));
        }
        // Second derivatives via the tridiagonal system with natural end conditions.
        let mut m = vec![0.0; n];
        let mut c_prime = vec![0.0; n];
        let mut d_prime = vec![0.0; n];
        for i in 1..n - 1 {
            let h0 = xs[i] - xs[i - 1];
            let h1 = xs[i + 1] - xs[i];
            let a = h0 / 6.0;
            let b = (h0 + h1) / 3.0;
            let c = h1 / 6.0;
            let d = (ys[i + 1] - ys[i]) / h1 - (ys[i] - ys[i - 1]) / h0;
            let denom = b - a * c_prime[i - 1];
            c_prime[i] = c / denom;
            d_prime[i] = (d - a * d_prime[i - 1]) / denom;
        }
        for i in (1..n - 1).rev() {
            m[i] = d_prime[i] - c_prime[i] * m[i + 1];
        }
        Ok(Self { xs, ys, m })
    }

    /// Value, first and second derivative at `x`.
    pub fn eval(&self, x: f64) -> (f64, f64, f64) {
        let n = self.xs.len();
        if x <= self.xs[0] {
            let (_, d, _) = self.eval_interval(0, self.xs[0]);
            return (self.ys[0] + d * (x - self.xs[0]), d, 0.0);
        }
        if x >= self.xs[n - 1] {
            let (_, d, _) = self.eval_interval(n - 2, self.xs[n - 1]);
            return (self.ys[n - 1] + d * (x - self.xs[n - 1]), d, 0.0);
        }
        let i = match self.xs.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(i) => i.min(n - 2),
            Err(i) => i - 1,
        };
        self.eval_interval(i, x)
    }

    fn eval_interval(&self, i: usize, x: f64) -> (f64, f64, f64) {
        let h = self.xs[i + 1] - self.xs[i];
        let a = (self.xs[i + 1] - x) / h;
        let b = (x - self.xs[i]) / h;
        let (m0, m1) = (self.m[i], self.m[i + 1]);
        let v = a * self.ys[i] + b * self.ys[i + 1] + ((a.powi(3) - a) * m0 + (b.powi(3) - b) * m1) * h * h / 6.0;
        let d = (self.ys[i + 1] - self.ys[i]) / h - (3.0 * a * a - 1.0) * h * m0 / 6.0
            + (3.0 * b * b - 1.0) * h * m1 / 6.0;
        let dd = a * m0 + b * m1;
        (v, d, dd)
    }
}

/// Tabulated one-dimensional log-density interpolated by a natural cubic spline.
pub fn custom_grid(xs: Vec<f64>, log_values: Vec<f64>) -> Result<TargetModel> {
    let spline = CubicSpline::new(xs, log_values)?;
    let (s1, s2, s3) = (spline.clone(), spline.clone(), spline);
    Ok(TargetModel::with_analytic(
        1,
        Arc::new(move |x: &[f64]| s1.eval(x[0]).0),
        Arc::new(move |x: &[f64]| vec![-s2.eval(x[0]).1]),
        Arc::new(move |x: &[f64]| -s3.eval(x[0]).2),
    ))
}
