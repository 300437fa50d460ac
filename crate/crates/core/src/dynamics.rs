//! Local dynamics run between regenerations.
//!
//! All diffusions have unit diffusion coefficient, `dY = ∇A(Y) dt + dB`.

use std::fmt;
use std::sync::Arc;

use rand::RngCore;
use rand_distr::{Distribution, Exp, StandardNormal};

use crate::error::{RestoreError, Result};
use crate::model::{Drift, ScalarFieldFn};

pub const DEFAULT_EULER_STEP: f64 = 1e-3;

pub type KernelSampler = Arc<dyn Fn(&[f64], &mut dyn RngCore) -> Vec<f64> + Send + Sync>;

#[derive(Clone)]
pub enum DynamicsKind {
    BrownianMotion,
    /// `dY = θ ⊙ Y dt + dB`, one rate per coordinate; `θ > 0` is the unstable case.
    Ou { theta: Vec<f64> },
    EulerDiffusion { drift: Drift, step: f64 },
    /// Holding times `Exp(λ(x))`, then a jump drawn from the kernel.
    JumpProcess {
        kernel: KernelSampler,
        holding_rate: ScalarFieldFn,
    },
    Constant,
}

impl fmt::Debug for DynamicsKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DynamicsKind::BrownianMotion => write!(f, "BrownianMotion"),
            DynamicsKind::Ou { theta } => write!(f, "Ou({theta:?})"),
            DynamicsKind::EulerDiffusion { step, .. } => write!(f, "EulerDiffusion(step={step})"),
            DynamicsKind::JumpProcess { .. } => write!(f, "JumpProcess"),
            DynamicsKind::Constant => write!(f, "Constant"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Dynamics {
    kind: DynamicsKind,
    dim: usize,
}

impl Dynamics {
    pub fn brownian(dim: usize) -> Self {
        Self::new(DynamicsKind::BrownianMotion, dim)
    }

    pub fn ou(theta: Vec<f64>) -> Self {
        let dim = theta.len();
        Self::new(DynamicsKind::Ou { theta }, dim)
    }

    pub fn euler(drift: Drift, step: f64, dim: usize) -> Self {
        assert!(step > 0.0, "Euler step must be positive");
        Self::new(DynamicsKind::EulerDiffusion { drift, step }, dim)
    }

    pub fn jump(kernel: KernelSampler, holding_rate: ScalarFieldFn, dim: usize) -> Self {
        Self::new(DynamicsKind::JumpProcess { kernel, holding_rate }, dim)
    }

    pub fn constant(dim: usize) -> Self {
        Self::new(DynamicsKind::Constant, dim)
    }

    fn new(kind: DynamicsKind, dim: usize) -> Self {
        assert!(dim > 0, "dimension must be positive");
        Self { kind, dim }
    }

    pub fn kind(&self) -> &DynamicsKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// No discretisation error in `advance`.
    pub fn is_exact(&self) -> bool {
        !matches!(self.kind, DynamicsKind::EulerDiffusion { .. })
    }

    /// Paths are step functions, so path integrals are exact left-point sums.
    pub fn is_piecewise_constant(&self) -> bool {
        matches!(self.kind, DynamicsKind::JumpProcess { .. } | DynamicsKind::Constant)
    }

    /// The drift potential `A` when the dynamics are a diffusion.
    pub fn drift(&self) -> Option<Drift> {
        match &self.kind {
            DynamicsKind::BrownianMotion => Some(Drift::zero()),
            DynamicsKind::Ou { theta } => Some(Drift::linear(theta.clone())),
            DynamicsKind::EulerDiffusion { drift, .. } => Some(drift.clone()),
            _ => None,
        }
    }

    /// Draw from `L(Y_dt | Y_0 = x)`.
    pub fn advance(&self, x: &[f64], dt: f64, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        self.advance_inner(x, dt, rng, None)
    }

    /// As [`advance`](Self::advance), also appending `(offset, state)` for every
    /// jump of a jump process, offsets relative to the start.
    pub fn advance_recording(
        &self,
        x: &[f64],
        dt: f64,
        rng: &mut dyn RngCore,
        jumps: &mut Vec<(f64, Vec<f64>)>,
    ) -> Result<Vec<f64>> {
        self.advance_inner(x, dt, rng, Some(jumps))
    }

    fn advance_inner(
        &self,
        x: &[f64],
        dt: f64,
        rng: &mut dyn RngCore,
        jumps: Option<&mut Vec<(f64, Vec<f64>)>>,
    ) -> Result<Vec<f64>> {
        debug_assert_eq!(x.len(), self.dim);
        if dt == 0.0 {
            return Ok(x.to_vec());
        }
        debug_assert!(dt > 0.0, "advance needs dt > 0, got {dt}");
        let y = match &self.kind {
            DynamicsKind::Constant => x.to_vec(),
            DynamicsKind::BrownianMotion => {
                let s = dt.sqrt();
                x.iter().map(|xi| xi + s * normal(rng)).collect()
            }
            DynamicsKind::Ou { theta } => x
                .iter()
                .zip(theta)
                .map(|(xi, th)| {
                    let (mean, var) = ou_moments(*xi, *th, dt);
                    mean + var.sqrt() * normal(rng)
                })
                .collect(),
            DynamicsKind::EulerDiffusion { drift, step } => {
                let mut y = x.to_vec();
                let n = (dt / step).ceil().max(1.0) as usize;
                let h = dt / n as f64;
                let sh = h.sqrt();
                for _ in 0..n {
                    let g = drift.grad(&y);
                    for (yi, gi) in y.iter_mut().zip(&g) {
                        *yi += gi * h + sh * normal(rng);
                    }
                }
                y
            }
            DynamicsKind::JumpProcess { kernel, holding_rate } => {
                let mut y = x.to_vec();
                let mut t = 0.0;
                let mut jumps = jumps;
                loop {
                    let lambda = holding_rate(&y);
                    if !(lambda > 0.0) {
                        break;
                    }
                    let hold = Exp::new(lambda).unwrap().sample(rng);
                    if t + hold >= dt {
                        break;
                    }
                    t += hold;
                    y = kernel(&y, rng);
                    if let Some(j) = jumps.as_deref_mut() {
                        j.push((t, y.clone()));
                    }
                }
                y
            }
        };
        if y.iter().all(|v| v.is_finite()) {
            Ok(y)
        } else {
            Err(RestoreError::Simulation)
        }
    }
}

fn normal(rng: &mut dyn RngCore) -> f64 {
    StandardNormal.sample(rng)
}

/// Mean and variance of the OU transition over `dt`; `θ → 0` recovers Brownian motion.
pub fn ou_moments(x: f64, theta: f64, dt: f64) -> (f64, f64) {
    let a = theta * dt;
    let var = if a.abs() < 1e-12 {
        dt * (1.0 + a)
    } else {
        (2.0 * a).exp_m1() / (2.0 * theta)
    };
    (x * a.exp(), var)
}

/// Path samples at increasing times, with the reason each point was recorded.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Skeleton {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub marks: Vec<Mark>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mark {
    Start,
    Candidate,
    Jump,
    Refine,
}

impl Skeleton {
    pub fn start(x: &[f64]) -> Self {
        Self {
            times: vec![0.0],
            states: vec![x.to_vec()],
            marks: vec![Mark::Start],
        }
    }

    pub fn push(&mut self, t: f64, x: Vec<f64>, mark: Mark) {
        debug_assert!(t >= *self.times.last().unwrap_or(&0.0));
        self.times.push(t);
        self.states.push(x);
        self.marks.push(mark);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_time(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }
}
