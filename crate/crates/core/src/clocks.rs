//! First arrivals of state-dependent Poisson clocks along a path of the local dynamics.

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Exp, Exp1};

use crate::dynamics::{Dynamics, Mark, Skeleton};
use crate::error::{RestoreError, Result};
use crate::model::RateFn;

/// Relative slack allowed above the thinning bound before it counts as a violation.
pub const BOUND_SLACK: f64 = 1e-12;

pub const DEFAULT_REFINE: f64 = 0.01;

/// Index of the winning clock and the common first-arrival time.
pub fn competing_exponentials(rates: &[f64], rng: &mut dyn RngCore) -> Result<(usize, f64)> {
    let total: f64 = rates.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(RestoreError::DegenerateClock);
    }
    let time = Exp::new(total).unwrap().sample(rng);
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, r) in rates.iter().enumerate() {
        if *r > 0.0 {
            acc += r;
            last_positive = i;
            if u < acc {
                return Ok((i, time));
            }
        }
    }
    Ok((last_positive, time))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThinningOptions {
    /// Sub-step the dynamics so the skeleton has no gap wider than this.
    pub max_step: Option<f64>,
    /// Keep refinement points and jumps of the local process in the skeleton.
    pub record_path: bool,
}

impl Default for ThinningOptions {
    fn default() -> Self {
        Self {
            max_step: None,
            record_path: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalResult {
    pub tau: f64,
    pub state: Vec<f64>,
    pub skeleton: Skeleton,
    pub n_candidates: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Arrival {
    Arrived(ArrivalResult),
    HorizonReached { state: Vec<f64>, skeleton: Skeleton, n_candidates: usize },
}

impl Arrival {
    pub fn skeleton(&self) -> &Skeleton {
        match self {
            Arrival::Arrived(a) => &a.skeleton,
            Arrival::HorizonReached { skeleton, .. } => skeleton,
        }
    }
}

/// Moves the path forward by `dt`, appending intermediate points to `skel`
/// when `record` is set. Returns the end state.
fn advance_path(
    dynamics: &Dynamics,
    x: &[f64],
    t0: f64,
    dt: f64,
    max_step: Option<f64>,
    record: bool,
    skel: &mut Skeleton,
    rng: &mut dyn RngCore,
) -> Result<Vec<f64>> {
    if dynamics.is_piecewise_constant() {
        if record {
            let mut jumps = Vec::new();
            let y = dynamics.advance_recording(x, dt, rng, &mut jumps)?;
            for (s, z) in jumps {
                skel.push(t0 + s, z, Mark::Jump);
            }
            return Ok(y);
        }
        return dynamics.advance(x, dt, rng);
    }
    match max_step {
        Some(h) if dt > h => {
            let n = (dt / h).ceil() as usize;
            let step = dt / n as f64;
            let mut y = x.to_vec();
            for i in 1..n {
                y = dynamics.advance(&y, step, rng)?;
                if record {
                    skel.push(t0 + i as f64 * step, y.clone(), Mark::Refine);
                }
            }
            dynamics.advance(&y, dt - (n - 1) as f64 * step, rng)
        }
        _ => dynamics.advance(x, dt, rng),
    }
}

fn checked_rate(rate: &dyn RateFn, x: &[f64], bound: f64) -> Result<f64> {
    let r = rate.rate(x)?;
    if r > bound * (1.0 + BOUND_SLACK) {
        return Err(RestoreError::BoundViolation {
            x: x.to_vec(),
            rate: r,
            bound,
        });
    }
    Ok(r)
}

/// First arrival of a Poisson process with intensity `rate(Y_t) ≤ bound` by thinning.
///
/// Candidates arrive at rate `bound`; each is accepted with probability
/// `rate/bound`. Returns `HorizonReached` when no candidate is accepted by
/// `horizon`, with the path advanced exactly to the horizon.
pub fn thinned_first_arrival(
    dynamics: &Dynamics,
    x0: &[f64],
    rate: &dyn RateFn,
    bound: f64,
    horizon: f64,
    options: ThinningOptions,
    rng: &mut dyn RngCore,
) -> Result<Arrival> {
    if !(bound > 0.0 && bound.is_finite()) {
        return Err(RestoreError::Config(format!("thinning bound must be positive, got {bound}")));
    }
    let clock = Exp::new(bound).unwrap();
    let mut skel = Skeleton::start(x0);
    let mut x = x0.to_vec();
    let mut t = 0.0;
    let mut n_candidates = 0;
    loop {
        let dt = clock.sample(rng);
        if t + dt > horizon {
            let rest = horizon - t;
            x = advance_path(dynamics, &x, t, rest, options.max_step, options.record_path, &mut skel, rng)?;
            if rest > 0.0 {
                skel.push(horizon, x.clone(), Mark::Refine);
            }
            return Ok(Arrival::HorizonReached {
                state: x,
                skeleton: skel,
                n_candidates,
            });
        }
        x = advance_path(dynamics, &x, t, dt, options.max_step, options.record_path, &mut skel, rng)?;
        t += dt;
        n_candidates += 1;
        skel.push(t, x.clone(), Mark::Candidate);
        let r = checked_rate(rate, &x, bound)?;
        if rng.random::<f64>() * bound < r {
            return Ok(Arrival::Arrived(ArrivalResult {
                tau: t,
                state: x,
                skeleton: skel,
                n_candidates,
            }));
        }
    }
}

/// A clock time that may have been censored at the simulation cap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CappedTime {
    pub time: f64,
    pub capped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitOptions {
    pub t_cap: f64,
    pub refine: f64,
    /// Stop as soon as the truncated clock rings; the excess clock is then
    /// reported as censored at that time unless it already rang.
    pub stop_after_truncated: bool,
    pub record_path: bool,
}

impl SplitOptions {
    pub fn with_cap(t_cap: f64) -> Self {
        Self {
            t_cap,
            refine: DEFAULT_REFINE,
            stop_after_truncated: false,
            record_path: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitLifetime {
    /// First arrival of rate `κ ∧ M`.
    pub tau_m: CappedTime,
    /// First arrival of rate `(κ − M)⁺`.
    pub tau_excess: CappedTime,
    /// `τ_M ∧ τ_M^e`, the lifetime under the untruncated rate.
    pub tau_min: f64,
    pub state_at_tau_m: Option<Vec<f64>>,
    pub skeleton: Skeleton,
}

/// Jointly simulates `τ_M` (thinning with bound `M`) and `τ_M^e`
/// (integrated excess rate against an independent `Exp(1)` level) on one path.
///
/// The excess integral is exact between jumps for piecewise-constant
/// dynamics and trapezoidal on a skeleton refined to `options.refine` for
/// diffusions; the crossing inside a step is located by inverting the
/// linear interpolant of the excess rate.
pub fn split_lifetime(
    dynamics: &Dynamics,
    x0: &[f64],
    kappa: &dyn RateFn,
    m: f64,
    options: SplitOptions,
    rng: &mut dyn RngCore,
) -> Result<SplitLifetime> {
    if !(m > 0.0 && m.is_finite()) {
        return Err(RestoreError::Config(format!("truncation level must be positive, got {m}")));
    }
    let clock = Exp::new(m).unwrap();
    let level: f64 = Exp1.sample(rng);
    let mut integral = 0.0;
    let mut skel = Skeleton::start(x0);
    let mut x = x0.to_vec();
    let mut t = 0.0;
    let mut excess_prev = (kappa.rate(&x)? - m).max(0.0);
    let mut tau_m: Option<f64> = None;
    let mut tau_e: Option<f64> = None;
    let mut state_at_tau_m = None;
    let mut next_candidate = clock.sample(rng);
    let piecewise = dynamics.is_piecewise_constant();

    while t < options.t_cap && (tau_m.is_none() || tau_e.is_none()) {
        let seg_end = if tau_m.is_none() { next_candidate.min(options.t_cap) } else { options.t_cap };
        // advance to seg_end, integrating the excess rate on the way
        while t < seg_end {
            let (t_next, y, mark) = if piecewise {
                let mut jumps = Vec::new();
                let y = dynamics.advance_recording(&x, seg_end - t, rng, &mut jumps)?;
                if let Some((s, z)) = jumps.into_iter().next() {
                    // only the first jump: the rest of the segment is redone from it
                    let _ = y;
                    (t + s, z, Mark::Jump)
                } else {
                    (seg_end, y, Mark::Refine)
                }
            } else {
                let h = (seg_end - t).min(options.refine);
                let t_next = if seg_end - t - h < 1e-15 { seg_end } else { t + h };
                (t_next, dynamics.advance(&x, t_next - t, rng)?, Mark::Refine)
            };
            let h = t_next - t;
            let excess_next = (kappa.rate(&y)? - m).max(0.0);
            if tau_e.is_none() {
                let inc = if piecewise { excess_prev * h } else { 0.5 * (excess_prev + excess_next) * h };
                if integral + inc >= level {
                    let need = level - integral;
                    let s = if piecewise {
                        need / excess_prev
                    } else {
                        crossing(excess_prev, excess_next, h, need)
                    };
                    tau_e = Some(t + s.clamp(0.0, h));
                }
                integral += inc;
            }
            t = t_next;
            x = y;
            excess_prev = excess_next;
            if options.record_path && t < seg_end {
                skel.push(t, x.clone(), mark);
            }
            if tau_m.is_some() && tau_e.is_some() {
                break;
            }
        }
        if tau_m.is_none() && t >= next_candidate {
            skel.push(t, x.clone(), Mark::Candidate);
            let r = kappa.rate(&x)?.min(m);
            if rng.random::<f64>() * m < r {
                tau_m = Some(t);
                state_at_tau_m = Some(x.clone());
                if options.stop_after_truncated {
                    break;
                }
            } else {
                next_candidate = t + clock.sample(rng);
            }
        } else if t >= options.t_cap {
            skel.push(t, x.clone(), Mark::Refine);
        }
    }

    let end = t;
    let tau_m = match tau_m {
        Some(v) => CappedTime { time: v, capped: false },
        None => CappedTime { time: end, capped: true },
    };
    let tau_excess = match tau_e {
        Some(v) => CappedTime { time: v, capped: false },
        None => CappedTime { time: end, capped: true },
    };
    let tau_min = match (tau_m.capped, tau_excess.capped) {
        (false, false) => tau_m.time.min(tau_excess.time),
        (false, true) => tau_m.time,
        (true, false) => tau_excess.time,
        (true, true) => end,
    };
    Ok(SplitLifetime {
        tau_m,
        tau_excess,
        tau_min,
        state_at_tau_m,
        skeleton: skel,
    })
}

/// Smallest `s ∈ [0, h]` with `∫₀ˢ (a + (b − a)u/h) du = need`.
fn crossing(a: f64, b: f64, h: f64, need: f64) -> f64 {
    let slope = (b - a) / h;
    if slope.abs() < 1e-14 * (a.abs() + b.abs()).max(1e-300) {
        return if a > 0.0 { need / a } else { h };
    }
    // slope/2 s² + a s − need = 0, stable root
    let disc = (a * a + 2.0 * slope * need).max(0.0);
    2.0 * need / (a + disc.sqrt())
}
