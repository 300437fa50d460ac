//! Running the Restore process: jump-process Restore, diffusion Restore with a
//! truncated rate, exact draws by coupling from the past, and the rejection
//! sampler special case.
//!
//! Trajectories are assembled tour by tour. In the parallel runners tour `i`
//! consumes its own random stream `i` (including the regeneration draw that
//! starts it), so a run is reproducible for a fixed seed whatever the worker
//! count.

use std::io::{self, Write};
use std::ops::Range;
use std::sync::Arc;

use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use rayon::prelude::*;

use crate::clocks::{competing_exponentials, thinned_first_arrival, Arrival, ThinningOptions, BOUND_SLACK};
use crate::dynamics::{Dynamics, DynamicsKind, Mark};
use crate::error::{RestoreError, Result};
use crate::model::{regen_rate, DiscreteModel, LogDensityFn, RateFn, RegenDistribution, TargetModel};
use crate::streams::stream;

pub const DEFAULT_EVENT_CAP: usize = 100_000_000;
/// Default skeleton spacing for diffusion Restore, used for path integrals.
pub const DEFAULT_MAX_STEP: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    Initial,
    LocalMove,
    Regeneration,
    Final,
}

impl EventKind {
    pub fn code(self) -> char {
        match self {
            EventKind::Initial => 'I',
            EventKind::LocalMove => 'L',
            EventKind::Regeneration => 'R',
            EventKind::Final => 'F',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathKind {
    /// The state holds between events.
    PiecewiseConstant,
    /// Events are a skeleton of a continuous path.
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event<'a> {
    pub time: f64,
    pub kind: EventKind,
    pub state: &'a [f64],
}

/// Event log of one Restore run, stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    dim: usize,
    times: Vec<f64>,
    kinds: Vec<EventKind>,
    states: Vec<f64>,
    path: PathKind,
    exact: bool,
}

impl Trajectory {
    pub fn new(dim: usize, path: PathKind, exact: bool) -> Self {
        Self {
            dim,
            times: Vec::new(),
            kinds: Vec::new(),
            states: Vec::new(),
            path,
            exact,
        }
    }

    pub fn push(&mut self, time: f64, kind: EventKind, state: &[f64]) {
        debug_assert_eq!(state.len(), self.dim);
        debug_assert!(self.times.last().is_none_or(|t| *t <= time));
        self.times.push(time);
        self.kinds.push(kind);
        self.states.extend_from_slice(state);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn path_kind(&self) -> PathKind {
        self.path
    }

    /// No discretisation error was introduced by the local dynamics.
    pub fn is_exact(&self) -> bool {
        self.exact
    }

    pub fn time(&self, i: usize) -> f64 {
        self.times[i]
    }

    pub fn kind(&self, i: usize) -> EventKind {
        self.kinds[i]
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn event(&self, i: usize) -> Event<'_> {
        Event {
            time: self.times[i],
            kind: self.kinds[i],
            state: self.state(i),
        }
    }

    pub fn events(&self) -> impl Iterator<Item = Event<'_>> + '_ {
        (0..self.len()).map(|i| self.event(i))
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn regen_count(&self) -> usize {
        self.kinds.iter().filter(|k| **k == EventKind::Regeneration).count()
    }

    pub fn total_time(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    /// Event index ranges of the tours. Each range starts at the initial or a
    /// regeneration event and ends at the next regeneration (exclusive); the
    /// boolean says whether the tour was completed by a regeneration.
    pub fn tours(&self) -> Vec<(Range<usize>, bool)> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..self.len() {
            if self.kinds[i] == EventKind::Regeneration {
                out.push((start..i, true));
                start = i;
            }
        }
        if !self.is_empty() {
            out.push((start..self.len(), false));
        }
        out
    }

    /// Lifetimes of the completed tours, in order.
    pub fn tour_lengths(&self) -> Vec<f64> {
        self.tours()
            .into_iter()
            .filter(|(_, done)| *done)
            .map(|(r, _)| self.times[r.end] - self.times[r.start])
            .collect()
    }

    /// Events as CSV: `t,kind,x0,...,x{d-1}`.
    pub fn write_csv(&self, mut w: impl Write) -> io::Result<()> {
        write!(w, "t,kind")?;
        for j in 0..self.dim {
            write!(w, ",x{j}")?;
        }
        writeln!(w)?;
        for e in self.events() {
            write!(w, "{},{}", e.time, e.kind.code())?;
            for v in e.state {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// When a run stops. Unset limits are unbounded; at least one must be set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunLimit {
    pub max_time: f64,
    pub max_tours: usize,
    /// Jump-chain steps (local moves plus regenerations).
    pub max_steps: usize,
    pub event_cap: usize,
}

impl RunLimit {
    pub fn time(t: f64) -> Self {
        Self {
            max_time: t,
            ..Self::unbounded()
        }
    }

    pub fn tours(n: usize) -> Self {
        Self {
            max_tours: n,
            ..Self::unbounded()
        }
    }

    pub fn steps(n: usize) -> Self {
        Self {
            max_steps: n,
            ..Self::unbounded()
        }
    }

    pub fn unbounded() -> Self {
        Self {
            max_time: f64::INFINITY,
            max_tours: usize::MAX,
            max_steps: usize::MAX,
            event_cap: DEFAULT_EVENT_CAP,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.max_time.is_infinite() && self.max_tours == usize::MAX && self.max_steps == usize::MAX {
            return Err(RestoreError::Config("a time, tour or step limit is required".into()));
        }
        if !(self.max_time > 0.0) {
            return Err(RestoreError::Config(format!("T_max must be positive, got {}", self.max_time)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TourBudget {
    pub horizon: f64,
    pub max_events: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TourEnd {
    Regenerated,
    Horizon,
    Budget,
}

/// One tour in tour-local time; `times[0] = 0` carries the start state.
#[derive(Debug, Clone, PartialEq)]
pub struct Tour {
    pub times: Vec<f64>,
    pub states: Vec<f64>,
    /// Lifetime when regenerated, otherwise the time simulated.
    pub length: f64,
    pub end: TourEnd,
    /// State at `length` for unfinished tours.
    pub end_state: Vec<f64>,
    pub steps: usize,
}

/// Simulates single tours of a Restore process.
pub trait TourSimulator: Sync {
    type State: Clone + Send + Sync;
    fn dim(&self) -> usize;
    fn path_kind(&self) -> PathKind;
    fn exact(&self) -> bool;
    /// Starts at `start`, or at a fresh regeneration draw when `None`.
    fn simulate(&self, start: Option<&Self::State>, budget: TourBudget, rng: &mut dyn RngCore) -> Result<Tour>;
}

struct Assembly {
    traj: Trajectory,
    elapsed: f64,
    steps: usize,
    regens: usize,
}

impl Assembly {
    fn new<S: TourSimulator>(sim: &S) -> Self {
        Self {
            traj: Trajectory::new(sim.dim(), sim.path_kind(), sim.exact()),
            elapsed: 0.0,
            steps: 0,
            regens: 0,
        }
    }

    fn budget(&self, limit: &RunLimit) -> TourBudget {
        TourBudget {
            horizon: limit.max_time - self.elapsed,
            max_events: limit
                .max_steps
                .saturating_sub(self.steps)
                .min(limit.event_cap.saturating_sub(self.traj.len())),
        }
    }

    fn fits(&self, tour: &Tour, limit: &RunLimit) -> bool {
        tour.end == TourEnd::Regenerated
            && self.elapsed + tour.length <= limit.max_time
            && self.steps + tour.steps <= limit.max_steps
            && self.traj.len() + tour.times.len() <= limit.event_cap
    }

    fn append(&mut self, tour: &Tour, first: bool) {
        let dim = self.traj.dim;
        for k in 0..tour.times.len() {
            let kind = match (k, first) {
                (0, true) => EventKind::Initial,
                (0, false) => EventKind::Regeneration,
                _ => EventKind::LocalMove,
            };
            self.traj
                .push(self.elapsed + tour.times[k], kind, &tour.states[k * dim..(k + 1) * dim]);
        }
    }

    /// Adds a completed tour; true once the tour limit is met.
    fn push_complete(&mut self, tour: &Tour, first: bool, limit: &RunLimit) -> bool {
        self.append(tour, first);
        self.elapsed += tour.length;
        self.steps += tour.steps;
        self.regens += 1;
        self.regens >= limit.max_tours
    }

    /// Appends the unfinished last tour and the final event.
    fn finish(mut self, tour: &Tour, first: bool, limit: &RunLimit) -> Result<Trajectory> {
        if tour.end == TourEnd::Budget && self.steps + tour.steps < limit.max_steps {
            return Err(RestoreError::ExplosionSuspected { cap: limit.event_cap });
        }
        self.append(tour, first);
        let t = self.elapsed + tour.length;
        self.traj.push(t, EventKind::Final, &tour.end_state);
        Ok(self.traj)
    }
}

const EMPTY_BUDGET: TourBudget = TourBudget {
    horizon: 0.0,
    max_events: 0,
};

fn run_sequential<S: TourSimulator>(
    sim: &S,
    x0: Option<S::State>,
    limit: RunLimit,
    rng: &mut dyn RngCore,
) -> Result<Trajectory> {
    limit.validate()?;
    let mut asm = Assembly::new(sim);
    let mut start = x0;
    let mut first = true;
    loop {
        let tour = sim.simulate(start.as_ref(), asm.budget(&limit), rng)?;
        if !asm.fits(&tour, &limit) {
            return asm.finish(&tour, first, &limit);
        }
        if asm.push_complete(&tour, first, &limit) {
            let next = sim.simulate(None, EMPTY_BUDGET, rng)?;
            return asm.finish(&next, false, &limit);
        }
        start = None;
        first = false;
    }
}

/// Seed and worker count for the tour-parallel runners.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Parallelism {
    pub seed: u64,
    pub workers: usize,
}

impl Parallelism {
    pub fn new(seed: u64, workers: usize) -> Self {
        Self { seed, workers }
    }

    pub(crate) fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers.max(1))
            .build()
            .map_err(|e| RestoreError::Config(format!("cannot start worker pool: {e}")))
    }
}

fn run_parallel<S: TourSimulator>(sim: &S, x0: Option<S::State>, limit: RunLimit, par: Parallelism) -> Result<Trajectory> {
    limit.validate()?;
    let pool = par.pool()?;
    let mut asm = Assembly::new(sim);
    let simulate = |i: u64, budget: TourBudget| {
        let mut rng: ChaCha8Rng = stream(par.seed, i);
        let start = if i == 0 { x0.as_ref() } else { None };
        sim.simulate(start, budget, &mut rng)
    };
    let mut next: u64 = 0;
    let mut chunk: u64 = 16;
    loop {
        let budget = asm.budget(&limit);
        let batch: Vec<Result<Tour>> = pool.install(|| (next..next + chunk).into_par_iter().map(|i| simulate(i, budget)).collect());
        for (k, result) in batch.into_iter().enumerate() {
            let i = next + k as u64;
            let first = i == 0;
            let tour = match result {
                Ok(t) if asm.fits(&t, &limit) => t,
                // beyond the cut-off, or failed somewhere that may lie beyond it:
                // replay this tour with the exact remaining budget
                _ => {
                    let exact = simulate(i, asm.budget(&limit))?;
                    if !asm.fits(&exact, &limit) {
                        return asm.finish(&exact, first, &limit);
                    }
                    exact
                }
            };
            if asm.push_complete(&tour, first, &limit) {
                let next_tour = simulate(i + 1, EMPTY_BUDGET)?;
                return asm.finish(&next_tour, false, &limit);
            }
        }
        next += chunk;
        chunk = (chunk * 2).min(1 << 14);
    }
}

// ---------------------------------------------------------------------------
// Jump-process Restore

/// A jump process with holding rate `λ`, jump kernel `P`, and Restore ingredients.
pub trait JumpRestoreModel: Sync {
    type State: Clone + Send + Sync;
    fn dim(&self) -> usize;
    fn holding_rate(&self, x: &Self::State) -> f64;
    fn regen_rate(&self, x: &Self::State) -> Result<f64>;
    fn local_move(&self, x: &Self::State, rng: &mut dyn RngCore) -> Self::State;
    fn regenerate(&self, rng: &mut dyn RngCore) -> Self::State;
    fn coords(&self, x: &Self::State, out: &mut Vec<f64>);
}

struct JumpSim<'a, M>(&'a M);

impl<M: JumpRestoreModel> TourSimulator for JumpSim<'_, M> {
    type State = M::State;

    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn path_kind(&self) -> PathKind {
        PathKind::PiecewiseConstant
    }

    fn exact(&self) -> bool {
        true
    }

    fn simulate(&self, start: Option<&M::State>, budget: TourBudget, rng: &mut dyn RngCore) -> Result<Tour> {
        let mut tour = Tour {
            times: Vec::new(),
            states: Vec::new(),
            length: 0.0,
            end: TourEnd::Regenerated,
            end_state: Vec::new(),
            steps: 0,
        };
        self.simulate_into(start, budget, rng, &mut tour)?;
        Ok(tour)
    }
}

impl<M: JumpRestoreModel> JumpSim<'_, M> {
    /// [`TourSimulator::simulate`] into a reused buffer.
    fn simulate_into(&self, start: Option<&M::State>, budget: TourBudget, rng: &mut dyn RngCore, tour: &mut Tour) -> Result<()> {
        let model = self.0;
        let mut x = match start {
            Some(x) => x.clone(),
            None => model.regenerate(rng),
        };
        tour.times.clear();
        tour.states.clear();
        tour.end_state.clear();
        tour.times.push(0.0);
        model.coords(&x, &mut tour.states);
        let mut t = 0.0;
        let mut steps = 0;
        loop {
            let lambda = model.holding_rate(&x);
            let kappa = model.regen_rate(&x)?;
            let (which, dt) = competing_exponentials(&[lambda, kappa], rng)?;
            let end = if t + dt > budget.horizon {
                Some((budget.horizon, TourEnd::Horizon))
            } else if steps >= budget.max_events {
                Some((t + dt, TourEnd::Budget))
            } else {
                None
            };
            if let Some((length, end)) = end {
                model.coords(&x, &mut tour.end_state);
                tour.length = length;
                tour.end = end;
                tour.steps = steps;
                return Ok(());
            }
            t += dt;
            steps += 1;
            if which == 1 {
                tour.length = t;
                tour.end = TourEnd::Regenerated;
                tour.steps = steps;
                return Ok(());
            }
            x = model.local_move(&x, rng);
            tour.times.push(t);
            model.coords(&x, &mut tour.states);
        }
    }
}

/// Jump-process Restore on a single random stream. Starts at `x0`, or at a
/// regeneration draw when `None`.
pub fn run_jump_restore<M: JumpRestoreModel>(
    model: &M,
    x0: Option<M::State>,
    limit: RunLimit,
    rng: &mut dyn RngCore,
) -> Result<Trajectory> {
    run_sequential(&JumpSim(model), x0, limit, rng)
}

/// Jump-process Restore with one random stream per tour.
pub fn run_jump_restore_parallel<M: JumpRestoreModel>(
    model: &M,
    x0: Option<M::State>,
    limit: RunLimit,
    par: Parallelism,
) -> Result<Trajectory> {
    run_parallel(&JumpSim(model), x0, limit, par)
}

/// Jump-process Restore on a single random stream up to time `t_max`,
/// handing each tour to `visit` instead of storing the trajectory. The flag
/// is false for the unfinished last tour. Draws the same path as
/// [`run_jump_restore`] with a time limit.
pub fn stream_jump_tours<M: JumpRestoreModel>(
    model: &M,
    x0: Option<M::State>,
    t_max: f64,
    rng: &mut dyn RngCore,
    mut visit: impl FnMut(&Tour, bool),
) -> Result<()> {
    let limit = RunLimit::time(t_max);
    limit.validate()?;
    let sim = JumpSim(model);
    let mut start = x0;
    let mut elapsed = 0.0;
    let mut tour = Tour {
        times: Vec::new(),
        states: Vec::new(),
        length: 0.0,
        end: TourEnd::Regenerated,
        end_state: Vec::new(),
        steps: 0,
    };
    loop {
        let budget = TourBudget {
            horizon: t_max - elapsed,
            max_events: usize::MAX,
        };
        sim.simulate_into(start.as_ref(), budget, rng, &mut tour)?;
        if tour.end != TourEnd::Regenerated || elapsed + tour.length > t_max {
            visit(&tour, false);
            return Ok(());
        }
        visit(&tour, true);
        elapsed += tour.length;
        start = None;
    }
}

fn categorical(weights: impl Iterator<Item = f64>, total: f64, rng: &mut dyn RngCore) -> usize {
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, w) in weights.enumerate() {
        if w > 0.0 {
            acc += w;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

impl JumpRestoreModel for DiscreteModel {
    type State = usize;

    fn dim(&self) -> usize {
        1
    }

    fn holding_rate(&self, x: &usize) -> f64 {
        DiscreteModel::holding_rate(self, *x)
    }

    fn regen_rate(&self, x: &usize) -> Result<f64> {
        crate::model::regen_rate_discrete(self, *x)
    }

    fn local_move(&self, x: &usize, rng: &mut dyn RngCore) -> usize {
        let n = self.n_states();
        let weights = (0..n).map(|j| if j == *x { 0.0 } else { self.q(*x, j) });
        categorical(weights, DiscreteModel::holding_rate(self, *x), rng)
    }

    fn regenerate(&self, rng: &mut dyn RngCore) -> usize {
        categorical(self.mu().iter().copied(), 1.0, rng)
    }

    fn coords(&self, x: &usize, out: &mut Vec<f64>) {
        out.push(*x as f64);
    }
}

/// Random-walk Metropolis jump process with unit holding rate. The kernel
/// is `π`-invariant, so the regeneration rate reduces to `C μ/π`. Rejected
/// proposals count as (stationary) local moves.
#[derive(Clone)]
pub struct MetropolisRestore {
    pub log_pi: LogDensityFn,
    pub proposal_sd: f64,
    pub regen: RegenDistribution,
    pub dim: usize,
}

impl JumpRestoreModel for MetropolisRestore {
    type State = Vec<f64>;

    fn dim(&self) -> usize {
        self.dim
    }

    fn holding_rate(&self, _: &Vec<f64>) -> f64 {
        1.0
    }

    fn regen_rate(&self, x: &Vec<f64>) -> Result<f64> {
        let lmu = self.regen.log_density(x);
        if lmu == f64::NEG_INFINITY {
            return Ok(0.0);
        }
        crate::model::check_rate(x, self.regen.c() * (lmu - (self.log_pi)(x)).exp())
    }

    fn local_move(&self, x: &Vec<f64>, rng: &mut dyn RngCore) -> Vec<f64> {
        let step = Normal::new(0.0, self.proposal_sd).unwrap();
        let y: Vec<f64> = x.iter().map(|xi| xi + step.sample(rng)).collect();
        let log_ratio = (self.log_pi)(&y) - (self.log_pi)(x);
        if rng.random::<f64>().ln() < log_ratio {
            y
        } else {
            x.clone()
        }
    }

    fn regenerate(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.regen.sample(rng)
    }

    fn coords(&self, x: &Vec<f64>, out: &mut Vec<f64>) {
        out.extend_from_slice(x);
    }
}

// ---------------------------------------------------------------------------
// Restore with general local dynamics

/// Local dynamics, regeneration rate and regeneration law.
#[derive(Clone)]
pub struct RestoreProcess {
    pub dynamics: Dynamics,
    pub rate: Arc<dyn RateFn>,
    pub regen: RegenDistribution,
    /// When set, any evaluated rate below it aborts with an assumption violation.
    pub kappa_floor: Option<f64>,
}

impl RestoreProcess {
    pub fn new(dynamics: Dynamics, rate: Arc<dyn RateFn>, regen: RegenDistribution) -> Self {
        Self {
            dynamics,
            rate,
            regen,
            kappa_floor: None,
        }
    }

    /// Diffusion Restore targeting `target`, with `κ = κ̃ + Cμ/π` for the
    /// drift of `dynamics`.
    pub fn diffusion(target: TargetModel, mu: RegenDistribution, dynamics: Dynamics) -> Result<Self> {
        let drift = dynamics
            .drift()
            .ok_or_else(|| RestoreError::Config("diffusion Restore needs diffusion dynamics".into()))?;
        if target.dim() != dynamics.dim() {
            return Err(RestoreError::Config("target and dynamics dimensions differ".into()));
        }
        let mu2 = mu.clone();
        let rate = move |x: &[f64]| regen_rate(&target, &mu2, &drift, x);
        Ok(Self::new(dynamics, Arc::new(rate), mu))
    }

    /// Frozen dynamics: the local generator vanishes and `κ = Cμ/π`.
    pub fn frozen(target: TargetModel, mu: RegenDistribution) -> Self {
        let dim = target.dim();
        let mu2 = mu.clone();
        let rate = move |x: &[f64]| {
            let comp = crate::model::compensation_term(&target, &mu2, x)?;
            crate::model::check_rate(x, comp)
        };
        Self::new(Dynamics::constant(dim), Arc::new(rate), mu)
    }

    /// The finite-state model as a jump process with thinned regenerations.
    pub fn discrete(model: &DiscreteModel) -> Result<Self> {
        let m1 = model.clone();
        let m2 = model.clone();
        let m3 = model.clone();
        let kernel = move |x: &[f64], rng: &mut dyn RngCore| vec![m1.local_move(&(x[0] as usize), rng) as f64];
        let holding = move |x: &[f64]| DiscreteModel::holding_rate(&m2, x[0] as usize);
        let dynamics = Dynamics::jump(Arc::new(kernel), Arc::new(holding), 1);
        let rate = move |x: &[f64]| crate::model::regen_rate_discrete(&m3, x[0] as usize);
        let mu = model.mu().to_vec();
        let mu2 = mu.clone();
        let regen = RegenDistribution::new(
            Arc::new(move |x: &[f64]| mu[x[0] as usize].ln()),
            Arc::new(move |rng: &mut dyn RngCore| vec![categorical(mu2.iter().copied(), 1.0, rng) as f64]),
            model.c(),
        )?;
        Ok(Self::new(dynamics, Arc::new(rate), regen))
    }

    pub fn with_floor(mut self, floor: f64) -> Self {
        self.kappa_floor = Some(floor);
        self
    }

    pub fn kappa(&self, x: &[f64]) -> Result<f64> {
        let k = self.rate.rate(x)?;
        if let Some(floor) = self.kappa_floor {
            if k < floor * (1.0 - BOUND_SLACK) {
                return Err(RestoreError::AssumptionViolation {
                    x: x.to_vec(),
                    kappa: k,
                    floor,
                });
            }
        }
        Ok(k)
    }
}

/// Restore with rate truncated at `m`, simulated by thinning.
#[derive(Clone)]
pub struct DiffusionRestore {
    pub process: RestoreProcess,
    pub m: f64,
    /// Skeleton spacing used for path integrals; `None` records candidates only.
    pub max_step: Option<f64>,
}

impl DiffusionRestore {
    /// Rejects truncation levels that do not exceed the rate at the start
    /// point and at a probe set of regeneration draws (a truncated rate that
    /// is constant at `m` carries no information about the target).
    pub fn new(process: RestoreProcess, m: f64, x0: Option<&[f64]>) -> Result<Self> {
        if !(m > 0.0) || (m.is_infinite() && !matches!(process.dynamics.kind(), DynamicsKind::Constant)) {
            return Err(RestoreError::Config(format!("truncation level M must be positive and finite, got {m}")));
        }
        let mut rng = stream(0x5eed, 0);
        let mut lowest = f64::INFINITY;
        if let Some(x) = x0 {
            lowest = lowest.min(process.rate.rate(x)?);
        }
        for _ in 0..256 {
            let x = process.regen.sample(&mut rng);
            lowest = lowest.min(process.rate.rate(&x)?);
        }
        if lowest >= m {
            return Err(RestoreError::Config(format!(
                "M = {m} does not exceed the infimum of the regeneration rate (probe minimum {lowest})"
            )));
        }
        let max_step = if process.dynamics.is_piecewise_constant() {
            None
        } else {
            Some(DEFAULT_MAX_STEP)
        };
        Ok(Self { process, m, max_step })
    }

    pub fn with_max_step(mut self, max_step: Option<f64>) -> Self {
        self.max_step = max_step;
        self
    }

    fn truncated_rate(&self, x: &[f64]) -> Result<f64> {
        Ok(self.process.kappa(x)?.min(self.m))
    }
}

impl TourSimulator for DiffusionRestore {
    type State = Vec<f64>;

    fn dim(&self) -> usize {
        self.process.dynamics.dim()
    }

    fn path_kind(&self) -> PathKind {
        if self.process.dynamics.is_piecewise_constant() {
            PathKind::PiecewiseConstant
        } else {
            PathKind::Continuous
        }
    }

    fn exact(&self) -> bool {
        self.process.dynamics.is_exact()
    }

    fn simulate(&self, start: Option<&Vec<f64>>, budget: TourBudget, rng: &mut dyn RngCore) -> Result<Tour> {
        let x = match start {
            Some(x) => x.clone(),
            None => self.process.regen.sample(rng),
        };
        if matches!(self.process.dynamics.kind(), DynamicsKind::Constant) {
            // frozen path: the lifetime is exponential at the current rate
            let k = self.truncated_rate(&x)?;
            let tau = if k > 0.0 { Exp::new(k).unwrap().sample(rng) } else { f64::INFINITY };
            let (length, end) = if tau > budget.horizon {
                (budget.horizon, TourEnd::Horizon)
            } else if budget.max_events == 0 {
                (tau, TourEnd::Budget)
            } else {
                (tau, TourEnd::Regenerated)
            };
            if length.is_infinite() {
                return Ok(Tour { times: vec![0.0], states: x.clone(), length: 0.0, end: TourEnd::Budget, end_state: x, steps: 0 });
            }
            return Ok(Tour { times: vec![0.0], end_state: x.clone(), states: x, length, end, steps: 1 });
        }
        let rate = |y: &[f64]| self.truncated_rate(y);
        let options = ThinningOptions {
            max_step: self.max_step,
            record_path: true,
        };
        let arrival = thinned_first_arrival(&self.process.dynamics, &x, &rate, self.m, budget.horizon, options, rng)?;
        let (skeleton, arrived) = match arrival {
            Arrival::Arrived(a) => (a.skeleton, true),
            Arrival::HorizonReached { skeleton, .. } => (skeleton, false),
        };
        let crate::dynamics::Skeleton { mut times, states, marks } = skeleton;
        let mut states: Vec<f64> = states.into_iter().flatten().collect();
        let dim = x.len();
        let (length, end, end_state) = if arrived {
            (*times.last().unwrap(), TourEnd::Regenerated, Vec::new())
        } else {
            let end_state = states[states.len() - dim..].to_vec();
            if times.len() > 1 && marks.last() != Some(&Mark::Start) {
                times.pop();
                states.truncate(states.len() - dim);
            }
            (budget.horizon, TourEnd::Horizon, end_state)
        };
        let steps = times.len() - 1;
        if steps > budget.max_events {
            let keep = budget.max_events + 1;
            let t_end = times[keep - 1];
            let end_state = states[(keep - 1) * dim..keep * dim].to_vec();
            times.truncate(keep);
            states.truncate(keep * dim);
            return Ok(Tour { times, states, length: t_end, end: TourEnd::Budget, end_state, steps: budget.max_events });
        }
        Ok(Tour { times, states, length, end, end_state, steps })
    }
}

pub fn run_diffusion_restore(
    sampler: &DiffusionRestore,
    x0: Option<Vec<f64>>,
    limit: RunLimit,
    rng: &mut dyn RngCore,
) -> Result<Trajectory> {
    run_sequential(sampler, x0, limit, rng)
}

pub fn run_diffusion_restore_parallel(
    sampler: &DiffusionRestore,
    x0: Option<Vec<f64>>,
    limit: RunLimit,
    par: Parallelism,
) -> Result<Trajectory> {
    run_parallel(sampler, x0, limit, par)
}

// ---------------------------------------------------------------------------
// Exact draws

/// Restore process with `κ̲ ≤ κ ≤ M`, for coupling from the past.
#[derive(Clone)]
pub struct CftpConfig {
    pub kappa_lower: f64,
    pub bound_m: f64,
    pub process: RestoreProcess,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CftpDraw {
    pub state: Vec<f64>,
    /// False when the dynamics were discretised.
    pub exact: bool,
    pub n_candidates: usize,
    pub n_regenerations: usize,
}

impl CftpConfig {
    fn validate(&self) -> Result<()> {
        if !(self.kappa_lower > 0.0 && self.kappa_lower.is_finite()) {
            return Err(RestoreError::Config(format!("kappa_lower must be positive, got {}", self.kappa_lower)));
        }
        if !(self.bound_m >= self.kappa_lower && self.bound_m.is_finite()) {
            return Err(RestoreError::Config(format!(
                "M = {} must be finite and at least kappa_lower = {}",
                self.bound_m, self.kappa_lower
            )));
        }
        Ok(())
    }

    fn checked_rate(&self, x: &[f64]) -> Result<f64> {
        let k = self.process.rate.rate(x)?;
        if k < self.kappa_lower * (1.0 - BOUND_SLACK) {
            return Err(RestoreError::AssumptionViolation {
                x: x.to_vec(),
                kappa: k,
                floor: self.kappa_lower,
            });
        }
        if k > self.bound_m * (1.0 + BOUND_SLACK) {
            return Err(RestoreError::BoundViolation {
                x: x.to_vec(),
                rate: k,
                bound: self.bound_m,
            });
        }
        Ok(k)
    }
}

/// One exact draw from the target: run Restore with rate `κ − κ̲` from a
/// regeneration draw and stop at an independent `Exp(κ̲)` time.
pub fn run_cftp(cfg: &CftpConfig, rng: &mut dyn RngCore) -> Result<CftpDraw> {
    cfg.validate()?;
    let horizon = Exp::new(cfg.kappa_lower).unwrap().sample(rng);
    let dynamics = &cfg.process.dynamics;
    let mut x = cfg.process.regen.sample(rng);
    let excess = cfg.bound_m - cfg.kappa_lower;
    let clock = (excess > 0.0).then(|| Exp::new(excess).unwrap());
    let mut t = 0.0;
    let mut n_candidates = 0;
    let mut n_regenerations = 0;
    loop {
        let dt = clock.as_ref().map_or(f64::INFINITY, |c| c.sample(rng));
        if t + dt >= horizon {
            let state = dynamics.advance(&x, horizon - t, rng)?;
            return Ok(CftpDraw {
                state,
                exact: dynamics.is_exact(),
                n_candidates,
                n_regenerations,
            });
        }
        x = dynamics.advance(&x, dt, rng)?;
        t += dt;
        n_candidates += 1;
        let k = cfg.checked_rate(&x)?;
        if rng.random::<f64>() * excess < k - cfg.kappa_lower {
            x = cfg.process.regen.sample(rng);
            n_regenerations += 1;
        }
    }
}

/// `n` independent exact draws, draw `i` on random stream `i`.
pub fn run_cftp_parallel(cfg: &CftpConfig, n: usize, par: Parallelism) -> Result<Vec<CftpDraw>> {
    cfg.validate()?;
    let pool = par.pool()?;
    pool.install(|| {
        (0..n as u64)
            .into_par_iter()
            .map(|i| run_cftp(cfg, &mut stream(par.seed, i)))
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RejectionOutcome {
    pub draw: Vec<f64>,
    pub n_proposals: usize,
    /// Accept/reject decision for every proposal.
    pub trace: Vec<bool>,
}

/// Acceptance threshold `π̄(x) / (M μ̄(x))` shared by both rejection samplers.
pub fn acceptance_threshold(log_pi: f64, log_mu: f64, m: f64) -> f64 {
    (log_pi - log_mu).exp() / m
}

/// Coupling from the past with frozen dynamics and `κ = Cμ/π`, `κ̲ = C/M`.
///
/// At a proposal `X`, the stopping clock (rate `κ̲`) and the regeneration
/// clock (rate `κ(X) − κ̲`) compete; the stopping clock wins with
/// probability `κ̲/κ(X) = π̄(X)/(Mμ̄(X))`. The race is decided with one
/// uniform per proposal against that threshold.
pub fn run_rejection_equivalence(
    target: &TargetModel,
    mu: &RegenDistribution,
    m: f64,
    rng: &mut dyn RngCore,
) -> Result<RejectionOutcome> {
    if !(m > 0.0 && m.is_finite()) {
        return Err(RestoreError::Config(format!("envelope constant must be positive, got {m}")));
    }
    let kappa_lower = mu.c() / m;
    let mut trace = Vec::new();
    loop {
        let x = mu.sample(rng);
        let log_pi = target.log_density(&x)?;
        let log_mu = mu.log_density(&x);
        let kappa = mu.c() * (log_mu - log_pi).exp();
        let p = acceptance_threshold(log_pi, log_mu, m);
        if kappa < kappa_lower * (1.0 - 1e-12) || p > 1.0 + 1e-12 {
            return Err(RestoreError::Envelope { x, ratio: p * m, m });
        }
        let stop_first = rng.random::<f64>() < p;
        trace.push(stop_first);
        if stop_first {
            return Ok(RejectionOutcome {
                draw: x,
                n_proposals: trace.len(),
                trace,
            });
        }
    }
}

/// Textbook rejection sampling from `μ` with envelope `M μ̄ ≥ π̄`.
pub fn classical_rejection(
    target: &TargetModel,
    mu: &RegenDistribution,
    m: f64,
    rng: &mut dyn RngCore,
) -> Result<RejectionOutcome> {
    let mut trace = Vec::new();
    loop {
        let x = mu.sample(rng);
        let log_pi = target.log_density(&x)?;
        let ratio = (log_pi - mu.log_density(&x)).exp() / m;
        if ratio > 1.0 + 1e-12 {
            return Err(RestoreError::Envelope { x, ratio: ratio * m, m });
        }
        let accept = rng.random::<f64>() < ratio;
        trace.push(accept);
        if accept {
            return Ok(RejectionOutcome {
                draw: x,
                n_proposals: trace.len(),
                trace,
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{confidence_interval, estimate, sigma2_hat, tour_integrals};
    use crate::model::gaussian;
    use crate::oracle::{chi2_counts, full_generator, ks_one_sample, stationary_vector};

    fn asym(c: f64) -> DiscreteModel {
        DiscreteModel::new(vec![vec![-2.0, 2.0], vec![1.0, -1.0]], vec![0.5, 0.5], vec![0.5, 0.5], c).unwrap()
    }

    fn occupation(traj: &Trajectory, state: f64) -> f64 {
        let s = tour_integrals(traj, |x| (x[0] == state) as i32 as f64, false).unwrap();
        estimate(&s).unwrap()
    }

    #[test]
    fn discrete_occupation_matches_oracle() {
        let model = asym(1.0);
        let oracle = stationary_vector(&full_generator(&model).unwrap()).unwrap();
        let seq = run_jump_restore(&model, Some(0), RunLimit::time(1e5), &mut stream(1, 0)).unwrap();
        assert!((seq.total_time() - 1e5).abs() < 1e-9);
        assert!((occupation(&seq, 0.0) - oracle[0]).abs() < 0.01);
        let par = run_jump_restore_parallel(&model, Some(0), RunLimit::time(1e5), Parallelism::new(1, 3)).unwrap();
        assert!((occupation(&par, 0.0) - oracle[0]).abs() < 0.01);
    }

    #[test]
    fn trajectory_invariants() {
        let model = asym(1.0);
        let t = run_jump_restore(&model, Some(1), RunLimit::time(500.0), &mut stream(2, 0)).unwrap();
        assert_eq!(t.kind(0), EventKind::Initial);
        assert_eq!(t.kind(t.len() - 1), EventKind::Final);
        assert!(t.times().windows(2).all(|w| w[0] <= w[1]));
        let regen = t.events().filter(|e| e.kind == EventKind::Regeneration).count();
        assert_eq!(t.regen_count(), regen);
        let complete: f64 = t.tour_lengths().iter().sum();
        let tours = t.tours();
        let (last, done) = tours.last().unwrap();
        assert!(!done);
        assert!((complete + t.total_time() - t.time(last.start) - t.total_time()).abs() < 1e-9);
    }

    #[test]
    fn runs_are_independent_of_worker_count() {
        let model = asym(1.0);
        let a = run_jump_restore_parallel(&model, Some(0), RunLimit::time(3000.0), Parallelism::new(9, 1)).unwrap();
        let b = run_jump_restore_parallel(&model, Some(0), RunLimit::time(3000.0), Parallelism::new(9, 6)).unwrap();
        assert_eq!(a, b);
        let c = run_jump_restore_parallel(&model, Some(0), RunLimit::time(3000.0), Parallelism::new(10, 6)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn tour_and_step_limits() {
        let model = asym(1.0);
        let t = run_jump_restore_parallel(&model, Some(0), RunLimit::tours(250), Parallelism::new(3, 2)).unwrap();
        assert_eq!(t.regen_count(), 250);
        assert_eq!(t.tour_lengths().len(), 250);
        let s = run_jump_restore(&model, None, RunLimit::steps(1000), &mut stream(3, 0)).unwrap();
        let steps = s.events().filter(|e| matches!(e.kind, EventKind::LocalMove | EventKind::Regeneration)).count();
        assert_eq!(steps, 1000);
        let p = run_jump_restore_parallel(&model, None, RunLimit::steps(1000), Parallelism::new(3, 4)).unwrap();
        let steps = p.events().filter(|e| matches!(e.kind, EventKind::LocalMove | EventKind::Regeneration)).count();
        assert_eq!(steps, 1000);
    }

    #[test]
    fn vanishing_rate_never_regenerates() {
        let model =
            DiscreteModel::new(vec![vec![-1.0, 1.0], vec![1.0, -1.0]], vec![0.5, 0.5], vec![0.5, 0.5], 1e-12).unwrap();
        let t = run_jump_restore(&model, Some(0), RunLimit::time(1000.0), &mut stream(4, 0)).unwrap();
        assert_eq!(t.regen_count(), 0);
    }

    #[test]
    fn event_cap_flags_explosion() {
        let model = asym(1.0);
        let limit = RunLimit {
            event_cap: 100,
            ..RunLimit::time(1e6)
        };
        assert!(matches!(
            run_jump_restore(&model, Some(0), limit, &mut stream(5, 0)),
            Err(RestoreError::ExplosionSuspected { cap: 100 })
        ));
    }

    fn normal_process(c: f64, dynamics: Dynamics) -> RestoreProcess {
        let target = gaussian(vec![0.0], vec![1.0]).unwrap();
        let mu = RegenDistribution::gaussian(vec![0.0], vec![1.0], c).unwrap();
        RestoreProcess::diffusion(target, mu, dynamics).unwrap()
    }

    #[test]
    fn invariant_dynamics_regenerate_homogeneously() {
        let c = 1.3;
        let sampler = DiffusionRestore::new(normal_process(c, Dynamics::ou(vec![-0.5])), 2.0, None).unwrap();
        let t = run_diffusion_restore_parallel(&sampler, None, RunLimit::tours(10_000), Parallelism::new(6, 4)).unwrap();
        let lengths = t.tour_lengths();
        let (_, p) = ks_one_sample(&lengths, |x| 1.0 - (-c * x).exp()).unwrap();
        assert!(p > 0.001, "p = {p}");
        // truncation below the (constant) rate is a configuration error
        assert!(matches!(
            DiffusionRestore::new(normal_process(c, Dynamics::ou(vec![-0.5])), 1.0, None),
            Err(RestoreError::Config(_))
        ));
    }

    #[test]
    fn brownian_restore_moments() {
        let sampler = DiffusionRestore::new(normal_process(0.5, Dynamics::brownian(1)), 10.0, None).unwrap();
        let t = run_diffusion_restore_parallel(&sampler, None, RunLimit::time(1e5), Parallelism::new(8, 4)).unwrap();
        assert_eq!(t.path_kind(), PathKind::Continuous);
        for (f, want) in [(Box::new(|x: &[f64]| x[0]) as Box<dyn Fn(&[f64]) -> f64>, 0.0), (Box::new(|x: &[f64]| x[0] * x[0]), 1.0)] {
            let s = tour_integrals(&t, &f, true).unwrap();
            let est = estimate(&s).unwrap();
            let se = (sigma2_hat(&s).unwrap() / s.n_tours() as f64).sqrt();
            assert!((est - want).abs() < 3.0 * se, "estimate {est} vs {want}, se {se}");
        }
    }

    #[test]
    fn cftp_discrete_matches_oracle() {
        // κ = (1, 3): κ̲ = 1, M = 3
        let model = asym(2.0);
        let oracle = stationary_vector(&full_generator(&model).unwrap()).unwrap();
        let cfg = CftpConfig {
            kappa_lower: 1.0,
            bound_m: 3.0,
            process: RestoreProcess::discrete(&model).unwrap(),
        };
        let draws = run_cftp_parallel(&cfg, 100_000, Parallelism::new(11, 4)).unwrap();
        let zeros = draws.iter().filter(|d| d.state[0] == 0.0).count() as f64;
        let n = draws.len() as f64;
        let (_, p) = chi2_counts(&[zeros, n - zeros], &[oracle[0] * n, oracle[1] * n]).unwrap();
        assert!(p > 0.001, "p = {p}");
        assert!(draws.iter().all(|d| d.exact));
    }

    #[test]
    fn cftp_checks_rate_bounds() {
        let model = asym(2.0);
        let low = CftpConfig {
            kappa_lower: 1.5,
            bound_m: 3.0,
            process: RestoreProcess::discrete(&model).unwrap(),
        };
        let mut rng = stream(12, 0);
        let err = (0..1000).find_map(|_| run_cftp(&low, &mut rng).err()).unwrap();
        assert!(matches!(err, RestoreError::AssumptionViolation { .. }));
        let tight = CftpConfig {
            kappa_lower: 1.0,
            bound_m: 2.0,
            process: RestoreProcess::discrete(&model).unwrap(),
        };
        let err = (0..1000).find_map(|_| run_cftp(&tight, &mut rng).err()).unwrap();
        assert!(matches!(err, RestoreError::BoundViolation { .. }));
    }

    #[test]
    fn cftp_without_excess_rate_is_an_exponential_time_advance() {
        // κ ≡ κ̲ with BM from N(0,1): the output is N(0, 1 + T), T ~ Exp(κ̲),
        // whose variance is 1 + 1/κ̲.
        let kl = 2.0;
        let mu = RegenDistribution::gaussian(vec![0.0], vec![1.0], 1.0).unwrap();
        let cfg = CftpConfig {
            kappa_lower: kl,
            bound_m: kl,
            process: RestoreProcess::new(Dynamics::brownian(1), Arc::new(move |_: &[f64]| Ok(kl)), mu),
        };
        let draws = run_cftp_parallel(&cfg, 50_000, Parallelism::new(13, 4)).unwrap();
        assert!(draws.iter().all(|d| d.n_candidates == 0));
        let n = draws.len() as f64;
        let var = draws.iter().map(|d| d.state[0].powi(2)).sum::<f64>() / n;
        let want = 1.0 + 1.0 / kl;
        // fourth moment of the scale mixture: 3·E[(1+T)²]
        let m4 = 3.0 * (1.0 + 2.0 / kl + 2.0 / (kl * kl));
        let se = ((m4 - want * want) / n).sqrt();
        assert!((var - want).abs() < 4.0 * se, "var {var} want {want}");
    }

    #[test]
    fn rejection_equivalence_traces() {
        let target = gaussian(vec![0.0], vec![1.0]).unwrap();
        let mu = RegenDistribution::gaussian(vec![0.0], vec![2.0], 1.0).unwrap();
        let m = 2.0;
        let mut total = 0;
        for i in 0..10_000u64 {
            let a = run_rejection_equivalence(&target, &mu, m, &mut stream(14, i)).unwrap();
            let b = classical_rejection(&target, &mu, m, &mut stream(14, i)).unwrap();
            assert_eq!(a, b);
            total += a.n_proposals;
        }
        let mean = total as f64 / 1e4;
        // Geometric(1/M): variance (1 − p)/p² = 2
        assert!((mean - m).abs() < 3.0 * (2.0f64 / 1e4).sqrt(), "mean {mean}");
    }

    #[test]
    fn rejection_with_matching_proposal_accepts_immediately() {
        let target = gaussian(vec![0.0], vec![1.0]).unwrap();
        let mu = RegenDistribution::gaussian(vec![0.0], vec![1.0], 1.0).unwrap();
        let mut rng = stream(15, 0);
        for _ in 0..100 {
            assert_eq!(run_rejection_equivalence(&target, &mu, 1.0, &mut rng).unwrap().n_proposals, 1);
        }
        let narrow = RegenDistribution::gaussian(vec![0.0], vec![0.5], 1.0).unwrap();
        let err = (0..100).find_map(|_| run_rejection_equivalence(&target, &narrow, 1.0, &mut rng).err());
        assert!(matches!(err, Some(RestoreError::Envelope { .. })));
    }

    #[test]
    fn frozen_restore_estimates() {
        // rejection mode with π = μ: κ ≡ C, lifetimes independent of the state
        let c = 1.0;
        let process = RestoreProcess::frozen(
            gaussian(vec![0.0], vec![1.0]).unwrap(),
            RegenDistribution::gaussian(vec![0.0], vec![1.0], c).unwrap(),
        );
        let sampler = DiffusionRestore::new(process, f64::INFINITY, None).unwrap();
        let t = run_diffusion_restore_parallel(&sampler, None, RunLimit::tours(20_000), Parallelism::new(16, 4)).unwrap();
        let s = tour_integrals(&t, |x| x[0] * x[0], true).unwrap();
        let est = estimate(&s).unwrap();
        let se = (sigma2_hat(&s).unwrap() / s.n_tours() as f64).sqrt();
        assert!((est - 1.0).abs() < 3.0 * se);
        let ci = confidence_interval(&s, 0.95).unwrap();
        assert!(ci.low < est && est < ci.high);
        // f = 1_A integrates to 1_A(X_i) τ_i
        let ind = tour_integrals(&t, |x| (x[0] > 0.5) as i32 as f64, false).unwrap();
        for (i, (range, _)) in t.tours().into_iter().take(50).enumerate() {
            let x = t.state(range.start)[0];
            assert_eq!(ind.z[i], if x > 0.5 { ind.tau[i] } else { 0.0 });
        }
    }

    #[test]
    fn events_csv_format() {
        let model = asym(1.0);
        let t = run_jump_restore(&model, Some(0), RunLimit::time(2.0), &mut stream(17, 0)).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,kind,x0"));
        assert_eq!(lines.next(), Some("0,I,0"));
        assert!(text.trim_end().lines().last().unwrap().starts_with("2,F,"));
    }

    #[test]
    fn streamed_tours_match_stored_trajectory() {
        let model = asym(1.0);
        let traj = run_jump_restore(&model, Some(1), RunLimit::time(300.0), &mut stream(12, 0)).unwrap();
        let mut lengths = Vec::new();
        let mut last = 0.0;
        stream_jump_tours(&model, Some(1), 300.0, &mut stream(12, 0), |tour, complete| {
            if complete {
                lengths.push(tour.length);
            } else {
                last = tour.length;
            }
        })
        .unwrap();
        let stored = traj.tour_lengths();
        assert_eq!(lengths.len(), stored.len());
        assert!(lengths.iter().zip(&stored).all(|(a, b)| (a - b).abs() < 1e-9));
        assert!((lengths.iter().sum::<f64>() + last - 300.0).abs() < 1e-9);
    }
}
