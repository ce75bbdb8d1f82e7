//! Deterministic integration of the truncated coagulation system.
//!
//! `run` advances an initial lattice state with an adaptive embedded
//! Dormand-Prince 5(4) pair, entrywise error weights
//! `abs_tol + rel_tol * |n|`, strict nonnegativity (reject-and-halve rather
//! than clipping), and escape-ledger accounting that makes mass-plus-ledger
//! a linear invariant of the stepping, conserved to rounding.

mod algebra;
mod dense;
mod fft;
mod rhs;
mod stepper;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::kernel::KernelSpec;
use crate::lattice::{Composition, LatticeState, LatticeError};
use crate::kernel::KernelError;
use crate::real::{count, lit, Real};
use algebra::MapState;
use dense::DenseEngine;
use stepper::{Dopri5, Engine};

pub use rhs::{rhs, RhsOutput};
pub use stepper::StepStats;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error("solver configuration invalid: {0}")]
    InvalidConfig(String),
    #[error(
        "escaped mass fraction {fraction:.3e} exceeded the abort threshold {threshold:.3e} at t = {time:.6e}; the truncation is under-resolved for this horizon"
    )]
    EscapeThreshold {
        time: f64,
        fraction: f64,
        threshold: f64,
    },
    #[error("step size underflow at t = {time:.6e}; the system appears stiff at the requested tolerances")]
    StepSizeUnderflow { time: f64 },
    #[error("i/o failure during snapshot emission: {0}")]
    Sink(String),
}

/// Integration method of the embedded pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    #[default]
    DormandPrince54,
}

/// Tolerances, horizon, and snapshot schedule of a deterministic run.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig<R> {
    pub rel_tol: R,
    pub abs_tol: R,
    pub dt_init: R,
    pub dt_max: R,
    pub t_end: R,
    pub snapshot_times: Vec<R>,
    /// Abort once the escaped-mass fraction of the initial mass passes this.
    pub escape_abort_fraction: R,
    /// Emission floor: snapshot entries below it move to the dropped-mass
    /// ledger instead of being written.
    pub snapshot_floor: R,
    pub method: Method,
}

impl<R: Real> SolverConfig<R> {
    pub fn new(t_end: R) -> Self {
        Self {
            rel_tol: lit(1e-8),
            abs_tol: lit(1e-14),
            dt_init: lit(1e-4),
            dt_max: t_end,
            t_end,
            snapshot_times: default_snapshot_times(t_end),
            escape_abort_fraction: lit(0.01),
            snapshot_floor: R::zero(),
            method: Method::DormandPrince54,
        }
    }

    pub fn validate(&self, t_start: R) -> Result<(), SolverError> {
        if !(self.rel_tol > R::zero()) || !(self.abs_tol > R::zero()) {
            return Err(SolverError::InvalidConfig(
                "tolerances must be positive".into(),
            ));
        }
        if !(self.dt_init > R::zero()) || !(self.dt_init <= self.dt_max) {
            return Err(SolverError::InvalidConfig(
                "step sizes must satisfy 0 < dt_init <= dt_max".into(),
            ));
        }
        if !(self.t_end > t_start) {
            return Err(SolverError::InvalidConfig(
                "t_end must exceed the initial time".into(),
            ));
        }
        if !(self.escape_abort_fraction > R::zero()) || self.escape_abort_fraction > R::one() {
            return Err(SolverError::InvalidConfig(
                "escape abort fraction must lie in (0, 1]".into(),
            ));
        }
        if !(self.snapshot_floor >= R::zero()) {
            return Err(SolverError::InvalidConfig(
                "snapshot floor must be nonnegative".into(),
            ));
        }
        let mut prev = t_start;
        for (i, &t) in self.snapshot_times.iter().enumerate() {
            if !(t >= prev) || t > self.t_end {
                return Err(SolverError::InvalidConfig(format!(
                    "snapshot times must be sorted within [t_start, t_end] (entry {i})"
                )));
            }
            prev = t;
        }
        Ok(())
    }
}

/// Default schedule: the initial time plus 40 log-spaced times on
/// `[1e-2, t_end]`.
pub fn default_snapshot_times<R: Real>(t_end: R) -> Vec<R> {
    let mut times = vec![R::zero()];
    let lo = lit::<R>(1e-2);
    if t_end <= lo {
        times.push(t_end);
        return times;
    }
    let n = 40usize;
    let log_lo = lo.ln();
    let log_hi = t_end.ln();
    for i in 0..n {
        let f = count::<R>(i) / count::<R>(n - 1);
        times.push((log_lo + (log_hi - log_lo) * f).exp());
    }
    let last = times.len() - 1;
    times[last] = t_end;
    times
}

/// Integration summary attached to every trajectory.
#[derive(Debug, Clone)]
pub struct RunReport<R> {
    pub initial_mass: Vec<R>,
    /// Final `|mass + ledgers - initial|` per component.
    pub mass_defect: Vec<R>,
    pub max_rel_mass_defect: R,
    pub escaped_fraction: R,
    /// Total mass zeroed by the nonnegativity filter, per component.
    pub clipped_mass: Vec<R>,
    pub stats: StepStats,
    pub final_time: R,
}

/// Snapshots plus the integration report.
#[derive(Debug, Clone)]
pub struct Trajectory<R> {
    pub snapshots: Vec<(R, LatticeState<R>)>,
    pub report: RunReport<R>,
}

/// Integrates the coagulation system, collecting snapshots in memory.
pub fn run<R: Real>(
    initial: &LatticeState<R>,
    kernel: &KernelSpec<R>,
    config: &SolverConfig<R>,
) -> Result<Trajectory<R>, SolverError> {
    let mut snapshots = Vec::new();
    let report = run_with(initial, kernel, config, |t, state| {
        snapshots.push((t, state));
        Ok(())
    })?;
    Ok(Trajectory { snapshots, report })
}

/// Integrates the coagulation system, streaming snapshots into `sink`.
pub fn run_with<R: Real, F>(
    initial: &LatticeState<R>,
    kernel: &KernelSpec<R>,
    config: &SolverConfig<R>,
    sink: F,
) -> Result<RunReport<R>, SolverError>
where
    F: FnMut(R, LatticeState<R>) -> Result<(), SolverError>,
{
    config.validate(initial.time)?;
    kernel.params.require_no_gelation()?;
    rhs::check_kernel_dim(initial.d(), kernel)?;
    if initial.d() <= 2 {
        let mut engine = DenseEngine::new(initial.d(), initial.n_max(), kernel.clone())?;
        let y0 = engine.from_state(initial)?;
        drive(engine, y0, initial, config, sink)
    } else {
        let engine = SparseEngine {
            d: initial.d(),
            n_max: initial.n_max(),
            kernel: kernel.clone(),
            init_dropped: initial.dropped_mass.clone(),
        };
        let y0 = MapState {
            map: initial.concentrations.clone(),
            escaped: initial.escaped_mass.clone(),
        };
        drive(engine, y0, initial, config, sink)
    }
}

/// One accepted adaptive step from `state`; returns the new state, the step
/// size used, and the error estimate of the accepted step.
pub fn step<R: Real>(
    state: &LatticeState<R>,
    kernel: &KernelSpec<R>,
    config: &SolverConfig<R>,
) -> Result<(LatticeState<R>, R, R), SolverError> {
    kernel.params.require_no_gelation()?;
    rhs::check_kernel_dim(state.d(), kernel)?;
    if state.support_len() == 0 {
        // Nothing evolves: take the largest permitted step.
        let mut advanced = state.clone();
        advanced.time = state.time + config.dt_max;
        return Ok((advanced, config.dt_max, R::zero()));
    }
    let t0 = state.time;
    if state.d() <= 2 {
        let mut engine = DenseEngine::new(state.d(), state.n_max(), kernel.clone())?;
        let mut y = engine.from_state(state)?;
        let mut stepper = Dopri5::new(engine, &y, config.dt_init, config.abs_tol, config.rel_tol);
        let outcome = stepper.step(t0, &mut y, config.dt_max)?;
        let new_state = stepper
            .engine
            .to_lattice(&y, t0 + outcome.h_used, R::zero());
        Ok((new_state, outcome.h_used, outcome.error_norm))
    } else {
        let engine = SparseEngine {
            d: state.d(),
            n_max: state.n_max(),
            kernel: kernel.clone(),
            init_dropped: state.dropped_mass.clone(),
        };
        let mut y = MapState {
            map: state.concentrations.clone(),
            escaped: state.escaped_mass.clone(),
        };
        let mut stepper = Dopri5::new(engine, &y, config.dt_init, config.abs_tol, config.rel_tol);
        let outcome = stepper.step(t0, &mut y, config.dt_max)?;
        let new_state = stepper
            .engine
            .to_lattice(&y, t0 + outcome.h_used, R::zero());
        Ok((new_state, outcome.h_used, outcome.error_norm))
    }
}

fn drive<R: Real, E: Engine<R>, F>(
    engine: E,
    y0: E::State,
    initial: &LatticeState<R>,
    config: &SolverConfig<R>,
    mut sink: F,
) -> Result<RunReport<R>, SolverError>
where
    F: FnMut(R, LatticeState<R>) -> Result<(), SolverError>,
{
    let d = initial.d();
    let t0 = initial.time;
    let initial_mass = initial.accounted_mass_vector();
    let m0: R = initial_mass.iter().copied().sum();
    let threshold = config.escape_abort_fraction;

    let mut y = y0;
    let mut stepper = Dopri5::new(engine, &y, config.dt_init, config.abs_tol, config.rel_tol);
    let mut t = t0;
    let mut clipped = vec![R::zero(); d];

    // Snapshot targets strictly after t0; anything at t0 is emitted now.
    let mut targets: Vec<R> = Vec::new();
    for &ts in &config.snapshot_times {
        if ts <= t0 {
            let state = stepper.engine.to_lattice(&y, t0, config.snapshot_floor);
            sink(ts, state)?;
        } else {
            targets.push(ts);
        }
    }
    targets.dedup();
    if targets.last().map_or(true, |&last| last < config.t_end) {
        targets.push(config.t_end);
    }

    for &target in &targets {
        while t < target {
            let h_cap = config.dt_max.min(target - t);
            let outcome = stepper.step(t, &mut y, h_cap)?;
            t = if outcome.h_used == h_cap && target - t <= config.dt_max {
                target
            } else {
                t + outcome.h_used
            };
            for i in 0..d {
                clipped[i] += outcome.clipped[i];
            }
            if m0 > R::zero() {
                let escaped: R = stepper.engine.escaped(&y).iter().copied().sum();
                if escaped > threshold * m0 {
                    return Err(SolverError::EscapeThreshold {
                        time: t.to_f64().unwrap_or(f64::NAN),
                        fraction: (escaped / m0).to_f64().unwrap_or(f64::NAN),
                        threshold: threshold.to_f64().unwrap_or(f64::NAN),
                    });
                }
            }
        }
        if config.snapshot_times.iter().any(|&ts| ts == target) {
            let state = stepper.engine.to_lattice(&y, t, config.snapshot_floor);
            sink(t, state)?;
        }
    }

    let mut final_mass = stepper.engine.mass_vector(&y);
    let escaped = stepper.engine.escaped(&y);
    let escaped_total: R = escaped.iter().copied().sum();
    for i in 0..d {
        final_mass[i] += escaped[i] + initial.dropped_mass[i];
    }
    let mut defect = vec![R::zero(); d];
    let mut max_rel = R::zero();
    for i in 0..d {
        defect[i] = (final_mass[i] - initial_mass[i]).abs();
        if m0 > R::zero() {
            max_rel = max_rel.max(defect[i] / m0);
        }
    }
    Ok(RunReport {
        initial_mass,
        mass_defect: defect,
        max_rel_mass_defect: max_rel,
        escaped_fraction: if m0 > R::zero() {
            escaped_total / m0
        } else {
            R::zero()
        },
        clipped_mass: clipped,
        stats: stepper.stats,
        final_time: t,
    })
}

/// Direct pairwise engine for d >= 3, where no dense grid is practical.
struct SparseEngine<R> {
    d: usize,
    n_max: u32,
    kernel: KernelSpec<R>,
    init_dropped: Vec<R>,
}

impl<R: Real> Engine<R> for SparseEngine<R> {
    type State = MapState<R>;

    fn rhs(&mut self, y: &Self::State, out: &mut Self::State) {
        let entries: Vec<(&Composition, R)> = y.map.iter().map(|(c, &n)| (c, n)).collect();
        let (derivative, escape) = rhs::pairwise(&entries, &self.kernel, self.n_max, self.d);
        out.map = derivative;
        out.escaped = escape;
    }

    fn zero_like(&self, _y: &Self::State) -> Self::State {
        MapState::new(self.d)
    }

    fn sanitize(&self, y: &mut Self::State, tol: R) -> Option<Vec<R>> {
        let mut clipped = vec![R::zero(); self.d];
        for v in &y.escaped {
            if *v < -tol {
                return None;
            }
        }
        for (comp, v) in y.map.iter_mut() {
            if *v < R::zero() {
                if *v < -tol {
                    return None;
                }
                for (i, &a) in comp.components().iter().enumerate() {
                    clipped[i] += -*v * count::<R>(a as usize);
                }
                *v = R::zero();
            }
        }
        y.map.retain(|_, v| *v != R::zero());
        for v in y.escaped.iter_mut() {
            if *v < R::zero() {
                *v = R::zero();
            }
        }
        Some(clipped)
    }

    fn to_lattice(&self, y: &Self::State, time: R, floor: R) -> LatticeState<R> {
        let mut state = LatticeState::new(self.d, self.n_max);
        state.time = time;
        let mut dropped = self.init_dropped.clone();
        for (comp, &v) in &y.map {
            if v <= R::zero() {
                continue;
            }
            if v >= floor {
                state.concentrations.insert(comp.clone(), v);
            } else {
                for (i, &a) in comp.components().iter().enumerate() {
                    dropped[i] += v * count::<R>(a as usize);
                }
            }
        }
        state.escaped_mass = y.escaped.clone();
        state.dropped_mass = dropped;
        state
    }

    fn escaped(&self, y: &Self::State) -> Vec<R> {
        y.escaped.clone()
    }

    fn mass_vector(&self, y: &Self::State) -> Vec<R> {
        let mut m = vec![R::zero(); self.d];
        for (comp, &v) in &y.map {
            for (i, &a) in comp.components().iter().enumerate() {
                m[i] += v * count::<R>(a as usize);
            }
        }
        m
    }
}

fn _assert_send<R: Real>() {
    fn is_send<T: Send>() {}
    is_send::<Trajectory<R>>();
    is_send::<BTreeMap<Composition, R>>();
}
