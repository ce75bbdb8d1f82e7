//! Stochastic particle oracle for the deterministic solver.
//!
//! Simulates the finite coalescence process whose mean-field limit is the
//! coagulation system: each unordered particle pair (i, j) merges at rate
//! `K(x_i, x_j) / V`. Direct Gillespie stepping with incrementally
//! maintained per-particle rate sums; identical seeds reproduce identical
//! event sequences bit-exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use smallvec::SmallVec;
use thiserror::Error;

use crate::kernel::KernelSpec;
use crate::lattice::{Composition, LatticeState, UNTRUNCATED};
use crate::real::{count, lit, Real};

#[derive(Debug, Error)]
pub enum SsaError {
    #[error("stochastic run needs at least {needed} particles, got {got}")]
    TooFewParticles { needed: usize, got: usize },
    #[error("volume must be positive and finite")]
    InvalidVolume,
    #[error("record times must be finite, nonnegative, and sorted")]
    InvalidRecordTimes,
    #[error("ensemble statistics need at least two runs at a common time")]
    TooFewRuns,
    #[error("ensemble runs disagree on record times or dimension")]
    MismatchedRuns,
}

/// The finite particle system of one stochastic run.
#[derive(Debug, Clone)]
pub struct ParticleSystem<R> {
    pub particles: Vec<Composition>,
    pub volume: R,
    pub time: R,
    pub rng_seed: u64,
}

/// Outcome of one stochastic run: empirical states at the requested times
/// plus bookkeeping for the event-count identity.
#[derive(Debug, Clone)]
pub struct SsaRun<R> {
    pub seed: u64,
    pub states: Vec<LatticeState<R>>,
    pub events: u64,
    pub initial_particles: usize,
    pub final_particles: usize,
    /// Set when the run contracted to a single particle before `t_end`.
    pub extinct_at: Option<R>,
    /// Particle configuration when the run stopped.
    pub final_system: ParticleSystem<R>,
}

/// Number of events between exact rate-table rebuilds; rebuilding clears
/// accumulated floating-point drift in the incremental sums.
const REBUILD_INTERVAL: u64 = 4096;

/// Runs the direct stochastic simulation from integer particle counts.
///
/// Empirical concentrations `count / V` are recorded at each of the sorted
/// `record_times`; after extinction to a single particle the state is
/// constant, so later record times repeat it.
pub fn ssa_run<R: Real>(
    initial_counts: &[(Composition, u64)],
    volume: R,
    kernel: &KernelSpec<R>,
    seed: u64,
    t_end: R,
    record_times: &[R],
) -> Result<SsaRun<R>, SsaError> {
    if !(volume > R::zero()) || !volume.is_finite() {
        return Err(SsaError::InvalidVolume);
    }
    if record_times.windows(2).any(|w| w[1] < w[0])
        || record_times
            .iter()
            .any(|t| !t.is_finite() || *t < R::zero() || *t > t_end)
    {
        return Err(SsaError::InvalidRecordTimes);
    }
    let mut particles: Vec<Composition> = Vec::new();
    for (comp, count) in initial_counts {
        for _ in 0..*count {
            particles.push(comp.clone());
        }
    }
    let n0 = particles.len();
    if n0 < 2 {
        return Err(SsaError::TooFewParticles { needed: 2, got: n0 });
    }
    let d = particles[0].dim();

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut points: Vec<SmallVec<[R; 4]>> = particles.iter().map(|p| p.to_point()).collect();

    // rate_sum[i] = sum_j != i K(x_i, x_j) / V.
    let inv_v = volume.recip();
    let mut rate_sum: Vec<R> = vec![R::zero(); particles.len()];
    rebuild_rates(kernel, &points, inv_v, &mut rate_sum);
    let mut total_rate: R = half_sum(&rate_sum);

    let mut time = R::zero();
    let mut events = 0u64;
    let mut extinct_at = None;
    let mut states: Vec<LatticeState<R>> = Vec::new();
    let mut next_record = 0usize;

    loop {
        let n = particles.len();
        if n <= 1 {
            extinct_at = Some(time);
            break;
        }
        if events % REBUILD_INTERVAL == 0 && events > 0 {
            rebuild_rates(kernel, &points, inv_v, &mut rate_sum);
            total_rate = half_sum(&rate_sum);
        }
        if !(total_rate > R::zero()) {
            break;
        }
        // Exponential waiting time via inverse transform on a (0,1] draw.
        let u: f64 = rng.random::<f64>();
        let wait = -lit::<R>(1.0 - u).max(R::min_positive_value()).ln() / total_rate;
        let t_next = time + wait;

        while next_record < record_times.len() && record_times[next_record] <= t_next.min(t_end) {
            states.push(empirical_state(
                &particles,
                volume,
                d,
                record_times[next_record],
            ));
            next_record += 1;
        }
        if t_next > t_end {
            time = t_end;
            break;
        }
        time = t_next;

        // First index proportional to its rate sum.
        let mut target = lit::<R>(rng.random::<f64>()) * total_rate * (R::one() + R::one());
        let mut i = 0usize;
        for (idx, &r) in rate_sum.iter().enumerate() {
            if target < r || idx == n - 1 {
                i = idx;
                break;
            }
            target -= r;
        }
        // Partner proportional to K(x_i, x_j).
        let mut target = lit::<R>(rng.random::<f64>()) * rate_sum[i] * volume;
        let mut j = usize::MAX;
        for idx in 0..n {
            if idx == i {
                continue;
            }
            let k = kernel.eval_raw(&points[i], &points[idx]);
            if target < k || idx == n - 1 || (idx == n - 2 && i == n - 1) {
                j = idx;
                break;
            }
            target -= k;
        }
        if j == usize::MAX {
            j = if i == n - 1 { n - 2 } else { n - 1 };
        }

        let (lo, hi) = if i < j { (i, j) } else { (j, i) };
        let merged = particles[lo].merged(&particles[hi]);
        let merged_point = merged.to_point();

        // Update rate sums: remove lo and hi, append the merged particle.
        let k_lo_hi = kernel.eval_raw(&points[lo], &points[hi]) * inv_v;
        let mut merged_rate = R::zero();
        for idx in 0..n {
            if idx == lo || idx == hi {
                continue;
            }
            let k_lo = kernel.eval_raw(&points[idx], &points[lo]) * inv_v;
            let k_hi = kernel.eval_raw(&points[idx], &points[hi]) * inv_v;
            let k_new = kernel.eval_raw(&points[idx], &merged_point) * inv_v;
            rate_sum[idx] += k_new - k_lo - k_hi;
            merged_rate += k_new;
            total_rate += k_new - k_lo - k_hi;
        }
        total_rate -= k_lo_hi;

        // swap_remove the higher index first so the lower stays valid.
        particles.swap_remove(hi);
        points.swap_remove(hi);
        rate_sum.swap_remove(hi);
        particles.swap_remove(lo);
        points.swap_remove(lo);
        rate_sum.swap_remove(lo);
        particles.push(merged);
        points.push(merged_point);
        rate_sum.push(merged_rate);
        events += 1;
    }

    // Remaining record times see the frozen final configuration.
    while next_record < record_times.len() {
        states.push(empirical_state(
            &particles,
            volume,
            d,
            record_times[next_record],
        ));
        next_record += 1;
    }

    let final_particles = particles.len();
    Ok(SsaRun {
        seed,
        states,
        events,
        initial_particles: n0,
        final_particles,
        extinct_at,
        final_system: ParticleSystem {
            particles,
            volume,
            time,
            rng_seed: seed,
        },
    })
}

fn rebuild_rates<R: Real>(
    kernel: &KernelSpec<R>,
    points: &[SmallVec<[R; 4]>],
    inv_v: R,
    rate_sum: &mut Vec<R>,
) {
    let n = points.len();
    rate_sum.clear();
    rate_sum.resize(n, R::zero());
    for i in 0..n {
        for j in (i + 1)..n {
            let k = kernel.eval_raw(&points[i], &points[j]) * inv_v;
            rate_sum[i] += k;
            rate_sum[j] += k;
        }
    }
}

/// Total event rate: each unordered pair counted once.
fn half_sum<R: Real>(rate_sum: &[R]) -> R {
    let two = R::one() + R::one();
    rate_sum.iter().copied().sum::<R>() / two
}

fn empirical_state<R: Real>(
    particles: &[Composition],
    volume: R,
    d: usize,
    time: R,
) -> LatticeState<R> {
    let mut state = LatticeState::new(d, UNTRUNCATED);
    state.time = time;
    let inv_v = volume.recip();
    for p in particles {
        *state
            .concentrations
            .entry(p.clone())
            .or_insert_with(R::zero) += inv_v;
    }
    state
}

/// Componentwise mean and standard error across an ensemble of empirical
/// states recorded at a common time.
#[derive(Debug, Clone)]
pub struct EnsembleStats<R> {
    pub time: R,
    pub mean: LatticeState<R>,
    pub stderr: std::collections::BTreeMap<Composition, R>,
    pub runs: usize,
}

pub fn ensemble_stats<R: Real>(states: &[&LatticeState<R>]) -> Result<EnsembleStats<R>, SsaError> {
    if states.len() < 2 {
        return Err(SsaError::TooFewRuns);
    }
    let d = states[0].d();
    let time = states[0].time;
    for s in states {
        if s.d() != d || s.time != time {
            return Err(SsaError::MismatchedRuns);
        }
    }
    let n = count::<R>(states.len());
    let mut mean = LatticeState::new(d, UNTRUNCATED);
    mean.time = time;
    let mut support: std::collections::BTreeSet<Composition> = std::collections::BTreeSet::new();
    for s in states {
        support.extend(s.concentrations.keys().cloned());
    }
    let mut stderr = std::collections::BTreeMap::new();
    for comp in support {
        let values: Vec<R> = states.iter().map(|s| s.get(&comp)).collect();
        let m: R = values.iter().copied().sum::<R>() / n;
        let var: R = values.iter().map(|&v| (v - m) * (v - m)).sum::<R>() / (n - R::one());
        if m > R::zero() {
            mean.concentrations.insert(comp.clone(), m);
        }
        stderr.insert(comp, (var / n).sqrt());
    }
    Ok(EnsembleStats {
        time,
        mean,
        stderr,
        runs: states.len(),
    })
}
