//! Localization and scaling diagnostics on trajectories.
//!
//! The rescaled variables put a snapshot at time t onto `(rho, theta)` with
//! `rho = |alpha| (t+1)^{-1/(1-gamma)}` and `theta = alpha/|alpha|`; the
//! monomer mass `|alpha| n_alpha` binned there is the measure every
//! diagnostic works with. Direction distances use the 1-norm (localization
//! windows); the dispersion functional uses the Euclidean norm.

pub mod simplex;

use thiserror::Error;

use crate::lattice::LatticeState;
use crate::real::{count, lit, Real};
use crate::solver::Trajectory;
pub use simplex::{SimplexBinning, SimplexCell, SimplexError};

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error(transparent)]
    Simplex(#[from] SimplexError),
    #[error("state has zero total mass")]
    ZeroMass,
    #[error("the size window [1/M, M] holds no mass: the angular measure is undefined")]
    EmptyWindow,
    #[error("operation needs a positive time, got {0}")]
    TimeNotPositive(f64),
    #[error("need at least {needed} snapshots with t >= {t_min}, found {found}")]
    TooFewSnapshots {
        needed: usize,
        found: usize,
        t_min: f64,
    },
    #[error("window parameter invalid: {0}")]
    InvalidParameter(String),
    #[error("snapshot source failed: {0}")]
    Source(String),
}

/// Random-access stream of `(time, state)` snapshots; lets diagnostics work
/// off in-memory trajectories and on-disk runs alike without holding every
/// snapshot at once.
pub trait SnapshotSource<R> {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn time(&self, i: usize) -> R;
    fn get(&mut self, i: usize) -> Result<(R, LatticeState<R>), DiagnosticsError>;
}

impl<R: Real> SnapshotSource<R> for Trajectory<R> {
    fn len(&self) -> usize {
        self.snapshots.len()
    }
    fn time(&self, i: usize) -> R {
        self.snapshots[i].0
    }
    fn get(&mut self, i: usize) -> Result<(R, LatticeState<R>), DiagnosticsError> {
        let (t, s) = &self.snapshots[i];
        Ok((*t, s.clone()))
    }
}

/// Localization direction: the normalized initial mass vector.
pub fn theta0<R: Real>(initial: &LatticeState<R>) -> Result<Vec<R>, DiagnosticsError> {
    let m = initial.mass_vector();
    let total: R = m.iter().copied().sum();
    if !(total > R::zero()) {
        return Err(DiagnosticsError::ZeroMass);
    }
    Ok(m.into_iter().map(|x| x / total).collect())
}

/// Scaling factor of the self-similar variables at time `t`.
pub fn scaling_eps<R: Real>(t: R, gamma: R) -> R {
    (t + R::one()).powf(-(R::one() - gamma).recip())
}

/// Snapshot pushed forward to the rescaled `(rho, theta)` coordinates.
#[derive(Debug, Clone)]
pub struct RescaledSnapshot<R> {
    pub time: R,
    pub tau: R,
    pub eps: R,
    /// Log-spaced radial bin edges, length `bins + 1`.
    pub radial_edges: Vec<R>,
    pub binning: SimplexBinning<R>,
    /// Monomer mass per (radial bin, simplex cell), row-major by bin.
    pub mass: Vec<R>,
    pub total_mass: R,
    pub escaped: Vec<R>,
    pub dropped: Vec<R>,
}

impl<R: Real> RescaledSnapshot<R> {
    pub fn bins(&self) -> usize {
        self.radial_edges.len() - 1
    }

    fn bin_of(&self, rho: R) -> usize {
        let edges = &self.radial_edges;
        let b = edges.partition_point(|&e| e <= rho);
        b.saturating_sub(1).min(self.bins() - 1)
    }

    /// Mass per simplex cell restricted to `rho` in `[lo, hi]`, selecting
    /// radial bins by their geometric center.
    fn windowed_cell_mass(&self, lo: R, hi: R) -> Vec<R> {
        let cells = self.binning.len();
        let mut out = vec![R::zero(); cells];
        for b in 0..self.bins() {
            let center = (self.radial_edges[b] * self.radial_edges[b + 1]).sqrt();
            if center < lo || center > hi {
                continue;
            }
            for c in 0..cells {
                out[c] += self.mass[b * cells + c];
            }
        }
        out
    }
}

/// Radial bin density: 64 log-spaced bins per decade of observed rho.
const RADIAL_BINS_PER_DECADE: f64 = 64.0;

/// Pushes a snapshot into rescaled coordinates with automatic radial edges.
pub fn rescale<R: Real>(
    state: &LatticeState<R>,
    gamma: R,
    binning: &SimplexBinning<R>,
) -> Result<RescaledSnapshot<R>, DiagnosticsError> {
    let eps = scaling_eps(state.time, gamma);
    let mut rho_min = R::infinity();
    let mut rho_max = R::zero();
    for comp in state.concentrations.keys() {
        let rho = count::<R>(comp.size() as usize) * eps;
        rho_min = rho_min.min(rho);
        rho_max = rho_max.max(rho);
    }
    if state.concentrations.is_empty() {
        rho_min = eps;
        rho_max = eps;
    }
    let decades = (rho_max / rho_min).log10().max(R::zero());
    let bins = (lit::<R>(RADIAL_BINS_PER_DECADE) * decades)
        .ceil()
        .to_usize()
        .unwrap_or(1)
        .max(1);
    let log_lo = rho_min.log10();
    let log_hi = rho_max.log10().max(log_lo + lit::<R>(1e-9));
    let mut edges = Vec::with_capacity(bins + 1);
    for i in 0..=bins {
        let f = count::<R>(i) / count::<R>(bins);
        edges.push(lit::<R>(10.0).powf(log_lo + (log_hi - log_lo) * f));
    }
    // Clamp ends so min/max entries land inside despite rounding.
    edges[0] = edges[0].min(rho_min);
    let last = edges.len() - 1;
    edges[last] = edges[last].max(rho_max);
    rescale_with_edges(state, gamma, binning, &edges)
}

/// Pushes a snapshot into rescaled coordinates on caller-fixed radial edges.
/// Mass outside the edges is clamped into the boundary bins.
pub fn rescale_with_edges<R: Real>(
    state: &LatticeState<R>,
    gamma: R,
    binning: &SimplexBinning<R>,
    edges: &[R],
) -> Result<RescaledSnapshot<R>, DiagnosticsError> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(DiagnosticsError::InvalidParameter(
            "radial edges must be strictly increasing with at least one bin".into(),
        ));
    }
    let eps = scaling_eps(state.time, gamma);
    let cells = binning.len();
    let bins = edges.len() - 1;
    let mut snapshot = RescaledSnapshot {
        time: state.time,
        tau: (state.time + R::one()).ln(),
        eps,
        radial_edges: edges.to_vec(),
        binning: binning.clone(),
        mass: vec![R::zero(); bins * cells],
        total_mass: R::zero(),
        escaped: state.escaped_mass.clone(),
        dropped: state.dropped_mass.clone(),
    };
    for (comp, &n) in &state.concentrations {
        let rho = count::<R>(comp.size() as usize) * eps;
        let dir = comp.direction::<R>();
        let cell = binning.cell_of(&dir)?;
        let bin = snapshot.bin_of(rho);
        let mass = count::<R>(comp.size() as usize) * n;
        snapshot.mass[bin * cells + cell] += mass;
        snapshot.total_mass += mass;
    }
    Ok(snapshot)
}

/// Size-windowed angular probability measure on the simplex cells.
#[derive(Debug, Clone)]
pub struct AngularMeasure<R> {
    pub binning: SimplexBinning<R>,
    pub weights: Vec<R>,
    /// Size-window parameter: the window is `rho` in `[1/M, M]`.
    pub m_window: R,
    pub tau: R,
    pub window_mass: R,
}

/// Restricts the rescaled mass to `rho` in `[1/M, M]` and normalizes per
/// cell. An empty window is a distinguished error, not silent zeros.
pub fn angular_measure<R: Real>(
    snapshot: &RescaledSnapshot<R>,
    m_window: R,
) -> Result<AngularMeasure<R>, DiagnosticsError> {
    if !(m_window > R::one()) {
        return Err(DiagnosticsError::InvalidParameter(
            "window parameter M must exceed 1".into(),
        ));
    }
    let mut weights = snapshot.windowed_cell_mass(m_window.recip(), m_window);
    let total: R = weights.iter().copied().sum();
    if !(total > R::zero()) {
        return Err(DiagnosticsError::EmptyWindow);
    }
    for w in weights.iter_mut() {
        *w /= total;
    }
    Ok(AngularMeasure {
        binning: snapshot.binning.clone(),
        weights,
        m_window,
        tau: snapshot.tau,
        window_mass: total,
    })
}

/// Window policy: smallest `M` on a 1.25-geometric grid whose window holds
/// at least `mass_fraction` of the snapshot mass, capped at `m_cap`.
/// Returns the chosen `M` and the fraction it captures.
pub fn choose_window<R: Real>(
    snapshot: &RescaledSnapshot<R>,
    mass_fraction: R,
    m_cap: R,
) -> (R, R) {
    let total = snapshot.total_mass;
    if !(total > R::zero()) {
        return (m_cap, R::zero());
    }
    let step = lit::<R>(1.25);
    let mut m = step;
    loop {
        let captured: R = snapshot
            .windowed_cell_mass(m.recip(), m)
            .iter()
            .copied()
            .sum();
        if captured >= mass_fraction * total || m >= m_cap {
            return (m.min(m_cap), captured / total);
        }
        m = m * step;
    }
}

/// Dispersion of an angular measure: the double integral of the squared
/// Euclidean distance between directions.
pub fn dispersion<R: Real>(measure: &AngularMeasure<R>) -> R {
    let cells = measure.binning.cells();
    let mut acc = R::zero();
    for (i, wi) in measure.weights.iter().enumerate() {
        if *wi == R::zero() {
            continue;
        }
        for (j, wj) in measure.weights.iter().enumerate() {
            if *wj == R::zero() {
                continue;
            }
            let mut dist2 = R::zero();
            for (a, b) in cells[i].center.iter().zip(cells[j].center.iter()) {
                let diff = *a - *b;
                dist2 += diff * diff;
            }
            acc += *wi * *wj * dist2;
        }
    }
    acc
}

/// Fraction of the conserved mass inside the localization window
/// `{delta t^{1/(1-gamma)} <= |alpha| <= delta^{-1} t^{1/(1-gamma)}}`
/// intersected with directions within 1-norm `delta` of `theta0`.
pub fn localized_mass_fraction<R: Real>(
    state: &LatticeState<R>,
    gamma: R,
    delta: R,
    theta0: &[R],
) -> Result<R, DiagnosticsError> {
    let t = state.time;
    if !(t > R::zero()) {
        return Err(DiagnosticsError::TimeNotPositive(
            t.to_f64().unwrap_or(f64::NAN),
        ));
    }
    if !(delta > R::zero()) || !(delta < R::one()) {
        return Err(DiagnosticsError::InvalidParameter(
            "delta must lie in (0, 1)".into(),
        ));
    }
    let m_total: R = state
        .accounted_mass_vector()
        .iter()
        .copied()
        .sum();
    if !(m_total > R::zero()) {
        return Err(DiagnosticsError::ZeroMass);
    }
    let r_scale = t.powf((R::one() - gamma).recip());
    let lo = delta * r_scale;
    let hi = r_scale / delta;
    let mut captured = R::zero();
    for (comp, &n) in &state.concentrations {
        let size = count::<R>(comp.size() as usize);
        if size < lo || size > hi {
            continue;
        }
        let dir = comp.direction::<R>();
        let mut dist = R::zero();
        for (a, b) in dir.iter().zip(theta0.iter()) {
            dist += (*a - *b).abs();
        }
        if dist <= delta {
            captured += size * n;
        }
    }
    Ok(captured / m_total)
}

/// One point of the empirical localization schedule.
#[derive(Debug, Clone, Copy)]
pub struct DeltaPoint<R> {
    pub time: R,
    pub delta: R,
    /// False when even delta = 1 - eps missed the target (reported as 1).
    pub reached: bool,
}

#[derive(Debug, Clone)]
pub struct DeltaSchedule<R> {
    pub target: R,
    pub points: Vec<DeltaPoint<R>>,
    /// Whether the schedule is non-increasing over its last half.
    pub non_increasing_last_half: bool,
}

/// Smallest delta on `[1e-3, 1)` reaching the target fraction, per snapshot
/// with t >= 1, by bisection (the fraction is monotone in delta).
pub fn delta_schedule<R: Real>(
    source: &mut dyn SnapshotSource<R>,
    gamma: R,
    theta0: &[R],
    target: R,
) -> Result<DeltaSchedule<R>, DiagnosticsError> {
    if !(target >= R::zero()) || !(target < R::one()) {
        return Err(DiagnosticsError::InvalidParameter(
            "target fraction must lie in [0, 1)".into(),
        ));
    }
    let floor = lit::<R>(1e-3);
    let ceiling = R::one() - lit::<R>(1e-12);
    let mut points = Vec::new();
    for i in 0..source.len() {
        if source.time(i) < R::one() {
            continue;
        }
        let (t, state) = source.get(i)?;
        let frac_at = |d: R| localized_mass_fraction(&state, gamma, d, theta0);
        if frac_at(floor)? >= target {
            points.push(DeltaPoint {
                time: t,
                delta: floor,
                reached: true,
            });
            continue;
        }
        if frac_at(ceiling)? < target {
            points.push(DeltaPoint {
                time: t,
                delta: R::one(),
                reached: false,
            });
            continue;
        }
        let mut lo = floor;
        let mut hi = ceiling;
        for _ in 0..50 {
            let mid = (lo + hi) / (R::one() + R::one());
            if frac_at(mid)? >= target {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        points.push(DeltaPoint {
            time: t,
            delta: hi,
            reached: true,
        });
    }
    if points.len() < 3 {
        return Err(DiagnosticsError::TooFewSnapshots {
            needed: 3,
            found: points.len(),
            t_min: 1.0,
        });
    }
    let half = points.len() / 2;
    let jitter = lit::<R>(1e-9);
    let non_increasing = points[half..]
        .windows(2)
        .all(|w| w[1].delta <= w[0].delta + jitter);
    Ok(DeltaSchedule {
        target,
        points,
        non_increasing_last_half: non_increasing,
    })
}

/// Best cap of 1-norm radius `eps/2` around a cell center: returns the
/// maximizing cell index and the weight it captures (a lower bound for the
/// optimal cap of diameter `eps`).
pub fn best_cap<R: Real>(
    measure: &AngularMeasure<R>,
    eps: R,
) -> Result<(usize, R), DiagnosticsError> {
    if !(eps > R::zero()) {
        return Err(DiagnosticsError::InvalidParameter(
            "cap size must be positive".into(),
        ));
    }
    let cells = measure.binning.cells();
    let radius = eps / (R::one() + R::one());
    let mut best = (0usize, R::neg_infinity());
    for (c, candidate) in cells.iter().enumerate() {
        let mut captured = R::zero();
        for (i, w) in measure.weights.iter().enumerate() {
            let mut dist = R::zero();
            for (a, b) in cells[i].center.iter().zip(candidate.center.iter()) {
                dist += (*a - *b).abs();
            }
            if dist <= radius {
                captured += *w;
            }
        }
        if captured > best.1 {
            best = (c, captured);
        }
    }
    Ok(best)
}

/// Least-squares fit of `log M_k` against `log t` over a time window.
#[derive(Debug, Clone)]
pub struct MomentFit<R> {
    pub k: R,
    pub slope: R,
    pub intercept: R,
    /// Largest `M_k(t) t^{-(k-1)/(1-gamma)}` over the window.
    pub max_ratio: R,
    pub points: Vec<(R, R)>,
}

pub fn moment_scaling_fit<R: Real>(
    source: &mut dyn SnapshotSource<R>,
    k: R,
    gamma: R,
    window: (R, R),
) -> Result<MomentFit<R>, DiagnosticsError> {
    let (t_lo, t_hi) = window;
    if !(t_lo >= R::one()) || !(t_hi > t_lo) {
        return Err(DiagnosticsError::InvalidParameter(
            "fit window must satisfy 1 <= t_lo < t_hi".into(),
        ));
    }
    let mut points = Vec::new();
    let mut max_ratio = R::zero();
    let exponent = (k - R::one()) / (R::one() - gamma);
    for i in 0..source.len() {
        let t = source.time(i);
        if t < t_lo || t > t_hi {
            continue;
        }
        let (t, state) = source.get(i)?;
        let mk = state.moment(k).value;
        if !(mk > R::zero()) {
            continue;
        }
        points.push((t, mk));
        max_ratio = max_ratio.max(mk * t.powf(-exponent));
    }
    if points.len() < 5 {
        return Err(DiagnosticsError::TooFewSnapshots {
            needed: 5,
            found: points.len(),
            t_min: t_lo.to_f64().unwrap_or(1.0),
        });
    }
    let n = count::<R>(points.len());
    let xs: Vec<R> = points.iter().map(|&(t, _)| t.ln()).collect();
    let ys: Vec<R> = points.iter().map(|&(_, m)| m.ln()).collect();
    let x_mean = xs.iter().copied().sum::<R>() / n;
    let y_mean = ys.iter().copied().sum::<R>() / n;
    let mut sxx = R::zero();
    let mut sxy = R::zero();
    for (x, y) in xs.iter().zip(ys.iter()) {
        sxx += (*x - x_mean) * (*x - x_mean);
        sxy += (*x - x_mean) * (*y - y_mean);
    }
    if !(sxx > R::zero()) {
        return Err(DiagnosticsError::InvalidParameter(
            "degenerate fit window".into(),
        ));
    }
    let slope = sxy / sxx;
    Ok(MomentFit {
        k,
        slope,
        intercept: y_mean - slope * x_mean,
        max_ratio,
        points,
    })
}

/// Dispersion series with its cumulative integral in `tau = log(1+t)`.
#[derive(Debug, Clone)]
pub struct DispersionPoint<R> {
    pub time: R,
    pub tau: R,
    pub m_window: R,
    pub window_fraction: R,
    pub dispersion: R,
    pub defined: bool,
}

#[derive(Debug, Clone)]
pub struct DispersionReport<R> {
    pub points: Vec<DispersionPoint<R>>,
    /// Trapezoidal cumulative integral of the dispersion in tau, aligned
    /// with the defined points.
    pub cumulative: Vec<R>,
    pub total: R,
    /// True when the last quarter of the tau range adds < 5% of the total.
    pub plateau: bool,
}

pub fn dispersion_decay_report<R: Real>(
    source: &mut dyn SnapshotSource<R>,
    gamma: R,
    binning: &SimplexBinning<R>,
    window_mass_fraction: R,
    m_cap: R,
) -> Result<DispersionReport<R>, DiagnosticsError> {
    let mut points: Vec<DispersionPoint<R>> = Vec::new();
    for i in 0..source.len() {
        if source.time(i) < R::one() {
            continue;
        }
        let (t, state) = source.get(i)?;
        let snapshot = rescale(&state, gamma, binning)?;
        let (m, fraction) = choose_window(&snapshot, window_mass_fraction, m_cap);
        match angular_measure(&snapshot, m) {
            Ok(measure) => points.push(DispersionPoint {
                time: t,
                tau: snapshot.tau,
                m_window: m,
                window_fraction: fraction,
                dispersion: dispersion(&measure),
                defined: true,
            }),
            Err(DiagnosticsError::EmptyWindow) => points.push(DispersionPoint {
                time: t,
                tau: snapshot.tau,
                m_window: m,
                window_fraction: fraction,
                dispersion: R::zero(),
                defined: false,
            }),
            Err(e) => return Err(e),
        }
    }
    let defined: Vec<&DispersionPoint<R>> = points.iter().filter(|p| p.defined).collect();
    if defined.len() < 2 {
        return Err(DiagnosticsError::TooFewSnapshots {
            needed: 2,
            found: defined.len(),
            t_min: 1.0,
        });
    }
    let mut cumulative = vec![R::zero(); defined.len()];
    for i in 1..defined.len() {
        let dt = defined[i].tau - defined[i - 1].tau;
        cumulative[i] = cumulative[i - 1]
            + (defined[i].dispersion + defined[i - 1].dispersion) * dt
                / (R::one() + R::one());
    }
    let total = *cumulative.last().unwrap();
    let tau_lo = defined[0].tau;
    let tau_hi = defined[defined.len() - 1].tau;
    let quarter_start = tau_hi - (tau_hi - tau_lo) / lit::<R>(4.0);
    let mut at_quarter = cumulative[0];
    for (p, c) in defined.iter().zip(cumulative.iter()) {
        if p.tau <= quarter_start {
            at_quarter = *c;
        }
    }
    let plateau = total > R::zero() && (total - at_quarter) < lit::<R>(0.05) * total;
    Ok(DispersionReport {
        points,
        cumulative,
        total,
        plateau,
    })
}

/// Mass-weighted mean direction of a state.
pub fn mean_direction<R: Real>(state: &LatticeState<R>) -> Result<Vec<R>, DiagnosticsError> {
    let total = state.total_mass();
    if !(total > R::zero()) {
        return Err(DiagnosticsError::ZeroMass);
    }
    let d = state.d();
    let mut mean = vec![R::zero(); d];
    for (comp, &n) in &state.concentrations {
        let size = count::<R>(comp.size() as usize);
        let dir = comp.direction::<R>();
        for i in 0..d {
            mean[i] += dir[i] * size * n;
        }
    }
    for v in mean.iter_mut() {
        *v /= total;
    }
    Ok(mean)
}

/// In-memory adapter so borrowed snapshot slices can feed diagnostics.
pub struct SliceSource<'a, R> {
    pub snapshots: &'a [(R, LatticeState<R>)],
}

impl<R: Real> SnapshotSource<R> for SliceSource<'_, R> {
    fn len(&self) -> usize {
        self.snapshots.len()
    }
    fn time(&self, i: usize) -> R {
        self.snapshots[i].0
    }
    fn get(&mut self, i: usize) -> Result<(R, LatticeState<R>), DiagnosticsError> {
        let (t, s) = &self.snapshots[i];
        Ok((*t, s.clone()))
    }
}
