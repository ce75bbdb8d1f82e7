//! Ray-supported self-similar profiles: the explicit attractor for
//! ray-constant kernels, a weak-form residual check, empirical profile
//! extraction from trajectories, and the scaling-family invariance test.
//!
//! Profiles store the radial monomer-number density g on a rho grid; the
//! full measure is `sqrt(d) g(rho) / rho^{d-1}` times a unit point mass in
//! the direction `theta0`, so `int rho g(rho) drho` is the conserved mass.

use thiserror::Error;

use crate::diagnostics::{rescale_with_edges, DiagnosticsError, SimplexBinning, SnapshotSource};
use crate::kernel::{KernelSpec, QForm};
use crate::real::{count, lit, Real};

#[derive(Debug, Error)]
pub enum SelfSimilarError {
    #[error("Q(theta0) must be positive")]
    NonpositiveQ,
    #[error("profile grid must be strictly increasing with at least two points")]
    InvalidGrid,
    #[error("grid too coarse for the test battery: {0}")]
    GridTooCoarse(String),
    #[error("requested times fall outside the trajectory span")]
    OutOfSpan,
    #[error("mass and dimension parameters must be positive")]
    InvalidParameter,
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error(transparent)]
    Simplex(#[from] crate::diagnostics::SimplexError),
}

/// Radial profile supported on the ray through `theta0`.
#[derive(Debug, Clone)]
pub struct RadialProfile<R> {
    /// Strictly increasing rho values.
    pub grid: Vec<R>,
    /// Monomer-number density per unit rho at the grid points.
    pub values: Vec<R>,
    pub theta0: Vec<R>,
    pub m0: R,
    pub d: usize,
    pub kernel_digest: Option<String>,
}

impl<R: Real> RadialProfile<R> {
    fn check_grid(grid: &[R]) -> Result<(), SelfSimilarError> {
        if grid.len() < 2 || grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(SelfSimilarError::InvalidGrid);
        }
        if !(grid[0] >= R::zero()) {
            return Err(SelfSimilarError::InvalidGrid);
        }
        Ok(())
    }

    /// Trapezoidal `int rho g drho`: the mass carried by the profile.
    pub fn quadrature_mass(&self) -> R {
        let mut acc = R::zero();
        for i in 1..self.grid.len() {
            let h = self.grid[i] - self.grid[i - 1];
            let f0 = self.grid[i - 1] * self.values[i - 1];
            let f1 = self.grid[i] * self.values[i];
            acc += h * (f0 + f1) / (R::one() + R::one());
        }
        acc
    }
}

/// Default grid for explicit profiles: uniform, spanning enough e-foldings
/// of the exponential decay that the truncated tail is negligible.
pub fn default_profile_grid<R: Real>(q_theta0: R, m0: R, points: usize) -> Vec<R> {
    let scale = q_theta0 * m0 / (R::one() + R::one());
    let span = lit::<R>(24.0) * scale;
    let n = points.max(2);
    (0..n)
        .map(|i| span * count::<R>(i) / count::<R>(n - 1))
        .collect()
}

/// The explicit attractor profile for ray-constant kernels:
/// `g(rho) = 4 / (Q(theta0)^2 m0) * exp(-2 rho / (Q(theta0) m0))`,
/// whose mass integral is exactly `m0`.
pub fn explicit_profile<R: Real>(
    theta0: &[R],
    q: &QForm<R>,
    m0: R,
    d: usize,
    grid: &[R],
) -> Result<RadialProfile<R>, SelfSimilarError> {
    if !(m0 > R::zero()) || d == 0 || theta0.len() != d {
        return Err(SelfSimilarError::InvalidParameter);
    }
    RadialProfile::<R>::check_grid(grid)?;
    let q0 = q.eval(theta0);
    if !(q0 > R::zero()) {
        return Err(SelfSimilarError::NonpositiveQ);
    }
    let four = lit::<R>(4.0);
    let two = lit::<R>(2.0);
    let amplitude = four / (q0 * q0 * m0);
    let rate = two / (q0 * m0);
    let values = grid.iter().map(|&rho| amplitude * (-rate * rho).exp()).collect();
    Ok(RadialProfile {
        grid: grid.to_vec(),
        values,
        theta0: theta0.to_vec(),
        m0,
        d,
        kernel_digest: None,
    })
}

/// Exponential decay rate of the explicit profile.
pub fn expected_decay_rate<R: Real>(q_theta0: R, m0: R) -> R {
    lit::<R>(2.0) / (q_theta0 * m0)
}

/// Battery of compactly supported C^1 test functions
/// `psi(rho) = rho * (1 - u^2)^3`, `u = (rho - a)/w`, `w = a/2`,
/// with centers log-spaced across the profile support.
#[derive(Debug, Clone)]
pub struct TestBattery<R> {
    pub centers: Vec<R>,
}

impl<R: Real> TestBattery<R> {
    pub fn log_spaced(grid: &[R], count_elems: usize) -> Self {
        let hi = grid[grid.len() - 1] / lit::<R>(2.0);
        let max_spacing = grid
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(R::zero(), R::max);
        // The smallest bump still needs enough grid points across it.
        let lo = (hi / lit::<R>(60.0))
            .max(lit::<R>(10.0) * max_spacing)
            .min(hi);
        let n = count_elems.max(1);
        let centers = (0..n)
            .map(|i| {
                let f = count::<R>(i) / count::<R>(n.max(2) - 1);
                (lo.ln() + (hi.ln() - lo.ln()) * f).exp()
            })
            .collect();
        Self { centers }
    }
}

fn bump<R: Real>(u: R) -> R {
    if u.abs() < R::one() {
        let s = R::one() - u * u;
        s * s * s
    } else {
        R::zero()
    }
}

fn bump_prime<R: Real>(u: R) -> R {
    if u.abs() < R::one() {
        let s = R::one() - u * u;
        -lit::<R>(6.0) * u * s * s
    } else {
        R::zero()
    }
}

/// Per-element residuals of the weak self-similar identity.
#[derive(Debug, Clone)]
pub struct ResidualReport<R> {
    pub per_element: Vec<R>,
    pub max_abs: R,
}

/// Evaluates the weak self-similar residual of a ray-supported profile by
/// trapezoidal quadrature: the symmetric collision term with the kernel
/// restricted to the ray plus the dilation drift with prefactor
/// `drift_scale / (1 - gamma)`. The true identity has `drift_scale = 1`;
/// other values deliberately defect the operator for detection tests.
pub fn residual_weak_selfsimilar<R: Real>(
    profile: &RadialProfile<R>,
    kernel: &KernelSpec<R>,
    gamma: R,
    battery: &TestBattery<R>,
    drift_scale: R,
) -> Result<ResidualReport<R>, SelfSimilarError> {
    RadialProfile::<R>::check_grid(&profile.grid)?;
    let grid = &profile.grid;
    let g = &profile.values;
    let n = grid.len();

    // Bandwidth check: each bump must see enough grid points.
    for &a in &battery.centers {
        let w = a / lit::<R>(2.0);
        let inside = grid
            .iter()
            .filter(|&&rho| rho >= a - w && rho <= a + w)
            .count();
        if inside < 8 {
            return Err(SelfSimilarError::GridTooCoarse(format!(
                "battery element centered at {a} spans {inside} grid points, need >= 8"
            )));
        }
    }

    // Trapezoid weights for the (possibly non-uniform) grid.
    let two = lit::<R>(2.0);
    let mut weights = vec![R::zero(); n];
    for i in 0..n {
        let left = if i > 0 { grid[i] - grid[i - 1] } else { R::zero() };
        let right = if i + 1 < n { grid[i + 1] - grid[i] } else { R::zero() };
        weights[i] = (left + right) / two;
    }

    // Kernel along the ray; points reused across pairs.
    let points: Vec<Vec<R>> = grid
        .iter()
        .map(|&rho| profile.theta0.iter().map(|&t| t * rho).collect())
        .collect();

    let half = R::one() / two;
    let drift_pref = drift_scale / (R::one() - gamma);
    let mut per_element = Vec::with_capacity(battery.centers.len());
    let mut max_abs = R::zero();
    for &a in &battery.centers {
        let w = a / two;
        let psi = |rho: R| rho * bump((rho - a) / w);
        let psi_prime = |rho: R| {
            let u = (rho - a) / w;
            bump(u) + rho * bump_prime(u) / w
        };
        let mut collision = R::zero();
        for i in 0..n {
            // A rho = 0 endpoint contributes nothing: psi(0) = 0 and
            // psi(0 + r) = psi(r), so the pair difference vanishes there
            // (and the kernel is undefined at the origin anyway).
            if grid[i] == R::zero() {
                continue;
            }
            let gi = weights[i] * g[i];
            if gi == R::zero() {
                continue;
            }
            for j in i..n {
                let gj = weights[j] * g[j];
                if gj == R::zero() {
                    continue;
                }
                let pair = psi(grid[i] + grid[j]) - psi(grid[i]) - psi(grid[j]);
                if pair == R::zero() {
                    continue;
                }
                let k = kernel.eval_raw(&points[i], &points[j]);
                let contribution = k * gi * gj * pair;
                collision += if i == j { half * contribution } else { contribution };
            }
        }
        let mut drift = R::zero();
        for i in 0..n {
            drift += weights[i] * g[i] * (psi(grid[i]) - grid[i] * psi_prime(grid[i]));
        }
        let residual = collision + drift_pref * drift;
        max_abs = max_abs.max(residual.abs());
        per_element.push(residual);
    }
    Ok(ResidualReport {
        per_element,
        max_abs,
    })
}

/// Empirical radial profile from one late snapshot.
#[derive(Debug, Clone)]
pub struct ExtractedProfile<R> {
    pub time: R,
    pub profile: RadialProfile<R>,
    /// Bin edges of the extraction (profile grid is the midpoints).
    pub edges: Vec<R>,
    /// Monomer mass captured per bin.
    pub bin_mass: Vec<R>,
    /// Window mass over the conserved total.
    pub window_mass_fraction: R,
    /// Set when the direction window captured less than half the mass.
    pub flagged_low_mass: bool,
}

/// Extracts radial profiles at every snapshot with `t >= t_min`, keeping
/// clusters whose direction lies within 1-norm `delta` of the localization
/// direction and binning their rescaled monomer mass linearly in rho.
pub fn extract_profile<R: Real>(
    source: &mut dyn SnapshotSource<R>,
    gamma: R,
    delta: R,
    t_min: R,
    bins: usize,
) -> Result<Vec<ExtractedProfile<R>>, SelfSimilarError> {
    if source.is_empty() {
        return Err(SelfSimilarError::OutOfSpan);
    }
    let (_, first) = source.get(0)?;
    let theta0 = direction_of_accounted_mass(&first)?;
    let d = first.d();
    let bins = bins.max(4);
    let mut out = Vec::new();
    for idx in 0..source.len() {
        if source.time(idx) < t_min {
            continue;
        }
        let (t, state) = source.get(idx)?;
        let eps = crate::diagnostics::scaling_eps(t, gamma);
        let m_total: R = state.accounted_mass_vector().iter().copied().sum();
        if !(m_total > R::zero()) {
            continue;
        }
        let mut rho_max = R::zero();
        for comp in state.concentrations.keys() {
            rho_max = rho_max.max(count::<R>(comp.size() as usize) * eps);
        }
        if !(rho_max > R::zero()) {
            continue;
        }
        let edges: Vec<R> = (0..=bins)
            .map(|i| rho_max * count::<R>(i) / count::<R>(bins))
            .collect();
        let mut bin_mass = vec![R::zero(); bins];
        let mut window_mass = R::zero();
        for (comp, &n) in &state.concentrations {
            let dir = comp.direction::<R>();
            let mut dist = R::zero();
            for (a, b) in dir.iter().zip(theta0.iter()) {
                dist += (*a - *b).abs();
            }
            if dist > delta {
                continue;
            }
            let rho = count::<R>(comp.size() as usize) * eps;
            let mass = count::<R>(comp.size() as usize) * n;
            let mut b = edges.partition_point(|&e| e <= rho);
            b = b.saturating_sub(1).min(bins - 1);
            bin_mass[b] += mass;
            window_mass += mass;
        }
        let mut grid = Vec::with_capacity(bins);
        let mut values = Vec::with_capacity(bins);
        for b in 0..bins {
            let mid = (edges[b] + edges[b + 1]) / (R::one() + R::one());
            let width = edges[b + 1] - edges[b];
            grid.push(mid);
            values.push(if mid > R::zero() {
                bin_mass[b] / (mid * width)
            } else {
                R::zero()
            });
        }
        let fraction = window_mass / m_total;
        out.push(ExtractedProfile {
            time: t,
            profile: RadialProfile {
                grid,
                values,
                theta0: theta0.clone(),
                m0: m_total,
                d,
                kernel_digest: None,
            },
            edges,
            bin_mass,
            window_mass_fraction: fraction,
            flagged_low_mass: fraction < lit::<R>(0.5),
        });
    }
    if out.is_empty() {
        return Err(SelfSimilarError::OutOfSpan);
    }
    Ok(out)
}

fn direction_of_accounted_mass<R: Real>(
    state: &crate::lattice::LatticeState<R>,
) -> Result<Vec<R>, SelfSimilarError> {
    let m = state.accounted_mass_vector();
    let total: R = m.iter().copied().sum();
    if !(total > R::zero()) {
        return Err(SelfSimilarError::InvalidParameter);
    }
    Ok(m.into_iter().map(|x| x / total).collect())
}

/// Comparison of an extracted profile against the explicit attractor.
#[derive(Debug, Clone)]
pub struct ProfileComparison<R> {
    /// `sum_bins |captured - predicted| / m0`, the predicted tail beyond
    /// the last edge counted as missing.
    pub l1_error: R,
    pub linf_error: R,
    pub fitted_decay_rate: R,
    pub expected_decay_rate: R,
    pub window_mass_fraction: R,
}

pub fn compare_to_explicit<R: Real>(
    extracted: &ExtractedProfile<R>,
    q: &QForm<R>,
    m0: R,
) -> Result<ProfileComparison<R>, SelfSimilarError> {
    let q0 = q.eval(&extracted.profile.theta0);
    if !(q0 > R::zero()) || !(m0 > R::zero()) {
        return Err(SelfSimilarError::NonpositiveQ);
    }
    let two = lit::<R>(2.0);
    let amplitude = lit::<R>(4.0) / (q0 * q0 * m0);
    let rate = two / (q0 * m0);
    // Closed-form mass of rho*g over [a, b].
    let segment = |a: R, b: R| -> R {
        let f = |x: R| (R::one() + rate * x) * (-rate * x).exp();
        amplitude / (rate * rate) * (f(a) - f(b))
    };
    let edges = &extracted.edges;
    let bins = extracted.bin_mass.len();
    let mut l1 = R::zero();
    let mut linf = R::zero();
    for b in 0..bins {
        let predicted = segment(edges[b], edges[b + 1]);
        let diff = (extracted.bin_mass[b] - predicted).abs() / m0;
        l1 += diff;
        linf = linf.max(diff);
    }
    // Mass the grid cannot see: the closed-form tail beyond the last edge.
    let e_last = edges[bins];
    let tail = amplitude / (rate * rate) * (R::one() + rate * e_last) * (-rate * e_last).exp();
    l1 += tail / m0;

    // Exponential decay rate from the log-density over well-filled bins.
    let peak = extracted
        .bin_mass
        .iter()
        .copied()
        .fold(R::zero(), R::max);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (b, &mass) in extracted.bin_mass.iter().enumerate() {
        if mass >= lit::<R>(1e-2) * peak && extracted.profile.values[b] > R::zero() {
            xs.push(extracted.profile.grid[b]);
            ys.push(extracted.profile.values[b].ln());
        }
    }
    if xs.len() < 3 {
        return Err(SelfSimilarError::GridTooCoarse(
            "too few filled bins to fit a decay rate".into(),
        ));
    }
    let nf = count::<R>(xs.len());
    let xm = xs.iter().copied().sum::<R>() / nf;
    let ym = ys.iter().copied().sum::<R>() / nf;
    let mut sxx = R::zero();
    let mut sxy = R::zero();
    for (x, y) in xs.iter().zip(ys.iter()) {
        sxx += (*x - xm) * (*x - xm);
        sxy += (*x - xm) * (*y - ym);
    }
    Ok(ProfileComparison {
        l1_error: l1,
        linf_error: linf,
        fitted_decay_rate: -(sxy / sxx),
        expected_decay_rate: rate,
        window_mass_fraction: extracted.window_mass_fraction,
    })
}

/// Scaling-family invariance: for self-similar evolutions the rescaled
/// snapshot binned at time `t` matches the one at `lambda^{1-gamma}(t+1)-1`.
#[derive(Debug, Clone)]
pub struct ScalingCheck<R> {
    pub t1: R,
    pub t2: R,
    pub max_rel_discrepancy: R,
    pub compared_bins: usize,
}

/// `simplex_resolution` sets the angular test cells; they must dominate the
/// angular width of the data (which shrinks like t^{-1/2} on the lattice)
/// for the binned comparison to represent the weak-star invariance.
pub fn scaling_family_check<R: Real>(
    source: &mut dyn SnapshotSource<R>,
    gamma: R,
    lambda: R,
    t: R,
    simplex_resolution: Option<u32>,
) -> Result<ScalingCheck<R>, SelfSimilarError> {
    if !(lambda > R::zero()) {
        return Err(SelfSimilarError::InvalidParameter);
    }
    let t2 = lambda.powf(R::one() - gamma) * (t + R::one()) - R::one();
    let find = |source: &mut dyn SnapshotSource<R>, target: R| -> Option<usize> {
        let tol = lit::<R>(1e-9) * (target.abs() + R::one());
        (0..source.len()).find(|&i| (source.time(i) - target).abs() <= tol)
    };
    let i1 = find(source, t).ok_or(SelfSimilarError::OutOfSpan)?;
    let i2 = find(source, t2).ok_or(SelfSimilarError::OutOfSpan)?;
    let (_, s1) = source.get(i1)?;
    let (_, s2) = source.get(i2)?;
    if i1 == i2 {
        return Ok(ScalingCheck {
            t1: t,
            t2,
            max_rel_discrepancy: R::zero(),
            compared_bins: 0,
        });
    }
    let d = s1.d();
    let resolution =
        simplex_resolution.unwrap_or_else(|| SimplexBinning::<R>::default_resolution(d));
    let binning = SimplexBinning::new(d, resolution)?;
    // Common radial edges spanning both rescaled snapshots.
    let mut rho_min = R::infinity();
    let mut rho_max = R::zero();
    for (state, g) in [(&s1, gamma), (&s2, gamma)] {
        let eps = crate::diagnostics::scaling_eps(state.time, g);
        for comp in state.concentrations.keys() {
            let rho = count::<R>(comp.size() as usize) * eps;
            rho_min = rho_min.min(rho);
            rho_max = rho_max.max(rho);
        }
    }
    if !(rho_max > R::zero()) {
        return Err(SelfSimilarError::OutOfSpan);
    }
    let decades = (rho_max / rho_min).log10().max(lit::<R>(0.1));
    let bins = (lit::<R>(16.0) * decades).ceil().to_usize().unwrap_or(16).max(4);
    let mut edges = Vec::with_capacity(bins + 1);
    let log_lo = rho_min.log10();
    let log_hi = rho_max.log10();
    for i in 0..=bins {
        let f = count::<R>(i) / count::<R>(bins);
        edges.push(lit::<R>(10.0).powf(log_lo + (log_hi - log_lo) * f));
    }
    edges[0] = edges[0].min(rho_min);
    let lastix = edges.len() - 1;
    edges[lastix] = edges[lastix].max(rho_max);

    let r1 = rescale_with_edges(&s1, gamma, &binning, &edges)?;
    let r2 = rescale_with_edges(&s2, gamma, &binning, &edges)?;
    let m0: R = s1.accounted_mass_vector().iter().copied().sum();
    let threshold = lit::<R>(0.01) * m0;
    let mut max_rel = R::zero();
    let mut compared = 0usize;
    for (a, b) in r1.mass.iter().zip(r2.mass.iter()) {
        let big = a.max(*b);
        if big < threshold {
            continue;
        }
        compared += 1;
        max_rel = max_rel.max((*a - *b).abs() / big);
    }
    Ok(ScalingCheck {
        t1: t,
        t2,
        max_rel_discrepancy: max_rel,
        compared_bins: compared,
    })
}
