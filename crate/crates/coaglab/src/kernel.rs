//! Coagulation kernels and their validation suite.
//!
//! All kernels live in the symmetric bound class
//! `c1 (|x|+|y|)^gamma Phi_p(s) <= K(x,y) <= c2 (|x|+|y|)^gamma Phi_p(s)`
//! with `s = |x|/(|x|+|y|)` and `Phi_p(s) = 1/(s^p (1-s)^p)`. Norms are
//! 1-norms of nonnegative vectors throughout. The checks in this module are
//! what `validate-kernel` runs: bound sandwiching, homogeneity of the
//! declared degree, and the product-form lower bound used by the moment
//! estimates.

use thiserror::Error;

use crate::real::{lit, Real};

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("kernel arguments must be nonzero vectors with nonnegative components")]
    InvalidPoint,
    #[error("phi_p argument must lie strictly inside (0, 1)")]
    PhiArgOutOfRange,
    #[error("kernel parameters invalid: {0}")]
    InvalidParams(String),
    #[error("kernel family configuration invalid: {0}")]
    InvalidFamily(String),
    #[error("sample list must be non-empty")]
    EmptySamples,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Exponents and bound constants of the kernel class.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelParams<R> {
    pub gamma: R,
    pub p: R,
    pub c1: R,
    pub c2: R,
}

impl<R: Real> KernelParams<R> {
    /// Validates the structural constraints: `0 < c1 <= c2` and
    /// `gamma + 2p >= 0`.
    ///
    /// The no-gelation inequalities (`gamma < 1`, `gamma + p < 1`) are *not*
    /// enforced here: the validation suite must be able to load kernels that
    /// violate them (e.g. a mislabeled product kernel) and report the
    /// violation. Solver configurations reject them via
    /// [`KernelParams::require_no_gelation`].
    pub fn new(gamma: R, p: R, c1: R, c2: R) -> Result<Self, KernelError> {
        if !(c1 > R::zero()) || !(c2 >= c1) || !c2.is_finite() {
            return Err(KernelError::InvalidParams(
                "bound constants must satisfy 0 < c1 <= c2".into(),
            ));
        }
        if !gamma.is_finite() || !p.is_finite() {
            return Err(KernelError::InvalidParams("exponents must be finite".into()));
        }
        if !(gamma + lit::<R>(2.0) * p >= R::zero()) {
            return Err(KernelError::InvalidParams(
                "exponents must satisfy gamma + 2p >= 0".into(),
            ));
        }
        Ok(Self { gamma, p, c1, c2 })
    }

    /// True when the no-gelation constraint `gamma < 1, gamma + p < 1` holds.
    pub fn no_gelation(&self) -> bool {
        self.gamma < R::one() && self.gamma + self.p < R::one()
    }

    /// Errors unless the no-gelation constraint holds.
    pub fn require_no_gelation(&self) -> Result<(), KernelError> {
        if self.no_gelation() {
            Ok(())
        } else {
            Err(KernelError::InvalidParams(
                "no-gelation constraint requires gamma < 1 and gamma + p < 1".into(),
            ))
        }
    }
}

/// Quadratic form on the simplex: `Q(theta) = q0 + qlin.theta + theta.qquad.theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct QForm<R> {
    pub q0: R,
    pub qlin: Vec<R>,
    pub qquad: Vec<Vec<R>>,
}

impl<R: Real> QForm<R> {
    pub fn new(q0: R, qlin: Vec<R>, qquad: Vec<Vec<R>>) -> Result<Self, KernelError> {
        let d = qlin.len();
        if d == 0 {
            return Err(KernelError::InvalidFamily("QForm requires d >= 1".into()));
        }
        if qquad.len() != d || qquad.iter().any(|row| row.len() != d) {
            return Err(KernelError::InvalidFamily(
                "QForm quadratic part must be a d x d matrix".into(),
            ));
        }
        for i in 0..d {
            for j in (i + 1)..d {
                if qquad[i][j] != qquad[j][i] {
                    return Err(KernelError::InvalidFamily(
                        "QForm quadratic part must be symmetric".into(),
                    ));
                }
            }
        }
        Ok(Self { q0, qlin, qquad })
    }

    /// Constant form `Q(theta) = q0` in dimension `d`.
    pub fn constant(q0: R, d: usize) -> Self {
        Self {
            q0,
            qlin: vec![R::zero(); d],
            qquad: vec![vec![R::zero(); d]; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.qlin.len()
    }

    pub fn eval(&self, theta: &[R]) -> R {
        debug_assert_eq!(theta.len(), self.dim());
        let mut q = self.q0;
        for (i, &t) in theta.iter().enumerate() {
            q += self.qlin[i] * t;
            for (j, &u) in theta.iter().enumerate() {
                q += self.qquad[i][j] * t * u;
            }
        }
        q
    }

    /// Evaluates `Q` at the direction of `x + y` without allocating.
    fn eval_sum_direction(&self, x: &[R], y: &[R]) -> R {
        let total: R = x.iter().zip(y).map(|(&a, &b)| a + b).sum();
        let mut q = self.q0;
        for i in 0..x.len() {
            let ti = (x[i] + y[i]) / total;
            q += self.qlin[i] * ti;
            for j in 0..x.len() {
                q += self.qquad[i][j] * ti * (x[j] + y[j]) / total;
            }
        }
        q
    }

    /// Checks `c1 <= Q(theta) <= c2` on a barycentric grid of the simplex.
    pub fn validate_range(&self, c1: R, c2: R, divisions: u32) -> Result<(), KernelError> {
        for theta in simplex_grid::<R>(self.dim(), divisions) {
            let q = self.eval(&theta);
            if !(q >= c1) || !(q <= c2) {
                return Err(KernelError::InvalidFamily(format!(
                    "Q(theta) = {q} escapes [c1, c2] at theta = {theta:?}"
                )));
            }
        }
        Ok(())
    }
}

/// The shipped kernel families.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelFamily<R> {
    /// `K = value`; homogeneity 0.
    Constant { value: R },
    /// `K = |x| + |y|`; homogeneity 1.
    Additive,
    /// `K = |x| |y|`; homogeneity 2.
    Product,
    /// `K = scale (|x|^{gamma+lambda} |y|^{-lambda} + |y|^{gamma+lambda} |x|^{-lambda})`;
    /// homogeneity equal to the declared `gamma`.
    PowerLawPair { lambda: R, scale: R },
    /// `K(x, y) = Q((x+y)/|x+y|)`: constant along every ray, homogeneity 0.
    ///
    /// The ray-constancy requirement pins `K` only on pairs from a common
    /// ray; extending by the direction of `x + y` is the canonical choice
    /// here because it is symmetric, continuous, and exactly homogeneous of
    /// degree zero.
    RayConstant { q: QForm<R> },
    /// `K = (|x|+|y|)^gamma T(|x|/(|x|+|y|))` with a tabulated symmetric `T`;
    /// homogeneity equal to the declared `gamma` by construction.
    HomogeneousTable { table: Vec<(R, R)> },
}

/// A kernel family together with its declared class parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec<R> {
    pub params: KernelParams<R>,
    pub family: KernelFamily<R>,
}

const QFORM_VALIDATION_DIVISIONS: u32 = 10;

impl<R: Real> KernelSpec<R> {
    /// Validates family structure against the declared parameters.
    ///
    /// Declared exponents are taken at face value; whether they actually
    /// bound the kernel is the job of the `check_*` suite.
    pub fn new(family: KernelFamily<R>, params: KernelParams<R>) -> Result<Self, KernelError> {
        match &family {
            KernelFamily::Constant { value } => {
                if !(*value > R::zero()) || !value.is_finite() {
                    return Err(KernelError::InvalidFamily(
                        "constant kernel value must be positive".into(),
                    ));
                }
            }
            KernelFamily::Additive | KernelFamily::Product => {}
            KernelFamily::PowerLawPair { lambda, scale } => {
                if !(*scale > R::zero()) || !lambda.is_finite() {
                    return Err(KernelError::InvalidFamily(
                        "power-law pair scale must be positive".into(),
                    ));
                }
            }
            KernelFamily::RayConstant { q } => {
                q.validate_range(params.c1, params.c2, QFORM_VALIDATION_DIVISIONS)?;
            }
            KernelFamily::HomogeneousTable { table } => validate_table(table)?,
        }
        Ok(Self { params, family })
    }

    /// The exact homogeneity degree of the family.
    pub fn family_homogeneity(&self) -> R {
        match &self.family {
            KernelFamily::Constant { .. } | KernelFamily::RayConstant { .. } => R::zero(),
            KernelFamily::Additive => R::one(),
            KernelFamily::Product => lit(2.0),
            KernelFamily::PowerLawPair { .. } | KernelFamily::HomogeneousTable { .. } => {
                self.params.gamma
            }
        }
    }

    /// True when `K(x, y)` depends on `(x, y)` only through the sum `x + y`.
    /// The solver turns the gain term into a convolution for such kernels.
    pub fn is_sum_kernel(&self) -> bool {
        matches!(
            self.family,
            KernelFamily::Constant { .. }
                | KernelFamily::Additive
                | KernelFamily::RayConstant { .. }
        )
    }

    /// Evaluates `K(x, y)` after validating the arguments.
    pub fn eval(&self, x: &[R], y: &[R]) -> Result<R, KernelError> {
        validate_point(x)?;
        validate_point(y)?;
        if x.len() != y.len() {
            return Err(KernelError::DimensionMismatch {
                expected: x.len(),
                got: y.len(),
            });
        }
        if let KernelFamily::RayConstant { q } = &self.family {
            if q.dim() != x.len() {
                return Err(KernelError::DimensionMismatch {
                    expected: q.dim(),
                    got: x.len(),
                });
            }
        }
        Ok(self.eval_raw(x, y))
    }

    /// Evaluates without argument validation. Callers guarantee nonzero
    /// nonnegative finite vectors of matching dimension.
    pub(crate) fn eval_raw(&self, x: &[R], y: &[R]) -> R {
        match &self.family {
            KernelFamily::Constant { value } => *value,
            KernelFamily::Additive => norm1(x) + norm1(y),
            KernelFamily::Product => norm1(x) * norm1(y),
            KernelFamily::PowerLawPair { lambda, scale } => {
                let (u, v) = (norm1(x), norm1(y));
                let g = self.params.gamma;
                *scale * (u.powf(g + *lambda) * v.powf(-*lambda) + v.powf(g + *lambda) * u.powf(-*lambda))
            }
            KernelFamily::RayConstant { q } => q.eval_sum_direction(x, y),
            KernelFamily::HomogeneousTable { table } => {
                let (u, v) = (norm1(x), norm1(y));
                let total = u + v;
                total.powf(self.params.gamma) * interp_table(table, u / total)
            }
        }
    }
}

/// 1-norm of a nonnegative vector.
pub(crate) fn norm1<R: Real>(x: &[R]) -> R {
    x.iter().copied().sum()
}

fn validate_point<R: Real>(x: &[R]) -> Result<(), KernelError> {
    if x.is_empty() || x.iter().any(|v| !(*v >= R::zero()) || !v.is_finite()) {
        return Err(KernelError::InvalidPoint);
    }
    if x.iter().all(|v| *v == R::zero()) {
        return Err(KernelError::InvalidPoint);
    }
    Ok(())
}

fn validate_table<R: Real>(table: &[(R, R)]) -> Result<(), KernelError> {
    if table.len() < 2 {
        return Err(KernelError::InvalidFamily(
            "table needs at least two knots".into(),
        ));
    }
    for w in table.windows(2) {
        if !(w[1].0 > w[0].0) {
            return Err(KernelError::InvalidFamily(
                "table abscissae must be strictly increasing".into(),
            ));
        }
    }
    for &(s, t) in table {
        if !(s > R::zero()) || !(s < R::one()) {
            return Err(KernelError::InvalidFamily(
                "table abscissae must lie strictly inside (0, 1)".into(),
            ));
        }
        if !(t > R::zero()) || !t.is_finite() {
            return Err(KernelError::InvalidFamily(
                "table values must be positive and finite".into(),
            ));
        }
    }
    // Symmetry T(s) = T(1-s), needed for K(x,y) = K(y,x), checked on a grid.
    let tol = lit::<R>(1e-9);
    for k in 1..64u32 {
        let s = lit::<R>(k as f64 / 64.0);
        let a = interp_table(table, s);
        let b = interp_table(table, R::one() - s);
        if (a - b).abs() > tol * a.max(b) {
            return Err(KernelError::InvalidFamily(
                "table must be symmetric under s -> 1 - s".into(),
            ));
        }
    }
    Ok(())
}

/// Piecewise-linear interpolation, clamped to the boundary knot values.
fn interp_table<R: Real>(table: &[(R, R)], s: R) -> R {
    if s <= table[0].0 {
        return table[0].1;
    }
    if s >= table[table.len() - 1].0 {
        return table[table.len() - 1].1;
    }
    let idx = table.partition_point(|&(a, _)| a < s);
    let (s0, t0) = table[idx - 1];
    let (s1, t1) = table[idx];
    t0 + (t1 - t0) * (s - s0) / (s1 - s0)
}

/// `Phi_p(s) = s^{-p} (1-s)^{-p}` for `s` strictly inside `(0, 1)`.
pub fn phi_p<R: Real>(p: R, s: R) -> Result<R, KernelError> {
    if !(s > R::zero()) || !(s < R::one()) {
        return Err(KernelError::PhiArgOutOfRange);
    }
    Ok((s * (R::one() - s)).powf(-p))
}

/// Outcome of a bound check: extremal ratios of `K` against the lower and
/// upper envelope, and the samples where they occur.
#[derive(Debug, Clone)]
pub struct BoundReport<R> {
    pub pass: bool,
    /// `min K / (c1 envelope)`; must stay `>= 1` for the class bound to hold.
    pub worst_ratio_low: R,
    /// `max K / (c2 envelope)`; must stay `<= 1`.
    pub worst_ratio_high: R,
    pub worst_low_sample: (Vec<R>, Vec<R>),
    pub worst_high_sample: (Vec<R>, Vec<R>),
}

/// Relative slack granted to the `check_*` comparisons, absorbing rounding
/// in kernels that sit exactly on their envelopes.
const CHECK_SLACK: f64 = 1e-9;

/// Verifies the two-sided envelope on every sample pair.
pub fn check_bounds<R: Real>(
    spec: &KernelSpec<R>,
    samples: &[(Vec<R>, Vec<R>)],
) -> Result<BoundReport<R>, KernelError> {
    if samples.is_empty() {
        return Err(KernelError::EmptySamples);
    }
    let mut worst_low = R::infinity();
    let mut worst_high = R::zero();
    let mut low_at = 0usize;
    let mut high_at = 0usize;
    for (i, (x, y)) in samples.iter().enumerate() {
        let k = spec.eval(x, y)?;
        let total = norm1(x) + norm1(y);
        let envelope = total.powf(spec.params.gamma) * phi_p(spec.params.p, norm1(x) / total)?;
        let low = k / (spec.params.c1 * envelope);
        let high = k / (spec.params.c2 * envelope);
        if low < worst_low {
            worst_low = low;
            low_at = i;
        }
        if high > worst_high {
            worst_high = high;
            high_at = i;
        }
    }
    let slack = lit::<R>(CHECK_SLACK);
    Ok(BoundReport {
        pass: worst_low >= R::one() - slack && worst_high <= R::one() + slack,
        worst_ratio_low: worst_low,
        worst_ratio_high: worst_high,
        worst_low_sample: samples[low_at].clone(),
        worst_high_sample: samples[high_at].clone(),
    })
}

/// Outcome of a homogeneity or lower-bound check.
#[derive(Debug, Clone)]
pub struct CheckReport<R> {
    pub pass: bool,
    /// Largest relative violation observed.
    pub worst_error: R,
    pub worst_sample: (Vec<R>, Vec<R>),
}

/// Verifies `K(r x, r y) = r^gamma K(x, y)` for the declared `gamma` at
/// every sample and scale, to relative tolerance `rel_tol`.
pub fn check_homogeneity<R: Real>(
    spec: &KernelSpec<R>,
    samples: &[(Vec<R>, Vec<R>)],
    scales: &[R],
    rel_tol: R,
) -> Result<CheckReport<R>, KernelError> {
    if samples.is_empty() || scales.is_empty() {
        return Err(KernelError::EmptySamples);
    }
    if scales.iter().any(|r| !(*r > R::zero())) {
        return Err(KernelError::InvalidParams("scales must be positive".into()));
    }
    let mut worst = R::zero();
    let mut at = 0usize;
    for (i, (x, y)) in samples.iter().enumerate() {
        let base = spec.eval(x, y)?;
        for &r in scales {
            let rx: Vec<R> = x.iter().map(|&v| v * r).collect();
            let ry: Vec<R> = y.iter().map(|&v| v * r).collect();
            let scaled = spec.eval(&rx, &ry)?;
            let expected = r.powf(spec.params.gamma) * base;
            let err = (scaled - expected).abs() / expected.abs().max(R::min_positive_value());
            if err > worst {
                worst = err;
                at = i;
            }
        }
    }
    Ok(CheckReport {
        pass: worst <= rel_tol,
        worst_error: worst,
        worst_sample: samples[at].clone(),
    })
}

/// Verifies the product-form lower bound `K(x, y) >= c1 (|x| |y|)^{gamma/2}`,
/// which follows from the class bounds whenever `gamma + 2p >= 0`.
pub fn check_lower_product_bound<R: Real>(
    spec: &KernelSpec<R>,
    samples: &[(Vec<R>, Vec<R>)],
) -> Result<CheckReport<R>, KernelError> {
    if samples.is_empty() {
        return Err(KernelError::EmptySamples);
    }
    let mut worst = R::zero();
    let mut at = 0usize;
    let half = lit::<R>(0.5);
    for (i, (x, y)) in samples.iter().enumerate() {
        let k = spec.eval(x, y)?;
        let bound = spec.params.c1 * (norm1(x) * norm1(y)).powf(spec.params.gamma * half);
        // Violation measured relative to the bound.
        let err = ((bound - k) / bound).max(R::zero());
        if err > worst {
            worst = err;
            at = i;
        }
    }
    let slack = lit::<R>(CHECK_SLACK);
    Ok(CheckReport {
        pass: worst <= slack,
        worst_error: worst,
        worst_sample: samples[at].clone(),
    })
}

/// Barycentric grid on the simplex: all rational directions with denominator
/// `divisions`. Includes the corners.
pub fn simplex_grid<R: Real>(d: usize, divisions: u32) -> Vec<Vec<R>> {
    let mut out = Vec::new();
    let mut current = vec![0u32; d];
    fill_grid(d, divisions, 0, divisions, &mut current, &mut out);
    out
}

fn fill_grid<R: Real>(
    d: usize,
    divisions: u32,
    axis: usize,
    remaining: u32,
    current: &mut [u32],
    out: &mut Vec<Vec<R>>,
) {
    if axis == d - 1 {
        current[axis] = remaining;
        out.push(
            current
                .iter()
                .map(|&k| lit::<R>(k as f64 / divisions as f64))
                .collect(),
        );
        return;
    }
    for k in 0..=remaining {
        current[axis] = k;
        fill_grid(d, divisions, axis + 1, remaining - k, current, out);
    }
}

/// Default validation samples: log-spaced sizes in `[1, 2^16]` crossed with
/// a barycentric direction grid of 10 divisions per axis.
pub fn default_sample_pairs<R: Real>(d: usize) -> Vec<(Vec<R>, Vec<R>)> {
    let sizes: Vec<R> = (0..=8).map(|k| lit::<R>(f64::powi(2.0, 2 * k))).collect();
    let dirs = simplex_grid::<R>(d, 10);
    let mut points: Vec<Vec<R>> = Vec::with_capacity(sizes.len() * dirs.len());
    for &s in &sizes {
        for dir in &dirs {
            points.push(dir.iter().map(|&t| t * s).collect());
        }
    }
    let mut pairs = Vec::with_capacity(points.len() * (points.len() + 1) / 2);
    for i in 0..points.len() {
        for j in i..points.len() {
            pairs.push((points[i].clone(), points[j].clone()));
        }
    }
    pairs
}
