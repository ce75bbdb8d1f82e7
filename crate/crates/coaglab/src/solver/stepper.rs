//! Embedded Dormand-Prince 5(4) stepping with entrywise error weights and
//! nonnegativity enforcement by step rejection.

use crate::lattice::LatticeState;
use crate::real::{lit, Real};
use crate::solver::algebra::StateVector;
use crate::solver::SolverError;

/// What the stepper needs from a right-hand-side evaluator.
pub(crate) trait Engine<R: Real> {
    type State: StateVector<R>;
    /// Writes the derivative of `y` into `out`, escape rates included.
    fn rhs(&mut self, y: &Self::State, out: &mut Self::State);
    fn zero_like(&self, y: &Self::State) -> Self::State;
    /// Nonnegativity filter for a candidate state: entries below `-tol`
    /// reject the step (`None`); tiny negatives are zeroed and their mass
    /// returned per component so the run can report what was clipped.
    fn sanitize(&self, y: &mut Self::State, tol: R) -> Option<Vec<R>>;
    fn to_lattice(&self, y: &Self::State, time: R, floor: R) -> LatticeState<R>;
    fn escaped(&self, y: &Self::State) -> Vec<R>;
    fn mass_vector(&self, y: &Self::State) -> Vec<R>;
}

// Dormand-Prince 5(4) coefficients.
const A2: [f64; 1] = [1.0 / 5.0];
const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
const A5: [f64; 4] = [
    19372.0 / 6561.0,
    -25360.0 / 2187.0,
    64448.0 / 6561.0,
    -212.0 / 729.0,
];
const A6: [f64; 5] = [
    9017.0 / 3168.0,
    -355.0 / 33.0,
    46732.0 / 5247.0,
    49.0 / 176.0,
    -5103.0 / 18656.0,
];
/// Fifth-order weights; the seventh stage is the new state (FSAL).
const B: [f64; 6] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
];
/// Error weights `b - b_hat` including the FSAL stage.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 5.0;
/// Steps below `UNDERFLOW_FACTOR * max(t, dt_init)` abort as stiffness.
const UNDERFLOW_FACTOR: f64 = 1e-14;

#[derive(Debug, Clone, Copy, Default)]
pub struct StepStats {
    pub accepted: u64,
    pub rejected: u64,
    pub rhs_evals: u64,
}

pub(crate) struct StepOutcome<R> {
    pub h_used: R,
    pub error_norm: R,
    pub clipped: Vec<R>,
}

pub(crate) struct Dopri5<R: Real, E: Engine<R>> {
    pub engine: E,
    h: R,
    dt_init: R,
    abs_tol: R,
    rel_tol: R,
    k: Vec<E::State>,
    y_tmp: E::State,
    y_new: E::State,
    y_err: E::State,
    zero: E::State,
    fsal_ready: bool,
    pub stats: StepStats,
}

impl<R: Real, E: Engine<R>> Dopri5<R, E> {
    pub fn new(engine: E, y0: &E::State, dt_init: R, abs_tol: R, rel_tol: R) -> Self {
        let zero = engine.zero_like(y0);
        Self {
            engine,
            h: dt_init,
            dt_init,
            abs_tol,
            rel_tol,
            k: (0..7).map(|_| zero.clone()).collect(),
            y_tmp: zero.clone(),
            y_new: zero.clone(),
            y_err: zero.clone(),
            zero,
            fsal_ready: false,
        stats: StepStats::default(),
        }
    }

    /// Advances one accepted step from `(t, y)`, using at most `h_cap`.
    /// Returns the accepted step size and its error estimate.
    pub fn step(
        &mut self,
        t: R,
        y: &mut E::State,
        h_cap: R,
    ) -> Result<StepOutcome<R>, SolverError> {
        let pos_tol = self.abs_tol;
        loop {
            let h = self.h.min(h_cap).max(R::zero());
            let underflow = lit::<R>(UNDERFLOW_FACTOR) * t.abs().max(self.dt_init);
            if h <= underflow {
                return Err(SolverError::StepSizeUnderflow {
                    time: t.to_f64().unwrap_or(f64::NAN),
                });
            }
            if !self.fsal_ready {
                let (k0, rest) = self.k.split_first_mut().unwrap();
                let _ = rest;
                self.engine.rhs(y, k0);
                self.stats.rhs_evals += 1;
                self.fsal_ready = true;
            }

            macro_rules! stage {
                ($idx:expr, $coeffs:expr) => {{
                    let terms: Vec<(R, &E::State)> = $coeffs
                        .iter()
                        .enumerate()
                        .filter(|(_, &c)| c != 0.0)
                        .map(|(j, &c)| (lit::<R>(c), &self.k[j]))
                        .collect();
                    self.y_tmp.assign_combination(y, h, &terms);
                    let (head, tail) = self.k.split_at_mut($idx);
                    let _ = head;
                    self.engine.rhs(&self.y_tmp, &mut tail[0]);
                    self.stats.rhs_evals += 1;
                }};
            }
            stage!(1, A2);
            stage!(2, A3);
            stage!(3, A4);
            stage!(4, A5);
            stage!(5, A6);

            {
                let terms: Vec<(R, &E::State)> = B
                    .iter()
                    .enumerate()
                    .filter(|(_, &c)| c != 0.0)
                    .map(|(j, &c)| (lit::<R>(c), &self.k[j]))
                    .collect();
                self.y_new.assign_combination(y, h, &terms);
            }
            {
                let (head, tail) = self.k.split_at_mut(6);
                let _ = head;
                self.engine.rhs(&self.y_new, &mut tail[0]);
                self.stats.rhs_evals += 1;
            }
            {
                let terms: Vec<(R, &E::State)> = E
                    .iter()
                    .enumerate()
                    .filter(|(_, &c)| c != 0.0)
                    .map(|(j, &c)| (lit::<R>(c), &self.k[j]))
                    .collect();
                self.y_err.assign_combination(&self.zero, h, &terms);
            }
            let error_norm = self
                .y_err
                .error_norm(y, &self.y_new, self.abs_tol, self.rel_tol);

            if error_norm <= R::one() {
                match self.engine.sanitize(&mut self.y_new, pos_tol) {
                    Some(clipped) => {
                        std::mem::swap(y, &mut self.y_new);
                        self.k.swap(0, 6); // first-same-as-last
                        self.stats.accepted += 1;
                        let factor = if error_norm == R::zero() {
                            lit::<R>(FAC_MAX)
                        } else {
                            lit::<R>(SAFETY)
                                * error_norm.powf(lit::<R>(-0.2))
                        }
                        .min(lit::<R>(FAC_MAX))
                        .max(lit::<R>(FAC_MIN));
                        self.h = h * factor;
                        return Ok(StepOutcome {
                            h_used: h,
                            error_norm,
                            clipped,
                        });
                    }
                    None => {
                        // The error estimate cannot see sign violations;
                        // halve instead of trusting it.
                        self.stats.rejected += 1;
                        self.h = h * lit::<R>(0.5);
                        continue;
                    }
                }
            }

            self.stats.rejected += 1;
            let factor = (lit::<R>(SAFETY) * error_norm.powf(lit::<R>(-0.2)))
                .min(R::one())
                .max(lit::<R>(FAC_MIN));
            self.h = h * factor;
        }
    }
}
