//! Vector-space operations the adaptive stepper needs, implemented for the
//! dense flat representation and for sparse composition maps.

use std::collections::BTreeMap;

use crate::lattice::Composition;
use crate::real::{count, Real};

/// Minimal state-vector algebra for embedded Runge-Kutta stepping.
pub(crate) trait StateVector<R: Real>: Clone {
    /// `self = base + h * sum(coeff_i * term_i)`.
    fn assign_combination(&mut self, base: &Self, h: R, terms: &[(R, &Self)]);
    /// Weighted RMS of `self` (an error vector) against the larger of the
    /// two reference states, entrywise scale `abs_tol + rel_tol * |y|`.
    fn error_norm(&self, a: &Self, b: &Self, abs_tol: R, rel_tol: R) -> R;
}

impl<R: Real> StateVector<R> for Vec<R> {
    fn assign_combination(&mut self, base: &Self, h: R, terms: &[(R, &Self)]) {
        self.clone_from(base);
        for &(c, term) in terms {
            let hc = h * c;
            for (out, &t) in self.iter_mut().zip(term.iter()) {
                *out += hc * t;
            }
        }
    }

    fn error_norm(&self, a: &Self, b: &Self, abs_tol: R, rel_tol: R) -> R {
        let mut acc = R::zero();
        for i in 0..self.len() {
            let scale = abs_tol + rel_tol * a[i].abs().max(b[i].abs());
            let ratio = self[i] / scale;
            acc += ratio * ratio;
        }
        (acc / count::<R>(self.len())).sqrt()
    }
}

/// Sparse state for dimensions the dense grid does not cover: concentrations
/// keyed by composition plus the per-component escape accumulator.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct MapState<R> {
    pub map: BTreeMap<Composition, R>,
    pub escaped: Vec<R>,
}

impl<R: Real> MapState<R> {
    pub fn new(d: usize) -> Self {
        Self {
            map: BTreeMap::new(),
            escaped: vec![R::zero(); d],
        }
    }
}

impl<R: Real> StateVector<R> for MapState<R> {
    fn assign_combination(&mut self, base: &Self, h: R, terms: &[(R, &Self)]) {
        self.map.clone_from(&base.map);
        self.escaped.clone_from(&base.escaped);
        for &(c, term) in terms {
            let hc = h * c;
            for (comp, &v) in &term.map {
                *self.map.entry(comp.clone()).or_insert_with(R::zero) += hc * v;
            }
            for (out, &v) in self.escaped.iter_mut().zip(term.escaped.iter()) {
                *out += hc * v;
            }
        }
    }

    fn error_norm(&self, a: &Self, b: &Self, abs_tol: R, rel_tol: R) -> R {
        let mut acc = R::zero();
        let mut n = 0usize;
        for (comp, &e) in &self.map {
            let ya = a.map.get(comp).copied().unwrap_or(R::zero()).abs();
            let yb = b.map.get(comp).copied().unwrap_or(R::zero()).abs();
            let ratio = e / (abs_tol + rel_tol * ya.max(yb));
            acc += ratio * ratio;
            n += 1;
        }
        for i in 0..self.escaped.len() {
            let scale = abs_tol + rel_tol * a.escaped[i].abs().max(b.escaped[i].abs());
            let ratio = self.escaped[i] / scale;
            acc += ratio * ratio;
            n += 1;
        }
        if n == 0 {
            return R::zero();
        }
        (acc / count::<R>(n)).sqrt()
    }
}
