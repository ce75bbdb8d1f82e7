//! Reference evaluation of the coagulation right-hand side on sparse states.
//!
//! Iterates unordered pairs of stored support entries (self-pairs with the
//! 1/2 convention) and scatters gains into a fresh accumulation map. Pairs
//! whose merged size exceeds the truncation keep their loss terms and send
//! the merged mass rate to the escape flux, so the derivative satisfies
//! `sum_alpha alpha * dn_alpha + escape_flux = 0` identically.
//!
//! This path is quadratic in the support size. The dense engines used by
//! `run` reproduce it with faster algorithms; this implementation is the
//! semantic reference they are tested against.

use std::collections::BTreeMap;

use smallvec::SmallVec;

use crate::kernel::KernelSpec;
use crate::lattice::{Composition, LatticeState};
use crate::real::{count, Real};
use crate::solver::SolverError;

/// Derivative of the concentration field plus the truncation escape rate.
#[derive(Debug, Clone)]
pub struct RhsOutput<R> {
    pub derivative: BTreeMap<Composition, R>,
    /// Mass rate per component leaving the lattice through the truncation.
    pub escape_flux: Vec<R>,
}

/// Evaluates the coagulation right-hand side of the sparse state.
pub fn rhs<R: Real>(
    state: &LatticeState<R>,
    kernel: &KernelSpec<R>,
) -> Result<RhsOutput<R>, SolverError> {
    check_kernel_dim(state.d(), kernel)?;
    let entries: Vec<(&Composition, R)> = state
        .concentrations
        .iter()
        .map(|(c, &n)| (c, n))
        .collect();
    let (derivative, escape_flux) = pairwise(&entries, kernel, state.n_max(), state.d());
    Ok(RhsOutput {
        derivative,
        escape_flux,
    })
}

/// Pairwise core shared by the public operation and the sparse engine.
pub(crate) fn pairwise<R: Real>(
    entries: &[(&Composition, R)],
    kernel: &KernelSpec<R>,
    n_max: u32,
    d: usize,
) -> (BTreeMap<Composition, R>, Vec<R>) {
    let points: Vec<SmallVec<[R; 4]>> = entries.iter().map(|(c, _)| c.to_point()).collect();
    let mut derivative: BTreeMap<Composition, R> = BTreeMap::new();
    let mut escape = vec![R::zero(); d];
    let two = R::one() + R::one();
    let half = R::one() / two;

    for i in 0..entries.len() {
        let (comp_i, n_i) = entries[i];
        for j in i..entries.len() {
            let (comp_j, n_j) = entries[j];
            let k = kernel.eval_raw(&points[i], &points[j]);
            if i == j {
                // Self-merge: event rate (1/2) K n^2 consumes two clusters.
                let rate = half * k * n_i * n_i;
                *derivative.entry(comp_i.clone()).or_insert_with(R::zero) -= two * rate;
                scatter_gain(&mut derivative, &mut escape, comp_i, comp_i, rate, n_max);
            } else {
                let rate = k * n_i * n_j;
                *derivative.entry(comp_i.clone()).or_insert_with(R::zero) -= rate;
                *derivative.entry(comp_j.clone()).or_insert_with(R::zero) -= rate;
                scatter_gain(&mut derivative, &mut escape, comp_i, comp_j, rate, n_max);
            }
        }
    }
    (derivative, escape)
}

fn scatter_gain<R: Real>(
    derivative: &mut BTreeMap<Composition, R>,
    escape: &mut [R],
    a: &Composition,
    b: &Composition,
    rate: R,
    n_max: u32,
) {
    if a.size() as u64 + b.size() as u64 <= n_max as u64 {
        let merged = a.merged(b);
        *derivative.entry(merged).or_insert_with(R::zero) += rate;
    } else {
        for (slot, (&ca, &cb)) in escape
            .iter_mut()
            .zip(a.components().iter().zip(b.components()))
        {
            *slot += count::<R>((ca + cb) as usize) * rate;
        }
    }
}

pub(crate) fn check_kernel_dim<R: Real>(
    d: usize,
    kernel: &KernelSpec<R>,
) -> Result<(), SolverError> {
    if let crate::kernel::KernelFamily::RayConstant { q } = &kernel.family {
        if q.dim() != d {
            return Err(SolverError::InvalidConfig(format!(
                "ray-constant kernel has dimension {}, state has {}",
                q.dim(),
                d
            )));
        }
    }
    Ok(())
}
