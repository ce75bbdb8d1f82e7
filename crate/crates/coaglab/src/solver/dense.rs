//! Dense-grid evaluation of the coagulation right-hand side for d <= 2.
//!
//! The truncated lattice is small enough in one and two dimensions to store
//! every admissible composition in a flat array (sizes are concatenated,
//! size-s slice holding the s+1 compositions (a, s-a) for d = 2). Loss terms
//! reduce exactly to per-size slice sums for every shipped family; gains are
//! either accumulated pairwise or, for kernels depending only on the merged
//! cluster, via an FFT self-convolution of the grid.
//!
//! The trailing `d` entries of a state vector integrate the escape flux, so
//! the stepper conserves mass-plus-ledger to rounding by linearity.

use crate::kernel::{KernelFamily, KernelSpec};
use crate::lattice::{Composition, LatticeState};
use crate::real::{count, Real};
use crate::solver::fft::{conv_noise_floor, next_fast_len, ConvEngine};
use crate::solver::stepper::Engine;
use crate::solver::SolverError;

/// Pair-iteration budget above which sum kernels switch to the FFT gain.
const DIRECT_PAIR_BUDGET: u64 = 30_000_000;
/// Largest size-kernel lookup table kept in memory.
const MAX_SIZE_TABLE: usize = 64_000_000;

#[cfg_attr(not(test), allow(dead_code))]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum GainPath {
    Direct,
    Fft,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shape {
    /// K depends only on the merged cluster x + y.
    Sum,
    /// K depends only on the sizes |x|, |y|.
    SizeOnly,
}

/// Coefficients of a ray-constant kernel specialized to d <= 2.
#[derive(Debug, Clone, Copy)]
struct RayCoeffs<R> {
    q0: R,
    l1: R,
    l2: R,
    a11: R,
    a12: R,
    a22: R,
}

pub(crate) struct DenseEngine<R: Real> {
    d: usize,
    n_max: u32,
    kernel: KernelSpec<R>,
    shape: Shape,
    ray: Option<RayCoeffs<R>>,
    n_cells: usize,
    init_dropped: Vec<R>,
    size_table: Option<Vec<R>>,
    conv: ConvEngine<R>,
    grid_in: Vec<R>,
    grid_out: Vec<R>,
    occ: Vec<(u32, u32, R)>,
    occ_sizes: Vec<u32>,
    slice_n: Vec<R>,
    slice_px: Vec<R>,
    slice_py: Vec<R>,
    slice_q: Vec<R>,
    loss_coef: Vec<R>,
    loss_lin1: Vec<R>,
    loss_lin2: Vec<R>,
    loss_q11: Vec<R>,
    loss_q12: Vec<R>,
    loss_q22: Vec<R>,
    pub(crate) force_path: Option<GainPath>,
}

impl<R: Real> DenseEngine<R> {
    pub fn new(d: usize, n_max: u32, kernel: KernelSpec<R>) -> Result<Self, SolverError> {
        if d == 0 || d > 2 {
            return Err(SolverError::InvalidConfig(
                "dense engine supports d = 1 or d = 2".into(),
            ));
        }
        if n_max == 0 {
            return Err(SolverError::InvalidConfig("n_max must be >= 1".into()));
        }
        let n_cells = cell_count(d, n_max).ok_or_else(|| {
            SolverError::InvalidConfig("n_max too large for the dense representation".into())
        })?;
        let shape = if kernel.is_sum_kernel() {
            Shape::Sum
        } else {
            Shape::SizeOnly
        };
        let ray = match &kernel.family {
            KernelFamily::RayConstant { q } => {
                if q.dim() != d {
                    return Err(SolverError::InvalidConfig(format!(
                        "ray-constant kernel has dimension {}, state has {}",
                        q.dim(),
                        d
                    )));
                }
                Some(RayCoeffs {
                    q0: q.q0,
                    l1: q.qlin[0],
                    l2: if d == 2 { q.qlin[1] } else { R::zero() },
                    a11: q.qquad[0][0],
                    a12: if d == 2 { q.qquad[0][1] } else { R::zero() },
                    a22: if d == 2 { q.qquad[1][1] } else { R::zero() },
                })
            }
            _ => None,
        };
        let len = n_max as usize + 1;
        Ok(Self {
            d,
            n_max,
            kernel,
            shape,
            ray,
            n_cells,
            init_dropped: vec![R::zero(); d],
            size_table: None,
            conv: ConvEngine::new(),
            grid_in: Vec::new(),
            grid_out: Vec::new(),
            occ: Vec::new(),
            occ_sizes: Vec::new(),
            slice_n: vec![R::zero(); len],
            slice_px: vec![R::zero(); len],
            slice_py: vec![R::zero(); len],
            slice_q: vec![R::zero(); len],
            loss_coef: vec![R::zero(); len],
            loss_lin1: vec![R::zero(); len],
            loss_lin2: vec![R::zero(); len],
            loss_q11: vec![R::zero(); len],
            loss_q12: vec![R::zero(); len],
            loss_q22: vec![R::zero(); len],
            force_path: None,
        })
    }

    pub fn state_len(&self) -> usize {
        self.n_cells + self.d
    }

    pub fn from_state(&mut self, state: &LatticeState<R>) -> Result<Vec<R>, SolverError> {
        if state.d() != self.d || state.n_max() != self.n_max {
            return Err(SolverError::InvalidConfig(
                "state shape does not match the engine".into(),
            ));
        }
        self.init_dropped = state.dropped_mass.clone();
        let mut y = vec![R::zero(); self.state_len()];
        for (comp, &n) in &state.concentrations {
            y[self.cell_of(comp)] = n;
        }
        for i in 0..self.d {
            y[self.n_cells + i] = state.escaped_mass[i];
        }
        Ok(y)
    }

    fn cell_of(&self, comp: &Composition) -> usize {
        let s = comp.size();
        if self.d == 1 {
            s as usize - 1
        } else {
            cell2(s, comp.components()[0])
        }
    }

    /// Inline kernel factor for a merged cluster, sum kernels only.
    #[inline]
    fn kappa(&self, sigma: u32, a1: u32) -> R {
        match self.shape {
            Shape::Sum => match &self.kernel.family {
                KernelFamily::Constant { value } => *value,
                KernelFamily::Additive => count::<R>(sigma as usize),
                KernelFamily::RayConstant { .. } => {
                    let c = self.ray.as_ref().unwrap();
                    let s = count::<R>(sigma as usize);
                    let t1 = count::<R>(a1 as usize) / s;
                    if self.d == 1 {
                        c.q0 + c.l1 + c.a11
                    } else {
                        let t2 = R::one() - t1;
                        c.q0 + c.l1 * t1
                            + c.l2 * t2
                            + c.a11 * t1 * t1
                            + (c.a12 + c.a12) * t1 * t2
                            + c.a22 * t2 * t2
                    }
                }
                _ => unreachable!(),
            },
            Shape::SizeOnly => unreachable!("kappa is defined for sum kernels"),
        }
    }

    fn size_kernel(&self, s: u32, t: u32) -> R {
        if let Some(table) = &self.size_table {
            table[s as usize * (self.n_max as usize + 1) + t as usize]
        } else {
            let x = [count::<R>(s as usize)];
            let y = [count::<R>(t as usize)];
            self.kernel.eval_raw(&x, &y)
        }
    }

    fn ensure_size_table(&mut self) {
        if self.shape != Shape::SizeOnly || self.size_table.is_some() {
            return;
        }
        let len = self.n_max as usize + 1;
        if len * len > MAX_SIZE_TABLE {
            return;
        }
        let mut table = vec![R::zero(); len * len];
        for s in 1..len {
            let x = [count::<R>(s)];
            for t in s..len {
                let y = [count::<R>(t)];
                let k = self.kernel.eval_raw(&x, &y);
                table[s * len + t] = k;
                table[t * len + s] = k;
            }
        }
        self.size_table = Some(table);
    }

    /// Scans the state, filling the occupancy list and per-size slice sums.
    fn scan(&mut self, y: &[R]) -> ScanStats<R> {
        self.occ.clear();
        self.occ_sizes.clear();
        for v in self.slice_n.iter_mut() {
            *v = R::zero();
        }
        let ray = self.ray.is_some();
        if ray {
            for v in self.slice_px.iter_mut() {
                *v = R::zero();
            }
            for v in self.slice_py.iter_mut() {
                *v = R::zero();
            }
            for v in self.slice_q.iter_mut() {
                *v = R::zero();
            }
        }
        let mut stats = ScanStats {
            norm1: R::zero(),
            sum_sq: R::zero(),
            a1_max: 0u32,
            a2_max: 0u32,
        };
        let mut s = 1u32;
        let mut slice_end = if self.d == 1 { 1 } else { 2 };
        let mut slice_start = 0usize;
        for idx in 0..self.n_cells {
            if idx == slice_end {
                s += 1;
                slice_start = slice_end;
                slice_end += if self.d == 1 { 1 } else { s as usize + 1 };
            }
            let v = y[idx];
            if v == R::zero() {
                continue;
            }
            let a1 = if self.d == 1 {
                s
            } else {
                (idx - slice_start) as u32
            };
            // Cells of one size are contiguous, so a change of `s` marks a
            // new occupied slice; testing the running sum against zero would
            // double-push a size whose partial sums cancel.
            if self.occ_sizes.last() != Some(&s) {
                self.occ_sizes.push(s);
            }
            self.occ.push((s, a1, v));
            self.slice_n[s as usize] += v;
            if ray && self.d == 2 {
                let a2 = s - a1;
                let (fa1, fa2) = (count::<R>(a1 as usize), count::<R>(a2 as usize));
                let c = self.ray.as_ref().unwrap();
                self.slice_px[s as usize] += fa1 * v;
                self.slice_py[s as usize] += fa2 * v;
                self.slice_q[s as usize] +=
                    (c.a11 * fa1 * fa1 + (c.a12 + c.a12) * fa1 * fa2 + c.a22 * fa2 * fa2) * v;
            }
            let va = v.abs();
            stats.norm1 += va;
            stats.sum_sq += v * v;
            let a1c = if self.d == 1 { s } else { a1 };
            let a2c = if self.d == 1 { 0 } else { s - a1 };
            stats.a1_max = stats.a1_max.max(a1c);
            stats.a2_max = stats.a2_max.max(a2c);
        }
        stats
    }

    /// Per-size loss coefficients: `Lambda(alpha) = sum_beta K(alpha, beta) n_beta`
    /// reduced to slice sums; exact for every shipped family.
    fn prepare_loss(&mut self) {
        let m0: R = self.occ_sizes.iter().map(|&s| self.slice_n[s as usize]).sum();
        match (&self.kernel.family, self.shape) {
            (KernelFamily::Constant { value }, _) => {
                let v = *value;
                for &s in &self.occ_sizes {
                    self.loss_coef[s as usize] = v * m0;
                }
            }
            (KernelFamily::Additive, _) => {
                let m1: R = self
                    .occ_sizes
                    .iter()
                    .map(|&s| count::<R>(s as usize) * self.slice_n[s as usize])
                    .sum();
                for &s in &self.occ_sizes {
                    self.loss_coef[s as usize] = count::<R>(s as usize) * m0 + m1;
                }
            }
            (KernelFamily::RayConstant { .. }, _) => {
                let c = *self.ray.as_ref().unwrap();
                if self.d == 1 {
                    let k = c.q0 + c.l1 + c.a11;
                    for &s in &self.occ_sizes {
                        self.loss_coef[s as usize] = k * m0;
                    }
                } else {
                    for &s in &self.occ_sizes {
                        let su = s as usize;
                        let mut a1 = R::zero();
                        let mut b1x = R::zero();
                        let mut b1y = R::zero();
                        let mut a2 = R::zero();
                        let mut b2x = R::zero();
                        let mut b2y = R::zero();
                        let mut cq = R::zero();
                        let fs = count::<R>(su);
                        for &t in &self.occ_sizes {
                            let tu = t as usize;
                            let inv = (fs + count::<R>(tu)).recip();
                            let inv2 = inv * inv;
                            a1 += self.slice_n[tu] * inv;
                            b1x += self.slice_px[tu] * inv;
                            b1y += self.slice_py[tu] * inv;
                            a2 += self.slice_n[tu] * inv2;
                            b2x += self.slice_px[tu] * inv2;
                            b2y += self.slice_py[tu] * inv2;
                            cq += self.slice_q[tu] * inv2;
                        }
                        self.loss_coef[su] = c.q0 * m0 + c.l1 * b1x + c.l2 * b1y + cq;
                        self.loss_lin1[su] = c.l1 * a1 + (c.a11 + c.a11) * b2x + (c.a12 + c.a12) * b2y;
                        self.loss_lin2[su] = c.l2 * a1 + (c.a22 + c.a22) * b2y + (c.a12 + c.a12) * b2x;
                        self.loss_q11[su] = c.a11 * a2;
                        self.loss_q12[su] = (c.a12 + c.a12) * a2;
                        self.loss_q22[su] = c.a22 * a2;
                    }
                }
            }
            (_, Shape::SizeOnly) => {
                for i in 0..self.occ_sizes.len() {
                    let s = self.occ_sizes[i];
                    let mut acc = R::zero();
                    for j in 0..self.occ_sizes.len() {
                        let t = self.occ_sizes[j];
                        acc += self.size_kernel(s, t) * self.slice_n[t as usize];
                    }
                    self.loss_coef[s as usize] = acc;
                }
            }
            _ => unreachable!(),
        }
    }

    #[inline]
    fn loss_at(&self, s: u32, a1: u32) -> R {
        let su = s as usize;
        match (&self.shape, self.ray.as_ref()) {
            (Shape::Sum, Some(_)) if self.d == 2 => {
                let fa1 = count::<R>(a1 as usize);
                let fa2 = count::<R>((s - a1) as usize);
                self.loss_coef[su]
                    + self.loss_lin1[su] * fa1
                    + self.loss_lin2[su] * fa2
                    + self.loss_q11[su] * fa1 * fa1
                    + self.loss_q12[su] * fa1 * fa2
                    + self.loss_q22[su] * fa2 * fa2
            }
            _ => self.loss_coef[su],
        }
    }

    fn gains_direct(&mut self, out: &mut [R]) {
        let half = R::one() / (R::one() + R::one());
        let n_cells = self.n_cells;
        for i in 0..self.occ.len() {
            let (si, a1i, vi) = self.occ[i];
            for j in i..self.occ.len() {
                let (sj, a1j, vj) = self.occ[j];
                let sigma64 = si as u64 + sj as u64;
                let rate = if i == j {
                    let k = match self.shape {
                        Shape::Sum => self.kappa((sigma64.min(u32::MAX as u64)) as u32, a1i + a1j),
                        Shape::SizeOnly => self.size_kernel(si, sj),
                    };
                    half * k * vi * vi
                } else {
                    let k = match self.shape {
                        Shape::Sum => self.kappa((sigma64.min(u32::MAX as u64)) as u32, a1i + a1j),
                        Shape::SizeOnly => self.size_kernel(si, sj),
                    };
                    k * vi * vj
                };
                if sigma64 <= self.n_max as u64 {
                    let sigma = sigma64 as u32;
                    let cell = if self.d == 1 {
                        sigma as usize - 1
                    } else {
                        cell2(sigma, a1i + a1j)
                    };
                    out[cell] += rate;
                } else if self.d == 1 {
                    out[n_cells] += count::<R>(sigma64 as usize) * rate;
                } else {
                    let m1 = a1i + a1j;
                    let m2 = (sigma64 - m1 as u64) as u32;
                    out[n_cells] += count::<R>(m1 as usize) * rate;
                    out[n_cells + 1] += count::<R>(m2 as usize) * rate;
                }
            }
        }
    }

    fn gains_fft(&mut self, stats: &ScanStats<R>, out: &mut [R]) {
        let half = R::one() / (R::one() + R::one());
        // Provisional grid from the full occupancy fixes the rounding floor;
        // entries below the matching input floor cannot influence outputs
        // above the floor, so they shrink the grid instead.
        let (full_l1, full_l2) = self.grid_dims(stats.a1_max, stats.a2_max);
        let floor = conv_noise_floor(full_l1 * full_l2, stats.sum_sq);
        let input_floor = floor / (count::<R>(4) * stats.norm1.max(R::min_positive_value()));
        let mut a1_max = 0u32;
        let mut a2_max = 0u32;
        for &(s, a1, v) in &self.occ {
            if v.abs() >= input_floor {
                let (c1, c2) = self.grid_coords(s, a1);
                a1_max = a1_max.max(c1);
                a2_max = a2_max.max(c2);
            }
        }
        let (l1, l2) = self.grid_dims(a1_max, a2_max);
        let cells = l1 * l2;
        self.grid_in.clear();
        self.grid_in.resize(cells, R::zero());
        self.grid_out.resize(cells, R::zero());
        for &(s, a1, v) in &self.occ {
            if v.abs() >= input_floor {
                let (c1, c2) = self.grid_coords(s, a1);
                self.grid_in[c1 as usize * l2 + c2 as usize] += v;
            }
        }
        self.conv
            .self_convolve(&self.grid_in, l1, l2, &mut self.grid_out);

        let hi1 = ((2 * a1_max as usize).min(l1 - 1)) as u32;
        let hi2 = ((2 * a2_max as usize).min(l2 - 1)) as u32;
        let n_cells = self.n_cells;
        for c1 in 0..=hi1 {
            let row = c1 as usize * l2;
            for c2 in 0..=hi2 {
                let v = self.grid_out[row + c2 as usize];
                if v.abs() <= floor {
                    continue;
                }
                let (sigma, a1) = if self.d == 1 { (c2, 0) } else { (c1 + c2, c1) };
                if sigma < 2 {
                    continue;
                }
                let rate = half * self.kappa(sigma, a1) * v;
                if sigma <= self.n_max {
                    let cell = if self.d == 1 {
                        sigma as usize - 1
                    } else {
                        cell2(sigma, a1)
                    };
                    out[cell] += rate;
                } else if self.d == 1 {
                    out[n_cells] += count::<R>(sigma as usize) * rate;
                } else {
                    out[n_cells] += count::<R>(a1 as usize) * rate;
                    out[n_cells + 1] += count::<R>((sigma - a1) as usize) * rate;
                }
            }
        }
    }

    fn grid_coords(&self, s: u32, a1: u32) -> (u32, u32) {
        if self.d == 1 {
            (0, s)
        } else {
            (a1, s - a1)
        }
    }

    fn grid_dims(&self, a1_max: u32, a2_max: u32) -> (usize, usize) {
        if self.d == 1 {
            (1, next_fast_len(2 * a2_max as usize + 1))
        } else {
            (
                next_fast_len(2 * a1_max as usize + 1),
                next_fast_len(2 * a2_max as usize + 1),
            )
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct ScanStats<R> {
    norm1: R,
    sum_sq: R,
    a1_max: u32,
    a2_max: u32,
}

impl<R: Real> Engine<R> for DenseEngine<R> {
    type State = Vec<R>;

    fn rhs(&mut self, y: &Self::State, out: &mut Self::State) {
        for v in out.iter_mut() {
            *v = R::zero();
        }
        self.ensure_size_table();
        let stats = self.scan(y);
        if self.occ.is_empty() {
            return;
        }
        self.prepare_loss();
        let occ_len = self.occ.len() as u64;
        let use_fft = match self.force_path {
            Some(GainPath::Fft) => true,
            Some(GainPath::Direct) => false,
            None => {
                self.shape == Shape::Sum && occ_len * occ_len / 2 > DIRECT_PAIR_BUDGET
            }
        };
        if use_fft {
            debug_assert_eq!(self.shape, Shape::Sum);
            self.gains_fft(&stats, out);
        } else {
            self.gains_direct(out);
        }
        for idx in 0..self.occ.len() {
            let (s, a1, v) = self.occ[idx];
            let cell = if self.d == 1 {
                s as usize - 1
            } else {
                cell2(s, a1)
            };
            out[cell] -= v * self.loss_at(s, a1);
        }
    }

    fn zero_like(&self, y: &Self::State) -> Self::State {
        vec![R::zero(); y.len()]
    }

    fn sanitize(&self, y: &mut Self::State, tol: R) -> Option<Vec<R>> {
        let mut clipped = vec![R::zero(); self.d];
        for v in y[self.n_cells..].iter() {
            if *v < -tol {
                return None;
            }
        }
        let mut s = 1u32;
        let mut slice_end = if self.d == 1 { 1 } else { 2 };
        let mut slice_start = 0usize;
        for idx in 0..self.n_cells {
            if idx == slice_end {
                s += 1;
                slice_start = slice_end;
                slice_end += if self.d == 1 { 1 } else { s as usize + 1 };
            }
            let v = y[idx];
            if v >= R::zero() {
                continue;
            }
            if v < -tol {
                return None;
            }
            let a1 = if self.d == 1 {
                s
            } else {
                (idx - slice_start) as u32
            };
            if self.d == 1 {
                clipped[0] += -v * count::<R>(s as usize);
            } else {
                clipped[0] += -v * count::<R>(a1 as usize);
                clipped[1] += -v * count::<R>((s - a1) as usize);
            }
            y[idx] = R::zero();
        }
        for v in y[self.n_cells..].iter_mut() {
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
        let mut s = 1u32;
        let mut slice_end = if self.d == 1 { 1 } else { 2 };
        let mut slice_start = 0usize;
        for idx in 0..self.n_cells {
            if idx == slice_end {
                s += 1;
                slice_start = slice_end;
                slice_end += if self.d == 1 { 1 } else { s as usize + 1 };
            }
            let v = y[idx];
            if v <= R::zero() {
                continue;
            }
            let a1 = if self.d == 1 {
                s
            } else {
                (idx - slice_start) as u32
            };
            if v >= floor {
                let comp = if self.d == 1 {
                    Composition::new(&[s]).unwrap()
                } else {
                    Composition::new(&[a1, s - a1]).unwrap()
                };
                state.concentrations.insert(comp, v);
            } else if self.d == 1 {
                dropped[0] += v * count::<R>(s as usize);
            } else {
                dropped[0] += v * count::<R>(a1 as usize);
                dropped[1] += v * count::<R>((s - a1) as usize);
            }
        }
        state.escaped_mass = y[self.n_cells..].to_vec();
        state.dropped_mass = dropped;
        state
    }

    fn escaped(&self, y: &Self::State) -> Vec<R> {
        y[self.n_cells..].to_vec()
    }

    fn mass_vector(&self, y: &Self::State) -> Vec<R> {
        let mut m = vec![R::zero(); self.d];
        let mut s = 1u32;
        let mut slice_end = if self.d == 1 { 1 } else { 2 };
        let mut slice_start = 0usize;
        for idx in 0..self.n_cells {
            if idx == slice_end {
                s += 1;
                slice_start = slice_end;
                slice_end += if self.d == 1 { 1 } else { s as usize + 1 };
            }
            let v = y[idx];
            if v == R::zero() {
                continue;
            }
            if self.d == 1 {
                m[0] += v * count::<R>(s as usize);
            } else {
                let a1 = (idx - slice_start) as u32;
                m[0] += v * count::<R>(a1 as usize);
                m[1] += v * count::<R>((s - a1) as usize);
            }
        }
        m
    }
}

/// Flat index of composition (a1, s - a1) in the concatenated-slices layout.
#[inline]
fn cell2(s: u32, a1: u32) -> usize {
    let s = s as usize;
    (s - 1) * (s + 2) / 2 + a1 as usize
}

fn cell_count(d: usize, n_max: u32) -> Option<usize> {
    let n = n_max as u64;
    let total = if d == 1 { n } else { n * (n + 3) / 2 };
    if total > 200_000_000 {
        None
    } else {
        Some(total as usize)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{KernelParams, QForm};
    use crate::solver::rhs::rhs;
    use rand::prelude::*;

    fn random_state(
        rng: &mut impl Rng,
        d: usize,
        n_max: u32,
        max_size: u32,
        entries: usize,
    ) -> LatticeState<f64> {
        let mut state = LatticeState::<f64>::new(d, n_max);
        for _ in 0..entries {
            let alpha: Vec<u32> = (0..d).map(|_| rng.random_range(0..max_size)).collect();
            if alpha.iter().all(|&a| a == 0) || alpha.iter().map(|&a| a as u64).sum::<u64>() > n_max as u64 {
                continue;
            }
            state
                .set(Composition::new(&alpha).unwrap(), rng.random::<f64>())
                .unwrap();
        }
        state
    }

    fn kernels_d2() -> Vec<KernelSpec<f64>> {
        let q = QForm::new(1.0, vec![1.0, 0.0], vec![vec![0.2, 0.1], vec![0.1, 0.0]]).unwrap();
        vec![
            KernelSpec::new(
                KernelFamily::Constant { value: 1.7 },
                KernelParams::new(0.0, 0.0, 1.7, 1.7).unwrap(),
            )
            .unwrap(),
            KernelSpec::new(
                KernelFamily::Additive,
                KernelParams::new(1.0, 0.0, 1.0, 1.0).unwrap(),
            )
            .unwrap(),
            KernelSpec::new(
                KernelFamily::RayConstant { q },
                KernelParams::new(0.0, 0.0, 0.5, 3.0).unwrap(),
            )
            .unwrap(),
            KernelSpec::new(
                KernelFamily::Product,
                KernelParams::new(2.0, -1.0, 1.0, 1.0).unwrap(),
            )
            .unwrap(),
            KernelSpec::new(
                KernelFamily::PowerLawPair {
                    lambda: 0.25,
                    scale: 1.0,
                },
                KernelParams::new(0.5, 0.25, 1.0, 1.0).unwrap(),
            )
            .unwrap(),
        ]
    }

    fn dense_rhs_as_map(
        engine: &mut DenseEngine<f64>,
        state: &LatticeState<f64>,
    ) -> (std::collections::BTreeMap<Composition, f64>, Vec<f64>) {
        let y = engine.from_state(state).unwrap();
        let mut out = engine.zero_like(&y);
        engine.rhs(&y, &mut out);
        let d = state.d();
        let n_cells = out.len() - d;
        // Decode manually: to_lattice drops negative entries, and a
        // derivative has plenty of those.
        let mut map = std::collections::BTreeMap::new();
        let mut s = 1u32;
        let mut slice_end = if d == 1 { 1 } else { 2 };
        let mut slice_start = 0usize;
        for idx in 0..n_cells {
            if idx == slice_end {
                s += 1;
                slice_start = slice_end;
                slice_end += if d == 1 { 1 } else { s as usize + 1 };
            }
            let v = out[idx];
            if v == 0.0 {
                continue;
            }
            let comp = if d == 1 {
                Composition::new(&[s]).unwrap()
            } else {
                let a1 = (idx - slice_start) as u32;
                Composition::new(&[a1, s - a1]).unwrap()
            };
            map.insert(comp, v);
        }
        (map, out[n_cells..].to_vec())
    }

    #[test]
    fn dense_direct_matches_reference() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(41);
        for kernel in kernels_d2() {
            for _ in 0..5 {
                let state = random_state(&mut rng, 2, 24, 14, 30);
                if state.support_len() < 2 {
                    continue;
                }
                let reference = rhs(&state, &kernel).unwrap();
                let mut engine = DenseEngine::new(2, 24, kernel.clone()).unwrap();
                engine.force_path = Some(GainPath::Direct);
                let (map, escape) = dense_rhs_as_map(&mut engine, &state);
                compare_maps(&map, &reference.derivative, 1e-12);
                for i in 0..2 {
                    approx::assert_relative_eq!(
                        escape[i],
                        reference.escape_flux[i],
                        max_relative = 1e-12,
                        epsilon = 1e-14
                    );
                }
            }
        }
    }

    #[test]
    fn dense_fft_matches_reference_for_sum_kernels() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(43);
        for kernel in kernels_d2().into_iter().filter(|k| k.is_sum_kernel()) {
            for _ in 0..3 {
                let state = random_state(&mut rng, 2, 40, 24, 60);
                if state.support_len() < 2 {
                    continue;
                }
                let reference = rhs(&state, &kernel).unwrap();
                let mut engine = DenseEngine::new(2, 40, kernel.clone()).unwrap();
                engine.force_path = Some(GainPath::Fft);
                let (map, escape) = dense_rhs_as_map(&mut engine, &state);
                compare_maps(&map, &reference.derivative, 5e-11);
                for i in 0..2 {
                    approx::assert_relative_eq!(
                        escape[i],
                        reference.escape_flux[i],
                        max_relative = 5e-11,
                        epsilon = 1e-13
                    );
                }
            }
        }
    }

    #[test]
    fn dense_d1_matches_reference() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(47);
        let kernel = KernelSpec::new(
            KernelFamily::Constant { value: 2.0 },
            KernelParams::new(0.0, 0.0, 2.0, 2.0).unwrap(),
        )
        .unwrap();
        for force in [GainPath::Direct, GainPath::Fft] {
            for _ in 0..3 {
                let state = random_state(&mut rng, 1, 30, 20, 15);
                if state.support_len() < 2 {
                    continue;
                }
                let reference = rhs(&state, &kernel).unwrap();
                let mut engine = DenseEngine::new(1, 30, kernel.clone()).unwrap();
                engine.force_path = Some(force);
                let (map, escape) = dense_rhs_as_map(&mut engine, &state);
                compare_maps(&map, &reference.derivative, 1e-11);
                approx::assert_relative_eq!(
                    escape[0],
                    reference.escape_flux[0],
                    max_relative = 1e-11,
                    epsilon = 1e-13
                );
            }
        }
    }

    fn compare_maps(
        got: &std::collections::BTreeMap<Composition, f64>,
        want: &std::collections::BTreeMap<Composition, f64>,
        tol: f64,
    ) {
        let scale: f64 = want.values().map(|v| v.abs()).fold(0.0, f64::max);
        for (comp, w) in want {
            let g = got.get(comp).copied().unwrap_or(0.0);
            assert!(
                (g - w).abs() <= tol * scale.max(1e-30),
                "mismatch at {:?}: got {g}, want {w}",
                comp.components()
            );
        }
        for (comp, g) in got {
            if !want.contains_key(comp) {
                assert!(
                    g.abs() <= tol * scale.max(1e-30),
                    "spurious entry at {:?}: {g}",
                    comp.components()
                );
            }
        }
    }
}
