//! FFT-based self-convolution on small-prime-sized 2D grids.
//!
//! Used by the dense engine to evaluate the coagulation gain term for
//! kernels that depend on the colliding pair only through its sum: the gain
//! at a merged composition is then a kernel factor times the discrete
//! self-convolution of the concentration grid.

use std::collections::HashMap;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::real::{count, lit, Real};

pub(crate) struct ConvEngine<R: Real> {
    planner: FftPlanner<R>,
    plans: HashMap<(usize, bool), Arc<dyn Fft<R>>>,
    grid: Vec<Complex<R>>,
    transposed: Vec<Complex<R>>,
    scratch: Vec<Complex<R>>,
}

impl<R: Real> ConvEngine<R> {
    pub fn new() -> Self {
        Self {
            planner: FftPlanner::new(),
            plans: HashMap::new(),
            grid: Vec::new(),
            transposed: Vec::new(),
            scratch: Vec::new(),
        }
    }

    fn plan(&mut self, len: usize, inverse: bool) -> Arc<dyn Fft<R>> {
        self.plans
            .entry((len, inverse))
            .or_insert_with(|| {
                self.planner.plan_fft(
                    len,
                    if inverse {
                        FftDirection::Inverse
                    } else {
                        FftDirection::Forward
                    },
                )
            })
            .clone()
    }

    /// Circular self-convolution of a real `l1 x l2` row-major grid.
    ///
    /// The caller chooses `l1`, `l2` large enough that wrap-around only hits
    /// cells it ignores. `output` is overwritten with the real part of the
    /// convolution; tiny imaginary residue is discarded.
    pub fn self_convolve(&mut self, input: &[R], l1: usize, l2: usize, output: &mut [R]) {
        assert_eq!(input.len(), l1 * l2);
        assert_eq!(output.len(), l1 * l2);
        let cells = l1 * l2;
        self.grid.clear();
        self.grid
            .extend(input.iter().map(|&v| Complex::new(v, R::zero())));
        self.transposed.resize(cells, Complex::new(R::zero(), R::zero()));

        self.fft_rows(l1, l2, false);
        transpose(&self.grid, &mut self.transposed, l1, l2);
        std::mem::swap(&mut self.grid, &mut self.transposed);
        self.fft_rows(l2, l1, false);

        for z in self.grid.iter_mut() {
            *z = *z * *z;
        }

        self.fft_rows(l2, l1, true);
        transpose(&self.grid, &mut self.transposed, l2, l1);
        std::mem::swap(&mut self.grid, &mut self.transposed);
        self.fft_rows(l1, l2, true);

        let scale = (count::<R>(cells)).recip();
        for (out, z) in output.iter_mut().zip(self.grid.iter()) {
            *out = z.re * scale;
        }
    }

    /// In-place FFT of each of the `rows` rows of length `len`.
    fn fft_rows(&mut self, rows: usize, len: usize, inverse: bool) {
        let plan = self.plan(len, inverse);
        let need = plan.get_inplace_scratch_len();
        if self.scratch.len() < need {
            self.scratch.resize(need, Complex::new(R::zero(), R::zero()));
        }
        for r in 0..rows {
            let row = &mut self.grid[r * len..(r + 1) * len];
            plan.process_with_scratch(row, &mut self.scratch);
        }
    }
}

/// Blocked out-of-place transpose of an `l1 x l2` row-major grid into
/// `l2 x l1` layout.
fn transpose<T: Copy>(src: &[T], dst: &mut [T], l1: usize, l2: usize) {
    const BLOCK: usize = 32;
    for i0 in (0..l1).step_by(BLOCK) {
        for j0 in (0..l2).step_by(BLOCK) {
            for i in i0..(i0 + BLOCK).min(l1) {
                for j in j0..(j0 + BLOCK).min(l2) {
                    dst[j * l1 + i] = src[i * l2 + j];
                }
            }
        }
    }
}

/// Smallest length `>= n` whose prime factors are all in {2, 3, 5}.
pub(crate) fn next_fast_len(n: usize) -> usize {
    let mut candidate = n.max(1);
    loop {
        let mut m = candidate;
        for p in [2usize, 3, 5] {
            while m % p == 0 {
                m /= p;
            }
        }
        if m == 1 {
            return candidate;
        }
        candidate += 1;
    }
}

/// Bound on the absolute rounding error of a floored FFT convolution whose
/// input has squared 2-norm `sum_sq`, on a grid of `cells` points. Outputs
/// below this are indistinguishable from rounding noise and get zeroed so
/// exact-zero regions of the state stay exactly zero.
pub(crate) fn conv_noise_floor<R: Real>(cells: usize, sum_sq: R) -> R {
    let bits = lit::<R>((cells.max(2) as f64).log2());
    lit::<R>(16.0) * R::epsilon() * bits * sum_sq
}
