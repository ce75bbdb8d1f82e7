//! Barycentric-box partition of the composition simplex.
//!
//! Directions live on the simplex of unit 1-norm; the first d-1 coordinates
//! parametrize it and are cut into boxes of side 1/h. Boundary boxes are
//! clipped by the hyperplane constraint, so their areas and centroids come
//! from the closed-form volume and first moment of a box intersected with a
//! half-space (Irwin-Hall pieces, d <= 4 in practice).

use std::collections::BTreeMap;

use thiserror::Error;

use crate::real::{count, lit, Real};

#[derive(Debug, Error)]
pub enum SimplexError {
    #[error("simplex binning needs d >= 1 and resolution >= 1")]
    InvalidShape,
    #[error("direction must be a nonnegative vector of 1-norm one")]
    InvalidDirection,
}

/// One cell of the partition: its lattice key in the first d-1 axes, its
/// centroid on the simplex, and its Hausdorff measure.
#[derive(Debug, Clone)]
pub struct SimplexCell<R> {
    pub key: Vec<u32>,
    pub center: Vec<R>,
    pub measure: R,
}

#[derive(Debug, Clone)]
pub struct SimplexBinning<R> {
    d: usize,
    resolution: u32,
    cells: Vec<SimplexCell<R>>,
    index: BTreeMap<Vec<u32>, usize>,
}

impl<R: Real> SimplexBinning<R> {
    pub fn new(d: usize, resolution: u32) -> Result<Self, SimplexError> {
        if d == 0 || resolution == 0 {
            return Err(SimplexError::InvalidShape);
        }
        let m = d - 1;
        let h = resolution;
        let mut cells = Vec::new();
        let mut index = BTreeMap::new();
        let scale = lit::<R>(f64::sqrt(d as f64)) / count::<R>(h as usize).powi(m as i32);
        let mut key = vec![0u32; m];
        enumerate_keys(m, 0, h.saturating_sub(1), &mut key, &mut |key: &[u32]| {
            let used: u32 = key.iter().sum();
            let c = (h - used) as f64; // slack in cell units; > 0 by construction
            let volume = box_halfspace_volume(m, c);
            if volume <= 0.0 {
                return;
            }
            let e = if m == 0 {
                0.0
            } else {
                box_halfspace_mean(m, c) / (m as f64 * volume)
            };
            let mut center = Vec::with_capacity(d);
            let mut rest = R::one();
            for &k in key.iter() {
                let coord = lit::<R>((k as f64 + e) / h as f64);
                center.push(coord);
                rest = rest - coord;
            }
            center.push(rest);
            index.insert(key.to_vec(), cells.len());
            cells.push(SimplexCell {
                key: key.to_vec(),
                center,
                measure: scale * lit::<R>(volume),
            });
        });
        Ok(Self {
            d,
            resolution,
            cells,
            index,
        })
    }

    /// Suggested resolution by dimension.
    pub fn default_resolution(d: usize) -> u32 {
        match d {
            0 | 1 => 1,
            2 => 40,
            3 => 12,
            _ => 8,
        }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    pub fn cells(&self) -> &[SimplexCell<R>] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Cell containing the direction `theta` (1-norm one, nonnegative).
    pub fn cell_of(&self, theta: &[R]) -> Result<usize, SimplexError> {
        if theta.len() != self.d {
            return Err(SimplexError::InvalidDirection);
        }
        if self.d == 1 {
            return Ok(0);
        }
        let h = self.resolution;
        let hf = count::<R>(h as usize);
        let mut key = Vec::with_capacity(self.d - 1);
        for &t in &theta[..self.d - 1] {
            if !(t >= R::zero()) || !(t <= R::one()) {
                return Err(SimplexError::InvalidDirection);
            }
            let k = (t * hf).floor().to_u64().unwrap_or(0).min(h as u64 - 1) as u32;
            key.push(k);
        }
        // On a face the floored key can overflow the simplex by one cell;
        // walk the largest coordinate down until the key is admissible.
        while key.iter().sum::<u32>() > h - 1 {
            let mut arg = 0usize;
            for (i, &k) in key.iter().enumerate() {
                if k > key[arg] {
                    arg = i;
                }
            }
            key[arg] -= 1;
        }
        self.index
            .get(&key)
            .copied()
            .ok_or(SimplexError::InvalidDirection)
    }

    /// Total Hausdorff measure of the partition.
    pub fn total_measure(&self) -> R {
        self.cells.iter().map(|c| c.measure).sum()
    }
}

fn enumerate_keys(
    m: usize,
    axis: usize,
    remaining: u32,
    key: &mut [u32],
    emit: &mut impl FnMut(&[u32]),
) {
    if m == 0 {
        emit(&[]);
        return;
    }
    if axis == m - 1 {
        for k in 0..=remaining {
            key[axis] = k;
            emit(key);
        }
        return;
    }
    for k in 0..=remaining {
        key[axis] = k;
        enumerate_keys(m, axis + 1, remaining - k, key, emit);
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    let mut out = 1.0f64;
    for i in 0..k {
        out = out * (n - i) as f64 / (i + 1) as f64;
    }
    out
}

/// Volume of `[0,1]^m` intersected with `{sum u <= c}`.
fn box_halfspace_volume(m: usize, c: f64) -> f64 {
    if m == 0 {
        return 1.0;
    }
    let c = c.min(m as f64);
    if c <= 0.0 {
        return 0.0;
    }
    let mut fact = 1.0f64;
    for i in 1..=m {
        fact *= i as f64;
    }
    let mut vol = 0.0f64;
    for j in 0..=(c.floor() as usize).min(m) {
        let term = binomial(m, j) * (c - j as f64).max(0.0).powi(m as i32);
        vol += if j % 2 == 0 { term } else { -term };
    }
    (vol / fact).clamp(0.0, 1.0)
}

/// First moment `int (sum u) du` over the same region.
fn box_halfspace_mean(m: usize, c: f64) -> f64 {
    if m == 0 {
        return 0.0;
    }
    let c = c.min(m as f64);
    if c <= 0.0 {
        return 0.0;
    }
    let mut fact = 1.0f64; // (m-1)!
    for i in 1..m {
        fact *= i as f64;
    }
    let mut acc = 0.0f64;
    for j in 0..=(c.floor() as usize).min(m) {
        let r = (c - j as f64).max(0.0);
        let piece = r.powi(m as i32 + 1) / (m as f64 + 1.0) + j as f64 * r.powi(m as i32) / m as f64;
        let term = binomial(m, j) * piece;
        acc += if j % 2 == 0 { term } else { -term };
    }
    (acc / fact).max(0.0)
}
