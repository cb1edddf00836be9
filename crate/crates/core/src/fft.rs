//! Thin 2-D wrapper over `rustfft` (unnormalised in both directions).

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub(crate) struct Fft2 {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            rows,
            cols,
            row_fwd: planner.plan_fft_forward(cols),
            row_inv: planner.plan_fft_inverse(cols),
            col_fwd: planner.plan_fft_forward(rows),
            col_inv: planner.plan_fft_inverse(rows),
        }
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.run(data, &self.row_fwd, &self.col_fwd);
    }

    pub fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, &self.row_inv, &self.col_inv);
    }

    /// Row pass in place, then the column pass on a transposed copy.
    fn run(&self, data: &mut [Complex64], row: &Arc<dyn Fft<f64>>, col: &Arc<dyn Fft<f64>>) {
        debug_assert_eq!(data.len(), self.rows * self.cols);
        let (rows, cols) = (self.rows, self.cols);
        let mut scratch = vec![Complex64::new(0.0, 0.0); row.get_inplace_scratch_len().max(col.get_inplace_scratch_len())];
        row.process_with_scratch(data, &mut scratch);
        let mut t = vec![Complex64::new(0.0, 0.0); rows * cols];
        transpose(data, &mut t, rows, cols);
        col.process_with_scratch(&mut t, &mut scratch);
        transpose(&t, data, cols, rows);
    }
}

/// `dst` (cols x rows) = transpose of `src` (rows x cols), in cache-sized tiles.
fn transpose(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
    const TILE: usize = 16;
    for r0 in (0..rows).step_by(TILE) {
        for c0 in (0..cols).step_by(TILE) {
            for r in r0..(r0 + TILE).min(rows) {
                for c in c0..(c0 + TILE).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

/// Circular shift moving index `(0, 0)` to `(rows/2, cols/2)`.
pub(crate) fn fftshift<T: Copy>(data: &[T], rows: usize, cols: usize) -> Vec<T> {
    roll(data, rows, cols, rows / 2, cols / 2)
}

/// Inverse of [`fftshift`] (differs for odd sizes).
pub(crate) fn ifftshift<T: Copy>(data: &[T], rows: usize, cols: usize) -> Vec<T> {
    roll(data, rows, cols, rows - rows / 2, cols - cols / 2)
}

fn roll<T: Copy>(data: &[T], rows: usize, cols: usize, dr: usize, dc: usize) -> Vec<T> {
    let mut out = data.to_vec();
    for r in 0..rows {
        let rr = (r + dr) % rows;
        for c in 0..cols {
            out[rr * cols + (c + dc) % cols] = data[r * cols + c];
        }
    }
    out
}

/// `numpy.fft.fftfreq`-style integer frequency of bin `k` on an `n`-point grid.
pub(crate) fn freq_index(k: usize, n: usize) -> i64 {
    if k < n.div_ceil(2) {
        k as i64
    } else {
        k as i64 - n as i64
    }
}
