//! Image and phase quality metrics.

use crate::error::{invalid, Error, Result};
use crate::field::Field2D;

/// Reported PSNR for identical inputs.
pub const PSNR_CAP_DB: f64 = 200.0;

fn check_shapes(a: &Field2D, b: &Field2D) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            expected: a.shape(),
            got: b.shape(),
        });
    }
    Ok(())
}

/// Mean squared difference, optionally restricted to `mask[i] == true`.
pub fn mse(a: &Field2D, b: &Field2D, mask: Option<&[bool]>) -> Result<f64> {
    check_shapes(a, b)?;
    let (av, bv) = (a.values(), b.values());
    match mask {
        None => Ok(av.iter().zip(bv).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / av.len() as f64),
        Some(m) => {
            if m.len() != av.len() {
                return invalid(format!("mask has {} entries for {} values", m.len(), av.len()));
            }
            let (mut acc, mut count) = (0.0, 0usize);
            for ((x, y), &keep) in av.iter().zip(bv).zip(m) {
                if keep {
                    acc += (x - y).powi(2);
                    count += 1;
                }
            }
            if count == 0 {
                return invalid("mask selects no entries");
            }
            Ok(acc / count as f64)
        }
    }
}

/// `10 log10(peak^2 / mse)`, saturating at [`PSNR_CAP_DB`].
pub fn psnr(a: &Field2D, b: &Field2D, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return invalid(format!("peak must be positive, got {peak}"));
    }
    Ok(psnr_from_mse(mse(a, b, None)?, peak))
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range `L` of the pixel values.
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl SsimParams {
    /// Normalised 1-D Gaussian taps; the 2-D window is their outer product.
    pub fn taps(&self) -> Vec<f64> {
        let c = (self.window as f64 - 1.0) / 2.0;
        let g: Vec<f64> = (0..self.window)
            .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let s: f64 = g.iter().sum();
        g.into_iter().map(|v| v / s).collect()
    }
}

/// Separable "valid" correlation of an `rows x cols` image with `taps`.
fn filter_valid(img: &[f64], rows: usize, cols: usize, taps: &[f64]) -> Vec<f64> {
    let w = taps.len();
    let (orows, ocols) = (rows - w + 1, cols - w + 1);
    let mut tmp = vec![0.0; rows * ocols];
    for r in 0..rows {
        let row = &img[r * cols..(r + 1) * cols];
        for c in 0..ocols {
            tmp[r * ocols + c] = taps.iter().zip(&row[c..c + w]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; orows * ocols];
    for r in 0..orows {
        for (k, t) in taps.iter().enumerate() {
            let src = &tmp[(r + k) * ocols..(r + k + 1) * ocols];
            for (o, v) in out[r * ocols..(r + 1) * ocols].iter_mut().zip(src) {
                *o += t * v;
            }
        }
    }
    out
}

/// Mean SSIM over all fully contained windows.
pub fn ssim(a: &Field2D, b: &Field2D, p: &SsimParams) -> Result<f64> {
    check_shapes(a, b)?;
    let (rows, cols) = a.shape();
    if p.window == 0 || rows < p.window || cols < p.window {
        return invalid(format!("image {rows}x{cols} is smaller than the {}-pixel window", p.window));
    }
    let taps = p.taps();
    let (av, bv) = (a.values(), b.values());
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { av.iter().zip(bv).map(|(x, y)| f(*x, *y)).collect() };
    let mu_a = filter_valid(av, rows, cols, &taps);
    let mu_b = filter_valid(bv, rows, cols, &taps);
    let aa = filter_valid(&prod(&|x, _| x * x), rows, cols, &taps);
    let bb = filter_valid(&prod(&|_, y| y * y), rows, cols, &taps);
    let ab = filter_valid(&prod(&|x, y| x * y), rows, cols, &taps);
    let c1 = (p.k1 * p.dynamic_range).powi(2);
    let c2 = (p.k2 * p.dynamic_range).powi(2);
    let mut acc = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(acc / mu_a.len() as f64)
}
