//! Random phase screens with modified Von Karman statistics.
//!
//! The screen is a random Fourier series: each FFT bin receives a circular
//! complex Gaussian amplitude whose variance is the PSD integrated over the
//! bin, and the real part of the inverse transform is kept. Low-frequency
//! power that the FFT grid cannot represent is added back with
//! Lane/Johansson-Gavel subharmonics (3x3 sub-grids around DC, each level a
//! factor of three finer).
//!
//! Frequencies are in cycles per metre, for which the phase PSD reads
//! `0.023 r0^(-5/3) (f^2 + f0^2)^(-11/6) exp(-(f/fm)^2)` with `f0 = 1/L0`
//! and `fm = 5.92 / (2 pi l0)`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Result};
use crate::fft::{freq_index, Fft2};
use crate::field::Field2D;

/// Bins within this many cells of DC get a cell-averaged PSD weight.
const INTEGRATED_BINS: i64 = 3;
/// Midpoint samples per side when averaging the PSD over a cell.
const CELL_QUADRATURE: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct TurbulenceParams {
    /// Fried parameter in metres.
    pub r0: f64,
    /// Outer scale `L0` in metres.
    pub outer_scale: f64,
    /// Inner scale `l0` in metres.
    pub inner_scale: f64,
    /// Physical side length of the screen in metres.
    pub screen_size: f64,
    /// Cells per side; must be a power of two.
    pub n: usize,
    pub seed: u64,
    /// Number of subharmonic levels (0 disables the correction).
    pub subharmonics: usize,
}

impl Default for TurbulenceParams {
    fn default() -> Self {
        Self {
            r0: 0.02,
            outer_scale: 10.0,
            inner_scale: 0.001,
            screen_size: 0.10,
            n: 128,
            seed: 0,
            subharmonics: 3,
        }
    }
}

impl TurbulenceParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.r0 > 0.0) {
            return invalid(format!("r0 must be positive, got {}", self.r0));
        }
        if !(self.inner_scale > 0.0 && self.outer_scale > self.inner_scale) {
            return invalid(format!(
                "need L0 > l0 > 0, got L0={} l0={}",
                self.outer_scale, self.inner_scale
            ));
        }
        if !(self.screen_size > 0.0) {
            return invalid(format!("screen size must be positive, got {}", self.screen_size));
        }
        if self.n < 2 || !self.n.is_power_of_two() {
            return invalid(format!("screen grid must be a power of two, got {}", self.n));
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        self.screen_size / self.n as f64
    }

    /// Phase PSD at spatial frequency `f` (cycles per metre), rad^2 m^2.
    pub fn psd(&self, f2: f64) -> f64 {
        let f0 = 1.0 / self.outer_scale;
        let fm = 5.92 / (2.0 * PI * self.inner_scale);
        0.023 * self.r0.powf(-5.0 / 3.0) * (f2 + f0 * f0).powf(-11.0 / 6.0) * (-f2 / (fm * fm)).exp()
    }

    /// PSD integrated over the square frequency cell of side `df` centred at `(fx, fy)`.
    fn cell_power(&self, fx: f64, fy: f64, df: f64) -> f64 {
        let q = CELL_QUADRATURE;
        let mut acc = 0.0;
        for a in 0..q {
            let ux = fx + df * ((a as f64 + 0.5) / q as f64 - 0.5);
            for b in 0..q {
                let uy = fy + df * ((b as f64 + 0.5) / q as f64 - 0.5);
                acc += self.psd(ux * ux + uy * uy);
            }
        }
        acc / (q * q) as f64 * df * df
    }
}

fn complex_normal(rng: &mut ChaCha8Rng) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im)
}

/// Zero-mean phase screen in radians on a centred `n x n` lattice.
pub fn generate_phase_screen(p: &TurbulenceParams) -> Result<Field2D> {
    p.validate()?;
    let n = p.n;
    let h = p.spacing();
    let df = 1.0 / p.screen_size;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);

    let mut spec = vec![Complex64::new(0.0, 0.0); n * n];
    for r in 0..n {
        let ky = freq_index(r, n);
        for c in 0..n {
            let kx = freq_index(c, n);
            let g = complex_normal(&mut rng);
            if kx == 0 && ky == 0 {
                continue;
            }
            let (fx, fy) = (kx as f64 * df, ky as f64 * df);
            let w = if kx.abs() <= INTEGRATED_BINS && ky.abs() <= INTEGRATED_BINS {
                p.cell_power(fx, fy, df)
            } else {
                p.psd(fx * fx + fy * fy) * df * df
            };
            spec[r * n + c] = g * w.sqrt();
        }
    }
    Fft2::new(n, n).inverse(&mut spec);
    let mut values: Vec<f64> = spec.iter().map(|z| z.re).collect();

    let o = -0.5 * (n as f64 - 1.0) * h;
    for level in 1..=p.subharmonics {
        let d = df / 3f64.powi(level as i32);
        for b in -1i32..=1 {
            for a in -1i32..=1 {
                let g = complex_normal(&mut rng);
                if a == 0 && b == 0 {
                    continue;
                }
                let (fx, fy) = (a as f64 * d, b as f64 * d);
                let amp = g * p.cell_power(fx, fy, d).sqrt();
                let phasor = |f: f64, i: usize| Complex64::from_polar(1.0, 2.0 * PI * f * (o + i as f64 * h));
                let ex: Vec<Complex64> = (0..n).map(|c| phasor(fx, c)).collect();
                for r in 0..n {
                    let row = amp * phasor(fy, r);
                    for c in 0..n {
                        values[r * n + c] += (row * ex[c]).re;
                    }
                }
            }
        }
    }

    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.iter_mut().for_each(|v| *v -= mean);
    Field2D::centered(n, h, values)
}

/// Kolmogorov phase structure function `6.88 (r / r0)^(5/3)`.
pub fn kolmogorov_structure(r: f64, r0: f64) -> f64 {
    6.88 * (r / r0).powf(5.0 / 3.0)
}
