//! Periodic orthonormal 2-D separable wavelet transform.
//!
//! The default family is the 10-tap least-asymmetric Daubechies filter with
//! five vanishing moments (`sym5`). Coefficients are packed in the usual
//! quadrant layout: after each level the approximation occupies the top-left
//! `s/2 x s/2` block and details fill the remaining three quadrants.

use crate::error::{invalid, Result};

/// `sym5` scaling (low-pass synthesis) filter.
pub const SYM5_SCALING: [f64; 10] = [
    0.019538882735286728,
    -0.021101834024758855,
    -0.17532808990845047,
    0.01660210576452232,
    0.6339789634582119,
    0.7234076904024206,
    0.1993975339773936,
    -0.039134249302383094,
    0.029519490925774643,
    0.027333068345077982,
];

pub const DEFAULT_LEVELS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct WaveletSpec {
    pub levels: usize,
    pub lowpass: Vec<f64>,
}

impl Default for WaveletSpec {
    fn default() -> Self {
        Self::sym5(DEFAULT_LEVELS)
    }
}

impl WaveletSpec {
    pub fn sym5(levels: usize) -> Self {
        Self {
            levels,
            lowpass: SYM5_SCALING.to_vec(),
        }
    }

    /// Quadrature mirror high-pass `g[k] = (-1)^k h[L-1-k]`.
    pub fn highpass(&self) -> Vec<f64> {
        let l = self.lowpass.len();
        (0..l)
            .map(|k| {
                let s = if k % 2 == 0 { 1.0 } else { -1.0 };
                s * self.lowpass[l - 1 - k]
            })
            .collect()
    }

    /// Largest `|sum_k h[k] h[k+2m] - delta_m|` and `|sum h - sqrt 2|`.
    pub fn orthonormality_defect(&self) -> f64 {
        let h = &self.lowpass;
        let mut worst = (h.iter().sum::<f64>() - std::f64::consts::SQRT_2).abs();
        for m in 0..h.len().div_ceil(2) {
            let s: f64 = (0..h.len() - 2 * m).map(|k| h[k] * h[k + 2 * m]).sum();
            let target = if m == 0 { 1.0 } else { 0.0 };
            worst = worst.max((s - target).abs());
        }
        worst
    }
}

/// Precomputed transform for square `n x n` arrays.
#[derive(Debug, Clone)]
pub struct Wavelet2D {
    n: usize,
    levels: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Wavelet2D {
    pub fn new(n: usize, spec: &WaveletSpec) -> Result<Self> {
        if spec.lowpass.len() < 2 || spec.lowpass.len() % 2 != 0 {
            return invalid("wavelet filter must have even length");
        }
        if n == 0 || spec.levels == 0 || n % (1usize << spec.levels) != 0 {
            return invalid(format!(
                "side {n} is not divisible by 2^{} for a {}-level transform",
                spec.levels, spec.levels
            ));
        }
        Ok(Self {
            n,
            levels: spec.levels,
            lo: spec.lowpass.clone(),
            hi: spec.highpass(),
        })
    }

    pub fn side(&self) -> usize {
        self.n
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.n * self.n {
            return invalid(format!("expected {} values for a {}x{} transform, got {len}", self.n * self.n, self.n, self.n));
        }
        Ok(())
    }

    /// Field -> coefficients.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x.len())?;
        let mut out = x.to_vec();
        self.forward_in_place(&mut out);
        Ok(out)
    }

    /// Coefficients -> field.
    pub fn inverse(&self, c: &[f64]) -> Result<Vec<f64>> {
        self.check(c.len())?;
        let mut out = c.to_vec();
        self.inverse_in_place(&mut out);
        Ok(out)
    }

    pub fn forward_in_place(&self, data: &mut [f64]) {
        debug_assert_eq!(data.len(), self.n * self.n);
        let n = self.n;
        let tl = self.lo.len();
        let mut line = vec![0.0; n];
        let mut ext = vec![0.0; n + tl];
        let mut out = vec![0.0; n];
        let mut s = n;
        for _ in 0..self.levels {
            for r in 0..s {
                let row = &mut data[r * n..r * n + s];
                self.analyze(row, &mut ext, &mut out[..s]);
                row.copy_from_slice(&out[..s]);
            }
            for c in 0..s {
                for r in 0..s {
                    line[r] = data[r * n + c];
                }
                self.analyze(&line[..s], &mut ext, &mut out[..s]);
                for r in 0..s {
                    data[r * n + c] = out[r];
                }
            }
            s /= 2;
        }
    }

    pub fn inverse_in_place(&self, data: &mut [f64]) {
        debug_assert_eq!(data.len(), self.n * self.n);
        let n = self.n;
        let tl = self.lo.len();
        let mut line = vec![0.0; n];
        let mut ext = vec![0.0; n + tl];
        let mut out = vec![0.0; n];
        let mut s = n >> (self.levels - 1);
        for _ in 0..self.levels {
            for c in 0..s {
                for r in 0..s {
                    line[r] = data[r * n + c];
                }
                self.synthesize(&line[..s], &mut ext, &mut out[..s]);
                for r in 0..s {
                    data[r * n + c] = out[r];
                }
            }
            for r in 0..s {
                let row = &mut data[r * n..r * n + s];
                self.synthesize(row, &mut ext, &mut out[..s]);
                row.copy_from_slice(&out[..s]);
            }
            s *= 2;
        }
    }

    /// One periodic analysis step: `x` (len s) -> `[approx | detail]`.
    fn analyze(&self, x: &[f64], ext: &mut [f64], out: &mut [f64]) {
        let s = x.len();
        let tl = self.lo.len();
        let ext = &mut ext[..s + tl - 2];
        for (i, e) in ext.iter_mut().enumerate() {
            *e = x[i % s];
        }
        let half = s / 2;
        for k in 0..half {
            let w = &ext[2 * k..2 * k + tl];
            let (mut a, mut d) = (0.0, 0.0);
            for j in 0..tl {
                a += self.lo[j] * w[j];
                d += self.hi[j] * w[j];
            }
            out[k] = a;
            out[half + k] = d;
        }
    }

    /// Adjoint of [`Self::analyze`].
    fn synthesize(&self, c: &[f64], ext: &mut [f64], out: &mut [f64]) {
        let s = c.len();
        let tl = self.lo.len();
        let half = s / 2;
        let ext = &mut ext[..s + tl - 2];
        ext.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..half {
            let (a, d) = (c[k], c[half + k]);
            let w = &mut ext[2 * k..2 * k + tl];
            for j in 0..tl {
                w[j] += self.lo[j] * a + self.hi[j] * d;
            }
        }
        out.iter_mut().for_each(|v| *v = 0.0);
        for (i, v) in ext.iter().enumerate() {
            out[i % s] += v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn filter_is_orthonormal() {
        let spec = WaveletSpec::default();
        assert!(spec.orthonormality_defect() < 1e-10);
        let g = spec.highpass();
        assert!(g.iter().sum::<f64>().abs() < 1e-10);
        // five vanishing moments: sum k^p g[k] = 0 for p < 5
        for p in 0..5 {
            let m: f64 = g.iter().enumerate().map(|(k, v)| (k as f64).powi(p) * v).sum();
            assert!(m.abs() < 1e-10 * 10f64.powi(p), "moment {p} = {m}");
        }
    }

    #[test]
    fn perfect_reconstruction_and_energy() {
        for (n, levels) in [(32, 4), (64, 4), (128, 4), (16, 3), (8, 2)] {
            let w = Wavelet2D::new(n, &WaveletSpec::sym5(levels)).unwrap();
            let x = random(n, n as u64);
            let c = w.forward(&x).unwrap();
            let y = w.inverse(&c).unwrap();
            let err: f64 = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!(err / norm(&x) < 1e-10);
            assert!((norm(&c) - norm(&x)).abs() / norm(&x) < 1e-10);
        }
    }

    #[test]
    fn constant_has_no_detail() {
        let n = 32;
        let w = Wavelet2D::new(n, &WaveletSpec::default()).unwrap();
        let c = w.forward(&vec![2.5; n * n]).unwrap();
        let coarse = n >> 4;
        for r in 0..n {
            for col in 0..n {
                if r >= coarse || col >= coarse {
                    assert!(c[r * n + col].abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn unit_coefficient_gives_unit_atom() {
        let n = 16;
        let w = Wavelet2D::new(n, &WaveletSpec::sym5(2)).unwrap();
        for k in [0, 5, 37, 200, 255] {
            let mut e = vec![0.0; n * n];
            e[k] = 1.0;
            let atom = w.inverse(&e).unwrap();
            assert!((norm(&atom) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_is_adjoint_of_inverse() {
        let n = 64;
        let w = Wavelet2D::new(n, &WaveletSpec::default()).unwrap();
        let x = random(n, 1);
        let y = random(n, 2);
        let lhs: f64 = w.forward(&x).unwrap().iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&w.inverse(&y).unwrap()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10 * norm(&x) * norm(&y));
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(Wavelet2D::new(24, &WaveletSpec::sym5(4)).is_err());
        let w = Wavelet2D::new(32, &WaveletSpec::default()).unwrap();
        assert!(w.forward(&[0.0; 10]).is_err());
        assert!(w.inverse(&[0.0; 10]).is_err());
    }
}
