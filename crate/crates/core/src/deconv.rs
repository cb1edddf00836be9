//! Non-blind TV deconvolution.
//!
//! Forward model `v = H u + noise` with `H` periodic convolution by a PSF.
//! The solver is an accelerated proximal-gradient loop whose proximal step is
//! Chambolle's dual fixed-point TV denoiser.

use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::fft::Fft2;
use crate::field::Field2D;
use crate::optics::Psf;
use crate::solver::{power_iteration, LinOp};

/// Chambolle dual step (stable for `<= 1/8`).
const CHAMBOLLE_STEP: f64 = 0.125;
const CHAMBOLLE_TOL: f64 = 1e-6;

/// Periodic convolution with a PSF centred at `(n/2, n/2)`.
pub struct BlurOp {
    rows: usize,
    cols: usize,
    otf: Vec<Complex64>,
    fft: Fft2,
}

impl BlurOp {
    /// The PSF is wrapped onto the image lattice (cropping by aliasing when larger).
    pub fn new(psf: &Psf, rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return invalid("image lattice must be non-empty");
        }
        let k = psf.size();
        let c = k / 2;
        let mut kernel = vec![Complex64::new(0.0, 0.0); rows * cols];
        for (idx, &v) in psf.intensity.values().iter().enumerate() {
            let (r, col) = (idx / k, idx % k);
            let rr = (r as i64 - c as i64).rem_euclid(rows as i64) as usize;
            let cc = (col as i64 - c as i64).rem_euclid(cols as i64) as usize;
            kernel[rr * cols + cc] += v;
        }
        let fft = Fft2::new(rows, cols);
        fft.forward(&mut kernel);
        Ok(Self {
            rows,
            cols,
            otf: kernel,
            fft,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    fn filter(&self, x: &[f64], conj: bool) -> Vec<f64> {
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fft.forward(&mut buf);
        for (b, h) in buf.iter_mut().zip(&self.otf) {
            *b *= if conj { h.conj() } else { *h };
        }
        self.fft.inverse(&mut buf);
        let s = 1.0 / (self.rows * self.cols) as f64;
        buf.iter().map(|z| z.re * s).collect()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.filter(x, false)
    }

    /// Convolution with the 180-degree rotated PSF.
    pub fn adjoint(&self, y: &[f64]) -> Vec<f64> {
        self.filter(y, true)
    }

    /// `|H* H|` from 50 power iterations.
    pub fn normal_norm(&self) -> f64 {
        power_iteration(self.rows * self.cols, 0xB1u64, |x, out| {
            out.copy_from_slice(&self.adjoint(&self.forward(x)));
        })
    }

    /// `max |OTF|^2`, the exact value of `|H* H|`.
    pub fn normal_norm_exact(&self) -> f64 {
        self.otf.iter().map(|z| z.norm_sqr()).fold(0.0, f64::max)
    }
}

impl LinOp for BlurOp {
    fn in_dim(&self) -> usize {
        self.rows * self.cols
    }

    fn out_dim(&self) -> usize {
        self.rows * self.cols
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.copy_from_slice(&self.forward(x));
    }

    fn apply_adjoint(&self, y: &[f64], x: &mut [f64]) {
        x.copy_from_slice(&self.adjoint(y));
    }
}

pub fn convolve(u: &Field2D, op: &BlurOp) -> Result<Field2D> {
    if u.shape() != op.shape() {
        return Err(Error::ShapeMismatch {
            expected: op.shape(),
            got: u.shape(),
        });
    }
    u.with_values(op.forward(u.values()))
}

fn grad(u: &[f64], rows: usize, cols: usize, gx: &mut [f64], gy: &mut [f64]) {
    for r in 0..rows {
        let row = &u[r * cols..(r + 1) * cols];
        let gxr = &mut gx[r * cols..(r + 1) * cols];
        for c in 0..cols - 1 {
            gxr[c] = row[c + 1] - row[c];
        }
        gxr[cols - 1] = 0.0;
        let gyr = &mut gy[r * cols..(r + 1) * cols];
        if r + 1 < rows {
            let next = &u[(r + 1) * cols..(r + 2) * cols];
            for c in 0..cols {
                gyr[c] = next[c] - row[c];
            }
        } else {
            gyr.fill(0.0);
        }
    }
}

/// Negative adjoint of [`grad`].
fn div(px: &[f64], py: &[f64], rows: usize, cols: usize, out: &mut [f64]) {
    for r in 0..rows {
        let pxr = &px[r * cols..(r + 1) * cols];
        let o = &mut out[r * cols..(r + 1) * cols];
        if cols == 1 {
            o[0] = 0.0;
        } else {
            o[0] = pxr[0];
            for c in 1..cols - 1 {
                o[c] = pxr[c] - pxr[c - 1];
            }
            o[cols - 1] = -pxr[cols - 2];
        }
        if rows == 1 {
            continue;
        }
        let pyr = &py[r * cols..(r + 1) * cols];
        if r == 0 {
            for c in 0..cols {
                o[c] += pyr[c];
            }
        } else {
            let prev = &py[(r - 1) * cols..r * cols];
            if r + 1 == rows {
                for c in 0..cols {
                    o[c] -= prev[c];
                }
            } else {
                for c in 0..cols {
                    o[c] += pyr[c] - prev[c];
                }
            }
        }
    }
}

/// Isotropic discrete total variation (forward differences, Neumann boundary).
pub fn total_variation(u: &Field2D) -> f64 {
    let (rows, cols) = u.shape();
    let n = rows * cols;
    let (mut gx, mut gy) = (vec![0.0; n], vec![0.0; n]);
    grad(u.values(), rows, cols, &mut gx, &mut gy);
    gx.iter().zip(&gy).map(|(a, b)| (a * a + b * b).sqrt()).sum()
}

/// Chambolle dual variable; reused across calls with the same weight as a warm start.
struct TvDual {
    px: Vec<f64>,
    py: Vec<f64>,
}

impl TvDual {
    fn zeros(n: usize) -> Self {
        Self {
            px: vec![0.0; n],
            py: vec![0.0; n],
        }
    }
}

fn tv_prox(w: &[f64], rows: usize, cols: usize, gamma: f64, iters: usize, dual: &mut TvDual) -> Vec<f64> {
    if gamma == 0.0 {
        return w.to_vec();
    }
    let n = rows * cols;
    let TvDual { px, py } = dual;
    let (mut gx, mut gy) = (vec![0.0; n], vec![0.0; n]);
    let mut d = vec![0.0; n];
    for _ in 0..iters {
        div(px, py, rows, cols, &mut d);
        for (di, wi) in d.iter_mut().zip(w) {
            *di -= wi / gamma;
        }
        grad(&d, rows, cols, &mut gx, &mut gy);
        let (mut change, mut size) = (0.0, 0.0);
        for i in 0..n {
            let inv = 1.0 / (1.0 + CHAMBOLLE_STEP * (gx[i] * gx[i] + gy[i] * gy[i]).sqrt());
            let nx = (px[i] + CHAMBOLLE_STEP * gx[i]) * inv;
            let ny = (py[i] + CHAMBOLLE_STEP * gy[i]) * inv;
            change += (nx - px[i]).powi(2) + (ny - py[i]).powi(2);
            size += nx * nx + ny * ny;
            px[i] = nx;
            py[i] = ny;
        }
        if change.sqrt() <= CHAMBOLLE_TOL * size.sqrt() {
            break;
        }
    }
    div(px, py, rows, cols, &mut d);
    w.iter().zip(&d).map(|(wi, di)| wi - gamma * di).collect()
}

/// `argmin_u 1/2 |u - w|^2 + gamma TV(u)` by Chambolle's projection algorithm.
pub fn tv_denoise(w: &Field2D, gamma: f64, iters: usize) -> Result<Field2D> {
    if !(gamma >= 0.0) {
        return invalid(format!("gamma must be non-negative, got {gamma}"));
    }
    let (rows, cols) = w.shape();
    w.with_values(tv_prox(w.values(), rows, cols, gamma, iters, &mut TvDual::zeros(rows * cols)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeconvOpts {
    /// TV weight.
    pub gamma: f64,
    /// Gradient step; `None` uses `0.9 / |H* H|`.
    pub mu: Option<f64>,
    pub inner_tv_iters: usize,
    pub outer_iters: usize,
    pub tol: f64,
}

impl Default for DeconvOpts {
    fn default() -> Self {
        Self {
            gamma: 1e-3,
            mu: None,
            inner_tv_iters: 50,
            outer_iters: 200,
            tol: 1e-5,
        }
    }
}

impl DeconvOpts {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return invalid(format!("gamma must be non-negative, got {}", self.gamma));
        }
        if let Some(mu) = self.mu {
            if !(mu > 0.0) {
                return invalid(format!("mu must be positive, got {mu}"));
            }
        }
        if self.outer_iters == 0 || self.inner_tv_iters == 0 {
            return invalid("iteration counts must be positive");
        }
        if !(self.tol > 0.0) {
            return invalid("tol must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeconvResult {
    pub image: Field2D,
    /// `1/2 |H u - v|^2 + gamma TV(u)` after every iteration.
    pub objective: Vec<f64>,
    pub converged: bool,
    pub mu: f64,
}

/// Accelerated TV deconvolution started from `u = v`.
///
/// Momentum follows `y+ = u+ + (tau / tau+) (u+ - u)`; the proximal step uses
/// weight `mu * gamma` so that `gamma` is the weight of the TV term.
pub fn tv_deconvolve(v: &Field2D, op: &BlurOp, opts: &DeconvOpts) -> Result<DeconvResult> {
    opts.validate()?;
    if v.shape() != op.shape() {
        return Err(Error::ShapeMismatch {
            expected: op.shape(),
            got: v.shape(),
        });
    }
    let (rows, cols) = v.shape();
    let mu = match opts.mu {
        Some(mu) => mu,
        None => 0.9 / op.normal_norm_exact(),
    };
    let vv = v.values();
    let mut u = vv.to_vec();
    let mut y = u.clone();
    let mut tau = 1.0f64;
    let mut objective = Vec::with_capacity(opts.outer_iters);
    let mut converged = false;
    let mut dual = TvDual::zeros(rows * cols);
    for it in 1..=opts.outer_iters {
        let hy = op.forward(&y);
        let resid: Vec<f64> = vv.iter().zip(&hy).map(|(a, b)| a - b).collect();
        let step = op.adjoint(&resid);
        let w: Vec<f64> = y.iter().zip(&step).map(|(a, b)| a + mu * b).collect();
        let u_next = tv_prox(&w, rows, cols, mu * opts.gamma, opts.inner_tv_iters, &mut dual);

        let hu = op.forward(&u_next);
        let fit: f64 = 0.5 * hu.iter().zip(vv).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let obj = fit + opts.gamma * total_variation(&v.with_values(u_next.clone())?);
        if !obj.is_finite() {
            return Err(Error::Divergence {
                iteration: it,
                what: format!("deconvolution objective became {obj}"),
            });
        }
        objective.push(obj);

        let tau_next = 0.5 * (1.0 + (1.0 + 4.0 * tau * tau).sqrt());
        let beta = tau / tau_next;
        let (mut change, mut size) = (0.0, 0.0);
        for i in 0..u.len() {
            let d = u_next[i] - u[i];
            change += d * d;
            size += u_next[i] * u_next[i];
            y[i] = u_next[i] + beta * d;
        }
        u = u_next;
        tau = tau_next;
        if change.sqrt() <= opts.tol * size.sqrt().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }
    Ok(DeconvResult {
        image: v.with_values(u)?,
        objective,
        converged,
        mu,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::adjoint_defect;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(rows: usize, cols: usize, seed: u64) -> Field2D {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Field2D::new(rows, cols, 1.0, (0.0, 0.0), (0..rows * cols).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    fn random_psf(k: usize, seed: u64) -> Psf {
        Psf::from_intensity(random_field(k, k, seed)).unwrap()
    }

    #[test]
    fn delta_is_identity_and_constants_survive() {
        let u = random_field(16, 16, 1);
        let op = BlurOp::new(&Psf::delta(16).unwrap(), 16, 16).unwrap();
        for (a, b) in convolve(&u, &op).unwrap().values().iter().zip(u.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        let c = u.map(|_| 0.37).unwrap();
        let op = BlurOp::new(&random_psf(7, 2), 16, 16).unwrap();
        assert!(convolve(&c, &op).unwrap().values().iter().all(|v| (v - 0.37).abs() < 1e-12));
    }

    #[test]
    fn matches_spatial_cyclic_convolution() {
        let n = 16;
        let u = random_field(n, n, 3);
        let psf = random_psf(n, 4);
        let op = BlurOp::new(&psf, n, n).unwrap();
        let fast = convolve(&u, &op).unwrap();
        let k = psf.intensity.values();
        let c = (n / 2) as i64;
        for r in 0..n {
            for col in 0..n {
                let mut acc = 0.0;
                for a in 0..n {
                    for b in 0..n {
                        let rr = (r as i64 - (a as i64 - c)).rem_euclid(n as i64) as usize;
                        let cc = (col as i64 - (b as i64 - c)).rem_euclid(n as i64) as usize;
                        acc += k[a * n + b] * u.values()[rr * n + cc];
                    }
                }
                assert!((acc - fast.get(r, col)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn adjoint_and_norm() {
        let op = BlurOp::new(&random_psf(9, 5), 32, 24).unwrap();
        assert!(adjoint_defect(&op, 4, 11) < 1e-8);
        let (p, e) = (op.normal_norm(), op.normal_norm_exact());
        assert!((p - e).abs() / e < 1e-3 && (e - 1.0).abs() < 1e-12);
        let bad = random_field(8, 8, 1);
        assert!(convolve(&bad, &op).is_err());
    }

    #[test]
    fn tv_denoise_trivial_cases() {
        let w = random_field(12, 12, 6);
        assert_eq!(tv_denoise(&w, 0.0, 50).unwrap(), w);
        let c = w.map(|_| 0.4).unwrap();
        for v in tv_denoise(&c, 0.3, 50).unwrap().values() {
            assert!((v - 0.4).abs() < 1e-12);
        }
        assert!(tv_denoise(&w, -1.0, 5).is_err());
    }

    #[test]
    fn two_pixel_problem_closed_form() {
        let (a, b) = (0.2, 1.0);
        let w = Field2D::new(1, 2, 1.0, (0.0, 0.0), vec![a, b]).unwrap();
        // flat once gamma >= |b - a| / 2; the dual stop at 1e-6 leaves ~gamma * 4e-6 in u
        let flat = tv_denoise(&w, 0.5, 2000).unwrap();
        for v in flat.values() {
            assert!((v - 0.6).abs() < 1e-5);
        }
        let g = 0.1;
        let part = tv_denoise(&w, g, 2000).unwrap();
        assert!((part.get(0, 0) - (a + g)).abs() < 1e-5);
        assert!((part.get(0, 1) - (b - g)).abs() < 1e-5);
    }

    #[test]
    fn tv_denoise_is_non_expansive() {
        for seed in 0..5 {
            let a = random_field(16, 16, 100 + seed);
            let b = random_field(16, 16, 200 + seed);
            let da = tv_denoise(&a, 0.2, 100).unwrap();
            let db = tv_denoise(&b, 0.2, 100).unwrap();
            let d_in: f64 = a.values().iter().zip(b.values()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let d_out: f64 = da.values().iter().zip(db.values()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            assert!(d_out <= d_in + 1e-8);
        }
    }

    #[test]
    fn delta_psf_deconvolution_is_identity() {
        let v = random_field(32, 32, 9);
        let op = BlurOp::new(&Psf::delta(32).unwrap(), 32, 32).unwrap();
        let out = tv_deconvolve(&v, &op, &DeconvOpts { gamma: 0.0, ..Default::default() }).unwrap();
        assert!(out.converged);
        let err: f64 = out.image.values().iter().zip(v.values()).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        assert!((err / 1024.0).sqrt() < 1e-5);
    }

    #[test]
    fn objective_envelope_is_non_increasing() {
        let truth = random_field(32, 32, 10);
        let op = BlurOp::new(&random_psf(5, 11), 32, 32).unwrap();
        let v = convolve(&truth, &op).unwrap();
        let out = tv_deconvolve(&v, &op, &DeconvOpts { gamma: 1e-3, outer_iters: 60, ..Default::default() }).unwrap();
        let mut best = f64::INFINITY;
        for &o in &out.objective {
            assert!(o.is_finite());
            best = best.min(o);
        }
        assert!(best <= out.objective[0]);
    }
}
