//! Zernike polynomials on the unit disk and least-squares fitting of their
//! gradients to slope measurements.
//!
//! Polynomials use the plain `R_n^m(rho) cos(m phi)` / `R_n^m(rho) sin(m phi)`
//! form without normalisation constants, enumerated by Noll index.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{invalid, Result};
use crate::field::{ApertureSpec, Field2D};
use crate::shi::LensletSet;

/// Relative singular-value cutoff of the pseudo-inverse.
pub const PINV_RCOND: f64 = 1e-10;

/// Default fit order: Noll terms 1..=36, radial degree up to 7.
pub const DEFAULT_ORDER: usize = 35;

/// Noll index with its radial degree `n` and signed azimuthal frequency `m`.
///
/// `m >= 0` selects the cosine (even) member, `m < 0` the sine (odd) one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ZernikeIndex {
    noll: usize,
    n: u32,
    m: i32,
}

impl ZernikeIndex {
    pub fn from_noll(noll: usize) -> Result<Self> {
        if noll == 0 {
            return invalid("Noll indices start at 1");
        }
        let mut n = 0usize;
        let mut j1 = noll - 1;
        while j1 > n {
            n += 1;
            j1 -= n;
        }
        let mag = (n % 2) + 2 * ((j1 + (n + 1) % 2) / 2);
        let m = if noll % 2 == 0 { mag as i32 } else { -(mag as i32) };
        Ok(Self {
            noll,
            n: n as u32,
            m,
        })
    }

    pub fn from_nm(n: u32, m: i32) -> Result<Self> {
        let am = m.unsigned_abs();
        if am > n || (n - am) % 2 != 0 {
            return invalid(format!("no Zernike polynomial with n={n}, m={m}"));
        }
        // radial order n holds Noll indices n(n+1)/2 + 1 ..= (n+1)(n+2)/2
        let first = (n * (n + 1) / 2 + 1) as usize;
        let last = ((n + 1) * (n + 2) / 2) as usize;
        (first..=last)
            .map(|j| Self::from_noll(j).expect("positive index"))
            .find(|k| k.m == m || (am == 0 && k.m == 0))
            .ok_or_else(|| crate::Error::InvalidArgument(format!("no Noll index for ({n},{m})")))
    }

    pub fn noll(&self) -> usize {
        self.noll
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn m(&self) -> i32 {
        self.m
    }
}

fn factorial(k: u32) -> f64 {
    (1..=k).map(f64::from).product()
}

/// Coefficients of `R_n^m` as `(c_k, n - 2k)` pairs.
fn radial_terms(n: u32, m: u32) -> Vec<(f64, u32)> {
    (0..=(n - m) / 2)
        .map(|k| {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            let c = sign * factorial(n - k)
                / (factorial(k) * factorial((n + m) / 2 - k) * factorial((n - m) / 2 - k));
            (c, n - 2 * k)
        })
        .collect()
}

/// Radial polynomial `R_n^m(rho)` for `m >= 0`.
pub fn radial_poly(n: u32, m: u32, rho: f64) -> Result<f64> {
    if m > n || (n - m) % 2 != 0 {
        return invalid(format!("radial polynomial needs n >= m and n - m even, got ({n},{m})"));
    }
    if !(0.0..=1.0).contains(&rho) {
        return invalid(format!("rho must lie in [0, 1], got {rho}"));
    }
    Ok(radial_terms(n, m)
        .iter()
        .map(|&(c, p)| c * rho.powi(p as i32))
        .sum())
}

/// Precomputed polynomial for one Noll index; evaluates in polar or Cartesian form.
#[derive(Debug, Clone)]
pub struct ZernikeTerm {
    index: ZernikeIndex,
    radial: Vec<(f64, u32)>,
}

impl ZernikeTerm {
    pub fn new(index: ZernikeIndex) -> Self {
        let radial = radial_terms(index.n, index.m.unsigned_abs());
        Self { index, radial }
    }

    pub fn index(&self) -> ZernikeIndex {
        self.index
    }

    pub fn eval_polar(&self, rho: f64, theta: f64) -> f64 {
        let r: f64 = self.radial.iter().map(|&(c, p)| c * rho.powi(p as i32)).sum();
        let m = self.index.m;
        if m >= 0 {
            r * (m as f64 * theta).cos()
        } else {
            r * ((-m) as f64 * theta).sin()
        }
    }

    pub fn eval_xy(&self, x: f64, y: f64) -> f64 {
        self.eval_polar(x.hypot(y), y.atan2(x))
    }

    /// Cartesian gradient, via `rho^(n-2k) e^{i m phi} = (x^2+y^2)^s (x+iy)^m`,
    /// so no polar singularity at the origin.
    pub fn gradient_xy(&self, x: f64, y: f64) -> (f64, f64) {
        let m = self.index.m.unsigned_abs();
        let z = Complex64::new(x, y);
        let zm = z.powu(m);
        let zm1 = if m > 0 { z.powu(m - 1) } else { Complex64::new(0.0, 0.0) };
        let mf = m as f64;
        // angular factor T and its partials
        let (t, tx, ty) = if self.index.m >= 0 {
            (zm.re, mf * zm1.re, -mf * zm1.im)
        } else {
            (zm.im, mf * zm1.im, mf * zm1.re)
        };
        let q = x * x + y * y;
        let (mut gx, mut gy) = (0.0, 0.0);
        for &(c, p) in &self.radial {
            let s = (p - m) / 2;
            let qs = q.powi(s as i32);
            gx += c * qs * tx;
            gy += c * qs * ty;
            if s > 0 {
                let dq = 2.0 * s as f64 * q.powi(s as i32 - 1) * t;
                gx += c * dq * x;
                gy += c * dq * y;
            }
        }
        (gx, gy)
    }
}

/// `Z_k(rho, phi)`.
pub fn zernike_eval(k: ZernikeIndex, rho: f64, phi: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&rho) {
        return invalid(format!("rho must lie in [0, 1], got {rho}"));
    }
    Ok(ZernikeTerm::new(k).eval_polar(rho, phi))
}

/// Cartesian partial derivatives of `Z_k` at unit-disk coordinates `(x, y)`.
pub fn zernike_gradient(k: ZernikeIndex, x: f64, y: f64) -> Result<(f64, f64)> {
    if x * x + y * y > 1.0 + 1e-12 {
        return invalid(format!("({x}, {y}) lies outside the unit disk"));
    }
    Ok(ZernikeTerm::new(k).gradient_xy(x, y))
}

/// Terms for Noll indices `1..=order+1`.
pub fn terms(order: usize) -> Vec<ZernikeTerm> {
    (1..=order + 1)
        .map(|j| ZernikeTerm::new(ZernikeIndex::from_noll(j).expect("positive index")))
        .collect()
}

/// `2M x (L+1)` matrix of Zernike slopes at the lenslet centres.
///
/// Rows `0..M` hold `dZ/dx`, rows `M..2M` hold `dZ/dy`, in units per metre.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    matrix: DMatrix<f64>,
    order: usize,
    lenslets: usize,
}

impl DesignMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn lenslets(&self) -> usize {
        self.lenslets
    }

    pub fn shape(&self) -> (usize, usize) {
        self.matrix.shape()
    }
}

pub fn build_design_matrix(lenslets: &LensletSet, order: usize, diameter: f64) -> Result<DesignMatrix> {
    design_matrix_at(lenslets.centers(), order, diameter)
}

/// Design matrix at arbitrary physical points; `diameter / 2` maps to the unit circle.
pub fn design_matrix_at(points: &[(f64, f64)], order: usize, diameter: f64) -> Result<DesignMatrix> {
    let m = points.len();
    if m == 0 {
        return invalid("design matrix needs at least one sample point");
    }
    if 2 * m < order + 1 {
        return invalid(format!(
            "{m} lenslets cannot determine {} coefficients (need 2M >= L+1)",
            order + 1
        ));
    }
    if !(diameter > 0.0) {
        return invalid(format!("pupil diameter must be positive, got {diameter}"));
    }
    let radius = 0.5 * diameter;
    let scale = 1.0 / radius;
    let terms = terms(order);
    let mut matrix = DMatrix::zeros(2 * m, order + 1);
    for (col, term) in terms.iter().enumerate() {
        for (row, &(x, y)) in points.iter().enumerate() {
            let (gx, gy) = term.gradient_xy(x * scale, y * scale);
            matrix[(row, col)] = gx * scale;
            matrix[(m + row, col)] = gy * scale;
        }
    }
    Ok(DesignMatrix {
        matrix,
        order,
        lenslets: m,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZernikeFit {
    /// Coefficients for Noll indices `1..=order+1`.
    pub coeffs: Vec<f64>,
    pub order: usize,
    pub rms_residual: f64,
}

impl ZernikeFit {
    pub fn zeros(order: usize) -> Self {
        Self {
            coeffs: vec![0.0; order + 1],
            order,
            rms_residual: 0.0,
        }
    }

    /// Evaluates the expansion at unit-disk coordinates.
    pub fn eval_unit(&self, terms: &[ZernikeTerm], x: f64, y: f64) -> f64 {
        let rho = x.hypot(y);
        let theta = y.atan2(x);
        self.coeffs
            .iter()
            .zip(terms)
            .filter(|(a, _)| **a != 0.0)
            .map(|(a, t)| a * t.eval_polar(rho, theta))
            .sum()
    }
}

/// Cached SVD pseudo-inverse of a design matrix, reused across measurement vectors.
#[derive(Debug, Clone)]
pub struct ZernikeFitter {
    design: DesignMatrix,
    pinv: DMatrix<f64>,
}

impl ZernikeFitter {
    pub fn new(design: DesignMatrix) -> Result<Self> {
        let svd = design.matrix.clone().svd(true, true);
        let (u, vt) = match (svd.u, svd.v_t) {
            (Some(u), Some(vt)) => (u, vt),
            _ => return invalid("SVD of design matrix failed"),
        };
        let s = &svd.singular_values;
        let smax = s.iter().cloned().fold(0.0, f64::max);
        let cutoff = PINV_RCOND * smax;
        let inv: Vec<f64> = s
            .iter()
            .map(|&v| if v > cutoff && v > 0.0 { 1.0 / v } else { 0.0 })
            .collect();
        // pinv = V diag(1/s) U^T
        let mut v = vt.transpose();
        for (j, w) in inv.iter().enumerate() {
            v.column_mut(j).scale_mut(*w);
        }
        let pinv = v * u.transpose();
        Ok(Self { design, pinv })
    }

    pub fn design(&self) -> &DesignMatrix {
        &self.design
    }

    pub fn pinv(&self) -> &DMatrix<f64> {
        &self.pinv
    }

    /// Least-squares coefficients for stacked slopes `d = [d_x; d_y]`; piston is pinned to zero.
    pub fn fit(&self, d: &[f64]) -> Result<ZernikeFit> {
        let rows = self.design.matrix.nrows();
        if d.is_empty() {
            return invalid("empty measurement vector");
        }
        if d.len() != rows {
            return invalid(format!("expected {rows} slope values, got {}", d.len()));
        }
        let dv = DVector::from_column_slice(d);
        let mut a = &self.pinv * &dv;
        a[0] = 0.0;
        let resid = &self.design.matrix * &a - &dv;
        Ok(ZernikeFit {
            coeffs: a.iter().cloned().collect(),
            order: self.design.order,
            rms_residual: resid.norm() / (rows as f64).sqrt(),
        })
    }
}

pub fn fit_coefficients(z: &DesignMatrix, d: &[f64]) -> Result<ZernikeFit> {
    if d.is_empty() {
        return invalid("empty measurement vector");
    }
    ZernikeFitter::new(z.clone())?.fit(d)
}

/// Phase `sum_k a_k Z_k` on the aperture lattice; zero outside the pupil.
pub fn synthesize_phase(fit: &ZernikeFit, aperture: &ApertureSpec) -> Result<Field2D> {
    let amp = &aperture.amplitude;
    let terms = terms(fit.order);
    let scale = 1.0 / aperture.radius();
    let mut values = vec![0.0; amp.values().len()];
    for r in 0..amp.rows() {
        for c in 0..amp.cols() {
            if aperture.inside(r, c) {
                let (x, y) = amp.coord(r, c);
                values[r * amp.cols() + c] = fit.eval_unit(&terms, x * scale, y * scale);
            }
        }
    }
    amp.with_values(values)
}

/// Midpoint-rule inner products `int Z_j Z_k rho drho dphi` over the unit disk.
pub fn gram_matrix(order: usize, samples: usize) -> DMatrix<f64> {
    let terms = terms(order);
    let k = terms.len();
    let dr = 1.0 / samples as f64;
    let dp = 2.0 * PI / samples as f64;
    let mut vals = vec![0.0; k];
    let mut gram = DMatrix::zeros(k, k);
    for i in 0..samples {
        let rho = (i as f64 + 0.5) * dr;
        for j in 0..samples {
            let phi = (j as f64 + 0.5) * dp;
            for (v, t) in vals.iter_mut().zip(&terms) {
                *v = t.eval_polar(rho, phi);
            }
            let w = rho * dr * dp;
            for a in 0..k {
                for b in a..k {
                    gram[(a, b)] += w * vals[a] * vals[b];
                }
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            gram[(a, b)] = gram[(b, a)];
        }
    }
    gram
}
