//! Sparse recovery of slope fields.
//!
//! Both gradient channels live on the full `N x N` lenslet lattice and are
//! represented as `f_x = W c_x`, `f_y = W c_y` with `W` the inverse wavelet
//! transform. Data fidelity applies only at the kept lenslets.
//!
//! - [`ccs_recover`] solves `min 1/2 |A c - b|^2 + lambda |c|_1` with
//!   `A = diag(Psi_x W, Psi_y W)`.
//! - [`dcs_recover`] adds the cross-derivative constraint `B c = 0`,
//!   `B c = D_y W c_x - D_x W c_y`, enforced with Bregman iterations whose
//!   inner problems are solved by FISTA.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::shi::{GradientMeasurement, LensletSet};
use crate::wavelet::{Wavelet2D, WaveletSpec};

/// Power iterations used to estimate Lipschitz constants.
pub const POWER_ITERATIONS: usize = 50;
pub const POWER_TOL: f64 = 1e-4;
/// Inflation applied to power-iteration estimates (they approach the top eigenvalue from below).
const LIPSCHITZ_MARGIN: f64 = 1.01;

/// Matrix-free linear operator.
pub trait LinOp: Sync {
    fn in_dim(&self) -> usize;
    fn out_dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
    fn apply_adjoint(&self, y: &[f64], x: &mut [f64]);
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `|<A x, y> - <x, A^T y>| / (|A x| |y| + |x| |A^T y|)` on seeded random probes (worst of `probes`).
pub fn adjoint_defect(op: &dyn LinOp, probes: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let x: Vec<f64> = (0..op.in_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..op.out_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut ax = vec![0.0; op.out_dim()];
        let mut aty = vec![0.0; op.in_dim()];
        op.apply(&x, &mut ax);
        op.apply_adjoint(&y, &mut aty);
        let scale = norm(&ax) * norm(&y) + norm(&x) * norm(&aty);
        if scale > 0.0 {
            worst = worst.max((dot(&ax, &y) - dot(&x, &aty)).abs() / scale);
        }
    }
    worst
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseOp {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DenseOp {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return invalid(format!("{} entries for a {rows}x{cols} matrix", data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    /// Materialises any operator column by column.
    pub fn from_op(op: &dyn LinOp) -> Self {
        let (rows, cols) = (op.out_dim(), op.in_dim());
        let mut data = vec![0.0; rows * cols];
        let mut e = vec![0.0; cols];
        let mut col = vec![0.0; rows];
        for j in 0..cols {
            e[j] = 1.0;
            op.apply(&e, &mut col);
            for i in 0..rows {
                data[i * cols + j] = col[i];
            }
            e[j] = 0.0;
        }
        Self { rows, cols, data }
    }
}

impl LinOp for DenseOp {
    fn in_dim(&self) -> usize {
        self.cols
    }

    fn out_dim(&self) -> usize {
        self.rows
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = dot(&self.data[i * self.cols..(i + 1) * self.cols], x);
        }
    }

    fn apply_adjoint(&self, y: &[f64], x: &mut [f64]) {
        x.iter_mut().for_each(|v| *v = 0.0);
        for (i, yi) in y.iter().enumerate() {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            for (xj, a) in x.iter_mut().zip(row) {
                *xj += a * yi;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IdentityOp(pub usize);

impl LinOp for IdentityOp {
    fn in_dim(&self) -> usize {
        self.0
    }

    fn out_dim(&self) -> usize {
        self.0
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.copy_from_slice(x);
    }

    fn apply_adjoint(&self, y: &[f64], x: &mut [f64]) {
        x.copy_from_slice(y);
    }
}

/// Largest eigenvalue of `x -> apply(x)` (symmetric PSD) by power iteration.
pub fn power_iteration(dim: usize, seed: u64, mut apply: impl FnMut(&[f64], &mut [f64])) -> f64 {
    if dim == 0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n0 = norm(&v);
    v.iter_mut().for_each(|x| *x /= n0);
    let mut w = vec![0.0; dim];
    let mut est = 0.0;
    for _ in 0..POWER_ITERATIONS {
        apply(&v, &mut w);
        let lam = dot(&v, &w);
        let nw = norm(&w);
        if nw == 0.0 {
            return 0.0;
        }
        for (a, b) in v.iter_mut().zip(&w) {
            *a = b / nw;
        }
        let done = est > 0.0 && ((lam - est) / lam).abs() < POWER_TOL;
        est = lam;
        if done {
            break;
        }
    }
    est
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOpts {
    /// Explicit l1 weight; `None` applies `lambda_factor * |A^T b|_inf`.
    pub lambda: Option<f64>,
    pub lambda_factor: f64,
    /// Bregman penalty.
    pub delta: f64,
    /// FISTA iterations per Bregman pass; CCS gets `max_inner * max_outer`.
    pub max_inner: usize,
    pub max_outer: usize,
    /// Relative-change stop of the inner FISTA loop.
    pub tol: f64,
    /// Stop of the Bregman loop on `|B c| / |c|`.
    pub tol_constraint: f64,
    /// Explicit FISTA step; `None` uses `1 / L` from power iteration.
    pub step: Option<f64>,
    pub stencil: CurlStencil,
}

impl Default for SolverOpts {
    fn default() -> Self {
        Self {
            lambda: None,
            lambda_factor: 0.02,
            // the multiplier update is p += delta B c against a delta/2 penalty, i.e. a
            // dual step of delta^2; delta = 1 is the classical add-back and stays inside
            // the delta < 2 stability range. Short inexact inner solves with many outer
            // passes reach the constraint tolerance far sooner than long ones.
            delta: 1.0,
            max_inner: 10,
            // a safety cap: passes stop on tol_constraint, typically after 150-500
            max_outer: 1000,
            tol: 1e-6,
            tol_constraint: 1e-4,
            step: None,
            stencil: CurlStencil::default(),
        }
    }
}

impl SolverOpts {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda_factor", self.lambda_factor),
            ("delta", self.delta),
            ("tol", self.tol),
            ("tol_constraint", self.tol_constraint),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return invalid(format!("{name} must be positive, got {v}"));
            }
        }
        if let Some(l) = self.lambda {
            if !(l >= 0.0) {
                return invalid(format!("lambda must be non-negative, got {l}"));
            }
        }
        if let Some(s) = self.step {
            if !(s > 0.0) {
                return invalid(format!("step must be positive, got {s}"));
            }
        }
        if self.max_inner == 0 || self.max_outer == 0 {
            return invalid("iteration limits must be positive");
        }
        Ok(())
    }
}

/// `sign(v) max(|v| - t, 0)` componentwise.
pub fn soft_threshold(v: &[f64], t: f64) -> Vec<f64> {
    v.iter().map(|&x| shrink(x, t)).collect()
}

#[inline]
fn shrink(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Smooth part `q(S c)` of a composite objective, with `S` linear.
///
/// FISTA keeps `S x` and `S y` alongside the iterates (extrapolation is
/// linear), so each iteration costs one `S` and one `S^T`.
pub trait SplitSmooth: Sync {
    fn dim(&self) -> usize;
    fn image_dim(&self) -> usize;
    fn forward(&self, c: &[f64], u: &mut [f64]);
    fn adjoint(&self, g: &[f64], c: &mut [f64]);
    /// `q(u)`; writes `grad q(u)` when requested.
    fn loss(&self, u: &[f64], grad: Option<&mut [f64]>) -> f64;

    /// Lipschitz constant of `c -> S^T grad q(S c)`.
    fn lipschitz(&self) -> f64 {
        let zero = vec![0.0; self.image_dim()];
        let mut g0 = vec![0.0; self.image_dim()];
        self.loss(&zero, Some(&mut g0));
        let mut u = vec![0.0; self.image_dim()];
        let mut g = vec![0.0; self.image_dim()];
        power_iteration(self.dim(), 0x5EED, |x, out| {
            self.forward(x, &mut u);
            self.loss(&u, Some(&mut g));
            for (a, b) in g.iter_mut().zip(&g0) {
                *a -= b;
            }
            self.adjoint(&g, out);
        }) * LIPSCHITZ_MARGIN
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FistaOutcome {
    pub x: Vec<f64>,
    /// Composite objective at every iterate.
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub step: f64,
}

/// Accelerated proximal gradient for `q(S c) + lambda |c|_1`.
pub fn fista<S: SplitSmooth + ?Sized>(
    smooth: &S,
    lambda: f64,
    x0: &[f64],
    step: f64,
    max_iter: usize,
    tol: f64,
) -> Result<FistaOutcome> {
    let n = smooth.dim();
    let m = smooth.image_dim();
    if x0.len() != n {
        return invalid(format!("initial point has {} entries, expected {n}", x0.len()));
    }
    let mut x_prev = x0.to_vec();
    let mut sx_prev = vec![0.0; m];
    smooth.forward(&x_prev, &mut sx_prev);
    let mut y = x_prev.clone();
    let mut sy = sx_prev.clone();
    let mut x = vec![0.0; n];
    let mut sx = vec![0.0; m];
    let mut gu = vec![0.0; m];
    let mut g = vec![0.0; n];
    let mut tau = 1.0f64;
    let mut objective = Vec::with_capacity(max_iter);
    let mut converged = false;
    let thresh = step * lambda;

    for it in 1..=max_iter {
        smooth.loss(&sy, Some(&mut gu));
        smooth.adjoint(&gu, &mut g);
        for i in 0..n {
            x[i] = shrink(y[i] - step * g[i], thresh);
        }
        smooth.forward(&x, &mut sx);
        let obj = smooth.loss(&sx, None) + lambda * x.iter().map(|v| v.abs()).sum::<f64>();
        if !obj.is_finite() {
            return Err(Error::Divergence {
                iteration: it,
                what: format!("objective became {obj}"),
            });
        }
        objective.push(obj);

        let tau_next = 0.5 * (1.0 + (1.0 + 4.0 * tau * tau).sqrt());
        let beta = (tau - 1.0) / tau_next;
        let (mut diff, mut size) = (0.0, 0.0);
        for i in 0..n {
            let d = x[i] - x_prev[i];
            diff += d * d;
            size += x[i] * x[i];
            y[i] = x[i] + beta * d;
        }
        for i in 0..m {
            sy[i] = sx[i] + beta * (sx[i] - sx_prev[i]);
        }
        std::mem::swap(&mut x, &mut x_prev);
        std::mem::swap(&mut sx, &mut sx_prev);
        tau = tau_next;
        if diff.sqrt() <= tol * size.sqrt().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }
    let iterations = objective.len();
    Ok(FistaOutcome {
        x: x_prev,
        objective,
        iterations,
        converged,
        step,
    })
}

/// Optional augmented quadratic `delta/2 |B c + p|^2`.
pub struct Quadratic<'a> {
    pub op: &'a dyn LinOp,
    pub offset: &'a [f64],
    pub weight: f64,
}

/// `S = [A; B]`, `q(u, v) = 1/2 |u - b|^2 + delta/2 |v + p|^2`.
struct StackedLeastSquares<'a> {
    a: &'a dyn LinOp,
    b: &'a [f64],
    extra: Option<Quadratic<'a>>,
}

impl SplitSmooth for StackedLeastSquares<'_> {
    fn dim(&self) -> usize {
        self.a.in_dim()
    }

    fn image_dim(&self) -> usize {
        self.a.out_dim() + self.extra.as_ref().map_or(0, |q| q.op.out_dim())
    }

    fn forward(&self, c: &[f64], u: &mut [f64]) {
        let (ua, ub) = u.split_at_mut(self.a.out_dim());
        self.a.apply(c, ua);
        if let Some(q) = &self.extra {
            q.op.apply(c, ub);
        }
    }

    fn adjoint(&self, g: &[f64], c: &mut [f64]) {
        let (ga, gb) = g.split_at(self.a.out_dim());
        self.a.apply_adjoint(ga, c);
        if let Some(q) = &self.extra {
            let mut tmp = vec![0.0; c.len()];
            q.op.apply_adjoint(gb, &mut tmp);
            for (a, b) in c.iter_mut().zip(&tmp) {
                *a += b;
            }
        }
    }

    fn loss(&self, u: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
        let na = self.a.out_dim();
        let mut val = 0.0;
        for i in 0..na {
            let r = u[i] - self.b[i];
            val += 0.5 * r * r;
            if let Some(g) = grad.as_deref_mut() {
                g[i] = r;
            }
        }
        if let Some(q) = &self.extra {
            for (k, &p) in q.offset.iter().enumerate() {
                let r = u[na + k] + p;
                val += 0.5 * q.weight * r * r;
                if let Some(g) = grad.as_deref_mut() {
                    g[na + k] = q.weight * r;
                }
            }
        }
        val
    }
}

/// FISTA on `1/2 |A c - b|^2 + lambda |c|_1 (+ delta/2 |B c + p|^2)` starting from zero,
/// capped at `max_inner * max_outer` iterations as a standalone solve.
pub fn fista_bpdn(
    a: &dyn LinOp,
    b: &[f64],
    lambda: f64,
    opts: &SolverOpts,
    extra: Option<Quadratic<'_>>,
) -> Result<FistaOutcome> {
    fista_bpdn_from(a, b, lambda, opts, extra, &vec![0.0; a.in_dim()])
}

pub fn fista_bpdn_from(
    a: &dyn LinOp,
    b: &[f64],
    lambda: f64,
    opts: &SolverOpts,
    extra: Option<Quadratic<'_>>,
    x0: &[f64],
) -> Result<FistaOutcome> {
    if b.len() != a.out_dim() {
        return invalid(format!("rhs has {} entries, operator maps to {}", b.len(), a.out_dim()));
    }
    if let Some(q) = &extra {
        if q.op.in_dim() != a.in_dim() || q.offset.len() != q.op.out_dim() {
            return invalid("augmented quadratic does not match the operator dimensions");
        }
    }
    let smooth = StackedLeastSquares { a, b, extra };
    let step = match opts.step {
        Some(s) => s,
        None => 1.0 / smooth.lipschitz().max(f64::MIN_POSITIVE),
    };
    fista(&smooth, lambda, x0, step, opts.max_inner.saturating_mul(opts.max_outer), opts.tol)
}

/// Square lattice that hosts the gradient fields and the lenslet-to-cell map.
#[derive(Debug, Clone)]
pub struct SquareLayout {
    n: usize,
    lenslet_cells: Vec<usize>,
    wavelet: Wavelet2D,
}

impl SquareLayout {
    pub fn new(lenslets: &LensletSet, spec: &WaveletSpec) -> Result<Self> {
        let n = lenslets.n_grid();
        Ok(Self {
            n,
            lenslet_cells: lenslets.flat_cells(),
            wavelet: Wavelet2D::new(n, spec)?,
        })
    }

    pub fn side(&self) -> usize {
        self.n
    }

    /// Flat lattice index of every lenslet.
    pub fn lenslet_cells(&self) -> &[usize] {
        &self.lenslet_cells
    }

    pub fn wavelet(&self) -> &Wavelet2D {
        &self.wavelet
    }

    /// Number of coefficients `2 N^2`.
    pub fn coef_len(&self) -> usize {
        2 * self.n * self.n
    }

    fn cells_for(&self, keep: &[usize]) -> Result<Vec<usize>> {
        keep.iter()
            .map(|&k| {
                self.lenslet_cells
                    .get(k)
                    .copied()
                    .ok_or_else(|| Error::InvalidArgument(format!("lenslet {k} is not in the layout")))
            })
            .collect()
    }
}

/// Discretisation of the cross-derivative constraint `D_y f_x = D_x f_y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CurlStencil {
    /// Plain forward differences: `D_y f_x` lands on `(j+1/2, i)`, `D_x f_y` on `(j, i+1/2)`.
    #[default]
    Forward,
    /// Forward differences averaged across the other axis so both terms land on the
    /// cell corner `(j+1/2, i+1/2)`; consistent to second order for slopes sampled at
    /// lenslet centres.
    CellCentered,
}

/// `D_y f_x - D_x f_y` on the `(N-1) x (N-1)` valid region.
fn curl_apply(n: usize, stencil: CurlStencil, fx: &[f64], fy: &[f64], out: &mut [f64]) {
    let m = n - 1;
    for i in 0..m {
        let (r0, r1) = (i * n, (i + 1) * n);
        for j in 0..m {
            out[i * m + j] = match stencil {
                CurlStencil::Forward => (fx[r1 + j] - fx[r0 + j]) - (fy[r0 + j + 1] - fy[r0 + j]),
                CurlStencil::CellCentered => {
                    let dy = fx[r1 + j] + fx[r1 + j + 1] - fx[r0 + j] - fx[r0 + j + 1];
                    let dx = fy[r0 + j + 1] + fy[r1 + j + 1] - fy[r0 + j] - fy[r1 + j];
                    0.5 * (dy - dx)
                }
            };
        }
    }
}

/// Adds `scale * (D_y^T r, -D_x^T r)` to `(gx, gy)`.
fn curl_adjoint_add(n: usize, stencil: CurlStencil, r: &[f64], scale: f64, gx: &mut [f64], gy: &mut [f64]) {
    let m = n - 1;
    for i in 0..m {
        let (r0, r1) = (i * n, (i + 1) * n);
        for j in 0..m {
            let v = scale * r[i * m + j];
            match stencil {
                CurlStencil::Forward => {
                    gx[r1 + j] += v;
                    gx[r0 + j] -= v;
                    gy[r0 + j + 1] -= v;
                    gy[r0 + j] += v;
                }
                CurlStencil::CellCentered => {
                    let h = 0.5 * v;
                    gx[r1 + j] += h;
                    gx[r1 + j + 1] += h;
                    gx[r0 + j] -= h;
                    gx[r0 + j + 1] -= h;
                    gy[r0 + j + 1] -= h;
                    gy[r1 + j + 1] -= h;
                    gy[r0 + j] += h;
                    gy[r1 + j] += h;
                }
            }
        }
    }
}

/// Curl-free constraint operator `B c = D_y W T_x c - D_x W T_y c`.
pub struct CrossDerivativeOp<'a> {
    layout: &'a SquareLayout,
    stencil: CurlStencil,
}

pub fn make_cross_derivative_op(layout: &SquareLayout, stencil: CurlStencil) -> Result<CrossDerivativeOp<'_>> {
    if layout.n < 2 {
        return invalid("cross-derivative operator needs N >= 2");
    }
    Ok(CrossDerivativeOp { layout, stencil })
}

impl LinOp for CrossDerivativeOp<'_> {
    fn in_dim(&self) -> usize {
        self.layout.coef_len()
    }

    fn out_dim(&self) -> usize {
        (self.layout.n - 1) * (self.layout.n - 1)
    }

    fn apply(&self, c: &[f64], y: &mut [f64]) {
        let nn = self.layout.n * self.layout.n;
        let mut fx = c[..nn].to_vec();
        let mut fy = c[nn..].to_vec();
        self.layout.wavelet.inverse_in_place(&mut fx);
        self.layout.wavelet.inverse_in_place(&mut fy);
        curl_apply(self.layout.n, self.stencil, &fx, &fy, y);
    }

    fn apply_adjoint(&self, r: &[f64], c: &mut [f64]) {
        let nn = self.layout.n * self.layout.n;
        let (cx, cy) = c.split_at_mut(nn);
        cx.iter_mut().for_each(|v| *v = 0.0);
        cy.iter_mut().for_each(|v| *v = 0.0);
        curl_adjoint_add(self.layout.n, self.stencil, r, 1.0, cx, cy);
        self.layout.wavelet.forward_in_place(cx);
        self.layout.wavelet.forward_in_place(cy);
    }
}

/// Measurement operator `A = diag(Psi_x W, Psi_y W)`.
pub struct MeasurementOp<'a> {
    layout: &'a SquareLayout,
    cells_x: Vec<usize>,
    cells_y: Vec<usize>,
}

impl<'a> MeasurementOp<'a> {
    pub fn new(layout: &'a SquareLayout, m: &GradientMeasurement) -> Result<Self> {
        m.validate()?;
        if m.lenslets != layout.lenslet_cells.len() {
            return invalid(format!(
                "measurement has {} lenslets, layout has {}",
                m.lenslets,
                layout.lenslet_cells.len()
            ));
        }
        Ok(Self {
            layout,
            cells_x: layout.cells_for(&m.keep_x)?,
            cells_y: layout.cells_for(&m.keep_y)?,
        })
    }
}

impl LinOp for MeasurementOp<'_> {
    fn in_dim(&self) -> usize {
        self.layout.coef_len()
    }

    fn out_dim(&self) -> usize {
        self.cells_x.len() + self.cells_y.len()
    }

    fn apply(&self, c: &[f64], y: &mut [f64]) {
        let nn = self.layout.n * self.layout.n;
        let mut fx = c[..nn].to_vec();
        let mut fy = c[nn..].to_vec();
        self.layout.wavelet.inverse_in_place(&mut fx);
        self.layout.wavelet.inverse_in_place(&mut fy);
        let nx = self.cells_x.len();
        for (k, &cell) in self.cells_x.iter().enumerate() {
            y[k] = fx[cell];
        }
        for (k, &cell) in self.cells_y.iter().enumerate() {
            y[nx + k] = fy[cell];
        }
    }

    fn apply_adjoint(&self, r: &[f64], c: &mut [f64]) {
        let nn = self.layout.n * self.layout.n;
        let (cx, cy) = c.split_at_mut(nn);
        cx.iter_mut().for_each(|v| *v = 0.0);
        cy.iter_mut().for_each(|v| *v = 0.0);
        let nx = self.cells_x.len();
        for (k, &cell) in self.cells_x.iter().enumerate() {
            cx[cell] += r[k];
        }
        for (k, &cell) in self.cells_y.iter().enumerate() {
            cy[cell] += r[nx + k];
        }
        self.layout.wavelet.forward_in_place(cx);
        self.layout.wavelet.forward_in_place(cy);
    }
}

/// Recovery objective evaluated in the field domain: `S = diag(W, W)`.
struct FieldObjective<'a> {
    layout: &'a SquareLayout,
    cells_x: &'a [usize],
    cells_y: &'a [usize],
    b_x: &'a [f64],
    b_y: &'a [f64],
    /// `(delta, p)` for the augmented constraint term.
    constraint: Option<(f64, &'a [f64])>,
    stencil: CurlStencil,
}

impl SplitSmooth for FieldObjective<'_> {
    fn dim(&self) -> usize {
        self.layout.coef_len()
    }

    fn image_dim(&self) -> usize {
        self.layout.coef_len()
    }

    fn forward(&self, c: &[f64], u: &mut [f64]) {
        let nn = self.layout.n * self.layout.n;
        u.copy_from_slice(c);
        let (ux, uy) = u.split_at_mut(nn);
        self.layout.wavelet.inverse_in_place(ux);
        self.layout.wavelet.inverse_in_place(uy);
    }

    fn adjoint(&self, g: &[f64], c: &mut [f64]) {
        let nn = self.layout.n * self.layout.n;
        c.copy_from_slice(g);
        let (cx, cy) = c.split_at_mut(nn);
        self.layout.wavelet.forward_in_place(cx);
        self.layout.wavelet.forward_in_place(cy);
    }

    fn loss(&self, u: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let n = self.layout.n;
        let nn = n * n;
        let (fx, fy) = u.split_at(nn);
        let mut val = 0.0;
        let mut grad = grad;
        if let Some(g) = grad.as_deref_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        for (k, &cell) in self.cells_x.iter().enumerate() {
            let r = fx[cell] - self.b_x[k];
            val += 0.5 * r * r;
            if let Some(g) = grad.as_deref_mut() {
                g[cell] += r;
            }
        }
        for (k, &cell) in self.cells_y.iter().enumerate() {
            let r = fy[cell] - self.b_y[k];
            val += 0.5 * r * r;
            if let Some(g) = grad.as_deref_mut() {
                g[nn + cell] += r;
            }
        }
        if let Some((delta, p)) = self.constraint {
            let mut r = vec![0.0; (n - 1) * (n - 1)];
            curl_apply(n, self.stencil, fx, fy, &mut r);
            for (ri, pi) in r.iter_mut().zip(p) {
                *ri += pi;
            }
            val += 0.5 * delta * dot(&r, &r);
            if let Some(g) = grad {
                let (gx, gy) = g.split_at_mut(nn);
                curl_adjoint_add(n, self.stencil, &r, delta, gx, gy);
            }
        }
        val
    }

    fn lipschitz(&self) -> f64 {
        // W is unitary, so this is the field-domain Hessian norm: the 0/1 sampling
        // mask has norm 1 and |[D_y, -D_x]|^2 <= 4 + 4. Power iteration underestimates
        // the clustered top of the curl spectrum, which made large delta diverge.
        1.0 + self.constraint.map_or(0.0, |(delta, _)| 8.0 * delta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryResult {
    /// Stacked coefficients `[c_x; c_y]`.
    pub c: Vec<f64>,
    /// `W c_x` on the `N x N` lattice.
    pub f_x: Vec<f64>,
    /// `W c_y` on the `N x N` lattice.
    pub f_y: Vec<f64>,
    /// Composite objective at every inner iteration, all outer iterations concatenated.
    pub objective: Vec<f64>,
    /// `|B c| / |c|` after every outer iteration.
    pub constraint_residual: Vec<f64>,
    /// Inner iterations spent in each outer iteration.
    pub inner_iterations: Vec<usize>,
    pub lambda: f64,
    pub converged: bool,
}

impl RecoveryResult {
    pub fn final_constraint_residual(&self) -> f64 {
        self.constraint_residual.last().copied().unwrap_or(f64::NAN)
    }

    /// Recovered slopes at every lenslet, stacked `[f_x; f_y]`.
    pub fn lenslet_slopes(&self, layout: &SquareLayout) -> Vec<f64> {
        let mut d: Vec<f64> = layout.lenslet_cells.iter().map(|&c| self.f_x[c]).collect();
        d.extend(layout.lenslet_cells.iter().map(|&c| self.f_y[c]));
        d
    }
}

struct Prepared<'a> {
    cells_x: Vec<usize>,
    cells_y: Vec<usize>,
    m: &'a GradientMeasurement,
    lambda: f64,
}

fn prepare<'a>(m: &'a GradientMeasurement, layout: &SquareLayout, opts: &SolverOpts) -> Result<Prepared<'a>> {
    opts.validate()?;
    let a = MeasurementOp::new(layout, m)?;
    let lambda = match opts.lambda {
        Some(l) => l,
        None => {
            let b = m.stacked();
            let mut atb = vec![0.0; a.in_dim()];
            a.apply_adjoint(&b, &mut atb);
            opts.lambda_factor * atb.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
        }
    };
    Ok(Prepared {
        cells_x: a.cells_x,
        cells_y: a.cells_y,
        m,
        lambda,
    })
}

fn relative_constraint(
    layout: &SquareLayout,
    stencil: CurlStencil,
    fx: &[f64],
    fy: &[f64],
    c: &[f64],
    out: &mut [f64],
) -> f64 {
    curl_apply(layout.n, stencil, fx, fy, out);
    let nc = norm(c);
    if nc > 0.0 {
        norm(out) / nc
    } else {
        0.0
    }
}

fn synthesize_fields(layout: &SquareLayout, c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let nn = layout.n * layout.n;
    let mut fx = c[..nn].to_vec();
    let mut fy = c[nn..].to_vec();
    layout.wavelet.inverse_in_place(&mut fx);
    layout.wavelet.inverse_in_place(&mut fy);
    (fx, fy)
}

/// Independent-channel recovery (no cross-derivative constraint).
pub fn ccs_recover(m: &GradientMeasurement, layout: &SquareLayout, opts: &SolverOpts) -> Result<RecoveryResult> {
    let prep = prepare(m, layout, opts)?;
    let obj = FieldObjective {
        layout,
        cells_x: &prep.cells_x,
        cells_y: &prep.cells_y,
        b_x: &prep.m.b_x,
        b_y: &prep.m.b_y,
        constraint: None,
        stencil: opts.stencil,
    };
    let step = opts.step.unwrap_or_else(|| 1.0 / obj.lipschitz());
    let budget = opts.max_inner.saturating_mul(opts.max_outer);
    let out = fista(&obj, prep.lambda, &vec![0.0; layout.coef_len()], step, budget, opts.tol)?;
    let (f_x, f_y) = synthesize_fields(layout, &out.x);
    let mut r = vec![0.0; (layout.n - 1) * (layout.n - 1)];
    let rel = relative_constraint(layout, opts.stencil, &f_x, &f_y, &out.x, &mut r);
    Ok(RecoveryResult {
        c: out.x,
        f_x,
        f_y,
        objective: out.objective,
        constraint_residual: vec![rel],
        inner_iterations: vec![out.iterations],
        lambda: prep.lambda,
        converged: out.converged,
    })
}

/// Outcome of one Bregman inner solve, exposed for verification.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerStep {
    pub outcome: FistaOutcome,
    pub lambda: f64,
}

/// Solves a single augmented subproblem with Bregman variables `p` from `x0`.
pub fn dcs_inner_step(
    m: &GradientMeasurement,
    layout: &SquareLayout,
    opts: &SolverOpts,
    p: &[f64],
    x0: &[f64],
) -> Result<InnerStep> {
    let prep = prepare(m, layout, opts)?;
    if p.len() != (layout.n - 1) * (layout.n - 1) {
        return invalid("Bregman vector has the wrong length");
    }
    let obj = FieldObjective {
        layout,
        cells_x: &prep.cells_x,
        cells_y: &prep.cells_y,
        b_x: &prep.m.b_x,
        b_y: &prep.m.b_y,
        constraint: Some((opts.delta, p)),
        stencil: opts.stencil,
    };
    let step = opts.step.unwrap_or_else(|| 1.0 / obj.lipschitz());
    let outcome = fista(&obj, prep.lambda, x0, step, opts.max_inner, opts.tol)?;
    Ok(InnerStep {
        outcome,
        lambda: prep.lambda,
    })
}

/// Curl-constrained recovery by Bregman iteration:
/// `c <- argmin 1/2|Ac-b|^2 + lambda|c|_1 + delta/2|Bc+p|^2`, then `p <- p + delta B c`.
pub fn dcs_recover(m: &GradientMeasurement, layout: &SquareLayout, opts: &SolverOpts) -> Result<RecoveryResult> {
    let prep = prepare(m, layout, opts)?;
    let n = layout.n;
    let mut p = vec![0.0; (n - 1) * (n - 1)];
    let mut c = vec![0.0; layout.coef_len()];
    let mut r = vec![0.0; p.len()];
    let mut objective = Vec::new();
    let mut constraint_residual = Vec::new();
    let mut inner_iterations = Vec::new();
    let mut converged = false;
    let mut step = opts.step;
    let mut fields = (Vec::new(), Vec::new());

    for _ in 0..opts.max_outer {
        let obj = FieldObjective {
            layout,
            cells_x: &prep.cells_x,
            cells_y: &prep.cells_y,
            b_x: &prep.m.b_x,
            b_y: &prep.m.b_y,
            constraint: Some((opts.delta, &p)),
            stencil: opts.stencil,
        };
        // the Hessian does not depend on p
        let s = *step.get_or_insert_with(|| 1.0 / obj.lipschitz());
        let out = fista(&obj, prep.lambda, &c, s, opts.max_inner, opts.tol)?;
        objective.extend_from_slice(&out.objective);
        inner_iterations.push(out.iterations);
        c = out.x;
        fields = synthesize_fields(layout, &c);
        let rel = relative_constraint(layout, opts.stencil, &fields.0, &fields.1, &c, &mut r);
        if !rel.is_finite() {
            return Err(Error::Divergence {
                iteration: inner_iterations.len(),
                what: "constraint residual is not finite".into(),
            });
        }
        constraint_residual.push(rel);
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi += opts.delta * ri;
        }
        if rel < opts.tol_constraint {
            converged = true;
            break;
        }
    }
    Ok(RecoveryResult {
        c,
        f_x: fields.0,
        f_y: fields.1,
        objective,
        constraint_residual,
        inner_iterations,
        lambda: prep.lambda,
        converged,
    })
}
