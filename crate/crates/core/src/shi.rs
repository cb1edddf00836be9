//! Shack-Hartmann sensor model: lenslet geometry, block plane-fit slope
//! sensing, random lenslet decimation and additive measurement noise.
//!
//! Focal-spot displacement is `f * grad(phi)`; the simulation returns
//! `grad(phi)` directly since the focal length cancels.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Result};
use crate::field::Field2D;

/// Lenslet centres on the half-offset lattice `x_i = -R + (2R/N)(i + 1/2)`
/// restricted to the disk `x^2 + y^2 <= R^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct LensletSet {
    n_grid: usize,
    radius: f64,
    focal: f64,
    centers: Vec<(f64, f64)>,
    /// `(row j, col i)` lattice position of each centre.
    cells: Vec<(usize, usize)>,
}

impl LensletSet {
    pub fn n_grid(&self) -> usize {
        self.n_grid
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn focal(&self) -> f64 {
        self.focal
    }

    pub fn pitch(&self) -> f64 {
        2.0 * self.radius / self.n_grid as f64
    }

    pub fn centers(&self) -> &[(f64, f64)] {
        &self.centers
    }

    pub fn cells(&self) -> &[(usize, usize)] {
        &self.cells
    }

    /// Row-major flat index of each lenslet on the `N x N` lattice.
    pub fn flat_cells(&self) -> Vec<usize> {
        self.cells.iter().map(|&(j, i)| j * self.n_grid + i).collect()
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Scatters per-lenslet values onto the full `N x N` lattice, zero elsewhere.
    pub fn embed(&self, values: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_grid * self.n_grid];
        for (&(j, i), v) in self.cells.iter().zip(values) {
            out[j * self.n_grid + i] = *v;
        }
        out
    }

    /// Gathers per-lenslet values from a full `N x N` lattice.
    pub fn gather(&self, square: &[f64]) -> Vec<f64> {
        self.cells
            .iter()
            .map(|&(j, i)| square[j * self.n_grid + i])
            .collect()
    }
}

/// `radius` is the half-width of the lattice and the radius of the kept disk.
pub fn make_lenslets(n_grid: usize, radius: f64, focal: f64) -> Result<LensletSet> {
    if n_grid < 2 {
        return invalid(format!("lenslet grid needs N >= 2, got {n_grid}"));
    }
    if !(radius > 0.0) {
        return invalid(format!("lenslet radius must be positive, got {radius}"));
    }
    let pitch = 2.0 * radius / n_grid as f64;
    let mut centers = Vec::new();
    let mut cells = Vec::new();
    for j in 0..n_grid {
        let y = -radius + pitch * (j as f64 + 0.5);
        for i in 0..n_grid {
            let x = -radius + pitch * (i as f64 + 0.5);
            if x * x + y * y <= radius * radius {
                centers.push((x, y));
                cells.push((j, i));
            }
        }
    }
    Ok(LensletSet {
        n_grid,
        radius,
        focal,
        centers,
        cells,
    })
}

/// Index range of samples whose centres fall in `[lo, hi)` along one axis.
fn sample_range(lo: f64, hi: f64, origin: f64, h: f64, len: usize) -> (usize, usize) {
    let eps = 1e-9;
    let a = ((lo - origin) / h - eps).ceil().max(0.0) as usize;
    let b = (((hi - origin) / h - eps).ceil().max(0.0) as usize).min(len);
    (a.min(len), b)
}

/// Least-squares plane `a x + b y + c` through the screen samples of every
/// lenslet block; returns the slopes `(a, b)` per lenslet in rad/m.
pub fn sense_gradients(screen: &Field2D, lenslets: &LensletSet) -> Result<(Vec<f64>, Vec<f64>)> {
    let h = screen.spacing();
    let (ox, oy) = screen.origin();
    let half = 0.5 * lenslets.pitch();
    let mut fx = Vec::with_capacity(lenslets.len());
    let mut fy = Vec::with_capacity(lenslets.len());
    for (k, &(xc, yc)) in lenslets.centers().iter().enumerate() {
        let (c0, c1) = sample_range(xc - half, xc + half, ox, h, screen.cols());
        let (r0, r1) = sample_range(yc - half, yc + half, oy, h, screen.rows());
        let count = c1.saturating_sub(c0) * r1.saturating_sub(r0);
        if count < 3 || c1 - c0 < 2 || r1 - r0 < 2 {
            return invalid(format!(
                "lenslet {k} at ({xc:.4e}, {yc:.4e}) covers {count} screen samples; need a 2x2 block at least"
            ));
        }
        // normal equations in block-centred coordinates
        let (mut sxx, mut sxy, mut syy, mut sx, mut sy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        let (mut sxz, mut syz, mut sz) = (0.0, 0.0, 0.0);
        for r in r0..r1 {
            for c in c0..c1 {
                let (x, y) = screen.coord(r, c);
                let (x, y) = (x - xc, y - yc);
                let z = screen.get(r, c);
                sxx += x * x;
                sxy += x * y;
                syy += y * y;
                sx += x;
                sy += y;
                sxz += x * z;
                syz += y * z;
                sz += z;
            }
        }
        let n = count as f64;
        let normal = nalgebra::Matrix3::new(sxx, sxy, sx, sxy, syy, sy, sx, sy, n);
        let rhs = nalgebra::Vector3::new(sxz, syz, sz);
        let sol = normal
            .lu()
            .solve(&rhs)
            .ok_or_else(|| crate::Error::InvalidArgument(format!("singular plane fit at lenslet {k}")))?;
        fx.push(sol[0]);
        fy.push(sol[1]);
    }
    Ok((fx, fy))
}

/// How the two sub-sampling selections relate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaskMode {
    /// Independent row selections for the x and y channels.
    #[default]
    Independent,
    /// One selection shared by both channels.
    Coupled,
}

/// Sub-sampled slope data: the kept rows of the two selection matrices and their values.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMeasurement {
    pub b_x: Vec<f64>,
    pub b_y: Vec<f64>,
    pub keep_x: Vec<usize>,
    pub keep_y: Vec<usize>,
    /// Total lenslet count `M`.
    pub lenslets: usize,
    pub n_grid: usize,
    /// `f64::INFINITY` when noiseless.
    pub snr_db: f64,
    pub seed: u64,
}

impl GradientMeasurement {
    pub fn n(&self) -> usize {
        self.keep_x.len()
    }

    pub fn ratio(&self) -> f64 {
        self.n() as f64 / self.lenslets as f64
    }

    /// `[b_x; b_y]`.
    pub fn stacked(&self) -> Vec<f64> {
        let mut v = self.b_x.clone();
        v.extend_from_slice(&self.b_y);
        v
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.keep_x.len();
        if self.keep_y.len() != n || self.b_x.len() != n || self.b_y.len() != n {
            return invalid("measurement channel lengths disagree");
        }
        if n > self.lenslets {
            return invalid(format!("{n} samples exceed {} lenslets", self.lenslets));
        }
        for keep in [&self.keep_x, &self.keep_y] {
            if keep.windows(2).any(|w| w[0] >= w[1]) {
                return invalid("kept indices must be strictly increasing");
            }
            if keep.last().is_some_and(|&k| k >= self.lenslets) {
                return invalid("kept index out of range");
            }
        }
        if self.b_x.iter().chain(&self.b_y).any(|v| !v.is_finite()) {
            return invalid("non-finite slope value");
        }
        Ok(())
    }
}

/// Keeps `round(r M)` lenslets per channel, drawn uniformly without replacement.
pub fn decimate(
    f_x: &[f64],
    f_y: &[f64],
    ratio: f64,
    seed: u64,
    n_grid: usize,
    mode: MaskMode,
) -> Result<GradientMeasurement> {
    let m = f_x.len();
    if f_y.len() != m {
        return invalid("x and y slope vectors differ in length");
    }
    if !(ratio > 0.0 && ratio <= 1.0) {
        return invalid(format!("compression ratio must lie in (0, 1], got {ratio}"));
    }
    let n = (ratio * m as f64).round() as usize;
    if n < 1 {
        return invalid(format!("ratio {ratio} keeps no lenslet out of {m}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| {
        let mut v = sample(rng, m, n).into_vec();
        v.sort_unstable();
        v
    };
    let keep_x = draw(&mut rng);
    let keep_y = match mode {
        MaskMode::Independent => draw(&mut rng),
        MaskMode::Coupled => keep_x.clone(),
    };
    Ok(GradientMeasurement {
        b_x: keep_x.iter().map(|&k| f_x[k]).collect(),
        b_y: keep_y.iter().map(|&k| f_y[k]).collect(),
        keep_x,
        keep_y,
        lenslets: m,
        n_grid,
        snr_db: f64::INFINITY,
        seed,
    })
}

/// Adds white Gaussian noise with `sigma^2 = |b|^2 / (2n) * 10^(-snr/10)` to both channels.
pub fn add_noise(m: &GradientMeasurement, snr_db: f64, seed: u64) -> Result<GradientMeasurement> {
    m.validate()?;
    if snr_db == f64::INFINITY {
        return Ok(m.clone());
    }
    if snr_db.is_nan() {
        return invalid("SNR is NaN");
    }
    let energy: f64 = m.b_x.iter().chain(&m.b_y).map(|v| v * v).sum();
    if !(energy > 0.0) {
        return invalid("cannot scale noise to a zero-energy measurement");
    }
    let sigma = (energy / (2 * m.n()) as f64 * 10f64.powf(-snr_db / 10.0)).sqrt();
    let normal = Normal::new(0.0, sigma).map_err(|e| crate::Error::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = m.clone();
    for v in out.b_x.iter_mut().chain(out.b_y.iter_mut()) {
        *v += normal.sample(&mut rng);
    }
    out.snr_db = snr_db;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zernike::{ZernikeIndex, ZernikeTerm};
    use approx::assert_abs_diff_eq;

    #[test]
    fn two_by_two_lattice() {
        let l = make_lenslets(2, 1.0, 0.01).unwrap();
        assert_eq!(l.len(), 4);
        assert_eq!(l.centers(), &[(-0.5, -0.5), (0.5, -0.5), (-0.5, 0.5), (0.5, 0.5)]);
    }

    #[test]
    fn ten_by_ten_excludes_corners() {
        let l = make_lenslets(10, 1.0, 0.01).unwrap();
        // brute force: (x_i^2 + y_j^2 <= 1) with x_i = -1 + 0.2 (i + 1/2)
        let mut idle = 0;
        for j in 0..10 {
            for i in 0..10 {
                let x = -1.0 + 0.2 * (i as f64 + 0.5);
                let y = -1.0 + 0.2 * (j as f64 + 0.5);
                if x * x + y * y > 1.0 {
                    idle += 1;
                }
            }
        }
        assert_eq!(l.len(), 100 - idle);
        assert_eq!(idle, 20);
        assert!(!l.cells().contains(&(0, 0)));
        assert!(l.cells().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn count_never_exceeds_lattice() {
        for n in 2..40 {
            assert!(make_lenslets(n, 0.3, 1.0).unwrap().len() <= n * n);
        }
        assert!(make_lenslets(1, 0.3, 1.0).is_err());
    }

    fn fine_screen(n: usize, f: impl Fn(f64, f64) -> f64) -> Field2D {
        Field2D::from_fn(n, 0.1 / n as f64, f).unwrap()
    }

    #[test]
    fn plane_fit_is_exact_on_affine_screens() {
        let l = make_lenslets(16, 0.05, 0.01).unwrap();
        let s = fine_screen(64, |x, y| 3.5 * x - 12.0 * y + 0.7);
        let (fx, fy) = sense_gradients(&s, &l).unwrap();
        for (a, b) in fx.iter().zip(&fy) {
            assert_abs_diff_eq!(*a, 3.5, epsilon = 1e-9);
            assert_abs_diff_eq!(*b, -12.0, epsilon = 1e-9);
        }
        let s = fine_screen(64, |_, _| 2.0);
        let (fx, fy) = sense_gradients(&s, &l).unwrap();
        assert!(fx.iter().chain(&fy).all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn defocus_slopes_match_analytic_gradient() {
        let radius = 0.05;
        let l = make_lenslets(32, radius, 0.01).unwrap();
        let t = ZernikeTerm::new(ZernikeIndex::from_noll(4).unwrap());
        let s = fine_screen(256, |x, y| t.eval_xy(x / radius, y / radius));
        let (fx, fy) = sense_gradients(&s, &l).unwrap();
        let (mut err, mut norm) = (0.0, 0.0);
        for (k, &(x, y)) in l.centers().iter().enumerate() {
            let (gx, gy) = t.gradient_xy(x / radius, y / radius);
            let (gx, gy) = (gx / radius, gy / radius);
            err += (fx[k] - gx).powi(2) + (fy[k] - gy).powi(2);
            norm += gx * gx + gy * gy;
        }
        assert!((err / norm).sqrt() < 0.05);
    }

    #[test]
    fn sensing_rejects_coarse_screens() {
        let l = make_lenslets(16, 0.05, 0.01).unwrap();
        let s = fine_screen(16, |x, _| x);
        assert!(sense_gradients(&s, &l).is_err());
    }

    #[test]
    fn full_ratio_is_identity() {
        let fx: Vec<f64> = (0..37).map(|i| i as f64).collect();
        let fy: Vec<f64> = (0..37).map(|i| -(i as f64)).collect();
        let m = decimate(&fx, &fy, 1.0, 5, 8, MaskMode::Independent).unwrap();
        assert_eq!(m.keep_x, (0..37).collect::<Vec<_>>());
        assert_eq!(m.keep_y, (0..37).collect::<Vec<_>>());
        assert_eq!(m.b_x, fx);
        assert_eq!(m.b_y, fy);
        assert!(m.snr_db.is_infinite());
    }

    #[test]
    fn half_ratio_contract_and_determinism() {
        let fx: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let m = decimate(&fx, &fx, 0.5, 9, 12, MaskMode::Independent).unwrap();
        assert_eq!(m.n(), 50);
        m.validate().unwrap();
        assert_ne!(m.keep_x, m.keep_y);
        let again = decimate(&fx, &fx, 0.5, 9, 12, MaskMode::Independent).unwrap();
        assert_eq!(m, again);
        let c = decimate(&fx, &fx, 0.5, 9, 12, MaskMode::Coupled).unwrap();
        assert_eq!(c.keep_x, c.keep_y);
        assert!(decimate(&fx, &fx, 0.001, 9, 12, MaskMode::Coupled).is_err());
        assert!(decimate(&fx, &fx, 1.5, 9, 12, MaskMode::Coupled).is_err());
    }

    #[test]
    fn noise_hits_requested_snr() {
        let fx: Vec<f64> = (0..400).map(|i| (i as f64 * 0.37).sin()).collect();
        let fy: Vec<f64> = (0..400).map(|i| (i as f64 * 0.11).cos()).collect();
        let m = decimate(&fx, &fy, 0.5, 1, 20, MaskMode::Independent).unwrap();
        let clean = m.stacked();
        let signal: f64 = clean.iter().map(|v| v * v).sum();
        let mut noise = 0.0;
        for t in 0..100 {
            let noisy = add_noise(&m, 30.0, 1000 + t).unwrap();
            assert_eq!(noisy.snr_db, 30.0);
            noise += noisy
                .stacked()
                .iter()
                .zip(&clean)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>();
        }
        let snr = 10.0 * (signal / (noise / 100.0)).log10();
        assert!((snr - 30.0).abs() < 0.5, "empirical SNR {snr}");
    }

    #[test]
    fn noise_edge_cases() {
        let fx = vec![0.5; 10];
        let m = decimate(&fx, &fx, 1.0, 1, 4, MaskMode::Independent).unwrap();
        assert_eq!(add_noise(&m, f64::INFINITY, 3).unwrap(), m);
        let zero = decimate(&[0.0; 10], &[0.0; 10], 1.0, 1, 4, MaskMode::Independent).unwrap();
        assert!(add_noise(&zero, 40.0, 3).is_err());
    }
}
