//! Numerical kernel properties at full problem sizes, and the dense-fit closed loop.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wfdcs_core::deconv::BlurOp;
use wfdcs_core::field::{make_circular_aperture, Field2D};
use wfdcs_core::optics::{psf, Pupil, DEFAULT_FOCAL, DEFAULT_WAVELENGTH};
use wfdcs_core::shi::{decimate, make_lenslets, MaskMode};
use wfdcs_core::solver::{adjoint_defect, make_cross_derivative_op, CurlStencil, MeasurementOp, SquareLayout};
use wfdcs_core::wavelet::{Wavelet2D, WaveletSpec, DEFAULT_LEVELS};
use wfdcs_core::zernike::{
    build_design_matrix, gram_matrix, terms, ZernikeFit, ZernikeFitter, ZernikeIndex, ZernikeTerm,
};

fn random_vec(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[test]
fn wavelet_is_unitary_with_perfect_reconstruction() {
    for (n, levels) in [(128, DEFAULT_LEVELS), (64, 3), (32, 1)] {
        let w = Wavelet2D::new(n, &WaveletSpec::sym5(levels)).unwrap();
        for seed in 0..3 {
            let x = random_vec(n * n, seed);
            let c = w.forward(&x).unwrap();
            let back = w.inverse(&c).unwrap();
            let err = norm(&x.iter().zip(&back).map(|(a, b)| a - b).collect::<Vec<_>>());
            assert!(err <= 1e-10 * norm(&x), "reconstruction {err:e} at n = {n}");
            assert!((norm(&c) - norm(&x)).abs() <= 1e-10 * norm(&x), "energy at n = {n}");
        }
    }
}

#[test]
fn recovery_operators_pass_adjoint_test() {
    let lenslets = make_lenslets(64, 0.05, 0.01).unwrap();
    let layout = SquareLayout::new(&lenslets, &WaveletSpec::sym5(DEFAULT_LEVELS)).unwrap();
    let f = random_vec(lenslets.len(), 1);
    for mode in [MaskMode::Independent, MaskMode::Coupled] {
        let m = decimate(&f, &f, 0.4, 2, 64, mode).unwrap();
        let a = MeasurementOp::new(&layout, &m).unwrap();
        assert!(adjoint_defect(&a, 5, 3) <= 1e-8);
    }
    for stencil in [CurlStencil::Forward, CurlStencil::CellCentered] {
        let b = make_cross_derivative_op(&layout, stencil).unwrap();
        assert!(adjoint_defect(&b, 5, 4) <= 1e-8);
    }
}

#[test]
fn blur_operator_passes_adjoint_test() {
    let ap = make_circular_aperture(32, 0.1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let phase = ap.amplitude.map(|_| 0.0).unwrap();
    let phase = phase
        .with_values(phase.values().iter().map(|_| rng.random_range(-2.0..2.0)).collect())
        .unwrap();
    let p = psf(&Pupil::new(ap, phase, DEFAULT_WAVELENGTH, DEFAULT_FOCAL).unwrap(), 64).unwrap();
    for (rows, cols) in [(64, 64), (48, 80), (100, 100)] {
        let op = BlurOp::new(&p, rows, cols).unwrap();
        assert!(adjoint_defect(&op, 5, 5) <= 1e-8, "{rows}x{cols}");
    }
}

#[test]
fn zernike_gradients_match_finite_differences_up_to_36() {
    let mut rng = ChaCha8Rng::seed_from_u64(36);
    let h = 1e-6;
    for j in 1..=36 {
        let t = ZernikeTerm::new(ZernikeIndex::from_noll(j).unwrap());
        for _ in 0..25 {
            let (x, y) = loop {
                let (x, y): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                if x * x + y * y < 0.95 {
                    break (x, y);
                }
            };
            let fx = (t.eval_xy(x + h, y) - t.eval_xy(x - h, y)) / (2.0 * h);
            let fy = (t.eval_xy(x, y + h) - t.eval_xy(x, y - h)) / (2.0 * h);
            let (gx, gy) = t.gradient_xy(x, y);
            let scale = gx.abs().max(gy.abs()).max(1.0);
            assert!((gx - fx).abs() <= 1e-6 * scale, "Z{j} d/dx at ({x}, {y}): {gx} vs {fx}");
            assert!((gy - fy).abs() <= 1e-6 * scale, "Z{j} d/dy at ({x}, {y}): {gy} vs {fy}");
        }
    }
}

#[test]
fn zernike_terms_are_numerically_orthogonal() {
    let g = gram_matrix(35, 400);
    for a in 0..g.nrows() {
        for b in 0..a {
            let rel = g[(a, b)].abs() / (g[(a, a)] * g[(b, b)]).sqrt();
            assert!(rel <= 1e-3, "<Z{}, Z{}> relative {rel:e}", a + 1, b + 1);
        }
    }
}

#[test]
fn psf_is_nonnegative_with_unit_sum() {
    let ap = make_circular_aperture(64, 0.1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let phase = ap
        .amplitude
        .with_values((0..64 * 64).map(|_| rng.random_range(-3.0..3.0)).collect())
        .unwrap();
    for out in [64, 128, 200] {
        let p = psf(&Pupil::new(ap.clone(), phase.clone(), DEFAULT_WAVELENGTH, DEFAULT_FOCAL).unwrap(), out).unwrap();
        let v = p.intensity.values();
        assert!(v.iter().all(|&x| x >= 0.0));
        assert!((v.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn tilt_moves_psf_by_whole_cells() {
    let (n, out) = (64, 128);
    let ap = make_circular_aperture(n, 0.1).unwrap();
    let h = ap.amplitude.spacing();
    let base = psf(&Pupil::flat(ap.clone()).unwrap(), out).unwrap();
    for (sx, sy) in [(1i64, 0i64), (0, 5), (-7, 3), (12, -12)] {
        // a phase ramp of 2 pi s / (out h) per metre moves the PSF by s cells
        let k = 2.0 * std::f64::consts::PI / (out as f64 * h);
        let phase = Field2D::from_fn(n, h, |x, y| k * (sx as f64 * x + sy as f64 * y)).unwrap();
        let moved = psf(&Pupil::new(ap.clone(), phase, DEFAULT_WAVELENGTH, DEFAULT_FOCAL).unwrap(), out).unwrap();
        let (a, b) = (base.intensity.values(), moved.intensity.values());
        let peak = a.iter().cloned().fold(0.0, f64::max);
        for r in 0..out {
            for c in 0..out {
                let rr = (r as i64 + sy).rem_euclid(out as i64) as usize;
                let cc = (c as i64 + sx).rem_euclid(out as i64) as usize;
                assert!((b[rr * out + cc] - a[r * out + c]).abs() <= 1e-12 * peak, "shift ({sx}, {sy})");
            }
        }
    }
}

#[test]
fn dense_fit_closed_loop_recovers_coefficients() {
    let order = 21;
    let lenslets = make_lenslets(32, 0.05, 0.01).unwrap();
    let diameter = 0.1;
    let fitter = ZernikeFitter::new(build_design_matrix(&lenslets, order, diameter).unwrap()).unwrap();
    let basis = terms(order);
    let radius = 0.5 * diameter;
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut truth = ZernikeFit::zeros(order);
        for a in truth.coeffs.iter_mut().skip(1) {
            *a = rng.random_range(-1.0..1.0);
        }
        // "sense" slopes by central differences of the synthesised phase in metres
        let phi = |x: f64, y: f64| truth.eval_unit(&basis, x / radius, y / radius);
        let h = 1e-7;
        let centers = lenslets.centers();
        let mut d: Vec<f64> = centers
            .iter()
            .map(|&(x, y)| (phi(x + h, y) - phi(x - h, y)) / (2.0 * h))
            .collect();
        d.extend(centers.iter().map(|&(x, y)| (phi(x, y + h) - phi(x, y - h)) / (2.0 * h)));
        let fit = fitter.fit(&d).unwrap();
        let err = norm(&fit.coeffs.iter().zip(&truth.coeffs).map(|(a, b)| a - b).collect::<Vec<_>>());
        assert!(err <= 1e-6 * norm(&truth.coeffs), "seed {seed}: relative error {:e}", err / norm(&truth.coeffs));
    }
}
