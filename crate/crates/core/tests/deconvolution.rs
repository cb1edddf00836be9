//! End-to-end TV deconvolution sanity: identity blur, envelope, and PSNR gain on a disk.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use wfdcs_core::deconv::{convolve, tv_deconvolve, BlurOp, DeconvOpts};
use wfdcs_core::field::{make_circular_aperture, Field2D};
use wfdcs_core::metrics::psnr;
use wfdcs_core::optics::{psf, Psf, Pupil, DEFAULT_FOCAL, DEFAULT_WAVELENGTH};

const N: usize = 64;

/// Bright disk on a dim background, values in [0, 1].
fn disk() -> Field2D {
    Field2D::from_fn(N, 1.0, |x, y| if x * x + y * y < 18.0 * 18.0 { 0.9 } else { 0.1 }).unwrap()
}

/// Adds white noise `snr_db` below the mean signal power.
fn noisy(v: &Field2D, snr_db: f64, seed: u64) -> Field2D {
    let power = v.values().iter().map(|x| x * x).sum::<f64>() / v.values().len() as f64;
    let normal = Normal::new(0.0, (power * 10f64.powf(-snr_db / 10.0)).sqrt()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    v.with_values(v.values().iter().map(|x| x + normal.sample(&mut rng)).collect()).unwrap()
}

/// Diffraction-limited PSF of a small pupil: Airy core several pixels wide.
fn airy() -> Psf {
    let ap = make_circular_aperture(16, 0.1).unwrap();
    psf(&Pupil::flat(ap).unwrap(), N).unwrap()
}

#[test]
fn delta_psf_is_identity() {
    let u = disk();
    let op = BlurOp::new(&Psf::delta(N).unwrap(), N, N).unwrap();
    let out = tv_deconvolve(&u, &op, &DeconvOpts::default()).unwrap();
    let rms = (out.image.values().iter().zip(u.values()).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
        / (N * N) as f64)
        .sqrt();
    assert!(rms <= 1e-3, "rms {rms:e}");
}

#[test]
fn objective_envelope_is_non_increasing() {
    let op = BlurOp::new(&airy(), N, N).unwrap();
    let v = noisy(&convolve(&disk(), &op).unwrap(), 40.0, 1);
    let out = tv_deconvolve(&v, &op, &DeconvOpts::default()).unwrap();
    let mut best = f64::INFINITY;
    let envelope: Vec<f64> = out
        .objective
        .iter()
        .map(|&o| {
            best = best.min(o);
            best
        })
        .collect();
    assert!(envelope.windows(2).all(|w| w[1] <= w[0]));
    // the envelope is not flat: the solver actually descends
    assert!(envelope.last().unwrap() < &(0.5 * out.objective[0]));
}

#[test]
fn disk_gains_five_db_at_40_db_noise() {
    let truth = disk();
    let op = BlurOp::new(&airy(), N, N).unwrap();
    let v = noisy(&convolve(&truth, &op).unwrap(), 40.0, 2);
    let out = tv_deconvolve(&v, &op, &DeconvOpts::default()).unwrap();
    let before = psnr(&v, &truth, 1.0).unwrap();
    let after = psnr(&out.image, &truth, 1.0).unwrap();
    assert!(after >= before + 5.0, "PSNR {before:.2} -> {after:.2} dB");
}

#[test]
fn optics_psf_is_consistent_with_wavelength_scaling() {
    // a constant phase offset does not change the PSF, a quadratic one broadens it
    let ap = make_circular_aperture(32, 0.1).unwrap();
    let h = ap.amplitude.spacing();
    let flat = psf(&Pupil::flat(ap.clone()).unwrap(), 64).unwrap();
    let defocus = Field2D::from_fn(32, h, |x, y| 4000.0 * (x * x + y * y)).unwrap();
    let blurred = psf(&Pupil::new(ap, defocus, DEFAULT_WAVELENGTH, DEFAULT_FOCAL).unwrap(), 64).unwrap();
    let peak = |p: &Psf| p.intensity.values().iter().cloned().fold(0.0, f64::max);
    assert!(peak(&blurred) < 0.8 * peak(&flat));
}
