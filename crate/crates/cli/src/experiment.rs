//! Simulation geometry, per-trial ground truth and the three phase estimators.
//!
//! Geometry: an `N x N` lenslet lattice covers the screen `[-S/2, S/2]^2`;
//! lenslets inside the inscribed disk are active. Phases live on a `2N x 2N`
//! aperture lattice spanning `[-S, S]^2`, whose pupil cells coincide with the
//! lenslet centres; the padding doubles as the PSF zero-padding.

use wfdcs_core::field::{make_circular_aperture, ApertureSpec, Field2D};
use wfdcs_core::shi::{add_noise, decimate, make_lenslets, sense_gradients, GradientMeasurement, LensletSet};
use wfdcs_core::solver::{ccs_recover, dcs_recover, RecoveryResult, SquareLayout};
use wfdcs_core::turbulence::generate_phase_screen;
use wfdcs_core::zernike::{build_design_matrix, synthesize_phase, ZernikeFit, ZernikeFitter};

use crate::config::{ExperimentConfig, Method};
use crate::error::PipelineError;

/// SplitMix64 finaliser.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic seed for a labelled stream.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix(base), |acc, &p| mix(acc ^ p))
}

const TAG_SCREEN: u64 = 1;
const TAG_MASK: u64 = 2;
const TAG_NOISE: u64 = 3;
pub(crate) const TAG_IMAGE_NOISE: u64 = 4;

pub struct Geometry {
    pub lenslets: LensletSet,
    pub layout: SquareLayout,
    pub aperture: ApertureSpec,
    pub fitter: ZernikeFitter,
    /// Pupil membership on the aperture lattice.
    pub mask: Vec<bool>,
    oversample: usize,
}

impl Geometry {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self, PipelineError> {
        let n = cfg.sensor.n_grid;
        let size = cfg.turbulence.screen_size;
        let lenslets = make_lenslets(n, size / 2.0, cfg.sensor.focal)?;
        let layout = SquareLayout::new(&lenslets, &cfg.wavelet_spec())?;
        let aperture = make_circular_aperture(2 * n, size)?;
        let fitter = ZernikeFitter::new(build_design_matrix(&lenslets, cfg.sensor.zernike_order, size)?)?;
        let mask = aperture.amplitude.values().iter().map(|&a| a > 0.0).collect();
        Ok(Self {
            lenslets,
            layout,
            aperture,
            fitter,
            mask,
            oversample: cfg.turbulence.oversample,
        })
    }

    pub fn n_grid(&self) -> usize {
        self.lenslets.n_grid()
    }

    /// Aperture-lattice index of lenslet `k`.
    fn aperture_index(&self, k: usize) -> usize {
        let n = self.n_grid();
        let (j, i) = self.lenslets.cells()[k];
        (j + n / 2) * (2 * n) + i + n / 2
    }

    /// Places per-lenslet values on the aperture lattice (zero outside the pupil).
    pub fn embed(&self, values: &[f64]) -> Result<Field2D, PipelineError> {
        let mut v = vec![0.0; self.aperture.n * self.aperture.n];
        for (k, x) in values.iter().enumerate() {
            v[self.aperture_index(k)] = *x;
        }
        Ok(self.aperture.amplitude.with_values(v)?)
    }

    /// Zero-mean version of a phase over the pupil, zero outside.
    pub fn remove_piston(&self, phase: &Field2D) -> Result<Field2D, PipelineError> {
        let (mut s, mut c) = (0.0, 0usize);
        for (v, &m) in phase.values().iter().zip(&self.mask) {
            if m {
                s += v;
                c += 1;
            }
        }
        let mean = s / c as f64;
        let vals = phase
            .values()
            .iter()
            .zip(&self.mask)
            .map(|(v, &m)| if m { v - mean } else { 0.0 })
            .collect();
        Ok(phase.with_values(vals)?)
    }

    /// Pupil-restricted MSE of piston-free phases.
    pub fn phase_mse(&self, estimate: &Field2D, truth: &Field2D) -> Result<f64, PipelineError> {
        let e = self.remove_piston(estimate)?;
        let t = self.remove_piston(truth)?;
        Ok(wfdcs_core::metrics::mse(&e, &t, Some(&self.mask))?)
    }

    fn block_means(&self, screen: &Field2D) -> Vec<f64> {
        let os = self.oversample;
        let cols = screen.cols();
        self.lenslets
            .cells()
            .iter()
            .map(|&(j, i)| {
                let mut acc = 0.0;
                for r in j * os..(j + 1) * os {
                    for c in i * os..(i + 1) * os {
                        acc += screen.values()[r * cols + c];
                    }
                }
                acc / (os * os) as f64
            })
            .collect()
    }
}

/// Ground truth shared by every method and sweep cell of one trial.
pub struct Truth {
    pub trial: usize,
    pub screen: Field2D,
    /// Dense noiseless slopes at every lenslet.
    pub f_x: Vec<f64>,
    pub f_y: Vec<f64>,
    /// Lenslet-averaged phase on the aperture lattice, piston removed.
    pub phase: Field2D,
}

pub fn make_truth(cfg: &ExperimentConfig, geo: &Geometry, trial: usize) -> Result<Truth, PipelineError> {
    let seed = derive_seed(cfg.seed, &[TAG_SCREEN, trial as u64]);
    let screen = generate_phase_screen(&cfg.turbulence_params(seed))?;
    let (f_x, f_y) = sense_gradients(&screen, &geo.lenslets)?;
    let phase = geo.remove_piston(&geo.embed(&geo.block_means(&screen))?)?;
    Ok(Truth {
        trial,
        screen,
        f_x,
        f_y,
        phase,
    })
}

/// One (ratio, SNR) operating point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub ratio: f64,
    pub snr_db: f64,
}

impl Cell {
    fn key(&self) -> [u64; 2] {
        [self.ratio.to_bits(), self.snr_db.to_bits()]
    }
}

pub struct Estimate {
    pub method: Method,
    pub phase: Field2D,
    pub fit: ZernikeFit,
    pub mse: f64,
    pub recovery: Option<RecoveryResult>,
}

fn noisy(m: GradientMeasurement, snr_db: f64, seed: u64) -> Result<GradientMeasurement, PipelineError> {
    if snr_db.is_infinite() && snr_db > 0.0 {
        Ok(m)
    } else {
        Ok(add_noise(&m, snr_db, seed)?)
    }
}

/// Subsampled noisy measurement for a CS method.
pub fn measure(
    cfg: &ExperimentConfig,
    geo: &Geometry,
    truth: &Truth,
    cell: Cell,
) -> Result<GradientMeasurement, PipelineError> {
    let k = cell.key();
    let t = truth.trial as u64;
    let mask_seed = derive_seed(cfg.seed, &[TAG_MASK, t, k[0]]);
    let noise_seed = derive_seed(cfg.seed, &[TAG_NOISE, t, k[0], k[1]]);
    let m = decimate(&truth.f_x, &truth.f_y, cell.ratio, mask_seed, geo.n_grid(), cfg.mask_mode())?;
    noisy(m, cell.snr_db, noise_seed)
}

/// Runs one estimator; DS ignores the ratio and never calls the sparse solvers.
pub fn estimate(
    cfg: &ExperimentConfig,
    geo: &Geometry,
    truth: &Truth,
    method: Method,
    cell: Cell,
) -> Result<Estimate, PipelineError> {
    let (slopes, recovery) = match method {
        Method::Ds => {
            let dense = Cell { ratio: 1.0, ..cell };
            let m = measure(cfg, geo, truth, dense)?;
            (m.stacked(), None)
        }
        Method::Ccs | Method::Dcs => {
            let m = measure(cfg, geo, truth, cell)?;
            let opts = cfg.solver_opts();
            let rec = if method == Method::Ccs {
                ccs_recover(&m, &geo.layout, &opts)?
            } else {
                dcs_recover(&m, &geo.layout, &opts)?
            };
            (rec.lenslet_slopes(&geo.layout), Some(rec))
        }
    };
    let fit = geo.fitter.fit(&slopes)?;
    let phase = geo.remove_piston(&synthesize_phase(&fit, &geo.aperture)?)?;
    let mse = geo.phase_mse(&phase, &truth.phase)?;
    Ok(Estimate {
        method,
        phase,
        fit,
        mse,
        recovery,
    })
}
