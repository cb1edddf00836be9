//! Fourier optics: pupil function, amplitude spread function and PSF.
//!
//! The ASF is the centred unitary DFT of the generalized pupil function
//! `A exp(j phi)` zero-padded to `out_size`, scaled by `1 / (lambda z)`.

use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::fft::{fftshift, ifftshift, Fft2};
use crate::field::{ApertureSpec, Field2D};

pub const DEFAULT_WAVELENGTH: f64 = 550e-9;
pub const DEFAULT_FOCAL: f64 = 1.0;

#[derive(Debug, Clone)]
pub struct Pupil {
    pub aperture: ApertureSpec,
    /// Phase in radians on the aperture lattice.
    pub phase: Field2D,
    pub wavelength: f64,
    pub focal: f64,
}

impl Pupil {
    pub fn new(aperture: ApertureSpec, phase: Field2D, wavelength: f64, focal: f64) -> Result<Self> {
        aperture.amplitude.check_compatible(&phase)?;
        if !(wavelength > 0.0 && focal > 0.0) {
            return invalid("wavelength and focal distance must be positive");
        }
        Ok(Self {
            aperture,
            phase,
            wavelength,
            focal,
        })
    }

    pub fn flat(aperture: ApertureSpec) -> Result<Self> {
        let phase = aperture.amplitude.map(|_| 0.0)?;
        Self::new(aperture, phase, DEFAULT_WAVELENGTH, DEFAULT_FOCAL)
    }

    /// `A exp(j phi)` on the aperture lattice.
    pub fn gpf(&self) -> Vec<Complex64> {
        self.aperture
            .amplitude
            .values()
            .iter()
            .zip(self.phase.values())
            .map(|(&a, &p)| Complex64::from_polar(a, p))
            .collect()
    }

    /// Focal-plane sample spacing for a given padded size.
    pub fn focal_spacing(&self, out_size: usize) -> f64 {
        self.wavelength * self.focal / (out_size as f64 * self.phase.spacing())
    }
}

/// Centred complex field from [`asf`].
#[derive(Debug, Clone, PartialEq)]
pub struct Asf {
    pub size: usize,
    pub values: Vec<Complex64>,
}

pub fn asf(p: &Pupil, out_size: usize) -> Result<Asf> {
    let (rows, cols) = p.phase.shape();
    if rows != cols {
        return invalid("pupil lattice must be square");
    }
    let n = rows;
    if out_size < n {
        return invalid(format!("output size {out_size} is smaller than the pupil grid {n}"));
    }
    let mut buf = vec![Complex64::new(0.0, 0.0); out_size * out_size];
    let off = out_size / 2 - n / 2;
    for (k, v) in p.gpf().into_iter().enumerate() {
        buf[(k / n + off) * out_size + k % n + off] = v;
    }
    let mut spec = ifftshift(&buf, out_size, out_size);
    Fft2::new(out_size, out_size).forward(&mut spec);
    let scale = 1.0 / (out_size as f64 * p.wavelength * p.focal);
    let values = fftshift(&spec, out_size, out_size).into_iter().map(|z| z * scale).collect();
    Ok(Asf { size: out_size, values })
}

/// Non-negative intensity normalised to unit sum.
#[derive(Debug, Clone, PartialEq)]
pub struct Psf {
    pub intensity: Field2D,
}

impl Psf {
    pub fn size(&self) -> usize {
        self.intensity.rows()
    }

    /// Discrete delta at the centre cell `(n/2, n/2)`.
    pub fn delta(n: usize) -> Result<Self> {
        let mut v = vec![0.0; n * n];
        v[(n / 2) * n + n / 2] = 1.0;
        Ok(Self {
            intensity: Field2D::centered(n, 1.0, v)?,
        })
    }

    /// Wraps and normalises arbitrary non-negative values.
    pub fn from_intensity(intensity: Field2D) -> Result<Self> {
        if intensity.rows() != intensity.cols() {
            return invalid("PSF must be square");
        }
        if intensity.values().iter().any(|&v| v < 0.0) {
            return invalid("PSF values must be non-negative");
        }
        let s = intensity.sum();
        if !(s > 0.0) {
            return Err(Error::DegeneratePupil);
        }
        Ok(Self {
            intensity: intensity.map(|v| v / s)?,
        })
    }

    /// 8-bit preview: `log10` stretched over `decades` below the peak.
    pub fn log_preview(&self, decades: f64) -> Vec<u8> {
        let peak = self.intensity.max();
        let floor = peak * 10f64.powf(-decades);
        self.intensity
            .values()
            .iter()
            .map(|&v| {
                let t = ((v.max(floor) / peak).log10() + decades) / decades;
                (t.clamp(0.0, 1.0) * 255.0).round() as u8
            })
            .collect()
    }
}

pub fn psf(p: &Pupil, out_size: usize) -> Result<Psf> {
    if p.aperture.amplitude.values().iter().all(|&a| a == 0.0) {
        return Err(Error::DegeneratePupil);
    }
    let h = asf(p, out_size)?;
    let mut intensity: Vec<f64> = h.values.iter().map(|z| z.norm_sqr()).collect();
    let s: f64 = intensity.iter().sum();
    intensity.iter_mut().for_each(|v| *v /= s);
    Ok(Psf {
        intensity: Field2D::centered(out_size, p.focal_spacing(out_size), intensity)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::make_circular_aperture;

    fn tilted(aperture: &ApertureSpec, alpha: f64) -> Pupil {
        let phase = Field2D::from_fn(aperture.n, aperture.amplitude.spacing(), |x, _| alpha * x).unwrap();
        Pupil::new(aperture.clone(), phase, DEFAULT_WAVELENGTH, DEFAULT_FOCAL).unwrap()
    }

    #[test]
    fn flat_psf_contract_and_symmetry() {
        let ap = make_circular_aperture(64, 0.1).unwrap();
        let out = 128;
        let p = psf(&Pupil::flat(ap).unwrap(), out).unwrap();
        let v = p.intensity.values();
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(v.iter().all(|&x| x >= 0.0));
        let peak = v.iter().cloned().fold(0.0, f64::max);
        assert_eq!(v[(out / 2) * out + out / 2], peak);
        for r in 0..out {
            for c in 0..out {
                let m = ((out - r) % out) * out + (out - c) % out;
                assert!((v[r * out + c] - v[m]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn parseval() {
        let ap = make_circular_aperture(32, 0.1).unwrap();
        let p = tilted(&ap, 300.0);
        let h = asf(&p, 64).unwrap();
        let lhs: f64 = h.values.iter().map(|z| z.norm_sqr()).sum();
        let rhs: f64 = p.gpf().iter().map(|z| z.norm_sqr()).sum::<f64>() / (p.wavelength * p.focal).powi(2);
        assert!((lhs - rhs).abs() / rhs < 1e-8);
    }

    #[test]
    fn airy_first_zero_and_direct_sum() {
        let n = 128;
        let out = 256;
        let ap = make_circular_aperture(n, 0.1).unwrap();
        let pupil = Pupil::flat(ap).unwrap();
        let h = asf(&pupil, out).unwrap();
        let c = out / 2;
        let row: Vec<f64> = (0..24).map(|k| h.values[c * out + c + k].norm()).collect();
        let first_min = (1..23).find(|&k| row[k] < row[k - 1] && row[k] <= row[k + 1]).unwrap();
        // pupil spans n/2 cells of an n-cell lattice padded to `out`
        let expected = 1.22 * out as f64 / (n as f64 / 2.0);
        assert!((first_min as f64 - expected).abs() <= 1.0, "{first_min} vs {expected}");

        // direct evaluation of the centred DFT at a few bins
        let g = pupil.gpf();
        let off = (out / 2 - n / 2) as f64;
        let scale = 1.0 / (out as f64 * pupil.wavelength * pupil.focal);
        for (kr, kc) in [(0i64, 0i64), (0, 3), (2, -5), (7, 7)] {
            let mut acc = Complex64::new(0.0, 0.0);
            for (k, v) in g.iter().enumerate() {
                let (r, cc) = ((k / n) as f64 + off - c as f64, (k % n) as f64 + off - c as f64);
                let ang = -2.0 * std::f64::consts::PI * (kr as f64 * r + kc as f64 * cc) / out as f64;
                acc += v * Complex64::from_polar(1.0, ang);
            }
            let idx = (c as i64 + kr) as usize * out + (c as i64 + kc) as usize;
            assert!((acc * scale - h.values[idx]).norm() < 1e-9 * acc.norm().max(1.0) * scale);
        }
    }

    #[test]
    fn tilt_translates_psf() {
        let n = 64;
        let out = 128;
        let ap = make_circular_aperture(n, 0.1).unwrap();
        let base = psf(&Pupil::flat(ap.clone()).unwrap(), out).unwrap();
        let h = ap.amplitude.spacing();
        for shift in [3usize, 10] {
            let alpha = 2.0 * std::f64::consts::PI * shift as f64 / (out as f64 * h);
            let moved = psf(&tilted(&ap, alpha), out).unwrap();
            let (a, b) = (base.intensity.values(), moved.intensity.values());
            for r in 0..out {
                for c in 0..out {
                    assert!((b[r * out + (c + shift) % out] - a[r * out + c]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn phase_offsets_do_not_matter() {
        let ap = make_circular_aperture(32, 0.1).unwrap();
        let p = tilted(&ap, 120.0);
        let shifted = Pupil::new(
            ap.clone(),
            p.phase.map(|v| v + 2.0 * std::f64::consts::PI).unwrap(),
            p.wavelength,
            p.focal,
        )
        .unwrap();
        let (a, b) = (psf(&p, 64).unwrap(), psf(&shifted, 64).unwrap());
        for (x, y) in a.intensity.values().iter().zip(b.intensity.values()) {
            assert!((x - y).abs() < 1e-12);
        }
        let ha = asf(&p, 64).unwrap();
        let q = Pupil::new(ap, p.phase.map(|v| v + 0.7).unwrap(), p.wavelength, p.focal).unwrap();
        let hb = asf(&q, 64).unwrap();
        for (x, y) in ha.values.iter().zip(&hb.values) {
            assert!((x.norm() - y.norm()).abs() < 1e-12 * ha.values.iter().map(|z| z.norm()).fold(0.0, f64::max));
        }
    }

    #[test]
    fn degenerate_and_undersized() {
        let mut ap = make_circular_aperture(16, 0.1).unwrap();
        let p = Pupil::flat(ap.clone()).unwrap();
        assert!(asf(&p, 8).is_err());
        ap.amplitude = ap.amplitude.map(|_| 0.0).unwrap();
        let p = Pupil::flat(ap).unwrap();
        assert!(asf(&p, 16).unwrap().values.iter().all(|z| z.norm() == 0.0));
        assert!(matches!(psf(&p, 16), Err(Error::DegeneratePupil)));
    }
}
