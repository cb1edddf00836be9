//! Procedural stand-ins for the deconvolution test images, plus PGM loading.

use std::path::Path;

use wfdcs_core::field::Field2D;

use crate::error::PipelineError;

pub const IMAGE_SIZE: usize = 256;
const SUPERSAMPLE: usize = 4;

pub const BUILTIN: [&str; 2] = ["satellite", "saturn"];

/// Renders `shade(x, y)` over `[-1, 1]^2` with box-filtered supersampling.
fn render(n: usize, shade: impl Fn(f64, f64) -> f64) -> Field2D {
    let s = SUPERSAMPLE;
    let mut v = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            let mut acc = 0.0;
            for a in 0..s {
                for b in 0..s {
                    let y = -1.0 + 2.0 * (r as f64 + (a as f64 + 0.5) / s as f64) / n as f64;
                    let x = -1.0 + 2.0 * (c as f64 + (b as f64 + 0.5) / s as f64) / n as f64;
                    acc += shade(x, y);
                }
            }
            v[r * n + c] = (acc / (s * s) as f64).clamp(0.0, 1.0);
        }
    }
    Field2D::new(n, n, 1.0, (0.0, 0.0), v).expect("square lattice")
}

/// Disk-shaped bus with two gridded solar panels and an antenna boom.
pub fn satellite(n: usize) -> Field2D {
    render(n, |x, y| {
        // rotate the whole spacecraft slightly so edges are not lattice-aligned
        let (s, c) = (0.35f64.sin(), 0.35f64.cos());
        let (u, w) = (c * x + s * y, -s * x + c * y);
        let r = (u * u + w * w).sqrt();
        if r < 0.22 {
            // limb-darkened bus with a bright hatch
            let hatch = if (u - 0.06).abs() < 0.05 && (w + 0.05).abs() < 0.04 { 0.25 } else { 0.0 };
            return 0.55 + 0.35 * (1.0 - (r / 0.22).powi(2)).sqrt() + hatch;
        }
        let in_panel = (0.3..0.85).contains(&u.abs()) && w.abs() < 0.16;
        if in_panel {
            let cell_u = ((u.abs() - 0.3) / 0.11).fract();
            let cell_w = ((w + 0.16) / 0.08).fract();
            let gap = cell_u < 0.12 || cell_w < 0.15;
            return if gap { 0.2 } else { 0.7 };
        }
        if (0.22..0.3).contains(&u.abs()) && w.abs() < 0.02 {
            return 0.5;
        }
        if (-0.55..-0.22).contains(&w) && u.abs() < 0.015 {
            return 0.6;
        }
        if ((u * u + (w + 0.58).powi(2)).sqrt()) < 0.05 {
            return 0.9;
        }
        0.0
    })
}

/// Banded planet disk behind an inclined ring system with a Cassini-like gap.
pub fn saturn(n: usize) -> Field2D {
    render(n, |x, y| {
        let tilt = 0.3f64;
        let (s, c) = (tilt.sin(), tilt.cos());
        let (u, w) = (c * x + s * y, -s * x + c * y);
        // ring plane seen at an inclination: ellipse with axis ratio 0.35
        let er = (u * u + (w / 0.35).powi(2)).sqrt();
        let ring = if (0.5..0.62).contains(&er) {
            0.75
        } else if (0.64..0.82).contains(&er) {
            0.55 - 0.2 * (er - 0.64) / 0.18
        } else {
            0.0
        };
        let r = (u * u + w * w).sqrt();
        let planet = if r < 0.42 {
            let limb = (1.0 - (r / 0.42).powi(2)).sqrt();
            let bands = 0.12 * (w * 28.0).sin();
            (0.45 + 0.4 * limb + bands).max(0.0)
        } else {
            0.0
        };
        // the near half of the ring passes in front of the disk
        let front = w > 0.0;
        if ring > 0.0 && (front || planet == 0.0) {
            ring
        } else if planet > 0.0 {
            // ring shadow on the globe
            if (0.5..0.82).contains(&er) {
                planet * 0.5
            } else {
                planet
            }
        } else {
            0.0
        }
    })
}

/// Built-in image by name, or a binary PGM path relative to `base`.
pub fn load(name: &str, base: &Path) -> Result<Field2D, PipelineError> {
    match name {
        "satellite" => Ok(satellite(IMAGE_SIZE)),
        "saturn" => Ok(saturn(IMAGE_SIZE)),
        path => {
            let p = base.join(path);
            if !p.exists() {
                return Err(PipelineError::MissingInput(format!("image {}", p.display())));
            }
            let img = wfdcs_core::io::load_pgm(&p)?;
            if img.rows() != img.cols() {
                return Err(PipelineError::Config(format!(
                    "image {} must be square, got {}x{}",
                    p.display(),
                    img.rows(),
                    img.cols()
                )));
            }
            Ok(img)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_are_bounded_and_nontrivial() {
        for img in [satellite(64), saturn(64)] {
            let v = img.values();
            assert!(v.iter().all(|&p| (0.0..=1.0).contains(&p)));
            let lit = v.iter().filter(|&&p| p > 0.1).count();
            assert!(lit > 200 && lit < 64 * 64 - 200, "lit = {lit}");
        }
    }

    #[test]
    fn builtins_are_deterministic() {
        assert_eq!(satellite(32), satellite(32));
        assert_ne!(satellite(32), saturn(32));
    }

    #[test]
    fn missing_pgm_is_missing_input() {
        let err = load("no/such/file.pgm", Path::new("/nonexistent")).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }
}
