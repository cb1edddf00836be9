//! Ensemble statistics of the phase-screen generator.

use wfdcs_core::field::Field2D;
use wfdcs_core::turbulence::{generate_phase_screen, kolmogorov_structure, TurbulenceParams};

const SCREENS: u64 = 200;

/// `<(phi(x + s) - phi(x))^2>` along x and along y for lag `s` cells.
fn structure(f: &Field2D, s: usize) -> (f64, f64) {
    let (n, v) = (f.rows(), f.values());
    let (mut dx, mut dy) = (0.0, 0.0);
    for r in 0..n - s {
        for c in 0..n - s {
            dx += (v[r * n + c + s] - v[r * n + c]).powi(2);
            dy += (v[(r + s) * n + c] - v[r * n + c]).powi(2);
        }
    }
    let k = ((n - s) * (n - s)) as f64;
    (dx / k, dy / k)
}

#[test]
fn structure_function_follows_kolmogorov_and_is_isotropic() {
    let base = TurbulenceParams {
        r0: 0.01,
        n: 128,
        ..TurbulenceParams::default()
    };
    assert_eq!(base.r0, base.screen_size / 10.0);
    let h = base.spacing();
    let lags: Vec<usize> = vec![4, 6, 8, 12, 16, 24, 32];
    assert!(lags.iter().all(|&s| s as f64 * h <= base.screen_size / 4.0 + 1e-12));
    let mut acc = vec![(0.0, 0.0); lags.len()];
    for seed in 0..SCREENS {
        let screen = generate_phase_screen(&TurbulenceParams { seed, ..base.clone() }).unwrap();
        for (a, &s) in acc.iter_mut().zip(&lags) {
            let (x, y) = structure(&screen, s);
            a.0 += x;
            a.1 += y;
        }
    }
    for ((dx, dy), &s) in acc.iter().zip(&lags) {
        let (dx, dy) = (dx / SCREENS as f64, dy / SCREENS as f64);
        let model = kolmogorov_structure(s as f64 * h, base.r0);
        let d = 0.5 * (dx + dy);
        assert!(
            (d - model).abs() <= 0.3 * model,
            "lag {s}: D = {d:.3} vs Kolmogorov {model:.3}"
        );
        assert!((dx - dy).abs() <= 0.1 * d, "lag {s}: anisotropic {dx:.3} vs {dy:.3}");
    }
}
