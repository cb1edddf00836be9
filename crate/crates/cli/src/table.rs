//! Deconvolution quality table: one row per (image, noise std, method).

use std::fmt::Write as _;

use crate::error::PipelineError;

/// Row label for the blurred, undeconvolved observation.
pub const BLURRED: &str = "Blurred";

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub image: String,
    pub noise_std: f64,
    /// `Blurred`, `DS`, `CS` or `DCS`.
    pub method: String,
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Published PSNR (dB) for the paper's own images, noise std 1e-5, 1e-3, 3e-3, 5e-3.
const REFERENCE_PSNR: [(&str, &str, [f64; 4]); 8] = [
    ("satellite", "Blurred", [14.06, 14.06, 14.06, 14.05]),
    ("satellite", "DS", [27.97, 27.75, 25.97, 22.43]),
    ("satellite", "CS", [17.06, 16.93, 16.54, 15.63]),
    ("satellite", "DCS", [27.42, 27.22, 25.56, 22.22]),
    ("saturn", "Blurred", [17.78, 17.78, 17.78, 17.78]),
    ("saturn", "DS", [31.49, 31.08, 28.50, 23.89]),
    ("saturn", "CS", [23.42, 23.38, 22.80, 20.55]),
    ("saturn", "DCS", [31.02, 30.65, 28.30, 23.72]),
];

/// Published SSIM at noise std 1e-5.
const REFERENCE_SSIM: [(&str, [f64; 4]); 2] = [
    ("satellite", [0.200, 0.730, 0.349, 0.674]),
    ("saturn", [0.226, 0.688, 0.424, 0.656]),
];

pub struct Table {
    pub csv: String,
    pub text: String,
}

/// Orders rows as images x noise levels x labels and renders CSV plus an aligned
/// text table. Every combination must be present exactly once.
pub fn emit_table(
    rows: &[TableRow],
    images: &[String],
    noise_std: &[f64],
    labels: &[&str],
) -> Result<Table, PipelineError> {
    let mut ordered = Vec::new();
    let mut missing = Vec::new();
    for img in images {
        for &s in noise_std {
            for &label in labels {
                let hits: Vec<&TableRow> = rows
                    .iter()
                    .filter(|r| &r.image == img && r.noise_std == s && r.method == label)
                    .collect();
                match hits.as_slice() {
                    [one] => ordered.push(*one),
                    _ => missing.push(format!("{img}/{s:e}/{label}")),
                }
            }
        }
    }
    if !missing.is_empty() {
        return Err(PipelineError::Incomplete(missing));
    }

    let mut csv = String::from("image,noise_std,method,psnr_db,ssim\n");
    for r in &ordered {
        writeln!(csv, "{},{:e},{},{:.4},{:.4}", r.image, r.noise_std, r.method, r.psnr_db, r.ssim).unwrap();
    }

    let mut text = String::new();
    text.push_str("# PSNR uses peak = 1.0 on images normalised to [0, 1]; SSIM window 11, sigma 1.5\n");
    text.push_str("# paper reference (its own images; not expected to match the synthetic stand-ins):\n");
    for (img, label, v) in REFERENCE_PSNR {
        writeln!(text, "#   {img:<10} {label:<8} PSNR {:>6.2} {:>6.2} {:>6.2} {:>6.2}", v[0], v[1], v[2], v[3]).unwrap();
    }
    for (img, v) in REFERENCE_SSIM {
        writeln!(
            text,
            "#   {img:<10} SSIM@1e-5 Blurred {:.3} DS {:.3} CS {:.3} DCS {:.3}",
            v[0], v[1], v[2], v[3]
        )
        .unwrap();
    }
    writeln!(text, "{:<12} {:>10} {:<8} {:>9} {:>7}", "image", "noise_std", "method", "psnr_db", "ssim").unwrap();
    for r in &ordered {
        writeln!(
            text,
            "{:<12} {:>10.0e} {:<8} {:>9.2} {:>7.3}",
            r.image, r.noise_std, r.method, r.psnr_db, r.ssim
        )
        .unwrap();
    }
    Ok(Table { csv, text })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(image: &str, s: f64, m: &str, p: f64) -> TableRow {
        TableRow {
            image: image.into(),
            noise_std: s,
            method: m.into(),
            psnr_db: p,
            ssim: 0.5,
        }
    }

    #[test]
    fn orders_rows_and_matches_schema() {
        let rows = vec![row("satellite", 1e-5, "DS", 20.0), row("satellite", 1e-5, BLURRED, 14.0)];
        let t = emit_table(&rows, &["satellite".into()], &[1e-5], &[BLURRED, "DS"]).unwrap();
        let lines: Vec<&str> = t.csv.lines().collect();
        assert_eq!(lines[0], "image,noise_std,method,psnr_db,ssim");
        assert_eq!(lines[1], "satellite,1e-5,Blurred,14.0000,0.5000");
        assert_eq!(lines[2], "satellite,1e-5,DS,20.0000,0.5000");
        assert!(t.text.contains("satellite  Blurred  PSNR  14.06"));
        let shuffled = vec![rows[1].clone(), rows[0].clone()];
        let t2 = emit_table(&shuffled, &["satellite".into()], &[1e-5], &[BLURRED, "DS"]).unwrap();
        assert_eq!(t.csv, t2.csv);
    }

    #[test]
    fn missing_cells_are_listed() {
        let rows = vec![row("saturn", 1e-3, "DS", 20.0)];
        match emit_table(&rows, &["saturn".into()], &[1e-3], &[BLURRED, "DS", "DCS"]) {
            Err(PipelineError::Incomplete(m)) => assert_eq!(m, vec!["saturn/1e-3/Blurred", "saturn/1e-3/DCS"]),
            other => panic!("unexpected {:?}", other.map(|t| t.csv)),
        }
    }
}
