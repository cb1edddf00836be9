//! The four CLI modes. Each writes its artifacts under `cfg.out` and returns the
//! in-memory results so tests can inspect them without reparsing files.
//!
//! Work items (trials, sweep cells) go through [`par::map`], which returns
//! results in input order; every reduction below iterates in that order, so the
//! CSVs are byte-identical between sequential and parallel runs.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use wfdcs_core::deconv::{convolve, tv_deconvolve, BlurOp};
use wfdcs_core::field::Field2D;
use wfdcs_core::io::{self as wio, BitDepth, TraceRow};
use wfdcs_core::metrics::{psnr, ssim, SsimParams, PSNR_CAP_DB};
use wfdcs_core::optics::{psf, Psf, Pupil, DEFAULT_FOCAL, DEFAULT_WAVELENGTH};
use wfdcs_core::par::{self, ExecMode};
use wfdcs_core::solver::RecoveryResult;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::{ExperimentConfig, Method};
use crate::error::PipelineError;
use crate::experiment::{derive_seed, estimate, make_truth, measure, Cell, Estimate, Geometry, Truth, TAG_IMAGE_NOISE};
use crate::images;
use crate::table::{emit_table, Table, TableRow, BLURRED};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Mode {
    Simulate,
    Recover,
    Deconvolve,
    Benchmark,
}

/// Error maps are exaggerated by this factor before display.
const ERROR_GAIN: f64 = 10.0;
const PSF_PREVIEW_DECADES: f64 = 4.0;

type Res<T> = Result<T, PipelineError>;

fn out_dir(cfg: &ExperimentConfig) -> Res<&Path> {
    fs::create_dir_all(&cfg.out)?;
    Ok(&cfg.out)
}

fn create(path: &Path) -> Res<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Collects per-item results, surfacing the first error in item order.
fn collect<T>(v: Vec<Res<T>>) -> Res<Vec<T>> {
    v.into_iter().collect()
}

fn truths(cfg: &ExperimentConfig, geo: &Geometry, exec: ExecMode) -> Res<Vec<Truth>> {
    collect(par::map_range(exec, cfg.sweep.trials, |t| make_truth(cfg, geo, t)))
}

/// Min-max over the pupil, used to put phases and error maps on one grey scale.
fn pupil_range(geo: &Geometry, f: &Field2D) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (&v, &m) in f.values().iter().zip(&geo.mask) {
        if m {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, lo + 0.5)
    }
}

fn preview(f: &Field2D, (lo, hi): (f64, f64), path: &Path) -> Res<()> {
    let scaled = f.map(|v| (v - lo) / (hi - lo))?;
    Ok(wio::save_pgm(path, &scaled, BitDepth::Eight)?)
}

/// Whole-field min-max preview.
fn preview_auto(f: &Field2D, path: &Path) -> Res<()> {
    let (lo, hi) = (f.min(), f.max());
    let range = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
    preview(f, range, path)
}

fn trace_rows(rec: &RecoveryResult) -> Vec<TraceRow> {
    let mut rows = Vec::with_capacity(rec.objective.len());
    let mut ends = Vec::new();
    let mut acc = 0;
    for &n in &rec.inner_iterations {
        acc += n;
        ends.push(acc);
    }
    for (i, &obj) in rec.objective.iter().enumerate() {
        let pass = ends.iter().position(|&e| e == i + 1);
        rows.push(TraceRow {
            iteration: i + 1,
            objective: obj,
            constraint_residual: pass.map(|p| rec.constraint_residual[p]),
        });
    }
    rows
}

fn selected(cfg: &ExperimentConfig) -> Vec<Method> {
    Method::ALL.into_iter().filter(|&m| cfg.has(m)).collect()
}

// ---------------------------------------------------------------- simulate

pub struct SimulateOutput {
    pub truths: Vec<Truth>,
}

pub fn simulate(cfg: &ExperimentConfig, exec: ExecMode) -> Res<SimulateOutput> {
    let geo = Geometry::new(cfg)?;
    let dir = out_dir(cfg)?;
    let truths = truths(cfg, &geo, exec)?;
    let cell = Cell {
        ratio: cfg.sweep.ratio,
        snr_db: cfg.sweep.snr_db,
    };
    for t in &truths {
        let k = t.trial;
        wio::save_field(dir.join(format!("screen_{k:03}.fld")), &t.screen)?;
        wio::save_field(dir.join(format!("phase_true_{k:03}.fld")), &t.phase)?;
        preview_auto(&t.screen, &dir.join(format!("screen_{k:03}.pgm")))?;
        let m = measure(cfg, &geo, t, cell)?;
        wio::write_measurement(create(&dir.join(format!("measurement_{k:03}.csv")))?, &m)?;
    }
    Ok(SimulateOutput { truths })
}

// ----------------------------------------------------------------- recover

pub struct RecoverOutput {
    /// `[trial][method]` in the order of [`Method::ALL`] restricted to the config.
    pub mse: Vec<Vec<(Method, f64)>>,
    /// Estimates of the first trial.
    pub first: Vec<Estimate>,
}

pub fn recover(cfg: &ExperimentConfig, exec: ExecMode) -> Res<RecoverOutput> {
    let geo = Geometry::new(cfg)?;
    let dir = out_dir(cfg)?;
    let methods = selected(cfg);
    let cell = Cell {
        ratio: cfg.sweep.ratio,
        snr_db: cfg.sweep.snr_db,
    };
    let tasks: Vec<(usize, Method)> = (0..cfg.sweep.trials)
        .flat_map(|t| methods.iter().map(move |&m| (t, m)))
        .collect();
    let truths = truths(cfg, &geo, exec)?;
    let estimates = collect(par::map(exec, &tasks, |&(t, m)| estimate(cfg, &geo, &truths[t], m, cell)))?;

    let mut csv = String::from("trial,method,mse\n");
    let mut mse = vec![Vec::new(); cfg.sweep.trials];
    for (&(t, m), e) in tasks.iter().zip(&estimates) {
        csv.push_str(&format!("{t},{m},{:.6e}\n", e.mse));
        mse[t].push((m, e.mse));
    }
    fs::write(dir.join("recover_mse.csv"), csv)?;

    let truth = &truths[0];
    let range = pupil_range(&geo, &truth.phase);
    let mid = 0.5 * (range.0 + range.1);
    wio::save_field(dir.join("phase_true.fld"), &truth.phase)?;
    preview(&truth.phase, range, &dir.join("phase_true.pgm"))?;
    let mut first = Vec::new();
    for (&(t, m), e) in tasks.iter().zip(estimates) {
        if t != 0 {
            continue;
        }
        let tag = m.name().to_lowercase();
        wio::save_field(dir.join(format!("phase_{tag}.fld")), &e.phase)?;
        preview(&e.phase, range, &dir.join(format!("phase_{tag}.pgm")))?;
        let err: Vec<f64> = e
            .phase
            .values()
            .iter()
            .zip(truth.phase.values())
            .zip(&geo.mask)
            .map(|((a, b), &inside)| if inside { mid + ERROR_GAIN * (a - b) } else { mid })
            .collect();
        preview(&e.phase.with_values(err)?, range, &dir.join(format!("error_{tag}_x10.pgm")))?;
        wio::write_zernike(create(&dir.join(format!("zernike_{tag}.csv")))?, &e.fit)?;
        if let Some(rec) = &e.recovery {
            wio::write_trace(create(&dir.join(format!("trace_{tag}.csv")))?, &trace_rows(rec))?;
        }
        first.push(e);
    }
    Ok(RecoverOutput { mse, first })
}

// -------------------------------------------------------------- deconvolve

pub struct DeconvolveOutput {
    pub rows: Vec<TableRow>,
    pub table: Table,
}

fn pupil_psf(geo: &Geometry, phase: &Field2D) -> Res<Psf> {
    let pupil = Pupil::new(geo.aperture.clone(), phase.clone(), DEFAULT_WAVELENGTH, DEFAULT_FOCAL)?;
    Ok(psf(&pupil, geo.aperture.n)?)
}

fn add_gaussian(f: &Field2D, std: f64, seed: u64) -> Res<Field2D> {
    if std == 0.0 {
        return Ok(f.clone());
    }
    let normal = Normal::new(0.0, std).map_err(|e| PipelineError::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = f.values().iter().map(|&x| x + normal.sample(&mut rng)).collect();
    Ok(f.with_values(v)?)
}

fn quality(estimate: &Field2D, truth: &Field2D) -> Res<(f64, f64)> {
    let p = psnr(estimate, truth, 1.0)?.min(PSNR_CAP_DB);
    let s = ssim(estimate, truth, &SsimParams::default())?;
    Ok((p, s))
}

pub fn deconvolve(cfg: &ExperimentConfig, exec: ExecMode) -> Res<DeconvolveOutput> {
    let geo = Geometry::new(cfg)?;
    let dir = out_dir(cfg)?;
    let methods = selected(cfg);
    let cell = Cell {
        ratio: cfg.sweep.ratio,
        snr_db: cfg.sweep.snr_db,
    };
    let truth = make_truth(cfg, &geo, cfg.deconv.trial)?;
    let estimates = collect(par::map(exec, &methods, |&m| estimate(cfg, &geo, &truth, m, cell)))?;

    let true_psf = pupil_psf(&geo, &truth.phase)?;
    wio::write_pgm_bytes(
        create(&dir.join("psf_true.pgm"))?,
        true_psf.size(),
        true_psf.size(),
        &true_psf.log_preview(PSF_PREVIEW_DECADES),
    )?;
    let mut method_psfs = Vec::new();
    for (m, e) in methods.iter().zip(&estimates) {
        let p = pupil_psf(&geo, &e.phase)?;
        let tag = m.name().to_lowercase();
        wio::write_pgm_bytes(
            create(&dir.join(format!("psf_{tag}.pgm")))?,
            p.size(),
            p.size(),
            &p.log_preview(PSF_PREVIEW_DECADES),
        )?;
        method_psfs.push((*m, p));
    }

    let imgs = collect(cfg.deconv.images.iter().map(|name| images::load(name, &cfg.base_dir)).collect())?;

    // one task per (image, noise level, row label); the blurred row needs no solve
    struct Task {
        image: usize,
        noise: usize,
        method: Option<usize>,
    }
    let mut tasks = Vec::new();
    for image in 0..imgs.len() {
        for noise in 0..cfg.deconv.noise_std.len() {
            tasks.push(Task { image, noise, method: None });
            for k in 0..method_psfs.len() {
                tasks.push(Task {
                    image,
                    noise,
                    method: Some(k),
                });
            }
        }
    }
    let observe = |image: usize, noise: usize| -> Res<Field2D> {
        let u = &imgs[image];
        let h = BlurOp::new(&true_psf, u.rows(), u.cols())?;
        let std = cfg.deconv.noise_std[noise];
        let seed = derive_seed(cfg.seed, &[TAG_IMAGE_NOISE, image as u64, std.to_bits()]);
        add_gaussian(&convolve(u, &h)?, std, seed)
    };
    let opts = cfg.deconv_opts();
    let results = collect(par::map(exec, &tasks, |task| -> Res<(TableRow, Field2D)> {
        let u = &imgs[task.image];
        let v = observe(task.image, task.noise)?;
        let (label, restored) = match task.method {
            None => (BLURRED.to_string(), v),
            Some(k) => {
                let (m, p) = &method_psfs[k];
                let h = BlurOp::new(p, u.rows(), u.cols())?;
                (m.table_label().to_string(), tv_deconvolve(&v, &h, &opts)?.image)
            }
        };
        let (psnr_db, ssim) = quality(&restored, u)?;
        let row = TableRow {
            image: cfg.deconv.images[task.image].clone(),
            noise_std: cfg.deconv.noise_std[task.noise],
            method: label,
            psnr_db,
            ssim,
        };
        Ok((row, restored))
    }))?;

    for (k, name) in cfg.deconv.images.iter().enumerate() {
        let stem = Path::new(name).file_stem().and_then(|s| s.to_str()).unwrap_or("image");
        wio::save_pgm(dir.join(format!("{stem}_original.pgm")), &imgs[k], BitDepth::Eight)?;
    }
    for (task, (row, img)) in tasks.iter().zip(&results) {
        if task.noise != 0 {
            continue;
        }
        let stem = Path::new(&row.image).file_stem().and_then(|s| s.to_str()).unwrap_or("image");
        let label = row.method.to_lowercase();
        wio::save_pgm(dir.join(format!("{stem}_{label}.pgm")), img, BitDepth::Eight)?;
    }

    let rows: Vec<TableRow> = results.into_iter().map(|(r, _)| r).collect();
    let mut labels = vec![BLURRED];
    labels.extend(methods.iter().map(|m| m.table_label()));
    let table = emit_table(&rows, &cfg.deconv.images, &cfg.deconv.noise_std, &labels)?;
    fs::write(dir.join("table1.csv"), &table.csv)?;
    fs::write(dir.join("table1.txt"), &table.text)?;
    Ok(DeconvolveOutput { rows, table })
}

// --------------------------------------------------------------- benchmark

/// One estimator run inside the sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub cell: Cell,
    pub trial: usize,
    pub method: Method,
    pub mse: f64,
    /// DCS only: `|Bc| / |c|` after every Bregman pass.
    pub constraint_trace: Vec<f64>,
    pub converged: Option<bool>,
    pub iterations: usize,
}

/// Mean and sample standard deviation of one method at one sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub x: f64,
    pub method: Method,
    pub mean: f64,
    pub std: f64,
    pub trials: usize,
}

pub struct BenchmarkOutput {
    pub records: Vec<RunRecord>,
    pub ratio_curve: Vec<CurvePoint>,
    pub snr_curve: Vec<CurvePoint>,
}

impl BenchmarkOutput {
    pub fn point(curve: &[CurvePoint], x: f64, m: Method) -> Option<&CurvePoint> {
        curve.iter().find(|p| p.x == x && p.method == m)
    }
}

fn curve(records: &[RunRecord], cells: &[Cell], methods: &[Method], x: impl Fn(&Cell) -> f64) -> Vec<CurvePoint> {
    let mut out = Vec::new();
    for c in cells {
        for &m in methods {
            let v: Vec<f64> = records.iter().filter(|r| r.cell == *c && r.method == m).map(|r| r.mse).collect();
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let var = if v.len() > 1 {
                v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            out.push(CurvePoint {
                x: x(c),
                method: m,
                mean,
                std: var.sqrt(),
                trials: v.len(),
            });
        }
    }
    out
}

fn write_curve(path: &Path, xname: &str, points: &[CurvePoint]) -> Res<()> {
    let mut w = create(path)?;
    writeln!(w, "{xname},method,mean_mse,std_mse,trials")?;
    for p in points {
        writeln!(w, "{},{},{:.6e},{:.6e},{}", p.x, p.method, p.mean, p.std, p.trials)?;
    }
    w.flush()?;
    Ok(())
}

pub fn benchmark(cfg: &ExperimentConfig, exec: ExecMode) -> Res<BenchmarkOutput> {
    let geo = Geometry::new(cfg)?;
    let dir = out_dir(cfg)?;
    let methods = selected(cfg);
    let ratio_cells: Vec<Cell> = cfg
        .sweep
        .ratios
        .iter()
        .map(|&ratio| Cell {
            ratio,
            snr_db: cfg.sweep.snr_db,
        })
        .collect();
    let snr_cells: Vec<Cell> = cfg
        .sweep
        .snr_levels
        .iter()
        .map(|&snr_db| Cell {
            ratio: cfg.sweep.ratio,
            snr_db,
        })
        .collect();
    let mut cells: Vec<Cell> = Vec::new();
    for c in ratio_cells.iter().chain(&snr_cells) {
        if !cells.contains(c) {
            cells.push(*c);
        }
    }
    // DS does not depend on the ratio: run it once per (SNR, trial)
    let mut tasks: Vec<(Cell, usize, Method)> = Vec::new();
    for t in 0..cfg.sweep.trials {
        for c in &cells {
            for &m in &methods {
                let shared = m == Method::Ds
                    && tasks.iter().any(|(tc, tt, tm)| *tm == m && *tt == t && tc.snr_db == c.snr_db);
                if !shared {
                    tasks.push((*c, t, m));
                }
            }
        }
    }

    let truths = truths(cfg, &geo, exec)?;
    let runs = collect(par::map(exec, &tasks, |&(cell, t, m)| -> Res<RunRecord> {
        let e = estimate(cfg, &geo, &truths[t], m, cell)?;
        let (constraint_trace, converged, iterations) = match &e.recovery {
            Some(r) => (
                if m == Method::Dcs { r.constraint_residual.clone() } else { Vec::new() },
                Some(r.converged),
                r.inner_iterations.iter().sum(),
            ),
            None => (Vec::new(), None, 0),
        };
        Ok(RunRecord {
            cell,
            trial: t,
            method: m,
            mse: e.mse,
            constraint_trace,
            converged,
            iterations,
        })
    }))?;

    // replicate the shared DS runs onto every cell with the same SNR
    let mut records = Vec::new();
    for c in &cells {
        for t in 0..cfg.sweep.trials {
            for &m in &methods {
                let r = runs
                    .iter()
                    .find(|r| r.trial == t && r.method == m && (r.cell == *c || (m == Method::Ds && r.cell.snr_db == c.snr_db)))
                    .expect("every (cell, trial, method) has a run");
                records.push(RunRecord { cell: *c, ..r.clone() });
            }
        }
    }

    let ratio_curve = curve(&records, &ratio_cells, &methods, |c| c.ratio);
    let snr_curve = curve(&records, &snr_cells, &methods, |c| c.snr_db);
    write_curve(&dir.join("mse_vs_ratio.csv"), "ratio", &ratio_curve)?;
    write_curve(&dir.join("mse_vs_snr.csv"), "snr_db", &snr_curve)?;

    let mut w = create(&dir.join("benchmark_runs.csv"))?;
    writeln!(w, "ratio,snr_db,trial,method,mse,final_constraint_residual,converged,iterations")?;
    for r in &records {
        let resid = r.constraint_trace.last().map(|v| format!("{v:.6e}")).unwrap_or_default();
        let conv = r.converged.map(|c| c.to_string()).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{:.6e},{},{},{}",
            r.cell.ratio, r.cell.snr_db, r.trial, r.method, r.mse, resid, conv, r.iterations
        )?;
    }
    w.flush()?;

    let mut w = create(&dir.join("constraint_traces.csv"))?;
    writeln!(w, "ratio,snr_db,trial,outer_iteration,constraint_residual")?;
    for r in records.iter().filter(|r| r.method == Method::Dcs) {
        for (k, v) in r.constraint_trace.iter().enumerate() {
            writeln!(w, "{},{},{},{},{:.6e}", r.cell.ratio, r.cell.snr_db, r.trial, k + 1, v)?;
        }
    }
    w.flush()?;

    Ok(BenchmarkOutput {
        records,
        ratio_curve,
        snr_curve,
    })
}

/// Runs one mode and returns the output directory.
pub fn run_pipeline(cfg: &ExperimentConfig, mode: Mode, exec: ExecMode) -> Res<PathBuf> {
    match mode {
        Mode::Simulate => simulate(cfg, exec).map(|_| ()),
        Mode::Recover => recover(cfg, exec).map(|_| ()),
        Mode::Deconvolve => deconvolve(cfg, exec).map(|_| ()),
        Mode::Benchmark => benchmark(cfg, exec).map(|_| ()),
    }?;
    Ok(cfg.out.clone())
}
