//! Experiment configuration (TOML).
//!
//! Every key has a default, so an empty file is a valid configuration:
//!
//! ```toml
//! seed = 1
//! out = "out"
//! methods = ["DS", "CCS", "DCS"]
//!
//! [turbulence]   # r0, outer_scale, inner_scale, screen_size (m), oversample, subharmonics
//! [sensor]       # n_grid, focal, coupled_mask, zernike_order
//! [sweep]        # ratios, snr_levels, ratio, snr_db, trials
//! [solver]       # lambda_factor, lambda, delta, max_inner, max_outer, tol, tol_constraint,
//!                # wavelet_levels, curl_stencil ("forward" | "cell-centered")
//! [deconv]       # gamma, outer_iters, inner_tv_iters, tol, noise_std, images, trial
//! ```

use std::fmt;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use wfdcs_core::deconv::DeconvOpts;
use wfdcs_core::shi::MaskMode;
use wfdcs_core::solver::{CurlStencil, SolverOpts};
use wfdcs_core::turbulence::TurbulenceParams;
use wfdcs_core::wavelet::WaveletSpec;

use crate::error::PipelineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Deserialize)]
pub enum Method {
    #[serde(rename = "DS")]
    Ds,
    #[serde(rename = "CCS", alias = "CS")]
    Ccs,
    #[serde(rename = "DCS")]
    Dcs,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Ds, Method::Ccs, Method::Dcs];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ds => "DS",
            Method::Ccs => "CCS",
            Method::Dcs => "DCS",
        }
    }

    /// Row label used by the deconvolution table.
    pub fn table_label(self) -> &'static str {
        match self {
            Method::Ds => "DS",
            Method::Ccs => "CS",
            Method::Dcs => "DCS",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TurbulenceSection {
    pub r0: f64,
    pub outer_scale: f64,
    pub inner_scale: f64,
    /// Screen side in metres; the lenslet disk is inscribed in it.
    pub screen_size: f64,
    /// Screen samples per lenslet along each axis.
    pub oversample: usize,
    pub subharmonics: usize,
}

impl Default for TurbulenceSection {
    fn default() -> Self {
        let p = TurbulenceParams::default();
        Self {
            r0: p.r0,
            outer_scale: p.outer_scale,
            inner_scale: p.inner_scale,
            screen_size: p.screen_size,
            oversample: 4,
            subharmonics: p.subharmonics,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorSection {
    /// Lenslets per side.
    pub n_grid: usize,
    pub focal: f64,
    /// Share one lenslet subset between both slope channels.
    pub coupled_mask: bool,
    pub zernike_order: usize,
}

impl Default for SensorSection {
    fn default() -> Self {
        Self {
            n_grid: 128,
            focal: 0.01,
            coupled_mask: false,
            zernike_order: wfdcs_core::zernike::DEFAULT_ORDER,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    /// Compression ratios of the MSE-vs-ratio curve (run at `snr_db`).
    pub ratios: Vec<f64>,
    /// SNR levels of the MSE-vs-SNR curve (run at `ratio`).
    pub snr_levels: Vec<f64>,
    /// Ratio for `simulate`, `recover`, `deconvolve` and the SNR curve.
    pub ratio: f64,
    /// SNR for `simulate`, `recover`, `deconvolve` and the ratio curve.
    pub snr_db: f64,
    pub trials: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            ratios: vec![0.3, 0.4, 0.5, 0.6, 0.7, 0.8],
            snr_levels: vec![20.0, 30.0, 40.0, 50.0],
            ratio: 0.5,
            snr_db: 40.0,
            trials: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub lambda_factor: f64,
    pub lambda: Option<f64>,
    pub delta: f64,
    pub max_inner: usize,
    pub max_outer: usize,
    pub tol: f64,
    pub tol_constraint: f64,
    pub wavelet_levels: usize,
    pub curl_stencil: Stencil,
}

/// Serde mirror of [`CurlStencil`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stencil {
    #[default]
    Forward,
    CellCentered,
}

impl From<Stencil> for CurlStencil {
    fn from(s: Stencil) -> Self {
        match s {
            Stencil::Forward => CurlStencil::Forward,
            Stencil::CellCentered => CurlStencil::CellCentered,
        }
    }
}

impl Default for SolverSection {
    fn default() -> Self {
        let o = SolverOpts::default();
        Self {
            lambda_factor: o.lambda_factor,
            lambda: o.lambda,
            delta: o.delta,
            max_inner: o.max_inner,
            max_outer: o.max_outer,
            tol: o.tol,
            tol_constraint: o.tol_constraint,
            wavelet_levels: wfdcs_core::wavelet::DEFAULT_LEVELS,
            curl_stencil: Stencil::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeconvSection {
    pub gamma: f64,
    pub outer_iters: usize,
    pub inner_tv_iters: usize,
    pub tol: f64,
    pub noise_std: Vec<f64>,
    /// Built-in names (`satellite`, `saturn`) or PGM paths relative to the config file.
    pub images: Vec<String>,
    /// Trial whose phase screen drives the deconvolution experiment.
    pub trial: usize,
}

impl Default for DeconvSection {
    fn default() -> Self {
        let o = DeconvOpts::default();
        Self {
            gamma: o.gamma,
            outer_iters: o.outer_iters,
            inner_tv_iters: o.inner_tv_iters,
            tol: o.tol,
            noise_std: vec![1e-5, 0.001, 0.003, 0.005],
            images: vec!["satellite".into(), "saturn".into()],
            trial: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub methods: Vec<Method>,
    pub turbulence: TurbulenceSection,
    pub sensor: SensorSection,
    pub sweep: SweepSection,
    pub solver: SolverSection,
    pub deconv: DeconvSection,
    /// Directory that relative image paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            out: PathBuf::from("out"),
            methods: Method::ALL.to_vec(),
            turbulence: TurbulenceSection::default(),
            sensor: SensorSection::default(),
            sweep: SweepSection::default(),
            solver: SolverSection::default(),
            deconv: DeconvSection::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub ratio: Option<f64>,
    pub snr_db: Option<f64>,
    pub coupled_mask: bool,
    pub out: Option<PathBuf>,
}

fn config_err(msg: impl Into<String>) -> PipelineError {
    PipelineError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::MissingInput(format!("config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), PipelineError> {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(r) = o.ratio {
            self.sweep.ratio = r;
        }
        if let Some(s) = o.snr_db {
            self.sweep.snr_db = s;
        }
        if o.coupled_mask {
            self.sensor.coupled_mask = true;
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.methods.is_empty() {
            return Err(config_err("at least one method is required"));
        }
        let ratio_ok = |r: f64| r > 0.0 && r <= 1.0;
        if self.sweep.ratios.iter().any(|&r| !ratio_ok(r)) || !ratio_ok(self.sweep.ratio) {
            return Err(config_err("compression ratios must lie in (0, 1]"));
        }
        if self.sweep.trials == 0 {
            return Err(config_err("trials must be at least 1"));
        }
        if self.sweep.snr_levels.iter().chain([&self.sweep.snr_db]).any(|s| s.is_nan()) {
            return Err(config_err("SNR values must be numbers (inf allowed)"));
        }
        if self.turbulence.oversample < 2 {
            return Err(config_err("oversample must be at least 2 (lenslet blocks need >= 2x2 samples)"));
        }
        let n_screen = self.sensor.n_grid * self.turbulence.oversample;
        if !n_screen.is_power_of_two() {
            return Err(config_err(format!(
                "n_grid * oversample = {n_screen} must be a power of two"
            )));
        }
        if self.deconv.noise_std.iter().any(|&s| !(s >= 0.0)) {
            return Err(config_err("noise std values must be non-negative"));
        }
        if self.deconv.trial >= self.sweep.trials {
            return Err(config_err("deconv.trial must be below sweep.trials"));
        }
        self.turbulence_params(0).validate().map_err(|e| config_err(e.to_string()))?;
        self.solver_opts().validate().map_err(|e| config_err(e.to_string()))?;
        self.deconv_opts().validate().map_err(|e| config_err(e.to_string()))?;
        wfdcs_core::wavelet::Wavelet2D::new(self.sensor.n_grid, &self.wavelet_spec())
            .map_err(|e| config_err(e.to_string()))?;
        Ok(())
    }

    pub fn turbulence_params(&self, seed: u64) -> TurbulenceParams {
        TurbulenceParams {
            r0: self.turbulence.r0,
            outer_scale: self.turbulence.outer_scale,
            inner_scale: self.turbulence.inner_scale,
            screen_size: self.turbulence.screen_size,
            n: self.sensor.n_grid * self.turbulence.oversample,
            seed,
            subharmonics: self.turbulence.subharmonics,
        }
    }

    pub fn solver_opts(&self) -> SolverOpts {
        let s = &self.solver;
        SolverOpts {
            lambda: s.lambda,
            lambda_factor: s.lambda_factor,
            delta: s.delta,
            max_inner: s.max_inner,
            max_outer: s.max_outer,
            tol: s.tol,
            tol_constraint: s.tol_constraint,
            step: None,
            stencil: s.curl_stencil.into(),
        }
    }

    pub fn deconv_opts(&self) -> DeconvOpts {
        DeconvOpts {
            gamma: self.deconv.gamma,
            mu: None,
            inner_tv_iters: self.deconv.inner_tv_iters,
            outer_iters: self.deconv.outer_iters,
            tol: self.deconv.tol,
        }
    }

    pub fn wavelet_spec(&self) -> WaveletSpec {
        WaveletSpec::sym5(self.solver.wavelet_levels)
    }

    pub fn mask_mode(&self) -> MaskMode {
        if self.sensor.coupled_mask {
            MaskMode::Coupled
        } else {
            MaskMode::Independent
        }
    }

    pub fn has(&self, m: Method) -> bool {
        self.methods.contains(&m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(cfg.sensor.n_grid, 128);
        assert_eq!(cfg.methods, Method::ALL.to_vec());
        assert_eq!(cfg.sweep.snr_db, 40.0);
    }

    #[test]
    fn sections_parse() {
        let cfg = ExperimentConfig::from_toml(
            r#"
            seed = 9
            methods = ["CS", "DCS"]
            [sensor]
            n_grid = 32
            [sweep]
            ratios = [0.3, 0.8]
            trials = 2
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.methods, vec![Method::Ccs, Method::Dcs]);
        assert_eq!(cfg.sweep.ratios, vec![0.3, 0.8]);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for text in [
            "methods = []",
            "[sweep]\nratios = [0.0]",
            "[sweep]\ntrials = 0",
            "[sensor]\nn_grid = 48",
            "[solver]\ndelta = -1.0",
            "unknown_key = 3",
            "seed = \"x\"",
        ] {
            assert!(matches!(ExperimentConfig::from_toml(text), Err(PipelineError::Config(_))), "{text}");
        }
    }

    #[test]
    fn overrides_apply() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply(&Overrides {
            seed: Some(4),
            ratio: Some(0.3),
            snr_db: Some(20.0),
            coupled_mask: true,
            out: Some("elsewhere".into()),
        })
        .unwrap();
        assert_eq!((cfg.seed, cfg.sweep.ratio, cfg.sweep.snr_db), (4, 0.3, 20.0));
        assert_eq!(cfg.mask_mode(), MaskMode::Coupled);
        assert!(cfg.apply(&Overrides { ratio: Some(1.5), ..Default::default() }).is_err());
    }
}
