//! End-to-end orchestration: codec roundtrips, parameter sweeps, super-
//! resolution and schedule reports.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;

use crate::codec::{LatentCodec, DEFAULT_PCA_K, DEFAULT_RWA_LEVELS};
use crate::conditioning::{
    build_conditions, ConditionOptions, ConditionSet, DEFAULT_NIR_BAND, DEFAULT_RED_BAND,
    DEFAULT_SR_FACTOR,
};
use crate::cube::{HsiCube, LatentCube, SegmentationMap};
use crate::error::{Error, Result};
use crate::metrics::{self, MetricOptions, MetricReport};
use crate::pca::{self, PcaModel};
use crate::sampler::{
    self, Denoiser, GaussianDenoiser, LinearDenoiser, SamplerConfig, ZeroDenoiser,
};
use crate::schedule::{
    self, build_schedule, NoiseSchedule, TrainNoiseConfig, DEFAULT_EDGE_DILATE,
    DEFAULT_EDGE_PERCENTILE, DEFAULT_RHO, DEFAULT_SIGMA_MAX, DEFAULT_SIGMA_MIN, DEFAULT_STEPS,
};
use crate::wavelet;

/// Which denoiser the sampler drives.
#[derive(Debug, Clone, PartialEq)]
pub enum DenoiserSpec {
    /// Per-channel Gaussian prior fitted to the (upsampled) LR latent.
    Gaussian,
    Zero,
    /// Affine denoiser loaded from a coefficient file.
    LinearFile(PathBuf),
}

impl FromStr for DenoiserSpec {
    type Err = Error;

    /// Accepts `gaussian`, `zero` and `linear-file:<path>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Self::Gaussian),
            "zero" => Ok(Self::Zero),
            _ => match s.strip_prefix("linear-file:") {
                Some(p) if !p.is_empty() => Ok(Self::LinearFile(p.into())),
                _ => Err(Error::invalid(format!(
                    "unknown denoiser {s:?} (expected gaussian, zero or linear-file:<path>)"
                ))),
            },
        }
    }
}

impl DenoiserSpec {
    pub fn build(&self, conditions: &ConditionSet) -> Result<Box<dyn Denoiser>> {
        Ok(match self {
            Self::Gaussian => Box::new(GaussianDenoiser::fit(&conditions.lr_latent)?),
            Self::Zero => Box::new(ZeroDenoiser),
            Self::LinearFile(p) => Box::new(LinearDenoiser::load(p)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub rwa_levels: usize,
    pub pca_k: usize,
    pub sr_factor: usize,
    pub sigma_max: f64,
    pub sigma_min: f64,
    pub rho: f64,
    pub steps: usize,
    pub eta: f64,
    pub red_band: usize,
    pub nir_band: usize,
    pub edge_percentile: f64,
    pub edge_dilate: usize,
    pub segment_grid: usize,
    pub seed: u64,
    pub denoiser: DenoiserSpec,
    /// Keep RWA residuals in roundtrip evaluation (lossless wavelet stage).
    pub keep_residuals: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            rwa_levels: DEFAULT_RWA_LEVELS,
            pca_k: DEFAULT_PCA_K,
            sr_factor: DEFAULT_SR_FACTOR,
            sigma_max: DEFAULT_SIGMA_MAX,
            sigma_min: DEFAULT_SIGMA_MIN,
            rho: DEFAULT_RHO,
            steps: DEFAULT_STEPS,
            eta: 0.5,
            red_band: DEFAULT_RED_BAND,
            nir_band: DEFAULT_NIR_BAND,
            edge_percentile: DEFAULT_EDGE_PERCENTILE,
            edge_dilate: DEFAULT_EDGE_DILATE,
            segment_grid: 1,
            seed: 0,
            denoiser: DenoiserSpec::Gaussian,
            keep_residuals: true,
        }
    }
}

/// Every key is optional; unknown keys are rejected.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    rwa_levels: Option<usize>,
    pca_k: Option<usize>,
    sr_factor: Option<usize>,
    sigma_max: Option<f64>,
    sigma_min: Option<f64>,
    rho: Option<f64>,
    steps: Option<usize>,
    eta: Option<f64>,
    red_band: Option<usize>,
    nir_band: Option<usize>,
    edge_percentile: Option<f64>,
    edge_dilate: Option<usize>,
    segment_grid: Option<usize>,
    seed: Option<u64>,
    denoiser: Option<String>,
    keep_residuals: Option<bool>,
}

impl PipelineConfig {
    /// Parses `key = value` lines on top of the defaults.
    pub fn from_toml(text: &str) -> Result<Self> {
        let f: ConfigFile =
            toml::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))?;
        let d = Self::default();
        let cfg = Self {
            rwa_levels: f.rwa_levels.unwrap_or(d.rwa_levels),
            pca_k: f.pca_k.unwrap_or(d.pca_k),
            sr_factor: f.sr_factor.unwrap_or(d.sr_factor),
            sigma_max: f.sigma_max.unwrap_or(d.sigma_max),
            sigma_min: f.sigma_min.unwrap_or(d.sigma_min),
            rho: f.rho.unwrap_or(d.rho),
            steps: f.steps.unwrap_or(d.steps),
            eta: f.eta.unwrap_or(d.eta),
            red_band: f.red_band.unwrap_or(d.red_band),
            nir_band: f.nir_band.unwrap_or(d.nir_band),
            edge_percentile: f.edge_percentile.unwrap_or(d.edge_percentile),
            edge_dilate: f.edge_dilate.unwrap_or(d.edge_dilate),
            segment_grid: f.segment_grid.unwrap_or(d.segment_grid),
            seed: f.seed.unwrap_or(d.seed),
            denoiser: match f.denoiser {
                Some(s) => s.parse()?,
                None => d.denoiser,
            },
            keep_residuals: f.keep_residuals.unwrap_or(d.keep_residuals),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.pca_k == 0 {
            return Err(Error::invalid("pca_k must be positive"));
        }
        if self.sr_factor == 0 {
            return Err(Error::invalid("sr_factor must be positive"));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::invalid(format!(
                "eta must lie in [0, 1], got {}",
                self.eta
            )));
        }
        if !(0.0..=100.0).contains(&self.edge_percentile) {
            return Err(Error::invalid("edge_percentile must lie in [0, 100]"));
        }
        if self.segment_grid == 0 {
            return Err(Error::invalid("segment_grid must be positive"));
        }
        self.schedule().map(|_| ())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        build_schedule(self.sigma_max, self.sigma_min, self.rho, self.steps)
    }

    pub fn condition_options(&self) -> ConditionOptions {
        ConditionOptions {
            factor: self.sr_factor,
            red_band: self.red_band,
            nir_band: self.nir_band,
            edge_percentile: self.edge_percentile,
            edge_dilate: self.edge_dilate,
            segment_grid: self.segment_grid,
        }
    }

    pub fn metric_options(&self) -> MetricOptions {
        MetricOptions {
            data_range: 1.0,
            scale_ratio: self.sr_factor as f64,
        }
    }

    pub fn sampler_config(&self) -> Result<SamplerConfig> {
        Ok(SamplerConfig::new(self.schedule()?, self.seed))
    }
}

fn truncate(model: &PcaModel, k: usize) -> PcaModel {
    PcaModel {
        mean: model.mean.clone(),
        loadings: model.loadings.rows(0, k).into_owned(),
        eigenvalues: model.eigenvalues[..k].to_vec(),
    }
}

/// Encodes with RWA(`levels`) + PCA(`k`) and decodes straight back.
/// `levels = 0` skips the wavelet stage.
pub fn roundtrip(cube: &HsiCube, levels: usize, k: usize, keep_residuals: bool) -> Result<HsiCube> {
    Ok(roundtrips(cube, levels, &[k], keep_residuals)?.remove(0))
}

fn roundtrips(
    cube: &HsiCube,
    levels: usize,
    ks: &[usize],
    keep_residuals: bool,
) -> Result<Vec<HsiCube>> {
    let k_max = ks
        .iter()
        .copied()
        .max()
        .ok_or_else(|| Error::invalid("no PCA sizes given"))?;
    let enc = if levels == 0 {
        None
    } else {
        Some(wavelet::rwa_encode(cube, levels, keep_residuals)?)
    };
    let top = enc.as_ref().map_or(cube, |e| &e.approx_top);
    let full = pca::pca_fit(top, k_max)?;
    ks.iter()
        .map(|&k| {
            let model = truncate(&full, k);
            let approx = pca::pca_inverse(&pca::pca_project(top, &model)?, &model)?;
            match &enc {
                None => Ok(approx),
                Some(e) => wavelet::rwa_reconstruct(&approx, &e.model, e.residuals.as_deref()),
            }
        })
        .collect()
}

pub fn run_encode_decode_eval(hr: &HsiCube, config: &PipelineConfig) -> Result<MetricReport> {
    config.validate()?;
    let back = roundtrip(hr, config.rwa_levels, config.pca_k, config.keep_residuals)?;
    back.check_finite("decoded cube")?;
    metrics::report(&back, hr, &config.metric_options())
}

pub const SWEEP_LEVELS: [usize; 5] = [0, 1, 2, 3, 4];
pub const SWEEP_KS: [usize; 5] = [20, 10, 6, 4, 3];

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub rwa_levels: usize,
    /// Channels left after the wavelet stage.
    pub rwa_bands: usize,
    pub pca_k: usize,
    pub report: MetricReport,
}

/// Roundtrip metrics over a `levels × ks` grid; rows are ordered by level,
/// then by `ks` as given. Grid points needing more components than there
/// are channels are skipped.
pub fn sweep(
    hr: &HsiCube,
    levels: &[usize],
    ks: &[usize],
    config: &PipelineConfig,
) -> Result<Vec<SweepRow>> {
    let opts = config.metric_options();
    let mut rows = Vec::new();
    for &j in levels {
        let mut bands = hr.channels();
        for _ in 0..j {
            bands = bands.div_ceil(2);
        }
        let usable: Vec<usize> = ks
            .iter()
            .copied()
            .filter(|&k| k >= 1 && k <= bands)
            .collect();
        if usable.is_empty() {
            continue;
        }
        for (k, back) in usable
            .iter()
            .zip(roundtrips(hr, j, &usable, config.keep_residuals)?)
        {
            back.check_finite("decoded cube")?;
            rows.push(SweepRow {
                rwa_levels: j,
                rwa_bands: bands,
                pca_k: *k,
                report: metrics::report(&back, hr, &opts)?,
            });
        }
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = format!("rwa_levels,rwa_bands,pca_k,{}\n", metrics::CSV_HEADER);
    for r in rows {
        writeln!(
            s,
            "{},{},{},{}",
            r.rwa_levels,
            r.rwa_bands,
            r.pca_k,
            r.report.csv_row()
        )
        .unwrap();
    }
    s
}

#[derive(Debug, Clone)]
pub struct SrOutput {
    pub hr: HsiCube,
    pub latent: LatentCube,
    pub conditions: ConditionSet,
    pub codec: LatentCodec,
}

/// Fits the codec on the LR cube, builds conditions at target size, samples
/// an HR latent and decodes it through the LR-fitted models.
pub fn run_super_resolution(
    lr: &HsiCube,
    segs: Option<&SegmentationMap>,
    config: &PipelineConfig,
    denoiser: Option<&dyn Denoiser>,
) -> Result<SrOutput> {
    config.validate()?;
    lr.check_finite("LR input")?;
    let (_, codec) = LatentCodec::fit(lr, config.rwa_levels, config.pca_k)?;
    let conditions = build_conditions(lr, segs, &codec, &config.condition_options())?;
    let built;
    let denoiser = match denoiser {
        Some(d) => d,
        None => {
            built = config.denoiser.build(&conditions)?;
            built.as_ref()
        }
    };
    let shape = (
        conditions.height(),
        conditions.width(),
        codec.latent_channels(),
    );
    let latent = sampler::sample(denoiser, &conditions, &config.sampler_config()?, shape)?;
    let hr = codec.reconstruct(&latent)?;
    hr.check_finite("super-resolved cube")?;
    Ok(SrOutput {
        hr,
        latent,
        conditions,
        codec,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleRow {
    pub n: usize,
    pub sigma: f64,
    pub t: f64,
    /// `t_{n+1} − t_n`; absent on the last row.
    pub dt: Option<f64>,
    /// Extrapolation weight of the step leaving `σ_n`; absent on the first
    /// step (no history) and the last row (no step).
    pub gamma: Option<f64>,
}

pub fn schedule_rows(schedule: &NoiseSchedule) -> Vec<ScheduleRow> {
    let s = schedule.sigmas();
    let ts = schedule.ts();
    let last = s.len() - 1;
    (0..s.len())
        .map(|n| ScheduleRow {
            n,
            sigma: s[n],
            t: ts[n],
            dt: (n < last).then(|| ts[n + 1] - ts[n]),
            gamma: (n > 0 && n < last).then(|| sampler::multistep_gamma(s[n - 1], s[n], s[n + 1])),
        })
        .collect()
}

pub fn run_schedule_report(config: &PipelineConfig) -> Result<String> {
    let rows = schedule_rows(&config.schedule()?);
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut s = String::from("n,sigma,t,dt,gamma\n");
    for r in rows {
        writeln!(
            s,
            "{},{},{},{},{}",
            r.n,
            r.sigma,
            r.t,
            opt(r.dt),
            opt(r.gamma)
        )
        .unwrap();
    }
    Ok(s)
}

/// Edge-aware forward perturbation of `z0` at `sigma`, with edges taken from
/// `z0` itself.
pub fn perturb_for_training(
    z0: &LatentCube,
    config: &PipelineConfig,
    sigma: f64,
) -> Result<LatentCube> {
    let edges = schedule::extract_edges(z0, config.edge_percentile, config.edge_dilate)?;
    let noise = TrainNoiseConfig {
        eta: config.eta,
        ..Default::default()
    };
    let mut rng = crate::rng::Rng::new(config.seed);
    schedule::edge_aware_perturb(z0, sigma, &edges, &noise, config.sigma_max, &mut rng)
}
