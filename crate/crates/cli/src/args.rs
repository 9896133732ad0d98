use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "gewdiff",
    version,
    about = "Hyperspectral wavelet-latent diffusion toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Pipeline parameters. Each flag overrides the config file, which in turn
/// overrides the built-in default shown in brackets.
#[derive(Debug, Clone, Default, Args)]
pub struct Params {
    /// Config file of `key = value` lines.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// RWA levels J [1].
    #[arg(long)]
    pub rwa_levels: Option<usize>,
    /// Retained PCA components [20].
    #[arg(long)]
    pub pca_k: Option<usize>,
    /// Spatial super-resolution factor [4].
    #[arg(long)]
    pub factor: Option<usize>,
    /// Largest noise level [80].
    #[arg(long)]
    pub sigma_max: Option<f64>,
    /// Smallest noise level [0.02].
    #[arg(long)]
    pub sigma_min: Option<f64>,
    /// Schedule curvature [0.7].
    #[arg(long)]
    pub rho: Option<f64>,
    /// Number of noise levels N [50].
    #[arg(long)]
    pub steps: Option<usize>,
    /// Edge noise attenuation strength [0.5].
    #[arg(long)]
    pub eta: Option<f64>,
    /// Red band index for NDVI [37].
    #[arg(long)]
    pub red_band: Option<usize>,
    /// Near-infrared band index for NDVI [68].
    #[arg(long)]
    pub nir_band: Option<usize>,
    /// Edge threshold percentile of the Sobel magnitude [90].
    #[arg(long)]
    pub edge_percentile: Option<f64>,
    /// Edge dilation radius in pixels [1].
    #[arg(long)]
    pub edge_dilate: Option<usize>,
    /// Cell size of the fallback NDVI segmentation [1].
    #[arg(long)]
    pub segment_grid: Option<usize>,
    /// Random seed [0].
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DenoiserKind {
    Gaussian,
    Zero,
    LinearFile,
}

#[derive(Debug, Clone, Args)]
pub struct DenoiserArgs {
    /// Denoiser driving the sampler [gaussian].
    #[arg(long, value_enum)]
    pub denoiser: Option<DenoiserKind>,
    /// Coefficient file for `--denoiser linear-file`.
    #[arg(long, value_name = "FILE")]
    pub denoiser_file: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded synthetic scene (and optionally its LR version).
    GenSynthetic {
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 242)]
        bands: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        segments: usize,
        #[arg(long, default_value_t = 1e-3)]
        noise_std: f64,
        #[arg(long)]
        out: PathBuf,
        /// Segmentation map of the scene.
        #[arg(long)]
        segments_out: Option<PathBuf>,
        /// Block-mean downsampled copy.
        #[arg(long)]
        lr_out: Option<PathBuf>,
        /// Downsampling factor for `--lr-out`.
        #[arg(long, default_value_t = 4)]
        lr_factor: usize,
    },
    /// RWA + PCA encode; writes the codec container with the latent.
    Encode {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        params: Params,
    },
    /// Inverse PCA + inverse RWA (zeroed residuals) from a codec container.
    Decode {
        #[arg(long)]
        input: PathBuf,
        /// Decode this latent raster instead of the stored one.
        #[arg(long)]
        latent: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Wavelet stage alone.
    RwaEncode {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 1)]
        levels: usize,
        /// Keep detail residuals for exact reconstruction.
        #[arg(long)]
        lossless: bool,
        #[arg(long)]
        out: PathBuf,
    },
    RwaDecode {
        #[arg(long)]
        input: PathBuf,
        /// Ignore stored residuals.
        #[arg(long)]
        zero_residuals: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode, decode and report metrics against the input.
    RoundtripEval {
        #[arg(long)]
        input: PathBuf,
        /// Decode with predicted details only.
        #[arg(long)]
        zero_residuals: bool,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        params: Params,
    },
    /// Roundtrip metrics over a grid of RWA levels and PCA sizes.
    Sweep {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        levels: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "20,10,6,4,3")]
        ks: Vec<usize>,
        #[arg(long)]
        zero_residuals: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        params: Params,
    },
    /// Building-attention mask from NDVI and a segmentation.
    Mask {
        #[arg(long)]
        input: PathBuf,
        /// Segmentation at input or target size; NDVI-derived when absent.
        #[arg(long)]
        segments: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        params: Params,
    },
    /// Binary edge map of a cube.
    Edge {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 90.0)]
        percentile: f64,
        #[arg(long, default_value_t = 1)]
        dilate: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Noise grid as CSV: n, sigma, t, dt, gamma.
    Schedule {
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        params: Params,
    },
    /// Fit the codec on an LR cube and write the condition set to a directory.
    Conditions {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        segments: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        params: Params,
    },
    /// Sample a latent from a condition directory; writes a codec container.
    Sample {
        #[arg(long)]
        conditions: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        denoiser: DenoiserArgs,
        #[command(flatten)]
        params: Params,
    },
    /// Full super-resolution: conditions, sampling, decoding.
    Sr {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        segments: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the sampled latent as a codec container.
        #[arg(long)]
        latent_out: Option<PathBuf>,
        #[command(flatten)]
        denoiser: DenoiserArgs,
        #[command(flatten)]
        params: Params,
    },
    /// Full-reference metrics as CSV.
    Metrics {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        data_range: f64,
        /// Resolution ratio used by ERGAS.
        #[arg(long, default_value_t = 4.0)]
        scale_ratio: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Loss breakdown as CSV.
    Loss {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        sigma: f64,
        /// Pixel, perceptual and gradient weights.
        #[arg(long, value_delimiter = ',', default_value = "0.8,0.1,0.1")]
        weights: Vec<f64>,
        #[arg(long, default_value_t = 0.5)]
        sigma_data: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}
