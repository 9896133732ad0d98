//! Closed-form core of a wavelet-latent diffusion pipeline for hyperspectral
//! super-resolution.
//!
//! * [`wavelet`] and [`pca`]: the regression-wavelet + PCA latent codec.
//! * [`schedule`]: noise-level sampling, the ρ-curved σ grid and the
//!   edge-aware forward perturbation.
//! * [`conditioning`]: NDVI mask, fallback segmentation, latent upsampling.
//! * [`sampler`]: the second-order multistep sampler over a pluggable
//!   [`Denoiser`], with analytic toy denoisers.
//! * [`losses`] and [`metrics`]: training objective and evaluation suite.
//! * [`pipeline`]: end-to-end orchestration used by the CLI.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod codec;
pub mod conditioning;
pub mod container;
pub mod cube;
pub mod error;
pub mod linalg;
pub mod losses;
pub mod metrics;
pub mod pca;
pub mod pipeline;
pub mod raster;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod synthetic;
pub mod wavelet;

pub use codec::LatentCodec;
pub use conditioning::{ConditionSet, MaskMap};
pub use cube::{Cube, HsiCube, LatentCube, Plane, SegmentationMap};
pub use error::{Error, ErrorKind, Result};
pub use metrics::MetricReport;
pub use pca::PcaModel;
pub use pipeline::{DenoiserSpec, PipelineConfig};
pub use rng::Rng;
pub use sampler::{Denoiser, GaussianDenoiser, SamplerConfig};
pub use schedule::{EdgeMap, NoiseSchedule, TrainNoiseConfig};
pub use wavelet::{RwaEncoding, RwaModel, WaveletLevel};
