//! Second-order multistep sampler in data-prediction form.
//!
//! With `t = −ln σ` the probability-flow ODE `dz/dσ = (z − D(z, σ)) / σ`
//! has the exact one-step solution
//! `z(σ') = (σ'/σ) z(σ) + (1 − σ'/σ) D` whenever `D` is constant over the
//! step. The multistep scheme replaces `D` by a linear extrapolation of the
//! current and previous denoiser outputs,
//! `D̃ = (1 − γ) D_n + γ D_{n−1}` with `γ = −½ (t_{n+1} − t_n)/(t_n − t_{n−1})`,
//! so each step costs a single denoiser evaluation.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::conditioning::ConditionSet;
use crate::cube::{Cube, LatentCube};
use crate::error::{Error, Result};
use crate::rng::{standard_normal_field, Rng};
use crate::schedule::NoiseSchedule;

/// Predicts the clean latent from a noisy one at noise level `sigma`.
///
/// Implementations must return a cube of the input's shape and be
/// deterministic for fixed inputs.
pub trait Denoiser {
    fn denoise(&self, z: &LatentCube, conditions: &ConditionSet, sigma: f64) -> Result<LatentCube>;
}

impl<F> Denoiser for F
where
    F: Fn(&LatentCube, &ConditionSet, f64) -> Result<LatentCube>,
{
    fn denoise(&self, z: &LatentCube, conditions: &ConditionSet, sigma: f64) -> Result<LatentCube> {
        self(z, conditions, sigma)
    }
}

/// Exact posterior mean for `z0 ~ N(mu, diag(s2))` observed as `z0 + σ ε`:
/// `D(z, σ)_c = (s2_c z_c + σ² mu_c) / (s2_c + σ²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDenoiser {
    pub mu: Vec<f64>,
    pub s2: Vec<f64>,
}

impl GaussianDenoiser {
    pub fn new(mu: Vec<f64>, s2: Vec<f64>) -> Result<Self> {
        if mu.len() != s2.len() || mu.is_empty() {
            return Err(Error::shape(format!(
                "{} means vs {} variances",
                mu.len(),
                s2.len()
            )));
        }
        if mu.iter().any(|m| !m.is_finite()) || s2.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid(
                "Gaussian denoiser needs finite means and positive variances",
            ));
        }
        Ok(Self { mu, s2 })
    }

    /// Per-channel mean and variance of `cube` (variances floored at 1e-12).
    pub fn fit(cube: &LatentCube) -> Result<Self> {
        let n = cube.pixels() as f64;
        let mu = cube.channel_means();
        let s2 = cube
            .bands()
            .zip(&mu)
            .map(|(b, m)| (b.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).max(1e-12))
            .collect();
        Self::new(mu, s2)
    }

    /// Closed-form probability-flow solution from `(z_from, σ_from)` to `σ_to`:
    /// `mu + (z − mu) √((s2 + σ_to²)/(s2 + σ_from²))` per channel.
    pub fn flow(&self, z_from: &LatentCube, sigma_from: f64, sigma_to: f64) -> Result<LatentCube> {
        self.check_channels(z_from)?;
        let mut out = z_from.clone();
        let px = z_from.pixels();
        for (c, band) in out.data_mut().chunks_exact_mut(px).enumerate() {
            let (m, v) = (self.mu[c], self.s2[c]);
            let k = ((v + sigma_to * sigma_to) / (v + sigma_from * sigma_from)).sqrt();
            band.iter_mut().for_each(|z| *z = m + (*z - m) * k);
        }
        Ok(out)
    }

    fn check_channels(&self, z: &LatentCube) -> Result<()> {
        if z.channels() != self.mu.len() {
            return Err(Error::shape(format!(
                "denoiser has {} channels, latent has {}",
                self.mu.len(),
                z.channels()
            )));
        }
        Ok(())
    }
}

impl Denoiser for GaussianDenoiser {
    fn denoise(&self, z: &LatentCube, _: &ConditionSet, sigma: f64) -> Result<LatentCube> {
        self.check_channels(z)?;
        let s2n = sigma * sigma;
        let px = z.pixels();
        let mut out = z.clone();
        for (c, band) in out.data_mut().chunks_exact_mut(px).enumerate() {
            let (m, v) = (self.mu[c], self.s2[c]);
            let inv = 1.0 / (v + s2n);
            band.iter_mut().for_each(|x| *x = (v * *x + s2n * m) * inv);
        }
        Ok(out)
    }
}

/// Where a [`FieldGaussianDenoiser`] takes its per-pixel prior mean from.
#[derive(Debug, Clone, PartialEq)]
pub enum PriorMean {
    /// A fixed cube, e.g. an oracle target.
    Fixed(LatentCube),
    /// The upsampled LR latent of the condition set.
    Condition,
}

/// Gaussian posterior mean with a per-pixel prior mean and per-channel
/// prior variance.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGaussianDenoiser {
    pub mean: PriorMean,
    pub s2: Vec<f64>,
}

impl Denoiser for FieldGaussianDenoiser {
    fn denoise(&self, z: &LatentCube, conditions: &ConditionSet, sigma: f64) -> Result<LatentCube> {
        let mean = match &self.mean {
            PriorMean::Fixed(c) => c,
            PriorMean::Condition => &conditions.lr_latent,
        };
        z.require_same_shape(mean, "prior mean vs latent")?;
        if self.s2.len() != z.channels() {
            return Err(Error::shape(format!(
                "{} prior variances for {} channels",
                self.s2.len(),
                z.channels()
            )));
        }
        let s2n = sigma * sigma;
        let px = z.pixels();
        let mut out = z.clone();
        for (c, (band, mb)) in out
            .data_mut()
            .chunks_exact_mut(px)
            .zip(mean.data().chunks_exact(px))
            .enumerate()
        {
            let v = self.s2[c];
            let inv = 1.0 / (v + s2n);
            for (x, m) in band.iter_mut().zip(mb) {
                *x = (v * *x + s2n * m) * inv;
            }
        }
        Ok(out)
    }
}

/// Always predicts the same clean latent.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantDenoiser(pub LatentCube);

impl Denoiser for ConstantDenoiser {
    fn denoise(&self, z: &LatentCube, _: &ConditionSet, _: f64) -> Result<LatentCube> {
        z.require_same_shape(&self.0, "constant denoiser")?;
        Ok(self.0.clone())
    }
}

/// Always predicts zero.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ZeroDenoiser;

impl Denoiser for ZeroDenoiser {
    fn denoise(&self, z: &LatentCube, _: &ConditionSet, _: f64) -> Result<LatentCube> {
        Cube::zeros(z.height(), z.width(), z.channels())
    }
}

/// An affine network under EDM preconditioning:
///
/// `D(z, σ) = c_skip z + c_out (W · c_in z + U · cond + b)` per pixel, with
/// `c_skip = σd²/(σ² + σd²)`, `c_out = σ σd / √(σ² + σd²)`,
/// `c_in = 1/√(σ² + σd²)`. `cond` stacks the condition latent channels and
/// the mask.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDenoiser {
    pub sigma_data: f64,
    pub channels: usize,
    pub cond_channels: usize,
    /// `channels × channels`, row-major.
    pub weight: Vec<f64>,
    /// `channels × cond_channels`, row-major.
    pub cond_weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LinearHeader {
    format: String,
    channels: usize,
    cond_channels: usize,
    sigma_data: f64,
}

const LINEAR_FORMAT: &str = "gewdiff-linear-denoiser";

impl LinearDenoiser {
    pub fn validate(&self) -> Result<()> {
        let (k, m) = (self.channels, self.cond_channels);
        if self.weight.len() != k * k || self.cond_weight.len() != k * m || self.bias.len() != k {
            return Err(Error::shape("linear denoiser coefficient sizes"));
        }
        if !(self.sigma_data > 0.0) {
            return Err(Error::invalid("sigma_data must be positive"));
        }
        Ok(())
    }

    /// Coefficient file: one JSON header line
    /// (`format`, `channels`, `cond_channels`, `sigma_data`) followed by
    /// `W`, `U` and `b` as little-endian `f64`, row-major.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Header("missing header line".into()))?;
        let h: LinearHeader =
            serde_json::from_slice(&bytes[..nl]).map_err(|e| Error::Header(e.to_string()))?;
        if h.format != LINEAR_FORMAT {
            return Err(Error::Header(format!("unexpected format {:?}", h.format)));
        }
        let (k, m) = (h.channels, h.cond_channels);
        let expected = k * k + k * m + k;
        let payload = &bytes[nl + 1..];
        if payload.len() != expected * 8 {
            return Err(Error::PayloadLength {
                expected,
                found: payload.len() / 8,
            });
        }
        let vals: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if let Some(index) = vals.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "linear denoiser coefficients".into(),
                index,
            });
        }
        let d = Self {
            sigma_data: h.sigma_data,
            channels: k,
            cond_channels: m,
            weight: vals[..k * k].to_vec(),
            cond_weight: vals[k * k..k * k + k * m].to_vec(),
            bias: vals[k * k + k * m..].to_vec(),
        };
        d.validate()?;
        Ok(d)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let h = LinearHeader {
            format: LINEAR_FORMAT.into(),
            channels: self.channels,
            cond_channels: self.cond_channels,
            sigma_data: self.sigma_data,
        };
        let mut out = serde_json::to_vec(&h).expect("header serializes");
        out.push(b'\n');
        for v in self
            .weight
            .iter()
            .chain(&self.cond_weight)
            .chain(&self.bias)
        {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

impl Denoiser for LinearDenoiser {
    fn denoise(&self, z: &LatentCube, conditions: &ConditionSet, sigma: f64) -> Result<LatentCube> {
        let (k, m) = (self.channels, self.cond_channels);
        if z.channels() != k {
            return Err(Error::shape(format!(
                "linear denoiser has {k} channels, latent {}",
                z.channels()
            )));
        }
        let cond_lat = &conditions.lr_latent;
        if cond_lat.channels() + 1 != m && m != 0 {
            return Err(Error::shape(format!(
                "linear denoiser expects {m} condition channels, have {} latent + mask",
                cond_lat.channels()
            )));
        }
        if m != 0 && (cond_lat.height() != z.height() || cond_lat.width() != z.width()) {
            return Err(Error::shape("conditions and latent differ in size"));
        }
        let sd2 = self.sigma_data * self.sigma_data;
        let s2 = sigma * sigma;
        let c_skip = sd2 / (s2 + sd2);
        let c_out = sigma * self.sigma_data / (s2 + sd2).sqrt();
        let c_in = 1.0 / (s2 + sd2).sqrt();
        let px = z.pixels();
        let mut out = vec![0.0; z.len()];
        let mut zin = vec![0.0; k];
        let mut cond = vec![0.0; m];
        for p in 0..px {
            for (c, v) in zin.iter_mut().enumerate() {
                *v = z.data()[c * px + p] * c_in;
            }
            if m != 0 {
                for (c, v) in cond.iter_mut().enumerate().take(m - 1) {
                    *v = cond_lat.data()[c * px + p];
                }
                cond[m - 1] = conditions.mask.values[p];
            }
            for r in 0..k {
                let wrow = &self.weight[r * k..(r + 1) * k];
                let urow = &self.cond_weight[r * m..(r + 1) * m];
                let f = self.bias[r]
                    + wrow.iter().zip(&zin).map(|(a, b)| a * b).sum::<f64>()
                    + urow.iter().zip(&cond).map(|(a, b)| a * b).sum::<f64>();
                out[r * px + p] = c_skip * z.data()[r * px + p] + c_out * f;
            }
        }
        Cube::new(z.height(), z.width(), k, out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub schedule: NoiseSchedule,
    pub seed: u64,
    /// Return `D(z, σ_min)` instead of the raw terminal state.
    pub final_denoise: bool,
}

impl SamplerConfig {
    pub fn new(schedule: NoiseSchedule, seed: u64) -> Self {
        Self {
            schedule,
            seed,
            final_denoise: true,
        }
    }
}

/// `z_T = σ_max · ε`.
pub fn init_state(
    schedule: &NoiseSchedule,
    shape: (usize, usize, usize),
    rng: &mut Rng,
) -> Result<LatentCube> {
    let (h, w, c) = shape;
    let eps = standard_normal_field(rng, &[c, h, w]);
    let mut z = Cube::new(h, w, c, eps)?;
    let s = schedule.sigma_max();
    z.data_mut().iter_mut().for_each(|v| *v *= s);
    Ok(z)
}

/// Extrapolation weight `γ = −½ (t_next − t_n)/(t_n − t_prev)` with `t = −ln σ`.
pub fn multistep_gamma(sigma_prev: f64, sigma_n: f64, sigma_next: f64) -> f64 {
    let h = (sigma_n / sigma_next).ln();
    let h_prev = (sigma_prev / sigma_n).ln();
    -0.5 * h / h_prev
}

/// One update from `σ_n` to `σ_next`. Without history (`f_prev = None`) the
/// step is first order.
pub fn solver_step(
    z_n: &LatentCube,
    f_n: &LatentCube,
    f_prev: Option<&LatentCube>,
    sigma_n: f64,
    sigma_next: f64,
    sigma_prev: Option<f64>,
) -> Result<LatentCube> {
    if !(sigma_next > 0.0 && sigma_next < sigma_n && sigma_n.is_finite()) {
        return Err(Error::invalid(format!(
            "noise level must strictly decrease: {sigma_n} -> {sigma_next}"
        )));
    }
    z_n.require_same_shape(f_n, "state vs denoiser output")?;
    let gamma = match (f_prev, sigma_prev) {
        (Some(fp), Some(sp)) => {
            z_n.require_same_shape(fp, "state vs previous denoiser output")?;
            if !(sp > sigma_n) {
                return Err(Error::invalid(format!(
                    "previous noise level {sp} must exceed {sigma_n}"
                )));
            }
            multistep_gamma(sp, sigma_n, sigma_next)
        }
        (None, _) => 0.0,
        (Some(_), None) => {
            return Err(Error::invalid(
                "previous denoiser output given without its noise level",
            ))
        }
    };
    let ratio = sigma_next / sigma_n;
    let mut out = z_n.clone();
    match f_prev {
        Some(fp) if gamma != 0.0 => {
            for ((z, a), b) in out.data_mut().iter_mut().zip(f_n.data()).zip(fp.data()) {
                let f = (1.0 - gamma) * a + gamma * b;
                *z = ratio * *z + (1.0 - ratio) * f;
            }
        }
        _ => {
            for (z, a) in out.data_mut().iter_mut().zip(f_n.data()) {
                *z = ratio * *z + (1.0 - ratio) * a;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRun {
    /// State at `σ_min` after the last solver step.
    pub terminal: LatentCube,
    /// `D(terminal, σ_min)` when final denoising is on, else `terminal`.
    pub output: LatentCube,
    pub evaluations: usize,
}

fn checked_denoise(
    denoiser: &dyn Denoiser,
    z: &LatentCube,
    conditions: &ConditionSet,
    sigma: f64,
) -> Result<LatentCube> {
    let out = denoiser.denoise(z, conditions, sigma)?;
    if !out.same_shape(z) {
        return Err(Error::shape(format!(
            "denoiser returned {}x{}x{} for a {}x{}x{} input",
            out.height(),
            out.width(),
            out.channels(),
            z.height(),
            z.width(),
            z.channels()
        )));
    }
    out.check_finite("denoiser output")?;
    Ok(out)
}

/// Integrates from a given `z_T` along the schedule.
pub fn integrate(
    denoiser: &dyn Denoiser,
    conditions: &ConditionSet,
    schedule: &NoiseSchedule,
    z_t: LatentCube,
    final_denoise: bool,
) -> Result<SampleRun> {
    let sig = schedule.sigmas();
    let mut z = z_t;
    let mut prev: Option<LatentCube> = None;
    let mut evaluations = 0;
    for n in 0..sig.len() - 1 {
        let f_n = checked_denoise(denoiser, &z, conditions, sig[n])?;
        evaluations += 1;
        let sigma_prev = (n > 0).then(|| sig[n - 1]);
        z = solver_step(&z, &f_n, prev.as_ref(), sig[n], sig[n + 1], sigma_prev)?;
        z.check_finite("sampler state")?;
        prev = Some(f_n);
    }
    let output = if final_denoise {
        evaluations += 1;
        checked_denoise(denoiser, &z, conditions, schedule.sigma_min())?
    } else {
        z.clone()
    };
    Ok(SampleRun {
        terminal: z,
        output,
        evaluations,
    })
}

/// Draws `z_T` from the configured seed and integrates to `σ_min`.
pub fn sample_run(
    denoiser: &dyn Denoiser,
    conditions: &ConditionSet,
    config: &SamplerConfig,
    shape: (usize, usize, usize),
) -> Result<SampleRun> {
    let mut rng = Rng::new(config.seed);
    let z_t = init_state(&config.schedule, shape, &mut rng)?;
    integrate(
        denoiser,
        conditions,
        &config.schedule,
        z_t,
        config.final_denoise,
    )
}

pub fn sample(
    denoiser: &dyn Denoiser,
    conditions: &ConditionSet,
    config: &SamplerConfig,
    shape: (usize, usize, usize),
) -> Result<LatentCube> {
    Ok(sample_run(denoiser, conditions, config, shape)?.output)
}
