//! Continuous noise-level machinery: training-time σ draws, the `t = −ln σ`
//! reparameterization, the ρ-curved sampling grid and the edge-aware
//! forward perturbation.

use crate::cube::{Cube, LatentCube, Plane};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const DEFAULT_SIGMA_MAX: f64 = 80.0;
pub const DEFAULT_SIGMA_MIN: f64 = 0.02;
pub const DEFAULT_RHO: f64 = 0.7;
pub const DEFAULT_STEPS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainNoiseConfig {
    pub p_mean: f64,
    pub p_std: f64,
    /// Edge perturbation strength.
    pub eta: f64,
    pub sigma_data: f64,
}

impl Default for TrainNoiseConfig {
    fn default() -> Self {
        Self {
            p_mean: -1.2,
            p_std: 1.2,
            eta: 0.5,
            sigma_data: 0.5,
        }
    }
}

impl TrainNoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_std > 0.0 && self.p_mean.is_finite() && self.p_std.is_finite()) {
            return Err(Error::invalid(format!(
                "p_std must be positive, got {}",
                self.p_std
            )));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::invalid(format!(
                "eta must lie in [0, 1], got {}",
                self.eta
            )));
        }
        if !(self.sigma_data > 0.0 && self.sigma_data.is_finite()) {
            return Err(Error::invalid(format!(
                "sigma_data must be positive, got {}",
                self.sigma_data
            )));
        }
        Ok(())
    }
}

/// Log-normal noise level: `exp(p_mean + p_std · n)`, `n ~ N(0, 1)`.
pub fn sample_sigma(rng: &mut Rng, cfg: &TrainNoiseConfig) -> f64 {
    (cfg.p_mean + cfg.p_std * rng.standard_normal()).exp()
}

pub fn t_of_sigma(sigma: f64) -> Result<f64> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(-sigma.ln())
    } else {
        Err(Error::invalid(format!(
            "sigma must be positive and finite, got {sigma}"
        )))
    }
}

pub fn sigma_of_t(t: f64) -> f64 {
    (-t).exp()
}

/// A strictly decreasing grid of noise levels.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    sigmas: Vec<f64>,
    rho: f64,
}

impl NoiseSchedule {
    /// Wraps an arbitrary grid, e.g. one uniform in `t`. `rho` is reported
    /// as NaN for such grids.
    pub fn from_sigmas(sigmas: Vec<f64>) -> Result<Self> {
        Self::checked(sigmas, f64::NAN)
    }

    fn checked(sigmas: Vec<f64>, rho: f64) -> Result<Self> {
        if sigmas.len() < 2 {
            return Err(Error::invalid("a schedule needs at least two levels"));
        }
        if sigmas.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::invalid(
                "schedule levels must be positive and finite",
            ));
        }
        if let Some(i) = sigmas.windows(2).position(|w| w[1] >= w[0]) {
            return Err(Error::invalid(format!(
                "schedule is not strictly decreasing at step {i}: {} -> {}",
                sigmas[i],
                sigmas[i + 1]
            )));
        }
        Ok(Self { sigmas, rho })
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn len(&self) -> usize {
        self.sigmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigmas.is_empty()
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigmas[0]
    }

    pub fn sigma_min(&self) -> f64 {
        self.sigmas[self.sigmas.len() - 1]
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn ts(&self) -> Vec<f64> {
        self.sigmas.iter().map(|s| -s.ln()).collect()
    }
}

/// `σ_n = (σ_max^{1/ρ} + n/(N−1) · (σ_min^{1/ρ} − σ_max^{1/ρ}))^ρ`.
///
/// The endpoints are pinned to `sigma_max` and `sigma_min` exactly.
pub fn build_schedule(
    sigma_max: f64,
    sigma_min: f64,
    rho: f64,
    steps: usize,
) -> Result<NoiseSchedule> {
    if steps < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 steps, got {steps}"
        )));
    }
    if !(sigma_min > 0.0 && sigma_max > sigma_min && sigma_max.is_finite()) {
        return Err(Error::invalid(format!(
            "need sigma_max > sigma_min > 0, got {sigma_max} and {sigma_min}"
        )));
    }
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::invalid(format!("rho must be positive, got {rho}")));
    }
    let inv = 1.0 / rho;
    let hi = sigma_max.powf(inv);
    let lo = sigma_min.powf(inv);
    let last = (steps - 1) as f64;
    let mut sigmas: Vec<f64> = (0..steps)
        .map(|n| (hi + n as f64 / last * (lo - hi)).powf(rho))
        .collect();
    sigmas[0] = sigma_max;
    sigmas[steps - 1] = sigma_min;
    NoiseSchedule::checked(sigmas, rho)
}

/// A binary per-pixel edge indicator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<u8>,
}

impl EdgeMap {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            values: vec![0; height * width],
        }
    }

    pub fn new(height: usize, width: usize, values: Vec<u8>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::PayloadLength {
                expected: height * width,
                found: values.len(),
            });
        }
        if values.iter().any(|&v| v > 1) {
            return Err(Error::invalid("edge map values must be 0 or 1"));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }

    pub fn labels(&self) -> Vec<u32> {
        self.values.iter().map(|&v| v as u32).collect()
    }
}

/// The factor applied to the noise of a pixel: `1 − E · (1 − σ_norm²) · η`
/// with `σ_norm = clamp(σ_t / σ_max, 0, 1)`.
pub fn noise_multiplier(on_edge: bool, sigma_t: f64, sigma_max: f64, eta: f64) -> f64 {
    if !on_edge {
        return 1.0;
    }
    let norm = (sigma_t / sigma_max).clamp(0.0, 1.0);
    1.0 - (1.0 - norm * norm) * eta
}

/// Forward diffusion with reduced noise on edge pixels. The edge map is
/// broadcast over channels; fresh noise is drawn on every call.
pub fn edge_aware_perturb(
    z0: &LatentCube,
    sigma_t: f64,
    edge: &EdgeMap,
    cfg: &TrainNoiseConfig,
    sigma_max: f64,
    rng: &mut Rng,
) -> Result<LatentCube> {
    if edge.height != z0.height() || edge.width != z0.width() {
        return Err(Error::shape(format!(
            "edge map is {}x{}, latent is {}x{}",
            edge.height,
            edge.width,
            z0.height(),
            z0.width()
        )));
    }
    if !(sigma_t > 0.0 && sigma_t.is_finite()) {
        return Err(Error::invalid(format!(
            "sigma_t must be positive, got {sigma_t}"
        )));
    }
    if !(sigma_max > 0.0) {
        return Err(Error::invalid("sigma_max must be positive"));
    }
    let on = noise_multiplier(true, sigma_t, sigma_max, cfg.eta);
    let scale: Vec<f64> = edge
        .values
        .iter()
        .map(|&e| sigma_t * if e == 1 { on } else { 1.0 })
        .collect();
    let px = z0.pixels();
    let mut out = z0.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        *v += scale[i % px] * rng.standard_normal();
    }
    Ok(out)
}

pub const DEFAULT_EDGE_PERCENTILE: f64 = 90.0;
pub const DEFAULT_EDGE_DILATE: usize = 1;

/// Sobel gradient magnitude of the channel-mean image (replicated border).
pub fn sobel_magnitude(image: &Plane) -> Plane {
    let (h, w) = (image.height, image.width);
    let at = |y: isize, x: isize| -> f64 {
        let yy = y.clamp(0, h as isize - 1) as usize;
        let xx = x.clamp(0, w as isize - 1) as usize;
        image.get(yy, xx)
    };
    let mut values = Vec::with_capacity(h * w);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y, x - 1) + at(y + 1, x - 1));
            let gy = (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y - 1, x) + at(y - 1, x + 1));
            values.push(gx.hypot(gy));
        }
    }
    Plane {
        height: h,
        width: w,
        values,
    }
}

/// Linear-interpolation percentile (the numpy default) of unsorted values.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let pos = q / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// Binary edges: Sobel magnitude on the channel mean, thresholded at the
/// given percentile (ties count as edges, zero magnitude never does), then
/// dilated by a `(2·dilate + 1)²` square.
pub fn extract_edges(cube: &Cube, percentile_q: f64, dilate: usize) -> Result<EdgeMap> {
    let (h, w) = (cube.height(), cube.width());
    if h < 3 || w < 3 {
        return Err(Error::invalid(format!(
            "edge extraction needs at least 3x3, got {h}x{w}"
        )));
    }
    if !(0.0..=100.0).contains(&percentile_q) {
        return Err(Error::invalid(format!(
            "percentile must lie in [0, 100], got {percentile_q}"
        )));
    }
    let mag = sobel_magnitude(&cube.channel_mean_image());
    let thr = percentile(&mag.values, percentile_q);
    let raw: Vec<bool> = mag.values.iter().map(|&m| m > 0.0 && m >= thr).collect();
    let r = dilate as isize;
    let mut values = vec![0u8; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let hit = (-r..=r).any(|dy| {
                (-r..=r).any(|dx| {
                    let (yy, xx) = (y + dy, x + dx);
                    yy >= 0
                        && xx >= 0
                        && yy < h as isize
                        && xx < w as isize
                        && raw[yy as usize * w + xx as usize]
                })
            });
            values[y as usize * w + x as usize] = hit as u8;
        }
    }
    EdgeMap::new(h, w, values)
}
