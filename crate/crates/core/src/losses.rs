//! Training objective, evaluated (no gradients).
//!
//! `total = λ(σ) · (λ1 · pixel + λ2 · perceptual + λ3 · gradient)` with the
//! EDM weighting `λ(σ) = (σ² + σ_d²) / (σ σ_d)²`. All norms are
//! per-element means.

use crate::cube::Cube;
use crate::error::{Error, Result};
use crate::metrics;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub pixel: f64,
    pub perceptual: f64,
    pub gradient: f64,
    pub sigma_data: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            pixel: 0.8,
            perceptual: 0.1,
            gradient: 0.1,
            sigma_data: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.pixel, self.perceptual, self.gradient]
            .iter()
            .all(|w| w.is_finite() && *w >= 0.0);
        if !ok {
            return Err(Error::invalid("loss weights must be non-negative"));
        }
        if !(self.sigma_data > 0.0) {
            return Err(Error::invalid("sigma_data must be positive"));
        }
        Ok(())
    }
}

/// Maps a latent to a feature vector of fixed length for a fixed shape.
pub trait FeatureExtractor {
    fn features(&self, x: &Cube) -> Result<Vec<f64>>;
}

/// Concatenation of the input and its successive 2×2 average pools
/// (odd trailing rows/columns dropped), `scales` levels in total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoolPyramid {
    pub scales: usize,
}

impl Default for PoolPyramid {
    fn default() -> Self {
        Self { scales: 3 }
    }
}

impl FeatureExtractor for PoolPyramid {
    fn features(&self, x: &Cube) -> Result<Vec<f64>> {
        let mut out = x.data().to_vec();
        let (mut h, mut w) = (x.height(), x.width());
        let mut level: Vec<Vec<f64>> = x.bands().map(|b| b.to_vec()).collect();
        for _ in 1..self.scales {
            let (nh, nw) = (h / 2, w / 2);
            if nh == 0 || nw == 0 {
                break;
            }
            level = level
                .iter()
                .map(|b| {
                    let mut p = Vec::with_capacity(nh * nw);
                    for y in 0..nh {
                        for xx in 0..nw {
                            let s = b[2 * y * w + 2 * xx]
                                + b[2 * y * w + 2 * xx + 1]
                                + b[(2 * y + 1) * w + 2 * xx]
                                + b[(2 * y + 1) * w + 2 * xx + 1];
                            p.push(0.25 * s);
                        }
                    }
                    p
                })
                .collect();
            h = nh;
            w = nw;
            for b in &level {
                out.extend_from_slice(b);
            }
        }
        Ok(out)
    }
}

fn check(pred: &Cube, target: &Cube) -> Result<()> {
    pred.require_same_shape(target, "prediction vs target")
}

pub fn mse(pred: &Cube, target: &Cube) -> Result<f64> {
    check(pred, target)?;
    Ok(pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / pred.len() as f64)
}

/// `(MSE + mean spectral angle in radians) / 2`.
pub fn pixel_loss(pred: &Cube, target: &Cube) -> Result<f64> {
    let m = mse(pred, target)?;
    let sam = metrics::mean_spectral_angle(pred, target)?;
    Ok((m + sam) / 2.0)
}

/// Mean squared difference of extracted features.
pub fn perceptual_loss(
    pred: &Cube,
    target: &Cube,
    extractor: &dyn FeatureExtractor,
) -> Result<f64> {
    check(pred, target)?;
    let fp = extractor.features(pred)?;
    let ft = extractor.features(target)?;
    if fp.len() != ft.len() || fp.is_empty() {
        return Err(Error::shape(format!(
            "extractor produced {} and {} features",
            fp.len(),
            ft.len()
        )));
    }
    Ok(fp
        .iter()
        .zip(&ft)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / fp.len() as f64)
}

/// `½ (mean |∂x p − ∂x t| + mean |∂y p − ∂y t|)` with forward differences
/// over the valid positions of every channel.
pub fn gradient_loss(pred: &Cube, target: &Cube) -> Result<f64> {
    check(pred, target)?;
    let (h, w) = (pred.height(), pred.width());
    if h < 2 || w < 2 {
        return Err(Error::invalid(format!(
            "gradient loss needs at least 2x2, got {h}x{w}"
        )));
    }
    let (mut gx, mut gy) = (0.0, 0.0);
    for (p, t) in pred.bands().zip(target.bands()) {
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if x + 1 < w {
                    gx += ((p[i + 1] - p[i]) - (t[i + 1] - t[i])).abs();
                }
                if y + 1 < h {
                    gy += ((p[i + w] - p[i]) - (t[i + w] - t[i])).abs();
                }
            }
        }
    }
    let c = pred.channels() as f64;
    let nx = c * (h * (w - 1)) as f64;
    let ny = c * ((h - 1) * w) as f64;
    Ok(0.5 * (gx / nx + gy / ny))
}

/// `λ(σ) = (σ² + σ_d²) / (σ σ_d)²`.
pub fn edm_weight(sigma: f64, sigma_data: f64) -> Result<f64> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    Ok((sigma * sigma + sigma_data * sigma_data) / (sigma * sigma_data).powi(2))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub pixel: f64,
    pub perceptual: f64,
    pub gradient: f64,
    pub lambda: f64,
    pub total: f64,
}

pub const LOSS_CSV_HEADER: &str = "pixel,perceptual,gradient,lambda,total";

impl LossBreakdown {
    pub fn to_csv(&self) -> String {
        format!(
            "{LOSS_CSV_HEADER}\n{},{},{},{},{}\n",
            self.pixel, self.perceptual, self.gradient, self.lambda, self.total
        )
    }
}

/// Combines component losses with the σ-dependent weighting.
pub fn combine(
    pixel: f64,
    perceptual: f64,
    gradient: f64,
    weights: &LossWeights,
    sigma_t: f64,
) -> Result<LossBreakdown> {
    weights.validate()?;
    let lambda = edm_weight(sigma_t, weights.sigma_data)?;
    Ok(LossBreakdown {
        pixel,
        perceptual,
        gradient,
        lambda,
        total: lambda
            * (weights.pixel * pixel
                + weights.perceptual * perceptual
                + weights.gradient * gradient),
    })
}

pub fn total_loss(
    pred: &Cube,
    target: &Cube,
    extractor: &dyn FeatureExtractor,
    weights: &LossWeights,
    sigma_t: f64,
) -> Result<LossBreakdown> {
    let px = pixel_loss(pred, target)?;
    let pe = perceptual_loss(pred, target, extractor)?;
    let gr = gradient_loss(pred, target)?;
    combine(px, pe, gr, weights, sigma_t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random(seed: u64, h: usize, w: usize, c: usize) -> Cube {
        let mut rng = Rng::new(seed);
        Cube::from_fn(h, w, c, |_, _, _| rng.uniform_range(-1.0, 1.0)).unwrap()
    }

    #[test]
    fn zero_at_equality() {
        let t = random(1, 6, 6, 3);
        assert_eq!(pixel_loss(&t, &t).unwrap(), 0.0);
        assert_eq!(
            perceptual_loss(&t, &t, &PoolPyramid::default()).unwrap(),
            0.0
        );
        assert_eq!(gradient_loss(&t, &t).unwrap(), 0.0);
        for sigma in [0.01, 0.5, 80.0] {
            let b = total_loss(
                &t,
                &t,
                &PoolPyramid::default(),
                &LossWeights::default(),
                sigma,
            )
            .unwrap();
            assert_eq!(b.total, 0.0);
        }
    }

    #[test]
    fn pixel_loss_worked_example() {
        // every pixel: target (1, 0), prediction (1, 1)
        let t = Cube::from_fn(2, 2, 2, |c, _, _| if c == 0 { 1.0 } else { 0.0 }).unwrap();
        let p = Cube::from_fn(2, 2, 2, |_, _, _| 1.0).unwrap();
        let expect = (0.5 + std::f64::consts::FRAC_PI_4) / 2.0;
        assert!((pixel_loss(&p, &t).unwrap() - expect).abs() < 1e-9);
        assert!((expect - 0.6427).abs() < 1e-4);
    }

    #[test]
    fn scaled_prediction_has_no_angle_term() {
        let t = random(2, 4, 4, 3).map(f64::abs);
        let p = t.map(|v| 1.7 * v);
        let m = mse(&p, &t).unwrap();
        assert!((pixel_loss(&p, &t).unwrap() - m / 2.0).abs() < 1e-9);
    }

    #[test]
    fn perceptual_offset() {
        let t = random(3, 8, 8, 2);
        let d = 0.3;
        let p = t.map(|v| v + d);
        let l = perceptual_loss(&p, &t, &PoolPyramid::default()).unwrap();
        assert!((l - d * d).abs() < 1e-12);
        let q = random(4, 8, 8, 2);
        assert!(perceptual_loss(&q, &t, &PoolPyramid::default()).unwrap() >= 0.0);
        assert_eq!(
            PoolPyramid::default().features(&t).unwrap().len(),
            2 * (64 + 16 + 4)
        );
    }

    #[test]
    fn pyramid_is_lipschitz() {
        let t = random(5, 8, 8, 2);
        let mut p = t.clone();
        p.data_mut()[17] += 1e-6;
        let ft = PoolPyramid::default().features(&t).unwrap();
        let fp = PoolPyramid::default().features(&p).unwrap();
        let diff = ft
            .iter()
            .zip(&fp)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff <= 1e-6 + 1e-15);
    }

    #[test]
    fn mismatched_extractor_output() {
        struct ShapeDependent;
        impl FeatureExtractor for ShapeDependent {
            fn features(&self, x: &Cube) -> Result<Vec<f64>> {
                Ok(vec![0.0; if x.data()[0] > 0.0 { 2 } else { 3 }])
            }
        }
        let a = Cube::from_fn(2, 2, 1, |_, _, _| 1.0).unwrap();
        let b = Cube::from_fn(2, 2, 1, |_, _, _| -1.0).unwrap();
        assert!(perceptual_loss(&a, &b, &ShapeDependent).is_err());
    }

    #[test]
    fn gradient_worked_example() {
        let t = Cube::zeros(2, 2, 1).unwrap();
        let p = Cube::new(2, 2, 1, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        assert!((gradient_loss(&p, &t).unwrap() - 0.5).abs() < 1e-9);
        let q = random(6, 5, 5, 2);
        let shifted = Cube::from_fn(5, 5, 2, |c, y, x| {
            q.get(c, y, x) + if c == 0 { 0.4 } else { -2.0 }
        })
        .unwrap();
        assert!(gradient_loss(&shifted, &q).unwrap() < 1e-12);
        assert!(gradient_loss(
            &Cube::zeros(1, 4, 1).unwrap(),
            &Cube::zeros(1, 4, 1).unwrap()
        )
        .is_err());
    }

    #[test]
    fn weighting_values() {
        assert!((edm_weight(0.5, 0.5).unwrap() - 8.0).abs() < 1e-12);
        assert!(edm_weight(0.0, 0.5).is_err());
        // λ(σ) = 1/σ_d² + 1/σ² is positive and strictly decreasing in σ
        let grid: Vec<f64> = (1..=400).map(|i| i as f64 * 0.01).collect();
        let vals: Vec<f64> = grid.iter().map(|&s| edm_weight(s, 0.5).unwrap()).collect();
        assert!(vals.iter().all(|&v| v > 0.0));
        assert!(vals.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn degenerate_weights_give_pixel_loss() {
        let t = random(7, 5, 5, 3);
        let p = random(8, 5, 5, 3);
        // λ(σ) = 1 needs 1/σ² = 1 − 1/σ_d², so σ_d = 2 and σ = 2/√3
        let w = LossWeights {
            pixel: 1.0,
            perceptual: 0.0,
            gradient: 0.0,
            sigma_data: 2.0,
        };
        let sigma = 2.0 / 3f64.sqrt();
        let b = total_loss(&p, &t, &PoolPyramid::default(), &w, sigma).unwrap();
        assert!((b.lambda - 1.0).abs() < 1e-12);
        assert!((b.total - pixel_loss(&p, &t).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn total_is_monotone_in_components() {
        let w = LossWeights::default();
        let base = combine(0.1, 0.2, 0.3, &w, 0.7).unwrap().total;
        assert!(combine(0.2, 0.2, 0.3, &w, 0.7).unwrap().total >= base);
        assert!(combine(0.1, 0.3, 0.3, &w, 0.7).unwrap().total >= base);
        assert!(combine(0.1, 0.2, 0.4, &w, 0.7).unwrap().total >= base);
        let neg = LossWeights { pixel: -1.0, ..w };
        assert!(combine(0.1, 0.2, 0.3, &neg, 0.7).is_err());
    }
}
