//! Seeded synthetic scenes, so everything runs without a dataset.
//!
//! A scene is a Voronoi segment map where each segment owns a smooth
//! spectrum (a sum of three Gaussians over wavelength). Per pixel, a slowly
//! varying texture modulates the overall brightness and the three Gaussian
//! amplitudes, and a little white noise is added. Segment 0 is always
//! vegetation-like (low red, high near-infrared), segment 1 bare-soil-like.

use crate::cube::{HsiCube, SegmentationMap};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub seed: u64,
    pub segments: usize,
    /// Relative amplitude of the smooth spatial texture.
    pub texture: f64,
    /// Standard deviation of additive white noise.
    pub noise_std: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            bands: 242,
            seed: 0,
            segments: 8,
            texture: 0.1,
            noise_std: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub cube: HsiCube,
    pub segmentation: SegmentationMap,
    /// Band centre wavelengths in nanometres.
    pub wavelengths: Vec<f64>,
}

/// Band centres for a 242-band VNIR + SWIR sensor layout: the first 91
/// bands step 6.5 nm from 420 nm, the rest spread evenly over 1010–2450 nm.
/// Other band counts are scaled onto the same range.
pub fn wavelengths(bands: usize) -> Vec<f64> {
    const VNIR: f64 = 91.0;
    const TOTAL: f64 = 242.0;
    (0..bands)
        .map(|b| {
            let u = if bands > 1 {
                b as f64 * (TOTAL - 1.0) / (bands - 1) as f64
            } else {
                0.0
            };
            if u < VNIR {
                420.0 + 6.5 * u
            } else {
                1010.0 + (u - VNIR) * (2450.0 - 1010.0) / (TOTAL - 1.0 - VNIR)
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct Peak {
    centre: f64,
    width: f64,
    amplitude: f64,
}

fn vegetation() -> [Peak; 3] {
    [
        Peak {
            centre: 550.0,
            width: 35.0,
            amplitude: 0.08,
        },
        Peak {
            centre: 1050.0,
            width: 170.0,
            amplitude: 0.45,
        },
        Peak {
            centre: 1650.0,
            width: 180.0,
            amplitude: 0.18,
        },
    ]
}

fn bare_soil() -> [Peak; 3] {
    [
        Peak {
            centre: 700.0,
            width: 400.0,
            amplitude: 0.20,
        },
        Peak {
            centre: 1700.0,
            width: 500.0,
            amplitude: 0.28,
        },
        Peak {
            centre: 2250.0,
            width: 200.0,
            amplitude: 0.08,
        },
    ]
}

fn random_peaks(rng: &mut Rng) -> [Peak; 3] {
    std::array::from_fn(|_| Peak {
        centre: rng.uniform_range(450.0, 2400.0),
        width: rng.uniform_range(60.0, 400.0),
        amplitude: rng.uniform_range(0.05, 0.3),
    })
}

fn evaluate(peaks: &[Peak; 3], gains: [f64; 3], lambda: f64) -> f64 {
    peaks
        .iter()
        .zip(gains)
        .map(|(p, g)| {
            let d = (lambda - p.centre) / p.width;
            g * p.amplitude * (-0.5 * d * d).exp()
        })
        .sum()
}

/// A smooth zero-mean field: a sum of a few random plane waves.
struct Waves(Vec<(f64, f64, f64)>);

impl Waves {
    fn new(rng: &mut Rng, h: usize, w: usize) -> Self {
        let scale = std::f64::consts::TAU / h.max(w) as f64;
        Waves(
            (0..4)
                .map(|_| {
                    (
                        rng.uniform_range(-3.0, 3.0) * scale,
                        rng.uniform_range(-3.0, 3.0) * scale,
                        rng.uniform_range(0.0, std::f64::consts::TAU),
                    )
                })
                .collect(),
        )
    }

    fn at(&self, y: usize, x: usize) -> f64 {
        let s: f64 = self
            .0
            .iter()
            .map(|&(fy, fx, ph)| (fy * y as f64 + fx * x as f64 + ph).sin())
            .sum();
        s / self.0.len() as f64
    }
}

pub fn generate_scene(config: &SceneConfig) -> Result<Scene> {
    let SceneConfig {
        height: h,
        width: w,
        bands,
        seed,
        segments,
        texture,
        noise_std,
    } = *config;
    if h == 0 || w == 0 || bands == 0 || segments == 0 {
        return Err(Error::invalid(
            "scene dimensions and segment count must be positive",
        ));
    }
    if !(0.0..1.0).contains(&texture) || !(noise_std >= 0.0) {
        return Err(Error::invalid(
            "texture must lie in [0, 1) and noise_std be non-negative",
        ));
    }
    let mut rng = Rng::new(seed);
    let sites: Vec<(f64, f64)> = (0..segments)
        .map(|_| {
            (
                rng.uniform_range(0.0, h as f64),
                rng.uniform_range(0.0, w as f64),
            )
        })
        .collect();
    let mut labels = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (yf, xf) = (y as f64 + 0.5, x as f64 + 0.5);
            let nearest = sites
                .iter()
                .enumerate()
                .map(|(i, &(sy, sx))| (i, (yf - sy).powi(2) + (xf - sx).powi(2)))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(i, _)| i)
                .unwrap();
            labels.push(nearest as u32);
        }
    }
    let spectra: Vec<[Peak; 3]> = (0..segments)
        .map(|s| match s {
            0 => vegetation(),
            1 => bare_soil(),
            _ => random_peaks(&mut rng),
        })
        .collect();
    let brightness = Waves::new(&mut rng, h, w);
    let gains: Vec<Waves> = (0..3).map(|_| Waves::new(&mut rng, h, w)).collect();
    let lambdas = wavelengths(bands);

    let mut data = vec![0.0; h * w * bands];
    let plane = h * w;
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let peaks = &spectra[labels[p] as usize];
            let b = 1.0 + texture * brightness.at(y, x);
            let g: [f64; 3] =
                std::array::from_fn(|i| b * (1.0 + 0.5 * texture * gains[i].at(y, x)));
            for (c, &lambda) in lambdas.iter().enumerate() {
                data[c * plane + p] = evaluate(peaks, g, lambda);
            }
        }
    }
    if noise_std > 0.0 {
        let mut noise = rng.split(1);
        for v in &mut data {
            *v += noise_std * noise.standard_normal();
        }
    }
    Ok(Scene {
        cube: HsiCube::new(h, w, bands, data)?,
        segmentation: SegmentationMap::new(h, w, labels)?,
        wavelengths: lambdas,
    })
}

/// Block-mean downsampling by an integer factor (the LR observation model).
pub fn downsample(cube: &HsiCube, factor: usize) -> Result<HsiCube> {
    if factor == 0 || !cube.height().is_multiple_of(factor) || !cube.width().is_multiple_of(factor)
    {
        return Err(Error::invalid(format!(
            "{}x{} is not divisible by factor {factor}",
            cube.height(),
            cube.width()
        )));
    }
    let (h, w) = (cube.height() / factor, cube.width() / factor);
    let norm = (factor * factor) as f64;
    HsiCube::from_fn(h, w, cube.channels(), |c, y, x| {
        let mut s = 0.0;
        for dy in 0..factor {
            for dx in 0..factor {
                s += cube.get(c, y * factor + dy, x * factor + dx);
            }
        }
        s / norm
    })
}

/// Nearest-label downsampling of a segmentation (top-left sample per block).
pub fn downsample_labels(map: &SegmentationMap, factor: usize) -> Result<SegmentationMap> {
    if factor == 0 || !map.height.is_multiple_of(factor) || !map.width.is_multiple_of(factor) {
        return Err(Error::invalid("segmentation size not divisible by factor"));
    }
    let (h, w) = (map.height / factor, map.width / factor);
    let labels = (0..h * w)
        .map(|i| map.labels[(i / w) * factor * map.width + (i % w) * factor])
        .collect();
    SegmentationMap::new(h, w, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conditioning::{ndvi_raw, DEFAULT_NIR_BAND, DEFAULT_RED_BAND};

    #[test]
    fn default_grid_pins_red_and_nir_bands() {
        let l = wavelengths(242);
        assert_eq!(l[0], 420.0);
        assert!((l[DEFAULT_RED_BAND] - 660.5).abs() < 1e-9);
        assert!((l[DEFAULT_NIR_BAND] - 862.0).abs() < 1e-9);
        assert!((l[241] - 2450.0).abs() < 1e-9);
        assert!(l.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn scene_is_seeded() {
        let cfg = SceneConfig {
            height: 16,
            width: 16,
            bands: 30,
            seed: 9,
            ..Default::default()
        };
        let a = generate_scene(&cfg).unwrap();
        let b = generate_scene(&cfg).unwrap();
        assert_eq!(a.cube, b.cube);
        assert_eq!(a.segmentation, b.segmentation);
        let c = generate_scene(&SceneConfig { seed: 10, ..cfg }).unwrap();
        assert_ne!(a.cube, c.cube);
    }

    #[test]
    fn vegetation_segment_has_high_ndvi() {
        let scene = generate_scene(&SceneConfig {
            noise_std: 0.0,
            ..Default::default()
        })
        .unwrap();
        let nd = ndvi_raw(&scene.cube, DEFAULT_RED_BAND, DEFAULT_NIR_BAND).unwrap();
        let (mut veg, mut soil) = (Vec::new(), Vec::new());
        for (p, &l) in scene.segmentation.labels.iter().enumerate() {
            match l {
                0 => veg.push(nd.values[p]),
                1 => soil.push(nd.values[p]),
                _ => {}
            }
        }
        assert!(!veg.is_empty() && !soil.is_empty());
        assert!(veg.iter().all(|&v| v > 0.6), "{:?}", &veg[..3]);
        assert!(soil.iter().all(|&v| v < 0.3));
    }

    #[test]
    fn downsample_averages_blocks() {
        let cube = HsiCube::from_fn(4, 4, 1, |_, y, x| (y * 4 + x) as f64).unwrap();
        let lr = downsample(&cube, 2).unwrap();
        assert_eq!(lr.data(), &[2.5, 4.5, 10.5, 12.5]);
        assert!(downsample(&cube, 3).is_err());
    }
}
