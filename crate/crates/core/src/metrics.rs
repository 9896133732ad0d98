//! Full-reference quality metrics for hyperspectral cubes.
//!
//! PSNR, SSIM and CC are computed per band and averaged. SAM is averaged
//! over pixels. Bands that make a metric undefined (zero variance for CC,
//! zero target mean for ERGAS) are skipped and counted, never turned into
//! NaN.
//!
//! LV (local variation) is the band-averaged mean of the population
//! variance of every 3×3 window fully inside the image. It is a sharpness
//! proxy that is only comparable between runs of this crate.

use std::fmt::Write as _;

use crate::cube::Cube;
use crate::error::{Error, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check(pred: &Cube, target: &Cube) -> Result<()> {
    pred.require_same_shape(target, "prediction vs target")
}

fn band_mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

/// Mean over bands of `10 log10(range² / MSE_band)`; an exactly matching
/// band contributes `+∞`.
pub fn psnr(pred: &Cube, target: &Cube, data_range: f64) -> Result<f64> {
    check(pred, target)?;
    let total: f64 = pred
        .bands()
        .zip(target.bands())
        .map(|(a, b)| {
            let mse = band_mse(a, b);
            if mse == 0.0 {
                f64::INFINITY
            } else {
                10.0 * (data_range * data_range / mse).log10()
            }
        })
        .sum();
    Ok(total / pred.channels() as f64)
}

pub fn rmse(pred: &Cube, target: &Cube) -> Result<f64> {
    check(pred, target)?;
    Ok(band_mse(pred.data(), target.data()).sqrt())
}

/// Angle in radians between two vectors; 0 when either has zero norm.
///
/// Uses `2 atan2(|â - b̂|, |â + b̂|)` on the unit vectors, which equals the
/// arccosine of the cosine but stays accurate near 0 and π.
pub fn spectral_angle(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let (mut diff, mut sum) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (u, v) = (x / na, y / nb);
        diff += (u - v) * (u - v);
        sum += (u + v) * (u + v);
    }
    2.0 * diff.sqrt().atan2(sum.sqrt())
}

/// Mean per-pixel spectral angle in radians.
pub fn mean_spectral_angle(pred: &Cube, target: &Cube) -> Result<f64> {
    check(pred, target)?;
    let (mut a, mut b) = (vec![0.0; pred.channels()], vec![0.0; pred.channels()]);
    let mut total = 0.0;
    for p in 0..pred.pixels() {
        pred.spectrum_into(p, &mut a);
        target.spectrum_into(p, &mut b);
        total += spectral_angle(&a, &b);
    }
    Ok(total / pred.pixels() as f64)
}

pub fn sam_deg(pred: &Cube, target: &Cube) -> Result<f64> {
    Ok(mean_spectral_angle(pred, target)?.to_degrees())
}

/// A metric value together with the number of bands it had to skip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandAveraged {
    pub value: f64,
    pub skipped: usize,
}

/// Per-band Pearson correlation averaged over bands where both inputs vary.
pub fn cc(pred: &Cube, target: &Cube) -> Result<BandAveraged> {
    check(pred, target)?;
    let mut sum = 0.0;
    let mut used = 0;
    for (a, b) in pred.bands().zip(target.bands()) {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for (x, y) in a.iter().zip(b) {
            let (dx, dy) = (x - ma, y - mb);
            sab += dx * dy;
            saa += dx * dx;
            sbb += dy * dy;
        }
        if saa > 0.0 && sbb > 0.0 {
            sum += sab / (saa.sqrt() * sbb.sqrt());
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::invalid("CC undefined: every band is constant"));
    }
    Ok(BandAveraged {
        value: sum / used as f64,
        skipped: pred.channels() - used,
    })
}

/// `100 / ratio · √(mean_b (RMSE_b / mean_b)²)`, normalized by the target's
/// band means.
pub fn ergas(pred: &Cube, target: &Cube, scale_ratio: f64) -> Result<BandAveraged> {
    check(pred, target)?;
    if !(scale_ratio > 0.0) {
        return Err(Error::invalid("ERGAS scale ratio must be positive"));
    }
    let mut acc = 0.0;
    let mut used = 0;
    for (a, b) in pred.bands().zip(target.bands()) {
        let mean = b.iter().sum::<f64>() / b.len() as f64;
        if mean == 0.0 {
            continue;
        }
        acc += band_mse(a, b) / (mean * mean);
        used += 1;
    }
    if used == 0 {
        return Err(Error::invalid(
            "ERGAS undefined: every target band has zero mean",
        ));
    }
    Ok(BandAveraged {
        value: 100.0 / scale_ratio * (acc / used as f64).sqrt(),
        skipped: pred.channels() - used,
    })
}

fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let mut k: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable "valid" filtering of a row-major image.
fn filter_valid(img: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        let row = &img[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = k.iter().zip(&row[x..x + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    out
}

fn ssim_band(a: &[f64], b: &[f64], h: usize, w: usize, k: &[f64], c1: f64, c2: f64) -> f64 {
    let mu_a = filter_valid(a, h, w, k);
    let mu_b = filter_valid(b, h, w, k);
    let sq = |v: &[f64]| v.iter().map(|x| x * x).collect::<Vec<_>>();
    let aa = filter_valid(&sq(a), h, w, k);
    let bb = filter_valid(&sq(b), h, w, k);
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let ab = filter_valid(&ab, h, w, k);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total +=
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    total / mu_a.len() as f64
}

/// Single-scale SSIM (11×11 Gaussian window, σ = 1.5, K1 = 0.01,
/// K2 = 0.03) over valid window positions, averaged over bands.
pub fn ssim(pred: &Cube, target: &Cube, data_range: f64) -> Result<f64> {
    check(pred, target)?;
    let (h, w) = (pred.height(), pred.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    let k = gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA);
    let c1 = (SSIM_K1 * data_range).powi(2);
    let c2 = (SSIM_K2 * data_range).powi(2);
    let total: f64 = pred
        .bands()
        .zip(target.bands())
        .map(|(a, b)| ssim_band(a, b, h, w, &k, c1, c2))
        .sum();
    Ok(total / pred.channels() as f64)
}

/// Mean 3×3-window variance (population, ÷9), averaged over bands.
pub fn local_variation(cube: &Cube) -> Result<f64> {
    let (h, w) = (cube.height(), cube.width());
    if h < 3 || w < 3 {
        return Err(Error::invalid(format!(
            "LV needs at least 3x3 pixels, got {h}x{w}"
        )));
    }
    let windows = ((h - 2) * (w - 2)) as f64;
    let mut total = 0.0;
    for band in cube.bands() {
        let mut acc = 0.0;
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let (mut s, mut s2) = (0.0, 0.0);
                for dy in 0..3 {
                    for dx in 0..3 {
                        let v = band[(y + dy - 1) * w + x + dx - 1];
                        s += v;
                        s2 += v * v;
                    }
                }
                let m = s / 9.0;
                acc += (s2 / 9.0 - m * m).max(0.0);
            }
        }
        total += acc / windows;
    }
    Ok(total / cube.channels() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricOptions {
    pub data_range: f64,
    pub scale_ratio: f64,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self {
            data_range: 1.0,
            scale_ratio: 4.0,
        }
    }
}

/// The full metric suite. FID is not part of it: it needs a pretrained
/// embedding network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub psnr: f64,
    pub ssim: f64,
    pub sam_deg: f64,
    pub cc: f64,
    pub rmse: f64,
    pub ergas: f64,
    pub lv: f64,
    /// Bands skipped by CC or ERGAS.
    pub skipped_bands: usize,
}

pub const CSV_HEADER: &str = "psnr,ssim,sam_deg,cc,rmse,ergas,lv,skipped_bands";

fn fmt_value(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".to_string()
    } else if v == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{v}")
    }
}

impl MetricReport {
    pub fn csv_row(&self) -> String {
        let mut s = String::new();
        for v in [
            self.psnr,
            self.ssim,
            self.sam_deg,
            self.cc,
            self.rmse,
            self.ergas,
            self.lv,
        ] {
            write!(s, "{},", fmt_value(v)).unwrap();
        }
        write!(s, "{}", self.skipped_bands).unwrap();
        s
    }

    pub fn to_csv(&self) -> String {
        format!("{CSV_HEADER}\n{}\n", self.csv_row())
    }
}

pub fn report(pred: &Cube, target: &Cube, opts: &MetricOptions) -> Result<MetricReport> {
    check(pred, target)?;
    let cc_v = cc(pred, target)?;
    let ergas_v = ergas(pred, target, opts.scale_ratio)?;
    let skipped = (0..pred.channels())
        .filter(|&c| {
            let var = |b: &[f64]| {
                let m = b.iter().sum::<f64>() / b.len() as f64;
                b.iter().map(|v| (v - m).powi(2)).sum::<f64>()
            };
            let tb = target.band(c);
            var(pred.band(c)) == 0.0 || var(tb) == 0.0 || tb.iter().sum::<f64>() == 0.0
        })
        .count();
    Ok(MetricReport {
        psnr: psnr(pred, target, opts.data_range)?,
        ssim: ssim(pred, target, opts.data_range)?,
        sam_deg: sam_deg(pred, target)?,
        cc: cc_v.value,
        rmse: rmse(pred, target)?,
        ergas: ergas_v.value,
        lv: local_variation(pred)?,
        skipped_bands: skipped,
    })
}
