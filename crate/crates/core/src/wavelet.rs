//! Regression wavelet analysis (RWA) along the spectral axis.
//!
//! Each level splits the running spectrum with an orthonormal Haar step into
//! approximation (`V`) and detail (`w`) channels, then fits an affine model
//! predicting every detail channel from that level's approximation channels.
//! The encoder keeps the top approximation plus the regression weights; in
//! lossless mode it also keeps the prediction residuals `W = w - ŵ`.
//!
//! With an odd channel count the trailing band is not paired; it is carried
//! unchanged as the last approximation channel.

use std::f64::consts::FRAC_1_SQRT_2;

use nalgebra::DMatrix;

use crate::cube::{Cube, HsiCube, LatentCube};
use crate::error::{Error, Result};
use crate::linalg;

/// One Haar split of a cube along its channel axis.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletLevel {
    /// `ceil(n / 2)` channels; the last one is the passthrough band when
    /// `passthrough` is set.
    pub approx: LatentCube,
    /// `floor(n / 2)` channels.
    pub detail: LatentCube,
    pub passthrough: bool,
}

impl WaveletLevel {
    /// Channel count of the cube this level was split from.
    pub fn parent_channels(&self) -> usize {
        self.approx.channels() + self.detail.channels()
    }
}

pub fn haar_forward(cube: &Cube) -> Result<WaveletLevel> {
    let n = cube.channels();
    if n < 2 {
        return Err(Error::invalid(format!(
            "Haar split needs at least 2 channels, got {n}"
        )));
    }
    let pairs = n / 2;
    let passthrough = n % 2 == 1;
    let (h, w) = (cube.height(), cube.width());
    let px = cube.pixels();
    let mut approx = vec![0.0; (pairs + passthrough as usize) * px];
    let mut detail = vec![0.0; pairs * px];
    for m in 0..pairs {
        let even = cube.band(2 * m);
        let odd = cube.band(2 * m + 1);
        let a = &mut approx[m * px..(m + 1) * px];
        let d = &mut detail[m * px..(m + 1) * px];
        for p in 0..px {
            a[p] = (even[p] + odd[p]) * FRAC_1_SQRT_2;
            d[p] = (even[p] - odd[p]) * FRAC_1_SQRT_2;
        }
    }
    if passthrough {
        approx[pairs * px..].copy_from_slice(cube.band(n - 1));
    }
    Ok(WaveletLevel {
        approx: Cube::new(h, w, pairs + passthrough as usize, approx)?,
        detail: Cube::new(h, w, pairs, detail)?,
        passthrough,
    })
}

pub fn haar_inverse(level: &WaveletLevel) -> Result<LatentCube> {
    let (a, d) = (&level.approx, &level.detail);
    if a.height() != d.height() || a.width() != d.width() {
        return Err(Error::shape(format!(
            "approx is {}x{}, detail is {}x{}",
            a.height(),
            a.width(),
            d.height(),
            d.width()
        )));
    }
    let pairs = d.channels();
    if a.channels() != pairs + level.passthrough as usize {
        return Err(Error::shape(format!(
            "{} approx channels cannot pair with {} detail channels (passthrough: {})",
            a.channels(),
            pairs,
            level.passthrough
        )));
    }
    let px = a.pixels();
    let n = a.channels() + pairs;
    let mut out = vec![0.0; n * px];
    for m in 0..pairs {
        let (ab, db) = (a.band(m), d.band(m));
        let (lo, hi) = out[2 * m * px..(2 * m + 2) * px].split_at_mut(px);
        for p in 0..px {
            lo[p] = (ab[p] + db[p]) * FRAC_1_SQRT_2;
            hi[p] = (ab[p] - db[p]) * FRAC_1_SQRT_2;
        }
    }
    if level.passthrough {
        out[(n - 1) * px..].copy_from_slice(a.band(pairs));
    }
    Cube::new(a.height(), a.width(), n, out)
}

/// Fits `ŵ_i = β_i0 + Σ_k β_ik V_k` for every detail channel by ordinary
/// least squares over all pixels.
///
/// Returns a `details × (approx + 1)` matrix; row `i` is `(β_i0, β_i1, …)`.
pub fn fit_regression(level: &WaveletLevel) -> Result<DMatrix<f64>> {
    let k = level.approx.channels();
    let px = level.approx.pixels();
    if level.detail.channels() == 0 {
        return Err(Error::invalid("level has no detail channels"));
    }
    if px < k + 1 {
        return Err(Error::TooFewPixels {
            pixels: px,
            unknowns: k + 1,
        });
    }
    let mut design = DMatrix::<f64>::from_element(px, k + 1, 1.0);
    design
        .columns_mut(1, k)
        .copy_from_slice(level.approx.data());
    let targets = DMatrix::from_column_slice(px, level.detail.channels(), level.detail.data());
    let solution = linalg::least_squares(&design, &targets)?;
    Ok(solution.transpose())
}

/// Evaluates the affine detail predictor on an approximation cube.
pub fn predict_details(approx: &LatentCube, betas: &DMatrix<f64>) -> Result<LatentCube> {
    let k = approx.channels();
    if betas.ncols() != k + 1 {
        return Err(Error::shape(format!(
            "regression expects {} approximation channels, got {k}",
            betas.ncols() - 1
        )));
    }
    let px = approx.pixels();
    let v = DMatrix::from_column_slice(px, k, approx.data());
    let slopes = betas.columns(1, k).transpose();
    let mut pred = v * slopes;
    for (i, mut col) in pred.column_iter_mut().enumerate() {
        let b0 = betas[(i, 0)];
        col.iter_mut().for_each(|x| *x += b0);
    }
    Cube::new(
        approx.height(),
        approx.width(),
        betas.nrows(),
        pred.as_slice().to_vec(),
    )
}

/// Regression weights for every level plus the channel-count trail.
#[derive(Debug, Clone, PartialEq)]
pub struct RwaModel {
    /// `betas[j]` belongs to level `j + 1`.
    pub betas: Vec<DMatrix<f64>>,
    /// Channel count before level 1, after level 1, …, after level J.
    pub band_counts: Vec<usize>,
}

impl RwaModel {
    pub fn levels(&self) -> usize {
        self.betas.len()
    }

    pub fn input_bands(&self) -> usize {
        self.band_counts[0]
    }

    pub fn top_bands(&self) -> usize {
        *self.band_counts.last().expect("band trail is never empty")
    }

    pub fn validate(&self) -> Result<()> {
        if self.betas.is_empty() || self.band_counts.len() != self.betas.len() + 1 {
            return Err(Error::invalid(format!(
                "{} regression levels with a band trail of length {}",
                self.betas.len(),
                self.band_counts.len()
            )));
        }
        for (j, b) in self.betas.iter().enumerate() {
            let parent = self.band_counts[j];
            let approx = self.band_counts[j + 1];
            if approx != parent.div_ceil(2) || b.nrows() != parent / 2 || b.ncols() != approx + 1 {
                return Err(Error::shape(format!(
                    "level {}: {} bands split into {approx} approx, weights are {}x{}",
                    j + 1,
                    parent,
                    b.nrows(),
                    b.ncols()
                )));
            }
            if b.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite regression weight at level {}",
                    j + 1
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RwaEncoding {
    /// Approximation after the last level (`V^J`).
    pub approx_top: LatentCube,
    pub model: RwaModel,
    /// Per-level detail residuals (`W^j`), lossless mode only.
    pub residuals: Option<Vec<LatentCube>>,
}

/// Runs up to `levels` Haar + regression steps.
///
/// Stops early when the running approximation has fewer than two channels;
/// the achieved depth is `model.levels()`.
pub fn rwa_encode(cube: &HsiCube, levels: usize, keep_residuals: bool) -> Result<RwaEncoding> {
    if levels < 1 {
        return Err(Error::invalid("RWA needs at least one level"));
    }
    let mut running = cube.clone();
    let mut betas = Vec::with_capacity(levels);
    let mut band_counts = vec![cube.channels()];
    let mut residuals = Vec::new();
    for _ in 0..levels {
        if running.channels() < 2 {
            break;
        }
        let level = haar_forward(&running)?;
        let b = fit_regression(&level)?;
        if keep_residuals {
            let pred = predict_details(&level.approx, &b)?;
            let mut resid = level.detail;
            for (r, p) in resid.data_mut().iter_mut().zip(pred.data()) {
                *r -= p;
            }
            residuals.push(resid);
        }
        betas.push(b);
        band_counts.push(level.approx.channels());
        running = level.approx;
    }
    if betas.is_empty() {
        return Err(Error::invalid(format!(
            "cannot split a {}-channel cube",
            cube.channels()
        )));
    }
    Ok(RwaEncoding {
        approx_top: running,
        model: RwaModel { betas, band_counts },
        residuals: keep_residuals.then_some(residuals),
    })
}

pub fn rwa_decode(encoding: &RwaEncoding, zero_residuals: bool) -> Result<HsiCube> {
    let residuals = if zero_residuals {
        None
    } else {
        encoding.residuals.as_deref()
    };
    rwa_reconstruct(&encoding.approx_top, &encoding.model, residuals)
}

/// Inverse RWA from an arbitrary top approximation.
///
/// This is the super-resolution decode: `approx_top` may come from a
/// different image (and spatial size) than the one `model` was fitted on.
/// Without residuals every detail is the regression prediction.
pub fn rwa_reconstruct(
    approx_top: &LatentCube,
    model: &RwaModel,
    residuals: Option<&[LatentCube]>,
) -> Result<HsiCube> {
    model.validate()?;
    if approx_top.channels() != model.top_bands() {
        return Err(Error::shape(format!(
            "model expects {} top channels, got {}",
            model.top_bands(),
            approx_top.channels()
        )));
    }
    if let Some(r) = residuals {
        if r.len() != model.levels() {
            return Err(Error::shape(format!(
                "{} residual cubes for {} levels",
                r.len(),
                model.levels()
            )));
        }
    }
    let mut current = approx_top.clone();
    for j in (0..model.levels()).rev() {
        let mut detail = predict_details(&current, &model.betas[j])?;
        if let Some(r) = residuals {
            r[j].require_same_shape(&detail, "residual vs predicted detail")?;
            for (d, w) in detail.data_mut().iter_mut().zip(r[j].data()) {
                *d += w;
            }
        }
        current = haar_inverse(&WaveletLevel {
            approx: current,
            detail,
            passthrough: model.band_counts[j] % 2 == 1,
        })?;
    }
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn random_cube(rng: &mut Rng, h: usize, w: usize, c: usize) -> Cube {
        Cube::from_fn(h, w, c, |_, _, _| rng.uniform_range(-1.0, 1.0)).unwrap()
    }

    #[test]
    fn two_band_pair() {
        let c = Cube::new(1, 1, 2, vec![2.0, 4.0]).unwrap();
        let l = haar_forward(&c).unwrap();
        assert!((l.approx.data()[0] - 4.242640687119285).abs() < 1e-12);
        assert!((l.detail.data()[0] + std::f64::consts::SQRT_2).abs() < 1e-12);
        assert!(!l.passthrough);
    }

    #[test]
    fn constant_spectrum_has_zero_details() {
        let c = Cube::from_fn(3, 3, 8, |_, _, _| 0.37).unwrap();
        let l = haar_forward(&c).unwrap();
        assert!(l.detail.data().iter().all(|&d| d == 0.0));
    }

    #[test]
    fn odd_band_count_carries_passthrough() {
        let mut rng = Rng::new(5);
        let c = random_cube(&mut rng, 2, 3, 5);
        let l = haar_forward(&c).unwrap();
        assert_eq!(l.approx.channels(), 3);
        assert_eq!(l.detail.channels(), 2);
        assert!(l.passthrough);
        assert_eq!(l.approx.band(2), c.band(4));
        let back = haar_inverse(&l).unwrap();
        for (a, b) in back.data().iter().zip(c.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_detail_splits_evenly() {
        let l = WaveletLevel {
            approx: Cube::new(1, 1, 1, vec![3.0]).unwrap(),
            detail: Cube::new(1, 1, 1, vec![0.0]).unwrap(),
            passthrough: false,
        };
        let x = haar_inverse(&l).unwrap();
        let expect = 3.0 / 2f64.sqrt();
        assert!((x.data()[0] - expect).abs() < 1e-15);
        assert!((x.data()[1] - expect).abs() < 1e-15);
    }

    #[test]
    fn inverse_rejects_mismatched_counts() {
        let l = WaveletLevel {
            approx: Cube::zeros(2, 2, 4).unwrap(),
            detail: Cube::zeros(2, 2, 2).unwrap(),
            passthrough: false,
        };
        assert!(matches!(haar_inverse(&l), Err(Error::Shape(_))));
        let l = WaveletLevel {
            approx: Cube::zeros(2, 2, 3).unwrap(),
            detail: Cube::zeros(2, 2, 2).unwrap(),
            passthrough: false,
        };
        assert!(haar_inverse(&l).is_err());
    }

    #[test]
    fn single_channel_cannot_split() {
        assert!(haar_forward(&Cube::zeros(2, 2, 1).unwrap()).is_err());
        assert!(rwa_encode(&Cube::zeros(2, 2, 4).unwrap(), 0, false).is_err());
    }

    /// Builds a cube whose level-1 details are exactly
    /// `0.3·V1 − 0.1·V2 + 0.05` for every detail channel.
    fn affine_detail_cube(rng: &mut Rng, h: usize, w: usize) -> (Cube, WaveletLevel) {
        let approx = random_cube(rng, h, w, 3);
        let detail = Cube::from_fn(h, w, 3, |_, y, x| {
            0.3 * approx.get(0, y, x) - 0.1 * approx.get(1, y, x) + 0.05
        })
        .unwrap();
        let level = WaveletLevel {
            approx,
            detail,
            passthrough: false,
        };
        (haar_inverse(&level).unwrap(), level)
    }

    #[test]
    fn regression_recovers_affine_details() {
        let mut rng = Rng::new(21);
        let (cube, level) = affine_detail_cube(&mut rng, 6, 6);
        let b = fit_regression(&level).unwrap();
        for i in 0..3 {
            let row: Vec<f64> = b.row(i).iter().cloned().collect();
            let expect = [0.05, 0.3, -0.1, 0.0];
            for (got, want) in row.iter().zip(expect) {
                assert!((got - want).abs() < 1e-10, "row {i}: {row:?}");
            }
        }
        let pred = predict_details(&level.approx, &b).unwrap();
        for (p, d) in pred.data().iter().zip(level.detail.data()) {
            assert!((p - d).abs() < 1e-8);
        }
        // zero-residual decoding is exact when details are affine
        let enc = rwa_encode(&cube, 1, false).unwrap();
        let dec = rwa_decode(&enc, true).unwrap();
        for (a, b) in dec.data().iter().zip(cube.data()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn independent_details_give_intercept_only() {
        let mut rng = Rng::new(22);
        let approx = random_cube(&mut rng, 40, 40, 2);
        let detail = Cube::from_fn(40, 40, 1, |_, _, _| rng.uniform_range(0.0, 1.0)).unwrap();
        let mean = detail.data().iter().sum::<f64>() / detail.len() as f64;
        let level = WaveletLevel {
            approx: approx.clone(),
            detail: detail.clone(),
            passthrough: false,
        };
        let b = fit_regression(&level).unwrap();

        // normal equations solved by Cholesky, independent of the SVD path
        let px = approx.pixels();
        let mut x = DMatrix::from_element(px, 3, 1.0);
        x.columns_mut(1, 2).copy_from_slice(approx.data());
        let y = DMatrix::from_column_slice(px, 1, detail.data());
        let xtx = x.transpose() * &x;
        let oracle = xtx.cholesky().unwrap().solve(&(x.transpose() * y));
        for k in 0..3 {
            assert!((b[(0, k)] - oracle[(k, 0)]).abs() < 1e-10);
        }
        assert!((b[(0, 0)] - mean).abs() < 0.03);
        assert!(b[(0, 1)].abs() < 0.05 && b[(0, 2)].abs() < 0.05);
    }

    #[test]
    fn too_few_pixels() {
        let level = WaveletLevel {
            approx: Cube::zeros(1, 1, 3).unwrap(),
            detail: Cube::zeros(1, 1, 3).unwrap(),
            passthrough: false,
        };
        let err = fit_regression(&level).unwrap_err();
        assert!(err.to_string().contains("too few pixels"));
    }

    #[test]
    fn channel_trail_for_242_bands() {
        let mut rng = Rng::new(3);
        // each level regresses on its approximation, so pixels must exceed 122
        let cube = random_cube(&mut rng, 12, 12, 242);
        let enc = rwa_encode(&cube, 1, false).unwrap();
        assert_eq!(enc.approx_top.channels(), 121);
        let cube = random_cube(&mut rng, 16, 16, 242);
        let enc = rwa_encode(&cube, 4, false).unwrap();
        assert_eq!(enc.model.band_counts, vec![242, 121, 61, 31, 16]);
    }

    #[test]
    fn stops_early_when_channels_run_out() {
        let mut rng = Rng::new(4);
        let cube = random_cube(&mut rng, 4, 4, 4);
        let enc = rwa_encode(&cube, 5, true).unwrap();
        assert_eq!(enc.model.band_counts, vec![4, 2, 1]);
        assert_eq!(enc.model.levels(), 2);
        let dec = rwa_decode(&enc, false).unwrap();
        for (a, b) in dec.data().iter().zip(cube.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn lossy_decode_error_is_residual_energy() {
        // one level, orthonormal Haar: ‖x − x̂‖² = ‖W‖²
        let mut rng = Rng::new(8);
        let cube = random_cube(&mut rng, 10, 10, 12);
        let enc = rwa_encode(&cube, 1, true).unwrap();
        let lossless = rwa_decode(&enc, false).unwrap();
        let lossy = rwa_decode(&enc, true).unwrap();
        let err2 = |a: &Cube| -> f64 {
            a.data()
                .iter()
                .zip(cube.data())
                .map(|(x, y)| (x - y).powi(2))
                .sum()
        };
        let resid2: f64 = enc.residuals.as_ref().unwrap()[0]
            .data()
            .iter()
            .map(|r| r * r)
            .sum();
        assert!(err2(&lossless) < 1e-20);
        assert!((err2(&lossy) - resid2).abs() < 1e-10 * resid2.max(1.0));
        assert!(resid2 > 0.0);
    }

    #[test]
    fn ols_is_locally_optimal() {
        let mut rng = Rng::new(31);
        let cube = random_cube(&mut rng, 8, 8, 6);
        let level = haar_forward(&cube).unwrap();
        let b = fit_regression(&level).unwrap();
        let sse = |betas: &DMatrix<f64>| -> f64 {
            let pred = predict_details(&level.approx, betas).unwrap();
            pred.data()
                .iter()
                .zip(level.detail.data())
                .map(|(p, d)| (p - d).powi(2))
                .sum()
        };
        let base = sse(&b);
        for _ in 0..50 {
            let mut p = b.clone();
            let row = rng.below(p.nrows());
            for k in 0..p.ncols() {
                p[(row, k)] += 1e-3 * rng.standard_normal();
            }
            assert!(sse(&p) >= base);
        }
    }

    #[test]
    fn model_shape_checks() {
        let mut rng = Rng::new(2);
        let cube = random_cube(&mut rng, 4, 4, 6);
        let mut enc = rwa_encode(&cube, 1, false).unwrap();
        enc.approx_top = Cube::zeros(4, 4, 2).unwrap();
        assert!(rwa_decode(&enc, true).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn haar_roundtrip_and_energy(seed in any::<u64>(), c in 2usize..20) {
            let mut rng = Rng::new(seed);
            let cube = random_cube(&mut rng, 3, 4, c);
            let l = haar_forward(&cube).unwrap();
            let back = haar_inverse(&l).unwrap();
            for (a, b) in back.data().iter().zip(cube.data()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            for p in 0..cube.pixels() {
                let e0: f64 = cube.spectrum(p).iter().map(|v| v * v).sum();
                let e1: f64 = l.approx.spectrum(p).iter().chain(l.detail.spectrum(p).iter()).map(|v| v * v).sum();
                prop_assert!((e0 - e1).abs() <= 1e-10 * e0.max(1e-300));
            }
        }

        #[test]
        fn lossless_roundtrip_any_depth(seed in any::<u64>(), c in 2usize..40, j in 1usize..5) {
            let mut rng = Rng::new(seed);
            let cube = random_cube(&mut rng, 7, 7, c);
            let enc = rwa_encode(&cube, j, true).unwrap();
            let dec = rwa_decode(&enc, false).unwrap();
            prop_assert_eq!(dec.channels(), c);
            for (a, b) in dec.data().iter().zip(cube.data()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
