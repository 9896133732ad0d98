//! Spectral PCA between the wavelet approximation and the diffusion latent.
//!
//! Pixels are samples and channels are features. The fitted model (mean,
//! retained loadings, eigenvalues) is a reusable spectral basis: a latent
//! produced at any spatial size maps back through the same basis, with the
//! discarded directions reconstructed as zero.

use nalgebra::DMatrix;

use crate::cube::{Cube, LatentCube};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    /// Per-channel mean over pixels, length `C`.
    pub mean: Vec<f64>,
    /// `k × C`, orthonormal rows, ordered by decreasing variance.
    pub loadings: DMatrix<f64>,
    /// Explained variance of each retained direction (`n − 1` denominator).
    pub eigenvalues: Vec<f64>,
}

impl PcaModel {
    pub fn retained(&self) -> usize {
        self.loadings.nrows()
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (k, c) = self.loadings.shape();
        if c != self.mean.len() || k != self.eigenvalues.len() || k == 0 || k > c {
            return Err(Error::shape(format!(
                "PCA model with mean {} , loadings {k}x{c}, {} eigenvalues",
                self.mean.len(),
                self.eigenvalues.len()
            )));
        }
        let finite = self
            .mean
            .iter()
            .chain(self.eigenvalues.iter())
            .all(|v| v.is_finite())
            && self.loadings.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::Numeric("non-finite PCA model".into()));
        }
        Ok(())
    }
}

/// Fits a `k`-component PCA by SVD of the centered pixel × channel matrix.
///
/// Each loading row is sign-flipped so that its largest-magnitude entry is
/// positive.
pub fn pca_fit(cube: &LatentCube, k: usize) -> Result<PcaModel> {
    let c = cube.channels();
    let p = cube.pixels();
    if k == 0 || k > c {
        return Err(Error::invalid(format!(
            "cannot retain {k} components of {c} channels"
        )));
    }
    if p < 2 {
        return Err(Error::invalid("PCA needs at least two pixels"));
    }
    let mean = cube.channel_means();
    // Zero rows do not change the Gram matrix but guarantee C right
    // singular vectors when there are fewer pixels than channels.
    let rows = p.max(c);
    let mut x = DMatrix::<f64>::zeros(rows, c);
    for (ch, band) in cube.bands().enumerate() {
        let m = mean[ch];
        for (i, v) in band.iter().enumerate() {
            x[(i, ch)] = v - m;
        }
    }
    let svd = x.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Numeric("SVD did not return Vᵀ".into()))?;
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));

    let mut loadings = DMatrix::<f64>::zeros(k, c);
    let mut eigenvalues = Vec::with_capacity(k);
    for (r, &idx) in order.iter().take(k).enumerate() {
        let row = v_t.row(idx);
        let mut pivot = 0;
        for j in 1..c {
            if row[j].abs() > row[pivot].abs() {
                pivot = j;
            }
        }
        let sign = if row[pivot] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..c {
            loadings[(r, j)] = sign * row[j];
        }
        eigenvalues.push(s[idx] * s[idx] / (p - 1) as f64);
    }
    Ok(PcaModel {
        mean,
        loadings,
        eigenvalues,
    })
}

/// `z = L · (x − mean)` for every pixel.
pub fn pca_project(cube: &LatentCube, model: &PcaModel) -> Result<LatentCube> {
    if cube.channels() != model.channels() {
        return Err(Error::shape(format!(
            "cube has {} channels, PCA model expects {}",
            cube.channels(),
            model.channels()
        )));
    }
    let p = cube.pixels();
    let mut x = DMatrix::from_column_slice(p, cube.channels(), cube.data());
    for (ch, mut col) in x.column_iter_mut().enumerate() {
        let m = model.mean[ch];
        col.iter_mut().for_each(|v| *v -= m);
    }
    let z = x * model.loadings.transpose();
    Cube::new(
        cube.height(),
        cube.width(),
        model.retained(),
        z.as_slice().to_vec(),
    )
}

/// `x̂ = Lᵀ · z + mean` for every pixel.
pub fn pca_inverse(latent: &LatentCube, model: &PcaModel) -> Result<LatentCube> {
    if latent.channels() != model.retained() {
        return Err(Error::shape(format!(
            "latent has {} channels, PCA model retains {}",
            latent.channels(),
            model.retained()
        )));
    }
    let p = latent.pixels();
    let z = DMatrix::from_column_slice(p, latent.channels(), latent.data());
    let mut x = z * &model.loadings;
    for (ch, mut col) in x.column_iter_mut().enumerate() {
        let m = model.mean[ch];
        col.iter_mut().for_each(|v| *v += m);
    }
    Cube::new(
        latent.height(),
        latent.width(),
        model.channels(),
        x.as_slice().to_vec(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_cube(seed: u64, h: usize, w: usize, c: usize) -> Cube {
        let mut rng = Rng::new(seed);
        // unequal channel scales give a well-separated spectrum
        Cube::from_fn(h, w, c, |ch, _, _| {
            rng.standard_normal() * (1.0 + ch as f64)
        })
        .unwrap()
    }

    fn mse(a: &Cube, b: &Cube) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            / a.len() as f64
    }

    fn max_abs(a: &Cube, b: &Cube) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn rank_three_affine_data_roundtrips() {
        let mut rng = Rng::new(1);
        let basis: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..9).map(|_| rng.standard_normal()).collect())
            .collect();
        let offset: Vec<f64> = (0..9).map(|i| 0.1 * i as f64).collect();
        let cube = Cube::from_pixel_fn(6, 6, 9, |_, s| {
            let w: Vec<f64> = (0..3).map(|_| rng.standard_normal()).collect();
            for (c, v) in s.iter_mut().enumerate() {
                *v = offset[c] + (0..3).map(|i| w[i] * basis[i][c]).sum::<f64>();
            }
        })
        .unwrap();
        let m = pca_fit(&cube, 3).unwrap();
        let back = pca_inverse(&pca_project(&cube, &m).unwrap(), &m).unwrap();
        assert!(max_abs(&back, &cube) < 1e-9);
    }

    #[test]
    fn full_basis_is_exact() {
        let cube = random_cube(2, 5, 5, 7);
        let m = pca_fit(&cube, 7).unwrap();
        let back = pca_inverse(&pca_project(&cube, &m).unwrap(), &m).unwrap();
        assert!(max_abs(&back, &cube) < 1e-9);
    }

    #[test]
    fn fewer_pixels_than_channels_still_gives_full_basis() {
        let cube = random_cube(3, 1, 3, 6);
        let m = pca_fit(&cube, 6).unwrap();
        let gram = &m.loadings * m.loadings.transpose();
        assert!((gram - DMatrix::identity(6, 6)).norm() < 1e-8);
        let back = pca_inverse(&pca_project(&cube, &m).unwrap(), &m).unwrap();
        assert!(max_abs(&back, &cube) < 1e-9);
    }

    #[test]
    fn discarded_eigenvalues_account_for_error() {
        let cube = random_cube(4, 16, 16, 8);
        let k = 4;
        let m = pca_fit(&cube, k).unwrap();
        let back = pca_inverse(&pca_project(&cube, &m).unwrap(), &m).unwrap();

        // independent route: eigendecomposition of the sample covariance
        let p = cube.pixels();
        let means = cube.channel_means();
        let mut cov = DMatrix::<f64>::zeros(8, 8);
        for i in 0..8 {
            for j in 0..8 {
                let s: f64 = (0..p)
                    .map(|q| (cube.band(i)[q] - means[i]) * (cube.band(j)[q] - means[j]))
                    .sum();
                cov[(i, j)] = s / (p - 1) as f64;
            }
        }
        let mut eig: Vec<f64> = cov.symmetric_eigen().eigenvalues.iter().cloned().collect();
        eig.sort_by(|a, b| b.total_cmp(a));
        for (a, b) in m.eigenvalues.iter().zip(&eig) {
            assert!((a - b).abs() < 1e-9 * b.abs().max(1.0));
        }
        let discarded: f64 = eig[k..].iter().sum();
        let predicted = discarded * (p - 1) as f64 / (p * 8) as f64;
        assert!((mse(&back, &cube) - predicted).abs() < 1e-9 * predicted);
    }

    #[test]
    fn mean_projects_to_zero_and_zero_inverts_to_mean() {
        let cube = random_cube(5, 4, 4, 5);
        let m = pca_fit(&cube, 3).unwrap();
        let mean_cube = Cube::from_fn(2, 2, 5, |c, _, _| m.mean[c]).unwrap();
        let z = pca_project(&mean_cube, &m).unwrap();
        assert!(z.data().iter().all(|v| v.abs() < 1e-12));
        let zero = Cube::zeros(3, 3, 3).unwrap();
        let x = pca_inverse(&zero, &m).unwrap();
        for p in 0..x.pixels() {
            assert_eq!(x.spectrum(p), m.mean);
        }
    }

    #[test]
    fn channel_mismatches_are_errors() {
        let cube = random_cube(6, 4, 4, 5);
        let m = pca_fit(&cube, 3).unwrap();
        assert!(pca_project(&Cube::zeros(2, 2, 4).unwrap(), &m).is_err());
        assert!(pca_inverse(&Cube::zeros(2, 2, 4).unwrap(), &m).is_err());
        assert!(pca_fit(&cube, 6).is_err());
        assert!(pca_fit(&cube, 0).is_err());
        assert!(pca_fit(&Cube::zeros(1, 1, 3).unwrap(), 1).is_err());
    }

    #[test]
    fn foreign_image_error_is_its_projection_residual() {
        let lr = random_cube(7, 8, 8, 6);
        let hr = random_cube(8, 16, 16, 6);
        let m = pca_fit(&lr, 3).unwrap();
        let back = pca_inverse(&pca_project(&hr, &m).unwrap(), &m).unwrap();
        // oracle: (I − LᵀL)(x − mean) per pixel
        let proj = m.loadings.transpose() * &m.loadings;
        let resid = DMatrix::<f64>::identity(6, 6) - proj;
        let mut expected = 0.0;
        for p in 0..hr.pixels() {
            let x = nalgebra::DVector::from_iterator(
                6,
                hr.spectrum(p).iter().zip(&m.mean).map(|(v, mu)| v - mu),
            );
            expected += (&resid * x).norm_squared();
        }
        let got: f64 = back
            .data()
            .iter()
            .zip(hr.data())
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        assert!((got - expected).abs() < 1e-9 * expected);
    }

    #[test]
    fn loadings_orthonormal_and_sorted() {
        let cube = random_cube(9, 10, 10, 12);
        let m = pca_fit(&cube, 8).unwrap();
        let gram = &m.loadings * m.loadings.transpose();
        assert!((gram - DMatrix::identity(8, 8)).norm() < 1e-8);
        assert!(m.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        assert!(m.eigenvalues.iter().all(|&e| e >= 0.0));
        for r in 0..8 {
            let row = m.loadings.row(r);
            let pivot = row
                .iter()
                .cloned()
                .fold(0.0_f64, |a, v| if v.abs() > a.abs() { v } else { a });
            assert!(pivot > 0.0);
        }
    }

    #[test]
    fn error_non_increasing_in_k() {
        let cube = random_cube(10, 8, 8, 10);
        let mut last = f64::INFINITY;
        for k in 1..=10 {
            let m = pca_fit(&cube, k).unwrap();
            let e = mse(
                &pca_inverse(&pca_project(&cube, &m).unwrap(), &m).unwrap(),
                &cube,
            );
            assert!(e <= last + 1e-12);
            last = e;
        }
    }

    #[test]
    fn score_variances_equal_eigenvalues() {
        let cube = random_cube(11, 12, 12, 6);
        let m = pca_fit(&cube, 6).unwrap();
        let z = pca_project(&cube, &m).unwrap();
        let n = z.pixels() as f64;
        for (c, band) in z.bands().enumerate() {
            let mu = band.iter().sum::<f64>() / n;
            let var = band.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (n - 1.0);
            assert!((var - m.eigenvalues[c]).abs() <= 1e-6 * m.eigenvalues[c]);
        }
    }

    #[test]
    fn refit_is_bit_identical() {
        let cube = random_cube(12, 6, 6, 9);
        assert_eq!(pca_fit(&cube, 5).unwrap(), pca_fit(&cube, 5).unwrap());
    }
}
