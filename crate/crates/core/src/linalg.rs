//! Dense linear-algebra helpers shared by the regression and PCA code.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Singular values below `RCOND × σ_max` are treated as zero.
pub const RCOND: f64 = 1e-10;

/// Moore–Penrose pseudoinverse via SVD with a relative singular-value cutoff.
///
/// Rank-deficient inputs (constant bands, duplicated channels) get the
/// minimum-norm solution.
pub fn pseudo_inverse(a: &DMatrix<f64>, rcond: f64) -> Result<DMatrix<f64>> {
    let svd = a.clone().svd(true, true);
    let u = svd
        .u
        .ok_or_else(|| Error::Numeric("SVD did not return U".into()))?;
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Numeric("SVD did not return Vᵀ".into()))?;
    let s = &svd.singular_values;
    let s_max = s.iter().cloned().fold(0.0_f64, f64::max);
    let cutoff = rcond * s_max;
    let mut inv_s = DMatrix::<f64>::zeros(s.len(), s.len());
    for (i, &sv) in s.iter().enumerate() {
        if sv > cutoff && sv > 0.0 {
            inv_s[(i, i)] = 1.0 / sv;
        }
    }
    Ok(v_t.transpose() * inv_s * u.transpose())
}

/// Least-squares solution of `design · X ≈ targets`, column by column.
pub fn least_squares(design: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if design.nrows() != targets.nrows() {
        return Err(Error::shape(format!(
            "design has {} rows, targets {}",
            design.nrows(),
            targets.nrows()
        )));
    }
    Ok(pseudo_inverse(design, RCOND)? * targets)
}
