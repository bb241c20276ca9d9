//! Dense SVD backed by `faer`.

use faer::Mat;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Thin SVD `Y = U diag(σ) Vᵀ` with `σ` descending.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub v_t: DMatrix<f64>,
}

fn to_faer(y: &DMatrix<f64>) -> Mat<f64> {
    Mat::from_fn(y.nrows(), y.ncols(), |i, j| y[(i, j)])
}

fn svd_err(e: faer::linalg::solvers::SvdError) -> Error {
    Error::Internal(format!("SVD did not converge: {e:?}"))
}

fn check(y: &DMatrix<f64>) -> Result<()> {
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("matrix has non-finite entries".into()));
    }
    Ok(())
}

pub fn svd(y: &DMatrix<f64>) -> Result<Svd> {
    check(y)?;
    let (n, m) = y.shape();
    let k = n.min(m);
    if k == 0 {
        return Ok(Svd {
            u: DMatrix::zeros(n, 0),
            singular_values: DVector::zeros(0),
            v_t: DMatrix::zeros(0, m),
        });
    }
    let f = to_faer(y).thin_svd().map_err(svd_err)?;
    let (u, s, v) = (f.U(), f.S().column_vector(), f.V());
    Ok(Svd {
        u: DMatrix::from_fn(n, k, |i, j| u[(i, j)]),
        singular_values: DVector::from_fn(k, |i, _| s[i]),
        v_t: DMatrix::from_fn(k, m, |i, j| v[(j, i)]),
    })
}

/// Singular values, descending.
pub fn singular_values(y: &DMatrix<f64>) -> Result<Vec<f64>> {
    check(y)?;
    if y.is_empty() {
        return Ok(Vec::new());
    }
    to_faer(y).singular_values().map_err(svd_err)
}

/// Largest singular value; 0 for an empty matrix.
pub fn spectral_norm(y: &DMatrix<f64>) -> Result<f64> {
    Ok(singular_values(y)?.first().copied().unwrap_or(0.0))
}

pub fn nuclear_norm(y: &DMatrix<f64>) -> Result<f64> {
    Ok(singular_values(y)?.iter().sum())
}
