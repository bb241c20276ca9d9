//! Proximal operators: soft thresholding, singular value thresholding and the
//! p-type (nonconvex rank surrogate) singular value shrinkage.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;

/// Parameters of `f(t) = (1 + p) t / (p + t)` and its inner fixed-point loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PTypeParams {
    pub p: f64,
    pub inner_tol: f64,
    pub inner_max_iter: usize,
}

impl Default for PTypeParams {
    fn default() -> Self {
        Self {
            p: 0.1,
            inner_tol: 1e-9,
            inner_max_iter: 100,
        }
    }
}

impl PTypeParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0) || !(self.inner_tol > 0.0) || self.inner_max_iter == 0 {
            return Err(Error::Domain(format!("invalid p-type parameters {self:?}")));
        }
        Ok(())
    }

    /// `f'(t) = p (1 + p) / (p + t)^2`.
    pub fn derivative(&self, t: f64) -> f64 {
        self.p * (1.0 + self.p) / ((self.p + t) * (self.p + t))
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(Error::Domain(format!("threshold must be finite and >= 0, got {tau}")));
    }
    Ok(())
}

fn check_finite(y: &DMatrix<f64>) -> Result<()> {
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("matrix has non-finite entries".into()));
    }
    Ok(())
}

/// `sgn(x) max(|x| - tau, 0)` without argument checks.
#[inline]
pub fn shrink(x: f64, tau: f64) -> f64 {
    if x > tau {
        x - tau
    } else if x < -tau {
        x + tau
    } else {
        0.0
    }
}

pub fn soft_threshold(x: f64, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    Ok(shrink(x, tau))
}

pub fn soft_threshold_matrix(x: &DMatrix<f64>, tau: f64) -> Result<DMatrix<f64>> {
    check_tau(tau)?;
    Ok(x.map(|v| shrink(v, tau)))
}

fn rebuild(u: &DMatrix<f64>, sigma: &[f64], v_t: &DMatrix<f64>) -> DMatrix<f64> {
    let keep = sigma.iter().rposition(|&s| s > 0.0).map_or(0, |i| i + 1);
    if keep == 0 {
        return DMatrix::zeros(u.nrows(), v_t.ncols());
    }
    let mut us = u.columns(0, keep).into_owned();
    for (j, &s) in sigma[..keep].iter().enumerate() {
        us.column_mut(j).scale_mut(s);
    }
    us * v_t.rows(0, keep)
}

/// Singular value thresholding `U SR_tau(Sigma) V^T`.
pub fn svt(y: &DMatrix<f64>, tau: f64) -> Result<DMatrix<f64>> {
    check_tau(tau)?;
    check_finite(y)?;
    if y.is_empty() {
        return Ok(y.clone());
    }
    let svd = linalg::svd(y)?;
    let shrunk: Vec<f64> = svd.singular_values.iter().map(|&v| (v - tau).max(0.0)).collect();
    Ok(rebuild(&svd.u, &shrunk, &svd.v_t))
}

/// Result of the scalar p-type fixed-point iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShrinkOutcome {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Iterates `s <- max(sigma - f'(s) tau, 0)` from `s = sigma`.
pub fn ptype_shrink(sigma: f64, tau: f64, params: &PTypeParams) -> ShrinkOutcome {
    let mut s = sigma;
    for it in 1..=params.inner_max_iter {
        let next = (sigma - params.derivative(s) * tau).max(0.0);
        let step = (next - s).abs();
        s = next;
        if step <= params.inner_tol || s == 0.0 {
            return ShrinkOutcome {
                value: s,
                iterations: it,
                converged: true,
            };
        }
    }
    ShrinkOutcome {
        value: s,
        iterations: params.inner_max_iter,
        converged: false,
    }
}

/// p-type singular value shrinkage. If any singular value's inner iteration
/// fails to converge, the error carries the matrix rebuilt from the last iterates.
pub fn ptype_svt(y: &DMatrix<f64>, tau: f64, params: &PTypeParams) -> Result<DMatrix<f64>> {
    check_tau(tau)?;
    params.validate()?;
    check_finite(y)?;
    if y.is_empty() || tau == 0.0 {
        return Ok(y.clone());
    }
    let svd = linalg::svd(y)?;
    let mut failed = 0;
    let shrunk: Vec<f64> = svd
        .singular_values
        .iter()
        .map(|&v| {
            let out = ptype_shrink(v, tau, params);
            if !out.converged {
                failed += 1;
            }
            out.value
        })
        .collect();
    let rebuilt = rebuild(&svd.u, &shrunk, &svd.v_t);
    if failed > 0 {
        return Err(Error::NotConverged {
            iterations: params.inner_max_iter,
            last: Box::new(rebuilt),
        });
    }
    Ok(rebuilt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, m: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, m, |_, _| StandardNormal.sample(&mut rng))
    }

    fn singular_values(y: &DMatrix<f64>) -> Vec<f64> {
        crate::linalg::singular_values(y).unwrap()
    }

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(soft_threshold(5.0, 2.0).unwrap(), 3.0);
        assert_eq!(soft_threshold(-1.0, 2.0).unwrap(), 0.0);
        assert_eq!(soft_threshold(-4.5, 2.0).unwrap(), -2.5);
        assert_eq!(soft_threshold(0.37, 0.0).unwrap(), 0.37);
        assert!(matches!(soft_threshold(1.0, -0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn svt_diagonal() {
        let y = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 0.5]));
        let out = svt(&y, 1.0).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]);
        assert!((out - expect).amax() < 1e-14);
    }

    #[test]
    fn svt_zero_threshold_is_identity() {
        let y = gaussian(7, 4, 1);
        assert!((svt(&y, 0.0).unwrap() - &y).amax() < 1e-12);
    }

    #[test]
    fn svt_rejects_non_finite() {
        let mut y = gaussian(3, 3, 2);
        y[(1, 1)] = f64::NAN;
        assert!(svt(&y, 1.0).is_err());
    }

    #[test]
    fn ptype_scalar_iterates() {
        // Scalar oracle written out by hand: f'(t) = 2/(1+t)^2 for p = 1.
        let f = |t: f64| 3.0 - 2.0 / ((1.0 + t) * (1.0 + t));
        let s1 = f(3.0);
        let s2 = f(s1);
        assert!((s1 - 2.875).abs() < 1e-15);
        assert!((s2 - 2.866_805_411_030_177).abs() < 1e-12);
        let mut s = 3.0;
        for _ in 0..200 {
            s = f(s);
        }
        let params = PTypeParams {
            p: 1.0,
            inner_tol: 1e-12,
            inner_max_iter: 100,
        };
        let out = ptype_shrink(3.0, 1.0, &params);
        assert!(out.converged);
        assert!((out.value - s).abs() < 1e-11);
        assert!((out.value - 2.8662).abs() < 1e-3);
    }

    #[test]
    fn ptype_zero_tau_is_identity() {
        let y = gaussian(5, 6, 3);
        for p in [0.01, 1.0, 100.0] {
            let params = PTypeParams {
                p,
                ..Default::default()
            };
            assert!((ptype_svt(&y, 0.0, &params).unwrap() - &y).amax() < 1e-12);
        }
    }

    #[test]
    fn ptype_large_p_matches_svt() {
        let q = gaussian(10, 10, 5).qr().q();
        let r = gaussian(10, 10, 6).qr().q();
        let sig: Vec<f64> = (0..10).map(|i| 50.0 + 10.0 * i as f64).collect();
        let y = &q * DMatrix::from_diagonal(&DVector::from_vec(sig)) * r.transpose();
        let params = PTypeParams {
            p: 1e6,
            ..Default::default()
        };
        let a = ptype_svt(&y, 1.0, &params).unwrap();
        let b = svt(&y, 1.0).unwrap();
        assert!((&a - &b).norm() / b.norm() <= 1e-4);
    }

    #[test]
    fn ptype_reports_non_convergence_with_last_iterate() {
        let params = PTypeParams {
            p: 1.0,
            inner_tol: 1e-300,
            inner_max_iter: 2,
        };
        let y = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 2.5]));
        match ptype_svt(&y, 1.0, &params) {
            Err(Error::NotConverged { iterations, last }) => {
                assert_eq!(iterations, 2);
                assert!((last[(0, 0)] - 2.866_805_411_030_177).abs() < 1e-12);
            }
            other => panic!("expected NotConverged, got {other:?}"),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn soft_threshold_nonexpansive(a in -1e3f64..1e3, b in -1e3f64..1e3, tau in 0.0f64..100.0) {
            prop_assert!((shrink(a, tau) - shrink(b, tau)).abs() <= (a - b).abs() + 1e-12);
        }

        #[test]
        fn svt_singular_values_are_shrunk(seed in any::<u64>(), n in 1usize..40, m in 1usize..40, tau in 0.0f64..3.0) {
            let y = gaussian(n, m, seed);
            let before = singular_values(&y);
            let after = singular_values(&svt(&y, tau).unwrap());
            for (b, a) in before.iter().zip(&after) {
                prop_assert!((a - (b - tau).max(0.0)).abs() <= 1e-9 * (1.0 + b));
            }
        }

        #[test]
        fn ptype_never_increases_singular_values(seed in any::<u64>(), n in 1usize..20, m in 1usize..20, tau in 0.0f64..2.0, p in 0.01f64..10.0) {
            let y = gaussian(n, m, seed);
            let params = PTypeParams { p, inner_tol: 1e-10, inner_max_iter: 10_000 };
            let before = singular_values(&y);
            let after = singular_values(&ptype_svt(&y, tau, &params).unwrap());
            let fmax = params.derivative(0.0);
            for (b, a) in before.iter().zip(&after) {
                prop_assert!(*a <= b + 1e-9);
                prop_assert!(*a >= (b - tau * fmax).max(0.0) - 1e-9);
            }
        }

        #[test]
        fn scalar_iteration_is_monotone(sigma in 0.0f64..10.0, tau in 0.0f64..5.0, p in 0.01f64..10.0) {
            let params = PTypeParams { p, inner_tol: 1e-12, inner_max_iter: 1 };
            let mut prev = sigma;
            let mut s = sigma;
            for _ in 0..50 {
                s = (sigma - params.derivative(s) * tau).max(0.0);
                prop_assert!(s <= prev + 1e-15);
                prev = s;
            }
        }
    }
}
