mod common;

use common::*;
use lsdms::dictionary::SpeechDictionary;
use lsdms::lsd::{self, SolverConfig, Weight};
use lsdms::prox::{ptype_svt, svt, PTypeParams};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn nuclear(m: &DMatrix<f64>) -> f64 {
    jacobi_svd(m).1.iter().sum()
}

/// `‖Y − L‖₁ + λ‖L‖*`, or `None` when `Y − L` has a negative entry.
fn rpca_objective(y: &DMatrix<f64>, l: &DMatrix<f64>, lambda: f64) -> Option<f64> {
    let s = y - l;
    if s.iter().any(|&v| v < -1e-9) {
        return None;
    }
    Some(s.iter().map(|v| v.abs()).sum::<f64>() + lambda * nuclear(l))
}

/// Rank-one least-squares fit of `y` ignoring the entries in `omega`
/// (alternating least squares started from the leading singular pair).
fn rank_one_fit_off(y: &DMatrix<f64>, omega: &[(usize, usize)]) -> DMatrix<f64> {
    let (n, m) = y.shape();
    let keep = |i: usize, j: usize| !omega.contains(&(i, j));
    let (u0, s0, vt0) = jacobi_svd(y);
    let mut u: Vec<f64> = (0..n).map(|i| u0[(i, 0)] * s0[0].sqrt()).collect();
    let mut v: Vec<f64> = (0..m).map(|j| vt0[(0, j)] * s0[0].sqrt()).collect();
    for _ in 0..2000 {
        for i in 0..n {
            let (num, den) = (0..m)
                .filter(|&j| keep(i, j))
                .fold((0.0, 0.0), |(a, b), j| (a + y[(i, j)] * v[j], b + v[j] * v[j]));
            u[i] = if den > 0.0 { num / den } else { 0.0 };
        }
        for j in 0..m {
            let (num, den) = (0..n)
                .filter(|&i| keep(i, j))
                .fold((0.0, 0.0), |(a, b), i| (a + y[(i, j)] * u[i], b + u[i] * u[i]));
            v[j] = if den > 0.0 { num / den } else { 0.0 };
        }
    }
    DMatrix::from_fn(n, m, |i, j| u[i] * v[j])
}

/// Best objective over every sparse support of size at most 2: the low-rank
/// part is the rank-one least-squares fit off the support.
fn brute_force_rpca(y: &DMatrix<f64>, lambda: f64) -> f64 {
    let cells: Vec<(usize, usize)> = (0..y.nrows()).flat_map(|i| (0..y.ncols()).map(move |j| (i, j))).collect();
    let mut best = rpca_objective(y, &DMatrix::zeros(y.nrows(), y.ncols()), lambda).unwrap();
    let mut consider = |omega: &[(usize, usize)]| {
        if let Some(v) = rpca_objective(y, &rank_one_fit_off(y, omega), lambda) {
            best = best.min(v);
        }
    };
    consider(&[]);
    for a in 0..cells.len() {
        consider(&[cells[a]]);
        for b in a + 1..cells.len() {
            consider(&[cells[a], cells[b]]);
        }
    }
    best
}

#[test]
fn rpca_matches_exhaustive_support_search_on_6x6() {
    // Default weight √max(n, m); the nuclear norm carries the weight here.
    let lambda = Weight::Scaled(1.0).resolve(6, 6);
    for seed in 0..4u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let u = DMatrix::from_fn(6, 1, |_, _| rng.random_range(0.5..1.5));
        let v = DMatrix::from_fn(1, 6, |_, _| rng.random_range(0.5..1.5));
        let mut y = &u * &v;
        let first = (rng.random_range(0..6), rng.random_range(0..6));
        let mut second = first;
        while second == first {
            second = (rng.random_range(0..6), rng.random_range(0..6));
        }
        y[first] += 3.0;
        y[second] += 2.0;

        let cfg = SolverConfig {
            lambda_ld: Weight::Fixed(lambda),
            eps: 1e-9,
            max_iter: 2000,
            ..SolverConfig::default()
        };
        let res = lsd::solve_rpca_details(&y, &cfg).unwrap();
        assert!(res.converged, "seed {seed}: not converged");
        let solver = res.s.iter().map(|v| v.abs()).sum::<f64>() + lambda * nuclear(&res.l_lowrank);
        let brute = brute_force_rpca(&y, lambda);
        assert!(
            (solver - brute).abs() <= 1e-3,
            "seed {seed}: solver {solver} vs exhaustive {brute}"
        );
    }
}

#[test]
fn svt_and_ptype_match_jacobi_oracle_on_wide_and_tall() {
    let params = PTypeParams {
        p: 0.5,
        inner_tol: 1e-14,
        inner_max_iter: 10_000,
    };
    for (n, m) in [(7, 19), (19, 7), (16, 16), (1, 9)] {
        let y = gaussian(n, m, (n * 100 + m) as u64);
        let smax = jacobi_svd(&y).1[0];
        for frac in [0.0, 0.1, 0.5, 1.2] {
            let tau = frac * smax;
            assert!((svt(&y, tau).unwrap() - svt_oracle(&y, tau)).amax() <= 1e-10 * smax.max(1.0));
            let got = ptype_svt(&y, tau, &params).unwrap();
            assert!((got - ptype_svt_oracle(&y, tau, params.p)).amax() <= 1e-9 * smax.max(1.0));
        }
    }
}

#[test]
fn tlsd_is_scale_equivariant_in_the_data() {
    // ‖S‖₁ + λ‖L‖* is 1-homogeneous and ρ0 scales with 1/‖Y‖₂, so the ALM
    // path scales with the data. The p-type penalty is not homogeneous.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let d = SpeechDictionary::from_unnormalized(DMatrix::from_fn(20, 8, |_, _| rng.random::<f64>()), "").unwrap();
    let y = d.atoms() * uniform(8, 30, 0.0, 1.0, 10) + uniform(20, 1, 0.0, 0.2, 11) * DMatrix::from_element(1, 30, 1.0);
    let c = 3.5;
    let base = SolverConfig {
        lambda_le1: Weight::Scaled(5.0),
        lambda_le2: Weight::Scaled(1.0),
        eps: 1e-10,
        max_iter: 2000,
        ..SolverConfig::default()
    };
    let a = lsd::solve_tlsd(&y, &d, &base).unwrap();
    let b = lsd::solve_tlsd(&(&y * c), &d, &base).unwrap();
    assert!(a.converged && b.converged);
    assert!(a.s.amax() > 0.1);
    assert!(rel(&(a.s * c), &b.s) < 1e-6);
    assert!(rel(&(a.l_lowrank * c), &b.l_lowrank) < 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn svt_matches_oracle(seed in any::<u64>(), n in 1usize..12, m in 1usize..12, frac in 0.0f64..1.5) {
        let y = gaussian(n, m, seed);
        let tau = frac * jacobi_svd(&y).1[0];
        prop_assert!((svt(&y, tau).unwrap() - svt_oracle(&y, tau)).amax() <= 1e-10 * y.amax().max(1.0));
    }

    #[test]
    fn rpca_output_is_feasible_and_nonnegative(seed in any::<u64>()) {
        let y = uniform(10, 14, 0.0, 1.0, seed);
        let res = lsd::solve_rpca_details(&y, &SolverConfig::default()).unwrap();
        prop_assert!(res.s.iter().all(|&v| v >= 0.0));
        if res.converged {
            prop_assert!((&y - &res.s - &res.l_lowrank).amax() <= 1e-6);
        }
    }
}
