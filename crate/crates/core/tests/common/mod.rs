#![allow(dead_code)]

use lsdms::dictionary::{train_nmf, SpeechDictionary};
use lsdms::pipeline::{training_matrix, PipelineConfig};
use lsdms::signal::AudioClip;
use lsdms::synth;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

pub fn gaussian(n: usize, m: usize, seed: u64) -> DMatrix<f64> {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(n, m, |_, _| StandardNormal.sample(&mut rng))
}

pub fn uniform(n: usize, m: usize, lo: f64, hi: f64, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(n, m, |_, _| rng.random_range(lo..hi))
}

/// One-sided Jacobi SVD (Hestenes). Returns `(U, σ, Vᵀ)` thin, descending.
pub fn jacobi_svd(a: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    if a.nrows() < a.ncols() {
        let (u, s, vt) = jacobi_svd(&a.transpose());
        return (vt.transpose(), s, u.transpose());
    }
    let (n, m) = a.shape();
    let mut w = a.clone();
    let mut v = DMatrix::<f64>::identity(m, m);
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for p in 0..m {
            for q in p + 1..m {
                let alpha: f64 = w.column(p).norm_squared();
                let beta: f64 = w.column(q).norm_squared();
                let gamma: f64 = w.column(p).dot(&w.column(q));
                if gamma == 0.0 {
                    continue;
                }
                off = off.max(gamma.abs() / (alpha * beta).sqrt().max(f64::MIN_POSITIVE));
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..n {
                    let (x, y) = (w[(i, p)], w[(i, q)]);
                    w[(i, p)] = c * x - s * y;
                    w[(i, q)] = s * x + c * y;
                }
                for i in 0..m {
                    let (x, y) = (v[(i, p)], v[(i, q)]);
                    v[(i, p)] = c * x - s * y;
                    v[(i, q)] = s * x + c * y;
                }
            }
        }
        if off < 1e-15 {
            break;
        }
    }
    let mut order: Vec<usize> = (0..m).collect();
    let norms: Vec<f64> = (0..m).map(|j| w.column(j).norm()).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let mut u = DMatrix::zeros(n, m);
    let mut vt = DMatrix::zeros(m, m);
    let mut s = Vec::with_capacity(m);
    for (k, &j) in order.iter().enumerate() {
        let sigma = norms[j];
        s.push(sigma);
        if sigma > 0.0 {
            u.set_column(k, &(w.column(j) / sigma));
        }
        vt.set_row(k, &v.column(j).transpose());
    }
    (u, s, vt)
}

pub fn rebuild(u: &DMatrix<f64>, s: &[f64], vt: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(u.nrows(), vt.ncols());
    for (k, &sigma) in s.iter().enumerate() {
        if sigma != 0.0 {
            out += u.column(k) * vt.row(k) * sigma;
        }
    }
    out
}

pub fn svt_oracle(y: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    let (u, s, vt) = jacobi_svd(y);
    let shrunk: Vec<f64> = s.iter().map(|&v| (v - tau).max(0.0)).collect();
    rebuild(&u, &shrunk, &vt)
}

/// Largest root in `[0, σ]` of `x − σ + τ p(1+p)/(p+x)²`, or 0 if there is
/// none. Found by a downward scan for the first sign change, then bisection.
pub fn ptype_scalar_oracle(sigma: f64, tau: f64, p: f64) -> f64 {
    let g = |x: f64| x - sigma + tau * p * (1.0 + p) / ((p + x) * (p + x));
    if sigma <= 0.0 {
        return 0.0;
    }
    let steps = 20_000;
    let h = sigma / steps as f64;
    let mut hi = sigma;
    for i in 1..=steps {
        let lo = sigma - i as f64 * h;
        if g(lo) <= 0.0 {
            let (mut a, mut b) = (lo, hi);
            for _ in 0..200 {
                let mid = 0.5 * (a + b);
                if g(mid) <= 0.0 {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            return 0.5 * (a + b);
        }
        hi = lo;
    }
    0.0
}

pub fn ptype_svt_oracle(y: &DMatrix<f64>, tau: f64, p: f64) -> DMatrix<f64> {
    let (u, s, vt) = jacobi_svd(y);
    let shrunk: Vec<f64> = s.iter().map(|&v| ptype_scalar_oracle(v, tau, p)).collect();
    rebuild(&u, &shrunk, &vt)
}

/// Synthetic "speech" clips of `seconds` each, seeded independently.
pub fn speech_clips(seed: u64, count: usize, seconds: f64) -> Vec<AudioClip> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| synth::speech_like(&mut rng, seconds)).collect()
}

/// Dictionary trained on synthetic speech with the pipeline defaults.
pub fn trained_dictionary(seed: u64, clips: usize) -> (SpeechDictionary, Vec<f64>) {
    let cfg = PipelineConfig::default();
    let x = training_matrix(&speech_clips(seed, clips, 2.0), &cfg).unwrap();
    let out = train_nmf(&x, cfg.atoms, cfg.nmf_iters, seed).unwrap();
    (out.dictionary, out.objective)
}

pub fn white(seed: u64, len: usize) -> AudioClip {
    synth::white_noise(&mut ChaCha8Rng::seed_from_u64(seed), len, 1.0)
}
