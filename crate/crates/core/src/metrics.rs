//! Objective quality measures: segmental SNR, two-source BSS-Eval
//! decomposition (SDR/SIR/SAR) and STOI.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::signal::AudioClip;

pub const SEGSNR_FLOOR_DB: f64 = -10.0;
pub const SEGSNR_CEIL_DB: f64 = 35.0;
pub const SEGSNR_FRAME: usize = 512;

const SILENT_FRAME_ENERGY: f64 = 1e-10;

fn check_pair(a: &AudioClip, b: &AudioClip) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("length {} vs {}", a.len(), b.len())));
    }
    if a.sample_rate != b.sample_rate {
        return Err(Error::Shape(format!(
            "sample rate {} vs {}",
            a.sample_rate, b.sample_rate
        )));
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean per-frame SNR over non-overlapping full frames, each clamped to
/// [-10, 35] dB; frames where the clean signal is silent are skipped.
pub fn segsnr(clean: &AudioClip, estimate: &AudioClip, frame: usize) -> Result<f64> {
    check_pair(clean, estimate)?;
    if frame == 0 {
        return Err(Error::Domain("frame length must be positive".into()));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (x, y) in clean.samples.chunks_exact(frame).zip(estimate.samples.chunks_exact(frame)) {
        let signal = dot(x, x);
        if signal < SILENT_FRAME_ENERGY {
            continue;
        }
        let err: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        let db = if err == 0.0 {
            SEGSNR_CEIL_DB
        } else {
            (10.0 * (signal / err).log10()).clamp(SEGSNR_FLOOR_DB, SEGSNR_CEIL_DB)
        };
        total += db;
        count += 1;
    }
    if count == 0 {
        return Err(Error::Degenerate("no non-silent frame in the clean signal".into()));
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BssEval {
    pub sdr_db: f64,
    pub sir_db: f64,
    pub sar_db: f64,
}

/// Components of `estimate = s_target + e_interf + e_artif`.
#[derive(Debug, Clone, PartialEq)]
pub struct BssDecomposition {
    pub s_target: Vec<f64>,
    pub e_interf: Vec<f64>,
    pub e_artif: Vec<f64>,
}

fn ratio_db(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (num / den).log10()
    }
}

/// Projection decomposition onto `span{s}` and `span{s, n}`.
pub fn bss_decompose(clean: &AudioClip, noise: &AudioClip, estimate: &AudioClip) -> Result<BssDecomposition> {
    check_pair(clean, estimate)?;
    check_pair(clean, noise)?;
    let s = &clean.samples;
    let n = &noise.samples;
    let e = &estimate.samples;
    let ss = dot(s, s);
    if ss == 0.0 {
        return Err(Error::Degenerate("clean signal is zero".into()));
    }
    let es = dot(e, s);
    let s_target: Vec<f64> = s.iter().map(|v| es / ss * v).collect();
    let resid: Vec<f64> = e.iter().zip(&s_target).map(|(x, t)| x - t).collect();

    // Noise component orthogonal to s; the interference is the projection onto it.
    let ns = dot(n, s);
    let n_perp: Vec<f64> = n.iter().zip(s).map(|(a, b)| a - ns / ss * b).collect();
    let pp = dot(&n_perp, &n_perp);
    let e_interf: Vec<f64> = if pp > 0.0 && pp > 1e-24 * dot(n, n) {
        let c = dot(&resid, &n_perp) / pp;
        n_perp.iter().map(|v| c * v).collect()
    } else {
        vec![0.0; s.len()]
    };
    let e_artif: Vec<f64> = resid.iter().zip(&e_interf).map(|(r, i)| r - i).collect();
    Ok(BssDecomposition {
        s_target,
        e_interf,
        e_artif,
    })
}

pub fn bss_eval(clean: &AudioClip, noise: &AudioClip, estimate: &AudioClip) -> Result<BssEval> {
    let dec = bss_decompose(clean, noise, estimate)?;
    let t = dot(&dec.s_target, &dec.s_target);
    let i = dot(&dec.e_interf, &dec.e_interf);
    let a = dot(&dec.e_artif, &dec.e_artif);
    let ia: Vec<f64> = dec.e_interf.iter().zip(&dec.e_artif).map(|(x, y)| x + y).collect();
    let ti: Vec<f64> = dec.s_target.iter().zip(&dec.e_interf).map(|(x, y)| x + y).collect();
    Ok(BssEval {
        sdr_db: ratio_db(t, dot(&ia, &ia)),
        sir_db: ratio_db(t, i),
        sar_db: ratio_db(dot(&ti, &ti), a),
    })
}

// STOI constants: 25.6 ms frames at 50% overlap, 15 third-octave bands from
// 150 Hz, 30-frame (384 ms) segments, -15 dB clipping, 40 dB silence range.
const STOI_FS: f64 = 16_000.0;
const STOI_FRAME: usize = 410;
const STOI_HOP: usize = 205;
const STOI_NFFT: usize = 1024;
const STOI_BANDS: usize = 15;
const STOI_MIN_FREQ: f64 = 150.0;
const STOI_SEGMENT: usize = 30;
const STOI_BETA_DB: f64 = -15.0;
const STOI_DYN_RANGE_DB: f64 = 40.0;
const STOI_EPS: f64 = f64::EPSILON;

/// Minimum input length: one full 30-frame analysis segment.
pub const STOI_MIN_SAMPLES: usize = (STOI_SEGMENT - 1) * STOI_HOP + STOI_FRAME;

/// FFT-bin ranges `[lo, hi)` of the third-octave bands.
fn third_octave_bins() -> Vec<(usize, usize)> {
    let bins = STOI_NFFT / 2 + 1;
    let freqs: Vec<f64> = (0..bins).map(|k| k as f64 * STOI_FS / STOI_NFFT as f64).collect();
    let nearest = |f: f64| {
        freqs
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - f).abs().total_cmp(&(b.1 - f).abs()))
            .map(|(i, _)| i)
            .unwrap_or(0)
    };
    (0..STOI_BANDS)
        .map(|i| {
            let cf = STOI_MIN_FREQ * 2f64.powf(i as f64 / 3.0);
            (nearest(cf * 2f64.powf(-1.0 / 6.0)), nearest(cf * 2f64.powf(1.0 / 6.0)))
        })
        .collect()
}

fn frame_starts(len: usize) -> Vec<usize> {
    if len < STOI_FRAME {
        return Vec::new();
    }
    (0..=(len - STOI_FRAME) / STOI_HOP).map(|t| t * STOI_HOP).collect()
}

fn band_envelopes(x: &[f64], starts: &[usize], window: &[f64], bands: &[(usize, usize)]) -> Vec<Vec<f64>> {
    let fft = FftPlanner::<f64>::new().plan_fft_forward(STOI_NFFT);
    let mut out = vec![Vec::with_capacity(starts.len()); bands.len()];
    let mut buf = vec![Complex64::new(0.0, 0.0); STOI_NFFT];
    for &st in starts {
        buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        for i in 0..STOI_FRAME {
            buf[i].re = x[st + i] * window[i];
        }
        fft.process(&mut buf);
        for (b, &(lo, hi)) in bands.iter().enumerate() {
            let e: f64 = buf[lo..hi].iter().map(|c| c.norm_sqr()).sum();
            out[b].push(e.sqrt());
        }
    }
    out
}

/// Short-time objective intelligibility of `estimate` against `clean`, in [0, 1].
pub fn stoi(clean: &AudioClip, estimate: &AudioClip) -> Result<f64> {
    check_pair(clean, estimate)?;
    if clean.len() < STOI_MIN_SAMPLES {
        return Err(Error::InputTooShort {
            len: clean.len(),
            needed: STOI_MIN_SAMPLES,
        });
    }
    // Symmetric Hann without its zero endpoints.
    let window: Vec<f64> = (1..=STOI_FRAME)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (STOI_FRAME + 1) as f64).cos())
        .collect();

    let all = frame_starts(clean.len());
    let energy_db: Vec<f64> = all
        .iter()
        .map(|&st| {
            let e: f64 = (0..STOI_FRAME).map(|i| (clean.samples[st + i] * window[i]).powi(2)).sum();
            20.0 * (e.sqrt() + STOI_EPS).log10()
        })
        .collect();
    let max_db = energy_db.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let starts: Vec<usize> = all
        .iter()
        .zip(&energy_db)
        .filter(|(_, &e)| e > max_db - STOI_DYN_RANGE_DB)
        .map(|(&s, _)| s)
        .collect();
    if starts.len() < STOI_SEGMENT {
        return Err(Error::InputTooShort {
            len: clean.len(),
            needed: STOI_MIN_SAMPLES,
        });
    }

    let bands = third_octave_bins();
    let x = band_envelopes(&clean.samples, &starts, &window, &bands);
    let y = band_envelopes(&estimate.samples, &starts, &window, &bands);
    let clip = 1.0 + 10f64.powf(-STOI_BETA_DB / 20.0);

    let frames = starts.len();
    let mut total = 0.0;
    let mut count = 0usize;
    for end in STOI_SEGMENT..=frames {
        for b in 0..bands.len() {
            let xs = &x[b][end - STOI_SEGMENT..end];
            let ys = &y[b][end - STOI_SEGMENT..end];
            let alpha = dot(xs, xs).sqrt() / (dot(ys, ys).sqrt() + STOI_EPS);
            let yc: Vec<f64> = ys.iter().zip(xs).map(|(v, u)| (alpha * v).min(clip * u)).collect();
            let xm = xs.iter().sum::<f64>() / STOI_SEGMENT as f64;
            let ym = yc.iter().sum::<f64>() / STOI_SEGMENT as f64;
            let xc: Vec<f64> = xs.iter().map(|v| v - xm).collect();
            let yc: Vec<f64> = yc.iter().map(|v| v - ym).collect();
            let den = dot(&xc, &xc).sqrt() * dot(&yc, &yc).sqrt() + STOI_EPS;
            total += dot(&xc, &yc) / den;
            count += 1;
        }
    }
    Ok((total / count as f64).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub segsnr_db: f64,
    pub sdr_db: f64,
    pub sir_db: f64,
    pub sar_db: f64,
    pub stoi: f64,
}

/// All metrics of `estimate` against the true mixture components.
pub fn evaluate_estimate(clean: &AudioClip, noise: &AudioClip, estimate: &AudioClip) -> Result<EvalReport> {
    let bss = bss_eval(clean, noise, estimate)?;
    Ok(EvalReport {
        segsnr_db: segsnr(clean, estimate, SEGSNR_FRAME)?,
        sdr_db: bss.sdr_db,
        sir_db: bss.sir_db,
        sar_db: bss.sar_db,
        stoi: stoi(clean, estimate)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn clip(v: Vec<f64>) -> AudioClip {
        AudioClip::new(v, 16_000).unwrap()
    }

    fn gauss(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    fn modulated(len: usize, seed: u64) -> Vec<f64> {
        // Noise carrier with a 4 Hz syllable-rate envelope.
        gauss(len, seed)
            .into_iter()
            .enumerate()
            .map(|(t, v)| v * (0.1 + (2.0 * std::f64::consts::PI * 4.0 * t as f64 / 16_000.0).sin().abs()))
            .collect()
    }

    #[test]
    fn segsnr_examples() {
        let x = clip(gauss(4096, 1));
        assert_eq!(segsnr(&x, &x, 512).unwrap(), 35.0);
        let neg = clip(x.samples.iter().map(|v| -v).collect());
        // Sign flip doubles the error: 10 log10(1/4) in every frame.
        assert!((segsnr(&x, &neg, 512).unwrap() - 10.0 * 0.25f64.log10()).abs() < 1e-12);
        let loud = clip(x.samples.iter().map(|v| -10.0 * v).collect());
        assert_eq!(segsnr(&x, &loud, 512).unwrap(), -10.0);
        assert!(segsnr(&x, &clip(vec![0.0; 4095]), 512).is_err());
    }

    #[test]
    fn segsnr_equal_power_noise_is_zero_db() {
        let x = gauss(512 * 8, 2);
        let n = gauss(512 * 8, 3);
        // Rescale noise per frame to the frame's clean energy, then compare
        // with a direct per-frame computation.
        let mut est = Vec::new();
        let mut oracle = 0.0;
        for f in 0..8 {
            let xs = &x[f * 512..(f + 1) * 512];
            let ns = &n[f * 512..(f + 1) * 512];
            let g = (dot(xs, xs) / dot(ns, ns)).sqrt();
            est.extend(xs.iter().zip(ns).map(|(a, b)| a + g * b));
            let e: f64 = ns.iter().map(|b| (g * b).powi(2)).sum();
            oracle += 10.0 * (dot(xs, xs) / e).log10() / 8.0;
        }
        let v = segsnr(&clip(x), &clip(est), 512).unwrap();
        assert!((v - oracle).abs() < 1e-9);
        assert!(v.abs() <= 0.5);
    }

    #[test]
    fn segsnr_skips_silent_frames() {
        let mut x = vec![0.0; 512];
        x.extend(gauss(512, 4));
        let y = x.clone();
        assert_eq!(segsnr(&clip(x), &clip(y), 512).unwrap(), 35.0);
        assert!(segsnr(&clip(vec![0.0; 1024]), &clip(vec![0.0; 1024]), 512).is_err());
    }

    #[test]
    fn bss_perfect_and_half_mix() {
        let s = gauss(1000, 5);
        let mut n = gauss(1000, 6);
        let c = dot(&n, &s) / dot(&s, &s);
        n.iter_mut().zip(&s).for_each(|(v, u)| *v -= c * u);
        let g = (dot(&s, &s) / dot(&n, &n)).sqrt();
        n.iter_mut().for_each(|v| *v *= g);
        let perfect = bss_eval(&clip(s.clone()), &clip(n.clone()), &clip(s.clone())).unwrap();
        assert!(perfect.sdr_db.is_infinite() && perfect.sir_db.is_infinite() && perfect.sar_db.is_infinite());
        let est: Vec<f64> = s.iter().zip(&n).map(|(a, b)| 0.5 * a + 0.5 * b).collect();
        let r = bss_eval(&clip(s), &clip(n), &clip(est)).unwrap();
        assert!(r.sir_db.abs() < 1e-9);
        assert!(r.sar_db.is_infinite() || r.sar_db > 200.0);
    }

    #[test]
    fn bss_zero_clean_is_degenerate() {
        let z = clip(vec![0.0; 10]);
        let n = clip(gauss(10, 7));
        assert!(matches!(bss_eval(&z, &n, &n), Err(Error::Degenerate(_))));
    }

    #[test]
    fn stoi_identity_and_too_short() {
        let x = clip(modulated(16_000, 8));
        assert!((stoi(&x, &x).unwrap() - 1.0).abs() <= 1e-6);
        let short = clip(modulated(6_000, 9));
        assert!(matches!(stoi(&short, &short), Err(Error::InputTooShort { .. })));
    }

    #[test]
    fn stoi_independent_noise_is_low() {
        let x = clip(modulated(32_000, 10));
        for seed in 0..10 {
            let n = clip(gauss(32_000, 100 + seed));
            let v = stoi(&x, &n).unwrap();
            assert!(v <= 0.3, "seed {seed}: {v}");
        }
    }

    #[test]
    fn stoi_increases_with_snr() {
        let s = modulated(32_000, 11);
        let n = gauss(32_000, 12);
        let p = dot(&s, &s) / dot(&n, &n);
        let mix = |snr_db: f64| {
            let g = (p / 10f64.powf(snr_db / 10.0)).sqrt();
            clip(s.iter().zip(&n).map(|(a, b)| a + g * b).collect())
        };
        let x = clip(s.clone());
        assert!(stoi(&x, &mix(-5.0)).unwrap() < stoi(&x, &mix(5.0)).unwrap());
    }

    #[test]
    fn third_octave_bands_are_increasing_and_in_range() {
        let b = third_octave_bins();
        assert_eq!(b.len(), 15);
        assert!(b.iter().all(|(lo, hi)| lo < hi && *hi <= STOI_NFFT / 2 + 1));
        assert!(b.windows(2).all(|w| w[0].0 <= w[1].0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn bss_decomposition_is_exact(seed in any::<u64>(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let s = gauss(300, seed);
            let n = gauss(300, seed ^ 1);
            let r = gauss(300, seed ^ 2);
            let e: Vec<f64> = (0..300).map(|i| a * s[i] + b * n[i] + 0.3 * r[i]).collect();
            let dec = bss_decompose(&clip(s.clone()), &clip(n.clone()), &clip(e.clone())).unwrap();
            for i in 0..300 {
                prop_assert!((dec.s_target[i] + dec.e_interf[i] + dec.e_artif[i] - e[i]).abs() <= 1e-12);
            }
            // SDR from the definition (distortion = estimate − target) vs from the parts.
            let m = bss_eval(&clip(s), &clip(n), &clip(e.clone())).unwrap();
            let dist: Vec<f64> = e.iter().zip(&dec.s_target).map(|(x, t)| x - t).collect();
            let direct = 10.0 * (dot(&dec.s_target, &dec.s_target) / dot(&dist, &dist)).log10();
            prop_assert!((m.sdr_db - direct).abs() <= 1e-8);
        }

        #[test]
        fn stoi_in_unit_interval(seed in any::<u64>(), g in 0.0f64..3.0) {
            let s = modulated(12_000, seed);
            let n = gauss(12_000, seed ^ 9);
            let e: Vec<f64> = s.iter().zip(&n).map(|(a, b)| a + g * b).collect();
            let v = stoi(&clip(s), &clip(e)).unwrap();
            prop_assert!((0.0..=1.0).contains(&v));
        }

        #[test]
        fn segsnr_within_clamp(seed in any::<u64>(), g in 0.0f64..10.0) {
            let s = gauss(4096, seed);
            let n = gauss(4096, seed ^ 3);
            let e: Vec<f64> = s.iter().zip(&n).map(|(a, b)| a + g * b).collect();
            let v = segsnr(&clip(s), &clip(e), 512).unwrap();
            prop_assert!((SEGSNR_FLOOR_DB..=SEGSNR_CEIL_DB).contains(&v));
        }
    }
}
