//! Synthetic test material: formant-shaped harmonic "speech", babble,
//! white noise and engine hum.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::signal::{AudioClip, SAMPLE_RATE};

/// First three formants (Hz) of a few vowels.
const VOWELS: [[f64; 3]; 7] = [
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [300.0, 870.0, 2240.0],
    [530.0, 1840.0, 2480.0],
    [570.0, 840.0, 2410.0],
    [660.0, 1720.0, 2410.0],
    [490.0, 1350.0, 1690.0],
];
const BANDWIDTHS: [f64; 3] = [90.0, 110.0, 170.0];
const FORMANT_SMOOTHING: usize = 400;
const MAX_HARMONIC_HZ: f64 = 7800.0;

fn fs() -> f64 {
    SAMPLE_RATE as f64
}

fn peak_normalize(x: &mut [f64], peak: f64) {
    let m = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if m > 0.0 {
        x.iter_mut().for_each(|v| *v *= peak / m);
    }
}

/// Zero-padded moving average, window `[i - len/2, i + len/2 - 1]`.
fn moving_average(x: &[f64], len: usize) -> Vec<f64> {
    let mut prefix = vec![0.0; x.len() + 1];
    for (i, v) in x.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v;
    }
    let half = len / 2;
    (0..x.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + len - half).min(x.len());
            (prefix[hi] - prefix[lo]) / len as f64
        })
        .collect()
}

/// Harmonic source with a gliding, vibrato-modulated pitch, shaped by three
/// resonances that move between vowel targets, gated into syllables.
/// Peak-normalized to 0.5.
pub fn speech_like<R: Rng + ?Sized>(rng: &mut R, seconds: f64) -> AudioClip {
    let n = (seconds * fs()) as usize;
    let f0_base = rng.random_range(100.0..200.0);
    let glide_rate = rng.random_range(0.3..1.0);
    let glide_phase = rng.random_range(0.0..6.28);
    let f0: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / fs();
            f0_base
                * (1.0 + 0.15 * (2.0 * PI * glide_rate * t + glide_phase).sin())
                * (1.0 + 0.02 * (2.0 * PI * 5.0 * t).sin())
        })
        .collect();
    let mut phase = Vec::with_capacity(n);
    let mut acc = 0.0;
    for f in &f0 {
        acc += f;
        phase.push(2.0 * PI * acc / fs());
    }

    let mut amp = vec![0.0; n];
    let mut vowel = vec![0usize; n];
    let mut pos = (rng.random_range(0.05..0.15) * fs()) as usize;
    while pos < n {
        let len = (rng.random_range(0.15..0.3) * fs()) as usize;
        let v = rng.random_range(0..VOWELS.len());
        let end = n.min(pos + len);
        let gain = rng.random_range(0.5..1.0);
        for i in pos..end {
            amp[i] = (PI * (i - pos) as f64 / len as f64).sin().sqrt() * gain;
            vowel[i] = v;
        }
        pos = end + (rng.random_range(0.03..0.12) * fs()) as usize;
    }

    let formants: Vec<Vec<f64>> = (0..3)
        .map(|j| {
            let track: Vec<f64> = vowel.iter().map(|&v| VOWELS[v][j]).collect();
            moving_average(&track, FORMANT_SMOOTHING)
        })
        .collect();

    let f0_min = f0.iter().copied().fold(f64::INFINITY, f64::min);
    let harmonics = (7500.0 / f0_min) as usize;
    let mut x = vec![0.0; n];
    for h in 1..=harmonics {
        for i in 0..n {
            let fh = h as f64 * f0[i];
            if fh >= MAX_HARMONIC_HZ {
                continue;
            }
            let mut g = (-fh / 4000.0).exp();
            for j in 0..3 {
                let fc = formants[j][i];
                let q = (fh * fh - fc * fc) / (fh * BANDWIDTHS[j]);
                g /= (1.0 + q * q).sqrt();
            }
            x[i] += g * (h as f64 * phase[i]).sin();
        }
    }
    for (v, a) in x.iter_mut().zip(&amp) {
        *v *= a;
    }
    peak_normalize(&mut x, 0.5);
    AudioClip::new(x, SAMPLE_RATE).expect("synthetic samples are finite")
}

/// Gaussian white noise with standard deviation `std`.
pub fn white_noise<R: Rng + ?Sized>(rng: &mut R, len: usize, std: f64) -> AudioClip {
    let samples = (0..len)
        .map(|_| std * Distribution::<f64>::sample(&StandardNormal, rng))
        .collect::<Vec<f64>>();
    AudioClip::new(samples, SAMPLE_RATE).expect("finite noise")
}

/// Sum of `talkers` independent speech-like voices, peak-normalized to 0.5.
pub fn babble<R: Rng + ?Sized>(rng: &mut R, seconds: f64, talkers: usize) -> AudioClip {
    let n = (seconds * fs()) as usize;
    let mut x = vec![0.0; n];
    for _ in 0..talkers {
        let v = speech_like(rng, seconds);
        for (a, b) in x.iter_mut().zip(&v.samples) {
            *a += b;
        }
    }
    peak_normalize(&mut x, 0.5);
    AudioClip::new(x, SAMPLE_RATE).expect("finite babble")
}

/// Stationary low-pitched harmonic drone with a fixed spectral shape, plus a
/// little broadband noise. Peak-normalized to 0.5.
pub fn engine_hum<R: Rng + ?Sized>(rng: &mut R, seconds: f64) -> AudioClip {
    let n = (seconds * fs()) as usize;
    let f0 = rng.random_range(28.0..40.0);
    let harmonics = (4000.0 / f0) as usize;
    let phases: Vec<f64> = (0..harmonics).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let mut x = vec![0.0; n];
    for (h, ph) in phases.iter().enumerate() {
        let fh = (h + 1) as f64 * f0;
        let g = (-fh / 300.0).exp() + 0.05 * (-fh / 1500.0).exp();
        for (i, v) in x.iter_mut().enumerate() {
            *v += g * (2.0 * PI * fh * i as f64 / fs() + ph).sin();
        }
    }
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    for v in x.iter_mut() {
        *v += 0.01 * rms * Distribution::<f64>::sample(&StandardNormal, rng);
    }
    peak_normalize(&mut x, 0.5);
    AudioClip::new(x, SAMPLE_RATE).expect("finite hum")
}
