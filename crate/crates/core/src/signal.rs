//! Waveform container, STFT analysis and overlap-add synthesis, WAV I/O.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::DMatrix;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;
pub const FRAME_LEN: usize = 512;

/// Floor applied to magnitudes before any logarithm.
pub const MAG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Domain("audio clip has no samples".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Domain(format!("non-finite sample at index {i}")));
        }
        if sample_rate == 0 {
            return Err(Error::Domain("sample rate must be positive".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Periodic Hann window.
pub fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / len as f64).cos())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StftConfig {
    pub frame_len: usize,
    pub hop: usize,
    pub window: Vec<f64>,
}

impl StftConfig {
    /// Periodic Hann analysis at 50% overlap.
    pub fn hann(frame_len: usize) -> Result<Self> {
        if frame_len < 2 || frame_len % 2 != 0 {
            return Err(Error::Domain(format!(
                "frame length must be even and >= 2, got {frame_len}"
            )));
        }
        Ok(Self {
            frame_len,
            hop: frame_len / 2,
            window: hann(frame_len),
        })
    }

    pub fn bins(&self) -> usize {
        self.frame_len / 2 + 1
    }

    pub fn frames_for(&self, len: usize) -> usize {
        if len < self.frame_len {
            0
        } else {
            (len - self.frame_len) / self.hop + 1
        }
    }

    pub fn synthesis_len(&self, frames: usize) -> usize {
        if frames == 0 {
            0
        } else {
            (frames - 1) * self.hop + self.frame_len
        }
    }

    fn validate(&self) -> Result<()> {
        if self.window.len() != self.frame_len {
            return Err(Error::Shape(format!(
                "window length {} != frame length {}",
                self.window.len(),
                self.frame_len
            )));
        }
        if self.hop == 0 || self.hop > self.frame_len {
            return Err(Error::Domain(format!("invalid hop {}", self.hop)));
        }
        Ok(())
    }
}

impl Default for StftConfig {
    fn default() -> Self {
        Self::hann(FRAME_LEN).expect("512 is a valid frame length")
    }
}

/// One-sided magnitude/phase spectrogram, bins × frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub magnitude: DMatrix<f64>,
    pub phase: DMatrix<f64>,
    pub config: StftConfig,
    pub sample_rate: u32,
}

impl Spectrogram {
    pub fn bins(&self) -> usize {
        self.magnitude.nrows()
    }

    pub fn frames(&self) -> usize {
        self.magnitude.ncols()
    }
}

pub fn stft(clip: &AudioClip, cfg: &StftConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    let len = clip.samples.len();
    if len < cfg.frame_len {
        return Err(Error::InputTooShort {
            len,
            needed: cfg.frame_len,
        });
    }
    let n = cfg.frame_len;
    let bins = cfg.bins();
    let frames = cfg.frames_for(len);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);

    let mut magnitude = DMatrix::zeros(bins, frames);
    let mut phase = DMatrix::zeros(bins, frames);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for t in 0..frames {
        let start = t * cfg.hop;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex64::new(clip.samples[start + i] * cfg.window[i], 0.0);
        }
        fft.process(&mut buf);
        for f in 0..bins {
            magnitude[(f, t)] = buf[f].norm();
            phase[(f, t)] = buf[f].arg();
        }
    }
    Ok(Spectrogram {
        magnitude,
        phase,
        config: cfg.clone(),
        sample_rate: clip.sample_rate,
    })
}

/// Overlap-add synthesis normalized by the summed analysis window.
///
/// Where the windows sum to (numerically) zero, the output is left at zero.
pub fn istft(spec: &Spectrogram) -> Result<AudioClip> {
    let cfg = &spec.config;
    cfg.validate()?;
    let bins = cfg.bins();
    if spec.magnitude.nrows() != bins || spec.phase.shape() != spec.magnitude.shape() {
        return Err(Error::Shape(format!(
            "spectrogram {:?} / phase {:?} inconsistent with {} bins",
            spec.magnitude.shape(),
            spec.phase.shape(),
            bins
        )));
    }
    let frames = spec.frames();
    if frames == 0 {
        return Err(Error::Shape("spectrogram has no frames".into()));
    }
    let n = cfg.frame_len;
    let out_len = cfg.synthesis_len(frames);
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n);

    let mut out = vec![0.0; out_len];
    let mut wsum = vec![0.0; out_len];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for t in 0..frames {
        for f in 0..bins {
            buf[f] = Complex64::from_polar(spec.magnitude[(f, t)], spec.phase[(f, t)]);
        }
        // Hermitian completion; DC and Nyquist must be real for a real frame.
        buf[0].im = 0.0;
        buf[n / 2].im = 0.0;
        for f in 1..n / 2 {
            buf[n - f] = buf[f].conj();
        }
        ifft.process(&mut buf);
        let start = t * cfg.hop;
        for i in 0..n {
            out[start + i] += buf[i].re / n as f64;
            wsum[start + i] += cfg.window[i];
        }
    }
    for (o, w) in out.iter_mut().zip(&wsum) {
        if *w > 1e-8 {
            *o /= w;
        } else {
            *o = 0.0;
        }
    }
    AudioClip::new(out, spec.sample_rate)
}

/// Attach an estimated magnitude to the phase of another spectrogram.
pub fn recombine(mag_estimate: &DMatrix<f64>, phase_source: &Spectrogram) -> Result<Spectrogram> {
    if mag_estimate.shape() != phase_source.magnitude.shape() {
        return Err(Error::Shape(format!(
            "magnitude {:?} vs phase source {:?}",
            mag_estimate.shape(),
            phase_source.magnitude.shape()
        )));
    }
    if let Some(v) = mag_estimate.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::Domain(format!(
            "magnitude estimate must be finite and nonnegative, found {v}"
        )));
    }
    Ok(Spectrogram {
        magnitude: mag_estimate.clone(),
        phase: phase_source.phase.clone(),
        config: phase_source.config.clone(),
        sample_rate: phase_source.sample_rate,
    })
}

/// Entrywise `max(x, MAG_FLOOR)`.
pub fn floor_magnitude(mag: &DMatrix<f64>) -> DMatrix<f64> {
    mag.map(|v| v.max(MAG_FLOOR))
}

/// Reads a PCM WAV file, averaging channels to mono. Only 16 kHz is accepted.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let mut reader = hound::WavReader::open(path.as_ref())?;
    let spec = reader.spec();
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::SampleRate(spec.sample_rate));
    }
    let channels = spec.channels as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Int => {
            let scale = (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()?
        }
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()?,
    };
    let samples: Vec<f64> = interleaved
        .chunks_exact(channels)
        .map(|c| c.iter().sum::<f64>() / channels as f64)
        .collect();
    AudioClip::new(samples, spec.sample_rate)
}

/// Writes mono 16-bit PCM, clipping to [-1, 1].
pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path.as_ref(), spec)?;
    for &s in &clip.samples {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(v)?;
    }
    writer.finalize()?;
    Ok(())
}
