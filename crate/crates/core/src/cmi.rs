//! Cepstral modulation split of a magnitude spectrogram.
//!
//! Each column is liftered in the cepstral domain: `c = DFT(log y)`, the low
//! pseudo-frequencies (`0..=k` and the mirrored last `k` indices) go to the
//! spectral envelope, the remainder to the spectral details. Exponentiating
//! both inverse transforms gives two positive factors whose entrywise product
//! is the input.

use std::sync::Arc;

use nalgebra::DMatrix;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub const DEFAULT_K: usize = 30;

/// Cutoffs in this band give comparable enhancement results.
pub const RECOMMENDED_K: std::ops::RangeInclusive<usize> = 25..=35;

const IMAG_TOL: f64 = 1e-8;

/// Frequency `fs / (2k)` associated with pseudo-frequency cutoff `k`.
pub fn cutoff_to_frequency(k: usize, fs: f64) -> Result<f64> {
    if k == 0 {
        return Err(Error::Domain("cutoff k must be at least 1".into()));
    }
    Ok(fs / (2.0 * k as f64))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CepstralMask {
    pub k: usize,
    pub n: usize,
    pub low_selector: Vec<bool>,
    pub high_selector: Vec<bool>,
}

impl CepstralMask {
    pub fn new(k: usize, n: usize) -> Result<Self> {
        if k == 0 || 2 * k >= n {
            return Err(Error::MaskOverlap { k, n });
        }
        let low_selector: Vec<bool> = (0..n).map(|i| i <= k || i >= n - k).collect();
        let high_selector = low_selector.iter().map(|v| !v).collect();
        Ok(Self {
            k,
            n,
            low_selector,
            high_selector,
        })
    }
}

pub fn build_mask(k: usize, n: usize) -> Result<CepstralMask> {
    CepstralMask::new(k, n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModulationPair {
    pub envelope: DMatrix<f64>,
    pub details: DMatrix<f64>,
    pub k: usize,
}

/// Planned transform for a fixed column length and cutoff.
pub struct CmiTransform {
    mask: CepstralMask,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl CmiTransform {
    pub fn new(n: usize, k: usize) -> Result<Self> {
        let mask = CepstralMask::new(k, n)?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
            mask,
        })
    }

    pub fn mask(&self) -> &CepstralMask {
        &self.mask
    }

    /// Real cepstrum of a positive column (unnormalized forward DFT of its log).
    pub fn cepstrum(&self, column: &[f64]) -> Result<Vec<Complex64>> {
        let n = self.mask.n;
        if column.len() != n {
            return Err(Error::Shape(format!("column length {} != {}", column.len(), n)));
        }
        let mut buf = Vec::with_capacity(n);
        for &v in column {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Domain(format!(
                    "CMI requires finite positive entries, found {v}"
                )));
            }
            buf.push(Complex64::new(v.ln(), 0.0));
        }
        self.forward.process(&mut buf);
        Ok(buf)
    }

    fn lifter(&self, cep: &[Complex64], select: &[bool], out: &mut [f64]) -> Result<()> {
        let n = self.mask.n;
        let mut buf: Vec<Complex64> = cep
            .iter()
            .zip(select)
            .map(|(c, &s)| if s { *c } else { Complex64::new(0.0, 0.0) })
            .collect();
        self.inverse.process(&mut buf);
        for (o, c) in out.iter_mut().zip(&buf) {
            let re = c.re / n as f64;
            let im = c.im / n as f64;
            if im.abs() > IMAG_TOL {
                return Err(Error::Internal(format!(
                    "liftered cepstrum has imaginary residual {im:e}"
                )));
            }
            *o = re.exp();
        }
        Ok(())
    }

    pub fn decompose(&self, mag: &DMatrix<f64>) -> Result<ModulationPair> {
        let (n, m) = mag.shape();
        if n != self.mask.n {
            return Err(Error::Shape(format!(
                "spectrogram has {n} rows, transform expects {}",
                self.mask.n
            )));
        }
        let mut envelope = DMatrix::zeros(n, m);
        let mut details = DMatrix::zeros(n, m);
        for j in 0..m {
            let cep = self.cepstrum(mag.column(j).as_slice())?;
            self.lifter(&cep, &self.mask.low_selector, envelope.column_mut(j).as_mut_slice())?;
            self.lifter(&cep, &self.mask.high_selector, details.column_mut(j).as_mut_slice())?;
        }
        Ok(ModulationPair {
            envelope,
            details,
            k: self.mask.k,
        })
    }
}

/// Splits a strictly positive magnitude matrix into envelope and details.
pub fn cmi_decompose(mag: &DMatrix<f64>, k: usize) -> Result<ModulationPair> {
    CmiTransform::new(mag.nrows(), k)?.decompose(mag)
}

/// Entrywise product of the two subspaces.
pub fn cmi_recompose(pair: &ModulationPair) -> Result<DMatrix<f64>> {
    if pair.envelope.shape() != pair.details.shape() {
        return Err(Error::Shape(format!(
            "envelope {:?} vs details {:?}",
            pair.envelope.shape(),
            pair.details.shape()
        )));
    }
    Ok(pair.envelope.component_mul(&pair.details))
}

/// Cepstral energy of one column assigned to the envelope, and the total.
pub fn cepstral_energy_split(column: &[f64], k: usize) -> Result<(f64, f64)> {
    let t = CmiTransform::new(column.len(), k)?;
    let cep = t.cepstrum(column)?;
    let total = cep.iter().map(|c| c.norm_sqr()).sum();
    let low = cep
        .iter()
        .zip(&t.mask.low_selector)
        .filter(|(_, &s)| s)
        .map(|(c, _)| c.norm_sqr())
        .sum();
    Ok((low, total))
}
