//! Noise characterization against a speech dictionary: coherence ratio,
//! sparsity-to-low-rank ratio and singular spectrum of the noise envelope.

use log::warn;
use nalgebra::DMatrix;

use crate::cmi::cmi_decompose;
use crate::dictionary::{nnls_project, SpeechDictionary};
use crate::error::{Error, Result};
use crate::linalg;
use crate::pipeline::Scheme;
use crate::signal::{floor_magnitude, stft, AudioClip, StftConfig};

/// Coordinate-descent sweeps used for the activation projection.
pub const NNLS_ITERS: usize = 500;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseProfile {
    pub name: String,
    /// Summed absolute normalized inner products between noise-envelope columns and atoms.
    pub coherence: f64,
    /// `‖N_e‖₁ / ‖N_e‖*`.
    pub r_noise: f64,
    /// `‖L_a‖₁ / ‖L_a‖*` of the dictionary activations of `N_e`.
    pub r_activation: f64,
    pub singular_values: Vec<f64>,
}

/// `Σ_{j,k} |⟨n_j, d_k⟩| / (‖n_j‖ ‖d_k‖)`; zero columns are skipped.
pub fn coherence_ratio(ne: &DMatrix<f64>, dict: &SpeechDictionary) -> Result<f64> {
    let d = dict.atoms();
    if ne.nrows() != d.nrows() {
        return Err(Error::Shape(format!(
            "noise envelope has {} rows, dictionary has {}",
            ne.nrows(),
            d.nrows()
        )));
    }
    let atom_norms: Vec<f64> = d.column_iter().map(|c| c.norm()).collect();
    let mut total = 0.0;
    let mut used = 0;
    let mut skipped = 0;
    for col in ne.column_iter() {
        let nn = col.norm();
        if nn == 0.0 {
            skipped += 1;
            continue;
        }
        used += 1;
        for (atom, &an) in d.column_iter().zip(&atom_norms) {
            if an > 0.0 {
                total += col.dot(&atom).abs() / (nn * an);
            }
        }
    }
    if used == 0 {
        return Err(Error::Degenerate("every noise column is zero".into()));
    }
    if skipped > 0 {
        warn!("coherence: skipped {skipped} zero columns");
    }
    Ok(total)
}

/// Sparsity-to-low-rank ratio `‖M‖₁ / ‖M‖*`.
pub fn slr(m: &DMatrix<f64>) -> Result<f64> {
    if m.is_empty() || m.iter().all(|&v| v == 0.0) {
        return Err(Error::Degenerate("SLR of a zero matrix".into()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("matrix has non-finite entries".into()));
    }
    let l1: f64 = m.iter().map(|v| v.abs()).sum();
    let nuclear = linalg::nuclear_norm(m)?;
    Ok(l1 / nuclear)
}

/// The `top` largest singular values, descending.
pub fn singular_spectrum(m: &DMatrix<f64>, top: usize) -> Result<Vec<f64>> {
    let limit = m.nrows().min(m.ncols());
    if top > limit {
        return Err(Error::Domain(format!("requested {top} singular values of a rank-{limit} shape")));
    }
    let mut sv = linalg::singular_values(m)?;
    sv.truncate(top);
    Ok(sv)
}

/// Envelope subspace `N_e` of a noise recording.
pub fn noise_envelope(clip: &AudioClip, k: usize) -> Result<DMatrix<f64>> {
    if clip.samples.iter().all(|&v| v == 0.0) {
        return Err(Error::Degenerate("noise clip is silent".into()));
    }
    let spec = stft(clip, &StftConfig::default())?;
    Ok(cmi_decompose(&floor_magnitude(&spec.magnitude), k)?.envelope)
}

pub fn profile_noise(clip: &AudioClip, dict: &SpeechDictionary, k: usize, name: &str) -> Result<NoiseProfile> {
    let ne = noise_envelope(clip, k)?;
    let la = nnls_project(&ne, dict, NNLS_ITERS)?;
    Ok(NoiseProfile {
        name: name.to_string(),
        coherence: coherence_ratio(&ne, dict)?,
        r_noise: slr(&ne)?,
        r_activation: slr(&la)?,
        singular_values: singular_spectrum(&ne, ne.nrows().min(ne.ncols()))?,
    })
}

/// Min-max normalization of `(C, R_noise, R_activation)` across a batch,
/// each column independently. A constant column maps to 0.
pub fn normalize_batch(profiles: &[NoiseProfile]) -> Vec<[f64; 3]> {
    let cols: [Vec<f64>; 3] = [
        profiles.iter().map(|p| p.coherence).collect(),
        profiles.iter().map(|p| p.r_noise).collect(),
        profiles.iter().map(|p| p.r_activation).collect(),
    ];
    let ranges: Vec<(f64, f64)> = cols
        .iter()
        .map(|c| {
            let lo = c.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (lo, hi)
        })
        .collect();
    (0..profiles.len())
        .map(|i| {
            let mut row = [0.0; 3];
            for (c, (lo, hi)) in ranges.iter().enumerate() {
                row[c] = if hi > lo { (cols[c][i] - lo) / (hi - lo) } else { 0.0 };
            }
            row
        })
        .collect()
}

/// TLSD suits noise that is low-rank in the envelope and sparse in the
/// activations (small normalized `R_noise`, large `R_activation`).
pub fn scheme_hint(normalized: &[f64; 3]) -> Scheme {
    if normalized[2] > normalized[1] {
        Scheme::Tlsd
    } else {
        Scheme::Slsd
    }
}
