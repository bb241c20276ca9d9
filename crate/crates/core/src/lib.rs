//! Single-channel speech enhancement by low-rank and sparse decomposition in
//! cepstral modulation subspaces.
//!
//! A noisy magnitude spectrogram is split by a cepstral lifter into a slowly
//! varying envelope and fast details. The envelope is explained by a speech
//! dictionary with sparse nonnegative activations (TLSD-MS or SLSD-MS), the
//! details are cleaned by RPCA, and the two estimates are multiplied back
//! together before resynthesis with the noisy phase.

pub mod cmi;
pub mod dictionary;
pub mod error;
pub mod linalg;
pub mod lsd;
pub mod metrics;
pub mod noise_profile;
pub mod pipeline;
pub mod prox;
pub mod signal;
pub mod synth;

pub use cmi::{cmi_decompose, cmi_recompose, CmiTransform, ModulationPair};
pub use dictionary::{train_nmf, SpeechDictionary};
pub use error::{Error, Result};
pub use lsd::{LsdResult, SolverConfig, Weight};
pub use metrics::{bss_eval, segsnr, stoi, EvalReport};
pub use noise_profile::{profile_noise, NoiseProfile};
pub use pipeline::{enhance, PipelineConfig, Scheme};
pub use signal::{istft, read_wav, stft, write_wav, AudioClip, Spectrogram, StftConfig};
