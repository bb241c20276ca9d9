//! End-to-end enhancement, dictionary training, mixing and batch evaluation.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{info, warn};
use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::cmi::{CmiTransform, DEFAULT_K, RECOMMENDED_K};
use crate::dictionary::{train_nmf, trim_silence, NmfOutput, SpeechDictionary};
use crate::error::{Error, Result};
use crate::linalg;
use crate::lsd::{self, EnergyFloor, EtaRule, LsdResult, SolverConfig, Weight};
use crate::metrics::{evaluate_estimate, EvalReport};
use crate::signal::{floor_magnitude, istft, recombine, stft, AudioClip, StftConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scheme {
    Tlsd,
    Slsd,
    /// Plain RPCA on the whole magnitude spectrogram, no modulation split.
    RpcaFull,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Tlsd => "tlsd",
            Scheme::Slsd => "slsd",
            Scheme::RpcaFull => "rpca-full",
        }
    }

    pub fn needs_dictionary(&self) -> bool {
        !matches!(self, Scheme::RpcaFull)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tlsd" => Ok(Scheme::Tlsd),
            "slsd" => Ok(Scheme::Slsd),
            "rpca-full" | "rpca" => Ok(Scheme::RpcaFull),
            other => Err(Error::Config(format!("unknown scheme {other:?}"))),
        }
    }
}

/// Parses `tlsd`, `slsd`, `rpca-full`, `both` (tlsd + slsd) or a comma list.
pub fn parse_schemes(s: &str) -> Result<Vec<Scheme>> {
    let mut out = Vec::new();
    for part in s.split(',') {
        match part.trim().to_ascii_lowercase().as_str() {
            "both" => out.extend([Scheme::Tlsd, Scheme::Slsd]),
            "all" => out.extend([Scheme::Tlsd, Scheme::Slsd, Scheme::RpcaFull]),
            p => out.push(p.parse()?),
        }
    }
    out.dedup();
    if out.is_empty() {
        return Err(Error::Config("no scheme given".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub k: usize,
    pub scheme: Scheme,
    pub solver: SolverConfig,
    /// Nuclear-norm weight of the `rpca-full` reference.
    pub rpca_full_lambda: Weight,
    pub stft: StftConfig,
    pub dict_path: Option<PathBuf>,
    pub output_traces: bool,
    pub seed: u64,
    /// Dictionary size for training.
    pub atoms: usize,
    pub nmf_iters: usize,
    /// Silence trimming range for training clips (dB below the loudest frame).
    pub trim_db: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            scheme: Scheme::Tlsd,
            solver: SolverConfig {
                lambda_le1: Weight::Scaled(1.5),
                lambda_le2: Weight::Scaled(0.5),
                lambda_ld: Weight::Scaled(12.0),
                theta: EnergyFloor::RelativeToMax(1e-3),
                ..SolverConfig::default()
            },
            rpca_full_lambda: Weight::Scaled(1.0),
            stft: StftConfig::default(),
            dict_path: None,
            output_traces: false,
            seed: 0,
            atoms: 40,
            nmf_iters: 300,
            trim_db: 30.0,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean {value:?} for {key}"))),
    }
}

impl PipelineConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let s = &mut self.solver;
        match key.trim() {
            "k" => self.k = parse_num(key, value)?,
            "scheme" => self.scheme = value.parse()?,
            "dict" => self.dict_path = Some(PathBuf::from(value.trim())),
            "seed" => self.seed = parse_num(key, value)?,
            "atoms" => self.atoms = parse_num(key, value)?,
            "nmf_iters" => self.nmf_iters = parse_num(key, value)?,
            "trim_db" => self.trim_db = parse_num(key, value)?,
            "trace" => {
                self.output_traces = parse_bool(key, value)?;
                s.trace = self.output_traces;
            }
            "theta" => s.theta = EnergyFloor::RelativeToMax(parse_num(key, value)?),
            "theta_abs" => s.theta = EnergyFloor::Absolute(parse_num(key, value)?),
            "lambda_le1" => s.lambda_le1 = value.parse()?,
            "lambda_le2" => s.lambda_le2 = value.parse()?,
            "lambda_ld" => s.lambda_ld = value.parse()?,
            "lambda_rpca" => self.rpca_full_lambda = value.parse()?,
            "rho0" => s.rho0 = Some(parse_num(key, value)?),
            "mu" => s.mu = parse_num(key, value)?,
            "eps" => s.eps = parse_num(key, value)?,
            "max_iter" => s.max_iter = parse_num(key, value)?,
            "p" => s.ptype.p = parse_num(key, value)?,
            "inner_tol" => s.ptype.inner_tol = parse_num(key, value)?,
            "inner_max_iter" => s.ptype.inner_max_iter = parse_num(key, value)?,
            "eta" => {
                s.eta = match value.trim() {
                    "dict" => EtaRule::DictionarySpectral,
                    "data" => EtaRule::DataSpectral,
                    v => EtaRule::Fixed(parse_num(key, v)?),
                }
            }
            "lagged_stop_rule" => s.lagged_stop_rule = parse_bool(key, value)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        let n = self.stft.bins();
        if self.k == 0 || 2 * self.k >= n {
            return Err(Error::MaskOverlap { k: self.k, n });
        }
        if !RECOMMENDED_K.contains(&self.k) {
            warn!("cutoff k = {} is outside the recommended range 25..=35", self.k);
        }
        Ok(())
    }
}

/// Parses flat `key = value` lines; `#` starts a comment.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn load_config(path: impl AsRef<Path>, cfg: &mut PipelineConfig) -> Result<()> {
    for (k, v) in parse_config(&std::fs::read_to_string(path)?)? {
        cfg.set(&k, &v)?;
    }
    Ok(())
}

/// Solver outputs of one enhancement, tagged by stage name.
#[derive(Debug, Clone)]
pub struct Enhanced {
    pub clip: AudioClip,
    pub stages: Vec<(String, LsdResult)>,
}

/// Zero-pads one hop in front and up to a whole number of frames, so every
/// input sample is covered by two analysis windows. Returns the front offset.
fn pad_for_analysis(x: &[f64], stft: &StftConfig) -> (Vec<f64>, usize) {
    let hop = stft.hop;
    let total = x.len() + 2 * hop;
    let frames = if total <= stft.frame_len {
        1
    } else {
        (total - stft.frame_len).div_ceil(hop) + 1
    };
    let mut out = vec![0.0; stft.synthesis_len(frames)];
    out[hop..hop + x.len()].copy_from_slice(x);
    (out, hop)
}

/// Runs `solve` on `y / ‖y‖₂` and returns its result with every component
/// rescaled by `‖y‖₂`.
fn solve_normalized(
    y: &DMatrix<f64>,
    solve: impl FnOnce(&DMatrix<f64>) -> Result<LsdResult>,
) -> Result<LsdResult> {
    let scale = linalg::spectral_norm(y)?;
    if scale == 0.0 {
        return solve(y);
    }
    let mut res = solve(&(y / scale))?;
    res.s *= scale;
    res.l_lowrank *= scale;
    if let Some(l) = res.l_coherent.as_mut() {
        *l *= scale;
    }
    Ok(res)
}

/// Magnitude estimate for `scheme` from a floored noisy magnitude.
pub fn estimate_magnitude(
    mag: &DMatrix<f64>,
    dict: Option<&SpeechDictionary>,
    cfg: &PipelineConfig,
) -> Result<(DMatrix<f64>, Vec<(String, LsdResult)>)> {
    let mut stages = Vec::new();
    if cfg.scheme == Scheme::RpcaFull {
        let solver = SolverConfig {
            lambda_ld: cfg.rpca_full_lambda,
            ..cfg.solver.clone()
        };
        let res = solve_normalized(mag, |y| lsd::solve_rpca_details(y, &solver))?;
        let est = res.s.clone();
        stages.push(("rpca-full".to_string(), res));
        return Ok((est, stages));
    }

    let dict = dict.ok_or_else(|| Error::Config(format!("scheme {} needs a dictionary", cfg.scheme)))?;
    if dict.bins() != mag.nrows() {
        return Err(Error::Shape(format!(
            "dictionary has {} bins, spectrogram has {}",
            dict.bins(),
            mag.nrows()
        )));
    }
    let pair = CmiTransform::new(mag.nrows(), cfg.k)?.decompose(mag)?;
    let env = match cfg.scheme {
        Scheme::Tlsd => solve_normalized(&pair.envelope, |y| lsd::solve_tlsd(y, dict, &cfg.solver))?,
        _ => solve_normalized(&pair.envelope, |y| lsd::solve_slsd(y, dict, &cfg.solver))?,
    };
    let det = solve_normalized(&pair.details, |y| lsd::solve_rpca_details(y, &cfg.solver))?;
    let est = (dict.atoms() * &env.s).component_mul(&det.s);
    stages.push((format!("{}-envelope", cfg.scheme), env));
    stages.push(("details".to_string(), det));
    Ok((est, stages))
}

pub fn enhance(clip: &AudioClip, dict: Option<&SpeechDictionary>, cfg: &PipelineConfig) -> Result<Enhanced> {
    cfg.validate()?;
    if clip.samples.iter().all(|&v| v == 0.0) {
        return Ok(Enhanced {
            clip: clip.clone(),
            stages: Vec::new(),
        });
    }
    let (padded, front) = pad_for_analysis(&clip.samples, &cfg.stft);
    let spec = stft(&AudioClip::new(padded, clip.sample_rate)?, &cfg.stft)?;
    let mag = floor_magnitude(&spec.magnitude);
    let (est, stages) = estimate_magnitude(&mag, dict, cfg)?;
    for (name, res) in &stages {
        if !res.converged {
            warn!(
                "{name}: not converged after {} iterations (residual {:e})",
                res.iterations, res.final_residual
            );
        }
    }
    let out = istft(&recombine(&est, &spec)?)?;
    let samples = out.samples[front..front + clip.len()].to_vec();
    Ok(Enhanced {
        clip: AudioClip::new(samples, clip.sample_rate)?,
        stages,
    })
}

/// Envelope subspace of trimmed clean speech, frames concatenated.
pub fn training_matrix(clips: &[AudioClip], cfg: &PipelineConfig) -> Result<DMatrix<f64>> {
    let n = cfg.stft.bins();
    let cmi = CmiTransform::new(n, cfg.k)?;
    let mut columns: Vec<f64> = Vec::new();
    let mut frames = 0;
    for clip in clips {
        let trimmed = trim_silence(clip, cfg.trim_db)?;
        if trimmed.len() < cfg.stft.frame_len {
            warn!("clip shorter than one frame after trimming; skipped");
            continue;
        }
        let spec = stft(&trimmed, &cfg.stft)?;
        let env = cmi.decompose(&floor_magnitude(&spec.magnitude))?.envelope;
        frames += env.ncols();
        columns.extend_from_slice(env.as_slice());
    }
    if frames == 0 {
        return Err(Error::Degenerate("no usable training frames".into()));
    }
    Ok(DMatrix::from_column_slice(n, frames, &columns))
}

pub fn train_dictionary(clips: &[AudioClip], cfg: &PipelineConfig) -> Result<NmfOutput> {
    if clips.is_empty() {
        return Err(Error::Degenerate("empty training corpus".into()));
    }
    let x = training_matrix(clips, cfg)?;
    info!("training {} atoms on {} envelope frames", cfg.atoms, x.ncols());
    let mut out = train_nmf(&x, cfg.atoms, cfg.nmf_iters, cfg.seed)?;
    out.dictionary.source_meta = format!(
        "{} clips, {} frames, k={}, {}",
        clips.len(),
        x.ncols(),
        cfg.k,
        out.dictionary.source_meta
    );
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub clean: AudioClip,
    /// Noise as it appears in the mixture (rescaled).
    pub noise: AudioClip,
    pub mixture: AudioClip,
}

/// Adds noise rescaled to the exact global SNR. Both signals are cropped to
/// the shorter length.
pub fn mix_at_snr(clean: &AudioClip, noise: &AudioClip, snr_db: f64) -> Result<Mixture> {
    if clean.sample_rate != noise.sample_rate {
        return Err(Error::Shape("clean and noise sample rates differ".into()));
    }
    let len = clean.len().min(noise.len());
    let s = &clean.samples[..len];
    let n = &noise.samples[..len];
    let es: f64 = s.iter().map(|v| v * v).sum();
    let en: f64 = n.iter().map(|v| v * v).sum();
    if es == 0.0 || en == 0.0 {
        return Err(Error::Degenerate("cannot mix at an SNR with a silent signal".into()));
    }
    let gain = (es / (en * 10f64.powf(snr_db / 10.0))).sqrt();
    let scaled: Vec<f64> = n.iter().map(|v| v * gain).collect();
    let mixed: Vec<f64> = s.iter().zip(&scaled).map(|(a, b)| a + b).collect();
    Ok(Mixture {
        clean: AudioClip::new(s.to_vec(), clean.sample_rate)?,
        noise: AudioClip::new(scaled, clean.sample_rate)?,
        mixture: AudioClip::new(mixed, clean.sample_rate)?,
    })
}

/// One clean/noise pairing of an evaluation batch. A load failure is kept
/// and reported in the rows instead of aborting the batch.
#[derive(Debug, Clone)]
pub struct EvalJob {
    pub clean_name: String,
    pub noise_name: String,
    pub clean: std::result::Result<AudioClip, String>,
    pub noise: std::result::Result<AudioClip, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub file: String,
    pub noise: String,
    pub snr_db: f64,
    /// `noisy` or a scheme name.
    pub method: String,
    pub result: std::result::Result<EvalReport, String>,
}

fn eval_condition(
    job: &EvalJob,
    snr: f64,
    schemes: &[Scheme],
    dict: Option<&SpeechDictionary>,
    cfg: &PipelineConfig,
) -> Vec<EvalRow> {
    let row = |method: &str, result| EvalRow {
        file: job.clean_name.clone(),
        noise: job.noise_name.clone(),
        snr_db: snr,
        method: method.to_string(),
        result,
    };
    let mix = match (&job.clean, &job.noise) {
        (Ok(c), Ok(n)) => mix_at_snr(c, n, snr).map_err(|e| e.to_string()),
        (Err(e), _) | (_, Err(e)) => Err(e.clone()),
    };
    let mix = match mix {
        Ok(m) => m,
        Err(e) => {
            let mut rows = vec![row("noisy", Err(e.clone()))];
            rows.extend(schemes.iter().map(|s| row(s.name(), Err(e.clone()))));
            return rows;
        }
    };
    let mut rows = vec![row(
        "noisy",
        evaluate_estimate(&mix.clean, &mix.noise, &mix.mixture).map_err(|e| e.to_string()),
    )];
    for &scheme in schemes {
        let cfg = PipelineConfig {
            scheme,
            ..cfg.clone()
        };
        let result = enhance(&mix.mixture, dict, &cfg)
            .and_then(|e| evaluate_estimate(&mix.clean, &mix.noise, &e.clip))
            .map_err(|e| e.to_string());
        rows.push(row(scheme.name(), result));
    }
    rows
}

/// Mixes every job at every SNR, enhances with every scheme and scores the
/// noisy and enhanced signals. Conditions run in parallel; rows come back
/// sorted by (file, noise) then in SNR and scheme order.
pub fn evaluate(
    jobs: &[EvalJob],
    snrs: &[f64],
    schemes: &[Scheme],
    dict: Option<&SpeechDictionary>,
    cfg: &PipelineConfig,
) -> Vec<EvalRow> {
    let mut order: Vec<&EvalJob> = jobs.iter().collect();
    order.sort_by(|a, b| (&a.clean_name, &a.noise_name).cmp(&(&b.clean_name, &b.noise_name)));
    let conditions: Vec<(&EvalJob, f64)> = order
        .iter()
        .flat_map(|j| snrs.iter().map(move |&s| (*j, s)))
        .collect();
    conditions
        .par_iter()
        .map(|(job, snr)| eval_condition(job, *snr, schemes, dict, cfg))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

fn fmt_metric(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v:.6}")
    }
}

pub fn write_eval_csv<W: Write>(out: W, rows: &[EvalRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "file",
        "noise",
        "snr_condition",
        "method",
        "segsnr",
        "sdr",
        "sir",
        "sar",
        "stoi",
        "error",
    ])?;
    for r in rows {
        let mut rec = vec![
            r.file.clone(),
            r.noise.clone(),
            format!("{}", r.snr_db),
            r.method.clone(),
        ];
        match &r.result {
            Ok(m) => {
                rec.extend([m.segsnr_db, m.sdr_db, m.sir_db, m.sar_db, m.stoi].map(fmt_metric));
                rec.push(String::new());
            }
            Err(e) => {
                rec.extend(std::iter::repeat_n(String::new(), 5));
                rec.push(e.clone());
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a matrix as CSV, one row per line, full precision.
pub fn write_matrix_csv<W: Write>(out: W, m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    for row in m.row_iter() {
        w.write_record(row.iter().map(|v| format!("{v:e}")))?;
    }
    w.flush()?;
    Ok(())
}
