use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use rayon::prelude::*;

use lsdms::cmi::CmiTransform;
use lsdms::dictionary::SpeechDictionary;
use lsdms::lsd::write_trace_csv;
use lsdms::noise_profile::{normalize_batch, profile_noise, scheme_hint};
use lsdms::pipeline::{
    evaluate, load_config, parse_schemes, train_dictionary, write_eval_csv, write_matrix_csv, EvalJob, PipelineConfig,
    Scheme,
};
use lsdms::signal::{floor_magnitude, read_wav, stft, write_wav, AudioClip};

#[derive(Parser)]
#[command(name = "lsdms", version, about = "Speech enhancement by low-rank and sparse decomposition in modulation subspaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Log more (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Flat `key = value` config file; flags given here override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Cepstral cutoff (recommended 25..=35).
    #[arg(long)]
    k: Option<usize>,
    /// tlsd, slsd, rpca-full, or (evaluate only) both / a comma list.
    #[arg(long)]
    scheme: Option<String>,
    /// Speech dictionary (MSDICT).
    #[arg(long)]
    dict: Option<PathBuf>,
    /// Activation floor relative to the largest activation.
    #[arg(long)]
    theta: Option<f64>,
    /// Coherent low-rank weight; `0.5x` scales by the square root of the larger dimension.
    #[arg(long = "lambda-le1")]
    lambda_le1: Option<String>,
    /// Envelope low-rank weight, same syntax as --lambda-le1.
    #[arg(long = "lambda-le2")]
    lambda_le2: Option<String>,
    /// Write solver traces as CSV.
    #[arg(long)]
    trace: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Extra `key=value` settings, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Enhance one noisy WAV file.
    Enhance {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train a speech dictionary from a directory of clean WAV files.
    TrainDict {
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Number of atoms.
        #[arg(long)]
        atoms: Option<usize>,
        #[arg(long)]
        iters: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Coherence and sparse-to-low-rank ratios of noise recordings.
    ProfileNoise {
        /// WAV files or directories.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// CSV output; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Mix clean speech with noise at several SNRs, enhance, and score.
    Evaluate {
        /// Clean WAV file or directory.
        #[arg(long)]
        clean: PathBuf,
        /// Noise WAV file or directory.
        #[arg(long)]
        noise: PathBuf,
        /// Comma-separated input SNRs in dB.
        #[arg(long, default_value = "-10,-5,0,5,10", allow_hyphen_values = true)]
        snr: String,
        /// CSV output; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Dump the envelope and details subspaces of a WAV file as CSV matrices.
    Decompose {
        input: PathBuf,
        /// Output prefix; writes PREFIX_envelope.csv and PREFIX_details.csv.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

/// Defaults, then the config file, then `--set`, then dedicated flags.
/// Returns the config and the raw scheme string, if any.
fn build_config(c: &Common) -> Result<(PipelineConfig, Option<String>)> {
    let mut cfg = PipelineConfig::default();
    if let Some(path) = &c.config {
        load_config(path, &mut cfg).with_context(|| format!("reading config {}", path.display()))?;
    }
    for kv in &c.set {
        let (k, v) = kv.split_once('=').with_context(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
        cfg.set(k, v)?;
    }
    if let Some(k) = c.k {
        cfg.k = k;
    }
    if let Some(d) = &c.dict {
        cfg.dict_path = Some(d.clone());
    }
    if let Some(t) = c.theta {
        cfg.set("theta", &t.to_string())?;
    }
    if let Some(w) = &c.lambda_le1 {
        cfg.set("lambda_le1", w)?;
    }
    if let Some(w) = &c.lambda_le2 {
        cfg.set("lambda_le2", w)?;
    }
    if c.trace {
        cfg.set("trace", "true")?;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok((cfg, c.scheme.clone()))
}

fn load_dict(cfg: &PipelineConfig, required: bool) -> Result<Option<SpeechDictionary>> {
    match &cfg.dict_path {
        Some(p) => Ok(Some(
            SpeechDictionary::load(p).with_context(|| format!("loading dictionary {}", p.display()))?,
        )),
        None if required => bail!("a speech dictionary is required (--dict)"),
        None => Ok(None),
    }
}

/// WAV files of a directory in name order, or the path itself if it is a file.
fn wav_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut out: Vec<PathBuf> = std::fs::read_dir(path)
        .with_context(|| format!("listing {}", path.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
        .collect();
    out.sort();
    Ok(out)
}

fn file_name(p: &Path) -> String {
    p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn run_enhance(input: &Path, out: &Path, common: &Common) -> Result<()> {
    let (mut cfg, scheme) = build_config(common)?;
    if let Some(s) = scheme {
        cfg.scheme = s.parse::<Scheme>()?;
    }
    let dict = load_dict(&cfg, cfg.scheme.needs_dictionary())?;
    let clip = read_wav(input).with_context(|| format!("reading {}", input.display()))?;
    let result = lsdms::enhance(&clip, dict.as_ref(), &cfg)?;
    write_wav(out, &result.clip).with_context(|| format!("writing {}", out.display()))?;
    for (stage, res) in &result.stages {
        info!(
            "{stage}: {} iterations, converged {}, residual {:e}",
            res.iterations, res.converged, res.final_residual
        );
        if cfg.output_traces {
            let path = with_suffix(out, &format!(".{stage}.trace.csv"));
            write_trace_csv(BufWriter::new(File::create(&path)?), stage, &res.trace)?;
        }
    }
    Ok(())
}

fn run_train(corpus: &Path, out: &Path, atoms: Option<usize>, iters: Option<usize>, common: &Common) -> Result<()> {
    let (mut cfg, _) = build_config(common)?;
    if let Some(a) = atoms {
        cfg.atoms = a;
    }
    if let Some(i) = iters {
        cfg.nmf_iters = i;
    }
    let files = wav_files(corpus)?;
    if files.is_empty() {
        bail!("no WAV files in {}", corpus.display());
    }
    let clips = files
        .iter()
        .map(|p| read_wav(p).with_context(|| format!("reading {}", p.display())))
        .collect::<Result<Vec<AudioClip>>>()?;
    let result = train_dictionary(&clips, &cfg)?;
    result.dictionary.save(out)?;
    if cfg.output_traces {
        let mut w = BufWriter::new(File::create(with_suffix(out, ".objective.csv"))?);
        writeln!(w, "iteration,kl")?;
        for (i, v) in result.objective.iter().enumerate() {
            writeln!(w, "{i},{v:e}")?;
        }
    }
    let last = result.objective.last().copied().unwrap_or(f64::NAN);
    println!(
        "{} atoms x {} bins from {} files; final KL objective {last:.6e}",
        result.dictionary.atom_count(),
        result.dictionary.bins(),
        clips.len()
    );
    Ok(())
}

fn run_profile(inputs: &[PathBuf], out: &Option<PathBuf>, common: &Common) -> Result<()> {
    let (cfg, _) = build_config(common)?;
    let dict = load_dict(&cfg, true)?.expect("required dictionary");
    let mut files = Vec::new();
    for p in inputs {
        files.extend(wav_files(p)?);
    }
    let profiles = files
        .par_iter()
        .map(|p| {
            let clip = read_wav(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(profile_noise(&clip, &dict, cfg.k, &file_name(p))?)
        })
        .collect::<Result<Vec<_>>>()?;
    let normalized = normalize_batch(&profiles);
    let mut w = csv::Writer::from_writer(output(out)?);
    w.write_record([
        "name",
        "C",
        "R_noise",
        "R_activation",
        "C_norm",
        "R_noise_norm",
        "R_activation_norm",
        "hint",
    ])?;
    for (p, n) in profiles.iter().zip(&normalized) {
        let hint = scheme_hint(n);
        eprintln!("{}: suggested scheme {hint}", p.name);
        w.write_record([
            p.name.clone(),
            format!("{:.6}", p.coherence),
            format!("{:.6}", p.r_noise),
            format!("{:.6}", p.r_activation),
            format!("{:.6}", n[0]),
            format!("{:.6}", n[1]),
            format!("{:.6}", n[2]),
            hint.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn parse_snrs(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().with_context(|| format!("invalid SNR {t:?}")))
        .collect()
}

fn load_job_clip(p: &Path) -> std::result::Result<AudioClip, String> {
    read_wav(p).map_err(|e| format!("{}: {e}", file_name(p)))
}

fn run_evaluate(clean: &Path, noise: &Path, snr: &str, out: &Option<PathBuf>, common: &Common) -> Result<()> {
    let (cfg, scheme) = build_config(common)?;
    let schemes = match scheme {
        Some(s) => parse_schemes(&s)?,
        None => vec![cfg.scheme],
    };
    let snrs = parse_snrs(snr)?;
    let dict = load_dict(&cfg, schemes.iter().any(Scheme::needs_dictionary))?;
    let clean_files = wav_files(clean)?;
    let noise_files = wav_files(noise)?;
    if clean_files.is_empty() || noise_files.is_empty() {
        bail!("need at least one clean and one noise WAV file");
    }
    let noises: Vec<(String, std::result::Result<AudioClip, String>)> =
        noise_files.iter().map(|p| (file_name(p), load_job_clip(p))).collect();
    let mut jobs = Vec::new();
    for c in &clean_files {
        let clip = load_job_clip(c);
        for (name, n) in &noises {
            jobs.push(EvalJob {
                clean_name: file_name(c),
                noise_name: name.clone(),
                clean: clip.clone(),
                noise: n.clone(),
            });
        }
    }
    info!("{} pairings x {} SNRs x {} schemes", jobs.len(), snrs.len(), schemes.len());
    let rows = evaluate(&jobs, &snrs, &schemes, dict.as_ref(), &cfg);
    let failed = rows.iter().filter(|r| r.result.is_err()).count();
    if failed > 0 {
        log::warn!("{failed} rows failed; see the error column");
    }
    write_eval_csv(output(out)?, &rows)?;
    Ok(())
}

fn run_decompose(input: &Path, out: &Path, common: &Common) -> Result<()> {
    let (cfg, _) = build_config(common)?;
    let clip = read_wav(input).with_context(|| format!("reading {}", input.display()))?;
    let spec = stft(&clip, &cfg.stft)?;
    let pair = CmiTransform::new(spec.bins(), cfg.k)?.decompose(&floor_magnitude(&spec.magnitude))?;
    for (name, m) in [("envelope", &pair.envelope), ("details", &pair.details)] {
        let path = with_suffix(out, &format!("_{name}.csv"));
        write_matrix_csv(BufWriter::new(File::create(&path)?), m)?;
        info!("wrote {} ({}x{})", path.display(), m.nrows(), m.ncols());
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match &cli.command {
        Command::Enhance { input, out, common } => run_enhance(input, out, common),
        Command::TrainDict {
            corpus,
            out,
            atoms,
            iters,
            common,
        } => run_train(corpus, out, *atoms, *iters, common),
        Command::ProfileNoise { inputs, out, common } => run_profile(inputs, out, common),
        Command::Evaluate {
            clean,
            noise,
            snr,
            out,
            common,
        } => run_evaluate(clean, noise, snr, out, common),
        Command::Decompose { input, out, common } => run_decompose(input, out, common),
    }
}
