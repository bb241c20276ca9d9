//! Speech envelope dictionary: KL (Poisson-likelihood) NMF training,
//! nonnegative least-squares projection and the MSDICT text format.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::signal::AudioClip;

/// Frame length used by [`trim_silence`].
pub const TRIM_FRAME: usize = 512;

/// Nonnegative atoms with unit Euclidean norm, one per column.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeechDictionary {
    atoms: DMatrix<f64>,
    pub source_meta: String,
}

impl SpeechDictionary {
    /// Accepts atoms that are already unit-norm (within 1e-9).
    pub fn new(atoms: DMatrix<f64>, source_meta: impl Into<String>) -> Result<Self> {
        Self::check_entries(&atoms)?;
        for (j, col) in atoms.column_iter().enumerate() {
            let norm = col.norm();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(Error::Domain(format!("atom {j} has norm {norm}, expected 1")));
            }
        }
        Ok(Self {
            atoms,
            source_meta: source_meta.into(),
        })
    }

    /// Normalizes every column to unit norm.
    pub fn from_unnormalized(mut atoms: DMatrix<f64>, source_meta: impl Into<String>) -> Result<Self> {
        Self::check_entries(&atoms)?;
        for mut col in atoms.column_iter_mut() {
            let norm = col.norm();
            col /= norm;
        }
        Ok(Self {
            atoms,
            source_meta: source_meta.into(),
        })
    }

    fn check_entries(atoms: &DMatrix<f64>) -> Result<()> {
        if atoms.is_empty() {
            return Err(Error::Shape("dictionary is empty".into()));
        }
        if atoms.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Domain("dictionary entries must be finite and >= 0".into()));
        }
        if let Some(j) = atoms.column_iter().position(|c| c.iter().all(|&v| v == 0.0)) {
            return Err(Error::Domain(format!("atom {j} is all zero")));
        }
        Ok(())
    }

    pub fn atoms(&self) -> &DMatrix<f64> {
        &self.atoms
    }

    pub fn bins(&self) -> usize {
        self.atoms.nrows()
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn to_msdict(&self) -> String {
        let (n, r) = self.atoms.shape();
        let mut out = format!("MSDICT v1 n={n} r={r}\n");
        for i in 0..n {
            for j in 0..r {
                if j > 0 {
                    out.push(' ');
                }
                write!(out, "{:.16e}", self.atoms[(i, j)]).expect("writing to a String");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_msdict(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty dictionary file".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let parse_dim = |field: Option<&&str>, key: &str| -> Result<usize> {
            field
                .and_then(|f| f.strip_prefix(key))
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Format(format!("bad header {header:?}")))
        };
        if fields.first() != Some(&"MSDICT") || fields.get(1) != Some(&"v1") {
            return Err(Error::Format(format!("bad header {header:?}")));
        }
        let n = parse_dim(fields.get(2), "n=")?;
        let r = parse_dim(fields.get(3), "r=")?;
        let mut data = Vec::with_capacity(n * r);
        let mut rows = 0;
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let before = data.len();
            for tok in line.split_whitespace() {
                let v: f64 = tok
                    .parse()
                    .map_err(|_| Error::Format(format!("bad number {tok:?} in row {rows}")))?;
                data.push(v);
            }
            if data.len() - before != r {
                return Err(Error::Format(format!(
                    "row {rows} has {} values, expected {r}",
                    data.len() - before
                )));
            }
            rows += 1;
        }
        if rows != n {
            return Err(Error::Format(format!("found {rows} rows, expected {n}")));
        }
        Self::new(DMatrix::from_row_slice(n, r, &data), "")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_msdict())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut dict = Self::from_msdict(&std::fs::read_to_string(path)?)?;
        dict.source_meta = path.display().to_string();
        Ok(dict)
    }
}

/// Per-frame RMS over non-overlapping frames (the last frame may be short).
pub fn frame_rms(samples: &[f64], frame: usize) -> Vec<f64> {
    samples
        .chunks(frame)
        .map(|c| (c.iter().map(|v| v * v).sum::<f64>() / c.len() as f64).sqrt())
        .collect()
}

/// Drops frames whose RMS is more than `threshold_db` below the loudest frame.
pub fn trim_silence(clip: &AudioClip, threshold_db: f64) -> Result<AudioClip> {
    let rms = frame_rms(&clip.samples, TRIM_FRAME);
    let peak = rms.iter().copied().fold(0.0, f64::max);
    if peak == 0.0 {
        return Err(Error::Degenerate("clip is entirely silent".into()));
    }
    let floor = peak * 10f64.powf(-threshold_db / 20.0);
    let kept: Vec<f64> = clip
        .samples
        .chunks(TRIM_FRAME)
        .zip(&rms)
        .filter(|(_, &r)| r >= floor)
        .flat_map(|(c, _)| c.iter().copied())
        .collect();
    AudioClip::new(kept, clip.sample_rate)
}

/// Generalized KL divergence `Σ x log(x/y) − x + y`, with `0 log 0 = 0`.
pub fn kl_divergence(x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    x.iter()
        .zip(y.iter())
        .map(|(&a, &b)| {
            if a > 0.0 {
                a * (a / b).ln() - a + b
            } else {
                b
            }
        })
        .sum()
}

#[derive(Debug, Clone)]
pub struct NmfOutput {
    pub dictionary: SpeechDictionary,
    pub activations: DMatrix<f64>,
    /// KL objective at initialization and after every iteration.
    pub objective: Vec<f64>,
}

const TINY: f64 = 1e-300;

/// Multiplicative-update NMF minimizing `KL(X ‖ W H)`.
///
/// Columns of the returned dictionary are unit-norm; the activations absorb
/// the scale.
pub fn train_nmf(x: &DMatrix<f64>, r: usize, iters: usize, seed: u64) -> Result<NmfOutput> {
    let (n, m) = x.shape();
    if r == 0 || r >= n.min(m) {
        return Err(Error::Rank(format!("rank {r} must satisfy 1 <= r < min({n}, {m})")));
    }
    if iters == 0 {
        return Err(Error::Domain("iteration count must be >= 1".into()));
    }
    if x.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Domain("training matrix must be finite and nonnegative".into()));
    }
    if x.iter().all(|&v| v == 0.0) {
        return Err(Error::Degenerate("training matrix is all zero".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = (x.sum() / (n * m) as f64 / r as f64).sqrt();
    let mut w = DMatrix::from_fn(n, r, |_, _| scale * (rng.random::<f64>() + 0.1));
    let mut h = DMatrix::from_fn(r, m, |_, _| scale * (rng.random::<f64>() + 0.1));
    let mut objective = Vec::with_capacity(iters + 1);
    objective.push(kl_divergence(x, &(&w * &h)));

    let ratio = |w: &DMatrix<f64>, h: &DMatrix<f64>| {
        let wh = w * h;
        x.zip_map(&wh, |a, b| a / b.max(TINY))
    };
    for _ in 0..iters {
        let (w_prev, h_prev) = (w.clone(), h.clone());
        let q = ratio(&w, &h);
        let num = w.transpose() * q;
        let wsum: Vec<f64> = w.column_iter().map(|c| c.sum()).collect();
        for (i, mut row) in h.row_iter_mut().enumerate() {
            let denom = wsum[i].max(TINY);
            for (j, v) in row.iter_mut().enumerate() {
                *v *= num[(i, j)] / denom;
            }
        }
        let q = ratio(&w, &h);
        let num = q * h.transpose();
        let hsum: Vec<f64> = h.row_iter().map(|r| r.sum()).collect();
        for (j, mut col) in w.column_iter_mut().enumerate() {
            let denom = hsum[j].max(TINY);
            for (i, v) in col.iter_mut().enumerate() {
                *v *= num[(i, j)] / denom;
            }
        }
        // Near a fixed point rounding can nudge the objective up by a few
        // ulps; such a step is dropped so the recorded sequence never rises.
        let prev = objective[objective.len() - 1];
        let cur = kl_divergence(x, &(&w * &h));
        if cur > prev {
            w = w_prev;
            h = h_prev;
            objective.push(prev);
        } else {
            objective.push(cur);
        }
    }

    for (j, mut col) in w.column_iter_mut().enumerate() {
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
            h.row_mut(j).scale_mut(norm);
        }
    }
    // A dead atom (all zero) cannot be normalized; reseed it as a flat atom
    // with zero activation so the dictionary stays valid.
    for (j, mut col) in w.column_iter_mut().enumerate() {
        if col.iter().all(|&v| v == 0.0) {
            col.fill(1.0 / (n as f64).sqrt());
            h.row_mut(j).fill(0.0);
        }
    }
    Ok(NmfOutput {
        dictionary: SpeechDictionary::new(w, format!("kl-nmf r={r} iters={iters} seed={seed}"))?,
        activations: h,
        objective,
    })
}

/// Nonnegative least squares `min ‖Ne − D La‖_F, La ≥ 0` by exact
/// coordinate descent on the rows of `La`.
pub fn nnls_project(ne: &DMatrix<f64>, dict: &SpeechDictionary, iters: usize) -> Result<DMatrix<f64>> {
    let d = dict.atoms();
    if ne.nrows() != d.nrows() {
        return Err(Error::Shape(format!(
            "matrix has {} rows, dictionary has {}",
            ne.nrows(),
            d.nrows()
        )));
    }
    if ne.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("matrix has non-finite entries".into()));
    }
    let r = d.ncols();
    let m = ne.ncols();
    let g = d.transpose() * d;
    let b = d.transpose() * ne;
    let mut x = DMatrix::<f64>::zeros(r, m);
    let tol = 1e-12 * b.amax().max(1.0);
    for _ in 0..iters {
        let mut change: f64 = 0.0;
        for i in 0..r {
            let gii = g[(i, i)];
            for j in 0..m {
                let grad = g.row(i).dot(&x.column(j).transpose()) - b[(i, j)];
                let old = x[(i, j)];
                let new = (old - grad / gii).max(0.0);
                x[(i, j)] = new;
                change = change.max((new - old).abs());
            }
        }
        if change <= tol {
            break;
        }
    }
    Ok(x)
}

/// Largest `|min(La, ∇)|` entry: zero exactly at a KKT point of the NNLS problem.
pub fn nnls_stationarity(ne: &DMatrix<f64>, dict: &SpeechDictionary, la: &DMatrix<f64>) -> f64 {
    let d = dict.atoms();
    let grad = d.transpose() * (d * la - ne);
    la.zip_map(&grad, |x, g| x.min(g).abs()).amax()
}
