//! Low-rank + sparse decomposition solvers.
//!
//! * [`solve_tlsd_layer1`]: `min λ‖L‖* + ‖S‖₁  s.t.  Ye = D S + L, S ≥ 0` (ALM).
//! * [`solve_tlsd_layer2`]: RPCA of the layer-1 activations.
//! * [`solve_slsd`]: `min ‖S‖₁ + λ₁ ‖L₁‖_p + λ₂ ‖L₂‖*  s.t.  Ye = D(S + L₁) + L₂` (LADMAP).
//! * [`solve_rpca_details`]: plain RPCA with a nonnegative sparse part.
//!
//! Nuclear-norm weights are relative to a unit-weight ℓ1 term, so the usual
//! RPCA balance corresponds to `λ = √max(rows, cols)` ([`Weight::Scaled`]).

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use log::debug;
use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::dictionary::SpeechDictionary;
use crate::error::{Error, Result};
use crate::linalg;
use crate::prox::{self, PTypeParams};

/// Nuclear-norm weight: absolute, or a multiple of `√max(rows, cols)` of the
/// matrix being decomposed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Weight {
    Fixed(f64),
    Scaled(f64),
}

impl Weight {
    pub fn resolve(&self, rows: usize, cols: usize) -> f64 {
        match *self {
            Weight::Fixed(v) => v,
            Weight::Scaled(c) => c * (rows.max(cols) as f64).sqrt(),
        }
    }

    fn value(&self) -> f64 {
        match *self {
            Weight::Fixed(v) | Weight::Scaled(v) => v,
        }
    }
}

impl fmt::Display for Weight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Weight::Fixed(v) => write!(f, "{v}"),
            Weight::Scaled(c) => write!(f, "{c}x"),
        }
    }
}

impl FromStr for Weight {
    type Err = Error;

    /// `"12.5"` is absolute; `"0.5x"` means `0.5·√max(rows, cols)`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (num, scaled) = match s.strip_suffix('x') {
            Some(rest) => (rest, true),
            None => (s, false),
        };
        let v: f64 = num
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("invalid weight {s:?}")))?;
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::Config(format!("weight must be finite and >= 0, got {s:?}")));
        }
        Ok(if scaled { Weight::Scaled(v) } else { Weight::Fixed(v) })
    }
}

/// Post-update hard threshold on the sparse/activation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EnergyFloor {
    Absolute(f64),
    /// Fraction of the current maximum entry.
    RelativeToMax(f64),
}

impl EnergyFloor {
    pub fn threshold(&self, s: &DMatrix<f64>) -> f64 {
        match *self {
            EnergyFloor::Absolute(t) => t,
            EnergyFloor::RelativeToMax(f) => f * s.max().max(0.0),
        }
    }

    fn value(&self) -> f64 {
        match *self {
            EnergyFloor::Absolute(t) | EnergyFloor::RelativeToMax(t) => t,
        }
    }
}

/// Linearization constant for the coherent-noise step of [`solve_slsd`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EtaRule {
    /// `‖D‖₂²`, the Lipschitz constant of the linearized term.
    DictionarySpectral,
    /// `‖Ye‖₂²`.
    DataSpectral,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub lambda_le1: Weight,
    pub lambda_le2: Weight,
    pub lambda_ld: Weight,
    /// Initial penalty; `None` uses `1.25 λ / ‖Y‖₂`.
    pub rho0: Option<f64>,
    pub mu: f64,
    pub theta: EnergyFloor,
    pub eps: f64,
    pub max_iter: usize,
    pub ptype: PTypeParams,
    pub eta: EtaRule,
    /// Stop the SLSD loop on the lagged gap `‖B^k − S^k‖∞` instead of the current one.
    pub lagged_stop_rule: bool,
    pub trace: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda_le1: Weight::Scaled(0.5),
            lambda_le2: Weight::Scaled(1.0),
            lambda_ld: Weight::Scaled(1.0),
            rho0: None,
            mu: 1.2,
            theta: EnergyFloor::Absolute(0.0),
            eps: 1e-6,
            max_iter: 500,
            ptype: PTypeParams::default(),
            eta: EtaRule::DictionarySpectral,
            lagged_stop_rule: true,
            trace: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if !(self.mu > 1.0) {
            return bad("mu must be > 1");
        }
        if !(self.eps > 0.0) {
            return bad("eps must be > 0");
        }
        if self.max_iter == 0 {
            return bad("max_iter must be >= 1");
        }
        if let Some(r) = self.rho0 {
            if !(r > 0.0) || !r.is_finite() {
                return bad("rho0 must be finite and > 0");
            }
        }
        for w in [self.lambda_le1, self.lambda_le2, self.lambda_ld] {
            if !(w.value() >= 0.0) {
                return bad("nuclear-norm weights must be >= 0");
            }
        }
        if !(self.theta.value() >= 0.0) {
            return bad("energy floor must be >= 0");
        }
        if let EtaRule::Fixed(e) = self.eta {
            if !(e > 0.0) {
                return bad("eta must be > 0");
            }
        }
        self.ptype.validate()
    }
}

/// Per-iteration stopping quantities (infinity norms).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub rho: f64,
    /// `‖A − S‖∞` (ALM) or `‖B − S‖∞` (LADMAP).
    pub sparse_gap: f64,
    /// `‖A^{k+1} − A^k‖∞` or `‖B^{k+1} − B^k‖∞`.
    pub aux_change: f64,
    /// `‖L^{k+1} − L^k‖∞` of the nuclear-norm component.
    pub lowrank_change: f64,
    /// `‖L₁^{k+1} − L₁^k‖∞`; zero for ALM.
    pub coherent_change: f64,
    pub primal_residual: f64,
    pub stop_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LsdResult {
    pub s: DMatrix<f64>,
    pub l_coherent: Option<DMatrix<f64>>,
    pub l_lowrank: DMatrix<f64>,
    pub iterations: usize,
    pub final_residual: f64,
    pub converged: bool,
    pub ptype_failures: usize,
    pub trace: Vec<IterationRecord>,
}

/// Zeroes every entry below `theta`.
pub fn energy_floor(s: &DMatrix<f64>, theta: f64) -> DMatrix<f64> {
    s.map(|v| if v < theta { 0.0 } else { v })
}

fn floor_in_place(s: &mut DMatrix<f64>, theta: f64) {
    s.iter_mut().for_each(|v| {
        if *v < theta {
            *v = 0.0
        }
    });
}

fn inf_norm_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}


fn check_input(y: &DMatrix<f64>, what: &str) -> Result<()> {
    if y.is_empty() {
        return Err(Error::Shape(format!("{what} is empty")));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("{what} has non-finite entries")));
    }
    Ok(())
}

fn initial_rho(cfg: &SolverConfig, lambda: f64, y: &DMatrix<f64>) -> f64 {
    cfg.rho0.unwrap_or_else(|| {
        let norm = linalg::spectral_norm(y).unwrap_or(0.0);
        if norm > 0.0 && lambda > 0.0 {
            1.25 * lambda / norm
        } else {
            1.0
        }
    })
}

/// `(DᵀD + I)⁻¹`, or division by 2 for the identity dictionary.
enum NormalSolve {
    Identity,
    Dictionary {
        d: DMatrix<f64>,
        dt: DMatrix<f64>,
        chol: Cholesky<f64, Dyn>,
    },
}

impl NormalSolve {
    fn new(d: Option<&DMatrix<f64>>) -> Result<Self> {
        Ok(match d {
            None => NormalSolve::Identity,
            Some(d) => {
                let dt = d.transpose();
                let gram = &dt * d + DMatrix::identity(d.ncols(), d.ncols());
                let chol = Cholesky::new(gram)
                    .ok_or_else(|| Error::Internal("DᵀD + I is not positive definite".into()))?;
                NormalSolve::Dictionary {
                    d: d.clone(),
                    dt,
                    chol,
                }
            }
        })
    }

    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            NormalSolve::Identity => x.clone(),
            NormalSolve::Dictionary { d, .. } => d * x,
        }
    }

    fn apply_t(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            NormalSolve::Identity => x.clone(),
            NormalSolve::Dictionary { dt, .. } => dt * x,
        }
    }

    fn solve(&self, rhs: DMatrix<f64>) -> DMatrix<f64> {
        match self {
            NormalSolve::Identity => rhs * 0.5,
            NormalSolve::Dictionary { chol, .. } => chol.solve(&rhs),
        }
    }
}

/// Inexact ALM for `Y = D S + L` (identity `D` when `None`).
fn alm(y: &DMatrix<f64>, d: Option<&DMatrix<f64>>, lambda: f64, cfg: &SolverConfig) -> Result<LsdResult> {
    cfg.validate()?;
    check_input(y, "input matrix")?;
    let (n, m) = y.shape();
    let r = match d {
        Some(d) => {
            if d.nrows() != n {
                return Err(Error::Shape(format!(
                    "dictionary has {} rows, data has {n}",
                    d.nrows()
                )));
            }
            d.ncols()
        }
        None => n,
    };
    let ns = NormalSolve::new(d)?;
    let mut rho = initial_rho(cfg, lambda, y);

    let mut s = DMatrix::zeros(r, m);
    let mut a = DMatrix::zeros(r, m);
    let mut l = DMatrix::zeros(n, m);
    let mut d1 = DMatrix::zeros(r, m);
    let mut d2 = DMatrix::zeros(n, m);
    let mut trace = Vec::new();
    let mut last = f64::INFINITY;
    let mut iterations = 0;

    for it in 1..=cfg.max_iter {
        iterations = it;
        let inv = 1.0 / rho;
        let rhs = ns.apply_t(&(y - &l + &d2 * inv)) + &a + &d1 * inv;
        s = ns.solve(rhs);
        let theta = cfg.theta.threshold(&s);
        floor_in_place(&mut s, theta);

        let a_new = (&s - &d1 * inv).map(|v| prox::shrink(v, inv).max(0.0));
        let ds = ns.apply(&s);
        let l_new = prox::svt(&(y - &ds + &d2 * inv), lambda * inv)?;

        let sparse_gap = inf_norm_diff(&a_new, &s);
        let aux_change = inf_norm_diff(&a_new, &a);
        let lowrank_change = inf_norm_diff(&l_new, &l);
        a = a_new;
        l = l_new;

        d1 += (&a - &s) * rho;
        let residual = y - &ds - &l;
        d2 += &residual * rho;
        let primal_residual = residual.amax();

        let stop_value = sparse_gap.max(aux_change).max(lowrank_change).max(primal_residual);
        if cfg.trace {
            trace.push(IterationRecord {
                iteration: it,
                rho,
                sparse_gap,
                aux_change,
                lowrank_change,
                coherent_change: 0.0,
                primal_residual,
                stop_value,
            });
        }
        rho *= cfg.mu;
        last = stop_value;
        if stop_value <= cfg.eps {
            break;
        }
    }
    let converged = last <= cfg.eps;
    debug!("alm: {iterations} iterations, residual {last:e}, converged {converged}");
    Ok(LsdResult {
        s,
        l_coherent: None,
        l_lowrank: l,
        iterations,
        final_residual: last,
        converged,
        ptype_failures: 0,
        trace,
    })
}

/// First TLSD layer: `Ye = D S₁ + L_{e,2}` with weight `lambda_le2`.
pub fn solve_tlsd_layer1(ye: &DMatrix<f64>, dict: &SpeechDictionary, cfg: &SolverConfig) -> Result<LsdResult> {
    let lambda = cfg.lambda_le2.resolve(ye.nrows(), ye.ncols());
    alm(ye, Some(dict.atoms()), lambda, cfg)
}

/// Second TLSD layer: `S₁ = S_e + L_{e,1}` with weight `lambda_le1`.
/// The low-rank part is returned in `l_lowrank`.
pub fn solve_tlsd_layer2(s1: &DMatrix<f64>, cfg: &SolverConfig) -> Result<LsdResult> {
    let lambda = cfg.lambda_le1.resolve(s1.nrows(), s1.ncols());
    alm(s1, None, lambda, cfg)
}

/// Both TLSD layers. `s` is `S_e`, `l_coherent` is `L_{e,1}` and `l_lowrank`
/// is `L_{e,2}`; iteration counts add up and traces are concatenated.
pub fn solve_tlsd(ye: &DMatrix<f64>, dict: &SpeechDictionary, cfg: &SolverConfig) -> Result<LsdResult> {
    let first = solve_tlsd_layer1(ye, dict, cfg)?;
    let second = solve_tlsd_layer2(&first.s, cfg)?;
    let mut trace = first.trace;
    trace.extend(second.trace);
    Ok(LsdResult {
        s: second.s,
        l_coherent: Some(second.l_lowrank),
        l_lowrank: first.l_lowrank,
        iterations: first.iterations + second.iterations,
        final_residual: first.final_residual.max(second.final_residual),
        converged: first.converged && second.converged,
        ptype_failures: 0,
        trace,
    })
}

/// RPCA split `Yd = S_d + L_d` with weight `lambda_ld`.
pub fn solve_rpca_details(yd: &DMatrix<f64>, cfg: &SolverConfig) -> Result<LsdResult> {
    let lambda = cfg.lambda_ld.resolve(yd.nrows(), yd.ncols());
    alm(yd, None, lambda, cfg)
}

fn eta_value(rule: EtaRule, ye: &DMatrix<f64>, d: &DMatrix<f64>) -> Result<f64> {
    let eta = match rule {
        EtaRule::DictionarySpectral => linalg::spectral_norm(d)?.powi(2),
        EtaRule::DataSpectral => linalg::spectral_norm(ye)?.powi(2),
        EtaRule::Fixed(e) => e,
    };
    Ok(if eta > 0.0 { eta } else { 1.0 })
}

/// LADMAP for `Ye = D(S_e + L_{e,1}) + L_{e,2}`.
pub fn solve_slsd(ye: &DMatrix<f64>, dict: &SpeechDictionary, cfg: &SolverConfig) -> Result<LsdResult> {
    cfg.validate()?;
    check_input(ye, "envelope matrix")?;
    let d = dict.atoms();
    let (n, m) = ye.shape();
    if d.nrows() != n {
        return Err(Error::Shape(format!("dictionary has {} rows, data has {n}", d.nrows())));
    }
    let r = d.ncols();
    let lambda1 = cfg.lambda_le1.resolve(n, m);
    let lambda2 = cfg.lambda_le2.resolve(n, m);
    let eta = eta_value(cfg.eta, ye, d)?;
    let ns = NormalSolve::new(Some(d))?;
    let mut rho = initial_rho(cfg, lambda2, ye);

    let mut s = DMatrix::zeros(r, m);
    let mut b = DMatrix::zeros(r, m);
    let mut l1 = DMatrix::zeros(r, m);
    let mut l2 = DMatrix::zeros(n, m);
    let mut d1 = DMatrix::zeros(r, m);
    let mut d2 = DMatrix::zeros(n, m);
    let mut trace = Vec::new();
    let mut last = f64::INFINITY;
    let mut iterations = 0;
    let mut ptype_failures = 0;

    for it in 1..=cfg.max_iter {
        iterations = it;
        let inv = 1.0 / rho;
        let lagged_gap = inf_norm_diff(&b, &s);

        let rhs = ns.apply_t(&(ye - ns.apply(&l1) - &l2 + &d2 * inv)) + &b + &d1 * inv;
        s = ns.solve(rhs);
        let theta = cfg.theta.threshold(&s);
        floor_in_place(&mut s, theta);

        let b_new = (&s - &d1 * inv).map(|v| prox::shrink(v, inv).max(0.0));

        let inner = ye - ns.apply(&(&s + &l1)) - &l2 + &d2 * inv;
        let step = &l1 + ns.apply_t(&inner) / eta;
        let l1_new = match prox::ptype_svt(&step, lambda1 / (eta * rho), &cfg.ptype) {
            Ok(v) => v,
            Err(Error::NotConverged { last, .. }) => {
                ptype_failures += 1;
                *last
            }
            Err(e) => return Err(e),
        };
        let ds = ns.apply(&(&s + &l1_new));
        let l2_new = prox::svt(&(ye - &ds + &d2 * inv), lambda2 * inv)?;

        let sparse_gap = if cfg.lagged_stop_rule {
            lagged_gap
        } else {
            inf_norm_diff(&b_new, &s)
        };
        let aux_change = inf_norm_diff(&b_new, &b);
        let coherent_change = inf_norm_diff(&l1_new, &l1);
        let lowrank_change = inf_norm_diff(&l2_new, &l2);
        b = b_new;
        l1 = l1_new;
        l2 = l2_new;

        d1 += (&b - &s) * rho;
        let residual = ye - &ds - &l2;
        d2 += &residual * rho;
        let primal_residual = residual.amax();

        let stop_value = sparse_gap
            .max(aux_change)
            .max(coherent_change)
            .max(primal_residual);
        if cfg.trace {
            trace.push(IterationRecord {
                iteration: it,
                rho,
                sparse_gap,
                aux_change,
                lowrank_change,
                coherent_change,
                primal_residual,
                stop_value,
            });
        }
        rho *= cfg.mu;
        last = stop_value;
        if stop_value <= cfg.eps {
            break;
        }
    }
    let converged = last <= cfg.eps;
    debug!("slsd: {iterations} iterations, residual {last:e}, p-type failures {ptype_failures}");
    Ok(LsdResult {
        s,
        l_coherent: Some(l1),
        l_lowrank: l2,
        iterations,
        final_residual: last,
        converged,
        ptype_failures,
        trace,
    })
}

/// Writes a solver trace as CSV with a leading `stage` column.
pub fn write_trace_csv<W: Write>(out: W, stage: &str, trace: &[IterationRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "stage",
        "iteration",
        "rho",
        "sparse_gap",
        "aux_change",
        "lowrank_change",
        "coherent_change",
        "primal_residual",
        "stop_value",
    ])?;
    for rec in trace {
        w.write_record([
            stage.to_string(),
            rec.iteration.to_string(),
            format!("{:e}", rec.rho),
            format!("{:e}", rec.sparse_gap),
            format!("{:e}", rec.aux_change),
            format!("{:e}", rec.lowrank_change),
            format!("{:e}", rec.coherent_change),
            format!("{:e}", rec.primal_residual),
            format!("{:e}", rec.stop_value),
        ])?;
    }
    w.flush()?;
    Ok(())
}
