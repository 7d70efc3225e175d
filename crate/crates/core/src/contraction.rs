//! Drivers: power methods on a transfer column and the light-cone evolution.
//!
//! Trains follow the orientation of [`crate::tmpo`]: a right train `R` has its
//! legs facing left and is grown with `E R`, a left train `L` faces right and
//! is grown with `L E` ([`apply_mpo_left`]). Every reported value is a ratio
//! such as `<L|E_O|R> / <L|E_1|R>`, so the rescaling applied between
//! iterations never shows up in results.

use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use ndarray::Array2;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::entropy::{gen_renyi2, gen_tsallis2, shannon};
use crate::error::{Error, Result};
use crate::models::{self, ModelParams, Part};
use crate::mps::{apply_mpo, apply_mpo_left, apply_mpo_left_zip, apply_mpo_zip, entanglement_spectrum, expval_lr, norm, overlap_noconj, truncate_rdm, TensorTrain};
use crate::mps::TensorTrainOperator;
use crate::tensor::{IndexLabel, LabeledTensor};
use crate::tmpo::{boundary_state, cone_column, fold_cap, make_fold_blocks, BlockSet, FoldBlocks, TmpoParams};
use crate::truncation::{
    rtm_singular_spectrum, truncate_rtm, truncate_rtm_symmetric, truncate_rtm_symmetric_eig, TruncationSpec,
};

/// Largest bond dimension [`init_cone`] builds without truncation.
pub const INIT_CONE_MAX_CHI: usize = 4096;
/// Relative weight dropped when forming the operator-weighted partner train
/// on the cone. The partner only selects the kept subspace, so this sits far
/// below any useful truncation cutoff.
pub const ZIP_CUTOFF: f64 = 1e-18;

/// Which reduced object drives truncation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OptMethod {
    /// Each train on its own, by its reduced density matrix.
    Rdm,
    /// Joint sweep over the pair's reduced transition matrix.
    #[default]
    Rtm,
    /// Operator-aware: `(L E_1, E_O R)` updates `L`, `(L E_O, E_1 R)` updates `R`.
    RtmLr,
    /// Operator-aware, one side only; the other side is its mirror image.
    RtmR,
    /// Symmetric single-train sweep through the complex orthogonal eigenproblem.
    RtmEig,
}

impl OptMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Rdm => "RDM",
            Self::Rtm => "RTM",
            Self::RtmLr => "RTM_LR",
            Self::RtmR => "RTM_R",
            Self::RtmEig => "RTM_EIG",
        }
    }
}

impl std::str::FromStr for OptMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "RDM" => Ok(Self::Rdm),
            "RTM" => Ok(Self::Rtm),
            "RTM_LR" => Ok(Self::RtmLr),
            "RTM_R" => Ok(Self::RtmR),
            "RTM_EIG" => Ok(Self::RtmEig),
            _ => Err(Error::Config(format!("unknown opt_method {s:?}"))),
        }
    }
}

/// How trains are rescaled after each truncation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `<L|L> = <R|R> = 1`.
    #[default]
    UnitNorms,
    /// `<L|L> = 1` and `<L|R> = 1` (bilinear).
    UnitOverlap,
    /// The pair handed to the truncation is scaled to unit bilinear overlap.
    PreTruncation,
}

/// One iteration (or cone step) of a driver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Von Neumann entropy of the middle-bond spectrum used by the truncation.
    pub entropy: f64,
    pub delta_entropy: f64,
    pub chi_left: usize,
    pub chi_right: usize,
    /// Eigenvalue estimate `<L|E|R>/<L|R>` (power methods) or `<L|E_1|R>/<L|R>` (cone).
    pub norm_factor: C64,
    pub observables: Vec<(String, C64)>,
    pub discarded: f64,
    pub converged: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ContractionTrace {
    pub records: Vec<IterationRecord>,
    pub converged: bool,
    /// Set when the run stopped without converging and the entropy oscillated.
    pub diagnostic: Option<String>,
}

impl ContractionTrace {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }
}

/// Shared handle onto a trace that other threads may read while a driver runs.
#[derive(Clone, Default)]
pub struct TraceRecorder(Arc<RwLock<ContractionTrace>>);

impl TraceRecorder {
    pub fn snapshot(&self) -> ContractionTrace {
        self.0.read().map(|t| t.clone()).unwrap_or_default()
    }

    fn update(&self, f: impl FnOnce(&mut ContractionTrace)) {
        if let Ok(mut t) = self.0.write() {
            f(&mut t);
        }
    }
}

impl std::fmt::Debug for TraceRecorder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "TraceRecorder({} records)", self.snapshot().records.len())
    }
}

impl PartialEq for TraceRecorder {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerMethodSpec {
    pub truncp: TruncationSpec,
    pub itermax: usize,
    pub eps_converged: f64,
    pub increase_chi: bool,
    pub opt_method: OptMethod,
    #[serde(default)]
    pub normalization: Normalization,
    #[serde(skip)]
    pub recorder: Option<TraceRecorder>,
}

impl Default for PowerMethodSpec {
    fn default() -> Self {
        Self {
            truncp: TruncationSpec::default(),
            itermax: 100,
            eps_converged: 1e-10,
            increase_chi: false,
            opt_method: OptMethod::Rtm,
            normalization: Normalization::UnitNorms,
            recorder: None,
        }
    }
}

impl PowerMethodSpec {
    pub fn validate(&self) -> Result<()> {
        self.truncp.validate()?;
        if self.itermax == 0 {
            return Err(Error::param("itermax", "must be positive"));
        }
        if !(self.eps_converged > 0.0) {
            return Err(Error::param("eps_converged", "must be positive"));
        }
        Ok(())
    }

    /// Truncation used at iteration `it` (1-based), with the bond-dimension ramp applied.
    pub fn truncation_at(&self, it: usize) -> TruncationSpec {
        let m = self.truncp.maxbondim;
        if !self.increase_chi || m == usize::MAX {
            return self.truncp;
        }
        let start = (m / 8).max(8).min(m);
        let half = (self.itermax / 2).max(1);
        let cap = if it >= half { m } else { start + (m - start) * it / half };
        TruncationSpec { maxbondim: cap, ..self.truncp }
    }
}

/// Stopping bookkeeping shared by the power methods.
struct Convergence<'a> {
    spec: &'a PowerMethodSpec,
    trace: ContractionTrace,
    prev: f64,
}

impl<'a> Convergence<'a> {
    fn new(spec: &'a PowerMethodSpec, s0: f64) -> Self {
        if let Some(r) = &spec.recorder {
            r.update(|t| *t = ContractionTrace::default());
        }
        Self { spec, trace: ContractionTrace::default(), prev: s0 }
    }

    /// Record one iteration and report whether the run has converged.
    #[allow(clippy::too_many_arguments)]
    fn push(&mut self, it: usize, s: f64, l: &TensorTrain, r: &TensorTrain, lam: C64, obs: Vec<(String, C64)>, disc: f64) -> bool {
        let ds = (s - self.prev).abs();
        self.prev = s;
        let converged = ds < self.spec.eps_converged;
        let rec = IterationRecord {
            iteration: it,
            entropy: s,
            delta_entropy: ds,
            chi_left: l.max_bond_dim(),
            chi_right: r.max_bond_dim(),
            norm_factor: lam,
            observables: obs,
            discarded: disc,
            converged,
        };
        if let Some(rc) = &self.spec.recorder {
            let rec = rec.clone();
            rc.update(|t| {
                t.records.push(rec);
                t.converged = converged;
            });
        }
        self.trace.records.push(rec);
        self.trace.converged = converged;
        converged
    }

    fn finish(mut self) -> ContractionTrace {
        if !self.trace.converged {
            self.trace.diagnostic = oscillation_diagnostic(&self.trace.records);
        }
        if let Some(rc) = &self.spec.recorder {
            let t = self.trace.clone();
            rc.update(|x| *x = t);
        }
        self.trace
    }
}

/// Flags an entropy that keeps moving without settling over the last five iterations.
fn oscillation_diagnostic(records: &[IterationRecord]) -> Option<String> {
    const WINDOW: usize = 5;
    if records.len() < WINDOW {
        return None;
    }
    let w = &records[records.len() - WINDOW..];
    let mean = w.iter().map(|r| r.entropy).sum::<f64>() / WINDOW as f64;
    let var = w.iter().map(|r| (r.entropy - mean).powi(2)).sum::<f64>() / WINDOW as f64;
    let first = w[0].delta_entropy;
    let last = w[WINDOW - 1].delta_entropy;
    (var > 0.0 && last >= 0.5 * first).then(|| {
        format!(
            "entropy oscillates (window variance {var:.3e}, last dS {last:.3e}); the dominant eigenvalue may be degenerate or the spectral gap tiny"
        )
    })
}

fn mid(n: usize) -> usize {
    n / 2
}

fn rdm_entropy(psi: &TensorTrain) -> Result<f64> {
    if psi.len() < 2 {
        return Ok(0.0);
    }
    Ok(entanglement_spectrum(psi, mid(psi.len()))?.entropy)
}

fn rtm_entropy(l: &TensorTrain, r: &TensorTrain) -> f64 {
    if r.len() < 2 {
        return 0.0;
    }
    rtm_singular_spectrum(l, r, mid(r.len())).map(|p| shannon(&p)).unwrap_or(0.0)
}

fn spectra_entropy(spectra: &[Vec<f64>], n: usize) -> f64 {
    if n < 2 {
        return 0.0;
    }
    spectra.get(mid(n)).map(|p| shannon(p)).unwrap_or(0.0)
}

fn unit(t: &TensorTrain) -> Result<TensorTrain> {
    let nn = norm(t)?;
    if !(nn > 0.0) || !nn.is_finite() {
        return Err(Error::NonFinite(format!("train norm {nn}")));
    }
    Ok(t.scale(C64::new(1.0 / nn, 0.0)))
}

/// Rescale a pair to unit bilinear overlap, splitting the factor evenly.
fn unit_overlap_pair(l: &TensorTrain, r: &TensorTrain) -> Result<(TensorTrain, TensorTrain)> {
    let (l, r) = (unit(l)?, unit(r)?);
    let ov = overlap_noconj(&l, &r)?;
    if ov.norm() == 0.0 || !ov.is_finite() {
        return Ok((l, r));
    }
    let s = ov.sqrt().inv();
    Ok((l.scale(s), r.scale(s)))
}

fn normalize(l: &TensorTrain, r: &TensorTrain, how: Normalization) -> Result<(TensorTrain, TensorTrain)> {
    let (l, r) = (unit(l)?, unit(r)?);
    match how {
        Normalization::UnitOverlap => {
            let ov = overlap_noconj(&l, &r)?;
            if ov.norm() == 0.0 || !ov.is_finite() {
                return Err(Error::VanishingOverlap(ov.norm()));
            }
            Ok((l, r.scale(ov.inv())))
        }
        _ => Ok((l, r)),
    }
}

fn pre_truncation(l: TensorTrain, r: TensorTrain, how: Normalization) -> Result<(TensorTrain, TensorTrain)> {
    match how {
        Normalization::PreTruncation => unit_overlap_pair(&l, &r),
        _ => Ok((unit(&l)?, unit(&r)?)),
    }
}

fn ratio(l: &TensorTrain, e: &TensorTrainOperator, r: &TensorTrain) -> Result<C64> {
    Ok(expval_lr(l, e, r)? / overlap_noconj(l, r)?)
}

/// Result of [`powermethod_both`] and [`powermethod_op`].
#[derive(Clone, Debug)]
pub struct PowerResult {
    pub l: TensorTrain,
    pub r: TensorTrain,
    pub trace: ContractionTrace,
}

/// Optimize left and right dominant eigenvectors: `L <- L E_left`, `R <- E_right R`.
pub fn powermethod_both(
    init: &TensorTrain,
    e_left: &TensorTrainOperator,
    e_right: &TensorTrainOperator,
    spec: &PowerMethodSpec,
) -> Result<PowerResult> {
    spec.validate()?;
    if !matches!(spec.opt_method, OptMethod::Rdm | OptMethod::Rtm) {
        return Err(Error::Config(format!("{:?} is not available for powermethod_both", spec.opt_method)));
    }
    let (mut l, mut r) = normalize(init, init, spec.normalization)?;
    let s0 = match spec.opt_method {
        OptMethod::Rdm => rdm_entropy(&r)?,
        _ => rtm_entropy(&l, &r),
    };
    let mut conv = Convergence::new(spec, s0);
    for it in 1..=spec.itermax {
        let tp = spec.truncation_at(it);
        let (l1, r1) = pre_truncation(apply_mpo_left(e_left, &l)?, apply_mpo(e_right, &r)?, spec.normalization)?;
        let (nl, nr, s, disc) = match spec.opt_method {
            OptMethod::Rdm => {
                let maxdim = (tp.maxbondim != usize::MAX).then_some(tp.maxbondim);
                let (nl, el) = truncate_rdm(&l1, tp.cutoff, maxdim)?;
                let (nr, er) = truncate_rdm(&r1, tp.cutoff, maxdim)?;
                let s = rdm_entropy(&nr)?;
                (nl, nr, s, el.iter().chain(&er).sum())
            }
            _ => {
                let res = truncate_rtm(&l1, &r1, &tp)?;
                let s = spectra_entropy(&res.spectra, r1.len());
                let d = res.total_discarded();
                (res.l_out, res.r_out, s, d)
            }
        };
        (l, r) = normalize(&nl, &nr, spec.normalization)?;
        let lam = ratio(&l, e_right, &r)?;
        if conv.push(it, s, &l, &r, lam, vec![], disc) {
            break;
        }
    }
    Ok(PowerResult { l, r, trace: conv.finish() })
}

/// Result of [`powermethod_sym`].
#[derive(Clone, Debug)]
pub struct SymPowerResult {
    pub psi: TensorTrain,
    pub trace: ContractionTrace,
}

/// Single-train power method for a left-right symmetric column: the left
/// eigenvector is the transpose of the right one.
pub fn powermethod_sym(init: &TensorTrain, e: &TensorTrainOperator, spec: &PowerMethodSpec) -> Result<SymPowerResult> {
    spec.validate()?;
    if spec.opt_method == OptMethod::RtmLr {
        return Err(Error::Config("RTM_LR needs an operator column; use powermethod_op".into()));
    }
    let sym_norm = |p: &TensorTrain| -> Result<TensorTrain> {
        let p = unit(p)?;
        match spec.normalization {
            Normalization::UnitNorms => Ok(p),
            _ => {
                let ov = overlap_noconj(&p, &p)?;
                if ov.norm() == 0.0 {
                    return Err(Error::VanishingOverlap(0.0));
                }
                Ok(p.scale(ov.sqrt().inv()))
            }
        }
    };
    let mut psi = sym_norm(init)?;
    let s0 = match spec.opt_method {
        OptMethod::Rdm => rdm_entropy(&psi)?,
        _ => rtm_entropy(&psi, &psi),
    };
    let mut conv = Convergence::new(spec, s0);
    for it in 1..=spec.itermax {
        let tp = spec.truncation_at(it);
        let p1 = sym_norm(&apply_mpo(e, &psi)?)?;
        let (np, s, disc) = match spec.opt_method {
            OptMethod::Rdm => {
                let maxdim = (tp.maxbondim != usize::MAX).then_some(tp.maxbondim);
                let (np, errs) = truncate_rdm(&p1, tp.cutoff, maxdim)?;
                let s = rdm_entropy(&np)?;
                (np, s, errs.iter().sum())
            }
            OptMethod::RtmEig => {
                let res = truncate_rtm_symmetric_eig(&p1, &tp)?;
                (res.psi, spectra_entropy(&res.spectra, p1.len()), res.discarded.iter().sum())
            }
            _ => {
                let res = truncate_rtm_symmetric(&p1, &tp)?;
                (res.psi, spectra_entropy(&res.spectra, p1.len()), res.discarded.iter().sum())
            }
        };
        psi = sym_norm(&np)?;
        let lam = ratio(&psi, e, &psi)?;
        if conv.push(it, s, &psi, &psi, lam, vec![], disc) {
            break;
        }
    }
    Ok(SymPowerResult { psi, trace: conv.finish() })
}

/// Power method for an expectation value: `e_1` is the folded column without
/// operator, `e_o` the same column measuring the operator. The trace records
/// `<L|E_O|R> / <L|E_1|R>` under the name `"op"`.
pub fn powermethod_op(
    init: &TensorTrain,
    e_1: &TensorTrainOperator,
    e_o: &TensorTrainOperator,
    spec: &PowerMethodSpec,
) -> Result<PowerResult> {
    spec.validate()?;
    if spec.opt_method == OptMethod::RtmEig {
        return Err(Error::Config("RTM_EIG is only available for powermethod_sym".into()));
    }
    let (mut l, mut r) = normalize(init, init, spec.normalization)?;
    let s0 = match spec.opt_method {
        OptMethod::Rdm => rdm_entropy(&r)?,
        _ => rtm_entropy(&l, &r),
    };
    let mut conv = Convergence::new(spec, s0);
    for it in 1..=spec.itermax {
        let tp = spec.truncation_at(it);
        let maxdim = (tp.maxbondim != usize::MAX).then_some(tp.maxbondim);
        let (nl, nr, s, disc) = match spec.opt_method {
            OptMethod::Rdm => {
                let (nl, el) = truncate_rdm(&unit(&apply_mpo_left(e_1, &l)?)?, tp.cutoff, maxdim)?;
                let (nr, er) = truncate_rdm(&unit(&apply_mpo(e_1, &r)?)?, tp.cutoff, maxdim)?;
                let s = rdm_entropy(&nr)?;
                (nl, nr, s, el.iter().chain(&er).sum())
            }
            OptMethod::RtmR => {
                let (lo, r1) = pre_truncation(apply_mpo_left(e_o, &r)?, apply_mpo(e_1, &r)?, spec.normalization)?;
                let res = truncate_rtm(&lo, &r1, &tp)?;
                let s = spectra_entropy(&res.spectra, r1.len());
                let d = res.total_discarded();
                (res.r_out.clone(), res.r_out, s, d)
            }
            _ => {
                let (l1, ro) = pre_truncation(apply_mpo_left(e_1, &l)?, apply_mpo(e_o, &r)?, spec.normalization)?;
                let left = truncate_rtm(&l1, &ro, &tp)?;
                let (lo, r1) = pre_truncation(apply_mpo_left(e_o, &l)?, apply_mpo(e_1, &r)?, spec.normalization)?;
                let right = truncate_rtm(&lo, &r1, &tp)?;
                let s = spectra_entropy(&right.spectra, r1.len());
                let d = left.total_discarded() + right.total_discarded();
                (left.l_out, right.r_out, s, d)
            }
        };
        (l, r) = normalize(&nl, &nr, spec.normalization)?;
        let one = expval_lr(&l, e_1, &r)?;
        let val = expval_lr(&l, e_o, &r)? / one;
        let lam = one / overlap_noconj(&l, &r)?;
        if conv.push(it, s, &l, &r, lam, vec![("op".into(), val)], disc) {
            break;
        }
    }
    Ok(PowerResult { l, r, trace: conv.finish() })
}

/// Named one-site observables: `id`, Pauli `sx`/`sy`/`sz` for Ising, spin
/// operators `sx`/`sy`/`sz` for XXZ, `clock`/`shift` (and `sz` as the clock) for Potts.
pub fn named_observable(mp: &ModelParams, name: &str) -> Result<Array2<C64>> {
    let d = mp.local_dim();
    let unknown = || Error::Config(format!("unknown observable {name:?} for this model"));
    if name == "id" {
        return Ok(crate::linalg::eye(d));
    }
    match *mp {
        ModelParams::Ising { .. } => match name {
            "sx" => Ok(models::pauli_x()),
            "sy" => Ok(models::pauli_y()),
            "sz" => Ok(models::pauli_z()),
            _ => Err(unknown()),
        },
        ModelParams::Potts { .. } => match name {
            "clock" | "sz" => Ok(models::potts_clock()),
            "shift" => Ok(models::potts_shift()),
            _ => Err(unknown()),
        },
        ModelParams::Xxz { spin, .. } => {
            let (sx, sy, sz) = models::spin_ops(spin);
            match name {
                "sx" => Ok(sx),
                "sy" => Ok(sy),
                "sz" => Ok(sz),
                _ => Err(unknown()),
            }
        }
    }
}

/// Entropies the cone can record at the middle cut of the `(L, R)` pair.
pub const ENTROPY_NAMES: [&str; 4] = ["renyi2_gen", "tsallis2_gen", "vn_rdm", "vn_rtm"];

/// Entropy `name` (one of [`ENTROPY_NAMES`]) of a pair at its middle cut.
pub fn pair_entropy(name: &str, l: &TensorTrain, r: &TensorTrain) -> Result<C64> {
    let n = r.len();
    if n < 2 {
        return Ok(C64::new(0.0, 0.0));
    }
    let b = mid(n);
    match name {
        "renyi2_gen" => Ok(gen_renyi2(r, l)?[b - 1]),
        "tsallis2_gen" => Ok(gen_tsallis2(r, l)?[b - 1]),
        "vn_rdm" => Ok(C64::new(rdm_entropy(r)?, 0.0)),
        "vn_rtm" => Ok(C64::new(shannon(&rtm_singular_spectrum(l, r, b)?), 0.0)),
        _ => Err(Error::Config(format!("unknown entropy {name:?}"))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeSpec {
    pub truncp: TruncationSpec,
    pub opt_method: OptMethod,
    /// Operator inserted in the truncated pair; defaults to the first of `which_evs`.
    #[serde(skip)]
    pub optimize_op: Option<Array2<C64>>,
    pub which_evs: Vec<String>,
    pub which_ents: Vec<String>,
    /// Write a checkpoint every this many steps (0 disables).
    pub checkpoint: usize,
    pub checkpoint_path: Option<PathBuf>,
    /// Time layers added per step; one new column is added per step.
    pub vwidth: usize,
    #[serde(skip)]
    pub recorder: Option<TraceRecorder>,
}

impl Default for ConeSpec {
    fn default() -> Self {
        Self {
            truncp: TruncationSpec::default(),
            opt_method: OptMethod::RtmLr,
            optimize_op: None,
            which_evs: vec!["sz".into()],
            which_ents: vec![],
            checkpoint: 0,
            checkpoint_path: None,
            vwidth: 1,
            recorder: None,
        }
    }
}

/// Observables and entropies after one cone step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeRecord {
    pub step: usize,
    /// Number of time layers in the trains.
    pub nt: usize,
    pub time: f64,
    pub observables: Vec<(String, C64)>,
    pub entropies: Vec<(String, C64)>,
    pub chi: usize,
    pub discarded: f64,
}

#[derive(Clone, Debug)]
pub struct ConeResult {
    pub l: TensorTrain,
    pub r: TensorTrain,
    pub series: Vec<ConeRecord>,
    pub trace: ContractionTrace,
}

fn check_cone_set(set: &BlockSet) -> Result<()> {
    if !set.causal {
        return Err(Error::Config("the light cone needs a builder with a strict causal cone (Ising or Potts)".into()));
    }
    if set.nbeta != 0 {
        return Err(Error::Config("the light cone does not support imaginary-time layers".into()));
    }
    Ok(())
}

/// Grow a right train by `w` layers and one column; `None` starts from an empty cone.
fn grow_right(set: &BlockSet, r: Option<&TensorTrain>, w: usize) -> Result<TensorTrain> {
    match r {
        None => boundary_state(&cone_column(set, w, w, Part::Right)?, Part::Right),
        Some(r) => apply_mpo(&cone_column(set, r.len() + w, w, Part::Right)?, &r.padded(w)?),
    }
}

fn grow_left(set: &BlockSet, l: Option<&TensorTrain>, w: usize) -> Result<TensorTrain> {
    match l {
        None => boundary_state(&cone_column(set, w, w, Part::Left)?, Part::Left),
        Some(l) => apply_mpo_left(&cone_column(set, l.len() + w, w, Part::Left)?, &l.padded(w)?),
    }
}

/// Centre column of `nt` layers measuring `op` (identity when `None`).
fn centre(b: &FoldBlocks, nt: usize, op: Option<&Array2<C64>>) -> Result<TensorTrainOperator> {
    let cap = fold_cap(b, op)?;
    b.set.column(&vec![Part::Center; nt], Some(&cap))
}

fn measure(l: &TensorTrain, r: &TensorTrain, b: &FoldBlocks, ops: &[(String, Array2<C64>)]) -> Result<(C64, Vec<(String, C64)>)> {
    let n = r.len();
    let one = expval_lr(l, &centre(b, n, None)?, r)?;
    let mut out = Vec::with_capacity(ops.len());
    for (name, op) in ops {
        out.push((name.clone(), expval_lr(l, &centre(b, n, Some(op))?, r)? / one));
    }
    Ok((one, out))
}

/// Normalized expectation values `<L|E_O|R> / <L|E_1|R>` of cone trains.
pub fn cone_expectations(l: &TensorTrain, r: &TensorTrain, b: &FoldBlocks, ops: &[(String, Array2<C64>)]) -> Result<Vec<(String, C64)>> {
    Ok(measure(l, r, b, ops)?.1)
}

/// Exact folded cone trains for `n` time steps (one column per step, no truncation).
pub fn init_cone(tp: &TmpoParams, n: usize) -> Result<(TensorTrain, TensorTrain)> {
    init_cone_capped(tp, n, INIT_CONE_MAX_CHI)
}

/// [`init_cone`] with an explicit bond-dimension guard. After each column the
/// trains are recompressed with a cutoff of zero, which only removes exactly
/// vanishing singular values.
pub fn init_cone_capped(tp: &TmpoParams, n: usize, max_chi: usize) -> Result<(TensorTrain, TensorTrain)> {
    let b = make_fold_blocks(tp)?;
    check_cone_set(&b.set)?;
    if n == 0 {
        return Err(Error::param("n", "need at least one step"));
    }
    let exact = |t: TensorTrain| -> Result<TensorTrain> { unit(&truncate_rdm(&t, 0.0, None)?.0) };
    // Each column multiplies the bond dimension by at most its vertical link dimension.
    let growth = b.set.rot.down.dim();
    let (mut l, mut r) = (None::<TensorTrain>, None::<TensorTrain>);
    for _ in 0..n {
        let now = r.as_ref().map_or(1, |t| t.max_bond_dim()).max(l.as_ref().map_or(1, |t| t.max_bond_dim()));
        if growth * now > max_chi {
            return Err(Error::param("n", format!("exact cone would exceed bond dimension {max_chi}")));
        }
        let nr = exact(grow_right(&b.set, r.as_ref(), 1)?)?;
        let nl = if b.set.mirror_symmetric { nr.clone() } else { exact(grow_left(&b.set, l.as_ref(), 1)?)? };
        l = Some(nl);
        r = Some(nr);
    }
    Ok((l.unwrap(), r.unwrap()))
}

/// Evolve the cone trains from their current length to `nt_final` layers.
pub fn run_cone(l: &TensorTrain, r: &TensorTrain, b: &FoldBlocks, spec: &ConeSpec, nt_final: usize) -> Result<ConeResult> {
    run_cone_from(l, r, b, spec, nt_final, 0)
}

/// [`run_cone`] with the step counter starting at `first_step` (resuming from a checkpoint).
pub fn run_cone_from(
    l: &TensorTrain,
    r: &TensorTrain,
    b: &FoldBlocks,
    spec: &ConeSpec,
    nt_final: usize,
    first_step: usize,
) -> Result<ConeResult> {
    spec.truncp.validate()?;
    check_cone_set(&b.set)?;
    if spec.vwidth == 0 {
        return Err(Error::param("vwidth", "must be at least 1"));
    }
    if l.len() != r.len() {
        return Err(Error::LengthMismatch(l.len(), r.len()));
    }
    if nt_final <= r.len() {
        return Err(Error::param("nt_final", format!("must exceed the current length {}", r.len())));
    }
    let mp = &b.tp.mp;
    let evs: Vec<(String, Array2<C64>)> =
        spec.which_evs.iter().map(|n| Ok((n.clone(), named_observable(mp, n)?))).collect::<Result<_>>()?;
    for e in &spec.which_ents {
        if !ENTROPY_NAMES.contains(&e.as_str()) {
            return Err(Error::Config(format!("unknown entropy {e:?}")));
        }
    }
    let symmetric = b.set.mirror_symmetric;
    let needs_op = matches!(spec.opt_method, OptMethod::RtmLr | OptMethod::RtmR);
    let opt_op = match (&spec.optimize_op, evs.first()) {
        (Some(op), _) => Some(op.clone()),
        (None, Some((_, op))) => Some(op.clone()),
        (None, None) => None,
    };
    if needs_op && opt_op.is_none() {
        return Err(Error::Config("RTM_LR and RTM_R need optimize_op or an observable".into()));
    }
    match spec.opt_method {
        OptMethod::RtmEig => return Err(Error::Config("RTM_EIG is not available on the light cone".into())),
        OptMethod::RtmR if !symmetric => {
            return Err(Error::Config("RTM_R needs a mirror-symmetric network".into()));
        }
        _ => {}
    }
    let recorder = spec.recorder.clone().unwrap_or_default();
    recorder.update(|t| *t = ContractionTrace::default());
    // Each step normalizes after growing, so the inputs are used as given
    // (a resumed run then repeats the uninterrupted one bit for bit).
    let (mut l, mut r) = (l.clone(), r.clone());
    if symmetric {
        l = r.clone();
    }
    let mut series = Vec::new();
    let mut trace = ContractionTrace::default();
    let mut step = first_step;
    let mut prev_s = 0.0;
    while r.len() < nt_final {
        let w = spec.vwidth.min(nt_final - r.len());
        let r1 = unit(&grow_right(&b.set, Some(&r), w)?)?;
        let l1 = if symmetric { r1.clone() } else { unit(&grow_left(&b.set, Some(&l), w)?)? };
        let n = r1.len();
        let tp = spec.truncp;
        let maxdim = (tp.maxbondim != usize::MAX).then_some(tp.maxbondim);
        let (nl, nr, disc) = match spec.opt_method {
            OptMethod::Rdm => {
                let (nr, er) = truncate_rdm(&r1, tp.cutoff, maxdim)?;
                if symmetric {
                    (nr.clone(), nr, er.iter().sum())
                } else {
                    let (nl, el) = truncate_rdm(&l1, tp.cutoff, maxdim)?;
                    (nl, nr, er.iter().chain(&el).sum())
                }
            }
            OptMethod::Rtm => {
                let res = truncate_rtm(&l1, &r1, &tp)?;
                let d = res.total_discarded();
                if symmetric {
                    (res.r_out.clone(), res.r_out, d)
                } else {
                    (res.l_out, res.r_out, d)
                }
            }
            _ => {
                // The partner trains only pick the kept subspace, so they are
                // formed from lightly compressed copies.
                let e_o = centre(b, n, opt_op.as_ref())?;
                let light = |t: &TensorTrain| -> Result<TensorTrain> { Ok(truncate_rdm(t, ZIP_CUTOFF, None)?.0) };
                let lo = apply_mpo_left_zip(&e_o, &light(&l1)?, ZIP_CUTOFF)?;
                let (lo, rr) = unit_overlap_pair(&lo, &r1)?;
                let right = truncate_rtm(&lo, &rr, &tp)?;
                if symmetric {
                    let d = right.total_discarded();
                    (right.r_out.clone(), right.r_out, d)
                } else {
                    let ro = apply_mpo_zip(&e_o, &light(&r1)?, ZIP_CUTOFF)?;
                    let (ll, ro) = unit_overlap_pair(&l1, &ro)?;
                    let left = truncate_rtm(&ll, &ro, &tp)?;
                    let d = left.total_discarded() + right.total_discarded();
                    (left.l_out, right.r_out, d)
                }
            }
        };
        r = unit(&nr)?;
        l = if symmetric { r.clone() } else { unit(&nl)? };
        step += 1;

        let (one, observables) = measure(&l, &r, b, &evs)?;
        let entropies: Vec<(String, C64)> =
            spec.which_ents.iter().map(|e| Ok((e.clone(), pair_entropy(e, &l, &r)?))).collect::<Result<_>>()?;
        let s = if n >= 2 { rtm_entropy(&l, &r) } else { 0.0 };
        let rec = ConeRecord {
            step,
            nt: n,
            time: n as f64 * b.tp.dt,
            observables: observables.clone(),
            entropies,
            chi: r.max_bond_dim().max(l.max_bond_dim()),
            discarded: disc,
        };
        let it = IterationRecord {
            iteration: step,
            entropy: s,
            delta_entropy: (s - prev_s).abs(),
            chi_left: l.max_bond_dim(),
            chi_right: r.max_bond_dim(),
            norm_factor: one / overlap_noconj(&l, &r)?,
            observables,
            discarded: disc,
            converged: false,
        };
        prev_s = s;
        recorder.update(|t| t.records.push(it.clone()));
        trace.records.push(it);
        series.push(rec);
        if spec.checkpoint > 0 && step % spec.checkpoint == 0 {
            if let Some(path) = &spec.checkpoint_path {
                Checkpoint::new("cone", step, &l, &r)?.save(path)?;
            }
        }
    }
    trace.converged = true;
    recorder.update(|t| t.converged = true);
    Ok(ConeResult { l, r, series, trace })
}

/// Dense site data of a train, stored as `(left link, physical, right link)` in row-major order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainData {
    pub phys: Vec<usize>,
    pub links: Vec<usize>,
    pub sites: Vec<Vec<[f64; 2]>>,
    /// Orthogonality center, when the stored train is in canonical form.
    #[serde(default)]
    pub center: Option<usize>,
}

impl TrainData {
    pub fn from_train(t: &TensorTrain) -> Result<Self> {
        let n = t.len();
        let sites = (0..n)
            .map(|i| {
                let a = t.site(i).to_array(&[t.link(i).clone(), t.phys(i).clone(), t.link(i + 1).clone()])?;
                Ok(a.iter().map(|z| [z.re, z.im]).collect())
            })
            .collect::<Result<_>>()?;
        Ok(Self { phys: t.phys_labels().iter().map(IndexLabel::dim).collect(), links: t.links().iter().map(IndexLabel::dim).collect(), sites, center: t.center() })
    }

    pub fn to_train(&self) -> Result<TensorTrain> {
        let n = self.phys.len();
        if self.links.len() != n + 1 || self.sites.len() != n {
            return Err(Error::Checkpoint("inconsistent train dimensions".into()));
        }
        let phys: Vec<IndexLabel> = self.phys.iter().map(|&d| IndexLabel::new(d, "site")).collect();
        let links: Vec<IndexLabel> = self.links.iter().map(|&d| IndexLabel::new(d, "link")).collect();
        let sites = (0..n)
            .map(|i| {
                let labels = vec![links[i].clone(), phys[i].clone(), links[i + 1].clone()];
                let want: usize = labels.iter().map(IndexLabel::dim).product();
                if self.sites[i].len() != want {
                    return Err(Error::Checkpoint(format!("site {i} has {} entries, expected {want}", self.sites[i].len())));
                }
                let v: Vec<C64> = self.sites[i].iter().map(|p| C64::new(p[0], p[1])).collect();
                let t = ndarray::ArrayD::from_shape_vec(labels.iter().map(IndexLabel::dim).collect::<Vec<_>>(), v)
                    .map_err(|e| Error::Checkpoint(e.to_string()))?;
                LabeledTensor::from_array(labels, t)
            })
            .collect::<Result<_>>()?;
        let mut t = TensorTrain::from_sites(sites, phys, links)?;
        t.assume_center(self.center);
        Ok(t)
    }
}

/// Versioned JSON snapshot of a driver state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    /// `"cone"` or `"power"`.
    pub kind: String,
    pub iteration: usize,
    pub l: TrainData,
    pub r: TrainData,
}

impl Checkpoint {
    pub const FORMAT: &'static str = "transverse-checkpoint";
    pub const VERSION: u32 = 1;

    pub fn new(kind: &str, iteration: usize, l: &TensorTrain, r: &TensorTrain) -> Result<Self> {
        Ok(Self {
            format: Self::FORMAT.into(),
            version: Self::VERSION,
            kind: kind.into(),
            iteration,
            l: TrainData::from_train(l)?,
            r: TrainData::from_train(r)?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string(self).map_err(|e| Error::Checkpoint(e.to_string()))?;
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)?;
        let c: Self = serde_json::from_str(&s).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if c.format != Self::FORMAT || c.version != Self::VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint {} v{}", c.format, c.version)));
        }
        Ok(c)
    }

    pub fn trains(&self) -> Result<(TensorTrain, TensorTrain)> {
        Ok((self.l.to_train()?, self.r.to_train()?))
    }
}
