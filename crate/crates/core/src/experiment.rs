//! Config-driven experiments.
//!
//! A run is described by one TOML file ([`ExperimentConfig`]). Running it
//! writes `results.csv` (a comma-separated table with `#` metadata lines) and
//! `manifest.json` (the resolved configuration, the library version and every
//! value the runner filled in or adjusted) into the output directory.
//!
//! Tables are deterministic: numbers are printed in their shortest
//! round-trip form and wall-clock timings are only written when `wall_ms`
//! is enabled.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::contraction::{
    cone_expectations, init_cone, named_observable, pair_entropy, powermethod_both, powermethod_op, powermethod_sym,
    run_cone_from, Checkpoint, ConeSpec, OptMethod, PowerMethodSpec, ENTROPY_NAMES,
};
use crate::error::{Error, Result};
use crate::models::{ModelParams, Part, Spin};
use crate::mps::{expval_lr, TensorTrain};
use crate::oracle::{tebd_run, DenseState, Propagator};
use crate::tmpo::{folded_tmpo, fw_tmpo, make_fold_blocks, make_fw_blocks, TmpoParams};
use crate::truncation::{Direction, TruncationSpec};

/// Library version written into every manifest.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
/// Chain length used by `exact` and `tebd` when `sites` is not given.
pub const DEFAULT_SITES: usize = 20;
pub const RESULTS_FILE: &str = "results.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
/// Environment variable that relocates every output directory.
pub const OUTPUT_ROOT_ENV: &str = "TRANSVERSE_OUTPUT_ROOT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpinName {
    Half,
    One,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelConfig {
    Ising {
        #[serde(default = "unit")]
        j: f64,
        g: f64,
        #[serde(default)]
        h: f64,
    },
    Potts {
        #[serde(default = "unit")]
        j: f64,
        g: f64,
    },
    Xxz {
        #[serde(default = "unit")]
        j: f64,
        delta: f64,
        #[serde(default = "half")]
        spin: SpinName,
    },
}

fn unit() -> f64 {
    1.0
}

fn half() -> SpinName {
    SpinName::Half
}

impl ModelConfig {
    pub fn params(&self) -> ModelParams {
        match *self {
            ModelConfig::Ising { j, g, h } => ModelParams::Ising { j, g, h },
            ModelConfig::Potts { j, g } => ModelParams::Potts { j, g },
            ModelConfig::Xxz { j, delta, spin } => ModelParams::Xxz {
                j,
                delta,
                spin: match spin {
                    SpinName::Half => Spin::Half,
                    SpinName::One => Spin::One,
                },
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    PowerBoth,
    PowerSym,
    PowerOp,
    Cone,
    Tebd,
    Exact,
}

/// Product initial state, the same vector on every site.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialState {
    /// First basis state (`|0>`, spin up, clock state 0).
    #[default]
    Up,
    /// Last basis state.
    Down,
    /// Uniform superposition.
    Plus,
}

impl InitialState {
    pub fn vector(&self, d: usize) -> Vec<C64> {
        let mut v = vec![C64::new(0.0, 0.0); d];
        match self {
            InitialState::Up => v[0] = C64::new(1.0, 0.0),
            InitialState::Down => v[d - 1] = C64::new(1.0, 0.0),
            InitialState::Plus => v.iter_mut().for_each(|z| *z = C64::new(1.0 / (d as f64).sqrt(), 0.0)),
        }
        v
    }
}

/// Starting train of the power methods.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitGuess {
    /// Boundary column of a finite system.
    #[default]
    Boundary,
    /// Random train drawn from `seed`.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub dt: f64,
    #[serde(default)]
    pub nbeta: usize,
    pub nt_final: usize,
    pub algorithm: Algorithm,
    #[serde(default)]
    pub initial: InitialState,
    /// Chain length for `exact` and `tebd`.
    #[serde(default)]
    pub sites: Option<usize>,
    #[serde(default)]
    pub opt_method: Option<OptMethod>,
    #[serde(default = "default_cutoff")]
    pub cutoff: f64,
    #[serde(default)]
    pub maxbondim: Option<usize>,
    #[serde(default)]
    pub direction: Direction,
    #[serde(default = "default_vwidth")]
    pub vwidth: usize,
    #[serde(default = "default_itermax")]
    pub itermax: usize,
    #[serde(default = "default_eps")]
    pub eps_converged: f64,
    #[serde(default)]
    pub increase_chi: bool,
    #[serde(default)]
    pub init_guess: InitGuess,
    /// Operator inserted in the optimized column (`power_op`, `cone`).
    #[serde(default)]
    pub fold_op: Option<String>,
    #[serde(default)]
    pub which_evs: Option<Vec<String>>,
    #[serde(default)]
    pub which_ents: Vec<String>,
    /// Cone checkpoint interval in steps (0 disables).
    #[serde(default)]
    pub checkpoint: usize,
    /// Continue a cone run from the checkpoint in the output directory.
    #[serde(default)]
    pub resume: bool,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    /// Add a `wall_ms` column (makes the table non-reproducible).
    #[serde(default)]
    pub wall_ms: bool,
}

fn default_cutoff() -> f64 {
    1e-10
}

fn default_vwidth() -> usize {
    1
}

fn default_itermax() -> usize {
    100
}

fn default_eps() -> f64 {
    1e-10
}

fn field(name: &str, reason: impl Into<String>) -> Error {
    Error::Config(format!("field `{name}`: {}", reason.into()))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))
    }

    /// Parse and validate a config file; errors name the file and the line or field.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let cfg = Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), strip(&e))))?;
        cfg.validate().map_err(|e| Error::Config(format!("{}: {}", path.display(), strip(&e))))?;
        Ok(cfg)
    }

    pub fn model_params(&self) -> ModelParams {
        self.model.params()
    }

    pub fn opt_method(&self) -> OptMethod {
        self.opt_method.unwrap_or(match self.algorithm {
            Algorithm::PowerOp | Algorithm::Cone => OptMethod::RtmLr,
            _ => OptMethod::Rtm,
        })
    }

    /// Observables recorded per row; empty for the Loschmidt power methods.
    pub fn observables(&self) -> Vec<String> {
        match (&self.which_evs, self.algorithm) {
            (Some(v), _) => v.clone(),
            (None, Algorithm::PowerBoth | Algorithm::PowerSym) => vec![],
            (None, _) => vec!["sz".into()],
        }
    }

    pub fn sites(&self) -> usize {
        self.sites.unwrap_or(DEFAULT_SITES)
    }

    pub fn truncation(&self) -> TruncationSpec {
        TruncationSpec { cutoff: self.cutoff, maxbondim: self.maxbondim.unwrap_or(usize::MAX), direction: self.direction }
    }

    /// Check every field before any computation starts.
    pub fn validate(&self) -> Result<()> {
        let mp = self.model_params();
        mp.validate().map_err(|e| field("model", strip(&e)))?;
        if !self.dt.is_finite() || self.dt <= 0.0 {
            return Err(field("dt", "must be a positive finite number"));
        }
        if self.nt_final == 0 {
            return Err(field("nt_final", "must be at least 1"));
        }
        self.truncation().validate().map_err(|e| field("cutoff", strip(&e)))?;
        if self.maxbondim == Some(0) {
            return Err(field("maxbondim", "must be positive"));
        }
        if self.vwidth == 0 {
            return Err(field("vwidth", "must be at least 1"));
        }
        if self.itermax == 0 {
            return Err(field("itermax", "must be at least 1"));
        }
        if !(self.eps_converged > 0.0 && self.eps_converged.is_finite()) {
            return Err(field("eps_converged", "must be a positive finite number"));
        }
        let alg = self.algorithm;
        let loschmidt = matches!(alg, Algorithm::PowerBoth | Algorithm::PowerSym);
        if self.nbeta > 0 && !loschmidt {
            return Err(field("nbeta", "imaginary-time layers are only supported by power_both and power_sym"));
        }
        if self.nbeta >= self.nt_final && loschmidt {
            return Err(field("nt_final", format!("must exceed nbeta = {}", self.nbeta)));
        }
        if loschmidt && self.which_evs.as_ref().is_some_and(|v| !v.is_empty()) {
            return Err(field("which_evs", "power_both and power_sym record the Loschmidt eigenvalue, not observables"));
        }
        for name in self.observables() {
            named_observable(&mp, &name).map_err(|e| field("which_evs", strip(&e)))?;
        }
        if let Some(op) = &self.fold_op {
            if !matches!(alg, Algorithm::PowerOp | Algorithm::Cone) {
                return Err(field("fold_op", "only used by power_op and cone"));
            }
            named_observable(&mp, op).map_err(|e| field("fold_op", strip(&e)))?;
        }
        if alg == Algorithm::PowerOp && self.fold_op.is_none() && self.observables().is_empty() {
            return Err(field("fold_op", "power_op needs fold_op or at least one observable"));
        }
        let allowed: &[&str] = match alg {
            Algorithm::Exact | Algorithm::Tebd => &["vn_rdm"],
            _ => &ENTROPY_NAMES,
        };
        for e in &self.which_ents {
            if !allowed.contains(&e.as_str()) {
                return Err(field("which_ents", format!("{e:?} is not available for this algorithm (allowed: {})", allowed.join(", "))));
            }
        }
        let m = self.opt_method();
        match alg {
            Algorithm::Exact | Algorithm::Tebd if self.opt_method.is_some() => {
                return Err(field("opt_method", "only used by the transverse algorithms"));
            }
            Algorithm::PowerBoth if matches!(m, OptMethod::RtmEig | OptMethod::RtmLr | OptMethod::RtmR) => {
                return Err(field("opt_method", "power_both supports RDM and RTM"));
            }
            Algorithm::PowerSym if matches!(m, OptMethod::RtmLr | OptMethod::RtmR) => {
                return Err(field("opt_method", "power_sym supports RDM, RTM and RTM_EIG"));
            }
            Algorithm::PowerOp | Algorithm::Cone if m == OptMethod::RtmEig => {
                return Err(field("opt_method", "RTM_EIG is only available with power_sym"));
            }
            _ => {}
        }
        if alg == Algorithm::Cone {
            if !matches!(mp, ModelParams::Ising { .. } | ModelParams::Potts { .. }) {
                return Err(field("algorithm", "the light cone needs a model with a strict causal cone (ising or potts)"));
            }
        } else {
            if self.vwidth != 1 {
                return Err(field("vwidth", "only used by the cone"));
            }
            if self.checkpoint > 0 || self.resume {
                return Err(field("checkpoint", "checkpoints are only written by the cone"));
            }
        }
        if matches!(alg, Algorithm::Exact | Algorithm::Tebd) {
            let n = self.sites();
            if n < 2 {
                return Err(field("sites", "need at least two sites"));
            }
            if alg == Algorithm::Exact && (n as f64) * (mp.local_dim() as f64).log2() > crate::oracle::DENSE_GUARD_BITS {
                return Err(field("sites", format!("{n} sites exceed the dense-state guard")));
            }
        } else if self.sites.is_some() {
            return Err(field("sites", "only used by exact and tebd"));
        }
        Ok(())
    }

    /// Directory the run writes into. `root` (usually the value of
    /// [`OUTPUT_ROOT_ENV`]) replaces everything but the last path component.
    pub fn output_dir(&self, config_path: Option<&Path>, root: Option<&Path>) -> PathBuf {
        let base = self.output.clone().unwrap_or_else(|| {
            let stem = config_path.and_then(|p| p.file_stem()).map(|s| s.to_string_lossy().into_owned());
            PathBuf::from("results").join(stem.unwrap_or_else(|| "run".into()))
        });
        match root {
            Some(r) => r.join(base.file_name().map(PathBuf::from).unwrap_or_else(|| PathBuf::from("run"))),
            None => base,
        }
    }
}

fn strip(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

/// A results table: `#` metadata, a header row and numeric rows.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResultsTable {
    pub metadata: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl ResultsTable {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn values(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.column(name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.metadata {
            let _ = writeln!(s, "# {k}: {v}");
        }
        let _ = writeln!(s, "{}", self.columns.join(","));
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|x| format!("{x:?}")).collect();
            let _ = writeln!(s, "{}", cells.join(","));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut t = ResultsTable::default();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                if let Some((k, v)) = meta.split_once(':') {
                    t.metadata.push((k.trim().to_string(), v.trim().to_string()));
                }
                continue;
            }
            if t.columns.is_empty() {
                t.columns = line.split(',').map(|c| c.trim().to_string()).collect();
                continue;
            }
            let row: Vec<f64> = line
                .split(',')
                .map(|c| c.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Config(format!("line {}: {e}", no + 1)))?;
            if row.len() != t.columns.len() {
                return Err(Error::Config(format!("line {}: {} cells for {} columns", no + 1, row.len(), t.columns.len())));
            }
            t.rows.push(row);
        }
        if t.columns.first().map(String::as_str) != Some("t") {
            return Err(Error::Config("results table must start with a `t` column".into()));
        }
        Ok(t)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), strip(&e))))
    }
}

/// Everything a finished run produced.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub table: ResultsTable,
    pub manifest: serde_json::Value,
    pub dir: PathBuf,
}

/// One output row before formatting.
struct Row {
    t: f64,
    values: Vec<C64>,
    chi: usize,
    entropies: Vec<C64>,
    wall_ms: f64,
}

struct Collected {
    value_names: Vec<String>,
    rows: Vec<Row>,
    notes: Vec<String>,
}

/// Run a validated config, writing the results table and manifest into `dir`.
pub fn run_experiment(cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(dir)?;
    let mut adjustments = Vec::new();
    if cfg.opt_method.is_none() && !matches!(cfg.algorithm, Algorithm::Exact | Algorithm::Tebd) {
        adjustments.push(format!("opt_method defaulted to {}", cfg.opt_method().as_str()));
    }
    if cfg.which_evs.is_none() && !cfg.observables().is_empty() {
        adjustments.push(format!("which_evs defaulted to {:?}", cfg.observables()));
    }
    if cfg.sites.is_none() && matches!(cfg.algorithm, Algorithm::Exact | Algorithm::Tebd) {
        adjustments.push(format!("sites defaulted to {DEFAULT_SITES}"));
    }
    let collected = match cfg.algorithm {
        Algorithm::Exact => run_exact(cfg)?,
        Algorithm::Tebd => run_tebd(cfg)?,
        Algorithm::Cone => run_cone_cfg(cfg, dir, &mut adjustments)?,
        Algorithm::PowerBoth | Algorithm::PowerSym => run_loschmidt(cfg)?,
        Algorithm::PowerOp => run_power_op(cfg)?,
    };
    let mut columns = vec!["t".to_string()];
    for n in &collected.value_names {
        columns.push(format!("{n}_re"));
        columns.push(format!("{n}_im"));
    }
    columns.push("chi_max".into());
    for e in &cfg.which_ents {
        columns.push(format!("{e}_re"));
        columns.push(format!("{e}_im"));
    }
    if cfg.wall_ms {
        columns.push("wall_ms".into());
    }
    let rows = collected
        .rows
        .iter()
        .map(|r| {
            let mut v = vec![r.t];
            v.extend(r.values.iter().flat_map(|z| [z.re, z.im]));
            v.push(r.chi as f64);
            v.extend(r.entropies.iter().flat_map(|z| [z.re, z.im]));
            if cfg.wall_ms {
                v.push(r.wall_ms);
            }
            v
        })
        .collect();
    let metadata = vec![
        ("transverse".to_string(), VERSION.to_string()),
        ("algorithm".to_string(), serde_json::to_string(&cfg.algorithm)?.trim_matches('"').to_string()),
        ("model".to_string(), format!("{:?}", cfg.model_params())),
        ("dt".to_string(), format!("{:?}", cfg.dt)),
        ("seed".to_string(), cfg.seed.to_string()),
    ];
    let table = ResultsTable { metadata, columns, rows };
    std::fs::write(dir.join(RESULTS_FILE), table.to_csv())?;
    let mut resolved = cfg.clone();
    resolved.opt_method = Some(cfg.opt_method());
    resolved.which_evs = Some(cfg.observables());
    if matches!(cfg.algorithm, Algorithm::Exact | Algorithm::Tebd) {
        resolved.sites = Some(cfg.sites());
        resolved.opt_method = None;
    }
    let manifest = serde_json::json!({
        "format": "transverse-run",
        "version": 1,
        "library_version": VERSION,
        "config": resolved,
        "adjustments": adjustments,
        "notes": collected.notes,
        "results": RESULTS_FILE,
    });
    std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(RunOutcome { table, manifest, dir: dir.to_path_buf() })
}

/// Load, validate and run a config file. Output goes to the configured
/// directory, relocated under `root` when given.
pub fn run_config_file(path: &Path, root: Option<&Path>) -> Result<RunOutcome> {
    let cfg = ExperimentConfig::load(path)?;
    let dir = cfg.output_dir(Some(path), root);
    run_experiment(&cfg, &dir)
}

fn ops(cfg: &ExperimentConfig) -> Result<Vec<(String, Array2<C64>)>> {
    let mp = cfg.model_params();
    cfg.observables().into_iter().map(|n| Ok((n.clone(), named_observable(&mp, &n)?))).collect()
}

fn ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

fn run_exact(cfg: &ExperimentConfig) -> Result<Collected> {
    let mp = cfg.model_params();
    let n = cfg.sites();
    let ops = ops(cfg)?;
    let bl = cfg.initial.vector(mp.local_dim());
    let start = Instant::now();
    let u = Propagator::new(&mp, n, cfg.dt)?;
    let mut psi = DenseState::product(&bl, n)?;
    let mut rows = Vec::with_capacity(cfg.nt_final + 1);
    for k in 0..=cfg.nt_final {
        if k > 0 {
            psi = u.step(&psi)?;
        }
        let values = ops.iter().map(|(_, o)| psi.expect_local(n / 2, o)).collect::<Result<_>>()?;
        let entropies = cfg
            .which_ents
            .iter()
            .map(|_| Ok(C64::new(dense_half_chain_entropy(&psi)?, 0.0)))
            .collect::<Result<_>>()?;
        rows.push(Row { t: k as f64 * cfg.dt, values, chi: 0, entropies, wall_ms: ms(start) });
    }
    let notes = vec!["chi_max is not defined for the dense state and is written as 0".into()];
    Ok(Collected { value_names: ops.into_iter().map(|(n, _)| n).collect(), rows, notes })
}

fn dense_half_chain_entropy(psi: &DenseState) -> Result<f64> {
    let left = psi.d.pow((psi.n / 2) as u32);
    let m = Array2::from_shape_vec((left, psi.amplitudes.len() / left), psi.amplitudes.clone())
        .map_err(|e| Error::Linalg(e.to_string()))?;
    let s = crate::linalg::singular_values(&m)?;
    Ok(crate::mps::SpectrumReport::from_values(s.to_vec()).entropy)
}

fn run_tebd(cfg: &ExperimentConfig) -> Result<Collected> {
    let mp = cfg.model_params();
    let n = cfg.sites();
    let ops = ops(cfg)?;
    let bl = cfg.initial.vector(mp.local_dim());
    let psi0 = TensorTrain::product(&vec![bl; n])?;
    let start = Instant::now();
    let mats: Vec<Array2<C64>> = ops.iter().map(|(_, o)| o.clone()).collect();
    let s = tebd_run(&mp, &psi0, cfg.dt, cfg.nt_final, &cfg.truncation(), &mats, !cfg.which_ents.is_empty())?;
    let total = ms(start);
    let rows = (0..s.times.len())
        .map(|k| Row {
            t: s.times[k],
            values: s.values[k].clone(),
            chi: s.max_chi[k],
            entropies: cfg.which_ents.iter().map(|_| C64::new(s.entropy[k], 0.0)).collect(),
            wall_ms: total * k as f64 / cfg.nt_final as f64,
        })
        .collect();
    Ok(Collected { value_names: ops.into_iter().map(|(n, _)| n).collect(), rows, notes: vec![] })
}

fn tmpo_params(cfg: &ExperimentConfig) -> TmpoParams {
    let mp = cfg.model_params();
    let mut tp = TmpoParams::new(mp, cfg.dt, cfg.initial.vector(mp.local_dim()));
    tp.nbeta = cfg.nbeta;
    tp
}

fn run_cone_cfg(cfg: &ExperimentConfig, dir: &Path, adjustments: &mut Vec<String>) -> Result<Collected> {
    let tp = tmpo_params(cfg);
    let b = make_fold_blocks(&tp)?;
    let mp = tp.mp;
    let ops = ops(cfg)?;
    let checkpoint_path = dir.join(CHECKPOINT_FILE);
    let spec = ConeSpec {
        truncp: cfg.truncation(),
        opt_method: cfg.opt_method(),
        optimize_op: cfg.fold_op.as_ref().map(|n| named_observable(&mp, n)).transpose()?,
        which_evs: cfg.observables(),
        which_ents: cfg.which_ents.clone(),
        checkpoint: cfg.checkpoint,
        checkpoint_path: (cfg.checkpoint > 0).then(|| checkpoint_path.clone()),
        vwidth: cfg.vwidth,
        recorder: None,
    };
    let start = Instant::now();
    let mut rows = Vec::new();
    let (l, r, first) = if cfg.resume && checkpoint_path.exists() {
        let ck = Checkpoint::load(&checkpoint_path)?;
        let (l, r) = ck.trains()?;
        adjustments.push(format!("resumed from checkpoint at step {} ({} layers)", ck.iteration, r.len()));
        rows.extend(earlier_rows(&dir.join(RESULTS_FILE), r.len() as f64 * cfg.dt, cfg));
        (l, r, ck.iteration)
    } else {
        if cfg.resume {
            adjustments.push("resume requested but no checkpoint found; started from scratch".into());
        }
        let zero: Vec<C64> = ops
            .iter()
            .map(|(_, o)| {
                let bl = &tp.bl;
                let num: C64 = (0..bl.len()).flat_map(|i| (0..bl.len()).map(move |j| (i, j))).map(|(i, j)| bl[i].conj() * o[[i, j]] * bl[j]).sum();
                let den: C64 = bl.iter().map(|z| z.norm_sqr()).sum::<f64>().into();
                num / den
            })
            .collect();
        rows.push(Row { t: 0.0, values: zero, chi: 1, entropies: vec![C64::new(0.0, 0.0); cfg.which_ents.len()], wall_ms: 0.0 });
        let (l, r) = init_cone(&tp, 1)?;
        let values = cone_expectations(&l, &r, &b, &ops)?.into_iter().map(|(_, v)| v).collect();
        let entropies = cfg.which_ents.iter().map(|e| pair_entropy(e, &l, &r)).collect::<Result<_>>()?;
        rows.push(Row { t: cfg.dt, values, chi: r.max_bond_dim().max(l.max_bond_dim()), entropies, wall_ms: ms(start) });
        (l, r, 0)
    };
    if r.len() < cfg.nt_final {
        if (cfg.nt_final - r.len()) % cfg.vwidth != 0 {
            adjustments.push(format!(
                "the last cone step adds {} layers instead of vwidth = {}",
                (cfg.nt_final - r.len()) % cfg.vwidth,
                cfg.vwidth
            ));
        }
        let res = run_cone_from(&l, &r, &b, &spec, cfg.nt_final, first)?;
        let per = ms(start) / res.series.len().max(1) as f64;
        for (k, rec) in res.series.iter().enumerate() {
            rows.push(Row {
                t: rec.time,
                values: rec.observables.iter().map(|(_, v)| *v).collect(),
                chi: rec.chi,
                entropies: rec.entropies.iter().map(|(_, v)| *v).collect(),
                wall_ms: per * (k + 1) as f64,
            });
        }
    }
    Ok(Collected { value_names: ops.into_iter().map(|(n, _)| n).collect(), rows, notes: vec![] })
}

/// Rows of a previous table up to the checkpoint time, when its layout matches.
fn earlier_rows(path: &Path, t_max: f64, cfg: &ExperimentConfig) -> Vec<Row> {
    let Ok(t) = ResultsTable::read(path) else { return vec![] };
    let nv = cfg.observables().len();
    let ne = cfg.which_ents.len();
    let wall = usize::from(t.column("wall_ms").is_some());
    if t.columns.len() != 2 + 2 * nv + 2 * ne + wall {
        return vec![];
    }
    t.rows
        .iter()
        .filter(|r| r[0] <= t_max + 1e-9 * cfg.dt)
        .map(|r| {
            let pair = |k: usize| C64::new(r[k], r[k + 1]);
            Row {
                t: r[0],
                values: (0..nv).map(|k| pair(1 + 2 * k)).collect(),
                chi: r[1 + 2 * nv] as usize,
                entropies: (0..ne).map(|k| pair(2 + 2 * nv + 2 * k)).collect(),
                wall_ms: if wall == 1 { r[r.len() - 1] } else { 0.0 },
            }
        })
        .collect()
}

fn power_spec(cfg: &ExperimentConfig) -> PowerMethodSpec {
    PowerMethodSpec {
        truncp: cfg.truncation(),
        itermax: cfg.itermax,
        eps_converged: cfg.eps_converged,
        increase_chi: cfg.increase_chi,
        opt_method: cfg.opt_method(),
        ..Default::default()
    }
}

fn initial_train(cfg: &ExperimentConfig, boundary: TensorTrain, rng: &mut ChaCha8Rng) -> Result<TensorTrain> {
    match cfg.init_guess {
        InitGuess::Boundary => Ok(boundary),
        InitGuess::Random => {
            let dims: Vec<usize> = boundary.phys_labels().iter().map(|p| p.dim()).collect();
            let r = TensorTrain::random(&dims, 4, rng)?;
            // Same physical labels as the boundary so the column acts on it.
            r.with_phys(boundary.phys_labels())
        }
    }
}

fn run_loschmidt(cfg: &ExperimentConfig) -> Result<Collected> {
    let tp = tmpo_params(cfg);
    let b = make_fw_blocks(&tp)?;
    let spec = power_spec(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let start = Instant::now();
    let zero_ents = vec![C64::new(0.0, 0.0); cfg.which_ents.len()];
    let mut rows = vec![Row { t: 0.0, values: vec![C64::new(1.0, 0.0)], chi: 1, entropies: zero_ents, wall_ms: 0.0 }];
    let mut notes = Vec::new();
    for nt in cfg.nbeta + 1..=cfg.nt_final {
        let e = fw_tmpo(&b, nt)?;
        let init = initial_train(cfg, b.set.boundary(Part::Right, nt, None)?, &mut rng)?;
        let (l, r, trace) = if cfg.algorithm == Algorithm::PowerSym {
            let res = powermethod_sym(&init, &e, &spec)?;
            (res.psi.clone(), res.psi, res.trace)
        } else {
            let res = powermethod_both(&init, &e, &e, &spec)?;
            (res.l, res.r, res.trace)
        };
        if !trace.converged {
            notes.push(format!("nt = {nt}: not converged after {} iterations{}", trace.iterations(), diag(&trace.diagnostic)));
        }
        let lambda = trace.last().map(|x| x.norm_factor).unwrap_or(C64::new(f64::NAN, f64::NAN));
        let entropies = cfg.which_ents.iter().map(|n| pair_entropy(n, &l, &r)).collect::<Result<_>>()?;
        rows.push(Row {
            t: (nt - cfg.nbeta) as f64 * cfg.dt,
            values: vec![lambda],
            chi: l.max_bond_dim().max(r.max_bond_dim()),
            entropies,
            wall_ms: ms(start),
        });
    }
    Ok(Collected { value_names: vec!["lambda".into()], rows, notes })
}

fn diag(d: &Option<String>) -> String {
    d.as_ref().map(|s| format!(" ({s})")).unwrap_or_default()
}

fn run_power_op(cfg: &ExperimentConfig) -> Result<Collected> {
    let tp = tmpo_params(cfg);
    let b = make_fold_blocks(&tp)?;
    let mp = tp.mp;
    let ops = ops(cfg)?;
    let fold_name = cfg.fold_op.clone().unwrap_or_else(|| ops[0].0.clone());
    let fold = named_observable(&mp, &fold_name)?;
    let spec = power_spec(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let start = Instant::now();
    let mut rows = Vec::new();
    let mut notes = Vec::new();
    let bl = &tp.bl;
    let zero: Vec<C64> = ops
        .iter()
        .map(|(_, o)| (0..bl.len()).flat_map(|i| (0..bl.len()).map(move |j| (i, j))).map(|(i, j)| bl[i].conj() * o[[i, j]] * bl[j]).sum())
        .collect();
    rows.push(Row { t: 0.0, values: zero, chi: 1, entropies: vec![C64::new(0.0, 0.0); cfg.which_ents.len()], wall_ms: 0.0 });
    for nt in 1..=cfg.nt_final {
        let e1 = folded_tmpo(&b, nt, None)?;
        let eo = folded_tmpo(&b, nt, Some(&fold))?;
        let init = initial_train(cfg, b.set.boundary(Part::Right, nt, None)?, &mut rng)?;
        let res = powermethod_op(&init, &e1, &eo, &spec)?;
        if !res.trace.converged {
            notes.push(format!("nt = {nt}: not converged after {} iterations{}", res.trace.iterations(), diag(&res.trace.diagnostic)));
        }
        let one = expval_lr(&res.l, &e1, &res.r)?;
        let values = ops
            .iter()
            .map(|(_, o)| Ok(expval_lr(&res.l, &folded_tmpo(&b, nt, Some(o))?, &res.r)? / one))
            .collect::<Result<_>>()?;
        let entropies = cfg.which_ents.iter().map(|n| pair_entropy(n, &res.l, &res.r)).collect::<Result<_>>()?;
        rows.push(Row {
            t: nt as f64 * cfg.dt,
            values,
            chi: res.l.max_bond_dim().max(res.r.max_bond_dim()),
            entropies,
            wall_ms: ms(start),
        });
    }
    Ok(Collected { value_names: ops.into_iter().map(|(n, _)| n).collect(), rows, notes })
}

/// Least-squares line `y = slope x + intercept` with its RMS residual.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub rms_residual: f64,
}

pub fn fit_line(x: &[f64], y: &[f64]) -> Option<LineFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a - intercept).powi(2)).sum();
    Some(LineFit { slope, intercept, rms_residual: (ss / n as f64).sqrt() })
}

/// Growth of `chi_max` in one table, fitted against `t` and `ln t` (rows with `t > 0`).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChiGrowth {
    pub name: String,
    pub linear: Option<LineFit>,
    pub logarithmic: Option<LineFit>,
    pub final_chi: f64,
}

pub fn chi_growth(name: &str, t: &ResultsTable) -> ChiGrowth {
    let (ts, chi) = (t.values("t").unwrap_or_default(), t.values("chi_max").unwrap_or_default());
    let pts: Vec<(f64, f64)> = ts.iter().zip(&chi).filter(|(a, _)| **a > 0.0).map(|(a, b)| (*a, *b)).collect();
    let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let lx: Vec<f64> = x.iter().map(|a| a.ln()).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
    ChiGrowth { name: name.to_string(), linear: fit_line(&x, &y), logarithmic: fit_line(&lx, &y), final_chi: chi.last().copied().unwrap_or(0.0) }
}

/// Per-time deviation of one table from the reference.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Deviation {
    pub name: String,
    pub column: String,
    pub t: Vec<f64>,
    pub abs_diff: Vec<f64>,
    pub max_abs_diff: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Comparison {
    pub reference: String,
    pub deviations: Vec<Deviation>,
    pub chi: Vec<ChiGrowth>,
}

/// Compare tables against the first one: `|a - b|` of every shared value
/// column (complex pairs combined) on the shared time points, plus `chi_max` fits.
pub fn compare_tables(named: &[(String, ResultsTable)]) -> Result<Comparison> {
    if named.len() < 2 {
        return Err(Error::Config("compare needs at least two result tables".into()));
    }
    let (ref_name, reference) = &named[0];
    let rt = reference.values("t").unwrap_or_default();
    let pairs = |t: &ResultsTable| -> Vec<String> {
        t.columns.iter().filter_map(|c| c.strip_suffix("_re")).filter(|b| t.column(&format!("{b}_im")).is_some()).map(String::from).collect()
    };
    let ref_pairs = pairs(reference);
    let mut deviations = Vec::new();
    for (name, other) in &named[1..] {
        let ot = other.values("t").unwrap_or_default();
        let common: Vec<(usize, usize)> = rt
            .iter()
            .enumerate()
            .filter_map(|(i, a)| ot.iter().position(|b| (a - b).abs() <= 1e-9 * (1.0 + a.abs())).map(|j| (i, j)))
            .collect();
        if common.is_empty() {
            return Err(Error::Config(format!("{name}: no time points in common with {ref_name}")));
        }
        let shared: Vec<&String> = pairs(other).iter().filter_map(|b| ref_pairs.iter().find(|r| *r == b)).collect();
        if shared.is_empty() {
            return Err(Error::Config(format!("{name}: no value columns in common with {ref_name}")));
        }
        for base in shared {
            let get = |t: &ResultsTable, row: usize| {
                let re = t.rows[row][t.column(&format!("{base}_re")).unwrap()];
                let im = t.rows[row][t.column(&format!("{base}_im")).unwrap()];
                C64::new(re, im)
            };
            let diffs: Vec<f64> = common.iter().map(|&(i, j)| (get(reference, i) - get(other, j)).norm()).collect();
            deviations.push(Deviation {
                name: name.clone(),
                column: base.clone(),
                t: common.iter().map(|&(i, _)| rt[i]).collect(),
                max_abs_diff: diffs.iter().cloned().fold(0.0, f64::max),
                abs_diff: diffs,
            });
        }
    }
    let chi = named.iter().map(|(n, t)| chi_growth(n, t)).collect();
    Ok(Comparison { reference: ref_name.clone(), deviations, chi })
}

impl Comparison {
    /// Plain-text report: deviations per time, then the fit summary.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# reference: {}", self.reference);
        let _ = writeln!(s, "table,column,t,abs_diff");
        for d in &self.deviations {
            for (t, v) in d.t.iter().zip(&d.abs_diff) {
                let _ = writeln!(s, "{},{},{t:?},{v:?}", d.name, d.column);
            }
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "table,column,max_abs_diff");
        for d in &self.deviations {
            let _ = writeln!(s, "{},{},{:?}", d.name, d.column, d.max_abs_diff);
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "table,final_chi,slope_t,rms_t,slope_log_t,rms_log_t");
        let f = |x: Option<LineFit>| x.map(|v| (format!("{:?}", v.slope), format!("{:?}", v.rms_residual))).unwrap_or(("nan".into(), "nan".into()));
        for c in &self.chi {
            let (a, b) = f(c.linear);
            let (d, e) = f(c.logarithmic);
            let _ = writeln!(s, "{},{:?},{a},{b},{d},{e}", c.name, c.final_chi);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base(alg: &str) -> String {
        format!("algorithm = \"{alg}\"\ndt = 0.1\nnt_final = 3\n[model]\nname = \"ising\"\ng = 1.05\n")
    }

    #[test]
    fn unknown_keys_and_values_are_rejected() {
        let e = ExperimentConfig::from_toml(&format!("bogus = 1\n{}", base("cone"))).unwrap_err();
        assert!(e.to_string().contains("bogus"), "{e}");
        let e = ExperimentConfig::from_toml(&base("cone").replace("g = 1.05", "g = 1.05\nk = 2")).unwrap_err();
        assert!(e.to_string().contains('k'), "{e}");
        let e = ExperimentConfig::from_toml(&base("sideways")).unwrap_err();
        assert!(e.to_string().contains("line"), "{e}");
    }

    #[test]
    fn validation_names_the_field() {
        let check = |extra: &str, alg: &str, field: &str| {
            let cfg = ExperimentConfig::from_toml(&format!("{extra}\n{}", base(alg))).unwrap();
            let e = cfg.validate().unwrap_err();
            assert!(e.to_string().contains(field), "{e}");
        };
        check("which_evs = [\"spin\"]", "cone", "which_evs");
        check("opt_method = \"RTM_EIG\"", "cone", "opt_method");
        check("nbeta = 1", "cone", "nbeta");
        check("sites = 30", "exact", "sites");
        check("vwidth = 2", "tebd", "vwidth");
        check("which_ents = [\"renyi2_gen\"]", "exact", "which_ents");
        check("checkpoint = 2", "power_op", "checkpoint");
        check("cutoff = -1.0", "cone", "cutoff");
        let xxz = "algorithm = \"cone\"\ndt = 0.1\nnt_final = 3\n[model]\nname = \"xxz\"\ndelta = 0.5\n";
        let e = ExperimentConfig::from_toml(xxz).unwrap().validate().unwrap_err();
        assert!(e.to_string().contains("algorithm"));
        let ok = ExperimentConfig::from_toml(&base("cone")).unwrap();
        ok.validate().unwrap();
        assert_eq!(ok.opt_method(), OptMethod::RtmLr);
        assert_eq!(ok.observables(), vec!["sz".to_string()]);
    }

    #[test]
    fn table_round_trip_is_exact() {
        let t = ResultsTable {
            metadata: vec![("a".into(), "b".into())],
            columns: vec!["t".into(), "x_re".into(), "x_im".into(), "chi_max".into()],
            rows: vec![vec![0.1, 1.0 / 3.0, -1e-300, 4.0], vec![0.2, f64::MIN_POSITIVE, 0.0, 5.0]],
        };
        let back = ResultsTable::parse(&t.to_csv()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn line_fits_recover_exact_laws() {
        let x: Vec<f64> = (1..10).map(|k| k as f64).collect();
        let y: Vec<f64> = x.iter().map(|a| 3.0 * a - 1.0).collect();
        let f = fit_line(&x, &y).unwrap();
        assert!((f.slope - 3.0).abs() < 1e-12 && (f.intercept + 1.0).abs() < 1e-12 && f.rms_residual < 1e-12);
        let t = ResultsTable {
            metadata: vec![],
            columns: vec!["t".into(), "chi_max".into()],
            rows: x.iter().map(|a| vec![*a, 2.0 * a.ln() + 1.0]).collect(),
        };
        let g = chi_growth("log", &t);
        assert!(g.logarithmic.unwrap().rms_residual < 1e-12);
        assert!(g.linear.unwrap().rms_residual > 1e-3);
    }

    #[test]
    fn identical_tables_have_zero_deviation_and_disjoint_grids_fail() {
        let t = ResultsTable {
            metadata: vec![],
            columns: vec!["t".into(), "sz_re".into(), "sz_im".into(), "chi_max".into()],
            rows: vec![vec![0.0, 1.0, 0.0, 1.0], vec![0.1, 0.9, 0.01, 2.0]],
        };
        let c = compare_tables(&[("a".into(), t.clone()), ("b".into(), t.clone())]).unwrap();
        assert_eq!(c.deviations.len(), 1);
        assert_eq!(c.deviations[0].max_abs_diff, 0.0);
        let mut shifted = t.clone();
        shifted.rows.iter_mut().for_each(|r| r[0] += 0.05);
        assert!(compare_tables(&[("a".into(), t), ("b".into(), shifted)]).is_err());
    }

    #[test]
    fn output_root_replaces_the_parent() {
        let cfg = ExperimentConfig::from_toml(&format!("output = \"runs/alpha\"\n{}", base("cone"))).unwrap();
        assert_eq!(cfg.output_dir(None, None), PathBuf::from("runs/alpha"));
        assert_eq!(cfg.output_dir(None, Some(Path::new("/tmp/x"))), PathBuf::from("/tmp/x/alpha"));
        let cfg = ExperimentConfig::from_toml(&base("cone")).unwrap();
        assert_eq!(cfg.output_dir(Some(Path::new("cfg/quench.toml")), None), PathBuf::from("results/quench"));
    }
}
