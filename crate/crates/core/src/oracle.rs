//! Brute-force references: dense state vectors, a TEBD baseline and exact
//! contraction of small networks.
//!
//! Basis ordering follows [`TensorTrain::to_dense`]: site 0 is the most
//! significant digit.

use ndarray::{self as nd, Array2};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, ONE, ZERO};
use crate::models::{Builder, ModelParams, MpoTriple};
use crate::mps::{TensorTrain, TensorTrainOperator};
use crate::tensor::{IndexLabel, LabeledTensor};
use crate::truncation::TruncationSpec;

/// Largest `n log2 d` accepted for dense states.
pub const DENSE_GUARD_BITS: f64 = 24.0;
/// Largest Hilbert-space dimension propagated by full diagonalization.
pub const EIGH_MAX_DIM: usize = 4096;
/// Largest intermediate tensor (in elements) formed by [`dense_network_contract`].
pub const NETWORK_GUARD: usize = 1 << 24;
/// Amplitudes per cache block in the sparse Hamiltonian product.
const APPLY_CHUNK: usize = 1 << 13;

/// A state vector on `n` sites of dimension `d`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseState {
    pub amplitudes: Vec<C64>,
    pub n: usize,
    pub d: usize,
}

fn guard(n: usize, d: usize) -> Result<usize> {
    if n == 0 || d < 2 {
        return Err(Error::param("n", "need at least one site of dimension >= 2"));
    }
    if n as f64 * (d as f64).log2() > DENSE_GUARD_BITS + 1e-9 {
        return Err(Error::param("n", format!("{n} sites of dimension {d} exceed the dense guard")));
    }
    Ok(d.pow(n as u32))
}

impl DenseState {
    pub fn new(amplitudes: Vec<C64>, n: usize, d: usize) -> Result<Self> {
        let dim = guard(n, d)?;
        if amplitudes.len() != dim {
            return Err(Error::LengthMismatch(dim, amplitudes.len()));
        }
        Ok(Self { amplitudes, n, d })
    }

    /// Product of identical single-site vectors.
    pub fn product(site: &[C64], n: usize) -> Result<Self> {
        let d = site.len();
        guard(n, d)?;
        let mut v = vec![ONE];
        for _ in 0..n {
            v = v.iter().flat_map(|a| site.iter().map(move |b| a * b)).collect();
        }
        Self::new(v, n, d)
    }

    pub fn from_train(psi: &TensorTrain) -> Result<Self> {
        let d = psi.phys(0).dim();
        if psi.phys_labels().iter().any(|p| p.dim() != d) {
            return Err(Error::param("psi", "dense states need a uniform local dimension"));
        }
        guard(psi.len(), d)?;
        Self::new(psi.to_dense()?, psi.len(), d)
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `<self|other>` with conjugation of `self`.
    pub fn inner(&self, other: &Self) -> C64 {
        self.amplitudes.iter().zip(&other.amplitudes).map(|(a, b)| a.conj() * b).sum()
    }

    /// Apply `op[out, in]` on `span` consecutive sites starting at `site`.
    pub fn apply_local(&self, site: usize, op: &Array2<C64>) -> Result<Self> {
        let span = ((op.nrows() as f64).ln() / (self.d as f64).ln()).round() as usize;
        if op.nrows() != self.d.pow(span as u32) || op.ncols() != op.nrows() || site + span > self.n {
            return Err(Error::param("op", "operator does not fit the chain"));
        }
        let block = op.nrows();
        let inner = self.d.pow((self.n - site - span) as u32);
        let outer = self.dim() / (block * inner);
        let mut out = vec![ZERO; self.dim()];
        for o in 0..outer {
            for k in 0..inner {
                let base = o * block * inner + k;
                for r in 0..block {
                    let mut acc = ZERO;
                    for c in 0..block {
                        acc += op[[r, c]] * self.amplitudes[base + c * inner];
                    }
                    out[base + r * inner] = acc;
                }
            }
        }
        Ok(Self { amplitudes: out, n: self.n, d: self.d })
    }

    /// `<op_site>` normalized by the state norm.
    pub fn expect_local(&self, site: usize, op: &Array2<C64>) -> Result<C64> {
        let applied = self.apply_local(site, op)?;
        Ok(self.inner(&applied) / self.norm().powi(2))
    }
}

/// Hamiltonian stored as a diagonal plus sparse local off-diagonal terms.
struct SparseHamiltonian {
    d: usize,
    n: usize,
    diag: Vec<f64>,
    /// `(first site, span, entries grouped by input column)`.
    terms: Vec<(usize, usize, Vec<Vec<(usize, C64)>>)>,
    /// Bound on the norm of the off-diagonal part.
    off_norm: f64,
}

impl SparseHamiltonian {
    fn new(mp: &ModelParams, n: usize) -> Result<Self> {
        mp.validate()?;
        let d = mp.local_dim();
        let dim = guard(n, d)?;
        let mut h = Self { d, n, diag: vec![0.0; dim], terms: Vec::new(), off_norm: 0.0 };
        let (h1, h2) = (mp.one_site(), mp.two_site());
        for i in 0..n {
            h.add(i, 1, &h1)?;
        }
        for i in 0..n.saturating_sub(1) {
            h.add(i, 2, &h2)?;
        }
        Ok(h)
    }

    fn add(&mut self, site: usize, span: usize, op: &Array2<C64>) -> Result<()> {
        let block = op.nrows();
        let inner = self.d.pow((self.n - site - span) as u32);
        for (idx, v) in self.diag.iter_mut().enumerate() {
            let s = (idx / inner) % block;
            *v += op[[s, s]].re;
        }
        let mut off = op.clone();
        off.diag_mut().fill(ZERO);
        let norm = linalg::singular_values(&off)?[0];
        if norm > 0.0 {
            let mut cols = vec![Vec::new(); block];
            for ((r, c), v) in off.indexed_iter() {
                if v.norm() > 0.0 {
                    cols[c].push((r, *v));
                }
            }
            self.terms.push((site, span, cols));
            self.off_norm += norm;
        }
        Ok(())
    }

    fn apply(&self, x: &[C64], y: &mut [C64]) {
        // Terms on the last sites act within small contiguous blocks; they are
        // applied chunk by chunk together with the diagonal so each chunk is
        // touched once while it sits in cache.
        let mut chunk = 1;
        while chunk * self.d <= APPLY_CHUNK.min(x.len()) {
            chunk *= self.d;
        }
        for start in (0..x.len()).step_by(chunk) {
            let (xs, ys) = (&x[start..start + chunk], &mut y[start..start + chunk]);
            for ((yi, xi), di) in ys.iter_mut().zip(xs).zip(&self.diag[start..start + chunk]) {
                *yi = xi * di;
            }
            for (site, span, cols) in &self.terms {
                if self.d.pow((self.n - site) as u32) <= chunk {
                    add_term(xs, ys, self.d.pow(*span as u32), self.d.pow((self.n - site - span) as u32), cols);
                }
            }
        }
        for (site, span, cols) in &self.terms {
            if self.d.pow((self.n - site) as u32) > chunk {
                add_term(x, y, self.d.pow(*span as u32), self.d.pow((self.n - site - span) as u32), cols);
            }
        }
    }

    /// Interval `[lo, hi]` containing the spectrum.
    fn bounds(&self) -> (f64, f64) {
        let lo = self.diag.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = self.diag.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (lo - self.off_norm, hi + self.off_norm)
    }
}

/// `y += T x` for one local term with `block` states on its sites and `inner`
/// states on the sites after them.
fn add_term(x: &[C64], y: &mut [C64], block: usize, inner: usize, cols: &[Vec<(usize, C64)>]) {
    if inner == 1 {
        let flat: Vec<(usize, usize, C64)> =
            cols.iter().enumerate().flat_map(|(c, e)| e.iter().map(move |&(r, v)| (c, r, v))).collect();
        for (xs, ys) in x.chunks_exact(block).zip(y.chunks_exact_mut(block)) {
            for &(c, r, v) in &flat {
                ys[r] += v * xs[c];
            }
        }
        return;
    }
    for base in (0..x.len()).step_by(block * inner) {
        for (c, entries) in cols.iter().enumerate() {
            let src = &x[base + c * inner..base + (c + 1) * inner];
            for (r, v) in entries {
                let dst = &mut y[base + r * inner..base + (r + 1) * inner];
                if v.im == 0.0 {
                    for (d, s) in dst.iter_mut().zip(src) {
                        d.re += v.re * s.re;
                        d.im += v.re * s.im;
                    }
                } else {
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += v * s;
                    }
                }
            }
        }
    }
}

/// Bessel functions `J_0..J_kmax` at `x > 0` by downward recurrence.
fn bessel_j(x: f64, kmax: usize) -> Vec<f64> {
    let start = kmax + 40 + x as usize + (20.0 * x.sqrt()) as usize;
    let mut j = vec![0.0; start + 2];
    j[start] = 1e-300;
    for k in (1..=start).rev() {
        j[k - 1] = 2.0 * k as f64 / x * j[k] - j[k + 1];
        if j[k - 1].abs() > 1e250 {
            j.iter_mut().for_each(|v| *v *= 1e-250);
        }
    }
    let norm = j[0] + 2.0 * j.iter().skip(2).step_by(2).sum::<f64>();
    j.truncate(kmax + 1);
    j.iter().map(|v| v / norm).collect()
}

/// Exact propagator `exp(-i H dt)` on a fixed chain.
pub struct Propagator {
    kind: PropKind,
    n: usize,
    d: usize,
}

enum PropKind {
    Dense(Array2<C64>),
    Chebyshev { h: SparseHamiltonian, dt: f64 },
}

impl Propagator {
    pub fn new(mp: &ModelParams, n: usize, dt: f64) -> Result<Self> {
        mp.validate()?;
        let d = mp.local_dim();
        let dim = guard(n, d)?;
        let kind = if dim <= EIGH_MAX_DIM {
            let h = mp.dense_hamiltonian(n)?;
            PropKind::Dense(linalg::expm_hermitian(&h, C64::new(0.0, -dt))?)
        } else {
            PropKind::Chebyshev { h: SparseHamiltonian::new(mp, n)?, dt }
        };
        Ok(Self { kind, n, d })
    }

    pub fn step(&self, psi: &DenseState) -> Result<DenseState> {
        if psi.n != self.n || psi.d != self.d {
            return Err(Error::LengthMismatch(self.n, psi.n));
        }
        let amplitudes = match &self.kind {
            PropKind::Dense(u) => u.dot(&nd::Array1::from(psi.amplitudes.clone())).to_vec(),
            PropKind::Chebyshev { h, dt } => chebyshev_step(h, &psi.amplitudes, *dt),
        };
        Ok(DenseState { amplitudes, n: self.n, d: self.d })
    }
}

/// `exp(-i H dt) v` by a Chebyshev expansion on the bounded spectrum.
fn chebyshev_step(h: &SparseHamiltonian, v: &[C64], dt: f64) -> Vec<C64> {
    let (lo, hi) = h.bounds();
    let half = 0.5 * (hi - lo) * 1.01 + 1e-12;
    let mid = 0.5 * (hi + lo);
    let x = half * dt.abs();
    if x == 0.0 {
        return v.to_vec();
    }
    let kmax = (x * 1.5) as usize + 60;
    let jk = bessel_j(x, kmax);
    let sign = dt.signum();
    // Scaled operator (H - mid) / half.
    let apply = |src: &[C64], dst: &mut [C64]| {
        h.apply(src, dst);
        for (dv, sv) in dst.iter_mut().zip(src) {
            *dv = (*dv - sv * mid) / half;
        }
    };
    let coef = |k: usize| -> C64 {
        let c = C64::new(0.0, -sign).powu(k as u32) * jk[k];
        if k == 0 {
            c
        } else {
            c * 2.0
        }
    };
    let dim = v.len();
    let mut prev = v.to_vec();
    let mut cur = vec![ZERO; dim];
    apply(&prev, &mut cur);
    let mut out: Vec<C64> = prev.iter().zip(&cur).map(|(a, b)| a * coef(0) + b * coef(1)).collect();
    let mut next = vec![ZERO; dim];
    let mut small = 0;
    for k in 2..=kmax {
        h.apply(&cur, &mut next);
        let c = coef(k);
        for (((nv, pv), cv), o) in next.iter_mut().zip(&prev).zip(&cur).zip(out.iter_mut()) {
            *nv = (*nv - cv * mid) * (2.0 / half) - pv;
            *o += *nv * c;
        }
        std::mem::swap(&mut prev, &mut cur);
        std::mem::swap(&mut cur, &mut next);
        if k as f64 > x && c.norm() < 1e-17 {
            small += 1;
            if small >= 4 {
                break;
            }
        } else {
            small = 0;
        }
    }
    let phase = C64::new(0.0, -mid * dt).exp();
    out.iter_mut().for_each(|z| *z *= phase);
    out
}

/// `exp(-i H dt)^steps |psi0>`.
pub fn exact_evolve(mp: &ModelParams, psi0: &DenseState, dt: f64, steps: usize) -> Result<DenseState> {
    let u = Propagator::new(mp, psi0.n, dt)?;
    let mut psi = psi0.clone();
    for _ in 0..steps {
        psi = u.step(&psi)?;
    }
    Ok(psi)
}

/// One-site expectation values `<op_site>` at times `0, dt, ..., steps dt`.
pub fn exact_observable(mp: &ModelParams, psi0: &DenseState, dt: f64, steps: usize, site: usize, op: &Array2<C64>) -> Result<Vec<C64>> {
    let u = Propagator::new(mp, psi0.n, dt)?;
    let mut psi = psi0.clone();
    let mut out = vec![psi.expect_local(site, op)?];
    for _ in 0..steps {
        psi = u.step(&psi)?;
        out.push(psi.expect_local(site, op)?);
    }
    Ok(out)
}

/// Return amplitudes `<psi0|psi(t_k)>` for `k = 0..=steps`.
pub fn exact_loschmidt(mp: &ModelParams, psi0: &DenseState, dt: f64, steps: usize) -> Result<Vec<C64>> {
    let u = Propagator::new(mp, psi0.n, dt)?;
    let mut psi = psi0.clone();
    let norm = psi0.norm().powi(2);
    let mut out = vec![psi0.inner(&psi) / norm];
    for _ in 0..steps {
        psi = u.step(&psi)?;
        out.push(psi0.inner(&psi) / norm);
    }
    Ok(out)
}

/// Apply a tensor-train operator to a dense vector without forming its matrix.
pub fn apply_mpo_dense(op: &TensorTrainOperator, v: &[C64]) -> Result<Vec<C64>> {
    let n = op.len();
    let dims: Vec<usize> = (0..n).map(|i| op.phys_in(i).dim()).collect();
    let total: usize = dims.iter().product();
    if v.len() != total {
        return Err(Error::LengthMismatch(total, v.len()));
    }
    // x[p, a, s]: processed output prefix p, link a, unprocessed input suffix s.
    let mut x = nd::Array3::from_shape_vec((1, op.link(0).dim(), total), v.to_vec()).map_err(|e| Error::Linalg(e.to_string()))?;
    for i in 0..n {
        let (p, a, s) = x.dim();
        let (din, dout, b) = (dims[i], op.phys_out(i).dim(), op.link(i + 1).dim());
        let rest = s / din;
        let w = op.site(i).matrix(&[op.link(i).clone(), op.phys_in(i).clone()], &[op.phys_out(i).clone(), op.link(i + 1).clone()])?;
        let x4 = x.into_shape_with_order((p, a, din, rest)).map_err(|e| Error::Linalg(e.to_string()))?;
        let xm = x4.permuted_axes([0, 3, 1, 2]).as_standard_layout().into_owned();
        let xm = xm.into_shape_with_order((p * rest, a * din)).map_err(|e| Error::Linalg(e.to_string()))?;
        let y = xm.dot(&w).into_shape_with_order((p, rest, dout, b)).map_err(|e| Error::Linalg(e.to_string()))?;
        let y = y.permuted_axes([0, 2, 3, 1]).as_standard_layout().into_owned();
        x = y.into_shape_with_order((p * dout, b, rest)).map_err(|e| Error::Linalg(e.to_string()))?;
    }
    Ok(x.iter().cloned().collect())
}

/// Evolve with the Trotter circuit of `builder` (the same one the networks use).
pub fn trotter_evolve(mp: &ModelParams, builder: Builder, psi0: &DenseState, dt: f64, steps: usize) -> Result<Vec<DenseState>> {
    let chain = builder.build(mp, C64::new(dt, 0.0))?.chain(psi0.n)?;
    let mut out = vec![psi0.clone()];
    let mut psi = psi0.clone();
    for _ in 0..steps {
        psi = DenseState { amplitudes: apply_mpo_dense(&chain, &psi.amplitudes)?, ..psi };
        out.push(psi.clone());
    }
    Ok(out)
}

/// Output of [`tebd_baseline`], one entry per step including `t = 0`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TebdSeries {
    pub times: Vec<f64>,
    /// `<Z>` (Ising) or the model's first diagonal generator on the middle site.
    pub observable: Vec<f64>,
    /// Middle-site expectation values of the operators passed to [`tebd_run`].
    pub values: Vec<Vec<C64>>,
    /// Von Neumann entropy of the middle cut (empty unless requested).
    pub entropy: Vec<f64>,
    pub max_chi: Vec<usize>,
    pub discarded: Vec<f64>,
}

/// Bond Hamiltonians with the one-site terms shared between neighbouring bonds.
fn bond_terms(mp: &ModelParams, n: usize) -> Vec<Array2<C64>> {
    let d = mp.local_dim();
    let (h1, h2) = (mp.one_site(), mp.two_site());
    let id = linalg::eye(d);
    (0..n - 1)
        .map(|i| {
            let wl = if i == 0 { 1.0 } else { 0.5 };
            let wr = if i + 2 == n { 1.0 } else { 0.5 };
            &h2 + &(linalg::kron(&h1, &id) * C64::new(wl, 0.0)) + &(linalg::kron(&id, &h1) * C64::new(wr, 0.0))
        })
        .collect()
}

/// Operator recorded by the TEBD baseline: `Z` for Ising, the clock for Potts, `Sz` for XXZ.
pub fn default_observable(mp: &ModelParams) -> Array2<C64> {
    match *mp {
        ModelParams::Ising { .. } => crate::models::pauli_z(),
        ModelParams::Potts { .. } => crate::models::potts_clock(),
        ModelParams::Xxz { spin, .. } => crate::models::spin_ops(spin).2,
    }
}

/// Second-order even/odd TEBD with RDM truncation after every gate.
pub fn tebd_baseline(mp: &ModelParams, psi0: &TensorTrain, dt: f64, steps: usize, spec: &TruncationSpec) -> Result<TebdSeries> {
    tebd_run(mp, psi0, dt, steps, spec, &[], false)
}

/// [`tebd_baseline`] that also records `ops` on the middle site and, when
/// `entropy` is set, the middle-cut entanglement entropy.
pub fn tebd_run(
    mp: &ModelParams,
    psi0: &TensorTrain,
    dt: f64,
    steps: usize,
    spec: &TruncationSpec,
    ops: &[Array2<C64>],
    entropy: bool,
) -> Result<TebdSeries> {
    spec.validate()?;
    let n = psi0.len();
    if n < 2 {
        return Err(Error::param("psi0", "TEBD needs at least two sites"));
    }
    let obs = default_observable(mp);
    let bonds = bond_terms(mp, n);
    let gate = |h: &Array2<C64>, tau: f64| linalg::expm_hermitian(h, C64::new(0.0, -tau));
    let half: Vec<Array2<C64>> = bonds.iter().map(|h| gate(h, dt / 2.0)).collect::<Result<_>>()?;
    let full: Vec<Array2<C64>> = bonds.iter().map(|h| gate(h, dt)).collect::<Result<_>>()?;
    let maxdim = (spec.maxbondim != usize::MAX).then_some(spec.maxbondim);
    let mut psi = crate::mps::canonicalize(psi0, 0)?;
    let mut series = TebdSeries::default();
    let record = |psi: &TensorTrain, k: usize, disc: f64, s: &mut TebdSeries| -> Result<()> {
        s.times.push(k as f64 * dt);
        s.observable.push(crate::mps::expect_local(psi, n / 2, &obs)?.re);
        s.values.push(ops.iter().map(|o| crate::mps::expect_local(psi, n / 2, o)).collect::<Result<_>>()?);
        if entropy {
            s.entropy.push(crate::mps::entanglement_spectrum(psi, n / 2)?.entropy);
        }
        s.max_chi.push(psi.max_bond_dim());
        s.discarded.push(disc);
        Ok(())
    };
    record(&psi, 0, 0.0, &mut series)?;
    for k in 1..=steps {
        let mut disc = 0.0;
        for (parity, gates) in [(0, &half), (1, &full), (0, &half)] {
            for i in (parity..n - 1).step_by(2) {
                psi.move_center(i)?;
                disc += psi.apply_two_site(i, &gates[i], spec.cutoff, maxdim, true)?;
            }
        }
        record(&psi, k, disc, &mut series)?;
    }
    Ok(series)
}

/// Exactly contract a closed network (leftover legs must have dimension one) with a greedy pairwise order. Each step
/// merges the pair sharing a label whose product is smallest.
pub fn dense_network_contract(network: &[LabeledTensor]) -> Result<C64> {
    if network.is_empty() {
        return Ok(ONE);
    }
    let mut pool: Vec<LabeledTensor> = network.to_vec();
    let size = |a: &LabeledTensor, b: &LabeledTensor| -> usize {
        let shared: Vec<&IndexLabel> = a.labels().iter().filter(|l| b.has(l)).collect();
        let all: usize = a.labels().iter().chain(b.labels()).map(|l| l.dim()).product();
        let s: usize = shared.iter().map(|l| l.dim()).product();
        all / (s * s)
    };
    while pool.len() > 1 {
        let mut best: Option<(usize, usize, usize)> = None;
        for i in 0..pool.len() {
            for j in i + 1..pool.len() {
                if !pool[i].labels().iter().any(|l| pool[j].has(l)) {
                    continue;
                }
                let s = size(&pool[i], &pool[j]);
                if best.is_none_or(|(_, _, b)| s < b) {
                    best = Some((i, j, s));
                }
            }
        }
        let (i, j) = match best {
            Some((i, j, s)) if s <= NETWORK_GUARD => (i, j),
            Some((_, _, s)) => return Err(Error::param("network", format!("intermediate of {s} elements exceeds the guard"))),
            None => {
                // Disconnected pieces: multiply the two smallest.
                pool.sort_by_key(|t| t.len());
                (0, 1)
            }
        };
        let b = pool.swap_remove(j);
        let a = pool.swap_remove(i);
        pool.push(a.contract(&b)?);
    }
    let last = pool.pop().unwrap();
    if last.labels().iter().any(|l| l.dim() != 1) {
        return Err(Error::param("network", "network has open legs"));
    }
    Ok(last.data().iter().next().cloned().unwrap_or(ONE))
}

/// The Loschmidt grid of `nt` Trotter layers on `n` sites: initial vectors
/// `bl` at the bottom, the MPO layers, and `conj(bl)` caps on top.
pub fn loschmidt_grid(triple: &MpoTriple, bl: &[C64], n: usize, nt: usize) -> Result<Vec<LabeledTensor>> {
    let cap: Vec<C64> = bl.iter().map(|z| z.conj()).collect();
    let mut out = Vec::new();
    let mut below: Vec<IndexLabel> = (0..n).map(|_| IndexLabel::new(bl.len(), "s")).collect();
    for l in &below {
        out.push(LabeledTensor::vector(l.clone(), bl)?);
    }
    for _ in 0..nt {
        let layer = triple.chain(n)?.with_fresh_links();
        let above: Vec<IndexLabel> = (0..n).map(|_| IndexLabel::new(bl.len(), "s")).collect();
        for i in 0..n {
            let t = layer.site(i).relabel_many(&[(layer.phys_in(i).clone(), below[i].clone()), (layer.phys_out(i).clone(), above[i].clone())])?;
            out.push(t);
        }
        below = above;
    }
    for l in &below {
        out.push(LabeledTensor::vector(l.clone(), &cap)?);
    }
    Ok(out)
}
