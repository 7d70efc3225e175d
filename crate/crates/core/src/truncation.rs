//! Truncation of a pair of temporal MPS `<L|` and `|R>` on the singular values
//! of their reduced transition matrices (RTM).
//!
//! The RTM across a cut is `Tr_B |R><L| / <L|R>` (bilinear, no conjugation),
//! where `B` is the block containing the sweep start. Its eigenvalues do not
//! depend on which block is traced out but its singular values do, which is
//! one reason the two sweep directions are inequivalent. Spectra are reported
//! normalized to unit sum.
//!
//! Both trains are first made isometric on the side opposite to the sweep
//! start. Sweeping from the start, the environment built from the two current
//! sites then has exactly the singular values of the RTM at that cut. Its
//! factorization `E = P diag(lam) Q^T` is split as `sqrt(lam)` into the
//! unswept neighbours and `1/sqrt(lam)` into the current sites, which turns
//! every processed environment into the identity (generalized canonical form).

use ndarray::Array2;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::decomp::{kept_count, symm_orth_eig_matrix, takagi_matrix};
use crate::error::{Error, Result};
use crate::linalg;
use crate::mps::{canonicalize, norm, overlap_noconj, TensorTrain};
use crate::tensor::{IndexLabel, LabeledTensor};

/// Singular values below this fraction of the largest are never inverted.
pub const INVERSION_FLOOR: f64 = 1e-14;
/// Relative overlap below which the generalized canonical form is ill-defined.
pub const ORTHOGONAL_OVERLAP: f64 = 1e-14;
/// Largest relative asymmetry accepted by the symmetric sweeps.
pub const SYMMETRIC_MODE_TOL: f64 = 1e-6;

/// Which end the sweep starts from. Site 0 is the earliest time layer, so
/// `Left` starts on the initial-state side and `Right` on the final-time side.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[default]
    Left,
    Right,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationSpec {
    /// Discard values whose share of the spectrum sum is at most `cutoff`.
    pub cutoff: f64,
    pub maxbondim: usize,
    pub direction: Direction,
}

impl Default for TruncationSpec {
    fn default() -> Self {
        Self { cutoff: 1e-10, maxbondim: usize::MAX, direction: Direction::Left }
    }
}

impl TruncationSpec {
    pub fn new(cutoff: f64, maxbondim: usize) -> Self {
        Self { cutoff, maxbondim, direction: Direction::Left }
    }

    pub fn lossless() -> Self {
        Self::new(0.0, usize::MAX)
    }

    pub fn with_direction(mut self, direction: Direction) -> Self {
        self.direction = direction;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cutoff >= 0.0 && self.cutoff.is_finite()) {
            return Err(Error::param("cutoff", "must be a finite non-negative number"));
        }
        if self.maxbondim == 0 {
            return Err(Error::param("maxbondim", "must be positive"));
        }
        Ok(())
    }

    fn maxdim(&self) -> Option<usize> {
        (self.maxbondim != usize::MAX).then_some(self.maxbondim)
    }
}

/// Output of an RTM sweep. Spectra and discarded weights are indexed by bond
/// (`b` sits between sites `b - 1` and `b`); the two outer bonds hold `[1]` and 0.
#[derive(Clone, Debug)]
pub struct RtmSweepResult {
    pub l_out: TensorTrain,
    pub r_out: TensorTrain,
    /// RTM singular values before truncation, descending, summing to one.
    pub spectra: Vec<Vec<f64>>,
    /// Discarded share of the spectrum sum.
    pub discarded: Vec<f64>,
    /// `<L|R>` of the input pair.
    pub overlap: C64,
}

impl RtmSweepResult {
    pub fn max_bond_dim(&self) -> usize {
        self.l_out.max_bond_dim()
    }

    pub fn total_discarded(&self) -> f64 {
        self.discarded.iter().sum()
    }
}

/// Output of the symmetric sweeps: a single train playing both roles.
#[derive(Clone, Debug)]
pub struct SymmetricSweepResult {
    pub psi: TensorTrain,
    pub spectra: Vec<Vec<f64>>,
    pub discarded: Vec<f64>,
    pub overlap: C64,
    /// RTM eigenvalues per bond (eigenvalue mode only), descending modulus.
    pub eigenvalues: Vec<Vec<C64>>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Mode {
    Svd,
    Takagi,
    Eig,
}

/// Factorization `E = p diag(lam) q^T` with `pt^T E qt = diag(lam)`.
struct Factor {
    p: Array2<C64>,
    q: Array2<C64>,
    pt: Array2<C64>,
    qt: Array2<C64>,
    lam: Vec<C64>,
    /// Full spectrum (moduli, descending) before truncation.
    full: Vec<f64>,
    eig: Vec<C64>,
    discarded: f64,
}

fn cols(m: &Array2<C64>, k: usize) -> Array2<C64> {
    m.slice(ndarray::s![.., ..k]).to_owned()
}

fn factor(e: &Array2<C64>, mode: Mode, spec: &TruncationSpec) -> Result<Factor> {
    let floor = |w: &[f64], k: usize| {
        let top = w.first().cloned().unwrap_or(0.0);
        w.iter().take(k).take_while(|&&x| x > INVERSION_FLOOR * top).count().max(1)
    };
    match mode {
        Mode::Svd => {
            let (u, s, vh) = linalg::svd(e)?;
            let s = s.to_vec();
            let k = floor(&s, kept_count(&s, spec.cutoff, spec.maxdim()));
            let total: f64 = s.iter().sum();
            let v = linalg::adjoint(&vh);
            let u = cols(&u, k);
            let v = cols(&v, k);
            Ok(Factor {
                p: u.clone(),
                q: v.mapv(|z| z.conj()),
                pt: u.mapv(|z| z.conj()),
                qt: v,
                lam: s[..k].iter().map(|&x| C64::new(x, 0.0)).collect(),
                discarded: if total > 0.0 { s[k..].iter().sum::<f64>() / total } else { 0.0 },
                full: s,
                eig: vec![],
            })
        }
        Mode::Takagi => {
            let asym = linalg::fro_norm(&(e - &e.t())) / linalg::fro_norm(e).max(1e-300);
            if asym > SYMMETRIC_MODE_TOL {
                return Err(Error::SymmetryViolation(asym));
            }
            let sym = (e + &e.t()).mapv(|z| z * 0.5);
            let full = linalg::singular_values(&sym)?.to_vec();
            let t = takagi_matrix(&sym, spec.cutoff, spec.maxdim())?;
            let k = floor(&t.s, t.s.len());
            let u = cols(&t.u_z, k);
            Ok(Factor {
                p: u.clone(),
                q: u.clone(),
                pt: u.mapv(|z| z.conj()),
                qt: u.mapv(|z| z.conj()),
                lam: t.s[..k].iter().map(|&x| C64::new(x, 0.0)).collect(),
                discarded: {
                    let total: f64 = full.iter().sum();
                    if total > 0.0 {
                        full[k..].iter().sum::<f64>() / total
                    } else {
                        0.0
                    }
                },
                full,
                eig: vec![],
            })
        }
        Mode::Eig => {
            let asym = linalg::fro_norm(&(e - &e.t())) / linalg::fro_norm(e).max(1e-300);
            if asym > SYMMETRIC_MODE_TOL {
                return Err(Error::SymmetryViolation(asym));
            }
            let sym = (e + &e.t()).mapv(|z| z * 0.5);
            let d = symm_orth_eig_matrix(&sym)?;
            let moduli: Vec<f64> = d.lambda.iter().map(|z| z.norm()).collect();
            let k = floor(&moduli, kept_count(&moduli, spec.cutoff, spec.maxdim()));
            let total: f64 = moduli.iter().sum();
            let o = cols(&d.o, k);
            Ok(Factor {
                p: o.clone(),
                q: o.clone(),
                pt: o.clone(),
                qt: o,
                lam: d.lambda[..k].to_vec(),
                discarded: if total > 0.0 { moduli[k..].iter().sum::<f64>() / total } else { 0.0 },
                full: moduli,
                eig: d.lambda.to_vec(),
            })
        }
    }
}

/// Working copy of a pair: shared physical labels, shared outer links.
struct Pair {
    l: Vec<LabeledTensor>,
    r: Vec<LabeledTensor>,
    phys: Vec<IndexLabel>,
    ll: Vec<IndexLabel>,
    rl: Vec<IndexLabel>,
}

impl Pair {
    fn new(l: &TensorTrain, r: &TensorTrain) -> Result<Self> {
        let n = l.len();
        let r = r.with_phys(l.phys_labels())?.with_fresh_links();
        let mut rs = r.sites().to_vec();
        let mut rl = r.links().to_vec();
        rs[0] = rs[0].relabel(&rl[0], l.link(0))?;
        rs[n - 1] = rs[n - 1].relabel(&rl[n], l.link(n))?;
        rl[0] = l.link(0).clone();
        rl[n] = l.link(n).clone();
        Ok(Self { l: l.sites().to_vec(), r: rs, phys: l.phys_labels().to_vec(), ll: l.links().to_vec(), rl })
    }

    fn env(&self, i: usize) -> Result<Array2<C64>> {
        self.l[i].contract(&self.r[i])?.matrix(&[self.ll[i].clone()], &[self.rl[i].clone()])
    }

    fn apply(&mut self, i: usize, f: &Factor) -> Result<()> {
        let k = f.lam.len();
        let link = IndexLabel::new(k, "rtm");
        let sq: Vec<C64> = f.lam.iter().map(|z| z.sqrt()).collect();
        let isq: Vec<C64> = sq.iter().map(|z| 1.0 / z).collect();
        let sq = ndarray::Array1::from(sq);
        let isq = ndarray::Array1::from(isq);
        let tensor = |m: &Array2<C64>, row: &IndexLabel| {
            LabeledTensor::from_matrix(m, std::slice::from_ref(row), std::slice::from_ref(&link))
        };
        let lo = tensor(&linalg::scale_cols(&f.p, &sq), &self.ll[i])?;
        let ro = tensor(&linalg::scale_cols(&f.q, &sq), &self.rl[i])?;
        let li = tensor(&linalg::scale_cols(&f.pt, &isq), &self.ll[i])?;
        let ri = tensor(&linalg::scale_cols(&f.qt, &isq), &self.rl[i])?;
        self.l[i] = self.l[i].contract(&li)?;
        self.r[i] = self.r[i].contract(&ri)?;
        self.l[i - 1] = self.l[i - 1].contract(&lo)?;
        self.r[i - 1] = self.r[i - 1].contract(&ro)?;
        self.ll[i] = link.clone();
        self.rl[i] = link;
        Ok(())
    }

    fn finish(self, r_phys: &[IndexLabel]) -> Result<(TensorTrain, TensorTrain)> {
        let l = TensorTrain::from_sites(self.l, self.phys.clone(), self.ll)?;
        let r = TensorTrain::from_sites(self.r, self.phys, self.rl)?.with_fresh_links().with_phys(r_phys)?;
        Ok((l, r))
    }
}

struct Swept {
    l: TensorTrain,
    r: TensorTrain,
    spectra: Vec<Vec<f64>>,
    discarded: Vec<f64>,
    eig: Vec<Vec<C64>>,
    overlap: C64,
}

fn check_pair(l: &TensorTrain, r: &TensorTrain) -> Result<C64> {
    if l.len() != r.len() {
        return Err(Error::LengthMismatch(l.len(), r.len()));
    }
    let ov = overlap_noconj(l, r)?;
    let scale = norm(l)? * norm(r)?;
    if !ov.is_finite() || ov.norm() <= ORTHOGONAL_OVERLAP * scale {
        return Err(Error::VanishingOverlap(ov.norm() / scale.max(1e-300)));
    }
    Ok(ov)
}

/// Sweep from the last site toward site 0.
fn sweep_from_end(l: &TensorTrain, r: &TensorTrain, spec: &TruncationSpec, mode: Mode) -> Result<Swept> {
    spec.validate()?;
    let n = l.len();
    if n != r.len() {
        return Err(Error::LengthMismatch(n, r.len()));
    }
    let mut spectra = vec![vec![1.0]; n + 1];
    let mut discarded = vec![0.0; n + 1];
    let mut eig = vec![vec![C64::new(1.0, 0.0)]; n + 1];
    if n == 1 {
        let ov = check_pair(l, r)?;
        return Ok(Swept { l: l.clone(), r: r.clone(), spectra, discarded, eig, overlap: ov });
    }
    // The eigenvalue mode needs the far side bilinearly orthonormal (so the
    // environment is similar to the RTM); the others need it isometric.
    let lc = if mode == Mode::Eig {
        sweep_from_end(&l.reversed(), &l.reversed(), &TruncationSpec::lossless(), Mode::Takagi)?.r.reversed()
    } else {
        canonicalize(l, n - 1)?
    };
    let rc = if mode == Mode::Svd { canonicalize(r, n - 1)? } else { lc.clone() };
    let ov = check_pair(&lc, &rc)?;
    let mut pair = Pair::new(&lc, &rc)?;
    for i in (1..n).rev() {
        let e = pair.env(i)?;
        let f = factor(&e, mode, spec)?;
        let total: f64 = f.full.iter().sum();
        spectra[i] = f.full.iter().map(|x| x / total).collect();
        discarded[i] = f.discarded;
        if mode == Mode::Eig {
            eig[i] = f.eig.iter().map(|z| z / ov).collect();
        }
        pair.apply(i, &f)?;
    }
    let (lo, ro) = pair.finish(r.phys_labels())?;
    Ok(Swept { l: lo, r: ro, spectra, discarded, eig, overlap: ov })
}

fn sweep(l: &TensorTrain, r: &TensorTrain, spec: &TruncationSpec, mode: Mode) -> Result<Swept> {
    match spec.direction {
        Direction::Right => sweep_from_end(l, r, spec, mode),
        Direction::Left => {
            let s = sweep_from_end(&l.reversed(), &r.reversed(), spec, mode)?;
            let rev = |mut v: Vec<Vec<f64>>| {
                v.reverse();
                v
            };
            let mut d = s.discarded;
            d.reverse();
            let mut e = s.eig;
            e.reverse();
            Ok(Swept {
                l: s.l.reversed(),
                r: s.r.reversed(),
                spectra: rev(s.spectra),
                discarded: d,
                eig: e,
                overlap: s.overlap,
            })
        }
    }
}

/// RTM truncation of a general pair.
pub fn truncate_rtm(l: &TensorTrain, r: &TensorTrain, spec: &TruncationSpec) -> Result<RtmSweepResult> {
    let s = sweep(l, r, spec, Mode::Svd)?;
    Ok(RtmSweepResult { l_out: s.l, r_out: s.r, spectra: s.spectra, discarded: s.discarded, overlap: s.overlap })
}

/// RTM truncation when `psi` plays both roles (`<L| = psi^T`, `|R> = psi`);
/// environments are complex symmetric and split with a Takagi factorization.
pub fn truncate_rtm_symmetric(psi: &TensorTrain, spec: &TruncationSpec) -> Result<SymmetricSweepResult> {
    let s = sweep(psi, psi, spec, Mode::Takagi)?;
    Ok(SymmetricSweepResult { psi: s.r, spectra: s.spectra, discarded: s.discarded, overlap: s.overlap, eigenvalues: vec![] })
}

/// Experimental symmetric truncation on RTM eigenvalues: environments are
/// diagonalized by complex orthogonal matrices and the eigenvalues of
/// smallest modulus are discarded. Fails on defective environments.
pub fn truncate_rtm_symmetric_eig(psi: &TensorTrain, spec: &TruncationSpec) -> Result<SymmetricSweepResult> {
    let s = sweep(psi, psi, spec, Mode::Eig)?;
    Ok(SymmetricSweepResult {
        psi: s.r,
        spectra: s.spectra,
        discarded: s.discarded,
        overlap: s.overlap,
        eigenvalues: s.eig,
    })
}

/// Environment `sum_s L_i(s) env R_i(s)` contracted from site `n - 1` down to `stop`.
fn env_from_end(l: &TensorTrain, r: &TensorTrain, stop: usize) -> Result<(Array2<C64>, Vec<f64>)> {
    let n = l.len();
    let r = r.with_phys(l.phys_labels())?.with_fresh_links();
    let mut env = LabeledTensor::scalar(C64::new(1.0, 0.0))
        .with_dummy(l.link(n))?
        .with_dummy(r.link(n))?;
    let mut residuals = vec![0.0; n + 1];
    for i in (stop..n).rev() {
        env = l.site(i).contract(&env)?.contract(r.site(i))?;
        let m = env.matrix(&[l.link(i).clone()], &[r.link(i).clone()])?;
        if m.nrows() == m.ncols() {
            residuals[i] = linalg::fro_norm(&(&m - &linalg::eye(m.nrows())));
        } else {
            residuals[i] = f64::INFINITY;
        }
    }
    let m = env.matrix(&[l.link(stop).clone()], &[r.link(stop).clone()])?;
    Ok((m, residuals))
}

/// Deviation from the identity of the pairwise environments on every bond the
/// sweep processed (bond-indexed; unprocessed bonds hold 0).
pub fn generalized_canonical_residuals(l: &TensorTrain, r: &TensorTrain, direction: Direction) -> Result<Vec<f64>> {
    let n = l.len();
    match direction {
        Direction::Right => {
            let (_, mut res) = env_from_end(l, r, 0)?;
            res[0] = 0.0;
            Ok(res)
        }
        Direction::Left => {
            let (_, res) = env_from_end(&l.reversed(), &r.reversed(), 0)?;
            let mut out = vec![0.0; n + 1];
            for b in 1..n {
                out[b] = res[n - b];
            }
            Ok(out)
        }
    }
}

/// Singular values (unit sum, descending) of the RTM of sites `0..cut`,
/// i.e. with sites `cut..n` traced out.
pub fn rtm_singular_spectrum(l: &TensorTrain, r: &TensorTrain, cut: usize) -> Result<Vec<f64>> {
    check_pair(l, r)?;
    let n = l.len();
    if cut == 0 || cut >= n {
        return Ok(vec![1.0]);
    }
    let lc = canonicalize(l, cut)?;
    let rc = canonicalize(r, cut)?;
    let (e, _) = env_from_end(&lc, &rc, cut)?;
    let s = linalg::singular_values(&e)?;
    let total: f64 = s.iter().sum();
    Ok(s.iter().map(|x| x / total).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{ONE, ZERO};
    use crate::mps::{dense_overlap, entanglement_spectrum, truncate_rdm};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Dense RTM at bond `cut` for trains over identical local dims.
    fn dense_rtm(l: &TensorTrain, r: &TensorTrain, cut: usize) -> Array2<C64> {
        let lv = l.to_dense().unwrap();
        let rv = r.to_dense().unwrap();
        let left: usize = l.phys_labels()[..cut].iter().map(|p| p.dim()).product();
        let right = lv.len() / left;
        let ov = dense_overlap(&lv, &rv);
        Array2::from_shape_fn((left, left), |(a, b)| {
            (0..right).map(|k| rv[a * right + k] * lv[b * right + k]).sum::<C64>() / ov
        })
    }

    fn sym_train(n: usize, chi: usize, seed: u64) -> TensorTrain {
        TensorTrain::random(&vec![2; n], chi, &mut rng(seed)).unwrap()
    }

    #[test]
    fn spectrum_matches_dense_rtm() {
        let l = TensorTrain::random(&[2, 3, 2, 2], 3, &mut rng(1)).unwrap();
        let r = TensorTrain::random(&[2, 3, 2, 2], 4, &mut rng(2)).unwrap();
        for cut in 1..4 {
            let got = rtm_singular_spectrum(&l, &r, cut).unwrap();
            let want = linalg::singular_values(&dense_rtm(&l, &r, cut)).unwrap();
            let total: f64 = want.iter().sum();
            for (k, g) in got.iter().enumerate() {
                assert!((g - want[k] / total).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn lossless_sweep_preserves_overlap_and_gives_canonical_form() {
        for dir in [Direction::Left, Direction::Right] {
            let l = TensorTrain::random(&[2; 5], 4, &mut rng(3)).unwrap();
            let r = TensorTrain::random(&[2; 5], 4, &mut rng(4)).unwrap();
            let out = truncate_rtm(&l, &r, &TruncationSpec::lossless().with_direction(dir)).unwrap();
            let before = overlap_noconj(&l, &r).unwrap();
            let after = overlap_noconj(&out.l_out, &out.r_out).unwrap();
            assert!((before - after).norm() < 1e-10 * before.norm());
            let res = generalized_canonical_residuals(&out.l_out, &out.r_out, dir).unwrap();
            assert!(res.iter().all(|&x| x < 1e-8), "{res:?}");
            // spectra in the sweep equal the RTM of the inputs at the first cut
            let first = if dir == Direction::Right { 4 } else { 1 };
            let want = if dir == Direction::Right {
                rtm_singular_spectrum(&l, &r, first).unwrap()
            } else {
                rtm_singular_spectrum(&l.reversed(), &r.reversed(), 5 - first).unwrap()
            };
            for (a, b) in out.spectra[first].iter().zip(&want) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn sweep_spectra_are_rtm_spectra_of_the_output() {
        let l = TensorTrain::random(&[2; 6], 5, &mut rng(5)).unwrap();
        let r = TensorTrain::random(&[2; 6], 5, &mut rng(6)).unwrap();
        let out = truncate_rtm(&l, &r, &TruncationSpec::lossless().with_direction(Direction::Left)).unwrap();
        for b in 1..6 {
            let want = rtm_singular_spectrum(&l.reversed(), &r.reversed(), 6 - b).unwrap();
            for (a, w) in out.spectra[b].iter().zip(&want) {
                assert!((a - w).abs() < 1e-9, "bond {b}");
            }
        }
        // the two reduced matrices share eigenvalues but not singular values
        let other = rtm_singular_spectrum(&l, &r, 3).unwrap();
        let diff = other.iter().zip(&out.spectra[3]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff > 1e-6);
    }

    #[test]
    fn product_states_are_unchanged() {
        let v = vec![vec![C64::new(0.6, 0.1), C64::new(0.2, -0.7)]; 4];
        let l = TensorTrain::product(&v).unwrap();
        let out = truncate_rtm(&l, &l, &TruncationSpec::default()).unwrap();
        assert_eq!(out.l_out.max_bond_dim(), 1);
        for s in &out.spectra {
            assert!((s[0] - 1.0).abs() < 1e-12);
            assert!(s.iter().skip(1).all(|&x| x < 1e-12));
        }
        let sym = truncate_rtm_symmetric(&l, &TruncationSpec::default()).unwrap();
        assert_eq!(sym.psi.max_bond_dim(), 1);
    }

    #[test]
    fn conjugate_pair_reduces_to_rdm_truncation() {
        let l = TensorTrain::random(&[2; 6], 6, &mut rng(7)).unwrap();
        let r = l.conj();
        for b in 1..6 {
            let rtm = rtm_singular_spectrum(&l, &r, b).unwrap();
            let rdm = entanglement_spectrum(&l, b).unwrap();
            for (a, p) in rtm.iter().zip(&rdm.p) {
                assert!((a - p).abs() < 1e-10);
            }
        }
        // same sweep order as the RDM truncation (from the last site)
        let spec = TruncationSpec::new(0.0, 3).with_direction(Direction::Right);
        let out = truncate_rtm(&l, &r, &spec).unwrap();
        let (rdm, _) = truncate_rdm(&l, 0.0, Some(3)).unwrap();
        let a = out.r_out.to_dense().unwrap();
        let b: Vec<C64> = rdm.to_dense().unwrap().iter().map(|z| z.conj()).collect();
        let ac: Vec<C64> = a.iter().map(|z| z.conj()).collect();
        let bc: Vec<C64> = b.iter().map(|z| z.conj()).collect();
        let fid = dense_overlap(&ac, &b).norm() / (dense_overlap(&ac, &a).norm() * dense_overlap(&bc, &b).norm()).sqrt();
        assert!((fid - 1.0).abs() < 1e-9, "fidelity {fid}");
    }

    #[test]
    fn orthogonal_pair_is_rejected() {
        let l = TensorTrain::product(&[vec![ONE, ZERO], vec![ONE, ZERO]]).unwrap();
        let r = TensorTrain::product(&[vec![ZERO, ONE], vec![ONE, ZERO]]).unwrap();
        assert!(matches!(truncate_rtm(&l, &r, &TruncationSpec::default()), Err(Error::VanishingOverlap(_))));
        assert!(matches!(rtm_singular_spectrum(&l, &r, 1), Err(Error::VanishingOverlap(_))));
    }

    #[test]
    fn symmetric_sweep_agrees_with_general_sweep() {
        for seed in 0..4 {
            let psi = sym_train(6, 4, 100 + seed);
            let spec = TruncationSpec::new(1e-6, 3);
            let s = truncate_rtm_symmetric(&psi, &spec).unwrap();
            let g = truncate_rtm(&psi, &psi, &spec).unwrap();
            for b in 1..6 {
                for (x, y) in s.spectra[b].iter().zip(&g.spectra[b]) {
                    assert!((x - y).abs() < 1e-8);
                }
            }
            let a = overlap_noconj(&s.psi, &s.psi).unwrap();
            let c = overlap_noconj(&g.l_out, &g.r_out).unwrap();
            assert!((a - c).norm() < 1e-8 * c.norm());
        }
    }

    #[test]
    fn ghz_with_one_state_discards_half() {
        let n = 4;
        let mut v = vec![ZERO; 1 << n];
        v[0] = ONE;
        v[(1 << n) - 1] = ONE;
        let psi = TensorTrain::from_dense(&v, &vec![2; n], 0.0, None).unwrap();
        let out = truncate_rtm_symmetric(&psi, &TruncationSpec::new(0.0, 1)).unwrap();
        let first = 1;
        assert!((out.discarded[first] - 0.5).abs() < 1e-12);
        // dense RTM oracle
        let s = linalg::singular_values(&dense_rtm(&psi, &psi, first)).unwrap();
        assert!((s[1] / s.iter().sum::<f64>() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn gauge_on_traced_side_leaves_rtm_invariant_but_moves_rdm() {
        let mut g = rng(11);
        let l = TensorTrain::random(&[2; 5], 4, &mut g).unwrap();
        let r = TensorTrain::random(&[2; 5], 4, &mut g).unwrap();
        let cut = 2;
        let x = loop {
            let m = Array2::from_shape_fn((2, 2), |_| C64::new(rand::Rng::gen::<f64>(&mut g) - 0.5, rand::Rng::gen::<f64>(&mut g) - 0.5));
            let s = linalg::singular_values(&m).unwrap();
            if s[0] / s[1] < 10.0 && s[0] / s[1] > 3.0 {
                break m;
            }
        };
        let xi = linalg::inv(&x).unwrap();
        let (mut l2, mut r2) = (l.clone(), r.clone());
        for i in cut..5 {
            l2.apply_local(i, &x.t().to_owned()).unwrap();
            r2.apply_local(i, &xi).unwrap();
        }
        let before = rtm_singular_spectrum(&l, &r, cut).unwrap();
        let after = rtm_singular_spectrum(&l2, &r2, cut).unwrap();
        for (a, b) in before.iter().zip(&after) {
            assert!((a - b).abs() < 1e-8);
        }
        let p0 = entanglement_spectrum(&l, cut).unwrap().p;
        let p1 = entanglement_spectrum(&l2, cut).unwrap().p;
        let dev = p0.iter().zip(&p1).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(dev > 1e-3, "rdm moved by {dev}");
    }

    #[test]
    fn eigenvalue_mode_preserves_overlap_when_lossless() {
        let psi = sym_train(5, 3, 21);
        let out = truncate_rtm_symmetric_eig(&psi, &TruncationSpec::lossless()).unwrap();
        let a = overlap_noconj(&psi, &psi).unwrap();
        let b = overlap_noconj(&out.psi, &out.psi).unwrap();
        assert!((a - b).norm() < 1e-9 * a.norm());
        // eigenvalues of the unit-trace RTM sum to one
        let tr: C64 = out.eigenvalues[1].iter().sum();
        assert!((tr - ONE).norm() < 1e-9);
    }

    #[test]
    fn asymmetric_input_to_symmetric_mode_fails() {
        let l = TensorTrain::random(&[2; 4], 3, &mut rng(30)).unwrap();
        let r = TensorTrain::random(&[2; 4], 3, &mut rng(31)).unwrap();
        // the symmetric path checks its environments, which only the pair would break
        let mut pair = Pair::new(&l, &r).unwrap();
        let e = pair.env(3).unwrap();
        assert!(matches!(factor(&e, Mode::Takagi, &TruncationSpec::default()), Err(Error::SymmetryViolation(_))));
        let _ = &mut pair;
    }
}
