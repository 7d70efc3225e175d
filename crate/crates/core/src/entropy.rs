//! Generalized temporal entropies of reduced transition matrices.
//!
//! For a pair `|psi>` (right) and `<phi|` (left, no conjugation) the RTM of
//! the first `b` sites is `T_b = Tr_{>=b} |psi><phi| / <phi|psi>`. With `G_b`
//! the bilinear environment of the two trains over sites `< b` and `E_b` the
//! one over sites `>= b`, `T_b` has the same nonzero spectrum as the small
//! matrix `G_b E_b^T / <phi|psi>`. The two-copy trace `Tr(T_b^2)` therefore
//! reduces to `tr((G_b E_b^T)^2)` and `T_b` is never built.

use ndarray::Array2;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::decomp::symm_orth_eig_matrix;
use crate::error::{Error, Result};
use crate::linalg;
use crate::mps::TensorTrain;
use crate::tensor::LabeledTensor;
use crate::truncation::{truncate_rtm_symmetric, Direction, TruncationSpec, ORTHOGONAL_OVERLAP};

/// Bilinear environments of a pair: `left[b]` over sites `< b`, `right[b]`
/// over sites `>= b`, both as matrices `[phi link, psi link]` at bond `b`.
pub struct PairEnvironments {
    pub left: Vec<Array2<C64>>,
    pub right: Vec<Array2<C64>>,
}

pub fn pair_environments(psi: &TensorTrain, phi: &TensorTrain) -> Result<PairEnvironments> {
    let n = psi.len();
    if phi.len() != n {
        return Err(Error::LengthMismatch(n, phi.len()));
    }
    let psi = psi.with_phys(phi.phys_labels())?.with_fresh_links();
    let one = |a: &crate::tensor::IndexLabel, b: &crate::tensor::IndexLabel| -> Result<LabeledTensor> {
        LabeledTensor::scalar(C64::new(1.0, 0.0)).with_dummy(a)?.with_dummy(b)
    };
    let mut left = Vec::with_capacity(n + 1);
    let mut env = one(phi.link(0), psi.link(0))?;
    left.push(env.matrix(&[phi.link(0).clone()], &[psi.link(0).clone()])?);
    for i in 0..n {
        env = env.contract(phi.site(i))?.contract(psi.site(i))?;
        left.push(env.matrix(&[phi.link(i + 1).clone()], &[psi.link(i + 1).clone()])?);
    }
    let mut right = vec![Array2::zeros((0, 0)); n + 1];
    let mut env = one(phi.link(n), psi.link(n))?;
    right[n] = env.matrix(&[phi.link(n).clone()], &[psi.link(n).clone()])?;
    for i in (0..n).rev() {
        env = phi.site(i).contract(&env)?.contract(psi.site(i))?;
        right[i] = env.matrix(&[phi.link(i).clone()], &[psi.link(i).clone()])?;
    }
    Ok(PairEnvironments { left, right })
}

/// `G_b^T E_b`: the `psi`-link square matrix whose trace is `<phi|psi>` and
/// whose nonzero eigenvalues are those of the unnormalized RTM.
fn reduced(env: &PairEnvironments, b: usize) -> Array2<C64> {
    env.left[b].t().dot(&env.right[b])
}

fn check_overlap(ov: C64, scale: f64) -> Result<()> {
    if !ov.is_finite() || ov.norm() <= ORTHOGONAL_OVERLAP * scale {
        return Err(Error::VanishingOverlap(ov.norm() / scale.max(1e-300)));
    }
    Ok(())
}

/// `Tr(T_b^2)` for every internal bond `b = 1..n-1` (index `b - 1`).
pub fn gen_purity(psi: &TensorTrain, phi: &TensorTrain) -> Result<Vec<C64>> {
    let n = psi.len();
    let env = pair_environments(psi, phi)?;
    let scale = crate::mps::norm(psi)? * crate::mps::norm(phi)?;
    (1..n)
        .map(|b| {
            let m = reduced(&env, b);
            let ov = m.diag().sum();
            check_overlap(ov, scale)?;
            let sq = m.dot(&m);
            Ok(sq.diag().sum() / (ov * ov))
        })
        .collect()
}

/// Generalized Renyi-2 entropy `-log Tr(T_b^2)` per internal bond (principal log).
pub fn gen_renyi2(psi: &TensorTrain, phi: &TensorTrain) -> Result<Vec<C64>> {
    Ok(gen_purity(psi, phi)?.into_iter().map(|p| -p.ln()).collect())
}

/// Generalized Tsallis-2 entropy `1 - Tr(T_b^2)` per internal bond.
pub fn gen_tsallis2(psi: &TensorTrain, phi: &TensorTrain) -> Result<Vec<C64>> {
    Ok(gen_purity(psi, phi)?.into_iter().map(|p| C64::new(1.0, 0.0) - p).collect())
}

/// Options of [`diagonalize_rtm_symmetric`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagOptions {
    /// Bring the train into generalized canonical form first, so that each
    /// right environment is similar to the RTM and complex symmetric.
    pub bring_left_gen: bool,
    pub normalize_eigs: bool,
    pub sort_by_largest: bool,
    /// Eigenvalues with modulus at most `cutoff` are dropped.
    pub cutoff: f64,
}

impl Default for DiagOptions {
    fn default() -> Self {
        Self { bring_left_gen: true, normalize_eigs: true, sort_by_largest: true, cutoff: 1e-14 }
    }
}

/// Spectrum of the RTM at one cut.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneralizedSpectrum {
    pub cut: usize,
    pub eigenvalues: Vec<C64>,
    /// Sum of the reported eigenvalues (one after normalization).
    pub trace_check: C64,
    /// Set when this cut could not be diagonalized.
    pub error: Option<String>,
}

impl GeneralizedSpectrum {
    /// `-sum lam log lam` over eigenvalues with modulus above `cutoff`.
    pub fn von_neumann(&self, cutoff: f64) -> C64 {
        -self.eigenvalues.iter().filter(|z| z.norm() > cutoff).map(|z| z * z.ln()).sum::<C64>()
    }

    pub fn renyi2(&self) -> C64 {
        -self.eigenvalues.iter().map(|z| z * z).sum::<C64>().ln()
    }
}

/// Sort by modulus descending, then phase ascending, with `tol` bucketing of the modulus.
pub fn sort_spectrum(v: &mut [C64], tol: f64) {
    v.sort_by(|a, b| {
        let (ma, mb) = (a.norm(), b.norm());
        if (ma - mb).abs() > tol {
            mb.partial_cmp(&ma).unwrap()
        } else {
            a.arg().partial_cmp(&b.arg()).unwrap()
        }
    });
}

/// RTM eigenvalues of the symmetric pair `<psi^T|`, `|psi>` at every internal cut.
///
/// With `bring_left_gen` the left environments become identities, the right
/// environment at each cut is complex symmetric and similar to the RTM, and it
/// is diagonalized with a complex orthogonal matrix. Otherwise the general
/// eigenproblem of the reduced matrix is solved.
pub fn diagonalize_rtm_symmetric(psi: &TensorTrain, opts: &DiagOptions) -> Result<Vec<GeneralizedSpectrum>> {
    let n = psi.len();
    let work = if opts.bring_left_gen && n > 1 {
        let spec = TruncationSpec::lossless().with_direction(Direction::Left);
        truncate_rtm_symmetric(psi, &spec)?.psi
    } else {
        psi.clone()
    };
    let env = pair_environments(&work, &work)?;
    let scale = crate::mps::norm(&work)?.powi(2);
    let mut out = Vec::with_capacity(n.saturating_sub(1));
    for b in 1..n {
        let m = if opts.bring_left_gen { env.right[b].clone() } else { reduced(&env, b) };
        let ov = m.diag().sum();
        check_overlap(ov, scale)?;
        let eig = if opts.bring_left_gen {
            let sym = (&m + &m.t()).mapv(|z| z * 0.5);
            symm_orth_eig_matrix(&sym).map(|d| d.lambda.to_vec())
        } else {
            linalg::eig(&m).map(|(w, _)| w.to_vec())
        };
        let spectrum = match eig {
            Ok(mut lam) => {
                if opts.normalize_eigs {
                    lam.iter_mut().for_each(|z| *z /= ov);
                }
                let top = lam.iter().map(|z| z.norm()).fold(0.0, f64::max);
                let floor = if opts.normalize_eigs { opts.cutoff } else { opts.cutoff * top };
                lam.retain(|z| z.norm() > floor);
                if opts.sort_by_largest {
                    sort_spectrum(&mut lam, 1e-9);
                }
                let trace_check = lam.iter().sum();
                GeneralizedSpectrum { cut: b, eigenvalues: lam, trace_check, error: None }
            }
            Err(e) => GeneralizedSpectrum { cut: b, eigenvalues: vec![], trace_check: C64::new(0.0, 0.0), error: Some(e.to_string()) },
        };
        out.push(spectrum);
    }
    Ok(out)
}

/// Von Neumann entropy of a unit-sum real spectrum.
pub fn shannon(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::ONE;
    use crate::mps::{dense_overlap, entanglement_spectrum};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dense_rtm(psi: &TensorTrain, phi: &TensorTrain, cut: usize) -> Array2<C64> {
        let r = psi.to_dense().unwrap();
        let l = phi.to_dense().unwrap();
        let left: usize = psi.phys_labels()[..cut].iter().map(|p| p.dim()).product();
        let right = r.len() / left;
        let ov = dense_overlap(&l, &r);
        Array2::from_shape_fn((left, left), |(a, b)| (0..right).map(|k| r[a * right + k] * l[b * right + k]).sum::<C64>() / ov)
    }

    #[test]
    fn product_pair_has_zero_entropy() {
        let v = vec![vec![C64::new(0.3, 0.2), C64::new(0.9, -0.1)]; 4];
        let p = TensorTrain::product(&v).unwrap();
        for s in gen_renyi2(&p, &p).unwrap() {
            assert!(s.norm() < 1e-12);
        }
        for s in gen_tsallis2(&p, &p).unwrap() {
            assert!(s.norm() < 1e-12);
        }
        let d = diagonalize_rtm_symmetric(&p, &DiagOptions::default()).unwrap();
        for g in d {
            assert_eq!(g.eigenvalues.len(), 1);
            assert!((g.eigenvalues[0] - ONE).norm() < 1e-12);
            assert!(g.von_neumann(1e-14).norm() < 1e-12);
        }
    }

    #[test]
    fn two_copy_trace_matches_dense_rtm() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let psi = TensorTrain::random(&[2, 2, 3, 2], 3, &mut rng).unwrap();
        let phi = TensorTrain::random(&[2, 2, 3, 2], 4, &mut rng).unwrap();
        let r2 = gen_renyi2(&psi, &phi).unwrap();
        let t2 = gen_tsallis2(&psi, &phi).unwrap();
        for b in 1..4 {
            let t = dense_rtm(&psi, &phi, b);
            let tr2 = t.dot(&t).diag().sum();
            assert!((r2[b - 1] - (-tr2.ln())).norm() < 1e-8);
            assert!((t2[b - 1] - (ONE - tr2)).norm() < 1e-8);
            assert!((-(ONE - t2[b - 1]).ln() - r2[b - 1]).norm() < 1e-10);
        }
    }

    #[test]
    fn conjugate_pair_reduces_to_rdm_renyi() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let psi = TensorTrain::random(&[2; 5], 4, &mut rng).unwrap();
        let r2 = gen_renyi2(&psi, &psi.conj()).unwrap();
        for b in 1..5 {
            let p = entanglement_spectrum(&psi, b).unwrap().p;
            let want = -p.iter().map(|x| x * x).sum::<f64>().ln();
            assert!((r2[b - 1] - C64::new(want, 0.0)).norm() < 1e-10);
        }
    }

    #[test]
    fn symmetric_eigenvalues_match_dense_eigensolve() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let psi = TensorTrain::random(&[2; 4], 3, &mut rng).unwrap();
        let spectra = diagonalize_rtm_symmetric(&psi, &DiagOptions::default()).unwrap();
        let general = diagonalize_rtm_symmetric(&psi, &DiagOptions { bring_left_gen: false, ..Default::default() }).unwrap();
        for (g, h) in spectra.iter().zip(&general) {
            assert!(g.error.is_none());
            let (w, _) = linalg::eig(&dense_rtm(&psi, &psi, g.cut)).unwrap();
            let mut want: Vec<C64> = w.iter().cloned().filter(|z| z.norm() > 1e-10).collect();
            sort_spectrum(&mut want, 1e-9);
            assert_eq!(want.len(), g.eigenvalues.len());
            for ((a, b), c) in g.eigenvalues.iter().zip(&want).zip(&h.eigenvalues) {
                assert!((a - b).norm() < 1e-7);
                assert!((c - b).norm() < 1e-7);
            }
            assert!((g.trace_check - ONE).norm() < 1e-8);
        }
    }
}
