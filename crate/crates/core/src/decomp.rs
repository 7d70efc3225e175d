//! Truncated SVD splits, the Autonne–Takagi factorization and the
//! complex-orthogonal eigendecomposition of complex symmetric matrices.

use ndarray::{self as nd, Array1, Array2};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::linalg::{self, ONE};
use crate::tensor::{IndexLabel, LabeledTensor};

/// Two singular values closer than this (relative to the largest) share a cluster.
pub const DEGENERACY_GAP: f64 = 1e-10;
/// Singular values below this fraction of the largest are treated as zero.
pub const NUMERICAL_ZERO: f64 = 1e-13;
/// Relative asymmetry above which a matrix is rejected as non-symmetric.
pub const SYMMETRY_TOL: f64 = 1e-8;
/// Gram condition above which an eigenbasis is deemed defective. The
/// reconstruction error of `O diag O^T` grows like machine epsilon times this.
pub const DEFECTIVE_COND: f64 = 1e6;

/// Number of leading entries of the descending `weights` to keep: those whose
/// share of the total exceeds `cutoff`, capped at `maxdim`, never fewer than one.
pub fn kept_count(weights: &[f64], cutoff: f64, maxdim: Option<usize>) -> usize {
    let total: f64 = weights.iter().sum();
    let mut k = if total > 0.0 {
        weights.iter().take_while(|&&w| w / total > cutoff).count()
    } else {
        0
    };
    if let Some(m) = maxdim {
        k = k.min(m);
    }
    k.max(1).min(weights.len().max(1))
}

/// Result of [`svd_split`]; `u` and `vh` share the new label `link`.
#[derive(Clone, Debug)]
pub struct SvdResult {
    pub u: LabeledTensor,
    pub s: Vec<f64>,
    pub vh: LabeledTensor,
    pub link: IndexLabel,
    /// Discarded weight `sum(s_discarded^2) / sum(s^2)`.
    pub truncation_error: f64,
    /// Set when the input had zero norm.
    pub degenerate: bool,
}

impl SvdResult {
    fn s_complex(&self) -> Vec<C64> {
        self.s.iter().map(|&x| C64::new(x, 0.0)).collect()
    }

    /// `u * diag(s)`.
    pub fn us(&self) -> LabeledTensor {
        self.u.scale_axis(&self.link, &self.s_complex()).expect("link is on u")
    }

    /// `diag(s) * vh`.
    pub fn svh(&self) -> LabeledTensor {
        self.vh.scale_axis(&self.link, &self.s_complex()).expect("link is on vh")
    }

    pub fn reconstruct(&self) -> Result<LabeledTensor> {
        self.us().contract(&self.vh)
    }
}

/// Split `t` across the bipartition (`row_labels` | rest), keeping singular
/// values whose squared share exceeds `cutoff`, at most `maxdim` of them.
pub fn svd_split(
    t: &LabeledTensor,
    row_labels: &[IndexLabel],
    cutoff: f64,
    maxdim: Option<usize>,
) -> Result<SvdResult> {
    for l in row_labels {
        if !t.has(l) {
            return Err(Error::MissingLabel(l.to_string()));
        }
    }
    let rows: Vec<IndexLabel> = t.labels().iter().filter(|l| row_labels.contains(l)).cloned().collect();
    let cols: Vec<IndexLabel> = t.labels().iter().filter(|l| !row_labels.contains(l)).cloned().collect();
    if rows.is_empty() || cols.is_empty() {
        return Err(Error::InvalidSplit(format!(
            "{} row and {} column labels",
            rows.len(),
            cols.len()
        )));
    }
    let m = t.matrix(&rows, &cols)?;
    let (nr, nc) = m.dim();
    if linalg::fro_norm(&m) == 0.0 {
        let link = IndexLabel::new(1, "svd");
        let mut u = Array2::zeros((nr, 1));
        u[[0, 0]] = ONE;
        let mut vh = Array2::zeros((1, nc));
        vh[[0, 0]] = ONE;
        return Ok(SvdResult {
            u: LabeledTensor::from_matrix(&u, &rows, std::slice::from_ref(&link))?,
            s: vec![0.0],
            vh: LabeledTensor::from_matrix(&vh, std::slice::from_ref(&link), &cols)?,
            link,
            truncation_error: 0.0,
            degenerate: true,
        });
    }
    let (u, s, vh) = linalg::svd(&m)?;
    let w: Vec<f64> = s.iter().map(|x| x * x).collect();
    let k = kept_count(&w, cutoff, maxdim);
    let total: f64 = w.iter().sum();
    let truncation_error = w[k..].iter().sum::<f64>() / total;
    let link = IndexLabel::new(k, "svd");
    Ok(SvdResult {
        u: LabeledTensor::from_matrix(&u.slice(nd::s![.., ..k]).to_owned(), &rows, std::slice::from_ref(&link))?,
        s: s.iter().take(k).cloned().collect(),
        vh: LabeledTensor::from_matrix(&vh.slice(nd::s![..k, ..]).to_owned(), std::slice::from_ref(&link), &cols)?,
        link,
        truncation_error,
        degenerate: false,
    })
}

fn relative_asymmetry(m: &Array2<C64>) -> f64 {
    let n = linalg::fro_norm(m);
    if n == 0.0 {
        return 0.0;
    }
    linalg::fro_norm(&(m - &m.t())) / n
}

fn require_square_symmetric(m: &Array2<C64>) -> Result<()> {
    let (r, c) = m.dim();
    if r != c || r == 0 {
        return Err(Error::Shape { expected: vec![r, r], got: vec![r, c] });
    }
    let a = relative_asymmetry(m);
    if a > SYMMETRY_TOL {
        return Err(Error::SymmetryViolation(a));
    }
    Ok(())
}

/// Takagi factors of a complex symmetric matrix: `m = u_z diag(s) u_z^T`.
#[derive(Clone, Debug)]
pub struct TakagiMatrix {
    pub u_z: Array2<C64>,
    pub s: Vec<f64>,
    pub truncation_error: f64,
    pub degenerate: bool,
}

impl TakagiMatrix {
    pub fn reconstruct(&self) -> Array2<C64> {
        let d = Array1::from_iter(self.s.iter().map(|&x| C64::new(x, 0.0)));
        linalg::scale_cols(&self.u_z, &d).dot(&self.u_z.t())
    }
}

/// Group indices of a descending sequence into runs of near-equal values.
fn clusters_desc(s: &[f64], tol: f64) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=s.len() {
        if i == s.len() || s[i - 1] - s[i] > tol {
            out.push(start..i);
            start = i;
        }
    }
    out
}

/// Principal square root of a small unitary symmetric block, symmetrized.
fn sqrt_symmetric_unitary(z: &Array2<C64>) -> Result<Array2<C64>> {
    if z.dim() == (1, 1) {
        return Ok(nd::arr2(&[[z[[0, 0]].sqrt()]]));
    }
    let r = linalg::matrix_function(z, |x| x.sqrt())?;
    Ok((&r + &r.t()).mapv(|x| x * 0.5))
}

/// Autonne–Takagi factorization of a complex symmetric matrix.
///
/// Built from an SVD `m = U S V^H`: the unitary `Z = U^H conj(V)` is block
/// diagonal on clusters of equal singular values, and `U sqrt(Z)` is a Takagi
/// basis. Truncation keeps values with `s_i / sum(s) > cutoff`.
pub fn takagi_matrix(m: &Array2<C64>, cutoff: f64, maxdim: Option<usize>) -> Result<TakagiMatrix> {
    require_square_symmetric(m)?;
    let n = m.nrows();
    if linalg::fro_norm(m) == 0.0 {
        let mut u_z = Array2::zeros((n, 1));
        u_z[[0, 0]] = ONE;
        return Ok(TakagiMatrix { u_z, s: vec![0.0], truncation_error: 0.0, degenerate: true });
    }
    let ms = (m + &m.t()).mapv(|x| x * 0.5);
    let (u, s, vh) = linalg::svd(&ms)?;
    let smax = s[0];
    let rank = s.iter().take_while(|&&x| x > NUMERICAL_ZERO * smax).count().max(1);
    let s: Vec<f64> = s.iter().take(rank).cloned().collect();
    let u = u.slice(nd::s![.., ..rank]).to_owned();
    // conj(V) has columns conj(v_i); vh rows are v_i^H, so conj(V) = vh^T
    let vconj = vh.slice(nd::s![..rank, ..]).t().to_owned();
    let z = linalg::adjoint(&u).dot(&vconj);
    let mut sqrt_z = Array2::<C64>::zeros((rank, rank));
    for block in clusters_desc(&s, DEGENERACY_GAP * smax) {
        let zb = z.slice(nd::s![block.clone(), block.clone()]).to_owned();
        let rb = sqrt_symmetric_unitary(&zb)?;
        sqrt_z.slice_mut(nd::s![block.clone(), block]).assign(&rb);
    }
    let u_z = u.dot(&sqrt_z);
    let k = kept_count(&s, cutoff, maxdim);
    let total: f64 = s.iter().sum();
    let truncation_error = s[k..].iter().sum::<f64>() / total;
    Ok(TakagiMatrix {
        u_z: u_z.slice(nd::s![.., ..k]).to_owned(),
        s: s[..k].to_vec(),
        truncation_error,
        degenerate: false,
    })
}

/// Complex-orthogonal eigendecomposition `m = o diag(lambda) o^T`, `o^T o = 1`.
#[derive(Clone, Debug)]
pub struct SymmEigMatrix {
    pub o: Array2<C64>,
    pub lambda: Vec<C64>,
}

impl SymmEigMatrix {
    pub fn reconstruct(&self) -> Array2<C64> {
        let d = Array1::from(self.lambda.clone());
        linalg::scale_cols(&self.o, &d).dot(&self.o.t())
    }
}

/// `|V|^2 / s_min(V^T V)` for unit-norm columns `V`: large when the columns are
/// nearly isotropic (`v^T v ~ 0`) or nearly dependent.
fn gram_condition(v: &Array2<C64>, gram: &Array2<C64>) -> Result<f64> {
    let sv = linalg::singular_values(v)?;
    let sg = linalg::singular_values(gram)?;
    let smin = sg[sg.len() - 1];
    Ok(if smin == 0.0 { f64::INFINITY } else { sv[0] * sv[0] / smin })
}

/// Eigendecomposition of a complex symmetric matrix with a complex-orthogonal
/// eigenbasis. Eigenvalues are ordered by modulus (descending), then phase.
/// Within each cluster of equal eigenvalues the eigenvectors `V` are
/// orthonormalized as `V G^{-1/2}` with `G = V^T V`; an ill-conditioned `G`
/// signals a defective matrix.
pub fn symm_orth_eig_matrix(m: &Array2<C64>) -> Result<SymmEigMatrix> {
    require_square_symmetric(m)?;
    let n = m.nrows();
    let ms = (m + &m.t()).mapv(|x| x * 0.5);
    let (w, v) = linalg::eig(&ms)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let (za, zb) = (w[a], w[b]);
        zb.norm()
            .partial_cmp(&za.norm())
            .unwrap()
            .then(za.arg().partial_cmp(&zb.arg()).unwrap())
    });
    let lambda: Vec<C64> = order.iter().map(|&i| w[i]).collect();
    let mut vs = Array2::<C64>::zeros((n, n));
    for (j, &i) in order.iter().enumerate() {
        vs.column_mut(j).assign(&v.column(i));
    }
    let scale = lambda.iter().fold(0.0f64, |a, z| a.max(z.norm())).max(f64::MIN_POSITIVE);
    // union-find over near-equal eigenvalues
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for a in 0..n {
        for b in a + 1..n {
            if (lambda[a] - lambda[b]).norm() <= DEGENERACY_GAP * scale {
                let (ra, rb) = (root(&mut parent, a), root(&mut parent, b));
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut seen = vec![usize::MAX; n];
    for i in 0..n {
        let r = root(&mut parent, i);
        if seen[r] == usize::MAX {
            seen[r] = groups.len();
            groups.push(vec![]);
        }
        groups[seen[r]].push(i);
    }
    let mut o = Array2::<C64>::zeros((n, n));
    for g in groups {
        let mut vg = nd::Array2::from_shape_fn((n, g.len()), |(r, c)| vs[[r, g[c]]]);
        for mut col in vg.columns_mut() {
            let nrm = col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            col.mapv_inplace(|z| z / nrm);
        }
        let gram = vg.t().dot(&vg);
        let cond = gram_condition(&vg, &gram)?;
        if cond > DEFECTIVE_COND {
            return Err(Error::Defective(cond));
        }
        let gi = linalg::matrix_function(&gram, |x| ONE / x.sqrt())?;
        let gi = (&gi + &gi.t()).mapv(|x| x * 0.5);
        let og = vg.dot(&gi);
        for (c, &i) in g.iter().enumerate() {
            o.column_mut(i).assign(&og.column(c));
        }
    }
    Ok(SymmEigMatrix { o, lambda })
}

/// Labeled Takagi factorization; `u_z` carries `row` and the new `link`.
#[derive(Clone, Debug)]
pub struct TakagiResult {
    pub u_z: LabeledTensor,
    pub s: Vec<f64>,
    pub link: IndexLabel,
    pub truncation_error: f64,
    pub degenerate: bool,
}

/// Takagi factorization of `m` viewed as a matrix with rows `row` and columns `col`.
pub fn takagi(
    m: &LabeledTensor,
    row: &IndexLabel,
    col: &IndexLabel,
    cutoff: f64,
    maxdim: Option<usize>,
) -> Result<TakagiResult> {
    let mat = m.matrix(std::slice::from_ref(row), std::slice::from_ref(col))?;
    let t = takagi_matrix(&mat, cutoff, maxdim)?;
    let link = IndexLabel::new(t.s.len(), "takagi");
    Ok(TakagiResult {
        u_z: LabeledTensor::from_matrix(&t.u_z, std::slice::from_ref(row), std::slice::from_ref(&link))?,
        s: t.s,
        link,
        truncation_error: t.truncation_error,
        degenerate: t.degenerate,
    })
}

/// Labeled complex-orthogonal eigendecomposition; `o` carries `row` and `link`.
#[derive(Clone, Debug)]
pub struct SymmEigResult {
    pub o: LabeledTensor,
    pub lambda: Vec<C64>,
    pub link: IndexLabel,
}

pub fn symm_orth_eig(m: &LabeledTensor, row: &IndexLabel, col: &IndexLabel) -> Result<SymmEigResult> {
    let mat = m.matrix(std::slice::from_ref(row), std::slice::from_ref(col))?;
    let e = symm_orth_eig_matrix(&mat)?;
    let link = IndexLabel::new(e.lambda.len(), "eig");
    Ok(SymmEigResult {
        o: LabeledTensor::from_matrix(&e.o, std::slice::from_ref(row), std::slice::from_ref(&link))?,
        lambda: e.lambda,
        link,
    })
}

/// Random complex symmetric matrix with i.i.d. Gaussian-like entries.
pub fn random_symmetric<R: rand::Rng>(n: usize, rng: &mut R) -> Array2<C64> {
    let a = Array2::from_shape_fn((n, n), |_| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5));
    (&a + &a.t()).mapv(|x| x * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::ZERO;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn rel(a: &Array2<C64>, b: &Array2<C64>) -> f64 {
        linalg::fro_norm(&(a - b)) / linalg::fro_norm(b).max(1e-300)
    }

    #[test]
    fn svd_split_reconstructs_and_truncates() {
        let i = IndexLabel::new(3, "i");
        let j = IndexLabel::new(4, "j");
        let k = IndexLabel::new(2, "k");
        let t = LabeledTensor::from_fn(vec![i.clone(), j.clone(), k.clone()], |ix| {
            c((ix[0] as f64 + 1.0) * 0.3 - ix[1] as f64 * 0.1, (ix[2] * ix[1]) as f64 * 0.2)
        })
        .unwrap();
        let r = svd_split(&t, &[j.clone()], 0.0, None).unwrap();
        assert!(r.reconstruct().unwrap().max_abs_diff(&t).unwrap() < 1e-12);
        assert!(r.truncation_error < 1e-20);
        let r1 = svd_split(&t, &[j.clone()], 0.0, Some(1)).unwrap();
        assert_eq!(r1.s.len(), 1);
        let total: f64 = r.s.iter().map(|x| x * x).sum();
        let expected = r.s[1..].iter().map(|x| x * x).sum::<f64>() / total;
        assert!((r1.truncation_error - expected).abs() < 1e-14);
        // truncated reconstruction error equals the discarded weight
        let diff = r1.reconstruct().unwrap().sub(&t).unwrap().norm();
        assert!((diff * diff / total - expected).abs() < 1e-12);
    }

    #[test]
    fn svd_split_of_zero_is_degenerate() {
        let i = IndexLabel::new(2, "i");
        let j = IndexLabel::new(2, "j");
        let t = LabeledTensor::zeros(vec![i.clone(), j]).unwrap();
        let r = svd_split(&t, &[i], 1e-10, None).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.s, vec![0.0]);
    }

    #[test]
    fn svd_split_rejects_bad_partitions() {
        let i = IndexLabel::new(2, "i");
        let j = IndexLabel::new(2, "j");
        let t = LabeledTensor::zeros(vec![i.clone(), j.clone()]).unwrap();
        assert!(matches!(svd_split(&t, &[], 0.0, None), Err(Error::InvalidSplit(_))));
        assert!(matches!(svd_split(&t, &[i, j], 0.0, None), Err(Error::InvalidSplit(_))));
        let other = IndexLabel::new(2, "x");
        let t2 = LabeledTensor::zeros(vec![other.clone()]).unwrap();
        assert!(svd_split(&t2, &[IndexLabel::new(2, "y")], 0.0, None).is_err());
    }

    #[test]
    fn takagi_values_are_singular_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [1, 2, 5, 12] {
            let m = random_symmetric(n, &mut rng);
            let t = takagi_matrix(&m, 0.0, None).unwrap();
            let s = linalg::singular_values(&m).unwrap();
            for (a, b) in t.s.iter().zip(s.iter()) {
                assert!((a - b).abs() < 1e-12 * s[0]);
            }
            assert!(rel(&t.reconstruct(), &m) < 1e-12);
            let uu = linalg::adjoint(&t.u_z).dot(&t.u_z);
            assert!(rel(&uu, &linalg::eye(n)) < 1e-12);
        }
    }

    #[test]
    fn takagi_handles_exact_degeneracy() {
        // symmetric with all singular values equal to one
        let m = nd::array![[ZERO, ONE], [ONE, ZERO]];
        let t = takagi_matrix(&m, 0.0, None).unwrap();
        assert!((t.s[0] - 1.0).abs() < 1e-14 && (t.s[1] - 1.0).abs() < 1e-14);
        assert!(rel(&t.reconstruct(), &m) < 1e-13);
        // a 3x3 case with a doubly degenerate pair below the top value
        let q = nd::array![[c(0.0, 0.0), c(2.0, 0.0), ZERO], [c(2.0, 0.0), ZERO, ZERO], [ZERO, ZERO, c(0.0, 3.0)]];
        let t = takagi_matrix(&q, 0.0, None).unwrap();
        assert!((t.s[0] - 3.0).abs() < 1e-13);
        assert!(rel(&t.reconstruct(), &q) < 1e-13);
    }

    #[test]
    fn takagi_rank_deficient() {
        let v = nd::array![c(1.0, 0.5), c(-0.2, 0.1), c(0.0, 1.0)];
        let m = Array2::from_shape_fn((3, 3), |(i, j)| v[i] * v[j]);
        let t = takagi_matrix(&m, 0.0, None).unwrap();
        assert_eq!(t.s.len(), 1);
        assert!(rel(&t.reconstruct(), &m) < 1e-13);
    }

    #[test]
    fn takagi_rejects_asymmetric() {
        let m = nd::array![[ONE, c(0.5, 0.0)], [ZERO, ONE]];
        assert!(matches!(takagi_matrix(&m, 0.0, None), Err(Error::SymmetryViolation(_))));
        assert!(matches!(symm_orth_eig_matrix(&m), Err(Error::SymmetryViolation(_))));
    }

    #[test]
    fn takagi_truncation_follows_relative_cutoff() {
        let m = Array2::from_diag(&nd::array![c(1.0, 0.0), c(0.0, 0.1), c(-1e-6, 0.0)]);
        let t = takagi_matrix(&m, 1e-4, None).unwrap();
        assert_eq!(t.s.len(), 2);
        assert!((t.truncation_error - 1e-6 / 1.100001).abs() < 1e-15);
    }

    #[test]
    fn symm_eig_reconstructs_and_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [1, 3, 8, 16] {
            let m = random_symmetric(n, &mut rng);
            let e = symm_orth_eig_matrix(&m).unwrap();
            assert!(rel(&e.reconstruct(), &m) < 1e-10);
            let oto = e.o.t().dot(&e.o);
            assert!(rel(&oto, &linalg::eye(n)) < 1e-10);
            for w in e.lambda.windows(2) {
                assert!(w[0].norm() >= w[1].norm() - 1e-12);
            }
        }
    }

    #[test]
    fn symm_eig_with_degenerate_eigenvalues() {
        // Q D Q^T with a complex orthogonal Q and a repeated eigenvalue
        let th = c(0.3, 0.4);
        let q = nd::array![[th.cos(), -th.sin(), ZERO], [th.sin(), th.cos(), ZERO], [ZERO, ZERO, ONE]];
        let d = Array2::from_diag(&nd::array![c(2.0, 1.0), c(2.0, 1.0), c(0.5, 0.0)]);
        let m = q.dot(&d).dot(&q.t());
        let e = symm_orth_eig_matrix(&m).unwrap();
        assert!(rel(&e.reconstruct(), &m) < 1e-12);
        assert!(rel(&e.o.t().dot(&e.o), &linalg::eye(3)) < 1e-12);
        assert!((e.lambda[0] - c(2.0, 1.0)).norm() < 1e-12);
        assert!((e.lambda[2] - c(0.5, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn nilpotent_symmetric_matrix_is_defective() {
        // [[1, i], [i, -1]] squares to zero; its only eigenvector (1, i) has v^T v = 0
        let m = nd::array![[ONE, c(0.0, 1.0)], [c(0.0, 1.0), c(-1.0, 0.0)]];
        assert!(matches!(symm_orth_eig_matrix(&m), Err(Error::Defective(_))));
        // Takagi still works: singular values are (2, 0)
        let t = takagi_matrix(&m, 0.0, None).unwrap();
        assert!((t.s[0] - 2.0).abs() < 1e-13);
        assert!(rel(&t.reconstruct(), &m) < 1e-13);
    }

    #[test]
    fn labeled_wrappers_carry_row_label() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_symmetric(4, &mut rng);
        let r = IndexLabel::new(4, "r");
        let cl = IndexLabel::new(4, "c");
        let t = LabeledTensor::matrix2(r.clone(), cl.clone(), &m).unwrap();
        let tk = takagi(&t, &r, &cl, 0.0, None).unwrap();
        assert!(tk.u_z.has(&r) && tk.u_z.has(&tk.link));
        let e = symm_orth_eig(&t, &r, &cl).unwrap();
        assert!(e.o.has(&r) && e.o.has(&e.link));
    }
}
