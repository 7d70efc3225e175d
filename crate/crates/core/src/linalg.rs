//! Thin wrappers over LAPACK plus small dense-matrix utilities.

use ndarray::{self as nd, Array1, Array2};
use ndarray_linalg::{Eig, Eigh, Inverse, JobSvd, SVDDC, SVD, UPLO};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

pub(crate) const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub(crate) const ONE: C64 = C64 { re: 1.0, im: 0.0 };
pub(crate) const I: C64 = C64 { re: 0.0, im: 1.0 };

fn check_finite(m: &Array2<C64>, what: &str) -> Result<()> {
    if m.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Thin SVD `m = u * diag(s) * vh`, singular values descending.
pub fn svd(m: &Array2<C64>) -> Result<(Array2<C64>, Array1<f64>, Array2<C64>)> {
    check_finite(m, "svd input")?;
    let (r, c) = m.dim();
    if r == 0 || c == 0 {
        return Err(Error::Shape { expected: vec![1, 1], got: vec![r, c] });
    }
    if let Ok((Some(u), s, Some(vh))) = m.svddc(JobSvd::Some) {
        if s.iter().all(|x| x.is_finite()) {
            return Ok((u, s, vh));
        }
    }
    // divide-and-conquer occasionally fails on badly scaled input
    let (u, s, vh) = m.svd(true, true).map_err(|e| Error::Linalg(e.to_string()))?;
    let k = r.min(c);
    let u = u.unwrap().slice(nd::s![.., ..k]).to_owned();
    let vh = vh.unwrap().slice(nd::s![..k, ..]).to_owned();
    Ok((u, s, vh))
}

pub fn singular_values(m: &Array2<C64>) -> Result<Array1<f64>> {
    Ok(svd(m)?.1)
}

/// General eigendecomposition; columns of the second output are right eigenvectors.
pub fn eig(m: &Array2<C64>) -> Result<(Array1<C64>, Array2<C64>)> {
    check_finite(m, "eig input")?;
    m.eig().map_err(|e| Error::Linalg(e.to_string()))
}

pub fn eigh(m: &Array2<C64>) -> Result<(Array1<f64>, Array2<C64>)> {
    check_finite(m, "eigh input")?;
    m.eigh(UPLO::Lower).map_err(|e| Error::Linalg(e.to_string()))
}

pub fn inv(m: &Array2<C64>) -> Result<Array2<C64>> {
    check_finite(m, "inverse input")?;
    m.inv().map_err(|e| Error::Linalg(e.to_string()))
}

pub fn adjoint(m: &Array2<C64>) -> Array2<C64> {
    m.t().mapv(|z| z.conj())
}

pub fn fro_norm(m: &Array2<C64>) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn eye(n: usize) -> Array2<C64> {
    Array2::from_diag_elem(n, ONE)
}

pub fn kron(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    Array2::from_shape_fn((ar * br, ac * bc), |(i, j)| a[[i / br, j / bc]] * b[[i % br, j % bc]])
}

/// `exp(factor * h)` for Hermitian `h`; `factor` may be any complex number.
pub fn expm_hermitian(h: &Array2<C64>, factor: C64) -> Result<Array2<C64>> {
    let (w, v) = eigh(h)?;
    let d = w.mapv(|x| (factor * x).exp());
    Ok(scale_cols(&v, &d).dot(&adjoint(&v)))
}

/// Multiply column `j` of `m` by `d[j]`.
pub fn scale_cols(m: &Array2<C64>, d: &Array1<C64>) -> Array2<C64> {
    let mut out = m.clone();
    for (mut col, &x) in out.columns_mut().into_iter().zip(d.iter()) {
        col.mapv_inplace(|z| z * x);
    }
    out
}

/// Multiply row `i` of `m` by `d[i]`.
pub fn scale_rows(m: &Array2<C64>, d: &Array1<C64>) -> Array2<C64> {
    let mut out = m.clone();
    for (mut row, &x) in out.rows_mut().into_iter().zip(d.iter()) {
        row.mapv_inplace(|z| z * x);
    }
    out
}

/// Apply `f` to a diagonalizable matrix through its eigendecomposition.
pub fn matrix_function(m: &Array2<C64>, f: impl Fn(C64) -> C64) -> Result<Array2<C64>> {
    let (w, v) = eig(m)?;
    let vinv = inv(&v)?;
    let d = w.mapv(f);
    Ok(scale_cols(&v, &d).dot(&vinv))
}

pub fn as_real_diag(s: &Array1<f64>) -> Array1<C64> {
    s.mapv(|x| C64::new(x, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expm_of_pauli_x_is_rotation() {
        let x = nd::array![[ZERO, ONE], [ONE, ZERO]];
        let t = 0.37;
        let u = expm_hermitian(&x, -I * t).unwrap();
        assert!((u[[0, 0]] - C64::new(t.cos(), 0.0)).norm() < 1e-14);
        assert!((u[[0, 1]] - C64::new(0.0, -t.sin())).norm() < 1e-14);
    }

    #[test]
    fn svd_reconstructs_rectangular() {
        let m = Array2::from_shape_fn((4, 6), |(i, j)| C64::new((i + 2 * j) as f64 * 0.1, (i * j) as f64 * 0.05 - 0.2));
        let (u, s, vh) = svd(&m).unwrap();
        let r = scale_cols(&u, &as_real_diag(&s)).dot(&vh);
        assert!(fro_norm(&(&r - &m)) < 1e-12);
        assert!(s.windows(2).into_iter().all(|w| w[0] >= w[1]));
    }

    #[test]
    fn nan_input_is_rejected() {
        let mut m = eye(2);
        m[[0, 1]] = C64::new(f64::NAN, 0.0);
        assert!(matches!(svd(&m), Err(Error::NonFinite(_))));
    }
}
