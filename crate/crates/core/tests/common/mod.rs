//! Helpers shared by the integration tests.
#![allow(dead_code)]

use ndarray as nd;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use transverse::linalg;
use transverse::models::Part;
use transverse::mps::{apply_mpo, overlap_noconj, TensorTrain};
use transverse::tmpo::{boundary_state, BlockSet};

pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };
pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(n: usize, g: &mut impl Rng) -> nd::Array2<C64> {
    nd::Array2::from_shape_fn((n, n), |_| C64::new(g.gen::<f64>() - 0.5, g.gen::<f64>() - 0.5))
}

/// Random invertible matrix with condition number in `[lo, hi]`.
pub fn conditioned(n: usize, lo: f64, hi: f64, g: &mut impl Rng) -> nd::Array2<C64> {
    loop {
        let m = random_matrix(n, g);
        let s = linalg::singular_values(&m).unwrap();
        let k = s[0] / s[n - 1];
        if k >= lo && k <= hi {
            return m;
        }
    }
}

/// Insert `X X^-1` on the contracted legs of sites `from..` between the pair:
/// `l` picks up `X^T`, `r` picks up `X^-1`. Bilinear contractions over those
/// legs, and hence every RTM of the first `from` sites, are unchanged.
pub fn gauge_pair(l: &TensorTrain, r: &TensorTrain, from: usize, x: &nd::Array2<C64>) -> (TensorTrain, TensorTrain) {
    let xi = linalg::inv(x).unwrap();
    let (mut l2, mut r2) = (l.clone(), r.clone());
    for i in from..l.len() {
        l2.apply_local(i, &x.t().to_owned()).unwrap();
        r2.apply_local(i, &xi).unwrap();
    }
    (l2, r2)
}

/// Full `nt x nx` network of one block set with per-column caps, contracted
/// column by column from the right.
pub fn network(set: &BlockSet, nt: usize, nx: usize, caps: &[Vec<C64>]) -> C64 {
    let parts = |p: Part| vec![p; nt];
    let mut r = boundary_state(&set.column(&parts(Part::Right), Some(&caps[nx - 1])).unwrap(), Part::Right).unwrap();
    for x in (1..nx - 1).rev() {
        r = apply_mpo(&set.column(&parts(Part::Center), Some(&caps[x])).unwrap(), &r).unwrap();
    }
    let l = boundary_state(&set.column(&parts(Part::Left), Some(&caps[0])).unwrap(), Part::Left).unwrap();
    overlap_noconj(&l, &r).unwrap()
}

/// Dense product state `bl^{(x) n}`.
pub fn product(bl: &[C64], n: usize) -> Vec<C64> {
    let mut v = vec![ONE];
    for _ in 0..n {
        v = v.iter().flat_map(|a| bl.iter().map(move |b| a * b)).collect();
    }
    v
}
