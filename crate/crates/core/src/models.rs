//! Local MPO tensors of one Trotter step `U(dt) ~ exp(-i H dt)`.
//!
//! Hamiltonians (all with open boundaries):
//!
//! * Ising: `H = -sum_i [J X_i X_{i+1} + g Z_i + h X_i]`
//! * Potts (three states): `H = -sum_i [J (s_i s_{i+1}^+ + h.c.) + g (t_i + t_i^+)]`
//!   with clock `s = diag(1, w, w^2)`, `w = exp(2 pi i / 3)`, and shift `t`.
//! * XXZ: `H = -J sum_i [Sx Sx + Sy Sy + Delta Sz Sz]` for spin 1/2 or 1.
//!
//! A [`MpoTriple`] holds the left boundary, bulk and right boundary tensors.
//! Every builder takes a complex `dt`; `dt = -i tau` gives `exp(-H tau)`.
//!
//! Ising and Potts use a symmetric second-order splitting: half the field
//! exponential, then every bond gate (they commute), then the other half.
//! Each bond gate `G = sum_k A_k (x) A_k` is split into identical factors, so
//! the bulk tensor `F A_a A_b F` is symmetric under swapping its two links
//! together with its two physical legs. The XXZ bond gates do not commute;
//! they are applied as a left-to-right staircase (first order), factorized by
//! a plain SVD, and the triple is flagged non-symmetric.

use ndarray::{self as nd, Array2};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::decomp::takagi_matrix;
use crate::error::{Error, Result};
use crate::linalg::{self, I, ONE, ZERO};
use crate::mps::TensorTrainOperator;
use crate::tensor::{IndexLabel, LabeledTensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Spin {
    Half,
    One,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ModelParams {
    Ising { j: f64, g: f64, h: f64 },
    Potts { j: f64, g: f64 },
    Xxz { j: f64, delta: f64, spin: Spin },
}

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

pub fn pauli_x() -> Array2<C64> {
    nd::array![[ZERO, ONE], [ONE, ZERO]]
}

pub fn pauli_y() -> Array2<C64> {
    nd::array![[ZERO, -I], [I, ZERO]]
}

pub fn pauli_z() -> Array2<C64> {
    nd::array![[ONE, ZERO], [ZERO, -ONE]]
}

/// Potts clock matrix `diag(1, w, w^2)`.
pub fn potts_clock() -> Array2<C64> {
    let w = C64::from_polar(1.0, 2.0 * std::f64::consts::PI / 3.0);
    Array2::from_diag(&nd::array![ONE, w, w * w])
}

/// Potts shift matrix `|k> -> |k + 1 mod 3>`.
pub fn potts_shift() -> Array2<C64> {
    let mut t = Array2::zeros((3, 3));
    for k in 0..3 {
        t[[(k + 1) % 3, k]] = ONE;
    }
    t
}

/// Spin matrices `(Sx, Sy, Sz)`.
pub fn spin_ops(spin: Spin) -> (Array2<C64>, Array2<C64>, Array2<C64>) {
    match spin {
        Spin::Half => (pauli_x() * c(0.5), pauli_y() * c(0.5), pauli_z() * c(0.5)),
        Spin::One => {
            let r = c(std::f64::consts::FRAC_1_SQRT_2);
            let sx = nd::array![[ZERO, r, ZERO], [r, ZERO, r], [ZERO, r, ZERO]];
            let sy = nd::array![[ZERO, -I * r, ZERO], [I * r, ZERO, -I * r], [ZERO, I * r, ZERO]];
            let sz = Array2::from_diag(&nd::array![ONE, ZERO, -ONE]);
            (sx, sy, sz)
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        let vals: Vec<f64> = match *self {
            ModelParams::Ising { j, g, h } => vec![j, g, h],
            ModelParams::Potts { j, g } => vec![j, g],
            ModelParams::Xxz { j, delta, .. } => vec![j, delta],
        };
        if vals.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::param("model", "couplings must be finite"))
        }
    }

    pub fn local_dim(&self) -> usize {
        match self {
            ModelParams::Ising { .. } => 2,
            ModelParams::Potts { .. } => 3,
            ModelParams::Xxz { spin: Spin::Half, .. } => 2,
            ModelParams::Xxz { spin: Spin::One, .. } => 3,
        }
    }

    /// One-site term `h1`; `H = sum_i h1_i + sum_i h2_{i,i+1}`.
    pub fn one_site(&self) -> Array2<C64> {
        match *self {
            ModelParams::Ising { g, h, .. } => -(pauli_z() * c(g) + pauli_x() * c(h)),
            ModelParams::Potts { g, .. } => {
                let t = potts_shift();
                -(&t + &linalg::adjoint(&t)) * c(g)
            }
            ModelParams::Xxz { .. } => Array2::zeros((self.local_dim(), self.local_dim())),
        }
    }

    /// Two-site term `h2` on `(i, i+1)`, rows and columns ordered `(s_i, s_{i+1})`.
    pub fn two_site(&self) -> Array2<C64> {
        match *self {
            ModelParams::Ising { j, .. } => -linalg::kron(&pauli_x(), &pauli_x()) * c(j),
            ModelParams::Potts { j, .. } => {
                let s = potts_clock();
                let sd = linalg::adjoint(&s);
                -(linalg::kron(&s, &sd) + linalg::kron(&sd, &s)) * c(j)
            }
            ModelParams::Xxz { j, delta, spin } => {
                let (sx, sy, sz) = spin_ops(spin);
                -(linalg::kron(&sx, &sx) + linalg::kron(&sy, &sy) + linalg::kron(&sz, &sz) * c(delta)) * c(j)
            }
        }
    }

    /// Dense Hamiltonian on `n` sites (site 0 most significant).
    pub fn dense_hamiltonian(&self, n: usize) -> Result<Array2<C64>> {
        let d = self.local_dim();
        if (n as f64) * (d as f64).log2() > 14.0 {
            return Err(Error::TooLarge { sites: n, dim: d });
        }
        let h1 = self.one_site();
        let h2 = self.two_site();
        let dim = d.pow(n as u32);
        let mut h = Array2::zeros((dim, dim));
        for i in 0..n {
            let left = linalg::eye(d.pow(i as u32));
            let right = linalg::eye(d.pow((n - i - 1) as u32));
            h = h + linalg::kron(&linalg::kron(&left, &h1), &right);
        }
        for i in 0..n.saturating_sub(1) {
            let left = linalg::eye(d.pow(i as u32));
            let right = linalg::eye(d.pow((n - i - 2) as u32));
            h = h + linalg::kron(&linalg::kron(&left, &h2), &right);
        }
        Ok(h)
    }
}

/// Which MPO construction to use for a model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Builder {
    IsingMurg,
    PottsSymmSvd,
    Xxz,
}

impl Builder {
    pub fn default_for(mp: &ModelParams) -> Self {
        match mp {
            ModelParams::Ising { .. } => Builder::IsingMurg,
            ModelParams::Potts { .. } => Builder::PottsSymmSvd,
            ModelParams::Xxz { .. } => Builder::Xxz,
        }
    }

    pub fn build(&self, mp: &ModelParams, dt: C64) -> Result<MpoTriple> {
        match self {
            Builder::IsingMurg => build_exp_h_ising_murg(mp, dt),
            Builder::PottsSymmSvd => build_exp_h_potts_symm_svd(mp, dt),
            Builder::Xxz => build_exp_h_xxz(mp, dt),
        }
    }
}

/// Left boundary, bulk and right boundary MPO tensors.
///
/// `w_center` carries `link_left, phys_in, phys_out, link_right`; `w_left`
/// lacks `link_left` and `w_right` lacks `link_right`.
#[derive(Clone, Debug)]
pub struct MpoTriple {
    pub w_left: LabeledTensor,
    pub w_center: LabeledTensor,
    pub w_right: LabeledTensor,
    pub phys_in: IndexLabel,
    pub phys_out: IndexLabel,
    pub link_left: IndexLabel,
    pub link_right: IndexLabel,
    pub dt: C64,
    /// Left-right mirror symmetric construction.
    pub symmetric: bool,
}

/// Which of the three tensors of a triple.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Part {
    Left,
    Center,
    Right,
}

impl MpoTriple {
    /// Assemble from local operator lists: `left[b]`, `center[a][b]`, `right[a]`,
    /// each a `d x d` matrix `[out, in]`.
    fn from_blocks(
        left: &[Array2<C64>],
        center: &[Vec<Array2<C64>>],
        right: &[Array2<C64>],
        dt: C64,
        symmetric: bool,
    ) -> Result<Self> {
        let chi = left.len();
        let d = left[0].nrows();
        let pi = IndexLabel::new(d, "w_in");
        let po = IndexLabel::new(d, "w_out");
        let ll = IndexLabel::new(chi, "w_left");
        let lr = IndexLabel::new(chi, "w_right");
        let w_left = LabeledTensor::from_fn(vec![lr.clone(), po.clone(), pi.clone()], |ix| left[ix[0]][[ix[1], ix[2]]])?;
        let w_right =
            LabeledTensor::from_fn(vec![ll.clone(), po.clone(), pi.clone()], |ix| right[ix[0]][[ix[1], ix[2]]])?;
        let w_center = LabeledTensor::from_fn(vec![ll.clone(), lr.clone(), po.clone(), pi.clone()], |ix| {
            center[ix[0]][ix[1]][[ix[2], ix[3]]]
        })?;
        Ok(Self { w_left, w_center, w_right, phys_in: pi, phys_out: po, link_left: ll, link_right: lr, dt, symmetric })
    }

    pub fn local_dim(&self) -> usize {
        self.phys_in.dim()
    }

    pub fn bond_dim(&self) -> usize {
        self.link_left.dim()
    }

    pub fn part(&self, p: Part) -> &LabeledTensor {
        match p {
            Part::Left => &self.w_left,
            Part::Center => &self.w_center,
            Part::Right => &self.w_right,
        }
    }

    /// Residual of `W_c` under simultaneous link swap and physical swap
    /// (`in <-> out`), relative to its norm.
    pub fn symmetry_residual(&self) -> Result<f64> {
        let w = &self.w_center;
        let tmp_l = self.link_left.sim();
        let tmp_p = self.phys_in.sim();
        let swapped = w
            .relabel_many(&[(self.link_left.clone(), tmp_l.clone()), (self.phys_in.clone(), tmp_p.clone())])?
            .relabel_many(&[(self.link_right.clone(), self.link_left.clone()), (self.phys_out.clone(), self.phys_in.clone())])?
            .relabel_many(&[(tmp_l, self.link_right.clone()), (tmp_p, self.phys_out.clone())])?;
        Ok(swapped.sub(w)?.norm() / w.norm().max(1e-300))
    }

    /// The `n`-site spatial MPO (`n >= 2`).
    pub fn chain(&self, n: usize) -> Result<TensorTrainOperator> {
        if n < 2 {
            return Err(Error::param("n", "a chain needs at least two sites"));
        }
        let links: Vec<IndexLabel> = (0..=n)
            .map(|i| if i == 0 || i == n { IndexLabel::new(1, "link") } else { self.link_left.sim() })
            .collect();
        let mut sites = Vec::with_capacity(n);
        let mut pin = Vec::with_capacity(n);
        let mut pout = Vec::with_capacity(n);
        for i in 0..n {
            let p_in = self.phys_in.sim();
            let p_out = self.phys_out.sim();
            let mut pairs = vec![(self.phys_in.clone(), p_in.clone()), (self.phys_out.clone(), p_out.clone())];
            let t = if i == 0 {
                pairs.push((self.link_right.clone(), links[1].clone()));
                self.w_left.relabel_many(&pairs)?.with_dummy(&links[0])?
            } else if i == n - 1 {
                pairs.push((self.link_left.clone(), links[i].clone()));
                self.w_right.relabel_many(&pairs)?.with_dummy(&links[n])?
            } else {
                pairs.push((self.link_left.clone(), links[i].clone()));
                pairs.push((self.link_right.clone(), links[i + 1].clone()));
                self.w_center.relabel_many(&pairs)?
            };
            sites.push(t);
            pin.push(p_in);
            pout.push(p_out);
        }
        TensorTrainOperator::from_sites(sites, pin, pout, links)
    }

    /// Dense `n`-site matrix of the MPO.
    pub fn dense(&self, n: usize) -> Result<Array2<C64>> {
        self.chain(n)?.to_dense()
    }
}

/// `exp(-i dt h1 / 2)`, the half field step.
fn half_field(mp: &ModelParams, dt: C64) -> Result<Array2<C64>> {
    linalg::expm_hermitian(&mp.one_site(), -I * dt * 0.5)
}

/// Ising MPO after the Murg construction: with `theta = J dt`,
/// `exp(i theta X X) = cos(theta) 1 + i sin(theta) X X = sum_a f_a X^a (x) f_a X^a`
/// where `f_0 = sqrt(cos theta)` and `f_1 = sqrt(i sin theta)` (principal roots).
/// The bulk is `W[a, b] = F f_a f_b X^(a+b) F` with the half field step `F`,
/// i.e. the 2x2 operator-valued matrix
/// `[[cos 1, sqrt(i sin cos) X], [sqrt(i sin cos) X, i sin 1]]` dressed by `F`.
pub fn build_exp_h_ising_murg(mp: &ModelParams, dt: C64) -> Result<MpoTriple> {
    let ModelParams::Ising { j, .. } = *mp else {
        return Err(Error::param("builder", "the Murg construction needs Ising parameters"));
    };
    mp.validate()?;
    let f = half_field(mp, dt)?;
    let theta = dt * j;
    let fa = [theta.cos().sqrt(), (I * theta.sin()).sqrt()];
    let x = pauli_x();
    let pow = |k: usize| if k % 2 == 0 { linalg::eye(2) } else { x.clone() };
    let dress = |m: Array2<C64>| f.dot(&m).dot(&f);
    let left: Vec<Array2<C64>> = (0..2).map(|b| dress(pow(b) * fa[b])).collect();
    let right = left.clone();
    let center: Vec<Vec<Array2<C64>>> =
        (0..2).map(|a| (0..2).map(|b| dress(pow(a + b) * (fa[a] * fa[b]))).collect()).collect();
    MpoTriple::from_blocks(&left, &center, &right, dt, true)
}

/// Reorder a two-site gate `g[(o1, o2), (i1, i2)]` into operator space
/// `m[(o1, i1), (o2, i2)]`.
fn operator_space(g: &Array2<C64>, d: usize) -> Array2<C64> {
    Array2::from_shape_fn((d * d, d * d), |(r, cc)| {
        let (o1, i1) = (r / d, r % d);
        let (o2, i2) = (cc / d, cc % d);
        g[[o1 * d + o2, i1 * d + i2]]
    })
}

fn column_to_op(v: nd::ArrayView1<C64>, d: usize) -> Array2<C64> {
    Array2::from_shape_fn((d, d), |(o, i)| v[o * d + i])
}

/// Potts MPO: the bond gate, viewed in operator space, is a complex symmetric
/// matrix; its Takagi factorization `U_Z S U_Z^T` gives identical left and
/// right factors `A_k = sqrt(s_k) U_Z[:, k]`.
pub fn build_exp_h_potts_symm_svd(mp: &ModelParams, dt: C64) -> Result<MpoTriple> {
    let ModelParams::Potts { .. } = *mp else {
        return Err(Error::param("builder", "the symmetric-SVD construction needs Potts parameters"));
    };
    mp.validate()?;
    let d = 3;
    let f = half_field(mp, dt)?;
    let g = linalg::expm_hermitian(&mp.two_site(), -I * dt)?;
    let t = takagi_matrix(&operator_space(&g, d), 1e-14, None)?;
    let a: Vec<Array2<C64>> = t
        .s
        .iter()
        .enumerate()
        .map(|(k, &s)| column_to_op(t.u_z.column(k), d) * c(s.sqrt()))
        .collect();
    let dress = |m: Array2<C64>| f.dot(&m).dot(&f);
    let left: Vec<Array2<C64>> = a.iter().map(|x| dress(x.clone())).collect();
    let right = left.clone();
    let center: Vec<Vec<Array2<C64>>> =
        a.iter().map(|x| a.iter().map(|y| dress(x.dot(y))).collect()).collect();
    MpoTriple::from_blocks(&left, &center, &right, dt, true)
}

/// XXZ MPO for the staircase product `G_{N-1} ... G_2 G_1` (bond 1 first).
/// Each gate is split by an SVD, `G = sum_k A_k (x) B_k`; site `i` sees `B` from
/// its left bond first and `A` from its right bond afterwards, so
/// `W[a, b] = A_b B_a`.
pub fn build_exp_h_xxz(mp: &ModelParams, dt: C64) -> Result<MpoTriple> {
    let ModelParams::Xxz { .. } = *mp else {
        return Err(Error::param("builder", "the XXZ construction needs XXZ parameters"));
    };
    mp.validate()?;
    let d = mp.local_dim();
    let g = linalg::expm_hermitian(&mp.two_site(), -I * dt)?;
    let (u, s, vh) = linalg::svd(&operator_space(&g, d))?;
    let k = s.iter().take_while(|&&x| x > 1e-14 * s[0]).count().max(1);
    let a: Vec<Array2<C64>> = (0..k).map(|q| column_to_op(u.column(q), d) * c(s[q].sqrt())).collect();
    let b: Vec<Array2<C64>> = (0..k).map(|q| column_to_op(vh.row(q), d) * c(s[q].sqrt())).collect();
    let center: Vec<Vec<Array2<C64>>> =
        (0..k).map(|p| (0..k).map(|q| a[q].dot(&b[p])).collect()).collect();
    MpoTriple::from_blocks(&a, &center, &b, dt, false)
}
