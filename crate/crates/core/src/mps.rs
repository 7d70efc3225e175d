//! Tensor trains (MPS) and tensor-train operators (MPO).
//!
//! A [`TensorTrain`] of length `n` stores rank-3 sites with labels
//! `links[i], phys[i], links[i + 1]`; the two outer links have dimension one.
//! Operators add a second physical label per site: `phys_in` is contracted
//! with the state it acts on and `phys_out` is left free.
//!
//! Overlaps here never conjugate. `overlap_noconj(l, r)` is the bilinear
//! pairing `sum_s l(s) r(s)`, which is what transverse contraction needs.

use ndarray::Array2;
use num_complex::Complex64 as C64;
use rand::Rng;

use crate::decomp::{svd_split, SvdResult};
use crate::error::{Error, Result};
use crate::tensor::{IndexLabel, LabeledTensor};

#[derive(Clone, Debug)]
pub struct TensorTrain {
    sites: Vec<LabeledTensor>,
    phys: Vec<IndexLabel>,
    links: Vec<IndexLabel>,
    center: Option<usize>,
}

fn check_site(t: &LabeledTensor, expected: &[&IndexLabel]) -> Result<()> {
    if t.rank() != expected.len() {
        return Err(Error::Shape {
            expected: expected.iter().map(|l| l.dim()).collect(),
            got: t.labels().iter().map(|l| l.dim()).collect(),
        });
    }
    for l in expected {
        match t.find(l) {
            Some(found) if found.dim() == l.dim() => {}
            Some(found) => {
                return Err(Error::DimensionMismatch { label: l.to_string(), left: l.dim(), right: found.dim() })
            }
            None => return Err(Error::MissingLabel(l.to_string())),
        }
    }
    Ok(())
}

fn boundary_links(n: usize, dims: &[usize]) -> Vec<IndexLabel> {
    (0..=n)
        .map(|i| {
            let d = if i == 0 || i == n { 1 } else { dims[i - 1] };
            IndexLabel::new(d, "link")
        })
        .collect()
}

impl TensorTrain {
    pub fn from_sites(sites: Vec<LabeledTensor>, phys: Vec<IndexLabel>, links: Vec<IndexLabel>) -> Result<Self> {
        let n = sites.len();
        if n == 0 {
            return Err(Error::param("sites", "a tensor train needs at least one site"));
        }
        if phys.len() != n {
            return Err(Error::LengthMismatch(n, phys.len()));
        }
        if links.len() != n + 1 {
            return Err(Error::LengthMismatch(n + 1, links.len()));
        }
        if links[0].dim() != 1 || links[n].dim() != 1 {
            return Err(Error::param("links", "outer links must have dimension 1"));
        }
        for i in 0..n {
            check_site(&sites[i], &[&links[i], &phys[i], &links[i + 1]])?;
        }
        Ok(Self { sites, phys, links, center: None })
    }

    /// Product state with the given local vectors.
    pub fn product(vectors: &[Vec<C64>]) -> Result<Self> {
        let n = vectors.len();
        let phys: Vec<IndexLabel> = vectors.iter().map(|v| IndexLabel::new(v.len(), "phys")).collect();
        let links = boundary_links(n, &vec![1; n.saturating_sub(1)]);
        let sites = (0..n)
            .map(|i| {
                LabeledTensor::vector(phys[i].clone(), &vectors[i])?
                    .with_dummy(&links[i])?
                    .with_dummy(&links[i + 1])
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_sites(sites, phys, links)
    }

    /// Random train with bond dimension `chi` (capped by the exact maximum).
    pub fn random<R: Rng>(dims: &[usize], chi: usize, rng: &mut R) -> Result<Self> {
        let n = dims.len();
        let phys: Vec<IndexLabel> = dims.iter().map(|&d| IndexLabel::new(d, "phys")).collect();
        let mut bond = vec![0usize; n.saturating_sub(1)];
        for (b, bd) in bond.iter_mut().enumerate() {
            let left: f64 = dims[..=b].iter().map(|&d| d as f64).product();
            let right: f64 = dims[b + 1..].iter().map(|&d| d as f64).product();
            *bd = (chi as f64).min(left).min(right) as usize;
        }
        let links = boundary_links(n, &bond);
        let sites = (0..n)
            .map(|i| {
                LabeledTensor::from_fn(vec![links[i].clone(), phys[i].clone(), links[i + 1].clone()], |_| {
                    C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_sites(sites, phys, links)
    }

    /// Exact train of a dense vector (site 0 is the most significant digit).
    pub fn from_dense(v: &[C64], dims: &[usize], cutoff: f64, maxdim: Option<usize>) -> Result<Self> {
        let total: usize = dims.iter().product();
        if total != v.len() {
            return Err(Error::LengthMismatch(total, v.len()));
        }
        let n = dims.len();
        let phys: Vec<IndexLabel> = dims.iter().map(|&d| IndexLabel::new(d, "phys")).collect();
        let first = IndexLabel::new(1, "link");
        let mut labels = vec![first.clone()];
        labels.extend(phys.iter().cloned());
        let mut rest = LabeledTensor::from_vec(labels, v.to_vec())?;
        let mut links = vec![first];
        let mut sites = Vec::with_capacity(n);
        for i in 0..n - 1 {
            let r = svd_split(&rest, &[links[i].clone(), phys[i].clone()], cutoff, maxdim)?;
            sites.push(r.u.clone());
            links.push(r.link.clone());
            rest = r.svh();
        }
        let last = IndexLabel::new(1, "link");
        sites.push(rest.with_dummy(&last)?);
        links.push(last);
        let mut tt = Self::from_sites(sites, phys, links)?;
        tt.center = Some(n - 1);
        Ok(tt)
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn site(&self, i: usize) -> &LabeledTensor {
        &self.sites[i]
    }

    pub fn sites(&self) -> &[LabeledTensor] {
        &self.sites
    }

    pub fn phys(&self, i: usize) -> &IndexLabel {
        &self.phys[i]
    }

    pub fn phys_labels(&self) -> &[IndexLabel] {
        &self.phys
    }

    pub fn link(&self, i: usize) -> &IndexLabel {
        &self.links[i]
    }

    pub fn links(&self) -> &[IndexLabel] {
        &self.links
    }

    pub fn center(&self) -> Option<usize> {
        self.center
    }

    /// Restore a known orthogonality center (e.g. after deserializing).
    pub(crate) fn assume_center(&mut self, c: Option<usize>) {
        self.center = c.filter(|&c| c < self.sites.len());
    }

    /// Internal bond dimensions (length `n - 1`).
    pub fn bond_dims(&self) -> Vec<usize> {
        self.links[1..self.len()].iter().map(|l| l.dim()).collect()
    }

    pub fn max_bond_dim(&self) -> usize {
        self.bond_dims().into_iter().max().unwrap_or(1)
    }

    /// Replace site `i`, which must carry the same labels (bond dims may change
    /// only through [`TensorTrain::set_site_with_links`]).
    pub fn set_site(&mut self, i: usize, t: LabeledTensor) -> Result<()> {
        check_site(&t, &[&self.links[i], &self.phys[i], &self.links[i + 1]])?;
        self.sites[i] = t;
        self.center = None;
        Ok(())
    }

    fn set_site_with_links(&mut self, i: usize, t: LabeledTensor, left: IndexLabel, right: IndexLabel) {
        self.links[i] = left;
        self.links[i + 1] = right;
        self.sites[i] = t;
    }

    pub fn conj(&self) -> Self {
        Self {
            sites: self.sites.iter().map(|s| s.conj()).collect(),
            phys: self.phys.clone(),
            links: self.links.clone(),
            center: self.center,
        }
    }

    /// Multiply the whole state by `c` (applied at the center, or site 0).
    pub fn scale(&self, c: C64) -> Self {
        let mut out = self.clone();
        let i = self.center.unwrap_or(0);
        out.sites[i].scale_inplace(c);
        out
    }

    /// Same tensors, new physical labels.
    pub fn with_phys(&self, phys: &[IndexLabel]) -> Result<Self> {
        if phys.len() != self.len() {
            return Err(Error::LengthMismatch(self.len(), phys.len()));
        }
        let sites = self
            .sites
            .iter()
            .zip(self.phys.iter().zip(phys))
            .map(|(s, (old, new))| if old == new { Ok(s.clone()) } else { s.relabel(old, new) })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { sites, phys: phys.to_vec(), links: self.links.clone(), center: self.center })
    }

    /// Same tensors with every link replaced by a fresh label.
    pub fn with_fresh_links(&self) -> Self {
        let links: Vec<IndexLabel> = self.links.iter().map(|l| l.sim()).collect();
        let sites = (0..self.len())
            .map(|i| {
                self.sites[i]
                    .relabel_many(&[
                        (self.links[i].clone(), links[i].clone()),
                        (self.links[i + 1].clone(), links[i + 1].clone()),
                    ])
                    .expect("site carries its links")
            })
            .collect();
        Self { sites, phys: self.phys.clone(), links, center: self.center }
    }

    /// The same state with the site order reversed.
    pub fn reversed(&self) -> Self {
        let mut sites = self.sites.clone();
        sites.reverse();
        let mut phys = self.phys.clone();
        phys.reverse();
        let mut links = self.links.clone();
        links.reverse();
        let n = self.len();
        Self { sites, phys, links, center: self.center.map(|c| n - 1 - c) }
    }

    /// Append `extra` trivial sites (physical and link dimension one) at the end.
    pub fn padded(&self, extra: usize) -> Result<Self> {
        let mut out = self.clone();
        for _ in 0..extra {
            let p = IndexLabel::new(1, "pad");
            let right = IndexLabel::new(1, "link");
            let left = out.links.last().unwrap().clone();
            let t = LabeledTensor::ones(vec![left, p.clone(), right.clone()])?;
            out.sites.push(t);
            out.phys.push(p);
            out.links.push(right);
        }
        Ok(out)
    }

    /// Dense amplitudes, site 0 most significant.
    pub fn to_dense(&self) -> Result<Vec<C64>> {
        let total: f64 = self.phys.iter().map(|p| p.dim() as f64).product();
        if total > (1u64 << 24) as f64 {
            return Err(Error::TooLarge { sites: self.len(), dim: self.phys[0].dim() });
        }
        let mut acc = self.sites[0].clone();
        for s in &self.sites[1..] {
            acc = acc.contract(s)?;
        }
        let mut order = vec![self.links[0].clone()];
        order.extend(self.phys.iter().cloned());
        order.push(self.links[self.len()].clone());
        Ok(acc.to_array(&order)?.iter().cloned().collect())
    }

    /// Apply a one-site operator `op[out, in]` in place.
    pub fn apply_local(&mut self, i: usize, op: &Array2<C64>) -> Result<()> {
        let p = &self.phys[i];
        let tmp = p.sim();
        let o = LabeledTensor::from_matrix(op, std::slice::from_ref(&tmp), std::slice::from_ref(p))?;
        let t = o.contract(&self.sites[i])?.relabel(&tmp, p)?;
        self.sites[i] = t;
        if self.center != Some(i) {
            self.center = None;
        }
        Ok(())
    }

    /// Apply a two-site gate `g[(out_i, out_j), (in_i, in_j)]` on sites `i, i + 1`
    /// and split back with an SVD. The orthogonality center moves to `i + 1`
    /// when `move_right` is set, otherwise to `i`. Returns the discarded weight.
    pub fn apply_two_site(
        &mut self,
        i: usize,
        g: &Array2<C64>,
        cutoff: f64,
        maxdim: Option<usize>,
        move_right: bool,
    ) -> Result<f64> {
        let (pi, pj) = (self.phys[i].clone(), self.phys[i + 1].clone());
        let (ti, tj) = (pi.sim(), pj.sim());
        let gate = LabeledTensor::from_matrix(g, &[ti.clone(), tj.clone()], &[pi.clone(), pj.clone()])?;
        let theta = self.sites[i]
            .contract(&self.sites[i + 1])?
            .contract(&gate)?
            .relabel_many(&[(ti, pi.clone()), (tj, pj)])?;
        let r = svd_split(&theta, &[self.links[i].clone(), pi], cutoff, maxdim)?;
        let link = r.link.clone();
        let (left, right) = if move_right { (r.u.clone(), r.svh()) } else { (r.us(), r.vh.clone()) };
        self.sites[i] = left;
        self.sites[i + 1] = right;
        self.links[i + 1] = link;
        // The form stays canonical only if the center was already on the pair.
        self.center = match self.center {
            Some(c) if c == i || c == i + 1 => Some(if move_right { i + 1 } else { i }),
            _ => None,
        };
        Ok(r.truncation_error)
    }
}

/// `r` relabeled to share `l`'s physical labels and none of its links.
fn align_pair(l: &TensorTrain, r: &TensorTrain) -> Result<TensorTrain> {
    if l.len() != r.len() {
        return Err(Error::LengthMismatch(l.len(), r.len()));
    }
    for (a, b) in l.phys.iter().zip(&r.phys) {
        if a.dim() != b.dim() {
            return Err(Error::DimensionMismatch { label: a.to_string(), left: a.dim(), right: b.dim() });
        }
    }
    let clash = r.links.iter().any(|x| l.links.contains(x));
    let r = if clash { r.with_fresh_links() } else { r.clone() };
    if r.phys == l.phys {
        Ok(r)
    } else {
        r.with_phys(&l.phys)
    }
}

/// Bilinear overlap `sum_s l(s) r(s)` (no complex conjugation).
pub fn overlap_noconj(l: &TensorTrain, r: &TensorTrain) -> Result<C64> {
    let r = align_pair(l, r)?;
    let mut env = l.sites[0].contract(&r.sites[0])?;
    for i in 1..l.len() {
        env = env.contract(&l.sites[i])?.contract(&r.sites[i])?;
    }
    env.value()
}

/// Hermitian inner product `<a|b>`.
pub fn inner(a: &TensorTrain, b: &TensorTrain) -> Result<C64> {
    overlap_noconj(&a.conj(), b)
}

pub fn norm(a: &TensorTrain) -> Result<f64> {
    if let Some(c) = a.center {
        return Ok(a.sites[c].norm());
    }
    Ok(inner(a, a)?.re.max(0.0).sqrt())
}

/// Tensor-train operator with sites labeled `links[i], phys_in[i], phys_out[i], links[i + 1]`.
#[derive(Clone, Debug)]
pub struct TensorTrainOperator {
    sites: Vec<LabeledTensor>,
    phys_in: Vec<IndexLabel>,
    phys_out: Vec<IndexLabel>,
    links: Vec<IndexLabel>,
}

impl TensorTrainOperator {
    pub fn from_sites(
        sites: Vec<LabeledTensor>,
        phys_in: Vec<IndexLabel>,
        phys_out: Vec<IndexLabel>,
        links: Vec<IndexLabel>,
    ) -> Result<Self> {
        let n = sites.len();
        if n == 0 {
            return Err(Error::param("sites", "an operator needs at least one site"));
        }
        if phys_in.len() != n || phys_out.len() != n {
            return Err(Error::LengthMismatch(n, phys_in.len().min(phys_out.len())));
        }
        if links.len() != n + 1 {
            return Err(Error::LengthMismatch(n + 1, links.len()));
        }
        if links[0].dim() != 1 || links[n].dim() != 1 {
            return Err(Error::param("links", "outer links must have dimension 1"));
        }
        for i in 0..n {
            check_site(&sites[i], &[&links[i], &phys_in[i], &phys_out[i], &links[i + 1]])?;
        }
        Ok(Self { sites, phys_in, phys_out, links })
    }

    /// Product operator from local matrices `ops[i][out, in]`.
    pub fn product(ops: &[Array2<C64>]) -> Result<Self> {
        let n = ops.len();
        let links = boundary_links(n, &vec![1; n.saturating_sub(1)]);
        let mut sites = Vec::with_capacity(n);
        let mut pin = Vec::with_capacity(n);
        let mut pout = Vec::with_capacity(n);
        for (i, op) in ops.iter().enumerate() {
            let o = IndexLabel::new(op.nrows(), "out");
            let p = IndexLabel::new(op.ncols(), "in");
            let t = LabeledTensor::from_matrix(op, std::slice::from_ref(&o), std::slice::from_ref(&p))?
                .with_dummy(&links[i])?
                .with_dummy(&links[i + 1])?;
            sites.push(t);
            pin.push(p);
            pout.push(o);
        }
        Self::from_sites(sites, pin, pout, links)
    }

    pub fn identity(dims: &[usize]) -> Result<Self> {
        let ops: Vec<Array2<C64>> = dims.iter().map(|&d| crate::linalg::eye(d)).collect();
        Self::product(&ops)
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn site(&self, i: usize) -> &LabeledTensor {
        &self.sites[i]
    }

    pub fn phys_in(&self, i: usize) -> &IndexLabel {
        &self.phys_in[i]
    }

    pub fn phys_out(&self, i: usize) -> &IndexLabel {
        &self.phys_out[i]
    }

    pub fn link(&self, i: usize) -> &IndexLabel {
        &self.links[i]
    }

    pub fn bond_dims(&self) -> Vec<usize> {
        self.links[1..self.len()].iter().map(|l| l.dim()).collect()
    }

    /// The transposed operator: input and output roles exchanged.
    pub fn transpose(&self) -> Self {
        Self {
            sites: self.sites.clone(),
            phys_in: self.phys_out.clone(),
            phys_out: self.phys_in.clone(),
            links: self.links.clone(),
        }
    }

    pub fn with_fresh_links(&self) -> Self {
        let links: Vec<IndexLabel> = self.links.iter().map(|l| l.sim()).collect();
        let sites = (0..self.len())
            .map(|i| {
                self.sites[i]
                    .relabel_many(&[
                        (self.links[i].clone(), links[i].clone()),
                        (self.links[i + 1].clone(), links[i + 1].clone()),
                    ])
                    .expect("site carries its links")
            })
            .collect();
        Self { sites, phys_in: self.phys_in.clone(), phys_out: self.phys_out.clone(), links }
    }

    /// Dense matrix `[out, in]`, site 0 most significant on both sides.
    pub fn to_dense(&self) -> Result<Array2<C64>> {
        let mut acc = self.sites[0].clone();
        for s in &self.sites[1..] {
            acc = acc.contract(s)?;
        }
        let mut rows = vec![self.links[0].clone()];
        rows.extend(self.phys_out.iter().cloned());
        let mut cols = self.phys_in.clone();
        cols.push(self.links[self.len()].clone());
        acc.matrix(&rows, &cols)
    }
}

/// `E |psi>`: exact application, bond dimensions multiply.
pub fn apply_mpo(e: &TensorTrainOperator, psi: &TensorTrain) -> Result<TensorTrain> {
    let n = psi.len();
    if e.len() != n {
        return Err(Error::LengthMismatch(e.len(), n));
    }
    let e = if e.links.iter().any(|x| psi.links.contains(x)) { e.with_fresh_links() } else { e.clone() };
    let new_links: Vec<IndexLabel> =
        (0..=n).map(|i| IndexLabel::new(e.links[i].dim() * psi.links[i].dim(), "link")).collect();
    let mut sites = Vec::with_capacity(n);
    let mut phys = Vec::with_capacity(n);
    for i in 0..n {
        let pin = &e.phys_in[i];
        let p = &psi.phys[i];
        if pin.dim() != p.dim() {
            return Err(Error::DimensionMismatch { label: p.to_string(), left: pin.dim(), right: p.dim() });
        }
        let mut w = e.sites[i].clone();
        let mut out = e.phys_out[i].clone();
        if out == *p || psi.links.contains(&out) {
            let fresh = out.sim();
            w = w.relabel(&out, &fresh)?;
            out = fresh;
        }
        if pin != p {
            w = w.relabel(pin, p)?;
        }
        let t = w.contract(&psi.sites[i])?.fuse_into(&[
            (vec![e.links[i].clone(), psi.links[i].clone()], new_links[i].clone()),
            (vec![e.links[i + 1].clone(), psi.links[i + 1].clone()], new_links[i + 1].clone()),
        ])?;
        sites.push(t);
        phys.push(out);
    }
    TensorTrain::from_sites(sites, phys, new_links)
}

/// `<l| E` as a train: `E` acts on `l` through its output legs.
pub fn apply_mpo_left(e: &TensorTrainOperator, l: &TensorTrain) -> Result<TensorTrain> {
    apply_mpo(&e.transpose(), l)
}

/// `E |psi>` compressed while it is built. `psi` is made right-isometric, the
/// product is split site by site from the left keeping singular values whose
/// squared share exceeds `cutoff`, and a final RDM pass at the same cutoff
/// restores canonical form. The bond dimension never reaches the full product.
pub fn apply_mpo_zip(e: &TensorTrainOperator, psi: &TensorTrain, cutoff: f64) -> Result<TensorTrain> {
    let n = psi.len();
    if e.len() != n {
        return Err(Error::LengthMismatch(e.len(), n));
    }
    let psi = canonicalize(psi, 0)?;
    let e = if e.links.iter().any(|x| psi.links.contains(x)) { e.with_fresh_links() } else { e.clone() };
    let mut links = vec![IndexLabel::new(1, "link")];
    let mut carry = LabeledTensor::ones(vec![links[0].clone(), e.links[0].clone(), psi.links[0].clone()])?;
    let mut sites = Vec::with_capacity(n);
    let mut phys = Vec::with_capacity(n);
    for i in 0..n {
        let pin = &e.phys_in[i];
        let p = &psi.phys[i];
        if pin.dim() != p.dim() {
            return Err(Error::DimensionMismatch { label: p.to_string(), left: pin.dim(), right: p.dim() });
        }
        let mut w = e.sites[i].clone();
        let mut out = e.phys_out[i].clone();
        if out == *p || psi.links.contains(&out) {
            let fresh = out.sim();
            w = w.relabel(&out, &fresh)?;
            out = fresh;
        }
        if pin != p {
            w = w.relabel(pin, p)?;
        }
        let t = carry.contract(&w)?.contract(&psi.sites[i])?;
        if i + 1 == n {
            let last = IndexLabel::new(1, "link");
            sites.push(t.fuse_into(&[(vec![e.links[n].clone(), psi.links[n].clone()], last.clone())])?);
            links.push(last);
        } else {
            let r = svd_split(&t, &[links[i].clone(), out.clone()], cutoff, None)?;
            carry = r.svh();
            sites.push(r.u);
            links.push(r.link);
        }
        phys.push(out);
    }
    let mut zipped = TensorTrain::from_sites(sites, phys, links)?;
    zipped.center = Some(n - 1);
    Ok(truncate_rdm(&zipped, cutoff, None)?.0)
}

/// [`apply_mpo_zip`] for `<l| E`.
pub fn apply_mpo_left_zip(e: &TensorTrainOperator, l: &TensorTrain, cutoff: f64) -> Result<TensorTrain> {
    apply_mpo_zip(&e.transpose(), l, cutoff)
}

/// `<l| E |r>` without conjugation.
pub fn expval_lr(l: &TensorTrain, e: &TensorTrainOperator, r: &TensorTrain) -> Result<C64> {
    overlap_noconj(l, &apply_mpo(e, r)?)
}

/// Bring `psi` into mixed canonical form with orthogonality center `center`.
/// Uses lossless SVD sweeps (only exactly vanishing singular values are dropped).
pub fn canonicalize(psi: &TensorTrain, center: usize) -> Result<TensorTrain> {
    let n = psi.len();
    if center >= n {
        return Err(Error::param("center", format!("{center} out of range for {n} sites")));
    }
    let mut out = psi.clone();
    if psi.center.is_some() {
        out.move_center(center)?;
        return Ok(out);
    }
    for i in 0..center {
        let r = svd_split(&out.sites[i], &[out.links[i].clone(), out.phys[i].clone()], 0.0, None)?;
        absorb_right(&mut out, i, r)?;
    }
    for i in (center + 1..n).rev() {
        let r = svd_split(&out.sites[i], &[out.links[i].clone()], 0.0, None)?;
        absorb_left(&mut out, i, r)?;
    }
    out.center = Some(center);
    Ok(out)
}

impl TensorTrain {
    /// Move the orthogonality center to `to` one site at a time. A train
    /// without a known center is canonicalized from scratch.
    pub fn move_center(&mut self, to: usize) -> Result<()> {
        let n = self.len();
        if to >= n {
            return Err(Error::param("center", format!("{to} out of range for {n} sites")));
        }
        let Some(mut c) = self.center else {
            *self = canonicalize(self, to)?;
            return Ok(());
        };
        while c < to {
            let r = svd_split(&self.sites[c], &[self.links[c].clone(), self.phys[c].clone()], 0.0, None)?;
            absorb_right(self, c, r)?;
            c += 1;
        }
        while c > to {
            let r = svd_split(&self.sites[c], &[self.links[c].clone()], 0.0, None)?;
            absorb_left(self, c, r)?;
            c -= 1;
        }
        self.center = Some(to);
        Ok(())
    }
}

fn absorb_right(tt: &mut TensorTrain, i: usize, r: SvdResult) -> Result<()> {
    let next = r.svh().contract(&tt.sites[i + 1])?;
    let l = tt.links[i].clone();
    let rr = tt.links[i + 2].clone();
    tt.set_site_with_links(i, r.u.clone(), l, r.link.clone());
    tt.set_site_with_links(i + 1, next, r.link, rr);
    Ok(())
}

fn absorb_left(tt: &mut TensorTrain, i: usize, r: SvdResult) -> Result<()> {
    let prev = tt.sites[i - 1].contract(&r.us())?;
    let ll = tt.links[i - 1].clone();
    let rr = tt.links[i + 1].clone();
    tt.set_site_with_links(i, r.vh.clone(), r.link.clone(), rr);
    tt.set_site_with_links(i - 1, prev, ll, r.link);
    Ok(())
}

/// Truncate with the reduced density matrix criterion: after canonicalizing,
/// every bond keeps Schmidt values with `s^2 / sum(s^2) > cutoff`, at most
/// `maxdim`. Returns the train (center at site 0) and the discarded weight per bond.
pub fn truncate_rdm(psi: &TensorTrain, cutoff: f64, maxdim: Option<usize>) -> Result<(TensorTrain, Vec<f64>)> {
    let n = psi.len();
    let mut out = canonicalize(psi, n - 1)?;
    let mut errs = vec![0.0; n.saturating_sub(1)];
    for i in (1..n).rev() {
        let r = svd_split(&out.sites[i], &[out.links[i].clone()], cutoff, maxdim)?;
        errs[i - 1] = r.truncation_error;
        absorb_left(&mut out, i, r)?;
    }
    out.center = Some(0);
    Ok((out, errs))
}

/// Schmidt data at one bond.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumReport {
    /// Schmidt values, descending.
    pub s: Vec<f64>,
    /// Normalized weights `s^2 / sum(s^2)`.
    pub p: Vec<f64>,
    /// Von Neumann entropy in nats.
    pub entropy: f64,
}

impl SpectrumReport {
    pub fn from_values(s: Vec<f64>) -> Self {
        let total: f64 = s.iter().map(|x| x * x).sum();
        let p: Vec<f64> = s.iter().map(|x| x * x / total).collect();
        let entropy = -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>();
        Self { s, p, entropy }
    }
}

/// Schmidt spectrum across bond `b` (between sites `b - 1` and `b`).
pub fn entanglement_spectrum(psi: &TensorTrain, bond: usize) -> Result<SpectrumReport> {
    let n = psi.len();
    if bond == 0 || bond >= n {
        return Err(Error::param("bond", format!("{bond} is not an internal bond of {n} sites")));
    }
    let c = canonicalize(psi, bond)?;
    let r = svd_split(&c.sites[bond], &[c.links[bond].clone()], 0.0, None)?;
    Ok(SpectrumReport::from_values(r.s))
}

/// `<psi| op_i |psi> / <psi|psi>` for a one-site operator.
pub fn expect_local(psi: &TensorTrain, i: usize, op: &Array2<C64>) -> Result<C64> {
    let c = if psi.center == Some(i) { psi.clone() } else { canonicalize(psi, i)? };
    let s = &c.sites[i];
    let p = &c.phys[i];
    let tmp = p.sim();
    let o = LabeledTensor::from_matrix(op, std::slice::from_ref(&tmp), std::slice::from_ref(p))?;
    let bra = s.conj().relabel(p, &tmp)?;
    let num = bra.contract(&o)?.contract(s)?.value()?;
    let den = s.conj().contract(s)?.value()?;
    Ok(num / den)
}

/// Bilinear overlap of two dense vectors.
pub fn dense_overlap(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
