//! Dense complex tensors whose axes are addressed by [`IndexLabel`]s.
//!
//! Axes are kept sorted by label id, so two tensors sharing a label agree on
//! which axis it names without any bookkeeping from the caller. Contraction
//! sums over every shared label.

use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{self as nd, Array2, ArrayD, Dimension, IxDyn};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Identity of a tensor axis: a unique id, its dimension and a free-form tag.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IndexLabel {
    id: u64,
    dim: usize,
    tag: String,
}

impl IndexLabel {
    pub fn new(dim: usize, tag: &str) -> Self {
        Self { id: fresh_id(), dim, tag: tag.to_string() }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    /// A new label with the same dimension and tag but a fresh id.
    pub fn sim(&self) -> Self {
        Self { id: fresh_id(), dim: self.dim, tag: self.tag.clone() }
    }

    pub fn with_tag(&self, tag: &str) -> Self {
        Self { id: self.id, dim: self.dim, tag: tag.to_string() }
    }
}

impl PartialEq for IndexLabel {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
    }
}

impl Eq for IndexLabel {}

impl Hash for IndexLabel {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.id.hash(state);
    }
}

impl fmt::Display for IndexLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}({})", self.tag, self.id, self.dim)
    }
}

/// Dense complex array with labeled axes.
#[derive(Clone, Debug)]
pub struct LabeledTensor {
    labels: Vec<IndexLabel>,
    data: ArrayD<C64>,
}

fn check_unique(labels: &[IndexLabel]) -> Result<()> {
    for (i, a) in labels.iter().enumerate() {
        if labels[i + 1..].iter().any(|b| b == a) {
            return Err(Error::DuplicateLabel(a.to_string()));
        }
    }
    Ok(())
}

impl LabeledTensor {
    /// Wraps `data` whose axes are named, in order, by `labels`.
    pub fn from_array(labels: Vec<IndexLabel>, data: ArrayD<C64>) -> Result<Self> {
        let dims: Vec<usize> = labels.iter().map(|l| l.dim).collect();
        if dims.as_slice() != data.shape() {
            return Err(Error::Shape { expected: dims, got: data.shape().to_vec() });
        }
        check_unique(&labels)?;
        let mut perm: Vec<usize> = (0..labels.len()).collect();
        perm.sort_by_key(|&i| labels[i].id);
        if perm.iter().enumerate().all(|(i, &p)| i == p) {
            return Ok(Self { labels, data });
        }
        let labels = perm.iter().map(|&i| labels[i].clone()).collect();
        let data = data.permuted_axes(perm);
        Ok(Self { labels, data })
    }

    pub fn from_vec(labels: Vec<IndexLabel>, values: Vec<C64>) -> Result<Self> {
        let dims: Vec<usize> = labels.iter().map(|l| l.dim).collect();
        let n: usize = dims.iter().product();
        if n != values.len() {
            return Err(Error::LengthMismatch(n, values.len()));
        }
        let data = ArrayD::from_shape_vec(IxDyn(&dims), values)
            .map_err(|e| Error::Linalg(e.to_string()))?;
        Self::from_array(labels, data)
    }

    pub fn from_fn(labels: Vec<IndexLabel>, mut f: impl FnMut(&[usize]) -> C64) -> Result<Self> {
        let dims: Vec<usize> = labels.iter().map(|l| l.dim).collect();
        let data = ArrayD::from_shape_fn(IxDyn(&dims), |ix| f(ix.slice()));
        Self::from_array(labels, data)
    }

    pub fn zeros(labels: Vec<IndexLabel>) -> Result<Self> {
        Self::from_fn(labels, |_| C64::new(0.0, 0.0))
    }

    pub fn scalar(c: C64) -> Self {
        Self { labels: vec![], data: ArrayD::from_elem(IxDyn(&[]), c) }
    }

    /// Vector on a single label.
    pub fn vector(label: IndexLabel, values: &[C64]) -> Result<Self> {
        Self::from_vec(vec![label], values.to_vec())
    }

    /// Matrix with `rows` indexing the first axis and `cols` the second.
    pub fn matrix2(row: IndexLabel, col: IndexLabel, m: &Array2<C64>) -> Result<Self> {
        Self::from_matrix(m, &[row], &[col])
    }

    /// Kronecker delta between two labels of equal dimension.
    pub fn delta(a: IndexLabel, b: IndexLabel) -> Result<Self> {
        if a.dim != b.dim {
            return Err(Error::DimensionMismatch { label: a.to_string(), left: a.dim, right: b.dim });
        }
        Self::from_fn(vec![a, b], |ix| if ix[0] == ix[1] { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) })
    }

    /// All-ones tensor, used mostly to attach dimension-1 legs.
    pub fn ones(labels: Vec<IndexLabel>) -> Result<Self> {
        Self::from_fn(labels, |_| C64::new(1.0, 0.0))
    }

    pub fn labels(&self) -> &[IndexLabel] {
        &self.labels
    }

    pub fn rank(&self) -> usize {
        self.labels.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn has(&self, label: &IndexLabel) -> bool {
        self.labels.iter().any(|l| l == label)
    }

    /// The stored label equal to `label`, if any.
    pub fn find(&self, label: &IndexLabel) -> Option<&IndexLabel> {
        self.labels.iter().find(|l| *l == label)
    }

    pub fn find_tag(&self, tag: &str) -> Option<&IndexLabel> {
        self.labels.iter().find(|l| l.tag == tag)
    }

    /// Raw data with axes sorted by label id.
    pub fn data(&self) -> &ArrayD<C64> {
        &self.data
    }

    fn position(&self, label: &IndexLabel) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::MissingLabel(label.to_string()))
    }

    /// Copy of the data with axes in the given label order.
    pub fn to_array(&self, order: &[IndexLabel]) -> Result<ArrayD<C64>> {
        if order.len() != self.labels.len() {
            return Err(Error::InvalidSplit(format!(
                "order names {} axes, tensor has {}",
                order.len(),
                self.labels.len()
            )));
        }
        check_unique(order)?;
        let perm = order.iter().map(|l| self.position(l)).collect::<Result<Vec<_>>>()?;
        Ok(self.data.view().permuted_axes(perm).as_standard_layout().into_owned())
    }

    /// Reshape into a matrix with `rows` fused on the first axis and `cols` on the second.
    pub fn matrix(&self, rows: &[IndexLabel], cols: &[IndexLabel]) -> Result<Array2<C64>> {
        let order: Vec<IndexLabel> = rows.iter().chain(cols).cloned().collect();
        let arr = self.to_array(&order)?;
        let r: usize = rows.iter().map(|l| l.dim).product();
        let c: usize = cols.iter().map(|l| l.dim).product();
        arr.into_shape_with_order((r, c)).map_err(|e| Error::Linalg(e.to_string()))
    }

    pub fn from_matrix(m: &Array2<C64>, rows: &[IndexLabel], cols: &[IndexLabel]) -> Result<Self> {
        let dims: Vec<usize> = rows.iter().chain(cols).map(|l| l.dim).collect();
        let r: usize = rows.iter().map(|l| l.dim).product();
        let c: usize = cols.iter().map(|l| l.dim).product();
        if m.dim() != (r, c) {
            return Err(Error::Shape { expected: vec![r, c], got: m.shape().to_vec() });
        }
        let data = m
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order(IxDyn(&dims))
            .map_err(|e| Error::Linalg(e.to_string()))?;
        Self::from_array(rows.iter().chain(cols).cloned().collect(), data)
    }

    /// Sum over all shared labels.
    pub fn contract(&self, other: &Self) -> Result<Self> {
        let mut shared = Vec::new();
        for l in &self.labels {
            if let Some(o) = other.find(l) {
                if o.dim != l.dim {
                    return Err(Error::DimensionMismatch { label: l.to_string(), left: l.dim, right: o.dim });
                }
                shared.push(l.clone());
            }
        }
        let free_a: Vec<IndexLabel> = self.labels.iter().filter(|l| !shared.contains(l)).cloned().collect();
        let free_b: Vec<IndexLabel> = other.labels.iter().filter(|l| !shared.contains(l)).cloned().collect();
        let a = self.matrix(&free_a, &shared)?;
        let b = other.matrix(&shared, &free_b)?;
        Self::from_matrix(&a.dot(&b), &free_a, &free_b)
    }

    /// Contract a vector into `label`.
    pub fn contract_vec(&self, label: &IndexLabel, v: &[C64]) -> Result<Self> {
        self.contract(&Self::vector(label.clone(), v)?)
    }

    /// Scalar value of a tensor holding exactly one element.
    pub fn value(&self) -> Result<C64> {
        if self.data.len() != 1 {
            return Err(Error::Shape { expected: vec![1], got: self.data.shape().to_vec() });
        }
        Ok(*self.data.iter().next().unwrap())
    }

    /// Element at the given label assignment.
    pub fn get(&self, index: &[(&IndexLabel, usize)]) -> Result<C64> {
        let mut ix = vec![0usize; self.labels.len()];
        if index.len() != ix.len() {
            return Err(Error::LengthMismatch(ix.len(), index.len()));
        }
        for (l, i) in index {
            ix[self.position(l)?] = *i;
        }
        Ok(self.data[IxDyn(&ix)])
    }

    /// Replace label `old` by `new` (same dimension).
    pub fn relabel(&self, old: &IndexLabel, new: &IndexLabel) -> Result<Self> {
        self.relabel_many(&[(old.clone(), new.clone())])
    }

    pub fn relabel_many(&self, pairs: &[(IndexLabel, IndexLabel)]) -> Result<Self> {
        let mut labels = self.labels.clone();
        for (old, new) in pairs {
            let p = self.position(old)?;
            if old.dim != new.dim {
                return Err(Error::DimensionMismatch { label: new.to_string(), left: old.dim, right: new.dim });
            }
            labels[p] = new.clone();
        }
        Self::from_array(labels, self.data.clone())
    }

    /// Fresh copies of every label, returned alongside the relabeled tensor.
    pub fn sim_all(&self) -> (Self, Vec<(IndexLabel, IndexLabel)>) {
        let pairs: Vec<_> = self.labels.iter().map(|l| (l.clone(), l.sim())).collect();
        let t = self.relabel_many(&pairs).expect("fresh labels are valid");
        (t, pairs)
    }

    /// Append a dimension-1 axis.
    pub fn with_dummy(&self, label: &IndexLabel) -> Result<Self> {
        if label.dim != 1 {
            return Err(Error::DimensionMismatch { label: label.to_string(), left: 1, right: label.dim });
        }
        let mut labels = self.labels.clone();
        labels.push(label.clone());
        let data = self.data.clone().insert_axis(nd::Axis(self.labels.len()));
        Self::from_array(labels, data)
    }

    /// Fix `label` to index `i`, removing that axis.
    pub fn select(&self, label: &IndexLabel, i: usize) -> Result<Self> {
        let p = self.position(label)?;
        if i >= label.dim {
            return Err(Error::Shape { expected: vec![label.dim], got: vec![i] });
        }
        let mut labels = self.labels.clone();
        labels.remove(p);
        let data = self.data.index_axis(nd::Axis(p), i).to_owned();
        Ok(Self { labels, data })
    }

    pub fn conj(&self) -> Self {
        Self { labels: self.labels.clone(), data: self.data.mapv(|z| z.conj()) }
    }

    pub fn scale(&self, c: C64) -> Self {
        Self { labels: self.labels.clone(), data: &self.data * c }
    }

    pub fn scale_inplace(&mut self, c: C64) {
        self.data.mapv_inplace(|z| z * c);
    }

    /// Multiply the slice at index `i` of axis `label` by `d[i]`.
    pub fn scale_axis(&self, label: &IndexLabel, d: &[C64]) -> Result<Self> {
        let p = self.position(label)?;
        if d.len() != label.dim {
            return Err(Error::LengthMismatch(label.dim, d.len()));
        }
        let mut data = self.data.clone();
        for (mut sub, &x) in data.axis_iter_mut(nd::Axis(p)).zip(d) {
            sub.mapv_inplace(|z| z * x);
        }
        Ok(Self { labels: self.labels.clone(), data })
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    fn aligned(&self, other: &Self) -> Result<ArrayD<C64>> {
        if other.labels.len() != self.labels.len() {
            return Err(Error::InvalidSplit("label sets differ".into()));
        }
        other.to_array(&self.labels)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        let b = self.aligned(other)?;
        Ok(Self { labels: self.labels.clone(), data: &self.data + &b })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        let b = self.aligned(other)?;
        Ok(Self { labels: self.labels.clone(), data: &self.data - &b })
    }

    /// Largest elementwise deviation between two tensors on the same labels.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        let b = self.aligned(other)?;
        Ok(self.data.iter().zip(b.iter()).fold(0.0, |m, (x, y)| m.max((x - y).norm())))
    }

    /// Fuse each group of labels into one new axis (row-major within the group).
    pub fn fuse(&self, groups: &[Vec<IndexLabel>]) -> Result<(Self, FuseMap)> {
        let targets: Vec<(Vec<IndexLabel>, IndexLabel)> = groups
            .iter()
            .map(|g| {
                let dim = g.iter().map(|l| l.dim).product();
                let tag = g.iter().map(|l| l.tag.as_str()).collect::<Vec<_>>().join("*");
                (g.clone(), IndexLabel::new(dim, &tag))
            })
            .collect();
        let t = self.fuse_into(&targets)?;
        Ok((t, FuseMap { groups: targets }))
    }

    /// Fuse groups onto caller-provided labels.
    pub fn fuse_into(&self, groups: &[(Vec<IndexLabel>, IndexLabel)]) -> Result<Self> {
        let grouped: Vec<&IndexLabel> = groups.iter().flat_map(|(g, _)| g.iter()).collect();
        for l in &grouped {
            self.position(l)?;
        }
        let rest: Vec<IndexLabel> = self.labels.iter().filter(|l| !grouped.contains(l)).cloned().collect();
        let mut order = rest.clone();
        let mut new_labels = rest.clone();
        for (g, target) in groups {
            let dim: usize = g.iter().map(|l| l.dim).product();
            if dim != target.dim {
                return Err(Error::DimensionMismatch { label: target.to_string(), left: dim, right: target.dim });
            }
            order.extend(g.iter().cloned());
            new_labels.push(target.clone());
        }
        let dims: Vec<usize> = new_labels.iter().map(|l| l.dim).collect();
        let data = self
            .to_array(&order)?
            .into_shape_with_order(IxDyn(&dims))
            .map_err(|e| Error::Linalg(e.to_string()))?;
        Self::from_array(new_labels, data)
    }

    /// Split fused axes back into their parts.
    pub fn unfuse(&self, map: &FuseMap) -> Result<Self> {
        let fused: Vec<&IndexLabel> = map.groups.iter().map(|(_, t)| t).collect();
        let rest: Vec<IndexLabel> = self.labels.iter().filter(|l| !fused.contains(l)).cloned().collect();
        let mut order = rest.clone();
        let mut new_labels = rest;
        for (g, target) in &map.groups {
            order.push(target.clone());
            new_labels.extend(g.iter().cloned());
        }
        let dims: Vec<usize> = new_labels.iter().map(|l| l.dim).collect();
        let data = self
            .to_array(&order)?
            .into_shape_with_order(IxDyn(&dims))
            .map_err(|e| Error::Linalg(e.to_string()))?;
        Self::from_array(new_labels, data)
    }
}

/// Record of which labels were fused into which, for [`LabeledTensor::unfuse`].
#[derive(Clone, Debug)]
pub struct FuseMap {
    pub groups: Vec<(Vec<IndexLabel>, IndexLabel)>,
}

impl FuseMap {
    pub fn fused(&self, i: usize) -> &IndexLabel {
        &self.groups[i].1
    }
}

/// Contract a sequence of tensors left to right.
pub fn contract_all(ts: &[&LabeledTensor]) -> Result<LabeledTensor> {
    let mut it = ts.iter();
    let mut acc = match it.next() {
        Some(t) => (*t).clone(),
        None => return Ok(LabeledTensor::scalar(C64::new(1.0, 0.0))),
    };
    for t in it {
        acc = acc.contract(t)?;
    }
    Ok(acc)
}

/// Free-function form of [`LabeledTensor::contract`].
pub fn contract(a: &LabeledTensor, b: &LabeledTensor) -> Result<LabeledTensor> {
    a.contract(b)
}

/// Free-function form of [`LabeledTensor::fuse`].
pub fn fuse(t: &LabeledTensor, groups: &[Vec<IndexLabel>]) -> Result<(LabeledTensor, FuseMap)> {
    t.fuse(groups)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn ramp(labels: Vec<IndexLabel>) -> LabeledTensor {
        LabeledTensor::from_fn(labels, |ix| {
            let k = ix.iter().fold(0usize, |acc, &i| acc * 7 + i + 1) as f64;
            c(k.sin(), (0.3 * k).cos())
        })
        .unwrap()
    }

    #[test]
    fn contraction_matches_explicit_loops() {
        let i = IndexLabel::new(3, "i");
        let j = IndexLabel::new(4, "j");
        let k = IndexLabel::new(2, "k");
        let l = IndexLabel::new(5, "l");
        let a = ramp(vec![k.clone(), i.clone(), j.clone()]);
        let b = ramp(vec![l.clone(), j.clone(), k.clone()]);
        let ab = a.contract(&b).unwrap();
        for ii in 0..3 {
            for ll in 0..5 {
                let mut s = c(0.0, 0.0);
                for jj in 0..4 {
                    for kk in 0..2 {
                        s += a.get(&[(&i, ii), (&j, jj), (&k, kk)]).unwrap()
                            * b.get(&[(&j, jj), (&k, kk), (&l, ll)]).unwrap();
                    }
                }
                let got = ab.get(&[(&i, ii), (&l, ll)]).unwrap();
                assert!((got - s).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn contraction_without_shared_labels_is_outer_product() {
        let i = IndexLabel::new(2, "i");
        let j = IndexLabel::new(3, "j");
        let a = ramp(vec![i.clone()]);
        let b = ramp(vec![j.clone()]);
        let ab = a.contract(&b).unwrap();
        assert_eq!(ab.rank(), 2);
        let v = ab.get(&[(&i, 1), (&j, 2)]).unwrap();
        let w = a.get(&[(&i, 1)]).unwrap() * b.get(&[(&j, 2)]).unwrap();
        assert!((v - w).norm() < 1e-14);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let i = IndexLabel::new(2, "i");
        let mut bad = i.clone();
        bad.dim = 3;
        let a = LabeledTensor::zeros(vec![i]).unwrap();
        let b = LabeledTensor::zeros(vec![bad]).unwrap();
        assert!(matches!(a.contract(&b), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn duplicate_labels_rejected() {
        let i = IndexLabel::new(2, "i");
        let r = LabeledTensor::zeros(vec![i.clone(), i]);
        assert!(matches!(r, Err(Error::DuplicateLabel(_))));
    }

    #[test]
    fn fuse_then_unfuse_round_trips() {
        let i = IndexLabel::new(2, "i");
        let j = IndexLabel::new(3, "j");
        let k = IndexLabel::new(4, "k");
        let t = ramp(vec![i.clone(), j.clone(), k.clone()]);
        let (f, map) = t.fuse(&[vec![k.clone(), i.clone()]]).unwrap();
        assert_eq!(f.rank(), 2);
        assert_eq!(map.fused(0).dim(), 8);
        // row-major within the group: fused index = k * 2 + i
        let v = f.get(&[(&j, 1), (map.fused(0), 3 * 2 + 1)]).unwrap();
        assert_eq!(v, t.get(&[(&i, 1), (&j, 1), (&k, 3)]).unwrap());
        let back = f.unfuse(&map).unwrap();
        assert_eq!(back.max_abs_diff(&t).unwrap(), 0.0);
    }

    #[test]
    fn matrix_round_trip_and_relabel() {
        let i = IndexLabel::new(2, "i");
        let j = IndexLabel::new(3, "j");
        let t = ramp(vec![i.clone(), j.clone()]);
        let m = t.matrix(&[j.clone()], &[i.clone()]).unwrap();
        assert_eq!(m.dim(), (3, 2));
        let back = LabeledTensor::from_matrix(&m, &[j.clone()], &[i.clone()]).unwrap();
        assert_eq!(back.max_abs_diff(&t).unwrap(), 0.0);
        let i2 = i.sim();
        let r = t.relabel(&i, &i2).unwrap();
        assert!(r.has(&i2) && !r.has(&i));
        assert_eq!(r.get(&[(&i2, 1), (&j, 2)]).unwrap(), t.get(&[(&i, 1), (&j, 2)]).unwrap());
    }

    #[test]
    fn dummy_axis_and_select() {
        let i = IndexLabel::new(3, "i");
        let d = IndexLabel::new(1, "d");
        let t = ramp(vec![i.clone()]);
        let td = t.with_dummy(&d).unwrap();
        assert_eq!(td.rank(), 2);
        let back = td.select(&d, 0).unwrap();
        assert_eq!(back.max_abs_diff(&t).unwrap(), 0.0);
    }
}
