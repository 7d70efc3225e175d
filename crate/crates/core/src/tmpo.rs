//! Temporal MPOs: the spatial MPO tensors of one Trotter step, rotated by
//! ninety degrees so that a column of the space-time network becomes an
//! operator acting along the time direction.
//!
//! Rotation: the spatial physical legs become temporal links (`phys_in` points
//! down toward the initial state, `phys_out` up toward the final cap) and the
//! spatial links become the temporal physical legs (`link_left` is the output
//! leg facing the left half of the network, `link_right` the input leg facing
//! the right half). Site 0 of every column is the earliest layer; the initial
//! state vector closes it from below.
//!
//! Folded columns carry a forward and a conjugate copy of every tensor with
//! each pair of legs fused as `(forward, conjugate)`, row-major.

use ndarray::Array2;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::linalg::{self, I};
use crate::models::{Builder, ModelParams, MpoTriple, Part};
use crate::mps::{TensorTrain, TensorTrainOperator};
use crate::tensor::{IndexLabel, LabeledTensor};

/// Parameters of a tMPO construction.
#[derive(Clone, Debug)]
pub struct TmpoParams {
    pub dt: f64,
    pub builder: Builder,
    pub mp: ModelParams,
    /// Number of imaginary-time layers adjacent to the initial state.
    pub nbeta: usize,
    /// Initial product-state vector, repeated on every site.
    pub bl: Vec<C64>,
}

impl TmpoParams {
    pub fn new(mp: ModelParams, dt: f64, bl: Vec<C64>) -> Self {
        Self { dt, builder: Builder::default_for(&mp), mp, nbeta: 0, bl }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.dt.is_finite() {
            return Err(Error::param("dt", "must be finite"));
        }
        if self.bl.len() != self.mp.local_dim() {
            return Err(Error::param(
                "initial_state",
                format!("length {} does not match local dimension {}", self.bl.len(), self.mp.local_dim()),
            ));
        }
        if self.bl.iter().all(|z| z.norm() == 0.0) || self.bl.iter().any(|z| !z.is_finite()) {
            return Err(Error::param("initial_state", "must be finite and nonzero"));
        }
        self.mp.validate()
    }
}

/// Spatial labels of the block tensors, named by their role after rotation.
#[derive(Clone, Debug)]
pub struct RotationMap {
    /// Spatial `phys_in`: temporal link toward earlier layers.
    pub down: IndexLabel,
    /// Spatial `phys_out`: temporal link toward later layers.
    pub up: IndexLabel,
    /// Spatial `link_left`: temporal output leg (faces the left half).
    pub out: IndexLabel,
    /// Spatial `link_right`: temporal input leg (faces the right half).
    pub inp: IndexLabel,
}

impl RotationMap {
    fn of(w: &MpoTriple) -> Self {
        Self {
            down: w.phys_in.clone(),
            up: w.phys_out.clone(),
            out: w.link_left.clone(),
            inp: w.link_right.clone(),
        }
    }

    /// Temporal physical dimension (the spatial bond dimension).
    pub fn phys_dim(&self) -> usize {
        self.out.dim()
    }

    /// Temporal link dimension (the spatial local dimension).
    pub fn link_dim(&self) -> usize {
        self.down.dim()
    }
}

/// The three building blocks for real and imaginary time plus the closures.
#[derive(Clone, Debug)]
pub struct BlockSet {
    real: [LabeledTensor; 3],
    imag: [LabeledTensor; 3],
    pub rot: RotationMap,
    pub nbeta: usize,
    /// Vector closing the bottom of every column.
    pub bottom: Vec<C64>,
    /// Default vector closing the top of every column.
    pub cap: Vec<C64>,
    /// Bulk block unchanged under exchanging its left and right links.
    pub mirror_symmetric: bool,
    /// Builder guarantees a strict causal light cone (commuting bond layers).
    pub causal: bool,
}

fn idx(p: Part) -> usize {
    match p {
        Part::Left => 0,
        Part::Center => 1,
        Part::Right => 2,
    }
}

impl BlockSet {
    pub fn block(&self, p: Part, imaginary: bool) -> &LabeledTensor {
        if imaginary {
            &self.imag[idx(p)]
        } else {
            &self.real[idx(p)]
        }
    }

    /// Residual of the bulk block under exchange of its two horizontal legs.
    pub fn mirror_residual(&self) -> Result<f64> {
        let w = &self.real[1];
        let t = self.rot.out.sim();
        let s = w
            .relabel(&self.rot.out, &t)?
            .relabel(&self.rot.inp, &self.rot.out)?
            .relabel(&t, &self.rot.inp)?;
        Ok(s.sub(w)?.norm() / w.norm().max(1e-300))
    }

    /// Column operator with one entry of `parts` per layer, bottom first.
    /// Layers below `nbeta` use the imaginary-time blocks. A missing
    /// horizontal leg (boundary blocks) becomes a dimension-one leg.
    pub fn column(&self, parts: &[Part], cap: Option<&[C64]>) -> Result<TensorTrainOperator> {
        let nt = parts.len();
        if nt == 0 {
            return Err(Error::param("nt", "a column needs at least one layer"));
        }
        let cap = cap.unwrap_or(&self.cap);
        if cap.len() != self.rot.link_dim() {
            return Err(Error::Shape { expected: vec![self.rot.link_dim()], got: vec![cap.len()] });
        }
        let links: Vec<IndexLabel> = (0..=nt)
            .map(|k| if k == 0 || k == nt { IndexLabel::new(1, "tlink") } else { self.rot.down.sim().with_tag("tlink") })
            .collect();
        let mut sites = Vec::with_capacity(nt);
        let mut pin = Vec::with_capacity(nt);
        let mut pout = Vec::with_capacity(nt);
        for (k, &p) in parts.iter().enumerate() {
            let w = self.block(p, k < self.nbeta);
            let o = if p == Part::Left { IndexLabel::new(1, "tout") } else { self.rot.out.sim().with_tag("tout") };
            let i = if p == Part::Right { IndexLabel::new(1, "tin") } else { self.rot.inp.sim().with_tag("tin") };
            let mut pairs = vec![];
            if p != Part::Left {
                pairs.push((self.rot.out.clone(), o.clone()));
            }
            if p != Part::Right {
                pairs.push((self.rot.inp.clone(), i.clone()));
            }
            let mut t = w.relabel_many(&pairs)?;
            if p == Part::Left {
                t = t.with_dummy(&o)?;
            }
            if p == Part::Right {
                t = t.with_dummy(&i)?;
            }
            t = if k == 0 {
                t.contract_vec(&self.rot.down, &self.bottom)?.with_dummy(&links[0])?
            } else {
                t.relabel(&self.rot.down, &links[k])?
            };
            t = if k == nt - 1 {
                t.contract_vec(&self.rot.up, cap)?.with_dummy(&links[nt])?
            } else {
                t.relabel(&self.rot.up, &links[k + 1])?
            };
            sites.push(t);
            pin.push(i);
            pout.push(o);
        }
        TensorTrainOperator::from_sites(sites, pin, pout, links)
    }

    /// Uniform bulk column of `nt` layers.
    pub fn bulk(&self, nt: usize, cap: Option<&[C64]>) -> Result<TensorTrainOperator> {
        self.check_nt(nt)?;
        self.column(&vec![Part::Center; nt], cap)
    }

    fn check_nt(&self, nt: usize) -> Result<()> {
        if nt == 0 || nt <= self.nbeta {
            return Err(Error::param("nt", format!("need nt > nbeta = {}, got {nt}", self.nbeta)));
        }
        Ok(())
    }

    /// Boundary column as a state: the left edge of the network yields a
    /// train with physical legs facing right, the right edge one facing left.
    pub fn boundary(&self, side: Part, nt: usize, cap: Option<&[C64]>) -> Result<TensorTrain> {
        self.check_nt(nt)?;
        let col = self.column(&vec![side; nt], cap)?;
        boundary_state(&col, side)
    }
}

/// Strip the dimension-one legs of a boundary column, keeping the other side.
pub fn boundary_state(col: &TensorTrainOperator, side: Part) -> Result<TensorTrain> {
    let n = col.len();
    let mut sites = Vec::with_capacity(n);
    let mut phys = Vec::with_capacity(n);
    for k in 0..n {
        let (keep, drop) = match side {
            Part::Left => (col.phys_in(k), col.phys_out(k)),
            Part::Right => (col.phys_out(k), col.phys_in(k)),
            Part::Center => return Err(Error::param("side", "a bulk column is not a boundary")),
        };
        if drop.dim() != 1 {
            return Err(Error::param("side", "column has no open edge on that side"));
        }
        sites.push(col.site(k).select(drop, 0)?);
        phys.push(keep.clone());
    }
    TensorTrain::from_sites(sites, phys, (0..=n).map(|k| col.link(k).clone()).collect())
}

/// Forward (unfolded) blocks.
#[derive(Clone, Debug)]
pub struct FwBlocks {
    pub set: BlockSet,
    pub tp: TmpoParams,
}

/// Folded blocks `W (x) conj(W)`.
#[derive(Clone, Debug)]
pub struct FoldBlocks {
    pub set: BlockSet,
    pub tp: TmpoParams,
    /// Folded initial-state vector `bl (x) conj(bl)`.
    pub rho0: Vec<C64>,
}

fn triples(tp: &TmpoParams) -> Result<(MpoTriple, MpoTriple)> {
    tp.validate()?;
    let re = tp.builder.build(&tp.mp, C64::new(tp.dt, 0.0))?;
    let im = tp.builder.build(&tp.mp, -I * tp.dt)?;
    Ok((re, im))
}

/// Relabel the imaginary triple onto the labels of the real one.
fn align(re: &MpoTriple, im: &MpoTriple) -> Result<[LabeledTensor; 3]> {
    let pairs = [
        (im.phys_in.clone(), re.phys_in.clone()),
        (im.phys_out.clone(), re.phys_out.clone()),
        (im.link_left.clone(), re.link_left.clone()),
        (im.link_right.clone(), re.link_right.clone()),
    ];
    let map = |t: &LabeledTensor| {
        let ps: Vec<_> = pairs.iter().filter(|(a, _)| t.has(a)).cloned().collect();
        t.relabel_many(&ps)
    };
    if im.bond_dim() != re.bond_dim() {
        return Err(Error::DimensionMismatch {
            label: "imaginary-time bond".into(),
            left: re.bond_dim(),
            right: im.bond_dim(),
        });
    }
    Ok([map(&im.w_left)?, map(&im.w_center)?, map(&im.w_right)?])
}

fn causal_builder(b: Builder) -> bool {
    matches!(b, Builder::IsingMurg | Builder::PottsSymmSvd)
}

pub fn make_fw_blocks(tp: &TmpoParams) -> Result<FwBlocks> {
    let (re, im) = triples(tp)?;
    let imag = align(&re, &im)?;
    let rot = RotationMap::of(&re);
    let mut set = BlockSet {
        real: [re.w_left.clone(), re.w_center.clone(), re.w_right.clone()],
        imag,
        rot,
        nbeta: tp.nbeta,
        bottom: tp.bl.clone(),
        cap: tp.bl.iter().map(|z| z.conj()).collect(),
        mirror_symmetric: false,
        causal: causal_builder(tp.builder),
    };
    set.mirror_symmetric = set.mirror_residual()? < 1e-10;
    Ok(FwBlocks { set, tp: tp.clone() })
}

pub fn fw_tmpo(b: &FwBlocks, nt: usize) -> Result<TensorTrainOperator> {
    b.set.bulk(nt, None)
}

/// Folded copy of one block: every leg paired with its conjugate partner.
fn fold_tensor(t: &LabeledTensor, rot: &RotationMap, frot: &RotationMap) -> Result<LabeledTensor> {
    let pairs: Vec<(IndexLabel, IndexLabel)> = [
        (&rot.down, &frot.down),
        (&rot.up, &frot.up),
        (&rot.out, &frot.out),
        (&rot.inp, &frot.inp),
    ]
    .iter()
    .filter(|(a, _)| t.has(a))
    .map(|(a, f)| ((*a).clone(), (*f).clone()))
    .collect();
    let (c, map) = t.conj().sim_all();
    let outer = t.contract(&c)?;
    let groups: Vec<(Vec<IndexLabel>, IndexLabel)> = pairs
        .iter()
        .map(|(a, f)| {
            let partner = map.iter().find(|(o, _)| o == a).map(|(_, n)| n.clone()).expect("conjugate partner");
            (vec![a.clone(), partner], f.clone())
        })
        .collect();
    outer.fuse_into(&groups)
}

/// `vec(op^T)`: the top closure measuring `op` on a folded column.
pub fn vectorize_operator(op: &Array2<C64>) -> Vec<C64> {
    let d = op.nrows();
    (0..d * d).map(|k| op[[k % d, k / d]]).collect()
}

pub fn make_fold_blocks(tp: &TmpoParams) -> Result<FoldBlocks> {
    let fw = make_fw_blocks(tp)?;
    let rot = &fw.set.rot;
    let frot = RotationMap {
        down: IndexLabel::new(rot.down.dim().pow(2), "fdown"),
        up: IndexLabel::new(rot.up.dim().pow(2), "fup"),
        out: IndexLabel::new(rot.out.dim().pow(2), "fout"),
        inp: IndexLabel::new(rot.inp.dim().pow(2), "fin"),
    };
    let fold3 = |ts: &[LabeledTensor; 3]| -> Result<[LabeledTensor; 3]> {
        Ok([fold_tensor(&ts[0], rot, &frot)?, fold_tensor(&ts[1], rot, &frot)?, fold_tensor(&ts[2], rot, &frot)?])
    };
    let bl = &tp.bl;
    let rho0: Vec<C64> = bl.iter().flat_map(|a| bl.iter().map(move |b| a * b.conj())).collect();
    let d = bl.len();
    let mut set = BlockSet {
        real: fold3(&fw.set.real)?,
        imag: fold3(&fw.set.imag)?,
        rot: frot,
        nbeta: tp.nbeta,
        bottom: rho0.clone(),
        cap: vectorize_operator(&linalg::eye(d)),
        mirror_symmetric: false,
        causal: fw.set.causal,
    };
    set.mirror_symmetric = fw.set.mirror_symmetric && set.mirror_residual()? < 1e-10;
    Ok(FoldBlocks { set, tp: tp.clone(), rho0 })
}

/// Folded column of `nt` layers with `fold_op` measured at the top
/// (identity when `None`).
pub fn folded_tmpo(b: &FoldBlocks, nt: usize, fold_op: Option<&Array2<C64>>) -> Result<TensorTrainOperator> {
    let cap = fold_cap(b, fold_op)?;
    b.set.bulk(nt, Some(&cap))
}

pub fn fold_cap(b: &FoldBlocks, fold_op: Option<&Array2<C64>>) -> Result<Vec<C64>> {
    let d = b.tp.bl.len();
    match fold_op {
        None => Ok(b.set.cap.clone()),
        Some(op) if op.dim() == (d, d) => Ok(vectorize_operator(op)),
        Some(op) => Err(Error::Shape { expected: vec![d, d], got: vec![op.nrows(), op.ncols()] }),
    }
}

/// Light-cone column: `len` layers, the top `edge` of which sit outside the
/// cone of the neighbour on the outer side and use the `side` boundary block.
pub fn cone_column(set: &BlockSet, len: usize, edge: usize, side: Part) -> Result<TensorTrainOperator> {
    let edge = edge.min(len);
    let mut parts = vec![Part::Center; len - edge];
    parts.extend(std::iter::repeat(side).take(edge));
    set.column(&parts, None)
}
