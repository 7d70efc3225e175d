//! Randomized invariants of the tensor, train, truncation and entropy layers.

mod common;

use common::*;
use ndarray as nd;
use num_complex::Complex64 as C64;
use proptest::prelude::*;
use rand::Rng;
use transverse::decomp::{random_symmetric, svd_split, symm_orth_eig_matrix, takagi_matrix};
use transverse::entropy::{diagonalize_rtm_symmetric, gen_purity, gen_renyi2, gen_tsallis2, DiagOptions};
use transverse::linalg;
use transverse::models::{Builder, ModelParams, Spin};
use transverse::mps::{
    apply_mpo, canonicalize, entanglement_spectrum, expval_lr, overlap_noconj, truncate_rdm, TensorTrain,
    TensorTrainOperator,
};
use transverse::tensor::{IndexLabel, LabeledTensor};
use transverse::truncation::{generalized_canonical_residuals, rtm_singular_spectrum, truncate_rtm, Direction, TruncationSpec};

fn cfg(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, failure_persistence: None, ..ProptestConfig::default() }
}

fn random_tensor(labels: Vec<IndexLabel>, g: &mut impl Rng) -> LabeledTensor {
    LabeledTensor::from_fn(labels, |_| C64::new(g.gen::<f64>() - 0.5, g.gen::<f64>() - 0.5)).unwrap()
}

fn random_mpo(n: usize, d: usize, chi: usize, g: &mut impl Rng) -> TensorTrainOperator {
    let pin: Vec<IndexLabel> = (0..n).map(|_| IndexLabel::new(d, "in")).collect();
    let pout: Vec<IndexLabel> = (0..n).map(|_| IndexLabel::new(d, "out")).collect();
    let links: Vec<IndexLabel> = (0..=n).map(|k| IndexLabel::new(if k == 0 || k == n { 1 } else { chi }, "w")).collect();
    let sites = (0..n)
        .map(|i| random_tensor(vec![links[i].clone(), pin[i].clone(), pout[i].clone(), links[i + 1].clone()], g))
        .collect();
    TensorTrainOperator::from_sites(sites, pin, pout, links).unwrap()
}

/// Dense `sum_s l(s) r(s)` after the trains are expanded.
fn dense_bilinear(l: &TensorTrain, r: &TensorTrain) -> C64 {
    l.to_dense().unwrap().iter().zip(r.to_dense().unwrap()).map(|(a, b)| a * b).sum()
}

fn rel(a: C64, b: C64) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

proptest! {
    #![proptest_config(cfg(48))]

    #[test]
    fn contraction_is_associative(seed in any::<u64>(), k in 2usize..=5, dims in prop::collection::vec(1usize..=4, 11)) {
        let mut g = rng(seed);
        // chain t_0 - t_1 - ... with one free leg each
        let bonds: Vec<IndexLabel> = (0..k - 1).map(|i| IndexLabel::new(dims[i], "b")).collect();
        let free: Vec<IndexLabel> = (0..k).map(|i| IndexLabel::new(dims[5 + i], "f")).collect();
        let ts: Vec<LabeledTensor> = (0..k)
            .map(|i| {
                let mut labels = vec![free[i].clone()];
                if i > 0 { labels.push(bonds[i - 1].clone()); }
                if i + 1 < k { labels.push(bonds[i].clone()); }
                random_tensor(labels, &mut g)
            })
            .collect();
        let mut lr = ts[0].clone();
        for t in &ts[1..] { lr = lr.contract(t).unwrap(); }
        let mut rl = ts[k - 1].clone();
        for t in ts[..k - 1].iter().rev() { rl = t.contract(&rl).unwrap(); }
        let scale = lr.norm().max(1e-300);
        prop_assert!(lr.max_abs_diff(&rl).unwrap() / scale < 1e-12);
    }

    #[test]
    fn lossless_svd_split_reconstructs(seed in any::<u64>(), dims in prop::collection::vec(1usize..=4, 2..=4), split in 1usize..=3) {
        let mut g = rng(seed);
        let labels: Vec<IndexLabel> = dims.iter().map(|&d| IndexLabel::new(d, "x")).collect();
        let t = random_tensor(labels.clone(), &mut g);
        let rows = &labels[..split.min(labels.len() - 1)];
        let r = svd_split(&t, rows, 0.0, None).unwrap();
        prop_assert!(r.reconstruct().unwrap().max_abs_diff(&t).unwrap() <= 1e-10 * t.norm());
        prop_assert_eq!(r.truncation_error, 0.0);
    }

    #[test]
    fn overlap_matches_dense_bilinear_form(seed in any::<u64>(), n in 1usize..=8, d in 2usize..=4, chi in 1usize..=8) {
        prop_assume!((d as f64).powi(n as i32) <= 65536.0);
        let mut g = rng(seed);
        let dims = vec![d; n];
        let l = TensorTrain::random(&dims, chi, &mut g).unwrap();
        let r = TensorTrain::random(&dims, chi, &mut g).unwrap().with_phys(l.phys_labels()).unwrap();
        let want = dense_bilinear(&l, &r);
        let got = overlap_noconj(&l, &r).unwrap();
        let scale = (l.to_dense().unwrap().iter().map(|z| z.norm_sqr()).sum::<f64>()
            * r.to_dense().unwrap().iter().map(|z| z.norm_sqr()).sum::<f64>()).sqrt();
        prop_assert!((got - want).norm() <= 1e-10 * scale.max(want.norm()));
    }

    #[test]
    fn rdm_truncation_discards_exactly_its_reported_weight(seed in any::<u64>(), n in 3usize..=6, chi in 2usize..=6, keep in 1usize..=3) {
        let mut g = rng(seed);
        let psi = TensorTrain::random(&vec![2; n], chi, &mut g).unwrap();
        // only the last bond is cut when the other bonds keep everything
        let p = entanglement_spectrum(&psi, n - 1).unwrap().p;
        let k = keep.min(p.len());
        let cutoff = if k < p.len() { 0.5 * (p[k - 1] + p[k]) } else { 0.0 };
        prop_assume!(k == p.len() || p[k - 1] > 1.0001 * p[k]);
        let (out, errs) = truncate_rdm(&psi, cutoff, None).unwrap();
        let dropped: f64 = p[k..].iter().sum();
        prop_assert!((errs[n - 2] - dropped).abs() <= 1e-12);
        // orthogonal projection: |psi - P psi|^2 = discarded * |psi|^2
        let a = psi.to_dense().unwrap();
        let b = out.to_dense().unwrap();
        let na: f64 = a.iter().map(|z| z.norm_sqr()).sum();
        let diff: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).norm_sqr()).sum();
        if errs[..n - 2].iter().all(|&e| e == 0.0) {
            prop_assert!((diff / na - dropped).abs() <= 1e-10);
        }
    }

    #[test]
    fn canonicalize_is_idempotent_and_isometric(seed in any::<u64>(), n in 2usize..=6, chi in 1usize..=5, c in 0usize..6) {
        let mut g = rng(seed);
        let psi = TensorTrain::random(&vec![3; n], chi, &mut g).unwrap();
        let c = c % n;
        let once = canonicalize(&psi, c).unwrap();
        let twice = canonicalize(&once, c).unwrap();
        for i in 0..n {
            prop_assert!(once.site(i).max_abs_diff(twice.site(i)).unwrap() <= 1e-12 * once.site(i).norm().max(1.0));
        }
        let a = psi.to_dense().unwrap();
        let b = once.to_dense().unwrap();
        let scale = a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        prop_assert!(a.iter().zip(&b).all(|(x, y)| (x - y).norm() <= 1e-10 * scale));
        // sites left of the center are left isometries
        for i in 0..c {
            let m = once.site(i).matrix(&[once.link(i).clone(), once.phys(i).clone()], &[once.link(i + 1).clone()]).unwrap();
            let gram = linalg::adjoint(&m).dot(&m);
            prop_assert!(linalg::fro_norm(&(&gram - &linalg::eye(gram.nrows()))) < 1e-10);
        }
    }

    #[test]
    fn lossless_truncation_after_mpo_keeps_expectation(seed in any::<u64>(), n in 2usize..=5, chi in 1usize..=4, w in 1usize..=3) {
        let mut g = rng(seed);
        let r = TensorTrain::random(&vec![2; n], chi, &mut g).unwrap();
        let e = random_mpo(n, 2, w, &mut g);
        let r = r.with_phys(&(0..n).map(|i| e.phys_in(i).clone()).collect::<Vec<_>>()).unwrap();
        let l = TensorTrain::random(&vec![2; n], chi, &mut g).unwrap();
        let er = apply_mpo(&e, &r).unwrap();
        let l = l.with_phys(er.phys_labels()).unwrap();
        let want = expval_lr(&l, &e, &r).unwrap();
        let (t, _) = truncate_rdm(&er, 0.0, None).unwrap();
        let got = overlap_noconj(&l, &t).unwrap();
        let scale = transverse::mps::norm(&l).unwrap() * transverse::mps::norm(&er).unwrap();
        prop_assert!((got - want).norm() <= 1e-10 * scale);
    }
}

proptest! {
    #![proptest_config(cfg(100))]

    #[test]
    fn takagi_and_orthogonal_eig_reconstruct(seed in any::<u64>(), n in 2usize..=32) {
        let mut g = rng(seed);
        let m = random_symmetric(n, &mut g);
        let scale = linalg::fro_norm(&m);
        let t = takagi_matrix(&m, 0.0, None).unwrap();
        prop_assert!(linalg::fro_norm(&(&t.reconstruct() - &m)) <= 1e-8 * scale);
        let iso = linalg::adjoint(&t.u_z).dot(&t.u_z);
        prop_assert!(linalg::fro_norm(&(&iso - &linalg::eye(iso.nrows()))) < 1e-8);
        let e = symm_orth_eig_matrix(&m).unwrap();
        prop_assert!(linalg::fro_norm(&(&e.reconstruct() - &m)) <= 1e-8 * scale);
        let orth = e.o.t().dot(&e.o);
        prop_assert!(linalg::fro_norm(&(&orth - &linalg::eye(n))) < 1e-8);
    }
}

proptest! {
    #![proptest_config(cfg(32))]

    #[test]
    fn takagi_of_real_spd_is_its_eigendecomposition(seed in any::<u64>(), n in 2usize..=16) {
        let mut g = rng(seed);
        let a = nd::Array2::from_shape_fn((n, n), |_| C64::new(g.gen::<f64>() - 0.5, 0.0));
        let m = a.t().dot(&a) + &linalg::eye(n).mapv(|z| z * 0.1);
        let t = takagi_matrix(&m, 0.0, None).unwrap();
        let (w, _) = linalg::eigh(&m).unwrap();
        let mut w: Vec<f64> = w.to_vec();
        w.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for (s, e) in t.s.iter().zip(&w) {
            prop_assert!((s - e).abs() <= 1e-10 * w[0]);
        }
    }

    #[test]
    fn real_time_mpos_are_unitary(seed in any::<u64>(), which in 0usize..4, n in 2usize..=5) {
        let mut g = rng(seed);
        let a = g.gen::<f64>() * 2.0 - 1.0;
        let b = g.gen::<f64>() * 2.0 - 1.0;
        let mp = match which {
            0 => ModelParams::Ising { j: 1.0, g: a, h: b },
            1 => ModelParams::Potts { j: 1.0, g: a },
            2 => ModelParams::Xxz { j: 1.0, delta: a, spin: Spin::Half },
            _ => ModelParams::Xxz { j: 1.0, delta: a, spin: Spin::One },
        };
        let n = if which == 3 { n.min(4) } else { n };
        let dt = 0.05 + 0.2 * g.gen::<f64>();
        let u = Builder::default_for(&mp).build(&mp, C64::new(dt, 0.0)).unwrap().dense(n).unwrap();
        let id = linalg::adjoint(&u).dot(&u);
        prop_assert!(linalg::fro_norm(&(&id - &linalg::eye(id.nrows()))) < 1e-10);
    }

    #[test]
    fn rtm_spectrum_is_gauge_invariant_and_rdm_is_not(seed in any::<u64>(), n in 3usize..=6, chi in 2usize..=4) {
        let mut g = rng(seed);
        let l = TensorTrain::random(&vec![2; n], chi, &mut g).unwrap();
        let r = TensorTrain::random(&vec![2; n], chi, &mut g).unwrap().with_phys(l.phys_labels()).unwrap();
        let cut = 1 + g.gen_range(0..n - 1);
        let x = conditioned(2, 3.0, 100.0, &mut g);
        let (l2, r2) = gauge_pair(&l, &r, cut, &x);
        let before = rtm_singular_spectrum(&l, &r, cut).unwrap();
        let after = rtm_singular_spectrum(&l2, &r2, cut).unwrap();
        for (a, b) in before.iter().zip(&after) {
            prop_assert!((a - b).abs() < 1e-8);
        }
        let e1 = gen_renyi2(&r, &l).unwrap();
        let e2 = gen_renyi2(&r2, &l2).unwrap();
        for (a, b) in e1.iter().zip(&e2) {
            prop_assert!((a - b).norm() < 1e-8);
        }
    }

    #[test]
    fn lossless_rtm_sweep_keeps_overlaps_and_is_canonical(seed in any::<u64>(), n in 2usize..=6, chi in 1usize..=4, right in any::<bool>()) {
        let mut g = rng(seed);
        let l = TensorTrain::random(&vec![2; n], chi, &mut g).unwrap();
        let r = TensorTrain::random(&vec![2; n], chi, &mut g).unwrap().with_phys(l.phys_labels()).unwrap();
        let e = random_mpo(n, 2, 2, &mut g);
        let dir = if right { Direction::Right } else { Direction::Left };
        let out = truncate_rtm(&l, &r, &TruncationSpec::lossless().with_direction(dir)).unwrap();
        let before = overlap_noconj(&l, &r).unwrap();
        let after = overlap_noconj(&out.l_out, &out.r_out).unwrap();
        prop_assert!(rel(after, before) < 1e-10);
        let inp: Vec<IndexLabel> = (0..n).map(|i| e.phys_in(i).clone()).collect();
        let outp: Vec<IndexLabel> = (0..n).map(|i| e.phys_out(i).clone()).collect();
        let ev = |a: &TensorTrain, b: &TensorTrain| expval_lr(&a.with_phys(&outp).unwrap(), &e, &b.with_phys(&inp).unwrap()).unwrap();
        prop_assert!(rel(ev(&out.l_out, &out.r_out), ev(&l, &r)) < 1e-10);
        let res = generalized_canonical_residuals(&out.l_out, &out.r_out, dir).unwrap();
        prop_assert!(res.iter().all(|&x| x < 1e-8), "{:?}", res);
    }

    #[test]
    fn sweep_directions_mirror_each_other_on_symmetric_pairs(seed in any::<u64>(), n in 3usize..=6, cutoff in 1e-4f64..1e-2) {
        let mut g = rng(seed);
        let reflect = |v: &[C64]| -> Vec<C64> {
            (0..v.len()).map(|k| { let mut x = k; let mut y = 0; for _ in 0..n { y = 2 * y + x % 2; x /= 2; } v[y] }).collect()
        };
        let sym = |g: &mut rand_chacha::ChaCha8Rng| -> Vec<C64> {
            let v: Vec<C64> = (0..1 << n).map(|_| C64::new(g.gen::<f64>() - 0.5, g.gen::<f64>() - 0.5)).collect();
            v.iter().zip(reflect(&v)).map(|(a, b)| a + b).collect()
        };
        let (vl, vr) = (sym(&mut g), sym(&mut g));
        let l = TensorTrain::from_dense(&vl, &vec![2; n], 0.0, None).unwrap();
        let r = TensorTrain::from_dense(&vr, &vec![2; n], 0.0, None).unwrap().with_phys(l.phys_labels()).unwrap();
        let spec = TruncationSpec::new(cutoff, usize::MAX);
        let a = truncate_rtm(&l, &r, &spec.with_direction(Direction::Left)).unwrap();
        let b = truncate_rtm(&l, &r, &spec.with_direction(Direction::Right)).unwrap();
        // compare the gauge-free transition operators |R><L|
        let (al, ar) = (a.l_out.to_dense().unwrap(), a.r_out.to_dense().unwrap());
        let (bl, br) = (reflect(&b.l_out.to_dense().unwrap()), reflect(&b.r_out.to_dense().unwrap()));
        let scale = al.iter().map(|z| z.norm()).fold(0.0, f64::max) * ar.iter().map(|z| z.norm()).fold(0.0, f64::max);
        for i in 0..al.len() {
            for j in 0..ar.len() {
                prop_assert!((ar[i] * al[j] - br[i] * bl[j]).norm() <= 1e-9 * scale);
            }
        }
    }

    #[test]
    fn single_cut_overlap_error_is_bounded_by_discarded_trace_norm(seed in any::<u64>(), d in 3usize..=6, cutoff in 1e-4f64..5e-2, right in any::<bool>()) {
        // With one cut the sweep drops RTM singular values s_k of the input
        // pair, so |d<L|R>| <= sum_dropped s_k = share * |T|_1.
        let mut g = rng(seed);
        let l = TensorTrain::random(&[d, d], d, &mut g).unwrap();
        let r = TensorTrain::random(&[d, d], d, &mut g).unwrap().with_phys(l.phys_labels()).unwrap();
        let (vl, vr) = (l.to_dense().unwrap(), r.to_dense().unwrap());
        let t = nd::Array2::from_shape_fn((d, d), |(i, j)| (0..d).map(|k| vr[i * d + k] * vl[j * d + k]).sum::<C64>());
        let nuclear: f64 = linalg::singular_values(&t).unwrap().sum();
        let dir = if right { Direction::Right } else { Direction::Left };
        let out = truncate_rtm(&l, &r, &TruncationSpec::new(cutoff, usize::MAX).with_direction(dir)).unwrap();
        let ov = overlap_noconj(&l, &r).unwrap();
        let change = (overlap_noconj(&out.l_out, &out.r_out).unwrap() - ov).norm();
        prop_assert!(change <= out.total_discarded() * nuclear * (1.0 + 1e-10) + 1e-12 * nuclear);
    }

    #[test]
    fn generalized_entropies_are_consistent(seed in any::<u64>(), n in 2usize..=6, chi in 1usize..=4) {
        let mut g = rng(seed);
        let psi = TensorTrain::random(&vec![2; n], chi, &mut g).unwrap();
        let phi = TensorTrain::random(&vec![2; n], chi, &mut g).unwrap().with_phys(psi.phys_labels()).unwrap();
        let r2 = gen_renyi2(&psi, &phi).unwrap();
        let t2 = gen_tsallis2(&psi, &phi).unwrap();
        for (r, t) in r2.iter().zip(&t2) {
            prop_assert!((-(C64::new(1.0, 0.0) - t).ln() - r).norm() < 1e-12 * (1.0 + r.norm()));
        }
        let spectra = diagonalize_rtm_symmetric(&psi, &DiagOptions::default()).unwrap();
        let purity = gen_purity(&psi, &psi).unwrap();
        for (s, p) in spectra.iter().zip(&purity) {
            prop_assert!(s.error.is_none(), "{:?}", s.error);
            let sq: C64 = s.eigenvalues.iter().map(|z| z * z).sum();
            prop_assert!((sq - p).norm() < 1e-8 * (1.0 + p.norm()));
        }
        let conj = gen_purity(&psi, &psi.conj()).unwrap();
        for (b, p) in (1..n).zip(&conj) {
            prop_assert!(p.im.abs() < 1e-10);
            let w = entanglement_spectrum(&psi, b).unwrap().p;
            prop_assert!((p.re - w.iter().map(|x| x * x).sum::<f64>()).abs() < 1e-10);
        }
    }
}
