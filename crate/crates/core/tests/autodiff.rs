use std::sync::Arc;

use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::Rng;
use springmor::autodiff::*;
use springmor::gnn::{clasp_assign, distance_scale, hard_with_seeds};
use springmor::Result;

type Build = fn(&mut Tape, &ParamStore) -> Result<Var>;

fn rand_mat(rng: &mut impl Rng, r: usize, c: usize) -> Tensor {
    Array2::from_shape_simple_fn((r, c), || rng.random_range(-1.0..1.0))
}

/// Weighted sum with fixed, asymmetric weights so that every entry matters.
fn weigh(t: &mut Tape, x: Var) -> Result<Var> {
    let (r, c) = t.value(x).dim();
    let w = t.constant(Array2::from_shape_fn((r, c), |(i, j)| 0.3 + 0.7 * ((i * 7 + j * 3) % 5) as f64));
    let y = t.mul(x, w)?;
    Ok(t.sum(y))
}

fn eval(build: Build, store: &ParamStore) -> Result<f64> {
    let mut t = Tape::new();
    let out = build(&mut t, store)?;
    Ok(t.scalar(out))
}

/// Every scalar entry of the tape gradient against a central difference.
fn check_all(build: Build, store: &ParamStore) {
    let mut t = Tape::new();
    let out = build(&mut t, store).unwrap();
    assert!(t.replay_matches().unwrap());
    let g = grad(&t, out, store).unwrap();
    let picks: Vec<(usize, usize)> =
        (0..store.len()).flat_map(|p| (0..store.entry(p).value.len()).map(move |k| (p, k))).collect();
    let mut f = |s: &ParamStore| eval(build, s);
    let rep = finite_diff_check_at(&mut f, store, &g, 1e-6, &picks).unwrap();
    for s in &rep.samples {
        assert!(
            (s.analytic - s.numeric).abs() <= 1e-6 * (1.0 + s.numeric.abs()),
            "{}[{}]: analytic {} numeric {}",
            s.name,
            s.index,
            s.analytic,
            s.numeric
        );
    }
}

fn store_with(seed: u64, shapes: &[(&str, usize, usize)]) -> ParamStore {
    let mut rng = springmor::seeded_rng(seed);
    let mut s = ParamStore::new();
    for &(name, r, c) in shapes {
        s.add(name, rand_mat(&mut rng, r, c), true).unwrap();
    }
    s
}

fn dense_chain(t: &mut Tape, s: &ParamStore) -> Result<Var> {
    let a = s.load(t, "a")?;
    let b = s.load(t, "b")?;
    let r = s.load(t, "r")?;
    let ab = t.matmul(a, b)?;
    let ab = t.add_row(ab, r)?;
    let sp = t.softplus(ab);
    let sg = t.sigmoid(ab);
    let x = t.sub(sp, sg)?;
    let x = t.scale(x, 1.7);
    let x = t.add_scalar(x, -0.2);
    weigh(t, x)
}

fn transposes(t: &mut Tape, s: &ParamStore) -> Result<Var> {
    let p = s.load(t, "p")?;
    let w = s.load(t, "w")?;
    let y = t.tmatmul(p, w)?;
    let pt = t.transpose(p);
    let z = t.matmul(pt, w)?;
    let q = t.mul(y, z)?;
    let e = t.exp(q);
    weigh(t, e)
}

fn pointwise(t: &mut Tape, s: &ParamStore) -> Result<Var> {
    let a = s.load(t, "a")?;
    let m = t.smooth_min(a, 0.1, 5.0);
    let e = t.exp(a);
    let x = t.mul(m, e)?;
    let w = weigh(t, x)?;
    let mn = t.mean(x);
    t.add(w, mn)
}

fn rows(t: &mut Tape, s: &ParamStore) -> Result<Var> {
    let a = s.load(t, "a")?;
    let b = s.load(t, "b")?;
    let c = t.concat_cols(&[a, b])?;
    let g = t.gather_rows(c, Arc::new(vec![2, 0, 2, 3]))?;
    let sa = t.scatter_add_rows(g, Arc::new(vec![1, 1, 0, 2]), 3)?;
    let n = t.row_norm(sa);
    let mr = t.mean_rows(sa);
    let x = weigh(t, n)?;
    let y = weigh(t, mr)?;
    t.add(x, y)
}

fn columns(t: &mut Tape, s: &ParamStore) -> Result<Var> {
    let a = s.load(t, "a")?;
    let c = s.load(t, "c")?;
    let k = s.load(t, "k")?;
    let sm = t.row_softmax(a);
    let ec = t.exp(c);
    let x = t.mul_col(sm, c)?;
    let x = t.div_col(x, ec)?;
    let x = t.mul_scalar(x, k)?;
    let x = t.add_scalar_var(x, k)?;
    weigh(t, x)
}

fn geometry(t: &mut Tape, s: &ParamStore) -> Result<Var> {
    let a = s.load(t, "a")?;
    let b = s.load(t, "b")?;
    let e = s.load(t, "e")?;
    let d = t.pairwise_dist(a, b)?;
    let l = t.scatter_laplacian(e, Arc::new(vec![(0, 1), (1, 2), (0, 3)]), 4)?;
    let lg = t.gather_entries(l, Arc::new(vec![(0, 0), (1, 2), (3, 0), (2, 2)]))?;
    let x = weigh(t, d)?;
    let y = weigh(t, lg)?;
    t.add(x, y)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dense_ops_match_finite_differences(seed in any::<u64>()) {
        check_all(dense_chain, &store_with(seed, &[("a", 3, 4), ("b", 4, 2), ("r", 1, 2)]));
    }

    #[test]
    fn transposed_products_match_finite_differences(seed in any::<u64>()) {
        check_all(transposes, &store_with(seed, &[("p", 4, 3), ("w", 4, 2)]));
    }

    #[test]
    fn pointwise_ops_match_finite_differences(seed in any::<u64>()) {
        check_all(pointwise, &store_with(seed, &[("a", 3, 3)]));
    }

    #[test]
    fn row_ops_match_finite_differences(seed in any::<u64>()) {
        check_all(rows, &store_with(seed, &[("a", 4, 2), ("b", 4, 1)]));
    }

    #[test]
    fn column_ops_match_finite_differences(seed in any::<u64>()) {
        check_all(columns, &store_with(seed, &[("a", 3, 4), ("c", 3, 1), ("k", 1, 1)]));
    }

    #[test]
    fn geometric_ops_match_finite_differences(seed in any::<u64>()) {
        check_all(geometry, &store_with(seed, &[("a", 5, 3), ("b", 2, 3), ("e", 3, 1)]));
    }

    #[test]
    fn softmax_rows_sum_to_one(seed in any::<u64>()) {
        let mut rng = springmor::seeded_rng(seed);
        let mut t = Tape::new();
        let a = t.constant(rand_mat(&mut rng, 6, 4).mapv(|x| 50.0 * x));
        let s = t.row_softmax(a);
        for r in t.value(s).rows() {
            prop_assert!((r.sum() - 1.0).abs() < 1e-12);
            prop_assert!(r.iter().all(|&x| x >= 0.0));
        }
    }
}

#[test]
fn scalar_helpers_are_stable() {
    assert_eq!(softplus(1000.0), 1000.0);
    assert!(softplus(-1000.0) >= 0.0);
    assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
    assert_eq!(sigmoid(-1000.0), 0.0);
    assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
    assert_eq!(smooth_min(5.0, 0.0, 100.0), 5.0);
    assert!(smooth_min(-5.0, 0.0, 10.0) > 0.0);
}

#[test]
fn absent_parameters_get_zero_gradients() {
    let s = store_with(1, &[("a", 2, 2), ("unused", 3, 1)]);
    let mut t = Tape::new();
    let a = s.load(&mut t, "a").unwrap();
    let y = t.sum(a);
    let g = grad(&t, y, &s).unwrap();
    assert_eq!(g.get(&s, "a").unwrap(), &Array2::<f64>::ones((2, 2)));
    assert_eq!(g.get(&s, "unused").unwrap(), &Array2::<f64>::zeros((3, 1)));
}

#[test]
fn backward_requires_a_scalar_root() {
    let mut t = Tape::new();
    let a = t.input(Array2::<f64>::ones((2, 2)));
    assert!(t.backward(a).is_err());
}

#[test]
fn shape_mismatch_is_an_error() {
    let mut t = Tape::new();
    let a = t.constant(Array2::ones((2, 3)));
    let b = t.constant(Array2::ones((2, 3)));
    assert!(t.matmul(a, b).is_err());
    let c = t.constant(Array2::ones((3, 2)));
    assert!(t.add(a, c).is_err());
    assert!(t.matmul(a, c).is_ok());
}

#[test]
fn injected_fault_scales_the_gradient() {
    let s = store_with(2, &[("a", 3, 4), ("b", 4, 2), ("r", 1, 2)]);
    let mut clean = Tape::new();
    let y = dense_chain(&mut clean, &s).unwrap();
    let g0 = grad(&clean, y, &s).unwrap();
    let mut bad = Tape::with_fault("add_row", 3.0);
    let y = dense_chain(&mut bad, &s).unwrap();
    let g1 = grad(&bad, y, &s).unwrap();
    let (r0, r1) = (g0.get(&s, "r").unwrap(), g1.get(&s, "r").unwrap());
    for (x, y) in r0.iter().zip(r1) {
        assert!((3.0 * x - y).abs() < 1e-12);
    }
}

#[test]
fn gradient_clipping() {
    let mut g = Gradients { grads: vec![array![[3.0, 4.0]], array![[0.0]]] };
    assert_eq!(g.clip(10.0), 5.0);
    assert_eq!(g.grads[0], array![[3.0, 4.0]]);
    assert_eq!(g.clip(1.0), 5.0);
    assert!((g.global_norm() - 1.0).abs() < 1e-15);
    assert!(g.is_finite());
}

#[test]
fn adam_first_step_is_sign_times_lr() {
    let mut s = ParamStore::new();
    s.add("x", array![[1.0, -2.0, 0.5]], true).unwrap();
    let mut st = AdamState::new(&s);
    let g = Gradients { grads: vec![array![[0.3, -40.0, 1e-3]]] };
    adam_update(&mut s, &g, &mut st, 0.1, &AdamConfig::default(), &|_| true).unwrap();
    let want = [0.9, -1.9, 0.4];
    for (x, w) in s.get("x").unwrap().iter().zip(want) {
        assert!((x - w).abs() < 1e-5, "{x} vs {w}");
    }
    assert_eq!(st.steps, vec![1]);
}

#[test]
fn adam_second_step_by_hand() {
    let mut s = ParamStore::new();
    s.add("x", array![[0.0]], true).unwrap();
    let mut st = AdamState::new(&s);
    let cfg = AdamConfig::default();
    for g in [0.5, -0.2] {
        adam_update(&mut s, &Gradients { grads: vec![array![[g]]] }, &mut st, 0.01, &cfg, &|_| true).unwrap();
    }
    // m2 = 0.9·0.05 + 0.1·(−0.2) = 0.025, v2 = 0.999·0.00025 + 0.001·0.04 = 0.00028975
    let mh = 0.025 / (1.0 - 0.81);
    let vh: f64 = 0.00028975 / (1.0 - 0.998001);
    let want = -0.01 * (0.5 / (0.5 + 1e-8)) - 0.01 * mh / (vh.sqrt() + 1e-8);
    assert!((s.get("x").unwrap()[[0, 0]] - want).abs() < 1e-14);
}

#[test]
fn adam_respects_masks_and_frozen_parameters() {
    let mut s = ParamStore::new();
    s.add("a", array![[1.0]], true).unwrap();
    s.add("b", array![[1.0]], true).unwrap();
    s.add("c", array![[1.0]], false).unwrap();
    let mut st = AdamState::new(&s);
    let g = Gradients { grads: vec![array![[1.0]]; 3] };
    adam_update(&mut s, &g, &mut st, 0.1, &AdamConfig::default(), &|n| n != "b").unwrap();
    assert!(s.get("a").unwrap()[[0, 0]] < 1.0);
    assert_eq!(s.get("b").unwrap()[[0, 0]], 1.0);
    assert_eq!(s.get("c").unwrap()[[0, 0]], 1.0);
    assert_eq!(st.steps, vec![1, 0, 0]);
}

/// Four latent points, seeds {0, 2}: the straight-through gradient of a
/// linear loss on the hard assignment equals the hand-derived gradient of
/// the same loss on the softmax relaxation.
#[test]
fn straight_through_gradient_is_the_softmax_jacobian() {
    let h = array![[0.0, 0.0], [0.3, 0.1], [1.0, 0.2], [0.8, -0.4]];
    let w = array![[0.5, -1.0], [2.0, 0.25], [-0.75, 1.5], [1.0, 3.0]];
    let seeds = [0usize, 2];
    let lambda = 0.7;
    let mut s = ParamStore::new();
    s.add("h", h.clone(), true).unwrap();

    let mut t = Tape::new();
    let hv = s.load(&mut t, "h").unwrap();
    let (p, a) = clasp_assign(&mut t, hv, &seeds, lambda, None).unwrap();
    let wv = t.constant(w.clone());
    let pw = t.mul(p, wv).unwrap();
    let loss = t.sum(pw);
    let g = grad(&t, loss, &s).unwrap();

    // Forward is the seed-forced one-hot argmax.
    let soft = a.soft.clone().unwrap();
    assert_eq!(t.value(p), &hard_with_seeds(&soft, &seeds));
    assert_eq!(a.cluster_of[0], 0);
    assert_eq!(a.cluster_of[2], 1);

    // Oracle: z_ij = −d_ij / (d̄ λ), p = softmax(z), ∂L/∂z_ij = p_ij (w_ij − Σ_k p_ik w_ik).
    let d = Array2::from_shape_fn((4, 2), |(i, j)| {
        let (u, v) = (h.row(i), h.row(seeds[j]));
        ((u[0] - v[0]).powi(2) + (u[1] - v[1]).powi(2)).sqrt()
    });
    let dbar = (d[[1, 0]].min(d[[1, 1]]) + d[[3, 0]].min(d[[3, 1]])) / 2.0;
    assert!((distance_scale(&d, &seeds) - dbar).abs() < 1e-15);
    let c = 1.0 / (dbar * lambda);
    let mut want = Array2::<f64>::zeros((4, 2));
    for i in 0..4 {
        let z: Vec<f64> = (0..2).map(|j| -c * d[[i, j]]).collect();
        let zmax = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|x| (x - zmax).exp()).collect();
        let tot: f64 = e.iter().sum();
        let pr: Vec<f64> = e.iter().map(|x| x / tot).collect();
        let mean_w: f64 = (0..2).map(|k| pr[k] * w[[i, k]]).sum();
        for j in 0..2 {
            assert!((pr[j] - soft[[i, j]]).abs() < 1e-14);
            let dz = pr[j] * (w[[i, j]] - mean_w);
            if d[[i, j]] == 0.0 {
                continue;
            }
            let s_j = seeds[j];
            for k in 0..2 {
                let dd = (h[[i, k]] - h[[s_j, k]]) / d[[i, j]];
                want[[i, k]] += -c * dz * dd;
                want[[s_j, k]] -= -c * dz * dd;
            }
        }
    }
    let got = g.get(&s, "h").unwrap();
    for (x, y) in got.iter().zip(&want) {
        assert!((x - y).abs() < 1e-10, "{got:?} vs {want:?}");
    }
}

#[test]
fn ste_forward_is_argmax_with_low_index_ties() {
    let mut t = Tape::new();
    let a = t.constant(array![[0.2, 0.5, 0.5], [0.9, 0.1, 0.0]]);
    let h = t.ste(a);
    assert_eq!(t.value(h), &array![[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]]);
    assert!(t.ste_with(a, Array2::zeros((1, 3))).is_err());
}
