use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use weaver_core::kron::*;
use weaver_core::Tensor;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Column-wise `(Θ_1 ⊗ … ⊗ Θ_Δ) v` per head with the dense product.
fn dense_apply(factors: &[Tensor], v: &Tensor) -> Tensor {
    let h = v.shape()[0];
    let mut out = Vec::new();
    for head in 0..h {
        let mats: Vec<Tensor> = factors
            .iter()
            .map(|f| {
                let i = f.shape()[1];
                f.slice_axis(0, head, 1).unwrap().reshape(&[i, i]).unwrap()
            })
            .collect();
        let big = kron_dense_chain(&mats).unwrap();
        let vh = v
            .slice_axis(0, head, 1)
            .unwrap()
            .reshape(&v.shape()[1..])
            .unwrap();
        out.push(big.matmul(&vh).unwrap());
    }
    let refs: Vec<&Tensor> = out.iter().collect();
    Tensor::concat(&refs, 0)
        .unwrap()
        .reshape(v.shape())
        .unwrap()
}

fn efficient(factors: &[Tensor], v: &Tensor) -> Tensor {
    let mut chain = vec![v.shape()[2]];
    chain.extend(factors.iter().map(|f| f.shape()[1]));
    let fc = FactorChain::new(factors.to_vec()).unwrap();
    PkmvPlan::new(v.shape()[0], &chain)
        .unwrap()
        .apply_columns(&fc, v)
        .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn order_two_matches_dense(h in 1usize..=3, p in 1usize..=6, n in 1usize..=6, e in 1usize..=4, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tt = random(&[h, p, p], &mut rng);
        let ts = random(&[h, n, n], &mut rng);
        let v = random(&[h, p * n, e], &mut rng);
        let dense = dense_apply(&[tt.clone(), ts.clone()], &v);
        prop_assert!(efficient(&[tt.clone(), ts.clone()], &v).max_abs_diff(&dense).unwrap() < 1e-12);
        prop_assert!(p2kmv_basic(&tt, &ts, &v).unwrap().max_abs_diff(&dense).unwrap() < 1e-12);
    }

    #[test]
    fn order_three_matches_dense(h in 1usize..=2, sizes in prop::collection::vec(1usize..=3, 3), e in 1usize..=3, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let factors: Vec<Tensor> = sizes.iter().map(|&i| random(&[h, i, i], &mut rng)).collect();
        let v = random(&[h, sizes.iter().product(), e], &mut rng);
        prop_assert!(efficient(&factors, &v).max_abs_diff(&dense_apply(&factors, &v)).unwrap() < 1e-12);
    }

    #[test]
    fn efficient_is_linear(p in 1usize..=5, n in 1usize..=5, e in 1usize..=3, a in -2.0f64..2.0, b in -2.0f64..2.0, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tt = random(&[2, p, p], &mut rng);
        let tt2 = random(&[2, p, p], &mut rng);
        let ts = random(&[2, n, n], &mut rng);
        let v = random(&[2, p * n, e], &mut rng);
        let w = random(&[2, p * n, e], &mut rng);
        let combo = v.scale(a).add(&w.scale(b)).unwrap();
        let lhs = efficient(&[tt.clone(), ts.clone()], &combo);
        let rhs = efficient(&[tt.clone(), ts.clone()], &v).scale(a).add(&efficient(&[tt.clone(), ts.clone()], &w).scale(b)).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-12);
        let mixed = tt.scale(a).add(&tt2.scale(b)).unwrap();
        let lhs = efficient(&[mixed, ts.clone()], &v);
        let rhs = efficient(&[tt, ts.clone()], &v).scale(a).add(&efficient(&[tt2, ts], &v).scale(b)).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-12);
    }

    #[test]
    fn tumble_permutes_scalars(sizes in prop::collection::vec(1usize..=3, 2..=4), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let total: usize = sizes.iter().product();
        let v = Tensor::from_fn(&[1, total / sizes[0], sizes[0]], |_| rng.gen::<f64>());
        let plan = PkmvPlan::new(1, &sizes).unwrap();
        let mut u = plan.fold(&v).unwrap();
        let mut expect = v.data().to_vec();
        expect.sort_by(f64::total_cmp);
        while u.depth() > 0 {
            u = kron_tumble(&u).unwrap();
            let want = ledger_shape(&sizes, u.depth()).unwrap();
            prop_assert_eq!(&u.value().shape()[1..], &want[..]);
            let mut got = u.value().data().to_vec();
            got.sort_by(f64::total_cmp);
            prop_assert_eq!(&got, &expect);
        }
    }

    #[test]
    fn wikps_matches_explicit_sum(heads in prop::sample::select(vec![1usize, 2, 4]), p in 1usize..=4, n in 1usize..=4, e in 1usize..=3, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tt = random(&[heads, p, p], &mut rng);
        let ts = random(&[heads, n, n], &mut rng);
        let v = random(&[heads, p * n, e], &mut rng);
        let w: Vec<Tensor> = (0..heads).map(|_| random(&[e, heads * e], &mut rng)).collect();
        let y = efficient(&[tt, ts], &v);
        let mut explicit = Tensor::zeros(&[p * n, heads * e]);
        for (hd, wh) in w.iter().enumerate() {
            let yh = y.slice_axis(0, hd, 1).unwrap().reshape(&[p * n, e]).unwrap();
            explicit = explicit.add(&yh.matmul(wh).unwrap()).unwrap();
        }
        let concat = y.rearrange("h r e -> r (h e)", &[]).unwrap();
        let mixed = concat.matmul(&wikps_expand(&w).unwrap()).unwrap();
        prop_assert!(mixed.max_abs_diff(&explicit).unwrap() < 1e-12);
    }

    #[test]
    fn graph_edges_match_dense_pattern(p in 1usize..=6, n in 1usize..=6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a_t = Tensor::from_fn(&[p, p], |_| if rng.gen::<bool>() { 1.0 } else { 0.0 });
        let a_s = Tensor::from_fn(&[n, n], |_| if rng.gen::<bool>() { 1.0 } else { 0.0 });
        let g = kron_graph_edges(&a_t, &a_s).unwrap();
        prop_assert_eq!(g.adjacency::<f64>(), kron_dense(&a_t, &a_s).unwrap());
    }
}
