use proptest::prelude::*;
use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use weaver_core::tensor::Rearrangement;
use weaver_core::Tensor;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

proptest! {
    #[test]
    fn rearrange_is_a_bijection(dims in prop::collection::vec(1usize..=5, 1..=4), seed in any::<u64>(), group in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let names: Vec<String> = (0..dims.len()).map(|i| format!("a{i}")).collect();
        let mut order: Vec<usize> = (0..dims.len()).collect();
        order.shuffle(&mut rng);
        let out: Vec<&str> = order.iter().map(|&i| names[i].as_str()).collect();
        let rhs = if group && out.len() >= 2 {
            format!("({} {}) {}", out[0], out[1], out[2..].join(" "))
        } else {
            out.join(" ")
        };
        let pattern = format!("{} -> {}", names.join(" "), rhs.trim());
        let sizes: Vec<(&str, usize)> = names.iter().map(|n| n.as_str()).zip(dims.iter().copied()).collect();
        let x = Tensor::from_fn(&dims, |i| i.iter().fold(0.0, |acc, &v| acc * 7.0 + v as f64));
        let y = x.rearrange(&pattern, &sizes).unwrap();
        let inverse = Rearrangement::parse(&pattern).unwrap().inverse();
        let back = y.rearrange(&inverse.pattern(), &sizes).unwrap();
        prop_assert_eq!(&back, &x);
        let mut a = x.data().to_vec();
        let mut b = y.data().to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn reductions_are_homogeneous(dims in prop::collection::vec(1usize..=4, 1..=3), seed in any::<u64>(), c in -3.0f64..3.0, shift in -5.0f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&dims, &mut rng);
        for axis in 0..dims.len() {
            let lhs = x.scale(c).mode_sum(axis).unwrap();
            let rhs = x.mode_sum(axis).unwrap().scale(c);
            prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-12);
            let v = x.mode_variance(axis).unwrap();
            let shifted = x.add_scalar(shift).mode_variance(axis).unwrap();
            prop_assert!(v.max_abs_diff(&shifted).unwrap() < 1e-10);
            let scaled = x.scale(c).mode_variance(axis).unwrap();
            prop_assert!(v.scale(c * c).max_abs_diff(&scaled).unwrap() < 1e-10);
        }
    }

    #[test]
    fn batched_matmul_matches_loops(
        batch in 1usize..=3, i in 1usize..=6, k in 1usize..=6, j in 1usize..=6,
        transpose_b in any::<bool>(), broadcast in any::<bool>(), seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&[batch, i, k], &mut rng);
        let b_batch = if broadcast { 1 } else { batch };
        let b = if transpose_b { random(&[b_batch, j, k], &mut rng) } else { random(&[b_batch, k, j], &mut rng) };
        let c = a.batched_matmul(&b, transpose_b).unwrap();
        prop_assert_eq!(c.shape(), &[batch, i, j]);
        for h in 0..batch {
            let hb = if broadcast { 0 } else { h };
            for r in 0..i {
                for s in 0..j {
                    let mut acc = 0.0;
                    for t in 0..k {
                        let bv = if transpose_b { b.get(&[hb, s, t]) } else { b.get(&[hb, t, s]) };
                        acc += a.get(&[h, r, t]) * bv;
                    }
                    prop_assert!((c.get(&[h, r, s]) - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn top_k_scores_descend_with_unique_indices(rows in 1usize..=4, size in 1usize..=8, seed in any::<u64>(), ties in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores = Tensor::from_fn(&[size, rows], |_| if ties { rng.gen_range(0..3) as f64 } else { rng.gen::<f64>() });
        let k = rng.gen_range(1..=size);
        let top = scores.top_k_select(&scores, 0, k).unwrap();
        for r in 0..rows {
            let picked: Vec<usize> = (0..k).map(|j| top.indices[j * rows + r]).collect();
            let mut uniq = picked.clone();
            uniq.sort_unstable();
            uniq.dedup();
            prop_assert_eq!(uniq.len(), k);
            for j in 1..k {
                let (prev, cur) = (top.scores.get(&[j - 1, r]), top.scores.get(&[j, r]));
                prop_assert!(prev >= cur);
                if prev == cur {
                    prop_assert!(picked[j - 1] < picked[j]);
                }
            }
        }
    }
}
