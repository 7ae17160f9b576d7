use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use weaver_core::dictionary::{retrieve_cofactors, PhaseDictionary};
use weaver_core::model::names;
use weaver_core::nn::ForwardCtx;
use weaver_core::{grad_check, BoundParams, Parameters, Result, Tape, Tensor, Var};

const P: usize = 3;
const C: usize = 2;
const N: usize = 4;
const M: usize = 5;
const K: usize = 2;

fn params(seed: u64) -> Parameters<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = |shape: &[usize]| Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0));
    let mut p = Parameters::new();
    p.insert(names::DICT_W, r(&[P * C, 2 * M]));
    p.insert(names::DICT_B, r(&[2 * M]));
    p.insert(names::DICT_TAU, r(&[N, 1]));
    p.insert(names::DICT_LANDMARKS, r(&[M, P * K]));
    p
}

fn input(seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[P, N, C], |_| rng.gen_range(-2.0..2.0))
}

fn retrieve(params: &Parameters<f64>, x: &Tensor) -> (Tensor, Tensor) {
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let d = PhaseDictionary::bind(&bound, 0.1).unwrap();
    let out = retrieve_cofactors(&tape.constant(x.clone()), &d, &mut ForwardCtx::eval()).unwrap();
    ((*out.xi.value()).clone(), (*out.weights.value()).clone())
}

/// Entmax-1.5 by bisection on the threshold: `p_i = max(x_i/2 − γ, 0)²` with `Σp = 1`.
fn entmax_bisect(x: &[f64]) -> Vec<f64> {
    let z: Vec<f64> = x.iter().map(|v| v / 2.0).collect();
    let max = z.iter().cloned().fold(f64::MIN, f64::max);
    let (mut lo, mut hi) = (max - 1.0, max);
    let mass = |g: f64| z.iter().map(|&v| (v - g).max(0.0).powi(2)).sum::<f64>();
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mass(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let g = 0.5 * (lo + hi);
    z.iter().map(|&v| (v - g).max(0.0).powi(2)).collect()
}

#[test]
fn cofactors_are_convex_combinations_of_landmarks() {
    for seed in 0..10 {
        let params = params(seed);
        let x = input(seed + 100);
        let (xi, w) = retrieve(&params, &x);
        let lm = params.get(names::DICT_LANDMARKS).unwrap();
        for n in 0..N {
            let row: Vec<f64> = (0..M).map(|m| w.get(&[n, m])).collect();
            assert!(row.iter().all(|&v| v >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for p in 0..P {
                for k in 0..K {
                    let want: f64 = (0..M).map(|m| row[m] * lm.get(&[m, p * K + k])).sum();
                    assert!((xi.get(&[p, n, k]) - want).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn weights_match_bisection_oracle() {
    let params = params(3);
    let x = input(4);
    let (_, w) = retrieve(&params, &x);
    // straight-line logits
    let wq = params.get(names::DICT_W).unwrap();
    let b = params.get(names::DICT_B).unwrap();
    let tau = params.get(names::DICT_TAU).unwrap();
    for n in 0..N {
        let q: Vec<f64> = (0..P)
            .flat_map(|p| (0..C).map(move |c| (p, c)))
            .map(|(p, c)| x.get(&[p, n, c]))
            .collect();
        let h: Vec<f64> = (0..2 * M)
            .map(|o| b.get(&[o]) + (0..P * C).map(|i| q[i] * wq.get(&[i, o])).sum::<f64>())
            .collect();
        let temp = tau.get(&[n, 0]).exp().ln_1p();
        let logits: Vec<f64> = (0..M)
            .map(|m| h[m] / (1.0 + (-h[m + M]).exp()) / temp)
            .collect();
        let want = entmax_bisect(&logits);
        for m in 0..M {
            assert!((w.get(&[n, m]) - want[m]).abs() < 1e-8);
        }
    }
}

#[test]
fn extreme_logit_selects_one_landmark() {
    let mut params = params(1);
    let j = 3;
    // bias drives the gate of landmark j open and its value far above the rest
    let mut b = Tensor::zeros(&[2 * M]);
    let mut bd = b.data().to_vec();
    bd[j] = 1e3;
    bd[j + M] = 50.0;
    b = Tensor::from_vec(&[2 * M], bd).unwrap();
    *params.get_mut(names::DICT_B).unwrap() = b;
    *params.get_mut(names::DICT_W).unwrap() = Tensor::zeros(&[P * C, 2 * M]);
    let (xi, w) = retrieve(&params, &input(0));
    let lm = params.get(names::DICT_LANDMARKS).unwrap();
    for n in 0..N {
        assert_eq!(w.get(&[n, j]), 1.0);
        for p in 0..P {
            for k in 0..K {
                assert_eq!(xi.get(&[p, n, k]), lm.get(&[j, p * K + k]));
            }
        }
    }
}

fn weighted_cofactors<'t>(
    tape: &'t Tape<f64>,
    bound: &BoundParams<'t, f64>,
    x: &Tensor,
    r: &Tensor,
) -> Result<Var<'t, f64>> {
    let d = PhaseDictionary::bind(bound, 0.0)?;
    let out = retrieve_cofactors(&tape.constant(x.clone()), &d, &mut ForwardCtx::eval())?;
    out.xi.mul(&tape.constant(r.clone())).map(|v| v.sum_all())
}

#[test]
fn gradients_reach_every_dictionary_parameter() {
    let params = params(7);
    let x = input(8);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let r = Tensor::from_fn(&[P, N, K], |_| rng.gen_range(-1.0..1.0));
    let check = grad_check(&params, 1e-5, |tape, bound| {
        weighted_cofactors(tape, bound, &x, &r)
    })
    .unwrap();
    assert!(check.passes(1e-6), "{:?}", check.worst());

    let tape = Tape::new();
    let bound = params.bind(&tape);
    let out = weighted_cofactors(&tape, &bound, &x, &r).unwrap();
    let grads = tape.backward(out).unwrap().params(&bound);
    for name in [
        names::DICT_W,
        names::DICT_B,
        names::DICT_TAU,
        names::DICT_LANDMARKS,
    ] {
        assert!(grads.grads[name].max_abs() > 0.0, "{name}");
    }
}

#[test]
fn training_mode_dropout_is_seeded() {
    let params = params(2);
    let x = input(3);
    let run = |seed| {
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let d = PhaseDictionary::bind(&bound, 0.5).unwrap();
        let out = retrieve_cofactors(&tape.constant(x.clone()), &d, &mut ForwardCtx::train(seed))
            .unwrap();
        (*out.xi.value()).clone()
    };
    assert_eq!(run(1), run(1));
    assert_eq!(retrieve(&params, &x), retrieve(&params, &x));
}

proptest! {
    #[test]
    fn larger_temperature_never_shrinks_support(
        logits in prop::collection::vec(-5.0f64..5.0, 2..12),
        t_small in 0.05f64..3.0,
        factor in 1.0f64..5.0,
    ) {
        let support = |t: f64| {
            let scaled: Vec<f64> = logits.iter().map(|v| v / t).collect();
            entmax_bisect(&scaled).iter().filter(|&&p| p > 1e-12).count()
        };
        let core = |t: f64| weaver_core::attention::entmax15(&logits, t).unwrap().iter().filter(|&&p| p > 0.0).count();
        prop_assert!(support(t_small * factor) >= support(t_small));
        prop_assert!(core(t_small * factor) >= core(t_small));
    }
}
