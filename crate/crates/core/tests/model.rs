use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use weaver_core::attention::{ctc, QueryKeyBatch};
use weaver_core::kron::kron_dense;
use weaver_core::model::*;
use weaver_core::nn::ForwardCtx;
use weaver_core::{grad_check, Parameters, Tape, Tensor, WeaverError};

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn times(p: usize) -> Vec<StepTime> {
    (0..p)
        .map(|i| StepTime {
            minute_of_day: (475 + 5 * i as u32) % 1440,
            day_of_week: 3,
        })
        .collect()
}

fn eval_forward(params: &Parameters<f64>, cfg: &WeaverConfig, x: &Tensor) -> Tensor {
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let xv = tape.constant(x.clone());
    let ts = times(cfg.history);
    let y = weaver_forward(&xv, Some(&ts), &bound, cfg, &mut ForwardCtx::eval()).unwrap();
    (*y.value()).clone()
}

fn full_model_grad_check(use_time: bool) {
    let mut cfg = WeaverConfig::desk();
    cfg.use_time = use_time;
    let params = init_parameters(&cfg, 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&[cfg.history, cfg.nodes, cfg.channels], &mut rng);
    let r = random(&[cfg.horizon, cfg.nodes, cfg.channels], &mut rng);
    let ts = times(cfg.history);
    let check = grad_check(&params, 1e-5, |tape, bound| {
        let xv = tape.constant(x.clone());
        let y = weaver_forward(&xv, Some(&ts), bound, &cfg, &mut ForwardCtx::eval())?;
        Ok(y.mul(&tape.constant(r.clone()))?.sum_all())
    })
    .unwrap();
    assert_eq!(check.relative_errors.len(), params.len());
    assert!(check.passes(1e-4), "worst {:?}", check.worst());
}

#[test]
fn gradient_check_with_time_metadata() {
    full_model_grad_check(true);
}

#[test]
fn gradient_check_without_time_metadata() {
    full_model_grad_check(false);
}

#[test]
fn shape_contract_and_determinism() {
    for cfg in [WeaverConfig::desk(), {
        let mut c = WeaverConfig::desk();
        c.channels = 2;
        c.horizon = 3;
        c.history = 5;
        c.nodes = 3;
        c.spatial_widths = vec![6];
        c
    }] {
        let params = init_parameters(&cfg, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(&[cfg.history, cfg.nodes, cfg.channels], &mut rng);
        let a = eval_forward(&params, &cfg, &x);
        let b = eval_forward(&params, &cfg, &x);
        assert_eq!(a.shape(), &[cfg.horizon, cfg.nodes, cfg.channels]);
        assert_eq!(a, b);
    }
}

#[test]
fn dropout_only_acts_in_training() {
    let cfg = WeaverConfig::desk();
    let params = init_parameters(&cfg, 1).unwrap();
    let x = random(&[4, 6, 1], &mut ChaCha8Rng::seed_from_u64(3));
    let ts = times(4);
    let run = |ctx: &mut ForwardCtx| {
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let xv = tape.constant(x.clone());
        let y = weaver_forward(&xv, Some(&ts), &bound, &cfg, ctx).unwrap();
        (*y.value()).clone()
    };
    let eval = run(&mut ForwardCtx::eval());
    assert_ne!(run(&mut ForwardCtx::train(9)), eval);
    assert_eq!(
        run(&mut ForwardCtx::train(9)),
        run(&mut ForwardCtx::train(9))
    );
}

#[test]
fn zeroed_readout_gives_bias() {
    let cfg = WeaverConfig::desk();
    let mut params = init_parameters(&cfg, 4).unwrap();
    let bias = Tensor::from_fn(&[cfg.horizon * cfg.channels], |i| i[0] as f64 * 0.5 - 1.0);
    *params.get_mut(names::HEAD_W_RO).unwrap() = Tensor::zeros(&[cfg.embed, cfg.horizon]);
    *params.get_mut(names::HEAD_B_RO).unwrap() = bias.clone();
    let x = random(&[4, 6, 1], &mut ChaCha8Rng::seed_from_u64(0));
    let y = eval_forward(&params, &cfg, &x);
    for q in 0..cfg.horizon {
        for n in 0..cfg.nodes {
            assert_eq!(y.get(&[q, n, 0]), bias.get(&[q]));
        }
    }
}

#[test]
fn missing_timestamps_name_the_stage() {
    let cfg = WeaverConfig::desk();
    let params = init_parameters(&cfg, 0).unwrap();
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let x = tape.constant(Tensor::zeros(&[4, 6, 1]));
    match weaver_forward(&x, None, &bound, &cfg, &mut ForwardCtx::eval()) {
        Err(WeaverError::Stage { stage, .. }) => assert_eq!(stage, "temporal_encoding"),
        Err(other) => panic!("wrong error {other}"),
        Ok(_) => panic!("expected an error"),
    }
}

#[test]
fn atk_uniform_scores_give_mean() {
    // scores read only feature 0, which is zero, so every score ties
    let tape = Tape::new();
    let (a, b, e) = (3, 2, 2);
    let u = Tensor::from_fn(&[a, b, e], |i| {
        if i[2] == 0 {
            0.0
        } else {
            (i[0] * 7 + i[1]) as f64 * 0.1
        }
    });
    let w = Tensor::from_rows(&[vec![1.0], vec![0.0]]);
    let pooled = pool_leading(&tape.constant(u.clone()), &tape.constant(w), a).unwrap();
    let mean = u.mode_mean(0).unwrap();
    assert!(pooled.nodes.value().max_abs_diff(&mean).unwrap() < 1e-12);
}

#[test]
fn atk_hand_evaluation() {
    // one scorer, N = 1, P = 2, E = 2
    let tape = Tape::new();
    let u = Tensor::from_vec(&[2, 1, 2], vec![1.0, 2.0, 3.0, -1.0]).unwrap();
    let w = Tensor::from_rows(&[vec![3.0], vec![4.0]]);
    // unit column (0.6, 0.8): scores 2.2 and 1.0
    let pooled = pool_leading(&tape.constant(u), &tape.constant(w), 2).unwrap();
    let (s1, s2) = (2.2f64, 1.0f64);
    let w1 = s1.exp() / (s1.exp() + s2.exp());
    let w2 = 1.0 - w1;
    let want = [w1 * 1.0 + w2 * 3.0, w1 * 2.0 + w2 * -1.0];
    let got = pooled.nodes.value();
    assert_eq!(got.shape(), &[1, 2]);
    for (g, w) in got.data().iter().zip(want) {
        assert!((g - w).abs() < 1e-12);
    }
    // k = 1 keeps only the higher-scoring step
    let pooled = pool_leading(
        &tape.constant(Tensor::from_vec(&[2, 1, 2], vec![1.0, 2.0, 3.0, -1.0]).unwrap()),
        &tape.constant(Tensor::from_rows(&[vec![3.0], vec![4.0]])),
        1,
    )
    .unwrap();
    assert_eq!(pooled.nodes.value().data(), &[1.0, 2.0]);
}

#[test]
fn atk_selects_scorer_with_largest_pim() {
    let tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let u = random(&[4, 3, 2], &mut rng);
    let w = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
    let pooled = pool_leading(&tape.constant(u.clone()), &tape.constant(w), 2).unwrap();
    let pim = |f: usize| -> f64 {
        (0..3)
            .map(|n| {
                let col: Vec<f64> = (0..4).map(|p| u.get(&[p, n, f])).collect();
                let m = col.iter().sum::<f64>() / 4.0;
                col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 4.0
            })
            .sum()
    };
    let want = if pim(1) > pim(0) { 1 } else { 0 };
    assert_eq!(pooled.scorer, want);
    assert!((pooled.pim[0] - pim(0)).abs() < 1e-12 && (pooled.pim[1] - pim(1)).abs() < 1e-12);

    // scale feature 1 so scorer 2 (index 1) strictly dominates
    let u2 = Tensor::from_fn(&[4, 3, 2], |i| {
        u.get(i) * if i[2] == 1 { 10.0 } else { 0.1 }
    });
    let pooled = pool_leading(&tape.constant(u2), &tape.constant(Tensor::eye(2)), 2).unwrap();
    assert_eq!(pooled.scorer, 1);
}

#[test]
fn atk_rejects_bad_k() {
    let tape = Tape::new();
    let u = tape.constant(Tensor::ones(&[3, 2, 2]));
    let w = tape.constant(Tensor::ones(&[2, 1]));
    assert!(pool_leading(&u, &w, 0).is_err());
    assert!(pool_leading(&u, &w, 4).is_err());
    assert!(pool_leading(&u, &w, 3).is_ok());
}

#[test]
fn cyclic_feature_examples() {
    let f = cyclic_features(&[
        StepTime {
            minute_of_day: 0,
            day_of_week: 7,
        },
        StepTime {
            minute_of_day: 360,
            day_of_week: 7,
        },
    ]);
    let want = [[0.0, 1.0, 0.0, 1.0], [1.0, 0.0, 0.0, 1.0]];
    for r in 0..2 {
        for c in 0..4 {
            assert!((f.get(&[r, c]) - want[r][c]).abs() < 1e-12);
        }
    }
}

#[test]
fn spatial_encoding_matches_layer_loop() {
    let cfg = WeaverConfig::desk();
    let params = init_parameters(&cfg, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let u_s = random(&[cfg.nodes, cfg.embed], &mut rng);
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let got = spatial_encoding(&tape.constant(u_s.clone()), &bound, &cfg)
        .unwrap()
        .value();

    let kern = params.get(names::SPACE_B_KERN).unwrap();
    let mut h: Vec<Vec<f64>> = (0..cfg.nodes)
        .map(|n| {
            let mut row: Vec<f64> = (0..cfg.embed).map(|e| u_s.get(&[n, e])).collect();
            row.extend((0..cfg.kern_width).map(|j| kern.get(&[n, j])));
            row
        })
        .collect();
    let depth = cfg.spatial_widths.len();
    for l in 0..=depth {
        let w = params.get(&names::space_layer(l)).unwrap();
        let (fi, fo) = (w.shape()[0], w.shape()[1]);
        h = h
            .iter()
            .map(|row| {
                (0..fo)
                    .map(|o| {
                        let v: f64 = (0..fi).map(|i| row[i] * w.get(&[i, o])).sum();
                        if l < depth {
                            v.max(0.0)
                        } else {
                            v
                        }
                    })
                    .collect()
            })
            .collect();
    }
    for n in 0..cfg.nodes {
        for e in 0..cfg.embed {
            assert!((got.get(&[n, e]) - h[n][e]).abs() < 1e-12);
        }
    }

    let mut zero = params.clone();
    for l in 0..=depth {
        let s = zero.get(&names::space_layer(l)).unwrap().shape().to_vec();
        *zero.get_mut(&names::space_layer(l)).unwrap() = Tensor::zeros(&s);
    }
    let tape = Tape::new();
    let bound = zero.bind(&tape);
    let g = spatial_encoding(&tape.constant(u_s), &bound, &cfg)
        .unwrap()
        .value();
    assert_eq!(g.max_abs(), 0.0);
}

#[test]
fn local_attention_is_ctc_of_projections() {
    let cfg = WeaverConfig::desk();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let g = random(&[5, cfg.embed], &mut rng);
    let wq = random(&[cfg.embed, cfg.embed], &mut rng);
    let wk = random(&[cfg.embed, cfg.embed], &mut rng);
    let tape = Tape::new();
    let theta = local_attention(
        &tape.constant(g.clone()),
        &tape.constant(wq.clone()),
        &tape.constant(wk.clone()),
        &cfg,
    )
    .unwrap()
    .value();
    let h = [("h", cfg.heads)];
    let q = g
        .matmul(&wq)
        .unwrap()
        .rearrange("n (h d) -> h n d", &h)
        .unwrap();
    let k = g
        .matmul(&wk)
        .unwrap()
        .rearrange("n (h d) -> h n d", &h)
        .unwrap();
    let want = ctc(&QueryKeyBatch::new(q, k, cfg.ctc_eps).unwrap()).unwrap();
    assert!(theta.max_abs_diff(&want).unwrap() < 1e-14);
    assert!(theta
        .data()
        .iter()
        .all(|&v| (-1.0 / 3.0 - 1e-9..=1.0 + 1e-9).contains(&v)));

    // identical rows with W_Q = W_K put ≈ 1 on every entry
    let row = random(&[1, cfg.embed], &mut rng);
    let same = Tensor::from_fn(&[3, cfg.embed], |i| row.get(&[0, i[1]]));
    let theta = local_attention(
        &tape.constant(same),
        &tape.constant(wq.clone()),
        &tape.constant(wq.clone()),
        &cfg,
    )
    .unwrap()
    .value();
    assert!(theta.data().iter().all(|&v| (v - 1.0).abs() < 1e-5));

    let theta = local_attention(
        &tape.constant(Tensor::zeros(&[3, cfg.embed])),
        &tape.constant(wq),
        &tape.constant(wk),
        &cfg,
    )
    .unwrap()
    .value();
    assert_eq!(theta.max_abs(), 0.0);
}

/// Dense message passing `(Θ_T^h ⊗ Θ_S^h) V^h` per head, then consolidation.
fn dense_st_layer(
    u_st: &Tensor,
    theta_s: &Tensor,
    theta_t: &Tensor,
    w2o: &Tensor,
    cfg: &WeaverConfig,
) -> Tensor {
    let (e, p, n) = (u_st.shape()[0], u_st.shape()[1], u_st.shape()[2]);
    let d = cfg.head_dim();
    let mut z_tilde = Tensor::zeros(&[p * n, e]);
    let mut zt = z_tilde.data().to_vec();
    for h in 0..cfg.heads {
        let ts = theta_t
            .slice_axis(0, h, 1)
            .unwrap()
            .reshape(&[p, p])
            .unwrap();
        let ss = theta_s
            .slice_axis(0, h, 1)
            .unwrap()
            .reshape(&[n, n])
            .unwrap();
        let big = kron_dense(&ts, &ss).unwrap();
        for row in 0..p * n {
            for j in 0..d {
                let f = h * d + j;
                let v: f64 = (0..p * n)
                    .map(|col| big.get(&[row, col]) * u_st.get(&[f, col / n, col % n]))
                    .sum();
                zt[row * e + f] = v;
            }
        }
    }
    z_tilde = Tensor::from_vec(&[p * n, e], zt).unwrap();
    let mixed = z_tilde.matmul(w2o).unwrap();
    Tensor::from_fn(&[p, n, e], |i| {
        let r = i[0] * n + i[1];
        let a = mixed.get(&[r, i[2]]);
        let g = mixed.get(&[r, i[2] + e]);
        a / (1.0 + (-g).exp()) + u_st.get(&[i[2], i[0], i[1]])
    })
}

#[test]
fn st_layer_matches_dense_kronecker() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for (p, n) in [(4, 6), (3, 5), (6, 2)] {
        let mut cfg = WeaverConfig::desk();
        cfg.history = p;
        cfg.nodes = n;
        let e = cfg.embed;
        let u_st = random(&[e, p, n], &mut rng);
        let theta_s = random(&[cfg.heads, n, n], &mut rng);
        let theta_t = random(&[cfg.heads, p, p], &mut rng);
        let w2o = random(&[e, 2 * e], &mut rng);
        let mut params = Parameters::new();
        params.insert(names::MIX_W_2O, w2o.clone());
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let got = st_kronecker_layer(
            &tape.constant(u_st.clone()),
            &tape.constant(theta_s.clone()),
            &tape.constant(theta_t.clone()),
            &bound,
            &cfg,
        )
        .unwrap()
        .value();
        let want = dense_st_layer(&u_st, &theta_s, &theta_t, &w2o, &cfg);
        assert!(got.max_abs_diff(&want).unwrap() < 1e-10);
    }
}

#[test]
fn st_layer_identity_factors_and_zero_mix_is_residual() {
    let cfg = WeaverConfig::desk();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let u_st = random(&[8, 4, 6], &mut rng);
    let eye =
        |k: usize| Tensor::from_fn(&[cfg.heads, k, k], |i| if i[1] == i[2] { 1.0 } else { 0.0 });
    let mut params = Parameters::new();
    params.insert(names::MIX_W_2O, Tensor::zeros(&[8, 16]));
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let z = st_kronecker_layer(
        &tape.constant(u_st.clone()),
        &tape.constant(eye(6)),
        &tape.constant(eye(4)),
        &bound,
        &cfg,
    )
    .unwrap()
    .value();
    assert_eq!(*z, u_st.rearrange("e p n -> p n e", &[]).unwrap());
}

#[test]
fn head_permutation_equivariance() {
    // swapping heads in Θ, the matching value blocks and W_2O row blocks leaves the
    // mixed message GLU(Z̃ W_2O) unchanged
    let cfg = WeaverConfig::desk();
    let (e, p, n, d) = (8, 4, 6, cfg.head_dim());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let u_st = random(&[e, p, n], &mut rng);
    let ts = random(&[2, p, p], &mut rng);
    let ss = random(&[2, n, n], &mut rng);
    let w2o = random(&[e, 2 * e], &mut rng);
    let swap = |f: usize| (f + d) % e;
    let u_perm = Tensor::from_fn(&[e, p, n], |i| u_st.get(&[swap(i[0]), i[1], i[2]]));
    let w_perm = Tensor::from_fn(&[e, 2 * e], |i| w2o.get(&[swap(i[0]), i[1]]));
    let flip = |t: &Tensor| Tensor::from_fn(t.shape(), |i| t.get(&[1 - i[0], i[1], i[2]]));
    let message = |u: &Tensor, s: &Tensor, t: &Tensor, w: &Tensor| {
        let mut params = Parameters::new();
        params.insert(names::MIX_W_2O, w.clone());
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let z = st_kronecker_layer(
            &tape.constant(u.clone()),
            &tape.constant(s.clone()),
            &tape.constant(t.clone()),
            &bound,
            &cfg,
        )
        .unwrap()
        .value();
        z.sub(&u.rearrange("e p n -> p n e", &[]).unwrap()).unwrap()
    };
    let a = message(&u_st, &ss, &ts, &w2o);
    let b = message(&u_perm, &flip(&ss), &flip(&ts), &w_perm);
    assert!(a.max_abs_diff(&b).unwrap() < 1e-12);
}

#[test]
fn project_input_zero_gate_passes_residual() {
    let cfg = WeaverConfig::desk();
    let mut params = init_parameters(&cfg, 0).unwrap();
    *params.get_mut(names::PROJ_W_U).unwrap() = Tensor::zeros(&[8, 16]);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random(&[4, 6, 1], &mut rng);
    let xi = random(&[4, 6, 2], &mut rng);
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let u = project_input(
        &tape.constant(x.clone()),
        &tape.constant(xi.clone()),
        &bound,
        &cfg,
        &mut ForwardCtx::eval(),
    )
    .unwrap()
    .value();
    let wx = params.get(names::PROJ_W_X).unwrap();
    let cat = Tensor::concat(&[&x, &xi], 2)
        .unwrap()
        .reshape(&[24, 3])
        .unwrap();
    let want = cat
        .matmul(wx)
        .unwrap()
        .reshape(&[4, 6, 8])
        .unwrap()
        .rearrange("p n e -> e p n", &[])
        .unwrap();
    assert!(u.max_abs_diff(&want).unwrap() < 1e-14);
}

#[test]
fn project_input_matches_straight_line_oracle() {
    let cfg = WeaverConfig::desk();
    let params = init_parameters(&cfg, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = random(&[4, 6, 1], &mut rng);
    let xi = random(&[4, 6, 2], &mut rng);
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let got = project_input(
        &tape.constant(x.clone()),
        &tape.constant(xi.clone()),
        &bound,
        &cfg,
        &mut ForwardCtx::eval(),
    )
    .unwrap()
    .value();
    let wx = params.get(names::PROJ_W_X).unwrap();
    let wu = params.get(names::PROJ_W_U).unwrap();
    for p in 0..4 {
        for n in 0..6 {
            let input = [x.get(&[p, n, 0]), xi.get(&[p, n, 0]), xi.get(&[p, n, 1])];
            let u: Vec<f64> = (0..8)
                .map(|e| (0..3).map(|i| input[i] * wx.get(&[i, e])).sum())
                .collect();
            let rms = (u.iter().map(|v| v * v).sum::<f64>() / 8.0 + 1e-8).sqrt();
            let normed: Vec<f64> = u.iter().map(|v| v / rms).collect();
            let h: Vec<f64> = (0..16)
                .map(|o| (0..8).map(|i| normed[i] * wu.get(&[i, o])).sum())
                .collect();
            for e in 0..8 {
                let want = h[e] / (1.0 + (-h[e + 8]).exp()) + u[e];
                assert!((got.get(&[e, p, n]) - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn forecast_head_oracle_and_residual() {
    let cfg = WeaverConfig::desk();
    let params = init_parameters(&cfg, 6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let z = random(&[4, 6, 8], &mut rng);
    let run = |params: &Parameters<f64>| {
        let tape = Tape::new();
        let bound = params.bind(&tape);
        (*forecast_head(
            &tape.constant(z.clone()),
            &bound,
            &cfg,
            &mut ForwardCtx::eval(),
        )
        .unwrap()
        .value())
        .clone()
    };
    let got = run(&params);
    let g = |name: &str| params.get(name).unwrap().clone();
    let (wu, bu, wd, bd, wr, br) = (
        g(names::HEAD_W_UP),
        g(names::HEAD_B_UP),
        g(names::HEAD_W_DN),
        g(names::HEAD_B_DN),
        g(names::HEAD_W_RO),
        g(names::HEAD_B_RO),
    );
    for n in 0..6 {
        let last: Vec<f64> = (0..8).map(|e| z.get(&[3, n, e])).collect();
        let up: Vec<f64> = (0..16)
            .map(|o| {
                let v = bu.get(&[o]) + (0..8).map(|i| last[i] * wu.get(&[i, o])).sum::<f64>();
                if v > 0.0 {
                    v
                } else {
                    0.01 * v
                }
            })
            .collect();
        let z1: Vec<f64> = (0..8)
            .map(|o| bd.get(&[o]) + (0..16).map(|i| up[i] * wd.get(&[i, o])).sum::<f64>() + last[o])
            .collect();
        for q in 0..4 {
            let want = br.get(&[q]) + (0..8).map(|i| z1[i] * wr.get(&[i, q])).sum::<f64>();
            assert!((got.get(&[q, n, 0]) - want).abs() < 1e-12);
        }
    }
}

#[test]
fn mae_loss_examples() {
    let tape = Tape::new();
    let y = Tensor::vector(&[10.0, 20.0]);
    let yh = tape.constant(Tensor::vector(&[12.0, 18.0]));
    assert_eq!(mae_loss(&y, &yh, None).unwrap().value().item(), 2.0);
    assert_eq!(
        mae_loss(&y, &tape.constant(y.clone()), None)
            .unwrap()
            .value()
            .item(),
        0.0
    );
    let yh = tape.constant(Tensor::vector(&[12.0, 120.0]));
    let mask = Tensor::vector(&[1.0, 0.0]);
    assert_eq!(mae_loss(&y, &yh, Some(&mask)).unwrap().value().item(), 2.0);
    assert!(matches!(
        mae_loss(&y, &yh, Some(&Tensor::vector(&[0.0, 0.0]))),
        Err(WeaverError::EmptyInput(_))
    ));
}

#[test]
fn dictionary_weights_on_simplex_in_model() {
    let cfg = WeaverConfig::desk();
    let params = init_parameters(&cfg, 21).unwrap();
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let x = tape.constant(random(&[4, 6, 1], &mut ChaCha8Rng::seed_from_u64(1)));
    let ts = times(4);
    let trace = weaver_trace(&x, Some(&ts), &bound, &cfg, &mut ForwardCtx::eval()).unwrap();
    let w = trace.dict_weights.value();
    for row in w.data().chunks(cfg.dict_landmarks) {
        assert!(row.iter().all(|&v| v >= 0.0));
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    for theta in [trace.theta_s.value(), trace.theta_t.value()] {
        assert!(theta
            .data()
            .iter()
            .all(|&v| (-1.0 / 3.0 - 1e-9..=1.0 + 1e-9).contains(&v)));
    }
}
