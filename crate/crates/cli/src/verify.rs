//! Invariant suites behind `weaver verify`.
//!
//! Every property is seeded and self-contained; the acceptance tests call
//! the same functions so the CLI and the test target agree on what passes.

use std::fmt;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use weaver_core::attention::{
    ctc, entmax15, sample_valence_message, softmax_rows, QueryKeyBatch, DEFAULT_EPS,
};
use weaver_core::data::{
    fit_scaler, invert, metrics, split_and_slice, standardize, synth_series, window_starts,
    TrafficSeries,
};
use weaver_core::dictionary::{retrieve_cofactors, PhaseDictionary};
use weaver_core::kron::{
    kron_dense, kron_dense_chain, kron_graph_edges, kron_tumble, ledger_shape, p2kmv_basic,
    wikps_expand, FactorChain, PkmvPlan,
};
use weaver_core::model::{
    init_parameters, names, weaver_forward, weaver_trace, StepTime, WeaverConfig,
};
use weaver_core::nn::ForwardCtx;
use weaver_core::{grad_check, Parameters, Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    All,
    Kron,
    Attention,
    Dictionary,
    Model,
    Data,
}

impl Suite {
    pub fn includes(self, other: Suite) -> bool {
        self == Suite::All || self == other
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Suite::All => "all",
            Suite::Kron => "kron",
            Suite::Attention => "attention",
            Suite::Dictionary => "dictionary",
            Suite::Model => "model",
            Suite::Data => "data",
        };
        f.write_str(s)
    }
}

/// Column-wise `(Θ_1 ⊗ … ⊗ Θ_Δ)` applied to `V [H, Π I, E]`.
pub type EfficientKernel = fn(&FactorChain<Tensor>, &Tensor) -> weaver_core::Result<Tensor>;

pub fn pkmv_columns(factors: &FactorChain<Tensor>, v: &Tensor) -> weaver_core::Result<Tensor> {
    let mut chain = vec![v.shape()[2]];
    chain.extend_from_slice(factors.sizes());
    PkmvPlan::new(v.shape()[0], &chain)?.apply_columns(factors, v)
}

/// Kernels under test. Tests swap in a perturbed one to make sure the suite
/// notices.
#[derive(Clone, Copy)]
pub struct Kernels {
    pub efficient: EfficientKernel,
}

impl Default for Kernels {
    fn default() -> Self {
        Self {
            efficient: pkmv_columns,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub suite: Suite,
    pub name: &'static str,
    pub passed: bool,
    pub cases: usize,
    pub detail: String,
    pub elapsed: Duration,
}

/// Passed flag, case count, detail.
type Check = anyhow::Result<(bool, usize, String)>;

struct Property {
    suite: Suite,
    name: &'static str,
    run: fn(&Kernels, u64) -> Check,
}

const PROPERTIES: &[Property] = &[
    Property {
        suite: Suite::Kron,
        name: "kron.oracle_order2",
        run: kron_oracle_order2,
    },
    Property {
        suite: Suite::Kron,
        name: "kron.oracle_order3",
        run: kron_oracle_order3,
    },
    Property {
        suite: Suite::Kron,
        name: "kron.linearity",
        run: kron_linearity,
    },
    Property {
        suite: Suite::Kron,
        name: "kron.tumble_multiset",
        run: kron_tumble_multiset,
    },
    Property {
        suite: Suite::Kron,
        name: "kron.wikps",
        run: kron_wikps,
    },
    Property {
        suite: Suite::Kron,
        name: "kron.graph_product",
        run: kron_graph_product,
    },
    Property {
        suite: Suite::Attention,
        name: "attention.ctc_range",
        run: ctc_range,
    },
    Property {
        suite: Suite::Attention,
        name: "attention.ctc_critical_values",
        run: ctc_critical_values,
    },
    Property {
        suite: Suite::Attention,
        name: "attention.ctc_stationarity",
        run: ctc_stationarity,
    },
    Property {
        suite: Suite::Attention,
        name: "attention.ctc_hessian",
        run: ctc_hessian,
    },
    Property {
        suite: Suite::Attention,
        name: "attention.valence_dominance",
        run: valence_dominance,
    },
    Property {
        suite: Suite::Attention,
        name: "attention.entmax_oracle",
        run: entmax_oracle,
    },
    Property {
        suite: Suite::Attention,
        name: "attention.entmax_exact_cases",
        run: entmax_exact_cases,
    },
    Property {
        suite: Suite::Attention,
        name: "attention.softmax_jacobian",
        run: softmax_jacobian,
    },
    Property {
        suite: Suite::Dictionary,
        name: "dictionary.convex_hull",
        run: dictionary_convex_hull,
    },
    Property {
        suite: Suite::Dictionary,
        name: "dictionary.grad_check",
        run: dictionary_grad_check,
    },
    Property {
        suite: Suite::Model,
        name: "model.grad_check_time",
        run: model_grad_check_time,
    },
    Property {
        suite: Suite::Model,
        name: "model.grad_check_no_time",
        run: model_grad_check_no_time,
    },
    Property {
        suite: Suite::Model,
        name: "model.valence_range",
        run: model_valence_range,
    },
    Property {
        suite: Suite::Model,
        name: "model.readout_bias",
        run: model_readout_bias,
    },
    Property {
        suite: Suite::Data,
        name: "data.masked_scaler",
        run: data_masked_scaler,
    },
    Property {
        suite: Suite::Data,
        name: "data.roundtrip",
        run: data_roundtrip,
    },
    Property {
        suite: Suite::Data,
        name: "data.metrics_example",
        run: data_metrics_example,
    },
    Property {
        suite: Suite::Data,
        name: "data.split_windows",
        run: data_split_windows,
    },
    Property {
        suite: Suite::Data,
        name: "data.scaler_leakage",
        run: data_scaler_leakage,
    },
];

pub fn property_names(suite: Suite) -> Vec<&'static str> {
    PROPERTIES
        .iter()
        .filter(|p| suite.includes(p.suite))
        .map(|p| p.name)
        .collect()
}

/// Runs one property by name.
pub fn run_property(name: &str, kernels: &Kernels, seed: u64) -> Option<Outcome> {
    PROPERTIES
        .iter()
        .find(|p| p.name == name)
        .map(|p| execute(p, kernels, seed))
}

pub fn run_suite(suite: Suite, kernels: &Kernels, seed: u64) -> Vec<Outcome> {
    PROPERTIES
        .iter()
        .filter(|p| suite.includes(p.suite))
        .map(|p| execute(p, kernels, seed))
        .collect()
}

fn execute(p: &Property, kernels: &Kernels, seed: u64) -> Outcome {
    let start = Instant::now();
    let (passed, cases, detail) = match (p.run)(kernels, seed) {
        Ok(r) => r,
        Err(e) => (false, 0, format!("error: {e:#}")),
    };
    Outcome {
        suite: p.suite,
        name: p.name,
        passed,
        cases,
        detail,
        elapsed: start.elapsed(),
    }
}

pub fn write_csv<W: std::io::Write>(outcomes: &[Outcome], out: W) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "suite",
        "property",
        "status",
        "cases",
        "elapsed_ms",
        "detail",
    ])?;
    for o in outcomes {
        w.write_record([
            o.suite.to_string(),
            o.name.to_string(),
            if o.passed { "pass" } else { "fail" }.to_string(),
            o.cases.to_string(),
            format!("{:.3}", o.elapsed.as_secs_f64() * 1e3),
            o.detail.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn human_line(o: &Outcome) -> String {
    format!(
        "{} {:<32} {:>6} cases {:>9.1} ms  {}",
        if o.passed { "PASS" } else { "FAIL" },
        o.name,
        o.cases,
        o.elapsed.as_secs_f64() * 1e3,
        o.detail
    )
}

fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Dense reference: per head, the explicit Kronecker product times the
/// head's column block.
pub fn dense_columns(factors: &[Tensor], v: &Tensor) -> weaver_core::Result<Tensor> {
    let (h, rows, e) = (v.shape()[0], v.shape()[1], v.shape()[2]);
    let mut out = Vec::with_capacity(v.numel());
    for head in 0..h {
        let mats = factors
            .iter()
            .map(|f| {
                let i = f.shape()[1];
                f.slice_axis(0, head, 1)?.reshape(&[i, i])
            })
            .collect::<weaver_core::Result<Vec<_>>>()?;
        let vh = v.slice_axis(0, head, 1)?.reshape(&[rows, e])?;
        out.extend(kron_dense_chain(&mats)?.matmul(&vh)?.into_data());
    }
    Tensor::from_vec(v.shape(), out)
}

fn kron_oracle_order2(k: &Kernels, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let cases = 100;
    for _ in 0..cases {
        let (h, p, n, e) = (
            rng.gen_range(1..=3),
            rng.gen_range(1..=6),
            rng.gen_range(1..=6),
            rng.gen_range(1..=4),
        );
        let tt = uniform(&[h, p, p], &mut rng);
        let ts = uniform(&[h, n, n], &mut rng);
        let v = uniform(&[h, p * n, e], &mut rng);
        let dense = dense_columns(&[tt.clone(), ts.clone()], &v)?;
        let eff = (k.efficient)(&FactorChain::new(vec![tt.clone(), ts.clone()])?, &v)?;
        let basic = p2kmv_basic(&tt, &ts, &v)?;
        worst = worst
            .max(eff.max_abs_diff(&dense)?)
            .max(basic.max_abs_diff(&dense)?);
    }
    Ok((worst <= 1e-12, cases, format!("max abs diff {worst:.3e}")))
}

fn kron_oracle_order3(k: &Kernels, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x3);
    let mut worst = 0.0f64;
    let cases = 100;
    for _ in 0..cases {
        let h = rng.gen_range(1..=3);
        let sizes: Vec<usize> = (0..3).map(|_| rng.gen_range(1..=3)).collect();
        let e = rng.gen_range(1..=4);
        let factors: Vec<Tensor> = sizes
            .iter()
            .map(|&i| uniform(&[h, i, i], &mut rng))
            .collect();
        let v = uniform(&[h, sizes.iter().product(), e], &mut rng);
        let eff = (k.efficient)(&FactorChain::new(factors.clone())?, &v)?;
        worst = worst.max(eff.max_abs_diff(&dense_columns(&factors, &v)?)?);
    }
    Ok((worst <= 1e-12, cases, format!("max abs diff {worst:.3e}")))
}

fn kron_linearity(k: &Kernels, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x11);
    let mut worst = 0.0f64;
    let cases = 50;
    let apply = |t: &Tensor, s: &Tensor, v: &Tensor| {
        (k.efficient)(&FactorChain::new(vec![t.clone(), s.clone()])?, v)
    };
    for _ in 0..cases {
        let (h, p, n, e) = (
            rng.gen_range(1..=3),
            rng.gen_range(1..=5),
            rng.gen_range(1..=5),
            rng.gen_range(1..=3),
        );
        let (a, b) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let t1 = uniform(&[h, p, p], &mut rng);
        let t2 = uniform(&[h, p, p], &mut rng);
        let s1 = uniform(&[h, n, n], &mut rng);
        let s2 = uniform(&[h, n, n], &mut rng);
        let v = uniform(&[h, p * n, e], &mut rng);
        let w = uniform(&[h, p * n, e], &mut rng);
        let lin = |x: &Tensor, y: &Tensor| x.scale(a).add(&y.scale(b));

        let lhs = apply(&t1, &s1, &lin(&v, &w)?)?;
        let rhs = lin(&apply(&t1, &s1, &v)?, &apply(&t1, &s1, &w)?)?;
        worst = worst.max(lhs.max_abs_diff(&rhs)?);
        let lhs = apply(&lin(&t1, &t2)?, &s1, &v)?;
        let rhs = lin(&apply(&t1, &s1, &v)?, &apply(&t2, &s1, &v)?)?;
        worst = worst.max(lhs.max_abs_diff(&rhs)?);
        let lhs = apply(&t1, &lin(&s1, &s2)?, &v)?;
        let rhs = lin(&apply(&t1, &s1, &v)?, &apply(&t1, &s2, &v)?)?;
        worst = worst.max(lhs.max_abs_diff(&rhs)?);
    }
    Ok((
        worst <= 1e-12,
        cases,
        format!("max superposition residual {worst:.3e}"),
    ))
}

fn kron_tumble_multiset(_: &Kernels, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7);
    let cases = 50;
    for _ in 0..cases {
        let order = rng.gen_range(2..=4);
        let chain: Vec<usize> = (0..order).map(|_| rng.gen_range(1..=3)).collect();
        let h = rng.gen_range(1..=2);
        let total: usize = chain.iter().product();
        let v = Tensor::from_fn(&[h, total / chain[0], chain[0]], |_| rng.gen::<f64>());
        let mut expect = v.data().to_vec();
        expect.sort_by(f64::total_cmp);
        let mut u = PkmvPlan::new(h, &chain)?.fold(&v)?;
        while u.depth() > 0 {
            u = kron_tumble(&u)?;
            let mut got = u.value().data().to_vec();
            got.sort_by(f64::total_cmp);
            if got != expect || u.value().shape()[1..] != ledger_shape(&chain, u.depth())? {
                return Ok((
                    false,
                    cases,
                    format!("chain {chain:?} lost scalars at depth {}", u.depth()),
                ));
            }
        }
    }
    Ok((
        true,
        cases,
        "all depths preserve the scalar multiset".into(),
    ))
}

fn kron_wikps(k: &Kernels, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5);
    let (p, n, d) = (4, 6, 4);
    let mut worst = 0.0f64;
    for heads in [1, 2, 4] {
        let tt = uniform(&[heads, p, p], &mut rng);
        let ts = uniform(&[heads, n, n], &mut rng);
        let v = uniform(&[heads, p * n, d], &mut rng);
        let w: Vec<Tensor> = (0..heads)
            .map(|_| uniform(&[d, heads * d], &mut rng))
            .collect();
        let y = (k.efficient)(&FactorChain::new(vec![tt.clone(), ts.clone()])?, &v)?;
        let mut explicit = Tensor::zeros(&[p * n, heads * d]);
        for (h, wh) in w.iter().enumerate() {
            let th = tt.slice_axis(0, h, 1)?.reshape(&[p, p])?;
            let sh = ts.slice_axis(0, h, 1)?.reshape(&[n, n])?;
            let vh = v.slice_axis(0, h, 1)?.reshape(&[p * n, d])?;
            explicit = explicit.add(&kron_dense(&th, &sh)?.matmul(&vh)?.matmul(wh)?)?;
        }
        let mixed = y
            .rearrange("h r e -> r (h e)", &[])?
            .matmul(&wikps_expand(&w)?)?;
        worst = worst.max(mixed.max_abs_diff(&explicit)?);
    }
    Ok((
        worst <= 1e-12,
        3,
        format!("H in {{1,2,4}}: max abs diff {worst:.3e}"),
    ))
}

fn kron_graph_product(_: &Kernels, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x13);
    let cases = 200;
    for case in 0..cases {
        let (p, n) = (rng.gen_range(1..=6), rng.gen_range(1..=6));
        let density = rng.gen_range(0.1..0.9);
        let a_t = Tensor::from_fn(&[p, p], |_| if rng.gen_bool(density) { 1.0 } else { 0.0 });
        let a_s = Tensor::from_fn(&[n, n], |_| if rng.gen_bool(density) { 1.0 } else { 0.0 });
        let pattern = kron_dense(&a_t, &a_s)?.map(|x| if x != 0.0 { 1.0 } else { 0.0 });
        if kron_graph_edges(&a_t, &a_s)?.adjacency::<f64>() != pattern {
            return Ok((
                false,
                cases,
                format!("pair {case} ({p}x{p}, {n}x{n}) differs"),
            ));
        }
    }
    Ok((true, cases, "edge sets identical".into()))
}

fn ctc_single(q: &[f64], k: &[f64], eps: f64) -> weaver_core::Result<f64> {
    let d = q.len();
    let qk = QueryKeyBatch::new(
        Tensor::from_vec(&[1, 1, d], q.to_vec())?,
        Tensor::from_vec(&[1, 1, d], k.to_vec())?,
        eps,
    )?;
    Ok(ctc(&qk)?.item())
}

fn ctc_range(_: &Kernels, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x17);
    let (lo, hi) = (-1.0 / 3.0 - 1e-9, 1.0 + 1e-9);
    let mut pairs = 0;
    let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..100 {
        let d = rng.gen_range(1..=16);
        let spread = 10f64.powf(rng.gen_range(-2.0..2.0));
        let q = Tensor::from_fn(&[1, 100, d], |_| rng.gen_range(-spread..spread));
        let k = Tensor::from_fn(&[1, 1, d], |_| rng.gen_range(-spread..spread));
        let theta = ctc(&QueryKeyBatch::new(q, k, DEFAULT_EPS)?)?;
        for &t in theta.data() {
            min = min.min(t);
            max = max.max(t);
        }
        pairs += theta.numel();
    }
    Ok((
        lo <= min && max <= hi,
        pairs,
        format!("observed range [{min:.6}, {max:.6}]"),
    ))
}

fn ctc_critical_values(_: &Kernels, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x19);
    let mut worst = 0.0f64;
    let cases = 100;
    for _ in 0..cases {
        let d = rng.gen_range(1..=16);
        let k: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
        if k.iter().all(|&x| x == 0.0) {
            continue;
        }
        let neg: Vec<f64> = k.iter().map(|x| -x).collect();
        worst = worst
            .max((ctc_single(&k, &k, 0.0)? - 1.0).abs())
            .max((ctc_single(&neg, &k, 0.0)? + 1.0 / 3.0).abs());
    }
    Ok((
        worst <= 1e-12,
        cases,
        format!("max deviation from 1 and -1/3: {worst:.3e}"),
    ))
}

fn numeric_gradient(q: &[f64], k: &[f64], h: f64) -> weaver_core::Result<Vec<f64>> {
    let mut g = vec![0.0; q.len()];
    let mut probe = q.to_vec();
    for i in 0..q.len() {
        probe[i] = q[i] + h;
        let up = ctc_single(&probe, k, 0.0)?;
        probe[i] = q[i] - h;
        let down = ctc_single(&probe, k, 0.0)?;
        probe[i] = q[i];
        g[i] = (up - down) / (2.0 * h);
    }
    Ok(g)
}

fn numeric_hessian(q: &[f64], k: &[f64], h: f64) -> weaver_core::Result<DMatrix<f64>> {
    let d = q.len();
    let mut hess = DMatrix::zeros(d, d);
    for i in 0..d {
        let mut up = q.to_vec();
        up[i] += h;
        let mut down = q.to_vec();
        down[i] -= h;
        let (gu, gd) = (numeric_gradient(&up, k, h)?, numeric_gradient(&down, k, h)?);
        for j in 0..d {
            hess[(i, j)] = (gu[j] - gd[j]) / (2.0 * h);
        }
    }
    Ok((&hess + hess.transpose()) * 0.5)
}

/// Random keys with norm in [0.5, 2] so finite differences stay well scaled.
fn random_key(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-3);
    let target = rng.gen_range(0.5..2.0);
    raw.iter().map(|x| x / norm * target).collect()
}

fn ctc_stationarity(_: &Kernels, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x23);
    let mut worst = 0.0f64;
    let cases = 50;
    for _ in 0..cases {
        let k = random_key(rng.gen_range(1..=8), &mut rng);
        let neg: Vec<f64> = k.iter().map(|x| -x).collect();
        for q in [&k, &neg] {
            let g = numeric_gradient(q, &k, 1e-5)?;
            worst = worst.max(g.iter().fold(0.0f64, |m, x| m.max(x.abs())));
        }
    }
    Ok((
        worst <= 1e-6,
        cases,
        format!("max |grad| at q = ±k: {worst:.3e}"),
    ))
}

fn ctc_hessian(_: &Kernels, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x29);
    let cases = 30;
    let (mut max_at_k, mut min_at_neg) = (f64::NEG_INFINITY, f64::INFINITY);
    for _ in 0..cases {
        let k = random_key(rng.gen_range(1..=8), &mut rng);
        let neg: Vec<f64> = k.iter().map(|x| -x).collect();
        let at_k = SymmetricEigen::new(numeric_hessian(&k, &k, 1e-4)?).eigenvalues;
        let at_neg = SymmetricEigen::new(numeric_hessian(&neg, &k, 1e-4)?).eigenvalues;
        max_at_k = max_at_k.max(at_k.max());
        min_at_neg = min_at_neg.min(at_neg.min());
    }
    Ok((
        max_at_k < 0.0 && min_at_neg > 0.0,
        cases,
        format!("largest eigenvalue at q=k {max_at_k:.3e}, smallest at q=-k {min_at_neg:.3e}"),
    ))
}

fn valence_dominance(_: &Kernels, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x31);
    let z = vec![1.0; 16];
    let trials = 40_000;
    let mut ok = true;
    let mut parts = Vec::new();
    for p in [0.2, 0.25, 0.5] {
        let expected = weaver_core::attention::expected_valence_message(p, &z);
        let (mean, se) = sample_valence_message(p, &z, trials, &mut rng);
        ok &= (mean - expected).abs() <= 3.0 * se;
        parts.push(format!("p={p}: {mean:.4}±{se:.4} vs {expected:.4}"));
    }
    // sign flip around p = 1/4
    let (below, _) = sample_valence_message(0.2, &z, trials, &mut rng);
    let (above, _) = sample_valence_message(0.3, &z, trials, &mut rng);
    ok &= below < 0.0 && above > 0.0;
    Ok((ok, 3 * trials, parts.join("; ")))
}

/// Threshold by bisection: `Σ max(x_i/2 − γ, 0)² = 1`.
pub fn entmax_bisect(x: &[f64]) -> Vec<f64> {
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

fn entmax_oracle(_: &Kernels, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x37);
    let cases = 1000;
    let (mut worst, mut simplex) = (0.0f64, 0.0f64);
    let mut ordered = true;
    for _ in 0..cases {
        let d = rng.gen_range(1..=32);
        let scale = rng.gen_range(0.1..10.0);
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-scale..scale)).collect();
        let p = entmax15(&x, 1.0)?;
        for (a, b) in p.iter().zip(entmax_bisect(&x)) {
            worst = worst.max((a - b).abs());
        }
        simplex = simplex.max((p.iter().sum::<f64>() - 1.0).abs());
        ordered &= p.iter().all(|&v| v >= 0.0);
        for i in 0..d {
            for j in 0..d {
                ordered &= !(x[i] > x[j] && p[i] < p[j]);
            }
        }
    }
    Ok((
        worst <= 1e-8 && simplex <= 1e-12 && ordered,
        cases,
        format!("oracle diff {worst:.3e}, simplex residual {simplex:.3e}, order kept {ordered}"),
    ))
}

fn entmax_exact_cases(_: &Kernels, _: u64) -> Check {
    let mut ok = true;
    for d in 1..=32 {
        let p = entmax15(&vec![0.3; d], 1.0)?;
        ok &= p.iter().all(|&v| v == 1.0 / d as f64);
    }
    let p = entmax15(&[2.0, 2.0, -5.0], 1.0)?;
    ok &= p[0] == 0.5 && p[1] == 0.5 && p[2] == 0.0;
    let p = entmax15(&[1.0, 3.0, 3.0, 1.0], 1.0)?;
    ok &= p[0] == p[3] && p[1] == p[2];
    Ok((ok, 34, "uniform and symmetric ties".into()))
}

fn softmax_jacobian(_: &Kernels, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x41);
    let cases = 50;
    let (mut worst, mut rows) = (0.0f64, 0.0f64);
    let h = 1e-6;
    for _ in 0..cases {
        let d = rng.gen_range(1..=8);
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let sm = |v: &[f64]| softmax_rows(&Tensor::from_rows(&[v.to_vec()])).into_data();
        let a = sm(&x);
        rows = rows.max((a.iter().sum::<f64>() - 1.0).abs());
        for i in 0..d {
            let mut up = x.clone();
            up[i] += h;
            let mut down = x.clone();
            down[i] -= h;
            let (fu, fd) = (sm(&up), sm(&down));
            for s in 0..d {
                let delta = if s == i { 1.0 } else { 0.0 };
                worst = worst.max(((fu[s] - fd[s]) / (2.0 * h) - a[s] * (delta - a[i])).abs());
            }
        }
    }
    Ok((
        worst <= 1e-8 && rows <= 1e-12,
        cases,
        format!("jacobian residual {worst:.3e}, row-sum residual {rows:.3e}"),
    ))
}

fn dictionary_params(cfg: &WeaverConfig, seed: u64) -> anyhow::Result<Parameters<f64>> {
    let all = init_parameters(cfg, seed)?;
    let mut p = Parameters::new();
    for name in [
        names::DICT_W,
        names::DICT_B,
        names::DICT_TAU,
        names::DICT_LANDMARKS,
    ] {
        p.insert(name, all.get(name)?.clone());
    }
    Ok(p)
}

fn dictionary_convex_hull(_: &Kernels, seed: u64) -> Check {
    let cfg = WeaverConfig::desk();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x43);
    let cases = 20;
    let (mut simplex, mut recon) = (0.0f64, 0.0f64);
    let mut nonneg = true;
    for case in 0..cases {
        let params = dictionary_params(&cfg, seed.wrapping_add(case))?;
        let x = Tensor::from_fn(&[cfg.history, cfg.nodes, cfg.channels], |_| {
            rng.gen_range(-3.0..3.0)
        });
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let d = PhaseDictionary::bind(&bound, cfg.dropout)?;
        let out = retrieve_cofactors(&tape.constant(x), &d, &mut ForwardCtx::eval())?;
        let w = out.weights.value();
        nonneg &= w.data().iter().all(|&v| v >= 0.0);
        for row in w.data().chunks(d.landmark_count()) {
            simplex = simplex.max((row.iter().sum::<f64>() - 1.0).abs());
        }
        // Ξ[p, n, k] = Σ_m w[n, m] C[m, p K + k]
        let lm = params.get(names::DICT_LANDMARKS)?;
        let xi = out.xi.value();
        let kk = cfg.dict_width;
        for p in 0..cfg.history {
            for n in 0..cfg.nodes {
                for k in 0..kk {
                    let want: f64 = (0..d.landmark_count())
                        .map(|m| w.get(&[n, m]) * lm.get(&[m, p * kk + k]))
                        .sum();
                    recon = recon.max((xi.get(&[p, n, k]) - want).abs());
                }
            }
        }
    }
    Ok((
        nonneg && simplex <= 1e-12 && recon <= 1e-12,
        cases as usize,
        format!("simplex residual {simplex:.3e}, reconstruction residual {recon:.3e}"),
    ))
}

fn dictionary_grad_check(_: &Kernels, seed: u64) -> Check {
    let cfg = WeaverConfig::desk();
    let params = dictionary_params(&cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x47);
    let x = Tensor::from_fn(&[cfg.history, cfg.nodes, cfg.channels], |_| {
        rng.gen_range(-2.0..2.0)
    });
    let r = Tensor::from_fn(&[cfg.history, cfg.nodes, cfg.dict_width], |_| {
        rng.gen_range(-1.0..1.0)
    });
    let check = grad_check(&params, 1e-5, |tape, bound| {
        let d = PhaseDictionary::bind(bound, cfg.dropout)?;
        let out = retrieve_cofactors(&tape.constant(x.clone()), &d, &mut ForwardCtx::eval())?;
        Ok(out.xi.mul(&tape.constant(r.clone()))?.sum_all())
    })?;
    let (name, err) = check
        .worst()
        .map(|(n, e)| (n.to_string(), e))
        .unwrap_or_default();
    Ok((
        check.passes(1e-4),
        check.relative_errors.len(),
        format!("worst relative error {err:.3e} ({name})"),
    ))
}

pub fn desk_times(p: usize) -> Vec<StepTime> {
    (0..p)
        .map(|i| StepTime {
            minute_of_day: (475 + 5 * i as u32) % 1440,
            day_of_week: 2,
        })
        .collect()
}

/// Full-model gradient check at desk scale; returns the check and the
/// number of parameter tensors.
pub fn model_grad_check(use_time: bool, seed: u64) -> anyhow::Result<weaver_core::GradCheck> {
    let mut cfg = WeaverConfig::desk();
    cfg.use_time = use_time;
    let params = init_parameters(&cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x53);
    let x = uniform(&[cfg.history, cfg.nodes, cfg.channels], &mut rng);
    let r = uniform(&[cfg.horizon, cfg.nodes, cfg.channels], &mut rng);
    let ts = desk_times(cfg.history);
    Ok(grad_check(&params, 1e-5, |tape, bound| {
        let y = weaver_forward(
            &tape.constant(x.clone()),
            Some(&ts),
            bound,
            &cfg,
            &mut ForwardCtx::eval(),
        )?;
        Ok(y.mul(&tape.constant(r.clone()))?.sum_all())
    })?)
}

fn grad_check_outcome(use_time: bool, seed: u64) -> Check {
    let check = model_grad_check(use_time, seed)?;
    let (name, err) = check
        .worst()
        .map(|(n, e)| (n.to_string(), e))
        .unwrap_or_default();
    Ok((
        check.passes(1e-4),
        check.relative_errors.len(),
        format!("worst relative error {err:.3e} ({name})"),
    ))
}

fn model_grad_check_time(_: &Kernels, seed: u64) -> Check {
    grad_check_outcome(true, seed)
}

fn model_grad_check_no_time(_: &Kernels, seed: u64) -> Check {
    grad_check_outcome(false, seed)
}

fn model_valence_range(_: &Kernels, seed: u64) -> Check {
    let cfg = WeaverConfig::desk();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x59);
    let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
    let cases = 20;
    for case in 0..cases {
        let params = init_parameters(&cfg, seed.wrapping_add(case))?;
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let x = Tensor::from_fn(&[cfg.history, cfg.nodes, cfg.channels], |_| {
            rng.gen_range(-5.0..5.0)
        });
        let t = weaver_trace(
            &tape.constant(x),
            Some(&desk_times(cfg.history)),
            &bound,
            &cfg,
            &mut ForwardCtx::eval(),
        )?;
        for theta in [t.theta_s.value(), t.theta_t.value()] {
            for &v in theta.data() {
                min = min.min(v);
                max = max.max(v);
            }
        }
    }
    Ok((
        min >= -1.0 / 3.0 - 1e-9 && max <= 1.0 + 1e-9,
        cases as usize,
        format!("attention range [{min:.6}, {max:.6}]"),
    ))
}

fn model_readout_bias(_: &Kernels, seed: u64) -> Check {
    let cfg = WeaverConfig::desk();
    let mut params = init_parameters(&cfg, seed)?;
    let bias = Tensor::from_fn(&[cfg.horizon * cfg.channels], |i| i[0] as f64 - 1.5);
    if let Some(w) = params.get_mut(names::HEAD_W_RO) {
        *w = Tensor::zeros(&[cfg.embed, cfg.horizon * cfg.channels]);
    }
    if let Some(b) = params.get_mut(names::HEAD_B_RO) {
        *b = bias.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x61);
    let x = uniform(&[cfg.history, cfg.nodes, cfg.channels], &mut rng);
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let y = weaver_forward(
        &tape.constant(x),
        Some(&desk_times(cfg.history)),
        &bound,
        &cfg,
        &mut ForwardCtx::eval(),
    )?;
    let y = y.value();
    let mut ok = true;
    for q in 0..cfg.horizon {
        for n in 0..cfg.nodes {
            for c in 0..cfg.channels {
                ok &= y.get(&[q, n, c]) == bias.get(&[q * cfg.channels + c]);
            }
        }
    }
    Ok((ok, 1, "zero readout weights leave the readout bias".into()))
}

fn one_node_series(values: Vec<f64>, mask: Vec<f64>) -> anyhow::Result<TrafficSeries> {
    let s = values.len();
    let t0 = chrono_start();
    Ok(TrafficSeries::new(
        Tensor::from_vec(&[s, 1, 1], values)?,
        Tensor::from_vec(&[s, 1, 1], mask)?,
        (0..s)
            .map(|i| t0 + chrono::Duration::minutes(5 * i as i64))
            .collect(),
        5,
        vec!["node_0".into()],
        vec!["value".into()],
    )?)
}

fn chrono_start() -> chrono::NaiveDateTime {
    chrono::NaiveDate::from_ymd_opt(2024, 1, 1)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .expect("valid date")
}

fn data_masked_scaler(_: &Kernels, _: u64) -> Check {
    let s = one_node_series(vec![1.0, 2.0, 3.0], vec![1.0, 0.0, 1.0])?;
    let st = fit_scaler(&s)?;
    let z = standardize(&s.values, &s.mask, &st)?;
    let ok = st.mean == [2.0] && st.std == [1.0] && z.get(&[1, 0, 0]) == 0.0;
    Ok((ok, 1, format!("mean {:?}, std {:?}", st.mean, st.std)))
}

fn data_roundtrip(_: &Kernels, seed: u64) -> Check {
    let s = synth_series(4, 2, seed)?;
    let st = fit_scaler(&s)?;
    let back = invert(
        &standardize(&s.values, &Tensor::ones(s.values.shape()), &st)?,
        &st,
    )?;
    let worst = back.max_abs_diff(&s.values)?;
    Ok((
        worst <= 1e-6,
        s.values.numel(),
        format!("max round-trip error {worst:.3e}"),
    ))
}

fn data_metrics_example(_: &Kernels, _: u64) -> Check {
    let y = Tensor::from_vec(&[1, 2, 1], vec![10.0, 20.0])?;
    let yh = Tensor::from_vec(&[1, 2, 1], vec![12.0, 18.0])?;
    let m = metrics(&y, &yh, None)?.all;
    let ok = (m.mae - 2.0).abs() <= 1e-12
        && (m.rmse - 2.0).abs() <= 1e-12
        && (m.mape - 15.0).abs() <= 1e-12;
    Ok((
        ok,
        1,
        format!("MAE {} RMSE {} MAPE {}%", m.mae, m.rmse, m.mape),
    ))
}

fn data_split_windows(_: &Kernels, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x67);
    let cases = 50;
    for _ in 0..cases {
        let steps = rng.gen_range(60..400);
        let (p, q) = (rng.gen_range(1..=6), rng.gen_range(1..=6));
        let ratios = [
            rng.gen_range(5..10),
            rng.gen_range(1..4),
            rng.gen_range(1..4),
        ];
        let s = one_node_series(vec![1.0; steps], vec![1.0; steps])?;
        let sliced = match split_and_slice(&s, p, q, ratios) {
            Ok(sl) => sl,
            Err(_) => continue,
        };
        let sum: usize = ratios.iter().sum();
        let train = steps * ratios[0] / sum;
        let val = steps * ratios[1] / sum;
        let sizes = [train, val, steps - train - val];
        for (split, size) in [&sliced.train, &sliced.val, &sliced.test]
            .into_iter()
            .zip(sizes)
        {
            let want = size + 1 - (p + q);
            if split.range.len() != size || split.starts.len() != want {
                return Ok((
                    false,
                    cases,
                    format!("S={steps} P={p} Q={q} ratios {ratios:?}: {:?}", split.kind),
                ));
            }
            if split
                .starts
                .iter()
                .any(|&st| st < split.range.start || st + p + q > split.range.end)
            {
                return Ok((false, cases, format!("window leaves {:?}", split.kind)));
            }
        }
        if window_starts(0..steps, p, q)?.len() != steps - p - q + 1 {
            return Ok((false, cases, "window count".into()));
        }
    }
    Ok((
        true,
        cases,
        "sizes floor(S r / sum r), L-P-Q+1 windows per split".into(),
    ))
}

fn data_scaler_leakage(_: &Kernels, seed: u64) -> Check {
    let s = synth_series(3, 2, seed)?;
    let sliced = split_and_slice(&s, 4, 4, [70, 10, 20])?;
    let before = fit_scaler(&s.slice(sliced.train.range.clone())?)?;
    let mut mutated = s.clone();
    let cut = sliced.val.range.start;
    mutated.values = Tensor::from_fn(s.values.shape(), |i| {
        let v = s.values.get(i);
        if i[0] >= cut {
            v * 7.0 + 100.0
        } else {
            v
        }
    });
    let after = fit_scaler(&mutated.slice(sliced.train.range.clone())?)?;
    Ok((
        before == after,
        1,
        "training statistics unchanged by later splits".into(),
    ))
}
