//! Basic vs efficient P²-KMV timing harness.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use weaver_core::kron::{FactorChain, P2kmvBasicPlan, PkmvPlan};
use weaver_core::Tensor;

/// Largest |basic − efficient| accepted before a point is timed.
pub const EQUIVALENCE_TOL: f64 = 1e-10;

pub const HEADER: [&str; 11] = [
    "N",
    "P",
    "E",
    "H",
    "d_head",
    "trials",
    "t_basic_ns",
    "t_efficient_ns",
    "speedup",
    "max_abs_diff",
    "max_rel_diff",
];

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub nodes: Vec<usize>,
    pub heads: Vec<usize>,
    pub d_head: Vec<usize>,
    pub history: usize,
    /// batch size folded into the feature mode
    pub batch: usize,
    pub trials: usize,
    pub warmup: usize,
    pub seed: u64,
    /// grid points whose working set exceeds this are skipped
    pub max_bytes: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            nodes: vec![8, 16, 32, 64, 128],
            heads: vec![2, 4, 8],
            d_head: vec![4, 8, 16],
            history: 12,
            batch: 32,
            trials: 10,
            warmup: 2,
            seed: 0,
            max_bytes: 2 << 30,
        }
    }
}

/// One timed grid point. Times are medians over trials; the means are kept
/// next to them.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub n: usize,
    pub p: usize,
    pub e: usize,
    pub h: usize,
    pub d_head: usize,
    pub trials: usize,
    pub t_basic_ns: f64,
    pub t_efficient_ns: f64,
    pub t_basic_mean_ns: f64,
    pub t_efficient_mean_ns: f64,
    pub speedup: f64,
    pub max_abs_diff: f64,
    /// max abs diff over the largest |basic| entry
    pub max_rel_diff: f64,
}

impl BenchRecord {
    pub fn csv_row(&self) -> [String; 11] {
        [
            self.n.to_string(),
            self.p.to_string(),
            self.e.to_string(),
            self.h.to_string(),
            self.d_head.to_string(),
            self.trials.to_string(),
            format!("{:.1}", self.t_basic_ns),
            format!("{:.1}", self.t_efficient_ns),
            format!("{:.4}", self.speedup),
            format!("{:e}", self.max_abs_diff),
            format!("{:e}", self.max_rel_diff),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PointResult {
    Timed(BenchRecord),
    /// working set too large to allocate
    Skipped {
        n: usize,
        h: usize,
        d_head: usize,
        bytes: usize,
    },
    /// failed the equivalence gate, never timed
    NotEquivalent {
        n: usize,
        h: usize,
        d_head: usize,
        max_abs_diff: f64,
    },
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        0.5 * (xs[m - 1] + xs[m])
    }
}

fn time_ns(
    warmup: usize,
    trials: usize,
    mut f: impl FnMut() -> weaver_core::Result<Tensor>,
) -> weaver_core::Result<(f64, f64)> {
    for _ in 0..warmup {
        std::hint::black_box(f()?);
    }
    let mut samples = Vec::with_capacity(trials);
    for _ in 0..trials {
        let start = Instant::now();
        std::hint::black_box(f()?);
        samples.push(start.elapsed().as_nanos() as f64);
    }
    let mean = samples.iter().sum::<f64>() / trials as f64;
    Ok((median(&mut samples), mean))
}

/// Rough peak working set: inputs, two outputs and the gather buffers.
fn working_set(h: usize, p: usize, n: usize, e: usize) -> usize {
    let features = h * p * n * e;
    let factors = h * (p * p + n * n);
    (6 * features + factors) * std::mem::size_of::<f64>()
}

fn can_allocate(bytes: usize, budget: usize) -> bool {
    if bytes > budget {
        return false;
    }
    let mut probe: Vec<u8> = Vec::new();
    probe.try_reserve_exact(bytes).is_ok()
}

pub fn run_point(
    opts: &BenchOptions,
    n: usize,
    h: usize,
    d_head: usize,
    seed: u64,
) -> weaver_core::Result<PointResult> {
    let p = opts.history;
    let e = opts.batch * d_head;
    let bytes = working_set(h, p, n, e);
    if !can_allocate(bytes, opts.max_bytes) {
        return Ok(PointResult::Skipped {
            n,
            h,
            d_head,
            bytes,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = |shape: &[usize]| Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0));
    let theta_t = uniform(&[h, p, p]);
    let theta_s = uniform(&[h, n, n]);
    let v = uniform(&[h, p * n, e]);

    let basic = P2kmvBasicPlan::new(h, p, n, e)?;
    let efficient = PkmvPlan::new(h, &[e, p, n])?;
    let chain = FactorChain::new(vec![theta_t.clone(), theta_s.clone()])?;

    let reference = basic.apply(&theta_t, &theta_s, &v)?;
    let candidate = efficient.apply_columns(&chain, &v)?;
    let max_abs_diff = candidate.max_abs_diff(&reference)?;
    if max_abs_diff.is_nan() || max_abs_diff > EQUIVALENCE_TOL {
        return Ok(PointResult::NotEquivalent {
            n,
            h,
            d_head,
            max_abs_diff,
        });
    }
    let max_rel_diff = max_abs_diff / reference.max_abs().max(f64::MIN_POSITIVE);
    drop((reference, candidate));

    let trials = opts.trials.max(1);
    let (t_basic_ns, t_basic_mean_ns) =
        time_ns(opts.warmup, trials, || basic.apply(&theta_t, &theta_s, &v))?;
    let (t_efficient_ns, t_efficient_mean_ns) =
        time_ns(opts.warmup, trials, || efficient.apply_columns(&chain, &v))?;
    Ok(PointResult::Timed(BenchRecord {
        n,
        p,
        e,
        h,
        d_head,
        trials,
        t_basic_ns,
        t_efficient_ns,
        t_basic_mean_ns,
        t_efficient_mean_ns,
        speedup: t_basic_ns.max(1.0) / t_efficient_ns.max(1.0),
        max_abs_diff,
        max_rel_diff,
    }))
}

/// Runs the full grid in N-major order. Each point draws its inputs from its
/// own stream so diff columns do not depend on which points ran before.
pub fn run_grid(
    opts: &BenchOptions,
    mut on_point: impl FnMut(&PointResult),
) -> weaver_core::Result<Vec<PointResult>> {
    let mut out = Vec::new();
    for (i, &n) in opts.nodes.iter().enumerate() {
        for (j, &h) in opts.heads.iter().enumerate() {
            for (k, &d) in opts.d_head.iter().enumerate() {
                let point_seed = opts.seed ^ ((i as u64) << 40 | (j as u64) << 20 | k as u64);
                let r = run_point(opts, n, h, d, point_seed)?;
                on_point(&r);
                out.push(r);
            }
        }
    }
    Ok(out)
}

pub fn write_csv<W: std::io::Write>(records: &[BenchRecord], out: W) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEADER)?;
    for r in records {
        w.write_record(r.csv_row())?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn oversized_points_are_skipped() {
        let opts = BenchOptions {
            max_bytes: 1024,
            ..BenchOptions::default()
        };
        assert!(matches!(
            run_point(&opts, 8, 2, 4, 0).unwrap(),
            PointResult::Skipped { .. }
        ));
    }
}
