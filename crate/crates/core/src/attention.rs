//! Graph-generating dot-product kernels and sparse normalisers.
//!
//! All pairwise kernels take per-head queries `[H, R, d]` and keys
//! `[H, S, d]` and return `[H, R, S]` affinities.

use rand::Rng;

use crate::error::{Result, WeaverError};
use crate::ops_trait::TensorOps;
use crate::scalar::Scalar;
use crate::tensor::DenseTensor;

pub const DEFAULT_EPS: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct QueryKeyBatch<X> {
    pub q: X,
    pub k: X,
    pub eps: f64,
}

impl<X> QueryKeyBatch<X> {
    pub fn new<T: Scalar>(q: X, k: X, eps: f64) -> Result<Self>
    where
        X: TensorOps<T>,
    {
        let (qs, ks) = (q.dims(), k.dims());
        if qs.len() != 3 || ks.len() != 3 || qs[0] != ks[0] || qs[2] != ks[2] {
            return Err(WeaverError::ShapeMismatch {
                op: "query_key_batch",
                expected: qs,
                got: ks,
            });
        }
        if eps < 0.0 {
            return Err(WeaverError::InvalidArgument(format!(
                "stabilizer {eps} is negative"
            )));
        }
        Ok(Self { q, k, eps })
    }

    fn sizes<T: Scalar>(&self) -> (usize, usize, usize)
    where
        X: TensorOps<T>,
    {
        let (qs, ks) = (self.q.dims(), self.k.dims());
        (qs[0], qs[1], ks[1])
    }
}

/// Squared row norms of `q` and `k`, broadcast to `[H, R, S]`.
fn squared_norms<T: Scalar, X: TensorOps<T>>(qk: &QueryKeyBatch<X>) -> Result<(X, X)> {
    let (h, r, s) = qk.sizes();
    let nq =
        qk.q.mul(&qk.q)?
            .mode_sum_keep(2)?
            .broadcast_to(&[h, r, s])?;
    let nk =
        qk.k.mul(&qk.k)?
            .mode_sum_keep(2)?
            .reshape(&[h, 1, s])?
            .broadcast_to(&[h, r, s])?;
    Ok((nq, nk))
}

/// Continuous Tanimoto coefficient `q·k / (‖q‖² + ‖k‖² − q·k + ε₀)`.
pub fn ctc<T: Scalar, X: TensorOps<T>>(qk: &QueryKeyBatch<X>) -> Result<X> {
    let dot = qk.q.batched_matmul(&qk.k, true)?;
    let (nq, nk) = squared_norms(qk)?;
    let den = nq.add(&nk)?.sub(&dot)?.add_scalar(T::lit(qk.eps));
    dot.div(&den)
}

/// Cosine coefficient `q·k / (‖q‖‖k‖ + ε₀)`.
pub fn cosine<T: Scalar, X: TensorOps<T>>(qk: &QueryKeyBatch<X>) -> Result<X> {
    let dot = qk.q.batched_matmul(&qk.k, true)?;
    let (nq, nk) = squared_norms(qk)?;
    let den = nq.sqrt().mul(&nk.sqrt())?.add_scalar(T::lit(qk.eps));
    dot.div(&den)
}

/// Scaled dot-product logits `QKᵀ/√d` normalised by a row softmax.
pub fn sdpa_softmax<T: Scalar>(qk: &QueryKeyBatch<DenseTensor<T>>) -> Result<DenseTensor<T>> {
    let d = qk.q.shape()[2];
    let logits =
        qk.q.batched_matmul(&qk.k, true)?
            .scale(T::one() / T::from_usize_lossy(d).sqrt());
    Ok(softmax_rows(&logits))
}

/// Max-subtracted softmax over the last mode.
pub fn softmax_rows<T: Scalar>(x: &DenseTensor<T>) -> DenseTensor<T> {
    let width = *x.shape().last().unwrap_or(&1);
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(width) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    DenseTensor::from_vec(x.shape(), out).expect("same shape")
}

/// Threshold γ such that `Σ max(z_i − γ, 0)² = 1`, by the sorted
/// cumulative-moment method. Returns (γ, support size).
pub fn entmax15_threshold<T: Scalar>(z: &[T]) -> (T, usize) {
    let mut sorted = z.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let mut sum = T::zero();
    let mut sum_sq = T::zero();
    let mut support = 0;
    let mut tau_star = T::zero();
    for (i, &v) in sorted.iter().enumerate() {
        let k = T::from_usize_lossy(i + 1);
        sum += v;
        sum_sq += v * v;
        let mean = sum / k;
        let ss = k * (sum_sq / k - mean * mean);
        let delta = ((T::one() - ss) / k).max(T::zero());
        let tau = mean - delta.sqrt();
        if tau <= v {
            support = i + 1;
            tau_star = tau;
        }
    }
    (tau_star, support)
}

/// Entmax-1.5 of `logits / temperature`: `p_i = max(x_i/2 − γ, 0)²`.
pub fn entmax15<T: Scalar>(logits: &[T], temperature: T) -> Result<Vec<T>> {
    if logits.is_empty() {
        return Err(WeaverError::EmptyInput("entmax15"));
    }
    if !(temperature > T::zero()) {
        return Err(WeaverError::InvalidArgument(format!(
            "temperature {temperature} must be positive"
        )));
    }
    let half = T::lit(0.5) / temperature;
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let z: Vec<T> = logits.iter().map(|&x| (x - max) * half).collect();
    let (tau, support) = entmax15_threshold(&z);
    // support made only of tied maxima: uniform, and exact without the
    // rounding of (0 − τ)²
    let top = z.iter().filter(|&&v| v == T::zero()).count();
    if top == support {
        let share = T::one() / T::from_usize_lossy(support);
        return Ok(z
            .iter()
            .map(|&v| if v == T::zero() { share } else { T::zero() })
            .collect());
    }
    Ok(z.iter()
        .map(|&v| {
            let r = (v - tau).max(T::zero());
            r * r
        })
        .collect())
}

/// Row-wise Entmax-1.5 over the last mode at unit temperature.
pub fn entmax15_rows<T: Scalar>(x: &DenseTensor<T>) -> Result<DenseTensor<T>> {
    let width = *x
        .shape()
        .last()
        .ok_or(WeaverError::EmptyInput("entmax15"))?;
    let mut out = Vec::with_capacity(x.numel());
    for row in x.data().chunks(width) {
        out.extend(entmax15(row, T::one())?);
    }
    DenseTensor::from_vec(x.shape(), out)
}

/// Vector-Jacobian product of Entmax-1.5 given its output `y`:
/// with `s = √y`, `g ↦ s⊙g − s (sᵀg)/Σs`.
pub fn entmax15_backward_rows<T: Scalar>(
    y: &DenseTensor<T>,
    g: &DenseTensor<T>,
) -> Result<DenseTensor<T>> {
    if y.shape() != g.shape() {
        return Err(WeaverError::shape(
            "entmax15_backward",
            y.shape(),
            g.shape(),
        ));
    }
    let width = *y
        .shape()
        .last()
        .ok_or(WeaverError::EmptyInput("entmax15"))?;
    let mut out = vec![T::zero(); y.numel()];
    for ((o, yr), gr) in out
        .chunks_mut(width)
        .zip(y.data().chunks(width))
        .zip(g.data().chunks(width))
    {
        let s: Vec<T> = yr.iter().map(|&v| v.sqrt()).collect();
        let sum_s: T = s.iter().copied().sum();
        let sg: T = s.iter().zip(gr).map(|(&a, &b)| a * b).sum();
        for ((o, &si), &gi) in o.iter_mut().zip(&s).zip(gr) {
            *o = si * gi - si * sg / sum_s;
        }
    }
    DenseTensor::from_vec(y.shape(), out)
}

/// Closed-form expected message `(4p − 1)/3 · Σz` when each valence is
/// 1 with probability `p` and −1/3 otherwise.
pub fn expected_valence_message(p: f64, z: &[f64]) -> f64 {
    (4.0 * p - 1.0) / 3.0 * z.iter().sum::<f64>()
}

/// Monte-Carlo estimate of the same expectation: (mean, standard error).
pub fn sample_valence_message(p: f64, z: &[f64], trials: usize, rng: &mut impl Rng) -> (f64, f64) {
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for t in 0..trials {
        let m: f64 = z
            .iter()
            .map(|&zi| if rng.gen::<f64>() < p { zi } else { -zi / 3.0 })
            .sum();
        let delta = m - mean;
        mean += delta / (t + 1) as f64;
        m2 += delta * (m - mean);
    }
    let var = if trials > 1 {
        m2 / (trials - 1) as f64
    } else {
        0.0
    };
    (mean, (var / trials as f64).sqrt())
}
