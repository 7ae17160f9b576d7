//! Mode reductions, top-k selection, batched matmul and concatenation.

use super::{strides_of, DenseTensor};
use crate::error::{Result, WeaverError};
use crate::scalar::Scalar;

/// Result of [`DenseTensor::top_k_select`].
#[derive(Debug, Clone)]
pub struct TopK<T: Scalar> {
    pub values: DenseTensor<T>,
    pub scores: DenseTensor<T>,
    /// Source position along the selected mode, laid out like `values`.
    pub indices: Vec<usize>,
}

/// Broadcast of two batch-mode lists where either side may be 1.
pub fn broadcast_shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Result<Vec<usize>> {
    let err = || WeaverError::NotBroadcastable {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    };
    if lhs.len() != rhs.len() {
        return Err(err());
    }
    lhs.iter()
        .zip(rhs)
        .map(|(&a, &b)| match (a, b) {
            _ if a == b => Ok(a),
            (1, _) => Ok(b),
            (_, 1) => Ok(a),
            _ => Err(err()),
        })
        .collect()
}

/// (outer, size, inner) split of a shape around `axis`.
fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<T: Scalar> DenseTensor<T> {
    fn check_axis(&self, op: &'static str, axis: usize) -> Result<()> {
        if axis >= self.rank() {
            return Err(WeaverError::InvalidAxis {
                op,
                axis,
                rank: self.rank(),
            });
        }
        Ok(())
    }

    /// Sums along `axis`, removing it.
    pub fn mode_sum(&self, axis: usize) -> Result<Self> {
        self.check_axis("mode_sum", axis)?;
        let (outer, size, inner) = split_at_axis(self.shape(), axis);
        let mut out = vec![T::zero(); outer * inner];
        let data = self.data();
        for o in 0..outer {
            for s in 0..size {
                let src = &data[(o * size + s) * inner..][..inner];
                for (dst, &v) in out[o * inner..][..inner].iter_mut().zip(src) {
                    *dst += v;
                }
            }
        }
        let mut shape = self.shape().to_vec();
        shape.remove(axis);
        Ok(Self::from_parts_unchecked(shape, out))
    }

    /// Sums along `axis`, keeping it with size 1.
    pub fn mode_sum_keep(&self, axis: usize) -> Result<Self> {
        let mut shape = self.shape().to_vec();
        let summed = self.mode_sum(axis)?;
        shape[axis] = 1;
        summed.reshape(&shape)
    }

    pub fn mode_mean(&self, axis: usize) -> Result<Self> {
        let n = T::from_usize_lossy(self.shape().get(axis).copied().unwrap_or(1));
        Ok(self.mode_sum(axis)?.scale(T::one() / n))
    }

    /// Biased variance along `axis` (divides by the mode size).
    pub fn mode_variance(&self, axis: usize) -> Result<Self> {
        self.check_axis("mode_variance", axis)?;
        let mean = self.mode_mean(axis)?;
        let (outer, size, inner) = split_at_axis(self.shape(), axis);
        let mut out = vec![T::zero(); outer * inner];
        let data = self.data();
        let m = mean.data();
        for o in 0..outer {
            for s in 0..size {
                let src = &data[(o * size + s) * inner..][..inner];
                for i in 0..inner {
                    let d = src[i] - m[o * inner + i];
                    out[o * inner + i] += d * d;
                }
            }
        }
        let n = T::from_usize_lossy(size);
        let mut shape = self.shape().to_vec();
        shape.remove(axis);
        Ok(Self::from_parts_unchecked(
            shape,
            out.into_iter().map(|v| v / n).collect(),
        ))
    }

    /// Selects the `k` highest-scoring slices along `axis` in every fiber,
    /// descending by score. Ties go to the lower original index.
    pub fn top_k_select(&self, scores: &Self, axis: usize, k: usize) -> Result<TopK<T>> {
        if self.shape() != scores.shape() {
            return Err(WeaverError::shape(
                "top_k_select",
                self.shape(),
                scores.shape(),
            ));
        }
        self.check_axis("top_k_select", axis)?;
        let (outer, size, inner) = split_at_axis(self.shape(), axis);
        if k == 0 || k > size {
            return Err(WeaverError::KOutOfRange { k, size });
        }
        let n_out = outer * k * inner;
        let mut values = vec![T::zero(); n_out];
        let mut top = vec![T::zero(); n_out];
        let mut indices = vec![0usize; n_out];
        let mut order: Vec<usize> = Vec::with_capacity(size);
        for o in 0..outer {
            for i in 0..inner {
                let at = |s: usize| (o * size + s) * inner + i;
                order.clear();
                order.extend(0..size);
                // Stable sort keeps lower indices first among equal scores.
                order.sort_by(|&a, &b| {
                    scores.data()[at(b)]
                        .partial_cmp(&scores.data()[at(a)])
                        .unwrap_or(std::cmp::Ordering::Equal)
                });
                for (j, &s) in order.iter().take(k).enumerate() {
                    let dst = (o * k + j) * inner + i;
                    values[dst] = self.data()[at(s)];
                    top[dst] = scores.data()[at(s)];
                    indices[dst] = s;
                }
            }
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = k;
        Ok(TopK {
            values: Self::from_parts_unchecked(shape.clone(), values),
            scores: Self::from_parts_unchecked(shape, top),
            indices,
        })
    }

    /// Flat source positions of the slices chosen by a top-k selection,
    /// suitable for [`gather`](Self::gather).
    pub fn top_k_gather_index(
        shape: &[usize],
        axis: usize,
        k: usize,
        indices: &[usize],
    ) -> Vec<usize> {
        let (outer, _, inner) = split_at_axis(shape, axis);
        let size = shape[axis];
        let mut out = Vec::with_capacity(outer * k * inner);
        for o in 0..outer {
            for j in 0..k {
                for i in 0..inner {
                    let s = indices[(o * k + j) * inner + i];
                    out.push((o * size + s) * inner + i);
                }
            }
        }
        out
    }

    /// Batched matrix product over the last two modes. Leading batch modes
    /// must agree up to size-1 broadcasting. With `transpose_b`, `b` is read
    /// as `[..., K, J]` instead of `[..., J, K]`.
    pub fn batched_matmul(&self, b: &Self, transpose_b: bool) -> Result<Self> {
        let a = self;
        if a.rank() < 2 || b.rank() < 2 {
            return Err(WeaverError::InvalidArgument(format!(
                "batched_matmul needs rank ≥ 2, got {:?} and {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let ra = a.rank();
        let rb = b.rank();
        let (i_dim, j_dim) = (a.shape()[ra - 2], a.shape()[ra - 1]);
        let (jb, k_dim) = if transpose_b {
            (b.shape()[rb - 1], b.shape()[rb - 2])
        } else {
            (b.shape()[rb - 2], b.shape()[rb - 1])
        };
        if j_dim != jb {
            return Err(WeaverError::IncompatibleInner {
                lhs: j_dim,
                rhs: jb,
            });
        }
        let batch_a = &a.shape()[..ra - 2];
        let batch_b = &b.shape()[..rb - 2];
        let batch = broadcast_shape("batched_matmul", batch_a, batch_b)?;
        let n_batch: usize = batch.iter().product();
        let sa = strides_of(batch_a);
        let sb = strides_of(batch_b);

        let mut out = vec![T::zero(); n_batch * i_dim * k_dim];
        let mut bidx = vec![0usize; batch.len()];
        let (ad, bd) = (a.data(), b.data());
        for nb in 0..n_batch {
            let mut oa = 0;
            let mut ob = 0;
            for (ax, &ix) in bidx.iter().enumerate() {
                if batch_a[ax] != 1 {
                    oa += ix * sa[ax];
                }
                if batch_b[ax] != 1 {
                    ob += ix * sb[ax];
                }
            }
            let am = &ad[oa * i_dim * j_dim..][..i_dim * j_dim];
            let bm = &bd[ob * j_dim * k_dim..][..j_dim * k_dim];
            let om = &mut out[nb * i_dim * k_dim..][..i_dim * k_dim];
            if transpose_b {
                for i in 0..i_dim {
                    let arow = &am[i * j_dim..][..j_dim];
                    for k in 0..k_dim {
                        let brow = &bm[k * j_dim..][..j_dim];
                        om[i * k_dim + k] = arow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
                    }
                }
            } else {
                for i in 0..i_dim {
                    let orow = &mut om[i * k_dim..][..k_dim];
                    for j in 0..j_dim {
                        let aij = am[i * j_dim + j];
                        let brow = &bm[j * k_dim..][..k_dim];
                        for (o, &bv) in orow.iter_mut().zip(brow) {
                            *o += aij * bv;
                        }
                    }
                }
            }
            super::increment_index(&mut bidx, &batch);
        }
        let mut shape = batch;
        shape.push(i_dim);
        shape.push(k_dim);
        Ok(Self::from_parts_unchecked(shape, out))
    }

    pub fn matmul(&self, b: &Self) -> Result<Self> {
        self.batched_matmul(b, false)
    }

    /// Concatenates along `axis`; all other modes must match.
    pub fn concat(ts: &[&Self], axis: usize) -> Result<Self> {
        let first = ts.first().ok_or(WeaverError::EmptyInput("concat"))?;
        first.check_axis("concat", axis)?;
        let mut shape = first.shape().to_vec();
        shape[axis] = 0;
        for t in ts {
            let same_rank = t.rank() == first.rank();
            let compatible = same_rank
                && t.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(ax, (a, b))| ax == axis || a == b);
            if !compatible {
                return Err(WeaverError::shape("concat", first.shape(), t.shape()));
            }
            shape[axis] += t.shape()[axis];
        }
        let outer: usize = shape[..axis].iter().product();
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for t in ts {
                let chunk: usize = t.shape()[axis..].iter().product();
                data.extend_from_slice(&t.data()[o * chunk..][..chunk]);
            }
        }
        Ok(Self::from_parts_unchecked(shape, data))
    }

    /// Contiguous slice `start..start+len` along `axis`.
    pub fn slice_axis(&self, axis: usize, start: usize, len: usize) -> Result<Self> {
        self.check_axis("slice_axis", axis)?;
        let index = slice_index(self.shape(), axis, start, len)?;
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        self.gather(&shape, &index)
    }

    /// Expands size-1 modes to `shape`. Ranks must agree.
    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Self> {
        let index = broadcast_index(self.shape(), shape)?;
        self.gather(shape, &index)
    }

    /// Sums broadcast modes back down to `shape`: the adjoint of
    /// [`broadcast_to`](Self::broadcast_to).
    pub fn sum_to_shape(&self, shape: &[usize]) -> Result<Self> {
        if shape == self.shape() {
            return Ok(self.clone());
        }
        let index = broadcast_index(shape, self.shape())?;
        self.scatter_add(shape, &index)
    }
}

pub(crate) fn slice_index(
    shape: &[usize],
    axis: usize,
    start: usize,
    len: usize,
) -> Result<Vec<usize>> {
    let (outer, size, inner) = split_at_axis(shape, axis);
    if len == 0 || start + len > size {
        return Err(WeaverError::InvalidArgument(format!(
            "slice {start}..{} out of range for mode {axis} of {shape:?}",
            start + len
        )));
    }
    let mut index = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * size + start) * inner;
        index.extend(base..base + len * inner);
    }
    Ok(index)
}

pub(crate) fn broadcast_index(from: &[usize], to: &[usize]) -> Result<Vec<usize>> {
    let ok = from.len() == to.len() && from.iter().zip(to).all(|(&f, &t)| f == t || f == 1);
    if !ok {
        return Err(WeaverError::NotBroadcastable {
            op: "broadcast_to",
            lhs: from.to_vec(),
            rhs: to.to_vec(),
        });
    }
    let strides = strides_of(from);
    let eff: Vec<usize> = strides
        .iter()
        .zip(from)
        .map(|(&s, &f)| if f == 1 { 0 } else { s })
        .collect();
    let numel: usize = to.iter().product();
    let mut index = Vec::with_capacity(numel);
    let mut counter = vec![0usize; to.len()];
    let mut offset = 0usize;
    for _ in 0..numel {
        index.push(offset);
        for a in (0..to.len()).rev() {
            counter[a] += 1;
            offset += eff[a];
            if counter[a] < to[a] {
                break;
            }
            offset -= eff[a] * to[a];
            counter[a] = 0;
        }
    }
    Ok(index)
}
