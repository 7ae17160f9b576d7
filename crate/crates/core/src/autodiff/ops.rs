//! Differentiable primitives on [`Var`].

use std::rc::Rc;

use rand::Rng;

use super::Var;
use crate::attention::{entmax15_backward_rows, entmax15_rows, softmax_rows};
use crate::error::{Result, WeaverError};
use crate::scalar::Scalar;
use crate::tensor::{DenseTensor, IndexMap, Rearrangement};

impl<'t, T: Scalar> Var<'t, T> {
    fn unary(
        &self,
        op: &'static str,
        f: impl Fn(T) -> T,
        // derivative from (input, output)
        df: impl Fn(T, T) -> T + 'static,
    ) -> Var<'t, T> {
        let x = self.value();
        let y = x.map(f);
        let yv = Rc::new(y.clone());
        self.record(
            y,
            &[*self],
            op,
            Box::new(move |g| {
                let d: Vec<T> = g
                    .data()
                    .iter()
                    .zip(x.data().iter().zip(yv.data()))
                    .map(|(&g, (&x, &y))| g * df(x, y))
                    .collect();
                Ok(vec![DenseTensor::from_vec(g.shape(), d)?])
            }),
        )
    }

    pub fn exp(&self) -> Self {
        self.unary("exp", T::exp, |_, y| y)
    }

    pub fn log(&self) -> Self {
        self.unary("log", T::ln, |x, _| T::one() / x)
    }

    pub fn sigmoid(&self) -> Self {
        self.unary("sigmoid", sigmoid, |_, y| y * (T::one() - y))
    }

    pub fn relu(&self) -> Self {
        self.unary(
            "relu",
            |x| x.max(T::zero()),
            |x, _| {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    pub fn leaky_relu(&self, slope: T) -> Self {
        self.unary(
            "leaky_relu",
            move |x| if x > T::zero() { x } else { slope * x },
            move |x, _| if x > T::zero() { T::one() } else { slope },
        )
    }

    pub fn softplus(&self) -> Self {
        self.unary("softplus", softplus, |x, _| sigmoid(x))
    }

    pub fn sqrt(&self) -> Self {
        self.unary("sqrt", T::sqrt, |_, y| T::lit(0.5) / y)
    }

    pub fn abs(&self) -> Self {
        self.unary("abs", T::abs, |x, _| {
            if x > T::zero() {
                T::one()
            } else if x < T::zero() {
                -T::one()
            } else {
                T::zero()
            }
        })
    }

    pub fn square(&self) -> Self {
        self.unary("square", |x| x * x, |x, _| x + x)
    }

    pub fn neg(&self) -> Self {
        self.scale(-T::one())
    }

    pub fn scale(&self, c: T) -> Self {
        self.record(
            self.value().scale(c),
            &[*self],
            "scale",
            Box::new(move |g| Ok(vec![g.scale(c)])),
        )
    }

    pub fn add_scalar(&self, c: T) -> Self {
        self.record(
            self.value().add_scalar(c),
            &[*self],
            "add_scalar",
            Box::new(|g| Ok(vec![g.clone()])),
        )
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        let y = self.value().add(&other.value())?;
        Ok(self.record(
            y,
            &[*self, *other],
            "add",
            Box::new(|g| Ok(vec![g.clone(), g.clone()])),
        ))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        let y = self.value().sub(&other.value())?;
        Ok(self.record(
            y,
            &[*self, *other],
            "sub",
            Box::new(|g| Ok(vec![g.clone(), g.scale(-T::one())])),
        ))
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        let (a, b) = (self.value(), other.value());
        let y = a.mul(&b)?;
        Ok(self.record(
            y,
            &[*self, *other],
            "mul",
            Box::new(move |g| Ok(vec![g.mul(&b)?, g.mul(&a)?])),
        ))
    }

    pub fn div(&self, other: &Self) -> Result<Self> {
        let (a, b) = (self.value(), other.value());
        let y = a.div(&b)?;
        Ok(self.record(
            y,
            &[*self, *other],
            "div",
            Box::new(move |g| {
                let ga = g.div(&b)?;
                let gb = g
                    .zip_map(&a, "div", |g, a| g * a)?
                    .zip_map(&b, "div", |ga, b| -ga / (b * b))?;
                Ok(vec![ga, gb])
            }),
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let x = self.value();
        let y = x.reshape(shape)?;
        let in_shape = x.shape().to_vec();
        Ok(self.record(
            y,
            &[*self],
            "reshape",
            Box::new(move |g| Ok(vec![g.reshape(&in_shape)?])),
        ))
    }

    /// `out.data[i] = self.data[index[i]]`; the adjoint scatters back.
    pub fn gather(&self, shape: &[usize], index: IndexMap) -> Result<Self> {
        let x = self.value();
        let y = x.gather(shape, &index)?;
        let in_shape = x.shape().to_vec();
        Ok(self.record(
            y,
            &[*self],
            "gather",
            Box::new(move |g| Ok(vec![g.scatter_add(&in_shape, &index)?])),
        ))
    }

    pub fn rearrange(&self, pattern: &str, sizes: &[(&str, usize)]) -> Result<Self> {
        let plan = Rearrangement::parse(pattern)?.plan(&self.shape(), sizes)?;
        self.gather(&plan.output_shape, plan.index)
    }

    pub fn permute(&self, axes: &[usize]) -> Result<Self> {
        let plan = crate::tensor::rearrange_permute_plan(&self.shape(), axes)?;
        self.gather(&plan.output_shape, plan.index)
    }

    pub fn transpose_last2(&self) -> Result<Self> {
        let r = self.shape().len();
        if r < 2 {
            return Err(WeaverError::InvalidAxis {
                op: "transpose_last2",
                axis: 1,
                rank: r,
            });
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(&axes)
    }

    pub fn slice_axis(&self, axis: usize, start: usize, len: usize) -> Result<Self> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(WeaverError::InvalidAxis {
                op: "slice_axis",
                axis,
                rank: shape.len(),
            });
        }
        let index = crate::tensor::slice_gather_index(&shape, axis, start, len)?;
        let mut out = shape;
        out[axis] = len;
        self.gather(&out, index.into())
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Self> {
        let x = self.value();
        let y = x.broadcast_to(shape)?;
        let in_shape = x.shape().to_vec();
        Ok(self.record(
            y,
            &[*self],
            "broadcast_to",
            Box::new(move |g| Ok(vec![g.sum_to_shape(&in_shape)?])),
        ))
    }

    pub fn mode_sum(&self, axis: usize) -> Result<Self> {
        let x = self.value();
        let y = x.mode_sum(axis)?;
        let in_shape = x.shape().to_vec();
        Ok(self.record(
            y,
            &[*self],
            "mode_sum",
            Box::new(move |g| {
                let mut kept = in_shape.clone();
                kept[axis] = 1;
                Ok(vec![g.reshape(&kept)?.broadcast_to(&in_shape)?])
            }),
        ))
    }

    pub fn mode_sum_keep(&self, axis: usize) -> Result<Self> {
        let mut kept = self.shape();
        let summed = self.mode_sum(axis)?;
        kept[axis] = 1;
        summed.reshape(&kept)
    }

    pub fn mode_mean(&self, axis: usize) -> Result<Self> {
        let n = self.shape().get(axis).copied().unwrap_or(1);
        Ok(self
            .mode_sum(axis)?
            .scale(T::one() / T::from_usize_lossy(n)))
    }

    /// Biased variance along `axis`, composed from recorded primitives.
    pub fn mode_variance(&self, axis: usize) -> Result<Self> {
        let shape = self.shape();
        let n = T::from_usize_lossy(*shape.get(axis).unwrap_or(&1));
        let mean = self
            .mode_sum_keep(axis)?
            .scale(T::one() / n)
            .broadcast_to(&shape)?;
        self.sub(&mean)?.square().mode_mean(axis)
    }

    pub fn sum_all(&self) -> Self {
        let x = self.value();
        let in_shape = x.shape().to_vec();
        self.record(
            DenseTensor::scalar(x.sum()),
            &[*self],
            "sum_all",
            Box::new(move |g| Ok(vec![DenseTensor::full(&in_shape, g.item())])),
        )
    }

    pub fn mean_all(&self) -> Self {
        let n = T::from_usize_lossy(self.value().numel());
        self.sum_all().scale(T::one() / n)
    }

    pub fn batched_matmul(&self, b: &Self, transpose_b: bool) -> Result<Self> {
        let (av, bv) = (self.value(), b.value());
        let y = av.batched_matmul(&bv, transpose_b)?;
        Ok(self.record(
            y,
            &[*self, *b],
            "batched_matmul",
            Box::new(move |g| {
                let (ga, gb) = if transpose_b {
                    // C = A Bᵀ: dA = G B, dB = Gᵀ A
                    (
                        g.batched_matmul(&bv, false)?,
                        g.transpose_last2()?.batched_matmul(&av, false)?,
                    )
                } else {
                    // C = A B: dA = G Bᵀ, dB = Aᵀ G
                    (
                        g.batched_matmul(&bv, true)?,
                        av.transpose_last2()?.batched_matmul(g, false)?,
                    )
                };
                Ok(vec![
                    ga.sum_to_shape(av.shape())?,
                    gb.sum_to_shape(bv.shape())?,
                ])
            }),
        ))
    }

    pub fn matmul(&self, b: &Self) -> Result<Self> {
        self.batched_matmul(b, false)
    }

    pub fn concat(parts: &[Self], axis: usize) -> Result<Self> {
        let first = parts.first().ok_or(WeaverError::EmptyInput("concat"))?;
        let values: Vec<Rc<DenseTensor<T>>> = parts.iter().map(Var::value).collect();
        let refs: Vec<&DenseTensor<T>> = values.iter().map(|v| v.as_ref()).collect();
        let y = DenseTensor::concat(&refs, axis)?;
        let widths: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
        Ok(first.record(
            y,
            parts,
            "concat",
            Box::new(move |g| {
                let mut start = 0;
                widths
                    .iter()
                    .map(|&w| {
                        let s = g.slice_axis(axis, start, w);
                        start += w;
                        s
                    })
                    .collect()
            }),
        ))
    }

    /// Softmax over the last mode.
    pub fn softmax_last(&self) -> Self {
        let y = softmax_rows(&self.value());
        let yv = Rc::new(y.clone());
        self.record(
            y,
            &[*self],
            "softmax",
            Box::new(move |g| {
                let width = *yv.shape().last().unwrap_or(&1);
                let mut out = vec![T::zero(); g.numel()];
                for ((o, gr), yr) in out
                    .chunks_mut(width)
                    .zip(g.data().chunks(width))
                    .zip(yv.data().chunks(width))
                {
                    let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                    for ((o, &gi), &yi) in o.iter_mut().zip(gr).zip(yr) {
                        *o = yi * (gi - dot);
                    }
                }
                Ok(vec![DenseTensor::from_vec(g.shape(), out)?])
            }),
        )
    }

    /// Entmax-1.5 over the last mode.
    pub fn entmax15_last(&self) -> Result<Self> {
        let y = entmax15_rows(&self.value())?;
        let yv = Rc::new(y.clone());
        Ok(self.record(
            y,
            &[*self],
            "entmax15",
            Box::new(move |g| Ok(vec![entmax15_backward_rows(&yv, g)?])),
        ))
    }

    /// Inverted dropout. Identity when `train` is false or `p` is 0.
    pub fn dropout(&self, p: T, train: bool, rng: &mut impl Rng) -> Result<Self> {
        if !train || p <= T::zero() {
            return Ok(*self);
        }
        if p >= T::one() {
            return Err(WeaverError::InvalidArgument(format!(
                "dropout rate {p} must be < 1"
            )));
        }
        let keep = T::one() - p;
        let inv = T::one() / keep;
        let shape = self.shape();
        let keep_f = keep.to_f64_lossy();
        let mask = DenseTensor::from_fn(&shape, |_| {
            if rng.gen::<f64>() < keep_f {
                inv
            } else {
                T::zero()
            }
        });
        let y = self.value().mul(&mask)?;
        Ok(self.record(
            y,
            &[*self],
            "dropout",
            Box::new(move |g| Ok(vec![g.mul(&mask)?])),
        ))
    }
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softplus<T: Scalar>(x: T) -> T {
    // log(1 + e^x) without overflow
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}
