//! Small layer helpers built from tape primitives.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Var;
use crate::error::{Result, WeaverError};

/// Train/eval switch plus the dropout random stream.
pub struct ForwardCtx {
    pub train: bool,
    pub rng: ChaCha8Rng,
}

impl ForwardCtx {
    pub fn eval() -> Self {
        Self {
            train: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn train(seed: u64) -> Self {
        Self {
            train: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn dropout<'t>(&mut self, x: &Var<'t, f64>, p: f64) -> Result<Var<'t, f64>> {
        x.dropout(p, self.train, &mut self.rng)
    }
}

/// `x W (+ b)` along the last mode of `x`, for any leading shape.
pub fn linear<'t>(
    x: &Var<'t, f64>,
    w: &Var<'t, f64>,
    b: Option<&Var<'t, f64>>,
) -> Result<Var<'t, f64>> {
    let xs = x.shape();
    let ws = w.shape();
    let fan_in = *xs.last().ok_or(WeaverError::EmptyInput("linear"))?;
    if ws.len() != 2 || ws[0] != fan_in {
        return Err(WeaverError::shape(
            "linear",
            &[fan_in, ws.get(1).copied().unwrap_or(0)],
            &ws,
        ));
    }
    let rows = x.value().numel() / fan_in;
    let mut y = x.reshape(&[rows, fan_in])?.matmul(w)?;
    if let Some(b) = b {
        if b.shape() != [ws[1]] {
            return Err(WeaverError::shape("linear bias", &[ws[1]], &b.shape()));
        }
        y = y.add(&b.reshape(&[1, ws[1]])?.broadcast_to(&[rows, ws[1]])?)?;
    }
    let mut out_shape = xs;
    *out_shape.last_mut().expect("non-empty") = ws[1];
    y.reshape(&out_shape)
}

/// Gated linear unit over the last mode: `a ⊙ σ(g)` for `[a ∥ g]`.
pub fn glu<'t>(x: &Var<'t, f64>) -> Result<Var<'t, f64>> {
    let s = x.shape();
    let axis = s.len() - 1;
    if s[axis] % 2 != 0 {
        return Err(WeaverError::InvalidArgument(format!(
            "GLU needs an even last mode, got {s:?}"
        )));
    }
    let half = s[axis] / 2;
    let a = x.slice_axis(axis, 0, half)?;
    let g = x.slice_axis(axis, half, half)?;
    a.mul(&g.sigmoid())
}

/// Root-mean-square normalisation over the last mode, without gain.
pub fn rms_norm<'t>(x: &Var<'t, f64>, eps: f64) -> Result<Var<'t, f64>> {
    let s = x.shape();
    let axis = s.len() - 1;
    let n = s[axis] as f64;
    let rms = x
        .square()
        .mode_sum_keep(axis)?
        .scale(1.0 / n)
        .add_scalar(eps)
        .sqrt();
    x.div(&rms.broadcast_to(&s)?)
}
