//! Traffic phase dictionary: sparse Entmax-1.5 lookup of per-node latent
//! cofactors from a learned landmark matrix.

use crate::autodiff::{BoundParams, Var};
use crate::error::{Result, WeaverError};
use crate::model::params::names;
use crate::nn::{glu, linear, ForwardCtx};

/// Dictionary parameters bound to a tape.
#[derive(Clone, Copy)]
pub struct PhaseDictionary<'t> {
    /// query projector, `P·C × 2M`
    pub w: Var<'t, f64>,
    pub b: Var<'t, f64>,
    /// pre-Softplus temperatures, `N × 1`
    pub tau: Var<'t, f64>,
    /// `M × P·K`
    pub landmarks: Var<'t, f64>,
    pub dropout: f64,
}

/// Retrieved cofactors together with the weights that produced them.
pub struct Cofactors<'t> {
    /// `P × N × K`
    pub xi: Var<'t, f64>,
    /// `N × M`, each row on the simplex
    pub weights: Var<'t, f64>,
}

impl<'t> PhaseDictionary<'t> {
    pub fn bind(params: &BoundParams<'t, f64>, dropout: f64) -> Result<Self> {
        Ok(Self {
            w: params.get(names::DICT_W)?,
            b: params.get(names::DICT_B)?,
            tau: params.get(names::DICT_TAU)?,
            landmarks: params.get(names::DICT_LANDMARKS)?,
            dropout,
        })
    }

    pub fn landmark_count(&self) -> usize {
        self.landmarks.shape()[0]
    }
}

pub fn retrieve_cofactors<'t>(
    x: &Var<'t, f64>,
    d: &PhaseDictionary<'t>,
    ctx: &mut ForwardCtx,
) -> Result<Cofactors<'t>> {
    let xs = x.shape();
    if xs.len() != 3 {
        return Err(WeaverError::InvalidArgument(format!(
            "dictionary input must be P×N×C, got {xs:?}"
        )));
    }
    let (p, n, c) = (xs[0], xs[1], xs[2]);
    let m = d.landmark_count();
    let ws = d.w.shape();
    let ls = d.landmarks.shape();
    if ws != [p * c, 2 * m] {
        return Err(WeaverError::shape(
            "retrieve_cofactors projector",
            &[p * c, 2 * m],
            &ws,
        ));
    }
    if ls[1] % p != 0 {
        return Err(WeaverError::shape(
            "retrieve_cofactors landmarks",
            &[m, p],
            &ls,
        ));
    }
    if d.tau.shape() != [n, 1] {
        return Err(WeaverError::shape(
            "retrieve_cofactors temperatures",
            &[n, 1],
            &d.tau.shape(),
        ));
    }
    let k = ls[1] / p;
    let queries = x.rearrange("p n c -> n (p c)", &[])?;
    let logits = glu(&linear(&queries, &d.w, Some(&d.b))?)?;
    let logits = ctx.dropout(&logits, d.dropout)?;
    let temperature = d.tau.softplus().broadcast_to(&[n, m])?;
    let weights = logits.div(&temperature)?.entmax15_last()?;
    let xi = weights
        .matmul(&d.landmarks)?
        .rearrange("n (p k) -> p n k", &[("p", p), ("k", k)])?;
    Ok(Cofactors { xi, weights })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Parameters, Tape};
    use crate::Tensor;

    fn dict_params(p: usize, c: usize, n: usize, m: usize, k: usize) -> Parameters<f64> {
        let mut params = Parameters::new();
        let mut s = 0.37f64;
        let mut next = || {
            s = (s * 997.0 + 0.13).fract();
            s - 0.5
        };
        params.insert(names::DICT_W, Tensor::from_fn(&[p * c, 2 * m], |_| next()));
        params.insert(names::DICT_B, Tensor::from_fn(&[2 * m], |_| next()));
        params.insert(names::DICT_TAU, Tensor::from_fn(&[n, 1], |_| next()));
        params.insert(
            names::DICT_LANDMARKS,
            Tensor::from_fn(&[m, p * k], |_| next()),
        );
        params
    }

    #[test]
    fn uniform_logits_give_landmark_mean() {
        let (p, c, n, m, k) = (3, 1, 2, 4, 2);
        let mut params = dict_params(p, c, n, m, k);
        *params.get_mut(names::DICT_W).unwrap() = Tensor::zeros(&[p * c, 2 * m]);
        *params.get_mut(names::DICT_B).unwrap() = Tensor::zeros(&[2 * m]);
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let d = PhaseDictionary::bind(&bound, 0.0).unwrap();
        let x = tape.constant(Tensor::ones(&[p, n, c]));
        let out = retrieve_cofactors(&x, &d, &mut ForwardCtx::eval()).unwrap();
        let lm = params.get(names::DICT_LANDMARKS).unwrap();
        let mean = lm.mode_mean(0).unwrap();
        let xi = out.xi.value();
        for pi in 0..p {
            for ni in 0..n {
                for ki in 0..k {
                    let want = mean.get(&[pi * k + ki]);
                    assert!((xi.get(&[pi, ni, ki]) - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rejects_mismatched_input() {
        let params = dict_params(3, 1, 2, 4, 2);
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let d = PhaseDictionary::bind(&bound, 0.0).unwrap();
        let x = tape.constant(Tensor::ones(&[4, 2, 1]));
        assert!(retrieve_cofactors(&x, &d, &mut ForwardCtx::eval()).is_err());
        let x = tape.constant(Tensor::ones(&[3, 5, 1]));
        assert!(retrieve_cofactors(&x, &d, &mut ForwardCtx::eval()).is_err());
    }
}
