//! Forward stages of the Weaver model on a single `P × N × C` sample.

use std::f64::consts::TAU;
use std::sync::Arc;

use super::config::WeaverConfig;
use super::params::names;
use crate::attention::{ctc, QueryKeyBatch};
use crate::autodiff::{BoundParams, Var};
use crate::dictionary::{retrieve_cofactors, PhaseDictionary};
use crate::error::{Result, StageContext, WeaverError};
use crate::kron::{FactorChain, PkmvPlan};
use crate::nn::{glu, linear, rms_norm, ForwardCtx};
use crate::Tensor;

const RMS_EPS: f64 = 1e-8;

/// Calendar position of one history step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepTime {
    /// 0 … 1439
    pub minute_of_day: u32,
    /// 1 … 7
    pub day_of_week: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolAxis {
    /// pools over the history mode, giving `N × E` spatial nodes
    Spatial,
    /// pools over the node mode, giving `P × E` temporal nodes
    Temporal,
}

pub struct Pooled<'t> {
    pub nodes: Var<'t, f64>,
    /// chosen scorer (0-based)
    pub scorer: usize,
    pub pim: Vec<f64>,
}

/// `(x ∥ Ξ) W_x`, then `Dropout(GLU(RMSNorm(·) W_U)) + ·`, returned as `E × P × N`.
pub fn project_input<'t>(
    x: &Var<'t, f64>,
    cofactors: &Var<'t, f64>,
    params: &BoundParams<'t, f64>,
    cfg: &WeaverConfig,
    ctx: &mut ForwardCtx,
) -> Result<Var<'t, f64>> {
    let xs = x.shape();
    let cs = cofactors.shape();
    if xs.len() != 3 || cs.len() != 3 || xs[..2] != cs[..2] {
        return Err(WeaverError::shape("project_input", &xs, &cs));
    }
    let u_xi = linear(
        &Var::concat(&[*x, *cofactors], 2)?,
        &params.get(names::PROJ_W_X)?,
        None,
    )?;
    let gated = glu(&linear(
        &rms_norm(&u_xi, RMS_EPS)?,
        &params.get(names::PROJ_W_U)?,
        None,
    )?)?;
    let u_st = ctx.dropout(&gated, cfg.dropout)?.add(&u_xi)?;
    u_st.rearrange("p n e -> e p n", &[])
}

/// Scorer weights with unit-norm columns.
fn normalized_scorers<'t>(w: &Var<'t, f64>) -> Result<Var<'t, f64>> {
    let shape = w.shape();
    let norms = w.square().mode_sum_keep(0)?.sqrt();
    w.div(&norms.broadcast_to(&shape)?)
}

/// ATk pooling of `u: P × N × E` along `axis`.
pub fn atk_pool<'t>(
    u: &Var<'t, f64>,
    axis: PoolAxis,
    params: &BoundParams<'t, f64>,
    cfg: &WeaverConfig,
) -> Result<Pooled<'t>> {
    let (features, w, k) = match axis {
        PoolAxis::Spatial => (*u, params.get(names::POOL_SPACE)?, cfg.k_time()),
        PoolAxis::Temporal => (
            u.permute(&[1, 0, 2])?,
            params.get(names::POOL_TIME)?,
            cfg.k_space(),
        ),
    };
    pool_leading(&features, &w, k)
}

/// Pools `u: A × B × E` over its leading mode with scorers `w: E × M`.
pub fn pool_leading<'t>(u: &Var<'t, f64>, w: &Var<'t, f64>, k: usize) -> Result<Pooled<'t>> {
    let s = u.shape();
    let m = w.shape().get(1).copied().unwrap_or(0);
    if m == 0 {
        return Err(WeaverError::InvalidArgument(
            "ATk pooling needs at least one scorer".into(),
        ));
    }
    let (a, b, e) = (s[0], s[1], s[2]);
    if k == 0 || k > a {
        return Err(WeaverError::KOutOfRange { k, size: a });
    }
    let scores = linear(u, &normalized_scorers(w)?, None)?;
    // informativeness: Σ over B of the variance over A, per scorer
    let pim: Vec<f64> = scores
        .value()
        .mode_variance(0)?
        .mode_sum(0)?
        .data()
        .to_vec();
    let mut scorer = 0;
    for (g, &v) in pim.iter().enumerate() {
        if v > pim[scorer] {
            scorer = g;
        }
    }
    let best = scores.slice_axis(2, scorer, 1)?.reshape(&[a, b])?;
    let top = best.value().top_k_select(&best.value(), 0, k)?;
    let score_index = Tensor::top_k_gather_index(&[a, b], 0, k, &top.indices);
    let feature_index: Vec<usize> = top
        .indices
        .iter()
        .enumerate()
        .flat_map(|(slot, &src)| {
            let col = slot % b;
            (0..e).map(move |f| (src * b + col) * e + f)
        })
        .collect();
    let picked = u.gather(&[k, b, e], Arc::from(feature_index))?;
    let weights = best
        .gather(&[k, b], Arc::from(score_index))?
        .rearrange("k b -> b k", &[])?
        .softmax_last()
        .rearrange("b k -> k b", &[])?
        .reshape(&[k, b, 1])?
        .broadcast_to(&[k, b, e])?;
    let nodes = picked.mul(&weights)?.mode_sum(0)?;
    Ok(Pooled { nodes, scorer, pim })
}

/// ReLU stack over `(U_S ∥ B_kern)` with a linear last layer.
pub fn spatial_encoding<'t>(
    u_s: &Var<'t, f64>,
    params: &BoundParams<'t, f64>,
    cfg: &WeaverConfig,
) -> Result<Var<'t, f64>> {
    let mut h = Var::concat(&[*u_s, params.get(names::SPACE_B_KERN)?], 1)?;
    let depth = cfg.spatial_widths.len();
    for l in 0..=depth {
        h = linear(&h, &params.get(&names::space_layer(l))?, None)?;
        if l < depth {
            h = h.relu();
        }
    }
    Ok(h)
}

/// `[sin, cos]` of time of day and day of week, `P × 4`.
pub fn cyclic_features(times: &[StepTime]) -> Tensor {
    let rows: Vec<Vec<f64>> = times
        .iter()
        .map(|t| {
            let tod = TAU * f64::from(t.minute_of_day) / 1440.0;
            let dow = TAU * f64::from(t.day_of_week) / 7.0;
            vec![tod.sin(), tod.cos(), dow.sin(), dow.cos()]
        })
        .collect();
    Tensor::from_rows(&rows)
}

pub fn temporal_encoding<'t>(
    u_t: &Var<'t, f64>,
    times: Option<&[StepTime]>,
    params: &BoundParams<'t, f64>,
    cfg: &WeaverConfig,
) -> Result<Var<'t, f64>> {
    let w = params.get(names::TIME_W)?;
    if !cfg.use_time {
        return linear(u_t, &w, None);
    }
    let times = times.ok_or(WeaverError::EmptyInput("timestamps"))?;
    let p = u_t.shape()[0];
    if times.len() != p {
        return Err(WeaverError::shape(
            "temporal_encoding timestamps",
            &[p],
            &[times.len()],
        ));
    }
    let b_dyn = u_t.tape().constant(cyclic_features(times));
    linear(&Var::concat(&[*u_t, b_dyn], 1)?, &w, None)
}

/// Per-head CTC map `H × n × n` of the node matrix `g`.
pub fn local_attention<'t>(
    g: &Var<'t, f64>,
    w_q: &Var<'t, f64>,
    w_k: &Var<'t, f64>,
    cfg: &WeaverConfig,
) -> Result<Var<'t, f64>> {
    let sizes = [("h", cfg.heads)];
    let q = linear(g, w_q, None)?.rearrange("n (h d) -> h n d", &sizes)?;
    let k = linear(g, w_k, None)?.rearrange("n (h d) -> h n d", &sizes)?;
    ctc(&QueryKeyBatch::new(q, k, cfg.ctc_eps)?)
}

/// Multihead `(Θ_T ⊗ Θ_S)` message passing over `u_st: E × P × N`, then
/// `GLU(Z̃ W_2O)` plus the residual. Returns `P × N × E`.
pub fn st_kronecker_layer<'t>(
    u_st: &Var<'t, f64>,
    theta_s: &Var<'t, f64>,
    theta_t: &Var<'t, f64>,
    params: &BoundParams<'t, f64>,
    cfg: &WeaverConfig,
) -> Result<Var<'t, f64>> {
    let s = u_st.shape();
    let (p, n) = (s[1], s[2]);
    let (h, d) = (cfg.heads, cfg.head_dim());
    let v = u_st.rearrange("(h d) p n -> h (p n) d", &[("h", h)])?;
    let chain = FactorChain::new(vec![*theta_t, *theta_s])?;
    let mixed = PkmvPlan::new(h, &[d, p, n])?.apply_columns(&chain, &v)?;
    let z_tilde = mixed.rearrange("h (p n) d -> p n (h d)", &[("p", p)])?;
    let residual = u_st.rearrange("e p n -> p n e", &[])?;
    glu(&linear(&z_tilde, &params.get(names::MIX_W_2O)?, None)?)?.add(&residual)
}

/// Residual MLP then readout on the last history step. Returns `Q × N × C`.
pub fn forecast_head<'t>(
    z: &Var<'t, f64>,
    params: &BoundParams<'t, f64>,
    cfg: &WeaverConfig,
    ctx: &mut ForwardCtx,
) -> Result<Var<'t, f64>> {
    let s = z.shape();
    // the MLP acts per position, so only the step that feeds the readout is computed
    let last = z.slice_axis(0, s[0] - 1, 1)?.reshape(&[s[1], s[2]])?;
    let up = linear(
        &last,
        &params.get(names::HEAD_W_UP)?,
        Some(&params.get(names::HEAD_B_UP)?),
    )?
    .leaky_relu(cfg.leaky_slope);
    let up = ctx.dropout(&up, cfg.dropout)?;
    let z1 = linear(
        &up,
        &params.get(names::HEAD_W_DN)?,
        Some(&params.get(names::HEAD_B_DN)?),
    )?
    .add(&last)?;
    linear(
        &z1,
        &params.get(names::HEAD_W_RO)?,
        Some(&params.get(names::HEAD_B_RO)?),
    )?
    .rearrange("n (q c) -> q n c", &[("q", cfg.horizon)])
}

/// Intermediate values of one forward pass.
pub struct Trace<'t> {
    pub cofactors: Var<'t, f64>,
    pub dict_weights: Var<'t, f64>,
    pub u_st: Var<'t, f64>,
    pub spatial: Pooled<'t>,
    pub temporal: Pooled<'t>,
    pub theta_s: Var<'t, f64>,
    pub theta_t: Var<'t, f64>,
    pub z: Var<'t, f64>,
    pub y_hat: Var<'t, f64>,
}

pub fn weaver_forward<'t>(
    x: &Var<'t, f64>,
    times: Option<&[StepTime]>,
    params: &BoundParams<'t, f64>,
    cfg: &WeaverConfig,
    ctx: &mut ForwardCtx,
) -> Result<Var<'t, f64>> {
    Ok(weaver_trace(x, times, params, cfg, ctx)?.y_hat)
}

pub fn weaver_trace<'t>(
    x: &Var<'t, f64>,
    times: Option<&[StepTime]>,
    params: &BoundParams<'t, f64>,
    cfg: &WeaverConfig,
    ctx: &mut ForwardCtx,
) -> Result<Trace<'t>> {
    let want = [cfg.history, cfg.nodes, cfg.channels];
    if x.shape() != want {
        return Err(WeaverError::shape(
            "weaver_forward input",
            &want,
            &x.shape(),
        ));
    }
    let dict = PhaseDictionary::bind(params, cfg.dropout).stage("retrieve_cofactors")?;
    let cof = retrieve_cofactors(x, &dict, ctx).stage("retrieve_cofactors")?;
    let u_st = project_input(x, &cof.xi, params, cfg, ctx).stage("project_input")?;
    let u_pne = u_st
        .rearrange("e p n -> p n e", &[])
        .stage("project_input")?;
    let spatial = atk_pool(&u_pne, PoolAxis::Spatial, params, cfg).stage("atk_pool spatial")?;
    let temporal = atk_pool(&u_pne, PoolAxis::Temporal, params, cfg).stage("atk_pool temporal")?;
    let g_s = spatial_encoding(&spatial.nodes, params, cfg).stage("spatial_encoding")?;
    let g_t = temporal_encoding(&temporal.nodes, times, params, cfg).stage("temporal_encoding")?;
    let theta_s = (|| {
        local_attention(
            &g_s,
            &params.get(names::SPACE_W_Q)?,
            &params.get(names::SPACE_W_K)?,
            cfg,
        )
    })()
    .stage("local_attention spatial")?;
    let theta_t = (|| {
        local_attention(
            &g_t,
            &params.get(names::TIME_W_Q)?,
            &params.get(names::TIME_W_K)?,
            cfg,
        )
    })()
    .stage("local_attention temporal")?;
    let z =
        st_kronecker_layer(&u_st, &theta_s, &theta_t, params, cfg).stage("st_kronecker_layer")?;
    let y_hat = forecast_head(&z, params, cfg, ctx).stage("forecast_head")?;
    Ok(Trace {
        cofactors: cof.xi,
        dict_weights: cof.weights,
        u_st,
        spatial,
        temporal,
        theta_s,
        theta_t,
        z,
        y_hat,
    })
}

/// Mean absolute error over observed entries. `mask` holds 1 for observed.
pub fn mae_loss<'t>(
    y: &Tensor,
    y_hat: &Var<'t, f64>,
    mask: Option<&Tensor>,
) -> Result<Var<'t, f64>> {
    if y.shape() != y_hat.shape().as_slice() {
        return Err(WeaverError::shape("mae_loss", y.shape(), &y_hat.shape()));
    }
    let tape = y_hat.tape();
    let diff = y_hat.sub(&tape.constant(y.clone()))?.abs();
    match mask {
        None => Ok(diff.mean_all()),
        Some(mask) => {
            if mask.shape() != y.shape() {
                return Err(WeaverError::shape("mae_loss mask", y.shape(), mask.shape()));
            }
            let count = mask.sum();
            if count <= 0.0 {
                return Err(WeaverError::EmptyInput("mae_loss mask"));
            }
            Ok(diff
                .mul(&tape.constant(mask.clone()))?
                .sum_all()
                .scale(1.0 / count))
        }
    }
}
