//! Mini-batch training with early stopping, and windowed evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{BoundParams, Tape, Var};
use crate::data::{
    fit_scaler, metrics, persistence_forecast, split_and_slice, standardize_series, window,
    MetricReport, ScalerStats, SlicedSeries, TrafficSeries, Window,
};
use crate::error::{Result, WeaverError};
use crate::model::{weaver_forward, WeaverConfig, WeaverModel};
use crate::nn::ForwardCtx;
use crate::optim::{Adam, ExponentialLr};
use crate::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub patience: usize,
    pub min_delta: f64,
    pub seed: u64,
    pub ratios: [usize; 3],
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            lr: 1e-3,
            lr_decay: 0.9,
            patience: 10,
            min_delta: 1e-3,
            seed: 0,
            ratios: [70, 10, 20],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    /// 1-based
    pub epoch: usize,
    pub lr: f64,
    /// mean batch loss, original-scale MAE
    pub train_loss: f64,
    pub val_mae: f64,
    pub improved: bool,
}

/// A series prepared for training: raw and standardized copies, the scaler
/// fitted on the training block, and the window layout.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub raw: TrafficSeries,
    pub standardized: TrafficSeries,
    pub scaler: ScalerStats,
    pub sliced: SlicedSeries,
}

impl PreparedData {
    pub fn new(
        raw: TrafficSeries,
        history: usize,
        horizon: usize,
        ratios: [usize; 3],
    ) -> Result<Self> {
        let sliced = split_and_slice(&raw, history, horizon, ratios)?;
        let scaler = fit_scaler(&raw.slice(sliced.train.range.clone())?)?;
        Self::with_scaler(raw, scaler, sliced)
    }

    pub fn with_scaler(
        raw: TrafficSeries,
        scaler: ScalerStats,
        sliced: SlicedSeries,
    ) -> Result<Self> {
        let standardized = standardize_series(&raw, &scaler)?;
        Ok(Self {
            raw,
            standardized,
            scaler,
            sliced,
        })
    }

    pub fn window(&self, start: usize) -> Result<Window> {
        window(
            &self.raw,
            &self.standardized,
            start,
            self.sliced.history,
            self.sliced.horizon,
        )
    }

    fn check(&self, cfg: &WeaverConfig) -> Result<()> {
        let s = &self.raw;
        if (
            s.nodes(),
            s.channels(),
            self.sliced.history,
            self.sliced.horizon,
        ) != (cfg.nodes, cfg.channels, cfg.history, cfg.horizon)
        {
            return Err(WeaverError::Config(format!(
                "data has N={} C={} P={} Q={}, config expects N={} C={} P={} Q={}",
                s.nodes(),
                s.channels(),
                self.sliced.history,
                self.sliced.horizon,
                cfg.nodes,
                cfg.channels,
                cfg.history,
                cfg.horizon
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// parameters from the best validation epoch (initial ones if none improved)
    pub model: WeaverModel,
    pub scaler: ScalerStats,
    pub initial_val_mae: f64,
    pub best_val_mae: f64,
    pub best_epoch: Option<usize>,
    pub log: Vec<EpochLog>,
    pub stopped_early: bool,
}

/// `ŷ (σ + ε) + μ` on the tape, channel last.
fn to_original_scale<'t>(y_std: &Var<'t, f64>, scaler: &ScalerStats) -> Result<Var<'t, f64>> {
    let shape = y_std.shape();
    let c = scaler.mean.len();
    let scale = Tensor::from_fn(&shape, |i| scaler.std[i[i.len() - 1] % c] + scaler.eps);
    let shift = Tensor::from_fn(&shape, |i| scaler.mean[i[i.len() - 1] % c]);
    let tape = y_std.tape();
    y_std.mul(&tape.constant(scale))?.add(&tape.constant(shift))
}

/// Masked absolute-error sum of one window.
fn window_error<'t>(
    tape: &'t Tape<f64>,
    w: &Window,
    params: &BoundParams<'t, f64>,
    cfg: &WeaverConfig,
    scaler: &ScalerStats,
    ctx: &mut ForwardCtx,
) -> Result<Var<'t, f64>> {
    let x = tape.constant(w.x.clone());
    let y_hat = to_original_scale(
        &weaver_forward(&x, Some(&w.x_times), params, cfg, ctx)?,
        scaler,
    )?;
    let err = y_hat.sub(&tape.constant(w.y.clone()))?.abs();
    Ok(err.mul(&tape.constant(w.y_mask.clone()))?.sum_all())
}

/// Original-scale forecasts for the windows at `starts`, stacked as
/// `[W, Q, N, C]`, with targets and masks of the same shape.
pub struct Evaluation {
    pub starts: Vec<usize>,
    pub predictions: Tensor,
    pub targets: Tensor,
    pub mask: Tensor,
    pub persistence: Tensor,
}

impl Evaluation {
    pub fn report(&self) -> Result<MetricReport> {
        metrics(&self.targets, &self.predictions, Some(&self.mask))
    }

    pub fn persistence_report(&self) -> Result<MetricReport> {
        metrics(&self.targets, &self.persistence, Some(&self.mask))
    }
}

pub fn evaluate(model: &WeaverModel, data: &PreparedData, starts: &[usize]) -> Result<Evaluation> {
    data.check(&model.config)?;
    if starts.is_empty() {
        return Err(WeaverError::EmptyInput("evaluation windows"));
    }
    let cfg = &model.config;
    let per = cfg.horizon * cfg.nodes * cfg.channels;
    let mut pred = Vec::with_capacity(starts.len() * per);
    let mut targets = Vec::with_capacity(starts.len() * per);
    let mut mask = Vec::with_capacity(starts.len() * per);
    let mut naive = Vec::with_capacity(starts.len() * per);
    for &start in starts {
        let w = data.window(start)?;
        let y_std = model.predict(&w.x, Some(&w.x_times))?;
        pred.extend(crate::data::invert(&y_std, &data.scaler)?.into_data());
        targets.extend_from_slice(w.y.data());
        mask.extend_from_slice(w.y_mask.data());
        naive.extend(
            persistence_forecast(&w.x_raw, &w.x_mask, cfg.horizon, &data.scaler.mean)?.into_data(),
        );
    }
    let shape = [starts.len(), cfg.horizon, cfg.nodes, cfg.channels];
    Ok(Evaluation {
        starts: starts.to_vec(),
        predictions: Tensor::from_vec(&shape, pred)?,
        targets: Tensor::from_vec(&shape, targets)?,
        mask: Tensor::from_vec(&shape, mask)?,
        persistence: Tensor::from_vec(&shape, naive)?,
    })
}

pub fn validation_mae(model: &WeaverModel, data: &PreparedData) -> Result<f64> {
    Ok(evaluate(model, data, &data.sliced.val.starts)?
        .report()?
        .all
        .mae)
}

/// Trains `model` on the training windows of `data`, keeping the parameters
/// with the best validation MAE. Stops after `patience` epochs without an
/// improvement larger than `min_delta`.
pub fn train(
    mut model: WeaverModel,
    data: &PreparedData,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    data.check(&model.config)?;
    if opts.batch_size == 0 {
        return Err(WeaverError::InvalidArgument(
            "batch size must be positive".into(),
        ));
    }
    let cfg = model.config.clone();
    let schedule = ExponentialLr {
        base: opts.lr,
        gamma: opts.lr_decay,
    };
    let mut adam = Adam::new(opts.lr);
    let initial_val_mae = validation_mae(&model, data)?;
    let mut best_val = initial_val_mae;
    let mut best_params = model.params.clone();
    let mut best_epoch = None;
    let mut since_best = 0;
    let mut log = Vec::with_capacity(opts.epochs);
    let mut stopped_early = false;
    let mut order = data.sliced.train.starts.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    for epoch in 0..opts.epochs {
        adam.lr = schedule.at(epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(opts.batch_size).enumerate() {
            let windows = chunk
                .iter()
                .map(|&s| data.window(s))
                .collect::<Result<Vec<_>>>()?;
            let observed: f64 = windows.iter().map(|w| w.y_mask.sum()).sum();
            if observed == 0.0 {
                continue;
            }
            let tape = Tape::new();
            let bound = model.params.bind(&tape);
            let mut ctx = ForwardCtx::train(opts.seed ^ ((epoch as u64) << 32) ^ b as u64);
            let mut total: Option<Var<'_, f64>> = None;
            for w in &windows {
                let err = window_error(&tape, w, &bound, &cfg, &data.scaler, &mut ctx)?;
                total = Some(match total {
                    None => err,
                    Some(t) => t.add(&err)?,
                });
            }
            let loss = total.expect("non-empty batch").scale(1.0 / observed);
            let value = loss.value().item();
            if !value.is_finite() {
                return Err(WeaverError::Diverged(format!(
                    "epoch {} batch {b}: loss {value}",
                    epoch + 1
                )));
            }
            let grads = tape.backward(loss)?.params(&bound);
            if let Some((name, _)) = grads.grads.iter().find(|(_, g)| !g.all_finite()) {
                return Err(WeaverError::Diverged(format!(
                    "epoch {} batch {b}: non-finite gradient for `{name}`",
                    epoch + 1
                )));
            }
            adam.step(&mut model.params, &grads)?;
            loss_sum += value;
            batches += 1;
        }
        let val = validation_mae(&model, data)?;
        if !val.is_finite() {
            return Err(WeaverError::Diverged(format!(
                "epoch {}: validation MAE {val}",
                epoch + 1
            )));
        }
        let improved = val < best_val - opts.min_delta;
        if val < best_val {
            best_val = val;
            best_params = model.params.clone();
            best_epoch = Some(epoch + 1);
        }
        since_best = if improved { 0 } else { since_best + 1 };
        log.push(EpochLog {
            epoch: epoch + 1,
            lr: adam.lr,
            train_loss: if batches == 0 {
                f64::NAN
            } else {
                loss_sum / batches as f64
            },
            val_mae: val,
            improved,
        });
        if since_best >= opts.patience {
            stopped_early = true;
            break;
        }
    }
    model.params = best_params;
    Ok(TrainOutcome {
        model,
        scaler: data.scaler.clone(),
        initial_val_mae,
        best_val_mae: best_val,
        best_epoch,
        log,
        stopped_early,
    })
}
