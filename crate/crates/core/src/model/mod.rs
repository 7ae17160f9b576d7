//! The Weaver forecast model.

pub mod checkpoint;
pub mod config;
pub mod layers;
pub mod params;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use config::WeaverConfig;
pub use layers::{
    atk_pool, cyclic_features, forecast_head, local_attention, mae_loss, pool_leading,
    project_input, spatial_encoding, st_kronecker_layer, temporal_encoding, weaver_forward,
    weaver_trace, PoolAxis, Pooled, StepTime, Trace,
};
pub use params::{init_parameters, names, parameter_shapes};

use crate::autodiff::{Parameters, Tape};
use crate::error::Result;
use crate::nn::ForwardCtx;
use crate::Tensor;

/// Configuration plus parameter values.
#[derive(Debug, Clone, PartialEq)]
pub struct WeaverModel {
    pub config: WeaverConfig,
    pub params: Parameters<f64>,
}

impl WeaverModel {
    pub fn init(config: WeaverConfig, seed: u64) -> Result<Self> {
        let params = init_parameters(&config, seed)?;
        Ok(Self { config, params })
    }

    /// Eval-mode forecast `Q × N × C` for one standardized sample.
    pub fn predict(&self, x: &Tensor, times: Option<&[StepTime]>) -> Result<Tensor> {
        let tape = Tape::new();
        let bound = self.params.bind(&tape);
        let xv = tape.constant(x.clone());
        let y = weaver_forward(&xv, times, &bound, &self.config, &mut ForwardCtx::eval())?;
        Ok((*y.value()).clone())
    }
}
