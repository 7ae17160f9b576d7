use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::config::WeaverConfig;
use crate::autodiff::Parameters;
use crate::error::Result;
use crate::Tensor;

/// Hierarchical parameter names.
pub mod names {
    pub const DICT_W: &str = "dict.w";
    pub const DICT_B: &str = "dict.b";
    pub const DICT_TAU: &str = "dict.tau";
    pub const DICT_LANDMARKS: &str = "dict.landmarks";
    pub const PROJ_W_X: &str = "proj.w_x";
    pub const PROJ_W_U: &str = "proj.w_u";
    pub const POOL_SPACE: &str = "pool.space.w";
    pub const POOL_TIME: &str = "pool.time.w";
    pub const SPACE_B_KERN: &str = "space.b_kern";
    pub const SPACE_W_Q: &str = "space.w_q";
    pub const SPACE_W_K: &str = "space.w_k";
    pub const TIME_W: &str = "time.w";
    pub const TIME_W_Q: &str = "time.w_q";
    pub const TIME_W_K: &str = "time.w_k";
    pub const MIX_W_2O: &str = "mix.w_2o";
    pub const HEAD_W_UP: &str = "head.w_up";
    pub const HEAD_B_UP: &str = "head.b_up";
    pub const HEAD_W_DN: &str = "head.w_dn";
    pub const HEAD_B_DN: &str = "head.b_dn";
    pub const HEAD_W_RO: &str = "head.w_ro";
    pub const HEAD_B_RO: &str = "head.b_ro";

    /// Layer `l` of the spatial encoder, `l = 0 … κ`.
    pub fn space_layer(l: usize) -> String {
        format!("space.w{l}")
    }
}

/// Every parameter name with its shape, in a fixed order.
pub fn parameter_shapes(cfg: &WeaverConfig) -> Vec<(String, Vec<usize>)> {
    use names::*;
    let (p, q, n, c, e) = (cfg.history, cfg.horizon, cfg.nodes, cfg.channels, cfg.embed);
    let (m, k) = (cfg.dict_landmarks, cfg.dict_width);
    let mut out: Vec<(String, Vec<usize>)> = vec![
        (DICT_W.into(), vec![p * c, 2 * m]),
        (DICT_B.into(), vec![2 * m]),
        (DICT_TAU.into(), vec![n, 1]),
        (DICT_LANDMARKS.into(), vec![m, p * k]),
        (PROJ_W_X.into(), vec![c + k, e]),
        (PROJ_W_U.into(), vec![e, 2 * e]),
        (POOL_SPACE.into(), vec![e, cfg.scorers_space]),
        (POOL_TIME.into(), vec![e, cfg.scorers_time]),
        (SPACE_B_KERN.into(), vec![n, cfg.kern_width]),
    ];
    let mut widths = vec![e + cfg.kern_width];
    widths.extend(&cfg.spatial_widths);
    widths.push(e);
    for (l, pair) in widths.windows(2).enumerate() {
        out.push((space_layer(l), vec![pair[0], pair[1]]));
    }
    let time_in = if cfg.use_time { e + 4 } else { e };
    out.extend([
        (SPACE_W_Q.into(), vec![e, e]),
        (SPACE_W_K.into(), vec![e, e]),
        (TIME_W.into(), vec![time_in, e]),
        (TIME_W_Q.into(), vec![e, e]),
        (TIME_W_K.into(), vec![e, e]),
        (MIX_W_2O.into(), vec![e, 2 * e]),
        (HEAD_W_UP.into(), vec![e, cfg.mlp_expansion * e]),
        (HEAD_B_UP.into(), vec![cfg.mlp_expansion * e]),
        (HEAD_W_DN.into(), vec![cfg.mlp_expansion * e, e]),
        (HEAD_B_DN.into(), vec![e]),
        (HEAD_W_RO.into(), vec![e, q * c]),
        (HEAD_B_RO.into(), vec![q * c]),
    ]);
    out
}

/// `log(e − 1)`, the Softplus preimage of 1.
pub const SOFTPLUS_INV_ONE: f64 = 0.541_324_854_612_918_1;

/// Seeded initialization: weights and biases uniform in ±1/√fan_in,
/// landmarks uniform in ±1/√(P·K_Ξ), kernel bias N(0, 0.02²), and
/// temperatures at Softplus⁻¹(1).
pub fn init_parameters(cfg: &WeaverConfig, seed: u64) -> Result<Parameters<f64>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Parameters::new();
    let fan_in_of_bias = |name: &str| -> usize {
        use names::*;
        match name {
            DICT_B => cfg.history * cfg.channels,
            HEAD_B_UP => cfg.embed,
            HEAD_B_DN => cfg.mlp_expansion * cfg.embed,
            HEAD_B_RO => cfg.embed,
            _ => 1,
        }
    };
    for (name, shape) in parameter_shapes(cfg) {
        let tensor = match name.as_str() {
            names::DICT_TAU => Tensor::full(&shape, SOFTPLUS_INV_ONE),
            names::SPACE_B_KERN => {
                Tensor::from_fn(&shape, |_| 0.02 * rng.sample::<f64, _>(StandardNormal))
            }
            names::DICT_LANDMARKS => uniform(
                &shape,
                1.0 / ((cfg.history * cfg.dict_width) as f64).sqrt(),
                &mut rng,
            ),
            _ if shape.len() == 1 => uniform(
                &shape,
                1.0 / (fan_in_of_bias(&name) as f64).sqrt(),
                &mut rng,
            ),
            _ => uniform(&shape, 1.0 / (shape[0] as f64).sqrt(), &mut rng),
        };
        params.insert(name, tensor);
    }
    Ok(params)
}

fn uniform(shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-bound..bound))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seeded_and_shaped() {
        let cfg = WeaverConfig::desk();
        let a = init_parameters(&cfg, 7).unwrap();
        let b = init_parameters(&cfg, 7).unwrap();
        assert_eq!(a, b);
        for (name, shape) in parameter_shapes(&cfg) {
            assert_eq!(a.get(&name).unwrap().shape(), shape.as_slice(), "{name}");
        }
        // κ = 2 hidden widths gives three encoder matrices
        assert!(a.get("space.w2").is_ok() && a.get("space.w3").is_err());
        assert!((SOFTPLUS_INV_ONE.exp().ln_1p() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn nt_variant_has_square_temporal_projection() {
        let mut cfg = WeaverConfig::desk();
        cfg.use_time = false;
        let p = init_parameters(&cfg, 0).unwrap();
        assert_eq!(p.get(names::TIME_W).unwrap().shape(), &[8, 8]);
    }
}
