use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Result, WeaverError};

#[derive(Debug, Clone, PartialEq)]
pub struct WeaverConfig {
    /// history length P
    pub history: usize,
    /// horizon Q
    pub horizon: usize,
    pub nodes: usize,
    pub channels: usize,
    pub embed: usize,
    pub heads: usize,
    /// dictionary landmark count M_Ξ
    pub dict_landmarks: usize,
    /// cofactor width K_Ξ
    pub dict_width: usize,
    /// scorers for pooling over time, producing spatial nodes
    pub scorers_space: usize,
    /// scorers for pooling over space, producing temporal nodes
    pub scorers_time: usize,
    /// ρ_S, used for the top-k over the N mode
    pub pool_ratio_space: f64,
    /// ρ_T, used for the top-k over the P mode
    pub pool_ratio_time: f64,
    /// D_kern
    pub kern_width: usize,
    /// hidden widths D_1 … D_κ of the spatial encoder
    pub spatial_widths: Vec<usize>,
    pub dropout: f64,
    /// expansion M_z of the forecast MLP
    pub mlp_expansion: usize,
    pub leaky_slope: f64,
    pub use_time: bool,
    /// ε₀ of the CTC kernels
    pub ctc_eps: f64,
}

impl WeaverConfig {
    pub fn full_scale(nodes: usize) -> Self {
        Self {
            history: 12,
            horizon: 12,
            nodes,
            channels: 1,
            embed: 128,
            heads: 8,
            dict_landmarks: 64,
            dict_width: 32,
            scorers_space: 5,
            scorers_time: 5,
            pool_ratio_space: 0.6,
            pool_ratio_time: 0.6,
            kern_width: 32,
            spatial_widths: vec![128, 128],
            dropout: 0.1,
            mlp_expansion: 2,
            leaky_slope: 0.01,
            use_time: true,
            ctc_eps: 1e-6,
        }
    }

    /// Small configuration for tests and desk-scale training.
    pub fn desk() -> Self {
        Self {
            history: 4,
            horizon: 4,
            nodes: 6,
            channels: 1,
            embed: 8,
            heads: 2,
            dict_landmarks: 4,
            dict_width: 2,
            scorers_space: 2,
            scorers_time: 2,
            pool_ratio_space: 0.6,
            pool_ratio_time: 0.6,
            kern_width: 4,
            spatial_widths: vec![8, 8],
            dropout: 0.1,
            mlp_expansion: 2,
            leaky_slope: 0.01,
            use_time: true,
            ctc_eps: 1e-6,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.embed / self.heads
    }

    /// k for the top-k over the history mode.
    pub fn k_time(&self) -> usize {
        ((self.pool_ratio_time * self.history as f64).ceil() as usize).clamp(1, self.history)
    }

    /// k for the top-k over the node mode.
    pub fn k_space(&self) -> usize {
        ((self.pool_ratio_space * self.nodes as f64).ceil() as usize).clamp(1, self.nodes)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(WeaverError::Config(m));
        let positive = [
            ("history", self.history),
            ("horizon", self.horizon),
            ("nodes", self.nodes),
            ("channels", self.channels),
            ("embed", self.embed),
            ("heads", self.heads),
            ("dict_landmarks", self.dict_landmarks),
            ("dict_width", self.dict_width),
            ("scorers_space", self.scorers_space),
            ("scorers_time", self.scorers_time),
            ("kern_width", self.kern_width),
            ("mlp_expansion", self.mlp_expansion),
        ];
        for (name, v) in positive {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.embed % self.heads != 0 {
            return bad(format!(
                "embed {} not divisible by heads {}",
                self.embed, self.heads
            ));
        }
        for (name, r) in [
            ("pool_ratio_space", self.pool_ratio_space),
            ("pool_ratio_time", self.pool_ratio_time),
        ] {
            if !(r > 0.0 && r <= 1.0) {
                return bad(format!("{name} = {r} outside (0, 1]"));
            }
        }
        if self.spatial_widths.is_empty() || self.spatial_widths.contains(&0) {
            return bad("spatial_widths needs at least one positive width".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.ctc_eps < 0.0 {
            return bad("ctc_eps must be non-negative".into());
        }
        Ok(())
    }

    /// Flat `key=value` lines, one per field.
    pub fn to_kv(&self) -> String {
        let widths: Vec<String> = self.spatial_widths.iter().map(usize::to_string).collect();
        let mut s = String::new();
        let pairs: [(&str, String); 19] = [
            ("history", self.history.to_string()),
            ("horizon", self.horizon.to_string()),
            ("nodes", self.nodes.to_string()),
            ("channels", self.channels.to_string()),
            ("embed", self.embed.to_string()),
            ("heads", self.heads.to_string()),
            ("dict_landmarks", self.dict_landmarks.to_string()),
            ("dict_width", self.dict_width.to_string()),
            ("scorers_space", self.scorers_space.to_string()),
            ("scorers_time", self.scorers_time.to_string()),
            ("pool_ratio_space", format!("{:?}", self.pool_ratio_space)),
            ("pool_ratio_time", format!("{:?}", self.pool_ratio_time)),
            ("kern_width", self.kern_width.to_string()),
            ("spatial_widths", widths.join(",")),
            ("dropout", format!("{:?}", self.dropout)),
            ("mlp_expansion", self.mlp_expansion.to_string()),
            ("leaky_slope", format!("{:?}", self.leaky_slope)),
            ("use_time", self.use_time.to_string()),
            ("ctc_eps", format!("{:?}", self.ctc_eps)),
        ];
        for (k, v) in pairs {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    /// Parses `key=value` lines over `base`. Blank lines and `#` comments are
    /// ignored; unknown keys are errors.
    pub fn from_kv(text: &str, base: Self) -> Result<Self> {
        let mut cfg = base;
        let map = parse_kv(text)?;
        for (key, value) in &map {
            let err = |what: &str| {
                WeaverError::Config(format!("{key}: cannot parse `{value}` as {what}"))
            };
            let int = || value.parse::<usize>().map_err(|_| err("an integer"));
            let float = || value.parse::<f64>().map_err(|_| err("a number"));
            match key.as_str() {
                "history" => cfg.history = int()?,
                "horizon" => cfg.horizon = int()?,
                "nodes" => cfg.nodes = int()?,
                "channels" => cfg.channels = int()?,
                "embed" => cfg.embed = int()?,
                "heads" => cfg.heads = int()?,
                "dict_landmarks" => cfg.dict_landmarks = int()?,
                "dict_width" => cfg.dict_width = int()?,
                "scorers_space" => cfg.scorers_space = int()?,
                "scorers_time" => cfg.scorers_time = int()?,
                "pool_ratio_space" => cfg.pool_ratio_space = float()?,
                "pool_ratio_time" => cfg.pool_ratio_time = float()?,
                "kern_width" => cfg.kern_width = int()?,
                "spatial_widths" => {
                    cfg.spatial_widths = value
                        .split(',')
                        .map(|w| {
                            w.trim()
                                .parse::<usize>()
                                .map_err(|_| err("a comma-separated width list"))
                        })
                        .collect::<Result<_>>()?
                }
                "dropout" => cfg.dropout = float()?,
                "mlp_expansion" => cfg.mlp_expansion = int()?,
                "leaky_slope" => cfg.leaky_slope = float()?,
                "use_time" => cfg.use_time = value.parse().map_err(|_| err("true/false"))?,
                "ctc_eps" => cfg.ctc_eps = float()?,
                _ => return Err(WeaverError::Config(format!("unknown key `{key}`"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub(crate) fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            WeaverError::Config(format!("line {}: expected key=value", lineno + 1))
        })?;
        if map
            .insert(k.trim().to_string(), v.trim().to_string())
            .is_some()
        {
            return Err(WeaverError::Config(format!("duplicate key `{}`", k.trim())));
        }
    }
    Ok(map)
}
