//! The two sequence classifiers and their checkpoint format.

mod checkpoint;
mod lstm;
mod transformer;

use gaze_tensor::{Graph, ParamId, ParamSet, Real, Tensor, TensorError, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{load_checkpoint, load_checkpoint_as, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("batch of {got} values is not n x {m} x {l}")]
    BadBatch { got: usize, m: usize, l: usize },
    #[error("corrupt checkpoint: {0}")]
    CorruptFile(String),
    #[error("checkpoint schema version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint holds a {found} model, expected {expected}")]
    ArchMismatch { expected: Arch, found: Arch },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Lstm,
    Transformer,
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Arch::Lstm => "lstm",
            Arch::Transformer => "transformer",
        })
    }
}

impl std::str::FromStr for Arch {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lstm" => Ok(Arch::Lstm),
            "transformer" => Ok(Arch::Transformer),
            _ => Err(format!("unknown architecture {s:?} (expected lstm or transformer)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LstmConfig {
    pub m: usize,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "C")]
    pub c: usize,
    pub units: usize,
    pub layers: usize,
}

impl LstmConfig {
    pub fn new(m: usize, l: usize, c: usize) -> Self {
        Self {
            m,
            l,
            c,
            units: 64,
            layers: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub m: usize,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "C")]
    pub c: usize,
    pub blocks: usize,
    pub heads: usize,
    pub head_size: usize,
    pub ffn_hidden: usize,
    /// Final skip connection adds the raw input instead of the
    /// position-encoded one.
    #[serde(default)]
    pub skip_raw_input: bool,
}

impl TransformerConfig {
    pub fn new(m: usize, l: usize, c: usize) -> Self {
        Self {
            m,
            l,
            c,
            blocks: 2,
            heads: 2,
            head_size: l,
            ffn_hidden: 1024,
            skip_raw_input: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "snake_case")]
pub enum ModelConfig {
    Lstm(LstmConfig),
    Transformer(TransformerConfig),
}

impl ModelConfig {
    pub fn arch(&self) -> Arch {
        match self {
            ModelConfig::Lstm(_) => Arch::Lstm,
            ModelConfig::Transformer(_) => Arch::Transformer,
        }
    }

    /// Default configuration of `arch` for windows of `m` frames.
    pub fn for_arch(arch: Arch, m: usize, l: usize, c: usize) -> Self {
        match arch {
            Arch::Lstm => ModelConfig::Lstm(LstmConfig::new(m, l, c)),
            Arch::Transformer => ModelConfig::Transformer(TransformerConfig::new(m, l, c)),
        }
    }

    /// `(m, L, C)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        match self {
            ModelConfig::Lstm(c) => (c.m, c.l, c.c),
            ModelConfig::Transformer(c) => (c.m, c.l, c.c),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let (m, l, c) = self.dims();
        let bad = |msg: &str| Err(ModelError::InvalidConfig(msg.into()));
        if m == 0 || l == 0 || c == 0 {
            return bad("m, L and C must be at least 1");
        }
        match self {
            ModelConfig::Lstm(cfg) if cfg.units == 0 || cfg.layers == 0 => {
                bad("units and layers must be at least 1")
            }
            ModelConfig::Transformer(cfg)
                if cfg.blocks == 0 || cfg.heads == 0 || cfg.head_size == 0 || cfg.ffn_hidden == 0 =>
            {
                bad("blocks, heads, head_size and ffn_hidden must be at least 1")
            }
            _ => Ok(()),
        }
    }

    /// Closed-form trainable parameter count.
    pub fn param_count(&self) -> usize {
        match self {
            ModelConfig::Lstm(cfg) => {
                let u = cfg.units;
                let mut total = 0;
                let mut input = cfg.l;
                for _ in 0..cfg.layers {
                    total += 4 * (u * (input + u) + u);
                    input = u;
                }
                total + u * cfg.c + cfg.c
            }
            ModelConfig::Transformer(cfg) => {
                let (l, hd, f) = (cfg.l, cfg.heads * cfg.head_size, cfg.ffn_hidden);
                let attn = 3 * (l * hd + hd) + (hd * l + l);
                let norms = 2 * (2 * l);
                let ffn = (l * f + f) + (f * l + l);
                cfg.m * l + cfg.blocks * (attn + norms + ffn) + l * cfg.c + cfg.c
            }
        }
    }
}

/// A classifier mapping `(n, m, L)` windows to `(n, C)` label probabilities.
#[derive(Debug, Clone)]
pub struct SequenceModel<T: Real> {
    pub config: ModelConfig,
    pub params: ParamSet<T>,
}

fn zeros_param<T: Real>(set: &mut ParamSet<T>, name: String, n: usize) -> ParamId {
    set.add(name, Tensor::zeros(&[n]))
}

fn dense<T: Real, R: rand::Rng>(set: &mut ParamSet<T>, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) {
    set.add_glorot(format!("{name}/kernel"), &[fan_in, fan_out], fan_in, fan_out, rng);
    zeros_param(set, format!("{name}/bias"), fan_out);
}

impl<T: Real> SequenceModel<T> {
    /// Freshly initialized model; Glorot-uniform kernels and zero biases
    /// (LSTM forget-gate biases start at one).
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        match &config {
            ModelConfig::Lstm(cfg) => lstm::init(cfg, &mut params, &mut rng),
            ModelConfig::Transformer(cfg) => transformer::init(cfg, &mut params, &mut rng),
        }
        Ok(Self { config, params })
    }

    pub fn arch(&self) -> Arch {
        self.config.arch()
    }

    pub fn param_count(&self) -> usize {
        self.params.num_values()
    }

    pub(crate) fn p(&self, g: &Graph<T>, name: &str) -> Var {
        let id = self
            .params
            .find(name)
            .unwrap_or_else(|| panic!("model parameter {name} missing"));
        g.param(&self.params, id)
    }

    /// Records the forward pass on `g` for a batch-major flat input of
    /// `n * m * L` values; returns the `(n, C)` probability node.
    pub fn forward(&self, g: &Graph<T>, batch: &[T]) -> Result<Var, ModelError> {
        let (m, l, _) = self.config.dims();
        if batch.is_empty() || batch.len() % (m * l) != 0 {
            return Err(ModelError::BadBatch {
                got: batch.len(),
                m,
                l,
            });
        }
        let n = batch.len() / (m * l);
        match &self.config {
            ModelConfig::Lstm(cfg) => lstm::forward(self, cfg, g, batch, n),
            ModelConfig::Transformer(cfg) => transformer::forward(self, cfg, g, batch, n),
        }
    }

    /// Probabilities for a batch, one row per window.
    pub fn predict(&self, batch: &[T]) -> Result<Tensor<T>, ModelError> {
        let g = Graph::new();
        let probs = self.forward(&g, batch)?;
        let out = g.value(probs).clone();
        Ok(out)
    }

    /// Same model in another precision (optimizer state is reset).
    pub fn cast<U: Real>(&self) -> SequenceModel<U> {
        SequenceModel {
            config: self.config,
            params: self.params.cast(),
        }
    }
}

/// Model-level convenience for `f32` windows straight from a dataset.
impl SequenceModel<f32> {
    pub fn predict_windows(&self, windows: &[f32]) -> Result<Vec<Vec<f64>>, ModelError> {
        let probs = self.predict(windows)?;
        Ok((0..probs.rows())
            .map(|r| probs.row(r).iter().map(|&v| f64::from(v)).collect())
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_counts() {
        let cases = [
            (ModelConfig::Lstm(LstmConfig::new(24, 28, 5)), 57_157),
            (ModelConfig::Lstm(LstmConfig::new(30, 18, 3)), 54_467),
            (ModelConfig::Transformer(TransformerConfig::new(12, 28, 5)), 130_433),
            (ModelConfig::Transformer(TransformerConfig::new(30, 18, 3)), 81_989),
            (ModelConfig::Transformer(TransformerConfig::new(24, 28, 5)), 130_769),
        ];
        for (cfg, expected) in cases {
            assert_eq!(cfg.param_count(), expected, "{cfg:?}");
            let model = SequenceModel::<f32>::build(cfg, 1).unwrap();
            assert_eq!(model.param_count(), expected, "{cfg:?}");
        }
    }

    #[test]
    fn toy_lstm_count() {
        let mut cfg = LstmConfig::new(3, 1, 1);
        cfg.units = 1;
        let expected = 4 * (1 * 2 + 1) + 4 * (1 * 2 + 1) + (1 + 1);
        assert_eq!(expected, 26);
        let model = SequenceModel::<f64>::build(ModelConfig::Lstm(cfg), 0).unwrap();
        assert_eq!(model.param_count(), 26);
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = LstmConfig::new(3, 1, 1);
        cfg.units = 0;
        assert!(matches!(
            SequenceModel::<f32>::build(ModelConfig::Lstm(cfg), 0),
            Err(ModelError::InvalidConfig(_))
        ));
        assert!(matches!(
            SequenceModel::<f32>::build(ModelConfig::Transformer(TransformerConfig::new(0, 4, 2)), 0),
            Err(ModelError::InvalidConfig(_))
        ));
    }

    #[test]
    fn bad_batch_width() {
        let model = SequenceModel::<f32>::build(ModelConfig::Lstm(LstmConfig::new(4, 6, 3)), 0).unwrap();
        assert!(matches!(
            model.predict(&[0.0; 23]),
            Err(ModelError::BadBatch { got: 23, .. })
        ));
    }

    #[test]
    fn config_json_tags_arch() {
        let cfg = ModelConfig::Transformer(TransformerConfig::new(12, 28, 5));
        let json = serde_json::to_string(&cfg).unwrap();
        assert!(json.contains("\"arch\":\"transformer\""));
        assert_eq!(serde_json::from_str::<ModelConfig>(&json).unwrap(), cfg);
    }
}
