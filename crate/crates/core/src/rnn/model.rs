use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{CompressionConfig, OperatorSpec};
use crate::error::{ConfigError, ShapeError};
use crate::linalg::Scalar;
use crate::operators::{CompressedLinear, Exec};

use super::cell::{LstmCell, LstmState};

/// How the input transforms of a sequence are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeqMode {
    /// Each layer's input transform is applied to all timesteps as one
    /// batched product before its recurrence runs.
    Fused,
    /// Input and hidden transforms applied step by step.
    Naive,
}

/// Shape and compression recipe of one stacked layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerConfig {
    pub hidden_dim: usize,
    pub input_op: OperatorSpec,
    pub hidden_op: OperatorSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmConfig {
    pub input_dim: usize,
    pub layers: Vec<LayerConfig>,
}

impl LstmConfig {
    /// A stack of identical layers with `input_dim == hidden_dim == dim`.
    pub fn uniform(dim: usize, layers: usize, op: OperatorSpec) -> Self {
        LstmConfig {
            input_dim: dim,
            layers: (0..layers)
                .map(|_| LayerConfig {
                    hidden_dim: dim,
                    input_op: op,
                    hidden_op: op,
                })
                .collect(),
        }
    }

    /// Dimensioned operator configs `(input, hidden)` per layer.
    pub fn operator_configs(&self) -> Vec<(CompressionConfig, CompressionConfig)> {
        let mut input_dim = self.input_dim;
        self.layers
            .iter()
            .map(|l| {
                let h = l.hidden_dim;
                let pair = (l.input_op.at(4 * h, input_dim), l.hidden_op.at(4 * h, h));
                input_dim = h;
                pair
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub name: String,
    pub seed: u64,
}

/// Stacked LSTM; layer `k + 1` consumes the hidden state of layer `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmModel<T = f64> {
    layers: Vec<LstmCell<T>>,
    pub metadata: ModelMetadata,
}

impl<T: Scalar> LstmModel<T> {
    pub fn new(layers: Vec<LstmCell<T>>, metadata: ModelMetadata) -> Result<Self, ConfigError> {
        if layers.is_empty() {
            return Err(ConfigError::Invalid("model needs at least one layer".into()));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[1].input_dim() != pair[0].hidden_dim() {
                return Err(ConfigError::Invalid(format!(
                    "layer {} expects input {}, layer {} produces {}",
                    k + 1,
                    pair[1].input_dim(),
                    k,
                    pair[0].hidden_dim()
                )));
            }
        }
        Ok(LstmModel { layers, metadata })
    }

    /// Seeded model: operators via [`CompressedLinear::init_with_rng`],
    /// biases uniform in `[-1/sqrt(h), 1/sqrt(h)]`.
    pub fn init(name: &str, config: &LstmConfig, seed: u64) -> Result<Self, ConfigError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(config.layers.len());
        for (in_cfg, hid_cfg) in config.operator_configs() {
            let w_input = CompressedLinear::init_with_rng(&in_cfg, &mut rng)?;
            let w_hidden = CompressedLinear::init_with_rng(&hid_cfg, &mut rng)?;
            let bound = 1.0 / (hid_cfg.n as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound);
            let bias = (0..hid_cfg.m)
                .map(|_| T::from_f64(dist.sample(&mut rng)).unwrap())
                .collect();
            layers.push(LstmCell::new(w_input, w_hidden, bias)?);
        }
        Self::new(
            layers,
            ModelMetadata {
                name: name.to_string(),
                seed,
            },
        )
    }

    pub fn layers(&self) -> &[LstmCell<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LstmCell<T>] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().hidden_dim()
    }

    pub fn config(&self) -> LstmConfig {
        LstmConfig {
            input_dim: self.input_dim(),
            layers: self
                .layers
                .iter()
                .map(|c| LayerConfig {
                    hidden_dim: c.hidden_dim(),
                    input_op: c.w_input.config().spec(),
                    hidden_op: c.w_hidden.config().spec(),
                })
                .collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LstmCell::param_count).sum()
    }

    pub fn cast<U: Scalar>(&self) -> LstmModel<U> {
        LstmModel {
            layers: self.layers.iter().map(LstmCell::cast).collect(),
            metadata: self.metadata.clone(),
        }
    }

    /// The same model with every operator replaced by its dense
    /// materialization.
    pub fn materialized(&self) -> LstmModel<T> {
        LstmModel {
            layers: self.layers.iter().map(LstmCell::materialized).collect(),
            metadata: self.metadata.clone(),
        }
    }

    /// Runs `steps` inputs stacked in `xs` (`steps x input_dim`) from a zero
    /// state and returns the top layer's hidden state per step
    /// (`steps x output_dim`).
    pub fn run_flat(&self, steps: usize, xs: &[T], mode: SeqMode, exec: Exec) -> Result<Vec<T>, ShapeError> {
        ShapeError::check("sequence input", steps * self.input_dim(), xs.len())?;
        if steps == 0 {
            return Ok(Vec::new());
        }
        match mode {
            SeqMode::Fused => {
                let mut current = xs.to_vec();
                for cell in &self.layers {
                    let h = cell.hidden_dim();
                    let projected = cell.w_input.apply_batch(steps, &current, exec)?;
                    let mut state = LstmState::zeros(h);
                    let mut out = Vec::with_capacity(steps * h);
                    for p in projected.chunks(4 * h) {
                        state = cell.recur(p, &state, exec)?;
                        out.extend_from_slice(&state.h);
                    }
                    current = out;
                }
                Ok(current)
            }
            SeqMode::Naive => {
                let mut states: Vec<LstmState<T>> = self
                    .layers
                    .iter()
                    .map(|c| LstmState::zeros(c.hidden_dim()))
                    .collect();
                let d = self.input_dim();
                let mut out = Vec::with_capacity(steps * self.output_dim());
                for x in xs.chunks(d) {
                    let mut input = x.to_vec();
                    for (cell, state) in self.layers.iter().zip(states.iter_mut()) {
                        *state = cell.step_with(&input, state, exec)?;
                        input.clone_from(&state.h);
                    }
                    out.extend_from_slice(&input);
                }
                Ok(out)
            }
        }
    }

    pub fn run(&self, inputs: &[Vec<T>], mode: SeqMode, exec: Exec) -> Result<Vec<Vec<T>>, ShapeError> {
        let d = self.input_dim();
        for x in inputs {
            ShapeError::check("sequence input", d, x.len())?;
        }
        let flat = inputs.concat();
        let out = self.run_flat(inputs.len(), &flat, mode, exec)?;
        Ok(out.chunks(self.output_dim()).map(<[T]>::to_vec).collect())
    }
}

/// Top-layer hidden state for each input step.
pub fn lstm_sequence<T: Scalar>(
    model: &LstmModel<T>,
    inputs: &[Vec<T>],
    mode: SeqMode,
) -> Result<Vec<Vec<T>>, ShapeError> {
    model.run(inputs, mode, Exec::Serial)
}
