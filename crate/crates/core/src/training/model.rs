//! Next-token model used for distillation: a one-hot embedding, one LSTM
//! layer with compressed transforms, and a dense softmax classifier.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{CompressionConfig, MixSide, OperatorKind, OperatorSpec};
use crate::error::ConfigError;
use crate::linalg::gemv;
use crate::operators::{factor_layout, CompressedLinear};
use crate::rnn::{LstmCell, LstmState};

use super::tape::{softmax, AutodiffError, NodeId, Tape};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub input_op: OperatorSpec,
    pub hidden_op: OperatorSpec,
}

impl ModelSpec {
    pub fn uniform(dim: usize, op: OperatorSpec) -> Self {
        ModelSpec {
            embed_dim: dim,
            hidden_dim: dim,
            input_op: op,
            hidden_op: op,
        }
    }

    pub fn input_config(&self) -> CompressionConfig {
        self.input_op.at(4 * self.hidden_dim, self.embed_dim)
    }

    pub fn hidden_config(&self) -> CompressionConfig {
        self.hidden_op.at(4 * self.hidden_dim, self.hidden_dim)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.embed_dim == 0 {
            return Err(ConfigError::Zero { field: "embed_dim" });
        }
        if self.hidden_dim == 0 {
            return Err(ConfigError::Zero { field: "hidden_dim" });
        }
        self.input_config().validate()?;
        self.hidden_config().validate()
    }
}

/// Parameters are stored as flat tensors in a fixed order: embedding
/// (`embed x vocab`), input-transform factors, hidden-transform factors,
/// gate bias, output weight (`vocab x hidden`), output bias.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceModel {
    vocab: usize,
    spec: ModelSpec,
    pub params: Vec<Vec<f64>>,
}

impl SequenceModel {
    pub fn init(vocab: usize, spec: &ModelSpec, seed: u64) -> Result<Self, ConfigError> {
        spec.validate()?;
        if vocab == 0 {
            return Err(ConfigError::Zero { field: "vocab" });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |len: usize, bound: f64| -> Vec<f64> {
            let u = Uniform::new_inclusive(-bound, bound);
            (0..len).map(|_| u.sample(&mut rng)).collect()
        };
        let (e, h) = (spec.embed_dim, spec.hidden_dim);
        let mut params = vec![uniform(e * vocab, 0.5)];
        for cfg in [spec.input_config(), spec.hidden_config()] {
            for l in factor_layout(&cfg)? {
                params.push(uniform(l.len(), 1.0 / (l.fan_in() as f64).sqrt()));
            }
        }
        let hb = 1.0 / (h as f64).sqrt();
        params.push(uniform(4 * h, hb));
        params.push(uniform(vocab * h, hb));
        params.push(uniform(vocab, hb));
        Ok(SequenceModel {
            vocab,
            spec: spec.clone(),
            params,
        })
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Vec::len).sum()
    }

    fn factor_counts(&self) -> (usize, usize) {
        (
            self.spec.input_op.kind.factor_count(),
            self.spec.hidden_op.kind.factor_count(),
        )
    }

    /// The LSTM layer the parameters describe.
    pub fn cell(&self) -> Result<LstmCell, ConfigError> {
        let (ni, nh) = self.factor_counts();
        let w_input =
            CompressedLinear::from_factors(&self.spec.input_config(), self.params[1..1 + ni].to_vec())?;
        let w_hidden = CompressedLinear::from_factors(
            &self.spec.hidden_config(),
            self.params[1 + ni..1 + ni + nh].to_vec(),
        )?;
        LstmCell::new(w_input, w_hidden, self.params[1 + ni + nh].clone())
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<(), AutodiffError> {
        match tokens.iter().find(|&&t| t >= self.vocab) {
            Some(t) => Err(AutodiffError::Shape {
                op: "sequence_model",
                detail: format!("token {t} outside vocabulary of {}", self.vocab),
            }),
            None => Ok(()),
        }
    }

    fn one_hot(&self, t: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.vocab];
        x[t] = 1.0;
        x
    }

    /// Next-token distributions after each of `tokens`.
    pub fn predict(&self, tokens: &[usize]) -> Result<Vec<Vec<f64>>, AutodiffError> {
        self.check_tokens(tokens)?;
        let cell = self.cell().map_err(|e| AutodiffError::Shape {
            op: "sequence_model",
            detail: e.to_string(),
        })?;
        let n = self.params.len();
        let (e, h, v) = (self.spec.embed_dim, self.spec.hidden_dim, self.vocab);
        let (out_w, out_b) = (&self.params[n - 2], &self.params[n - 1]);
        let mut state = LstmState::zeros(h);
        let mut out = Vec::with_capacity(tokens.len());
        for &t in tokens {
            let mut x = vec![0.0; e];
            gemv(e, v, &self.params[0], &self.one_hot(t), &mut x);
            state = cell.step(&x, &state).expect("dimensions fixed at init");
            let mut logits = vec![0.0; v];
            gemv(v, h, out_w, &state.h, &mut logits);
            for (l, b) in logits.iter_mut().zip(out_b) {
                *l += b;
            }
            out.push(softmax(&logits));
        }
        Ok(out)
    }

    /// Records the same forward pass on `tape`, reading parameters from
    /// `ids` (one node per tensor, in storage order). Returns the
    /// per-step distribution nodes.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        ids: &[NodeId],
        tokens: &[usize],
    ) -> Result<Vec<NodeId>, AutodiffError> {
        self.check_tokens(tokens)?;
        if ids.len() != self.params.len() {
            return Err(AutodiffError::Shape {
                op: "sequence_model",
                detail: format!("{} parameter nodes for {} tensors", ids.len(), self.params.len()),
            });
        }
        let (ni, nh) = self.factor_counts();
        let (e, h, v) = (self.spec.embed_dim, self.spec.hidden_dim, self.vocab);
        let embed = ids[0];
        let w_in = &ids[1..1 + ni];
        let w_hid = &ids[1 + ni..1 + ni + nh];
        let bias = ids[1 + ni + nh];
        let (out_w, out_b) = (ids[ids.len() - 2], ids[ids.len() - 1]);
        let (cfg_in, cfg_hid) = (self.spec.input_config(), self.spec.hidden_config());

        let mut hs = tape.constant(vec![0.0; h]);
        let mut cs = tape.constant(vec![0.0; h]);
        let mut out = Vec::with_capacity(tokens.len());
        for &t in tokens {
            let onehot = tape.constant(self.one_hot(t));
            let x = tape.matvec(embed, onehot, e, v)?;
            let a = operator_on_tape(tape, &cfg_in, w_in, x)?;
            let b = operator_on_tape(tape, &cfg_hid, w_hid, hs)?;
            let ab = tape.add(a, b)?;
            let z = tape.add(ab, bias)?;
            let gate = |tape: &mut Tape, k: usize| tape.slice(z, k * h, h);
            let (zi, zf, zg, zo) = (gate(tape, 0)?, gate(tape, 1)?, gate(tape, 2)?, gate(tape, 3)?);
            let i = tape.sigmoid(zi);
            let f = tape.sigmoid(zf);
            let g = tape.tanh(zg);
            let o = tape.sigmoid(zo);
            let fc = tape.mul(f, cs)?;
            let ig = tape.mul(i, g)?;
            cs = tape.add(fc, ig)?;
            let tc = tape.tanh(cs);
            hs = tape.mul(o, tc)?;
            let logits = tape.matvec(out_w, hs, v, h)?;
            let logits = tape.add(logits, out_b)?;
            out.push(tape.softmax(logits));
        }
        Ok(out)
    }
}

/// Records `W x` for a compressed `W` whose factor nodes are given in
/// storage order, composing the same primitives as the inference path.
pub fn operator_on_tape(
    tape: &mut Tape,
    cfg: &CompressionConfig,
    factors: &[NodeId],
    x: NodeId,
) -> Result<NodeId, AutodiffError> {
    let bad = |detail: String| AutodiffError::Shape {
        op: "operator_on_tape",
        detail,
    };
    cfg.validate().map_err(|e| bad(e.to_string()))?;
    if factors.len() != cfg.kind.factor_count() {
        return Err(bad(format!(
            "{} takes {} factors, got {}",
            cfg.kind,
            cfg.kind.factor_count(),
            factors.len()
        )));
    }
    let (m, n) = (cfg.m, cfg.n);
    match cfg.kind {
        OperatorKind::Dense => tape.matvec(factors[0], x, m, n),
        OperatorKind::Svd => {
            let k = cfg.rank().unwrap();
            let u = tape.matvec(factors[0], x, k, n)?;
            tape.matvec(factors[1], u, m, k)
        }
        OperatorKind::LgpShuffle => {
            let g = cfg.g.unwrap();
            let v = tape.block_diag_mv(factors[0], x, m, n, g)?;
            tape.shuffle(v, g)
        }
        OperatorKind::LgpDense => {
            let g = cfg.g.unwrap();
            let s = cfg.mix_size().unwrap();
            match cfg.effective_mix_side().unwrap() {
                MixSide::After => {
                    let v = tape.block_diag_mv(factors[0], x, m, n, g)?;
                    tape.matvec(factors[1], v, s, s)
                }
                MixSide::Before => {
                    let u = tape.matvec(factors[1], x, s, s)?;
                    tape.block_diag_mv(factors[0], u, m, n, g)
                }
            }
        }
        OperatorKind::LowRankLgp => {
            let k = cfg.rank().unwrap();
            let u = tape.block_diag_mv(factors[0], x, k, n, cfg.g_in.unwrap())?;
            let v = tape.matvec(factors[1], u, k, k)?;
            tape.block_diag_mv(factors[2], v, m, k, cfg.g_out.unwrap())
        }
    }
}
