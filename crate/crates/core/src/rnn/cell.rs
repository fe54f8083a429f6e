use crate::error::{ConfigError, ShapeError};
use crate::linalg::Scalar;
use crate::operators::{CompressedLinear, Exec};

/// Gate blocks of the `4h` pre-activation vector, in storage order.
pub const GATE_ORDER: [&str; 4] = ["input", "forget", "cell", "output"];

/// One LSTM layer whose input and hidden transforms are compressed
/// operators. The bias is dense and is never compressed.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell<T = f64> {
    input_dim: usize,
    hidden_dim: usize,
    pub w_input: CompressedLinear<T>,
    pub w_hidden: CompressedLinear<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState<T = f64> {
    pub h: Vec<T>,
    pub c: Vec<T>,
}

impl<T: Scalar> LstmState<T> {
    pub fn zeros(hidden_dim: usize) -> Self {
        LstmState {
            h: vec![T::zero(); hidden_dim],
            c: vec![T::zero(); hidden_dim],
        }
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(z: T) -> T {
    T::one() / (T::one() + (-z).exp())
}

impl<T: Scalar> LstmCell<T> {
    pub fn new(
        w_input: CompressedLinear<T>,
        w_hidden: CompressedLinear<T>,
        bias: Vec<T>,
    ) -> Result<Self, ConfigError> {
        let hidden_dim = w_hidden.in_dim();
        let gates = 4 * hidden_dim;
        if w_hidden.out_dim() != gates {
            return Err(ConfigError::Invalid(format!(
                "hidden transform must map {hidden_dim} -> {gates}, got {} -> {}",
                w_hidden.in_dim(),
                w_hidden.out_dim()
            )));
        }
        if w_input.out_dim() != gates {
            return Err(ConfigError::Invalid(format!(
                "input transform must produce {gates} gate values, got {}",
                w_input.out_dim()
            )));
        }
        if bias.len() != gates {
            return Err(ConfigError::FactorSize {
                field: "bias".into(),
                expected: gates,
                found: bias.len(),
            });
        }
        if bias.iter().any(|b| !b.is_finite()) {
            return Err(ConfigError::NonFinite { field: "bias".into() });
        }
        w_input.validate()?;
        w_hidden.validate()?;
        Ok(LstmCell {
            input_dim: w_input.in_dim(),
            hidden_dim,
            w_input,
            w_hidden,
            bias,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn param_count(&self) -> usize {
        self.w_input.param_count() + self.w_hidden.param_count() + self.bias.len()
    }

    pub fn cast<U: Scalar>(&self) -> LstmCell<U> {
        LstmCell {
            input_dim: self.input_dim,
            hidden_dim: self.hidden_dim,
            w_input: self.w_input.cast(),
            w_hidden: self.w_hidden.cast(),
            bias: crate::linalg::cast_slice(&self.bias),
        }
    }

    /// Same cell with both transforms replaced by their dense
    /// materializations.
    pub fn materialized(&self) -> LstmCell<T> {
        LstmCell {
            input_dim: self.input_dim,
            hidden_dim: self.hidden_dim,
            w_input: CompressedLinear::Dense(self.w_input.materialize()),
            w_hidden: CompressedLinear::Dense(self.w_hidden.materialize()),
            bias: self.bias.clone(),
        }
    }

    pub fn step(&self, x: &[T], state: &LstmState<T>) -> Result<LstmState<T>, ShapeError> {
        self.step_with(x, state, Exec::Serial)
    }

    pub fn step_with(&self, x: &[T], state: &LstmState<T>, exec: Exec) -> Result<LstmState<T>, ShapeError> {
        ShapeError::check("lstm input", self.input_dim, x.len())?;
        let projected = self.w_input.apply_with(x, exec)?;
        self.recur(&projected, state, exec)
    }

    /// The recurrent half of a step, given the already projected input
    /// `W_input x`.
    pub(crate) fn recur(
        &self,
        projected: &[T],
        state: &LstmState<T>,
        exec: Exec,
    ) -> Result<LstmState<T>, ShapeError> {
        let h = self.hidden_dim;
        ShapeError::check("lstm hidden state", h, state.h.len())?;
        ShapeError::check("lstm cell state", h, state.c.len())?;
        let recurrent = self.w_hidden.apply_with(&state.h, exec)?;
        let z: Vec<T> = projected
            .iter()
            .zip(&recurrent)
            .zip(&self.bias)
            .map(|((&a, &b), &bias)| a + b + bias)
            .collect();
        let mut next = LstmState::zeros(h);
        for k in 0..h {
            let i = sigmoid(z[k]);
            let f = sigmoid(z[h + k]);
            let g = z[2 * h + k].tanh();
            let o = sigmoid(z[3 * h + k]);
            let c = f * state.c[k] + i * g;
            next.c[k] = c;
            next.h[k] = o * c.tanh();
        }
        Ok(next)
    }
}

pub fn lstm_step<T: Scalar>(
    cell: &LstmCell<T>,
    x: &[T],
    state: &LstmState<T>,
) -> Result<LstmState<T>, ShapeError> {
    cell.step(x, state)
}
