use std::fmt;

use thiserror::Error;

/// A violated structural constraint on an operator or compression config.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("{field} must be positive")]
    Zero { field: &'static str },
    #[error("{divisor} must divide {dividend}")]
    Divisibility {
        divisor: &'static str,
        dividend: &'static str,
    },
    #[error("{kind} requires parameter {field}")]
    MissingParameter { kind: &'static str, field: &'static str },
    #[error("{field} contains a non-finite value")]
    NonFinite { field: String },
    #[error("{field}: expected {expected} values, found {found}")]
    FactorSize {
        field: String,
        expected: usize,
        found: usize,
    },
    #[error("{0}")]
    Invalid(String),
}

impl ConfigError {
    pub(crate) fn divides(divisor: &'static str, dividend: &'static str) -> Self {
        ConfigError::Divisibility { divisor, dividend }
    }
}

/// Dimension mismatch between an operator and its argument.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct ShapeError {
    pub context: &'static str,
    pub expected: usize,
    pub found: usize,
}

impl fmt::Display for ShapeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "shape mismatch in {}: expected length {}, found {}",
            self.context, self.expected, self.found
        )
    }
}

impl ShapeError {
    pub(crate) fn check(context: &'static str, expected: usize, found: usize) -> Result<(), Self> {
        if expected == found {
            Ok(())
        } else {
            Err(ShapeError {
                context,
                expected,
                found,
            })
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Format(#[from] crate::rnn::FormatError),
    #[error(transparent)]
    Autodiff(#[from] crate::training::AutodiffError),
    #[error(transparent)]
    Train(#[from] crate::training::TrainError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
