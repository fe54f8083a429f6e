//! Knowledge distillation of dense teachers into compressed students: a
//! small reverse-mode tape, the three-term objective, coefficient
//! balancing, and a toy next-token experiment.

pub mod coefficients;
pub mod experiment;
pub mod gradcheck;
pub mod loss;
pub mod model;
pub mod tape;
pub mod task;
pub mod trainer;

pub use coefficients::{balance_spread, decide_coefficients, round_one_sig_fig, Anchor, LossRecord};
pub use experiment::{run_kd_experiment, ExperimentConfig, KdReport, RunSummary, SeedReport, Summary};
pub use gradcheck::{check_gradients, GradCheckReport};
pub use loss::{kd_loss, kd_step_loss, kd_terms, KdCoefficients, KlDirection, LossError, LossTerms};
pub use model::{operator_on_tape, ModelSpec, SequenceModel};
pub use tape::{AutodiffError, Gradients, NodeId, Tape};
pub use task::{Dataset, ToyTask};
pub use trainer::{
    evaluate, train, EpochRecord, LossConfig, OptimizerConfig, Sgd, TrainError, TrainOutcome, TrainTrace,
};
