//! LSTM layers built from compressed operators, sequence evaluation and the
//! `ANTM` model file.

mod cell;
mod format;
mod model;

pub use cell::{lstm_step, LstmCell, LstmState, GATE_ORDER};
pub use format::{
    decode_metadata, decode_model, encode_model, load_model, model_bytes, save_model, ArrayEntry,
    FileMetadata, FormatError, LayerMetadata, FORMAT_VERSION, MAGIC,
};
pub use model::{lstm_sequence, LayerConfig, LstmConfig, LstmModel, ModelMetadata, SeqMode};
