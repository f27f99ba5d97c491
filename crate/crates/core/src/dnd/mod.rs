//! Touch-sequence decoders behind one interface.

mod baseline;
mod checkpoint;
mod config;
mod decode;
pub mod model;

pub use baseline::GaussianBaseline;
pub use checkpoint::{Checkpoint, CheckpointHeader, FORMAT_VERSION};
pub use config::{DndConfig, Variant};
pub use decode::{decode_stream, select, select_indices, DecodeState, Decoder, Model};
pub use model::{check_model_gradients, Batch, Layout, LossSums, Mode, NeuralDecoder};
