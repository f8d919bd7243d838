//! MLP autoencoder with hand-written backpropagation, SGD and proximal SGD
//! steps, and a linear probe for evaluating frozen embeddings.
//!
//! Loss convention: each point contributes the mean squared error over its
//! features and a dataset's loss is the sum over its points. Gradients are
//! taken of the batch loss divided by the batch size.

mod checkpoint;
mod model;
mod probe;

pub use checkpoint::{from_bytes, load_model, save_model, to_bytes};
pub use model::{mse_loss, param_count, Activation, Forward, Model};
pub use probe::{probe_eval, probe_train, ProbeConfig, ProbeHead};
