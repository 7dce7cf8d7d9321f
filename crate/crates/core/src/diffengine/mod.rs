//! Minimal reverse-mode differentiation engine.
//!
//! Scope is the closed set of ops the autoencoders need: dense maps, tanh,
//! elementwise exp/log/square and arithmetic, a few reductions, concat and
//! slice. Everything is rank 2.

mod adam;
mod gradcheck;
mod layers;
mod tape;
mod tensor;

pub use adam::{adam_step, clip_global_norm, AdamConfig, AdamState};
pub use gradcheck::{check_gradients, relative_error, GradCheck};
pub use layers::{rnn_step, Activation, BoundDense, BoundRnn, DenseLayer, RnnCell};
pub use tape::{concat_cols, concat_rows, Gradients, Tape, Var};
pub use tensor::Tensor;
