//! Minimal reverse-mode differentiation over dense `f64` matrices, sized
//! for the seed autoencoder, the attention surrogate, the student regressor
//! and latent-space inference.

pub mod checkpoint;
pub mod gradcheck;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use optim::{adam_step, clamp_nonneg, AdamState};
pub use params::{Bound, Params};
pub use tape::{Gradients, Reduction, Tape, Var};
pub use tensor::Tensor;
