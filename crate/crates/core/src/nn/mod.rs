//! Minimal dense-network toolkit with reverse-mode autodiff.

pub mod checkpoint;
pub mod layers;
pub mod loss;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use layers::{Activation, DenseLayer, ResidualBlock};
pub use loss::{mae_grad, mae_loss};
pub use optim::{Optimizer, OptimizerKind};
pub use params::{orthogonal_init, ParamId, ParamStore};
pub use tape::{silu, Tape, Var};
pub use tensor::Tensor2;
