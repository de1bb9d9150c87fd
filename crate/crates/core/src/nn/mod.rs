//! Dense tensors, reverse-mode differentiation, MLP layers and optimizers.

pub mod checkpoint;
pub mod network;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use network::{Activation, NetworkSpec};
pub use optim::{Optimizer, OptimizerKind, OptimizerSpec};
pub use tape::{Bound, Tape, Var};
pub use tensor::{soft_update, ParameterSet, Tensor};
