//! Batch-normalized ReLU networks with hand-written backpropagation,
//! first-order optimizers and a binary model archive.

mod io;
mod mlp;
mod optim;

pub use io::{load_model, save_model};
pub use mlp::{
    relu_clamp_head, relu_clamp_head_backward, BatchNorm, Dense, ForwardCache, MlpModel, ParamGrads, BN_EPS,
    BN_MOMENTUM,
};
pub use optim::{step, OptimizerKind, OptimizerState};
