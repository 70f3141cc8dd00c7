//! Dense kernels, a small ReLU MLP with exact backpropagation, momentum SGD
//! with a cosine schedule, and EMA parameter tracking.

mod matrix;
mod mlp;
mod optim;

pub use matrix::Matrix;
pub use mlp::{argmax, log_softmax, softmax, Mlp, Params, Tape};
pub(crate) use mlp::softmax_row;
pub use optim::{cosine_lr, sgd_step, LrSchedule, OptimizerState};
