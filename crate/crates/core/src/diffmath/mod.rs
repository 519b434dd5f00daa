//! Dense tensors, a reverse-mode tape, fully connected networks and the two
//! optimizers used to train them.

mod fdcheck;
mod mlp;
mod optim;
mod tape;
mod tensor;

pub use fdcheck::{finite_diff_check, relative_error, FdOptions, FdReport, FD_ABS_FLOOR};
pub use mlp::{Activation, MlpParams, MlpTrace};
pub use optim::{OptimKind, OptimState, StepDecay, ADAM_DEFAULT_LR, RMSPROP_DEFAULT_LR};
pub use tape::{bce_term, Gradients, SparseMatrix, Tape, Var};
pub use tensor::{sigmoid, Tensor, SIGMOID_FLOOR};
