//! Dense matrices, reverse-mode differentiation and the AdamW optimizer.

mod gradcheck;
mod optim;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, rel_err, GradCheck, FD_STEP, REL_FLOOR};
pub use optim::{AdamW, AdamWConfig};
pub use tape::{bce_logit, sigmoid, softmax_rows, softplus, Tape, Var, BCE_EPS, BCE_LOGIT_MAX};
pub use tensor::Tensor;
