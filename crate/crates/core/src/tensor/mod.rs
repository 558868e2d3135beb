//! Dense matrices, named parameters, and the differentiation tape.

mod gradcheck;
mod params;
mod tape;

pub use gradcheck::{gradient_check, worst, TensorCheck, GRAD_NORM_FLOOR};
pub use params::{Grads, Mat, ParamId, ParamStore};
pub use tape::{bce_with_logit, sigmoid, Tape, Var, LN_EPS};
