//! Reverse-mode automatic differentiation.

pub mod gradcheck;
pub mod ops;
pub mod tape;

pub use gradcheck::{
    grad_check, grad_check_with, param_grad_check, sample_probes, GradCheckOptions, GradCheckReport, ParamProbe,
};
pub use ops::concat;
pub use tape::{BackwardArgs, BackwardFn, Gradients, Tape, Var};
