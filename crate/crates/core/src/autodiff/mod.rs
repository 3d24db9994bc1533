//! Reverse-mode differentiation, parameters and optimisation.

mod adam;
mod fdcheck;
mod params;
mod tape;

pub use adam::{adam_update, AdamConfig, AdamState};
pub use fdcheck::{finite_diff_check, finite_diff_check_at, relative_error, FdReport, FdSample};
pub use params::{grad, Gradients, Param, ParamStore};
pub use tape::{hard_rows, sigmoid, smooth_min, softplus, CustomOp, Tape, Tensor, Var};
