//! Structure-preserving projection of spring systems onto coarser graphs,
//! plus non-learned reduction baselines.

mod baselines;
mod galerkin;

pub use baselines::*;
pub use galerkin::*;
