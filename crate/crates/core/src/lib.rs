//! Differentiable spring–mass simulation with learned, structure-preserving
//! model order reduction.
//!
//! The crate is organised bottom-up: [`graph`] (spring graphs and system
//! matrices), [`dynamics`] (integrator and adjoint), [`autodiff`] (tape,
//! parameters, Adam), [`gnn`] (encoder, Neural-CLASP pooling, parameter
//! heads), [`reduction`] (Galerkin projection and baselines), [`training`],
//! [`scenes`], [`io`] and [`metrics`].

pub mod autodiff;
pub mod dynamics;
pub mod error;
pub mod gnn;
pub mod graph;
pub mod io;
pub mod metrics;
pub mod reduction;
pub mod scenes;
pub mod training;

pub use dynamics::{ContactCoeffs, ControllerScript, DynamicState, MechParams, SimConfig, Trajectory};
pub use error::{Error, Result};
pub use gnn::AssignmentMatrix;
pub use graph::{Hierarchy, NodeType, SpringGraph, SystemMatrices, Vec3};
pub use scenes::{Scene, SceneKind};
pub use training::{Observation, TrainConfig, TrainedModel};

/// The random generator used throughout: seeded, portable and reproducible.
pub type SeededRng = rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    <SeededRng as rand::SeedableRng>::seed_from_u64(seed)
}
