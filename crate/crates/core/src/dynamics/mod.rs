//! Forward integration of the spring–mass system with ground contact and
//! kinematic controllers.

mod sim;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{NodeType, SpringGraph, Vec3};

pub use sim::{PhysGrads, PhysInputs, RolloutProblem};

/// Velocity floor of the smoothed Coulomb cap (m/s).
pub const FRICTION_EPS: f64 = 1e-4;
/// Edges shorter than this use a fallback direction in rest-length mode.
pub const DEGENERATE_LENGTH: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct DynamicState {
    pub positions: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
    pub frame: usize,
}

impl DynamicState {
    pub fn at_rest(positions: Vec<Vec3>) -> Self {
        let n = positions.len();
        DynamicState { positions, velocities: vec![[0.0; 3]; n], frame: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactCoeffs {
    pub restitution: f64,
    pub friction: f64,
    pub contact_stiffness: f64,
}

impl Default for ContactCoeffs {
    fn default() -> Self {
        ContactCoeffs { restitution: 0.2, friction: 0.5, contact_stiffness: 1000.0 }
    }
}

impl ContactCoeffs {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.restitution) || !(self.friction >= 0.0) || !(self.contact_stiffness > 0.0) {
            return Err(Error::InvalidConfig(format!("contact coefficients out of range: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MechParams {
    pub stiffness: Vec<f64>,
    pub d_dp: f64,
    pub d_dr: f64,
    pub contact: ContactCoeffs,
}

impl MechParams {
    pub fn uniform(edges: usize, s: f64, d_dp: f64, d_dr: f64) -> Self {
        MechParams { stiffness: vec![s; edges], d_dp, d_dr, contact: ContactCoeffs::default() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControllerScript {
    pub indices: Vec<usize>,
    /// `trajectory[t][k]` is the target of controller `indices[k]` at frame `t`.
    pub trajectory: Vec<Vec<Vec3>>,
}

impl ControllerScript {
    pub fn empty(frames: usize) -> Self {
        ControllerScript { indices: Vec::new(), trajectory: vec![Vec::new(); frames + 1] }
    }

    /// Script holding every controller of `graph` at its initial position.
    pub fn stationary(graph: &SpringGraph, frames: usize) -> Self {
        let indices = graph.indices_of(NodeType::Controller);
        let row: Vec<Vec3> = indices.iter().map(|&i| graph.positions0[i]).collect();
        ControllerScript { indices, trajectory: vec![row; frames + 1] }
    }

    pub fn frames(&self) -> usize {
        self.trajectory.len().saturating_sub(1)
    }

    pub fn validate(&self, graph: &SpringGraph, frames: usize) -> Result<()> {
        if self.indices != graph.indices_of(NodeType::Controller) {
            return Err(Error::InvalidConfig("script indices differ from the controller nodes".into()));
        }
        if self.trajectory.len() < frames + 1 {
            return Err(Error::InvalidConfig(format!(
                "script covers {} frames, {} requested",
                self.frames(),
                frames
            )));
        }
        for row in &self.trajectory[..=frames] {
            if row.len() != self.indices.len() || row.iter().flatten().any(|c| !c.is_finite()) {
                return Err(Error::InvalidConfig("malformed controller trajectory".into()));
            }
        }
        Ok(())
    }

    pub fn truncated(&self, frames: usize) -> Self {
        ControllerScript { indices: self.indices.clone(), trajectory: self.trajectory[..=frames].to_vec() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ForceMode {
    #[default]
    RestLength,
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    #[default]
    SymplecticEuler,
    /// Position update with the old velocity. Kept for debugging only.
    ExplicitEuler,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub substeps: usize,
    pub gravity: Vec3,
    /// Height of the ground plane; `None` disables contact.
    pub ground: Option<f64>,
    pub mode: ForceMode,
    pub integrator: Integrator,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 1.0 / 30.0,
            substeps: 667,
            gravity: [0.0, 0.0, -9.81],
            ground: Some(0.0),
            mode: ForceMode::RestLength,
            integrator: Integrator::SymplecticEuler,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if self.substeps == 0 {
            return Err(Error::InvalidConfig("substeps must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub positions: Vec<Vec<Vec3>>,
    pub velocities: Option<Vec<Vec<Vec3>>>,
}

impl Trajectory {
    pub fn frames(&self) -> usize {
        self.positions.len().saturating_sub(1)
    }

    pub fn nodes(&self) -> usize {
        self.positions.first().map_or(0, |p| p.len())
    }

    pub fn state(&self, t: usize) -> DynamicState {
        let n = self.nodes();
        DynamicState {
            positions: self.positions[t].clone(),
            velocities: self.velocities.as_ref().map_or(vec![[0.0; 3]; n], |v| v[t].clone()),
            frame: t,
        }
    }

    /// Positions of the given nodes at every frame, as a script.
    pub fn script_for(&self, indices: &[usize]) -> ControllerScript {
        ControllerScript {
            indices: indices.to_vec(),
            trajectory: self.positions.iter().map(|f| indices.iter().map(|&i| f[i]).collect()).collect(),
        }
    }
}

/// Spring forces, also returning the number of degenerate edges hit.
pub fn spring_force(
    state: &DynamicState,
    graph: &SpringGraph,
    params: &MechParams,
    mode: ForceMode,
) -> (Vec<Vec3>, usize) {
    let mut f = vec![[0.0; 3]; graph.node_count()];
    let degenerate =
        sim::accumulate_springs(&state.positions, &graph.edges, &params.stiffness, &graph.rest_lengths, mode, &mut f);
    if degenerate > 0 {
        log::debug!("DegenerateEdge: {degenerate} edges shorter than {DEGENERATE_LENGTH} m");
    }
    (f, degenerate)
}

pub fn damping_force(state: &DynamicState, graph: &SpringGraph, params: &MechParams) -> Result<Vec<Vec3>> {
    let mut f = vec![[0.0; 3]; graph.node_count()];
    sim::accumulate_damping(&state.velocities, &graph.edges, params.d_dp, params.d_dr, &mut f);
    if f.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::NumericalError("non-finite damping force".into()));
    }
    Ok(f)
}

/// Penalty contact against the plane `z = plane_height`, evaluated explicitly.
pub fn contact_force(state: &DynamicState, contact: &ContactCoeffs, plane_height: f64) -> Vec<Vec3> {
    let (e, mu, kc) = (contact.restitution, contact.friction, contact.contact_stiffness);
    state
        .positions
        .iter()
        .zip(&state.velocities)
        .map(|(x, v)| {
            let p = plane_height - x[2];
            if p <= 0.0 {
                return [0.0; 3];
            }
            let fz = kc * p * (1.0 + e) - kc * e * v[2].min(0.0);
            let vt = (v[0] * v[0] + v[1] * v[1]).sqrt();
            let ct = (mu * fz / (vt + FRICTION_EPS)).min(kc);
            [-ct * v[0], -ct * v[1], fz]
        })
        .collect()
}

/// Linear momentum `Σ m_i v_i`.
pub fn momentum(masses: &[f64], velocities: &[Vec3]) -> Vec3 {
    let mut p = [0.0; 3];
    for (m, v) in masses.iter().zip(velocities) {
        for c in 0..3 {
            p[c] += m * v[c];
        }
    }
    p
}

/// Kinetic plus elastic energy, plus gravitational potential `-m g·x`.
pub fn mechanical_energy(
    state: &DynamicState,
    graph: &SpringGraph,
    params: &MechParams,
    mode: ForceMode,
    gravity: Vec3,
) -> f64 {
    let mut e = 0.0;
    for i in 0..graph.node_count() {
        let (x, v, m) = (state.positions[i], state.velocities[i], graph.masses[i]);
        e += 0.5 * m * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
        e -= m * (gravity[0] * x[0] + gravity[1] * x[1] + gravity[2] * x[2]);
    }
    for (k, &(i, j)) in graph.edges.iter().enumerate() {
        let s = params.stiffness[k];
        let d = crate::graph::dist(&state.positions[i], &state.positions[j]);
        e += match mode {
            ForceMode::RestLength => 0.5 * s * (d - graph.rest_lengths[k]).powi(2),
            ForceMode::Linear => 0.5 * s * d * d,
        };
    }
    e
}

pub fn kinetic_energy(masses: &[f64], velocities: &[Vec3]) -> f64 {
    masses.iter().zip(velocities).map(|(m, v)| 0.5 * m * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2])).sum()
}

/// Advances one frame.
pub fn step(
    state: &DynamicState,
    script: &ControllerScript,
    graph: &SpringGraph,
    params: &MechParams,
    config: &SimConfig,
) -> Result<DynamicState> {
    let problem = RolloutProblem::new(graph, script.clone(), config.clone())?;
    let inputs = PhysInputs::from_params(graph, params, state);
    problem.step_frame(&inputs, state)
}

/// Rolls the system out for `frames` frames from `z0`.
pub fn rollout(
    z0: &DynamicState,
    script: &ControllerScript,
    graph: &SpringGraph,
    params: &MechParams,
    config: &SimConfig,
    frames: usize,
) -> Result<Trajectory> {
    if frames == 0 {
        return Err(Error::InvalidConfig("rollout needs at least one frame".into()));
    }
    let problem = RolloutProblem::new(graph, script.truncated_from(z0.frame, frames)?, config.clone())?;
    let inputs = PhysInputs::from_params(graph, params, z0);
    problem.simulate(&inputs, frames, true)
}

impl ControllerScript {
    fn truncated_from(&self, start: usize, frames: usize) -> Result<Self> {
        if self.trajectory.len() < start + frames + 1 {
            return Err(Error::InvalidConfig(format!(
                "script covers {} frames, rollout needs {}",
                self.frames(),
                start + frames
            )));
        }
        Ok(ControllerScript {
            indices: self.indices.clone(),
            trajectory: self.trajectory[start..=start + frames].to_vec(),
        })
    }
}
