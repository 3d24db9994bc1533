//! Synthetic scenes with hidden ground-truth parameters, and partial
//! observations of their rollouts.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{rollout, ContactCoeffs, ControllerScript, DynamicState, MechParams, SimConfig, Trajectory};
use crate::error::{Error, Result};
use crate::graph::{knn_edges, NodeType, SpringGraph, Vec3};
use crate::training::Observation;

/// A simulation-ready scene: graph plus integrator settings.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub graph: SpringGraph,
    pub config: SimConfig,
    /// Spread uniformly over the nodes.
    pub total_mass: f64,
}

impl Scene {
    pub fn new(graph: SpringGraph, config: SimConfig, total_mass: f64) -> Result<Self> {
        config.validate()?;
        let m = total_mass / graph.node_count() as f64;
        if graph.masses.iter().any(|&x| x != m) {
            return Err(Error::InvalidScene("scene masses must equal total_mass / N".into()));
        }
        Ok(Scene { graph, config, total_mass })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneKind {
    Rope,
    Cloth,
    Blob,
}

impl std::str::FromStr for SceneKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rope" => Ok(SceneKind::Rope),
            "cloth" => Ok(SceneKind::Cloth),
            "blob" => Ok(SceneKind::Blob),
            _ => Err(Error::InvalidConfig(format!("unknown scene kind '{s}'"))),
        }
    }
}

pub const ROPE_LENGTH: f64 = 1.0;
pub const CLOTH_SIDE: f64 = 0.5;
pub const BLOB_RADIUS: f64 = 0.1;
pub const LIFT: f64 = 0.2;
pub const SWAY: f64 = 0.15;
pub const LIFT_PERIOD: f64 = 2.0;
pub const SWAY_PERIOD: f64 = 1.5;

/// Generation knobs. `None` parameters are drawn from the hidden ranges.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthOptions {
    pub kind: SceneKind,
    pub nodes: usize,
    pub frames: usize,
    pub stiffness: Option<f64>,
    pub d_dp: Option<f64>,
    pub d_dr: Option<f64>,
    /// Scales the controller motion; 0 holds controllers still.
    pub amplitude: f64,
    pub total_mass: f64,
    pub config: SimConfig,
}

impl SynthOptions {
    pub fn new(kind: SceneKind, nodes: usize, frames: usize) -> Self {
        SynthOptions {
            kind,
            nodes,
            frames,
            stiffness: None,
            d_dp: None,
            d_dr: None,
            amplitude: 1.0,
            total_mass: 1.0,
            config: SimConfig::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthOutput {
    pub scene: Scene,
    pub truth: MechParams,
    pub script: ControllerScript,
    pub trajectory: Trajectory,
}

fn rope_points(n: usize, rng: &mut impl Rng) -> Vec<Vec3> {
    let h = ROPE_LENGTH / (n - 1) as f64;
    let j = 0.01 * h / 3f64.sqrt();
    (0..n)
        .map(|i| {
            let mut c = [0.0; 3];
            for v in &mut c {
                *v = rng.random_range(-j..=j);
            }
            [i as f64 * h + c[0], c[1], c[2].abs()]
        })
        .collect()
}

/// Edge list of a `side × side` grid: horizontal, vertical, then both
/// diagonals of every cell.
pub fn grid_edges(side: usize) -> Vec<(usize, usize)> {
    let id = |r: usize, c: usize| r * side + c;
    let mut e = Vec::new();
    for r in 0..side {
        for c in 0..side - 1 {
            e.push((id(r, c), id(r, c + 1)));
        }
    }
    for r in 0..side - 1 {
        for c in 0..side {
            e.push((id(r, c), id(r + 1, c)));
        }
    }
    for r in 0..side - 1 {
        for c in 0..side - 1 {
            e.push((id(r, c), id(r + 1, c + 1)));
            e.push((id(r, c + 1), id(r + 1, c)));
        }
    }
    e
}

fn blob_points(n: usize, rng: &mut impl Rng) -> Vec<Vec3> {
    let mut pts = Vec::with_capacity(n);
    while pts.len() < n {
        let p: Vec3 = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        if p[0] * p[0] + p[1] * p[1] + p[2] * p[2] <= 1.0 {
            pts.push([BLOB_RADIUS * p[0], BLOB_RADIUS * p[1], BLOB_RADIUS * (1.0 + p[2])]);
        }
    }
    pts
}

/// Geometry, node types and edges of a scene.
pub fn scene_graph(kind: SceneKind, nodes: usize, total_mass: f64, rng: &mut impl Rng) -> Result<SpringGraph> {
    if nodes < 10 {
        return Err(Error::InvalidConfig(format!("scenes need at least 10 nodes, got {nodes}")));
    }
    match kind {
        SceneKind::Rope => {
            let pts = rope_points(nodes, rng);
            let edges = knn_edges(&pts, 4, None)?;
            let mut types = vec![NodeType::Object; nodes];
            types[0] = NodeType::Controller;
            SpringGraph::with_uniform_mass(pts, types, edges, total_mass)
        }
        SceneKind::Cloth => {
            let side = (nodes as f64).sqrt().floor() as usize;
            let side = if (side + 1) * (side + 1) <= nodes { side + 1 } else { side };
            if side * side != nodes {
                log::warn!("cloth needs a square node count; using {}x{} = {} nodes", side, side, side * side);
            }
            let h = CLOTH_SIDE / (side - 1) as f64;
            let pts = (0..side * side).map(|k| [(k % side) as f64 * h, (k / side) as f64 * h, 0.0]).collect();
            let mut types = vec![NodeType::Object; side * side];
            for t in types.iter_mut().take(side) {
                *t = NodeType::Controller;
            }
            SpringGraph::with_uniform_mass(pts, types, grid_edges(side), total_mass)
        }
        SceneKind::Blob => {
            for _ in 0..100 {
                let pts = blob_points(nodes, rng);
                let edges = match knn_edges(&pts, 8, None) {
                    Ok(e) => e,
                    Err(Error::InvalidScene(_)) | Err(Error::IsolatedNode(_)) => continue,
                    Err(e) => return Err(e),
                };
                let top = 1.7 * BLOB_RADIUS;
                let mut types: Vec<NodeType> =
                    pts.iter().map(|p| if p[2] >= top { NodeType::Controller } else { NodeType::Object }).collect();
                if !types.contains(&NodeType::Controller) {
                    let hi = (0..nodes).max_by(|&a, &b| pts[a][2].total_cmp(&pts[b][2])).unwrap_or(0);
                    types[hi] = NodeType::Controller;
                }
                let g = SpringGraph::with_uniform_mass(pts, types, edges, total_mass)?;
                if g.is_active_connected() {
                    return Ok(g);
                }
            }
            Err(Error::InvalidScene("could not sample a connected blob".into()))
        }
    }
}

/// Sinusoidal lift-and-sway. The lift rises from zero; the sway moves along y.
pub fn controller_offset(t: f64, amplitude: f64) -> Vec3 {
    [
        0.0,
        amplitude * SWAY * (2.0 * PI * t / SWAY_PERIOD).sin(),
        amplitude * LIFT * 0.5 * (1.0 - (2.0 * PI * t / LIFT_PERIOD).cos()),
    ]
}

pub fn controller_script(graph: &SpringGraph, frames: usize, dt: f64, amplitude: f64) -> ControllerScript {
    let indices = graph.indices_of(NodeType::Controller);
    let trajectory = (0..=frames)
        .map(|t| {
            let o = controller_offset(t as f64 * dt, amplitude);
            indices.iter().map(|&i| {
                let p = graph.positions0[i];
                [p[0] + o[0], p[1] + o[1], p[2] + o[2]]
            })
            .collect()
        })
        .collect();
    ControllerScript { indices, trajectory }
}

/// Hidden parameters: per-edge log-uniform stiffness in [10, 200] N/m,
/// dashpot in [0.1, 1], drag in [0.01, 0.1].
pub fn hidden_params(graph: &SpringGraph, opts: &SynthOptions, rng: &mut impl Rng) -> MechParams {
    let (lo, hi) = (10f64.ln(), 200f64.ln());
    let stiffness = (0..graph.edge_count())
        .map(|_| {
            let s = rng.random_range(lo..=hi).exp();
            opts.stiffness.unwrap_or(s)
        })
        .collect();
    let dp = rng.random_range(0.1..=1.0);
    let dr = rng.random_range(0.01..=0.1);
    MechParams {
        stiffness,
        d_dp: opts.d_dp.unwrap_or(dp),
        d_dr: opts.d_dr.unwrap_or(dr),
        contact: ContactCoeffs::default(),
    }
}

pub fn synth_scene(opts: &SynthOptions, rng: &mut impl Rng) -> Result<SynthOutput> {
    if opts.frames < 10 {
        return Err(Error::InvalidConfig(format!("scenes need at least 10 frames, got {}", opts.frames)));
    }
    opts.config.validate()?;
    let graph = scene_graph(opts.kind, opts.nodes, opts.total_mass, rng)?;
    let truth = hidden_params(&graph, opts, rng);
    let script = controller_script(&graph, opts.frames, opts.config.dt, opts.amplitude);
    let z0 = DynamicState::at_rest(graph.positions0.clone());
    let trajectory = rollout(&z0, &script, &graph, &truth, &opts.config, opts.frames)?;
    let scene = Scene::new(graph, opts.config.clone(), opts.total_mass)?;
    Ok(SynthOutput { scene, truth, script, trajectory })
}

/// Fixed random subset of nodes observed at every frame with Gaussian noise.
pub fn make_observation(
    traj: &Trajectory,
    script: &ControllerScript,
    fraction: f64,
    noise_sigma: f64,
    rng: &mut impl Rng,
) -> Result<Observation> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidConfig(format!("observe fraction {fraction} must lie in (0, 1]")));
    }
    if !(noise_sigma >= 0.0) {
        return Err(Error::InvalidConfig(format!("noise sigma {noise_sigma} must be non-negative")));
    }
    let n = traj.nodes();
    let m = ((fraction * n as f64).round() as usize).clamp(1, n);
    let mut ids = rand::seq::index::sample(rng, n, m).into_vec();
    ids.sort_unstable();
    let normal = Normal::new(0.0, noise_sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let points = traj
        .positions
        .iter()
        .map(|frame| {
            ids.iter()
                .map(|&i| {
                    let p = frame[i];
                    if noise_sigma == 0.0 {
                        p
                    } else {
                        [p[0] + normal.sample(rng), p[1] + normal.sample(rng), p[2] + normal.sample(rng)]
                    }
                })
                .collect()
        })
        .collect();
    Observation::new(points, ids, script.clone())
}
