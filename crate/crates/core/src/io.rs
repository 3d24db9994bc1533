//! JSON persistence of scenes, parameters, trajectories, observations and
//! models. Every file carries `"version": 1`; non-finite numbers are
//! rejected on write and cannot be expressed on read.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamState, ParamStore, Tensor};
use crate::dynamics::{ContactCoeffs, ControllerScript, MechParams, SimConfig, Trajectory};
use crate::error::{Error, Result};
use crate::gnn::AssignmentMatrix;
use crate::graph::{NodeType, SpringGraph, Vec3};
use crate::scenes::Scene;
use crate::training::{Observation, TrainConfig, TrainedModel, CONTACT_RAW, LOG_DP, LOG_DR, LOG_S};

pub const VERSION: u64 = 1;

fn parse_err(path: &str, message: impl std::fmt::Display) -> Error {
    Error::ParseError { path: path.to_string(), message: message.to_string() }
}

/// Parses `text`, checks the version and decodes into `T`, reporting the
/// JSON path of the first schema violation.
pub fn from_json_str<T: DeserializeOwned>(text: &str) -> Result<T> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| parse_err("$", e))?;
    match value.get("version") {
        None => return Err(parse_err("$.version", "missing field")),
        Some(v) => match v.as_u64() {
            Some(VERSION) => {}
            Some(other) => return Err(Error::UnsupportedVersion(other)),
            None => return Err(parse_err("$.version", "expected an unsigned integer")),
        },
    }
    serde_path_to_error::deserialize(value).map_err(|e| {
        let p = e.path().to_string();
        parse_err(&format!("$.{p}"), e.into_inner())
    })
}

fn check_finite(v: &serde_json::Value, path: &mut String) -> Result<()> {
    match v {
        serde_json::Value::Null => Err(Error::NumericalError(format!("non-finite number at {path}"))),
        serde_json::Value::Array(a) => {
            for (i, x) in a.iter().enumerate() {
                let n = path.len();
                path.push_str(&format!("[{i}]"));
                check_finite(x, path)?;
                path.truncate(n);
            }
            Ok(())
        }
        serde_json::Value::Object(m) => {
            for (k, x) in m {
                let n = path.len();
                path.push('.');
                path.push_str(k);
                check_finite(x, path)?;
                path.truncate(n);
            }
            Ok(())
        }
        _ => Ok(()),
    }
}

/// Serialises compactly; fails on NaN or infinities (which JSON cannot hold).
/// Serialised types skip `None` fields, so any `null` marks a non-finite number.
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value).map_err(|e| Error::NumericalError(e.to_string()))?;
    check_finite(&v, &mut "$".to_string())?;
    let mut s = serde_json::to_string(&v).map_err(|e| Error::NumericalError(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let s = to_json_string(value)?;
    std::fs::write(path, s)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    from_json_str(&text).map_err(|e| match e {
        Error::ParseError { path: p, message } => {
            Error::ParseError { path: p, message: format!("{message} (in {})", path.display()) }
        }
        other => other,
    })
}

// ---- scene ----

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDto {
    pos: Vec3,
    #[serde(rename = "type")]
    ty: NodeType,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeDto {
    i: usize,
    j: usize,
    rest: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneDto {
    version: u64,
    dt: f64,
    substeps: usize,
    total_mass: f64,
    nodes: Vec<NodeDto>,
    edges: Vec<EdgeDto>,
    gravity: Vec3,
}

pub fn scene_to_json(scene: &Scene) -> Result<String> {
    let g = &scene.graph;
    to_json_string(&SceneDto {
        version: VERSION,
        dt: scene.config.dt,
        substeps: scene.config.substeps,
        total_mass: scene.total_mass,
        nodes: g.positions0.iter().zip(&g.node_types).map(|(&pos, &ty)| NodeDto { pos, ty }).collect(),
        edges: g.edges.iter().zip(&g.rest_lengths).map(|(&(i, j), &rest)| EdgeDto { i, j, rest }).collect(),
        gravity: scene.config.gravity,
    })
}

pub fn scene_from_json(text: &str) -> Result<Scene> {
    let d: SceneDto = from_json_str(text)?;
    let n = d.nodes.len();
    if n == 0 {
        return Err(Error::InvalidScene("scene has no nodes".into()));
    }
    if !(d.total_mass > 0.0) {
        return Err(Error::InvalidScene("total_mass must be positive".into()));
    }
    let graph = SpringGraph::new(
        d.nodes.iter().map(|x| x.pos).collect(),
        vec![d.total_mass / n as f64; n],
        d.nodes.iter().map(|x| x.ty).collect(),
        d.edges.iter().map(|e| (e.i, e.j)).collect(),
        d.edges.iter().map(|e| e.rest).collect(),
    )?;
    let config = SimConfig { dt: d.dt, substeps: d.substeps, gravity: d.gravity, ..SimConfig::default() };
    config.validate()?;
    Scene::new(graph, config, d.total_mass)
}

pub fn save_scene(path: &Path, scene: &Scene) -> Result<()> {
    std::fs::write(path, scene_to_json(scene)?)?;
    Ok(())
}

pub fn load_scene(path: &Path) -> Result<Scene> {
    scene_from_json(&read_text(path)?).map_err(|e| annotate(e, path))
}

fn read_text(path: &Path) -> Result<String> {
    Ok(std::fs::read_to_string(path)?)
}

fn annotate(e: Error, path: &Path) -> Error {
    match e {
        Error::ParseError { path: p, message } => {
            Error::ParseError { path: p, message: format!("{message} (in {})", path.display()) }
        }
        other => other,
    }
}

// ---- parameters ----

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsDto {
    stiffness: Vec<f64>,
    d_dp: f64,
    d_dr: f64,
    contact: ContactCoeffs,
}

impl From<&MechParams> for ParamsDto {
    fn from(p: &MechParams) -> Self {
        ParamsDto { stiffness: p.stiffness.clone(), d_dp: p.d_dp, d_dr: p.d_dr, contact: p.contact }
    }
}

impl From<ParamsDto> for MechParams {
    fn from(p: ParamsDto) -> Self {
        MechParams { stiffness: p.stiffness, d_dp: p.d_dp, d_dr: p.d_dr, contact: p.contact }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsFile {
    version: u64,
    stiffness: Vec<f64>,
    d_dp: f64,
    d_dr: f64,
    contact: ContactCoeffs,
}

pub fn params_to_json(p: &MechParams) -> Result<String> {
    to_json_string(&ParamsFile {
        version: VERSION,
        stiffness: p.stiffness.clone(),
        d_dp: p.d_dp,
        d_dr: p.d_dr,
        contact: p.contact,
    })
}

pub fn params_from_json(text: &str) -> Result<MechParams> {
    let f: ParamsFile = from_json_str(text)?;
    Ok(MechParams { stiffness: f.stiffness, d_dp: f.d_dp, d_dr: f.d_dr, contact: f.contact })
}

pub fn save_params(path: &Path, p: &MechParams) -> Result<()> {
    std::fs::write(path, params_to_json(p)?)?;
    Ok(())
}

pub fn load_params(path: &Path) -> Result<MechParams> {
    params_from_json(&read_text(path)?).map_err(|e| annotate(e, path))
}

// ---- trajectories ----

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrajDto {
    version: u64,
    frames: usize,
    nodes: usize,
    dt: f64,
    positions: Vec<Vec<Vec3>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    velocities: Option<Vec<Vec<Vec3>>>,
}

pub fn traj_to_json(t: &Trajectory) -> Result<String> {
    to_json_string(&TrajDto {
        version: VERSION,
        frames: t.positions.len(),
        nodes: t.nodes(),
        dt: t.dt,
        positions: t.positions.clone(),
        velocities: t.velocities.clone(),
    })
}

fn check_frames(name: &str, frames: &[Vec<Vec3>], count: usize, nodes: usize) -> Result<()> {
    if frames.len() != count {
        return Err(parse_err(&format!("$.{name}"), format!("expected {count} frames, found {}", frames.len())));
    }
    if let Some(t) = frames.iter().position(|f| f.len() != nodes) {
        return Err(parse_err(&format!("$.{name}[{t}]"), format!("expected {nodes} nodes")));
    }
    Ok(())
}

pub fn traj_from_json(text: &str) -> Result<Trajectory> {
    let d: TrajDto = from_json_str(text)?;
    check_frames("positions", &d.positions, d.frames, d.nodes)?;
    if let Some(v) = &d.velocities {
        check_frames("velocities", v, d.frames, d.nodes)?;
    }
    if d.frames == 0 {
        return Err(parse_err("$.frames", "trajectory has no frames"));
    }
    Ok(Trajectory { dt: d.dt, positions: d.positions, velocities: d.velocities })
}

pub fn save_traj(path: &Path, t: &Trajectory) -> Result<()> {
    std::fs::write(path, traj_to_json(t)?)?;
    Ok(())
}

pub fn load_traj(path: &Path) -> Result<Trajectory> {
    traj_from_json(&read_text(path)?).map_err(|e| annotate(e, path))
}

// ---- observations ----

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptDto {
    indices: Vec<usize>,
    trajectory: Vec<Vec<Vec3>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObsDto {
    version: u64,
    frames: usize,
    track_ids: Vec<usize>,
    points: Vec<Vec<Vec3>>,
    controls: ScriptDto,
}

pub fn obs_to_json(o: &Observation) -> Result<String> {
    to_json_string(&ObsDto {
        version: VERSION,
        frames: o.points.len(),
        track_ids: o.track_ids.clone(),
        points: o.points.clone(),
        controls: ScriptDto { indices: o.script.indices.clone(), trajectory: o.script.trajectory.clone() },
    })
}

pub fn obs_from_json(text: &str) -> Result<Observation> {
    let d: ObsDto = from_json_str(text)?;
    check_frames("points", &d.points, d.frames, d.track_ids.len())?;
    if let Some(t) = d.controls.trajectory.iter().position(|r| r.len() != d.controls.indices.len()) {
        return Err(parse_err(&format!("$.controls.trajectory[{t}]"), "row length differs from indices"));
    }
    Observation::new(d.points, d.track_ids, ControllerScript { indices: d.controls.indices, trajectory: d.controls.trajectory })
}

pub fn save_obs(path: &Path, o: &Observation) -> Result<()> {
    std::fs::write(path, obs_to_json(o)?)?;
    Ok(())
}

pub fn load_obs(path: &Path) -> Result<Observation> {
    obs_from_json(&read_text(path)?).map_err(|e| annotate(e, path))
}

// ---- models ----

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArrayDto {
    shape: [usize; 2],
    data: Vec<f64>,
}

impl ArrayDto {
    fn of(t: &Tensor) -> Self {
        ArrayDto { shape: [t.nrows(), t.ncols()], data: t.iter().copied().collect() }
    }

    fn tensor(self, path: &str) -> Result<Tensor> {
        Array2::from_shape_vec((self.shape[0], self.shape[1]), self.data)
            .map_err(|e| parse_err(path, format!("shape mismatch: {e}")))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerDto {
    steps: BTreeMap<String, u64>,
    m: BTreeMap<String, ArrayDto>,
    v: BTreeMap<String, ArrayDto>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDto {
    version: u64,
    levels: usize,
    assign: Vec<Vec<usize>>,
    seeds: Vec<Vec<usize>>,
    committed: Vec<bool>,
    params: Vec<ParamsDto>,
    weights: BTreeMap<String, ArrayDto>,
    optimizer: OptimizerDto,
    config: TrainConfig,
}

/// Parameter names in store order for a configuration.
pub fn parameter_names(cfg: &TrainConfig) -> Vec<String> {
    let mut names = Vec::new();
    for (mlp, _) in cfg.arch().all_mlps() {
        for k in 0..mlp.layers() {
            names.push(mlp.weight_name(k));
            names.push(mlp.bias_name(k));
        }
    }
    names.extend([LOG_S, LOG_DP, LOG_DR, CONTACT_RAW].map(String::from));
    names
}

pub fn model_to_json(m: &TrainedModel) -> Result<String> {
    let mut weights = BTreeMap::new();
    let mut steps = BTreeMap::new();
    let mut mm = BTreeMap::new();
    let mut vv = BTreeMap::new();
    for (i, p) in m.store.iter().enumerate() {
        weights.insert(p.name.clone(), ArrayDto::of(&p.value));
        steps.insert(p.name.clone(), m.adam.steps[i]);
        mm.insert(p.name.clone(), ArrayDto::of(&m.adam.m[i]));
        vv.insert(p.name.clone(), ArrayDto::of(&m.adam.v[i]));
    }
    to_json_string(&ModelDto {
        version: VERSION,
        levels: m.params.len(),
        assign: m.assignments.iter().map(|p| p.cluster_of.clone()).collect(),
        seeds: m.assignments.iter().map(|p| p.seeds.clone()).collect(),
        committed: m.committed.clone(),
        params: m.params.iter().map(ParamsDto::from).collect(),
        weights,
        optimizer: OptimizerDto { steps, m: mm, v: vv },
        config: m.config.clone(),
    })
}

pub fn model_from_json(text: &str) -> Result<TrainedModel> {
    let mut d: ModelDto = from_json_str(text)?;
    d.config.validate()?;
    let l = d.config.levels;
    if d.levels != l + 1 || d.params.len() != l + 1 {
        return Err(parse_err("$.levels", format!("expected {} levels for the stored configuration", l + 1)));
    }
    if d.assign.len() != l || d.seeds.len() != l || d.committed.len() != l {
        return Err(parse_err("$.assign", format!("expected {l} assignments")));
    }
    let mut assignments = Vec::with_capacity(l);
    for (k, (a, s)) in d.assign.into_iter().zip(d.seeds).enumerate() {
        let n_coarse = s.len();
        let p = AssignmentMatrix::from_clusters(a, n_coarse, s).map_err(|e| parse_err(&format!("$.assign[{k}]"), e))?;
        if k > 0 && p.n_fine() != assignments.last().map_or(0, |q: &AssignmentMatrix| q.n_coarse) {
            return Err(parse_err(&format!("$.assign[{k}]"), "row count differs from the previous level"));
        }
        assignments.push(p);
    }
    let names = parameter_names(&d.config);
    if names.len() != d.weights.len() || names.iter().any(|n| !d.weights.contains_key(n)) {
        return Err(parse_err("$.weights", "parameter names do not match the stored configuration"));
    }
    let mut store = ParamStore::new();
    let mut adam = AdamState { m: Vec::new(), v: Vec::new(), steps: Vec::new() };
    for n in &names {
        let w = d.weights.remove(n).expect("checked").tensor(&format!("$.weights.{n}"))?;
        let take = |map: &mut BTreeMap<String, ArrayDto>, which: &str| -> Result<Tensor> {
            let a = map.remove(n).ok_or_else(|| parse_err(&format!("$.optimizer.{which}"), format!("missing {n}")))?;
            let t = a.tensor(&format!("$.optimizer.{which}.{n}"))?;
            Ok(t)
        };
        let m = take(&mut d.optimizer.m, "m")?;
        let v = take(&mut d.optimizer.v, "v")?;
        if m.dim() != w.dim() || v.dim() != w.dim() {
            return Err(parse_err(&format!("$.optimizer.m.{n}"), "moment shape differs from the weight"));
        }
        let steps = *d.optimizer.steps.get(n).ok_or_else(|| parse_err("$.optimizer.steps", format!("missing {n}")))?;
        store.add(n, w, true)?;
        adam.m.push(m);
        adam.v.push(v);
        adam.steps.push(steps);
    }
    Ok(TrainedModel {
        config: d.config,
        store,
        adam,
        assignments,
        committed: d.committed,
        params: d.params.into_iter().map(MechParams::from).collect(),
    })
}

pub fn save_model(path: &Path, m: &TrainedModel) -> Result<()> {
    std::fs::write(path, model_to_json(m)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<TrainedModel> {
    model_from_json(&read_text(path)?).map_err(|e| annotate(e, path))
}
