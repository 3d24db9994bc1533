//! Chamfer and tracking losses on rollouts, as plain values and as a tape op.

use std::sync::Arc;

use ndarray::Array2;

use super::observation::Observation;
use crate::autodiff::{CustomOp, Tensor};
use crate::error::{Error, Result};
use crate::graph::Vec3;

/// Order-independent sum: the terms are sorted before accumulation.
pub fn stable_sum(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    v.iter().sum()
}

pub fn stable_mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        stable_sum(values) / values.len() as f64
    }
}

fn d(a: &Vec3, b: &Vec3) -> f64 {
    crate::graph::dist(a, b)
}

fn nearest(p: &Vec3, pred: &[Vec3]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, q) in pred.iter().enumerate() {
        let dist = d(p, q);
        if dist < best.1 {
            best = (j, dist);
        }
    }
    best
}

/// Mean distance from every observed point to its nearest predicted point.
pub fn chamfer_loss(pred: &[Vec3], obs: &[Vec3]) -> Result<f64> {
    if pred.is_empty() || obs.is_empty() {
        return Err(Error::InvalidConfig("chamfer distance needs two non-empty point sets".into()));
    }
    let v: Vec<f64> = obs.iter().map(|o| nearest(o, pred).1).collect();
    Ok(stable_mean(&v))
}

/// Maps every track to its node in the prediction, given the composed
/// level-0 → level map.
pub fn track_nodes(obs: &Observation, map: &[usize]) -> Result<Vec<usize>> {
    obs.track_ids
        .iter()
        .map(|&i| map.get(i).copied().ok_or_else(|| Error::InvalidConfig(format!("no correspondence for track {i}"))))
        .collect()
}

/// Mean distance between observed tracks and their (possibly coarse) nodes at one frame.
pub fn frame_tracking(pred: &[Vec3], obs: &[Vec3], nodes: &[usize]) -> Result<f64> {
    let v: Result<Vec<f64>> = obs
        .iter()
        .zip(nodes)
        .map(|(o, &j)| {
            pred.get(j).map(|p| d(o, p)).ok_or_else(|| Error::InvalidConfig(format!("track node {j} missing")))
        })
        .collect();
    Ok(stable_mean(&v?))
}

/// Per-frame `(chamfer, tracking)` for frames `1..=T`.
pub fn frame_losses(pred: &[Vec<Vec3>], obs: &Observation, map: &[usize]) -> Result<Vec<(f64, f64)>> {
    frame_losses_at(pred, obs, &track_nodes(obs, map)?)
}

/// As [`frame_losses`] with the node of every track given directly.
pub fn frame_losses_at(pred: &[Vec<Vec3>], obs: &Observation, nodes: &[usize]) -> Result<Vec<(f64, f64)>> {
    let t_max = obs.frames();
    if pred.len() < t_max + 1 {
        return Err(Error::InvalidConfig(format!("prediction has {} frames, need {}", pred.len(), t_max + 1)));
    }
    (1..=t_max)
        .map(|t| Ok((chamfer_loss(&pred[t], &obs.points[t])?, frame_tracking(&pred[t], &obs.points[t], nodes)?)))
        .collect()
}

/// Tracking error averaged over frames `1..=T` and tracks.
pub fn tracking_loss(pred: &[Vec<Vec3>], obs: &Observation, map: &[usize]) -> Result<f64> {
    let v: Vec<f64> = frame_losses(pred, obs, map)?.into_iter().map(|x| x.1).collect();
    Ok(stable_mean(&v))
}

/// `(1/T) Σ_t [chamfer + tracking]` for one level.
pub fn rollout_loss(pred: &[Vec<Vec3>], obs: &Observation, map: &[usize]) -> Result<f64> {
    let v: Vec<f64> = frame_losses(pred, obs, map)?.into_iter().map(|(a, b)| a + b).collect();
    Ok(stable_mean(&v))
}

/// Sum of per-level losses.
pub fn total_loss(per_level: &[f64]) -> f64 {
    stable_sum(per_level)
}

/// Flattens frames × nodes × 3 into a `((T+1)·N) × 3` tensor.
pub fn frames_to_tensor(frames: &[Vec<Vec3>]) -> Tensor {
    let n = frames.first().map_or(0, |f| f.len());
    let mut out = Array2::zeros((frames.len() * n, 3));
    for (t, f) in frames.iter().enumerate() {
        for (i, p) in f.iter().enumerate() {
            for c in 0..3 {
                out[[t * n + i, c]] = p[c];
            }
        }
    }
    out
}

pub fn tensor_to_frames(x: &Tensor, nodes: usize) -> Vec<Vec<Vec3>> {
    if nodes == 0 {
        return Vec::new();
    }
    (0..x.nrows() / nodes)
        .map(|t| (0..nodes).map(|i| [x[[t * nodes + i, 0]], x[[t * nodes + i, 1]], x[[t * nodes + i, 2]]]).collect())
        .collect()
}

/// Tape op: rollout positions tensor → scalar rollout loss. Nearest pairs
/// are recomputed on every evaluation.
#[derive(Debug)]
pub struct LossOp {
    obs: Arc<Observation>,
    nodes: Vec<usize>,
    n: usize,
}

impl LossOp {
    pub fn new(obs: Arc<Observation>, map: &[usize], n: usize) -> Result<Self> {
        let nodes = track_nodes(&obs, map)?;
        if let Some(&j) = nodes.iter().find(|&&j| j >= n) {
            return Err(Error::InvalidConfig(format!("track node {j} outside the {n}-node level")));
        }
        Ok(LossOp { obs, nodes, n })
    }
}

impl CustomOp for LossOp {
    fn name(&self) -> &'static str {
        "rollout_loss"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let frames = tensor_to_frames(inputs[0], self.n);
        let v: Vec<f64> = frame_losses_at(&frames, &self.obs, &self.nodes)?.into_iter().map(|(a, b)| a + b).collect();
        Ok(Array2::from_elem((1, 1), stable_mean(&v)))
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let x = inputs[0];
        let n = self.n;
        let t_max = self.obs.frames();
        let scale = grad[[0, 0]] / t_max as f64;
        let mut g = Array2::zeros(x.dim());
        let pos = |t: usize, j: usize| [x[[t * n + j, 0]], x[[t * n + j, 1]], x[[t * n + j, 2]]];
        for t in 1..=t_max {
            let pred: Vec<Vec3> = (0..n).map(|j| pos(t, j)).collect();
            let obs = &self.obs.points[t];
            let m = obs.len() as f64;
            let mut add = |j: usize, o: &Vec3, w: f64| {
                let p = pred[j];
                let dist = d(&p, o);
                if dist > 0.0 {
                    for c in 0..3 {
                        g[[t * n + j, c]] += w * (p[c] - o[c]) / dist;
                    }
                }
            };
            for o in obs {
                let (j, _) = nearest(o, &pred);
                add(j, o, scale / m);
            }
            for (o, &j) in obs.iter().zip(&self.nodes) {
                add(j, o, scale / m);
            }
        }
        Ok(vec![Some(g)])
    }
}
