//! Evaluation of a predicted rollout against ground truth at the observed
//! nodes: per-frame Chamfer distance and tracking error, split into a
//! reconstruction window and a prediction window; rollout throughput per
//! level.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dynamics::{rollout, ControllerScript, DynamicState, Trajectory};
use crate::error::{Error, Result};
use crate::scenes::Scene;
use crate::training::{chamfer_loss, frame_tracking, stable_mean, Observation, TrainedModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMetric {
    pub frame: usize,
    pub cd: f64,
    pub track: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowMetric {
    /// Inclusive frame range.
    pub first: usize,
    pub last: usize,
    pub cd: f64,
    pub track: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u64,
    pub split: f64,
    pub frames: usize,
    pub per_frame: Vec<FrameMetric>,
    pub mean: WindowMetric,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reconstruction: Option<WindowMetric>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction: Option<WindowMetric>,
}

fn window(per_frame: &[FrameMetric]) -> Option<WindowMetric> {
    let (first, last) = (per_frame.first()?.frame, per_frame.last()?.frame);
    let cd: Vec<f64> = per_frame.iter().map(|m| m.cd).collect();
    let tr: Vec<f64> = per_frame.iter().map(|m| m.track).collect();
    Some(WindowMetric { first, last, cd: stable_mean(&cd), track: stable_mean(&tr) })
}

/// Number of reconstruction frames for `split` of `frames`.
pub fn split_frames(frames: usize, split: f64) -> Result<usize> {
    if !(0.0..=1.0).contains(&split) {
        return Err(Error::InvalidConfig(format!("split {split} must lie in [0, 1]")));
    }
    Ok(((split * frames as f64).round() as usize).min(frames))
}

/// Evaluates frames `1..=T`. The targets are the ground-truth positions of
/// the observed nodes; `map[i]` is the prediction node standing in for
/// full-order node `i` (the identity for full-order predictions).
pub fn evaluate(
    pred: &Trajectory,
    truth: &Trajectory,
    obs: &Observation,
    map: Option<&[usize]>,
    split: f64,
) -> Result<EvalReport> {
    let t = truth.frames();
    if pred.frames() != t {
        return Err(Error::InvalidConfig(format!(
            "prediction has {} frames but the ground truth has {t}",
            pred.frames()
        )));
    }
    if t == 0 {
        return Err(Error::InvalidConfig("nothing to evaluate: zero frames".into()));
    }
    obs.check_nodes(truth.nodes())?;
    let identity: Vec<usize>;
    let map = match map {
        Some(m) => {
            if m.len() != truth.nodes() {
                return Err(Error::InvalidConfig("node map length differs from the ground truth".into()));
            }
            m
        }
        None => {
            if pred.nodes() != truth.nodes() {
                return Err(Error::InvalidConfig(format!(
                    "prediction has {} nodes and the ground truth {}; a reduced prediction needs its model",
                    pred.nodes(),
                    truth.nodes()
                )));
            }
            identity = (0..truth.nodes()).collect();
            &identity
        }
    };
    let nodes: Vec<usize> = obs.track_ids.iter().map(|&i| map[i]).collect();
    let k = split_frames(t, split)?;
    let mut per_frame = Vec::with_capacity(t);
    for f in 1..=t {
        let target: Vec<_> = obs.track_ids.iter().map(|&i| truth.positions[f][i]).collect();
        let p = &pred.positions[f];
        per_frame.push(FrameMetric { frame: f, cd: chamfer_loss(p, &target)?, track: frame_tracking(p, &target, &nodes)? });
    }
    Ok(EvalReport {
        version: 1,
        split,
        frames: t,
        mean: window(&per_frame).expect("at least one frame"),
        reconstruction: window(&per_frame[..k]),
        prediction: window(&per_frame[k..]),
        per_frame,
    })
}

/// Rollout throughput of one level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelTiming {
    pub level: usize,
    pub nodes: usize,
    pub edges: usize,
    /// Median over the timed repeats.
    pub fps: f64,
    pub speedup: f64,
}

/// Times `repeats` rollouts of `frames` frames per level after one untimed
/// warm-up, sequentially. The speed-up is relative to level 0.
pub fn bench_levels(
    model: &TrainedModel,
    scene: &Scene,
    script: &ControllerScript,
    frames: usize,
    repeats: usize,
) -> Result<Vec<LevelTiming>> {
    if repeats == 0 || frames == 0 {
        return Err(Error::InvalidConfig("bench needs positive frames and repeats".into()));
    }
    let mut rows = Vec::with_capacity(model.levels() + 1);
    for level in 0..=model.levels() {
        let (graph, params, s) = model.level_system(scene, script, level)?;
        let z0 = DynamicState::at_rest(graph.positions0.clone());
        rollout(&z0, &s, &graph, &params, &scene.config, frames)?;
        let mut fps: Vec<f64> = (0..repeats)
            .map(|_| {
                let t = Instant::now();
                rollout(&z0, &s, &graph, &params, &scene.config, frames)?;
                Ok(frames as f64 / t.elapsed().as_secs_f64().max(1e-9))
            })
            .collect::<Result<_>>()?;
        fps.sort_by(f64::total_cmp);
        let median = if repeats % 2 == 1 { fps[repeats / 2] } else { 0.5 * (fps[repeats / 2 - 1] + fps[repeats / 2]) };
        rows.push(LevelTiming { level, nodes: graph.node_count(), edges: graph.edge_count(), fps: median, speedup: 1.0 });
    }
    let base = rows[0].fps;
    for r in &mut rows {
        r.speedup = r.fps / base;
    }
    rows[0].speedup = 1.0;
    Ok(rows)
}
