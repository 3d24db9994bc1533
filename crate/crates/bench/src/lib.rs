//! Shared fixtures for the benchmarks.

use springmor::scenes::{make_observation, synth_scene, SynthOptions, SynthOutput};
use springmor::{seeded_rng, Observation, SceneKind, TrainConfig, TrainedModel};

/// A rope scene with `nodes` nodes and `frames` frames of ground truth.
pub fn rope(nodes: usize, frames: usize, substeps: usize) -> (SynthOutput, Observation) {
    let mut rng = seeded_rng(0);
    let mut opts = SynthOptions::new(SceneKind::Rope, nodes, frames);
    opts.config.substeps = substeps;
    let out = synth_scene(&opts, &mut rng).expect("rope scene");
    let obs = make_observation(&out.trajectory, &out.script, 0.7, 0.0, &mut rng).expect("observation");
    (out, obs)
}

/// The untrained default hierarchy (three reduced levels) of a scene.
pub fn hierarchy(out: &SynthOutput, obs: &Observation) -> TrainedModel {
    let cfg = TrainConfig { substeps: out.scene.config.substeps, ..TrainConfig::default() };
    TrainedModel::initialize(&out.scene, obs, &cfg).expect("hierarchy")
}
