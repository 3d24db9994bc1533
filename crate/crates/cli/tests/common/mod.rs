#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn springmor(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_springmor")).args(args).output().expect("binary runs")
}

pub fn ok(args: &[&str]) -> Output {
    let out = springmor(args);
    assert!(
        out.status.success(),
        "springmor {} failed ({:?}): {}",
        args.join(" "),
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

/// Small end-to-end pipeline: synth → observe → train → rollout → eval →
/// reduce → gradcheck → bench. Returns the output files that must be
/// reproducible (bench timings excluded).
pub fn pipeline(dir: &Path, seed: &str) -> Vec<PathBuf> {
    let d = dir.to_string_lossy().into_owned();
    ok(&["synth", "--kind", "rope", "--nodes", "20", "--frames", "10", "--substeps", "20", "--seed", seed, "--out", &d]);
    ok(&["observe", "--traj", &p(dir, "truth_traj.json"), "--scene", &p(dir, "scene.json"), "--fraction", "0.7",
        "--noise", "0.001", "--seed", seed, "--out", &p(dir, "obs.json")]);
    ok(&["train", "--scene", &p(dir, "scene.json"), "--obs", &p(dir, "obs.json"), "--levels", "2", "--ratios", "0.6,0.4",
        "--epochs", "6", "--commit", "2", "--k-col", "1", "--substeps", "20", "--seed", seed, "--out", &p(dir, "model.json")]);
    ok(&["rollout", "--model", &p(dir, "model.json"), "--scene", &p(dir, "scene.json"), "--level", "1", "--frames", "10",
        "--controls", &p(dir, "obs.json"), "--out", &p(dir, "pred1.json")]);
    ok(&["eval", "--pred", &p(dir, "pred1.json"), "--truth", &p(dir, "truth_traj.json"), "--obs", &p(dir, "obs.json"),
        "--model", &p(dir, "model.json"), "--level", "1", "--out", &p(dir, "eval1.json")]);
    ok(&["reduce", "--model", &p(dir, "model.json"), "--scene", &p(dir, "scene.json"), "--strategy", "random", "--ratio", "0.5",
        "--seed", seed, "--out", &p(dir, "random.json")]);
    ok(&["reduce", "--model", &p(dir, "model.json"), "--scene", &p(dir, "scene.json"), "--strategy", "gramian", "--ratio", "0.5",
        "--out", &p(dir, "gramian.json")]);
    ok(&["gradcheck", "--scene", &p(dir, "scene.json"), "--frames", "10", "--samples", "6", "--substeps", "100", "--seed", seed,
        "--out", &p(dir, "gradcheck.json")]);
    ok(&["bench", "--model", &p(dir, "model.json"), "--scene", &p(dir, "scene.json"), "--frames", "10", "--repeats", "3",
        "--out", &p(dir, "bench.json")]);
    ["scene.json", "truth_params.json", "truth_traj.json", "obs.json", "model.json", "pred1.json", "eval1.json", "random.json",
        "gramian.json", "gradcheck.json"]
        .iter()
        .map(|f| dir.join(f))
        .collect()
}

/// Bench rows with the timing fields removed.
pub fn bench_shape(path: &Path) -> Vec<(u64, u64, u64)> {
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    v.as_array()
        .unwrap()
        .iter()
        .map(|r| (r["level"].as_u64().unwrap(), r["nodes"].as_u64().unwrap(), r["edges"].as_u64().unwrap()))
        .collect()
}
