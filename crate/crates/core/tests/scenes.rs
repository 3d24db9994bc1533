use springmor::io::{scene_to_json, traj_to_json};
use springmor::scenes::*;
use springmor::{seeded_rng, Error, NodeType, SceneKind, Trajectory};

fn kinetic(traj: &Trajectory, masses: &[f64], t: usize) -> f64 {
    let v = &traj.velocities.as_ref().expect("rollouts keep velocities")[t];
    v.iter().zip(masses).map(|(v, m)| 0.5 * m * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2])).sum()
}

#[test]
fn cloth_edge_count_is_combinatorial() {
    for side in [4usize, 10] {
        let g = scene_graph(SceneKind::Cloth, side * side, 1.0, &mut seeded_rng(0)).unwrap();
        let structural = 2 * side * (side - 1);
        let shear = 2 * (side - 1) * (side - 1);
        assert_eq!(g.edge_count(), structural + shear);
        assert_eq!(g.indices_of(NodeType::Controller), (0..side).collect::<Vec<_>>());
    }
    assert_eq!(grid_edges(10).len(), 342);
}

#[test]
fn non_square_cloth_rounds_down() {
    let g = scene_graph(SceneKind::Cloth, 110, 1.0, &mut seeded_rng(0)).unwrap();
    assert_eq!(g.node_count(), 100);
    let g = scene_graph(SceneKind::Cloth, 99, 1.0, &mut seeded_rng(0)).unwrap();
    assert_eq!(g.node_count(), 81);
}

#[test]
fn rope_jitter_stays_within_one_percent_of_spacing() {
    let n = 50;
    let g = scene_graph(SceneKind::Rope, n, 1.0, &mut seeded_rng(3)).unwrap();
    let h = ROPE_LENGTH / (n - 1) as f64;
    for (i, p) in g.positions0.iter().enumerate() {
        let d = ((p[0] - i as f64 * h).powi(2) + p[1] * p[1] + p[2] * p[2]).sqrt();
        assert!(d <= 0.01 * h, "node {i} off by {d}");
    }
    assert_eq!(g.indices_of(NodeType::Controller), vec![0]);
    assert!(g.is_active_connected());
}

#[test]
fn blob_is_a_connected_ball_with_a_top_cap() {
    let g = scene_graph(SceneKind::Blob, 60, 1.0, &mut seeded_rng(5)).unwrap();
    assert_eq!(g.node_count(), 60);
    assert!(g.is_active_connected());
    let c = [0.0, 0.0, BLOB_RADIUS];
    for p in &g.positions0 {
        let r = ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2)).sqrt();
        assert!(r <= BLOB_RADIUS * (1.0 + 1e-12));
    }
    let ctrl = g.indices_of(NodeType::Controller);
    assert!(!ctrl.is_empty());
    let top = ctrl.iter().map(|&i| g.positions0[i][2]).fold(f64::INFINITY, f64::min);
    let below = (0..60).filter(|i| !ctrl.contains(i)).map(|i| g.positions0[i][2]).fold(f64::NEG_INFINITY, f64::max);
    assert!(top >= below);
}

#[test]
fn too_small_scenes_are_rejected() {
    assert!(matches!(scene_graph(SceneKind::Rope, 9, 1.0, &mut seeded_rng(0)), Err(Error::InvalidConfig(_))));
    let opts = SynthOptions::new(SceneKind::Rope, 20, 9);
    assert!(synth_scene(&opts, &mut seeded_rng(0)).is_err());
    assert!("rod".parse::<SceneKind>().is_err());
    assert_eq!("blob".parse::<SceneKind>().unwrap(), SceneKind::Blob);
}

#[test]
fn hidden_parameters_lie_in_their_ranges() {
    for seed in 0..5 {
        let opts = SynthOptions::new(SceneKind::Cloth, 25, 10);
        let out = synth_scene(&opts, &mut seeded_rng(seed)).unwrap();
        assert_eq!(out.truth.stiffness.len(), out.scene.graph.edge_count());
        assert!(out.truth.stiffness.iter().all(|&s| (10.0..=200.0).contains(&s)));
        assert!((0.1..=1.0).contains(&out.truth.d_dp));
        assert!((0.01..=0.1).contains(&out.truth.d_dr));
    }
    let mut opts = SynthOptions::new(SceneKind::Rope, 20, 10);
    opts.stiffness = Some(42.0);
    opts.d_dp = Some(0.5);
    let out = synth_scene(&opts, &mut seeded_rng(0)).unwrap();
    assert!(out.truth.stiffness.iter().all(|&s| s == 42.0));
    assert_eq!(out.truth.d_dp, 0.5);
}

#[test]
fn controllers_follow_the_script() {
    let opts = SynthOptions::new(SceneKind::Rope, 20, 12);
    let out = synth_scene(&opts, &mut seeded_rng(1)).unwrap();
    assert_eq!(out.trajectory.frames(), 12);
    for (t, row) in out.script.trajectory.iter().enumerate() {
        assert_eq!(out.trajectory.positions[t][0], row[0]);
    }
    assert_eq!(controller_offset(0.0, 1.0), [0.0, 0.0, 0.0]);
    let o = controller_offset(LIFT_PERIOD / 2.0, 1.0);
    assert!((o[2] - LIFT).abs() < 1e-15);
}

#[test]
fn still_controllers_let_the_scene_settle() {
    let mut opts = SynthOptions::new(SceneKind::Rope, 20, 60);
    opts.amplitude = 0.0;
    let out = synth_scene(&opts, &mut seeded_rng(2)).unwrap();
    let m = &out.scene.graph.masses;
    let t = out.trajectory.frames();
    let peak = (0..=t).map(|k| kinetic(&out.trajectory, m, k)).fold(0.0, f64::max);
    assert!(peak > 0.0);
    assert!(kinetic(&out.trajectory, m, t) < peak);
}

#[test]
fn generation_is_deterministic() {
    let opts = SynthOptions::new(SceneKind::Rope, 50, 20);
    let a = synth_scene(&opts, &mut seeded_rng(7)).unwrap();
    let b = synth_scene(&opts, &mut seeded_rng(7)).unwrap();
    assert_eq!(scene_to_json(&a.scene).unwrap(), scene_to_json(&b.scene).unwrap());
    assert_eq!(traj_to_json(&a.trajectory).unwrap(), traj_to_json(&b.trajectory).unwrap());
    assert_eq!(a.truth, b.truth);
    let c = synth_scene(&opts, &mut seeded_rng(8)).unwrap();
    assert_ne!(a.truth, c.truth);
}

#[test]
fn observations() {
    let opts = SynthOptions::new(SceneKind::Rope, 20, 10);
    let out = synth_scene(&opts, &mut seeded_rng(0)).unwrap();
    let traj = &out.trajectory;

    let full = make_observation(traj, &out.script, 1.0, 0.0, &mut seeded_rng(1)).unwrap();
    assert_eq!(full.track_ids, (0..20).collect::<Vec<_>>());
    assert_eq!(full.points, traj.positions);

    let half = make_observation(traj, &out.script, 0.5, 0.0, &mut seeded_rng(1)).unwrap();
    assert_eq!(half.track_ids.len(), 10);
    for (t, frame) in half.points.iter().enumerate() {
        for (k, &i) in half.track_ids.iter().enumerate() {
            assert_eq!(frame[k], traj.positions[t][i]);
        }
    }
    let again = make_observation(traj, &out.script, 0.5, 0.0, &mut seeded_rng(1)).unwrap();
    assert_eq!(half.track_ids, again.track_ids);

    let noisy = make_observation(traj, &out.script, 1.0, 0.01, &mut seeded_rng(1)).unwrap();
    let diffs: Vec<f64> = noisy
        .points
        .iter()
        .zip(&traj.positions)
        .flat_map(|(a, b)| a.iter().zip(b).flat_map(|(p, q)| (0..3).map(move |c| p[c] - q[c])))
        .collect();
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!(mean.abs() < 0.002, "mean {mean}");
    assert!((sd - 0.01).abs() < 0.001, "sd {sd}");

    for bad in [0.0, -0.1, 1.5] {
        assert!(make_observation(traj, &out.script, bad, 0.0, &mut seeded_rng(1)).is_err());
    }
    assert!(make_observation(traj, &out.script, 0.5, -1.0, &mut seeded_rng(1)).is_err());
}
