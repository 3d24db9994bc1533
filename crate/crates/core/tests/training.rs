use proptest::prelude::*;
use rand::Rng;
use springmor::io::model_to_json;
use springmor::scenes::{make_observation, synth_scene, SynthOptions};
use springmor::training::*;
use springmor::{ControllerScript, Error, SceneKind, Vec3};

fn cfg80() -> TrainConfig {
    TrainConfig::default()
}

#[test]
fn every_level_gets_one_window() {
    let cfg = cfg80();
    let mut epochs = vec![0; cfg.levels + 1];
    for e in 0..cfg.epochs {
        epochs[supervised_level(e, &cfg)] += 1;
    }
    assert_eq!(epochs, vec![20; 4]);
    let closing: Vec<usize> = (0..cfg.epochs).filter(|&e| closes_window(e, &cfg)).collect();
    assert_eq!(closing, vec![19, 39, 59, 79]);
    assert_eq!(window_start(2, &cfg), 40);
}

#[test]
fn extra_epochs_stay_on_the_coarsest_level() {
    let cfg = TrainConfig { epochs: 90, ..cfg80() };
    assert_eq!(supervised_level(85, &cfg), 3);
    assert!(!closes_window(79, &cfg));
    assert!(closes_window(89, &cfg));
}

#[test]
fn temperature_anchors() {
    let cfg = cfg80();
    assert_eq!(anneal_temperature(0, &cfg), 1.0);
    assert!((anneal_temperature(19, &cfg) - 0.1).abs() < 1e-15);
    assert_eq!(anneal_temperature(20, &cfg), 1.0);
    for w in 0..4 {
        for e in w * 20..w * 20 + 19 {
            assert!(anneal_temperature(e + 1, &cfg) <= anneal_temperature(e, &cfg));
        }
    }
}

#[test]
fn learning_rate_decays_within_windows() {
    let cfg = cfg80();
    assert_eq!(learning_rate(0, &cfg), 1e-3);
    assert!((learning_rate(2, &cfg) - 1e-3 * 0.81).abs() < 1e-18);
    assert_eq!(learning_rate(20, &cfg), 1e-3);
    let global = TrainConfig { decay_per_window: false, ..cfg80() };
    assert!((learning_rate(20, &global) - 1e-3 * 0.9f64.powi(20)).abs() < 1e-18);
    assert!((phys_learning_rate(1, &cfg) - 0.2 * 0.9).abs() < 1e-15);
}

#[test]
fn config_validation() {
    assert!(cfg80().validate().is_ok());
    let bad = [
        TrainConfig { ratios: vec![0.6, 0.6, 0.3], ..cfg80() },
        TrainConfig { ratios: vec![0.6, 0.4], ..cfg80() },
        TrainConfig { ratios: vec![1.2, 0.4, 0.3], ..cfg80() },
        TrainConfig { commit: 21, ..cfg80() },
        TrainConfig { lr: 0.0, ..cfg80() },
        TrainConfig { lambda_min: 2.0, ..cfg80() },
        TrainConfig { lr_decay: 1.5, ..cfg80() },
        TrainConfig { k_model: 0, ..cfg80() },
        TrainConfig { substeps: 0, ..cfg80() },
        TrainConfig { latent: 0, ..cfg80() },
    ];
    for c in bad {
        assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))), "{c:?}");
    }
    assert_eq!(cfg80().level_counts(200).unwrap(), vec![200, 120, 80, 60]);
    assert!(cfg80().level_counts(3).is_err());
}

#[test]
fn chamfer_examples() {
    let a = vec![[0.0, 0.0, 0.0], [1.0, 2.0, 3.0]];
    assert_eq!(chamfer_loss(&a, &a).unwrap(), 0.0);
    assert_eq!(chamfer_loss(&[[1.0, 0.0, 0.0], [3.0, 0.0, 0.0]], &[[0.0; 3]]).unwrap(), 1.0);
    assert!(chamfer_loss(&[], &a).is_err());
    assert!(chamfer_loss(&a, &[]).is_err());
}

fn obs_of(points: Vec<Vec<Vec3>>, track_ids: Vec<usize>) -> Observation {
    let frames = points.len();
    Observation::new(points, track_ids, ControllerScript::empty(frames)).unwrap()
}

#[test]
fn tracking_examples() {
    let pred: Vec<Vec<Vec3>> = (0..4).map(|t| vec![[t as f64, 0.0, 0.0], [0.0, t as f64, 0.0]]).collect();
    let perfect = obs_of(pred.clone(), vec![0, 1]);
    assert_eq!(tracking_loss(&pred, &perfect, &[0, 1]).unwrap(), 0.0);
    assert_eq!(rollout_loss(&pred, &perfect, &[0, 1]).unwrap(), 0.0);

    let lifted: Vec<Vec<Vec3>> = pred.iter().map(|f| vec![[f[0][0], f[0][1], 0.5]]).collect();
    let o = obs_of(lifted, vec![0]);
    assert!((tracking_loss(&pred, &o, &[0, 1]).unwrap() - 0.5).abs() < 1e-15);

    // Fine nodes 0 and 2 merge into coarse node 0; node 1 is alone.
    let coarse: Vec<Vec<Vec3>> = (0..3).map(|t| vec![[0.0, 0.0, t as f64], [5.0, 0.0, 0.0]]).collect();
    let fine: Vec<Vec<Vec3>> = (0..3).map(|t| vec![[1.0, 0.0, t as f64], [5.0, 0.0, 0.0], [-1.0, 0.0, t as f64]]).collect();
    let o = obs_of(fine, vec![0, 1, 2]);
    assert_eq!(track_nodes(&o, &[0, 1, 0]).unwrap(), vec![0, 1, 0]);
    let expected = (1.0 + 0.0 + 1.0) / 3.0;
    assert!((tracking_loss(&coarse, &o, &[0, 1, 0]).unwrap() - expected).abs() < 1e-15);
    assert!(matches!(track_nodes(&o, &[0, 1]), Err(Error::InvalidConfig(_))));
}

#[test]
fn time_normalisation_and_level_sums() {
    let frame = |_: usize| vec![[0.0, 0.0, 0.3], [1.0, 0.0, 0.0]];
    let pred = |t: usize| -> Vec<Vec<Vec3>> { (0..=t).map(|_| vec![[0.0; 3], [1.0, 0.0, 0.0]]).collect() };
    let short = obs_of((0..=3).map(frame).collect(), vec![0, 1]);
    let long = obs_of((0..=6).map(frame).collect(), vec![0, 1]);
    let a = rollout_loss(&pred(3), &short, &[0, 1]).unwrap();
    let b = rollout_loss(&pred(6), &long, &[0, 1]).unwrap();
    assert_eq!(a, b);
    // chamfer 0.15 + tracking 0.15 per frame
    assert!((a - 0.3).abs() < 1e-15);
    assert_eq!(total_loss(&[a]), a);
    assert_eq!(total_loss(&[0.25, 1.5]), 1.75);
    assert_eq!(total_loss(&[]), 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn extra_predictions_never_increase_chamfer(seed in any::<u64>(), n in 1usize..20, m in 1usize..20, k in 1usize..10) {
        let mut rng = springmor::seeded_rng(seed);
        let mut pt = || -> Vec3 { [rng.random(), rng.random(), rng.random()] };
        let pred: Vec<Vec3> = (0..n).map(|_| pt()).collect();
        let obs: Vec<Vec3> = (0..m).map(|_| pt()).collect();
        let mut more = pred.clone();
        more.extend((0..k).map(|_| pt()));
        prop_assert!(chamfer_loss(&more, &obs).unwrap() <= chamfer_loss(&pred, &obs).unwrap());
    }

    #[test]
    fn level_sum_is_order_invariant(seed in any::<u64>(), n in 1usize..30) {
        let mut rng = springmor::seeded_rng(seed);
        let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0) * 10f64.powi(rng.random_range(-6..3))).collect();
        let a = total_loss(&v);
        v.reverse();
        let b = total_loss(&v);
        v.swap(0, n - 1);
        let c = total_loss(&v);
        prop_assert_eq!(a, b);
        prop_assert_eq!(a, c);
    }
}

fn tiny_setup(epochs: usize) -> (springmor::Scene, Observation, TrainConfig) {
    let mut rng = springmor::seeded_rng(4);
    let mut opts = SynthOptions::new(SceneKind::Rope, 20, 10);
    opts.config.substeps = 20;
    let out = synth_scene(&opts, &mut rng).unwrap();
    let obs = make_observation(&out.trajectory, &out.script, 0.7, 0.0, &mut rng).unwrap();
    let cfg = TrainConfig {
        levels: 2,
        ratios: vec![0.6, 0.4],
        epochs,
        commit: 2,
        k_col: 1,
        substeps: 20,
        latent: 8,
        hidden: 8,
        hidden_layers: 1,
        rounds: 1,
        seed: 11,
        ..TrainConfig::default()
    };
    (out.scene, obs, cfg)
}

#[test]
fn committed_assignments_never_change() {
    let (scene, obs, cfg) = tiny_setup(6);
    let mut flags = Vec::new();
    let short = train(&scene, &obs, &cfg, &mut |l| flags.push(l.committed.clone())).unwrap();
    // Commit flags are monotone and set at the end of each window.
    assert_eq!(flags[0], vec![false, false]);
    assert_eq!(flags[1], vec![true, false]);
    assert_eq!(flags[3], vec![true, true]);
    for w in flags.windows(2) {
        assert!(w[0].iter().zip(&w[1]).all(|(a, b)| !a || *b));
    }
    // Training longer replays the same early epochs; what was committed stays put.
    let long = train(&scene, &obs, &TrainConfig { epochs: 9, ..cfg.clone() }, &mut |_| {}).unwrap();
    assert_eq!(short.assignments, long.assignments);
    let again = train(&scene, &obs, &cfg, &mut |_| {}).unwrap();
    assert_eq!(model_to_json(&short).unwrap(), model_to_json(&again).unwrap());
    assert_eq!(short.params.len(), 3);
    for (l, p) in short.assignments.iter().enumerate() {
        assert!(p.validate().is_ok(), "level {l}");
    }
}

#[test]
fn training_rejects_bad_configs() {
    let (scene, obs, cfg) = tiny_setup(6);
    let bad = TrainConfig { commit: 3, ..cfg };
    assert!(matches!(train(&scene, &obs, &bad, &mut |_| {}), Err(Error::InvalidConfig(_))));
}

#[test]
fn gradcheck_passes_and_detects_a_broken_backward() {
    let mut rng = springmor::seeded_rng(2);
    let scene = synth_scene(&SynthOptions::new(SceneKind::Rope, 30, 10), &mut rng).unwrap().scene;
    let go = GradcheckOptions::default();
    let ok = gradcheck(&scene, &go).unwrap();
    assert!(ok.passed, "max rel error {}", ok.fd.max_rel_error);
    assert!(ok.fd.max_rel_error <= GRADCHECK_TOL);
    let broken = gradcheck(&scene, &GradcheckOptions { corrupt_backward: Some(1.5), ..go }).unwrap();
    assert!(!broken.passed);
}
