//! Finite-difference verification of the full training gradient: network,
//! Galerkin chain, heads, adjoint rollout and loss.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::TrainConfig;
use super::observation::Observation;
use super::pipeline::{init_store, run_pass, Context, LevelAssign, Plan, LOG_DP, LOG_DR, LOG_S};
use crate::autodiff::{finite_diff_check_at, grad, FdReport, ParamStore};
use crate::dynamics::{rollout, DynamicState, MechParams};
use crate::error::{Error, Result};
use crate::scenes::{controller_script, Scene};

#[derive(Clone, Debug)]
pub struct GradcheckOptions {
    pub frames: usize,
    pub samples: usize,
    /// Central-difference step. Smaller steps let the rounding noise of a
    /// 6670-substep rollout swamp the smallest network-weight gradients.
    pub eps: f64,
    pub seed: u64,
    pub substeps: usize,
    /// Scales the rollout's backward rule; used to show the check can fail.
    pub corrupt_backward: Option<f64>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions { frames: 10, samples: 20, eps: 1e-5, seed: 0, substeps: 667, corrupt_backward: None }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckReport {
    pub passed: bool,
    pub tolerance: f64,
    pub loss: f64,
    #[serde(flatten)]
    pub fd: FdReport,
}

pub const GRADCHECK_TOL: f64 = 1e-4;
const REF_STIFFNESS: f64 = 20.0;

fn small_config(opts: &GradcheckOptions) -> TrainConfig {
    TrainConfig {
        levels: 1,
        ratios: vec![0.5],
        epochs: 2,
        commit: 1,
        latent: 8,
        hidden: 8,
        hidden_layers: 1,
        rounds: 1,
        substeps: opts.substeps,
        seed: opts.seed,
        init: super::config::InitGuess { stiffness: REF_STIFFNESS, ..Default::default() },
        ..TrainConfig::default()
    }
}

/// Stiffness, damping or other network weights; contact is excluded.
fn group_of(name: &str) -> usize {
    let head = |w: &str| name.starts_with("head") && name.split('.').nth(1) == Some(w);
    match name {
        LOG_S => 0,
        _ if head("s") => 0,
        LOG_DP | LOG_DR => 1,
        _ if head("dp") || head("dr") => 1,
        _ if name.starts_with("phys.") => usize::MAX,
        _ => 2,
    }
}

/// Checks the gradient of the summed level-0 and level-1 rollout losses
/// without ground contact. The level-1 assignment is held fixed so the loss
/// is smooth in every checked parameter; head output layers get small random
/// weights so that every layer of the network carries gradient. The target
/// is a full observation of a rollout at twice the reference stiffness.
pub fn gradcheck(scene: &Scene, opts: &GradcheckOptions) -> Result<GradcheckReport> {
    if opts.frames == 0 || opts.samples == 0 || !(opts.eps > 0.0) {
        return Err(Error::InvalidConfig("gradcheck needs positive frames, samples and eps".into()));
    }
    let cfg = small_config(opts);
    let mut sim = scene.config.clone();
    sim.ground = None;
    sim.substeps = opts.substeps;
    let graph = &scene.graph;
    let script = controller_script(graph, opts.frames, sim.dt, 1.0);
    let truth = MechParams::uniform(graph.edge_count(), 2.0 * REF_STIFFNESS, 0.5, 0.05);
    let z0 = DynamicState::at_rest(graph.positions0.clone());
    let traj = rollout(&z0, &script, graph, &truth, &sim, opts.frames)?;
    let obs = Observation::new(traj.positions.clone(), (0..graph.node_count()).collect(), script)?;

    let mut ctx = Context::new(graph.clone(), sim, &cfg, obs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut store = init_store(&cfg, &mut rng)?;
    for (mlp, zero_last) in cfg.arch().all_mlps() {
        if zero_last {
            let name = mlp.weight_name(mlp.layers() - 1);
            let w = store.get(&name)?.mapv(|_| rng.random_range(-0.1..0.1));
            store.set(&name, w)?;
        }
    }
    let first = run_pass(&ctx, &store, Plan { assign: vec![LevelAssign::Sample], temperature: cfg.lambda_min, noise: None, decode_from: 0, supervise: vec![] })?;
    let fixed = vec![LevelAssign::Fixed(first.assignments[0].clone())];
    let plan = |assign: Vec<LevelAssign>| Plan { assign, temperature: cfg.lambda_min, noise: None, decode_from: 0, supervise: vec![0, 1] };

    ctx.fault = opts.corrupt_backward.map(|f| ("rollout".to_string(), f));
    let out = run_pass(&ctx, &store, plan(fixed.clone()))?;
    let loss_var = out.loss.expect("supervised");
    let loss = out.tape.scalar(loss_var);
    let grads = grad(&out.tape, loss_var, &store)?;
    ctx.fault = None;

    let picks = stratified_picks(&store, &grads.grads, opts.samples, &mut rng);
    let mut f = |s: &ParamStore| -> Result<f64> {
        let o = run_pass(&ctx, s, plan(fixed.clone()))?;
        Ok(o.tape.scalar(o.loss.expect("supervised")))
    };
    let fd = finite_diff_check_at(&mut f, &store, &grads, opts.eps, &picks)?;
    let passed = fd.max_rel_error <= GRADCHECK_TOL && fd.samples.iter().any(|s| !s.non_smooth);
    Ok(GradcheckReport { passed, tolerance: GRADCHECK_TOL, loss, fd })
}

/// Splits the samples between stiffness, damping and network weights,
/// drawing within each group among entries whose gradient is at least
/// 1e-3 of the group's largest (smaller ones are dominated by rounding).
fn stratified_picks(
    store: &ParamStore,
    grads: &[crate::autodiff::Tensor],
    samples: usize,
    rng: &mut impl Rng,
) -> Vec<(usize, usize)> {
    let mut groups: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); 3];
    for (i, g) in grads.iter().enumerate() {
        let p = store.entry(i);
        let gi = group_of(&p.name);
        if !p.trainable || gi == usize::MAX {
            continue;
        }
        for (k, &v) in g.iter().enumerate() {
            groups[gi].push((i, k, v.abs()));
        }
    }
    let mut pools: Vec<Vec<(usize, usize)>> = groups
        .into_iter()
        .map(|g| {
            let max = g.iter().map(|x| x.2).fold(0.0, f64::max);
            g.into_iter().filter(|x| max > 0.0 && x.2 >= 1e-3 * max).map(|x| (x.0, x.1)).collect()
        })
        .collect();
    pools.retain(|p| !p.is_empty());
    let mut picks = Vec::with_capacity(samples);
    for pool in pools.iter_mut() {
        pool.shuffle(rng);
    }
    // Equal shares, capped at each pool's size; leftovers go to larger pools
    // and only wrap around once every pool is exhausted.
    let mut quota = vec![0; pools.len()];
    let mut left = samples;
    while left > 0 && !pools.is_empty() {
        let open: Vec<usize> = (0..pools.len()).filter(|&g| quota[g] < pools[g].len()).collect();
        let targets: Vec<usize> = if open.is_empty() { (0..pools.len()).collect() } else { open };
        for &g in &targets {
            if left == 0 {
                break;
            }
            quota[g] += 1;
            left -= 1;
        }
    }
    for (pool, &q) in pools.iter().zip(&quota) {
        for j in 0..q {
            picks.push(pool[j % pool.len()]);
        }
    }
    picks
}
