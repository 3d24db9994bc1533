//! Trained hierarchies and the progressive-commitment training loop.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{Strategy, TrainConfig};
use super::observation::Observation;
use super::pipeline::{coarsen, init_store, is_phys, level_script, run_pass, Context, LevelAssign, Plan, CONTACT_RAW};
use super::schedule::{anneal_temperature, closes_window, learning_rate, phys_learning_rate, supervised_level};
use crate::autodiff::{adam_update, grad, AdamState, Gradients, ParamStore};
use crate::dynamics::{rollout, ControllerScript, DynamicState, MechParams, Trajectory};
use crate::error::{Error, Result};
use crate::gnn::AssignmentMatrix;
use crate::graph::{compose_assignments, Hierarchy, SpringGraph, SystemMatrices};
use crate::reduction::{gramian_reduce, random_reduce, random_reduce_count, GramianReport, GRAMIAN_MAX_NODES};
use crate::scenes::Scene;

/// Network weights, optimiser state, committed assignments and the decoded
/// parameters of every level.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub config: TrainConfig,
    pub store: ParamStore,
    pub adam: AdamState,
    /// Assignment from level `l` to `l+1`.
    pub assignments: Vec<AssignmentMatrix>,
    pub committed: Vec<bool>,
    /// Decoded parameters per level.
    pub params: Vec<MechParams>,
}

/// One line of the training log.
#[derive(Clone, Debug, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub level: usize,
    pub loss: f64,
    pub lr: f64,
    pub temperature: f64,
    pub grad_norm: f64,
    pub retried: bool,
    pub committed: Vec<bool>,
    /// Committed assignments as of the end of the epoch.
    #[serde(skip)]
    pub frozen: Vec<Option<AssignmentMatrix>>,
}

impl TrainedModel {
    pub fn levels(&self) -> usize {
        self.assignments.len()
    }

    /// Spring graphs of every level, rebuilt from the scene and assignments.
    pub fn graphs(&self, scene_graph: &SpringGraph) -> Result<Vec<SpringGraph>> {
        let mut graphs = vec![scene_graph.clone()];
        for (l, p) in self.assignments.iter().enumerate() {
            if p.n_fine() != graphs[l].node_count() {
                return Err(Error::InvalidConfig(format!(
                    "model assignment {l} expects {} nodes, level has {}",
                    p.n_fine(),
                    graphs[l].node_count()
                )));
            }
            graphs.push(coarsen(&graphs[l], p)?);
        }
        for (l, g) in graphs.iter().enumerate() {
            if self.params[l].stiffness.len() != g.edge_count() {
                return Err(Error::InvalidConfig(format!(
                    "level {l} has {} edges but {} stiffness values",
                    g.edge_count(),
                    self.params[l].stiffness.len()
                )));
            }
        }
        Ok(graphs)
    }

    pub fn hierarchy(&self, scene_graph: &SpringGraph) -> Result<Hierarchy> {
        let mut h = Hierarchy::default();
        for (l, g) in self.graphs(scene_graph)?.into_iter().enumerate() {
            h.push_level(g, self.params[l].clone())?;
        }
        h.assignments = self.assignments.clone();
        for l in 1..h.committed.len() {
            h.committed[l] = self.committed[l - 1];
        }
        if let Some(c) = h.committed.first_mut() {
            *c = true;
        }
        Ok(h)
    }

    /// Level-0 node → level node map.
    pub fn level_map(&self, level: usize) -> Vec<usize> {
        compose_assignments(&self.assignments, self.assignments.first().map_or(0, |p| p.n_fine()), level)
    }

    /// Rolls out `level` for `frames` frames from rest, driving the
    /// controllers with the projected level-0 script.
    pub fn rollout_level(&self, scene: &Scene, script: &ControllerScript, level: usize, frames: usize) -> Result<Trajectory> {
        let (graph, params, script) = self.level_system(scene, script, level)?;
        let z0 = DynamicState::at_rest(graph.positions0.clone());
        rollout(&z0, &script, &graph, &params, &scene.config, frames)
    }

    /// Graph, parameters and controller script of one level.
    pub fn level_system(
        &self,
        scene: &Scene,
        script: &ControllerScript,
        level: usize,
    ) -> Result<(SpringGraph, MechParams, ControllerScript)> {
        if level > self.levels() {
            return Err(Error::InvalidConfig(format!("level {level} exceeds the model's {} levels", self.levels())));
        }
        let graphs = self.graphs(&scene.graph)?;
        let s = level_script(&graphs, &self.assignments, script, level)?;
        Ok((graphs[level].clone(), self.params[level].clone(), s))
    }

    /// Untrained model: network initialised from the seed, assignments
    /// committed from noise-free CLASP, parameters decoded at every level.
    pub fn initialize(scene: &Scene, obs: &Observation, cfg: &TrainConfig) -> Result<Self> {
        let ctx = Context::new(scene.graph.clone(), scene.config.clone(), cfg, obs.clone())?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let store = init_store(cfg, &mut rng)?;
        let fixed = initial_assignments(&ctx, cfg, &mut rng)?;
        let mut model = TrainedModel {
            config: cfg.clone(),
            adam: AdamState::new(&store),
            store,
            assignments: Vec::new(),
            committed: vec![false; ctx.levels()],
            params: Vec::new(),
        };
        let plan_assign = fixed.into_iter().map(|p| p.map_or(LevelAssign::Sample, LevelAssign::Fixed)).collect();
        let out = run_pass(&ctx, &model.store, Plan { assign: plan_assign, temperature: cfg.lambda_min, noise: None, decode_from: 0, supervise: vec![] })?;
        model.assignments = out.assignments;
        model.committed = vec![true; ctx.levels()];
        model.params = out.levels.iter().map(|l| l.params.expect("decoded").values(&out.tape)).collect();
        Ok(model)
    }
}

/// Random-strategy assignments are drawn once up front; learned ones are sampled.
fn initial_assignments(ctx: &Context, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Option<AssignmentMatrix>>> {
    match cfg.strategy {
        Strategy::Learned => Ok(vec![None; ctx.levels()]),
        Strategy::Random => {
            let mut g = ctx.graph.clone();
            let mut out = Vec::new();
            for l in 0..ctx.levels() {
                let p = random_reduce_count(&g, ctx.counts[l + 1], rng)?;
                g = coarsen(&g, &p)?;
                out.push(Some(p));
            }
            Ok(out)
        }
    }
}

struct Trainer<'a> {
    ctx: &'a Context,
    cfg: &'a TrainConfig,
    store: ParamStore,
    adam: AdamState,
    fixed: Vec<Option<AssignmentMatrix>>,
    rng: ChaCha8Rng,
}

/// A recorded optimiser step that can be undone and re-applied.
struct Undo {
    store: ParamStore,
    adam: AdamState,
    grads: Gradients,
    lr: f64,
    lr_phys: f64,
    contact_level: Option<usize>,
}

fn contact_mask(level: usize) -> impl Fn(&str) -> bool {
    let head = format!("head{level}.eta.");
    move |n: &str| n == CONTACT_RAW || n.starts_with(&head)
}

impl Trainer<'_> {
    fn plan_assign(&self, sampled: &[AssignmentMatrix], reuse: bool) -> Vec<LevelAssign> {
        (0..self.ctx.levels())
            .map(|l| match (&self.fixed[l], reuse) {
                (Some(p), _) => LevelAssign::Fixed(p.clone()),
                (None, true) => LevelAssign::Fixed(sampled[l].clone()),
                (None, false) => LevelAssign::Sample,
            })
            .collect()
    }

    fn supervised(&self, s: usize) -> Vec<usize> {
        if self.cfg.supervise_all_committed {
            (0..=s).collect()
        } else {
            vec![s]
        }
    }

    /// Forward + backward; returns loss, gradients (clipped) and the pre-clip norm.
    fn evaluate(&mut self, s: usize, temperature: f64, assign: Vec<LevelAssign>, noise: bool) -> Result<(f64, Gradients, f64, Vec<AssignmentMatrix>)> {
        let sup = self.supervised(s);
        let decode_from = sup[0];
        let noise_rng: Option<&mut dyn rand::RngCore> = if noise { Some(&mut self.rng) } else { None };
        let out = run_pass(self.ctx, &self.store, Plan { assign, temperature, noise: noise_rng, decode_from, supervise: sup })?;
        let loss_var = out.loss.expect("supervised pass");
        let loss = out.tape.scalar(loss_var);
        let mut grads = grad(&out.tape, loss_var, &self.store)?;
        if !grads.is_finite() {
            return Err(Error::NumericalError("non-finite gradient".into()));
        }
        let norm = grads.clip(self.cfg.grad_clip);
        Ok((loss, grads, norm, out.assignments))
    }

    fn apply(&mut self, u: &Undo) -> Result<()> {
        let cfg = &self.cfg.adam;
        match u.contact_level {
            None => {
                adam_update(&mut self.store, &u.grads, &mut self.adam, u.lr, cfg, &|n| !is_phys(n))?;
                adam_update(&mut self.store, &u.grads, &mut self.adam, u.lr_phys, cfg, &is_phys)?;
            }
            Some(level) => {
                let m = contact_mask(level);
                adam_update(&mut self.store, &u.grads, &mut self.adam, u.lr, cfg, &|n| m(n) && !is_phys(n))?;
                adam_update(&mut self.store, &u.grads, &mut self.adam, u.lr_phys, cfg, &|n| m(n) && is_phys(n))?;
            }
        }
        Ok(())
    }

    fn step(&mut self, grads: Gradients, lr: f64, lr_phys: f64, contact_level: Option<usize>) -> Result<Undo> {
        let u = Undo { store: self.store.clone(), adam: self.adam.clone(), grads, lr, lr_phys, contact_level };
        self.apply(&u)?;
        Ok(u)
    }

    /// Noise-free pass decoding level `s` upwards; returns the assignments and decoded parameters.
    fn decode_only(&mut self, from: usize) -> Result<(Vec<AssignmentMatrix>, Vec<Option<MechParams>>)> {
        let assign = self.plan_assign(&[], false);
        let out = run_pass(self.ctx, &self.store, Plan { assign, temperature: self.cfg.lambda_min, noise: None, decode_from: from, supervise: vec![] })?;
        let params = out.levels.iter().map(|l| l.params.map(|p| p.values(&out.tape))).collect();
        Ok((out.assignments, params))
    }
}

/// Progressive-commitment training. `log` receives one entry per epoch.
pub fn train(scene: &Scene, obs: &Observation, cfg: &TrainConfig, log: &mut dyn FnMut(&EpochLog)) -> Result<TrainedModel> {
    let ctx = Context::new(scene.graph.clone(), scene.config.clone(), cfg, obs.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let store = init_store(cfg, &mut rng)?;
    let fixed = initial_assignments(&ctx, cfg, &mut rng)?;
    let mut committed: Vec<bool> = fixed.iter().map(|p| p.is_some()).collect();
    let mut t = Trainer { ctx: &ctx, cfg, adam: AdamState::new(&store), store, fixed, rng };
    let levels = ctx.levels();
    let mut snapshots: Vec<Option<MechParams>> = vec![None; levels + 1];
    let mut last: Option<Undo> = None;

    for epoch in 0..cfg.epochs {
        let s = supervised_level(epoch, cfg);
        let lambda = anneal_temperature(epoch, cfg);
        let mut lr = learning_rate(epoch, cfg);
        let mut lr_phys = phys_learning_rate(epoch, cfg);
        let mut retried = false;
        let mut epoch_loss = f64::NAN;
        let mut epoch_norm = 0.0;
        let mut sampled: Vec<AssignmentMatrix> = Vec::new();

        let iters = cfg.k_model + cfg.k_col;
        let mut k = 0;
        while k < iters {
            let collision = k >= cfg.k_model;
            let assign = t.plan_assign(&sampled, collision);
            let res = t.evaluate(s, lambda, assign, !collision);
            let (loss, grads, norm, assignments) = match res {
                Ok(r) => r,
                Err(e @ Error::DivergedSimulation { .. }) => {
                    let Some(u) = last.take().filter(|_| !retried) else {
                        log::error!("epoch {epoch}: {e}; aborting");
                        return Err(e);
                    };
                    log::warn!("epoch {epoch}: {e}; undoing the last step and retrying at half learning rate");
                    retried = true;
                    lr *= 0.5;
                    lr_phys *= 0.5;
                    t.store = u.store.clone();
                    t.adam = u.adam.clone();
                    let redo = Undo { lr: u.lr * 0.5, lr_phys: u.lr_phys * 0.5, ..u };
                    t.apply(&redo)?;
                    continue;
                }
                Err(e) => return Err(e),
            };
            if !collision {
                epoch_loss = loss;
                epoch_norm = norm;
                sampled = assignments;
            }
            last = Some(t.step(grads, lr, lr_phys, collision.then_some(s))?);
            k += 1;
        }

        if closes_window(epoch, cfg) {
            let (assignments, params) = t.decode_only(s)?;
            // Freeze the topology below level s so that level s+1 trains
            // on a fixed graph for its whole window.
            if s < levels && t.fixed[s].is_none() {
                t.fixed[s] = Some(assignments[s].clone());
                committed[s] = true;
            }
            snapshots[s] = params[s].clone();
        }
        log(&EpochLog {
            epoch,
            level: s,
            loss: epoch_loss,
            lr,
            temperature: lambda,
            grad_norm: epoch_norm,
            retried,
            committed: committed.clone(),
            frozen: t.fixed.clone(),
        });
    }

    for l in 0..levels {
        if t.fixed[l].is_none() {
            let (assignments, _) = t.decode_only(levels)?;
            t.fixed[l] = Some(assignments[l].clone());
            committed[l] = true;
        }
    }
    if snapshots.iter().any(|s| s.is_none()) {
        let (_, params) = t.decode_only(0)?;
        for (snap, p) in snapshots.iter_mut().zip(params) {
            if snap.is_none() {
                *snap = p;
            }
        }
    }
    Ok(TrainedModel {
        config: cfg.clone(),
        store: t.store,
        adam: t.adam,
        assignments: t.fixed.into_iter().map(|p| p.expect("committed")).collect(),
        committed,
        params: snapshots.into_iter().map(|p| p.expect("snapshot")).collect(),
    })
}

/// Source of a replacement level-1 assignment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReduceStrategy {
    Learned,
    Random,
    Gramian,
}

impl std::str::FromStr for ReduceStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "learned" => Ok(ReduceStrategy::Learned),
            "random" => Ok(ReduceStrategy::Random),
            "gramian" => Ok(ReduceStrategy::Gramian),
            _ => Err(Error::InvalidConfig(format!("unknown strategy '{s}'"))),
        }
    }
}

impl TrainedModel {
    /// Replaces the assignment below level 0 with a baseline of `ratio` and
    /// re-derives the coarser levels with the trained network (noise-free
    /// CLASP, full decoding). `Learned` returns the model unchanged.
    pub fn reduce(
        &self,
        scene: &Scene,
        strategy: ReduceStrategy,
        ratio: f64,
        rng: &mut impl rand::Rng,
    ) -> Result<(TrainedModel, Option<GramianReport>)> {
        if self.levels() == 0 {
            return Err(Error::InvalidConfig("the model has no reduced levels".into()));
        }
        let graph = &scene.graph;
        let n0 = graph.node_count();
        if self.assignments[0].n_fine() != n0 {
            return Err(Error::InvalidConfig("model and scene node counts differ".into()));
        }
        let (p0, report) = match strategy {
            ReduceStrategy::Learned => return Ok((self.clone(), None)),
            ReduceStrategy::Random => (random_reduce(graph, ratio, rng)?, None),
            ReduceStrategy::Gramian => {
                if n0 > GRAMIAN_MAX_NODES {
                    return Err(Error::InvalidConfig(format!(
                        "Gramian reduction is limited to {GRAMIAN_MAX_NODES} nodes, scene has {n0}"
                    )));
                }
                let sys = SystemMatrices::assemble(graph, &self.params[0])?;
                let (p, r) = gramian_reduce(&sys, &graph.node_types, ratio)?;
                (p, Some(r))
            }
        };
        let mut cfg = self.config.clone();
        cfg.ratios[0] = p0.n_coarse as f64 / n0 as f64;
        cfg.frames = None;
        let placeholder = Observation::new(
            vec![graph.positions0.clone(); 2],
            (0..n0).collect(),
            ControllerScript::stationary(graph, 1),
        )?;
        let ctx = Context::new(graph.clone(), scene.config.clone(), &cfg, placeholder)?;
        let mut assign = vec![LevelAssign::Sample; ctx.levels()];
        assign[0] = LevelAssign::Fixed(p0);
        let out = run_pass(&ctx, &self.store, Plan { assign, temperature: cfg.lambda_min, noise: None, decode_from: 0, supervise: vec![] })?;
        let mut model = self.clone();
        model.config = cfg;
        model.assignments = out.assignments;
        model.committed = vec![true; ctx.levels()];
        model.params = out.levels.iter().map(|l| l.params.expect("decoded").values(&out.tape)).collect();
        Ok((model, report))
    }
}
