//! One differentiable pass of the hierarchy: encode and coarsen downwards,
//! decode parameters upwards, roll out and score the supervised levels.

use std::sync::{Arc, Mutex};

use ndarray::Array2;
use rand::RngCore;

use super::loss::{frames_to_tensor, tensor_to_frames, LossOp};
use super::observation::Observation;
use crate::autodiff::{CustomOp, ParamStore, Tape, Tensor, Var};
use crate::dynamics::{ContactCoeffs, ControllerScript, DynamicState, PhysInputs, RolloutProblem, SimConfig, Trajectory};
use crate::error::{Error, Result};
use crate::gnn::{
    clasp_assign, contact_raw, decode_params, edge_inputs, encode, init_network, message_pass, select_seeds,
    AssignmentMatrix, EdgeIndex, NetArch, ParamVars, KAPPA_S, S_MIN,
};
use crate::graph::{compose_assignments, SpringGraph};
use crate::reduction::{build_coarse_graph, coarse_damping_factors, coarse_topology, project_controller_script};

use super::config::TrainConfig;

pub const LOG_S: &str = "phys.log_s";
pub const LOG_DP: &str = "phys.log_dp";
pub const LOG_DR: &str = "phys.log_dr";
pub const CONTACT_RAW: &str = "phys.contact_raw";

pub fn is_phys(name: &str) -> bool {
    name.starts_with("phys.")
}

/// Network weights plus the level-0 physical base parameters: one uniform
/// log-stiffness and the log damping pair. Per-edge variation comes from the
/// stiffness head.
pub fn init_store(cfg: &TrainConfig, rng: &mut impl rand::Rng) -> Result<ParamStore> {
    let mut store = ParamStore::new();
    init_network(&mut store, &cfg.arch(), rng)?;
    let g = &cfg.init;
    store.add(LOG_S, Array2::from_elem((1, 1), g.stiffness.ln()), true)?;
    store.add(LOG_DP, Array2::from_elem((1, 1), g.d_dp.ln()), true)?;
    store.add(LOG_DR, Array2::from_elem((1, 1), g.d_dr.ln()), true)?;
    store.add(CONTACT_RAW, contact_raw(&g.contact), true)?;
    Ok(store)
}

/// Rollout of one level as a tape op: `(stiffness E×1, d_dp, d_dr, contact 1×3)`
/// → positions `((T+1)·N)×3`. The forward trajectory is cached for the adjoint.
#[derive(Debug)]
pub struct RolloutOp {
    problem: RolloutProblem,
    base: PhysInputs,
    frames: usize,
    cache: Mutex<Option<(PhysInputs, Trajectory)>>,
}

impl RolloutOp {
    pub fn new(graph: &SpringGraph, script: ControllerScript, config: SimConfig, frames: usize) -> Result<Self> {
        let problem = RolloutProblem::new(graph, script, config)?;
        let z0 = DynamicState::at_rest(graph.positions0.clone());
        let base = PhysInputs {
            stiffness: vec![0.0; graph.edge_count()],
            rest: graph.rest_lengths.clone(),
            d_dp: 0.0,
            d_dr: 0.0,
            contact: ContactCoeffs::default(),
            masses: graph.masses.clone(),
            x0: z0.positions,
            v0: z0.velocities,
        };
        Ok(RolloutOp { problem, base, frames, cache: Mutex::new(None) })
    }

    fn inputs(&self, ins: &[&Tensor]) -> Result<PhysInputs> {
        if ins.len() != 4 || ins[0].len() != self.base.stiffness.len() || ins[3].len() != 3 {
            return Err(Error::InvalidConfig("rollout op expects stiffness, d_dp, d_dr and contact".into()));
        }
        let c = ins[3];
        Ok(PhysInputs {
            stiffness: ins[0].iter().copied().collect(),
            d_dp: ins[1][[0, 0]],
            d_dr: ins[2][[0, 0]],
            contact: ContactCoeffs { restitution: c[[0, 0]], friction: c[[0, 1]], contact_stiffness: c[[0, 2]] },
            ..self.base.clone()
        })
    }

    /// Trajectory of the last forward evaluation.
    pub fn last_trajectory(&self) -> Option<Trajectory> {
        self.cache.lock().ok()?.as_ref().map(|c| c.1.clone())
    }
}

impl CustomOp for RolloutOp {
    fn name(&self) -> &'static str {
        "rollout"
    }

    fn forward(&self, ins: &[&Tensor]) -> Result<Tensor> {
        let inp = self.inputs(ins)?;
        let traj = self.problem.simulate(&inp, self.frames, true)?;
        let out = frames_to_tensor(&traj.positions);
        if let Ok(mut c) = self.cache.lock() {
            *c = Some((inp, traj));
        }
        Ok(out)
    }

    fn backward(&self, ins: &[&Tensor], _out: &Tensor, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let inp = self.inputs(ins)?;
        let cached = self.cache.lock().ok().and_then(|c| c.as_ref().filter(|(k, _)| *k == inp).map(|c| c.1.clone()));
        let traj = match cached {
            Some(t) => t,
            None => self.problem.simulate(&inp, self.frames, true)?,
        };
        let gp = tensor_to_frames(grad, self.problem.node_count());
        let g = self.problem.backward(&inp, &traj, &gp)?;
        Ok(vec![
            Some(Array2::from_shape_vec((g.stiffness.len(), 1), g.stiffness).expect("column")),
            Some(Array2::from_elem((1, 1), g.d_dp)),
            Some(Array2::from_elem((1, 1), g.d_dr)),
            Some(ndarray::arr2(&[[g.restitution, g.friction, g.contact_stiffness]])),
        ])
    }
}

/// Static inputs of a pass.
#[derive(Clone, Debug)]
pub struct Context {
    pub graph: SpringGraph,
    pub sim: SimConfig,
    pub arch: NetArch,
    /// Node count of every level.
    pub counts: Vec<usize>,
    pub obs: Arc<Observation>,
    pub frames: usize,
    /// Test hook: scales the backward rule of the named tape op.
    pub fault: Option<(String, f64)>,
}

impl Context {
    pub fn new(graph: SpringGraph, sim: SimConfig, cfg: &TrainConfig, obs: Observation) -> Result<Self> {
        cfg.validate()?;
        obs.check_nodes(graph.node_count())?;
        let frames = cfg.frames.unwrap_or(obs.frames());
        let obs = obs.truncated(frames)?;
        let counts = cfg.level_counts(graph.node_count())?;
        let sim = SimConfig { substeps: cfg.substeps, ..sim };
        sim.validate()?;
        Ok(Context { graph, sim, arch: cfg.arch(), counts, obs: Arc::new(obs), frames, fault: None })
    }

    pub fn levels(&self) -> usize {
        self.counts.len() - 1
    }
}

/// Source of the assignment below a level.
#[derive(Clone, Debug)]
pub enum LevelAssign {
    Fixed(AssignmentMatrix),
    /// Neural-CLASP on farthest-point seeds of the current level.
    Sample,
}

pub struct Plan<'a> {
    pub assign: Vec<LevelAssign>,
    pub temperature: f64,
    pub noise: Option<&'a mut dyn RngCore>,
    /// Lowest level decoded.
    pub decode_from: usize,
    /// Levels contributing to the loss.
    pub supervise: Vec<usize>,
}

pub struct LevelOut {
    pub graph: SpringGraph,
    pub params: Option<ParamVars>,
}

pub struct PassOut {
    pub tape: Tape,
    pub levels: Vec<LevelOut>,
    /// Assignment below each level (`L` entries).
    pub assignments: Vec<AssignmentMatrix>,
    pub loss: Option<Var>,
    pub level_losses: Vec<(usize, f64)>,
}

/// Controller script of `level`, projected down the assignment chain.
pub fn level_script(
    graphs: &[SpringGraph],
    assignments: &[AssignmentMatrix],
    script: &ControllerScript,
    level: usize,
) -> Result<ControllerScript> {
    let mut s = script.clone();
    for l in 0..level {
        s = project_controller_script(&s, &assignments[l], &graphs[l])?;
    }
    Ok(s)
}

/// Coarse edges in first-appearance order and the coarse graph.
pub fn coarsen(fine: &SpringGraph, p: &AssignmentMatrix) -> Result<SpringGraph> {
    let topo = coarse_topology(&fine.edges, p);
    build_coarse_graph(fine, p, topo.edges)
}

pub fn run_pass(ctx: &Context, store: &ParamStore, mut plan: Plan<'_>) -> Result<PassOut> {
    let levels = ctx.levels();
    if plan.assign.len() != levels {
        return Err(Error::InvalidConfig(format!("{} assignments planned for {levels} levels", plan.assign.len())));
    }
    if plan.decode_from > levels || plan.supervise.iter().any(|&l| l < plan.decode_from || l > levels) {
        return Err(Error::InvalidConfig("supervised levels must be decoded".into()));
    }
    let arch = &ctx.arch;
    let mut tape = match &ctx.fault {
        Some((op, factor)) => Tape::with_fault(op, *factor),
        None => Tape::new(),
    };
    let mut graphs = vec![ctx.graph.clone()];
    let mut idx = vec![EdgeIndex::new(ctx.graph.node_count(), &ctx.graph.edges)];

    let (h, e) = encode(&mut tape, store, arch, &ctx.graph)?;
    let (h, e) = message_pass(&mut tape, store, &arch.phi_e(0, "enc"), &arch.phi_v(0, "enc"), h, e, &idx[0], &ctx.graph.node_types, arch.rounds)?;
    let mut hs = vec![h];
    let mut es = vec![e];

    let log_s = store.load(&mut tape, LOG_S)?;
    let log_dp = store.load(&mut tape, LOG_DP)?;
    let log_dr = store.load(&mut tape, LOG_DR)?;
    let contact_base = store.load(&mut tape, CONTACT_RAW)?;
    let s0 = tape.exp(log_s);
    let zeros = tape.constant(Array2::zeros((ctx.graph.edge_count(), 1)));
    let mut base_s = vec![tape.add_scalar_var(zeros, s0)?];
    let mut base_dp = vec![tape.exp(log_dp)];
    let mut base_dr = vec![tape.exp(log_dr)];

    let mut pvars = Vec::with_capacity(levels);
    let mut assignments = Vec::with_capacity(levels);
    for l in 0..levels {
        let g = &graphs[l];
        let (pv, p) = match &plan.assign[l] {
            LevelAssign::Fixed(p) => {
                if p.n_fine() != g.node_count() {
                    return Err(Error::InvalidConfig(format!("assignment {l} does not match level {l}")));
                }
                (tape.constant(p.hard_dense()), p.hardened())
            }
            LevelAssign::Sample => {
                let seeds = select_seeds(&g.positions0, ctx.counts[l + 1])?;
                let noise = plan.noise.as_mut().map(|r| &mut **r as &mut dyn RngCore);
                clasp_assign(&mut tape, hs[l], &seeds, plan.temperature, noise)?
            }
        };
        let lap = tape.scatter_laplacian(base_s[l], idx[l].edges.clone(), g.node_count())?;
        let ptl = tape.tmatmul(pv, lap)?;
        let l_hat = tape.matmul(ptl, pv)?;
        let topo = coarse_topology(&g.edges, &p);
        let lv = tape.value(l_hat);
        let edges: Vec<(usize, usize)> = topo.edges.iter().copied().filter(|&(a, b)| lv[[a, b]].abs() > 1e-12).collect();
        let off = tape.gather_entries(l_hat, Arc::new(edges.clone()))?;
        let s_hat = tape.scale(off, -1.0);
        base_s.push(tape.smooth_min(s_hat, S_MIN, KAPPA_S));
        let (dpf, drf) = coarse_damping_factors(&p, &topo);
        let dp = tape.scale(base_dp[l], dpf);
        let dr = tape.scale(base_dr[l], drf);
        base_dp.push(dp);
        base_dr.push(dr);

        let coarse = build_coarse_graph(g, &p, edges)?;
        let sizes = tape.constant(Array2::from_shape_vec((p.n_coarse, 1), p.cluster_sizes().iter().map(|&c| c as f64).collect()).expect("column"));
        let pooled = tape.tmatmul(pv, hs[l])?;
        let hp = tape.div_col(pooled, sizes)?;
        let ein = tape.constant(edge_inputs(&coarse.positions0, &coarse.edges));
        let ep = arch.enc_e().forward(&mut tape, store, ein)?;
        let ci = EdgeIndex::new(coarse.node_count(), &coarse.edges);
        let (h, e) = message_pass(&mut tape, store, &arch.phi_e(l + 1, "enc"), &arch.phi_v(l + 1, "enc"), hp, ep, &ci, &coarse.node_types, arch.rounds)?;
        hs.push(h);
        es.push(e);
        idx.push(ci);
        graphs.push(coarse);
        pvars.push(pv);
        assignments.push(p);
    }

    let mut params: Vec<Option<ParamVars>> = vec![None; levels + 1];
    let mut hd_prev: Option<Var> = None;
    for l in (plan.decode_from..=levels).rev() {
        let hin = match hd_prev {
            None => hs[l],
            Some(hd) => {
                let up = tape.matmul(pvars[l], hd)?;
                tape.add(hs[l], up)?
            }
        };
        let (hd, ed) = message_pass(&mut tape, store, &arch.phi_e(l, "dec"), &arch.phi_v(l, "dec"), hin, es[l], &idx[l], &graphs[l].node_types, arch.rounds)?;
        params[l] = Some(decode_params(&mut tape, store, arch, l, ed, hd, base_s[l], base_dp[l], base_dr[l], contact_base)?);
        hd_prev = Some(hd);
    }

    let mut terms = Vec::new();
    let mut level_losses = Vec::new();
    let mut sup = plan.supervise.clone();
    sup.sort_unstable();
    sup.dedup();
    for &l in &sup {
        let pv = params[l].expect("decoded level");
        let script = level_script(&graphs, &assignments, &ctx.obs.script, l)?;
        let op = RolloutOp::new(&graphs[l], script, ctx.sim.clone(), ctx.frames)?;
        let x = tape.custom(Arc::new(op), &[pv.stiffness, pv.d_dp, pv.d_dr, pv.contact])?;
        let map = compose_assignments(&assignments, ctx.graph.node_count(), l);
        let loss = tape.custom(Arc::new(LossOp::new(ctx.obs.clone(), &map, graphs[l].node_count())?), &[x])?;
        level_losses.push((l, tape.scalar(loss)));
        terms.push(loss);
    }
    let loss = match terms.len() {
        0 => None,
        _ => {
            let mut acc = terms[0];
            for &t in &terms[1..] {
                acc = tape.add(acc, t)?;
            }
            Some(acc)
        }
    };
    let levels_out = graphs.into_iter().zip(params).map(|(graph, params)| LevelOut { graph, params }).collect();
    Ok(PassOut { tape, levels: levels_out, assignments, loss, level_losses })
}
