//! Substep kernel and its hand-written adjoint.
//!
//! Forward: symplectic Euler with the velocity-dependent contact terms
//! (normal damping, tangential friction) integrated linearly-implicitly per
//! node, which keeps stiff friction stable at small substeps. Backward:
//! replays each frame from its checkpoint and runs the exact discrete adjoint.

use crate::error::{Error, Result};
use crate::graph::{NodeType, SpringGraph, Vec3};

use super::{
    ContactCoeffs, ControllerScript, DynamicState, ForceMode, Integrator, MechParams, SimConfig, Trajectory,
    DEGENERATE_LENGTH, FRICTION_EPS,
};

/// Differentiable inputs of a rollout.
#[derive(Clone, Debug, PartialEq)]
pub struct PhysInputs {
    pub stiffness: Vec<f64>,
    pub rest: Vec<f64>,
    pub d_dp: f64,
    pub d_dr: f64,
    pub contact: ContactCoeffs,
    pub masses: Vec<f64>,
    pub x0: Vec<Vec3>,
    pub v0: Vec<Vec3>,
}

impl PhysInputs {
    pub fn from_params(graph: &SpringGraph, params: &MechParams, z0: &DynamicState) -> Self {
        PhysInputs {
            stiffness: params.stiffness.clone(),
            rest: graph.rest_lengths.clone(),
            d_dp: params.d_dp,
            d_dr: params.d_dr,
            contact: params.contact,
            masses: graph.masses.clone(),
            x0: z0.positions.clone(),
            v0: z0.velocities.clone(),
        }
    }
}

/// Gradients with respect to every field of [`PhysInputs`].
#[derive(Clone, Debug, PartialEq)]
pub struct PhysGrads {
    pub stiffness: Vec<f64>,
    pub rest: Vec<f64>,
    pub d_dp: f64,
    pub d_dr: f64,
    pub restitution: f64,
    pub friction: f64,
    pub contact_stiffness: f64,
    pub masses: Vec<f64>,
    pub x0: Vec<Vec3>,
    pub v0: Vec<Vec3>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Kind {
    Free,
    Boundary,
    Controller(usize),
}

/// Static description of a rollout: topology, node roles, controller script
/// and integrator settings.
#[derive(Clone, Debug)]
pub struct RolloutProblem {
    edges: Vec<(usize, usize)>,
    kinds: Vec<Kind>,
    script: ControllerScript,
    config: SimConfig,
}

#[inline]
fn sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn accumulate_springs(
    x: &[Vec3],
    edges: &[(usize, usize)],
    s: &[f64],
    rest: &[f64],
    mode: ForceMode,
    f: &mut [Vec3],
) -> usize {
    let mut degenerate = 0;
    for (k, &(i, j)) in edges.iter().enumerate() {
        let d = sub(&x[j], &x[i]);
        let fe = match mode {
            ForceMode::Linear => [s[k] * d[0], s[k] * d[1], s[k] * d[2]],
            ForceMode::RestLength => {
                let l = dot(&d, &d).sqrt();
                if l < DEGENERATE_LENGTH {
                    degenerate += 1;
                    [s[k] * (l - rest[k]), 0.0, 0.0]
                } else {
                    let c = s[k] * (l - rest[k]) / l;
                    [c * d[0], c * d[1], c * d[2]]
                }
            }
        };
        for c in 0..3 {
            f[i][c] += fe[c];
            f[j][c] -= fe[c];
        }
    }
    degenerate
}

pub(crate) fn accumulate_damping(v: &[Vec3], edges: &[(usize, usize)], dp: f64, dr: f64, f: &mut [Vec3]) {
    for &(i, j) in edges {
        for c in 0..3 {
            let r = dp * (v[i][c] - v[j][c]);
            f[i][c] -= r;
            f[j][c] += r;
        }
    }
    for (fi, vi) in f.iter_mut().zip(v) {
        for c in 0..3 {
            fi[c] -= dr * vi[c];
        }
    }
}

/// Contact quantities of one penetrating node.
struct ContactEval {
    p: f64,
    fn_: f64,
    vt: f64,
    ct: f64,
    ct_capped: bool,
    cn: f64,
}

#[inline]
fn eval_contact(c: &ContactCoeffs, ground: f64, x: &Vec3, v: &Vec3) -> Option<ContactEval> {
    let p = ground - x[2];
    if p <= 0.0 {
        return None;
    }
    let (e, mu, kc) = (c.restitution, c.friction, c.contact_stiffness);
    let fn_ = kc * p * (1.0 + e) - kc * e * v[2].min(0.0);
    let vt = (v[0] * v[0] + v[1] * v[1]).sqrt();
    let raw = mu * fn_ / (vt + FRICTION_EPS);
    let ct_capped = raw >= kc;
    let ct = if ct_capped { kc } else { raw };
    let cn = if v[2] < 0.0 { kc * e } else { 0.0 };
    Some(ContactEval { p, fn_, vt, ct, ct_capped, cn })
}

impl RolloutProblem {
    pub fn new(graph: &SpringGraph, script: ControllerScript, config: SimConfig) -> Result<Self> {
        Self::from_parts(graph.edges.clone(), &graph.node_types, script, config)
    }

    pub fn from_parts(
        edges: Vec<(usize, usize)>,
        types: &[NodeType],
        script: ControllerScript,
        config: SimConfig,
    ) -> Result<Self> {
        config.validate()?;
        let ctrl: Vec<usize> = (0..types.len()).filter(|&i| types[i] == NodeType::Controller).collect();
        if ctrl != script.indices {
            return Err(Error::InvalidConfig("script indices differ from the controller nodes".into()));
        }
        if script.trajectory.is_empty() || script.trajectory.iter().any(|r| r.len() != ctrl.len()) {
            return Err(Error::InvalidConfig("malformed controller trajectory".into()));
        }
        let mut kinds = vec![Kind::Free; types.len()];
        for (i, t) in types.iter().enumerate() {
            if *t == NodeType::Boundary {
                kinds[i] = Kind::Boundary;
            }
        }
        for (k, &i) in ctrl.iter().enumerate() {
            kinds[i] = Kind::Controller(k);
        }
        Ok(RolloutProblem { edges, kinds, script, config })
    }

    pub fn node_count(&self) -> usize {
        self.kinds.len()
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn script(&self) -> &ControllerScript {
        &self.script
    }

    fn check_inputs(&self, inp: &PhysInputs, frames: usize) -> Result<()> {
        let n = self.node_count();
        if inp.stiffness.len() != self.edges.len() || inp.rest.len() != self.edges.len() {
            return Err(Error::InvalidConfig("per-edge input length differs from edge count".into()));
        }
        if inp.masses.len() != n || inp.x0.len() != n || inp.v0.len() != n {
            return Err(Error::InvalidConfig("per-node input length differs from node count".into()));
        }
        if self.script.trajectory.len() < frames + 1 {
            return Err(Error::InvalidConfig(format!(
                "controller script covers {} frames, {} requested",
                self.script.frames(),
                frames
            )));
        }
        Ok(())
    }

    /// Spring, dashpot, drag and elastic contact forces (the explicit part).
    fn forces(&self, inp: &PhysInputs, x: &[Vec3], v: &[Vec3], f: &mut [Vec3]) {
        for fi in f.iter_mut() {
            *fi = [0.0; 3];
        }
        accumulate_springs(x, &self.edges, &inp.stiffness, &inp.rest, self.config.mode, f);
        accumulate_damping(v, &self.edges, inp.d_dp, inp.d_dr, f);
        if let Some(ground) = self.config.ground {
            let c = &inp.contact;
            let k = c.contact_stiffness * (1.0 + c.restitution);
            for (i, kind) in self.kinds.iter().enumerate() {
                if *kind == Kind::Free {
                    let p = ground - x[i][2];
                    if p > 0.0 {
                        f[i][2] += k * p;
                    }
                }
            }
        }
    }

    /// One substep `k` of frame `t`; returns false if the new state is not finite.
    #[allow(clippy::too_many_arguments)]
    fn substep(
        &self,
        inp: &PhysInputs,
        t: usize,
        k: usize,
        x: &[Vec3],
        v: &[Vec3],
        xn: &mut [Vec3],
        vn: &mut [Vec3],
        f: &mut [Vec3],
    ) -> bool {
        let cfg = &self.config;
        let h = cfg.dt / cfg.substeps as f64;
        self.forces(inp, x, v, f);
        let alpha = (k + 1) as f64 / cfg.substeps as f64;
        let (u0, u1) = (&self.script.trajectory[t], &self.script.trajectory[t + 1]);
        let mut ok = true;
        for i in 0..x.len() {
            match self.kinds[i] {
                Kind::Boundary => {
                    xn[i] = x[i];
                    vn[i] = [0.0; 3];
                }
                Kind::Controller(c) => {
                    for d in 0..3 {
                        xn[i][d] = (1.0 - alpha) * u0[c][d] + alpha * u1[c][d];
                        vn[i][d] = (u1[c][d] - u0[c][d]) / cfg.dt;
                    }
                }
                Kind::Free => {
                    let m = inp.masses[i];
                    let mut b = [0.0; 3];
                    for d in 0..3 {
                        b[d] = v[i][d] + h * (f[i][d] / m + cfg.gravity[d]);
                    }
                    let ce = cfg.ground.and_then(|g| eval_contact(&inp.contact, g, &x[i], &v[i]));
                    let nv = match ce {
                        Some(ce) => {
                            let dt_ = 1.0 + h * ce.ct / m;
                            let dn = 1.0 + h * ce.cn / m;
                            [b[0] / dt_, b[1] / dt_, b[2] / dn]
                        }
                        None => b,
                    };
                    let vx = match cfg.integrator {
                        Integrator::SymplecticEuler => nv,
                        Integrator::ExplicitEuler => v[i],
                    };
                    for d in 0..3 {
                        xn[i][d] = x[i][d] + h * vx[d];
                    }
                    vn[i] = nv;
                    ok &= xn[i].iter().chain(&nv).all(|c| c.is_finite() && c.abs() < 1e8);
                }
            }
        }
        ok
    }

    /// Advances a whole frame `t` starting from `(x, v)` in place.
    fn frame(&self, inp: &PhysInputs, t: usize, x: &mut Vec<Vec3>, v: &mut Vec<Vec3>, scratch: &mut Scratch) -> Result<()> {
        for k in 0..self.config.substeps {
            if !self.substep(inp, t, k, x, v, &mut scratch.x, &mut scratch.v, &mut scratch.f) {
                return Err(Error::DivergedSimulation { frame: t, substep: k });
            }
            std::mem::swap(x, &mut scratch.x);
            std::mem::swap(v, &mut scratch.v);
        }
        Ok(())
    }

    pub fn step_frame(&self, inp: &PhysInputs, state: &DynamicState) -> Result<DynamicState> {
        self.check_inputs(inp, 0)?;
        let t = state.frame;
        if self.script.trajectory.len() < t + 2 {
            return Err(Error::InvalidConfig(format!("controller script has no frame {}", t + 1)));
        }
        let n = self.node_count();
        let (mut x, mut v) = (state.positions.clone(), state.velocities.clone());
        let mut scratch = Scratch::new(n);
        self.frame(inp, t, &mut x, &mut v, &mut scratch)?;
        Ok(DynamicState { positions: x, velocities: v, frame: t + 1 })
    }

    /// Full rollout; frame 0 is `inp.x0`/`inp.v0`.
    pub fn simulate(&self, inp: &PhysInputs, frames: usize, keep_velocities: bool) -> Result<Trajectory> {
        self.check_inputs(inp, frames)?;
        let n = self.node_count();
        let (mut x, mut v) = (inp.x0.clone(), inp.v0.clone());
        let mut pos = Vec::with_capacity(frames + 1);
        let mut vel = Vec::with_capacity(frames + 1);
        pos.push(x.clone());
        vel.push(v.clone());
        let mut scratch = Scratch::new(n);
        for t in 0..frames {
            self.frame(inp, t, &mut x, &mut v, &mut scratch)?;
            pos.push(x.clone());
            if keep_velocities {
                vel.push(v.clone());
            }
        }
        Ok(Trajectory { dt: self.config.dt, positions: pos, velocities: keep_velocities.then_some(vel) })
    }

    /// Vector–Jacobian product of the position trajectory. `traj` must be the
    /// output of [`simulate`](Self::simulate) with velocities kept, and
    /// `grad_pos[t]` the loss gradient with respect to the positions of frame `t`.
    pub fn backward(&self, inp: &PhysInputs, traj: &Trajectory, grad_pos: &[Vec<Vec3>]) -> Result<PhysGrads> {
        let frames = traj.frames();
        self.check_inputs(inp, frames)?;
        let vel = traj
            .velocities
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("backward needs a trajectory with velocities".into()))?;
        if grad_pos.len() != frames + 1 {
            return Err(Error::InvalidConfig("gradient frame count differs from trajectory".into()));
        }
        let n = self.node_count();
        let s = self.config.substeps;
        let mut acc = PhysGrads {
            stiffness: vec![0.0; self.edges.len()],
            rest: vec![0.0; self.edges.len()],
            d_dp: 0.0,
            d_dr: 0.0,
            restitution: 0.0,
            friction: 0.0,
            contact_stiffness: 0.0,
            masses: vec![0.0; n],
            x0: vec![[0.0; 3]; n],
            v0: vec![[0.0; 3]; n],
        };
        let mut ax = grad_pos[frames].clone();
        let mut av = vec![[0.0; 3]; n];
        let mut xs = vec![vec![[0.0; 3]; n]; s];
        let mut vs = vec![vec![[0.0; 3]; n]; s];
        let mut fs = vec![vec![[0.0; 3]; n]; s];
        let mut xn = vec![[0.0; 3]; n];
        let mut vn = vec![[0.0; 3]; n];
        let mut bx = vec![[0.0; 3]; n];
        let mut bv = vec![[0.0; 3]; n];
        let mut fbar = vec![[0.0; 3]; n];
        for t in (0..frames).rev() {
            xs[0].clone_from(&traj.positions[t]);
            vs[0].clone_from(&vel[t]);
            for k in 0..s {
                let (head, tail) = (k, k + 1);
                {
                    let (x, v) = (&xs[head], &vs[head]);
                    if !self.substep(inp, t, k, x, v, &mut xn, &mut vn, &mut fs[k]) {
                        return Err(Error::DivergedSimulation { frame: t, substep: k });
                    }
                }
                if tail < s {
                    xs[tail].copy_from_slice(&xn);
                    vs[tail].copy_from_slice(&vn);
                }
            }
            for k in (0..s).rev() {
                self.substep_backward(inp, &xs[k], &vs[k], &fs[k], &ax, &av, &mut bx, &mut bv, &mut fbar, &mut acc);
                std::mem::swap(&mut ax, &mut bx);
                std::mem::swap(&mut av, &mut bv);
            }
            for i in 0..n {
                for c in 0..3 {
                    ax[i][c] += grad_pos[t][i][c];
                }
            }
        }
        acc.x0 = ax;
        acc.v0 = av;
        Ok(acc)
    }

    #[allow(clippy::too_many_arguments)]
    fn substep_backward(
        &self,
        inp: &PhysInputs,
        x: &[Vec3],
        v: &[Vec3],
        f: &[Vec3],
        ax_out: &[Vec3],
        av_out: &[Vec3],
        ax: &mut [Vec3],
        av: &mut [Vec3],
        fbar: &mut [Vec3],
        acc: &mut PhysGrads,
    ) {
        let cfg = &self.config;
        let h = cfg.dt / cfg.substeps as f64;
        let (e, mu, kc) = (inp.contact.restitution, inp.contact.friction, inp.contact.contact_stiffness);
        for i in 0..x.len() {
            ax[i] = [0.0; 3];
            av[i] = [0.0; 3];
            fbar[i] = [0.0; 3];
        }
        for i in 0..x.len() {
            match self.kinds[i] {
                Kind::Controller(_) => {}
                Kind::Boundary => ax[i] = ax_out[i],
                Kind::Free => {
                    let m = inp.masses[i];
                    ax[i] = ax_out[i];
                    let mut vb = av_out[i];
                    match cfg.integrator {
                        Integrator::SymplecticEuler => {
                            for d in 0..3 {
                                vb[d] += h * ax_out[i][d];
                            }
                        }
                        Integrator::ExplicitEuler => {
                            for d in 0..3 {
                                av[i][d] += h * ax_out[i][d];
                            }
                        }
                    }
                    let mut b = [0.0; 3];
                    for d in 0..3 {
                        b[d] = v[i][d] + h * (f[i][d] / m + cfg.gravity[d]);
                    }
                    let ce = cfg.ground.and_then(|g| eval_contact(&inp.contact, g, &x[i], &v[i]));
                    let bb = match ce {
                        None => vb,
                        Some(ce) => {
                            let den_t = 1.0 + h * ce.ct / m;
                            let den_n = 1.0 + h * ce.cn / m;
                            let bb = [vb[0] / den_t, vb[1] / den_t, vb[2] / den_n];
                            let dden_t = -(vb[0] * b[0] + vb[1] * b[1]) / (den_t * den_t);
                            let dden_n = -(vb[2] * b[2]) / (den_n * den_n);
                            let ct_bar = dden_t * h / m;
                            let cn_bar = dden_n * h / m;
                            acc.masses[i] -= (dden_t * h * ce.ct + dden_n * h * ce.cn) / (m * m);
                            let mut fn_bar = 0.0;
                            if ce.ct_capped {
                                acc.contact_stiffness += ct_bar;
                            } else {
                                let den = ce.vt + FRICTION_EPS;
                                acc.friction += ct_bar * ce.fn_ / den;
                                fn_bar += ct_bar * mu / den;
                                let vt_bar = -ct_bar * mu * ce.fn_ / (den * den);
                                if ce.vt > 0.0 {
                                    av[i][0] += vt_bar * v[i][0] / ce.vt;
                                    av[i][1] += vt_bar * v[i][1] / ce.vt;
                                }
                            }
                            if v[i][2] < 0.0 {
                                acc.contact_stiffness += cn_bar * e;
                                acc.restitution += cn_bar * kc;
                            }
                            let vzm = v[i][2].min(0.0);
                            acc.contact_stiffness += fn_bar * ((1.0 + e) * ce.p - e * vzm);
                            acc.restitution += fn_bar * (kc * ce.p - kc * vzm);
                            ax[i][2] -= fn_bar * kc * (1.0 + e);
                            if v[i][2] < 0.0 {
                                av[i][2] -= fn_bar * kc * e;
                            }
                            bb
                        }
                    };
                    for d in 0..3 {
                        av[i][d] += bb[d];
                        fbar[i][d] = h * bb[d] / m;
                    }
                    acc.masses[i] -= h * dot(&bb, &f[i]) / (m * m);
                    if let Some(g) = cfg.ground {
                        let p = g - x[i][2];
                        if p > 0.0 {
                            let fz = fbar[i][2];
                            acc.contact_stiffness += fz * (1.0 + e) * p;
                            acc.restitution += fz * kc * p;
                            ax[i][2] -= fz * kc * (1.0 + e);
                        }
                    }
                }
            }
        }
        // drag and dashpots
        let (dp, dr) = (inp.d_dp, inp.d_dr);
        for i in 0..x.len() {
            for d in 0..3 {
                av[i][d] -= dr * fbar[i][d];
            }
            acc.d_dr -= dot(&v[i], &fbar[i]);
        }
        for &(i, j) in &self.edges {
            let g = sub(&fbar[i], &fbar[j]);
            for d in 0..3 {
                av[i][d] -= dp * g[d];
                av[j][d] += dp * g[d];
            }
            acc.d_dp -= dot(&sub(&v[i], &v[j]), &g);
        }
        // springs
        for (k, &(i, j)) in self.edges.iter().enumerate() {
            let g = sub(&fbar[i], &fbar[j]);
            let s = inp.stiffness[k];
            let dvec = sub(&x[j], &x[i]);
            let dbar = match cfg.mode {
                ForceMode::Linear => {
                    acc.stiffness[k] += dot(&dvec, &g);
                    [s * g[0], s * g[1], s * g[2]]
                }
                ForceMode::RestLength => {
                    let l = dot(&dvec, &dvec).sqrt();
                    let r = inp.rest[k];
                    if l < DEGENERATE_LENGTH {
                        acc.stiffness[k] += (l - r) * g[0];
                        acc.rest[k] -= s * g[0];
                        [0.0; 3]
                    } else {
                        let nrm = [dvec[0] / l, dvec[1] / l, dvec[2] / l];
                        let gn = dot(&nrm, &g);
                        acc.stiffness[k] += (l - r) * gn;
                        acc.rest[k] -= s * gn;
                        let a = s * (1.0 - r / l);
                        let c = s * (r / l) * gn;
                        [a * g[0] + c * nrm[0], a * g[1] + c * nrm[1], a * g[2] + c * nrm[2]]
                    }
                }
            };
            for d in 0..3 {
                ax[j][d] += dbar[d];
                ax[i][d] -= dbar[d];
            }
        }
    }
}

struct Scratch {
    x: Vec<Vec3>,
    v: Vec<Vec3>,
    f: Vec<Vec3>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Scratch { x: vec![[0.0; 3]; n], v: vec![[0.0; 3]; n], f: vec![[0.0; 3]; n] }
    }
}
