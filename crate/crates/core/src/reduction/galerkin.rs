use std::collections::HashMap;

use crate::dynamics::{ControllerScript, DynamicState, DEGENERATE_LENGTH};
use crate::error::{Error, Result};
use crate::gnn::{AssignmentMatrix, S_MIN};
use crate::graph::{dist, NodeType, SparseSym, SpringGraph, SystemMatrices, Vec3};

/// `PᵀAP` for a symmetric sparse `A` and hard `P`. Off-diagonal entries
/// appear in order of first occurrence over the fine entries.
pub fn project_sparse(a: &SparseSym, p: &AssignmentMatrix) -> Result<SparseSym> {
    p.validate()?;
    if a.dim() != p.n_fine() {
        return Err(Error::InvalidConfig(format!("matrix of size {} vs {} fine nodes", a.dim(), p.n_fine())));
    }
    let c = &p.cluster_of;
    let mut diag = vec![0.0; p.n_coarse];
    for (i, &d) in a.diag.iter().enumerate() {
        diag[c[i]] += d;
    }
    let mut slot: HashMap<(usize, usize), usize> = HashMap::new();
    let mut off: Vec<((usize, usize), f64)> = Vec::new();
    for &((i, j), v) in &a.off {
        let (ca, cb) = (c[i], c[j]);
        if ca == cb {
            diag[ca] += 2.0 * v;
        } else {
            let key = (ca.min(cb), ca.max(cb));
            match slot.get(&key) {
                Some(&k) => off[k].1 += v,
                None => {
                    slot.insert(key, off.len());
                    off.push((key, v));
                }
            }
        }
    }
    Ok(SparseSym { diag, off })
}

/// Cluster mass sums, accumulated in fine-node order.
pub fn project_masses(masses: &[f64], p: &AssignmentMatrix) -> Vec<f64> {
    let mut m = vec![0.0; p.n_coarse];
    for (i, &c) in p.cluster_of.iter().enumerate() {
        m[c] += masses[i];
    }
    m
}

pub fn galerkin_project(sys: &SystemMatrices, p: &AssignmentMatrix) -> Result<SystemMatrices> {
    if sys.mass.len() != p.n_fine() {
        return Err(Error::InvalidConfig("mass count differs from assignment rows".into()));
    }
    Ok(SystemMatrices {
        mass: project_masses(&sys.mass, p),
        laplacian: project_sparse(&sys.laplacian, p)?,
        damping: project_sparse(&sys.damping, p)?,
    })
}

/// Mass-weighted cluster means of per-node vectors; singleton clusters copy
/// their member exactly.
pub fn weighted_means(values: &[Vec3], masses: &[f64], members: &[Vec<usize>]) -> Vec<Vec3> {
    members
        .iter()
        .map(|mem| {
            if mem.len() == 1 {
                return values[mem[0]];
            }
            let mut acc = [0.0; 3];
            let mut w = 0.0;
            for &i in mem {
                for d in 0..3 {
                    acc[d] += masses[i] * values[i][d];
                }
                w += masses[i];
            }
            [acc[0] / w, acc[1] / w, acc[2] / w]
        })
        .collect()
}

pub fn project_state(state: &DynamicState, p: &AssignmentMatrix, masses: &[f64]) -> Result<DynamicState> {
    p.validate()?;
    let members = p.members();
    Ok(DynamicState {
        positions: weighted_means(&state.positions, masses, &members),
        velocities: weighted_means(&state.velocities, masses, &members),
        frame: state.frame,
    })
}

/// Topology of the coarse level: coarse edges in first-appearance order
/// and, for every fine edge, the coarse edge it crosses (if any).
#[derive(Clone, Debug, PartialEq)]
pub struct CoarseTopology {
    pub edges: Vec<(usize, usize)>,
    pub crossing: Vec<Option<usize>>,
    pub multiplicity: Vec<usize>,
}

pub fn coarse_topology(fine_edges: &[(usize, usize)], p: &AssignmentMatrix) -> CoarseTopology {
    let c = &p.cluster_of;
    let mut slot: HashMap<(usize, usize), usize> = HashMap::new();
    let mut edges = Vec::new();
    let mut multiplicity = Vec::new();
    let crossing = fine_edges
        .iter()
        .map(|&(i, j)| {
            let (a, b) = (c[i], c[j]);
            if a == b {
                return None;
            }
            let key = (a.min(b), a.max(b));
            let k = *slot.entry(key).or_insert_with(|| {
                edges.push(key);
                multiplicity.push(0);
                edges.len() - 1
            });
            multiplicity[k] += 1;
            Some(k)
        })
        .collect();
    CoarseTopology { edges, crossing, multiplicity }
}

/// Coarse graph for a given coarse edge list: member centroids, summed
/// masses, precedence types and centroid rest lengths. An edge joining two
/// singleton clusters through a single fine edge keeps the fine rest length,
/// so the identity projection is exact.
pub fn build_coarse_graph(fine: &SpringGraph, p: &AssignmentMatrix, edges: Vec<(usize, usize)>) -> Result<SpringGraph> {
    p.validate()?;
    if p.n_fine() != fine.node_count() {
        return Err(Error::InvalidConfig("assignment rows differ from fine node count".into()));
    }
    let members = p.members();
    let masses = project_masses(&fine.masses, p);
    let positions = weighted_means(&fine.positions0, &fine.masses, &members);
    let types = members.iter().map(|m| NodeType::dominant(m.iter().map(|&i| fine.node_types[i]))).collect();
    let mut fine_rest: HashMap<(usize, usize), f64> = HashMap::new();
    for (k, &e) in fine.edges.iter().enumerate() {
        fine_rest.insert(e, fine.rest_lengths[k]);
    }
    let rest = edges
        .iter()
        .map(|&(a, b)| {
            if members[a].len() == 1 && members[b].len() == 1 {
                let (i, j) = (members[a][0], members[b][0]);
                if let Some(&r) = fine_rest.get(&(i.min(j), i.max(j))) {
                    return r;
                }
            }
            let d = dist(&positions[a], &positions[b]);
            if d < DEGENERATE_LENGTH {
                log::warn!("coarse edge ({a},{b}) joins coincident centroids");
                DEGENERATE_LENGTH
            } else {
                d
            }
        })
        .collect();
    SpringGraph::new(positions, masses, types, edges, rest)
}

/// Coarse graph and base stiffness read off the projected Laplacian.
pub fn extract_coarse_graph(
    l_hat: &SparseSym,
    m_hat: &[f64],
    p: &AssignmentMatrix,
    fine: &SpringGraph,
) -> Result<(SpringGraph, Vec<f64>)> {
    let mut edges = Vec::new();
    let mut stiffness = Vec::new();
    for &((a, b), v) in &l_hat.off {
        if v.abs() > 1e-12 {
            edges.push((a, b));
            let s = -v;
            if s <= 0.0 {
                log::warn!("coarse edge ({a},{b}) has stiffness {s}; clamped to {S_MIN}");
                stiffness.push(S_MIN);
            } else {
                stiffness.push(s);
            }
        }
    }
    let g = build_coarse_graph(fine, p, edges)?;
    if g.masses.iter().zip(m_hat).any(|(a, b)| a != b) {
        return Err(Error::InvalidConfig("projected masses disagree with the assignment".into()));
    }
    Ok((g, stiffness))
}

/// Coarse scalar damping: drag is the mean row sum of `PᵀDP` (cluster size
/// times fine drag), dashpot the mean coupling over coarse edges.
pub fn coarse_damping_factors(p: &AssignmentMatrix, topo: &CoarseTopology) -> (f64, f64) {
    let dr = p.n_fine() as f64 / p.n_coarse as f64;
    let dp = if topo.edges.is_empty() {
        1.0
    } else {
        topo.multiplicity.iter().sum::<usize>() as f64 / topo.edges.len() as f64
    };
    (dp, dr)
}

/// Coarse controllers follow the mass-weighted mean of their controller
/// members; other members do not contribute.
pub fn project_controller_script(
    script: &ControllerScript,
    p: &AssignmentMatrix,
    fine: &SpringGraph,
) -> Result<ControllerScript> {
    p.validate()?;
    let slot: HashMap<usize, usize> = script.indices.iter().enumerate().map(|(k, &i)| (i, k)).collect();
    let members = p.members();
    let mut indices = Vec::new();
    let mut parts: Vec<Vec<usize>> = Vec::new();
    for (a, mem) in members.iter().enumerate() {
        let ctrl: Vec<usize> = mem.iter().copied().filter(|i| fine.node_types[*i] == NodeType::Controller).collect();
        if !ctrl.is_empty() {
            if let Some(i) = ctrl.iter().find(|i| !slot.contains_key(i)) {
                return Err(Error::InvalidConfig(format!("controller {i} missing from the script")));
            }
            indices.push(a);
            parts.push(ctrl);
        }
    }
    let trajectory = script
        .trajectory
        .iter()
        .map(|row| {
            parts
                .iter()
                .map(|ctrl| {
                    if ctrl.len() == 1 {
                        return row[slot[&ctrl[0]]];
                    }
                    let mut acc = [0.0; 3];
                    let mut w = 0.0;
                    for &i in ctrl {
                        let m = fine.masses[i];
                        for d in 0..3 {
                            acc[d] += m * row[slot[&i]][d];
                        }
                        w += m;
                    }
                    [acc[0] / w, acc[1] / w, acc[2] / w]
                })
                .collect()
        })
        .collect();
    Ok(ControllerScript { indices, trajectory })
}
