//! Spring graphs, sparse system matrices and hierarchy bookkeeping.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dynamics::MechParams;
use crate::error::{Error, Result};
use crate::gnn::AssignmentMatrix;

pub type Vec3 = [f64; 3];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeType {
    Object,
    Boundary,
    Controller,
}

impl NodeType {
    pub fn one_hot(self) -> [f64; 3] {
        match self {
            NodeType::Object => [1.0, 0.0, 0.0],
            NodeType::Boundary => [0.0, 1.0, 0.0],
            NodeType::Controller => [0.0, 0.0, 1.0],
        }
    }

    /// Type of a coarse node given its members: controller beats boundary
    /// beats object.
    pub fn dominant(types: impl IntoIterator<Item = NodeType>) -> NodeType {
        types.into_iter().max_by_key(|t| match t {
            NodeType::Object => 0,
            NodeType::Boundary => 1,
            NodeType::Controller => 2,
        })
        .unwrap_or(NodeType::Object)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpringGraph {
    pub positions0: Vec<Vec3>,
    pub masses: Vec<f64>,
    pub node_types: Vec<NodeType>,
    pub edges: Vec<(usize, usize)>,
    pub rest_lengths: Vec<f64>,
}

impl SpringGraph {
    /// Checked constructor. Edges are normalised to `(min, max)` order-preserving
    /// their position in the list.
    pub fn new(
        positions0: Vec<Vec3>,
        masses: Vec<f64>,
        node_types: Vec<NodeType>,
        edges: Vec<(usize, usize)>,
        rest_lengths: Vec<f64>,
    ) -> Result<Self> {
        let n = positions0.len();
        if n == 0 {
            return Err(Error::InvalidScene("graph has no nodes".into()));
        }
        if masses.len() != n || node_types.len() != n {
            return Err(Error::InvalidScene(format!(
                "{} positions but {} masses and {} node types",
                n,
                masses.len(),
                node_types.len()
            )));
        }
        if rest_lengths.len() != edges.len() {
            return Err(Error::InvalidScene(format!(
                "{} edges but {} rest lengths",
                edges.len(),
                rest_lengths.len()
            )));
        }
        if let Some(i) = positions0.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::InvalidScene(format!("node {i} has a non-finite position")));
        }
        if let Some(i) = masses.iter().position(|&m| !(m > 0.0) || !m.is_finite()) {
            return Err(Error::InvalidScene(format!("node {i} has non-positive mass")));
        }
        let mut seen = std::collections::HashSet::with_capacity(edges.len());
        let mut norm = Vec::with_capacity(edges.len());
        for (e, &(i, j)) in edges.iter().enumerate() {
            if i >= n || j >= n {
                return Err(Error::InvalidScene(format!("edge {e} ({i},{j}) out of range")));
            }
            if i == j {
                return Err(Error::InvalidScene(format!("edge {e} is a self-loop on node {i}")));
            }
            let key = (i.min(j), i.max(j));
            if !seen.insert(key) {
                return Err(Error::InvalidScene(format!("edge ({i},{j}) appears twice")));
            }
            if !(rest_lengths[e] > 0.0) || !rest_lengths[e].is_finite() {
                return Err(Error::InvalidScene(format!("edge {e} has non-positive rest length")));
            }
            norm.push(key);
        }
        let g = SpringGraph { positions0, masses, node_types, edges: norm, rest_lengths };
        if !g.is_active_connected() {
            log::warn!("spring graph is not connected over object and controller nodes");
        }
        Ok(g)
    }

    /// Graph with uniform masses `total_mass / N` and rest lengths taken from
    /// the initial positions.
    pub fn with_uniform_mass(
        positions0: Vec<Vec3>,
        node_types: Vec<NodeType>,
        edges: Vec<(usize, usize)>,
        total_mass: f64,
    ) -> Result<Self> {
        if !(total_mass > 0.0) {
            return Err(Error::InvalidScene("total mass must be positive".into()));
        }
        let n = positions0.len();
        let rest = edges
            .iter()
            .map(|&(i, j)| {
                if i < n && j < n {
                    dist(&positions0[i], &positions0[j])
                } else {
                    1.0
                }
            })
            .collect();
        SpringGraph::new(positions0, vec![total_mass / n.max(1) as f64; n], node_types, edges, rest)
    }

    pub fn node_count(&self) -> usize {
        self.positions0.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.node_count()];
        for &(i, j) in &self.edges {
            deg[i] += 1;
            deg[j] += 1;
        }
        deg
    }

    pub fn indices_of(&self, ty: NodeType) -> Vec<usize> {
        (0..self.node_count()).filter(|&i| self.node_types[i] == ty).collect()
    }

    /// Connectivity over the subgraph induced by object and controller nodes.
    pub fn is_active_connected(&self) -> bool {
        let n = self.node_count();
        let active: Vec<bool> = self.node_types.iter().map(|&t| t != NodeType::Boundary).collect();
        let Some(start) = active.iter().position(|&a| a) else { return true };
        let mut adj = vec![Vec::new(); n];
        for &(i, j) in &self.edges {
            if active[i] && active[j] {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
        let mut seen = vec![false; n];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        (0..n).all(|i| !active[i] || seen[i])
    }
}

pub fn dist(a: &Vec3, b: &Vec3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Symmetrised k-nearest-neighbour edge list, sorted.
pub fn knn_edges(points: &[Vec3], k: usize, radius: Option<f64>) -> Result<Vec<(usize, usize)>> {
    let n = points.len();
    if n < 2 {
        return Err(Error::InvalidScene(format!("k-NN needs at least 2 points, got {n}")));
    }
    if k == 0 || k >= n {
        return Err(Error::InvalidConfig(format!("k = {k} must satisfy 1 <= k < N = {n}")));
    }
    let mut set = std::collections::BTreeSet::new();
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        cand.clear();
        for j in 0..n {
            if j != i {
                let d = dist(&points[i], &points[j]);
                if d < 1e-9 {
                    return Err(Error::InvalidScene(format!("points {i} and {j} coincide")));
                }
                cand.push((d, j));
            }
        }
        cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(d, j) in &cand[..k] {
            if radius.map_or(true, |r| d <= r) {
                set.insert((i.min(j), i.max(j)));
            }
        }
    }
    let mut deg = vec![0usize; n];
    for &(i, j) in &set {
        deg[i] += 1;
        deg[j] += 1;
    }
    if let Some(i) = deg.iter().position(|&d| d == 0) {
        return Err(Error::IsolatedNode(i));
    }
    Ok(set.into_iter().collect())
}

/// k-NN spring graph of object nodes with 1 kg total mass.
pub fn build_knn_graph(points: &[Vec3], k: usize, radius: Option<f64>) -> Result<SpringGraph> {
    let edges = knn_edges(points, k, radius)?;
    SpringGraph::with_uniform_mass(points.to_vec(), vec![NodeType::Object; points.len()], edges, 1.0)
}

/// Symmetric sparse matrix stored as a diagonal plus an upper-triangular
/// off-diagonal list keyed by `(i, j)` with `i < j`.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseSym {
    pub diag: Vec<f64>,
    pub off: Vec<((usize, usize), f64)>,
}

impl SparseSym {
    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return self.diag[i];
        }
        let key = (i.min(j), i.max(j));
        self.off.iter().filter(|(k, _)| *k == key).map(|(_, v)| *v).sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = self.diag[i];
        }
        for &((i, j), v) in &self.off {
            m[(i, j)] += v;
            m[(j, i)] += v;
        }
        m
    }

    /// `A · X` for an `N×3` block.
    pub fn mul_block(&self, x: &[Vec3]) -> Vec<Vec3> {
        let mut out: Vec<Vec3> = (0..self.dim())
            .map(|i| [self.diag[i] * x[i][0], self.diag[i] * x[i][1], self.diag[i] * x[i][2]])
            .collect();
        for &((i, j), v) in &self.off {
            for c in 0..3 {
                out[i][c] += v * x[j][c];
                out[j][c] += v * x[i][c];
            }
        }
        out
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let mut s = self.diag.clone();
        for &((i, j), v) in &self.off {
            s[i] += v;
            s[j] += v;
        }
        s
    }

    pub fn max_abs(&self) -> f64 {
        self.diag.iter().chain(self.off.iter().map(|(_, v)| v)).fold(0.0, |m, v| m.max(v.abs()))
    }
}

pub fn assemble_laplacian(graph: &SpringGraph, stiffness: &[f64]) -> Result<SparseSym> {
    if stiffness.len() != graph.edge_count() {
        return Err(Error::InvalidConfig(format!(
            "{} stiffness values for {} edges",
            stiffness.len(),
            graph.edge_count()
        )));
    }
    if let Some(e) = stiffness.iter().position(|s| !s.is_finite()) {
        return Err(Error::NumericalError(format!("stiffness of edge {e} is not finite")));
    }
    if stiffness.iter().any(|&s| s < 0.0) {
        log::warn!("negative stiffness in Laplacian assembly");
    }
    let mut diag = vec![0.0; graph.node_count()];
    let mut off = Vec::with_capacity(graph.edge_count());
    for (&(i, j), &s) in graph.edges.iter().zip(stiffness) {
        diag[i] += s;
        diag[j] += s;
        off.push(((i, j), -s));
    }
    Ok(SparseSym { diag, off })
}

pub fn assemble_damping(graph: &SpringGraph, d_dp: f64, d_dr: f64) -> Result<SparseSym> {
    if !(d_dp >= 0.0) || !(d_dr >= 0.0) {
        return Err(Error::InvalidConfig(format!("damping must be non-negative (d_dp={d_dp}, d_dr={d_dr})")));
    }
    let diag = graph.degrees().into_iter().map(|k| d_dr + k as f64 * d_dp).collect();
    let off = graph.edges.iter().map(|&e| (e, -d_dp)).collect();
    Ok(SparseSym { diag, off })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SystemMatrices {
    pub mass: Vec<f64>,
    pub laplacian: SparseSym,
    pub damping: SparseSym,
}

impl SystemMatrices {
    pub fn assemble(graph: &SpringGraph, params: &MechParams) -> Result<Self> {
        Ok(SystemMatrices {
            mass: graph.masses.clone(),
            laplacian: assemble_laplacian(graph, &params.stiffness)?,
            damping: assemble_damping(graph, params.d_dp, params.d_dr)?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct HierarchyLevel {
    pub graph: SpringGraph,
    pub matrices: SystemMatrices,
    pub params: MechParams,
}

#[derive(Clone, Debug, Default)]
pub struct Hierarchy {
    pub levels: Vec<HierarchyLevel>,
    pub assignments: Vec<AssignmentMatrix>,
    pub committed: Vec<bool>,
}

impl Hierarchy {
    pub fn push_level(&mut self, graph: SpringGraph, params: MechParams) -> Result<()> {
        let matrices = SystemMatrices::assemble(&graph, &params)?;
        self.levels.push(HierarchyLevel { graph, matrices, params });
        self.committed.push(false);
        Ok(())
    }

    /// Maps every level-0 node to its node index at level `level`.
    pub fn compose_to(&self, level: usize) -> Vec<usize> {
        compose_assignments(&self.assignments, self.levels[0].graph.node_count(), level)
    }
}

pub fn compose_assignments(assignments: &[AssignmentMatrix], n0: usize, level: usize) -> Vec<usize> {
    let mut map: Vec<usize> = (0..n0).collect();
    for p in &assignments[..level] {
        for m in map.iter_mut() {
            *m = p.cluster_of[*m];
        }
    }
    map
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub issues: Vec<(usize, String)>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }

    fn push(&mut self, level: usize, msg: String) {
        self.issues.push((level, msg));
    }

    pub fn mentions(&self, needle: &str) -> bool {
        self.issues.iter().any(|(_, m)| m.contains(needle))
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (l, m) in &self.issues {
            writeln!(f, "level {l}: {m}")?;
        }
        Ok(())
    }
}

/// Checks every structural invariant of the hierarchy; never fails.
pub fn validate_hierarchy(h: &Hierarchy) -> ValidationReport {
    let mut r = ValidationReport::default();
    if h.committed.len() != h.levels.len() {
        r.push(0, format!("{} committed flags for {} levels", h.committed.len(), h.levels.len()));
    }
    if h.levels.len() != h.assignments.len() + 1 && !h.levels.is_empty() {
        r.push(0, format!("{} levels but {} assignments", h.levels.len(), h.assignments.len()));
    }
    for (l, lev) in h.levels.iter().enumerate() {
        let g = &lev.graph;
        let m = &lev.matrices;
        let n = g.node_count();
        if m.mass.len() != n || m.laplacian.dim() != n || m.damping.dim() != n {
            r.push(l, "system matrix dimension differs from node count".into());
            continue;
        }
        let scale = m.laplacian.max_abs().max(f64::MIN_POSITIVE);
        for (i, s) in m.laplacian.row_sums().into_iter().enumerate() {
            if s.abs() > 1e-9 * scale {
                r.push(l, format!("laplacian row {i} sums to {s:e}"));
            }
        }
        let deg = g.degrees();
        let pattern: BTreeMap<(usize, usize), f64> = m.damping.off.iter().cloned().collect();
        let edges: std::collections::BTreeSet<(usize, usize)> = g.edges.iter().cloned().collect();
        if pattern.keys().cloned().collect::<std::collections::BTreeSet<_>>() != edges {
            r.push(l, "damping pattern differs from edge set".into());
        }
        for (&e, &v) in &pattern {
            if (v + lev.params.d_dp).abs() > 1e-12 * (1.0 + lev.params.d_dp.abs()) {
                r.push(l, format!("damping entry {e:?} is {v}, expected {}", -lev.params.d_dp));
            }
        }
        for i in 0..n {
            let want = lev.params.d_dr + deg[i] as f64 * lev.params.d_dp;
            if (m.damping.diag[i] - want).abs() > 1e-12 * (1.0 + want.abs()) {
                r.push(l, format!("damping diagonal {i} is {}, expected {want}", m.damping.diag[i]));
            }
        }
        if l + 1 < h.levels.len() {
            let next = &h.levels[l + 1].graph;
            if next.node_count() >= n {
                r.push(l, format!("non-decreasing node count ({} -> {})", n, next.node_count()));
            }
            let Some(p) = h.assignments.get(l) else { continue };
            if p.cluster_of.len() != n || p.n_coarse != next.node_count() {
                r.push(l, format!("assignment shape {}x{} does not match levels", p.cluster_of.len(), p.n_coarse));
                continue;
            }
            let mut mass = vec![0.0; p.n_coarse];
            let mut count = vec![0usize; p.n_coarse];
            for (i, &c) in p.cluster_of.iter().enumerate() {
                if c >= p.n_coarse {
                    r.push(l, format!("row {i} assigned to missing cluster {c}"));
                    continue;
                }
                mass[c] += g.masses[i];
                count[c] += 1;
            }
            for c in 0..p.n_coarse {
                if count[c] == 0 {
                    r.push(l, format!("empty cluster at level {l} (column {c})"));
                } else if mass[c] != next.masses[c] {
                    r.push(l + 1, format!("coarse mass {c} is {}, projection gives {}", next.masses[c], mass[c]));
                }
            }
        }
    }
    r
}
