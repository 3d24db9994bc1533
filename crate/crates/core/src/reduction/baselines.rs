use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::gnn::AssignmentMatrix;
use crate::graph::{dist, NodeType, SpringGraph, SystemMatrices};

/// Number of coarse nodes for `ratio` of `n`.
pub fn target_count(n: usize, ratio: f64) -> Result<usize> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidConfig(format!("ratio {ratio} must lie in (0, 1]")));
    }
    let k = (ratio * n as f64 - 1e-9).ceil().max(1.0) as usize;
    Ok(k.min(n))
}

/// Assigns every node to its nearest seed by initial distance (ties to the
/// lower column); seeds self-assign.
pub fn nearest_seed_assignment(graph: &SpringGraph, seeds: &[usize]) -> Result<AssignmentMatrix> {
    let mut cluster_of: Vec<usize> = (0..graph.node_count())
        .map(|i| {
            let mut best = 0;
            let mut bd = f64::INFINITY;
            for (c, &s) in seeds.iter().enumerate() {
                let d = dist(&graph.positions0[i], &graph.positions0[s]);
                if d < bd {
                    bd = d;
                    best = c;
                }
            }
            best
        })
        .collect();
    for (c, &s) in seeds.iter().enumerate() {
        cluster_of[s] = c;
    }
    AssignmentMatrix::from_clusters(cluster_of, seeds.len(), seeds.to_vec())
}

/// Uniformly random seeds (sorted by node id) with nearest-seed assignment.
pub fn random_reduce(graph: &SpringGraph, ratio: f64, rng: &mut impl Rng) -> Result<AssignmentMatrix> {
    random_reduce_count(graph, target_count(graph.node_count(), ratio)?, rng)
}

pub fn random_reduce_count(graph: &SpringGraph, count: usize, rng: &mut impl Rng) -> Result<AssignmentMatrix> {
    let n = graph.node_count();
    if count == 0 || count > n {
        return Err(Error::InvalidConfig(format!("cannot pick {count} seeds among {n} nodes")));
    }
    let mut seeds = rand::seq::index::sample(rng, n, count).into_vec();
    seeds.sort_unstable();
    nearest_seed_assignment(graph, &seeds)
}

/// Outcome of the Gramian computation.
#[derive(Clone, Debug)]
pub struct GramianReport {
    /// Uniform regularisation was needed to make the system stable.
    pub regularized: bool,
    pub residual: f64,
    pub iterations: usize,
}

pub const GRAMIAN_MAX_NODES: usize = 500;
const REG_DELTA: f64 = 1e-3;

/// Solves `A W + W Aᵀ + Q = 0` for Hurwitz `A` with the squared Smith
/// iteration on the Cayley transform with shift `p`.
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>, shift: f64) -> Result<(DMatrix<f64>, usize)> {
    let n = a.nrows();
    if a.ncols() != n || q.nrows() != n || q.ncols() != n {
        return Err(Error::InvalidConfig("Lyapunov operands must be square and conformal".into()));
    }
    let p = shift;
    let id = DMatrix::<f64>::identity(n, n);
    let lu = (a - &id * p).lu();
    let inv = lu.try_inverse().ok_or_else(|| Error::SolverFailure("singular shifted matrix".into()))?;
    let mut ak = &inv * (a + &id * p);
    let mut w = (&inv * q * inv.transpose()) * (2.0 * p);
    let mut iters = 0;
    for _ in 0..200 {
        iters += 1;
        let delta = &ak * &w * ak.transpose();
        let dn = delta.norm();
        w += delta;
        ak = &ak * &ak;
        if dn <= 1e-15 * w.norm() || !dn.is_finite() {
            break;
        }
    }
    let res = a * &w + &w * a.transpose() + q;
    let rel = res.norm() / q.norm().max(f64::MIN_POSITIVE);
    if !(rel <= 1e-6) {
        return Err(Error::SolverFailure(format!("Lyapunov residual {rel:e} exceeds 1e-6")));
    }
    Ok((w, iters))
}

/// Positive definite relative to its own scale: a free chain's Laplacian
/// has a rounding-level smallest eigenvalue and must count as singular.
fn is_pd(m: &DMatrix<f64>) -> bool {
    if m.nrows() == 0 {
        return true;
    }
    let eig = m.clone().symmetric_eigen().eigenvalues;
    let lo = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eig.iter().map(|x| x.abs()).fold(0.0, f64::max);
    lo > 1e-9 * hi.max(f64::MIN_POSITIVE)
}

/// Controllability Gramian of the per-coordinate first-order realisation
/// with boundary nodes pinned and a single force input shared by all
/// controllers. Returns the position block (over non-boundary nodes, in the
/// order given by the returned index list).
pub fn position_gramian(
    sys: &SystemMatrices,
    types: &[NodeType],
) -> Result<(DMatrix<f64>, Vec<usize>, GramianReport)> {
    let free: Vec<usize> = (0..types.len()).filter(|&i| types[i] != NodeType::Boundary).collect();
    let nf = free.len();
    if nf == 0 {
        return Err(Error::InvalidConfig("no free nodes for the Gramian".into()));
    }
    let ld = sys.laplacian.to_dense();
    let dd = sys.damping.to_dense();
    let mut l = DMatrix::from_fn(nf, nf, |a, b| ld[(free[a], free[b])]);
    let mut d = DMatrix::from_fn(nf, nf, |a, b| dd[(free[a], free[b])]);
    let mut regularized = false;
    if !is_pd(&l) {
        for a in 0..nf {
            l[(a, a)] += REG_DELTA;
        }
        regularized = true;
    }
    if !is_pd(&d) {
        for a in 0..nf {
            d[(a, a)] += REG_DELTA;
        }
        regularized = true;
    }
    let minv: Vec<f64> = free.iter().map(|&i| 1.0 / sys.mass[i]).collect();
    let mut a = DMatrix::zeros(2 * nf, 2 * nf);
    for r in 0..nf {
        a[(r, nf + r)] = 1.0;
        for c in 0..nf {
            a[(nf + r, c)] = -minv[r] * l[(r, c)];
            a[(nf + r, nf + c)] = -minv[r] * d[(r, c)];
        }
    }
    let mut ctrl: Vec<usize> = (0..nf).filter(|&a| types[free[a]] == NodeType::Controller).collect();
    if ctrl.is_empty() {
        log::warn!("no controller nodes; the Gramian uses a uniform input on all free nodes");
        ctrl = (0..nf).collect();
    }
    let mut b = DVector::zeros(2 * nf);
    for &r in &ctrl {
        b[nf + r] = minv[r];
    }
    let q = &b * b.transpose();
    let shift = (0..nf).map(|r| minv[r] * l[(r, r)]).fold(0.0, f64::max).sqrt().max(1e-3);
    let (w, iterations) = solve_lyapunov(&a, &q, shift)?;
    let res = (&a * &w + &w * a.transpose() + &q).norm() / q.norm();
    Ok((w.view((0, 0), (nf, nf)).into_owned(), free, GramianReport { regularized, residual: res, iterations }))
}

/// Greedy agglomeration of nodes by controllability signature. Each node's
/// signature is its Gramian row sorted in descending order, which makes
/// mirror-image nodes indistinguishable. Clusters are represented by their
/// lowest member; columns are ordered by representative.
pub fn gramian_reduce(sys: &SystemMatrices, types: &[NodeType], ratio: f64) -> Result<(AssignmentMatrix, GramianReport)> {
    let n = types.len();
    if n > GRAMIAN_MAX_NODES {
        return Err(Error::InvalidConfig(format!(
            "Gramian reduction is limited to {GRAMIAN_MAX_NODES} nodes, got {n}"
        )));
    }
    let target = target_count(n, ratio)?;
    let (w, free, report) = position_gramian(sys, types)?;
    let dim = free.len();
    let mut sig = vec![vec![0.0; dim]; n];
    for (a, &i) in free.iter().enumerate() {
        let mut row: Vec<f64> = w.row(a).iter().copied().collect();
        row.sort_by(|x, y| y.total_cmp(x));
        sig[i] = row;
    }
    agglomerate(&sig, target).map(|p| (p, report))
}

/// Greedy pairwise merging of mean signatures down to `target` clusters.
pub fn agglomerate(sig: &[Vec<f64>], target: usize) -> Result<AssignmentMatrix> {
    let n = sig.len();
    if target == 0 || target > n {
        return Err(Error::InvalidConfig(format!("cannot form {target} clusters from {n} nodes")));
    }
    let d2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut centre: Vec<Vec<f64>> = sig.to_vec();
    let mut alive = vec![true; n];
    let mut dm = vec![vec![f64::INFINITY; n]; n];
    for a in 0..n {
        for b in a + 1..n {
            dm[a][b] = d2(&centre[a], &centre[b]);
        }
    }
    let mut count = n;
    while count > target {
        let (mut ba, mut bb, mut bd) = (usize::MAX, usize::MAX, f64::INFINITY);
        for a in 0..n {
            if !alive[a] {
                continue;
            }
            for b in a + 1..n {
                if alive[b] && dm[a][b] < bd {
                    bd = dm[a][b];
                    ba = a;
                    bb = b;
                }
            }
        }
        if ba == usize::MAX {
            return Err(Error::NumericalError("no finite signature distance left to merge".into()));
        }
        let moved = std::mem::take(&mut members[bb]);
        let (na, nb) = (members[ba].len() as f64, moved.len() as f64);
        let merged: Vec<f64> =
            centre[ba].iter().zip(&centre[bb]).map(|(x, y)| (na * x + nb * y) / (na + nb)).collect();
        centre[ba] = merged;
        members[ba].extend(moved);
        members[ba].sort_unstable();
        alive[bb] = false;
        count -= 1;
        for o in 0..n {
            if alive[o] && o != ba {
                let v = d2(&centre[ba], &centre[o]);
                if o < ba {
                    dm[o][ba] = v;
                } else {
                    dm[ba][o] = v;
                }
            }
        }
    }
    let reps: Vec<usize> = (0..n).filter(|&a| alive[a]).collect();
    let mut cluster_of = vec![0; n];
    for (c, &r) in reps.iter().enumerate() {
        for &i in &members[r] {
            cluster_of[i] = c;
        }
    }
    AssignmentMatrix::from_clusters(cluster_of, reps.len(), reps)
}

/// Full merge order produced by [`agglomerate`]-style greedy merging; used
/// to inspect which pair is merged first.
pub fn first_merge(sig: &[Vec<f64>]) -> Option<(usize, usize)> {
    let mut best = None;
    let mut bd = f64::INFINITY;
    for a in 0..sig.len() {
        for b in a + 1..sig.len() {
            let d: f64 = sig[a].iter().zip(&sig[b]).map(|(x, y)| (x - y) * (x - y)).sum();
            if d < bd {
                bd = d;
                best = Some((a, b));
            }
        }
    }
    best
}
