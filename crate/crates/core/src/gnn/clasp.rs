use ndarray::Array2;
use rand::Rng;

use super::assignment::AssignmentMatrix;
use crate::autodiff::{hard_rows, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::{dist, Vec3};

/// Farthest-point sampling. The first seed is the node farthest from the
/// centroid; all ties go to the lower index.
pub fn select_seeds(positions0: &[Vec3], count: usize) -> Result<Vec<usize>> {
    let n = positions0.len();
    if count == 0 || count >= n {
        return Err(Error::InvalidConfig(format!("seed count {count} must satisfy 1 <= count < N = {n}")));
    }
    let mut c = [0.0; 3];
    for p in positions0 {
        for d in 0..3 {
            c[d] += p[d];
        }
    }
    for v in &mut c {
        *v /= n as f64;
    }
    let argmax = |vals: &[f64]| {
        let mut best = 0;
        for (i, &v) in vals.iter().enumerate() {
            if v > vals[best] {
                best = i;
            }
        }
        best
    };
    let to_c: Vec<f64> = positions0.iter().map(|p| dist(p, &c)).collect();
    let first = argmax(&to_c);
    let mut seeds = vec![first];
    let mut near: Vec<f64> = positions0.iter().map(|p| dist(p, &positions0[first])).collect();
    while seeds.len() < count {
        let next = argmax(&near);
        seeds.push(next);
        for (i, p) in positions0.iter().enumerate() {
            near[i] = near[i].min(dist(p, &positions0[next]));
        }
    }
    Ok(seeds)
}

/// Standard Gumbel draws, `N×K`.
pub fn gumbel_noise(rows: usize, cols: usize, rng: &mut (impl Rng + ?Sized)) -> Tensor {
    Array2::from_shape_simple_fn((rows, cols), || {
        let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
        -(-u.ln()).ln()
    })
}

/// One-hot argmax with every seed row forced onto its own column.
pub fn hard_with_seeds(soft: &Tensor, seeds: &[usize]) -> Tensor {
    let mut hard = hard_rows(soft);
    for (j, &s) in seeds.iter().enumerate() {
        hard.row_mut(s).fill(0.0);
        hard[[s, j]] = 1.0;
    }
    hard
}

fn to_assignment(hard: &Tensor, soft: Tensor, seeds: &[usize]) -> AssignmentMatrix {
    let cluster_of = hard
        .rows()
        .into_iter()
        .map(|r| r.iter().position(|&x| x == 1.0).expect("one-hot row"))
        .collect();
    AssignmentMatrix { cluster_of, n_coarse: seeds.len(), seeds: seeds.to_vec(), soft: Some(soft) }
}

/// Mean distance from each non-seed node to its nearest seed, treated as a
/// constant. Latent distances are divided by it so the unit Gumbel noise
/// perturbs assignments among nearby seeds only, whatever the latent scale.
pub fn distance_scale(d: &Tensor, seeds: &[usize]) -> f64 {
    let mut is_seed = vec![false; d.nrows()];
    for &s in seeds {
        is_seed[s] = true;
    }
    let near: Vec<f64> = d
        .rows()
        .into_iter()
        .zip(&is_seed)
        .filter(|(_, &s)| !s)
        .map(|(r, _)| r.iter().copied().fold(f64::INFINITY, f64::min))
        .collect();
    let mean = near.iter().sum::<f64>() / near.len().max(1) as f64;
    if mean.is_finite() && mean > 1e-12 {
        mean
    } else {
        1.0
    }
}

/// Neural-CLASP assignment recorded on the tape. Returns the straight-through
/// variable (hard forward, soft backward) and the sampled assignment.
pub fn clasp_assign(
    tape: &mut Tape,
    h: Var,
    seeds: &[usize],
    temperature: f64,
    noise: Option<&mut dyn rand::RngCore>,
) -> Result<(Var, AssignmentMatrix)> {
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("CLASP needs at least one seed".into()));
    }
    if !(temperature > 0.0) {
        return Err(Error::InvalidConfig(format!("temperature must be positive, got {temperature}")));
    }
    let n = tape.value(h).nrows();
    let hs = tape.gather_rows(h, std::sync::Arc::new(seeds.to_vec()))?;
    let d = tape.pairwise_dist(h, hs)?;
    let mut logits = tape.scale(d, -1.0 / distance_scale(tape.value(d), seeds));
    if let Some(rng) = noise {
        let g = tape.constant(gumbel_noise(n, seeds.len(), rng));
        logits = tape.add(logits, g)?;
    }
    let z = tape.scale(logits, 1.0 / temperature);
    let soft = tape.row_softmax(z);
    let hard = hard_with_seeds(tape.value(soft), seeds);
    let p = to_assignment(&hard, tape.value(soft).clone(), seeds);
    let ste = tape.ste_with(soft, hard)?;
    Ok((ste, p))
}

/// Value-only CLASP on a feature matrix.
pub fn clasp_assign_values(
    h: &Tensor,
    seeds: &[usize],
    temperature: f64,
    noise: Option<&mut dyn rand::RngCore>,
) -> Result<AssignmentMatrix> {
    let mut tape = Tape::new();
    let hv = tape.constant(h.clone());
    Ok(clasp_assign(&mut tape, hv, seeds, temperature, noise)?.1)
}
