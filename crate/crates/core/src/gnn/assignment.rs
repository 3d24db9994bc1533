use ndarray::Array2;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Hard node→cluster map `P` from level `l` to level `l+1`, optionally with
/// the soft relaxation it was sampled from.
#[derive(Clone, Debug, PartialEq)]
pub struct AssignmentMatrix {
    pub cluster_of: Vec<usize>,
    pub n_coarse: usize,
    /// Fine node acting as the centre of each coarse node.
    pub seeds: Vec<usize>,
    pub soft: Option<Tensor>,
}

impl AssignmentMatrix {
    pub fn identity(n: usize) -> Self {
        AssignmentMatrix { cluster_of: (0..n).collect(), n_coarse: n, seeds: (0..n).collect(), soft: None }
    }

    /// Builds and validates a hard assignment (no soft part).
    pub fn from_clusters(cluster_of: Vec<usize>, n_coarse: usize, seeds: Vec<usize>) -> Result<Self> {
        let p = AssignmentMatrix { cluster_of, n_coarse, seeds, soft: None };
        p.validate()?;
        Ok(p)
    }

    pub fn n_fine(&self) -> usize {
        self.cluster_of.len()
    }

    pub fn validate(&self) -> Result<()> {
        let mut count = vec![0usize; self.n_coarse];
        for (i, &c) in self.cluster_of.iter().enumerate() {
            if c >= self.n_coarse {
                return Err(Error::InvalidConfig(format!("node {i} assigned to missing cluster {c}")));
            }
            count[c] += 1;
        }
        if let Some(c) = count.iter().position(|&k| k == 0) {
            return Err(Error::EmptyCluster { column: c });
        }
        if self.seeds.len() != self.n_coarse {
            return Err(Error::InvalidConfig(format!(
                "{} seeds for {} clusters",
                self.seeds.len(),
                self.n_coarse
            )));
        }
        Ok(())
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut count = vec![0usize; self.n_coarse];
        for &c in &self.cluster_of {
            count[c] += 1;
        }
        count
    }

    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut m = vec![Vec::new(); self.n_coarse];
        for (i, &c) in self.cluster_of.iter().enumerate() {
            m[c].push(i);
        }
        m
    }

    pub fn hard_dense(&self) -> Tensor {
        let mut p = Array2::zeros((self.n_fine(), self.n_coarse));
        for (i, &c) in self.cluster_of.iter().enumerate() {
            p[[i, c]] = 1.0;
        }
        p
    }

    pub fn is_identity(&self) -> bool {
        self.n_coarse == self.n_fine() && self.cluster_of.iter().enumerate().all(|(i, &c)| i == c)
    }

    /// Drops the soft relaxation, keeping the hard map.
    pub fn hardened(&self) -> Self {
        AssignmentMatrix { soft: None, ..self.clone() }
    }
}
