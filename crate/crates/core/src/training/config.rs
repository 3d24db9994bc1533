use serde::{Deserialize, Serialize};

use crate::autodiff::AdamConfig;
use crate::dynamics::ContactCoeffs;
use crate::error::{Error, Result};
use crate::gnn::NetArch;

/// How the assignments between levels are produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Neural-CLASP, sampled until the level is committed.
    #[default]
    Learned,
    /// Random seeds with nearest-seed clusters, fixed from the start.
    Random,
}

/// Initial guess for the level-0 physical parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitGuess {
    pub stiffness: f64,
    pub d_dp: f64,
    pub d_dr: f64,
    pub contact: ContactCoeffs,
}

impl Default for InitGuess {
    fn default() -> Self {
        InitGuess { stiffness: 20.0, d_dp: 0.5, d_dr: 0.05, contact: ContactCoeffs::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub levels: usize,
    /// Coarse node counts per level as fractions of the level-0 count.
    pub ratios: Vec<f64>,
    pub epochs: usize,
    pub commit: usize,
    pub k_model: usize,
    pub k_col: usize,
    pub lr: f64,
    /// Learning rate of the level-0 physical parameters (log scale).
    pub lr_phys: f64,
    pub lr_decay: f64,
    /// Restart the decay at every commit window instead of decaying globally.
    pub decay_per_window: bool,
    pub lambda0: f64,
    pub lambda_min: f64,
    pub grad_clip: f64,
    pub substeps: usize,
    pub seed: u64,
    /// Number of observed frames used for training; `None` uses all.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frames: Option<usize>,
    pub supervise_all_committed: bool,
    pub strategy: Strategy,
    pub init: InitGuess,
    pub latent: usize,
    pub hidden: usize,
    pub hidden_layers: usize,
    pub rounds: usize,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            levels: 3,
            ratios: vec![0.6, 0.4, 0.3],
            epochs: 80,
            commit: 20,
            k_model: 1,
            k_col: 5,
            lr: 1e-3,
            lr_phys: 0.2,
            lr_decay: 0.9,
            decay_per_window: true,
            lambda0: 1.0,
            lambda_min: 0.1,
            grad_clip: 10.0,
            substeps: 667,
            seed: 0,
            frames: None,
            supervise_all_committed: false,
            strategy: Strategy::Learned,
            init: InitGuess::default(),
            latent: 128,
            hidden: 128,
            hidden_layers: 2,
            rounds: 2,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn arch(&self) -> NetArch {
        NetArch {
            latent: self.latent,
            hidden: self.hidden,
            hidden_layers: self.hidden_layers,
            rounds: self.rounds,
            levels: self.levels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.ratios.len() != self.levels {
            return bad(format!("{} ratios given for {} levels", self.ratios.len(), self.levels));
        }
        let mut prev = 1.0;
        for &r in &self.ratios {
            if !(r > 0.0 && r < prev) {
                return bad(format!("ratios must be strictly decreasing within (0, 1): {:?}", self.ratios));
            }
            prev = r;
        }
        if self.epochs == 0 || self.commit == 0 {
            return bad("epochs and commit interval must be positive".into());
        }
        if self.commit * (self.levels + 1) > self.epochs {
            return bad(format!(
                "commit interval {} x {} levels exceeds {} epochs",
                self.commit,
                self.levels + 1,
                self.epochs
            ));
        }
        if self.k_model == 0 {
            return bad("at least one model update per epoch is required".into());
        }
        let pos = [self.lr, self.lr_phys, self.lambda0, self.lambda_min, self.grad_clip];
        if pos.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
            return bad("learning rates, temperatures and clip norm must be positive".into());
        }
        if self.lambda_min > self.lambda0 {
            return bad("lambda_min exceeds lambda0".into());
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("lr decay {} must lie in (0, 1]", self.lr_decay));
        }
        if self.substeps == 0 {
            return bad("substeps must be at least 1".into());
        }
        if self.frames == Some(0) {
            return bad("training needs at least one frame".into());
        }
        let g = &self.init;
        if !(g.stiffness > 0.0 && g.d_dp > 0.0 && g.d_dr > 0.0) {
            return bad("initial stiffness and damping must be positive".into());
        }
        g.contact.validate()?;
        self.arch().validate()
    }

    /// Node count of every level for `n0` fine nodes.
    pub fn level_counts(&self, n0: usize) -> Result<Vec<usize>> {
        let mut counts = vec![n0];
        for &r in &self.ratios {
            let k = crate::reduction::target_count(n0, r)?;
            if k >= *counts.last().unwrap_or(&n0) {
                return Err(Error::InvalidConfig(format!(
                    "ratio {r} of {n0} nodes does not reduce level {} ({} nodes)",
                    counts.len() - 1,
                    counts.last().unwrap_or(&n0)
                )));
            }
            counts.push(k);
        }
        Ok(counts)
    }
}
