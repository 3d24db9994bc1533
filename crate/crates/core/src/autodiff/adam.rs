//! Adam with bias correction.

use ndarray::Zip;
use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParamStore};
use super::tape::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moments per parameter, with per-parameter step counts
/// so masked updates keep a correct bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub steps: Vec<u64>,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        AdamState { m: store.zeros_like(), v: store.zeros_like(), steps: vec![0; store.len()] }
    }
}

/// One Adam step on every trainable parameter accepted by `mask`.
pub fn adam_update(
    store: &mut ParamStore,
    grads: &Gradients,
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
    mask: &dyn Fn(&str) -> bool,
) -> Result<()> {
    if grads.grads.len() != store.len() || state.m.len() != store.len() {
        return Err(Error::InvalidConfig("optimizer state does not match parameters".into()));
    }
    for i in 0..store.len() {
        let g = &grads.grads[i];
        let p = store.entry_mut(i);
        if !p.trainable || !mask(&p.name) {
            continue;
        }
        if g.dim() != p.value.dim() || state.m[i].dim() != p.value.dim() {
            return Err(Error::InvalidConfig(format!("shape mismatch updating {}", p.name)));
        }
        state.steps[i] += 1;
        let t = state.steps[i] as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let (b1, b2, eps) = (cfg.beta1, cfg.beta2, cfg.eps);
        Zip::from(&mut p.value).and(&mut state.m[i]).and(&mut state.v[i]).and(g).for_each(|x, m, v, &g| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let mh = *m / c1;
            let vh = *v / c2;
            *x -= lr * mh / (vh.sqrt() + eps);
        });
    }
    Ok(())
}
