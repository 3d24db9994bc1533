//! Central finite-difference verification of tape gradients.

use rand::Rng;
use serde::Serialize;

use super::params::{Gradients, ParamStore};
use crate::error::Result;

#[derive(Clone, Debug, Serialize)]
pub struct FdSample {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
    /// One-sided differences disagree: the sample sits on a kink.
    pub non_smooth: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct FdReport {
    pub samples: Vec<FdSample>,
    pub max_rel_error: f64,
}

impl FdReport {
    pub fn non_smooth_count(&self) -> usize {
        self.samples.iter().filter(|s| s.non_smooth).count()
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1e-12)
}

/// Compares `grads` against central differences of `f` for the given
/// `(parameter, flat index)` samples.
pub fn finite_diff_check_at(
    f: &mut dyn FnMut(&ParamStore) -> Result<f64>,
    store: &ParamStore,
    grads: &Gradients,
    eps: f64,
    picks: &[(usize, usize)],
) -> Result<FdReport> {
    let f0 = f(store)?;
    let mut work = store.clone();
    let mut samples = Vec::with_capacity(picks.len());
    for &(pi, k) in picks {
        let orig = store.entry(pi).value.as_slice_memory_order().expect("contiguous")[k];
        let set = |w: &mut ParamStore, x: f64| {
            w.entry_mut(pi).value.as_slice_memory_order_mut().expect("contiguous")[k] = x;
        };
        let (xp, xm) = (orig + eps, orig - eps);
        set(&mut work, xp);
        let fp = f(&work)?;
        set(&mut work, xm);
        let fm = f(&work)?;
        set(&mut work, orig);
        let numeric = (fp - fm) / (xp - xm);
        let fwd = (fp - f0) / (xp - orig);
        let bwd = (f0 - fm) / (orig - xm);
        let noise = 1e3 * f64::EPSILON * f0.abs().max(fp.abs()) / eps;
        let non_smooth = (fwd - bwd).abs() > 1e-2 * fwd.abs().max(bwd.abs()) + noise;
        let analytic = grads.grads[pi].as_slice_memory_order().expect("contiguous")[k];
        samples.push(FdSample {
            name: store.entry(pi).name.clone(),
            index: k,
            analytic,
            numeric,
            rel_error: relative_error(analytic, numeric),
            non_smooth,
        });
    }
    let max_rel_error = samples.iter().filter(|s| !s.non_smooth).map(|s| s.rel_error).fold(0.0, f64::max);
    Ok(FdReport { samples, max_rel_error })
}

/// Samples `samples` scalar entries uniformly among trainable parameters
/// accepted by `filter` and checks them.
pub fn finite_diff_check(
    f: &mut dyn FnMut(&ParamStore) -> Result<f64>,
    store: &ParamStore,
    grads: &Gradients,
    eps: f64,
    samples: usize,
    rng: &mut impl Rng,
    filter: &dyn Fn(&str) -> bool,
) -> Result<FdReport> {
    let pool: Vec<(usize, usize)> = (0..store.len())
        .filter(|&i| store.entry(i).trainable && filter(&store.entry(i).name))
        .flat_map(|i| (0..store.entry(i).value.len()).map(move |k| (i, k)))
        .collect();
    let picks: Vec<(usize, usize)> = if pool.is_empty() {
        Vec::new()
    } else {
        (0..samples).map(|_| pool[rng.random_range(0..pool.len())]).collect()
    };
    finite_diff_check_at(f, store, grads, eps, &picks)
}
