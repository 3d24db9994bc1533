use ndarray::Array2;
use rand::Rng;

use crate::autodiff::{ParamStore, Tape, Var};
use crate::error::Result;

/// Fully connected network with softplus hidden activations and a linear
/// output layer. Weights live in a [`ParamStore`] under `prefix.w{k}` /
/// `prefix.b{k}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub prefix: String,
    pub sizes: Vec<usize>,
}

impl Mlp {
    pub fn new(prefix: impl Into<String>, input: usize, hidden: usize, hidden_layers: usize, output: usize) -> Self {
        let mut sizes = vec![input];
        sizes.extend(std::iter::repeat(hidden).take(hidden_layers));
        sizes.push(output);
        Mlp { prefix: prefix.into(), sizes }
    }

    pub fn weight_name(&self, k: usize) -> String {
        format!("{}.w{k}", self.prefix)
    }

    pub fn bias_name(&self, k: usize) -> String {
        format!("{}.b{k}", self.prefix)
    }

    pub fn layers(&self) -> usize {
        self.sizes.len() - 1
    }

    /// Fan-in scaled uniform weights, zero biases; optionally a zero output layer.
    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng, zero_last: bool) -> Result<()> {
        for k in 0..self.layers() {
            let (fi, fo) = (self.sizes[k], self.sizes[k + 1]);
            let bound = 1.0 / (fi as f64).sqrt();
            let w = if zero_last && k + 1 == self.layers() {
                Array2::zeros((fi, fo))
            } else {
                Array2::from_shape_simple_fn((fi, fo), || rng.random_range(-bound..bound))
            };
            store.add(&self.weight_name(k), w, true)?;
            store.add(&self.bias_name(k), Array2::zeros((1, fo)), true)?;
        }
        Ok(())
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let mut h = x;
        for k in 0..self.layers() {
            let w = store.load(tape, &self.weight_name(k))?;
            let b = store.load(tape, &self.bias_name(k))?;
            let z = tape.matmul(h, w)?;
            h = tape.add_row(z, b)?;
            if k + 1 < self.layers() {
                h = tape.softplus(h);
            }
        }
        Ok(h)
    }
}
