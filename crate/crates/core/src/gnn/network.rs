use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::encoding::{edge_inputs, node_inputs, type_matrix, EDGE_INPUT_DIM, NODE_INPUT_DIM};
use super::mlp::Mlp;
use crate::autodiff::{ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{NodeType, SpringGraph};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetArch {
    pub latent: usize,
    pub hidden: usize,
    pub hidden_layers: usize,
    pub rounds: usize,
    /// Number of coarse levels `L`; the network has `L+1` levels.
    pub levels: usize,
}

impl Default for NetArch {
    fn default() -> Self {
        NetArch { latent: 128, hidden: 128, hidden_layers: 2, rounds: 2, levels: 3 }
    }
}

impl NetArch {
    pub fn enc_v(&self) -> Mlp {
        Mlp::new("enc_v", NODE_INPUT_DIM, self.hidden, self.hidden_layers, self.latent)
    }
    pub fn enc_e(&self) -> Mlp {
        Mlp::new("enc_e", EDGE_INPUT_DIM, self.hidden, self.hidden_layers, self.latent)
    }
    /// Edge update `φ_e(h_i, h_j, e_ij, τ_i, τ_j)` of a pass (`"enc"`/`"dec"`).
    pub fn phi_e(&self, level: usize, pass: &str) -> Mlp {
        Mlp::new(format!("mp{level}.{pass}.edge"), 3 * self.latent + 6, self.hidden, self.hidden_layers, self.latent)
    }
    /// Node update `φ_v(h_i, Σ e_ij)`.
    pub fn phi_v(&self, level: usize, pass: &str) -> Mlp {
        Mlp::new(format!("mp{level}.{pass}.node"), 2 * self.latent, self.hidden, self.hidden_layers, self.latent)
    }
    pub fn head(&self, level: usize, which: &str) -> Mlp {
        let out = if which == "eta" { 3 } else { 1 };
        Mlp::new(format!("head{level}.{which}"), self.latent, self.hidden, self.hidden_layers, out)
    }

    pub fn all_mlps(&self) -> Vec<(Mlp, bool)> {
        let mut v = vec![(self.enc_v(), false), (self.enc_e(), false)];
        for l in 0..=self.levels {
            for pass in ["enc", "dec"] {
                v.push((self.phi_e(l, pass), false));
                v.push((self.phi_v(l, pass), false));
            }
        }
        for l in 0..=self.levels {
            for which in ["s", "dp", "dr", "eta"] {
                v.push((self.head(l, which), true));
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent == 0 || self.hidden == 0 || self.rounds == 0 {
            return Err(Error::InvalidConfig("network widths and rounds must be positive".into()));
        }
        Ok(())
    }
}

/// Adds every network weight to `store`. Head output layers start at zero.
pub fn init_network(store: &mut ParamStore, arch: &NetArch, rng: &mut impl Rng) -> Result<()> {
    arch.validate()?;
    for (mlp, zero_last) in arch.all_mlps() {
        mlp.init(store, rng, zero_last)?;
    }
    Ok(())
}

/// Edge endpoint index lists for gathers and scatters.
#[derive(Clone, Debug)]
pub struct EdgeIndex {
    pub n: usize,
    pub edges: Arc<Vec<(usize, usize)>>,
    pub src: Arc<Vec<usize>>,
    pub dst: Arc<Vec<usize>>,
}

impl EdgeIndex {
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Self {
        EdgeIndex {
            n,
            edges: Arc::new(edges.to_vec()),
            src: Arc::new(edges.iter().map(|e| e.0).collect()),
            dst: Arc::new(edges.iter().map(|e| e.1).collect()),
        }
    }
}

/// Level-0 node and edge latents.
pub fn encode(tape: &mut Tape, store: &ParamStore, arch: &NetArch, graph: &SpringGraph) -> Result<(Var, Var)> {
    let xv = tape.constant(node_inputs(graph));
    let xe = tape.constant(edge_inputs(&graph.positions0, &graph.edges));
    let h = arch.enc_v().forward(tape, store, xv)?;
    let e = arch.enc_e().forward(tape, store, xe)?;
    Ok((h, e))
}

/// `rounds` of residual edge-then-node updates. Edge orientation is taken as given.
#[allow(clippy::too_many_arguments)]
pub fn message_pass(
    tape: &mut Tape,
    store: &ParamStore,
    phi_e: &Mlp,
    phi_v: &Mlp,
    mut h: Var,
    mut e: Var,
    idx: &EdgeIndex,
    types: &[NodeType],
    rounds: usize,
) -> Result<(Var, Var)> {
    if rounds == 0 {
        return Err(Error::InvalidConfig("message passing needs at least one round".into()));
    }
    let tau = type_matrix(types);
    let tau_i = tape.constant(tau.select(ndarray::Axis(0), &idx.src));
    let tau_j = tape.constant(tau.select(ndarray::Axis(0), &idx.dst));
    let latent = tape.value(h).ncols();
    for _ in 0..rounds {
        let agg = if idx.edges.is_empty() {
            tape.constant(Array2::zeros((idx.n, latent)))
        } else {
            let hi = tape.gather_rows(h, idx.src.clone())?;
            let hj = tape.gather_rows(h, idx.dst.clone())?;
            let x = tape.concat_cols(&[hi, hj, e, tau_i, tau_j])?;
            let de = phi_e.forward(tape, store, x)?;
            e = tape.add(e, de)?;
            let a = tape.scatter_add_rows(e, idx.src.clone(), idx.n)?;
            let b = tape.scatter_add_rows(e, idx.dst.clone(), idx.n)?;
            tape.add(a, b)?
        };
        let x = tape.concat_cols(&[h, agg])?;
        let dh = phi_v.forward(tape, store, x)?;
        h = tape.add(h, dh)?;
    }
    if tape.value(h).iter().any(|x| !x.is_finite()) {
        return Err(Error::NumericalError("non-finite node features".into()));
    }
    Ok((h, e))
}
