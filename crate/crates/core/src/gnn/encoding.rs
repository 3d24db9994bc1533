use ndarray::Array2;

use crate::autodiff::Tensor;
use crate::graph::{NodeType, SpringGraph, Vec3};

pub const PE_OCTAVES: usize = 5;
pub const PE_DIM: usize = 3 * 2 * PE_OCTAVES;
/// Position, mass, one-hot type and positional encoding.
pub const NODE_INPUT_DIM: usize = 3 + 1 + 3 + PE_DIM;
/// Difference vector and its length.
pub const EDGE_INPUT_DIM: usize = 4;

/// `sin`/`cos` of `π·2ᵏ·x_c`, coordinate-major, octave-minor, sine first.
pub fn positional_encoding(x: &Vec3) -> [f64; PE_DIM] {
    let mut out = [0.0; PE_DIM];
    let mut k = 0;
    for &c in x {
        for o in 0..PE_OCTAVES {
            let a = std::f64::consts::PI * (1u32 << o) as f64 * c;
            out[k] = a.sin();
            out[k + 1] = a.cos();
            k += 2;
        }
    }
    out
}

pub fn node_inputs(graph: &SpringGraph) -> Tensor {
    let n = graph.node_count();
    let mut t = Array2::zeros((n, NODE_INPUT_DIM));
    for i in 0..n {
        let x = graph.positions0[i];
        let mut row = Vec::with_capacity(NODE_INPUT_DIM);
        row.extend_from_slice(&x);
        row.push(graph.masses[i]);
        row.extend_from_slice(&graph.node_types[i].one_hot());
        row.extend_from_slice(&positional_encoding(&x));
        for (j, v) in row.into_iter().enumerate() {
            t[[i, j]] = v;
        }
    }
    t
}

pub fn edge_inputs(positions: &[Vec3], edges: &[(usize, usize)]) -> Tensor {
    let mut t = Array2::zeros((edges.len(), EDGE_INPUT_DIM));
    for (k, &(i, j)) in edges.iter().enumerate() {
        let d = [positions[i][0] - positions[j][0], positions[i][1] - positions[j][1], positions[i][2] - positions[j][2]];
        t[[k, 0]] = d[0];
        t[[k, 1]] = d[1];
        t[[k, 2]] = d[2];
        t[[k, 3]] = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    }
    t
}

pub fn type_matrix(types: &[NodeType]) -> Tensor {
    Array2::from_shape_fn((types.len(), 3), |(i, j)| types[i].one_hot()[j])
}
