//! Encoder/decoder message passing, Neural-CLASP assignment and residual
//! parameter heads.

mod assignment;
mod clasp;
mod encoding;
mod heads;
mod mlp;
mod network;

pub use assignment::AssignmentMatrix;
pub use clasp::{clasp_assign, clasp_assign_values, distance_scale, gumbel_noise, hard_with_seeds, select_seeds};
pub use encoding::{
    edge_inputs, node_inputs, positional_encoding, type_matrix, EDGE_INPUT_DIM, NODE_INPUT_DIM, PE_DIM, PE_OCTAVES,
};
pub use heads::{clamp_stiffness, contact_map, contact_raw, decode_params, ParamVars, KAPPA_D, KAPPA_S, K_REF, S_MIN};
pub use mlp::Mlp;
pub use network::{encode, init_network, message_pass, EdgeIndex, NetArch};
