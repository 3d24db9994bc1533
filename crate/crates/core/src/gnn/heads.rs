use ndarray::{arr2, Array2};

use super::network::NetArch;
use crate::autodiff::{smooth_min, ParamStore, Tape, Var};
use crate::dynamics::{ContactCoeffs, MechParams};
use crate::error::Result;

pub const S_MIN: f64 = 1e-3;
/// Sharpness of the smooth stiffness clamp (1/(N/m)).
pub const KAPPA_S: f64 = 1e3;
/// Sharpness of the smooth damping clamp (1/(N·s/m)).
pub const KAPPA_D: f64 = 1e2;
/// Reference contact stiffness scaling the softplus map (N/m).
pub const K_REF: f64 = 1000.0;

/// Tape variables of one level's mechanical parameters.
#[derive(Clone, Copy, Debug)]
pub struct ParamVars {
    /// `E×1`
    pub stiffness: Var,
    /// `1×1`
    pub d_dp: Var,
    /// `1×1`
    pub d_dr: Var,
    /// `1×3`: restitution, friction, contact stiffness.
    pub contact: Var,
}

impl ParamVars {
    pub fn values(&self, tape: &Tape) -> MechParams {
        let c = tape.value(self.contact);
        MechParams {
            stiffness: tape.value(self.stiffness).column(0).to_vec(),
            d_dp: tape.scalar(self.d_dp),
            d_dr: tape.scalar(self.d_dr),
            contact: ContactCoeffs { restitution: c[[0, 0]], friction: c[[0, 1]], contact_stiffness: c[[0, 2]] },
        }
    }
}

/// Maps raw contact logits (`1×3`) into their valid ranges.
pub fn contact_map(tape: &mut Tape, raw: Var) -> Result<Var> {
    let sig = tape.sigmoid(raw);
    let sp = tape.softplus(raw);
    let s0 = tape.constant(arr2(&[[1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]));
    let s1 = tape.constant(arr2(&[[0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, K_REF]]));
    let a = tape.matmul(sig, s0)?;
    let b = tape.matmul(sp, s1)?;
    tape.add(a, b)
}

/// Inverse of [`contact_map`] for initialisation.
pub fn contact_raw(c: &ContactCoeffs) -> Array2<f64> {
    let inv_sp = |y: f64| if y > 30.0 { y } else { y.exp_m1().ln() };
    let e = c.restitution.clamp(1e-6, 1.0 - 1e-6);
    arr2(&[[(e / (1.0 - e)).ln(), inv_sp(c.friction), inv_sp(c.contact_stiffness / K_REF)]])
}

/// Residual decoding of one level's parameters around the Galerkin base.
/// `ed` are the decoded edge features, `hd` the decoded node features,
/// `contact_base` raw contact logits.
#[allow(clippy::too_many_arguments)]
pub fn decode_params(
    tape: &mut Tape,
    store: &ParamStore,
    arch: &NetArch,
    level: usize,
    ed: Var,
    hd: Var,
    base_s: Var,
    base_dp: Var,
    base_dr: Var,
    contact_base: Var,
) -> Result<ParamVars> {
    let ms = tape.mean(base_s);
    let beta_s = tape.scale(ms, 0.1);
    let sd = tape.add(base_dp, base_dr)?;
    let beta_d = tape.scale(sd, 0.1);

    let out_s = arch.head(level, "s").forward(tape, store, ed)?;
    let out_s = tape.mul_scalar(out_s, beta_s)?;
    let s = tape.add(base_s, out_s)?;
    let stiffness = tape.smooth_min(s, S_MIN, KAPPA_S);

    let ebar = tape.mean_rows(ed);
    let damp = |tape: &mut Tape, which: &str, base: Var| -> Result<Var> {
        let o = arch.head(level, which).forward(tape, store, ebar)?;
        let o = tape.mul_scalar(o, beta_d)?;
        let d = tape.add(base, o)?;
        Ok(tape.smooth_min(d, 0.0, KAPPA_D))
    };
    let d_dp = damp(tape, "dp", base_dp)?;
    let d_dr = damp(tape, "dr", base_dr)?;

    let hbar = tape.mean_rows(hd);
    let eta = arch.head(level, "eta").forward(tape, store, hbar)?;
    let raw = tape.add(contact_base, eta)?;
    let contact = contact_map(tape, raw)?;
    Ok(ParamVars { stiffness, d_dp, d_dr, contact })
}

/// Scalar form of the stiffness clamp, for reference computations.
pub fn clamp_stiffness(x: f64) -> f64 {
    smooth_min(x, S_MIN, KAPPA_S)
}
