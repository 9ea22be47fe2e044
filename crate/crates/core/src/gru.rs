//! Gated recurrent unit cell on the tape.
//!
//! Convention (row vectors, weights act on the right):
//!
//! ```text
//! z  = σ(x·W_z + b_z + h·U_z)
//! r  = σ(x·W_r + b_r + h·U_r)
//! h̃  = tanh(x·W_h + b_h + (r ⊙ h)·U_h)
//! h' = (1 − z) ⊙ h + z ⊙ h̃
//! ```
//!
//! The reset gate multiplies `h` before the candidate transform. Inputs and
//! hidden states may carry several rows, which are independent sequences
//! advanced in lock step.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::TensorError;
use crate::params::ParamStore;

const SUFFIXES: [&str; 9] = ["w_z", "w_r", "w_h", "u_z", "u_r", "u_h", "b_z", "b_r", "b_h"];

/// GRU weights bound on a tape.
#[derive(Debug, Clone, Copy)]
pub struct GruParams {
    pub w_z: Var,
    pub w_r: Var,
    pub w_h: Var,
    pub u_z: Var,
    pub u_r: Var,
    pub u_h: Var,
    pub b_z: Var,
    pub b_r: Var,
    pub b_h: Var,
    pub dim: usize,
}

/// Names of the nine GRU tensors stored under `prefix`.
pub fn param_names(prefix: &str) -> Vec<String> {
    SUFFIXES.iter().map(|s| format!("{prefix}.{s}")).collect()
}

/// Allocates `d × d` input and hidden weights and zero `1 × d` biases.
pub fn init_params<R: Rng>(
    store: &mut ParamStore,
    rng: &mut R,
    prefix: &str,
    d: usize,
) -> Result<(), TensorError> {
    for s in &SUFFIXES[..6] {
        store.insert_uniform(rng, &format!("{prefix}.{s}"), d, d)?;
    }
    for s in &SUFFIXES[6..] {
        store.insert_zeros(&format!("{prefix}.{s}"), 1, d)?;
    }
    Ok(())
}

impl GruParams {
    pub fn bind(tape: &mut Tape, store: &ParamStore, prefix: &str) -> Result<Self, TensorError> {
        let v = param_names(prefix)
            .iter()
            .map(|name| tape.param(store, name))
            .collect::<Result<Vec<_>, _>>()?;
        let dim = tape.value(v[0]).rows();
        Ok(GruParams {
            w_z: v[0],
            w_r: v[1],
            w_h: v[2],
            u_z: v[3],
            u_r: v[4],
            u_h: v[5],
            b_z: v[6],
            b_r: v[7],
            b_h: v[8],
            dim,
        })
    }
}

/// Input-side gate pre-activations `x·W + b` for each gate.
#[derive(Debug, Clone, Copy)]
pub struct GateInputs {
    pub z: Var,
    pub r: Var,
    pub h: Var,
}

fn check_width(tape: &Tape, v: Var, d: usize) -> Result<(), TensorError> {
    let t = tape.value(v);
    let (_, c) = t.dims2("gru_step")?;
    if c != d {
        return Err(TensorError::ShapeMismatch {
            op: "gru_step",
            left: vec![t.rows(), d],
            right: t.shape().to_vec(),
        });
    }
    Ok(())
}

pub fn project_inputs(tape: &mut Tape, x: Var, p: &GruParams) -> Result<GateInputs, TensorError> {
    check_width(tape, x, p.dim)?;
    let z = tape.matmul(x, p.w_z)?;
    let z = tape.add_row(z, p.b_z)?;
    let r = tape.matmul(x, p.w_r)?;
    let r = tape.add_row(r, p.b_r)?;
    let h = tape.matmul(x, p.w_h)?;
    let h = tape.add_row(h, p.b_h)?;
    Ok(GateInputs { z, r, h })
}

/// One GRU update given precomputed input projections.
pub fn gru_cell(tape: &mut Tape, h: Var, x: &GateInputs, p: &GruParams) -> Result<Var, TensorError> {
    check_width(tape, h, p.dim)?;
    let hz = tape.matmul(h, p.u_z)?;
    let z = tape.add(x.z, hz)?;
    let z = tape.sigmoid(z);
    let hr = tape.matmul(h, p.u_r)?;
    let r = tape.add(x.r, hr)?;
    let r = tape.sigmoid(r);
    let rh = tape.mul(r, h)?;
    let rhu = tape.matmul(rh, p.u_h)?;
    let cand = tape.add(x.h, rhu)?;
    let cand = tape.tanh(cand);
    let keep = tape.affine(z, -1.0, 1.0);
    let kept = tape.mul(keep, h)?;
    let fresh = tape.mul(z, cand)?;
    tape.add(kept, fresh)
}

pub fn gru_step(tape: &mut Tape, h: Var, x: Var, p: &GruParams) -> Result<Var, TensorError> {
    check_width(tape, h, p.dim)?;
    let inputs = project_inputs(tape, x, p)?;
    gru_cell(tape, h, &inputs, p)
}
