//! Static graph-ODE block.
//!
//! Integrates `dH/dt = ln Â_reg·H + H·Ω_s + H_in` from `H(0) = H_in`. The
//! weight lives in log space as `Ω_s`; it has no dependence on the input, so
//! at inference every conversation propagates under the same matrix.

use alloc::format;
use alloc::string::String;

use rand::Rng;

use crate::error::Result;
use crate::graph::EmotionGraph;
use crate::matrix::Matrix;
use crate::ode::{rk4_integrate, rk4_on_tape, OdeSystem, DEFAULT_STEP, DEFAULT_T_END};
use crate::params::{normal, ParamStore};
use crate::tape::{Tape, Var};

/// `Ω_s` init std is `0.1/√d`, small enough to keep the ODE nonstiff.
pub fn init_log_weight<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Matrix {
    normal(d, d, 0.1 / libm::sqrt(d as f64), rng)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SgcodeBlock {
    pub omega_s: Matrix,
    pub t_end: f64,
    pub step: f64,
}

impl SgcodeBlock {
    pub fn new(omega_s: Matrix) -> Self {
        Self {
            omega_s,
            t_end: DEFAULT_T_END,
            step: DEFAULT_STEP,
        }
    }
}

/// Plain evaluation of one block: `H(t_end)` with drive and start `h_in`.
pub fn sgcode_forward(g: &EmotionGraph, h_in: &Matrix, block: &SgcodeBlock) -> Result<Matrix> {
    let sys = OdeSystem::new(
        g.adjacency_log.clone(),
        block.omega_s.clone(),
        h_in.clone(),
        block.t_end,
        block.step,
    )?;
    Ok(rk4_integrate(&sys, h_in)?.last().clone())
}

/// Parameter name of block `index`'s log weight.
pub fn param_name(prefix: &str, index: usize) -> String {
    format!("{prefix}.{index}.omega")
}

pub fn register_blocks<R: Rng + ?Sized>(
    store: &mut ParamStore,
    prefix: &str,
    blocks: usize,
    d: usize,
    rng: &mut R,
) -> Result<()> {
    for b in 0..blocks {
        store.insert(param_name(prefix, b), init_log_weight(d, rng))?;
    }
    Ok(())
}

/// One block recorded on the tape; differentiable in `omega_s` and `h_in`.
pub fn sgcode_on_tape(tape: &mut Tape, log_adjacency: Var, h_in: Var, omega_s: Var, t_end: f64, step: f64) -> Result<Var> {
    rk4_on_tape(tape, log_adjacency, omega_s, h_in, h_in, t_end, step)
}
