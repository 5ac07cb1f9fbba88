//! Prompt generation network and dynamic graph-ODE block.
//!
//! The GIV `g` of a conversation passes through a two-layer perceptron to a
//! selection vector `s ∈ (0,1)^K` that mixes a learned bank of log-space
//! weights, `Ω_d = Σ_k s_k Ω_b[k]`. Each dynamic block first fuses the
//! static features with the previous dynamic state, `proj(BN([H | U]))`,
//! and then integrates under `Ω_d`.

use alloc::format;
use alloc::string::String;

use rand::Rng;

use crate::activation::relu;
use crate::batchnorm::{BatchNormLayer, BatchNormState, Mode, RunningUpdate};
use crate::error::{Error, Result};
use crate::graph::EmotionGraph;
use crate::matrix::Matrix;
use crate::ode::{rk4_integrate, rk4_on_tape, OdeSystem, DEFAULT_STEP, DEFAULT_T_END};
use crate::params::{xavier, ParamStore};
use crate::sgcode::init_log_weight;
use crate::tape::{Tape, Var};

pub const DEFAULT_BANK_SIZE: usize = 8;

/// PGN weights and the flattened bank: row `k` of `bank` holds `Ω_b[k]`
/// in row-major order, so `s·bank` reshaped to `d × d` is `Ω_d`.
#[derive(Clone, Copy, Debug)]
pub struct PromptGenParams {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub bank: Var,
    pub hidden: usize,
    pub bank_size: usize,
}

impl PromptGenParams {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        hidden: usize,
        bank_size: usize,
        rng: &mut R,
    ) -> Result<()> {
        if bank_size == 0 {
            return Err(crate::error::invalid("weight bank needs at least one matrix"));
        }
        store.insert(format!("{prefix}.w1"), xavier(hidden, hidden, rng))?;
        // A small positive bias keeps the hidden ReLUs alive at init.
        store.insert(format!("{prefix}.b1"), Matrix::filled(1, hidden, 0.1))?;
        store.insert(format!("{prefix}.w2"), xavier(hidden, bank_size, rng))?;
        store.insert(format!("{prefix}.b2"), Matrix::zeros(1, bank_size))?;
        let mut bank = Matrix::zeros(bank_size, hidden * hidden);
        for k in 0..bank_size {
            let omega = init_log_weight(hidden, rng);
            bank.row_mut(k).copy_from_slice(omega.as_slice());
        }
        store.insert(format!("{prefix}.bank"), bank)?;
        Ok(())
    }

    pub fn bind(tape: &mut Tape, store: &ParamStore, prefix: &str) -> Result<Self> {
        let mut get = |name: &str| tape.param(store, &format!("{prefix}.{name}"));
        let (w1, b1, w2, b2, bank) = (get("w1")?, get("b1")?, get("w2")?, get("b2")?, get("bank")?);
        let (hidden, bank_size) = tape.shape(w2);
        Ok(Self {
            w1,
            b1,
            w2,
            b2,
            bank,
            hidden,
            bank_size,
        })
    }
}

/// `s = σ(relu(g·W1 + b1)·W2 + b2)` as a `1 × K` row.
pub fn generate_selection(tape: &mut Tape, g: Var, p: &PromptGenParams) -> Var {
    let a = tape.matmul(g, p.w1);
    let a = tape.add_row(a, p.b1);
    let a = tape.relu(a);
    let b = tape.matmul(a, p.w2);
    let b = tape.add_row(b, p.b2);
    tape.sigmoid(b)
}

/// `Ω_d = Σ_k s_k Ω_b[k]`.
pub fn compose_dynamic_log_weight(tape: &mut Tape, s: Var, p: &PromptGenParams) -> Var {
    let flat = tape.matmul(s, p.bank);
    tape.reshape(flat, p.hidden, p.hidden)
}

/// Plain scalar evaluation of the PGN, used to cross-check the tape.
pub fn selection_from_values(g: &Matrix, w1: &Matrix, b1: &Matrix, w2: &Matrix, b2: &Matrix) -> Matrix {
    let a = g.matmul(w1).add_row(b1).map(relu);
    a.matmul(w2).add_row(b2).map(crate::activation::sigmoid)
}

/// Names of one dynamic block's batch norm and residual projection.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DgcodeLayer {
    pub bn: BatchNormLayer,
    pub projection: String,
}

impl DgcodeLayer {
    pub fn new(prefix: &str, index: usize) -> Self {
        Self {
            bn: BatchNormLayer::new(format!("{prefix}.{index}.bn")),
            projection: format!("{prefix}.{index}.proj"),
        }
    }

    pub fn register<R: Rng + ?Sized>(&self, store: &mut ParamStore, hidden: usize, rng: &mut R) -> Result<()> {
        self.bn.register(store, 2 * hidden)?;
        store.insert(self.projection.clone(), xavier(2 * hidden, hidden, rng))
    }

    /// `proj(BN([h_sg | u_in]))` over every row passed in.
    pub fn block_input(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        h_sg: Var,
        u_in: Var,
        mode: Mode,
    ) -> Result<(Var, Option<RunningUpdate>)> {
        if tape.shape(h_sg) != tape.shape(u_in) {
            return Err(Error::ShapeMismatch {
                op: "dgcode input",
                left: tape.shape(h_sg),
                right: tape.shape(u_in),
            });
        }
        let joined = tape.concat_cols(&[h_sg, u_in]);
        let (normalized, update) = self.bn.forward(tape, store, joined, mode)?;
        let proj = tape.param(store, &self.projection)?;
        Ok((tape.matmul(normalized, proj), update))
    }

    pub fn block(&self, store: &ParamStore) -> Result<DgcodeBlock> {
        Ok(DgcodeBlock {
            bn: self.bn.state(store)?,
            residual_projection: store.value(&self.projection)?.clone(),
            t_end: DEFAULT_T_END,
            step: DEFAULT_STEP,
        })
    }
}

/// Integrates `dU/dt = ln Â_reg·U + U·Ω_d + X` from `U(0) = X`.
pub fn dgcode_on_tape(tape: &mut Tape, log_adjacency: Var, x: Var, omega_d: Var, t_end: f64, step: f64) -> Result<Var> {
    rk4_on_tape(tape, log_adjacency, omega_d, x, x, t_end, step)
}

/// Standalone values of one dynamic block.
#[derive(Clone, Debug, PartialEq)]
pub struct DgcodeBlock {
    pub bn: BatchNormState,
    pub residual_projection: Matrix,
    pub t_end: f64,
    pub step: f64,
}

impl DgcodeBlock {
    pub fn new(hidden: usize, residual_projection: Matrix) -> Self {
        Self {
            bn: BatchNormState::new(2 * hidden),
            residual_projection,
            t_end: DEFAULT_T_END,
            step: DEFAULT_STEP,
        }
    }
}

/// Plain evaluation of one dynamic block on a single conversation.
/// Train mode updates `block.bn`'s running statistics.
pub fn dgcode_forward(
    g: &EmotionGraph,
    u_in: &Matrix,
    h_sg: &Matrix,
    omega_d: &Matrix,
    block: &mut DgcodeBlock,
    mode: Mode,
) -> Result<Matrix> {
    if u_in.shape() != h_sg.shape() {
        return Err(Error::ShapeMismatch {
            op: "dgcode input",
            left: h_sg.shape(),
            right: u_in.shape(),
        });
    }
    let joined = Matrix::concat_cols(&[h_sg, u_in]);
    let x = block.bn.forward(&joined, mode)?.matmul(&block.residual_projection);
    let sys = OdeSystem::new(g.adjacency_log.clone(), omega_d.clone(), x.clone(), block.t_end, block.step)?;
    Ok(rk4_integrate(&sys, &x)?.last().clone())
}
