//! Global information vector: multi-head self-attention over every
//! utterance of a conversation followed by mean pooling.
//!
//! No positional encoding, no feed-forward sublayer, no layer norm; just
//! the attention map and the output projection that merges the heads.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{invalid, Result};
use crate::params::{xavier, ParamStore};
use crate::tape::{Tape, Var};

#[derive(Clone, Copy, Debug)]
pub struct HeadParams {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
}

#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub heads: Vec<HeadParams>,
    pub w_o: Var,
    pub head_count: usize,
    pub d_k: usize,
}

impl AttentionParams {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        hidden: usize,
        head_count: usize,
        rng: &mut R,
    ) -> Result<()> {
        if head_count == 0 || !hidden.is_multiple_of(head_count) {
            return Err(invalid(format!(
                "hidden dim {hidden} is not divisible by {head_count} heads"
            )));
        }
        let d_k = hidden / head_count;
        for h in 0..head_count {
            for m in ["q", "k", "v"] {
                store.insert(format!("{prefix}.head{h}.w_{m}"), xavier(hidden, d_k, rng))?;
            }
        }
        store.insert(format!("{prefix}.w_o"), xavier(hidden, hidden, rng))?;
        Ok(())
    }

    pub fn bind(tape: &mut Tape, store: &ParamStore, prefix: &str, head_count: usize) -> Result<Self> {
        let mut heads = Vec::with_capacity(head_count);
        for h in 0..head_count {
            let mut get = |m: &str| tape.param(store, &format!("{prefix}.head{h}.w_{m}"));
            heads.push(HeadParams {
                w_q: get("q")?,
                w_k: get("k")?,
                w_v: get("v")?,
            });
        }
        let w_o = tape.param(store, &format!("{prefix}.w_o"))?;
        let d_k = tape.shape(heads[0].w_q).1;
        Ok(Self {
            heads,
            w_o,
            head_count,
            d_k,
        })
    }
}

/// Attention output `Z` (same shape as `h`) and each head's `n × n` score matrix.
pub fn self_attention(tape: &mut Tape, h: Var, p: &AttentionParams) -> (Var, Vec<Var>) {
    let scale = 1.0 / libm::sqrt(p.d_k as f64);
    let mut outputs = Vec::with_capacity(p.head_count);
    let mut scores = Vec::with_capacity(p.head_count);
    for head in &p.heads {
        let q = tape.matmul(h, head.w_q);
        let k = tape.matmul(h, head.w_k);
        let v = tape.matmul(h, head.w_v);
        let kt = tape.transpose(k);
        let logits = tape.matmul(q, kt);
        let logits = tape.scale(logits, scale);
        let a = tape.softmax_rows(logits);
        outputs.push(tape.matmul(a, v));
        scores.push(a);
    }
    let merged = tape.concat_cols(&outputs);
    (tape.matmul(merged, p.w_o), scores)
}

/// `g = (1/N) Σ_i z_i` as a `1 × d` row.
pub fn global_pool(tape: &mut Tape, z: Var) -> Var {
    tape.mean_rows(z)
}

/// Stacks `layers` attention layers (each with its own parameters) and pools.
/// Also returns every attention map, layer-major then head.
pub fn global_information_vector(tape: &mut Tape, h: Var, layers: &[AttentionParams]) -> (Var, Vec<Var>) {
    let mut z = h;
    let mut maps = Vec::new();
    for layer in layers {
        let (out, scores) = self_attention(tape, z, layer);
        z = out;
        maps.extend(scores);
    }
    (global_pool(tape, z), maps)
}
