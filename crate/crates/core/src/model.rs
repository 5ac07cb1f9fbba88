//! The full pipeline on one tape:
//! encode → fuse → graph → static ODE blocks → GIV → PGN → dynamic ODE
//! blocks → classifier.
//!
//! A batch of conversations shares the bound parameters. Every conversation
//! keeps its own graph and its own `Ω_d`; batch normalization takes its
//! statistics over all utterance rows of the batch.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::batchnorm::{Mode, RunningUpdate};
use crate::conversation::{Conversation, FeatureDims};
use crate::dgcode::{compose_dynamic_log_weight, dgcode_on_tape, generate_selection, DgcodeLayer, PromptGenParams};
use crate::encoder::{bigru_forward, fuse_attention, project_modality, BiGruParams, FusionParams, Modality};
use crate::error::{invalid, Error, Result};
use crate::giv::{global_information_vector, AttentionParams};
use crate::graph::{build_graph, GraphConfig};
use crate::head::{ClassifierParams, PROBABILITY_FLOOR};
use crate::matrix::Matrix;
use crate::ode::step_count;
use crate::params::ParamStore;
use crate::sgcode::{self, sgcode_on_tape};
use crate::tape::{Tape, Var};

/// Which optional stages run. `true` means the stage is enabled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Ablation {
    pub giv: bool,
    pub pgn: bool,
    pub dgcode: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self::FULL
    }
}

impl Ablation {
    pub const FULL: Self = Self {
        giv: true,
        pgn: true,
        dgcode: true,
    };
    pub const ALL_OFF: Self = Self {
        giv: false,
        pgn: false,
        dgcode: false,
    };

    /// All eight combinations, full model first and everything-off last.
    pub fn grid() -> [Self; 8] {
        let mut out = [Self::FULL; 8];
        for (i, slot) in out.iter_mut().enumerate() {
            *slot = Self {
                giv: i & 4 == 0,
                pgn: i & 2 == 0,
                dgcode: i & 1 == 0,
            };
        }
        out
    }

    /// e.g. `giv+pgn+dgcode`, `pgn`, `none`.
    pub fn label(&self) -> String {
        let parts: Vec<&str> = [(self.giv, "giv"), (self.pgn, "pgn"), (self.dgcode, "dgcode")]
            .iter()
            .filter(|(on, _)| *on)
            .map(|&(_, name)| name)
            .collect();
        if parts.is_empty() {
            String::from("none")
        } else {
            parts.join("+")
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub dims: FeatureDims,
    pub hidden_dim: usize,
    pub num_classes: usize,
    pub bank_size: usize,
    pub heads: usize,
    pub attention_layers: usize,
    pub window: usize,
    pub theta: f64,
    pub lambda_mix: f64,
    pub t_end: f64,
    pub step: f64,
    pub blocks: usize,
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dims: FeatureDims::default(),
            hidden_dim: 16,
            num_classes: 6,
            bank_size: crate::dgcode::DEFAULT_BANK_SIZE,
            heads: 4,
            attention_layers: 1,
            window: crate::graph::DEFAULT_WINDOW,
            theta: crate::graph::DEFAULT_THETA,
            lambda_mix: crate::graph::DEFAULT_LAMBDA_MIX,
            t_end: crate::ode::DEFAULT_T_END,
            step: crate::ode::DEFAULT_STEP,
            blocks: 3,
            ablation: Ablation::FULL,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            (self.hidden_dim, "hidden_dim"),
            (self.num_classes, "num_classes"),
            (self.bank_size, "bank_size"),
            (self.heads, "heads"),
            (self.blocks, "blocks"),
            (self.dims.text, "text dim"),
            (self.dims.audio, "audio dim"),
            (self.dims.video, "video dim"),
        ];
        if let Some((_, name)) = positive.iter().find(|(v, _)| *v == 0) {
            return Err(invalid(format!("{name} must be positive")));
        }
        if !self.hidden_dim.is_multiple_of(self.heads) {
            return Err(invalid("hidden_dim must be divisible by heads"));
        }
        if !(-1.0..=1.0).contains(&self.theta) {
            return Err(invalid("theta must lie in [-1, 1]"));
        }
        if !(self.lambda_mix > 0.0 && self.lambda_mix <= 1.0) {
            return Err(invalid("lambda_mix must lie in (0, 1]"));
        }
        step_count(self.t_end, self.step)?;
        Ok(())
    }

    pub fn graph_config(&self) -> GraphConfig {
        GraphConfig {
            window: self.window,
            theta: self.theta,
            lambda_mix: self.lambda_mix,
        }
    }
}

const GRU: &str = "encoder.gru";
const FUSION: &str = "encoder.fusion";
const SGCODE: &str = "sgcode";
const PGN: &str = "pgn";
const DGCODE: &str = "dgcode";
const HEAD: &str = "head";

fn attention_prefix(layer: usize) -> String {
    format!("giv.{layer}")
}

/// Per-conversation values recorded during a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ConversationTrace {
    pub id: String,
    /// Rows of this conversation inside the batch outputs.
    pub rows: Range<usize>,
    pub fusion_weights: Matrix,
    pub edge_count: usize,
    pub regularized_spectrum: Vec<f64>,
    pub giv: Matrix,
    /// GIV attention maps, layer-major then head; empty when GIV is off.
    pub attention: Vec<Matrix>,
    pub selection: Matrix,
    pub omega_d: Matrix,
    /// Static log weights as bound for this conversation, one per block.
    pub omega_s: Vec<Matrix>,
}

#[derive(Clone, Debug)]
pub struct BatchForward {
    /// Class probabilities for every utterance of the batch, in order.
    pub probs: Var,
    /// Pre-logit classifier features, same row order.
    pub features: Var,
    pub traces: Vec<ConversationTrace>,
    /// Running-statistic updates from train-mode batch norm.
    pub updates: Vec<RunningUpdate>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
}

struct Bound {
    gru: BiGruParams,
    fusion: FusionParams,
    omega_s: Vec<Var>,
    attention: Vec<AttentionParams>,
    pgn: PromptGenParams,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    /// Fresh parameters; every stage is registered regardless of ablation
    /// flags so all variants share one checkpoint layout.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ParamStore> {
        let c = &self.config;
        let d = c.hidden_dim;
        let mut store = ParamStore::new();
        BiGruParams::register(&mut store, GRU, c.dims.text, d, d, rng)?;
        FusionParams::register(&mut store, FUSION, c.dims.audio, c.dims.video, d, rng)?;
        sgcode::register_blocks(&mut store, SGCODE, c.blocks, d, rng)?;
        for layer in 0..c.attention_layers {
            AttentionParams::register(&mut store, &attention_prefix(layer), d, c.heads, rng)?;
        }
        PromptGenParams::register(&mut store, PGN, d, c.bank_size, rng)?;
        for k in 0..c.blocks {
            DgcodeLayer::new(DGCODE, k).register(&mut store, d, rng)?;
        }
        ClassifierParams::new(HEAD).register(&mut store, d, c.num_classes, rng)?;
        Ok(store)
    }

    /// Static log weights `Ω_s`, one per block.
    pub fn static_log_weights(&self, store: &ParamStore) -> Result<Vec<Matrix>> {
        (0..self.config.blocks)
            .map(|b| store.value(&sgcode::param_name(SGCODE, b)).cloned())
            .collect()
    }

    fn bind(&self, tape: &mut Tape, store: &ParamStore) -> Result<Bound> {
        let c = &self.config;
        Ok(Bound {
            gru: BiGruParams::bind(tape, store, GRU)?,
            fusion: FusionParams::bind(tape, store, FUSION)?,
            omega_s: (0..c.blocks)
                .map(|b| tape.param(store, &sgcode::param_name(SGCODE, b)))
                .collect::<Result<_>>()?,
            attention: (0..c.attention_layers)
                .map(|l| AttentionParams::bind(tape, store, &attention_prefix(l), c.heads))
                .collect::<Result<_>>()?,
            pgn: PromptGenParams::bind(tape, store, PGN)?,
        })
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        batch: &[&Conversation],
        mode: Mode,
    ) -> Result<BatchForward> {
        let c = &self.config;
        if batch.is_empty() {
            return Err(invalid("empty batch"));
        }
        let bound = self.bind(tape, store)?;
        let graph_cfg = c.graph_config();

        struct PerConversation {
            log_adj: Var,
            static_out: Vec<Var>,
            omega_d: Var,
        }
        let mut per = Vec::with_capacity(batch.len());
        let mut fused_rows = Vec::with_capacity(batch.len());
        let mut traces = Vec::with_capacity(batch.len());
        let mut offset = 0;
        for conv in batch {
            conv.validate(&c.dims, c.num_classes)?;
            let x_t = tape.constant(conv.text_matrix());
            let x_a = tape.constant(conv.audio_matrix());
            let x_v = tape.constant(conv.video_matrix());
            let h_t = bigru_forward(tape, x_t, &bound.gru);
            let h_a = project_modality(tape, x_a, Modality::Audio, &bound.fusion);
            let h_v = project_modality(tape, x_v, Modality::Video, &bound.fusion);
            let (h_f, weights) = fuse_attention(tape, h_t, h_a, h_v, &bound.fusion);

            // The graph depends on h_f only through a threshold, so it is a constant.
            let graph = build_graph(tape.value(h_f), &conv.speakers(), &graph_cfg)?;
            let log_adj = tape.constant(graph.adjacency_log.clone());

            let mut h = h_f;
            let mut static_out = Vec::with_capacity(c.blocks);
            for &omega in &bound.omega_s {
                h = sgcode_on_tape(tape, log_adj, h, omega, c.t_end, c.step).map_err(|e| located(e, &conv.id))?;
                static_out.push(h);
            }

            let (g, attention) = if c.ablation.giv {
                global_information_vector(tape, h, &bound.attention)
            } else {
                (tape.constant(Matrix::zeros(1, c.hidden_dim)), Vec::new())
            };
            let s = if c.ablation.pgn {
                generate_selection(tape, g, &bound.pgn)
            } else {
                tape.constant(Matrix::filled(1, c.bank_size, 0.5))
            };
            let omega_d = compose_dynamic_log_weight(tape, s, &bound.pgn);

            let n = conv.len();
            traces.push(ConversationTrace {
                id: conv.id.clone(),
                rows: offset..offset + n,
                fusion_weights: tape.value(weights).clone(),
                edge_count: graph.edge_count(),
                regularized_spectrum: graph.regularized_spectrum.clone(),
                giv: tape.value(g).clone(),
                attention: attention.iter().map(|&a| tape.value(a).clone()).collect(),
                selection: tape.value(s).clone(),
                omega_d: tape.value(omega_d).clone(),
                omega_s: bound.omega_s.iter().map(|&o| tape.value(o).clone()).collect(),
            });
            offset += n;
            fused_rows.push(h_f);
            per.push(PerConversation {
                log_adj,
                static_out,
                omega_d,
            });
        }

        let mut updates = Vec::new();
        let last_static: Vec<Var> = per.iter().map(|p| p.static_out[c.blocks - 1]).collect();
        let u_final = if c.ablation.dgcode {
            let mut u = last_static;
            for k in 0..c.blocks {
                let layer = DgcodeLayer::new(DGCODE, k);
                let h_k: Vec<Var> = per.iter().map(|p| p.static_out[k]).collect();
                let h_all = tape.concat_rows(&h_k);
                let u_all = tape.concat_rows(&u);
                let (x_all, update) = layer.block_input(tape, store, h_all, u_all, mode)?;
                updates.extend(update);
                let mut next = Vec::with_capacity(per.len());
                for (p, trace) in per.iter().zip(&traces) {
                    let x = tape.slice_rows(x_all, trace.rows.start, trace.rows.len());
                    let out = dgcode_on_tape(tape, p.log_adj, x, p.omega_d, c.t_end, c.step)
                        .map_err(|e| located(e, &trace.id))?;
                    next.push(out);
                }
                u = next;
            }
            tape.concat_rows(&u)
        } else {
            tape.concat_rows(&last_static)
        };

        let h_all = tape.concat_rows(&fused_rows);
        let (out, update) = ClassifierParams::new(HEAD).classify(tape, store, h_all, u_final, mode)?;
        updates.extend(update);
        Ok(BatchForward {
            probs: out.probs,
            features: out.features,
            traces,
            updates,
        })
    }

    /// Forward pass plus mean cross-entropy over every labeled utterance.
    pub fn loss(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        batch: &[&Conversation],
        mode: Mode,
    ) -> Result<(Var, BatchForward)> {
        let out = self.forward(tape, store, batch, mode)?;
        let labels = batch_labels(batch)?;
        let loss = tape.nll(out.probs, &labels, PROBABILITY_FLOOR)?;
        if !tape.scalar(loss).is_finite() {
            return Err(Error::NonFinite("training loss"));
        }
        Ok((loss, out))
    }
}

/// Concatenated labels of a batch; every utterance must be labeled.
pub fn batch_labels(batch: &[&Conversation]) -> Result<Vec<usize>> {
    let mut labels = Vec::new();
    for conv in batch {
        let l = conv
            .labels()
            .ok_or_else(|| invalid(format!("conversation `{}` has unlabeled utterances", conv.id)))?;
        labels.extend(l);
    }
    Ok(labels)
}

/// Attaches the conversation id to a blow-up so the trainer can report it.
fn located(err: Error, id: &str) -> Error {
    match err {
        Error::Blowup { time, norm } => Error::ConversationBlowup {
            conversation: String::from(id),
            time,
            norm,
        },
        other => other,
    }
}
