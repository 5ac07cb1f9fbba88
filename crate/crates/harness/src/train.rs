//! Mini-batch AdamW training with early stopping on validation WF1.
//!
//! Reproducibility rules: separate ChaCha streams seed the parameters, the
//! split and the batch order; batch membership is fixed once and only the
//! order of batches is reshuffled per epoch; per-batch losses are reduced in
//! batch-id order. Identical `(config, dataset)` give bit-identical runs.

use std::io::Write;

use dfgcn_core::batchnorm::Mode;
use dfgcn_core::conversation::Conversation;
use dfgcn_core::metrics::Metrics;
use dfgcn_core::model::Model;
use dfgcn_core::params::ParamStore;
use dfgcn_core::tape::Tape;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::error::{HarnessError, Result};
use crate::evaluate::evaluate;

const PARAM_STREAM: u64 = 0;
const SPLIT_STREAM: u64 = 1;
const BATCH_STREAM: u64 = 2;

pub fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Conversation indices of each side, ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

impl Split {
    pub fn select<'a>(indices: &[usize], data: &'a [Conversation]) -> Vec<&'a Conversation> {
        indices.iter().map(|&i| &data[i]).collect()
    }
}

/// Seeded split by conversation; both sides are non-empty when `n ≥ 2`.
pub fn split_by_conversation(n: usize, val_fraction: f64, seed: u64) -> Result<Split> {
    if n < 2 {
        return Err(HarnessError::Config("need at least two conversations to split".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, SPLIT_STREAM));
    let n_val = ((n as f64 * val_fraction).round() as usize).clamp(1, n - 1);
    let mut val = order[..n_val].to_vec();
    let mut train = order[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok(Split { train, val })
}

pub fn init_params(cfg: &RunConfig) -> Result<ParamStore> {
    Ok(Model::new(cfg.model_config())?.init(&mut stream(cfg.seed, PARAM_STREAM))?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Inference-mode metrics on the training split after the epoch.
    pub train: Metrics,
    pub val: Metrics,
}

#[derive(Clone, Debug, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Index into `epochs` of the returned checkpoint.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl History {
    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch]
    }

    pub fn last(&self) -> &EpochRecord {
        self.epochs.last().expect("at least one epoch")
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "train_loss", "train_acc", "train_wf1", "val_acc", "val_wa", "val_wf1", "best"])?;
        for (i, e) in self.epochs.iter().enumerate() {
            w.write_record([
                e.epoch.to_string(),
                format!("{:?}", e.train_loss),
                format!("{:?}", e.train.acc),
                format!("{:?}", e.train.wf1),
                format!("{:?}", e.val.acc),
                format!("{:?}", e.val.wa),
                format!("{:?}", e.val.wf1),
                (i == self.best_epoch).to_string(),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation WF1.
    pub checkpoint: Checkpoint,
    pub history: History,
    pub split: Split,
}

/// Fixed batch membership: one seeded permutation, chunked.
pub fn make_batches(train: &[usize], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order = train.to_vec();
    order.shuffle(rng);
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}

/// One pass over `batches` in the given order; returns per-batch losses
/// indexed by batch id.
pub fn run_epoch(
    model: &Model,
    store: &mut ParamStore,
    cfg: &RunConfig,
    data: &[Conversation],
    batches: &[Vec<usize>],
    order: &[usize],
) -> Result<Vec<f64>> {
    let opt = cfg.optimizer();
    let mut losses = vec![0.0; batches.len()];
    for &b in order {
        let batch = Split::select(&batches[b], data);
        let mut tape = Tape::new();
        let (loss, out) = model.loss(&mut tape, store, &batch, Mode::Train)?;
        let grads = tape.backward(loss);
        tape.accumulate_param_grads(&grads, store)?;
        store.adamw_step(&opt);
        for update in &out.updates {
            update.apply(store)?;
        }
        losses[b] = tape.scalar(loss);
    }
    Ok(losses)
}

pub fn train(cfg: &RunConfig, data: &[Conversation]) -> Result<TrainOutcome> {
    train_with_observer(cfg, data, |_| {})
}

/// As [`train`], calling `observer` after every epoch.
pub fn train_with_observer<F: FnMut(&EpochRecord)>(
    cfg: &RunConfig,
    data: &[Conversation],
    mut observer: F,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model = Model::new(cfg.model_config())?;
    let split = split_by_conversation(data.len(), cfg.val_fraction, cfg.seed)?;
    let train_set = Split::select(&split.train, data);
    let val_set = Split::select(&split.val, data);
    let mut store = init_params(cfg)?;
    let mut batch_rng = stream(cfg.seed, BATCH_STREAM);
    let batches = make_batches(&split.train, cfg.batch_size, &mut batch_rng);
    let mut order: Vec<usize> = (0..batches.len()).collect();

    let mut epochs = Vec::new();
    let mut best: Option<(usize, f64, ParamStore)> = None;
    let mut since_best = 0;
    let mut stopped_early = false;
    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut batch_rng);
        let losses = run_epoch(&model, &mut store, cfg, data, &batches, &order)?;
        let train_loss = losses.iter().sum::<f64>() / losses.len() as f64;
        let train_metrics = evaluate(cfg, &store, &train_set)?.metrics;
        let val_metrics = evaluate(cfg, &store, &val_set)?.metrics;
        let (Some(train), Some(val)) = (train_metrics, val_metrics) else {
            return Err(HarnessError::Config("training data must be labeled".into()));
        };
        let record = EpochRecord {
            epoch,
            train_loss,
            train,
            val,
        };
        observer(&record);
        let wf1 = record.val.wf1;
        epochs.push(record);
        if best.as_ref().is_none_or(|(_, b, _)| wf1 > *b) {
            best = Some((epochs.len() - 1, wf1, store.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience > 0 && since_best >= cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }
    let (best_epoch, _, best_store) = best.expect("max_epochs is positive");
    Ok(TrainOutcome {
        checkpoint: Checkpoint::new(best_store),
        history: History {
            epochs,
            best_epoch,
            stopped_early,
        },
        split,
    })
}
