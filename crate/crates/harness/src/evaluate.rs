//! Inference over a dataset and the CSV artifacts it produces.

use std::io::Write;

use dfgcn_core::batchnorm::Mode;
use dfgcn_core::conversation::Conversation;
use dfgcn_core::head::predict_labels;
use dfgcn_core::metrics::{compute_metrics, Metrics};
use dfgcn_core::model::{ConversationTrace, Model};
use dfgcn_core::params::ParamStore;
use dfgcn_core::tape::Tape;

use crate::config::RunConfig;
use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct UtteranceRecord {
    pub conversation: String,
    pub index: usize,
    pub label: Option<usize>,
    pub prediction: usize,
    pub probs: Vec<f64>,
    /// Pre-logit classifier features.
    pub embedding: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    /// Over labeled utterances; `None` when nothing is labeled.
    pub metrics: Option<Metrics>,
    pub records: Vec<UtteranceRecord>,
    pub traces: Vec<ConversationTrace>,
}

/// Inference-mode pass, one conversation per tape. Batch norm uses running
/// statistics, so results do not depend on how conversations are grouped.
pub fn evaluate(cfg: &RunConfig, store: &ParamStore, data: &[&Conversation]) -> Result<Evaluation> {
    let model = Model::new(cfg.model_config())?;
    let mut records = Vec::new();
    let mut traces = Vec::with_capacity(data.len());
    for conv in data {
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, store, std::slice::from_ref(conv), Mode::Infer)?;
        let probs = tape.value(out.probs);
        let features = tape.value(out.features);
        for (row, pred) in predict_labels(probs).into_iter().enumerate() {
            let u = &conv.utterances[row];
            records.push(UtteranceRecord {
                conversation: conv.id.clone(),
                index: u.index,
                label: u.label,
                prediction: pred,
                probs: probs.row(row).to_vec(),
                embedding: features.row(row).to_vec(),
            });
        }
        traces.extend(out.traces);
    }
    let (truth, pred): (Vec<usize>, Vec<usize>) = records
        .iter()
        .filter_map(|r| r.label.map(|l| (l, r.prediction)))
        .unzip();
    let metrics = if truth.is_empty() {
        None
    } else {
        Some(compute_metrics(&truth, &pred, cfg.num_classes)?)
    };
    Ok(Evaluation {
        metrics,
        records,
        traces,
    })
}

fn fmt(v: f64) -> String {
    // Shortest round-trip representation: deterministic and lossless.
    format!("{v:?}")
}

pub fn metrics_header(num_classes: usize) -> Vec<String> {
    let mut h: Vec<String> = ["run_id", "split", "acc", "wa", "wf1"].iter().map(|s| s.to_string()).collect();
    h.extend((0..num_classes).map(|c| format!("f1_{c}")));
    h
}

pub fn metrics_row(run_id: &str, split: &str, m: &Metrics) -> Vec<String> {
    let mut row = vec![run_id.to_string(), split.to_string(), fmt(m.acc), fmt(m.wa), fmt(m.wf1)];
    row.extend(m.per_class_f1.iter().map(|&f| fmt(f)));
    row
}

/// One header plus one row per `(split, metrics)`.
pub fn write_metrics_csv<W: Write>(out: W, run_id: &str, rows: &[(&str, &Metrics)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let classes = rows.first().map_or(0, |(_, m)| m.num_classes());
    w.write_record(metrics_header(classes))?;
    for (split, m) in rows {
        w.write_record(metrics_row(run_id, split, m))?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Rows are true classes, columns predicted classes.
pub fn write_confusion_csv<W: Write>(out: W, m: &Metrics) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["true\\pred".to_string()];
    header.extend((0..m.num_classes()).map(|c| c.to_string()));
    w.write_record(&header)?;
    for (t, row) in m.confusion.iter().enumerate() {
        let mut rec = vec![t.to_string()];
        rec.extend(row.iter().map(|n| n.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Per-utterance pre-logit features for external projection tools.
pub fn write_embeddings_csv<W: Write>(out: W, records: &[UtteranceRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let dim = records.first().map_or(0, |r| r.embedding.len());
    let mut header: Vec<String> = ["conversation", "index", "label", "prediction"].iter().map(|s| s.to_string()).collect();
    header.extend((0..dim).map(|i| format!("r_{i}")));
    w.write_record(&header)?;
    for r in records {
        let mut rec = vec![
            r.conversation.clone(),
            r.index.to_string(),
            r.label.map_or(String::new(), |l| l.to_string()),
            r.prediction.to_string(),
        ];
        rec.extend(r.embedding.iter().map(|&v| fmt(v)));
        w.write_record(&rec)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
