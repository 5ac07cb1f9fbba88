//! Emotion classifier head and cross-entropy loss.
//!
//! `v = [h | BN(u)]`, `r = relu(v W_r + b_r)`, `p = softmax(r W_c + b_c)`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::activation::argmax;
use crate::batchnorm::{BatchNormLayer, Mode, RunningUpdate};
use crate::error::{invalid, Error, Result};
use crate::matrix::Matrix;
use crate::params::{xavier, ParamStore};
use crate::tape::{Tape, Var};

/// Probability floor inside the log of the loss.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassifierParams {
    pub bn: BatchNormLayer,
    prefix: String,
}

#[derive(Clone, Copy, Debug)]
pub struct ClassifierOutput {
    /// Pre-logit features `r`.
    pub features: Var,
    pub probs: Var,
}

impl ClassifierParams {
    pub fn new(prefix: &str) -> Self {
        Self {
            bn: BatchNormLayer::new(format!("{prefix}.bn")),
            prefix: String::from(prefix),
        }
    }

    pub fn register<R: Rng + ?Sized>(
        &self,
        store: &mut ParamStore,
        hidden: usize,
        num_classes: usize,
        rng: &mut R,
    ) -> Result<()> {
        self.bn.register(store, hidden)?;
        let p = &self.prefix;
        store.insert(format!("{p}.w_r"), xavier(2 * hidden, hidden, rng))?;
        store.insert(format!("{p}.b_r"), Matrix::zeros(1, hidden))?;
        store.insert(format!("{p}.w_c"), xavier(hidden, num_classes, rng))?;
        store.insert(format!("{p}.b_c"), Matrix::zeros(1, num_classes))?;
        Ok(())
    }

    pub fn classify(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        h: Var,
        u: Var,
        mode: Mode,
    ) -> Result<(ClassifierOutput, Option<RunningUpdate>)> {
        if tape.shape(h).0 != tape.shape(u).0 {
            return Err(Error::ShapeMismatch {
                op: "classify",
                left: tape.shape(h),
                right: tape.shape(u),
            });
        }
        let (un, update) = self.bn.forward(tape, store, u, mode)?;
        let v = tape.concat_cols(&[h, un]);
        let p = &self.prefix;
        let w_r = tape.param(store, &format!("{p}.w_r"))?;
        let b_r = tape.param(store, &format!("{p}.b_r"))?;
        let w_c = tape.param(store, &format!("{p}.w_c"))?;
        let b_c = tape.param(store, &format!("{p}.b_c"))?;
        let r = tape.matmul(v, w_r);
        let r = tape.add_row(r, b_r);
        let features = tape.relu(r);
        let logits = tape.matmul(features, w_c);
        let logits = tape.add_row(logits, b_c);
        let probs = tape.softmax_rows(logits);
        Ok((ClassifierOutput { features, probs }, update))
    }
}

/// Row-wise argmax; ties go to the lowest class.
pub fn predict_labels(probs: &Matrix) -> Vec<usize> {
    (0..probs.rows()).map(|r| argmax(probs.row(r))).collect()
}

/// `−(1/n) Σ_i ln max(p[i, y_i], 1e-12)`.
pub fn cross_entropy(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    if probs.rows() != labels.len() || labels.is_empty() {
        return Err(Error::ShapeMismatch {
            op: "cross_entropy",
            left: probs.shape(),
            right: (labels.len(), 1),
        });
    }
    let mut total = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        if l >= probs.cols() {
            return Err(invalid(format!("label {l} out of range for {} classes", probs.cols())));
        }
        total += libm::log(probs[(i, l)].max(PROBABILITY_FLOOR));
    }
    Ok(-total / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::softmax_rows;
    use crate::params::{normal, AdamW};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_logits_tie_to_zero() {
        let p = softmax_rows(&Matrix::zeros(2, 4));
        assert!(p.as_slice().iter().all(|&x| (x - 0.25).abs() < 1e-15));
        assert_eq!(predict_labels(&p), alloc::vec![0, 0]);
        assert!((cross_entropy(&p, &[1, 3]).unwrap() - libm::log(4.0)).abs() < 1e-15);
        assert!((libm::log(4.0) - 1.3863).abs() < 1e-4);
    }

    #[test]
    fn confident_logits() {
        let p = softmax_rows(&Matrix::row_vector(&[0.0, 10.0]));
        let p0 = 1.0 / (1.0 + libm::exp(10.0));
        assert!((p[(0, 0)] - p0).abs() < 1e-18);
        assert!((p[(0, 0)] - 4.5e-5).abs() < 1e-6);
        assert!((p[(0, 1)] - 0.99995).abs() < 1e-5);
        assert_eq!(predict_labels(&p), alloc::vec![1]);
    }

    #[test]
    fn one_hot_predictions_have_floor_loss() {
        let p = Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        assert!(cross_entropy(&p, &[0, 2]).unwrap() < 1e-11);
        // The floor bounds the loss of a confidently wrong prediction.
        let wrong = cross_entropy(&p, &[1, 2]).unwrap();
        assert!((wrong - 0.5 * -libm::log(PROBABILITY_FLOOR)).abs() < 1e-12);
    }

    #[test]
    fn loss_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = softmax_rows(&normal(30, 5, 2.0, &mut rng));
        let labels: Vec<usize> = (0..30).map(|i| (i * 7) % 5).collect();
        let mut acc = 0.0;
        for i in 0..30 {
            acc -= p[(i, labels[i])].ln();
        }
        assert!((cross_entropy(&p, &labels).unwrap() - acc / 30.0).abs() < 1e-12);

        let mut tape = Tape::new();
        let pv = tape.constant(p.clone());
        let l = tape.nll(pv, &labels, PROBABILITY_FLOOR).unwrap();
        assert!((tape.scalar(l) - acc / 30.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_labels_rejected() {
        let p = softmax_rows(&Matrix::zeros(1, 3));
        assert!(cross_entropy(&p, &[3]).is_err());
        assert!(cross_entropy(&p, &[]).is_err());
    }

    fn head_store(hidden: usize, classes: usize, seed: u64) -> (ClassifierParams, ParamStore) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let head = ClassifierParams::new("head");
        let mut store = ParamStore::new();
        head.register(&mut store, hidden, classes, &mut rng).unwrap();
        (head, store)
    }

    #[test]
    fn classify_rows_sum_to_one() {
        let (head, store) = head_store(4, 6, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for mode in [Mode::Train, Mode::Infer] {
            let mut tape = Tape::new();
            let h = tape.constant(normal(9, 4, 1.0, &mut rng));
            let u = tape.constant(normal(9, 4, 1.0, &mut rng));
            let (out, update) = head.classify(&mut tape, &store, h, u, mode).unwrap();
            assert_eq!(update.is_some(), mode == Mode::Train);
            let p = tape.value(out.probs);
            assert_eq!(p.shape(), (9, 6));
            for r in 0..9 {
                assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            assert!(tape.value(out.features).as_slice().iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn overfits_single_sample() {
        let (head, mut store) = head_store(4, 3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (h, u) = (normal(2, 4, 1.0, &mut rng), normal(2, 4, 1.0, &mut rng));
        let labels = [2usize, 2];
        let opt = AdamW {
            lr: 0.05,
            ..AdamW::default()
        };
        let mut losses = Vec::new();
        for _ in 0..=50 {
            let mut tape = Tape::new();
            let (hv, uv) = (tape.constant(h.clone()), tape.constant(u.clone()));
            let (out, _) = head.classify(&mut tape, &store, hv, uv, Mode::Train).unwrap();
            let loss = tape.nll(out.probs, &labels, PROBABILITY_FLOOR).unwrap();
            losses.push(tape.scalar(loss));
            let grads = tape.backward(loss);
            tape.accumulate_param_grads(&grads, &mut store).unwrap();
            store.adamw_step(&opt);
        }
        assert!(losses[50] < 0.1 * losses[0], "{} -> {}", losses[0], losses[50]);
    }
}
