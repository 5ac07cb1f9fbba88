//! Per-feature batch normalization over the rows of a matrix.

use alloc::format;
use alloc::string::String;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::params::ParamStore;
use crate::tape::{Tape, Var};

pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_EPSILON: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Running statistics decay as `running = momentum·running + (1−momentum)·batch`.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState {
    pub gamma: Matrix,
    pub beta: Matrix,
    pub running_mean: Matrix,
    pub running_var: Matrix,
    pub momentum: f64,
    pub epsilon: f64,
}

impl BatchNormState {
    pub fn new(features: usize) -> Self {
        Self {
            gamma: Matrix::filled(1, features, 1.0),
            beta: Matrix::zeros(1, features),
            running_mean: Matrix::zeros(1, features),
            running_var: Matrix::filled(1, features, 1.0),
            momentum: DEFAULT_MOMENTUM,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.cols()
    }

    pub fn forward(&mut self, x: &Matrix, mode: Mode) -> Result<Matrix> {
        if x.cols() != self.features() {
            return Err(Error::ShapeMismatch {
                op: "batch_norm",
                left: x.shape(),
                right: self.gamma.shape(),
            });
        }
        let normalized = match mode {
            Mode::Train => {
                let stats = BatchStats::of(x)?;
                let out = stats.normalize(x, self.epsilon);
                stats.update_running(
                    &mut self.running_mean,
                    &mut self.running_var,
                    self.momentum,
                );
                out
            }
            Mode::Infer => normalize_with(x, &self.running_mean, &self.running_var, self.epsilon),
        };
        Ok(normalized.mul_row(&self.gamma).add_row(&self.beta))
    }
}

/// Column mean and biased variance of one training batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub rows: usize,
    pub mean: Matrix,
    pub var: Matrix,
}

impl BatchStats {
    pub fn of(x: &Matrix) -> Result<Self> {
        if x.rows() < 2 {
            return Err(Error::DegenerateBatch { rows: x.rows() });
        }
        let mean = x.mean_rows();
        let mut var = Matrix::zeros(1, x.cols());
        for r in 0..x.rows() {
            for (c, (v, m)) in var
                .as_mut_slice()
                .iter_mut()
                .zip(mean.as_slice())
                .enumerate()
            {
                let d = x[(r, c)] - m;
                *v += d * d;
            }
        }
        let n = x.rows() as f64;
        var = var.map(|v| v / n);
        Ok(Self {
            rows: x.rows(),
            mean,
            var,
        })
    }

    pub fn normalize(&self, x: &Matrix, epsilon: f64) -> Matrix {
        normalize_with(x, &self.mean, &self.var, epsilon)
    }

    /// Running variance tracks the unbiased estimate.
    pub fn update_running(&self, mean: &mut Matrix, var: &mut Matrix, momentum: f64) {
        let n = self.rows as f64;
        let unbiased = self.var.scale(n / (n - 1.0));
        *mean = mean.scale(momentum).add(&self.mean.scale(1.0 - momentum));
        *var = var.scale(momentum).add(&unbiased.scale(1.0 - momentum));
    }
}

pub fn normalize_with(x: &Matrix, mean: &Matrix, var: &Matrix, epsilon: f64) -> Matrix {
    let inv_std = var.map(|v| 1.0 / libm::sqrt(v + epsilon));
    x.add_row(&mean.scale(-1.0)).mul_row(&inv_std)
}

/// Parameter names of a batch-norm layer registered in a [`ParamStore`]:
/// trainable `gamma`/`beta` and running-statistic buffers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchNormLayer {
    prefix: String,
}

/// Running-statistic update produced by a train-mode forward pass.
///
/// Forward passes never mutate the store; the trainer applies these after
/// the optimizer step so repeated forwards stay bit-identical.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningUpdate {
    pub layer: BatchNormLayer,
    pub stats: BatchStats,
}

impl RunningUpdate {
    pub fn apply(&self, store: &mut ParamStore) -> Result<()> {
        let mut mean = store.buffer(&self.layer.running_mean())?.clone();
        let mut var = store.buffer(&self.layer.running_var())?.clone();
        self.stats.update_running(&mut mean, &mut var, DEFAULT_MOMENTUM);
        store.set_buffer(self.layer.running_mean(), mean);
        store.set_buffer(self.layer.running_var(), var);
        Ok(())
    }
}

impl BatchNormLayer {
    pub fn new(prefix: impl Into<String>) -> Self {
        Self { prefix: prefix.into() }
    }

    pub fn register(&self, store: &mut ParamStore, features: usize) -> Result<()> {
        let init = BatchNormState::new(features);
        store.insert(format!("{}.gamma", self.prefix), init.gamma)?;
        store.insert(format!("{}.beta", self.prefix), init.beta)?;
        store.set_buffer(self.running_mean(), init.running_mean);
        store.set_buffer(self.running_var(), init.running_var);
        Ok(())
    }

    pub fn running_mean(&self) -> String {
        format!("{}.running_mean", self.prefix)
    }

    pub fn running_var(&self) -> String {
        format!("{}.running_var", self.prefix)
    }

    /// Snapshot of this layer as a standalone [`BatchNormState`].
    pub fn state(&self, store: &ParamStore) -> Result<BatchNormState> {
        Ok(BatchNormState {
            gamma: store.value(&format!("{}.gamma", self.prefix))?.clone(),
            beta: store.value(&format!("{}.beta", self.prefix))?.clone(),
            running_mean: store.buffer(&self.running_mean())?.clone(),
            running_var: store.buffer(&self.running_var())?.clone(),
            momentum: DEFAULT_MOMENTUM,
            epsilon: DEFAULT_EPSILON,
        })
    }

    /// Records `γ ⊙ normalize(x) + β` on the tape. In train mode the batch
    /// statistics are differentiated through and returned as an update.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        mode: Mode,
    ) -> Result<(Var, Option<RunningUpdate>)> {
        let gamma = tape.param(store, &format!("{}.gamma", self.prefix))?;
        let beta = tape.param(store, &format!("{}.beta", self.prefix))?;
        if tape.shape(x).1 != tape.shape(gamma).1 {
            return Err(Error::ShapeMismatch {
                op: "batch_norm",
                left: tape.shape(x),
                right: tape.shape(gamma),
            });
        }
        let (normalized, update) = match mode {
            Mode::Train => {
                let (v, stats) = tape.standardize(x, DEFAULT_EPSILON)?;
                let update = RunningUpdate {
                    layer: self.clone(),
                    stats,
                };
                (v, Some(update))
            }
            Mode::Infer => {
                let mean = store.buffer(&self.running_mean())?;
                let var = store.buffer(&self.running_var())?;
                let shift = tape.constant(mean.scale(-1.0));
                let inv_std = tape.constant(var.map(|v| 1.0 / libm::sqrt(v + DEFAULT_EPSILON)));
                let centered = tape.add_row(x, shift);
                (tape.mul_row(centered, inv_std), None)
            }
        };
        let scaled = tape.mul_row(normalized, gamma);
        Ok((tape.add_row(scaled, beta), update))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_point_standardization() {
        let mut bn = BatchNormState::new(1);
        let out = bn
            .forward(&Matrix::from_rows(&[[1.0], [3.0]]).unwrap(), Mode::Train)
            .unwrap();
        // Variance 1, so the epsilon shrinks the result by ~5e-6.
        assert!((out[(0, 0)] + 1.0).abs() < 1e-5);
        assert!((out[(1, 0)] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn affine_after_normalization() {
        let mut bn = BatchNormState::new(1);
        bn.gamma = Matrix::filled(1, 1, 2.0);
        bn.beta = Matrix::filled(1, 1, 5.0);
        let out = bn
            .forward(&Matrix::from_rows(&[[-1.0], [1.0]]).unwrap(), Mode::Train)
            .unwrap();
        assert!((out[(0, 0)] - 3.0).abs() < 1e-4);
        assert!((out[(1, 0)] - 7.0).abs() < 1e-4);
    }

    #[test]
    fn random_batch_is_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Matrix::from_fn(32, 16, |_, c| rng.random_range(-3.0..3.0) * (c as f64 + 1.0) + c as f64);
        let mut bn = BatchNormState::new(16);
        let out = bn.forward(&x, Mode::Train).unwrap();
        for c in 0..16 {
            let col = out.column(c);
            let mean = col.iter().sum::<f64>() / 32.0;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 32.0;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-4);
        }
        assert!(bn.running_var.as_slice().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn single_row_train_is_degenerate() {
        let mut bn = BatchNormState::new(2);
        assert_eq!(
            bn.forward(&Matrix::zeros(1, 2), Mode::Train),
            Err(Error::DegenerateBatch { rows: 1 })
        );
        assert!(bn.forward(&Matrix::zeros(1, 2), Mode::Infer).is_ok());
    }

    #[test]
    fn infer_mode_is_pure() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut bn = BatchNormState::new(3);
        let warm = Matrix::from_fn(10, 3, |_, _| rng.random_range(-1.0..1.0));
        bn.forward(&warm, Mode::Train).unwrap();
        let before = bn.clone();
        let x = Matrix::from_fn(4, 3, |_, _| rng.random_range(-1.0..1.0));
        let a = bn.forward(&x, Mode::Infer).unwrap();
        let b = bn.forward(&x, Mode::Infer).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
        assert_eq!(bn, before);
    }

    #[test]
    fn running_stats_decay() {
        let mut bn = BatchNormState::new(1);
        bn.forward(&Matrix::from_rows(&[[1.0], [3.0]]).unwrap(), Mode::Train)
            .unwrap();
        assert!((bn.running_mean[(0, 0)] - 0.2).abs() < 1e-15);
        // unbiased variance 2
        assert!((bn.running_var[(0, 0)] - (0.9 + 0.2)).abs() < 1e-15);
    }

    #[test]
    fn tape_layer_matches_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Matrix::from_fn(7, 3, |_, _| rng.random_range(-2.0..2.0));
        let layer = BatchNormLayer::new("bn");
        let mut store = ParamStore::new();
        layer.register(&mut store, 3).unwrap();
        store.set_value("bn.gamma", Matrix::row_vector(&[0.5, 2.0, -1.0])).unwrap();
        store.set_value("bn.beta", Matrix::row_vector(&[0.1, 0.0, 3.0])).unwrap();
        let mut state = layer.state(&store).unwrap();

        for mode in [Mode::Train, Mode::Infer] {
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let (out, update) = layer.forward(&mut tape, &store, xv, mode).unwrap();
            let expected = state.forward(&x, mode).unwrap();
            assert!(tape.value(out).max_abs_diff(&expected) < 1e-14);
            if let Some(u) = update {
                u.apply(&mut store).unwrap();
            }
            assert_eq!(store.buffer("bn.running_mean").unwrap(), &state.running_mean);
            assert_eq!(store.buffer("bn.running_var").unwrap(), &state.running_var);
        }
    }
}
