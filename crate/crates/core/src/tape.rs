//! Reverse-mode differentiation over a recorded tape of matrix operations.
//!
//! Every forward computation that needs gradients is written against a
//! [`Tape`]: leaves are either constants or named parameters pulled from a
//! [`ParamStore`], and each operation appends one node holding its value.
//! [`Tape::backward`] walks the nodes in reverse and returns the gradient of
//! a `1×1` output with respect to every node.
//!
//! The tape is append-only, so node indices are a valid topological order.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::activation::{relu, sigmoid, softmax_rows};
use crate::batchnorm::BatchStats;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::params::ParamStore;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Hadamard(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    MulCol(usize, usize),
    Transpose(usize),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    SoftmaxRows(usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceRows { src: usize, start: usize },
    SliceCols { src: usize, start: usize },
    MeanRows(usize),
    Sum(usize),
    Reshape(usize),
    /// Train-mode standardization; `inv_std` is per feature.
    Standardize { src: usize, inv_std: Vec<f64> },
    /// `−(1/n) Σ ln max(p[i, label_i], floor)`
    Nll { src: usize, labels: Vec<usize>, floor: f64 },
}

struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(usize, String)>,
}

/// Gradients of one scalar output with respect to every tape node.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// `None` when the node does not influence the output.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        debug_assert!(value.is_finite(), "non-finite value recorded for {op:?}");
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.shape(), (1, 1), "scalar() on non-scalar node");
        m[(0, 0)]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Records a trainable leaf bound to `name` in `store`.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let value = store.value(name)?.clone();
        let v = self.push(value, Op::Leaf);
        self.params.push((v.0, String::from(name)));
        Ok(v)
    }

    /// Parameter leaves recorded so far, in recording order.
    pub fn params(&self) -> impl Iterator<Item = (Var, &str)> {
        self.params.iter().map(|(i, n)| (Var(*i), n.as_str()))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        self.push(value, Op::MatMul(a.0, b.0))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).add(self.value(b));
        self.push(value, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).sub(self.value(b));
        self.push(value, Op::Sub(a.0, b.0))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).hadamard(self.value(b));
        self.push(value, Op::Hadamard(a.0, b.0))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scale(s);
        self.push(value, Op::Scale(a.0, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x + s);
        self.push(value, Op::AddScalar(a.0))
    }

    /// `1 − a`
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_scalar(neg, 1.0)
    }

    /// Broadcast-adds a `1×cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let value = self.value(a).add_row(self.value(row));
        self.push(value, Op::AddRow(a.0, row.0))
    }

    /// Broadcast-multiplies every row of `a` by a `1×cols` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let value = self.value(a).mul_row(self.value(row));
        self.push(value, Op::MulRow(a.0, row.0))
    }

    /// Scales row `i` of `a` by entry `i` of the `rows×1` column `col`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let (am, cm) = (self.value(a), self.value(col));
        assert!(
            cm.shape() == (am.rows(), 1),
            "mul_col: shape mismatch {:?} vs {:?}",
            am.shape(),
            cm.shape()
        );
        let value = Matrix::from_fn(am.rows(), am.cols(), |r, c| am[(r, c)] * cm[(r, 0)]);
        self.push(value, Op::MulCol(a.0, col.0))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(libm::tanh);
        self.push(value, Op::Tanh(a.0))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(relu);
        self.push(value, Op::Relu(a.0))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = softmax_rows(self.value(a));
        self.push(value, Op::SoftmaxRows(a.0))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Matrix> = parts.iter().map(|v| self.value(*v)).collect();
        let value = Matrix::concat_cols(&mats);
        self.push(value, Op::ConcatCols(parts.iter().map(|v| v.0).collect()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Matrix> = parts.iter().map(|v| self.value(*v)).collect();
        let value = Matrix::concat_rows(&mats);
        self.push(value, Op::ConcatRows(parts.iter().map(|v| v.0).collect()))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).slice_rows(start, len);
        self.push(value, Op::SliceRows { src: a.0, start })
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).slice_cols(start, len);
        self.push(value, Op::SliceCols { src: a.0, start })
    }

    pub fn row(&mut self, a: Var, r: usize) -> Var {
        self.slice_rows(a, r, 1)
    }

    /// Column means as a `1×cols` row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let value = self.value(a).mean_rows();
        self.push(value, Op::MeanRows(a.0))
    }

    /// Sum of all entries as `1×1`.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::filled(1, 1, self.value(a).sum());
        self.push(value, Op::Sum(a.0))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let value = self.value(a).clone().reshape(rows, cols);
        self.push(value, Op::Reshape(a.0))
    }

    /// Standardizes each column with the batch mean and biased variance.
    /// Returns the standardized node and the batch statistics used.
    pub fn standardize(&mut self, a: Var, epsilon: f64) -> Result<(Var, BatchStats)> {
        let stats = BatchStats::of(self.value(a))?;
        let value = stats.normalize(self.value(a), epsilon);
        let inv_std = stats
            .var
            .as_slice()
            .iter()
            .map(|v| 1.0 / libm::sqrt(v + epsilon))
            .collect();
        Ok((self.push(value, Op::Standardize { src: a.0, inv_std }), stats))
    }

    /// Mean negative log-likelihood of `labels` under the row distributions in `probs`.
    pub fn nll(&mut self, probs: Var, labels: &[usize], floor: f64) -> Result<Var> {
        let p = self.value(probs);
        if p.rows() != labels.len() || p.rows() == 0 {
            return Err(Error::ShapeMismatch {
                op: "nll",
                left: p.shape(),
                right: (labels.len(), 1),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= p.cols()) {
            return Err(crate::error::invalid(alloc::format!(
                "label {bad} out of range for {} classes",
                p.cols()
            )));
        }
        let n = labels.len() as f64;
        let total: f64 = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| libm::log(p[(i, l)].max(floor)))
            .sum();
        let value = Matrix::filled(1, 1, -total / n);
        Ok(self.push(
            value,
            Op::Nll {
                src: probs.0,
                labels: labels.to_vec(),
                floor,
            },
        ))
    }

    /// Reverse sweep from a `1×1` output.
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(self.shape(output), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            let y = &node.value;
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let da = g.matmul_t(&self.nodes[*b].value);
                    let db = self.nodes[*a].value.t_matmul(&g);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.scale(-1.0));
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::Hadamard(a, b) => {
                    let da = g.hadamard(&self.nodes[*b].value);
                    let db = g.hadamard(&self.nodes[*a].value);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, g.scale(*s)),
                Op::AddScalar(a) => accumulate(&mut grads, *a, g.clone()),
                Op::AddRow(a, row) => {
                    accumulate(&mut grads, *row, g.sum_rows());
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::MulRow(a, row) => {
                    let da = g.mul_row(&self.nodes[*row].value);
                    let drow = g.hadamard(&self.nodes[*a].value).sum_rows();
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *row, drow);
                }
                Op::MulCol(a, col) => {
                    let av = &self.nodes[*a].value;
                    let cv = &self.nodes[*col].value;
                    let da = Matrix::from_fn(g.rows(), g.cols(), |r, c| g[(r, c)] * cv[(r, 0)]);
                    let dcol = Matrix::from_fn(g.rows(), 1, |r, _| {
                        g.row(r).iter().zip(av.row(r)).map(|(x, y)| x * y).sum()
                    });
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *col, dcol);
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, g.transpose()),
                Op::Sigmoid(a) => {
                    accumulate(&mut grads, *a, g.zip_map(y, |g, y| g * y * (1.0 - y)));
                }
                Op::Tanh(a) => {
                    accumulate(&mut grads, *a, g.zip_map(y, |g, y| g * (1.0 - y * y)));
                }
                Op::Relu(a) => {
                    let x = &self.nodes[*a].value;
                    accumulate(
                        &mut grads,
                        *a,
                        g.zip_map(x, |g, x| if x > 0.0 { g } else { 0.0 }),
                    );
                }
                Op::SoftmaxRows(a) => {
                    let mut dx = Matrix::zeros(g.rows(), g.cols());
                    for r in 0..g.rows() {
                        let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(g, y)| g * y).sum();
                        for (c, d) in dx.row_mut(r).iter_mut().enumerate() {
                            *d = y[(r, c)] * (g[(r, c)] - dot);
                        }
                    }
                    accumulate(&mut grads, *a, dx);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let cols = self.nodes[p].value.cols();
                        accumulate(&mut grads, p, g.slice_cols(offset, cols));
                        offset += cols;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let rows = self.nodes[p].value.rows();
                        accumulate(&mut grads, p, g.slice_rows(offset, rows));
                        offset += rows;
                    }
                }
                Op::SliceRows { src, start } => {
                    let (rows, cols) = self.nodes[*src].value.shape();
                    let mut d = Matrix::zeros(rows, cols);
                    for r in 0..g.rows() {
                        d.row_mut(start + r).copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *src, d);
                }
                Op::SliceCols { src, start } => {
                    let (rows, cols) = self.nodes[*src].value.shape();
                    let mut d = Matrix::zeros(rows, cols);
                    for r in 0..rows {
                        d.row_mut(r)[*start..start + g.cols()].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *src, d);
                }
                Op::MeanRows(a) => {
                    let rows = self.nodes[*a].value.rows();
                    let scaled = g.scale(1.0 / rows as f64);
                    let d = Matrix::concat_rows(&vec![&scaled; rows]);
                    accumulate(&mut grads, *a, d);
                }
                Op::Sum(a) => {
                    let (rows, cols) = self.nodes[*a].value.shape();
                    accumulate(&mut grads, *a, Matrix::filled(rows, cols, g[(0, 0)]));
                }
                Op::Reshape(a) => {
                    let (rows, cols) = self.nodes[*a].value.shape();
                    accumulate(&mut grads, *a, g.clone().reshape(rows, cols));
                }
                Op::Standardize { src, inv_std } => {
                    // dx = inv_std/n · (n·g − Σg − x̂·Σ(g·x̂)), column-wise.
                    let n = y.rows() as f64;
                    let sum_g = g.sum_rows();
                    let sum_gy = g.hadamard(y).sum_rows();
                    let d = Matrix::from_fn(y.rows(), y.cols(), |r, c| {
                        inv_std[c] / n * (n * g[(r, c)] - sum_g[(0, c)] - y[(r, c)] * sum_gy[(0, c)])
                    });
                    accumulate(&mut grads, *src, d);
                }
                Op::Nll { src, labels, floor } => {
                    let p = &self.nodes[*src].value;
                    let n = labels.len() as f64;
                    let mut d = Matrix::zeros(p.rows(), p.cols());
                    for (i, &l) in labels.iter().enumerate() {
                        let pi = p[(i, l)];
                        if pi > *floor {
                            d[(i, l)] = -g[(0, 0)] / (n * pi);
                        }
                    }
                    accumulate(&mut grads, *src, d);
                }
            }
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    /// Adds the gradient of every recorded parameter leaf into `store`.
    pub fn accumulate_param_grads(&self, grads: &Gradients, store: &mut ParamStore) -> Result<()> {
        for (idx, name) in &self.params {
            if let Some(g) = grads.get(Var(*idx)) {
                store.accumulate_grad(name, g)?;
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Matrix>], idx: usize, g: Matrix) {
    match &mut grads[idx] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
