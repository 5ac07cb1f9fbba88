use crate::matrix::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    SoftmaxRows,
    Relu,
    Sigmoid,
    Tanh,
}

pub fn apply(x: &Matrix, kind: Activation) -> Matrix {
    match kind {
        Activation::SoftmaxRows => softmax_rows(x),
        Activation::Relu => x.map(relu),
        Activation::Sigmoid => x.map(sigmoid),
        Activation::Tanh => x.map(libm::tanh),
    }
}

#[inline]
pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Logistic function, evaluated on the branch that cannot overflow.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = libm::exp(*v - max);
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_softmax() {
        let s = softmax_rows(&Matrix::zeros(1, 3));
        for &v in s.as_slice() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn scalar_activations() {
        assert_eq!(sigmoid(0.0), 0.5);
        let r = apply(&Matrix::row_vector(&[-1.0, 2.0]), Activation::Relu);
        assert_eq!(r.as_slice(), &[0.0, 2.0]);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.0, 0.0, 0.0]), 0);
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }

    proptest! {
        #[test]
        fn softmax_rows_normalized(values in proptest::collection::vec(-50.0f64..50.0, 12)) {
            let x = Matrix::from_vec(3, 4, values).unwrap();
            let s = softmax_rows(&x);
            for r in 0..3 {
                let row = s.row(r);
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(row.iter().all(|&p| p > 0.0 && p < 1.0 || p == 1.0));
            }
        }

        #[test]
        fn softmax_shift_invariant(
            values in proptest::collection::vec(-20.0f64..20.0, 5),
            shift in -100.0f64..100.0,
        ) {
            let x = Matrix::row_vector(&values);
            let a = softmax_rows(&x);
            let b = softmax_rows(&x.map(|v| v + shift));
            prop_assert_eq!(argmax(a.row(0)), argmax(b.row(0)));
            prop_assert!(a.max_abs_diff(&b) < 1e-12);
        }

        #[test]
        fn sigmoid_relu_ranges(x in -30.0f64..30.0) {
            let s = sigmoid(x);
            prop_assert!(s > 0.0 && s < 1.0);
            prop_assert!(relu(x) >= 0.0);
        }
    }
}
