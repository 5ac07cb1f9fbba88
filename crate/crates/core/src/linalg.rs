//! Eigendecomposition, inversion and spectral matrix functions.
//!
//! Symmetric inputs go through cyclic Jacobi rotations. Every nonsymmetric
//! matrix this crate needs is built by its caller as `P·diag(λ)·P⁻¹`, so the
//! general path takes those factors directly via
//! [`EigenDecomposition::from_factors`] instead of running a QR eigensolver.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

const JACOBI_TOLERANCE: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;
const SYMMETRY_TOLERANCE: f64 = 1e-10;
/// Largest accepted 1-norm condition number of an eigenbasis.
pub const MAX_BASIS_CONDITION: f64 = 1e12;

#[derive(Clone, Debug, PartialEq)]
pub struct EigenDecomposition {
    /// Columns are eigenvectors.
    pub basis: Matrix,
    pub inverse_basis: Matrix,
    /// Sorted descending.
    pub eigenvalues: Vec<f64>,
}

impl EigenDecomposition {
    /// Wraps an explicitly constructed `basis · diag(eigenvalues) · basis⁻¹`.
    pub fn from_factors(basis: Matrix, eigenvalues: Vec<f64>) -> Result<Self> {
        if !basis.is_square() || basis.rows() != eigenvalues.len() {
            return Err(Error::ShapeMismatch {
                op: "from_factors",
                left: basis.shape(),
                right: (eigenvalues.len(), 1),
            });
        }
        if eigenvalues.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("from_factors"));
        }
        let (basis, eigenvalues) = sort_descending(basis, eigenvalues);
        let inverse_basis = inverse(&basis)?;
        let condition = one_norm(&basis) * one_norm(&inverse_basis);
        if !(condition <= MAX_BASIS_CONDITION) {
            return Err(Error::NonDiagonalizable { condition });
        }
        Ok(Self {
            basis,
            inverse_basis,
            eigenvalues,
        })
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `basis · diag(f(λ)) · inverse_basis`
    pub fn map_spectrum(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let n = self.dim();
        let scaled = Matrix::from_fn(n, n, |r, c| self.basis[(r, c)] * f(self.eigenvalues[c]));
        scaled.matmul(&self.inverse_basis)
    }

    pub fn reconstruct(&self) -> Matrix {
        self.map_spectrum(|x| x)
    }

    pub fn exp(&self) -> Matrix {
        self.map_spectrum(libm::exp)
    }

    /// Real matrix logarithm; requires a strictly positive spectrum.
    pub fn ln(&self) -> Result<Matrix> {
        if let Some(&bad) = self.eigenvalues.iter().find(|&&v| v <= 0.0) {
            return Err(Error::NonPositiveSpectrum { eigenvalue: bad });
        }
        Ok(self.map_spectrum(libm::log))
    }
}

/// Eigendecomposition of a square, real-diagonalizable matrix.
///
/// Symmetric matrices (within 1e-10) are decomposed with cyclic Jacobi
/// rotations, giving an orthogonal basis. Anything else is rejected with
/// [`Error::NonSymmetric`]; callers that own the factors should use
/// [`EigenDecomposition::from_factors`].
pub fn eig_decompose(m: &Matrix, symmetric_hint: bool) -> Result<EigenDecomposition> {
    if !m.is_square() {
        return Err(Error::ShapeMismatch {
            op: "eig_decompose",
            left: m.shape(),
            right: (m.cols(), m.rows()),
        });
    }
    if !m.is_finite() {
        return Err(Error::NonFinite("eig_decompose"));
    }
    // The hint only documents intent; symmetry is always verified.
    let _ = symmetric_hint;
    if !m.is_symmetric(SYMMETRY_TOLERANCE) {
        return Err(Error::NonSymmetric);
    }
    let (basis, eigenvalues) = jacobi(m);
    let (basis, eigenvalues) = sort_descending(basis, eigenvalues);
    let inverse_basis = basis.transpose();
    Ok(EigenDecomposition {
        basis,
        inverse_basis,
        eigenvalues,
    })
}

fn off_diagonal_norm(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                acc += a[(i, j)] * a[(i, j)];
            }
        }
    }
    libm::sqrt(acc)
}

fn jacobi(m: &Matrix) -> (Matrix, Vec<f64>) {
    let n = m.rows();
    // Symmetrize exactly so rotations keep the matrix symmetric.
    let mut a = Matrix::from_fn(n, n, |i, j| 0.5 * (m[(i, j)] + m[(j, i)]));
    let mut v = Matrix::identity(n);
    let threshold = JACOBI_TOLERANCE * a.frobenius_norm().max(1.0);

    for _ in 0..JACOBI_MAX_SWEEPS {
        if off_diagonal_norm(&a) <= threshold {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let tau = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + libm::sqrt(1.0 + tau * tau))
                } else {
                    -1.0 / (-tau + libm::sqrt(1.0 + tau * tau))
                };
                let c = 1.0 / libm::sqrt(1.0 + t * t);
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    (v, a.diag())
}

fn sort_descending(basis: Matrix, eigenvalues: Vec<f64>) -> (Matrix, Vec<f64>) {
    let n = eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eigenvalues[j].total_cmp(&eigenvalues[i]));
    let sorted_basis = Matrix::from_fn(basis.rows(), n, |r, c| basis[(r, order[c])]);
    let sorted_values = order.iter().map(|&i| eigenvalues[i]).collect();
    (sorted_basis, sorted_values)
}

/// Maximum absolute column sum.
pub fn one_norm(m: &Matrix) -> f64 {
    (0..m.cols())
        .map(|c| (0..m.rows()).map(|r| m[(r, c)].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Gauss-Jordan inversion with partial pivoting.
pub fn inverse(m: &Matrix) -> Result<Matrix> {
    if !m.is_square() {
        return Err(Error::ShapeMismatch {
            op: "inverse",
            left: m.shape(),
            right: (m.cols(), m.rows()),
        });
    }
    let n = m.rows();
    let mut a = m.clone();
    let mut inv = Matrix::identity(n);
    let scale = m.max_abs().max(f64::MIN_POSITIVE);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[(i, col)].abs().total_cmp(&a[(j, col)].abs()))
            .unwrap_or(col);
        if a[(pivot, col)].abs() <= 1e-300_f64.max(scale * 1e-15) {
            return Err(Error::NonDiagonalizable {
                condition: f64::INFINITY,
            });
        }
        if pivot != col {
            for k in 0..n {
                let (x, y) = (a[(col, k)], a[(pivot, k)]);
                a[(col, k)] = y;
                a[(pivot, k)] = x;
                let (x, y) = (inv[(col, k)], inv[(pivot, k)]);
                inv[(col, k)] = y;
                inv[(pivot, k)] = x;
            }
        }
        let d = a[(col, col)];
        for k in 0..n {
            a[(col, k)] /= d;
            inv[(col, k)] /= d;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = a[(r, col)];
            if f == 0.0 {
                continue;
            }
            for k in 0..n {
                a[(r, k)] -= f * a[(col, k)];
                inv[(r, k)] -= f * inv[(col, k)];
            }
        }
    }
    Ok(inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn relative_frobenius(a: &Matrix, b: &Matrix) -> f64 {
        a.sub(b).frobenius_norm() / b.frobenius_norm().max(f64::MIN_POSITIVE)
    }

    fn random_symmetric(n: usize, rng: &mut ChaCha8Rng) -> Matrix {
        let g = Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        g.add(&g.transpose())
    }

    #[test]
    fn identity_decomposes_trivially() {
        let eig = eig_decompose(&Matrix::identity(3), true).unwrap();
        assert_eq!(eig.eigenvalues, [1.0, 1.0, 1.0]);
        assert_eq!(eig.basis, Matrix::identity(3));
    }

    #[test]
    fn diagonal_decomposes_trivially() {
        let eig = eig_decompose(&Matrix::from_diag(&[2.0, 0.5]), true).unwrap();
        assert_eq!(eig.eigenvalues, [2.0, 0.5]);
        assert_eq!(eig.basis, Matrix::identity(2));
        // Already-descending entries stay put; ascending ones get swapped.
        let eig = eig_decompose(&Matrix::from_diag(&[0.5, 2.0]), true).unwrap();
        assert_eq!(eig.eigenvalues, [2.0, 0.5]);
    }

    #[test]
    fn random_symmetric_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let s = random_symmetric(5, &mut rng);
            let eig = eig_decompose(&s, true).unwrap();
            // Oracle: explicit P Λ P⁻¹ multiply-back.
            let lambda = Matrix::from_diag(&eig.eigenvalues);
            let back = eig.basis.matmul(&lambda).matmul(&eig.inverse_basis);
            assert!(relative_frobenius(&back, &s) < 1e-8);
            let id = eig.basis.matmul(&eig.inverse_basis);
            assert!(id.sub(&Matrix::identity(5)).frobenius_norm() < 1e-8);
            assert!(eig.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn nonsymmetric_requires_factors() {
        let m = Matrix::from_rows(&[[1.0, 2.0], [0.0, 3.0]]).unwrap();
        assert_eq!(eig_decompose(&m, false), Err(Error::NonSymmetric));
        let p = Matrix::from_rows(&[[1.0, 1.0], [0.0, 1.0]]).unwrap();
        let eig = EigenDecomposition::from_factors(p, alloc::vec![1.0, 3.0]).unwrap();
        assert_eq!(eig.eigenvalues, [3.0, 1.0]);
        assert!(eig.reconstruct().max_abs_diff(&Matrix::from_rows(&[[1.0, 2.0], [0.0, 3.0]]).unwrap()) < 1e-12);
    }

    #[test]
    fn singular_basis_is_not_diagonalizable() {
        let p = Matrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]).unwrap();
        assert!(matches!(
            EigenDecomposition::from_factors(p, alloc::vec![1.0, 2.0]),
            Err(Error::NonDiagonalizable { .. })
        ));
        let p = Matrix::from_rows(&[[1.0, 1.0], [1.0, 1.0 + 1e-14]]).unwrap();
        assert!(matches!(
            EigenDecomposition::from_factors(p, alloc::vec![1.0, 2.0]),
            Err(Error::NonDiagonalizable { .. })
        ));
    }

    #[test]
    fn inverse_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = Matrix::from_fn(6, 6, |i, j| {
            rng.random_range(-1.0..1.0) + if i == j { 3.0 } else { 0.0 }
        });
        let inv = inverse(&m).unwrap();
        assert!(m.matmul(&inv).sub(&Matrix::identity(6)).max_abs() < 1e-12);
    }

    #[test]
    fn log_rejects_nonpositive_spectrum() {
        let eig = eig_decompose(&Matrix::from_diag(&[1.0, 0.0]), true).unwrap();
        assert!(matches!(eig.ln(), Err(Error::NonPositiveSpectrum { .. })));
        let eig = eig_decompose(&Matrix::from_diag(&[1.0, 0.5]), true).unwrap();
        let log = eig.ln().unwrap();
        assert!((log[(1, 1)] - libm::log(0.5)).abs() < 1e-15);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn jacobi_reconstructs_well_conditioned(
                entries in proptest::collection::vec(-2.0f64..2.0, 36),
            ) {
                let g = Matrix::from_vec(6, 6, entries).unwrap();
                let s = g.add(&g.transpose());
                let eig = eig_decompose(&s, true).unwrap();
                prop_assert!(relative_frobenius(&eig.reconstruct(), &s) < 1e-8);
            }
        }
    }
}
