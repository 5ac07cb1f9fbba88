//! Emotional interaction graph over the utterances of one conversation.
//!
//! Nodes are utterances. Two nodes within `window` positions of each other
//! are joined when the cosine similarity of their fused features exceeds
//! `theta`; every node carries a self-loop. The binary adjacency is
//! symmetrically normalized, mixed with the identity (lazy walk) so its
//! spectrum is strictly positive, and handed to the ODE blocks as a real
//! matrix logarithm.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::conversation::SpeakerId;
use crate::error::{invalid, Error, Result};
use crate::linalg::eig_decompose;
use crate::matrix::Matrix;

pub const DEFAULT_WINDOW: usize = 10;
pub const DEFAULT_THETA: f64 = 0.5;
pub const DEFAULT_LAMBDA_MIX: f64 = 0.5;
/// Smallest admissible eigenvalue of the regularized adjacency.
pub const MIN_REGULARIZED_EIGENVALUE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GraphConfig {
    pub window: usize,
    pub theta: f64,
    pub lambda_mix: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            theta: DEFAULT_THETA,
            lambda_mix: DEFAULT_LAMBDA_MIX,
        }
    }
}

/// Speaker pair of an edge `i → j`. Stored as metadata; propagation ignores it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct EdgeType {
    pub from: SpeakerId,
    pub to: SpeakerId,
}

/// Speaker pair of every off-diagonal edge, keyed by `(i, j)`.
pub type EdgeTypes = BTreeMap<(usize, usize), EdgeType>;

#[derive(Clone, Debug, PartialEq)]
pub struct EmotionGraph {
    pub adjacency_binary: Matrix,
    pub adjacency_log: Matrix,
    /// Eigenvalues of the regularized normalized adjacency, descending.
    pub regularized_spectrum: Vec<f64>,
    pub node_count: usize,
    pub edge_types: EdgeTypes,
    pub context_window: usize,
    pub theta: f64,
}

impl EmotionGraph {
    /// Off-diagonal edges counted once per unordered pair.
    pub fn edge_count(&self) -> usize {
        self.edge_types.len() / 2
    }

    /// One line per node: `i: j k ...` listing its neighbors (self excluded).
    pub fn adjacency_list(&self) -> String {
        let mut out = String::new();
        for i in 0..self.node_count {
            let _ = write!(out, "{i}:");
            for j in 0..self.node_count {
                if i != j && self.adjacency_binary[(i, j)] != 0.0 {
                    let _ = write!(out, " {j}");
                }
            }
            out.push('\n');
        }
        out
    }
}

fn cosine(a: &[f64], b: &[f64], norm_a: f64, norm_b: f64) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot / (norm_a * norm_b)
}

/// Binary self-looped adjacency and edge metadata.
pub fn binary_adjacency(
    fused: &Matrix,
    speakers: &[SpeakerId],
    window: usize,
    theta: f64,
) -> Result<(Matrix, EdgeTypes)> {
    let n = fused.rows();
    if n == 0 || speakers.len() != n {
        return Err(Error::ShapeMismatch {
            op: "build_graph",
            left: fused.shape(),
            right: (speakers.len(), fused.cols()),
        });
    }
    if !(-1.0..=1.0).contains(&theta) {
        return Err(invalid("theta must lie in [-1, 1]"));
    }
    let norms: Vec<f64> = (0..n)
        .map(|i| libm::sqrt(fused.row(i).iter().map(|x| x * x).sum()))
        .collect();
    if let Some(row) = norms.iter().position(|&v| !(v >= 1e-12)) {
        return Err(Error::ZeroNormFeature { row });
    }
    let mut adj = Matrix::identity(n);
    let mut edges = BTreeMap::new();
    for i in 0..n {
        for j in i + 1..n.min(i + window + 1) {
            if cosine(fused.row(i), fused.row(j), norms[i], norms[j]) > theta {
                adj[(i, j)] = 1.0;
                adj[(j, i)] = 1.0;
                edges.insert(
                    (i, j),
                    EdgeType {
                        from: speakers[i],
                        to: speakers[j],
                    },
                );
                edges.insert(
                    (j, i),
                    EdgeType {
                        from: speakers[j],
                        to: speakers[i],
                    },
                );
            }
        }
    }
    Ok((adj, edges))
}

/// `D^{-1/2} A D^{-1/2}` for a self-looped adjacency `A`.
pub fn normalized_adjacency(adjacency: &Matrix) -> Matrix {
    let inv_sqrt_deg: Vec<f64> = (0..adjacency.rows())
        .map(|i| 1.0 / libm::sqrt(adjacency.row(i).iter().sum::<f64>()))
        .collect();
    Matrix::from_fn(adjacency.rows(), adjacency.cols(), |i, j| {
        inv_sqrt_deg[i] * adjacency[(i, j)] * inv_sqrt_deg[j]
    })
}

/// `ln((1−λ)·I + λ·Â)` and the spectrum it was taken from.
pub fn adjacency_log(adjacency: &Matrix, lambda_mix: f64) -> Result<(Matrix, Vec<f64>)> {
    if !(lambda_mix > 0.0 && lambda_mix <= 1.0) {
        return Err(invalid("lambda_mix must lie in (0, 1]"));
    }
    let norm = normalized_adjacency(adjacency);
    let n = norm.rows();
    let regularized = Matrix::from_fn(n, n, |i, j| {
        lambda_mix * norm[(i, j)] + if i == j { 1.0 - lambda_mix } else { 0.0 }
    });
    let eig = eig_decompose(&regularized, true)?;
    if let Some(&bad) = eig
        .eigenvalues
        .iter()
        .find(|&&v| v <= MIN_REGULARIZED_EIGENVALUE)
    {
        return Err(Error::NonPositiveSpectrum { eigenvalue: bad });
    }
    let log = eig.map_spectrum(libm::log);
    // Symmetrize away rounding so the log is exactly symmetric.
    let log = Matrix::from_fn(n, n, |i, j| 0.5 * (log[(i, j)] + log[(j, i)]));
    Ok((log, eig.eigenvalues))
}

pub fn build_graph(fused: &Matrix, speakers: &[SpeakerId], cfg: &GraphConfig) -> Result<EmotionGraph> {
    let (adjacency_binary, edge_types) = binary_adjacency(fused, speakers, cfg.window, cfg.theta)?;
    let (adjacency_log, regularized_spectrum) = adjacency_log(&adjacency_binary, cfg.lambda_mix)?;
    Ok(EmotionGraph {
        node_count: fused.rows(),
        adjacency_binary,
        adjacency_log,
        regularized_spectrum,
        edge_types,
        context_window: cfg.window,
        theta: cfg.theta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn speakers(n: usize) -> Vec<SpeakerId> {
        (0..n).map(|i| SpeakerId((i % 2) as u32)).collect()
    }

    fn random_features(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn identical_rows_fully_connect() {
        let fused = Matrix::from_rows(&[[1.0, 2.0], [1.0, 2.0]]).unwrap();
        let g = build_graph(&fused, &speakers(2), &GraphConfig::default()).unwrap();
        assert_eq!(g.adjacency_binary, Matrix::filled(2, 2, 1.0));
        assert_eq!(
            g.edge_types[&(0, 1)],
            EdgeType {
                from: SpeakerId(0),
                to: SpeakerId(1)
            }
        );
        assert_eq!(g.edge_count(), 1);
    }

    #[test]
    fn orthogonal_rows_only_self_loops() {
        let fused = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let g = build_graph(&fused, &speakers(2), &GraphConfig::default()).unwrap();
        assert_eq!(g.adjacency_binary, Matrix::identity(2));
        assert!(g.edge_types.is_empty());
        assert_eq!(g.adjacency_log, Matrix::zeros(2, 2));
    }

    #[test]
    fn window_excludes_distant_pairs() {
        // Identical rows would connect everything without the window.
        let fused = Matrix::filled(30, 3, 1.0);
        for theta in [-1.0, 0.0, 0.5, 0.99] {
            let cfg = GraphConfig {
                theta,
                ..GraphConfig::default()
            };
            let g = build_graph(&fused, &speakers(30), &cfg).unwrap();
            assert_eq!(g.adjacency_binary[(2, 17)], 0.0);
            assert_eq!(g.adjacency_binary[(0, 10)], 1.0);
            assert_eq!(g.adjacency_binary[(0, 11)], 0.0);
        }
    }

    #[test]
    fn zero_norm_row_is_rejected() {
        let fused = Matrix::from_rows(&[[1.0, 0.0], [0.0, 0.0]]).unwrap();
        assert_eq!(
            build_graph(&fused, &speakers(2), &GraphConfig::default()),
            Err(Error::ZeroNormFeature { row: 1 })
        );
    }

    #[test]
    fn isolated_node_log_is_zero() {
        let (log, spectrum) = adjacency_log(&Matrix::filled(1, 1, 1.0), 0.5).unwrap();
        assert_eq!(log[(0, 0)], 0.0);
        assert_eq!(spectrum, [1.0]);
    }

    #[test]
    fn complete_pair_spectrum() {
        let (log, spectrum) = adjacency_log(&Matrix::filled(2, 2, 1.0), 0.5).unwrap();
        assert!((spectrum[0] - 1.0).abs() < 1e-14 && (spectrum[1] - 0.5).abs() < 1e-14);
        let log_eigs = eig_decompose(&log, true).unwrap().eigenvalues;
        assert!(log_eigs[0].abs() < 1e-14);
        assert!((log_eigs[1] - libm::log(0.5)).abs() < 1e-14);
    }

    #[test]
    fn exp_of_log_recovers_regularized() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let fused = random_features(12, 4, &mut rng);
        let g = build_graph(&fused, &speakers(12), &GraphConfig { theta: 0.0, ..GraphConfig::default() }).unwrap();
        let exp = eig_decompose(&g.adjacency_log, true).unwrap().exp();
        let norm = normalized_adjacency(&g.adjacency_binary);
        let regularized = Matrix::identity(12).scale(0.5).add(&norm.scale(0.5));
        assert!(exp.max_abs_diff(&regularized) < 1e-8);
        assert!(g.adjacency_log.is_symmetric(0.0));
    }

    #[test]
    fn lambda_out_of_range() {
        assert!(adjacency_log(&Matrix::identity(2), 0.0).is_err());
        assert!(adjacency_log(&Matrix::identity(2), 1.5).is_err());
    }

    #[test]
    fn adjacency_list_dump() {
        let fused = Matrix::from_rows(&[[1.0, 0.0], [1.0, 0.1], [0.0, 1.0]]).unwrap();
        let g = build_graph(&fused, &speakers(3), &GraphConfig::default()).unwrap();
        assert_eq!(g.adjacency_list(), "0: 1\n1: 0\n2:\n");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn structure_and_spectrum(seed in any::<u64>(), n in 1usize..25, theta in -1.0f64..1.0) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let fused = random_features(n, 5, &mut rng);
                let cfg = GraphConfig { theta, ..GraphConfig::default() };
                let g = build_graph(&fused, &speakers(n), &cfg).unwrap();
                let a = &g.adjacency_binary;
                prop_assert!(a.is_symmetric(0.0));
                for i in 0..n {
                    prop_assert_eq!(a[(i, i)], 1.0);
                    for j in 0..n {
                        if i.abs_diff(j) > cfg.window {
                            prop_assert_eq!(a[(i, j)], 0.0);
                        }
                    }
                }
                prop_assert!(g.regularized_spectrum.iter().all(|&v| v > 0.0 && v <= 1.0 + 1e-12));
                let log_eigs = eig_decompose(&g.adjacency_log, true).unwrap().eigenvalues;
                prop_assert!(log_eigs.iter().all(|&v| v <= 1e-12));
            }

            #[test]
            fn edges_monotone_in_theta(seed in any::<u64>(), lo in -1.0f64..1.0, hi in -1.0f64..1.0) {
                let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let fused = random_features(15, 4, &mut rng);
                let count = |theta| {
                    binary_adjacency(&fused, &speakers(15), DEFAULT_WINDOW, theta).unwrap().1.len()
                };
                prop_assert!(count(hi) <= count(lo));
            }

            #[test]
            fn swapping_utterances_permutes_adjacency(seed in any::<u64>(), a in 0usize..8, b in 0usize..8) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let fused = random_features(8, 3, &mut rng);
                let swap = |i: usize| if i == a { b } else if i == b { a } else { i };
                let permuted = Matrix::from_fn(8, 3, |r, c| fused[(swap(r), c)]);
                // The window depends on positions, so compare with a window spanning everything.
                let (orig, _) = binary_adjacency(&fused, &speakers(8), 8, 0.2).unwrap();
                let (perm, _) = binary_adjacency(&permuted, &speakers(8), 8, 0.2).unwrap();
                for i in 0..8 {
                    for j in 0..8 {
                        prop_assert_eq!(perm[(i, j)], orig[(swap(i), swap(j))]);
                    }
                }
            }
        }
    }

    #[test]
    fn k2_log_by_hand() {
        let (log, _) = adjacency_log(&Matrix::filled(2, 2, 1.0), 0.5).unwrap();
        // Eigenvectors (1,1)/√2 → 0 and (1,−1)/√2 → ln 0.5.
        let half_ln = 0.5 * libm::log(0.5);
        let expected = Matrix::from_rows(&[vec![half_ln, -half_ln], vec![-half_ln, half_ln]]).unwrap();
        assert!(log.max_abs_diff(&expected) < 1e-14);
    }
}
