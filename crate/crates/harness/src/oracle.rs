//! Randomized oracle suites: RK4 against the closed-form Sylvester
//! solution, RK4 convergence order, the initial-condition consistency
//! identity, and a finite-difference check of the whole pipeline.

use std::time::{Duration, Instant};

use dfgcn_core::batchnorm::Mode;
use dfgcn_core::gradcheck::{grad_check, GradCheckReport};
use dfgcn_core::linalg::EigenDecomposition;
use dfgcn_core::matrix::Matrix;
use dfgcn_core::model::Model;
use dfgcn_core::ode::{derivation_consistency_check, rk4_integrate, OdeSystem, SylvesterSolution};
use dfgcn_core::params::{normal, ParamStore};
use dfgcn_core::tape::Tape;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::error::Result;
use crate::synthetic::{generate_synthetic, SyntheticSpec};

/// `P·diag(λ)·P⁻¹` with `P = I + (0.3/√n)·N`, `N` standard normal, and
/// eigenvalues uniform in `spectrum`.
pub fn random_diagonalizable<R: Rng + ?Sized>(n: usize, spectrum: (f64, f64), rng: &mut R) -> Result<EigenDecomposition> {
    let mut basis = normal(n, n, 0.3 / (n as f64).sqrt(), rng);
    for i in 0..n {
        basis[(i, i)] += 1.0;
    }
    let eigenvalues = (0..n).map(|_| rng.random_range(spectrum.0..=spectrum.1)).collect();
    Ok(EigenDecomposition::from_factors(basis, eigenvalues)?)
}

/// One random linear system `dH/dt = L·H + H·M + C` with its exact solution.
pub struct RandomSystem {
    pub system: OdeSystem,
    pub h0: Matrix,
    pub exact: SylvesterSolution,
}

/// `n, d` uniform in `1..=max_dim`; `L` and `M` spectra as given; `C` and
/// `H(0)` standard normal.
pub fn random_system<R: Rng + ?Sized>(
    max_dim: usize,
    left_spectrum: (f64, f64),
    right_spectrum: (f64, f64),
    step: f64,
    rng: &mut R,
) -> Result<RandomSystem> {
    let n = rng.random_range(1..=max_dim);
    let d = rng.random_range(1..=max_dim);
    let left = random_diagonalizable(n, left_spectrum, rng)?;
    let right = random_diagonalizable(d, right_spectrum, rng)?;
    let drive = normal(n, d, 1.0, rng);
    let h0 = normal(n, d, 1.0, rng);
    let system = OdeSystem::new(left.reconstruct(), right.reconstruct(), drive.clone(), 1.0, step)?;
    let exact = SylvesterSolution::new(left, right, &drive, &h0)?;
    Ok(RandomSystem { system, h0, exact })
}

/// Largest deviation from the exact solution over every grid point.
pub fn trajectory_error(sys: &RandomSystem) -> Result<f64> {
    let traj = rk4_integrate(&sys.system, &sys.h0)?;
    Ok(traj
        .states
        .iter()
        .zip(&traj.times)
        .map(|(h, &t)| h.max_abs_diff(&sys.exact.at(t)))
        .fold(0.0, f64::max))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EquivalenceReport {
    pub systems: usize,
    pub max_error: f64,
    pub elapsed: Duration,
}

pub const EQUIVALENCE_LEFT_SPECTRUM: (f64, f64) = (-0.5, 0.1);
pub const EQUIVALENCE_RIGHT_SPECTRUM: (f64, f64) = (-0.25, 0.25);

/// RK4 at `step = 0.1` to `t = 1` against the closed form.
pub fn rk4_equivalence(systems: usize, max_dim: usize, seed: u64) -> Result<EquivalenceReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = Instant::now();
    let mut max_error = 0.0f64;
    for _ in 0..systems {
        let sys = random_system(max_dim, EQUIVALENCE_LEFT_SPECTRUM, EQUIVALENCE_RIGHT_SPECTRUM, 0.1, &mut rng)?;
        max_error = max_error.max(trajectory_error(&sys)?);
    }
    Ok(EquivalenceReport {
        systems,
        max_error,
        elapsed: start.elapsed(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct OrderReport {
    /// `error(h) / error(h/2)` per system.
    pub ratios: Vec<f64>,
}

impl OrderReport {
    pub fn min(&self) -> f64 {
        self.ratios.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Error ratio between step 0.1 and step 0.05 on nonstiff systems. Fourth
/// order convergence predicts 16.
pub fn rk4_order(systems: usize, max_dim: usize, seed: u64) -> Result<OrderReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ratios = Vec::with_capacity(systems);
    for _ in 0..systems {
        let mut sys = random_system(max_dim, (-1.5, 0.5), (-0.5, 0.5), 0.1, &mut rng)?;
        let coarse = rk4_integrate(&sys.system, &sys.h0)?.last().max_abs_diff(&sys.exact.at(1.0));
        sys.system.step = 0.05;
        let fine = rk4_integrate(&sys.system, &sys.h0)?.last().max_abs_diff(&sys.exact.at(1.0));
        ratios.push(coarse / fine);
    }
    Ok(OrderReport { ratios })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConsistencySuiteReport {
    pub instances: usize,
    pub max_deviation: f64,
    pub min_denominator: f64,
}

/// Random `A`, `W` with spectra in `(0.2, 0.8)` and `(0.3, 0.9)`, so every
/// `ln a_i + ln φ_j` is at most `ln 0.8 + ln 0.9 < −0.3`.
pub fn consistency_suite(instances: usize, max_dim: usize, seed: u64) -> Result<ConsistencySuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = ConsistencySuiteReport {
        instances,
        max_deviation: 0.0,
        min_denominator: f64::INFINITY,
    };
    for _ in 0..instances {
        let n = rng.random_range(1..=max_dim);
        let d = rng.random_range(1..=max_dim);
        let a = random_diagonalizable(n, (0.2, 0.8), &mut rng)?;
        let w = random_diagonalizable(d, (0.3, 0.9), &mut rng)?;
        let e = normal(n, d, 1.0, &mut rng);
        let r = derivation_consistency_check(&a, &w, &e)?;
        report.max_deviation = report.max_deviation.max(r.max_deviation);
        report.min_denominator = report.min_denominator.min(r.min_denominator);
    }
    Ok(report)
}

/// Finite-difference check of the full training loss on one synthetic
/// conversation of `utterances` turns.
pub fn pipeline_grad_check(cfg: &RunConfig, utterances: usize, probes: usize, eps: f64) -> Result<GradCheckReport> {
    cfg.validate()?;
    let model = Model::new(cfg.model_config())?;
    let mut store: ParamStore = model.init(&mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    let spec = SyntheticSpec {
        num_conversations: 1,
        min_utterances: utterances,
        max_utterances: utterances,
        class_count: cfg.num_classes,
        dims: cfg.model_config().dims,
        ..SyntheticSpec::hard()
    };
    let conv = generate_synthetic(&spec, cfg.seed)?.remove(0);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    Ok(grad_check(
        |t: &mut Tape, p: &ParamStore| Ok(model.loss(t, p, &[&conv], Mode::Train)?.0),
        &mut store,
        probes,
        eps,
        &mut rng,
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_drive_only_system_is_exact_for_rk4() {
        // L = M = 0: H(t) = H(0) + t·C, which RK4 integrates exactly.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let left = EigenDecomposition::from_factors(Matrix::identity(2), vec![0.0, 0.0]).unwrap();
        let right = EigenDecomposition::from_factors(Matrix::identity(3), vec![0.0, 0.0, 0.0]).unwrap();
        let drive = normal(2, 3, 1.0, &mut rng);
        let h0 = normal(2, 3, 1.0, &mut rng);
        let sys = RandomSystem {
            system: OdeSystem::new(Matrix::zeros(2, 2), Matrix::zeros(3, 3), drive.clone(), 1.0, 0.1).unwrap(),
            exact: SylvesterSolution::new(left, right, &drive, &h0).unwrap(),
            h0,
        };
        assert!(trajectory_error(&sys).unwrap() < 1e-14);
    }

    #[test]
    fn small_suites_pass() {
        assert!(rk4_equivalence(10, 4, 1).unwrap().max_error < 1e-6);
        let order = rk4_order(3, 4, 2).unwrap();
        assert!(order.min() >= 12.0 && order.max() <= 20.0, "{order:?}");
        assert!(consistency_suite(5, 4, 3).unwrap().max_deviation < 1e-8);
    }

    #[test]
    fn random_factors_reconstruct() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let e = random_diagonalizable(5, (-1.0, 1.0), &mut rng).unwrap();
        let m = e.reconstruct();
        let back = e.basis.matmul(&Matrix::from_fn(5, 5, |i, j| if i == j { e.eigenvalues[i] } else { 0.0 })).matmul(&e.inverse_basis);
        assert!(m.max_abs_diff(&back) < 1e-12);
    }
}
