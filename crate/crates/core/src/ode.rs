//! Fixed-step RK4 integration of the linear graph ODE
//! `dH/dt = L·H + H·M + C` and its closed-form solution.
//!
//! `L` is the log of the (regularized) adjacency, `M` the log-space weight
//! matrix and `C` a constant drive. Two integrators share the same stage
//! arithmetic: [`rk4_integrate`] on plain matrices and [`rk4_on_tape`],
//! which records every stage so gradients flow through the solver.

use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::linalg::{self, EigenDecomposition};
use crate::matrix::Matrix;
use crate::tape::{Tape, Var};

pub const DEFAULT_T_END: f64 = 1.0;
pub const DEFAULT_STEP: f64 = 0.1;
/// Any state with a larger Frobenius norm aborts integration.
pub const BLOWUP_NORM: f64 = 1e12;
/// Below this `|λ_i + μ_j|` the closed form switches to its resonant limit.
pub const RESONANCE_TOLERANCE: f64 = 1e-10;
const STEP_GRID_TOLERANCE: f64 = 1e-9;

/// Number of RK4 steps covering `[0, t_end]`.
pub fn step_count(t_end: f64, step: f64) -> Result<usize> {
    if !(step > 0.0) || !(t_end >= step) || !t_end.is_finite() {
        return Err(invalid("ODE horizon needs step > 0 and t_end >= step"));
    }
    let ratio = t_end / step;
    let steps = libm::round(ratio);
    if (ratio - steps).abs() > STEP_GRID_TOLERANCE * ratio.max(1.0) {
        return Err(invalid("ODE step must divide t_end"));
    }
    Ok(steps as usize)
}

#[derive(Clone, Debug, PartialEq)]
pub struct OdeSystem {
    pub log_adjacency: Matrix,
    pub log_weight: Matrix,
    pub drive: Matrix,
    pub t_end: f64,
    pub step: f64,
}

impl OdeSystem {
    pub fn new(log_adjacency: Matrix, log_weight: Matrix, drive: Matrix, t_end: f64, step: f64) -> Result<Self> {
        let sys = Self {
            log_adjacency,
            log_weight,
            drive,
            t_end,
            step,
        };
        sys.validate()?;
        Ok(sys)
    }

    pub fn validate(&self) -> Result<usize> {
        let (n, d) = self.drive.shape();
        if !self.log_adjacency.is_square() || self.log_adjacency.rows() != n {
            return Err(Error::ShapeMismatch {
                op: "OdeSystem log_adjacency",
                left: self.log_adjacency.shape(),
                right: self.drive.shape(),
            });
        }
        if !self.log_weight.is_square() || self.log_weight.rows() != d {
            return Err(Error::ShapeMismatch {
                op: "OdeSystem log_weight",
                left: self.log_weight.shape(),
                right: self.drive.shape(),
            });
        }
        step_count(self.t_end, self.step)
    }

    /// `L·H + H·M + C`
    pub fn rhs(&self, h: &Matrix) -> Matrix {
        let mut out = self.log_adjacency.matmul(h);
        out.add_assign(&h.matmul(&self.log_weight));
        out.add_assign(&self.drive);
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OdeTrajectory {
    pub states: Vec<Matrix>,
    pub times: Vec<f64>,
}

impl OdeTrajectory {
    pub fn last(&self) -> &Matrix {
        self.states.last().expect("trajectory holds H(0)")
    }
}

fn check_blowup(h: &Matrix, time: f64) -> Result<()> {
    let norm = h.frobenius_norm();
    if !(norm <= BLOWUP_NORM) {
        return Err(Error::Blowup { time, norm });
    }
    Ok(())
}

/// Classical RK4 on a uniform grid, returning every grid state.
pub fn rk4_integrate(sys: &OdeSystem, h0: &Matrix) -> Result<OdeTrajectory> {
    let steps = sys.validate()?;
    if h0.shape() != sys.drive.shape() {
        return Err(Error::ShapeMismatch {
            op: "rk4_integrate",
            left: h0.shape(),
            right: sys.drive.shape(),
        });
    }
    let h = sys.step;
    let mut states = Vec::with_capacity(steps + 1);
    let mut times = Vec::with_capacity(steps + 1);
    let mut state = h0.clone();
    check_blowup(&state, 0.0)?;
    states.push(state.clone());
    times.push(0.0);
    for k in 0..steps {
        let k1 = sys.rhs(&state);
        let mut probe = state.clone();
        probe.axpy(0.5 * h, &k1);
        let k2 = sys.rhs(&probe);
        let mut probe = state.clone();
        probe.axpy(0.5 * h, &k2);
        let k3 = sys.rhs(&probe);
        let mut probe = state.clone();
        probe.axpy(h, &k3);
        let k4 = sys.rhs(&probe);
        let mut incr = k1;
        incr.axpy(2.0, &k2);
        incr.axpy(2.0, &k3);
        incr.add_assign(&k4);
        state.axpy(h / 6.0, &incr);
        let t = (k + 1) as f64 * h;
        check_blowup(&state, t)?;
        states.push(state.clone());
        times.push(t);
    }
    Ok(OdeTrajectory { states, times })
}

fn rhs_on_tape(tape: &mut Tape, l: Var, m: Var, c: Var, h: Var) -> Var {
    let lh = tape.matmul(l, h);
    let hm = tape.matmul(h, m);
    let s = tape.add(lh, hm);
    tape.add(s, c)
}

/// RK4 recorded stage by stage on `tape`; returns `H(t_end)`.
pub fn rk4_on_tape(
    tape: &mut Tape,
    log_adjacency: Var,
    log_weight: Var,
    drive: Var,
    h0: Var,
    t_end: f64,
    step: f64,
) -> Result<Var> {
    let steps = step_count(t_end, step)?;
    let (n, d) = tape.shape(drive);
    if tape.shape(h0) != (n, d) || tape.shape(log_adjacency) != (n, n) || tape.shape(log_weight) != (d, d) {
        return Err(Error::ShapeMismatch {
            op: "rk4_on_tape",
            left: tape.shape(h0),
            right: (n, d),
        });
    }
    let mut state = h0;
    check_blowup(tape.value(state), 0.0)?;
    for k in 0..steps {
        let k1 = rhs_on_tape(tape, log_adjacency, log_weight, drive, state);
        let s1 = tape.scale(k1, 0.5 * step);
        let p1 = tape.add(state, s1);
        let k2 = rhs_on_tape(tape, log_adjacency, log_weight, drive, p1);
        let s2 = tape.scale(k2, 0.5 * step);
        let p2 = tape.add(state, s2);
        let k3 = rhs_on_tape(tape, log_adjacency, log_weight, drive, p2);
        let s3 = tape.scale(k3, step);
        let p3 = tape.add(state, s3);
        let k4 = rhs_on_tape(tape, log_adjacency, log_weight, drive, p3);
        let k2x = tape.scale(k2, 2.0);
        let k3x = tape.scale(k3, 2.0);
        let a = tape.add(k1, k2x);
        let b = tape.add(k3x, k4);
        let incr = tape.add(a, b);
        let incr = tape.scale(incr, step / 6.0);
        state = tape.add(state, incr);
        check_blowup(tape.value(state), (k + 1) as f64 * step)?;
    }
    Ok(state)
}

/// Exact solution of `dH/dt = L·H + H·M + C` from eigenbases of `L` and `M`.
///
/// With `L = P Λ P⁻¹` and `M = Q Φ Q⁻¹` the transformed state
/// `H̄ = P⁻¹ H Q` decouples entrywise:
/// `H̄_ij(t) = e^{(λ_i+μ_j)t} H̄_ij(0) + (e^{(λ_i+μ_j)t} − 1)/(λ_i+μ_j) · C̄_ij`,
/// where the second factor becomes `t` at resonance.
#[derive(Clone, Debug)]
pub struct SylvesterSolution {
    left: EigenDecomposition,
    right: EigenDecomposition,
    h0_bar: Matrix,
    drive_bar: Matrix,
}

impl SylvesterSolution {
    pub fn new(left: EigenDecomposition, right: EigenDecomposition, drive: &Matrix, h0: &Matrix) -> Result<Self> {
        let (n, d) = (left.dim(), right.dim());
        for (m, op) in [(drive, "sylvester drive"), (h0, "sylvester h0")] {
            if m.shape() != (n, d) {
                return Err(Error::ShapeMismatch {
                    op,
                    left: m.shape(),
                    right: (n, d),
                });
            }
        }
        let to_bar = |m: &Matrix| left.inverse_basis.matmul(m).matmul(&right.basis);
        Ok(Self {
            h0_bar: to_bar(h0),
            drive_bar: to_bar(drive),
            left,
            right,
        })
    }

    /// Decomposes symmetric `log_adjacency` and `log_weight` directly.
    pub fn from_system(sys: &OdeSystem, h0: &Matrix) -> Result<Self> {
        sys.validate()?;
        let left = linalg::eig_decompose(&sys.log_adjacency, true)?;
        let right = linalg::eig_decompose(&sys.log_weight, true)?;
        Self::new(left, right, &sys.drive, h0)
    }

    pub fn at(&self, t: f64) -> Matrix {
        let (n, d) = self.h0_bar.shape();
        let bar = Matrix::from_fn(n, d, |i, j| {
            let rate = self.left.eigenvalues[i] + self.right.eigenvalues[j];
            let growth = libm::exp(rate * t);
            let forced = if rate.abs() < RESONANCE_TOLERANCE {
                t
            } else {
                libm::expm1(rate * t) / rate
            };
            growth * self.h0_bar[(i, j)] + forced * self.drive_bar[(i, j)]
        });
        self.left.basis.matmul(&bar).matmul(&self.right.inverse_basis)
    }
}

/// Closed-form `H(t)` for a system whose log matrices are symmetric.
pub fn sylvester_closed_form(sys: &OdeSystem, h0: &Matrix, t: f64) -> Result<Matrix> {
    Ok(SylvesterSolution::from_system(sys, h0)?.at(t))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConsistencyReport {
    /// `H(0)` built from the eigenbases.
    pub initial_state: Matrix,
    /// `max |ln(a)·H(0) + H(0)·ln(w) + e − a·e·w|`
    pub max_deviation: f64,
    /// Smallest `|ln ā_i + ln φ_j|` encountered.
    pub min_denominator: f64,
}

/// Checks that the initial condition built in the eigenbases of `a` and `w`
/// makes the ODE right-hand side at `t = 0` equal `a·e·w` when the constant
/// term is `e` itself.
///
/// `H̄(0)_ij = (ā_i Ē_ij φ_j − Ē_ij) / (ln ā_i + ln φ_j)` with
/// `Ē = P⁻¹ e Q`, `H(0) = P H̄(0) Q⁻¹`.
pub fn derivation_consistency_check(
    a: &EigenDecomposition,
    w: &EigenDecomposition,
    e: &Matrix,
) -> Result<ConsistencyReport> {
    let (n, d) = (a.dim(), w.dim());
    if e.shape() != (n, d) {
        return Err(Error::ShapeMismatch {
            op: "derivation_consistency_check",
            left: e.shape(),
            right: (n, d),
        });
    }
    if let Some(&bad) = a.eigenvalues.iter().chain(&w.eigenvalues).find(|&&v| v <= 0.0) {
        return Err(Error::NonPositiveSpectrum { eigenvalue: bad });
    }
    let e_bar = a.inverse_basis.matmul(e).matmul(&w.basis);
    let mut min_denominator = f64::INFINITY;
    let mut h0_bar = Matrix::zeros(n, d);
    for i in 0..n {
        for j in 0..d {
            let (ai, phj) = (a.eigenvalues[i], w.eigenvalues[j]);
            let denom = libm::log(ai) + libm::log(phj);
            min_denominator = min_denominator.min(denom.abs());
            if denom.abs() < 1e-8 {
                return Err(Error::ResonantSpectrum { denominator: denom });
            }
            h0_bar[(i, j)] = (ai * e_bar[(i, j)] * phj - e_bar[(i, j)]) / denom;
        }
    }
    let h0 = a.basis.matmul(&h0_bar).matmul(&w.inverse_basis);
    let ln_a = a.ln()?;
    let ln_w = w.ln()?;
    let mut lhs = ln_a.matmul(&h0);
    lhs.add_assign(&h0.matmul(&ln_w));
    lhs.add_assign(e);
    let rhs = a.reconstruct().matmul(e).matmul(&w.reconstruct());
    Ok(ConsistencyReport {
        max_deviation: lhs.max_abs_diff(&rhs),
        initial_state: h0,
        min_denominator,
    })
}
