//! Central finite-difference verification of tape gradients.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::matrix::Matrix;
use crate::params::ParamStore;
use crate::tape::{Tape, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub loss: f64,
    pub probes: Vec<Probe>,
    pub max_relative_error: f64,
}

/// `|g − ĝ| / max(1e-8, |g| + |ĝ|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Gradient of `loss_fn` with respect to every parameter it binds.
pub fn tape_gradients<F>(loss_fn: &mut F, params: &ParamStore) -> Result<(f64, BTreeMap<String, Matrix>)>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, params)?;
    let grads = tape.backward(loss);
    let mut by_name: BTreeMap<String, Matrix> = BTreeMap::new();
    for (v, name) in tape.params() {
        if let Some(g) = grads.get(v) {
            match by_name.get_mut(name) {
                Some(acc) => acc.add_assign(g),
                None => {
                    by_name.insert(String::from(name), g.clone());
                }
            }
        }
    }
    Ok((tape.scalar(loss), by_name))
}

fn evaluate<F>(loss_fn: &mut F, params: &ParamStore) -> Result<f64>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, params)?;
    let value = tape.scalar(loss);
    if !value.is_finite() {
        return Err(Error::NonFinite("grad_check loss"));
    }
    Ok(value)
}

/// Compares tape gradients against `(f(θ+ε) − f(θ−ε)) / 2ε` on `probes`
/// scalar parameters drawn without replacement.
///
/// `params` is perturbed in place and restored bit-exactly before returning.
pub fn grad_check<F, R>(
    mut loss_fn: F,
    params: &mut ParamStore,
    probes: usize,
    eps: f64,
    rng: &mut R,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
    R: Rng + ?Sized,
{
    if !(1e-6..=1e-4).contains(&eps) {
        return Err(invalid("grad_check eps must lie in [1e-6, 1e-4]"));
    }
    let (loss, grads) = tape_gradients(&mut loss_fn, params)?;
    let again = evaluate(&mut loss_fn, params)?;
    if loss.to_bits() != again.to_bits() {
        return Err(Error::NonDeterministicLoss {
            first: loss,
            second: again,
        });
    }

    let total = params.scalar_count();
    let picks = sample(rng, total, probes.min(total));
    let mut out = Vec::with_capacity(picks.len());
    for flat in picks.iter() {
        let (name, index) = params
            .scalar_location(flat)
            .map(|(n, i)| (String::from(n), i))
            .expect("probe index within scalar count");
        let original = params.value(&name)?.as_slice()[index];
        params.nudge(&name, index, eps)?;
        let plus = evaluate(&mut loss_fn, params);
        let mut restore = params.value(&name)?.clone();
        restore.as_mut_slice()[index] = original - eps;
        params.set_value(&name, restore.clone())?;
        let minus = evaluate(&mut loss_fn, params);
        restore.as_mut_slice()[index] = original;
        params.set_value(&name, restore)?;
        let (plus, minus) = (plus?, minus?);

        let numeric = (plus - minus) / (2.0 * eps);
        let analytic = grads.get(&name).map_or(0.0, |g| g.as_slice()[index]);
        out.push(Probe {
            relative_error: relative_error(analytic, numeric),
            param: name,
            index,
            analytic,
            numeric,
        });
    }
    let max_relative_error = out.iter().map(|p| p.relative_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        loss,
        probes: out,
        max_relative_error,
    })
}
