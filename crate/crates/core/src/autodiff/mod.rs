//! Reverse-mode differentiation over dense matrices.
//!
//! [`grad`] returns ordinary gradients. [`meta_grad`] differentiates an outer
//! objective through one plain gradient step of an inner objective, which is
//! what the meta-model update needs. [`finite_diff_check`] and
//! [`finite_diff_meta_check`] are the central-difference oracles for both.

mod params;
mod tape;

pub use params::ParamSet;
pub use tape::{row_softmax, selu, sigmoid, Tape, Var};

use crate::error::AutodiffError;

/// Denominator floor for relative errors, so entries near zero compare absolutely.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

/// Value and gradient of a scalar function of a parameter set.
#[derive(Clone, Debug)]
pub struct Gradient {
    pub value: f64,
    pub grads: ParamSet,
}

/// Exact reverse-mode gradient of the scalar built by `f` from `params`.
pub fn grad<F>(params: &ParamSet, f: F) -> Result<Gradient, AutodiffError>
where
    F: FnOnce(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars = params.to_tape(&mut tape);
    let out = f(&mut tape, &vars);
    let grads = tape.backward(out, &vars)?;
    tape.check()?;
    Ok(Gradient {
        value: tape.scalar(out),
        grads: params.from_tape(&tape, &grads),
    })
}

/// Result of differentiating through one inner gradient step.
#[derive(Clone, Debug)]
pub struct MetaGradient {
    /// `d/dθ outer(w - eta * ∇_w inner(w, θ))`.
    pub theta_grad: ParamSet,
    /// The look-ahead parameters `w - eta * ∇_w inner(w, θ)`.
    pub w_prime: ParamSet,
    pub inner_value: f64,
    pub outer_value: f64,
}

/// Gradient over `theta` of `outer(w')` with `w' = w - eta * ∇_w inner(w, theta)`.
///
/// The inner gradient is recorded on the tape, so the second backward pass
/// differentiates through the step itself.
pub fn meta_grad<I, O>(w: &ParamSet, theta: &ParamSet, eta: f64, inner: I, outer: O) -> Result<MetaGradient, AutodiffError>
where
    I: FnOnce(&mut Tape, &[Var], &[Var]) -> Var,
    O: FnOnce(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let w_vars = w.to_tape(&mut tape);
    let theta_vars = theta.to_tape(&mut tape);
    let inner_out = inner(&mut tape, &w_vars, &theta_vars);
    let inner_grads = tape.backward(inner_out, &w_vars)?;
    let w_prime: Vec<Var> = w_vars
        .iter()
        .zip(&inner_grads)
        .map(|(&wv, &g)| {
            let step = tape.scale(g, eta);
            tape.sub(wv, step)
        })
        .collect();
    let outer_out = outer(&mut tape, &w_prime);
    let theta_grads = tape.backward(outer_out, &theta_vars)?;
    tape.check()?;
    Ok(MetaGradient {
        theta_grad: theta.from_tape(&tape, &theta_grads),
        w_prime: w.from_tape(&tape, &w_prime),
        inner_value: tape.scalar(inner_out),
        outer_value: tape.scalar(outer_out),
    })
}

/// Forward value of a scalar function without recording gradients.
pub fn evaluate<F>(params: &ParamSet, f: F) -> Result<f64, AutodiffError>
where
    F: FnOnce(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.values().map(|v| tape.constant(v.clone())).collect();
    let out = f(&mut tape, &vars);
    tape.check()?;
    Ok(tape.scalar(out))
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

fn central_differences<E>(params: &ParamSet, epsilon: f64, mut eval: E) -> Result<Vec<f64>, AutodiffError>
where
    E: FnMut(&ParamSet) -> Result<f64, AutodiffError>,
{
    let base = params.flatten();
    let mut out = Vec::with_capacity(base.len());
    let mut probe = base.clone();
    for k in 0..base.len() {
        probe[k] = base[k] + epsilon;
        let plus = eval(&params.unflatten(&probe)?)?;
        probe[k] = base[k] - epsilon;
        let minus = eval(&params.unflatten(&probe)?)?;
        probe[k] = base[k];
        out.push((plus - minus) / (2.0 * epsilon));
    }
    Ok(out)
}

/// Worst relative error between [`grad`] and central differences of step `epsilon`.
pub fn finite_diff_check<F>(params: &ParamSet, epsilon: f64, f: F) -> Result<f64, AutodiffError>
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    assert!(epsilon > 0.0, "epsilon must be positive");
    let analytic = grad(params, &f)?.grads.flatten();
    let numeric = central_differences(params, epsilon, |p| evaluate(p, &f))?;
    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max))
}

/// `outer(w - eta * ∇_w inner(w, theta))` using only a first-order gradient.
pub fn lookahead_objective<I, O>(w: &ParamSet, theta: &ParamSet, eta: f64, inner: I, outer: O) -> Result<f64, AutodiffError>
where
    I: Fn(&mut Tape, &[Var], &[Var]) -> Var,
    O: Fn(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let w_vars = w.to_tape(&mut tape);
    let theta_vars: Vec<Var> = theta.values().map(|v| tape.constant(v.clone())).collect();
    let out = inner(&mut tape, &w_vars, &theta_vars);
    let g = tape.backward(out, &w_vars)?;
    let mut w_prime = w.from_tape(&tape, &w_vars);
    w_prime.add_scaled(-eta, &w.from_tape(&tape, &g))?;
    evaluate(&w_prime, outer)
}

/// Worst relative error between [`meta_grad`] and central differences over
/// `theta` of [`lookahead_objective`].
pub fn finite_diff_meta_check<I, O>(
    w: &ParamSet,
    theta: &ParamSet,
    eta: f64,
    epsilon: f64,
    inner: I,
    outer: O,
) -> Result<f64, AutodiffError>
where
    I: Fn(&mut Tape, &[Var], &[Var]) -> Var,
    O: Fn(&mut Tape, &[Var]) -> Var,
{
    let analytic = meta_grad(w, theta, eta, &inner, &outer)?.theta_grad.flatten();
    let numeric = central_differences(theta, epsilon, |t| lookahead_objective(w, t, eta, &inner, &outer))?;
    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max))
}
