//! Newton–Raphson maximization and the fixed-effects fit.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::baseline::breslow_baseline;
use super::dataset::{Layout, StrataSource};
use super::likelihood::{evaluate, Evaluation, FrailtyMode, Order};
use super::result::{Convergence, FitResult};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, dependent_columns, max_abs, spd_inverse};
use crate::model::Ties;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NewtonOptions {
    /// Convergence when the max-norm of the score falls below this.
    pub gradient_tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions { gradient_tol: 1e-8, max_iter: 100, max_halvings: 40 }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct NewtonOutcome {
    pub theta: Vec<f64>,
    /// Evaluation at `theta` with the Hessian.
    pub eval: Evaluation,
    pub iterations: usize,
    pub trace: Vec<f64>,
}

/// Relative Newton decrement below which a stalled line search counts as converged.
const STALL_DECREMENT: f64 = 1e-10;

/// Solves `info · step = grad`, adding a ridge when `info` is not positive definite.
fn newton_step(info: &DMatrix<f64>, grad: &DVector<f64>) -> DVector<f64> {
    if let Some(ch) = cholesky(info) {
        return ch.solve(grad);
    }
    let scale = info.diagonal().iter().fold(0.0_f64, |a, &b| a.max(b.abs())).max(1e-12);
    let mut ridge = 1e-10 * scale;
    loop {
        let mut m = info.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += ridge;
        }
        if let Some(ch) = cholesky(&m) {
            return ch.solve(grad);
        }
        ridge *= 10.0;
        if !ridge.is_finite() {
            return grad.clone();
        }
    }
}

/// Maximizes `f` by Newton's method with step halving.
///
/// `f(θ, order)` returns the objective and, as requested, its gradient and
/// negative Hessian; `first` is its full evaluation at `init` when already
/// known. Accepted iterates never decrease the objective.
pub(crate) fn newton_maximize(
    mut f: impl FnMut(&[f64], Order) -> Result<Evaluation>,
    init: Vec<f64>,
    first: Option<Evaluation>,
    opts: &NewtonOptions,
) -> Result<NewtonOutcome> {
    let mut theta = init;
    let mut eval = match first {
        Some(e) => e,
        None => f(&theta, Order::Hessian)?,
    };
    let mut trace = vec![eval.loglik];
    let mut iterations = 0;
    loop {
        let gnorm = max_abs(&eval.gradient);
        if gnorm < opts.gradient_tol {
            return Ok(NewtonOutcome { theta, eval, iterations, trace });
        }
        if iterations >= opts.max_iter {
            return Err(Error::NonConvergence { iterations, gradient_norm: gnorm, trace });
        }
        let step = newton_step(&eval.information, &eval.gradient);
        let decrement = eval.gradient.dot(&step);
        // the predicted gain is below what the objective can resolve
        if decrement.abs() <= 1e-20 * (1.0 + eval.loglik.abs()) {
            return Ok(NewtonOutcome { theta, eval, iterations, trace });
        }
        // no strict ascent left and the predicted gain is at rounding level
        let stalled = decrement <= STALL_DECREMENT * (1.0 + eval.loglik.abs());
        // shorter steps cannot resolve a gain at rounding level
        let halvings = if stalled { 0 } else { opts.max_halvings };
        let mut scale = 1.0;
        let mut accepted = None;
        for k in 0..=halvings {
            let cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, s)| t + scale * s).collect();
            // the full step is usually accepted, so derivatives come with its value
            let order = if k == 0 { Order::Hessian } else { Order::Value };
            if let Ok(v) = f(&cand, order) {
                if v.loglik > eval.loglik || (v.loglik == eval.loglik && !stalled) {
                    let v = if k == 0 { v } else { f(&cand, Order::Hessian)? };
                    accepted = Some((cand, v));
                    break;
                }
            }
            scale *= 0.5;
        }
        let Some(cand) = accepted else {
            if stalled {
                return Ok(NewtonOutcome { theta, eval, iterations, trace });
            }
            return Err(Error::NonConvergence { iterations, gradient_norm: gnorm, trace });
        };
        (theta, eval) = cand;
        trace.push(eval.loglik);
        iterations += 1;
    }
}

/// Full evaluation at `β = 0` without random effects, after checking that its
/// information is nonsingular; dependent columns are named in the error.
pub(crate) fn checked_null<S: StrataSource + ?Sized>(source: &S, ties: Ties) -> Result<Evaluation> {
    let p = source.layout().p();
    let e = evaluate(source, &vec![0.0; p], FrailtyMode::None, ties, Order::Hessian)?;
    if p > 0 {
        check_rank(source.layout(), &e.information)?;
    }
    Ok(e)
}

fn check_rank(layout: &Layout, info: &DMatrix<f64>) -> Result<()> {
    let dep = dependent_columns(info, 1e-9);
    if dep.is_empty() {
        return Ok(());
    }
    let names = layout.column_names();
    let mut cols: Vec<usize> = Vec::new();
    for (j, partners) in dep {
        for k in partners.into_iter().chain(std::iter::once(j)) {
            if !cols.contains(&k) {
                cols.push(k);
            }
        }
    }
    cols.sort_unstable();
    Err(Error::RankDeficient { columns: cols.into_iter().map(|j| names[j].clone()).collect() })
}

pub(crate) fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Maximizes the partial likelihood in the fixed effects, starting from `β = 0`.
/// Random-effect groups in the layout are ignored.
pub fn fit_fixed<S: StrataSource + ?Sized>(source: &S, ties: Ties, opts: &NewtonOptions) -> Result<FitResult> {
    let layout = source.layout();
    let p = layout.p();
    let null = checked_null(source, ties)?;
    let loglik_null = null.loglik;
    let out = newton_maximize(
        |theta, order| evaluate(source, theta, FrailtyMode::None, ties, order),
        vec![0.0; p],
        Some(null),
        opts,
    )?;
    let covariance = spd_inverse(&out.eval.information)
        .ok_or_else(|| Error::RankDeficient { columns: layout.column_names() })?;
    let baseline = breslow_baseline(source, &out.theta, None)?;
    Ok(FitResult {
        columns: layout.columns.clone(),
        beta: out.theta.clone(),
        covariance: matrix_rows(&covariance),
        loglik_null,
        loglik_model: out.eval.loglik,
        loglik_conditional: out.eval.loglik,
        loglik_penalized: None,
        n_events: source.n_events(),
        n_strata: source.n_strata(),
        ties,
        variance_components: Vec::new(),
        frailties: Vec::new(),
        baseline,
        convergence: Convergence {
            iterations: out.iterations,
            gradient_norm: max_abs(&out.eval.gradient),
            outer_evaluations: 0,
            loglik_trace: out.trace,
        },
    })
}
