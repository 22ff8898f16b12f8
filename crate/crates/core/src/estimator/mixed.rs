//! Gaussian random effects by penalized partial likelihood, with variance
//! components chosen by maximizing the Laplace-approximate integrated
//! log-likelihood.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::baseline::breslow_baseline;
use super::dataset::StrataSource;
use super::fixed::{checked_null, matrix_rows, newton_maximize, NewtonOptions};
use super::likelihood::{evaluate, Evaluation, FrailtyMode, Order};
use super::result::{Convergence, FitResult, FrailtyTable, VarianceComponent};
use crate::error::{Error, Result};
use crate::linalg::{brent_minimize, max_abs, spd_inverse, spd_logdet};
use crate::model::{Family, Ties};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixedOptions {
    pub sigma_lower: f64,
    pub sigma_upper: f64,
    /// Tolerance of the 1-D searches on `ln σ`.
    pub outer_tol: f64,
    /// Passes over the families in the coordinate search.
    pub max_cycles: usize,
    pub initial_sigma: f64,
    /// Search order; empty means species, region, dyadic.
    pub family_order: Vec<Family>,
    /// Refit each family at its lower bound to test it.
    pub test_components: bool,
}

impl Default for MixedOptions {
    fn default() -> Self {
        MixedOptions {
            sigma_lower: 1e-4,
            sigma_upper: 20.0,
            outer_tol: 1e-4,
            max_cycles: 4,
            initial_sigma: 0.5,
            family_order: Vec::new(),
            test_components: true,
        }
    }
}

/// Penalized fit at fixed variance components.
#[derive(Clone, Debug)]
pub struct PenalizedFit {
    /// `(β, b)` stacked.
    pub theta: Vec<f64>,
    /// Penalized objective, score and information at `theta`.
    pub eval: Evaluation,
    /// Unpenalized partial log-likelihood at `theta`.
    pub loglik: f64,
    pub penalized: f64,
    /// Laplace-approximate integrated log-likelihood.
    pub laplace: f64,
    pub iterations: usize,
    pub trace: Vec<f64>,
}

/// Per-entry penalty precision `1/σ²` of the stacked random effects.
fn precisions<S: StrataSource + ?Sized>(source: &S, sigmas: &[f64]) -> Vec<f64> {
    let layout = source.layout();
    let mut out = vec![0.0; layout.n_groups()];
    for (f, &s) in layout.families.iter().zip(sigmas) {
        out[f.offset..f.offset + f.size].iter_mut().for_each(|v| *v = 1.0 / (s * s));
    }
    out
}

/// Maximizes `ℓ(β, b) − Σ_f ‖b_f‖² / (2σ_f²)` jointly in `(β, b)`.
///
/// `sigmas` follows the family order of the source layout.
pub fn fit_penalized<S: StrataSource + ?Sized>(
    source: &S,
    ties: Ties,
    sigmas: &[f64],
    init: Option<&[f64]>,
    opts: &NewtonOptions,
) -> Result<PenalizedFit> {
    let layout = source.layout();
    if sigmas.len() != layout.families.len() {
        return Err(Error::invalid(format!("{} sigmas for {} families", sigmas.len(), layout.families.len())));
    }
    if sigmas.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::invalid("variance components must be positive"));
    }
    let p = layout.p();
    let q = layout.n_groups();
    let prec = precisions(source, sigmas);
    let objective = |theta: &[f64], order: Order| -> Result<Evaluation> {
        let mut e = evaluate(source, theta, FrailtyMode::Joint, ties, order)?;
        for (j, &w) in prec.iter().enumerate() {
            let b = theta[p + j];
            e.loglik -= 0.5 * w * b * b;
            if order >= Order::Gradient {
                e.gradient[p + j] -= w * b;
            }
            if order >= Order::Hessian {
                e.information[(p + j, p + j)] += w;
            }
        }
        Ok(e)
    };
    let start = match init {
        Some(t) if t.len() == p + q => t.to_vec(),
        _ => vec![0.0; p + q],
    };
    let out = newton_maximize(objective, start, None, opts)?;
    let penalty: f64 = prec.iter().enumerate().map(|(j, w)| 0.5 * w * out.theta[p + j].powi(2)).sum();
    let h_bb = out.eval.information.view((p, p), (q, q)).into_owned();
    let logdet = spd_logdet(&h_bb).ok_or_else(|| Error::invalid("random-effect information is not positive definite"))?;
    let log_sigma_terms: f64 = layout.families.iter().zip(sigmas).map(|(f, s)| f.size as f64 * s.ln()).sum();
    let penalized = out.eval.loglik;
    Ok(PenalizedFit {
        loglik: penalized + penalty,
        laplace: penalized - log_sigma_terms - 0.5 * logdet,
        penalized,
        theta: out.theta,
        eval: out.eval,
        iterations: out.iterations,
        trace: out.trace,
    })
}

struct Search<'a, S: ?Sized> {
    source: &'a S,
    ties: Ties,
    newton: &'a NewtonOptions,
    warm: Vec<f64>,
    evaluations: usize,
}

impl<S: StrataSource + ?Sized> Search<'_, S> {
    fn fit(&mut self, sigmas: &[f64]) -> Result<PenalizedFit> {
        self.evaluations += 1;
        let f = fit_penalized(self.source, self.ties, sigmas, Some(&self.warm), self.newton)?;
        self.warm.clone_from(&f.theta);
        Ok(f)
    }
}

/// Fits fixed and random effects. Variance components are searched one
/// family at a time by Brent's method on `ln σ`, each search followed by a
/// comparison with the exact lower bound.
pub fn fit_mixed<S: StrataSource + ?Sized>(
    source: &S,
    ties: Ties,
    newton: &NewtonOptions,
    opts: &MixedOptions,
) -> Result<FitResult> {
    let layout = source.layout();
    if layout.families.is_empty() {
        return super::fixed::fit_fixed(source, ties, newton);
    }
    let loglik_null = checked_null(source, ties)?.loglik;
    let p = layout.p();
    let nf = layout.families.len();
    let (lo, hi) = (opts.sigma_lower.ln(), opts.sigma_upper.ln());
    let order: Vec<usize> = if opts.family_order.is_empty() {
        (0..nf).collect()
    } else {
        opts.family_order
            .iter()
            .map(|fam| {
                layout.families.iter().position(|f| f.family == *fam).ok_or_else(|| {
                    Error::invalid(format!("family `{fam}` in the search order is not in the model"))
                })
            })
            .collect::<Result<_>>()?
    };

    let mut search = Search { source, ties, newton, warm: vec![0.0; p + layout.n_groups()], evaluations: 0 };
    let mut log_sigma = vec![opts.initial_sigma.clamp(opts.sigma_lower, opts.sigma_upper).ln(); nf];
    let cycles = if nf == 1 { 1 } else { opts.max_cycles.max(1) };
    for _ in 0..cycles {
        let before = log_sigma.clone();
        for &f in &order {
            let base = log_sigma.clone();
            let sig = |x: f64| {
                let mut s: Vec<f64> = base.iter().map(|v| v.exp()).collect();
                s[f] = x.exp();
                s
            };
            let best = brent_minimize(|x| search.fit(&sig(x)).map(|r| -r.laplace), lo, hi, opts.outer_tol, 200)?;
            let at_lower = -search.fit(&sig(lo))?.laplace;
            // the boundary wins ties up to rounding of the objective
            log_sigma[f] = if at_lower <= best.fx + 1e-9 * (1.0 + best.fx.abs()) { lo } else { best.x };
        }
        let moved = before.iter().zip(&log_sigma).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if moved < opts.outer_tol {
            break;
        }
    }

    let sigmas: Vec<f64> = log_sigma.iter().map(|v| v.exp()).collect();
    let final_fit = search.fit(&sigmas)?;
    let mut components = Vec::with_capacity(nf);
    for (f, fam) in layout.families.iter().enumerate() {
        let at_lower_bound = (log_sigma[f] - lo).abs() < opts.outer_tol;
        let (lr_chi2, p_value) = if at_lower_bound || !opts.test_components {
            (0.0, if at_lower_bound { 1.0 } else { f64::NAN })
        } else {
            let mut s0 = sigmas.clone();
            s0[f] = opts.sigma_lower;
            let null = search.fit(&s0)?;
            let chi2 = (2.0 * (final_fit.laplace - null.laplace)).max(0.0);
            let p = if chi2 > 0.0 { 0.5 * ChiSquared::new(1.0).expect("df 1").sf(chi2) } else { 1.0 };
            (chi2, p)
        };
        components.push(VarianceComponent {
            family: fam.family.name().to_string(),
            n_groups: fam.size,
            sigma: sigmas[f],
            at_lower_bound,
            lr_chi2,
            p_value,
            note: if at_lower_bound { "variance component ≈ 0, effect not supported".into() } else { String::new() },
        });
    }

    let cov_full = spd_inverse(&final_fit.eval.information)
        .ok_or_else(|| Error::RankDeficient { columns: layout.column_names() })?;
    let beta = final_fit.theta[..p].to_vec();
    let b = &final_fit.theta[p..];
    let frailties = layout
        .families
        .iter()
        .map(|f| FrailtyTable {
            family: f.family.name().to_string(),
            labels: f.labels.clone(),
            estimates: b[f.offset..f.offset + f.size].to_vec(),
            se: (0..f.size).map(|i| cov_full[(p + f.offset + i, p + f.offset + i)].max(0.0).sqrt()).collect(),
        })
        .collect();
    let cov_beta: DMatrix<f64> = cov_full.view((0, 0), (p, p)).into_owned();
    let baseline = breslow_baseline(source, &beta, Some(b))?;
    Ok(FitResult {
        columns: layout.columns.clone(),
        covariance: matrix_rows(&cov_beta),
        loglik_null,
        loglik_model: final_fit.laplace,
        loglik_conditional: final_fit.loglik,
        loglik_penalized: Some(final_fit.penalized),
        n_events: source.n_events(),
        n_strata: source.n_strata(),
        ties,
        variance_components: components,
        frailties,
        baseline,
        convergence: Convergence {
            iterations: final_fit.iterations,
            gradient_norm: max_abs(&final_fit.eval.gradient),
            outer_evaluations: search.evaluations,
            loglik_trace: final_fit.trace,
        },
        beta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariates::NO_GROUP;
    use crate::estimator::dataset::{Dataset, Layout, Stratum};
    use crate::estimator::fixed::fit_fixed;
    use crate::model::ColumnInfo;
    use rand::{Rng, SeedableRng};

    /// Strata over `n_regions` regions with a region effect `true_b` and one covariate.
    fn region_world(seed: u64, n_regions: usize, true_b: &[f64], n_strata: usize) -> (Dataset, Dataset) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<String> = (0..n_regions).map(|i| format!("r{i}")).collect();
        let grouped = Layout::fixed(vec![ColumnInfo::plain("x")]).with_family(Family::Region, labels.clone());
        let dummies = Layout::fixed(
            std::iter::once(ColumnInfo::plain("x")).chain(labels.iter().skip(1).map(|l| ColumnInfo::plain(l.clone()))).collect(),
        );
        let mut a = Vec::new();
        let mut b = Vec::new();
        for t in 0..n_strata {
            let xs: Vec<f64> = (0..n_regions).map(|_| rng.random_range(-1.0..1.0)).collect();
            let w: Vec<f64> = xs.iter().zip(true_b).map(|(x, bb)| (0.5 * x + bb).exp()).collect();
            let total: f64 = w.iter().sum();
            let mut u = rng.random_range(0.0..total);
            let mut ev = 0;
            for (i, wi) in w.iter().enumerate() {
                if u < *wi {
                    ev = i;
                    break;
                }
                u -= wi;
            }
            a.push(Stratum {
                time: t as f64,
                x: xs.clone(),
                groups: (0..n_regions as u32).map(|c| [NO_GROUP, c, NO_GROUP]).collect(),
                events: vec![ev],
                event_dyads: Vec::new(),
            });
            let rows: Vec<Vec<f64>> = (0..n_regions)
                .map(|c| std::iter::once(xs[c]).chain((1..n_regions).map(|k| if k == c { 1.0 } else { 0.0 })).collect())
                .collect();
            b.push(Stratum::fixed(t as f64, &rows, vec![ev]));
        }
        (Dataset::new(grouped, a, 0.0).unwrap(), Dataset::new(dummies, b, 0.0).unwrap())
    }

    #[test]
    fn large_sigma_approaches_dummy_fit() {
        let (ds, dummies) = region_world(1, 4, &[0.0, 0.8, -0.5, 0.3], 300);
        let fixed = fit_fixed(&dummies, Ties::Efron, &NewtonOptions::default()).unwrap();
        let pen = fit_penalized(&ds, Ties::Efron, &[1e4], None, &NewtonOptions::default()).unwrap();
        assert!((pen.theta[0] - fixed.beta[0]).abs() < 1e-4);
        // frailties are identified up to a shift; compare contrasts with region 0
        for k in 1..4 {
            let contrast = pen.theta[1 + k] - pen.theta[1];
            assert!((contrast - fixed.beta[k]).abs() < 1e-4, "{contrast} vs {}", fixed.beta[k]);
        }
    }

    #[test]
    fn small_sigma_shrinks_frailties_to_zero() {
        let (ds, _) = region_world(2, 4, &[0.0, 0.8, -0.5, 0.3], 200);
        let pen = fit_penalized(&ds, Ties::Efron, &[1e-5], None, &NewtonOptions::default()).unwrap();
        assert!(pen.theta[1..].iter().all(|b| b.abs() < 1e-7));
        let plain = fit_fixed(&ds, Ties::Efron, &NewtonOptions::default()).unwrap();
        assert!((pen.theta[0] - plain.beta[0]).abs() < 1e-6);
        // the Laplace term vanishes with the component
        assert!((pen.laplace - plain.loglik_model).abs() < 1e-6);
    }

    #[test]
    fn degenerate_component_ends_at_lower_bound() {
        let (ds, _) = region_world(3, 6, &[0.0; 6], 150);
        let fit = fit_mixed(&ds, Ties::Efron, &NewtonOptions::default(), &MixedOptions::default()).unwrap();
        let vc = &fit.variance_components[0];
        assert!(vc.sigma < 0.3, "sigma {}", vc.sigma);
    }

    #[test]
    fn strong_component_is_detected() {
        let b: Vec<f64> = (0..12).map(|i| if i % 2 == 0 { 1.2 } else { -1.2 }).collect();
        let (ds, _) = region_world(4, 12, &b, 600);
        let fit = fit_mixed(&ds, Ties::Efron, &NewtonOptions::default(), &MixedOptions::default()).unwrap();
        let vc = &fit.variance_components[0];
        assert!(vc.sigma > 0.6 && vc.sigma < 2.5, "sigma {}", vc.sigma);
        assert!(vc.p_value < 1e-4);
        assert_eq!(fit.frailties[0].estimates.len(), 12);
        assert!(fit.loglik_model > fit.loglik_null);
    }
}
