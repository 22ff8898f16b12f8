//! Model checking and comparison: Schoenfeld residuals, proportional-hazards
//! score tests, influence, likelihood-ratio tests, R², hazard ratios and
//! covariate correlations.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::estimator::likelihood::{stratum_eta, SlotMap};
use crate::estimator::{FitResult, StrataSource};
use crate::linalg::spd_inverse;
use crate::model::Ties;

/// Per-event residuals, aligned with the events in stratum order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualSet {
    pub columns: Vec<String>,
    pub event_times: Vec<f64>,
    /// Stratum of each event.
    pub strata: Vec<usize>,
    /// `x_event − E[x]` over the risk set.
    pub schoenfeld: Vec<Vec<f64>>,
    /// `d · V r + β̂`, when requested.
    pub scaled: Option<Vec<Vec<f64>>>,
    /// `V r`: approximate change `β̂ − β̂₍₋ᵢ₎` from dropping the event's stratum.
    pub dfbeta: Vec<Vec<f64>>,
}

/// Stratum-level quantities shared by residuals and the PH test.
struct StratumMoments {
    time: f64,
    /// Residual of each event.
    residuals: Vec<DVector<f64>>,
    /// Information contribution of the stratum.
    information: DMatrix<f64>,
}

fn stratum_moments<S: StrataSource + ?Sized>(
    source: &S,
    i: usize,
    beta: &[f64],
    frailties: Option<&[f64]>,
    ties: Ties,
) -> Result<StratumMoments> {
    let layout = source.layout();
    let p = layout.p();
    let s = source.stratum(i)?;
    let eta = stratum_eta(&s, p, beta, frailties.map(|b| (b, SlotMap::new(layout))));
    let m = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = eta.iter().map(|e| (e - m).exp()).collect();
    let n = w.len();
    let mut is_event = vec![false; n];
    for &e in &s.events {
        is_event[e] = true;
    }
    let (mut s_r, mut s_d) = (0.0, 0.0);
    let mut a = DVector::zeros(p);
    let mut b = DVector::zeros(p);
    let mut c_r = DMatrix::zeros(p, p);
    let mut c_d = DMatrix::zeros(p, p);
    for (r, &wr) in w.iter().enumerate() {
        let x = DVector::from_column_slice(s.row(r, p));
        s_r += wr;
        a.axpy(wr, &x, 1.0);
        c_r.ger(wr, &x, &x, 1.0);
        if is_event[r] {
            s_d += wr;
            b.axpy(wr, &x, 1.0);
            c_d.ger(wr, &x, &x, 1.0);
        }
    }
    let d = s.events.len();
    let mut mean_sum = DVector::zeros(p);
    let mut information = DMatrix::zeros(p, p);
    for k in 0..d {
        let frac = match ties {
            Ties::Efron => k as f64 / d as f64,
            Ties::Breslow => 0.0,
        };
        let den = (s_r - frac * s_d).max(s_r * f64::EPSILON);
        let mean = (&a - &b * frac) / den;
        let second = (&c_r - &c_d * frac) / den;
        information += second - &mean * mean.transpose();
        mean_sum += mean;
    }
    let avg = mean_sum / d as f64;
    let residuals = s.events.iter().map(|&e| DVector::from_column_slice(s.row(e, p)) - &avg).collect();
    Ok(StratumMoments { time: s.time, residuals, information })
}

fn all_moments<S: StrataSource + ?Sized>(
    source: &S,
    beta: &[f64],
    frailties: Option<&[f64]>,
    ties: Ties,
) -> Result<Vec<StratumMoments>> {
    use rayon::prelude::*;
    if beta.len() != source.layout().p() {
        return Err(Error::invalid("coefficient vector does not match the design"));
    }
    (0..source.n_strata()).into_par_iter().map(|i| stratum_moments(source, i, beta, frailties, ties)).collect()
}

fn covariance_matrix(fit: &FitResult) -> DMatrix<f64> {
    let p = fit.p();
    DMatrix::from_fn(p, p, |i, j| fit.covariance[i][j])
}

/// Schoenfeld residuals of a fit, with random effects as offsets.
pub fn schoenfeld<S: StrataSource + ?Sized>(fit: &FitResult, source: &S, scaled: bool) -> Result<ResidualSet> {
    let frailties = fit.stacked_frailties();
    let moments = all_moments(source, &fit.beta, frailties.as_deref(), fit.ties)?;
    let v = covariance_matrix(fit);
    let beta = DVector::from_column_slice(&fit.beta);
    let n_events: usize = moments.iter().map(|m| m.residuals.len()).sum();
    let mut out = ResidualSet {
        columns: fit.columns.iter().map(|c| c.name.clone()).collect(),
        event_times: Vec::with_capacity(n_events),
        strata: Vec::with_capacity(n_events),
        schoenfeld: Vec::with_capacity(n_events),
        scaled: scaled.then(Vec::new),
        dfbeta: Vec::with_capacity(n_events),
    };
    for (i, m) in moments.iter().enumerate() {
        for r in &m.residuals {
            out.event_times.push(m.time);
            out.strata.push(i);
            out.schoenfeld.push(r.iter().copied().collect());
            let vr = &v * r;
            if let Some(sc) = out.scaled.as_mut() {
                sc.push((&vr * n_events as f64 + &beta).iter().copied().collect());
            }
            out.dfbeta.push(vr.iter().copied().collect());
        }
    }
    Ok(out)
}

/// Time scale on which residual trends are tested.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeTransform {
    /// Rank of the event time; tied events share their average rank.
    #[default]
    Rank,
    Identity,
    Log,
}

impl TimeTransform {
    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "rank" => Some(TimeTransform::Rank),
            "identity" => Some(TimeTransform::Identity),
            "log" => Some(TimeTransform::Log),
            _ => None,
        }
    }
}

/// Transformed time of each stratum, centered over events.
fn stratum_times(moments: &[StratumMoments], transform: TimeTransform, origin: f64) -> Result<Vec<f64>> {
    let mut g = Vec::with_capacity(moments.len());
    let mut rank = 0.0;
    for m in moments {
        let d = m.residuals.len() as f64;
        g.push(match transform {
            TimeTransform::Rank => rank + (d + 1.0) / 2.0,
            TimeTransform::Identity => m.time,
            TimeTransform::Log => {
                let dt = m.time - origin;
                if dt <= 0.0 {
                    return Err(Error::invalid("log time transform needs event times after the window start"));
                }
                dt.ln()
            }
        });
        rank += d;
    }
    let total: f64 = moments.iter().zip(&g).map(|(m, gi)| m.residuals.len() as f64 * gi).sum();
    let n: f64 = moments.iter().map(|m| m.residuals.len() as f64).sum();
    let mean = total / n;
    Ok(g.into_iter().map(|v| v - mean).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhTerm {
    pub name: String,
    /// Correlation of the scaled residuals with transformed time.
    pub rho: f64,
    pub chi2: f64,
    pub df: usize,
    pub p: f64,
    pub testable: bool,
    pub note: String,
}

/// One point of a residual-versus-time plot.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendPoint {
    pub time: f64,
    pub residual: f64,
    pub smoothed: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhTest {
    pub transform: TimeTransform,
    pub terms: Vec<PhTerm>,
    pub global: PhTerm,
    /// Per covariate, the scaled residuals against time with a running mean.
    pub trends: Vec<Vec<TrendPoint>>,
}

fn chi2_sf(x: f64, df: usize) -> f64 {
    if df == 0 || !x.is_finite() {
        return f64::NAN;
    }
    if x <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(df as f64).expect("positive df").sf(x)
}

/// Score test of `β_j(t) = β_j + γ_j g(t)` at `γ = 0`, per covariate and jointly.
///
/// Low-level form: evaluates at any `beta` and uses `covariance` only for the
/// scaled residuals and trend data.
pub fn ph_test_at<S: StrataSource + ?Sized>(
    source: &S,
    beta: &[f64],
    frailties: Option<&[f64]>,
    ties: Ties,
    transform: TimeTransform,
) -> Result<PhTest> {
    let p = source.layout().p();
    let names = source.layout().column_names();
    let moments = all_moments(source, beta, frailties, ties)?;
    let g = stratum_times(&moments, transform, source.start_time())?;

    let mut u = DVector::zeros(p);
    let mut i_bb = DMatrix::zeros(p, p);
    let mut i_bg = DMatrix::zeros(p, p);
    let mut i_gg = DMatrix::zeros(p, p);
    for (m, &gi) in moments.iter().zip(&g) {
        for r in &m.residuals {
            u.axpy(gi, r, 1.0);
        }
        i_bb += &m.information;
        i_bg += &m.information * gi;
        i_gg += &m.information * (gi * gi);
    }

    // columns with no variation in any risk set cannot be tested
    let scale = i_bb.diagonal().iter().fold(0.0_f64, |a, &b| a.max(b.abs())).max(f64::MIN_POSITIVE);
    let testable: Vec<bool> = (0..p).map(|j| i_bb[(j, j)] > 1e-12 * scale).collect();
    let keep: Vec<usize> = (0..p).filter(|&j| testable[j]).collect();
    let k = keep.len();
    let sub = |m: &DMatrix<f64>| DMatrix::from_fn(k, k, |a, b| m[(keep[a], keep[b])]);
    let (kbb, kbg, kgg) = (sub(&i_bb), sub(&i_bg), sub(&i_gg));
    let uk = DVector::from_fn(k, |a, _| u[keep[a]]);
    let v_bb = spd_inverse(&kbb).ok_or_else(|| Error::RankDeficient { columns: keep.iter().map(|&j| names[j].clone()).collect() })?;
    let schur = &kgg - kbg.transpose() * &v_bb * &kbg;

    let v = v_bb.clone();
    let n_events: usize = moments.iter().map(|m| m.residuals.len()).sum();
    let mut scaled: Vec<Vec<(f64, f64)>> = vec![Vec::with_capacity(n_events); k];
    for (m, &gi) in moments.iter().zip(&g) {
        for r in &m.residuals {
            let rk = DVector::from_fn(k, |a, _| r[keep[a]]);
            let s = &v * rk * n_events as f64;
            for a in 0..k {
                scaled[a].push((gi, s[a] + beta[keep[a]]));
            }
        }
    }

    let mut terms = Vec::with_capacity(p);
    for j in 0..p {
        let Some(a) = keep.iter().position(|&c| c == j) else {
            terms.push(PhTerm {
                name: names[j].clone(),
                rho: f64::NAN,
                chi2: f64::NAN,
                df: 1,
                p: f64::NAN,
                testable: false,
                note: "not testable: no variation within risk sets".into(),
            });
            continue;
        };
        let chi2 = uk[a] * uk[a] / schur[(a, a)];
        let (chi2, note) = if schur[(a, a)] > 0.0 && chi2.is_finite() {
            (chi2, String::new())
        } else {
            (f64::NAN, "not testable: degenerate time interaction".into())
        };
        terms.push(PhTerm {
            name: names[j].clone(),
            rho: pearson(scaled[a].iter().map(|v| v.0), scaled[a].iter().map(|v| v.1)),
            testable: note.is_empty(),
            p: chi2_sf(chi2, 1),
            chi2,
            df: 1,
            note,
        });
    }
    let global_chi2 = match crate::linalg::cholesky(&schur) {
        Some(ch) => uk.dot(&ch.solve(&uk)),
        None => f64::NAN,
    };
    let global = PhTerm {
        name: "GLOBAL".into(),
        rho: f64::NAN,
        chi2: global_chi2,
        df: k,
        p: chi2_sf(global_chi2, k),
        testable: global_chi2.is_finite(),
        note: String::new(),
    };

    let mut trends = vec![Vec::new(); p];
    let times: Vec<f64> = moments.iter().flat_map(|m| std::iter::repeat_n(m.time, m.residuals.len())).collect();
    for (a, &j) in keep.iter().enumerate() {
        let res: Vec<f64> = scaled[a].iter().map(|v| v.1).collect();
        let smooth = running_mean(&res, (n_events / 10).max(5));
        trends[j] = times
            .iter()
            .zip(res.iter().zip(smooth))
            .map(|(&time, (&residual, smoothed))| TrendPoint { time, residual, smoothed })
            .collect();
    }
    Ok(PhTest { transform, terms, global, trends })
}

/// Proportional-hazards test of a fit.
pub fn ph_test<S: StrataSource + ?Sized>(fit: &FitResult, source: &S, transform: TimeTransform) -> Result<PhTest> {
    let frailties = fit.stacked_frailties();
    ph_test_at(source, &fit.beta, frailties.as_deref(), fit.ties, transform)
}

fn running_mean(v: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    let mut prefix = vec![0.0; v.len() + 1];
    for (i, x) in v.iter().enumerate() {
        prefix[i + 1] = prefix[i] + x;
    }
    (0..v.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(v.len());
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// Pearson correlation; `NaN` when either series is constant.
pub fn pearson(a: impl Iterator<Item = f64>, b: impl Iterator<Item = f64>) -> f64 {
    let pairs: Vec<(f64, f64)> = a.zip(b).collect();
    let n = pairs.len() as f64;
    if n < 2.0 {
        return f64::NAN;
    }
    let (ma, mb) = pairs.iter().fold((0.0, 0.0), |acc, p| (acc.0 + p.0 / n, acc.1 + p.1 / n));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in &pairs {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return f64::NAN;
    }
    (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrTest {
    pub chi2: f64,
    pub df: usize,
    pub p: f64,
}

/// `χ² = 2(ℓ_large − ℓ_small)` on `df` degrees of freedom.
pub fn lr_test_from_logliks(loglik_small: f64, loglik_large: f64, df: usize) -> Result<LrTest> {
    let chi2 = 2.0 * (loglik_large - loglik_small);
    let noise = 1e-8 * (1.0 + loglik_large.abs().max(loglik_small.abs()));
    if chi2 < -noise {
        return Err(Error::invalid(format!(
            "negative likelihood-ratio statistic {chi2:.6}: the larger model fits worse, so a fit has failed"
        )));
    }
    let chi2 = chi2.max(0.0);
    let p = if df == 0 { 1.0 } else { chi2_sf(chi2, df) };
    Ok(LrTest { chi2, df, p })
}

/// Checks that `small` is nested in `large` by covariate names, period
/// refinement and random-effect families.
pub fn check_nested(small: &FitResult, large: &FitResult) -> Result<()> {
    for c in &small.columns {
        if large.columns.iter().any(|l| l.name == c.name) {
            continue;
        }
        let refined = c.period.is_none()
            && c.covariate.is_some()
            && large.columns.iter().any(|l| l.covariate == c.covariate && l.period.is_some());
        if !refined {
            return Err(Error::NotNested(format!("column `{}` is not in the larger model", c.name)));
        }
    }
    for v in &small.variance_components {
        if large.variance_component(&v.family).is_none() {
            return Err(Error::NotNested(format!("random effect `{}` is not in the larger model", v.family)));
        }
    }
    if small.n_params() > large.n_params() {
        return Err(Error::NotNested("the smaller model has more parameters".into()));
    }
    if small.n_events != large.n_events {
        return Err(Error::NotNested("the models were fitted to different event sets".into()));
    }
    Ok(())
}

pub fn lr_test(small: &FitResult, large: &FitResult) -> Result<LrTest> {
    check_nested(small, large)?;
    lr_test_from_logliks(small.loglik_model, large.loglik_model, large.n_params() - small.n_params())
}

/// `1 − exp(−(2/n)(ℓ_model − ℓ_null))`, as a fraction.
pub fn r_squared(loglik_model: f64, loglik_null: f64, n_events: usize) -> f64 {
    1.0 - (-(2.0 / n_events as f64) * (loglik_model - loglik_null)).exp()
}

pub fn r_squared_fit(fit: &FitResult) -> f64 {
    r_squared(fit.loglik_model, fit.loglik_null, fit.n_events)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HazardRatio {
    pub name: String,
    pub delta: f64,
    pub multiplier: f64,
    /// `100 (multiplier − 1)`.
    pub percent_change: f64,
    pub lower: f64,
    pub upper: f64,
}

/// `exp(β Δ)` with a Wald interval at `level`.
pub fn hazard_ratio(name: &str, beta: f64, se: f64, delta: f64, level: f64) -> HazardRatio {
    let zq = Normal::standard().inverse_cdf(0.5 + level / 2.0);
    let multiplier = (beta * delta).exp();
    let a = ((beta - zq * se) * delta).exp();
    let b = ((beta + zq * se) * delta).exp();
    HazardRatio {
        name: name.to_string(),
        delta,
        multiplier,
        percent_change: 100.0 * (multiplier - 1.0),
        lower: a.min(b),
        upper: a.max(b),
    }
}

/// Hazard ratios of every coefficient; `per_unit` overrides the unit change `Δ = 1` by name.
pub fn hazard_ratio_report(fit: &FitResult, per_unit: &[(String, f64)], level: f64) -> Vec<HazardRatio> {
    fit.columns
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let delta = per_unit
                .iter()
                .find(|(n, _)| *n == c.name || c.covariate.is_some_and(|k| k.name() == n))
                .map_or(1.0, |v| v.1);
            hazard_ratio(&c.name, fit.beta[j], fit.se(j), delta, level)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub names: Vec<String>,
    pub r: Vec<Vec<f64>>,
    /// Pairs with `|r|` above the threshold.
    pub flagged: Vec<(String, String, f64)>,
    pub max_abs: f64,
}

/// Which design rows enter the correlations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationRows {
    #[default]
    Events,
    RiskSets,
}

/// Pearson correlations of the fixed-effect columns.
pub fn covariate_correlations<S: StrataSource + ?Sized>(
    source: &S,
    rows: CorrelationRows,
    threshold: f64,
) -> Result<CorrelationMatrix> {
    let p = source.layout().p();
    let names = source.layout().column_names();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); p];
    for i in 0..source.n_strata() {
        let s = source.stratum(i)?;
        let idx: Vec<usize> = match rows {
            CorrelationRows::Events => s.events.clone(),
            CorrelationRows::RiskSets => (0..s.n_rows(p)).collect(),
        };
        for r in idx {
            for (j, v) in s.row(r, p).iter().enumerate() {
                cols[j].push(*v);
            }
        }
    }
    let mut r = vec![vec![0.0; p]; p];
    let mut flagged = Vec::new();
    let mut max_abs = 0.0_f64;
    for a in 0..p {
        for b in 0..p {
            r[a][b] = if a == b && cols[a].iter().any(|v| *v != cols[a][0]) {
                1.0
            } else {
                pearson(cols[a].iter().copied(), cols[b].iter().copied())
            };
            if a < b && r[a][b].is_finite() {
                max_abs = max_abs.max(r[a][b].abs());
                if r[a][b].abs() > threshold {
                    flagged.push((names[a].clone(), names[b].clone(), r[a][b]));
                }
            }
        }
    }
    Ok(CorrelationMatrix { names, r, flagged, max_abs })
}
