//! Partial log-likelihood of the event sequence and its first two derivatives.
//!
//! Each stratum contributes, for `d` tied events with rows `D` in risk set `R`,
//! `Σ_D η − Σ_{k<d} log(S_R − a_k S_D)` with `S_X = Σ_X exp(η)`, where
//! `a_k = k/d` under Efron and `0` under Breslow.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::dataset::{Layout, Stratum, StrataSource};
use crate::covariates::NO_GROUP;
use crate::error::{Error, Result};
use crate::model::Ties;

/// How random effects enter the linear predictor.
#[derive(Clone, Copy, Debug)]
pub enum FrailtyMode<'a> {
    /// Ignored.
    None,
    /// Held fixed at the given values; derivatives are taken in `β` only.
    Offset(&'a [f64]),
    /// Part of the parameter vector `(β, b)`.
    Joint,
}

/// Highest derivative to compute.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Order {
    Value,
    Gradient,
    Hessian,
}

/// Log-likelihood, score and observed information (negative Hessian).
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub loglik: f64,
    pub gradient: DVector<f64>,
    pub information: DMatrix<f64>,
}

impl Evaluation {
    fn zeros(dim: usize, order: Order) -> Self {
        let g = if order >= Order::Gradient { dim } else { 0 };
        let h = if order >= Order::Hessian { dim } else { 0 };
        Evaluation { loglik: 0.0, gradient: DVector::zeros(g), information: DMatrix::zeros(h, h) }
    }

    fn absorb(&mut self, other: Evaluation) {
        self.loglik += other.loglik;
        self.gradient += other.gradient;
        self.information += other.information;
    }
}

/// Column offsets of the random-effect slots within the joint parameter.
#[derive(Clone, Copy, Debug)]
pub(crate) struct SlotMap {
    offsets: [Option<usize>; 3],
}

impl SlotMap {
    pub(crate) fn new(layout: &Layout) -> Self {
        SlotMap { offsets: layout.slot_offsets() }
    }

    /// Stacked random-effect indices touched by a row.
    #[inline]
    pub(crate) fn indices(self, groups: [u32; 3]) -> impl Iterator<Item = usize> {
        groups.into_iter().zip(self.offsets).filter_map(|(g, off)| match off {
            Some(o) if g != NO_GROUP => Some(o + g as usize),
            _ => None,
        })
    }
}

/// Linear predictor of every row of a stratum.
pub(crate) fn stratum_eta(stratum: &Stratum, p: usize, beta: &[f64], frailty: Option<(&[f64], SlotMap)>) -> Vec<f64> {
    let n = stratum.n_rows(p);
    (0..n)
        .map(|i| {
            let mut eta: f64 = stratum.row(i, p).iter().zip(beta).map(|(x, b)| x * b).sum();
            if let Some((b, map)) = frailty {
                if !stratum.groups.is_empty() {
                    eta += map.indices(stratum.groups[i]).map(|j| b[j]).sum::<f64>();
                }
            }
            eta
        })
        .collect()
}

/// Tie-correction weights of one stratum.
struct TieTerms {
    /// `Σ_k log den_k` (with the max shift removed).
    log_den: f64,
    c1: f64,
    c2: f64,
    alpha: f64,
    beta2: f64,
    gamma: f64,
}

fn tie_terms(s_r: f64, s_d: f64, d: usize, ties: Ties) -> TieTerms {
    let mut t = TieTerms { log_den: 0.0, c1: 0.0, c2: 0.0, alpha: 0.0, beta2: 0.0, gamma: 0.0 };
    for k in 0..d {
        let a = match ties {
            Ties::Efron => k as f64 / d as f64,
            Ties::Breslow => 0.0,
        };
        // guard the cancellation when every risk row is an event
        let den = (s_r - a * s_d).max(s_r * f64::EPSILON);
        t.log_den += den.ln();
        t.c1 += 1.0 / den;
        t.c2 += a / den;
        t.alpha += 1.0 / (den * den);
        t.beta2 -= a / (den * den);
        t.gamma += a * a / (den * den);
    }
    t
}

struct Kernel<'a> {
    p: usize,
    dim: usize,
    beta: &'a [f64],
    joint_b: Option<&'a [f64]>,
    offset_b: Option<&'a [f64]>,
    map: SlotMap,
    ties: Ties,
    order: Order,
}

impl Kernel<'_> {
    fn stratum(&self, s: &Stratum, acc: &mut Evaluation) {
        let p = self.p;
        let frailty = match (self.joint_b, self.offset_b) {
            (Some(b), _) | (None, Some(b)) => Some((b, self.map)),
            _ => None,
        };
        let eta = stratum_eta(s, p, self.beta, frailty);
        let m = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = eta.iter().map(|e| (e - m).exp()).collect();
        let s_r: f64 = w.iter().sum();
        let s_d: f64 = s.events.iter().map(|&i| w[i]).sum();
        let d = s.events.len();
        let t = tie_terms(s_r, s_d, d, self.ties);
        acc.loglik += s.events.iter().map(|&i| eta[i]).sum::<f64>() - d as f64 * m - t.log_den;
        if self.order == Order::Value {
            return;
        }

        let joint = self.joint_b.is_some() && !s.groups.is_empty();
        let mut a_vec = DVector::<f64>::zeros(self.dim);
        let mut b_vec = DVector::<f64>::zeros(self.dim);
        let mut is_event = vec![false; w.len()];
        for &i in &s.events {
            is_event[i] = true;
        }
        let hess = self.order == Order::Hessian;
        let mut idx: Vec<usize> = Vec::with_capacity(3);
        for (i, &wi) in w.iter().enumerate() {
            let x = s.row(i, p);
            idx.clear();
            if joint {
                idx.extend(self.map.indices(s.groups[i]).map(|j| p + j));
            }
            add_sparse(&mut a_vec, x, &idx, wi);
            if is_event[i] {
                add_sparse(&mut b_vec, x, &idx, wi);
                add_sparse(&mut acc.gradient, x, &idx, 1.0);
            }
            if hess {
                let coef = if is_event[i] { t.c1 - t.c2 } else { t.c1 } * wi;
                add_outer_sparse(&mut acc.information, x, &idx, coef);
            }
        }
        acc.gradient.axpy(-t.c1, &a_vec, 1.0);
        acc.gradient.axpy(t.c2, &b_vec, 1.0);
        if hess {
            let info = &mut acc.information;
            info.ger(-t.alpha, &a_vec, &a_vec, 1.0);
            if t.beta2 != 0.0 {
                info.ger(-t.beta2, &a_vec, &b_vec, 1.0);
                info.ger(-t.beta2, &b_vec, &a_vec, 1.0);
            }
            if t.gamma != 0.0 {
                info.ger(-t.gamma, &b_vec, &b_vec, 1.0);
            }
        }
    }
}

/// `v += c · z` for `z = (x, e_idx)`.
#[inline]
fn add_sparse(v: &mut DVector<f64>, x: &[f64], idx: &[usize], c: f64) {
    for (j, xj) in x.iter().enumerate() {
        v[j] += c * xj;
    }
    for &j in idx {
        v[j] += c;
    }
}

/// `m += c · z zᵀ` for `z = (x, e_idx)`.
#[inline]
fn add_outer_sparse(m: &mut DMatrix<f64>, x: &[f64], idx: &[usize], c: f64) {
    let p = x.len();
    for b in 0..p {
        let cb = c * x[b];
        if cb == 0.0 {
            continue;
        }
        for a in 0..p {
            m[(a, b)] += cb * x[a];
        }
    }
    for &j in idx {
        for (a, xa) in x.iter().enumerate() {
            let v = c * xa;
            m[(a, j)] += v;
            m[(j, a)] += v;
        }
        for &k in idx {
            m[(j, k)] += c;
        }
    }
}

/// Number of reduction blocks: fixed by the problem, not by the thread count.
fn n_blocks(n_strata: usize, dim: usize) -> usize {
    let cap = if dim > 2000 { 2 } else { 8 };
    n_strata.clamp(1, cap)
}

/// Evaluates the partial log-likelihood and, depending on `order`, its score
/// and observed information.
///
/// Under [`FrailtyMode::Joint`] the parameter is `(β, b)` stacked, with `b`
/// laid out as in the source's [`Layout`].
pub fn evaluate<S: StrataSource + ?Sized>(
    source: &S,
    theta: &[f64],
    frailty: FrailtyMode<'_>,
    ties: Ties,
    order: Order,
) -> Result<Evaluation> {
    let layout = source.layout();
    let p = layout.p();
    let q = layout.n_groups();
    let (dim, joint_b, offset_b) = match frailty {
        FrailtyMode::None => (p, None, None),
        FrailtyMode::Offset(b) => {
            if b.len() != q {
                return Err(Error::invalid(format!("offset has {} entries, layout has {q} groups", b.len())));
            }
            (p, None, Some(b))
        }
        FrailtyMode::Joint => (p + q, Some(&theta[p.min(theta.len())..]), None),
    };
    if theta.len() != dim {
        return Err(Error::invalid(format!("parameter has {} entries, expected {dim}", theta.len())));
    }
    let kernel = Kernel {
        p,
        dim,
        beta: &theta[..p],
        joint_b,
        offset_b,
        map: SlotMap::new(layout),
        ties,
        order,
    };
    let n = source.n_strata();
    let nb = n_blocks(n, dim);
    let parts: Vec<Result<Evaluation>> = (0..nb)
        .into_par_iter()
        .map(|blk| {
            let mut acc = Evaluation::zeros(dim, order);
            for i in (blk * n / nb)..((blk + 1) * n / nb) {
                let s = source.stratum(i)?;
                kernel.stratum(&s, &mut acc);
            }
            Ok(acc)
        })
        .collect();
    let mut total = Evaluation::zeros(dim, order);
    for part in parts {
        total.absorb(part?);
    }
    if !total.loglik.is_finite() {
        return Err(Error::invalid("partial log-likelihood is not finite"));
    }
    Ok(total)
}

/// Partial log-likelihood at `beta`, random effects ignored.
pub fn partial_loglik<S: StrataSource + ?Sized>(source: &S, beta: &[f64], ties: Ties) -> Result<f64> {
    Ok(evaluate(source, beta, FrailtyMode::None, ties, Order::Value)?.loglik)
}

/// Score vector and observed information at `beta`, random effects ignored.
pub fn score_and_hessian<S: StrataSource + ?Sized>(
    source: &S,
    beta: &[f64],
    ties: Ties,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let e = evaluate(source, beta, FrailtyMode::None, ties, Order::Hessian)?;
    Ok((e.gradient, e.information))
}

/// Conditional probability of each risk-set row being the next event, per stratum.
pub fn event_probabilities<S: StrataSource + ?Sized>(
    source: &S,
    beta: &[f64],
    frailties: Option<&[f64]>,
) -> Result<Vec<Vec<f64>>> {
    let layout = source.layout();
    let p = layout.p();
    if beta.len() != p {
        return Err(Error::invalid(format!("beta has {} entries, expected {p}", beta.len())));
    }
    let map = SlotMap::new(layout);
    (0..source.n_strata())
        .into_par_iter()
        .map(|i| {
            let s = source.stratum(i)?;
            let eta = stratum_eta(&s, p, beta, frailties.map(|b| (b, map)));
            Ok(softmax(&eta))
        })
        .collect()
}

/// Numerically stable softmax.
pub fn softmax(eta: &[f64]) -> Vec<f64> {
    let m = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = eta.iter().map(|e| (e - m).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::dataset::Dataset;
    use crate::model::ColumnInfo;
    use proptest::prelude::*;

    fn two_species() -> Dataset {
        let layout = Layout::fixed(vec![ColumnInfo::plain("distance")]);
        let s1 = Stratum::fixed(1.0, &[vec![3.0], vec![2.0], vec![1.0], vec![3.0]], vec![2]);
        let s2 = Stratum::fixed(2.0, &[vec![3.0], vec![2.0], vec![2.0]], vec![0]);
        Dataset::new(layout, vec![s1, s2], 0.0).unwrap()
    }

    /// Direct transcription of the Efron/Breslow likelihood for one covariate.
    fn brute_loglik(ds: &Dataset, beta: &[f64], ties: Ties) -> f64 {
        let p = beta.len();
        let mut ll = 0.0;
        for s in ds.strata() {
            let lin = |i: usize| -> f64 { s.row(i, p).iter().zip(beta).map(|(a, b)| a * b).sum() };
            let rr: Vec<f64> = (0..s.n_rows(p)).map(|i| lin(i).exp()).collect();
            let total: f64 = rr.iter().sum();
            let tied: f64 = s.events.iter().map(|&i| rr[i]).sum();
            let d = s.events.len() as f64;
            for (k, &i) in s.events.iter().enumerate() {
                let frac = if ties == Ties::Efron { k as f64 / d } else { 0.0 };
                ll += lin(i) - (total - frac * tied).ln();
            }
        }
        ll
    }

    #[test]
    fn two_species_loglik_at_minus_one() {
        let ds = two_species();
        let ll = partial_loglik(&ds, &[-1.0], Ties::Efron).unwrap();
        let p1 = (-1f64).exp() / ((-1f64).exp() + (-2f64).exp() + 2.0 * (-3f64).exp());
        let p2 = (-3f64).exp() / ((-3f64).exp() + 2.0 * (-2f64).exp());
        assert!((ll - (p1.ln() + p2.ln())).abs() < 1e-12);
        assert!((ll + 2.356).abs() < 5e-4);
    }

    #[test]
    fn null_loglik_is_uniform_choice() {
        let ds = two_species();
        let ll = partial_loglik(&ds, &[0.0], Ties::Breslow).unwrap();
        assert!((ll + 4f64.ln() + 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn forced_event_has_zero_loglik() {
        let layout = Layout::fixed(vec![ColumnInfo::plain("x")]);
        let ds = Dataset::new(layout, vec![Stratum::fixed(1.0, &[vec![4.2]], vec![0])], 0.0).unwrap();
        assert_eq!(partial_loglik(&ds, &[1.7], Ties::Efron).unwrap(), 0.0);
    }

    #[test]
    fn all_rows_tied_is_finite() {
        let layout = Layout::fixed(vec![ColumnInfo::plain("x")]);
        let s = Stratum::fixed(1.0, &[vec![0.5], vec![-1.0], vec![2.0]], vec![0, 1, 2]);
        let ds = Dataset::new(layout, vec![s], 0.0).unwrap();
        for ties in [Ties::Efron, Ties::Breslow] {
            let e = evaluate(&ds, &[0.3], FrailtyMode::None, ties, Order::Hessian).unwrap();
            assert!(e.loglik.is_finite());
            assert!(e.gradient[0].is_finite() && e.information[(0, 0)].is_finite());
        }
    }

    fn random_dataset(seed: u64, p: usize, tied: bool) -> Dataset {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let layout = Layout::fixed((0..p).map(|j| ColumnInfo::plain(format!("x{j}"))).collect());
        let strata = (0..6)
            .map(|t| {
                let n = rng.random_range(3..9);
                let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
                let d = if tied { rng.random_range(1..n.min(4)) } else { 1 };
                Stratum::fixed(t as f64, &rows, (0..d).collect())
            })
            .collect();
        Dataset::new(layout, strata, 0.0).unwrap()
    }

    #[test]
    fn breslow_and_efron_agree_without_ties() {
        let ds = random_dataset(3, 3, false);
        let beta = [0.4, -0.2, 0.9];
        let a = partial_loglik(&ds, &beta, Ties::Efron).unwrap();
        let b = partial_loglik(&ds, &beta, Ties::Breslow).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn matches_direct_transcription_with_ties() {
        for seed in 0..5 {
            let ds = random_dataset(seed, 2, true);
            for ties in [Ties::Efron, Ties::Breslow] {
                let beta = [0.7, -1.1];
                let a = partial_loglik(&ds, &beta, ties).unwrap();
                assert!((a - brute_loglik(&ds, &beta, ties)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn hessian_matches_finite_differences_of_score() {
        let ds = random_dataset(11, 3, true);
        let beta = [0.2, -0.5, 0.3];
        let e = evaluate(&ds, &beta, FrailtyMode::None, Ties::Efron, Order::Hessian).unwrap();
        let h = 1e-5;
        for j in 0..3 {
            let mut up = beta;
            up[j] += h;
            let mut dn = beta;
            dn[j] -= h;
            let gu = evaluate(&ds, &up, FrailtyMode::None, Ties::Efron, Order::Gradient).unwrap().gradient;
            let gd = evaluate(&ds, &dn, FrailtyMode::None, Ties::Efron, Order::Gradient).unwrap().gradient;
            for i in 0..3 {
                let fd = -(gu[i] - gd[i]) / (2.0 * h);
                assert!((fd - e.information[(i, j)]).abs() < 1e-6, "({i},{j}) {fd} vs {}", e.information[(i, j)]);
            }
        }
    }

    fn grouped_dataset() -> Dataset {
        let layout = Layout::fixed(vec![ColumnInfo::plain("x")])
            .with_family(crate::model::Family::Species, vec!["a".into(), "b".into()])
            .with_family(crate::model::Family::Region, vec!["r".into(), "s".into(), "u".into()]);
        let mk = |time: f64, rows: &[(f64, u32, u32)], events: Vec<usize>| Stratum {
            time,
            x: rows.iter().map(|r| r.0).collect(),
            groups: rows.iter().map(|r| [r.1, r.2, NO_GROUP]).collect(),
            event_dyads: Vec::new(),
            events,
        };
        let s1 = mk(1.0, &[(0.5, 0, 0), (1.0, 0, 1), (-0.3, 1, 2), (0.2, 1, 0)], vec![1, 2]);
        let s2 = mk(2.0, &[(0.5, 0, 0), (0.1, 1, 1), (0.2, 1, 0)], vec![0]);
        Dataset::new(layout, vec![s1, s2], 0.0).unwrap()
    }

    #[test]
    fn joint_derivatives_match_finite_differences() {
        let ds = grouped_dataset();
        let theta = [0.3, 0.2, -0.1, 0.4, -0.6, 0.05];
        let e = evaluate(&ds, &theta, FrailtyMode::Joint, Ties::Efron, Order::Hessian).unwrap();
        let h = 1e-6;
        for j in 0..theta.len() {
            let mut up = theta;
            up[j] += h;
            let mut dn = theta;
            dn[j] -= h;
            let lu = evaluate(&ds, &up, FrailtyMode::Joint, Ties::Efron, Order::Gradient).unwrap();
            let ld = evaluate(&ds, &dn, FrailtyMode::Joint, Ties::Efron, Order::Gradient).unwrap();
            let fd = (lu.loglik - ld.loglik) / (2.0 * h);
            assert!((fd - e.gradient[j]).abs() < 1e-7);
            for i in 0..theta.len() {
                let fdh = -(lu.gradient[i] - ld.gradient[i]) / (2.0 * h);
                assert!((fdh - e.information[(i, j)]).abs() < 1e-6);
            }
        }
        // an offset equal to the joint b reproduces the same value
        let off = evaluate(&ds, &theta[..1], FrailtyMode::Offset(&theta[1..]), Ties::Efron, Order::Gradient).unwrap();
        assert!((off.loglik - e.loglik).abs() < 1e-12);
        assert!((off.gradient[0] - e.gradient[0]).abs() < 1e-12);
    }

    #[test]
    fn evaluation_is_deterministic() {
        let ds = random_dataset(5, 3, true);
        let beta = [0.1, 0.2, 0.3];
        let a = evaluate(&ds, &beta, FrailtyMode::None, Ties::Efron, Order::Hessian).unwrap();
        let b = evaluate(&ds, &beta, FrailtyMode::None, Ties::Efron, Order::Hessian).unwrap();
        assert_eq!(a.loglik.to_bits(), b.loglik.to_bits());
        assert_eq!(a.information, b.information);
    }

    proptest! {
        #[test]
        fn probabilities_sum_to_one(seed in 0u64..1000, b0 in -5.0f64..5.0, b1 in -5.0f64..5.0) {
            let ds = random_dataset(seed, 2, false);
            for probs in event_probabilities(&ds, &[b0, b1], None).unwrap() {
                let total: f64 = probs.iter().sum();
                prop_assert!((total - 1.0).abs() < 1e-12);
                prop_assert!(probs.iter().all(|&p| p >= 0.0));
            }
        }

        #[test]
        fn location_invariance(seed in 0u64..1000, shift in -50.0f64..50.0, b0 in -2.0f64..2.0) {
            let ds = random_dataset(seed, 2, true);
            let shifted: Vec<Stratum> = ds
                .strata()
                .iter()
                .map(|s| {
                    let mut s = s.clone();
                    for i in 0..s.n_rows(2) {
                        s.x[i * 2] += shift * (s.time + 1.0);
                    }
                    s
                })
                .collect();
            let moved = Dataset::new(ds.layout().clone(), shifted, 0.0).unwrap();
            for ties in [Ties::Efron, Ties::Breslow] {
                let a = partial_loglik(&ds, &[b0, 0.5], ties).unwrap();
                let b = partial_loglik(&moved, &[b0, 0.5], ties).unwrap();
                prop_assert!((a - b).abs() < 1e-8 * (1.0 + a.abs()));
            }
        }

        #[test]
        fn efron_equals_breslow_without_ties(seed in 0u64..1000, b0 in -3.0f64..3.0, b1 in -3.0f64..3.0) {
            let ds = random_dataset(seed, 2, false);
            let a = partial_loglik(&ds, &[b0, b1], Ties::Efron).unwrap();
            let b = partial_loglik(&ds, &[b0, b1], Ties::Breslow).unwrap();
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
