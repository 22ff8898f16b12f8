//! Breslow estimator of the cumulative baseline hazard.

use super::dataset::StrataSource;
use super::likelihood::{stratum_eta, SlotMap};
use super::result::BaselinePoint;
use crate::error::{Error, Result};

/// `Λ₀(t) = Σ_{t_i ≤ t} d_i / Σ_{R(t_i)} exp(η̂)`, starting at `(t_b, 0, 0)`.
pub fn breslow_baseline<S: StrataSource + ?Sized>(
    source: &S,
    beta: &[f64],
    frailties: Option<&[f64]>,
) -> Result<Vec<BaselinePoint>> {
    let layout = source.layout();
    let p = layout.p();
    if beta.len() != p {
        return Err(Error::invalid(format!("beta has {} entries, expected {p}", beta.len())));
    }
    let map = SlotMap::new(layout);
    let mut out = Vec::with_capacity(source.n_strata() + 1);
    out.push(BaselinePoint { time: source.start_time(), increment: 0.0, cumulative: 0.0 });
    let mut cumulative = 0.0;
    for i in 0..source.n_strata() {
        let s = source.stratum(i)?;
        let eta = stratum_eta(&s, p, beta, frailties.map(|b| (b, map)));
        let m = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = eta.iter().map(|e| (e - m).exp()).sum();
        let increment = s.events.len() as f64 * (-m).exp() / total;
        cumulative += increment;
        out.push(BaselinePoint { time: s.time, increment, cumulative });
    }
    Ok(out)
}
