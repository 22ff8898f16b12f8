//! Fitted-model summaries.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::model::{ColumnInfo, Ties};

/// One fixed-effect coefficient with its Wald statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub covariate: String,
    pub period: String,
    pub unit: String,
    pub estimate: f64,
    pub se: f64,
    pub z: f64,
    pub p: f64,
}

/// Estimated standard deviation of one random-effect family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponent {
    pub family: String,
    pub n_groups: usize,
    pub sigma: f64,
    /// True when the search ended on the lower bound.
    pub at_lower_bound: bool,
    /// Likelihood-ratio statistic against the model with this family at the lower bound.
    pub lr_chi2: f64,
    /// Boundary-corrected p-value, `0.5 · P(χ²₁ ≥ lr_chi2)`.
    pub p_value: f64,
    pub note: String,
}

/// Posterior modes of one random-effect family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrailtyTable {
    pub family: String,
    pub labels: Vec<String>,
    pub estimates: Vec<f64>,
    pub se: Vec<f64>,
}

impl FrailtyTable {
    /// Indices of the `k` largest estimates, then of the `k` smallest.
    pub fn top_k(&self, k: usize) -> (Vec<usize>, Vec<usize>) {
        let mut order: Vec<usize> = (0..self.estimates.len()).collect();
        order.sort_by(|&a, &b| self.estimates[b].total_cmp(&self.estimates[a]).then(a.cmp(&b)));
        let high = order.iter().take(k).copied().collect();
        let low = order.iter().rev().take(k).copied().collect();
        (high, low)
    }
}

/// One step of the cumulative baseline hazard.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselinePoint {
    pub time: f64,
    pub increment: f64,
    pub cumulative: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    /// Newton iterations of the final inner fit.
    pub iterations: usize,
    /// Max-norm of the (penalized) score at the estimate.
    pub gradient_norm: f64,
    /// Inner fits run by the variance-component search.
    pub outer_evaluations: usize,
    /// Log-likelihood after each accepted Newton iterate.
    pub loglik_trace: Vec<f64>,
}

/// Information criteria under two conventions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InformationCriteria {
    /// `-2ℓ + 2k`.
    pub aic: f64,
    /// `-2ℓ + k ln n`.
    pub bic: f64,
    /// `χ² − 2k` with `χ² = 2(ℓ − ℓ₀)`.
    pub aic_chi2: f64,
    /// `χ² − k ln n`.
    pub bic_chi2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub columns: Vec<ColumnInfo>,
    pub beta: Vec<f64>,
    /// Row-major `p × p`.
    pub covariance: Vec<Vec<f64>>,
    pub loglik_null: f64,
    /// Partial log-likelihood at the estimate; the Laplace integrated
    /// log-likelihood for models with random effects.
    pub loglik_model: f64,
    /// Partial log-likelihood at `(β̂, b̂)`, random effects as offsets.
    pub loglik_conditional: f64,
    /// Penalized partial log-likelihood, for models with random effects.
    pub loglik_penalized: Option<f64>,
    pub n_events: usize,
    pub n_strata: usize,
    pub ties: Ties,
    pub variance_components: Vec<VarianceComponent>,
    pub frailties: Vec<FrailtyTable>,
    pub baseline: Vec<BaselinePoint>,
    pub convergence: Convergence,
}

impl FitResult {
    pub fn p(&self) -> usize {
        self.beta.len()
    }

    pub fn se(&self, j: usize) -> f64 {
        self.covariance[j][j].max(0.0).sqrt()
    }

    pub fn z(&self, j: usize) -> f64 {
        self.beta[j] / self.se(j)
    }

    /// Two-sided Wald p-value.
    pub fn p_value(&self, j: usize) -> f64 {
        let z = self.z(j);
        if !z.is_finite() {
            return if z.is_nan() { f64::NAN } else { 0.0 };
        }
        2.0 * Normal::standard().sf(z.abs())
    }

    pub fn coefficients(&self) -> Vec<Coefficient> {
        (0..self.p())
            .map(|j| {
                let c = &self.columns[j];
                Coefficient {
                    name: c.name.clone(),
                    covariate: c.covariate.map(|k| k.name().to_string()).unwrap_or_else(|| c.name.clone()),
                    period: c.period_label.clone().unwrap_or_default(),
                    unit: c.unit.clone(),
                    estimate: self.beta[j],
                    se: self.se(j),
                    z: self.z(j),
                    p: self.p_value(j),
                }
            })
            .collect()
    }

    /// Fixed coefficients plus one parameter per variance component.
    pub fn n_params(&self) -> usize {
        self.p() + self.variance_components.len()
    }

    /// `2(ℓ_model − ℓ_null)`.
    pub fn chi2_vs_null(&self) -> f64 {
        2.0 * (self.loglik_model - self.loglik_null)
    }

    pub fn information_criteria(&self) -> InformationCriteria {
        let k = self.n_params() as f64;
        let ln_n = (self.n_events.max(1) as f64).ln();
        let chi2 = self.chi2_vs_null();
        InformationCriteria {
            aic: -2.0 * self.loglik_model + 2.0 * k,
            bic: -2.0 * self.loglik_model + k * ln_n,
            aic_chi2: chi2 - 2.0 * k,
            bic_chi2: chi2 - k * ln_n,
        }
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn variance_component(&self, family: &str) -> Option<&VarianceComponent> {
        self.variance_components.iter().find(|v| v.family == family)
    }

    /// Stacked random-effect estimates in layout order.
    pub fn stacked_frailties(&self) -> Option<Vec<f64>> {
        if self.frailties.is_empty() {
            return None;
        }
        Some(self.frailties.iter().flat_map(|f| f.estimates.iter().copied()).collect())
    }
}
