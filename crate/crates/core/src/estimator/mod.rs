//! Partial-likelihood estimation of fixed effects, Gaussian random effects and
//! the Breslow baseline hazard.

pub mod baseline;
pub mod dataset;
pub mod fixed;
pub mod likelihood;
pub mod mixed;
pub mod result;

use serde::{Deserialize, Serialize};

pub use baseline::breslow_baseline;
pub use dataset::{build_dataset, Dataset, FamilyLayout, LazyDataset, Layout, Stratum, StrataSource};
pub use fixed::{fit_fixed, NewtonOptions};
pub use likelihood::{evaluate, event_probabilities, partial_loglik, score_and_hessian, softmax, Evaluation, FrailtyMode, Order};
pub use mixed::{fit_mixed, fit_penalized, MixedOptions, PenalizedFit};
pub use result::{BaselinePoint, Coefficient, Convergence, FitResult, FrailtyTable, InformationCriteria, VarianceComponent};

use crate::error::Result;
use crate::model::Ties;

/// Settings of a fit.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub ties: Ties,
    pub newton: NewtonOptions,
    pub mixed: MixedOptions,
}

/// Fits the model described by the source layout: fixed effects only when it
/// declares no random-effect family.
pub fn fit<S: StrataSource + ?Sized>(source: &S, opts: &FitOptions) -> Result<FitResult> {
    if source.layout().families.is_empty() {
        fit_fixed(source, opts.ties, &opts.newton)
    } else {
        fit_mixed(source, opts.ties, &opts.newton, &opts.mixed)
    }
}
