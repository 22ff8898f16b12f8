//! Model declarations: which covariates enter the hazard, how their effects
//! vary over time, which random-effect families are fitted, and the ties rule.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::Window;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateKind {
    /// Distance from the candidate region to the nearest occupied region.
    Distance,
    /// Log of one plus the trade flow between the candidate and occupied regions.
    Trade,
    /// Smallest absolute temperature difference to an occupied region.
    TempDiff,
    /// Cropland plus pasture proportion of the candidate region.
    Agri,
    /// Urban proportion of the candidate region.
    Urban,
    /// Species present elsewhere in the candidate region's colonial empire.
    Colonial,
    /// Exponentially down-weighted count of earlier invasions of the region.
    PriorInvasions,
    /// Species recorded in the region by the sampling cut-off year.
    SamplingEffort,
}

impl CovariateKind {
    pub const ALL: [CovariateKind; 8] = [
        CovariateKind::Distance,
        CovariateKind::Trade,
        CovariateKind::TempDiff,
        CovariateKind::Agri,
        CovariateKind::Urban,
        CovariateKind::Colonial,
        CovariateKind::PriorInvasions,
        CovariateKind::SamplingEffort,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CovariateKind::Distance => "distance",
            CovariateKind::Trade => "trade",
            CovariateKind::TempDiff => "temp_diff",
            CovariateKind::Agri => "agri",
            CovariateKind::Urban => "urban",
            CovariateKind::Colonial => "colonial",
            CovariateKind::PriorInvasions => "prior_invasions",
            CovariateKind::SamplingEffort => "sampling_effort",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        CovariateKind::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl fmt::Display for CovariateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectKind {
    #[default]
    Constant,
    /// One coefficient per period of [`ModelSpec::periods`].
    Piecewise,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovariateDecl {
    pub kind: CovariateKind,
    #[serde(default)]
    pub effect: EffectKind,
}

impl CovariateDecl {
    pub fn constant(kind: CovariateKind) -> Self {
        CovariateDecl { kind, effect: EffectKind::Constant }
    }

    pub fn piecewise(kind: CovariateKind) -> Self {
        CovariateDecl { kind, effect: EffectKind::Piecewise }
    }
}

/// Half-open time interval `[start, end)`. Serialized as `[start, end]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "(f64, f64)", into = "(f64, f64)")]
pub struct Period {
    pub start: f64,
    pub end: f64,
}

impl From<(f64, f64)> for Period {
    fn from((start, end): (f64, f64)) -> Self {
        Period { start, end }
    }
}

impl From<Period> for (f64, f64) {
    fn from(p: Period) -> Self {
        (p.start, p.end)
    }
}

impl Period {
    /// Calendar years `first..=last`, i.e. `[first, last + 1)`.
    pub fn years(first: i32, last: i32) -> Self {
        Period { start: first as f64, end: last as f64 + 1.0 }
    }

    pub fn label(&self) -> String {
        if self.start.fract() == 0.0 && self.end.fract() == 0.0 {
            format!("{}-{}", self.start as i64, self.end as i64 - 1)
        } else {
            format!("{}-{}", self.start, self.end)
        }
    }
}

/// The five equal periods 1880-1905, 1906-1930, 1931-1955, 1956-1980, 1981-2005.
pub fn invasion_periods() -> Vec<Period> {
    vec![
        Period::years(1880, 1905),
        Period::years(1906, 1930),
        Period::years(1931, 1955),
        Period::years(1956, 1980),
        Period::years(1981, 2005),
    ]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DyadicForm {
    /// `b_{s s'}` depends on which species invaded first.
    Ordered,
    /// `b_{s s'} = b_{s' s}`.
    Symmetric,
}

/// A random-effect family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Species,
    Region,
    Dyadic(DyadicForm),
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Species => "species",
            Family::Region => "region",
            Family::Dyadic(DyadicForm::Ordered) => "dyadic_ordered",
            Family::Dyadic(DyadicForm::Symmetric) => "dyadic_symmetric",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "species" => Some(Family::Species),
            "region" => Some(Family::Region),
            "dyadic_ordered" | "dyadic" => Some(Family::Dyadic(DyadicForm::Ordered)),
            "dyadic_symmetric" => Some(Family::Dyadic(DyadicForm::Symmetric)),
            _ => None,
        }
    }

    /// Slot in a row's group-index triple.
    pub(crate) fn slot(self) -> usize {
        match self {
            Family::Species => 0,
            Family::Region => 1,
            Family::Dyadic(_) => 2,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RandomEffects {
    #[serde(default)]
    pub species: bool,
    #[serde(default)]
    pub region: bool,
    #[serde(default)]
    pub dyadic: Option<DyadicForm>,
}

impl RandomEffects {
    pub fn none() -> Self {
        RandomEffects::default()
    }

    /// Families in fitting order: species, region, dyadic.
    pub fn families(&self) -> Vec<Family> {
        let mut out = Vec::new();
        if self.species {
            out.push(Family::Species);
        }
        if self.region {
            out.push(Family::Region);
        }
        if let Some(form) = self.dyadic {
            out.push(Family::Dyadic(form));
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.families().is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ties {
    Breslow,
    #[default]
    Efron,
}

/// Source regions for the trade and temperature-difference covariates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceRegions {
    /// Native and invaded regions.
    #[default]
    AllOccupied,
    /// Invaded regions only; natives are used while a species has no invasions yet.
    InvadedOnly,
}

/// How invasions by species outside the top list affect the last-invader indicator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LastInvaderRule {
    /// Ignored: the most recent top-list invader is used.
    #[default]
    Skip,
    /// The indicator becomes absent until the next top-list invasion.
    Reset,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffortScale {
    /// `log(1 + count)`.
    #[default]
    Log,
    Raw,
}

/// Declaration of a relational event model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub covariates: Vec<CovariateDecl>,
    pub periods: Vec<Period>,
    pub random_effects: RandomEffects,
    pub ties: Ties,
    /// Per-year decay of the prior-invasions weights.
    pub decay: f64,
    /// Number of most widespread invaders entering the dyadic random effect.
    pub top_k: usize,
    pub source_regions: SourceRegions,
    pub last_invader: LastInvaderRule,
    pub sampling_effort: EffortScale,
    /// Distances are divided by this many km before entering the model.
    pub distance_unit_km: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            covariates: Vec::new(),
            periods: invasion_periods(),
            random_effects: RandomEffects::none(),
            ties: Ties::Efron,
            decay: 0.95,
            top_k: 30,
            source_regions: SourceRegions::AllOccupied,
            last_invader: LastInvaderRule::Skip,
            sampling_effort: EffortScale::Log,
            distance_unit_km: 1000.0,
        }
    }
}

/// One column of the fixed-effect design.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnInfo {
    pub name: String,
    pub covariate: Option<CovariateKind>,
    /// Period index for piecewise effects.
    pub period: Option<usize>,
    pub period_label: Option<String>,
    pub unit: String,
}

impl ColumnInfo {
    /// A free-standing column not tied to a named covariate.
    pub fn plain(name: impl Into<String>) -> Self {
        ColumnInfo { name: name.into(), covariate: None, period: None, period_label: None, unit: String::new() }
    }
}

impl ModelSpec {
    /// The hazard of the invasion model: piecewise distance, trade and
    /// agricultural land; constant temperature difference, urban land,
    /// colonial ties, prior invasions and sampling effort; species, region and
    /// ordered dyadic random effects.
    pub fn invasion_default() -> Self {
        use CovariateKind::*;
        ModelSpec {
            covariates: vec![
                CovariateDecl::piecewise(Distance),
                CovariateDecl::piecewise(Trade),
                CovariateDecl::constant(TempDiff),
                CovariateDecl::piecewise(Agri),
                CovariateDecl::constant(Urban),
                CovariateDecl::constant(Colonial),
                CovariateDecl::constant(PriorInvasions),
                CovariateDecl::constant(SamplingEffort),
            ],
            random_effects: RandomEffects { species: true, region: true, dyadic: Some(DyadicForm::Ordered) },
            ..ModelSpec::default()
        }
    }

    pub fn with_covariates(covariates: Vec<CovariateDecl>) -> Self {
        ModelSpec { covariates, ..ModelSpec::default() }
    }

    pub fn validate(&self, window: Window) -> Result<()> {
        for (i, a) in self.covariates.iter().enumerate() {
            if self.covariates[..i].iter().any(|b| b.kind == a.kind) {
                return Err(Error::invalid(format!("covariate `{}` declared twice", a.kind)));
            }
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::invalid(format!("decay {} outside (0, 1]", self.decay)));
        }
        if !(self.distance_unit_km > 0.0) {
            return Err(Error::invalid("distance unit must be positive"));
        }
        let piecewise = self.covariates.iter().any(|c| c.effect == EffectKind::Piecewise);
        if piecewise {
            if self.periods.is_empty() {
                return Err(Error::invalid("piecewise effects need at least one period"));
            }
            for p in &self.periods {
                if !(p.start < p.end) {
                    return Err(Error::invalid(format!("empty period {}", p.label())));
                }
            }
            for w in self.periods.windows(2) {
                if w[0].end != w[1].start {
                    return Err(Error::invalid(format!(
                        "periods {} and {} are not contiguous",
                        w[0].label(),
                        w[1].label()
                    )));
                }
            }
            let first = self.periods[0];
            let last = self.periods[self.periods.len() - 1];
            if first.start > window.start || last.end < window.end {
                return Err(Error::invalid(format!(
                    "periods {}..{} do not cover window [{}, {}]",
                    first.start, last.end, window.start, window.end
                )));
            }
        }
        Ok(())
    }

    /// Index of the period containing `t`. Times at or past the last
    /// period's end fall in the last period.
    pub fn period_index(&self, t: f64) -> usize {
        let n = self.periods.partition_point(|p| p.start <= t);
        n.saturating_sub(1).min(self.periods.len().saturating_sub(1))
    }

    pub fn unit(&self, kind: CovariateKind) -> String {
        match kind {
            CovariateKind::Distance => format!("{} km", self.distance_unit_km),
            CovariateKind::Trade => "log(1 + current USD)".into(),
            CovariateKind::TempDiff => "degC".into(),
            CovariateKind::Agri | CovariateKind::Urban => "proportion".into(),
            CovariateKind::Colonial => "indicator".into(),
            CovariateKind::PriorInvasions => "weighted count".into(),
            CovariateKind::SamplingEffort => match self.sampling_effort {
                EffortScale::Log => "log(1 + species count)".into(),
                EffortScale::Raw => "species count".into(),
            },
        }
    }

    /// Fixed-effect columns after period expansion.
    pub fn columns(&self) -> Vec<ColumnInfo> {
        let mut cols = Vec::new();
        for decl in &self.covariates {
            match decl.effect {
                EffectKind::Constant => cols.push(ColumnInfo {
                    name: decl.kind.name().to_string(),
                    covariate: Some(decl.kind),
                    period: None,
                    period_label: None,
                    unit: self.unit(decl.kind),
                }),
                EffectKind::Piecewise => {
                    for (i, p) in self.periods.iter().enumerate() {
                        cols.push(ColumnInfo {
                            name: format!("{}[{}]", decl.kind.name(), p.label()),
                            covariate: Some(decl.kind),
                            period: Some(i),
                            period_label: Some(p.label()),
                            unit: self.unit(decl.kind),
                        });
                    }
                }
            }
        }
        cols
    }

    pub fn n_columns(&self) -> usize {
        self.covariates
            .iter()
            .map(|c| match c.effect {
                EffectKind::Constant => 1,
                EffectKind::Piecewise => self.periods.len(),
            })
            .sum()
    }
}
