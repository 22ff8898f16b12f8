//! Dyadic covariates `x_sc(t)`: exogenous panel lookups, statistics of the
//! occupancy and invasion history, and assembly of design rows.
//!
//! Every statistic is evaluated at `t⁻`, i.e. from the state strictly before
//! the query time. Annual panels are indexed by `floor(t)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{EventSequence, NodeSet, OccupancyState, RegionHistory, RegionId, SpeciesId};
use crate::model::{CovariateKind, DyadicForm, EffectKind, EffortScale, Family, LastInvaderRule, ModelSpec, SourceRegions};

/// Sentinel for "no group" in a row's group-index triple.
pub const NO_GROUP: u32 = u32::MAX;

#[inline]
pub fn year_of(t: f64) -> i32 {
    t.floor() as i32
}

/// Inclusive range of calendar years.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct YearSpan {
    pub first: i32,
    pub last: i32,
}

impl YearSpan {
    pub fn new(first: i32, last: i32) -> Result<Self> {
        if first > last {
            return Err(Error::invalid(format!("empty year span {first}..={last}")));
        }
        Ok(YearSpan { first, last })
    }

    pub fn len(&self) -> usize {
        (self.last - self.first + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn index(&self, year: i32) -> Option<usize> {
        (year >= self.first && year <= self.last).then(|| (year - self.first) as usize)
    }

    pub fn years(&self) -> impl Iterator<Item = i32> {
        self.first..=self.last
    }
}

/// Region × year table. Missing cells hold NaN.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionPanel {
    span: YearSpan,
    n_regions: usize,
    values: Vec<f64>,
}

impl RegionPanel {
    pub fn new(span: YearSpan, n_regions: usize) -> Self {
        RegionPanel { span, n_regions, values: vec![f64::NAN; span.len() * n_regions] }
    }

    pub fn span(&self) -> YearSpan {
        self.span
    }

    pub fn set(&mut self, c: RegionId, year: i32, value: f64) {
        if let Some(y) = self.span.index(year) {
            self.values[c.index() * self.span.len() + y] = value;
        }
    }

    /// `None` outside the span or for a missing cell.
    #[inline]
    pub fn get(&self, c: RegionId, year: i32) -> Option<f64> {
        let y = self.span.index(year)?;
        let v = self.values[c.index() * self.span.len() + y];
        (!v.is_nan()).then_some(v)
    }

    pub fn n_regions(&self) -> usize {
        self.n_regions
    }
}

/// Directed region × region × year table (importer, exporter). Missing cells hold NaN.
#[derive(Clone, Debug, PartialEq)]
pub struct DyadPanel {
    span: YearSpan,
    n_regions: usize,
    values: Vec<f64>,
}

impl DyadPanel {
    pub fn new(span: YearSpan, n_regions: usize, fill: f64) -> Self {
        DyadPanel { span, n_regions, values: vec![fill; span.len() * n_regions * n_regions] }
    }

    pub fn span(&self) -> YearSpan {
        self.span
    }

    #[inline]
    fn slot(&self, importer: RegionId, exporter: RegionId, y: usize) -> usize {
        (importer.index() * self.n_regions + exporter.index()) * self.span.len() + y
    }

    pub fn set(&mut self, importer: RegionId, exporter: RegionId, year: i32, value: f64) {
        if let Some(y) = self.span.index(year) {
            let slot = self.slot(importer, exporter, y);
            self.values[slot] = value;
        }
    }

    #[inline]
    pub fn get(&self, importer: RegionId, exporter: RegionId, year: i32) -> Option<f64> {
        let y = self.span.index(year)?;
        let v = self.values[self.slot(importer, exporter, y)];
        (!v.is_nan()).then_some(v)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LandCover {
    pub cropland: RegionPanel,
    pub pasture: RegionPanel,
    pub urban: RegionPanel,
}

/// Exogenous covariate tables, all indexed by the harmonized region list.
#[derive(Clone, Debug)]
pub struct CovariatePanels {
    regions: NodeSet,
    distance_km: Option<Vec<f64>>,
    trade: Option<DyadPanel>,
    temperature: Option<RegionPanel>,
    landcover: Option<LandCover>,
    empire: Option<Vec<Option<u32>>>,
    empire_names: Vec<String>,
    sampling_effort: Option<Vec<f64>>,
}

impl CovariatePanels {
    pub fn new(regions: NodeSet) -> Self {
        CovariatePanels {
            regions,
            distance_km: None,
            trade: None,
            temperature: None,
            landcover: None,
            empire: None,
            empire_names: Vec::new(),
            sampling_effort: None,
        }
    }

    pub fn regions(&self) -> &NodeSet {
        &self.regions
    }

    pub fn n_regions(&self) -> usize {
        self.regions.len()
    }

    /// Row-major `n × n` matrix in km. Must be symmetric, nonnegative, zero on the diagonal.
    pub fn set_distance(&mut self, km: Vec<f64>) -> Result<()> {
        let n = self.n_regions();
        if km.len() != n * n {
            return Err(Error::invalid(format!("distance matrix has {} cells, expected {}", km.len(), n * n)));
        }
        for a in 0..n {
            if km[a * n + a] != 0.0 {
                return Err(Error::invalid(format!("distance({0}, {0}) must be 0", self.regions.label(a as u32))));
            }
            for b in 0..n {
                let d = km[a * n + b];
                if !(d >= 0.0 && d.is_finite()) {
                    return Err(Error::invalid(format!(
                        "distance({}, {}) = {d} is not a nonnegative number",
                        self.regions.label(a as u32),
                        self.regions.label(b as u32)
                    )));
                }
                if d != km[b * n + a] {
                    return Err(Error::invalid(format!(
                        "distance matrix not symmetric at ({}, {})",
                        self.regions.label(a as u32),
                        self.regions.label(b as u32)
                    )));
                }
            }
        }
        self.distance_km = Some(km);
        Ok(())
    }

    pub fn set_trade(&mut self, trade: DyadPanel) -> Result<()> {
        if trade.n_regions != self.n_regions() {
            return Err(Error::invalid("trade panel region count mismatch"));
        }
        if trade.values.iter().any(|&v| v < 0.0) {
            return Err(Error::invalid("trade flows must be nonnegative"));
        }
        self.trade = Some(trade);
        Ok(())
    }

    pub fn set_temperature(&mut self, temperature: RegionPanel) -> Result<()> {
        if temperature.n_regions != self.n_regions() {
            return Err(Error::invalid("temperature panel region count mismatch"));
        }
        self.temperature = Some(temperature);
        Ok(())
    }

    pub fn set_landcover(&mut self, landcover: LandCover) -> Result<()> {
        let span = landcover.cropland.span;
        for c in 0..self.n_regions() as u32 {
            for year in span.years() {
                let cell = (
                    landcover.cropland.get(RegionId(c), year),
                    landcover.pasture.get(RegionId(c), year),
                    landcover.urban.get(RegionId(c), year),
                );
                if let (Some(cropland), Some(pasture), Some(urban)) = cell {
                    check_proportions(self.regions.label(c), year, cropland, pasture, urban)?;
                }
            }
        }
        self.landcover = Some(landcover);
        Ok(())
    }

    /// Colonial empire per region; `None` marks an independent region.
    pub fn set_empires(&mut self, empires: &[Option<String>]) -> Result<()> {
        if empires.len() != self.n_regions() {
            return Err(Error::invalid("empire table region count mismatch"));
        }
        let mut names: Vec<String> = empires.iter().flatten().cloned().collect();
        names.sort();
        names.dedup();
        let codes = empires
            .iter()
            .map(|e| e.as_ref().map(|name| names.binary_search(name).expect("name collected") as u32))
            .collect();
        self.empire = Some(codes);
        self.empire_names = names;
        Ok(())
    }

    /// Raw species counts per region.
    pub fn set_sampling_effort(&mut self, counts: Vec<f64>) -> Result<()> {
        if counts.len() != self.n_regions() {
            return Err(Error::invalid("sampling-effort table region count mismatch"));
        }
        if counts.iter().any(|&c| !(c >= 0.0)) {
            return Err(Error::invalid("sampling-effort counts must be nonnegative"));
        }
        self.sampling_effort = Some(counts);
        Ok(())
    }

    #[inline]
    pub fn distance_km(&self, a: RegionId, b: RegionId) -> Option<f64> {
        let n = self.n_regions();
        self.distance_km.as_ref().map(|d| d[a.index() * n + b.index()])
    }

    pub fn trade(&self) -> Option<&DyadPanel> {
        self.trade.as_ref()
    }

    pub fn temperature(&self) -> Option<&RegionPanel> {
        self.temperature.as_ref()
    }

    pub fn landcover(&self) -> Option<&LandCover> {
        self.landcover.as_ref()
    }

    pub fn empire(&self, c: RegionId) -> Option<Option<&str>> {
        self.empire
            .as_ref()
            .map(|e| e[c.index()].map(|code| self.empire_names[code as usize].as_str()))
    }

    #[inline]
    fn empire_code(&self, c: RegionId) -> Option<Option<u32>> {
        self.empire.as_ref().map(|e| e[c.index()])
    }

    pub fn sampling_effort(&self, c: RegionId) -> Option<f64> {
        self.sampling_effort.as_ref().map(|e| e[c.index()])
    }

    /// Name of the panel a covariate reads, if it is missing.
    pub fn missing_for(&self, kind: CovariateKind) -> Option<&'static str> {
        let present = match kind {
            CovariateKind::Distance => self.distance_km.is_some(),
            CovariateKind::Trade => self.trade.is_some(),
            CovariateKind::TempDiff => self.temperature.is_some(),
            CovariateKind::Agri | CovariateKind::Urban => self.landcover.is_some(),
            CovariateKind::Colonial => self.empire.is_some(),
            CovariateKind::PriorInvasions => true,
            CovariateKind::SamplingEffort => self.sampling_effort.is_some(),
        };
        (!present).then(|| match kind {
            CovariateKind::Distance => "distance",
            CovariateKind::Trade => "trade",
            CovariateKind::TempDiff => "temperature",
            CovariateKind::Agri | CovariateKind::Urban => "landcover",
            CovariateKind::Colonial => "empires",
            CovariateKind::PriorInvasions => "history",
            CovariateKind::SamplingEffort => "sampling_effort",
        })
    }
}

fn check_proportions(region: &str, year: i32, cropland: f64, pasture: f64, urban: f64) -> Result<()> {
    let in_unit = |v: f64| (0.0..=1.0).contains(&v);
    if !(in_unit(cropland) && in_unit(pasture) && in_unit(urban)) || cropland + pasture + urban > 1.0 + 1e-9 {
        return Err(Error::ProportionsExceedOne { region: region.to_string(), year, cropland, pasture, urban });
    }
    Ok(())
}

fn panel_gap(panel: &'static str, panels: &CovariatePanels, c: RegionId, year: i32) -> Error {
    Error::PanelGap { panel, key: format!("region `{}`", panels.regions.label(c.0)), year }
}

fn missing_panel(panel: &'static str) -> Error {
    Error::invalid(format!("panel `{panel}` not loaded"))
}

/// Calls `f` on each source region of `s` at `t⁻`.
fn for_each_source(s: SpeciesId, t: f64, occ: &OccupancyState, sources: SourceRegions, mut f: impl FnMut(RegionId)) {
    match sources {
        SourceRegions::AllOccupied => occ.occupied_before(s, t).for_each(f),
        SourceRegions::InvadedOnly => {
            let mut any = false;
            for r in occ.invaded_before(s, t) {
                any = true;
                f(r);
            }
            if !any {
                occ.occupied_before(s, t).for_each(f);
            }
        }
    }
}

/// Distance in km from `c` to the nearest region occupied by `s` at `t⁻`.
pub fn min_distance(s: SpeciesId, c: RegionId, t: f64, occ: &OccupancyState, panels: &CovariatePanels) -> Result<f64> {
    let km = panels.distance_km.as_deref().ok_or_else(|| missing_panel("distance"))?;
    let n = panels.n_regions();
    let mut best = f64::INFINITY;
    for r in occ.occupied_before(s, t) {
        best = best.min(km[r.index() * n + c.index()]);
    }
    if best.is_infinite() {
        return Err(Error::invalid(format!("species {} occupies no region before {t}", s.0)));
    }
    Ok(best)
}

/// `log(1 + Σ_r trade(r, c))` over source regions `r ≠ c`, with bilateral flows.
pub fn trade_sum_log(
    s: SpeciesId,
    c: RegionId,
    t: f64,
    occ: &OccupancyState,
    panels: &CovariatePanels,
    sources: SourceRegions,
) -> Result<f64> {
    let trade = panels.trade().ok_or_else(|| missing_panel("trade"))?;
    let year = year_of(t);
    let mut total = 0.0;
    let mut gap = None;
    for_each_source(s, t, occ, sources, |r| {
        if r == c || gap.is_some() {
            return;
        }
        match (trade.get(c, r, year), trade.get(r, c, year)) {
            (Some(a), Some(b)) => total += a + b,
            _ => gap = Some(r),
        }
    });
    if let Some(r) = gap {
        return Err(Error::PanelGap {
            panel: "trade",
            key: format!("dyad ({}, {})", panels.regions.label(c.0), panels.regions.label(r.0)),
            year,
        });
    }
    Ok(total.ln_1p())
}

/// Smallest `|temp(r) − temp(c)|` over source regions `r`.
pub fn temp_diff_min(
    s: SpeciesId,
    c: RegionId,
    t: f64,
    occ: &OccupancyState,
    panels: &CovariatePanels,
    sources: SourceRegions,
) -> Result<f64> {
    let temp = panels.temperature().ok_or_else(|| missing_panel("temperature"))?;
    let year = year_of(t);
    let here = temp.get(c, year).ok_or_else(|| panel_gap("temperature", panels, c, year))?;
    // `here` exists, so the year lies in the span
    let y = temp.span.index(year).unwrap_or(0);
    let stride = temp.span.len();
    let mut best = f64::INFINITY;
    let mut gap = None;
    for_each_source(s, t, occ, sources, |r| {
        let v = temp.values[r.index() * stride + y];
        if v.is_nan() {
            gap = Some(r);
        } else {
            best = best.min((v - here).abs());
        }
    });
    if let Some(r) = gap {
        return Err(panel_gap("temperature", panels, r, year));
    }
    if best.is_infinite() {
        return Err(Error::invalid(format!("species {} occupies no region before {t}", s.0)));
    }
    Ok(best)
}

/// `(cropland + pasture, urban)` of region `c` in year `floor(t)`.
pub fn land_cover(c: RegionId, t: f64, panels: &CovariatePanels) -> Result<(f64, f64)> {
    let lc = panels.landcover().ok_or_else(|| missing_panel("landcover"))?;
    let year = year_of(t);
    let get = |p: &RegionPanel| p.get(c, year).ok_or_else(|| panel_gap("landcover", panels, c, year));
    let (cropland, pasture, urban) = (get(&lc.cropland)?, get(&lc.pasture)?, get(&lc.urban)?);
    check_proportions(panels.regions.label(c.0), year, cropland, pasture, urban)?;
    Ok((cropland + pasture, urban))
}

/// 1 when `c` belongs to an empire in which `s` occupies another region at `t⁻`.
pub fn colonial_indicator(
    s: SpeciesId,
    c: RegionId,
    t: f64,
    occ: &OccupancyState,
    panels: &CovariatePanels,
) -> Result<f64> {
    let Some(code) = panels.empire_code(c).ok_or_else(|| missing_panel("empires"))? else {
        return Ok(0.0);
    };
    let hit = occ
        .occupied_before(s, t)
        .any(|r| r != c && panels.empire_code(r).flatten() == Some(code));
    Ok(if hit { 1.0 } else { 0.0 })
}

/// `Σ decay^(t − t_sc)` over invasions of `c` strictly before `t`.
pub fn prior_invasions_weighted(c: RegionId, t: f64, history: &RegionHistory, decay: f64) -> Result<f64> {
    if !(decay > 0.0 && decay <= 1.0) {
        return Err(Error::invalid(format!("decay {decay} outside (0, 1]")));
    }
    let ln_decay = decay.ln();
    Ok(history.before(c, t).iter().map(|&(ts, _)| (ln_decay * (t - ts)).exp()).sum())
}

/// The most widespread invaders of a taxonomic group.
#[derive(Clone, Debug, PartialEq)]
pub struct TopInvaders {
    members: Vec<SpeciesId>,
    position: Vec<Option<u32>>,
}

impl TopInvaders {
    /// The `k` species with the most events, ties broken by species index.
    pub fn from_sequence(seq: &EventSequence, k: usize) -> Self {
        let mut counts = vec![0usize; seq.species().len()];
        for e in seq.events() {
            counts[e.sender.index()] += 1;
        }
        let mut order: Vec<u32> = (0..counts.len() as u32).filter(|&s| counts[s as usize] > 0).collect();
        order.sort_by(|&a, &b| counts[b as usize].cmp(&counts[a as usize]).then(a.cmp(&b)));
        order.truncate(k);
        Self::from_members(counts.len(), order.into_iter().map(SpeciesId).collect())
    }

    pub fn from_members(n_species: usize, members: Vec<SpeciesId>) -> Self {
        let mut position = vec![None; n_species];
        for (i, s) in members.iter().enumerate() {
            position[s.index()] = Some(i as u32);
        }
        TopInvaders { members, position }
    }

    pub fn empty(n_species: usize) -> Self {
        Self::from_members(n_species, Vec::new())
    }

    pub fn members(&self) -> &[SpeciesId] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    #[inline]
    pub fn position(&self, s: SpeciesId) -> Option<u32> {
        self.position.get(s.index()).copied().flatten()
    }

    /// Number of dyadic groups for a form.
    pub fn n_groups(&self, form: DyadicForm) -> usize {
        let k = self.len();
        match form {
            DyadicForm::Ordered => k * k.saturating_sub(1),
            DyadicForm::Symmetric => k * k.saturating_sub(1) / 2,
        }
    }

    /// Group of the pair (earlier invader `last`, candidate `cand`).
    pub fn dyadic_index(&self, last: SpeciesId, cand: SpeciesId, form: DyadicForm) -> Option<u32> {
        let (i, j) = (self.position(last)?, self.position(cand)?);
        if i == j {
            return None;
        }
        let k = self.len() as u32;
        Some(match form {
            DyadicForm::Ordered => i * (k - 1) + if j < i { j } else { j - 1 },
            DyadicForm::Symmetric => {
                let (a, b) = if i < j { (i, j) } else { (j, i) };
                a * k - a * (a + 1) / 2 + (b - a - 1)
            }
        })
    }

    /// Labels for each dyadic group, in index order.
    pub fn dyadic_labels(&self, species: &NodeSet, form: DyadicForm) -> Vec<String> {
        let mut labels = vec![String::new(); self.n_groups(form)];
        for &a in &self.members {
            for &b in &self.members {
                if let Some(idx) = self.dyadic_index(a, b, form) {
                    let sep = match form {
                        DyadicForm::Ordered => ">",
                        DyadicForm::Symmetric => "~",
                    };
                    let (x, y) = match form {
                        DyadicForm::Symmetric if self.position(a) > self.position(b) => (b, a),
                        _ => (a, b),
                    };
                    labels[idx as usize] = format!("{}{sep}{}", species.label(x.0), species.label(y.0));
                }
            }
        }
        labels
    }
}

/// The last top-list species to invade `c` strictly before `t`.
pub fn last_invader(
    c: RegionId,
    t: f64,
    history: &RegionHistory,
    top: &TopInvaders,
    rule: LastInvaderRule,
) -> Option<SpeciesId> {
    let earlier = history.before(c, t);
    match rule {
        LastInvaderRule::Skip => earlier.iter().rev().map(|&(_, s)| s).find(|&s| top.position(s).is_some()),
        LastInvaderRule::Reset => earlier.last().map(|&(_, s)| s).filter(|&s| top.position(s).is_some()),
    }
}

/// Random-effect group indices of a row; absent families are `None`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GroupIndex {
    pub species: Option<u32>,
    pub region: Option<u32>,
    pub dyadic: Option<u32>,
}

impl GroupIndex {
    pub fn from_slots(slots: [u32; 3]) -> Self {
        let opt = |v: u32| (v != NO_GROUP).then_some(v);
        GroupIndex { species: opt(slots[0]), region: opt(slots[1]), dyadic: opt(slots[2]) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DesignRow {
    pub dyad: (SpeciesId, RegionId),
    pub time: f64,
    pub fixed: Vec<f64>,
    pub groups: GroupIndex,
}

/// Evaluates the covariates of a [`ModelSpec`] against a state snapshot.
#[derive(Clone, Copy)]
pub struct CovariateEngine<'a> {
    spec: &'a ModelSpec,
    panels: &'a CovariatePanels,
    occupancy: &'a OccupancyState,
    history: &'a RegionHistory,
    top: &'a TopInvaders,
    dyadic: Option<DyadicForm>,
    species_on: bool,
    region_on: bool,
}

impl<'a> CovariateEngine<'a> {
    pub fn new(
        spec: &'a ModelSpec,
        panels: &'a CovariatePanels,
        occupancy: &'a OccupancyState,
        history: &'a RegionHistory,
        top: &'a TopInvaders,
    ) -> Result<Self> {
        for decl in &spec.covariates {
            if let Some(panel) = panels.missing_for(decl.kind) {
                return Err(Error::invalid(format!(
                    "covariate `{}` needs the `{panel}` panel, which was not loaded",
                    decl.kind
                )));
            }
        }
        if occupancy.n_regions() != panels.n_regions() {
            return Err(Error::invalid("occupancy and panels disagree on the region count"));
        }
        Ok(CovariateEngine {
            spec,
            panels,
            occupancy,
            history,
            top,
            dyadic: spec.random_effects.dyadic,
            species_on: spec.random_effects.species,
            region_on: spec.random_effects.region,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        self.spec
    }

    pub fn n_columns(&self) -> usize {
        self.spec.n_columns()
    }

    /// Covariate value on the model scale (distance in model units, log effort, ...).
    pub fn value(&self, kind: CovariateKind, s: SpeciesId, c: RegionId, t: f64) -> Result<f64> {
        let (occ, panels) = (self.occupancy, self.panels);
        let v = match kind {
            CovariateKind::Distance => min_distance(s, c, t, occ, panels)? / self.spec.distance_unit_km,
            CovariateKind::Trade => trade_sum_log(s, c, t, occ, panels, self.spec.source_regions)?,
            CovariateKind::TempDiff => temp_diff_min(s, c, t, occ, panels, self.spec.source_regions)?,
            CovariateKind::Agri => land_cover(c, t, panels)?.0,
            CovariateKind::Urban => land_cover(c, t, panels)?.1,
            CovariateKind::Colonial => colonial_indicator(s, c, t, occ, panels)?,
            CovariateKind::PriorInvasions => prior_invasions_weighted(c, t, self.history, self.spec.decay)?,
            CovariateKind::SamplingEffort => {
                let count = panels.sampling_effort(c).ok_or_else(|| missing_panel("sampling_effort"))?;
                match self.spec.sampling_effort {
                    EffortScale::Log => count.ln_1p(),
                    EffortScale::Raw => count,
                }
            }
        };
        if !v.is_finite() {
            return Err(Error::NonFiniteCovariate { column: kind.name().to_string(), time: t });
        }
        Ok(v)
    }

    /// Writes the fixed-effect columns into `x` and returns the group slots.
    pub fn fill_row(&self, s: SpeciesId, c: RegionId, t: f64, x: &mut [f64]) -> Result<[u32; 3]> {
        debug_assert_eq!(x.len(), self.n_columns());
        let n_periods = self.spec.periods.len();
        let mut col = 0;
        for decl in &self.spec.covariates {
            let v = self.value(decl.kind, s, c, t)?;
            match decl.effect {
                EffectKind::Constant => {
                    x[col] = v;
                    col += 1;
                }
                EffectKind::Piecewise => {
                    let active = self.spec.period_index(t);
                    for p in 0..n_periods {
                        x[col + p] = if p == active { v } else { 0.0 };
                    }
                    col += n_periods;
                }
            }
        }
        Ok(self.group_slots(s, c, t))
    }

    pub fn group_slots(&self, s: SpeciesId, c: RegionId, t: f64) -> [u32; 3] {
        let mut slots = [NO_GROUP; 3];
        if self.species_on {
            slots[Family::Species.slot()] = s.0;
        }
        if self.region_on {
            slots[Family::Region.slot()] = c.0;
        }
        if let Some(form) = self.dyadic {
            if let Some(last) = last_invader(c, t, self.history, self.top, self.spec.last_invader) {
                if let Some(idx) = self.top.dyadic_index(last, s, form) {
                    slots[2] = idx;
                }
            }
        }
        slots
    }

    pub fn assemble_design_row(&self, s: SpeciesId, c: RegionId, t: f64) -> Result<DesignRow> {
        let mut fixed = vec![0.0; self.n_columns()];
        let slots = self.fill_row(s, c, t, &mut fixed)?;
        Ok(DesignRow { dyad: (s, c), time: t, fixed, groups: GroupIndex::from_slots(slots) })
    }
}
