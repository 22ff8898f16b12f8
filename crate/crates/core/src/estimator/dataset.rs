//! Strata of the partial likelihood: one per distinct event time, holding the
//! design rows of the risk set at `t⁻` and the rows of the realized events.

use std::borrow::Cow;
use std::ops::Range;

use rayon::prelude::*;

use crate::covariates::{CovariateEngine, CovariatePanels, TopInvaders, NO_GROUP};
use crate::error::{Error, Result};
use crate::event::{InvasionData, RegionId, SpeciesId};
use crate::model::{ColumnInfo, Family, ModelSpec};

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FamilyLayout {
    pub family: Family,
    /// First column of this family in the stacked random-effect vector.
    pub offset: usize,
    pub size: usize,
    pub labels: Vec<String>,
}

/// Column layout of the fixed effects and of the stacked random effects.
#[derive(Clone, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Layout {
    pub columns: Vec<ColumnInfo>,
    pub families: Vec<FamilyLayout>,
}

impl Layout {
    pub fn fixed(columns: Vec<ColumnInfo>) -> Self {
        Layout { columns, families: Vec::new() }
    }

    /// Appends a family after the existing ones.
    pub fn with_family(mut self, family: Family, labels: Vec<String>) -> Self {
        let offset = self.n_groups();
        self.families.push(FamilyLayout { family, offset, size: labels.len(), labels });
        self
    }

    pub fn p(&self) -> usize {
        self.columns.len()
    }

    pub fn n_groups(&self) -> usize {
        self.families.iter().map(|f| f.size).sum()
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    /// Offset of the family stored in each group slot (species, region, dyadic).
    pub fn slot_offsets(&self) -> [Option<usize>; 3] {
        let mut out = [None; 3];
        for f in &self.families {
            out[f.family.slot()] = Some(f.offset);
        }
        out
    }

    pub fn family(&self, family: Family) -> Option<&FamilyLayout> {
        self.families.iter().find(|f| f.family == family)
    }
}

/// Risk-set rows at one event time.
#[derive(Clone, Debug, PartialEq)]
pub struct Stratum {
    pub time: f64,
    /// Row-major `n_rows × p` design values.
    pub x: Vec<f64>,
    /// Group slots per row; empty when the layout has no random effects.
    pub groups: Vec<[u32; 3]>,
    /// Row index of each realized event, in sequence order.
    pub events: Vec<usize>,
    pub event_dyads: Vec<(SpeciesId, RegionId)>,
}

impl Stratum {
    /// A stratum without random-effect groups.
    pub fn fixed(time: f64, rows: &[Vec<f64>], events: Vec<usize>) -> Self {
        let x = rows.iter().flatten().copied().collect();
        let event_dyads = events.iter().map(|&e| (SpeciesId(0), RegionId(e as u32))).collect();
        Stratum { time, x, groups: Vec::new(), events, event_dyads }
    }

    pub fn n_rows(&self, p: usize) -> usize {
        if p == 0 {
            self.groups.len()
        } else {
            self.x.len() / p
        }
    }

    #[inline]
    pub fn row(&self, i: usize, p: usize) -> &[f64] {
        &self.x[i * p..(i + 1) * p]
    }
}

/// Anything that can hand out strata in time order.
pub trait StrataSource: Sync {
    fn layout(&self) -> &Layout;
    fn n_strata(&self) -> usize;
    fn stratum(&self, i: usize) -> Result<Cow<'_, Stratum>>;
    fn n_events(&self) -> usize;
    /// Start of the observation window.
    fn start_time(&self) -> f64;
}

/// Fully materialized strata.
#[derive(Clone, Debug)]
pub struct Dataset {
    layout: Layout,
    strata: Vec<Stratum>,
    start: f64,
    n_events: usize,
}

impl Dataset {
    pub fn new(layout: Layout, strata: Vec<Stratum>, start: f64) -> Result<Self> {
        let p = layout.p();
        let mut n_events = 0;
        let mut last = f64::NEG_INFINITY;
        for (i, s) in strata.iter().enumerate() {
            if s.time < last {
                return Err(Error::invalid(format!("stratum {i} out of time order")));
            }
            last = s.time;
            if p > 0 && s.x.len() % p != 0 {
                return Err(Error::invalid(format!("stratum {i}: design length not a multiple of {p}")));
            }
            let n = s.n_rows(p);
            if !layout.families.is_empty() && s.groups.len() != n {
                return Err(Error::invalid(format!("stratum {i}: {} group rows for {n} design rows", s.groups.len())));
            }
            if s.events.is_empty() || s.events.iter().any(|&e| e >= n) {
                return Err(Error::invalid(format!("stratum {i}: event rows missing or out of range")));
            }
            if let Some(pos) = s.x.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteCovariate { column: layout.columns[pos % p].name.clone(), time: s.time });
            }
            for g in &s.groups {
                for f in &layout.families {
                    let v = g[f.family.slot()];
                    if v != NO_GROUP && v as usize >= f.size {
                        return Err(Error::invalid(format!("stratum {i}: group index {v} outside family {}", f.family)));
                    }
                }
            }
            n_events += s.events.len();
        }
        Ok(Dataset { layout, strata, start, n_events })
    }

    pub fn strata(&self) -> &[Stratum] {
        &self.strata
    }

    /// A copy without the strata at the given indices.
    pub fn without_strata(&self, drop: &[usize]) -> Result<Dataset> {
        let strata = self
            .strata
            .iter()
            .enumerate()
            .filter(|(i, _)| !drop.contains(i))
            .map(|(_, s)| s.clone())
            .collect();
        Dataset::new(self.layout.clone(), strata, self.start)
    }
}

impl StrataSource for Dataset {
    fn layout(&self) -> &Layout {
        &self.layout
    }

    fn n_strata(&self) -> usize {
        self.strata.len()
    }

    fn stratum(&self, i: usize) -> Result<Cow<'_, Stratum>> {
        Ok(Cow::Borrowed(&self.strata[i]))
    }

    fn n_events(&self) -> usize {
        self.n_events
    }

    fn start_time(&self) -> f64 {
        self.start
    }
}

/// Strata computed from the covariate engine on every request.
pub struct LazyDataset<'a> {
    data: &'a InvasionData,
    panels: &'a CovariatePanels,
    spec: &'a ModelSpec,
    top: TopInvaders,
    layout: Layout,
    groups: Vec<Range<usize>>,
}

impl<'a> LazyDataset<'a> {
    pub fn new(data: &'a InvasionData, panels: &'a CovariatePanels, spec: &'a ModelSpec) -> Result<Self> {
        spec.validate(data.sequence.window())?;
        let top = TopInvaders::from_sequence(&data.sequence, spec.top_k);
        // fail early on missing panels
        CovariateEngine::new(spec, panels, &data.occupancy, &data.history, &top)?;
        let layout = layout_for(spec, data, &top);
        Ok(LazyDataset { data, panels, spec, top, layout, groups: data.sequence.tie_groups() })
    }

    pub fn top_invaders(&self) -> &TopInvaders {
        &self.top
    }

    fn engine(&self) -> CovariateEngine<'_> {
        CovariateEngine::new(self.spec, self.panels, &self.data.occupancy, &self.data.history, &self.top)
            .expect("validated in constructor")
    }

    /// Number of design rows across all strata.
    pub fn total_rows(&self) -> usize {
        let seq = &self.data.sequence;
        let (ns, nc) = (seq.species().len(), seq.regions().len());
        self.groups
            .iter()
            .map(|g| {
                let t = seq.events()[g.start].time;
                (0..ns as u32)
                    .map(|s| (0..nc as u32).filter(|&c| !self.data.occupancy.is_occupied_before(SpeciesId(s), RegionId(c), t)).count())
                    .sum::<usize>()
            })
            .sum()
    }

    pub fn materialize(&self) -> Result<Dataset> {
        let strata = (0..self.groups.len())
            .into_par_iter()
            .map(|i| self.compute(i))
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(self.layout.clone(), strata, self.data.sequence.window().start)
    }

    fn compute(&self, i: usize) -> Result<Stratum> {
        let engine = self.engine();
        let seq = &self.data.sequence;
        let occ = &self.data.occupancy;
        let range = self.groups[i].clone();
        let events = &seq.events()[range];
        let t = events[0].time;
        let p = self.layout.p();
        let with_groups = !self.layout.families.is_empty();
        let (ns, nc) = (seq.species().len() as u32, seq.regions().len() as u32);

        let mut x = Vec::new();
        let mut groups = Vec::new();
        let mut event_rows = vec![usize::MAX; events.len()];
        let mut row = vec![0.0; p];
        let mut n = 0;
        for s in 0..ns {
            for c in 0..nc {
                let (s, c) = (SpeciesId(s), RegionId(c));
                if occ.is_occupied_before(s, c, t) {
                    continue;
                }
                let slots = engine.fill_row(s, c, t, &mut row)?;
                x.extend_from_slice(&row);
                if with_groups {
                    groups.push(slots);
                }
                if let Some(k) = events.iter().position(|e| e.sender == s && e.receiver == c) {
                    event_rows[k] = n;
                }
                n += 1;
            }
        }
        if let Some(k) = event_rows.iter().position(|&r| r == usize::MAX) {
            let e = events[k];
            return Err(Error::invalid(format!(
                "event ({}, {}, {}) is not in its risk set",
                seq.species().label(e.sender.0),
                seq.regions().label(e.receiver.0),
                e.time
            )));
        }
        Ok(Stratum {
            time: t,
            x,
            groups,
            events: event_rows,
            event_dyads: events.iter().map(|e| (e.sender, e.receiver)).collect(),
        })
    }
}

impl StrataSource for LazyDataset<'_> {
    fn layout(&self) -> &Layout {
        &self.layout
    }

    fn n_strata(&self) -> usize {
        self.groups.len()
    }

    fn stratum(&self, i: usize) -> Result<Cow<'_, Stratum>> {
        self.compute(i).map(Cow::Owned)
    }

    fn n_events(&self) -> usize {
        self.data.sequence.len()
    }

    fn start_time(&self) -> f64 {
        self.data.sequence.window().start
    }
}

fn layout_for(spec: &ModelSpec, data: &InvasionData, top: &TopInvaders) -> Layout {
    let mut layout = Layout::fixed(spec.columns());
    let seq = &data.sequence;
    for family in spec.random_effects.families() {
        let labels = match family {
            Family::Species => seq.species().labels().to_vec(),
            Family::Region => seq.regions().labels().to_vec(),
            Family::Dyadic(form) => top.dyadic_labels(seq.species(), form),
        };
        layout = layout.with_family(family, labels);
    }
    layout
}

/// Materializes every stratum of `data` under `spec`.
pub fn build_dataset(data: &InvasionData, panels: &CovariatePanels, spec: &ModelSpec) -> Result<Dataset> {
    LazyDataset::new(data, panels, spec)?.materialize()
}
