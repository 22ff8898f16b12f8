//! Relational event streams: node sets, events, occupancy, histories and risk sets.
//!
//! Senders are species and receivers are regions. An event `(s, c, t)` is the
//! first record of species `s` in region `c` at time `t`. Occupancy is
//! monotone: a region, once occupied, stays occupied, so the risk set of a
//! species only shrinks over time.

use std::collections::HashMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SpeciesId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RegionId(pub u32);

impl SpeciesId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RegionId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// An ordered, duplicate-free set of node labels.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NodeSet {
    labels: Vec<String>,
    index: HashMap<String, u32>,
}

impl NodeSet {
    pub fn new<I, S>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut set = NodeSet::default();
        for label in labels {
            let label = label.into();
            if set.index.contains_key(&label) {
                return Err(Error::invalid(format!("duplicate node label `{label}`")));
            }
            set.index.insert(label.clone(), set.labels.len() as u32);
            set.labels.push(label);
        }
        Ok(set)
    }

    pub fn get(&self, label: &str) -> Option<u32> {
        self.index.get(label).copied()
    }

    pub fn label(&self, index: u32) -> &str {
        &self.labels[index as usize]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Observation window `[start, end]`, both ends inclusive.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub start: f64,
    pub end: f64,
}

impl Window {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !(start.is_finite() && end.is_finite() && start <= end) {
            return Err(Error::invalid(format!("invalid window [{start}, {end}]")));
        }
        Ok(Window { start, end })
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t <= self.end
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    pub sender: SpeciesId,
    pub receiver: RegionId,
    pub time: f64,
}

/// Time-ordered invasion events over fixed species and region sets.
#[derive(Clone, Debug)]
pub struct EventSequence {
    events: Vec<Event>,
    window: Window,
    species: NodeSet,
    regions: NodeSet,
}

impl EventSequence {
    /// Validates and stores `events`. Events are stably sorted by time, so
    /// input order is kept among events sharing a time stamp.
    pub fn new(mut events: Vec<Event>, window: Window, species: NodeSet, regions: NodeSet) -> Result<Self> {
        events.sort_by(|a, b| a.time.total_cmp(&b.time));
        let mut seen = std::collections::HashSet::with_capacity(events.len());
        for e in &events {
            if e.sender.index() >= species.len() {
                return Err(Error::invalid(format!("event sender {} outside species set", e.sender.0)));
            }
            if e.receiver.index() >= regions.len() {
                return Err(Error::invalid(format!("event receiver {} outside region set", e.receiver.0)));
            }
            if !window.contains(e.time) {
                return Err(Error::invalid(format!(
                    "event ({}, {}, {}) outside window [{}, {}]",
                    species.label(e.sender.0),
                    regions.label(e.receiver.0),
                    e.time,
                    window.start,
                    window.end
                )));
            }
            if !seen.insert((e.sender, e.receiver)) {
                return Err(Error::invalid(format!(
                    "dyad ({}, {}) occurs more than once",
                    species.label(e.sender.0),
                    regions.label(e.receiver.0)
                )));
            }
        }
        Ok(EventSequence { events, window, species, regions })
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn species(&self) -> &NodeSet {
        &self.species
    }

    pub fn regions(&self) -> &NodeSet {
        &self.regions
    }

    /// Events strictly before `t`.
    pub fn history(&self, t: f64) -> &[Event] {
        let end = self.events.partition_point(|e| e.time < t);
        &self.events[..end]
    }

    /// Index ranges of events sharing a time stamp, in time order.
    pub fn tie_groups(&self) -> Vec<Range<usize>> {
        let mut groups = Vec::new();
        let mut start = 0;
        for i in 1..=self.events.len() {
            if i == self.events.len() || self.events[i].time != self.events[start].time {
                groups.push(start..i);
                start = i;
            }
        }
        groups
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Origin {
    Native,
    Invaded(f64),
}

/// Which regions each species occupies, with the time each was first occupied.
///
/// Query times are "just before `t`": a region invaded at `τ` counts as
/// occupied for every query `t > τ`.
#[derive(Clone, Debug)]
pub struct OccupancyState {
    n_regions: usize,
    since: Vec<f64>,
    by_species: Vec<Vec<(f64, RegionId)>>,
}

impl OccupancyState {
    pub fn new(n_species: usize, n_regions: usize) -> Self {
        OccupancyState {
            n_regions,
            since: vec![f64::INFINITY; n_species * n_regions],
            by_species: vec![Vec::new(); n_species],
        }
    }

    pub fn n_species(&self) -> usize {
        self.by_species.len()
    }

    pub fn n_regions(&self) -> usize {
        self.n_regions
    }

    #[inline]
    fn slot(&self, s: SpeciesId, c: RegionId) -> usize {
        s.index() * self.n_regions + c.index()
    }

    pub fn set_native(&mut self, s: SpeciesId, c: RegionId) {
        let slot = self.slot(s, c);
        if self.since[slot] == f64::NEG_INFINITY {
            return;
        }
        let list = &mut self.by_species[s.index()];
        if self.since[slot].is_finite() {
            list.retain(|&(_, r)| r != c);
        }
        self.since[slot] = f64::NEG_INFINITY;
        list.insert(0, (f64::NEG_INFINITY, c));
    }

    /// Records that `s` reached `c` at `t`. Rejects already-occupied dyads.
    pub fn record_invasion(&mut self, s: SpeciesId, c: RegionId, t: f64) -> Result<()> {
        let slot = self.slot(s, c);
        if self.since[slot] != f64::INFINITY {
            return Err(Error::invalid(format!(
                "species {} already occupies region {} before {t}",
                s.0, c.0
            )));
        }
        self.since[slot] = t;
        let list = &mut self.by_species[s.index()];
        let pos = list.partition_point(|&(since, _)| since <= t);
        list.insert(pos, (t, c));
        Ok(())
    }

    pub fn origin(&self, s: SpeciesId, c: RegionId) -> Option<Origin> {
        let since = self.since[self.slot(s, c)];
        if since == f64::NEG_INFINITY {
            Some(Origin::Native)
        } else if since.is_finite() {
            Some(Origin::Invaded(since))
        } else {
            None
        }
    }

    /// Whether `c` is occupied by `s` at `t⁻`.
    #[inline]
    pub fn is_occupied_before(&self, s: SpeciesId, c: RegionId, t: f64) -> bool {
        self.since[self.slot(s, c)] < t
    }

    /// Regions occupied by `s` at `t⁻`, natives first then in order of invasion.
    pub fn occupied_before(&self, s: SpeciesId, t: f64) -> impl Iterator<Item = RegionId> + '_ {
        let list = &self.by_species[s.index()];
        let end = list.partition_point(|&(since, _)| since < t);
        list[..end].iter().map(|&(_, c)| c)
    }

    /// Like [`occupied_before`](Self::occupied_before) but skipping native regions.
    pub fn invaded_before(&self, s: SpeciesId, t: f64) -> impl Iterator<Item = RegionId> + '_ {
        let list = &self.by_species[s.index()];
        let end = list.partition_point(|&(since, _)| since < t);
        list[..end]
            .iter()
            .filter(|&&(since, _)| since != f64::NEG_INFINITY)
            .map(|&(_, c)| c)
    }

    /// Every region `s` has ever occupied.
    pub fn occupied_ever(&self, s: SpeciesId) -> impl Iterator<Item = RegionId> + '_ {
        self.by_species[s.index()].iter().map(|&(_, c)| c)
    }
}

/// Per-region list of invasion events, in sequence order.
#[derive(Clone, Debug, Default)]
pub struct RegionHistory {
    by_region: Vec<Vec<(f64, SpeciesId)>>,
}

impl RegionHistory {
    pub fn new(n_regions: usize) -> Self {
        RegionHistory { by_region: vec![Vec::new(); n_regions] }
    }

    pub fn from_sequence(seq: &EventSequence) -> Self {
        let mut history = RegionHistory::new(seq.regions().len());
        for e in seq.events() {
            history.push(e);
        }
        history
    }

    /// Appends an event; events must arrive in nondecreasing time order.
    pub fn push(&mut self, e: &Event) {
        self.by_region[e.receiver.index()].push((e.time, e.sender));
    }

    /// Invasions of `c` strictly before `t`, oldest first.
    pub fn before(&self, c: RegionId, t: f64) -> &[(f64, SpeciesId)] {
        let list = &self.by_region[c.index()];
        &list[..list.partition_point(|&(time, _)| time < t)]
    }
}

/// Dyads eligible for an event at a given time.
#[derive(Clone, Debug, PartialEq)]
pub struct RiskSet {
    pub time: f64,
    pub dyads: Vec<(SpeciesId, RegionId)>,
}

impl RiskSet {
    pub fn len(&self) -> usize {
        self.dyads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dyads.is_empty()
    }

    pub fn contains(&self, s: SpeciesId, c: RegionId) -> bool {
        self.dyads.contains(&(s, c))
    }
}

/// All `(s, c)` with `c` not occupied by `s` at `t⁻`, species-major.
///
/// Every species is active from the window start and the region set is
/// fixed, so the risk set is the complement of occupancy.
pub fn risk_set_at(seq: &EventSequence, occ: &OccupancyState, t: f64) -> RiskSet {
    let mut dyads = Vec::new();
    for s in 0..seq.species().len() as u32 {
        for c in 0..seq.regions().len() as u32 {
            if !occ.is_occupied_before(SpeciesId(s), RegionId(c), t) {
                dyads.push((SpeciesId(s), RegionId(c)));
            }
        }
    }
    RiskSet { time: t, dyads }
}

/// A raw first-record row.
#[derive(Clone, Debug, PartialEq)]
pub struct FirstRecord {
    pub species: String,
    pub region: String,
    pub time: f64,
}

impl FirstRecord {
    pub fn new(species: impl Into<String>, region: impl Into<String>, time: f64) -> Self {
        FirstRecord { species: species.into(), region: region.into(), time }
    }
}

/// Output of [`build_event_sequence`].
#[derive(Clone, Debug)]
pub struct EventBuild {
    pub sequence: EventSequence,
    pub occupancy: OccupancyState,
    /// Records dropped because they fall outside the window. Pre-window
    /// records still initialize occupancy.
    pub dropped_before_window: usize,
    pub dropped_after_window: usize,
    /// Duplicate `(species, region)` records collapsed to the earliest year.
    pub collapsed_duplicates: usize,
    /// Native rows naming species without any first record.
    pub ignored_native_rows: usize,
}

impl EventBuild {
    pub fn dropped_outside_window(&self) -> usize {
        self.dropped_before_window + self.dropped_after_window
    }
}

/// Builds the event stream and its initial occupancy from first records.
///
/// The species set is every species with at least one record, sorted by
/// label. `regions` is the harmonized study-region list.
pub fn build_event_sequence(
    records: &[FirstRecord],
    window: Window,
    natives: &[(String, String)],
    regions: &NodeSet,
) -> Result<EventBuild> {
    if records.is_empty() {
        return Err(Error::invalid("no first records"));
    }
    let mut species_labels: Vec<&str> = records.iter().map(|r| r.species.as_str()).collect();
    species_labels.sort_unstable();
    species_labels.dedup();
    let species = NodeSet::new(species_labels.iter().copied())?;

    let mut occupancy = OccupancyState::new(species.len(), regions.len());
    let mut ignored_native_rows = 0;
    for (row, (sp, region)) in natives.iter().enumerate() {
        let c = regions.get(region).ok_or_else(|| Error::UnknownRegion {
            region: region.clone(),
            context: format!("native table row {}", row + 1),
        })?;
        match species.get(sp) {
            Some(s) => occupancy.set_native(SpeciesId(s), RegionId(c)),
            None => ignored_native_rows += 1,
        }
    }

    // Earliest record per dyad; the first such row keeps its input position.
    let mut earliest: HashMap<(u32, u32), usize> = HashMap::new();
    let mut kept: Vec<Option<Event>> = Vec::with_capacity(records.len());
    let mut collapsed_duplicates = 0;
    for (row, rec) in records.iter().enumerate() {
        if !rec.time.is_finite() {
            return Err(Error::invalid(format!("record row {}: unparseable year", row + 1)));
        }
        let c = regions.get(&rec.region).ok_or_else(|| Error::UnknownRegion {
            region: rec.region.clone(),
            context: format!("first-record row {}: ({}, {}, {})", row + 1, rec.species, rec.region, rec.time),
        })?;
        let s = species.get(&rec.species).expect("species set built from records");
        if occupancy.origin(SpeciesId(s), RegionId(c)) == Some(Origin::Native) {
            return Err(Error::NativeRegionRecord {
                species: rec.species.clone(),
                region: rec.region.clone(),
                context: format!("first-record row {}", row + 1),
            });
        }
        let event = Event { sender: SpeciesId(s), receiver: RegionId(c), time: rec.time };
        match earliest.get(&(s, c)) {
            Some(&slot) => {
                collapsed_duplicates += 1;
                let prev = kept[slot].as_mut().expect("slot holds an event");
                if event.time < prev.time {
                    prev.time = event.time;
                }
            }
            None => {
                earliest.insert((s, c), kept.len());
                kept.push(Some(event));
            }
        }
    }

    let mut events = Vec::with_capacity(kept.len());
    let mut dropped_before_window = 0;
    let mut dropped_after_window = 0;
    for event in kept.into_iter().flatten() {
        if event.time < window.start {
            dropped_before_window += 1;
            occupancy.record_invasion(event.sender, event.receiver, event.time)?;
        } else if event.time > window.end {
            dropped_after_window += 1;
        } else {
            events.push(event);
        }
    }

    let sequence = EventSequence::new(events, window, species, regions.clone())?;
    for e in sequence.events() {
        occupancy.record_invasion(e.sender, e.receiver, e.time)?;
    }
    Ok(EventBuild {
        sequence,
        occupancy,
        dropped_before_window,
        dropped_after_window,
        collapsed_duplicates,
        ignored_native_rows,
    })
}

/// An event stream bundled with the state needed to evaluate covariates on it.
#[derive(Clone, Debug)]
pub struct InvasionData {
    pub sequence: EventSequence,
    pub occupancy: OccupancyState,
    pub history: RegionHistory,
}

impl InvasionData {
    pub fn new(sequence: EventSequence, occupancy: OccupancyState) -> Self {
        let history = RegionHistory::from_sequence(&sequence);
        InvasionData { sequence, occupancy, history }
    }
}

impl From<EventBuild> for InvasionData {
    fn from(build: EventBuild) -> Self {
        InvasionData::new(build.sequence, build.occupancy)
    }
}
