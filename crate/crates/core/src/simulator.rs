//! Event streams drawn from a fully specified model, synthetic worlds to draw
//! them in, and a brute-force event-probability oracle.
//!
//! Sampling uses competing exponential clocks. Between refresh points the
//! rate of every at-risk dyad is constant, so the waiting time to the next
//! event is exponential with the total rate. Refresh points are integer years
//! (annual panels), baseline breakpoints and period starts; after each event
//! the rows of the invading species and the column of the invaded region are
//! recomputed. The prior-invasions statistic is held at its value at the last
//! refresh between refreshes.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::covariates::{CovariateEngine, CovariatePanels, DyadPanel, LandCover, RegionPanel, TopInvaders, YearSpan, NO_GROUP};
use crate::error::{Error, Result};
use crate::event::{Event, EventSequence, FirstRecord, InvasionData, NodeSet, OccupancyState, RegionHistory, RegionId, SpeciesId, Window};
use crate::ingest;
use crate::model::{Family, ModelSpec};

/// Piecewise-constant baseline hazard `λ₀(t)` in events per dyad-year.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    /// Start of each segment after the first, increasing.
    pub breaks: Vec<f64>,
    /// One rate per segment: `rates[0]` before `breaks[0]`, and so on.
    pub rates: Vec<f64>,
}

impl Baseline {
    pub fn constant(rate: f64) -> Result<Self> {
        Self::piecewise(Vec::new(), vec![rate])
    }

    pub fn piecewise(breaks: Vec<f64>, rates: Vec<f64>) -> Result<Self> {
        let b = Baseline { breaks, rates };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rates.len() != self.breaks.len() + 1 {
            return Err(Error::invalid("baseline needs one more rate than breakpoints"));
        }
        if self.rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::invalid("baseline rates must be finite and nonnegative"));
        }
        if self.breaks.iter().any(|b| !b.is_finite()) || self.breaks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("baseline breakpoints must be finite and increasing"));
        }
        Ok(())
    }

    pub fn rate_at(&self, t: f64) -> f64 {
        self.rates[self.breaks.partition_point(|&b| b <= t)]
    }

    fn next_break_after(&self, t: f64) -> Option<f64> {
        self.breaks.iter().copied().find(|&b| b > t)
    }
}

/// Standard deviations of simulated Gaussian frailties; `None` draws none.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrailtySigmas {
    pub species: Option<f64>,
    pub region: Option<f64>,
    pub dyadic: Option<f64>,
}

/// A fully specified generative model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerativeSpec {
    /// Covariates and random-effect families; frailties are drawn only for
    /// families switched on here.
    pub model: ModelSpec,
    /// One coefficient per model column.
    pub beta_true: Vec<f64>,
    pub baseline: Baseline,
    #[serde(default)]
    pub sigmas: FrailtySigmas,
    pub window: Window,
    /// Stop after this many events.
    #[serde(default)]
    pub max_events: Option<usize>,
    /// Species of the dyadic random effect; defaults to the first `top_k`.
    #[serde(default)]
    pub top_members: Option<Vec<u32>>,
}

impl GenerativeSpec {
    pub fn validate(&self) -> Result<()> {
        self.baseline.validate()?;
        if self.beta_true.len() != self.model.n_columns() {
            return Err(Error::invalid(format!(
                "beta_true has {} entries for {} model columns",
                self.beta_true.len(),
                self.model.n_columns()
            )));
        }
        if self.beta_true.iter().any(|b| !b.is_finite()) {
            return Err(Error::invalid("beta_true must be finite"));
        }
        for s in [self.sigmas.species, self.sigmas.region, self.sigmas.dyadic].into_iter().flatten() {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::invalid(format!("frailty sd {s} must be finite and nonnegative")));
            }
        }
        Ok(())
    }
}

/// Nodes, native ranges and covariate panels in which events are drawn.
#[derive(Clone, Debug)]
pub struct World {
    pub species: NodeSet,
    pub natives: Vec<(String, String)>,
    pub panels: CovariatePanels,
}

impl World {
    pub fn regions(&self) -> &NodeSet {
        self.panels.regions()
    }

    fn initial_occupancy(&self) -> Result<OccupancyState> {
        let mut occ = OccupancyState::new(self.species.len(), self.regions().len());
        for (sp, r) in &self.natives {
            let s = self.species.get(sp).ok_or_else(|| Error::UnknownSpecies {
                species: sp.clone(),
                context: "native table of the world".into(),
            })?;
            let c = self.regions().get(r).ok_or_else(|| Error::UnknownRegion {
                region: r.clone(),
                context: "native table of the world".into(),
            })?;
            occ.set_native(SpeciesId(s), RegionId(c));
        }
        Ok(occ)
    }
}

/// Drawn frailties of one family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrawnFrailties {
    pub family: Family,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct SimulationOutput {
    /// Events in time order, as first records.
    pub records: Vec<FirstRecord>,
    /// The events over the world's full species set.
    pub data: InvasionData,
    /// Every dyad was occupied before the window ended.
    pub ended_early: bool,
    /// The event cap was reached before the window ended.
    pub capped: bool,
    pub frailties: Vec<DrawnFrailties>,
}

/// Log-rate contributions that do not change over time.
struct Frailties {
    species: Vec<f64>,
    region: Vec<f64>,
    dyadic: Vec<f64>,
}

impl Frailties {
    fn offset(&self, slots: [u32; 3]) -> f64 {
        let get = |v: &[f64], i: u32| if i == NO_GROUP { 0.0 } else { v[i as usize] };
        get(&self.species, slots[0]) + get(&self.region, slots[1]) + get(&self.dyadic, slots[2])
    }
}

fn draw_normals(rng: &mut ChaCha8Rng, n: usize, sigma: Option<f64>) -> Vec<f64> {
    match sigma {
        Some(sd) => (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                sd * z
            })
            .collect(),
        None => vec![0.0; n],
    }
}

/// Draws one event stream. The same spec, world and seed give the same
/// stream bit for bit.
pub fn simulate(spec: &GenerativeSpec, world: &World, seed: u64) -> Result<SimulationOutput> {
    spec.validate()?;
    let window = spec.window;
    let (n_s, n_c) = (world.species.len(), world.regions().len());
    let p = spec.model.n_columns();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let re = spec.model.random_effects;
    let top = match (&spec.top_members, re.dyadic) {
        (_, None) => TopInvaders::empty(n_s),
        (Some(m), Some(_)) => {
            if m.iter().any(|&s| s as usize >= n_s) {
                return Err(Error::invalid("top_members names a species outside the world"));
            }
            TopInvaders::from_members(n_s, m.iter().map(|&s| SpeciesId(s)).collect())
        }
        (None, Some(_)) => TopInvaders::from_members(n_s, (0..spec.model.top_k.min(n_s) as u32).map(SpeciesId).collect()),
    };
    let frailties = Frailties {
        species: draw_normals(&mut rng, if re.species { n_s } else { 0 }, spec.sigmas.species),
        region: draw_normals(&mut rng, if re.region { n_c } else { 0 }, spec.sigmas.region),
        dyadic: draw_normals(&mut rng, re.dyadic.map_or(0, |f| top.n_groups(f)), spec.sigmas.dyadic),
    };

    let mut occ = world.initial_occupancy()?;
    let mut history = RegionHistory::new(n_c);
    // exp(η) per dyad, zero when occupied
    let mut weight = vec![0.0; n_s * n_c];
    let mut x = vec![0.0; p];
    let mut refresh = |occ: &OccupancyState,
                       history: &RegionHistory,
                       t: f64,
                       weight: &mut [f64],
                       dyads: &mut dyn Iterator<Item = (u32, u32)>|
     -> Result<()> {
        let engine = CovariateEngine::new(&spec.model, &world.panels, occ, history, &top)?;
        for (s, c) in dyads {
            let (sid, cid) = (SpeciesId(s), RegionId(c));
            let w = &mut weight[s as usize * n_c + c as usize];
            if occ.is_occupied_before(sid, cid, t) {
                *w = 0.0;
                continue;
            }
            let slots = engine.fill_row(sid, cid, t, &mut x)?;
            let eta: f64 = x.iter().zip(&spec.beta_true).map(|(a, b)| a * b).sum::<f64>() + frailties.offset(slots);
            *w = eta.exp();
            if !w.is_finite() {
                return Err(Error::invalid(format!("rate overflow for dyad ({s}, {c}) at {t}")));
            }
        }
        Ok(())
    };
    let all = |n_s: usize, n_c: usize| (0..n_s as u32).flat_map(move |s| (0..n_c as u32).map(move |c| (s, c)));

    let mut at_risk = all(n_s, n_c).filter(|&(s, c)| !occ.is_occupied_before(SpeciesId(s), RegionId(c), window.start)).count();
    let mut t = window.start;
    refresh(&occ, &history, t, &mut weight, &mut all(n_s, n_c))?;
    let mut events: Vec<Event> = Vec::new();
    let mut ended_early = false;
    let mut capped = false;
    loop {
        if at_risk == 0 {
            ended_early = t < window.end;
            break;
        }
        if spec.max_events.is_some_and(|m| events.len() >= m) {
            capped = true;
            break;
        }
        let next = next_refresh(t, window.end, &spec.baseline, &spec.model);
        let sum: f64 = weight.iter().sum();
        let total = sum * spec.baseline.rate_at(t);
        let wait = if total > 0.0 {
            let e: f64 = Exp1.sample(&mut rng);
            e / total
        } else {
            f64::INFINITY
        };
        if t + wait < next {
            let tau = t + wait;
            let k = pick(&weight, rng.random::<f64>() * sum);
            let (s, c) = ((k / n_c) as u32, (k % n_c) as u32);
            let event = Event { sender: SpeciesId(s), receiver: RegionId(c), time: tau };
            occ.record_invasion(event.sender, event.receiver, tau)?;
            history.push(&event);
            events.push(event);
            at_risk -= 1;
            t = tau;
            let t_eval = tau + 1e-9 * tau.abs().max(1.0);
            let row = (0..n_c as u32).map(|cc| (s, cc));
            let col = (0..n_s as u32).filter(|&ss| ss != s).map(|ss| (ss, c));
            refresh(&occ, &history, t_eval, &mut weight, &mut row.chain(col))?;
            continue;
        }
        if next >= window.end {
            break;
        }
        t = next;
        refresh(&occ, &history, t, &mut weight, &mut all(n_s, n_c))?;
    }

    let records = events
        .iter()
        .map(|e| FirstRecord::new(world.species.label(e.sender.0), world.regions().label(e.receiver.0), e.time))
        .collect();
    let sequence = EventSequence::new(events, window, world.species.clone(), world.regions().clone())?;
    let mut occupancy = world.initial_occupancy()?;
    for e in sequence.events() {
        occupancy.record_invasion(e.sender, e.receiver, e.time)?;
    }
    let mut drawn = Vec::new();
    if re.species && spec.sigmas.species.is_some() {
        drawn.push(DrawnFrailties { family: Family::Species, values: frailties.species });
    }
    if re.region && spec.sigmas.region.is_some() {
        drawn.push(DrawnFrailties { family: Family::Region, values: frailties.region });
    }
    if let (Some(form), Some(_)) = (re.dyadic, spec.sigmas.dyadic) {
        drawn.push(DrawnFrailties { family: Family::Dyadic(form), values: frailties.dyadic });
    }
    Ok(SimulationOutput {
        records,
        data: InvasionData::new(sequence, occupancy),
        ended_early,
        capped,
        frailties: drawn,
    })
}

/// Next time at which rates may change without an event.
fn next_refresh(t: f64, end: f64, baseline: &Baseline, model: &ModelSpec) -> f64 {
    let mut next = (t.floor() + 1.0).min(end);
    if let Some(b) = baseline.next_break_after(t) {
        next = next.min(b);
    }
    if model.covariates.iter().any(|d| d.effect == crate::model::EffectKind::Piecewise) {
        if let Some(p) = model.periods.iter().map(|p| p.start).find(|&s| s > t) {
            next = next.min(p);
        }
    }
    next
}

/// First index whose cumulative weight exceeds `target`, skipping zero weights.
fn pick(weight: &[f64], target: f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &w) in weight.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last_positive = i;
            if acc > target {
                return i;
            }
        }
    }
    last_positive
}

/// Probability that the row `event_index` is the next event among `rows`
/// under coefficients `beta`: `1 / Σ_i exp((x_i − x_e)·β)`.
pub fn oracle_event_prob(beta: &[f64], rows: &[Vec<f64>], event_index: usize) -> Result<f64> {
    if rows.is_empty() || event_index >= rows.len() {
        return Err(Error::invalid("event index outside a nonempty risk set"));
    }
    let xe = &rows[event_index];
    let mut denom = 0.0;
    for row in rows {
        if row.len() != beta.len() {
            return Err(Error::invalid("row length differs from beta"));
        }
        let mut lin = 0.0;
        for j in 0..beta.len() {
            lin += (row[j] - xe[j]) * beta[j];
        }
        denom += lin.exp();
    }
    Ok(1.0 / denom)
}

/// Shape of a synthetic world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub n_species: usize,
    pub n_regions: usize,
    pub natives_per_species: usize,
    /// Regions are placed uniformly in a square of this side.
    pub extent_km: f64,
    pub first_year: i32,
    pub last_year: i32,
    /// Warming per year added to every region's temperature.
    pub temperature_trend: f64,
    pub n_empires: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            n_species: 50,
            n_regions: 40,
            natives_per_species: 2,
            extent_km: 10_000.0,
            first_year: 1880,
            last_year: 2005,
            temperature_trend: 0.01,
            n_empires: 3,
        }
    }
}

/// A world with random geography and covariate panels.
#[derive(Clone, Debug)]
pub struct SyntheticWorld {
    pub world: World,
    /// Planar coordinates in km.
    pub coords: Vec<(f64, f64)>,
}

impl SyntheticWorld {
    pub fn generate(config: &WorldConfig, seed: u64) -> Result<Self> {
        if config.n_species == 0 || config.n_regions < 2 {
            return Err(Error::invalid("a synthetic world needs species and at least two regions"));
        }
        if config.natives_per_species == 0 || config.natives_per_species >= config.n_regions {
            return Err(Error::invalid("natives_per_species must lie in 1..n_regions"));
        }
        let span = YearSpan::new(config.first_year, config.last_year)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = config.n_regions;
        let width = |k: usize| k.to_string().len();
        let regions = NodeSet::new((0..n).map(|i| format!("R{:0w$}", i, w = width(n))))?;
        let species = NodeSet::new((0..config.n_species).map(|i| format!("sp{:0w$}", i, w = width(config.n_species))))?;

        let coords: Vec<(f64, f64)> =
            (0..n).map(|_| (rng.random::<f64>() * config.extent_km, rng.random::<f64>() * config.extent_km)).collect();
        let mut km = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                km[a * n + b] = (coords[a].0 - coords[b].0).hypot(coords[a].1 - coords[b].1);
            }
        }

        let mut temp = RegionPanel::new(span, n);
        for c in 0..n {
            let z: f64 = StandardNormal.sample(&mut rng);
            let base = 15.0 + 8.0 * z;
            for (k, year) in span.years().enumerate() {
                let noise: f64 = StandardNormal.sample(&mut rng);
                temp.set(RegionId(c as u32), year, base + config.temperature_trend * k as f64 + 0.2 * noise);
            }
        }

        let mut trade = DyadPanel::new(span, n, 0.0);
        for a in 0..n {
            for b in 0..n {
                if a == b {
                    continue;
                }
                let z: f64 = StandardNormal.sample(&mut rng);
                let level = 10.0 + 2.0 * z - km[a * n + b] / 2000.0;
                for (k, year) in span.years().enumerate() {
                    let v = (level + 0.02 * k as f64).exp();
                    trade.set(RegionId(a as u32), RegionId(b as u32), year, v);
                }
            }
        }

        let mut lc = LandCover { cropland: RegionPanel::new(span, n), pasture: RegionPanel::new(span, n), urban: RegionPanel::new(span, n) };
        let years = span.len().max(2) as f64 - 1.0;
        for c in 0..n {
            let crop0 = 0.3 * rng.random::<f64>();
            let past0 = 0.3 * rng.random::<f64>();
            let urb0 = 0.05 * rng.random::<f64>();
            let (dc, dp, du) = (0.1 * rng.random::<f64>(), 0.1 * rng.random::<f64>(), 0.1 * rng.random::<f64>());
            for (k, year) in span.years().enumerate() {
                let f = k as f64 / years;
                let id = RegionId(c as u32);
                lc.cropland.set(id, year, crop0 + dc * f);
                lc.pasture.set(id, year, past0 + dp * f);
                lc.urban.set(id, year, urb0 + du * f);
            }
        }

        let empires: Vec<Option<String>> = (0..n)
            .map(|_| {
                let k = rng.random_range(0..=config.n_empires);
                (k < config.n_empires).then(|| format!("empire{k}"))
            })
            .collect();
        let effort: Vec<f64> = (0..n).map(|_| rng.random_range(10u32..=500) as f64).collect();

        let mut natives = Vec::new();
        for s in 0..config.n_species {
            let mut chosen: Vec<usize> = Vec::new();
            while chosen.len() < config.natives_per_species {
                let c = rng.random_range(0..n);
                if !chosen.contains(&c) {
                    chosen.push(c);
                }
            }
            chosen.sort_unstable();
            for c in chosen {
                natives.push((species.label(s as u32).to_string(), regions.label(c as u32).to_string()));
            }
        }

        let mut panels = CovariatePanels::new(regions);
        panels.set_distance(km)?;
        panels.set_trade(trade)?;
        panels.set_temperature(temp)?;
        panels.set_landcover(lc)?;
        panels.set_empires(&empires)?;
        panels.set_sampling_effort(effort)?;
        Ok(SyntheticWorld { world: World { species, natives, panels }, coords })
    }
}

/// Writes a world and its simulated records into `dir` in the ingest schemas.
pub fn write_dir(dir: &Path, world: &World, records: &[FirstRecord], taxon: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })?;
    ingest::write_first_records(&dir.join("first_records.csv"), records, taxon)?;
    ingest::write_natives(&dir.join("natives.csv"), &world.natives)?;
    ingest::write_panels(dir, &world.panels)
}
