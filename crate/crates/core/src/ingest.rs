//! Reading the external tables into event streams and covariate panels, with
//! the gap repairs applied to them: log-linear extrapolation of trade series,
//! linear interpolation of decadal land cover and the sampling-effort count.
//!
//! All inputs are comma-separated with a header row:
//!
//! | file | columns |
//! |---|---|
//! | first_records.csv | species_id, taxon, region_id, year |
//! | natives.csv | species_id, region_id |
//! | distance.csv | region_a, region_b, km |
//! | trade.csv | importer, exporter, year, usd |
//! | temperature.csv | region_id, year, celsius |
//! | landcover.csv | region_id, year, cropland, pasture, urban |
//! | empires.csv | region_id, empire |
//! | regions.csv | region_id |
//! | aliases.csv | alias, region_id |
//! | sampling_effort.csv | region_id, count |
//!
//! Missing numeric cells are empty or `NA`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::covariates::{year_of, CovariatePanels, DyadPanel, LandCover, RegionPanel, YearSpan};
use crate::error::{Error, Result};
use crate::event::{build_event_sequence, EventBuild, FirstRecord, InvasionData, NodeSet, RegionId, Window};

/// Where a table came from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub name: String,
    pub path: PathBuf,
    pub sha256: String,
    pub rows: usize,
}

/// A delimited table with its header and checksum.
#[derive(Clone, Debug)]
pub struct RawTable {
    pub name: String,
    pub path: PathBuf,
    pub sha256: String,
    headers: Vec<String>,
    rows: Vec<csv::StringRecord>,
}

impl RawTable {
    /// Reads `path`, requiring the given columns.
    pub fn read(name: &str, path: &Path, required: &[&str]) -> Result<Self> {
        let mut bytes = Vec::new();
        File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        let sha256 = hex::encode(Sha256::digest(&bytes));
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes.as_slice());
        let csv_err = |source| Error::Csv { path: path.to_path_buf(), source };
        let headers: Vec<String> = reader.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
        let missing: Vec<&str> = required.iter().copied().filter(|c| !headers.iter().any(|h| h == c)).collect();
        if !missing.is_empty() {
            return Err(Error::Schema {
                path: path.to_path_buf(),
                message: format!("missing column(s) {}; found {}", missing.join(", "), headers.join(", ")),
            });
        }
        let rows = reader.records().collect::<std::result::Result<Vec<_>, _>>().map_err(csv_err)?;
        Ok(RawTable { name: name.to_string(), path: path.to_path_buf(), sha256, headers, rows })
    }

    pub fn provenance(&self) -> Provenance {
        Provenance { name: self.name.clone(), path: self.path.clone(), sha256: self.sha256.clone(), rows: self.rows.len() }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn col(&self, name: &str) -> usize {
        self.headers.iter().position(|h| h == name).expect("required column checked on read")
    }

    /// `path:line` of a data row (the header is line 1).
    pub fn context(&self, row: usize) -> String {
        format!("{}:{}", self.path.display(), row + 2)
    }

    pub fn str(&self, row: usize, col: usize) -> &str {
        self.rows[row].get(col).unwrap_or("")
    }

    fn schema(&self, row: usize, message: String) -> Error {
        Error::Schema { path: self.path.clone(), message: format!("line {}: {message}", row + 2) }
    }

    /// A number, or `None` for an empty / `NA` cell.
    pub fn opt_f64(&self, row: usize, col: usize) -> Result<Option<f64>> {
        let s = self.str(row, col);
        if s.is_empty() || s.eq_ignore_ascii_case("na") {
            return Ok(None);
        }
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(Some)
            .ok_or_else(|| self.schema(row, format!("`{s}` in column `{}` is not a number", self.headers[col])))
    }

    pub fn f64(&self, row: usize, col: usize) -> Result<f64> {
        self.opt_f64(row, col)?
            .ok_or_else(|| self.schema(row, format!("empty value in column `{}`", self.headers[col])))
    }

    /// An integral calendar year.
    pub fn year(&self, row: usize, col: usize) -> Result<i32> {
        let v = self.f64(row, col)?;
        if v.fract() != 0.0 || v.abs() > 1e6 {
            return Err(self.schema(row, format!("year `{}` is not integral", self.str(row, col))));
        }
        Ok(v as i32)
    }
}

/// Maps region names and aliases onto the study-region list.
#[derive(Clone, Debug)]
pub struct RegionResolver {
    regions: NodeSet,
    aliases: HashMap<String, String>,
}

impl RegionResolver {
    pub fn new(regions: NodeSet, aliases: HashMap<String, String>) -> Result<Self> {
        for (alias, target) in &aliases {
            if regions.get(target).is_none() {
                return Err(Error::UnknownRegion { region: target.clone(), context: format!("target of alias `{alias}`") });
            }
        }
        Ok(RegionResolver { regions, aliases })
    }

    pub fn regions(&self) -> &NodeSet {
        &self.regions
    }

    /// Canonical label of `name`.
    pub fn canonical<'a>(&'a self, name: &'a str) -> Option<&'a str> {
        if self.regions.get(name).is_some() {
            return Some(name);
        }
        self.aliases.get(name).map(String::as_str)
    }

    pub fn resolve(&self, name: &str) -> Option<RegionId> {
        self.canonical(name).and_then(|n| self.regions.get(n)).map(RegionId)
    }

    fn require(&self, name: &str, table: &RawTable, row: usize) -> Result<RegionId> {
        self.resolve(name).ok_or_else(|| Error::UnknownRegion { region: name.to_string(), context: table.context(row) })
    }
}

/// Input file locations.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub first_records: PathBuf,
    pub natives: PathBuf,
    pub distance: PathBuf,
    pub regions: Option<PathBuf>,
    pub aliases: Option<PathBuf>,
    pub trade: Option<PathBuf>,
    pub temperature: Option<PathBuf>,
    pub landcover: Option<PathBuf>,
    pub empires: Option<PathBuf>,
    pub sampling_effort: Option<PathBuf>,
}

impl DataPaths {
    /// The standard file names inside `dir`, keeping only optional files that exist.
    pub fn in_dir(dir: &Path) -> Self {
        let opt = |name: &str| {
            let p = dir.join(name);
            p.exists().then_some(p)
        };
        DataPaths {
            first_records: dir.join("first_records.csv"),
            natives: dir.join("natives.csv"),
            distance: dir.join("distance.csv"),
            regions: opt("regions.csv"),
            aliases: opt("aliases.csv"),
            trade: opt("trade.csv"),
            temperature: opt("temperature.csv"),
            landcover: opt("landcover.csv"),
            empires: opt("empires.csv"),
            sampling_effort: opt("sampling_effort.csv"),
        }
    }

    /// Resolves relative paths against `base`.
    pub fn relative_to(mut self, base: &Path) -> Self {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.first_records);
        fix(&mut self.natives);
        fix(&mut self.distance);
        for p in [
            &mut self.regions,
            &mut self.aliases,
            &mut self.trade,
            &mut self.temperature,
            &mut self.landcover,
            &mut self.empires,
            &mut self.sampling_effort,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        self
    }
}

/// Outcome of filling one trade series.
#[derive(Clone, Debug, PartialEq)]
pub struct TradeFill {
    pub values: Vec<f64>,
    pub imputed: Vec<bool>,
    pub warning: Option<String>,
}

/// Completes a trade series. Leading gaps of a series whose first observation
/// is zero become zero; other gaps take `exp(α̂ + β̂ t) − 1` from a
/// least-squares fit of `log(value + 1)` on year, clamped at zero.
/// Observed values are kept as they are.
pub fn extrapolate_trade(series: &[(i32, Option<f64>)]) -> Result<TradeFill> {
    let observed: Vec<(f64, f64)> = series.iter().filter_map(|&(y, v)| v.map(|v| (y as f64, v))).collect();
    if observed.is_empty() {
        return Err(Error::invalid("trade series has no observed value"));
    }
    if let Some(&(y, v)) = observed.iter().find(|(_, v)| *v < 0.0) {
        return Err(Error::invalid(format!("negative trade value {v} in {y}")));
    }
    let first_idx = series.iter().position(|(_, v)| v.is_some()).expect("nonempty");
    let leading_zero = observed[0].1 == 0.0;
    let mut warning = None;
    let (alpha, slope) = if observed.len() == 1 {
        warning = Some(format!("single observed point in {}; constant fill", observed[0].0));
        (observed[0].1.ln_1p(), 0.0)
    } else {
        let n = observed.len() as f64;
        let mx = observed.iter().map(|o| o.0).sum::<f64>() / n;
        let my = observed.iter().map(|o| o.1.ln_1p()).sum::<f64>() / n;
        let sxx: f64 = observed.iter().map(|o| (o.0 - mx).powi(2)).sum();
        let sxy: f64 = observed.iter().map(|o| (o.0 - mx) * (o.1.ln_1p() - my)).sum();
        let slope = sxy / sxx;
        (my - slope * mx, slope)
    };
    let mut values = Vec::with_capacity(series.len());
    let mut imputed = Vec::with_capacity(series.len());
    for (i, &(y, v)) in series.iter().enumerate() {
        match v {
            Some(v) => {
                values.push(v);
                imputed.push(false);
            }
            None => {
                let fill = if i < first_idx && leading_zero {
                    0.0
                } else {
                    ((alpha + slope * y as f64).exp() - 1.0).max(0.0)
                };
                values.push(fill);
                imputed.push(true);
            }
        }
    }
    Ok(TradeFill { values, imputed, warning })
}

/// Annual values from decadal anchors by linear interpolation, held constant
/// outside the anchor range; clamped to `[0, 1]` when `proportion` is set.
pub fn interpolate_decadal(anchors: &[(i32, f64)], span: YearSpan, proportion: bool) -> Result<Vec<f64>> {
    if anchors.is_empty() {
        return Err(Error::invalid("no anchors to interpolate"));
    }
    let mut a: Vec<(i32, f64)> = anchors.to_vec();
    a.sort_by_key(|p| p.0);
    if a.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::invalid("duplicate anchor year"));
    }
    let value = |year: i32| -> f64 {
        if year <= a[0].0 {
            return a[0].1;
        }
        let last = a[a.len() - 1];
        if year >= last.0 {
            return last.1;
        }
        let k = a.partition_point(|p| p.0 <= year);
        let (lo, hi) = (a[k - 1], a[k]);
        if lo.0 == year {
            return lo.1;
        }
        let w = (year - lo.0) as f64 / (hi.0 - lo.0) as f64;
        lo.1 + w * (hi.1 - lo.1)
    };
    Ok(span
        .years()
        .map(|y| {
            let v = value(y);
            if proportion {
                v.clamp(0.0, 1.0)
            } else {
                v
            }
        })
        .collect())
}

/// Per region, the number of distinct species that are native there or were
/// recorded there no later than `cutoff`.
pub fn compute_sampling_effort(
    records: &[FirstRecord],
    natives: &[(String, String)],
    regions: &NodeSet,
    cutoff: f64,
) -> Vec<f64> {
    let mut sets: Vec<BTreeSet<&str>> = vec![BTreeSet::new(); regions.len()];
    for (sp, r) in natives {
        if let Some(c) = regions.get(r) {
            sets[c as usize].insert(sp);
        }
    }
    for rec in records.iter().filter(|r| r.time <= cutoff) {
        if let Some(c) = regions.get(&rec.region) {
            sets[c as usize].insert(&rec.species);
        }
    }
    sets.iter().map(|s| s.len() as f64).collect()
}

/// Gap accounting of one panel.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PanelCoverage {
    pub panel: String,
    pub cells: usize,
    pub observed: usize,
    /// Cells filled by gap repair.
    pub imputed: usize,
    /// Cells filled by decadal interpolation.
    pub interpolated: usize,
    /// Cells of series never reported, taken as zero.
    pub absent_zero: usize,
    /// `(key, year)` of each imputed cell.
    pub imputed_cells: Vec<(String, i32)>,
}

impl PanelCoverage {
    pub fn imputed_pct(&self) -> f64 {
        if self.cells == 0 {
            0.0
        } else {
            100.0 * self.imputed as f64 / self.cells as f64
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub panels: Vec<PanelCoverage>,
    pub warnings: Vec<String>,
}

impl CoverageReport {
    pub fn panel(&self, name: &str) -> Option<&PanelCoverage> {
        self.panels.iter().find(|p| p.panel == name)
    }
}

/// Settings of a load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadConfig {
    pub window: Window,
    /// Taxon kept in the event stream; `None` keeps all.
    pub taxon: Option<String>,
    /// Records up to this year count toward sampling effort.
    pub effort_cutoff: f64,
}

impl LoadConfig {
    pub fn new(window: Window) -> Self {
        LoadConfig { window, taxon: None, effort_cutoff: 1880.0 }
    }

    pub fn span(&self) -> Result<YearSpan> {
        YearSpan::new(year_of(self.window.start), year_of(self.window.end))
    }
}

/// Study regions from `regions.csv` when given, else from the distance table,
/// plus the alias table.
pub fn load_regions(paths: &DataPaths) -> Result<(RegionResolver, Vec<Provenance>)> {
    let mut prov = Vec::new();
    let labels: Vec<String> = match &paths.regions {
        Some(p) => {
            let t = RawTable::read("regions", p, &["region_id"])?;
            prov.push(t.provenance());
            let c = t.col("region_id");
            (0..t.len()).map(|r| t.str(r, c).to_string()).collect()
        }
        None => {
            let t = RawTable::read("distance", &paths.distance, &["region_a", "region_b", "km"])?;
            let (a, b) = (t.col("region_a"), t.col("region_b"));
            let set: BTreeSet<String> = (0..t.len()).flat_map(|r| [t.str(r, a).to_string(), t.str(r, b).to_string()]).collect();
            set.into_iter().collect()
        }
    };
    let regions = NodeSet::new(labels)?;
    let mut aliases = HashMap::new();
    if let Some(p) = &paths.aliases {
        let t = RawTable::read("aliases", p, &["alias", "region_id"])?;
        prov.push(t.provenance());
        let (a, r) = (t.col("alias"), t.col("region_id"));
        for row in 0..t.len() {
            aliases.insert(t.str(row, a).to_string(), t.str(row, r).to_string());
        }
    }
    Ok((RegionResolver::new(regions, aliases)?, prov))
}

/// First records with regions mapped to their canonical labels.
pub fn load_first_records(path: &Path, resolver: &RegionResolver) -> Result<(Vec<(FirstRecord, String)>, Provenance)> {
    let t = RawTable::read("first_records", path, &["species_id", "taxon", "region_id", "year"])?;
    let (s, tx, r, y) = (t.col("species_id"), t.col("taxon"), t.col("region_id"), t.col("year"));
    let mut out = Vec::with_capacity(t.len());
    for row in 0..t.len() {
        let c = resolver.require(t.str(row, r), &t, row)?;
        let time = t.f64(row, y)?;
        let rec = FirstRecord::new(t.str(row, s), resolver.regions().label(c.0), time);
        out.push((rec, t.str(row, tx).to_string()));
    }
    Ok((out, t.provenance()))
}

pub fn load_natives(path: &Path, resolver: &RegionResolver) -> Result<(Vec<(String, String)>, Provenance)> {
    let t = RawTable::read("natives", path, &["species_id", "region_id"])?;
    let (s, r) = (t.col("species_id"), t.col("region_id"));
    let mut out = Vec::with_capacity(t.len());
    for row in 0..t.len() {
        let c = resolver.require(t.str(row, r), &t, row)?;
        out.push((t.str(row, s).to_string(), resolver.regions().label(c.0).to_string()));
    }
    Ok((out, t.provenance()))
}

fn load_distance(path: &Path, resolver: &RegionResolver) -> Result<(Vec<f64>, Provenance)> {
    let t = RawTable::read("distance", path, &["region_a", "region_b", "km"])?;
    let (a, b, k) = (t.col("region_a"), t.col("region_b"), t.col("km"));
    let n = resolver.regions().len();
    let mut km = vec![f64::NAN; n * n];
    for i in 0..n {
        km[i * n + i] = 0.0;
    }
    for row in 0..t.len() {
        let ra = resolver.require(t.str(row, a), &t, row)?.index();
        let rb = resolver.require(t.str(row, b), &t, row)?.index();
        let d = t.f64(row, k)?;
        for (x, y) in [(ra, rb), (rb, ra)] {
            let cell = &mut km[x * n + y];
            if !cell.is_nan() && *cell != d {
                return Err(Error::Schema {
                    path: path.to_path_buf(),
                    message: format!("line {}: conflicting distance for ({}, {})", row + 2, t.str(row, a), t.str(row, b)),
                });
            }
            *cell = d;
        }
    }
    if let Some(i) = km.iter().position(|v| v.is_nan()) {
        let label = |j: usize| resolver.regions().label(j as u32).to_string();
        return Err(Error::Schema {
            path: path.to_path_buf(),
            message: format!("no distance for ({}, {})", label(i / n), label(i % n)),
        });
    }
    Ok((km, t.provenance()))
}

fn load_trade(path: &Path, resolver: &RegionResolver, span: YearSpan) -> Result<(DyadPanel, PanelCoverage, Vec<String>, Provenance)> {
    let t = RawTable::read("trade", path, &["importer", "exporter", "year", "usd"])?;
    let (im, ex, y, v) = (t.col("importer"), t.col("exporter"), t.col("year"), t.col("usd"));
    let mut series: BTreeMap<(u32, u32), BTreeMap<i32, Option<f64>>> = BTreeMap::new();
    for row in 0..t.len() {
        let a = resolver.require(t.str(row, im), &t, row)?;
        let b = resolver.require(t.str(row, ex), &t, row)?;
        if a == b {
            continue;
        }
        let year = t.year(row, y)?;
        if span.index(year).is_none() {
            continue;
        }
        let value = t.opt_f64(row, v)?;
        if value.is_some_and(|x| x < 0.0) {
            return Err(Error::Schema { path: path.to_path_buf(), message: format!("line {}: negative trade value", row + 2) });
        }
        series.entry((a.0, b.0)).or_default().insert(year, value);
    }
    let n = resolver.regions().len();
    let mut panel = DyadPanel::new(span, n, 0.0);
    let years: Vec<i32> = span.years().collect();
    let mut cov = PanelCoverage { panel: "trade".into(), cells: n * n.saturating_sub(1) * years.len(), ..Default::default() };
    let mut warnings = Vec::new();
    let label = |c: u32| resolver.regions().label(c).to_string();
    for (&(a, b), obs) in &series {
        let s: Vec<(i32, Option<f64>)> = years.iter().map(|yr| (*yr, obs.get(yr).copied().flatten())).collect();
        let key = format!("{}<-{}", label(a), label(b));
        if s.iter().all(|p| p.1.is_none()) {
            cov.absent_zero += years.len();
            continue;
        }
        let fill = extrapolate_trade(&s)?;
        if let Some(w) = fill.warning {
            warnings.push(format!("trade {key}: {w}"));
        }
        for ((yr, val), imp) in years.iter().zip(&fill.values).zip(&fill.imputed) {
            panel.set(RegionId(a), RegionId(b), *yr, *val);
            if *imp {
                cov.imputed += 1;
                cov.imputed_cells.push((key.clone(), *yr));
            } else {
                cov.observed += 1;
            }
        }
    }
    cov.absent_zero += cov.cells - cov.observed - cov.imputed - cov.absent_zero;
    Ok((panel, cov, warnings, t.provenance()))
}

fn load_temperature(path: &Path, resolver: &RegionResolver, span: YearSpan) -> Result<(RegionPanel, PanelCoverage, Provenance)> {
    let t = RawTable::read("temperature", path, &["region_id", "year", "celsius"])?;
    let (r, y, v) = (t.col("region_id"), t.col("year"), t.col("celsius"));
    let n = resolver.regions().len();
    let mut panel = RegionPanel::new(span, n);
    for row in 0..t.len() {
        let c = resolver.require(t.str(row, r), &t, row)?;
        let year = t.year(row, y)?;
        if let Some(val) = t.opt_f64(row, v)? {
            panel.set(c, year, val);
        }
    }
    for c in 0..n as u32 {
        for year in span.years() {
            if panel.get(RegionId(c), year).is_none() {
                return Err(Error::PanelGap {
                    panel: "temperature",
                    key: format!("region `{}`", resolver.regions().label(c)),
                    year,
                });
            }
        }
    }
    let cells = n * span.len();
    Ok((panel, PanelCoverage { panel: "temperature".into(), cells, observed: cells, ..Default::default() }, t.provenance()))
}

fn load_landcover(path: &Path, resolver: &RegionResolver, span: YearSpan) -> Result<(LandCover, PanelCoverage, Provenance)> {
    let t = RawTable::read("landcover", path, &["region_id", "year", "cropland", "pasture", "urban"])?;
    let r = t.col("region_id");
    let y = t.col("year");
    let cols = [t.col("cropland"), t.col("pasture"), t.col("urban")];
    let n = resolver.regions().len();
    let mut anchors: Vec<[Vec<(i32, f64)>; 3]> = vec![Default::default(); n];
    for row in 0..t.len() {
        let c = resolver.require(t.str(row, r), &t, row)?.index();
        let year = t.year(row, y)?;
        for (k, &col) in cols.iter().enumerate() {
            if let Some(v) = t.opt_f64(row, col)? {
                anchors[c][k].push((year, v));
            }
        }
    }
    let mut panels = [RegionPanel::new(span, n), RegionPanel::new(span, n), RegionPanel::new(span, n)];
    let mut cov = PanelCoverage { panel: "landcover".into(), cells: n * span.len(), ..Default::default() };
    for (c, a) in anchors.iter().enumerate() {
        for k in 0..3 {
            if a[k].is_empty() {
                return Err(Error::PanelGap {
                    panel: "landcover",
                    key: format!("region `{}`", resolver.regions().label(c as u32)),
                    year: span.first,
                });
            }
            let vals = interpolate_decadal(&a[k], span, true)?;
            for (year, v) in span.years().zip(vals) {
                panels[k].set(RegionId(c as u32), year, v);
            }
        }
        for year in span.years() {
            if a.iter().all(|s| s.iter().any(|p| p.0 == year)) {
                cov.observed += 1;
            } else {
                cov.interpolated += 1;
            }
        }
    }
    let [cropland, pasture, urban] = panels;
    Ok((LandCover { cropland, pasture, urban }, cov, t.provenance()))
}

fn load_empires(path: &Path, resolver: &RegionResolver) -> Result<(Vec<Option<String>>, Provenance)> {
    let t = RawTable::read("empires", path, &["region_id", "empire"])?;
    let (r, e) = (t.col("region_id"), t.col("empire"));
    let n = resolver.regions().len();
    let mut out: Vec<Option<Option<String>>> = vec![None; n];
    for row in 0..t.len() {
        let c = resolver.require(t.str(row, r), &t, row)?.index();
        let name = t.str(row, e);
        out[c] = Some((!(name.is_empty() || name.eq_ignore_ascii_case("independent"))).then(|| name.to_string()));
    }
    if let Some(c) = out.iter().position(Option::is_none) {
        return Err(Error::Schema {
            path: path.to_path_buf(),
            message: format!("region `{}` has no empire row", resolver.regions().label(c as u32)),
        });
    }
    Ok((out.into_iter().flatten().collect(), t.provenance()))
}

fn load_effort(path: &Path, resolver: &RegionResolver) -> Result<(Vec<f64>, Provenance)> {
    let t = RawTable::read("sampling_effort", path, &["region_id", "count"])?;
    let (r, k) = (t.col("region_id"), t.col("count"));
    let n = resolver.regions().len();
    let mut out = vec![f64::NAN; n];
    for row in 0..t.len() {
        let c = resolver.require(t.str(row, r), &t, row)?.index();
        out[c] = t.f64(row, k)?;
    }
    if let Some(c) = out.iter().position(|v| v.is_nan()) {
        return Err(Error::PanelGap {
            panel: "sampling_effort",
            key: format!("region `{}`", resolver.regions().label(c as u32)),
            year: 0,
        });
    }
    Ok((out, t.provenance()))
}

/// Everything read from a data directory.
#[derive(Clone, Debug)]
pub struct LoadedData {
    pub data: InvasionData,
    pub panels: CovariatePanels,
    pub report: CoverageReport,
    pub provenance: Vec<Provenance>,
    /// Event-stream bookkeeping of the build.
    pub dropped_before_window: usize,
    pub dropped_after_window: usize,
    pub collapsed_duplicates: usize,
    pub ignored_native_rows: usize,
    pub natives: Vec<(String, String)>,
    /// Records of the selected taxon, in input order.
    pub records: Vec<FirstRecord>,
}

/// Loads the event stream of the configured taxon and every panel present in `paths`.
pub fn load(paths: &DataPaths, config: &LoadConfig) -> Result<LoadedData> {
    let span = config.span()?;
    let (resolver, mut provenance) = load_regions(paths)?;
    let (records, p) = load_first_records(&paths.first_records, &resolver)?;
    provenance.push(p);
    let (natives, p) = load_natives(&paths.natives, &resolver)?;
    provenance.push(p);
    let all_records: Vec<FirstRecord> = records.iter().map(|(r, _)| r.clone()).collect();
    let selected: Vec<FirstRecord> = records
        .iter()
        .filter(|(_, taxon)| config.taxon.as_deref().is_none_or(|want| want.eq_ignore_ascii_case(taxon)))
        .map(|(r, _)| r.clone())
        .collect();
    if selected.is_empty() {
        return Err(Error::invalid(format!(
            "taxon filter `{}` selects no first records",
            config.taxon.as_deref().unwrap_or("all")
        )));
    }
    let build: EventBuild = build_event_sequence(&selected, config.window, &natives, resolver.regions())?;
    let (panels, report, p) = load_panels(paths, &resolver, span, &all_records, &natives, config.effort_cutoff)?;
    provenance.extend(p);
    let EventBuild { sequence, occupancy, dropped_before_window, dropped_after_window, collapsed_duplicates, ignored_native_rows } =
        build;
    if sequence.is_empty() {
        return Err(Error::invalid("no first records fall inside the window"));
    }
    for s in 0..sequence.species().len() as u32 {
        if occupancy.occupied_ever(crate::event::SpeciesId(s)).next().is_none() {
            return Err(Error::invalid(format!("species `{}` occupies no region", sequence.species().label(s))));
        }
    }
    Ok(LoadedData {
        data: InvasionData::new(sequence, occupancy),
        panels,
        report,
        provenance,
        dropped_before_window,
        dropped_after_window,
        collapsed_duplicates,
        ignored_native_rows,
        natives,
        records: selected,
    })
}

/// Loads and repairs every panel present in `paths`. Sampling effort is read
/// from its table when given and otherwise counted from `records` and `natives`.
pub fn load_panels(
    paths: &DataPaths,
    resolver: &RegionResolver,
    span: YearSpan,
    records: &[FirstRecord],
    natives: &[(String, String)],
    effort_cutoff: f64,
) -> Result<(CovariatePanels, CoverageReport, Vec<Provenance>)> {
    let mut panels = CovariatePanels::new(resolver.regions().clone());
    let mut report = CoverageReport::default();
    let mut prov = Vec::new();
    let n = resolver.regions().len();

    let (km, p) = load_distance(&paths.distance, resolver)?;
    panels.set_distance(km)?;
    report.panels.push(PanelCoverage { panel: "distance".into(), cells: n * n, observed: n * n, ..Default::default() });
    prov.push(p);
    if let Some(path) = &paths.trade {
        let (trade, cov, warnings, p) = load_trade(path, resolver, span)?;
        panels.set_trade(trade)?;
        report.panels.push(cov);
        report.warnings.extend(warnings);
        prov.push(p);
    }
    if let Some(path) = &paths.temperature {
        let (temp, cov, p) = load_temperature(path, resolver, span)?;
        panels.set_temperature(temp)?;
        report.panels.push(cov);
        prov.push(p);
    }
    if let Some(path) = &paths.landcover {
        let (lc, cov, p) = load_landcover(path, resolver, span)?;
        panels.set_landcover(lc)?;
        report.panels.push(cov);
        prov.push(p);
    }
    if let Some(path) = &paths.empires {
        let (emp, p) = load_empires(path, resolver)?;
        panels.set_empires(&emp)?;
        report.panels.push(PanelCoverage { panel: "empires".into(), cells: n, observed: n, ..Default::default() });
        prov.push(p);
    }
    let effort = match &paths.sampling_effort {
        Some(path) => {
            let (e, p) = load_effort(path, resolver)?;
            prov.push(p);
            e
        }
        None => compute_sampling_effort(records, natives, resolver.regions(), effort_cutoff),
    };
    panels.set_sampling_effort(effort)?;
    report.panels.push(PanelCoverage { panel: "sampling_effort".into(), cells: n, observed: n, ..Default::default() });
    Ok((panels, report, prov))
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(|source| Error::Csv { path: path.to_path_buf(), source })
}

fn write_rows<I, R>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut w = writer(path)?;
    let csv_err = |source| Error::Csv { path: path.to_path_buf(), source };
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    w.flush().map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

pub fn write_first_records(path: &Path, records: &[FirstRecord], taxon: &str) -> Result<()> {
    write_rows(
        path,
        &["species_id", "taxon", "region_id", "year"],
        records.iter().map(|r| [r.species.clone(), taxon.to_string(), r.region.clone(), r.time.to_string()]),
    )
}

pub fn write_natives(path: &Path, natives: &[(String, String)]) -> Result<()> {
    write_rows(path, &["species_id", "region_id"], natives.iter().map(|(s, r)| [s.as_str(), r.as_str()]))
}

pub fn write_regions(path: &Path, regions: &NodeSet) -> Result<()> {
    write_rows(path, &["region_id"], regions.labels().iter().map(|l| [l.as_str()]))
}

/// Every unordered pair once, diagonal omitted.
pub fn write_distance(path: &Path, panels: &CovariatePanels) -> Result<()> {
    let regions = panels.regions();
    let n = regions.len() as u32;
    let mut rows = Vec::new();
    for a in 0..n {
        for b in (a + 1)..n {
            let d = panels.distance_km(RegionId(a), RegionId(b)).ok_or_else(|| Error::invalid("distance panel not loaded"))?;
            rows.push([regions.label(a).to_string(), regions.label(b).to_string(), d.to_string()]);
        }
    }
    write_rows(path, &["region_a", "region_b", "km"], rows)
}

/// Nonzero cells only; absent dyads read back as zero.
pub fn write_trade(path: &Path, panels: &CovariatePanels) -> Result<()> {
    let trade = panels.trade().ok_or_else(|| Error::invalid("trade panel not loaded"))?;
    let regions = panels.regions();
    let n = regions.len() as u32;
    let mut rows = Vec::new();
    for a in 0..n {
        for b in 0..n {
            for year in trade.span().years() {
                if let Some(v) = trade.get(RegionId(a), RegionId(b), year).filter(|v| *v != 0.0) {
                    rows.push([regions.label(a).to_string(), regions.label(b).to_string(), year.to_string(), v.to_string()]);
                }
            }
        }
    }
    write_rows(path, &["importer", "exporter", "year", "usd"], rows)
}

pub fn write_temperature(path: &Path, panels: &CovariatePanels) -> Result<()> {
    let temp = panels.temperature().ok_or_else(|| Error::invalid("temperature panel not loaded"))?;
    let regions = panels.regions();
    let mut rows = Vec::new();
    for c in 0..regions.len() as u32 {
        for year in temp.span().years() {
            let v = temp.get(RegionId(c), year).map(|v| v.to_string()).unwrap_or_default();
            rows.push([regions.label(c).to_string(), year.to_string(), v]);
        }
    }
    write_rows(path, &["region_id", "year", "celsius"], rows)
}

pub fn write_landcover(path: &Path, panels: &CovariatePanels) -> Result<()> {
    let lc = panels.landcover().ok_or_else(|| Error::invalid("landcover panel not loaded"))?;
    let regions = panels.regions();
    let mut rows = Vec::new();
    let cell = |p: &RegionPanel, c: u32, y: i32| p.get(RegionId(c), y).map(|v| v.to_string()).unwrap_or_default();
    for c in 0..regions.len() as u32 {
        for year in lc.cropland.span().years() {
            rows.push([
                regions.label(c).to_string(),
                year.to_string(),
                cell(&lc.cropland, c, year),
                cell(&lc.pasture, c, year),
                cell(&lc.urban, c, year),
            ]);
        }
    }
    write_rows(path, &["region_id", "year", "cropland", "pasture", "urban"], rows)
}

pub fn write_empires(path: &Path, panels: &CovariatePanels) -> Result<()> {
    let regions = panels.regions();
    let mut rows = Vec::new();
    for c in 0..regions.len() as u32 {
        let e = panels.empire(RegionId(c)).ok_or_else(|| Error::invalid("empire table not loaded"))?;
        rows.push([regions.label(c).to_string(), e.unwrap_or("independent").to_string()]);
    }
    write_rows(path, &["region_id", "empire"], rows)
}

pub fn write_sampling_effort(path: &Path, panels: &CovariatePanels) -> Result<()> {
    let regions = panels.regions();
    let mut rows = Vec::new();
    for c in 0..regions.len() as u32 {
        let e = panels.sampling_effort(RegionId(c)).ok_or_else(|| Error::invalid("sampling effort not loaded"))?;
        rows.push([regions.label(c).to_string(), e.to_string()]);
    }
    write_rows(path, &["region_id", "count"], rows)
}

/// Writes every loaded panel plus `regions.csv` into `dir` under the standard names.
pub fn write_panels(dir: &Path, panels: &CovariatePanels) -> Result<()> {
    write_regions(&dir.join("regions.csv"), panels.regions())?;
    write_distance(&dir.join("distance.csv"), panels)?;
    if panels.trade().is_some() {
        write_trade(&dir.join("trade.csv"), panels)?;
    }
    if panels.temperature().is_some() {
        write_temperature(&dir.join("temperature.csv"), panels)?;
    }
    if panels.landcover().is_some() {
        write_landcover(&dir.join("landcover.csv"), panels)?;
    }
    if panels.empire(RegionId(0)).is_some() {
        write_empires(&dir.join("empires.csv"), panels)?;
    }
    if panels.sampling_effort(RegionId(0)).is_some() {
        write_sampling_effort(&dir.join("sampling_effort.csv"), panels)?;
    }
    Ok(())
}
