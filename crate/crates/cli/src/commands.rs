//! The four subcommands and manifest replay.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rem_core::diagnostics::{covariate_correlations, hazard_ratio_report, ph_test, r_squared_fit, schoenfeld};
use rem_core::estimator::StrataSource;
use rem_core::ingest::{self, load, DataPaths, LoadConfig, LoadedData};
use rem_core::simulator::{simulate, write_dir, SyntheticWorld};
use rem_core::{fit, Dataset, FitOptions, FitResult, LazyDataset, ModelSpec};
use serde::{Deserialize, Serialize};

use crate::config::LoadedConfig;
use crate::manifest::Manifest;
use crate::output::{ensure_dir, num, OutputSet};

/// Risk sets are kept in memory below this many design values.
const MATERIALIZE_LIMIT: usize = 20_000_000;

pub const PREPARED_DIR: &str = "prepared";
pub const PREPARE_REPORT_DIR: &str = "prepare";
pub const SIMULATED_DIR: &str = "simulated";

fn prepared_dir(cfg: &LoadedConfig) -> PathBuf {
    cfg.output_dir().join(PREPARED_DIR)
}

/// Reads the data inputs, repairs the panels and writes the normalized cache
/// plus a coverage report.
pub fn cmd_prepare(cfg: &LoadedConfig) -> Result<()> {
    let data = cfg.data()?;
    let paths = cfg.data_paths()?;
    let loaded = load(&paths, &data.load_config()?)?;
    let out = cfg.output_dir();
    let cache = prepared_dir(cfg);
    let report_dir = out.join(PREPARE_REPORT_DIR);
    ensure_dir(&cache)?;
    ensure_dir(&report_dir)?;
    let mut outputs = OutputSet::default();

    ingest::write_first_records(&cache.join("first_records.csv"), &loaded.records, &data.taxon)?;
    ingest::write_natives(&cache.join("natives.csv"), &loaded.natives)?;
    ingest::write_panels(&cache, &loaded.panels)?;
    for name in cache_files(&cache)? {
        outputs.add(cache.join(name));
    }

    let report = &loaded.report;
    outputs.csv(
        &report_dir.join("coverage.csv"),
        &["panel", "cells", "observed", "imputed", "interpolated", "absent_zero", "imputed_pct"],
        report.panels.iter().map(|p| {
            [
                p.panel.clone(),
                p.cells.to_string(),
                p.observed.to_string(),
                p.imputed.to_string(),
                p.interpolated.to_string(),
                p.absent_zero.to_string(),
                num(p.imputed_pct()),
            ]
        }),
    )?;
    outputs.csv(
        &report_dir.join("imputed_cells.csv"),
        &["panel", "key", "year"],
        report
            .panels
            .iter()
            .flat_map(|p| p.imputed_cells.iter().map(move |(k, y)| [p.panel.clone(), k.clone(), y.to_string()])),
    )?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    let mut warnings = report.warnings.join("\n");
    if !warnings.is_empty() {
        warnings.push('\n');
    }
    outputs.text(&report_dir.join("warnings.txt"), &warnings)?;
    let seq = &loaded.data.sequence;
    let summary = [
        ("n_events", seq.len()),
        ("n_species", seq.species().len()),
        ("n_regions", seq.regions().len()),
        ("n_event_times", seq.tie_groups().len()),
        ("dropped_before_window", loaded.dropped_before_window),
        ("dropped_after_window", loaded.dropped_after_window),
        ("collapsed_duplicates", loaded.collapsed_duplicates),
        ("ignored_native_rows", loaded.ignored_native_rows),
    ];
    outputs.csv(&report_dir.join("events_summary.csv"), &["key", "value"], summary.iter().map(|(k, v)| [k.to_string(), v.to_string()]))?;

    let mut manifest = Manifest::new("prepare", cfg);
    manifest.inputs = loaded.provenance.clone();
    manifest.finish(&outputs, &out, &report_dir.join("manifest.json"))?;
    println!("prepared {} events of {} species over {} regions into {}", seq.len(), seq.species().len(), seq.regions().len(), cache.display());
    for p in &report.panels {
        println!("  {:<16} {:>6.2}% imputed, {} interpolated cells", p.panel, p.imputed_pct(), p.interpolated);
    }
    Ok(())
}

fn cache_files(dir: &Path) -> Result<Vec<String>> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .with_context(|| format!("cannot list {}", dir.display()))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    names.sort();
    Ok(names)
}

/// Loads the prepared cache of a config.
pub fn load_prepared(cfg: &LoadedConfig) -> Result<LoadedData> {
    let cache = prepared_dir(cfg);
    if !cache.join("first_records.csv").exists() {
        bail!("no prepared data under {}; run `rem prepare` first", cache.display());
    }
    let data = cfg.data()?;
    let lc = LoadConfig { window: data.window()?, taxon: None, effort_cutoff: data.effort_cutoff };
    Ok(load(&DataPaths::in_dir(&cache), &lc)?)
}

enum Source<'a> {
    Lazy(LazyDataset<'a>),
    Full(Dataset),
}

impl Source<'_> {
    fn get(&self) -> &dyn StrataSource {
        match self {
            Source::Lazy(l) => l,
            Source::Full(d) => d,
        }
    }
}

fn source<'a>(loaded: &'a LoadedData, spec: &'a ModelSpec, materialize: Option<bool>) -> Result<Source<'a>> {
    let lazy = LazyDataset::new(&loaded.data, &loaded.panels, spec)?;
    let small = lazy.total_rows().saturating_mul(spec.n_columns().max(1)) <= MATERIALIZE_LIMIT;
    Ok(if materialize.unwrap_or(small) { Source::Full(lazy.materialize()?) } else { Source::Lazy(lazy) })
}

/// Fits named by their output directory.
fn fit_plan(cfg: &LoadedConfig) -> Vec<(String, ModelSpec)> {
    let model = &cfg.config.model;
    let forms = &cfg.config.fit.dyadic_forms;
    if forms.is_empty() {
        return vec![("fit".to_string(), model.clone())];
    }
    forms
        .iter()
        .map(|&f| {
            let mut spec = model.clone();
            spec.random_effects.dyadic = Some(f);
            (format!("fit_{}", rem_core::Family::Dyadic(f).name().trim_start_matches("dyadic_")), spec)
        })
        .collect()
}

/// Fits each planned model and writes its tables.
pub fn cmd_fit(cfg: &LoadedConfig) -> Result<()> {
    let loaded = load_prepared(cfg)?;
    let window = cfg.data()?.window()?;
    let out = cfg.output_dir();
    let section = &cfg.config.fit;
    let mut fits = Vec::new();
    for (label, spec) in fit_plan(cfg) {
        spec.validate(window)?;
        let src = source(&loaded, &spec, section.materialize)?;
        let opts = FitOptions { ties: spec.ties, newton: section.newton, mixed: section.mixed.clone() };
        let result = fit(src.get(), &opts)?;
        let dir = out.join(&label);
        write_fit(cfg, &loaded, &spec, &result, &dir)?;
        print_fit(&label, &result);
        fits.push((label, result));
    }
    if fits.len() > 1 {
        let mut outputs = OutputSet::default();
        let base = fits[0].1.loglik_model;
        let base_k = fits[0].1.n_params() as i64;
        outputs.csv(
            &out.join("fit_comparison.csv"),
            &["model", "loglik", "n_params", "aic", "bic", "chi2_vs_null", "loglik_diff", "chi2_diff", "df_diff"],
            fits.iter().map(|(label, f)| {
                let ic = f.information_criteria();
                [
                    label.clone(),
                    num(f.loglik_model),
                    f.n_params().to_string(),
                    num(ic.aic),
                    num(ic.bic),
                    num(f.chi2_vs_null()),
                    num(f.loglik_model - base),
                    num(2.0 * (f.loglik_model - base)),
                    (f.n_params() as i64 - base_k).to_string(),
                ]
            }),
        )?;
        let mut manifest = Manifest::new("fit", cfg);
        manifest.inputs = loaded.provenance.clone();
        manifest.finish(&outputs, &out, &out.join("fit_comparison_manifest.json"))?;
    }
    Ok(())
}

fn print_fit(label: &str, f: &FitResult) {
    println!("{label}: {} events, loglik {:.4} (null {:.4})", f.n_events, f.loglik_model, f.loglik_null);
    for c in f.coefficients() {
        println!("  {:<28} {:>12.5} (se {:.5}, p {:.3e})", c.name, c.estimate, c.se, c.p);
    }
    for v in &f.variance_components {
        println!("  sigma[{}] = {:.4} (p {:.3e})", v.family, v.sigma, v.p_value);
        if v.at_lower_bound {
            log::warn!("{label}: sigma[{}] sits at the lower search bound", v.family);
        }
    }
    log::info!("{label}: {} Newton iterations", f.convergence.iterations);
}

fn write_fit(cfg: &LoadedConfig, loaded: &LoadedData, spec: &ModelSpec, f: &FitResult, dir: &Path) -> Result<()> {
    ensure_dir(dir)?;
    let section = &cfg.config.fit;
    let mut outputs = OutputSet::default();
    outputs.csv(
        &dir.join("coefficients.csv"),
        &["name", "covariate", "period", "unit", "estimate", "se", "z", "p"],
        f.coefficients().into_iter().map(|c| {
            [c.name, c.covariate, c.period, c.unit, num(c.estimate), num(c.se), num(c.z), num(c.p)]
        }),
    )?;
    outputs.csv(
        &dir.join("variance_components.csv"),
        &["family", "n_groups", "sigma", "at_lower_bound", "lr_chi2", "p", "note"],
        f.variance_components.iter().map(|v| {
            [
                v.family.clone(),
                v.n_groups.to_string(),
                num(v.sigma),
                v.at_lower_bound.to_string(),
                num(v.lr_chi2),
                num(v.p_value),
                v.note.clone(),
            ]
        }),
    )?;
    outputs.csv(
        &dir.join("frailties.csv"),
        &["family", "label", "estimate", "se"],
        f.frailties.iter().flat_map(|t| {
            (0..t.labels.len()).map(move |i| [t.family.clone(), t.labels[i].clone(), num(t.estimates[i]), num(t.se[i])])
        }),
    )?;
    let mut rankings = Vec::new();
    for t in &f.frailties {
        let (high, low) = t.top_k(section.top_k);
        for (direction, idx) in [("high", high), ("low", low)] {
            for (rank, i) in idx.into_iter().enumerate() {
                rankings.push([
                    t.family.clone(),
                    direction.to_string(),
                    (rank + 1).to_string(),
                    t.labels[i].clone(),
                    num(t.estimates[i]),
                    num(t.se[i]),
                ]);
            }
        }
    }
    outputs.csv(&dir.join("frailty_rankings.csv"), &["family", "direction", "rank", "label", "estimate", "se"], rankings)?;
    outputs.csv(
        &dir.join("baseline.csv"),
        &["time", "increment", "cumulative"],
        f.baseline.iter().map(|b| [num(b.time), num(b.increment), num(b.cumulative)]),
    )?;
    let ic = f.information_criteria();
    let mut summary: Vec<(&str, String)> = vec![
        ("loglik_null", num(f.loglik_null)),
        ("loglik_model", num(f.loglik_model)),
        ("loglik_conditional", num(f.loglik_conditional)),
        ("loglik_penalized", f.loglik_penalized.map(num).unwrap_or_default()),
        ("n_events", f.n_events.to_string()),
        ("n_strata", f.n_strata.to_string()),
        ("n_params", f.n_params().to_string()),
        ("chi2_vs_null", num(f.chi2_vs_null())),
        ("aic", num(ic.aic)),
        ("bic", num(ic.bic)),
        ("aic_chi2", num(ic.aic_chi2)),
        ("bic_chi2", num(ic.bic_chi2)),
        ("r_squared", num(r_squared_fit(f))),
        ("ties", format!("{:?}", f.ties).to_lowercase()),
        ("iterations", f.convergence.iterations.to_string()),
        ("gradient_norm", num(f.convergence.gradient_norm)),
    ];
    summary.push(("outer_evaluations", f.convergence.outer_evaluations.to_string()));
    outputs.csv(&dir.join("summary.csv"), &["key", "value"], summary.into_iter().map(|(k, v)| [k.to_string(), v]))?;
    let deltas: Vec<(String, f64)> = section.hazard_ratio_deltas.iter().map(|(k, v)| (k.clone(), *v)).collect();
    outputs.csv(
        &dir.join("hazard_ratios.csv"),
        &["name", "delta", "multiplier", "percent_change", "lower", "upper"],
        hazard_ratio_report(f, &deltas, section.ci_level)
            .into_iter()
            .map(|h| [h.name, num(h.delta), num(h.multiplier), num(h.percent_change), num(h.lower), num(h.upper)]),
    )?;
    outputs.json(&dir.join("model.json"), spec)?;
    outputs.json(&dir.join("fit.json"), f)?;
    let mut manifest = Manifest::new("fit", cfg);
    manifest.inputs = loaded.provenance.clone();
    manifest.arguments.push(("fit_dir".into(), dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()));
    manifest.finish(&outputs, &cfg.output_dir(), &dir.join("manifest.json"))
}

/// Directory of the default fit of a config.
pub fn default_fit_dir(cfg: &LoadedConfig) -> PathBuf {
    let plan = fit_plan(cfg);
    cfg.output_dir().join(&plan[0].0)
}

/// Residuals, the proportional-hazards test and covariate correlations of a fit.
pub fn cmd_diagnose(cfg: &LoadedConfig, fit_path: Option<&Path>) -> Result<()> {
    let fit_dir = match fit_path {
        Some(p) if p.is_file() => p.parent().map(Path::to_path_buf).unwrap_or_default(),
        Some(p) => p.to_path_buf(),
        None => default_fit_dir(cfg),
    };
    let read = |name: &str| -> Result<String> {
        let p = fit_dir.join(name);
        std::fs::read_to_string(&p).with_context(|| format!("cannot read {}; run `rem fit` first", p.display()))
    };
    let f: FitResult = serde_json::from_str(&read("fit.json")?).context("invalid fit.json")?;
    let spec: ModelSpec = serde_json::from_str(&read("model.json")?).context("invalid model.json")?;
    let loaded = load_prepared(cfg)?;
    let src = source(&loaded, &spec, cfg.config.fit.materialize)?;
    let src = src.get();
    if src.layout().column_names() != f.columns.iter().map(|c| c.name.clone()).collect::<Vec<_>>() || src.n_events() != f.n_events {
        bail!("{} does not match the prepared data", fit_dir.join("fit.json").display());
    }

    let fit_name = fit_dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "fit".into());
    let dir = cfg.output_dir().join(format!("diagnose_{fit_name}"));
    ensure_dir(&dir)?;
    let mut outputs = OutputSet::default();
    let names: Vec<String> = f.columns.iter().map(|c| c.name.clone()).collect();

    let res = schoenfeld(&f, src, true)?;
    let mut header: Vec<String> = vec!["event".into(), "time".into(), "stratum".into()];
    header.extend(names.iter().map(|n| format!("r_{n}")));
    header.extend(names.iter().map(|n| format!("scaled_{n}")));
    let scaled = res.scaled.clone().unwrap_or_default();
    let rows = (0..res.schoenfeld.len()).map(|k| {
        let mut row = vec![k.to_string(), num(res.event_times[k]), res.strata[k].to_string()];
        row.extend(res.schoenfeld[k].iter().map(|v| num(*v)));
        row.extend(scaled.get(k).into_iter().flatten().map(|v| num(*v)));
        row
    });
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    outputs.csv(&dir.join("schoenfeld.csv"), &header_refs, rows)?;
    let mut header: Vec<String> = vec!["event".into(), "time".into(), "stratum".into()];
    header.extend(names.iter().cloned());
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    outputs.csv(
        &dir.join("dfbeta.csv"),
        &header_refs,
        (0..res.dfbeta.len()).map(|k| {
            let mut row = vec![k.to_string(), num(res.event_times[k]), res.strata[k].to_string()];
            row.extend(res.dfbeta[k].iter().map(|v| num(*v)));
            row
        }),
    )?;

    let ph = ph_test(&f, src, cfg.transform())?;
    outputs.csv(
        &dir.join("ph_test.csv"),
        &["term", "rho", "chi2", "df", "p", "testable", "note"],
        ph.terms.iter().chain(std::iter::once(&ph.global)).map(|t| {
            [t.name.clone(), num(t.rho), num(t.chi2), t.df.to_string(), num(t.p), t.testable.to_string(), t.note.clone()]
        }),
    )?;
    outputs.csv(
        &dir.join("ph_trend.csv"),
        &["term", "time", "residual", "smoothed"],
        ph.trends.iter().zip(&names).flat_map(|(pts, n)| {
            pts.iter().map(move |p| [n.clone(), num(p.time), num(p.residual), num(p.smoothed)])
        }),
    )?;

    let diag = &cfg.config.diagnose;
    let corr = covariate_correlations(src, diag.correlation_rows, diag.correlation_threshold)?;
    let mut header = vec!["covariate".to_string()];
    header.extend(corr.names.iter().cloned());
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    outputs.csv(
        &dir.join("correlations.csv"),
        &header_refs,
        corr.names.iter().zip(&corr.r).map(|(n, row)| {
            let mut r = vec![n.clone()];
            r.extend(row.iter().map(|v| num(*v)));
            r
        }),
    )?;
    outputs.csv(
        &dir.join("correlations_flagged.csv"),
        &["a", "b", "r"],
        corr.flagged.iter().map(|(a, b, r)| [a.clone(), b.clone(), num(*r)]),
    )?;
    outputs.csv(
        &dir.join("summary.csv"),
        &["key", "value"],
        [
            ["r_squared".to_string(), num(r_squared_fit(&f))],
            ["ph_global_chi2".to_string(), num(ph.global.chi2)],
            ["ph_global_df".to_string(), ph.global.df.to_string()],
            ["ph_global_p".to_string(), num(ph.global.p)],
            ["max_abs_correlation".to_string(), num(corr.max_abs)],
        ],
    )?;

    let mut manifest = Manifest::new("diagnose", cfg);
    manifest.inputs = loaded.provenance.clone();
    manifest.arguments.push(("fit".into(), fit_dir.display().to_string()));
    manifest.finish(&outputs, &cfg.output_dir(), &dir.join("manifest.json"))?;
    println!("diagnostics of {} written to {}", fit_dir.display(), dir.display());
    println!("  PH global test: chi2 {:.4}, df {}, p {:.3e}", ph.global.chi2, ph.global.df, ph.global.p);
    Ok(())
}

/// Ground truth of a simulated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationTruth {
    pub columns: Vec<String>,
    pub beta_true: Vec<f64>,
    pub frailties: Vec<rem_core::simulator::DrawnFrailties>,
    pub n_events: usize,
    pub ended_early: bool,
    pub capped: bool,
    pub world_seed: u64,
    pub seed: u64,
}

/// Draws a synthetic world and an event stream in it, written in the input schemas.
pub fn cmd_simulate(cfg: &LoadedConfig) -> Result<()> {
    let sim = cfg.simulate()?;
    let seed = cfg.config.seed;
    let world_seed = sim.world_seed.unwrap_or(seed);
    let world = SyntheticWorld::generate(&sim.world, world_seed)?;
    let spec = sim.generative_spec(&cfg.config.model)?;
    let result = simulate(&spec, &world.world, seed)?;
    let dir = cfg.output_dir().join(SIMULATED_DIR);
    write_dir(&dir, &world.world, &result.records, &sim.taxon)?;
    let mut outputs = OutputSet::default();
    for name in cache_files(&dir)? {
        outputs.add(dir.join(name));
    }
    let truth = SimulationTruth {
        columns: spec.model.columns().into_iter().map(|c| c.name).collect(),
        beta_true: spec.beta_true.clone(),
        frailties: result.frailties.clone(),
        n_events: result.records.len(),
        ended_early: result.ended_early,
        capped: result.capped,
        world_seed,
        seed,
    };
    outputs.json(&dir.join("truth.json"), &truth)?;
    Manifest::new("simulate", cfg).finish(&outputs, &cfg.output_dir(), &dir.join("manifest.json"))?;
    println!("simulated {} events into {}", truth.n_events, dir.display());
    if truth.ended_early {
        println!("  every dyad was occupied before the window ended");
    }
    Ok(())
}

/// Re-runs the command recorded in a manifest.
pub fn cmd_rerun(manifest_path: &Path) -> Result<()> {
    let m = Manifest::read(manifest_path)?;
    let cfg = m.loaded_config()?;
    match m.command.as_str() {
        "prepare" => cmd_prepare(&cfg),
        "fit" => cmd_fit(&cfg),
        "simulate" => cmd_simulate(&cfg),
        "diagnose" => {
            let fit = m.arguments.iter().find(|(k, _)| k == "fit").map(|(_, v)| PathBuf::from(v));
            cmd_diagnose(&cfg, fit.as_deref())
        }
        other => bail!("manifest names unknown command `{other}`"),
    }
}
