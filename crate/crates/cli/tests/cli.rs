use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn rem(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rem")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = rem(args, cwd);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn two_species_dir() -> TempDir {
    let tmp = TempDir::new().unwrap();
    let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/two_species");
    for e in fs::read_dir(src).unwrap() {
        let e = e.unwrap();
        fs::copy(e.path(), tmp.path().join(e.file_name())).unwrap();
    }
    tmp
}

fn read_csv(path: &Path) -> Vec<BTreeMap<String, String>> {
    let mut r = csv::Reader::from_path(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let header = r.headers().unwrap().clone();
    r.records().map(|rec| header.iter().zip(rec.unwrap().iter()).map(|(h, v)| (h.to_string(), v.to_string())).collect()).collect()
}

fn files_under(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

const SIM_CONFIG: &str = r#"
output = "out"
seed = 7

[data]
window = [1880, 2005]

[data.files]
first_records = "out/simulated/first_records.csv"
natives = "out/simulated/natives.csv"
distance = "out/simulated/distance.csv"

[model]
covariates = [{ kind = "distance" }]

[simulate]
beta_true = [-1.5, 1.5]
baseline = { breaks = [], rates = [0.05] }
window = [1880, 2005]
max_events = 500
world = { n_species = 30, n_regions = 30, natives_per_species = 2, extent_km = 10000, first_year = 1880, last_year = 2005, temperature_trend = 0.01, n_empires = 3 }

[simulate.model]
covariates = [{ kind = "distance", effect = "piecewise" }]
periods = [[1880, 1943], [1943, 2006]]
"#;

fn sim_dir(config: &str) -> TempDir {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("config.toml"), config).unwrap();
    tmp
}

#[test]
fn two_species_fixture_prepares_fits_and_diagnoses() {
    let tmp = two_species_dir();
    let dir = tmp.path();
    ok(&["prepare", "--config", "config.toml"], dir);
    assert!(dir.join("out/prepared/first_records.csv").exists());
    assert!(dir.join("out/prepare/coverage.csv").exists());
    ok(&["fit", "--config", "config.toml"], dir);
    let coef = read_csv(&dir.join("out/fit/coefficients.csv"));
    assert_eq!(coef.len(), 1);
    let beta: f64 = coef[0]["estimate"].parse().unwrap();
    assert!((beta + 0.64).abs() < 0.01, "{beta}");

    ok(&["diagnose", "--config", "config.toml"], dir);
    let res = read_csv(&dir.join("out/diagnose_fit/schoenfeld.csv"));
    assert_eq!(res.len(), 2);
    let sum: f64 = res.iter().map(|r| r["r_distance"].parse::<f64>().unwrap()).sum();
    assert!(sum.abs() < 1e-8, "{sum}");
    let ph = read_csv(&dir.join("out/diagnose_fit/ph_test.csv"));
    assert_eq!(ph.last().unwrap()["term"], "GLOBAL");
}

#[test]
fn missing_input_names_the_path() {
    let tmp = two_species_dir();
    fs::remove_file(tmp.path().join("natives.csv")).unwrap();
    let out = rem(&["prepare", "--config", "config.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("natives.csv"));
}

#[test]
fn fit_without_prepare_is_a_user_error() {
    let tmp = two_species_dir();
    let out = rem(&["fit", "--config", "config.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("rem prepare"));
}

#[test]
fn unknown_config_key_is_a_user_error() {
    let tmp = two_species_dir();
    let path = tmp.path().join("config.toml");
    let text = fs::read_to_string(&path).unwrap();
    fs::write(&path, text.replace("seed = 1", "seed = 1\nsede = 2")).unwrap();
    let out = rem(&["prepare", "--config", "config.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn nonconvergence_exits_with_code_two() {
    let tmp = two_species_dir();
    let path = tmp.path().join("config.toml");
    let mut text = fs::read_to_string(&path).unwrap();
    text.push_str("\n[fit.newton]\nmax_iter = 1\n");
    fs::write(&path, text).unwrap();
    ok(&["prepare", "--config", "config.toml"], tmp.path());
    let out = rem(&["fit", "--config", "config.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn simulate_with_the_same_seed_is_byte_identical() {
    let a = sim_dir(SIM_CONFIG);
    let b = sim_dir(SIM_CONFIG);
    ok(&["simulate", "--config", "config.toml"], a.path());
    ok(&["simulate", "--config", "config.toml"], b.path());
    let fa = files_under(&a.path().join("out/simulated"));
    let fb = files_under(&b.path().join("out/simulated"));
    assert_eq!(fa.keys().collect::<Vec<_>>(), fb.keys().collect::<Vec<_>>());
    for (k, v) in &fa {
        if k.as_os_str() != "manifest.json" {
            assert!(v == &fb[k], "{} differs", k.display());
        }
    }
    let before = files_under(&a.path().join("out"));
    ok(&["simulate", "--config", "config.toml"], a.path());
    assert_eq!(before, files_under(&a.path().join("out")));
}

#[test]
fn ph_violating_simulation_fails_the_global_test() {
    let tmp = sim_dir(SIM_CONFIG);
    for cmd in ["simulate", "prepare", "fit", "diagnose"] {
        ok(&[cmd, "--config", "config.toml"], tmp.path());
    }
    let ph = read_csv(&tmp.path().join("out/diagnose_fit/ph_test.csv"));
    let global = ph.iter().find(|r| r["term"] == "GLOBAL").unwrap();
    let p: f64 = global["p"].parse().unwrap();
    assert!(p < 0.01, "{p}");
}

#[test]
fn rerunning_a_manifest_reproduces_the_fit() {
    let tmp = sim_dir(SIM_CONFIG);
    for cmd in ["simulate", "prepare", "fit"] {
        ok(&[cmd, "--config", "config.toml"], tmp.path());
    }
    let before = files_under(&tmp.path().join("out/fit"));
    fs::copy(tmp.path().join("out/fit/manifest.json"), tmp.path().join("fit_manifest.json")).unwrap();
    fs::remove_dir_all(tmp.path().join("out/fit")).unwrap();
    ok(&["rerun", "fit_manifest.json"], tmp.path());
    assert!(!before.is_empty());
    assert_eq!(before, files_under(&tmp.path().join("out/fit")));
}

#[test]
fn both_dyadic_forms_give_two_fits_and_a_comparison() {
    let config = SIM_CONFIG.replace("max_events = 500", "max_events = 150").replace(
        "[simulate.model]",
        "[fit]\ndyadic_forms = [\"ordered\", \"symmetric\"]\n\n[simulate.model]",
    );
    let tmp = sim_dir(&config);
    for cmd in ["simulate", "prepare", "fit"] {
        ok(&[cmd, "--config", "config.toml"], tmp.path());
    }
    for dir in ["fit_ordered", "fit_symmetric"] {
        let vc = read_csv(&tmp.path().join("out").join(dir).join("variance_components.csv"));
        assert_eq!(vc.len(), 1, "{dir}");
        assert!(vc[0]["family"].starts_with("dyadic"));
    }
    let cmp = read_csv(&tmp.path().join("out/fit_comparison.csv"));
    assert_eq!(cmp.len(), 2);
    assert_eq!(cmp[0]["model"], "fit_ordered");
    assert_eq!(cmp[1]["model"], "fit_symmetric");
}
