#![allow(dead_code)]

use rem_core::model::{CovariateDecl, CovariateKind, ModelSpec};
use rem_core::simulator::{simulate, Baseline, FrailtySigmas, GenerativeSpec, SimulationOutput, SyntheticWorld, WorldConfig};
use rem_core::Window;

pub fn small_world(n_species: usize, n_regions: usize, seed: u64) -> SyntheticWorld {
    let cfg = WorldConfig { n_species, n_regions, first_year: 1900, last_year: 1930, ..Default::default() };
    SyntheticWorld::generate(&cfg, seed).unwrap()
}

pub fn distance_temp_spec(beta: [f64; 2], rate: f64, window: Window) -> GenerativeSpec {
    GenerativeSpec {
        model: ModelSpec::with_covariates(vec![
            CovariateDecl::constant(CovariateKind::Distance),
            CovariateDecl::constant(CovariateKind::TempDiff),
        ]),
        beta_true: beta.to_vec(),
        baseline: Baseline::constant(rate).unwrap(),
        sigmas: FrailtySigmas::default(),
        window,
        max_events: None,
        top_members: None,
    }
}

pub fn simulated(world: &SyntheticWorld, seed: u64) -> SimulationOutput {
    let spec = distance_temp_spec([-0.5, 0.1], 0.05, Window::new(1900.0, 1930.0).unwrap());
    simulate(&spec, &world.world, seed).unwrap()
}

/// Kolmogorov–Smirnov distance of `sample` from the unit exponential and its asymptotic p-value.
pub fn ks_unit_exponential(sample: &[f64]) -> (f64, f64) {
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in xs.iter().enumerate() {
        let f = 1.0 - (-x).exp();
        d = d.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs());
    }
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let mut q = 0.0;
    for k in 1..=100 {
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        q += 2.0 * sign * (-2.0 * (k * k) as f64 * lambda * lambda).exp();
    }
    (d, q.clamp(0.0, 1.0))
}
