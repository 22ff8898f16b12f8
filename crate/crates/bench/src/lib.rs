//! Synthetic fixtures shared by the benchmarks.

use rem_core::model::{CovariateDecl, CovariateKind, ModelSpec, RandomEffects};
use rem_core::simulator::{simulate, Baseline, FrailtySigmas, GenerativeSpec, SyntheticWorld, WorldConfig};
use rem_core::{build_dataset, Dataset, Window};

/// A simulated event stream on an `n_species × n_regions` world.
pub struct Fixture {
    pub world: SyntheticWorld,
    pub spec: GenerativeSpec,
    pub dataset: Dataset,
}

/// Distance and temperature-difference effects, with a region frailty when `region` is set.
pub fn fixture(n_species: usize, n_regions: usize, max_events: usize, region: bool, seed: u64) -> Fixture {
    let world = SyntheticWorld::generate(&WorldConfig { n_species, n_regions, ..Default::default() }, seed)
        .expect("valid world");
    let mut model = ModelSpec::with_covariates(vec![
        CovariateDecl::constant(CovariateKind::Distance),
        CovariateDecl::constant(CovariateKind::TempDiff),
    ]);
    let mut sigmas = FrailtySigmas::default();
    if region {
        model.random_effects = RandomEffects { region: true, ..RandomEffects::none() };
        sigmas.region = Some(1.0);
    }
    let spec = GenerativeSpec {
        model,
        beta_true: vec![-1.0, 0.5],
        baseline: Baseline::constant(0.05).expect("valid baseline"),
        sigmas,
        window: Window::new(1880.0, 2005.0).expect("valid window"),
        max_events: Some(max_events),
        top_members: None,
    };
    let out = simulate(&spec, &world.world, seed).expect("simulation runs");
    let dataset = build_dataset(&out.data, &world.world.panels, &spec.model).expect("dataset builds");
    Fixture { world, spec, dataset }
}
