mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rem_core::covariates::{min_distance, prior_invasions_weighted, trade_sum_log, CovariateEngine, DyadPanel, TopInvaders, YearSpan};
use rem_core::event::{Event, RegionHistory, RegionId, SpeciesId};
use rem_core::model::{CovariateDecl, CovariateKind, Period, SourceRegions};
use rem_core::{CovariatePanels, ModelSpec, NodeSet, OccupancyState};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn min_distance_never_increases(seed in 0u64..10_000) {
        let world = common::small_world(5, 8, seed);
        let out = common::simulated(&world, seed);
        let panels = &world.world.panels;
        for s in 0..5u32 {
            for c in 0..8u32 {
                let mut last = f64::INFINITY;
                for k in 0..=62 {
                    let t = 1899.5 + 0.5 * k as f64;
                    let d = min_distance(SpeciesId(s), RegionId(c), t, &out.data.occupancy, panels).unwrap();
                    prop_assert!(d <= last);
                    last = d;
                }
            }
        }
    }

    #[test]
    fn prior_invasions_recursion(times in proptest::collection::vec(0.0f64..30.0, 0..40), t in 0.0f64..29.0, decay in 0.5f64..1.0) {
        let mut sorted = times.clone();
        sorted.sort_by(f64::total_cmp);
        let mut history = RegionHistory::new(1);
        for (i, &ts) in sorted.iter().enumerate() {
            history.push(&Event { sender: SpeciesId(i as u32), receiver: RegionId(0), time: ts });
        }
        let c = RegionId(0);
        let now = prior_invasions_weighted(c, t, &history, decay).unwrap();
        let next = prior_invasions_weighted(c, t + 1.0, &history, decay).unwrap();
        let arrivals: f64 = sorted.iter().filter(|&&ts| ts >= t && ts < t + 1.0).map(|&ts| decay.powf(t + 1.0 - ts)).sum();
        prop_assert!((next - (decay * now + arrivals)).abs() < 1e-9 * (1.0 + next.abs()));
        let brute: f64 = sorted.iter().filter(|&&ts| ts < t).map(|&ts| decay.powf(t - ts)).sum();
        prop_assert!((now - brute).abs() < 1e-9 * (1.0 + brute));
    }

    #[test]
    fn period_columns_sum_to_raw_value(seed in 0u64..10_000, t in 1900.0f64..1930.0) {
        let world = common::small_world(4, 6, seed);
        let out = common::simulated(&world, seed);
        let kinds = [CovariateKind::Distance, CovariateKind::TempDiff, CovariateKind::Agri, CovariateKind::PriorInvasions];
        let periods = vec![Period::years(1900, 1909), Period::years(1910, 1919), Period::years(1920, 1930)];
        let piecewise = ModelSpec { periods: periods.clone(), ..ModelSpec::with_covariates(kinds.iter().map(|&k| CovariateDecl::piecewise(k)).collect()) };
        let constant = ModelSpec { periods, ..ModelSpec::with_covariates(kinds.iter().map(|&k| CovariateDecl::constant(k)).collect()) };
        let top = TopInvaders::empty(4);
        let d = &out.data;
        let e_pw = CovariateEngine::new(&piecewise, &world.world.panels, &d.occupancy, &d.history, &top).unwrap();
        let e_c = CovariateEngine::new(&constant, &world.world.panels, &d.occupancy, &d.history, &top).unwrap();
        let mut xp = vec![0.0; piecewise.n_columns()];
        let mut xc = vec![0.0; constant.n_columns()];
        for s in 0..4u32 {
            for c in 0..6u32 {
                e_pw.fill_row(SpeciesId(s), RegionId(c), t, &mut xp).unwrap();
                e_c.fill_row(SpeciesId(s), RegionId(c), t, &mut xc).unwrap();
                for k in 0..kinds.len() {
                    let sum: f64 = xp[3 * k..3 * k + 3].iter().sum();
                    prop_assert_eq!(sum, xc[k]);
                }
            }
        }
    }

    #[test]
    fn trade_term_is_nonnegative_and_zero_without_flow(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 5;
        let span = YearSpan::new(2000, 2000).unwrap();
        let mut trade = DyadPanel::new(span, n, 0.0);
        for a in 0..n as u32 {
            for b in 0..n as u32 {
                if a != b && rng.random_bool(0.4) {
                    trade.set(RegionId(a), RegionId(b), 2000, rng.random::<f64>() * 1e6);
                }
            }
        }
        let mut panels = CovariatePanels::new(NodeSet::new((0..n).map(|i| format!("R{i}"))).unwrap());
        panels.set_trade(trade.clone()).unwrap();
        let mut occ = OccupancyState::new(1, n);
        for c in 0..n as u32 {
            if rng.random_bool(0.5) {
                occ.set_native(SpeciesId(0), RegionId(c));
            }
        }
        for c in 0..n as u32 {
            let v = trade_sum_log(SpeciesId(0), RegionId(c), 2000.5, &occ, &panels, SourceRegions::AllOccupied).unwrap();
            let flow: f64 = occ.occupied_before(SpeciesId(0), 2000.5)
                .filter(|r| r.0 != c)
                .map(|r| trade.get(RegionId(c), r, 2000).unwrap() + trade.get(r, RegionId(c), 2000).unwrap())
                .sum();
            prop_assert!(v >= 0.0);
            prop_assert_eq!(v == 0.0, flow == 0.0);
        }
    }
}
