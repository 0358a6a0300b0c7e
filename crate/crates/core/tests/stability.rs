mod common;

use acle_core::stability::{compute_cct, parse_grid, sweep_cct, CctSettings, CctStatus, SimulationProbe, StabilityProbe, SWEEP_CSV_HEADER};
use acle_core::tds::DynamicModel;
use common::*;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    /// Against any monotone oracle the search lands on the last stable
    /// multiple of the resolution, and the bracket is one step wide.
    #[test]
    fn bisection_exact_on_threshold_oracles(units in 1u64..1999) {
        let settings = CctSettings::default();
        let threshold = units as f64 * 1e-3;
        let oracle = |d: f64| d < threshold - 1e-9;
        let r = compute_cct(&oracle, &settings).unwrap();
        prop_assert_eq!(r.status, CctStatus::Found);
        let cct = r.cct.unwrap();
        prop_assert!((cct - (threshold - 1e-3)).abs() < 1e-12);
        prop_assert!((r.bracket_hi.unwrap() - cct - 1e-3).abs() < 1e-12);
        prop_assert!(oracle(r.bracket_lo) && !oracle(r.bracket_hi.unwrap()));
    }
}

#[test]
fn stable_beyond_cap() {
    let r = compute_cct(&|_: f64| true, &CctSettings::default()).unwrap();
    assert_eq!(r.status, CctStatus::AboveCap);
    assert_eq!(r.cct, None);
    assert_eq!(r.bracket_hi, None);
}

#[test]
fn bracket_reproduced_by_fresh_runs() {
    let model = DynamicModel::build(&kundur_case(2.0, 0.75)).unwrap();
    let params = kundur().sim_params();
    let r = cct(&model, &params);
    let probe = SimulationProbe::new(&model, &params, &default_fault());
    assert!(probe.probe(r.bracket_lo).unwrap().stable);
    assert!(!probe.probe(r.bracket_hi.unwrap()).unwrap().stable);
    assert!((r.bracket_hi.unwrap() - r.bracket_lo - 1e-3).abs() < 1e-12);
}

#[test]
fn single_cell_sweep_equals_direct_search() {
    let case = kundur_case(1.0, 0.75);
    let params = kundur().sim_params();
    let settings = kundur().cct_settings();
    let sweep = sweep_cct(&case, &params, &default_fault(), &settings, &[1.0], &[0.75]).unwrap();
    let model = DynamicModel::build(&case).unwrap();
    let direct = cct(&model, &params);
    assert_eq!(sweep.cell(1.0, 0.75).unwrap().result.as_ref().unwrap(), &direct);

    let cp = DynamicModel::build(&case.with_constant_power(model.acle.unwrap().p_ini)).unwrap();
    assert_eq!(sweep.baseline(1.0).unwrap().result.as_ref().unwrap(), &cct(&cp, &params));

    let csv = sweep.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(SWEEP_CSV_HEADER));
    assert_eq!(lines.count(), 1);
}

#[test]
fn figure_grid_has_forty_one_points() {
    let g = parse_grid("0:0.05:2").unwrap();
    assert_eq!(g.len(), 41);
    assert_eq!(g[0], 0.0);
    assert_eq!(g[40], 2.0);
    assert_eq!(g[15], 0.75);
    assert!(parse_grid("0:0:1").is_err());
    assert!(parse_grid("1:0.1").is_err());
}
