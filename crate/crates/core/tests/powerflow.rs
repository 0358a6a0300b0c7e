mod common;

use acle_core::acle::AcleMode;
use acle_core::powerflow::{acle_operating_point, solve_dc_network, ConverterLossModel, DcOptions, PowerFlowOptions};
use acle_core::vsc::{DcBus, DcGrid, DcLine};
use common::*;
use proptest::prelude::*;

#[test]
fn zero_gain_keeps_constant_term() {
    let case = kundur_with(&["acle.k=0", "acle.p_cons_mw=-450"]).study_case().unwrap();
    let sol = case.solve_operating_point().unwrap();
    assert_eq!(sol.converter("VSC1").unwrap().p_s, -0.45);
}

#[test]
fn stiff_gain_closes_the_angle_gap() {
    let case = kundur_case(1e3, 0.75);
    let b = case.acle.clone().unwrap();
    let op = acle_operating_point(&case.powerflow, b.controlled, b.remote, 1e3, 0.0, &PowerFlowOptions::default()).unwrap();
    assert!(op.angle_difference.abs() < 1e-2, "{}", op.angle_difference);
    assert!((op.p_ini + 1e3 * op.angle_difference).abs() < 1e-8);
}

#[test]
fn operating_point_satisfies_the_emulation_law() {
    for k in [0.5, 1.0, 2.0, 4.0, 8.0] {
        let case = kundur_case(k, 0.75);
        let sol = case.solve_operating_point().unwrap();
        let c1 = sol.converter("VSC1").unwrap();
        let c2 = sol.converter("VSC2").unwrap();
        assert!((c1.p_s + k * (c1.delta_s - c2.delta_s)).abs() < 1e-8, "K={k}");
        for c in &sol.converters {
            assert!(c.balance_residual().abs() < 1e-10, "K={k} {}", c.name);
        }
        assert!(sol.ac_mismatch < 1e-8);
    }
}

#[test]
fn transfer_grows_with_gain() {
    let p: Vec<f64> = [0.5, 1.0, 2.0, 4.0, 8.0]
        .iter()
        .map(|&k| p_hvdc_mw(&kundur_case(k, 0.75).solve_operating_point().unwrap()))
        .collect();
    assert!(p.windows(2).all(|w| w[1] > w[0]), "{p:?}");
}

/// Generation equals load plus AC losses minus the net converter injection.
#[test]
fn active_power_balance() {
    let sol = kundur_case(2.0, 0.75).solve_operating_point().unwrap();
    let gen: f64 = sol.generators.iter().map(|g| g.p_mw).sum();
    let load: f64 = sol.s_load.iter().map(|s| s.re).sum();
    let ac_loss: f64 = sol.branch_flows.iter().map(|f| f.p_from_mw + f.p_to_mw).sum();
    let conv: f64 = sol.converters.iter().map(|c| c.p_s * CONVERTER_MVA).sum();
    assert!((gen + conv - load - ac_loss).abs() < 1e-6, "{}", gen + conv - load - ac_loss);
    // the link consumes power: its AC injections sum to minus its losses
    assert!(conv < 0.0);
}

/// An idle lossless link leaves the AC solution untouched.
#[test]
fn idle_lossless_link_is_invisible() {
    let lighter = ["machines.G1.p_mw=450", "machines.G2.p_mw=450"];
    let mut with = kundur_with(&lighter);
    let a = with.acle.as_mut().unwrap();
    a.mode = AcleMode::ConstantP;
    a.p_cons_mw = 0.0;
    for c in &mut with.hvdc.as_mut().unwrap().converters {
        c.losses = ConverterLossModel::LOSSLESS;
    }
    let mut without = with.clone();
    without.hvdc = None;
    without.acle = None;
    let s1 = with.study_case().unwrap().solve_operating_point().unwrap();
    let s2 = without.study_case().unwrap().solve_operating_point().unwrap();
    for (v1, v2) in s1.v.iter().zip(&s2.v) {
        assert!((v1 - v2).norm() < 1e-8);
    }
}

fn two_bus_grid(length_km: f64) -> DcGrid {
    DcGrid {
        v_base_kv: 640.0,
        p_base_mw: 1000.0,
        buses: vec![DcBus { id: 1, c_vsc_uf: 193.57 }, DcBus { id: 2, c_vsc_uf: 193.57 }],
        lines: vec![DcLine {
            from: 1,
            to: 2,
            length_km,
            r_ohm_per_km: 0.0137,
            l_mh_per_km: 0.9339,
            c_uf_per_km: 0.0119,
        }],
    }
}

proptest! {
    /// `p = u2 (u2 - u1) g` solved in closed form.
    #[test]
    fn dc_two_bus_quadratic(p in -1.0f64..1.0, u1 in 0.9f64..1.1, length in 10.0f64..1000.0) {
        let grid = two_bus_grid(length);
        let g = 1.0 / grid.line_r_pu(0);
        let sol = solve_dc_network(&grid, 0, u1, &[0.0, p], &DcOptions::default()).unwrap();
        let u2 = (u1 + (u1 * u1 + 4.0 * p / g).sqrt()) / 2.0;
        prop_assert!((sol.u[1] - u2).abs() < 1e-10);
        prop_assert!((sol.i_line[0] - (u1 - u2) * g).abs() < 1e-9);
        // the slack absorbs the injection and the line loss
        let loss = (u1 - u2).powi(2) * g;
        prop_assert!((sol.p_inj[0] + p - loss).abs() < 1e-9);
    }
}
