mod common;

use acle_core::machine::{idx, MACHINE_STATES};
use acle_core::network::TopologyEvent;
use acle_core::tds::{
    fault_events, omega_base, run_simulation, step_convergence_check, DynamicModel, EventKind, Integrator,
    ScheduledEvent, SimParams, StepConvergence, Termination,
};
use common::*;

fn smib() -> (DynamicModel, SimParams, Vec<ScheduledEvent>) {
    let sc = smib_scenario();
    let model = DynamicModel::build(&sc.study_case().unwrap()).unwrap();
    (model, sc.sim_params(), sc.events().unwrap())
}

fn smib_angle(model: &DynamicModel, params: &SimParams, events: &[ScheduledEvent]) -> Vec<f64> {
    let p = SimParams {
        channels: Some(vec!["delta_G".into(), "delta_INF".into()]),
        ..params.clone()
    };
    let tr = run_simulation(model, &p, events).unwrap();
    assert_eq!(tr.termination, Termination::Completed);
    let (g, inf) = (tr.channel("delta_G").unwrap(), tr.channel("delta_INF").unwrap());
    g.iter().zip(inf).map(|(a, b)| a - b).collect()
}

#[test]
fn classical_machine_matches_two_state_integrator() {
    let (model, params, events) = smib();
    let x = &model.x0;
    // reference integrated ten times finer and sampled on the simulation grid
    let fine = smib_reference(
        x[idx::EQ_P],
        x[MACHINE_STATES + idx::EQ_P],
        x[idx::DELTA] - x[MACHINE_STATES + idx::DELTA],
        x[idx::PM],
        omega_base(50.0),
        params.dt / 10.0,
        0.5,
        params.t_end,
    );
    let sim = smib_angle(&model, &params, &events);
    assert_eq!(sim.len(), fine.len() / 10 + 1);
    let err = sim.iter().enumerate().map(|(i, a)| (a - fine[10 * i]).abs()).fold(0.0, f64::max);
    assert!(err < 1e-6, "{err}");
    // the disturbance is not trivial
    let swing = sim.iter().fold(0.0f64, |m, a| m.max((a - sim[0]).abs()));
    assert!(swing > 0.1);
}

/// Halving the step shrinks the RK4 error about sixteen times; Heun four times.
/// Steps are coarse so the differences stay well above round-off.
#[test]
fn integrator_orders() {
    let (model, params, events) = smib();
    for (integrator, lo, hi) in [(Integrator::Rk4Partitioned, 12.0, 20.0), (Integrator::TrapezoidalPartitioned, 3.0, 5.0)] {
        let run = |dt: f64, every: usize| {
            let p = SimParams {
                dt,
                integrator,
                t_end: 2.0,
                trace_every: every,
                ..params.clone()
            };
            smib_angle(&model, &p, &events)
        };
        let (a, b, c) = (run(0.05, 1), run(0.025, 2), run(0.0125, 4));
        let max_diff = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        let ratio = max_diff(&a, &b) / max_diff(&b, &c);
        assert!(ratio > lo && ratio < hi, "{integrator:?}: {ratio}");
    }
}

#[test]
fn fault_trajectory_converges_in_step() {
    let model = DynamicModel::build(&kundur_case(1.0, 0.75)).unwrap();
    let events = fault_events(&default_fault());
    match step_convergence_check(&model, &kundur().sim_params(), &events).unwrap() {
        StepConvergence::Deviation(d) => assert!(d.to_degrees() < 0.1, "{}", d.to_degrees()),
        other => panic!("{other:?}"),
    }
}

#[test]
fn unstable_case_is_incomparable() {
    let model = DynamicModel::build(&kundur_case(1.0, 0.75)).unwrap();
    let mut fault = default_fault();
    fault.t_clear = fault.t_on + 0.6;
    let r = step_convergence_check(&model, &kundur().sim_params(), &fault_events(&fault)).unwrap();
    assert!(matches!(r, StepConvergence::Incomparable { .. }), "{r:?}");
}

/// A frozen filter leaves the link at its initial setpoint.
#[test]
fn frozen_filter_follows_constant_power() {
    let model = DynamicModel::build(&kundur_case(1.0, 1e6)).unwrap();
    let cp = DynamicModel::build(&model.case.with_constant_power(model.acle.unwrap().p_ini)).unwrap();
    let params = SimParams {
        channels: Some(vec!["delta_G1".into(), "delta_G3".into()]),
        ..kundur().sim_params()
    };
    let events = fault_events(&default_fault());
    let a = run_simulation(&model, &params, &events).unwrap();
    let b = run_simulation(&cp, &params, &events).unwrap();
    let diff = |t: &acle_core::tds::SimulationTrace| -> Vec<f64> {
        t.channel("delta_G1").unwrap().iter().zip(t.channel("delta_G3").unwrap()).map(|(x, y)| x - y).collect()
    };
    let dev = diff(&a).iter().zip(diff(&b)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(dev.to_degrees() < 0.01, "{}", dev.to_degrees());
}

/// Recording channels must not perturb the simulation.
#[test]
fn channel_selection_does_not_change_results() {
    let model = DynamicModel::build(&kundur_case(2.0, 0.75)).unwrap();
    let events = fault_events(&default_fault());
    let all = run_simulation(&model, &kundur().sim_params(), &events).unwrap();
    let none = run_simulation(&model, &quiet_params(10.0), &events).unwrap();
    assert_eq!(all.final_state, none.final_state);
    assert_eq!(all.termination, none.termination);
    assert!(none.time.is_empty());
    assert!(all.names.iter().all(|n| all.channel(n).unwrap().len() == all.time.len()));
}

#[test]
fn machines_start_at_dispatch() {
    let model = DynamicModel::build(&kundur_case(1.0, 0.75)).unwrap();
    let params = SimParams {
        t_end: 0.002,
        channels: Some(vec!["pe_*".into()]),
        ..SimParams::default()
    };
    let tr = run_simulation(&model, &params, &[]).unwrap();
    for (name, p) in [("G1", 700.0), ("G2", 700.0), ("G4", 700.0)] {
        let pe = tr.channel(&format!("pe_{name}")).unwrap()[0];
        // electrical output at the terminal plus armature loss equals the mechanical input
        let k = model.machines.iter().position(|m| m.params.name == name).unwrap();
        let pm = model.x0[k * MACHINE_STATES + idx::PM] * model.machines[k].params.mva;
        assert!((pe - pm).abs() < 1e-6, "{name}");
        let out = model.powerflow.generator(model.machines[k].params.bus).unwrap().p_mw;
        assert!((out - p).abs() < 1e-6, "{name}: {out}");
    }
}

#[test]
fn long_trip_run_keeps_converter_balance() {
    let model = DynamicModel::build(&kundur_case(1.0, 0.75)).unwrap();
    let trip = ScheduledEvent {
        t: 1.0,
        kind: EventKind::Topology(TopologyEvent::Trip { circuit_id: "7-8a".into() }),
    };
    let tr = run_simulation(&model, &quiet_params(20.0), &[trip]).unwrap();
    assert_eq!(tr.termination, Termination::Completed);
    assert!(tr.max_balance_residual < 1e-8);
}
