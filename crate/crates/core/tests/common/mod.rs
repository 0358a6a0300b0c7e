#![allow(dead_code)]

use acle_core::network::FaultSpec;
use acle_core::powerflow::PowerFlowSolution;
use acle_core::scenario::{Scenario, BUNDLED_KUNDUR};
use acle_core::stability::{compute_cct, CctResult, SimulationProbe};
use acle_core::tds::{DynamicModel, SimParams, StudyCase};

pub const CONVERTER_MVA: f64 = 1000.0;

pub fn kundur() -> Scenario {
    Scenario::load(BUNDLED_KUNDUR).expect("bundled scenario")
}

pub fn kundur_with(overrides: &[&str]) -> Scenario {
    let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    kundur().with_overrides(&o).expect("overrides")
}

/// Study case at gain `k` and filter constant `t`.
pub fn kundur_case(k: f64, t: f64) -> StudyCase {
    kundur_with(&[&format!("acle.k_pu_per_rad={k}"), &format!("acle.t_filter_s={t}")])
        .study_case()
        .unwrap()
}

/// HVDC transfer from area 1 to area 2 (MW).
pub fn p_hvdc_mw(sol: &PowerFlowSolution) -> f64 {
    -sol.converter("VSC1").unwrap().p_s * CONVERTER_MVA
}

pub fn flow_mw(sol: &PowerFlowSolution, circuit: &str) -> f64 {
    sol.branch_flow(circuit).unwrap().p_from_mw
}

pub fn default_fault() -> FaultSpec {
    kundur().fault().unwrap()
}

pub fn quiet_params(t_end: f64) -> SimParams {
    SimParams {
        t_end,
        channels: Some(vec![]),
        ..SimParams::default()
    }
}

pub fn cct(model: &DynamicModel, params: &SimParams) -> CctResult {
    let probe = SimulationProbe::new(model, params, &default_fault());
    compute_cct(&probe, &kundur().cct_settings()).expect("cct search")
}

pub fn cct_ms(model: &DynamicModel, params: &SimParams) -> f64 {
    cct(model, params).cct.expect("cct within the cap") * 1e3
}

/// Single machine against an infinite bus over two parallel reactive lines.
/// No losses, loads or controls, so the electrical power is
/// `e * e_inf * sin(delta) / x` exactly.
pub const SMIB_X_MACHINE: f64 = 0.3;
pub const SMIB_X_LINE: f64 = 0.4;
pub const SMIB_X_INF: f64 = 0.001;
pub const SMIB_H: f64 = 3.5;
pub const SMIB_D: f64 = 2.0;

pub fn smib_scenario() -> Scenario {
    let text = format!(
        r#"
[system]
name = "smib"
s_base_mva = 100.0
frequency_hz = 50.0

[[buses]]
id = 1
kind = "pv"
base_kv = 20.0
v_pu = 1.05

[[buses]]
id = 2
kind = "slack"
base_kv = 20.0
v_pu = 1.0

[[branches]]
id = "a"
from = 1
to = 2
r_pu = 0.0
x_pu = {x_line}

[[branches]]
id = "b"
from = 1
to = 2
r_pu = 0.0
x_pu = {x_line}

[[machines]]
name = "G"
bus = 1
model = "classical"
mva = 100.0
p_mw = 90.0
h_s = {h}
d_pu = {d}
xd_p = {x_m}
governor = false

[[machines]]
name = "INF"
bus = 2
model = "classical"
mva = 100.0
p_mw = 0.0
h_s = inf
xd_p = {x_inf}
governor = false

[[events]]
kind = "trip"
t_s = 0.5
circuit = "b"

[solver]
t_end_s = 5.0
"#,
        x_line = SMIB_X_LINE,
        h = SMIB_H,
        d = SMIB_D,
        x_m = SMIB_X_MACHINE,
        x_inf = SMIB_X_INF,
    );
    Scenario::parse(&text).unwrap()
}

/// Classical reference: rotor angle of the machine relative to the infinite
/// source, integrated with a plain fixed-step RK4.
pub fn smib_reference(e: f64, e_inf: f64, delta0: f64, pm: f64, omega_b: f64, dt: f64, t_trip: f64, t_end: f64) -> Vec<f64> {
    let x_pre = SMIB_X_MACHINE + SMIB_X_LINE / 2.0 + SMIB_X_INF;
    let x_post = SMIB_X_MACHINE + SMIB_X_LINE + SMIB_X_INF;
    let f = |x: f64, s: [f64; 2]| -> [f64; 2] {
        let pe = e * e_inf * s[0].sin() / x;
        [omega_b * s[1], (pm - pe - SMIB_D * s[1]) / (2.0 * SMIB_H)]
    };
    let n = (t_end / dt).round() as usize;
    let n_trip = (t_trip / dt).round() as usize;
    let mut s = [delta0, 0.0];
    let mut out = Vec::with_capacity(n + 1);
    out.push(s[0]);
    for step in 0..n {
        let x = if step >= n_trip { x_post } else { x_pre };
        let k1 = f(x, s);
        let k2 = f(x, [s[0] + 0.5 * dt * k1[0], s[1] + 0.5 * dt * k1[1]]);
        let k3 = f(x, [s[0] + 0.5 * dt * k2[0], s[1] + 0.5 * dt * k2[1]]);
        let k4 = f(x, [s[0] + dt * k3[0], s[1] + dt * k3[1]]);
        for i in 0..2 {
            s[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        out.push(s[0]);
    }
    out
}
