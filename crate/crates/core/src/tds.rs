//! Time-domain simulation: device states are integrated with an explicit
//! partitioned scheme and the network is solved algebraically at every stage.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::acle::{init_acle, AcleMode, AcleSettings, AcleState};
use crate::error::{Error, Result};
use crate::machine::{self, idx, init_machine, Machine, MachineControls, MachineParams, MACHINE_STATES};
use crate::network::{
    AlgebraicNetwork, FaultSpec, FrozenLoad, NetworkModel, NetworkSolveOptions, NonlinearInjection, TopologyEvent,
};
use crate::powerflow::{
    acle_operating_point, sequential_acdc_powerflow, LoadModel, PowerFlowCase, PowerFlowOptions, PowerFlowSolution,
    SlackModel,
};
use crate::vsc::{
    converter_power, dc_coupling, dc_grid_derivatives, modulation_feasible, outer_control, vsc_dynamics, DAxisControl,
    DcGridState, LimitFlags, VscMeasurements, VscState, MIN_FEEDFORWARD_VOLTAGE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    Rk4Partitioned,
    /// Explicit trapezoidal rule (Heun).
    TrapezoidalPartitioned,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimParams {
    pub dt: f64,
    pub t_end: f64,
    pub integrator: Integrator,
    pub network: NetworkSolveOptions,
    /// Record every n-th step.
    pub trace_every: usize,
    /// Channel selection: `None` records everything; entries match names
    /// exactly or by prefix when ending in `*`.
    pub channels: Option<Vec<String>>,
    /// Loss-of-synchronism threshold on the pairwise rotor angle spread (rad).
    pub los_threshold: f64,
    /// Stop at the first loss of synchronism.
    pub stop_on_los: bool,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            dt: 1e-3,
            t_end: 10.0,
            integrator: Integrator::Rk4Partitioned,
            network: NetworkSolveOptions::default(),
            trace_every: 1,
            channels: None,
            los_threshold: PI,
            stop_on_los: true,
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::data("time step must be positive"));
        }
        if !(self.t_end > self.dt) {
            return Err(Error::data("end time must exceed the time step"));
        }
        if self.trace_every == 0 {
            return Err(Error::data("trace decimation must be at least 1"));
        }
        if !(self.los_threshold > 0.0) {
            return Err(Error::data("loss-of-synchronism threshold must be positive"));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    Topology(TopologyEvent),
    /// New active-power setpoint (pu converter base, injection sign). For the
    /// emulating converter this replaces the constant term of its setpoint.
    PSetpoint { converter: usize, p: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduledEvent {
    pub t: f64,
    pub kind: EventKind,
}

/// Fault-on and fault-clear events of a fault.
pub fn fault_events(fault: &FaultSpec) -> [ScheduledEvent; 2] {
    [
        ScheduledEvent {
            t: fault.t_on,
            kind: EventKind::Topology(TopologyEvent::FaultOn {
                circuit_id: fault.circuit_id.clone(),
                conductance: fault.conductance,
            }),
        },
        ScheduledEvent {
            t: fault.t_clear,
            kind: EventKind::Topology(TopologyEvent::FaultClear {
                circuit_id: fault.circuit_id.clone(),
            }),
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum Termination {
    Completed,
    LossOfSynchronism { t: f64 },
    DcCollapse { t: f64 },
    SolverFailure { t: f64, message: String },
}

impl Termination {
    pub fn label(&self) -> &'static str {
        match self {
            Termination::Completed => "completed",
            Termination::LossOfSynchronism { .. } => "loss_of_synchronism",
            Termination::DcCollapse { .. } => "dc_collapse",
            Termination::SolverFailure { .. } => "solver_failure",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    pub time: Vec<f64>,
    pub names: Vec<String>,
    /// One series per name.
    pub data: Vec<Vec<f64>>,
    pub termination: Termination,
    /// Largest converter power-balance residual over all accepted steps.
    pub max_balance_residual: f64,
    /// Largest nodal current mismatch after the end-of-step network solutions.
    pub max_network_residual: f64,
    /// Largest pairwise rotor angle spread reached (rad).
    pub max_angle_spread: f64,
    /// Largest deviation of any state from its initial value.
    pub max_state_deviation: f64,
    /// First time the angle spread exceeded the threshold, if ever.
    pub los_time: Option<f64>,
    pub steps: usize,
    /// Final state vector.
    pub final_state: Vec<f64>,
}

impl SimulationTrace {
    pub fn channel(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|k| self.data[k].as_slice())
    }

    pub fn last(&self, name: &str) -> Option<f64> {
        self.channel(name).and_then(|c| c.last().copied())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for n in &self.names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (r, t) in self.time.iter().enumerate() {
            let _ = write!(out, "{t:.6}");
            for d in &self.data {
                let _ = write!(out, ",{:.9e}", d[r]);
            }
            out.push('\n');
        }
        out
    }
}

/// Binding of the emulation controller to a converter pair.
#[derive(Debug, Clone, PartialEq)]
pub struct AcleBinding {
    pub settings: AcleSettings,
    pub controlled: usize,
    pub remote: usize,
}

/// Data needed to build a dynamic model.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyCase {
    pub name: String,
    pub frequency_hz: f64,
    pub powerflow: PowerFlowCase,
    pub machines: Vec<(MachineParams, MachineControls)>,
    pub acle: Option<AcleBinding>,
    pub pf_options: PowerFlowOptions,
}

impl StudyCase {
    /// Solves the initial operating point (with the emulation fixed point when
    /// the controller is active).
    pub fn solve_operating_point(&self) -> Result<PowerFlowSolution> {
        let mut case = self.powerflow.clone();
        match &self.acle {
            Some(b) => {
                let link = case.hvdc.as_mut().ok_or_else(|| Error::data("controller needs an HVDC link"))?;
                link.converters[b.controlled].p_ref = b.settings.p_cons;
                let k = b.settings.effective_gain();
                Ok(acle_operating_point(&case, b.controlled, b.remote, k, b.settings.p_cons, &self.pf_options)?.solution)
            }
            None => sequential_acdc_powerflow(&case, &self.pf_options),
        }
    }

    /// Same case with the controller in constant-power mode at `p` (pu).
    pub fn with_constant_power(&self, p: f64) -> StudyCase {
        let mut c = self.clone();
        if let Some(b) = c.acle.as_mut() {
            b.settings.mode = AcleMode::ConstantP;
            b.settings.p_cons = p;
        }
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Layout {
    vsc: usize,
    dc_u: usize,
    dc_i: usize,
    len: usize,
}

/// Initialized dynamic model.
#[derive(Debug, Clone)]
pub struct DynamicModel {
    pub case: StudyCase,
    pub network: NetworkModel,
    pub machines: Vec<Machine>,
    machine_bus: Vec<usize>,
    pub loads: Vec<FrozenLoad>,
    conv_bus: Vec<usize>,
    conv_dc_bus: Vec<usize>,
    pub acle: Option<AcleState>,
    pub p_ref0: Vec<f64>,
    pub x0: Vec<f64>,
    pub v0: Vec<Complex64>,
    pub powerflow: PowerFlowSolution,
    /// Largest state derivative at the initial point.
    pub init_residual: f64,
    layout: Layout,
}

impl DynamicModel {
    pub fn build(case: &StudyCase) -> Result<DynamicModel> {
        let pf = case.solve_operating_point()?;
        Self::from_powerflow(case, pf)
    }

    pub fn from_powerflow(case: &StudyCase, pf: PowerFlowSolution) -> Result<DynamicModel> {
        let net = case.powerflow.network.clone();
        let s_base = net.s_base_mva;
        let n_m = case.machines.len();
        let hvdc = case.powerflow.hvdc.as_ref();
        let n_c = hvdc.map_or(0, |h| h.converters.len());
        let n_db = hvdc.map_or(0, |h| h.grid.buses.len());
        let n_dl = hvdc.map_or(0, |h| h.grid.lines.len());
        let layout = Layout {
            vsc: n_m * MACHINE_STATES,
            dc_u: n_m * MACHINE_STATES + n_c * VscState::LEN,
            dc_i: n_m * MACHINE_STATES + n_c * VscState::LEN + n_db,
            len: n_m * MACHINE_STATES + n_c * VscState::LEN + n_db + n_dl,
        };
        let mut x0 = vec![0.0; layout.len];

        let mut machines = Vec::with_capacity(n_m);
        let mut machine_bus = Vec::with_capacity(n_m);
        for (k, (p, c)) in case.machines.iter().enumerate() {
            let i = net.bus_index(p.bus)?;
            let g = pf.generator(p.bus)?;
            let s = Complex64::new(g.p_mw, g.q_mvar) / s_base;
            let (m, x) = init_machine(p, c, pf.v[i], s, s_base, case.frequency_hz)?;
            x0[k * MACHINE_STATES..(k + 1) * MACHINE_STATES].copy_from_slice(&x);
            machines.push(m);
            machine_bus.push(i);
        }
        if pf.generators.len() != n_m {
            return Err(Error::data("every generator needs a machine model"));
        }

        let loads = net
            .loads
            .iter()
            .map(|l| {
                let i = net.bus_index(l.bus)?;
                Ok(FrozenLoad::freeze(i, l.p_mw / s_base, l.q_mvar / s_base, pf.v[i]))
            })
            .collect::<Result<Vec<_>>>()?;

        let mut conv_bus = Vec::new();
        let mut conv_dc_bus = Vec::new();
        let mut p_ref0 = Vec::new();
        if let Some(link) = hvdc {
            let dc = pf.dc.as_ref().ok_or_else(|| Error::init("missing DC solution"))?;
            for (k, (c, op)) in link.converters.iter().zip(&pf.converters).enumerate() {
                conv_bus.push(net.bus_index(c.ac_bus)?);
                conv_dc_bus.push(link.grid.bus_index(c.dc_bus)?);
                let st = VscState {
                    i_d: op.i_d,
                    i_q: op.i_q,
                    xi_dc: -op.i_d,
                    xi_ac: -op.i_q,
                };
                st.to_slice(&mut x0[layout.vsc + k * VscState::LEN..]);
                p_ref0.push(op.p_s);
            }
            x0[layout.dc_u..layout.dc_u + n_db].copy_from_slice(&dc.u);
            x0[layout.dc_i..layout.dc_i + n_dl].copy_from_slice(&dc.i_line);
        }

        let acle = match &case.acle {
            Some(b) => {
                let v1 = pf.v[conv_bus[b.controlled]];
                let v2 = pf.v[conv_bus[b.remote]];
                Some(init_acle(&b.settings, v1, v2, pf.converters[b.controlled].p_s)?)
            }
            None => None,
        };

        let mut model = DynamicModel {
            case: case.clone(),
            v0: pf.v.clone(),
            network: net,
            machines,
            machine_bus,
            loads,
            conv_bus,
            conv_dc_bus,
            acle,
            p_ref0,
            x0,
            powerflow: pf,
            init_residual: 0.0,
            layout,
        };
        let mut sim = Simulator::new(&model, &SimParams::default())?;
        let x = model.x0.clone();
        let mut dx = vec![0.0; x.len()];
        sim.evaluate(&x, &mut dx).map_err(|e| Error::init(format!("{e:?}")))?;
        model.init_residual = dx.iter().fold(0.0, |a, d| a.max(d.abs()));
        if model.init_residual > 1e-6 {
            return Err(Error::init(format!(
                "initial state is not an equilibrium (largest derivative {:.3e})",
                model.init_residual
            )));
        }
        Ok(model)
    }

    /// Same model with another emulation filter time constant. The operating
    /// point does not depend on it.
    pub fn with_acle_filter(&self, t: f64) -> Result<DynamicModel> {
        let mut m = self.clone();
        match (m.case.acle.as_mut(), m.acle.as_mut()) {
            (Some(b), Some(st)) => {
                b.settings.t = t;
                b.settings.validate()?;
                st.settings.t = t;
                Ok(m)
            }
            _ => Err(Error::data("model has no emulation controller")),
        }
    }

    pub fn state_len(&self) -> usize {
        self.layout.len
    }

    pub fn machine_names(&self) -> Vec<String> {
        self.machines.iter().map(|m| m.params.name.clone()).collect()
    }

    /// Offset of machine `k`'s states in the state vector.
    pub fn machine_offset(&self, k: usize) -> usize {
        k * MACHINE_STATES
    }

    fn controlled_converter(&self) -> Option<usize> {
        if let Some(b) = &self.case.acle {
            return Some(b.controlled);
        }
        self.case
            .powerflow
            .hvdc
            .as_ref()
            .and_then(|h| h.converters.iter().position(|c| c.d_control == DAxisControl::ActivePower))
    }

    /// Converter rating ratio to the system base.
    fn conv_scale(&self, k: usize) -> f64 {
        self.case.powerflow.hvdc.as_ref().unwrap().converters[k].rating_mva / self.network.s_base_mva
    }
}

#[derive(Debug)]
enum StageError {
    DcCollapse,
    Solver(Error),
}

struct Stage {
    v: Vec<Complex64>,
    balance: f64,
}

/// Runtime of one simulation.
struct Simulator<'a> {
    model: &'a DynamicModel,
    network: NetworkModel,
    algebraic: AlgebraicNetwork,
    opts: NetworkSolveOptions,
    acle: Option<AcleState>,
    p_ref: Vec<f64>,
    u_s_hold: Vec<f64>,
    v_last: Vec<Complex64>,
    flags: Vec<LimitFlags>,
    sources: Vec<Complex64>,
    injections: Vec<NonlinearInjection>,
    /// Offset of the current stage within the step.
    stage_h: f64,
}

fn machine_shunts(model: &DynamicModel) -> Vec<(usize, Complex64)> {
    model
        .machines
        .iter()
        .zip(&model.machine_bus)
        .map(|(m, &b)| (b, m.base_ratio / m.params.source_impedance()))
        .collect()
}

impl<'a> Simulator<'a> {
    fn new(model: &'a DynamicModel, params: &SimParams) -> Result<Self> {
        let network = model.network.clone();
        let algebraic = AlgebraicNetwork::new(&network.build_ybus()?, &machine_shunts(model), &model.loads)?;
        let n_c = model.conv_bus.len();
        Ok(Simulator {
            model,
            network,
            algebraic,
            opts: params.network,
            acle: model.acle,
            p_ref: model.p_ref0.clone(),
            u_s_hold: model.conv_bus.iter().map(|&b| model.v0[b].norm()).collect(),
            v_last: model.v0.clone(),
            flags: vec![LimitFlags::default(); n_c],
            sources: vec![Complex64::default(); model.network.bus_count()],
            injections: Vec::with_capacity(n_c),
            stage_h: 0.0,
        })
    }

    fn apply_event(&mut self, ev: &EventKind) -> Result<()> {
        match ev {
            EventKind::Topology(t) => {
                self.network = self.network.apply_topology_event(t)?;
                self.algebraic =
                    AlgebraicNetwork::new(&self.network.build_ybus()?, &machine_shunts(self.model), &self.model.loads)?;
            }
            EventKind::PSetpoint { converter, p } => {
                if *converter >= self.p_ref.len() {
                    return Err(Error::event(format!("unknown converter index {converter}")));
                }
                match (&mut self.acle, &self.model.case.acle) {
                    (Some(st), Some(b)) if b.controlled == *converter => st.p_ini = *p,
                    _ => self.p_ref[*converter] = *p,
                }
            }
        }
        Ok(())
    }

    /// The emulation setpoint follows the stage voltages so the controller
    /// acts without a one-step delay.
    fn converter_setpoint(&self, k: usize, v: &[Complex64]) -> f64 {
        let m = self.model;
        match (&self.acle, &m.case.acle) {
            (Some(st), Some(b)) if b.controlled == k => st.preview(v[m.conv_bus[b.controlled]], v[m.conv_bus[b.remote]], self.stage_h),
            _ => self.p_ref[k],
        }
    }

    fn solve_network(&mut self, x: &[f64]) -> std::result::Result<Vec<Complex64>, StageError> {
        let m = self.model;
        self.sources.iter_mut().for_each(|s| *s = Complex64::default());
        for (k, mach) in m.machines.iter().enumerate() {
            let xs = &x[k * MACHINE_STATES..(k + 1) * MACHINE_STATES];
            let (src, _) = mach.norton(xs);
            self.sources[m.machine_bus[k]] += src;
        }
        self.injections.clear();
        for (k, &b) in m.conv_bus.iter().enumerate() {
            let o = m.layout.vsc + k * VscState::LEN;
            self.injections.push(NonlinearInjection {
                bus: b,
                dq: Complex64::new(x[o], x[o + 1]) * m.conv_scale(k),
            });
        }
        let sol = self
            .algebraic
            .solve(&self.sources, &self.injections, Some(&self.v_last), &self.opts)
            .map_err(StageError::Solver)?;
        Ok(sol.v)
    }

    /// Derivatives at `x`; also returns the network solution used.
    fn evaluate(&mut self, x: &[f64], dx: &mut [f64]) -> std::result::Result<Stage, StageError> {
        let v = self.solve_network(x)?;
        let balance = self.derivatives_at(x, &v, dx)?;
        Ok(Stage { v, balance })
    }

    fn derivatives_at(&mut self, x: &[f64], v: &[Complex64], dx: &mut [f64]) -> std::result::Result<f64, StageError> {
        let m = self.model;
        for (k, mach) in m.machines.iter().enumerate() {
            let r = k * MACHINE_STATES..(k + 1) * MACHINE_STATES;
            mach.derivatives(&x[r.clone()], v[m.machine_bus[k]], &mut dx[r]);
        }
        let mut balance: f64 = 0.0;
        if let Some(link) = &m.case.powerflow.hvdc {
            let grid = &link.grid;
            let n_db = grid.buses.len();
            let u_dc = &x[m.layout.dc_u..m.layout.dc_u + n_db];
            let mut inj = vec![0.0; n_db];
            for (k, c) in link.converters.iter().enumerate() {
                let o = m.layout.vsc + k * VscState::LEN;
                let st = VscState::from_slice(&x[o..]);
                let u_s = v[m.conv_bus[k]].norm();
                let u_dc_k = u_dc[m.conv_dc_bus[k]];
                let meas = VscMeasurements {
                    u_s,
                    u_dc: u_dc_k,
                    u_s_hold: self.u_s_hold[k],
                };
                let refs = outer_control(c, self.converter_setpoint(k, v), &meas, &st);
                let d = vsc_dynamics(c, &st, &refs);
                d.to_slice(&mut dx[o..]);
                let pw = converter_power(c, st.current(), u_s);
                balance = balance.max(pw.balance_residual().abs());
                let i_dc = dc_coupling(&pw, u_dc_k).map_err(|_| StageError::DcCollapse)?;
                inj[m.conv_dc_bus[k]] += i_dc * c.rating_mva / grid.p_base_mw;
                let mut f = refs.flags;
                f.modulation_exceeded = !modulation_feasible(c, st.current(), u_s, u_dc_k, grid.v_base_kv);
                self.flags[k] = f;
            }
            let state = DcGridState {
                u: u_dc.to_vec(),
                i_line: x[m.layout.dc_i..m.layout.len].to_vec(),
            };
            let d = dc_grid_derivatives(grid, &state, &inj).map_err(StageError::Solver)?;
            dx[m.layout.dc_u..m.layout.dc_u + n_db].copy_from_slice(&d.u);
            dx[m.layout.dc_i..m.layout.len].copy_from_slice(&d.i_line);
        }
        Ok(balance)
    }

    /// Discrete updates after an accepted step.
    fn end_of_step(&mut self, v: &[Complex64], dt: f64) {
        let m = self.model;
        for (k, &b) in m.conv_bus.iter().enumerate() {
            let u = v[b].norm();
            if u >= MIN_FEEDFORWARD_VOLTAGE {
                self.u_s_hold[k] = u;
            }
        }
        if let (Some(st), Some(b)) = (self.acle.as_mut(), &m.case.acle) {
            st.update(v[m.conv_bus[b.controlled]], v[m.conv_bus[b.remote]], dt);
        }
        self.v_last.copy_from_slice(v);
    }
}

enum Source {
    Delta(usize),
    Omega(usize),
    Pe(usize),
    Pm(usize),
    Efd(usize),
    VMag(usize),
    VAng(usize),
    Branch(usize),
    PHvdc(usize),
    Ps(usize),
    Qs(usize),
    Id(usize),
    Iq(usize),
    Udc(usize),
    Flags(usize),
    AcleDelta,
    AcleY,
    AclePref,
    Balance,
}

fn channel_catalogue(model: &DynamicModel) -> Vec<(String, Source)> {
    let mut c = Vec::new();
    for (k, m) in model.machines.iter().enumerate() {
        let n = &m.params.name;
        c.push((format!("delta_{n}"), Source::Delta(k)));
        c.push((format!("omega_{n}"), Source::Omega(k)));
        c.push((format!("pe_{n}"), Source::Pe(k)));
        c.push((format!("pm_{n}"), Source::Pm(k)));
        c.push((format!("efd_{n}"), Source::Efd(k)));
    }
    for (i, b) in model.network.buses.iter().enumerate() {
        c.push((format!("v_{}", b.id), Source::VMag(i)));
        c.push((format!("theta_{}", b.id), Source::VAng(i)));
    }
    for (k, br) in model.network.branches.iter().enumerate() {
        c.push((format!("p_{}", br.circuit_id), Source::Branch(k)));
    }
    if let Some(link) = &model.case.powerflow.hvdc {
        if let Some(k) = model.controlled_converter() {
            c.push(("p_hvdc".into(), Source::PHvdc(k)));
        }
        for (k, cv) in link.converters.iter().enumerate() {
            let n = &cv.name;
            c.push((format!("p_s_{n}"), Source::Ps(k)));
            c.push((format!("q_s_{n}"), Source::Qs(k)));
            c.push((format!("i_d_{n}"), Source::Id(k)));
            c.push((format!("i_q_{n}"), Source::Iq(k)));
            c.push((format!("u_dc_{n}"), Source::Udc(k)));
            c.push((format!("flags_{n}"), Source::Flags(k)));
        }
        c.push(("balance_residual".into(), Source::Balance));
    }
    if model.acle.is_some() {
        c.push(("acle_dtheta".into(), Source::AcleDelta));
        c.push(("acle_y".into(), Source::AcleY));
        c.push(("acle_p_ref".into(), Source::AclePref));
    }
    c
}

fn selected(name: &str, sel: &Option<Vec<String>>) -> bool {
    match sel {
        None => true,
        Some(list) => list.iter().any(|p| match p.strip_suffix('*') {
            Some(prefix) => name.starts_with(prefix),
            None => p == name,
        }),
    }
}

/// All channel names a model can record.
pub fn available_channels(model: &DynamicModel) -> Vec<String> {
    channel_catalogue(model).into_iter().map(|(n, _)| n).collect()
}

fn angle_spread(model: &DynamicModel, x: &[f64]) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for k in 0..model.machines.len() {
        let d = x[k * MACHINE_STATES + idx::DELTA];
        lo = lo.min(d);
        hi = hi.max(d);
    }
    if model.machines.len() < 2 {
        0.0
    } else {
        hi - lo
    }
}

/// Runs a simulation of `model` with the given events.
pub fn run_simulation(model: &DynamicModel, params: &SimParams, events: &[ScheduledEvent]) -> Result<SimulationTrace> {
    params.validate()?;
    let dt = params.dt;
    let n_steps = params.steps();

    // snap events to the step grid and check the sequence up front
    let mut schedule: BTreeMap<usize, Vec<&EventKind>> = BTreeMap::new();
    let mut probe = model.network.clone();
    let mut sorted: Vec<&ScheduledEvent> = events.iter().collect();
    sorted.sort_by(|a, b| a.t.total_cmp(&b.t));
    for ev in sorted {
        if !(ev.t >= 0.0) || !ev.t.is_finite() {
            return Err(Error::event(format!("invalid event time {}", ev.t)));
        }
        if let EventKind::Topology(t) = &ev.kind {
            probe = probe.apply_topology_event(t)?;
        }
        schedule.entry((ev.t / dt).round() as usize).or_default().push(&ev.kind);
    }

    let mut sim = Simulator::new(model, params)?;
    let n = model.state_len();
    let mut x = model.x0.clone();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];

    let catalogue: Vec<(String, Source)> = channel_catalogue(model)
        .into_iter()
        .filter(|(name, _)| selected(name, &params.channels))
        .collect();
    let mut trace = SimulationTrace {
        time: Vec::new(),
        names: catalogue.iter().map(|(n, _)| n.clone()).collect(),
        data: vec![Vec::new(); catalogue.len()],
        termination: Termination::Completed,
        max_balance_residual: 0.0,
        max_network_residual: 0.0,
        max_angle_spread: angle_spread(model, &x),
        max_state_deviation: 0.0,
        los_time: None,
        steps: 0,
        final_state: Vec::new(),
    };

    let record = |trace: &mut SimulationTrace, sim: &Simulator, x: &[f64], v: &[Complex64], t: f64, balance: f64| {
        if catalogue.is_empty() {
            return;
        }
        trace.time.push(t);
        let base = model.network.s_base_mva;
        let link = model.case.powerflow.hvdc.as_ref();
        let conv_power = |k: usize| {
            let c = &link.unwrap().converters[k];
            let o = model.layout.vsc + k * VscState::LEN;
            let st = VscState::from_slice(&x[o..]);
            (c, converter_power(c, st.current(), v[model.conv_bus[k]].norm()), st)
        };
        for (ch, (_, src)) in catalogue.iter().enumerate() {
            let value = match *src {
                Source::Delta(k) => x[k * MACHINE_STATES + idx::DELTA],
                Source::Omega(k) => x[k * MACHINE_STATES + idx::OMEGA],
                Source::Pe(k) => {
                    let m = &model.machines[k];
                    let xs = &x[k * MACHINE_STATES..(k + 1) * MACHINE_STATES];
                    let i = m.terminal_current(xs, v[model.machine_bus[k]]);
                    ((v[model.machine_bus[k]] * i.conj()).re + m.params.ra * i.norm_sqr()) * m.params.mva
                }
                Source::Pm(k) => x[k * MACHINE_STATES + idx::PM] * model.machines[k].params.mva,
                Source::Efd(k) => x[k * MACHINE_STATES + idx::EFD],
                Source::VMag(i) => v[i].norm(),
                Source::VAng(i) => v[i].arg(),
                Source::Branch(k) => {
                    let br = &sim.network.branches[k];
                    if br.in_service {
                        let f = model.network.bus_index(br.from).unwrap();
                        let t = model.network.bus_index(br.to).unwrap();
                        br.from_end_power(v[f], v[t]).re * base
                    } else {
                        0.0
                    }
                }
                Source::PHvdc(k) => {
                    let (c, pw, _) = conv_power(k);
                    -pw.p_s * c.rating_mva
                }
                Source::Ps(k) => {
                    let (c, pw, _) = conv_power(k);
                    pw.p_s * c.rating_mva
                }
                Source::Qs(k) => {
                    let (c, pw, _) = conv_power(k);
                    pw.q_s * c.rating_mva
                }
                Source::Id(k) => conv_power(k).2.i_d,
                Source::Iq(k) => conv_power(k).2.i_q,
                Source::Udc(k) => x[model.layout.dc_u + model.conv_dc_bus[k]],
                Source::Flags(k) => sim.flags[k].bits() as f64,
                Source::AcleDelta => sim.acle.map_or(0.0, |s| s.angle_difference()),
                Source::AcleY => sim.acle.map_or(0.0, |s| s.y),
                Source::AclePref => sim.acle.map_or(0.0, |s| s.p_ref()),
                Source::Balance => balance,
            };
            trace.data[ch].push(value);
        }
    };

    // initial network solution
    let mut stage = match sim.evaluate(&x, &mut k1) {
        Ok(s) => s,
        Err(e) => return Err(Error::init(format!("initial network solution failed: {e:?}"))),
    };
    record(&mut trace, &sim, &x, &stage.v, 0.0, stage.balance);
    let mut k1_valid = true;

    for step in 0..n_steps {
        let t = step as f64 * dt;
        if let Some(evs) = schedule.get(&step) {
            for ev in evs {
                sim.apply_event(ev)?;
            }
            k1_valid = false;
        }
        let result = (|| -> std::result::Result<Stage, StageError> {
            sim.stage_h = 0.0;
            if !k1_valid {
                stage = sim.evaluate(&x, &mut k1)?;
            }
            trace.max_balance_residual = trace.max_balance_residual.max(stage.balance);
            match params.integrator {
                Integrator::Rk4Partitioned => {
                    for i in 0..n {
                        tmp[i] = x[i] + 0.5 * dt * k1[i];
                    }
                    sim.stage_h = 0.5 * dt;
                    sim.evaluate(&tmp, &mut k2)?;
                    for i in 0..n {
                        tmp[i] = x[i] + 0.5 * dt * k2[i];
                    }
                    sim.evaluate(&tmp, &mut k3)?;
                    for i in 0..n {
                        tmp[i] = x[i] + dt * k3[i];
                    }
                    sim.stage_h = dt;
                    sim.evaluate(&tmp, &mut k4)?;
                    for i in 0..n {
                        x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                    }
                }
                Integrator::TrapezoidalPartitioned => {
                    for i in 0..n {
                        tmp[i] = x[i] + dt * k1[i];
                    }
                    sim.stage_h = dt;
                    sim.evaluate(&tmp, &mut k2)?;
                    for i in 0..n {
                        x[i] += 0.5 * dt * (k1[i] + k2[i]);
                    }
                }
            }
            for (k, mach) in sim.model.machines.iter().enumerate() {
                mach.project(&mut x[k * MACHINE_STATES..(k + 1) * MACHINE_STATES]);
            }
            // network at the new point; derivatives are evaluated after the
            // discrete controller update so they can serve as the next k1
            let v = sim.solve_network(&x)?;
            Ok(Stage { v, balance: 0.0 })
        })();

        let t_new = (step + 1) as f64 * dt;
        match result {
            Ok(s) => {
                sim.end_of_step(&s.v, dt);
                sim.stage_h = 0.0;
                let src = &sim.sources.clone();
                let inj = sim.injections.clone();
                let r = sim.algebraic.residual(&s.v, src, &inj);
                trace.max_network_residual = trace.max_network_residual.max(r);
                match sim.derivatives_at(&x, &s.v, &mut k1) {
                    Ok(balance) => {
                        stage = Stage { v: s.v, balance };
                        k1_valid = true;
                    }
                    Err(StageError::DcCollapse) => {
                        trace.termination = Termination::DcCollapse { t: t_new };
                        break;
                    }
                    Err(StageError::Solver(e)) => {
                        trace.termination = Termination::SolverFailure {
                            t: t_new,
                            message: e.to_string(),
                        };
                        break;
                    }
                }
            }
            Err(StageError::DcCollapse) => {
                trace.termination = Termination::DcCollapse { t };
                break;
            }
            Err(StageError::Solver(e)) => {
                trace.termination = Termination::SolverFailure {
                    t,
                    message: e.to_string(),
                };
                break;
            }
        }
        trace.steps = step + 1;
        if x.iter().any(|v| !v.is_finite()) {
            trace.termination = Termination::SolverFailure {
                t: t_new,
                message: "non-finite state".into(),
            };
            break;
        }

        for (a, b) in x.iter().zip(&model.x0) {
            trace.max_state_deviation = trace.max_state_deviation.max((a - b).abs());
        }
        let spread = angle_spread(model, &x);
        trace.max_angle_spread = trace.max_angle_spread.max(spread);
        let lost = trace.los_time.is_none() && spread > params.los_threshold;
        if lost {
            trace.los_time = Some(t_new);
        }
        if (step + 1) % params.trace_every == 0 || step + 1 == n_steps || (lost && params.stop_on_los) {
            record(&mut trace, &sim, &x, &stage.v, t_new, stage.balance);
        }
        if lost && params.stop_on_los {
            trace.termination = Termination::LossOfSynchronism { t: t_new };
            break;
        }
    }
    if trace.termination == Termination::Completed {
        if let Some(t) = trace.los_time {
            trace.termination = Termination::LossOfSynchronism { t };
        }
    }
    trace.final_state = x;
    Ok(trace)
}

/// Outcome of running the same case at `dt` and `dt/2`.
#[derive(Debug, Clone, PartialEq)]
pub enum StepConvergence {
    /// Largest rotor angle deviation at common time points (rad).
    Deviation(f64),
    /// At least one of the runs did not complete.
    Incomparable { coarse: String, fine: String },
}

pub fn step_convergence_check(model: &DynamicModel, params: &SimParams, events: &[ScheduledEvent]) -> Result<StepConvergence> {
    let names: Vec<String> = model.machine_names().iter().map(|n| format!("delta_{n}")).collect();
    let coarse_params = SimParams {
        channels: Some(names.clone()),
        trace_every: 1,
        ..params.clone()
    };
    let fine_params = SimParams {
        dt: params.dt / 2.0,
        trace_every: 2,
        ..coarse_params.clone()
    };
    let coarse = run_simulation(model, &coarse_params, events)?;
    let fine = run_simulation(model, &fine_params, events)?;
    let done = |t: &SimulationTrace| t.termination == Termination::Completed;
    if !done(&coarse) || !done(&fine) || coarse.time.len() != fine.time.len() {
        return Ok(StepConvergence::Incomparable {
            coarse: coarse.termination.label().into(),
            fine: fine.termination.label().into(),
        });
    }
    let mut dev: f64 = 0.0;
    for name in &names {
        let a = coarse.channel(name).unwrap();
        let b = fine.channel(name).unwrap();
        for (x, y) in a.iter().zip(b) {
            dev = dev.max((x - y).abs());
        }
    }
    Ok(StepConvergence::Deviation(dev))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyStateOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for SteadyStateOptions {
    fn default() -> Self {
        SteadyStateOptions {
            max_iterations: 50,
            tolerance: 1e-10,
        }
    }
}

/// Algebraic steady state the dynamic model settles to on `network` (the
/// post-disturbance topology): loads keep their frozen characteristics,
/// governors share the imbalance through their droops, exciters regulate with
/// their finite gain, converters hold their setpoints and the emulation
/// controller its static law.
pub fn post_disturbance_powerflow(
    model: &DynamicModel,
    network: &NetworkModel,
    opts: &SteadyStateOptions,
) -> Result<PowerFlowSolution> {
    let case = &model.case;
    let s_base = network.s_base_mva;
    let v0: Vec<f64> = model
        .network
        .loads
        .iter()
        .map(|l| Ok(model.v0[model.network.bus_index(l.bus)?].norm()))
        .collect::<Result<_>>()?;

    let mut pf_case = case.powerflow.clone();
    pf_case.network = network.clone();
    // every generator becomes a droop participant around its initial air-gap power
    let pm0: Vec<f64> = (0..model.machines.len())
        .map(|k| model.x0[k * MACHINE_STATES + idx::PM] * model.machines[k].params.mva)
        .collect();
    let gains: Vec<f64> = model
        .machines
        .iter()
        .map(|m| {
            let r = m.controls.governor.map_or(0.0, |g| 1.0 / g.r);
            m.params.mva * (r + m.params.d)
        })
        .collect();
    pf_case.dispatch = model
        .machines
        .iter()
        .zip(&pm0)
        .map(|(m, &p)| crate::powerflow::GeneratorDispatch { bus: m.params.bus, p_mw: p })
        .collect();
    let pf_opts = PowerFlowOptions {
        ac: crate::powerflow::AcOptions {
            loads: LoadModel::Frozen { v0 },
            slack: SlackModel::Distributed { gains_mw: gains },
            ..case.pf_options.ac.clone()
        },
        ..case.pf_options.clone()
    };
    if let (Some(link), Some(st)) = (pf_case.hvdc.as_mut(), &model.acle) {
        let b = case.acle.as_ref().unwrap();
        link.converters[b.controlled].p_ref = st.p_ini;
    }

    for _ in 0..opts.max_iterations {
        let sol = match &case.acle {
            Some(b) => {
                let st = model.acle.as_ref().unwrap();
                // static law in incremental form: p = p_ini - K (d1 - d1_0 - d2 + d2_0)
                let k = st.settings.effective_gain();
                let p_cons = st.p_ini + k * (st.delta0[0] - st.delta0[1]);
                acle_operating_point(&pf_case, b.controlled, b.remote, k, p_cons, &pf_opts)?.solution
            }
            None => sequential_acdc_powerflow(&pf_case, &pf_opts)?,
        };
        // exciter droop and stator losses
        let mut change: f64 = 0.0;
        for (k, m) in model.machines.iter().enumerate() {
            let i = network.bus_index(m.params.bus)?;
            let g = sol.generator(m.params.bus)?;
            let s_mach = Complex64::new(g.p_mw, g.q_mvar) / m.params.mva;
            let i_mach = (s_mach / sol.v[i]).conj();
            let loss_mw = m.params.ra * i_mach.norm_sqr() * m.params.mva;
            let p_target = pm0[k] - loss_mw;
            let d = &mut pf_case.dispatch[k];
            change = change.max((d.p_mw - p_target).abs() / s_base);
            d.p_mw = p_target;
            if let Some(ex) = &m.controls.exciter {
                let efd = m.steady_field_voltage(sol.v[i], s_mach);
                let v_set = m.v_ref - efd / ex.k_a;
                let bus = &mut pf_case.network.buses[i];
                change = change.max((bus.v_mag - v_set).abs());
                bus.v_mag = v_set;
            }
        }
        if change < opts.tolerance {
            return Ok(sol);
        }
    }
    Err(Error::NonConvergence {
        solver: "post-disturbance steady state",
        iterations: opts.max_iterations,
        residual: f64::NAN,
    })
}

/// Omega base used by the swing equation for a frequency in Hz.
pub fn omega_base(frequency_hz: f64) -> f64 {
    machine::omega_base(frequency_hz)
}
