//! Scenario files: a TOML description of the network, machines, HVDC link,
//! controller settings, events and solver settings.
//!
//! Unknown keys are rejected. Powers are in MW/MVAr, network impedances in
//! per unit on the system base, machine data in per unit on the machine
//! rating, converter data in per unit on the converter rating.

use serde::{Deserialize, Serialize};

use crate::acle::{AcleMode, AcleSettings};
use crate::error::{Error, Result};
use crate::machine::{ExciterParams, GovernorParams, MachineControls, MachineModel, MachineParams, PssParams};
use crate::network::{Branch, Bus, BusKind, FaultSpec, Load, NetworkModel, TopologyEvent, DEFAULT_FAULT_CONDUCTANCE};
use crate::stability::CctSettings;
use crate::powerflow::{ConverterLossModel, GeneratorDispatch, PowerFlowCase, PowerFlowOptions};
use crate::tds::{fault_events, AcleBinding, EventKind, Integrator, ScheduledEvent, SimParams, StudyCase};
use crate::vsc::{DAxisControl, DcBus, DcGrid, DcLine, HvdcLink, QAxisControl, VscLimits, VscParams};

/// Name of the bundled two-area case with the embedded HVDC link.
pub const BUNDLED_KUNDUR: &str = "kundur_two_area_hvdc";

const KUNDUR_TOML: &str = include_str!("../scenarios/kundur_two_area_hvdc.toml");

/// Text of a bundled scenario.
pub fn bundled(name: &str) -> Option<&'static str> {
    match name {
        BUNDLED_KUNDUR => Some(KUNDUR_TOML),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub system: SystemSection,
    pub buses: Vec<BusEntry>,
    pub branches: Vec<BranchEntry>,
    #[serde(default)]
    pub loads: Vec<LoadEntry>,
    pub machines: Vec<MachineEntry>,
    #[serde(default)]
    pub controls: ControlsSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hvdc: Option<HvdcSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acle: Option<AcleSection>,
    #[serde(default)]
    pub events: Vec<EventEntry>,
    #[serde(default)]
    pub solver: SolverSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub name: String,
    pub s_base_mva: f64,
    pub frequency_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusEntry {
    pub id: usize,
    pub kind: BusKind,
    pub base_kv: f64,
    #[serde(default = "one")]
    pub v_pu: f64,
    #[serde(default)]
    pub angle_deg: f64,
    /// Shunt conductance (MW at 1 pu voltage).
    #[serde(default)]
    pub shunt_mw: f64,
    /// Shunt susceptance (MVAr at 1 pu voltage, positive for capacitors).
    #[serde(default)]
    pub shunt_mvar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchEntry {
    pub id: String,
    pub from: usize,
    pub to: usize,
    #[serde(default)]
    pub r_pu: f64,
    pub x_pu: f64,
    #[serde(default)]
    pub b_pu: f64,
    #[serde(default = "one")]
    pub tap: f64,
    #[serde(default = "yes")]
    pub in_service: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadEntry {
    pub bus: usize,
    pub p_mw: f64,
    pub q_mvar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MachineEntry {
    pub name: String,
    pub bus: usize,
    #[serde(default = "subtransient")]
    pub model: MachineModel,
    pub mva: f64,
    /// Scheduled output; ignored at the slack bus.
    #[serde(default)]
    pub p_mw: f64,
    pub h_s: f64,
    #[serde(default)]
    pub d_pu: f64,
    #[serde(default)]
    pub xd: f64,
    #[serde(default)]
    pub xq: f64,
    pub xd_p: f64,
    #[serde(default)]
    pub xq_p: f64,
    #[serde(default)]
    pub xd_pp: f64,
    #[serde(default)]
    pub xq_pp: f64,
    #[serde(default)]
    pub xl: f64,
    #[serde(default)]
    pub ra: f64,
    #[serde(default)]
    pub td0_p: f64,
    #[serde(default)]
    pub tq0_p: f64,
    #[serde(default)]
    pub td0_pp: f64,
    #[serde(default)]
    pub tq0_pp: f64,
    #[serde(default = "yes")]
    pub exciter: bool,
    #[serde(default = "yes")]
    pub pss: bool,
    #[serde(default = "yes")]
    pub governor: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ControlsSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exciter: Option<ExciterParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pss: Option<PssParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub governor: Option<GovernorParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HvdcSection {
    /// Pole-to-pole DC base voltage (kV).
    pub dc_base_kv: f64,
    pub dc_base_mw: f64,
    pub converters: Vec<ConverterEntry>,
    pub dc_buses: Vec<DcBusEntry>,
    pub dc_lines: Vec<DcLineEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConverterEntry {
    pub name: String,
    pub ac_bus: usize,
    pub dc_bus: usize,
    pub mva: f64,
    pub ac_kv: f64,
    pub r_pu: f64,
    pub x_pu: f64,
    pub tau_s: f64,
    pub d_control: DAxisControl,
    pub q_control: QAxisControl,
    /// Active-power injection into the AC grid (MW).
    #[serde(default)]
    pub p_mw: f64,
    #[serde(default)]
    pub q_mvar: f64,
    #[serde(default = "one")]
    pub u_dc_pu: f64,
    #[serde(default = "one")]
    pub u_ac_pu: f64,
    #[serde(default)]
    pub kp_dc: f64,
    #[serde(default)]
    pub ki_dc: f64,
    #[serde(default)]
    pub kp_ac: f64,
    #[serde(default)]
    pub ki_ac: f64,
    pub p_max_mw: f64,
    pub q_max_mvar: f64,
    pub i_max_pu: f64,
    pub u_dc_band: f64,
    pub m_max: f64,
    pub losses: ConverterLossModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DcBusEntry {
    pub id: usize,
    pub c_vsc_uf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DcLineEntry {
    pub from: usize,
    pub to: usize,
    pub length_km: f64,
    pub r_ohm_per_km: f64,
    pub l_mh_per_km: f64,
    pub c_uf_per_km: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcleSection {
    pub mode: AcleMode,
    /// Converter whose active-power setpoint is manipulated.
    pub converter: String,
    /// Converter at the other end of the link.
    pub remote: String,
    /// Constant term of the setpoint, as injection of `converter` into the AC grid (MW).
    #[serde(default)]
    pub p_cons_mw: f64,
    #[serde(alias = "k")]
    pub k_pu_per_rad: f64,
    #[serde(alias = "t")]
    pub t_filter_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventType {
    Fault,
    Trip,
    Reclose,
    PSetpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventEntry {
    pub kind: EventType,
    pub t_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub circuit: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clear_after_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conductance_pu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converter: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_mw: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default = "default_dt")]
    pub dt_s: f64,
    #[serde(default = "default_t_end")]
    pub t_end_s: f64,
    #[serde(default = "default_integrator")]
    pub integrator: Integrator,
    #[serde(default = "default_network_tol")]
    pub network_tolerance: f64,
    #[serde(default = "default_network_iter")]
    pub network_max_iterations: usize,
    #[serde(default = "one_usize")]
    pub trace_every: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channels: Option<Vec<String>>,
    #[serde(default = "default_los")]
    pub los_threshold_rad: f64,
    #[serde(default = "default_cct_initial")]
    pub cct_initial_s: f64,
    #[serde(default = "default_cct_max")]
    pub cct_max_s: f64,
    #[serde(default = "default_cct_resolution")]
    pub cct_resolution_s: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            dt_s: default_dt(),
            t_end_s: default_t_end(),
            integrator: default_integrator(),
            network_tolerance: default_network_tol(),
            network_max_iterations: default_network_iter(),
            trace_every: 1,
            channels: None,
            los_threshold_rad: default_los(),
            cct_initial_s: default_cct_initial(),
            cct_max_s: default_cct_max(),
            cct_resolution_s: default_cct_resolution(),
        }
    }
}

fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn yes() -> bool {
    true
}
fn subtransient() -> MachineModel {
    MachineModel::Subtransient
}
fn default_dt() -> f64 {
    1e-3
}
fn default_t_end() -> f64 {
    10.0
}
fn default_integrator() -> Integrator {
    Integrator::Rk4Partitioned
}
fn default_network_tol() -> f64 {
    1e-10
}
fn default_network_iter() -> usize {
    50
}
fn default_los() -> f64 {
    std::f64::consts::PI
}
fn default_cct_initial() -> f64 {
    0.1
}
fn default_cct_max() -> f64 {
    2.0
}
fn default_cct_resolution() -> f64 {
    1e-3
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Scenario> {
        toml::from_str(text).map_err(|e| Error::scenario(e.to_string()))
    }

    /// Loads a file, or a bundled scenario when `source` names one.
    pub fn load(source: &str) -> Result<Scenario> {
        if let Some(text) = bundled(source) {
            return Scenario::parse(text);
        }
        let text = std::fs::read_to_string(source).map_err(|e| Error::scenario(format!("{source}: {e}")))?;
        Scenario::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::scenario(e.to_string()))
    }

    /// Applies `section.key=value` overrides. Array sections are addressed by
    /// the `id` or `name` of an entry, e.g. `machines.G1.h_s=5.0` or
    /// `buses.7.v_pu=1.0`, or by position when entries have neither
    /// (`events.0.clear_after_s=0.2`); nested tables by their path, e.g.
    /// `controls.exciter.k_a=100`.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Scenario> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut doc: toml::Value = toml::Value::try_from(self).map_err(|e| Error::scenario(e.to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let text = toml::to_string(&doc).map_err(|e| Error::scenario(e.to_string()))?;
        Scenario::parse(&text)
    }

    pub fn sim_params(&self) -> SimParams {
        let s = &self.solver;
        SimParams {
            dt: s.dt_s,
            t_end: s.t_end_s,
            integrator: s.integrator,
            network: crate::network::NetworkSolveOptions {
                tolerance: s.network_tolerance,
                max_iterations: s.network_max_iterations,
            },
            trace_every: s.trace_every,
            channels: s.channels.clone(),
            los_threshold: s.los_threshold_rad,
            stop_on_los: true,
        }
    }

    pub fn cct_settings(&self) -> CctSettings {
        CctSettings {
            initial: self.solver.cct_initial_s,
            max: self.solver.cct_max_s,
            resolution: self.solver.cct_resolution_s,
        }
    }

    fn converter_index(&self, name: &str) -> Result<usize> {
        self.hvdc
            .as_ref()
            .and_then(|h| h.converters.iter().position(|c| c.name == name))
            .ok_or_else(|| Error::scenario(format!("unknown converter '{name}'")))
    }

    pub fn network(&self) -> Result<NetworkModel> {
        let base = self.system.s_base_mva;
        let buses = self
            .buses
            .iter()
            .map(|b| Bus {
                id: b.id,
                kind: b.kind,
                base_kv: b.base_kv,
                v_mag: b.v_pu,
                v_ang: b.angle_deg.to_radians(),
                shunt_g: b.shunt_mw / base,
                shunt_b: b.shunt_mvar / base,
            })
            .collect();
        let branches = self
            .branches
            .iter()
            .map(|b| Branch {
                circuit_id: b.id.clone(),
                from: b.from,
                to: b.to,
                r: b.r_pu,
                x: b.x_pu,
                b_shunt: b.b_pu,
                tap: b.tap,
                in_service: b.in_service,
            })
            .collect();
        let loads = self
            .loads
            .iter()
            .map(|l| Load {
                bus: l.bus,
                p_mw: l.p_mw,
                q_mvar: l.q_mvar,
            })
            .collect();
        let net = NetworkModel::new(base, buses, branches, loads);
        net.validate().map_err(|e| Error::scenario(e.to_string()))?;
        Ok(net)
    }

    fn hvdc_link(&self) -> Result<Option<HvdcLink>> {
        let Some(h) = &self.hvdc else { return Ok(None) };
        let converters = h
            .converters
            .iter()
            .map(|c| VscParams {
                name: c.name.clone(),
                ac_bus: c.ac_bus,
                dc_bus: c.dc_bus,
                rating_mva: c.mva,
                ac_kv: c.ac_kv,
                r_s: c.r_pu,
                x_s: c.x_pu,
                tau: c.tau_s,
                d_control: c.d_control,
                q_control: c.q_control,
                p_ref: c.p_mw / c.mva,
                q_ref: c.q_mvar / c.mva,
                u_dc_ref: c.u_dc_pu,
                u_ac_ref: c.u_ac_pu,
                kp_dc: c.kp_dc,
                ki_dc: c.ki_dc,
                kp_ac: c.kp_ac,
                ki_ac: c.ki_ac,
                limits: VscLimits {
                    p_max: c.p_max_mw / c.mva,
                    q_max: c.q_max_mvar / c.mva,
                    i_max: c.i_max_pu,
                    u_dc_band: c.u_dc_band,
                    m_max: c.m_max,
                },
                losses: c.losses,
            })
            .collect();
        let grid = DcGrid {
            v_base_kv: h.dc_base_kv,
            p_base_mw: h.dc_base_mw,
            buses: h
                .dc_buses
                .iter()
                .map(|b| DcBus {
                    id: b.id,
                    c_vsc_uf: b.c_vsc_uf,
                })
                .collect(),
            lines: h
                .dc_lines
                .iter()
                .map(|l| DcLine {
                    from: l.from,
                    to: l.to,
                    length_km: l.length_km,
                    r_ohm_per_km: l.r_ohm_per_km,
                    l_mh_per_km: l.l_mh_per_km,
                    c_uf_per_km: l.c_uf_per_km,
                })
                .collect(),
        };
        let link = HvdcLink { converters, grid };
        link.validate().map_err(|e| Error::scenario(e.to_string()))?;
        Ok(Some(link))
    }

    /// Builds the study case (network, machines, link, controller).
    pub fn study_case(&self) -> Result<StudyCase> {
        let network = self.network()?;
        let hvdc = self.hvdc_link()?;
        let mut dispatch = Vec::new();
        let mut machines = Vec::new();
        for m in &self.machines {
            let i = network
                .bus_index(m.bus)
                .map_err(|_| Error::scenario(format!("machine {} references unknown bus {}", m.name, m.bus)))?;
            if network.buses[i].kind == BusKind::Pq {
                return Err(Error::scenario(format!("machine {} sits at PQ bus {}", m.name, m.bus)));
            }
            dispatch.push(GeneratorDispatch { bus: m.bus, p_mw: m.p_mw });
            let params = MachineParams {
                name: m.name.clone(),
                bus: m.bus,
                model: m.model,
                mva: m.mva,
                h: m.h_s,
                d: m.d_pu,
                xd: m.xd,
                xq: m.xq,
                xd_p: m.xd_p,
                xq_p: m.xq_p,
                xd_pp: m.xd_pp,
                xq_pp: m.xq_pp,
                xl: m.xl,
                ra: m.ra,
                td0_p: m.td0_p,
                tq0_p: m.tq0_p,
                td0_pp: m.td0_pp,
                tq0_pp: m.tq0_pp,
            };
            params.validate().map_err(|e| Error::scenario(e.to_string()))?;
            let controls = MachineControls {
                exciter: pick(m, m.exciter, "exciter", self.controls.exciter)?,
                pss: pick(m, m.pss, "pss", self.controls.pss)?,
                governor: pick(m, m.governor, "governor", self.controls.governor)?,
            };
            controls.validate(&m.name).map_err(|e| Error::scenario(e.to_string()))?;
            machines.push((params, controls));
        }

        let acle = match &self.acle {
            None => None,
            Some(a) => {
                let link = hvdc.as_ref().ok_or_else(|| Error::scenario("[acle] needs an [hvdc] section"))?;
                let controlled = self.converter_index(&a.converter)?;
                let remote = self.converter_index(&a.remote)?;
                let c = &link.converters[controlled];
                let settings = AcleSettings {
                    mode: a.mode,
                    p_cons: a.p_cons_mw / c.rating_mva,
                    k: a.k_pu_per_rad,
                    t: a.t_filter_s,
                    p_max: c.limits.p_max,
                };
                settings.validate().map_err(|e| Error::scenario(e.to_string()))?;
                Some(AcleBinding {
                    settings,
                    controlled,
                    remote,
                })
            }
        };

        let case = StudyCase {
            name: self.system.name.clone(),
            frequency_hz: self.system.frequency_hz,
            powerflow: PowerFlowCase {
                network,
                dispatch,
                hvdc,
            },
            machines,
            acle,
            pf_options: PowerFlowOptions::default(),
        };
        case.powerflow.validate().map_err(|e| Error::scenario(e.to_string()))?;
        self.events()?;
        Ok(case)
    }

    /// The first fault event.
    pub fn fault(&self) -> Result<FaultSpec> {
        let e = self
            .events
            .iter()
            .find(|e| e.kind == EventType::Fault)
            .ok_or_else(|| Error::scenario("no fault event defined"))?;
        self.fault_spec(e)
    }

    fn fault_spec(&self, e: &EventEntry) -> Result<FaultSpec> {
        let circuit = e
            .circuit
            .clone()
            .ok_or_else(|| Error::scenario("fault event needs 'circuit'"))?;
        let duration = e
            .clear_after_s
            .ok_or_else(|| Error::scenario("fault event needs 'clear_after_s'"))?;
        let mut f = FaultSpec::new(circuit, e.t_s, duration);
        f.conductance = e.conductance_pu.unwrap_or(DEFAULT_FAULT_CONDUCTANCE);
        f.validate().map_err(|e| Error::scenario(e.to_string()))?;
        Ok(f)
    }

    /// Event schedule (fault events expand to fault-on and fault-clear).
    pub fn events(&self) -> Result<Vec<ScheduledEvent>> {
        let mut out = Vec::new();
        for e in &self.events {
            let circuit = || {
                e.circuit
                    .clone()
                    .ok_or_else(|| Error::scenario(format!("{:?} event needs 'circuit'", e.kind)))
            };
            match e.kind {
                EventType::Fault => out.extend(fault_events(&self.fault_spec(e)?)),
                EventType::Trip => out.push(ScheduledEvent {
                    t: e.t_s,
                    kind: EventKind::Topology(TopologyEvent::Trip { circuit_id: circuit()? }),
                }),
                EventType::Reclose => out.push(ScheduledEvent {
                    t: e.t_s,
                    kind: EventKind::Topology(TopologyEvent::Reclose { circuit_id: circuit()? }),
                }),
                EventType::PSetpoint => {
                    let name = e
                        .converter
                        .as_deref()
                        .ok_or_else(|| Error::scenario("p_setpoint event needs 'converter'"))?;
                    let k = self.converter_index(name)?;
                    let mva = self.hvdc.as_ref().unwrap().converters[k].mva;
                    let p = e.p_mw.ok_or_else(|| Error::scenario("p_setpoint event needs 'p_mw'"))?;
                    out.push(ScheduledEvent {
                        t: e.t_s,
                        kind: EventKind::PSetpoint { converter: k, p: p / mva },
                    });
                }
            }
        }
        Ok(out)
    }

    /// Replaces the events by a single fault.
    pub fn with_fault_only(&self, circuit: &str, t_on: f64, duration: f64) -> Scenario {
        let mut s = self.clone();
        s.events = vec![EventEntry {
            kind: EventType::Fault,
            t_s: t_on,
            circuit: Some(circuit.into()),
            clear_after_s: Some(duration),
            conductance_pu: None,
            converter: None,
            p_mw: None,
        }];
        s
    }
}

/// Short spellings accepted by overrides (and by the parser).
const KEY_ALIASES: &[(&str, &str, &str)] = &[("acle", "k", "k_pu_per_rad"), ("acle", "t", "t_filter_s")];

/// Control block of a machine: absent when switched off, and exciter and
/// stabilizer are never attached to a classical machine.
fn pick<T>(m: &MachineEntry, on: bool, section: &str, value: Option<T>) -> Result<Option<T>> {
    if !on || (m.model == MachineModel::Classical && section != "governor") {
        return Ok(None);
    }
    value
        .map(Some)
        .ok_or_else(|| Error::scenario(format!("machine {} needs section [controls.{section}]", m.name)))
}

fn parse_value(raw: &str) -> toml::Value {
    let raw = raw.trim();
    // reuse the TOML grammar for numbers, booleans, strings and arrays
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

fn apply_override(doc: &mut toml::Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::scenario(format!("override '{spec}' is not of the form section.key=value")))?;
    let mut parts: Vec<&str> = path.trim().split('.').collect();
    if let [section, key] = parts[..] {
        if let Some(&(_, _, full)) = KEY_ALIASES.iter().find(|(s, k, _)| *s == section && *k == key) {
            parts[1] = full;
        }
    }
    if parts.len() < 2 || parts.iter().any(|p| p.is_empty()) {
        return Err(Error::scenario(format!("override path '{path}' needs a section and a key")));
    }
    let mut value = parse_value(raw);
    let mut node = doc;
    let last = parts.len() - 1;
    for (i, part) in parts.iter().enumerate() {
        if i == last {
            let table = node
                .as_table_mut()
                .ok_or_else(|| Error::scenario(format!("'{path}' does not name a key")))?;
            // integers given for float fields are widened
            if let (Some(toml::Value::Float(_)), toml::Value::Integer(v)) = (table.get(*part), &value) {
                value = toml::Value::Float(*v as f64);
            }
            table.insert((*part).to_string(), value);
            return Ok(());
        }
        node = match node {
            toml::Value::Table(t) => {
                if !t.contains_key(*part) {
                    t.insert((*part).to_string(), toml::Value::Table(Default::default()));
                }
                t.get_mut(*part).unwrap()
            }
            toml::Value::Array(items) => {
                let by_key = items.iter().position(|item| {
                    ["id", "name"].iter().any(|key| match item.get(key) {
                        Some(toml::Value::String(s)) => s == part,
                        Some(toml::Value::Integer(n)) => n.to_string() == *part,
                        _ => false,
                    })
                });
                // entries without an id (events, loads) are addressed by position
                let pos = by_key.or_else(|| part.parse::<usize>().ok().filter(|&i| i < items.len()));
                let i = pos.ok_or_else(|| Error::scenario(format!("no entry '{part}' in '{path}'")))?;
                &mut items[i]
            }
            _ => return Err(Error::scenario(format!("'{path}' does not name a table"))),
        };
    }
    unreachable!()
}
