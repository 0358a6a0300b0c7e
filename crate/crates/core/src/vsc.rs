//! VSC-HVDC link: converter stations with outer controllers, first-order
//! inner current loops and operating limits, plus the DC grid (bus
//! capacitors and R-L lines).
//!
//! Converter quantities are per unit on the converter rating. The DC grid
//! uses a single equivalent pole circuit with base voltage equal to the
//! pole-to-pole voltage and base power equal to the converter rating.
//! Currents are expressed in a frame aligned with the PCC voltage, so
//! `p_s = u_s * i_d` and `q_s = -u_s * i_q` with the current flowing into the
//! AC grid.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::powerflow::{ConverterDirection, ConverterLossModel};

/// Below this PCC voltage the current feed-forward holds its last valid value.
pub const MIN_FEEDFORWARD_VOLTAGE: f64 = 0.05;

/// DC voltage below which the link is considered collapsed.
pub const DC_COLLAPSE_VOLTAGE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DAxisControl {
    ActivePower,
    DcVoltage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QAxisControl {
    ReactivePower,
    AcVoltage,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VscLimits {
    pub p_max: f64,
    pub q_max: f64,
    pub i_max: f64,
    /// Allowed relative DC voltage deviation (0.1 = +/-10 %).
    pub u_dc_band: f64,
    pub m_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VscParams {
    pub name: String,
    pub ac_bus: usize,
    pub dc_bus: usize,
    pub rating_mva: f64,
    /// Converter-side rated AC voltage (kV), used for the modulation check.
    pub ac_kv: f64,
    pub r_s: f64,
    pub x_s: f64,
    /// Closed-loop time constant of the inner current controllers (s).
    pub tau: f64,
    pub d_control: DAxisControl,
    pub q_control: QAxisControl,
    /// Active-power injection setpoint into the AC grid (pu).
    pub p_ref: f64,
    pub q_ref: f64,
    pub u_dc_ref: f64,
    pub u_ac_ref: f64,
    pub kp_dc: f64,
    pub ki_dc: f64,
    pub kp_ac: f64,
    pub ki_ac: f64,
    pub limits: VscLimits,
    pub losses: ConverterLossModel,
}

impl VscParams {
    pub fn validate(&self) -> Result<()> {
        let name = &self.name;
        if !(self.tau > 0.0) {
            return Err(Error::data(format!("{name}: inner-loop time constant must be positive")));
        }
        if !(self.rating_mva > 0.0) || !(self.ac_kv > 0.0) {
            return Err(Error::data(format!("{name}: ratings must be positive")));
        }
        let l = &self.limits;
        if !(l.p_max > 0.0 && l.q_max > 0.0 && l.i_max > 0.0 && l.u_dc_band > 0.0 && l.m_max > 0.0) {
            return Err(Error::data(format!("{name}: limits must be positive")));
        }
        if self.x_s <= 0.0 || self.r_s < 0.0 {
            return Err(Error::data(format!("{name}: invalid connection impedance")));
        }
        self.losses.validate()
    }

    pub fn impedance(&self) -> Complex64 {
        Complex64::new(self.r_s, self.x_s)
    }
}

/// Converter station states: first-order inner loops plus PI integrators.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VscState {
    pub i_d: f64,
    pub i_q: f64,
    pub xi_dc: f64,
    pub xi_ac: f64,
}

impl VscState {
    pub const LEN: usize = 4;

    pub fn to_slice(&self, out: &mut [f64]) {
        out[..Self::LEN].copy_from_slice(&[self.i_d, self.i_q, self.xi_dc, self.xi_ac]);
    }

    pub fn from_slice(x: &[f64]) -> Self {
        VscState {
            i_d: x[0],
            i_q: x[1],
            xi_dc: x[2],
            xi_ac: x[3],
        }
    }

    pub fn current(&self) -> Complex64 {
        Complex64::new(self.i_d, self.i_q)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LimitFlags {
    pub p_limited: bool,
    pub q_limited: bool,
    pub current_limited: bool,
    pub low_voltage_hold: bool,
    pub modulation_exceeded: bool,
    pub u_dc_out_of_band: bool,
}

impl LimitFlags {
    pub fn any(&self) -> bool {
        self.p_limited
            || self.q_limited
            || self.current_limited
            || self.low_voltage_hold
            || self.modulation_exceeded
            || self.u_dc_out_of_band
    }

    /// Bit mask, one bit per flag in declaration order.
    pub fn bits(&self) -> u8 {
        [
            self.p_limited,
            self.q_limited,
            self.current_limited,
            self.low_voltage_hold,
            self.modulation_exceeded,
            self.u_dc_out_of_band,
        ]
        .iter()
        .enumerate()
        .fold(0, |acc, (k, &f)| acc | ((f as u8) << k))
    }

    pub fn merge(&mut self, other: LimitFlags) {
        self.p_limited |= other.p_limited;
        self.q_limited |= other.q_limited;
        self.current_limited |= other.current_limited;
        self.low_voltage_hold |= other.low_voltage_hold;
        self.modulation_exceeded |= other.modulation_exceeded;
        self.u_dc_out_of_band |= other.u_dc_out_of_band;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VscMeasurements {
    pub u_s: f64,
    pub u_dc: f64,
    /// Last PCC voltage magnitude that was above the feed-forward threshold.
    pub u_s_hold: f64,
}

/// References produced by the outer loops, after limiting.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CurrentReferences {
    pub i_d_ref: f64,
    pub i_q_ref: f64,
    /// -1/+1 when the d-axis reference sits on its lower/upper limit.
    pub d_saturation: i8,
    pub q_saturation: i8,
    /// DC-voltage and AC-voltage control errors driving the integrators.
    pub e_dc: f64,
    pub e_ac: f64,
    pub flags: LimitFlags,
}

/// Clamps a current reference pair to `i_max` with d-axis priority.
pub fn enforce_limits(i_d_ref: f64, i_q_ref: f64, i_max: f64) -> (f64, f64, LimitFlags) {
    let mut flags = LimitFlags::default();
    let i_d = i_d_ref.clamp(-i_max, i_max);
    let q_room = (i_max * i_max - i_d * i_d).max(0.0).sqrt();
    let i_q = i_q_ref.clamp(-q_room, q_room);
    flags.current_limited = i_d != i_d_ref || i_q != i_q_ref;
    (i_d, i_q, flags)
}

fn saturation(unlimited: f64, limited: f64) -> i8 {
    if unlimited > limited {
        1
    } else if unlimited < limited {
        -1
    } else {
        0
    }
}

/// Outer controllers: maps setpoints and measurements to limited current
/// references. `p_ref` overrides the stored setpoint (used by the
/// AC-line-emulation controller).
pub fn outer_control(params: &VscParams, p_ref: f64, meas: &VscMeasurements, state: &VscState) -> CurrentReferences {
    let mut out = CurrentReferences::default();
    let lim = &params.limits;
    let u_ff = if meas.u_s < MIN_FEEDFORWARD_VOLTAGE {
        out.flags.low_voltage_hold = true;
        meas.u_s_hold.max(MIN_FEEDFORWARD_VOLTAGE)
    } else {
        meas.u_s
    };

    let i_d_unlimited = match params.d_control {
        DAxisControl::ActivePower => {
            let p = p_ref.clamp(-lim.p_max, lim.p_max);
            out.flags.p_limited = p != p_ref;
            p / u_ff
        }
        DAxisControl::DcVoltage => {
            out.e_dc = params.u_dc_ref - meas.u_dc;
            -(params.kp_dc * out.e_dc + state.xi_dc)
        }
    };
    let i_q_unlimited = match params.q_control {
        QAxisControl::ReactivePower => {
            let q = params.q_ref.clamp(-lim.q_max, lim.q_max);
            out.flags.q_limited = q != params.q_ref;
            -q / u_ff
        }
        QAxisControl::AcVoltage => {
            out.e_ac = params.u_ac_ref - meas.u_s;
            -(params.kp_ac * out.e_ac + state.xi_ac)
        }
    };

    let (i_d, i_q, flags) = enforce_limits(i_d_unlimited, i_q_unlimited, lim.i_max);
    out.flags.merge(flags);
    out.i_d_ref = i_d;
    out.i_q_ref = i_q;
    out.d_saturation = saturation(i_d_unlimited, i_d);
    out.q_saturation = saturation(i_q_unlimited, i_q);

    if (meas.u_dc - params.u_dc_ref).abs() > lim.u_dc_band * params.u_dc_ref {
        out.flags.u_dc_out_of_band = true;
    }
    out
}

/// Time derivatives of the converter states.
pub fn vsc_dynamics(params: &VscParams, state: &VscState, refs: &CurrentReferences) -> VscState {
    // PI output enters with a negative sign: a positive integrator increment
    // lowers the reference, so it is blocked when the lower limit is active.
    let integrate = |gain: f64, e: f64, sat: i8| {
        let rate = gain * e;
        if (sat < 0 && rate > 0.0) || (sat > 0 && rate < 0.0) {
            0.0
        } else {
            rate
        }
    };
    VscState {
        i_d: (refs.i_d_ref - state.i_d) / params.tau,
        i_q: (refs.i_q_ref - state.i_q) / params.tau,
        xi_dc: match params.d_control {
            DAxisControl::DcVoltage => integrate(params.ki_dc, refs.e_dc, refs.d_saturation),
            DAxisControl::ActivePower => 0.0,
        },
        xi_ac: match params.q_control {
            QAxisControl::AcVoltage => integrate(params.ki_ac, refs.e_ac, refs.q_saturation),
            QAxisControl::ReactivePower => 0.0,
        },
    }
}

/// Active-power balance of one converter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConverterPower {
    /// Injection into the AC grid at the PCC.
    pub p_s: f64,
    pub q_s: f64,
    /// AC power at the converter terminals (PCC injection plus reactor losses).
    pub p_c: f64,
    pub p_loss: f64,
    /// Power injected into the DC grid.
    pub p_dc: f64,
    /// Current magnitude.
    pub i_s: f64,
}

impl ConverterPower {
    /// Power balance `p_c + p_loss + p_dc`, zero by construction.
    pub fn balance_residual(&self) -> f64 {
        self.p_c + self.p_loss + self.p_dc
    }
}

/// Converter power balance for dq currents `i` at PCC voltage magnitude `u_s`.
pub fn converter_power(params: &VscParams, i: Complex64, u_s: f64) -> ConverterPower {
    let i_s = i.norm();
    let p_s = u_s * i.re;
    let q_s = -u_s * i.im;
    let p_c = p_s + params.r_s * i_s * i_s;
    let p_loss = params.losses.losses(i_s, ConverterDirection::from_injection(p_s));
    ConverterPower {
        p_s,
        q_s,
        p_c,
        p_loss,
        p_dc: -(p_c + p_loss),
        i_s,
    }
}

/// DC-side current injection for a converter with power balance `power`.
pub fn dc_coupling(power: &ConverterPower, u_dc: f64) -> Result<f64> {
    if !(u_dc > DC_COLLAPSE_VOLTAGE) {
        return Err(Error::data(format!(
            "DC voltage collapsed to {u_dc:.4} pu (limit {DC_COLLAPSE_VOLTAGE} pu)"
        )));
    }
    Ok(power.p_dc / u_dc)
}

/// Whether the converter voltage needed for current `i` is reachable with
/// DC voltage `u_dc` and the maximum modulation index.
pub fn modulation_feasible(params: &VscParams, i: Complex64, u_s: f64, u_dc: f64, dc_base_kv: f64) -> bool {
    let u_c = Complex64::new(u_s, 0.0) + params.impedance() * i;
    // peak phase voltage m*U_dc/2 expressed as line-line rms on the AC base
    let u_c_max = params.limits.m_max * u_dc * (dc_base_kv / 2.0) * (1.5f64).sqrt() / params.ac_kv;
    u_c.norm() <= u_c_max
}

#[derive(Debug, Clone, PartialEq)]
pub struct DcBus {
    pub id: usize,
    /// Equivalent converter capacitance (uF).
    pub c_vsc_uf: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DcLine {
    pub from: usize,
    pub to: usize,
    pub length_km: f64,
    pub r_ohm_per_km: f64,
    pub l_mh_per_km: f64,
    pub c_uf_per_km: f64,
}

impl DcLine {
    pub fn r_ohm(&self) -> f64 {
        self.r_ohm_per_km * self.length_km
    }

    pub fn l_henry(&self) -> f64 {
        self.l_mh_per_km * self.length_km * 1e-3
    }

    pub fn c_uf(&self) -> f64 {
        self.c_uf_per_km * self.length_km
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DcGrid {
    /// Pole-to-pole base voltage (kV).
    pub v_base_kv: f64,
    pub p_base_mw: f64,
    pub buses: Vec<DcBus>,
    pub lines: Vec<DcLine>,
}

impl DcGrid {
    pub fn z_base(&self) -> f64 {
        self.v_base_kv * self.v_base_kv / self.p_base_mw
    }

    pub fn bus_index(&self, id: usize) -> Result<usize> {
        self.buses
            .iter()
            .position(|b| b.id == id)
            .ok_or_else(|| Error::data(format!("unknown DC bus {id}")))
    }

    /// Total equivalent capacitance of a DC bus: converter plus half of every
    /// connected line's shunt capacitance (uF).
    pub fn bus_capacitance_uf(&self, index: usize) -> f64 {
        let id = self.buses[index].id;
        self.buses[index].c_vsc_uf
            + self
                .lines
                .iter()
                .filter(|l| l.from == id || l.to == id)
                .map(|l| l.c_uf() / 2.0)
                .sum::<f64>()
    }

    /// Capacitance as a per-unit time constant (s).
    pub fn bus_capacitance_pu(&self, index: usize) -> f64 {
        self.bus_capacitance_uf(index) * 1e-6 * self.z_base()
    }

    pub fn line_r_pu(&self, line: usize) -> f64 {
        self.lines[line].r_ohm() / self.z_base()
    }

    /// Line inductance as a per-unit time constant (s).
    pub fn line_l_pu(&self, line: usize) -> f64 {
        self.lines[line].l_henry() / self.z_base()
    }

    pub fn line_ends(&self, line: usize) -> Result<(usize, usize)> {
        let l = &self.lines[line];
        Ok((self.bus_index(l.from)?, self.bus_index(l.to)?))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v_base_kv > 0.0 && self.p_base_mw > 0.0) {
            return Err(Error::data("DC bases must be positive"));
        }
        for (k, l) in self.lines.iter().enumerate() {
            let (f, t) = self.line_ends(k)?;
            if f == t {
                return Err(Error::data("DC line connects a bus to itself"));
            }
            if !(l.r_ohm() > 0.0) || !(l.l_henry() > 0.0) {
                return Err(Error::data(format!("DC line {}-{} needs positive R and L", l.from, l.to)));
            }
        }
        for i in 0..self.buses.len() {
            if !(self.bus_capacitance_uf(i) > 0.0) {
                return Err(Error::data(format!("DC bus {} has no capacitance", self.buses[i].id)));
            }
        }
        Ok(())
    }
}

/// A DC grid with its converters.
#[derive(Debug, Clone, PartialEq)]
pub struct HvdcLink {
    pub converters: Vec<VscParams>,
    pub grid: DcGrid,
}

impl HvdcLink {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        for c in &self.converters {
            c.validate()?;
            self.grid.bus_index(c.dc_bus)?;
        }
        let slacks = self
            .converters
            .iter()
            .filter(|c| c.d_control == DAxisControl::DcVoltage)
            .count();
        if slacks != 1 {
            return Err(Error::data(format!(
                "exactly one converter must control the DC voltage, found {slacks}"
            )));
        }
        Ok(())
    }

    pub fn converter_index(&self, name: &str) -> Result<usize> {
        self.converters
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| Error::data(format!("unknown converter {name}")))
    }

    pub fn dc_slack(&self) -> usize {
        self.converters
            .iter()
            .position(|c| c.d_control == DAxisControl::DcVoltage)
            .expect("validated link has a DC slack")
    }
}

/// DC bus voltages and line currents (pu).
#[derive(Debug, Clone, PartialEq)]
pub struct DcGridState {
    pub u: Vec<f64>,
    pub i_line: Vec<f64>,
}

/// Capacitor and line derivatives for the given bus current injections.
pub fn dc_grid_derivatives(grid: &DcGrid, state: &DcGridState, injections: &[f64]) -> Result<DcGridState> {
    let mut du: Vec<f64> = injections.to_vec();
    let mut di = vec![0.0; grid.lines.len()];
    for (k, i_l) in state.i_line.iter().enumerate() {
        let (f, t) = grid.line_ends(k)?;
        du[f] -= i_l;
        du[t] += i_l;
        di[k] = (state.u[f] - state.u[t] - grid.line_r_pu(k) * i_l) / grid.line_l_pu(k);
    }
    for (i, d) in du.iter_mut().enumerate() {
        *d /= grid.bus_capacitance_pu(i);
    }
    Ok(DcGridState { u: du, i_line: di })
}
