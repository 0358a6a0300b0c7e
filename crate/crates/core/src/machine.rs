//! Synchronous machines with static exciter, PSS and speed governor.
//!
//! The electrical model is the two-axis model with subtransient circuits and
//! equal subtransient reactances, so the stator is a single Thevenin source
//! `e''` behind `ra + j x''` in both axes. The classical model keeps a
//! constant `e'` behind `ra + j x'd`. Machine quantities are per unit on the
//! machine rating; network quantities on the system base. A phasor `X` on the
//! network frame maps to the rotor frame as `x_d + j x_q = X * j * exp(-j delta)`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rated angular frequency used in the swing equation.
pub fn omega_base(frequency_hz: f64) -> f64 {
    2.0 * std::f64::consts::PI * frequency_hz
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MachineModel {
    Subtransient,
    Classical,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MachineParams {
    pub name: String,
    pub bus: usize,
    pub model: MachineModel,
    pub mva: f64,
    /// Inertia constant (s). Infinite inertia gives an infinite bus.
    pub h: f64,
    pub d: f64,
    pub xd: f64,
    pub xq: f64,
    pub xd_p: f64,
    pub xq_p: f64,
    pub xd_pp: f64,
    pub xq_pp: f64,
    pub xl: f64,
    pub ra: f64,
    pub td0_p: f64,
    pub tq0_p: f64,
    pub td0_pp: f64,
    pub tq0_pp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExciterParams {
    pub k_a: f64,
    pub t_a: f64,
    pub efd_min: f64,
    pub efd_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PssParams {
    pub k: f64,
    pub t_w: f64,
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
    pub t4: f64,
    pub v_min: f64,
    pub v_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GovernorParams {
    /// Permanent droop (pu speed per pu power).
    pub r: f64,
    pub t_g: f64,
    pub pm_min: f64,
    pub pm_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MachineControls {
    pub exciter: Option<ExciterParams>,
    pub pss: Option<PssParams>,
    pub governor: Option<GovernorParams>,
}

/// State layout of one machine.
pub mod idx {
    pub const DELTA: usize = 0;
    pub const OMEGA: usize = 1;
    pub const EQ_P: usize = 2;
    pub const ED_P: usize = 3;
    pub const EQ_PP: usize = 4;
    pub const ED_PP: usize = 5;
    pub const EFD: usize = 6;
    pub const WASHOUT: usize = 7;
    pub const LEAD_LAG1: usize = 8;
    pub const LEAD_LAG2: usize = 9;
    pub const PM: usize = 10;
}

pub const MACHINE_STATES: usize = 11;

impl MachineParams {
    pub fn validate(&self) -> Result<()> {
        let n = &self.name;
        if !(self.mva > 0.0) || !(self.h > 0.0) || self.d < 0.0 || self.ra < 0.0 {
            return Err(Error::data(format!("{n}: rating, inertia, damping and ra must be positive")));
        }
        match self.model {
            MachineModel::Classical => {
                if !(self.xd_p > 0.0) {
                    return Err(Error::data(format!("{n}: x'd must be positive")));
                }
            }
            MachineModel::Subtransient => {
                if !(self.xd >= self.xd_p && self.xd_p >= self.xd_pp && self.xd_pp > self.xl && self.xl >= 0.0) {
                    return Err(Error::data(format!("{n}: d-axis reactances must satisfy xd >= x'd >= x''d > xl >= 0")));
                }
                if !(self.xq >= self.xq_p && self.xq_p >= self.xq_pp && self.xq_pp > 0.0) {
                    return Err(Error::data(format!("{n}: q-axis reactances must decrease")));
                }
                if (self.xd_pp - self.xq_pp).abs() > 1e-12 {
                    return Err(Error::data(format!("{n}: subtransient saliency is not modelled (x''d must equal x''q)")));
                }
                let t = [self.td0_p, self.tq0_p, self.td0_pp, self.tq0_pp];
                if t.iter().any(|&v| !(v > 0.0)) {
                    return Err(Error::data(format!("{n}: time constants must be positive")));
                }
            }
        }
        Ok(())
    }

    /// Impedance behind which the internal source sits (machine base).
    pub fn source_impedance(&self) -> Complex64 {
        match self.model {
            MachineModel::Subtransient => Complex64::new(self.ra, self.xd_pp),
            MachineModel::Classical => Complex64::new(self.ra, self.xd_p),
        }
    }
}

impl MachineControls {
    pub fn validate(&self, name: &str) -> Result<()> {
        if let Some(e) = &self.exciter {
            if !(e.k_a > 0.0 && e.t_a > 0.0 && e.efd_max > e.efd_min) {
                return Err(Error::data(format!("{name}: invalid exciter data")));
            }
        }
        if let Some(p) = &self.pss {
            let t = [p.t_w, p.t2, p.t4];
            if t.iter().any(|&v| !(v > 0.0)) || p.t1 < 0.0 || p.t3 < 0.0 || !(p.v_max > p.v_min) {
                return Err(Error::data(format!("{name}: invalid PSS data")));
            }
            if self.exciter.is_none() {
                return Err(Error::data(format!("{name}: PSS requires an exciter")));
            }
        }
        if let Some(g) = &self.governor {
            if !(g.r > 0.0 && g.t_g > 0.0 && g.pm_max > g.pm_min) {
                return Err(Error::data(format!("{name}: invalid governor data")));
            }
        }
        Ok(())
    }
}

/// A machine with its controls and back-computed references.
#[derive(Debug, Clone, PartialEq)]
pub struct Machine {
    pub params: MachineParams,
    pub controls: MachineControls,
    /// Voltage reference of the exciter.
    pub v_ref: f64,
    /// Load reference of the governor (pu machine base).
    pub p_ref: f64,
    /// Ratio of machine to system base.
    pub base_ratio: f64,
    pub omega_b: f64,
}

/// Algebraic quantities produced while evaluating a machine.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MachineOutputs {
    /// Air-gap power (pu machine base).
    pub pe: f64,
    /// Terminal reactive output (pu machine base).
    pub qe: f64,
    /// Terminal current in the network frame (pu machine base).
    pub current: Complex64,
    pub v_pss: f64,
}

fn to_rotor(x: Complex64, delta: f64) -> Complex64 {
    x * Complex64::new(delta.sin(), delta.cos())
}

fn to_network(x: Complex64, delta: f64) -> Complex64 {
    x * Complex64::new(delta.sin(), -delta.cos())
}

fn windup(value: f64, rate: f64, lo: f64, hi: f64) -> f64 {
    if (value >= hi && rate > 0.0) || (value <= lo && rate < 0.0) {
        0.0
    } else {
        rate
    }
}

impl Machine {
    /// Internal source in the network frame (pu).
    pub fn internal_emf(&self, x: &[f64]) -> Complex64 {
        let e = match self.params.model {
            MachineModel::Subtransient => Complex64::new(x[idx::ED_PP], x[idx::EQ_PP]),
            MachineModel::Classical => Complex64::new(0.0, x[idx::EQ_P]),
        };
        to_network(e, x[idx::DELTA])
    }

    /// Norton equivalent on the system base: source current and shunt admittance.
    pub fn norton(&self, x: &[f64]) -> (Complex64, Complex64) {
        let y = self.base_ratio / self.params.source_impedance();
        (self.internal_emf(x) * y, y)
    }

    /// Terminal current (machine base) for terminal voltage `v`.
    pub fn terminal_current(&self, x: &[f64], v: Complex64) -> Complex64 {
        (self.internal_emf(x) - v) / self.params.source_impedance()
    }

    /// PSS output for the given states (before the exciter).
    pub fn pss_output(&self, x: &[f64]) -> f64 {
        match &self.controls.pss {
            None => 0.0,
            Some(p) => {
                let y_w = p.k * x[idx::OMEGA] - x[idx::WASHOUT];
                let y1 = x[idx::LEAD_LAG1] + p.t1 / p.t2 * (y_w - x[idx::LEAD_LAG1]);
                let y2 = x[idx::LEAD_LAG2] + p.t3 / p.t4 * (y1 - x[idx::LEAD_LAG2]);
                y2.clamp(p.v_min, p.v_max)
            }
        }
    }

    /// State derivatives for terminal voltage `v` (pu).
    pub fn derivatives(&self, x: &[f64], v: Complex64, dx: &mut [f64]) -> MachineOutputs {
        let p = &self.params;
        let delta = x[idx::DELTA];
        let omega = x[idx::OMEGA];
        let i_net = self.terminal_current(x, v);
        let i = to_rotor(i_net, delta);
        let (id, iq) = (i.re, i.im);
        let e = to_rotor(self.internal_emf(x), delta);
        let pe = e.re * id + e.im * iq;
        let qe = (v * i_net.conj()).im;

        dx[..MACHINE_STATES].iter_mut().for_each(|d| *d = 0.0);
        dx[idx::DELTA] = self.omega_b * omega;
        let pm = match &self.controls.governor {
            Some(g) => x[idx::PM].clamp(g.pm_min, g.pm_max),
            None => x[idx::PM],
        };
        if p.h.is_finite() {
            dx[idx::OMEGA] = (pm - pe - p.d * omega) / (2.0 * p.h);
        }

        let mut v_pss = 0.0;
        if p.model == MachineModel::Subtransient {
            let efd = match &self.controls.exciter {
                Some(ex) => x[idx::EFD].clamp(ex.efd_min, ex.efd_max),
                None => x[idx::EFD],
            };
            dx[idx::EQ_P] = (efd - x[idx::EQ_P] - (p.xd - p.xd_p) * id) / p.td0_p;
            dx[idx::ED_P] = (-x[idx::ED_P] + (p.xq - p.xq_p) * iq) / p.tq0_p;
            dx[idx::EQ_PP] = (x[idx::EQ_P] - x[idx::EQ_PP] - (p.xd_p - p.xd_pp) * id) / p.td0_pp;
            dx[idx::ED_PP] = (x[idx::ED_P] - x[idx::ED_PP] + (p.xq_p - p.xq_pp) * iq) / p.tq0_pp;

            if let Some(pss) = &self.controls.pss {
                let y_w = pss.k * omega - x[idx::WASHOUT];
                dx[idx::WASHOUT] = y_w / pss.t_w;
                let y1 = x[idx::LEAD_LAG1] + pss.t1 / pss.t2 * (y_w - x[idx::LEAD_LAG1]);
                dx[idx::LEAD_LAG1] = (y_w - x[idx::LEAD_LAG1]) / pss.t2;
                dx[idx::LEAD_LAG2] = (y1 - x[idx::LEAD_LAG2]) / pss.t4;
                v_pss = self.pss_output(x);
            }
            if let Some(ex) = &self.controls.exciter {
                let rate = (ex.k_a * (self.v_ref - v.norm() + v_pss) - efd) / ex.t_a;
                dx[idx::EFD] = windup(efd, rate, ex.efd_min, ex.efd_max);
            }
        }
        if let Some(g) = &self.controls.governor {
            let rate = (self.p_ref - omega / g.r - x[idx::PM]) / g.t_g;
            dx[idx::PM] = windup(x[idx::PM], rate, g.pm_min, g.pm_max);
        }
        MachineOutputs {
            pe,
            qe,
            current: i_net,
            v_pss,
        }
    }

    /// Pulls limited states back inside their bounds after a step. Without
    /// this a fast exciter overshoots its ceiling by a step-dependent amount.
    pub fn project(&self, x: &mut [f64]) {
        if let Some(ex) = &self.controls.exciter {
            x[idx::EFD] = x[idx::EFD].clamp(ex.efd_min, ex.efd_max);
        }
        if let Some(g) = &self.controls.governor {
            x[idx::PM] = x[idx::PM].clamp(g.pm_min, g.pm_max);
        }
    }

    /// Steady-state field voltage for terminal voltage `v` and output `s`
    /// (pu machine base).
    pub fn steady_field_voltage(&self, v: Complex64, s: Complex64) -> f64 {
        let p = &self.params;
        let i = (s / v).conj();
        let e_q = v + Complex64::new(p.ra, p.xq) * i;
        let delta = e_q.arg();
        let vr = to_rotor(v, delta);
        let ir = to_rotor(i, delta);
        vr.im + p.ra * ir.im + p.xd * ir.re
    }
}

/// Builds a machine in equilibrium with terminal voltage `v` (pu) and
/// output `s_sys` (pu system base).
pub fn init_machine(
    params: &MachineParams,
    controls: &MachineControls,
    v: Complex64,
    s_sys: Complex64,
    s_base_mva: f64,
    frequency_hz: f64,
) -> Result<(Machine, [f64; MACHINE_STATES])> {
    params.validate()?;
    controls.validate(&params.name)?;
    if params.model == MachineModel::Classical && (controls.exciter.is_some() || controls.pss.is_some()) {
        return Err(Error::data(format!("{}: the classical model has no field circuit to control", params.name)));
    }
    if !(v.norm() > 0.0) {
        return Err(Error::init(format!("{}: zero terminal voltage", params.name)));
    }
    let base_ratio = params.mva / s_base_mva;
    let s = s_sys / base_ratio;
    let i = (s / v).conj();
    let mut x = [0.0; MACHINE_STATES];
    let mut machine = Machine {
        params: params.clone(),
        controls: *controls,
        v_ref: v.norm(),
        p_ref: 0.0,
        base_ratio,
        omega_b: omega_base(frequency_hz),
    };

    let pm = match params.model {
        MachineModel::Classical => {
            let e = v + params.source_impedance() * i;
            x[idx::DELTA] = e.arg();
            x[idx::EQ_P] = e.norm();
            (e * i.conj()).re
        }
        MachineModel::Subtransient => {
            let e_q = v + Complex64::new(params.ra, params.xq) * i;
            let delta = e_q.arg();
            let vr = to_rotor(v, delta);
            let ir = to_rotor(i, delta);
            let (id, iq) = (ir.re, ir.im);
            let efd = vr.im + params.ra * iq + params.xd * id;
            x[idx::DELTA] = delta;
            x[idx::EFD] = efd;
            x[idx::EQ_P] = efd - (params.xd - params.xd_p) * id;
            x[idx::ED_P] = (params.xq - params.xq_p) * iq;
            x[idx::EQ_PP] = x[idx::EQ_P] - (params.xd_p - params.xd_pp) * id;
            x[idx::ED_PP] = x[idx::ED_P] + (params.xq_p - params.xq_pp) * iq;
            if let Some(ex) = &controls.exciter {
                if efd < ex.efd_min || efd > ex.efd_max {
                    return Err(Error::init(format!(
                        "{}: required field voltage {efd:.3} pu is outside [{}, {}]",
                        params.name, ex.efd_min, ex.efd_max
                    )));
                }
                machine.v_ref = v.norm() + efd / ex.k_a;
            }
            x[idx::ED_PP] * id + x[idx::EQ_PP] * iq
        }
    };
    x[idx::PM] = pm;
    if let Some(g) = &controls.governor {
        if pm < g.pm_min || pm > g.pm_max {
            return Err(Error::init(format!(
                "{}: required mechanical power {pm:.3} pu is outside [{}, {}]",
                params.name, g.pm_min, g.pm_max
            )));
        }
    }
    machine.p_ref = pm;
    Ok((machine, x))
}
