//! AC-line emulation: the active-power setpoint of one converter follows the
//! filtered angle difference between the two converter PCCs,
//! `p_ref = p_ini - K / (1 + sT) * (d_delta_1 - d_delta_2)`, where the
//! increments are taken from the initial operating point.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// PCC voltage below which the angle measurement is held.
pub const MIN_MEASURABLE_VOLTAGE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcleMode {
    ConstantP,
    AcLineEmulation,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcleSettings {
    pub mode: AcleMode,
    /// Constant term of the setpoint (pu converter base, injection sign).
    pub p_cons: f64,
    /// Gain (pu/rad on the converter base).
    pub k: f64,
    /// Filter time constant (s); zero disables the filter.
    pub t: f64,
    /// Converter active-power limit (pu).
    pub p_max: f64,
}

impl AcleSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.k >= 0.0) || !self.k.is_finite() {
            return Err(Error::data("emulation gain must be finite and non-negative"));
        }
        if !(self.t >= 0.0) {
            return Err(Error::data("filter time constant must be non-negative"));
        }
        if !(self.p_max > 0.0) {
            return Err(Error::data("active-power limit must be positive"));
        }
        Ok(())
    }

    /// Gain that actually acts (zero in constant-power mode).
    pub fn effective_gain(&self) -> f64 {
        match self.mode {
            AcleMode::ConstantP => 0.0,
            AcleMode::AcLineEmulation => self.k,
        }
    }

    /// Equivalent series reactance emulated by the link (pu system base).
    pub fn equivalent_reactance(&self, s_sys_mva: f64, s_conv_mva: f64) -> f64 {
        s_sys_mva / (self.k * s_conv_mva)
    }
}

/// Gain on the converter base for an emulated reactance `x_hvdc` on the
/// system base.
pub fn gain_from_reactance(x_hvdc: f64, s_sys_mva: f64, s_conv_mva: f64) -> Result<f64> {
    if x_hvdc == 0.0 || !x_hvdc.is_finite() {
        return Err(Error::data("emulated reactance must be finite and non-zero"));
    }
    if !(s_sys_mva > 0.0 && s_conv_mva > 0.0) {
        return Err(Error::data("base powers must be positive"));
    }
    Ok(1.0 / x_hvdc * s_sys_mva / s_conv_mva)
}

/// Incremental, unwrapped angle of one PCC with hold on loss of voltage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleMeter {
    /// Last raw angle accepted (rad, in (-pi, pi]).
    last_raw: f64,
    /// Unwrapped angle minus the initial angle.
    increment: f64,
    pub held: bool,
}

impl AngleMeter {
    pub fn new(v0: Complex64) -> Self {
        AngleMeter {
            last_raw: v0.arg(),
            increment: 0.0,
            held: false,
        }
    }

    pub fn increment(&self) -> f64 {
        self.increment
    }

    /// Updates with a new voltage sample and returns the increment.
    pub fn update(&mut self, v: Complex64) -> f64 {
        if v.norm() < MIN_MEASURABLE_VOLTAGE {
            self.held = true;
            return self.increment;
        }
        self.held = false;
        let raw = v.arg();
        let mut step = raw - self.last_raw;
        if step > PI {
            step -= 2.0 * PI;
        } else if step < -PI {
            step += 2.0 * PI;
        }
        self.increment += step;
        self.last_raw = raw;
        self.increment
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcleState {
    pub settings: AcleSettings,
    /// Initial setpoint `p_cons - K * (delta_1 - delta_2)` at the operating point.
    pub p_ini: f64,
    pub delta0: [f64; 2],
    pub meters: [AngleMeter; 2],
    /// Filter output.
    pub y: f64,
    /// Filter input at the last sample.
    pub u: f64,
}

impl AcleState {
    pub fn angle_difference(&self) -> f64 {
        self.meters[0].increment() - self.meters[1].increment()
    }

    pub fn p_ref(&self) -> f64 {
        (self.p_ini - self.y).clamp(-self.settings.p_max, self.settings.p_max)
    }

    pub fn p_ref_unclamped(&self) -> f64 {
        self.p_ini - self.y
    }

    pub fn measurement_held(&self) -> bool {
        self.meters[0].held || self.meters[1].held
    }

    /// Samples both PCC voltages and advances the filter by `dt`. Returns the
    /// new setpoint.
    pub fn update(&mut self, v1: Complex64, v2: Complex64, dt: f64) -> f64 {
        self.meters[0].update(v1);
        self.meters[1].update(v2);
        let k = self.settings.effective_gain();
        let u_new = k * self.angle_difference();
        self.y = filter_step(self.y, self.u, u_new, self.settings.t, dt);
        self.u = u_new;
        self.p_ref()
    }

    /// Setpoint the controller would hold if it advanced by `h` to the given
    /// voltages, leaving the state untouched. Used inside an integration step.
    pub fn preview(&self, v1: Complex64, v2: Complex64, h: f64) -> f64 {
        let mut s = *self;
        s.update(v1, v2, h)
    }
}

/// One trapezoidal step of `T y' = u - y`. With `T = 0` the output is the input.
pub fn filter_step(y: f64, u_old: f64, u_new: f64, t: f64, dt: f64) -> f64 {
    if t == 0.0 {
        return u_new;
    }
    (y * (2.0 * t - dt) + dt * (u_old + u_new)) / (2.0 * t + dt)
}

/// Controller state at an operating point with PCC voltages `v1`, `v2` and
/// converter setpoint `p_s1` (pu, injection sign).
pub fn init_acle(settings: &AcleSettings, v1: Complex64, v2: Complex64, p_s1: f64) -> Result<AcleState> {
    settings.validate()?;
    let k = settings.effective_gain();
    let d1 = v1.arg();
    let d2 = v2.arg();
    // principal difference, so wrapping of the individual angles does not matter
    let p_ini = settings.p_cons - k * (v1 * v2.conj()).arg();
    if (p_ini - p_s1).abs() > 1e-6 {
        return Err(Error::init(format!(
            "operating point is not consistent with the emulation law: converter at {p_s1:.6} pu, law gives {p_ini:.6} pu"
        )));
    }
    if p_ini.abs() > settings.p_max {
        return Err(Error::init(format!("initial setpoint {p_ini:.4} pu exceeds the converter limit")));
    }
    Ok(AcleState {
        settings: *settings,
        p_ini,
        delta0: [d1, d2],
        meters: [AngleMeter::new(v1), AngleMeter::new(v2)],
        y: 0.0,
        u: 0.0,
    })
}
