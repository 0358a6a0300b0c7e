//! Steady-state initialization: AC power flow, DC grid power flow,
//! sequential AC/DC coupling through the converter losses, and the
//! operating point of the AC-line emulation controller.

mod ac;
mod dc;
mod losses;
mod sequential;

pub use ac::{solve_ac_powerflow, AcOptions, AcSolution, BusInjection, GeneratorDispatch, LoadModel, SlackModel};
pub use dc::{solve_dc_network, DcOptions, DcSolution};
pub use losses::{ConverterDirection, ConverterLossModel};
pub use sequential::{acle_operating_point, sequential_acdc_powerflow, AcleOperatingPoint, PowerFlowCase, PowerFlowOptions};

use std::fmt::Write as _;

use num_complex::Complex64;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorOutput {
    pub bus: usize,
    pub p_mw: f64,
    pub q_mvar: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchFlow {
    pub circuit_id: String,
    pub from: usize,
    pub to: usize,
    pub p_from_mw: f64,
    pub q_from_mvar: f64,
    pub p_to_mw: f64,
    pub q_to_mvar: f64,
}

/// Converter quantities at a solved operating point, per unit on the
/// converter base. `p_s` and `q_s` are injections into the AC grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ConverterOperatingPoint {
    pub name: String,
    pub ac_bus: usize,
    pub dc_bus: usize,
    pub u_s: f64,
    pub delta_s: f64,
    pub p_s: f64,
    pub q_s: f64,
    pub p_c: f64,
    pub p_loss: f64,
    pub p_dc: f64,
    pub i_s: f64,
    pub i_d: f64,
    pub i_q: f64,
    pub u_dc: f64,
}

impl ConverterOperatingPoint {
    /// Converter power balance residual `p_c + p_loss + p_dc`.
    pub fn balance_residual(&self) -> f64 {
        self.p_c + self.p_loss + self.p_dc
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowSolution {
    pub s_base_mva: f64,
    pub bus_ids: Vec<usize>,
    pub v: Vec<Complex64>,
    /// Load demand per bus at the solved voltages (MW + jMVAr).
    pub s_load: Vec<Complex64>,
    pub generators: Vec<GeneratorOutput>,
    pub branch_flows: Vec<BranchFlow>,
    pub converters: Vec<ConverterOperatingPoint>,
    pub dc: Option<DcSolution>,
    pub freq_deviation: f64,
    pub ac_iterations: usize,
    pub outer_iterations: usize,
    pub ac_mismatch: f64,
}

impl PowerFlowSolution {
    pub fn bus_index(&self, id: usize) -> Result<usize> {
        self.bus_ids
            .iter()
            .position(|&b| b == id)
            .ok_or_else(|| Error::data(format!("unknown bus {id}")))
    }

    pub fn voltage(&self, id: usize) -> Result<Complex64> {
        Ok(self.v[self.bus_index(id)?])
    }

    pub fn branch_flow(&self, circuit_id: &str) -> Result<&BranchFlow> {
        self.branch_flows
            .iter()
            .find(|b| b.circuit_id == circuit_id)
            .ok_or_else(|| Error::data(format!("unknown circuit {circuit_id}")))
    }

    pub fn converter(&self, name: &str) -> Result<&ConverterOperatingPoint> {
        self.converters
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::data(format!("unknown converter {name}")))
    }

    pub fn generator(&self, bus: usize) -> Result<&GeneratorOutput> {
        self.generators
            .iter()
            .find(|g| g.bus == bus)
            .ok_or_else(|| Error::data(format!("no generator at bus {bus}")))
    }

    /// Operating point as three CSV tables (buses, branches, converters)
    /// separated by blank lines.
    pub fn to_csv(&self, converter_mva: &[f64]) -> String {
        let mut out = String::from("bus,v_pu,angle_deg,p_load_mw,q_load_mvar\n");
        for (i, id) in self.bus_ids.iter().enumerate() {
            let _ = writeln!(
                out,
                "{id},{:.8},{:.6},{:.4},{:.4}",
                self.v[i].norm(),
                self.v[i].arg().to_degrees(),
                self.s_load[i].re,
                self.s_load[i].im
            );
        }
        out.push_str("\ncircuit,from,to,p_from_mw,q_from_mvar,p_to_mw,q_to_mvar\n");
        for b in &self.branch_flows {
            let _ = writeln!(
                out,
                "{},{},{},{:.4},{:.4},{:.4},{:.4}",
                b.circuit_id, b.from, b.to, b.p_from_mw, b.q_from_mvar, b.p_to_mw, b.q_to_mvar
            );
        }
        out.push_str("\nconverter,ac_bus,dc_bus,p_s_mw,q_s_mvar,p_c_pu,p_loss_pu,p_dc_pu,i_s_pu,u_s_pu,u_dc_pu\n");
        for (k, c) in self.converters.iter().enumerate() {
            let mva = converter_mva.get(k).copied().unwrap_or(f64::NAN);
            let _ = writeln!(
                out,
                "{},{},{},{:.4},{:.4},{:.10},{:.10},{:.10},{:.8},{:.8},{:.8}",
                c.name,
                c.ac_bus,
                c.dc_bus,
                c.p_s * mva,
                c.q_s * mva,
                c.p_c,
                c.p_loss,
                c.p_dc,
                c.i_s,
                c.u_s,
                c.u_dc
            );
        }
        out
    }
}
