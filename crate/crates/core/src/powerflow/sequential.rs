//! Sequential AC/DC power flow and the operating point of the AC-line
//! emulation controller.

use num_complex::Complex64;

use super::ac::{solve_with_ybus, AcOptions, AcSolution, BusInjection, GeneratorDispatch};
use super::dc::{solve_dc_network, DcOptions, DcSolution};
use super::{BranchFlow, ConverterOperatingPoint, GeneratorOutput, PowerFlowSolution};
use crate::error::{Error, Result};
use crate::network::{BusKind, NetworkModel};
use crate::powerflow::ConverterDirection;
use crate::vsc::{converter_power, DAxisControl, HvdcLink, QAxisControl, VscParams};

/// Everything the steady-state solution needs.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowCase {
    pub network: NetworkModel,
    pub dispatch: Vec<GeneratorDispatch>,
    pub hvdc: Option<HvdcLink>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowOptions {
    pub ac: AcOptions,
    pub dc: DcOptions,
    /// Convergence threshold on the DC-slack converter's AC power (pu).
    pub tolerance: f64,
    pub max_outer_iterations: usize,
    /// Relaxation factor applied to the slack-converter power update.
    pub damping: f64,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        PowerFlowOptions {
            ac: AcOptions::default(),
            dc: DcOptions::default(),
            tolerance: 1e-10,
            max_outer_iterations: 20,
            damping: 0.7,
        }
    }
}

impl PowerFlowCase {
    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        let mut seen = Vec::new();
        for g in &self.dispatch {
            if seen.contains(&g.bus) {
                return Err(Error::data(format!("more than one generator at bus {}", g.bus)));
            }
            seen.push(g.bus);
        }
        if let Some(link) = &self.hvdc {
            link.validate()?;
            for c in &link.converters {
                let i = self.network.bus_index(c.ac_bus)?;
                if c.q_control == QAxisControl::AcVoltage && self.network.buses[i].kind != BusKind::Pq {
                    return Err(Error::data(format!(
                        "{}: AC-voltage control at a bus that already regulates voltage",
                        c.name
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Sequential AC/DC power flow.
pub fn sequential_acdc_powerflow(case: &PowerFlowCase, opts: &PowerFlowOptions) -> Result<PowerFlowSolution> {
    case.validate()?;
    solve_sequential(case, opts, None)
}

/// Network as seen by the AC power flow: PCCs of AC-voltage-controlling
/// converters become PV buses.
fn ac_view(case: &PowerFlowCase) -> Result<NetworkModel> {
    let mut net = case.network.clone();
    if let Some(link) = &case.hvdc {
        for c in link.converters.iter().filter(|c| c.q_control == QAxisControl::AcVoltage) {
            let i = net.bus_index(c.ac_bus)?;
            net.buses[i].kind = BusKind::Pv;
            net.buses[i].v_mag = c.u_ac_ref;
        }
    }
    Ok(net)
}

/// AC-side active power of a converter whose DC injection is `p_dc`, for
/// reactive power `q` and PCC voltage `u`.
fn slack_converter_power(c: &VscParams, p_dc: f64, q: f64, u: f64) -> Result<f64> {
    let mut p = -p_dc;
    for _ in 0..50 {
        let i = (p * p + q * q).sqrt() / u;
        let dir = ConverterDirection::from_injection(p);
        let f = p + c.r_s * i * i + c.losses.losses(i, dir) + p_dc;
        let di = if i > 0.0 { p / (u * u * i) } else { 0.0 };
        let df = 1.0 + (2.0 * c.r_s * i + c.losses.d_losses(i, dir)) * di;
        let step = f / df;
        p -= step;
        if step.abs() < 1e-15 {
            return Ok(p);
        }
    }
    Err(Error::NonConvergence {
        solver: "converter power balance",
        iterations: 50,
        residual: f64::NAN,
    })
}

pub(crate) fn solve_sequential(
    case: &PowerFlowCase,
    opts: &PowerFlowOptions,
    guess: Option<&[Complex64]>,
) -> Result<PowerFlowSolution> {
    let net = ac_view(case)?;
    let ybus = net.build_ybus()?;
    let base = net.s_base_mva;

    let Some(link) = &case.hvdc else {
        let ac = solve_with_ybus(&net, &ybus, &case.dispatch, &[], &opts.ac, guess)?;
        return assemble(case, &net, ac, Vec::new(), None, 0);
    };

    let slack = link.dc_slack();
    let conv = &link.converters;
    let grid = &link.grid;
    let scale = |c: &VscParams| c.rating_mva / base;
    let dc_scale = |c: &VscParams| c.rating_mva / grid.p_base_mw;

    // first estimate: lossless transfer
    let mut p_slack = -conv
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != slack)
        .map(|(_, c)| c.p_ref * c.rating_mva)
        .sum::<f64>()
        / conv[slack].rating_mva;

    let mut v_guess: Option<Vec<Complex64>> = guess.map(|g| g.to_vec());
    let mut ac_iterations = 0;
    for outer in 0..opts.max_outer_iterations {
        let injections: Vec<BusInjection> = conv
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let p = if k == slack { p_slack } else { c.p_ref };
                let q = if c.q_control == QAxisControl::ReactivePower { c.q_ref } else { 0.0 };
                BusInjection {
                    bus: c.ac_bus,
                    p: p * scale(c),
                    q: q * scale(c),
                }
            })
            .collect();
        let ac = solve_with_ybus(&net, &ybus, &case.dispatch, &injections, &opts.ac, v_guess.as_deref())?;
        ac_iterations += ac.iterations;

        let points = converter_points(case, &net, link, &ac, &injections, p_slack)?;
        let mut p_dc_bus = vec![0.0; grid.buses.len()];
        for (k, (c, pt)) in conv.iter().zip(&points).enumerate() {
            if k != slack {
                p_dc_bus[grid.bus_index(c.dc_bus)?] += pt.p_dc * dc_scale(c);
            }
        }
        let slack_bus = grid.bus_index(conv[slack].dc_bus)?;
        let dc = solve_dc_network(grid, slack_bus, conv[slack].u_dc_ref, &p_dc_bus, &opts.dc)?;
        let p_dc_slack = (dc.p_inj[slack_bus] - p_dc_bus[slack_bus]) / dc_scale(&conv[slack]);
        let sp = &points[slack];
        let p_new = slack_converter_power(&conv[slack], p_dc_slack, sp.q_s, sp.u_s)?;

        let change = p_new - p_slack;
        if change.abs() < opts.tolerance {
            let mut points = points;
            for (c, pt) in conv.iter().zip(points.iter_mut()) {
                pt.u_dc = dc.u[grid.bus_index(c.dc_bus)?];
            }
            return assemble(case, &net, ac, points, Some(dc), outer + 1).map(|mut s| {
                s.ac_iterations = ac_iterations;
                s
            });
        }
        p_slack += if outer == 0 { change } else { opts.damping * change };
        v_guess = Some(ac.v);
    }
    Err(Error::NonConvergence {
        solver: "sequential AC/DC power flow",
        iterations: opts.max_outer_iterations,
        residual: f64::NAN,
    })
}

fn converter_points(
    case: &PowerFlowCase,
    net: &NetworkModel,
    link: &HvdcLink,
    ac: &AcSolution,
    injections: &[BusInjection],
    p_slack: f64,
) -> Result<Vec<ConverterOperatingPoint>> {
    let base = net.s_base_mva;
    let slack = link.dc_slack();
    link.converters
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let i = net.bus_index(c.ac_bus)?;
            let v = ac.v[i];
            let u_s = v.norm();
            let p_s = if k == slack { p_slack } else { c.p_ref };
            let q_s = match c.q_control {
                QAxisControl::ReactivePower => c.q_ref,
                QAxisControl::AcVoltage => {
                    // whatever the PV bus supplies beyond loads and other injections
                    let others: f64 = injections
                        .iter()
                        .enumerate()
                        .filter(|&(j, inj)| j != k && inj.bus == c.ac_bus)
                        .map(|(_, inj)| inj.q)
                        .sum();
                    if case.dispatch.iter().any(|g| g.bus == c.ac_bus) {
                        return Err(Error::data(format!("{}: generator shares the regulated PCC", c.name)));
                    }
                    (ac.s_bus[i].im + ac.s_load[i].im - others) * base / c.rating_mva
                }
            };
            if !(u_s > 0.0) {
                return Err(Error::data(format!("{}: PCC voltage collapsed", c.name)));
            }
            let current = Complex64::new(p_s / u_s, -q_s / u_s);
            let pw = converter_power(c, current, u_s);
            Ok(ConverterOperatingPoint {
                name: c.name.clone(),
                ac_bus: c.ac_bus,
                dc_bus: c.dc_bus,
                u_s,
                delta_s: v.arg(),
                p_s: pw.p_s,
                q_s: pw.q_s,
                p_c: pw.p_c,
                p_loss: pw.p_loss,
                p_dc: pw.p_dc,
                i_s: pw.i_s,
                i_d: current.re,
                i_q: current.im,
                u_dc: f64::NAN,
            })
        })
        .collect()
}

fn assemble(
    case: &PowerFlowCase,
    net: &NetworkModel,
    ac: AcSolution,
    converters: Vec<ConverterOperatingPoint>,
    dc: Option<DcSolution>,
    outer_iterations: usize,
) -> Result<PowerFlowSolution> {
    let base = net.s_base_mva;
    let mut s_inj = vec![Complex64::default(); net.bus_count()];
    if let Some(link) = &case.hvdc {
        for (c, pt) in link.converters.iter().zip(&converters) {
            s_inj[net.bus_index(c.ac_bus)?] += Complex64::new(pt.p_s, pt.q_s) * (c.rating_mva / base);
        }
    }
    let generators = case
        .dispatch
        .iter()
        .map(|g| {
            let i = net.bus_index(g.bus)?;
            let s = (ac.s_bus[i] + ac.s_load[i] - s_inj[i]) * base;
            Ok(GeneratorOutput {
                bus: g.bus,
                p_mw: s.re,
                q_mvar: s.im,
            })
        })
        .collect::<Result<_>>()?;
    let branch_flows = case
        .network
        .branches
        .iter()
        .map(|br| {
            let f = net.bus_index(br.from)?;
            let t = net.bus_index(br.to)?;
            let (sf, st) = if br.in_service {
                (
                    br.from_end_power(ac.v[f], ac.v[t]) * base,
                    br.to_end_power(ac.v[f], ac.v[t]) * base,
                )
            } else {
                (Complex64::default(), Complex64::default())
            };
            Ok(BranchFlow {
                circuit_id: br.circuit_id.clone(),
                from: br.from,
                to: br.to,
                p_from_mw: sf.re,
                q_from_mvar: sf.im,
                p_to_mw: st.re,
                q_to_mvar: st.im,
            })
        })
        .collect::<Result<_>>()?;
    Ok(PowerFlowSolution {
        s_base_mva: base,
        bus_ids: net.buses.iter().map(|b| b.id).collect(),
        v: ac.v,
        s_load: ac.s_load.iter().map(|s| s * base).collect(),
        generators,
        branch_flows,
        converters,
        dc,
        freq_deviation: ac.freq_deviation,
        ac_iterations: ac.iterations,
        outer_iterations,
        ac_mismatch: ac.mismatch,
    })
}

/// Operating point consistent with the AC-line emulation law
/// `p_s = p_cons - K * (delta_pcc - delta_remote)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AcleOperatingPoint {
    pub solution: PowerFlowSolution,
    /// AC-side setpoint of the controlled converter (pu converter base).
    pub p_ini: f64,
    /// PCC angle difference (rad).
    pub angle_difference: f64,
    pub iterations: usize,
}

/// Solves the emulation fixed point jointly with the sequential power flow.
/// `controlled` is the active-power converter, `remote` the converter at the
/// other end whose PCC angle is subtracted.
pub fn acle_operating_point(
    case: &PowerFlowCase,
    controlled: usize,
    remote: usize,
    k: f64,
    p_cons: f64,
    opts: &PowerFlowOptions,
) -> Result<AcleOperatingPoint> {
    case.validate()?;
    let link = case
        .hvdc
        .as_ref()
        .ok_or_else(|| Error::data("AC-line emulation needs an HVDC link"))?;
    if controlled >= link.converters.len() || remote >= link.converters.len() || controlled == remote {
        return Err(Error::data("invalid converter pair for AC-line emulation"));
    }
    if link.converters[controlled].d_control != DAxisControl::ActivePower {
        return Err(Error::data(format!(
            "{} must be in active-power control for AC-line emulation",
            link.converters[controlled].name
        )));
    }
    if !(k >= 0.0) {
        return Err(Error::data("emulation gain must be non-negative"));
    }

    let mut work = case.clone();
    let mut evaluate = |p: f64, guess: Option<&[Complex64]>| -> Result<(PowerFlowSolution, f64)> {
        work.hvdc.as_mut().unwrap().converters[controlled].p_ref = p;
        let sol = solve_sequential(&work, opts, guess)?;
        let d = sol.converters[controlled].delta_s - sol.converters[remote].delta_s;
        // beyond 90 degrees the solution is on the unstable branch
        if d.abs() > std::f64::consts::FRAC_PI_2 {
            return Err(Error::data(format!("PCC angle difference {d:.3} rad is beyond the static limit")));
        }
        Ok((sol, d))
    };

    // The constant term alone may not be a feasible dispatch (e.g. zero
    // transfer on a heavily loaded corridor), so start from the first
    // feasible setpoint nearest to it.
    let p_max = link.converters[controlled].limits.p_max;
    let mut start = None;
    let mut first_err = None;
    for j in 0..=8 {
        let offsets: &[f64] = if j == 0 { &[0.0] } else { &[-1.0, 1.0] };
        for &sign in offsets {
            let p = p_cons + sign * p_max * j as f64 / 8.0;
            if p.abs() > p_max + 1e-12 {
                continue;
            }
            match evaluate(p, None) {
                Ok((sol, d)) => {
                    start = Some((p, sol, d));
                    break;
                }
                Err(e) => {
                    first_err.get_or_insert(e);
                }
            }
        }
        if start.is_some() {
            break;
        }
    }
    let (mut p_prev, sol0, d0) = match start {
        Some(s) => s,
        None => return Err(first_err.unwrap()),
    };
    let mut g_prev = p_prev - p_cons + k * d0;
    if k == 0.0 || g_prev.abs() < opts.tolerance {
        return Ok(AcleOperatingPoint {
            solution: sol0,
            p_ini: p_prev,
            angle_difference: d0,
            iterations: 0,
        });
    }
    // g(p) = p - p_cons + K * angle(p) increases with p. Secant steps kept
    // inside the converter limits and inside the sign bracket once one is
    // known (bisection otherwise); failed power flows backtrack towards the
    // last good point. The first step takes the fixed-point update.
    let mut lo: Option<f64> = None;
    let mut hi: Option<f64> = None;
    let note = |p: f64, g: f64, lo: &mut Option<f64>, hi: &mut Option<f64>| {
        if g < 0.0 {
            *lo = Some(lo.map_or(p, |l: f64| l.max(p)));
        } else {
            *hi = Some(hi.map_or(p, |h: f64| h.min(p)));
        }
    };
    note(p_prev, g_prev, &mut lo, &mut hi);
    let mut p = (p_cons - k * d0).clamp(-p_max, p_max);
    let mut guess = sol0.v.clone();
    let max_iterations = 60;
    for it in 1..=max_iterations {
        let mut tries = 0;
        let (sol, d) = loop {
            match evaluate(p, Some(&guess)) {
                Ok(r) => break r,
                Err(e) if tries >= 30 => return Err(e),
                Err(_) => {
                    tries += 1;
                    p = 0.5 * (p + p_prev);
                }
            }
        };
        let g = p - p_cons + k * d;
        if g.abs() < opts.tolerance {
            return Ok(AcleOperatingPoint {
                solution: sol,
                p_ini: p,
                angle_difference: d,
                iterations: it,
            });
        }
        note(p, g, &mut lo, &mut hi);
        if (g < 0.0 && p >= p_max) || (g > 0.0 && p <= -p_max) {
            return Err(Error::data(format!(
                "AC-line emulation law has no operating point within the converter limit (residual {g:.3e} at {p:.4} pu)"
            )));
        }
        let slope = (g - g_prev) / (p - p_prev);
        let mut next = if slope.is_finite() && slope > 0.0 { p - g / slope } else { p - g };
        next = next.clamp(-p_max, p_max);
        if let (Some(l), Some(h)) = (lo, hi) {
            if !(next > l.min(h) && next < l.max(h)) {
                next = 0.5 * (l + h);
            }
        }
        p_prev = p;
        g_prev = g;
        p = next;
        guess = sol.v;
    }
    Err(Error::NonConvergence {
        solver: "AC-line emulation operating point",
        iterations: max_iterations,
        residual: g_prev.abs(),
    })
}
