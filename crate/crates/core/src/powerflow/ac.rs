//! Newton-Raphson AC power flow in polar coordinates with an analytic Jacobian.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::network::{AdmittanceMatrix, BusKind, NetworkModel, LOAD_RAMP_VOLTAGE};

/// Active-power schedule of a generator at a slack or PV bus.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorDispatch {
    pub bus: usize,
    pub p_mw: f64,
}

/// Fixed complex power injection (pu system base), e.g. a converter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BusInjection {
    pub bus: usize,
    pub p: f64,
    pub q: f64,
}

/// Static load representation used by the power flow.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum LoadModel {
    #[default]
    ConstantPower,
    /// Loads frozen at voltages `v0` (one per network load): active power
    /// proportional to V, reactive power proportional to V^2.
    Frozen { v0: Vec<f64> },
}

/// How the active-power imbalance is shared among generators.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum SlackModel {
    /// The slack bus generator takes the whole imbalance.
    #[default]
    Single,
    /// Every generator follows `p_mw - gain * df` (MW per pu frequency,
    /// one gain per dispatch entry); the frequency deviation `df` is solved for.
    Distributed { gains_mw: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub loads: LoadModel,
    pub slack: SlackModel,
}

impl Default for AcOptions {
    fn default() -> Self {
        AcOptions {
            tolerance: 1e-10,
            max_iterations: 30,
            loads: LoadModel::ConstantPower,
            slack: SlackModel::Single,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcSolution {
    pub v: Vec<Complex64>,
    /// Net complex injection at each bus computed from the solved voltages.
    pub s_bus: Vec<Complex64>,
    /// Complex power drawn by the loads at each bus.
    pub s_load: Vec<Complex64>,
    /// Frequency deviation for distributed slack (pu), zero otherwise.
    pub freq_deviation: f64,
    pub iterations: usize,
    pub mismatch: f64,
}

struct Layout {
    /// buses whose angle is unknown
    theta: Vec<usize>,
    /// buses whose magnitude is unknown
    vmag: Vec<usize>,
    /// buses with an active-power equation
    p_rows: Vec<usize>,
    distributed: bool,
}

impl Layout {
    fn unknowns(&self) -> usize {
        self.theta.len() + self.vmag.len() + self.distributed as usize
    }
}

/// Load power per bus and its derivative with respect to the bus voltage magnitude.
fn load_power(network: &NetworkModel, index: &[usize], model: &LoadModel, vm: &[f64]) -> (Vec<Complex64>, Vec<Complex64>) {
    let n = network.bus_count();
    let base = network.s_base_mva;
    let mut s = vec![Complex64::default(); n];
    let mut ds = vec![Complex64::default(); n];
    for (k, load) in network.loads.iter().enumerate() {
        let i = index[k];
        let s0 = Complex64::new(load.p_mw, load.q_mvar) / base;
        match model {
            LoadModel::ConstantPower => s[i] += s0,
            LoadModel::Frozen { v0 } => {
                let r = vm[i] / v0[k];
                // below the ramp voltage the current falls linearly, so P ~ V^2
                let (p, dp) = if vm[i] >= LOAD_RAMP_VOLTAGE {
                    (s0.re * r, s0.re / v0[k])
                } else {
                    let g = s0.re / (v0[k] * LOAD_RAMP_VOLTAGE);
                    (g * vm[i] * vm[i], 2.0 * g * vm[i])
                };
                s[i] += Complex64::new(p, s0.im * r * r);
                ds[i] += Complex64::new(dp, 2.0 * s0.im * r / v0[k]);
            }
        }
    }
    (s, ds)
}

/// Solves the AC power flow. `guess` gives starting voltages (flat start with
/// setpoint magnitudes otherwise).
pub fn solve_ac_powerflow(
    network: &NetworkModel,
    dispatch: &[GeneratorDispatch],
    injections: &[BusInjection],
    opts: &AcOptions,
    guess: Option<&[Complex64]>,
) -> Result<AcSolution> {
    let ybus = network.build_ybus()?;
    solve_with_ybus(network, &ybus, dispatch, injections, opts, guess)
}

pub(crate) fn solve_with_ybus(
    network: &NetworkModel,
    ybus: &AdmittanceMatrix,
    dispatch: &[GeneratorDispatch],
    injections: &[BusInjection],
    opts: &AcOptions,
    guess: Option<&[Complex64]>,
) -> Result<AcSolution> {
    let n = network.bus_count();
    let base = network.s_base_mva;
    let slack: Vec<usize> = (0..n).filter(|&i| network.buses[i].kind == BusKind::Slack).collect();
    if slack.len() != 1 {
        return Err(Error::data(format!("power flow needs exactly one slack bus, found {}", slack.len())));
    }
    let slack = slack[0];

    let load_index: Vec<usize> = network
        .loads
        .iter()
        .map(|l| network.bus_index(l.bus))
        .collect::<Result<_>>()?;
    if let LoadModel::Frozen { v0 } = &opts.loads {
        if v0.len() != network.loads.len() || v0.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::data("frozen load model needs one positive voltage per load"));
        }
    }

    // scheduled generation and droop gains per bus (pu)
    let mut p_gen = vec![0.0; n];
    let mut gain = vec![0.0; n];
    let gains_mw = match &opts.slack {
        SlackModel::Single => None,
        SlackModel::Distributed { gains_mw } => {
            if gains_mw.len() != dispatch.len() {
                return Err(Error::data("distributed slack needs one gain per generator"));
            }
            if gains_mw.iter().sum::<f64>() <= 0.0 {
                return Err(Error::data("distributed slack needs a positive total gain"));
            }
            Some(gains_mw)
        }
    };
    for (k, g) in dispatch.iter().enumerate() {
        let i = network.bus_index(g.bus)?;
        if network.buses[i].kind == BusKind::Pq {
            return Err(Error::data(format!("generator at PQ bus {}", g.bus)));
        }
        p_gen[i] += g.p_mw / base;
        if let Some(gm) = gains_mw {
            gain[i] += gm[k] / base;
        }
    }
    let mut s_inj = vec![Complex64::default(); n];
    for inj in injections {
        s_inj[network.bus_index(inj.bus)?] += Complex64::new(inj.p, inj.q);
    }

    let layout = Layout {
        theta: (0..n).filter(|&i| i != slack).collect(),
        vmag: (0..n).filter(|&i| network.buses[i].kind == BusKind::Pq).collect(),
        p_rows: if gains_mw.is_some() {
            (0..n).collect()
        } else {
            (0..n).filter(|&i| i != slack).collect()
        },
        distributed: gains_mw.is_some(),
    };

    let mut vm: Vec<f64> = network.buses.iter().map(|b| b.v_mag).collect();
    let mut va: Vec<f64> = network.buses.iter().map(|b| if b.kind == BusKind::Slack { b.v_ang } else { 0.0 }).collect();
    if let Some(g) = guess {
        for &i in &layout.theta {
            va[i] = g[i].arg();
        }
        for &i in &layout.vmag {
            vm[i] = g[i].norm();
        }
    }
    let mut df = 0.0;

    let y = ybus.to_dense();
    let m = layout.unknowns();
    let mut iterations = 0;
    loop {
        let v: Vec<Complex64> = (0..n).map(|i| Complex64::from_polar(vm[i], va[i])).collect();
        let i_bus = ybus.mul_vec(&v);
        let s_calc: Vec<Complex64> = (0..n).map(|i| v[i] * i_bus[i].conj()).collect();
        let (s_load, ds_load) = load_power(network, &load_index, &opts.loads, &vm);
        let s_spec: Vec<Complex64> = (0..n)
            .map(|i| Complex64::new(p_gen[i] - gain[i] * df, 0.0) - s_load[i] + s_inj[i])
            .collect();

        let mut f = DVector::zeros(m);
        for (r, &i) in layout.p_rows.iter().enumerate() {
            f[r] = s_calc[i].re - s_spec[i].re;
        }
        let np = layout.p_rows.len();
        for (r, &i) in layout.vmag.iter().enumerate() {
            f[np + r] = s_calc[i].im - s_spec[i].im;
        }
        let mismatch = f.amax();
        if !mismatch.is_finite() {
            return Err(Error::NonConvergence {
                solver: "AC power flow",
                iterations,
                residual: mismatch,
            });
        }
        if mismatch < opts.tolerance {
            return Ok(AcSolution {
                v,
                s_bus: s_calc,
                s_load,
                freq_deviation: df,
                iterations,
                mismatch,
            });
        }
        if iterations >= opts.max_iterations {
            return Err(Error::NonConvergence {
                solver: "AC power flow",
                iterations,
                residual: mismatch,
            });
        }

        let jac = jacobian(&y, &vm, &va, &s_calc, &ds_load, &gain, &layout);
        let dx = jac.lu().solve(&f).ok_or(Error::Singular("AC power-flow Jacobian"))?;
        for (c, &i) in layout.theta.iter().enumerate() {
            va[i] -= dx[c];
        }
        let nt = layout.theta.len();
        for (c, &i) in layout.vmag.iter().enumerate() {
            vm[i] -= dx[nt + c];
        }
        if layout.distributed {
            df -= dx[m - 1];
        }
        iterations += 1;
    }
}

fn jacobian(
    y: &DMatrix<Complex64>,
    vm: &[f64],
    va: &[f64],
    s: &[Complex64],
    ds_load: &[Complex64],
    gain: &[f64],
    layout: &Layout,
) -> DMatrix<f64> {
    let n = vm.len();
    let m = layout.unknowns();
    // column position of each bus's angle / magnitude unknown
    let mut col_t = vec![None; n];
    let mut col_v = vec![None; n];
    for (c, &i) in layout.theta.iter().enumerate() {
        col_t[i] = Some(c);
    }
    for (c, &i) in layout.vmag.iter().enumerate() {
        col_v[i] = Some(layout.theta.len() + c);
    }
    let np = layout.p_rows.len();
    let mut jac = DMatrix::zeros(m, m);

    let mut fill = |row: usize, i: usize, reactive: bool| {
        for j in 0..n {
            let yij = y[(i, j)];
            if j != i && yij == Complex64::default() {
                continue;
            }
            let (g, b) = (yij.re, yij.im);
            if j == i {
                let (p, q) = (s[i].re, s[i].im);
                if let Some(c) = col_t[i] {
                    jac[(row, c)] = if reactive { p - g * vm[i] * vm[i] } else { -q - b * vm[i] * vm[i] };
                }
                if let Some(c) = col_v[i] {
                    // load derivative enters with + because the residual is calc - spec
                    jac[(row, c)] = if reactive {
                        q / vm[i] - b * vm[i] + ds_load[i].im
                    } else {
                        p / vm[i] + g * vm[i] + ds_load[i].re
                    };
                }
            } else {
                let t = va[i] - va[j];
                let (sn, cs) = t.sin_cos();
                if let Some(c) = col_t[j] {
                    jac[(row, c)] = if reactive {
                        -vm[i] * vm[j] * (g * cs + b * sn)
                    } else {
                        vm[i] * vm[j] * (g * sn - b * cs)
                    };
                }
                if let Some(c) = col_v[j] {
                    jac[(row, c)] = if reactive { vm[i] * (g * sn - b * cs) } else { vm[i] * (g * cs + b * sn) };
                }
            }
        }
    };
    for (r, &i) in layout.p_rows.iter().enumerate() {
        fill(r, i, false);
    }
    for (r, &i) in layout.vmag.iter().enumerate() {
        fill(np + r, i, true);
    }
    if layout.distributed {
        for (r, &i) in layout.p_rows.iter().enumerate() {
            jac[(r, m - 1)] = gain[i];
        }
    }
    jac
}
