//! Algebraic network solution used at every dynamic step.
//!
//! The network matrix is augmented with device shunts (Norton admittances,
//! constant-admittance load parts and the linearised constant-current load
//! part) and factorised once per topology. Nonlinear injections are then
//! handled by fixed-point iteration on the factorised matrix.

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::AdmittanceMatrix;
use crate::error::{Error, Result};

/// Below this voltage (pu) constant-current loads ramp their current down
/// linearly to zero at zero voltage.
pub const LOAD_RAMP_VOLTAGE: f64 = 0.4;

/// Load frozen at an operating point: active part as a constant current
/// magnitude following the voltage phase, reactive part as a constant
/// admittance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrozenLoad {
    /// Position of the load bus.
    pub bus: usize,
    /// Active-power current magnitude (pu).
    pub i_p: f64,
    /// Conductance equal to the active part at the freezing voltage.
    pub g_lin: f64,
    /// Constant admittance of the reactive part.
    pub y_q: Complex64,
}

impl FrozenLoad {
    /// Freezes a load consuming `p + jq` (pu) at voltage `v0`.
    pub fn freeze(bus: usize, p: f64, q: f64, v0: Complex64) -> Self {
        let vm = v0.norm();
        FrozenLoad {
            bus,
            i_p: p / vm,
            g_lin: p / (vm * vm),
            y_q: Complex64::new(0.0, -q / (vm * vm)),
        }
    }

    fn ramp(vm: f64) -> f64 {
        if vm >= LOAD_RAMP_VOLTAGE {
            1.0
        } else {
            vm / LOAD_RAMP_VOLTAGE
        }
    }

    /// Current drawn by the active part at voltage `v`.
    pub fn active_current(&self, v: Complex64) -> Complex64 {
        let vm = v.norm();
        if vm == 0.0 {
            return Complex64::default();
        }
        v * (self.i_p * Self::ramp(vm) / vm)
    }

    /// Complex power consumed at voltage `v`.
    pub fn power(&self, v: Complex64) -> Complex64 {
        let i = self.active_current(v) + self.y_q * v;
        v * i.conj()
    }

    fn correction(&self, v: Complex64) -> Complex64 {
        v * self.g_lin - self.active_current(v)
    }
}

/// Current injection that is a fixed phasor in a frame aligned with the local
/// bus voltage (a converter behind an ideal PLL).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonlinearInjection {
    pub bus: usize,
    /// Injected current in the voltage-aligned frame (d = real, q = imaginary).
    pub dq: Complex64,
}

impl NonlinearInjection {
    pub fn current(&self, v: Complex64) -> Complex64 {
        let vm = v.norm();
        if vm < 1e-12 {
            self.dq
        } else {
            self.dq * (v / vm)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkSolveOptions {
    /// Convergence threshold on the change of nonlinear currents (pu).
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for NetworkSolveOptions {
    fn default() -> Self {
        NetworkSolveOptions {
            tolerance: 1e-10,
            max_iterations: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSolution {
    pub v: Vec<Complex64>,
    pub iterations: usize,
    /// Last change of the nonlinear currents.
    pub delta: f64,
}

/// Factorised augmented network for one topology.
#[derive(Debug, Clone)]
pub struct AlgebraicNetwork {
    y_aug: DMatrix<Complex64>,
    z: DMatrix<Complex64>,
    loads: Vec<FrozenLoad>,
}

impl AlgebraicNetwork {
    /// `shunts` are extra admittances to ground (device Norton admittances).
    pub fn new(ybus: &AdmittanceMatrix, shunts: &[(usize, Complex64)], loads: &[FrozenLoad]) -> Result<Self> {
        let mut y = ybus.to_dense();
        for &(i, ysh) in shunts {
            y[(i, i)] += ysh;
        }
        for l in loads {
            y[(l.bus, l.bus)] += l.y_q + l.g_lin;
        }
        let z = y
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::topology("network matrix is singular (floating subnetwork)"))?;
        if z.iter().any(|e| !e.re.is_finite() || !e.im.is_finite()) {
            return Err(Error::topology("network matrix is singular (floating subnetwork)"));
        }
        Ok(AlgebraicNetwork {
            y_aug: y,
            z,
            loads: loads.to_vec(),
        })
    }

    pub fn dimension(&self) -> usize {
        self.y_aug.nrows()
    }

    pub fn loads(&self) -> &[FrozenLoad] {
        &self.loads
    }

    /// Solves `Y_aug V = sources + c(V)` where `c` collects the nonlinear
    /// load corrections and the phase-following injections.
    pub fn solve(
        &self,
        sources: &[Complex64],
        injections: &[NonlinearInjection],
        guess: Option<&[Complex64]>,
        opts: &NetworkSolveOptions,
    ) -> Result<NetworkSolution> {
        let n = self.dimension();
        if sources.len() != n {
            return Err(Error::data(format!("expected {n} source currents, got {}", sources.len())));
        }
        let v_base = &self.z * nalgebra::DVector::from_column_slice(sources);

        // buses carrying nonlinear currents
        let mut nl: Vec<usize> = self
            .loads
            .iter()
            .map(|l| l.bus)
            .chain(injections.iter().map(|i| i.bus))
            .collect();
        nl.sort_unstable();
        nl.dedup();
        let slot = |bus: usize| nl.binary_search(&bus).unwrap();

        let corrections = |v_nl: &[Complex64], out: &mut [Complex64]| {
            out.iter_mut().for_each(|c| *c = Complex64::default());
            for l in &self.loads {
                let k = slot(l.bus);
                out[k] += l.correction(v_nl[k]);
            }
            for inj in injections {
                let k = slot(inj.bus);
                out[k] += inj.current(v_nl[k]);
            }
        };

        let m = nl.len();
        let mut v_nl: Vec<Complex64> = match guess {
            Some(g) => nl.iter().map(|&b| g[b]).collect(),
            None => nl.iter().map(|&b| v_base[b]).collect(),
        };
        let mut c = vec![Complex64::default(); m];
        let mut c_new = vec![Complex64::default(); m];
        corrections(&v_nl, &mut c);

        let mut iterations = 0;
        let mut delta = 0.0;
        if m > 0 {
            loop {
                for (a, &bi) in nl.iter().enumerate() {
                    let mut acc = v_base[bi];
                    for (b, &bj) in nl.iter().enumerate() {
                        acc += self.z[(bi, bj)] * c[b];
                    }
                    v_nl[a] = acc;
                }
                corrections(&v_nl, &mut c_new);
                iterations += 1;
                delta = c.iter().zip(&c_new).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
                std::mem::swap(&mut c, &mut c_new);
                if !delta.is_finite() {
                    break;
                }
                if delta < opts.tolerance {
                    break;
                }
                if iterations >= opts.max_iterations {
                    return Err(Error::NonConvergence {
                        solver: "network solution",
                        iterations,
                        residual: delta,
                    });
                }
            }
            if !delta.is_finite() {
                return Err(Error::NonConvergence {
                    solver: "network solution",
                    iterations,
                    residual: delta,
                });
            }
        }

        let mut v: Vec<Complex64> = v_base.iter().copied().collect();
        for (b, &bj) in nl.iter().enumerate() {
            if c[b] == Complex64::default() {
                continue;
            }
            for (i, vi) in v.iter_mut().enumerate() {
                *vi += self.z[(i, bj)] * c[b];
            }
        }
        Ok(NetworkSolution { v, iterations, delta })
    }

    /// Largest nodal current mismatch `|Y_aug V - sources - c(V)|`.
    pub fn residual(&self, v: &[Complex64], sources: &[Complex64], injections: &[NonlinearInjection]) -> f64 {
        let n = self.dimension();
        let mut r: Vec<Complex64> = (0..n)
            .map(|i| (0..n).map(|j| self.y_aug[(i, j)] * v[j]).sum::<Complex64>() - sources[i])
            .collect();
        for l in &self.loads {
            r[l.bus] -= l.correction(v[l.bus]);
        }
        for inj in injections {
            r[inj.bus] -= inj.current(v[inj.bus]);
        }
        r.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Branch, Bus, BusKind, NetworkModel};

    fn two_bus() -> AdmittanceMatrix {
        let bus = |id| Bus {
            id,
            kind: BusKind::Pq,
            base_kv: 220.0,
            v_mag: 1.0,
            v_ang: 0.0,
            shunt_g: 0.0,
            shunt_b: 0.0,
        };
        NetworkModel::new(
            100.0,
            vec![bus(1), bus(2)],
            vec![Branch {
                circuit_id: "1-2".into(),
                from: 1,
                to: 2,
                r: 0.0,
                x: 0.1,
                b_shunt: 0.0,
                tap: 1.0,
                in_service: true,
            }],
            vec![],
        )
        .build_ybus()
        .unwrap()
    }

    #[test]
    fn homogeneous_system_gives_zero_voltage() {
        let y = two_bus();
        let net = AlgebraicNetwork::new(&y, &[(0, Complex64::new(0.0, -4.0))], &[]).unwrap();
        let sol = net
            .solve(&[Complex64::default(); 2], &[], None, &NetworkSolveOptions::default())
            .unwrap();
        assert!(sol.v.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn open_circuit_norton_source() {
        let y = two_bus();
        let y_n = Complex64::new(0.0, -1.0 / 0.3);
        let e = Complex64::from_polar(1.05, 0.2);
        let net = AlgebraicNetwork::new(&y, &[(0, y_n)], &[]).unwrap();
        let sol = net
            .solve(&[e * y_n, Complex64::default()], &[], None, &NetworkSolveOptions::default())
            .unwrap();
        assert!((sol.v[0] - sol.v[1]).norm() < 1e-12);
        assert!((sol.v[0] - e).norm() < 1e-12);
    }

    #[test]
    fn singular_network_is_topology_error() {
        let y = two_bus();
        assert!(matches!(AlgebraicNetwork::new(&y, &[], &[]), Err(Error::Topology(_))));
    }

    #[test]
    fn frozen_load_reproduces_power_and_current() {
        let v0 = Complex64::from_polar(0.97, -0.3);
        let l = FrozenLoad::freeze(0, 4.67, 1.0, v0);
        let s = l.power(v0);
        assert!((s - Complex64::new(4.67, 1.0)).norm() < 1e-12);
        // active current magnitude is voltage independent above the ramp
        let v1 = Complex64::from_polar(0.8, 0.4);
        assert!((l.active_current(v1).norm() - l.i_p).abs() < 1e-12);
        // and ramps linearly to zero below it
        let v2 = Complex64::from_polar(0.2, 0.4);
        assert!((l.active_current(v2).norm() - l.i_p * 0.5).abs() < 1e-12);
    }

    #[test]
    fn loaded_bus_converges_with_small_residual() {
        let y = two_bus();
        let y_n = Complex64::new(0.0, -1.0 / 0.3);
        let e = Complex64::from_polar(1.1, 0.0);
        let load = FrozenLoad::freeze(1, 1.0, 0.3, Complex64::from_polar(1.0, 0.0));
        let net = AlgebraicNetwork::new(&y, &[(0, y_n)], &[load]).unwrap();
        let src = [e * y_n, Complex64::default()];
        let inj = [NonlinearInjection {
            bus: 1,
            dq: Complex64::new(0.2, -0.1),
        }];
        let sol = net.solve(&src, &inj, None, &NetworkSolveOptions::default()).unwrap();
        assert!(net.residual(&sol.v, &src, &inj) < 1e-8);
    }
}
