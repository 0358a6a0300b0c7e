//! Static AC network model: buses, branches, loads, the nodal admittance
//! matrix and the topology changes applied during a simulation.
//!
//! All impedances and admittances are per unit on the system base
//! (`s_base_mva`, bus `base_kv`). Networks are immutable values; every event
//! produces a new [`NetworkModel`].

mod solve;

pub use solve::{
    AlgebraicNetwork, FrozenLoad, NetworkSolution, NetworkSolveOptions, NonlinearInjection,
    LOAD_RAMP_VOLTAGE,
};

use std::collections::{BTreeMap, HashMap};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest fault conductance accepted for a bolted three-phase fault (pu).
pub const MIN_FAULT_CONDUCTANCE: f64 = 1e4;

/// Default fault conductance (pu on system base).
pub const DEFAULT_FAULT_CONDUCTANCE: f64 = 1e5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: usize,
    pub kind: BusKind,
    pub base_kv: f64,
    /// Voltage magnitude (setpoint for slack/PV buses, initial guess otherwise).
    pub v_mag: f64,
    /// Voltage angle in radians (reference angle for the slack bus).
    pub v_ang: f64,
    pub shunt_g: f64,
    pub shunt_b: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub circuit_id: String,
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    /// Total line charging susceptance.
    pub b_shunt: f64,
    /// Off-nominal turns ratio on the `from` side.
    pub tap: f64,
    pub in_service: bool,
}

impl Branch {
    pub fn series_admittance(&self) -> Complex64 {
        Complex64::new(self.r, self.x).inv()
    }

    /// Complex power (pu) entering the branch at its `from` end.
    pub fn from_end_power(&self, v_from: Complex64, v_to: Complex64) -> Complex64 {
        let y = self.series_admittance();
        let ysh = Complex64::new(0.0, self.b_shunt / 2.0);
        let t = self.tap;
        let i = (y + ysh) / (t * t) * v_from - y / t * v_to;
        v_from * i.conj()
    }

    /// Complex power (pu) entering the branch at its `to` end.
    pub fn to_end_power(&self, v_from: Complex64, v_to: Complex64) -> Complex64 {
        let y = self.series_admittance();
        let ysh = Complex64::new(0.0, self.b_shunt / 2.0);
        let i = (y + ysh) * v_to - y / self.tap * v_from;
        v_to * i.conj()
    }
}

/// Static load. Dynamically the active part is a constant current and the
/// reactive part a constant admittance, both frozen at the pre-event
/// operating point (see [`FrozenLoad`]).
#[derive(Debug, Clone, PartialEq)]
pub struct Load {
    pub bus: usize,
    pub p_mw: f64,
    pub q_mvar: f64,
}

/// Where along the faulted circuit the short circuit is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FaultLocation {
    #[default]
    NearFromBus,
}

/// A three-phase-to-ground fault on a circuit, cleared by opening that circuit.
#[derive(Debug, Clone, PartialEq)]
pub struct FaultSpec {
    pub circuit_id: String,
    pub location: FaultLocation,
    pub conductance: f64,
    pub t_on: f64,
    pub t_clear: f64,
}

impl FaultSpec {
    pub fn new(circuit_id: impl Into<String>, t_on: f64, duration: f64) -> Self {
        FaultSpec {
            circuit_id: circuit_id.into(),
            location: FaultLocation::NearFromBus,
            conductance: DEFAULT_FAULT_CONDUCTANCE,
            t_on,
            t_clear: t_on + duration,
        }
    }

    pub fn duration(&self) -> f64 {
        self.t_clear - self.t_on
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_clear > self.t_on) {
            return Err(Error::data(format!(
                "fault on {}: clearing time {} s must follow inception {} s",
                self.circuit_id, self.t_clear, self.t_on
            )));
        }
        if !(self.conductance >= MIN_FAULT_CONDUCTANCE) {
            return Err(Error::data(format!(
                "fault on {}: conductance {} pu is below {MIN_FAULT_CONDUCTANCE} pu",
                self.circuit_id, self.conductance
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActiveFault {
    pub circuit_id: String,
    pub bus: usize,
    pub conductance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TopologyEvent {
    Trip { circuit_id: String },
    Reclose { circuit_id: String },
    FaultOn { circuit_id: String, conductance: f64 },
    FaultClear { circuit_id: String },
}

impl TopologyEvent {
    pub fn circuit_id(&self) -> &str {
        match self {
            TopologyEvent::Trip { circuit_id }
            | TopologyEvent::Reclose { circuit_id }
            | TopologyEvent::FaultOn { circuit_id, .. }
            | TopologyEvent::FaultClear { circuit_id } => circuit_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    pub s_base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub loads: Vec<Load>,
    pub faults: Vec<ActiveFault>,
}

impl NetworkModel {
    pub fn new(s_base_mva: f64, buses: Vec<Bus>, branches: Vec<Branch>, loads: Vec<Load>) -> Self {
        NetworkModel {
            s_base_mva,
            buses,
            branches,
            loads,
            faults: Vec::new(),
        }
    }

    pub fn bus_count(&self) -> usize {
        self.buses.len()
    }

    /// Position of bus `id` in `buses` (and in every matrix built from them).
    pub fn bus_index(&self, id: usize) -> Result<usize> {
        self.buses
            .iter()
            .position(|b| b.id == id)
            .ok_or_else(|| Error::data(format!("unknown bus {id}")))
    }

    pub fn branch(&self, circuit_id: &str) -> Result<&Branch> {
        self.branches
            .iter()
            .find(|b| b.circuit_id == circuit_id)
            .ok_or_else(|| Error::event(format!("unknown circuit {circuit_id}")))
    }

    /// Checks bus and branch data independently of topology.
    pub fn validate(&self) -> Result<()> {
        if !(self.s_base_mva > 0.0) {
            return Err(Error::data("system base power must be positive"));
        }
        let mut seen = HashMap::new();
        for (i, bus) in self.buses.iter().enumerate() {
            if seen.insert(bus.id, i).is_some() {
                return Err(Error::data(format!("duplicate bus id {}", bus.id)));
            }
            if !(bus.v_mag > 0.0) {
                return Err(Error::data(format!("bus {}: voltage magnitude must be positive", bus.id)));
            }
            if !(bus.base_kv > 0.0) {
                return Err(Error::data(format!("bus {}: base voltage must be positive", bus.id)));
            }
        }
        let mut circuits = HashMap::new();
        for br in &self.branches {
            if circuits.insert(br.circuit_id.as_str(), ()).is_some() {
                return Err(Error::data(format!("duplicate circuit id {}", br.circuit_id)));
            }
            for end in [br.from, br.to] {
                if !seen.contains_key(&end) {
                    return Err(Error::data(format!(
                        "circuit {} references unknown bus {end}",
                        br.circuit_id
                    )));
                }
            }
            if br.from == br.to {
                return Err(Error::data(format!("circuit {} connects bus {} to itself", br.circuit_id, br.from)));
            }
            if br.x == 0.0 {
                return Err(Error::data(format!("circuit {} has zero reactance", br.circuit_id)));
            }
            if !(br.tap > 0.0) {
                return Err(Error::data(format!("circuit {} has non-positive tap", br.circuit_id)));
            }
        }
        for load in &self.loads {
            if !seen.contains_key(&load.bus) {
                return Err(Error::data(format!("load references unknown bus {}", load.bus)));
            }
            if !load.p_mw.is_finite() || !load.q_mvar.is_finite() {
                return Err(Error::data(format!("load at bus {} is not finite", load.bus)));
            }
        }
        Ok(())
    }

    /// Returns the network after `event`.
    pub fn apply_topology_event(&self, event: &TopologyEvent) -> Result<NetworkModel> {
        let mut next = self.clone();
        let id = event.circuit_id();
        let pos = next
            .branches
            .iter()
            .position(|b| b.circuit_id == id)
            .ok_or_else(|| Error::event(format!("unknown circuit {id}")))?;
        let faulted = next.faults.iter().position(|f| f.circuit_id == id);
        match event {
            TopologyEvent::Trip { .. } => {
                if !next.branches[pos].in_service {
                    return Err(Error::event(format!("circuit {id} is already open")));
                }
                next.branches[pos].in_service = false;
            }
            TopologyEvent::Reclose { .. } => {
                if next.branches[pos].in_service {
                    return Err(Error::event(format!("circuit {id} is already closed")));
                }
                if faulted.is_some() {
                    return Err(Error::event(format!("circuit {id} is still faulted")));
                }
                next.branches[pos].in_service = true;
            }
            TopologyEvent::FaultOn { conductance, .. } => {
                if !next.branches[pos].in_service {
                    return Err(Error::event(format!("cannot fault open circuit {id}")));
                }
                if faulted.is_some() {
                    return Err(Error::event(format!("circuit {id} is already faulted")));
                }
                if !(*conductance >= MIN_FAULT_CONDUCTANCE) {
                    return Err(Error::event(format!(
                        "fault conductance {conductance} pu is below {MIN_FAULT_CONDUCTANCE} pu"
                    )));
                }
                next.faults.push(ActiveFault {
                    circuit_id: id.to_string(),
                    bus: next.branches[pos].from,
                    conductance: *conductance,
                });
            }
            TopologyEvent::FaultClear { .. } => {
                let f = faulted.ok_or_else(|| Error::event(format!("no fault applied on circuit {id}")))?;
                next.faults.remove(f);
                next.branches[pos].in_service = false;
            }
        }
        Ok(next)
    }

    /// Nodal admittance matrix of the passive network, fault shunts included.
    pub fn build_ybus(&self) -> Result<AdmittanceMatrix> {
        self.validate()?;
        let n = self.buses.len();
        let index: HashMap<usize, usize> =
            self.buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect();
        let mut y = AdmittanceMatrix::zeros(self.buses.iter().map(|b| b.id).collect());
        let mut degree = vec![0usize; n];

        for (i, bus) in self.buses.iter().enumerate() {
            y.add(i, i, Complex64::new(bus.shunt_g, bus.shunt_b));
        }
        for br in self.branches.iter().filter(|b| b.in_service) {
            let (f, t) = (index[&br.from], index[&br.to]);
            let ys = br.series_admittance();
            let ysh = Complex64::new(0.0, br.b_shunt / 2.0);
            y.add(f, f, (ys + ysh) / (br.tap * br.tap));
            y.add(t, t, ys + ysh);
            y.add(f, t, -ys / br.tap);
            y.add(t, f, -ys / br.tap);
            degree[f] += 1;
            degree[t] += 1;
        }
        if n > 1 {
            if let Some(i) = degree.iter().position(|&d| d == 0) {
                return Err(Error::topology(format!("bus {} is isolated", self.buses[i].id)));
            }
        }
        for fault in &self.faults {
            let i = index[&fault.bus];
            y.add(i, i, Complex64::new(fault.conductance, 0.0));
        }
        Ok(y)
    }
}

/// Sparse complex nodal admittance matrix, indexed by position in the bus list.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    bus_ids: Vec<usize>,
    entries: BTreeMap<(usize, usize), Complex64>,
}

impl AdmittanceMatrix {
    pub fn zeros(bus_ids: Vec<usize>) -> Self {
        AdmittanceMatrix {
            bus_ids,
            entries: BTreeMap::new(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.bus_ids.len()
    }

    pub fn bus_ids(&self) -> &[usize] {
        &self.bus_ids
    }

    pub fn index_of(&self, bus_id: usize) -> Option<usize> {
        self.bus_ids.iter().position(|&b| b == bus_id)
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.entries.get(&(i, j)).copied().unwrap_or_default()
    }

    /// Entry addressed by bus ids rather than positions.
    pub fn get_by_id(&self, from: usize, to: usize) -> Complex64 {
        match (self.index_of(from), self.index_of(to)) {
            (Some(i), Some(j)) => self.get(i, j),
            _ => Complex64::default(),
        }
    }

    pub fn add(&mut self, i: usize, j: usize, value: Complex64) {
        *self.entries.entry((i, j)).or_default() += value;
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, Complex64)> + '_ {
        self.entries.iter().map(|(&(i, j), &v)| (i, j, v))
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let n = self.dimension();
        let mut m = DMatrix::zeros(n, n);
        for (&(i, j), &v) in &self.entries {
            m[(i, j)] = v;
        }
        m
    }

    /// Largest entry-wise modulus difference between two matrices of equal dimension.
    pub fn max_abs_diff(&self, other: &AdmittanceMatrix) -> f64 {
        let a = self.to_dense();
        let b = other.to_dense();
        (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Injected currents for the given bus voltages.
    pub fn mul_vec(&self, v: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::default(); self.dimension()];
        for (&(i, j), &y) in &self.entries {
            out[i] += y * v[j];
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bus(id: usize, kind: BusKind) -> Bus {
        Bus {
            id,
            kind,
            base_kv: 220.0,
            v_mag: 1.0,
            v_ang: 0.0,
            shunt_g: 0.0,
            shunt_b: 0.0,
        }
    }

    fn branch(id: &str, from: usize, to: usize, x: f64) -> Branch {
        Branch {
            circuit_id: id.into(),
            from,
            to,
            r: 0.0,
            x,
            b_shunt: 0.0,
            tap: 1.0,
            in_service: true,
        }
    }

    /// The 6..10 corridor: reactances as listed for the two-area system.
    fn corridor(x67: f64, x910: f64) -> NetworkModel {
        NetworkModel::new(
            100.0,
            [6, 7, 8, 9, 10].iter().map(|&i| bus(i, BusKind::Pq)).collect(),
            vec![
                branch("6-7", 6, 7, x67),
                branch("7-8a", 7, 8, 0.11),
                branch("7-8b", 7, 8, 0.11),
                branch("8-9a", 8, 9, 0.11),
                branch("8-9b", 8, 9, 0.11),
                branch("9-10", 9, 10, x910),
            ],
            vec![],
        )
    }

    /// Kron reduction onto buses `keep`, computed independently of the solver path.
    fn kron(y: &DMatrix<Complex64>, keep: &[usize]) -> DMatrix<Complex64> {
        let n = y.nrows();
        let elim: Vec<usize> = (0..n).filter(|i| !keep.contains(i)).collect();
        let pick = |rows: &[usize], cols: &[usize]| {
            DMatrix::from_fn(rows.len(), cols.len(), |i, j| y[(rows[i], cols[j])])
        };
        let ykk = pick(keep, keep);
        let yke = pick(keep, &elim);
        let yek = pick(&elim, keep);
        let yee = pick(&elim, &elim);
        ykk - yke * yee.try_inverse().unwrap() * yek
    }

    fn equivalent_reactance(net: &NetworkModel) -> f64 {
        let y = net.build_ybus().unwrap().to_dense();
        let red = kron(&y, &[0, 4]);
        // off-diagonal of a purely inductive two-port is j/x_eq
        1.0 / red[(0, 1)].im
    }

    #[test]
    fn two_bus_single_line() {
        let net = NetworkModel::new(
            100.0,
            vec![bus(1, BusKind::Slack), bus(2, BusKind::Pq)],
            vec![branch("1-2", 1, 2, 0.1)],
            vec![],
        );
        let y = net.build_ybus().unwrap();
        assert!((y.get(0, 0) - Complex64::new(0.0, -10.0)).norm() < 1e-12);
        assert!((y.get(0, 1) - Complex64::new(0.0, 10.0)).norm() < 1e-12);
        assert!((y.get(1, 0) - Complex64::new(0.0, 10.0)).norm() < 1e-12);
        assert!((y.get(1, 1) - Complex64::new(0.0, -10.0)).norm() < 1e-12);
    }

    #[test]
    fn corridor_equivalent_reactance() {
        // series/parallel: 0.025 + 0.055 + 0.055 + 0.025
        assert!((equivalent_reactance(&corridor(0.025, 0.025)) - 0.16).abs() < 1e-12);
        // 0.0025 + 0.055 + 0.055 + 0.0025 gives the quoted 0.115 pu total
        assert!((equivalent_reactance(&corridor(0.0025, 0.0025)) - 0.115).abs() < 1e-12);
        // standard 10 km terminal sections
        assert!((equivalent_reactance(&corridor(0.01, 0.01)) - 0.13).abs() < 1e-12);
    }

    #[test]
    fn corridor_with_circuit_out() {
        let net = corridor(0.025, 0.025)
            .apply_topology_event(&TopologyEvent::Trip { circuit_id: "7-8a".into() })
            .unwrap();
        assert!((equivalent_reactance(&net) - 0.215).abs() < 1e-12);
    }

    #[test]
    fn trip_leaves_one_circuit() {
        let net = corridor(0.01, 0.01);
        let y0 = net.build_ybus().unwrap();
        let tripped = net
            .apply_topology_event(&TopologyEvent::Trip { circuit_id: "7-8a".into() })
            .unwrap();
        let y1 = tripped.build_ybus().unwrap();
        assert!((y0.get_by_id(7, 8) - Complex64::new(0.0, 2.0 / 0.11)).norm() < 1e-9);
        assert!((y1.get_by_id(7, 8) - Complex64::new(0.0, 1.0 / 0.11)).norm() < 1e-9);
    }

    #[test]
    fn fault_adds_shunt_at_near_bus() {
        let net = corridor(0.01, 0.01);
        let y0 = net.build_ybus().unwrap();
        let f = net
            .apply_topology_event(&TopologyEvent::FaultOn {
                circuit_id: "7-8a".into(),
                conductance: 1e5,
            })
            .unwrap();
        let y1 = f.build_ybus().unwrap();
        assert!((y1.get_by_id(7, 7) - y0.get_by_id(7, 7) - Complex64::new(1e5, 0.0)).norm() < 1e-9);
        assert_eq!(y1.get_by_id(8, 8), y0.get_by_id(8, 8));
    }

    #[test]
    fn fault_clear_equals_rebuild_without_circuit() {
        let net = corridor(0.01, 0.01);
        let cleared = net
            .apply_topology_event(&TopologyEvent::FaultOn {
                circuit_id: "7-8a".into(),
                conductance: 1e5,
            })
            .and_then(|n| n.apply_topology_event(&TopologyEvent::FaultClear { circuit_id: "7-8a".into() }))
            .unwrap();
        let mut oracle = corridor(0.01, 0.01);
        oracle.branches.retain(|b| b.circuit_id != "7-8a");
        let diff = cleared.build_ybus().unwrap().max_abs_diff(&oracle.build_ybus().unwrap());
        assert!(diff < 1e-12, "{diff}");
    }

    #[test]
    fn reclose_restores_original() {
        let net = corridor(0.01, 0.01);
        let y0 = net.build_ybus().unwrap();
        let back = net
            .apply_topology_event(&TopologyEvent::FaultOn {
                circuit_id: "8-9b".into(),
                conductance: 1e5,
            })
            .and_then(|n| n.apply_topology_event(&TopologyEvent::FaultClear { circuit_id: "8-9b".into() }))
            .and_then(|n| n.apply_topology_event(&TopologyEvent::Reclose { circuit_id: "8-9b".into() }))
            .unwrap();
        assert_eq!(back.build_ybus().unwrap(), y0);
    }

    #[test]
    fn invalid_events() {
        let net = corridor(0.01, 0.01);
        let trip = |id: &str| TopologyEvent::Trip { circuit_id: id.into() };
        assert!(matches!(net.apply_topology_event(&trip("x-y")), Err(Error::Event(_))));
        let once = net.apply_topology_event(&trip("7-8a")).unwrap();
        assert!(matches!(once.apply_topology_event(&trip("7-8a")), Err(Error::Event(_))));
        let clear = TopologyEvent::FaultClear { circuit_id: "7-8b".into() };
        assert!(matches!(net.apply_topology_event(&clear), Err(Error::Event(_))));
    }

    #[test]
    fn data_errors() {
        let mut net = corridor(0.01, 0.01);
        net.branches[0].x = 0.0;
        assert!(matches!(net.build_ybus(), Err(Error::Data(_))));

        let mut net = corridor(0.01, 0.01);
        net.buses.push(bus(99, BusKind::Pq));
        assert!(matches!(net.build_ybus(), Err(Error::Topology(_))));
    }

    #[test]
    fn symmetric_with_unit_taps() {
        let mut net = corridor(0.01, 0.01);
        net.branches[1].r = 0.011;
        net.branches[1].b_shunt = 0.1925;
        let y = net.build_ybus().unwrap().to_dense();
        assert!((y.clone() - y.transpose()).iter().all(|z| z.norm() < 1e-15));
        // no shunts, no charging elsewhere: row sums vanish except for charging
        let row_sum: Complex64 = y.row(0).iter().sum();
        assert!(row_sum.norm() < 1e-12);
    }

    #[test]
    fn branch_flow_matches_angle_difference() {
        let br = branch("a", 1, 2, 0.1);
        let s = br.from_end_power(Complex64::from_polar(1.0, 0.1), Complex64::from_polar(1.0, 0.0));
        assert!((s.re - 10.0 * (0.1f64).sin()).abs() < 1e-12);
    }
}
