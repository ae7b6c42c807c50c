//! Three-phase unbalanced network model and its phasor solution.
//!
//! All quantities are SI: volts line-to-neutral, amps, watts, VAR, ohms and
//! siemens. Every bus carries up to three phase nodes; a phase node that the
//! bus does not have is simply never referenced.

mod admittance;
mod balance;
pub mod feeder;
mod regulator;
mod solver;

use std::collections::HashMap;

use num_complex::Complex64;
use thiserror::Error;

use crate::phase::{Phase, PhaseSet};

pub use admittance::{
    assemble_admittance, branch_primitive, AdmittanceSystem, BranchPrimitive, Island, LoadTerm,
    SourceSite,
};
pub use balance::{power_balance, PowerBalance};
pub use regulator::{RegulatorController, TapDecision};
pub use solver::{
    solve_network, DeviceInjections, NetworkSolution, PowerInjection, Solver, SolverOptions,
};

/// Per-phase admittance of a closed switch.
pub const SWITCH_ADMITTANCE: f64 = 1.0e6;

/// Terminal voltage (pu of nominal) below which constant-power loads turn
/// into constant-impedance loads.
pub const LOAD_LOW_VOLTAGE_PU: f64 = 0.5;

pub type Mat3 = [[Complex64; 3]; 3];

pub const ZERO3: Mat3 = [[Complex64::new(0.0, 0.0); 3]; 3];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("duplicate id \"{0}\"")]
    DuplicateId(String),
    #[error("{element} references unknown bus \"{bus}\"")]
    UnknownBus { element: String, bus: String },
    #[error("bus \"{0}\" has no phases")]
    EmptyPhases(String),
    #[error("bus \"{0}\" has non-positive nominal voltage")]
    NonPositiveVoltage(String),
    #[error("branch \"{branch}\" uses phases {phases} not present on bus \"{bus}\"")]
    PhaseMismatch {
        branch: String,
        phases: PhaseSet,
        bus: String,
    },
    #[error("branch \"{branch}\" joins buses with different nominal voltages")]
    VoltageMismatch { branch: String },
    #[error("line \"{0}\" has a non-symmetric impedance matrix")]
    AsymmetricLine(String),
    #[error("line \"{0}\" has a singular impedance matrix")]
    SingularLine(String),
    #[error("transformer \"{branch}\": {reason}")]
    InvalidTransformer { branch: String, reason: String },
    #[error("regulator \"{branch}\": {reason}")]
    InvalidRegulator { branch: String, reason: String },
    #[error("{element} on bus \"{bus}\" has {reason}")]
    InvalidElement {
        element: String,
        bus: String,
        reason: String,
    },
    #[error("island containing bus \"{bus}\" has energized loads but no voltage source")]
    NoSource { bus: String },
    #[error("network solve did not converge after {iterations} iterations (mismatch {mismatch:.3e} VA at bus \"{worst_bus}\")")]
    NonConvergence {
        iterations: usize,
        mismatch: f64,
        worst_bus: String,
    },
    #[error("injection references source slot {0} that is not part of the assembled system")]
    UnknownSource(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BusKind {
    /// Hosts a voltage-establishing device.
    Source,
    /// Hosts at least one load.
    Load,
    Node,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: String,
    pub phases: PhaseSet,
    /// Line-to-neutral volts.
    pub nominal_voltage: f64,
    pub kind: BusKind,
    /// Microgrid the bus belongs to, if any.
    pub group: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerSpec {
    pub rating: f64,
    /// Line-to-line volts.
    pub primary_voltage: f64,
    pub secondary_voltage: f64,
    pub r_pu: f64,
    pub x_pu: f64,
}

impl TransformerSpec {
    /// Series impedance per phase referred to the secondary, ohms.
    pub fn series_impedance(&self) -> Complex64 {
        let z_base = self.secondary_voltage * self.secondary_voltage / self.rating;
        Complex64::new(self.r_pu, self.x_pu) * z_base
    }

    pub fn turns_ratio(&self) -> f64 {
        self.primary_voltage / self.secondary_voltage
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegulatorSpec {
    pub monitored_bus: usize,
    /// Line-to-neutral volts at the monitored bus.
    pub band_center: f64,
    pub band_width: f64,
    /// Voltage change per tap as a fraction of nominal.
    pub tap_step: f64,
    /// Taps run from -tap_range to +tap_range.
    pub tap_range: i32,
    /// Seconds the monitored voltage must stay out of band before a tap change.
    pub dwell: f64,
    pub initial_tap: i32,
    /// Per-phase series impedance on the regulated side.
    pub impedance: Complex64,
}

impl RegulatorSpec {
    pub fn ratio(&self, tap: i32) -> f64 {
        1.0 + self.tap_step * tap as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BranchKind {
    Line {
        /// Series impedance, ohms, indexed by phase.
        z: Mat3,
        /// Total shunt admittance, siemens, split half to each end.
        y_shunt: Mat3,
    },
    Transformer(TransformerSpec),
    Regulator(RegulatorSpec),
    Switch {
        closed: bool,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub id: String,
    pub from: usize,
    pub to: usize,
    pub phases: PhaseSet,
    pub kind: BranchKind,
    pub group: Option<String>,
}

impl Branch {
    pub fn is_switch(&self) -> bool {
        matches!(self.kind, BranchKind::Switch { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstantPowerLoad {
    pub id: String,
    pub bus: usize,
    /// Complex power drawn per phase, W + jVAR.
    pub per_phase: [Complex64; 3],
    pub energized: bool,
}

impl ConstantPowerLoad {
    /// Balanced three-phase load: `total` is split evenly over the bus phases.
    pub fn balanced(id: &str, bus: usize, phases: PhaseSet, total: Complex64) -> Self {
        let share = total / phases.len() as f64;
        let mut per_phase = [Complex64::default(); 3];
        for p in phases.iter() {
            per_phase[p.index()] = share;
        }
        ConstantPowerLoad {
            id: id.to_string(),
            bus,
            per_phase,
            energized: true,
        }
    }

    pub fn total(&self) -> Complex64 {
        self.per_phase.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShuntCapacitor {
    pub id: String,
    pub bus: usize,
    /// Three-phase reactive injection at nominal voltage, VAR.
    pub q: f64,
}

/// Mutable operating state of the network: switch positions, regulator taps
/// and which loads are energized.
#[derive(Debug, Clone, PartialEq)]
pub struct TopologyState {
    pub switch_closed: Vec<bool>,
    pub taps: Vec<i32>,
    pub load_energized: Vec<bool>,
}

/// Validated network description. Immutable after construction; operating
/// state lives in [`TopologyState`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub loads: Vec<ConstantPowerLoad>,
    pub shunts: Vec<ShuntCapacitor>,
    bus_index: HashMap<String, usize>,
}

impl NetworkModel {
    pub fn new(
        buses: Vec<Bus>,
        branches: Vec<Branch>,
        loads: Vec<ConstantPowerLoad>,
        shunts: Vec<ShuntCapacitor>,
    ) -> Result<Self, NetworkError> {
        let mut bus_index = HashMap::with_capacity(buses.len());
        for (i, bus) in buses.iter().enumerate() {
            if bus_index.insert(bus.id.clone(), i).is_some() {
                return Err(NetworkError::DuplicateId(bus.id.clone()));
            }
            if bus.phases.is_empty() {
                return Err(NetworkError::EmptyPhases(bus.id.clone()));
            }
            if !(bus.nominal_voltage > 0.0) {
                return Err(NetworkError::NonPositiveVoltage(bus.id.clone()));
            }
        }
        let net = NetworkModel {
            buses,
            branches,
            loads,
            shunts,
            bus_index,
        };
        net.validate()?;
        Ok(net)
    }

    fn validate(&self) -> Result<(), NetworkError> {
        let nb = self.buses.len();
        let mut ids = std::collections::HashSet::new();
        for br in &self.branches {
            if !ids.insert(br.id.as_str()) {
                return Err(NetworkError::DuplicateId(br.id.clone()));
            }
            for end in [br.from, br.to] {
                if end >= nb {
                    return Err(NetworkError::UnknownBus {
                        element: format!("branch \"{}\"", br.id),
                        bus: format!("#{end}"),
                    });
                }
                let bus = &self.buses[end];
                if !br.phases.is_subset_of(bus.phases) {
                    return Err(NetworkError::PhaseMismatch {
                        branch: br.id.clone(),
                        phases: br.phases,
                        bus: bus.id.clone(),
                    });
                }
            }
            let (vf, vt) = (
                self.buses[br.from].nominal_voltage,
                self.buses[br.to].nominal_voltage,
            );
            match &br.kind {
                BranchKind::Line { z, .. } => {
                    if ((vf - vt) / vf).abs() > 0.01 {
                        return Err(NetworkError::VoltageMismatch {
                            branch: br.id.clone(),
                        });
                    }
                    for i in 0..3 {
                        for j in 0..3 {
                            if (z[i][j] - z[j][i]).norm() > 1e-9 * (1.0 + z[i][j].norm()) {
                                return Err(NetworkError::AsymmetricLine(br.id.clone()));
                            }
                        }
                    }
                }
                BranchKind::Switch { .. } => {
                    if ((vf - vt) / vf).abs() > 0.01 {
                        return Err(NetworkError::VoltageMismatch {
                            branch: br.id.clone(),
                        });
                    }
                }
                BranchKind::Transformer(t) => {
                    let bad = |reason: &str| NetworkError::InvalidTransformer {
                        branch: br.id.clone(),
                        reason: reason.to_string(),
                    };
                    if !(t.rating > 0.0) {
                        return Err(bad("rating must be positive"));
                    }
                    if !(t.primary_voltage > 0.0 && t.secondary_voltage > 0.0) {
                        return Err(bad("winding voltages must be positive"));
                    }
                    if t.series_impedance().norm() == 0.0 {
                        return Err(bad("series impedance must be non-zero"));
                    }
                }
                BranchKind::Regulator(r) => {
                    let bad = |reason: &str| NetworkError::InvalidRegulator {
                        branch: br.id.clone(),
                        reason: reason.to_string(),
                    };
                    if !(r.band_width > 0.0) {
                        return Err(bad("band width must be positive"));
                    }
                    if r.tap_range < 0 || r.initial_tap.abs() > r.tap_range {
                        return Err(bad("initial tap outside range"));
                    }
                    if !(r.tap_step > 0.0 && r.tap_step < 0.1) {
                        return Err(bad("tap step must be in (0, 0.1)"));
                    }
                    if r.monitored_bus >= nb {
                        return Err(bad("monitored bus does not exist"));
                    }
                    if r.impedance.norm() == 0.0 {
                        return Err(bad("series impedance must be non-zero"));
                    }
                }
            }
        }
        for load in &self.loads {
            if !ids.insert(load.id.as_str()) {
                return Err(NetworkError::DuplicateId(load.id.clone()));
            }
            let bus = self.buses.get(load.bus).ok_or(NetworkError::UnknownBus {
                element: format!("load \"{}\"", load.id),
                bus: format!("#{}", load.bus),
            })?;
            for p in Phase::ALL {
                if !bus.phases.contains(p) && load.per_phase[p.index()].norm() > 0.0 {
                    return Err(NetworkError::InvalidElement {
                        element: format!("load \"{}\"", load.id),
                        bus: bus.id.clone(),
                        reason: format!("power on missing phase {p:?}"),
                    });
                }
            }
        }
        for sh in &self.shunts {
            if !ids.insert(sh.id.as_str()) {
                return Err(NetworkError::DuplicateId(sh.id.clone()));
            }
            if sh.bus >= nb {
                return Err(NetworkError::UnknownBus {
                    element: format!("shunt \"{}\"", sh.id),
                    bus: format!("#{}", sh.bus),
                });
            }
        }
        Ok(())
    }

    pub fn bus_index(&self, id: &str) -> Option<usize> {
        self.bus_index.get(id).copied()
    }

    pub fn branch_index(&self, id: &str) -> Option<usize> {
        self.branches.iter().position(|b| b.id == id)
    }

    pub fn load_index(&self, id: &str) -> Option<usize> {
        self.loads.iter().position(|l| l.id == id)
    }

    /// Global phase-node index of `(bus, phase)`.
    pub fn node(bus: usize, phase: Phase) -> usize {
        bus * 3 + phase.index()
    }

    pub fn node_count(&self) -> usize {
        self.buses.len() * 3
    }

    /// Operating state as described by the model: switches at their
    /// configured position, regulators at their initial tap, loads as given.
    pub fn initial_state(&self) -> TopologyState {
        TopologyState {
            switch_closed: self
                .branches
                .iter()
                .map(|b| match b.kind {
                    BranchKind::Switch { closed } => closed,
                    _ => true,
                })
                .collect(),
            taps: self
                .branches
                .iter()
                .map(|b| match &b.kind {
                    BranchKind::Regulator(r) => r.initial_tap,
                    _ => 0,
                })
                .collect(),
            load_energized: self.loads.iter().map(|l| l.energized).collect(),
        }
    }

    /// Branch indices that are regulators.
    pub fn regulators(&self) -> impl Iterator<Item = (usize, &RegulatorSpec)> {
        self.branches
            .iter()
            .enumerate()
            .filter_map(|(i, b)| match &b.kind {
                BranchKind::Regulator(r) => Some((i, r)),
                _ => None,
            })
    }
}

#[cfg(test)]
pub(crate) mod test_util {
    use super::*;

    pub fn bus(id: &str, v_ln: f64) -> Bus {
        Bus {
            id: id.to_string(),
            phases: PhaseSet::ABC,
            nominal_voltage: v_ln,
            kind: BusKind::Node,
            group: None,
        }
    }

    pub fn diag3(z: Complex64) -> Mat3 {
        let mut m = ZERO3;
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = z;
        }
        m
    }

    pub fn line(id: &str, from: usize, to: usize, z: Complex64) -> Branch {
        Branch {
            id: id.to_string(),
            from,
            to,
            phases: PhaseSet::ABC,
            kind: BranchKind::Line {
                z: diag3(z),
                y_shunt: ZERO3,
            },
            group: None,
        }
    }

    pub fn switch(id: &str, from: usize, to: usize, closed: bool) -> Branch {
        Branch {
            id: id.to_string(),
            from,
            to,
            phases: PhaseSet::ABC,
            kind: BranchKind::Switch { closed },
            group: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::test_util::*;
    use super::*;

    #[test]
    fn rejects_phase_mismatch() {
        let mut b1 = bus("1", 2400.0);
        b1.phases = "AB".parse().unwrap();
        let buses = vec![bus("0", 2400.0), b1];
        let err = NetworkModel::new(
            buses,
            vec![line("l", 0, 1, Complex64::new(1.0, 1.0))],
            vec![],
            vec![],
        )
        .unwrap_err();
        assert!(matches!(err, NetworkError::PhaseMismatch { .. }));
    }

    #[test]
    fn rejects_duplicate_bus_and_bad_voltage() {
        let err = NetworkModel::new(vec![bus("x", 1.0), bus("x", 1.0)], vec![], vec![], vec![])
            .unwrap_err();
        assert_eq!(err, NetworkError::DuplicateId("x".into()));
        let err = NetworkModel::new(vec![bus("x", 0.0)], vec![], vec![], vec![]).unwrap_err();
        assert_eq!(err, NetworkError::NonPositiveVoltage("x".into()));
    }

    #[test]
    fn rejects_asymmetric_line() {
        let mut l = line("l", 0, 1, Complex64::new(1.0, 1.0));
        if let BranchKind::Line { z, .. } = &mut l.kind {
            z[0][1] = Complex64::new(0.1, 0.0);
        }
        let err = NetworkModel::new(vec![bus("0", 1.0), bus("1", 1.0)], vec![l], vec![], vec![])
            .unwrap_err();
        assert_eq!(err, NetworkError::AsymmetricLine("l".into()));
    }

    #[test]
    fn balanced_load_splits_over_present_phases() {
        let l = ConstantPowerLoad::balanced(
            "l",
            0,
            "BC".parse().unwrap(),
            Complex64::new(200.0, 100.0),
        );
        assert_eq!(l.per_phase[0], Complex64::default());
        assert_eq!(l.per_phase[1], Complex64::new(100.0, 50.0));
        assert_eq!(l.total(), Complex64::new(200.0, 100.0));
    }
}
