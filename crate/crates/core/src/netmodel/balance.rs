use num_complex::Complex64;

use super::solver::load_current;
use super::{AdmittanceSystem, DeviceInjections, NetworkModel, NetworkSolution};
use crate::phase::Phase;

/// Complex-power bookkeeping of one solution. All terms in VA.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PowerBalance {
    /// Injected by voltage sources and power injections.
    pub devices: Complex64,
    /// Drawn by energized loads.
    pub loads: Complex64,
    /// Series and charging losses of all branches.
    pub branch_losses: Complex64,
    /// Absorbed by shunt capacitors (negative reactive part).
    pub shunts: Complex64,
    /// |devices − loads − branch_losses − shunts|
    pub residual: f64,
}

impl NetworkSolution {
    /// Complex power absorbed by branch `b` (sum over both ends).
    pub fn branch_loss(&self, sys: &AdmittanceSystem, b: usize) -> Complex64 {
        let (f, t) = sys.branch_ends[b];
        let vf = self.bus_voltages(f);
        let vt = self.bus_voltages(t);
        (0..3)
            .map(|p| vf[p] * self.branch_from[b][p].conj() + vt[p] * self.branch_to[b][p].conj())
            .sum()
    }

    /// Complex power drawn by load `i` (zero when de-energized or dead).
    pub fn load_power(&self, net: &NetworkModel, sys: &AdmittanceSystem, i: usize) -> Complex64 {
        let load = &net.loads[i];
        if !sys.load_energized[i] || !sys.islands[sys.bus_island[load.bus]].energized() {
            return Complex64::default();
        }
        let vn = net.buses[load.bus].nominal_voltage;
        net.buses[load.bus]
            .phases
            .iter()
            .map(|p| {
                let v = self.voltage(load.bus, p);
                v * load_current(load.per_phase[p.index()], vn, v).conj()
            })
            .sum()
    }

    /// Mean line-to-neutral voltage magnitude over the phases of `bus`.
    pub fn bus_magnitude(&self, net: &NetworkModel, bus: usize) -> f64 {
        let phases = net.buses[bus].phases;
        phases
            .iter()
            .map(|p| self.voltage(bus, p).norm())
            .sum::<f64>()
            / phases.len() as f64
    }
}

pub fn power_balance(
    net: &NetworkModel,
    sys: &AdmittanceSystem,
    inj: &DeviceInjections,
    sol: &NetworkSolution,
) -> PowerBalance {
    let mut out = PowerBalance::default();
    for (s, site) in sys.sites.iter().enumerate() {
        let i = sys.source_current(s, &inj.emf[s], sol);
        let v = sol.bus_voltages(site.bus);
        out.devices += (0..3).map(|p| v[p] * i[p].conj()).sum::<Complex64>();
    }
    for pi in &inj.power {
        let i = sys.injected_current(pi, sol);
        let v = sol.bus_voltages(pi.bus);
        out.devices += (0..3).map(|p| v[p] * i[p].conj()).sum::<Complex64>();
    }
    for i in 0..net.loads.len() {
        out.loads += sol.load_power(net, sys, i);
    }
    for b in 0..net.branches.len() {
        if sys.primitives[b].is_some() {
            out.branch_losses += sol.branch_loss(sys, b);
        }
    }
    for sh in &net.shunts {
        let bus = &net.buses[sh.bus];
        let b = sh.q / (bus.phases.len() as f64 * bus.nominal_voltage * bus.nominal_voltage);
        let y = Complex64::new(0.0, b);
        out.shunts += bus
            .phases
            .iter()
            .map(|p: Phase| {
                let v = sol.voltage(sh.bus, p);
                v * (y * v).conj()
            })
            .sum::<Complex64>();
    }
    out.residual = (out.devices - out.loads - out.branch_losses - out.shunts).norm();
    out
}
