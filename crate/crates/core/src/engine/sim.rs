use std::time::Instant;

use num_complex::Complex64;

use super::{
    Action, BtbInstance, Channel, Device, DeviceModel, Event, LogEntry, LogKind, Quantity,
    SimConfig, SimError, SystemSpec, TimeSeriesRecord,
};
use crate::btb::SideB;
use crate::devices::Measurement;
use crate::netmodel::{
    assemble_admittance, power_balance, AdmittanceSystem, BranchKind, DeviceInjections,
    NetworkModel, NetworkSolution, RegulatorController, Solver, SolverOptions, SourceSite,
    TapDecision, TopologyState,
};

/// Newton tolerance used while initializing, pu of the system base.
const INIT_TOLERANCE_PU: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(super) enum SiteOwner {
    Device(usize),
    BtbB,
}

#[derive(Debug, Clone, Copy)]
enum Probe {
    DeviceP(usize),
    DeviceQ(usize),
    DeviceF(usize),
    DeviceV(usize),
    LoadP(usize),
    LoadQ(usize),
    BusV(usize),
    BtbPA,
    BtbPB,
    BtbQA,
    BtbQB,
    Vdc,
    VdcPu,
    Tap(usize),
    Residual,
}

#[derive(Debug, Clone, Copy)]
struct Ramp {
    target: RefTarget,
    t0: f64,
    t1: f64,
    p: Option<(f64, f64)>,
    q: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum RefTarget {
    Device(usize),
    Btb,
}

/// Terminal measurements of every device and converter side at one
/// network solution.
#[derive(Debug, Clone, Default)]
pub(super) struct Measurements {
    pub devices: Vec<Measurement>,
    pub btb_a: Measurement,
    pub btb_b: Measurement,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunStats {
    pub steps: u64,
    pub solves: u64,
    pub factorizations: usize,
    pub max_newton_iterations: usize,
    /// Largest complex-power balance residual over recorded samples, VA.
    pub max_residual: f64,
    /// Wall-clock seconds; not part of any reproducible output.
    pub wall_time: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub record: TimeSeriesRecord,
    pub log: Vec<LogEntry>,
    pub stats: RunStats,
}

impl RunOutput {
    pub fn log_text(&self) -> String {
        self.log.iter().map(|e| format!("{e}\n")).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitReport {
    pub iterations: usize,
    /// Largest state derivative relative to the owning rating, angles
    /// excluded.
    pub max_derivative: f64,
    /// Largest frequency difference between sources of one island, Hz.
    pub frequency_spread: f64,
}

/// A running simulation instance.
pub struct Simulation {
    pub net: NetworkModel,
    pub topo: TopologyState,
    pub devices: Vec<Device>,
    pub btb: Option<BtbInstance>,
    pub config: SimConfig,
    pub log: Vec<LogEntry>,
    pub(super) regulators: Vec<RegulatorController>,
    events: Vec<Event>,
    next_event: usize,
    ramps: Vec<Ramp>,
    channels: Vec<(String, Probe)>,
    pub(super) solver: Solver,
    pub(super) sys: AdmittanceSystem,
    pub(super) owners: Vec<SiteOwner>,
    pub(super) sol: NetworkSolution,
    pub(super) meas: Measurements,
    time: f64,
    step: u64,
    solves: u64,
    max_iterations_seen: usize,
    dead_bus: Vec<bool>,
    overloaded: Vec<bool>,
    initialized: bool,
}

impl Simulation {
    pub fn new(spec: SystemSpec, config: SimConfig) -> Result<Self, SimError> {
        config.validate().map_err(SimError::Config)?;
        let SystemSpec {
            network,
            devices,
            btb,
            mut events,
            channels,
        } = spec;
        for d in &devices {
            if d.bus >= network.buses.len() {
                return Err(SimError::UnknownTarget {
                    kind: "bus".into(),
                    target: format!("#{} of device {}", d.bus, d.id),
                });
            }
        }
        for e in &events {
            if !(e.time >= 0.0 && e.time <= config.duration + 1e-9) {
                return Err(SimError::EventTime {
                    time: e.time,
                    duration: config.duration,
                });
            }
        }
        // Stable sort keeps declaration order for equal times.
        events.sort_by(|a, b| a.time.total_cmp(&b.time));

        let topo = network.initial_state();
        let regulators = network
            .regulators()
            .map(|(b, _)| RegulatorController::new(b))
            .collect();
        let solver = Solver::new(SolverOptions {
            tolerance: config.tolerance,
            max_iterations: config.max_iterations,
            allow_dead_islands: true,
        });
        let sys = assemble_admittance(&network, &topo, &[]).map_err(|e| SimError::Network {
            time: 0.0,
            source: e,
        })?;
        let n_dev = devices.len();
        let mut sim = Simulation {
            sol: NetworkSolution::zeros(&sys),
            net: network,
            topo,
            devices,
            btb,
            config,
            log: Vec::new(),
            regulators,
            events,
            next_event: 0,
            ramps: Vec::new(),
            channels: Vec::new(),
            solver,
            sys,
            owners: Vec::new(),
            meas: Measurements::default(),
            time: 0.0,
            step: 0,
            solves: 0,
            max_iterations_seen: 0,
            dead_bus: vec![false; n_dev],
            overloaded: vec![false; n_dev],
            initialized: false,
        };
        for e in &sim.events {
            sim.check_target(&e.action)?;
        }
        let channels = if channels.is_empty() {
            sim.default_channels()
        } else {
            channels
        };
        let mut names = std::collections::HashSet::new();
        for c in &channels {
            if !names.insert(c.name.clone()) {
                return Err(SimError::Channel {
                    name: c.name.clone(),
                    reason: "duplicate channel name".into(),
                });
            }
            let probe = sim.resolve_channel(c)?;
            sim.channels.push((c.name.clone(), probe));
        }
        sim.reassemble()?;
        Ok(sim)
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn solution(&self) -> &NetworkSolution {
        &self.sol
    }

    pub fn admittance(&self) -> &AdmittanceSystem {
        &self.sys
    }

    pub fn device_index(&self, id: &str) -> Option<usize> {
        self.devices.iter().position(|d| d.id == id)
    }

    pub fn channel_names(&self) -> Vec<String> {
        self.channels.iter().map(|(n, _)| n.clone()).collect()
    }

    fn default_channels(&self) -> Vec<Channel> {
        let mut out = Vec::new();
        let ch = |name: String, target: &str, quantity| Channel {
            name,
            target: target.to_string(),
            quantity,
        };
        for d in &self.devices {
            out.push(ch(format!("P_{}", d.id), &d.id, Quantity::P));
            out.push(ch(format!("Q_{}", d.id), &d.id, Quantity::Q));
            if !matches!(d.model, DeviceModel::Gfl(_)) {
                out.push(ch(format!("f_{}", d.id), &d.id, Quantity::F));
            }
            out.push(ch(format!("V_{}", d.id), &d.id, Quantity::V));
        }
        if let Some(b) = &self.btb {
            for (n, q) in [
                ("P_A", Quantity::PA),
                ("P_B", Quantity::PB),
                ("Q_A", Quantity::QA),
                ("Q_B", Quantity::QB),
                ("Vdc", Quantity::Vdc),
                ("Vdc_pu", Quantity::VdcPu),
            ] {
                out.push(ch(format!("{}_{n}", b.id), &b.id, q));
            }
        }
        out
    }

    fn resolve_channel(&self, c: &Channel) -> Result<Probe, SimError> {
        let bad = |reason: &str| SimError::Channel {
            name: c.name.clone(),
            reason: reason.to_string(),
        };
        let is_btb = self.btb.as_ref().is_some_and(|b| b.id == c.target);
        if c.quantity == Quantity::Residual {
            return Ok(Probe::Residual);
        }
        if is_btb {
            return match c.quantity {
                Quantity::PA => Ok(Probe::BtbPA),
                Quantity::PB => Ok(Probe::BtbPB),
                Quantity::QA => Ok(Probe::BtbQA),
                Quantity::QB => Ok(Probe::BtbQB),
                Quantity::Vdc => Ok(Probe::Vdc),
                Quantity::VdcPu => Ok(Probe::VdcPu),
                _ => Err(bad("quantity not available for a converter")),
            };
        }
        if let Some(i) = self.device_index(&c.target) {
            return match c.quantity {
                Quantity::P => Ok(Probe::DeviceP(i)),
                Quantity::Q => Ok(Probe::DeviceQ(i)),
                Quantity::F if !matches!(self.devices[i].model, DeviceModel::Gfl(_)) => {
                    Ok(Probe::DeviceF(i))
                }
                Quantity::V => Ok(Probe::DeviceV(i)),
                _ => Err(bad("quantity not available for this device")),
            };
        }
        if let Some(i) = self.net.load_index(&c.target) {
            return match c.quantity {
                Quantity::P => Ok(Probe::LoadP(i)),
                Quantity::Q => Ok(Probe::LoadQ(i)),
                _ => Err(bad("quantity not available for a load")),
            };
        }
        if let Some(b) = self.net.branch_index(&c.target) {
            return match (c.quantity, &self.net.branches[b].kind) {
                (Quantity::Tap, BranchKind::Regulator(_)) => Ok(Probe::Tap(b)),
                _ => Err(bad("quantity not available for this branch")),
            };
        }
        if let Some(b) = self.net.bus_index(&c.target) {
            return match c.quantity {
                Quantity::V => Ok(Probe::BusV(b)),
                _ => Err(bad("quantity not available for a bus")),
            };
        }
        Err(bad(&format!("unknown target \"{}\"", c.target)))
    }

    fn unknown(kind: &str, target: &str) -> SimError {
        SimError::UnknownTarget {
            kind: kind.into(),
            target: target.into(),
        }
    }

    fn ref_target(&self, target: &str) -> Option<RefTarget> {
        if self.btb.as_ref().is_some_and(|b| b.id == target) {
            Some(RefTarget::Btb)
        } else {
            self.device_index(target).map(RefTarget::Device)
        }
    }

    fn switch_index(&self, target: &str) -> Result<usize, SimError> {
        match self.net.branch_index(target) {
            Some(b) if self.net.branches[b].is_switch() => Ok(b),
            _ => Err(Self::unknown("switch", target)),
        }
    }

    fn check_target(&self, a: &Action) -> Result<(), SimError> {
        match a {
            Action::EnergizeLoad { target } | Action::DeenergizeLoad { target } => self
                .net
                .load_index(target)
                .map(|_| ())
                .ok_or_else(|| Self::unknown("load", target)),
            Action::OpenSwitch { target } | Action::CloseSwitch { target } => {
                self.switch_index(target).map(|_| ())
            }
            Action::SetReference { target, .. } | Action::RampReference { target, .. } => self
                .ref_target(target)
                .map(|_| ())
                .ok_or_else(|| Self::unknown("device", target)),
            Action::Connect { target } | Action::Disconnect { target } => self
                .device_index(target)
                .map(|_| ())
                .ok_or_else(|| Self::unknown("device", target)),
        }
    }

    fn push_log(&mut self, kind: LogKind, message: String) {
        self.log.push(LogEntry {
            time: self.time,
            kind,
            message,
        });
    }

    // ---- network plumbing -------------------------------------------------

    pub(super) fn reassemble(&mut self) -> Result<(), SimError> {
        let mut sites = Vec::new();
        let mut owners = Vec::new();
        for (i, d) in self.devices.iter().enumerate() {
            if !d.online {
                continue;
            }
            let z = match &d.model {
                DeviceModel::Gfm(g) => g.impedance(),
                DeviceModel::Diesel(g) => g.impedance(),
                DeviceModel::Gfl(_) => continue,
            };
            sites.push(SourceSite { bus: d.bus, z });
            owners.push(SiteOwner::Device(i));
        }
        if let Some(b) = &self.btb {
            if let SideB::Gfm(g) = &b.conv.side_b {
                if !b.conv.tripped {
                    sites.push(SourceSite {
                        bus: b.bus_b,
                        z: g.impedance(),
                    });
                    owners.push(SiteOwner::BtbB);
                }
            }
        }
        self.sys =
            assemble_admittance(&self.net, &self.topo, &sites).map_err(|e| SimError::Network {
                time: self.time,
                source: e,
            })?;
        self.owners = owners;
        Ok(())
    }

    pub(super) fn injections(&self) -> DeviceInjections {
        let emf = self
            .owners
            .iter()
            .map(|o| match o {
                SiteOwner::Device(i) => match &self.devices[*i].model {
                    DeviceModel::Gfm(g) => g.emf(),
                    DeviceModel::Diesel(g) => g.emf(),
                    DeviceModel::Gfl(_) => unreachable!(),
                },
                SiteOwner::BtbB => match &self.btb.as_ref().unwrap().conv.side_b {
                    SideB::Gfm(g) => g.emf(),
                    SideB::Gfl(_) => unreachable!(),
                },
            })
            .collect();
        let mut power = Vec::new();
        for d in &self.devices {
            if let (true, DeviceModel::Gfl(g)) = (d.online, &d.model) {
                power.push(g.injection(d.bus));
            }
        }
        if let Some(b) = &self.btb {
            power.push(b.conv.side_a_injection(b.bus_a));
            if let Some(inj) = b.conv.side_b_injection(b.bus_b) {
                power.push(inj);
            }
        }
        DeviceInjections { emf, power }
    }

    pub(super) fn solve(&mut self) -> Result<NetworkSolution, SimError> {
        let inj = self.injections();
        let sol = self
            .solver
            .solve(&self.sys, &inj, &self.sol)
            .map_err(|e| SimError::Network {
                time: self.time,
                source: e,
            })?;
        self.solves += 1;
        self.max_iterations_seen = self.max_iterations_seen.max(sol.iterations);
        Ok(sol)
    }

    pub(super) fn measure(&self, sol: &NetworkSolution) -> Measurements {
        let mut out = Measurements::default();
        let inj = self.injections();
        let site_of = |i: usize| self.owners.iter().position(|o| *o == SiteOwner::Device(i));
        let mut k = 0;
        for (i, d) in self.devices.iter().enumerate() {
            let voltage = sol.bus_voltages(d.bus);
            let current = if !d.online {
                [Complex64::default(); 3]
            } else {
                match &d.model {
                    DeviceModel::Gfl(_) => {
                        let c = self.sys.injected_current(&inj.power[k], sol);
                        k += 1;
                        c
                    }
                    _ => {
                        let s = site_of(i).unwrap();
                        self.sys.source_current(s, &inj.emf[s], sol)
                    }
                }
            };
            out.devices.push(Measurement { voltage, current });
        }
        if let Some(b) = &self.btb {
            let va = sol.bus_voltages(b.bus_a);
            let ia = self.sys.injected_current(&inj.power[k], sol);
            // Side A is reported as power drawn from its AC island.
            out.btb_a = Measurement {
                voltage: va,
                current: ia.map(|c| -c),
            };
            let vb = sol.bus_voltages(b.bus_b);
            let ib = match &b.conv.side_b {
                SideB::Gfl(_) => self.sys.injected_current(&inj.power[k + 1], sol),
                SideB::Gfm(_) => match self.owners.iter().position(|o| *o == SiteOwner::BtbB) {
                    Some(s) => self.sys.source_current(s, &inj.emf[s], sol),
                    None => [Complex64::default(); 3],
                },
            };
            out.btb_b = Measurement {
                voltage: vb,
                current: ib,
            };
        }
        out
    }

    pub(super) fn refresh(&mut self) -> Result<(), SimError> {
        self.sol = self.solve()?;
        self.meas = self.measure(&self.sol);
        Ok(())
    }

    // ---- continuous states ------------------------------------------------

    fn state(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(3 * self.devices.len() + 5);
        for d in &self.devices {
            match &d.model {
                DeviceModel::Gfm(g) => x.extend(g.state()),
                DeviceModel::Diesel(g) => x.extend(g.state()),
                DeviceModel::Gfl(_) => {}
            }
        }
        if let Some(b) = &self.btb {
            x.extend(b.conv.state());
        }
        x
    }

    fn set_state(&mut self, x: &[f64]) -> Result<(), SimError> {
        let mut k = 0;
        for d in &mut self.devices {
            match &mut d.model {
                DeviceModel::Gfm(g) => {
                    g.set_state([x[k], x[k + 1], x[k + 2]]);
                    k += 3;
                }
                DeviceModel::Diesel(g) => {
                    g.set_state([x[k], x[k + 1], x[k + 2]]);
                    k += 3;
                }
                DeviceModel::Gfl(_) => {}
            }
        }
        if let Some(b) = &mut self.btb {
            let s = [x[k], x[k + 1], x[k + 2], x[k + 3], x[k + 4]];
            b.conv.set_state(&s).map_err(|e| SimError::Btb {
                time: self.time,
                source: e,
            })?;
        }
        Ok(())
    }

    pub(super) fn derivatives(&self, m: &Measurements) -> Vec<f64> {
        let mut dx = Vec::with_capacity(3 * self.devices.len() + 5);
        for (d, dm) in self.devices.iter().zip(&m.devices) {
            let frozen = !d.online;
            match &d.model {
                DeviceModel::Gfm(g) => dx.extend(if frozen { [0.0; 3] } else { g.derivatives(dm) }),
                DeviceModel::Diesel(g) => {
                    dx.extend(if frozen { [0.0; 3] } else { g.derivatives(dm) })
                }
                DeviceModel::Gfl(_) => {}
            }
        }
        if let Some(b) = &self.btb {
            let p_in = m.btb_a.power().re;
            let p_out = m.btb_b.power().re;
            dx.extend(b.conv.derivatives(p_in, p_out, &m.btb_b));
        }
        dx
    }

    // ---- events -----------------------------------------------------------

    fn apply_due_events(&mut self) -> Result<bool, SimError> {
        let mut dirty = false;
        let eps = 0.5 * self.config.dt;
        while self.next_event < self.events.len()
            && self.events[self.next_event].time <= self.time + eps
        {
            let ev = self.events[self.next_event].clone();
            self.next_event += 1;
            dirty |= self.apply_event(&ev)?;
        }
        Ok(dirty)
    }

    /// Applies one event now. Returns true when the network topology or
    /// source set changed.
    pub fn apply_event(&mut self, ev: &Event) -> Result<bool, SimError> {
        self.check_target(&ev.action)?;
        let name = ev.action.name();
        let target = ev.action.target().to_string();
        match &ev.action {
            Action::EnergizeLoad { .. } | Action::DeenergizeLoad { .. } => {
                let i = self.net.load_index(&target).unwrap();
                let on = matches!(ev.action, Action::EnergizeLoad { .. });
                if self.topo.load_energized[i] == on {
                    self.push_log(
                        LogKind::Warning,
                        format!("{name} {target}: already in that state"),
                    );
                    return Ok(false);
                }
                self.topo.load_energized[i] = on;
                self.push_log(LogKind::Event, format!("{name} {target}"));
                Ok(true)
            }
            Action::OpenSwitch { .. } | Action::CloseSwitch { .. } => {
                let b = self.switch_index(&target)?;
                let close = matches!(ev.action, Action::CloseSwitch { .. });
                if self.topo.switch_closed[b] == close {
                    self.push_log(
                        LogKind::Warning,
                        format!("{name} {target}: already in that state"),
                    );
                    return Ok(false);
                }
                self.topo.switch_closed[b] = close;
                self.push_log(LogKind::Event, format!("{name} {target}"));
                Ok(true)
            }
            Action::SetReference { p, q, .. } => {
                let t = self.ref_target(&target).unwrap();
                self.ramps.retain(|r| r.target != t);
                let (p0, q0) = self.reference(t);
                self.set_reference(t, p.unwrap_or(p0), q.unwrap_or(q0));
                self.push_log(
                    LogKind::Event,
                    format!("{name} {target} p={} q={}", fmt_opt(*p), fmt_opt(*q)),
                );
                Ok(false)
            }
            Action::RampReference { p, q, duration, .. } => {
                let t = self.ref_target(&target).unwrap();
                self.ramps.retain(|r| r.target != t);
                let (p0, q0) = self.reference(t);
                self.ramps.push(Ramp {
                    target: t,
                    t0: self.time,
                    t1: self.time + duration.max(0.0),
                    p: p.map(|p1| (p0, p1)),
                    q: q.map(|q1| (q0, q1)),
                });
                self.push_log(
                    LogKind::Event,
                    format!(
                        "{name} {target} p={} q={} over {duration} s",
                        fmt_opt(*p),
                        fmt_opt(*q)
                    ),
                );
                Ok(false)
            }
            Action::Connect { .. } | Action::Disconnect { .. } => {
                let i = self.device_index(&target).unwrap();
                let on = matches!(ev.action, Action::Connect { .. });
                if self.devices[i].online == on {
                    self.push_log(
                        LogKind::Warning,
                        format!("{name} {target}: already in that state"),
                    );
                    return Ok(false);
                }
                self.set_online(i, on);
                self.push_log(LogKind::Event, format!("{name} {target}"));
                Ok(true)
            }
        }
    }

    fn set_online(&mut self, i: usize, on: bool) {
        let terminal = self.sol.bus_voltages(self.devices[i].bus)[0];
        let d = &mut self.devices[i];
        d.online = on;
        self.dead_bus[i] = false;
        self.overloaded[i] = false;
        if !on {
            return;
        }
        // Connect with zero output, aligned to a live terminal if any.
        let angle = if terminal.norm() > 0.0 {
            terminal.arg()
        } else {
            0.0
        };
        match &mut d.model {
            DeviceModel::Gfm(g) => {
                g.theta = angle;
                g.p_f = 0.0;
                g.q_f = 0.0;
            }
            DeviceModel::Diesel(g) => {
                g.delta = angle;
                g.dw = 0.0;
                g.p_m = 0.0;
            }
            DeviceModel::Gfl(g) => {
                g.p_out = 0.0;
                g.q_out = 0.0;
            }
        }
    }

    fn reference(&self, t: RefTarget) -> (f64, f64) {
        match t {
            RefTarget::Device(i) => match &self.devices[i].model {
                DeviceModel::Gfm(g) => (g.p_ref, g.q_ref),
                DeviceModel::Gfl(g) => (g.p_cmd, g.q_cmd),
                DeviceModel::Diesel(g) => (g.p_ref, 0.0),
            },
            RefTarget::Btb => match &self.btb.as_ref().unwrap().conv.side_b {
                SideB::Gfl(g) => (g.p_cmd, g.q_cmd),
                SideB::Gfm(g) => (g.p_ref, g.q_ref),
            },
        }
    }

    fn set_reference(&mut self, t: RefTarget, p: f64, q: f64) {
        match t {
            RefTarget::Device(i) => match &mut self.devices[i].model {
                DeviceModel::Gfm(g) => {
                    g.p_ref = p;
                    g.q_ref = q;
                }
                DeviceModel::Gfl(g) => {
                    g.p_cmd = p;
                    g.q_cmd = q;
                }
                DeviceModel::Diesel(g) => g.p_ref = p,
            },
            RefTarget::Btb => match &mut self.btb.as_mut().unwrap().conv.side_b {
                SideB::Gfl(g) => {
                    g.p_cmd = p;
                    g.q_cmd = q;
                }
                SideB::Gfm(g) => {
                    g.p_ref = p;
                    g.q_ref = q;
                }
            },
        }
    }

    fn advance_ramps(&mut self, t: f64) {
        let ramps = std::mem::take(&mut self.ramps);
        let mut keep = Vec::with_capacity(ramps.len());
        for r in ramps {
            let s = if r.t1 > r.t0 {
                ((t - r.t0) / (r.t1 - r.t0)).clamp(0.0, 1.0)
            } else {
                1.0
            };
            let (p0, q0) = self.reference(r.target);
            let p = r.p.map_or(p0, |(a, b)| a + (b - a) * s);
            let q = r.q.map_or(q0, |(a, b)| a + (b - a) * s);
            self.set_reference(r.target, p, q);
            if s < 1.0 {
                keep.push(r);
            }
        }
        self.ramps = keep;
    }

    // ---- discrete updates -------------------------------------------------

    /// Ramp limiters and command schedules, evaluated for the end of the
    /// step so that the corrector pass sees the new outputs.
    fn advance_commands(&mut self, t_next: f64) {
        self.advance_ramps(t_next);
        let dt = self.config.dt;
        let mut idle = Vec::new();
        for (i, d) in self.devices.iter_mut().enumerate() {
            if let (true, DeviceModel::Gfl(g)) = (d.online, &mut d.model) {
                let v = self.meas.devices[i].voltage_magnitude();
                let out = g.step(v, dt);
                if out.dead_bus && !self.dead_bus[i] {
                    idle.push(i);
                }
                self.dead_bus[i] = out.dead_bus;
            }
        }
        for i in idle {
            let id = self.devices[i].id.clone();
            self.push_log(
                LogKind::Warning,
                format!("{id} idle: terminal below sync threshold"),
            );
        }
        if let Some(b) = &mut self.btb {
            let v = self.meas.btb_b.voltage_magnitude();
            b.conv.power_side_step(v, dt);
        }
    }

    /// Regulators, trips and converter state machine. Returns true when the
    /// admittance must be rebuilt.
    fn end_of_step(&mut self) -> Result<bool, SimError> {
        let dt = self.config.dt;
        let mut dirty = false;
        for k in 0..self.regulators.len() {
            let b = self.regulators[k].branch;
            let BranchKind::Regulator(spec) = &self.net.branches[b].kind else {
                continue;
            };
            let monitored = RegulatorController::monitored_voltage(&self.net, spec, &self.sol);
            let tap = self.topo.taps[b];
            let decision = self.regulators[k].update(spec, monitored, tap, dt);
            let id = self.net.branches[b].id.clone();
            match decision {
                TapDecision::Hold => {}
                TapDecision::Raise | TapDecision::Lower => {
                    let next = tap
                        + if decision == TapDecision::Raise {
                            1
                        } else {
                            -1
                        };
                    self.topo.taps[b] = next;
                    self.push_log(
                        LogKind::Tap,
                        format!("regulator {id} tap {tap} -> {next} (monitored {monitored:.2} V)"),
                    );
                    dirty = true;
                }
                TapDecision::Saturated => {
                    self.push_log(
                        LogKind::Warning,
                        format!("regulator {id} saturated at tap {tap}"),
                    );
                }
            }
        }
        let mut events = Vec::new();
        for (i, d) in self.devices.iter_mut().enumerate() {
            if !d.online {
                continue;
            }
            match &d.model {
                DeviceModel::Diesel(g) if g.tripped() => {
                    events.push((
                        LogKind::Trip,
                        format!("{} speed deviation {:.4} pu beyond limit", d.id, g.dw),
                    ));
                    d.online = false;
                    dirty = true;
                }
                DeviceModel::Gfm(g) => {
                    let over = g.overloaded();
                    if over && !self.overloaded[i] {
                        events.push((
                            LogKind::Warning,
                            format!("{} overload: filtered power {:.0} W", d.id, g.p_f),
                        ));
                    }
                    self.overloaded[i] = over;
                }
                _ => {}
            }
        }
        if let Some(b) = &mut self.btb {
            if b.conv.update_precharge() {
                events.push((
                    LogKind::Info,
                    format!(
                        "{} DC link charged to {:.1} V; transfer enabled",
                        b.id, b.conv.dc.vdc
                    ),
                ));
            }
            if !b.conv.enabled && !b.conv.tripped && self.time + dt > b.conv.precharge.timeout {
                b.conv.tripped = true;
                events.push((
                    LogKind::Trip,
                    format!("{} pre-charge timeout at {:.1} V", b.id, b.conv.dc.vdc),
                ));
                dirty = true;
            }
            if b.conv.check_protection() {
                events.push((
                    LogKind::Trip,
                    format!(
                        "{} DC-link voltage {:.4} pu outside protection band",
                        b.id,
                        b.conv.dc.pu()
                    ),
                ));
                dirty = true;
            }
        }
        for (kind, msg) in events {
            self.log.push(LogEntry {
                time: self.time + dt,
                kind,
                message: msg,
            });
        }
        Ok(dirty)
    }

    // ---- stepping ---------------------------------------------------------

    /// Advances one step of `dt` with Heun's method.
    pub fn step(&mut self) -> Result<(), SimError> {
        if !self.initialized {
            self.initialize()?;
        }
        if self.apply_due_events()? {
            self.reassemble()?;
            self.refresh()?;
        }
        let dt = self.config.dt;
        let x0 = self.state();
        let k1 = self.derivatives(&self.meas);
        let t_next = (self.step + 1) as f64 * dt;
        self.advance_commands(t_next);

        let pred: Vec<f64> = x0.iter().zip(&k1).map(|(x, k)| x + dt * k).collect();
        self.set_state(&pred)?;
        self.time = t_next;
        let sol = self.solve()?;
        let m = self.measure(&sol);
        let k2 = self.derivatives(&m);
        self.sol = sol;

        let corr: Vec<f64> = (0..x0.len())
            .map(|i| x0[i] + 0.5 * dt * (k1[i] + k2[i]))
            .collect();
        self.set_state(&corr)?;
        self.refresh()?;
        self.time = (self.step as f64) * dt;
        let dirty = self.end_of_step()?;
        self.step += 1;
        self.time = t_next;
        if dirty {
            self.reassemble()?;
            self.refresh()?;
        }
        Ok(())
    }

    pub(super) fn initialize(&mut self) -> Result<InitReport, SimError> {
        // The relaxation needs a solution well below the run tolerance.
        let tol = self.solver.options.tolerance;
        self.solver.options.tolerance = tol.min(INIT_TOLERANCE_PU * crate::SYSTEM_BASE_VA);
        let report = self.init_steady_state();
        self.solver.options.tolerance = tol;
        let report = report?;
        self.initialized = true;
        Ok(report)
    }

    fn sample(&self) -> Vec<f64> {
        let inj_needed = self
            .channels
            .iter()
            .any(|(_, p)| matches!(p, Probe::Residual));
        let residual = if inj_needed {
            power_balance(&self.net, &self.sys, &self.injections(), &self.sol).residual
        } else {
            0.0
        };
        self.channels
            .iter()
            .map(|(_, p)| self.probe(*p, residual))
            .collect()
    }

    fn probe(&self, p: Probe, residual: f64) -> f64 {
        let m = &self.meas;
        match p {
            Probe::DeviceP(i) => m.devices[i].power().re,
            Probe::DeviceQ(i) => m.devices[i].power().im,
            Probe::DeviceF(i) => {
                let d = &self.devices[i];
                if !d.online {
                    return 0.0;
                }
                match &d.model {
                    DeviceModel::Gfm(g) => g.frequency(),
                    DeviceModel::Diesel(g) => g.frequency(),
                    DeviceModel::Gfl(_) => 0.0,
                }
            }
            Probe::DeviceV(i) => m.devices[i].voltage_magnitude(),
            Probe::LoadP(i) => self.sol.load_power(&self.net, &self.sys, i).re,
            Probe::LoadQ(i) => self.sol.load_power(&self.net, &self.sys, i).im,
            Probe::BusV(b) => self.sol.bus_magnitude(&self.net, b),
            Probe::BtbPA => m.btb_a.power().re,
            Probe::BtbPB => m.btb_b.power().re,
            Probe::BtbQA => m.btb_a.power().im,
            Probe::BtbQB => m.btb_b.power().im,
            Probe::Vdc => self.btb.as_ref().map_or(0.0, |b| b.conv.dc.vdc),
            Probe::VdcPu => self.btb.as_ref().map_or(0.0, |b| b.conv.dc.pu()),
            Probe::Tap(b) => self.topo.taps[b] as f64,
            Probe::Residual => residual,
        }
    }

    /// Complex-power balance residual of the present solution, VA.
    pub fn balance_residual(&self) -> f64 {
        power_balance(&self.net, &self.sys, &self.injections(), &self.sol).residual
    }

    /// Initializes and runs to the configured duration.
    pub fn run(mut self) -> Result<RunOutput, SimError> {
        let start = Instant::now();
        if !self.initialized {
            self.initialize()?;
        }
        let names = self.channel_names();
        let mut record = TimeSeriesRecord::new(names);
        let mut max_residual: f64 = self.balance_residual();
        record.push(0.0, self.sample());
        let steps = self.config.steps();
        let dec = self.config.decimation as u64;
        for _ in 0..steps {
            self.step()?;
            if self.step % dec == 0 {
                max_residual = max_residual.max(self.balance_residual());
                record.push(self.time, self.sample());
            }
        }
        let stats = RunStats {
            steps,
            solves: self.solves,
            factorizations: self.solver.factorizations,
            max_newton_iterations: self.max_iterations_seen,
            max_residual,
            wall_time: start.elapsed().as_secs_f64(),
        };
        Ok(RunOutput {
            record,
            log: self.log,
            stats,
        })
    }

    /// The present measurements of device `i`.
    pub fn device_measurement(&self, i: usize) -> Measurement {
        self.meas.devices[i]
    }

    /// Power drawn by converter side A and delivered by side B, W.
    pub fn btb_powers(&self) -> (f64, f64) {
        (self.meas.btb_a.power().re, self.meas.btb_b.power().re)
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or("-".to_string(), super::format_g9)
}
