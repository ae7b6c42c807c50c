use super::sim::{Simulation, SiteOwner};
use super::{DeviceModel, InitReport, SimError};
use crate::btb::SideB;
use crate::netmodel::{BranchKind, NetworkError, RegulatorController};

const MAX_RELAXATION: usize = 2000;
const ANGLE_TOL: f64 = 1e-11;
const VOLTAGE_TOL: f64 = 1e-10;

/// Droop source taking part in the angle relaxation.
struct Former {
    owner: SiteOwner,
    island: usize,
    /// Steady-state pu frequency droop.
    droop: f64,
    /// Coupling reactance, pu on own rating.
    x_pu: f64,
    rating: f64,
}

impl Simulation {
    fn formers(&self) -> Vec<Former> {
        self.owners
            .iter()
            .map(|&owner| {
                let (bus, droop, x_pu, rating) = match owner {
                    SiteOwner::Device(i) => {
                        let d = &self.devices[i];
                        match &d.model {
                            DeviceModel::Gfm(g) => {
                                (d.bus, g.params.m_p, g.params.x_pu, g.params.rating)
                            }
                            DeviceModel::Diesel(g) => (
                                d.bus,
                                g.params.effective_droop(),
                                g.params.xd_pu,
                                g.params.rating,
                            ),
                            DeviceModel::Gfl(_) => unreachable!(),
                        }
                    }
                    SiteOwner::BtbB => {
                        let b = self.btb.as_ref().unwrap();
                        let SideB::Gfm(g) = &b.conv.side_b else {
                            unreachable!()
                        };
                        (b.bus_b, g.params.m_p, g.params.x_pu, g.params.rating)
                    }
                };
                Former {
                    owner,
                    island: self.sys.island_of_bus(bus),
                    droop,
                    x_pu,
                    rating,
                }
            })
            .collect()
    }

    /// Implied pu frequency deviation of a former at measured power `p`.
    fn implied_deviation(&self, f: &Former, p: f64) -> f64 {
        let p_ref = match f.owner {
            SiteOwner::Device(i) => match &self.devices[i].model {
                DeviceModel::Gfm(g) => g.p_ref,
                DeviceModel::Diesel(g) => g.p_ref,
                DeviceModel::Gfl(_) => 0.0,
            },
            SiteOwner::BtbB => match &self.btb.as_ref().unwrap().conv.side_b {
                SideB::Gfm(g) => g.p_ref,
                SideB::Gfl(_) => 0.0,
            },
        };
        -f.droop * (p - p_ref) / f.rating
    }

    fn former_power(&self, f: &Former) -> num_complex::Complex64 {
        match f.owner {
            SiteOwner::Device(i) => self.meas.devices[i].power(),
            SiteOwner::BtbB => self.meas.btb_b.power(),
        }
    }

    fn rotate_former(&mut self, f: &Former, d_angle: f64) {
        match f.owner {
            SiteOwner::Device(i) => match &mut self.devices[i].model {
                DeviceModel::Gfm(g) => g.theta += d_angle,
                DeviceModel::Diesel(g) => g.delta += d_angle,
                DeviceModel::Gfl(_) => {}
            },
            SiteOwner::BtbB => {
                if let SideB::Gfm(g) = &mut self.btb.as_mut().unwrap().conv.side_b {
                    g.theta += d_angle;
                }
            }
        }
    }

    /// Puts grid-following outputs at their commands and the converter at
    /// a balanced operating point.
    fn settle_algebraic(&mut self) {
        for i in 0..self.devices.len() {
            let live = self.sys.islands[self.sys.bus_island[self.devices[i].bus]].energized();
            let d = &mut self.devices[i];
            if let (true, DeviceModel::Gfl(g)) = (d.online, &mut d.model) {
                let (p, q) = if live {
                    g.limited_command()
                } else {
                    (0.0, 0.0)
                };
                g.p_out = p;
                g.q_out = q;
            }
        }
        if let Some(b) = &mut self.btb {
            let live_b = self.sys.islands[self.sys.bus_island[b.bus_b]].energized();
            let conv = &mut b.conv;
            if let SideB::Gfl(g) = &mut conv.side_b {
                let (p, q) = if live_b && conv.enabled {
                    g.limited_command()
                } else {
                    (0.0, 0.0)
                };
                g.p_out = p;
                g.q_out = q;
            }
            if conv.enabled {
                let p_out = self.meas.btb_b.power().re;
                let draw = p_out + conv.loss_fraction * p_out.abs();
                let p_in = draw / (1.0 - conv.loss_fraction);
                conv.pi.preload(p_in, conv.dc.vdc, conv.dc.v_nominal);
            }
        }
    }

    /// One relaxation sweep. Returns the largest angle and voltage
    /// corrections applied.
    fn relax(&mut self, formers: &[Former]) -> (f64, f64) {
        let n_islands = self.sys.islands.len();
        let mut num = vec![0.0; n_islands];
        let mut den = vec![0.0; n_islands];
        let eps: Vec<f64> = formers
            .iter()
            .map(|f| self.implied_deviation(f, self.former_power(f).re))
            .collect();
        for (f, e) in formers.iter().zip(&eps) {
            let k = f.rating / f.droop;
            num[f.island] += k * e;
            den[f.island] += k;
        }
        let mut max_angle: f64 = 0.0;
        for (f, e) in formers.iter().zip(&eps) {
            let mean = num[f.island] / den[f.island];
            // Under-loaded sources advance; the gain inverts the local
            // angle-to-frequency sensitivity with a factor of one half.
            let d = 0.5 * (e - mean) * f.x_pu / f.droop;
            max_angle = max_angle.max((e - mean).abs());
            self.rotate_former(f, d);
        }

        let mut max_v: f64 = 0.0;
        for f in formers {
            let s = self.former_power(f);
            match f.owner {
                SiteOwner::Device(i) => {
                    let v = self.meas.devices[i].voltage_magnitude();
                    match &mut self.devices[i].model {
                        DeviceModel::Gfm(g) => {
                            max_v = max_v.max((s.im - g.q_f).abs() / g.params.rating);
                            g.p_f = s.re;
                            g.q_f = s.im;
                        }
                        DeviceModel::Diesel(g) => {
                            // Excitation held so that the terminal sits at nominal.
                            let r = g.v_nominal / v;
                            max_v = max_v.max((r - 1.0).abs());
                            g.e *= 1.0 + 0.5 * (r - 1.0);
                        }
                        DeviceModel::Gfl(_) => {}
                    }
                }
                SiteOwner::BtbB => {
                    if let SideB::Gfm(g) = &mut self.btb.as_mut().unwrap().conv.side_b {
                        max_v = max_v.max((s.im - g.q_f).abs() / g.params.rating);
                        g.p_f = s.re;
                        g.q_f = s.im;
                    }
                }
            }
        }
        (max_angle, max_v)
    }

    fn finalize_machines(&mut self, formers: &[Former]) {
        for f in formers {
            let p = self.former_power(f).re;
            let e = self.implied_deviation(f, p);
            if let SiteOwner::Device(i) = f.owner {
                if let DeviceModel::Diesel(g) = &mut self.devices[i].model {
                    g.dw = e;
                    g.p_m =
                        (g.p_ref - e / g.params.r * g.params.rating).clamp(0.0, g.params.rating);
                }
            }
        }
    }

    /// Solves the t = 0 network and back-initializes device states so that
    /// all non-angle derivatives vanish. Regulators are moved directly to
    /// taps that put their monitored voltage inside the band.
    pub(super) fn init_steady_state(&mut self) -> Result<InitReport, SimError> {
        // Islands with energized loads and no source cannot be initialized.
        for isl in &self.sys.islands {
            if !isl.energized() && isl.load_terms.iter().any(|t| t.s.norm() > 0.0) {
                return Err(SimError::Network {
                    time: 0.0,
                    source: NetworkError::NoSource {
                        bus: self.sys.bus_ids[isl.buses[0]].clone(),
                    },
                });
            }
        }
        let mut iterations = 0;
        for _outer in 0..64 {
            let formers = self.formers();
            let mut converged = false;
            for _ in 0..MAX_RELAXATION {
                self.refresh()?;
                self.settle_algebraic();
                self.refresh()?;
                let (da, dv) = self.relax(&formers);
                iterations += 1;
                if da < ANGLE_TOL && dv < VOLTAGE_TOL {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(SimError::Init(format!(
                    "droop relaxation did not settle in {MAX_RELAXATION} sweeps"
                )));
            }
            self.refresh()?;
            self.finalize_machines(&formers);

            let mut moved = false;
            for k in 0..self.regulators.len() {
                let b = self.regulators[k].branch;
                let BranchKind::Regulator(spec) = &self.net.branches[b].kind else {
                    continue;
                };
                let v = RegulatorController::monitored_voltage(&self.net, spec, &self.sol);
                if v <= 0.0 {
                    continue;
                }
                let tap = self.topo.taps[b];
                let half = 0.5 * spec.band_width;
                let next = if v < spec.band_center - half {
                    tap + 1
                } else if v > spec.band_center + half {
                    tap - 1
                } else {
                    tap
                };
                if next != tap && next.abs() <= spec.tap_range {
                    self.topo.taps[b] = next;
                    moved = true;
                }
            }
            if !moved {
                break;
            }
            self.reassemble()?;
        }
        self.refresh()?;
        self.finalize_machines(&self.formers());

        let formers = self.formers();
        let dx = self.derivatives(&self.meas);
        let mut max_derivative: f64 = 0.0;
        let mut k = 0;
        for d in &self.devices {
            match &d.model {
                DeviceModel::Gfm(g) => {
                    if d.online {
                        max_derivative = max_derivative
                            .max(dx[k + 1].abs() / g.params.rating)
                            .max(dx[k + 2].abs() / g.params.rating);
                    }
                    k += 3;
                }
                DeviceModel::Diesel(g) => {
                    if d.online {
                        max_derivative = max_derivative
                            .max(dx[k + 1].abs())
                            .max(dx[k + 2].abs() / g.params.rating);
                    }
                    k += 3;
                }
                DeviceModel::Gfl(_) => {}
            }
        }
        if let Some(b) = &self.btb {
            if b.conv.enabled {
                max_derivative = max_derivative
                    .max(dx[k].abs() / b.conv.rating_a)
                    .max(dx[k + 1].abs() / b.conv.rating_a);
            }
        }
        let mut spread: f64 = 0.0;
        for a in &formers {
            for c in &formers {
                if a.island == c.island {
                    let fa = self.implied_deviation(a, self.former_power(a).re);
                    let fc = self.implied_deviation(c, self.former_power(c).re);
                    spread = spread.max((fa - fc).abs() * 60.0);
                }
            }
        }
        Ok(InitReport {
            iterations,
            max_derivative,
            frequency_spread: spread,
        })
    }

    /// Runs the steady-state initialization explicitly.
    pub fn init(&mut self) -> Result<InitReport, SimError> {
        self.initialize()
    }
}
