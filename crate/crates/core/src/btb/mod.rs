//! Back-to-back AC-DC-AC converter.
//!
//! Side A regulates the DC-link voltage and behaves as a grid-following
//! source in its AC island. Side B controls the transferred power, either
//! as a grid-following injection following a schedule or as a grid-forming
//! source whose output is drawn from the DC link. The two AC sides are
//! coupled only through the DC energy balance.

mod dclink;
mod pi;

pub use dclink::{dc_link_step, DcLinkState};
pub use pi::{vdc_regulator_step, VdcCommand, VdcPi};

use num_complex::Complex64;

use crate::devices::{GflInverter, GfmInverter, Measurement};
use crate::netmodel::PowerInjection;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BtbError {
    #[error("DC-link voltage collapsed to zero")]
    Collapsed,
    #[error("pre-charge did not reach nominal voltage within {0} s")]
    PrechargeTimeout(f64),
}

/// Power-control side of the converter.
#[derive(Debug, Clone, PartialEq)]
pub enum SideB {
    Gfl(GflInverter),
    Gfm(GfmInverter),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Precharge {
    /// Charging power ceiling, W.
    pub p_limit: f64,
    /// Energy taper time constant near nominal, s.
    pub tau: f64,
    /// Relative voltage error below which power transfer is enabled.
    pub tolerance: f64,
    /// s.
    pub timeout: f64,
}

impl Default for Precharge {
    fn default() -> Self {
        Precharge {
            p_limit: 1.0e5,
            tau: 0.02,
            tolerance: 0.01,
            timeout: 10.0,
        }
    }
}

impl Precharge {
    /// Charging power at the present link energy.
    pub fn power(&self, dc: &DcLinkState) -> f64 {
        ((dc.nominal_energy() - dc.energy()) / self.tau).clamp(0.0, self.p_limit)
    }

    pub fn done(&self, dc: &DcLinkState) -> bool {
        (dc.pu() - 1.0).abs() < self.tolerance
    }
}

/// Sampled DC-link build-up.
#[derive(Debug, Clone, PartialEq)]
pub struct PrechargeTrace {
    pub time: Vec<f64>,
    pub vdc: Vec<f64>,
    /// First instant at which transfer would be enabled.
    pub enable_time: f64,
}

/// Charges the link from `dc` under the pre-charge law for `duration`
/// seconds. Fails if the enable threshold is not reached within the
/// timeout.
pub fn precharge(
    dc: &DcLinkState,
    law: &Precharge,
    dt: f64,
    duration: f64,
) -> Result<PrechargeTrace, BtbError> {
    let mut state = *dc;
    let steps = (duration / dt).round() as usize;
    let mut trace = PrechargeTrace {
        time: vec![0.0],
        vdc: vec![state.vdc],
        enable_time: if law.done(&state) { 0.0 } else { f64::NAN },
    };
    for n in 1..=steps {
        state = dc_link_step(&state, law.power(&state), 0.0, 0.0, dt)?;
        let t = n as f64 * dt;
        trace.time.push(t);
        trace.vdc.push(state.vdc);
        if trace.enable_time.is_nan() && law.done(&state) {
            trace.enable_time = t;
        }
        if trace.enable_time.is_nan() && t >= law.timeout {
            return Err(BtbError::PrechargeTimeout(law.timeout));
        }
    }
    if trace.enable_time.is_nan() && duration >= law.timeout {
        return Err(BtbError::PrechargeTimeout(law.timeout));
    }
    Ok(trace)
}

/// Continuous states of the converter: link energy, PI integrator and the
/// grid-forming states of side B when present.
pub type BtbState = [f64; 5];

#[derive(Debug, Clone, PartialEq)]
pub struct BtbConverter {
    pub rating_a: f64,
    pub rating_b: f64,
    pub dc: DcLinkState,
    pub pi: VdcPi,
    pub side_a_current_limit: f64,
    pub side_b: SideB,
    /// Loss per conversion stage as a fraction of the stage power.
    pub loss_fraction: f64,
    pub precharge: Precharge,
    /// Protection band, pu of nominal DC voltage.
    pub protection: (f64, f64),
    /// Side-B power added per pu of DC voltage error, pu of rating. Zero
    /// disables the hook.
    pub vdc_droop: f64,
    /// Power transfer is allowed and protection is armed.
    pub enabled: bool,
    pub tripped: bool,
}

impl BtbConverter {
    pub fn new(rating: f64, dc: DcLinkState, side_b: SideB, v_ac_nominal: f64) -> Self {
        let precharge = Precharge::default();
        BtbConverter {
            rating_a: rating,
            rating_b: rating,
            pi: VdcPi::for_rating(rating, dc.v_nominal),
            side_a_current_limit: 1.1 * rating / (3.0 * v_ac_nominal),
            side_b,
            loss_fraction: 0.0,
            enabled: precharge.done(&dc),
            precharge,
            protection: (0.8, 1.2),
            vdc_droop: 0.0,
            tripped: false,
            dc,
        }
    }

    /// Power drawn by side A from its AC island at the present state.
    pub fn side_a_power(&self) -> f64 {
        if self.tripped {
            0.0
        } else if self.enabled {
            self.pi.command(self.dc.vdc, self.dc.v_nominal)
        } else {
            self.precharge.power(&self.dc)
        }
    }

    pub fn side_a_injection(&self, bus: usize) -> PowerInjection {
        PowerInjection {
            bus,
            s: Complex64::new(-self.side_a_power(), 0.0),
            current_limit: self.side_a_current_limit,
        }
    }

    /// Side B as a power injection, `None` in grid-forming mode or when the
    /// side carries no power.
    pub fn side_b_injection(&self, bus: usize) -> Option<PowerInjection> {
        match &self.side_b {
            SideB::Gfl(g) => {
                let mut inj = g.injection(bus);
                if self.tripped || !self.enabled {
                    inj.s = Complex64::default();
                } else if self.vdc_droop != 0.0 {
                    let extra = self.vdc_droop * (self.dc.pu() - 1.0) * self.rating_b;
                    inj.s.re = (inj.s.re + extra).clamp(-self.rating_b, self.rating_b);
                }
                Some(inj)
            }
            SideB::Gfm(_) => None,
        }
    }

    pub fn loss(&self, p_in: f64, p_out: f64) -> f64 {
        self.loss_fraction * (p_in.abs() + p_out.abs())
    }

    pub fn state(&self) -> BtbState {
        let g = match &self.side_b {
            SideB::Gfm(g) => g.state(),
            SideB::Gfl(_) => [0.0; 3],
        };
        [self.dc.energy(), self.pi.integrator, g[0], g[1], g[2]]
    }

    pub fn set_state(&mut self, x: &BtbState) -> Result<(), BtbError> {
        self.dc = self.dc.with_energy(x[0])?;
        self.pi.integrator = x[1];
        if let SideB::Gfm(g) = &mut self.side_b {
            g.set_state([x[2], x[3], x[4]]);
        }
        Ok(())
    }

    /// State derivatives given the measured AC powers: `p_in` drawn by side
    /// A, `p_out` delivered by side B, and the side-B terminal measurement.
    pub fn derivatives(&self, p_in: f64, p_out: f64, side_b: &Measurement) -> BtbState {
        if self.tripped {
            return [0.0; 5];
        }
        let dw = p_in - p_out - self.loss(p_in, p_out);
        let di = if self.enabled {
            self.pi.integrator_rate(self.dc.vdc, self.dc.v_nominal)
        } else {
            0.0
        };
        let g = match &self.side_b {
            SideB::Gfm(g) => g.derivatives(side_b),
            SideB::Gfl(_) => [0.0; 3],
        };
        [dw, di, g[0], g[1], g[2]]
    }

    /// Advances the side-B ramp limiter (grid-following mode).
    pub fn power_side_step(&mut self, terminal: f64, dt: f64) {
        if let SideB::Gfl(g) = &mut self.side_b {
            if self.enabled && !self.tripped {
                g.step(terminal, dt);
            }
        }
    }

    /// Enables transfer once the link is charged; the integrator is
    /// preloaded with the charging power so that the handover is bumpless.
    /// Returns true on the transition.
    pub fn update_precharge(&mut self) -> bool {
        if self.enabled || self.tripped || !self.precharge.done(&self.dc) {
            return false;
        }
        let p = self.precharge.power(&self.dc);
        self.pi.preload(p, self.dc.vdc, self.dc.v_nominal);
        self.enabled = true;
        true
    }

    /// Trips the converter when an armed link leaves the protection band.
    /// Returns true on the transition.
    pub fn check_protection(&mut self) -> bool {
        if self.tripped || !self.enabled {
            return false;
        }
        let v = self.dc.pu();
        if v < self.protection.0 || v > self.protection.1 {
            self.tripped = true;
            if let SideB::Gfl(g) = &mut self.side_b {
                g.p_out = 0.0;
                g.q_out = 0.0;
            }
            return true;
        }
        false
    }
}

#[cfg(test)]
mod tests;
