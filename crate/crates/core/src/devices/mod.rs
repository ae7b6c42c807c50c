//! Dynamic models of the distributed energy resources.
//!
//! Every model exposes its continuous states as a small array together with
//! a derivative function of the terminal measurement, so that the engine
//! can integrate all devices with one scheme. Discrete behavior (ramp
//! limiters, trips) is handled by separate update methods.

mod diesel;
mod gfl;
mod gfm;
mod sharing;

pub use diesel::{DieselGen, DieselParams};
pub use gfl::{GflInverter, GflOutput};
pub use gfm::{GfmInverter, GfmOutput, GfmParams};
pub use sharing::{power_sharing_check, DroopShare, SharingReport};

use num_complex::Complex64;

/// Terminal phasors seen by a device: line-to-neutral voltages and the
/// current the device delivers into the network, per phase.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Measurement {
    pub voltage: [Complex64; 3],
    pub current: [Complex64; 3],
}

impl Measurement {
    /// Complex power delivered to the network, VA.
    pub fn power(&self) -> Complex64 {
        (0..3)
            .map(|p| self.voltage[p] * self.current[p].conj())
            .sum()
    }

    /// Mean voltage magnitude over phases with non-zero voltage.
    pub fn voltage_magnitude(&self) -> f64 {
        let live: Vec<f64> = self
            .voltage
            .iter()
            .map(|v| v.norm())
            .filter(|m| *m > 0.0)
            .collect();
        if live.is_empty() {
            0.0
        } else {
            live.iter().sum::<f64>() / live.len() as f64
        }
    }
}

/// Base impedance per phase for a three-phase device of `rating` VA at
/// line-to-neutral voltage `v_ln`.
pub fn base_impedance(v_ln: f64, rating: f64) -> f64 {
    3.0 * v_ln * v_ln / rating
}

/// Balanced three-phase EMF of magnitude `mag` at angle `theta`.
pub(crate) fn balanced_emf(mag: f64, theta: f64) -> [Complex64; 3] {
    let base = Complex64::from_polar(mag, theta);
    crate::phase::Phase::ALL.map(|p| base * p.rotation())
}
