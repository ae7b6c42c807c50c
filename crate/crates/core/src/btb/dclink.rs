use serde::{Deserialize, Serialize};

use super::BtbError;

/// DC capacitor of the converter. The integrated quantity is the stored
/// energy `½·C·Vdc²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DcLinkState {
    pub vdc: f64,
    pub v_nominal: f64,
    /// F.
    pub capacitance: f64,
}

impl DcLinkState {
    pub fn new(vdc: f64, v_nominal: f64, capacitance: f64) -> Self {
        DcLinkState {
            vdc,
            v_nominal,
            capacitance,
        }
    }

    pub fn energy(&self) -> f64 {
        0.5 * self.capacitance * self.vdc * self.vdc
    }

    pub fn nominal_energy(&self) -> f64 {
        0.5 * self.capacitance * self.v_nominal * self.v_nominal
    }

    pub fn pu(&self) -> f64 {
        self.vdc / self.v_nominal
    }

    pub fn with_energy(&self, w: f64) -> Result<Self, BtbError> {
        if !(w > 0.0) {
            return Err(BtbError::Collapsed);
        }
        Ok(DcLinkState {
            vdc: (2.0 * w / self.capacitance).sqrt(),
            ..*self
        })
    }
}

/// Advances the DC link by `dt` with constant terminal powers.
pub fn dc_link_step(
    state: &DcLinkState,
    p_in: f64,
    p_out: f64,
    p_loss: f64,
    dt: f64,
) -> Result<DcLinkState, BtbError> {
    if !(state.vdc > 0.0) || !(dt > 0.0) {
        return Err(BtbError::Collapsed);
    }
    state.with_energy(state.energy() + (p_in - p_out - p_loss) * dt)
}
