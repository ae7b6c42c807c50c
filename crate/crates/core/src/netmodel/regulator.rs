use super::{NetworkModel, NetworkSolution, RegulatorSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TapDecision {
    Hold,
    Raise,
    Lower,
    /// A change was due but the tap is already at its range limit.
    Saturated,
}

/// Dead-band tap controller with a dwell timer. One instance per regulator.
#[derive(Debug, Clone, PartialEq)]
pub struct RegulatorController {
    pub branch: usize,
    timer: f64,
    direction: i8,
}

impl RegulatorController {
    pub fn new(branch: usize) -> Self {
        RegulatorController {
            branch,
            timer: 0.0,
            direction: 0,
        }
    }

    /// Mean monitored voltage magnitude used for control.
    pub fn monitored_voltage(
        net: &NetworkModel,
        spec: &RegulatorSpec,
        sol: &NetworkSolution,
    ) -> f64 {
        sol.bus_magnitude(net, spec.monitored_bus)
    }

    /// Advances the dwell timer by `dt` and decides on a tap change.
    pub fn update(
        &mut self,
        spec: &RegulatorSpec,
        monitored: f64,
        tap: i32,
        dt: f64,
    ) -> TapDecision {
        let half = 0.5 * spec.band_width;
        let direction = if monitored < spec.band_center - half {
            1
        } else if monitored > spec.band_center + half {
            -1
        } else {
            0
        };
        // A de-energized monitored bus reads zero; never chase it.
        if direction == 0 || monitored <= 0.0 {
            self.timer = 0.0;
            self.direction = 0;
            return TapDecision::Hold;
        }
        if direction != self.direction {
            self.timer = 0.0;
            self.direction = direction;
        }
        self.timer += dt;
        if self.timer + 1e-9 < spec.dwell {
            return TapDecision::Hold;
        }
        self.timer = 0.0;
        let next = tap + direction as i32;
        if next.abs() > spec.tap_range {
            TapDecision::Saturated
        } else if direction > 0 {
            TapDecision::Raise
        } else {
            TapDecision::Lower
        }
    }
}
