use num_complex::Complex64;

use crate::netmodel::PowerInjection;

/// Grid-following inverter: a ramp-limited power command converted to a
/// current injection at the terminal voltage.
#[derive(Debug, Clone, PartialEq)]
pub struct GflInverter {
    /// VA.
    pub rating: f64,
    /// W/s, applied to both P and Q.
    pub ramp_rate: f64,
    /// Per-phase current limit, A.
    pub current_limit: f64,
    /// Minimum terminal voltage for injection, pu of `v_nominal`.
    pub sync_threshold: f64,
    /// Line-to-neutral nominal voltage, V.
    pub v_nominal: f64,
    pub p_cmd: f64,
    pub q_cmd: f64,
    pub p_out: f64,
    pub q_out: f64,
    pub active: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GflOutput {
    pub p: f64,
    pub q: f64,
    /// The terminal was below the sync threshold; output forced to zero.
    pub dead_bus: bool,
}

impl GflInverter {
    pub fn new(rating: f64, ramp_rate: f64, v_nominal: f64) -> Self {
        GflInverter {
            rating,
            ramp_rate,
            current_limit: 1.1 * rating / (3.0 * v_nominal),
            sync_threshold: 0.7,
            v_nominal,
            p_cmd: 0.0,
            q_cmd: 0.0,
            p_out: 0.0,
            q_out: 0.0,
            active: true,
        }
    }

    /// Command clipped to the apparent power rating, keeping its direction.
    pub fn limited_command(&self) -> (f64, f64) {
        let s = self.p_cmd.hypot(self.q_cmd);
        if s > self.rating {
            let k = self.rating / s;
            (self.p_cmd * k, self.q_cmd * k)
        } else {
            (self.p_cmd, self.q_cmd)
        }
    }

    /// Advances the ramp limiter by `dt` given the terminal voltage
    /// magnitude. Below the sync threshold the inverter idles at zero.
    pub fn step(&mut self, terminal: f64, dt: f64) -> GflOutput {
        if !self.active || terminal < self.sync_threshold * self.v_nominal {
            let dead = self.active;
            self.p_out = 0.0;
            self.q_out = 0.0;
            return GflOutput {
                p: 0.0,
                q: 0.0,
                dead_bus: dead,
            };
        }
        let (p, q) = self.limited_command();
        let max = self.ramp_rate * dt;
        self.p_out += (p - self.p_out).clamp(-max, max);
        self.q_out += (q - self.q_out).clamp(-max, max);
        GflOutput {
            p: self.p_out,
            q: self.q_out,
            dead_bus: false,
        }
    }

    pub fn injection(&self, bus: usize) -> PowerInjection {
        let s = if self.active {
            Complex64::new(self.p_out, self.q_out)
        } else {
            Complex64::default()
        };
        PowerInjection {
            bus,
            s,
            current_limit: self.current_limit,
        }
    }
}
