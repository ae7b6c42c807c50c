use serde::{Deserialize, Serialize};

/// PI regulator of the DC-link voltage. Its output is the power drawn by
/// the regulating side from its AC terminal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VdcPi {
    /// W/V.
    pub kp: f64,
    /// W/(V·s).
    pub ki: f64,
    /// Output clamp, W.
    pub limit: f64,
    #[serde(skip)]
    pub integrator: f64,
}

impl VdcPi {
    /// Gains scaled to the side rating: `Kp = 2·S/Vn`, `Ki = Kp/0.1 s`.
    pub fn for_rating(rating: f64, v_nominal: f64) -> Self {
        let kp = 2.0 * rating / v_nominal;
        VdcPi {
            kp,
            ki: kp / 0.1,
            limit: rating,
            integrator: 0.0,
        }
    }

    fn raw(&self, error: f64, integrator: f64) -> f64 {
        self.kp * error + integrator
    }

    /// Power command for DC voltage `vdc`, clamped to the limit.
    pub fn command(&self, vdc: f64, v_nominal: f64) -> f64 {
        self.raw(v_nominal - vdc, self.integrator)
            .clamp(-self.limit, self.limit)
    }

    pub fn saturated(&self, vdc: f64, v_nominal: f64) -> bool {
        self.raw(v_nominal - vdc, self.integrator).abs() > self.limit
    }

    /// Integrator rate with clamping anti-windup: integration stops while
    /// the output is saturated and the error would push it further.
    pub fn integrator_rate(&self, vdc: f64, v_nominal: f64) -> f64 {
        let e = v_nominal - vdc;
        let u = self.raw(e, self.integrator);
        if (u > self.limit && e > 0.0) || (u < -self.limit && e < 0.0) {
            0.0
        } else {
            self.ki * e
        }
    }

    /// Sets the integrator so that the command equals `power` at `vdc`.
    pub fn preload(&mut self, power: f64, vdc: f64, v_nominal: f64) {
        self.integrator = power - self.kp * (v_nominal - vdc);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VdcCommand {
    pub power: f64,
    pub saturated: bool,
}

/// One explicit step of the regulator: returns the command at the current
/// voltage and advances the integrator.
pub fn vdc_regulator_step(pi: &mut VdcPi, vdc: f64, v_nominal: f64, dt: f64) -> VdcCommand {
    let out = VdcCommand {
        power: pi.command(vdc, v_nominal),
        saturated: pi.saturated(vdc, v_nominal),
    };
    pi.integrator += dt * pi.integrator_rate(vdc, v_nominal);
    out
}
