use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{balanced_emf, base_impedance, Measurement};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DieselParams {
    /// VA.
    pub rating: f64,
    #[serde(default = "default_f0")]
    pub f0: f64,
    /// Inertia constant, s.
    #[serde(default = "default_h")]
    pub h: f64,
    /// Damping, pu power per pu speed.
    #[serde(default = "default_d")]
    pub d: f64,
    /// Governor droop.
    #[serde(default = "default_r")]
    pub r: f64,
    /// Governor time constant, s.
    #[serde(default = "default_tg")]
    pub t_g: f64,
    /// Transient reactance, pu on the machine base.
    #[serde(default = "default_xd")]
    pub xd_pu: f64,
    /// Speed deviation trip threshold, pu.
    #[serde(default = "default_trip")]
    pub trip: f64,
}

fn default_f0() -> f64 {
    60.0
}
fn default_h() -> f64 {
    1.5
}
fn default_d() -> f64 {
    1.0
}
fn default_r() -> f64 {
    0.03
}
fn default_tg() -> f64 {
    0.5
}
fn default_xd() -> f64 {
    0.25
}
fn default_trip() -> f64 {
    0.05
}

impl DieselParams {
    pub fn new(rating: f64) -> Self {
        DieselParams {
            rating,
            f0: default_f0(),
            h: default_h(),
            d: default_d(),
            r: default_r(),
            t_g: default_tg(),
            xd_pu: default_xd(),
            trip: default_trip(),
        }
    }

    /// Steady-state speed deviation per unit of power deviation, combining
    /// governor droop and damping.
    pub fn effective_droop(&self) -> f64 {
        1.0 / (1.0 / self.r + self.d)
    }
}

/// Synchronous generator with governor, as a constant EMF behind the
/// transient reactance.
///
/// `delta` is the rotor angle in a frame rotating at `f0`; `dw` is the
/// speed deviation in pu.
#[derive(Debug, Clone, PartialEq)]
pub struct DieselGen {
    pub params: DieselParams,
    /// Line-to-neutral EMF magnitude, V.
    pub e: f64,
    /// Line-to-neutral nominal terminal voltage, V.
    pub v_nominal: f64,
    pub p_ref: f64,
    pub delta: f64,
    pub dw: f64,
    pub p_m: f64,
}

impl DieselGen {
    pub fn new(params: DieselParams, v_nominal: f64) -> Self {
        DieselGen {
            params,
            e: v_nominal,
            v_nominal,
            p_ref: 0.0,
            delta: 0.0,
            dw: 0.0,
            p_m: 0.0,
        }
    }

    pub fn frequency(&self) -> f64 {
        self.params.f0 * (1.0 + self.dw)
    }

    pub fn impedance(&self) -> Complex64 {
        Complex64::new(
            0.0,
            self.params.xd_pu * base_impedance(self.v_nominal, self.params.rating),
        )
    }

    pub fn emf(&self) -> [Complex64; 3] {
        balanced_emf(self.e, self.delta)
    }

    pub fn current(&self, terminal: &[Complex64; 3]) -> [Complex64; 3] {
        let e = self.emf();
        let z = self.impedance();
        [0, 1, 2].map(|p| (e[p] - terminal[p]) / z)
    }

    /// Electrical power behind the reactance.
    pub fn electrical_power(&self, m: &Measurement) -> f64 {
        let e = self.emf();
        (0..3).map(|p| (e[p] * m.current[p].conj()).re).sum()
    }

    pub fn state(&self) -> [f64; 3] {
        [self.delta, self.dw, self.p_m]
    }

    /// Sets the state, holding mechanical power inside `[0, rating]`.
    pub fn set_state(&mut self, x: [f64; 3]) {
        self.delta = x[0];
        self.dw = x[1];
        self.p_m = x[2].clamp(0.0, self.params.rating);
    }

    pub fn derivatives(&self, m: &Measurement) -> [f64; 3] {
        let p = &self.params;
        let pe = self.electrical_power(m);
        [
            2.0 * PI * p.f0 * self.dw,
            ((self.p_m - pe) / p.rating - p.d * self.dw) / (2.0 * p.h),
            (self.p_ref - self.dw / p.r * p.rating - self.p_m) / p.t_g,
        ]
    }

    pub fn tripped(&self) -> bool {
        self.dw.abs() > self.params.trip
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const VN: f64 = 2401.777;

    fn unit() -> DieselGen {
        DieselGen::new(DieselParams::new(3.0e6), VN)
    }

    /// Measurement for a machine exporting `pe` watts at its EMF angle.
    fn exporting(g: &DieselGen, pe: f64) -> Measurement {
        let e = g.emf();
        let i = [0, 1, 2].map(|p| (Complex64::new(pe / 3.0, 0.0) / e[p]).conj());
        Measurement {
            voltage: e,
            current: i,
        }
    }

    #[test]
    fn equilibrium_has_zero_derivatives() {
        let mut g = unit();
        g.p_ref = 1.0e6;
        g.p_m = 1.0e6;
        let d = g.derivatives(&exporting(&g, 1.0e6));
        assert!(d.iter().all(|x| x.abs() < 1e-9), "{d:?}");
    }

    #[test]
    fn isolated_load_step_settles_to_combined_droop() {
        // Isolated machine with a lossless constant-power load of 300 kW.
        let mut g = unit();
        let dt = 1e-3;
        for _ in 0..60_000 {
            let d = g.derivatives(&exporting(&g, 3.0e5));
            let x = g.state();
            g.set_state([x[0] + dt * d[0], x[1] + dt * d[1], x[2] + dt * d[2]]);
        }
        let oracle = -60.0 * (3.0e5 / 3.0e6) * g.params.effective_droop();
        assert!(
            (g.frequency() - 60.0 - oracle).abs() < 1e-6,
            "{}",
            g.frequency()
        );
        assert!((g.p_m - 3.0e5 - g.params.d * g.dw * 3.0e6).abs() < 1.0);
    }

    #[test]
    fn trip_threshold() {
        let mut g = unit();
        g.dw = -0.049;
        assert!(!g.tripped());
        g.dw = -0.051;
        assert!(g.tripped());
    }

    #[test]
    fn mechanical_power_is_clamped() {
        let mut g = unit();
        g.set_state([0.0, 0.0, 5.0e6]);
        assert_eq!(g.p_m, 3.0e6);
        g.set_state([0.0, 0.0, -1.0]);
        assert_eq!(g.p_m, 0.0);
    }
}
