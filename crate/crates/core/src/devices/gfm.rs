use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{balanced_emf, base_impedance, Measurement};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GfmParams {
    /// VA.
    pub rating: f64,
    #[serde(default = "default_f0")]
    pub f0: f64,
    #[serde(default = "default_mp")]
    pub m_p: f64,
    #[serde(default = "default_mq")]
    pub m_q: f64,
    /// Power measurement filter time constant, s.
    #[serde(default = "default_tf")]
    pub t_f: f64,
    /// Coupling reactance, per unit on the device base.
    #[serde(default = "default_x")]
    pub x_pu: f64,
    /// Allowed |P_f| as a multiple of the rating.
    #[serde(default = "default_overload")]
    pub overload: f64,
}

fn default_f0() -> f64 {
    60.0
}
fn default_mp() -> f64 {
    0.01
}
fn default_mq() -> f64 {
    0.05
}
fn default_tf() -> f64 {
    0.05
}
fn default_x() -> f64 {
    0.1
}
fn default_overload() -> f64 {
    1.2
}

impl GfmParams {
    pub fn new(rating: f64) -> Self {
        GfmParams {
            rating,
            f0: default_f0(),
            m_p: default_mp(),
            m_q: default_mq(),
            t_f: default_tf(),
            x_pu: default_x(),
            overload: default_overload(),
        }
    }
}

/// Grid-forming inverter with P-f and Q-V droop.
///
/// `theta` is the EMF angle in a frame rotating at `f0`.
#[derive(Debug, Clone, PartialEq)]
pub struct GfmInverter {
    pub params: GfmParams,
    /// Nominal line-to-neutral EMF, V.
    pub e0: f64,
    pub p_ref: f64,
    pub q_ref: f64,
    pub theta: f64,
    pub p_f: f64,
    pub q_f: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GfmOutput {
    pub p: f64,
    pub q: f64,
    pub frequency: f64,
    pub overloaded: bool,
}

impl GfmInverter {
    pub fn new(params: GfmParams, e0: f64) -> Self {
        GfmInverter {
            params,
            e0,
            p_ref: 0.0,
            q_ref: 0.0,
            theta: 0.0,
            p_f: 0.0,
            q_f: 0.0,
        }
    }

    pub fn frequency(&self) -> f64 {
        let p = &self.params;
        p.f0 * (1.0 - p.m_p * (self.p_f - self.p_ref) / p.rating)
    }

    pub fn emf_magnitude(&self) -> f64 {
        let p = &self.params;
        self.e0 * (1.0 - p.m_q * (self.q_f - self.q_ref) / p.rating)
    }

    pub fn emf(&self) -> [Complex64; 3] {
        balanced_emf(self.emf_magnitude(), self.theta)
    }

    /// Series coupling impedance per phase, ohm.
    pub fn impedance(&self) -> Complex64 {
        Complex64::new(
            0.0,
            self.params.x_pu * base_impedance(self.e0, self.params.rating),
        )
    }

    /// Current delivered into a bus at `terminal` voltages.
    pub fn current(&self, terminal: &[Complex64; 3]) -> [Complex64; 3] {
        let e = self.emf();
        let z = self.impedance();
        [0, 1, 2].map(|p| (e[p] - terminal[p]) / z)
    }

    pub fn state(&self) -> [f64; 3] {
        [self.theta, self.p_f, self.q_f]
    }

    pub fn set_state(&mut self, x: [f64; 3]) {
        self.theta = x[0];
        self.p_f = x[1];
        self.q_f = x[2];
    }

    pub fn derivatives(&self, m: &Measurement) -> [f64; 3] {
        let s = m.power();
        let t_f = self.params.t_f;
        [
            2.0 * PI * (self.frequency() - self.params.f0),
            (s.re - self.p_f) / t_f,
            (s.im - self.q_f) / t_f,
        ]
    }

    pub fn overloaded(&self) -> bool {
        self.p_f.abs() > self.params.overload * self.params.rating
    }

    /// One forward-Euler step against fixed terminal voltages.
    pub fn step(&mut self, terminal: &[Complex64; 3], dt: f64) -> GfmOutput {
        let m = Measurement {
            voltage: *terminal,
            current: self.current(terminal),
        };
        let d = self.derivatives(&m);
        let x = self.state();
        self.set_state([x[0] + dt * d[0], x[1] + dt * d[1], x[2] + dt * d[2]]);
        let s = m.power();
        GfmOutput {
            p: s.re,
            q: s.im,
            frequency: self.frequency(),
            overloaded: self.overloaded(),
        }
    }
}
