use super::{DieselGen, GfmInverter};

/// A droop-controlled source as seen by the sharing check.
#[derive(Debug, Clone, PartialEq)]
pub struct DroopShare {
    pub id: String,
    /// Measured active power, W.
    pub p: f64,
    pub p_ref: f64,
    pub rating: f64,
    /// Steady-state frequency droop in pu frequency per pu power.
    pub droop: f64,
}

impl DroopShare {
    pub fn gfm(id: &str, dev: &GfmInverter, p: f64) -> Self {
        DroopShare {
            id: id.to_string(),
            p,
            p_ref: dev.p_ref,
            rating: dev.params.rating,
            droop: dev.params.m_p,
        }
    }

    pub fn diesel(id: &str, dev: &DieselGen, p: f64) -> Self {
        DroopShare {
            id: id.to_string(),
            p,
            p_ref: dev.p_ref,
            rating: dev.params.rating,
            droop: dev.params.effective_droop(),
        }
    }

    /// Frequency deviation in pu implied by the device's loading.
    pub fn implied_deviation(&self) -> f64 {
        -(self.p - self.p_ref) / (self.rating / self.droop)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SharingReport {
    /// `(id, (P − P_ref)/(rating/droop))` per device.
    pub normalized: Vec<(String, f64)>,
    /// Largest minus smallest normalized value.
    pub spread: f64,
}

pub fn power_sharing_check(devices: &[DroopShare]) -> SharingReport {
    let normalized: Vec<(String, f64)> = devices
        .iter()
        .map(|d| (d.id.clone(), -d.implied_deviation()))
        .collect();
    let (lo, hi) = normalized
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, v)| {
            (lo.min(*v), hi.max(*v))
        });
    SharingReport {
        spread: if normalized.is_empty() { 0.0 } else { hi - lo },
        normalized,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::devices::{DieselParams, GfmParams};

    #[test]
    fn single_device_is_consistent() {
        let g = GfmInverter::new(GfmParams::new(3.0e6), 2400.0);
        let r = power_sharing_check(&[DroopShare::gfm("bess", &g, 7.0e5)]);
        assert_eq!(r.spread, 0.0);
    }

    #[test]
    fn inverse_droop_split() {
        let g = GfmInverter::new(GfmParams::new(3.0e6), 2400.0);
        let d = DieselGen::new(DieselParams::new(3.0e6), 2400.0);
        // Stiffness in W per pu frequency: rating / droop.
        let kb: f64 = 3.0e6 / 0.01;
        let kd = 3.0e6 * (1.0 / 0.03 + 1.0);
        let pb = 4.0e5 * kb / (kb + kd);
        let pd = 4.0e5 - pb;
        assert!((pb - 297_766.7).abs() < 0.1);
        let r = power_sharing_check(&[
            DroopShare::gfm("bess", &g, pb),
            DroopShare::diesel("dg", &d, pd),
        ]);
        assert!(r.spread < 1e-12, "{r:?}");
    }
}
