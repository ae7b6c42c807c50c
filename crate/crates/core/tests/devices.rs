mod common;

use std::f64::consts::PI;

use num_complex::Complex64;
use phasorgrid::devices::{power_sharing_check, DieselGen, DieselParams, DroopShare, Measurement};
use phasorgrid::phase::Phase;

const VN: f64 = 2401.777;

/// Machine against a stiff bus with no damping and a frozen governor: a
/// pendulum. Heun on the model derivatives at 1 ms against RK4 on the
/// closed-form swing equation at 0.1 ms.
#[test]
fn undamped_swing_matches_rk4_pendulum() {
    let mut params = DieselParams::new(3.0e6);
    params.d = 0.0;
    params.r = 1e12;
    let mut g = DieselGen::new(params, VN);
    g.e = 1.1 * VN;
    g.p_m = 0.5 * g.params.rating;
    g.p_ref = g.p_m;
    let bus = Phase::ALL.map(|p| Complex64::new(VN, 0.0) * p.rotation());
    let meas = |g: &DieselGen| Measurement {
        voltage: bus,
        current: g.current(&bus),
    };

    let dt = 1e-3;
    let steps = 3000;
    let mut heun = Vec::with_capacity(steps);
    for _ in 0..steps {
        let x0 = g.state();
        let k1 = g.derivatives(&meas(&g));
        g.set_state([0, 1, 2].map(|i| x0[i] + dt * k1[i]));
        let k2 = g.derivatives(&meas(&g));
        g.set_state([0, 1, 2].map(|i| x0[i] + 0.5 * dt * (k1[i] + k2[i])));
        heun.push(g.delta);
    }

    let x = g.params.xd_pu * 3.0 * VN * VN / g.params.rating;
    let (s, h, f0) = (g.params.rating, g.params.h, g.params.f0);
    let (pm, e) = (0.5 * s, 1.1 * VN);
    let f = |d: f64, w: f64| {
        let pe = 3.0 * e * VN * d.sin() / x;
        (2.0 * PI * f0 * w, (pm - pe) / s / (2.0 * h))
    };
    let (mut d, mut w) = (0.0f64, 0.0f64);
    let h_rk = dt / 10.0;
    let mut worst: f64 = 0.0;
    let mut peak: f64 = 0.0;
    for got in &heun {
        for _ in 0..10 {
            let (a1, b1) = f(d, w);
            let (a2, b2) = f(d + 0.5 * h_rk * a1, w + 0.5 * h_rk * b1);
            let (a3, b3) = f(d + 0.5 * h_rk * a2, w + 0.5 * h_rk * b2);
            let (a4, b4) = f(d + h_rk * a3, w + h_rk * b3);
            d += h_rk / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
            w += h_rk / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4);
        }
        worst = worst.max((got - d).abs());
        peak = peak.max(d.abs());
    }
    assert!(peak > 0.1, "the rotor should swing, peak {peak}");
    assert!(worst < 0.005 * peak, "worst {worst} peak {peak}");
}

/// A 400 kW step shared by a 1 % droop inverter and a 3 % droop diesel
/// with unit damping settles where both imply the same frequency.
#[test]
fn load_step_is_shared_by_inverse_droop() {
    let d = common::doc(&common::small_system(
        true,
        400.0,
        r#"{"time": 1.0, "action": "energize_load", "target": "load"}"#,
        30.0,
    ));
    let out = common::run(&d);
    let rec = &out.record;
    let t = 29.9;
    let p_bess = rec.at("P_bess", t).unwrap();
    let p_dg = rec.at("P_dg", t).unwrap();
    let f_bess = rec.at("f_bess", t).unwrap();
    let f_dg = rec.at("f_dg", t).unwrap();

    let mut gfm =
        phasorgrid::devices::GfmInverter::new(phasorgrid::devices::GfmParams::new(3e6), VN);
    gfm.params.m_p = 0.01;
    let dg = DieselGen::new(DieselParams::new(3e6), VN);
    let report = power_sharing_check(&[
        DroopShare::gfm("bess", &gfm, p_bess),
        DroopShare::diesel("dg", &dg, p_dg),
    ]);
    assert!(report.spread < 1e-6, "{report:?}");

    // Lossless split of the combined stiffness: 100 vs 1/0.03 + 1 per unit.
    let k_bess = 1.0 / 0.01;
    let k_dg = 1.0 / 0.03 + 1.0;
    let total = p_bess + p_dg;
    assert!(
        (total - 400e3) > 0.0 && (total - 400e3) < 2e3,
        "losses {}",
        total - 400e3
    );
    assert!((p_bess / total - k_bess / (k_bess + k_dg)).abs() < 1e-5);
    let df = -60.0 * total / 3e6 / (k_bess + k_dg);
    assert!(
        (f_bess - 60.0 - df).abs() < 1e-4,
        "{f_bess} vs {}",
        60.0 + df
    );
    assert!((f_bess - f_dg).abs() < 1e-6);
}
