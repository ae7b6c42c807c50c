use super::*;

const VN: f64 = 8000.0;
const C: f64 = 5e-3;

#[test]
fn constant_charge_matches_closed_form() {
    let pc = 2.0e5;
    let mut s = DcLinkState::new(0.5 * VN, VN, C);
    let dt = 1e-3;
    for n in 1..=1000 {
        s = dc_link_step(&s, pc, 0.0, 0.0, dt).unwrap();
        let t = n as f64 * dt;
        let oracle = ((0.5 * VN).powi(2) + 2.0 * pc * t / C).sqrt();
        assert!(((s.vdc - oracle) / oracle).abs() < 1e-3);
    }
}

#[test]
fn half_voltage_charge_takes_energy_balance_time() {
    let law = Precharge {
        tau: 1e-9,
        ..Precharge::default()
    };
    let dt = 1e-4;
    let mut s = DcLinkState::new(0.5 * VN, VN, C);
    let mut t = 0.0;
    while s.vdc < VN * (1.0 - 1e-9) {
        s = dc_link_step(&s, law.power(&s), 0.0, 0.0, dt).unwrap();
        t += dt;
    }
    let oracle = C * (VN * VN - 4000.0 * 4000.0) / (2.0 * 1.0e5);
    assert!((oracle - 1.2).abs() < 1e-12);
    assert!((t - oracle).abs() <= dt, "{t}");
}

#[test]
fn precharge_at_nominal_is_enabled_immediately() {
    let s = DcLinkState::new(VN, VN, C);
    let tr = precharge(&s, &Precharge::default(), 1e-3, 0.1).unwrap();
    assert_eq!(tr.enable_time, 0.0);
}

#[test]
fn precharge_timeout_is_reported() {
    let s = DcLinkState::new(0.25 * VN, VN, C);
    let law = Precharge {
        p_limit: 1.0e3,
        timeout: 2.0,
        ..Precharge::default()
    };
    assert_eq!(
        precharge(&s, &law, 1e-3, 5.0),
        Err(BtbError::PrechargeTimeout(2.0))
    );
}

#[test]
fn precharge_enable_time_matches_energy_to_threshold() {
    let s = DcLinkState::new(0.5 * VN, VN, C);
    let law = Precharge::default();
    let tr = precharge(&s, &law, 1e-3, 3.0).unwrap();
    let oracle = C * ((0.99 * VN).powi(2) - (0.5 * VN).powi(2)) / (2.0 * law.p_limit);
    assert!(
        (tr.enable_time - oracle).abs() < 2e-3,
        "{} vs {oracle}",
        tr.enable_time
    );
}

/// Nonlinear two-state loop (link energy, PI integrator) with a constant
/// side-B draw, integrated with classical RK4.
fn rk4_loop(kp: f64, ki: f64, p_out: f64, t_end: f64, h: f64) -> Vec<(f64, f64)> {
    let f = |x: [f64; 2]| {
        let v = (2.0 * x[0] / C).sqrt();
        let e = VN - v;
        [kp * e + x[1] - p_out, ki * e]
    };
    let mut x = [0.5 * C * VN * VN, 0.0];
    let mut out = vec![(0.0, VN)];
    let n = (t_end / h).round() as usize;
    for k in 1..=n {
        let k1 = f(x);
        let k2 = f([x[0] + 0.5 * h * k1[0], x[1] + 0.5 * h * k1[1]]);
        let k3 = f([x[0] + 0.5 * h * k2[0], x[1] + 0.5 * h * k2[1]]);
        let k4 = f([x[0] + h * k3[0], x[1] + h * k3[1]]);
        for i in 0..2 {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        out.push((k as f64 * h, (2.0 * x[0] / C).sqrt()));
    }
    out
}

#[test]
fn export_step_is_absorbed_without_steady_state_error() {
    let mut pi = VdcPi::for_rating(3.0e6, VN);
    let mut dc = DcLinkState::new(VN, VN, C);
    let dt = 1e-3;
    let p_out = 5.0e5;
    let oracle = rk4_loop(pi.kp, pi.ki, p_out, 2.0, dt / 20.0);
    let mut p_in = 0.0;
    for n in 1..=2000 {
        // Heun on (energy, integrator).
        let k1 = (
            pi.command(dc.vdc, VN) - p_out,
            pi.integrator_rate(dc.vdc, VN),
        );
        let mut pred_pi = pi;
        pred_pi.integrator += dt * k1.1;
        let pred = dc.with_energy(dc.energy() + dt * k1.0).unwrap();
        let k2 = (
            pred_pi.command(pred.vdc, VN) - p_out,
            pred_pi.integrator_rate(pred.vdc, VN),
        );
        dc = dc
            .with_energy(dc.energy() + 0.5 * dt * (k1.0 + k2.0))
            .unwrap();
        pi.integrator += 0.5 * dt * (k1.1 + k2.1);
        p_in = pi.command(dc.vdc, VN);
        let (_, v_ref) = oracle[n * 20];
        assert!(
            (dc.vdc - v_ref).abs() < 1e-3 * VN,
            "t={}: {} vs {v_ref}",
            n as f64 * dt,
            dc.vdc
        );
        assert!(dc.pu() > 0.8 && dc.pu() < 1.2);
    }
    assert!((p_in - p_out).abs() < 1e-3 * p_out, "{p_in}");
    assert!((dc.vdc - VN).abs() < 1e-3);
}

#[test]
fn protection_trips_outside_band_only_when_armed() {
    let side = SideB::Gfl(GflInverter::new(3.0e6, 3.0e6, 2401.777));
    let mut b = BtbConverter::new(3.0e6, DcLinkState::new(0.5 * VN, VN, C), side, 2401.777);
    assert!(!b.enabled);
    assert!(!b.check_protection());
    b.dc.vdc = VN;
    assert!(b.update_precharge());
    b.dc.vdc = 1.25 * VN;
    assert!(b.check_protection());
    assert_eq!(b.side_a_power(), 0.0);
    assert_eq!(b.side_b_injection(0).unwrap().s, Complex64::default());
}

#[test]
fn handover_is_bumpless() {
    let side = SideB::Gfl(GflInverter::new(3.0e6, 3.0e6, 2401.777));
    let mut b = BtbConverter::new(3.0e6, DcLinkState::new(0.995 * VN, VN, C), side, 2401.777);
    b.enabled = false;
    let before = b.side_a_power();
    assert!(b.update_precharge());
    assert!((b.side_a_power() - before).abs() < 1e-9);
}

#[test]
fn vdc_droop_shifts_side_b_power_only_when_set() {
    let mut g = GflInverter::new(3.0e6, 3.0e6, 2401.777);
    g.p_out = 1.0e6;
    let mut b = BtbConverter::new(
        3.0e6,
        DcLinkState::new(0.95 * VN, VN, C),
        SideB::Gfl(g),
        2401.777,
    );
    b.enabled = true;
    assert_eq!(b.side_b_injection(0).unwrap().s.re, 1.0e6);
    b.vdc_droop = 2.0;
    // 5 % undervoltage at 2 pu/pu takes 10 % of 3 MVA off the export.
    let p = b.side_b_injection(0).unwrap().s.re;
    assert!((p - 0.7e6).abs() < 1e-6, "{p}");
    b.vdc_droop = 100.0;
    assert_eq!(b.side_b_injection(0).unwrap().s.re, -3.0e6);
}
