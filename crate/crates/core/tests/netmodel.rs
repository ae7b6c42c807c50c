use num_complex::Complex64;
use phasorgrid::netmodel::feeder::FeederData;
use phasorgrid::netmodel::{
    assemble_admittance, power_balance, Branch, BranchKind, Bus, BusKind, ConstantPowerLoad,
    DeviceInjections, NetworkModel, NetworkSolution, PowerInjection, Solver, SolverOptions,
    SourceSite, ZERO3,
};
use phasorgrid::phase::{Phase, PhaseSet};

const V_LN: f64 = 2401.777;

fn bus(id: &str) -> Bus {
    Bus {
        id: id.into(),
        phases: PhaseSet::ABC,
        nominal_voltage: V_LN,
        kind: BusKind::Node,
        group: None,
    }
}

fn line(id: &str, from: usize, to: usize, z: Complex64) -> Branch {
    let mut m = ZERO3;
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = z;
    }
    Branch {
        id: id.into(),
        from,
        to,
        phases: PhaseSet::ABC,
        kind: BranchKind::Line {
            z: m,
            y_shunt: ZERO3,
        },
        group: None,
    }
}

fn switch(id: &str, from: usize, to: usize, closed: bool) -> Branch {
    Branch {
        id: id.into(),
        from,
        to,
        phases: PhaseSet::ABC,
        kind: BranchKind::Switch { closed },
        group: None,
    }
}

fn emf(mag: f64) -> [Complex64; 3] {
    Phase::ALL.map(|p| Complex64::new(mag, 0.0) * p.rotation())
}

fn solver() -> Solver {
    Solver::new(SolverOptions::default())
}

const Z_SRC: Complex64 = Complex64::new(0.05, 0.5);
const Z_LINE: Complex64 = Complex64::new(0.4, 0.8);

fn two_bus(load: Complex64) -> NetworkModel {
    NetworkModel::new(
        vec![bus("s"), bus("l")],
        vec![line("s-l", 0, 1, Z_LINE)],
        vec![ConstantPowerLoad::balanced("ld", 1, PhaseSet::ABC, load)],
        vec![],
    )
    .unwrap()
}

#[test]
fn two_bus_matches_scalar_fixed_point() {
    let s = Complex64::new(900e3, 400e3);
    let net = two_bus(s);
    let sys = assemble_admittance(
        &net,
        &net.initial_state(),
        &[SourceSite { bus: 0, z: Z_SRC }],
    )
    .unwrap();
    let inj = DeviceInjections {
        emf: vec![emf(V_LN)],
        power: vec![],
    };
    let sol = solver()
        .solve(&sys, &inj, &NetworkSolution::zeros(&sys))
        .unwrap();

    // Per-phase oracle: V = E - (Zs + Zl) conj(S/3 / V), iterated to a fixed point.
    let e = Complex64::new(V_LN, 0.0);
    let mut v = e;
    for _ in 0..200 {
        v = e - (Z_SRC + Z_LINE) * (s / 3.0 / v).conj();
    }
    for p in Phase::ALL {
        let got = sol.voltage(1, p) / p.rotation();
        assert!((got - v).norm() < 1e-6 * V_LN, "{p:?}: {got} vs {v}");
    }
}

#[test]
fn no_load_network_sits_at_the_emf() {
    let net = two_bus(Complex64::default());
    let sys = assemble_admittance(
        &net,
        &net.initial_state(),
        &[SourceSite { bus: 0, z: Z_SRC }],
    )
    .unwrap();
    let inj = DeviceInjections {
        emf: vec![emf(V_LN)],
        power: vec![],
    };
    let sol = solver()
        .solve(&sys, &inj, &NetworkSolution::zeros(&sys))
        .unwrap();
    for b in 0..2 {
        for p in Phase::ALL {
            assert!((sol.voltage(b, p) - emf(V_LN)[p.index()]).norm() < 1e-9);
        }
    }
    for p in Phase::ALL {
        assert!(sol.branch_current(0, p).norm() < 1e-9);
    }
}

#[test]
fn balanced_feeder_solution_is_phase_symmetric() {
    let net = two_bus(Complex64::new(1.2e6, 0.5e6));
    let sys = assemble_admittance(
        &net,
        &net.initial_state(),
        &[SourceSite { bus: 0, z: Z_SRC }],
    )
    .unwrap();
    let inj = DeviceInjections {
        emf: vec![emf(V_LN)],
        power: vec![],
    };
    let sol = solver()
        .solve(&sys, &inj, &NetworkSolution::zeros(&sys))
        .unwrap();
    let va = sol.voltage(1, Phase::A);
    for p in [Phase::B, Phase::C] {
        assert!((sol.voltage(1, p) - va * p.rotation()).norm() < 1e-9 * V_LN);
    }
}

fn ieee13() -> (NetworkModel, usize) {
    let mut draft = FeederData::bundled().instantiate("", None).unwrap();
    draft.source_buses.insert("650".into());
    let net = draft.build().unwrap();
    let src = net.bus_index("650").unwrap();
    (net, src)
}

fn solve_feeder(
    net: &NetworkModel,
    taps: Option<i32>,
    pv: Option<PowerInjection>,
) -> (
    phasorgrid::netmodel::AdmittanceSystem,
    DeviceInjections,
    NetworkSolution,
) {
    let src = net.bus_index("650").unwrap();
    let mut state = net.initial_state();
    if let Some(t) = taps {
        for (b, _) in net.regulators() {
            state.taps[b] = t;
        }
    }
    let sys = assemble_admittance(
        net,
        &state,
        &[SourceSite {
            bus: src,
            z: Complex64::new(0.01, 0.1),
        }],
    )
    .unwrap();
    let inj = DeviceInjections {
        emf: vec![emf(V_LN)],
        power: pv.into_iter().collect(),
    };
    let sol = solver()
        .solve(&sys, &inj, &NetworkSolution::zeros(&sys))
        .unwrap();
    (sys, inj, sol)
}

#[test]
fn feeder_solution_conserves_complex_power() {
    let (net, _) = ieee13();
    let pv = PowerInjection {
        bus: net.bus_index("675").unwrap(),
        s: Complex64::new(1.6e6, 0.0),
        current_limit: 1e4,
    };
    let (sys, inj, sol) = solve_feeder(&net, None, Some(pv));
    let bal = power_balance(&net, &sys, &inj, &sol);
    assert!(bal.residual <= 1e-5 * phasorgrid::SYSTEM_BASE_VA, "{bal:?}");
    assert!((bal.loads.re - 2_598_000.0).abs() < 1.0);
    assert!(bal.branch_losses.re > 0.0);
    assert!(bal.shunts.im < 0.0);
}

#[test]
fn resolving_a_converged_solution_is_nearly_free() {
    let (net, _) = ieee13();
    let (sys, inj, sol) = solve_feeder(&net, None, None);
    let again = solver().solve(&sys, &inj, &sol).unwrap();
    assert!(again.iterations <= 2, "{}", again.iterations);
    for (a, b) in sol.voltages.iter().zip(&again.voltages) {
        assert!((a - b).norm() < 1e-6 * V_LN);
    }
}

#[test]
fn open_switch_carries_no_current() {
    let (net, _) = ieee13();
    let sw = net.branch_index("671-692").unwrap();
    let mut state = net.initial_state();
    state.switch_closed[sw] = false;
    let src = net.bus_index("650").unwrap();
    let sys = assemble_admittance(
        &net,
        &state,
        &[SourceSite {
            bus: src,
            z: Complex64::new(0.01, 0.1),
        }],
    )
    .unwrap();
    let inj = DeviceInjections {
        emf: vec![emf(V_LN)],
        power: vec![],
    };
    // Bus 675 loses its only source and holds an energized load.
    let err = solver().solve(&sys, &inj, &NetworkSolution::zeros(&sys));
    assert!(err.is_err());

    let mut s = solver();
    s.options.allow_dead_islands = true;
    let sol = s.solve(&sys, &inj, &NetworkSolution::zeros(&sys)).unwrap();
    for p in Phase::ALL {
        assert_eq!(sol.branch_current(sw, p), Complex64::default());
        assert_eq!(
            sol.voltage(net.bus_index("675").unwrap(), p),
            Complex64::default()
        );
    }
}

#[test]
fn raising_the_regulator_tap_raises_the_monitored_voltage() {
    let (net, _) = ieee13();
    let m = net.bus_index("680").unwrap();
    let (_, _, base) = solve_feeder(&net, Some(0), None);
    let (_, _, up) = solve_feeder(&net, Some(4), None);
    let (v0, v4) = (base.bus_magnitude(&net, m), up.bus_magnitude(&net, m));
    // Four steps of 0.625 % each; load currents shrink so the rise is a
    // little larger than the ideal ratio.
    let rise = v4 / v0 - 1.0;
    assert!(
        rise > 0.9 * 4.0 * 0.00625 && rise < 1.2 * 4.0 * 0.00625,
        "{rise}"
    );
}
