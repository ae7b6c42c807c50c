use proptest::prelude::*;

use super::*;
use crate::engine::Action;
use crate::netmodel::assemble_admittance;

const MINIMAL: &str = r#"{
  "schema": "phasorgrid/scenario@1",
  "name": "minimal",
  "network": {
    "buses": [{"id": "1", "phases": "ABC", "kv_ll": 4.16}]
  },
  "devices": [{"type": "gfm", "id": "g", "bus": "1", "rating": 1e6}],
  "sim": {"duration": 1.0}
}"#;

#[test]
fn minimal_document_validates() {
    let doc = parse_scenario(MINIMAL, "minimal").unwrap();
    validate(&doc, &FeederSource::bundled()).unwrap();
}

#[test]
fn dangling_bus_is_the_only_error() {
    let mut doc = parse_scenario(MINIMAL, "minimal").unwrap();
    doc.network.loads.push(crate::netmodel::feeder::LoadData {
        id: "l".into(),
        bus: "999".into(),
        p: 1e3,
        q: 0.0,
        energized: true,
    });
    let errs = validate(&doc, &FeederSource::bundled()).unwrap_err();
    assert_eq!(errs.len(), 1, "{errs:?}");
    assert_eq!(errs[0].path, "network.loads[0].bus");
    assert!(errs[0].message.contains("999"));
}

#[test]
fn all_errors_are_reported() {
    let mut doc = parse_scenario(MINIMAL, "minimal").unwrap();
    doc.schema = "other".into();
    doc.sim.dt = -1.0;
    if let DeviceDoc::Gfm { bus, rating, .. } = &mut doc.devices[0] {
        *bus = "x".into();
        *rating = 0.0;
    }
    let errs = validate(&doc, &FeederSource::bundled()).unwrap_err();
    assert!(errs.len() >= 4, "{errs:?}");
}

#[test]
fn syntax_errors_carry_position() {
    match parse_scenario("{\n  \"schema\": ,\n}", "bad.json") {
        Err(ScenarioError::Syntax { path, line, .. }) => {
            assert_eq!(path, "bad.json");
            assert_eq!(line, 2);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn unknown_case_is_rejected() {
    assert!(matches!(
        builtin_case("nope"),
        Err(ScenarioError::UnknownCase(_))
    ));
}

#[test]
fn builtin_cases_validate() {
    for name in CASE_NAMES {
        let doc = builtin_case(name).unwrap();
        assert_eq!(doc.name, name);
        validate(&doc, &FeederSource::bundled()).unwrap_or_else(|e| panic!("{name}: {e:?}"));
    }
}

#[test]
fn flexible_exchange_timeline() {
    let doc = builtin_case("flexible_exchange").unwrap();
    let mut times: Vec<f64> = doc.events.iter().map(|e| e.time).collect();
    times.dedup();
    assert_eq!(times, vec![5.0, 10.0, 15.0, 20.0, 25.0, 40.0]);
    // The PV ramp ends at 30 s.
    let ramp = doc
        .events
        .iter()
        .find_map(|e| match &e.action {
            Action::RampReference {
                target, duration, ..
            } if target == "pv1" => Some(e.time + duration),
            _ => None,
        })
        .unwrap();
    assert_eq!(ramp, 30.0);
    let off: Vec<_> = doc
        .devices
        .iter()
        .filter(|d| !d.online())
        .map(|d| d.id())
        .collect();
    assert_eq!(off, vec!["pv1", "dg1"]);
}

#[test]
fn dynamic_decoupling_closes_tie_at_four_seconds() {
    let doc = builtin_case("dynamic_decoupling").unwrap();
    assert!(doc.events.iter().any(|e| e.time == 4.0
        && matches!(&e.action, Action::CloseSwitch { target } if target == "btb1-6501")));
    let aux = doc.devices.iter().find(|d| d.bus() == "btb1").unwrap();
    assert_eq!(aux.rating(), 100.0);
}

#[test]
fn black_start_mg1_bess_has_no_active_reference() {
    let doc = builtin_case("black_start").unwrap();
    let bess = doc.devices.iter().find(|d| d.id() == "bess1").unwrap();
    assert!(matches!(bess, DeviceDoc::Gfm { p_ref, .. } if *p_ref == 0.0));
    for id in ["pv1", "dg1"] {
        let d = doc.devices.iter().find(|d| d.id() == id).unwrap();
        assert!(!d.online());
        assert!(!doc.events.iter().any(|e| e.action.target() == id));
    }
}

#[test]
fn case_networks_match_the_builder() {
    let reference = two_microgrid_network();
    for name in CASE_NAMES {
        let net = builtin_case(name).unwrap().network;
        assert_eq!(net.feeders, reference.feeders);
        assert_eq!(net.buses, reference.buses);
        assert_eq!(net.branches.len(), reference.branches.len());
        for (a, b) in net.branches.iter().zip(&reference.branches) {
            assert_eq!(a.id(), b.id());
            assert_eq!(a.ends(), b.ends());
        }
    }
}

#[test]
fn two_microgrid_system_layout() {
    let net = build_two_microgrid_system().unwrap();
    // The bundled feeder has 15 nodes (650 and 630 on either side of the
    // regulator), so the pair has 2 × 15 + 2.
    assert_eq!(net.buses.len(), 32);
    for id in ["634", "6341"] {
        let b = &net.buses[net.bus_index(id).unwrap()];
        assert!((b.nominal_voltage * 3f64.sqrt() - 480.0).abs() < 1e-9);
    }
    let sys = assemble_admittance(&net, &net.initial_state(), &[]).unwrap();
    // MG0 with its converter node, MG1, and the detached MG1-side node.
    assert_eq!(sys.island_count(), 3);
    let feeders = sys.islands.iter().filter(|i| i.buses.len() > 1).count();
    assert_eq!(feeders, 2);
    let btb1 = net.bus_index("btb1").unwrap();
    assert!(!sys.connected(btb1, net.bus_index("6501").unwrap()));
    assert!(!sys.connected(btb1, net.bus_index("btb0").unwrap()));
}

#[test]
fn load_totals_per_microgrid() {
    let net = build_two_microgrid_system().unwrap();
    for group in ["MG0", "MG1"] {
        let (mut p, mut q) = (0.0, 0.0);
        for l in &net.loads {
            if net.buses[l.bus].group.as_deref() == Some(group) {
                p += l.total().re;
                q += l.total().im;
            }
        }
        assert_eq!(p, 2_598_000.0, "{group}");
        assert_eq!(q, 1_528_000.0, "{group}");
    }
}

fn arb_doc() -> impl Strategy<Value = ScenarioDoc> {
    (
        0.0..1e7f64,
        -1e6..1e6f64,
        1e-5..1e-2f64,
        prop::collection::vec((0.0..100.0f64, -1e6..1e6f64), 0..6),
        any::<bool>(),
    )
        .prop_map(|(rating, p, dt, evs, online)| {
            let mut doc = parse_scenario(MINIMAL, "minimal").unwrap();
            doc.sim.dt = dt;
            if let DeviceDoc::Gfm {
                rating: r,
                p_ref,
                online: o,
                ..
            } = &mut doc.devices[0]
            {
                *r = rating;
                *p_ref = p;
                *o = online;
            }
            doc.events = evs
                .into_iter()
                .map(|(time, p)| crate::engine::Event {
                    time,
                    action: Action::SetReference {
                        target: "g".into(),
                        p: Some(p),
                        q: None,
                    },
                })
                .collect();
            doc
        })
}

proptest! {
    #[test]
    fn documents_round_trip(doc in arb_doc()) {
        let text = to_json(&doc);
        let back = parse_scenario(&text, "rt").unwrap();
        prop_assert_eq!(back, doc);
    }
}

#[test]
fn builtin_cases_round_trip() {
    for name in CASE_NAMES {
        let doc = builtin_case(name).unwrap();
        assert_eq!(parse_scenario(&to_json(&doc), "rt").unwrap(), doc);
    }
}
