#![allow(dead_code)]

use phasorgrid::engine::{RunOutput, Simulation};
use phasorgrid::scenario::{build_system, parse_scenario, validate, FeederSource, ScenarioDoc};

pub fn doc(text: &str) -> ScenarioDoc {
    let d = parse_scenario(text, "test").unwrap();
    validate(&d, &FeederSource::bundled()).unwrap_or_else(|e| panic!("{e:?}"));
    d
}

pub fn simulation(d: &ScenarioDoc) -> Simulation {
    let spec = build_system(d, &FeederSource::bundled()).unwrap();
    Simulation::new(spec, d.sim).unwrap()
}

pub fn run(d: &ScenarioDoc) -> RunOutput {
    simulation(d).run().unwrap()
}

/// Two 4.16 kV buses joined by a short line: a grid-forming inverter at
/// `src`, a diesel generator there too when `diesel` is set, and a load at
/// `ld` that starts de-energized.
pub fn small_system(diesel: bool, load_kw: f64, events: &str, duration: f64) -> String {
    let dg = if diesel {
        r#",{"type": "diesel", "id": "dg", "bus": "src", "rating": 3e6, "r": 0.03}"#
    } else {
        ""
    };
    format!(
        r#"{{
  "schema": "phasorgrid/scenario@1",
  "name": "small",
  "network": {{
    "buses": [
      {{"id": "src", "phases": "ABC", "kv_ll": 4.16}},
      {{"id": "ld", "phases": "ABC", "kv_ll": 4.16}}
    ],
    "branches": [
      {{"kind": "line", "from": "src", "to": "ld", "phases": "ABC",
        "z": [[[0.05, 0.1], [0, 0], [0, 0]], [[0, 0], [0.05, 0.1], [0, 0]], [[0, 0], [0, 0], [0.05, 0.1]]]}}
    ],
    "loads": [{{"id": "load", "bus": "ld", "p": {p}, "q": 0, "energized": false}}]
  }},
  "devices": [
    {{"type": "gfm", "id": "bess", "bus": "src", "rating": 3e6, "m_p": 0.01}},
    {{"type": "gfl", "id": "pv", "bus": "ld", "rating": 1.6e6, "ramp_rate": 1e7, "online": false}}
    {dg}
  ],
  "events": [{events}],
  "sim": {{"duration": {duration}}}
}}"#,
        p = load_kw * 1e3
    )
}
