use std::collections::{HashMap, HashSet};

use super::build::{build_system, draft, FeederSource};
use super::{DeviceDoc, ScenarioDoc, SideBDoc, SCENARIO_SCHEMA};
use crate::engine::{Action, Quantity};
use crate::netmodel::feeder::BranchData;

/// One validation finding, located by a dotted path into the document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Issue {
    pub path: String,
    pub message: String,
}

impl Issue {
    pub fn new(path: &str, message: String) -> Self {
        Issue {
            path: path.to_string(),
            message,
        }
    }
}

impl std::fmt::Display for Issue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

fn positive(issues: &mut Vec<Issue>, path: String, v: f64) {
    if !(v > 0.0 && v.is_finite()) {
        issues.push(Issue::new(&path, format!("must be positive, got {v}")));
    }
}

/// Checks every cross-reference and parameter range, reporting all
/// problems found rather than the first.
pub fn validate(doc: &ScenarioDoc, source: &FeederSource) -> Result<(), Vec<Issue>> {
    let mut issues = Vec::new();
    if doc.schema != SCENARIO_SCHEMA {
        issues.push(Issue::new(
            "schema",
            format!("expected \"{SCENARIO_SCHEMA}\", got \"{}\"", doc.schema),
        ));
    }
    if let Err(e) = doc.sim.validate() {
        issues.push(Issue::new("sim", e));
    }

    let d = match draft(&doc.network, source) {
        Ok(d) => d,
        Err(mut e) => {
            issues.append(&mut e);
            return Err(issues);
        }
    };

    let mut buses = HashSet::new();
    for (i, b) in d.buses.iter().enumerate() {
        if !buses.insert(b.id.as_str()) {
            issues.push(Issue::new(
                &format!("network.buses[{i}].id"),
                format!("duplicate bus \"{}\"", b.id),
            ));
        }
    }
    let mut branch_ids = HashSet::new();
    let mut switches = HashSet::new();
    for b in &d.branches {
        let id = b.data.id();
        let (f, t) = b.data.ends();
        for end in [f, t] {
            if !buses.contains(end) {
                issues.push(Issue::new(
                    &format!("network.branches.{id}"),
                    format!("unknown bus \"{end}\""),
                ));
            }
        }
        if let BranchData::Regulator { regulator, .. } = &b.data {
            if !buses.contains(regulator.monitored_bus.as_str()) {
                issues.push(Issue::new(
                    &format!("network.branches.{id}.regulator.monitored_bus"),
                    format!("unknown bus \"{}\"", regulator.monitored_bus),
                ));
            }
        }
        if matches!(b.data, BranchData::Switch { .. }) {
            switches.insert(id.clone());
        }
        branch_ids.insert(id);
    }
    let mut loads = HashSet::new();
    for (i, l) in doc.network.loads.iter().enumerate() {
        if !buses.contains(l.bus.as_str()) {
            issues.push(Issue::new(
                &format!("network.loads[{i}].bus"),
                format!("unknown bus \"{}\"", l.bus),
            ));
        }
    }
    for l in &d.loads {
        loads.insert(l.id.as_str());
    }
    for (i, s) in doc.network.shunts.iter().enumerate() {
        if !buses.contains(s.bus.as_str()) {
            issues.push(Issue::new(
                &format!("network.shunts[{i}].bus"),
                format!("unknown bus \"{}\"", s.bus),
            ));
        }
    }

    let mut targets: HashSet<&str> = HashSet::new();
    for (i, dev) in doc.devices.iter().enumerate() {
        let path = format!("devices[{i}]");
        if !targets.insert(dev.id()) {
            issues.push(Issue::new(
                &format!("{path}.id"),
                format!("duplicate device \"{}\"", dev.id()),
            ));
        }
        if !buses.contains(dev.bus()) {
            issues.push(Issue::new(
                &format!("{path}.bus"),
                format!("unknown bus \"{}\"", dev.bus()),
            ));
        }
        positive(&mut issues, format!("{path}.rating"), dev.rating());
        match dev {
            DeviceDoc::Gfm { m_p, .. } => {
                if let Some(m) = m_p {
                    if !(*m > 0.0 && *m <= 0.1) {
                        issues.push(Issue::new(
                            &format!("{path}.m_p"),
                            format!("must lie in (0, 0.1], got {m}"),
                        ));
                    }
                }
            }
            DeviceDoc::Gfl { ramp_rate, .. } => {
                positive(&mut issues, format!("{path}.ramp_rate"), *ramp_rate)
            }
            DeviceDoc::Diesel { r, h, .. } => {
                if let Some(r) = r {
                    positive(&mut issues, format!("{path}.r"), *r);
                }
                if let Some(h) = h {
                    positive(&mut issues, format!("{path}.h"), *h);
                }
            }
        }
    }

    let mut btb_id = None;
    if let Some(b) = &doc.btb {
        if !targets.insert(b.id.as_str()) {
            issues.push(Issue::new("btb.id", format!("duplicate id \"{}\"", b.id)));
        }
        btb_id = Some(b.id.as_str());
        for (p, id) in [("btb.bus_a", &b.bus_a), ("btb.bus_b", &b.bus_b)] {
            if !buses.contains(id.as_str()) {
                issues.push(Issue::new(p, format!("unknown bus \"{id}\"")));
            }
        }
        positive(&mut issues, "btb.rating".into(), b.rating);
        positive(&mut issues, "btb.vdc_nominal".into(), b.vdc_nominal);
        positive(&mut issues, "btb.capacitance".into(), b.capacitance);
        positive(&mut issues, "btb.vdc0".into(), b.vdc0);
        if !(b.protection[0] < 1.0 && b.protection[1] > 1.0) {
            issues.push(Issue::new(
                "btb.protection",
                "band must contain 1 pu".into(),
            ));
        }
        if !(0.0..0.5).contains(&b.loss_fraction) {
            issues.push(Issue::new(
                "btb.loss_fraction",
                "must be in [0, 0.5)".into(),
            ));
        }
        if !(b.vdc_droop >= 0.0 && b.vdc_droop.is_finite()) {
            issues.push(Issue::new(
                "btb.vdc_droop",
                "must be finite and non-negative".into(),
            ));
        }
        if let SideBDoc::Gfl { ramp_rate, .. } = &b.side_b {
            positive(&mut issues, "btb.side_b.ramp_rate".into(), *ramp_rate);
        }
        // With every switch closed the two sides must still be apart.
        let mut parent: HashMap<&str, &str> = HashMap::new();
        fn find<'a>(p: &mut HashMap<&'a str, &'a str>, x: &'a str) -> &'a str {
            let mut r = x;
            while let Some(&n) = p.get(r) {
                if n == r {
                    break;
                }
                r = n;
            }
            r
        }
        for br in &d.branches {
            let (f, t) = br.data.ends();
            let (a, c) = (find(&mut parent, f), find(&mut parent, t));
            if a != c {
                parent.insert(a, c);
            }
        }
        if find(&mut parent, &b.bus_a) == find(&mut parent, &b.bus_b) {
            issues.push(Issue::new(
                "btb",
                format!("an AC path joins \"{}\" and \"{}\"", b.bus_a, b.bus_b),
            ));
        }
    }

    for (i, e) in doc.events.iter().enumerate() {
        let path = format!("events[{i}]");
        if !(e.time >= 0.0 && e.time <= doc.sim.duration) {
            issues.push(Issue::new(
                &format!("{path}.time"),
                format!("{} s is outside [0, {}] s", e.time, doc.sim.duration),
            ));
        }
        let t = e.action.target();
        let ok = match &e.action {
            Action::EnergizeLoad { .. } | Action::DeenergizeLoad { .. } => loads.contains(t),
            Action::OpenSwitch { .. } | Action::CloseSwitch { .. } => switches.contains(t),
            Action::SetReference { .. } | Action::RampReference { .. } => targets.contains(t),
            Action::Connect { .. } | Action::Disconnect { .. } => {
                targets.contains(t) && btb_id != Some(t)
            }
        };
        if !ok {
            issues.push(Issue::new(
                &format!("{path}.target"),
                format!("\"{t}\" is not a valid target for {}", e.action.name()),
            ));
        }
        if let Action::RampReference { duration, .. } = &e.action {
            if !(*duration >= 0.0) {
                issues.push(Issue::new(
                    &format!("{path}.duration"),
                    "must not be negative".into(),
                ));
            }
        }
    }

    let mut names = HashSet::new();
    for (i, c) in doc.recorders.iter().enumerate() {
        let path = format!("recorders[{i}]");
        if !names.insert(c.name.as_str()) {
            issues.push(Issue::new(
                &format!("{path}.name"),
                format!("duplicate channel \"{}\"", c.name),
            ));
        }
        let t = c.target.as_str();
        let known = c.quantity == Quantity::Residual
            || targets.contains(t)
            || loads.contains(t)
            || buses.contains(t)
            || branch_ids.contains(t);
        if !known {
            issues.push(Issue::new(
                &format!("{path}.target"),
                format!("unknown target \"{t}\""),
            ));
        }
    }

    if !issues.is_empty() {
        return Err(issues);
    }
    // Remaining model invariants are checked by the builders.
    let spec = build_system(doc, source)?;
    crate::engine::Simulation::new(spec, doc.sim)
        .map(|_| ())
        .map_err(|e| vec![Issue::new("scenario", e.to_string())])
}
