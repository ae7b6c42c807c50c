use std::collections::BTreeMap;
use std::path::PathBuf;

use super::build::{build_network, FeederSource};
use super::{parse_scenario, FeederInstance, NetworkDoc, ScenarioDoc, ScenarioError, DATA_DIR_ENV};
use crate::netmodel::feeder::{BranchData, BusData};
use crate::netmodel::NetworkModel;
use crate::phase::PhaseSet;

pub const CASE_NAMES: [&str; 3] = ["flexible_exchange", "dynamic_decoupling", "black_start"];

const FLEXIBLE_EXCHANGE: &str = include_str!("../../data/cases/flexible_exchange.json");
const DYNAMIC_DECOUPLING: &str = include_str!("../../data/cases/dynamic_decoupling.json");
const BLACK_START: &str = include_str!("../../data/cases/black_start.json");

/// Network section of the two-microgrid system: MG0 keeps the feeder's
/// node ids, MG1 appends "1". Each side has a converter node (`btb0`,
/// `btb1`) ahead of its 650; the MG1 stub switch is the inter-tie.
pub fn two_microgrid_network() -> NetworkDoc {
    let bus = |id: &str, group: &str| BusData {
        id: id.into(),
        phases: PhaseSet::ABC,
        kv_ll: 4.16,
        group: Some(group.into()),
    };
    let switch = |from: &str, to: &str, closed| BranchData::Switch {
        id: Some(format!("{from}-{to}")),
        from: from.into(),
        to: to.into(),
        closed,
        phases: None,
    };
    NetworkDoc {
        feeders: vec![
            FeederInstance {
                feeder: "ieee13_modified".into(),
                suffix: String::new(),
                group: Some("MG0".into()),
            },
            FeederInstance {
                feeder: "ieee13_modified".into(),
                suffix: "1".into(),
                group: Some("MG1".into()),
            },
        ],
        buses: vec![bus("btb0", "MG0"), bus("btb1", "MG1")],
        branches: vec![switch("btb0", "650", true), switch("btb1", "6501", false)],
        loads: Vec::new(),
        shunts: Vec::new(),
        switches: BTreeMap::new(),
        deenergized_loads: Vec::new(),
    }
}

/// Builds the two-microgrid network from bundled data, inter-tie open.
pub fn build_two_microgrid_system() -> Result<NetworkModel, ScenarioError> {
    build_network(&two_microgrid_network(), &FeederSource::bundled())
        .map_err(ScenarioError::Invalid)
}

/// Returns one of the bundled cases, or its override from
/// `$PHASORGRID_DATA_DIR/cases/<name>.json` when that file exists.
pub fn builtin_case(name: &str) -> Result<ScenarioDoc, ScenarioError> {
    let bundled = match name {
        "flexible_exchange" => FLEXIBLE_EXCHANGE,
        "dynamic_decoupling" => DYNAMIC_DECOUPLING,
        "black_start" => BLACK_START,
        _ => return Err(ScenarioError::UnknownCase(name.into())),
    };
    if let Some(dir) = std::env::var_os(DATA_DIR_ENV) {
        let path = PathBuf::from(dir)
            .join("cases")
            .join(format!("{name}.json"));
        if path.exists() {
            return super::load_scenario(&path);
        }
    }
    parse_scenario(bundled, &format!("<builtin {name}>"))
}
