//! Scenario documents (schema `phasorgrid/scenario@1`), their validation,
//! and the bundled two-microgrid cases.
//!
//! A document has six sections:
//!
//! * `network`: feeder instances (a bundled or external feeder file copied
//!   with an id suffix), extra buses/branches/loads/shunts, initial switch
//!   states and initially de-energized loads;
//! * `devices`: grid-forming inverters, grid-following inverters and
//!   diesel generators attached to buses;
//! * `btb`: the optional back-to-back converter;
//! * `events`: timed actions;
//! * `recorders`: output channels (all device and converter channels when
//!   empty);
//! * `sim`: step size, duration, solver tolerance and record decimation.

mod build;
mod cases;
mod validate;

pub use build::{build_network, build_system, FeederSource};
pub use cases::{build_two_microgrid_system, builtin_case, two_microgrid_network, CASE_NAMES};
pub use validate::{validate, Issue};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::engine::{Channel, Event, SimConfig};
use crate::netmodel::feeder::{BranchData, BusData, LoadData, ShuntData};

pub const SCENARIO_SCHEMA: &str = "phasorgrid/scenario@1";

/// Environment variable naming a directory that overrides bundled data:
/// `<dir>/<feeder>.json` and `<dir>/cases/<case>.json`.
pub const DATA_DIR_ENV: &str = "PHASORGRID_DATA_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDoc {
    pub schema: String,
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub network: NetworkDoc,
    #[serde(default)]
    pub devices: Vec<DeviceDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub btb: Option<BtbDoc>,
    #[serde(default)]
    pub events: Vec<Event>,
    #[serde(default)]
    pub recorders: Vec<Channel>,
    pub sim: SimConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeederInstance {
    /// Bundled feeder name, or a path to a feeder file when it contains a
    /// path separator or ends in `.json`.
    pub feeder: String,
    #[serde(default)]
    pub suffix: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkDoc {
    #[serde(default)]
    pub feeders: Vec<FeederInstance>,
    #[serde(default)]
    pub buses: Vec<BusData>,
    #[serde(default)]
    pub branches: Vec<BranchData>,
    #[serde(default)]
    pub loads: Vec<LoadData>,
    #[serde(default)]
    pub shunts: Vec<ShuntData>,
    /// Initial switch states overriding the branch data, by branch id.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub switches: BTreeMap<String, bool>,
    /// Loads that start de-energized, by id.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub deenergized_loads: Vec<String>,
}

fn yes() -> bool {
    true
}
fn is_true(b: &bool) -> bool {
    *b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DeviceDoc {
    Gfm {
        id: String,
        bus: String,
        #[serde(default = "yes", skip_serializing_if = "is_true")]
        online: bool,
        /// VA.
        rating: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        f0: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        m_p: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        m_q: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        t_f: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        x_pu: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        overload: Option<f64>,
        #[serde(default)]
        p_ref: f64,
        #[serde(default)]
        q_ref: f64,
    },
    Gfl {
        id: String,
        bus: String,
        #[serde(default = "yes", skip_serializing_if = "is_true")]
        online: bool,
        rating: f64,
        /// W/s.
        ramp_rate: f64,
        #[serde(default)]
        p: f64,
        #[serde(default)]
        q: f64,
        /// Per-phase current limit, A; defaults to 1.1 × rated current.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        current_limit: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sync_threshold: Option<f64>,
    },
    Diesel {
        id: String,
        bus: String,
        #[serde(default = "yes", skip_serializing_if = "is_true")]
        online: bool,
        rating: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        f0: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        h: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        d: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        r: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        t_g: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        xd_pu: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        trip: Option<f64>,
        #[serde(default)]
        p_ref: f64,
    },
}

impl DeviceDoc {
    pub fn id(&self) -> &str {
        match self {
            DeviceDoc::Gfm { id, .. }
            | DeviceDoc::Gfl { id, .. }
            | DeviceDoc::Diesel { id, .. } => id,
        }
    }

    pub fn bus(&self) -> &str {
        match self {
            DeviceDoc::Gfm { bus, .. }
            | DeviceDoc::Gfl { bus, .. }
            | DeviceDoc::Diesel { bus, .. } => bus,
        }
    }

    pub fn rating(&self) -> f64 {
        match self {
            DeviceDoc::Gfm { rating, .. }
            | DeviceDoc::Gfl { rating, .. }
            | DeviceDoc::Diesel { rating, .. } => *rating,
        }
    }

    pub fn online(&self) -> bool {
        match self {
            DeviceDoc::Gfm { online, .. }
            | DeviceDoc::Gfl { online, .. }
            | DeviceDoc::Diesel { online, .. } => *online,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum SideBDoc {
    Gfl {
        /// W/s.
        ramp_rate: f64,
        #[serde(default)]
        p: f64,
        #[serde(default)]
        q: f64,
    },
    Gfm {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        m_p: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        m_q: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        t_f: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        x_pu: Option<f64>,
        #[serde(default)]
        p_ref: f64,
        #[serde(default)]
        q_ref: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrechargeDoc {
    /// W.
    pub p_limit: f64,
    /// s.
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_precharge_tol")]
    pub tolerance: f64,
    /// s.
    #[serde(default = "default_timeout")]
    pub timeout: f64,
}

fn default_tau() -> f64 {
    0.02
}
fn default_precharge_tol() -> f64 {
    0.01
}
fn default_timeout() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BtbDoc {
    pub id: String,
    /// Bus of the DC-voltage regulating side.
    pub bus_a: String,
    /// Bus of the power-control side.
    pub bus_b: String,
    /// VA per side.
    pub rating: f64,
    /// V.
    pub vdc_nominal: f64,
    /// F.
    pub capacitance: f64,
    /// Initial DC voltage, pu.
    #[serde(default = "default_vdc0")]
    pub vdc0: f64,
    /// W/V; defaults to `2·rating/vdc_nominal`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kp: Option<f64>,
    /// W/(V·s); defaults to `kp / 0.1 s`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ki: Option<f64>,
    #[serde(default)]
    pub loss_fraction: f64,
    /// Side-B power added per pu of DC voltage error, pu of rating.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub vdc_droop: f64,
    #[serde(default = "default_protection")]
    pub protection: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precharge: Option<PrechargeDoc>,
    pub side_b: SideBDoc,
}

fn default_vdc0() -> f64 {
    1.0
}
fn is_zero(x: &f64) -> bool {
    *x == 0.0
}
fn default_protection() -> [f64; 2] {
    [0.8, 1.2]
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("{path}: syntax error at line {line}, column {column}: {message}")]
    Syntax {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: cannot read: {message}")]
    Io { path: String, message: String },
    #[error("unknown built-in case \"{0}\" (available: flexible_exchange, dynamic_decoupling, black_start)")]
    UnknownCase(String),
    #[error("{} validation error(s):\n{}", .0.len(), .0.iter().map(|i| format!("  {i}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Issue>),
}

/// Parses a scenario document. `origin` names the source in messages.
pub fn parse_scenario(text: &str, origin: &str) -> Result<ScenarioDoc, ScenarioError> {
    serde_json::from_str(text).map_err(|e| ScenarioError::Syntax {
        path: origin.to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

/// Reads, parses and validates a scenario file. Feeder paths are resolved
/// relative to the file's directory.
pub fn load_scenario(path: &std::path::Path) -> Result<ScenarioDoc, ScenarioError> {
    let origin = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
        path: origin.clone(),
        message: e.to_string(),
    })?;
    let doc = parse_scenario(&text, &origin)?;
    let source = FeederSource::relative_to(path.parent());
    validate(&doc, &source).map_err(ScenarioError::Invalid)?;
    Ok(doc)
}

pub fn to_json(doc: &ScenarioDoc) -> String {
    serde_json::to_string_pretty(doc).expect("scenario documents always serialize")
}

#[cfg(test)]
mod tests;
