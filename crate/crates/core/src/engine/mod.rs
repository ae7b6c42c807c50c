//! Fixed-step hybrid simulation: timed events, Heun integration of device
//! and DC-link states, one network solve per integration pass, and channel
//! recording.

mod init;
mod record;
mod sim;

pub use record::{format_g9, RecordError, TimeSeriesRecord};
pub use sim::{InitReport, RunOutput, RunStats, Simulation};

use serde::{Deserialize, Serialize};

use crate::btb::{BtbConverter, BtbError};
use crate::devices::{DieselGen, GflInverter, GfmInverter};
use crate::netmodel::{NetworkError, NetworkModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// s.
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// s.
    pub duration: f64,
    /// VA; defaults to 1e-6 of the system base.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_iterations")]
    pub max_iterations: usize,
    /// Record every n-th step.
    #[serde(default = "default_decimation")]
    pub decimation: usize,
}

fn default_dt() -> f64 {
    1e-3
}
fn default_tolerance() -> f64 {
    1e-6 * crate::SYSTEM_BASE_VA
}
fn default_iterations() -> usize {
    50
}
fn default_decimation() -> usize {
    10
}

impl SimConfig {
    pub fn new(duration: f64) -> Self {
        SimConfig {
            dt: default_dt(),
            duration,
            tolerance: default_tolerance(),
            max_iterations: default_iterations(),
            decimation: default_decimation(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.dt > 0.0) {
            return Err("dt must be positive".into());
        }
        if !(self.duration >= self.dt) {
            return Err("duration must be at least dt".into());
        }
        if self.decimation == 0 {
            return Err("decimation must be at least 1".into());
        }
        if !(self.tolerance > 0.0) {
            return Err("tolerance must be positive".into());
        }
        if self.max_iterations == 0 {
            return Err("max_iterations must be at least 1".into());
        }
        Ok(())
    }

    pub fn steps(&self) -> u64 {
        (self.duration / self.dt).round() as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum Action {
    EnergizeLoad {
        target: String,
    },
    DeenergizeLoad {
        target: String,
    },
    OpenSwitch {
        target: String,
    },
    CloseSwitch {
        target: String,
    },
    /// Sets the active and/or reactive reference of a device or of the
    /// converter's power side. Cancels a running ramp on the same target.
    SetReference {
        target: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        p: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        q: Option<f64>,
    },
    /// Moves the references linearly from their present values to the
    /// given ones over `duration` seconds.
    RampReference {
        target: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        p: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        q: Option<f64>,
        duration: f64,
    },
    Connect {
        target: String,
    },
    Disconnect {
        target: String,
    },
}

impl Action {
    pub fn target(&self) -> &str {
        match self {
            Action::EnergizeLoad { target }
            | Action::DeenergizeLoad { target }
            | Action::OpenSwitch { target }
            | Action::CloseSwitch { target }
            | Action::SetReference { target, .. }
            | Action::RampReference { target, .. }
            | Action::Connect { target }
            | Action::Disconnect { target } => target,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Action::EnergizeLoad { .. } => "energize_load",
            Action::DeenergizeLoad { .. } => "deenergize_load",
            Action::OpenSwitch { .. } => "open_switch",
            Action::CloseSwitch { .. } => "close_switch",
            Action::SetReference { .. } => "set_reference",
            Action::RampReference { .. } => "ramp_reference",
            Action::Connect { .. } => "connect",
            Action::Disconnect { .. } => "disconnect",
        }
    }
}

/// Timed action. Events at equal times apply in declaration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    #[serde(flatten)]
    pub action: Action,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    /// Active power delivered by a device, drawn by a load, or drawn by
    /// the converter's side A (`p_a`) / delivered by side B (`p_b`).
    P,
    Q,
    PA,
    PB,
    QA,
    QB,
    /// Device frequency, Hz.
    F,
    /// Mean line-to-neutral voltage magnitude of a device terminal or bus.
    V,
    Vdc,
    VdcPu,
    /// Regulator tap position.
    Tap,
    /// Complex-power balance residual of the network solution, VA.
    Residual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Channel {
    pub name: String,
    pub target: String,
    pub quantity: Quantity,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DeviceModel {
    Gfm(GfmInverter),
    Gfl(GflInverter),
    Diesel(DieselGen),
}

impl DeviceModel {
    pub fn kind(&self) -> &'static str {
        match self {
            DeviceModel::Gfm(_) => "gfm",
            DeviceModel::Gfl(_) => "gfl",
            DeviceModel::Diesel(_) => "diesel",
        }
    }

    pub fn rating(&self) -> f64 {
        match self {
            DeviceModel::Gfm(g) => g.params.rating,
            DeviceModel::Gfl(g) => g.rating,
            DeviceModel::Diesel(d) => d.params.rating,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Device {
    pub id: String,
    pub bus: usize,
    pub online: bool,
    pub model: DeviceModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BtbInstance {
    pub id: String,
    pub bus_a: usize,
    pub bus_b: usize,
    pub conv: BtbConverter,
}

/// Everything a simulation needs, with references resolved to indices.
#[derive(Debug, Clone)]
pub struct SystemSpec {
    pub network: NetworkModel,
    pub devices: Vec<Device>,
    pub btb: Option<BtbInstance>,
    pub events: Vec<Event>,
    pub channels: Vec<Channel>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum LogKind {
    Event,
    Warning,
    Tap,
    Trip,
    Info,
}

impl std::fmt::Display for LogKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LogKind::Event => "event",
            LogKind::Warning => "warning",
            LogKind::Tap => "tap",
            LogKind::Trip => "trip",
            LogKind::Info => "info",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    pub time: f64,
    pub kind: LogKind,
    pub message: String,
}

impl std::fmt::Display for LogEntry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.6} {} {}", self.time, self.kind, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("unknown {kind} \"{target}\"")]
    UnknownTarget { kind: String, target: String },
    #[error("event at t={time} s is outside [0, {duration}] s")]
    EventTime { time: f64, duration: f64 },
    #[error("channel \"{name}\": {reason}")]
    Channel { name: String, reason: String },
    #[error("network solve failed at t={time:.6} s: {source}")]
    Network {
        time: f64,
        #[source]
        source: NetworkError,
    },
    #[error("initialization found no equilibrium: {0}")]
    Init(String),
    #[error("converter fault at t={time:.6} s: {source}")]
    Btb {
        time: f64,
        #[source]
        source: BtbError,
    },
}
