//! Feeder data files and string-keyed network drafts.
//!
//! A feeder file (schema `phasorgrid/feeder@1`) holds line configurations,
//! buses, branches, loads and shunt capacitors of one distribution feeder.
//! Instantiating it with a suffix yields a [`NetworkDraft`] whose ids all
//! carry that suffix, so that two copies of the same feeder can live in one
//! network ("650" and "6501").

use std::collections::{BTreeMap, HashSet};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{
    Branch, BranchKind, Bus, BusKind, ConstantPowerLoad, Mat3, NetworkError, NetworkModel,
    RegulatorSpec, ShuntCapacitor, TransformerSpec, ZERO3,
};
use crate::phase::PhaseSet;

pub const FEEDER_SCHEMA: &str = "phasorgrid/feeder@1";

/// The modified IEEE 13-node feeder shipped with the crate.
pub const BUNDLED_IEEE13: &str = include_str!("../../data/ieee13_modified.json");

const FEET_PER_MILE: f64 = 5280.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineConfig {
    pub phases: PhaseSet,
    /// Series impedance rows over `phases`, `[r, x]` ohm per mile.
    pub z: Vec<Vec<[f64; 2]>>,
    /// Shunt susceptance rows over `phases`, microsiemens per mile.
    #[serde(default)]
    pub b: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusData {
    pub id: String,
    pub phases: PhaseSet,
    /// Line-to-line kilovolts.
    pub kv_ll: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformerData {
    /// VA.
    pub rating: f64,
    pub kv_primary: f64,
    pub kv_secondary: f64,
    pub r_pu: f64,
    pub x_pu: f64,
}

fn default_tap_step() -> f64 {
    0.00625
}
fn default_tap_range() -> i32 {
    16
}
fn default_dwell() -> f64 {
    30.0
}
fn default_regulator_z() -> [f64; 2] {
    [0.001, 0.01]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegulatorData {
    pub monitored_bus: String,
    /// Line-to-neutral volts.
    pub band_center: f64,
    pub band_width: f64,
    #[serde(default = "default_tap_step")]
    pub tap_step: f64,
    #[serde(default = "default_tap_range")]
    pub tap_range: i32,
    #[serde(default = "default_dwell")]
    pub dwell: f64,
    #[serde(default)]
    pub initial_tap: i32,
    /// `[r, x]` ohms per phase.
    #[serde(default = "default_regulator_z")]
    pub impedance: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BranchData {
    Line {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<String>,
        from: String,
        to: String,
        /// Name of a line configuration of the same feeder file.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        config: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        length_ft: Option<f64>,
        /// Inline alternative to `config`: total impedance rows over `phases`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        phases: Option<PhaseSet>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        z: Option<Vec<Vec<[f64; 2]>>>,
    },
    Switch {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<String>,
        from: String,
        to: String,
        closed: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        phases: Option<PhaseSet>,
    },
    Transformer {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<String>,
        from: String,
        to: String,
        transformer: TransformerData,
    },
    Regulator {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<String>,
        from: String,
        to: String,
        regulator: RegulatorData,
    },
}

impl BranchData {
    pub fn ends(&self) -> (&str, &str) {
        match self {
            BranchData::Line { from, to, .. }
            | BranchData::Switch { from, to, .. }
            | BranchData::Transformer { from, to, .. }
            | BranchData::Regulator { from, to, .. } => (from, to),
        }
    }

    pub fn id(&self) -> String {
        let explicit = match self {
            BranchData::Line { id, .. }
            | BranchData::Switch { id, .. }
            | BranchData::Transformer { id, .. }
            | BranchData::Regulator { id, .. } => id.clone(),
        };
        explicit.unwrap_or_else(|| {
            let (f, t) = self.ends();
            format!("{f}-{t}")
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadData {
    pub id: String,
    pub bus: String,
    /// Three-phase totals, W and VAR, split evenly over the bus phases.
    pub p: f64,
    pub q: f64,
    #[serde(default = "yes", skip_serializing_if = "is_true")]
    pub energized: bool,
}

fn yes() -> bool {
    true
}
fn is_true(b: &bool) -> bool {
    *b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShuntData {
    pub id: String,
    pub bus: String,
    /// VAR at nominal voltage, three-phase total.
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeederData {
    pub schema: String,
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub line_configs: BTreeMap<String, LineConfig>,
    pub buses: Vec<BusData>,
    #[serde(default)]
    pub branches: Vec<BranchData>,
    #[serde(default)]
    pub loads: Vec<LoadData>,
    #[serde(default)]
    pub shunts: Vec<ShuntData>,
}

#[derive(Debug, thiserror::Error)]
pub enum FeederError {
    #[error("feeder data is not valid JSON for schema {FEEDER_SCHEMA}: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported feeder schema \"{0}\"")]
    Schema(String),
    #[error("line {branch} references unknown configuration \"{config}\"")]
    UnknownConfig { branch: String, config: String },
    #[error("line {0}: {1}")]
    BadLine(String, String),
}

impl FeederData {
    pub fn parse(text: &str) -> Result<Self, FeederError> {
        let data: FeederData = serde_json::from_str(text)?;
        if data.schema != FEEDER_SCHEMA {
            return Err(FeederError::Schema(data.schema));
        }
        for br in &data.branches {
            if let BranchData::Line {
                config: Some(cfg), ..
            } = br
            {
                if !data.line_configs.contains_key(cfg) {
                    return Err(FeederError::UnknownConfig {
                        branch: br.id(),
                        config: cfg.clone(),
                    });
                }
            }
        }
        Ok(data)
    }

    pub fn bundled() -> Self {
        Self::parse(BUNDLED_IEEE13).expect("bundled feeder data is valid")
    }

    /// Copy of the feeder with every id suffixed and every bus tagged with
    /// `group`. Line configurations are resolved into inline impedances.
    pub fn instantiate(
        &self,
        suffix: &str,
        group: Option<&str>,
    ) -> Result<NetworkDraft, FeederError> {
        let sfx = |s: &str| format!("{s}{suffix}");
        let buses = self
            .buses
            .iter()
            .map(|b| BusData {
                id: sfx(&b.id),
                phases: b.phases,
                kv_ll: b.kv_ll,
                group: group.map(str::to_string).or_else(|| b.group.clone()),
            })
            .collect();
        let mut branches = Vec::with_capacity(self.branches.len());
        for br in &self.branches {
            let id = br.id();
            let new_id = |explicit: &Option<String>| explicit.as_ref().map(|_| sfx(&id));
            let out = match br {
                BranchData::Line {
                    id: explicit,
                    from,
                    to,
                    config,
                    length_ft,
                    phases,
                    z,
                } => {
                    let (phases, z) = match config {
                        Some(cfg) => {
                            let c = &self.line_configs[cfg];
                            let len = length_ft.ok_or_else(|| {
                                FeederError::BadLine(id.clone(), "missing length_ft".into())
                            })?;
                            let miles = len / FEET_PER_MILE;
                            let z =
                                c.z.iter()
                                    .map(|row| {
                                        row.iter().map(|[r, x]| [r * miles, x * miles]).collect()
                                    })
                                    .collect();
                            (Some(c.phases), Some(z))
                        }
                        None => (*phases, z.clone()),
                    };
                    let shunt = config
                        .as_ref()
                        .map(|cfg| (cfg.clone(), length_ft.unwrap_or(0.0)));
                    branches.push(DraftBranch {
                        data: BranchData::Line {
                            id: new_id(explicit),
                            from: sfx(from),
                            to: sfx(to),
                            config: None,
                            length_ft: None,
                            phases,
                            z,
                        },
                        shunt_b: shunt.map(|(cfg, len)| {
                            let miles = len / FEET_PER_MILE;
                            self.line_configs[&cfg]
                                .b
                                .iter()
                                .map(|row| row.iter().map(|b| b * 1e-6 * miles).collect())
                                .collect()
                        }),
                        group: group.map(str::to_string),
                    });
                    continue;
                }
                BranchData::Switch {
                    id: explicit,
                    from,
                    to,
                    closed,
                    phases,
                } => BranchData::Switch {
                    id: new_id(explicit),
                    from: sfx(from),
                    to: sfx(to),
                    closed: *closed,
                    phases: *phases,
                },
                BranchData::Transformer {
                    id: explicit,
                    from,
                    to,
                    transformer,
                } => BranchData::Transformer {
                    id: new_id(explicit),
                    from: sfx(from),
                    to: sfx(to),
                    transformer: transformer.clone(),
                },
                BranchData::Regulator {
                    id: explicit,
                    from,
                    to,
                    regulator,
                } => {
                    let mut r = regulator.clone();
                    r.monitored_bus = sfx(&r.monitored_bus);
                    BranchData::Regulator {
                        id: new_id(explicit),
                        from: sfx(from),
                        to: sfx(to),
                        regulator: r,
                    }
                }
            };
            branches.push(DraftBranch {
                data: out,
                shunt_b: None,
                group: group.map(str::to_string),
            });
        }
        let loads = self
            .loads
            .iter()
            .map(|l| LoadData {
                id: sfx(&l.id),
                bus: sfx(&l.bus),
                ..l.clone()
            })
            .collect();
        let shunts = self
            .shunts
            .iter()
            .map(|s| ShuntData {
                id: sfx(&s.id),
                bus: sfx(&s.bus),
                q: s.q,
            })
            .collect();
        Ok(NetworkDraft {
            buses,
            branches,
            loads,
            shunts,
            source_buses: HashSet::new(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DraftBranch {
    pub data: BranchData,
    /// Total shunt susceptance rows over the line phases, siemens.
    pub shunt_b: Option<Vec<Vec<f64>>>,
    pub group: Option<String>,
}

/// String-keyed network under construction.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NetworkDraft {
    pub buses: Vec<BusData>,
    pub branches: Vec<DraftBranch>,
    pub loads: Vec<LoadData>,
    pub shunts: Vec<ShuntData>,
    pub source_buses: HashSet<String>,
}

fn rows_to_mat3(phases: PhaseSet, rows: &[Vec<Complex64>]) -> Option<Mat3> {
    let idx: Vec<usize> = phases.iter().map(|p| p.index()).collect();
    if rows.len() != idx.len() || rows.iter().any(|r| r.len() != idx.len()) {
        return None;
    }
    let mut m = ZERO3;
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            m[idx[i]][idx[j]] = *v;
        }
    }
    Some(m)
}

impl NetworkDraft {
    pub fn extend(&mut self, other: NetworkDraft) {
        self.buses.extend(other.buses);
        self.branches.extend(other.branches);
        self.loads.extend(other.loads);
        self.shunts.extend(other.shunts);
        self.source_buses.extend(other.source_buses);
    }

    pub fn build(&self) -> Result<NetworkModel, NetworkError> {
        let index: std::collections::HashMap<&str, usize> = self
            .buses
            .iter()
            .enumerate()
            .map(|(i, b)| (b.id.as_str(), i))
            .collect();
        let resolve = |element: String, id: &str| {
            index.get(id).copied().ok_or(NetworkError::UnknownBus {
                element,
                bus: id.to_string(),
            })
        };
        let load_buses: HashSet<&str> = self.loads.iter().map(|l| l.bus.as_str()).collect();
        let buses = self
            .buses
            .iter()
            .map(|b| Bus {
                id: b.id.clone(),
                phases: b.phases,
                nominal_voltage: b.kv_ll * 1000.0 / 3f64.sqrt(),
                kind: if self.source_buses.contains(&b.id) {
                    BusKind::Source
                } else if load_buses.contains(b.id.as_str()) {
                    BusKind::Load
                } else {
                    BusKind::Node
                },
                group: b.group.clone(),
            })
            .collect::<Vec<_>>();

        let mut branches = Vec::with_capacity(self.branches.len());
        for db in &self.branches {
            let id = db.data.id();
            let (f, t) = db.data.ends();
            let from = resolve(format!("branch \"{id}\""), f)?;
            let to = resolve(format!("branch \"{id}\""), t)?;
            let common = PhaseSet::from_phases(
                &buses[from]
                    .phases
                    .iter()
                    .filter(|p| buses[to].phases.contains(*p))
                    .collect::<Vec<_>>(),
            );
            let (phases, kind) = match &db.data {
                BranchData::Line { phases, z, .. } => {
                    let phases = phases.unwrap_or(PhaseSet::ABC);
                    let rows: Vec<Vec<Complex64>> = z
                        .as_ref()
                        .ok_or_else(|| NetworkError::SingularLine(id.clone()))?
                        .iter()
                        .map(|r| r.iter().map(|[a, b]| Complex64::new(*a, *b)).collect())
                        .collect();
                    let z = rows_to_mat3(phases, &rows)
                        .ok_or_else(|| NetworkError::SingularLine(id.clone()))?;
                    let y_shunt = match &db.shunt_b {
                        Some(b) => {
                            let rows: Vec<Vec<Complex64>> = b
                                .iter()
                                .map(|r| r.iter().map(|v| Complex64::new(0.0, *v)).collect())
                                .collect();
                            rows_to_mat3(phases, &rows).unwrap_or(ZERO3)
                        }
                        None => ZERO3,
                    };
                    (phases, BranchKind::Line { z, y_shunt })
                }
                BranchData::Switch { closed, phases, .. } => (
                    phases.unwrap_or(common),
                    BranchKind::Switch { closed: *closed },
                ),
                BranchData::Transformer { transformer: t, .. } => (
                    common,
                    BranchKind::Transformer(TransformerSpec {
                        rating: t.rating,
                        primary_voltage: t.kv_primary * 1000.0,
                        secondary_voltage: t.kv_secondary * 1000.0,
                        r_pu: t.r_pu,
                        x_pu: t.x_pu,
                    }),
                ),
                BranchData::Regulator { regulator: r, .. } => {
                    let monitored = resolve(format!("regulator \"{id}\""), &r.monitored_bus)?;
                    (
                        common,
                        BranchKind::Regulator(RegulatorSpec {
                            monitored_bus: monitored,
                            band_center: r.band_center,
                            band_width: r.band_width,
                            tap_step: r.tap_step,
                            tap_range: r.tap_range,
                            dwell: r.dwell,
                            initial_tap: r.initial_tap,
                            impedance: Complex64::new(r.impedance[0], r.impedance[1]),
                        }),
                    )
                }
            };
            if phases.is_empty() {
                return Err(NetworkError::PhaseMismatch {
                    branch: id,
                    phases,
                    bus: buses[to].id.clone(),
                });
            }
            branches.push(Branch {
                id,
                from,
                to,
                phases,
                kind,
                group: db.group.clone(),
            });
        }

        let mut loads = Vec::with_capacity(self.loads.len());
        for l in &self.loads {
            let bus = resolve(format!("load \"{}\"", l.id), &l.bus)?;
            let mut load = ConstantPowerLoad::balanced(
                &l.id,
                bus,
                buses[bus].phases,
                Complex64::new(l.p, l.q),
            );
            load.energized = l.energized;
            loads.push(load);
        }
        let mut shunts = Vec::with_capacity(self.shunts.len());
        for s in &self.shunts {
            let bus = resolve(format!("shunt \"{}\"", s.id), &s.bus)?;
            shunts.push(ShuntCapacitor {
                id: s.id.clone(),
                bus,
                q: s.q,
            });
        }
        NetworkModel::new(buses, branches, loads, shunts)
    }
}
