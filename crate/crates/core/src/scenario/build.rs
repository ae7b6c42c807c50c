use std::path::{Path, PathBuf};

use super::{BtbDoc, DeviceDoc, Issue, NetworkDoc, ScenarioDoc, SideBDoc, DATA_DIR_ENV};
use crate::btb::{BtbConverter, DcLinkState, Precharge, SideB};
use crate::devices::{DieselGen, DieselParams, GflInverter, GfmInverter, GfmParams};
use crate::engine::{BtbInstance, Device, DeviceModel, SystemSpec};
use crate::netmodel::feeder::{BranchData, FeederData, NetworkDraft, BUNDLED_IEEE13};
use crate::netmodel::NetworkModel;

/// Where feeder files named in a scenario are looked up.
#[derive(Debug, Clone, Default)]
pub struct FeederSource {
    base: Option<PathBuf>,
}

impl FeederSource {
    /// Bundled data only (or the override directory when set).
    pub fn bundled() -> Self {
        FeederSource { base: None }
    }

    /// Also resolves relative feeder paths against `dir`.
    pub fn relative_to(dir: Option<&Path>) -> Self {
        FeederSource {
            base: dir.map(Path::to_path_buf),
        }
    }

    pub fn load(&self, name: &str) -> Result<FeederData, String> {
        let is_path = name.contains('/') || name.contains('\\') || name.ends_with(".json");
        let text = if is_path {
            let mut p = PathBuf::from(name);
            if p.is_relative() {
                if let Some(base) = &self.base {
                    p = base.join(p);
                }
            }
            std::fs::read_to_string(&p).map_err(|e| format!("cannot read {}: {e}", p.display()))?
        } else if let Some(dir) = std::env::var_os(DATA_DIR_ENV) {
            let p = PathBuf::from(dir).join(format!("{name}.json"));
            std::fs::read_to_string(&p).map_err(|e| format!("cannot read {}: {e}", p.display()))?
        } else if name == "ieee13_modified" {
            BUNDLED_IEEE13.to_string()
        } else {
            return Err(format!("no bundled feeder named \"{name}\""));
        };
        FeederData::parse(&text).map_err(|e| e.to_string())
    }
}

/// Collects the string-keyed network of a document without building it.
pub(super) fn draft(net: &NetworkDoc, source: &FeederSource) -> Result<NetworkDraft, Vec<Issue>> {
    let mut issues = Vec::new();
    let mut out = NetworkDraft::default();
    for (i, f) in net.feeders.iter().enumerate() {
        let path = format!("network.feeders[{i}].feeder");
        match source.load(&f.feeder) {
            Ok(data) => match data.instantiate(&f.suffix, f.group.as_deref()) {
                Ok(d) => out.extend(d),
                Err(e) => issues.push(Issue::new(&path, e.to_string())),
            },
            Err(e) => issues.push(Issue::new(&path, e)),
        }
    }
    let extra = FeederData {
        schema: crate::netmodel::feeder::FEEDER_SCHEMA.into(),
        name: String::new(),
        description: String::new(),
        line_configs: Default::default(),
        buses: net.buses.clone(),
        branches: net.branches.clone(),
        loads: net.loads.clone(),
        shunts: net.shunts.clone(),
    };
    match extra.instantiate("", None) {
        Ok(d) => out.extend(d),
        Err(e) => issues.push(Issue::new("network.branches", e.to_string())),
    }
    for (id, closed) in &net.switches {
        let found = out.branches.iter_mut().find(|b| b.data.id() == *id);
        match found.map(|b| &mut b.data) {
            Some(BranchData::Switch { closed: c, .. }) => *c = *closed,
            Some(_) => issues.push(Issue::new(
                &format!("network.switches.{id}"),
                "branch is not a switch".into(),
            )),
            None => issues.push(Issue::new(
                &format!("network.switches.{id}"),
                format!("unknown switch \"{id}\""),
            )),
        }
    }
    for (i, id) in net.deenergized_loads.iter().enumerate() {
        match out.loads.iter_mut().find(|l| l.id == *id) {
            Some(l) => l.energized = false,
            None => issues.push(Issue::new(
                &format!("network.deenergized_loads[{i}]"),
                format!("unknown load \"{id}\""),
            )),
        }
    }
    if issues.is_empty() {
        Ok(out)
    } else {
        Err(issues)
    }
}

/// Builds the network section alone.
pub fn build_network(net: &NetworkDoc, source: &FeederSource) -> Result<NetworkModel, Vec<Issue>> {
    let d = draft(net, source)?;
    d.build()
        .map_err(|e| vec![Issue::new("network", e.to_string())])
}

fn gfm_params(
    rating: f64,
    f0: Option<f64>,
    m_p: Option<f64>,
    m_q: Option<f64>,
    t_f: Option<f64>,
    x_pu: Option<f64>,
) -> GfmParams {
    let mut p = GfmParams::new(rating);
    if let Some(v) = f0 {
        p.f0 = v;
    }
    if let Some(v) = m_p {
        p.m_p = v;
    }
    if let Some(v) = m_q {
        p.m_q = v;
    }
    if let Some(v) = t_f {
        p.t_f = v;
    }
    if let Some(v) = x_pu {
        p.x_pu = v;
    }
    p
}

fn device_model(doc: &DeviceDoc, v_nominal: f64) -> DeviceModel {
    match doc {
        DeviceDoc::Gfm {
            rating,
            f0,
            m_p,
            m_q,
            t_f,
            x_pu,
            overload,
            p_ref,
            q_ref,
            ..
        } => {
            let mut params = gfm_params(*rating, *f0, *m_p, *m_q, *t_f, *x_pu);
            if let Some(v) = overload {
                params.overload = *v;
            }
            let mut g = GfmInverter::new(params, v_nominal);
            g.p_ref = *p_ref;
            g.q_ref = *q_ref;
            DeviceModel::Gfm(g)
        }
        DeviceDoc::Gfl {
            rating,
            ramp_rate,
            p,
            q,
            current_limit,
            sync_threshold,
            ..
        } => {
            let mut g = GflInverter::new(*rating, *ramp_rate, v_nominal);
            if let Some(v) = current_limit {
                g.current_limit = *v;
            }
            if let Some(v) = sync_threshold {
                g.sync_threshold = *v;
            }
            g.p_cmd = *p;
            g.q_cmd = *q;
            DeviceModel::Gfl(g)
        }
        DeviceDoc::Diesel {
            rating,
            f0,
            h,
            d,
            r,
            t_g,
            xd_pu,
            trip,
            p_ref,
            ..
        } => {
            let mut params = DieselParams::new(*rating);
            for (dst, src) in [
                (&mut params.f0, f0),
                (&mut params.h, h),
                (&mut params.d, d),
                (&mut params.r, r),
                (&mut params.t_g, t_g),
                (&mut params.xd_pu, xd_pu),
                (&mut params.trip, trip),
            ] {
                if let Some(v) = src {
                    *dst = *v;
                }
            }
            let mut g = DieselGen::new(params, v_nominal);
            g.p_ref = *p_ref;
            DeviceModel::Diesel(g)
        }
    }
}

fn converter(doc: &BtbDoc, v_a: f64, v_b: f64) -> BtbConverter {
    let side_b = match &doc.side_b {
        SideBDoc::Gfl { ramp_rate, p, q } => {
            let mut g = GflInverter::new(doc.rating, *ramp_rate, v_b);
            g.p_cmd = *p;
            g.q_cmd = *q;
            SideB::Gfl(g)
        }
        SideBDoc::Gfm {
            m_p,
            m_q,
            t_f,
            x_pu,
            p_ref,
            q_ref,
        } => {
            let mut g =
                GfmInverter::new(gfm_params(doc.rating, None, *m_p, *m_q, *t_f, *x_pu), v_b);
            g.p_ref = *p_ref;
            g.q_ref = *q_ref;
            SideB::Gfm(g)
        }
    };
    let dc = DcLinkState::new(doc.vdc0 * doc.vdc_nominal, doc.vdc_nominal, doc.capacitance);
    let mut conv = BtbConverter::new(doc.rating, dc, side_b, v_a);
    if let Some(kp) = doc.kp {
        conv.pi.kp = kp;
        conv.pi.ki = kp / 0.1;
    }
    if let Some(ki) = doc.ki {
        conv.pi.ki = ki;
    }
    conv.loss_fraction = doc.loss_fraction;
    conv.vdc_droop = doc.vdc_droop;
    conv.protection = (doc.protection[0], doc.protection[1]);
    if let Some(p) = &doc.precharge {
        conv.precharge = Precharge {
            p_limit: p.p_limit,
            tau: p.tau,
            tolerance: p.tolerance,
            timeout: p.timeout,
        };
    }
    conv.enabled = conv.precharge.done(&conv.dc);
    conv
}

/// Resolves a validated document into a simulation input.
pub fn build_system(doc: &ScenarioDoc, source: &FeederSource) -> Result<SystemSpec, Vec<Issue>> {
    let mut d = draft(&doc.network, source)?;
    for dev in &doc.devices {
        if !matches!(dev, DeviceDoc::Gfl { .. }) {
            d.source_buses.insert(dev.bus().to_string());
        }
    }
    if let Some(b) = &doc.btb {
        d.source_buses.insert(b.bus_a.clone());
        d.source_buses.insert(b.bus_b.clone());
    }
    let network = d
        .build()
        .map_err(|e| vec![Issue::new("network", e.to_string())])?;
    let bus = |path: String, id: &str| {
        network
            .bus_index(id)
            .ok_or_else(|| vec![Issue::new(&path, format!("unknown bus \"{id}\""))])
    };
    let mut devices = Vec::with_capacity(doc.devices.len());
    for (i, dev) in doc.devices.iter().enumerate() {
        let b = bus(format!("devices[{i}].bus"), dev.bus())?;
        devices.push(Device {
            id: dev.id().to_string(),
            bus: b,
            online: dev.online(),
            model: device_model(dev, network.buses[b].nominal_voltage),
        });
    }
    let btb = match &doc.btb {
        Some(b) => {
            let a = bus("btb.bus_a".into(), &b.bus_a)?;
            let bb = bus("btb.bus_b".into(), &b.bus_b)?;
            Some(BtbInstance {
                id: b.id.clone(),
                bus_a: a,
                bus_b: bb,
                conv: converter(
                    b,
                    network.buses[a].nominal_voltage,
                    network.buses[bb].nominal_voltage,
                ),
            })
        }
        None => None,
    };
    Ok(SystemSpec {
        network,
        devices,
        btb,
        events: doc.events.clone(),
        channels: doc.recorders.clone(),
    })
}
