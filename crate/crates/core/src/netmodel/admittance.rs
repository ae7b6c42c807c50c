use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::{
    BranchKind, Mat3, NetworkError, NetworkModel, TopologyState, SWITCH_ADMITTANCE, ZERO3,
};
use crate::phase::Phase;

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

/// A voltage-establishing device seen by the network: an EMF behind a
/// per-phase series impedance on every phase of `bus`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceSite {
    pub bus: usize,
    pub z: Complex64,
}

/// Branch two-port in phase coordinates: `I_from = yff·V_from + yft·V_to`,
/// `I_to = ytf·V_from + ytt·V_to`, currents flowing into the branch.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchPrimitive {
    pub yff: Mat3,
    pub yft: Mat3,
    pub ytf: Mat3,
    pub ytt: Mat3,
}

/// Connected group of buses. Islands without a source site are dead.
#[derive(Debug, Clone)]
pub struct Island {
    pub buses: Vec<usize>,
    /// Global phase-node indices, in local order.
    pub nodes: Vec<usize>,
    /// Sparse rows of the local nodal admittance matrix.
    pub rows: Vec<Vec<(usize, Complex64)>>,
    /// Indices into [`AdmittanceSystem::sites`].
    pub sources: Vec<usize>,
    /// Energized loads located in this island.
    pub loads: Vec<usize>,
    /// One entry per energized load phase.
    pub load_terms: Vec<LoadTerm>,
}

/// Constant-power load on one phase node of an island.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadTerm {
    pub local: usize,
    /// Complex power drawn at or above the low-voltage threshold.
    pub s: Complex64,
    /// Nominal line-to-neutral voltage of the node.
    pub v_nominal: f64,
}

impl Island {
    pub fn energized(&self) -> bool {
        !self.sources.is_empty()
    }

    /// Dense copy of the local admittance matrix.
    pub fn dense(&self) -> DMatrix<Complex64> {
        let n = self.nodes.len();
        let mut y = DMatrix::zeros(n, n);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                y[(i, j)] += v;
            }
        }
        y
    }
}

#[derive(Debug, Clone)]
pub struct AdmittanceSystem {
    pub islands: Vec<Island>,
    /// Global node -> (island, local index). `None` for phases a bus lacks.
    pub local: Vec<Option<(usize, usize)>>,
    pub bus_island: Vec<usize>,
    /// `None` for open switches.
    pub primitives: Vec<Option<BranchPrimitive>>,
    pub sites: Vec<SourceSite>,
    /// (from, to) bus of every branch.
    pub branch_ends: Vec<(usize, usize)>,
    pub load_energized: Vec<bool>,
    pub bus_ids: Vec<String>,
    /// Nominal line-to-neutral voltage per global node.
    pub node_nominal: Vec<f64>,
    /// Unique per assembly; solver caches key on it.
    pub version: u64,
}

impl AdmittanceSystem {
    pub fn island_count(&self) -> usize {
        self.islands.len()
    }

    pub fn island_of_bus(&self, bus: usize) -> usize {
        self.bus_island[bus]
    }

    /// True when some closed branch path joins the two buses.
    pub fn connected(&self, a: usize, b: usize) -> bool {
        self.bus_island[a] == self.bus_island[b]
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

fn invert_on_phases(z: &Mat3, phases: &[Phase]) -> Option<Mat3> {
    let n = phases.len();
    let m = DMatrix::from_fn(n, n, |i, j| z[phases[i].index()][phases[j].index()]);
    let inv = m.try_inverse()?;
    let mut out = ZERO3;
    for (i, pi) in phases.iter().enumerate() {
        for (j, pj) in phases.iter().enumerate() {
            out[pi.index()][pj.index()] = inv[(i, j)];
        }
    }
    Some(out)
}

fn scaled(m: &Mat3, s: Complex64) -> Mat3 {
    let mut out = *m;
    for row in out.iter_mut() {
        for v in row.iter_mut() {
            *v *= s;
        }
    }
    out
}

fn added(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = *a;
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] += b[i][j];
        }
    }
    out
}

fn diagonal_on(phases: &[Phase], y: Complex64) -> Mat3 {
    let mut m = ZERO3;
    for p in phases {
        m[p.index()][p.index()] = y;
    }
    m
}

/// Two-port of one branch at the given operating state, or `None` when the
/// branch is an open switch.
pub fn branch_primitive(
    net: &NetworkModel,
    branch: usize,
    state: &TopologyState,
) -> Result<Option<BranchPrimitive>, NetworkError> {
    let br = &net.branches[branch];
    let phases: Vec<Phase> = br.phases.iter().collect();
    let prim = match &br.kind {
        BranchKind::Line { z, y_shunt } => {
            let ys = invert_on_phases(z, &phases)
                .ok_or_else(|| NetworkError::SingularLine(br.id.clone()))?;
            let half = scaled(y_shunt, Complex64::new(0.5, 0.0));
            let neg = scaled(&ys, Complex64::new(-1.0, 0.0));
            BranchPrimitive {
                yff: added(&ys, &half),
                yft: neg,
                ytf: neg,
                ytt: added(&ys, &half),
            }
        }
        BranchKind::Transformer(t) => {
            let y = 1.0 / t.series_impedance();
            let n = t.turns_ratio();
            BranchPrimitive {
                yff: diagonal_on(&phases, y / (n * n)),
                yft: diagonal_on(&phases, -y / n),
                ytf: diagonal_on(&phases, -y / n),
                ytt: diagonal_on(&phases, y),
            }
        }
        BranchKind::Regulator(r) => {
            let y = 1.0 / r.impedance;
            let t = r.ratio(state.taps[branch]);
            BranchPrimitive {
                yff: diagonal_on(&phases, y * t * t),
                yft: diagonal_on(&phases, -y * t),
                ytf: diagonal_on(&phases, -y * t),
                ytt: diagonal_on(&phases, y),
            }
        }
        BranchKind::Switch { .. } => {
            if !state.switch_closed[branch] {
                return Ok(None);
            }
            let y = Complex64::new(SWITCH_ADMITTANCE, 0.0);
            BranchPrimitive {
                yff: diagonal_on(&phases, y),
                yft: diagonal_on(&phases, -y),
                ytf: diagonal_on(&phases, -y),
                ytt: diagonal_on(&phases, y),
            }
        }
    };
    Ok(Some(prim))
}

/// Builds the per-island nodal admittance of `net` at operating `state`.
///
/// Source-site impedances and shunt capacitors are folded into the matrix
/// diagonal; open switches contribute no coupling and therefore split
/// islands.
pub fn assemble_admittance(
    net: &NetworkModel,
    state: &TopologyState,
    sites: &[SourceSite],
) -> Result<AdmittanceSystem, NetworkError> {
    let nb = net.buses.len();
    for site in sites {
        if site.bus >= nb {
            return Err(NetworkError::UnknownBus {
                element: "source".into(),
                bus: format!("#{}", site.bus),
            });
        }
    }

    let mut primitives = Vec::with_capacity(net.branches.len());
    let mut parent: Vec<usize> = (0..nb).collect();
    for i in 0..net.branches.len() {
        let prim = branch_primitive(net, i, state)?;
        if prim.is_some() {
            let br = &net.branches[i];
            let (a, b) = (find(&mut parent, br.from), find(&mut parent, br.to));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
        primitives.push(prim);
    }

    // Islands ordered by their lowest bus index.
    let mut root_island = vec![usize::MAX; nb];
    let mut bus_island = vec![0; nb];
    let mut islands: Vec<Island> = Vec::new();
    for b in 0..nb {
        let r = find(&mut parent, b);
        if root_island[r] == usize::MAX {
            root_island[r] = islands.len();
            islands.push(Island {
                buses: Vec::new(),
                nodes: Vec::new(),
                rows: Vec::new(),
                sources: Vec::new(),
                loads: Vec::new(),
                load_terms: Vec::new(),
            });
        }
        let k = root_island[r];
        bus_island[b] = k;
        islands[k].buses.push(b);
    }

    let mut local = vec![None; net.node_count()];
    for (k, isl) in islands.iter_mut().enumerate() {
        for &b in &isl.buses {
            for p in net.buses[b].phases.iter() {
                let g = NetworkModel::node(b, p);
                local[g] = Some((k, isl.nodes.len()));
                isl.nodes.push(g);
            }
        }
    }

    let mut dense: Vec<DMatrix<Complex64>> = islands
        .iter()
        .map(|isl| DMatrix::zeros(isl.nodes.len(), isl.nodes.len()))
        .collect();

    for (i, prim) in primitives.iter().enumerate() {
        let Some(prim) = prim else { continue };
        let br = &net.branches[i];
        let k = bus_island[br.from];
        let y = &mut dense[k];
        for pi in br.phases.iter() {
            let fi = local[NetworkModel::node(br.from, pi)].unwrap().1;
            let ti = local[NetworkModel::node(br.to, pi)].unwrap().1;
            for pj in br.phases.iter() {
                let fj = local[NetworkModel::node(br.from, pj)].unwrap().1;
                let tj = local[NetworkModel::node(br.to, pj)].unwrap().1;
                let (a, b) = (pi.index(), pj.index());
                y[(fi, fj)] += prim.yff[a][b];
                y[(fi, tj)] += prim.yft[a][b];
                y[(ti, fj)] += prim.ytf[a][b];
                y[(ti, tj)] += prim.ytt[a][b];
            }
        }
    }

    for sh in &net.shunts {
        let bus = &net.buses[sh.bus];
        let b = sh.q / (bus.phases.len() as f64 * bus.nominal_voltage * bus.nominal_voltage);
        for p in bus.phases.iter() {
            let (k, l) = local[NetworkModel::node(sh.bus, p)].unwrap();
            dense[k][(l, l)] += Complex64::new(0.0, b);
        }
    }

    for (s, site) in sites.iter().enumerate() {
        let k = bus_island[site.bus];
        islands[k].sources.push(s);
        let y = 1.0 / site.z;
        for p in net.buses[site.bus].phases.iter() {
            let l = local[NetworkModel::node(site.bus, p)].unwrap().1;
            dense[k][(l, l)] += y;
        }
    }

    for (i, load) in net.loads.iter().enumerate() {
        if state.load_energized[i] {
            let k = bus_island[load.bus];
            islands[k].loads.push(i);
            let bus = &net.buses[load.bus];
            for p in bus.phases.iter() {
                let s = load.per_phase[p.index()];
                if s != Complex64::default() {
                    islands[k].load_terms.push(LoadTerm {
                        local: local[NetworkModel::node(load.bus, p)].unwrap().1,
                        s,
                        v_nominal: bus.nominal_voltage,
                    });
                }
            }
        }
    }

    for (isl, y) in islands.iter_mut().zip(dense) {
        let n = isl.nodes.len();
        isl.rows = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| y[(i, j)] != Complex64::default())
                    .map(|j| (j, y[(i, j)]))
                    .collect()
            })
            .collect();
    }

    Ok(AdmittanceSystem {
        islands,
        local,
        bus_island,
        primitives,
        sites: sites.to_vec(),
        branch_ends: net.branches.iter().map(|b| (b.from, b.to)).collect(),
        load_energized: state.load_energized.clone(),
        bus_ids: net.buses.iter().map(|b| b.id.clone()).collect(),
        node_nominal: (0..net.node_count())
            .map(|g| net.buses[g / 3].nominal_voltage)
            .collect(),
        version: NEXT_VERSION.fetch_add(1, Ordering::Relaxed),
    })
}
