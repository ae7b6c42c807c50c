//! Newton current-injection solve in rectangular coordinates.
//!
//! Unknowns are the real and imaginary parts of every phase-node voltage of
//! an energized island. Voltage sources enter as Norton equivalents folded
//! into the admittance matrix, so there is no slack bus. The LU factors of
//! the Jacobian are kept between solves and refreshed only when the
//! contraction rate degrades, which makes consecutive time-step solves cost
//! a couple of triangular back-substitutions.

use nalgebra::{DMatrix, DVector, Dyn, LU};
use num_complex::Complex64;

use super::{AdmittanceSystem, Island, NetworkError, NetworkModel, LOAD_LOW_VOLTAGE_PU};
use crate::phase::Phase;

/// Constant-power injection of a grid-following device, split evenly over
/// the bus phases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerInjection {
    pub bus: usize,
    /// Total injected complex power, W + jVAR.
    pub s: Complex64,
    /// Per-phase current magnitude limit, amps.
    pub current_limit: f64,
}

/// Device contributions for one solve.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DeviceInjections {
    /// Per-phase EMF of each source site, in site order.
    pub emf: Vec<[Complex64; 3]>,
    pub power: Vec<PowerInjection>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Convergence threshold on the summed nodal mismatch, VA.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Treat source-less islands with energized loads as blacked out rather
    /// than failing.
    pub allow_dead_islands: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tolerance: 1e-6 * crate::SYSTEM_BASE_VA,
            max_iterations: 50,
            allow_dead_islands: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSolution {
    /// Per global phase node; zero for absent phases and dead islands.
    pub voltages: Vec<Complex64>,
    /// Current entering each branch at its from end, per phase.
    pub branch_from: Vec<[Complex64; 3]>,
    /// Current entering each branch at its to end, per phase.
    pub branch_to: Vec<[Complex64; 3]>,
    pub converged: bool,
    pub iterations: usize,
    /// Summed nodal mismatch at exit, VA.
    pub mismatch: f64,
}

impl NetworkSolution {
    pub fn zeros(sys: &AdmittanceSystem) -> Self {
        NetworkSolution {
            voltages: vec![Complex64::default(); sys.local.len()],
            branch_from: vec![[Complex64::default(); 3]; sys.primitives.len()],
            branch_to: vec![[Complex64::default(); 3]; sys.primitives.len()],
            converged: true,
            iterations: 0,
            mismatch: 0.0,
        }
    }

    pub fn voltage(&self, bus: usize, phase: Phase) -> Complex64 {
        self.voltages[NetworkModel::node(bus, phase)]
    }

    pub fn bus_voltages(&self, bus: usize) -> [Complex64; 3] {
        let v = &self.voltages[bus * 3..bus * 3 + 3];
        [v[0], v[1], v[2]]
    }

    pub fn branch_current(&self, branch: usize, phase: Phase) -> Complex64 {
        self.branch_from[branch][phase.index()]
    }
}

/// Per-phase current a constant-power injection delivers at voltage `v`.
pub(crate) fn injection_current(s: Complex64, limit: f64, v: Complex64) -> Complex64 {
    if v.norm() < 1e-9 {
        return Complex64::default();
    }
    let i = (s / v).conj();
    let m = i.norm();
    if m > limit {
        i * (limit / m)
    } else {
        i
    }
}

/// Per-phase current drawn by a constant-power load, switching to constant
/// impedance below [`LOAD_LOW_VOLTAGE_PU`].
pub(crate) fn load_current(s: Complex64, v_nominal: f64, v: Complex64) -> Complex64 {
    let v_low = LOAD_LOW_VOLTAGE_PU * v_nominal;
    if v.norm() >= v_low {
        (s / v).conj()
    } else {
        s.conj() / (v_low * v_low) * v
    }
}

impl AdmittanceSystem {
    /// Per-phase current a source site pushes into the network.
    pub fn source_current(
        &self,
        site: usize,
        emf: &[Complex64; 3],
        sol: &NetworkSolution,
    ) -> [Complex64; 3] {
        let s = &self.sites[site];
        let y = 1.0 / s.z;
        let mut out = [Complex64::default(); 3];
        for p in Phase::ALL {
            if self.local[NetworkModel::node(s.bus, p)].is_some() {
                out[p.index()] = (emf[p.index()] - sol.voltage(s.bus, p)) * y;
            }
        }
        out
    }

    /// Per-phase current a power injection actually delivers at `sol`.
    pub fn injected_current(&self, inj: &PowerInjection, sol: &NetworkSolution) -> [Complex64; 3] {
        let nodes: Vec<Phase> = Phase::ALL
            .into_iter()
            .filter(|p| self.local[NetworkModel::node(inj.bus, *p)].is_some())
            .collect();
        let mut out = [Complex64::default(); 3];
        if nodes.is_empty() || !self.islands[self.bus_island[inj.bus]].energized() {
            return out;
        }
        let share = inj.s / nodes.len() as f64;
        for p in nodes {
            out[p.index()] = injection_current(share, inj.current_limit, sol.voltage(inj.bus, p));
        }
        out
    }
}

struct Factorization {
    version: u64,
    lu: LU<f64, Dyn, Dyn>,
}

/// Network solver with a reusable Jacobian factorization per island.
pub struct Solver {
    pub options: SolverOptions,
    cache: Vec<Option<Factorization>>,
    pub factorizations: usize,
}

/// Node-level nonlinear contribution gathered for one island solve.
#[derive(Clone, Copy)]
enum Term {
    Load { s: Complex64, v_nominal: f64 },
    Injection { s: Complex64, limit: f64 },
}

impl Solver {
    pub fn new(options: SolverOptions) -> Self {
        Solver {
            options,
            cache: Vec::new(),
            factorizations: 0,
        }
    }

    /// Drops all cached factorizations.
    pub fn invalidate(&mut self) {
        self.cache.clear();
    }

    pub fn solve(
        &mut self,
        sys: &AdmittanceSystem,
        inj: &DeviceInjections,
        guess: &NetworkSolution,
    ) -> Result<NetworkSolution, NetworkError> {
        if inj.emf.len() != sys.sites.len() {
            return Err(NetworkError::UnknownSource(
                inj.emf.len().min(sys.sites.len()),
            ));
        }
        if self.cache.len() != sys.islands.len() {
            self.cache = (0..sys.islands.len()).map(|_| None).collect();
        }
        let mut sol = NetworkSolution::zeros(sys);
        let same_shape = guess.voltages.len() == sol.voltages.len();

        for (k, isl) in sys.islands.iter().enumerate() {
            if !isl.energized() {
                let has_load = isl.load_terms.iter().any(|t| t.s.norm() > 0.0);
                if has_load && !self.options.allow_dead_islands {
                    return Err(NetworkError::NoSource {
                        bus: sys.bus_ids[isl.buses[0]].clone(),
                    });
                }
                continue;
            }

            let mut terms: Vec<(usize, Term)> = isl
                .load_terms
                .iter()
                .map(|t| {
                    (
                        t.local,
                        Term::Load {
                            s: t.s,
                            v_nominal: t.v_nominal,
                        },
                    )
                })
                .collect();
            for pi in &inj.power {
                if sys.bus_island[pi.bus] != k {
                    continue;
                }
                let locals: Vec<usize> = Phase::ALL
                    .into_iter()
                    .filter_map(|p| sys.local[NetworkModel::node(pi.bus, p)].map(|(_, l)| l))
                    .collect();
                let share = pi.s / locals.len() as f64;
                for l in locals {
                    terms.push((
                        l,
                        Term::Injection {
                            s: share,
                            limit: pi.current_limit,
                        },
                    ));
                }
            }

            let mut source = vec![Complex64::default(); isl.nodes.len()];
            for &s in &isl.sources {
                let site = &sys.sites[s];
                let y = 1.0 / site.z;
                for p in Phase::ALL {
                    if let Some((_, l)) = sys.local[NetworkModel::node(site.bus, p)] {
                        source[l] += inj.emf[s][p.index()] * y;
                    }
                }
            }

            let mut v: Vec<Complex64> = if same_shape {
                isl.nodes.iter().map(|&g| guess.voltages[g]).collect()
            } else {
                vec![Complex64::default(); isl.nodes.len()]
            };
            let flat = v
                .iter()
                .zip(&isl.nodes)
                .any(|(x, &g)| x.norm() < 1e-3 * sys.node_nominal[g]);
            if flat {
                let first = isl.sources[0];
                let angle = inj.emf[first][0].arg();
                for (x, &g) in v.iter_mut().zip(&isl.nodes) {
                    let phase = Phase::ALL[g % 3];
                    *x = Complex64::from_polar(sys.node_nominal[g], angle) * phase.rotation();
                }
            }

            let (iters, mismatch, worst) =
                self.newton(sys.version, k, isl, &terms, &source, &mut v)?;
            sol.iterations = sol.iterations.max(iters);
            sol.mismatch += mismatch;
            if mismatch > self.options.tolerance {
                return Err(NetworkError::NonConvergence {
                    iterations: iters,
                    mismatch,
                    worst_bus: sys.bus_ids[isl.nodes[worst] / 3].clone(),
                });
            }
            for (x, &g) in v.iter().zip(&isl.nodes) {
                sol.voltages[g] = *x;
            }
        }

        for (b, prim) in sys.primitives.iter().enumerate() {
            let Some(prim) = prim else { continue };
            let (f, t) = sys.branch_ends[b];
            let vf = sol.bus_voltages(f);
            let vt = sol.bus_voltages(t);
            for i in 0..3 {
                let mut i_f = Complex64::default();
                let mut i_t = Complex64::default();
                for j in 0..3 {
                    i_f += prim.yff[i][j] * vf[j] + prim.yft[i][j] * vt[j];
                    i_t += prim.ytf[i][j] * vf[j] + prim.ytt[i][j] * vt[j];
                }
                sol.branch_from[b][i] = i_f;
                sol.branch_to[b][i] = i_t;
            }
        }
        sol.converged = true;
        Ok(sol)
    }

    fn residual(
        isl: &Island,
        terms: &[(usize, Term)],
        source: &[Complex64],
        v: &[Complex64],
        r: &mut [Complex64],
    ) {
        for (i, row) in isl.rows.iter().enumerate() {
            let mut acc = -source[i];
            for &(j, y) in row {
                acc += y * v[j];
            }
            r[i] = acc;
        }
        for &(l, term) in terms {
            match term {
                Term::Load { s, v_nominal } => r[l] += load_current(s, v_nominal, v[l]),
                Term::Injection { s, limit } => r[l] -= injection_current(s, limit, v[l]),
            }
        }
    }

    fn jacobian(isl: &Island, terms: &[(usize, Term)], v: &[Complex64]) -> DMatrix<f64> {
        let n = isl.nodes.len();
        let mut j = DMatrix::zeros(2 * n, 2 * n);
        for (i, row) in isl.rows.iter().enumerate() {
            for &(k, y) in row {
                j[(2 * i, 2 * k)] += y.re;
                j[(2 * i, 2 * k + 1)] -= y.im;
                j[(2 * i + 1, 2 * k)] += y.im;
                j[(2 * i + 1, 2 * k + 1)] += y.re;
            }
        }
        for &(l, term) in terms {
            let (e, f) = (v[l].re, v[l].im);
            let m = e * e + f * f;
            if m < 1e-18 {
                continue;
            }
            // d/d(e, f) of conj(S / V) for S = P + jQ.
            let dpq = |p: f64, q: f64| {
                let a = p * e + q * f;
                let b = p * f - q * e;
                let m2 = m * m;
                [
                    (p * m - 2.0 * e * a) / m2,
                    (q * m - 2.0 * f * a) / m2,
                    (-q * m - 2.0 * e * b) / m2,
                    (p * m - 2.0 * f * b) / m2,
                ]
            };
            let (sign, d) = match term {
                Term::Load { s, v_nominal } => {
                    let v_low = LOAD_LOW_VOLTAGE_PU * v_nominal;
                    if m.sqrt() >= v_low {
                        (1.0, dpq(s.re, s.im))
                    } else {
                        let y = s.conj() / (v_low * v_low);
                        (1.0, [y.re, -y.im, y.im, y.re])
                    }
                }
                Term::Injection { s, limit } => {
                    if (s / v[l]).norm() > limit {
                        continue;
                    }
                    (-1.0, dpq(s.re, s.im))
                }
            };
            j[(2 * l, 2 * l)] += sign * d[0];
            j[(2 * l, 2 * l + 1)] += sign * d[1];
            j[(2 * l + 1, 2 * l)] += sign * d[2];
            j[(2 * l + 1, 2 * l + 1)] += sign * d[3];
        }
        j
    }

    fn newton(
        &mut self,
        version: u64,
        k: usize,
        isl: &Island,
        terms: &[(usize, Term)],
        source: &[Complex64],
        v: &mut [Complex64],
    ) -> Result<(usize, f64, usize), NetworkError> {
        let n = isl.nodes.len();
        let mut r = vec![Complex64::default(); n];
        let mut rhs = DVector::zeros(2 * n);
        let mut previous = f64::INFINITY;
        let mut fresh = false;
        let mut iter = 0;
        loop {
            Self::residual(isl, terms, source, v, &mut r);
            let mut mismatch = 0.0;
            let mut worst = (0, 0.0);
            for (i, (ri, vi)) in r.iter().zip(v.iter()).enumerate() {
                let m = ri.norm() * vi.norm();
                mismatch += m;
                if m > worst.1 {
                    worst = (i, m);
                }
            }
            let worst = worst.0;
            if !mismatch.is_finite() {
                return Ok((iter, f64::INFINITY, worst));
            }
            if mismatch <= self.options.tolerance || iter >= self.options.max_iterations {
                return Ok((iter, mismatch, worst));
            }
            let stale = match &self.cache[k] {
                Some(f) => f.version != version,
                None => true,
            };
            if stale || mismatch > 0.25 * previous {
                let lu = Self::jacobian(isl, terms, v).lu();
                self.cache[k] = Some(Factorization { version, lu });
                self.factorizations += 1;
                fresh = true;
            }
            previous = mismatch;
            for (i, ri) in r.iter().enumerate() {
                rhs[2 * i] = ri.re;
                rhs[2 * i + 1] = ri.im;
            }
            let lu = &self.cache[k].as_ref().unwrap().lu;
            if !lu.solve_mut(&mut rhs) {
                // Singular at this point; rebuild once from the current iterate.
                self.cache[k] = None;
                if fresh {
                    return Ok((iter, mismatch, worst));
                }
                continue;
            }
            for (i, x) in v.iter_mut().enumerate() {
                *x -= Complex64::new(rhs[2 * i], rhs[2 * i + 1]);
            }
            iter += 1;
        }
    }
}

/// One-shot solve with default options and a fresh factorization.
pub fn solve_network(
    sys: &AdmittanceSystem,
    inj: &DeviceInjections,
    guess: &NetworkSolution,
) -> Result<NetworkSolution, NetworkError> {
    Solver::new(SolverOptions::default()).solve(sys, inj, guess)
}
