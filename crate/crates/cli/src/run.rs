use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use phasorgrid::engine::{
    format_g9, DeviceModel, LogKind, Quantity, RunOutput, SimError, Simulation, TimeSeriesRecord,
};
use phasorgrid::scenario::{
    build_system, builtin_case, load_scenario, validate, FeederSource, ScenarioDoc, ScenarioError,
    CASE_NAMES, DATA_DIR_ENV,
};
use rayon::prelude::*;

use crate::{write_atomic, CliError, RunArgs};

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Syntax { .. } | ScenarioError::Io { .. } => {
                CliError::Parse(e.to_string())
            }
            ScenarioError::Invalid(_) => CliError::Invalid(e.to_string()),
            ScenarioError::UnknownCase(_) => CliError::Usage(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Network { .. } | SimError::Init(_) | SimError::Btb { .. } => {
                CliError::Numerical(e.to_string())
            }
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

struct Loaded {
    doc: ScenarioDoc,
    source: FeederSource,
}

fn load_file(path: &Path) -> Result<Loaded, CliError> {
    Ok(Loaded {
        doc: load_scenario(path)?,
        source: FeederSource::relative_to(path.parent()),
    })
}

fn load_case(name: &str) -> Result<Loaded, CliError> {
    let source = match std::env::var_os(DATA_DIR_ENV) {
        Some(dir) => FeederSource::relative_to(Some(&PathBuf::from(dir).join("cases"))),
        None => FeederSource::bundled(),
    };
    Ok(Loaded {
        doc: builtin_case(name)?,
        source,
    })
}

fn apply_overrides(l: &mut Loaded, args: &RunArgs) -> Result<(), CliError> {
    let sim = &mut l.doc.sim;
    if let Some(dt) = args.dt {
        sim.dt = dt;
    }
    if let Some(n) = args.decimation {
        sim.decimation = n;
    }
    if let Some(d) = args.duration {
        sim.duration = d;
        let before = l.doc.events.len();
        l.doc.events.retain(|e| e.time <= d);
        let dropped = before - l.doc.events.len();
        if dropped > 0 {
            eprintln!(
                "note: {}: {dropped} event(s) after t={d} s dropped",
                l.doc.name
            );
        }
    }
    if args.dt.is_some() || args.duration.is_some() || args.decimation.is_some() {
        validate(&l.doc, &l.source).map_err(ScenarioError::Invalid)?;
    }
    Ok(())
}

/// Microgrid label of every device, from the group of its bus.
fn device_groups(
    doc: &ScenarioDoc,
    source: &FeederSource,
) -> Result<Vec<(String, String, bool)>, CliError> {
    let spec = build_system(doc, source).map_err(ScenarioError::Invalid)?;
    Ok(spec
        .devices
        .iter()
        .map(|d| {
            let group = spec.network.buses[d.bus]
                .group
                .clone()
                .unwrap_or_else(|| "network".into());
            (d.id.clone(), group, !matches!(d.model, DeviceModel::Gfl(_)))
        })
        .collect())
}

fn simulate(l: &Loaded) -> Result<RunOutput, CliError> {
    let spec = build_system(&l.doc, &l.source).map_err(ScenarioError::Invalid)?;
    Ok(Simulation::new(spec, l.doc.sim)?.run()?)
}

/// Name of the recorded channel carrying `quantity` of `target`.
fn channel_of(
    doc: &ScenarioDoc,
    rec: &TimeSeriesRecord,
    target: &str,
    quantity: Quantity,
    default: String,
) -> Option<String> {
    if doc.recorders.is_empty() {
        return rec.index(&default).map(|_| default);
    }
    doc.recorders
        .iter()
        .find(|c| c.target == target && c.quantity == quantity)
        .map(|c| c.name.clone())
}

fn trapezoid(t: &[f64], y: &[f64]) -> f64 {
    t.windows(2)
        .zip(y.windows(2))
        .map(|(t, y)| 0.5 * (t[1] - t[0]) * (y[0] + y[1]))
        .sum()
}

fn summary(l: &Loaded, groups: &[(String, String, bool)], out: &RunOutput) -> String {
    let (doc, rec) = (&l.doc, &out.record);
    let mut s = String::new();
    let g = |x: f64| format_g9(x);
    let _ = writeln!(s, "scenario: {}", doc.name);
    let _ = writeln!(s, "duration_s: {}", g(doc.sim.duration));
    let _ = writeln!(s, "dt_s: {}", g(doc.sim.dt));
    let _ = writeln!(s, "samples: {}", rec.len());

    if let Some(b) = &doc.btb {
        let find = |q, suffix: &str| channel_of(doc, rec, &b.id, q, format!("{}_{suffix}", b.id));
        match find(Quantity::VdcPu, "Vdc_pu").and_then(|n| rec.channel(&n)) {
            Some(v) => {
                let (i, peak) =
                    v.iter().enumerate().fold(
                        (0, f64::MIN),
                        |a, (i, x)| if *x > a.1 { (i, *x) } else { a },
                    );
                let min = v.iter().copied().fold(f64::INFINITY, f64::min);
                let _ = writeln!(s, "peak_vdc_pu: {} at t={} s", g(peak), g(rec.time[i]));
                let _ = writeln!(s, "min_vdc_pu: {}", g(min));
            }
            None => {
                let _ = writeln!(s, "peak_vdc_pu: not recorded");
            }
        }
        for (q, suffix, key) in [
            (Quantity::PA, "P_A", "btb_energy_side_a_kwh"),
            (Quantity::PB, "P_B", "btb_energy_side_b_kwh"),
        ] {
            match find(q, suffix).and_then(|n| rec.channel(&n)) {
                Some(p) => {
                    let _ = writeln!(s, "{key}: {}", g(trapezoid(&rec.time, &p) / 3.6e6));
                }
                None => {
                    let _ = writeln!(s, "{key}: not recorded");
                }
            }
        }
    }

    // Frequency of online grid-forming sources; offline ones record zero.
    let mut by_group: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
    for (id, group, forming) in groups {
        if !forming {
            continue;
        }
        let Some(f) =
            channel_of(doc, rec, id, Quantity::F, format!("f_{id}")).and_then(|n| rec.channel(&n))
        else {
            continue;
        };
        for x in f.into_iter().filter(|x| *x > 0.0) {
            let e = by_group
                .entry(group)
                .or_insert((f64::INFINITY, f64::NEG_INFINITY));
            e.0 = e.0.min(x);
            e.1 = e.1.max(x);
        }
    }
    for (group, (lo, hi)) in by_group {
        let _ = writeln!(s, "frequency_{group}_hz: min {} max {}", g(lo), g(hi));
    }

    let count = |k: LogKind| out.log.iter().filter(|e| e.kind == k).count();
    let _ = writeln!(s, "events: {}", count(LogKind::Event));
    let _ = writeln!(s, "warnings: {}", count(LogKind::Warning));
    let _ = writeln!(s, "tap_changes: {}", count(LogKind::Tap));
    let _ = writeln!(s, "trips: {}", count(LogKind::Trip));
    let _ = writeln!(s, "max_residual_va: {}", g(out.stats.max_residual));
    s
}

fn run_one(mut l: Loaded, args: &RunArgs, out_dir: &Path) -> Result<String, CliError> {
    apply_overrides(&mut l, args)?;
    let groups = device_groups(&l.doc, &l.source)?;
    let out = simulate(&l)?;
    let summary = summary(&l, &groups, &out);
    write_atomic(
        out_dir,
        &[
            ("record.csv", out.record.to_csv().as_bytes()),
            ("events.log", out.log_text().as_bytes()),
            ("summary.txt", summary.as_bytes()),
        ],
    )?;
    Ok(format!(
        "{}: {} samples, {} log entries -> {}",
        l.doc.name,
        out.record.len(),
        out.log.len(),
        out_dir.display()
    ))
}

pub fn run_command(args: &RunArgs) -> Result<(), CliError> {
    if args.all_cases {
        let base = args.out.clone().unwrap_or_else(|| PathBuf::from("out"));
        let results: Vec<_> = CASE_NAMES
            .par_iter()
            .map(|name| load_case(name).and_then(|l| run_one(l, args, &base.join(name))))
            .collect();
        let mut first_err = None;
        for (name, r) in CASE_NAMES.iter().zip(results) {
            match r {
                Ok(line) => println!("{line}"),
                Err(e) => {
                    eprintln!("error: {name}: {}", e.message());
                    first_err.get_or_insert(e);
                }
            }
        }
        return first_err.map_or(Ok(()), Err);
    }
    let l = match (&args.path, &args.case) {
        (Some(p), _) => load_file(p)?,
        (None, Some(name)) => load_case(name)?,
        (None, None) => {
            return Err(CliError::Usage(
                "give a scenario path, --case or --all-cases".into(),
            ))
        }
    };
    let out_dir = args
        .out
        .clone()
        .unwrap_or_else(|| Path::new("out").join(&l.doc.name));
    println!("{}", run_one(l, args, &out_dir)?);
    Ok(())
}

pub fn validate_command(path: &Path) -> Result<(), CliError> {
    let l = load_file(path)?;
    println!(
        "{}: ok ({} devices, {} events, {} s)",
        path.display(),
        l.doc.devices.len(),
        l.doc.events.len(),
        format_g9(l.doc.sim.duration)
    );
    Ok(())
}

pub fn list_cases() {
    for name in CASE_NAMES {
        match builtin_case(name) {
            Ok(d) => println!("{name}\t{}", d.description),
            Err(e) => println!("{name}\t(unavailable: {e})"),
        }
    }
}
