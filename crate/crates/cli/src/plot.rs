use std::path::{Path, PathBuf};

use phasorgrid::engine::TimeSeriesRecord;
use plotters::prelude::*;

use crate::{write_atomic, CliError, PlotArgs};

const SIZE: (u32, u32) = (960, 480);

/// Channel groups from `--channels` values; each value is one group.
fn groups(args: &PlotArgs, rec: &TimeSeriesRecord) -> Result<Vec<Vec<String>>, CliError> {
    let mut out = Vec::new();
    for spec in &args.channels {
        let names: Vec<String> = spec
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect();
        if names.is_empty() {
            return Err(CliError::Usage("empty channel selection".into()));
        }
        for n in &names {
            if rec.index(n).is_none() {
                return Err(CliError::Usage(format!(
                    "unknown channel \"{n}\"; available: {}",
                    rec.names.join(", ")
                )));
            }
        }
        out.push(names);
    }
    Ok(out)
}

/// Times of `event` entries in an events.log.
fn event_times(path: &Path) -> Result<Vec<f64>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Parse(format!("{}: cannot read: {e}", path.display())))?;
    let mut times = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let mut f = line.split_whitespace();
        let (Some(t), Some(kind)) = (f.next(), f.next()) else {
            continue;
        };
        if kind != "event" {
            continue;
        }
        let t: f64 = t
            .parse()
            .map_err(|e| CliError::Parse(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if times.last() != Some(&t) {
            times.push(t);
        }
    }
    Ok(times)
}

fn file_name(group: &[String]) -> String {
    let joined = group.join("__");
    let safe: String = joined
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "-_.".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{safe}.svg")
}

fn y_range(series: &[Vec<f64>], guides: &[f64]) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for y in series
        .iter()
        .flatten()
        .chain(guides)
        .filter(|y| y.is_finite())
    {
        lo = lo.min(*y);
        hi = hi.max(*y);
    }
    if !lo.is_finite() {
        return (-1.0, 1.0);
    }
    let pad = if hi > lo {
        0.05 * (hi - lo)
    } else {
        (1e-3 * hi.abs()).max(1e-9)
    };
    (lo - pad, hi + pad)
}

fn render(
    rec: &TimeSeriesRecord,
    group: &[String],
    events: &[f64],
    args: &PlotArgs,
    title: &str,
) -> Result<String, String> {
    let series: Vec<Vec<f64>> = group
        .iter()
        .map(|n| rec.channel(n).unwrap_or_default())
        .collect();
    let t0 = rec.time.first().copied().unwrap_or(0.0);
    let t1 = rec
        .time
        .last()
        .copied()
        .filter(|t| *t > t0)
        .unwrap_or(t0 + 1.0);
    let (y0, y1) = match args.ylim.as_deref() {
        Some(&[lo, hi]) => (lo, hi),
        _ => y_range(&series, &args.guide),
    };
    let ylabel = args.ylabel.clone().unwrap_or_else(|| group.join(", "));

    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(|e| e.to_string())?;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(40)
            .y_label_area_size(80)
            .build_cartesian_2d(t0..t1, y0..y1)
            .map_err(|e| e.to_string())?;
        chart
            .configure_mesh()
            .x_desc("time (s)")
            .y_desc(ylabel)
            .light_line_style(WHITE)
            .bold_line_style(BLACK.mix(0.12))
            .draw()
            .map_err(|e| e.to_string())?;

        let marker = RGBColor(230, 140, 0).mix(0.7);
        for t in events.iter().filter(|t| **t >= t0 && **t <= t1) {
            chart
                .draw_series(LineSeries::new(
                    [(*t, y0), (*t, y1)],
                    marker.stroke_width(1),
                ))
                .map_err(|e| e.to_string())?;
        }
        for y in &args.guide {
            chart
                .draw_series(LineSeries::new(
                    [(t0, *y), (t1, *y)],
                    RED.mix(0.6).stroke_width(1),
                ))
                .map_err(|e| e.to_string())?;
        }
        for (k, (name, ys)) in group.iter().zip(&series).enumerate() {
            let color = Palette99::pick(k).to_rgba();
            chart
                .draw_series(LineSeries::new(
                    rec.time.iter().copied().zip(ys.iter().copied()),
                    color.stroke_width(2),
                ))
                .map_err(|e| e.to_string())?
                .label(name.as_str())
                .legend(move |(x, y)| {
                    PathElement::new([(x, y), (x + 20, y)], color.stroke_width(2))
                });
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(|e| e.to_string())?;
        root.present().map_err(|e| e.to_string())?;
    }
    Ok(svg)
}

pub fn plot_command(args: &PlotArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.csv)
        .map_err(|e| CliError::Parse(format!("{}: cannot read: {e}", args.csv.display())))?;
    let rec = TimeSeriesRecord::from_csv(&text)
        .map_err(|e| CliError::Parse(format!("{}: {e}", args.csv.display())))?;
    let groups = groups(args, &rec)?;
    if let Some(&[lo, hi]) = args.ylim.as_deref() {
        if !(hi > lo) {
            return Err(CliError::Usage("--ylim needs LO < HI".into()));
        }
    }

    let events = if args.no_events {
        Vec::new()
    } else if let Some(p) = &args.events {
        event_times(p)?
    } else {
        let beside: PathBuf = args.csv.with_file_name("events.log");
        if beside.is_file() {
            event_times(&beside)?
        } else {
            Vec::new()
        }
    };
    let title = args.title.clone().unwrap_or_else(|| {
        args.csv
            .parent()
            .and_then(Path::file_name)
            .or_else(|| args.csv.file_stem())
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    });

    let mut files = Vec::with_capacity(groups.len());
    for g in &groups {
        let svg = render(&rec, g, &events, args, &title)
            .map_err(|e| CliError::Output(format!("rendering {}: {e}", g.join(","))))?;
        files.push((file_name(g), svg));
    }
    let refs: Vec<(&str, &[u8])> = files
        .iter()
        .map(|(n, s)| (n.as_str(), s.as_bytes()))
        .collect();
    write_atomic(&args.out, &refs)?;
    for (n, _) in &files {
        println!("{}", args.out.join(n).display());
    }
    Ok(())
}
