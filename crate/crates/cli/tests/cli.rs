use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

fn phasorgrid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_phasorgrid"))
        .args(args)
        .env_remove("PHASORGRID_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// `key: value` lines of a summary.txt.
fn summary(dir: &Path) -> BTreeMap<String, String> {
    std::fs::read_to_string(dir.join("summary.txt"))
        .unwrap()
        .lines()
        .filter_map(|l| l.split_once(": "))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn leading_number(s: &str) -> f64 {
    s.split_whitespace().next().unwrap().parse().unwrap()
}

const SMALL: &str = r#"{
  "schema": "phasorgrid/scenario@1",
  "name": "small",
  "network": {
    "buses": [
      {"id": "a", "phases": "ABC", "kv_ll": 4.16},
      {"id": "b", "phases": "ABC", "kv_ll": 4.16}
    ],
    "branches": [{"kind": "switch", "id": "tie", "from": "a", "to": "b", "closed": true}],
    "loads": [{"id": "lb", "bus": "BUS", "p": 3e5, "q": 1e5, "energized": false}]
  },
  "devices": [{"type": "gfm", "id": "ga", "bus": "a", "rating": 3e6, "m_p": 0.01}],
  "events": [{"time": 0.5, "action": "energize_load", "target": "lb"}],
  "sim": {"duration": 1.0}
}"#;

fn write_small(dir: &Path, bus: &str) -> std::path::PathBuf {
    let p = dir.join("small.json");
    std::fs::write(&p, SMALL.replace("BUS", bus)).unwrap();
    p
}

#[test]
fn missing_file_is_a_parse_failure_naming_the_path() {
    let out = phasorgrid(&["run", "missing.json"]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("missing.json"), "{}", stderr(&out));
}

#[test]
fn validate_reports_ok_and_failures_with_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    let good = write_small(dir.path(), "b");
    let out = phasorgrid(&["validate", path(&good)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("ok"));

    let bad = write_small(dir.path(), "nowhere");
    let out = phasorgrid(&["validate", path(&bad)]);
    assert_eq!(code(&out), 4);
    assert!(
        stderr(&out).contains("network.loads[0].bus"),
        "{}",
        stderr(&out)
    );

    let broken = dir.path().join("broken.json");
    std::fs::write(&broken, "{\n  \"schema\": ").unwrap();
    let out = phasorgrid(&["validate", path(&broken)]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(code(&phasorgrid(&["run", "--case", "nonesuch"])), 2);
    assert_eq!(code(&phasorgrid(&["run"])), 2);
    assert_eq!(code(&phasorgrid(&["frobnicate"])), 2);
}

#[test]
fn help_and_version() {
    let out = phasorgrid(&["--help"]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("Exit codes"));
    let out = phasorgrid(&["run", "--help"]);
    for flag in [
        "--case",
        "--all-cases",
        "--dt",
        "--duration",
        "--decimation",
        "--out",
    ] {
        assert!(stdout(&out).contains(flag), "{flag} missing from help");
    }
    let out = phasorgrid(&["--version"]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains(env!("CARGO_PKG_VERSION")));
}

#[test]
fn cases_lists_the_builtins() {
    let out = phasorgrid(&["cases"]);
    assert_eq!(code(&out), 0);
    let names: Vec<_> = stdout(&out)
        .lines()
        .map(|l| l.split('\t').next().unwrap().to_string())
        .collect();
    assert_eq!(
        names,
        ["flexible_exchange", "dynamic_decoupling", "black_start"]
    );
}

#[test]
fn data_dir_overrides_bundled_cases() {
    let dir = tempfile::tempdir().unwrap();
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data");
    std::fs::create_dir(dir.path().join("cases")).unwrap();
    std::fs::copy(
        data.join("ieee13_modified.json"),
        dir.path().join("ieee13_modified.json"),
    )
    .unwrap();
    let text = std::fs::read_to_string(data.join("cases/black_start.json")).unwrap();
    let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    doc["description"] = "overridden".into();
    std::fs::write(dir.path().join("cases/black_start.json"), doc.to_string()).unwrap();

    let out = Command::new(env!("CARGO_BIN_EXE_phasorgrid"))
        .arg("cases")
        .env("PHASORGRID_DATA_DIR", dir.path())
        .output()
        .unwrap();
    assert!(
        stdout(&out).contains("black_start\toverridden"),
        "{}",
        stdout(&out)
    );
}

#[test]
fn run_writes_all_outputs_and_no_temporaries() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_small(dir.path(), "b");
    let out_dir = dir.path().join("out");
    let out = phasorgrid(&["run", path(&scenario), "--out", path(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let mut files: Vec<_> = std::fs::read_dir(&out_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    files.sort();
    assert_eq!(files, ["events.log", "record.csv", "summary.txt"]);

    let csv = std::fs::read_to_string(out_dir.join("record.csv")).unwrap();
    assert!(csv.starts_with("time,P_ga,Q_ga,f_ga,V_ga\n"));
    assert_eq!(csv.lines().count(), 1 + 101);
    let log = std::fs::read_to_string(out_dir.join("events.log")).unwrap();
    assert_eq!(log, "0.500000 event energize_load lb\n");
    let s = summary(&out_dir);
    assert_eq!(s["samples"], "101");
    let f = &s["frequency_network_hz"];
    assert!(f.starts_with("min 59.940") && f.ends_with("max 60"), "{f}");
}

#[test]
fn numerical_failure_exits_with_five_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    // 50 MW through 5 + j10 ohm has no load-flow solution.
    let p = dir.path().join("collapse.json");
    let text = SMALL
        .replace("BUS", "b")
        .replace(
            r#"{"kind": "switch", "id": "tie", "from": "a", "to": "b", "closed": true}"#,
            r#"{"kind": "line", "id": "ab", "from": "a", "to": "b", "phases": "ABC",
                "z": [[[5, 10], [0, 0], [0, 0]], [[0, 0], [5, 10], [0, 0]], [[0, 0], [0, 0], [5, 10]]]}"#,
        )
        .replace("\"p\": 3e5", "\"p\": 5e7");
    std::fs::write(&p, text).unwrap();
    let out_dir = dir.path().join("out");
    let out = phasorgrid(&["run", path(&p), "--out", path(&out_dir)]);
    assert_eq!(code(&out), 5, "{}", stderr(&out));
    assert!(stderr(&out).contains("t=0.5"), "{}", stderr(&out));
    assert!(!out_dir.join("record.csv").exists());
}

#[test]
fn duration_override_drops_later_events() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("bs");
    let out = phasorgrid(&[
        "run",
        "--case",
        "black_start",
        "--duration",
        "5",
        "--out",
        path(&out_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stderr(&out).contains("dropped"));
    let s = summary(&out_dir);
    assert_eq!(s["duration_s"], "5");
    assert_eq!(s["samples"], "501");
    let log = std::fs::read_to_string(out_dir.join("events.log")).unwrap();
    assert!(log.lines().all(|l| leading_number(l) <= 5.0));

    let out = phasorgrid(&[
        "run",
        "--case",
        "black_start",
        "--dt=0",
        "--out",
        path(&out_dir),
    ]);
    assert_eq!(code(&out), 4);
}

#[test]
fn outputs_are_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let d = dir.path().join(name);
        let out = phasorgrid(&[
            "run",
            "--case",
            "flexible_exchange",
            "--duration",
            "12",
            "--out",
            path(&d),
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        d
    };
    let (a, b) = (run("a"), run("b"));
    for f in ["record.csv", "events.log", "summary.txt"] {
        assert!(
            std::fs::read(a.join(f)).unwrap() == std::fs::read(b.join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn dynamic_decoupling_exchanges_no_energy() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("dd");
    let out = phasorgrid(&[
        "run",
        "--case",
        "dynamic_decoupling",
        "--out",
        path(&out_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let s = summary(&out_dir);
    for key in ["btb_energy_side_a_kwh", "btb_energy_side_b_kwh"] {
        assert!(leading_number(&s[key]).abs() < 1e-3, "{key}: {}", s[key]);
    }
    // MG0 holds its frequency while MG1 picks up load.
    let mg0 = &s["frequency_MG0_hz"];
    let f: Vec<f64> = mg0
        .split_whitespace()
        .filter_map(|w| w.parse().ok())
        .collect();
    assert!(f[1] - f[0] < 1e-4, "{mg0}");
}

#[test]
fn black_start_keeps_the_dc_link_below_1_1_pu() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("bs");
    let out = phasorgrid(&["run", "--case", "black_start", "--out", path(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let s = summary(&out_dir);
    let peak = leading_number(&s["peak_vdc_pu"]);
    assert!(peak > 0.99 && peak < 1.1, "{peak}");
    assert_eq!(leading_number(&s["min_vdc_pu"]), 0.5);
}

#[test]
fn plot_writes_one_svg_per_group_with_event_markers() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_small(dir.path(), "b");
    let run_dir = dir.path().join("run");
    assert_eq!(
        code(&phasorgrid(&[
            "run",
            path(&scenario),
            "--out",
            path(&run_dir)
        ])),
        0
    );
    let csv = run_dir.join("record.csv");
    let plots = dir.path().join("plots");

    let out = phasorgrid(&[
        "plot",
        path(&csv),
        "--channels",
        "P_ga,Q_ga",
        "--channels",
        "f_ga",
        "--guide",
        "59.9",
        "--out",
        path(&plots),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let a = std::fs::read_to_string(plots.join("P_ga__Q_ga.svg")).unwrap();
    let b = std::fs::read_to_string(plots.join("f_ga.svg")).unwrap();
    assert!(a.starts_with("<svg") && b.starts_with("<svg"));
    assert!(a.contains("P_ga") && a.contains("Q_ga"));
    // The event marker is the only orange stroke.
    let marker = "stroke=\"#E68C00\"";
    assert_eq!(b.matches(marker).count(), 1, "{b}");

    let out = phasorgrid(&[
        "plot",
        path(&csv),
        "--channels",
        "f_ga",
        "--no-events",
        "--out",
        path(&plots),
    ]);
    assert_eq!(code(&out), 0);
    let b = std::fs::read_to_string(plots.join("f_ga.svg")).unwrap();
    assert_eq!(b.matches(marker).count(), 0);
}

#[test]
fn plot_rejects_unknown_and_empty_channel_selections() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_small(dir.path(), "b");
    let run_dir = dir.path().join("run");
    assert_eq!(
        code(&phasorgrid(&[
            "run",
            path(&scenario),
            "--out",
            path(&run_dir)
        ])),
        0
    );
    let csv = run_dir.join("record.csv");
    let plots = dir.path().join("plots");

    let out = phasorgrid(&[
        "plot",
        path(&csv),
        "--channels",
        "P_ga,bogus",
        "--out",
        path(&plots),
    ]);
    assert_eq!(code(&out), 2);
    let err = stderr(&out);
    assert!(
        err.contains("bogus") && err.contains("available: P_ga, Q_ga, f_ga, V_ga"),
        "{err}"
    );

    let out = phasorgrid(&[
        "plot",
        path(&csv),
        "--channels",
        " , ",
        "--out",
        path(&plots),
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("empty channel selection"));
    assert!(!plots.exists());

    let out = phasorgrid(&[
        "plot",
        path(&dir.path().join("none.csv")),
        "--channels",
        "a",
        "--out",
        path(&plots),
    ]);
    assert_eq!(code(&out), 3);
}

#[test]
fn all_cases_write_separate_directories() {
    let dir = tempfile::tempdir().unwrap();
    let out = phasorgrid(&[
        "run",
        "--all-cases",
        "--duration",
        "2",
        "--out",
        path(dir.path()),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for name in ["flexible_exchange", "dynamic_decoupling", "black_start"] {
        assert_eq!(summary(&dir.path().join(name))["scenario"], name);
    }
}
