use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/fixtures")
        .join(name)
}

fn voltzone(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_voltzone"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = voltzone(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    voltzone(dir, args).status.code().expect("exited")
}

/// Runs the offline stages with small sizes into `dir`.
fn offline(dir: &Path) -> String {
    let feeder = fixture("pv_feeder.json");
    let f = feeder.to_str().unwrap();
    ok(
        dir,
        &["synth-profiles", "--feeder", f, "--seed", "11", "--out", "prof.csv"],
    );
    ok(
        dir,
        &[
            "sensitivity",
            "--feeder",
            f,
            "--scenarios",
            "30",
            "--seed",
            "3",
            "--out-dir",
            "sens",
        ],
    );
    ok(
        dir,
        &[
            "partition",
            "--feeder",
            f,
            "--sensitivity",
            "sens/sensitivity.json",
            "--out",
            "part.json",
        ],
    );
    ok(
        dir,
        &[
            "critical-nodes",
            "--feeder",
            f,
            "--partition",
            "part.json",
            "--profiles",
            "prof.csv",
            "--runs",
            "200",
            "--out",
            "crit.json",
        ],
    );
    f.to_string()
}

fn simulate(dir: &Path, f: &str, margin: &str, out: &str) -> Output {
    voltzone(
        dir,
        &[
            "simulate",
            "--feeder",
            f,
            "--profiles",
            "prof.csv",
            "--staggered-delays",
            "--sensitivity",
            "sens/sensitivity.json",
            "--partition",
            "part.json",
            "--critical",
            "crit.json",
            "--margin",
            margin,
            "--start-minute",
            "600",
            "--minutes",
            "120",
            "--out-dir",
            out,
        ],
    )
}

#[test]
fn validate_prints_fixture_counts() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(
        dir.path(),
        &["validate", "--feeder", fixture("pv_feeder.json").to_str().unwrap()],
    );
    assert!(
        out.contains("210 buses, 209 lines, 8 regulator units, 118 loads, 112 PV"),
        "{out}"
    );
    assert!(out.contains("phase nodes: 238"), "{out}");
    let out = ok(
        dir.path(),
        &["validate", "--feeder", fixture("feeder13.json").to_str().unwrap()],
    );
    assert!(
        out.contains("13 buses, 12 lines, 6 regulator units, 23 loads, 4 PV"),
        "{out}"
    );
}

#[test]
fn pipeline_is_repeatable_and_reports_the_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let f = offline(d);
    let mut runs = Vec::new();
    for m in ["0", "0.002", "0.004", "0.006"] {
        let out = format!("dv{m}");
        let o = simulate(d, &f, m, &out);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        runs.push(out);
    }
    // Same inputs twice: byte-identical metrics and logs.
    assert!(simulate(d, &f, "0.004", "again").status.success());
    for name in ["metrics.json", "ibr_log.csv", "vr_log.csv", "trace.csv"] {
        assert_eq!(
            fs::read(d.join("dv0.004").join(name)).unwrap(),
            fs::read(d.join("again").join(name)).unwrap(),
            "{name} differs"
        );
    }

    let mut args = vec!["report", "--out-dir", "rep", "--runs"];
    args.extend(runs.iter().map(String::as_str));
    let table = ok(d, &args);
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 4, "{table}");
    assert!(table.lines().next().unwrap().contains("N_V"));
    let summary = fs::read_to_string(d.join("rep/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 5, "{summary}");
    assert!(summary.starts_with("case,mode,margin,minutes,n_v,n_vr,q_ibr_kvarh"));
    for name in ["envelopes.csv", "taps.csv", "zone_kvar.csv"] {
        let text = fs::read_to_string(d.join("rep").join(name)).unwrap();
        assert!(text.starts_with("case,"), "{name} lacks a header");
    }
    let envelopes = fs::read_to_string(d.join("rep/envelopes.csv")).unwrap();
    assert_eq!(envelopes.lines().count(), 1 + 4 * 120);
}

#[test]
fn offline_stages_are_repeatable() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    offline(a.path());
    offline(b.path());
    for name in [
        "prof.csv",
        "sens/vlsm.csv",
        "sens/correlation.csv",
        "sens/sensitivity.json",
        "part.json",
        "crit.json",
    ] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name} differs"
        );
    }
}

#[test]
fn stale_inputs_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let f = offline(d);

    // A rerun of sensitivity under a different seed invalidates the partition.
    ok(
        d,
        &[
            "sensitivity",
            "--feeder",
            &f,
            "--scenarios",
            "30",
            "--seed",
            "4",
            "--out-dir",
            "sens",
        ],
    );
    let o = simulate(d, &f, "0", "out");
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("stale"));

    // An edited companion CSV no longer matches its manifest.
    let path = d.join("sens/vlsm.csv");
    let mut text = fs::read_to_string(&path).unwrap();
    text.push('\n');
    fs::write(&path, text).unwrap();
    assert_eq!(
        code(
            d,
            &[
                "partition",
                "--feeder",
                &f,
                "--sensitivity",
                "sens/sensitivity.json",
                "--out",
                "p2.json"
            ]
        ),
        3
    );

    // Documents built for another feeder are refused.
    let other = fixture("feeder13.json");
    assert_eq!(
        code(
            d,
            &[
                "critical-nodes",
                "--feeder",
                other.to_str().unwrap(),
                "--partition",
                "part.json",
                "--profiles",
                "prof.csv",
                "--out",
                "c.json"
            ]
        ),
        3
    );
}

#[test]
fn exit_codes_separate_config_and_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let f = fixture("pv_feeder.json");
    let f = f.to_str().unwrap();

    fs::write(d.join("bad.toml"), "[partition]\nbeta = 1\n").unwrap();
    assert_eq!(code(d, &["--config", "bad.toml", "validate", "--feeder", f]), 2);
    assert_eq!(code(d, &["validate", "--feeder", f, "--bogus"]), 2);

    fs::write(d.join("broken.json"), "{\"buses\": []").unwrap();
    assert_eq!(code(d, &["validate", "--feeder", "broken.json"]), 3);
    assert_eq!(code(d, &["validate", "--feeder", "missing.json"]), 3);

    // Coordinated mode without its offline inputs is a configuration error.
    ok(d, &["synth-profiles", "--feeder", f, "--out", "prof.csv"]);
    assert_eq!(
        code(
            d,
            &["simulate", "--feeder", f, "--profiles", "prof.csv", "--out-dir", "o"]
        ),
        2
    );

    // Outputs never overwrite inputs.
    let before = fs::read(d.join("prof.csv")).unwrap();
    assert_eq!(
        code(d, &["synth-profiles", "--feeder", f, "--seed", "2", "--out", f]),
        2
    );
    assert_eq!(
        code(
            d,
            &[
                "powerflow",
                "--feeder",
                f,
                "--profiles",
                "prof.csv",
                "--minute",
                "700",
                "--out",
                "prof.csv"
            ]
        ),
        2
    );
    assert_eq!(fs::read(d.join("prof.csv")).unwrap(), before);
}

#[test]
fn config_document_feeds_the_stages() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let f = fixture("feeder13.json");
    let f = f.to_str().unwrap();
    fs::write(
        d.join("study.toml"),
        "[sensitivity]\nscenarios = 12\nseed = 9\n\n[partition]\nalpha = 0.9\n",
    )
    .unwrap();
    ok(
        d,
        &["--config", "study.toml", "sensitivity", "--feeder", f, "--out-dir", "s"],
    );
    let doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("s/sensitivity.json")).unwrap()).unwrap();
    assert_eq!(doc["scenarios"], 12);
    assert_eq!(doc["manifest"]["seed"], 9);
    // A flag overrides the document.
    ok(
        d,
        &[
            "--config",
            "study.toml",
            "sensitivity",
            "--feeder",
            f,
            "--scenarios",
            "5",
            "--out-dir",
            "s2",
        ],
    );
    let doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("s2/sensitivity.json")).unwrap()).unwrap();
    assert_eq!(doc["scenarios"], 5);

    ok(
        d,
        &[
            "--config",
            "study.toml",
            "partition",
            "--feeder",
            f,
            "--sensitivity",
            "s/sensitivity.json",
            "--out",
            "p.json",
        ],
    );
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("p.json")).unwrap()).unwrap();
    assert_eq!(doc["alpha"], 0.9);

    let csv = ok(d, &["powerflow", "--feeder", f, "--load-mult", "1.0", "--settle"]);
    assert!(csv.starts_with("bus,phase,v_pu,angle_deg\n"));
    assert!(csv.lines().count() > 10);
}
