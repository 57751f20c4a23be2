use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_carbonsched"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_BACKTRACE", "0")
        .env_remove("CARBONSCHED_OUT")
        .output()
        .expect("spawn carbonsched")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

const ONE_JOB: &str = r#"{"jobs": [{"job_id": 0, "arrival_time": 0.0,
  "stages": [{"stage_id": 0, "num_tasks": 2, "task_durations": [30.0]},
             {"stage_id": 1, "num_tasks": 1, "task_durations": [60.0]}],
  "edges": [[0, 1]]}]}"#;

fn write_config(dir: &Path, policy: &str) -> std::path::PathBuf {
    fs::write(dir.join("job.json"), ONE_JOB).unwrap();
    fs::write(
        dir.join("trace.csv"),
        "timestamp,carbon_intensity\n2021-01-01T00:00:00Z,100\n2021-01-01T01:00:00Z,300\n2021-01-01T02:00:00Z,200\n",
    )
    .unwrap();
    let cfg = format!(
        r#"
[cluster]
executors = 2
[trace]
kind = "file"
path = "trace.csv"
[workload]
kind = "file"
path = "job.json"
[policy]
{policy}
[trials]
random_offset = false
"#
    );
    let p = dir.join("exp.toml");
    fs::write(&p, cfg).unwrap();
    p
}

#[test]
fn run_writes_self_describing_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"name = "fifo""#);
    ok(&bin(&["run", cfg.to_str().unwrap(), "-o", "out"], tmp.path()));
    for f in [
        "config.json",
        "schedule.csv",
        "events.jsonl",
        "gantt.json",
        "metrics.json",
    ] {
        assert!(tmp.path().join("out").join(f).is_file(), "missing {f}");
    }
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("out/metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["ect"], 90.0);
    let schedule = fs::read_to_string(tmp.path().join("out/schedule.csv")).unwrap();
    assert_eq!(schedule.lines().next(), Some("job,stage,task,executor,start,end"));
    assert_eq!(schedule.lines().count(), 4);

    let report: serde_json::Value = serde_json::from_str(&ok(&bin(&["analyze", "out"], tmp.path()))).unwrap();
    assert_eq!(report["metrics_reproduced"], true);
    assert_eq!(report["opt"], 90.0);
    assert_eq!(report["bounds"][0]["pass"], true);
}

#[test]
fn repeated_runs_have_identical_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "name = \"pcaps\"\ngamma = 0.7");
    let cfg = cfg.to_str().unwrap();
    ok(&bin(&["run", cfg, "-o", "a", "--seed", "5"], tmp.path()));
    ok(&bin(&["run", cfg, "-o", "b", "--seed", "5"], tmp.path()));
    assert_eq!(
        fs::read(tmp.path().join("a/metrics.json")).unwrap(),
        fs::read(tmp.path().join("b/metrics.json")).unwrap()
    );
}

#[test]
fn missing_trace_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"name = "fifo""#);
    let out = bin(
        &["run", cfg.to_str().unwrap(), "--trace", "no-such-trace.csv", "-o", "x"],
        tmp.path(),
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no-such-trace.csv"));
}

#[test]
fn env_var_sets_output_root() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"name = "fifo""#);
    let out = Command::new(env!("CARGO_BIN_EXE_carbonsched"))
        .args(["run", cfg.to_str().unwrap(), "--seed", "2"])
        .current_dir(tmp.path())
        .env("CARBONSCHED_OUT", tmp.path().join("root"))
        .output()
        .unwrap();
    ok(&out);
    assert!(tmp.path().join("root/fifo-seed2/metrics.json").is_file());
}

#[test]
fn knob_override_must_fit_policy() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"name = "fifo""#);
    let out = bin(&["run", cfg.to_str().unwrap(), "--gamma", "0.5", "-o", "x"], tmp.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--gamma"));
}

#[test]
fn compare_self_and_mismatch() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "name = \"cap\"\nb = 1\ninner = { name = \"fifo\" }");
    let cfg = cfg.to_str().unwrap();
    ok(&bin(&["run", cfg, "-o", "a"], tmp.path()));
    let report: serde_json::Value = serde_json::from_str(&ok(&bin(&["compare", "a", "a"], tmp.path()))).unwrap();
    assert_eq!(report["csf"]["observed_ratio"], 1.0);
    assert_eq!(report["savings_cap_form"]["savings_g"], 0.0);
    assert_eq!(report["savings_pcaps_form"]["direct_savings_g"], 0.0);

    let other = tmp.path().join("other.json");
    fs::write(&other, ONE_JOB.replace("60.0", "61.0")).unwrap();
    let text = fs::read_to_string(cfg).unwrap().replace("job.json", "other.json");
    fs::write(tmp.path().join("other.toml"), text).unwrap();
    ok(&bin(&["run", "other.toml", "-o", "b"], tmp.path()));
    let out = bin(&["compare", "a", "b"], tmp.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("different workloads"));
}

#[test]
fn validate_trace_statistics_and_errors() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(
        tmp.path().join("t.csv"),
        "timestamp,carbon_intensity\n2021-01-01T00:00:00Z,1\n2021-01-01T01:00:00Z,2\n2021-01-01T02:00:00Z,3\n",
    )
    .unwrap();
    let text = ok(&bin(&["validate-trace", "t.csv"], tmp.path()));
    assert!(text.starts_with("ok\n"));
    let stats: serde_json::Value = serde_json::from_str(&text[3..]).unwrap();
    assert_eq!(stats["mean"], 2.0);
    assert!((stats["coeff_var"].as_f64().unwrap() - 0.4082).abs() < 1e-4);

    fs::write(
        tmp.path().join("bad.csv"),
        "timestamp,carbon_intensity\n2021-01-01T00:00:00Z,1\n2021-01-01T01:00:00Z,oops\n",
    )
    .unwrap();
    let out = bin(&["validate-trace", "bad.csv"], tmp.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 2"));
}

#[test]
fn generators_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&bin(
        &[
            "gen-workload",
            "--model",
            "layered",
            "--jobs",
            "5",
            "--seed",
            "3",
            "-o",
            "w.json",
        ],
        tmp.path(),
    ));
    let w: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("w.json")).unwrap()).unwrap();
    assert_eq!(w["jobs"].as_array().unwrap().len(), 5);

    ok(&bin(
        &["gen-trace", "square-wave", "--steps", "12", "-o", "sq.csv"],
        tmp.path(),
    ));
    let stats: serde_json::Value =
        serde_json::from_str(&ok(&bin(&["validate-trace", "sq.csv"], tmp.path()))[3..]).unwrap();
    assert_eq!(stats["rows"], 12);
    assert_eq!(stats["min"], 50.0);
    assert_eq!(stats["max"], 500.0);
}

#[test]
fn sweep_writes_reproducible_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "name = \"cap\"\nb = 1\ninner = { name = \"pb\" }");
    let cfg = cfg.to_str().unwrap();
    let args = |o: &'static str| ["sweep", cfg, "--axis", "b", "--values", "1,2", "--seeds", "3", "-o", o];
    ok(&bin(&args("s1"), tmp.path()));
    ok(&bin(&args("s2"), tmp.path()));
    let a = fs::read_to_string(tmp.path().join("s1/summary.csv")).unwrap();
    assert_eq!(a, fs::read_to_string(tmp.path().join("s2/summary.csv")).unwrap());
    let mut rows = csv::Reader::from_reader(a.as_bytes());
    let last = rows.records().last().unwrap().unwrap();
    // B = K leaves the inner scheduler untouched
    assert_eq!(&last[1], "2");
    assert_eq!(&last[11], "1");
    assert_eq!(&last[12], "0");
}
