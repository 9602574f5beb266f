//! Black-box tests of the `ftpads` binary: exit codes, CSV schema and
//! the event log.

use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const BASE_CONFIG: &str = r#"
[sim]
lps = 4
entities = 30
total_steps = 100
master_seed = 77

[failure_model]
kind = "crash"
tolerated_faults = 2
"#;

fn ftpads(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ftpads"))
        .args(args)
        .env_remove("FTPADS_LOG")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn stdout_lines(output: &Output) -> Vec<String> {
    String::from_utf8_lossy(&output.stdout).lines().map(str::to_owned).collect()
}

#[test]
fn run_exits_zero_and_emits_schema_row() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), BASE_CONFIG);
    let output = ftpads(&["run", "--config", &config]);
    assert_eq!(output.status.code(), Some(0), "{output:?}");

    let lines = stdout_lines(&output);
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], ftpads_cli::RUN_CSV_HEADER);

    // Every column parses back into its declared type.
    let cols: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(cols.len(), 15);
    assert_eq!(cols[0].len(), 16); // run_id
    let l: u32 = cols[1].parse().unwrap();
    let n: u32 = cols[2].parse().unwrap();
    let m: u32 = cols[3].parse().unwrap();
    assert_eq!((l, n, m), (4, 30, 3));
    assert_eq!(cols[4], "crash");
    let faults: u32 = cols[5].parse().unwrap();
    assert_eq!(faults, 0);
    let completed: bool = cols[6].parse().unwrap();
    assert!(completed);
    let logical: u64 = cols[7].parse().unwrap();
    let physical: u64 = cols[8].parse().unwrap();
    assert_eq!(physical, 9 * logical);
    let _dups: u64 = cols[9].parse().unwrap();
    let _voted: u64 = cols[10].parse().unwrap();
    let _corrupt: u64 = cols[11].parse().unwrap();
    let _migrations: u64 = cols[12].parse().unwrap();
    let _wall: f64 = cols[13].parse().unwrap();
    assert_eq!(cols[14].len(), 64); // digest hex
}

#[test]
fn run_with_unsatisfiable_replication_exits_two() {
    let dir = TempDir::new().unwrap();
    let config = write_config(
        dir.path(),
        &BASE_CONFIG.replace("lps = 4", "lps = 2"),
    );
    let output = ftpads(&["run", "--config", &config]);
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("M=3") && stderr.contains("L=2"), "{stderr}");
}

#[test]
fn unknown_config_key_exits_two_with_position() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), &BASE_CONFIG.replace("entities", "entittties"));
    let output = ftpads(&["run", "--config", &config]);
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("line"), "{stderr}");
}

#[test]
fn identical_invocations_produce_identical_digests() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), BASE_CONFIG);
    let digest = |output: &Output| stdout_lines(output)[1].split(',').next_back().unwrap().to_owned();
    let a = ftpads(&["run", "--config", &config]);
    let b = ftpads(&["run", "--config", &config]);
    assert_eq!(digest(&a), digest(&b));

    let c = ftpads(&["run", "--config", &config, "--seed", "123"]);
    assert_ne!(digest(&a), digest(&c), "seed override must change the run");
}

#[test]
fn run_writes_event_log_next_to_csv() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), &format!("{BASE_CONFIG}\n[[fault]]\nlp = 1\nkind = \"crash\"\n"));
    let out = dir.path().join("results.csv");
    let output = ftpads(&["run", "--config", &config, "--out", out.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(0));
    assert!(out.exists());

    let events_path = dir.path().join("results.events.jsonl");
    let events = std::fs::read_to_string(&events_path).unwrap();
    let mut saw_crash = false;
    for line in events.lines() {
        let v: serde_json::Value = serde_json::from_str(line).expect("valid JSON line");
        assert!(v.get("step").is_some() && v.get("event").is_some());
        if v["event"] == "lp_crashed" {
            assert_eq!(v["lp"], 1);
            assert_eq!(v["step"], 50); // defaulted to the midpoint
            saw_crash = true;
        }
    }
    assert!(saw_crash);
}

#[test]
fn sweep_over_entities_scales_logical_sends() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), BASE_CONFIG);
    let output = ftpads(&["sweep", "--config", &config, "--axis", "n", "--values", "50,100"]);
    assert_eq!(output.status.code(), Some(0));
    let lines = stdout_lines(&output);
    assert_eq!(lines.len(), 3);
    let logical =
        |line: &String| line.split(',').nth(7).unwrap().parse::<f64>().unwrap();
    let ratio = logical(&lines[2]) / logical(&lines[1]);
    assert!(
        (1.7..2.3).contains(&ratio),
        "doubling N should roughly double logical sends (ratio {ratio:.3})"
    );
}

#[test]
fn sweep_over_crash_faults_completes_up_to_tolerance() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), BASE_CONFIG);
    let output =
        ftpads(&["sweep", "--config", &config, "--axis", "faults", "--values", "0,1,2,3"]);
    let lines = stdout_lines(&output);
    assert_eq!(lines.len(), 5);
    let completed: Vec<bool> =
        lines[1..].iter().map(|l| l.split(',').nth(6).unwrap().parse().unwrap()).collect();
    // M = 3 tolerates up to 2 crashes; the 4-LP run with 3 crashes may
    // legitimately fail, and with N=30 on C(4,3) placements it does.
    assert_eq!(&completed[..3], &[true, true, true]);
    let faults: Vec<u32> =
        lines[1..].iter().map(|l| l.split(',').nth(5).unwrap().parse().unwrap()).collect();
    assert_eq!(faults, vec![0, 1, 2, 3]);
}

#[test]
fn sweep_records_invalid_values_and_continues() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), BASE_CONFIG);
    // M = 6 exceeds L = 4: that row fails, the others still run.
    let output = ftpads(&["sweep", "--config", &config, "--axis", "m", "--values", "2,6,3"]);
    assert_eq!(output.status.code(), Some(1));
    let lines = stdout_lines(&output);
    assert_eq!(lines.len(), 4);
    let row = |i: usize| lines[i].split(',').collect::<Vec<_>>();
    assert_eq!(row(1)[6], "true");
    assert_eq!(row(2)[6], "false");
    assert_eq!(row(2)[14], "-");
    assert_eq!(row(3)[6], "true");
}

#[test]
fn reliability_matches_byzantine_tolerance_boundary() {
    let output = ftpads(&[
        "reliability",
        "--lps", "100",
        "--entities", "1000000",
        "--replicas", "21",
        "--model", "byzantine",
        "--sweep", "x",
        "--from", "10",
        "--to", "11",
    ]);
    assert_eq!(output.status.code(), Some(0));
    let lines = stdout_lines(&output);
    assert_eq!(lines[0], "x,analytic");
    let value = |line: &String| line.split(',').nth(1).unwrap().parse::<f64>().unwrap();
    assert_eq!(value(&lines[1]), 1.0); // X = 10: within tolerance
    assert!(value(&lines[2]) < 1.0); // X = 11: past it
}

#[test]
fn reliability_rejects_invalid_grid() {
    let output = ftpads(&[
        "reliability",
        "--lps", "10",
        "--entities", "5",
        "--replicas", "3",
        "--model", "crash",
        "--sweep", "n",
        "--from", "1",
        "--to", "10",
    ]);
    // Sweeping N without --failed is an invalid grid.
    assert_eq!(output.status.code(), Some(2));

    let output = ftpads(&[
        "reliability",
        "--lps", "10",
        "--entities", "5",
        "--replicas", "30",
        "--model", "crash",
        "--sweep", "x",
        "--from", "0",
        "--to", "5",
    ]);
    assert_eq!(output.status.code(), Some(2), "M > L must be rejected");
}

#[test]
fn trace_log_level_includes_delivery_events() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), BASE_CONFIG);
    let out = dir.path().join("traced.csv");
    let output = Command::new(env!("CARGO_BIN_EXE_ftpads"))
        .args(["run", "--config", &config, "--out", out.to_str().unwrap()])
        .env("FTPADS_LOG", "trace")
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0));
    let events = std::fs::read_to_string(dir.path().join("traced.events.jsonl")).unwrap();
    let deliveries = events.lines().filter(|l| l.contains("\"delivery\"")).count();
    assert!(deliveries > 0, "trace level should include per-delivery events");
}
