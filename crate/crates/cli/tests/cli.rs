use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_balance-sim"))
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn run(command: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    bin()
        .arg(command)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn stderr_json(output: &Output) -> serde_json::Value {
    let text = String::from_utf8(output.stderr.clone()).unwrap();
    let line = text.lines().last().expect("error line on stderr");
    serde_json::from_str(line).unwrap()
}

fn manifest(out: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap()
}

const COUPLE: &str = "n = 50\nhorizon = 5.0\npolicies = [\"jiq\", \"jsq\"]\nreps = 3\nseed = 7\n";

#[test]
fn couple_jiq_jsq_passes_and_lists_its_files() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), "c.toml", COUPLE);
    let out = dir.path().join("out");
    let output = run("couple", &config, &out, &[]);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));

    let m = manifest(&out);
    assert_eq!(m["status"], "pass");
    assert_eq!(m["command"], "couple");
    assert_eq!(m["seed"], 7);
    assert_eq!(m["config"]["policies"][1], "jsq");
    assert!(m["wall_time_secs"].as_f64().unwrap() >= 0.0);
    let files: Vec<&str> = m["files"].as_array().unwrap().iter().map(|f| f.as_str().unwrap()).collect();
    assert!(files.contains(&"summary.jsonl") && files.contains(&"manifest.json"));
    assert_eq!(files.iter().filter(|f| f.starts_with("paths/")).count(), 6);
    for f in files {
        assert!(out.join(f).is_file(), "{f} listed but missing");
    }

    let summary = fs::read_to_string(out.join("summary.jsonl")).unwrap();
    let records: Vec<serde_json::Value> = summary.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let ordering: Vec<_> = records.iter().filter(|r| r["check"] == "ordering").collect();
    assert_eq!(ordering.len(), 3);
    assert!(ordering.iter().all(|r| r["hypothesis_holds"] == true && r["passed"] == true));
    assert_eq!(records.iter().filter(|r| r["check"] == "sandwich").count(), 3);

    let csv = fs::read_to_string(out.join("paths/rep0000_p0.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("time,Q1,Q2,L"));
    let scaled = fs::read_to_string(out.join("scaled/rep0000_p0.csv")).unwrap();
    assert_eq!(scaled.lines().next(), Some("time,X1,X2"));
}

#[test]
fn reruns_are_byte_identical_across_execution_modes() {
    let dir = TempDir::new().unwrap();
    let parallel = write_config(dir.path(), "p.toml", COUPLE);
    let sequential = write_config(dir.path(), "s.toml", &format!("{COUPLE}parallel = false\n"));
    let outs = [dir.path().join("a"), dir.path().join("b"), dir.path().join("c")];
    for (config, out) in [(&parallel, &outs[0]), (&parallel, &outs[1]), (&sequential, &outs[2])] {
        assert!(run("simulate", config, out, &[]).status.success());
    }
    let files = manifest(&outs[0])["files"].as_array().unwrap().clone();
    let mut compared = 0;
    for f in files.iter().map(|f| f.as_str().unwrap()).filter(|f| *f != "manifest.json") {
        let first = fs::read(outs[0].join(f)).unwrap();
        for other in &outs[1..] {
            assert_eq!(first, fs::read(other.join(f)).unwrap(), "{f} differs");
        }
        compared += 1;
    }
    assert_eq!(compared, 13);
}

#[test]
fn seed_and_reps_flags_override_the_config() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), "c.toml", COUPLE);
    let out = dir.path().join("out");
    assert!(run("simulate", &config, &out, &["--seed", "99", "--reps", "2"]).status.success());
    let m = manifest(&out);
    assert_eq!(m["seed"], 99);
    assert_eq!(m["config"]["reps"], 2);
    let summary = fs::read_to_string(out.join("summary.jsonl")).unwrap();
    assert_eq!(summary.lines().count(), 4);
}

#[test]
fn scripted_events_follow_the_hand_computed_trajectory() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("events.txt"), "0.1 A 3,1,4,2\n0.2 A\n0.3 D 4\n0.4 A 2,1,3,4\n0.5 A\n0.6 A\n").unwrap();
    let config = write_config(
        dir.path(),
        "c.toml",
        "n = 3\npolicies = [\"jsq\"]\nevents = \"events.txt\"\n",
    );
    // Wrong N for the script: the permutation has four entries.
    let out = dir.path().join("out");
    let bad = run("simulate", &config, &out, &[]);
    assert_eq!(bad.status.code(), Some(2));

    let config = write_config(dir.path(), "c.toml", "n = 4\npolicies = [\"jsq\"]\nevents = \"events.txt\"\n");
    assert!(run("simulate", &config, &out, &[]).status.success());
    // Position 4 is the longest queue, so the departure empties one of the two
    // busy servers; JSQ then keeps filling idle servers.
    let expected = "time,Q1,Q2,L\n0,0,0,0\n0.1,1,0,0\n0.2,2,0,0\n0.3,1,0,0\n0.4,2,0,0\n0.5,3,0,0\n0.6,4,0,0\n";
    assert_eq!(fs::read_to_string(out.join("paths/rep0000_p0.csv")).unwrap(), expected);
}

#[test]
fn malformed_policy_is_a_parse_error() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), "c.toml", "n = 10\npolicies = [\"pi:\"]\n");
    let output = run("simulate", &config, &dir.path().join("out"), &[]);
    assert_eq!(output.status.code(), Some(2));
    let err = stderr_json(&output);
    assert_eq!(err["error"], "parse");
    assert_eq!(err["exit_code"], 2);
}

#[test]
fn bad_arguments_and_unknown_keys_are_parse_errors() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), "c.toml", COUPLE);
    let output = run("teleport", &config, &dir.path().join("out"), &[]);
    assert_eq!(output.status.code(), Some(2));
    assert_eq!(stderr_json(&output)["error"], "parse");

    let config = write_config(dir.path(), "u.toml", "n = 10\nlambda = 3\n");
    assert_eq!(run("simulate", &config, &dir.path().join("out"), &[]).status.code(), Some(2));
}

#[test]
fn help_exits_cleanly() {
    let output = bin().arg("--help").output().unwrap();
    assert!(output.status.success());
    assert!(String::from_utf8_lossy(&output.stdout).contains("scaling-study"));
}

#[test]
fn nonpositive_beta_is_a_domain_error() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), "c.toml", "n = 10\nbeta = -1.0\npolicies = [\"jsq\"]\n");
    let output = run("simulate", &config, &dir.path().join("out"), &[]);
    assert_eq!(output.status.code(), Some(3));
    assert_eq!(stderr_json(&output)["error"], "domain");
}

#[test]
fn oversized_oracle_is_a_capacity_error() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), "c.toml", "n = 200\npolicies = [\"jsq:cap=3\"]\n");
    let output = run("oracle-compare", &config, &dir.path().join("out"), &[]);
    assert_eq!(output.status.code(), Some(4));
    assert_eq!(stderr_json(&output)["error"], "capacity");
}

#[test]
fn missing_config_is_an_io_error() {
    let dir = TempDir::new().unwrap();
    let output = run("simulate", &dir.path().join("nope.toml"), &dir.path().join("out"), &[]);
    assert_eq!(output.status.code(), Some(5));
    assert_eq!(stderr_json(&output)["error"], "io");
}

#[test]
fn failed_check_exits_one_and_still_writes_the_manifest() {
    let dir = TempDir::new().unwrap();
    let config = write_config(
        dir.path(),
        "c.toml",
        "n = 3\nbeta = 0.5\nhorizon = 20.0\npolicies = [\"jsq\"]\n[tolerances]\ntv = 0.0\n",
    );
    let out = dir.path().join("out");
    let output = run("oracle-compare", &config, &out, &[]);
    assert_eq!(output.status.code(), Some(1));
    let err = stderr_json(&output);
    assert_eq!(err["error"], "assertion");
    assert_eq!(err["failures"].as_array().unwrap().len(), 1);
    let m = manifest(&out);
    assert_eq!(m["status"], "fail");
    assert!(out.join("oracle/p0_exact.csv").is_file());
}

#[test]
fn oracle_compare_matches_the_exact_chain() {
    let dir = TempDir::new().unwrap();
    let config = write_config(
        dir.path(),
        "c.toml",
        "n = 3\nbeta = 0.5\nhorizon = 500.0\nreps = 8\npolicies = [\"jiq\", \"jsq\"]\n",
    );
    let out = dir.path().join("out");
    let output = run("oracle-compare", &config, &out, &[]);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let exact = fs::read_to_string(out.join("oracle/p1_exact.csv")).unwrap();
    let total: f64 = exact.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn diffusion_from_the_origin_stays_on_the_boundary_without_noise_terms() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), "c.toml", "horizon = 1.0\ndt = 0.01\nreps = 2\nseed = 3\n");
    let out = dir.path().join("out");
    assert!(run("diffusion", &config, &out, &[]).status.success());
    let path = fs::read_to_string(out.join("diffusion/path0000.csv")).unwrap();
    assert_eq!(path.lines().count(), 102);
    for line in path.lines().skip(1) {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert!(v[1] <= 0.0 && v[2] >= 0.0 && v[3] >= 0.0, "{line}");
    }
    let summary = fs::read_to_string(out.join("summary.jsonl")).unwrap();
    assert!(summary.contains("\"complementarity_ok\":true"));
}

#[test]
fn prop1_fuzz_finds_no_admissible_counterexample() {
    let dir = TempDir::new().unwrap();
    let config =
        write_config(dir.path(), "c.toml", "seed = 5\n[fuzz]\ntrials = 2000\nsearch_trials = 20000\n");
    let out = dir.path().join("out");
    let output = run("prop1-fuzz", &config, &out, &[]);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(fs::read_to_string(out.join("summary.jsonl")).unwrap().trim()).unwrap();
    assert_eq!(summary["violations"].as_array().unwrap().len(), 0);
    assert!(summary["search_hits"].as_u64().unwrap() > 0);
}

#[test]
fn scaling_study_rejects_a_non_reference_first_policy() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), "c.toml", "n_grid = [16]\npolicies = [\"jsq\"]\n");
    let output = run("scaling-study", &config, &dir.path().join("out"), &[]);
    assert_eq!(output.status.code(), Some(2));

    let config = write_config(
        dir.path(),
        "c.toml",
        "n_grid = [16, 64]\nhorizon = 2.0\nreps = 3\npolicies = [\"jiq\", \"pi:N,2,2\"]\nuniversality = [\"jiq\", \"jsq\"]\n",
    );
    let out = dir.path().join("out");
    assert!(run("scaling-study", &config, &out, &[]).status.success());
    let summary = fs::read_to_string(out.join("summary.jsonl")).unwrap();
    let kinds: Vec<String> = summary
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["record"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(kinds.iter().filter(|k| *k == "replication").count(), 6);
    assert_eq!(kinds.iter().filter(|k| *k == "size").count(), 2);
    assert_eq!(kinds.iter().filter(|k| *k == "trend").count(), 1);
    assert_eq!(kinds.iter().filter(|k| *k == "universality").count(), 2);
}
