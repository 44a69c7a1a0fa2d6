use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use detal::al::RoundLog;
use detal::dataset::{Dataset, Split};
use tempfile::TempDir;

fn detal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_detal"))
        .args(args)
        .env_remove("DETAL_CONFIG")
        .output()
        .expect("running detal")
}

fn ok(args: &[&str]) -> Output {
    let out = detal(args);
    assert!(
        out.status.success(),
        "detal {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(args: &[&str]) -> i32 {
    detal(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small synthetic dataset with 20 labeled train images and the rest pooled.
fn synth(dir: &TempDir) -> PathBuf {
    let root = dir.path().join("data");
    ok(&["-q", "synth", "--scale", "0.05", "--initial-labeled", "20", "--size", "64", "--out", s(&root)]);
    root
}

#[test]
fn synth_output_loads_back() {
    let dir = TempDir::new().unwrap();
    let ds = Dataset::load(&synth(&dir)).unwrap();
    assert_eq!(ds.split(Split::Train).count(), 20);
    assert!(ds.split(Split::Pool).count() > 0);
    assert!(ds.split(Split::Valid).count() > 0);
    assert_eq!(ds.classes().len(), 3);
}

#[test]
fn select_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let data = synth(&dir);
    let runs: Vec<PathBuf> = ["a", "b"].iter().map(|n| dir.path().join(n)).collect();
    for run in &runs {
        ok(&["-q", "--seed", "3", "select", "--data", s(&data), "--k", "10", "--out", s(run)]);
    }
    for file in ["state.json", "selections/round1.txt"] {
        let a = fs::read(runs[0].join(file)).unwrap();
        assert_eq!(a, fs::read(runs[1].join(file)).unwrap(), "{file}");
    }
    assert_eq!(fs::read_to_string(runs[0].join("selections/round1.txt")).unwrap().lines().count(), 10);
}

#[test]
fn state_file_carries_into_the_next_round() {
    let dir = TempDir::new().unwrap();
    let data = synth(&dir);
    let r1 = dir.path().join("r1");
    let r2 = dir.path().join("r2");
    ok(&["-q", "select", "--data", s(&data), "--k", "10", "--out", s(&r1)]);
    let state = r1.join("state.json");
    ok(&["-q", "select", "--data", s(&data), "--state", s(&state), "--k", "10", "--out", s(&r2)]);
    let first = fs::read_to_string(r1.join("selections/round1.txt")).unwrap();
    let second = fs::read_to_string(r2.join("selections/round2.txt")).unwrap();
    assert_eq!(second.lines().count(), 10);
    assert!(second.lines().all(|id| !first.lines().any(|f| f == id)), "move update reselected an image");

    // copy keeps selected images in the pool; the saved state must still load
    let c1 = dir.path().join("c1");
    let c2 = dir.path().join("c2");
    ok(&["-q", "select", "--data", s(&data), "--k", "10", "--update", "copy", "--out", s(&c1)]);
    ok(&["-q", "select", "--data", s(&data), "--state", s(&c1.join("state.json")), "--update", "copy", "--out", s(&c2)]);
}

#[test]
fn filter_output_loads_back() {
    let dir = TempDir::new().unwrap();
    let data = synth(&dir);
    let out = dir.path().join("filtered");
    ok(&["-q", "filter", "--data", s(&data), "--extreme-threshold", "0.002", "--out", s(&out)]);
    let before = Dataset::load(&data).unwrap();
    let after = Dataset::load(&out).unwrap();
    assert_eq!(after.len(), before.len());
    let boxes = |d: &Dataset| d.images().iter().map(|i| i.labels.len()).sum::<usize>();
    assert!(boxes(&after) <= boxes(&before));
    assert!(out.join("removal_report.json").is_file());
}

#[test]
fn al_sim_default_schedule_and_report() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("sim");
    ok(&["-q", "al-sim", "--methods", "max,random", "--updates", "move", "--rounds", "4", "--no-eval", "--out", s(&out)]);
    let log = RoundLog::parse_csv(&fs::read_to_string(out.join("log_max_move.csv")).unwrap()).unwrap();
    let sizes: Vec<usize> = log.entries.iter().map(|e| e.labeled).collect();
    assert_eq!(sizes, [230, 730, 1230, 1730, 2186]);

    let rep = dir.path().join("report");
    ok(&["-q", "report", s(&out), "--out", s(&rep)]);
    let growth = fs::read_to_string(rep.join("growth.csv")).unwrap();
    let rows: Vec<&str> = growth.lines().collect();
    assert_eq!(rows.len(), 3, "{growth}");
    assert!(rows[1].starts_with("Max,Move,230,"), "{growth}");
    assert!(rows[2].starts_with("Random,Move,230,"), "{growth}");
    assert!(!rep.join("scores.csv").exists());
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let data = synth(&dir);
    let out = dir.path().join("out");

    assert_eq!(code(&["select", "--bogus"]), 1);
    assert_eq!(code(&["select", "--data", s(&data), "--method", "median"]), 1);
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "seed = 1\nunknown_key = 2\n").unwrap();
    assert_eq!(code(&["--config", s(&cfg), "schedule", "--out", s(&out)]), 1);

    assert_eq!(code(&["select", "--data", s(&dir.path().join("missing")), "--out", s(&out)]), 2);

    fs::create_dir_all(&out).unwrap();
    fs::write(out.join(".detal.lock"), "1").unwrap();
    assert_eq!(code(&["-q", "select", "--data", s(&data), "--out", s(&out)]), 2);
    fs::remove_file(out.join(".detal.lock")).unwrap();
    assert_eq!(code(&["-q", "select", "--data", s(&data), "--out", s(&out)]), 0);

    let label = fs::read_dir(data.join("labels")).unwrap().next().unwrap().unwrap().path();
    fs::write(&label, "0 0.5 0.5 not-a-number 0.1\n").unwrap();
    assert_eq!(code(&["select", "--data", s(&data), "--out", s(&out)]), 2);

    assert_eq!(code(&["--help"]), 0);
}
