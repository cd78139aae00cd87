use std::path::Path;
use std::process::{Command, Output};

fn pcfg(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcfg")).args(args).current_dir(cwd).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn gen(dir: &Path, args: &[&str]) {
    let mut all = vec!["gen"];
    all.extend_from_slice(args);
    let o = pcfg(&all, dir);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn gen_writes_two_files() {
    let d = tempfile::tempdir().unwrap();
    gen(d.path(), &["tailcall-ambiguous", "--seed", "1", "--out", "t"]);
    assert!(d.path().join("t/image.pcfg").is_file());
    assert!(d.path().join("t/truth.json").is_file());
}

#[test]
fn gen_rejects_out_of_bounds() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(code(&pcfg(&["gen", "big-random", "--functions=100001"], d.path())), 1);
    assert_eq!(code(&pcfg(&["gen", "noreturn-chain", "--depth=65"], d.path())), 1);
    assert_eq!(code(&pcfg(&["gen", "no-such-family"], d.path())), 1);
}

#[test]
fn every_family_verifies() {
    let d = tempfile::tempdir().unwrap();
    for family in pcfg::workload::FAMILIES {
        for seed in ["0", "1"] {
            let out = format!("{family}-{seed}");
            gen(d.path(), &[family, "--seed", seed, "--out", &out]);
            let o = pcfg(&["verify", &format!("{out}/image.pcfg"), "--truth", &format!("{out}/truth.json")], d.path());
            assert_eq!(code(&o), 0, "{family}: {}", String::from_utf8_lossy(&o.stdout));
            assert_eq!(String::from_utf8_lossy(&o.stdout).matches("PASS").count(), 4);
        }
    }
}

#[test]
fn perturbed_truth_fails_and_names_the_table() {
    let d = tempfile::tempdir().unwrap();
    gen(d.path(), &["jump-table", "--entries=5", "--out", "j"]);
    let path = d.path().join("j/truth.json");
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.contains("\"size\": 5"));
    std::fs::write(&path, text.replace("\"size\": 5", "\"size\": 6")).unwrap();
    let o = pcfg(&["verify", "j/image.pcfg", "--truth", "j/truth.json"], d.path());
    assert_eq!(code(&o), 1);
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("FAIL jump table sizes"));
    assert!(out.contains("table 0x40000000"));
}

#[test]
fn missing_or_malformed_inputs() {
    let d = tempfile::tempdir().unwrap();
    gen(d.path(), &["opaque-jump", "--out", "o"]);
    assert_eq!(code(&pcfg(&["verify", "o/image.pcfg", "--truth", "nope.json"], d.path())), 2);
    std::fs::write(d.path().join("bad.pcfg"), b"XXXX\x01\x00").unwrap();
    let o = pcfg(&["analyze", "bad.pcfg"], d.path());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad magic"));
    assert_eq!(code(&pcfg(&["analyze", "missing.pcfg"], d.path())), 2);
    assert_eq!(code(&pcfg(&["verify", "bad.pcfg", "--truth", "o/truth.json"], d.path())), 2);
}

#[test]
fn analyze_is_identical_across_thread_counts() {
    let d = tempfile::tempdir().unwrap();
    gen(d.path(), &["big-random", "--functions=400", "--seed", "3", "--out", "b"]);
    let one = pcfg(&["analyze", "b/image.pcfg", "--threads", "1"], d.path());
    let eight = pcfg(&["analyze", "b/image.pcfg", "--threads", "8"], d.path());
    assert_eq!(code(&one), 0);
    assert_eq!(one.stdout, eight.stdout);
    let err = String::from_utf8_lossy(&one.stderr);
    assert!(err.contains("traversal") && err.contains("functions"));
}

#[test]
fn analyze_formats_and_out_file() {
    let d = tempfile::tempdir().unwrap();
    gen(d.path(), &["jump-table-overapprox", "--extra=2", "--out", "x"]);
    let o = pcfg(&["analyze", "x/image.pcfg", "--format", "json", "--out", "g.json"], d.path());
    assert_eq!(code(&o), 0);
    assert!(o.stdout.is_empty());
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.path().join("g.json")).unwrap()).unwrap();
    assert!(v["blocks"].is_array() && v["jump_tables"].is_array());
    let dot = pcfg(&["analyze", "x/image.pcfg", "--format", "dot"], d.path());
    assert!(String::from_utf8_lossy(&dot.stdout).starts_with("digraph"));
}

#[test]
fn bench_reports_rows_and_catches_divergence() {
    let d = tempfile::tempdir().unwrap();
    gen(d.path(), &["multi-entry", "--entries=64", "--out", "m"]);
    let o = pcfg(&["bench", "m/image.pcfg", "--threads", "1", "--repeat", "2"], d.path());
    assert_eq!(code(&o), 0);
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("row threads=1") && out.contains("speedup=1.000"));
    let o = pcfg(&["bench", "m/image.pcfg", "--threads", "1,2", "--repeat", "1", "--inject-divergence"], d.path());
    assert_eq!(code(&o), 1);
}
