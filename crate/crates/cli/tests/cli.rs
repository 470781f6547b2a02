use std::path::PathBuf;
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn bosim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bosim")).args(args).output().expect("spawn bosim")
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

#[test]
fn run_writes_trace_with_footer_and_stats() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("pub.trace");
    let stats = dir.path().join("stats.json");
    let pub_bos = scenario("pub.bos");
    let out = bosim(&[
        "run",
        pub_bos.to_str().unwrap(),
        "--seed",
        "7",
        "--ticks",
        "5000",
        "--trace",
        trace.to_str().unwrap(),
        "--stats",
        stats.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let body = std::fs::read_to_string(&trace).unwrap();
    let footer = body.lines().last().unwrap();
    assert!(footer.starts_with("# trace-hash="), "{footer}");
    let n = body.lines().count() - 1;
    assert!(footer.ends_with(&format!("lines={n}")), "{footer} vs {n}");
    // The summary repeats the hash; the trace itself never reaches stdout.
    let stdout = text(&out.stdout);
    let hash = footer.trim_start_matches("# trace-hash=").split(' ').next().unwrap();
    assert!(stdout.contains(hash));
    assert!(!stdout.contains("kind=brain-tick"));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&stats).unwrap()).unwrap();
    assert_eq!(json["ticks"], 5000);
}

#[test]
fn recursion_exits_3_naming_instance_and_behavior() {
    let p = scenario("runtime/recursion.bos");
    let out = bosim(&["run", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let err = text(&out.stderr);
    assert!(err.contains("hall-1") && err.contains("`echo`") && err.contains("tick 1"), "{err}");
}

#[test]
fn missing_and_malformed_files_exit_2() {
    let out = bosim(&["run", "/definitely/not/here.bos"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("cannot read"));
    let bad = scenario("invalid/unknown-node.bos");
    let out = bosim(&["run", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
}

#[test]
fn replay_check_agrees_and_locates_divergence() {
    let p = scenario("pub.bos");
    let p = p.to_str().unwrap();
    let out = bosim(&["replay-check", p, "--ticks", "300", "--runs", "3"]);
    assert_eq!(out.status.code(), Some(0));
    let hashes: Vec<String> = text(&out.stdout).lines().filter(|l| l.starts_with("run ")).map(|l| l[7..].to_string()).collect();
    assert_eq!(hashes.len(), 3);
    assert!(hashes.iter().all(|h| h == &hashes[0]));

    let out = bosim(&["replay-check", p, "--ticks", "300", "--runs", "3", "--chaos-tick", "123"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(text(&out.stderr).contains("diverged at tick 123"));

    let out = bosim(&["replay-check", p, "--ticks", "50", "--runs", "1"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn bench_reports_timing() {
    let out = bosim(&["bench", "--npcs", "0", "--ticks", "50"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(text(&out.stdout).contains("mean:"));
    let out = bosim(&["bench", "--npcs", "12", "--profile", "complex", "--ticks", "50"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(text(&out.stdout).contains("p99:"));
    let out = bosim(&["bench", "--profile", "fancy"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn help_lists_every_flag() {
    let out = bosim(&["run", "--help"]);
    let h = text(&out.stdout);
    for flag in ["--seed", "--ticks", "--trace", "--stats"] {
        assert!(h.contains(flag), "{flag} missing");
    }
    let h = text(&bosim(&["bench", "--help"]).stdout);
    for flag in ["--npcs", "--profile", "--ticks"] {
        assert!(h.contains(flag), "{flag} missing");
    }
    let h = text(&bosim(&["replay-check", "--help"]).stdout);
    assert!(h.contains("--runs"));
}
