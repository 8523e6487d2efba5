use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_deepim"))
}

fn smoke_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/configs/smoke.toml")
}

fn run(args: &[&str], out: &Path) -> i32 {
    let status = bin()
        .arg("--config")
        .arg(smoke_config())
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("spawn deepim");
    status.status.code().expect("exit code")
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let code = bin().arg("gen-graph").output().unwrap().status.code();
    assert_eq!(code, Some(2), "missing --config");

    assert_eq!(run(&["run", "--stage", "bogus"], dir.path()), 2);

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "seed = 1\nunknown_key = 3\n[graph]\nsource = \"jazz_like\"\n").unwrap();
    let code = bin()
        .args(["--config", bad.to_str().unwrap(), "gen-graph"])
        .output()
        .unwrap()
        .status
        .code();
    assert_eq!(code, Some(2), "unknown config key");
}

#[test]
fn stages_chain_and_detect_upstream_problems() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert_eq!(run(&["train"], &out), 3, "train before gen-data");
    assert_eq!(run(&["gen-graph"], &out), 0);
    assert_eq!(run(&["gen-data"], &out), 0);
    assert_eq!(run(&["train"], &out), 0);
    assert_eq!(run(&["infer"], &out), 0);
    assert_eq!(run(&["baseline"], &out), 0);
    assert_eq!(run(&["evaluate"], &out), 0);
    assert_eq!(run(&["report"], &out), 0);
    let csv = std::fs::read_to_string(out.join("results.csv")).unwrap();
    assert!(csv.starts_with("method,budget,seeds,cost,infected_pct,stddev_pct\n"));
    assert_eq!(csv.lines().count(), 1 + 6 * 2);

    // A different master seed invalidates every downstream fingerprint.
    let code = bin()
        .arg("--config")
        .arg(smoke_config())
        .arg("--out")
        .arg(&out)
        .args(["--seed", "99", "evaluate"])
        .output()
        .unwrap()
        .status
        .code();
    assert_eq!(code, Some(3));

    std::fs::write(out.join("corpus.bin"), b"tampered").unwrap();
    assert_eq!(run(&["train"], &out), 3);
    std::fs::remove_file(out.join("graph.bin")).unwrap();
    assert_eq!(run(&["gen-data"], &out), 3);
}
