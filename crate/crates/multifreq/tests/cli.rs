use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_multifreq"));
    c.env_remove("MULTIFREQ_SEED").env("MULTIFREQ_THREADS", "1");
    c
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn run(args: &[&str], out: &Path) -> Output {
    bin().args(args).arg("--out").arg(out).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let o = bin().arg("frobnicate").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["retrieve"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error[usage]"), "{}", stderr(&o));
}

#[test]
fn invalid_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    let text = std::fs::read_to_string(configs().join("retrieve.toml"))
        .unwrap()
        .replace("reference = 0", "reference = 7");
    std::fs::write(&cfg, text).unwrap();
    let o = run(&["retrieve", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("frequencies.reference"), "{}", stderr(&o));
}

#[test]
fn missing_input_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("retrieve.toml");
    let o = run(
        &[
            "retrieve",
            "--config",
            cfg.to_str().unwrap(),
            "--input",
            "/nonexistent/m.csv",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn synthesize_retrieve_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("retrieve.toml");
    let cfg = cfg.to_str().unwrap();
    let syn = dir.path().join("syn");
    let o = run(&["synthesize", "--config", cfg], &syn);
    assert!(o.status.success(), "{}", stderr(&o));
    let measurements = syn.join("measurements.csv");
    assert!(measurements.exists());

    let ret = dir.path().join("ret");
    let o = run(
        &["retrieve", "--config", cfg, "--input", measurements.to_str().unwrap()],
        &ret,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    for f in [
        "estimates.csv",
        "currents.csv",
        "farfield.csv",
        "residuals_single.csv",
        "residuals_multi.csv",
        "record.json",
    ] {
        assert!(ret.join(f).exists(), "{f}");
    }

    // reading the file back gives the same result as synthesizing in memory
    let mem = dir.path().join("mem");
    assert!(run(&["retrieve", "--config", cfg], &mem).status.success());
    assert_eq!(
        std::fs::read(ret.join("estimates.csv")).unwrap(),
        std::fs::read(mem.join("estimates.csv")).unwrap()
    );

    let o = bin()
        .args(["report", "--input", ret.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("verified_metrics"));

    // a tampered metric is caught
    let path = ret.join("record.json");
    let mut rec: serde_json::Value = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
    rec["metrics"]["f0.nf_compl_db"] = serde_json::json!(-300.0);
    std::fs::write(&path, serde_json::to_vec(&rec).unwrap()).unwrap();
    let o = bin()
        .args(["report", "--input", ret.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(6), "{}", stderr(&o));
}

#[test]
fn seed_controls_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("retrieve.toml");
    let cfg = cfg.to_str().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    assert!(run(&["synthesize", "--config", cfg, "--seed", "5"], &a)
        .status
        .success());
    assert!(bin()
        .args(["synthesize", "--config", cfg, "--out", b.to_str().unwrap()])
        .env("MULTIFREQ_SEED", "5")
        .output()
        .unwrap()
        .status
        .success());
    assert!(run(&["synthesize", "--config", cfg, "--seed", "6"], &c)
        .status
        .success());
    let read = |d: &Path| std::fs::read(d.join("measurements.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
}
