use std::process::{Command, Output};

fn run(args: &[&str], threads: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pir-sim"))
        .args(args)
        .env("PIR_SIM_THREADS", threads)
        .output()
        .unwrap()
}

#[test]
fn rate_subcommand() {
    let out = run(
        &[
            "rate",
            "--theorem",
            "1",
            "--P",
            "1",
            "--sigma-y2",
            "0.01",
            "--sigma-w2",
            "1",
        ],
        "1",
    );
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["report"]["rate_nats"].as_f64().unwrap() - 1.4585).abs() < 5e-5);
    assert_eq!(v["report"]["binding_branch"], serde_json::json!({"eavesdropper": 0}));
}

#[test]
fn partition_subcommand_reports_both() {
    let out = run(
        &[
            "partition",
            "--h",
            "1,1,2",
            "--g",
            "1,-1,0.5",
            "--sigma-y2",
            "1",
            "--sigma-w2",
            "1",
        ],
        "1",
    );
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["greedy"]["rate_nats"].as_f64().unwrap() <= v["brute_force"]["rate_nats"].as_f64().unwrap());
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["frobnicate"], "1").status.code(), Some(1));
    let out = run(&[], "1");
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(
        run(&["rate", "--sigma-y2", "0", "--sigma-w2", "1"], "1").status.code(),
        Some(1)
    );
    assert_eq!(run(&["--help"], "1").status.code(), Some(0));
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    assert_eq!(
        run(&["simulate", "--config", missing.to_str().unwrap()], "1")
            .status
            .code(),
        Some(2)
    );
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"servers\": 1}").unwrap();
    assert_eq!(
        run(&["simulate", "--config", bad.to_str().unwrap()], "1").status.code(),
        Some(1)
    );
    let unwritable = dir.path().join("no_such_dir").join("x.csv");
    let code = run(
        &[
            "sweep",
            "--n",
            "2..3",
            "--sigma-w",
            "1",
            "--draws",
            "2",
            "--out",
            unwritable.to_str().unwrap(),
        ],
        "1",
    );
    assert_eq!(code.status.code(), Some(2));
}

#[test]
fn simulate_is_byte_identical_across_runs_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    let mut c = pir_sim::harness::ScenarioConfig::desk();
    c.sigma_y2 = 0.02;
    c.servers = 3;
    std::fs::write(&cfg, serde_json::to_string(&c).unwrap()).unwrap();
    let args = [
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--trials",
        "1000",
        "--seed",
        "7",
    ];
    let a = run(&args, "1");
    let b = run(&args, "1");
    let c4 = run(&args, "4");
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(a.stdout, c4.stdout);
}

#[test]
fn sweep_csv_shape() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fig2.csv");
    let o = run(
        &[
            "sweep",
            "--n",
            "2..16",
            "--sigma-w",
            "0.5,1,2",
            "--draws",
            "3",
            "--out",
            out.to_str().unwrap(),
        ],
        "2",
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "N,sigma_w,mean_rate,ci_low,ci_high");
    assert_eq!(lines.len(), 1 + 15 * 3);
}
