use std::path::PathBuf;
use std::process::Command;

fn repo() -> PathBuf {
    [env!("CARGO_MANIFEST_DIR"), "..", ".."].iter().collect()
}

fn orbit5gc(args: &[&str], seed_env: Option<&str>) -> (i32, String) {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_orbit5gc"));
    cmd.args(args)
        .current_dir(repo())
        .env_remove("ORBIT5GC_SEED");
    if let Some(s) = seed_env {
        cmd.env("ORBIT5GC_SEED", s);
    }
    let out = cmd.output().unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8_lossy(&out.stdout).into_owned(),
    )
}

fn hash_line(stdout: &str) -> String {
    stdout
        .lines()
        .find(|l| l.starts_with("trace hash"))
        .unwrap()
        .to_string()
}

#[test]
fn healthy_run_exits_zero() {
    let (code, out) = orbit5gc(&["run", "scenarios/tiebreak.toml"], None);
    assert_eq!(code, 0, "{out}");
    assert!(out.contains("violations 0"));
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "seed = 1\nduration_s = -1.0\n[links.access]\none_way_delay_us = 0\nuplink_bps = 0\ndownlink_bps = 0\n").unwrap();
    assert_eq!(orbit5gc(&["run", bad.to_str().unwrap()], None).0, 2);
    assert_eq!(orbit5gc(&["run", "scenarios/missing.toml"], None).0, 2);
    assert_eq!(
        orbit5gc(&["run", "scenarios/idle.toml"], Some("not-a-number")).0,
        2
    );
    assert_eq!(orbit5gc(&["verify", "nowhere.jsonl"], None).0, 2);
    assert_eq!(
        orbit5gc(
            &[
                "compare-latency",
                "--path-km",
                "100",
                "--altitude-km",
                "550",
                "--elevation-deg",
                "0"
            ],
            None
        )
        .0,
        2
    );
    assert_eq!(orbit5gc(&["no-such-command"], None).0, 2);
}

#[test]
fn seed_precedence() {
    let (_, file_seed) = orbit5gc(&["run", "scenarios/sat200ms.toml"], None);
    let (_, env_seed) = orbit5gc(&["run", "scenarios/sat200ms.toml"], Some("7"));
    let (_, flag_seed) = orbit5gc(
        &["run", "scenarios/sat200ms.toml", "--seed", "7"],
        Some("8"),
    );
    assert!(file_seed.starts_with("scenario sat200ms seed 200"));
    assert!(env_seed.starts_with("scenario sat200ms seed 7"));
    assert!(flag_seed.starts_with("scenario sat200ms seed 7"));
    assert_eq!(hash_line(&env_seed), hash_line(&flag_seed));
    assert_ne!(hash_line(&env_seed), hash_line(&file_seed));
}

#[test]
fn tampered_trace_exits_one_and_malformed_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let (code, _) = orbit5gc(
        &[
            "run",
            "scenarios/sat200ms.toml",
            "--out",
            out.to_str().unwrap(),
        ],
        None,
    );
    assert_eq!(code, 0);
    for f in ["trace.jsonl", "metrics.csv", "summary.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let trace = std::fs::read_to_string(out.join("trace.jsonl")).unwrap();
    let (code, _) = orbit5gc(&["verify", out.join("trace.jsonl").to_str().unwrap()], None);
    assert_eq!(code, 0);

    let tampered = trace.replacen(
        "\"delivered_ue\":{\"packets\":10",
        "\"delivered_ue\":{\"packets\":11",
        1,
    );
    assert_ne!(tampered, trace);
    let path = dir.path().join("tampered.jsonl");
    std::fs::write(&path, tampered).unwrap();
    let (code, stdout) = orbit5gc(&["verify", path.to_str().unwrap()], None);
    assert_eq!(code, 1, "{stdout}");
    assert!(stdout.contains("violation"));

    let path = dir.path().join("garbage.jsonl");
    std::fs::write(&path, "{\"t_us\": 0}\n").unwrap();
    assert_eq!(orbit5gc(&["verify", path.to_str().unwrap()], None).0, 2);
}

#[test]
fn codec_vectors_report_failures() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.tsv");
    std::fs::write(
        &path,
        "7e45\tRegistrationComplete{}\n7e45\tRegistrationAccept{}\n",
    )
    .unwrap();
    let (code, out) = orbit5gc(&["codec-vectors", path.to_str().unwrap()], None);
    assert_eq!(code, 1);
    assert!(out.contains("2 vectors, 1 failed"));
    assert_eq!(orbit5gc(&["codec-vectors", "vectors/nas.tsv"], None).0, 0);
}

#[test]
fn bench_handshake_prints_table() {
    let (code, out) = orbit5gc(
        &[
            "bench-handshake",
            "--delay-us",
            "0",
            "--proc-us",
            "0",
            "--bus-bps",
            "0",
        ],
        None,
    );
    assert_eq!(code, 0);
    assert!(out.contains("Number\tPacket Type\tElapsed Time(ms)\tLength(byte)"));
    assert!(out.contains("4\tProtected Payload\t0.00\t1504"));
}
