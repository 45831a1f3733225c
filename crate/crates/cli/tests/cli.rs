use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ecgrhythm"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn ecgrhythm")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Nonzero exit and a single JSON error line on stderr.
fn fails(args: &[&str]) -> serde_json::Value {
    let out = run(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let stderr = String::from_utf8(out.stderr).unwrap();
    let lines: Vec<&str> = stderr.lines().filter(|l| l.starts_with('{')).collect();
    assert_eq!(lines.len(), 1, "stderr: {stderr}");
    let v: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
    assert!(v["error"].is_string() && v["message"].is_string());
    v
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_preprocess_train_eval_predict_plot() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    let prep = dir.path().join("prep");
    let out = dir.path().join("run");
    ok(&["synth", "--out", s(&store), "--n", "25", "--seed", "3"]);
    let summary: serde_json::Value = serde_json::from_str(ok(&["preprocess", "--in", s(&store), "--out", s(&prep)]).trim()).unwrap();
    assert_eq!(summary["chunks"], 25);

    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"batch_size": 10, "max_epochs_per_stage": 1, "classifier_epochs": 1, "stage1_loss_threshold": 1e-9, "seed": 1}"#,
    )
    .unwrap();
    let stdout = ok(&["train", "--data", s(&prep), "--config", s(&cfg), "--out", s(&out), "--folds", "0"]);
    let line: serde_json::Value = serde_json::from_str(stdout.lines().next().unwrap()).unwrap();
    assert_eq!(line["fold"], 0);
    for f in ["fold_0.json", "table_fold_0.csv", "model_fold_0.ecgm"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let model = out.join("model_fold_0.ecgm");

    let table = ok(&["eval", "--model", s(&model), "--data", s(&store)]);
    assert!(table.starts_with("Type,#PP/Tot,Sensitivity,Precision"));
    assert_eq!(table.lines().count(), 7);

    let blob = std::fs::read_dir(store.join("VT")).unwrap().filter_map(|e| e.ok()).map(|e| e.path()).find(|p| p.extension().is_some_and(|x| x == "f32")).unwrap();
    let resp: serde_json::Value = serde_json::from_str(ok(&["predict", "--model", s(&model), "--input", s(&blob)]).trim()).unwrap();
    let probs: Vec<f64> = serde_json::from_value(resp["probs"].clone()).unwrap();
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    assert_eq!(resp["frames"], 509);

    let svg = dir.path().join("curves.svg");
    ok(&["plot", "--reports", s(&out), "--out", s(&svg)]);
    assert!(std::fs::read_to_string(&svg).unwrap().starts_with("<svg"));
}

#[test]
fn preprocess_reads_records_with_text_annotations() {
    let dir = tempfile::tempdir().unwrap();
    let records = dir.path().join("records");
    std::fs::create_dir(&records).unwrap();
    let (fs, secs) = (250usize, 40usize);
    let n = fs * secs;
    std::fs::write(
        records.join("r1.hea"),
        format!("r1 2 {fs} {n}\nr1.dat 16 200 16 0 0 0 0 MLII\nr1.dat 16 200 16 0 0 0 0 V1\n"),
    )
    .unwrap();
    let mut bytes = Vec::with_capacity(4 * n);
    for i in 0..n {
        let v = (100.0 * (2.0 * std::f64::consts::PI * 1.2 * i as f64 / fs as f64).sin()) as i16;
        bytes.extend_from_slice(&v.to_le_bytes());
        bytes.extend_from_slice(&(v / 2).to_le_bytes());
    }
    std::fs::write(records.join("r1.dat"), bytes).unwrap();
    std::fs::write(records.join("r1.txt"), "# rhythm changes\n0:00.000 0 (N\n0:20.000 5000 (VT\n").unwrap();
    let out = dir.path().join("prep");
    let summary: serde_json::Value =
        serde_json::from_str(ok(&["preprocess", "--in", s(&records), "--out", s(&out)]).trim()).unwrap();
    assert_eq!(summary["chunks"], 2);
    assert_eq!(summary["per_class"]["Sinus"], 1);
    assert_eq!(summary["per_class"]["VT"], 1);
    assert!(out.join("spectrograms/VT").is_dir());
}

#[test]
fn failures_print_one_json_line() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.ecgm");
    let v = fails(&["predict", "--model", s(&missing), "--input", s(&missing)]);
    assert_eq!(v["error"], "io");

    let bad_cfg = dir.path().join("bad.json");
    std::fs::write(&bad_cfg, r#"{"batch_size": 0}"#).unwrap();
    fails(&["train", "--data", s(dir.path()), "--config", s(&bad_cfg), "--out", s(dir.path())]);
    fails(&["eval", "--model", s(&missing), "--data", s(dir.path())]);
    fails(&["plot", "--reports", s(dir.path()), "--out", s(&dir.path().join("x.svg"))]);
    fails(&["preprocess", "--in", s(dir.path()), "--out", s(&dir.path().join("o"))]);
    fails(&["serve", "--model", s(&missing), "--bind", "127.0.0.1:0"]);

    let store = dir.path().join("store");
    ok(&["synth", "--out", s(&store), "--n", "5"]);
    let short = dir.path().join("short.json");
    std::fs::write(&short, r#"{"samples": [0.0, 0.0], "fs_hz": 250.0}"#).unwrap();
    let model = dir.path().join("m.ecgm");
    std::fs::write(&model, b"ECGM").unwrap();
    fails(&["predict", "--model", s(&model), "--input", s(&short)]);
}

fn http_get(port: u16, path: &str) -> Option<String> {
    let mut stream = TcpStream::connect(("127.0.0.1", port)).ok()?;
    stream.set_read_timeout(Some(Duration::from_secs(5))).ok()?;
    write!(stream, "GET {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n").ok()?;
    let mut body = String::new();
    stream.read_to_string(&mut body).ok()?;
    Some(body)
}

#[test]
fn serve_answers_health_with_model_hash() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    let out = dir.path().join("run");
    ok(&["synth", "--out", s(&store), "--n", "25"]);
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"batch_size": 25, "max_epochs_per_stage": 1, "classifier_epochs": 1}"#).unwrap();
    let stdout = ok(&["train", "--data", s(&store), "--config", s(&cfg), "--out", s(&out), "--folds", "1"]);
    let line: serde_json::Value = serde_json::from_str(stdout.lines().next().unwrap()).unwrap();
    let hash = line["model_hash"].as_str().unwrap().to_string();

    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut child = bin()
        .args(["serve", "--bind", &format!("127.0.0.1:{port}")])
        .env("ECGRHYTHM_MODEL", out.join("model_fold_1.ecgm"))
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(30);
    let response = loop {
        if let Some(r) = http_get(port, "/v1/health") {
            break r;
        }
        assert!(Instant::now() < deadline, "server did not come up");
        std::thread::sleep(Duration::from_millis(100));
    };
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(response.starts_with("HTTP/1.1 200"), "{response}");
    let body = response.split("\r\n\r\n").nth(1).unwrap();
    let health: serde_json::Value = serde_json::from_str(body).unwrap();
    assert_eq!(health["status"], "ok");
    assert_eq!(health["model_hash"], hash);
}
