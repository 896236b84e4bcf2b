use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use vecbarrier::nn::VectorBarrier;
use vecbarrier::systems::{builtin, BenchmarkId};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vecbarrier")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, v.to_string()).unwrap();
    p
}

fn example1_config(dir: &Path) -> PathBuf {
    write(dir, "ex1.json", &json!({"benchmark": "example1", "samples": {"initial": 40, "unsafe_set": 40, "workspace": 100}}))
}

/// Synthesizes an Example 1 certificate into `dir`.
fn example1_cert(dir: &Path) -> PathBuf {
    let cfg = example1_config(dir);
    let cert = dir.join("cert.json");
    let o = run(&["synth", "--config", cfg.to_str().unwrap(), "--out", cert.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    cert
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_writes_certificate_and_logs_flag() {
    let dir = tempfile::tempdir().unwrap();
    let cert = example1_cert(dir.path());
    assert!(cert.exists());

    let log = dir.path().join("ev.jsonl");
    let out = dir.path().join("c2.json");
    let o = run(&["synth", "--config", s(&example1_config(dir.path())), "--no-finetune", "--out", s(&out), "--log", s(&log)]);
    assert!(matches!(code(&o), 0 | 2));
    let first: Value = serde_json::from_str(std::fs::read_to_string(&log).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(first["finetune"], false);
}

#[test]
fn synth_usage_errors() {
    let o = run(&["synth", "--config", "/nonexistent/cfg.json", "--out", "x.json"]);
    assert_eq!(code(&o), 1);
    assert_eq!(code(&run(&["synth"])), 1);
    assert_eq!(code(&run(&["frobnicate"])), 1);
}

#[test]
fn verify_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cert = example1_cert(dir.path());
    let o = run(&["verify", "--cert", s(&cert)]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o).lines().filter(|l| l.contains("certified")).count(), 5);

    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(&cert).unwrap()).unwrap();
    v["barrier"]["C"] = json!([[0.0, 0.0], [0.0, 0.0]]);
    v["barrier"]["b"] = json!([0.0, 0.0]);
    let zeroed = write(dir.path(), "zeroed.json", &v);
    let o = run(&["verify", "--cert", s(&zeroed)]);
    assert_eq!(code(&o), 2);
    let line = stdout(&o).lines().find(|l| l.starts_with("unsafe")).unwrap().to_string();
    assert!(line.contains("falsified"), "{line}");

    assert_eq!(code(&run(&["verify", "--cert", "/nonexistent/cert.json"])), 1);
}

#[test]
fn finetune_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = example1_config(dir.path());
    let bm = builtin(BenchmarkId::Example1).unwrap();
    let mut bf = VectorBarrier::random(&bm.arch, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    bf.a_mat = bm.a_fixed.unwrap();
    let model = write(dir.path(), "model.json", &serde_json::to_value(&bf).unwrap());
    let out = dir.path().join("ft.json");

    let o = run(&["finetune", "--model", s(&model), "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert_eq!(code(&run(&["verify", "--cert", s(&out)])), 0);

    let x = json!([-1.2, -1.2]);
    let clash = write(dir.path(), "clash.json", &json!({"s0": [x], "su": [x], "sx": []}));
    let o = run(&["finetune", "--model", s(&model), "--config", s(&cfg), "--out", s(&out), "--samples", s(&clash)]);
    assert_eq!(code(&o), 3);

    let o = run(&["finetune", "--model", s(&model), "--config", s(&cfg), "--out", s(&out), "--max-iters", "0"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn simulate_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cert = example1_cert(dir.path());
    assert_eq!(code(&run(&["simulate", "--cert", s(&cert), "--n", "1000", "--steps", "200"])), 0);
    assert_eq!(code(&run(&["simulate", "--cert", s(&cert), "--n", "0"])), 0);

    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(&cert).unwrap()).unwrap();
    v["spec"]["unsafe"] = v["spec"]["initial"].clone();
    let bad = write(dir.path(), "overlap.json", &v);
    assert_eq!(code(&run(&["simulate", "--cert", s(&bad), "--n", "10"])), 2);
}

#[test]
fn plot_grid_and_dimension_check() {
    let dir = tempfile::tempdir().unwrap();
    let cert = example1_cert(dir.path());
    let csv = dir.path().join("g.csv");
    assert_eq!(code(&run(&["plot", "--cert", s(&cert), "--grid", "3", "--out", s(&csv)])), 0);
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "x1,x2,B1,B2");
    assert_eq!(lines.len(), 10);
    assert!(text.ends_with('\n'));

    // every grid point inside the initial set has all components <= 0
    let traj = dir.path().join("t.csv");
    let o = run(&["plot", "--cert", s(&cert), "--grid", "81", "--out", s(&csv), "--trajectories", s(&traj)]);
    assert_eq!(code(&o), 0);
    let bm = builtin(BenchmarkId::Example1).unwrap();
    let mut inside = 0;
    for l in std::fs::read_to_string(&csv).unwrap().lines().skip(1) {
        let f: Vec<f64> = l.split(',').map(|v| v.parse().unwrap()).collect();
        if bm.spec.initial.contains(&f[..2]).unwrap() {
            inside += 1;
            assert!(f[2..].iter().all(|b| *b <= 0.0));
        }
    }
    assert!(inside > 0);
    assert!(std::fs::read_to_string(&traj).unwrap().starts_with("traj,k,x1,x2\n"));

    let q = builtin(BenchmarkId::Quadrotor6d).unwrap();
    let bf = VectorBarrier::random(&q.arch, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let bundle = json!({"barrier": bf, "system": q.system.to_def(), "spec": q.spec});
    let p = write(dir.path(), "quad.json", &bundle);
    assert_eq!(code(&run(&["plot", "--cert", s(&p), "--grid", "3", "--out", s(&csv)])), 1);
}

#[test]
fn compare_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "cmp.json",
        &json!({"benchmark": "example1", "budget_seconds": 60.0, "samples": {"initial": 40, "unsafe_set": 40, "workspace": 100}}),
    );
    let out = dir.path().join("cmp.csv");
    assert_eq!(code(&run(&["compare", "--config", s(&cfg), "--seeds", "0,1", "--out", s(&out)])), 0);
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.starts_with("seed,method,status,seconds,outer_iters\n"));
}
