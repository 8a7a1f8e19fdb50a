use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fpscm::io::{read_bundle, read_json, write_bundle, Manifest};
use fpscm::synth::{generate_dataset, GraphFamily, Preset};
use fpscm::to::ToTrainState;
use tempfile::TempDir;

fn fpscm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fpscm")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = fpscm(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(args: &[&str]) -> i32 {
    fpscm(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path, seed: &str) -> PathBuf {
    ok(&[
        "gen-data", "--out", s(dir), "--seed", seed, "--preset", "LIN-IN", "--dims", "4", "--count", "2", "--samples", "200",
    ]);
    dir.join("manifest.json")
}

fn chain_bundle(dir: &Path) -> PathBuf {
    let mut spec = Preset::by_name("LIN-IN").unwrap().spec(3, 0);
    spec.graph = GraphFamily::Chain;
    let ds = generate_dataset(&spec, 2000, 11, false).unwrap();
    let path = dir.join("chain");
    write_bundle(&path, &ds).unwrap();
    path
}

#[test]
fn gen_data_writes_loadable_bundles() {
    let tmp = TempDir::new().unwrap();
    let manifest_path = gen(tmp.path(), "3");
    let manifest: Manifest = read_json(&manifest_path).unwrap();
    let all = manifest.load_all(&manifest_path).unwrap();
    assert_eq!(all.len(), manifest.entries.len());
    assert!(!all.is_empty());
    for ds in &all {
        assert_eq!(ds.d(), 4);
        assert_eq!(ds.n(), 200);
        assert!(ds.truth().is_ok());
    }
    assert!(tmp.path().join("config.ini").exists());
}

#[test]
fn gen_data_same_seed_same_manifest() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let ma = std::fs::read(gen(a.path(), "9")).unwrap();
    let mb = std::fs::read(gen(b.path(), "9")).unwrap();
    assert_eq!(ma, mb);
}

#[test]
fn unknown_preset_is_usage_error() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(&["gen-data", "--out", s(tmp.path()), "--preset", "CUBIC-IN"]), 2);
}

#[test]
fn unknown_config_key_is_usage_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("bad.ini");
    std::fs::write(&cfg, "[gen-data]\nwidth = 3\n").unwrap();
    assert_eq!(code(&["gen-data", "--out", s(tmp.path()), "--config", s(&cfg)]), 2);
}

#[test]
fn train_to_saves_and_resumes() {
    let tmp = TempDir::new().unwrap();
    let manifest = gen(&tmp.path().join("data"), "4");
    let out = tmp.path().join("to");
    let small = tmp.path().join("small.ini");
    std::fs::write(&small, "[to-encoder]\nembed_dim = 8\nheads = 2\nmlp_hidden = 16\n[to-train]\nbatch = 2\n").unwrap();
    let base = ["train-to", "--manifest", s(&manifest), "--out", s(&out), "--config", s(&small)];
    ok(&[&base[..], &["--epochs", "1"]].concat());
    let first = ToTrainState::load(&out.join("to.ckpt")).unwrap();
    assert_eq!(first.epochs_done(), 1);
    ok(&[&base[..], &["--epochs", "2", "--resume"]].concat());
    let resumed = ToTrainState::load(&out.join("to.ckpt")).unwrap();
    assert_eq!(resumed.epochs_done(), 2);
    assert_eq!(resumed.curve[0], first.curve[0]);
    assert!(out.join("metrics.json").exists());
    assert!(out.join("train_tos.csv").exists());

    let fresh = tmp.path().join("fresh");
    ok(&["train-to", "--manifest", s(&manifest), "--out", s(&fresh), "--config", s(&small), "--epochs", "2"]);
    let straight = ToTrainState::load(&fresh.join("to.ckpt")).unwrap();
    assert_eq!(straight.curve, resumed.curve);

    let bad = tmp.path().join("bad.ckpt");
    let mut bytes = std::fs::read(out.join("to.ckpt")).unwrap();
    bytes[0] ^= 0xff;
    std::fs::write(&bad, bytes).unwrap();
    let ds = manifest.parent().unwrap().join(&read_json::<Manifest>(&manifest).unwrap().entries[0].path);
    let fip_out = tmp.path().join("fip");
    let args = ["train-fip", "--dataset", s(&ds), "--out", s(&fip_out), "--to-source", "ckpt", "--to-path", s(&bad), "--epochs", "1"];
    assert_eq!(code(&args), 3);
}

#[test]
fn train_fip_recovers_chain() {
    let tmp = TempDir::new().unwrap();
    let ds = chain_bundle(tmp.path());
    let out = tmp.path().join("fip");
    ok(&["train-fip", "--dataset", s(&ds), "--out", s(&out), "--seed", "1"]);
    let report: serde_json::Value = read_json(&out.join("report.json")).unwrap();
    assert_eq!(report["ordering_tos"], 1.0);
    assert_eq!(report["graph_f1"], 1.0, "report: {report}");

    let perm = tmp.path().join("perm.json");
    let truth = read_bundle(&ds).unwrap().truth.unwrap().order;
    std::fs::write(&perm, serde_json::to_string(truth.map()).unwrap()).unwrap();
    let out2 = tmp.path().join("fip2");
    ok(&["train-fip", "--dataset", s(&ds), "--out", s(&out2), "--seed", "1", "--to-source", "file-perm", "--to-path", s(&perm)]);
    assert_eq!(std::fs::read(out.join("fip.ckpt")).unwrap(), std::fs::read(out2.join("fip.ckpt")).unwrap());

    let missing = tmp.path().join("nope.ckpt");
    assert_eq!(code(&["train-fip", "--dataset", s(&ds), "--out", s(&out2), "--to-source", "ckpt", "--to-path", s(&missing)]), 3);
    assert_eq!(code(&["train-fip", "--dataset", s(&ds), "--out", s(&out2), "--to-source", "ckpt"]), 2);
}

#[test]
fn eval_tasks_and_failures() {
    let tmp = TempDir::new().unwrap();
    let ds = chain_bundle(tmp.path());
    let fip = tmp.path().join("fip");
    ok(&["train-fip", "--dataset", s(&ds), "--out", s(&fip), "--epochs", "10"]);
    let ckpt = fip.join("fip.ckpt");
    let out = tmp.path().join("eval");
    ok(&["eval", "--ckpt", s(&ckpt), "--dataset", s(&ds), "--out", s(&out), "--tasks", "graph,counterfactual,generation"]);
    for task in ["graph", "counterfactual", "generation"] {
        assert!(out.join(format!("{task}.json")).exists());
        assert!(out.join(format!("{task}.csv")).exists());
    }
    let cf: serde_json::Value = read_json(&out.join("counterfactual.json")).unwrap();
    assert!(cf["mean"].as_f64().unwrap().is_finite());

    let mut stripped = read_bundle(&ds).unwrap();
    stripped.truth.as_mut().unwrap().scm = None;
    let no_sim = tmp.path().join("nosim");
    write_bundle(&no_sim, &stripped).unwrap();
    let out = fpscm(&["eval", "--ckpt", s(&ckpt), "--dataset", s(&no_sim), "--out", s(&tmp.path().join("e2")), "--tasks", "counterfactual"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("truth.scm"));

    assert_eq!(code(&["eval", "--ckpt", s(&ckpt), "--dataset", s(&ds), "--out", s(&tmp.path().join("e3")), "--tasks", ""]), 2);
    assert_eq!(code(&["eval", "--ckpt", s(&ckpt), "--dataset", s(&ds), "--out", s(&tmp.path().join("e3")), "--tasks", "magic"]), 2);
}
