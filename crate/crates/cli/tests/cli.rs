use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use uavm::checkpoint;
use uavm::data::archive;
use uavm::probes::ProbeReport;
use uavm::{ModelConfig, Uavm};

fn uavm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uavm"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = uavm(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tiny_synth() -> Value {
    json!({
        "num_classes": 3, "samples_per_class": 4, "eval_per_class": 4,
        "seq_len": 6, "feature_dim": 8, "latent_dim": 4, "event_span": 2
    })
}

fn tiny_model() -> Value {
    json!({
        "num_modal_layers": 1, "num_shared_layers": 2, "total_layers": 3,
        "modal_dim": 8, "shared_dim": 8, "num_heads": 2,
        "seq_len": 6, "feature_dim": 8, "num_classes": 3
    })
}

fn write_experiment(dir: &Path, epochs: usize, seeds: &[u64]) -> PathBuf {
    let cfg = json!({
        "model": tiny_model(),
        "train": { "epochs": epochs, "batch_size": 4 },
        "data": { "synth": tiny_synth() },
        "out_dir": s(&dir.join("runs")),
        "seeds": seeds,
    });
    let path = dir.join("exp.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    path
}

#[test]
fn generate_round_trips_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["generate", "--seed", "4", "--out", s(&a)]);
    ok(&["generate", "--seed", "4", "--out", s(&b)]);
    for f in ["train.uavf", "eval.uavf"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
    }
    let train = archive::load_features(a.join("train.uavf"), None).unwrap();
    assert_eq!(train.len(), 400);
    assert!(a.join("manifest.csv").exists() && a.join("synth_spec.json").exists());

    let c = tmp.path().join("c");
    ok(&["generate", "--seed", "1", "--seed", "2", "--out", s(&c)]);
    assert!(c.join("seed-1/train.uavf").exists() && c.join("seed-2/eval.uavf").exists());
}

#[test]
fn generate_rejects_zero_classes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = uavm(&["generate", "--set", "num_classes=0", "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("num_classes"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(uavm(&["train", "--bogus"]).status.code(), Some(1));
    assert_eq!(uavm(&["probe", "--probe", "modality"]).status.code(), Some(1));
    assert_eq!(uavm(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_input_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = uavm(&[
        "infer",
        "--checkpoint",
        s(&tmp.path().join("none.uavc")),
        "--data",
        s(&tmp.path().join("none.uavf")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn zero_epochs_saves_the_initialization() {
    let tmp = tempfile::tempdir().unwrap();
    let exp = write_experiment(tmp.path(), 0, &[5]);
    ok(&["train", "--config", s(&exp)]);
    let saved = std::fs::read(tmp.path().join("runs/seed-5/checkpoint.uavc")).unwrap();
    let cfg: ModelConfig = serde_json::from_value(tiny_model()).unwrap();
    let init = checkpoint::encode(&Uavm::new(cfg, 5).unwrap()).unwrap();
    assert_eq!(saved, init);

    let resolved: Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("runs/experiment.json")).unwrap()).unwrap();
    assert_eq!(resolved["seeds"], json!([5]));
    assert_eq!(resolved["model"]["modal_dim"], json!(8));
    let run: Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("runs/seed-5/run.json")).unwrap()).unwrap();
    assert_eq!(run["checkpoint_format"], json!(checkpoint::VERSION));
}

#[test]
fn retraining_reproduces_the_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let exp = write_experiment(tmp.path(), 2, &[1]);
    let ids: Vec<Value> = ["r1", "r2"]
        .iter()
        .map(|d| {
            let out = tmp.path().join(d);
            ok(&["train", "--config", s(&exp), "--out", s(&out)]);
            serde_json::from_str::<Value>(&std::fs::read_to_string(out.join("seed-1/run.json")).unwrap()).unwrap()
                ["checkpoint_id"]
                .clone()
        })
        .collect();
    assert_eq!(ids[0], ids[1]);
    // The iteration log carries the seed on every row.
    let csv = std::fs::read_to_string(tmp.path().join("r1/seed-1/iterations.csv")).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.starts_with("1,")));
}

#[test]
fn shared_dim_sweep_writes_one_directory_per_value() {
    let tmp = tempfile::tempdir().unwrap();
    let exp = write_experiment(tmp.path(), 1, &[0, 1]);
    let out = tmp.path().join("sweep");
    ok(&["train", "--config", s(&exp), "--out", s(&out), "--sweep", "s_dim=16,64,256"]);
    for v in [16, 64, 256] {
        let dir = out.join(format!("s_dim={v}"));
        let cfg: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("experiment.json")).unwrap()).unwrap();
        assert_eq!(cfg["model"]["shared_dim"], json!(v));
        assert!(dir.join("seed-0/checkpoint.uavc").exists() && dir.join("seed-1/checkpoint.uavc").exists());
    }
    let mut r = csv::Reader::from_path(out.join("summary.csv")).unwrap();
    assert_eq!(r.records().count(), 6);
    let stats = std::fs::read_to_string(out.join("summary_stats.csv")).unwrap();
    assert!(stats.lines().any(|l| l.starts_with("s_dim=256,fused_acc,")));
}

#[test]
fn bad_sweep_fails_before_training() {
    let tmp = tempfile::tempdir().unwrap();
    let exp = write_experiment(tmp.path(), 1, &[0]);
    let out = tmp.path().join("sweep");
    let res = uavm(&["train", "--config", s(&exp), "--out", s(&out), "--sweep", "n_s=1,9"]);
    assert_eq!(res.status.code(), Some(1));
    assert!(!out.join("n_s=1").exists());
}

struct Trained {
    _tmp: tempfile::TempDir,
    dir: PathBuf,
    checkpoint: PathBuf,
    eval: PathBuf,
}

fn trained() -> Trained {
    let tmp = tempfile::tempdir().unwrap();
    let exp = write_experiment(tmp.path(), 2, &[0]);
    ok(&["train", "--config", s(&exp)]);
    let data = tmp.path().join("data");
    let mut synth = tiny_synth();
    synth["seed"] = json!(0);
    let spec_path = tmp.path().join("spec.json");
    std::fs::write(&spec_path, synth.to_string()).unwrap();
    ok(&["generate", "--config", s(&spec_path), "--out", s(&data)]);
    Trained {
        dir: tmp.path().to_path_buf(),
        checkpoint: tmp.path().join("runs/seed-0/checkpoint.uavc"),
        eval: data.join("eval.uavf"),
        _tmp: tmp,
    }
}

fn report(dir: &Path, name: &str) -> ProbeReport {
    let text = std::fs::read_to_string(dir.join(format!("probe_{name}.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn probe_reports() {
    let t = trained();
    let out = t.dir.join("probes");
    let base = ["probe", "--checkpoint", s(&t.checkpoint), "--data", s(&t.eval), "--out", s(&out)];

    ok(&[&base[..], &["--probe", "modality", "--layer", "all"]].concat());
    let r = report(&out, "modality");
    r.validate(3).unwrap();
    let layers: Vec<_> = r.results.iter().map(|x| x.layer.unwrap()).collect();
    assert_eq!(layers, vec![0, 1, 2, 3]);

    ok(&[&base[..], &["--probe", "retrieval", "--k", "1,5,10"]].concat());
    let r = report(&out, "retrieval");
    r.validate(3).unwrap();
    assert_eq!(r.results.len(), 6);

    ok(&[&base[..], &["--probe", "heatmap", "--layer", "3"]].concat());
    assert!(out.join("heatmap_layer3.csv").exists());
    report(&out, "heatmap").validate(3).unwrap();

    ok(&[&base[..], &["--probe", "attention"]].concat());
    report(&out, "attention").validate(3).unwrap();

    let bad = uavm(&[&base[..], &["--probe", "modality", "--layer", "9"]].concat());
    assert_eq!(bad.status.code(), Some(1));
    let bad = uavm(&[&base[..], &["--probe", "nonsense"]].concat());
    assert_eq!(bad.status.code(), Some(1));
}

fn infer(t: &Trained, flags: &[&str]) -> Value {
    let out = t.dir.join("pred.json");
    ok(&[
        &["infer", "--checkpoint", s(&t.checkpoint), "--data", s(&t.eval), "--out", s(&out)][..],
        flags,
    ]
    .concat());
    serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap()
}

fn scores(v: &Value, i: usize) -> Vec<f64> {
    serde_json::from_value(v["predictions"][i]["scores"].clone()).unwrap()
}

#[test]
fn infer_matches_the_library() {
    let t = trained();
    let both = uavm(&["infer", "--checkpoint", s(&t.checkpoint), "--data", s(&t.eval), "--drop-audio", "--drop-video"]);
    assert_ne!(both.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&both.stderr).contains("at least one modality"));

    let (model, _) = checkpoint::load(&t.checkpoint).unwrap();
    let data = archive::load_features(&t.eval, None).unwrap();
    let audio_only = infer(&t, &["--drop-video"]);
    let video_only = infer(&t, &["--drop-audio"]);
    let fused = infer(&t, &[]);
    assert_eq!(audio_only["modalities"], json!(["audio"]));
    for (i, sample) in data.samples.iter().enumerate() {
        // JSON floats round-trip exactly.
        assert_eq!(scores(&audio_only, i), model.forward_single(&sample.audio, false).unwrap().0);
        assert_eq!(scores(&video_only, i), model.forward_single(&sample.video, false).unwrap().0);
        let want = uavm::fuse_predictions(&scores(&audio_only, i), &scores(&video_only, i)).unwrap();
        assert_eq!(scores(&fused, i), want);
    }
}
