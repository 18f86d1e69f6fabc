mod common;

use std::fs;
use std::path::Path;
use std::process::Command;

use qdtile::TileCatalog;

fn qdtile(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_qdtile")).args(args).output().unwrap()
}

fn write_checkpoint(dir: &Path) -> String {
    let catalog = TileCatalog::representative();
    let p = dir.join("ck.bin");
    common::checkpoint(&catalog).save(&p).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn generate_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let ck = write_checkpoint(dir.path());
    let mut outs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let o = qdtile(&[
            "generate",
            "--checkpoint",
            &ck,
            "--prompt",
            "high number of parks",
            "--seed",
            "7",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        outs.push(out);
    }
    let mut files = vec!["result.json", "coarse.txt", "layout.svg", "layout.ppm"];
    if outs[0].join("layout.txt").exists() {
        files.push("layout.txt");
    }
    for f in files {
        let a = fs::read(outs[0].join(f)).unwrap();
        let b = fs::read(outs[1].join(f)).unwrap();
        assert_eq!(a, b, "{f} differs");
    }
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(outs[0].join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "generate");
    assert_eq!(manifest["seed"], 7);
    assert!(manifest["hashes"]["checkpoint"].is_string());
}

#[test]
fn usage_errors_exit_2() {
    let o = qdtile(&["generate"]);
    assert_eq!(o.status.code(), Some(2));
    let o = qdtile(&["no-such-command"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_prompt_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let ck = write_checkpoint(dir.path());
    let out = dir.path().join("o");
    let o = qdtile(&["generate", "--checkpoint", &ck, "--prompt", "purple parks", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("purple"));
}

#[test]
fn foreign_checkpoint_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let ck = write_checkpoint(dir.path());
    let mut bytes = fs::read(&ck).unwrap();
    let text = String::from_utf8_lossy(&bytes[..bytes.iter().position(|&b| b == b'\n').unwrap()]).to_string();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let old = v["catalog_hash"].as_str().unwrap().to_string();
    let new: String = old.chars().map(|c| if c == '0' { '1' } else { '0' }).collect();
    let patched = text.replace(&old, &new);
    bytes.splice(..text.len(), patched.into_bytes());
    fs::write(&ck, bytes).unwrap();
    let out = dir.path().join("o");
    let o = qdtile(&["generate", "--checkpoint", &ck, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn synth_build_train_sweep_compare() {
    let dir = tempfile::tempdir().unwrap();
    let d = |s: &str| dir.path().join(s).to_str().unwrap().to_string();
    let cfg = d("config.json");
    fs::write(
        &cfg,
        r#"{
  "synthesis": {"count": 60, "map_elites": {"init_count": 20, "iterations": 4, "batch_size": 10}},
  "baseline": {"count": 60},
  "model": "micro",
  "train": {"steps": 3, "warmup": 1, "eval_every": 2}
}"#,
    )
    .unwrap();
    let run = |args: &[&str]| {
        let o = qdtile(args);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    };
    run(&["synth-qd", "--config", &cfg, "--seed", "1", "--out", &d("qd")]);
    run(&["synth-sample", "--config", &cfg, "--seed", "2", "--out", &d("wfc")]);
    let qd_in = format!("qd={}", d("qd/designs.jsonl"));
    let wfc_in = format!("wfc={}", d("wfc/designs.jsonl"));
    run(&["report-dist", "--config", &cfg, "--input", &qd_in, "--input", &wfc_in, "--out", &d("dist")]);
    assert!(fs::read_to_string(d("dist/distribution.txt")).unwrap().contains("gini"));
    run(&["build-dataset", "--config", &cfg, "--input", &qd_in, "--input", &wfc_in, "--out", &d("ds")]);
    for f in ["schema.json", "qd.jsonl", "qd.meta.json", "wfc.jsonl", "wfc.meta.json", "manifest.json"] {
        assert!(dir.path().join("ds").join(f).exists(), "{f}");
    }
    run(&["train", "--config", &cfg, "--dataset", &d("ds/qd.jsonl"), "--out", &d("tq")]);
    run(&["train", "--config", &cfg, "--dataset", &d("ds/wfc.jsonl"), "--out", &d("tw")]);
    let loss = fs::read_to_string(d("tq/loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 4);
    run(&["sweep", "--config", &cfg, "--checkpoint", &d("tq/checkpoint.bin"), "--n", "1", "--out", &d("sq")]);
    run(&["sweep", "--config", &cfg, "--checkpoint", &d("tw/checkpoint.bin"), "--n", "1", "--out", &d("sw")]);
    assert_eq!(fs::read_to_string(d("sq/raw.jsonl")).unwrap().lines().count(), 243);
    run(&["compare", "--a", &d("sq/report.json"), "--b", &d("sw/report.json"), "--out", &d("cmp")]);
    assert_eq!(fs::read_to_string(d("cmp/comparison.csv")).unwrap().lines().count(), 17);

    let layout = fs::read_to_string(d("qd/designs.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(layout.lines().next().unwrap()).unwrap();
    let base: qdtile::Layout = serde_json::from_value(first["layout"].clone()).unwrap();
    fs::write(d("base.txt"), base.to_text()).unwrap();
    run(&[
        "regen",
        "--config",
        &cfg,
        "--checkpoint",
        &d("tq/checkpoint.bin"),
        "--base",
        &d("base.txt"),
        "--region",
        "2,2,2,2",
        "--restarts",
        "5",
        "--out",
        &d("rg"),
    ]);
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(d("rg/result.json")).unwrap()).unwrap();
    assert!(r["seam"].is_array() || r["seam"].is_null() || r["seam"].is_object());
}
