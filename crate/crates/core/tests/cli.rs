use std::path::Path;

use avword::cli::run;
use serde_json::json;

fn write_config(dir: &Path, vocab: usize) -> String {
    let cfg = json!({
        "dataset": {
            "root": dir.join("data"),
            "wordbank": {
                "vocab_size": vocab,
                "train_per_word": 2,
                "val_per_word": 1,
                "test_per_word": 2,
                "predictable_words": 2,
                "homophone_pairs": [],
                "context_words": 2
            },
            "noise_sources_per_category": 1,
            "noise_seconds": 1.5
        },
        "model": { "vocab_size": vocab },
        "train": { "batch_size": 4, "max_epochs": 1 }
    });
    let mut merged = serde_json::to_value(avword::cli::RunConfig::default()).unwrap();
    merge(&mut merged, cfg);
    let path = dir.join(format!("config_{vocab}.json"));
    std::fs::write(&path, merged.to_string()).unwrap();
    path.to_str().unwrap().to_string()
}

fn merge(base: &mut serde_json::Value, over: serde_json::Value) {
    match (base, over) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                merge(b.entry(k).or_insert(serde_json::Value::Null), v);
            }
        }
        (b, o) => *b = o,
    }
}

fn avword(args: &[&str]) -> i32 {
    run(std::iter::once("avword").chain(args.iter().copied()))
}

fn manifest_hash(root: &Path) -> String {
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(root.join("manifest.json")).unwrap()).unwrap();
    m["content_hash"].as_str().unwrap().to_string()
}

#[test]
fn gen_data_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 4);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    assert_eq!(avword(&["gen-data", "--config", &cfg, "--seed", "3", "--out", a.to_str().unwrap()]), 0);
    assert_eq!(avword(&["gen-data", "--config", &cfg, "--seed", "3", "--out", b.to_str().unwrap()]), 0);
    assert_eq!(avword(&["gen-data", "--config", &cfg, "--seed", "4", "--out", c.to_str().unwrap()]), 0);
    assert_eq!(manifest_hash(&a), manifest_hash(&b));
    assert_ne!(manifest_hash(&a), manifest_hash(&c));
    for d in [&a, &b] {
        assert!(d.join("noise_sets").join("snr_clean.json").exists());
        assert!(!d.join(".avword.lock").exists());
        let v = std::fs::read_to_string(d.join("version.txt")).unwrap();
        assert!(v.starts_with('v'));
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    let bad = write_config(dir.path(), 1);
    assert_eq!(avword(&["gen-data", "--config", &bad, "--out", out]), 2);

    let unknown = dir.path().join("unknown.json");
    std::fs::write(&unknown, r#"{"modle": {}}"#).unwrap();
    assert_eq!(avword(&["train", "--config", unknown.to_str().unwrap(), "--out", out]), 2);
    assert_eq!(avword(&["train", "--mode", "sometimes", "--out", out]), 2);
    assert_eq!(avword(&["eval", "--snr", "7", "--out", out]), 2);
    assert_eq!(avword(&["no-such-command"]), 2);

    let cfg = write_config(dir.path(), 4);
    let data = dir.path().join("data");
    assert_eq!(avword(&["gen-data", "--config", &cfg]), 0);
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(data.join("manifest.json")).unwrap()).unwrap();
    let wav = data.join(m["samples"][0]["path"].as_str().unwrap()).join("audio.wav");
    let mut bytes = std::fs::read(&wav).unwrap();
    let n = bytes.len();
    bytes[n - 1] ^= 0x40;
    std::fs::write(&wav, bytes).unwrap();
    assert_eq!(avword(&["train", "--config", &cfg, "--out", out]), 3);

    std::fs::write(Path::new(out).join(".avword.lock"), "1").unwrap();
    assert_eq!(avword(&["check", "--shapes", "--out", out]), 2);
}

#[test]
fn train_eval_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 4);
    let out = dir.path().join("run");
    let o = out.to_str().unwrap();
    assert_eq!(avword(&["gen-data", "--config", &cfg]), 0);
    assert_eq!(avword(&["train", "--config", &cfg, "--out", o]), 0);
    let log = std::fs::read_to_string(out.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 1);
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("train_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["log_hash"].as_str().unwrap().len(), 64);

    assert_eq!(avword(&["eval", "--config", &cfg, "--out", o, "--snr", "clean"]), 0);
    assert!(out.join("eval_clean.json").exists());
    assert_eq!(avword(&["analyze-confusions", "--config", &cfg, "--out", o]), 0);
    let csv = std::fs::read_to_string(out.join("confusions.csv")).unwrap();
    assert!(csv.lines().next().unwrap().contains("target"));

    let again = dir.path().join("again");
    assert_eq!(avword(&["train", "--config", &cfg, "--out", again.to_str().unwrap()]), 0);
    let other: serde_json::Value = serde_json::from_slice(&std::fs::read(again.join("train_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["log_hash"], other["log_hash"]);
}

#[test]
fn shape_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("check");
    assert_eq!(avword(&["check", "--shapes", "--out", out.to_str().unwrap()]), 0);
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("check.json")).unwrap()).unwrap();
    assert!(report.is_object());
}
