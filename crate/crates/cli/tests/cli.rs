use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sast::experiment::{preset, ExperimentConfig};

fn sast(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sast")).args(args).output().expect("binary runs")
}

fn tiny_config(dir: &Path, name: &str) -> PathBuf {
    let mut cfg: ExperimentConfig = preset(name).unwrap();
    let c = &mut cfg.data.corpus;
    c.train_speakers = 4;
    c.dev_speakers = 1;
    c.test_speakers = 1;
    c.external_speakers = 2;
    c.utts_per_speaker = 2;
    cfg.train.epochs = 2;
    cfg.train.batch_size = 4;
    cfg.skb.size = 2;
    cfg.seeds = vec![7];
    let path = dir.join(format!("{name}.toml"));
    cfg.save(&path).unwrap();
    path
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn full_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let cfg = tiny_config(root, "sast_frame_top");
    let data = root.join("data");
    let run = root.join("run");
    ok(&sast(&["gen-data", "--config", s(&cfg), "--out", s(&data)]));
    for f in ["train.utts", "dev.utts", "test.utts", "vectors.skb", "speakers.tsv"] {
        assert!(data.join(f).exists(), "{f}");
    }
    let stdout = ok(&sast(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&run)]));
    assert!(stdout.contains("seed 7:"));
    let ckpt = run.join("seed-7/model.ckpt");
    let metrics = std::fs::read_to_string(run.join("seed-7/metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 2);

    let run2 = root.join("run2");
    ok(&sast(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&run2)]));
    assert_eq!(metrics, std::fs::read_to_string(run2.join("seed-7/metrics.jsonl")).unwrap());
    assert_eq!(std::fs::read(&ckpt).unwrap(), std::fs::read(run2.join("seed-7/model.ckpt")).unwrap());

    let report = ok(&sast(&["eval", "--checkpoint", s(&ckpt), "--data", s(&data), "--beam", "2"]));
    let hash = ExperimentConfig::load(&run.join("config.toml")).unwrap().hash();
    assert!(report.starts_with(&format!("# config_hash={hash}")));
    assert!(report.contains("token_error_rate="));

    let decoded = ok(&sast(&["decode", "--checkpoint", s(&ckpt), "--data", s(&data), "--split", "dev"]));
    assert_eq!(decoded.lines().count(), 2);
    assert!(decoded.lines().all(|l| l.contains('\t')));
    let nbest = ok(&sast(&["decode", "--checkpoint", s(&ckpt), "--data", s(&data), "--nbest", "--beam", "3"]));
    assert!(nbest.lines().count() >= 2);

    let diag = ok(&sast(&["diag-attn", "--checkpoint", s(&ckpt), "--data", s(&data)]));
    assert!(diag.contains("mean_entropy"));

    let sweep = ok(&sast(&["sweep-skb", "--config", s(&cfg), "--data", s(&data), "--sizes", "1,2"]));
    let lines: Vec<&str> = sweep.lines().collect();
    assert_eq!(lines[1], "n,dev_err,test_err");
    assert!(lines[2].starts_with("1,") && lines[3].starts_with("2,"));
}

#[test]
fn errors_are_categorized() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();

    let out = sast(&["train", "--config", s(&root.join("missing.toml")), "--data", "x", "--out", "y"]);
    assert_eq!(out.status.code(), Some(6));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error[io]") && err.contains("missing.toml"));

    let out = sast(&["gen-data", "--preset", "no_such_preset", "--out", s(root)]);
    assert_eq!(out.status.code(), Some(3));

    std::fs::write(root.join("bad.toml"), "name = 3\n").unwrap();
    let out = sast(&["gen-data", "--config", s(&root.join("bad.toml")), "--out", s(root)]);
    assert_eq!(out.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[format]"));

    let cfg = tiny_config(root, "st_baseline");
    let data = root.join("data");
    ok(&sast(&["gen-data", "--config", s(&cfg), "--out", s(&data)]));
    let out = sast(&["sweep-skb", "--config", s(&cfg), "--data", s(&data), "--sizes", "1"]);
    assert_eq!(out.status.code(), Some(3));

    let run = root.join("run");
    ok(&sast(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&run), "--seed", "1"]));
    let out = sast(&["diag-attn", "--checkpoint", s(&run.join("seed-1/model.ckpt")), "--data", s(&data)]);
    assert_eq!(out.status.code(), Some(3));

    let out = sast(&["eval"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn presets_are_listed_and_printable() {
    let list = ok(&sast(&["presets"]));
    assert!(list.lines().any(|l| l == "sast_n100_frame_block6"));
    let toml = ok(&sast(&["presets", "st_baseline"]));
    assert!(ExperimentConfig::from_toml(&toml).is_ok());
}
