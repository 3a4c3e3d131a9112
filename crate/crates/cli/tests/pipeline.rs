use std::collections::HashMap;
use std::path::Path;
use std::process::{Command, Output};

use adadec::corpus::read_split;
use adadec::retrieval::read_exemplars;

const SMALL: &[&str] = &[
    "synth.train=50",
    "synth.dev=12",
    "synth.test=12",
    "model.embedding_dim=12",
    "model.encoder_hidden=12",
    "model.decoder_hidden=12",
    "model.exemplar_hidden=8",
    "train.batch_size=10",
    "train.max_epochs=2",
    "decode.beam_width=3",
    "decode.max_len=20",
    "train.dev_max_len=20",
];

fn adadec(out: &Path, args: &[&str], extra: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_adadec"));
    cmd.args(args).arg("--out").arg(out);
    for s in SMALL.iter().chain(extra) {
        cmd.arg("--set").arg(s);
    }
    cmd.output().expect("binary runs")
}

fn ok(out: &Path, args: &[&str], extra: &[&str]) -> String {
    let o = adadec(out, args, extra);
    assert!(
        o.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn err(out: &Path, args: &[&str], extra: &[&str]) -> String {
    let o = adadec(out, args, extra);
    assert!(!o.status.success(), "{args:?} unexpectedly succeeded");
    String::from_utf8(o.stderr).unwrap()
}

fn pipeline(out: &Path, variant: &str) {
    let v = format!("variant={variant}");
    for stage in ["synth-data", "preprocess", "retrieve", "train", "generate", "evaluate"] {
        ok(out, &[stage], &[&v]);
    }
}

const ARTIFACTS: &[&str] = &[
    "train.jsonl",
    "vocab.json",
    "train.tokens",
    "test.tokens",
    "exemplars.train.jsonl",
    "exemplars.test.jsonl",
    "model.ckpt",
    "train_log.jsonl",
    "predictions.txt",
    "scores.json",
    "train.stamp.json",
    "evaluate.stamp.json",
];

#[test]
fn full_pipeline_for_both_variants() {
    for variant in ["seq2seq", "adadec"] {
        let dir = tempfile::tempdir().unwrap();
        pipeline(dir.path(), variant);
        for a in ARTIFACTS {
            assert!(dir.path().join(a).exists(), "{variant}: missing {a}");
        }
        let scores: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("scores.json")).unwrap()).unwrap();
        assert_eq!(scores["pairs"], 12);
        let f1 = scores["rouge_l"]["f1"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&f1));
        let preds = std::fs::read_to_string(dir.path().join("predictions.txt")).unwrap();
        assert_eq!(preds.lines().count(), 12);
        let log = std::fs::read_to_string(dir.path().join("train_log.jsonl")).unwrap();
        assert_eq!(log.lines().count(), 2);
    }
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path(), "adadec");
    pipeline(b.path(), "adadec");
    let snapshot = |d: &Path| -> Vec<Vec<u8>> { ARTIFACTS.iter().map(|f| std::fs::read(d.join(f)).unwrap()).collect() };
    let first = snapshot(a.path());
    assert_eq!(first, snapshot(b.path()));
    pipeline(a.path(), "adadec");
    assert_eq!(first, snapshot(a.path()));
}

fn bow(ids: &[u32]) -> HashMap<u32, f64> {
    let mut m = HashMap::new();
    for &t in ids.iter().filter(|&&t| t >= 4) {
        *m.entry(t).or_insert(0.0) += 1.0;
    }
    m
}

fn cos(a: &HashMap<u32, f64>, b: &HashMap<u32, f64>) -> f64 {
    let dot: f64 = a.iter().map(|(k, v)| v * b.get(k).unwrap_or(&0.0)).sum();
    let na: f64 = a.values().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = b.values().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[test]
fn retrieval_matches_brute_force() {
    let dir = tempfile::tempdir().unwrap();
    for stage in ["synth-data", "preprocess", "retrieve"] {
        ok(dir.path(), &[stage], &[]);
    }
    let train = read_split(dir.path().join("train.tokens")).unwrap();
    let train_bow: Vec<_> = train.iter().map(|i| bow(i.source.ids())).collect();
    for split in ["train", "dev", "test"] {
        let queries = read_split(dir.path().join(format!("{split}.tokens"))).unwrap();
        let got = read_exemplars(dir.path().join(format!("exemplars.{split}.jsonl"))).unwrap();
        assert_eq!(got.len(), queries.len());
        for (q, a) in queries.iter().zip(&got) {
            let qb = bow(q.source.ids());
            let mut best = (u32::MAX, f64::NEG_INFINITY);
            for (j, t) in train_bow.iter().enumerate() {
                if split == "train" && j as u32 == q.id {
                    continue;
                }
                let s = cos(&qb, t);
                if s > best.1 + 1e-12 {
                    best = (j as u32, s);
                }
            }
            assert_eq!(a.exemplar_id, best.0, "{split} query {}", q.id);
            assert!((a.similarity - best.1).abs() < 1e-9);
        }
    }
}

#[test]
fn stages_demand_their_prerequisites() {
    let dir = tempfile::tempdir().unwrap();
    let e = err(dir.path(), &["preprocess"], &[]);
    assert!(e.contains("synth-data"), "{e}");
    ok(dir.path(), &["synth-data"], &[]);
    let e = err(dir.path(), &["retrieve"], &[]);
    assert!(e.contains("adadec preprocess"), "{e}");
    ok(dir.path(), &["preprocess"], &[]);
    let e = err(dir.path(), &["train"], &["variant=adadec"]);
    assert!(e.contains("adadec retrieve"), "{e}");
    ok(dir.path(), &["train"], &["variant=seq2seq"]);
    let e = err(dir.path(), &["generate"], &["variant=seq2seq", "train.learning_rate=0.01"]);
    assert!(e.contains("stale"), "{e}");
    let e = err(dir.path(), &["evaluate"], &["variant=seq2seq"]);
    assert!(e.contains("adadec generate"), "{e}");
}

#[test]
fn edited_inputs_make_outputs_stale() {
    let dir = tempfile::tempdir().unwrap();
    for stage in ["synth-data", "preprocess", "retrieve"] {
        ok(dir.path(), &[stage], &[]);
    }
    let path = dir.path().join("dev.jsonl");
    let mut text = std::fs::read_to_string(&path).unwrap();
    text.push_str("{\"source\": \"a b\", \"target\": \"c\"}\n");
    std::fs::write(&path, text).unwrap();
    let e = err(dir.path(), &["retrieve"], &[]);
    assert!(e.contains("stale"), "{e}");
}

#[test]
fn beam_of_one_matches_greedy_flag() {
    let dir = tempfile::tempdir().unwrap();
    for stage in ["synth-data", "preprocess", "retrieve", "train"] {
        ok(dir.path(), &[stage], &[]);
    }
    ok(dir.path(), &["generate"], &["decode.beam_width=1"]);
    let beam = std::fs::read(dir.path().join("predictions.txt")).unwrap();
    ok(dir.path(), &["generate", "--greedy"], &[]);
    let greedy = std::fs::read(dir.path().join("predictions.txt")).unwrap();
    assert_eq!(beam, greedy);
    ok(dir.path(), &["evaluate"], &[]);
}

#[test]
fn unknown_and_invalid_keys_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let e = err(dir.path(), &["synth-data"], &["train.bogus=1", "nonsense=2"]);
    assert!(e.contains("train.bogus") && e.contains("nonsense"), "{e}");
    let e = err(dir.path(), &["synth-data"], &["train.batch_size=0"]);
    assert!(e.contains("batch_size"), "{e}");
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"model": {"decoder_hidden": 8, "colour": "red"}}"#).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_adadec"))
        .args(["synth-data", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("model.colour"));
}

#[test]
fn seed_flag_changes_the_corpus() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    ok(a.path(), &["synth-data", "--seed", "1"], &[]);
    ok(b.path(), &["synth-data", "--seed", "2"], &[]);
    assert_ne!(
        std::fs::read(a.path().join("train.jsonl")).unwrap(),
        std::fs::read(b.path().join("train.jsonl")).unwrap()
    );
}

#[test]
fn gradcheck_passes_and_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    for v in ["seq2seq", "adadec+attexp"] {
        let out = ok(dir.path(), &["gradcheck"], &[&format!("variant={v}")]);
        assert!(out.contains("passed"), "{out}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("gradcheck.json")).unwrap()).unwrap();
    assert!(report["checked"].as_u64().unwrap() >= 200);
}

#[test]
fn three_document_retrieval() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("toy.jsonl");
    std::fs::write(
        &data,
        concat!(
            "{\"source\": \"a b c\", \"target\": \"first\"}\n",
            "{\"source\": \"a b d\", \"target\": \"second\"}\n",
            "{\"source\": \"x y z\", \"target\": \"third\"}\n",
        ),
    )
    .unwrap();
    let d = data.display().to_string();
    let sets = [format!("data.train=\"{d}\""), format!("data.dev=\"{d}\""), format!("data.test=\"{d}\"")];
    let sets: Vec<&str> = sets.iter().map(String::as_str).collect();
    ok(dir.path(), &["preprocess"], &sets);
    ok(dir.path(), &["retrieve"], &sets);
    let train = read_exemplars(dir.path().join("exemplars.train.jsonl")).unwrap();
    let ids: Vec<u32> = train.iter().map(|a| a.exemplar_id).collect();
    assert_eq!(ids, [1, 0, 0]);
    assert!((train[0].similarity - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(train[2].similarity, 0.0);
    let test = read_exemplars(dir.path().join("exemplars.test.jsonl")).unwrap();
    let ids: Vec<u32> = test.iter().map(|a| a.exemplar_id).collect();
    assert_eq!(ids, [0, 1, 2]);
    assert!(test.iter().all(|a| (a.similarity - 1.0).abs() < 1e-12));
}
