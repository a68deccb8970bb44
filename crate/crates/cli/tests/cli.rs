use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sanas_core::audio::{toy_pattern, write_wav, PreparedManifest, SpanRecord, Waveform, LABELS};
use sanas_core::eval::{Detection, MetricsBundle};

fn sanas(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sanas"))
        .args(args)
        .env("SANAS_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn prepare(dir: &Path, seed: &str) -> PathBuf {
    prepare_sized(dir, seed, "10")
}

fn prepare_sized(dir: &Path, seed: &str, per_class: &str) -> PathBuf {
    let out = dir.join("data");
    let o = sanas(&[
        "prepare-data",
        "--toy",
        "--seed",
        seed,
        "--classes",
        "3",
        "--streams-per-class",
        per_class,
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn write_config(dir: &Path, epochs: usize) -> PathBuf {
    let path = dir.join("run.json");
    let text = format!(
        r#"{{ "graph": "builtin:toy", "data": "data", "controller": {{ "d_z": 8, "d_phi": 8 }},
             "training": {{ "lambda": 1e-5, "epochs": {epochs}, "batch_size": 4, "seed": 3 }} }}"#
    );
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn prepare_data_is_deterministic_and_counts_add_up() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ma = std::fs::read(prepare(a.path(), "7").join("manifest.json")).unwrap();
    let mb = std::fs::read(prepare(b.path(), "7").join("manifest.json")).unwrap();
    assert_eq!(ma, mb);
    let m: PreparedManifest = serde_json::from_slice(&ma).unwrap();
    let streams: usize = m.streams.values().sum();
    let labelled: usize = m.labels.values().flat_map(|h| h.values()).sum();
    assert_eq!(streams, 30);
    assert_eq!(labelled, streams);
}

#[test]
fn argument_errors_exit_with_2() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("x");
    let o = sanas(&["prepare-data", "--toy", "--min-dur", "3", "--max-dur", "2", "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert_eq!(code(&sanas(&["prepare-data", "--out", s(&out)])), 2);
    assert_eq!(code(&sanas(&["no-such-command"])), 2);

    prepare(d.path(), "1");
    let cfg = write_config(d.path(), 1);
    let o = sanas(&["train", "--config", s(&cfg), "--out", s(&d.path().join("r")), "--lambda", "-1"]);
    assert_eq!(code(&o), 2);
    std::fs::write(&cfg, r#"{ "graph": "builtin:toy", "data": "data", "lamda": 1 }"#).unwrap();
    assert_eq!(code(&sanas(&["train", "--config", s(&cfg), "--out", s(&d.path().join("r"))])), 2);
}

#[test]
fn missing_files_exit_with_3() {
    let d = tempfile::tempdir().unwrap();
    let missing = d.path().join("missing");
    assert_eq!(code(&sanas(&["eval", "--checkpoint", s(&missing)])), 3);
    assert_eq!(code(&sanas(&["pareto", "--runs", s(d.path()), "--out", s(&d.path().join("p.csv"))])), 3);
    let o = sanas(&["prepare-data", "--speech-commands", s(&missing), "--out", s(&d.path().join("o"))]);
    assert_eq!(code(&o), 3);
}

#[test]
fn training_eval_and_pareto_round_trip() {
    let d = tempfile::tempdir().unwrap();
    prepare(d.path(), "2");
    let cfg = write_config(d.path(), 2);
    let (ra, rb, rs) = (d.path().join("runs/a"), d.path().join("runs/b"), d.path().join("runs/s"));
    for r in [&ra, &rb] {
        let o = sanas(&["train", "--config", s(&cfg), "--out", s(r)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let o = sanas(&["train", "--config", s(&cfg), "--out", s(&rs), "--static", "backbone", "--lambda", "0"]);
    assert_eq!(code(&o), 0);

    let log_a = std::fs::read(ra.join("run.jsonl")).unwrap();
    assert_eq!(log_a, std::fs::read(rb.join("run.jsonl")).unwrap());
    assert_eq!(String::from_utf8_lossy(&log_a).lines().count(), 4);
    let ck = ra.join("epoch-002.ckpt");
    assert_eq!(std::fs::read(&ck).unwrap(), std::fs::read(rb.join("epoch-002.ckpt")).unwrap());
    assert_eq!(&std::fs::read(&ck).unwrap()[..9], b"SANASCKPT");

    // resuming after epoch 1 gives the same second epoch
    let rr = d.path().join("runs/r");
    let o = sanas(&["train", "--config", s(&cfg), "--out", s(&rr), "--epochs", "1"]);
    assert_eq!(code(&o), 0);
    let resume = rr.join("epoch-001.ckpt");
    let o = sanas(&["train", "--config", s(&cfg), "--out", s(&rr), "--resume", s(&resume)]);
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read(rr.join("run.jsonl")).unwrap(), log_a);
    assert_eq!(std::fs::read(rr.join("epoch-002.ckpt")).unwrap(), std::fs::read(&ck).unwrap());

    let (e1, e2) = (d.path().join("e1.json"), d.path().join("e2.json"));
    let a = sanas(&["eval", "--checkpoint", s(&ck), "--split", "test", "--out", s(&e1)]);
    let b = sanas(&["eval", "--checkpoint", s(&ck), "--split", "test", "--out", s(&e2)]);
    assert_eq!((code(&a), code(&b)), (0, 0));
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(std::fs::read(&e1).unwrap(), std::fs::read(&e2).unwrap());
    let bundle: MetricsBundle = serde_json::from_slice(&std::fs::read(&e1).unwrap()).unwrap();
    assert_eq!(bundle.split, "test");

    let o = sanas(&["eval", "--checkpoint", s(&ck), "--graph", "builtin:fig2"]);
    assert_eq!(code(&o), 5);
    assert!(String::from_utf8_lossy(&o.stderr).contains("graph"));
    let mut bytes = std::fs::read(&ck).unwrap();
    *bytes.last_mut().unwrap() ^= 0x55;
    let bad = d.path().join("bad.ckpt");
    std::fs::write(&bad, &bytes).unwrap();
    assert_eq!(code(&sanas(&["eval", "--checkpoint", s(&bad)])), 5);
    std::fs::write(&bad, &bytes[..bytes.len() / 2]).unwrap();
    assert_eq!(code(&sanas(&["eval", "--checkpoint", s(&bad)])), 5);

    let csv = d.path().join("pareto.csv");
    let o = sanas(&["pareto", "--runs", s(&d.path().join("runs")), "--out", s(&csv)]);
    assert_eq!(code(&o), 0);
    let scatter = std::fs::read_to_string(&csv).unwrap();
    assert!(scatter.starts_with("model_id,accuracy,mean_flops\n"));
    assert_eq!(scatter.lines().count(), 5);
    let front = std::fs::read_to_string(d.path().join("pareto-front.csv")).unwrap();
    assert!(front.lines().count() >= 2);
}

/// Greedy time-ordered matching written out directly: each detection takes
/// the nearest unused word centre within the tolerance.
fn oracle(dets: &[Detection], words: &[(usize, f64)], tol: f64) -> (usize, usize, usize) {
    let mut used = vec![false; words.len()];
    let (mut correct, mut wrong, mut fa) = (0, 0, 0);
    for d in dets {
        let mut best: Option<(usize, f64)> = None;
        for (i, &(_, c)) in words.iter().enumerate() {
            let dist = (d.time - c).abs();
            if !used[i] && dist <= tol + 1e-9 && best.is_none_or(|(_, b)| dist < b) {
                best = Some((i, dist));
            }
        }
        match best {
            Some((i, _)) => {
                used[i] = true;
                if words[i].0 == d.label {
                    correct += 1
                } else {
                    wrong += 1
                }
            }
            None => fa += 1,
        }
    }
    (correct, wrong, fa)
}

#[test]
fn streaming_eval_on_a_long_stream() {
    let d = tempfile::tempdir().unwrap();
    prepare_sized(d.path(), "4", "60");
    let cfg = write_config(d.path(), 10);
    let run = d.path().join("run");
    let o = sanas(&["train", "--config", s(&cfg), "--out", s(&run), "--static", "backbone"]);
    assert_eq!(code(&o), 0);

    // 60 s of noise with a pattern every 4 s
    let sr = 16_000usize;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut samples: Vec<f64> = (0..60 * sr).map(|_| rng.gen_range(-0.08..0.08)).collect();
    let mut spans = Vec::new();
    let mut words = Vec::new();
    for k in 0..14 {
        let class = k % 3;
        let start = (2 + 4 * k) * sr;
        let len = (0.6 * sr as f64) as usize;
        for (i, v) in toy_pattern(class, len).samples().iter().enumerate() {
            samples[start + i] += v;
        }
        let (a, b) = (start as f64 / sr as f64, (start + len) as f64 / sr as f64);
        spans.push(SpanRecord {
            label: LABELS[class].to_string(),
            start: a,
            end: b,
        });
        words.push((class, (a + b) / 2.0));
    }
    let wav = d.path().join("long.wav");
    write_wav(&wav, &Waveform::new(samples).unwrap()).unwrap();
    let spans_path = d.path().join("spans.json");
    std::fs::write(&spans_path, serde_json::to_string(&spans).unwrap()).unwrap();

    let out = d.path().join("stream.json");
    let ck = run.join("epoch-010.ckpt");
    let o = sanas(&["eval", "--checkpoint", s(&ck), "--stream", s(&wav), "--spans", s(&spans_path), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let bundle: MetricsBundle = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    let report = bundle.streaming.unwrap();
    let dets = bundle.detections.unwrap();
    assert!(!dets.is_empty());
    assert_eq!(report.words, 14);
    assert_eq!(report.detections, dets.len());
    assert!(dets.windows(2).all(|w| w[1].time - w[0].time >= report.params.suppression - 1e-9));
    let (correct, wrong, fa) = oracle(&dets, &words, report.params.tolerance);
    println!("{} detections: {correct} correct, {wrong} wrong, {fa} false alarms", dets.len());
    assert_eq!((report.correct, report.wrong, report.false_alarms), (correct, wrong, fa));
    assert_eq!(report.matched, correct + wrong);
    assert_eq!(bundle.metrics.frames, 296);
}
