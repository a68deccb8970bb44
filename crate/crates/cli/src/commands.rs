use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sanas_core::audio::{
    load_speech_commands, make_toy_dataset, read_wav, Dataset, FeatureExtractor, FeatureNorm, PreparedManifest,
    SpanRecord, SplitName, StreamRecord, SynthConfig, ToyConfig,
};
use sanas_core::checkpoint::Checkpoint;
use sanas_core::config::RunConfig;
use sanas_core::eval::{
    evaluate_sequences, pareto_front, score_sequence, streaming_decode, streaming_metrics, summarize,
    write_points_csv, MetricsBundle, ParetoPoint,
};
use sanas_core::supernet::{ArchSample, GraphDescription};
use sanas_core::training::{self, EpochRecord, TrainState};
use sanas_core::{Result, SanasError};

use crate::{EvalArgs, ParetoArgs, PrepareArgs, SplitArg, StaticArch, TrainArgs};

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| SanasError::io(dir, e))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("value serialises");
    fs::write(path, text + "\n").map_err(|e| SanasError::io(path, e))
}

pub fn prepare_data(a: PrepareArgs) -> Result<()> {
    let (source, default_dur) = if a.source.toy { ("toy", 3.0) } else { ("speech-commands", 1.0) };
    let synth = SynthConfig {
        min_snr_db: a.min_snr_db,
        max_snr_db: a.max_snr_db,
        min_dur: a.min_dur.unwrap_or(default_dur),
        max_dur: a.max_dur.unwrap_or(3.0),
    };
    synth.validate()?;
    if a.source.toy && a.limit.is_some() {
        return Err(SanasError::Usage("--limit applies to --speech-commands only".into()));
    }
    let (data, parameters) = match &a.source.speech_commands {
        None => {
            let defaults = ToyConfig::default();
            let cfg = ToyConfig {
                classes: a.classes.unwrap_or(defaults.classes),
                streams_per_class: a.streams_per_class.unwrap_or(defaults.streams_per_class),
                synth,
                ..defaults
            };
            let streams = make_toy_dataset(&cfg, &mut ChaCha8Rng::seed_from_u64(a.seed))?;
            (Dataset::from_streams(streams), serde_json::to_value(cfg).expect("config serialises"))
        }
        Some(root) => {
            if a.classes.is_some() || a.streams_per_class.is_some() {
                return Err(SanasError::Usage("--classes and --streams-per-class apply to --toy only".into()));
            }
            let sc = load_speech_commands(root)?;
            if sc.noise.is_empty() {
                return Err(SanasError::io(
                    root.join("_background_noise_"),
                    std::io::Error::new(std::io::ErrorKind::NotFound, "no background noise recordings"),
                ));
            }
            let data = sc.synthesize(&synth, a.seed, a.limit)?;
            let params = serde_json::json!({ "synth": synth, "limit": a.limit, "skipped_files": sc.skipped });
            (data, params)
        }
    };
    create_dir(&a.out)?;
    let manifest = PreparedManifest::new(source, a.seed, parameters, &data);
    data.save(&a.out, &manifest)?;
    println!(
        "wrote {} streams to {} (train {}, val {}, test {})",
        data.train.len() + data.val.len() + data.test.len(),
        a.out.display(),
        data.train.len(),
        data.val.len(),
        data.test.len()
    );
    Ok(())
}

fn checkpoint_name(epoch: usize) -> String {
    format!("epoch-{epoch:03}.ckpt")
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut config = RunConfig::from_file(&a.config)?;
    if let Some(l) = a.lambda {
        config.training.lambda = l;
    }
    if let Some(s) = a.seed {
        config.training.seed = s;
    }
    if let Some(e) = a.epochs {
        config.training.epochs = e;
    }
    if let Some(lr) = a.lr {
        config.training.lr = lr;
    }
    config.validate()?;
    let graph = config.load_graph()?;
    let model = config.build_model(&graph)?;

    let (data, _) = Dataset::load(&config.data)?;
    let ex = FeatureExtractor::new(config.feature_config());
    let norm = FeatureNorm::fit(&data.train, &ex)?;
    let train_seqs = data.sequences(SplitName::Train, &ex, Some(&norm))?;
    let val_seqs = data.sequences(SplitName::Val, &ex, Some(&norm))?;

    let arch = a.static_arch.map(|s| match s {
        StaticArch::Backbone => ArchSample::backbone(model.spec()),
        StaticArch::Full => ArchSample::full(model.spec()),
    });
    let static_bits = arch.as_ref().map(|x| x.bits().to_vec());
    let mut state = match &a.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            ck.check_graph(&graph)?;
            if ck.static_arch != static_bits {
                return Err(SanasError::Usage("--resume checkpoint was trained in a different mode".into()));
            }
            ck.state
        }
        None => TrainState::new(&model, &config.training)?,
    };

    create_dir(&a.out)?;
    write_json(&a.out.join("config.json"), &config)?;
    let log_path = a.out.join("run.jsonl");
    let mut log = fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(a.resume.is_some())
        .truncate(a.resume.is_none())
        .open(&log_path)
        .map_err(|e| SanasError::io(&log_path, e))?;

    let out = a.out.clone();
    let mut hook = |records: &[EpochRecord], st: &TrainState| -> Result<()> {
        for r in records {
            writeln!(log, "{}", r.to_json_line()).map_err(|e| SanasError::io(&log_path, e))?;
            log::info!("{}", r.to_json_line());
        }
        log.flush().map_err(|e| SanasError::io(&log_path, e))?;
        let ck = Checkpoint {
            graph: graph.clone(),
            config: config.clone(),
            state: st.clone(),
            norm: norm.clone(),
            static_arch: static_bits.clone(),
        };
        ck.save(&out.join(checkpoint_name(st.epoch)))
    };
    let records = match &arch {
        Some(arch) => training::train_static(
            &model,
            &train_seqs,
            &val_seqs,
            &config.training,
            arch,
            &mut state,
            &mut hook,
        )?,
        None => training::train(&model, &train_seqs, &val_seqs, &config.training, &mut state, &mut hook)?,
    };
    match records.iter().rev().find(|r| r.split == "val") {
        Some(r) => println!(
            "epoch {}: validation accuracy {:.4}, mean FLOPs {:.0}",
            r.epoch, r.accuracy, r.mean_flops
        ),
        None => println!("nothing to do: run already at epoch {}", state.epoch),
    }
    Ok(())
}

fn read_spans(path: &Path) -> Result<Vec<SpanRecord>> {
    let text = fs::read_to_string(path).map_err(|e| SanasError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| SanasError::Format(format!("{}: {e}", path.display())))
}

fn default_out(checkpoint: &Path, what: &str) -> PathBuf {
    let stem = checkpoint.file_stem().and_then(|s| s.to_str()).unwrap_or("checkpoint");
    checkpoint.with_file_name(format!("{stem}.eval-{what}.json"))
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    if let Some(g) = &a.graph {
        ck.check_graph(&GraphDescription::resolve(g)?)?;
    }
    let model = ck.model()?;
    let mode = ck.eval_mode(&model)?;
    let mode_name = if ck.static_arch.is_some() { "static" } else { "argmax" };
    let ex = FeatureExtractor::new(ck.config.feature_config());

    let bundle = match (&a.stream, &a.spans) {
        (Some(wav), Some(spans_path)) => {
            let spans = read_spans(spans_path)?
                .iter()
                .map(SpanRecord::to_span)
                .collect::<Result<Vec<_>>>()?;
            let record = StreamRecord {
                wave: read_wav(wav)?,
                spans,
                snr_db: 0.0,
                seed: 0,
            };
            let frames = record.frames(&ex, Some(&ck.norm))?;
            let results = score_sequence(&model, &ck.state.params, &frames, &mode, 0)?;
            let posteriors: Vec<Vec<f64>> = results.iter().map(|r| r.probs.clone()).collect();
            let detections = streaming_decode(&posteriors, &ck.config.streaming)?;
            let report = streaming_metrics(&detections, &record.spans, &ck.config.streaming)?;
            println!(
                "{} words, {} detections: matched {:.1}%, correct {:.1}%, wrong {:.1}%, false alarms {:.1}%",
                report.words, report.detections, report.matched_pct, report.correct_pct, report.wrong_pct, report.fa_pct
            );
            MetricsBundle {
                split: "stream".into(),
                mode: mode_name.into(),
                metrics: summarize(&[results])?,
                streaming: Some(report),
                detections: Some(detections),
            }
        }
        _ => {
            let split = match a.split {
                SplitArg::Val => SplitName::Val,
                SplitArg::Test => SplitName::Test,
            };
            let dir = a.data.clone().unwrap_or_else(|| ck.config.data.clone());
            let (data, _) = Dataset::load(&dir)?;
            let seqs = data.sequences(split, &ex, Some(&ck.norm))?;
            MetricsBundle {
                split: split.as_str().into(),
                mode: mode_name.into(),
                metrics: evaluate_sequences(&model, &ck.state.params, &seqs, &mode)?,
                streaming: None,
                detections: None,
            }
        }
    };
    let m = &bundle.metrics;
    println!(
        "{}: {} frames, accuracy {:.4}, mean FLOPs {:.0}",
        bundle.split, m.frames, m.accuracy, m.mean_flops
    );
    let out = a.out.unwrap_or_else(|| default_out(&a.checkpoint, &bundle.split));
    write_json(&out, &bundle)
}

/// Final validation record of a run directory, if it has one.
fn final_val(run: &Path) -> Result<Option<EpochRecord>> {
    let path = run.join("run.jsonl");
    if !path.is_file() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| SanasError::io(&path, e))?;
    let mut last = None;
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let r: EpochRecord = serde_json::from_str(line)
            .map_err(|e| SanasError::Format(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if r.split == "val" {
            last = Some(r);
        }
    }
    Ok(last)
}

pub fn pareto(a: ParetoArgs) -> Result<()> {
    let mut runs: Vec<PathBuf> = fs::read_dir(&a.runs)
        .map_err(|e| SanasError::io(&a.runs, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    runs.sort();
    let mut points = Vec::new();
    for run in &runs {
        if let Some(r) = final_val(run)? {
            let id = run.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            points.push(ParetoPoint::new(id, r.accuracy, r.mean_flops)?);
        }
    }
    if points.is_empty() {
        return Err(SanasError::io(
            &a.runs,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no run directories with validation records"),
        ));
    }
    let front = pareto_front(&points);
    let stem = a.out.file_stem().and_then(|s| s.to_str()).unwrap_or("pareto");
    let front_path = a.out.with_file_name(format!("{stem}-front.csv"));
    write_points_csv(&a.out, &points)?;
    write_points_csv(&front_path, &front)?;
    println!("{} runs, {} on the front:", points.len(), front.len());
    for p in &front {
        println!("  {:<24} accuracy {:.4}  mean FLOPs {:.0}", p.model_id, p.accuracy, p.mean_flops);
    }
    Ok(())
}
