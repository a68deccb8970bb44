//! Frame-level metrics, model selection and streaming evaluation.

mod pareto;
mod streaming;

pub use pareto::{pareto_front, write_points_csv, ParetoPoint};
pub use streaming::{streaming_decode, streaming_metrics, Detection, StreamingParams, StreamingReport};

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::{Frame, LABELS};
use crate::controller::{run_sequence, SanasModel, Selection};
use crate::error::{Result, SanasError};
use crate::numcore::{softmax_xent, ParamStore, Tensor};
use crate::supernet::{active_subgraph, architecture_cost, evaluate, ArchSample};

/// `(accuracy, mean cost)` of per-frame predictions.
pub fn frame_metrics(predictions: &[usize], labels: &[usize], costs: &[f64]) -> Result<(f64, f64)> {
    if predictions.len() != labels.len() || predictions.len() != costs.len() {
        return Err(SanasError::Input(format!(
            "length mismatch: {} predictions, {} labels, {} costs",
            predictions.len(),
            labels.len(),
            costs.len()
        )));
    }
    if predictions.is_empty() {
        return Err(SanasError::Input("no frames to score".into()));
    }
    let n = predictions.len() as f64;
    let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok((correct as f64 / n, costs.iter().sum::<f64>() / n))
}

/// How architectures are chosen when scoring a model.
#[derive(Clone, Debug, PartialEq)]
pub enum EvalMode {
    Argmax,
    /// Sampled architectures; sequence `i` draws from a generator seeded with `seed + i`.
    Sample { seed: u64 },
    /// A fixed sub-graph without a controller (static baselines).
    Static(ArchSample),
}

/// Per-frame outcome of a model on one sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameResult {
    pub label: usize,
    pub prediction: usize,
    pub probs: Vec<f64>,
    pub loss: f64,
    pub cost: f64,
}

fn softmax(logits: &Tensor) -> Vec<f64> {
    let m = logits.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.data().iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Runs a model over one sequence.
pub fn score_sequence(
    model: &SanasModel,
    params: &ParamStore,
    frames: &[Frame],
    mode: &EvalMode,
    index: u64,
) -> Result<Vec<FrameResult>> {
    let to_result = |f: &Frame, logits: &Tensor, cost: f64| -> Result<FrameResult> {
        let (loss, _) = softmax_xent(logits, f.label)?;
        Ok(FrameResult {
            label: f.label,
            prediction: logits.argmax(),
            probs: softmax(logits),
            loss,
            cost,
        })
    };
    match mode {
        EvalMode::Static(arch) => {
            let spec = model.spec();
            let active = active_subgraph(spec, arch);
            let cost = static_cost(model, arch) as f64;
            frames
                .iter()
                .map(|f| {
                    let e = evaluate(spec, &active, &f.features, params)?;
                    to_result(f, &e.logits, cost)
                })
                .collect()
        }
        EvalMode::Argmax | EvalMode::Sample { .. } => {
            let mut rng;
            let mut sel = match mode {
                EvalMode::Sample { seed } => {
                    rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(index));
                    Selection::Sample(&mut rng)
                }
                _ => Selection::Argmax,
            };
            let (outs, _) = run_sequence(model, params, frames, &mut sel)?;
            frames
                .iter()
                .zip(&outs)
                .map(|(f, o)| to_result(f, &o.logits, o.cost as f64))
                .collect()
        }
    }
}

/// Cost of a fixed sub-graph without any controller overhead.
pub fn static_cost(model: &SanasModel, arch: &ArchSample) -> u64 {
    architecture_cost(model.spec(), arch, model.cost_model()) - model.cost_model().controller_cost()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub frames: usize,
    pub accuracy: f64,
    pub mean_flops: f64,
    pub mean_flops_per_label: BTreeMap<String, f64>,
    /// Mean cross-entropy per frame.
    pub loss: f64,
}

/// Aggregates per-frame results in sequence order.
pub fn summarize(results: &[Vec<FrameResult>]) -> Result<SplitMetrics> {
    let all: Vec<&FrameResult> = results.iter().flatten().collect();
    let preds: Vec<usize> = all.iter().map(|r| r.prediction).collect();
    let labels: Vec<usize> = all.iter().map(|r| r.label).collect();
    let costs: Vec<f64> = all.iter().map(|r| r.cost).collect();
    let (accuracy, mean_flops) = frame_metrics(&preds, &labels, &costs)?;
    let mut per: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for r in &all {
        let e = per.entry(r.label).or_default();
        e.0 += r.cost;
        e.1 += 1;
    }
    Ok(SplitMetrics {
        frames: all.len(),
        accuracy,
        mean_flops,
        mean_flops_per_label: per
            .into_iter()
            .map(|(l, (s, n))| (LABELS[l].to_string(), s / n as f64))
            .collect(),
        loss: all.iter().map(|r| r.loss).sum::<f64>() / all.len() as f64,
    })
}

/// Scores every sequence (in parallel, results kept in order).
pub fn evaluate_sequences(
    model: &SanasModel,
    params: &ParamStore,
    sequences: &[Vec<Frame>],
    mode: &EvalMode,
) -> Result<SplitMetrics> {
    let results: Vec<Vec<FrameResult>> = sequences
        .par_iter()
        .enumerate()
        .map(|(i, s)| score_sequence(model, params, s, mode, i as u64))
        .collect::<Result<_>>()?;
    summarize(&results)
}

/// Everything reported for one checkpoint on one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsBundle {
    pub split: String,
    pub mode: String,
    pub metrics: SplitMetrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub streaming: Option<StreamingReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detections: Option<Vec<Detection>>,
}
