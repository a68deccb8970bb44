//! Budgeted objective, its score-function gradient and the training loops.

mod estimator;

pub use estimator::{baseline_update, episode_return, reinforce_backward};

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::Frame;
use crate::controller::{run_sequence, InitConfig, SanasModel, Selection};
use crate::error::{Result, SanasError};
use crate::eval::{evaluate_sequences, summarize, EvalMode, FrameResult, SplitMetrics};
use crate::numcore::{adam_step, softmax_xent, AdamConfig, Gradients, ParamStore};
use crate::supernet::{active_subgraph, evaluate, evaluate_backward, ArchSample, PHI_WEIGHT};

pub const MIN_LR: f64 = 1e-5;
pub const MAX_LR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub lambda: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub baseline_decay: f64,
    /// Global gradient-norm clip; off when absent.
    #[serde(default)]
    pub grad_clip: Option<f64>,
    #[serde(default)]
    pub init: InitConfig,
    /// Keep the `Φ` projection at its random initialisation.
    #[serde(default)]
    pub fixed_phi: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            lambda: 0.0,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 10,
            batch_size: 16,
            seed: 0,
            baseline_decay: 0.9,
            grad_clip: None,
            init: InitConfig::default(),
            fixed_phi: false,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(SanasError::Config(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if !(MIN_LR..=MAX_LR).contains(&self.lr) {
            return Err(SanasError::Config(format!(
                "learning rate {} outside [{MIN_LR}, {MAX_LR}]",
                self.lr
            )));
        }
        if !(self.baseline_decay > 0.0 && self.baseline_decay < 1.0) {
            return Err(SanasError::Config("baseline_decay must lie in (0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(SanasError::Config("Adam betas must lie in [0, 1) and eps be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(SanasError::Config("batch_size must be at least 1".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0 && c.is_finite()) {
                return Err(SanasError::Config("grad_clip must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

/// `[10^-(m+1), 10^-m, 10^-(m-1)]` with `m` the order of magnitude of the full-graph cost.
pub fn lambda_grid(model: &SanasModel) -> [f64; 3] {
    let m = model.cost_model().order_of_magnitude();
    [10f64.powi(-(m + 1)), 10f64.powi(-m), 10f64.powi(-(m - 1))]
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub params: ParamStore,
    pub baseline: f64,
    /// Number of optimizer updates performed.
    pub step: u64,
    /// Number of completed epochs.
    pub epoch: usize,
    pub rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(model: &SanasModel, cfg: &TrainingConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let params = model.init_params(&cfg.init, &mut rng)?;
        Ok(TrainState {
            params,
            baseline: 0.0,
            step: 0,
            epoch: 0,
            rng,
        })
    }
}

/// One line of the JSON-lines run log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: String,
    pub accuracy: f64,
    pub mean_flops: f64,
    pub mean_flops_per_label: std::collections::BTreeMap<String, f64>,
    pub loss: f64,
    pub baseline: f64,
}

impl EpochRecord {
    fn from_metrics(epoch: usize, split: &str, m: SplitMetrics, baseline: f64) -> Self {
        EpochRecord {
            epoch,
            split: split.to_string(),
            accuracy: m.accuracy,
            mean_flops: m.mean_flops,
            mean_flops_per_label: m.mean_flops_per_label,
            loss: m.loss,
            baseline,
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serialises")
    }
}

/// Called after every epoch with that epoch's records and the updated state.
pub type EpochHook<'a> = dyn FnMut(&[EpochRecord], &TrainState) -> Result<()> + 'a;

fn check_data(train: &[Vec<Frame>]) -> Result<()> {
    if train.is_empty() || train.iter().any(|s| s.is_empty()) {
        return Err(SanasError::Input("training split needs non-empty sequences".into()));
    }
    Ok(())
}

fn apply_update(state: &mut TrainState, mut grads: Gradients, count: usize, cfg: &TrainingConfig, what: &str) -> Result<()> {
    if cfg.fixed_phi {
        grads.remove(PHI_WEIGHT);
    }
    grads.scale(1.0 / count as f64);
    if !grads.is_finite() {
        return Err(SanasError::Numeric(format!("non-finite gradient in {what}")));
    }
    if let Some(c) = cfg.grad_clip {
        let n = grads.global_norm();
        if n > c {
            grads.scale(c / n);
        }
    }
    state.step += 1;
    adam_step(&mut state.params, &mut grads, &cfg.adam(), state.step)
}

struct SequenceOutcome {
    grads: Gradients,
    ret: f64,
    frames: Vec<FrameResult>,
}

fn results_of(frames: &[Frame], logits: impl Iterator<Item = crate::numcore::Tensor>, costs: &[f64]) -> Result<Vec<FrameResult>> {
    frames
        .iter()
        .zip(logits)
        .zip(costs)
        .map(|((f, l), &cost)| {
            let (loss, _) = softmax_xent(&l, f.label)?;
            Ok(FrameResult {
                label: f.label,
                prediction: l.argmax(),
                probs: Vec::new(),
                loss,
                cost,
            })
        })
        .collect()
}

/// SANAS training: sampled architectures, score-function gradient, EMA baseline.
pub fn train(
    model: &SanasModel,
    train_seqs: &[Vec<Frame>],
    val_seqs: &[Vec<Frame>],
    cfg: &TrainingConfig,
    state: &mut TrainState,
    on_epoch: &mut EpochHook<'_>,
) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    check_data(train_seqs)?;
    let mut log = Vec::new();
    while state.epoch < cfg.epochs {
        let epoch = state.epoch + 1;
        let mut order: Vec<usize> = (0..train_seqs.len()).collect();
        order.shuffle(&mut state.rng);
        let mut seen: Vec<Vec<FrameResult>> = Vec::with_capacity(order.len());
        for (k, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let seeds: Vec<u64> = chunk.iter().map(|_| state.rng.next_u64()).collect();
            let params = &state.params;
            let b = state.baseline;
            let outcomes: Vec<SequenceOutcome> = chunk
                .par_iter()
                .zip(seeds.par_iter())
                .map(|(&i, &seed)| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let frames = &train_seqs[i];
                    let (outs, trace) = run_sequence(model, params, frames, &mut Selection::Sample(&mut rng))?;
                    let ret = episode_return(&trace, cfg.lambda);
                    if !ret.is_finite() {
                        return Err(SanasError::Numeric(format!("non-finite loss in epoch {epoch}, batch {k}")));
                    }
                    let grads = reinforce_backward(model, params, &trace, cfg.lambda, b)?;
                    let costs: Vec<f64> = trace.costs.iter().map(|&c| c as f64).collect();
                    let frames = results_of(frames, outs.into_iter().map(|o| o.logits), &costs)?;
                    Ok(SequenceOutcome { grads, ret, frames })
                })
                .collect::<Result<_>>()?;
            let mut parts = Vec::with_capacity(outcomes.len());
            let mut returns = Vec::with_capacity(outcomes.len());
            for o in outcomes {
                parts.push(o.grads);
                returns.push(o.ret);
                seen.push(o.frames);
            }
            let grads = Gradients::sum_pairwise(parts)?;
            apply_update(state, grads, chunk.len(), cfg, &format!("epoch {epoch}, batch {k}"))?;
            for r in returns {
                state.baseline = baseline_update(state.baseline, r, cfg.baseline_decay);
            }
        }
        state.epoch = epoch;
        let mut records = vec![EpochRecord::from_metrics(epoch, "train", summarize(&seen)?, state.baseline)];
        if !val_seqs.is_empty() {
            let m = evaluate_sequences(model, &state.params, val_seqs, &EvalMode::Argmax)?;
            records.push(EpochRecord::from_metrics(epoch, "val", m, state.baseline));
        }
        on_epoch(&records, state)?;
        log.extend(records);
    }
    Ok(log)
}

fn static_pass(
    model: &SanasModel,
    params: &ParamStore,
    frames: &[Frame],
    arch: &ArchSample,
) -> Result<(Gradients, Vec<crate::numcore::Tensor>, f64)> {
    let spec = model.spec();
    let active = active_subgraph(spec, arch);
    let mut grads = Gradients::new();
    let mut logits = Vec::with_capacity(frames.len());
    let mut total = 0.0;
    for f in frames {
        let e = evaluate(spec, &active, &f.features, params)?;
        let (loss, dlogits) = softmax_xent(&e.logits, f.label)?;
        total += loss;
        evaluate_backward(spec, &e, params, Some(&dlogits), None, &mut grads)?;
        logits.push(e.logits);
    }
    Ok((grads, logits, total))
}

/// Summed pathwise gradient of `Σ_t Δ_t` for a fixed sub-graph, and the summed loss.
pub fn static_gradients(
    model: &SanasModel,
    params: &ParamStore,
    frames: &[Frame],
    arch: &ArchSample,
) -> Result<(Gradients, f64)> {
    static_pass(model, params, frames, arch).map(|(g, _, total)| (g, total))
}

/// Plain back-propagation training of one fixed architecture.
pub fn train_static(
    model: &SanasModel,
    train_seqs: &[Vec<Frame>],
    val_seqs: &[Vec<Frame>],
    cfg: &TrainingConfig,
    arch: &ArchSample,
    state: &mut TrainState,
    on_epoch: &mut EpochHook<'_>,
) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    check_data(train_seqs)?;
    let mode = EvalMode::Static(arch.clone());
    let cost = crate::eval::static_cost(model, arch) as f64;
    let mut log = Vec::new();
    while state.epoch < cfg.epochs {
        let epoch = state.epoch + 1;
        let mut order: Vec<usize> = (0..train_seqs.len()).collect();
        order.shuffle(&mut state.rng);
        let mut seen: Vec<Vec<FrameResult>> = Vec::with_capacity(order.len());
        for (k, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let params = &state.params;
            let outcomes: Vec<(Gradients, Vec<FrameResult>)> = chunk
                .par_iter()
                .map(|&i| {
                    let frames = &train_seqs[i];
                    let (g, logits, total) = static_pass(model, params, frames, arch)?;
                    if !total.is_finite() {
                        return Err(SanasError::Numeric(format!("non-finite loss in epoch {epoch}, batch {k}")));
                    }
                    let costs = vec![cost; frames.len()];
                    Ok((g, results_of(frames, logits.into_iter(), &costs)?))
                })
                .collect::<Result<_>>()?;
            let mut parts = Vec::with_capacity(outcomes.len());
            for (g, f) in outcomes {
                parts.push(g);
                seen.push(f);
            }
            let grads = Gradients::sum_pairwise(parts)?;
            apply_update(state, grads, chunk.len(), cfg, &format!("epoch {epoch}, batch {k}"))?;
        }
        state.epoch = epoch;
        let mut records = vec![EpochRecord::from_metrics(epoch, "train", summarize(&seen)?, state.baseline)];
        if !val_seqs.is_empty() {
            let m = evaluate_sequences(model, &state.params, val_seqs, &mode)?;
            records.push(EpochRecord::from_metrics(epoch, "val", m, state.baseline));
        }
        on_epoch(&records, state)?;
        log.extend(records);
    }
    Ok(log)
}
