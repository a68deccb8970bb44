//! The recurrent cell that picks a sub-graph at every timestep.
//!
//! Per step: `Γ_t = σ(W_h z_t + b_h)`, `H_t ~ B(Γ_t)` (or its mode at
//! inference), evaluate `E ∘ H_t` on `x_t` to get logits and `Φ_t`, then
//! `z_{t+1} = GRU(z_t, Φ_t)`.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::audio::Frame;
use crate::error::{Result, SanasError};
use crate::numcore::{gru_cell, linear, sigmoid, softmax_xent, GruCache, GruParams, ParamStore, Tensor};
use crate::supernet::{
    active_subgraph, architecture_cost, controller_flops, edge_log_prob, evaluate,
    init_network_params, most_probable_architecture, sample_architecture, ArchSample, CostModel, Evaluation,
    GammaMatrix, SuperNetworkSpec,
};

pub const GAMMA_WEIGHT: &str = "ctrl.gamma.weight";
pub const GAMMA_BIAS: &str = "ctrl.gamma.bias";
pub const GRU_NAMES: [&str; 9] = [
    "ctrl.gru.w_update",
    "ctrl.gru.u_update",
    "ctrl.gru.b_update",
    "ctrl.gru.w_reset",
    "ctrl.gru.u_reset",
    "ctrl.gru.b_reset",
    "ctrl.gru.w_cand",
    "ctrl.gru.u_cand",
    "ctrl.gru.b_cand",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    pub d_z: usize,
    pub d_phi: usize,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig { d_z: 64, d_phi: 64 }
    }
}

/// Initialisation knobs for a fresh parameter set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitConfig {
    /// Initial value of every `Γ` logit bias; positive values start training
    /// from mostly-full architectures.
    pub gamma_bias: f64,
    /// Half-width of the uniform init of `W_h` and the GRU weights.
    pub controller_scale: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            gamma_bias: 1.5,
            controller_scale: 0.3,
        }
    }
}

/// A super-network together with its controller dimensions and cost model.
#[derive(Clone, Debug, PartialEq)]
pub struct SanasModel {
    spec: SuperNetworkSpec,
    controller: ControllerConfig,
    cost: CostModel,
}

impl SanasModel {
    pub fn new(spec: SuperNetworkSpec, controller: ControllerConfig) -> Result<Self> {
        if controller.d_z == 0 || controller.d_phi == 0 {
            return Err(SanasError::Config("controller dimensions must be positive".into()));
        }
        let c_ctrl = controller_flops(controller.d_z, controller.d_phi, spec.feature_dim(), spec.num_edges());
        let cost = CostModel::new(&spec, c_ctrl);
        Ok(SanasModel { spec, controller, cost })
    }

    pub fn charging_inactive_edges(mut self, yes: bool) -> Self {
        self.cost = self.cost.charging_inactive_edges(yes);
        self
    }

    pub fn spec(&self) -> &SuperNetworkSpec {
        &self.spec
    }

    pub fn controller(&self) -> ControllerConfig {
        self.controller
    }

    pub fn cost_model(&self) -> &CostModel {
        &self.cost
    }

    /// Every parameter name with its shape, in store order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for e in self.spec.edges() {
            if let (Some(w), Some(b)) = (e.weight_shape(), e.bias_shape()) {
                out.push((e.weight_name.clone(), w));
                out.push((e.bias_name.clone(), b));
            }
        }
        let (dz, dp, ne) = (self.controller.d_z, self.controller.d_phi, self.spec.num_edges());
        out.push((crate::supernet::PHI_WEIGHT.to_string(), vec![dp, self.spec.feature_dim()]));
        out.push((GAMMA_WEIGHT.to_string(), vec![ne, dz]));
        out.push((GAMMA_BIAS.to_string(), vec![ne]));
        for (i, name) in GRU_NAMES.iter().enumerate() {
            let shape = match i % 3 {
                0 => vec![dz, dp],
                1 => vec![dz, dz],
                _ => vec![dz],
            };
            out.push((name.to_string(), shape));
        }
        out
    }

    pub fn init_params(&self, init: &InitConfig, rng: &mut dyn RngCore) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        init_network_params(&self.spec, self.controller.d_phi, rng, &mut store)?;
        let (dz, dp, ne) = (self.controller.d_z, self.controller.d_phi, self.spec.num_edges());
        let s = init.controller_scale;
        let mut uniform = |shape: Vec<usize>| -> Result<Tensor> {
            let n = shape.iter().product();
            let data = (0..n).map(|_| if s > 0.0 { rng.gen_range(-s..s) } else { 0.0 }).collect();
            Tensor::new(shape, data)
        };
        store.insert(GAMMA_WEIGHT, uniform(vec![ne, dz])?)?;
        store.insert(GAMMA_BIAS, Tensor::filled(&[ne], init.gamma_bias))?;
        for (i, name) in GRU_NAMES.iter().enumerate() {
            let t = match i % 3 {
                0 => uniform(vec![dz, dp])?,
                1 => uniform(vec![dz, dz])?,
                _ => Tensor::zeros(&[dz]),
            };
            store.insert(*name, t)?;
        }
        Ok(store)
    }

    /// Checks that `params` holds exactly this model's parameters.
    pub fn check_params(&self, params: &ParamStore) -> Result<()> {
        let expected = self.param_shapes();
        if expected.len() != params.len() {
            return Err(SanasError::Format(format!(
                "parameter set has {} tensors, the model needs {}",
                params.len(),
                expected.len()
            )));
        }
        for (name, shape) in expected {
            let t = params
                .get(&name)
                .map_err(|_| SanasError::Format(format!("parameter {name:?} missing for this graph")))?;
            if t.shape() != shape.as_slice() {
                return Err(SanasError::Format(format!(
                    "parameter {name:?} has shape {:?}, the graph needs {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    pub(crate) fn gru_params<'a>(&self, params: &'a ParamStore) -> Result<GruParams<'a>> {
        Ok(GruParams {
            w_a: params.get(GRU_NAMES[0])?,
            u_a: params.get(GRU_NAMES[1])?,
            b_a: params.get(GRU_NAMES[2])?,
            w_r: params.get(GRU_NAMES[3])?,
            u_r: params.get(GRU_NAMES[4])?,
            b_r: params.get(GRU_NAMES[5])?,
            w_c: params.get(GRU_NAMES[6])?,
            u_c: params.get(GRU_NAMES[7])?,
            b_c: params.get(GRU_NAMES[8])?,
        })
    }
}

/// Recurrent context `z_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct ControllerState {
    pub z: Tensor,
}

/// `z_1`: the zero vector.
pub fn init_state(d_z: usize) -> Result<ControllerState> {
    if d_z == 0 {
        return Err(SanasError::Config("d_z must be at least 1".into()));
    }
    Ok(ControllerState {
        z: Tensor::zeros(&[d_z]),
    })
}

/// `Γ = σ(W_h z + b_h)` scattered onto the edges of `E`.
pub fn gamma_from_state(model: &SanasModel, params: &ParamStore, state: &ControllerState) -> Result<GammaMatrix> {
    let probs = gamma_probs(params, &state.z)?;
    GammaMatrix::from_edge_probs(model.spec(), &probs)
}

fn gamma_probs(params: &ParamStore, z: &Tensor) -> Result<Vec<f64>> {
    let logits = linear(z, params.get(GAMMA_WEIGHT)?, Some(params.get(GAMMA_BIAS)?))?;
    logits.ensure_finite("gamma logits")?;
    Ok(sigmoid(&logits).into_data())
}

/// How `H_t` is chosen.
pub enum Selection<'a> {
    /// Draw from `B(Γ_t)` (training).
    Sample(&'a mut dyn RngCore),
    /// Take the most probable architecture (inference).
    Argmax,
    /// Use a caller-supplied architecture per timestep.
    Fixed(&'a [ArchSample]),
}

impl Selection<'_> {
    fn records_gradients(&self) -> bool {
        !matches!(self, Selection::Argmax)
    }
}

#[derive(Clone, Debug)]
pub struct StepOutput {
    pub logits: Tensor,
    pub gamma: GammaMatrix,
    pub arch: ArchSample,
    pub log_prob: f64,
    pub cost: u64,
    pub phi: Tensor,
    pub z_next: ControllerState,
}

/// Forward intermediates of one step, kept for the backward pass.
#[derive(Clone, Debug)]
pub(crate) struct StepCache {
    pub z: Tensor,
    pub probs: Vec<f64>,
    pub arch: ArchSample,
    pub eval: Evaluation,
    pub gru: GruCache,
    pub dlogits: Option<Tensor>,
}

fn step_impl(
    model: &SanasModel,
    params: &ParamStore,
    state: &ControllerState,
    x: &Tensor,
    selection: &mut Selection<'_>,
    t: usize,
) -> Result<(StepOutput, Evaluation, GruCache, Vec<f64>)> {
    let spec = model.spec();
    let probs = gamma_probs(params, &state.z)?;
    let gamma = GammaMatrix::from_edge_probs(spec, &probs)?;
    let arch = match selection {
        Selection::Sample(rng) => sample_architecture(spec, &gamma, &mut **rng)?,
        Selection::Argmax => most_probable_architecture(spec, &gamma),
        Selection::Fixed(archs) => archs
            .get(t)
            .cloned()
            .ok_or_else(|| SanasError::Input(format!("no fixed architecture for timestep {t}")))?,
    };
    let active = active_subgraph(spec, &arch);
    let eval = evaluate(spec, &active, x, params)?;
    let cost = architecture_cost(spec, &arch, model.cost_model());
    let log_prob = edge_log_prob(&probs, arch.bits());
    let (z_next, gru) = gru_cell(model.gru_params(params)?, &state.z, &eval.phi)?;
    z_next.ensure_finite("controller state")?;
    let out = StepOutput {
        logits: eval.logits.clone(),
        gamma,
        arch,
        log_prob,
        cost,
        phi: eval.phi.clone(),
        z_next: ControllerState { z: z_next },
    };
    Ok((out, eval, gru, probs))
}

/// One SANAS timestep. `t` indexes [`Selection::Fixed`] and is ignored otherwise.
pub fn sanas_step(
    model: &SanasModel,
    params: &ParamStore,
    state: &ControllerState,
    x: &Tensor,
    selection: &mut Selection<'_>,
    t: usize,
) -> Result<StepOutput> {
    step_impl(model, params, state, x, selection, t).map(|(out, ..)| out)
}

/// Per-timestep `(log P(A_t|z_t), Δ_t, C(A_t))` of one sequence.
#[derive(Clone, Debug)]
pub struct EpisodeTrace {
    pub log_probs: Vec<f64>,
    pub losses: Vec<f64>,
    pub costs: Vec<u64>,
    pub(crate) record: Option<Vec<StepCache>>,
}

impl EpisodeTrace {
    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }

    /// Whether forward intermediates were kept (sample or fixed selection).
    pub fn is_recorded(&self) -> bool {
        self.record.is_some()
    }

    pub fn total_loss(&self) -> f64 {
        self.losses.iter().sum()
    }

    pub fn total_cost(&self) -> f64 {
        self.costs.iter().map(|&c| c as f64).sum()
    }
}

/// Runs the recurrence left to right from `z_1 = 0` over `frames`.
pub fn run_sequence(
    model: &SanasModel,
    params: &ParamStore,
    frames: &[Frame],
    selection: &mut Selection<'_>,
) -> Result<(Vec<StepOutput>, EpisodeTrace)> {
    if frames.is_empty() {
        return Err(SanasError::Input("run_sequence needs at least one frame".into()));
    }
    let recording = selection.records_gradients();
    let mut state = init_state(model.controller().d_z)?;
    let mut outputs = Vec::with_capacity(frames.len());
    let mut trace = EpisodeTrace {
        log_probs: Vec::with_capacity(frames.len()),
        losses: Vec::with_capacity(frames.len()),
        costs: Vec::with_capacity(frames.len()),
        record: recording.then(Vec::new),
    };
    for (t, frame) in frames.iter().enumerate() {
        let (out, eval, gru, probs) = step_impl(model, params, &state, &frame.features, selection, t)?;
        let (loss, dlogits) = softmax_xent(&out.logits, frame.label)?;
        trace.log_probs.push(out.log_prob);
        trace.losses.push(loss);
        trace.costs.push(out.cost);
        if let Some(rec) = trace.record.as_mut() {
            rec.push(StepCache {
                z: state.z.clone(),
                probs,
                arch: out.arch.clone(),
                eval,
                gru,
                dlogits: Some(dlogits),
            });
        }
        state = out.z_next.clone();
        outputs.push(out);
    }
    Ok((outputs, trace))
}
