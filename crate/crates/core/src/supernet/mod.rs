//! The super-network search space: a DAG of layers whose edges carry small
//! modules, Bernoulli sub-graph sampling, pruning to contributing edges,
//! evaluation and FLOPs accounting.

mod arch;
mod cost;
mod forward;
mod graph;

pub use arch::{
    active_subgraph, log_prob, log_prob_grad, most_probable_architecture, sample_architecture, ActiveSet,
    ArchSample, GammaMatrix, GAMMA_CLAMP,
};
pub(crate) use arch::edge_log_prob;
pub use cost::{architecture_cost, controller_flops, edge_cost, linear_flops, CostModel};
pub use forward::{evaluate, evaluate_backward, Evaluation, PHI_WEIGHT};
pub use graph::{
    build_graph, Activation, Edge, EdgeDesc, EdgeKind, EdgeModule, GraphDescription, Layer, LayerDesc,
    SuperNetworkSpec,
};

use rand::{Rng, RngCore};

use crate::error::Result;
use crate::numcore::{ParamStore, Tensor};

/// He-uniform weights and zero biases for every parameterised edge, plus the
/// `Φ` projection of width `d_phi`.
pub fn init_network_params(spec: &SuperNetworkSpec, d_phi: usize, rng: &mut dyn RngCore, store: &mut ParamStore) -> Result<()> {
    for e in spec.edges() {
        let Some(wshape) = e.weight_shape() else { continue };
        let fan_in: usize = wshape[1..].iter().product();
        let bound = (6.0 / fan_in as f64).sqrt();
        let n: usize = wshape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        store.insert(e.weight_name.clone(), Tensor::new(wshape, data)?)?;
        store.insert(e.bias_name.clone(), Tensor::zeros(&e.bias_shape().expect("has params")))?;
    }
    let feat = spec.feature_dim();
    let bound = (3.0 / feat as f64).sqrt();
    let data = (0..d_phi * feat).map(|_| rng.gen_range(-bound..bound)).collect();
    store.insert(PHI_WEIGHT, Tensor::new(vec![d_phi, feat], data)?)?;
    Ok(())
}
