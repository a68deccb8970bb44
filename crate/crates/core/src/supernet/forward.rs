use crate::error::{Result, SanasError};
use crate::numcore::{
    conv2d, conv2d_backward, linear, linear_backward, relu, relu_backward, Gradients, ParamStore, Tensor,
};
use crate::supernet::{ActiveSet, Activation, Edge, EdgeModule, SuperNetworkSpec};

/// Name of the `[d_phi, feature_dim]` projection producing the controller feature vector.
pub const PHI_WEIGHT: &str = "phi.weight";

/// Output of one super-network evaluation plus what backward needs.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub logits: Tensor,
    pub phi: Tensor,
    cache: EvalCache,
}

#[derive(Clone, Debug)]
struct EvalCache {
    active: ActiveSet,
    /// Summed incoming edge outputs per layer, before the activation.
    pre: Vec<Option<Tensor>>,
    /// Layer values after the activation (the input layer holds `x`).
    post: Vec<Option<Tensor>>,
}

impl Evaluation {
    pub fn active(&self) -> &ActiveSet {
        &self.cache.active
    }

    /// Activated value of `layer`, `None` when the layer was not reached.
    pub fn layer_value(&self, layer: usize) -> Option<&Tensor> {
        self.cache.post[layer].as_ref()
    }

    pub fn pre_activation(&self, layer: usize) -> Option<&Tensor> {
        self.cache.pre[layer].as_ref()
    }
}

fn edge_label(spec: &SuperNetworkSpec, e: &Edge) -> String {
    format!("{} -> {}", spec.layers()[e.from].name, spec.layers()[e.to].name)
}

fn apply_edge(edge: &Edge, params: &ParamStore, x: &Tensor) -> Result<Tensor> {
    match edge.module {
        EdgeModule::Identity => Ok(x.clone()),
        EdgeModule::Linear | EdgeModule::FlattenLinear => {
            linear(x, params.get(&edge.weight_name)?, Some(params.get(&edge.bias_name)?))
        }
        EdgeModule::Conv2d { stride, .. } => conv2d(
            x,
            params.get(&edge.weight_name)?,
            params.get(&edge.bias_name)?,
            stride,
        ),
    }
}

fn activate(act: Activation, pre: &Tensor) -> Tensor {
    match act {
        Activation::None => pre.clone(),
        Activation::Relu => relu(pre),
    }
}

/// Forward pass over the active edges in topological order, summing incoming
/// edge outputs at each layer.
///
/// If the output layer is not reached the logits are the classifier edge's
/// bias; if the feature layer is not reached `Φ` is the zero vector.
pub fn evaluate(spec: &SuperNetworkSpec, active: &ActiveSet, x: &Tensor, params: &ParamStore) -> Result<Evaluation> {
    if x.shape() != spec.input_layer().shape.as_slice() {
        return Err(SanasError::Input(format!(
            "input has shape {:?}, graph expects {:?}",
            x.shape(),
            spec.input_layer().shape
        )));
    }
    let n = spec.num_layers();
    let mut pre: Vec<Option<Tensor>> = vec![None; n];
    let mut post: Vec<Option<Tensor>> = vec![None; n];
    post[0] = Some(x.clone());
    let edges = spec.edges();
    // edges are sorted by (from, to); bucket by destination
    for j in 1..n {
        let mut acc: Option<Tensor> = None;
        for (k, e) in edges.iter().enumerate() {
            if e.to != j || !active.contains(k) {
                continue;
            }
            let src = post[e.from].as_ref().expect("active edges start at reached layers");
            let mut out = apply_edge(e, params, src)?;
            if !out.is_finite() {
                return Err(SanasError::Numeric(format!(
                    "non-finite activation on edge {}",
                    edge_label(spec, e)
                )));
            }
            if out.shape() != spec.layers()[j].shape.as_slice() {
                out = out.reshape(&spec.layers()[j].shape)?;
            }
            match acc.as_mut() {
                None => acc = Some(out),
                Some(sum) => sum.add_assign(&out)?,
            }
        }
        if let Some(sum) = acc {
            post[j] = Some(activate(spec.layers()[j].activation, &sum));
            pre[j] = Some(sum);
        }
    }

    let out_idx = spec.output_index();
    let logits = match &post[out_idx] {
        Some(v) => v.clone().flatten(),
        None => params.get(&spec.classifier_edge().bias_name)?.clone(),
    };
    let w_phi = params.get(PHI_WEIGHT)?;
    let phi = match &post[spec.feature_layer()] {
        Some(feat) => linear(feat, w_phi, None)?,
        None => Tensor::zeros(&[w_phi.shape()[0]]),
    };
    if !phi.is_finite() {
        return Err(SanasError::Numeric("non-finite feature vector".into()));
    }
    Ok(Evaluation {
        logits,
        phi,
        cache: EvalCache {
            active: active.clone(),
            pre,
            post,
        },
    })
}

fn accumulate_into(slot: &mut Option<Tensor>, g: Tensor) -> Result<()> {
    match slot.as_mut() {
        None => *slot = Some(g),
        Some(acc) => acc.add_assign(&g)?,
    }
    Ok(())
}

/// Reverse pass of [`evaluate`] for upstream gradients on the logits and,
/// optionally, on `Φ`. Accumulates parameter gradients into `grads`.
pub fn evaluate_backward(
    spec: &SuperNetworkSpec,
    eval: &Evaluation,
    params: &ParamStore,
    dlogits: Option<&Tensor>,
    dphi: Option<&Tensor>,
    grads: &mut Gradients,
) -> Result<()> {
    let n = spec.num_layers();
    let cache = &eval.cache;
    let mut dpost: Vec<Option<Tensor>> = vec![None; n];
    let out_idx = spec.output_index();

    if let Some(dl) = dlogits {
        if cache.post[out_idx].is_some() {
            dpost[out_idx] = Some(dl.clone().reshape(&spec.layers()[out_idx].shape)?);
        } else {
            grads.accumulate(&spec.classifier_edge().bias_name, dl.clone())?;
        }
    }
    if let Some(dp) = dphi {
        let feat_idx = spec.feature_layer();
        if let Some(feat) = cache.post[feat_idx].as_ref() {
            let w_phi = params.get(PHI_WEIGHT)?;
            let g = linear_backward(feat, w_phi, dp, feat_idx != 0);
            grads.accumulate(PHI_WEIGHT, g.dw)?;
            if let Some(dx) = g.dx {
                accumulate_into(&mut dpost[feat_idx], dx)?;
            }
        }
    }

    let edges = spec.edges();
    for j in (1..n).rev() {
        let Some(dv) = dpost[j].take() else { continue };
        let pre = cache.pre[j].as_ref().expect("a layer with a gradient was reached");
        let dpre = match spec.layers()[j].activation {
            Activation::None => dv,
            Activation::Relu => relu_backward(pre, &dv),
        };
        for (k, e) in edges.iter().enumerate() {
            if e.to != j || !cache.active.contains(k) {
                continue;
            }
            let src = cache.post[e.from].as_ref().expect("active edge source");
            let need_dx = e.from != 0;
            match e.module {
                EdgeModule::Identity => {
                    if need_dx {
                        accumulate_into(&mut dpost[e.from], dpre.clone())?;
                    }
                }
                EdgeModule::Linear | EdgeModule::FlattenLinear => {
                    let w = params.get(&e.weight_name)?;
                    let dflat = dpre.clone().flatten();
                    let g = linear_backward(src, w, &dflat, need_dx);
                    grads.accumulate(&e.weight_name, g.dw)?;
                    grads.accumulate(&e.bias_name, g.db)?;
                    if let Some(dx) = g.dx {
                        accumulate_into(&mut dpost[e.from], dx)?;
                    }
                }
                EdgeModule::Conv2d { stride, .. } => {
                    let k_t = params.get(&e.weight_name)?;
                    let g = conv2d_backward(src, k_t, stride, &dpre, need_dx)?;
                    grads.accumulate(&e.weight_name, g.dk)?;
                    grads.accumulate(&e.bias_name, g.db)?;
                    if let Some(dx) = g.dx {
                        accumulate_into(&mut dpost[e.from], dx)?;
                    }
                }
            }
        }
    }
    Ok(())
}
