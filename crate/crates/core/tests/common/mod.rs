#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sanas_core::audio::Frame;
use sanas_core::controller::{run_sequence, ControllerConfig, SanasModel, Selection};
use sanas_core::numcore::{ParamStore, Tensor};
use sanas_core::supernet::{build_graph, ArchSample, GraphDescription};
use sanas_core::training::episode_return;

/// `in[1] -> feat[2] -> out[2]`, both edges linear.
pub const TWO_EDGE_GRAPH: &str = r#"{
  "name": "two-edge",
  "layers": [
    { "name": "in", "shape": [1] },
    { "name": "feat", "shape": [2], "activation": "relu" },
    { "name": "out", "shape": [2] }
  ],
  "edges": [
    { "from": "in", "to": "feat", "kind": "linear" },
    { "from": "feat", "to": "out", "kind": "linear" }
  ],
  "feature_layer": "feat"
}"#;

/// Three paths into the feature layer, one of them a skip from the input.
pub const SMALL_GRAPH: &str = r#"{
  "name": "small",
  "layers": [
    { "name": "in", "shape": [3] },
    { "name": "a", "shape": [4], "activation": "relu" },
    { "name": "b", "shape": [4], "activation": "relu" },
    { "name": "feat", "shape": [3], "activation": "relu" },
    { "name": "out", "shape": [3] }
  ],
  "edges": [
    { "from": "in", "to": "a", "kind": "linear" },
    { "from": "a", "to": "b", "kind": "linear" },
    { "from": "b", "to": "feat", "kind": "linear" },
    { "from": "a", "to": "feat", "kind": "linear" },
    { "from": "in", "to": "feat", "kind": "linear" },
    { "from": "feat", "to": "out", "kind": "linear" }
  ],
  "feature_layer": "feat",
  "backbone": [["in", "a"], ["a", "b"], ["b", "feat"], ["feat", "out"]]
}"#;

pub fn model_from(json: &str, d_z: usize, d_phi: usize) -> SanasModel {
    let spec = build_graph(&GraphDescription::from_json(json).unwrap()).unwrap();
    SanasModel::new(spec, ControllerConfig { d_z, d_phi }).unwrap()
}

/// Every parameter drawn uniformly from `[-scale, scale]`.
pub fn random_params(model: &SanasModel, scale: f64, seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for (name, shape) in model.param_shapes() {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
        store.insert(name, Tensor::new(shape, data).unwrap()).unwrap();
    }
    store
}

pub fn random_frames(model: &SanasModel, n: usize, seed: u64) -> Vec<Frame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = model.spec().input_layer().shape.clone();
    let classes = model.spec().output_dim();
    (0..n)
        .map(|i| {
            let len: usize = shape.iter().product();
            let data = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
            Frame {
                start: i as f64 * 0.2,
                features: Tensor::new(shape.clone(), data).unwrap(),
                label: rng.gen_range(0..classes),
            }
        })
        .collect()
}

pub fn names(store: &ParamStore) -> Vec<String> {
    store.names().to_vec()
}

pub fn flatten(store: &ParamStore) -> Vec<f64> {
    store.iter().flat_map(|(_, t)| t.data().to_vec()).collect()
}

pub fn with_flat(store: &ParamStore, flat: &[f64]) -> ParamStore {
    let mut out = store.clone();
    let mut off = 0;
    for name in names(store) {
        let t = out.get_mut(&name).unwrap();
        let n = t.len();
        t.data_mut().copy_from_slice(&flat[off..off + n]);
        off += n;
    }
    out
}

/// All per-timestep architectures of a `t`-step sequence.
pub fn all_sequences(model: &SanasModel, t: usize) -> Vec<Vec<ArchSample>> {
    let per = 1u64 << model.spec().num_edges();
    let total = per.pow(t as u32);
    (0..total)
        .map(|mut code| {
            (0..t)
                .map(|_| {
                    let a = ArchSample::from_code(model.spec(), code % per);
                    code /= per;
                    a
                })
                .collect()
        })
        .collect()
}

/// `E[L]` by enumerating every architecture sequence.
pub fn exact_expected_return(model: &SanasModel, params: &ParamStore, frames: &[Frame], lambda: f64) -> f64 {
    all_sequences(model, frames.len())
        .iter()
        .map(|archs| {
            let (_, trace) = run_sequence(model, params, frames, &mut Selection::Fixed(archs)).unwrap();
            let p: f64 = trace.log_probs.iter().sum::<f64>().exp();
            p * episode_return(&trace, lambda)
        })
        .sum()
}
