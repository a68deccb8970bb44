use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SanasError};
use crate::numcore::conv2d_output_dims;

const FIG2_JSON: &str = include_str!("../../graphs/cnn_trad_fpool3_shortcuts.json");
const TOY_JSON: &str = include_str!("../../graphs/toy.json");

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    None,
    Relu,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerDesc {
    pub name: String,
    pub shape: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeKind {
    Conv2d,
    Linear,
    FlattenLinear,
    Identity,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeDesc {
    pub from: String,
    pub to: String,
    pub kind: EdgeKind,
    /// (frequency, time) kernel size; conv2d only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<[usize; 2]>,
    /// (frequency, time) stride; conv2d only, defaults to (1, 1).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<[usize; 2]>,
}

/// On-disk graph description (JSON); the schema is in the top-level README.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphDescription {
    pub name: String,
    pub layers: Vec<LayerDesc>,
    pub edges: Vec<EdgeDesc>,
    /// Defaults to the first declared layer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<String>,
    /// Defaults to the last declared layer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    /// Layer tapped for the controller feature vector; must feed the output
    /// through a linear "classifier" edge.
    pub feature_layer: String,
    /// Edges of the static base model, as `[from, to]` pairs.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub backbone: Vec<[String; 2]>,
}

impl GraphDescription {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| SanasError::Config(format!("graph description: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SanasError::io(path, e))?;
        Self::from_json(&text)
    }

    /// The keyword-spotting search space: two convolutions, three linears and
    /// 128-wide shortcut linears into a merge layer before the classifier.
    pub fn cnn_trad_fpool3_shortcuts() -> Self {
        Self::from_json(FIG2_JSON).expect("built-in graph parses")
    }

    /// Small search space over the same 40x98 input, sized for CPU training.
    pub fn toy() -> Self {
        Self::from_json(TOY_JSON).expect("built-in graph parses")
    }

    /// Resolves `builtin:fig2`, `builtin:toy` or a file path.
    pub fn resolve(reference: &str) -> Result<Self> {
        match reference {
            "builtin:fig2" | "builtin:cnn-trad-fpool3" => Ok(Self::cnn_trad_fpool3_shortcuts()),
            "builtin:toy" => Ok(Self::toy()),
            other if other.starts_with("builtin:") => {
                Err(SanasError::Config(format!("unknown built-in graph {other:?}")))
            }
            path => Self::from_file(Path::new(path)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeModule {
    Conv2d { kernel: (usize, usize), stride: (usize, usize) },
    Linear,
    FlattenLinear,
    Identity,
}

impl EdgeModule {
    pub fn has_params(&self) -> bool {
        !matches!(self, EdgeModule::Identity)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub name: String,
    pub shape: Vec<usize>,
    pub activation: Activation,
}

impl Layer {
    pub fn size(&self) -> usize {
        self.shape.iter().product()
    }
}

/// A resolved edge module with its endpoint shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct Edge {
    /// Layer indices in topological order.
    pub from: usize,
    pub to: usize,
    pub module: EdgeModule,
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
    pub weight_name: String,
    pub bias_name: String,
}

impl Edge {
    pub fn weight_shape(&self) -> Option<Vec<usize>> {
        match self.module {
            EdgeModule::Conv2d { kernel, .. } => {
                Some(vec![self.out_shape[0], self.in_shape[0], kernel.0, kernel.1])
            }
            EdgeModule::Linear | EdgeModule::FlattenLinear => {
                Some(vec![self.out_shape[0], self.in_shape.iter().product()])
            }
            EdgeModule::Identity => None,
        }
    }

    pub fn bias_shape(&self) -> Option<Vec<usize>> {
        self.module.has_params().then(|| vec![self.out_shape[0]])
    }
}

/// Validated super-network: layers in topological order (input first,
/// output last) and edges sorted by `(from, to)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SuperNetworkSpec {
    description: GraphDescription,
    layers: Vec<Layer>,
    edges: Vec<Edge>,
    edge_at: Vec<Option<usize>>,
    feature_layer: usize,
    classifier_edge: usize,
    backbone: Vec<usize>,
}

impl SuperNetworkSpec {
    pub fn description(&self) -> &GraphDescription {
        &self.description
    }

    pub fn name(&self) -> &str {
        &self.description.name
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn input_layer(&self) -> &Layer {
        &self.layers[0]
    }

    pub fn output_index(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.output_index()].size()
    }

    pub fn feature_layer(&self) -> usize {
        self.feature_layer
    }

    pub fn feature_dim(&self) -> usize {
        self.layers[self.feature_layer].size()
    }

    pub fn classifier_edge(&self) -> &Edge {
        &self.edges[self.classifier_edge]
    }

    /// Edge index for the pair `(from, to)` of layer indices, if `e_{from,to} = 1`.
    pub fn edge_between(&self, from: usize, to: usize) -> Option<usize> {
        let n = self.layers.len();
        if from >= n || to >= n {
            return None;
        }
        self.edge_at[from * n + to]
    }

    /// Dense `E` in topological order.
    pub fn edge_matrix(&self) -> Vec<Vec<bool>> {
        let n = self.layers.len();
        (0..n)
            .map(|i| (0..n).map(|j| self.edge_at[i * n + j].is_some()).collect())
            .collect()
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    /// Indices of the backbone edges; all edges when no backbone is declared.
    pub fn backbone_edges(&self) -> &[usize] {
        &self.backbone
    }

    pub fn topo_names(&self) -> Vec<&str> {
        self.layers.iter().map(|l| l.name.as_str()).collect()
    }
}

fn resolve_module(desc: &EdgeDesc, from: &LayerDesc, to: &LayerDesc) -> Result<EdgeModule> {
    let label = format!("edge {} -> {}", desc.from, desc.to);
    let mismatch = |why: String| SanasError::Config(format!("{label}: {why}"));
    if desc.kind != EdgeKind::Conv2d && (desc.kernel.is_some() || desc.stride.is_some()) {
        return Err(mismatch("kernel/stride only apply to conv2d edges".into()));
    }
    match desc.kind {
        EdgeKind::Conv2d => {
            let kernel = desc.kernel.ok_or_else(|| mismatch("conv2d edge needs a kernel".into()))?;
            let stride = desc.stride.unwrap_or([1, 1]);
            let [c_in, f, t] = from.shape[..] else {
                return Err(mismatch(format!("conv2d input layer shape {:?} is not [C, F, T]", from.shape)));
            };
            let [c_out, fo, to_] = to.shape[..] else {
                return Err(mismatch(format!("conv2d output layer shape {:?} is not [C, F, T]", to.shape)));
            };
            let _ = c_in;
            let (ef, et) = conv2d_output_dims(f, t, kernel[0], kernel[1], (stride[0], stride[1])).ok_or_else(|| {
                mismatch(format!(
                    "kernel {kernel:?} stride {stride:?} does not fit input {:?}",
                    from.shape
                ))
            })?;
            if (ef, et) != (fo, to_) {
                return Err(mismatch(format!(
                    "conv2d of {:?} with kernel {kernel:?} stride {stride:?} yields [{c_out}, {ef}, {et}], layer {} is {:?}",
                    from.shape, to.name, to.shape
                )));
            }
            Ok(EdgeModule::Conv2d {
                kernel: (kernel[0], kernel[1]),
                stride: (stride[0], stride[1]),
            })
        }
        EdgeKind::Linear => {
            if from.shape.len() != 1 || to.shape.len() != 1 {
                return Err(mismatch(format!(
                    "linear needs 1-D endpoints, got {:?} -> {:?} (use flatten-linear)",
                    from.shape, to.shape
                )));
            }
            Ok(EdgeModule::Linear)
        }
        EdgeKind::FlattenLinear => {
            if to.shape.len() != 1 {
                return Err(mismatch(format!("flatten-linear output must be 1-D, got {:?}", to.shape)));
            }
            Ok(EdgeModule::FlattenLinear)
        }
        EdgeKind::Identity => {
            if from.shape != to.shape {
                return Err(mismatch(format!(
                    "identity needs equal shapes, got {:?} -> {:?}",
                    from.shape, to.shape
                )));
            }
            Ok(EdgeModule::Identity)
        }
    }
}

/// Walks predecessors among the nodes Kahn's algorithm could not order
/// until a node repeats, then returns that cycle by name.
fn find_cycle(names: &[&str], preds: &[Vec<usize>], stuck: &[bool]) -> String {
    let start = stuck.iter().position(|&s| s).expect("a stuck node");
    let mut seen = vec![usize::MAX; names.len()];
    let mut path = Vec::new();
    let mut node = start;
    while seen[node] == usize::MAX {
        seen[node] = path.len();
        path.push(node);
        node = *preds[node].iter().find(|&&p| stuck[p]).expect("stuck node has a stuck predecessor");
    }
    let mut cycle: Vec<&str> = path[seen[node]..].iter().rev().map(|&i| names[i]).collect();
    cycle.push(cycle[0]);
    cycle.join(" -> ")
}

/// Validates a description and computes the topological order.
pub fn build_graph(desc: &GraphDescription) -> Result<SuperNetworkSpec> {
    let n = desc.layers.len();
    if n < 2 {
        return Err(SanasError::Config("a super-network needs at least two layers".into()));
    }
    let mut by_name = HashMap::new();
    for (i, l) in desc.layers.iter().enumerate() {
        if l.shape.is_empty() || l.shape.iter().any(|&d| d == 0) {
            return Err(SanasError::Config(format!("layer {:?} has invalid shape {:?}", l.name, l.shape)));
        }
        if by_name.insert(l.name.as_str(), i).is_some() {
            return Err(SanasError::Config(format!("duplicate layer name {:?}", l.name)));
        }
    }
    let lookup = |name: &str| {
        by_name
            .get(name)
            .copied()
            .ok_or_else(|| SanasError::Config(format!("unknown layer {name:?}")))
    };
    let input = match &desc.input {
        Some(name) => lookup(name)?,
        None => 0,
    };
    let output = match &desc.output {
        Some(name) => lookup(name)?,
        None => n - 1,
    };
    if input == output {
        return Err(SanasError::Config("input and output layer must differ".into()));
    }

    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut succs: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut seen_pairs = std::collections::HashSet::new();
    for e in &desc.edges {
        let (a, b) = (lookup(&e.from)?, lookup(&e.to)?);
        if a == b {
            return Err(SanasError::Config(format!("self-loop on layer {:?}", e.from)));
        }
        if !seen_pairs.insert((a, b)) {
            return Err(SanasError::Config(format!("duplicate edge {} -> {}", e.from, e.to)));
        }
        preds[b].push(a);
        succs[a].push(b);
    }

    // Kahn's algorithm; ready nodes are taken in declaration order.
    let mut indeg: Vec<usize> = preds.iter().map(Vec::len).collect();
    let mut done = vec![false; n];
    let mut order = Vec::with_capacity(n);
    loop {
        let next = (0..n).find(|&i| !done[i] && indeg[i] == 0);
        let Some(v) = next else { break };
        done[v] = true;
        order.push(v);
        for &s in &succs[v] {
            indeg[s] -= 1;
        }
    }
    if order.len() < n {
        let names: Vec<&str> = desc.layers.iter().map(|l| l.name.as_str()).collect();
        let stuck: Vec<bool> = done.iter().map(|d| !d).collect();
        return Err(SanasError::Config(format!(
            "cycle detected: {}",
            find_cycle(&names, &preds, &stuck)
        )));
    }
    for e in &desc.edges {
        if lookup(&e.to)? == input {
            return Err(SanasError::Config(format!("edge {} -> {} enters the input layer", e.from, e.to)));
        }
        if lookup(&e.from)? == output {
            return Err(SanasError::Config(format!("edge {} -> {} leaves the output layer", e.from, e.to)));
        }
    }
    // The input is a source and the output a sink, so moving them to the
    // ends keeps the order topological.
    order.retain(|&v| v != input && v != output);
    order.insert(0, input);
    order.push(output);
    let mut position = vec![0; n];
    for (pos, &v) in order.iter().enumerate() {
        position[v] = pos;
    }

    let layers: Vec<Layer> = order
        .iter()
        .map(|&v| {
            let l = &desc.layers[v];
            Layer {
                name: l.name.clone(),
                shape: l.shape.clone(),
                activation: l.activation,
            }
        })
        .collect();

    let mut edges = Vec::with_capacity(desc.edges.len());
    for e in &desc.edges {
        let (a, b) = (lookup(&e.from)?, lookup(&e.to)?);
        let module = resolve_module(e, &desc.layers[a], &desc.layers[b])?;
        edges.push(Edge {
            from: position[a],
            to: position[b],
            module,
            in_shape: desc.layers[a].shape.clone(),
            out_shape: desc.layers[b].shape.clone(),
            weight_name: format!("edge.{}->{}.weight", e.from, e.to),
            bias_name: format!("edge.{}->{}.bias", e.from, e.to),
        });
    }
    edges.sort_by_key(|e| (e.from, e.to));
    let mut edge_at = vec![None; n * n];
    for (k, e) in edges.iter().enumerate() {
        edge_at[e.from * n + e.to] = Some(k);
    }

    let out_pos = n - 1;
    if layers[out_pos].shape.len() != 1 {
        return Err(SanasError::Config(format!(
            "output layer {:?} must be 1-D, got {:?}",
            layers[out_pos].name, layers[out_pos].shape
        )));
    }
    let feature_layer = position[lookup(&desc.feature_layer)?];
    let classifier_edge = edge_at[feature_layer * n + out_pos].ok_or_else(|| {
        SanasError::Config(format!(
            "feature layer {:?} has no edge into the output layer",
            desc.feature_layer
        ))
    })?;
    if !matches!(edges[classifier_edge].module, EdgeModule::Linear | EdgeModule::FlattenLinear) {
        return Err(SanasError::Config("the classifier edge must be linear or flatten-linear".into()));
    }

    let backbone = if desc.backbone.is_empty() {
        (0..edges.len()).collect()
    } else {
        let mut idx = Vec::new();
        for [a, b] in &desc.backbone {
            let (pa, pb) = (position[lookup(a)?], position[lookup(b)?]);
            let k = edge_at[pa * n + pb]
                .ok_or_else(|| SanasError::Config(format!("backbone edge {a} -> {b} is not in the graph")))?;
            idx.push(k);
        }
        idx.sort_unstable();
        idx
    };

    Ok(SuperNetworkSpec {
        description: desc.clone(),
        layers,
        edges,
        edge_at,
        feature_layer,
        classifier_edge,
        backbone,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(extra: Option<(&str, &str)>) -> GraphDescription {
        let mut edges = vec![EdgeDesc {
            from: "l1".into(),
            to: "l2".into(),
            kind: EdgeKind::Identity,
            kernel: None,
            stride: None,
        }];
        if let Some((a, b)) = extra {
            edges.push(EdgeDesc {
                from: a.into(),
                to: b.into(),
                kind: EdgeKind::Identity,
                kernel: None,
                stride: None,
            });
        }
        GraphDescription {
            name: "chain".into(),
            layers: vec![
                LayerDesc { name: "l1".into(), shape: vec![3], activation: Activation::None },
                LayerDesc { name: "l2".into(), shape: vec![3], activation: Activation::None },
            ],
            edges,
            input: None,
            output: None,
            feature_layer: "l1".into(),
            backbone: vec![],
        }
    }

    #[test]
    fn two_layer_chain_orders_input_first() {
        let mut d = chain(None);
        // classifier edge must be linear
        d.edges[0].kind = EdgeKind::Linear;
        let spec = build_graph(&d).unwrap();
        assert_eq!(spec.topo_names(), vec!["l1", "l2"]);
        assert_eq!(spec.edge_matrix(), vec![vec![false, true], vec![false, false]]);
    }

    #[test]
    fn back_edge_is_a_cycle() {
        let mut d = chain(Some(("l2", "l1")));
        d.input = Some("l1".into());
        d.output = Some("l2".into());
        let err = build_graph(&d).unwrap_err().to_string();
        assert!(err.contains("cycle detected") && err.contains("l1") && err.contains("l2"), "{err}");

        // an interior cycle is reported by name
        let d = GraphDescription::from_json(
            r#"{"name":"c","feature_layer":"a","layers":[
                {"name":"in","shape":[2]},{"name":"a","shape":[2]},{"name":"b","shape":[2]},{"name":"out","shape":[2]}],
               "edges":[{"from":"in","to":"a","kind":"identity"},{"from":"a","to":"b","kind":"identity"},
                        {"from":"b","to":"a","kind":"identity"},{"from":"a","to":"out","kind":"linear"}]}"#,
        )
        .unwrap();
        let err = build_graph(&d).unwrap_err().to_string();
        assert!(err.contains("cycle detected"), "{err}");
        assert!(err.contains("a -> b -> a") || err.contains("b -> a -> b"), "{err}");
    }

    #[test]
    fn dimension_mismatch_names_the_edge() {
        let d = GraphDescription::from_json(
            r#"{"name":"bad","feature_layer":"h","layers":[
                {"name":"in","shape":[1,10,10]},{"name":"h","shape":[2,5,5]},{"name":"out","shape":[3]}],
               "edges":[{"from":"in","to":"h","kind":"conv2d","kernel":[3,3]},
                        {"from":"h","to":"out","kind":"flatten-linear"}]}"#,
        )
        .unwrap();
        let err = build_graph(&d).unwrap_err().to_string();
        assert!(err.contains("edge in -> h"), "{err}");
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = GraphDescription::from_json(r#"{"name":"x","layers":[],"edges":[],"feature_layer":"a","bogus":1}"#);
        assert!(err.is_err());
    }

    #[test]
    fn builtin_keyword_graph_dimensions() {
        let spec = build_graph(&GraphDescription::cnn_trad_fpool3_shortcuts()).unwrap();
        assert_eq!(spec.num_layers(), 7);
        assert_eq!(spec.input_layer().shape, vec![1, 40, 98]);
        assert_eq!(spec.layers()[1].shape, vec![64, 7, 91]);
        assert_eq!(spec.output_dim(), 12);
        assert_eq!(spec.feature_dim(), 128);
        assert_eq!(spec.num_edges(), 10);
        assert_eq!(spec.backbone_edges().len(), 6);
        // strictly upper triangular under the stored order
        for e in spec.edges() {
            assert!(e.from < e.to);
        }
    }

    #[test]
    fn builtin_toy_graph_builds() {
        let spec = build_graph(&GraphDescription::toy()).unwrap();
        assert_eq!(spec.output_dim(), 12);
        assert!(spec.backbone_edges().len() < spec.num_edges());
    }
}
