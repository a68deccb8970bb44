use rand::{Rng, RngCore};

use crate::error::{Result, SanasError};
use crate::supernet::SuperNetworkSpec;

/// Probability floor/ceiling used inside `log_prob`.
pub const GAMMA_CLAMP: f64 = 1e-6;

/// Per-edge Bernoulli probabilities `Γ`, stored densely as `n x n`.
#[derive(Clone, Debug, PartialEq)]
pub struct GammaMatrix {
    n: usize,
    values: Vec<f64>,
}

impl GammaMatrix {
    /// Scatters per-edge probabilities (in topological edge order) onto `E`.
    pub fn from_edge_probs(spec: &SuperNetworkSpec, probs: &[f64]) -> Result<Self> {
        if probs.len() != spec.num_edges() {
            return Err(SanasError::Config(format!(
                "{} edge probabilities for {} edges",
                probs.len(),
                spec.num_edges()
            )));
        }
        let n = spec.num_layers();
        let mut values = vec![0.0; n * n];
        for (e, &p) in spec.edges().iter().zip(probs) {
            check_prob(p)?;
            values[e.from * n + e.to] = p;
        }
        Ok(GammaMatrix { n, values })
    }

    /// Builds from a dense matrix; entries off the support of `E` must be zero.
    pub fn from_matrix(spec: &SuperNetworkSpec, matrix: &[Vec<f64>]) -> Result<Self> {
        let n = spec.num_layers();
        if matrix.len() != n || matrix.iter().any(|r| r.len() != n) {
            return Err(SanasError::Config(format!("gamma matrix must be {n}x{n}")));
        }
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let p = matrix[i][j];
                check_prob(p)?;
                if p != 0.0 && spec.edge_between(i, j).is_none() {
                    return Err(SanasError::Input(format!("gamma has mass {p} off the edge support at ({i}, {j})")));
                }
                values[i * n + j] = p;
            }
        }
        Ok(GammaMatrix { n, values })
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.values[from * self.n + to]
    }

    pub fn edge_probs(&self, spec: &SuperNetworkSpec) -> Vec<f64> {
        spec.edges().iter().map(|e| self.get(e.from, e.to)).collect()
    }
}

fn check_prob(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(SanasError::Numeric(format!("edge probability {p} outside [0, 1]")));
    }
    Ok(())
}

/// Binary edge selection `H` with `H <= E`, stored per edge in topological order.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ArchSample {
    bits: Vec<bool>,
}

impl ArchSample {
    pub fn from_edges(spec: &SuperNetworkSpec, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != spec.num_edges() {
            return Err(SanasError::Config(format!(
                "{} edge bits for {} edges",
                bits.len(),
                spec.num_edges()
            )));
        }
        Ok(ArchSample { bits })
    }

    /// Builds from a dense `n x n` matrix, rejecting any selection outside `E`.
    pub fn from_matrix(spec: &SuperNetworkSpec, matrix: &[Vec<bool>]) -> Result<Self> {
        let n = spec.num_layers();
        if matrix.len() != n || matrix.iter().any(|r| r.len() != n) {
            return Err(SanasError::Config(format!("architecture matrix must be {n}x{n}")));
        }
        for (i, row) in matrix.iter().enumerate() {
            for (j, &h) in row.iter().enumerate() {
                if h && spec.edge_between(i, j).is_none() {
                    return Err(SanasError::Input(format!("H selects ({i}, {j}) which is not an edge of E")));
                }
            }
        }
        let bits = spec.edges().iter().map(|e| matrix[e.from][e.to]).collect();
        Ok(ArchSample { bits })
    }

    pub fn full(spec: &SuperNetworkSpec) -> Self {
        ArchSample {
            bits: vec![true; spec.num_edges()],
        }
    }

    pub fn empty(spec: &SuperNetworkSpec) -> Self {
        ArchSample {
            bits: vec![false; spec.num_edges()],
        }
    }

    pub fn backbone(spec: &SuperNetworkSpec) -> Self {
        let mut bits = vec![false; spec.num_edges()];
        for &k in spec.backbone_edges() {
            bits[k] = true;
        }
        ArchSample { bits }
    }

    /// Mask number `code` of the `2^|E|` masks: bit `k` of `code` selects edge `k`.
    pub fn from_code(spec: &SuperNetworkSpec, code: u64) -> Self {
        ArchSample {
            bits: (0..spec.num_edges()).map(|k| code >> k & 1 == 1).collect(),
        }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn selected(&self, edge: usize) -> bool {
        self.bits[edge]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn to_matrix(&self, spec: &SuperNetworkSpec) -> Vec<Vec<bool>> {
        let n = spec.num_layers();
        let mut m = vec![vec![false; n]; n];
        for (e, &b) in spec.edges().iter().zip(&self.bits) {
            m[e.from][e.to] = b;
        }
        m
    }
}

/// Draws each edge independently: `H_ij = 1` with probability `Γ_ij`.
///
/// One uniform draw per edge, in edge order, so results are reproducible for a
/// given generator state.
pub fn sample_architecture(spec: &SuperNetworkSpec, gamma: &GammaMatrix, rng: &mut dyn RngCore) -> Result<ArchSample> {
    let bits = spec
        .edges()
        .iter()
        .map(|e| {
            let p = gamma.get(e.from, e.to);
            check_prob(p)?;
            let u: f64 = rng.gen();
            Ok(u < p)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ArchSample { bits })
}

/// Mode of the independent Bernoullis; `Γ = 0.5` exactly selects the edge.
pub fn most_probable_architecture(spec: &SuperNetworkSpec, gamma: &GammaMatrix) -> ArchSample {
    ArchSample {
        bits: spec.edges().iter().map(|e| gamma.get(e.from, e.to) >= 0.5).collect(),
    }
}

/// `log P(H | Γ)` with `Γ` clamped to `[1e-6, 1 - 1e-6]`.
pub fn log_prob(spec: &SuperNetworkSpec, gamma: &GammaMatrix, arch: &ArchSample) -> f64 {
    edge_log_prob(&gamma.edge_probs(spec), arch.bits())
}

pub(crate) fn edge_log_prob(probs: &[f64], bits: &[bool]) -> f64 {
    probs
        .iter()
        .zip(bits)
        .map(|(&p, &h)| {
            let p = p.clamp(GAMMA_CLAMP, 1.0 - GAMMA_CLAMP);
            if h {
                p.ln()
            } else {
                (1.0 - p).ln()
            }
        })
        .sum()
}

/// Per-edge `d log P / d Γ`; zero where the clamp is active.
pub fn log_prob_grad(probs: &[f64], bits: &[bool]) -> Vec<f64> {
    probs
        .iter()
        .zip(bits)
        .map(|(&p, &h)| {
            if p <= GAMMA_CLAMP || p >= 1.0 - GAMMA_CLAMP {
                0.0
            } else if h {
                1.0 / p
            } else {
                -1.0 / (1.0 - p)
            }
        })
        .collect()
}

/// Edges that lie on some input-to-output path of `E ∘ H`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActiveSet {
    active: Vec<bool>,
    reaches_output: bool,
    reached: Vec<bool>,
}

impl ActiveSet {
    pub fn contains(&self, edge: usize) -> bool {
        self.active[edge]
    }

    pub fn mask(&self) -> &[bool] {
        &self.active
    }

    pub fn edges(&self) -> impl Iterator<Item = usize> + '_ {
        self.active.iter().enumerate().filter(|(_, &a)| a).map(|(k, _)| k)
    }

    pub fn is_empty(&self) -> bool {
        !self.active.iter().any(|&a| a)
    }

    pub fn reaches_output(&self) -> bool {
        self.reaches_output
    }

    /// Whether `layer` receives a value when only active edges are evaluated.
    pub fn layer_reached(&self, layer: usize) -> bool {
        self.reached[layer]
    }
}

/// Prunes `H` to the edges that contribute to the output: forward-reachable
/// from the input and backward-reachable from the output within `E ∘ H`.
pub fn active_subgraph(spec: &SuperNetworkSpec, arch: &ArchSample) -> ActiveSet {
    let n = spec.num_layers();
    let edges = spec.edges();
    let mut fwd = vec![false; n];
    fwd[0] = true;
    // edges are sorted by source in topological order
    for (k, e) in edges.iter().enumerate() {
        if arch.bits[k] && fwd[e.from] {
            fwd[e.to] = true;
        }
    }
    let mut bwd = vec![false; n];
    bwd[n - 1] = true;
    for (k, e) in edges.iter().enumerate().rev() {
        if arch.bits[k] && bwd[e.to] {
            bwd[e.from] = true;
        }
    }
    let active: Vec<bool> = edges
        .iter()
        .enumerate()
        .map(|(k, e)| arch.bits[k] && fwd[e.from] && bwd[e.to])
        .collect();
    let reaches_output = active.iter().any(|&a| a);
    let mut reached = vec![false; n];
    reached[0] = true;
    for (k, e) in edges.iter().enumerate() {
        if active[k] {
            reached[e.to] = true;
        }
    }
    ActiveSet {
        active,
        reaches_output,
        reached,
    }
}
