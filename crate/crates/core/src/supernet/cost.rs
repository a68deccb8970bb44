//! FLOPs accounting.
//!
//! Convention: one multiply-accumulate counts as 2 FLOPs, every bias add
//! counts as 1, activations and merges are free. Controller elementwise
//! products (GRU gating) count 1 FLOP each.

use crate::supernet::{active_subgraph, ArchSample, Edge, EdgeModule, SuperNetworkSpec};

pub fn linear_flops(n_in: u64, n_out: u64) -> u64 {
    2 * n_in * n_out + n_out
}

pub fn edge_cost(edge: &Edge) -> u64 {
    match edge.module {
        EdgeModule::Identity => 0,
        EdgeModule::Linear | EdgeModule::FlattenLinear => {
            let n_in: usize = edge.in_shape.iter().product();
            linear_flops(n_in as u64, edge.out_shape[0] as u64)
        }
        EdgeModule::Conv2d { kernel, .. } => {
            let c_in = edge.in_shape[0] as u64;
            let [c_out, fo, to] = edge.out_shape[..] else {
                unreachable!("conv edges are validated as [C, F, T]")
            };
            let outputs = (c_out * fo * to) as u64;
            outputs * (2 * kernel.0 as u64 * kernel.1 as u64 * c_in) + outputs
        }
    }
}

/// Per-step cost of the controller: the `Γ` head, the feature projection,
/// the GRU update and one comparison per edge for sampling.
pub fn controller_flops(d_z: usize, d_phi: usize, feature_dim: usize, n_edges: usize) -> u64 {
    let (d_z, d_phi, feat, e) = (d_z as u64, d_phi as u64, feature_dim as u64, n_edges as u64);
    let gamma_head = linear_flops(d_z, e);
    let projection = 2 * feat * d_phi;
    // three gates: W u + U z + b; then r∘z, (1-a), (1-a)∘c, a∘z and the sum
    let gru = 3 * (2 * d_z * d_phi + 2 * d_z * d_z + d_z) + 5 * d_z;
    gamma_head + projection + gru + e
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CostModel {
    edge_costs: Vec<u64>,
    controller: u64,
    charge_inactive: bool,
}

impl CostModel {
    pub fn new(spec: &SuperNetworkSpec, controller_cost: u64) -> Self {
        CostModel {
            edge_costs: spec.edges().iter().map(edge_cost).collect(),
            controller: controller_cost,
            charge_inactive: false,
        }
    }

    /// Charge every sampled edge, contributing or not (ablation switch).
    pub fn charging_inactive_edges(mut self, yes: bool) -> Self {
        self.charge_inactive = yes;
        self
    }

    pub fn edge_costs(&self) -> &[u64] {
        &self.edge_costs
    }

    pub fn controller_cost(&self) -> u64 {
        self.controller
    }

    pub fn charges_inactive(&self) -> bool {
        self.charge_inactive
    }

    pub fn full_cost(&self) -> u64 {
        self.edge_costs.iter().sum::<u64>() + self.controller
    }

    /// Decimal order of magnitude of the full-graph cost, `floor(log10(C))`.
    pub fn order_of_magnitude(&self) -> i32 {
        let mut c = self.full_cost();
        let mut m = 0;
        while c >= 10 {
            c /= 10;
            m += 1;
        }
        m
    }
}

/// `C(A_t)`: contributing edges plus the controller.
pub fn architecture_cost(spec: &SuperNetworkSpec, arch: &ArchSample, model: &CostModel) -> u64 {
    let edges: u64 = if model.charge_inactive {
        (0..spec.num_edges())
            .filter(|&k| arch.selected(k))
            .map(|k| model.edge_costs[k])
            .sum()
    } else {
        active_subgraph(spec, arch).edges().map(|k| model.edge_costs[k]).sum()
    };
    edges + model.controller
}
