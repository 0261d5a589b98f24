use std::sync::Arc;

use super::{init_dense, Binder, GcnConfig, PartInput, Readout};
use crate::ndcore::{NdError, NormAdjacency, ParamSet, Rng, Tape, Tensor, Var};

pub(super) fn init(c: &GcnConfig, params: &mut ParamSet, rng: &mut Rng) {
    let mut fan_in = 3;
    for l in 0..c.num_layers {
        init_dense(params, &format!("conv{l}"), fan_in, c.hidden_dim, rng);
        fan_in = c.hidden_dim;
    }
    init_dense(params, "out", c.hidden_dim, c.num_classes, rng);
}

/// Graphs of a batch are stacked as one disjoint union; the readout pools
/// each graph's rows separately.
pub(super) fn forward(c: &GcnConfig, b: &Binder, tape: &mut Tape, inputs: &[&PartInput]) -> Result<Var, NdError> {
    let adj = if inputs.len() == 1 {
        inputs[0].adjacency.clone()
    } else {
        Arc::new(NormAdjacency::block_diag(&inputs.iter().map(|i| i.adjacency.as_ref()).collect::<Vec<_>>()))
    };
    let rows: Vec<[f64; 3]> = inputs.iter().flat_map(|i| i.features.iter().copied()).collect();
    let mut h = tape.constant(Tensor::from_rows(&rows)?);
    for l in 0..c.num_layers {
        let conv = tape.graph_conv(&adj, h, b.var(&format!("conv{l}.w")), b.var(&format!("conv{l}.b")))?;
        h = tape.relu(conv)?;
    }
    let mut groups = Vec::with_capacity(inputs.len());
    let mut start = 0;
    for i in inputs {
        groups.push((start..start + i.n_nodes()).collect::<Vec<_>>());
        start += i.n_nodes();
    }
    let pooled = match c.readout {
        Readout::Mean => tape.group_mean(h, &groups)?,
        Readout::Max => tape.group_max(h, &groups)?,
    };
    b.dense(tape, "out", pooled)
}
