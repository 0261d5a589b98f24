use super::{init_dense, Binder, FcnnConfig, PartInput};
use crate::ndcore::{NdError, ParamSet, Rng, Tape, Tensor, Var};

pub(super) fn init(c: &FcnnConfig, params: &mut ParamSet, rng: &mut Rng) {
    let mut fan_in = 3 * c.max_nodes;
    for (l, &d) in c.hidden_dims.iter().enumerate() {
        init_dense(params, &format!("fc{l}"), fan_in, d, rng);
        fan_in = d;
    }
    init_dense(params, "out", fan_in, c.num_classes, rng);
}

/// Node-major flattening `(x1, y1, z1, x2, ...)` in file order, zero padded
/// to `3 * max_nodes`.
pub fn flatten(c: &FcnnConfig, features: &[[f64; 3]]) -> Vec<f64> {
    let mut v = vec![0.0; 3 * c.max_nodes];
    for (k, r) in features.iter().enumerate() {
        v[3 * k..3 * k + 3].copy_from_slice(r);
    }
    v
}

pub(super) fn forward(c: &FcnnConfig, b: &Binder, tape: &mut Tape, inputs: &[&PartInput]) -> Result<Var, NdError> {
    let data: Vec<f64> = inputs.iter().flat_map(|i| flatten(c, &i.features)).collect();
    let mut h = tape.constant(Tensor::matrix(inputs.len(), 3 * c.max_nodes, data)?);
    for l in 0..c.hidden_dims.len() {
        let z = b.dense(tape, &format!("fc{l}"), h)?;
        h = tape.relu(z)?;
    }
    b.dense(tape, "out", h)
}
