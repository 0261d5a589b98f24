use std::sync::Arc;

use super::{init_bn, init_dense, Binder, ForwardCtx, PointNetConfig};
use crate::ndcore::{NdError, ParamSet, Rng, Tape, Tensor, Var};

/// Point rows of one part with a multiplicity per row.
///
/// Zero padding to `max_nodes` is stored as a single zero row whose weight
/// is the number of padding rows: every point-wise layer maps identical rows
/// to identical outputs, the max pool ignores duplicates, and batchnorm
/// counts the row `weight` times, so the result equals the fully padded
/// input.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedPoints {
    pub rows: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

impl PaddedPoints {
    pub fn new(c: &PointNetConfig, features: &[[f64; 3]]) -> Self {
        let mut rows = features.to_vec();
        let mut weights = vec![1.0; rows.len()];
        if !c.mask_padding && rows.len() < c.max_nodes {
            rows.push([0.0; 3]);
            weights.push((c.max_nodes - features.len()) as f64);
        }
        PaddedPoints { rows, weights }
    }

    /// Rows taken as given, each counted once.
    pub fn explicit(rows: Vec<[f64; 3]>) -> Self {
        let weights = vec![1.0; rows.len()];
        PaddedPoints { rows, weights }
    }
}

pub(super) fn init(c: &PointNetConfig, params: &mut ParamSet, buffers: &mut ParamSet, rng: &mut Rng) {
    if c.use_input_transform {
        let mut fan_in = 3;
        for (l, &d) in c.tnet_dims.iter().enumerate() {
            init_dense(params, &format!("tnet.mlp{l}"), fan_in, d, rng);
            init_bn(params, buffers, &format!("tnet.bn{l}"), d);
            fan_in = d;
        }
        // starts as the identity transform
        params.push("tnet.fc.w", Tensor::zeros(&[fan_in, 9]));
        params.push("tnet.fc.b", Tensor::zeros(&[9]));
    }
    let mut fan_in = 3;
    for (l, &d) in c.point_mlp_dims.iter().enumerate() {
        init_dense(params, &format!("mlp{l}"), fan_in, d, rng);
        init_bn(params, buffers, &format!("bn{l}"), d);
        fan_in = d;
    }
    for (l, &d) in c.head_dims.iter().enumerate() {
        init_dense(params, &format!("head{l}"), fan_in, d, rng);
        init_bn(params, buffers, &format!("head_bn{l}"), d);
        fan_in = d;
    }
    init_dense(params, "out", fan_in, c.num_classes, rng);
}

#[allow(clippy::too_many_arguments)]
fn bn(
    b: &Binder,
    buffers: &ParamSet,
    tape: &mut Tape,
    name: &str,
    x: Var,
    weights: Option<Arc<Vec<f64>>>,
    ctx: &mut ForwardCtx,
) -> Result<Var, NdError> {
    let buf = |s: &str| buffers.by_name(&format!("{name}.{s}")).expect("batchnorm buffer").data();
    let (v, stats) = tape.batchnorm(
        x,
        b.var(&format!("{name}.gamma")),
        b.var(&format!("{name}.beta")),
        weights,
        buf("running_mean"),
        buf("running_var"),
        ctx.training,
    )?;
    if let Some(s) = stats {
        ctx.bn_stats.push((name.to_string(), s));
    }
    Ok(v)
}

pub(super) fn forward(
    c: &PointNetConfig,
    b: &Binder,
    buffers: &ParamSet,
    tape: &mut Tape,
    parts: &[PaddedPoints],
    ctx: &mut ForwardCtx,
) -> Result<Var, NdError> {
    let mut rows = Vec::new();
    let mut weights = Vec::new();
    let mut ranges = Vec::with_capacity(parts.len());
    for p in parts {
        let start = rows.len();
        rows.extend_from_slice(&p.rows);
        weights.extend_from_slice(&p.weights);
        ranges.push(start..rows.len());
    }
    let groups: Vec<Vec<usize>> = ranges.iter().map(|r| r.clone().collect()).collect();
    let weights = if weights.iter().all(|&w| w == 1.0) { None } else { Some(Arc::new(weights)) };

    let x = tape.constant(Tensor::from_rows(&rows)?);
    let mut pts = x;
    if c.use_input_transform {
        let mut h = x;
        for l in 0..c.tnet_dims.len() {
            let z = b.dense(tape, &format!("tnet.mlp{l}"), h)?;
            let z = bn(b, buffers, tape, &format!("tnet.bn{l}"), z, weights.clone(), ctx)?;
            h = tape.relu(z)?;
        }
        let g = tape.group_max(h, &groups)?;
        let delta = b.dense(tape, "tnet.fc", g)?;
        pts = tape.point_transform(x, delta, &ranges)?;
    }
    let mut h = pts;
    for l in 0..c.point_mlp_dims.len() {
        let z = b.dense(tape, &format!("mlp{l}"), h)?;
        let z = bn(b, buffers, tape, &format!("bn{l}"), z, weights.clone(), ctx)?;
        h = tape.relu(z)?;
    }
    let mut h = tape.group_max(h, &groups)?;
    for l in 0..c.head_dims.len() {
        let z = b.dense(tape, &format!("head{l}"), h)?;
        let z = bn(b, buffers, tape, &format!("head_bn{l}"), z, None, ctx)?;
        let z = tape.relu(z)?;
        h = tape.dropout(z, c.dropout_p, &mut ctx.rng, ctx.training)?;
    }
    b.dense(tape, "out", h)
}

/// Forward over explicit point sets, bypassing the padding of
/// [`PaddedPoints::new`].
pub fn forward_points(model: &super::Model, parts: &[PaddedPoints], ctx: &mut ForwardCtx) -> Result<Vec<f64>, super::ModelError> {
    let super::ModelConfig::PointNet(c) = &model.config else {
        return Err(super::ModelError::InvalidConfig("not a pointnet model".into()));
    };
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let b = Binder { params: &model.params, vars: &vars };
    let out = forward(c, &b, &model.buffers, &mut tape, parts, ctx)?;
    Ok(tape.value(out).data().to_vec())
}
