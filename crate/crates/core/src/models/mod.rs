//! The three part classifiers: a graph convolutional network over the mesh
//! graph, a fully connected network over the zero-padded coordinate vector,
//! and a PointNet-style network over the zero-padded point set.

mod checkpoint;
mod fcnn;
mod gcn;
pub mod gradcheck;
mod pointnet;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

use crate::graph_build::{mesh_to_graph, norm_coeffs, scale_features, GraphError};
use crate::mesh_io::Mesh;
use crate::ndcore::{softmax, BnStats, NdError, NormAdjacency, ParamSet, Rng, Tape, Tensor, Var, BN_MOMENTUM};

pub use checkpoint::{Checkpoint, TrainMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use fcnn::flatten as flatten_padded;
pub use pointnet::{forward_points, PaddedPoints};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Nd(#[from] NdError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("part has {nodes} nodes but the model pads to {max_nodes}")]
    PartTooLarge { nodes: usize, max_nodes: usize },
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("{path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
}

impl ModelError {
    pub fn code(&self) -> &'static str {
        match self {
            ModelError::Nd(e) => e.code(),
            ModelError::Graph(e) => e.code(),
            ModelError::PartTooLarge { .. } => "part_too_large",
            ModelError::InvalidConfig(_) => "invalid_config",
            ModelError::BadCheckpoint(_) => "bad_checkpoint",
            ModelError::Io { .. } => "io",
        }
    }
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ModelError> {
    Err(ModelError::InvalidConfig(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arch {
    Gcn,
    Fcnn,
    PointNet,
}

impl Arch {
    pub const ALL: [Arch; 3] = [Arch::Fcnn, Arch::PointNet, Arch::Gcn];

    pub fn tag(self) -> &'static str {
        match self {
            Arch::Gcn => "gcn",
            Arch::Fcnn => "fcnn",
            Arch::PointNet => "pointnet",
        }
    }

    /// Column heading used in reports.
    pub fn display_name(self) -> &'static str {
        match self {
            Arch::Gcn => "Graph Convolutional Network (GCN)",
            Arch::Fcnn => "Fully Connected Neural Network",
            Arch::PointNet => "PointNet",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Arch {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, ModelError> {
        match s {
            "gcn" => Ok(Arch::Gcn),
            "fcnn" => Ok(Arch::Fcnn),
            "pointnet" => Ok(Arch::PointNet),
            other => invalid(format!("unknown architecture '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Readout {
    Mean,
    Max,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnConfig {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub readout: Readout,
    pub num_classes: usize,
}

impl GcnConfig {
    pub fn new(num_classes: usize) -> Self {
        GcnConfig { num_layers: 3, hidden_dim: 64, readout: Readout::Mean, num_classes }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FcnnConfig {
    pub max_nodes: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
}

impl FcnnConfig {
    pub fn new(max_nodes: usize, num_classes: usize) -> Self {
        FcnnConfig { max_nodes, hidden_dims: vec![512, 256], num_classes }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointNetConfig {
    pub max_nodes: usize,
    pub use_input_transform: bool,
    /// Shared point MLP of the input transform network.
    pub tnet_dims: Vec<usize>,
    pub point_mlp_dims: Vec<usize>,
    pub head_dims: Vec<usize>,
    pub dropout_p: f64,
    pub num_classes: usize,
    /// Leave padding rows out of the max pool entirely.
    pub mask_padding: bool,
}

impl PointNetConfig {
    pub fn new(max_nodes: usize, num_classes: usize) -> Self {
        PointNetConfig {
            max_nodes,
            use_input_transform: true,
            tnet_dims: vec![64, 128],
            point_mlp_dims: vec![64, 128, 256],
            head_dims: vec![128],
            dropout_p: 0.3,
            num_classes,
            mask_padding: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelConfig {
    Gcn(GcnConfig),
    Fcnn(FcnnConfig),
    PointNet(PointNetConfig),
}

fn dims_text(d: &[usize]) -> String {
    d.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

impl ModelConfig {
    /// Default config of `arch`. `max_nodes` is ignored by the GCN.
    pub fn default_for(arch: Arch, max_nodes: usize, num_classes: usize) -> Self {
        match arch {
            Arch::Gcn => ModelConfig::Gcn(GcnConfig::new(num_classes)),
            Arch::Fcnn => ModelConfig::Fcnn(FcnnConfig::new(max_nodes, num_classes)),
            Arch::PointNet => ModelConfig::PointNet(PointNetConfig::new(max_nodes, num_classes)),
        }
    }

    pub fn arch(&self) -> Arch {
        match self {
            ModelConfig::Gcn(_) => Arch::Gcn,
            ModelConfig::Fcnn(_) => Arch::Fcnn,
            ModelConfig::PointNet(_) => Arch::PointNet,
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            ModelConfig::Gcn(c) => c.num_classes,
            ModelConfig::Fcnn(c) => c.num_classes,
            ModelConfig::PointNet(c) => c.num_classes,
        }
    }

    pub fn max_nodes(&self) -> Option<usize> {
        match self {
            ModelConfig::Gcn(_) => None,
            ModelConfig::Fcnn(c) => Some(c.max_nodes),
            ModelConfig::PointNet(c) => Some(c.max_nodes),
        }
    }

    /// Whether a training batch is coupled through batch statistics.
    pub fn uses_batch_stats(&self) -> bool {
        matches!(self, ModelConfig::PointNet(_))
    }

    pub fn check(&self) -> Result<(), ModelError> {
        if self.num_classes() < 2 {
            return invalid("num_classes must be at least 2");
        }
        let dims_ok = |d: &[usize]| !d.is_empty() && d.iter().all(|&v| v > 0);
        match self {
            ModelConfig::Gcn(c) => {
                if c.num_layers == 0 || c.hidden_dim == 0 {
                    return invalid("gcn needs num_layers >= 1 and hidden_dim >= 1");
                }
            }
            ModelConfig::Fcnn(c) => {
                if c.max_nodes == 0 || !dims_ok(&c.hidden_dims) {
                    return invalid("fcnn needs max_nodes >= 1 and nonempty positive hidden_dims");
                }
            }
            ModelConfig::PointNet(c) => {
                if c.max_nodes == 0 || !dims_ok(&c.point_mlp_dims) || !dims_ok(&c.head_dims) {
                    return invalid("pointnet needs max_nodes >= 1 and nonempty positive dims");
                }
                if c.use_input_transform && !dims_ok(&c.tnet_dims) {
                    return invalid("pointnet input transform needs nonempty tnet_dims");
                }
                if !(0.0..1.0).contains(&c.dropout_p) {
                    return invalid("dropout_p must lie in [0, 1)");
                }
            }
        }
        Ok(())
    }

    /// Number of stored scalars (parameters and running statistics),
    /// saturating on absurd configs.
    pub fn scalar_count(&self) -> usize {
        fn chain(dims: &[usize], mut fan_in: usize, per_layer_extra: usize) -> (usize, usize) {
            let mut total = 0usize;
            for &d in dims {
                total = total.saturating_add(fan_in.saturating_mul(d).saturating_add(d.saturating_mul(1 + per_layer_extra)));
                fan_in = d;
            }
            (total, fan_in)
        }
        let dense = |i: usize, o: usize| i.saturating_mul(o).saturating_add(o);
        match self {
            ModelConfig::Gcn(c) => dense(3, c.hidden_dim)
                .saturating_add(c.num_layers.saturating_sub(1).saturating_mul(dense(c.hidden_dim, c.hidden_dim)))
                .saturating_add(dense(c.hidden_dim, c.num_classes)),
            ModelConfig::Fcnn(c) => {
                let (t, f) = chain(&c.hidden_dims, c.max_nodes.saturating_mul(3), 0);
                t.saturating_add(dense(f, c.num_classes))
            }
            ModelConfig::PointNet(c) => {
                // batchnorm layers store gamma, beta, running mean and variance
                let mut total = 0usize;
                if c.use_input_transform {
                    let (t, f) = chain(&c.tnet_dims, 3, 4);
                    total = t.saturating_add(dense(f, 9));
                }
                let (t, f) = chain(&c.point_mlp_dims, 3, 4);
                let (h, f) = chain(&c.head_dims, f, 4);
                total.saturating_add(t).saturating_add(h).saturating_add(dense(f, c.num_classes))
            }
        }
    }

    /// Canonical `key=value` lines.
    pub fn to_text(&self) -> String {
        match self {
            ModelConfig::Gcn(c) => format!(
                "num_layers={}\nhidden_dim={}\nreadout={}\nnum_classes={}\n",
                c.num_layers,
                c.hidden_dim,
                if c.readout == Readout::Mean { "mean" } else { "max" },
                c.num_classes
            ),
            ModelConfig::Fcnn(c) => {
                format!("max_nodes={}\nhidden_dims={}\nnum_classes={}\n", c.max_nodes, dims_text(&c.hidden_dims), c.num_classes)
            }
            ModelConfig::PointNet(c) => format!(
                "max_nodes={}\nuse_input_transform={}\ntnet_dims={}\npoint_mlp_dims={}\nhead_dims={}\ndropout_p={}\nnum_classes={}\nmask_padding={}\n",
                c.max_nodes,
                c.use_input_transform,
                dims_text(&c.tnet_dims),
                dims_text(&c.point_mlp_dims),
                dims_text(&c.head_dims),
                c.dropout_p,
                c.num_classes,
                c.mask_padding
            ),
        }
    }

    /// Parses the keys written by [`ModelConfig::to_text`]; other keys are
    /// returned untouched for the caller.
    pub fn from_text(arch: Arch, text: &str) -> Result<(ModelConfig, Vec<(String, String)>), ModelError> {
        let mut kv = std::collections::BTreeMap::new();
        let mut rest = Vec::new();
        let keys: &[&str] = match arch {
            Arch::Gcn => &["num_layers", "hidden_dim", "readout", "num_classes"],
            Arch::Fcnn => &["max_nodes", "hidden_dims", "num_classes"],
            Arch::PointNet => &[
                "max_nodes",
                "use_input_transform",
                "tnet_dims",
                "point_mlp_dims",
                "head_dims",
                "dropout_p",
                "num_classes",
                "mask_padding",
            ],
        };
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| ModelError::InvalidConfig(format!("bad line '{line}'")))?;
            if keys.contains(&k) {
                kv.insert(k.to_string(), v.to_string());
            } else {
                rest.push((k.to_string(), v.to_string()));
            }
        }
        let get = |k: &str| kv.get(k).ok_or_else(|| ModelError::InvalidConfig(format!("missing {k}")));
        fn parse<T: FromStr>(k: &str, v: &str) -> Result<T, ModelError> {
            v.parse().map_err(|_| ModelError::InvalidConfig(format!("bad value for {k}: '{v}'")))
        }
        let num = |k: &str| -> Result<usize, ModelError> { parse(k, get(k)?) };
        let dims = |k: &str| -> Result<Vec<usize>, ModelError> {
            let v = get(k)?;
            if v.is_empty() {
                return Ok(vec![]);
            }
            v.split(',').map(|d| parse(k, d)).collect()
        };
        let flag = |k: &str| -> Result<bool, ModelError> { parse(k, get(k)?) };
        let cfg = match arch {
            Arch::Gcn => ModelConfig::Gcn(GcnConfig {
                num_layers: num("num_layers")?,
                hidden_dim: num("hidden_dim")?,
                readout: match get("readout")?.as_str() {
                    "mean" => Readout::Mean,
                    "max" => Readout::Max,
                    other => return invalid(format!("bad readout '{other}'")),
                },
                num_classes: num("num_classes")?,
            }),
            Arch::Fcnn => ModelConfig::Fcnn(FcnnConfig {
                max_nodes: num("max_nodes")?,
                hidden_dims: dims("hidden_dims")?,
                num_classes: num("num_classes")?,
            }),
            Arch::PointNet => ModelConfig::PointNet(PointNetConfig {
                max_nodes: num("max_nodes")?,
                use_input_transform: flag("use_input_transform")?,
                tnet_dims: dims("tnet_dims")?,
                point_mlp_dims: dims("point_mlp_dims")?,
                head_dims: dims("head_dims")?,
                dropout_p: parse("dropout_p", get("dropout_p")?)?,
                num_classes: num("num_classes")?,
                mask_padding: flag("mask_padding")?,
            }),
        };
        cfg.check()?;
        Ok((cfg, rest))
    }
}

/// One part, preprocessed once: scaled node features plus the normalized
/// adjacency of its graph.
#[derive(Debug, Clone)]
pub struct PartInput {
    pub features: Vec<[f64; 3]>,
    pub adjacency: Arc<NormAdjacency>,
}

impl PartInput {
    pub fn from_mesh(mesh: &Mesh) -> Result<Self, ModelError> {
        let graph = mesh_to_graph(mesh)?;
        let adjacency = NormAdjacency::new(&graph, &norm_coeffs(&graph))?;
        Ok(PartInput { features: scale_features(mesh).rows, adjacency: Arc::new(adjacency) })
    }

    pub fn n_nodes(&self) -> usize {
        self.features.len()
    }
}

/// Per-call state: mode, dropout stream and the batch statistics observed
/// by training-mode batchnorm layers.
#[derive(Debug)]
pub struct ForwardCtx {
    pub training: bool,
    pub rng: Rng,
    pub bn_stats: Vec<(String, BnStats)>,
}

impl ForwardCtx {
    pub fn inference() -> Self {
        ForwardCtx { training: false, rng: Rng::new(0), bn_stats: vec![] }
    }

    pub fn training(rng: Rng) -> Self {
        ForwardCtx { training: true, rng, bn_stats: vec![] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: usize,
    pub probability: f64,
    pub probs: Vec<f64>,
}

/// Argmax of the softmax, ties to the lowest index.
pub fn predict(logits: &[f64]) -> Prediction {
    let probs = softmax(logits);
    let mut label = 0;
    for (k, &p) in probs.iter().enumerate() {
        if p > probs[label] {
            label = k;
        }
    }
    Prediction { label, probability: probs[label], probs }
}

/// Resolves parameter names to the tape leaves of one forward pass.
pub(crate) struct Binder<'a> {
    params: &'a ParamSet,
    vars: &'a [Var],
}

impl Binder<'_> {
    pub(crate) fn var(&self, name: &str) -> Var {
        let i = self.params.index_of(name).unwrap_or_else(|| panic!("no parameter {name}"));
        self.vars[i]
    }

    pub(crate) fn dense(&self, tape: &mut Tape, name: &str, x: Var) -> Result<Var, NdError> {
        let h = tape.matmul(x, self.var(&format!("{name}.w")))?;
        tape.add_bias(h, self.var(&format!("{name}.b")))
    }
}

/// Glorot-uniform weight and zero bias named `name.w`, `name.b`.
pub(crate) fn init_dense(params: &mut ParamSet, name: &str, fan_in: usize, fan_out: usize, rng: &mut Rng) {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let w = (0..fan_in * fan_out).map(|_| rng.range(-a, a)).collect();
    params.push(format!("{name}.w"), Tensor::matrix(fan_in, fan_out, w).expect("dense shape"));
    params.push(format!("{name}.b"), Tensor::zeros(&[fan_out]));
}

pub(crate) fn init_bn(params: &mut ParamSet, buffers: &mut ParamSet, name: &str, dim: usize) {
    params.push(format!("{name}.gamma"), Tensor::full(&[dim], 1.0));
    params.push(format!("{name}.beta"), Tensor::zeros(&[dim]));
    buffers.push(format!("{name}.running_mean"), Tensor::zeros(&[dim]));
    buffers.push(format!("{name}.running_var"), Tensor::full(&[dim], 1.0));
}

/// Trainable parameters plus batchnorm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub buffers: ParamSet,
}

impl Model {
    /// Freshly initialized weights drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Model, ModelError> {
        config.check()?;
        let mut rng = Rng::new(seed);
        let mut params = ParamSet::new();
        let mut buffers = ParamSet::new();
        match &config {
            ModelConfig::Gcn(c) => gcn::init(c, &mut params, &mut rng),
            ModelConfig::Fcnn(c) => fcnn::init(c, &mut params, &mut rng),
            ModelConfig::PointNet(c) => pointnet::init(c, &mut params, &mut buffers, &mut rng),
        }
        Ok(Model { config, params, buffers })
    }

    pub fn arch(&self) -> Arch {
        self.config.arch()
    }

    /// Rejects parts a padded model cannot take.
    pub fn check_input(&self, input: &PartInput) -> Result<(), ModelError> {
        match self.config.max_nodes() {
            Some(max_nodes) if input.n_nodes() > max_nodes => {
                Err(ModelError::PartTooLarge { nodes: input.n_nodes(), max_nodes })
            }
            _ => Ok(()),
        }
    }

    /// Logits `[B x C]` for a batch, with parameters read from `vars`
    /// (aligned with `self.params`).
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], inputs: &[&PartInput], ctx: &mut ForwardCtx) -> Result<Var, ModelError> {
        if inputs.is_empty() {
            return Err(NdError::InvalidBatch(0).into());
        }
        for inp in inputs {
            self.check_input(inp)?;
        }
        let b = Binder { params: &self.params, vars };
        Ok(match &self.config {
            ModelConfig::Gcn(c) => gcn::forward(c, &b, tape, inputs)?,
            ModelConfig::Fcnn(c) => fcnn::forward(c, &b, tape, inputs)?,
            ModelConfig::PointNet(c) => {
                let padded: Vec<PaddedPoints> = inputs.iter().map(|i| PaddedPoints::new(c, &i.features)).collect();
                pointnet::forward(c, &b, &self.buffers, tape, &padded, ctx)?
            }
        })
    }

    /// Places the current parameters on a fresh tape.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.tensors().iter().map(|t| tape.param(t.clone())).collect()
    }

    /// Inference-mode logits of one part.
    pub fn logits(&self, input: &PartInput) -> Result<Vec<f64>, ModelError> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let out = self.forward(&mut tape, &vars, &[input], &mut ForwardCtx::inference())?;
        Ok(tape.value(out).data().to_vec())
    }

    pub fn classify(&self, input: &PartInput) -> Result<Prediction, ModelError> {
        Ok(predict(&self.logits(input)?))
    }

    /// Folds observed batch statistics into the running averages.
    pub fn apply_bn_stats(&mut self, stats: &[(String, BnStats)]) {
        for (name, s) in stats {
            for (suffix, batch) in [("running_mean", &s.mean), ("running_var", &s.var)] {
                let i = self.buffers.index_of(&format!("{name}.{suffix}")).expect("batchnorm buffer");
                for (r, v) in self.buffers.get_mut(i).data_mut().iter_mut().zip(batch) {
                    *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * v;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests;
