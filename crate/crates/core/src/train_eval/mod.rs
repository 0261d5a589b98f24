//! Training on a manifest, the variant test suite, evaluation and the
//! markdown report.

mod report;
mod suite;

use std::path::PathBuf;

use rayon::prelude::*;
use thiserror::Error;

use crate::augment::AugmentError;
use crate::mesh_io::{DatasetManifest, ManifestError};
use crate::models::{Arch, Checkpoint, ForwardCtx, Model, ModelConfig, ModelError, PartInput, TrainMeta};
use crate::ndcore::{Adam, NdError, Optimizer, Rng, Sgd, Tape, Tensor};
use crate::synthgen::SynthError;

pub use report::{format_accuracy, report};
pub use suite::{build_variant_suite, evaluate, EvalResult, EvalRow, RowKind, Subset, Variant, SUITE_SIZE};

/// Padded models size their input to the largest training part times this.
pub const MAX_NODES_HEADROOM: usize = 4;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error("part '{part}' has no spec sidecar at {}", path.display())]
    MissingSpecSidecar { part: String, path: PathBuf },
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("loss became non-finite in epoch {epoch} on batch [{}]", parts.join(", "))]
    DivergedLoss { epoch: usize, parts: Vec<String> },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("results cover different suites: {0}")]
    SuiteMismatch(String),
}

impl TrainError {
    pub fn code(&self) -> &'static str {
        match self {
            TrainError::Manifest(e) => e.code(),
            TrainError::Model(e) => e.code(),
            TrainError::Augment(e) => e.code(),
            TrainError::MissingSpecSidecar { .. } => "missing_spec_sidecar",
            TrainError::Synth(e) => e.code(),
            TrainError::DivergedLoss { .. } => "diverged_loss",
            TrainError::InvalidConfig(_) => "invalid_config",
            TrainError::SuiteMismatch(_) => "suite_mismatch",
        }
    }
}

/// Preprocessed training parts in manifest order.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub inputs: Vec<PartInput>,
    pub labels: Vec<usize>,
    pub names: Vec<String>,
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn load(manifest: &DatasetManifest) -> Result<Dataset, TrainError> {
        if manifest.entries.is_empty() {
            return Err(TrainError::InvalidConfig("manifest has no parts".into()));
        }
        let inputs = manifest
            .entries
            .par_iter()
            .map(|e| -> Result<PartInput, TrainError> { Ok(PartInput::from_mesh(&manifest.load_mesh(e)?)?) })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Dataset {
            inputs,
            labels: manifest.entries.iter().map(|e| e.label).collect(),
            names: manifest.entries.iter().map(|e| e.name.clone()).collect(),
            class_names: manifest.class_names(),
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Padding target: the largest part times [`MAX_NODES_HEADROOM`].
    pub fn max_nodes(&self) -> usize {
        self.inputs.iter().map(PartInput::n_nodes).max().unwrap_or(1) * MAX_NODES_HEADROOM
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerConfig {
    Adam { lr: f64 },
    Sgd { lr: f64, momentum: f64 },
}

impl OptimizerConfig {
    fn build(self) -> Box<dyn Optimizer> {
        match self {
            OptimizerConfig::Adam { lr } => Box::new(Adam::new(lr)),
            OptimizerConfig::Sgd { lr, momentum } => Box::new(Sgd::new(lr, momentum)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub shuffle: bool,
}

/// Default Adam learning rate per architecture. The GCN's mean readout
/// gives small gradients and trains much faster at 1e-2.
pub fn default_lr(arch: Arch) -> f64 {
    match arch {
        Arch::Gcn => 1e-2,
        Arch::Fcnn | Arch::PointNet => 1e-3,
    }
}

pub const DEFAULT_BATCH_SIZE: usize = 8;

impl TrainConfig {
    /// Default model of `arch` sized for `data`, Adam, shuffled batches.
    pub fn default_for(arch: Arch, data: &Dataset, epochs: usize, seed: u64) -> Self {
        TrainConfig {
            model: ModelConfig::default_for(arch, data.max_nodes(), data.num_classes()),
            optimizer: OptimizerConfig::Adam { lr: default_lr(arch) },
            epochs,
            batch_size: DEFAULT_BATCH_SIZE,
            seed,
            shuffle: true,
        }
    }

    pub fn check(&self, data: &Dataset) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be at least 1".into());
        }
        if self.model.uses_batch_stats() && (self.batch_size < 2 || data.len() < 2) {
            return bad("batchnorm training needs batches of at least 2 parts".into());
        }
        if self.model.num_classes() != data.num_classes() {
            return bad(format!("model has {} classes, manifest {}", self.model.num_classes(), data.num_classes()));
        }
        self.model.check()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean cross-entropy over the epoch's training-mode forward passes.
    pub loss: f64,
    /// Fraction of parts whose training-mode prediction during the epoch
    /// was correct.
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct History {
    pub epochs: Vec<EpochStats>,
}

impl History {
    /// `epoch,loss,train_accuracy` CSV.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss,train_accuracy\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{:?},{:?}\n", e.epoch, e.loss, e.train_accuracy));
        }
        s
    }
}

/// Batches of the epoch; with batchnorm a trailing single part joins the
/// previous batch.
fn batches(order: &[usize], size: usize, merge_singleton: bool) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = order.chunks(size).map(<[usize]>::to_vec).collect();
    if merge_singleton && out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        let last = out.pop().expect("nonempty");
        out.last_mut().expect("nonempty").extend(last);
    }
    out
}

struct StepOutput {
    loss: f64,
    grads: Vec<Tensor>,
    correct: usize,
    bn_stats: Vec<(String, crate::ndcore::BnStats)>,
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

/// Mean loss and gradients of one batch on a single tape.
fn batch_step(model: &Model, data: &Dataset, batch: &[usize], rng: Rng) -> Result<StepOutput, ModelError> {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let inputs: Vec<&PartInput> = batch.iter().map(|&i| &data.inputs[i]).collect();
    let labels: Vec<usize> = batch.iter().map(|&i| data.labels[i]).collect();
    let mut ctx = ForwardCtx::training(rng);
    let logits = model.forward(&mut tape, &vars, &inputs, &mut ctx)?;
    let loss = tape.cross_entropy(logits, &labels)?;
    let lt = tape.value(logits);
    let c = lt.cols();
    let correct = labels.iter().enumerate().filter(|&(r, &l)| argmax(&lt.data()[r * c..(r + 1) * c]) == l).count();
    let mut g = tape.backward(loss)?;
    let grads = vars.iter().zip(model.params.tensors()).map(|(&v, t)| g.take_or_zeros(v, t.shape())).collect();
    Ok(StepOutput { loss: tape.value(loss).data()[0], grads, correct, bn_stats: ctx.bn_stats })
}

/// One graph per tape, graphs in parallel, gradients summed in batch order.
fn per_graph_step(model: &Model, data: &Dataset, batch: &[usize], rng: &mut Rng) -> Result<StepOutput, ModelError> {
    let rngs: Vec<Rng> = batch.iter().map(|_| rng.fork()).collect();
    let parts = batch
        .par_iter()
        .zip(rngs)
        .map(|(&i, r)| batch_step(model, data, &[i], r))
        .collect::<Result<Vec<_>, _>>()?;
    let scale = 1.0 / batch.len() as f64;
    let mut out = StepOutput {
        loss: 0.0,
        grads: model.params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect(),
        correct: 0,
        bn_stats: vec![],
    };
    for p in parts {
        out.loss += p.loss * scale;
        out.correct += p.correct;
        for (acc, g) in out.grads.iter_mut().zip(&p.grads) {
            for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += v * scale;
            }
        }
    }
    Ok(out)
}

/// Stream seeding shuffles and dropout, kept apart from weight init.
fn train_stream(seed: u64) -> Rng {
    Rng::new(seed ^ 0x7472_6169_6e5f_7267)
}

/// Minimizes the mean cross-entropy over `data`. Deterministic for a given
/// config and platform.
pub fn train(cfg: &TrainConfig, data: &Dataset) -> Result<(Checkpoint, History), TrainError> {
    cfg.check(data)?;
    for inp in &data.inputs {
        if let Some(max_nodes) = cfg.model.max_nodes() {
            if inp.n_nodes() > max_nodes {
                return Err(ModelError::PartTooLarge { nodes: inp.n_nodes(), max_nodes }.into());
            }
        }
    }
    let mut model = Model::new(cfg.model.clone(), cfg.seed)?;
    let mut opt = cfg.optimizer.build();
    let mut rng = train_stream(cfg.seed);
    let mut history = History::default();
    let per_graph = model.arch() == Arch::Gcn;
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 1..=cfg.epochs {
        if cfg.shuffle {
            rng.shuffle(&mut order);
        }
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for batch in batches(&order, cfg.batch_size, cfg.model.uses_batch_stats()) {
            let step = if per_graph {
                per_graph_step(&model, data, &batch, &mut rng)
            } else {
                batch_step(&model, data, &batch, rng.fork())
            };
            let diverged = || TrainError::DivergedLoss { epoch, parts: batch.iter().map(|&i| data.names[i].clone()).collect() };
            let step = match step {
                Err(ModelError::Nd(NdError::NonFinite(_))) => return Err(diverged()),
                other => other?,
            };
            if !step.loss.is_finite() || step.grads.iter().any(|g| !g.is_finite()) {
                return Err(diverged());
            }
            opt.step(model.params.tensors_mut(), &step.grads);
            model.apply_bn_stats(&step.bn_stats);
            loss_sum += step.loss * batch.len() as f64;
            correct += step.correct;
        }
        history.epochs.push(EpochStats {
            epoch,
            loss: loss_sum / data.len() as f64,
            train_accuracy: correct as f64 / data.len() as f64,
        });
    }
    let final_loss = history.epochs.last().map_or(f64::NAN, |e| e.loss);
    let meta = TrainMeta { seed: cfg.seed, epochs: cfg.epochs, final_loss };
    Ok((Checkpoint { model, meta, class_names: data.class_names.clone() }, history))
}

/// Inference-mode accuracy of `model` on the training parts.
pub fn dataset_accuracy(model: &Model, data: &Dataset) -> Result<f64, TrainError> {
    let hits = data
        .inputs
        .par_iter()
        .zip(&data.labels)
        .map(|(inp, &l)| model.classify(inp).map(|p| usize::from(p.label == l)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(hits.iter().sum::<usize>() as f64 / data.len() as f64)
}
