//! Finite-difference checks of whole models on small seeded inputs.

use super::{Arch, FcnnConfig, ForwardCtx, GcnConfig, Model, ModelConfig, ModelError, PartInput, PointNetConfig, Readout};
use crate::ndcore::{gradcheck, shape_err, GradcheckReport, NdError, Rng};
use crate::synthgen::{generate_part, Bead, PartSpec, Schema};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
const DROPOUT_SEED: u64 = 99;

/// Small config of each architecture with three classes and `max_nodes` 16.
pub fn toy_config(arch: Arch) -> ModelConfig {
    match arch {
        Arch::Gcn => ModelConfig::Gcn(GcnConfig { num_layers: 2, hidden_dim: 5, readout: Readout::Mean, num_classes: 3 }),
        Arch::Fcnn => ModelConfig::Fcnn(FcnnConfig { max_nodes: 16, hidden_dims: vec![6, 5], num_classes: 3 }),
        Arch::PointNet => ModelConfig::PointNet(PointNetConfig {
            max_nodes: 16,
            use_input_transform: true,
            tnet_dims: vec![4, 5],
            point_mlp_dims: vec![5, 6],
            head_dims: vec![4],
            dropout_p: 0.3,
            num_classes: 3,
            mask_padding: false,
        }),
    }
}

/// Three beaded plates: a 3x2 quad deck, a 2x2 fixed-diagonal triangle
/// deck and a 3x3 alternating one.
pub fn toy_inputs() -> Vec<PartInput> {
    let mut a = PartSpec::plate(30.0, 20.0, 3, 2);
    a.beads.push(Bead { x0: 0.0, y0: 10.0, x1: 30.0, y1: 12.0, half_width: 9.0, height: 3.0 });
    let mut b = PartSpec::plate(20.0, 25.0, 2, 2);
    b.schema = Schema::TriFixed;
    b.beads.push(Bead { x0: 5.0, y0: 0.0, x1: 8.0, y1: 25.0, half_width: 12.0, height: 2.0 });
    let mut c = PartSpec::plate(24.0, 24.0, 3, 3);
    c.schema = Schema::TriAlternating;
    c.beads.push(Bead { x0: 0.0, y0: 0.0, x1: 24.0, y1: 24.0, half_width: 10.0, height: 4.0 });
    [a, b, c]
        .iter()
        .map(|s| PartInput::from_mesh(&generate_part(s).expect("toy spec")).expect("toy mesh"))
        .collect()
}

/// Seeded toy model with every parameter jittered away from its
/// initializer, so zero-initialized layers carry gradient too.
pub fn toy_model(arch: Arch, seed: u64) -> Model {
    let mut model = Model::new(toy_config(arch), seed).expect("toy config");
    let mut rng = Rng::new(seed ^ 0x5eed);
    for t in model.params.tensors_mut() {
        for v in t.data_mut() {
            *v += 0.3 * rng.normal();
        }
    }
    model
}

fn to_nd(e: ModelError) -> NdError {
    match e {
        ModelError::Nd(e) => e,
        other => shape_err("forward", other.to_string()),
    }
}

/// Checks the mean cross-entropy of `model` over `inputs`. Training mode
/// uses batch statistics and one fixed dropout mask.
pub fn check_model(
    model: &Model,
    inputs: &[PartInput],
    labels: &[usize],
    training: bool,
    step: f64,
    tolerance: f64,
) -> Result<GradcheckReport, ModelError> {
    let refs: Vec<&PartInput> = inputs.iter().collect();
    let report = gradcheck(
        &model.params,
        |tape, vars| {
            let mut ctx = if training { ForwardCtx::training(Rng::new(DROPOUT_SEED)) } else { ForwardCtx::inference() };
            let logits = model.forward(tape, vars, &refs, &mut ctx).map_err(to_nd)?;
            tape.cross_entropy(logits, labels)
        },
        step,
        tolerance,
    )?;
    Ok(report)
}

/// Training-mode check of the toy model of `arch` on [`toy_inputs`].
pub fn gradcheck_arch(arch: Arch, tolerance: f64) -> Result<GradcheckReport, ModelError> {
    let model = toy_model(arch, 5);
    check_model(&model, &toy_inputs(), &[0, 2, 1], true, FD_STEP, tolerance)
}
