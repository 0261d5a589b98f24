//! The 26-row variant suite of one base part and its evaluation.

use rayon::prelude::*;

use super::TrainError;
use crate::augment::{AugmentError, Descriptor, MirrorAxis, SchemaTarget, Transform};
use crate::mesh_io::{DatasetManifest, Mesh};
use crate::models::{Checkpoint, PartInput};
use crate::ndcore::Rng;
use crate::synthgen::{read_spec, shift_feature_either_way, spec_path, Feature, PartSpec, Schema, FEATURE_SHIFTS_MM};

pub const SUITE_SIZE: usize = 26;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Subset {
    A,
    B,
    C,
    D,
    E,
}

impl Subset {
    pub const ALL: [Subset; 5] = [Subset::A, Subset::B, Subset::C, Subset::D, Subset::E];

    pub fn title(self) -> &'static str {
        match self {
            Subset::A => "Subset A: rotation and translation",
            Subset::B => "Subset B: additional holes, mesh refinement/coarsening and schema",
            Subset::C => "Subset C: mesh schema and mirroring",
            Subset::D => "Subset D: scale and topographical features",
            Subset::E => "Subset E: node ordering",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RowKind {
    Rigid,
    Holes,
    Schema,
    Refinement,
    Coarsening,
    Mirror,
    Scale,
    HoleShift,
    BeadShift,
    Reorder,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub part: String,
    /// Label of the base part.
    pub label: usize,
    pub subset: Subset,
    pub kind: RowKind,
    /// Human-readable row title.
    pub title: String,
    pub descriptor: Descriptor,
    pub mesh: Mesh,
    /// Set when the variant mesh equals the base mesh.
    pub note: Option<String>,
}

type Row = (Subset, RowKind, String, Descriptor, Mesh);

const TRANSLATION_MM: [f64; 3] = [50.0, -30.0, 20.0];
const ROTATION_DEG: f64 = 30.0;
const Z_AXIS: [f64; 3] = [0.0, 0.0, 1.0];
const SCALE_FACTORS: [f64; 3] = [1.05, 1.10, 1.15];
/// Radius of added holes relative to the part's cell pitch. It shrinks by
/// `HOLE_SHRINK` until the holes fit.
const HOLE_RADIUS_PITCH: f64 = 1.0;
const HOLE_SHRINK: f64 = 0.75;
const HOLE_RADIUS_TRIES: usize = 6;

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

fn plural(k: usize, word: &str) -> String {
    if k == 1 {
        format!("{k} additional {word}")
    } else {
        format!("{k} additional {word}s")
    }
}

/// Builds the suite for `part_name`. The part's `.spec` sidecar must sit
/// next to its mesh.
pub fn build_variant_suite(manifest: &DatasetManifest, part_name: &str, seed: u64) -> Result<Vec<Variant>, TrainError> {
    let entry = manifest.entry(part_name)?;
    let base = manifest.load_mesh(entry)?;
    let sidecar = spec_path(&manifest.resolve(entry));
    if !sidecar.is_file() {
        return Err(TrainError::MissingSpecSidecar { part: part_name.to_string(), path: sidecar });
    }
    let spec = read_spec(&sidecar)?;
    let mut rng = Rng::new(seed);
    let mut rows: Vec<Row> = Vec::with_capacity(SUITE_SIZE);
    let row = |subset, kind, title: String, t: Transform, rng: &mut Rng, spec_for: Option<&PartSpec>| -> Result<Row, TrainError> {
        let d = Descriptor::new(t, rng.next_u64());
        let mesh = d.apply(&base, spec_for)?;
        Ok((subset, kind, title, d, mesh))
    };

    let deg = ROTATION_DEG;
    rows.push(row(Subset::A, RowKind::Rigid, "translated by (50, -30, 20) mm".into(), Transform::Translate(TRANSLATION_MM), &mut rng, None)?);
    rows.push(row(Subset::A, RowKind::Rigid, format!("rotated {deg}° about z"), Transform::Rotate { axis: Z_AXIS, deg }, &mut rng, None)?);
    rows.push(row(
        Subset::A,
        RowKind::Rigid,
        format!("rotated {deg}° about z and translated"),
        Transform::Rigid { axis: Z_AXIS, deg, t: TRANSLATION_MM },
        &mut rng,
        None,
    )?);

    for k in 1..=5 {
        let d_seed = rng.next_u64();
        let mut r = HOLE_RADIUS_PITCH * spec.pitch();
        let mut tries = 0;
        let (d, mesh) = loop {
            let d = Descriptor::new(Transform::Holes { k, r: round2(r) }, d_seed);
            match d.apply(&base, None) {
                Ok(m) => break (d, m),
                Err(AugmentError::CannotPlaceHoles { .. }) if tries + 1 < HOLE_RADIUS_TRIES => {
                    tries += 1;
                    r *= HOLE_SHRINK;
                }
                Err(e) => return Err(e.into()),
            }
        };
        rows.push((Subset::B, RowKind::Holes, plural(k, "hole"), d, mesh));
    }
    let others: Vec<Schema> = Schema::ALL.into_iter().filter(|&s| s != spec.schema).collect();
    let schema_title = |s: Schema| format!("schema changed from {} to {}", spec.schema, s);
    rows.push(row(Subset::B, RowKind::Schema, schema_title(others[0]), Transform::Schema(SchemaTarget::Uniform(others[0])), &mut rng, Some(&spec))?);
    rows.push(row(Subset::B, RowKind::Refinement, "finer mesh".into(), Transform::Refine, &mut rng, None)?);
    rows.push(row(Subset::B, RowKind::Coarsening, "coarse mesh I (2x2 cells merged)".into(), Transform::Coarsen(2), &mut rng, Some(&spec))?);
    rows.push(row(Subset::B, RowKind::Coarsening, "coarse mesh II (4x4 cells merged)".into(), Transform::Coarsen(4), &mut rng, Some(&spec))?);

    rows.push(row(Subset::C, RowKind::Schema, schema_title(others[1]), Transform::Schema(SchemaTarget::Uniform(others[1])), &mut rng, Some(&spec))?);
    rows.push(row(
        Subset::C,
        RowKind::Schema,
        format!("schema changed from {} to mixed quad/tri", spec.schema),
        Transform::Schema(SchemaTarget::Mixed),
        &mut rng,
        Some(&spec),
    )?);
    rows.push(row(Subset::C, RowKind::Mirror, "mirrored along y-axis".into(), Transform::Mirror(MirrorAxis::Y), &mut rng, None)?);
    rows.push(row(Subset::C, RowKind::Mirror, "mirrored along x-axis".into(), Transform::Mirror(MirrorAxis::X), &mut rng, None)?);

    for f in SCALE_FACTORS {
        let pct = ((f - 1.0) * 100.0).round();
        rows.push(row(Subset::D, RowKind::Scale, format!("scaled up {pct}%"), Transform::Scale(f), &mut rng, None)?);
    }
    for (feature, kind, word) in [(Feature::Hole, RowKind::HoleShift, "hole"), (Feature::Bead, RowKind::BeadShift, "bead")] {
        for dx in FEATURE_SHIFTS_MM {
            let (_, used) = shift_feature_either_way(&spec, feature, 0, dx)?;
            let t = match feature {
                Feature::Hole => Transform::ShiftHole { index: 0, dx: used },
                Feature::Bead => Transform::ShiftBead { index: 0, dx: used },
            };
            rows.push(row(Subset::D, kind, format!("{word} shifted {used} mm along x"), t, &mut rng, Some(&spec))?);
        }
    }

    rows.push(row(Subset::E, RowKind::Reorder, "node order shuffled".into(), Transform::Permute, &mut rng, None)?);

    debug_assert_eq!(rows.len(), SUITE_SIZE);
    Ok(rows
        .into_iter()
        .map(|(subset, kind, title, descriptor, mesh)| Variant {
            part: part_name.to_string(),
            label: entry.label,
            subset,
            kind,
            title,
            descriptor,
            note: (mesh == base).then(|| "identical to the base mesh".to_string()),
            mesh,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub part: String,
    pub subset: Subset,
    pub kind: RowKind,
    pub title: String,
    pub descriptor: String,
    pub predicted: Option<usize>,
    pub probability: Option<f64>,
    pub true_label: usize,
    pub correct: bool,
    /// Why the row could not be classified, or a remark on the variant.
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub arch: crate::models::Arch,
    pub rows: Vec<EvalRow>,
}

impl EvalResult {
    pub fn correct_count(&self) -> usize {
        self.rows.iter().filter(|r| r.correct).count()
    }

    /// Correct rows over all rows, or 0 for an empty result.
    pub fn accuracy(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.correct_count() as f64 / self.rows.len() as f64
    }

    /// (correct, total) over rows of the given kinds.
    pub fn tally(&self, kinds: &[RowKind]) -> (usize, usize) {
        let rows = self.rows.iter().filter(|r| kinds.contains(&r.kind));
        rows.fold((0, 0), |(c, n), r| (c + usize::from(r.correct), n + 1))
    }
}

/// Classifies every variant in inference mode. Rows that cannot be
/// classified (a part too large for a padded model) count as failures.
pub fn evaluate(ck: &Checkpoint, suite: &[Variant]) -> EvalResult {
    let rows = suite
        .par_iter()
        .map(|v| {
            let outcome = PartInput::from_mesh(&v.mesh).and_then(|inp| ck.model.classify(&inp));
            let (predicted, probability, note) = match outcome {
                Ok(p) => (Some(p.label), Some(p.probability), v.note.clone()),
                Err(e) => (None, None, Some(format!("{}: {}", e.code(), e))),
            };
            EvalRow {
                part: v.part.clone(),
                subset: v.subset,
                kind: v.kind,
                title: v.title.clone(),
                descriptor: v.descriptor.to_string(),
                predicted,
                probability,
                true_label: v.label,
                correct: predicted == Some(v.label),
                note,
            }
        })
        .collect();
    EvalResult { arch: ck.model.arch(), rows }
}
