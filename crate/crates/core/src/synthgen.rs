//! Parametric plate parts: a structured grid with punched holes and raised
//! beads, optionally triangulated.
//!
//! Dataset sampling constants:
//!
//! | quantity            | range                                           |
//! |---------------------|-------------------------------------------------|
//! | width, height       | 60–200 mm                                       |
//! | target cell pitch   | 6–14 mm, giving nx, ny = round(size / pitch) clamped to 6–20 |
//! | schema              | quad 1/2, tri_fixed 1/4, tri_alternating 1/4    |
//! | holes               | 1–3, radius 0.8–1.5 × coarsest pitch            |
//! | beads               | 1–2, half width 1–2 × coarsest pitch, height 2–8 mm |
//!
//! Sampled lengths are rounded to 0.01 mm so the `.spec` sidecars stay
//! readable. Every sampled part keeps its first hole and first bead
//! shiftable by ±5, ±10 and ±15 mm along x.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::augment::{quad_to_tri, TriPattern};
use crate::mesh_io::{write_mesh, DatasetManifest, Element, ManifestEntry, Mesh, Node};
use crate::ndcore::Rng;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid part spec: {0}")]
    InvalidSpec(String),
    #[error("{feature} index {index} out of range ({count} present)")]
    IndexOutOfRange { feature: Feature, index: usize, count: usize },
    #[error("shifted {feature} {index} would leave the plate or overlap another hole")]
    FeatureOutOfBounds { feature: Feature, index: usize },
    #[error("spec text line {line}: {reason}")]
    BadSpecText { line: usize, reason: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl SynthError {
    pub fn code(&self) -> &'static str {
        match self {
            SynthError::InvalidSpec(_) => "invalid_spec",
            SynthError::IndexOutOfRange { .. } => "index_out_of_range",
            SynthError::FeatureOutOfBounds { .. } => "feature_out_of_bounds",
            SynthError::BadSpecText { .. } => "bad_spec_text",
            SynthError::Io { .. } => "io",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Schema {
    Quad,
    TriFixed,
    TriAlternating,
}

impl Schema {
    pub const ALL: [Schema; 3] = [Schema::Quad, Schema::TriFixed, Schema::TriAlternating];

    pub fn as_str(self) -> &'static str {
        match self {
            Schema::Quad => "quad",
            Schema::TriFixed => "tri_fixed",
            Schema::TriAlternating => "tri_alternating",
        }
    }
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Schema {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Schema::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| format!("unknown schema '{s}'"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hole {
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
}

/// Raised ridge along the segment `(x0, y0)–(x1, y1)` with a truncated
/// parabolic cross-section.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bead {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    pub half_width: f64,
    pub height: f64,
}

impl Bead {
    /// Distance from `(x, y)` to the centerline segment.
    pub fn distance(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (self.x1 - self.x0, self.y1 - self.y0);
        let len2 = dx * dx + dy * dy;
        let t = if len2 == 0.0 { 0.0 } else { (((x - self.x0) * dx + (y - self.y0) * dy) / len2).clamp(0.0, 1.0) };
        let (px, py) = (self.x0 + t * dx, self.y0 + t * dy);
        ((x - px).powi(2) + (y - py).powi(2)).sqrt()
    }

    /// `height · max(0, 1 − (d / half_width)²)`.
    pub fn lift(&self, x: f64, y: f64) -> f64 {
        let d = self.distance(x, y) / self.half_width;
        self.height * (1.0 - d * d).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartSpec {
    pub width: f64,
    pub height: f64,
    pub nx: usize,
    pub ny: usize,
    pub schema: Schema,
    pub holes: Vec<Hole>,
    pub beads: Vec<Bead>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Feature {
    Hole,
    Bead,
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Feature::Hole => "hole",
            Feature::Bead => "bead",
        })
    }
}

fn holes_overlap(a: &Hole, b: &Hole) -> bool {
    ((a.cx - b.cx).powi(2) + (a.cy - b.cy).powi(2)).sqrt() < a.r + b.r
}

impl PartSpec {
    pub fn plate(width: f64, height: f64, nx: usize, ny: usize) -> Self {
        PartSpec { width, height, nx, ny, schema: Schema::Quad, holes: vec![], beads: vec![] }
    }

    fn hole_in_plate(&self, h: &Hole) -> bool {
        h.r > 0.0 && h.cx - h.r >= 0.0 && h.cx + h.r <= self.width && h.cy - h.r >= 0.0 && h.cy + h.r <= self.height
    }

    fn bead_in_plate(&self, b: &Bead) -> bool {
        let inside = |x: f64, y: f64| (0.0..=self.width).contains(&x) && (0.0..=self.height).contains(&y);
        inside(b.x0, b.y0) && inside(b.x1, b.y1)
    }

    pub fn check(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if !(self.width.is_finite() && self.height.is_finite() && self.width > 0.0 && self.height > 0.0) {
            return bad(format!("plate size {} x {}", self.width, self.height));
        }
        if self.nx < 2 || self.ny < 2 {
            return bad(format!("grid {} x {} (need at least 2 x 2)", self.nx, self.ny));
        }
        for (i, h) in self.holes.iter().enumerate() {
            if !self.hole_in_plate(h) {
                return bad(format!("hole {i} is not inside the plate"));
            }
            if self.holes[..i].iter().any(|o| holes_overlap(o, h)) {
                return bad(format!("hole {i} overlaps an earlier hole"));
            }
        }
        for (i, b) in self.beads.iter().enumerate() {
            if !(b.half_width > 0.0) || !b.height.is_finite() {
                return bad(format!("bead {i} needs a positive half width and finite height"));
            }
            if !self.bead_in_plate(b) {
                return bad(format!("bead {i} centerline leaves the plate"));
            }
        }
        Ok(())
    }

    /// Canonical `key=value` sidecar text. Holes and beads repeat their key.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "width={}\nheight={}\nnx={}\nny={}\nschema={}\n",
            self.width, self.height, self.nx, self.ny, self.schema
        );
        for h in &self.holes {
            s.push_str(&format!("hole={},{},{}\n", h.cx, h.cy, h.r));
        }
        for b in &self.beads {
            s.push_str(&format!("bead={},{},{},{},{},{}\n", b.x0, b.y0, b.x1, b.y1, b.half_width, b.height));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<PartSpec, SynthError> {
        let mut spec = PartSpec::plate(0.0, 0.0, 0, 0);
        let mut seen = [false; 5];
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let raw = raw.trim();
            if raw.is_empty() {
                continue;
            }
            let err = |reason: String| SynthError::BadSpecText { line, reason };
            let (key, value) = raw.split_once('=').ok_or_else(|| err("expected key=value".into()))?;
            let nums = |n: usize| -> Result<Vec<f64>, SynthError> {
                let v: Vec<f64> = value
                    .split(',')
                    .map(|f| f.trim().parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| err(format!("{key}: {e}")))?;
                if v.len() != n {
                    return Err(err(format!("{key} needs {n} numbers")));
                }
                Ok(v)
            };
            let count = |v: &str| v.parse::<usize>().map_err(|e| err(format!("{key}: {e}")));
            match key {
                "width" => (spec.width, seen[0]) = (nums(1)?[0], true),
                "height" => (spec.height, seen[1]) = (nums(1)?[0], true),
                "nx" => (spec.nx, seen[2]) = (count(value)?, true),
                "ny" => (spec.ny, seen[3]) = (count(value)?, true),
                "schema" => (spec.schema, seen[4]) = (value.parse().map_err(err)?, true),
                "hole" => {
                    let v = nums(3)?;
                    spec.holes.push(Hole { cx: v[0], cy: v[1], r: v[2] });
                }
                "bead" => {
                    let v = nums(6)?;
                    spec.beads.push(Bead { x0: v[0], y0: v[1], x1: v[2], y1: v[3], half_width: v[4], height: v[5] });
                }
                other => return Err(err(format!("unknown key '{other}'"))),
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            let key = ["width", "height", "nx", "ny", "schema"][missing];
            return Err(SynthError::BadSpecText { line: 0, reason: format!("missing {key}") });
        }
        Ok(spec)
    }

    /// Coarsest cell edge length.
    pub fn pitch(&self) -> f64 {
        (self.width / self.nx as f64).max(self.height / self.ny as f64)
    }
}

/// Structured-grid bookkeeping for a quad plate: which node sits at each
/// lattice point and which element fills each cell. Hole punching leaves
/// `None` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMeta {
    pub nx: usize,
    pub ny: usize,
    /// `(nx + 1) * (ny + 1)` entries, index `j * (nx + 1) + i`.
    pub nodes: Vec<Option<u64>>,
    /// `nx * ny` entries, index `j * nx + i`.
    pub cells: Vec<Option<u64>>,
}

impl GridMeta {
    pub fn node(&self, i: usize, j: usize) -> Option<u64> {
        self.nodes[j * (self.nx + 1) + i]
    }

    pub fn cell(&self, i: usize, j: usize) -> Option<u64> {
        self.cells[j * self.nx + i]
    }
}

/// The quad plate of `spec` (schema ignored) together with its grid layout.
///
/// Node ids are `j * (nx + 1) + i + 1` and element ids `j * nx + i + 1`, so
/// punched decks keep gaps in both numberings.
pub fn generate_structured(spec: &PartSpec) -> Result<(Mesh, GridMeta), SynthError> {
    spec.check()?;
    let (nx, ny) = (spec.nx, spec.ny);
    let node_id = |i: usize, j: usize| (j * (nx + 1) + i + 1) as u64;
    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            let x = spec.width * i as f64 / nx as f64;
            let y = spec.height * j as f64 / ny as f64;
            let z = spec.beads.iter().map(|b| b.lift(x, y)).fold(0.0, f64::max);
            nodes.push(Node { id: node_id(i, j), xyz: [x, y, z] });
        }
    }
    let mut mesh = Mesh { nodes, elements: Vec::with_capacity(nx * ny) };
    let mut cells = vec![None; nx * ny];
    for j in 0..ny {
        for i in 0..nx {
            let conn = [node_id(i, j), node_id(i + 1, j), node_id(i + 1, j + 1), node_id(i, j + 1)];
            // centroid from the same lattice coordinates as the nodes
            let cx = conn.iter().map(|&id| mesh.nodes[id as usize - 1].xyz[0]).sum::<f64>() / 4.0;
            let cy = conn.iter().map(|&id| mesh.nodes[id as usize - 1].xyz[1]).sum::<f64>() / 4.0;
            if spec.holes.iter().any(|h| ((cx - h.cx).powi(2) + (cy - h.cy).powi(2)).sqrt() < h.r) {
                continue;
            }
            let id = (j * nx + i + 1) as u64;
            cells[j * nx + i] = Some(id);
            mesh.elements.push(Element::quad(id, conn));
        }
    }
    mesh.drop_unreferenced_nodes();
    let present: std::collections::HashSet<u64> = mesh.nodes.iter().map(|n| n.id).collect();
    let grid_nodes = (0..(nx + 1) * (ny + 1)).map(|k| Some(k as u64 + 1).filter(|id| present.contains(id))).collect();
    Ok((mesh, GridMeta { nx, ny, nodes: grid_nodes, cells }))
}

/// Converts a quad deck to the given schema.
pub fn apply_schema(mesh: &Mesh, schema: Schema) -> Mesh {
    match schema {
        Schema::Quad => mesh.clone(),
        Schema::TriFixed => quad_to_tri(mesh, TriPattern::FixedDiagonal),
        Schema::TriAlternating => quad_to_tri(mesh, TriPattern::Alternating),
    }
}

/// Deterministic mesh of a part spec; schema conversion happens last.
pub fn generate_part(spec: &PartSpec) -> Result<Mesh, SynthError> {
    let (mesh, _) = generate_structured(spec)?;
    Ok(apply_schema(&mesh, spec.schema))
}

/// Translates hole or bead `index` by `dx` along x.
pub fn shift_feature(spec: &PartSpec, feature: Feature, index: usize, dx: f64) -> Result<PartSpec, SynthError> {
    let mut out = spec.clone();
    match feature {
        Feature::Hole => {
            let count = spec.holes.len();
            let h = out.holes.get_mut(index).ok_or(SynthError::IndexOutOfRange { feature, index, count })?;
            h.cx += dx;
            let moved = out.holes[index];
            let clash = out.holes.iter().enumerate().any(|(k, o)| k != index && holes_overlap(o, &moved));
            if !out.hole_in_plate(&moved) || clash {
                return Err(SynthError::FeatureOutOfBounds { feature, index });
            }
        }
        Feature::Bead => {
            let count = spec.beads.len();
            let b = out.beads.get_mut(index).ok_or(SynthError::IndexOutOfRange { feature, index, count })?;
            b.x0 += dx;
            b.x1 += dx;
            let moved = out.beads[index];
            if !out.bead_in_plate(&moved) {
                return Err(SynthError::FeatureOutOfBounds { feature, index });
            }
        }
    }
    Ok(out)
}

/// Shift by `dx`, falling back to `-dx` when `+dx` leaves the plate or
/// collides. Returns the spec and the signed shift actually used.
pub fn shift_feature_either_way(spec: &PartSpec, feature: Feature, index: usize, dx: f64) -> Result<(PartSpec, f64), SynthError> {
    match shift_feature(spec, feature, index, dx) {
        Ok(s) => Ok((s, dx)),
        Err(SynthError::FeatureOutOfBounds { .. }) => shift_feature(spec, feature, index, -dx).map(|s| (s, -dx)),
        Err(e) => Err(e),
    }
}

/// Shift magnitudes the variant suite applies to the first hole and bead.
pub const FEATURE_SHIFTS_MM: [f64; 3] = [5.0, 10.0, 15.0];

#[derive(Debug, Clone, PartialEq)]
pub struct CatalogEntry {
    pub class_id: usize,
    pub name: String,
    pub spec: PartSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassCatalog {
    pub entries: Vec<CatalogEntry>,
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

fn sample_spec(rng: &mut Rng) -> Option<PartSpec> {
    let width = round2(rng.range(60.0, 200.0));
    let height = round2(rng.range(60.0, 200.0));
    let pitch = rng.range(6.0, 14.0);
    let nx = ((width / pitch).round() as usize).clamp(6, 20);
    let ny = ((height / pitch).round() as usize).clamp(6, 20);
    let schema = match rng.below(4) {
        0 | 1 => Schema::Quad,
        2 => Schema::TriFixed,
        _ => Schema::TriAlternating,
    };
    let mut spec = PartSpec { width, height, nx, ny, schema, holes: vec![], beads: vec![] };
    let p = spec.pitch();

    let n_holes = rng.int_in(1, 3);
    for _ in 0..n_holes {
        for _ in 0..100 {
            let r = round2(rng.range(0.8, 1.5) * p);
            let margin = r + p;
            if 2.0 * margin >= width || 2.0 * margin >= height {
                continue;
            }
            let h = Hole { cx: round2(rng.range(margin, width - margin)), cy: round2(rng.range(margin, height - margin)), r };
            let spaced = spec.holes.iter().all(|o| ((o.cx - h.cx).powi(2) + (o.cy - h.cy).powi(2)).sqrt() >= o.r + h.r + p);
            if spaced {
                spec.holes.push(h);
                break;
            }
        }
    }
    let n_beads = rng.int_in(1, 2);
    for _ in 0..n_beads {
        for _ in 0..100 {
            let half_width = round2(rng.range(1.0, 2.0) * p);
            let bead_height = round2(rng.range(2.0, 8.0));
            let angle = rng.range(0.0, std::f64::consts::PI);
            let len = rng.range(0.3, 0.8) * width.min(height);
            let (mx, my) = (rng.range(0.0, width), rng.range(0.0, height));
            let (hx, hy) = (0.5 * len * angle.cos(), 0.5 * len * angle.sin());
            let b = Bead {
                x0: round2(mx - hx),
                y0: round2(my - hy),
                x1: round2(mx + hx),
                y1: round2(my + hy),
                half_width,
                height: bead_height,
            };
            if spec.bead_in_plate(&b) {
                spec.beads.push(b);
                break;
            }
        }
    }
    if spec.holes.is_empty() || spec.beads.is_empty() || spec.check().is_err() {
        return None;
    }
    for dx in FEATURE_SHIFTS_MM {
        for f in [Feature::Hole, Feature::Bead] {
            shift_feature_either_way(&spec, f, 0, dx).ok()?;
        }
    }
    Some(spec)
}

/// Seeded catalog of `n_classes` pairwise distinct part specs.
pub fn sample_catalog(n_classes: usize, seed: u64) -> ClassCatalog {
    let mut rng = Rng::new(seed);
    let mut entries: Vec<CatalogEntry> = Vec::with_capacity(n_classes);
    while entries.len() < n_classes {
        let Some(spec) = sample_spec(&mut rng) else { continue };
        if entries.iter().any(|e| e.spec == spec) {
            continue;
        }
        let class_id = entries.len();
        entries.push(CatalogEntry { class_id, name: format!("part_{class_id:03}"), spec });
    }
    ClassCatalog { entries }
}

/// Sidecar path of a mesh file: same stem, `.spec` extension.
pub fn spec_path(mesh_path: &Path) -> PathBuf {
    mesh_path.with_extension("spec")
}

pub fn read_spec(path: &Path) -> Result<PartSpec, SynthError> {
    let text = std::fs::read_to_string(path).map_err(|source| SynthError::Io { path: path.to_path_buf(), source })?;
    PartSpec::from_text(&text)
}

/// Writes `part_NNN.bdf` + `part_NNN.spec` per class and `manifest.csv`
/// into `out_dir`.
pub fn generate_dataset(n_classes: usize, seed: u64, out_dir: &Path) -> Result<DatasetManifest, SynthError> {
    if n_classes < 2 {
        return Err(SynthError::InvalidSpec(format!("need at least 2 classes, got {n_classes}")));
    }
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| SynthError::Io { path, source }
    };
    std::fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    let catalog = sample_catalog(n_classes, seed);
    let mut manifest = DatasetManifest { entries: vec![], base_dir: out_dir.to_path_buf() };
    for e in &catalog.entries {
        let mesh = generate_part(&e.spec)?;
        let file = PathBuf::from(format!("{}.bdf", e.name));
        let mesh_path = out_dir.join(&file);
        std::fs::write(&mesh_path, write_mesh(&mesh)).map_err(io(&mesh_path))?;
        let sidecar = spec_path(&mesh_path);
        std::fs::write(&sidecar, e.spec.to_text()).map_err(io(&sidecar))?;
        manifest.entries.push(ManifestEntry { path: file, label: e.class_id, name: e.name.clone() });
    }
    let manifest_path = out_dir.join("manifest.csv");
    std::fs::write(&manifest_path, manifest.to_csv()).map_err(io(&manifest_path))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh_io::{parse_mesh, validate};

    #[test]
    fn minimal_plate() {
        let m = generate_part(&PartSpec::plate(10.0, 10.0, 2, 2)).unwrap();
        assert_eq!(m.node_count(), 9);
        assert_eq!(m.element_count(), 4);
        assert!(m.nodes.iter().all(|n| n.xyz[2] == 0.0));
        assert!(validate(&m).is_empty());
    }

    #[test]
    fn hole_covering_center_cell() {
        let mut spec = PartSpec::plate(30.0, 30.0, 3, 3);
        spec.holes.push(Hole { cx: 15.0, cy: 15.0, r: 5.0 });
        let m = generate_part(&spec).unwrap();
        assert_eq!(m.element_count(), 8);
        // every node still touches a surviving cell
        assert_eq!(m.node_count(), 16);
    }

    #[test]
    fn bead_centerline_reaches_full_height() {
        let mut spec = PartSpec::plate(100.0, 60.0, 10, 6);
        spec.beads.push(Bead { x0: 0.0, y0: 30.0, x1: 100.0, y1: 30.0, half_width: 15.0, height: 2.0 });
        let m = generate_part(&spec).unwrap();
        for n in &m.nodes {
            if n.xyz[1] == 30.0 {
                assert_eq!(n.xyz[2], 2.0);
            }
            if (n.xyz[1] - 30.0).abs() >= 15.0 {
                assert_eq!(n.xyz[2], 0.0);
            }
        }
        // x-y projection matches the bead-free plate
        let flat = generate_part(&PartSpec::plate(100.0, 60.0, 10, 6)).unwrap();
        for (a, b) in m.nodes.iter().zip(&flat.nodes) {
            assert_eq!(a.xyz[..2], b.xyz[..2]);
        }
    }

    #[test]
    fn invalid_specs() {
        assert!(generate_part(&PartSpec::plate(10.0, 10.0, 1, 4)).is_err());
        let mut s = PartSpec::plate(50.0, 50.0, 5, 5);
        s.holes = vec![Hole { cx: 10.0, cy: 10.0, r: 5.0 }, Hole { cx: 15.0, cy: 10.0, r: 5.0 }];
        assert!(matches!(generate_part(&s), Err(SynthError::InvalidSpec(_))));
        s.holes = vec![Hole { cx: 2.0, cy: 10.0, r: 5.0 }];
        assert!(matches!(generate_part(&s), Err(SynthError::InvalidSpec(_))));
        s.holes.clear();
        s.beads = vec![Bead { x0: 0.0, y0: 0.0, x1: 10.0, y1: 0.0, half_width: 0.0, height: 1.0 }];
        assert!(matches!(generate_part(&s), Err(SynthError::InvalidSpec(_))));
    }

    #[test]
    fn feature_shift() {
        let mut spec = PartSpec::plate(100.0, 100.0, 10, 10);
        spec.holes.push(Hole { cx: 50.0, cy: 50.0, r: 8.0 });
        spec.beads.push(Bead { x0: 20.0, y0: 10.0, x1: 20.0, y1: 90.0, half_width: 10.0, height: 3.0 });
        assert_eq!(shift_feature(&spec, Feature::Hole, 0, 0.0).unwrap(), spec);
        let s = shift_feature(&spec, Feature::Hole, 0, 5.0).unwrap();
        assert_eq!(s.holes[0].cx, 55.0);
        assert_eq!(shift_feature(&s, Feature::Hole, 0, -5.0).unwrap(), spec);
        assert!(matches!(shift_feature(&spec, Feature::Hole, 1, 5.0), Err(SynthError::IndexOutOfRange { .. })));
        assert!(matches!(shift_feature(&spec, Feature::Bead, 0, -25.0), Err(SynthError::FeatureOutOfBounds { .. })));
        spec.holes[0].cx = 80.0;
        assert_eq!(shift_feature_either_way(&spec, Feature::Hole, 0, 15.0).unwrap().1, -15.0);
    }

    #[test]
    fn small_hole_shift_can_leave_mesh_unchanged() {
        // centroids sit on a 10 mm lattice at 5, 15, ..; a hole of r = 4 at
        // cx = 52 removes the cell centred at (55, 55) and so does cx = 57
        let mut spec = PartSpec::plate(100.0, 100.0, 10, 10);
        spec.holes.push(Hole { cx: 52.0, cy: 55.0, r: 4.0 });
        let shifted = shift_feature(&spec, Feature::Hole, 0, 5.0).unwrap();
        assert_ne!(shifted, spec);
        assert_eq!(generate_part(&shifted).unwrap(), generate_part(&spec).unwrap());
    }

    #[test]
    fn spec_text_round_trip() {
        let cat = sample_catalog(6, 3);
        for e in &cat.entries {
            let text = e.spec.to_text();
            assert_eq!(PartSpec::from_text(&text).unwrap(), e.spec);
        }
        assert!(PartSpec::from_text("width=1\n").is_err());
        assert!(PartSpec::from_text("width=1\nheight=2\nnx=3\nny=3\nschema=hex\n").is_err());
    }

    #[test]
    fn catalog_is_valid_and_distinct() {
        let cat = sample_catalog(24, 11);
        assert_eq!(cat.entries.len(), 24);
        for (i, e) in cat.entries.iter().enumerate() {
            assert_eq!(e.class_id, i);
            let m = generate_part(&e.spec).unwrap();
            assert!(validate(&m).is_empty(), "{}", e.name);
            assert!((40..=500).contains(&m.node_count()), "{} nodes", m.node_count());
            assert!(cat.entries[..i].iter().all(|o| o.spec != e.spec));
        }
        assert_eq!(sample_catalog(24, 11), cat);
    }

    #[test]
    fn dataset_files_are_deterministic() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = generate_dataset(2, 7, a.path()).unwrap();
        generate_dataset(2, 7, b.path()).unwrap();
        assert_eq!(ma.entries.iter().map(|e| e.label).collect::<Vec<_>>(), vec![0, 1]);
        for name in ["part_000.bdf", "part_001.bdf", "part_000.spec", "manifest.csv"] {
            assert_eq!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap());
        }
        let text = std::fs::read_to_string(a.path().join("part_001.bdf")).unwrap();
        assert!(validate(&parse_mesh(&text).unwrap()).is_empty());
        assert!(matches!(generate_dataset(1, 7, a.path()), Err(SynthError::InvalidSpec(_))));
    }
}
