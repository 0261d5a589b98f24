//! Mesh transformations used to build test variants, and the one-line
//! descriptor text that records them.
//!
//! Descriptor grammar:
//!
//! ```text
//! descriptor := kind [ "(" param { "," param } ")" ] [ "#" seed ]
//! param      := key "=" value
//! ```
//!
//! | kind          | params (default)                                   |
//! |---------------|----------------------------------------------------|
//! | `identity`    |                                                    |
//! | `translate`   | `x`, `y`, `z` mm (0)                               |
//! | `rotate`      | `ax`, `ay` (0), `az` (1), `deg` (required)         |
//! | `rigid`       | rotate params then `x`, `y`, `z`; rotation first   |
//! | `mirror`      | `axis` = `x` or `y` (required)                     |
//! | `scale`       | `factor` (required)                                |
//! | `holes`       | `k` (required), `r` mm (required)                  |
//! | `refine`      |                                                    |
//! | `quad_to_tri` | `pattern` = `fixed` or `alternating` (`fixed`)     |
//! | `permute`     |                                                    |
//! | `coarsen`     | `factor` (2); needs the part spec                  |
//! | `schema`      | `to` = `quad`, `tri_fixed`, `tri_alternating`, `mixed`; needs the part spec |
//! | `shift_hole`  | `index` (0), `dx` mm (required); needs the part spec |
//! | `shift_bead`  | `index` (0), `dx` mm (required); needs the part spec |
//!
//! The seed defaults to 0 and only matters for `holes` and `permute`.
//! Spec-driven kinds regenerate the part from its spec and ignore the input
//! mesh. Formatting always writes every parameter and the seed, so
//! `parse(format(d)) == d`.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::mesh_io::{Element, ElementKind, Mesh, Node};
use crate::ndcore::Rng;
use crate::synthgen::{
    apply_schema, generate_part, generate_structured, shift_feature, Feature, GridMeta, PartSpec, Schema, SynthError,
};

/// Draws per hole before giving up.
pub const MAX_HOLE_ATTEMPTS: usize = 100;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("rotation axis is zero")]
    ZeroAxis,
    #[error("scale factor {0} is not positive")]
    NonPositiveFactor(f64),
    #[error("cannot place {k} holes of radius {radius}")]
    CannotPlaceHoles { k: usize, radius: f64 },
    #[error("mesh is not structured: {0}")]
    NotStructured(String),
    #[error("'{0}' needs the part spec")]
    MissingSpec(&'static str),
    #[error("bad descriptor '{text}': {reason}")]
    BadDescriptor { text: String, reason: String },
    #[error(transparent)]
    Synth(#[from] SynthError),
}

impl AugmentError {
    pub fn code(&self) -> &'static str {
        match self {
            AugmentError::ZeroAxis => "zero_axis",
            AugmentError::NonPositiveFactor(_) => "non_positive_factor",
            AugmentError::CannotPlaceHoles { .. } => "cannot_place_holes",
            AugmentError::NotStructured(_) => "not_structured",
            AugmentError::MissingSpec(_) => "missing_spec_sidecar",
            AugmentError::BadDescriptor { .. } => "bad_descriptor",
            AugmentError::Synth(e) => e.code(),
        }
    }
}

fn map_coords(mesh: &Mesh, f: impl Fn([f64; 3]) -> [f64; 3]) -> Mesh {
    Mesh {
        nodes: mesh.nodes.iter().map(|n| Node { id: n.id, xyz: f(n.xyz) }).collect(),
        elements: mesh.elements.clone(),
    }
}

pub fn translate(mesh: &Mesh, t: [f64; 3]) -> Mesh {
    map_coords(mesh, |p| [p[0] + t[0], p[1] + t[1], p[2] + t[2]])
}

/// Rotation matrix for a right-handed turn of `angle` radians about `axis`.
pub fn rotation_matrix(axis: [f64; 3], angle: f64) -> Result<[[f64; 3]; 3], AugmentError> {
    let len = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    if !(len > 0.0) || !len.is_finite() {
        return Err(AugmentError::ZeroAxis);
    }
    let [x, y, z] = axis.map(|v| v / len);
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    Ok([
        [c + x * x * t, x * y * t - z * s, x * z * t + y * s],
        [y * x * t + z * s, c + y * y * t, y * z * t - x * s],
        [z * x * t - y * s, z * y * t + x * s, c + z * z * t],
    ])
}

pub fn rotate(mesh: &Mesh, axis: [f64; 3], angle: f64) -> Result<Mesh, AugmentError> {
    let r = rotation_matrix(axis, angle)?;
    Ok(map_coords(mesh, |p| {
        std::array::from_fn(|i| r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2])
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MirrorAxis {
    X,
    Y,
}

/// Negates one coordinate and reverses element winding.
pub fn mirror(mesh: &Mesh, axis: MirrorAxis) -> Mesh {
    let k = match axis {
        MirrorAxis::X => 0,
        MirrorAxis::Y => 1,
    };
    let mut out = map_coords(mesh, |mut p| {
        p[k] = -p[k];
        p
    });
    for e in &mut out.elements {
        e.conn[1..].reverse();
    }
    out
}

pub fn uniform_scale(mesh: &Mesh, factor: f64) -> Result<Mesh, AugmentError> {
    if !(factor > 0.0) || !factor.is_finite() {
        return Err(AugmentError::NonPositiveFactor(factor));
    }
    Ok(map_coords(mesh, |p| p.map(|v| v * factor)))
}

fn xy_centroids(mesh: &Mesh) -> Vec<[f64; 2]> {
    let pos = mesh.node_positions();
    mesh.elements
        .iter()
        .map(|e| {
            let c = mesh.centroid(e, &pos);
            [c[0], c[1]]
        })
        .collect()
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Element centroids farther than `radius` from every side of the x-y
/// bounding box.
pub fn hole_candidates(mesh: &Mesh, radius: f64) -> Vec<[f64; 2]> {
    if mesh.nodes.is_empty() {
        return vec![];
    }
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for n in &mesh.nodes {
        for a in 0..2 {
            lo[a] = lo[a].min(n.xyz[a]);
            hi[a] = hi[a].max(n.xyz[a]);
        }
    }
    xy_centroids(mesh)
        .into_iter()
        .filter(|c| (0..2).all(|a| c[a] - lo[a] > radius && hi[a] - c[a] > radius))
        .collect()
}

/// Seeded hole centers, each an interior element centroid and at least
/// `2 * radius` from the others.
pub fn place_holes(mesh: &Mesh, k: usize, radius: f64, rng: &mut Rng) -> Result<Vec<[f64; 2]>, AugmentError> {
    if k == 0 {
        return Ok(vec![]);
    }
    let fail = || AugmentError::CannotPlaceHoles { k, radius };
    if !(radius > 0.0) {
        return Err(fail());
    }
    let candidates = hole_candidates(mesh, radius);
    if candidates.len() < k {
        return Err(fail());
    }
    let mut centers: Vec<[f64; 2]> = Vec::with_capacity(k);
    for _ in 0..k {
        let placed = (0..MAX_HOLE_ATTEMPTS).find_map(|_| {
            let c = candidates[rng.below(candidates.len())];
            centers.iter().all(|o| dist2(*o, c) >= 2.0 * radius).then_some(c)
        });
        centers.push(placed.ok_or_else(fail)?);
    }
    Ok(centers)
}

/// Deletes every element whose x-y centroid lies strictly within `radius` of
/// a center, then drops the nodes that lost their last element.
pub fn punch_holes(mesh: &Mesh, centers: &[[f64; 2]], radius: f64) -> Mesh {
    let centroids = xy_centroids(mesh);
    let mut out = Mesh { nodes: mesh.nodes.clone(), elements: Vec::with_capacity(mesh.elements.len()) };
    for (e, c) in mesh.elements.iter().zip(centroids) {
        if !centers.iter().any(|h| dist2(*h, c) < radius) {
            out.elements.push(e.clone());
        }
    }
    // orphans that were already present stay; only newly freed nodes go
    let before: std::collections::HashSet<u64> = mesh.elements.iter().flat_map(|e| e.conn.iter().copied()).collect();
    let after: std::collections::HashSet<u64> = out.elements.iter().flat_map(|e| e.conn.iter().copied()).collect();
    out.nodes.retain(|n| !before.contains(&n.id) || after.contains(&n.id));
    out
}

pub fn add_holes(mesh: &Mesh, k: usize, radius: f64, rng: &mut Rng) -> Result<Mesh, AugmentError> {
    let centers = place_holes(mesh, k, radius, rng)?;
    if centers.is_empty() {
        return Ok(mesh.clone());
    }
    Ok(punch_holes(mesh, &centers, radius))
}

/// Node ids introduced by [`refine`].
#[derive(Debug, Clone, Default)]
pub struct RefineMap {
    /// Midpoint node per undirected edge, keyed `(min id, max id)`.
    pub edge_mid: HashMap<(u64, u64), u64>,
    /// Centroid node per input element (quads only).
    pub centroid: Vec<Option<u64>>,
}

fn edge_key(a: u64, b: u64) -> (u64, u64) {
    (a.min(b), a.max(b))
}

/// Splits every quad into four quads and every triangle into four triangles.
///
/// New nodes get ids from `max_node_id + 1` upward in creation order; shared
/// edge midpoints are created once. Child `k` of an element contains its
/// corner `k`; elements are renumbered from 1.
pub fn refine_with_map(mesh: &Mesh) -> (Mesh, RefineMap) {
    let pos = mesh.node_positions();
    let mut nodes = mesh.nodes.clone();
    let mut next_id = mesh.max_node_id() + 1;
    let mut map = RefineMap::default();
    let mut elements = Vec::with_capacity(4 * mesh.elements.len());
    let mut new_node = |nodes: &mut Vec<Node>, xyz: [f64; 3]| {
        let id = next_id;
        next_id += 1;
        nodes.push(Node { id, xyz });
        id
    };
    for e in &mesh.elements {
        let corner = |id: u64| mesh.nodes[pos[&id]].xyz;
        let n = e.conn.len();
        let mids: Vec<u64> = (0..n)
            .map(|k| {
                let (a, b) = (e.conn[k], e.conn[(k + 1) % n]);
                if let Some(&m) = map.edge_mid.get(&edge_key(a, b)) {
                    return m;
                }
                let (pa, pb) = (corner(a), corner(b));
                let m = new_node(&mut nodes, std::array::from_fn(|i| 0.5 * (pa[i] + pb[i])));
                map.edge_mid.insert(edge_key(a, b), m);
                m
            })
            .collect();
        let next = |id: &mut u64| {
            *id += 1;
            *id
        };
        let mut eid = elements.len() as u64;
        match e.kind {
            ElementKind::Quad => {
                let c = mesh.centroid(e, &pos);
                let m = new_node(&mut nodes, c);
                map.centroid.push(Some(m));
                let [a, b, cc, d] = [e.conn[0], e.conn[1], e.conn[2], e.conn[3]];
                let [ab, bc, cd, da] = [mids[0], mids[1], mids[2], mids[3]];
                for conn in [[a, ab, m, da], [ab, b, bc, m], [m, bc, cc, cd], [da, m, cd, d]] {
                    elements.push(Element::quad(next(&mut eid), conn));
                }
            }
            ElementKind::Tri => {
                map.centroid.push(None);
                let [a, b, c] = [e.conn[0], e.conn[1], e.conn[2]];
                let [ab, bc, ca] = [mids[0], mids[1], mids[2]];
                for conn in [[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]] {
                    elements.push(Element::tri(next(&mut eid), conn));
                }
            }
        }
    }
    (Mesh { nodes, elements }, map)
}

pub fn refine(mesh: &Mesh) -> Mesh {
    refine_with_map(mesh).0
}

fn check_structured(mesh: &Mesh, meta: &GridMeta) -> Result<(), AugmentError> {
    let bad = |m: String| Err(AugmentError::NotStructured(m));
    if meta.nx == 0 || meta.ny == 0 || meta.cells.len() != meta.nx * meta.ny || meta.nodes.len() != (meta.nx + 1) * (meta.ny + 1)
    {
        return bad("grid metadata has inconsistent dimensions".into());
    }
    let by_id: HashMap<u64, &Element> = mesh.elements.iter().map(|e| (e.id, e)).collect();
    let mut present = 0;
    for j in 0..meta.ny {
        for i in 0..meta.nx {
            let Some(id) = meta.cell(i, j) else { continue };
            present += 1;
            let Some(e) = by_id.get(&id) else {
                return bad(format!("cell ({i}, {j}) refers to missing element {id}"));
            };
            let corners = [meta.node(i, j), meta.node(i + 1, j), meta.node(i + 1, j + 1), meta.node(i, j + 1)];
            if e.kind != ElementKind::Quad || corners.iter().zip(&e.conn).any(|(c, &n)| *c != Some(n)) {
                return bad(format!("element {id} does not match grid cell ({i}, {j})"));
            }
        }
    }
    if present != mesh.elements.len() {
        return bad(format!("{} elements but {present} grid cells", mesh.elements.len()));
    }
    Ok(())
}

/// Refines a structured quad plate and carries its grid layout along.
pub fn refine_structured(mesh: &Mesh, meta: &GridMeta) -> Result<(Mesh, GridMeta), AugmentError> {
    check_structured(mesh, meta)?;
    let (fine, map) = refine_with_map(mesh);
    let index: HashMap<u64, usize> = mesh.elements.iter().enumerate().map(|(k, e)| (e.id, k)).collect();
    let (nx, ny) = (2 * meta.nx, 2 * meta.ny);
    let mut nodes = vec![None; (nx + 1) * (ny + 1)];
    let mut cells = vec![None; nx * ny];
    for j in 0..=meta.ny {
        for i in 0..=meta.nx {
            nodes[2 * j * (nx + 1) + 2 * i] = meta.node(i, j);
        }
    }
    let mid = |a: Option<u64>, b: Option<u64>| Some(*map.edge_mid.get(&edge_key(a?, b?))?);
    for j in 0..=meta.ny {
        for i in 0..=meta.nx {
            if i < meta.nx {
                nodes[2 * j * (nx + 1) + 2 * i + 1] = mid(meta.node(i, j), meta.node(i + 1, j));
            }
            if j < meta.ny {
                nodes[(2 * j + 1) * (nx + 1) + 2 * i] = mid(meta.node(i, j), meta.node(i, j + 1));
            }
        }
    }
    for j in 0..meta.ny {
        for i in 0..meta.nx {
            let Some(id) = meta.cell(i, j) else { continue };
            let k = index[&id];
            nodes[(2 * j + 1) * (nx + 1) + 2 * i + 1] = map.centroid[k];
            let first = 4 * k as u64 + 1;
            for (c, (di, dj)) in [(0, 0), (1, 0), (1, 1), (0, 1)].into_iter().enumerate() {
                cells[(2 * j + dj) * nx + 2 * i + di] = Some(first + c as u64);
            }
        }
    }
    // edges that only touched deleted cells have no midpoint, so `nodes`
    // already matches what `fine` contains
    Ok((fine, GridMeta { nx, ny, nodes, cells }))
}

/// Merges `factor × factor` blocks of structured cells into single quads.
///
/// Blocks at the far edges may be smaller when the cell count is not a
/// multiple of `factor`. A block survives only when every fine cell in it is
/// present. Kept nodes retain their ids; elements are renumbered from 1.
pub fn coarsen_structured(mesh: &Mesh, meta: &GridMeta, factor: usize) -> Result<(Mesh, GridMeta), AugmentError> {
    if factor < 2 {
        return Err(AugmentError::NotStructured(format!("coarsening factor {factor} (need at least 2)")));
    }
    check_structured(mesh, meta)?;
    let lines = |n: usize| -> Vec<usize> {
        let mut v: Vec<usize> = (0..n).step_by(factor).collect();
        v.push(n);
        v
    };
    let (xs, ys) = (lines(meta.nx), lines(meta.ny));
    let (cx, cy) = (xs.len() - 1, ys.len() - 1);
    let mut cells = vec![None; cx * cy];
    let mut elements = Vec::new();
    for bj in 0..cy {
        for bi in 0..cx {
            let full = (ys[bj]..ys[bj + 1]).all(|j| (xs[bi]..xs[bi + 1]).all(|i| meta.cell(i, j).is_some()));
            if !full {
                continue;
            }
            let corner = |i: usize, j: usize| meta.node(i, j).expect("corner of a present cell");
            let id = elements.len() as u64 + 1;
            elements.push(Element::quad(
                id,
                [corner(xs[bi], ys[bj]), corner(xs[bi + 1], ys[bj]), corner(xs[bi + 1], ys[bj + 1]), corner(xs[bi], ys[bj + 1])],
            ));
            cells[bj * cx + bi] = Some(id);
        }
    }
    let used: std::collections::HashSet<u64> = elements.iter().flat_map(|e: &Element| e.conn.iter().copied()).collect();
    let nodes: Vec<Node> = mesh.nodes.iter().filter(|n| used.contains(&n.id)).cloned().collect();
    let mut grid_nodes = Vec::with_capacity((cx + 1) * (cy + 1));
    for &j in &ys {
        for &i in &xs {
            grid_nodes.push(meta.node(i, j).filter(|id| used.contains(id)));
        }
    }
    Ok((Mesh { nodes, elements }, GridMeta { nx: cx, ny: cy, nodes: grid_nodes, cells }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriPattern {
    /// `(a,b,c,d)` → `(a,b,c)` + `(a,c,d)`.
    FixedDiagonal,
    /// Even list positions as fixed, odd positions split along `b–d`:
    /// `(a,b,d)` + `(b,c,d)`.
    Alternating,
}

fn split_quad(e: &Element, use_bd: bool, next_id: &mut u64, out: &mut Vec<Element>) {
    let [a, b, c, d] = [e.conn[0], e.conn[1], e.conn[2], e.conn[3]];
    let pair = if use_bd { [[a, b, d], [b, c, d]] } else { [[a, b, c], [a, c, d]] };
    for conn in pair {
        *next_id += 1;
        out.push(Element::tri(*next_id, conn));
    }
}

/// Splits every quad into two triangles; triangles pass through. Elements
/// are renumbered from 1 in order.
pub fn quad_to_tri(mesh: &Mesh, pattern: TriPattern) -> Mesh {
    let mut elements = Vec::with_capacity(2 * mesh.elements.len());
    let mut next_id = 0;
    for (k, e) in mesh.elements.iter().enumerate() {
        match e.kind {
            ElementKind::Quad => split_quad(e, pattern == TriPattern::Alternating && k % 2 == 1, &mut next_id, &mut elements),
            ElementKind::Tri => {
                next_id += 1;
                elements.push(Element::tri(next_id, [e.conn[0], e.conn[1], e.conn[2]]));
            }
        }
    }
    Mesh { nodes: mesh.nodes.clone(), elements }
}

/// Mixed deck: quads at even list positions become fixed-diagonal triangle
/// pairs, the others stay quads. Elements are renumbered from 1.
pub fn mixed_schema(mesh: &Mesh) -> Mesh {
    let mut elements = Vec::with_capacity(2 * mesh.elements.len());
    let mut next_id = 0;
    for (k, e) in mesh.elements.iter().enumerate() {
        if e.kind == ElementKind::Quad && k % 2 == 0 {
            split_quad(e, false, &mut next_id, &mut elements);
        } else {
            next_id += 1;
            elements.push(Element { id: next_id, kind: e.kind, conn: e.conn.clone() });
        }
    }
    Mesh { nodes: mesh.nodes.clone(), elements }
}

/// Lists node `order[k]` at position `k` with id `k + 1` and rewrites the
/// connectivity accordingly. `order` must be a permutation of `0..n`.
pub fn permute_nodes_with(mesh: &Mesh, order: &[usize]) -> Mesh {
    assert_eq!(order.len(), mesh.nodes.len(), "permutation length");
    let mut new_id: HashMap<u64, u64> = HashMap::with_capacity(order.len());
    let nodes = order
        .iter()
        .enumerate()
        .map(|(k, &old)| {
            let n = &mesh.nodes[old];
            new_id.insert(n.id, k as u64 + 1);
            Node { id: k as u64 + 1, xyz: n.xyz }
        })
        .collect();
    let elements = mesh
        .elements
        .iter()
        .map(|e| Element { id: e.id, kind: e.kind, conn: e.conn.iter().map(|c| new_id[c]).collect() })
        .collect();
    Mesh { nodes, elements }
}

pub fn permute_nodes(mesh: &Mesh, rng: &mut Rng) -> Mesh {
    let mut order: Vec<usize> = (0..mesh.nodes.len()).collect();
    rng.shuffle(&mut order);
    permute_nodes_with(mesh, &order)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemaTarget {
    Uniform(Schema),
    Mixed,
}

impl SchemaTarget {
    fn as_str(self) -> &'static str {
        match self {
            SchemaTarget::Uniform(s) => s.as_str(),
            SchemaTarget::Mixed => "mixed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Transform {
    Identity,
    Translate([f64; 3]),
    Rotate { axis: [f64; 3], deg: f64 },
    Rigid { axis: [f64; 3], deg: f64, t: [f64; 3] },
    Mirror(MirrorAxis),
    Scale(f64),
    Holes { k: usize, r: f64 },
    Refine,
    QuadToTri(TriPattern),
    Permute,
    Coarsen(usize),
    Schema(SchemaTarget),
    ShiftHole { index: usize, dx: f64 },
    ShiftBead { index: usize, dx: f64 },
}

/// A transform plus the seed of its random choices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Descriptor {
    pub transform: Transform,
    pub seed: u64,
}

impl Descriptor {
    pub fn new(transform: Transform, seed: u64) -> Self {
        Descriptor { transform, seed }
    }

    pub fn needs_spec(&self) -> bool {
        matches!(
            self.transform,
            Transform::Coarsen(_) | Transform::Schema(_) | Transform::ShiftHole { .. } | Transform::ShiftBead { .. }
        )
    }

    pub fn kind(&self) -> &'static str {
        match self.transform {
            Transform::Identity => "identity",
            Transform::Translate(_) => "translate",
            Transform::Rotate { .. } => "rotate",
            Transform::Rigid { .. } => "rigid",
            Transform::Mirror(_) => "mirror",
            Transform::Scale(_) => "scale",
            Transform::Holes { .. } => "holes",
            Transform::Refine => "refine",
            Transform::QuadToTri(_) => "quad_to_tri",
            Transform::Permute => "permute",
            Transform::Coarsen(_) => "coarsen",
            Transform::Schema(_) => "schema",
            Transform::ShiftHole { .. } => "shift_hole",
            Transform::ShiftBead { .. } => "shift_bead",
        }
    }

    /// Applies the transform to `mesh`, or regenerates from `spec` for the
    /// spec-driven kinds.
    pub fn apply(&self, mesh: &Mesh, spec: Option<&PartSpec>) -> Result<Mesh, AugmentError> {
        let mut rng = Rng::new(self.seed);
        let spec = || spec.ok_or(AugmentError::MissingSpec(self.kind()));
        Ok(match self.transform {
            Transform::Identity => mesh.clone(),
            Transform::Translate(t) => translate(mesh, t),
            Transform::Rotate { axis, deg } => rotate(mesh, axis, deg.to_radians())?,
            Transform::Rigid { axis, deg, t } => translate(&rotate(mesh, axis, deg.to_radians())?, t),
            Transform::Mirror(a) => mirror(mesh, a),
            Transform::Scale(f) => uniform_scale(mesh, f)?,
            Transform::Holes { k, r } => add_holes(mesh, k, r, &mut rng)?,
            Transform::Refine => refine(mesh),
            Transform::QuadToTri(p) => quad_to_tri(mesh, p),
            Transform::Permute => permute_nodes(mesh, &mut rng),
            Transform::Coarsen(factor) => {
                let spec = spec()?;
                let (plate, meta) = generate_structured(spec)?;
                let (coarse, _) = coarsen_structured(&plate, &meta, factor)?;
                apply_schema(&coarse, spec.schema)
            }
            Transform::Schema(target) => {
                let spec = spec()?;
                let (plate, _) = generate_structured(spec)?;
                match target {
                    SchemaTarget::Uniform(s) => apply_schema(&plate, s),
                    SchemaTarget::Mixed => mixed_schema(&plate),
                }
            }
            Transform::ShiftHole { index, dx } => generate_part(&shift_feature(spec()?, Feature::Hole, index, dx)?)?,
            Transform::ShiftBead { index, dx } => generate_part(&shift_feature(spec()?, Feature::Bead, index, dx)?)?,
        })
    }
}

impl fmt::Display for Descriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let params = match self.transform {
            Transform::Identity | Transform::Refine | Transform::Permute => String::new(),
            Transform::Translate([x, y, z]) => format!("x={x},y={y},z={z}"),
            Transform::Rotate { axis: [ax, ay, az], deg } => format!("ax={ax},ay={ay},az={az},deg={deg}"),
            Transform::Rigid { axis: [ax, ay, az], deg, t: [x, y, z] } => {
                format!("ax={ax},ay={ay},az={az},deg={deg},x={x},y={y},z={z}")
            }
            Transform::Mirror(a) => format!("axis={}", if a == MirrorAxis::X { "x" } else { "y" }),
            Transform::Scale(factor) => format!("factor={factor}"),
            Transform::Holes { k, r } => format!("k={k},r={r}"),
            Transform::QuadToTri(p) => {
                format!("pattern={}", if p == TriPattern::FixedDiagonal { "fixed" } else { "alternating" })
            }
            Transform::Coarsen(factor) => format!("factor={factor}"),
            Transform::Schema(t) => format!("to={}", t.as_str()),
            Transform::ShiftHole { index, dx } | Transform::ShiftBead { index, dx } => format!("index={index},dx={dx}"),
        };
        if params.is_empty() {
            write!(f, "{}#{}", self.kind(), self.seed)
        } else {
            write!(f, "{}({})#{}", self.kind(), params, self.seed)
        }
    }
}

struct Params<'a> {
    text: &'a str,
    map: HashMap<&'a str, &'a str>,
}

impl<'a> Params<'a> {
    fn err(&self, reason: impl Into<String>) -> AugmentError {
        AugmentError::BadDescriptor { text: self.text.to_string(), reason: reason.into() }
    }

    fn take<T: FromStr>(&mut self, key: &str, default: Option<T>) -> Result<T, AugmentError>
    where
        T::Err: fmt::Display,
    {
        match self.map.remove(key) {
            Some(v) => v.parse().map_err(|e| self.err(format!("{key}: {e}"))),
            None => default.ok_or_else(|| self.err(format!("missing parameter '{key}'"))),
        }
    }

    fn finite(&mut self, key: &str, default: Option<f64>) -> Result<f64, AugmentError> {
        let v: f64 = self.take(key, default)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(self.err(format!("{key} must be finite")))
        }
    }

    fn vec3(&mut self, keys: [&str; 3], defaults: [f64; 3]) -> Result<[f64; 3], AugmentError> {
        Ok([self.finite(keys[0], Some(defaults[0]))?, self.finite(keys[1], Some(defaults[1]))?, self.finite(keys[2], Some(defaults[2]))?])
    }

    fn choice<T: Copy>(&mut self, key: &str, default: Option<&str>, options: &[(&str, T)]) -> Result<T, AugmentError> {
        let v: String = self.take(key, default.map(str::to_string))?;
        options.iter().find(|(name, _)| *name == v).map(|(_, t)| *t).ok_or_else(|| {
            let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
            self.err(format!("{key} must be one of {}", names.join(", ")))
        })
    }
}

impl FromStr for Descriptor {
    type Err = AugmentError;

    fn from_str(text: &str) -> Result<Self, AugmentError> {
        let bad = |reason: &str| AugmentError::BadDescriptor { text: text.to_string(), reason: reason.to_string() };
        let trimmed = text.trim();
        let (body, seed) = match trimmed.rsplit_once('#') {
            Some((b, s)) => (b, s.trim().parse::<u64>().map_err(|_| bad("seed must be a non-negative integer"))?),
            None => (trimmed, 0),
        };
        let (kind, args) = match body.split_once('(') {
            Some((k, rest)) => (k.trim(), rest.strip_suffix(')').ok_or_else(|| bad("missing ')'"))?),
            None => (body.trim(), ""),
        };
        let mut map = HashMap::new();
        for part in args.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part.split_once('=').ok_or_else(|| bad("parameters are key=value"))?;
            if map.insert(k.trim(), v.trim()).is_some() {
                return Err(bad("repeated parameter"));
            }
        }
        let mut p = Params { text, map };
        let axis = |p: &mut Params| p.vec3(["ax", "ay", "az"], [0.0, 0.0, 1.0]);
        let transform = match kind {
            "identity" => Transform::Identity,
            "translate" => Transform::Translate(p.vec3(["x", "y", "z"], [0.0; 3])?),
            "rotate" => Transform::Rotate { axis: axis(&mut p)?, deg: p.finite("deg", None)? },
            "rigid" => Transform::Rigid { axis: axis(&mut p)?, deg: p.finite("deg", None)?, t: p.vec3(["x", "y", "z"], [0.0; 3])? },
            "mirror" => Transform::Mirror(p.choice("axis", None, &[("x", MirrorAxis::X), ("y", MirrorAxis::Y)])?),
            "scale" => Transform::Scale(p.finite("factor", None)?),
            "holes" => Transform::Holes { k: p.take("k", None)?, r: p.finite("r", None)? },
            "refine" => Transform::Refine,
            "quad_to_tri" => Transform::QuadToTri(p.choice(
                "pattern",
                Some("fixed"),
                &[("fixed", TriPattern::FixedDiagonal), ("alternating", TriPattern::Alternating)],
            )?),
            "permute" => Transform::Permute,
            "coarsen" => Transform::Coarsen(p.take("factor", Some(2))?),
            "schema" => Transform::Schema(p.choice(
                "to",
                None,
                &[
                    ("quad", SchemaTarget::Uniform(Schema::Quad)),
                    ("tri_fixed", SchemaTarget::Uniform(Schema::TriFixed)),
                    ("tri_alternating", SchemaTarget::Uniform(Schema::TriAlternating)),
                    ("mixed", SchemaTarget::Mixed),
                ],
            )?),
            "shift_hole" => Transform::ShiftHole { index: p.take("index", Some(0))?, dx: p.finite("dx", None)? },
            "shift_bead" => Transform::ShiftBead { index: p.take("index", Some(0))?, dx: p.finite("dx", None)? },
            other => return Err(p.err(format!("unknown kind '{other}'"))),
        };
        if let Some(k) = p.map.keys().next() {
            return Err(p.err(format!("unknown parameter '{k}'")));
        }
        Ok(Descriptor { transform, seed })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph_build::{mesh_to_graph, scale_features};
    use crate::mesh_io::{parse_mesh, validate};

    fn quad() -> Mesh {
        parse_mesh("GRID,1,0,0,0\nGRID,2,1,0,0\nGRID,3,1,1,0\nGRID,4,0,1,0\nCQUAD4,1,1,2,3,4").unwrap()
    }

    fn plate(nx: usize, ny: usize) -> (Mesh, GridMeta) {
        generate_structured(&PartSpec::plate(10.0 * nx as f64, 10.0 * ny as f64, nx, ny)).unwrap()
    }

    #[test]
    fn rigid_motions() {
        let m = quad();
        assert_eq!(translate(&m, [0.0; 3]), m);
        let full = rotate(&m, [0.0, 0.0, 1.0], 2.0 * std::f64::consts::PI).unwrap();
        for (a, b) in full.nodes.iter().zip(&m.nodes) {
            assert!((0..3).all(|i| (a.xyz[i] - b.xyz[i]).abs() < 1e-9));
        }
        let q = rotate(&m, [0.0, 0.0, 2.0], std::f64::consts::FRAC_PI_2).unwrap();
        let p = q.nodes[1].xyz;
        assert!(p[0].abs() < 1e-12 && (p[1] - 1.0).abs() < 1e-12 && p[2].abs() < 1e-12);
        assert!(matches!(rotate(&m, [0.0; 3], 1.0), Err(AugmentError::ZeroAxis)));
    }

    #[test]
    fn mirror_rules() {
        let m = parse_mesh("GRID,1,1,2,3\nGRID,2,4,2,3\nGRID,3,4,5,3\nGRID,4,1,5,3\nCQUAD4,1,1,2,3,4").unwrap();
        let x = mirror(&m, MirrorAxis::X);
        assert_eq!(x.nodes[0].xyz, [-1.0, 2.0, 3.0]);
        assert_eq!(x.elements[0].conn, vec![1, 4, 3, 2]);
        assert_eq!(mirror(&x, MirrorAxis::X), m);
        let t = parse_mesh("GRID,1,0,0,0\nGRID,2,1,0,0\nGRID,3,0,1,0\nCTRIA3,1,1,2,3").unwrap();
        assert_eq!(mirror(&t, MirrorAxis::Y).elements[0].conn, vec![1, 3, 2]);
    }

    #[test]
    fn scaling() {
        let m = parse_mesh("GRID,1,10,0,0\nGRID,2,0,3,1\nGRID,3,5,5,5").unwrap();
        assert_eq!(uniform_scale(&m, 1.0).unwrap(), m);
        assert_eq!(uniform_scale(&m, 1.05).unwrap().nodes[0].xyz, [10.5, 0.0, 0.0]);
        let (a, b) = (scale_features(&m), scale_features(&uniform_scale(&m, 1.15).unwrap()));
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            assert!((0..3).all(|i| (ra[i] - rb[i]).abs() < 1e-9));
        }
        assert!(matches!(uniform_scale(&m, 0.0), Err(AugmentError::NonPositiveFactor(_))));
    }

    #[test]
    fn holes_match_centroid_scan() {
        let (m, _) = plate(10, 10);
        assert_eq!(add_holes(&m, 0, 5.0, &mut Rng::new(1)).unwrap(), m);
        let r = 15.0;
        let mut rng = Rng::new(3);
        let centers = place_holes(&m, 1, r, &mut rng.clone()).unwrap();
        let out = add_holes(&m, 1, r, &mut rng).unwrap();
        let pos = m.node_positions();
        let hit = m
            .elements
            .iter()
            .filter(|e| {
                let c = m.centroid(e, &pos);
                ((c[0] - centers[0][0]).powi(2) + (c[1] - centers[0][1]).powi(2)).sqrt() < r
            })
            .count();
        assert!(hit > 0);
        assert_eq!(out.element_count(), m.element_count() - hit);
        assert!(validate(&out).is_empty());
        assert!(matches!(add_holes(&m, 1, 60.0, &mut Rng::new(1)), Err(AugmentError::CannotPlaceHoles { .. })));
    }

    #[test]
    fn refine_single_quad() {
        let m = quad();
        let r = refine(&m);
        assert_eq!(r.element_count(), 4);
        assert_eq!(r.node_count(), 9);
        assert_eq!(r.nodes[..4], m.nodes[..]);
        assert_eq!(r.nodes[8].xyz, [0.5, 0.5, 0.0]);
        assert!(validate(&r).is_empty());
        let t = parse_mesh("GRID,1,0,0,0\nGRID,2,1,0,0\nGRID,3,0,1,0\nCTRIA3,1,1,2,3").unwrap();
        let rt = refine(&t);
        assert_eq!((rt.element_count(), rt.node_count()), (4, 6));
    }

    #[test]
    fn refine_shares_midpoints() {
        let (m, _) = plate(3, 2);
        let r = refine(&m);
        assert_eq!(r.element_count(), 24);
        assert_eq!(r.node_count(), 7 * 5);
    }

    #[test]
    fn coarsen_round_trip() {
        let mut spec = PartSpec::plate(60.0, 40.0, 6, 4);
        spec.holes.push(hole(30.0, 20.0, 6.0));
        let (m, meta) = generate_structured(&spec).unwrap();
        let (fine, fmeta) = refine_structured(&m, &meta).unwrap();
        assert_eq!(fine.element_count(), 4 * m.element_count());
        let (back, bmeta) = coarsen_structured(&fine, &fmeta, 2).unwrap();
        assert_eq!(back.element_count(), m.element_count());
        assert_eq!(bmeta.nodes, meta.nodes);
        let mut a: Vec<_> = back.nodes.iter().map(|n| (n.id, n.xyz.map(f64::to_bits))).collect();
        let mut b: Vec<_> = m.nodes.iter().map(|n| (n.id, n.xyz.map(f64::to_bits))).collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }

    fn hole(cx: f64, cy: f64, r: f64) -> crate::synthgen::Hole {
        crate::synthgen::Hole { cx, cy, r }
    }

    #[test]
    fn coarsen_with_remainder_and_holes() {
        let (m, meta) = plate(5, 4);
        let (c, cm) = coarsen_structured(&m, &meta, 2).unwrap();
        assert_eq!((cm.nx, cm.ny), (3, 2));
        assert_eq!(c.element_count(), 6);
        assert!(validate(&c).is_empty());
        let mut spec = PartSpec::plate(40.0, 40.0, 4, 4);
        spec.holes.push(hole(15.0, 15.0, 4.0));
        let (m, meta) = generate_structured(&spec).unwrap();
        let (c, _) = coarsen_structured(&m, &meta, 2).unwrap();
        assert_eq!(c.element_count(), 3);
        assert!(validate(&c).is_empty());
    }

    #[test]
    fn coarsen_rejects_unstructured() {
        let (m, meta) = plate(4, 4);
        let tri = quad_to_tri(&m, TriPattern::FixedDiagonal);
        assert!(matches!(coarsen_structured(&tri, &meta, 2), Err(AugmentError::NotStructured(_))));
        assert!(matches!(coarsen_structured(&m, &meta, 1), Err(AugmentError::NotStructured(_))));
    }

    #[test]
    fn quad_to_tri_edges() {
        let m = quad();
        let t = quad_to_tri(&m, TriPattern::FixedDiagonal);
        assert_eq!(t.elements.iter().map(|e| e.conn.clone()).collect::<Vec<_>>(), vec![vec![1, 2, 3], vec![1, 3, 4]]);
        let (p, _) = plate(4, 3);
        for pattern in [TriPattern::FixedDiagonal, TriPattern::Alternating] {
            let t = quad_to_tri(&p, pattern);
            assert_eq!(t.element_count(), 2 * p.element_count());
            assert_eq!(t.nodes, p.nodes);
            assert!(validate(&t).is_empty());
        }
        let before = mesh_to_graph(&p).unwrap().id_edges();
        let mut expected = before.clone();
        for e in &p.elements {
            expected.insert(edge_key(e.conn[0], e.conn[2]));
        }
        assert_eq!(mesh_to_graph(&quad_to_tri(&p, TriPattern::FixedDiagonal)).unwrap().id_edges(), expected);
    }

    #[test]
    fn mixed_schema_keeps_both_kinds() {
        let (p, _) = plate(3, 3);
        let m = mixed_schema(&p);
        assert_eq!(m.element_count(), 9 + 5);
        assert!(m.elements.iter().any(|e| e.kind == ElementKind::Quad));
        assert!(validate(&m).is_empty());
    }

    #[test]
    fn permutation() {
        let (p, _) = plate(3, 2);
        let id: Vec<usize> = (0..p.node_count()).collect();
        assert_eq!(permute_nodes_with(&p, &id), p);
        let q = permute_nodes(&p, &mut Rng::new(9));
        assert_ne!(q, p);
        let mut a: Vec<_> = p.nodes.iter().map(|n| n.xyz.map(f64::to_bits)).collect();
        let mut b: Vec<_> = q.nodes.iter().map(|n| n.xyz.map(f64::to_bits)).collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
        let (pp, qp) = (p.node_positions(), q.node_positions());
        for (ep, eq) in p.elements.iter().zip(&q.elements) {
            for (x, y) in ep.conn.iter().zip(&eq.conn) {
                assert_eq!(p.nodes[pp[x]].xyz, q.nodes[qp[y]].xyz);
            }
        }
    }

    #[test]
    fn descriptor_round_trip() {
        for text in [
            "identity#0",
            "translate(x=10,y=-5.5,z=0)#0",
            "rotate(ax=0,ay=0,az=1,deg=30)#0",
            "rigid(ax=0,ay=0,az=1,deg=30,x=10,y=5,z=0)#0",
            "mirror(axis=y)#0",
            "scale(factor=1.05)#0",
            "holes(k=3,r=4.2)#17",
            "refine#0",
            "quad_to_tri(pattern=alternating)#0",
            "permute#5",
            "coarsen(factor=4)#0",
            "schema(to=mixed)#0",
            "shift_hole(index=0,dx=-10)#0",
            "shift_bead(index=1,dx=5)#0",
        ] {
            let d: Descriptor = text.parse().unwrap();
            assert_eq!(d.to_string(), text);
        }
        let d: Descriptor = "rotate(deg=90)".parse().unwrap();
        assert_eq!(d, Descriptor::new(Transform::Rotate { axis: [0.0, 0.0, 1.0], deg: 90.0 }, 0));
        for bad in ["spin(deg=1)", "rotate()", "rotate(deg=1,foo=2)", "scale(factor=x)", "mirror(axis=z)", "holes(k=1,r=2", "permute#-1"] {
            assert!(matches!(bad.parse::<Descriptor>(), Err(AugmentError::BadDescriptor { .. })), "{bad}");
        }
    }

    #[test]
    fn descriptors_replay_exactly() {
        let (p, _) = plate(6, 6);
        let d: Descriptor = "holes(k=2,r=9)#4".parse().unwrap();
        assert_eq!(d.apply(&p, None).unwrap(), d.apply(&p, None).unwrap());
        let s: Descriptor = "shift_hole(dx=5)".parse().unwrap();
        assert!(matches!(s.apply(&p, None), Err(AugmentError::MissingSpec("shift_hole"))));
    }
}
