//! Free-field bulk-data mesh files and dataset manifests.
//!
//! Three cards are understood, one per line with comma-separated fields:
//!
//! ```text
//! GRID,<id>,<x>,<y>,<z>
//! CQUAD4,<eid>,<n1>,<n2>,<n3>,<n4>
//! CTRIA3,<eid>,<n1>,<n2>,<n3>
//! ```
//!
//! Lines starting with `$` are comments; blank lines are skipped; LF and CRLF
//! line endings are both accepted.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: u64,
    /// Coordinates in millimetres.
    pub xyz: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ElementKind {
    Quad,
    Tri,
}

impl ElementKind {
    pub fn arity(self) -> usize {
        match self {
            ElementKind::Quad => 4,
            ElementKind::Tri => 3,
        }
    }

    pub fn card(self) -> &'static str {
        match self {
            ElementKind::Quad => "CQUAD4",
            ElementKind::Tri => "CTRIA3",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Element {
    pub id: u64,
    pub kind: ElementKind,
    pub conn: Vec<u64>,
}

impl Element {
    pub fn quad(id: u64, conn: [u64; 4]) -> Self {
        Element { id, kind: ElementKind::Quad, conn: conn.to_vec() }
    }

    pub fn tri(id: u64, conn: [u64; 3]) -> Self {
        Element { id, kind: ElementKind::Tri, conn: conn.to_vec() }
    }

    /// Perimeter edges in connectivity order (`n1n2, n2n3, ..., nkn1`).
    pub fn edges(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        let k = self.conn.len();
        (0..k).map(move |i| (self.conn[i], self.conn[(i + 1) % k]))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Mesh {
    pub nodes: Vec<Node>,
    pub elements: Vec<Element>,
}

impl Mesh {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn element_count(&self) -> usize {
        self.elements.len()
    }

    /// Map from node id to its position in `nodes`. Later duplicates win.
    pub fn node_positions(&self) -> HashMap<u64, usize> {
        self.nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect()
    }

    /// Arithmetic mean of the element's corner coordinates.
    ///
    /// Panics if a connectivity entry is not in `positions`.
    pub fn centroid(&self, element: &Element, positions: &HashMap<u64, usize>) -> [f64; 3] {
        let mut c = [0.0; 3];
        for id in &element.conn {
            let p = self.nodes[positions[id]].xyz;
            for a in 0..3 {
                c[a] += p[a];
            }
        }
        let k = element.conn.len() as f64;
        c.map(|v| v / k)
    }

    pub fn max_node_id(&self) -> u64 {
        self.nodes.iter().map(|n| n.id).max().unwrap_or(0)
    }

    /// Removes nodes that no element references.
    pub fn drop_unreferenced_nodes(&mut self) {
        let used: HashSet<u64> = self.elements.iter().flat_map(|e| e.conn.iter().copied()).collect();
        self.nodes.retain(|n| used.contains(&n.id));
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("line {line}: malformed {card} card: {reason}")]
    MalformedCard { line: usize, card: String, reason: String },
    #[error("line {line}: duplicate {what} id {id}")]
    DuplicateId { line: usize, what: &'static str, id: u64 },
    #[error("line {line}: unknown card '{keyword}'")]
    UnknownCard { line: usize, keyword: String },
}

impl MeshError {
    pub fn code(&self) -> &'static str {
        match self {
            MeshError::MalformedCard { .. } => "malformed_card",
            MeshError::DuplicateId { .. } => "duplicate_id",
            MeshError::UnknownCard { .. } => "unknown_card",
        }
    }

    pub fn line(&self) -> usize {
        match self {
            MeshError::MalformedCard { line, .. }
            | MeshError::DuplicateId { line, .. }
            | MeshError::UnknownCard { line, .. } => *line,
        }
    }
}

fn malformed(line: usize, card: &str, reason: impl Into<String>) -> MeshError {
    MeshError::MalformedCard { line, card: card.to_string(), reason: reason.into() }
}

fn parse_id(field: &str, line: usize, card: &str) -> Result<u64, MeshError> {
    match field.parse::<u64>() {
        Ok(0) => Err(malformed(line, card, "ids must be positive")),
        Ok(v) => Ok(v),
        Err(_) => Err(malformed(line, card, format!("'{field}' is not a positive integer"))),
    }
}

fn parse_coord(field: &str, line: usize) -> Result<f64, MeshError> {
    match field.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(_) => Err(malformed(line, "GRID", format!("coordinate '{field}' is not finite"))),
        Err(_) => Err(malformed(line, "GRID", format!("'{field}' is not a number"))),
    }
}

/// Parses a bulk-data deck. Nodes and elements keep file order.
pub fn parse_mesh(text: &str) -> Result<Mesh, MeshError> {
    let mut mesh = Mesh::default();
    let mut node_ids = HashSet::new();
    let mut elem_ids = HashSet::new();

    for (idx, raw) in text.split('\n').enumerate() {
        let line = idx + 1;
        let raw = raw.strip_suffix('\r').unwrap_or(raw);
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('$') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        let keyword = fields[0];
        match keyword {
            "GRID" => {
                if fields.len() != 5 {
                    return Err(malformed(line, keyword, format!("expected 5 fields, found {}", fields.len())));
                }
                let id = parse_id(fields[1], line, keyword)?;
                let xyz = [parse_coord(fields[2], line)?, parse_coord(fields[3], line)?, parse_coord(fields[4], line)?];
                if !node_ids.insert(id) {
                    return Err(MeshError::DuplicateId { line, what: "node", id });
                }
                mesh.nodes.push(Node { id, xyz });
            }
            "CQUAD4" | "CTRIA3" => {
                let kind = if keyword == "CQUAD4" { ElementKind::Quad } else { ElementKind::Tri };
                let expected = 2 + kind.arity();
                if fields.len() != expected {
                    return Err(malformed(line, keyword, format!("expected {expected} fields, found {}", fields.len())));
                }
                let id = parse_id(fields[1], line, keyword)?;
                let conn = fields[2..]
                    .iter()
                    .map(|f| parse_id(f, line, keyword))
                    .collect::<Result<Vec<_>, _>>()?;
                if !elem_ids.insert(id) {
                    return Err(MeshError::DuplicateId { line, what: "element", id });
                }
                mesh.elements.push(Element { id, kind, conn });
            }
            other => return Err(MeshError::UnknownCard { line, keyword: other.to_string() }),
        }
    }
    Ok(mesh)
}

/// Formats a coordinate with nine significant digits.
///
/// Magnitudes in `[1e-5, 1e9)` are written positionally, everything else in
/// exponent form. Zero is written as `0.00000000`.
pub fn format_coord(v: f64) -> String {
    if v == 0.0 {
        return "0.00000000".to_string();
    }
    let sci = format!("{:.8e}", v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-5..9).contains(&exp) {
        return sci;
    }
    let (sign, mantissa) = match mantissa.strip_prefix('-') {
        Some(m) => ("-", m),
        None => ("", mantissa),
    };
    let digits: String = mantissa.chars().filter(|c| *c != '.').collect();
    let body = if exp >= 0 {
        let split = exp as usize + 1;
        format!("{}.{}", &digits[..split], &digits[split..])
    } else {
        format!("0.{}{}", "0".repeat((-exp - 1) as usize), digits)
    };
    format!("{sign}{body}")
}

/// Canonical text form: all GRID cards, then all element cards, file order.
pub fn write_mesh(mesh: &Mesh) -> String {
    let mut out = String::new();
    for n in &mesh.nodes {
        out.push_str(&format!(
            "GRID,{},{},{},{}\n",
            n.id,
            format_coord(n.xyz[0]),
            format_coord(n.xyz[1]),
            format_coord(n.xyz[2])
        ));
    }
    for e in &mesh.elements {
        out.push_str(e.kind.card());
        out.push(',');
        out.push_str(&e.id.to_string());
        for n in &e.conn {
            out.push(',');
            out.push_str(&n.to_string());
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub enum Issue {
    NoNodes,
    DuplicateNodeId(u64),
    DuplicateElementId(u64),
    NonFiniteCoordinate(u64),
    WrongArity { element: u64 },
    DanglingReference { element: u64, node: u64 },
    DegenerateElement(u64),
    /// Legal, but reported: the node becomes an isolated graph vertex.
    OrphanNode(u64),
}

impl Issue {
    pub fn is_fatal(&self) -> bool {
        !matches!(self, Issue::OrphanNode(_))
    }
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Issue::NoNodes => write!(f, "mesh has no nodes"),
            Issue::DuplicateNodeId(id) => write!(f, "duplicate node id {id}"),
            Issue::DuplicateElementId(id) => write!(f, "duplicate element id {id}"),
            Issue::NonFiniteCoordinate(id) => write!(f, "node {id} has a non-finite coordinate"),
            Issue::WrongArity { element } => write!(f, "element {element} has the wrong number of nodes"),
            Issue::DanglingReference { element, node } => {
                write!(f, "element {element} references missing node {node}")
            }
            Issue::DegenerateElement(id) => write!(f, "element {id} repeats a node"),
            Issue::OrphanNode(id) => write!(f, "node {id} is not referenced by any element"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn fatal(&self) -> impl Iterator<Item = &Issue> {
        self.issues.iter().filter(|i| i.is_fatal())
    }

    pub fn has_fatal(&self) -> bool {
        self.fatal().next().is_some()
    }
}

pub fn validate(mesh: &Mesh) -> ValidationReport {
    let mut issues = Vec::new();
    if mesh.nodes.is_empty() {
        issues.push(Issue::NoNodes);
    }
    let mut node_ids = HashSet::new();
    for n in &mesh.nodes {
        if !node_ids.insert(n.id) {
            issues.push(Issue::DuplicateNodeId(n.id));
        }
        if n.xyz.iter().any(|v| !v.is_finite()) {
            issues.push(Issue::NonFiniteCoordinate(n.id));
        }
    }
    let mut elem_ids = HashSet::new();
    let mut referenced = HashSet::new();
    for e in &mesh.elements {
        if !elem_ids.insert(e.id) {
            issues.push(Issue::DuplicateElementId(e.id));
        }
        if e.conn.len() != e.kind.arity() {
            issues.push(Issue::WrongArity { element: e.id });
        }
        for &n in &e.conn {
            referenced.insert(n);
            if !node_ids.contains(&n) {
                issues.push(Issue::DanglingReference { element: e.id, node: n });
            }
        }
        let distinct: HashSet<u64> = e.conn.iter().copied().collect();
        if distinct.len() != e.conn.len() {
            issues.push(Issue::DegenerateElement(e.id));
        }
    }
    for n in &mesh.nodes {
        if !referenced.contains(&n.id) {
            issues.push(Issue::OrphanNode(n.id));
        }
    }
    ValidationReport { issues }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: usize,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    /// Directory that relative entry paths are resolved against.
    pub base_dir: PathBuf,
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("labels are not contiguous from 0: missing {missing}")]
    NonContiguousLabels { missing: usize },
    #[error("mesh file {0} does not exist")]
    MissingFile(PathBuf),
    #[error("part '{0}' is not in the manifest")]
    UnknownPart(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Mesh { path: PathBuf, source: MeshError },
}

impl ManifestError {
    pub fn code(&self) -> &'static str {
        match self {
            ManifestError::MalformedRow { .. } => "malformed_row",
            ManifestError::NonContiguousLabels { .. } => "non_contiguous_labels",
            ManifestError::MissingFile(_) => "missing_file",
            ManifestError::UnknownPart(_) => "unknown_part",
            ManifestError::Io { .. } => "io",
            ManifestError::Mesh { source, .. } => source.code(),
        }
    }
}

pub const MANIFEST_HEADER: [&str; 3] = ["path", "label", "name"];

impl DatasetManifest {
    /// Number of classes, `max label + 1` (0 for an empty manifest).
    pub fn num_classes(&self) -> usize {
        self.entries.iter().map(|e| e.label + 1).max().unwrap_or(0)
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        self.base_dir.join(&entry.path)
    }

    pub fn entry(&self, name: &str) -> Result<&ManifestEntry, ManifestError> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| ManifestError::UnknownPart(name.to_string()))
    }

    /// Name of the first entry carrying each label, indexed by label.
    pub fn class_names(&self) -> Vec<String> {
        let mut names = vec![String::new(); self.num_classes()];
        for e in self.entries.iter().rev() {
            names[e.label] = e.name.clone();
        }
        names
    }

    /// Checks every entry path exists relative to `base_dir`.
    pub fn check_files(&self) -> Result<(), ManifestError> {
        for e in &self.entries {
            let p = self.resolve(e);
            if !p.is_file() {
                return Err(ManifestError::MissingFile(p));
            }
        }
        Ok(())
    }

    pub fn load_mesh(&self, entry: &ManifestEntry) -> Result<Mesh, ManifestError> {
        let path = self.resolve(entry);
        let text = std::fs::read_to_string(&path).map_err(|source| ManifestError::Io { path: path.clone(), source })?;
        parse_mesh(&text).map_err(|source| ManifestError::Mesh { path, source })
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(MANIFEST_HEADER).expect("in-memory write");
        for e in &self.entries {
            let path = e.path.to_string_lossy().replace('\\', "/");
            w.write_record([path, e.label.to_string(), e.name.clone()]).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 manifest")
    }
}

/// Parses manifest CSV text. Paths stay relative; see [`load_manifest_file`].
pub fn load_manifest(text: &str) -> Result<DatasetManifest, ManifestError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut records = reader.records();
    match records.next() {
        Some(Ok(h)) if h.iter().eq(MANIFEST_HEADER) => {}
        Some(Ok(h)) => {
            return Err(ManifestError::MalformedRow {
                row: 1,
                reason: format!("expected header 'path,label,name', found '{}'", h.iter().collect::<Vec<_>>().join(",")),
            })
        }
        Some(Err(e)) => return Err(ManifestError::MalformedRow { row: 1, reason: e.to_string() }),
        None => return Err(ManifestError::MalformedRow { row: 1, reason: "missing header".into() }),
    }
    let mut entries = Vec::new();
    for (i, rec) in records.enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| ManifestError::MalformedRow { row, reason: e.to_string() })?;
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() != 3 {
            return Err(ManifestError::MalformedRow { row, reason: format!("expected 3 fields, found {}", rec.len()) });
        }
        let label = rec[1]
            .parse::<usize>()
            .map_err(|_| ManifestError::MalformedRow { row, reason: format!("label '{}' is not a non-negative integer", &rec[1]) })?;
        if rec[0].is_empty() || rec[2].is_empty() {
            return Err(ManifestError::MalformedRow { row, reason: "empty path or name".into() });
        }
        entries.push(ManifestEntry { path: PathBuf::from(&rec[0]), label, name: rec[2].to_string() });
    }
    let labels: BTreeSet<usize> = entries.iter().map(|e| e.label).collect();
    if let Some(missing) = (0..labels.len()).find(|l| !labels.contains(l)) {
        return Err(ManifestError::NonContiguousLabels { missing });
    }
    Ok(DatasetManifest { entries, base_dir: PathBuf::new() })
}

/// Reads a manifest file, anchors it at the file's directory and checks that
/// every mesh path resolves.
pub fn load_manifest_file(path: &Path) -> Result<DatasetManifest, ManifestError> {
    let text = std::fs::read_to_string(path).map_err(|source| ManifestError::Io { path: path.to_path_buf(), source })?;
    let mut manifest = load_manifest(&text)?;
    manifest.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    manifest.check_files()?;
    Ok(manifest)
}
