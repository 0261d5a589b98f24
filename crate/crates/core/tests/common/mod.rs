//! Generators and brute-force oracles shared by the integration tests and
//! the acceptance binary. Oracles work from the raw mesh, never from the
//! library's graph or augmentation code.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};

use meshcls::mesh_io::{Element, ElementKind, Mesh, Node};
use meshcls::ndcore::Rng;
use meshcls::synthgen::{Bead, Hole, PartSpec, Schema};

/// A coordinate with at most nine significant digits, parsed from text so
/// it is the nearest double to its decimal form.
pub fn short_coord(rng: &mut Rng) -> f64 {
    let mantissa = rng.int_in(0, 1_999_999_998) as i64 - 999_999_999;
    let exp = rng.int_in(0, 12) as i32 - 9;
    format!("{mantissa}e{exp}").parse().unwrap()
}

/// Any finite double, including subnormals and huge magnitudes.
pub fn wild_coord(rng: &mut Rng) -> f64 {
    loop {
        let v = f64::from_bits(rng.next_u64());
        if v.is_finite() {
            return v;
        }
    }
}

/// Valid mesh with scattered ids: every element references distinct,
/// existing nodes. Orphan nodes may occur.
pub fn random_mesh(rng: &mut Rng, coord: fn(&mut Rng) -> f64) -> Mesh {
    let n = rng.int_in(3, 40);
    random_mesh_with(rng, n, coord)
}

/// [`random_mesh`] with exactly `n` nodes; `n < 3` gives a mesh without
/// elements.
pub fn random_mesh_with(rng: &mut Rng, n: usize, coord: fn(&mut Rng) -> f64) -> Mesh {
    let mut ids: Vec<u64> = (1..=(n as u64 * 7)).collect();
    rng.shuffle(&mut ids);
    let nodes: Vec<Node> = ids[..n].iter().map(|&id| Node { id, xyz: [coord(rng), coord(rng), coord(rng)] }).collect();
    let n_elem = if n < 3 { 0 } else { rng.int_in(0, 2 * n) };
    let mut eids: Vec<u64> = (1..=(n_elem as u64 * 3 + 1)).collect();
    rng.shuffle(&mut eids);
    let elements = (0..n_elem)
        .map(|k| {
            let arity = if n >= 4 && rng.below(2) == 0 { 4 } else { 3 };
            let mut pick: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut pick);
            let conn = pick[..arity].iter().map(|&i| nodes[i].id).collect();
            let kind = if arity == 4 { ElementKind::Quad } else { ElementKind::Tri };
            Element { id: eids[k], kind, conn }
        })
        .collect();
    Mesh { nodes, elements }
}

/// Seeded structured plate spec with up to two holes and one bead.
pub fn random_spec(rng: &mut Rng) -> PartSpec {
    loop {
        let nx = rng.int_in(2, 12);
        let ny = rng.int_in(2, 12);
        let width = 10.0 * nx as f64;
        let height = 8.0 * ny as f64;
        let mut spec = PartSpec::plate(width, height, nx, ny);
        spec.schema = Schema::ALL[rng.below(3)];
        for _ in 0..rng.below(3) {
            let r = rng.range(3.0, 12.0);
            spec.holes.push(Hole { cx: rng.range(r, width - r), cy: rng.range(r, height - r), r });
        }
        if rng.below(2) == 0 {
            spec.beads.push(Bead {
                x0: rng.range(0.0, width),
                y0: rng.range(0.0, height),
                x1: rng.range(0.0, width),
                y1: rng.range(0.0, height),
                half_width: rng.range(4.0, 15.0),
                height: rng.range(1.0, 6.0),
            });
        }
        if spec.check().is_ok() {
            return spec;
        }
    }
}

pub fn key(a: u64, b: u64) -> (u64, u64) {
    (a.min(b), a.max(b))
}

/// Undirected perimeter edges by node id, read straight off the elements.
pub fn edge_set(mesh: &Mesh) -> BTreeSet<(u64, u64)> {
    let mut s = BTreeSet::new();
    for e in &mesh.elements {
        let k = e.conn.len();
        for i in 0..k {
            s.insert(key(e.conn[i], e.conn[(i + 1) % k]));
        }
    }
    s
}

pub fn xy_centroid(mesh: &Mesh, e: &Element) -> [f64; 2] {
    let pos: HashMap<u64, [f64; 3]> = mesh.nodes.iter().map(|n| (n.id, n.xyz)).collect();
    let mut c = [0.0; 2];
    for id in &e.conn {
        c[0] += pos[id][0];
        c[1] += pos[id][1];
    }
    c.map(|v| v / e.conn.len() as f64)
}

/// Dense normalized adjacency with self loops, in node list order:
/// `A[i][j] = 1 / sqrt(d_i d_j)` for adjacent or equal nodes.
pub fn dense_adjacency(mesh: &Mesh) -> Vec<Vec<f64>> {
    let n = mesh.nodes.len();
    let idx: HashMap<u64, usize> = mesh.nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect();
    let mut adj = vec![vec![false; n]; n];
    for (i, row) in adj.iter_mut().enumerate() {
        row[i] = true;
    }
    for (a, b) in edge_set(mesh) {
        adj[idx[&a]][idx[&b]] = true;
        adj[idx[&b]][idx[&a]] = true;
    }
    let deg: Vec<f64> = adj.iter().map(|r| r.iter().filter(|&&x| x).count() as f64).collect();
    (0..n)
        .map(|i| (0..n).map(|j| if adj[i][j] { 1.0 / (deg[i] * deg[j]).sqrt() } else { 0.0 }).collect())
        .collect()
}

/// `A · H · W + b` computed densely.
pub fn dense_graph_conv(a: &[Vec<f64>], h: &[Vec<f64>], w: &[Vec<f64>], b: &[f64]) -> Vec<Vec<f64>> {
    let n = a.len();
    let dout = b.len();
    let hw: Vec<Vec<f64>> = h.iter().map(|r| (0..dout).map(|o| r.iter().zip(w).map(|(x, wr)| x * wr[o]).sum()).collect()).collect();
    (0..n)
        .map(|i| (0..dout).map(|o| (0..n).map(|j| a[i][j] * hw[j][o]).sum::<f64>() + b[o]).collect())
        .collect()
}

/// Per-axis standardization with the n-1 sample deviation; flat axes
/// become 0.
pub fn scaled_features(mesh: &Mesh) -> Vec<[f64; 3]> {
    let n = mesh.nodes.len() as f64;
    let mut out = vec![[0.0; 3]; mesh.nodes.len()];
    for a in 0..3 {
        let mean = mesh.nodes.iter().map(|p| p.xyz[a]).sum::<f64>() / n;
        let var = if n > 1.0 { mesh.nodes.iter().map(|p| (p.xyz[a] - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        let std = var.sqrt();
        for (o, p) in out.iter_mut().zip(&mesh.nodes) {
            o[a] = if std < 1e-12 { 0.0 } else { (p.xyz[a] - mean) / std };
        }
    }
    out
}

/// Max over `|a-b| / max(|a|,|b|,1e-300)`.
pub fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-300)).fold(0.0, f64::max)
}
