mod common;

use std::collections::{BTreeSet, HashMap};

use meshcls::augment::{
    add_holes, coarsen_structured, mirror, mixed_schema, permute_nodes, quad_to_tri, refine, refine_structured, rotate,
    translate, uniform_scale, MirrorAxis, TriPattern,
};
use meshcls::mesh_io::{validate, ElementKind, Mesh};
use meshcls::ndcore::Rng;
use meshcls::synthgen::{generate_part, generate_structured, Schema};
use proptest::prelude::*;

fn positions(mesh: &Mesh) -> HashMap<u64, [f64; 3]> {
    mesh.nodes.iter().map(|n| (n.id, n.xyz)).collect()
}

fn max_distance_change(a: &Mesh, b: &Mesh) -> f64 {
    let (pa, pb) = (positions(a), positions(b));
    let d = |p: &HashMap<u64, [f64; 3]>, i: u64, j: u64| (0..3).map(|k| (p[&i][k] - p[&j][k]).powi(2)).sum::<f64>().sqrt();
    let mut worst = 0.0f64;
    for x in &a.nodes {
        for y in &a.nodes {
            worst = worst.max((d(&pa, x.id, y.id) - d(&pb, x.id, y.id)).abs());
        }
    }
    worst
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 50, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn holes_remove_exactly_the_elements_near_centers(seed in any::<u64>(), k in 0usize..4) {
        let mut rng = Rng::new(seed);
        let spec = common::random_spec(&mut rng);
        let mesh = generate_part(&spec).unwrap();
        let r = 0.6 * spec.pitch();
        let mut a = Rng::new(seed ^ 1);
        let mut b = Rng::new(seed ^ 1);
        let Ok(centers) = meshcls::augment::place_holes(&mesh, k, r, &mut a) else { return Ok(()) };
        let holed = add_holes(&mesh, k, r, &mut b).unwrap();
        let doomed = mesh
            .elements
            .iter()
            .filter(|e| {
                let c = common::xy_centroid(&mesh, e);
                centers.iter().any(|h| ((h[0] - c[0]).powi(2) + (h[1] - c[1]).powi(2)).sqrt() < r)
            })
            .count();
        prop_assert_eq!(holed.element_count(), mesh.element_count() - doomed);
        prop_assert!(k == 0 || doomed >= k);
        prop_assert!(validate(&holed).is_empty());
    }

    #[test]
    fn refine_counts(seed in any::<u64>()) {
        let spec = common::random_spec(&mut Rng::new(seed));
        let mesh = generate_part(&spec).unwrap();
        let fine = refine(&mesh);
        let quads = mesh.elements.iter().filter(|e| e.kind == ElementKind::Quad).count();
        prop_assert_eq!(fine.element_count(), 4 * mesh.element_count());
        prop_assert_eq!(fine.node_count(), mesh.node_count() + common::edge_set(&mesh).len() + quads);
        prop_assert_eq!(positions(&fine).len(), fine.node_count());
        prop_assert!(validate(&fine).is_empty());
    }

    #[test]
    fn triangulation_adds_one_diagonal_per_quad(seed in any::<u64>()) {
        let mut spec = common::random_spec(&mut Rng::new(seed));
        spec.schema = Schema::Quad;
        let mesh = generate_part(&spec).unwrap();
        for pattern in [TriPattern::FixedDiagonal, TriPattern::Alternating] {
            let tri = quad_to_tri(&mesh, pattern);
            let mut want = common::edge_set(&mesh);
            for (pos, e) in mesh.elements.iter().enumerate() {
                let bd = pattern == TriPattern::Alternating && pos % 2 == 1;
                let d = if bd { common::key(e.conn[1], e.conn[3]) } else { common::key(e.conn[0], e.conn[2]) };
                prop_assert!(want.insert(d));
            }
            prop_assert_eq!(common::edge_set(&tri), want);
            prop_assert_eq!(tri.element_count(), 2 * mesh.element_count());
            prop_assert!(validate(&tri).is_empty());
        }
        let mixed = mixed_schema(&mesh);
        let split = mesh.elements.len().div_ceil(2);
        prop_assert_eq!(common::edge_set(&mixed).len(), common::edge_set(&mesh).len() + split);
    }

    #[test]
    fn mirror_is_an_involution_and_rigid_motions_keep_distances(seed in any::<u64>(), deg in -180.0f64..180.0, t in prop::array::uniform3(-100.0f64..100.0)) {
        let mut rng = Rng::new(seed);
        let spec = common::random_spec(&mut rng);
        let mesh = generate_part(&spec).unwrap();
        for axis in [MirrorAxis::X, MirrorAxis::Y] {
            let once = mirror(&mesh, axis);
            prop_assert_eq!(&mirror(&once, axis), &mesh);
            prop_assert!(max_distance_change(&mesh, &once) <= 1e-9);
            prop_assert!(validate(&once).is_empty());
        }
        let axis = [rng.normal(), rng.normal(), rng.normal() + 0.1];
        let moved = translate(&rotate(&mesh, axis, deg.to_radians()).unwrap(), t);
        prop_assert_eq!(moved.element_count(), mesh.element_count());
        prop_assert!(max_distance_change(&mesh, &moved) <= 1e-9);
        let grown = uniform_scale(&mesh, 1.1).unwrap();
        prop_assert_eq!(&grown.elements, &mesh.elements);
    }

    #[test]
    fn coarsen_undoes_refine(seed in any::<u64>()) {
        let spec = common::random_spec(&mut Rng::new(seed));
        let (plate, meta) = generate_structured(&spec).unwrap();
        let (fine, fmeta) = refine_structured(&plate, &meta).unwrap();
        prop_assert_eq!(fine.element_count(), 4 * plate.element_count());
        let (back, bmeta) = coarsen_structured(&fine, &fmeta, 2).unwrap();
        prop_assert_eq!(&bmeta.nodes, &meta.nodes);
        let conn = |m: &Mesh| m.elements.iter().map(|e| e.conn.clone()).collect::<Vec<_>>();
        prop_assert_eq!(conn(&back), conn(&plate));
        let ids = |m: &Mesh| m.nodes.iter().map(|n| (n.id, n.xyz.map(f64::to_bits))).collect::<BTreeSet<_>>();
        prop_assert_eq!(ids(&back), ids(&plate));
        prop_assert!(validate(&back).is_empty());
    }

    #[test]
    fn permutation_relabels_an_isomorphic_mesh(seed in any::<u64>()) {
        let spec = common::random_spec(&mut Rng::new(seed));
        let mesh = generate_part(&spec).unwrap();
        let perm = permute_nodes(&mesh, &mut Rng::new(seed));
        prop_assert_eq!(perm.node_count(), mesh.node_count());
        // nodes keep their coordinates, so coordinates identify them
        let by_pos: HashMap<[u64; 3], u64> = mesh.nodes.iter().map(|n| (n.xyz.map(f64::to_bits), n.id)).collect();
        let old_id: HashMap<u64, u64> = perm.nodes.iter().map(|n| (n.id, by_pos[&n.xyz.map(f64::to_bits)])).collect();
        let mapped: BTreeSet<(u64, u64)> = common::edge_set(&perm).into_iter().map(|(a, b)| common::key(old_id[&a], old_id[&b])).collect();
        prop_assert_eq!(mapped, common::edge_set(&mesh));
        prop_assert!(validate(&perm).is_empty());
    }
}
