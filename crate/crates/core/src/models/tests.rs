use super::gradcheck::{gradcheck_arch, toy_inputs, toy_model, DEFAULT_TOLERANCE};
use super::*;
use crate::augment::{permute_nodes, translate, uniform_scale};
use crate::graph_build::{mesh_to_graph, norm_coeffs};
use crate::mesh_io::parse_mesh;
use crate::ndcore::BN_EPS;
use crate::synthgen::{generate_part, sample_catalog};

fn relu(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x.max(0.0)).collect()
}

fn rel_close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * x.abs().max(y.abs()).max(1.0))
}

fn sample_parts(n: usize) -> Vec<crate::mesh_io::Mesh> {
    sample_catalog(n, 21).entries.iter().map(|e| generate_part(&e.spec).unwrap()).collect()
}

fn small(arch: Arch) -> Model {
    let cfg = match arch {
        Arch::Gcn => ModelConfig::Gcn(GcnConfig { num_layers: 2, hidden_dim: 8, readout: Readout::Mean, num_classes: 4 }),
        Arch::Fcnn => ModelConfig::Fcnn(FcnnConfig { max_nodes: 2000, hidden_dims: vec![16, 8], num_classes: 4 }),
        Arch::PointNet => ModelConfig::PointNet(PointNetConfig {
            tnet_dims: vec![8, 8],
            point_mlp_dims: vec![8, 16],
            head_dims: vec![8],
            ..PointNetConfig::new(2000, 4)
        }),
    };
    let mut m = Model::new(cfg, 3).unwrap();
    // move the tnet off the identity so it takes part in the forward pass
    let mut rng = Rng::new(8);
    for t in m.params.tensors_mut() {
        for v in t.data_mut() {
            *v += 0.05 * rng.normal();
        }
    }
    m
}

#[test]
fn zero_gcn_gives_uniform_softmax() {
    let mut m = Model::new(ModelConfig::Gcn(GcnConfig::new(5)), 1).unwrap();
    for t in m.params.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let input = PartInput::from_mesh(&parse_mesh("GRID,1,1,2,3").unwrap()).unwrap();
    let p = m.classify(&input).unwrap();
    assert!(p.probs.iter().all(|&q| (q - 0.2).abs() < 1e-15));
    assert_eq!(p.label, 0);
}

#[test]
fn gcn_matches_dense_oracle_on_single_quad() {
    let mesh = parse_mesh("GRID,1,0,0,0\nGRID,2,2,0,0.5\nGRID,3,2,1,0\nGRID,4,0,1.5,0\nCQUAD4,1,1,2,3,4").unwrap();
    let m = small(Arch::Gcn);
    let input = PartInput::from_mesh(&mesh).unwrap();
    let got = m.logits(&input).unwrap();

    let g = mesh_to_graph(&mesh).unwrap();
    let c = norm_coeffs(&g);
    let n = g.n_nodes;
    let mut a = vec![vec![0.0; n]; n];
    for (&(i, j), &cij) in g.edges.iter().zip(&c.values) {
        a[i][j] = 1.0 / cij;
        a[j][i] = 1.0 / cij;
    }
    let mut h: Vec<Vec<f64>> = input.features.iter().map(|r| r.to_vec()).collect();
    let p = |name: &str| m.params.by_name(name).unwrap().clone();
    for l in 0..2 {
        let (w, b) = (p(&format!("conv{l}.w")), p(&format!("conv{l}.b")));
        let (din, dout) = (w.rows(), w.cols());
        let hw: Vec<Vec<f64>> = h.iter().map(|r| (0..dout).map(|o| (0..din).map(|k| r[k] * w.at(k, o)).sum()).collect()).collect();
        h = (0..n)
            .map(|i| (0..dout).map(|o| (0..n).map(|j| a[i][j] * hw[j][o]).sum::<f64>() + b.data()[o]).collect())
            .map(|r: Vec<f64>| relu(&r))
            .collect();
    }
    let mean: Vec<f64> = (0..8).map(|o| h.iter().map(|r| r[o]).sum::<f64>() / n as f64).collect();
    let (w, b) = (p("out.w"), p("out.b"));
    let want: Vec<f64> = (0..4).map(|o| (0..8).map(|k| mean[k] * w.at(k, o)).sum::<f64>() + b.data()[o]).collect();
    assert!(got.iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-10), "{got:?} vs {want:?}");
}

#[test]
fn gcn_and_pointnet_ignore_node_order() {
    for arch in [Arch::Gcn, Arch::PointNet] {
        let m = small(arch);
        for (k, mesh) in sample_parts(3).iter().enumerate() {
            let base = m.logits(&PartInput::from_mesh(mesh).unwrap()).unwrap();
            let perm = permute_nodes(mesh, &mut Rng::new(k as u64));
            let got = m.logits(&PartInput::from_mesh(&perm).unwrap()).unwrap();
            assert!(rel_close(&base, &got, 1e-9), "{arch}: {base:?} vs {got:?}");
        }
    }
}

#[test]
fn fcnn_depends_on_node_order() {
    let cfg = FcnnConfig { max_nodes: 2, hidden_dims: vec![1], num_classes: 2 };
    let mut m = Model::new(ModelConfig::Fcnn(cfg.clone()), 0).unwrap();
    // first layer reads only node 1's x coordinate
    let w = m.params.index_of("fc0.w").unwrap();
    m.params.get_mut(w).data_mut().copy_from_slice(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    let o = m.params.index_of("out.w").unwrap();
    m.params.get_mut(o).data_mut().copy_from_slice(&[1.0, -1.0]);
    let mesh = parse_mesh("GRID,1,0,0,0\nGRID,2,1,0,0").unwrap();
    let a = m.logits(&PartInput::from_mesh(&mesh).unwrap()).unwrap();
    let swapped = crate::augment::permute_nodes_with(&mesh, &[1, 0]);
    let b = m.logits(&PartInput::from_mesh(&swapped).unwrap()).unwrap();
    assert_ne!(a, b);
    // full-size part is flattened without padding
    assert_eq!(flatten_padded(&cfg, &[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
}

#[test]
fn fcnn_zero_input_is_bias_composition() {
    let m = small(Arch::Fcnn);
    let input = PartInput::from_mesh(&parse_mesh("GRID,1,4,4,4").unwrap()).unwrap();
    let got = m.logits(&input).unwrap();
    let p = |n: &str| m.params.by_name(n).unwrap().clone();
    let mut h = relu(p("fc0.b").data());
    let w1 = p("fc1.w");
    h = relu(&(0..8).map(|o| (0..16).map(|k| h[k] * w1.at(k, o)).sum::<f64>() + p("fc1.b").data()[o]).collect::<Vec<_>>());
    let wo = p("out.w");
    let want: Vec<f64> = (0..4).map(|o| (0..8).map(|k| h[k] * wo.at(k, o)).sum::<f64>() + p("out.b").data()[o]).collect();
    assert!(rel_close(&got, &want, 1e-12));
}

#[test]
fn pointnet_single_origin_point_without_transform() {
    let cfg = PointNetConfig { use_input_transform: false, max_nodes: 1, ..PointNetConfig::new(1, 3) };
    let m = Model::new(ModelConfig::PointNet(cfg.clone()), 4).unwrap();
    let input = PartInput::from_mesh(&parse_mesh("GRID,1,0,0,0").unwrap()).unwrap();
    let got = m.logits(&input).unwrap();
    // zero point: every dense layer contributes only its bias; running
    // statistics are still at their initial mean 0 / variance 1
    let s = 1.0 / (1.0 + BN_EPS).sqrt();
    let p = |n: &str| m.params.by_name(n).unwrap().clone();
    let mut h: Vec<f64> = p("mlp0.b").data().iter().map(|b| (b * s).max(0.0)).collect();
    let layer = |h: &[f64], name: &str, out: usize| -> Vec<f64> {
        let w = p(&format!("{name}.w"));
        (0..out).map(|o| (0..h.len()).map(|k| h[k] * w.at(k, o)).sum::<f64>() + p(&format!("{name}.b")).data()[o]).collect()
    };
    for (l, &d) in cfg.point_mlp_dims.iter().enumerate().skip(1) {
        h = layer(&h, &format!("mlp{l}"), d).iter().map(|v| (v * s).max(0.0)).collect();
    }
    h = layer(&h, "head0", 128).iter().map(|v| (v * s).max(0.0)).collect();
    let want = layer(&h, "out", 3);
    assert!(rel_close(&got, &want, 1e-12), "{got:?} vs {want:?}");
}

#[test]
fn compressed_padding_matches_explicit_padding() {
    let m = small(Arch::PointNet);
    let ModelConfig::PointNet(cfg) = &m.config else { unreachable!() };
    let cfg = PointNetConfig { max_nodes: 40, ..cfg.clone() };
    let m = Model { config: ModelConfig::PointNet(cfg.clone()), ..m };
    let feats = PartInput::from_mesh(&sample_parts(1)[0]).unwrap().features[..30].to_vec();
    let mut explicit = feats.clone();
    explicit.resize(40, [0.0; 3]);
    let mut extra = explicit.clone();
    extra.push([0.0; 3]);

    let compressed = forward_points(&m, &[PaddedPoints::new(&cfg, &feats)], &mut ForwardCtx::inference()).unwrap();
    let full = forward_points(&m, &[PaddedPoints::explicit(explicit.clone())], &mut ForwardCtx::inference()).unwrap();
    let more = forward_points(&m, &[PaddedPoints::explicit(extra)], &mut ForwardCtx::inference()).unwrap();
    assert!(rel_close(&compressed, &full, 1e-12));
    assert_eq!(full, more);

    // training mode: weighted statistics equal the padded batch
    let other = PartInput::from_mesh(&sample_parts(2)[1]).unwrap().features[..25].to_vec();
    let mut other_full = other.clone();
    other_full.resize(40, [0.0; 3]);
    let mut c1 = ForwardCtx::training(Rng::new(3));
    let mut c2 = ForwardCtx::training(Rng::new(3));
    let a = forward_points(&m, &[PaddedPoints::new(&cfg, &feats), PaddedPoints::new(&cfg, &other)], &mut c1).unwrap();
    let b = forward_points(&m, &[PaddedPoints::explicit(explicit), PaddedPoints::explicit(other_full)], &mut c2).unwrap();
    assert!(rel_close(&a, &b, 1e-9), "{a:?} vs {b:?}");
    for ((n1, s1), (n2, s2)) in c1.bn_stats.iter().zip(&c2.bn_stats) {
        assert_eq!(n1, n2);
        assert!(rel_close(&s1.mean, &s2.mean, 1e-9) && rel_close(&s1.var, &s2.var, 1e-9));
    }
}

#[test]
fn translation_and_scale_do_not_change_logits() {
    let mesh = &sample_parts(1)[0];
    for arch in [Arch::Gcn, Arch::Fcnn, Arch::PointNet] {
        let m = small(arch);
        let base = m.logits(&PartInput::from_mesh(mesh).unwrap()).unwrap();
        let probs_sum: f64 = predict(&base).probs.iter().sum();
        assert!((probs_sum - 1.0).abs() < 1e-9);
        let variants = [
            translate(mesh, [120.0, -40.0, 7.5]),
            uniform_scale(mesh, 1.05).unwrap(),
            uniform_scale(mesh, 1.10).unwrap(),
            uniform_scale(mesh, 1.15).unwrap(),
        ];
        for v in &variants {
            let got = m.logits(&PartInput::from_mesh(v).unwrap()).unwrap();
            assert!(rel_close(&base, &got, 1e-9), "{arch}");
        }
    }
}

#[test]
fn prediction_tie_break_and_confidence() {
    let p = predict(&[0.0; 4]);
    assert_eq!(p.label, 0);
    assert!((p.probability - 0.25).abs() < 1e-15);
    let p = predict(&[0.0, 10.0]);
    assert_eq!(p.label, 1);
    assert!((p.probability - 0.9999546).abs() < 1e-7);
}

#[test]
fn padded_models_reject_large_parts() {
    let cfg = ModelConfig::Fcnn(FcnnConfig { max_nodes: 3, hidden_dims: vec![4], num_classes: 2 });
    let m = Model::new(cfg, 0).unwrap();
    let input = PartInput::from_mesh(&sample_parts(1)[0]).unwrap();
    assert!(matches!(m.logits(&input), Err(ModelError::PartTooLarge { max_nodes: 3, .. })));
}

#[test]
fn config_text_round_trip_and_validation() {
    for arch in [Arch::Gcn, Arch::Fcnn, Arch::PointNet] {
        let cfg = ModelConfig::default_for(arch, 120, 7);
        let (back, rest) = ModelConfig::from_text(arch, &cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert!(rest.is_empty());
        assert_eq!(Model::new(cfg.clone(), 0).unwrap().params.scalar_count() + Model::new(cfg.clone(), 0).unwrap().buffers.scalar_count(), cfg.scalar_count());
    }
    assert!(Model::new(ModelConfig::Gcn(GcnConfig { num_layers: 0, ..GcnConfig::new(3) }), 0).is_err());
    assert!(Model::new(ModelConfig::PointNet(PointNetConfig { dropout_p: 1.0, ..PointNetConfig::new(4, 3) }), 0).is_err());
    assert!(Model::new(ModelConfig::Fcnn(FcnnConfig { hidden_dims: vec![], ..FcnnConfig::new(4, 3) }), 0).is_err());
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let mesh = &sample_parts(1)[0];
    let input = PartInput::from_mesh(mesh).unwrap();
    for arch in [Arch::Gcn, Arch::Fcnn, Arch::PointNet] {
        let ck = Checkpoint {
            model: small(arch),
            meta: TrainMeta { seed: 9, epochs: 3, final_loss: 0.123456789012345 },
            class_names: (0..4).map(|k| format!("part_{k:03}")).collect(),
        };
        let bytes = ck.to_bytes();
        assert_eq!(&bytes[..4], b"MCLS");
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
        let (a, b) = (ck.model.logits(&input).unwrap(), back.model.logits(&input).unwrap());
        assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());

        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&wrong), Err(ModelError::BadCheckpoint(_))));
        let mut wrong = bytes.clone();
        wrong[4] = 9;
        assert!(matches!(Checkpoint::from_bytes(&wrong), Err(ModelError::BadCheckpoint(_))));
        for cut in [0, 3, 8, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(Checkpoint::from_bytes(&bytes[..cut]).is_err());
        }
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(Checkpoint::from_bytes(&longer).is_err());
    }
}

#[test]
fn batched_gcn_equals_per_graph() {
    let m = small(Arch::Gcn);
    let inputs: Vec<PartInput> = sample_parts(3).iter().map(|p| PartInput::from_mesh(p).unwrap()).collect();
    let refs: Vec<&PartInput> = inputs.iter().collect();
    let mut tape = Tape::new();
    let vars = m.bind(&mut tape);
    let out = m.forward(&mut tape, &vars, &refs, &mut ForwardCtx::inference()).unwrap();
    let batched = tape.value(out).clone();
    for (k, inp) in inputs.iter().enumerate() {
        assert!(rel_close(batched.row(k), &m.logits(inp).unwrap(), 1e-12));
    }
}

#[test]
fn toy_gradchecks_pass() {
    for arch in [Arch::Gcn, Arch::Fcnn, Arch::PointNet] {
        let r = gradcheck_arch(arch, DEFAULT_TOLERANCE).unwrap();
        assert!(r.passed(), "{arch}\n{r}");
        assert!(r.params.iter().map(|p| p.checked).sum::<usize>() > 0);
    }
}

#[test]
fn inference_gradcheck_of_pointnet() {
    let m = toy_model(Arch::PointNet, 2);
    let r = super::gradcheck::check_model(&m, &toy_inputs(), &[1, 0, 2], false, 1e-5, 1e-4).unwrap();
    assert!(r.passed(), "{r}");
}
