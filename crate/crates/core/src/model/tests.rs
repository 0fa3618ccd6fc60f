use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::grad_check;
use crate::linegraph::{LABEL_NEAR_I, LABEL_NEAR_J};
use crate::subgraph::EnclosingSubgraph;

/// Connected random subgraph with `vnodes` edges including the candidate.
fn random_line_graph(rng: &mut ChaCha8Rng, dim: usize, vnodes: usize) -> VectorLineGraph {
    let n = (vnodes / 2 + 2).max(3);
    let coords: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-3.0..3.0)).collect();
    let mut edges = std::collections::BTreeSet::new();
    for i in 2..n {
        let j = rng.random_range(0..i);
        edges.insert((j, i));
    }
    edges.insert((1, rng.random_range(2..n)));
    while edges.len() + 1 < vnodes {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b && (a.min(b), a.max(b)) != (0, 1) {
            edges.insert((a.min(b), a.max(b)));
        }
    }
    let edges: Vec<_> = edges.into_iter().collect();
    let sub = EnclosingSubgraph::from_parts(dim, coords, (0..n).collect(), &edges, n).unwrap();
    build_line_graph(&sub)
}

fn model(d: usize, seed: u64) -> GavModel {
    GavModel::new(GavConfig::new(d), seed).unwrap()
}

fn value(store: &ParamStore, name: &str) -> Mat {
    store.value(store.find(name).unwrap_or_else(|| panic!("missing {name}"))).clone()
}

mod naive {
    use super::*;

    pub fn affine(store: &ParamStore, name: &str, x: &[f64]) -> Vec<f64> {
        let w = value(store, &format!("{name}.weight"));
        let b = value(store, &format!("{name}.bias"));
        (0..w.nrows())
            .map(|r| b[[0, r]] + (0..w.ncols()).map(|c| w[[r, c]] * x[c]).sum::<f64>())
            .collect()
    }

    pub fn leaky(x: Vec<f64>, slope: f64) -> Vec<f64> {
        x.into_iter().map(|v| if v > 0.0 { v } else { slope * v }).collect()
    }

    pub fn mlp(store: &ParamStore, name: &str, x: &[f64], slope: f64) -> Vec<f64> {
        let h = leaky(affine(store, &format!("{name}.hidden"), x), slope);
        affine(store, &format!("{name}.out"), &h)
    }

    /// Step-by-step GAV layer; returns (refined rows, s).
    pub fn gav_layer(m: &GavModel, emb: &[Vec<f64>], labels: &[u8], groups: &[Vec<usize>]) -> (Vec<Vec<f64>>, Vec<f64>) {
        let st = &m.store;
        let slope = m.config.leaky_slope;
        let hidden: Vec<Vec<f64>> = emb
            .iter()
            .zip(labels)
            .map(|(e, &l)| {
                let mut f = e.clone();
                f.extend(encode_label(l).unwrap());
                leaky(affine(st, "phi1", &f), slope)
            })
            .collect();
        let heads = m.config.heads;
        let dh = m.config.d_message / heads;
        let mut refined = Vec::new();
        let mut scales = Vec::new();
        for (i, group) in groups.iter().enumerate() {
            let q = affine(st, "attn.q", &hidden[i]);
            let ks: Vec<_> = group.iter().map(|&j| affine(st, "attn.k", &hidden[j])).collect();
            let vs: Vec<_> = group.iter().map(|&j| affine(st, "attn.v", &hidden[j])).collect();
            let mut cat = vec![0.0; m.config.d_message];
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                let sc: Vec<f64> = ks
                    .iter()
                    .map(|k| cols.clone().map(|c| q[c] * k[c]).sum::<f64>() / (dh as f64).sqrt())
                    .collect();
                let mx = sc.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let ex: Vec<f64> = sc.iter().map(|x| (x - mx).exp()).collect();
                let tot: f64 = ex.iter().sum();
                for (e, v) in ex.iter().zip(&vs) {
                    for c in cols.clone() {
                        cat[c] += e / tot * v[c];
                    }
                }
            }
            let out = affine(st, "attn.out", &cat);
            let mixed: Vec<f64> = out.iter().zip(&hidden[i]).map(|(a, b)| a + b).collect();
            let s = mlp(st, "phi2", &mixed, slope)[0].tanh();
            refined.push(emb[i].iter().map(|x| s * x).collect());
            scales.push(s);
        }
        (refined, scales)
    }

    pub fn readout(m: &GavModel, refined: &[Vec<f64>], inc_i: &[usize], inc_j: &[usize]) -> f64 {
        let mean = |set: &[usize]| -> Vec<f64> {
            let d = refined[0].len();
            (0..d).map(|c| set.iter().map(|&x| refined[x][c]).sum::<f64>() / set.len() as f64).collect()
        };
        let mut joined = mean(inc_i);
        joined.extend(mean(inc_j));
        mlp(&m.store, "phi3", &joined, m.config.leaky_slope)[0]
    }
}

fn rows(m: &Mat) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn labels(vlg: &VectorLineGraph) -> Vec<u8> {
    vlg.vnodes.iter().map(|n| n.label).collect()
}

#[test]
fn parameter_counts() {
    assert_eq!(model(3, 0).param_count(), 256 + 4224 + 2177 + 1025);
    assert_eq!(model(3, 0).param_count(), 7682);
    assert_eq!(model(2, 0).param_count(), 224 + 4224 + 2177 + 769);
}

#[test]
fn config_validation() {
    let mut c = GavConfig::new(3);
    c.heads = 5;
    assert!(matches!(GavModel::new(c, 0), Err(Error::Config(_))));
    let mut c = GavConfig::new(4);
    c.k = 1;
    assert!(c.validate().is_err());
    assert_eq!("gcn".parse::<LayerKind>().unwrap(), LayerKind::Gcn);
    assert!("mlp".parse::<LayerKind>().is_err());
}

#[test]
fn zero_phi2_zeroes_every_vector() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut m = model(3, 1);
    for name in ["phi2.hidden.weight", "phi2.hidden.bias", "phi2.out.weight", "phi2.out.bias"] {
        let id = m.store.find(name).unwrap();
        m.store.get_mut(id).value.fill(0.0);
    }
    let vlg = random_line_graph(&mut rng, 3, 9);
    let eval = m.evaluate_line_graph(&vlg).unwrap();
    assert!(eval.s.iter().all(|&s| s == 0.0));
    assert!(eval.refined.iter().all(|&x| x == 0.0));
    assert!(eval.angle_degrees.is_nan());
}

#[test]
fn refined_is_scaled_embedding() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for seed in 0..20 {
        let m = model(2 + (seed as usize % 2), seed);
        let size = rng.random_range(3..16);
        let vlg = random_line_graph(&mut rng, m.config.d_spatial, size);
        let eval = m.evaluate_line_graph(&vlg).unwrap();
        for (i, node) in vlg.vnodes.iter().enumerate() {
            let s = eval.s[i];
            assert!(s > -1.0 && s < 1.0);
            let mut norm_r = 0.0;
            let mut norm_e = 0.0;
            for (c, &e) in node.embedding.iter().enumerate() {
                assert_eq!(eval.refined[[i, c]], s * e);
                norm_r += eval.refined[[i, c]] * eval.refined[[i, c]];
                norm_e += e * e;
            }
            assert!(norm_r.sqrt() <= norm_e.sqrt());
        }
    }
}

#[test]
fn gav_layer_matches_reimplementation() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let m = model(3, 3);
    let vlg = random_line_graph(&mut rng, 3, 8);
    assert_eq!(vlg.len(), 8);
    let inputs = LineGraphInputs::new(&vlg).unwrap();
    let (exp_refined, exp_s) = naive::gav_layer(&m, &rows(&inputs.embeddings), &labels(&vlg), &inputs.groups);
    let eval = m.evaluate(&inputs).unwrap();
    for i in 0..vlg.len() {
        assert!((eval.s[i] - exp_s[i]).abs() < 1e-12);
        for c in 0..3 {
            assert!((eval.refined[[i, c]] - exp_refined[i][c]).abs() < 1e-12);
        }
    }
    let logit = naive::readout(&m, &exp_refined, &vlg.incident_i, &vlg.incident_j);
    assert!((eval.logit - logit).abs() < 1e-12);
}

#[test]
fn two_iterations_compose() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut config = GavConfig::new(2);
    config.k = 2;
    let m = GavModel::new(config, 4).unwrap();
    let vlg = random_line_graph(&mut rng, 2, 10);
    let inputs = LineGraphInputs::new(&vlg).unwrap();
    let (once, s1) = naive::gav_layer(&m, &rows(&inputs.embeddings), &labels(&vlg), &inputs.groups);
    let (twice, s2) = naive::gav_layer(&m, &once, &labels(&vlg), &inputs.groups);
    let eval = m.evaluate(&inputs).unwrap();
    for i in 0..vlg.len() {
        assert!((eval.s[i] - s1[i] * s2[i]).abs() < 1e-12);
        let n0: f64 = inputs.embeddings.row(i).iter().map(|x| x * x).sum();
        let n1: f64 = once[i].iter().map(|x| x * x).sum();
        let n2: f64 = twice[i].iter().map(|x| x * x).sum();
        assert!(n2 <= n1 && n1 <= n0);
        for c in 0..2 {
            assert!((eval.refined[[i, c]] - twice[i][c]).abs() < 1e-12);
        }
    }
    let logit = naive::readout(&m, &twice, &vlg.incident_i, &vlg.incident_j);
    assert!((eval.logit - logit).abs() < 1e-12);
}

#[test]
fn single_iteration_equals_one_layer() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let m = model(3, 5);
    let inputs = LineGraphInputs::new(&random_line_graph(&mut rng, 3, 7)).unwrap();
    let LayerParams::Gav(p) = &m.layer else { unreachable!() };
    let mut t1 = Tape::new(&m.store);
    let e = t1.input(inputs.embeddings.clone());
    let oh = t1.input(inputs.onehot.clone());
    let (r1, _) = gav_layer(&mut t1, p, &inputs, e, oh).unwrap();
    let mut t2 = Tape::new(&m.store);
    let e = t2.input(inputs.embeddings.clone());
    let (r2, _) = message_passing(&mut t2, &m.layer, &inputs, e, 1).unwrap();
    assert_eq!(t1.value(r1), t2.value(r2));
}

#[test]
fn readout_angles() {
    assert_eq!(angle_degrees(&[1.0, 0.0, 0.0], &[-1.0, 0.0, 0.0]), 180.0);
    assert_eq!(angle_degrees(&[2.0, 0.0], &[3.0, 0.0]), 0.0);
    assert!((angle_degrees(&[1.0, 0.0], &[0.0, 5.0]) - 90.0).abs() < 1e-12);
    assert!(angle_degrees(&[0.0, 0.0], &[1.0, 0.0]).is_nan());

    // An isolated candidate: both means are the refined target vector.
    let g = SpatialGraph::from_rows(&[vec![0.0, 0.0], vec![1.0, 2.0], vec![5.0, 5.0], vec![6.0, 5.0]], &[(2, 3)]).unwrap();
    let m = model(2, 6);
    let rec = m.predict(&g, 0, 1, None).unwrap();
    assert_eq!(rec.edges.len(), 1);
    assert_ne!(rec.edges[0].s, 0.0);
    assert_eq!(rec.angle_degrees, 0.0);
}

#[test]
fn readout_without_target_vnode() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut config = GavConfig::new(3);
    config.include_target_in_readout = false;
    let m = GavModel::new(config, 7).unwrap();
    let vlg = random_line_graph(&mut rng, 3, 9);
    let inputs = LineGraphInputs::new(&vlg).unwrap();
    let (refined, _) = naive::gav_layer(&m, &rows(&inputs.embeddings), &labels(&vlg), &inputs.groups);
    let drop = |s: &[usize]| s.iter().copied().filter(|&x| x != vlg.target_vnode).collect::<Vec<_>>();
    let (ii, jj) = (drop(&vlg.incident_i), drop(&vlg.incident_j));
    let eval = m.evaluate(&inputs).unwrap();
    if !ii.is_empty() && !jj.is_empty() {
        assert!((eval.logit - naive::readout(&m, &refined, &ii, &jj)).abs() < 1e-12);
    }
}

#[test]
fn predictions_are_deterministic_probabilities() {
    let g = crate::dataset::generate_synthetic_network(crate::dataset::NetworkKind::VesselTree, 200, 1).unwrap();
    let m = model(3, 8);
    for &(u, v) in g.edges().iter().take(20) {
        let a = m.predict(&g, u, v, Some(1)).unwrap();
        let b = m.predict(&g, v, u, Some(1)).unwrap();
        assert_eq!(a, b);
        assert!(a.probability > 0.0 && a.probability < 1.0);
        assert!(a.edges.iter().all(|e| e.s > -1.0 && e.s < 1.0));
    }
}

#[test]
fn integer_translation_leaves_logit_bitwise_equal() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 60;
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.random_range(-50..50) as f64).collect()).collect();
    let mut edges = Vec::new();
    for i in 1..n {
        edges.push((rng.random_range(0..i), i));
    }
    let g = SpatialGraph::from_rows(&rows, &edges).unwrap();
    let shifted = g.translated(&[7.0, -3.0, 11.0]).unwrap();
    let m = model(3, 9);
    for &(u, v) in &edges {
        let a = m.predict(&g, u, v, None).unwrap();
        let b = m.predict(&shifted, u, v, None).unwrap();
        assert_eq!(a.logit.to_bits(), b.logit.to_bits());
    }
}

#[test]
fn synchronous_update_ignores_vnode_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let m = model(3, 10);
    let vlg = random_line_graph(&mut rng, 3, 11);
    let n = vlg.len();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.reverse();
    // perm[new] = old
    let mut inv = vec![0; n];
    for (new, &old) in perm.iter().enumerate() {
        inv[old] = new;
    }
    let mut shuffled = vlg.clone();
    shuffled.vnodes = perm.iter().map(|&o| vlg.vnodes[o].clone()).collect();
    shuffled.vadj = perm
        .iter()
        .map(|&o| {
            let mut r: Vec<usize> = vlg.vadj[o].iter().map(|&x| inv[x]).collect();
            r.sort_unstable();
            r
        })
        .collect();
    shuffled.target_vnode = inv[vlg.target_vnode];
    shuffled.incident_i = vlg.incident_i.iter().map(|&x| inv[x]).collect();
    shuffled.incident_j = vlg.incident_j.iter().map(|&x| inv[x]).collect();
    let a = m.evaluate_line_graph(&vlg).unwrap();
    let b = m.evaluate_line_graph(&shuffled).unwrap();
    for old in 0..n {
        assert!((a.s[old] - b.s[inv[old]]).abs() < 1e-12);
    }
    assert!((a.logit - b.logit).abs() < 1e-12);
}

#[test]
fn swapping_targets_swaps_labels_and_incidence() {
    let g = crate::dataset::generate_synthetic_network(crate::dataset::NetworkKind::RoadGrid, 100, 2).unwrap();
    let m = model(2, 11);
    let (u, v) = g.edges()[17];
    let fwd = build_line_graph(&crate::subgraph::extract_enclosing_subgraph(&g, u, v, 1).unwrap());
    let rev = build_line_graph(&crate::subgraph::extract_enclosing_subgraph(&g, v, u, 1).unwrap());
    let count = |vlg: &VectorLineGraph, l: u8| vlg.vnodes.iter().filter(|n| n.label == l).count();
    assert_eq!(fwd.incident_i.len(), rev.incident_j.len());
    assert_eq!(fwd.incident_j.len(), rev.incident_i.len());
    assert_eq!(count(&fwd, LABEL_NEAR_I), count(&rev, LABEL_NEAR_J));
    let a = m.evaluate_line_graph(&fwd).unwrap().logit;
    let b = m.evaluate_line_graph(&rev).unwrap().logit;
    assert!(a.is_finite() && b.is_finite());
}

#[test]
fn full_model_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for (d, k) in [(2, 1), (3, 2)] {
        let mut config = GavConfig::new(d);
        config.k = k;
        let m = GavModel::new(config, 12).unwrap();
        let inputs = LineGraphInputs::new(&random_line_graph(&mut rng, d, 6)).unwrap();
        let report = grad_check(&m.store, |t| Ok(m.loss(t, &inputs, 1.0)?.1)).unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }
}

mod ablation_tests {
    use super::*;

    fn one_vnode_inputs(features: &[f64]) -> LineGraphInputs {
        LineGraphInputs {
            embeddings: Array2::zeros((1, 2)),
            onehot: Array2::zeros((1, 4)),
            groups: vec![vec![0]],
            neighbors: vec![vec![]],
            target_vnode: 0,
            incident_i: vec![0],
            incident_j: vec![0],
        }
        .with_embeddings(Array2::from_shape_vec((1, features.len()), features.to_vec()).unwrap())
    }

    #[test]
    fn gcn_isolated_vnode_is_self_term() {
        let inputs = one_vnode_inputs(&[2.0, -4.0]);
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.input(inputs.embeddings.clone());
        let out = ablation_layer(&mut tape, LayerKind::Gcn, &inputs, x, &mut |t, _, v| Ok(t.scale(v, 3.0))).unwrap();
        assert_eq!(tape.value(out), &array![[6.0, -12.0]]);
    }

    #[test]
    fn edgeconv_single_neighbor_identity_block() {
        let inputs = LineGraphInputs {
            embeddings: array![[1.0, 2.0], [5.0, -1.0]],
            onehot: Array2::zeros((2, 4)),
            groups: vec![vec![0, 1], vec![1, 0]],
            neighbors: vec![vec![1], vec![0]],
            target_vnode: 0,
            incident_i: vec![0],
            incident_j: vec![0],
        };
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.input(inputs.embeddings.clone());
        // phi keeps the first block of [n_i ∥ n_j - n_i].
        let out = ablation_layer(&mut tape, LayerKind::EdgeConv, &inputs, x, &mut |t, _, v| {
            let w = t.input(Array2::from_shape_fn((2, 4), |(r, c)| if r == c { 1.0 } else { 0.0 }));
            t.linear(v, w, None)
        })
        .unwrap();
        assert_eq!(tape.value(out), &inputs.embeddings);
    }

    #[test]
    fn sage_matches_hand_computation() {
        let inputs = LineGraphInputs {
            embeddings: array![[1.0, 0.0], [0.0, 2.0], [3.0, 3.0]],
            onehot: Array2::zeros((3, 4)),
            groups: vec![vec![0, 1, 2], vec![1, 0], vec![2, 0]],
            neighbors: vec![vec![1, 2], vec![0], vec![0]],
            target_vnode: 0,
            incident_i: vec![0],
            incident_j: vec![0],
        };
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.input(inputs.embeddings.clone());
        let out = ablation_layer(&mut tape, LayerKind::Sage, &inputs, x, &mut |t, slot, v| {
            Ok(match slot {
                PhiSlot::Phi => t.scale(v, 2.0),
                _ => t.scale(v, -1.0),
            })
        })
        .unwrap();
        // 2 n_i - mean_j n_j
        let expected = array![[2.0 - 1.5, 0.0 - 2.5], [0.0 - 1.0, 4.0 - 0.0], [6.0 - 1.0, 6.0 - 0.0]];
        assert_eq!(tape.value(out), &expected);
    }

    #[test]
    fn gat_weights_are_softmax_over_self_and_neighbors() {
        let inputs = LineGraphInputs {
            embeddings: array![[1.0, 0.0], [0.0, 2.0]],
            onehot: Array2::zeros((2, 4)),
            groups: vec![vec![0, 1], vec![1, 0]],
            neighbors: vec![vec![1], vec![0]],
            target_vnode: 0,
            incident_i: vec![0],
            incident_j: vec![0],
        };
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.input(inputs.embeddings.clone());
        // z = x, score_self = 0, score_neighbor = first coordinate of z.
        let out = ablation_layer(&mut tape, LayerKind::Gat, &inputs, x, &mut |t, slot, v| match slot {
            PhiSlot::Phi => Ok(v),
            PhiSlot::GatSelf => {
                let w = t.input(Array2::zeros((1, 2)));
                t.linear(v, w, None)
            }
            _ => {
                let w = t.input(array![[1.0, 0.0]]);
                t.linear(v, w, None)
            }
        })
        .unwrap();
        // Node 0 attends {0: leaky(1) = 1, 1: leaky(0) = 0}; node 1 attends {1: 0, 0: 1}.
        let w1 = 1f64.exp() / (1f64.exp() + 1.0);
        let expected = array![[w1, 2.0 * (1.0 - w1)], [w1, 2.0 * (1.0 - w1)]];
        for (a, b) in tape.value(out).iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn every_layer_runs_and_differentiates() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for kind in LayerKind::ALL {
            let mut config = GavConfig::new(3);
            config.layer = kind;
            config.k = 2;
            let m = GavModel::new(config, 13).unwrap();
            let inputs = LineGraphInputs::new(&random_line_graph(&mut rng, 3, 7)).unwrap();
            let eval = m.evaluate(&inputs).unwrap();
            assert!(eval.logit.is_finite(), "{kind}");
            assert_eq!(eval.s.is_empty(), kind != LayerKind::Gav);
            let report = grad_check(&m.store, |t| Ok(m.loss(t, &inputs, 0.0)?.1)).unwrap();
            assert!(report.max_rel_error < 1e-4, "{kind}: {report:?}");
        }
    }
}
