use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::geometry::{build_graph, Rigid2};
use crate::numerics::{mlp_apply, silu};

fn small(channels: usize, dct: bool) -> ModelConfig {
    ModelConfig {
        t_obs: 4,
        t_pred: 3,
        channels,
        dct,
        pattern_width: 3,
        message_width: 2,
        hidden_width: 5,
        categories: 2,
        layers: 2,
        heads: 1,
        dropout: 0.0,
        embedding_dim: 3,
        token_dim: 2,
        ..ModelConfig::default()
    }
}

fn emb() -> SceneEmbedding {
    SceneEmbedding::random(3, 11)
}

fn scene(m: usize, seed: u64) -> TrajectoryScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tracks = (0..m)
        .map(|_| {
            let mut p = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            (0..4)
                .map(|_| {
                    p = [p[0] + rng.random_range(-0.5..0.5), p[1] + rng.random_range(-0.5..0.5)];
                    p
                })
                .collect()
        })
        .collect();
    TrajectoryScene::from_positions(tracks).unwrap()
}

/// Every parameter filled with uniform noise, including the zero-started
/// scoring layers.
fn randomized(model: &Forecaster, seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = model.init(&mut rng).unwrap();
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for n in names {
        let t = store.get_mut(&n).unwrap();
        for v in t.data_mut() {
            *v = rng.random_range(-0.7..0.7);
        }
    }
    store
}

fn set(store: &mut ParamStore, name: &str, rows: usize, cols: usize, data: Vec<f64>) {
    assert!(store.contains(name), "missing {name}");
    *store.get_mut(name).unwrap() = Tensor::matrix(rows, cols, data).unwrap();
}

fn state(xs: Vec<f64>, ys: Vec<f64>, m: usize) -> GeometricState {
    let c = xs.len() / m;
    GeometricState { xs: Tensor::matrix(m, c, xs).unwrap(), ys: Tensor::matrix(m, c, ys).unwrap(), layer: 0 }
}

fn pattern(h: Vec<f64>, m: usize) -> PatternState {
    let w = h.len() / m;
    PatternState { h: Tensor::matrix(m, w, h).unwrap(), layer: 0 }
}

#[test]
fn single_category_weights_are_one() {
    let cfg = ModelConfig { categories: 1, ..small(2, false) };
    let model = Forecaster::new(cfg).unwrap();
    let store = randomized(&model, 1);
    let sc = scene(3, 2);
    let graph = build_graph(&sc);
    let geo = state(vec![0.1, 0.4, -1.0, 2.0, 0.3, 0.3], vec![1.0, 0.0, 0.5, -0.5, 2.0, 1.0], 3);
    let pat = pattern((0..9).map(|k| k as f64 * 0.1).collect(), 3);
    let w = model.infer_interaction_graph(&geo, &pat, &graph, &store).unwrap().unwrap();
    assert_eq!(w.weights.shape(), &[6, 1]);
    assert!(w.weights.data().iter().all(|&v| v == 1.0));
}

#[test]
fn two_category_softmax_oracle() {
    let cfg = ModelConfig { hidden_width: 1, ..small(2, false) };
    let model = Forecaster::new(cfg).unwrap();
    let mut store = randomized(&model, 1);
    // Input is (h_i[3], h_j[3], d2[2]); the single hidden unit reads d2[0].
    let mut w0 = vec![0.0; 8];
    w0[6] = 1.0;
    set(&mut store, "reason.l0.w", 8, 1, w0);
    set(&mut store, "reason.l0.b", 1, 1, vec![0.0]);
    set(&mut store, "reason.l1.w", 1, 2, vec![1.0, -1.0]);
    set(&mut store, "reason.l1.b", 1, 2, vec![0.25, 0.0]);

    let sc = scene(2, 3);
    let graph = build_graph(&sc);
    let geo = state(vec![1.0, 0.0, 0.0, 5.0], vec![0.5, 0.0, 0.0, 0.0], 2);
    let pat = pattern(vec![0.3; 6], 2);
    let w = model.infer_interaction_graph(&geo, &pat, &graph, &store).unwrap().unwrap();

    // Channel-0 squared distance: (1 - 0)^2 + (0.5 - 0)^2 = 1.25 for both edges.
    let s = 1.25 / (1.0 + (-1.25f64).exp());
    let (l0, l1) = (s + 0.25, -s);
    let p0 = l0.exp() / (l0.exp() + l1.exp());
    for e in 0..2 {
        assert!((w.weights.get(e, 0) - p0).abs() < 1e-14);
        assert!((w.weights.get(e, 0) + w.weights.get(e, 1) - 1.0).abs() < 1e-15);
    }
}

#[test]
fn lone_agent_has_no_messages() {
    let model = Forecaster::new(small(2, false)).unwrap();
    let store = randomized(&model, 4);
    let sc = scene(1, 5);
    let graph = build_graph(&sc);
    assert_eq!(graph.num_edges(), 0);
    let geo = state(vec![1.0, 2.0], vec![0.0, 1.0], 1);
    let pat = pattern(vec![0.1, 0.2, 0.3], 1);
    assert!(model.infer_interaction_graph(&geo, &pat, &graph, &store).unwrap().is_none());
    let tok = SceneToken { values: Tensor::row(vec![0.5, -0.5]) };
    let w = InteractionWeights { weights: Tensor::zeros(&[0, 2]) };
    assert!(model.compute_messages(&geo, &pat, &tok, &w, &graph, &store, "layer0").unwrap().is_none());
}

#[test]
fn message_mlp_oracle() {
    let model = Forecaster::new(small(2, false)).unwrap();
    let store = randomized(&model, 6);
    let sc = scene(2, 7);
    let graph = build_graph(&sc);
    let geo = state(vec![1.0, -2.0, 0.5, 0.0], vec![0.0, 1.0, -1.0, 3.0], 2);
    let h = vec![0.1, 0.2, 0.3, -0.4, 0.5, -0.6];
    let pat = pattern(h.clone(), 2);
    let tok = SceneToken { values: Tensor::row(vec![0.7, -0.1]) };
    let a = InteractionWeights { weights: Tensor::matrix(2, 2, vec![0.9, 0.1, 0.2, 0.8]).unwrap() };
    let msgs = model.compute_messages(&geo, &pat, &tok, &a, &graph, &store, "layer0").unwrap().unwrap();

    // Edge 0 is (0 -> 1): d2 per channel = (1-0.5)^2 + (0+1)^2, (-2-0)^2 + (1-3)^2.
    let input = vec![0.1, 0.2, 0.3, -0.4, 0.5, -0.6, 1.25, 8.0, 0.7, -0.1, 0.9, 0.1];
    let want = mlp_apply(&model.phi_e("layer0"), &store, &Tensor::row(input), &mut Mode::Eval).unwrap();
    assert_eq!(msgs.row_slice(0), want.data());
    // Edge 1 is (1 -> 0); same distances, swapped features, own weights.
    let input = vec![-0.4, 0.5, -0.6, 0.1, 0.2, 0.3, 1.25, 8.0, 0.7, -0.1, 0.2, 0.8];
    let want = mlp_apply(&model.phi_e("layer0"), &store, &Tensor::row(input), &mut Mode::Eval).unwrap();
    assert_eq!(msgs.row_slice(1), want.data());
}

#[test]
fn zero_scores_leave_coordinates() {
    let model = Forecaster::new(small(2, false)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let store = model.init(&mut rng).unwrap();
    let sc = scene(3, 1);
    let graph = build_graph(&sc);
    let geo = state(vec![1.0, -2.0, 0.5, 0.0, 3.0, 3.0], vec![0.0, 1.0, -1.0, 3.0, 2.0, 2.0], 3);
    let msgs = Tensor::full(&[6, 2], 0.4);
    let next = model.equivariant_update(&geo, Some(&msgs), &graph, &store, "layer0").unwrap();
    assert_eq!(next.xs, geo.xs);
    assert_eq!(next.ys, geo.ys);
    assert_eq!(next.layer, 1);
}

#[test]
fn coincident_agents_do_not_move() {
    let model = Forecaster::new(small(2, false)).unwrap();
    let store = randomized(&model, 2);
    let sc = scene(3, 1);
    let graph = build_graph(&sc);
    let geo = state(vec![1.5, -0.5, 1.5, -0.5, 1.5, -0.5], vec![2.0, 0.0, 2.0, 0.0, 2.0, 0.0], 3);
    let msgs = Tensor::full(&[6, 2], 0.9);
    let next = model.equivariant_update(&geo, Some(&msgs), &graph, &store, "layer0").unwrap();
    assert_eq!(next.xs, geo.xs);
    assert_eq!(next.ys, geo.ys);
}

#[test]
fn two_agent_scalar_update() {
    let model = Forecaster::new(small(2, false)).unwrap();
    let mut store = randomized(&model, 3);
    // phi_x = silu(1) * w1 for every edge; pick w1 so the score is s per channel.
    let s = [0.3, -0.2];
    let sig = silu(&Tensor::scalar(1.0)).data()[0];
    set(&mut store, "layer0.phi_x.l0.w", 2, 5, vec![0.0; 10]);
    set(&mut store, "layer0.phi_x.l0.b", 1, 5, vec![1.0, 0.0, 0.0, 0.0, 0.0]);
    let mut w1 = vec![0.0; 10];
    w1[0] = s[0] / sig;
    w1[1] = s[1] / sig;
    set(&mut store, "layer0.phi_x.l1.w", 5, 2, w1);

    let sc = scene(2, 1);
    let graph = build_graph(&sc);
    let x1 = [[1.0, 2.0], [4.0, -1.0]];
    let x2 = [[-1.0, 0.5], [0.0, 3.0]];
    let geo = state(vec![x1[0][0], x1[1][0], x2[0][0], x2[1][0]], vec![x1[0][1], x1[1][1], x2[0][1], x2[1][1]], 2);
    let msgs = Tensor::full(&[2, 2], 0.1);
    let next = model.equivariant_update(&geo, Some(&msgs), &graph, &store, "layer0").unwrap();
    for c in 0..2 {
        let want1 = [x1[c][0] + (x1[c][0] - x2[c][0]) * s[c], x1[c][1] + (x1[c][1] - x2[c][1]) * s[c]];
        let want2 = [x2[c][0] + (x2[c][0] - x1[c][0]) * s[c], x2[c][1] + (x2[c][1] - x1[c][1]) * s[c]];
        assert!((next.xs.get(0, c) - want1[0]).abs() < 1e-12);
        assert!((next.ys.get(0, c) - want1[1]).abs() < 1e-12);
        assert!((next.xs.get(1, c) - want2[0]).abs() < 1e-12);
        assert!((next.ys.get(1, c) - want2[1]).abs() < 1e-12);
    }
}

#[test]
fn invariant_update_lone_agent_sees_zero_messages() {
    let model = Forecaster::new(small(2, false)).unwrap();
    let store = randomized(&model, 8);
    let sc = scene(1, 1);
    let graph = build_graph(&sc);
    let pat = pattern(vec![0.2, -0.3, 0.9], 1);
    let next = model.invariant_update(&pat, None, &graph, &store, "layer0").unwrap();
    let input = Tensor::row(vec![0.2, -0.3, 0.9, 0.0, 0.0]);
    let want = mlp_apply(&model.phi_h("layer0"), &store, &input, &mut Mode::Eval).unwrap();
    assert_eq!(next.h, want);
    assert_eq!(next.layer, 1);
}

#[test]
fn invariant_update_bias_only() {
    let model = Forecaster::new(small(2, false)).unwrap();
    let mut store = randomized(&model, 8);
    set(&mut store, "layer0.phi_h.l0.w", 5, 5, vec![0.0; 25]);
    set(&mut store, "layer0.phi_h.l1.w", 5, 3, vec![0.0; 15]);
    set(&mut store, "layer0.phi_h.l1.b", 1, 3, vec![0.5, -1.5, 2.0]);
    let sc = scene(2, 1);
    let graph = build_graph(&sc);
    let pat = pattern(vec![0.2, -0.3, 0.9, 1.0, 1.0, 1.0], 2);
    let msgs = Tensor::full(&[2, 2], 3.0);
    let next = model.invariant_update(&pat, Some(&msgs), &graph, &store, "layer0").unwrap();
    for i in 0..2 {
        assert_eq!(next.h.row_slice(i), &[0.5, -1.5, 2.0]);
    }
}

#[test]
fn invariant_update_sums_then_applies_mlp() {
    let model = Forecaster::new(small(2, false)).unwrap();
    let store = randomized(&model, 9);
    let sc = scene(3, 1);
    let graph = build_graph(&sc);
    let h = vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
    let pat = pattern(h.clone(), 3);
    // Edges in source-major order: (0,1) (0,2) (1,0) (1,2) (2,0) (2,1).
    let m: Vec<f64> = (0..12).map(|k| k as f64 * 0.25 - 1.0).collect();
    let msgs = Tensor::matrix(6, 2, m.clone()).unwrap();
    let next = model.invariant_update(&pat, Some(&msgs), &graph, &store, "layer0").unwrap();
    for i in 0..3 {
        let (a, b) = (2 * i, 2 * i + 1);
        let sum = [m[2 * a] + m[2 * b], m[2 * a + 1] + m[2 * b + 1]];
        let mut input = h[3 * i..3 * i + 3].to_vec();
        input.extend(sum);
        let want = mlp_apply(&model.phi_h("layer0"), &store, &Tensor::row(input), &mut Mode::Eval).unwrap();
        assert_eq!(next.h.row_slice(i), want.data());
    }
}

#[test]
fn zero_state_predicts_centroid() {
    let model = Forecaster::new(small(3, true)).unwrap();
    let store = randomized(&model, 1);
    let geo = state(vec![0.0; 6], vec![0.0; 6], 2);
    let out = model.output_layer(&geo, Centroid([2.5, -1.0]), &store, 0).unwrap();
    for track in out {
        assert_eq!(track, vec![[2.5, -1.0]; 3]);
    }
}

#[test]
fn output_layer_oracle() {
    let model = Forecaster::new(small(3, true)).unwrap();
    let store = randomized(&model, 12);
    let xs = vec![0.5, -1.0, 2.0, 1.0, 0.0, -0.5];
    let ys = vec![0.0, 0.25, 1.0, -2.0, 0.5, 0.5];
    let geo = state(xs.clone(), ys.clone(), 2);
    let c = [1.0, 2.0];
    let out = model.output_layer(&geo, Centroid(c), &store, 0).unwrap();
    let w = store.get("head00.out.l0.w").unwrap();

    let n = 3;
    let idct = |coef: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|t| {
                (0..n)
                    .map(|k| {
                        let a = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
                        a * coef[k] * (PI * (2 * t + 1) as f64 * k as f64 / (2 * n) as f64).cos()
                    })
                    .sum()
            })
            .collect()
    };
    for i in 0..2 {
        let tx = idct(&xs[3 * i..3 * i + 3]);
        let ty = idct(&ys[3 * i..3 * i + 3]);
        for (t, got) in out[i].iter().enumerate() {
            let px: f64 = (0..3).map(|k| tx[k] * w.get(k, t)).sum::<f64>() + c[0];
            let py: f64 = (0..3).map(|k| ty[k] * w.get(k, t)).sum::<f64>() + c[1];
            assert!((got[0] - px).abs() < 1e-12);
            assert!((got[1] - py).abs() < 1e-12);
        }
    }
    assert!(model.output_layer(&geo, Centroid(c), &store, 1).is_err());
}

#[test]
fn zero_output_map_predicts_centroid() {
    let model = Forecaster::new(small(4, true)).unwrap();
    let mut store = randomized(&model, 5);
    set(&mut store, "head00.out.l0.w", 4, 3, vec![0.0; 12]);
    let sc = scene(3, 4);
    let centroid = compute_centroid(&sc).unwrap();
    let p = model.forward_deterministic(&store, &sc, Some(&emb()), &mut Mode::Eval).unwrap();
    for track in &p.heads[0] {
        for q in track {
            assert!((q[0] - centroid.0[0]).abs() < 1e-12 && (q[1] - centroid.0[1]).abs() < 1e-12);
        }
    }
}

#[test]
fn unperturbed_heads_are_identical() {
    let cfg = ModelConfig { heads: 5, head_perturbation: 0.0, ..small(4, true) };
    let model = Forecaster::new(cfg).unwrap();
    let store = model.init(&mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let p = model.forward_multi(&store, &scene(3, 2), Some(&emb()), &mut Mode::Eval).unwrap();
    assert_eq!(p.head_count(), 5);
    for k in 1..5 {
        assert_eq!(p.heads[k], p.heads[0]);
    }
}

#[test]
fn single_head_multi_matches_deterministic() {
    let model = Forecaster::new(small(4, true)).unwrap();
    let store = randomized(&model, 3);
    let sc = scene(3, 2);
    let a = model.forward_multi(&store, &sc, Some(&emb()), &mut Mode::Eval).unwrap();
    let b = model.forward_deterministic(&store, &sc, Some(&emb()), &mut Mode::Eval).unwrap();
    assert_eq!(a, b);
}

#[test]
fn each_head_recomputes_from_its_own_branch() {
    let cfg = ModelConfig { heads: 4, ..small(4, true) };
    let model = Forecaster::new(cfg.clone()).unwrap();
    let store = randomized(&model, 21);
    let sc = scene(3, 8);
    let multi = model.forward_multi(&store, &sc, Some(&emb()), &mut Mode::Eval).unwrap();

    let single = Forecaster::new(ModelConfig { heads: 1, ..cfg }).unwrap();
    for k in 0..4 {
        let mut s = ParamStore::new();
        let own = format!("{}.", head_prefix(k));
        for (name, p) in store.iter() {
            if name.starts_with("head") {
                if let Some(rest) = name.strip_prefix(&own) {
                    s.insert(format!("head00.{rest}"), p.value.clone());
                }
            } else {
                s.insert(name, p.value.clone());
            }
        }
        let d = single.forward_deterministic(&s, &sc, Some(&emb()), &mut Mode::Eval).unwrap();
        assert_eq!(d.heads[0], multi.heads[k], "head {k}");
    }
    assert_ne!(multi.heads[0], multi.heads[1]);
}

#[test]
fn lone_agent_forward() {
    let model = Forecaster::new(small(4, true)).unwrap();
    let store = randomized(&model, 2);
    let p = model.forward_deterministic(&store, &scene(1, 1), Some(&emb()), &mut Mode::Eval).unwrap();
    assert_eq!(p.num_agents(), 1);
    assert_eq!(p.heads[0][0].len(), 3);
    assert!(p.heads[0][0].iter().flatten().all(|v| v.is_finite()));
}

#[test]
fn agent_order_permutes_predictions() {
    let model = Forecaster::new(ModelConfig { heads: 3, ..small(4, true) }).unwrap();
    let store = randomized(&model, 5);
    let sc = scene(4, 6);
    let order = [2, 0, 3, 1];
    let a = model.forward_multi(&store, &sc, Some(&emb()), &mut Mode::Eval).unwrap();
    let b = model.forward_multi(&store, &sc.permuted(&order), Some(&emb()), &mut Mode::Eval).unwrap();
    for k in 0..3 {
        for (new, &old) in order.iter().enumerate() {
            for t in 0..3 {
                for d in 0..2 {
                    assert!((a.heads[k][old][t][d] - b.heads[k][new][t][d]).abs() < 1e-9);
                }
            }
        }
    }
}

#[test]
fn rigid_motion_commutes_with_forward() {
    for dct in [true, false] {
        let model = Forecaster::new(ModelConfig { heads: 2, ..small(4, dct) }).unwrap();
        let store = randomized(&model, 7);
        let sc = scene(3, 9);
        let base = model.forward_multi(&store, &sc, Some(&emb()), &mut Mode::Eval).unwrap();
        let tf = Rigid2::new(1.1, [4.0, -7.5]);
        let moved = model.forward_multi(&store, &sc.transformed(&tf), Some(&emb()), &mut Mode::Eval).unwrap();
        for (hb, hm) in base.heads.iter().zip(&moved.heads) {
            for (tb, tm) in hb.iter().zip(hm) {
                for (p, q) in tb.iter().zip(tm) {
                    let r = tf.apply(*p);
                    assert!((r[0] - q[0]).abs() < 1e-9 && (r[1] - q[1]).abs() < 1e-9);
                }
            }
        }
    }
}

#[test]
fn train_mode_dropout_is_seeded() {
    let model = Forecaster::new(ModelConfig { dropout: 0.5, ..small(4, true) }).unwrap();
    let store = randomized(&model, 7);
    let sc = scene(3, 9);
    let run = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        model.forward_deterministic(&store, &sc, Some(&emb()), &mut Mode::Train(&mut rng)).unwrap()
    };
    assert_eq!(run(1), run(1));
    assert_ne!(run(1), run(2));
}

#[test]
fn scene_width_and_length_checked() {
    let model = Forecaster::new(small(4, true)).unwrap();
    let store = randomized(&model, 7);
    let short = TrajectoryScene::from_positions(vec![vec![[0.0, 0.0]; 3]]).unwrap();
    assert!(model.forward_deterministic(&store, &short, Some(&emb()), &mut Mode::Eval).is_err());
    let wide = SceneEmbedding::random(4, 1);
    assert!(model.forward_deterministic(&store, &scene(2, 1), Some(&wide), &mut Mode::Eval).is_err());
    assert!(model.forward_deterministic(&store, &scene(2, 1), None, &mut Mode::Eval).is_err());
}
