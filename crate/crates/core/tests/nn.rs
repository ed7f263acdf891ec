use std::sync::Arc;

use dml_autodiff::{Bags, Graph, ParamGrads, ParameterStore, Tensor};
use dml_core::nn::{
    decode_checkpoint, embed_and_concat, encode_checkpoint, load_checkpoint, mlp_forward,
    save_checkpoint, scaled_dot_attention, slot_attention, task_loss, Activation, Adam, AdamConfig,
    EmbeddingTable, LossKind, MlpSpec, ParamBuilder, Telemetry, CHECKPOINT_MAGIC,
};
use proptest::prelude::*;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn store_with(entries: &[(&str, Tensor)]) -> ParameterStore {
    let mut s = ParameterStore::new();
    for (name, t) in entries {
        s.insert(*name, t.clone()).unwrap();
    }
    s
}

#[test]
fn identity_layer_is_pass_through() {
    let store = store_with(&[
        ("m/0/W", Tensor::identity(3)),
        ("m/0/b", Tensor::zeros(1, 3)),
    ]);
    let spec = MlpSpec::new(vec![3], Activation::Linear).unwrap();
    let x = Tensor::from_rows(&[&[1.0, -2.0, 3.0], &[0.5, 0.0, -0.25]]);
    let mut g = Graph::new(&store);
    let xi = g.leaf(x.clone()).unwrap();
    let y = mlp_forward(&mut g, &spec, "m", xi).unwrap();
    assert_eq!(g.value(y), &x);
}

#[test]
fn zero_relu_layer_gives_zeros() {
    let store = store_with(&[
        ("m/0/W", Tensor::zeros(2, 4)),
        ("m/0/b", Tensor::zeros(1, 4)),
    ]);
    let spec = MlpSpec::new(vec![4], Activation::Relu).unwrap();
    let mut g = Graph::new(&store);
    let x = g.leaf(Tensor::from_rows(&[&[1.0, 2.0]])).unwrap();
    let y = mlp_forward(&mut g, &spec, "m", x).unwrap();
    assert_eq!(g.value(y), &Tensor::zeros(1, 4));
}

#[test]
fn two_layer_mlp_matches_hand_arithmetic() {
    let w0 = Tensor::from_rows(&[&[0.5, -1.0], &[0.25, 2.0], &[-0.75, 0.1]]);
    let b0 = Tensor::row(&[0.1, -0.2]);
    let w1 = Tensor::from_rows(&[&[1.5], &[-0.5]]);
    let b1 = Tensor::row(&[0.3]);
    let store = store_with(&[
        ("m/0/W", w0.clone()),
        ("m/0/b", b0.clone()),
        ("m/1/W", w1.clone()),
        ("m/1/b", b1.clone()),
    ]);
    let spec = MlpSpec::new(vec![2, 1], Activation::Sigmoid).unwrap();
    let rows: [[f64; 3]; 2] = [[1.0, 0.5, -1.0], [-2.0, 0.25, 0.75]];
    let mut g = Graph::new(&store);
    let x = g.leaf(Tensor::from_rows(&[&rows[0], &rows[1]])).unwrap();
    let y = mlp_forward(&mut g, &spec, "m", x).unwrap();
    for (r, row) in rows.iter().enumerate() {
        let mut h = [0.0; 2];
        for (j, hj) in h.iter_mut().enumerate() {
            let z: f64 = (0..3).map(|i| row[i] * w0.get(i, j)).sum::<f64>() + b0.get(0, j);
            *hj = z.max(0.0);
        }
        let z = h[0] * w1.get(0, 0) + h[1] * w1.get(1, 0) + b1.get(0, 0);
        let want = 1.0 / (1.0 + (-z).exp());
        assert!(close(g.value(y).get(r, 0), want, 1e-14));
    }
}

#[test]
fn mlp_rejects_bad_specs_and_shapes() {
    assert!(MlpSpec::new(vec![], Activation::Linear).is_err());
    assert!(MlpSpec::new(vec![3, 0], Activation::Linear).is_err());
    let store = store_with(&[
        ("m/0/W", Tensor::zeros(3, 2)),
        ("m/0/b", Tensor::zeros(1, 2)),
    ]);
    let spec = MlpSpec::new(vec![2], Activation::Linear).unwrap();
    let mut g = Graph::new(&store);
    let x = g.leaf(Tensor::zeros(1, 4)).unwrap();
    assert!(mlp_forward(&mut g, &spec, "m", x).is_err());
}

#[test]
fn mlp_param_count_matches_registered_tensors() {
    let spec = MlpSpec::new(vec![128, 80, 1], Activation::Sigmoid).unwrap();
    let mut store = ParameterStore::new();
    spec.init(&mut ParamBuilder::new(&mut store, 0), "t", 128)
        .unwrap();
    assert_eq!(store.num_trainable(), spec.param_count(128));
    assert_eq!(
        spec.param_count(128),
        128 * 128 + 128 + 128 * 80 + 80 + 80 + 1
    );
}

fn table_store(rows: usize, dim: usize, name: &str) -> ParameterStore {
    let data = (0..rows * dim).map(|i| i as f64).collect();
    store_with(&[(name, Tensor::new(rows, dim, data).unwrap())])
}

#[test]
fn lookup_returns_table_row() {
    let store = table_store(5, 2, "e");
    let table = EmbeddingTable::new("e", 5, 2).unwrap();
    let bags = Arc::new(Bags::singletons([3]));
    let mut g = Graph::new(&store);
    let y = embed_and_concat(&mut g, &[(&table, &bags)], None).unwrap();
    assert_eq!(g.value(y), &Tensor::row(&[6.0, 7.0]));
}

#[test]
fn fields_concatenate_in_order_and_bags_mean_pool() {
    let mut store = table_store(4, 2, "a");
    store
        .insert("b", Tensor::from_rows(&[&[0.0], &[10.0], &[20.0]]))
        .unwrap();
    let (a, b) = (
        EmbeddingTable::new("a", 4, 2).unwrap(),
        EmbeddingTable::new("b", 3, 1).unwrap(),
    );
    let ia = Arc::new(Bags::singletons([1, 2]));
    let ib = Arc::new(Bags::from_lists(vec![vec![1, 2], vec![2]]));
    let mut g = Graph::new(&store);
    let y = embed_and_concat(&mut g, &[(&a, &ia), (&b, &ib)], None).unwrap();
    assert_eq!(
        g.value(y),
        &Tensor::from_rows(&[&[2.0, 3.0, 15.0], &[4.0, 5.0, 20.0]])
    );
}

#[test]
fn lookup_gradient_hits_only_used_rows() {
    let store = table_store(5, 2, "e");
    let table = EmbeddingTable::new("e", 5, 2).unwrap();
    let bags = Arc::new(Bags::singletons([1, 3, 1]));
    let mut g = Graph::new(&store);
    let y = embed_and_concat(&mut g, &[(&table, &bags)], None).unwrap();
    let s = g.sum(y).unwrap();
    let grads = g.backward(s).unwrap();
    let gt = grads.wrt(g.bound("e").unwrap());
    let want = Tensor::from_rows(&[
        &[0.0, 0.0],
        &[2.0, 2.0],
        &[0.0, 0.0],
        &[1.0, 1.0],
        &[0.0, 0.0],
    ]);
    assert_eq!(gt, want);
}

#[test]
fn out_of_vocabulary_maps_to_unknown_and_is_counted() {
    let store = table_store(3, 2, "e");
    let table = EmbeddingTable::new("e", 3, 2).unwrap();
    let bags = Arc::new(Bags::singletons([7, 2, 9]));
    let telemetry = Telemetry::default();
    let mut g = Graph::new(&store);
    let y = embed_and_concat(&mut g, &[(&table, &bags)], Some(&telemetry)).unwrap();
    assert_eq!(
        g.value(y),
        &Tensor::from_rows(&[&[0.0, 1.0], &[4.0, 5.0], &[0.0, 1.0]])
    );
    assert_eq!(telemetry.oov_lookups(), 2);
}

#[test]
fn mismatched_field_lengths_are_rejected() {
    let mut store = table_store(3, 2, "a");
    store.insert("b", Tensor::zeros(3, 2)).unwrap();
    let (a, b) = (
        EmbeddingTable::new("a", 3, 2).unwrap(),
        EmbeddingTable::new("b", 3, 2).unwrap(),
    );
    let (ia, ib) = (
        Arc::new(Bags::singletons([1, 2])),
        Arc::new(Bags::singletons([1])),
    );
    let mut g = Graph::new(&store);
    assert!(embed_and_concat(&mut g, &[(&a, &ia), (&b, &ib)], None).is_err());
}

fn attention_value(q: &Tensor, k: &Tensor, v: &Tensor) -> Tensor {
    let store = ParameterStore::new();
    let mut g = Graph::new(&store);
    let (q, k, v) = (
        g.leaf(q.clone()).unwrap(),
        g.leaf(k.clone()).unwrap(),
        g.leaf(v.clone()).unwrap(),
    );
    let out = scaled_dot_attention(&mut g, q, k, v).unwrap();
    g.value(out).clone()
}

#[test]
fn zero_queries_average_values() {
    let v = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, -4.0], &[5.0, 8.0]]);
    let k = Tensor::from_rows(&[&[0.3, 1.0], &[-2.0, 0.5], &[1.0, 1.0]]);
    let out = attention_value(&Tensor::zeros(2, 2), &k, &v);
    for r in 0..2 {
        assert!(close(out.get(r, 0), 3.0, 1e-12));
        assert!(close(out.get(r, 1), 2.0, 1e-12));
    }
}

#[test]
fn zero_values_give_zero_output() {
    let q = Tensor::from_rows(&[&[0.3, 1.0], &[-2.0, 0.5]]);
    assert_eq!(
        attention_value(&q, &q, &Tensor::zeros(2, 2)),
        Tensor::zeros(2, 2)
    );
}

#[test]
fn two_by_two_attention_matches_formula() {
    let q = Tensor::from_rows(&[&[1.0, 0.0], &[0.5, -1.0]]);
    let k = Tensor::from_rows(&[&[0.0, 1.0], &[2.0, 1.0]]);
    let v = Tensor::from_rows(&[&[1.0, 2.0], &[-1.0, 3.0]]);
    let out = attention_value(&q, &k, &v);
    let s2 = 2f64.sqrt();
    for r in 0..2 {
        let s: Vec<f64> = (0..2)
            .map(|j| (q.get(r, 0) * k.get(j, 0) + q.get(r, 1) * k.get(j, 1)) / s2)
            .collect();
        let z = s[0].exp() + s[1].exp();
        let w = [s[0].exp() / z, s[1].exp() / z];
        for c in 0..2 {
            let want = w[0] * v.get(0, c) + w[1] * v.get(1, c);
            assert!(close(out.get(r, c), want, 1e-14));
        }
    }
}

#[test]
fn attention_rejects_mismatched_dims() {
    let store = ParameterStore::new();
    let mut g = Graph::new(&store);
    let q = g.leaf(Tensor::zeros(2, 3)).unwrap();
    let k = g.leaf(Tensor::zeros(2, 2)).unwrap();
    assert!(scaled_dot_attention(&mut g, q, k, k).is_err());
}

#[test]
fn slot_attention_matches_per_sample_attention() {
    let (batch, slots, d) = (3, 2, 4);
    let mk = |seed: f64, r: usize, c: usize| (seed + r as f64 * 1.7 + c as f64 * 0.31).sin();
    let slot = |s: usize, which: f64| {
        let data = (0..batch * d)
            .map(|i| mk(which + s as f64, i / d, i % d))
            .collect();
        Tensor::new(batch, d, data).unwrap()
    };
    let qs: Vec<Tensor> = (0..slots).map(|s| slot(s, 0.0)).collect();
    let ks: Vec<Tensor> = (0..slots).map(|s| slot(s, 10.0)).collect();
    let vs: Vec<Tensor> = (0..slots).map(|s| slot(s, 20.0)).collect();
    let store = ParameterStore::new();
    let mut g = Graph::new(&store);
    let leaves = |g: &mut Graph<'_>, ts: &[Tensor]| {
        ts.iter()
            .map(|t| g.leaf(t.clone()).unwrap())
            .collect::<Vec<_>>()
    };
    let (q, k, v) = (
        leaves(&mut g, &qs),
        leaves(&mut g, &ks),
        leaves(&mut g, &vs),
    );
    let (outs, weights) = slot_attention(&mut g, &q, &k, &v).unwrap();
    for b in 0..batch {
        let stack = |ts: &[Tensor]| {
            let rows: Vec<&[f64]> = ts.iter().map(|t| t.row_slice(b)).collect();
            Tensor::from_rows(&rows)
        };
        let want = attention_value(&stack(&qs), &stack(&ks), &stack(&vs));
        for s in 0..slots {
            for c in 0..d {
                assert!(close(g.value(outs[s]).get(b, c), want.get(s, c), 1e-12));
            }
            let w = g.value(weights[s]).row_slice(b);
            assert!(w.iter().all(|&x| x >= 0.0));
            assert!(close(w.iter().sum::<f64>(), 1.0, 1e-10));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn attention_rows_are_convex_combinations(
        q in prop::collection::vec(-3.0f64..3.0, 6),
        k in prop::collection::vec(-3.0f64..3.0, 6),
        v in prop::collection::vec(-3.0f64..3.0, 6),
    ) {
        let (q, k, v) = (
            Tensor::new(3, 2, q).unwrap(),
            Tensor::new(3, 2, k).unwrap(),
            Tensor::new(3, 2, v).unwrap(),
        );
        let out = attention_value(&q, &k, &v);
        for c in 0..2 {
            let col: Vec<f64> = (0..3).map(|r| v.get(r, c)).collect();
            let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for r in 0..3 {
                prop_assert!(out.get(r, c) >= lo - 1e-12 && out.get(r, c) <= hi + 1e-12);
            }
        }
    }
}

fn grads(entries: &[(&str, Tensor)]) -> ParamGrads {
    entries
        .iter()
        .map(|(n, t)| (n.to_string(), t.clone()))
        .collect()
}

#[test]
fn first_adam_step_moves_by_lr_times_sign() {
    let mut params = store_with(&[("w", Tensor::row(&[1.0, -1.0, 0.5]))]);
    let mut adam = Adam::new(AdamConfig::default());
    adam.step(
        &mut params,
        &grads(&[("w", Tensor::row(&[0.3, -2.0, 1e-3]))]),
    )
    .unwrap();
    let w = params.get("w").unwrap();
    assert!(close(w.get(0, 0), 1.0 - 1e-3, 1e-9));
    assert!(close(w.get(0, 1), -1.0 + 1e-3, 1e-9));
    assert!(close(w.get(0, 2), 0.5 - 1e-3, 1e-8));
    assert_eq!(adam.steps(), 1);
}

#[test]
fn zero_gradient_keeps_params_and_decays_moments() {
    let mut params = store_with(&[("w", Tensor::row(&[1.0]))]);
    let mut adam = Adam::new(AdamConfig::default());
    adam.step(&mut params, &grads(&[("w", Tensor::row(&[0.5]))]))
        .unwrap();
    let after_one = params.get("w").unwrap().clone();
    let (m1, v1) = (
        adam.first_moment("w").unwrap().get(0, 0),
        adam.second_moment("w").unwrap().get(0, 0),
    );
    let mut params2 = store_with(&[("w", Tensor::row(&[2.0]))]);
    let mut fresh = Adam::new(AdamConfig::default());
    fresh
        .step(&mut params2, &grads(&[("w", Tensor::row(&[0.0]))]))
        .unwrap();
    assert_eq!(params2.get("w").unwrap(), &Tensor::row(&[2.0]));

    adam.step(&mut params, &grads(&[("w", Tensor::row(&[0.0]))]))
        .unwrap();
    assert!(close(
        adam.first_moment("w").unwrap().get(0, 0),
        0.9 * m1,
        1e-15
    ));
    assert!(close(
        adam.second_moment("w").unwrap().get(0, 0),
        0.999 * v1,
        1e-15
    ));
    // The decayed first moment still moves the parameter.
    assert!(params.get("w").unwrap().get(0, 0) < after_one.get(0, 0));
}

#[test]
fn adam_trajectory_on_square_matches_scalar_reference() {
    let cfg = AdamConfig::default();
    let mut params = store_with(&[("theta", Tensor::scalar(1.0))]);
    let mut adam = Adam::new(cfg);
    let (mut theta, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
    for t in 1..=3 {
        let g = 2.0 * params.get("theta").unwrap().item();
        adam.step(&mut params, &grads(&[("theta", Tensor::scalar(g))]))
            .unwrap();

        let g_ref = 2.0 * theta;
        m = 0.9 * m + 0.1 * g_ref;
        v = 0.999 * v + 0.001 * g_ref * g_ref;
        let mh = m / (1.0 - 0.9f64.powi(t));
        let vh = v / (1.0 - 0.999f64.powi(t));
        theta -= 1e-3 * mh / (vh.sqrt() + 1e-8);
        assert!(close(params.get("theta").unwrap().item(), theta, 1e-15));
    }
}

#[test]
fn zero_learning_rate_is_bit_identical() {
    let w = Tensor::row(&[0.123456789, -9.87654321]);
    let mut params = store_with(&[("w", w.clone())]);
    let mut adam = Adam::new(AdamConfig {
        lr: 0.0,
        ..AdamConfig::default()
    });
    for _ in 0..5 {
        adam.step(&mut params, &grads(&[("w", Tensor::row(&[0.7, -0.2]))]))
            .unwrap();
    }
    assert_eq!(params.get("w").unwrap(), &w);
}

#[test]
fn adam_requires_exact_gradient_coverage() {
    let mut params = store_with(&[("a", Tensor::scalar(1.0)), ("b", Tensor::scalar(1.0))]);
    let mut adam = Adam::new(AdamConfig::default());
    assert!(adam
        .step(&mut params, &grads(&[("a", Tensor::scalar(1.0))]))
        .is_err());
    assert!(adam
        .step(
            &mut params,
            &grads(&[
                ("a", Tensor::scalar(1.0)),
                ("b", Tensor::scalar(1.0)),
                ("c", Tensor::scalar(1.0))
            ])
        )
        .is_err());
    params.freeze("b").unwrap();
    adam.step(&mut params, &grads(&[("a", Tensor::scalar(1.0))]))
        .unwrap();
    assert_eq!(params.get("b").unwrap().item(), 1.0);
}

fn loss_value(kind: LossKind, preds: &[f64], labels: &[f64]) -> dml_core::Result<f64> {
    let store = ParameterStore::new();
    let mut g = Graph::new(&store);
    let p = g.leaf(Tensor::column(preds)).unwrap();
    let l = task_loss(&mut g, kind, p, labels)?;
    Ok(g.value(l).item())
}

#[test]
fn bce_at_half_is_ln_two() {
    let l = loss_value(LossKind::BinaryCrossEntropy, &[0.5], &[1.0]).unwrap();
    assert!(close(l, std::f64::consts::LN_2, 1e-12));
}

#[test]
fn squared_error_of_exact_prediction_is_zero() {
    assert_eq!(
        loss_value(LossKind::SquaredError, &[1.5, -2.0], &[1.5, -2.0]).unwrap(),
        0.0
    );
}

#[test]
fn batch_losses_match_formulas() {
    let preds: [f64; 4] = [0.9, 0.2, 0.6, 1e-12];
    let labels = [1.0, 0.0, 0.0, 1.0];
    let want_bce = -preds
        .iter()
        .zip(labels)
        .map(|(&p, y)| {
            let p = p.clamp(1e-7, 1.0 - 1e-7);
            y * p.ln() + (1.0 - y) * (1.0 - p).ln()
        })
        .sum::<f64>()
        / 4.0;
    assert!(close(
        loss_value(LossKind::BinaryCrossEntropy, &preds, &labels).unwrap(),
        want_bce,
        1e-12
    ));
    let targets = [4.0, 1.0, 3.5, 2.0];
    let want_se = preds
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / 4.0;
    assert!(close(
        loss_value(LossKind::SquaredError, &preds, &targets).unwrap(),
        want_se,
        1e-12
    ));
}

#[test]
fn bce_rejects_non_binary_labels() {
    assert!(loss_value(LossKind::BinaryCrossEntropy, &[0.5, 0.5], &[1.0, 2.0]).is_err());
    assert!(loss_value(LossKind::SquaredError, &[0.5], &[1.0, 2.0]).is_err());
}

#[test]
fn init_depends_only_on_seed_and_name() {
    let mut a = ParameterStore::new();
    let mut pb = ParamBuilder::new(&mut a, 3);
    pb.glorot("x", 4, 5).unwrap();
    pb.glorot("y", 4, 5).unwrap();
    let mut b = ParameterStore::new();
    let mut pb = ParamBuilder::new(&mut b, 3);
    pb.zeros("unrelated", 2, 2).unwrap();
    pb.glorot("y", 4, 5).unwrap();
    assert_eq!(a.get("y").unwrap(), b.get("y").unwrap());
    assert_ne!(a.get("x").unwrap(), a.get("y").unwrap());
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let mut store = ParameterStore::new();
    let mut pb = ParamBuilder::new(&mut store, 11);
    pb.glorot("layer/W", 7, 3).unwrap();
    pb.uniform("embed", 5, 8, 0.05).unwrap();
    store
        .insert(
            "odd",
            Tensor::row(&[f64::MIN_POSITIVE, -0.0, 1e308, 1.0 / 3.0]),
        )
        .unwrap();
    store.freeze("embed").unwrap();
    let text = encode_checkpoint(&store);
    assert!(text.starts_with(CHECKPOINT_MAGIC));
    let back = decode_checkpoint(&text).unwrap();
    for (name, t) in store.iter() {
        let u = back.get(name).unwrap();
        assert_eq!(t.shape(), u.shape());
        assert!(
            t.data()
                .iter()
                .zip(u.data())
                .all(|(a, b)| a.to_bits() == b.to_bits()),
            "{name}"
        );
        assert_eq!(store.is_frozen(name), back.is_frozen(name));
    }
    assert_eq!(back.len(), store.len());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.ckpt");
    save_checkpoint(&store, &path).unwrap();
    assert_eq!(encode_checkpoint(&load_checkpoint(&path).unwrap()), text);
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    assert!(decode_checkpoint("not a checkpoint").is_err());
    let mut store = ParameterStore::new();
    store.insert("w", Tensor::row(&[1.0, 2.0])).unwrap();
    let text = encode_checkpoint(&store);
    let truncated: String = text
        .lines()
        .take(text.lines().count() - 1)
        .collect::<Vec<_>>()
        .join("\n");
    assert!(decode_checkpoint(&truncated).is_err());
    assert!(decode_checkpoint(&text.replace("w 1 2", "w 1 3")).is_err());
    assert!(decode_checkpoint(&text.replace("v1", "v9")).is_err());
}
