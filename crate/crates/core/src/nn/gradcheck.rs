//! Finite-difference checks of parameter gradients through every layer.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::params::ParamStore;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-5;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Projects the layer output onto fixed random weights so every output
/// element contributes to the scalar loss.
fn loss_of(
    store: &ParamStore<f64>,
    f: &impl Fn(&mut Ctx<f64>) -> Var,
) -> (Graph<f64>, Var) {
    let mut cx = Ctx::new(store, Mode::Eval, 0);
    let y = f(&mut cx);
    let shape = cx.g.shape(y).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    let w = cx.g.constant(rand_tensor(&mut rng, shape));
    let p = cx.g.mul(y, w).unwrap();
    let l = cx.g.sum(p);
    (cx.g, l)
}

/// Worst relative error over every trainable parameter entry.
fn worst_param_error(store: &mut ParamStore<f64>, f: impl Fn(&mut Ctx<f64>) -> Var) -> f64 {
    store.zero_grads();
    let (mut g, l) = loss_of(store, &f);
    g.backward(l).unwrap();
    g.accumulate_param_grads(store);
    let ids: Vec<_> = store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
    let mut worst = 0.0f64;
    for id in ids {
        let analytic = store.get(id).grad.clone();
        for i in 0..store.get(id).value.numel() {
            let orig = store.get(id).value.data()[i];
            let mut eval = |delta: f64| {
                store.get_mut(id).value.data_mut()[i] = orig + delta;
                let (g, l) = loss_of(store, &f);
                g.value(l).item()
            };
            let num = (eval(EPS) - eval(-EPS)) / (2.0 * EPS);
            store.get_mut(id).value.data_mut()[i] = orig;
            let a = analytic.data()[i];
            let err = (a - num).abs() / a.abs().max(num.abs()).max(1e-3);
            worst = worst.max(err);
        }
    }
    worst
}

fn setup() -> (ParamStore<f64>, ChaCha8Rng) {
    (ParamStore::new(), ChaCha8Rng::seed_from_u64(77))
}

fn mask(rows: &[usize], t: usize) -> Tensor<f64> {
    let data: Vec<f64> = rows
        .iter()
        .flat_map(|&n| (0..t).map(move |i| if i < n { 1.0 } else { 0.0 }))
        .collect();
    Tensor::new(vec![rows.len(), t], data).unwrap()
}

#[test]
fn linear_and_highway() {
    let (mut store, mut rng) = setup();
    let x = rand_tensor(&mut rng, vec![2, 3, 4]);
    let (lin, hw) = {
        let mut b = Builder::new(&mut store, &mut rng);
        (
            Linear::new(&mut b.sub("lin"), 4, 4, true).unwrap(),
            Highway::new(&mut b.sub("hw"), 4, 2).unwrap(),
        )
    };
    let err = worst_param_error(&mut store, |cx| {
        let xv = cx.g.constant(x.clone());
        let y = lin.forward(cx, xv).unwrap();
        hw.forward(cx, y).unwrap()
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn bilstm_and_bigru() {
    for kind in [CellKind::Lstm, CellKind::Gru] {
        let (mut store, mut rng) = setup();
        let x = rand_tensor(&mut rng, vec![2, 4, 3]);
        let rnn = BiRnn::new(&mut Builder::new(&mut store, &mut rng), kind, 3, 2).unwrap();
        let m = mask(&[4, 2], 4);
        let err = worst_param_error(&mut store, |cx| {
            let xv = cx.g.constant(x.clone());
            let out = rnn.forward(cx, xv, &m).unwrap();
            let f = cx.g.concat(&[out.final_forward, out.final_backward], 1).unwrap();
            let f = cx.g.reshape(f, vec![2, 1, 4]).unwrap();
            cx.g.concat(&[out.outputs, f], 1).unwrap()
        });
        assert!(err < TOL, "{kind:?}: {err}");
    }
}

#[test]
fn trilinear_bi_attention() {
    let (mut store, mut rng) = setup();
    let h = rand_tensor(&mut rng, vec![2, 4, 3]);
    let u = rand_tensor(&mut rng, vec![2, 3, 3]);
    let sim = Similarity::new(
        &mut Builder::new(&mut store, &mut rng),
        SimilarityKind::TriLinear,
        3,
    )
    .unwrap();
    let (cm, qm) = (mask(&[4, 3], 4), mask(&[3, 2], 3));
    let err = worst_param_error(&mut store, |cx| {
        let hv = cx.g.constant(h.clone());
        let uv = cx.g.constant(u.clone());
        let s = sim.forward(cx, hv, uv).unwrap();
        bi_attention(cx, s, hv, uv, &cm, &qm).unwrap()
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn mlp_uni_attention_and_weighted_sum() {
    let (mut store, mut rng) = setup();
    let q = rand_tensor(&mut rng, vec![2, 3]);
    let k = rand_tensor(&mut rng, vec![2, 4, 3]);
    let (sim, red, bil) = {
        let mut b = Builder::new(&mut store, &mut rng);
        (
            Similarity::new(&mut b.sub("sim"), SimilarityKind::Mlp { hidden: 5 }, 3).unwrap(),
            SequenceReducer::new(&mut b.sub("red"), ReduceKind::WeightedSum, 3).unwrap(),
            Bilinear::new(&mut b.sub("bil"), 3, 3).unwrap(),
        )
    };
    let m = mask(&[4, 3], 4);
    let err = worst_param_error(&mut store, |cx| {
        let qv = cx.g.constant(q.clone());
        let kv = cx.g.constant(k.clone());
        let a = uni_attention_single(cx, &sim, qv, kv, kv, &m).unwrap();
        let r = red.forward(cx, kv, &m).unwrap();
        let qr = cx.g.add(a, r).unwrap();
        bil.forward(cx, kv, qr).unwrap()
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn embedding_rows_and_dot_self_attention() {
    let (mut store, mut rng) = setup();
    let table = rand_tensor(&mut rng, vec![5, 3]);
    let (emb, sim) = {
        let mut b = Builder::new(&mut store, &mut rng);
        (
            Embedding::from_matrix(&mut b.sub("emb"), table, None).unwrap(),
            Similarity::new(&mut b.sub("sim"), SimilarityKind::DotProduct { scaled: true }, 3)
                .unwrap(),
        )
    };
    let m = mask(&[3, 2], 3);
    let err = worst_param_error(&mut store, |cx| {
        let x = emb.forward(cx, &[2, 3, 4, 1, 4, 2], &[2, 3]).unwrap();
        self_attention(cx, &sim, x, &m, true).unwrap()
    });
    assert!(err < TOL, "{err}");
}

/// Self-attention against an explicit per-position loop.
#[test]
fn self_attention_matches_loop() {
    let (store, mut rng) = (ParamStore::<f64>::new(), ChaCha8Rng::seed_from_u64(5));
    let x = rand_tensor(&mut rng, vec![1, 4, 2]);
    let m = mask(&[3], 4);
    let mut store2 = store;
    let sim = Similarity::new(
        &mut Builder::new(&mut store2, &mut rng),
        SimilarityKind::DotProduct { scaled: false },
        2,
    )
    .unwrap();
    let mut cx = Ctx::new(&store2, Mode::Eval, 0);
    let xv = cx.g.constant(x.clone());
    let y = self_attention(&mut cx, &sim, xv, &m, true).unwrap();
    let y = cx.g.value(y).clone();
    for i in 0..4 {
        let others: Vec<usize> = (0..3).filter(|&k| k != i).collect();
        let scores: Vec<f64> = others
            .iter()
            .map(|&k| (0..2).map(|d| x.at(&[0, i, d]) * x.at(&[0, k, d])).sum())
            .collect();
        let mx = scores.iter().cloned().fold(f64::MIN, f64::max);
        let z: f64 = scores.iter().map(|s| (s - mx).exp()).sum();
        for d in 0..2 {
            let want: f64 = others
                .iter()
                .zip(&scores)
                .map(|(&k, s)| (s - mx).exp() / z * x.at(&[0, k, d]))
                .sum();
            assert!((y.at(&[0, i, d]) - want).abs() < 1e-12);
        }
    }
}
