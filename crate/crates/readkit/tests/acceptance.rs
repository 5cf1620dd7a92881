//! Acceptance suite. Each criterion prints one PASS/FAIL line; the process
//! exits nonzero if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use readkit::checkpoint::Checkpoint;
use readkit::squad::{read_squad, SquadVersion};
use readkit::trainer::{TrainConfig, Trainer, LAST_CHECKPOINT, SUMMARY_FILE};
use readkit_core::batch::Batch;
use readkit_core::eval::{evaluate_golds, exact_match_score, f1_score, PredictionSet};
use readkit_core::models::{best_span, best_span_exhaustive, Model, ModelKind};
use readkit_core::nn::{
    bi_attention, self_attention, uni_attention, uni_attention_single, Bilinear, BiRnn, Builder, CellKind, Ctx,
    Embedding, Highway, Linear, Mode, ReduceKind, SequenceReducer, Similarity, SimilarityKind, StackedBiRnn,
};
use readkit_core::text::{char_substring, tokenize, DataInstance};
use readkit_core::train::EmaShadow;
use readkit_core::{Graph, ParamStore, Tensor, Var};

/// Central-difference step for gradient checks.
const FD_EPS: f64 = 1e-6;
/// Maximum relative error between analytic and numeric gradients.
const FD_TOL: f64 = 1e-4;
/// Denominator floor of the relative error.
const FD_FLOOR: f64 = 1e-3;
/// Random instances per layer in the gradient checks.
const FD_INSTANCES: u64 = 20;
const FD_BUDGET: Duration = Duration::from_secs(120);
const PAD_TOL: f64 = 1e-5;
const EVAL_TOL: f64 = 1e-9;
const TRAIN_EPOCHS: u64 = 150;
const TRAIN_BUDGET: Duration = Duration::from_secs(300);
const TRAIN_EMA: f64 = 0.9;
const INITIAL_LOSS_TOL: f64 = 0.15;
const RESUME_TOL: f64 = 1e-6;
const EMA_TOL: f64 = 1e-9;
const FUZZ_STRINGS: usize = 10_000;

fn main() {
    let criteria: [(&str, fn()); 7] = [
        ("gradient checks", gradient_checks),
        ("masking", masking),
        ("decoder and evaluator oracles", oracles),
        ("trainability", trainability),
        ("determinism", determinism),
        ("ema", ema),
        ("reader", reader),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !only.is_empty() && !only.iter().any(|o| *o == n.to_string()) {
            continue;
        }
        let t = Instant::now();
        let ok = catch_unwind(AssertUnwindSafe(f)).is_ok();
        if !ok {
            failed += 1;
        }
        println!(
            "criterion {n} ({name}): {} [{:.1}s]",
            if ok { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Row-major 0/1 mask with `lengths[b]` leading ones per row.
fn length_mask(lengths: &[usize], t: usize) -> Tensor<f64> {
    let data = lengths
        .iter()
        .flat_map(|&n| (0..t).map(move |i| if i < n { 1.0 } else { 0.0 }))
        .collect();
    Tensor::new(vec![lengths.len(), t], data).unwrap()
}

fn random_lengths(rng: &mut ChaCha8Rng, b: usize, t: usize) -> Vec<usize> {
    let mut l: Vec<usize> = (0..b).map(|_| rng.random_range(1..=t)).collect();
    l[0] = t;
    l
}

// ---------------------------------------------------------------- criterion 1

type Layer = Box<dyn Fn(&mut Ctx<f64>, &[Var]) -> Var>;

/// Scalar loss: the layer output projected onto fixed random weights.
fn fd_loss(store: &ParamStore<f64>, layer: &Layer, inputs: &[Tensor<f64>], proj_seed: u64) -> (Graph<f64>, Var, Vec<Var>) {
    let mut cx = Ctx::new(store, Mode::Eval, 0);
    let vars: Vec<Var> = inputs.iter().map(|x| cx.g.variable(x.clone())).collect();
    let y = layer(&mut cx, &vars);
    let shape = cx.g.shape(y).to_vec();
    let w = cx.g.constant(rand_tensor(&mut ChaCha8Rng::seed_from_u64(proj_seed), &shape));
    let p = cx.g.mul(y, w).unwrap();
    let l = cx.g.sum(p);
    (cx.g, l, vars)
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FD_FLOOR)
}

/// Worst relative error over every trainable parameter entry and every
/// input entry.
fn fd_check(store: &mut ParamStore<f64>, layer: &Layer, mut inputs: Vec<Tensor<f64>>, proj_seed: u64) -> f64 {
    store.zero_grads();
    let (mut g, l, vars) = fd_loss(store, layer, &inputs, proj_seed);
    g.backward(l).unwrap();
    g.accumulate_param_grads(store);
    let input_grads: Vec<Tensor<f64>> = vars
        .iter()
        .zip(&inputs)
        .map(|(&v, x)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(x.shape().to_vec())))
        .collect();
    let value = |store: &ParamStore<f64>, inputs: &[Tensor<f64>]| {
        let (g, l, _) = fd_loss(store, layer, inputs, proj_seed);
        g.value(l).item()
    };
    let mut worst = 0.0f64;
    let ids: Vec<_> = store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
    for id in ids {
        let analytic = store.get(id).grad.clone();
        for i in 0..analytic.numel() {
            let orig = store.get(id).value.data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + FD_EPS;
            let up = value(store, &inputs);
            store.get_mut(id).value.data_mut()[i] = orig - FD_EPS;
            let down = value(store, &inputs);
            store.get_mut(id).value.data_mut()[i] = orig;
            worst = worst.max(rel_err(analytic.data()[i], (up - down) / (2.0 * FD_EPS)));
        }
    }
    for (k, grad) in input_grads.iter().enumerate() {
        for i in 0..grad.numel() {
            let orig = inputs[k].data()[i];
            inputs[k].data_mut()[i] = orig + FD_EPS;
            let up = value(store, &inputs);
            inputs[k].data_mut()[i] = orig - FD_EPS;
            let down = value(store, &inputs);
            inputs[k].data_mut()[i] = orig;
            worst = worst.max(rel_err(grad.data()[i], (up - down) / (2.0 * FD_EPS)));
        }
    }
    worst
}

/// Builds a layer with fresh parameters and random inputs for one seed.
type Case = fn(&mut ParamStore<f64>, &mut ChaCha8Rng) -> (Layer, Vec<Tensor<f64>>);

fn case_embedding(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) -> (Layer, Vec<Tensor<f64>>) {
    let rows = rng.random_range(3..7);
    let table = rand_tensor(rng, &[rows, 3]);
    let emb = Embedding::from_matrix(&mut Builder::new(store, rng), table, None).unwrap();
    let (b, t) = (2, rng.random_range(2..5));
    let ids: Vec<usize> = (0..b * t).map(|_| rng.random_range(1..rows)).collect();
    (Box::new(move |cx, _| emb.forward(cx, &ids, &[b, t]).unwrap()), vec![])
}

fn rnn_case(kind: CellKind, store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) -> (Layer, Vec<Tensor<f64>>) {
    let (b, t, d, h) = (2, rng.random_range(2..5), 3, 2);
    let rnn = BiRnn::new(&mut Builder::new(store, rng), kind, d, h).unwrap();
    let m = length_mask(&random_lengths(rng, b, t), t);
    let layer: Layer = Box::new(move |cx, x| {
        let out = rnn.forward(cx, x[0], &m).unwrap();
        let f = cx.g.concat(&[out.final_forward, out.final_backward], 1).unwrap();
        let f = cx.g.reshape(f, vec![b, 1, 2 * h]).unwrap();
        cx.g.concat(&[out.outputs, f], 1).unwrap()
    });
    (layer, vec![rand_tensor(rng, &[b, t, d])])
}

fn case_bilstm(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) -> (Layer, Vec<Tensor<f64>>) {
    rnn_case(CellKind::Lstm, store, rng)
}

fn case_bigru(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) -> (Layer, Vec<Tensor<f64>>) {
    rnn_case(CellKind::Gru, store, rng)
}

fn case_highway(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) -> (Layer, Vec<Tensor<f64>>) {
    let hw = Highway::new(&mut Builder::new(store, rng), 4, 2).unwrap();
    (Box::new(move |cx, x| hw.forward(cx, x[0]).unwrap()), vec![rand_tensor(rng, &[2, 3, 4])])
}

fn similarity_case(kind: SimilarityKind, store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) -> (Layer, Vec<Tensor<f64>>) {
    let sim = Similarity::new(&mut Builder::new(store, rng), kind, 3).unwrap();
    let (t, j) = (rng.random_range(2..5), rng.random_range(2..4));
    let inputs = vec![rand_tensor(rng, &[2, t, 3]), rand_tensor(rng, &[2, j, 3])];
    (Box::new(move |cx, x| sim.forward(cx, x[0], x[1]).unwrap()), inputs)
}

fn case_trilinear(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) -> (Layer, Vec<Tensor<f64>>) {
    similarity_case(SimilarityKind::TriLinear, store, rng)
}

fn case_mlp_similarity(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) -> (Layer, Vec<Tensor<f64>>) {
    similarity_case(SimilarityKind::Mlp { hidden: 4 }, store, rng)
}

fn case_bi_attention(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) -> (Layer, Vec<Tensor<f64>>) {
    let sim = Similarity::new(&mut Builder::new(store, rng), SimilarityKind::TriLinear, 3).unwrap();
    let (t, j) = (rng.random_range(2..5), rng.random_range(2..4));
    let cm = length_mask(&random_lengths(rng, 2, t), t);
    let qm = length_mask(&random_lengths(rng, 2, j), j);
    let inputs = vec![rand_tensor(rng, &[2, t, 3]), rand_tensor(rng, &[2, j, 3])];
    let layer: Layer = Box::new(move |cx, x| {
        let s = sim.forward(cx, x[0], x[1]).unwrap();
        bi_attention(cx, s, x[0], x[1], &cm, &qm).unwrap()
    });
    (layer, inputs)
}

fn case_uni_attention(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) -> (Layer, Vec<Tensor<f64>>) {
    let sim = Similarity::new(&mut Builder::new(store, rng), SimilarityKind::Mlp { hidden: 3 }, 3).unwrap();
    let t = rng.random_range(2..5);
    let m = length_mask(&random_lengths(rng, 2, t), t);
    let inputs = vec![rand_tensor(rng, &[2, 2, 3]), rand_tensor(rng, &[2, t, 3]), rand_tensor(rng, &[2, t, 2])];
    let layer: Layer = Box::new(move |cx, x| uni_attention(cx, &sim, x[0], x[1], x[2], &m).unwrap());
    (layer, inputs)
}

fn case_self_attention(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) -> (Layer, Vec<Tensor<f64>>) {
    let sim = Similarity::new(&mut Builder::new(store, rng), SimilarityKind::TriLinear, 3).unwrap();
    let t = rng.random_range(3..6);
    let mut lengths = random_lengths(rng, 2, t);
    lengths[1] = lengths[1].max(2);
    let m = length_mask(&lengths, t);
    let layer: Layer = Box::new(move |cx, x| self_attention(cx, &sim, x[0], &m, true).unwrap());
    (layer, vec![rand_tensor(rng, &[2, t, 3])])
}

fn case_bilinear_pointer(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) -> (Layer, Vec<Tensor<f64>>) {
    let (bil, lin) = {
        let mut b = Builder::new(store, rng);
        (Bilinear::new(&mut b.sub("bil"), 4, 3).unwrap(), Linear::new(&mut b.sub("lin"), 3, 3, true).unwrap())
    };
    let t = rng.random_range(2..6);
    let m = length_mask(&random_lengths(rng, 2, t), t);
    let inputs = vec![rand_tensor(rng, &[2, t, 4]), rand_tensor(rng, &[2, 3])];
    let layer: Layer = Box::new(move |cx, x| {
        let q = lin.forward(cx, x[1]).unwrap();
        let logits = bil.forward(cx, x[0], q).unwrap();
        let lp = cx.g.masked_log_softmax(logits, &m).unwrap();
        // padded entries hold the fill value; only real positions count
        let keep = cx.g.constant(m.clone());
        cx.g.mul(lp, keep).unwrap()
    });
    (layer, inputs)
}

fn gradient_checks() {
    let cases: [(&str, Case); 11] = [
        ("embedding", case_embedding),
        ("bilstm", case_bilstm),
        ("bigru", case_bigru),
        ("highway", case_highway),
        ("trilinear similarity", case_trilinear),
        ("mlp similarity", case_mlp_similarity),
        ("bi-attention", case_bi_attention),
        ("uni-attention", case_uni_attention),
        ("self-attention", case_self_attention),
        ("bilinear pointer", case_bilinear_pointer),
        ("weighted-sum reducer", |store, rng| {
            let red = SequenceReducer::new(&mut Builder::new(store, rng), ReduceKind::WeightedSum, 3).unwrap();
            let t = rng.random_range(2..5);
            let m = length_mask(&random_lengths(rng, 2, t), t);
            (Box::new(move |cx, x| red.forward(cx, x[0], &m).unwrap()), vec![rand_tensor(rng, &[2, t, 3])])
        }),
    ];
    let start = Instant::now();
    let mut ok = true;
    for (name, case) in cases {
        let mut worst = 0.0f64;
        for seed in 0..FD_INSTANCES {
            let mut store = ParamStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let (layer, inputs) = case(&mut store, &mut rng);
            worst = worst.max(fd_check(&mut store, &layer, inputs, seed));
        }
        println!("  {name:<22} worst relative error {worst:.2e}");
        ok &= worst < FD_TOL;
    }
    let elapsed = start.elapsed();
    println!("  gradient checks took {:.1}s", elapsed.as_secs_f64());
    assert!(ok, "relative error above {FD_TOL}");
    assert!(elapsed < FD_BUDGET);
}

// ---------------------------------------------------------------- criterion 2

fn softmax_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..200 {
        let (b, t) = (rng.random_range(1..4), rng.random_range(1..9));
        let logits = rand_tensor(&mut rng, &[b, t]).map(|x| 20.0 * x);
        let mut mask = Tensor::new(vec![b, t], (0..b * t).map(|_| rng.random_bool(0.6) as u8 as f64).collect()).unwrap();
        mask.data_mut()[..t].iter_mut().for_each(|m| *m = 0.0);
        let mut g = Graph::<f64>::new();
        let x = g.constant(logits.clone());
        let p = g.masked_softmax(x, &mask).unwrap();
        let lp = g.masked_log_softmax(x, &mask).unwrap();
        // masked logits may hold anything, including huge values
        let mut garbage = logits.clone();
        for (v, m) in garbage.data_mut().iter_mut().zip(mask.data()) {
            if *m == 0.0 {
                *v = rng.random_range(-1e6..1e6);
            }
        }
        let y = g.constant(garbage);
        let q = g.masked_softmax(y, &mask).unwrap();
        let (p, lp, q) = (g.value(p), g.value(lp), g.value(q));
        for r in 0..b {
            let row = r * t..(r + 1) * t;
            let live = mask.data()[row.clone()].contains(&1.0);
            let total: f64 = p.data()[row.clone()].iter().sum();
            assert!(if live { (total - 1.0).abs() < 1e-12 } else { total == 0.0 });
            for i in row {
                if mask.data()[i] == 0.0 {
                    assert_eq!(p.data()[i], 0.0);
                } else {
                    assert!((lp.data()[i].exp() - p.data()[i]).abs() < 1e-12);
                }
                assert_eq!(p.data()[i], q.data()[i]);
            }
        }
    }
}

/// A sequence layer applied to `[B, T, d]` input with a length mask.
type SeqLayer = Box<dyn Fn(&mut Ctx<f64>, Var, &Tensor<f64>) -> Var>;

/// Runs `layer` on tight and garbage-padded input; compares real positions.
fn padding_gap(store: &ParamStore<f64>, layer: &SeqLayer, rng: &mut ChaCha8Rng, d: usize) -> f64 {
    let (b, t, extra) = (3, 5, 4);
    let lengths = random_lengths(rng, b, t);
    let x = rand_tensor(rng, &[b, t, d]);
    let mut wide = rand_tensor(rng, &[b, t + extra, d]).map(|v| 50.0 * v);
    for r in 0..b {
        for k in 0..lengths[r] {
            for c in 0..d {
                wide.data_mut()[(r * (t + extra) + k) * d + c] = x.data()[(r * t + k) * d + c];
            }
        }
    }
    let run = |x: Tensor<f64>, tt: usize| {
        let mut cx = Ctx::new(store, Mode::Eval, 0);
        let v = cx.g.constant(x);
        let y = layer(&mut cx, v, &length_mask(&lengths, tt));
        cx.g.value(y).clone()
    };
    let (a, w) = (run(x, t), run(wide, t + extra));
    let width = a.numel() / (b * t);
    let mut gap = 0.0f64;
    for r in 0..b {
        for k in 0..lengths[r] {
            for c in 0..width {
                let u = a.data()[(r * t + k) * width + c];
                let v = w.data()[(r * (t + extra) + k) * width + c];
                gap = gap.max((u - v).abs());
            }
        }
    }
    gap
}

fn sequence_layers_padding_invariant() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let d = 4;
    let (lstm, gru, stacked, tri, dot, mlp, red_max, red_mean, red_ws, hw) = {
        let mut b = Builder::new(&mut store, &mut rng);
        (
            BiRnn::lstm(&mut b.sub("lstm"), d, 3).unwrap(),
            BiRnn::gru(&mut b.sub("gru"), d, 3).unwrap(),
            StackedBiRnn::new(&mut b.sub("stack"), CellKind::Lstm, d, 2, 3).unwrap(),
            Similarity::new(&mut b.sub("tri"), SimilarityKind::TriLinear, d).unwrap(),
            Similarity::new(&mut b.sub("dot"), SimilarityKind::DotProduct { scaled: true }, d).unwrap(),
            Similarity::new(&mut b.sub("mlp"), SimilarityKind::Mlp { hidden: 5 }, d).unwrap(),
            SequenceReducer::new(&mut b.sub("rmax"), ReduceKind::Max, d).unwrap(),
            SequenceReducer::new(&mut b.sub("rmean"), ReduceKind::Mean, d).unwrap(),
            SequenceReducer::new(&mut b.sub("rws"), ReduceKind::WeightedSum, d).unwrap(),
            Highway::new(&mut b.sub("hw"), d, 2).unwrap(),
        )
    };
    let u = rand_tensor(&mut rng, &[3, 2, d]);
    let qm = length_mask(&[2, 1, 2], 2);
    let u2 = u.clone();
    let (qm2, u3) = (qm.clone(), u.clone());
    // reducers return one vector per row; broadcast it over time to reuse
    // the position-wise comparison
    fn spread(cx: &mut Ctx<f64>, v: Var, t: usize) -> Var {
        let s = cx.g.shape(v).to_vec();
        let v = cx.g.reshape(v, vec![s[0], 1, s[1]]).unwrap();
        let z = cx.g.constant(Tensor::zeros(vec![s[0], t, s[1]]));
        cx.g.add(z, v).unwrap()
    }
    let layers: Vec<(&str, SeqLayer)> = vec![
        ("bilstm", Box::new(move |cx, x, m| lstm.forward(cx, x, m).unwrap().outputs)),
        ("bilstm final state", Box::new({
            let l = BiRnn::lstm(&mut Builder::new(&mut ParamStore::<f64>::new(), &mut ChaCha8Rng::seed_from_u64(1)), d, 3).unwrap();
            move |cx, x, m| {
                let o = l.forward(cx, x, m).unwrap();
                let f = cx.g.concat(&[o.final_forward, o.final_backward], 1).unwrap();
                let t = cx.g.shape(x)[1];
                spread(cx, f, t)
            }
        })),
        ("bigru", Box::new(move |cx, x, m| gru.forward(cx, x, m).unwrap().outputs)),
        ("stacked bilstm", Box::new(move |cx, x, m| stacked.forward(cx, x, m, |_, v| Ok(v)).unwrap())),
        ("bi-attention", Box::new(move |cx, x, m| {
            let uv = cx.g.constant(u.clone());
            let s = tri.forward(cx, x, uv).unwrap();
            bi_attention(cx, s, x, uv, m, &qm).unwrap()
        })),
        ("uni-attention", Box::new(move |cx, x, m| {
            let q = cx.g.constant(u2.clone());
            let _ = &qm2;
            let a = uni_attention(cx, &mlp, q, x, x, m).unwrap();
            let t = cx.g.shape(x)[1];
            let a = cx.g.reshape(a, vec![3, 2 * d]).unwrap();
            spread(cx, a, t)
        })),
        ("single-query attention", Box::new({
            let q = u3.clone();
            let sim = Similarity::new(&mut Builder::new(&mut ParamStore::<f64>::new(), &mut ChaCha8Rng::seed_from_u64(2)), SimilarityKind::DotProduct { scaled: false }, d).unwrap();
            move |cx, x, m| {
                let qv = cx.g.constant(q.clone());
                let q0 = cx.g.slice(qv, 1, 0, 1).unwrap();
                let q0 = cx.g.reshape(q0, vec![3, d]).unwrap();
                let a = uni_attention_single(cx, &sim, q0, x, x, m).unwrap();
                let t = cx.g.shape(x)[1];
                spread(cx, a, t)
            }
        })),
        ("self-attention", Box::new(move |cx, x, m| self_attention(cx, &dot, x, m, false).unwrap())),
        ("max reducer", Box::new(move |cx, x, m| {
            let r = red_max.forward(cx, x, m).unwrap();
            let t = cx.g.shape(x)[1];
            spread(cx, r, t)
        })),
        ("mean reducer", Box::new(move |cx, x, m| {
            let r = red_mean.forward(cx, x, m).unwrap();
            let t = cx.g.shape(x)[1];
            spread(cx, r, t)
        })),
        ("weighted-sum reducer", Box::new(move |cx, x, m| {
            let r = red_ws.forward(cx, x, m).unwrap();
            let t = cx.g.shape(x)[1];
            spread(cx, r, t)
        })),
        ("highway", Box::new(move |cx, x, _| hw.forward(cx, x).unwrap())),
    ];
    let mut ok = true;
    for (name, layer) in &layers {
        let mut worst = 0.0f64;
        for _ in 0..10 {
            worst = worst.max(padding_gap(&store, layer, &mut rng, d));
        }
        println!("  {name:<24} padding gap {worst:.1e}");
        ok &= worst <= PAD_TOL;
    }
    assert!(ok);
}

fn models_padding_invariant() {
    let toy = common::toy(6, 23);
    for kind in [ModelKind::Bidaf, ModelKind::Drqa] {
        let mut cfg = common::small_config(kind);
        cfg.hidden_size = 6;
        let vectors = toy.vectors.matrix.cast::<f64>();
        let m = Model::<f64>::new(cfg, vectors, toy.tags.len(), 3).unwrap();
        let refs: Vec<&DataInstance> = toy.instances[..3].iter().collect();
        let tight = Batch::<f64>::from_instances(&refs, &toy.vocab, Some(&toy.tags), (0, 0));
        let wide = Batch::<f64>::from_instances(&refs, &toy.vocab, Some(&toy.tags), (tight.context_len + 9, tight.question_len + 5));
        let a = m.forward(&tight, Mode::Eval, 0).unwrap();
        let w = m.forward(&wide, Mode::Eval, 0).unwrap();
        let mut gap = (a.loss.unwrap() - w.loss.unwrap()).abs();
        for r in 0..3 {
            for k in 0..tight.context_lengths[r] {
                for (x, y) in [(&a.start_log_probs, &w.start_log_probs), (&a.end_log_probs, &w.end_log_probs)] {
                    gap = gap.max((x.data()[r * tight.context_len + k] - y.data()[r * wide.context_len + k]).abs());
                }
            }
        }
        println!("  {kind:?} model padding gap {gap:.1e}");
        assert!(gap <= PAD_TOL);
    }
}

fn masking() {
    softmax_invariants();
    sequence_layers_padding_invariant();
    models_padding_invariant();
}

// ---------------------------------------------------------------- criterion 3

/// (gold answers, prediction, exact match, F1), worked out by hand.
fn evaluator_fixture() -> Vec<(Vec<&'static str>, Option<&'static str>, f64, f64)> {
    vec![
        (vec!["Denver Broncos"], Some("Denver Broncos"), 1.0, 1.0),
        (vec!["the Broncos"], Some("Broncos"), 1.0, 1.0),
        (vec!["Carolina Panthers"], Some("Panthers"), 0.0, 2.0 / 3.0),
        (vec!["Santa Clara, California"], Some("Santa Clara"), 0.0, 0.8),
        (vec!["1990", "1990s"], Some("the 1990s"), 1.0, 1.0),
        (vec!["gold"], Some("silver"), 0.0, 0.0),
        (vec!["an apple"], Some("A apple."), 1.0, 1.0),
        (vec!["New York City", "NYC"], Some("New York"), 0.0, 0.8),
        (vec!["Saint-Saëns"], Some("saint-saëns"), 1.0, 1.0),
        (vec!["three"], Some(""), 0.0, 0.0),
        (vec!["red green blue"], Some("blue green red"), 0.0, 1.0),
        (vec!["the the cat"], Some("cat"), 1.0, 1.0),
        (vec!["New England Patriots"], Some("Patriots of New England"), 0.0, 6.0 / 7.0),
        (vec!["50"], Some("50 yards"), 0.0, 2.0 / 3.0),
        (vec!["$5 million"], Some("5 million"), 1.0, 1.0),
        (vec!["U.S. Army"], Some("US Army"), 1.0, 1.0),
        (vec!["win win"], Some("win"), 0.0, 2.0 / 3.0),
        (vec!["win"], Some("win win win"), 0.0, 0.5),
        (vec!["Paris", "the city of Paris"], Some("city of Paris"), 1.0, 1.0),
        (vec!["Beyoncé"], Some("BEYONCÉ"), 1.0, 1.0),
        (vec!["quick brown fox"], Some("slow brown dog"), 0.0, 1.0 / 3.0),
        (vec!["Super Bowl 50"], Some("Super  Bowl\t50"), 1.0, 1.0),
        (vec!["Richard Nixon", "Nixon", "President Nixon"], Some("President Richard Nixon"), 0.0, 0.8),
        (vec!["a"], Some("the"), 1.0, 1.0),
        (vec!["Lisbon"], None, 0.0, 0.0),
    ]
}

fn oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..100 {
        let t = rng.random_range(1..=12);
        let len = rng.random_range(1..=t);
        let max_len = rng.random_range(1..=t);
        // coarse values so ties are common
        let mut draw = || (0..t).map(|_| -(rng.random_range(0..6) as f64) / 2.0).collect::<Vec<f64>>();
        let (s, e) = (draw(), draw());
        assert_eq!(best_span(&s, &e, len, max_len), best_span_exhaustive(&s, &e, len, max_len));
    }

    let fixture = evaluator_fixture();
    assert_eq!(fixture.len(), 25);
    let mut golds = Vec::new();
    let mut preds = PredictionSet::new();
    for (i, (answers, pred, em, f1)) in fixture.iter().enumerate() {
        let qid = format!("q{i:02}");
        let answers: Vec<String> = answers.iter().map(|a| a.to_string()).collect();
        if let Some(p) = pred {
            let got_em = answers.iter().any(|g| exact_match_score(p, g)) as u8 as f64;
            let got_f1 = answers.iter().map(|g| f1_score(p, g)).fold(0.0, f64::max);
            assert_eq!(got_em, *em, "{qid}");
            assert!((got_f1 - f1).abs() < EVAL_TOL, "{qid}: {got_f1} vs {f1}");
            preds.insert(qid.clone(), p.to_string());
        }
        golds.push((qid, answers));
    }
    let r = evaluate_golds(&golds, &preds);
    // 12 exact matches; F1 sums to 17.9 + 25/21
    assert!((r.exact_match - 48.0).abs() < EVAL_TOL, "{}", r.exact_match);
    assert!((r.f1 - 4.0 * (17.9 + 25.0 / 21.0)).abs() < EVAL_TOL, "{}", r.f1);
    assert_eq!(r.missing, ["q24"]);
}

// ---------------------------------------------------------------- criterion 4

fn trainability() {
    let toy = common::toy(20, 7);
    let config = TrainConfig {
        epochs: 0,
        batch_size: 5,
        patience: 0,
        ema_decay: TRAIN_EMA,
        seed: 7,
        ..TrainConfig::default()
    };
    let mut ok = true;
    for kind in [ModelKind::Bidaf, ModelKind::Drqa] {
        let start = Instant::now();
        let mut t = common::trainer(&toy, kind, config.clone(), None);

        let refs: Vec<&DataInstance> = toy.instances.iter().collect();
        let batch = Batch::<f32>::from_instances(&refs, &toy.vocab, Some(&toy.tags), (0, 0));
        let loss = t.model.forward(&batch, Mode::Eval, 0).unwrap().loss.unwrap();
        let uniform = batch.context_lengths.iter().map(|&n| 2.0 * (n as f64).ln()).sum::<f64>() / batch.size as f64;
        let initial_ok = (loss - uniform).abs() / uniform < INITIAL_LOSS_TOL;
        println!("  {kind:?} initial loss {loss:.3}, uniform {uniform:.3}");

        let mut reached = None;
        for epoch in 1..=TRAIN_EPOCHS {
            t.config.epochs = epoch;
            t.train_and_evaluate(&toy.instances, &toy.instances).unwrap();
            let (r, _) = t.evaluate(&toy.instances).unwrap();
            if r.exact_match == 100.0 {
                reached = Some(epoch);
                break;
            }
            if start.elapsed() > TRAIN_BUDGET {
                break;
            }
        }
        let elapsed = start.elapsed();
        println!("  {kind:?} reached EM 100 at epoch {reached:?} in {:.1}s", elapsed.as_secs_f64());
        ok &= initial_ok && reached.is_some() && elapsed < TRAIN_BUDGET;
    }
    assert!(ok);
}

// ---------------------------------------------------------------- criterion 5

fn bits(t: &Trainer<f32>) -> Vec<u32> {
    t.model.store.values().iter().flat_map(|v| v.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>()).collect()
}

fn determinism() {
    let toy = common::toy(10, 51);
    let config = |epochs| TrainConfig {
        epochs,
        batch_size: 4,
        patience: 0,
        ema_decay: TRAIN_EMA,
        seed: 9,
        ..TrainConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, epochs| {
        let save = dir.path().join(name);
        let mut t = common::trainer(&toy, ModelKind::Drqa, config(epochs), Some(save.clone()));
        t.train_and_evaluate(&toy.instances, &toy.instances).unwrap();
        (t, save)
    };
    let (a, a_dir) = run("a", 2);
    let (b, b_dir) = run("b", 2);
    let summary = |d: &Path| std::fs::read(d.join(SUMMARY_FILE)).unwrap();
    assert!(!summary(&a_dir).is_empty());
    assert_eq!(summary(&a_dir), summary(&b_dir), "summaries differ");
    assert_eq!(bits(&a), bits(&b));

    let ckpt = a.checkpoint();
    let bytes = ckpt.to_bytes().unwrap();
    let back = Checkpoint::<f32>::from_bytes(&bytes, Path::new("memory")).unwrap();
    assert_eq!(back.to_bytes().unwrap(), bytes);
    for (x, y) in ckpt.tensors.iter().zip(&back.tensors) {
        assert_eq!(x.shape(), y.shape());
        assert!(x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    let (_, c_dir) = run("c", 1);
    let mut resumed = common::trainer(&toy, ModelKind::Drqa, config(2), Some(dir.path().join("d")));
    resumed.resume(&c_dir.join(LAST_CHECKPOINT)).unwrap();
    resumed.train_and_evaluate(&toy.instances, &toy.instances).unwrap();
    let gap = a
        .model
        .store
        .values()
        .iter()
        .zip(resumed.model.store.values())
        .flat_map(|(x, y)| x.data().iter().zip(y.data().to_vec()).map(|(p, q)| (p - q).abs() as f64).collect::<Vec<_>>())
        .fold(0.0f64, f64::max);
    println!("  resume vs uninterrupted max parameter gap {gap:.1e}");
    assert!(gap <= RESUME_TOL);
    assert_eq!(resumed.state.global_step, a.state.global_step);
}

// ---------------------------------------------------------------- criterion 6

fn ema() {
    let mu = 0.9;
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let ids: Vec<_> = (0..3).map(|i| store.add(format!("p{i}"), rand_tensor(&mut rng, &[2, 3])).unwrap()).collect();
    let start: Vec<Tensor<f64>> = store.values();
    let mut shadow = EmaShadow::new(mu, &store).unwrap();
    let targets: Vec<Tensor<f64>> = ids.iter().map(|_| rand_tensor(&mut rng, &[2, 3])).collect();
    for (&id, t) in ids.iter().zip(&targets) {
        store.get_mut(id).value = t.clone();
    }
    for _ in 0..50 {
        shadow.update(&store);
    }
    let decay = mu.powi(50);
    for ((s, x0), c) in shadow.tensors().iter().zip(&start).zip(&targets) {
        let s = s.as_ref().unwrap();
        for i in 0..s.numel() {
            let want = c.data()[i] + decay * (x0.data()[i] - c.data()[i]);
            assert!((s.data()[i] - want).abs() < EMA_TOL);
        }
    }
    let live: Vec<Vec<u64>> = store.values().iter().map(|t| t.data().iter().map(|x| x.to_bits()).collect()).collect();
    shadow.swap(&mut store);
    assert!(store.values().iter().zip(shadow.tensors()).all(|(v, s)| v != s.as_ref().unwrap()));
    shadow.swap(&mut store);
    let after: Vec<Vec<u64>> = store.values().iter().map(|t| t.data().iter().map(|x| x.to_bits()).collect()).collect();
    assert_eq!(live, after);
}

// ---------------------------------------------------------------- criterion 7

fn random_text(rng: &mut ChaCha8Rng) -> String {
    const POOL: &[char] = &[
        'a', 'b', 'Z', '7', '0', ' ', ' ', '\t', '\n', '-', ',', '.', '\'', '"', '(', ')', '$', '%', 'é', 'ü', 'ß',
        '東', '京', 'ل', '–', '—', '★', '👍', '\u{a0}', '\u{2009}', '_', '/', '³', '₂', 'Ω',
    ];
    let n = rng.random_range(0..40);
    (0..n)
        .map(|_| {
            if rng.random_bool(0.1) {
                char::from_u32(rng.random_range(0x20..0x3000)).unwrap_or('x')
            } else {
                POOL[rng.random_range(0..POOL.len())]
            }
        })
        .collect()
}

fn tokenizer_fuzz() {
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    for _ in 0..FUZZ_STRINGS {
        let text = random_text(&mut rng);
        let tokens = tokenize(&text);
        let mut prev_end = 0;
        for tok in &tokens {
            assert!(tok.char_start >= prev_end && tok.char_end > tok.char_start, "{text:?}");
            assert_eq!(char_substring(&text, tok.char_start, tok.char_end), tok.text, "{text:?}");
            assert!(!tok.text.chars().any(char::is_whitespace));
            let between = char_substring(&text, prev_end, tok.char_start);
            assert!(between.chars().all(char::is_whitespace), "{text:?}");
            prev_end = tok.char_end;
        }
        assert!(char_substring(&text, prev_end, text.chars().count()).chars().all(char::is_whitespace));
    }
}

fn reader() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/squad_50.json");
    let out = read_squad(&path, SquadVersion::V1).unwrap();
    assert_eq!(out.skipped, 0, "{:?}", out.warnings);
    let mut by_qid: BTreeMap<&str, &DataInstance> = BTreeMap::new();
    for inst in &out.instances {
        by_qid.insert(&inst.qid, inst);
        let (s, e) = inst.span().unwrap();
        let covered = char_substring(
            &inst.context,
            inst.context_tokens[s].char_start,
            inst.context_tokens[e].char_end,
        );
        assert!(covered.contains(inst.answer_text.trim()), "{}: {covered:?}", inst.qid);
        inst.validate().unwrap();
    }
    assert_eq!(by_qid.len(), 50);
    let multi = by_qid.values().filter(|i| i.gold_answers.len() > 1).count();
    assert!(multi >= 10);
    tokenizer_fuzz();
}
