//! Independent reference implementations shared by the property tests and
//! the acceptance suite. Each one follows the definition directly and
//! shares no code with the library routine it checks.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use textkb::autodiff::{Gradients, ParamId, ParamStore, Tape, Tensor, Var};
use textkb::corpus::{PathTriple, Side, Vocabulary};
use textkb::graph::KnowledgeGraph;

pub const FD_STEP: f64 = 1e-5;

/// Relative error with a small floor so vanishing gradients compare
/// absolutely.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-3)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    // Keep away from 0 so ReLU kinks are never straddled by the step.
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.gen_range(0.05..1.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub type OpFn = dyn Fn(&mut Tape<'_, f64>, &[Var]) -> Var;

/// `sum(f(inputs) ⊙ w)` for a fixed random weighting `w`, so every output
/// entry contributes a distinct sensitivity.
fn weighted_loss(tape: &mut Tape<'_, f64>, out: Var, seed: u64) -> Var {
    let shape = tape.shape(out).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let w = tape.constant(random_tensor(&mut rng, &shape));
    let m = tape.mul(out, w).unwrap();
    tape.sum(m)
}

fn eval_inputs(f: &OpFn, inputs: &[Tensor<f64>], seed: u64) -> f64 {
    let mut tape = Tape::standalone();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.var(t.clone())).collect();
    let out = f(&mut tape, &vars);
    let l = weighted_loss(&mut tape, out, seed);
    tape.value(l).data[0]
}

/// Max relative error between analytic and central-difference gradients
/// over every input coordinate.
pub fn check_inputs(f: &OpFn, inputs: &[Tensor<f64>], seed: u64) -> f64 {
    let mut tape = Tape::standalone();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.var(t.clone())).collect();
    let out = f(&mut tape, &vars);
    let l = weighted_loss(&mut tape, out, seed);
    tape.backward(l).unwrap();
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).unwrap_or_else(|| Tensor::zeros(&t.shape)))
        .collect();
    let mut worst = 0.0f64;
    for (i, t) in inputs.iter().enumerate() {
        for k in 0..t.data.len() {
            let mut plus = inputs.to_vec();
            plus[i].data[k] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].data[k] -= FD_STEP;
            let numeric = (eval_inputs(f, &plus, seed) - eval_inputs(f, &minus, seed)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[i].data[k], numeric));
        }
    }
    worst
}

pub type ParamFn = dyn Fn(&mut Tape<'_, f64>, &[Var]) -> Var;

fn eval_params(store: &ParamStore<f64>, f: &ParamFn, inputs: &[Tensor<f64>], seed: u64) -> f64 {
    let mut tape = Tape::new(store);
    let vars: Vec<Var> = inputs.iter().map(|t| tape.var(t.clone())).collect();
    let out = f(&mut tape, &vars);
    let l = weighted_loss(&mut tape, out, seed);
    tape.value(l).data[0]
}

/// Like [`check_inputs`] for a module with parameters. Checks every input
/// coordinate and `per_param` sampled coordinates of every parameter.
pub fn check_module(
    store: &mut ParamStore<f64>,
    params: &[ParamId],
    f: &ParamFn,
    inputs: &[Tensor<f64>],
    seed: u64,
    per_param: usize,
) -> f64 {
    let (input_grads, param_grads) = {
        let mut tape = Tape::new(store);
        let vars: Vec<Var> = inputs.iter().map(|t| tape.var(t.clone())).collect();
        let out = f(&mut tape, &vars);
        let l = weighted_loss(&mut tape, out, seed);
        tape.backward(l).unwrap();
        let mut g = Gradients::zeros_like(store);
        tape.accumulate_param_grads(&mut g);
        let ig: Vec<Tensor<f64>> = vars
            .iter()
            .zip(inputs)
            .map(|(&v, t)| tape.grad(v).unwrap_or_else(|| Tensor::zeros(&t.shape)))
            .collect();
        (ig, g)
    };
    let mut worst = 0.0f64;
    for (i, t) in inputs.iter().enumerate() {
        for k in 0..t.data.len() {
            let mut plus = inputs.to_vec();
            plus[i].data[k] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].data[k] -= FD_STEP;
            let numeric =
                (eval_params(store, f, &plus, seed) - eval_params(store, f, &minus, seed)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(input_grads[i].data[k], numeric));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for &id in params {
        let n = store.get(id).data.len();
        for _ in 0..per_param.min(n) {
            let k = rng.gen_range(0..n);
            let orig = store.get(id).data[k];
            store.get_mut(id).data[k] = orig + FD_STEP;
            let lp = eval_params(store, f, inputs, seed);
            store.get_mut(id).data[k] = orig - FD_STEP;
            let lm = eval_params(store, f, inputs, seed);
            store.get_mut(id).data[k] = orig;
            let numeric = (lp - lm) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(param_grads.get(id).data[k], numeric));
        }
    }
    worst
}

/// Character n-grams, written out independently of the library.
pub fn grams(s: &str, n: usize) -> Vec<String> {
    let chars: Vec<char> = s.to_lowercase().chars().collect();
    if chars.is_empty() {
        return vec![];
    }
    if chars.len() < n {
        return vec![chars.iter().collect()];
    }
    (0..=chars.len() - n).map(|i| chars[i..i + n].iter().collect()).collect()
}

/// Dense tf-idf: smoothed idf `ln((1+N)/(1+df)) + 1`, raw counts as tf,
/// then L2 normalization. Keys are the grams themselves.
pub fn tfidf_dense(corpus: &[String], s: &str, n: usize) -> BTreeMap<String, f64> {
    let big_n = corpus.len() as f64;
    let mut df: HashMap<String, f64> = HashMap::new();
    for d in corpus {
        let set: BTreeSet<String> = grams(d, n).into_iter().collect();
        for g in set {
            *df.entry(g).or_insert(0.0) += 1.0;
        }
    }
    let mut v: BTreeMap<String, f64> = BTreeMap::new();
    for g in grams(s, n) {
        if let Some(&d) = df.get(&g) {
            *v.entry(g).or_insert(0.0) += ((1.0 + big_n) / (1.0 + d)).ln() + 1.0;
        }
    }
    let norm: f64 = v.values().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.values_mut() {
            *x /= norm;
        }
    }
    v
}

pub fn dense_cosine(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> f64 {
    a.iter().map(|(g, x)| x * b.get(g).copied().unwrap_or(0.0)).sum()
}

/// Exhaustive GED under unit costs. Enumerates every partial injective map
/// from g1's nodes into g2's nodes; edges follow the map and are compared
/// per ordered node pair.
pub fn brute_force_ged(
    g1: &KnowledgeGraph,
    g2: &KnowledgeGraph,
    node_eq: &dyn Fn(&str, &str) -> bool,
) -> usize {
    let n1: Vec<&String> = g1.nodes.iter().collect();
    let n2: Vec<&String> = g2.nodes.iter().collect();
    let edge_map = |g: &KnowledgeGraph| {
        let mut m: BTreeMap<(String, String), BTreeSet<String>> = BTreeMap::new();
        for (h, r, t) in &g.edges {
            m.entry((h.clone(), t.clone())).or_default().insert(r.clone());
        }
        m
    };
    let (e1, e2) = (edge_map(g1), edge_map(g2));
    let empty = BTreeSet::new();
    let mut best = usize::MAX;
    let mut assign: Vec<Option<usize>> = Vec::new();
    fn rec(
        k: usize,
        assign: &mut Vec<Option<usize>>,
        used: &mut Vec<bool>,
        visit: &mut dyn FnMut(&[Option<usize>]),
        n1: usize,
    ) {
        if k == n1 {
            visit(assign);
            return;
        }
        assign.push(None);
        rec(k + 1, assign, used, visit, n1);
        assign.pop();
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                assign.push(Some(j));
                rec(k + 1, assign, used, visit, n1);
                assign.pop();
                used[j] = false;
            }
        }
    }
    let mut visit = |a: &[Option<usize>]| {
        let mut cost = 0;
        let mut image = vec![false; n2.len()];
        for (i, m) in a.iter().enumerate() {
            match m {
                None => cost += 1,
                Some(j) => {
                    image[*j] = true;
                    if !node_eq(n1[i], n2[*j]) {
                        cost += 1;
                    }
                }
            }
        }
        cost += image.iter().filter(|&&b| !b).count();
        // g1 edges: deleted if an endpoint is deleted, otherwise compared
        // with the labels between the images.
        for ((h, t), labels) in &e1 {
            let hi = n1.iter().position(|n| *n == h).unwrap();
            let ti = n1.iter().position(|n| *n == t).unwrap();
            match (a[hi], a[ti]) {
                (Some(x), Some(y)) => {
                    let other = e2.get(&(n2[x].clone(), n2[y].clone())).unwrap_or(&empty);
                    let common = labels.intersection(other).count();
                    cost += labels.len().max(other.len()) - common;
                }
                _ => cost += labels.len(),
            }
        }
        // g2 edges not reached by any pair of mapped g1 nodes are inserted.
        let preimage = |j: usize| a.iter().position(|m| *m == Some(j));
        for ((h, t), labels) in &e2 {
            let hj = n2.iter().position(|n| *n == h).unwrap();
            let tj = n2.iter().position(|n| *n == t).unwrap();
            match (preimage(hj), preimage(tj)) {
                (Some(x), Some(y)) => {
                    // Pairs with g1 edges were compared above.
                    if !e1.contains_key(&(n1[x].clone(), n1[y].clone())) {
                        cost += labels.len();
                    }
                }
                _ => cost += labels.len(),
            }
        }
        best = best.min(cost);
    };
    let mut used = vec![false; n2.len()];
    rec(0, &mut assign, &mut used, &mut visit, n1.len());
    best
}

/// Brute-force generative ranking: substitute every pool node into the
/// masked slot, drop known corruptions, score all candidates against the
/// probe by cosine over a tf-idf fitted on candidates plus probe, sort, and
/// place the truth after every candidate scoring at least as high.
pub fn brute_force_rank(
    truth: &PathTriple,
    side: Side,
    generated: Option<&PathTriple>,
    nodes: &[Vec<u32>],
    known: &BTreeSet<Vec<u32>>,
    vocab: &Vocabulary,
) -> usize {
    let flat = |p: &PathTriple| {
        let ids: Vec<u32> = p.head.iter().chain(&p.relation).chain(&p.tail).copied().collect();
        vocab.decode_plain(&ids)
    };
    let key = |p: &PathTriple| {
        let mut v = p.head.clone();
        v.push(u32::MAX);
        v.extend(&p.relation);
        v.push(u32::MAX);
        v.extend(&p.tail);
        v
    };
    let mut cands = vec![truth.clone()];
    for node in nodes {
        let c = match side {
            Side::Head => PathTriple {
                head: node.clone(),
                ..truth.clone()
            },
            Side::Tail => PathTriple {
                tail: node.clone(),
                ..truth.clone()
            },
        };
        if c != *truth && !known.contains(&key(&c)) {
            cands.push(c);
        }
    }
    let Some(generated) = generated else {
        return cands.len();
    };
    let mut corpus: Vec<String> = cands.iter().map(flat).collect();
    let probe = flat(generated);
    corpus.push(probe.clone());
    let pv = tfidf_dense(&corpus, &probe, 3);
    let mut scored: Vec<(f64, bool)> = corpus[..cands.len()]
        .iter()
        .enumerate()
        .map(|(i, t)| (dense_cosine(&tfidf_dense(&corpus, t, 3), &pv), i == 0))
        .collect();
    // Pessimistic: among equal scores the truth sorts last.
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let truth_score = scored.iter().find(|s| s.1).unwrap().0;
    let pos = scored.iter().position(|s| s.1).unwrap();
    // Float noise between mathematically equal scores also counts as a tie.
    let ties_after = scored[pos + 1..].iter().filter(|s| (s.0 - truth_score).abs() <= 1e-12).count();
    pos + 1 + ties_after
}

/// Tuple key matching the serialized form used for filtering.
pub fn tuple_key(p: &PathTriple) -> Vec<u32> {
    let mut v = p.head.clone();
    v.push(u32::MAX);
    v.extend(&p.relation);
    v.push(u32::MAX);
    v.extend(&p.tail);
    v
}

/// One randomized instance of a differentiable op: its inputs and a closure
/// applying it.
pub struct OpInstance {
    pub inputs: Vec<Tensor<f64>>,
    pub f: Box<OpFn>,
}

pub const OP_NAMES: [&str; 27] = [
    "matmul",
    "matmul_t",
    "add",
    "add_row",
    "add_row_2d",
    "sub",
    "mul",
    "mul_col",
    "affine",
    "scale",
    "sigmoid",
    "tanh",
    "relu",
    "softmax",
    "log_softmax",
    "cross_entropy",
    "concat_rows",
    "concat_cols",
    "gather",
    "slice_cols",
    "slice_rows",
    "transpose",
    "layer_norm",
    "sum",
    "mean",
    "row_dot",
    "composite",
];

pub fn op_instance(name: &str, rng: &mut ChaCha8Rng) -> OpInstance {
    let m = rng.gen_range(1..=4);
    let n = rng.gen_range(1..=4);
    let k = rng.gen_range(1..=4);
    let t = |rng: &mut ChaCha8Rng, s: &[usize]| random_tensor(rng, s);
    let (inputs, f): (Vec<Tensor<f64>>, Box<OpFn>) = match name {
        "matmul" => (vec![t(rng, &[m, k]), t(rng, &[k, n])], Box::new(|tp, v| tp.matmul(v[0], v[1]).unwrap())),
        "matmul_t" => (vec![t(rng, &[m, k]), t(rng, &[n, k])], Box::new(|tp, v| tp.matmul_t(v[0], v[1]).unwrap())),
        "add" => (vec![t(rng, &[m, n]), t(rng, &[m, n])], Box::new(|tp, v| tp.add(v[0], v[1]).unwrap())),
        "add_row" => (vec![t(rng, &[m, n]), t(rng, &[n])], Box::new(|tp, v| tp.add(v[0], v[1]).unwrap())),
        "add_row_2d" => (vec![t(rng, &[m, n]), t(rng, &[1, n])], Box::new(|tp, v| tp.add(v[0], v[1]).unwrap())),
        "sub" => (vec![t(rng, &[m, n]), t(rng, &[m, n])], Box::new(|tp, v| tp.sub(v[0], v[1]).unwrap())),
        "mul" => (vec![t(rng, &[m, n]), t(rng, &[m, n])], Box::new(|tp, v| tp.mul(v[0], v[1]).unwrap())),
        "mul_col" => (vec![t(rng, &[m, n]), t(rng, &[m, 1])], Box::new(|tp, v| tp.mul_col(v[0], v[1]).unwrap())),
        "affine" => (vec![t(rng, &[m, n])], Box::new(|tp, v| tp.affine(v[0], 1.7, -0.3))),
        "scale" => (vec![t(rng, &[m, n])], Box::new(|tp, v| tp.scale(v[0], 0.7))),
        "sigmoid" => (vec![t(rng, &[m, n])], Box::new(|tp, v| tp.sigmoid(v[0]))),
        "tanh" => (vec![t(rng, &[m, n])], Box::new(|tp, v| tp.tanh(v[0]))),
        "relu" => (vec![t(rng, &[m, n])], Box::new(|tp, v| tp.relu(v[0]))),
        "softmax" => (vec![t(rng, &[m, n])], Box::new(|tp, v| tp.softmax(v[0]))),
        "log_softmax" => (vec![t(rng, &[m, n])], Box::new(|tp, v| tp.log_softmax(v[0]))),
        "cross_entropy" => {
            let classes = n + 1;
            // Class 0 plays the ignored padding id.
            let targets: Vec<u32> = (0..m).map(|_| rng.gen_range(0..classes as u32)).collect();
            (
                vec![t(rng, &[m, classes])],
                Box::new(move |tp, v| tp.cross_entropy(v[0], &targets, Some(0)).unwrap()),
            )
        }
        "concat_rows" => (
            vec![t(rng, &[m, n]), t(rng, &[k, n])],
            Box::new(|tp, v| tp.concat(&[v[0], v[1]], 0).unwrap()),
        ),
        "concat_cols" => (
            vec![t(rng, &[m, n]), t(rng, &[m, k])],
            Box::new(|tp, v| tp.concat(&[v[0], v[1]], 1).unwrap()),
        ),
        "gather" => {
            let rows = m + 1;
            let ids: Vec<u32> = (0..k + 2).map(|_| rng.gen_range(0..rows as u32)).collect();
            (vec![t(rng, &[rows, n])], Box::new(move |tp, v| tp.gather(v[0], &ids).unwrap()))
        }
        "slice_cols" => {
            let cols = n + 1;
            let s = rng.gen_range(0..cols);
            let e = rng.gen_range(s + 1..=cols);
            (vec![t(rng, &[m, cols])], Box::new(move |tp, v| tp.slice_cols(v[0], s, e).unwrap()))
        }
        "slice_rows" => {
            let rows = m + 1;
            let s = rng.gen_range(0..rows);
            let e = rng.gen_range(s + 1..=rows);
            (vec![t(rng, &[rows, n])], Box::new(move |tp, v| tp.slice_rows(v[0], s, e).unwrap()))
        }
        "transpose" => (vec![t(rng, &[m, n])], Box::new(|tp, v| tp.transpose(v[0]))),
        "layer_norm" => {
            let d = n + 1;
            (
                vec![t(rng, &[m, d]), t(rng, &[d]), t(rng, &[d])],
                Box::new(|tp, v| tp.layer_norm(v[0], v[1], v[2], 1e-5).unwrap()),
            )
        }
        "sum" => (vec![t(rng, &[m, n])], Box::new(|tp, v| tp.sum(v[0]))),
        "mean" => (vec![t(rng, &[m, n])], Box::new(|tp, v| tp.mean(v[0]))),
        "row_dot" => (vec![t(rng, &[m, n]), t(rng, &[m, n])], Box::new(|tp, v| tp.row_dot(v[0], v[1]).unwrap())),
        // Reuses one input along several paths so gradient accumulation is
        // exercised too.
        "composite" => (
            vec![t(rng, &[m, n]), t(rng, &[n, n])],
            Box::new(|tp, v| {
                let a = tp.matmul(v[0], v[1]).unwrap();
                let b = tp.tanh(a);
                let c = tp.mul(b, v[0]).unwrap();
                let d = tp.sigmoid(v[0]);
                let e = tp.add(c, d).unwrap();
                tp.log_softmax(e)
            }),
        ),
        other => panic!("unknown op {other}"),
    };
    OpInstance { inputs, f }
}
