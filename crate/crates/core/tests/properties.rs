mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use textkb::autodiff::{ParamStore, Tensor};
use textkb::corpus::{parse_path, serialize_path, PathTriple, Side, TextPath, SEP_ID};
use textkb::evaluation::{bleu_n, mrr_hits, rank_generated, rouge_l, CandidatePool, CompletionQuery, RankingOutcome};
use textkb::graph::{approx_ged, exact_ged, GedConfig, KnowledgeGraph};
use textkb::model::gru::{gru_cell, GruCellParams};
use textkb::model::transformer::{transformer_block, BlockParams};
use textkb::par::Execution;
use textkb::toy;
use textkb::weak_supervision::{cosine, fit_tfidf, match_pairs, MatchConfig};

use common::*;

fn ids() -> impl Strategy<Value = Vec<u32>> {
    prop::collection::vec(6u32..40, 1..4)
}

fn words() -> impl Strategy<Value = String> {
    prop::collection::vec("[a-e]{1,4}", 1..4).prop_map(|w| w.join(" "))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn serialize_parse_round_trip(h in ids(), r in ids(), t in ids()) {
        let p = PathTriple::new(h, r, t).unwrap();
        let s = serialize_path(&p).unwrap();
        prop_assert_eq!(parse_path(&s).unwrap(), p);
    }

    #[test]
    fn parse_never_panics(tokens in prop::collection::vec(0u32..12, 0..20)) {
        if let Ok(p) = parse_path(&tokens) {
            // Anything accepted re-serializes to a parseable sequence.
            let s = serialize_path(&p).unwrap();
            prop_assert_eq!(s[0], SEP_ID);
            prop_assert_eq!(parse_path(&s).unwrap(), p);
        }
    }

    #[test]
    fn tfidf_matches_dense_oracle(corpus in prop::collection::vec(words(), 1..20), n in 1usize..4) {
        let model = fit_tfidf(&corpus, n).unwrap();
        for a in &corpus {
            let va = model.vectorize(a);
            let oa = tfidf_dense(&corpus, a, n);
            let mut lib: Vec<f64> = va.entries().iter().map(|e| e.1).collect();
            let mut ora: Vec<f64> = oa.values().copied().collect();
            lib.sort_by(f64::total_cmp);
            ora.sort_by(f64::total_cmp);
            prop_assert_eq!(lib.len(), ora.len());
            for (x, y) in lib.iter().zip(&ora) {
                prop_assert!((x - y).abs() < 1e-9);
            }
            for b in &corpus {
                let c = cosine(&va, &model.vectorize(b));
                let o = dense_cosine(&oa, &tfidf_dense(&corpus, b, n));
                prop_assert!((c - o).abs() < 1e-9, "{} vs {}", c, o);
            }
        }
    }

    #[test]
    fn match_equals_exhaustive_scan(
        sentences in prop::collection::vec(words(), 1..12),
        paths in prop::collection::vec(words(), 1..12),
        threshold in 0.0f64..1.0,
    ) {
        let cfg = MatchConfig { threshold, ngram: 3 };
        let got = match_pairs(&sentences, &paths, cfg, Execution::Sequential).unwrap();
        let corpus: Vec<String> = sentences.iter().chain(&paths).cloned().collect();
        for (i, s) in sentences.iter().enumerate() {
            let vs = tfidf_dense(&corpus, s, 3);
            let scores: Vec<f64> = paths.iter().map(|p| dense_cosine(&vs, &tfidf_dense(&corpus, p, 3))).collect();
            let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let got_match = got.matches.iter().find(|m| m.sentence == i);
            if (best - threshold).abs() <= 1e-9 {
                continue;
            }
            if best > threshold {
                let m = got_match.expect("oracle matches this sentence");
                prop_assert!((m.score - best).abs() < 1e-9);
                prop_assert!((scores[m.path] - best).abs() < 1e-9);
                // Among exact ties the lowest index wins.
                let first = scores.iter().position(|&x| (x - best).abs() <= 1e-9).unwrap();
                prop_assert_eq!(m.path, first);
            } else {
                prop_assert!(got_match.is_none());
            }
        }
    }

    #[test]
    fn raising_threshold_only_removes_matches(
        sentences in prop::collection::vec(words(), 1..10),
        paths in prop::collection::vec(words(), 1..10),
        lo in 0.0f64..1.0,
        delta in 0.0f64..0.5,
    ) {
        let run = |t| match_pairs(&sentences, &paths, MatchConfig { threshold: t, ngram: 3 }, Execution::Sequential).unwrap();
        let a = run(lo);
        let b = run(lo + delta);
        let sa: BTreeSet<(usize, usize)> = a.matches.iter().map(|m| (m.sentence, m.path)).collect();
        let sb: BTreeSet<(usize, usize)> = b.matches.iter().map(|m| (m.sentence, m.path)).collect();
        prop_assert!(sb.is_subset(&sa));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn every_op_gradient_matches_finite_differences(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for name in OP_NAMES {
            let inst = op_instance(name, &mut rng);
            let err = check_inputs(inst.f.as_ref(), &inst.inputs, seed);
            prop_assert!(err < 1e-4, "{}: {}", name, err);
        }
    }

    #[test]
    fn gru_cell_gradients(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let p = GruCellParams::init(&mut store, "cell", 3, 4, &mut rng);
        // Non-zero bias so its gradient path is exercised from a generic point.
        for v in store.get_mut(p.bias).data.iter_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
        let inputs = vec![random_tensor(&mut rng, &[2, 3]), random_tensor(&mut rng, &[2, 4])];
        let pc = p.clone();
        let f = move |tp: &mut textkb::autodiff::Tape<'_, f64>, v: &[textkb::autodiff::Var]| gru_cell(tp, &pc, v[0], v[1]).unwrap();
        let err = check_module(&mut store, &p.ids(), &f, &inputs, seed, 6);
        prop_assert!(err < 1e-4, "{}", err);
    }

    #[test]
    fn transformer_block_gradients(seed in any::<u64>(), decoder in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let p = BlockParams::init(&mut store, "block", 6, 2, 8, decoder, &mut rng);
        let ids: Vec<_> = store.ids().collect();
        let inputs = vec![random_tensor(&mut rng, &[3, 6]), random_tensor(&mut rng, &[2, 6])];
        let pc = p.clone();
        let f = move |tp: &mut textkb::autodiff::Tape<'_, f64>, v: &[textkb::autodiff::Var]| {
            transformer_block(tp, &pc, v[0], Some(v[1])).unwrap()
        };
        let err = check_module(&mut store, &ids, &f, &inputs, seed, 2);
        prop_assert!(err < 1e-4, "{}", err);
    }
}

fn graph_strategy() -> impl Strategy<Value = KnowledgeGraph> {
    let names = ["a", "b", "c", "d", "e"];
    (
        prop::collection::btree_set(0usize..5, 0..=4),
        prop::collection::vec((0usize..4, 0usize..2, 0usize..4), 0..6),
    )
        .prop_map(move |(nodes, edges)| {
            let nodes: Vec<&str> = nodes.into_iter().map(|i| names[i]).collect();
            let mut g = KnowledgeGraph::default();
            g.nodes = nodes.iter().map(|s| s.to_string()).collect();
            if !nodes.is_empty() {
                for (h, r, t) in edges {
                    let rel = ["r", "s"][r];
                    g.edges.insert((
                        nodes[h % nodes.len()].to_string(),
                        rel.to_string(),
                        nodes[t % nodes.len()].to_string(),
                    ));
                }
            }
            g
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn exact_ged_matches_brute_force(g1 in graph_strategy(), g2 in graph_strategy()) {
        let got = exact_ged(&g1, &g2, &GedConfig::exact_matching()).unwrap();
        prop_assert!(got.exact);
        prop_assert_eq!(got.cost, brute_force_ged(&g1, &g2, &|a, b| a == b));
    }

    #[test]
    fn ged_is_a_metric(g1 in graph_strategy(), g2 in graph_strategy(), g3 in graph_strategy()) {
        let cfg = GedConfig::exact_matching();
        let d = |a: &KnowledgeGraph, b: &KnowledgeGraph| exact_ged(a, b, &cfg).unwrap().cost;
        prop_assert_eq!(d(&g1, &g1), 0);
        prop_assert_eq!(d(&g1, &g2), d(&g2, &g1));
        prop_assert!(d(&g1, &g3) <= d(&g1, &g2) + d(&g2, &g3));
    }

    #[test]
    fn assemble_is_idempotent(triples in prop::collection::vec(("[A-Ca-c ]{1,5}", "[rs]", "[A-Ca-c ]{1,5}"), 0..8)) {
        let tps: Vec<TextPath> = triples
            .into_iter()
            .filter(|(h, _, t)| !h.trim().is_empty() && !t.trim().is_empty())
            .map(|(head, rel, tail)| TextPath { head, rel, tail })
            .collect();
        let g = KnowledgeGraph::assemble(&tps);
        prop_assert_eq!(KnowledgeGraph::assemble(&g.triples()), g);
    }

    #[test]
    fn approx_equals_exact_on_one_chunk(
        pairs in prop::collection::vec((0usize..3, 0usize..2, 0usize..3, 0usize..3, 0usize..2, 0usize..3), 1..5),
        extra in 0usize..4,
    ) {
        let name = |i: usize| ["x", "y", "z"][i].to_string();
        let rel = |i: usize| ["r", "s"][i].to_string();
        let reference: Vec<TextPath> = pairs.iter().map(|&(h, r, t, ..)| TextPath { head: name(h), rel: rel(r), tail: name(t) }).collect();
        let generated: Vec<TextPath> = pairs.iter().map(|&(.., h, r, t)| TextPath { head: name(h), rel: rel(r), tail: name(t) }).collect();
        let cfg = GedConfig::exact_matching();
        let report = approx_ged(&reference, &generated, reference.len() + extra, &cfg, Execution::Sequential).unwrap();
        let whole = exact_ged(&KnowledgeGraph::assemble(&reference), &KnowledgeGraph::assemble(&generated), &cfg).unwrap();
        prop_assert_eq!(report.chunk_values, vec![whole.cost]);
        prop_assert_eq!(report.mean, whole.cost as f64);
    }
}

/// Random ranking case over the bijective toy corpus: a truth tuple, a pool
/// built from random tuples, and a generation that is malformed, verbatim,
/// a corruption, or random.
fn ranking_case(rng: &mut ChaCha8Rng) -> (CompletionQuery, Option<PathTriple>, CandidatePool, Vec<PathTriple>) {
    let corpus = toy::bijective();
    let paths = &corpus.paths;
    let pick = |rng: &mut ChaCha8Rng| paths[rng.gen_range(0..paths.len())].clone();
    let truth = pick(rng);
    let mut pool_paths = vec![truth.clone()];
    for _ in 0..rng.gen_range(1..8) {
        let mut p = pick(rng);
        if rng.gen_bool(0.3) {
            // Cross-combined tuples make corrupted candidates known.
            p = p.with_entity(Side::Head, truth.head.clone());
        }
        pool_paths.push(p);
    }
    let side = if rng.gen_bool(0.5) { Side::Head } else { Side::Tail };
    let generated = match rng.gen_range(0..4) {
        0 => None,
        1 => Some(truth.clone()),
        2 => Some(truth.with_entity(side, pick(rng).entity(side).to_vec())),
        _ => Some(pick(rng)),
    };
    let pool = CandidatePool::build(&pool_paths);
    (CompletionQuery::new(0, truth, side), generated, pool, pool_paths)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn rank_matches_brute_force(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vocab = toy::bijective().vocab;
        let (q, generated, pool, pool_paths) = ranking_case(&mut rng);
        let got = rank_generated(generated.as_ref(), &q, &pool, &vocab).unwrap();
        let known: BTreeSet<Vec<u32>> = pool_paths.iter().map(tuple_key).collect();
        let want = brute_force_rank(&q.truth, q.side, generated.as_ref(), &pool.nodes, &known, &vocab);
        prop_assert_eq!(got.rank, want);
        if generated.is_none() {
            prop_assert_eq!(got.rank, got.candidates_after_filter);
        }
    }

    #[test]
    fn improving_a_rank_never_lowers_mrr(ranks in prop::collection::vec(1usize..50, 1..20), which in any::<prop::sample::Index>()) {
        let outcomes = |r: &[usize]| -> Vec<RankingOutcome> {
            r.iter().enumerate().map(|(i, &rank)| RankingOutcome {
                query_id: i, side: Side::Head, rank, candidates_after_filter: 50, malformed: false,
            }).collect()
        };
        let before = mrr_hits(&outcomes(&ranks)).unwrap();
        let mut better = ranks.clone();
        let i = which.index(better.len());
        better[i] = (better[i] - 1).max(1);
        let after = mrr_hits(&outcomes(&better)).unwrap();
        prop_assert!(after.mrr >= before.mrr);
        prop_assert!(after.hits1 >= before.hits1 && after.hits3 >= before.hits3 && after.hits10 >= before.hits10);
        prop_assert!((0.0..=100.0).contains(&after.mrr));
    }

    #[test]
    fn text_metrics_are_bounded(c in prop::collection::vec(0u8..6, 0..12), r in prop::collection::vec(0u8..6, 0..12), n in 1usize..5) {
        let b = bleu_n(&c, &r, n);
        let l = rouge_l(&c, &r);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&b));
        prop_assert!((0.0..=1.0 + 1e-12).contains(&l));
        if !c.is_empty() {
            prop_assert!((rouge_l(&c, &c) - 1.0).abs() < 1e-12);
            if c.len() >= n {
                prop_assert!((bleu_n(&c, &c, n) - 1.0).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact_in_f64() {
    let mut store: ParamStore<f64> = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    store.add_uniform("w", &[4, 5], 0.7, &mut rng);
    let json = serde_json::to_string(&store.to_entries()).unwrap();
    let back: Vec<textkb::autodiff::ParamEntry<f64>> = serde_json::from_str(&json).unwrap();
    let mut fresh: ParamStore<f64> = ParamStore::new();
    fresh.add("w", Tensor::zeros(&[4, 5]));
    fresh.load_entries(back).unwrap();
    let a = store.get(store.id("w").unwrap()).data.iter().map(|x| x.to_bits());
    let b = fresh.get(fresh.id("w").unwrap()).data.iter().map(|x| x.to_bits());
    assert!(a.eq(b));
}
