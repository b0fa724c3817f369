//! Knowledge graphs assembled from triples, and graph edit distance.
//!
//! Exact GED is an A* search over node mappings from the first graph onto
//! the second (or deletion). Costs are unit: node and edge insertion,
//! deletion and mismatched substitution all cost 1. The lower bound adds
//! an optimistic node term (remaining nodes minus the largest zero-cost
//! matching among them) and an edge term (remaining edges minus the
//! largest label-compatible matching), both of which can only
//! underestimate.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::TextPath;
use crate::par::Execution;
use crate::weak_supervision::{fit_tfidf, SparseVec, DEFAULT_NGRAM};

pub const DEFAULT_NODE_THRESHOLD: f64 = 0.6;
pub const DEFAULT_CHUNK_SIZE: usize = 10;
pub const DEFAULT_MAX_TOTAL_NODES: usize = 24;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("graphs have {total} nodes together, above the limit of {limit}")]
    TooLarge { total: usize, limit: usize },
    #[error("reference has {reference} triples but generation has {generated}")]
    LengthMismatch { reference: usize, generated: usize },
    #[error("chunk size must be positive")]
    ZeroChunk,
}

/// Lowercases and collapses runs of whitespace.
pub fn canonical(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeGraph {
    pub nodes: BTreeSet<String>,
    pub edges: BTreeSet<(String, String, String)>,
}

impl KnowledgeGraph {
    /// Merges nodes with equal canonical strings and drops duplicate edges.
    pub fn assemble<'a>(triples: impl IntoIterator<Item = &'a TextPath>) -> Self {
        let mut g = KnowledgeGraph::default();
        for t in triples {
            let (h, r, tl) = (canonical(&t.head), canonical(&t.rel), canonical(&t.tail));
            g.nodes.insert(h.clone());
            g.nodes.insert(tl.clone());
            g.edges.insert((h, r, tl));
        }
        g
    }

    pub fn triples(&self) -> Vec<TextPath> {
        self.edges
            .iter()
            .map(|(h, r, t)| TextPath {
                head: h.clone(),
                rel: r.clone(),
                tail: t.clone(),
            })
            .collect()
    }

    /// Number of weakly connected components.
    pub fn components(&self) -> usize {
        let index: HashMap<&str, usize> = self.nodes.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let mut parent: Vec<usize> = (0..self.nodes.len()).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for (h, _, t) in &self.edges {
            let (a, b) = (find(&mut parent, index[h.as_str()]), find(&mut parent, index[t.as_str()]));
            parent[a] = b;
        }
        (0..self.nodes.len()).filter(|&i| find(&mut parent, i) == i).count()
    }

    /// Graphviz rendering.
    pub fn to_dot(&self, name: &str) -> String {
        let esc = |s: &str| s.replace('\\', "\\\\").replace('"', "\\\"");
        let mut out = format!("digraph \"{}\" {{\n", esc(name));
        for n in &self.nodes {
            let _ = writeln!(out, "  \"{}\";", esc(n));
        }
        for (h, r, t) in &self.edges {
            let _ = writeln!(out, "  \"{}\" -> \"{}\" [label=\"{}\"];", esc(h), esc(t), esc(r));
        }
        out.push_str("}\n");
        out
    }
}

/// tf-idf feature vector of a node string.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeFeature {
    pub node: String,
    pub vector: SparseVec,
}

/// Features for every string, fitted on exactly these strings.
pub fn node_features(strings: &[String]) -> Vec<NodeFeature> {
    if strings.is_empty() {
        return Vec::new();
    }
    let model = fit_tfidf(strings, DEFAULT_NGRAM).expect("non-empty corpus");
    strings
        .iter()
        .map(|s| NodeFeature {
            node: s.clone(),
            vector: model.vectorize(s),
        })
        .collect()
}

/// True iff the Euclidean distance between the features is within
/// `threshold`.
pub fn node_match(a: &NodeFeature, b: &NodeFeature, threshold: f64) -> bool {
    a.vector.distance(&b.vector) <= threshold
}

/// How nodes (or relation labels) are judged equal during GED.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Matcher {
    Exact,
    Features { threshold: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GedConfig {
    pub nodes: Matcher,
    pub relations: Matcher,
    pub max_total_nodes: usize,
    /// A* expansions before falling back to an upper bound.
    pub max_expansions: usize,
}

impl Default for GedConfig {
    fn default() -> Self {
        GedConfig {
            nodes: Matcher::Features {
                threshold: DEFAULT_NODE_THRESHOLD,
            },
            relations: Matcher::Exact,
            max_total_nodes: DEFAULT_MAX_TOTAL_NODES,
            max_expansions: 2_000_000,
        }
    }
}

impl GedConfig {
    pub fn exact_matching() -> Self {
        GedConfig {
            nodes: Matcher::Exact,
            ..GedConfig::default()
        }
    }
}

/// Compatibility matrix `eq[i][j]` between two string lists.
fn compat(a: &[String], b: &[String], m: Matcher) -> Vec<Vec<bool>> {
    match m {
        Matcher::Exact => a.iter().map(|x| b.iter().map(|y| x == y).collect()).collect(),
        Matcher::Features { threshold } => {
            let all: Vec<String> = a.iter().chain(b).cloned().collect();
            let f = node_features(&all);
            let (fa, fb) = f.split_at(a.len());
            fa.iter()
                .map(|x| fb.iter().map(|y| node_match(x, y, threshold)).collect())
                .collect()
        }
    }
}

/// Graph in index form: `edges` are `(src, dst, label)` with labels as
/// indices into a shared label space.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IndexedGraph {
    pub n: usize,
    pub edges: Vec<(usize, usize, usize)>,
}

/// Everything the search needs about a pair of graphs.
#[derive(Debug, Clone, PartialEq)]
pub struct GedProblem {
    pub g1: IndexedGraph,
    pub g2: IndexedGraph,
    /// `node_eq[i][j]`: g1 node i substitutes for g2 node j at no cost.
    pub node_eq: Vec<Vec<bool>>,
    /// `label_eq[a][b]` over the shared label space.
    pub label_eq: Vec<Vec<bool>>,
}

impl GedProblem {
    pub fn from_graphs(g1: &KnowledgeGraph, g2: &KnowledgeGraph, cfg: &GedConfig) -> Self {
        let n1: Vec<String> = g1.nodes.iter().cloned().collect();
        let n2: Vec<String> = g2.nodes.iter().cloned().collect();
        let labels: Vec<String> = g1
            .edges
            .iter()
            .chain(&g2.edges)
            .map(|(_, r, _)| r.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let lid: HashMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
        let index = |g: &KnowledgeGraph, names: &[String]| {
            let pos: HashMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
            IndexedGraph {
                n: names.len(),
                edges: g
                    .edges
                    .iter()
                    .map(|(h, r, t)| (pos[h.as_str()], pos[t.as_str()], lid[r.as_str()]))
                    .collect(),
            }
        };
        GedProblem {
            g1: index(g1, &n1),
            g2: index(g2, &n2),
            node_eq: compat(&n1, &n2, cfg.nodes),
            label_eq: compat(&labels, &labels, cfg.relations),
        }
    }
}

/// Maximum bipartite matching size (augmenting paths).
fn max_matching(left: usize, right: usize, ok: impl Fn(usize, usize) -> bool) -> usize {
    fn augment(u: usize, adj: &[Vec<usize>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                if owner[v].is_none_or(|w| augment(w, adj, seen, owner)) {
                    owner[v] = Some(u);
                    return true;
                }
            }
        }
        false
    }
    let adj: Vec<Vec<usize>> = (0..left).map(|u| (0..right).filter(|&v| ok(u, v)).collect()).collect();
    let mut owner = vec![None; right];
    let mut size = 0;
    for u in 0..left {
        let mut seen = vec![false; right];
        if augment(u, &adj, &mut seen, &mut owner) {
            size += 1;
        }
    }
    size
}

/// Edit cost between two label sets on corresponding node pairs.
fn label_set_cost(l1: &[usize], l2: &[usize], label_eq: &[Vec<bool>]) -> usize {
    l1.len().max(l2.len()) - max_matching(l1.len(), l2.len(), |a, b| label_eq[l1[a]][l2[b]])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GedValue {
    pub cost: usize,
    /// False when the search budget ran out and `cost` is an upper bound.
    pub exact: bool,
}

struct Search<'a> {
    p: &'a GedProblem,
    order: Vec<usize>,
    pos: Vec<usize>,
    labels1: HashMap<(usize, usize), Vec<usize>>,
    labels2: HashMap<(usize, usize), Vec<usize>>,
}

const EPS: usize = usize::MAX;

impl<'a> Search<'a> {
    fn new(p: &'a GedProblem) -> Self {
        let mut degree = vec![0usize; p.g1.n];
        for &(u, v, _) in &p.g1.edges {
            degree[u] += 1;
            degree[v] += 1;
        }
        let mut order: Vec<usize> = (0..p.g1.n).collect();
        order.sort_by_key(|&u| (Reverse(degree[u]), u));
        let mut pos = vec![0; p.g1.n];
        for (k, &u) in order.iter().enumerate() {
            pos[u] = k;
        }
        let group = |g: &IndexedGraph| {
            let mut m: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
            for &(u, v, l) in &g.edges {
                m.entry((u, v)).or_default().push(l);
            }
            m
        };
        Search {
            p,
            order,
            pos,
            labels1: group(&p.g1),
            labels2: group(&p.g2),
        }
    }

    fn l1(&self, u: usize, v: usize) -> &[usize] {
        self.labels1.get(&(u, v)).map_or(&[], Vec::as_slice)
    }

    fn l2(&self, x: usize, y: usize) -> &[usize] {
        self.labels2.get(&(x, y)).map_or(&[], Vec::as_slice)
    }

    /// Cost added by mapping the k-th node in search order to `x`, given
    /// the mapping of the earlier nodes.
    fn step_cost(&self, assign: &[usize], x: usize) -> usize {
        let k = assign.len();
        let u = self.order[k];
        let mut c = if x == EPS { 1 } else { usize::from(!self.p.node_eq[u][x]) };
        let pair = |a: usize, b: usize, xa: usize, xb: usize| -> usize {
            if xa == EPS || xb == EPS {
                self.l1(a, b).len()
            } else {
                label_set_cost(self.l1(a, b), self.l2(xa, xb), &self.p.label_eq)
            }
        };
        c += pair(u, u, x, x);
        for (j, &xj) in assign.iter().enumerate() {
            let w = self.order[j];
            c += pair(u, w, x, xj) + pair(w, u, xj, x);
        }
        c
    }

    /// Cost of finishing: unused g2 nodes are inserted with their edges not
    /// yet accounted for.
    fn completion_cost(&self, used: &[bool]) -> usize {
        let nodes = used.iter().filter(|&&b| !b).count();
        let edges = self
            .p
            .g2
            .edges
            .iter()
            .filter(|&&(x, y, _)| !used[x] || !used[y])
            .count();
        nodes + edges
    }

    fn lower_bound(&self, k: usize, used: &[bool]) -> usize {
        let r1: Vec<usize> = self.order[k..].to_vec();
        let r2: Vec<usize> = (0..self.p.g2.n).filter(|&x| !used[x]).collect();
        let node_lb = r1.len().max(r2.len()) - max_matching(r1.len(), r2.len(), |a, b| self.p.node_eq[r1[a]][r2[b]]);
        let e1: Vec<usize> = self
            .p
            .g1
            .edges
            .iter()
            .filter(|&&(u, v, _)| self.pos[u] >= k || self.pos[v] >= k)
            .map(|e| e.2)
            .collect();
        let e2: Vec<usize> = self
            .p
            .g2
            .edges
            .iter()
            .filter(|&&(x, y, _)| !used[x] || !used[y])
            .map(|e| e.2)
            .collect();
        let edge_lb = e1.len().max(e2.len()) - max_matching(e1.len(), e2.len(), |a, b| self.p.label_eq[e1[a]][e2[b]]);
        node_lb + edge_lb
    }

    fn used(&self, assign: &[usize]) -> Vec<bool> {
        let mut used = vec![false; self.p.g2.n];
        for &x in assign {
            if x != EPS {
                used[x] = true;
            }
        }
        used
    }

    /// Greedy complete mapping from a partial one; an upper bound.
    fn greedy_complete(&self, assign: &[usize], g: usize) -> usize {
        let mut assign = assign.to_vec();
        let mut cost = g;
        let mut used = self.used(&assign);
        while assign.len() < self.order.len() {
            let mut best = (self.step_cost(&assign, EPS), EPS);
            for x in (0..self.p.g2.n).filter(|&x| !used[x]) {
                let c = self.step_cost(&assign, x);
                if c < best.0 {
                    best = (c, x);
                }
            }
            cost += best.0;
            if best.1 != EPS {
                used[best.1] = true;
            }
            assign.push(best.1);
        }
        cost + self.completion_cost(&used)
    }

    fn run(&self, max_expansions: usize) -> GedValue {
        let n1 = self.order.len();
        if n1 == 0 {
            return GedValue {
                cost: self.completion_cost(&vec![false; self.p.g2.n]),
                exact: true,
            };
        }
        let mut heap: BinaryHeap<Reverse<(usize, Reverse<usize>, usize, Vec<usize>)>> = BinaryHeap::new();
        let root_used = vec![false; self.p.g2.n];
        heap.push(Reverse((self.lower_bound(0, &root_used), Reverse(0), 0, Vec::new())));
        let mut expansions = 0;
        let mut deepest: Option<(usize, Vec<usize>)> = None;
        while let Some(Reverse((_, _, g, assign))) = heap.pop() {
            let used = self.used(&assign);
            if assign.len() == n1 {
                // Complete states carry their completion cost in `g`.
                return GedValue { cost: g, exact: true };
            }
            if deepest.as_ref().is_none_or(|(_, a)| assign.len() > a.len()) {
                deepest = Some((g, assign.clone()));
            }
            expansions += 1;
            if expansions > max_expansions {
                let (dg, da) = deepest.expect("at least the root");
                return GedValue {
                    cost: self.greedy_complete(&da, dg),
                    exact: false,
                };
            }
            let k = assign.len();
            let options = (0..self.p.g2.n).filter(|&x| !used[x]).chain([EPS]);
            for x in options {
                let c = g + self.step_cost(&assign, x);
                let mut next = assign.clone();
                next.push(x);
                let mut nu = used.clone();
                if x != EPS {
                    nu[x] = true;
                }
                if k + 1 == n1 {
                    let total = c + self.completion_cost(&nu);
                    heap.push(Reverse((total, Reverse(k + 1), total, next)));
                } else {
                    let f = c + self.lower_bound(k + 1, &nu);
                    heap.push(Reverse((f, Reverse(k + 1), c, next)));
                }
            }
        }
        unreachable!("a complete state is always reached")
    }
}

/// Exact GED of an indexed problem (subject to the expansion budget).
pub fn solve(p: &GedProblem, max_expansions: usize) -> GedValue {
    Search::new(p).run(max_expansions)
}

/// Exact GED between two graphs.
pub fn exact_ged(g1: &KnowledgeGraph, g2: &KnowledgeGraph, cfg: &GedConfig) -> Result<GedValue, GraphError> {
    let total = g1.nodes.len() + g2.nodes.len();
    if total > cfg.max_total_nodes {
        return Err(GraphError::TooLarge {
            total,
            limit: cfg.max_total_nodes,
        });
    }
    Ok(solve(&GedProblem::from_graphs(g1, g2, cfg), cfg.max_expansions))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GedReport {
    pub chunk_values: Vec<usize>,
    /// False entries mark chunks whose search budget ran out.
    pub chunk_exact: Vec<bool>,
    pub mean: f64,
    pub chunk_size: usize,
    pub cost_model: String,
}

/// Averages exact GED over consecutive aligned chunks of `chunk_size`
/// triples.
pub fn approx_ged(
    reference: &[TextPath],
    generated: &[TextPath],
    chunk_size: usize,
    cfg: &GedConfig,
    exec: Execution,
) -> Result<GedReport, GraphError> {
    if reference.len() != generated.len() {
        return Err(GraphError::LengthMismatch {
            reference: reference.len(),
            generated: generated.len(),
        });
    }
    if chunk_size == 0 {
        return Err(GraphError::ZeroChunk);
    }
    let pairs: Vec<(&[TextPath], &[TextPath])> = reference.chunks(chunk_size).zip(generated.chunks(chunk_size)).collect();
    let values = exec.map(&pairs, |(r, g)| {
        exact_ged(&KnowledgeGraph::assemble(*r), &KnowledgeGraph::assemble(*g), cfg)
    });
    let values: Vec<GedValue> = values.into_iter().collect::<Result<_, _>>()?;
    let mean = if values.is_empty() {
        0.0
    } else {
        values.iter().map(|v| v.cost as f64).sum::<f64>() / values.len() as f64
    };
    Ok(GedReport {
        chunk_values: values.iter().map(|v| v.cost).collect(),
        chunk_exact: values.iter().map(|v| v.exact).collect(),
        mean,
        chunk_size,
        cost_model: "unit".to_string(),
    })
}
