//! Phase-order suggestions for unseen kernels.
//!
//! Three strategies share one evaluation harness: nearest neighbours in
//! feature space, uniformly random reference entries, and random walks over
//! a pass-transition graph (IterGraph) built from the reference orders.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{Backend, KernelCase};
use crate::catalog::{PassId, PhaseOrder};
use crate::error::{Error, Result};
use crate::explorer::{measure_baseline, KnowledgeBase, OrderEvaluator, Tolerance};
use crate::irfeat::{cosine_distance, FeatureVector};
use crate::results::{geometric_mean, round6, Export};

#[derive(Debug, Clone, PartialEq)]
pub struct RefEntry {
    pub kernel_id: String,
    pub features: FeatureVector,
    pub order: PhaseOrder,
}

/// Reference programs with their best orders, in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReferenceSet {
    entries: Vec<RefEntry>,
}

impl ReferenceSet {
    pub fn new(entries: Vec<RefEntry>) -> Result<Self> {
        let mut ids = HashSet::new();
        for e in &entries {
            if !ids.insert(e.kernel_id.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate reference kernel {}",
                    e.kernel_id
                )));
            }
            if e.features.is_zero() {
                return Err(Error::InvalidArgument(format!(
                    "reference kernel {} has an all-zero feature vector",
                    e.kernel_id
                )));
            }
        }
        Ok(ReferenceSet { entries })
    }

    /// Entries in kernel-id order.
    pub fn from_kb(kb: &KnowledgeBase) -> Result<Self> {
        ReferenceSet::new(
            kb.entries
                .iter()
                .map(|(id, e)| RefEntry {
                    kernel_id: id.clone(),
                    features: e.feature_vector.clone(),
                    order: e.best_order.clone(),
                })
                .collect(),
        )
    }

    pub fn entries(&self) -> &[RefEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, kernel_id: &str) -> Option<&RefEntry> {
        self.entries.iter().find(|e| e.kernel_id == kernel_id)
    }

    pub fn without(&self, kernel_id: &str) -> ReferenceSet {
        ReferenceSet {
            entries: self
                .entries
                .iter()
                .filter(|e| e.kernel_id != kernel_id)
                .cloned()
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Suggestion {
    pub kernel_id: String,
    pub order: PhaseOrder,
    pub distance: f64,
}

/// The orders of the `k` reference entries nearest to `query` by cosine
/// distance. Ties keep insertion order; repeated orders keep only their
/// first (nearest) occurrence.
pub fn suggest_knn(query: &FeatureVector, refset: &ReferenceSet, k: usize) -> Result<Vec<Suggestion>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if refset.is_empty() {
        return Err(Error::InvalidArgument("empty reference set".into()));
    }
    let mut ranked = refset
        .entries
        .iter()
        .map(|e| Ok((cosine_distance(query, &e.features)?, e)))
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0));
    ranked.truncate(k);
    let mut seen = HashSet::new();
    Ok(ranked
        .into_iter()
        .filter(|(_, e)| seen.insert(&e.order))
        .map(|(d, e)| Suggestion {
            kernel_id: e.kernel_id.clone(),
            order: e.order.clone(),
            distance: d,
        })
        .collect())
}

/// Measures suggestions against one kernel, remembering every distinct order
/// it has seen and the kernel's unoptimized time.
pub struct SuggestionEvaluator<'a> {
    evaluator: OrderEvaluator<'a>,
    baseline: f64,
    speedups: HashMap<PhaseOrder, f64>,
}

impl<'a> SuggestionEvaluator<'a> {
    pub fn new(kernel: &'a KernelCase, backend: &'a dyn Backend, tol: Tolerance) -> Result<Self> {
        let baseline = measure_baseline(kernel, 1, backend)?;
        Ok(SuggestionEvaluator {
            evaluator: OrderEvaluator::new(kernel, backend, tol),
            baseline,
            speedups: HashMap::new(),
        })
    }

    pub fn baseline(&self) -> f64 {
        self.baseline
    }

    /// Speedup of `order` over the unoptimized build; 0 when it fails.
    pub fn speedup(&mut self, order: &PhaseOrder) -> Result<f64> {
        if let Some(s) = self.speedups.get(order) {
            return Ok(*s);
        }
        let s = match self.evaluator.time(order)? {
            Some(t) => self.baseline / t,
            None => 0.0,
        };
        self.speedups.insert(order.clone(), s);
        Ok(s)
    }

    /// Best-so-far speedup after each of the first `max_evals` suggestions,
    /// floored at 1.0 (the unoptimized build is always available). When
    /// fewer suggestions exist, the last point is repeated.
    pub fn curve(&mut self, suggestions: &[PhaseOrder], max_evals: usize) -> Result<Vec<f64>> {
        let mut best = 1.0f64;
        let mut out = Vec::with_capacity(max_evals);
        for n in 0..max_evals {
            if let Some(order) = suggestions.get(n) {
                best = best.max(self.speedup(order)?);
            }
            out.push(best);
        }
        Ok(out)
    }

    /// Artifacts actually executed; repeats are served from cache.
    pub fn fresh_runs(&self) -> usize {
        self.evaluator.fresh_runs()
    }
}

/// One-shot form of [`SuggestionEvaluator::curve`].
pub fn evaluate_suggestions(
    kernel: &KernelCase,
    suggestions: &[PhaseOrder],
    backend: &dyn Backend,
    max_evals: usize,
    tol: Tolerance,
) -> Result<Vec<f64>> {
    if suggestions.is_empty() {
        return Err(Error::InvalidArgument("no suggestions to evaluate".into()));
    }
    SuggestionEvaluator::new(kernel, backend, tol)?.curve(suggestions, max_evals)
}

/// Per-count geometric mean, over `trials` random draws of `k` distinct
/// reference entries, of the best-so-far speedup curve.
pub fn random_baseline<R: Rng + ?Sized>(
    refset: &ReferenceSet,
    eval: &mut SuggestionEvaluator<'_>,
    k: usize,
    trials: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if k == 0 || k > refset.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must be in 1..={}",
            refset.len()
        )));
    }
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    let mut log_sums = vec![0.0f64; k];
    for _ in 0..trials {
        let picks: Vec<PhaseOrder> = sample(rng, refset.len(), k)
            .into_iter()
            .map(|i| refset.entries[i].order.clone())
            .collect();
        for (acc, s) in log_sums.iter_mut().zip(eval.curve(&picks, k)?) {
            *acc += s.ln();
        }
    }
    Ok(log_sums.iter().map(|s| (s / trials as f64).exp()).collect())
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Node {
    Start,
    Pass(PassId),
}

/// Weighted pass-transition graph built from reference orders.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterGraph {
    edges: BTreeMap<Node, BTreeMap<Node, u32>>,
    length_samples: Vec<usize>,
}

impl IterGraph {
    pub fn edges(&self) -> &BTreeMap<Node, BTreeMap<Node, u32>> {
        &self.edges
    }

    pub fn weight(&self, from: &Node, to: &Node) -> u32 {
        self.edges
            .get(from)
            .and_then(|m| m.get(to))
            .copied()
            .unwrap_or(0)
    }

    pub fn length_samples(&self) -> &[usize] {
        &self.length_samples
    }

    pub fn total_weight(&self) -> u64 {
        self.edges
            .values()
            .flat_map(|m| m.values())
            .map(|&w| w as u64)
            .sum()
    }
}

/// Counts `START -> p1` and every adjacent pair `p_i -> p_{i+1}` over all
/// reference orders except `leave_out`'s. Empty orders carry no transitions
/// and are skipped.
pub fn build_itergraph(refset: &ReferenceSet, leave_out: Option<&str>) -> IterGraph {
    let mut g = IterGraph::default();
    for e in &refset.entries {
        if Some(e.kernel_id.as_str()) == leave_out || e.order.is_empty() {
            continue;
        }
        let passes = e.order.passes();
        let mut prev = Node::Start;
        for p in passes {
            let next = Node::Pass(p.clone());
            *g.edges.entry(prev).or_default().entry(next.clone()).or_insert(0) += 1;
            prev = next;
        }
        g.length_samples.push(passes.len());
    }
    g
}

/// Random walk from START with weight-proportional steps. The target length
/// is drawn from the graph's length samples; the walk stops early at a node
/// without successors.
pub fn sample_itergraph<R: Rng + ?Sized>(graph: &IterGraph, rng: &mut R) -> PhaseOrder {
    if graph.length_samples.is_empty() {
        return PhaseOrder::empty();
    }
    let target = graph.length_samples[rng.gen_range(0..graph.length_samples.len())];
    let mut node = Node::Start;
    let mut passes = Vec::with_capacity(target);
    while passes.len() < target {
        let Some(succ) = graph.edges.get(&node).filter(|m| !m.is_empty()) else {
            break;
        };
        let total: u32 = succ.values().sum();
        let mut pick = rng.gen_range(0..total);
        let mut chosen = None;
        for (n, &w) in succ {
            if pick < w {
                chosen = Some(n);
                break;
            }
            pick -= w;
        }
        node = chosen.expect("pick below total weight").clone();
        if let Node::Pass(p) = &node {
            passes.push(p.clone());
        }
    }
    PhaseOrder::new(passes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Knn,
    Random,
    Itergraph,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Knn => "knn",
            Method::Random => "random",
            Method::Itergraph => "itergraph",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LooConfig {
    pub k_max: usize,
    pub trials: usize,
    pub seed: u64,
    pub tol: Tolerance,
}

/// Geometric-mean speedup per method and evaluation count.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LooTable {
    pub curves: BTreeMap<Method, Vec<f64>>,
}

impl LooTable {
    pub fn curve(&self, method: Method) -> &[f64] {
        self.curves.get(&method).map_or(&[], Vec::as_slice)
    }
}

impl Export for LooTable {
    fn to_csv(&self) -> Result<String> {
        let mut out = String::from("method,eval_count,geomean_speedup\n");
        for (m, curve) in &self.curves {
            for (i, v) in curve.iter().enumerate() {
                out.push_str(&format!("{},{},{:.6}\n", m.name(), i + 1, v));
            }
        }
        Ok(out)
    }

    fn to_json(&self) -> Result<String> {
        let rounded: BTreeMap<&str, Vec<f64>> = self
            .curves
            .iter()
            .map(|(m, c)| (m.name(), c.iter().map(|v| round6(*v)).collect()))
            .collect();
        let mut s = serde_json::to_string_pretty(&rounded).map_err(|e| Error::json("loo table", e))?;
        s.push('\n');
        Ok(s)
    }
}

/// Per-kernel curves for all three methods, with the kernel's own entry
/// excluded from every method.
pub fn leave_one_out_kernel(
    refset: &ReferenceSet,
    kernel: &KernelCase,
    backend: &dyn Backend,
    config: &LooConfig,
    rng: &mut ChaCha8Rng,
) -> Result<BTreeMap<Method, Vec<f64>>> {
    let own = refset.get(&kernel.id).ok_or_else(|| {
        Error::InvalidArgument(format!("kernel {} missing from reference set", kernel.id))
    })?;
    let others = refset.without(&kernel.id);
    let mut eval = SuggestionEvaluator::new(kernel, backend, config.tol)?;

    let knn: Vec<PhaseOrder> = suggest_knn(&own.features, &others, config.k_max)?
        .into_iter()
        .map(|s| s.order)
        .collect();
    let knn_curve = eval.curve(&knn, config.k_max)?;
    let random_curve = random_baseline(&others, &mut eval, config.k_max, config.trials, rng)?;
    let graph = build_itergraph(refset, Some(&kernel.id));
    let walks: Vec<PhaseOrder> = (0..config.k_max).map(|_| sample_itergraph(&graph, rng)).collect();
    let graph_curve = eval.curve(&walks, config.k_max)?;

    Ok(BTreeMap::from([
        (Method::Knn, knn_curve),
        (Method::Random, random_curve),
        (Method::Itergraph, graph_curve),
    ]))
}

/// Leave-one-out comparison of the three methods over `kernels`, aggregated
/// by geometric mean across kernels at each evaluation count `1..=k_max`.
pub fn leave_one_out(
    refset: &ReferenceSet,
    kernels: &[KernelCase],
    backend: &dyn Backend,
    config: &LooConfig,
) -> Result<LooTable> {
    if kernels.is_empty() {
        return Err(Error::InvalidArgument("no kernels for leave-one-out".into()));
    }
    if config.k_max == 0 || config.k_max + 1 > refset.len() {
        return Err(Error::InvalidArgument(format!(
            "k_max = {} must be in 1..={}",
            config.k_max,
            refset.len().saturating_sub(1)
        )));
    }
    let run = |(i, kernel): (usize, &KernelCase)| {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        leave_one_out_kernel(refset, kernel, backend, config, &mut rng)
    };
    #[cfg(feature = "parallel")]
    let per_kernel: Vec<_> = {
        use rayon::prelude::*;
        kernels.par_iter().enumerate().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let per_kernel: Vec<_> = kernels.iter().enumerate().map(run).collect();
    let per_kernel = per_kernel.into_iter().collect::<Result<Vec<_>>>()?;

    let mut curves = BTreeMap::new();
    for method in [Method::Knn, Method::Random, Method::Itergraph] {
        let curve = (0..config.k_max)
            .map(|n| {
                let values: Vec<f64> = per_kernel.iter().map(|c| c[&method][n]).collect();
                geometric_mean(&values)
            })
            .collect::<Result<Vec<_>>>()?;
        curves.insert(method, curve);
    }
    Ok(LooTable { curves })
}
