//! Browser bindings for the demo page in `www/`.
//!
//! Every export takes and returns plain strings (JSON for structured
//! results) so the page needs no generated glue beyond wasm-bindgen's.

use std::collections::BTreeMap;

use phaseforge::backend::{KernelCase, SimKernelModel, Simulator};
use phaseforge::catalog::{parse_phase_order, random_permutations, PassCatalog};
use phaseforge::explorer::{
    explore, measure_baseline, reduce_order, ExplorationConfig, OrderEvaluator, Tolerance,
};
use phaseforge::irfeat::{cosine_distance, extract_features, parse_ir, FeatureVector};
use phaseforge::results::{permutation_histogram, Histogram};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

type Out<T> = std::result::Result<T, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn to_json(v: &impl Serialize) -> Out<String> {
    serde_json::to_string(v).map_err(err)
}

fn model(json: &str) -> Out<SimKernelModel> {
    let m: SimKernelModel = serde_json::from_str(json).map_err(err)?;
    m.validate().map_err(err)?;
    Ok(m)
}

#[derive(Serialize)]
struct Feature {
    name: &'static str,
    value: f64,
}

pub fn features_json(ir: &str) -> Out<String> {
    let f = extract_features(&parse_ir(ir).map_err(err)?);
    let rows: Vec<Feature> = FeatureVector::NAMES
        .iter()
        .zip(f.values())
        .map(|(name, value)| Feature { name, value: *value })
        .collect();
    to_json(&rows)
}

pub fn distance(ir_a: &str, ir_b: &str) -> Out<f64> {
    let a = extract_features(&parse_ir(ir_a).map_err(err)?);
    let b = extract_features(&parse_ir(ir_b).map_err(err)?);
    cosine_distance(&a, &b).map_err(err)
}

#[derive(Serialize)]
struct Exploration {
    baseline: f64,
    /// Best speedup seen after each evaluation, floored at 1.
    curve: Vec<f64>,
    best_order: String,
    best_speedup: f64,
    reduced_order: String,
    statuses: BTreeMap<String, usize>,
}

pub fn explore_json(model_json: &str, catalog_text: &str, num_sequences: usize, max_len: usize, seed: u64) -> Out<String> {
    let model = model(model_json)?;
    let catalog = PassCatalog::parse(catalog_text).map_err(err)?;
    let sim = Simulator::new().with_noops(catalog.noops().iter().cloned());
    let kernel = KernelCase::simulated("demo", model);
    let config = ExplorationConfig {
        num_sequences,
        max_len,
        seed,
        ..ExplorationConfig::default()
    };
    let baseline = measure_baseline(&kernel, 1, &sim).map_err(err)?;
    let mut records = explore(&kernel, &catalog, &config, &sim).map_err(err)?;

    let (best_order, best_time) = match records.first().filter(|r| r.is_timed_valid()) {
        Some(r) => (r.order.clone(), r.wall_time.unwrap_or(baseline)),
        None => return Err("no valid order found".into()),
    };
    let reduced = reduce_order(&kernel, &best_order, &sim, 0.01, config.tolerance()).map_err(err)?;

    let mut statuses = BTreeMap::new();
    for r in &records {
        *statuses.entry(r.status.name().to_string()).or_insert(0) += 1;
    }
    records.sort_by_key(|r| r.eval_index);
    let mut best = 1.0f64;
    let curve = records
        .iter()
        .map(|r| {
            if let Some(t) = r.wall_time.filter(|_| r.is_timed_valid()) {
                best = best.max(baseline / t);
            }
            best
        })
        .collect();
    to_json(&Exploration {
        baseline,
        curve,
        best_order: best_order.render(),
        best_speedup: baseline / best_time,
        reduced_order: reduced.render(),
        statuses,
    })
}

#[derive(Serialize)]
struct PermutationStudy {
    order: String,
    permutations: usize,
    percent_below_095: f64,
    histogram: Histogram,
}

pub fn permutations_json(model_json: &str, order_text: &str, count: usize, seed: u64, bucket_width: f64) -> Out<String> {
    let model = model(model_json)?;
    let order = parse_phase_order(order_text).map_err(err)?;
    let sim = Simulator::new();
    let kernel = KernelCase::simulated("demo", model);
    let tol = Tolerance::default();
    let best_time = OrderEvaluator::new(&kernel, &sim, tol)
        .time(&order)
        .map_err(err)?
        .ok_or("the order itself fails on this kernel")?;
    let perms = random_permutations(&order, count, &mut ChaCha8Rng::seed_from_u64(seed));
    let records = phaseforge::explorer::explore_orders(&kernel, &perms, tol, &sim).map_err(err)?;
    let histogram = permutation_histogram(&records, best_time, bucket_width).map_err(err)?;
    to_json(&PermutationStudy {
        order: order.render(),
        permutations: perms.len(),
        percent_below_095: histogram.percent_below(0.95),
        histogram,
    })
}

/// Feature table for an IR module: `[{name, value}, ...]`.
#[wasm_bindgen]
pub fn features(ir: &str) -> Result<String, JsError> {
    features_json(ir).map_err(|e| JsError::new(&e))
}

/// Cosine distance between the feature vectors of two IR modules.
#[wasm_bindgen]
pub fn feature_distance(ir_a: &str, ir_b: &str) -> Result<f64, JsError> {
    distance(ir_a, ir_b).map_err(|e| JsError::new(&e))
}

/// Random exploration against a simulated kernel.
#[wasm_bindgen]
pub fn simulate_exploration(model_json: &str, catalog_text: &str, num_sequences: usize, max_len: usize, seed: u64) -> Result<String, JsError> {
    explore_json(model_json, catalog_text, num_sequences, max_len, seed).map_err(|e| JsError::new(&e))
}

/// Speed distribution over rearrangements of one order.
#[wasm_bindgen]
pub fn permutation_study(model_json: &str, order_text: &str, count: usize, seed: u64, bucket_width: f64) -> Result<String, JsError> {
    permutations_json(model_json, order_text, count, seed, bucket_width).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MODEL: &str = r#"{"baseline_time": 1.0, "motifs": [{"passes": "-a -b", "multiplier": 0.5}]}"#;
    const LOOP: &str = "func f {\nentry:\n  condbr body exit\nbody:\n  br entry\nexit:\n  ret\n}\n";

    fn parse(s: &str) -> serde_json::Value {
        serde_json::from_str(s).unwrap()
    }

    #[test]
    fn features_are_named() {
        let v = parse(&features_json(LOOP).unwrap());
        assert_eq!(v.as_array().unwrap().len(), 24);
        assert_eq!(v[0]["name"], "blocks");
        assert_eq!(v[0]["value"], 3.0);
        assert!(features_json("func f {").is_err());
    }

    #[test]
    fn distance_to_self_is_zero() {
        assert!(distance(LOOP, LOOP).unwrap().abs() < 1e-12);
        assert!(distance(LOOP, "").is_err());
    }

    #[test]
    fn exploration_finds_the_motif() {
        let v = parse(&explore_json(MODEL, "a\nb\nc\nnoop:z\n", 300, 6, 1).unwrap());
        assert_eq!(v["reduced_order"], "-a -b");
        let curve = v["curve"].as_array().unwrap();
        assert_eq!(curve.len(), 300);
        assert!(curve.windows(2).all(|w| w[0].as_f64() <= w[1].as_f64()));
        assert!((v["best_speedup"].as_f64().unwrap() - 2.0).abs() < 0.02);
    }

    #[test]
    fn permutations_of_a_motif_degrade() {
        let v = parse(&permutations_json(MODEL, "-a -b -c", 100, 1, 0.05).unwrap());
        assert_eq!(v["permutations"], 6);
        // Only -a -b -c and -c -a -b keep the motif contiguous.
        let below = v["percent_below_095"].as_f64().unwrap();
        assert!((below - 400.0 / 6.0).abs() < 1e-9, "{below}");
        assert!(permutations_json("{}", "-a", 1, 1, 0.05).is_err());
    }
}
