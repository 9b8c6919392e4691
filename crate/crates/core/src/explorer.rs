//! Design-space exploration over random phase orders.
//!
//! Each candidate is compiled; if its artifact digest was already seen for
//! the kernel, the earlier result is reused. Otherwise the candidate is run
//! once on the small validation input (never timed), and, if its outputs
//! match the reference, once on the measurement input (never used for
//! correctness). The best candidates are then re-timed, re-validated on
//! fresh random inputs, and reduced.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{Artifact, Backend, CompileOutcome, ExecStatus, InputKind, KernelCase};
use crate::catalog::{random_phase_order, PassCatalog, PhaseOrder, DEFAULT_MAX_LEN};
use crate::error::{Error, Result};
use crate::irfeat::FeatureVector;
use crate::results::{CrossMatrix, CrossCell};

/// Candidates compiled per batch; bounds how many artifacts are held at once.
const BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplorationConfig {
    pub num_sequences: usize,
    pub max_len: usize,
    pub seed: u64,
    pub top_k: usize,
    pub final_reps: usize,
    pub final_random_inputs: usize,
    pub rtol: f64,
    pub atol: f64,
}

impl Default for ExplorationConfig {
    fn default() -> Self {
        ExplorationConfig {
            num_sequences: 10_000,
            max_len: DEFAULT_MAX_LEN,
            seed: 0x5eed,
            top_k: 10,
            final_reps: 30,
            final_random_inputs: 30,
            rtol: 0.01,
            atol: 1e-6,
        }
    }
}

impl ExplorationConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("num_sequences", self.num_sequences),
            ("max_len", self.max_len),
            ("top_k", self.top_k),
            ("final_reps", self.final_reps),
            ("final_random_inputs", self.final_random_inputs),
        ] {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be at least 1")));
            }
        }
        if !(0.0..1.0).contains(&self.rtol) {
            return Err(Error::InvalidArgument(format!("rtol {} outside [0, 1)", self.rtol)));
        }
        if !(self.atol >= 0.0 && self.atol.is_finite()) {
            return Err(Error::InvalidArgument(format!("atol {} must be >= 0", self.atol)));
        }
        Ok(())
    }

    pub fn tolerance(&self) -> Tolerance {
        Tolerance {
            rtol: self.rtol,
            atol: self.atol,
        }
    }
}

/// Output-comparison tolerance: `|c - r| <= max(atol, rtol * |r|)` per element.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub rtol: f64,
    pub atol: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance {
            rtol: 0.01,
            atol: 1e-6,
        }
    }
}

pub fn compare_outputs(reference: &[f64], candidate: &[f64], rtol: f64, atol: f64) -> bool {
    reference.len() == candidate.len()
        && reference
            .iter()
            .zip(candidate)
            .all(|(r, c)| (c - r).abs() <= atol.max(rtol * r.abs()))
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum RecordStatus {
    Valid,
    InvalidOutput,
    Timeout,
    Crash,
    BrokenReport,
    NoIr,
    /// Same artifact as an earlier record; its result is copied.
    ReusedFrom(String),
}

impl RecordStatus {
    /// Stable name used in CSV files. `ReusedFrom` drops its digest, which
    /// is stored in the record's digest column.
    pub fn name(&self) -> &'static str {
        match self {
            RecordStatus::Valid => "Valid",
            RecordStatus::InvalidOutput => "InvalidOutput",
            RecordStatus::Timeout => "Timeout",
            RecordStatus::Crash => "Crash",
            RecordStatus::BrokenReport => "BrokenReport",
            RecordStatus::NoIr => "NoIr",
            RecordStatus::ReusedFrom(_) => "ReusedFrom",
        }
    }
}

impl fmt::Display for RecordStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl From<ExecStatus> for RecordStatus {
    fn from(s: ExecStatus) -> Self {
        match s {
            ExecStatus::Valid => RecordStatus::Valid,
            ExecStatus::InvalidOutput => RecordStatus::InvalidOutput,
            ExecStatus::Timeout => RecordStatus::Timeout,
            ExecStatus::Crash => RecordStatus::Crash,
            ExecStatus::BrokenReport => RecordStatus::BrokenReport,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationRecord {
    pub kernel_id: String,
    pub order: PhaseOrder,
    pub artifact_digest: Option<String>,
    pub status: RecordStatus,
    /// Measured seconds; present for `Valid` and for reuses of a valid record.
    pub wall_time: Option<f64>,
    pub eval_index: usize,
}

impl EvaluationRecord {
    /// Whether the record carries a usable timing (fresh or reused).
    pub fn is_timed_valid(&self) -> bool {
        matches!(self.status, RecordStatus::Valid | RecordStatus::ReusedFrom(_))
            && self.wall_time.is_some()
    }

    pub fn is_fresh_execution(&self) -> bool {
        self.artifact_digest.is_some() && !matches!(self.status, RecordStatus::ReusedFrom(_))
    }
}

/// Orders records: timed valid ones ascending by time, then failures; ties
/// and failures by evaluation index.
pub fn sort_records(records: &mut [EvaluationRecord]) {
    records.sort_by(|a, b| {
        let key = |r: &EvaluationRecord| (!r.is_timed_valid(), r.wall_time.unwrap_or(0.0));
        let (fa, ta) = key(a);
        let (fb, tb) = key(b);
        fa.cmp(&fb)
            .then(if fa { std::cmp::Ordering::Equal } else { ta.total_cmp(&tb) })
            .then(a.eval_index.cmp(&b.eval_index))
    });
}

fn par_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Runs the artifact on the validation input and, if correct, times it once
/// on the measurement input.
fn evaluate_fresh(
    kernel: &KernelCase,
    artifact: &Artifact,
    tol: Tolerance,
    backend: &dyn Backend,
) -> Result<(RecordStatus, Option<f64>)> {
    let check = backend.execute(kernel, artifact, InputKind::Validation)?;
    if check.status != ExecStatus::Valid {
        return Ok((check.status.into(), None));
    }
    let outputs = check.outputs.unwrap_or_default();
    if !compare_outputs(&kernel.reference_outputs, &outputs, tol.rtol, tol.atol) {
        return Ok((RecordStatus::InvalidOutput, None));
    }
    let run = {
        let _token = backend.measurement_token();
        backend.execute(kernel, artifact, InputKind::Measurement)?
    };
    Ok(match (run.status, run.wall_time) {
        (ExecStatus::Valid | ExecStatus::InvalidOutput, Some(t)) => (RecordStatus::Valid, Some(t)),
        (status, _) => (status.into(), None),
    })
}

/// Evaluates `orders` in sequence with artifact dedup. Records carry
/// `eval_index` equal to the order's position and are returned sorted.
pub fn explore_orders(
    kernel: &KernelCase,
    orders: &[PhaseOrder],
    tol: Tolerance,
    backend: &dyn Backend,
) -> Result<Vec<EvaluationRecord>> {
    let mut records = Vec::with_capacity(orders.len());
    // digest -> outcome of its first (fresh) evaluation
    let mut seen: HashMap<String, Option<f64>> = HashMap::new();

    for (batch_no, batch) in orders.chunks(BATCH).enumerate() {
        let base = batch_no * BATCH;
        let compiled = par_map(batch, |o| backend.compile(kernel, o));
        let compiled = compiled.into_iter().collect::<Result<Vec<_>>>()?;

        let mut fresh: Vec<&Artifact> = Vec::new();
        let mut fresh_slot: HashMap<&str, usize> = HashMap::new();
        for outcome in &compiled {
            if let CompileOutcome::Ok(a) = outcome {
                if !seen.contains_key(a.digest()) && !fresh_slot.contains_key(a.digest()) {
                    fresh_slot.insert(a.digest(), fresh.len());
                    fresh.push(a);
                }
            }
        }
        let results = par_map(&fresh, |a| evaluate_fresh(kernel, a, tol, backend));
        let results = results.into_iter().collect::<Result<Vec<_>>>()?;

        for (offset, (order, outcome)) in batch.iter().zip(&compiled).enumerate() {
            let eval_index = base + offset;
            let record = match outcome {
                CompileOutcome::OptimizerFailure(_) | CompileOutcome::CodegenFailure(_) => {
                    EvaluationRecord {
                        kernel_id: kernel.id.clone(),
                        order: order.clone(),
                        artifact_digest: None,
                        status: RecordStatus::NoIr,
                        wall_time: None,
                        eval_index,
                    }
                }
                CompileOutcome::Ok(a) => {
                    let digest = a.digest().to_string();
                    let (status, wall_time) = match seen.get(&digest) {
                        Some(time) => (RecordStatus::ReusedFrom(digest.clone()), *time),
                        None => {
                            let (status, time) = results[fresh_slot[a.digest()]].clone();
                            seen.insert(digest.clone(), time);
                            (status, time)
                        }
                    };
                    EvaluationRecord {
                        kernel_id: kernel.id.clone(),
                        order: order.clone(),
                        artifact_digest: Some(digest),
                        status,
                        wall_time,
                        eval_index,
                    }
                }
            };
            records.push(record);
        }
    }
    sort_records(&mut records);
    Ok(records)
}

/// The candidate orders `explore` evaluates. They depend only on the seed and
/// catalog, so every kernel sees the same set.
pub fn candidate_orders(catalog: &PassCatalog, config: &ExplorationConfig) -> Result<Vec<PhaseOrder>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    (0..config.num_sequences)
        .map(|_| random_phase_order(catalog, config.max_len, &mut rng))
        .collect()
}

/// Random-sampling exploration of one kernel.
pub fn explore(
    kernel: &KernelCase,
    catalog: &PassCatalog,
    config: &ExplorationConfig,
    backend: &dyn Backend,
) -> Result<Vec<EvaluationRecord>> {
    config.validate()?;
    let orders = candidate_orders(catalog, config)?;
    explore_orders(kernel, &orders, config.tolerance(), backend)
}

fn random_input_seed(seed: u64, i: usize) -> u64 {
    // splitmix64 step, so consecutive inputs get unrelated seeds.
    let mut z = seed.wrapping_add((i as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn compile_ok(kernel: &KernelCase, order: &PhaseOrder, backend: &dyn Backend) -> Result<Option<Artifact>> {
    Ok(match backend.compile(kernel, order)? {
        CompileOutcome::Ok(a) => Some(a),
        _ => None,
    })
}

/// Mean measurement time of `artifact` over `reps` runs, or `None` if any
/// run fails.
pub fn mean_time(
    kernel: &KernelCase,
    artifact: &Artifact,
    reps: usize,
    backend: &dyn Backend,
) -> Result<Option<f64>> {
    let _token = backend.measurement_token();
    let mut total = 0.0;
    for _ in 0..reps.max(1) {
        let run = backend.execute(kernel, artifact, InputKind::Measurement)?;
        match (run.status, run.wall_time) {
            (ExecStatus::Valid | ExecStatus::InvalidOutput, Some(t)) => total += t,
            _ => return Ok(None),
        }
    }
    Ok(Some(total / reps.max(1) as f64))
}

/// Averaged time of the unoptimized (empty order) build.
pub fn measure_baseline(kernel: &KernelCase, reps: usize, backend: &dyn Backend) -> Result<f64> {
    let failed = || Error::InvalidArgument(format!("baseline build of kernel {} failed", kernel.id));
    let artifact = compile_ok(kernel, &PhaseOrder::empty(), backend)?.ok_or_else(failed)?;
    mean_time(kernel, &artifact, reps, backend)?.ok_or_else(failed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Finalized {
    pub order: PhaseOrder,
    pub mean_time: f64,
    pub eval_index: usize,
}

/// Re-times the `top_k` fastest valid records `final_reps` times each,
/// validates each on `final_random_inputs` fresh inputs against the
/// unoptimized build, and returns the fastest survivor.
pub fn finalize(
    kernel: &KernelCase,
    records: &[EvaluationRecord],
    config: &ExplorationConfig,
    backend: &dyn Backend,
) -> Result<Finalized> {
    let mut ranked: Vec<&EvaluationRecord> = records
        .iter()
        .filter(|r| r.status == RecordStatus::Valid && r.wall_time.is_some())
        .collect();
    ranked.sort_by(|a, b| {
        a.wall_time
            .unwrap()
            .total_cmp(&b.wall_time.unwrap())
            .then(a.eval_index.cmp(&b.eval_index))
    });
    ranked.truncate(config.top_k);
    let none = || Error::NoValidCandidate {
        kernel: kernel.id.clone(),
    };
    if ranked.is_empty() {
        return Err(none());
    }

    let reference = compile_ok(kernel, &PhaseOrder::empty(), backend)?.ok_or_else(|| {
        Error::InvalidArgument(format!("baseline build of kernel {} failed", kernel.id))
    })?;
    let inputs: Vec<InputKind> = (0..config.final_random_inputs)
        .map(|i| InputKind::Random(random_input_seed(config.seed, i)))
        .collect();
    let mut expected = Vec::with_capacity(inputs.len());
    for &input in &inputs {
        let run = backend.execute(kernel, &reference, input)?;
        match (run.status, run.outputs) {
            (ExecStatus::Valid, Some(out)) => expected.push(out),
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "baseline build of kernel {} failed on a random input",
                    kernel.id
                )))
            }
        }
    }

    let mut best: Option<Finalized> = None;
    'candidates: for record in ranked {
        let Some(artifact) = compile_ok(kernel, &record.order, backend)? else {
            continue;
        };
        for (&input, want) in inputs.iter().zip(&expected) {
            let run = backend.execute(kernel, &artifact, input)?;
            let ok = run.status == ExecStatus::Valid
                && run
                    .outputs
                    .as_deref()
                    .is_some_and(|got| compare_outputs(want, got, config.rtol, config.atol));
            if !ok {
                log::debug!("kernel {}: candidate #{} failed random-input validation", kernel.id, record.eval_index);
                continue 'candidates;
            }
        }
        let Some(t) = mean_time(kernel, &artifact, config.final_reps, backend)? else {
            continue;
        };
        if best.as_ref().is_none_or(|b| t < b.mean_time) {
            best = Some(Finalized {
                order: record.order.clone(),
                mean_time: t,
                eval_index: record.eval_index,
            });
        }
    }
    best.ok_or_else(none)
}

/// Compile-validate-measure with a per-digest cache. Used wherever a
/// handful of specific orders must be timed on one kernel.
pub struct OrderEvaluator<'a> {
    kernel: &'a KernelCase,
    backend: &'a dyn Backend,
    tol: Tolerance,
    cache: HashMap<String, Option<f64>>,
    fresh_runs: usize,
}

impl<'a> OrderEvaluator<'a> {
    pub fn new(kernel: &'a KernelCase, backend: &'a dyn Backend, tol: Tolerance) -> Self {
        OrderEvaluator {
            kernel,
            backend,
            tol,
            cache: HashMap::new(),
            fresh_runs: 0,
        }
    }

    /// Measured time of `order`, or `None` if it fails to compile, validate
    /// or run.
    pub fn time(&mut self, order: &PhaseOrder) -> Result<Option<f64>> {
        let Some(artifact) = compile_ok(self.kernel, order, self.backend)? else {
            return Ok(None);
        };
        if let Some(t) = self.cache.get(artifact.digest()) {
            return Ok(*t);
        }
        let (_, t) = evaluate_fresh(self.kernel, &artifact, self.tol, self.backend)?;
        self.fresh_runs += 1;
        self.cache.insert(artifact.digest().to_string(), t);
        Ok(t)
    }

    /// Number of artifacts actually executed so far.
    pub fn fresh_runs(&self) -> usize {
        self.fresh_runs
    }
}

/// Greedy single-deletion reduction to a fixpoint.
///
/// A deletion is kept when the shorter order still validates and runs no
/// slower than `(1 + epsilon)` times the input order. The result is a
/// subsequence of `order` from which no single pass can be removed under
/// that rule. Orders that do not validate are returned unchanged.
pub fn reduce_order(
    kernel: &KernelCase,
    order: &PhaseOrder,
    backend: &dyn Backend,
    epsilon: f64,
    tol: Tolerance,
) -> Result<PhaseOrder> {
    let mut eval = OrderEvaluator::new(kernel, backend, tol);
    let Some(reference) = eval.time(order)? else {
        return Ok(order.clone());
    };
    let limit = reference * (1.0 + epsilon);
    let mut current = order.clone();
    loop {
        let mut changed = false;
        let mut i = 0;
        while i < current.len() {
            let candidate = current.without(i);
            match eval.time(&candidate)? {
                Some(t) if t <= limit => {
                    current = candidate;
                    changed = true;
                }
                _ => i += 1,
            }
        }
        if !changed {
            return Ok(current);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbEntry {
    /// Empty when no order beat the unoptimized build.
    pub best_order: PhaseOrder,
    #[serde(serialize_with = "crate::results::serialize_fixed6")]
    pub best_time: f64,
    #[serde(serialize_with = "crate::results::serialize_fixed6")]
    pub baseline_time: f64,
    pub feature_vector: FeatureVector,
}

impl KbEntry {
    pub fn speedup(&self) -> f64 {
        self.baseline_time / self.best_time
    }
}

/// Best known order per reference kernel.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeBase {
    pub entries: BTreeMap<String, KbEntry>,
}

impl KnowledgeBase {
    pub fn insert(&mut self, kernel_id: impl Into<String>, entry: KbEntry) {
        self.entries.insert(kernel_id.into(), entry);
    }

    pub fn get(&self, kernel_id: &str) -> Option<&KbEntry> {
        self.entries.get(kernel_id)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("knowledge base serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::json("knowledge base", e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

/// Applies every kernel's best order to every kernel.
///
/// Cell `(i, j)` holds `best_time(j) / time(kernel j built with order i)`;
/// the raw ratio is kept and clamping happens at export. Orders that fail
/// on kernel `j` give a `Failed` cell.
pub fn cross_apply(
    kernels: &[KernelCase],
    kb: &KnowledgeBase,
    backend: &dyn Backend,
    tol: Tolerance,
) -> Result<CrossMatrix> {
    let mut entries = Vec::with_capacity(kernels.len());
    for k in kernels {
        let e = kb.get(&k.id).ok_or_else(|| {
            Error::InvalidArgument(format!("knowledge base has no entry for kernel {}", k.id))
        })?;
        entries.push(e);
    }
    let ids: Vec<String> = kernels.iter().map(|k| k.id.clone()).collect();
    let columns = par_map(&kernels.iter().zip(&entries).collect::<Vec<_>>(), |(kernel, target)| {
        let mut eval = OrderEvaluator::new(kernel, backend, tol);
        entries
            .iter()
            .map(|owner| {
                Ok(match eval.time(&owner.best_order)? {
                    Some(t) => CrossCell::Ratio(target.best_time / t),
                    None => CrossCell::Failed,
                })
            })
            .collect::<Result<Vec<_>>>()
    });
    let columns = columns.into_iter().collect::<Result<Vec<_>>>()?;
    let cells = (0..kernels.len())
        .map(|i| columns.iter().map(|col| col[i]).collect())
        .collect();
    Ok(CrossMatrix {
        owners: ids.clone(),
        kernels: ids,
        cells,
    })
}
