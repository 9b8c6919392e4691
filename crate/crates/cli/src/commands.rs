use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use phaseforge::advisor::{evaluate_suggestions, leave_one_out, suggest_knn, LooConfig, ReferenceSet};
use phaseforge::backend::{Backend, CompileOutcome, KernelCase, Simulator, Toolchain, ToolchainSpec};
use phaseforge::catalog::{random_permutations, PassCatalog, PhaseOrder};
use phaseforge::error::Error;
use phaseforge::explorer::{
    cross_apply, explore, explore_orders, finalize, mean_time, measure_baseline, reduce_order,
    ExplorationConfig, KbEntry, KnowledgeBase, Tolerance,
};
use phaseforge::results::{
    export, failure_summary, permutation_histogram, Export, Format, ResultsStore, SpeedupReport,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::suite::{BackendKind, Suite, SuiteEntry};

/// Why a command stopped. Maps onto exit codes 1 and 2.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Domain(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NoValidCandidate { .. } | Error::DegenerateVector => Failure::Domain(e.to_string()),
            _ => Failure::Config(e.to_string()),
        }
    }
}

pub type Outcome<T = ()> = Result<T, Failure>;

pub struct Settings {
    pub backend: BackendKind,
    pub catalog: Option<PathBuf>,
    pub suite: Option<PathBuf>,
    pub toolchain: Option<PathBuf>,
    pub kb: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub exploration: ExplorationConfig,
    pub timeout_factor: f64,
    pub epsilon: f64,
    pub trials: usize,
    pub k: Option<usize>,
}

impl Settings {
    fn catalog(&self) -> Outcome<PassCatalog> {
        let path = self
            .catalog
            .as_ref()
            .ok_or_else(|| Failure::Config("--catalog is required".into()))?;
        Ok(PassCatalog::load(path)?)
    }

    /// The catalog if one was given; only its no-op list matters here.
    fn optional_catalog(&self) -> Outcome<Option<PassCatalog>> {
        self.catalog.as_ref().map(|_| self.catalog()).transpose()
    }

    fn suite(&self) -> Outcome<Suite> {
        let path = self
            .suite
            .as_ref()
            .ok_or_else(|| Failure::Config("--suite is required".into()))?;
        Ok(Suite::load(path)?)
    }

    fn kb_path(&self) -> PathBuf {
        self.kb.clone().unwrap_or_else(|| self.out_dir.join("kb.json"))
    }

    fn load_kb(&self) -> Outcome<KnowledgeBase> {
        let path = self.kb_path();
        if !path.exists() {
            return Ok(KnowledgeBase::default());
        }
        Ok(KnowledgeBase::load(&path)?)
    }

    fn nonempty_kb(&self) -> Outcome<KnowledgeBase> {
        let kb = self.load_kb()?;
        if kb.is_empty() {
            return Err(Failure::Domain(format!(
                "knowledge base {} is empty; run `explore` first",
                self.kb_path().display()
            )));
        }
        Ok(kb)
    }

    fn backend(&self, catalog: Option<&PassCatalog>) -> Outcome<Box<dyn Backend>> {
        Ok(match self.backend {
            BackendKind::Simulator => {
                if !(self.timeout_factor > 1.0 && self.timeout_factor.is_finite()) {
                    return Err(Failure::Config("--timeout-factor must be > 1".into()));
                }
                let noops = catalog.map(|c| c.noops().clone()).unwrap_or_default();
                Box::new(
                    Simulator::new()
                        .with_noops(noops)
                        .with_timeout_factor(self.timeout_factor),
                )
            }
            BackendKind::Toolchain => {
                let path = self.toolchain.as_ref().ok_or_else(|| {
                    Failure::Config("--toolchain or PHASEFORGE_TOOLCHAIN is required".into())
                })?;
                Box::new(Toolchain::new(ToolchainSpec::load(path)?)?)
            }
        })
    }

    fn tolerance(&self) -> Tolerance {
        self.exploration.tolerance()
    }

    fn out_file(&self, name: &str) -> Outcome<PathBuf> {
        std::fs::create_dir_all(&self.out_dir)
            .map_err(|e| Failure::Config(format!("{}: {e}", self.out_dir.display())))?;
        Ok(self.out_dir.join(name))
    }
}

fn write_text(path: &Path, text: &str) -> Outcome {
    std::fs::write(path, text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

/// Averaged time of `order`, or `None` if it does not build or run.
fn averaged_time(kernel: &KernelCase, order: &PhaseOrder, reps: usize, backend: &dyn Backend) -> Outcome<Option<f64>> {
    match backend.compile(kernel, order)? {
        CompileOutcome::Ok(a) => Ok(mean_time(kernel, &a, reps, backend)?),
        _ => Ok(None),
    }
}

pub fn cmd_explore(s: &Settings, ids: &[String]) -> Outcome {
    s.exploration.validate()?;
    if !(s.epsilon >= 0.0 && s.epsilon.is_finite()) {
        return Err(Failure::Config("--epsilon must be >= 0".into()));
    }
    let catalog = s.catalog()?;
    let suite = s.suite()?;
    let entries = suite.select(ids)?;
    let backend = s.backend(Some(&catalog))?;
    let backend = backend.as_ref();
    let mut kb = s.load_kb()?;
    let records_path = s.out_file("records.csv")?;

    let mut store = ResultsStore::new();
    let mut failed = Vec::new();
    for entry in entries {
        let kernel = entry.kernel_case(s.backend)?;
        let features = entry.features()?;
        log::info!("exploring {} ({} candidates)", kernel.id, s.exploration.num_sequences);
        let records = explore(&kernel, &catalog, &s.exploration, backend)?;
        store.extend(records.iter().cloned());

        let baseline = measure_baseline(&kernel, s.exploration.final_reps, backend)?;
        let best = match finalize(&kernel, &records, &s.exploration, backend) {
            Ok(best) => best,
            Err(e @ Error::NoValidCandidate { .. }) => {
                eprintln!("error: {e}");
                failed.push(kernel.id.clone());
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let reduced = reduce_order(&kernel, &best.order, backend, s.epsilon, s.tolerance())?;
        let reduced_time = averaged_time(&kernel, &reduced, s.exploration.final_reps, backend)?;
        let (best_order, best_time) = match reduced_time {
            Some(t) if t < baseline => (reduced, t),
            _ => (PhaseOrder::empty(), baseline),
        };
        println!(
            "{}\tspeedup {:.3}\t{}",
            kernel.id,
            baseline / best_time,
            if best_order.is_empty() { "(no improvement)".to_string() } else { best_order.render() }
        );
        kb.insert(
            kernel.id.clone(),
            KbEntry {
                best_order,
                best_time,
                baseline_time: baseline,
                feature_vector: features,
            },
        );
    }

    export(&store, &records_path, Format::Csv)?;
    let kb_path = s.kb_path();
    if let Some(dir) = kb_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Config(format!("{}: {e}", dir.display())))?;
    }
    kb.save(&kb_path)?;
    if !kb.is_empty() {
        println!("geomean speedup {:.3}", SpeedupReport::from_kb(&kb)?.geomean);
    }
    if !failed.is_empty() {
        return Err(Failure::Domain(format!("no valid candidate for: {}", failed.join(", "))));
    }
    Ok(())
}

pub fn cmd_suggest(s: &Settings, id: &str, dry_run: bool) -> Outcome {
    let k = s.k.unwrap_or(3);
    if k == 0 {
        return Err(Failure::Config("--k must be at least 1".into()));
    }
    let suite = s.suite()?;
    let entry = suite.select(&[id.to_string()])?[0];
    let query = entry.features()?;
    let kb = s.nonempty_kb()?;
    let refset = ReferenceSet::from_kb(&kb)?;
    let suggestions = suggest_knn(&query, &refset, k)?;
    for (rank, sug) in suggestions.iter().enumerate() {
        println!("{}\t{}\t{:.6}\t{}", rank + 1, sug.kernel_id, sug.distance, sug.order.render());
    }
    if dry_run {
        return Ok(());
    }

    let catalog = s.optional_catalog()?;
    let backend = s.backend(catalog.as_ref())?;
    let kernel = entry.kernel_case(s.backend)?;
    let orders: Vec<PhaseOrder> = suggestions.into_iter().map(|s| s.order).collect();
    let curve = evaluate_suggestions(&kernel, &orders, backend.as_ref(), k, s.tolerance())?;
    println!("evaluations\tspeedup");
    for (n, v) in curve.iter().enumerate() {
        println!("{}\t{:.6}", n + 1, v);
    }
    Ok(())
}

/// Suite kernels that have a knowledge-base entry, in suite order.
fn known_kernels(suite: &Suite, kb: &KnowledgeBase, kind: BackendKind) -> Outcome<Vec<KernelCase>> {
    let kernels = suite
        .entries
        .iter()
        .filter(|e| kb.get(&e.id).is_some())
        .map(|e| e.kernel_case(kind))
        .collect::<Result<Vec<_>, _>>()?;
    if kernels.is_empty() {
        return Err(Failure::Domain("no suite kernel has a knowledge-base entry".into()));
    }
    Ok(kernels)
}

pub fn cmd_cross_apply(s: &Settings) -> Outcome {
    let kb = s.nonempty_kb()?;
    let suite = s.suite()?;
    let kernels = known_kernels(&suite, &kb, s.backend)?;
    let catalog = s.optional_catalog()?;
    let backend = s.backend(catalog.as_ref())?;
    let matrix = cross_apply(&kernels, &kb, backend.as_ref(), s.tolerance())?;
    let path = s.out_file("matrix.csv")?;
    export(&matrix, &path, Format::Csv)?;
    print!("{}", matrix.to_csv()?);
    Ok(())
}

pub fn cmd_permute(s: &Settings, ids: &[String], count: usize, bucket_width: f64) -> Outcome {
    if count == 0 {
        return Err(Failure::Config("--permutations must be at least 1".into()));
    }
    let kb = s.nonempty_kb()?;
    let suite = s.suite()?;
    let selected: Vec<&SuiteEntry> = if ids.is_empty() {
        suite.entries.iter().filter(|e| kb.get(&e.id).is_some()).collect()
    } else {
        suite.select(ids)?
    };
    if selected.is_empty() {
        return Err(Failure::Domain("no suite kernel has a knowledge-base entry".into()));
    }
    let catalog = s.optional_catalog()?;
    let backend = s.backend(catalog.as_ref())?;

    let mut out = String::from("kernel_id,bucket_low,bucket_high,percent\n");
    for (i, entry) in selected.into_iter().enumerate() {
        let kb_entry = kb.get(&entry.id).ok_or_else(|| {
            Failure::Domain(format!("knowledge base has no entry for kernel {}", entry.id))
        })?;
        let kernel = entry.kernel_case(s.backend)?;
        let mut rng = ChaCha8Rng::seed_from_u64(s.exploration.seed.wrapping_add(i as u64));
        let perms = random_permutations(&kb_entry.best_order, count, &mut rng);
        let records = explore_orders(&kernel, &perms, s.tolerance(), backend.as_ref())?;
        let hist = permutation_histogram(&records, kb_entry.best_time, bucket_width)?;
        println!(
            "{}\t{} permutations\t{:.1}% below 0.95",
            kernel.id,
            perms.len(),
            hist.percent_below(0.95)
        );
        for b in &hist.buckets {
            let _ = writeln!(out, "{},{:.6},{:.6},{:.6}", kernel.id, b.low, b.high, b.percent);
        }
        let _ = writeln!(out, "{},FAIL,FAIL,{:.6}", kernel.id, hist.failed_percent);
    }
    write_text(&s.out_file("permute.csv")?, &out)
}

pub fn cmd_loo(s: &Settings) -> Outcome {
    let kb = s.nonempty_kb()?;
    if kb.entries.len() < 2 {
        return Err(Failure::Domain("leave-one-out needs at least two knowledge-base entries".into()));
    }
    let suite = s.suite()?;
    let kernels = known_kernels(&suite, &kb, s.backend)?;
    let refset = ReferenceSet::from_kb(&kb)?;
    let config = LooConfig {
        k_max: s.k.unwrap_or(refset.len() - 1),
        trials: s.trials,
        seed: s.exploration.seed,
        tol: s.tolerance(),
    };
    let catalog = s.optional_catalog()?;
    let backend = s.backend(catalog.as_ref())?;
    let table = leave_one_out(&refset, &kernels, backend.as_ref(), &config)?;
    let path = s.out_file("loo.csv")?;
    export(&table, &path, Format::Csv)?;
    print!("{}", table.to_csv()?);
    Ok(())
}

pub fn cmd_failures(s: &Settings, kernel: Option<&str>) -> Outcome {
    let store = ResultsStore::load_csv(s.out_dir.join("records.csv"))?;
    let summary = failure_summary(&store, kernel);
    let path = s.out_file("failures.csv")?;
    export(&summary, &path, Format::Csv)?;
    print!("{}", summary.to_csv()?);
    Ok(())
}
