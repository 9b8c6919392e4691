use std::collections::BTreeSet;
use std::path::Path;
use std::sync::{Mutex, MutexGuard};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    lock_token, Artifact, Backend, CompileOutcome, ExecStatus, ExecutionOutcome, InputKind,
    KernelCase, KernelSource,
};
use crate::catalog::{parse_phase_order, PassId, PhaseOrder};
use crate::error::{Error, Result};

/// Half-width of the multiplicative run-to-run noise band.
///
/// Kept below `eps / (2 + eps)` for the default 1% reduction tolerance, so
/// two artifacts that differ only in neutral passes always compare within
/// tolerance of each other.
pub const NOISE_AMPLITUDE: f64 = 0.004;

/// Runs slower than this multiple of the unoptimized time are killed.
pub const DEFAULT_TIMEOUT_FACTOR: f64 = 4.0;

/// Validation inputs are small; their runs take this fraction of the
/// measurement time.
const VALIDATION_SCALE: f64 = 0.01;

const OUTPUT_LEN: usize = 4;

/// A contiguous pass subsequence that scales run time when present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Motif {
    pub passes: PhaseOrder,
    pub multiplier: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FailureRates {
    pub p_no_ir: f64,
    pub p_incorrect: f64,
    pub p_broken: f64,
}

impl FailureRates {
    pub const NONE: FailureRates = FailureRates {
        p_no_ir: 0.0,
        p_incorrect: 0.0,
        p_broken: 0.0,
    };
}

/// Deterministic cost model of one kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimKernelModel {
    pub baseline_time: f64,
    #[serde(default)]
    pub motifs: Vec<Motif>,
    #[serde(default)]
    pub failure_rates: FailureRates,
    #[serde(default)]
    pub seed_salt: u64,
    /// Runs that validate on the small input but produce wrong results on
    /// randomly generated full-size inputs.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fragile_motifs: Vec<PhaseOrder>,
}

impl SimKernelModel {
    pub fn new(baseline_time: f64) -> Self {
        SimKernelModel {
            baseline_time,
            motifs: Vec::new(),
            failure_rates: FailureRates::NONE,
            seed_salt: 0,
            fragile_motifs: Vec::new(),
        }
    }

    pub fn with_motif(mut self, passes: &str, multiplier: f64) -> Self {
        self.motifs.push(Motif {
            passes: parse_phase_order(passes).expect("motif text"),
            multiplier,
        });
        self
    }

    pub fn with_failure_rates(mut self, p_no_ir: f64, p_incorrect: f64, p_broken: f64) -> Self {
        self.failure_rates = FailureRates {
            p_no_ir,
            p_incorrect,
            p_broken,
        };
        self
    }

    pub fn with_salt(mut self, seed_salt: u64) -> Self {
        self.seed_salt = seed_salt;
        self
    }

    pub fn with_fragile(mut self, passes: &str) -> Self {
        self.fragile_motifs
            .push(parse_phase_order(passes).expect("fragile motif text"));
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.baseline_time > 0.0 && self.baseline_time.is_finite()) {
            return bad(format!("baseline_time must be > 0, got {}", self.baseline_time));
        }
        for m in &self.motifs {
            if !(m.multiplier > 0.0 && m.multiplier.is_finite()) {
                return bad(format!("motif {} has multiplier {}", m.passes, m.multiplier));
            }
        }
        let r = self.failure_rates;
        for p in [r.p_no_ir, r.p_incorrect, r.p_broken] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("failure rate {p} outside [0, 1]"));
            }
        }
        if r.p_no_ir + r.p_incorrect + r.p_broken >= 1.0 {
            return bad("failure rates must sum to less than 1".into());
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: SimKernelModel =
            serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
        model.validate()?;
        Ok(model)
    }

    /// Outputs a correct build produces for the given input descriptor.
    pub fn reference_outputs(&self, input: &str) -> Vec<f64> {
        let h = Sha256::new()
            .chain_update(self.seed_salt.to_le_bytes())
            .chain_update(b"input:")
            .chain_update(input.as_bytes())
            .finalize();
        h.chunks_exact(8)
            .take(OUTPUT_LEN)
            .map(|c| 1.0 + unit(c))
            .collect()
    }

    /// Product of the multipliers of every motif present in `order`, each
    /// counted at most once.
    pub fn time_factor(&self, order: &PhaseOrder) -> f64 {
        self.motifs
            .iter()
            .filter(|m| order.contains_run(m.passes.passes()))
            .map(|m| m.multiplier)
            .product()
    }
}

/// Maps 8 bytes to a uniform value in [0, 1).
fn unit(bytes: &[u8]) -> f64 {
    let x = u64::from_be_bytes(bytes[..8].try_into().unwrap());
    (x >> 11) as f64 / (1u64 << 53) as f64
}

/// The two hash-derived draws for an artifact: the failure band selector and
/// the noise draw.
fn draws(model: &SimKernelModel, canonical: &str) -> (f64, f64) {
    let h = Sha256::new()
        .chain_update(model.seed_salt.to_le_bytes())
        .chain_update(canonical.as_bytes())
        .finalize();
    (unit(&h[..8]), unit(&h[8..16]))
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Band {
    NoIr,
    Incorrect,
    Broken,
    Ok,
}

fn band(model: &SimKernelModel, canonical: &PhaseOrder, u: f64) -> Band {
    // The unoptimized build is the reference; only optimizer passes fail.
    if canonical.is_empty() {
        return Band::Ok;
    }
    let r = model.failure_rates;
    if u < r.p_no_ir {
        Band::NoIr
    } else if u < r.p_no_ir + r.p_incorrect {
        Band::Incorrect
    } else if u < r.p_no_ir + r.p_incorrect + r.p_broken {
        Band::Broken
    } else {
        Band::Ok
    }
}

fn canonicalize(order: &PhaseOrder, noops: &BTreeSet<PassId>) -> PhaseOrder {
    PhaseOrder::new(
        order
            .passes()
            .iter()
            .filter(|p| !noops.contains(*p))
            .cloned()
            .collect(),
    )
}

/// Deterministic stand-in for a compile and toolchain run.
///
/// The artifact is the rendered order with no-op passes dropped, so orders
/// that differ only in no-ops share a digest. A hash of that text (salted by
/// the model) selects the failure band and the noise draw.
#[derive(Debug, Default)]
pub struct Simulator {
    noops: BTreeSet<PassId>,
    timeout_factor: f64,
    token: Mutex<()>,
}

impl Simulator {
    pub fn new() -> Self {
        Simulator {
            noops: BTreeSet::new(),
            timeout_factor: DEFAULT_TIMEOUT_FACTOR,
            token: Mutex::new(()),
        }
    }

    pub fn with_noops(mut self, noops: impl IntoIterator<Item = PassId>) -> Self {
        self.noops.extend(noops);
        self
    }

    pub fn with_timeout_factor(mut self, factor: f64) -> Self {
        self.timeout_factor = factor;
        self
    }

    pub fn noops(&self) -> &BTreeSet<PassId> {
        &self.noops
    }

    fn model<'a>(&self, kernel: &'a KernelCase) -> Result<&'a SimKernelModel> {
        match &kernel.source {
            KernelSource::Simulated(m) => Ok(m),
            KernelSource::Path(p) => Err(Error::InvalidArgument(format!(
                "kernel {} has a source path ({}) but the simulator needs a model",
                kernel.id,
                p.display()
            ))),
        }
    }

    pub fn compile_model(&self, model: &SimKernelModel, order: &PhaseOrder) -> CompileOutcome {
        let canonical = canonicalize(order, &self.noops);
        let text = canonical.render();
        let (u, _) = draws(model, &text);
        match band(model, &canonical, u) {
            Band::NoIr => CompileOutcome::OptimizerFailure("simulated optimizer crash".into()),
            _ => CompileOutcome::Ok(Artifact::new(text.into_bytes())),
        }
    }

    pub fn execute_model(
        &self,
        model: &SimKernelModel,
        artifact: &Artifact,
        input: InputKind,
        descriptor: &str,
    ) -> Result<ExecutionOutcome> {
        let text = std::str::from_utf8(artifact.content())
            .map_err(|_| Error::InvalidArgument("artifact was not built by the simulator".into()))?;
        let canonical = parse_phase_order(text)?;
        let (u, v) = draws(model, text);
        let band = band(model, &canonical, u);
        if band == Band::Broken {
            return Ok(ExecutionOutcome::failed(ExecStatus::BrokenReport));
        }
        // NoIr artifacts never reach execution through compile(); treat a
        // hand-built one like a correct build.

        let noise = 1.0 + NOISE_AMPLITUDE * (2.0 * v - 1.0);
        let full_time = model.baseline_time * model.time_factor(&canonical) * noise;
        if full_time > self.timeout_factor * model.baseline_time {
            return Ok(ExecutionOutcome::failed(ExecStatus::Timeout));
        }
        let wall_time = match input {
            InputKind::Validation => full_time * VALIDATION_SCALE,
            InputKind::Measurement | InputKind::Random(_) => full_time,
        };

        let mut outputs = model.reference_outputs(descriptor);
        let fragile = matches!(input, InputKind::Random(_))
            && model
                .fragile_motifs
                .iter()
                .any(|f| canonical.contains_run(f.passes()));
        let status = if band == Band::Incorrect {
            outputs[0] *= 1.1;
            ExecStatus::InvalidOutput
        } else {
            if fragile {
                outputs[0] *= 1.1;
            }
            ExecStatus::Valid
        };
        Ok(ExecutionOutcome {
            status,
            wall_time: Some(wall_time),
            outputs: Some(outputs),
        })
    }
}

impl Backend for Simulator {
    fn compile(&self, kernel: &KernelCase, order: &PhaseOrder) -> Result<CompileOutcome> {
        Ok(self.compile_model(self.model(kernel)?, order))
    }

    fn execute(
        &self,
        kernel: &KernelCase,
        artifact: &Artifact,
        input: InputKind,
    ) -> Result<ExecutionOutcome> {
        let descriptor = match input {
            InputKind::Random(seed) => format!("random:{seed}"),
            _ => kernel.input_descriptor(input),
        };
        self.execute_model(self.model(kernel)?, artifact, input, &descriptor)
    }

    fn measurement_token(&self) -> MutexGuard<'_, ()> {
        lock_token(&self.token)
    }
}

/// Compiles `order` against `model` and runs it on the measurement input,
/// with the default timeout factor and no registered no-ops.
pub fn sim_evaluate(model: &SimKernelModel, order: &PhaseOrder) -> (CompileOutcome, ExecutionOutcome) {
    let sim = Simulator::new();
    let compiled = sim.compile_model(model, order);
    let executed = match &compiled {
        CompileOutcome::Ok(a) => sim
            .execute_model(model, a, InputKind::Measurement, "measurement")
            .expect("simulator artifacts are well formed"),
        _ => ExecutionOutcome::failed(ExecStatus::Crash),
    };
    (compiled, executed)
}
