//! "Compile a kernel with a phase order and run it", behind one interface.
//!
//! Two implementations exist: [`Toolchain`] drives external command-line
//! tools (frontend, optimizer, linker, codegen, runner), and [`Simulator`]
//! evaluates a deterministic cost model for desk-scale experiments.

use std::fmt;
use std::path::PathBuf;
use std::sync::MutexGuard;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::catalog::PhaseOrder;
use crate::error::Result;

mod report;
mod sim;
mod toolchain;

pub use report::{parse_report, Report};
pub use sim::{
    sim_evaluate, FailureRates, Motif, SimKernelModel, Simulator, DEFAULT_TIMEOUT_FACTOR,
    NOISE_AMPLITUDE,
};
pub use toolchain::{Toolchain, ToolchainSpec};

/// Compiled code plus its content hash. Equal content means equal digest.
#[derive(Clone, PartialEq, Eq)]
pub struct Artifact {
    content: Vec<u8>,
    digest: String,
}

impl Artifact {
    pub fn new(content: Vec<u8>) -> Self {
        let digest = hex::encode(Sha256::digest(&content));
        Artifact { content, digest }
    }

    pub fn content(&self) -> &[u8] {
        &self.content
    }

    /// Lowercase hex SHA-256 of the content.
    pub fn digest(&self) -> &str {
        &self.digest
    }
}

impl fmt::Debug for Artifact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Artifact")
            .field("len", &self.content.len())
            .field("digest", &self.digest)
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CompileOutcome {
    Ok(Artifact),
    /// The optimizer crashed or produced no IR. Carries the stage log.
    OptimizerFailure(String),
    /// Linking or code generation failed. Carries the stage log.
    CodegenFailure(String),
}

impl CompileOutcome {
    pub fn artifact(&self) -> Option<&Artifact> {
        match self {
            CompileOutcome::Ok(a) => Some(a),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExecStatus {
    Valid,
    InvalidOutput,
    Timeout,
    Crash,
    BrokenReport,
}

/// Result of one run of a compiled kernel.
///
/// `wall_time` is present only for `Valid` and `InvalidOutput`; `outputs`
/// only when a report was parsed.
#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionOutcome {
    pub status: ExecStatus,
    pub wall_time: Option<f64>,
    pub outputs: Option<Vec<f64>>,
}

impl ExecutionOutcome {
    pub fn failed(status: ExecStatus) -> Self {
        ExecutionOutcome {
            status,
            wall_time: None,
            outputs: None,
        }
    }
}

/// Which input a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InputKind {
    /// Small input used only for correctness checks.
    Validation,
    /// Original input used only for timing.
    Measurement,
    /// Freshly generated input of measurement size, identified by seed.
    Random(u64),
}

impl InputKind {
    pub fn name(&self) -> &'static str {
        match self {
            InputKind::Validation => "validation",
            InputKind::Measurement => "measurement",
            InputKind::Random(_) => "random",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelSource {
    Path(PathBuf),
    Simulated(SimKernelModel),
}

/// One benchmark unit.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelCase {
    pub id: String,
    pub source: KernelSource,
    /// Opaque descriptor handed to the runner as `{data}`.
    pub validation_input: String,
    pub measurement_input: String,
    /// Expected outputs for the validation input.
    pub reference_outputs: Vec<f64>,
}

impl KernelCase {
    /// A simulated kernel whose reference outputs come from the model itself.
    pub fn simulated(id: impl Into<String>, model: SimKernelModel) -> Self {
        let validation_input = "validation".to_string();
        let reference_outputs = model.reference_outputs(&validation_input);
        KernelCase {
            id: id.into(),
            source: KernelSource::Simulated(model),
            validation_input,
            measurement_input: "measurement".to_string(),
            reference_outputs,
        }
    }

    pub fn input_descriptor(&self, input: InputKind) -> String {
        match input {
            InputKind::Validation => self.validation_input.clone(),
            InputKind::Measurement => self.measurement_input.clone(),
            InputKind::Random(seed) => seed.to_string(),
        }
    }
}

/// A compile-and-run service.
///
/// `Err` is reserved for configuration problems (bad templates, missing
/// model, unusable work directory). Per-candidate failures are reported as
/// `CompileOutcome`/`ExecutionOutcome` values.
pub trait Backend: Sync {
    fn compile(&self, kernel: &KernelCase, order: &PhaseOrder) -> Result<CompileOutcome>;

    fn execute(
        &self,
        kernel: &KernelCase,
        artifact: &Artifact,
        input: InputKind,
    ) -> Result<ExecutionOutcome>;

    /// Exclusive access to the measurement device. Hold the guard for the
    /// duration of every timing run.
    fn measurement_token(&self) -> MutexGuard<'_, ()>;
}

pub(crate) fn lock_token(m: &std::sync::Mutex<()>) -> MutexGuard<'_, ()> {
    // The token guards no data, so a poisoned lock is still usable.
    m.lock().unwrap_or_else(|e| e.into_inner())
}
