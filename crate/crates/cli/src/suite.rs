//! Suite manifests: the kernels a run operates on.
//!
//! ```json
//! {
//!   "kernels": [
//!     { "id": "gemm", "model": "models/gemm.json", "ir": "ir/gemm.ir" },
//!     { "id": "atax", "source": "src/atax.cl", "ir": "ir/atax.ir",
//!       "validation_input": "small", "measurement_input": "large",
//!       "reference_outputs": [1.0, 2.5] }
//!   ]
//! }
//! ```
//!
//! Relative paths resolve against the manifest's directory. `model` may also
//! be an inline simulator model object.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use phaseforge::backend::{KernelCase, KernelSource, SimKernelModel};
use phaseforge::error::{Error, Result};
use phaseforge::irfeat::{extract_features, parse_ir, FeatureVector};
use serde::Deserialize;

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum ModelRef {
    Path(PathBuf),
    Inline(SimKernelModel),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryFile {
    id: String,
    #[serde(default)]
    model: Option<ModelRef>,
    #[serde(default)]
    source: Option<PathBuf>,
    #[serde(default)]
    ir: Option<PathBuf>,
    #[serde(default)]
    validation_input: Option<String>,
    #[serde(default)]
    measurement_input: Option<String>,
    #[serde(default)]
    reference_outputs: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SuiteFile {
    kernels: Vec<EntryFile>,
}

#[derive(Debug, Clone)]
pub struct SuiteEntry {
    pub id: String,
    pub model: Option<SimKernelModel>,
    pub source: Option<PathBuf>,
    pub ir: Option<PathBuf>,
    pub validation_input: Option<String>,
    pub measurement_input: Option<String>,
    pub reference_outputs: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    Simulator,
    Toolchain,
}

impl SuiteEntry {
    pub fn kernel_case(&self, kind: BackendKind) -> Result<KernelCase> {
        let missing = |what: &str| {
            Error::InvalidArgument(format!("kernel {} has no {what} in the suite", self.id))
        };
        match kind {
            BackendKind::Simulator => {
                let model = self.model.clone().ok_or_else(|| missing("model"))?;
                Ok(KernelCase::simulated(self.id.clone(), model))
            }
            BackendKind::Toolchain => Ok(KernelCase {
                id: self.id.clone(),
                source: KernelSource::Path(self.source.clone().ok_or_else(|| missing("source"))?),
                validation_input: self.validation_input.clone().ok_or_else(|| missing("validation_input"))?,
                measurement_input: self.measurement_input.clone().ok_or_else(|| missing("measurement_input"))?,
                reference_outputs: self.reference_outputs.clone().ok_or_else(|| missing("reference_outputs"))?,
            }),
        }
    }

    pub fn features(&self) -> Result<FeatureVector> {
        let path = self.ir.as_ref().ok_or_else(|| {
            Error::InvalidArgument(format!("kernel {} has no ir in the suite", self.id))
        })?;
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(extract_features(&parse_ir(&text)?))
    }
}

#[derive(Debug, Clone)]
pub struct Suite {
    pub entries: Vec<SuiteEntry>,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

impl Suite {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: SuiteFile =
            serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };

        let mut seen = HashSet::new();
        let mut entries = Vec::with_capacity(file.kernels.len());
        for e in file.kernels {
            if !valid_id(&e.id) {
                return Err(Error::InvalidArgument(format!("invalid kernel id {:?}", e.id)));
            }
            if !seen.insert(e.id.clone()) {
                return Err(Error::InvalidArgument(format!("duplicate kernel id {}", e.id)));
            }
            let model = match e.model {
                None => None,
                Some(ModelRef::Inline(m)) => {
                    m.validate()?;
                    Some(m)
                }
                Some(ModelRef::Path(p)) => Some(SimKernelModel::load(resolve(p))?),
            };
            entries.push(SuiteEntry {
                id: e.id,
                model,
                source: e.source.map(resolve),
                ir: e.ir.map(resolve),
                validation_input: e.validation_input,
                measurement_input: e.measurement_input,
                reference_outputs: e.reference_outputs,
            });
        }
        Ok(Suite { entries })
    }

    /// Entries named in `ids`, in that order; all entries when `ids` is empty.
    pub fn select(&self, ids: &[String]) -> Result<Vec<&SuiteEntry>> {
        if ids.is_empty() {
            return Ok(self.entries.iter().collect());
        }
        ids.iter()
            .map(|id| {
                self.entries
                    .iter()
                    .find(|e| &e.id == id)
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown kernel {id}")))
            })
            .collect()
    }
}
