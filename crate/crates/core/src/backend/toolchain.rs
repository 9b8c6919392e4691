use std::collections::HashMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitStatus, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, MutexGuard};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::report::parse_report;
use super::{
    lock_token, Artifact, Backend, CompileOutcome, ExecStatus, ExecutionOutcome, InputKind,
    KernelCase, KernelSource,
};
use crate::catalog::PhaseOrder;
use crate::error::{Error, Result};

fn default_compile_timeout() -> f64 {
    300.0
}

/// Command templates for the offline compilation flow
/// (frontend -> optimizer -> linker -> codegen) and the runner.
///
/// Templates are run through `sh -c` after placeholder substitution. Every
/// stage template must contain `{input}` and `{output}` exactly once; the
/// optimizer additionally `{passes}`, and the runner `{artifact}` and `{data}`
/// (plus an optional `{kind}`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolchainSpec {
    pub frontend_cmd: String,
    pub optimizer_cmd: String,
    pub linker_cmd: String,
    pub codegen_cmd: String,
    pub runner_cmd: String,
    pub work_dir: PathBuf,
    /// Seconds before a runner process is killed.
    pub exec_timeout_s: f64,
    #[serde(default = "default_compile_timeout")]
    pub compile_timeout_s: f64,
}

impl ToolchainSpec {
    pub fn validate(&self) -> Result<()> {
        let stages = [
            ("frontend_cmd", &self.frontend_cmd, &["{input}", "{output}"][..]),
            ("optimizer_cmd", &self.optimizer_cmd, &["{input}", "{output}", "{passes}"][..]),
            ("linker_cmd", &self.linker_cmd, &["{input}", "{output}"][..]),
            ("codegen_cmd", &self.codegen_cmd, &["{input}", "{output}"][..]),
            ("runner_cmd", &self.runner_cmd, &["{artifact}", "{data}"][..]),
        ];
        for (name, template, required) in stages {
            for ph in required {
                let n = template.matches(ph).count();
                if n != 1 {
                    return Err(Error::Toolchain(format!(
                        "{name} must contain {ph} exactly once (found {n})"
                    )));
                }
            }
        }
        if self.runner_cmd.matches("{kind}").count() > 1 {
            return Err(Error::Toolchain("runner_cmd repeats {kind}".into()));
        }
        for (name, t) in [
            ("exec_timeout_s", self.exec_timeout_s),
            ("compile_timeout_s", self.compile_timeout_s),
        ] {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Toolchain(format!("{name} must be > 0")));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: ToolchainSpec =
            serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
        spec.validate()?;
        Ok(spec)
    }
}

fn shell_quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', r"'\''"))
}

fn substitute(template: &str, vars: &[(&str, String)]) -> String {
    let mut out = template.to_string();
    for (key, value) in vars {
        out = out.replace(key, value);
    }
    out
}

struct RunOutput {
    status: Option<ExitStatus>,
    stdout: Vec<u8>,
    stderr: Vec<u8>,
    elapsed: Duration,
}

impl RunOutput {
    fn timed_out(&self) -> bool {
        self.status.is_none()
    }

    fn success(&self) -> bool {
        self.status.is_some_and(|s| s.success())
    }

    fn log(&self) -> String {
        String::from_utf8_lossy(&self.stderr).into_owned()
    }
}

/// Runs `sh -c cmd`, killing the whole process group once `timeout` elapses.
fn run_shell(cmd: &str, cwd: &Path, timeout: Duration) -> Result<RunOutput> {
    let mut command = Command::new("sh");
    command
        .arg("-c")
        .arg(cmd)
        .current_dir(cwd)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    #[cfg(unix)]
    {
        use std::os::unix::process::CommandExt;
        command.process_group(0);
    }
    let start = Instant::now();
    let mut child = command
        .spawn()
        .map_err(|e| Error::Toolchain(format!("spawning `sh -c {cmd}`: {e}")))?;

    let mut out_pipe = child.stdout.take().expect("piped stdout");
    let mut err_pipe = child.stderr.take().expect("piped stderr");
    let out_reader = thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = out_pipe.read_to_end(&mut buf);
        buf
    });
    let err_reader = thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = err_pipe.read_to_end(&mut buf);
        buf
    });

    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break Some(status),
            Ok(None) if start.elapsed() >= timeout => {
                kill_group(&mut child);
                break None;
            }
            Ok(None) => thread::sleep(Duration::from_millis(2)),
            Err(e) => {
                kill_group(&mut child);
                return Err(Error::Toolchain(format!("waiting for `{cmd}`: {e}")));
            }
        }
    };
    let elapsed = start.elapsed();
    if status.is_some() {
        // Background children of a finished shell may still hold the pipes.
        kill_group(&mut child);
    }
    let stdout = out_reader.join().unwrap_or_default();
    let stderr = err_reader.join().unwrap_or_default();
    Ok(RunOutput {
        status,
        stdout,
        stderr,
        elapsed,
    })
}

fn kill_group(child: &mut std::process::Child) {
    #[cfg(unix)]
    {
        // The child leads its own process group (process_group(0) above).
        let pgid = child.id() as libc::pid_t;
        unsafe {
            libc::kill(-pgid, libc::SIGKILL);
        }
    }
    let _ = child.kill();
    let _ = child.wait();
}

/// Backend that shells out to a real compilation toolchain.
pub struct Toolchain {
    spec: ToolchainSpec,
    jobs: AtomicU64,
    frontend: Mutex<HashMap<String, PathBuf>>,
    token: Mutex<()>,
}

impl Toolchain {
    pub fn new(spec: ToolchainSpec) -> Result<Self> {
        spec.validate()?;
        std::fs::create_dir_all(&spec.work_dir).map_err(|e| Error::io(&spec.work_dir, e))?;
        Ok(Toolchain {
            spec,
            jobs: AtomicU64::new(0),
            frontend: Mutex::new(HashMap::new()),
            token: Mutex::new(()),
        })
    }

    pub fn spec(&self) -> &ToolchainSpec {
        &self.spec
    }

    fn job_dir(&self, kernel: &KernelCase, tag: &str) -> Result<PathBuf> {
        let n = self.jobs.fetch_add(1, Ordering::Relaxed);
        let dir = self
            .spec
            .work_dir
            .join(sanitize(&kernel.id))
            .join(format!("{tag}-{n}"));
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(dir)
    }

    /// Frontend output for a kernel, produced once and reused.
    fn frontend_ir(&self, kernel: &KernelCase, source: &Path) -> Result<PathBuf> {
        let mut cache = self.frontend.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(p) = cache.get(&kernel.id) {
            return Ok(p.clone());
        }
        let dir = self.spec.work_dir.join(sanitize(&kernel.id));
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let output = dir.join("frontend.ll");
        let cmd = substitute(
            &self.spec.frontend_cmd,
            &[
                ("{input}", shell_quote(&source.to_string_lossy())),
                ("{output}", shell_quote(&output.to_string_lossy())),
            ],
        );
        let run = run_shell(&cmd, &dir, self.compile_timeout())?;
        if !run.success() || !output.is_file() {
            return Err(Error::Toolchain(format!(
                "frontend failed for kernel {}: {}",
                kernel.id,
                run.log()
            )));
        }
        cache.insert(kernel.id.clone(), output.clone());
        Ok(output)
    }

    fn compile_timeout(&self) -> Duration {
        Duration::from_secs_f64(self.spec.compile_timeout_s)
    }

    fn stage(&self, template: &str, input: &Path, output: &Path, dir: &Path, extra: Option<String>) -> Result<std::result::Result<(), String>> {
        let mut vars = vec![
            ("{input}", shell_quote(&input.to_string_lossy())),
            ("{output}", shell_quote(&output.to_string_lossy())),
        ];
        if let Some(passes) = extra {
            vars.push(("{passes}", passes));
        }
        let run = run_shell(&substitute(template, &vars), dir, self.compile_timeout())?;
        if run.timed_out() {
            return Ok(Err(format!("timed out after {:?}", run.elapsed)));
        }
        if !run.success() || !output.is_file() {
            return Ok(Err(run.log()));
        }
        Ok(Ok(()))
    }
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

impl Backend for Toolchain {
    fn compile(&self, kernel: &KernelCase, order: &PhaseOrder) -> Result<CompileOutcome> {
        let KernelSource::Path(source) = &kernel.source else {
            return Err(Error::InvalidArgument(format!(
                "kernel {} has no source path",
                kernel.id
            )));
        };
        let ir = self.frontend_ir(kernel, source)?;
        let dir = self.job_dir(kernel, "compile")?;
        let result = (|| {
            let optimized = if order.is_empty() {
                ir.clone()
            } else {
                let out = dir.join("optimized.ll");
                if let Err(log) = self.stage(&self.spec.optimizer_cmd, &ir, &out, &dir, Some(order.render()))? {
                    return Ok(CompileOutcome::OptimizerFailure(log));
                }
                out
            };
            let linked = dir.join("linked.bc");
            if let Err(log) = self.stage(&self.spec.linker_cmd, &optimized, &linked, &dir, None)? {
                return Ok(CompileOutcome::CodegenFailure(log));
            }
            let code = dir.join("kernel.out");
            if let Err(log) = self.stage(&self.spec.codegen_cmd, &linked, &code, &dir, None)? {
                return Ok(CompileOutcome::CodegenFailure(log));
            }
            let content = std::fs::read(&code).map_err(|e| Error::io(&code, e))?;
            Ok(CompileOutcome::Ok(Artifact::new(content)))
        })();
        let _ = std::fs::remove_dir_all(&dir);
        result
    }

    fn execute(
        &self,
        kernel: &KernelCase,
        artifact: &Artifact,
        input: InputKind,
    ) -> Result<ExecutionOutcome> {
        let dir = self.job_dir(kernel, "run")?;
        let path = dir.join("kernel.out");
        std::fs::write(&path, artifact.content()).map_err(|e| Error::io(&path, e))?;
        let cmd = substitute(
            &self.spec.runner_cmd,
            &[
                ("{artifact}", shell_quote(&path.to_string_lossy())),
                ("{data}", shell_quote(&kernel.input_descriptor(input))),
                ("{kind}", input.name().to_string()),
            ],
        );
        let run = run_shell(&cmd, &dir, Duration::from_secs_f64(self.spec.exec_timeout_s));
        let _ = std::fs::remove_dir_all(&dir);
        let run = run?;

        if run.timed_out() {
            return Ok(ExecutionOutcome::failed(ExecStatus::Timeout));
        }
        let text = String::from_utf8_lossy(&run.stdout);
        if !run.success() && text.trim().is_empty() {
            return Ok(ExecutionOutcome::failed(ExecStatus::Crash));
        }
        Ok(match parse_report(&text) {
            Some(report) => ExecutionOutcome {
                status: ExecStatus::Valid,
                wall_time: Some(report.time),
                outputs: Some(report.outputs),
            },
            None => ExecutionOutcome::failed(ExecStatus::BrokenReport),
        })
    }

    fn measurement_token(&self) -> MutexGuard<'_, ()> {
        lock_token(&self.token)
    }
}
