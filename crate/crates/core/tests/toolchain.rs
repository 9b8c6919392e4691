#![cfg(unix)]

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use phaseforge::backend::{
    Artifact, Backend, CompileOutcome, ExecStatus, InputKind, KernelCase, KernelSource, Toolchain,
    ToolchainSpec,
};
use phaseforge::catalog::{parse_phase_order, PassCatalog, PhaseOrder};
use phaseforge::explorer::{explore, finalize, reduce_order, ExplorationConfig};
use tempfile::TempDir;

const SOURCE: &str = "__kernel void k() {}\n";

// Appends the pass list to the input, so each order yields distinct code.
const OPT: &str = r#"in=$1; out=$2; shift 2; { cat "$in"; echo "$@"; } > "$out""#;

// Twice as fast when the code was built with licm.
const RUN: &str = r#"if grep -q licm "$1"; then t=0.5; else t=1.0; fi
printf 'TIME %s\nOUT 2\n3.0\n4.0\n' "$t""#;

fn q(p: &Path) -> String {
    format!("'{}'", p.display())
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        std::fs::write(dir.path().join("opt.sh"), OPT).unwrap();
        std::fs::write(dir.path().join("run.sh"), RUN).unwrap();
        std::fs::write(dir.path().join("kernel.cl"), SOURCE).unwrap();
        Fixture { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn spec(&self) -> ToolchainSpec {
        ToolchainSpec {
            frontend_cmd: "cp {input} {output}".into(),
            optimizer_cmd: format!("sh {} {{input}} {{output}} {{passes}}", q(&self.path("opt.sh"))),
            linker_cmd: "cp {input} {output}".into(),
            codegen_cmd: "cp {input} {output}".into(),
            runner_cmd: format!("sh {} {{artifact}} {{data}}", q(&self.path("run.sh"))),
            work_dir: self.path("work"),
            exec_timeout_s: 5.0,
            compile_timeout_s: 10.0,
        }
    }

    fn kernel(&self) -> KernelCase {
        KernelCase {
            id: "k".into(),
            source: KernelSource::Path(self.path("kernel.cl")),
            validation_input: "small".into(),
            measurement_input: "large".into(),
            reference_outputs: vec![3.0, 4.0],
        }
    }
}

fn order(text: &str) -> PhaseOrder {
    parse_phase_order(text).unwrap()
}

#[test]
fn empty_order_skips_optimizer() {
    let fx = Fixture::new();
    let tc = Toolchain::new(fx.spec()).unwrap();
    let CompileOutcome::Ok(a) = tc.compile(&fx.kernel(), &PhaseOrder::empty()).unwrap() else {
        panic!("baseline compile failed");
    };
    // frontend, linker and codegen are all copies here.
    assert_eq!(a.digest(), Artifact::new(SOURCE.as_bytes().to_vec()).digest());
}

#[test]
fn compile_is_deterministic() {
    let fx = Fixture::new();
    let tc = Toolchain::new(fx.spec()).unwrap();
    let o = order("-licm -gvn");
    let a = tc.compile(&fx.kernel(), &o).unwrap();
    let b = tc.compile(&fx.kernel(), &o).unwrap();
    assert_eq!(a.artifact().unwrap().digest(), b.artifact().unwrap().digest());
    let c = tc.compile(&fx.kernel(), &order("-gvn -licm")).unwrap();
    assert_ne!(a.artifact().unwrap().digest(), c.artifact().unwrap().digest());
}

#[test]
fn optimizer_crash() {
    let fx = Fixture::new();
    let mut spec = fx.spec();
    spec.optimizer_cmd = "exit 1; {input} {output} {passes}".into();
    let tc = Toolchain::new(spec).unwrap();
    assert!(matches!(
        tc.compile(&fx.kernel(), &order("-licm")).unwrap(),
        CompileOutcome::OptimizerFailure(_)
    ));
    // The baseline never reaches the optimizer.
    assert!(tc.compile(&fx.kernel(), &PhaseOrder::empty()).unwrap().artifact().is_some());
}

#[test]
fn codegen_crash() {
    let fx = Fixture::new();
    let mut spec = fx.spec();
    spec.codegen_cmd = "true {input} {output}".into();
    let tc = Toolchain::new(spec).unwrap();
    assert!(matches!(
        tc.compile(&fx.kernel(), &order("-licm")).unwrap(),
        CompileOutcome::CodegenFailure(_)
    ));
}

#[test]
fn frontend_failure_is_a_configuration_error() {
    let fx = Fixture::new();
    let mut spec = fx.spec();
    spec.frontend_cmd = "false {input} {output}".into();
    let tc = Toolchain::new(spec).unwrap();
    assert!(tc.compile(&fx.kernel(), &PhaseOrder::empty()).is_err());
}

fn run_with(fx: &Fixture, runner: &str, timeout: f64) -> (phaseforge::backend::ExecutionOutcome, Duration) {
    let mut spec = fx.spec();
    spec.runner_cmd = runner.into();
    spec.exec_timeout_s = timeout;
    let tc = Toolchain::new(spec).unwrap();
    let kernel = fx.kernel();
    let a = tc.compile(&kernel, &PhaseOrder::empty()).unwrap();
    let start = Instant::now();
    let out = tc.execute(&kernel, a.artifact().unwrap(), InputKind::Validation).unwrap();
    (out, start.elapsed())
}

#[test]
fn echo_runner_is_valid() {
    let fx = Fixture::new();
    let (out, _) = run_with(&fx, r"printf 'TIME 0.25\nOUT 2\n1.5\n-2\n' {artifact} {data}", 5.0);
    assert_eq!(out.status, ExecStatus::Valid);
    assert_eq!(out.wall_time, Some(0.25));
    assert_eq!(out.outputs, Some(vec![1.5, -2.0]));
}

#[test]
fn sleeping_runner_times_out() {
    let fx = Fixture::new();
    let (out, elapsed) = run_with(&fx, "sleep 30; echo {artifact} {data}", 0.3);
    assert_eq!(out.status, ExecStatus::Timeout);
    assert!(out.outputs.is_none());
    assert!(elapsed < Duration::from_secs(3), "took {elapsed:?}");
}

#[test]
fn background_children_are_killed() {
    let fx = Fixture::new();
    let (out, elapsed) = run_with(&fx, "(sleep 30 &); sleep 30; echo {artifact} {data}", 0.3);
    assert_eq!(out.status, ExecStatus::Timeout);
    assert!(elapsed < Duration::from_secs(3), "took {elapsed:?}");
}

#[test]
fn garbage_report_is_broken() {
    let fx = Fixture::new();
    let (out, _) = run_with(&fx, "echo hello {artifact} {data}", 5.0);
    assert_eq!(out.status, ExecStatus::BrokenReport);
    let (out, _) = run_with(&fx, r"printf 'TIME 1\nOUT 3\n1\n' {artifact} {data}", 5.0);
    assert_eq!(out.status, ExecStatus::BrokenReport);
}

#[test]
fn silent_crash() {
    let fx = Fixture::new();
    let (out, _) = run_with(&fx, "exit 3; {artifact} {data}", 5.0);
    assert_eq!(out.status, ExecStatus::Crash);
}

#[test]
fn runner_sees_input_descriptor() {
    let fx = Fixture::new();
    let runner = r#"[ {data} = large ] && t=2 || t=1; printf 'TIME %s\nOUT 0\n' $t # {artifact}"#;
    let mut spec = fx.spec();
    spec.runner_cmd = runner.into();
    let tc = Toolchain::new(spec).unwrap();
    let kernel = fx.kernel();
    let a = tc.compile(&kernel, &PhaseOrder::empty()).unwrap();
    let a = a.artifact().unwrap();
    assert_eq!(tc.execute(&kernel, a, InputKind::Validation).unwrap().wall_time, Some(1.0));
    assert_eq!(tc.execute(&kernel, a, InputKind::Measurement).unwrap().wall_time, Some(2.0));
}

#[test]
fn explore_and_reduce_end_to_end() {
    let fx = Fixture::new();
    let tc = Toolchain::new(fx.spec()).unwrap();
    let kernel = fx.kernel();
    let catalog = PassCatalog::from_names(["licm", "gvn"]).unwrap();
    let config = ExplorationConfig {
        num_sequences: 8,
        max_len: 3,
        top_k: 2,
        final_reps: 2,
        final_random_inputs: 2,
        ..ExplorationConfig::default()
    };
    let records = explore(&kernel, &catalog, &config, &tc).unwrap();
    assert_eq!(records.len(), 8);
    let best = finalize(&kernel, &records, &config, &tc).unwrap();
    assert!(best.order.passes().iter().any(|p| p.as_str() == "licm"));
    assert!((best.mean_time - 0.5).abs() < 1e-9);
    let reduced = reduce_order(&kernel, &best.order, &tc, 0.01, config.tolerance()).unwrap();
    assert_eq!(reduced, order("-licm"));
}
