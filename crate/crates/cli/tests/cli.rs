use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const CATALOG: &str = "a\nb\nc\nd\ne\nf\nnoop:z\n";

const IR_LOOP: &str = "func f {\nentry:\n  load\n  condbr body exit\nbody:\n  phi 2\n  fadd\n  br entry\nexit:\n  ret\n}\n";
const IR_STRAIGHT: &str = "func g {\nentry:\n  store\n  store\n  iadd\n  call\n  ret\n}\n";

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    /// Three kernels; k1 and k2 share features, k3 differs.
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        let p = dir.path();
        std::fs::write(p.join("catalog.txt"), CATALOG).unwrap();
        std::fs::write(p.join("loop.ir"), IR_LOOP).unwrap();
        std::fs::write(p.join("straight.ir"), IR_STRAIGHT).unwrap();
        std::fs::write(p.join("empty.ir"), "# nothing here\n").unwrap();
        let suite = r#"{
  "kernels": [
    { "id": "k1", "ir": "loop.ir",
      "model": { "baseline_time": 1.0, "motifs": [{ "passes": "-a -b", "multiplier": 0.5 }] } },
    { "id": "k2", "ir": "loop.ir",
      "model": { "baseline_time": 2.0, "motifs": [{ "passes": "-c -d -e", "multiplier": 0.6 }], "seed_salt": 7 } },
    { "id": "k3", "ir": "straight.ir",
      "model": { "baseline_time": 0.5, "motifs": [{ "passes": "-f", "multiplier": 0.7 }], "seed_salt": 9 } },
    { "id": "blank", "ir": "empty.ir", "model": { "baseline_time": 1.0 } }
  ]
}"#;
        std::fs::write(p.join("suite.json"), suite).unwrap();
        Workspace { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, out: &str, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_phaseforge"))
            .arg("--catalog")
            .arg(self.path("catalog.txt"))
            .arg("--suite")
            .arg(self.path("suite.json"))
            .arg("--out-dir")
            .arg(self.path(out))
            .args(["--final-reps", "3", "--final-random-inputs", "5"])
            .args(args)
            .env_remove("PHASEFORGE_TOOLCHAIN")
            .output()
            .unwrap()
    }

    fn explored(&self, out: &str) {
        let o = self.run(out, &["--num-sequences", "3000", "explore", "k1", "k2", "k3"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn explore_recovers_planted_motifs() {
    let ws = Workspace::new();
    ws.explored("out");
    let kb: serde_json::Value = serde_json::from_str(&read(&ws.path("out/kb.json"))).unwrap();
    assert_eq!(kb["entries"]["k1"]["best_order"], "-a -b");
    assert_eq!(kb["entries"]["k2"]["best_order"], "-c -d -e");
    assert_eq!(kb["entries"]["k3"]["best_order"], "-f");
    let speedup = kb["entries"]["k1"]["baseline_time"].as_f64().unwrap()
        / kb["entries"]["k1"]["best_time"].as_f64().unwrap();
    assert!((speedup - 2.0).abs() < 0.03, "{speedup}");
}

#[test]
fn one_sequence_gives_one_record_per_kernel() {
    let ws = Workspace::new();
    let o = ws.run("out", &["--num-sequences", "1", "explore", "k1", "k3"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = read(&ws.path("out/records.csv"));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "kernel_id,eval_index,order_text,digest,status,wall_time_s");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("k1,0,"));
    assert!(lines[2].starts_with("k3,0,"));
}

#[test]
fn configuration_errors_exit_1() {
    let ws = Workspace::new();
    let o = Command::new(env!("CARGO_BIN_EXE_phaseforge"))
        .args(["--catalog", "/nonexistent/catalog.txt", "--suite"])
        .arg(ws.path("suite.json"))
        .arg("--out-dir")
        .arg(ws.path("out"))
        .arg("explore")
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
    assert_eq!(code(&ws.run("out", &["--no-such-flag", "explore"])), 1);
    assert_eq!(code(&ws.run("out", &["explore", "unknown-kernel"])), 1);
    assert_eq!(code(&ws.run("out", &["--rtol", "1.5", "explore"])), 1);
    assert_eq!(code(&ws.run("out", &["--backend", "toolchain", "explore", "k1"])), 1);
    assert_eq!(code(&ws.run("out", &["experiments", "failures"])), 1);
    assert_eq!(code(&ws.run("out", &["--help"])), 0);
}

#[test]
fn empty_knowledge_base_exits_2() {
    let ws = Workspace::new();
    for args in [
        &["experiments", "cross-apply"][..],
        &["experiments", "permute"][..],
        &["experiments", "loo"][..],
        &["suggest", "k1"][..],
    ] {
        assert_eq!(code(&ws.run("fresh", args)), 2, "{args:?}");
    }
}

#[test]
fn suggest_ranks_identical_kernel_first() {
    let ws = Workspace::new();
    ws.explored("out");
    // Dry runs never build a backend, so a missing toolchain is fine.
    let o = ws.run("out", &["--backend", "toolchain", "suggest", "k3", "--k", "2", "--dry-run"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let first = text.lines().next().unwrap();
    assert!(first.starts_with("1\tk3\t0.000000\t-f"), "{text}");
    assert_eq!(text.lines().count(), 2);

    let o = ws.run("out", &["suggest", "k1", "--k", "3"]);
    assert_eq!(code(&o), 0);
    let curve: Vec<f64> = stdout(&o)
        .lines()
        .skip_while(|l| !l.starts_with("evaluations"))
        .skip(1)
        .map(|l| l.split('\t').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(curve.len(), 3);
    assert!(curve[2] >= curve[0]);

    assert_eq!(code(&ws.run("out", &["suggest", "blank"])), 2);
}

#[test]
fn experiments_write_their_files() {
    let ws = Workspace::new();
    ws.explored("out");

    let o = ws.run("out", &["experiments", "cross-apply"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let matrix = read(&ws.path("out/matrix.csv"));
    let rows: Vec<Vec<&str>> = matrix.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows[0], ["owner", "k1", "k2", "k3"]);
    assert_eq!(rows.len(), 4);
    for (i, row) in rows.iter().enumerate().skip(1) {
        let diag: f64 = row[i].parse().unwrap();
        assert!(diag >= 0.95, "{matrix}");
    }

    let o = ws.run("out", &["experiments", "permute", "k2", "--permutations", "100"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("k2\t6 permutations"), "{}", stdout(&o));
    let perm = read(&ws.path("out/permute.csv"));
    assert!(perm.starts_with("kernel_id,bucket_low,bucket_high,percent\n"));
    let total: f64 = perm.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap()).sum();
    assert!((total - 100.0).abs() < 1e-3);

    let o = ws.run("out", &["--trials", "200", "experiments", "loo"]);
    assert_eq!(code(&o), 0);
    let loo = read(&ws.path("out/loo.csv"));
    let value = |m: &str, n: usize| -> f64 {
        loo.lines()
            .find(|l| l.starts_with(&format!("{m},{n},")))
            .unwrap()
            .rsplit(',')
            .next()
            .unwrap()
            .parse()
            .unwrap()
    };
    // k_max = N - 1: both methods have tried every other order.
    assert!((value("knn", 2) - value("random", 2)).abs() < 1e-6, "{loo}");

    let o = ws.run("out", &["experiments", "failures"]);
    assert_eq!(code(&o), 0);
    let failures = read(&ws.path("out/failures.csv"));
    assert!(failures.starts_with("status,fraction\n"));
    assert!(failures.contains("Valid,1.000000"), "{failures}");
}

#[test]
fn repeated_runs_are_byte_identical() {
    let ws = Workspace::new();
    for out in ["r1", "r2"] {
        let o = ws.run(out, &["--num-sequences", "500", "explore"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for file in ["records.csv", "kb.json"] {
        assert_eq!(
            std::fs::read(ws.path(&format!("r1/{file}"))).unwrap(),
            std::fs::read(ws.path(&format!("r2/{file}"))).unwrap(),
            "{file}"
        );
    }
}
