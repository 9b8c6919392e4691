//! Static program features over a small line-oriented IR.
//!
//! Grammar (one statement per line, `#` starts a comment):
//!
//! ```text
//! func <name> {
//! <label>:
//!   phi <k>
//!   load | store | iadd | fadd | cmp | call | addr | other
//!   br <label> | condbr <l1> <l2> | switch <l1> <l2> ... | ret
//! }
//! ```
//!
//! `{`, `}` and `<label>:` may share a line with other statements, so
//! `func f { entry: ret }` is a complete module.

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, IrErrorKind, Result};

pub const FEATURE_COUNT: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InstKind {
    Load,
    Store,
    IntArith,
    FloatArith,
    Cmp,
    Call,
    Addr,
    Other,
}

impl InstKind {
    fn from_keyword(word: &str) -> Option<Self> {
        Some(match word {
            "load" => InstKind::Load,
            "store" => InstKind::Store,
            "iadd" => InstKind::IntArith,
            "fadd" => InstKind::FloatArith,
            "cmp" => InstKind::Cmp,
            "call" => InstKind::Call,
            "addr" => InstKind::Addr,
            "other" => InstKind::Other,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Terminator {
    Br(String),
    CondBr(String, String),
    Switch(Vec<String>),
    Ret,
}

impl Terminator {
    /// Distinct successor labels in first-mention order.
    pub fn successors(&self) -> Vec<&str> {
        let all: Vec<&str> = match self {
            Terminator::Br(t) => vec![t],
            Terminator::CondBr(a, b) => vec![a, b],
            Terminator::Switch(ts) => ts.iter().map(String::as_str).collect(),
            Terminator::Ret => vec![],
        };
        let mut seen = HashSet::new();
        all.into_iter().filter(|l| seen.insert(*l)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IrBlock {
    pub label: String,
    /// Argument count of each phi, in declaration order.
    pub phis: Vec<usize>,
    pub body: Vec<InstKind>,
    pub terminator: Terminator,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IrFunction {
    pub name: String,
    /// The first block is the entry block.
    pub blocks: Vec<IrBlock>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IrModule {
    pub functions: Vec<IrFunction>,
}

fn err(line: usize, kind: IrErrorKind) -> Error {
    Error::Ir { line, kind }
}

fn syntax(line: usize, msg: impl Into<String>) -> Error {
    err(line, IrErrorKind::Syntax(msg.into()))
}

fn valid_ident(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-' | '$'))
}

struct PendingBlock {
    label: String,
    line: usize,
    phis: Vec<usize>,
    body: Vec<InstKind>,
    terminator: Option<Terminator>,
}

struct PendingFunction {
    name: String,
    line: usize,
    blocks: Vec<(IrBlock, usize)>,
    current: Option<PendingBlock>,
    branch_refs: Vec<(String, usize)>,
}

impl PendingFunction {
    fn close_block(&mut self) -> Result<()> {
        if let Some(b) = self.current.take() {
            let Some(terminator) = b.terminator else {
                return Err(err(b.line, IrErrorKind::MissingTerminator(b.label)));
            };
            self.blocks.push((
                IrBlock {
                    label: b.label,
                    phis: b.phis,
                    body: b.body,
                    terminator,
                },
                b.line,
            ));
        }
        Ok(())
    }

    fn finish(mut self, close_line: usize) -> Result<IrFunction> {
        self.close_block()?;
        if self.blocks.is_empty() {
            return Err(syntax(close_line, format!("function {} has no blocks", self.name)));
        }
        let mut labels = HashSet::new();
        for (b, line) in &self.blocks {
            if !labels.insert(b.label.as_str()) {
                return Err(err(*line, IrErrorKind::DuplicateLabel(b.label.clone())));
            }
        }
        for (target, line) in &self.branch_refs {
            if !labels.contains(target.as_str()) {
                return Err(err(*line, IrErrorKind::UndefinedTarget(target.clone())));
            }
        }
        Ok(IrFunction {
            name: self.name,
            blocks: self.blocks.into_iter().map(|(b, _)| b).collect(),
        })
    }
}

/// Splits a line into tokens, detaching braces and label colons.
fn tokenize(line: &str) -> Vec<String> {
    let code = line.split('#').next().unwrap_or("");
    let mut tokens = Vec::new();
    for word in code.split_whitespace() {
        let mut rest = word;
        while !rest.is_empty() {
            if let Some(pos) = rest.find(['{', '}', ':']) {
                if pos > 0 {
                    tokens.push(rest[..pos].to_string());
                }
                tokens.push(rest[pos..pos + 1].to_string());
                rest = &rest[pos + 1..];
            } else {
                tokens.push(rest.to_string());
                break;
            }
        }
    }
    tokens
}

/// Parses IR-subset text into a validated module.
pub fn parse_ir(text: &str) -> Result<IrModule> {
    let mut functions: Vec<IrFunction> = Vec::new();
    let mut names = HashSet::new();
    let mut func: Option<PendingFunction> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let tokens = tokenize(raw);
        let mut i = 0;
        while i < tokens.len() {
            let tok = tokens[i].as_str();
            let next = tokens.get(i + 1).map(String::as_str);

            let Some(f) = func.as_mut() else {
                // Outside a function only `func <name> {` is allowed.
                if tok != "func" {
                    return Err(syntax(line, format!("expected `func`, found `{tok}`")));
                }
                let name = next.filter(|n| valid_ident(n)).ok_or_else(|| {
                    syntax(line, "expected function name after `func`")
                })?;
                if tokens.get(i + 2).map(String::as_str) != Some("{") {
                    return Err(syntax(line, "expected `{` after function name"));
                }
                if !names.insert(name.to_string()) {
                    return Err(err(line, IrErrorKind::DuplicateFunction(name.to_string())));
                }
                func = Some(PendingFunction {
                    name: name.to_string(),
                    line,
                    blocks: Vec::new(),
                    current: None,
                    branch_refs: Vec::new(),
                });
                i += 3;
                continue;
            };

            if tok == "}" {
                let f = func.take().unwrap();
                functions.push(f.finish(line)?);
                i += 1;
                continue;
            }
            if next == Some(":") {
                if !valid_ident(tok) {
                    return Err(syntax(line, format!("invalid label `{tok}`")));
                }
                f.close_block()?;
                f.current = Some(PendingBlock {
                    label: tok.to_string(),
                    line,
                    phis: Vec::new(),
                    body: Vec::new(),
                    terminator: None,
                });
                i += 2;
                continue;
            }

            let Some(block) = f.current.as_mut() else {
                return Err(syntax(line, format!("`{tok}` outside of a block")));
            };
            if block.terminator.is_some() {
                return Err(syntax(
                    line,
                    format!("`{tok}` after the terminator of block {}", block.label),
                ));
            }

            // Operands of a statement run to the end of the line or a `}`.
            let end = tokens[i + 1..]
                .iter()
                .position(|t| t == "}" || t == "{" || t == ":")
                .map_or(tokens.len(), |p| i + 1 + p);
            let mut operands: Vec<&str> = tokens[i + 1..end].iter().map(String::as_str).collect();
            // A trailing `label:` on the same line belongs to the next block.
            let mut stop = end;
            if end < tokens.len() && tokens[end] == ":" {
                operands.pop();
                stop = end - 1;
            }

            match tok {
                "phi" => {
                    if !block.body.is_empty() {
                        return Err(syntax(line, "phi after non-phi instruction"));
                    }
                    let [k] = operands[..] else {
                        return Err(syntax(line, "phi takes one argument count"));
                    };
                    let k = k
                        .parse::<usize>()
                        .map_err(|_| syntax(line, format!("bad phi argument count `{k}`")))?;
                    block.phis.push(k);
                }
                "br" => {
                    let [t] = operands[..] else {
                        return Err(syntax(line, "br takes one label"));
                    };
                    f.branch_refs.push((t.to_string(), line));
                    block.terminator = Some(Terminator::Br(t.to_string()));
                }
                "condbr" => {
                    let [a, b] = operands[..] else {
                        return Err(syntax(line, "condbr takes two labels"));
                    };
                    f.branch_refs.push((a.to_string(), line));
                    f.branch_refs.push((b.to_string(), line));
                    block.terminator = Some(Terminator::CondBr(a.to_string(), b.to_string()));
                }
                "switch" => {
                    if operands.is_empty() {
                        return Err(syntax(line, "switch needs at least one label"));
                    }
                    for t in &operands {
                        f.branch_refs.push((t.to_string(), line));
                    }
                    block.terminator = Some(Terminator::Switch(
                        operands.iter().map(|s| s.to_string()).collect(),
                    ));
                }
                "ret" => {
                    if !operands.is_empty() {
                        return Err(syntax(line, "ret takes no operands"));
                    }
                    block.terminator = Some(Terminator::Ret);
                }
                _ => {
                    let kind = InstKind::from_keyword(tok)
                        .ok_or_else(|| syntax(line, format!("unknown instruction `{tok}`")))?;
                    if !operands.is_empty() {
                        return Err(syntax(line, format!("`{tok}` takes no operands")));
                    }
                    block.body.push(kind);
                }
            }
            i = stop;
        }
    }

    if let Some(f) = func {
        return Err(syntax(f.line, format!("function {} is not closed", f.name)));
    }
    Ok(IrModule { functions })
}

/// Fixed-length static feature vector. See [`FeatureVector::NAMES`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub const NAMES: [&'static str; FEATURE_COUNT] = [
        "blocks",
        "blocks_1_succ",
        "blocks_2_succ",
        "blocks_many_succ",
        "blocks_1_pred",
        "blocks_2_pred",
        "blocks_many_pred",
        "blocks_1_pred_1_succ",
        "cfg_edges",
        "instructions",
        "avg_instructions_per_block",
        "phis",
        "blocks_with_phis",
        "avg_phi_args",
        "conditional_branches",
        "unconditional_branches",
        "loads",
        "stores",
        "int_arith",
        "float_arith",
        "calls",
        "compares",
        "address_computations",
        "functions",
    ];

    pub fn zeros() -> Self {
        FeatureVector(vec![0.0; FEATURE_COUNT])
    }

    /// Builds a vector from raw values. Values must be finite and
    /// non-negative, and there must be exactly [`FEATURE_COUNT`] of them.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.len() != FEATURE_COUNT {
            return Err(Error::InvalidArgument(format!(
                "feature vector needs {FEATURE_COUNT} values, got {}",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidArgument(format!("feature value {v} is not >= 0")));
        }
        Ok(FeatureVector(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// Feature `ftN`, 1-based.
    pub fn ft(&self, n: usize) -> f64 {
        self.0[n - 1]
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|v| *v == 0.0)
    }

    pub fn scaled(&self, c: f64) -> FeatureVector {
        FeatureVector(self.0.iter().map(|v| v * c).collect())
    }
}

/// Counts the static features of `module`, summed over all functions.
pub fn extract_features(module: &IrModule) -> FeatureVector {
    let mut f = [0.0f64; FEATURE_COUNT];
    let mut phi_args = 0usize;
    for func in &module.functions {
        let index: HashMap<&str, usize> = func
            .blocks
            .iter()
            .enumerate()
            .map(|(i, b)| (b.label.as_str(), i))
            .collect();
        let succs: Vec<BTreeSet<usize>> = func
            .blocks
            .iter()
            .map(|b| b.terminator.successors().iter().map(|l| index[l]).collect())
            .collect();
        let mut preds = vec![0usize; func.blocks.len()];
        for s in &succs {
            for &t in s {
                preds[t] += 1;
            }
        }

        for (i, b) in func.blocks.iter().enumerate() {
            let ns = succs[i].len();
            let np = preds[i];
            f[0] += 1.0;
            match ns {
                0 => {}
                1 => f[1] += 1.0,
                2 => f[2] += 1.0,
                _ => f[3] += 1.0,
            }
            match np {
                0 => {}
                1 => f[4] += 1.0,
                2 => f[5] += 1.0,
                _ => f[6] += 1.0,
            }
            if np == 1 && ns == 1 {
                f[7] += 1.0;
            }
            f[8] += ns as f64;
            f[9] += (b.body.len() + 1) as f64;
            f[11] += b.phis.len() as f64;
            if !b.phis.is_empty() {
                f[12] += 1.0;
            }
            phi_args += b.phis.iter().sum::<usize>();
            match b.terminator {
                Terminator::CondBr(..) | Terminator::Switch(_) => f[14] += 1.0,
                Terminator::Br(_) => f[15] += 1.0,
                Terminator::Ret => {}
            }
            for inst in &b.body {
                let slot = match inst {
                    InstKind::Load => 16,
                    InstKind::Store => 17,
                    InstKind::IntArith => 18,
                    InstKind::FloatArith => 19,
                    InstKind::Call => 20,
                    InstKind::Cmp => 21,
                    InstKind::Addr => 22,
                    InstKind::Other => continue,
                };
                f[slot] += 1.0;
            }
        }
        f[23] += 1.0;
    }
    f[10] = if f[0] > 0.0 { f[9] / f[0] } else { 0.0 };
    f[13] = if f[11] > 0.0 { phi_args as f64 / f[11] } else { 0.0 };
    FeatureVector(f.to_vec())
}

/// `1 - cos(a, b)`, clamped to `[0, 1]`. Errors if either vector is all zero.
pub fn cosine_distance(a: &FeatureVector, b: &FeatureVector) -> Result<f64> {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.0.iter().zip(&b.0) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateVector);
    }
    Ok((1.0 - dot / (na.sqrt() * nb.sqrt())).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(values: &[f64]) -> FeatureVector {
        let mut v = values.to_vec();
        v.resize(FEATURE_COUNT, 0.0);
        FeatureVector::from_values(v).unwrap()
    }

    #[test]
    fn minimal_function() {
        let m = parse_ir("func f { entry: ret }").unwrap();
        assert_eq!(m.functions.len(), 1);
        assert_eq!(m.functions[0].blocks.len(), 1);
        assert_eq!(extract_features(&m).ft(10), 1.0);
    }

    #[test]
    fn undefined_target() {
        let text = "func f {\na:\n  condbr a b\n}\n";
        match parse_ir(text) {
            Err(Error::Ir { line: 3, kind: IrErrorKind::UndefinedTarget(l) }) => assert_eq!(l, "b"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_label() {
        let text = "func f {\na:\n br a\na:\n ret\n}\n";
        assert!(matches!(
            parse_ir(text),
            Err(Error::Ir { line: 4, kind: IrErrorKind::DuplicateLabel(_) })
        ));
    }

    #[test]
    fn missing_terminator_and_syntax() {
        assert!(matches!(
            parse_ir("func f {\na:\n load\n}\n"),
            Err(Error::Ir { kind: IrErrorKind::MissingTerminator(_), .. })
        ));
        assert!(matches!(
            parse_ir("func f {\na:\n ret\n load\n}\n"),
            Err(Error::Ir { line: 4, kind: IrErrorKind::Syntax(_) })
        ));
        assert!(matches!(
            parse_ir("func f {\na:\n load\n phi 2\n ret\n}\n"),
            Err(Error::Ir { line: 4, .. })
        ));
        assert!(matches!(
            parse_ir("func f {\na:\n fmul\n ret\n}\n"),
            Err(Error::Ir { line: 3, .. })
        ));
        assert!(parse_ir("func f {\na:\n ret\n").is_err());
        assert!(parse_ir("func f {\n}\n").is_err());
        assert!(matches!(
            parse_ir("func f { a: ret }\nfunc f { a: ret }"),
            Err(Error::Ir { line: 2, kind: IrErrorKind::DuplicateFunction(_) })
        ));
    }

    #[test]
    fn three_block_cfg() {
        let text = "# diamond-ish\nfunc k {\nA:\n  condbr B C\nB:\n  br C\nC:\n  ret\n}\n";
        let f = extract_features(&parse_ir(text).unwrap());
        let mut want = [0.0; FEATURE_COUNT];
        want[0] = 3.0; // blocks
        want[1] = 1.0; // B: one successor
        want[2] = 1.0; // A: two successors
        want[4] = 1.0; // B: one predecessor
        want[5] = 1.0; // C: two predecessors
        want[7] = 1.0; // B: 1 pred and 1 succ
        want[8] = 3.0; // edges
        want[9] = 3.0; // terminators only
        want[10] = 1.0;
        want[14] = 1.0;
        want[15] = 1.0;
        want[23] = 1.0;
        assert_eq!(f.values(), &want[..]);
    }

    #[test]
    fn single_block_memory_ops() {
        let text = "func k {\nentry:\n load\n load\n store\n fadd\n ret\n}\n";
        let f = extract_features(&parse_ir(text).unwrap());
        assert_eq!(f.ft(17), 2.0);
        assert_eq!(f.ft(18), 1.0);
        assert_eq!(f.ft(20), 1.0);
        assert_eq!(f.ft(10), 5.0);
        assert_eq!(f.ft(11), 5.0);
    }

    #[test]
    fn phis_and_switch() {
        let text = "func k {\ne:\n switch a b b\na:\n phi 2\n phi 3\n iadd\n br b\nb:  # join\n phi 2\n ret\n}\n";
        let f = extract_features(&parse_ir(text).unwrap());
        assert_eq!(f.ft(12), 3.0);
        assert_eq!(f.ft(13), 2.0);
        assert!((f.ft(14) - 7.0 / 3.0).abs() < 1e-12);
        assert_eq!(f.ft(3), 1.0); // switch a b b has two distinct successors
        assert_eq!(f.ft(15), 1.0);
        assert_eq!(f.ft(9), 3.0);
        assert_eq!(f.ft(6), 1.0); // b has preds e and a
    }

    #[test]
    fn empty_module_is_zero() {
        let f = extract_features(&parse_ir("# nothing\n").unwrap());
        assert!(f.is_zero());
        assert_eq!(f.values().len(), FEATURE_COUNT);
    }

    #[test]
    fn cosine_examples() {
        let a = fv(&[3.0, 1.0, 2.0]);
        assert!(cosine_distance(&a, &a).unwrap().abs() < 1e-15);
        assert_eq!(cosine_distance(&fv(&[1.0]), &fv(&[0.0, 1.0])).unwrap(), 1.0);
        let d = cosine_distance(&fv(&[1.0, 1.0]), &fv(&[1.0])).unwrap();
        assert!((d - (1.0 - 1.0 / 2f64.sqrt())).abs() < 1e-12);
        assert!((d - 0.29289).abs() < 1e-5);
        assert!(matches!(
            cosine_distance(&FeatureVector::zeros(), &a),
            Err(Error::DegenerateVector)
        ));
    }

    #[test]
    fn rejects_bad_vectors() {
        assert!(FeatureVector::from_values(vec![1.0; 3]).is_err());
        let mut v = vec![0.0; FEATURE_COUNT];
        v[2] = -1.0;
        assert!(FeatureVector::from_values(v).is_err());
    }

    proptest::proptest! {
        #[test]
        fn cosine_scale_invariant_and_symmetric(
            a in proptest::collection::vec(0.0f64..100.0, FEATURE_COUNT),
            b in proptest::collection::vec(0.0f64..100.0, FEATURE_COUNT),
            c in 0.001f64..1000.0,
        ) {
            let a = FeatureVector::from_values(a).unwrap();
            let b = FeatureVector::from_values(b).unwrap();
            proptest::prop_assume!(!a.is_zero() && !b.is_zero());
            let d = cosine_distance(&a, &b).unwrap();
            proptest::prop_assert!((0.0..=1.0).contains(&d));
            proptest::prop_assert!((d - cosine_distance(&b, &a).unwrap()).abs() < 1e-12);
            proptest::prop_assert!((d - cosine_distance(&a.scaled(c), &b).unwrap()).abs() < 1e-12);
        }
    }
}
