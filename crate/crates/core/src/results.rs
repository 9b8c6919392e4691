//! Record storage and reporting.
//!
//! All exports are byte-stable for identical input: map keys are sorted and
//! times are written with six fractional digits.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize, Serializer};

use crate::catalog::parse_phase_order;
use crate::error::{Error, Result};
use crate::explorer::{EvaluationRecord, KnowledgeBase, RecordStatus};

pub(crate) fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

pub(crate) fn serialize_fixed6<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(round6(*v))
}

fn fixed6(v: f64) -> String {
    format!("{v:.6}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::InvalidArgument(format!("unknown format {other:?}"))),
        }
    }
}

/// Something that can be written as CSV and JSON.
pub trait Export {
    fn to_csv(&self) -> Result<String>;
    fn to_json(&self) -> Result<String>;
}

pub fn export(item: &dyn Export, path: impl AsRef<Path>, format: Format) -> Result<()> {
    let path = path.as_ref();
    let text = match format {
        Format::Csv => item.to_csv()?,
        Format::Json => item.to_json()?,
    };
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn json_string<T: Serialize>(value: &T, what: &str) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::json(what, e))?;
    s.push('\n');
    Ok(s)
}

fn csv_string(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header).map_err(|e| Error::csv("writing CSV", e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| Error::csv("writing CSV", e))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format {
        what: "CSV",
        detail: e.to_string(),
    })?;
    Ok(String::from_utf8(bytes).expect("CSV output is UTF-8"))
}

pub const RECORD_HEADER: [&str; 6] = [
    "kernel_id",
    "eval_index",
    "order_text",
    "digest",
    "status",
    "wall_time_s",
];

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RecordRow {
    kernel_id: String,
    eval_index: usize,
    order_text: String,
    digest: String,
    status: String,
    wall_time_s: String,
}

impl From<&EvaluationRecord> for RecordRow {
    fn from(r: &EvaluationRecord) -> Self {
        RecordRow {
            kernel_id: r.kernel_id.clone(),
            eval_index: r.eval_index,
            order_text: r.order.render(),
            digest: r.artifact_digest.clone().unwrap_or_default(),
            status: r.status.name().to_string(),
            wall_time_s: r.wall_time.map(fixed6).unwrap_or_default(),
        }
    }
}

impl RecordRow {
    fn into_record(self) -> Result<EvaluationRecord> {
        let bad = |detail: String| Error::Format {
            what: "record",
            detail,
        };
        let digest = (!self.digest.is_empty()).then_some(self.digest);
        let status = match self.status.as_str() {
            "Valid" => RecordStatus::Valid,
            "InvalidOutput" => RecordStatus::InvalidOutput,
            "Timeout" => RecordStatus::Timeout,
            "Crash" => RecordStatus::Crash,
            "BrokenReport" => RecordStatus::BrokenReport,
            "NoIr" => RecordStatus::NoIr,
            "ReusedFrom" => RecordStatus::ReusedFrom(
                digest
                    .clone()
                    .ok_or_else(|| bad("ReusedFrom record without digest".into()))?,
            ),
            other => return Err(bad(format!("unknown status {other:?}"))),
        };
        let wall_time = if self.wall_time_s.is_empty() {
            None
        } else {
            Some(
                self.wall_time_s
                    .parse::<f64>()
                    .map_err(|_| bad(format!("bad wall time {:?}", self.wall_time_s)))?,
            )
        };
        Ok(EvaluationRecord {
            kernel_id: self.kernel_id,
            order: parse_phase_order(&self.order_text)?,
            artifact_digest: digest,
            status,
            wall_time,
            eval_index: self.eval_index,
        })
    }
}

/// Append-only record log with a `(kernel, digest)` index pointing at the
/// first record carrying that digest.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultsStore {
    records: Vec<EvaluationRecord>,
    index: HashMap<(String, String), usize>,
}

impl ResultsStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a record and returns its ordinal.
    pub fn append(&mut self, record: EvaluationRecord) -> usize {
        let ordinal = self.records.len();
        if let Some(d) = &record.artifact_digest {
            self.index
                .entry((record.kernel_id.clone(), d.clone()))
                .or_insert(ordinal);
        }
        self.records.push(record);
        ordinal
    }

    pub fn extend(&mut self, records: impl IntoIterator<Item = EvaluationRecord>) {
        for r in records {
            self.append(r);
        }
    }

    pub fn records(&self) -> &[EvaluationRecord] {
        &self.records
    }

    pub fn get(&self, ordinal: usize) -> Option<&EvaluationRecord> {
        self.records.get(ordinal)
    }

    pub fn lookup(&self, kernel_id: &str, digest: &str) -> Option<&EvaluationRecord> {
        self.index
            .get(&(kernel_id.to_string(), digest.to_string()))
            .map(|&i| &self.records[i])
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
        let header = reader.headers().map_err(|e| Error::csv("records header", e))?;
        if header.iter().ne(RECORD_HEADER) {
            return Err(Error::Format {
                what: "records CSV",
                detail: format!("unexpected header {header:?}"),
            });
        }
        let mut store = ResultsStore::new();
        for row in reader.deserialize::<RecordRow>() {
            store.append(row.map_err(|e| Error::csv("records row", e))?.into_record()?);
        }
        Ok(store)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ResultsStore::from_csv(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rows: Vec<RecordRow> = serde_json::from_str(text).map_err(|e| Error::json("records", e))?;
        let mut store = ResultsStore::new();
        for row in rows {
            store.append(row.into_record()?);
        }
        Ok(store)
    }
}

impl Export for ResultsStore {
    fn to_csv(&self) -> Result<String> {
        csv_string(
            &RECORD_HEADER,
            self.records.iter().map(|r| {
                let row = RecordRow::from(r);
                vec![
                    row.kernel_id,
                    row.eval_index.to_string(),
                    row.order_text,
                    row.digest,
                    row.status,
                    row.wall_time_s,
                ]
            }),
        )
    }

    fn to_json(&self) -> Result<String> {
        let rows: Vec<RecordRow> = self.records.iter().map(RecordRow::from).collect();
        json_string(&rows, "records")
    }
}

/// `exp(mean(ln v))`. Errors on an empty list or a non-positive value.
pub fn geometric_mean(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("geometric mean of no values".into()));
    }
    if let Some(v) = values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidArgument(format!(
            "geometric mean needs positive values, got {v}"
        )));
    }
    Ok((values.iter().map(|v| v.ln()).sum::<f64>() / values.len() as f64).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpeedup {
    #[serde(serialize_with = "serialize_fixed6")]
    pub baseline_time: f64,
    #[serde(serialize_with = "serialize_fixed6")]
    pub best_time: f64,
    #[serde(serialize_with = "serialize_fixed6")]
    pub speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupReport {
    pub per_kernel: BTreeMap<String, KernelSpeedup>,
    #[serde(serialize_with = "serialize_fixed6")]
    pub geomean: f64,
}

impl SpeedupReport {
    /// Builds a report from `(kernel, baseline_time, best_time)` triples.
    pub fn new<I, S>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, f64, f64)>,
        S: Into<String>,
    {
        let mut per_kernel = BTreeMap::new();
        for (id, baseline_time, best_time) in rows {
            if !(best_time > 0.0 && baseline_time > 0.0) {
                return Err(Error::InvalidArgument("speedup needs positive times".into()));
            }
            per_kernel.insert(
                id.into(),
                KernelSpeedup {
                    baseline_time,
                    best_time,
                    speedup: baseline_time / best_time,
                },
            );
        }
        let speedups: Vec<f64> = per_kernel.values().map(|k| k.speedup).collect();
        let geomean = geometric_mean(&speedups)?;
        Ok(SpeedupReport {
            per_kernel,
            geomean,
        })
    }

    pub fn from_kb(kb: &KnowledgeBase) -> Result<Self> {
        SpeedupReport::new(
            kb.entries
                .iter()
                .map(|(id, e)| (id.clone(), e.baseline_time, e.best_time)),
        )
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::json("speedup report", e))
    }
}

impl Export for SpeedupReport {
    fn to_csv(&self) -> Result<String> {
        let mut rows: Vec<Vec<String>> = self
            .per_kernel
            .iter()
            .map(|(id, k)| {
                vec![
                    id.clone(),
                    fixed6(k.baseline_time),
                    fixed6(k.best_time),
                    fixed6(k.speedup),
                ]
            })
            .collect();
        rows.push(vec!["GEOMEAN".into(), String::new(), String::new(), fixed6(self.geomean)]);
        csv_string(&["kernel_id", "baseline_time_s", "best_time_s", "speedup"], rows)
    }

    fn to_json(&self) -> Result<String> {
        json_string(self, "speedup report")
    }
}

/// Fraction of records per status. Reused records count under the status
/// of the record they reuse.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FailureSummary(pub BTreeMap<String, f64>);

impl FailureSummary {
    pub fn fraction(&self, status: &str) -> f64 {
        self.0.get(status).copied().unwrap_or(0.0)
    }
}

pub fn failure_summary(store: &ResultsStore, kernel: Option<&str>) -> FailureSummary {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut total = 0usize;
    for r in store.records() {
        if kernel.is_some_and(|k| k != r.kernel_id) {
            continue;
        }
        let status = match &r.status {
            RecordStatus::ReusedFrom(d) => store
                .lookup(&r.kernel_id, d)
                .map(|orig| orig.status.name())
                .unwrap_or("ReusedFrom"),
            s => s.name(),
        };
        *counts.entry(status.to_string()).or_default() += 1;
        total += 1;
    }
    FailureSummary(
        counts
            .into_iter()
            .map(|(k, c)| (k, c as f64 / total as f64))
            .collect(),
    )
}

impl Export for FailureSummary {
    fn to_csv(&self) -> Result<String> {
        csv_string(
            &["status", "fraction"],
            self.0.iter().map(|(k, v)| vec![k.clone(), fixed6(*v)]),
        )
    }

    fn to_json(&self) -> Result<String> {
        let rounded: BTreeMap<&String, f64> = self.0.iter().map(|(k, v)| (k, round6(*v))).collect();
        json_string(&rounded, "failure summary")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CrossCell {
    /// Raw `best_time / time`; may exceed 1 slightly because of noise.
    Ratio(f64),
    Failed,
}

impl CrossCell {
    /// Ratio clamped to `[0, 1]` for display.
    pub fn clamped(&self) -> Option<f64> {
        match self {
            CrossCell::Ratio(r) => Some(r.clamp(0.0, 1.0)),
            CrossCell::Failed => None,
        }
    }
}

impl Serialize for CrossCell {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            CrossCell::Ratio(r) => s.serialize_f64(round6(*r)),
            CrossCell::Failed => s.serialize_str("FAIL"),
        }
    }
}

impl<'de> Deserialize<'de> for CrossCell {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(CrossCell::Ratio(v)),
            Raw::Text(t) if t == "FAIL" => Ok(CrossCell::Failed),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("bad cell {t:?}"))),
        }
    }
}

/// Rows are sequence owners, columns the kernels the sequences were applied to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossMatrix {
    pub owners: Vec<String>,
    pub kernels: Vec<String>,
    pub cells: Vec<Vec<CrossCell>>,
}

impl CrossMatrix {
    pub fn cell(&self, owner: usize, kernel: usize) -> CrossCell {
        self.cells[owner][kernel]
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::json("matrix", e))
    }
}

impl Export for CrossMatrix {
    /// Ratios are clamped to `[0, 1]` here; failures are written as `FAIL`.
    fn to_csv(&self) -> Result<String> {
        let mut header = vec!["owner"];
        header.extend(self.kernels.iter().map(String::as_str));
        csv_string(
            &header,
            self.owners.iter().zip(&self.cells).map(|(owner, row)| {
                let mut out = vec![owner.clone()];
                out.extend(row.iter().map(|c| match c.clamped() {
                    Some(v) => fixed6(v),
                    None => "FAIL".to_string(),
                }));
                out
            }),
        )
    }

    fn to_json(&self) -> Result<String> {
        json_string(self, "matrix")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBucket {
    pub low: f64,
    pub high: f64,
    pub percent: f64,
}

/// Distribution of `best_time / time` over permutations of one order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub buckets: Vec<HistogramBucket>,
    /// Share of permutations that failed to compile, validate or run.
    pub failed_percent: f64,
}

impl Histogram {
    /// Percentage of permutations whose ratio falls below `threshold`
    /// (failures included), counted from the bucket boundaries.
    pub fn percent_below(&self, threshold: f64) -> f64 {
        self.failed_percent
            + self
                .buckets
                .iter()
                .filter(|b| b.high <= threshold + 1e-12)
                .map(|b| b.percent)
                .sum::<f64>()
    }
}

/// Buckets the speedup ratio of each permutation record relative to
/// `best_time` into `[0, 1]` bands of `bucket_width`. Ratios above 1 land in
/// the top band. All records must share one kernel and one pass multiset.
pub fn permutation_histogram(
    records: &[EvaluationRecord],
    best_time: f64,
    bucket_width: f64,
) -> Result<Histogram> {
    if !(bucket_width > 0.0 && bucket_width <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "bucket width {bucket_width} outside (0, 1]"
        )));
    }
    if !(best_time > 0.0 && best_time.is_finite()) {
        return Err(Error::InvalidArgument("best time must be positive".into()));
    }
    if let Some(first) = records.first() {
        let ms = first.order.multiset();
        let kernels: HashSet<&str> = records.iter().map(|r| r.kernel_id.as_str()).collect();
        if kernels.len() > 1 {
            return Err(Error::InvalidArgument("records span several kernels".into()));
        }
        if records.iter().any(|r| r.order.multiset() != ms) {
            return Err(Error::InvalidArgument(
                "records are not permutations of one order".into(),
            ));
        }
    }

    let n = ((1.0 / bucket_width) - 1e-9).ceil().max(1.0) as usize;
    let mut counts = vec![0usize; n];
    let mut failed = 0usize;
    for r in records {
        match r.wall_time.filter(|_| r.is_timed_valid()) {
            Some(t) => {
                let ratio = (best_time / t).clamp(0.0, 1.0);
                let b = ((ratio / bucket_width) + 1e-9).floor() as usize;
                counts[b.min(n - 1)] += 1;
            }
            None => failed += 1,
        }
    }
    let total = records.len().max(1) as f64;
    let buckets = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| HistogramBucket {
            low: i as f64 * bucket_width,
            high: ((i + 1) as f64 * bucket_width).min(1.0),
            percent: 100.0 * c as f64 / total,
        })
        .collect();
    Ok(Histogram {
        buckets,
        failed_percent: 100.0 * failed as f64 / total,
    })
}

impl Export for Histogram {
    fn to_csv(&self) -> Result<String> {
        let mut rows: Vec<Vec<String>> = self
            .buckets
            .iter()
            .map(|b| vec![fixed6(b.low), fixed6(b.high), fixed6(b.percent)])
            .collect();
        rows.push(vec!["FAIL".into(), "FAIL".into(), fixed6(self.failed_percent)]);
        csv_string(&["bucket_low", "bucket_high", "percent"], rows)
    }

    fn to_json(&self) -> Result<String> {
        json_string(self, "histogram")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::PhaseOrder;

    fn rec(kernel: &str, order: &str, status: RecordStatus, digest: Option<&str>, t: Option<f64>, i: usize) -> EvaluationRecord {
        EvaluationRecord {
            kernel_id: kernel.into(),
            order: parse_phase_order(order).unwrap(),
            artifact_digest: digest.map(String::from),
            status,
            wall_time: t,
            eval_index: i,
        }
    }

    #[test]
    fn geomean_examples() {
        assert!((geometric_mean(&[2.0, 8.0]).unwrap() - 4.0).abs() < 1e-12);
        assert_eq!(geometric_mean(&[3.5]).unwrap(), 3.5);
        assert!(geometric_mean(&[]).is_err());
        assert!(geometric_mean(&[1.0, 0.0]).is_err());
        assert!(geometric_mean(&[1.0, -2.0]).is_err());
    }

    #[test]
    fn summary_counts_statuses() {
        let mut store = ResultsStore::new();
        for i in 0..3 {
            store.append(rec("k", "-a", RecordStatus::Valid, Some(&format!("d{i}")), Some(1.0), i));
        }
        store.append(rec("k", "-b", RecordStatus::Timeout, Some("d9"), None, 3));
        let s = failure_summary(&store, None);
        assert_eq!(s.0.len(), 2);
        assert_eq!(s.fraction("Valid"), 0.75);
        assert_eq!(s.fraction("Timeout"), 0.25);
        assert!(failure_summary(&store, Some("other")).0.is_empty());
    }

    #[test]
    fn summary_resolves_reuse() {
        let mut store = ResultsStore::new();
        store.append(rec("k", "-a", RecordStatus::BrokenReport, Some("d"), None, 0));
        store.append(rec("k", "-a -n", RecordStatus::ReusedFrom("d".into()), Some("d"), None, 1));
        assert_eq!(failure_summary(&store, Some("k")).fraction("BrokenReport"), 1.0);
    }

    #[test]
    fn store_index_and_append_only() {
        let mut store = ResultsStore::new();
        let a = store.append(rec("k", "-a", RecordStatus::Valid, Some("d"), Some(1.0), 0));
        let b = store.append(rec("k", "-a -n", RecordStatus::ReusedFrom("d".into()), Some("d"), Some(1.0), 1));
        assert_eq!((a, b), (0, 1));
        assert_eq!(store.lookup("k", "d").unwrap().eval_index, 0);
        assert!(store.lookup("j", "d").is_none());
    }

    #[test]
    fn store_csv_roundtrip() {
        let mut store = ResultsStore::new();
        store.append(rec("k", "-a -b", RecordStatus::Valid, Some("d1"), Some(0.123456), 0));
        store.append(rec("k", "-a -b -n", RecordStatus::ReusedFrom("d1".into()), Some("d1"), Some(0.123456), 1));
        store.append(rec("k", "-c", RecordStatus::NoIr, None, None, 2));
        store.append(rec("k", "", RecordStatus::Valid, Some("d0"), Some(1.0), 3));
        let csv = store.to_csv().unwrap();
        assert!(csv.starts_with("kernel_id,eval_index,order_text,digest,status,wall_time_s\n"));
        assert!(csv.contains("k,0,-a -b,d1,Valid,0.123456\n"));
        assert!(csv.contains("k,2,-c,,NoIr,\n"));
        let back = ResultsStore::from_csv(&csv).unwrap();
        assert_eq!(back, store);
        assert_eq!(back.to_csv().unwrap(), csv);
        assert_eq!(ResultsStore::from_json(&store.to_json().unwrap()).unwrap(), store);
    }

    #[test]
    fn empty_store_is_header_only() {
        assert_eq!(
            ResultsStore::new().to_csv().unwrap(),
            "kernel_id,eval_index,order_text,digest,status,wall_time_s\n"
        );
    }

    #[test]
    fn histogram_single_bucket() {
        let recs: Vec<_> = ["-a -b", "-b -a"]
            .iter()
            .enumerate()
            .map(|(i, o)| rec("k", o, RecordStatus::Valid, Some(o), Some(2.0), i))
            .collect();
        let h = permutation_histogram(&recs, 2.0, 0.05).unwrap();
        assert_eq!(h.buckets.len(), 20);
        let top = h.buckets.last().unwrap();
        assert_eq!((top.high, top.percent), (1.0, 100.0));
        assert_eq!(h.failed_percent, 0.0);
    }

    #[test]
    fn histogram_mixed_and_errors() {
        let recs = vec![
            rec("k", "-a -b", RecordStatus::Valid, Some("x"), Some(1.0), 0),
            rec("k", "-b -a", RecordStatus::Valid, Some("y"), Some(4.0), 1),
            rec("k", "-a -b", RecordStatus::InvalidOutput, Some("z"), None, 2),
        ];
        let h = permutation_histogram(&recs, 1.0, 0.1).unwrap();
        let total: f64 = h.buckets.iter().map(|b| b.percent).sum::<f64>() + h.failed_percent;
        assert!((total - 100.0).abs() < 1e-9);
        assert!((h.buckets[2].percent - 100.0 / 3.0).abs() < 1e-9); // ratio 0.25
        assert!((h.percent_below(0.95) - 200.0 / 3.0).abs() < 1e-9);

        let mixed = vec![recs[0].clone(), rec("k", "-a -c", RecordStatus::Valid, Some("q"), Some(1.0), 3)];
        assert!(permutation_histogram(&mixed, 1.0, 0.1).is_err());
        let kernels = vec![recs[0].clone(), rec("j", "-b -a", RecordStatus::Valid, Some("q"), Some(1.0), 3)];
        assert!(permutation_histogram(&kernels, 1.0, 0.1).is_err());
        assert!(permutation_histogram(&recs, 1.0, 0.0).is_err());
    }

    #[test]
    fn matrix_exports() {
        let m = CrossMatrix {
            owners: vec!["a".into(), "b".into()],
            kernels: vec!["a".into(), "b".into()],
            cells: vec![
                vec![CrossCell::Ratio(1.003), CrossCell::Failed],
                vec![CrossCell::Ratio(0.5), CrossCell::Ratio(0.999)],
            ],
        };
        let csv = m.to_csv().unwrap();
        assert_eq!(csv, "owner,a,b\na,1.000000,FAIL\nb,0.500000,0.999000\n");
        assert_eq!(CrossMatrix::from_json(&m.to_json().unwrap()).unwrap(), m);
    }

    #[test]
    fn report_from_rows() {
        let r = SpeedupReport::new([("a", 2.0, 1.0), ("b", 8.0, 1.0)]).unwrap();
        assert!((r.geomean - 4.0).abs() < 1e-12);
        assert_eq!(r.per_kernel["a"].speedup, 2.0);
        let back = SpeedupReport::from_json(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
        assert!(r.to_csv().unwrap().ends_with("GEOMEAN,,,4.000000\n"));
    }

    #[test]
    fn export_is_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = ResultsStore::new();
        store.append(rec("k", "-a", RecordStatus::Valid, Some("d"), Some(0.3333333333), 0));
        let (p1, p2) = (dir.path().join("1.csv"), dir.path().join("2.csv"));
        export(&store, &p1, Format::Csv).unwrap();
        export(&store, &p2, Format::Csv).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        let err = export(&store, dir.path().join("missing/x.csv"), Format::Csv).unwrap_err();
        assert!(err.to_string().contains("missing"));
        let _ = PhaseOrder::empty();
    }

    proptest::proptest! {
        #[test]
        fn geomean_symmetric_and_homogeneous(
            mut v in proptest::collection::vec(0.01f64..100.0, 1..30),
            c in 0.01f64..100.0,
        ) {
            let g = geometric_mean(&v).unwrap();
            let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
            let gs = geometric_mean(&scaled).unwrap();
            proptest::prop_assert!((gs - c * g).abs() <= 1e-9 * (c * g).max(1.0));
            v.reverse();
            proptest::prop_assert!((geometric_mean(&v).unwrap() - g).abs() <= 1e-12 * g.max(1.0));
        }
    }
}
