//! Transfer backends and the analytic WAN cost model.
//!
//! The model charges every file a fixed handling cost, amortized over the
//! concurrent channels, plus its bytes at the shared link bandwidth:
//! `t = bytes / (B·1e6) + n·o / c`.

mod loopback;
mod simwan;

use std::fmt::Write as _;
use std::io::Read;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use loopback::Loopback;
pub use simwan::SimWan;

#[derive(Debug, Error)]
pub enum XferError {
    #[error("invalid WAN model: {0}")]
    InvalidModel(String),
    #[error("degenerate calibration system: {0}")]
    DegenerateSystem(String),
    #[error("bad calibration CSV at line {line}: {reason}")]
    CalibrationCsv { line: usize, reason: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("verification failed for {path}: destination differs from source")]
    VerifyFailed { path: String },
    #[error("unsafe destination path {0:?}")]
    UnsafePath(String),
    #[error("missing source for {0}")]
    MissingSource(String),
    #[error("transfer cancelled after {} of {total} files", .report.n_files)]
    Cancelled { report: TransferReport, total: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WanModel {
    /// MB/s, with 1 MB = 1e6 bytes.
    pub bandwidth_mbps: f64,
    pub per_file_overhead_s: f64,
    pub concurrency: u32,
}

impl WanModel {
    pub fn new(bandwidth_mbps: f64, per_file_overhead_s: f64, concurrency: u32) -> Result<Self, XferError> {
        let m = WanModel {
            bandwidth_mbps,
            per_file_overhead_s,
            concurrency,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), XferError> {
        if !(self.bandwidth_mbps > 0.0 && self.bandwidth_mbps.is_finite()) {
            return Err(XferError::InvalidModel(format!("bandwidth {}", self.bandwidth_mbps)));
        }
        if !(self.per_file_overhead_s >= 0.0 && self.per_file_overhead_s.is_finite()) {
            return Err(XferError::InvalidModel(format!("overhead {}", self.per_file_overhead_s)));
        }
        if self.concurrency == 0 {
            return Err(XferError::InvalidModel("concurrency 0".into()));
        }
        Ok(())
    }

    /// Link time of one file of `bytes` bytes.
    pub fn service_time(&self, bytes: u64) -> f64 {
        bytes as f64 / (self.bandwidth_mbps * 1e6) + self.per_file_overhead_s / self.concurrency as f64
    }

    pub fn estimate_time(&self, n_files: u64, total_bytes: u64) -> f64 {
        total_bytes as f64 / (self.bandwidth_mbps * 1e6)
            + n_files as f64 * self.per_file_overhead_s / self.concurrency as f64
    }

    pub fn with_concurrency(mut self, c: u32) -> Self {
        self.concurrency = c;
        self
    }
}

pub fn estimate_time(model: &WanModel, n_files: u64, total_bytes: u64) -> f64 {
    model.estimate_time(n_files, total_bytes)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub n_files: u64,
    pub total_bytes: u64,
    pub wall_s: f64,
}

/// Least-squares fit of `wall = bytes/B + n·o` with concurrency 1. A
/// negative coefficient is clamped to 0 and the other refitted alone.
pub fn calibrate(obs: &[Observation]) -> Result<WanModel, XferError> {
    let mut distinct: Vec<u64> = obs.iter().map(|o| o.n_files).collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(XferError::DegenerateSystem(format!(
            "need observations with at least 2 distinct file counts, got {}",
            distinct.len()
        )));
    }
    if let Some(o) = obs.iter().find(|o| !(o.wall_s.is_finite() && o.wall_s >= 0.0)) {
        return Err(XferError::DegenerateSystem(format!("bad wall time {}", o.wall_s)));
    }
    // megabytes keep the normal equations well scaled
    let (mut sbb, mut sbn, mut snn, mut sbw, mut snw) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for o in obs {
        let (b, n, w) = (o.total_bytes as f64 / 1e6, o.n_files as f64, o.wall_s);
        sbb += b * b;
        sbn += b * n;
        snn += n * n;
        sbw += b * w;
        snw += n * w;
    }
    let det = sbb * snn - sbn * sbn;
    if det.abs() <= 1e-12 * sbb * snn {
        return Err(XferError::DegenerateSystem("bytes and file counts are collinear".into()));
    }
    let mut inv_b = (sbw * snn - sbn * snw) / det;
    let mut o = (sbb * snw - sbn * sbw) / det;
    if o < 0.0 {
        o = 0.0;
        inv_b = sbw / sbb;
    } else if inv_b < 0.0 {
        inv_b = 0.0;
        o = snw / snn;
    }
    if !(inv_b > 0.0) {
        return Err(XferError::DegenerateSystem("fitted bandwidth is unbounded".into()));
    }
    WanModel::new(1.0 / inv_b, o, 1)
}

/// Reads `n_files,total_bytes,wall_s` rows after a header line.
pub fn read_observations<R: Read>(r: R) -> Result<Vec<Observation>, XferError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let bad = |line: usize, reason: String| XferError::CalibrationCsv { line, reason };
    let header: Vec<String> = rdr.headers().map_err(|e| bad(1, e.to_string()))?.iter().map(String::from).collect();
    if header != ["n_files", "total_bytes", "wall_s"] {
        return Err(bad(1, format!("expected header n_files,total_bytes,wall_s, got {}", header.join(","))));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| bad(line, e.to_string()))?;
        let field = |k: usize| rec.get(k).ok_or_else(|| bad(line, format!("missing column {k}")));
        out.push(Observation {
            n_files: field(0)?.parse().map_err(|e| bad(line, format!("n_files: {e}")))?,
            total_bytes: field(1)?.parse().map_err(|e| bad(line, format!("total_bytes: {e}")))?,
            wall_s: field(2)?.parse().map_err(|e| bad(line, format!("wall_s: {e}")))?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferItem {
    /// Destination path relative to the job's root.
    pub rel: String,
    pub bytes: u64,
    /// Local file to copy; simwan only copies when present.
    pub src: Option<PathBuf>,
    /// Earliest start, in the backend's time base.
    pub ready_s: f64,
}

impl TransferItem {
    pub fn file(rel: impl Into<String>, src: PathBuf, bytes: u64) -> Self {
        TransferItem {
            rel: rel.into(),
            bytes,
            src: Some(src),
            ready_s: 0.0,
        }
    }

    pub fn virtual_file(rel: impl Into<String>, bytes: u64) -> Self {
        TransferItem {
            rel: rel.into(),
            bytes,
            src: None,
            ready_s: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferJob {
    pub items: Vec<TransferItem>,
    pub dst_root: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferEvent {
    pub path: String,
    pub bytes: u64,
    pub start_s: f64,
    pub end_s: f64,
    pub channel: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub backend: String,
    pub bytes_moved: u64,
    pub n_files: usize,
    pub wall_s: f64,
    pub effective_mbps: f64,
    /// Ordered by completion time.
    pub events: Vec<TransferEvent>,
}

impl TransferReport {
    /// `wall_s` runs from `t0` to the last completion.
    pub fn from_events(backend: &str, t0: f64, mut events: Vec<TransferEvent>) -> Self {
        events.sort_by(|a, b| a.end_s.total_cmp(&b.end_s));
        let bytes_moved = events.iter().map(|e| e.bytes).sum();
        let wall_s = events.last().map_or(0.0, |e| e.end_s - t0);
        TransferReport {
            backend: backend.to_string(),
            bytes_moved,
            n_files: events.len(),
            wall_s,
            effective_mbps: if wall_s > 0.0 { bytes_moved as f64 / wall_s / 1e6 } else { 0.0 },
            events,
        }
    }

    pub const CSV_HEADER: &'static str = "path,bytes,start_s,end_s";

    pub fn events_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for e in &self.events {
            let _ = writeln!(s, "{},{},{},{}", csv_field(&e.path), e.bytes, e.start_s, e.end_s);
        }
        s
    }
}

/// Quotes a CSV field when needed.
pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Shared cancellation signal. `cancel` stops new files immediately;
/// `cancel_at` stops issuing files whose start time would be at or after a
/// deadline in the backend's time base.
#[derive(Debug, Clone)]
pub struct CancelToken {
    flag: Arc<AtomicBool>,
    deadline_bits: Arc<AtomicU64>,
}

impl Default for CancelToken {
    fn default() -> Self {
        CancelToken {
            flag: Arc::new(AtomicBool::new(false)),
            deadline_bits: Arc::new(AtomicU64::new(f64::INFINITY.to_bits())),
        }
    }
}

impl CancelToken {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cancel(&self) {
        self.flag.store(true, Ordering::SeqCst);
    }

    pub fn cancel_at(&self, t: f64) {
        self.deadline_bits.store(t.to_bits(), Ordering::SeqCst);
    }

    pub fn is_cancelled(&self) -> bool {
        self.flag.load(Ordering::SeqCst)
    }

    pub fn deadline(&self) -> f64 {
        f64::from_bits(self.deadline_bits.load(Ordering::SeqCst))
    }

    /// True if a file starting at `t` must not be issued.
    pub fn stops(&self, t: f64) -> bool {
        self.is_cancelled() || t >= self.deadline()
    }
}

/// A transfer service. Implementations tolerate `cancel` from another
/// thread while `transfer` runs.
pub trait TransferBackend: Send + Sync {
    fn name(&self) -> &'static str;

    /// Current time in this backend's time base.
    fn now(&self) -> f64;

    /// True when `now` is simulated rather than wall-clock time.
    fn is_virtual(&self) -> bool {
        false
    }

    fn transfer(&self, job: &TransferJob, cancel: &CancelToken) -> Result<TransferReport, XferError>;
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const MB: u64 = 1_000_000;

    fn table_rows() -> Vec<Observation> {
        vec![
            Observation { n_files: 300_000, total_bytes: 307_200 * MB, wall_s: 1235.0 },
            Observation { n_files: 3_000, total_bytes: 307_200 * MB, wall_s: 267.0 },
        ]
    }

    #[test]
    fn estimate_examples() {
        let m = WanModel::new(100.0, 0.0, 1).unwrap();
        assert_eq!(m.estimate_time(1, 100 * MB), 1.0);
        let m = WanModel::new(100.0, 0.5, 2).unwrap();
        assert!(m.estimate_time(20, 100 * MB) > m.estimate_time(10, 100 * MB));
        assert_eq!(m.estimate_time(4, 0), 1.0);
    }

    #[test]
    fn calibrates_two_row_system() {
        let m = calibrate(&table_rows()).unwrap();
        // 2×2 solve: o = (1235 − 267)/297000, B = 307200 / (267 − 3000·o)
        let o = 968.0 / 297_000.0;
        let b = 307_200.0 / (267.0 - 3000.0 * o);
        assert!((m.per_file_overhead_s - o).abs() / o < 1e-9);
        assert!((m.bandwidth_mbps - b).abs() / b < 1e-9);
        assert!((m.per_file_overhead_s - 3.26e-3).abs() / 3.26e-3 < 0.02);
        assert!((m.bandwidth_mbps - 1194.0).abs() / 1194.0 < 0.02);
        let t = m.estimate_time(30_000, 307_200 * MB);
        assert!((t - 325.0).abs() / 325.0 < 0.15, "{t}");
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(calibrate(&table_rows()[..1]), Err(XferError::DegenerateSystem(_))));
        let same = vec![table_rows()[0], Observation { wall_s: 900.0, ..table_rows()[0] }];
        assert!(matches!(calibrate(&same), Err(XferError::DegenerateSystem(_))));
        let collinear = vec![
            Observation { n_files: 1, total_bytes: MB, wall_s: 1.0 },
            Observation { n_files: 2, total_bytes: 2 * MB, wall_s: 2.0 },
        ];
        assert!(matches!(calibrate(&collinear), Err(XferError::DegenerateSystem(_))));
    }

    #[test]
    fn negative_overhead_is_clamped() {
        let obs = vec![
            Observation { n_files: 10, total_bytes: 100 * MB, wall_s: 1.0 },
            Observation { n_files: 1000, total_bytes: 100 * MB, wall_s: 0.9 },
        ];
        let m = calibrate(&obs).unwrap();
        assert_eq!(m.per_file_overhead_s, 0.0);
        assert!((m.bandwidth_mbps - 100.0 / 0.95).abs() < 1e-9);
    }

    #[test]
    fn csv_parsing() {
        let text = "n_files,total_bytes,wall_s\n300000,307200000000,1235\n3000, 307200000000 ,267\n";
        assert_eq!(read_observations(text.as_bytes()).unwrap(), table_rows());
        assert!(read_observations("a,b,c\n".as_bytes()).is_err());
        assert!(matches!(
            read_observations("n_files,total_bytes,wall_s\n1,x,2\n".as_bytes()),
            Err(XferError::CalibrationCsv { line: 2, .. })
        ));
    }

    #[test]
    fn cancel_token_semantics() {
        let t = CancelToken::new();
        assert!(!t.stops(1e9));
        t.cancel_at(5.0);
        assert!(!t.stops(4.99) && t.stops(5.0));
        let c = t.clone();
        c.cancel();
        assert!(t.stops(0.0));
        assert_eq!(CancelToken::default().deadline(), f64::INFINITY);
    }

    proptest! {
        #[test]
        fn calibrate_recovers_generating_model(
            b in 10.0f64..5000.0,
            o in 1e-5f64..1e-1,
            rows in prop::collection::vec((1u64..100_000, 1u64..1_000_000), 2..8),
        ) {
            let truth = WanModel::new(b, o, 1).unwrap();
            let mut obs: Vec<Observation> = rows
                .iter()
                .map(|&(n, mb)| Observation { n_files: n, total_bytes: mb * MB, wall_s: truth.estimate_time(n, mb * MB) })
                .collect();
            obs.push(Observation { n_files: rows[0].0 + 7, total_bytes: rows[0].1 * MB / 2 + MB, wall_s: 0.0 });
            let last = obs.last_mut().unwrap();
            last.wall_s = truth.estimate_time(last.n_files, last.total_bytes);
            let m = calibrate(&obs).unwrap();
            prop_assert!((m.bandwidth_mbps - b).abs() / b < 1e-6);
            prop_assert!((m.per_file_overhead_s - o).abs() / o < 1e-6);
        }

        #[test]
        fn estimate_is_monotone(n in 1u64..1_000_000, bytes in 0u64..1u64 << 40, dn in 0u64..1000, db in 0u64..1u64 << 30) {
            let m = WanModel::new(1194.0, 3.26e-3, 4).unwrap();
            prop_assert!(m.estimate_time(n + dn, bytes) >= m.estimate_time(n, bytes));
            prop_assert!(m.estimate_time(n, bytes + db) >= m.estimate_time(n, bytes));
        }
    }
}
