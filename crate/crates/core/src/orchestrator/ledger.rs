//! Timestamped run events and the aggregate timings derived from them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::Serialize;

use crate::xfer::csv_field;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Compress,
    GroupWritten,
    TransferRaw,
    TransferGroup,
    TransferSidecar,
    Decompress,
    Verify,
}

impl EventKind {
    pub fn name(self) -> &'static str {
        match self {
            EventKind::Compress => "compress",
            EventKind::GroupWritten => "group_written",
            EventKind::TransferRaw => "transfer_raw",
            EventKind::TransferGroup => "transfer_group",
            EventKind::TransferSidecar => "transfer_sidecar",
            EventKind::Decompress => "decompress",
            EventKind::Verify => "verify",
        }
    }

    pub fn is_transfer(self) -> bool {
        matches!(
            self,
            EventKind::TransferRaw | EventKind::TransferGroup | EventKind::TransferSidecar
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LedgerEvent {
    pub kind: EventKind,
    /// Source-relative file path, or a group/sidecar name.
    pub path: String,
    pub t_start: f64,
    pub t_end: f64,
    pub bytes: u64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Failure {
    pub path: String,
    pub stage: EventKind,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunLedger {
    pub events: Vec<LedgerEvent>,
    pub failures: Vec<Failure>,
    /// Source bytes of every input file.
    pub original_bytes: u64,
    /// Modelled time of a plain uncompressed transfer, when known.
    pub plain_transfer_s: Option<f64>,
}

/// Table-style aggregate timings, seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub transfer_s: f64,
    /// Original megabytes per second of `total_s`.
    pub speed_mbps: f64,
    pub cptime_s: f64,
    pub dptime_s: f64,
    pub total_s: f64,
    /// Reduction of total time against a plain transfer, percent.
    pub reduced_pct: Option<f64>,
}

fn span<'a>(events: impl Iterator<Item = &'a LedgerEvent>) -> f64 {
    let (lo, hi) = events.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| {
        (lo.min(e.t_start), hi.max(e.t_end))
    });
    if lo.is_finite() {
        hi - lo
    } else {
        0.0
    }
}

impl RunLedger {
    pub fn push(&mut self, kind: EventKind, path: impl Into<String>, t_start: f64, t_end: f64, bytes: u64, ok: bool) {
        self.events.push(LedgerEvent {
            kind,
            path: path.into(),
            t_start,
            t_end,
            bytes,
            ok,
        });
    }

    pub fn fail(&mut self, path: impl Into<String>, stage: EventKind, reason: impl Into<String>) {
        self.failures.push(Failure {
            path: path.into(),
            stage,
            reason: reason.into(),
        });
    }

    pub fn merge(&mut self, other: RunLedger) {
        self.events.extend(other.events);
        self.failures.extend(other.failures);
    }

    /// Events ordered by start time, then kind, then path.
    pub fn sort(&mut self) {
        self.events.sort_by(|a, b| {
            a.t_start
                .total_cmp(&b.t_start)
                .then(a.kind.cmp(&b.kind))
                .then(a.path.cmp(&b.path))
        });
    }

    pub fn of_kind(&self, kind: EventKind) -> impl Iterator<Item = &LedgerEvent> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    /// Paths of successful events of `kind`.
    pub fn paths(&self, kind: EventKind) -> BTreeSet<String> {
        self.of_kind(kind).filter(|e| e.ok).map(|e| e.path.clone()).collect()
    }

    pub fn failed_paths(&self) -> BTreeSet<String> {
        self.failures.iter().map(|f| f.path.clone()).collect()
    }

    pub fn is_success(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn summary(&self) -> Summary {
        let total_s = span(self.events.iter());
        Summary {
            transfer_s: span(self.events.iter().filter(|e| e.kind.is_transfer())),
            speed_mbps: if total_s > 0.0 { self.original_bytes as f64 / total_s / 1e6 } else { 0.0 },
            cptime_s: span(self.of_kind(EventKind::Compress)),
            dptime_s: span(self.of_kind(EventKind::Decompress)),
            total_s,
            reduced_pct: self
                .plain_transfer_s
                .filter(|&p| p > 0.0)
                .map(|p| (p - total_s) / p * 100.0),
        }
    }

    /// Every file-level event list is time-ordered within itself.
    pub fn per_file_monotone(&self) -> bool {
        let mut by_path: BTreeMap<&str, Vec<&LedgerEvent>> = BTreeMap::new();
        for e in &self.events {
            by_path.entry(&e.path).or_default().push(e);
        }
        self.events.iter().all(|e| e.t_start <= e.t_end)
            && by_path.values().all(|evs| {
                let stage = |k: EventKind| evs.iter().filter(move |e| e.kind == k);
                let c_end = stage(EventKind::Compress).map(|e| e.t_end).fold(f64::NEG_INFINITY, f64::max);
                let d_start = stage(EventKind::Decompress).map(|e| e.t_start).fold(f64::INFINITY, f64::min);
                let d_end = stage(EventKind::Decompress).map(|e| e.t_end).fold(f64::NEG_INFINITY, f64::max);
                let v_start = stage(EventKind::Verify).map(|e| e.t_start).fold(f64::INFINITY, f64::min);
                c_end <= d_start && d_end <= v_start
            })
    }

    pub const CSV_HEADER: &'static str = "event,path,t_start,t_end";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for e in &self.events {
            let _ = writeln!(s, "{},{},{},{}", e.kind.name(), csv_field(&e.path), e.t_start, e.t_end);
        }
        s
    }

    /// Two-line block with the table's column names.
    pub fn summary_block(&self) -> String {
        let s = self.summary();
        let reduced = s.reduced_pct.map_or_else(|| "NA".to_string(), |r| format!("{r:.2}"));
        format!(
            "T,Speed,CPTime,DPTime,Total T,Reduced%\n{:.6},{:.3},{:.6},{:.6},{:.6},{}\n",
            s.transfer_s, s.speed_mbps, s.cptime_s, s.dptime_s, s.total_s, reduced
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregates() {
        let mut l = RunLedger {
            original_bytes: 10_000_000,
            plain_transfer_s: Some(20.0),
            ..Default::default()
        };
        l.push(EventKind::Compress, "a", 0.0, 1.0, 0, true);
        l.push(EventKind::Compress, "b", 0.5, 2.0, 0, true);
        l.push(EventKind::TransferGroup, "g0", 2.0, 5.0, 100, true);
        l.push(EventKind::Decompress, "a", 5.0, 6.0, 0, true);
        l.push(EventKind::Verify, "a", 6.0, 6.5, 0, true);
        let s = l.summary();
        assert_eq!((s.cptime_s, s.transfer_s, s.dptime_s, s.total_s), (2.0, 3.0, 1.0, 6.5));
        assert!((s.speed_mbps - 10.0 / 6.5).abs() < 1e-12);
        assert!((s.reduced_pct.unwrap() - 67.5).abs() < 1e-12);
        assert!(l.per_file_monotone());
        assert!(l.to_csv().starts_with("event,path,t_start,t_end\ncompress,a,0,1\n"));
        assert!(l.summary_block().starts_with("T,Speed,CPTime,DPTime,Total T,Reduced%\n3.000000,"));
        l.push(EventKind::Decompress, "b", 1.0, 1.5, 0, true);
        assert!(!l.per_file_monotone());
    }
}
