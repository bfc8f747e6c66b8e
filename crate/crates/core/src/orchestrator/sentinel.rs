//! Raw transfer while compression capacity is pending, then hand-off of
//! whatever is left to the compressing pipeline.
//!
//! Raw files that finish are appended to a meta file (one relative path per
//! line, synced once per batch). The meta file is authoritative: a re-run
//! never compresses a path listed there.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use super::ledger::{EventKind, RunLedger};
use super::pipeline::{plain_subset, run_subset};
use super::{plain_estimate, Clock, DstLayout, OrchestratorError, PipelineConfig};
use crate::bundle::safe_relative;
use crate::field::Manifest;
use crate::xfer::{CancelToken, TransferBackend};

/// When compression capacity becomes available, relative to the start of a
/// sentinel run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodeAvailability {
    Immediate,
    After(f64),
    Never,
}

impl NodeAvailability {
    pub fn validate(&self) -> Result<(), OrchestratorError> {
        match self {
            NodeAvailability::After(d) if !(d.is_finite() && *d >= 0.0) => {
                Err(OrchestratorError::Config(format!("availability delay must be finite and >= 0, got {d}")))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for NodeAvailability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeAvailability::Immediate => f.write_str("immediate"),
            NodeAvailability::After(d) => write!(f, "after:{d}"),
            NodeAvailability::Never => f.write_str("never"),
        }
    }
}

impl FromStr for NodeAvailability {
    type Err = String;

    /// `immediate`, `never` or `after:SECONDS`.
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "immediate" => Ok(NodeAvailability::Immediate),
            "never" => Ok(NodeAvailability::Never),
            _ => {
                let d = s
                    .strip_prefix("after:")
                    .ok_or_else(|| format!("expected immediate, never or after:SECONDS, got {s:?}"))?;
                let d: f64 = d.parse().map_err(|e| format!("bad delay {d:?}: {e}"))?;
                let a = NodeAvailability::After(d);
                a.validate().map_err(|e| e.to_string())?;
                Ok(a)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SentinelPhase {
    RawTransferring,
    Compressing,
    /// Compression finished; transfers and destination work still running.
    Draining,
    Done,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentinelState {
    pub phase: SentinelPhase,
    pub completed_raw: BTreeSet<String>,
    pub remaining: BTreeSet<String>,
}

impl SentinelState {
    fn complete(&mut self, path: &str) {
        if self.remaining.remove(path) {
            self.completed_raw.insert(path.to_string());
        }
    }
}

/// Paths listed in the meta file at `path`; empty when it does not exist.
pub(crate) fn read_meta(path: &Path, manifest: &Manifest) -> Result<BTreeSet<String>, OrchestratorError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(BTreeSet::new()),
        Err(source) => {
            return Err(OrchestratorError::Io {
                path: path.to_path_buf(),
                source,
            })
        }
    };
    let known: BTreeSet<String> = manifest.entries.iter().map(|e| e.key()).collect();
    let corrupt = |line, reason: String| OrchestratorError::MetaFileCorrupt { line, reason };
    if !text.is_empty() && !text.ends_with('\n') {
        return Err(corrupt(text.lines().count(), "truncated final line".into()));
    }
    let mut out = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        safe_relative(line).map_err(|e| corrupt(i + 1, e.to_string()))?;
        if !known.contains(line) {
            return Err(corrupt(i + 1, format!("{line:?} is not in the manifest")));
        }
        if !out.insert(line.to_string()) {
            return Err(corrupt(i + 1, format!("{line:?} listed twice")));
        }
    }
    Ok(out)
}

fn append_meta(path: &Path, lines: &[String]) -> Result<(), OrchestratorError> {
    let io = |source| OrchestratorError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
    let mut buf = String::new();
    for l in lines {
        buf.push_str(l);
        buf.push('\n');
    }
    f.write_all(buf.as_bytes()).map_err(io)?;
    f.sync_all().map_err(io)
}

/// Uncompressed transfer of every manifest entry to `dst`.
pub fn plain_transfer(
    manifest: &Manifest,
    dst: &Path,
    backend: &dyn TransferBackend,
) -> Result<RunLedger, OrchestratorError> {
    let all: Vec<usize> = (0..manifest.entries.len()).collect();
    Ok(plain_subset(manifest, &all, dst, backend, &CancelToken::new())?.0)
}

/// Sentinel run on a backend built from `cfg`.
pub fn sentinel_run(
    manifest: &Manifest,
    dst: &Path,
    cfg: &PipelineConfig,
    avail: NodeAvailability,
) -> Result<(RunLedger, SentinelState), OrchestratorError> {
    let backend = cfg.backend.build()?;
    sentinel_run_on(manifest, dst, cfg, avail, backend.as_ref())
}

/// Transfers raw files in manifest order until capacity is granted, then
/// runs the pipeline on the files not yet delivered.
pub fn sentinel_run_on(
    manifest: &Manifest,
    dst: &Path,
    cfg: &PipelineConfig,
    avail: NodeAvailability,
    backend: &dyn TransferBackend,
) -> Result<(RunLedger, SentinelState), OrchestratorError> {
    cfg.validate()?;
    avail.validate()?;
    let dirs = DstLayout::new(dst, cfg);
    dirs.create()?;
    let meta = dirs.meta();
    let done = read_meta(&meta, manifest)?;
    let mut state = SentinelState {
        phase: SentinelPhase::RawTransferring,
        remaining: manifest.entries.iter().map(|e| e.key()).filter(|k| !done.contains(k)).collect(),
        completed_raw: done,
    };

    let start = backend.now();
    let grant = match avail {
        NodeAvailability::Immediate => Some(start),
        NodeAvailability::After(d) => Some(start + d),
        NodeAvailability::Never => None,
    };
    let cancel = CancelToken::new();
    if let Some(t) = grant {
        cancel.cancel_at(t);
    }

    let pending: Vec<usize> = (0..manifest.entries.len())
        .filter(|&i| state.remaining.contains(&manifest.entries[i].key()))
        .collect();
    let mut ledger = RunLedger::default();
    for batch in pending.chunks(cfg.raw_batch) {
        if cancel.stops(backend.now()) || cfg.abort.is_cancelled() {
            break;
        }
        let (part, cancelled) = plain_subset(manifest, batch, dst, backend, &cancel)?;
        let moved: Vec<String> = batch
            .iter()
            .map(|&i| manifest.entries[i].key())
            .filter(|k| part.of_kind(EventKind::TransferRaw).any(|e| &e.path == k))
            .collect();
        append_meta(&meta, &moved)?;
        for k in &moved {
            state.complete(k);
        }
        ledger.merge(part);
        if cancelled {
            break;
        }
    }

    if let Some(t) = grant {
        // raw batches are synchronous, so in-flight files have finished here
        state.phase = SentinelPhase::Compressing;
        let rest: Vec<usize> = (0..manifest.entries.len())
            .filter(|&i| state.remaining.contains(&manifest.entries[i].key()))
            .collect();
        let offset = if backend.is_virtual() { t } else { backend.now() };
        let part = run_subset(manifest, &rest, dst, cfg, backend, Clock::starting_at(offset))?;
        ledger.merge(part);
        state.remaining.clear();
    }
    state.phase = SentinelPhase::Done;
    ledger.sort();
    ledger.original_bytes = manifest.entries.iter().map(|e| e.byte_len()).sum();
    let all: Vec<usize> = (0..manifest.entries.len()).collect();
    ledger.plain_transfer_s = plain_estimate(manifest, &all, cfg);
    Ok((ledger, state))
}
