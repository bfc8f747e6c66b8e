//! End-to-end staging runs: the compressing pipeline, the sentinel that
//! moves raw files while compression capacity is pending, and the analytic
//! estimate of a pipeline's total time.

mod estimate;
mod ledger;
mod pipeline;
mod sentinel;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use thiserror::Error;

use crate::bundle::{BundleError, GroupStrategy};
use crate::codec::{CodecError, CompressorConfig};
use crate::field::{FieldError, Manifest};
use crate::xfer::{CancelToken, Loopback, SimWan, TransferBackend, WanModel, XferError};

pub use estimate::{estimate_pipeline_time, FileStat, PipelineEstimate};
pub use ledger::{EventKind, Failure, LedgerEvent, RunLedger, Summary};
pub use sentinel::{plain_transfer, sentinel_run, sentinel_run_on, NodeAvailability, SentinelPhase, SentinelState};

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("invalid pipeline config: {0}")]
    Config(String),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error(transparent)]
    Xfer(#[from] XferError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt meta file at line {line}: {reason}")]
    MetaFileCorrupt { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BackendChoice {
    Loopback,
    SimWan(WanModel),
}

impl BackendChoice {
    pub fn build(&self) -> Result<Box<dyn TransferBackend>, OrchestratorError> {
        Ok(match self {
            BackendChoice::Loopback => Box::new(Loopback::new()),
            BackendChoice::SimWan(m) => Box::new(SimWan::new(*m)?),
        })
    }
}

/// Corrupts one member of one group after it is written, before transfer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FaultInjection {
    pub group: usize,
    /// Position within the group file.
    pub member: usize,
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub workers_compress: usize,
    pub workers_decompress: usize,
    pub codec: CompressorConfig,
    pub grouping: GroupStrategy,
    pub backend: BackendChoice,
    pub verify: bool,
    pub fault: Option<FaultInjection>,
    /// Raw files per sentinel transfer batch; the meta file is synced once per batch.
    pub raw_batch: usize,
    /// Source-side scratch space for group files and the meta file.
    /// Defaults to `<dst>/.ocelot`.
    pub work_dir: Option<PathBuf>,
    /// Cancelling this stops new compressions and transfers; files not yet
    /// delivered are marked failed.
    pub abort: CancelToken,
}

impl PipelineConfig {
    /// Decompression gets a quarter of the compression workers.
    pub fn new(workers: usize, codec: CompressorConfig) -> Self {
        let workers = workers.max(1);
        PipelineConfig {
            workers_compress: workers,
            workers_decompress: (workers / 4).max(1),
            codec,
            grouping: GroupStrategy::ByWorldSize(workers),
            backend: BackendChoice::Loopback,
            verify: true,
            fault: None,
            raw_batch: 8,
            work_dir: None,
            abort: CancelToken::new(),
        }
    }

    pub fn validate(&self) -> Result<(), OrchestratorError> {
        if self.workers_compress == 0 || self.workers_decompress == 0 {
            return Err(OrchestratorError::Config("worker counts must be at least 1".into()));
        }
        if self.raw_batch == 0 {
            return Err(OrchestratorError::Config("raw batch size must be at least 1".into()));
        }
        if let BackendChoice::SimWan(m) = &self.backend {
            m.validate()?;
        }
        Ok(self.codec.validate()?)
    }
}

/// Seconds on a run's timeline: `offset` plus real time since `epoch`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Clock {
    pub epoch: Instant,
    pub offset: f64,
}

impl Clock {
    pub fn starting_at(offset: f64) -> Self {
        Clock {
            epoch: Instant::now(),
            offset,
        }
    }

    pub fn now(&self) -> f64 {
        self.offset + self.epoch.elapsed().as_secs_f64()
    }
}

/// Where a run keeps its intermediate files.
pub(crate) struct DstLayout {
    pub root: PathBuf,
    work: PathBuf,
}

impl DstLayout {
    pub fn new(dst: &Path, cfg: &PipelineConfig) -> Self {
        DstLayout {
            root: dst.to_path_buf(),
            work: cfg.work_dir.clone().unwrap_or_else(|| dst.join(".ocelot")),
        }
    }

    pub fn staging(&self) -> PathBuf {
        self.work.join("staging")
    }

    pub fn meta(&self) -> PathBuf {
        self.work.join("raw_done.meta")
    }

    /// Destination directory that receives group files and the sidecar.
    pub fn groups(&self) -> PathBuf {
        self.root.join(".ocelot").join("groups")
    }

    /// Destination directory for ungrouped compressed blocks.
    pub fn blocks(&self) -> PathBuf {
        self.root.join(".ocelot").join("blocks")
    }

    pub fn create(&self) -> Result<(), OrchestratorError> {
        for d in [self.staging(), self.groups(), self.blocks()] {
            fs::create_dir_all(&d).map_err(|source| OrchestratorError::Io { path: d, source })?;
        }
        Ok(())
    }
}

/// Compresses, groups, transfers, ungroups, decompresses and (optionally)
/// verifies every manifest entry, on a backend built from `cfg`.
pub fn run_pipeline(manifest: &Manifest, dst: &Path, cfg: &PipelineConfig) -> Result<RunLedger, OrchestratorError> {
    let backend = cfg.backend.build()?;
    run_pipeline_on(manifest, dst, cfg, backend.as_ref())
}

/// [`run_pipeline`] on a caller-owned backend. The run starts at the
/// backend's current time.
pub fn run_pipeline_on(
    manifest: &Manifest,
    dst: &Path,
    cfg: &PipelineConfig,
    backend: &dyn TransferBackend,
) -> Result<RunLedger, OrchestratorError> {
    let all: Vec<usize> = (0..manifest.entries.len()).collect();
    let mut ledger = pipeline::run_subset(manifest, &all, dst, cfg, backend, Clock::starting_at(backend.now()))?;
    ledger.plain_transfer_s = plain_estimate(manifest, &all, cfg);
    Ok(ledger)
}

/// Modelled uncompressed transfer time, for the simulated backend only.
pub(crate) fn plain_estimate(manifest: &Manifest, subset: &[usize], cfg: &PipelineConfig) -> Option<f64> {
    match cfg.backend {
        BackendChoice::SimWan(m) => {
            let bytes = subset.iter().map(|&i| manifest.entries[i].byte_len()).sum();
            Some(m.estimate_time(subset.len() as u64, bytes))
        }
        BackendChoice::Loopback => None,
    }
}
