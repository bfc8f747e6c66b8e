//! Compression-aware staging of scientific data over wide-area links.
pub mod bundle;
pub mod codec;
pub mod features;
pub mod field;
pub mod orchestrator;
pub mod qmodel;
pub mod synth;
pub mod xfer;

pub use bundle::{GroupStrategy, Sidecar};
pub use codec::{compress, decompress, CompressedBlock, CompressorConfig};
pub use features::{extract, FeatureVector, SamplingSpec};
pub use field::{ElemType, Field, Manifest, ManifestEntry};
pub use orchestrator::{
    run_pipeline, sentinel_run, BackendChoice, NodeAvailability, OrchestratorError, PipelineConfig, RunLedger,
};
pub use qmodel::{ModelBundle, Prediction, Target};
pub use xfer::{CancelToken, Loopback, SimWan, TransferBackend, WanModel};
