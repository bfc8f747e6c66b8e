//! Analytic total-time estimate of a pipeline run.
//!
//! Files are compressed in manifest order by `k` workers at a fixed cost
//! each, so file `i` is ready at `(floor(i/k) + 1)·c`. A group is ready with
//! its last member; groups then queue on the modelled link in ready order,
//! followed by the sidecar. Destination work is charged one more round of
//! `ceil(n/k_d)·c`, with decompression costed like compression.

use serde::Serialize;

use super::PipelineConfig;
use crate::bundle::{header_size, plan_groups};
use crate::xfer::WanModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FileStat {
    pub raw_bytes: u64,
    /// Measured or predicted compressed block size.
    pub compressed_bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PipelineEstimate {
    /// `ceil(n/k)·c`.
    pub compress_s: f64,
    /// Link time over all group files and the sidecar, ignoring waits.
    pub transfer_s: f64,
    /// Time the last transfer ends.
    pub transfer_end_s: f64,
    pub drain_s: f64,
    pub total_s: f64,
}

/// Approximate sidecar bytes per entry.
const SIDECAR_LINE_BYTES: u64 = 48;

pub fn estimate_pipeline_time(
    cfg: &PipelineConfig,
    files: &[FileStat],
    wan: &WanModel,
    per_file_cptime: f64,
) -> PipelineEstimate {
    let n = files.len();
    let k = cfg.workers_compress.max(1);
    let rounds = |w: usize| n.div_ceil(w) as f64;
    let compress_s = rounds(k) * per_file_cptime;
    let drain_s = rounds(cfg.workers_decompress.max(1)) * per_file_cptime;
    if n == 0 {
        return PipelineEstimate {
            compress_s: 0.0,
            transfer_s: 0.0,
            transfer_end_s: 0.0,
            drain_s: 0.0,
            total_s: 0.0,
        };
    }
    let ready = |i: usize| (i / k + 1) as f64 * per_file_cptime;
    let sizes: Vec<u64> = files.iter().map(|f| f.raw_bytes).collect();
    let mut queue: Vec<(f64, u64)> = match plan_groups(&sizes, cfg.grouping) {
        Ok(plan) => plan
            .groups
            .iter()
            .filter(|g| !g.is_empty())
            .map(|g| {
                let bytes = header_size(g.len()) + g.iter().map(|&i| files[i].compressed_bytes).sum::<u64>();
                (g.iter().map(|&i| ready(i)).fold(0.0, f64::max), bytes)
            })
            .collect(),
        // an unplannable strategy sends every file on its own
        Err(_) => (0..n).map(|i| (ready(i), files[i].compressed_bytes)).collect(),
    };
    queue.sort_by(|a, b| a.0.total_cmp(&b.0));
    queue.push((compress_s, SIDECAR_LINE_BYTES * n as u64));
    let mut free = 0.0f64;
    let mut transfer_s = 0.0;
    for (at, bytes) in queue {
        let t = wan.service_time(bytes);
        free = free.max(at) + t;
        transfer_s += t;
    }
    PipelineEstimate {
        compress_s,
        transfer_s,
        transfer_end_s: free,
        drain_s,
        total_s: free + drain_s,
    }
}
