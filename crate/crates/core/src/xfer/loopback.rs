//! Real filesystem copy between two local directories, hash-verified.

use std::fs;
use std::io::Read;
use std::path::Path;
use std::time::{Duration, Instant};

use sha2::{Digest, Sha256};

use super::{CancelToken, TransferBackend, TransferEvent, TransferJob, TransferReport, XferError};
use crate::bundle::safe_relative;

/// Times are seconds since the backend was created.
#[derive(Debug)]
pub struct Loopback {
    epoch: Instant,
}

impl Default for Loopback {
    fn default() -> Self {
        Self::new()
    }
}

impl Loopback {
    pub fn new() -> Self {
        Loopback { epoch: Instant::now() }
    }

    /// Shares a time base with other components started at `epoch`.
    pub fn with_epoch(epoch: Instant) -> Self {
        Loopback { epoch }
    }
}

pub(crate) fn sha256_file(path: &Path) -> Result<[u8; 32], XferError> {
    let io = |source| XferError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = fs::File::open(path).map_err(io)?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(io)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(h.finalize().into())
}

impl TransferBackend for Loopback {
    fn name(&self) -> &'static str {
        "loopback"
    }

    fn now(&self) -> f64 {
        self.epoch.elapsed().as_secs_f64()
    }

    fn transfer(&self, job: &TransferJob, cancel: &CancelToken) -> Result<TransferReport, XferError> {
        let t0 = self.now();
        let mut events = Vec::with_capacity(job.items.len());
        for item in &job.items {
            let wait = item.ready_s - self.now();
            if wait > 0.0 {
                std::thread::sleep(Duration::from_secs_f64(wait));
            }
            let start = self.now();
            if cancel.stops(start) {
                let report = TransferReport::from_events(self.name(), t0, events);
                return Err(XferError::Cancelled {
                    report,
                    total: job.items.len(),
                });
            }
            let src = item.src.as_ref().ok_or_else(|| XferError::MissingSource(item.rel.clone()))?;
            let rel = safe_relative(&item.rel).map_err(|_| XferError::UnsafePath(item.rel.clone()))?;
            let dst = job.dst_root.join(rel);
            if let Some(parent) = dst.parent() {
                fs::create_dir_all(parent).map_err(|source| XferError::Io {
                    path: parent.to_path_buf(),
                    source,
                })?;
            }
            let copied = fs::copy(src, &dst).map_err(|source| XferError::Io {
                path: src.clone(),
                source,
            })?;
            if sha256_file(src)? != sha256_file(&dst)? {
                return Err(XferError::VerifyFailed { path: item.rel.clone() });
            }
            events.push(TransferEvent {
                path: item.rel.clone(),
                bytes: copied,
                start_s: start,
                end_s: self.now(),
                channel: 0,
            });
        }
        Ok(TransferReport::from_events(self.name(), t0, events))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::xfer::TransferItem;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(n: usize) -> (tempfile::TempDir, TransferJob) {
        let d = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let items = (0..n)
            .map(|i| {
                let data: Vec<u8> = (0..rng.gen_range(0..5000)).map(|_| rng.gen()).collect();
                let src = d.path().join("src").join(format!("f{i}"));
                fs::create_dir_all(src.parent().unwrap()).unwrap();
                fs::write(&src, &data).unwrap();
                TransferItem::file(format!("sub/f{i}"), src, data.len() as u64)
            })
            .collect();
        let job = TransferJob {
            items,
            dst_root: d.path().join("dst"),
        };
        (d, job)
    }

    #[test]
    fn copies_byte_identical() {
        let (_d, job) = setup(10);
        let r = Loopback::new().transfer(&job, &CancelToken::new()).unwrap();
        assert_eq!(r.n_files, 10);
        for it in &job.items {
            let a = fs::read(it.src.as_ref().unwrap()).unwrap();
            assert_eq!(a, fs::read(job.dst_root.join(&it.rel)).unwrap());
        }
        assert_eq!(r.bytes_moved, job.items.iter().map(|i| i.bytes).sum::<u64>());
    }

    #[test]
    fn pre_cancelled_moves_nothing() {
        let (_d, job) = setup(3);
        let c = CancelToken::new();
        c.cancel();
        match Loopback::new().transfer(&job, &c) {
            Err(XferError::Cancelled { report, total }) => {
                assert_eq!((report.n_files, total), (0, 3));
            }
            other => panic!("{other:?}"),
        }
    }
}
