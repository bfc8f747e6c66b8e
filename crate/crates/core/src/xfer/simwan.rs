//! Event-driven WAN simulation under a [`WanModel`].
//!
//! Files occupy the link one after another in job order; each costs
//! `o/c + bytes/(B·1e6)` seconds, so a job started on an idle link takes
//! exactly `estimate_time`. Channel labels rotate round-robin. The link
//! state persists across jobs, so successive jobs queue behind each other.

use std::fs;
use std::sync::Mutex;

use super::{CancelToken, TransferBackend, TransferEvent, TransferJob, TransferReport, WanModel, XferError};
use crate::bundle::safe_relative;

#[derive(Debug)]
pub struct SimWan {
    model: WanModel,
    state: Mutex<LinkState>,
}

#[derive(Debug, Default)]
struct LinkState {
    free_at: f64,
    issued: u64,
}

impl SimWan {
    pub fn new(model: WanModel) -> Result<Self, XferError> {
        model.validate()?;
        Ok(SimWan {
            model,
            state: Mutex::new(LinkState::default()),
        })
    }

    pub fn model(&self) -> &WanModel {
        &self.model
    }

    /// Idle link at time 0.
    pub fn reset(&self) {
        *self.state.lock().unwrap() = LinkState::default();
    }
}

impl TransferBackend for SimWan {
    fn name(&self) -> &'static str {
        "simwan"
    }

    fn now(&self) -> f64 {
        self.state.lock().unwrap().free_at
    }

    fn is_virtual(&self) -> bool {
        true
    }

    fn transfer(&self, job: &TransferJob, cancel: &CancelToken) -> Result<TransferReport, XferError> {
        let mut st = self.state.lock().unwrap();
        let mut events = Vec::with_capacity(job.items.len());
        let mut t0 = None;
        for item in &job.items {
            let start = st.free_at.max(item.ready_s);
            if cancel.stops(start) {
                let report = TransferReport::from_events(self.name(), t0.unwrap_or(start), events);
                return Err(XferError::Cancelled {
                    report,
                    total: job.items.len(),
                });
            }
            if let Some(src) = &item.src {
                let rel = safe_relative(&item.rel).map_err(|_| XferError::UnsafePath(item.rel.clone()))?;
                let dst = job.dst_root.join(rel);
                if let Some(parent) = dst.parent() {
                    fs::create_dir_all(parent).map_err(|source| XferError::Io {
                        path: parent.to_path_buf(),
                        source,
                    })?;
                }
                fs::copy(src, &dst).map_err(|source| XferError::Io {
                    path: src.clone(),
                    source,
                })?;
            }
            let end = start + self.model.service_time(item.bytes);
            events.push(TransferEvent {
                path: item.rel.clone(),
                bytes: item.bytes,
                start_s: start,
                end_s: end,
                channel: (st.issued % self.model.concurrency as u64) as u32,
            });
            st.issued += 1;
            st.free_at = end;
            t0.get_or_insert(start);
        }
        Ok(TransferReport::from_events(self.name(), t0.unwrap_or(st.free_at), events))
    }
}
