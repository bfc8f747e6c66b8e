//! Parallel compress → group → transfer → ungroup → parallel decompress →
//! verify.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::thread;
use std::time::Instant;

use crossbeam_channel::unbounded;

use super::ledger::{EventKind, LedgerEvent, RunLedger};
use super::{Clock, DstLayout, OrchestratorError, PipelineConfig};
use crate::bundle::{
    encode_group, group_file_name, layout, parse_header, plan_groups, safe_relative, Sidecar, SidecarEntry,
    SIDECAR_NAME,
};
use crate::codec::{compress, decompress_bytes, CompressedBlock};
use crate::field::{quality, stats, store_raw, Manifest, ManifestEntry};
use crate::xfer::{CancelToken, TransferBackend, TransferItem, TransferJob, XferError};

struct Compressed {
    idx: usize,
    result: Result<Vec<u8>, String>,
    start: f64,
    end: f64,
}

struct Outgoing {
    kind: EventKind,
    item: TransferItem,
}

fn write_synced(path: &Path, bytes: &[u8]) -> Result<(), OrchestratorError> {
    use std::io::Write;
    let io = |source| OrchestratorError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(bytes).map_err(io)?;
    f.sync_all().map_err(io)
}

/// Flips the top bit of the middle byte of a block's entropy-coded payload.
fn inject_fault(image: &mut [u8], member_offset: u64, block: &[u8]) {
    let b = match CompressedBlock::from_bytes(block) {
        Ok(b) if !b.payload.is_empty() => b,
        _ => {
            image[member_offset as usize] ^= 0x80;
            return;
        }
    };
    let tail = b.outliers.len() * (8 + b.header.elem_type.size());
    let payload_start = block.len() - tail - b.payload.len();
    let at = member_offset as usize + payload_start + b.payload.len() / 2;
    image[at] ^= 0x80;
}

fn transfer_loop(
    backend: &dyn TransferBackend,
    rx: crossbeam_channel::Receiver<Outgoing>,
    dst_root: PathBuf,
    cancel: &CancelToken,
) -> (Vec<LedgerEvent>, Vec<(String, String)>) {
    let mut events = Vec::new();
    let mut failed = Vec::new();
    for out in rx {
        let job = TransferJob {
            items: vec![out.item.clone()],
            dst_root: dst_root.clone(),
        };
        match backend.transfer(&job, cancel) {
            Ok(r) => events.extend(r.events.into_iter().map(|e| LedgerEvent {
                kind: out.kind,
                path: e.path,
                t_start: e.start_s,
                t_end: e.end_s,
                bytes: e.bytes,
                ok: true,
            })),
            Err(e) => failed.push((out.item.rel.clone(), e.to_string())),
        }
    }
    (events, failed)
}

/// Runs the pipeline over `subset` (indices into `manifest.entries`) on a
/// shared backend. Event times come from `clock`.
pub(crate) fn run_subset(
    manifest: &Manifest,
    subset: &[usize],
    dst: &Path,
    cfg: &PipelineConfig,
    backend: &dyn TransferBackend,
    clock: Clock,
) -> Result<RunLedger, OrchestratorError> {
    cfg.validate()?;
    let mut ledger = RunLedger::default();
    let entries: Vec<&ManifestEntry> = subset.iter().map(|&i| &manifest.entries[i]).collect();
    ledger.original_bytes = entries.iter().map(|e| e.byte_len()).sum();
    if entries.is_empty() {
        return Ok(ledger);
    }
    for e in &entries {
        safe_relative(&e.key())?;
    }
    let n = entries.len();
    let dirs = DstLayout::new(dst, cfg);
    dirs.create()?;
    let sizes: Vec<u64> = entries.iter().map(|e| e.byte_len()).collect();
    let plan = plan_groups(&sizes, cfg.grouping)?;
    let owner = plan.assignment(n)?;

    let mut pending: Vec<usize> = plan.groups.iter().map(Vec::len).collect();
    let mut payloads: Vec<Option<Vec<u8>>> = vec![None; n];
    // members actually written to each group file, in file order
    let mut written: Vec<Vec<usize>> = vec![Vec::new(); plan.groups.len()];
    let next = AtomicUsize::new(0);
    let (done_tx, done_rx) = unbounded::<Compressed>();
    let (out_tx, out_rx) = unbounded::<Outgoing>();

    let (xfer_events, xfer_failed) = thread::scope(|s| -> Result<_, OrchestratorError> {
        for _ in 0..cfg.workers_compress {
            let tx = done_tx.clone();
            let (next, entries) = (&next, &entries);
            s.spawn(move || loop {
                let idx = next.fetch_add(1, Ordering::SeqCst);
                if idx >= n || cfg.abort.is_cancelled() {
                    break;
                }
                let start = clock.now();
                let result = manifest
                    .load_entry(entries[idx])
                    .map_err(|e| e.to_string())
                    .and_then(|f| compress(&f, &cfg.codec).map_err(|e| e.to_string()))
                    .map(|b| b.to_bytes());
                let end = clock.now();
                if tx.send(Compressed { idx, result, start, end }).is_err() {
                    break;
                }
            });
        }
        drop(done_tx);
        let groups_dir = dirs.groups();
        let abort = &cfg.abort;
        let xfer = s.spawn(move || transfer_loop(backend, out_rx, groups_dir, abort));

        for c in done_rx {
            let key = entries[c.idx].key();
            let size = c.result.as_ref().map_or(0, |b| b.len() as u64);
            ledger.push(EventKind::Compress, &key, c.start, c.end, size, c.result.is_ok());
            match c.result {
                Ok(bytes) => payloads[c.idx] = Some(bytes),
                Err(reason) => ledger.fail(&key, EventKind::Compress, reason),
            }
            let g = owner[c.idx];
            pending[g] -= 1;
            if pending[g] > 0 {
                continue;
            }
            let members: Vec<usize> = plan.groups[g].iter().copied().filter(|&i| payloads[i].is_some()).collect();
            if members.is_empty() {
                continue;
            }
            let t_start = clock.now();
            let blocks: Vec<Vec<u8>> = members.iter().map(|&i| payloads[i].take().unwrap()).collect();
            let mut image = encode_group(&blocks);
            if let Some(f) = cfg.fault.filter(|f| f.group == g && f.member < blocks.len()) {
                let off = parse_header(&image)?[f.member].0;
                inject_fault(&mut image, off, &blocks[f.member]);
            }
            let name = group_file_name(g);
            let path = dirs.staging().join(&name);
            write_synced(&path, &image)?;
            let t_end = clock.now();
            ledger.push(EventKind::GroupWritten, &name, t_start, t_end, image.len() as u64, true);
            written[g] = members;
            let mut item = TransferItem::file(name, path, image.len() as u64);
            item.ready_s = t_end;
            let _ = out_tx.send(Outgoing {
                kind: EventKind::TransferGroup,
                item,
            });
        }

        let grouped: std::collections::HashSet<usize> = written.iter().flatten().copied().collect();
        let failed = ledger.failed_paths();
        for (i, e) in entries.iter().enumerate() {
            if !grouped.contains(&i) && !failed.contains(&e.key()) {
                ledger.fail(e.key(), EventKind::Compress, "cancelled");
            }
        }

        let mut sc_entries = Vec::new();
        for (g, members) in written.iter().enumerate() {
            let ms: Vec<u64> = members
                .iter()
                .map(|&i| ledger_size(&ledger, &entries[i].key()))
                .collect();
            for (k, ((off, size), &i)) in layout(&ms).into_iter().zip(members).enumerate() {
                sc_entries.push(SidecarEntry {
                    group_id: g,
                    index: k,
                    offset: off,
                    size,
                    relative_path: entries[i].key(),
                });
            }
        }
        let sidecar = Sidecar {
            strategy: plan.strategy.to_string(),
            entries: sc_entries,
        };
        let sc_path = dirs.staging().join(SIDECAR_NAME);
        let text = sidecar.to_text();
        write_synced(&sc_path, text.as_bytes())?;
        let mut item = TransferItem::file(SIDECAR_NAME, sc_path, text.len() as u64);
        item.ready_s = clock.now();
        let _ = out_tx.send(Outgoing {
            kind: EventKind::TransferSidecar,
            item,
        });
        drop(out_tx);
        Ok(xfer.join().expect("transfer thread panicked"))
    })?;

    let t_xfer_end = xfer_events.iter().map(|e| e.t_end).fold(f64::NEG_INFINITY, f64::max);
    ledger.events.extend(xfer_events);
    let group_members: HashMap<String, Vec<usize>> = written
        .iter()
        .enumerate()
        .map(|(g, m)| (group_file_name(g), m.clone()))
        .collect();
    for (name, reason) in xfer_failed {
        let stage = if name == SIDECAR_NAME {
            EventKind::TransferSidecar
        } else {
            EventKind::TransferGroup
        };
        let members: Vec<usize> = match group_members.get(&name) {
            Some(members) => members.clone(),
            // without the sidecar nothing can be ungrouped
            None => written.iter().flatten().copied().collect(),
        };
        for i in members {
            ledger.fail(entries[i].key(), stage, reason.clone());
        }
    }

    let dclock = Clock {
        epoch: Instant::now(),
        offset: clock.now().max(t_xfer_end),
    };
    destination_phase(manifest, &entries, &written, &dirs, cfg, dclock, &mut ledger);
    ledger.sort();
    Ok(ledger)
}

fn ledger_size(ledger: &RunLedger, key: &str) -> u64 {
    ledger
        .of_kind(EventKind::Compress)
        .find(|e| e.path == key && e.ok)
        .map_or(0, |e| e.bytes)
}

struct Task {
    idx: usize,
    block: Vec<u8>,
}

struct Restored {
    idx: usize,
    decompress: (f64, f64, Result<u64, String>),
    verify: Option<(f64, f64, Result<(), String>)>,
}

/// Ungroups received files, then decompresses and verifies in parallel.
fn destination_phase(
    manifest: &Manifest,
    entries: &[&ManifestEntry],
    written: &[Vec<usize>],
    dirs: &DstLayout,
    cfg: &PipelineConfig,
    clock: Clock,
    ledger: &mut RunLedger,
) {
    let mut tasks = Vec::new();
    let already_failed = ledger.failed_paths();
    let fail_all = |ledger: &mut RunLedger, members: &[usize], stage: EventKind, reason: &str| {
        for &i in members {
            let key = entries[i].key();
            if !already_failed.contains(&key) {
                ledger.fail(key, stage, reason);
            }
        }
    };
    let sidecar = fs::read_to_string(dirs.groups().join(SIDECAR_NAME))
        .map_err(|e| e.to_string())
        .and_then(|t| Sidecar::parse(&t).map_err(|e| e.to_string()));
    let sidecar = match sidecar {
        Ok(s) => s,
        Err(reason) => {
            let all: Vec<usize> = written.iter().flatten().copied().collect();
            fail_all(ledger, &all, EventKind::TransferSidecar, &reason);
            return;
        }
    };
    let index_of: HashMap<String, usize> = entries.iter().enumerate().map(|(i, e)| (e.key(), i)).collect();
    for (g, members) in written.iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let image = match fs::read(dirs.groups().join(group_file_name(g))) {
            Ok(b) => b,
            Err(e) => {
                fail_all(ledger, members, EventKind::TransferGroup, &e.to_string());
                continue;
            }
        };
        let header = match parse_header(&image) {
            Ok(h) => h,
            Err(e) => {
                fail_all(ledger, members, EventKind::Decompress, &e.to_string());
                continue;
            }
        };
        let mut listed: Vec<&SidecarEntry> = sidecar.entries.iter().filter(|e| e.group_id == g).collect();
        listed.sort_by_key(|e| e.index);
        if listed.len() != header.len() {
            let reason = format!("group {g}: sidecar lists {}, header has {}", listed.len(), header.len());
            fail_all(ledger, members, EventKind::Decompress, &reason);
            continue;
        }
        for (e, (off, size)) in listed.into_iter().zip(header) {
            if already_failed.contains(&e.relative_path) {
                continue;
            }
            let Some(&idx) = index_of.get(&e.relative_path) else {
                ledger.fail(&e.relative_path, EventKind::Decompress, "not in manifest");
                continue;
            };
            let block = image[off as usize..(off + size) as usize].to_vec();
            let block_path = dirs.blocks().join(format!("{}.ocb", e.relative_path));
            let saved = block_path
                .parent()
                .map_or(Ok(()), fs::create_dir_all)
                .and_then(|_| fs::write(&block_path, &block));
            if let Err(err) = saved {
                ledger.fail(&e.relative_path, EventKind::Decompress, err.to_string());
                continue;
            }
            tasks.push(Task { idx, block });
        }
    }

    let next = AtomicUsize::new(0);
    let (tx, rx) = unbounded::<Restored>();
    let dst_root = dirs.root.clone();
    thread::scope(|s| {
        for _ in 0..cfg.workers_decompress {
            let tx = tx.clone();
            let (next, tasks, dst_root) = (&next, &tasks, &dst_root);
            s.spawn(move || loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(task) = tasks.get(k) else { break };
                let entry = entries[task.idx];
                let start = clock.now();
                let recon = decompress_bytes(&task.block).map_err(|e| e.to_string());
                let stored = recon.as_ref().map_err(Clone::clone).and_then(|f| {
                    if f.dims() != entry.dims.as_slice() || f.elem_type() != entry.elem_type {
                        return Err("decoded shape does not match manifest".to_string());
                    }
                    store_raw(&dst_root.join(&entry.rel_path), f)
                        .map(|_| f.byte_len())
                        .map_err(|e| e.to_string())
                });
                let end = clock.now();
                let verify = match (&recon, &stored, cfg.verify) {
                    (Ok(f), Ok(_), true) => {
                        let vs = clock.now();
                        let r = manifest
                            .load_entry(entry)
                            .map_err(|e| e.to_string())
                            .and_then(|orig| {
                                let q = quality(&orig, f, stats(&orig).value_range).map_err(|e| e.to_string())?;
                                let q = q.check_bound(cfg.codec.error_bound);
                                if q.error_bound_satisfied {
                                    Ok(())
                                } else {
                                    Err(format!(
                                        "max error {:e} exceeds bound {:e}",
                                        q.max_abs_error, cfg.codec.error_bound
                                    ))
                                }
                            });
                        Some((vs, clock.now(), r))
                    }
                    _ => None,
                };
                let _ = tx.send(Restored {
                    idx: task.idx,
                    decompress: (start, end, stored),
                    verify,
                });
            });
        }
        drop(tx);
        for r in rx {
            let key = entries[r.idx].key();
            let (s0, s1, res) = r.decompress;
            ledger.push(EventKind::Decompress, &key, s0, s1, *res.as_ref().unwrap_or(&0), res.is_ok());
            if let Err(reason) = res {
                ledger.fail(&key, EventKind::Decompress, reason);
            }
            if let Some((v0, v1, res)) = r.verify {
                ledger.push(EventKind::Verify, &key, v0, v1, 0, res.is_ok());
                if let Err(reason) = res {
                    ledger.fail(&key, EventKind::Verify, reason);
                }
            }
        }
    });
}

/// Uncompressed transfer of `subset`, as one job on `backend`.
pub(crate) fn plain_subset(
    manifest: &Manifest,
    subset: &[usize],
    dst: &Path,
    backend: &dyn TransferBackend,
    cancel: &CancelToken,
) -> Result<(RunLedger, bool), OrchestratorError> {
    let items: Vec<TransferItem> = subset
        .iter()
        .map(|&i| {
            let e = &manifest.entries[i];
            TransferItem::file(e.key(), manifest.source_path(e), e.byte_len())
        })
        .collect();
    let job = TransferJob {
        items,
        dst_root: dst.to_path_buf(),
    };
    let (report, cancelled) = match backend.transfer(&job, cancel) {
        Ok(r) => (r, false),
        Err(XferError::Cancelled { report, .. }) => (report, true),
        Err(e) => return Err(e.into()),
    };
    let mut ledger = RunLedger {
        original_bytes: subset.iter().map(|&i| manifest.entries[i].byte_len()).sum(),
        ..Default::default()
    };
    for e in report.events {
        ledger.push(EventKind::TransferRaw, e.path, e.start_s, e.end_s, e.bytes, true);
    }
    Ok((ledger, cancelled))
}
