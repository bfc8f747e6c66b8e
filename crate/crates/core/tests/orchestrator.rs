use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use ocelot_core::bundle::{plan_groups, GroupStrategy};
use ocelot_core::codec::{compress, CompressorConfig};
use ocelot_core::field::{load_raw, quality, stats, ElemType, Manifest};
use ocelot_core::orchestrator::{
    estimate_pipeline_time, plain_transfer, run_pipeline, run_pipeline_on, sentinel_run_on, BackendChoice, EventKind,
    FaultInjection, FileStat, NodeAvailability, OrchestratorError, PipelineConfig, RunLedger, SentinelPhase,
};
use ocelot_core::synth;
use ocelot_core::xfer::{SimWan, WanModel};

fn corpus(dir: &Path, n: usize, dims: &[usize]) -> Manifest {
    let files = synth::corpus(11, n, dims, ElemType::F32).unwrap();
    synth::write_files(&dir.join("src"), &files).unwrap()
}

fn keys(m: &Manifest) -> BTreeSet<String> {
    m.entries.iter().map(|e| e.key()).collect()
}

fn count(l: &RunLedger, kind: EventKind) -> usize {
    l.of_kind(kind).count()
}

#[test]
fn single_file_loopback_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let m = corpus(tmp.path(), 1, &[12, 10, 8]);
    let cfg = PipelineConfig::new(1, CompressorConfig::new(1e-3));
    let dst = tmp.path().join("dst");
    let l = run_pipeline(&m, &dst, &cfg).unwrap();
    assert!(l.is_success(), "{:?}", l.failures);
    assert_eq!(count(&l, EventKind::Compress), 1);
    assert_eq!(count(&l, EventKind::TransferGroup), 1);
    assert_eq!(count(&l, EventKind::TransferSidecar), 1);
    assert_eq!(count(&l, EventKind::Decompress), 1);
    assert_eq!(count(&l, EventKind::Verify), 1);
    assert!(l.per_file_monotone());
    let e = &m.entries[0];
    let orig = m.load_entry(e).unwrap();
    let back = load_raw(&dst.join(&e.rel_path), &e.dims, e.elem_type).unwrap();
    let q = quality(&orig, &back, stats(&orig).value_range).unwrap().check_bound(1e-3);
    assert!(q.error_bound_satisfied);
    assert!(l.to_csv().starts_with("event,path,t_start,t_end\n"));
}

#[test]
fn bit_flip_fails_only_its_file() {
    let tmp = tempfile::tempdir().unwrap();
    let m = corpus(tmp.path(), 8, &[16, 16, 16]);
    let mut cfg = PipelineConfig::new(2, CompressorConfig::new(1e-4));
    cfg.grouping = GroupStrategy::ByWorldSize(2);
    cfg.fault = Some(FaultInjection { group: 0, member: 1 });
    let l = run_pipeline(&m, &tmp.path().join("dst"), &cfg).unwrap();
    let sizes: Vec<u64> = m.entries.iter().map(|e| e.byte_len()).collect();
    let plan = plan_groups(&sizes, cfg.grouping).unwrap();
    let victim = m.entries[plan.groups[0][1]].key();
    assert_eq!(l.failed_paths(), BTreeSet::from([victim.clone()]), "{:?}", l.failures);
    let verified = l.paths(EventKind::Verify);
    assert_eq!(verified.len(), 7);
    assert!(!verified.contains(&victim));
}

#[test]
fn single_decompress_worker_still_verifies() {
    let tmp = tempfile::tempdir().unwrap();
    let m = corpus(tmp.path(), 6, &[20, 20]);
    let mut cfg = PipelineConfig::new(4, CompressorConfig::new(1e-2));
    cfg.workers_decompress = 1;
    let l = run_pipeline(&m, &tmp.path().join("dst"), &cfg).unwrap();
    assert!(l.is_success());
    assert_eq!(l.paths(EventKind::Verify), keys(&m));
}

#[test]
fn zero_workers_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let m = corpus(tmp.path(), 1, &[4]);
    let mut cfg = PipelineConfig::new(1, CompressorConfig::new(1e-2));
    cfg.workers_compress = 0;
    assert!(matches!(
        run_pipeline(&m, &tmp.path().join("dst"), &cfg),
        Err(OrchestratorError::Config(_))
    ));
}

// 16 KiB files on a 0.01 MB/s link: 1.6384 s per raw file.
fn slow_link() -> WanModel {
    WanModel::new(0.01, 0.0, 1).unwrap()
}

fn simwan_cfg(workers: usize) -> PipelineConfig {
    let mut cfg = PipelineConfig::new(workers, CompressorConfig::new(1e-3));
    cfg.backend = BackendChoice::SimWan(slow_link());
    cfg.raw_batch = 3;
    cfg
}

#[test]
fn sentinel_never_is_a_plain_transfer() {
    let tmp = tempfile::tempdir().unwrap();
    let m = corpus(tmp.path(), 10, &[16, 16, 16]);
    let cfg = simwan_cfg(2);
    let link = SimWan::new(slow_link()).unwrap();
    let (l, state) = sentinel_run_on(&m, &tmp.path().join("a"), &cfg, NodeAvailability::Never, &link).unwrap();
    let plain = plain_transfer(&m, &tmp.path().join("b"), &SimWan::new(slow_link()).unwrap()).unwrap();
    assert_eq!(state.phase, SentinelPhase::Done);
    assert_eq!(state.completed_raw, keys(&m));
    assert_eq!(l.paths(EventKind::TransferRaw), plain.paths(EventKind::TransferRaw));
    assert_eq!(count(&l, EventKind::Compress), 0);
    let (s, p) = (l.summary().total_s, plain.summary().total_s);
    assert!(s <= p * 1.05, "sentinel {s} vs plain {p}");
    for e in &m.entries {
        let a = fs::read(tmp.path().join("a").join(&e.rel_path)).unwrap();
        assert_eq!(a, fs::read(m.source_path(e)).unwrap());
    }
}

#[test]
fn sentinel_immediate_sends_nothing_raw() {
    let tmp = tempfile::tempdir().unwrap();
    let m = corpus(tmp.path(), 6, &[16, 16, 16]);
    let link = SimWan::new(slow_link()).unwrap();
    let (l, state) =
        sentinel_run_on(&m, &tmp.path().join("d"), &simwan_cfg(2), NodeAvailability::Immediate, &link).unwrap();
    assert_eq!(count(&l, EventKind::TransferRaw), 0);
    assert!(state.completed_raw.is_empty());
    assert_eq!(l.paths(EventKind::Verify), keys(&m));
}

#[test]
fn sentinel_after_partitions_the_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let m = corpus(tmp.path(), 12, &[16, 16, 16]);
    let all = keys(&m);
    let per_file = slow_link().service_time(m.entries[0].byte_len());
    let mut saw_half = false;
    for (i, t) in [0.0, 0.5, 1.0, 2.0, 4.0, 7.5, 9.0, 12.0, 15.0, 30.0].into_iter().enumerate() {
        let dst = tmp.path().join(format!("dst{i}"));
        let link = SimWan::new(slow_link()).unwrap();
        let (l, state) = sentinel_run_on(&m, &dst, &simwan_cfg(3), NodeAvailability::After(t), &link).unwrap();
        let raw = l.paths(EventKind::TransferRaw);
        let comp = l.paths(EventKind::Decompress);
        assert!(raw.is_disjoint(&comp), "t={t}");
        assert_eq!(&raw | &comp, all, "t={t}");
        assert_eq!(raw, state.completed_raw);
        // in-flight files finish; nothing starts at or after the grant
        let expect_raw = ((t / per_file).ceil() as usize).min(m.len());
        assert_eq!(raw.len(), expect_raw, "t={t}");
        saw_half |= raw.len() == m.len() / 2;
        assert!(l.is_success(), "t={t}: {:?}", l.failures);
    }
    assert!(saw_half);
}

#[test]
fn rerun_never_recompresses_meta_listed_files() {
    let tmp = tempfile::tempdir().unwrap();
    let m = corpus(tmp.path(), 9, &[16, 16, 16]);
    let dst = tmp.path().join("dst");
    let cfg = simwan_cfg(2);
    // interrupted run: four raw files delivered and recorded
    let first = SimWan::new(slow_link()).unwrap();
    let t = 3.5 * slow_link().service_time(m.entries[0].byte_len());
    let (_, state) = sentinel_run_on(&m, &dst, &cfg, NodeAvailability::After(t), &first).unwrap();
    assert_eq!(state.completed_raw.len(), 4);
    let meta = fs::read_to_string(dst.join(".ocelot/raw_done.meta")).unwrap();
    assert_eq!(meta.lines().count(), 4);

    let again = SimWan::new(slow_link()).unwrap();
    let (l, state2) = sentinel_run_on(&m, &dst, &cfg, NodeAvailability::Immediate, &again).unwrap();
    let compressed = l.paths(EventKind::Compress);
    assert!(compressed.is_disjoint(&state.completed_raw));
    assert_eq!(compressed.len(), 5);
    assert_eq!(state2.completed_raw, state.completed_raw);
}

#[test]
fn corrupt_meta_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let m = corpus(tmp.path(), 3, &[8, 8]);
    let dst = tmp.path().join("dst");
    let meta = dst.join(".ocelot/raw_done.meta");
    fs::create_dir_all(meta.parent().unwrap()).unwrap();
    let first = m.entries[0].key();
    for text in [
        format!("{first}\n{first}\n"),
        "not/in/manifest.f32\n".to_string(),
        format!("{first}"),
        "../escape\n".to_string(),
    ] {
        fs::write(&meta, &text).unwrap();
        let link = SimWan::new(slow_link()).unwrap();
        let r = sentinel_run_on(&m, &dst, &simwan_cfg(1), NodeAvailability::Never, &link);
        assert!(matches!(r, Err(OrchestratorError::MetaFileCorrupt { .. })), "{text:?}");
    }
}

#[test]
fn estimate_tracks_simulated_run() {
    let tmp = tempfile::tempdir().unwrap();
    let m = corpus(tmp.path(), 16, &[24, 24, 24]);
    let codec = CompressorConfig::new(1e-4);
    let wan = WanModel::new(0.5, 0.02, 1).unwrap();
    let mut cfg = PipelineConfig::new(4, codec.clone());
    cfg.backend = BackendChoice::SimWan(wan);
    cfg.verify = false;

    let mut stats = Vec::new();
    let t0 = std::time::Instant::now();
    for e in &m.entries {
        let b = compress(&m.load_entry(e).unwrap(), &codec).unwrap();
        stats.push(FileStat {
            raw_bytes: e.byte_len(),
            compressed_bytes: b.to_bytes().len() as u64,
        });
    }
    let per_file = t0.elapsed().as_secs_f64() / m.len() as f64;
    let est = estimate_pipeline_time(&cfg, &stats, &wan, per_file);

    let link = SimWan::new(wan).unwrap();
    let l = run_pipeline_on(&m, &tmp.path().join("dst"), &cfg, &link).unwrap();
    assert!(l.is_success());
    let total = l.summary().total_s;
    let rel = (est.total_s - total).abs() / total;
    assert!(rel <= 0.20, "estimate {} vs executed {total}", est.total_s);
}

#[test]
fn aborted_run_marks_everything_failed() {
    let tmp = tempfile::tempdir().unwrap();
    let m = corpus(tmp.path(), 4, &[8, 8]);
    let cfg = PipelineConfig::new(2, CompressorConfig::new(1e-2));
    cfg.abort.cancel();
    let l = run_pipeline(&m, &tmp.path().join("dst"), &cfg).unwrap();
    assert_eq!(l.failed_paths(), keys(&m));
    assert_eq!(count(&l, EventKind::Decompress), 0);
}
