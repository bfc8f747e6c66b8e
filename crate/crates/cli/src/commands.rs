use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use log::{info, warn};
use serde::Serialize;

use ocelot_core::bundle::{self, plan_groups, Sidecar, SIDECAR_NAME};
use ocelot_core::codec::{compress, decompress_bytes, CompressorConfig};
use ocelot_core::features::{extract, extract_timed, SamplingSpec};
use ocelot_core::field::{store_raw, Manifest};
use ocelot_core::orchestrator::{self, BackendChoice, FaultInjection, PipelineConfig, RunLedger, Summary};
use ocelot_core::qmodel::{
    build_sample, evaluate, load_model, read_samples_csv, save_model, split_by_application, write_samples_csv,
    Hyperparams, ModelBundle, TrainingSample,
};
use ocelot_core::synth;
use ocelot_core::xfer::{calibrate, read_observations, CancelToken, TransferItem, TransferJob, WanModel, XferError};

use crate::output::{emit, emit_json, emit_text, Format};
use crate::{
    BackendArg, BenchArgs, CalibrateArgs, Cli, CodecArgs, Command, CompressArgs, DecompressArgs, EvaluateArgs,
    PackArgs, PipelineArgs, PredictArgs, SynthArgs, TrainArgs, TransferArgs, UnpackArgs, WanArgs,
};

/// Simulated link defaults: about 1.2 GB/s with a few milliseconds per file.
pub const DEFAULT_BANDWIDTH_MBPS: f64 = 1194.3;
pub const DEFAULT_OVERHEAD_S: f64 = 3.26e-3;

pub fn run(cli: Cli) -> Result<ExitCode> {
    let fmt = cli.format;
    match cli.command {
        Command::Predict(a) => predict(fmt, a),
        Command::Compress(a) => compress_cmd(fmt, a),
        Command::Decompress(a) => decompress_cmd(fmt, a),
        Command::Pack(a) => pack(fmt, a),
        Command::Unpack(a) => unpack(fmt, a),
        Command::Transfer(a) => transfer(fmt, a),
        Command::Train(a) => train(fmt, cli.seed, a),
        Command::Evaluate(a) => evaluate_cmd(fmt, a),
        Command::Calibrate(a) => calibrate_cmd(fmt, a),
        Command::Pipeline(a) => pipeline(fmt, a),
        Command::Bench(a) => bench(fmt, a),
        Command::Synth(a) => synth_cmd(fmt, cli.seed, a),
    }
}

fn load_manifest(path: &Path) -> Result<Manifest> {
    Manifest::load(path).with_context(|| format!("reading manifest {}", path.display()))
}

fn codec_config(a: &CodecArgs) -> Result<CompressorConfig> {
    let mut c = CompressorConfig::new(a.eb);
    if let Some(b) = a.quant_bins {
        c = c.with_quant_bins(b);
    }
    c.validate()?;
    Ok(c)
}

fn wan_model(a: &WanArgs) -> Result<WanModel> {
    if let Some(p) = &a.wan {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let v: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
        let v = v.get("model").cloned().unwrap_or(v);
        let m: WanModel = serde_json::from_value(v).with_context(|| format!("{} is not a WAN model", p.display()))?;
        m.validate()?;
        return Ok(m);
    }
    Ok(WanModel::new(a.bandwidth, a.overhead, a.concurrency)?)
}

/// Files under `dir`, as sorted forward-slash relative paths.
fn files_under(dir: &Path) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for entry in walkdir::WalkDir::new(dir).sort_by_file_name() {
        let entry = entry?;
        if entry.file_type().is_file() {
            let rel = entry.path().strip_prefix(dir)?;
            let parts: Vec<String> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
            out.push(parts.join("/"));
        }
    }
    Ok(out)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

#[derive(Serialize)]
struct PredictRow {
    path: String,
    eb: f64,
    cr: f64,
    cptime_s: f64,
    psnr: f64,
}

fn predict(fmt: Format, a: PredictArgs) -> Result<ExitCode> {
    let bytes = fs::read(&a.model).with_context(|| format!("reading {}", a.model.display()))?;
    let model = load_model(&bytes).with_context(|| format!("loading model {}", a.model.display()))?;
    let m = load_manifest(&a.manifest)?;
    let cfg = CompressorConfig::new(a.eb);
    let spec = SamplingSpec::new(a.stride)?;
    let mut rows = Vec::with_capacity(m.len());
    for e in &m.entries {
        let field = m.load_entry(e)?;
        let p = model.predict(&extract(&field, &cfg, spec)?)?;
        rows.push(PredictRow {
            path: e.key(),
            eb: a.eb,
            cr: p.cr,
            cptime_s: p.cptime_s,
            psnr: p.psnr,
        });
    }
    emit(fmt, &rows)?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct CompressRow {
    path: String,
    raw_bytes: u64,
    compressed_bytes: u64,
    cr: f64,
    seconds: f64,
}

fn compress_cmd(fmt: Format, a: CompressArgs) -> Result<ExitCode> {
    let cfg = codec_config(&a.codec)?;
    let m = load_manifest(&a.manifest)?;
    let mut rows = Vec::with_capacity(m.len());
    for e in &m.entries {
        let field = m.load_entry(e)?;
        let t = Instant::now();
        let block = compress(&field, &cfg)?.to_bytes();
        let seconds = t.elapsed().as_secs_f64();
        let dst = a.out_dir.join(bundle::safe_relative(&format!("{}.ocb", e.key()))?);
        write_file(&dst, &block)?;
        rows.push(CompressRow {
            path: e.key(),
            raw_bytes: e.byte_len(),
            compressed_bytes: block.len() as u64,
            cr: e.byte_len() as f64 / block.len() as f64,
            seconds,
        });
    }
    emit(fmt, &rows)?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct DecompressRow {
    path: String,
    dtype: String,
    dims: String,
    bytes: u64,
    seconds: f64,
}

fn decompress_cmd(fmt: Format, a: DecompressArgs) -> Result<ExitCode> {
    let mut rows = Vec::new();
    for rel in files_under(&a.in_dir)? {
        let Some(stem) = rel.strip_suffix(".ocb") else {
            continue;
        };
        let bytes = fs::read(a.in_dir.join(&rel))?;
        let t = Instant::now();
        let field = decompress_bytes(&bytes).with_context(|| format!("decoding {rel}"))?;
        let seconds = t.elapsed().as_secs_f64();
        store_raw(&a.out_dir.join(bundle::safe_relative(stem)?), &field)?;
        let dims: Vec<String> = field.dims().iter().map(|d| d.to_string()).collect();
        rows.push(DecompressRow {
            path: stem.to_string(),
            dtype: field.elem_type().to_string(),
            dims: dims.join("x"),
            bytes: field.byte_len(),
            seconds,
        });
    }
    emit(fmt, &rows)?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct GroupRow {
    group_file: String,
    members: usize,
    bytes: u64,
}

fn pack(fmt: Format, a: PackArgs) -> Result<ExitCode> {
    let names = files_under(&a.in_dir)?;
    if names.is_empty() {
        bail!("no files under {}", a.in_dir.display());
    }
    let payloads = names
        .iter()
        .map(|n| fs::read(a.in_dir.join(n)).with_context(|| format!("reading {n}")))
        .collect::<Result<Vec<_>>>()?;
    let sizes: Vec<u64> = payloads.iter().map(|p| p.len() as u64).collect();
    let plan = plan_groups(&sizes, a.strategy)?;
    let out = bundle::pack(&payloads, &names, &plan, &a.out_dir)?;
    let rows = out
        .group_files
        .iter()
        .zip(plan.groups.iter().filter(|g| !g.is_empty()))
        .map(|(p, g)| GroupRow {
            group_file: p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
            members: g.len(),
            bytes: fs::metadata(p).map(|m| m.len()).unwrap_or(0),
        })
        .collect::<Vec<_>>();
    info!("sidecar written to {}", out.sidecar.display());
    emit(fmt, &rows)?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct PathRow {
    path: String,
    bytes: u64,
}

fn unpack(fmt: Format, a: UnpackArgs) -> Result<ExitCode> {
    let sc_path = a.in_dir.join(SIDECAR_NAME);
    let text = fs::read_to_string(&sc_path).with_context(|| format!("reading {}", sc_path.display()))?;
    let sc = Sidecar::parse(&text)?;
    let groups = bundle::group_files_in(&a.in_dir, &sc);
    let written = bundle::unpack(&groups, &sc_path, &a.out_dir)?;
    let rows = written
        .iter()
        .map(|p| PathRow {
            path: p.strip_prefix(&a.out_dir).unwrap_or(p).to_string_lossy().replace('\\', "/"),
            bytes: fs::metadata(p).map(|m| m.len()).unwrap_or(0),
        })
        .collect::<Vec<_>>();
    emit(fmt, &rows)?;
    Ok(ExitCode::SUCCESS)
}

fn backend_choice(kind: BackendArg, wan: &WanArgs) -> Result<BackendChoice> {
    Ok(match kind {
        BackendArg::Loopback => BackendChoice::Loopback,
        BackendArg::Simwan => BackendChoice::SimWan(wan_model(wan)?),
    })
}

/// Cancels `token` on Ctrl-C. Only the first installation succeeds.
fn cancel_on_interrupt(token: &CancelToken) {
    let t = token.clone();
    if let Err(e) = ctrlc::set_handler(move || t.cancel()) {
        warn!("Ctrl-C handler not installed: {e}");
    }
}

fn transfer(fmt: Format, a: TransferArgs) -> Result<ExitCode> {
    let m = load_manifest(&a.src)?;
    let backend = backend_choice(a.backend, &a.wan)?.build()?;
    let job = TransferJob {
        items: m
            .entries
            .iter()
            .map(|e| TransferItem::file(e.key(), m.source_path(e), e.byte_len()))
            .collect(),
        dst_root: a.dst.clone(),
    };
    let cancel = CancelToken::new();
    cancel_on_interrupt(&cancel);
    let (report, code) = match backend.transfer(&job, &cancel) {
        Ok(r) => (r, ExitCode::SUCCESS),
        Err(XferError::Cancelled { report, total }) => {
            warn!("cancelled after {} of {total} files", report.n_files);
            (report, ExitCode::from(1))
        }
        Err(e) => return Err(e.into()),
    };
    match fmt {
        Format::Csv => emit_text(&report.events_csv())?,
        Format::Json => emit_json(&report)?,
    }
    Ok(code)
}

/// Model timestamp: `SOURCE_DATE_EPOCH` when set, else 0, so identical
/// inputs give identical model files.
fn model_timestamp() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|v| v.parse().ok()).unwrap_or(0)
}

fn read_samples(path: &Path) -> Result<Vec<TrainingSample>> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_samples_csv(f).with_context(|| format!("reading samples {}", path.display()))
}

fn label_manifest(path: &Path, grid: &[f64], stride: usize) -> Result<Vec<TrainingSample>> {
    let m = load_manifest(path)?;
    let spec = SamplingSpec::new(stride)?;
    let mut out = Vec::with_capacity(m.len() * grid.len());
    for e in &m.entries {
        let field = m.load_entry(e)?;
        for &eb in grid {
            out.push(build_sample(&field, &CompressorConfig::new(eb), spec, &e.key())?);
        }
        info!("labelled {}", e.key());
    }
    Ok(out)
}

fn train(fmt: Format, seed: u64, a: TrainArgs) -> Result<ExitCode> {
    let hp = Hyperparams {
        max_depth: a.max_depth,
        min_samples_leaf: a.min_leaf,
        min_variance_gain: a.min_gain,
    };
    hp.validate()?;
    let samples = match (&a.samples, &a.manifest) {
        (Some(p), _) => read_samples(p)?,
        (None, Some(m)) => label_manifest(m, &a.eb_grid.0, a.stride)?,
        (None, None) => bail!("one of --samples or --manifest is required"),
    };
    if let Some(p) = &a.samples_out {
        let f = fs::File::create(p).with_context(|| format!("creating {}", p.display()))?;
        write_samples_csv(f, &samples)?;
    }
    let (train, holdout) = split_by_application(&samples, a.train_frac, seed);
    let (psnr_train, _) = split_by_application(&samples, a.psnr_train_frac, seed);
    info!(
        "{} samples: {} train, {} holdout, {} psnr train",
        samples.len(),
        train.len(),
        holdout.len(),
        psnr_train.len()
    );
    let model = ModelBundle::train(&train, &psnr_train, hp, model_timestamp())?;
    write_file(&a.model_out, &save_model(&model))?;
    if holdout.is_empty() {
        warn!("no holdout samples; skipping evaluation");
        return Ok(ExitCode::SUCCESS);
    }
    let report = evaluate(&model, &holdout)?;
    match fmt {
        Format::Csv => emit_text(&report.to_csv())?,
        Format::Json => emit_json(&report)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn evaluate_cmd(fmt: Format, a: EvaluateArgs) -> Result<ExitCode> {
    let bytes = fs::read(&a.model).with_context(|| format!("reading {}", a.model.display()))?;
    let model = load_model(&bytes)?;
    let report = evaluate(&model, &read_samples(&a.samples)?)?;
    match (fmt, a.histogram) {
        (_, true) => emit_text(&report.histogram_table())?,
        (Format::Csv, false) => emit_text(&report.to_csv())?,
        (Format::Json, false) => emit_json(&report)?,
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct PredictionRow {
    n_files: u64,
    total_bytes: u64,
    predicted_s: f64,
}

fn parse_prediction(s: &str) -> Result<(u64, u64)> {
    let (n, b) = s
        .split_once(':')
        .with_context(|| format!("--predict expects N_FILES:TOTAL_BYTES, got {s:?}"))?;
    Ok((n.trim().parse()?, b.trim().parse()?))
}

fn calibrate_cmd(fmt: Format, a: CalibrateArgs) -> Result<ExitCode> {
    let queries = a.predict.iter().map(|s| parse_prediction(s)).collect::<Result<Vec<_>>>()?;
    let f = fs::File::open(&a.observations).with_context(|| format!("opening {}", a.observations.display()))?;
    let obs = read_observations(f)?;
    let fitted = calibrate(&obs)?;
    // the fit sees o/c per file; scale back to a per-channel overhead
    let c = a.concurrency;
    let model = WanModel::new(fitted.bandwidth_mbps, fitted.per_file_overhead_s * c as f64, c)?;
    let preds: Vec<PredictionRow> = queries
        .into_iter()
        .map(|(n, b)| PredictionRow {
            n_files: n,
            total_bytes: b,
            predicted_s: model.estimate_time(n, b),
        })
        .collect();
    match fmt {
        Format::Csv => {
            emit(fmt, &[model])?;
            if !preds.is_empty() {
                emit_text("\n")?;
                emit(fmt, &preds)?;
            }
        }
        Format::Json if preds.is_empty() => emit_json(&model)?,
        Format::Json => emit_json(&serde_json::json!({ "model": model, "predictions": preds }))?,
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct PipelineOutput<'a> {
    summary: Summary,
    plain_transfer_s: Option<f64>,
    failures: &'a [orchestrator::Failure],
    events: &'a [orchestrator::LedgerEvent],
}

fn pipeline(fmt: Format, a: PipelineArgs) -> Result<ExitCode> {
    let codec = codec_config(&a.codec)?;
    let m = load_manifest(&a.src)?;
    let workers = a
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let mut cfg = PipelineConfig::new(workers, codec);
    if let Some(w) = a.workers_decompress {
        cfg.workers_decompress = w;
    }
    if let Some(g) = a.grouping {
        cfg.grouping = g;
    }
    cfg.backend = backend_choice(a.backend, &a.wan)?;
    cfg.verify = a.verify;
    cfg.raw_batch = a.raw_batch;
    cfg.work_dir = a.work_dir.clone();
    cfg.fault = a.inject_fault.map(|f| FaultInjection { group: f.0, member: f.1 });
    cancel_on_interrupt(&cfg.abort);

    let ledger: RunLedger = match a.avail {
        None => orchestrator::run_pipeline(&m, &a.dst, &cfg)?,
        Some(avail) => {
            let (ledger, state) = orchestrator::sentinel_run(&m, &a.dst, &cfg, avail)?;
            info!("{} files sent raw", state.completed_raw.len());
            ledger
        }
    };
    if let Some(p) = &a.ledger {
        write_file(p, ledger.to_csv().as_bytes())?;
    }
    match fmt {
        Format::Csv => emit_text(&ledger.summary_block())?,
        Format::Json => emit_json(&PipelineOutput {
            summary: ledger.summary(),
            plain_transfer_s: ledger.plain_transfer_s,
            failures: &ledger.failures,
            events: &ledger.events,
        })?,
    }
    for f in &ledger.failures {
        warn!("{} failed at {}: {}", f.path, f.stage.name(), f.reason);
    }
    if cfg.abort.is_cancelled() {
        warn!("interrupted");
    }
    Ok(if ledger.is_success() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

#[derive(Serialize)]
struct BenchRow {
    path: String,
    elements: usize,
    extract_s: f64,
    compress_s: f64,
    decompress_s: f64,
    cr: f64,
    extract_pct: f64,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

fn bench(fmt: Format, a: BenchArgs) -> Result<ExitCode> {
    let cfg = codec_config(&a.codec)?;
    let spec = SamplingSpec::new(a.stride)?;
    let m = load_manifest(&a.manifest)?;
    let mut rows = Vec::with_capacity(m.len());
    for e in &m.entries {
        let field = m.load_entry(e)?;
        let (mut ex, mut cp, mut dp) = (Vec::new(), Vec::new(), Vec::new());
        let mut bytes = Vec::new();
        for _ in 0..a.repeat {
            ex.push(extract_timed(&field, &cfg, spec)?.1.as_secs_f64());
            let t = Instant::now();
            bytes = compress(&field, &cfg)?.to_bytes();
            cp.push(t.elapsed().as_secs_f64());
            let t = Instant::now();
            decompress_bytes(&bytes)?;
            dp.push(t.elapsed().as_secs_f64());
        }
        let (extract_s, compress_s) = (median(ex), median(cp));
        rows.push(BenchRow {
            path: e.key(),
            elements: field.len(),
            extract_s,
            compress_s,
            decompress_s: median(dp),
            cr: e.byte_len() as f64 / bytes.len() as f64,
            extract_pct: extract_s / compress_s * 100.0,
        });
    }
    emit(fmt, &rows)?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct ManifestRow {
    path: String,
    dtype: String,
    dims: String,
}

fn synth_cmd(fmt: Format, seed: u64, a: SynthArgs) -> Result<ExitCode> {
    let files = synth::corpus(seed, a.count, &a.dims.0, a.dtype)?;
    let m = synth::write_files(&a.out_dir, &files)?;
    let manifest_path: PathBuf = a.out_dir.join("manifest.txt");
    m.write(&manifest_path)?;
    info!("manifest written to {}", manifest_path.display());
    let dims: Vec<String> = a.dims.0.iter().map(|d| d.to_string()).collect();
    let rows: Vec<ManifestRow> = m
        .entries
        .iter()
        .map(|e| ManifestRow {
            path: e.key(),
            dtype: e.elem_type.to_string(),
            dims: dims.join("x"),
        })
        .collect();
    emit(fmt, &rows)?;
    Ok(ExitCode::SUCCESS)
}
