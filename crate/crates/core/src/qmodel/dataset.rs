//! Labelled sample construction, per-application splits, the analytic
//! baseline estimator and sample CSV I/O.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{QModelError, Targets, TrainingSample, PSNR_CAP_DB};
use crate::codec::{compress, decompress, CompressorConfig};
use crate::features::{
    baseline_cr_estimate, extract, FeatureVector, SamplingSpec, FEATURE_COUNT, FEATURE_NAMES,
    R_RLE_CLAMP,
};
use crate::field::{quality, stats, Field};

/// Extracts features, then times one real compression and measures the
/// round-trip quality.
pub fn build_sample(
    field: &Field,
    config: &CompressorConfig,
    spec: SamplingSpec,
    source_path: &str,
) -> Result<TrainingSample, QModelError> {
    let features = extract(field, config, spec)?;
    let start = Instant::now();
    let block = compress(field, config)?;
    let cptime_s = start.elapsed().as_secs_f64().max(1e-9);
    let recon = decompress(&block)?;
    let q = quality(field, &recon, stats(field).value_range)?;
    Ok(TrainingSample {
        features,
        targets: Targets {
            cr: block.compression_ratio(),
            cptime_s,
            psnr: q.psnr.clamp(-PSNR_CAP_DB, PSNR_CAP_DB),
        },
        source_path: source_path.to_string(),
        elem_count: field.len() as u64,
    })
}

/// First path component, or the whole path when it has none.
pub fn application_of(path: &str) -> &str {
    path.split(['/', '\\']).find(|s| !s.is_empty()).unwrap_or(path)
}

/// Splits by file within each application: a `train_fraction` share of each
/// application's distinct files (chosen by a seeded shuffle) goes to the
/// training side together with all of their samples. Every application with
/// two or more files contributes at least one file to each side. Input
/// order is preserved within each side.
pub fn split_by_application(
    samples: &[TrainingSample],
    train_fraction: f64,
    seed: u64,
) -> (Vec<TrainingSample>, Vec<TrainingSample>) {
    let mut apps: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for s in samples {
        apps.entry(application_of(&s.source_path)).or_default().insert(&s.source_path);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_files = BTreeSet::new();
    for files in apps.values() {
        let mut files: Vec<&str> = files.iter().copied().collect();
        files.shuffle(&mut rng);
        let n = files.len();
        let mut k = (train_fraction.clamp(0.0, 1.0) * n as f64).round() as usize;
        if n >= 2 {
            k = k.clamp(1, n - 1);
        }
        train_files.extend(files.into_iter().take(k));
    }
    samples
        .iter()
        .cloned()
        .partition(|s| train_files.contains(s.source_path.as_str()))
}

/// Baseline ratio estimate, clamped like the run-length feature.
pub fn baseline_predict(fv: &FeatureVector, c1: f64) -> f64 {
    baseline_cr_estimate(fv.p0, fv.big_p0, c1)
        .unwrap_or(R_RLE_CLAMP)
        .min(R_RLE_CLAMP)
}

/// 801 log-spaced values in `[1e-4, 1e4]`.
pub fn default_c1_grid() -> Vec<f64> {
    (0..=800).map(|i| 10f64.powf(-4.0 + i as f64 / 100.0)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineFit {
    pub c1: f64,
    /// RMSE of `log10(estimate) − log10(cr)` on the fitting set.
    pub log10_rmse: f64,
}

/// Grid search for the `c1` minimizing log10 ratio error; the first grid
/// point wins ties.
pub fn fit_baseline_c1(samples: &[TrainingSample], grid: &[f64]) -> Result<BaselineFit, QModelError> {
    if samples.is_empty() {
        return Err(QModelError::EmptyTrainingSet);
    }
    let mut best: Option<BaselineFit> = None;
    for &c1 in grid {
        let sse: f64 = samples
            .iter()
            .map(|s| (baseline_predict(&s.features, c1).log10() - s.targets.cr.log10()).powi(2))
            .sum();
        let rmse = (sse / samples.len() as f64).sqrt();
        if best.map_or(true, |b| rmse < b.log10_rmse) {
            best = Some(BaselineFit { c1, log10_rmse: rmse });
        }
    }
    best.ok_or_else(|| QModelError::InvalidHyperparams("empty c1 grid".into()))
}

pub const SAMPLE_CSV_HEADER: &str = "path,eb_log10,compressor_id,min,max,range,byte_entropy,lorenzo_err,p0,P0,quant_entropy,r_rle,cr,cptime_s,psnr,elem_count";

pub fn write_samples_csv<W: Write>(w: W, samples: &[TrainingSample]) -> Result<(), QModelError> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    let csv_err = |e: csv::Error| QModelError::Io(std::io::Error::other(e));
    out.write_record(SAMPLE_CSV_HEADER.split(',')).map_err(csv_err)?;
    for s in samples {
        let mut rec = vec![s.source_path.clone()];
        rec.extend(s.features.to_array().iter().map(|v| v.to_string()));
        rec.push(s.targets.cr.to_string());
        rec.push(s.targets.cptime_s.to_string());
        rec.push(s.targets.psnr.to_string());
        rec.push(s.elem_count.to_string());
        out.write_record(&rec).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads the sample CSV; the `elem_count` column is optional.
pub fn read_samples_csv<R: Read>(r: R) -> Result<Vec<TrainingSample>, QModelError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(r);
    let bad = |line: usize, reason: String| QModelError::SampleCsv { line, reason };
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| bad(1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let expected: Vec<&str> = SAMPLE_CSV_HEADER.split(',').collect();
    let with_count = header == expected;
    if !with_count && header != expected[..expected.len() - 1] {
        return Err(bad(1, format!("unexpected header {}", header.join(","))));
    }
    debug_assert_eq!(expected[1..=FEATURE_COUNT], FEATURE_NAMES[..]);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| bad(line, e.to_string()))?;
        let num = |k: usize| -> Result<f64, QModelError> {
            rec[k].trim().parse::<f64>().map_err(|e| bad(line, format!("column {}: {e}", expected[k])))
        };
        let mut a = [0.0; FEATURE_COUNT];
        for (k, v) in a.iter_mut().enumerate() {
            *v = num(k + 1)?;
        }
        out.push(TrainingSample {
            features: FeatureVector::from_array(a),
            targets: Targets {
                cr: num(12)?,
                cptime_s: num(13)?,
                psnr: num(14)?,
            },
            source_path: rec[0].to_string(),
            elem_count: if with_count {
                rec[15].trim().parse().map_err(|e| bad(line, format!("elem_count: {e}")))?
            } else {
                0
            },
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::ElemType;

    fn s(path: &str, p0: f64, cr: f64) -> TrainingSample {
        TrainingSample {
            features: FeatureVector::from_array([-3.0, 0.0, -1.5, 2.25, 3.75, 5.5, 0.125, p0, 0.7, 1.1, 2.0]),
            targets: Targets { cr, cptime_s: 0.002, psnr: 71.25 },
            source_path: path.into(),
            elem_count: 4096,
        }
    }

    #[test]
    fn application_is_first_component() {
        assert_eq!(application_of("nyx/run1/a.f32"), "nyx");
        assert_eq!(application_of("/cesm/b"), "cesm");
        assert_eq!(application_of("lone.bin"), "lone.bin");
    }

    #[test]
    fn split_is_per_file_and_deterministic() {
        let mut v = Vec::new();
        for app in ["a", "b"] {
            for f in 0..10 {
                for eb in 0..3 {
                    v.push(s(&format!("{app}/f{f}"), eb as f64 * 0.1, 2.0));
                }
            }
        }
        let (tr, te) = split_by_application(&v, 0.3, 7);
        assert_eq!(tr.len(), 2 * 3 * 3);
        assert_eq!(tr.len() + te.len(), v.len());
        let trf: BTreeSet<_> = tr.iter().map(|x| x.source_path.clone()).collect();
        assert!(te.iter().all(|x| !trf.contains(&x.source_path)));
        assert_eq!(split_by_application(&v, 0.3, 7), (tr.clone(), te));
        assert_ne!(split_by_application(&v, 0.3, 8).0, tr);
        let (tr5, _) = split_by_application(&v, 0.5, 7);
        assert_eq!(tr5.len(), 30);
    }

    #[test]
    fn baseline_grid_finds_generating_c1() {
        let c1 = default_c1_grid()[137];
        let v: Vec<_> = (0..30)
            .map(|i| {
                let mut x = s("a/f", i as f64 / 40.0, 1.0);
                x.targets.cr = baseline_predict(&x.features, c1);
                x
            })
            .collect();
        let fit = fit_baseline_c1(&v, &default_c1_grid()).unwrap();
        assert_eq!(fit.c1, c1);
        assert!(fit.log10_rmse < 1e-12);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let v = vec![s("a/x,y.bin", 0.1 + 0.2, 3.3), s("b/z", 1.0 / 3.0, 17.0)];
        let mut buf = Vec::new();
        write_samples_csv(&mut buf, &v).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(SAMPLE_CSV_HEADER));
        assert_eq!(read_samples_csv(&buf[..]).unwrap(), v);
    }

    #[test]
    fn csv_without_elem_count() {
        let text = "path,eb_log10,compressor_id,min,max,range,byte_entropy,lorenzo_err,p0,P0,quant_entropy,r_rle,cr,cptime_s,psnr\n\
                    a/f,-3,0,0,1,1,4,0.1,0.5,0.5,1,1.33,2.5,0.01,60\n";
        let v = read_samples_csv(text.as_bytes()).unwrap();
        assert_eq!(v[0].elem_count, 0);
        assert_eq!(v[0].targets.cr, 2.5);
        assert!(read_samples_csv("path,x\n".as_bytes()).is_err());
    }

    #[test]
    fn built_sample_is_consistent() {
        let vals: Vec<f64> = (0..32 * 32).map(|i| (i as f64 * 0.05).sin()).collect();
        let f = Field::from_values(vec![32, 32], ElemType::F32, vals).unwrap();
        let cfg = CompressorConfig::new(1e-3);
        let smp = build_sample(&f, &cfg, SamplingSpec::default(), "app/f").unwrap();
        let block = compress(&f, &cfg).unwrap();
        assert_eq!(smp.targets.cr, block.compression_ratio());
        assert!(smp.targets.psnr >= 20.0 * (stats(&f).value_range / 1e-3).log10() - 1e-9);
        assert_eq!(smp.elem_count, 1024);
        assert!(smp.targets.cptime_s > 0.0);

        let zero = Field::from_f32(vec![64], vec![0.0; 64]).unwrap();
        let z = build_sample(&zero, &cfg, SamplingSpec::default(), "app/z").unwrap();
        assert_eq!(z.targets.psnr, PSNR_CAP_DB);
    }
}
