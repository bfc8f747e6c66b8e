//! Hold-out evaluation: signed-error RMSE, 80% interval and histogram.

use std::fmt::Write as _;

use serde::Serialize;

use super::{ModelBundle, QModelError, Target, TrainingSample};

/// Linear interpolation between closest ranks; `sorted` must be ascending.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let rank = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (rank - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorSummary {
    pub n: usize,
    pub rmse: f64,
    pub mean: f64,
    /// 10th and 90th percentile of the signed error.
    pub ci80: (f64, f64),
    pub bin_width: f64,
    /// `(bin index, count)` for non-empty bins; bin `k` covers
    /// `[k·w, (k+1)·w)`.
    pub histogram: Vec<(i64, u64)>,
}

pub fn summarize_errors(errors: &[f64]) -> ErrorSummary {
    assert!(!errors.is_empty());
    let n = errors.len();
    let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / n as f64).sqrt();
    let mean = errors.iter().sum::<f64>() / n as f64;
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let bin_width = (rmse / 10.0).max(1e-6);
    let mut bins = std::collections::BTreeMap::<i64, u64>::new();
    for &e in errors {
        *bins.entry((e / bin_width).floor() as i64).or_default() += 1;
    }
    ErrorSummary {
        n,
        rmse,
        mean,
        ci80: (percentile(&sorted, 0.1), percentile(&sorted, 0.9)),
        bin_width,
        histogram: bins.into_iter().collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TargetEval {
    pub target: super::Target,
    /// Raw-space signed errors `pred − actual`.
    pub raw: ErrorSummary,
    /// RMSE in the training space (log10 for ratio and time).
    pub transformed_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub targets: Vec<TargetEval>,
}

pub fn evaluate(model: &ModelBundle, holdout: &[TrainingSample]) -> Result<EvalReport, QModelError> {
    if holdout.is_empty() {
        return Err(QModelError::EmptyHoldout);
    }
    let preds = holdout
        .iter()
        .map(|s| model.predict(&s.features))
        .collect::<Result<Vec<_>, _>>()?;
    let targets = Target::ALL
        .into_iter()
        .map(|t| {
            let pick = |p: &super::Prediction| match t {
                Target::Cr => p.cr,
                Target::CpTime => p.cptime_s,
                Target::Psnr => p.psnr,
            };
            let actual = |s: &TrainingSample| t.transform(s.targets.get(t));
            let raw: Vec<f64> = preds
                .iter()
                .zip(holdout)
                .map(|(p, s)| pick(p) - t.inverse(actual(s)))
                .collect();
            let tr: f64 = preds
                .iter()
                .zip(holdout)
                .map(|(p, s)| (t.transform(pick(p)) - actual(s)).powi(2))
                .sum();
            TargetEval {
                target: t,
                raw: summarize_errors(&raw),
                transformed_rmse: (tr / holdout.len() as f64).sqrt(),
            }
        })
        .collect();
    Ok(EvalReport { targets })
}

impl EvalReport {
    pub fn get(&self, t: Target) -> &TargetEval {
        self.targets.iter().find(|e| e.target == t).expect("all targets evaluated")
    }

    pub const CSV_HEADER: &'static str = "target,n,rmse,transformed_rmse,mean_error,ci80_lo,ci80_hi";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for e in &self.targets {
            let r = &e.raw;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                e.target.name(),
                r.n,
                r.rmse,
                e.transformed_rmse,
                r.mean,
                r.ci80.0,
                r.ci80.1
            );
        }
        s
    }

    /// One row per non-empty bin: target, bin start, bin end, count, bar.
    pub fn histogram_table(&self) -> String {
        let mut s = String::new();
        for e in &self.targets {
            let w = e.raw.bin_width;
            let _ = writeln!(s, "# {} (bin width {w:.6e})", e.target.name());
            let peak = e.raw.histogram.iter().map(|&(_, c)| c).max().unwrap_or(1);
            for &(k, c) in &e.raw.histogram {
                let bar = "#".repeat(((c * 40).div_ceil(peak)) as usize);
                let _ = writeln!(s, "{:>12.5e} {:>12.5e} {:>8} {bar}", k as f64 * w, (k + 1) as f64 * w, c);
            }
        }
        s
    }
}
