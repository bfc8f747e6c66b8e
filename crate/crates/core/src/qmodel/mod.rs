//! Decision-tree regressors mapping a [`FeatureVector`] to compression
//! ratio, compression time and PSNR.

mod dataset;
mod eval;
mod io;
mod tree;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::codec::CodecError;
use crate::features::{FeatureError, FeatureVector, FEATURE_COUNT, FEATURE_NAMES};
use crate::field::FieldError;

pub use dataset::{
    application_of, baseline_predict, build_sample, default_c1_grid, fit_baseline_c1,
    read_samples_csv, split_by_application, write_samples_csv, BaselineFit, SAMPLE_CSV_HEADER,
};
pub use eval::{evaluate, percentile, summarize_errors, ErrorSummary, EvalReport, TargetEval};
pub use io::{load_model, save_model, MODEL_MAGIC, MODEL_VERSION, NODE_RECORD_BYTES};
pub use tree::{Hyperparams, Node, RegressionTree, Split};

/// Lossless round trips have infinite PSNR; labels are capped here.
pub const PSNR_CAP_DB: f64 = 200.0;

#[derive(Debug, Error)]
pub enum QModelError {
    #[error("no training samples")]
    EmptyTrainingSet,
    #[error("empty holdout set")]
    EmptyHoldout,
    #[error("non-finite feature or target in row {row}")]
    NonFiniteInput { row: usize },
    #[error("invalid target in row {row}: {reason}")]
    InvalidTarget { row: usize, reason: String },
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("feature schema mismatch: model {found:016x}, runtime {expected:016x}")]
    SchemaMismatch { expected: u64, found: u64 },
    #[error("unsupported model version {0}")]
    VersionMismatch(u32),
    #[error("corrupt model: {0}")]
    CorruptModel(String),
    #[error("bad sample CSV at line {line}: {reason}")]
    SampleCsv { line: usize, reason: String },
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Cr,
    CpTime,
    Psnr,
}

impl Target {
    pub const ALL: [Target; 3] = [Target::Cr, Target::CpTime, Target::Psnr];

    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(t: u8) -> Option<Self> {
        Self::ALL.get(t as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Target::Cr => "cr",
            Target::CpTime => "cptime_s",
            Target::Psnr => "psnr",
        }
    }

    /// Training space: ratio and time are fitted in log10.
    pub fn transform(self, y: f64) -> f64 {
        match self {
            Target::Cr | Target::CpTime => y.log10(),
            Target::Psnr => y.min(PSNR_CAP_DB),
        }
    }

    pub fn inverse(self, t: f64) -> f64 {
        match self {
            Target::Cr | Target::CpTime => 10f64.powf(t),
            Target::Psnr => t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Targets {
    pub cr: f64,
    pub cptime_s: f64,
    pub psnr: f64,
}

impl Targets {
    pub fn get(&self, t: Target) -> f64 {
        match t {
            Target::Cr => self.cr,
            Target::CpTime => self.cptime_s,
            Target::Psnr => self.psnr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub features: FeatureVector,
    pub targets: Targets,
    pub source_path: String,
    pub elem_count: u64,
}

impl TrainingSample {
    fn check(&self, row: usize) -> Result<(), QModelError> {
        if self.features.to_array().iter().any(|v| !v.is_finite()) {
            return Err(QModelError::NonFiniteInput { row });
        }
        let t = &self.targets;
        let bad = |reason: &str| QModelError::InvalidTarget {
            row,
            reason: reason.to_string(),
        };
        if !(t.cr > 0.0 && t.cr.is_finite()) {
            return Err(bad("cr must be positive and finite"));
        }
        if !(t.cptime_s > 0.0 && t.cptime_s.is_finite()) {
            return Err(bad("cptime_s must be positive and finite"));
        }
        if !t.psnr.is_finite() {
            return Err(bad("psnr must be finite"));
        }
        Ok(())
    }

    /// Compression time per element, in nanoseconds.
    pub fn ns_per_element(&self) -> f64 {
        self.targets.cptime_s * 1e9 / self.elem_count.max(1) as f64
    }
}

/// Fits one tree on `samples` for `target`.
pub fn train(
    samples: &[TrainingSample],
    target: Target,
    hp: Hyperparams,
) -> Result<RegressionTree, QModelError> {
    if samples.is_empty() {
        return Err(QModelError::EmptyTrainingSet);
    }
    for (i, s) in samples.iter().enumerate() {
        s.check(i)?;
    }
    let xs: Vec<[f64; FEATURE_COUNT]> = samples.iter().map(|s| s.features.to_array()).collect();
    let ys: Vec<f64> = samples.iter().map(|s| target.transform(s.targets.get(target))).collect();
    RegressionTree::fit(&xs, &ys, target, hp)
}

/// Hash of the ordered feature names; first 8 bytes of SHA-256.
pub fn schema_hash() -> u64 {
    let digest = Sha256::digest(FEATURE_NAMES.join(",").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingMeta {
    /// Seconds since the Unix epoch, supplied by the caller.
    pub created_unix: u64,
    pub sample_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub cr: RegressionTree,
    pub cptime: RegressionTree,
    pub psnr: RegressionTree,
    pub schema_hash: u64,
    pub meta: TrainingMeta,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub cr: f64,
    pub cptime_s: f64,
    pub psnr: f64,
}

impl ModelBundle {
    /// Ratio and time trees fit on `cr_time_train`, PSNR on `psnr_train`.
    pub fn train(
        cr_time_train: &[TrainingSample],
        psnr_train: &[TrainingSample],
        hp: Hyperparams,
        created_unix: u64,
    ) -> Result<Self, QModelError> {
        Ok(ModelBundle {
            cr: train(cr_time_train, Target::Cr, hp)?,
            cptime: train(cr_time_train, Target::CpTime, hp)?,
            psnr: train(psnr_train, Target::Psnr, hp)?,
            schema_hash: schema_hash(),
            meta: TrainingMeta {
                created_unix,
                sample_count: cr_time_train.len().max(psnr_train.len()) as u64,
            },
        })
    }

    pub fn tree(&self, t: Target) -> &RegressionTree {
        match t {
            Target::Cr => &self.cr,
            Target::CpTime => &self.cptime,
            Target::Psnr => &self.psnr,
        }
    }

    pub fn predict(&self, fv: &FeatureVector) -> Result<Prediction, QModelError> {
        let expected = schema_hash();
        if self.schema_hash != expected {
            return Err(QModelError::SchemaMismatch {
                expected,
                found: self.schema_hash,
            });
        }
        Ok(Prediction {
            cr: self.cr.predict(fv),
            cptime_s: self.cptime.predict(fv),
            psnr: self.psnr.predict(fv),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(p0: f64) -> FeatureVector {
        FeatureVector::from_array([-3.0, 0.0, 0.0, 1.0, 1.0, 4.0, 0.1, p0, 0.5, 2.0, 1.5])
    }

    pub(crate) fn sample(p0: f64, cr: f64) -> TrainingSample {
        TrainingSample {
            features: fv(p0),
            targets: Targets {
                cr,
                cptime_s: 0.01,
                psnr: 60.0,
            },
            source_path: "app/f.bin".into(),
            elem_count: 1000,
        }
    }

    #[test]
    fn transforms_invert() {
        for t in Target::ALL {
            assert_eq!(Target::from_tag(t.tag()), Some(t));
            let y = 37.5;
            assert!((t.inverse(t.transform(y)) - y).abs() < 1e-12);
        }
        assert_eq!(Target::Psnr.transform(f64::INFINITY), PSNR_CAP_DB);
    }

    #[test]
    fn ratio_tree_predicts_in_natural_units() {
        let s: Vec<_> = (0..20).map(|i| sample(i as f64 / 20.0, if i < 10 { 2.0 } else { 200.0 })).collect();
        let t = train(&s, Target::Cr, Hyperparams::default()).unwrap();
        assert!((t.predict(&fv(0.0)) - 2.0).abs() < 1e-12);
        assert!((t.predict(&fv(0.9)) - 200.0).abs() < 1e-9);
    }

    #[test]
    fn invalid_targets_rejected() {
        let mut s = sample(0.1, 0.0);
        assert!(matches!(train(&[s.clone()], Target::Cr, Hyperparams::default()), Err(QModelError::InvalidTarget { .. })));
        s.targets.cr = 1.0;
        s.features.min = f64::NAN;
        assert!(matches!(train(&[s], Target::Cr, Hyperparams::default()), Err(QModelError::NonFiniteInput { .. })));
    }

    #[test]
    fn schema_mismatch_detected() {
        let s = vec![sample(0.1, 3.0)];
        let mut b = ModelBundle::train(&s, &s, Hyperparams::default(), 0).unwrap();
        assert!(b.predict(&fv(0.1)).is_ok());
        b.schema_hash ^= 1;
        assert!(matches!(b.predict(&fv(0.1)), Err(QModelError::SchemaMismatch { .. })));
    }
}
