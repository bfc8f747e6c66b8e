//! Raw scientific arrays, summary statistics and reconstruction metrics.
//!
//! Fields are stored on disk as little-endian IEEE-754 values in row-major
//! order. Dimensions are never inferred from the file; they come from a
//! [`Manifest`] or from the caller.

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Maximum number of dimensions a field may have.
pub const MAX_DIMS: usize = 3;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("file is {actual} bytes but dims {dims:?} of {elem_type} need {expected}")]
    SizeMismatch {
        dims: Vec<usize>,
        elem_type: ElemType,
        expected: u64,
        actual: u64,
    },
    #[error("non-finite value {value} at index {index}")]
    NonFiniteValue { index: usize, value: f64 },
    #[error("invalid dims {0:?}: need 1-3 entries, each at least 1")]
    InvalidDims(Vec<usize>),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("value range is zero but reconstruction differs from the original")]
    ZeroRange,
    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElemType {
    F32,
    F64,
}

impl ElemType {
    pub const fn size(self) -> usize {
        match self {
            ElemType::F32 => 4,
            ElemType::F64 => 8,
        }
    }

    pub const fn tag(self) -> u8 {
        match self {
            ElemType::F32 => 0,
            ElemType::F64 => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(ElemType::F32),
            1 => Some(ElemType::F64),
            _ => None,
        }
    }
}

impl fmt::Display for ElemType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ElemType::F32 => "f32",
            ElemType::F64 => "f64",
        })
    }
}

impl FromStr for ElemType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "f32" | "float" | "float32" => Ok(ElemType::F32),
            "f64" | "double" | "float64" => Ok(ElemType::F64),
            other => Err(format!("unknown element type `{other}`")),
        }
    }
}

/// Typed value storage. The element type is part of the data, so an `f32`
/// field round-trips through the codec without ever widening on disk.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl FieldData {
    pub fn len(&self) -> usize {
        match self {
            FieldData::F32(v) => v.len(),
            FieldData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn elem_type(&self) -> ElemType {
        match self {
            FieldData::F32(_) => ElemType::F32,
            FieldData::F64(_) => ElemType::F64,
        }
    }
}

/// An n-dimensional (1-3) floating-point array in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    dims: Vec<usize>,
    data: FieldData,
}

pub(crate) fn validate_dims(dims: &[usize]) -> Result<usize, FieldError> {
    if dims.is_empty() || dims.len() > MAX_DIMS || dims.iter().any(|&d| d == 0) {
        return Err(FieldError::InvalidDims(dims.to_vec()));
    }
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| FieldError::InvalidDims(dims.to_vec()))
}

fn check_finite<I: Iterator<Item = f64>>(values: I) -> Result<(), FieldError> {
    for (index, value) in values.enumerate() {
        if !value.is_finite() {
            return Err(FieldError::NonFiniteValue { index, value });
        }
    }
    Ok(())
}

impl Field {
    pub fn new(dims: Vec<usize>, data: FieldData) -> Result<Self, FieldError> {
        let n = validate_dims(&dims)?;
        if n != data.len() {
            return Err(FieldError::ShapeMismatch(format!(
                "dims {dims:?} hold {n} values, got {}",
                data.len()
            )));
        }
        let field = Field { dims, data };
        check_finite(field.iter())?;
        Ok(field)
    }

    pub fn from_f32(dims: Vec<usize>, values: Vec<f32>) -> Result<Self, FieldError> {
        Self::new(dims, FieldData::F32(values))
    }

    pub fn from_f64(dims: Vec<usize>, values: Vec<f64>) -> Result<Self, FieldError> {
        Self::new(dims, FieldData::F64(values))
    }

    /// Builds a field of the given element type from `f64` values, rounding
    /// to `f32` when needed.
    pub fn from_values(
        dims: Vec<usize>,
        elem_type: ElemType,
        values: Vec<f64>,
    ) -> Result<Self, FieldError> {
        let data = match elem_type {
            ElemType::F32 => FieldData::F32(values.into_iter().map(|v| v as f32).collect()),
            ElemType::F64 => FieldData::F64(values),
        };
        Self::new(dims, data)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn elem_type(&self) -> ElemType {
        self.data.elem_type()
    }

    pub fn data(&self) -> &FieldData {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Size of the field in its on-disk representation.
    pub fn byte_len(&self) -> u64 {
        (self.len() * self.elem_type().size()) as u64
    }

    #[inline]
    pub fn get(&self, index: usize) -> f64 {
        match &self.data {
            FieldData::F32(v) => v[index] as f64,
            FieldData::F64(v) => v[index],
        }
    }

    pub fn iter(&self) -> Box<dyn Iterator<Item = f64> + '_> {
        match &self.data {
            FieldData::F32(v) => Box::new(v.iter().map(|&x| x as f64)),
            FieldData::F64(v) => Box::new(v.iter().copied()),
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.iter().collect()
    }

    /// Little-endian byte image of the values.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        match &self.data {
            FieldData::F32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            FieldData::F64(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        }
    }

    pub fn from_le_bytes(
        dims: Vec<usize>,
        elem_type: ElemType,
        bytes: &[u8],
    ) -> Result<Self, FieldError> {
        let n = validate_dims(&dims)?;
        let expected = (n as u64) * elem_type.size() as u64;
        if bytes.len() as u64 != expected {
            return Err(FieldError::SizeMismatch {
                dims,
                elem_type,
                expected,
                actual: bytes.len() as u64,
            });
        }
        let data = match elem_type {
            ElemType::F32 => FieldData::F32(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            ElemType::F64 => FieldData::F64(
                bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
        };
        Field::new(dims, data)
    }
}

/// Reads a raw little-endian binary file.
pub fn load_raw(path: &Path, dims: &[usize], elem_type: ElemType) -> Result<Field, FieldError> {
    let n = validate_dims(dims)?;
    let expected = (n as u64) * elem_type.size() as u64;
    let actual = fs::metadata(path)?.len();
    if actual != expected {
        return Err(FieldError::SizeMismatch {
            dims: dims.to_vec(),
            elem_type,
            expected,
            actual,
        });
    }
    let bytes = fs::read(path)?;
    Field::from_le_bytes(dims.to_vec(), elem_type, &bytes)
}

/// Inverse of [`load_raw`].
pub fn store_raw(path: &Path, field: &Field) -> Result<(), FieldError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut file = io::BufWriter::new(fs::File::create(path)?);
    file.write_all(&field.to_le_bytes())?;
    file.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldStats {
    pub min: f64,
    pub max: f64,
    pub value_range: f64,
    pub count: usize,
}

pub fn stats(field: &Field) -> FieldStats {
    let (min, max) = field
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
    FieldStats {
        min,
        max,
        value_range: max - min,
        count: field.len(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub max_abs_error: f64,
    pub rmse: f64,
    /// dB; `+inf` when the reconstruction is exact.
    pub psnr: f64,
    /// Filled in by [`QualityReport::check_bound`]; `true` until checked.
    pub error_bound_satisfied: bool,
}

impl QualityReport {
    pub fn check_bound(mut self, error_bound: f64) -> Self {
        self.error_bound_satisfied = self.max_abs_error <= error_bound;
        self
    }
}

/// PSNR as `20·log10(range) − 20·log10(rmse)`.
pub fn psnr(value_range: f64, rmse: f64) -> f64 {
    if rmse == 0.0 {
        f64::INFINITY
    } else {
        20.0 * value_range.log10() - 20.0 * rmse.log10()
    }
}

/// Compares a reconstruction against its original. `value_range` should be
/// the original field's range.
pub fn quality(
    original: &Field,
    reconstructed: &Field,
    value_range: f64,
) -> Result<QualityReport, FieldError> {
    if original.dims() != reconstructed.dims() || original.elem_type() != reconstructed.elem_type()
    {
        return Err(FieldError::ShapeMismatch(format!(
            "{:?}/{} vs {:?}/{}",
            original.dims(),
            original.elem_type(),
            reconstructed.dims(),
            reconstructed.elem_type()
        )));
    }
    let mut max_abs_error = 0.0f64;
    let mut sum_sq = 0.0f64;
    for (a, b) in original.iter().zip(reconstructed.iter()) {
        let e = (a - b).abs();
        max_abs_error = max_abs_error.max(e);
        sum_sq += e * e;
    }
    let rmse = (sum_sq / original.len() as f64).sqrt();
    if rmse > 0.0 && value_range <= 0.0 {
        return Err(FieldError::ZeroRange);
    }
    Ok(QualityReport {
        max_abs_error,
        rmse,
        psnr: psnr(value_range, rmse),
        error_bound_satisfied: true,
    })
}

/// One manifest record: `relative_path;dtype;d1xd2xd3`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub rel_path: PathBuf,
    pub elem_type: ElemType,
    pub dims: Vec<usize>,
}

impl ManifestEntry {
    pub fn elem_count(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn byte_len(&self) -> u64 {
        (self.elem_count() * self.elem_type.size()) as u64
    }

    /// Path with forward slashes, as written in manifests, sidecars and ledgers.
    pub fn key(&self) -> String {
        path_key(&self.rel_path)
    }
}

pub(crate) fn path_key(path: &Path) -> String {
    path.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

impl fmt::Display for ManifestEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dims: Vec<String> = self.dims.iter().map(|d| d.to_string()).collect();
        write!(f, "{};{};{}", self.key(), self.elem_type, dims.join("x"))
    }
}

pub fn parse_dims(s: &str) -> Result<Vec<usize>, String> {
    let dims = s
        .split(['x', 'X', ','])
        .map(|d| d.trim().parse::<usize>().map_err(|e| format!("bad dim `{d}`: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    validate_dims(&dims).map_err(|e| e.to_string())?;
    Ok(dims)
}

/// A list of fields relative to a root directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn parse(root: impl Into<PathBuf>, text: &str) -> Result<Self, FieldError> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |reason: String| FieldError::Manifest { line: i + 1, reason };
            let parts: Vec<&str> = line.split(';').collect();
            if parts.len() != 3 {
                return Err(bad(format!("expected 3 `;`-separated fields, got {}", parts.len())));
            }
            let rel_path = PathBuf::from(parts[0].trim());
            if rel_path.as_os_str().is_empty() || rel_path.is_absolute() {
                return Err(bad("path must be relative".into()));
            }
            let elem_type = parts[1].parse().map_err(bad)?;
            let dims = parse_dims(parts[2]).map_err(bad)?;
            entries.push(ManifestEntry {
                rel_path,
                elem_type,
                dims,
            });
        }
        Ok(Manifest {
            root: root.into(),
            entries,
        })
    }

    /// Reads a manifest file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, FieldError> {
        let text = fs::read_to_string(path)?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(root, &text)
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|e| format!("{e}\n")).collect()
    }

    pub fn write(&self, path: &Path) -> Result<(), FieldError> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn source_path(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.rel_path)
    }

    pub fn load_entry(&self, entry: &ManifestEntry) -> Result<Field, FieldError> {
        load_raw(&self.source_path(entry), &entry.dims, entry.elem_type)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn load_24_byte_file_as_2x3_f32() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.f32");
        fs::write(&p, [0u8; 24]).unwrap();
        let f = load_raw(&p, &[2, 3], ElemType::F32).unwrap();
        assert_eq!(f.len(), 6);
        assert_eq!(f.dims(), &[2, 3]);
    }

    #[test]
    fn load_23_byte_file_is_size_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.f32");
        fs::write(&p, [0u8; 23]).unwrap();
        let err = load_raw(&p, &[2, 3], ElemType::F32).unwrap_err();
        assert!(matches!(err, FieldError::SizeMismatch { expected: 24, actual: 23, .. }));
    }

    #[test]
    fn load_f64_values_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.f64");
        // independent byte image, written without going through Field
        let mut bytes = Vec::new();
        for v in [1.0f64, 2.0, 3.0, 4.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(&p, &bytes).unwrap();
        let f = load_raw(&p, &[4], ElemType::F64).unwrap();
        assert_eq!(f.to_f64_vec(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn load_rejects_nan() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.f32");
        let mut bytes = Vec::new();
        for v in [1.0f32, f32::NAN] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(&p, &bytes).unwrap();
        let err = load_raw(&p, &[2], ElemType::F32).unwrap_err();
        assert!(matches!(err, FieldError::NonFiniteValue { index: 1, .. }));
    }

    #[test]
    fn invalid_dims() {
        assert!(Field::from_f64(vec![], vec![]).is_err());
        assert!(Field::from_f64(vec![0], vec![]).is_err());
        assert!(Field::from_f64(vec![1, 1, 1, 1], vec![0.0]).is_err());
    }

    #[test]
    fn stats_examples() {
        let c = Field::from_f64(vec![10], vec![5.0; 10]).unwrap();
        let s = stats(&c);
        assert_eq!((s.min, s.max, s.value_range, s.count), (5.0, 5.0, 0.0, 10));

        let f = Field::from_f64(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
        let s = stats(&f);
        assert_eq!((s.min, s.max, s.value_range), (-1.0, 2.0, 3.0));
    }

    #[test]
    fn quality_identical_is_infinite_psnr() {
        let f = Field::from_f64(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let q = quality(&f, &f, 2.0).unwrap();
        assert_eq!(q.max_abs_error, 0.0);
        assert_eq!(q.psnr, f64::INFINITY);
        // identical constant fields are fine even with zero range
        let c = Field::from_f64(vec![2], vec![1.0, 1.0]).unwrap();
        assert_eq!(quality(&c, &c, 0.0).unwrap().psnr, f64::INFINITY);
    }

    #[test]
    fn quality_half_step_example() {
        let a = Field::from_f64(vec![2], vec![0.0, 1.0]).unwrap();
        let b = Field::from_f64(vec![2], vec![0.0, 0.5]).unwrap();
        let q = quality(&a, &b, 1.0).unwrap();
        // sqrt(0.125) and -20·log10(sqrt(0.125)), computed by hand
        assert!((q.rmse - 0.353_553_390_593_273_8).abs() < 1e-12);
        assert!((q.psnr - 9.030_899_869_919_434).abs() < 1e-9);
        assert_eq!(q.max_abs_error, 0.5);
    }

    #[test]
    fn quality_errors() {
        let a = Field::from_f64(vec![2], vec![0.0, 1.0]).unwrap();
        let b = Field::from_f64(vec![1, 2], vec![0.0, 1.0]).unwrap();
        assert!(matches!(quality(&a, &b, 1.0), Err(FieldError::ShapeMismatch(_))));
        let c = Field::from_f32(vec![2], vec![0.0, 1.0]).unwrap();
        assert!(matches!(quality(&a, &c, 1.0), Err(FieldError::ShapeMismatch(_))));
        let d = Field::from_f64(vec![2], vec![0.0, 0.5]).unwrap();
        assert!(matches!(quality(&a, &d, 0.0), Err(FieldError::ZeroRange)));
    }

    #[test]
    fn manifest_round_trip() {
        let text = "snap/p1.f32;f32;449x449x235\n# comment\n\nb.f64;f64;10\n";
        let m = Manifest::parse("/data", text).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.entries[0].dims, vec![449, 449, 235]);
        assert_eq!(m.entries[1].elem_type, ElemType::F64);
        assert_eq!(m.to_text(), "snap/p1.f32;f32;449x449x235\nb.f64;f64;10\n");
        assert_eq!(m.source_path(&m.entries[1]), PathBuf::from("/data/b.f64"));
        assert!(Manifest::parse(".", "a;f16;3").is_err());
        assert!(Manifest::parse(".", "a;f32").is_err());
        assert!(Manifest::parse(".", "/abs;f32;3").is_err());
    }

    fn field_strategy() -> impl Strategy<Value = Field> {
        (prop::collection::vec(1usize..6, 1..=3), any::<bool>()).prop_flat_map(|(dims, single)| {
            let n: usize = dims.iter().product();
            prop::collection::vec(-1e6f64..1e6, n).prop_map(move |vals| {
                let et = if single { ElemType::F32 } else { ElemType::F64 };
                Field::from_values(dims.clone(), et, vals).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn store_then_load_is_bit_exact(f in field_strategy()) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("x.raw");
            store_raw(&p, &f).unwrap();
            let g = load_raw(&p, f.dims(), f.elem_type()).unwrap();
            prop_assert_eq!(f.to_le_bytes(), g.to_le_bytes());
        }

        #[test]
        fn rmse_never_exceeds_max_error(a in prop::collection::vec(-10f64..10.0, 1..50), seed in any::<u64>()) {
            let n = a.len();
            let b: Vec<f64> = a.iter().enumerate()
                .map(|(i, v)| v + (((seed.wrapping_mul(i as u64 + 1)) % 1000) as f64 - 500.0) * 1e-3)
                .collect();
            let fa = Field::from_f64(vec![n], a).unwrap();
            let fb = Field::from_f64(vec![n], b).unwrap();
            let q = quality(&fa, &fb, 20.0).unwrap();
            prop_assert!(q.rmse <= q.max_abs_error * (1.0 + 1e-12));
        }

        #[test]
        fn scaling_errors_shifts_psnr(a in prop::collection::vec(-10f64..10.0, 2..50), k in 1.5f64..100.0) {
            let n = a.len();
            let err: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1e-3 } else { -2e-3 }).collect();
            let b1: Vec<f64> = a.iter().zip(&err).map(|(v, e)| v + e).collect();
            let b2: Vec<f64> = a.iter().zip(&err).map(|(v, e)| v + k * e).collect();
            let fa = Field::from_f64(vec![n], a.clone()).unwrap();
            let q1 = quality(&fa, &Field::from_f64(vec![n], b1).unwrap(), 20.0).unwrap();
            let q2 = quality(&fa, &Field::from_f64(vec![n], b2).unwrap(), 20.0).unwrap();
            prop_assert!((q1.psnr - q2.psnr - 20.0 * k.log10()).abs() < 1e-6);
        }
    }
}
