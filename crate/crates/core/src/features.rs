//! Cheap predictors of compression quality, computed on a sampled subset of
//! a field.
//!
//! Three families of features feed the quality model: the configuration
//! (error bound, compressor), the data (range, byte entropy, Lorenzo error)
//! and the compressor's intermediate state (statistics of the quantization
//! codes and of a Huffman code built over them).

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{
    for_each_sampled,
    lorenzo::view_shape,
    predict_quantize, sampled_codes_and_error, CodecError, CompressorConfig, HuffmanTable, Predictor, OUTLIER_CODE,
};
use crate::field::{ElemType, Field, FieldData};

/// Value reported for the run-length estimator when its denominator vanishes.
pub const R_RLE_CLAMP: f64 = 1e6;
const DENOM_EPS: f64 = 1e-12;

pub const FEATURE_COUNT: usize = 11;

/// Column names, in [`FeatureVector::to_array`] order.
pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "eb_log10",
    "compressor_id",
    "min",
    "max",
    "range",
    "byte_entropy",
    "lorenzo_err",
    "p0",
    "P0",
    "quant_entropy",
    "r_rle",
];

/// Index of the categorical column in [`FEATURE_NAMES`].
pub const CATEGORICAL_FEATURE: usize = 1;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("degenerate denominator {0:e} (p0 and P0 both near 1)")]
    DegenerateDenominator(f64),
    #[error("sampling stride must be at least 1")]
    InvalidStride,
    #[error(transparent)]
    Codec(#[from] CodecError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingSpec {
    pub stride: usize,
}

impl Default for SamplingSpec {
    /// One point in every hundred.
    fn default() -> Self {
        SamplingSpec { stride: 100 }
    }
}

impl SamplingSpec {
    pub fn new(stride: usize) -> Result<Self, FeatureError> {
        if stride == 0 {
            return Err(FeatureError::InvalidStride);
        }
        Ok(SamplingSpec { stride })
    }

    pub fn full() -> Self {
        SamplingSpec { stride: 1 }
    }

    /// Number of sites visited on a field of `n` elements.
    pub fn site_count(&self, n: usize) -> usize {
        n.div_ceil(self.stride)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub eb_log10: f64,
    pub compressor_id: u8,
    pub min: f64,
    pub max: f64,
    pub value_range: f64,
    pub byte_entropy: f64,
    pub avg_lorenzo_error: f64,
    pub p0: f64,
    #[serde(rename = "P0")]
    pub big_p0: f64,
    pub quant_entropy: f64,
    pub r_rle: f64,
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; FEATURE_COUNT] {
        [
            self.eb_log10,
            self.compressor_id as f64,
            self.min,
            self.max,
            self.value_range,
            self.byte_entropy,
            self.avg_lorenzo_error,
            self.p0,
            self.big_p0,
            self.quant_entropy,
            self.r_rle,
        ]
    }

    pub fn from_array(a: [f64; FEATURE_COUNT]) -> Self {
        FeatureVector {
            eb_log10: a[0],
            compressor_id: a[1] as u8,
            min: a[2],
            max: a[3],
            value_range: a[4],
            byte_entropy: a[5],
            avg_lorenzo_error: a[6],
            p0: a[7],
            big_p0: a[8],
            quant_entropy: a[9],
            r_rle: a[10],
        }
    }
}

/// Compressor-level statistics of the quantization codes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantFeatures {
    /// Fraction of codes equal to zero.
    pub p0: f64,
    /// Zero code's share of the Huffman-encoded bits.
    pub big_p0: f64,
    /// Shannon entropy of the code histogram, bits per code.
    pub quant_entropy: f64,
}

fn shannon_bits(counts: impl Iterator<Item = u64>, total: u64) -> f64 {
    let t = total as f64;
    let h: f64 = counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / t;
            -p * p.log2()
        })
        .sum();
    h.max(0.0)
}

fn byte_histogram(field: &Field, stride: usize) -> [u64; 256] {
    let mut hist = [0u64; 256];
    match field.data() {
        FieldData::F32(v) => {
            for x in v.iter().step_by(stride) {
                for b in x.to_le_bytes() {
                    hist[b as usize] += 1;
                }
            }
        }
        FieldData::F64(v) => {
            for x in v.iter().step_by(stride) {
                for b in x.to_le_bytes() {
                    hist[b as usize] += 1;
                }
            }
        }
    }
    hist
}

// Steps the typed slice directly; `Field::iter` is boxed and would visit
// every element.
fn sampled_min_max(field: &Field, stride: usize) -> (f64, f64) {
    let fold = |(lo, hi): (f64, f64), v: f64| (lo.min(v), hi.max(v));
    let init = (f64::INFINITY, f64::NEG_INFINITY);
    match field.data() {
        FieldData::F32(v) => v.iter().step_by(stride).map(|&x| x as f64).fold(init, fold),
        FieldData::F64(v) => v.iter().step_by(stride).copied().fold(init, fold),
    }
}

/// Shannon entropy (bits per byte) of the little-endian byte image.
pub fn byte_entropy(field: &Field) -> f64 {
    byte_entropy_sampled(field, SamplingSpec::full())
}

/// [`byte_entropy`] restricted to the bytes of the sampled values.
pub fn byte_entropy_sampled(field: &Field, spec: SamplingSpec) -> f64 {
    let hist = byte_histogram(field, spec.stride);
    let total = hist.iter().sum();
    shannon_bits(hist.into_iter(), total)
}

fn lorenzo_error_with(field: &Field, predictor: Predictor, spec: SamplingSpec) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for_each_sampled(field, view_shape(field.dims(), predictor.order()), spec.stride, |_, v, pred| {
        sum += (v - pred).abs();
        n += 1;
    });
    sum / n as f64
}

/// Mean absolute Lorenzo prediction error over the sampled sites, predicting
/// from original neighbour values with the dims-derived predictor.
pub fn avg_lorenzo_error(field: &Field, spec: SamplingSpec) -> f64 {
    lorenzo_error_with(field, Predictor::for_dims(field.dims()), spec)
}

/// Statistics of the code stream produced by `predict_quantize` at the
/// sampling stride. Outlier markers count as codes.
pub fn quant_features(
    field: &Field,
    config: &CompressorConfig,
    spec: SamplingSpec,
) -> Result<QuantFeatures, FeatureError> {
    let q = predict_quantize(field, config, spec.stride)?;
    Ok(code_statistics(&q.codes))
}

/// `(code, count)` for every code present, ascending, so the outlier
/// marker comes first.
fn code_histogram(codes: &[i32]) -> Vec<(i32, u64)> {
    let outliers = codes.iter().filter(|&&c| c == OUTLIER_CODE).count() as u64;
    let (lo, hi) = codes
        .iter()
        .filter(|&&c| c != OUTLIER_CODE)
        .fold((i32::MAX, i32::MIN), |(lo, hi), &c| (lo.min(c), hi.max(c)));
    let mut hist = Vec::new();
    if outliers > 0 {
        hist.push((OUTLIER_CODE, outliers));
    }
    if lo > hi {
        return hist;
    }
    let span = (hi as i64 - lo as i64 + 1) as usize;
    if span > codes.len().max(1 << 16) {
        let mut sorted: Vec<i32> = codes.iter().copied().filter(|&c| c != OUTLIER_CODE).collect();
        sorted.sort_unstable();
        for c in sorted {
            match hist.last_mut() {
                Some((last, k)) if *last == c => *k += 1,
                _ => hist.push((c, 1)),
            }
        }
        return hist;
    }
    let mut counts = vec![0u64; span];
    for &c in codes.iter().filter(|&&c| c != OUTLIER_CODE) {
        counts[(c as i64 - lo as i64) as usize] += 1;
    }
    hist.extend(
        counts
            .into_iter()
            .enumerate()
            .filter(|&(_, k)| k > 0)
            .map(|(i, k)| ((lo as i64 + i as i64) as i32, k)),
    );
    hist
}

pub(crate) fn code_statistics(codes: &[i32]) -> QuantFeatures {
    let hist = code_histogram(codes);
    let total = codes.len() as u64;
    let zero = hist.iter().find(|&&(c, _)| c == 0).map_or(0, |&(_, k)| k);
    let quant_entropy = shannon_bits(hist.iter().map(|&(_, k)| k), total);

    // Huffman symbols: the outlier marker first, then codes in order.
    let to_sym = |c: i32| -> u32 {
        if c == OUTLIER_CODE {
            0
        } else {
            (c as i64 - i32::MIN as i64) as u32
        }
    };
    let freqs: Vec<(u32, u64)> = hist.iter().map(|&(c, k)| (to_sym(c), k)).collect();
    let big_p0 = match HuffmanTable::from_frequencies(&freqs) {
        Ok(table) => {
            let bits = table.cost(&freqs).unwrap_or(0);
            let zero_bits = table.code_len(to_sym(0)).map_or(0, |l| l as u64) * zero;
            if bits == 0 {
                0.0
            } else {
                zero_bits as f64 / bits as f64
            }
        }
        Err(_) => 0.0,
    };
    QuantFeatures {
        p0: if total == 0 { 0.0 } else { zero as f64 / total as f64 },
        big_p0,
        quant_entropy,
    }
}

/// `1 / ((1 − p0)·P0 + (1 − P0))`.
pub fn run_length_estimator(p0: f64, big_p0: f64) -> Result<f64, FeatureError> {
    baseline_cr_estimate(p0, big_p0, 1.0)
}

/// Prior-work ratio estimator `1 / (C1·(1 − p0)·P0 + (1 − P0))` with an
/// application-specific tuning constant `c1`.
pub fn baseline_cr_estimate(p0: f64, big_p0: f64, c1: f64) -> Result<f64, FeatureError> {
    let denom = c1 * (1.0 - p0) * big_p0 + (1.0 - big_p0);
    if denom <= DENOM_EPS {
        return Err(FeatureError::DegenerateDenominator(denom));
    }
    Ok(1.0 / denom)
}

/// All eleven features. Every data pass touches only the sampled sites
/// (plus their Lorenzo neighbours), so `min`/`max`/`range` are those of the
/// sample.
pub fn extract(
    field: &Field,
    config: &CompressorConfig,
    spec: SamplingSpec,
) -> Result<FeatureVector, FeatureError> {
    if spec.stride == 0 {
        return Err(FeatureError::InvalidStride);
    }
    config.validate()?;
    let predictor = config.predictor_for(field.dims());
    let (min, max) = sampled_min_max(field, spec.stride);
    // one shared pass when sampling; the full pass quantizes against
    // reconstructed neighbours, so error and codes differ there
    let (q, lorenzo_err, entropy) = if spec.stride > 1 {
        // sampled values round-trip exactly through f64
        let mut hist = [0u64; 256];
        let f32_data = field.elem_type() == ElemType::F32;
        let (codes, err) = sampled_codes_and_error(field, config, spec.stride, |v| {
            if f32_data {
                (v as f32).to_le_bytes().iter().for_each(|&b| hist[b as usize] += 1);
            } else {
                v.to_le_bytes().iter().for_each(|&b| hist[b as usize] += 1);
            }
        })?;
        let total = hist.iter().sum();
        (code_statistics(&codes), err, shannon_bits(hist.into_iter(), total))
    } else {
        (
            quant_features(field, config, spec)?,
            lorenzo_error_with(field, predictor, spec),
            byte_entropy_sampled(field, spec),
        )
    };
    let r_rle = run_length_estimator(q.p0, q.big_p0).unwrap_or(R_RLE_CLAMP);
    Ok(FeatureVector {
        eb_log10: config.error_bound.log10(),
        compressor_id: config.compressor_id.tag(),
        min,
        max,
        value_range: max - min,
        byte_entropy: entropy,
        avg_lorenzo_error: lorenzo_err,
        p0: q.p0,
        big_p0: q.big_p0,
        quant_entropy: q.quant_entropy,
        r_rle: r_rle.min(R_RLE_CLAMP),
    })
}

/// [`extract`] plus its wall-clock cost.
pub fn extract_timed(
    field: &Field,
    config: &CompressorConfig,
    spec: SamplingSpec,
) -> Result<(FeatureVector, Duration), FeatureError> {
    let start = Instant::now();
    let fv = extract(field, config, spec)?;
    Ok((fv, start.elapsed()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_entropy(bytes: &[u8]) -> f64 {
        let mut counts = std::collections::HashMap::<u8, usize>::new();
        for &b in bytes {
            *counts.entry(b).or_default() += 1;
        }
        let n = bytes.len() as f64;
        counts.values().map(|&c| c as f64 / n).map(|p| -p * p.log2()).sum()
    }

    #[test]
    fn byte_entropy_examples() {
        let zero = Field::from_f64(vec![100], vec![0.0; 100]).unwrap();
        assert_eq!(byte_entropy(&zero), 0.0);

        // every byte value exactly once; high bytes stay below 0x40 so all
        // values are finite
        let vals: Vec<f32> = (0..64u8)
            .map(|j| f32::from_le_bytes([64 + 3 * j, 65 + 3 * j, 66 + 3 * j, j]))
            .collect();
        let f = Field::from_f32(vec![64], vals).unwrap();
        assert!((byte_entropy(&f) - 8.0).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r: Vec<f64> = (0..5000).map(|_| rng.gen::<f64>() * 1e3).collect();
        let f = Field::from_f64(vec![5000], r).unwrap();
        assert!((byte_entropy(&f) - brute_entropy(&f.to_le_bytes())).abs() < 1e-9);
    }

    #[test]
    fn lorenzo_error_examples() {
        let c = Field::from_f64(vec![10, 10], vec![4.0; 100]).unwrap();
        // only the corner site predicts from the zero boundary
        let e = avg_lorenzo_error(&c, SamplingSpec::full());
        assert!((e - 4.0 / 100.0).abs() < 1e-12);
        let z = Field::from_f64(vec![10, 10], vec![0.0; 100]).unwrap();
        assert_eq!(avg_lorenzo_error(&z, SamplingSpec::default()), 0.0);
        let two = Field::from_f64(vec![2], vec![0.0, 2.5]).unwrap();
        assert_eq!(avg_lorenzo_error(&two, SamplingSpec::full()), 1.25);
    }

    fn oracle_lorenzo_2d(v: &[f64], ny: usize, nx: usize, stride: usize) -> f64 {
        let at = |y: isize, x: isize| if y < 0 || x < 0 { 0.0 } else { v[y as usize * nx + x as usize] };
        let sites: Vec<usize> = (0..ny * nx).filter(|i| i % stride == 0).collect();
        let total: f64 = sites
            .iter()
            .map(|&i| {
                let (y, x) = ((i / nx) as isize, (i % nx) as isize);
                (at(y, x) - (at(y, x - 1) + at(y - 1, x) - at(y - 1, x - 1))).abs()
            })
            .sum();
        total / sites.len() as f64
    }

    #[test]
    fn lorenzo_error_matches_oracle_on_random_2d() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (ny, nx) = (123, 77);
        let v: Vec<f64> = (0..ny * nx).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let f = Field::from_f64(vec![ny, nx], v.clone()).unwrap();
        for stride in [1, 7, 100] {
            let got = avg_lorenzo_error(&f, SamplingSpec::new(stride).unwrap());
            assert!((got - oracle_lorenzo_2d(&v, ny, nx, stride)).abs() < 1e-12);
        }
    }

    #[test]
    fn quant_features_constant_field() {
        let f = Field::from_f64(vec![1000], vec![0.0; 1000]).unwrap();
        let q = quant_features(&f, &CompressorConfig::new(1e-3), SamplingSpec::default()).unwrap();
        assert_eq!((q.p0, q.big_p0, q.quant_entropy), (1.0, 1.0, 0.0));
    }

    #[test]
    fn half_zero_half_one_codes() {
        let codes: Vec<i32> = (0..100).map(|i| i % 2).collect();
        let q = code_statistics(&codes);
        assert_eq!(q.p0, 0.5);
        assert!((q.quant_entropy - 1.0).abs() < 1e-12);
        assert_eq!(q.big_p0, 0.5);
    }

    #[test]
    fn estimator_arithmetic() {
        assert_eq!(run_length_estimator(1.0, 0.5).unwrap(), 2.0);
        for big in [0.0, 0.3, 0.99] {
            assert!((run_length_estimator(0.0, big).unwrap() - 1.0).abs() < 1e-15);
        }
        assert!((run_length_estimator(0.9, 0.8).unwrap() - 1.0 / 0.28).abs() < 1e-12);
        assert!((baseline_cr_estimate(0.99, 0.9, 0.5).unwrap() - 1.0 / 0.1045).abs() < 1e-12);
        assert!((baseline_cr_estimate(0.99, 0.9, 0.5).unwrap() - 9.5694).abs() < 1e-4);
        assert!(matches!(
            baseline_cr_estimate(1.0, 1.0, 3.0),
            Err(FeatureError::DegenerateDenominator(_))
        ));
        assert_eq!(
            baseline_cr_estimate(0.4, 0.7, 1.0).unwrap(),
            run_length_estimator(0.4, 0.7).unwrap()
        );
    }

    #[test]
    fn extract_constant_zero_field() {
        let f = Field::from_f32(vec![20, 20, 20], vec![0.0; 8000]).unwrap();
        let fv = extract(&f, &CompressorConfig::new(1e-2), SamplingSpec::default()).unwrap();
        assert_eq!(fv.p0, 1.0);
        assert_eq!(fv.big_p0, 1.0);
        assert_eq!(fv.quant_entropy, 0.0);
        assert_eq!(fv.byte_entropy, 0.0);
        assert_eq!(fv.avg_lorenzo_error, 0.0);
        assert_eq!(fv.r_rle, R_RLE_CLAMP);
        assert_eq!(fv.eb_log10, -2.0);
    }

    /// Materializes the sampled codes with an independent Lorenzo loop and
    /// builds a Huffman table over them.
    #[test]
    fn quant_features_match_full_materialization() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (nz, ny, nx) = (20, 30, 40);
        let v: Vec<f64> = (0..nz * ny * nx).map(|_| rng.gen::<f64>()).collect();
        let f = Field::from_f64(vec![nz, ny, nx], v.clone()).unwrap();
        let eb = 1e-2;
        let at = |z: isize, y: isize, x: isize| {
            if z < 0 || y < 0 || x < 0 {
                0.0
            } else {
                v[(z as usize * ny + y as usize) * nx + x as usize]
            }
        };
        let mut codes = Vec::new();
        for i in (0..v.len()).step_by(100) {
            let (z, y, x) = ((i / (ny * nx)) as isize, ((i / nx) % ny) as isize, (i % nx) as isize);
            let p = at(z, y, x - 1) + at(z, y - 1, x) + at(z - 1, y, x) - at(z, y - 1, x - 1)
                - at(z - 1, y, x - 1)
                - at(z - 1, y - 1, x)
                + at(z - 1, y - 1, x - 1);
            codes.push(((v[i] - p) / (2.0 * eb)).round() as i64);
        }
        let n = codes.len() as f64;
        let mut hist = std::collections::BTreeMap::<i64, u64>::new();
        for &c in &codes {
            *hist.entry(c).or_default() += 1;
        }
        let p0 = *hist.get(&0).unwrap_or(&0) as f64 / n;
        let ent: f64 = hist.values().map(|&k| k as f64 / n).map(|p| -p * p.log2()).sum();
        let freqs: Vec<(u32, u64)> = hist.iter().map(|(&c, &k)| ((c + 1000) as u32, k)).collect();
        let t = HuffmanTable::from_frequencies(&freqs).unwrap();
        let big_p0 = (t.code_len(1000).unwrap() as u64 * hist[&0]) as f64 / t.cost(&freqs).unwrap() as f64;

        let q = quant_features(&f, &CompressorConfig::new(eb), SamplingSpec::default()).unwrap();
        assert_eq!(q.p0, p0);
        assert!((q.quant_entropy - ent).abs() < 1e-12);
        assert!((q.big_p0 - big_p0).abs() < 1e-12);
    }

    #[test]
    fn extract_is_composition_of_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let v: Vec<f64> = (0..50 * 60).map(|i| (i as f64 * 0.01).sin() + rng.gen::<f64>() * 0.1).collect();
        // the sampled path shares one pass; it must agree with each op alone
        for et in [ElemType::F32, ElemType::F64] {
            let f = Field::from_values(vec![50, 60], et, v.clone()).unwrap();
            let cfg = CompressorConfig::new(1e-3);
            let spec = SamplingSpec::new(13).unwrap();
            let fv = extract(&f, &cfg, spec).unwrap();
            let q = quant_features(&f, &cfg, spec).unwrap();
            let sampled: Vec<f64> = f.iter().step_by(13).collect();
            let min = sampled.iter().copied().fold(f64::INFINITY, f64::min);
            let max = sampled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let expect = FeatureVector {
                eb_log10: -3.0,
                compressor_id: 0,
                min,
                max,
                value_range: max - min,
                byte_entropy: byte_entropy_sampled(&f, spec),
                avg_lorenzo_error: avg_lorenzo_error(&f, spec),
                p0: q.p0,
                big_p0: q.big_p0,
                quant_entropy: q.quant_entropy,
                r_rle: run_length_estimator(q.p0, q.big_p0).unwrap(),
            };
            assert_eq!(fv, expect);
            assert_eq!(fv, extract(&f, &cfg, spec).unwrap());
        }
    }

    #[test]
    fn full_stride_matches_codec_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let v: Vec<f64> = (0..4000).map(|i| (i as f64 * 0.003).cos() + rng.gen::<f64>() * 1e-3).collect();
        let f = Field::from_f64(vec![40, 100], v).unwrap();
        let cfg = CompressorConfig::new(1e-4);
        let codec = predict_quantize(&f, &cfg, 1).unwrap();
        let q = quant_features(&f, &cfg, SamplingSpec::full()).unwrap();
        assert_eq!(q.p0, codec.zero_count() as f64 / codec.codes.len() as f64);
        let block = crate::codec::compress(&f, &cfg).unwrap();
        // P0 over the real payload: zero symbol is code + radius = 32768
        let zero_len = block.table.code_len(32768).unwrap() as f64;
        let total_bits: f64 = {
            let mut hist = std::collections::BTreeMap::<i32, u64>::new();
            for &c in &codec.codes {
                *hist.entry(c).or_default() += 1;
            }
            hist.iter()
                .map(|(&c, &k)| {
                    let sym = if c == OUTLIER_CODE { 0 } else { (c + 32768) as u32 };
                    k as f64 * block.table.code_len(sym).unwrap() as f64
                })
                .sum()
        };
        let expect = zero_len * codec.zero_count() as f64 / total_bits;
        assert!((q.big_p0 - expect).abs() < 1e-12);
    }

    #[test]
    fn smooth_field_p0_grows_with_error_bound() {
        let v: Vec<f64> = (0..64 * 64)
            .map(|i| ((i / 64) as f64 * 0.05).sin() * ((i % 64) as f64 * 0.07).cos())
            .collect();
        let f = Field::from_f64(vec![64, 64], v).unwrap();
        let mut last = -1.0;
        for k in (1..=6).rev() {
            let q = quant_features(&f, &CompressorConfig::new(10f64.powi(-k)), SamplingSpec::new(3).unwrap())
                .unwrap();
            assert!(q.p0 >= last, "eb 1e-{k}: {} < {last}", q.p0);
            last = q.p0;
        }
    }

    #[test]
    fn extract_touches_expected_site_count() {
        let spec = SamplingSpec::default();
        assert_eq!(spec.site_count(1000), 10);
        assert_eq!(spec.site_count(1001), 11);
        let f = Field::from_f64(vec![1001], vec![1.0; 1001]).unwrap();
        let q = predict_quantize(&f, &CompressorConfig::new(0.1), spec.stride).unwrap();
        assert_eq!(q.codes.len(), 11);
    }

    proptest! {
        #[test]
        fn r_rle_at_least_one(p0 in 0.0f64..=1.0, big in 0.0f64..=1.0) {
            if let Ok(r) = run_length_estimator(p0, big) {
                prop_assert!(r >= 1.0 - 1e-12);
            }
        }

        #[test]
        fn features_stay_in_range(seed in any::<u64>(), k in 1i32..=6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v: Vec<f64> = (0..3000).map(|_| rng.gen::<f64>()).collect();
            let f = Field::from_f64(vec![3000], v).unwrap();
            let before = f.clone();
            let fv = extract(&f, &CompressorConfig::new(10f64.powi(-k)), SamplingSpec::new(7).unwrap()).unwrap();
            prop_assert_eq!(&f, &before);
            prop_assert!((0.0..=1.0).contains(&fv.p0));
            prop_assert!((0.0..=1.0).contains(&fv.big_p0));
            prop_assert!((0.0..=8.0).contains(&fv.byte_entropy));
            prop_assert!(fv.r_rle >= 1.0 - 1e-12);
            prop_assert!(fv.quant_entropy >= 0.0);
        }
    }
}
