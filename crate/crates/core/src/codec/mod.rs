//! Error-bounded prediction-based lossy compression.
//!
//! The pipeline has three stages: Lorenzo prediction, linear-scale
//! quantization of the prediction error into integer codes, and canonical
//! Huffman coding of those codes. Values whose code would fall outside the
//! quantization range (or whose reconstruction would break the bound after
//! rounding to the element type) are stored verbatim as outliers.
//!
//! The compressor predicts from *reconstructed* neighbours, exactly as the
//! decompressor will, so the error bound holds point-wise.

mod block;
pub mod huffman;
pub mod lorenzo;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{Field, FieldData, FieldError, FieldStats};

pub use block::{BlockHeader, CompressedBlock, BLOCK_MAGIC, BLOCK_VERSION};
pub use huffman::{huffman_decode, huffman_encode, BitStream, HuffmanError, HuffmanTable};
pub use lorenzo::Predictor;

use huffman::BitWriter;
use lorenzo::{view_shape, Padded};

pub const DEFAULT_QUANT_BINS: u32 = 65536;
/// Symbols are stored as `u16` in the block format.
pub const MAX_QUANT_BINS: u32 = 65536;
/// Marker used in [`QuantizedStream::codes`] for unpredictable points.
pub const OUTLIER_CODE: i32 = i32::MIN;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("invalid compressor config: {0}")]
    InvalidConfig(String),
    #[error("{predictor:?} needs at least 2 elements, field has {len}")]
    DegenerateField { predictor: Predictor, len: usize },
    #[error("corrupt block: {0}")]
    CorruptBlock(String),
    #[error("huffman stream ended after {decoded} of {expected} codes")]
    HuffmanUnderrun { decoded: usize, expected: usize },
    #[error(transparent)]
    Huffman(HuffmanError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

impl From<HuffmanError> for CodecError {
    fn from(e: HuffmanError) -> Self {
        match e {
            HuffmanError::Underrun { decoded, expected } => {
                CodecError::HuffmanUnderrun { decoded, expected }
            }
            other => CodecError::Huffman(other),
        }
    }
}

/// Identifies the compression pipeline variant; a categorical model feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompressorId {
    /// Lorenzo prediction + linear quantization + Huffman.
    #[default]
    LorenzoHuffman,
}

impl CompressorId {
    pub fn tag(self) -> u8 {
        match self {
            CompressorId::LorenzoHuffman => 0,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(CompressorId::LorenzoHuffman),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompressorConfig {
    /// Absolute error bound.
    pub error_bound: f64,
    /// `None` picks the predictor from the field's dimensionality.
    pub predictor: Option<Predictor>,
    pub quant_bin_count: u32,
    pub compressor_id: CompressorId,
}

impl CompressorConfig {
    pub fn new(error_bound: f64) -> Self {
        CompressorConfig {
            error_bound,
            predictor: None,
            quant_bin_count: DEFAULT_QUANT_BINS,
            compressor_id: CompressorId::default(),
        }
    }

    /// Value-range-relative bound, converted to an absolute one.
    pub fn relative(rel_bound: f64, stats: &FieldStats) -> Self {
        Self::new(rel_bound * stats.value_range)
    }

    pub fn with_predictor(mut self, predictor: Predictor) -> Self {
        self.predictor = Some(predictor);
        self
    }

    pub fn with_quant_bins(mut self, bins: u32) -> Self {
        self.quant_bin_count = bins;
        self
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        if !(self.error_bound > 0.0 && self.error_bound.is_finite()) {
            return Err(CodecError::InvalidConfig(format!(
                "error bound must be positive and finite, got {}",
                self.error_bound
            )));
        }
        let b = self.quant_bin_count;
        if b < 2 || b % 2 != 0 || b > MAX_QUANT_BINS {
            return Err(CodecError::InvalidConfig(format!(
                "quant_bin_count must be even and in [2, {MAX_QUANT_BINS}], got {b}"
            )));
        }
        Ok(())
    }

    /// The requested predictor, or one matching the dimensionality. Single
    /// element fields default to 1-D.
    pub fn predictor_for(&self, dims: &[usize]) -> Predictor {
        match self.predictor {
            Some(p) => p,
            None if dims.iter().product::<usize>() < 2 => Predictor::Lorenzo1d,
            None => Predictor::for_dims(dims),
        }
    }

    /// Codes must satisfy `|code| < radius`.
    pub fn radius(&self) -> i64 {
        (self.quant_bin_count / 2) as i64
    }
}

/// Quantization codes of the sampled (or all) sites.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedStream {
    /// One code per site; [`OUTLIER_CODE`] marks unpredictable points.
    pub codes: Vec<i32>,
    /// `(flat index, original value)`, strictly increasing in index.
    pub outliers: Vec<(usize, f64)>,
    pub stride: usize,
}

impl QuantizedStream {
    pub fn zero_count(&self) -> usize {
        self.codes.iter().filter(|&&c| c == 0).count()
    }
}

/// Storage type of a field, as seen by the codec kernels.
pub(crate) trait Element: Copy + Default + PartialEq + Send + Sync + 'static {
    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
}

impl Element for f32 {
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

impl Element for f64 {
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
}

pub(crate) struct Quantized<T> {
    /// `0` = outlier, otherwise `code + radius`.
    pub symbols: Vec<u16>,
    pub outliers: Vec<(u64, T)>,
    pub histogram: Vec<u64>,
}

/// Codec-mode pass: predict from reconstructed neighbours.
pub(crate) fn quantize_codec<T: Element>(
    values: &[T],
    shape: [usize; 3],
    error_bound: f64,
    radius: i64,
) -> Quantized<T> {
    let [nz, ny, nx] = shape;
    let two_eb = 2.0 * error_bound;
    let rad = radius as f64;
    let mut pad = Padded::<T>::new(shape);
    let mut symbols = vec![0u16; values.len()];
    let mut histogram = vec![0u64; 2 * radius as usize];
    let mut outliers = Vec::new();
    let mut i = 0usize;
    for z in 0..nz {
        for y in 0..ny {
            let mut o = pad.offset(z, y, 0);
            for _ in 0..nx {
                let orig = values[i];
                let ov = orig.to_f64();
                let pred = pad.predict(o, T::to_f64);
                let q = ((ov - pred) / two_eb).round();
                let mut sym = 0u16;
                let mut recon = orig;
                if q.abs() < rad {
                    let r = T::from_f64(pred + two_eb * q);
                    if (ov - r.to_f64()).abs() <= error_bound {
                        sym = (q as i64 + radius) as u16;
                        recon = r;
                    }
                }
                if sym == 0 {
                    outliers.push((i as u64, orig));
                }
                histogram[sym as usize] += 1;
                symbols[i] = sym;
                pad.buf[o] = recon;
                o += 1;
                i += 1;
            }
        }
    }
    Quantized {
        symbols,
        outliers,
        histogram,
    }
}

fn check_predictor(field: &Field, predictor: Predictor) -> Result<(), CodecError> {
    if predictor != Predictor::Lorenzo1d && field.len() < 2 {
        return Err(CodecError::DegenerateField {
            predictor,
            len: field.len(),
        });
    }
    Ok(())
}

/// Compresses a field so that every reconstructed value is within
/// `config.error_bound` of the original.
pub fn compress(field: &Field, config: &CompressorConfig) -> Result<CompressedBlock, CodecError> {
    config.validate()?;
    let predictor = config.predictor_for(field.dims());
    check_predictor(field, predictor)?;
    let shape = view_shape(field.dims(), predictor.order());
    let radius = config.radius();
    let (symbols, histogram, outliers) = match field.data() {
        FieldData::F32(v) => {
            let q = quantize_codec(v, shape, config.error_bound, radius);
            let o = q.outliers.into_iter().map(|(i, x)| (i, x as f64)).collect();
            (q.symbols, q.histogram, o)
        }
        FieldData::F64(v) => {
            let q = quantize_codec(v, shape, config.error_bound, radius);
            (q.symbols, q.histogram, q.outliers)
        }
    };
    let freqs: Vec<(u32, u64)> = histogram
        .iter()
        .enumerate()
        .filter(|&(_, &c)| c > 0)
        .map(|(s, &c)| (s as u32, c))
        .collect();
    let table = HuffmanTable::from_frequencies(&freqs)?;
    let enc = table.encoder();
    let bits = table.cost(&freqs)?;
    let mut w = BitWriter::with_capacity((bits / 8 + 1) as usize);
    for &s in &symbols {
        enc.put(&mut w, s as u32)?;
    }
    let payload = w.finish();
    debug_assert_eq!(payload.bit_len, bits);

    Ok(CompressedBlock {
        header: BlockHeader {
            version: BLOCK_VERSION,
            dims: field.dims().to_vec(),
            elem_type: field.elem_type(),
            predictor,
            compressor_id: config.compressor_id,
            error_bound: config.error_bound,
            quant_bin_count: config.quant_bin_count,
            code_count: symbols.len() as u64,
            outlier_count: outliers.len() as u64,
        },
        table,
        payload: payload.bytes,
        outliers,
    })
}

fn reconstruct<T: Element>(
    block: &CompressedBlock,
    outliers: impl Iterator<Item = (u64, T)>,
) -> Result<Vec<T>, CodecError> {
    let h = &block.header;
    let shape = view_shape(&h.dims, h.predictor.order());
    let n = h.code_count as usize;
    let radius = (h.quant_bin_count / 2) as i64;
    let two_eb = 2.0 * h.error_bound;
    let [_, ny, nx] = shape;
    let mut pad = Padded::<T>::new(shape);
    let mut outliers = outliers.peekable();
    let mut out = Vec::with_capacity(n);
    let mut bad: Option<String> = None;
    let mut i = 0usize;
    let bit_len = block.payload.len() as u64 * 8;
    block
        .table
        .decoder()
        .decode_into(&block.payload, bit_len, n, |sym| {
            if bad.is_some() {
                return;
            }
            let (z, rem) = (i / (ny * nx), i % (ny * nx));
            let o = pad.offset(z, rem / nx, rem % nx);
            let v = if sym == 0 {
                match outliers.next() {
                    Some((idx, v)) if idx == i as u64 => v,
                    other => {
                        bad = Some(format!("outlier marker at {i} but next outlier is {other:?}",
                            other = other.map(|(k, _)| k)));
                        T::default()
                    }
                }
            } else if (sym as i64) < 2 * radius {
                let pred = pad.predict(o, T::to_f64);
                T::from_f64(pred + two_eb * (sym as i64 - radius) as f64)
            } else {
                bad = Some(format!("symbol {sym} outside quantization range"));
                T::default()
            };
            pad.buf[o] = v;
            out.push(v);
            i += 1;
        })?;
    if let Some(reason) = bad {
        return Err(CodecError::CorruptBlock(reason));
    }
    if outliers.next().is_some() {
        return Err(CodecError::CorruptBlock("unused outliers".into()));
    }
    Ok(out)
}

/// Inverse of [`compress`]; needs nothing but the block.
pub fn decompress(block: &CompressedBlock) -> Result<Field, CodecError> {
    let h = &block.header;
    let data = match h.elem_type {
        crate::field::ElemType::F32 => FieldData::F32(reconstruct(
            block,
            block.outliers.iter().map(|&(i, v)| (i, v as f32)),
        )?),
        crate::field::ElemType::F64 => {
            FieldData::F64(reconstruct(block, block.outliers.iter().copied())?)
        }
    };
    Field::new(h.dims.clone(), data).map_err(|e| CodecError::CorruptBlock(e.to_string()))
}

pub fn decompress_bytes(bytes: &[u8]) -> Result<Field, CodecError> {
    decompress(&CompressedBlock::from_bytes(bytes)?)
}

/// Calls `f(index, value, prediction)` for every `stride`-th element in
/// row-major order, predicting from original neighbour values.
pub(crate) fn for_each_sampled(field: &Field, shape: [usize; 3], stride: usize, f: impl FnMut(usize, f64, f64)) {
    fn visit<T: Copy>(v: &[T], to: impl Fn(T) -> f64, shape: [usize; 3], stride: usize, mut f: impl FnMut(usize, f64, f64)) {
        let [_, ny, nx] = shape;
        // coordinates advance by the stride with carries, avoiding a
        // division per site
        let plane = ny * nx;
        let (sz, sy, sx) = (stride / plane, stride % plane / nx, stride % nx);
        let (mut z, mut y, mut x) = (0, 0, 0);
        for i in (0..v.len()).step_by(stride) {
            // same terms and summation order as `predict_at`, by flat offset
            let (hz, hy, hx) = (z > 0, y > 0, x > 0);
            let at = |present: bool, back: usize| if present { to(v[i - back]) } else { 0.0 };
            let pred = at(hx, 1) + at(hy, nx) + at(hz, plane)
                - at(hy && hx, nx + 1)
                - at(hz && hx, plane + 1)
                - at(hz && hy, plane + nx)
                + at(hz && hy && hx, plane + nx + 1);
            f(i, to(v[i]), pred);
            x += sx;
            if x >= nx {
                x -= nx;
                y += 1;
            }
            y += sy;
            if y >= ny {
                y -= ny;
                z += 1;
            }
            z += sz;
        }
    }
    match field.data() {
        FieldData::F32(v) => visit(v, |x| x as f64, shape, stride, f),
        FieldData::F64(v) => visit(v, |x| x, shape, stride, f),
    }
}

/// Quantization code of one sampled prediction; [`OUTLIER_CODE`] outside
/// the bin radius.
pub(crate) fn quantize_sample(v: f64, pred: f64, two_eb: f64, rad: f64) -> i32 {
    let q = ((v - pred) / two_eb).round();
    if q.abs() < rad {
        q as i32
    } else {
        OUTLIER_CODE
    }
}

/// Sampled quantization codes and the mean absolute prediction error over
/// the same sites, from one pass; `visit` also sees each sampled value.
/// `stride` must exceed 1.
pub(crate) fn sampled_codes_and_error(
    field: &Field,
    config: &CompressorConfig,
    stride: usize,
    mut visit: impl FnMut(f64),
) -> Result<(Vec<i32>, f64), CodecError> {
    config.validate()?;
    debug_assert!(stride > 1);
    let predictor = config.predictor_for(field.dims());
    check_predictor(field, predictor)?;
    let shape = view_shape(field.dims(), predictor.order());
    let two_eb = 2.0 * config.error_bound;
    let rad = config.radius() as f64;
    let mut codes = Vec::with_capacity(field.len() / stride + 1);
    let mut err = 0.0;
    for_each_sampled(field, shape, stride, |_, v, pred| {
        visit(v);
        err += (v - pred).abs();
        codes.push(quantize_sample(v, pred, two_eb, rad));
    });
    let mean = err / codes.len() as f64;
    Ok((codes, mean))
}

/// Prediction + quantization without entropy coding.
///
/// With `stride == 1` this is exactly the codec's own pass (reconstructed
/// neighbours). With `stride > 1` only every `stride`-th element in
/// row-major order is visited and predictions use the *original*
/// neighbour values.
pub fn predict_quantize(
    field: &Field,
    config: &CompressorConfig,
    stride: usize,
) -> Result<QuantizedStream, CodecError> {
    config.validate()?;
    if stride == 0 {
        return Err(CodecError::InvalidConfig("stride must be at least 1".into()));
    }
    let predictor = config.predictor_for(field.dims());
    check_predictor(field, predictor)?;
    let shape = view_shape(field.dims(), predictor.order());
    let radius = config.radius();

    if stride == 1 {
        let (symbols, outliers) = match field.data() {
            FieldData::F32(v) => {
                let q = quantize_codec(v, shape, config.error_bound, radius);
                (q.symbols, q.outliers.into_iter().map(|(i, x)| (i as usize, x as f64)).collect())
            }
            FieldData::F64(v) => {
                let q = quantize_codec(v, shape, config.error_bound, radius);
                (q.symbols, q.outliers.into_iter().map(|(i, x)| (i as usize, x)).collect())
            }
        };
        let codes = symbols
            .into_iter()
            .map(|s| if s == 0 { OUTLIER_CODE } else { (s as i64 - radius) as i32 })
            .collect();
        return Ok(QuantizedStream {
            codes,
            outliers,
            stride,
        });
    }

    let two_eb = 2.0 * config.error_bound;
    let rad = radius as f64;
    let mut codes = Vec::with_capacity(field.len() / stride + 1);
    let mut outliers = Vec::new();
    for_each_sampled(field, shape, stride, |i, v, pred| {
        let c = quantize_sample(v, pred, two_eb, rad);
        codes.push(c);
        if c == OUTLIER_CODE {
            outliers.push((i, v));
        }
    });
    Ok(QuantizedStream {
        codes,
        outliers,
        stride,
    })
}
