//! Self-describing on-disk container for one compressed field.
//!
//! Layout (little-endian):
//!
//! ```text
//! "OCB1" | u32 version | u8 ndims | ndims × u64 dims | u8 elem_type
//! | u8 predictor | u8 compressor_id | f64 error_bound | u32 quant_bin_count
//! | u64 code_count | u64 outlier_count
//! | u16 table_entries (0 encodes 65536) | entries × (u16 symbol, u8 length)
//! | u64 payload_bytes | payload | outlier_count × (u64 index, raw value)
//! ```

use super::{CodecError, CompressorId, HuffmanTable, Predictor, MAX_QUANT_BINS};
use crate::field::{validate_dims, ElemType, MAX_DIMS};

pub const BLOCK_MAGIC: [u8; 4] = *b"OCB1";
pub const BLOCK_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct BlockHeader {
    pub version: u32,
    pub dims: Vec<usize>,
    pub elem_type: ElemType,
    pub predictor: Predictor,
    pub compressor_id: CompressorId,
    pub error_bound: f64,
    pub quant_bin_count: u32,
    pub code_count: u64,
    pub outlier_count: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedBlock {
    pub header: BlockHeader,
    pub table: HuffmanTable,
    pub payload: Vec<u8>,
    /// `(flat index, original value)`; exact for both element types.
    pub outliers: Vec<(u64, f64)>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CodecError> {
        if self.buf.len() - self.pos < n {
            return Err(CodecError::CorruptBlock(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8, CodecError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16, CodecError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32, CodecError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, CodecError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64, CodecError> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

fn corrupt(msg: impl Into<String>) -> CodecError {
    CodecError::CorruptBlock(msg.into())
}

impl CompressedBlock {
    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let esize = h.elem_type.size();
        let mut out = Vec::with_capacity(
            64 + self.table.len() * 3 + self.payload.len() + self.outliers.len() * (8 + esize),
        );
        out.extend_from_slice(&BLOCK_MAGIC);
        out.extend_from_slice(&h.version.to_le_bytes());
        out.push(h.dims.len() as u8);
        for &d in &h.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.push(h.elem_type.tag());
        out.push(h.predictor.tag());
        out.push(h.compressor_id.tag());
        out.extend_from_slice(&h.error_bound.to_le_bytes());
        out.extend_from_slice(&h.quant_bin_count.to_le_bytes());
        out.extend_from_slice(&h.code_count.to_le_bytes());
        out.extend_from_slice(&h.outlier_count.to_le_bytes());
        // a full 65536-symbol table wraps to 0; tables are never empty
        out.extend_from_slice(&(self.table.len() as u16).to_le_bytes());
        for &(sym, len) in self.table.entries() {
            out.extend_from_slice(&(sym as u16).to_le_bytes());
            out.push(len);
        }
        out.extend_from_slice(&(self.payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.payload);
        for &(idx, v) in &self.outliers {
            out.extend_from_slice(&idx.to_le_bytes());
            match h.elem_type {
                ElemType::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                ElemType::F64 => out.extend_from_slice(&v.to_le_bytes()),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4, "magic")? != BLOCK_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = r.u32("version")?;
        if version != BLOCK_VERSION {
            return Err(corrupt(format!("unsupported version {version}")));
        }
        let ndims = r.u8("ndims")? as usize;
        if ndims == 0 || ndims > MAX_DIMS {
            return Err(corrupt(format!("bad ndims {ndims}")));
        }
        let mut dims = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            let d = r.u64("dims")?;
            dims.push(usize::try_from(d).map_err(|_| corrupt("dim overflows usize"))?);
        }
        let n = validate_dims(&dims).map_err(|e| corrupt(e.to_string()))?;
        let elem_type = ElemType::from_tag(r.u8("elem_type")?).ok_or_else(|| corrupt("bad elem_type"))?;
        let predictor =
            Predictor::from_tag(r.u8("predictor")?).ok_or_else(|| corrupt("bad predictor"))?;
        let compressor_id = CompressorId::from_tag(r.u8("compressor_id")?)
            .ok_or_else(|| corrupt("bad compressor_id"))?;
        let error_bound = r.f64("error_bound")?;
        if !(error_bound > 0.0 && error_bound.is_finite()) {
            return Err(corrupt("bad error bound"));
        }
        let quant_bin_count = r.u32("quant_bin_count")?;
        if quant_bin_count < 2 || quant_bin_count % 2 != 0 || quant_bin_count > MAX_QUANT_BINS {
            return Err(corrupt("bad quant_bin_count"));
        }
        let code_count = r.u64("code_count")?;
        if code_count != n as u64 {
            return Err(corrupt("code count does not match dims"));
        }
        let outlier_count = r.u64("outlier_count")?;
        if outlier_count > code_count {
            return Err(corrupt("more outliers than codes"));
        }
        let entries = match r.u16("table_entries")? {
            0 => 65536usize,
            k => k as usize,
        };
        let mut lengths = Vec::with_capacity(entries);
        for _ in 0..entries {
            let sym = r.u16("table")? as u32;
            let len = r.u8("table")?;
            if sym >= quant_bin_count {
                return Err(corrupt(format!("table symbol {sym} out of range")));
            }
            lengths.push((sym, len));
        }
        let table = HuffmanTable::from_lengths(lengths)?;
        let payload_len = r.u64("payload_bytes")?;
        let payload_len =
            usize::try_from(payload_len).map_err(|_| corrupt("payload length overflow"))?;
        let payload = r.take(payload_len, "payload")?.to_vec();
        let esize = elem_type.size();
        let rest = bytes.len() - r.pos;
        if (rest as u64) != outlier_count * (8 + esize) as u64 {
            return Err(corrupt(format!(
                "outlier section is {rest} bytes, expected {} entries",
                outlier_count
            )));
        }
        let mut outliers = Vec::with_capacity(outlier_count as usize);
        let mut prev: Option<u64> = None;
        for _ in 0..outlier_count {
            let idx = r.u64("outlier index")?;
            if idx >= code_count || prev.is_some_and(|p| idx <= p) {
                return Err(corrupt("outlier indices not strictly increasing"));
            }
            prev = Some(idx);
            let raw = r.take(esize, "outlier value")?;
            let v = match elem_type {
                ElemType::F32 => f32::from_le_bytes(raw.try_into().unwrap()) as f64,
                ElemType::F64 => f64::from_le_bytes(raw.try_into().unwrap()),
            };
            if !v.is_finite() {
                return Err(corrupt("non-finite outlier"));
            }
            outliers.push((idx, v));
        }
        Ok(CompressedBlock {
            header: BlockHeader {
                version,
                dims,
                elem_type,
                predictor,
                compressor_id,
                error_bound,
                quant_bin_count,
                code_count,
                outlier_count,
            },
            table,
            payload,
            outliers,
        })
    }

    /// Serialized size in bytes.
    pub fn byte_len(&self) -> usize {
        let h = &self.header;
        4 + 4
            + 1
            + 8 * h.dims.len()
            + 3
            + 8
            + 4
            + 8
            + 8
            + 2
            + 3 * self.table.len()
            + 8
            + self.payload.len()
            + self.outliers.len() * (8 + h.elem_type.size())
    }

    /// Original bytes over compressed bytes.
    pub fn compression_ratio(&self) -> f64 {
        let raw = self.header.code_count as f64 * self.header.elem_type.size() as f64;
        raw / self.byte_len() as f64
    }
}
