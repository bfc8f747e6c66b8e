//! Canonical Huffman coding over integer symbols.
//!
//! Tables are built from a frequency histogram with deterministic tie
//! breaking, then canonicalized: codes are assigned in `(length, symbol)`
//! order, so the table is fully described by its code lengths.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use thiserror::Error;

/// Longest code the encoder/decoder accept. The decoder's 64-bit window
/// always holds at least this many valid bits.
pub const MAX_CODE_LEN: u8 = 57;

const LUT_BITS: u32 = 12;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HuffmanError {
    #[error("cannot build a code for an empty stream")]
    EmptyStream,
    #[error("malformed code table: {0}")]
    MalformedTable(String),
    #[error("bitstream ended after {decoded} of {expected} symbols")]
    Underrun { decoded: usize, expected: usize },
    #[error("symbol {0} has no code in the table")]
    UnknownSymbol(u32),
}

/// Code lengths per symbol, sorted by symbol.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HuffmanTable {
    entries: Vec<(u32, u8)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BitStream {
    pub bytes: Vec<u8>,
    pub bit_len: u64,
}

impl HuffmanTable {
    /// Builds an optimal prefix code. `freqs` holds `(symbol, count)` pairs;
    /// zero counts are ignored. A single-symbol alphabet gets a 1-bit code.
    pub fn from_frequencies(freqs: &[(u32, u64)]) -> Result<Self, HuffmanError> {
        let mut leaves: Vec<(u32, u64)> = freqs.iter().copied().filter(|&(_, c)| c > 0).collect();
        leaves.sort_unstable_by_key(|&(s, _)| s);
        leaves.dedup_by(|a, b| {
            if a.0 == b.0 {
                b.1 += a.1;
                true
            } else {
                false
            }
        });
        match leaves.len() {
            0 => return Err(HuffmanError::EmptyStream),
            1 => {
                return Ok(HuffmanTable {
                    entries: vec![(leaves[0].0, 1)],
                })
            }
            _ => {}
        }

        // Node ids: leaves are 0..n in symbol order, internal nodes follow.
        // The heap orders by (weight, id), which fixes every tie.
        let n = leaves.len();
        let mut parent = vec![usize::MAX; 2 * n - 1];
        let mut heap: BinaryHeap<Reverse<(u64, usize)>> =
            leaves.iter().enumerate().map(|(i, &(_, c))| Reverse((c, i))).collect();
        let mut next = n;
        while heap.len() > 1 {
            let Reverse((wa, a)) = heap.pop().unwrap();
            let Reverse((wb, b)) = heap.pop().unwrap();
            parent[a] = next;
            parent[b] = next;
            heap.push(Reverse((wa + wb, next)));
            next += 1;
        }
        let root = next - 1;
        let mut depth = vec![0u32; 2 * n - 1];
        for id in (0..root).rev() {
            depth[id] = depth[parent[id]] + 1;
        }
        let entries: Vec<(u32, u8)> = leaves
            .iter()
            .enumerate()
            .map(|(i, &(s, _))| (s, depth[i].min(u8::MAX as u32) as u8))
            .collect();
        let table = HuffmanTable { entries };
        table.validate()?;
        Ok(table)
    }

    /// Histogram of a symbol stream followed by [`Self::from_frequencies`].
    pub fn from_symbols(symbols: &[u32]) -> Result<Self, HuffmanError> {
        let mut sorted = symbols.to_vec();
        sorted.sort_unstable();
        let mut freqs: Vec<(u32, u64)> = Vec::new();
        for s in sorted {
            match freqs.last_mut() {
                Some((last, c)) if *last == s => *c += 1,
                _ => freqs.push((s, 1)),
            }
        }
        Self::from_frequencies(&freqs)
    }

    /// Rebuilds a table from stored lengths, checking it is a usable prefix code.
    pub fn from_lengths(mut entries: Vec<(u32, u8)>) -> Result<Self, HuffmanError> {
        entries.sort_unstable_by_key(|&(s, _)| s);
        let table = HuffmanTable { entries };
        table.validate()?;
        Ok(table)
    }

    fn validate(&self) -> Result<(), HuffmanError> {
        if self.entries.is_empty() {
            return Err(HuffmanError::MalformedTable("no entries".into()));
        }
        for w in self.entries.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(HuffmanError::MalformedTable(format!("duplicate symbol {}", w[0].0)));
            }
        }
        if let Some(&(s, l)) = self.entries.iter().find(|&&(_, l)| l == 0 || l > MAX_CODE_LEN) {
            return Err(HuffmanError::MalformedTable(format!("symbol {s} has length {l}")));
        }
        // Kraft sum must not exceed 1; measured in units of 2^-MAX_CODE_LEN.
        let mut kraft: u128 = 0;
        for &(_, l) in &self.entries {
            kraft += 1u128 << (MAX_CODE_LEN - l);
        }
        if kraft > 1u128 << MAX_CODE_LEN {
            return Err(HuffmanError::MalformedTable("code lengths over-subscribed".into()));
        }
        Ok(())
    }

    pub fn entries(&self) -> &[(u32, u8)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn code_len(&self, symbol: u32) -> Option<u8> {
        self.entries
            .binary_search_by_key(&symbol, |&(s, _)| s)
            .ok()
            .map(|i| self.entries[i].1)
    }

    pub fn max_len(&self) -> u8 {
        self.entries.iter().map(|&(_, l)| l).max().unwrap_or(0)
    }

    /// `(symbol, code, length)` in canonical order.
    pub fn canonical_codes(&self) -> Vec<(u32, u64, u8)> {
        let mut order: Vec<(u8, u32)> = self.entries.iter().map(|&(s, l)| (l, s)).collect();
        order.sort_unstable();
        let mut out = Vec::with_capacity(order.len());
        let mut code: u64 = 0;
        let mut prev_len = order[0].0;
        for (i, &(len, sym)) in order.iter().enumerate() {
            if i > 0 {
                code = (code + 1) << (len - prev_len);
            }
            prev_len = len;
            out.push((sym, code, len));
        }
        out
    }

    /// Total encoded bits for a histogram under this table.
    pub fn cost(&self, freqs: &[(u32, u64)]) -> Result<u64, HuffmanError> {
        freqs.iter().filter(|&&(_, c)| c > 0).try_fold(0u64, |acc, &(s, c)| {
            let l = self.code_len(s).ok_or(HuffmanError::UnknownSymbol(s))?;
            Ok(acc + c * l as u64)
        })
    }

    /// Symbols index a dense array, so the largest symbol bounds memory use.
    pub(crate) fn encoder(&self) -> Encoder {
        let max_sym = self.entries.last().map(|&(s, _)| s).unwrap_or(0) as usize;
        let mut codes = vec![(0u64, 0u8); max_sym + 1];
        for (s, c, l) in self.canonical_codes() {
            codes[s as usize] = (c, l);
        }
        Encoder { codes }
    }

    pub(crate) fn decoder(&self) -> Decoder {
        let codes = self.canonical_codes();
        let max_len = self.max_len() as usize;
        let mut first = vec![0u64; max_len + 2];
        let mut count = vec![0u64; max_len + 2];
        let mut offset = vec![0usize; max_len + 2];
        let symbols: Vec<u32> = codes.iter().map(|&(s, _, _)| s).collect();
        for (i, &(_, c, l)) in codes.iter().enumerate() {
            let l = l as usize;
            if count[l] == 0 {
                first[l] = c;
                offset[l] = i;
            }
            count[l] += 1;
        }
        let lut_bits = LUT_BITS.min(max_len as u32);
        let mut lut = vec![(0u32, 0u8); 1 << lut_bits];
        for &(s, c, l) in &codes {
            if (l as u32) <= lut_bits {
                let shift = lut_bits - l as u32;
                let base = (c << shift) as usize;
                for e in &mut lut[base..base + (1 << shift)] {
                    *e = (s, l);
                }
            }
        }
        Decoder {
            lut,
            lut_bits,
            first,
            count,
            offset,
            symbols,
            max_len,
        }
    }
}

pub(crate) struct Encoder {
    codes: Vec<(u64, u8)>,
}

impl Encoder {
    #[inline]
    pub(crate) fn put(&self, w: &mut BitWriter, symbol: u32) -> Result<(), HuffmanError> {
        match self.codes.get(symbol as usize) {
            Some(&(c, l)) if l > 0 => {
                w.put(c, l);
                Ok(())
            }
            _ => Err(HuffmanError::UnknownSymbol(symbol)),
        }
    }
}

/// MSB-first bit packer.
#[derive(Default)]
pub(crate) struct BitWriter {
    out: Vec<u8>,
    acc: u64,
    nbits: u32,
    total: u64,
}

impl BitWriter {
    pub(crate) fn with_capacity(bytes: usize) -> Self {
        BitWriter {
            out: Vec::with_capacity(bytes),
            ..Default::default()
        }
    }

    #[inline]
    pub(crate) fn put(&mut self, code: u64, len: u8) {
        let len = len as u32;
        if len > 32 {
            self.put(code >> 32, (len - 32) as u8);
            self.put(code & 0xffff_ffff, 32);
            return;
        }
        self.acc = (self.acc << len) | code;
        self.nbits += len;
        self.total += len as u64;
        while self.nbits >= 8 {
            self.nbits -= 8;
            self.out.push((self.acc >> self.nbits) as u8);
        }
    }

    pub(crate) fn finish(mut self) -> BitStream {
        if self.nbits > 0 {
            self.out.push((self.acc << (8 - self.nbits)) as u8);
        }
        BitStream {
            bytes: self.out,
            bit_len: self.total,
        }
    }
}

pub(crate) struct Decoder {
    lut: Vec<(u32, u8)>,
    lut_bits: u32,
    first: Vec<u64>,
    count: Vec<u64>,
    offset: Vec<usize>,
    symbols: Vec<u32>,
    max_len: usize,
}

#[inline]
fn peek64(bytes: &[u8], pos: u64) -> u64 {
    let byte = (pos / 8) as usize;
    let mut buf = [0u8; 8];
    if byte + 8 <= bytes.len() {
        buf.copy_from_slice(&bytes[byte..byte + 8]);
    } else if byte < bytes.len() {
        buf[..bytes.len() - byte].copy_from_slice(&bytes[byte..]);
    }
    u64::from_be_bytes(buf) << (pos % 8)
}

impl Decoder {
    /// Decodes exactly `n` symbols from the first `bit_len` bits of `bytes`.
    pub(crate) fn decode_into(
        &self,
        bytes: &[u8],
        bit_len: u64,
        n: usize,
        mut sink: impl FnMut(u32),
    ) -> Result<(), HuffmanError> {
        let mut pos: u64 = 0;
        for decoded in 0..n {
            let window = peek64(bytes, pos);
            let (sym, len) = {
                let (s, l) = self.lut[(window >> (64 - self.lut_bits)) as usize];
                if l > 0 {
                    (s, l as u64)
                } else {
                    self.slow(window)
                        .ok_or(HuffmanError::Underrun { decoded, expected: n })?
                }
            };
            pos += len;
            if pos > bit_len {
                return Err(HuffmanError::Underrun { decoded, expected: n });
            }
            sink(sym);
        }
        Ok(())
    }

    fn slow(&self, window: u64) -> Option<(u32, u64)> {
        for len in (self.lut_bits as usize + 1)..=self.max_len {
            let code = window >> (64 - len);
            if self.count[len] > 0 && code >= self.first[len] && code - self.first[len] < self.count[len]
            {
                let idx = self.offset[len] + (code - self.first[len]) as usize;
                return Some((self.symbols[idx], len as u64));
            }
        }
        None
    }
}

/// Builds a table from the stream and encodes it.
pub fn huffman_encode(symbols: &[u32]) -> Result<(HuffmanTable, BitStream), HuffmanError> {
    let table = HuffmanTable::from_symbols(symbols)?;
    let bits = encode_with(&table, symbols)?;
    Ok((table, bits))
}

pub fn encode_with(table: &HuffmanTable, symbols: &[u32]) -> Result<BitStream, HuffmanError> {
    let enc = table.encoder();
    let mut w = BitWriter::with_capacity(symbols.len() / 4 + 8);
    for &s in symbols {
        enc.put(&mut w, s)?;
    }
    Ok(w.finish())
}

pub fn huffman_decode(
    table: &HuffmanTable,
    bits: &BitStream,
    n: usize,
) -> Result<Vec<u32>, HuffmanError> {
    let mut out = Vec::with_capacity(n);
    table
        .decoder()
        .decode_into(&bits.bytes, bits.bit_len, n, |s| out.push(s))?;
    Ok(out)
}
