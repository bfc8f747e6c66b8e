//! Shared inputs for the benchmarks.

use ocelot_core::field::{ElemType, Field};
use ocelot_core::synth;

/// A seeded noisy 3-D field of `n³` f32 values.
pub fn cube(n: usize) -> Field {
    synth::generate(7, "turbulence", &[n, n, n], ElemType::F32).expect("valid dims")
}

/// Quantization codes shaped like a codec's output: concentrated near the
/// centre bin with a long tail.
pub fn symbol_stream(len: usize) -> Vec<u32> {
    let mut state = 0x2545_F491_4F6C_DD1Du64;
    (0..len)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            let spread = (state % 64) as u32;
            32768 + spread * spread / 64 - 32
        })
        .collect()
}
