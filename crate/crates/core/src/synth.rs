//! Seeded synthetic fields: mixtures of smooth gradients, sinusoids and
//! noise. Used for training corpora, benchmarks and tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use std::path::{Path, PathBuf};

use crate::field::{store_raw, ElemType, Field, FieldError, Manifest, ManifestEntry};

/// Mixture weights for one field. All amplitudes are absolute.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub offset: f64,
    /// Per-axis gradient slope (value change across the whole axis).
    pub gradient: [f64; 3],
    /// `(amplitude, per-axis wavenumber, phase)`.
    pub waves: Vec<(f64, [f64; 3], f64)>,
    pub noise: f64,
}

/// Application families with distinct parameter distributions, so a corpus
/// split per application is meaningful.
pub const APPLICATIONS: [&str; 4] = ["climate", "cosmology", "seismic", "turbulence"];

impl Mixture {
    pub fn random(rng: &mut impl Rng, app: &str) -> Self {
        let log_uniform = |rng: &mut dyn rand::RngCore, lo: f64, hi: f64| {
            10f64.powf(rng.gen_range(lo.log10()..hi.log10()))
        };
        let (grad_hi, wave_count, wave_hi, k_hi, noise_lo, noise_hi) = match app {
            "climate" => (50.0, 2, 10.0, 3.0, 1e-7, 1e-2),
            "cosmology" => (1.0, 4, 100.0, 12.0, 1e-5, 1e0),
            "seismic" => (0.1, 3, 1.0, 25.0, 1e-8, 1e-3),
            _ => (5.0, 6, 5.0, 8.0, 1e-4, 5e-1),
        };
        let gradient = [
            rng.gen_range(-grad_hi..grad_hi),
            rng.gen_range(-grad_hi..grad_hi),
            rng.gen_range(-grad_hi..grad_hi),
        ];
        let n_waves = rng.gen_range(1..=wave_count);
        let waves = (0..n_waves)
            .map(|_| {
                let amp = log_uniform(rng, wave_hi * 1e-3, wave_hi);
                let k = [
                    rng.gen_range(0.0..k_hi),
                    rng.gen_range(0.0..k_hi),
                    rng.gen_range(0.0..k_hi),
                ];
                (amp, k, rng.gen_range(0.0..std::f64::consts::TAU))
            })
            .collect();
        Mixture {
            offset: rng.gen_range(-100.0..100.0),
            gradient,
            waves,
            noise: log_uniform(rng, noise_lo, noise_hi),
        }
    }

    /// Evaluates the mixture on `dims` (1 to 3 axes, row-major) with noise
    /// drawn from `rng`.
    pub fn render(&self, dims: &[usize], rng: &mut impl Rng) -> Vec<f64> {
        let mut shape = [1usize; 3];
        shape[3 - dims.len()..].copy_from_slice(dims);
        let n: usize = shape.iter().product();
        let mut out = Vec::with_capacity(n);
        for z in 0..shape[0] {
            for y in 0..shape[1] {
                for x in 0..shape[2] {
                    let u = [
                        z as f64 / shape[0] as f64,
                        y as f64 / shape[1] as f64,
                        x as f64 / shape[2] as f64,
                    ];
                    let mut v = self.offset
                        + self.gradient[0] * u[0]
                        + self.gradient[1] * u[1]
                        + self.gradient[2] * u[2];
                    for (amp, k, phase) in &self.waves {
                        let arg = std::f64::consts::TAU * (k[0] * u[0] + k[1] * u[1] + k[2] * u[2]);
                        v += amp * (arg + phase).sin();
                    }
                    if self.noise > 0.0 {
                        v += self.noise * rng.gen_range(-1.0..1.0);
                    }
                    out.push(v);
                }
            }
        }
        out
    }
}

/// One synthetic field of application family `app`.
pub fn generate(seed: u64, app: &str, dims: &[usize], elem_type: ElemType) -> Result<Field, FieldError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = Mixture::random(&mut rng, app);
    Field::from_values(dims.to_vec(), elem_type, m.render(dims, &mut rng))
}

/// A named synthetic field; `path` is `app/field_NNNN.f32` (or `.f64`).
#[derive(Debug, Clone)]
pub struct SynthFile {
    pub path: String,
    pub field: Field,
}

/// `n` fields spread round-robin over [`APPLICATIONS`].
pub fn corpus(seed: u64, n: usize, dims: &[usize], elem_type: ElemType) -> Result<Vec<SynthFile>, FieldError> {
    (0..n)
        .map(|i| {
            let app = APPLICATIONS[i % APPLICATIONS.len()];
            let s = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64);
            Ok(SynthFile {
                path: format!("{app}/field_{i:04}.{elem_type}"),
                field: generate(s, app, dims, elem_type)?,
            })
        })
        .collect()
}

/// Writes `files` under `root` and returns a manifest rooted there.
pub fn write_files(root: &Path, files: &[SynthFile]) -> Result<Manifest, FieldError> {
    let mut entries = Vec::with_capacity(files.len());
    for f in files {
        store_raw(&root.join(&f.path), &f.field)?;
        entries.push(ManifestEntry {
            rel_path: PathBuf::from(&f.path),
            elem_type: f.field.elem_type(),
            dims: f.field.dims().to_vec(),
        });
    }
    Ok(Manifest {
        root: root.to_path_buf(),
        entries,
    })
}

/// Pure smooth field used where every file must cost the same to compress.
pub fn smooth(dims: &[usize], elem_type: ElemType, phase: f64) -> Result<Field, FieldError> {
    let m = Mixture {
        offset: 1.0,
        gradient: [0.5, -0.25, 2.0],
        waves: vec![(1.0, [1.0, 2.0, 3.0], phase)],
        noise: 0.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    Field::from_values(dims.to_vec(), elem_type, m.render(dims, &mut rng))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_generation_is_reproducible() {
        let a = generate(5, "climate", &[8, 9, 10], ElemType::F32).unwrap();
        let b = generate(5, "climate", &[8, 9, 10], ElemType::F32).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate(6, "climate", &[8, 9, 10], ElemType::F32).unwrap());
        assert_eq!(a.dims(), &[8, 9, 10]);
    }

    #[test]
    fn corpus_names_and_apps() {
        let c = corpus(1, 6, &[16], ElemType::F64).unwrap();
        assert_eq!(c[0].path, "climate/field_0000.f64");
        assert_eq!(c[5].path, "cosmology/field_0005.f64");
    }

    #[test]
    fn smooth_field_has_no_noise() {
        let f = smooth(&[4, 4], ElemType::F64, 0.0).unwrap();
        let g = smooth(&[4, 4], ElemType::F64, 0.0).unwrap();
        assert_eq!(f, g);
        assert_eq!(f.get(0), 1.0);
    }
}
