//! Model file layout (little-endian):
//!
//! ```text
//! "OCM1" | u32 version | u64 schema_hash | u64 created_unix | u64 sample_count
//! | 3 × tree
//! tree = u8 target | u32 max_depth | u32 min_samples_leaf | f64 min_variance_gain
//!      | u32 node_count | node_count × node
//! node = u8 kind | u16 feature | f64 value | u32 left | u32 right | u64 n
//! ```
//!
//! `kind` is 0 for a leaf (`value` = leaf value), 1 for a `<` split and 2
//! for an equality split (`value` = threshold or category). Trees appear in
//! cr, cptime, psnr order.

use super::{Hyperparams, ModelBundle, Node, QModelError, RegressionTree, Split, Target, TrainingMeta};
use crate::features::FEATURE_COUNT;

pub const MODEL_MAGIC: [u8; 4] = *b"OCM1";
pub const MODEL_VERSION: u32 = 1;
pub const NODE_RECORD_BYTES: usize = 27;

pub fn save_model(bundle: &ModelBundle) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&bundle.schema_hash.to_le_bytes());
    out.extend_from_slice(&bundle.meta.created_unix.to_le_bytes());
    out.extend_from_slice(&bundle.meta.sample_count.to_le_bytes());
    for t in Target::ALL {
        write_tree(&mut out, bundle.tree(t));
    }
    out
}

fn write_tree(out: &mut Vec<u8>, tree: &RegressionTree) {
    let hp = &tree.hyperparams;
    out.push(tree.target.tag());
    out.extend_from_slice(&hp.max_depth.to_le_bytes());
    out.extend_from_slice(&hp.min_samples_leaf.to_le_bytes());
    out.extend_from_slice(&hp.min_variance_gain.to_le_bytes());
    out.extend_from_slice(&(tree.nodes.len() as u32).to_le_bytes());
    for node in &tree.nodes {
        let (kind, feature, value, left, right, n) = match *node {
            Node::Leaf { value, n } => (0u8, 0usize, value, 0u32, 0u32, n),
            Node::Internal { split, left, right } => match split {
                Split::LessThan { feature, threshold } => (1, feature, threshold, left, right, 0),
                Split::Equals { feature, category } => (2, feature, category, left, right, 0),
            },
        };
        out.push(kind);
        out.extend_from_slice(&(feature as u16).to_le_bytes());
        out.extend_from_slice(&value.to_le_bytes());
        out.extend_from_slice(&left.to_le_bytes());
        out.extend_from_slice(&right.to_le_bytes());
        out.extend_from_slice(&n.to_le_bytes());
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn corrupt(msg: impl Into<String>) -> QModelError {
    QModelError::CorruptModel(msg.into())
}

impl<'a> Cursor<'a> {
    fn take<const N: usize>(&mut self, what: &str) -> Result<[u8; N], QModelError> {
        let s = self
            .buf
            .get(self.pos..self.pos + N)
            .ok_or_else(|| corrupt(format!("truncated at {what} (byte {})", self.pos)))?;
        self.pos += N;
        Ok(s.try_into().unwrap())
    }
    fn u8(&mut self, w: &str) -> Result<u8, QModelError> {
        Ok(self.take::<1>(w)?[0])
    }
    fn u16(&mut self, w: &str) -> Result<u16, QModelError> {
        Ok(u16::from_le_bytes(self.take(w)?))
    }
    fn u32(&mut self, w: &str) -> Result<u32, QModelError> {
        Ok(u32::from_le_bytes(self.take(w)?))
    }
    fn u64(&mut self, w: &str) -> Result<u64, QModelError> {
        Ok(u64::from_le_bytes(self.take(w)?))
    }
    fn f64(&mut self, w: &str) -> Result<f64, QModelError> {
        Ok(f64::from_le_bytes(self.take(w)?))
    }
}

pub fn load_model(bytes: &[u8]) -> Result<ModelBundle, QModelError> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take::<4>("magic")? != MODEL_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = c.u32("version")?;
    if version != MODEL_VERSION {
        return Err(QModelError::VersionMismatch(version));
    }
    let schema_hash = c.u64("schema hash")?;
    let meta = TrainingMeta {
        created_unix: c.u64("created")?,
        sample_count: c.u64("sample count")?,
    };
    let mut trees = Vec::with_capacity(3);
    for expect in Target::ALL {
        trees.push(read_tree(&mut c, expect)?);
    }
    if c.pos != bytes.len() {
        return Err(corrupt(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    let psnr = trees.pop().unwrap();
    let cptime = trees.pop().unwrap();
    let cr = trees.pop().unwrap();
    Ok(ModelBundle {
        cr,
        cptime,
        psnr,
        schema_hash,
        meta,
    })
}

fn read_tree(c: &mut Cursor, expect: Target) -> Result<RegressionTree, QModelError> {
    let target = Target::from_tag(c.u8("target")?).ok_or_else(|| corrupt("bad target tag"))?;
    if target != expect {
        return Err(corrupt(format!("expected {} tree", expect.name())));
    }
    let hyperparams = Hyperparams {
        max_depth: c.u32("max_depth")?,
        min_samples_leaf: c.u32("min_samples_leaf")?,
        min_variance_gain: c.f64("min_variance_gain")?,
    };
    hyperparams.validate().map_err(|e| corrupt(e.to_string()))?;
    let count = c.u32("node count")? as usize;
    if count == 0 {
        return Err(corrupt("empty tree"));
    }
    if c.buf.len().saturating_sub(c.pos) < count.saturating_mul(NODE_RECORD_BYTES) {
        return Err(corrupt("node table truncated"));
    }
    let mut nodes = Vec::with_capacity(count);
    let mut referenced = vec![false; count];
    for i in 0..count {
        let kind = c.u8("node")?;
        let feature = c.u16("node")? as usize;
        let value = c.f64("node")?;
        let left = c.u32("node")?;
        let right = c.u32("node")?;
        let n = c.u64("node")?;
        if !value.is_finite() {
            return Err(corrupt(format!("node {i}: non-finite value")));
        }
        let node = match kind {
            0 => Node::Leaf { value, n },
            1 | 2 => {
                if feature >= FEATURE_COUNT {
                    return Err(corrupt(format!("node {i}: feature {feature} out of range")));
                }
                for child in [left, right] {
                    let ch = child as usize;
                    if ch <= i || ch >= count || referenced[ch] {
                        return Err(corrupt(format!("node {i}: bad child {child}")));
                    }
                    referenced[ch] = true;
                }
                let split = if kind == 1 {
                    Split::LessThan { feature, threshold: value }
                } else {
                    Split::Equals { feature, category: value }
                };
                Node::Internal { split, left, right }
            }
            k => return Err(corrupt(format!("node {i}: bad kind {k}"))),
        };
        nodes.push(node);
    }
    if referenced.iter().skip(1).any(|&r| !r) {
        return Err(corrupt("unreachable node"));
    }
    Ok(RegressionTree {
        target,
        hyperparams,
        nodes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{FeatureVector, FEATURE_COUNT};
    use crate::qmodel::{schema_hash, RegressionTree};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_bundle(seed: u64) -> ModelBundle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<[f64; FEATURE_COUNT]> = (0..120)
            .map(|_| {
                let mut r = [0.0; FEATURE_COUNT];
                for v in r.iter_mut() {
                    *v = rng.gen_range(-1.0..1.0);
                }
                r[1] = rng.gen_range(0..2) as f64;
                r
            })
            .collect();
        let mk = |t: Target, k: usize| {
            let ys: Vec<f64> = xs.iter().map(|x| x[k] * 3.0 + x[1]).collect();
            let hp = Hyperparams { max_depth: 6, min_samples_leaf: 2, min_variance_gain: 1e-9 };
            RegressionTree::fit(&xs, &ys, t, hp).unwrap()
        };
        ModelBundle {
            cr: mk(Target::Cr, 0),
            cptime: mk(Target::CpTime, 4),
            psnr: mk(Target::Psnr, 9),
            schema_hash: schema_hash(),
            meta: TrainingMeta { created_unix: seed, sample_count: 120 },
        }
    }

    /// Walks a tree directly in the serialized bytes.
    fn byte_walk(bytes: &[u8], tree_idx: usize, x: &[f64; FEATURE_COUNT]) -> f64 {
        let mut pos = 32;
        for _ in 0..tree_idx {
            let count = u32::from_le_bytes(bytes[pos + 17..pos + 21].try_into().unwrap()) as usize;
            pos += 21 + count * NODE_RECORD_BYTES;
        }
        let base = pos + 21;
        let mut i = 0usize;
        loop {
            let r = &bytes[base + i * NODE_RECORD_BYTES..base + (i + 1) * NODE_RECORD_BYTES];
            let f = u16::from_le_bytes([r[1], r[2]]) as usize;
            let v = f64::from_le_bytes(r[3..11].try_into().unwrap());
            let l = u32::from_le_bytes(r[11..15].try_into().unwrap()) as usize;
            let rr = u32::from_le_bytes(r[15..19].try_into().unwrap()) as usize;
            match r[0] {
                0 => return v,
                1 => i = if x[f] < v { l } else { rr },
                _ => i = if x[f] == v { l } else { rr },
            }
        }
    }

    #[test]
    fn predictions_match_byte_level_walker() {
        let b = random_bundle(3);
        let bytes = save_model(&b);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let mut x = [0.0; FEATURE_COUNT];
            for v in x.iter_mut() {
                *v = rng.gen_range(-1.2..1.2);
            }
            x[1] = rng.gen_range(0..3) as f64;
            for (k, t) in Target::ALL.into_iter().enumerate() {
                assert_eq!(b.tree(t).predict_transformed(&x), byte_walk(&bytes, k, &x));
            }
        }
    }

    #[test]
    fn truncated_and_versioned() {
        let bytes = save_model(&random_bundle(1));
        for cut in [0, 3, 10, 40, bytes.len() - 1] {
            assert!(matches!(load_model(&bytes[..cut]), Err(QModelError::CorruptModel(_))), "cut {cut}");
        }
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(load_model(&v2), Err(QModelError::VersionMismatch(2))));
        let mut extra = bytes;
        extra.push(0);
        assert!(matches!(load_model(&extra), Err(QModelError::CorruptModel(_))));
    }

    #[test]
    fn cyclic_child_rejected() {
        let mut bytes = save_model(&random_bundle(2));
        // first node of the cr tree must be internal; point its left child at itself
        let rec = 32 + 21;
        assert_ne!(bytes[rec], 0);
        bytes[rec + 11..rec + 15].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(load_model(&bytes), Err(QModelError::CorruptModel(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn round_trip_identity(seed in any::<u64>()) {
            let b = random_bundle(seed);
            let bytes = save_model(&b);
            let back = load_model(&bytes).unwrap();
            prop_assert_eq!(&back, &b);
            prop_assert_eq!(save_model(&back), bytes);
            let fv = FeatureVector::from_array([0.3; FEATURE_COUNT]);
            prop_assert_eq!(back.predict(&fv).unwrap(), b.predict(&fv).unwrap());
        }
    }
}
