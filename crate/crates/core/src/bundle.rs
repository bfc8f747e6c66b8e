//! Group files: many payloads behind one offset/size header, plus a text
//! sidecar naming them.
//!
//! Group file layout (little-endian):
//!
//! ```text
//! "OCG1" | u32 version | u64 count | count × (u64 offset, u64 size) | payloads
//! ```
//!
//! Payload `i` starts at `header_size + Σ_{j<i} size_j` where
//! `header_size = 16 + 16·count`.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Component, Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const GROUP_MAGIC: [u8; 4] = *b"OCG1";
pub const GROUP_VERSION: u32 = 1;
pub const SIDECAR_NAME: &str = "groups.sidecar";

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("invalid grouping parameter: {0}")]
    InvalidParam(String),
    #[error("plan does not partition {n} inputs: {reason}")]
    PlanMismatch { n: usize, reason: String },
    #[error("corrupt group file{}: {reason}", path.as_ref().map(|p| format!(" {}", p.display())).unwrap_or_default())]
    CorruptGroup { path: Option<PathBuf>, reason: String },
    #[error("sidecar mismatch: {0}")]
    SidecarMismatch(String),
    #[error("unsafe relative path {0:?}")]
    UnsafePath(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BundleError + '_ {
    move |source| BundleError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroupStrategy {
    /// Round-robin into this many groups; 0 or more than the file count
    /// means one group per file.
    ByWorldSize(usize),
    /// First-fit in input order; a group closes once it holds at least this
    /// many bytes.
    ByTargetSize(u64),
}

impl fmt::Display for GroupStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupStrategy::ByWorldSize(w) => write!(f, "by_world_size:{w}"),
            GroupStrategy::ByTargetSize(t) => write!(f, "by_target_size:{t}"),
        }
    }
}

impl FromStr for GroupStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (kind, val) = s.split_once(':').ok_or_else(|| format!("expected kind:value, got {s:?}"))?;
        match kind {
            "by_world_size" | "world" => val
                .parse()
                .map(GroupStrategy::ByWorldSize)
                .map_err(|e| format!("world size {val:?}: {e}")),
            "by_target_size" | "target" => val
                .parse()
                .map(GroupStrategy::ByTargetSize)
                .map_err(|e| format!("target bytes {val:?}: {e}")),
            _ => Err(format!("unknown grouping strategy {kind:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupPlan {
    pub groups: Vec<Vec<usize>>,
    pub strategy: GroupStrategy,
}

impl GroupPlan {
    /// Group id of every input index.
    pub fn assignment(&self, n: usize) -> Result<Vec<usize>, BundleError> {
        let mismatch = |reason: String| BundleError::PlanMismatch { n, reason };
        let mut owner = vec![usize::MAX; n];
        for (g, members) in self.groups.iter().enumerate() {
            if members.is_empty() {
                return Err(mismatch(format!("group {g} is empty")));
            }
            for &i in members {
                if i >= n {
                    return Err(mismatch(format!("index {i} out of range")));
                }
                if owner[i] != usize::MAX {
                    return Err(mismatch(format!("index {i} in groups {} and {g}", owner[i])));
                }
                owner[i] = g;
            }
        }
        if let Some(i) = owner.iter().position(|&g| g == usize::MAX) {
            return Err(mismatch(format!("index {i} unassigned")));
        }
        Ok(owner)
    }
}

pub fn plan_groups(sizes: &[u64], strategy: GroupStrategy) -> Result<GroupPlan, BundleError> {
    if sizes.is_empty() {
        return Err(BundleError::InvalidParam("no files to group".into()));
    }
    let n = sizes.len();
    let groups = match strategy {
        GroupStrategy::ByWorldSize(w) => {
            let w = if w == 0 || w > n { n } else { w };
            let mut g = vec![Vec::with_capacity(n.div_ceil(w)); w];
            for i in 0..n {
                g[i % w].push(i);
            }
            g
        }
        GroupStrategy::ByTargetSize(0) => {
            return Err(BundleError::InvalidParam("target_bytes must be positive".into()))
        }
        GroupStrategy::ByTargetSize(target) => {
            let mut groups = Vec::new();
            let mut cur = Vec::new();
            let mut acc = 0u64;
            for (i, &s) in sizes.iter().enumerate() {
                cur.push(i);
                acc = acc.saturating_add(s);
                if acc >= target {
                    groups.push(std::mem::take(&mut cur));
                    acc = 0;
                }
            }
            if !cur.is_empty() {
                groups.push(cur);
            }
            groups
        }
    };
    Ok(GroupPlan { groups, strategy })
}

pub fn header_size(count: usize) -> u64 {
    16 + 16 * count as u64
}

/// `(offset, size)` of every payload, by exclusive prefix sum.
pub fn layout(sizes: &[u64]) -> Vec<(u64, u64)> {
    let mut off = header_size(sizes.len());
    sizes
        .iter()
        .map(|&s| {
            let e = (off, s);
            off += s;
            e
        })
        .collect()
}

pub fn encode_header(sizes: &[u64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(header_size(sizes.len()) as usize);
    out.extend_from_slice(&GROUP_MAGIC);
    out.extend_from_slice(&GROUP_VERSION.to_le_bytes());
    out.extend_from_slice(&(sizes.len() as u64).to_le_bytes());
    for (off, size) in layout(sizes) {
        out.extend_from_slice(&off.to_le_bytes());
        out.extend_from_slice(&size.to_le_bytes());
    }
    out
}

pub fn encode_group<P: AsRef<[u8]>>(payloads: &[P]) -> Vec<u8> {
    let sizes: Vec<u64> = payloads.iter().map(|p| p.as_ref().len() as u64).collect();
    let mut out = encode_header(&sizes);
    out.reserve(sizes.iter().sum::<u64>() as usize);
    for p in payloads {
        out.extend_from_slice(p.as_ref());
    }
    out
}

/// Parses and validates the header against the whole file image.
pub fn parse_header(bytes: &[u8]) -> Result<Vec<(u64, u64)>, BundleError> {
    let corrupt = |reason: String| BundleError::CorruptGroup { path: None, reason };
    if bytes.len() < 16 {
        return Err(corrupt(format!("{} bytes is shorter than the fixed header", bytes.len())));
    }
    if bytes[..4] != GROUP_MAGIC {
        return Err(corrupt("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != GROUP_VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let hs = count
        .checked_mul(16)
        .and_then(|x| x.checked_add(16))
        .filter(|&h| h <= bytes.len() as u64)
        .ok_or_else(|| corrupt(format!("entry table for {count} entries exceeds file")))?;
    let mut entries = Vec::with_capacity(count as usize);
    let mut expect = hs;
    for i in 0..count as usize {
        let at = 16 + 16 * i;
        let off = u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
        let size = u64::from_le_bytes(bytes[at + 8..at + 16].try_into().unwrap());
        if off != expect {
            return Err(corrupt(format!("entry {i} offset {off}, expected {expect}")));
        }
        expect = off
            .checked_add(size)
            .ok_or_else(|| corrupt(format!("entry {i} size overflows")))?;
        entries.push((off, size));
    }
    if expect != bytes.len() as u64 {
        return Err(corrupt(format!("entries end at {expect}, file is {} bytes", bytes.len())));
    }
    Ok(entries)
}

/// Borrowed payload slices of a group file image.
pub fn decode_group(bytes: &[u8]) -> Result<Vec<&[u8]>, BundleError> {
    Ok(parse_header(bytes)?
        .into_iter()
        .map(|(o, s)| &bytes[o as usize..(o + s) as usize])
        .collect())
}

pub fn group_file_name(group_id: usize) -> String {
    format!("group_{group_id:05}.ocg")
}

/// Writes one group file; returns its length.
pub fn write_group<P: AsRef<[u8]>>(path: &Path, payloads: &[P]) -> Result<u64, BundleError> {
    let bytes = encode_group(payloads);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&bytes).map_err(io_err(path))?;
    f.sync_all().map_err(io_err(path))?;
    Ok(bytes.len() as u64)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SidecarEntry {
    pub group_id: usize,
    pub index: usize,
    pub offset: u64,
    pub size: u64,
    pub relative_path: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sidecar {
    pub strategy: String,
    pub entries: Vec<SidecarEntry>,
}

impl Sidecar {
    /// Entries for `plan` over payloads of the given sizes and names, in
    /// group then member order.
    pub fn for_plan(plan: &GroupPlan, sizes: &[u64], names: &[String]) -> Self {
        let mut entries = Vec::with_capacity(sizes.len());
        for (g, members) in plan.groups.iter().enumerate() {
            let ms: Vec<u64> = members.iter().map(|&i| sizes[i]).collect();
            for (k, ((off, size), &i)) in layout(&ms).into_iter().zip(members).enumerate() {
                entries.push(SidecarEntry {
                    group_id: g,
                    index: k,
                    offset: off,
                    size,
                    relative_path: names[i].clone(),
                });
            }
        }
        Sidecar {
            strategy: plan.strategy.to_string(),
            entries,
        }
    }

    pub fn group_count(&self) -> usize {
        self.entries.iter().map(|e| e.group_id + 1).max().unwrap_or(0)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("count={}\nstrategy={}\n", self.entries.len(), self.strategy);
        for e in &self.entries {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                e.group_id, e.index, e.offset, e.size, e.relative_path
            ));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, BundleError> {
        let bad = |m: String| BundleError::SidecarMismatch(m);
        let mut lines = text.lines();
        let count: usize = lines
            .next()
            .and_then(|l| l.strip_prefix("count="))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("line 1 must be count=N".into()))?;
        let strategy = lines
            .next()
            .and_then(|l| l.strip_prefix("strategy="))
            .ok_or_else(|| bad("line 2 must be strategy=...".into()))?
            .to_string();
        let mut entries = Vec::with_capacity(count);
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.splitn(5, ',').collect();
            let num = |k: usize| -> Result<u64, BundleError> {
                f.get(k)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| bad(format!("line {}: bad field {k}", i + 3)))
            };
            entries.push(SidecarEntry {
                group_id: num(0)? as usize,
                index: num(1)? as usize,
                offset: num(2)?,
                size: num(3)?,
                relative_path: f
                    .get(4)
                    .ok_or_else(|| bad(format!("line {}: missing path", i + 3)))?
                    .to_string(),
            });
        }
        if entries.len() != count {
            return Err(bad(format!("count={count} but {} entries", entries.len())));
        }
        Ok(Sidecar { strategy, entries })
    }

    /// Entries of group `g` in member order, checked to be contiguous.
    fn members(&self, g: usize) -> Vec<&SidecarEntry> {
        let mut v: Vec<&SidecarEntry> = self.entries.iter().filter(|e| e.group_id == g).collect();
        v.sort_by_key(|e| e.index);
        v
    }
}

/// Rejects absolute paths and any `..`, `.` or prefix component.
pub fn safe_relative(rel: &str) -> Result<PathBuf, BundleError> {
    let p = Path::new(rel);
    if rel.is_empty() || !p.components().all(|c| matches!(c, Component::Normal(_))) {
        return Err(BundleError::UnsafePath(rel.to_string()));
    }
    Ok(p.to_path_buf())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PackOutput {
    pub group_files: Vec<PathBuf>,
    pub sidecar: PathBuf,
}

pub fn pack<P: AsRef<[u8]>>(
    payloads: &[P],
    names: &[String],
    plan: &GroupPlan,
    out_dir: &Path,
) -> Result<PackOutput, BundleError> {
    if payloads.len() != names.len() {
        return Err(BundleError::PlanMismatch {
            n: payloads.len(),
            reason: format!("{} names for {} payloads", names.len(), payloads.len()),
        });
    }
    plan.assignment(payloads.len())?;
    for n in names {
        safe_relative(n)?;
    }
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut group_files = Vec::with_capacity(plan.groups.len());
    for (g, members) in plan.groups.iter().enumerate() {
        let path = out_dir.join(group_file_name(g));
        let ps: Vec<&[u8]> = members.iter().map(|&i| payloads[i].as_ref()).collect();
        write_group(&path, &ps)?;
        group_files.push(path);
    }
    let sizes: Vec<u64> = payloads.iter().map(|p| p.as_ref().len() as u64).collect();
    let sidecar = out_dir.join(SIDECAR_NAME);
    fs::write(&sidecar, Sidecar::for_plan(plan, &sizes, names).to_text()).map_err(io_err(&sidecar))?;
    Ok(PackOutput { group_files, sidecar })
}

/// Matches group images (indexed by group id) against the sidecar and
/// returns `(relative_path, payload)` in sidecar order.
pub fn unpack_images<'a>(
    groups: &'a [Vec<u8>],
    sidecar: &Sidecar,
) -> Result<Vec<(String, &'a [u8])>, BundleError> {
    if sidecar.group_count() != groups.len() {
        return Err(BundleError::SidecarMismatch(format!(
            "sidecar names {} groups, {} group files given",
            sidecar.group_count(),
            groups.len()
        )));
    }
    let mut out = Vec::with_capacity(sidecar.entries.len());
    for (g, image) in groups.iter().enumerate() {
        let header = parse_header(image)?;
        let members = sidecar.members(g);
        if members.len() != header.len() {
            return Err(BundleError::SidecarMismatch(format!(
                "group {g}: sidecar lists {} entries, header has {}",
                members.len(),
                header.len()
            )));
        }
        for (k, (e, (off, size))) in members.into_iter().zip(header).enumerate() {
            if e.index != k || e.offset != off || e.size != size {
                return Err(BundleError::SidecarMismatch(format!(
                    "group {g} entry {k}: sidecar ({}, {}, {}) vs header ({k}, {off}, {size})",
                    e.index, e.offset, e.size
                )));
            }
            safe_relative(&e.relative_path)?;
            out.push((e.relative_path.clone(), &image[off as usize..(off + size) as usize]));
        }
    }
    Ok(out)
}

fn read_group(path: &Path) -> Result<Vec<u8>, BundleError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    parse_header(&bytes).map_err(|e| match e {
        BundleError::CorruptGroup { reason, .. } => BundleError::CorruptGroup {
            path: Some(path.to_path_buf()),
            reason,
        },
        e => e,
    })?;
    Ok(bytes)
}

/// Restores every payload under `out_dir/relative_path`. `group_files` are
/// indexed by group id. Returns the written paths in sidecar order.
pub fn unpack(group_files: &[PathBuf], sidecar: &Path, out_dir: &Path) -> Result<Vec<PathBuf>, BundleError> {
    let text = fs::read_to_string(sidecar).map_err(io_err(sidecar))?;
    let sc = Sidecar::parse(&text)?;
    let images = group_files.iter().map(|p| read_group(p)).collect::<Result<Vec<_>, _>>()?;
    let mut written = Vec::new();
    for (rel, payload) in unpack_images(&images, &sc)? {
        let dst = out_dir.join(safe_relative(&rel)?);
        if let Some(parent) = dst.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        fs::write(&dst, payload).map_err(io_err(&dst))?;
        written.push(dst);
    }
    Ok(written)
}

/// Group files in `dir`, ordered by group id, for a sidecar in that dir.
pub fn group_files_in(dir: &Path, sidecar: &Sidecar) -> Vec<PathBuf> {
    (0..sidecar.group_count()).map(|g| dir.join(group_file_name(g))).collect()
}
