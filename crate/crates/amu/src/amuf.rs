//! AMUF feature files.
//!
//! ```text
//! magic      4 bytes  "AMUF"
//! version    u32      1
//! N          u64      sample count
//! d          u32      feature dimension
//! C          u32      class count
//! flags      u32      bit 0: labels present, bit 1: split tags present
//! meta_len   u32
//! metadata   meta_len bytes of UTF-8, one `key=value` per line
//! features   N * d f32, row-major
//! labels     N i32        (if flag bit 0)
//! tags       N u8         (if flag bit 1; 0 train, 1 val, 2 test)
//! ```
//!
//! All integers and floats are little-endian. A file without tags reads as
//! all-train. A file without labels is only accepted when `N == C`, in which
//! case row `i` is labelled `i` (the layout used for heads and probes).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use amu_core::{FeatureStore, LinearProbe, SplitTag, ZeroShotHead};

use crate::error::{AmuError, Result};

pub const MAGIC: &[u8; 4] = b"AMUF";
pub const VERSION: u32 = 1;
pub const FLAG_LABELS: u32 = 1;
pub const FLAG_TAGS: u32 = 1 << 1;
pub const ENCODER_KEY: &str = "encoder_id";

/// Fixed-size part of the header, magic through `meta_len`.
pub const HEADER_LEN: usize = 4 + 4 + 8 + 4 + 4 + 4 + 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Header {
    pub count: u64,
    pub dim: u32,
    pub classes: u32,
    pub flags: u32,
    pub metadata: BTreeMap<String, String>,
}

fn format_err(msg: impl Into<String>) -> AmuError {
    AmuError::Format(msg.into())
}

fn to_u32(value: usize, what: &str) -> Result<u32> {
    u32::try_from(value).map_err(|_| format_err(format!("{what} {value} does not fit in u32")))
}

fn render_metadata(metadata: &BTreeMap<String, String>) -> Result<String> {
    let mut out = String::new();
    for (k, v) in metadata {
        if k.is_empty() || k.contains(['=', '\n']) || v.contains('\n') {
            return Err(format_err(format!("metadata entry {k:?} cannot be encoded")));
        }
        out.push_str(k);
        out.push('=');
        out.push_str(v);
        out.push('\n');
    }
    Ok(out)
}

fn parse_metadata(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for line in text.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line.split_once('=').ok_or_else(|| format_err(format!("metadata line {line:?} has no '='")))?;
        out.insert(k.to_string(), v.to_string());
    }
    Ok(out)
}

/// Serializes a store with labels and split tags.
pub fn encode(store: &FeatureStore) -> Result<Vec<u8>> {
    let mut metadata = BTreeMap::new();
    metadata.insert(ENCODER_KEY.to_string(), store.encoder_id().to_string());
    encode_with_metadata(store, &metadata)
}

/// Serializes a store; `metadata` should carry `encoder_id`.
pub fn encode_with_metadata(store: &FeatureStore, metadata: &BTreeMap<String, String>) -> Result<Vec<u8>> {
    let meta = render_metadata(metadata)?;
    let n = store.len();
    let mut out = Vec::with_capacity(HEADER_LEN + meta.len() + n * (store.dim() * 4 + 5));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&to_u32(store.dim(), "dimension")?.to_le_bytes());
    out.extend_from_slice(&to_u32(store.class_count(), "class count")?.to_le_bytes());
    out.extend_from_slice(&(FLAG_LABELS | FLAG_TAGS).to_le_bytes());
    out.extend_from_slice(&to_u32(meta.len(), "metadata length")?.to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    for x in store.features() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    for &y in store.labels() {
        let y = i32::try_from(y).map_err(|_| format_err(format!("label {y} does not fit in i32")))?;
        out.extend_from_slice(&y.to_le_bytes());
    }
    out.extend(store.split_tags().iter().map(|t| t.code()));
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            format_err(format!(
                "truncated file: {what} needs {len} bytes at offset {}, {} available",
                self.pos,
                self.bytes.len() - self.pos
            ))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

fn read_header(cur: &mut Cursor<'_>) -> Result<Header> {
    let magic = cur.take(4, "magic")?;
    if magic != MAGIC {
        return Err(format_err(format!("bad magic {magic:?}, expected \"AMUF\"")));
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(format_err(format!("unsupported version {version}, expected {VERSION}")));
    }
    let count = cur.u64("sample count")?;
    let dim = cur.u32("dimension")?;
    let classes = cur.u32("class count")?;
    let flags = cur.u32("flags")?;
    if flags & !(FLAG_LABELS | FLAG_TAGS) != 0 {
        return Err(format_err(format!("unknown flag bits {flags:#x}")));
    }
    let meta_len = cur.u32("metadata length")? as usize;
    let meta = cur.take(meta_len, "metadata")?;
    let text = std::str::from_utf8(meta).map_err(|e| format_err(format!("metadata is not UTF-8: {e}")))?;
    Ok(Header { count, dim, classes, flags, metadata: parse_metadata(text)? })
}

/// Parses only the header.
pub fn decode_header(bytes: &[u8]) -> Result<Header> {
    read_header(&mut Cursor { bytes, pos: 0 })
}

/// Parses a whole file and validates every store invariant.
pub fn decode(bytes: &[u8]) -> Result<FeatureStore> {
    Ok(decode_with_metadata(bytes)?.0)
}

pub fn decode_with_metadata(bytes: &[u8]) -> Result<(FeatureStore, BTreeMap<String, String>)> {
    let mut cur = Cursor { bytes, pos: 0 };
    let header = read_header(&mut cur)?;
    let n = usize::try_from(header.count).map_err(|_| format_err("sample count does not fit in memory"))?;
    let (d, c) = (header.dim as usize, header.classes as usize);
    let values = n.checked_mul(d).ok_or_else(|| format_err("N * d overflows"))?;
    let feature_bytes = values.checked_mul(4).ok_or_else(|| format_err("feature payload overflows"))?;
    let features: Vec<f32> = cur
        .take(feature_bytes, "features")?
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();

    let labels: Vec<usize> = if header.flags & FLAG_LABELS != 0 {
        let raw = cur.take(n * 4, "labels")?;
        let mut labels = Vec::with_capacity(n);
        for (i, b) in raw.chunks_exact(4).enumerate() {
            let y = i32::from_le_bytes(b.try_into().expect("4 bytes"));
            let y = usize::try_from(y).map_err(|_| amu_core::Error::Data(format!("negative label {y} at row {i}")))?;
            labels.push(y);
        }
        labels
    } else if n == c {
        (0..n).collect()
    } else {
        return Err(format_err(format!("labels missing and N = {n} differs from C = {c}")));
    };

    let tags: Vec<SplitTag> = if header.flags & FLAG_TAGS != 0 {
        let raw = cur.take(n, "split tags")?;
        let mut tags = Vec::with_capacity(n);
        for (i, &code) in raw.iter().enumerate() {
            tags.push(
                SplitTag::from_code(code)
                    .ok_or_else(|| amu_core::Error::Data(format!("unknown split tag {code} at row {i}")))?,
            );
        }
        tags
    } else {
        vec![SplitTag::Train; n]
    };

    if cur.pos != bytes.len() {
        return Err(format_err(format!("{} trailing bytes after payload", bytes.len() - cur.pos)));
    }
    let encoder_id = header.metadata.get(ENCODER_KEY).cloned().unwrap_or_default();
    let store = FeatureStore::new(encoder_id, d, c, features, labels, tags)?;
    Ok((store, header.metadata))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| AmuError::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| AmuError::io(path, e))
}

pub fn read_feature_file(path: &Path) -> Result<FeatureStore> {
    decode(&read_bytes(path)?)
}

pub fn write_feature_file(store: &FeatureStore, path: &Path) -> Result<()> {
    write_bytes(path, &encode(store)?)
}

pub fn encode_head(head: &ZeroShotHead, encoder_id: &str) -> Result<Vec<u8>> {
    encode(&head.to_store(encoder_id)?)
}

pub fn decode_head(bytes: &[u8]) -> Result<ZeroShotHead> {
    Ok(ZeroShotHead::from_store(&decode(bytes)?)?)
}

/// A probe as a `C x d` file; weights are rounded to f32.
pub fn encode_probe(probe: &LinearProbe, encoder_id: &str) -> Result<Vec<u8>> {
    let head = ZeroShotHead::new(probe.classes(), probe.dim(), probe.weights().to_vec())?;
    encode_head(&head, encoder_id)
}

pub fn decode_probe(bytes: &[u8]) -> Result<LinearProbe> {
    let head = decode_head(bytes)?;
    Ok(LinearProbe::from_weights(head.classes(), head.dim(), head.weights().to_vec())?)
}
