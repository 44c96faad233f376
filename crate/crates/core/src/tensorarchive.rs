//! Named-tensor container in the `.safetensors` layout.
//!
//! ```text
//! [u64 LE header length N][N bytes of JSON header][raw tensor buffer]
//! ```
//!
//! The header maps each tensor name to `{"dtype", "shape", "data_offsets"}`
//! with offsets relative to the start of the buffer, plus an optional
//! `"__metadata__"` string map. The writer is canonical: metadata first, then
//! tensors in lexicographic name order, packed contiguously from offset 0,
//! with no header padding.

use std::collections::BTreeMap;
use std::fmt;

use serde::de::{Deserialize, Deserializer, MapAccess, Visitor};
use serde_json::Value;
use thiserror::Error;

use crate::embedding::{EmbeddingError, Normalization, PatchEmbedding};
use crate::keyschedule::SecretKey;

pub const DEFAULT_WEIGHT_NAME: &str = "patch_embed.proj.weight";
pub const DEFAULT_BIAS_NAME: &str = "patch_embed.proj.bias";
pub const META_ADAPTED: &str = "patchcrypt.adapted";
pub const META_PATCH_SIZE: &str = "patchcrypt.patch_size";

const METADATA_KEY: &str = "__metadata__";

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("file is {0} bytes, too short for the 8-byte header length")]
    TooShort(usize),
    #[error("header length {declared} overruns the {available} bytes after the length prefix")]
    HeaderOverrun { declared: u64, available: usize },
    #[error("header is not valid JSON: {0}")]
    Json(String),
    #[error("header entry {name:?}: {reason}")]
    MalformedEntry { name: String, reason: String },
    #[error("tensor {name:?}: unknown dtype {dtype:?}")]
    UnknownDtype { name: String, dtype: String },
    #[error("tensor {name:?}: shape {shape:?} needs {expected} bytes, offsets span {actual}")]
    ByteLength {
        name: String,
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("tensor {name:?}: data begins at {begin}, overlapping the previous tensor ending at {prev_end}")]
    OffsetOverlap {
        name: String,
        begin: usize,
        prev_end: usize,
    },
    #[error("gap in tensor buffer: expected data at offset {expected}, next begins at {found}")]
    OffsetGap { expected: usize, found: usize },
    #[error("tensor data ends at {end}, but the buffer holds {available} bytes")]
    DataOverrun { end: usize, available: usize },
    #[error("duplicate tensor name {0:?}")]
    DuplicateName(String),
    #[error("tensor {0:?} not found")]
    MissingTensor(String),
    #[error("tensor {name:?}: incompatible shape {shape:?}: {reason}")]
    IncompatibleShape {
        name: String,
        shape: Vec<usize>,
        reason: String,
    },
    #[error("tensor {name:?}: expected 3 input channels, found {found}")]
    Channels { name: String, found: usize },
    #[error("tensor {name:?}: dtype {dtype} not supported here (need F32)")]
    UnsupportedDtype { name: String, dtype: Dtype },
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Dtype {
    F32,
    F64,
    I64,
    U8,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 | Dtype::I64 => 8,
            Dtype::U8 => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Dtype::F32 => "F32",
            Dtype::F64 => "F64",
            Dtype::I64 => "I64",
            Dtype::U8 => "U8",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "F32" => Dtype::F32,
            "F64" => Dtype::F64,
            "I64" => Dtype::I64,
            "U8" => Dtype::U8,
            _ => return None,
        })
    }
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorRecord {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    /// Little-endian element bytes.
    pub data: Vec<u8>,
}

impl TensorRecord {
    pub fn from_f32(name: impl Into<String>, shape: Vec<usize>, values: &[f32]) -> Self {
        Self {
            name: name.into(),
            dtype: Dtype::F32,
            shape,
            data: values.iter().flat_map(|v| v.to_le_bytes()).collect(),
        }
    }

    pub fn element_count(&self) -> Option<usize> {
        element_count(&self.shape)
    }

    pub fn to_f32(&self) -> Option<Vec<f32>> {
        (self.dtype == Dtype::F32).then(|| {
            self.data
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect()
        })
    }

    fn expected_len(&self) -> Option<usize> {
        self.element_count()?.checked_mul(self.dtype.size())
    }
}

fn element_count(shape: &[usize]) -> Option<usize> {
    shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TensorArchive {
    pub records: Vec<TensorRecord>,
    pub metadata: BTreeMap<String, String>,
}

impl TensorArchive {
    pub fn get(&self, name: &str) -> Option<&TensorRecord> {
        self.records.iter().find(|r| r.name == name)
    }

    fn get_mut(&mut self, name: &str) -> Option<&mut TensorRecord> {
        self.records.iter_mut().find(|r| r.name == name)
    }
}

/// Header entries in file order, with duplicates preserved so they can be
/// rejected.
struct OrderedEntries(Vec<(String, Value)>);

impl<'de> Deserialize<'de> for OrderedEntries {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct EntriesVisitor;

        impl<'de> Visitor<'de> for EntriesVisitor {
            type Value = OrderedEntries;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a JSON object")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Self::Value, A::Error> {
                let mut entries = Vec::new();
                while let Some(entry) = map.next_entry::<String, Value>()? {
                    entries.push(entry);
                }
                Ok(OrderedEntries(entries))
            }
        }

        deserializer.deserialize_map(EntriesVisitor)
    }
}

fn malformed(name: &str, reason: impl Into<String>) -> ArchiveError {
    ArchiveError::MalformedEntry {
        name: name.to_string(),
        reason: reason.into(),
    }
}

fn as_usize(v: &Value) -> Option<usize> {
    v.as_u64().and_then(|n| usize::try_from(n).ok())
}

pub fn read_archive(bytes: &[u8]) -> Result<TensorArchive, ArchiveError> {
    let prefix: [u8; 8] = bytes
        .get(..8)
        .and_then(|b| b.try_into().ok())
        .ok_or(ArchiveError::TooShort(bytes.len()))?;
    let declared = u64::from_le_bytes(prefix);
    let available = bytes.len() - 8;
    let header_len = usize::try_from(declared)
        .ok()
        .filter(|&n| n <= available)
        .ok_or(ArchiveError::HeaderOverrun {
            declared,
            available,
        })?;
    let header = &bytes[8..8 + header_len];
    let buffer = &bytes[8 + header_len..];

    let OrderedEntries(entries) =
        serde_json::from_slice(header).map_err(|e| ArchiveError::Json(e.to_string()))?;

    let mut metadata = BTreeMap::new();
    let mut seen_meta = false;
    // (begin, end, record without data)
    let mut spans: Vec<(usize, usize, TensorRecord)> = Vec::new();
    let mut names = std::collections::HashSet::new();

    for (name, value) in entries {
        if name == METADATA_KEY {
            if std::mem::replace(&mut seen_meta, true) {
                return Err(ArchiveError::DuplicateName(name));
            }
            let obj = value
                .as_object()
                .ok_or_else(|| malformed(&name, "metadata must be an object"))?;
            for (k, v) in obj {
                let s = v.as_str().ok_or_else(|| {
                    malformed(&name, format!("metadata value for {k:?} is not a string"))
                })?;
                metadata.insert(k.clone(), s.to_string());
            }
            continue;
        }
        if !names.insert(name.clone()) {
            return Err(ArchiveError::DuplicateName(name));
        }
        let obj = value
            .as_object()
            .ok_or_else(|| malformed(&name, "entry must be an object"))?;
        let dtype_str = obj
            .get("dtype")
            .and_then(Value::as_str)
            .ok_or_else(|| malformed(&name, "missing string field \"dtype\""))?;
        let dtype = Dtype::parse(dtype_str).ok_or_else(|| ArchiveError::UnknownDtype {
            name: name.clone(),
            dtype: dtype_str.to_string(),
        })?;
        let shape = obj
            .get("shape")
            .and_then(Value::as_array)
            .ok_or_else(|| malformed(&name, "missing array field \"shape\""))?
            .iter()
            .map(as_usize)
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| malformed(&name, "shape extents must be non-negative integers"))?;
        let offsets = obj
            .get("data_offsets")
            .and_then(Value::as_array)
            .filter(|a| a.len() == 2)
            .ok_or_else(|| malformed(&name, "\"data_offsets\" must be [begin, end]"))?;
        let (begin, end) = match (as_usize(&offsets[0]), as_usize(&offsets[1])) {
            (Some(b), Some(e)) if b <= e => (b, e),
            _ => {
                return Err(malformed(
                    &name,
                    "\"data_offsets\" must satisfy 0 <= begin <= end",
                ))
            }
        };
        let record = TensorRecord {
            name,
            dtype,
            shape,
            data: Vec::new(),
        };
        let expected = record
            .expected_len()
            .ok_or_else(|| malformed(&record.name, "element count overflows"))?;
        if expected != end - begin {
            return Err(ArchiveError::ByteLength {
                name: record.name,
                shape: record.shape,
                expected,
                actual: end - begin,
            });
        }
        spans.push((begin, end, record));
    }

    spans.sort_by_key(|&(begin, end, _)| (begin, end));
    let mut cursor = 0usize;
    let mut records = Vec::with_capacity(spans.len());
    for (begin, end, mut record) in spans {
        if begin < cursor {
            return Err(ArchiveError::OffsetOverlap {
                name: record.name,
                begin,
                prev_end: cursor,
            });
        }
        if begin > cursor {
            return Err(ArchiveError::OffsetGap {
                expected: cursor,
                found: begin,
            });
        }
        if end > buffer.len() {
            return Err(ArchiveError::DataOverrun {
                end,
                available: buffer.len(),
            });
        }
        record.data = buffer[begin..end].to_vec();
        records.push(record);
        cursor = end;
    }
    if cursor != buffer.len() {
        return Err(ArchiveError::OffsetGap {
            expected: cursor,
            found: buffer.len(),
        });
    }

    Ok(TensorArchive { records, metadata })
}

pub fn write_archive(archive: &TensorArchive) -> Result<Vec<u8>, ArchiveError> {
    let mut sorted: Vec<&TensorRecord> = archive.records.iter().collect();
    sorted.sort_by(|a, b| a.name.cmp(&b.name));
    for pair in sorted.windows(2) {
        if pair[0].name == pair[1].name {
            return Err(ArchiveError::DuplicateName(pair[0].name.clone()));
        }
    }

    let mut header = String::from("{");
    let mut first = true;
    let mut push_key = |header: &mut String, key: &str| {
        if !std::mem::take(&mut first) {
            header.push(',');
        }
        header.push_str(&serde_json::to_string(key).expect("string serializes"));
        header.push(':');
    };
    if !archive.metadata.is_empty() {
        push_key(&mut header, METADATA_KEY);
        header.push_str(&serde_json::to_string(&archive.metadata).expect("map serializes"));
    }
    let mut offset = 0usize;
    for record in &sorted {
        if record.name == METADATA_KEY {
            return Err(malformed(METADATA_KEY, "reserved name used for a tensor"));
        }
        let expected = record
            .expected_len()
            .ok_or_else(|| malformed(&record.name, "element count overflows"))?;
        if expected != record.data.len() {
            return Err(ArchiveError::ByteLength {
                name: record.name.clone(),
                shape: record.shape.clone(),
                expected,
                actual: record.data.len(),
            });
        }
        push_key(&mut header, &record.name);
        let shape = serde_json::to_string(&record.shape).expect("shape serializes");
        header.push_str(&format!(
            "{{\"dtype\":\"{}\",\"shape\":{shape},\"data_offsets\":[{offset},{}]}}",
            record.dtype,
            offset + expected
        ));
        offset += expected;
    }
    header.push('}');

    let mut out = Vec::with_capacity(8 + header.len() + offset);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for record in &sorted {
        out.extend_from_slice(&record.data);
    }
    Ok(out)
}

/// Where to find the patch-embedding layer inside an archive.
#[derive(Clone, Debug)]
pub struct EmbeddingLocator {
    pub weight_name: String,
    pub bias_name: String,
    /// Required only for 2-axis `[D, 3·P²]` weights whose `P` is ambiguous;
    /// otherwise it is checked against the shape.
    pub patch_size: Option<usize>,
}

impl Default for EmbeddingLocator {
    fn default() -> Self {
        Self {
            weight_name: DEFAULT_WEIGHT_NAME.to_string(),
            bias_name: DEFAULT_BIAS_NAME.to_string(),
            patch_size: None,
        }
    }
}

fn isqrt(n: usize) -> Option<usize> {
    let r = (n as f64).sqrt().round() as usize;
    (r * r == n).then_some(r)
}

/// Reads `(D, P)` off the weight's shape.
fn embedding_dims(
    record: &TensorRecord,
    patch_hint: Option<usize>,
) -> Result<(usize, usize), ArchiveError> {
    let bad = |reason: String| ArchiveError::IncompatibleShape {
        name: record.name.clone(),
        shape: record.shape.clone(),
        reason,
    };
    let (dim, patch) = match *record.shape.as_slice() {
        [d, c, h, w] => {
            if c != 3 {
                return Err(ArchiveError::Channels {
                    name: record.name.clone(),
                    found: c,
                });
            }
            if h != w {
                return Err(bad("kernel is not square".into()));
            }
            if let Some(p) = patch_hint.filter(|&p| p != h) {
                return Err(bad(format!("patch size {p} given, kernel is {h}x{h}")));
            }
            (d, h)
        }
        [d, n] => {
            let patch = match patch_hint {
                Some(p) => p,
                None => (n % 3 == 0)
                    .then(|| isqrt(n / 3))
                    .flatten()
                    .ok_or_else(|| bad(format!("{n} columns is not 3*P^2 for any P")))?,
            };
            if 3 * patch * patch != n {
                return Err(bad(format!(
                    "{n} columns, but 3*P^2 = {} for P = {patch}",
                    3 * patch * patch
                )));
            }
            (d, patch)
        }
        _ => return Err(bad("expected [D, 3, P, P] or [D, 3*P^2]".into())),
    };
    if dim == 0 || patch == 0 {
        return Err(bad("zero extent".into()));
    }
    Ok((dim, patch))
}

fn f32_values(record: &TensorRecord) -> Result<Vec<f32>, ArchiveError> {
    record.to_f32().ok_or(ArchiveError::UnsupportedDtype {
        name: record.name.clone(),
        dtype: record.dtype,
    })
}

/// Pulls the patch-embedding layer out of `archive`. A missing bias tensor is
/// treated as zeros.
pub fn load_patch_embedding(
    archive: &TensorArchive,
    locator: &EmbeddingLocator,
    norm: Normalization,
) -> Result<PatchEmbedding, ArchiveError> {
    let weight = archive
        .get(&locator.weight_name)
        .ok_or_else(|| ArchiveError::MissingTensor(locator.weight_name.clone()))?;
    let (dim, patch) = embedding_dims(weight, locator.patch_size)?;
    let w = f32_values(weight)?;
    let bias = match archive.get(&locator.bias_name) {
        Some(b) => {
            if b.shape != [dim] {
                return Err(ArchiveError::IncompatibleShape {
                    name: b.name.clone(),
                    shape: b.shape.clone(),
                    reason: format!("bias must have shape [{dim}]"),
                });
            }
            f32_values(b)?
        }
        None => vec![0.0; dim],
    };
    Ok(PatchEmbedding::from_conv_layout(
        &w, &bias, patch, dim, norm,
    )?)
}

/// Rewrites the patch-embedding weight for `key`. Every other tensor is left
/// byte-identical; the key itself is never written.
pub fn adapt_archive(
    archive: &TensorArchive,
    key: &SecretKey,
    locator: &EmbeddingLocator,
) -> Result<TensorArchive, ArchiveError> {
    let pe = load_patch_embedding(archive, locator, Normalization::default())?;
    let adapted = pe.adapt(key)?;
    let mut out = archive.clone();
    let record = out
        .get_mut(&locator.weight_name)
        .expect("weight located above");
    record.data = adapted
        .to_conv_layout()
        .iter()
        .flat_map(|v| v.to_le_bytes())
        .collect();
    out.metadata.insert(META_ADAPTED.into(), "true".into());
    out.metadata
        .insert(META_PATCH_SIZE.into(), pe.patch_size().to_string());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keyschedule::KEY_LEN;

    fn archive_bytes(header: &str, buffer: &[u8]) -> Vec<u8> {
        let mut out = (header.len() as u64).to_le_bytes().to_vec();
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(buffer);
        out
    }

    #[test]
    fn empty_archive() {
        let a = read_archive(&archive_bytes("{}", &[])).unwrap();
        assert!(a.records.is_empty() && a.metadata.is_empty());
        assert_eq!(write_archive(&a).unwrap(), archive_bytes("{}", &[]));
    }

    #[test]
    fn one_f32_tensor() {
        let header = r#"{"x":{"dtype":"F32","shape":[2],"data_offsets":[0,8]}}"#;
        let buf: Vec<u8> = [1.5f32, -2.0]
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect();
        let a = read_archive(&archive_bytes(header, &buf)).unwrap();
        assert_eq!(a.records.len(), 1);
        assert_eq!(a.records[0].to_f32().unwrap(), vec![1.5, -2.0]);
        assert_eq!(write_archive(&a).unwrap(), archive_bytes(header, &buf));
    }

    #[test]
    fn byte_length_mismatch() {
        let header = r#"{"x":{"dtype":"F32","shape":[2],"data_offsets":[0,7]}}"#;
        assert!(matches!(
            read_archive(&archive_bytes(header, &[0; 7])),
            Err(ArchiveError::ByteLength {
                expected: 8,
                actual: 7,
                ..
            })
        ));
    }

    #[test]
    fn structural_errors_are_distinct() {
        assert!(matches!(
            read_archive(&[1, 2, 3]),
            Err(ArchiveError::TooShort(3))
        ));
        let mut overrun = 100u64.to_le_bytes().to_vec();
        overrun.extend_from_slice(b"{}");
        assert!(matches!(
            read_archive(&overrun),
            Err(ArchiveError::HeaderOverrun { .. })
        ));
        assert!(matches!(
            read_archive(&archive_bytes("{\"x\":", &[])),
            Err(ArchiveError::Json(_))
        ));
        assert!(matches!(
            read_archive(&archive_bytes(
                r#"{"x":{"dtype":"BF16","shape":[1],"data_offsets":[0,2]}}"#,
                &[0; 2]
            )),
            Err(ArchiveError::UnknownDtype { .. })
        ));
        let overlap = r#"{"a":{"dtype":"U8","shape":[2],"data_offsets":[0,2]},"b":{"dtype":"U8","shape":[2],"data_offsets":[1,3]}}"#;
        assert!(matches!(
            read_archive(&archive_bytes(overlap, &[0; 3])),
            Err(ArchiveError::OffsetOverlap { .. })
        ));
        let gap = r#"{"a":{"dtype":"U8","shape":[2],"data_offsets":[0,2]},"b":{"dtype":"U8","shape":[1],"data_offsets":[3,4]}}"#;
        assert!(matches!(
            read_archive(&archive_bytes(gap, &[0; 4])),
            Err(ArchiveError::OffsetGap {
                expected: 2,
                found: 3
            })
        ));
        let trailing = r#"{"a":{"dtype":"U8","shape":[2],"data_offsets":[0,2]}}"#;
        assert!(matches!(
            read_archive(&archive_bytes(trailing, &[0; 5])),
            Err(ArchiveError::OffsetGap {
                expected: 2,
                found: 5
            })
        ));
        assert!(matches!(
            read_archive(&archive_bytes(trailing, &[0; 1])),
            Err(ArchiveError::DataOverrun { .. })
        ));
        let dup = r#"{"a":{"dtype":"U8","shape":[1],"data_offsets":[0,1]},"a":{"dtype":"U8","shape":[1],"data_offsets":[1,2]}}"#;
        assert!(matches!(
            read_archive(&archive_bytes(dup, &[0; 2])),
            Err(ArchiveError::DuplicateName(_))
        ));
        let no_shape = r#"{"a":{"dtype":"U8","data_offsets":[0,1]}}"#;
        assert!(matches!(
            read_archive(&archive_bytes(no_shape, &[0])),
            Err(ArchiveError::MalformedEntry { .. })
        ));
    }

    #[test]
    fn padded_header_accepted() {
        // writers that align the buffer pad the header with spaces
        let header = "{\"a\":{\"dtype\":\"U8\",\"shape\":[1],\"data_offsets\":[0,1]}}      ";
        let a = read_archive(&archive_bytes(header, &[7])).unwrap();
        assert_eq!(a.records[0].data, vec![7]);
    }

    #[test]
    fn writer_sorts_and_rejects_duplicates() {
        let mut a = TensorArchive::default();
        a.records.push(TensorRecord::from_f32("z", vec![1], &[1.0]));
        a.records.push(TensorRecord::from_f32("a", vec![1], &[2.0]));
        a.metadata.insert("k".into(), "v".into());
        let bytes = write_archive(&a).unwrap();
        let header_len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        let header = std::str::from_utf8(&bytes[8..8 + header_len]).unwrap();
        assert_eq!(
            header,
            r#"{"__metadata__":{"k":"v"},"a":{"dtype":"F32","shape":[1],"data_offsets":[0,4]},"z":{"dtype":"F32","shape":[1],"data_offsets":[4,8]}}"#
        );
        let back = read_archive(&bytes).unwrap();
        assert_eq!(back.records[0].name, "a");
        assert_eq!(write_archive(&back).unwrap(), bytes);

        a.records.push(TensorRecord::from_f32("a", vec![1], &[3.0]));
        assert!(matches!(
            write_archive(&a),
            Err(ArchiveError::DuplicateName(_))
        ));
    }

    fn one_pixel_model() -> TensorArchive {
        TensorArchive {
            records: vec![
                TensorRecord::from_f32(DEFAULT_WEIGHT_NAME, vec![1, 3, 1, 1], &[1.0, 2.0, 3.0]),
                TensorRecord::from_f32(DEFAULT_BIAS_NAME, vec![1], &[0.25]),
                TensorRecord::from_f32("head.weight", vec![2], &[9.0, 8.0]),
            ],
            metadata: BTreeMap::new(),
        }
    }

    #[test]
    fn adapt_three_element_case() {
        let mut kb = [0; KEY_LEN];
        kb[0] = 1; // σ = [2, 0, 1] for n = 3
        let out = adapt_archive(
            &one_pixel_model(),
            &SecretKey::from_bytes(kb),
            &EmbeddingLocator::default(),
        )
        .unwrap();
        assert_eq!(
            out.get(DEFAULT_WEIGHT_NAME).unwrap().to_f32().unwrap(),
            vec![3.0, 1.0, 2.0]
        );
        assert_eq!(
            out.get(DEFAULT_BIAS_NAME),
            one_pixel_model().get(DEFAULT_BIAS_NAME)
        );
        assert_eq!(out.metadata[META_ADAPTED], "true");
        assert_eq!(out.metadata[META_PATCH_SIZE], "1");
    }

    #[test]
    fn adapt_identity_key_only_touches_metadata() {
        let zero = SecretKey::from_bytes([0; KEY_LEN]);
        let model = one_pixel_model();
        let out = adapt_archive(&model, &zero, &EmbeddingLocator::default()).unwrap();
        assert_eq!(out.records, model.records);
        assert_eq!(out.metadata.len(), 2);
    }

    #[test]
    fn adapt_errors() {
        let zero = SecretKey::from_bytes([0; KEY_LEN]);
        let locator = EmbeddingLocator {
            weight_name: "nope".into(),
            ..Default::default()
        };
        assert!(matches!(
            adapt_archive(&one_pixel_model(), &zero, &locator),
            Err(ArchiveError::MissingTensor(_))
        ));

        let mut four_channel = one_pixel_model();
        four_channel.records[0] =
            TensorRecord::from_f32(DEFAULT_WEIGHT_NAME, vec![1, 4, 1, 1], &[0.0; 4]);
        assert!(matches!(
            adapt_archive(&four_channel, &zero, &EmbeddingLocator::default()),
            Err(ArchiveError::Channels { found: 4, .. })
        ));

        let mut odd = one_pixel_model();
        odd.records[0] = TensorRecord::from_f32(DEFAULT_WEIGHT_NAME, vec![1, 5], &[0.0; 5]);
        assert!(matches!(
            adapt_archive(&odd, &zero, &EmbeddingLocator::default()),
            Err(ArchiveError::IncompatibleShape { .. })
        ));

        let mut wide = one_pixel_model();
        wide.records[0].dtype = Dtype::U8;
        wide.records[0].data = vec![0; 3];
        assert!(matches!(
            adapt_archive(&wide, &zero, &EmbeddingLocator::default()),
            Err(ArchiveError::UnsupportedDtype { .. })
        ));
    }

    #[test]
    fn flat_weight_layout() {
        let mut model = one_pixel_model();
        model.records[0] = TensorRecord::from_f32(DEFAULT_WEIGHT_NAME, vec![1, 12], &[0.0; 12]);
        let pe = load_patch_embedding(
            &model,
            &EmbeddingLocator::default(),
            Normalization::default(),
        );
        assert_eq!(pe.unwrap().patch_size(), 2);
        let locator = EmbeddingLocator {
            patch_size: Some(3),
            ..Default::default()
        };
        assert!(load_patch_embedding(&model, &locator, Normalization::default()).is_err());
    }
}
