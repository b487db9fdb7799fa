//! Length-prefixed JSON-header tensor container.
//!
//! Layout: an unsigned 64-bit little-endian header length `H`, then `H` bytes of
//! UTF-8 JSON mapping tensor names to `{"dtype", "shape", "data_offsets"}`, then
//! the raw little-endian payload. Offsets are relative to the first payload byte.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use half::f16;
use serde_json::{Map, Value};

use super::TensorError;

const METADATA_KEY: &str = "__metadata__";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DType {
    F16,
    F32,
    F64,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F16 => 2,
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DType::F16 => "F16",
            DType::F32 => "F32",
            DType::F64 => "F64",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "F16" => Some(DType::F16),
            "F32" => Some(DType::F32),
            "F64" => Some(DType::F64),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorEntry {
    pub dtype: DType,
    pub shape: Vec<usize>,
    /// Byte range `[begin, end)` relative to the start of the payload.
    pub data_offsets: (usize, usize),
}

impl TensorEntry {
    pub fn element_count(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn byte_len(&self) -> usize {
        self.data_offsets.1 - self.data_offsets.0
    }
}

/// A parsed tensor container. Entries are kept in name order so that
/// serialization is deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorFile {
    pub entries: BTreeMap<String, TensorEntry>,
    /// String metadata; carried through writes but never interpreted.
    pub metadata: BTreeMap<String, String>,
    pub payload: Vec<u8>,
}

impl TensorFile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn entry(&self, name: &str) -> Result<&TensorEntry, TensorError> {
        if self.entries.is_empty() {
            return Err(TensorError::NoTensors);
        }
        self.entries
            .get(name)
            .ok_or_else(|| TensorError::MissingTensor(name.to_string()))
    }

    /// Raw little-endian bytes of one tensor.
    pub fn bytes(&self, name: &str) -> Result<&[u8], TensorError> {
        let e = self.entry(name)?;
        Ok(&self.payload[e.data_offsets.0..e.data_offsets.1])
    }

    /// Appends a tensor given as raw little-endian bytes.
    pub fn push_raw(
        &mut self,
        name: &str,
        dtype: DType,
        shape: &[usize],
        bytes: &[u8],
    ) -> Result<(), TensorError> {
        if name == METADATA_KEY {
            return Err(TensorError::MalformedHeader(format!(
                "tensor name {METADATA_KEY:?} is reserved"
            )));
        }
        if self.entries.contains_key(name) {
            return Err(TensorError::MalformedHeader(format!(
                "duplicate tensor {name:?}"
            )));
        }
        if shape.contains(&0) {
            return Err(TensorError::ZeroDimension(name.to_string()));
        }
        let expected = shape.iter().product::<usize>() * dtype.size();
        if expected != bytes.len() {
            return Err(TensorError::SizeMismatch {
                tensor: name.to_string(),
                expected,
                actual: bytes.len(),
            });
        }
        let begin = self.payload.len();
        self.payload.extend_from_slice(bytes);
        self.entries.insert(
            name.to_string(),
            TensorEntry {
                dtype,
                shape: shape.to_vec(),
                data_offsets: (begin, begin + bytes.len()),
            },
        );
        Ok(())
    }

    /// Appends a tensor, narrowing `values` to `dtype`. Narrowing is lossy
    /// for F16/F32 unless the values are already representable.
    pub fn push_f64(
        &mut self,
        name: &str,
        dtype: DType,
        shape: &[usize],
        values: &[f64],
    ) -> Result<(), TensorError> {
        let mut bytes = Vec::with_capacity(values.len() * dtype.size());
        match dtype {
            DType::F16 => values
                .iter()
                .for_each(|&v| bytes.extend_from_slice(&f16::from_f64(v).to_le_bytes())),
            DType::F32 => values
                .iter()
                .for_each(|&v| bytes.extend_from_slice(&(v as f32).to_le_bytes())),
            DType::F64 => values
                .iter()
                .for_each(|&v| bytes.extend_from_slice(&v.to_le_bytes())),
        }
        self.push_raw(name, dtype, shape, &bytes)
    }

    /// Decodes one tensor and promotes every element to `f64`. Promotion is
    /// exact for all three dtypes.
    pub fn tensor_f64(&self, name: &str) -> Result<Vec<f64>, TensorError> {
        let e = self.entry(name)?;
        let raw = self.bytes(name)?;
        let out = match e.dtype {
            DType::F16 => raw
                .chunks_exact(2)
                .map(|b| f16::from_le_bytes([b[0], b[1]]).to_f64())
                .collect(),
            DType::F32 => raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect(),
            DType::F64 => raw
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect(),
        };
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TensorError> {
        if bytes.len() < 8 {
            return Err(TensorError::Truncated(format!(
                "file is {} bytes, header length prefix needs 8",
                bytes.len()
            )));
        }
        let header_len = u64::from_le_bytes(bytes[..8].try_into().unwrap());
        let header_end = usize::try_from(header_len)
            .ok()
            .and_then(|h| h.checked_add(8))
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| {
                TensorError::Truncated(format!(
                    "header declares {header_len} bytes but only {} follow the prefix",
                    bytes.len() - 8
                ))
            })?;
        let header = std::str::from_utf8(&bytes[8..header_end])
            .map_err(|e| TensorError::MalformedHeader(format!("header is not UTF-8: {e}")))?;
        let json: Value = serde_json::from_str(header)
            .map_err(|e| TensorError::MalformedHeader(e.to_string()))?;
        let obj = json
            .as_object()
            .ok_or_else(|| TensorError::MalformedHeader("header is not a JSON object".into()))?;

        let payload = bytes[header_end..].to_vec();
        let mut entries = BTreeMap::new();
        let mut metadata = BTreeMap::new();
        for (name, value) in obj {
            if name == METADATA_KEY {
                metadata = parse_metadata(value)?;
                continue;
            }
            let entry = parse_entry(name, value)?;
            if entry.data_offsets.1 > payload.len() {
                return Err(TensorError::OutOfBounds {
                    tensor: name.clone(),
                    end: entry.data_offsets.1,
                    payload: payload.len(),
                });
            }
            entries.insert(name.clone(), entry);
        }

        // Overlap check over entries sorted by start offset.
        let mut spans: Vec<(&str, (usize, usize))> = entries
            .iter()
            .map(|(n, e)| (n.as_str(), e.data_offsets))
            .filter(|(_, (b, e))| e > b)
            .collect();
        spans.sort_by_key(|&(n, (b, e))| (b, e, n));
        for w in spans.windows(2) {
            if w[1].1 .0 < w[0].1 .1 {
                return Err(TensorError::Overlap {
                    first: w[0].0.to_string(),
                    second: w[1].0.to_string(),
                });
            }
        }

        Ok(TensorFile {
            entries,
            metadata,
            payload,
        })
    }

    /// Serializes with entries laid out in name order and the header padded
    /// with spaces to an 8-byte boundary.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = Map::new();
        if !self.metadata.is_empty() {
            let meta: Map<String, Value> = self
                .metadata
                .iter()
                .map(|(k, v)| (k.clone(), Value::String(v.clone())))
                .collect();
            header.insert(METADATA_KEY.to_string(), Value::Object(meta));
        }
        let mut payload = Vec::with_capacity(self.payload.len());
        for (name, e) in &self.entries {
            let begin = payload.len();
            payload.extend_from_slice(&self.payload[e.data_offsets.0..e.data_offsets.1]);
            let mut t = Map::new();
            t.insert("dtype".into(), Value::String(e.dtype.as_str().into()));
            t.insert(
                "shape".into(),
                Value::Array(e.shape.iter().map(|&d| Value::from(d as u64)).collect()),
            );
            t.insert(
                "data_offsets".into(),
                Value::Array(vec![
                    Value::from(begin as u64),
                    Value::from(payload.len() as u64),
                ]),
            );
            header.insert(name.clone(), Value::Object(t));
        }
        let mut header = serde_json::to_vec(&Value::Object(header)).expect("header serializes");
        while !header.len().is_multiple_of(8) {
            header.push(b' ');
        }
        let mut out = Vec::with_capacity(8 + header.len() + payload.len());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        out
    }
}

fn parse_metadata(value: &Value) -> Result<BTreeMap<String, String>, TensorError> {
    let obj = value
        .as_object()
        .ok_or_else(|| TensorError::MalformedHeader(format!("{METADATA_KEY} must be an object")))?;
    obj.iter()
        .map(|(k, v)| match v {
            Value::String(s) => Ok((k.clone(), s.clone())),
            _ => Err(TensorError::MalformedHeader(format!(
                "{METADATA_KEY} value for {k:?} is not a string"
            ))),
        })
        .collect()
}

fn parse_entry(name: &str, value: &Value) -> Result<TensorEntry, TensorError> {
    let bad = |what: &str| TensorError::MalformedEntry {
        tensor: name.to_string(),
        reason: what.to_string(),
    };
    let obj = value
        .as_object()
        .ok_or_else(|| bad("entry is not an object"))?;
    let dtype_str = obj
        .get("dtype")
        .and_then(Value::as_str)
        .ok_or_else(|| bad("missing string field \"dtype\""))?;
    let dtype = DType::parse(dtype_str).ok_or_else(|| TensorError::UnknownDtype {
        tensor: name.to_string(),
        dtype: dtype_str.to_string(),
    })?;
    let shape = obj
        .get("shape")
        .and_then(Value::as_array)
        .ok_or_else(|| bad("missing array field \"shape\""))?
        .iter()
        .map(|d| d.as_u64().and_then(|d| usize::try_from(d).ok()))
        .collect::<Option<Vec<usize>>>()
        .ok_or_else(|| bad("shape entries must be non-negative integers"))?;
    if shape.contains(&0) {
        return Err(TensorError::ZeroDimension(name.to_string()));
    }
    let offsets = obj
        .get("data_offsets")
        .and_then(Value::as_array)
        .ok_or_else(|| bad("missing array field \"data_offsets\""))?;
    let offsets = offsets
        .iter()
        .map(|d| d.as_u64().and_then(|d| usize::try_from(d).ok()))
        .collect::<Option<Vec<usize>>>()
        .filter(|v| v.len() == 2)
        .ok_or_else(|| bad("data_offsets must be two non-negative integers"))?;
    let (begin, end) = (offsets[0], offsets[1]);
    if end < begin {
        return Err(bad("data_offsets end precedes begin"));
    }
    let expected = shape
        .iter()
        .try_fold(dtype.size(), |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| bad("shape overflows"))?;
    if expected != end - begin {
        return Err(TensorError::SizeMismatch {
            tensor: name.to_string(),
            expected,
            actual: end - begin,
        });
    }
    Ok(TensorEntry {
        dtype,
        shape,
        data_offsets: (begin, end),
    })
}

pub fn read_tensor_file(path: impl AsRef<Path>) -> Result<TensorFile, TensorError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| TensorError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    TensorFile::from_bytes(&bytes)
}

pub fn write_tensor_file(path: impl AsRef<Path>, tf: &TensorFile) -> Result<(), TensorError> {
    let path = path.as_ref();
    fs::write(path, tf.to_bytes()).map_err(|e| TensorError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw_file(header: &str, payload: &[u8]) -> Vec<u8> {
        let mut out = (header.len() as u64).to_le_bytes().to_vec();
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(payload);
        out
    }

    #[test]
    fn empty_container() {
        let tf = TensorFile::from_bytes(&raw_file("{}", &[])).unwrap();
        assert!(tf.is_empty());
        assert!(matches!(tf.entry("w"), Err(TensorError::NoTensors)));
    }

    #[test]
    fn hand_built_f32_tensor_reads_bit_exactly() {
        let a = 1.5f32;
        let b = -0.1f32;
        let mut payload = a.to_le_bytes().to_vec();
        payload.extend_from_slice(&b.to_le_bytes());
        let header = r#"{"w":{"dtype":"F32","shape":[2,1,1,1],"data_offsets":[0,8]}}"#;
        let tf = TensorFile::from_bytes(&raw_file(header, &payload)).unwrap();
        let e = tf.entry("w").unwrap();
        assert_eq!(e.shape, vec![2, 1, 1, 1]);
        let v = tf.tensor_f64("w").unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!((v[0] as f32).to_bits(), a.to_bits());
        assert_eq!((v[1] as f32).to_bits(), b.to_bits());
    }

    #[test]
    fn metadata_is_ignored() {
        let header = r#"{"__metadata__":{"format":"pt"},"w":{"dtype":"F64","shape":[1],"data_offsets":[0,8]}}"#;
        let tf = TensorFile::from_bytes(&raw_file(header, &2.0f64.to_le_bytes())).unwrap();
        assert_eq!(tf.len(), 1);
        assert_eq!(tf.metadata.get("format").map(String::as_str), Some("pt"));
    }

    #[test]
    fn size_mismatch_names_tensor() {
        let header = r#"{"w":{"dtype":"F32","shape":[2,1,1,1],"data_offsets":[0,9]}}"#;
        let err = TensorFile::from_bytes(&raw_file(header, &[0u8; 9])).unwrap_err();
        match err {
            TensorError::SizeMismatch {
                tensor,
                expected,
                actual,
            } => {
                assert_eq!(tensor, "w");
                assert_eq!((expected, actual), (8, 9));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncated_inputs() {
        assert!(matches!(
            TensorFile::from_bytes(&[1, 2, 3]),
            Err(TensorError::Truncated(_))
        ));
        let mut bytes = raw_file("{}", &[]);
        bytes[0] = 50;
        assert!(matches!(
            TensorFile::from_bytes(&bytes),
            Err(TensorError::Truncated(_))
        ));
    }

    #[test]
    fn malformed_json() {
        let err = TensorFile::from_bytes(&raw_file("{not json", &[])).unwrap_err();
        assert!(matches!(err, TensorError::MalformedHeader(_)));
    }

    #[test]
    fn unknown_dtype() {
        let header = r#"{"q":{"dtype":"I8","shape":[1],"data_offsets":[0,1]}}"#;
        let err = TensorFile::from_bytes(&raw_file(header, &[0])).unwrap_err();
        assert!(matches!(err, TensorError::UnknownDtype { ref tensor, .. } if tensor == "q"));
    }

    #[test]
    fn out_of_bounds_offsets() {
        let header = r#"{"w":{"dtype":"F32","shape":[2],"data_offsets":[4,12]}}"#;
        let err = TensorFile::from_bytes(&raw_file(header, &[0u8; 8])).unwrap_err();
        assert!(matches!(err, TensorError::OutOfBounds { ref tensor, .. } if tensor == "w"));
    }

    #[test]
    fn overlapping_offsets() {
        let header = r#"{"a":{"dtype":"F32","shape":[2],"data_offsets":[0,8]},"b":{"dtype":"F32","shape":[1],"data_offsets":[4,8]}}"#;
        let err = TensorFile::from_bytes(&raw_file(header, &[0u8; 8])).unwrap_err();
        assert!(matches!(err, TensorError::Overlap { .. }));
    }

    #[test]
    fn zero_dim_rejected() {
        let header = r#"{"w":{"dtype":"F32","shape":[0,3],"data_offsets":[0,0]}}"#;
        let err = TensorFile::from_bytes(&raw_file(header, &[])).unwrap_err();
        assert!(matches!(err, TensorError::ZeroDimension(_)));
    }

    #[test]
    fn header_prefix_matches_header_length() {
        let mut tf = TensorFile::new();
        tf.push_f64("x", DType::F32, &[3], &[1.0, 2.0, 3.0])
            .unwrap();
        let bytes = tf.to_bytes();
        let h = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        assert_eq!(h % 8, 0);
        assert_eq!(bytes.len(), 8 + h + 12);
        assert_eq!(TensorFile::from_bytes(&bytes).unwrap(), tf);
    }
}
