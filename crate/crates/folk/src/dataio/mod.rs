//! On-disk containers: a directory holding `manifest.json` and one raw
//! little-endian `.bin` file per array. See `FORMAT.md` for the layout.

mod adapter;
mod consensus;
mod scene;

pub use adapter::{adapter_from_container, adapter_to_container, read_adapter, write_adapter};
pub use consensus::{
    consensus_from_container, consensus_to_container, read_consensus, write_consensus,
    ConsensusInstance, SceneConsensus, ViewDiagnostic,
};
pub use scene::{read_scene, scene_from_container, scene_to_container, write_scene};

use folk_core::CoreError;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

pub const FORMAT_NAME: &str = "folk-container";
pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad manifest: {reason}")]
    Manifest { path: PathBuf, reason: String },
    #[error("missing array {0}")]
    MissingArray(String),
    #[error("array {name}: payload has {actual} bytes, manifest implies {expected}")]
    ByteLength {
        name: String,
        expected: u64,
        actual: u64,
    },
    #[error("array {name}: expected {expected}, found {actual}")]
    Layout {
        name: String,
        expected: String,
        actual: String,
    },
    #[error("{name}: {reason}")]
    Invalid { name: String, reason: String },
    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: CoreError,
    },
}

pub type Result<T> = std::result::Result<T, DataError>;

pub(crate) fn invalid(name: impl Into<String>, reason: impl Into<String>) -> DataError {
    DataError::Invalid {
        name: name.into(),
        reason: reason.into(),
    }
}

pub(crate) fn core_err(context: impl Into<String>) -> impl FnOnce(CoreError) -> DataError {
    let context = context.into();
    move |source| DataError::Core { context, source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
    U8,
    I32,
    U32,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::U8 => 1,
            Dtype::F32 | Dtype::I32 | Dtype::U32 => 4,
            Dtype::F64 => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
            Dtype::U8 => "u8",
            Dtype::I32 => "i32",
            Dtype::U32 => "u32",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
    I32(Vec<i32>),
    U32(Vec<u32>),
}

impl ArrayData {
    pub fn dtype(&self) -> Dtype {
        match self {
            ArrayData::F32(_) => Dtype::F32,
            ArrayData::F64(_) => Dtype::F64,
            ArrayData::U8(_) => Dtype::U8,
            ArrayData::I32(_) => Dtype::I32,
            ArrayData::U32(_) => Dtype::U32,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ArrayData::F32(v) => v.len(),
            ArrayData::F64(v) => v.len(),
            ArrayData::U8(v) => v.len(),
            ArrayData::I32(v) => v.len(),
            ArrayData::U32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn to_le_bytes(&self) -> Vec<u8> {
        fn pack<T: Copy, const N: usize>(v: &[T], f: impl Fn(T) -> [u8; N]) -> Vec<u8> {
            v.iter().flat_map(|&x| f(x)).collect()
        }
        match self {
            ArrayData::F32(v) => pack(v, f32::to_le_bytes),
            ArrayData::F64(v) => pack(v, f64::to_le_bytes),
            ArrayData::U8(v) => v.clone(),
            ArrayData::I32(v) => pack(v, i32::to_le_bytes),
            ArrayData::U32(v) => pack(v, u32::to_le_bytes),
        }
    }

    fn from_le_bytes(dtype: Dtype, bytes: &[u8]) -> Self {
        fn unpack<T, const N: usize>(b: &[u8], f: impl Fn([u8; N]) -> T) -> Vec<T> {
            b.chunks_exact(N)
                .map(|c| f(c.try_into().expect("chunk size")))
                .collect()
        }
        match dtype {
            Dtype::F32 => ArrayData::F32(unpack(bytes, f32::from_le_bytes)),
            Dtype::F64 => ArrayData::F64(unpack(bytes, f64::from_le_bytes)),
            Dtype::U8 => ArrayData::U8(bytes.to_vec()),
            Dtype::I32 => ArrayData::I32(unpack(bytes, i32::from_le_bytes)),
            Dtype::U32 => ArrayData::U32(unpack(bytes, u32::from_le_bytes)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

impl Array {
    pub fn new(shape: Vec<usize>, data: ArrayData) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }
}

/// One manifest row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub file: String,
    /// Byte offset of the first element within `file`.
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub kind: String,
    pub endianness: String,
    pub meta: Value,
    pub arrays: Vec<ArrayEntry>,
}

/// In-memory container: a kind tag, free-form metadata and named arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub meta: Value,
    pub arrays: BTreeMap<String, Array>,
}

impl Container {
    pub fn new(kind: &str, meta: Value) -> Self {
        Self {
            kind: kind.to_string(),
            meta,
            arrays: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, data: ArrayData) {
        self.arrays.insert(name.into(), Array::new(shape, data));
    }

    pub fn contains(&self, name: &str) -> bool {
        self.arrays.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Array> {
        self.arrays
            .get(name)
            .ok_or_else(|| DataError::MissingArray(name.to_string()))
    }

    fn check_shape(name: &str, a: &Array, shape: &[Option<usize>]) -> Result<()> {
        let ok = a.shape.len() == shape.len()
            && a.shape.iter().zip(shape).all(|(&s, e)| e.map_or(true, |e| s == e));
        if ok {
            Ok(())
        } else {
            let show = |d: &Option<usize>| d.map_or("*".to_string(), |v| v.to_string());
            Err(DataError::Layout {
                name: name.to_string(),
                expected: format!("shape [{}]", shape.iter().map(show).collect::<Vec<_>>().join(", ")),
                actual: format!("shape {:?}", a.shape),
            })
        }
    }

    fn wrong_dtype(name: &str, expected: Dtype, a: &Array) -> DataError {
        DataError::Layout {
            name: name.to_string(),
            expected: format!("dtype {}", expected.name()),
            actual: format!("dtype {}", a.data.dtype().name()),
        }
    }

    /// Values of an array of the given dtype and shape (`None` = any extent).
    pub fn f64s(&self, name: &str, shape: &[Option<usize>]) -> Result<(&[usize], &[f64])> {
        let a = self.get(name)?;
        Self::check_shape(name, a, shape)?;
        match &a.data {
            ArrayData::F64(v) => Ok((&a.shape, v)),
            _ => Err(Self::wrong_dtype(name, Dtype::F64, a)),
        }
    }

    pub fn f32s(&self, name: &str, shape: &[Option<usize>]) -> Result<(&[usize], &[f32])> {
        let a = self.get(name)?;
        Self::check_shape(name, a, shape)?;
        match &a.data {
            ArrayData::F32(v) => Ok((&a.shape, v)),
            _ => Err(Self::wrong_dtype(name, Dtype::F32, a)),
        }
    }

    pub fn u8s(&self, name: &str, shape: &[Option<usize>]) -> Result<(&[usize], &[u8])> {
        let a = self.get(name)?;
        Self::check_shape(name, a, shape)?;
        match &a.data {
            ArrayData::U8(v) => Ok((&a.shape, v)),
            _ => Err(Self::wrong_dtype(name, Dtype::U8, a)),
        }
    }

    pub fn i32s(&self, name: &str, shape: &[Option<usize>]) -> Result<(&[usize], &[i32])> {
        let a = self.get(name)?;
        Self::check_shape(name, a, shape)?;
        match &a.data {
            ArrayData::I32(v) => Ok((&a.shape, v)),
            _ => Err(Self::wrong_dtype(name, Dtype::I32, a)),
        }
    }

    pub fn u32s(&self, name: &str, shape: &[Option<usize>]) -> Result<(&[usize], &[u32])> {
        let a = self.get(name)?;
        Self::check_shape(name, a, shape)?;
        match &a.data {
            ArrayData::U32(v) => Ok((&a.shape, v)),
            _ => Err(Self::wrong_dtype(name, Dtype::U32, a)),
        }
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            format: FORMAT_NAME.to_string(),
            version: FORMAT_VERSION,
            kind: self.kind.clone(),
            endianness: "little".to_string(),
            meta: self.meta.clone(),
            arrays: self
                .arrays
                .iter()
                .map(|(name, a)| ArrayEntry {
                    name: name.clone(),
                    dtype: a.data.dtype(),
                    shape: a.shape.clone(),
                    file: format!("{name}.bin"),
                    offset: 0,
                })
                .collect(),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `c` into directory `dir`, creating it if needed.
pub fn write_container(c: &Container, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let manifest = c.manifest();
    for (entry, a) in manifest.arrays.iter().zip(c.arrays.values()) {
        let path = dir.join(&entry.file);
        fs::write(&path, a.data.to_le_bytes()).map_err(io_err(&path))?;
    }
    let path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(&path, text).map_err(io_err(&path))
}

/// Reads the manifest of the container in `dir`.
pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let bad = |reason: String| DataError::Manifest {
        path: path.clone(),
        reason,
    };
    let m: Manifest = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    if m.format != FORMAT_NAME {
        return Err(bad(format!("format {:?}, expected {FORMAT_NAME:?}", m.format)));
    }
    if m.version != FORMAT_VERSION {
        return Err(bad(format!("unsupported version {}", m.version)));
    }
    if m.endianness != "little" {
        return Err(bad(format!("unsupported endianness {:?}", m.endianness)));
    }
    Ok(m)
}

/// Reads a container, checking every payload's byte length against its
/// manifest entry.
pub fn read_container(dir: &Path) -> Result<Container> {
    let m = read_manifest(dir)?;
    let mut arrays = BTreeMap::new();
    for e in &m.arrays {
        if e.file.contains(['/', '\\']) || e.file.starts_with('.') {
            return Err(invalid(&e.name, format!("payload file {:?} is not a plain file name", e.file)));
        }
        let path = dir.join(&e.file);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        let count = e
            .shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| invalid(&e.name, "shape overflows"))?;
        let expected = e.offset + (count * e.dtype.size()) as u64;
        if bytes.len() as u64 != expected {
            return Err(DataError::ByteLength {
                name: e.name.clone(),
                expected,
                actual: bytes.len() as u64,
            });
        }
        let data = ArrayData::from_le_bytes(e.dtype, &bytes[e.offset as usize..]);
        if arrays
            .insert(e.name.clone(), Array::new(e.shape.clone(), data))
            .is_some()
        {
            return Err(invalid(&e.name, "listed twice in manifest"));
        }
    }
    Ok(Container {
        kind: m.kind,
        meta: m.meta,
        arrays,
    })
}

/// Reads a container and checks its kind.
pub fn read_container_of_kind(dir: &Path, kind: &str) -> Result<Container> {
    let c = read_container(dir)?;
    if c.kind != kind {
        return Err(DataError::Manifest {
            path: dir.join(MANIFEST_FILE),
            reason: format!("kind {:?}, expected {kind:?}", c.kind),
        });
    }
    Ok(c)
}

pub(crate) fn meta_usize(meta: &Value, key: &str) -> Result<usize> {
    meta.get(key)
        .and_then(Value::as_u64)
        .map(|v| v as usize)
        .ok_or_else(|| invalid(format!("meta.{key}"), "missing or not a non-negative integer"))
}

pub(crate) fn meta_str<'a>(meta: &'a Value, key: &str) -> Result<&'a str> {
    meta.get(key)
        .and_then(Value::as_str)
        .ok_or_else(|| invalid(format!("meta.{key}"), "missing or not a string"))
}
