//! Id-indexed matrix of global descriptors and its `GLDS` binary format.
//!
//! Layout (little-endian):
//!
//! ```text
//! "GLDS" | u32 version=1 | u32 dim | u64 count
//! count x (u16 byte length, UTF-8 id)
//! count x dim x f32, row-major in id order
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::ImageId;

const MAGIC: &[u8; 4] = b"GLDS";
const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorStore {
    dim: usize,
    ids: Vec<ImageId>,
    data: Vec<f32>,
    index: HashMap<ImageId, usize>,
}

impl DescriptorStore {
    pub fn new(dim: usize) -> Self {
        DescriptorStore {
            dim,
            ids: Vec::new(),
            data: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn from_rows<I, V>(dim: usize, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (ImageId, V)>,
        V: AsRef<[f32]>,
    {
        let mut store = DescriptorStore::new(dim);
        for (id, v) in rows {
            store.push(id, v.as_ref())?;
        }
        Ok(store)
    }

    /// Like [`from_rows`](Self::from_rows) but narrows `f64` rows to storage precision.
    pub fn from_f64_rows<I, V>(dim: usize, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (ImageId, V)>,
        V: AsRef<[f64]>,
    {
        let mut store = DescriptorStore::new(dim);
        for (id, v) in rows {
            let narrowed: Vec<f32> = v.as_ref().iter().map(|&x| x as f32).collect();
            store.push(id, &narrowed)?;
        }
        Ok(store)
    }

    pub fn push(&mut self, id: ImageId, values: &[f32]) -> Result<()> {
        if values.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "non-finite descriptor entry for {id}"
            )));
        }
        if self.index.contains_key(&id) {
            return Err(Error::DuplicateId(id));
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.data.extend_from_slice(values);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[ImageId] {
        &self.ids
    }

    pub fn id(&self, row: usize) -> &ImageId {
        &self.ids[row]
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.data[row * self.dim..(row + 1) * self.dim]
    }

    pub fn position(&self, id: &ImageId) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn get(&self, id: &ImageId) -> Option<&[f32]> {
        self.position(id).map(|r| self.row(r))
    }

    /// Lookup that reports the missing id as an error.
    pub fn require(&self, id: &ImageId) -> Result<&[f32]> {
        self.get(id).ok_or_else(|| Error::MissingId(id.clone()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ImageId, &[f32])> {
        self.ids.iter().enumerate().map(|(i, id)| (id, self.row(i)))
    }

    /// Row as `f64`, for the descriptor math.
    pub fn row_f64(&self, row: usize) -> Vec<f64> {
        self.row(row).iter().map(|&v| v as f64).collect()
    }

    /// Subset of rows `[start, end)`, preserving order.
    pub fn slice(&self, start: usize, end: usize) -> DescriptorStore {
        let end = end.min(self.len());
        let start = start.min(end);
        let ids = self.ids[start..end].to_vec();
        let index = ids
            .iter()
            .cloned()
            .enumerate()
            .map(|(i, id)| (id, i))
            .collect();
        DescriptorStore {
            dim: self.dim,
            data: self.data[start * self.dim..end * self.dim].to_vec(),
            ids,
            index,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let id_bytes: usize = self.ids.iter().map(|id| 2 + id.as_str().len()).sum();
        let mut out = Vec::with_capacity(HEADER_LEN + id_bytes + self.data.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.ids.len() as u64).to_le_bytes());
        for id in &self.ids {
            let bytes = id.as_str().as_bytes();
            out.extend_from_slice(&(bytes.len() as u16).to_le_bytes());
            out.extend_from_slice(bytes);
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = ByteReader::new(bytes, path);
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(r.error_at(0, "bad magic, expected GLDS"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.error_at(4, format!("unsupported version {version}")));
        }
        let dim = r.u32()? as usize;
        if dim == 0 {
            return Err(r.error_at(8, "dimension must be positive"));
        }
        let count = r.u64()? as usize;
        let mut ids = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let start = r.offset();
            let len = r.u16()? as usize;
            let raw = r.take(len)?;
            let text =
                std::str::from_utf8(raw).map_err(|_| r.error_at(start, "id is not valid UTF-8"))?;
            let id = ImageId::new(text).map_err(|e| r.error_at(start, e.to_string()))?;
            ids.push((start, id));
        }
        let mut store = DescriptorStore::new(dim);
        let mut row = vec![0f32; dim];
        for (start, id) in ids {
            for v in row.iter_mut() {
                *v = r.f32()?;
            }
            store
                .push(id, &row)
                .map_err(|e| r.error_at(start, e.to_string()))?;
        }
        if r.remaining() != 0 {
            return Err(r.error_at(
                r.offset(),
                format!(
                    "{} trailing bytes after payload (dim/count mismatch)",
                    r.remaining()
                ),
            ));
        }
        Ok(store)
    }
}

pub fn load_descriptor_store(path: impl AsRef<Path>) -> Result<DescriptorStore> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    DescriptorStore::from_bytes(&bytes, path)
}

pub fn save_descriptor_store(store: &DescriptorStore, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, store.to_bytes()).map_err(|e| Error::io(path, e))
}

/// Cursor over an in-memory file that reports truncation at the byte where
/// data ran out.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        ByteReader {
            bytes,
            pos: 0,
            path,
        }
    }

    pub(crate) fn offset(&self) -> usize {
        self.pos
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn error_at(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            offset: offset as u64,
            message: message.into(),
        }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(self.error_at(
                self.bytes.len(),
                format!("truncated: needed {n} bytes at offset {}", self.pos),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
