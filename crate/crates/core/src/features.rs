//! Per-image local features and the `GLLF` file format.
//!
//! ```text
//! "GLLF" | u32 version=1 | u32 desc_dim | u32 n
//! n x (f32 x, f32 y, f32 scale, desc_dim x f32)
//! ```
//!
//! One file per image, named `<ImageId>.lf`.

use std::collections::HashMap;
use std::fs;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use lru::LruCache;

use crate::error::{Error, Result};
use crate::model::ImageId;
use crate::store::ByteReader;

const MAGIC: &[u8; 4] = b"GLLF";
const VERSION: u32 = 1;
pub const FEATURE_FILE_EXT: &str = "lf";

#[derive(Debug, Clone, PartialEq)]
pub struct LocalFeature {
    pub x: f32,
    pub y: f32,
    pub scale: f32,
    pub descriptor: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalFeatureSet {
    pub image: ImageId,
    pub desc_dim: usize,
    pub features: Vec<LocalFeature>,
}

impl LocalFeatureSet {
    pub fn new(image: ImageId, desc_dim: usize, features: Vec<LocalFeature>) -> Result<Self> {
        if desc_dim == 0 {
            return Err(Error::Invalid(
                "descriptor dimension must be positive".into(),
            ));
        }
        for f in &features {
            if f.descriptor.len() != desc_dim {
                return Err(Error::DimMismatch {
                    expected: desc_dim,
                    found: f.descriptor.len(),
                });
            }
            let finite = f.x.is_finite()
                && f.y.is_finite()
                && f.scale.is_finite()
                && f.descriptor.iter().all(|v| v.is_finite());
            if !finite {
                return Err(Error::Domain(format!("non-finite feature in {image}")));
            }
            if f.scale <= 0.0 {
                return Err(Error::Domain(format!(
                    "non-positive feature scale in {image}"
                )));
            }
        }
        Ok(LocalFeatureSet {
            image,
            desc_dim,
            features,
        })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Keeps at most `cap` features, largest scale first (stable on ties).
    pub fn capped(&self, cap: usize) -> LocalFeatureSet {
        if self.features.len() <= cap {
            return self.clone();
        }
        let mut order: Vec<usize> = (0..self.features.len()).collect();
        order.sort_by(|&a, &b| {
            self.features[b]
                .scale
                .total_cmp(&self.features[a].scale)
                .then(a.cmp(&b))
        });
        order.truncate(cap);
        order.sort_unstable();
        LocalFeatureSet {
            image: self.image.clone(),
            desc_dim: self.desc_dim,
            features: order
                .into_iter()
                .map(|i| self.features[i].clone())
                .collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.features.len() * (12 + 4 * self.desc_dim));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.desc_dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.features.len() as u32).to_le_bytes());
        for f in &self.features {
            out.extend_from_slice(&f.x.to_le_bytes());
            out.extend_from_slice(&f.y.to_le_bytes());
            out.extend_from_slice(&f.scale.to_le_bytes());
            for v in &f.descriptor {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(image: ImageId, bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = ByteReader::new(bytes, path);
        if r.take(4)? != MAGIC {
            return Err(r.error_at(0, "bad magic, expected GLLF"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.error_at(4, format!("unsupported version {version}")));
        }
        let desc_dim = r.u32()? as usize;
        if desc_dim == 0 {
            return Err(r.error_at(8, "descriptor dimension must be positive"));
        }
        let n = r.u32()? as usize;
        let mut features = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let start = r.offset();
            let x = r.f32()?;
            let y = r.f32()?;
            let scale = r.f32()?;
            let mut descriptor = Vec::with_capacity(desc_dim);
            for _ in 0..desc_dim {
                descriptor.push(r.f32()?);
            }
            let f = LocalFeature {
                x,
                y,
                scale,
                descriptor,
            };
            let finite = x.is_finite() && y.is_finite() && scale.is_finite() && scale > 0.0;
            if !finite || f.descriptor.iter().any(|v| !v.is_finite()) {
                return Err(r.error_at(start, "non-finite value or non-positive scale"));
            }
            features.push(f);
        }
        if r.remaining() != 0 {
            return Err(r.error_at(r.offset(), format!("{} trailing bytes", r.remaining())));
        }
        Ok(LocalFeatureSet {
            image,
            desc_dim,
            features,
        })
    }
}

pub fn feature_path(dir: &Path, id: &ImageId) -> PathBuf {
    dir.join(format!("{}.{FEATURE_FILE_EXT}", id.as_str()))
}

pub fn load_local_features(path: impl AsRef<Path>, image: ImageId) -> Result<LocalFeatureSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    LocalFeatureSet::from_bytes(image, &bytes, path)
}

pub fn save_local_features(set: &LocalFeatureSet, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let path = feature_path(dir.as_ref(), &set.image);
    fs::write(&path, set.to_bytes()).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Read-only access to per-image local features.
pub trait FeatureSource: Send + Sync {
    fn features(&self, id: &ImageId) -> Result<Arc<LocalFeatureSet>>;
}

#[derive(Debug, Default)]
pub struct InMemoryFeatures {
    sets: HashMap<ImageId, Arc<LocalFeatureSet>>,
}

impl InMemoryFeatures {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, set: LocalFeatureSet) {
        self.sets.insert(set.image.clone(), Arc::new(set));
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &LocalFeatureSet> {
        self.sets.values().map(|s| s.as_ref())
    }
}

impl FromIterator<LocalFeatureSet> for InMemoryFeatures {
    fn from_iter<T: IntoIterator<Item = LocalFeatureSet>>(iter: T) -> Self {
        let mut out = InMemoryFeatures::new();
        for set in iter {
            out.insert(set);
        }
        out
    }
}

impl FeatureSource for InMemoryFeatures {
    fn features(&self, id: &ImageId) -> Result<Arc<LocalFeatureSet>> {
        self.sets
            .get(id)
            .cloned()
            .ok_or_else(|| Error::MissingId(id.clone()))
    }
}

/// Directory of `.lf` files with an LRU cache in front.
pub struct FeatureDir {
    dir: PathBuf,
    cache: Mutex<LruCache<ImageId, Arc<LocalFeatureSet>>>,
}

impl FeatureDir {
    pub const DEFAULT_CACHE: usize = 4096;

    pub fn new(dir: impl Into<PathBuf>, cache_size: usize) -> Self {
        let cap = NonZeroUsize::new(cache_size.max(1)).unwrap();
        FeatureDir {
            dir: dir.into(),
            cache: Mutex::new(LruCache::new(cap)),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

impl FeatureSource for FeatureDir {
    fn features(&self, id: &ImageId) -> Result<Arc<LocalFeatureSet>> {
        if let Some(hit) = self.cache.lock().unwrap().get(id) {
            return Ok(hit.clone());
        }
        let path = feature_path(&self.dir, id);
        if !path.exists() {
            return Err(Error::MissingId(id.clone()));
        }
        let set = Arc::new(load_local_features(&path, id.clone())?);
        self.cache.lock().unwrap().put(id.clone(), set.clone());
        Ok(set)
    }
}
