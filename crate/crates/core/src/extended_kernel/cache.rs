//! On-disk cache of extended Gram matrices.
//!
//! File layout (little-endian):
//!
//! ```text
//! magic    8 bytes  "LOCEMGRM"
//! version  u8       1
//! n        u64
//! hash     u64      dataset content hash
//! digest   u64      digest of (radius, kernel specs)
//! entries  n(n+1)/2 f64, upper triangle row by row
//! ```

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;
use sha2::{Digest, Sha256};

use super::ExtendedSpecs;
use crate::dataset::Dataset;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"LOCEMGRM";
const VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GramCacheKey {
    pub n: u64,
    pub dataset_hash: u64,
    pub specs_digest: u64,
}

impl GramCacheKey {
    pub fn new(train: &Dataset, radius: f64, specs: &ExtendedSpecs) -> Self {
        let mut h = Sha256::new();
        h.update(radius.to_bits().to_le_bytes());
        h.update(format!("{specs:?}").as_bytes());
        let d = h.finalize();
        GramCacheKey {
            n: train.len() as u64,
            dataset_hash: train.content_hash(),
            specs_digest: u64::from_le_bytes(d[..8].try_into().expect("8 bytes")),
        }
    }

    fn file_name(&self) -> String {
        format!("gram_{:016x}_{:016x}.bin", self.dataset_hash, self.specs_digest)
    }
}

/// Directory of cached Gram matrices.
#[derive(Debug, Clone)]
pub struct GramCache {
    dir: PathBuf,
}

impl GramCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(GramCache { dir })
    }

    pub fn path_for(&self, key: &GramCacheKey) -> PathBuf {
        self.dir.join(key.file_name())
    }

    /// Returns the cached matrix, or `None` if absent or written for a
    /// different key.
    pub fn load(&self, key: &GramCacheKey) -> Result<Option<Array2<f64>>> {
        let path = self.path_for(key);
        if !path.exists() {
            return Ok(None);
        }
        let (stored, matrix) = read_gram(&path)?;
        Ok((stored == *key).then_some(matrix))
    }

    pub fn store(&self, key: &GramCacheKey, matrix: &Array2<f64>) -> Result<PathBuf> {
        let path = self.path_for(key);
        write_gram(&path, key, matrix)?;
        Ok(path)
    }
}

pub fn write_gram(path: &Path, key: &GramCacheKey, matrix: &Array2<f64>) -> Result<()> {
    let n = matrix.nrows();
    if matrix.ncols() != n || n as u64 != key.n {
        return Err(Error::format("cache key does not match matrix size"));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u8(VERSION)?;
    w.write_u64::<LittleEndian>(key.n)?;
    w.write_u64::<LittleEndian>(key.dataset_hash)?;
    w.write_u64::<LittleEndian>(key.specs_digest)?;
    for i in 0..n {
        for j in i..n {
            w.write_f64::<LittleEndian>(matrix[[i, j]])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_gram(path: &Path) -> Result<(GramCacheKey, Array2<f64>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::format("not a Gram cache file"));
    }
    let version = r.read_u8()?;
    if version != VERSION {
        return Err(Error::format(format!("unsupported Gram cache version {version}")));
    }
    let key = GramCacheKey {
        n: r.read_u64::<LittleEndian>()?,
        dataset_hash: r.read_u64::<LittleEndian>()?,
        specs_digest: r.read_u64::<LittleEndian>()?,
    };
    let n = usize::try_from(key.n).map_err(|_| Error::format("n too large"))?;
    let mut m = Array2::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            let v = r.read_f64::<LittleEndian>()?;
            m[[i, j]] = v;
            m[[j, i]] = v;
        }
    }
    Ok((key, m))
}
