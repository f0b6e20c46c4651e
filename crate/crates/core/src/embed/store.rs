//! In-memory embedding matrix and its `EMB1` file format:
//! magic, u32 count, u32 dim, count*dim f32 row-major, then count
//! length-prefixed (u32) UTF-8 ids. All integers little-endian.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use super::{l2_norm, EmbeddingVector};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"EMB1";

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    ids: Vec<String>,
    dim: usize,
    matrix: Vec<f32>,
    norms: Vec<f64>,
    index: HashMap<String, usize>,
}

impl EmbeddingStore {
    pub fn new(ids: Vec<String>, dim: usize, matrix: Vec<f32>) -> Result<Self> {
        if matrix.len() != ids.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: ids.len() * dim,
                actual: matrix.len(),
            });
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::InvalidStore(format!("duplicate id {id:?}")));
            }
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidStore("non-finite entry".into()));
        }
        let norms = (0..ids.len())
            .map(|r| {
                let row: Vec<f64> = matrix[r * dim..(r + 1) * dim]
                    .iter()
                    .map(|&x| f64::from(x))
                    .collect();
                l2_norm(&row)
            })
            .collect();
        Ok(EmbeddingStore {
            ids,
            dim,
            matrix,
            norms,
            index,
        })
    }

    /// Builds a store from f64 rows, rounding entries to f32.
    pub fn from_rows(ids: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut matrix = Vec::with_capacity(rows.len() * dim);
        for row in &rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: row.len(),
                });
            }
            matrix.extend(row.iter().map(|&x| x as f32));
        }
        Self::new(ids, dim, matrix)
    }

    pub fn empty(dim: usize) -> Self {
        Self::new(Vec::new(), dim, Vec::new()).expect("empty store is valid")
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, row: usize) -> &str {
        &self.ids[row]
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.matrix[row * self.dim..(row + 1) * self.dim]
    }

    pub(crate) fn row_norm(&self, row: usize) -> f64 {
        self.norms[row]
    }

    pub fn matrix(&self) -> &[f32] {
        &self.matrix
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn vector(&self, row: usize) -> EmbeddingVector {
        EmbeddingVector::new(self.row(row).iter().map(|&x| f64::from(x)).collect())
    }

    pub fn get(&self, id: &str) -> Option<EmbeddingVector> {
        self.position(id).map(|r| self.vector(r))
    }

    /// Ids present in `required` but missing from the store.
    pub fn missing<'a>(&self, required: impl IntoIterator<Item = &'a str>) -> Vec<String> {
        let have: HashSet<&str> = self.ids.iter().map(String::as_str).collect();
        required
            .into_iter()
            .filter(|id| !have.contains(id))
            .map(str::to_string)
            .collect()
    }
}

pub fn store_save(store: &EmbeddingStore, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(12 + store.matrix.len() * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&u32_len(store.len())?.to_le_bytes());
    buf.extend_from_slice(&u32_len(store.dim)?.to_le_bytes());
    for v in &store.matrix {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for id in &store.ids {
        buf.extend_from_slice(&u32_len(id.len())?.to_le_bytes());
        buf.extend_from_slice(id.as_bytes());
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

fn u32_len(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::InvalidStore(format!("length {n} exceeds u32")))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::InvalidStore(format!("truncated at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn store_load(path: impl AsRef<Path>) -> Result<EmbeddingStore> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        buf: &bytes,
        pos: 0,
    };
    if r.take(4)? != MAGIC {
        return Err(Error::InvalidStore("bad magic".into()));
    }
    let count = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let cells = count
        .checked_mul(dim)
        .ok_or_else(|| Error::InvalidStore("count*dim overflows".into()))?;
    let raw = r.take(
        cells
            .checked_mul(4)
            .ok_or_else(|| Error::InvalidStore("matrix size overflows".into()))?,
    )?;
    let matrix = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut ids = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let id = std::str::from_utf8(r.take(len)?)
            .map_err(|e| Error::InvalidStore(format!("id is not UTF-8: {e}")))?;
        ids.push(id.to_string());
    }
    if r.pos != bytes.len() {
        return Err(Error::InvalidStore(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    EmbeddingStore::new(ids, dim, matrix)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_store_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.emb");
        let s = EmbeddingStore::empty(7);
        store_save(&s, &p).unwrap();
        assert_eq!(fs::read(&p).unwrap().len(), 12);
        assert_eq!(store_load(&p).unwrap(), s);
    }

    #[test]
    fn small_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.emb");
        let s = EmbeddingStore::new(
            vec!["a".into(), "讽刺".into(), "c".into()],
            4,
            (0..12).map(|i| i as f32 * 0.5 - 2.0).collect(),
        )
        .unwrap();
        store_save(&s, &p).unwrap();
        assert_eq!(store_load(&p).unwrap(), s);
    }

    #[test]
    fn rejects_bad_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.emb");
        fs::write(&p, b"EMB2\0\0\0\0\0\0\0\0").unwrap();
        assert!(matches!(store_load(&p), Err(Error::InvalidStore(_))));
        let s = EmbeddingStore::new(vec!["a".into()], 2, vec![1.0, 2.0]).unwrap();
        store_save(&s, &p).unwrap();
        let full = fs::read(&p).unwrap();
        fs::write(&p, &full[..full.len() - 1]).unwrap();
        assert!(matches!(store_load(&p), Err(Error::InvalidStore(_))));
        assert!(EmbeddingStore::new(vec!["a".into()], 3, vec![1.0, 2.0]).is_err());
        assert!(EmbeddingStore::new(vec!["a".into(), "a".into()], 1, vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn lookup() {
        let s = EmbeddingStore::from_rows(
            vec!["x".into(), "y".into()],
            vec![vec![1.0, 0.0], vec![0.0, 3.0]],
        )
        .unwrap();
        assert_eq!(s.position("y"), Some(1));
        assert_eq!(s.get("y").unwrap().values(), &[0.0, 3.0]);
        assert_eq!(s.missing(["x", "z"]), ["z"]);
    }
}
