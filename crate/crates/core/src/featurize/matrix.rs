use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use super::FeatureError;
use crate::binio::{self, Cursor};

const FMAT_MAGIC: &str = "FMAT1";

/// Dense row-major features; row `i` belongs to `ids[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    ids: Vec<String>,
    data: Vec<f64>,
    n_cols: usize,
}

impl FeatureMatrix {
    pub fn new(ids: Vec<String>, data: Vec<f64>, n_cols: usize) -> Result<Self, FeatureError> {
        if data.len() != ids.len() * n_cols {
            return Err(FeatureError::DimMismatch {
                expected: ids.len() * n_cols,
                got: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(FeatureError::NonFinite { row: pos / n_cols, col: pos % n_cols });
        }
        Ok(FeatureMatrix { ids, data, n_cols })
    }

    pub fn from_rows(ids: Vec<String>, rows: &[Vec<f64>]) -> Result<Self, FeatureError> {
        let n_cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != n_cols) {
            return Err(FeatureError::DimMismatch { expected: n_cols, got: bad.len() });
        }
        if ids.len() != rows.len() {
            return Err(FeatureError::LengthMismatch { rows: ids.len(), texts: rows.len() });
        }
        FeatureMatrix::new(ids, rows.concat(), n_cols)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn n_rows(&self) -> usize {
        self.ids.len()
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.n_rows()).map(move |i| self.row(i))
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.n_cols + col]
    }

    /// Rows reordered to `ids`.
    pub fn select(&self, ids: &[String]) -> Result<FeatureMatrix, FeatureError> {
        let index: HashMap<&str, usize> =
            self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let mut data = Vec::with_capacity(ids.len() * self.n_cols);
        for id in ids {
            let &i = index.get(id.as_str()).ok_or_else(|| FeatureError::MissingId(id.clone()))?;
            data.extend_from_slice(self.row(i));
        }
        Ok(FeatureMatrix { ids: ids.to_vec(), data, n_cols: self.n_cols })
    }

    /// Columns `[start, start + len)` as a new matrix.
    pub fn column_block(&self, start: usize, len: usize) -> FeatureMatrix {
        assert!(start + len <= self.n_cols, "column block out of range");
        let mut data = Vec::with_capacity(self.n_rows() * len);
        for row in self.rows() {
            data.extend_from_slice(&row[start..start + len]);
        }
        FeatureMatrix { ids: self.ids.clone(), data, n_cols: len }
    }

    pub(crate) fn map_values(&self, mut f: impl FnMut(usize, f64) -> f64) -> FeatureMatrix {
        let n_cols = self.n_cols;
        let data = self
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| f(i % n_cols.max(1), v))
            .collect();
        FeatureMatrix { ids: self.ids.clone(), data, n_cols }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(13 + self.data.len() * 8);
        buf.extend_from_slice(FMAT_MAGIC.as_bytes());
        binio::write_u32(&mut buf, self.n_rows()).expect("row count fits u32");
        binio::write_u32(&mut buf, self.n_cols).expect("column count fits u32");
        for id in &self.ids {
            binio::write_short_str(&mut buf, id).expect("id fits u16 length");
        }
        for v in &self.data {
            buf.write_all(&v.to_le_bytes()).unwrap();
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<FeatureMatrix, FeatureError> {
        let mut cur = Cursor::new(bytes);
        cur.expect_magic(FMAT_MAGIC)?;
        let rows = cur.u32("row count")? as usize;
        let cols = cur.u32("column count")? as usize;
        let ids = (0..rows).map(|_| cur.short_str("id")).collect::<Result<Vec<_>, _>>()?;
        let mut data = Vec::with_capacity(rows.saturating_mul(cols).min(bytes.len() / 8));
        for _ in 0..rows * cols {
            data.push(cur.f64("value")?);
        }
        cur.finish()?;
        FeatureMatrix::new(ids, data, cols)
    }
}

/// FMAT1: magic, u32 rows, u32 cols, ids (u16 length + UTF-8), f64 LE values.
pub fn write_fmat(path: &Path, m: &FeatureMatrix) -> Result<(), FeatureError> {
    binio::write_atomic(path, &m.to_bytes())
        .map_err(|source| FeatureError::Io { path: path.display().to_string(), source })
}

pub fn read_fmat(path: &Path) -> Result<FeatureMatrix, FeatureError> {
    let bytes = std::fs::read(path)
        .map_err(|source| FeatureError::Io { path: path.display().to_string(), source })?;
    FeatureMatrix::from_bytes(&bytes)
}
