//! Dense row-major embedding tables and their on-disk format.
//!
//! Binary layout, all little-endian:
//!
//! ```text
//! magic   "CEMB"      4 bytes
//! version u32         currently 1
//! rows    u64
//! dim     u32
//! values  f32 * rows * dim, row-major
//! ```
//!
//! Several tables may be concatenated in one stream (the filter towers use
//! this for their per-layer matrices). Values are held as `f64` in memory
//! and narrowed to `f32` on write.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CEMB";
pub const VERSION: u32 = 1;

/// Standard deviation of freshly initialized embedding entries.
pub const INIT_STD: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    rows: usize,
    dim: usize,
    values: Vec<f64>,
}

impl EmbeddingTable {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self {
            rows,
            dim,
            values: vec![0.0; rows * dim],
        }
    }

    pub fn from_vec(rows: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * dim {
            return Err(Error::DimMismatch {
                expected: rows * dim,
                actual: values.len(),
            });
        }
        Ok(Self { rows, dim, values })
    }

    pub fn from_rows(dim: usize, rows: &[Vec<f64>]) -> Result<Self> {
        let mut values = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    actual: r.len(),
                });
            }
            values.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            dim,
            values,
        })
    }

    /// I.i.d. `N(0, 0.01²)` entries, reproducible per seed.
    pub fn random_normal(rows: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let values = (0..rows * dim).map(|_| normal.sample(&mut rng)).collect();
        Self { rows, dim, values }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.dim..(r + 1) * self.dim]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.values[r * self.dim..(r + 1) * self.dim]
    }

    pub fn set_row(&mut self, r: usize, v: &[f64]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                actual: v.len(),
            });
        }
        self.row_mut(r).copy_from_slice(v);
        Ok(())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on a zero chunk size
        self.values.chunks_exact(self.dim.max(1)).take(self.rows)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Round every entry through `f32`, i.e. the value it would have after
    /// a write/read cycle.
    pub fn quantize(&mut self) {
        for v in &mut self.values {
            *v = *v as f32 as f64;
        }
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.rows as u64).to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        for v in &self.values {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads one table; `Ok(None)` at a clean end of stream.
    pub fn read_from<R: Read>(r: &mut R) -> std::result::Result<Option<Self>, String> {
        let mut magic = [0u8; 4];
        match read_fully(r, &mut magic) {
            Ok(0) => return Ok(None),
            Ok(4) => {}
            Ok(_) => return Err("truncated header".into()),
            Err(e) => return Err(e.to_string()),
        }
        if &magic != MAGIC {
            return Err(format!("bad magic {magic:?}"));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4).map_err(|e| e.to_string())?;
        let version = u32::from_le_bytes(b4);
        if version != VERSION {
            return Err(format!("unsupported version {version}"));
        }
        r.read_exact(&mut b8).map_err(|e| e.to_string())?;
        let rows = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b4).map_err(|e| e.to_string())?;
        let dim = u32::from_le_bytes(b4) as usize;
        let n = rows
            .checked_mul(dim)
            .ok_or_else(|| "rows * dim overflows".to_string())?;
        let mut raw = vec![0u8; n * 4];
        r.read_exact(&mut raw)
            .map_err(|_| format!("truncated body: expected {rows}x{dim} floats"))?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Ok(Some(Self { rows, dim, values }))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_tables(path, &[self])
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut tables = load_tables(path)?;
        if tables.len() != 1 {
            return Err(Error::Format {
                path: path.to_path_buf(),
                msg: format!("expected one table, found {}", tables.len()),
            });
        }
        Ok(tables.pop().unwrap())
    }

    /// Debug export: `id<TAB>v0 v1 ...` per row.
    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for (i, row) in self.iter_rows().enumerate() {
            let vals: Vec<String> = row.iter().map(|v| format!("{}", *v as f32)).collect();
            writeln!(w, "{i}\t{}", vals.join(" ")).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn read_fully<R: Read>(r: &mut R, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut n = 0;
    while n < buf.len() {
        match r.read(&mut buf[n..])? {
            0 => break,
            k => n += k,
        }
    }
    Ok(n)
}

pub fn save_tables(path: impl AsRef<Path>, tables: &[&EmbeddingTable]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for t in tables {
        t.write_to(&mut w).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_tables(path: impl AsRef<Path>) -> Result<Vec<EmbeddingTable>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut out = Vec::new();
    loop {
        match EmbeddingTable::read_from(&mut r) {
            Ok(Some(t)) => out.push(t),
            Ok(None) => break,
            Err(msg) => {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    msg,
                })
            }
        }
    }
    Ok(out)
}
