//! Binary checkpoint of a [`WaspCache`].
//!
//! Layout (little endian):
//!
//! ```text
//! magic     8 bytes  "WASPCKPT"
//! version   u32      1
//! kind      u8       0 = orthonormal, 1 = random full rank
//! seed      u64
//! n, m      u64, u64
//! index     u64      zero-based next direction
//! d_theta   f64
//! d_ell     f64
//! delta_x   n*n f64  row major
//! web       m*n f64  row major
//! ```
//!
//! The solve matrices are rebuilt from `delta_x` on load.

use std::path::Path;

use nalgebra::DMatrix;

use super::WaspCache;
use crate::error::{Error, Result};
use crate::tangent::{TangentKind, TangentMatrix};

const MAGIC: &[u8; 8] = b"WASPCKPT";
const VERSION: u32 = 1;

fn push_matrix(out: &mut Vec<u8>, m: &DMatrix<f64>) {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.extend_from_slice(&m[(r, c)].to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        if self.buf.len() < len {
            return Err(Error::Checkpoint("unexpected end of data".into()));
        }
        let (head, tail) = self.buf.split_at(len);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        // row-major on disk, column-major in memory
        let mut m = DMatrix::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m[(r, c)] = self.f64()?;
            }
        }
        Ok(m)
    }
}

fn dim(v: u64, what: &str) -> Result<usize> {
    usize::try_from(v)
        .ok()
        .filter(|&d| d > 0 && d <= 1 << 20)
        .ok_or_else(|| Error::Checkpoint(format!("implausible {what} = {v}")))
}

impl WaspCache {
    pub fn to_bytes(&self) -> Vec<u8> {
        let (n, m) = (self.n(), self.m());
        let mut out = Vec::with_capacity(61 + 8 * n * (n + m));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(match self.delta_x.kind() {
            TangentKind::Orthonormal => 0,
            TangentKind::RandomFullRank => 1,
        });
        out.extend_from_slice(&self.delta_x.seed().to_le_bytes());
        out.extend_from_slice(&(n as u64).to_le_bytes());
        out.extend_from_slice(&(m as u64).to_le_bytes());
        out.extend_from_slice(&(self.index as u64).to_le_bytes());
        out.extend_from_slice(&self.d_theta.to_le_bytes());
        out.extend_from_slice(&self.d_ell.to_le_bytes());
        push_matrix(&mut out, self.delta_x.matrix());
        push_matrix(&mut out, &self.web);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let kind = match r.u8()? {
            0 => TangentKind::Orthonormal,
            1 => TangentKind::RandomFullRank,
            k => return Err(Error::Checkpoint(format!("unknown tangent kind {k}"))),
        };
        let seed = r.u64()?;
        let n = dim(r.u64()?, "n")?;
        let m = dim(r.u64()?, "m")?;
        let index = r.u64()? as usize;
        if index >= n {
            return Err(Error::Checkpoint(format!("index {index} out of range for n = {n}")));
        }
        let d_theta = r.f64()?;
        let d_ell = r.f64()?;
        let dx = r.matrix(n, n)?;
        let web = r.matrix(m, n)?;
        if !r.buf.is_empty() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }

        let mut cache = WaspCache::new(TangentMatrix::from_matrix(dx, kind, seed)?, m, d_theta, d_ell)?;
        cache.web = web;
        cache.index = index;
        Ok(cache)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
