//! Little-endian binary encoding shared by the dataset, ground-truth and
//! model archives. Every archive ends with a SHA-256 digest of the bytes
//! that precede it.

use byteorder::{ByteOrder, LittleEndian};
use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};

use crate::error::{DpxError, Result};

pub(crate) const DIGEST_LEN: usize = 32;

#[derive(Default)]
pub(crate) struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new(magic: &[u8]) -> Self {
        let mut enc = Self::default();
        enc.buf.extend_from_slice(magic);
        enc
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        let mut b = [0u8; 4];
        LittleEndian::write_u32(&mut b, v);
        self.buf.extend_from_slice(&b);
    }

    pub fn u64(&mut self, v: u64) {
        let mut b = [0u8; 8];
        LittleEndian::write_u64(&mut b, v);
        self.buf.extend_from_slice(&b);
    }

    pub fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }

    pub fn f64(&mut self, v: f64) {
        let mut b = [0u8; 8];
        LittleEndian::write_f64(&mut b, v);
        self.buf.extend_from_slice(&b);
    }

    pub fn bytes(&mut self, v: &[u8]) {
        self.buf.extend_from_slice(v);
    }

    pub fn f64s(&mut self, v: &[f64]) {
        for &x in v {
            self.f64(x);
        }
    }

    pub fn vector(&mut self, v: &DVector<f64>) {
        self.f64s(v.as_slice());
    }

    /// Row-major.
    pub fn matrix(&mut self, m: &DMatrix<f64>) {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                self.f64(m[(i, j)]);
            }
        }
    }

    /// Appends the digest trailer and returns the archive bytes.
    pub fn finish(mut self) -> Vec<u8> {
        let digest = Sha256::digest(&self.buf);
        self.buf.extend_from_slice(&digest);
        self.buf
    }
}

pub(crate) struct Decoder<'a> {
    body: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    /// Checks magic and trailer digest, then positions after the magic.
    pub fn open(bytes: &'a [u8], magic: &[u8]) -> Result<Self> {
        if bytes.len() < magic.len() + DIGEST_LEN || &bytes[..magic.len()] != magic {
            return Err(DpxError::Format(format!(
                "bad magic header, expected {:?}",
                String::from_utf8_lossy(magic)
            )));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - DIGEST_LEN);
        let digest = Sha256::digest(body);
        if digest.as_slice() != trailer {
            return Err(DpxError::Format("checksum mismatch (corrupted archive)".into()));
        }
        Ok(Self {
            body,
            pos: magic.len(),
        })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.body.len() {
            return Err(DpxError::Format("unexpected end of archive".into()));
        }
        let s = &self.body[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(LittleEndian::read_u32(self.take(4)?))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(LittleEndian::read_u64(self.take(8)?))
    }

    pub fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| DpxError::Format(format!("count {v} overflows usize")))
    }

    /// A count that must not exceed `limit`, guarding allocations against garbage headers.
    pub fn bounded(&mut self, limit: usize, what: &str) -> Result<usize> {
        let v = self.usize()?;
        if v > limit {
            return Err(DpxError::Format(format!("{what} = {v} exceeds limit {limit}")));
        }
        Ok(v)
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(LittleEndian::read_f64(self.take(8)?))
    }

    pub fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        self.take(n)
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| DpxError::Format("length overflow".into()))?)?;
        Ok(raw.chunks_exact(8).map(LittleEndian::read_f64).collect())
    }

    pub fn vector(&mut self, n: usize) -> Result<DVector<f64>> {
        Ok(DVector::from_vec(self.f64s(n)?))
    }

    pub fn matrix(&mut self, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let data = self.f64s(rows * cols)?;
        Ok(DMatrix::from_row_slice(rows, cols, &data))
    }

    pub fn finish(self) -> Result<()> {
        if self.pos != self.body.len() {
            return Err(DpxError::Format(format!(
                "{} trailing bytes in archive",
                self.body.len() - self.pos
            )));
        }
        Ok(())
    }
}

/// Hex SHA-256 of an archive's body (equal to its stored trailer).
pub(crate) fn archive_hash(bytes: &[u8]) -> String {
    let trailer = &bytes[bytes.len().saturating_sub(DIGEST_LEN)..];
    hex::encode(trailer)
}
