//! Little-endian binary float containers shared by model, scorer and feature
//! files: a magic string, a few `u32`/`u8` header fields, then `f64` payload.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Default)]
pub struct BinWriter {
    buf: Vec<u8>,
}

impl BinWriter {
    pub fn new(magic: &[u8]) -> Self {
        Self { buf: magic.to_vec() }
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u32(&mut self, v: usize) -> &mut Self {
        let v = u32::try_from(v).expect("header field exceeds u32");
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn str(&mut self, s: &str) -> &mut Self {
        self.u32(s.len());
        self.buf.extend_from_slice(s.as_bytes());
        self
    }

    pub fn f64s(&mut self, values: &[f64]) -> &mut Self {
        for v in values {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
        self
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }

    pub fn write_to(self, path: &Path) -> Result<()> {
        fs::write(path, self.buf)?;
        Ok(())
    }
}

pub struct BinReader {
    buf: Vec<u8>,
    pos: usize,
    path: PathBuf,
}

impl BinReader {
    pub fn open(path: &Path, magic: &[u8]) -> Result<Self> {
        Self::from_bytes(fs::read(path)?, path, magic)
    }

    pub fn from_bytes(buf: Vec<u8>, path: &Path, magic: &[u8]) -> Result<Self> {
        let mut r = Self { buf, pos: 0, path: path.to_path_buf() };
        let found = r.take(magic.len())?;
        if found != magic {
            return Err(r.err(format!("bad magic, expected {}", String::from_utf8_lossy(magic))));
        }
        Ok(r)
    }

    pub fn err(&self, reason: impl Into<String>) -> Error {
        Error::Format { path: self.path.clone(), reason: reason.into() }
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format { path: self.path.clone(), reason: "truncated file".into() });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.u32()?;
        let b = self.take(n)?.to_vec();
        String::from_utf8(b).map_err(|_| self.err("invalid UTF-8 string"))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let b = self.take(n.checked_mul(8).ok_or_else(|| Error::Data("length overflow".into()))?)?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
            .collect())
    }

    pub fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.err("trailing bytes"));
        }
        Ok(())
    }
}

pub const FEATURE_MAGIC: &[u8] = b"ADPJ-FT1";

/// Feature blob: spectrogram-branch length, spectrum length, then both vectors.
pub fn write_feature_blob(path: &Path, spectrogram: &[f64], spectrum: &[f64]) -> Result<()> {
    let mut w = BinWriter::new(FEATURE_MAGIC);
    w.u32(spectrogram.len()).u32(spectrum.len()).f64s(spectrogram).f64s(spectrum);
    w.write_to(path)
}

pub fn read_feature_blob(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut r = BinReader::open(path, FEATURE_MAGIC)?;
    let a = r.u32()?;
    let b = r.u32()?;
    let spectrogram = r.f64s(a)?;
    let spectrum = r.f64s(b)?;
    r.finish()?;
    Ok((spectrogram, spectrum))
}
