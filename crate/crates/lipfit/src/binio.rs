//! Little-endian binary primitives shared by the model archive and
//! checkpoint formats. Readers are strict: every length is validated
//! before allocation so truncated or hostile inputs fail with a parse
//! error instead of panicking or exhausting memory.

use crate::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

/// Upper bound on any single array we are willing to allocate while
/// decoding (elements, not bytes). Desk-scale files are far below this.
pub const MAX_ELEMENTS: u64 = 1 << 26;

pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: std::path::PathBuf,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8], path: impl AsRef<Path>) -> Self {
        Reader {
            buf,
            pos: 0,
            path: path.as_ref().to_path_buf(),
        }
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::parse(self.path.clone(), None, msg)
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.err(format!(
                "unexpected end of file: need {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn magic(&mut self, expect: &[u8; 8]) -> Result<()> {
        let got = self.take(8)?;
        if got != expect {
            return Err(self.err("bad magic bytes"));
        }
        Ok(())
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// Validated element count for an upcoming array.
    pub fn dim(&mut self, what: &str, max: u64) -> Result<usize> {
        let n = self.u32()? as u64;
        if n > max {
            return Err(self.err(format!("{what} = {n} exceeds limit {max}")));
        }
        Ok(n as usize)
    }

    pub fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        if n as u64 > MAX_ELEMENTS {
            return Err(self.err(format!("array of {n} elements exceeds decoder limit")));
        }
        let bytes = self.take(n * 8)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn u32_vec(&mut self, n: usize) -> Result<Vec<u32>> {
        if n as u64 > MAX_ELEMENTS {
            return Err(self.err(format!("array of {n} elements exceeds decoder limit")));
        }
        let bytes = self.take(n * 4)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn string(&mut self, max_len: usize) -> Result<String> {
        let n = self.u32()? as usize;
        if n > max_len {
            return Err(self.err(format!("string of {n} bytes exceeds limit {max_len}")));
        }
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| self.err("invalid utf-8 string"))
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.err(format!(
                "{} trailing bytes after the last section",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

pub struct Writer {
    pub buf: Vec<u8>,
}

impl Writer {
    pub fn new(magic: &[u8; 8]) -> Self {
        Writer {
            buf: magic.to_vec(),
        }
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64_slice(&mut self, v: &[f64]) {
        for x in v {
            self.f64(*x);
        }
    }

    pub fn u32_slice(&mut self, v: &[u32]) {
        for x in v {
            self.u32(*x);
        }
    }

    pub fn string(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }

    pub fn write_to(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.buf)?;
        Ok(())
    }
}

pub fn read_file(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    std::fs::File::open(path.as_ref())?.read_to_end(&mut buf)?;
    Ok(buf)
}
