//! Little-endian binary encoding shared by the model and matrix files.
//!
//! Every file starts with an 8-byte magic string; integers are `u64`,
//! floats are `f64`, strings are a `u64` byte length followed by UTF-8.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub(crate) struct BinWriter<W: Write> {
    inner: W,
}

impl<W: Write> BinWriter<W> {
    pub fn new(inner: W, magic: &[u8; 8]) -> Result<Self> {
        let mut w = BinWriter { inner };
        w.bytes(magic)?;
        Ok(w)
    }

    fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.inner
            .write_all(b)
            .map_err(|e| Error::io("writing binary file", e))
    }

    pub fn u64(&mut self, v: u64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn usize(&mut self, v: usize) -> Result<()> {
        self.u64(v as u64)
    }

    pub fn f64(&mut self, v: f64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn f64s(&mut self, vs: &[f64]) -> Result<()> {
        let mut buf = Vec::with_capacity(vs.len() * 8);
        for v in vs {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        self.bytes(&buf)
    }

    pub fn str(&mut self, s: &str) -> Result<()> {
        self.usize(s.len())?;
        self.bytes(s.as_bytes())
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner
            .flush()
            .map_err(|e| Error::io("writing binary file", e))?;
        Ok(self.inner)
    }
}

pub(crate) struct BinReader<R: Read> {
    inner: R,
}

impl<R: Read> BinReader<R> {
    pub fn new(inner: R, magic: &[u8; 8]) -> Result<Self> {
        let mut r = BinReader { inner };
        let mut found = [0u8; 8];
        r.fill(&mut found)?;
        if &found != magic {
            return Err(Error::Format(format!(
                "bad magic: expected {:?}, found {:?}",
                String::from_utf8_lossy(magic),
                String::from_utf8_lossy(&found)
            )));
        }
        Ok(r)
    }

    fn fill(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner
            .read_exact(buf)
            .map_err(|e| Error::Format(format!("truncated binary file: {e}")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.fill(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    pub fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::Format(format!("size {v} out of range")))
    }

    pub fn f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.fill(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let mut buf = vec![
            0u8;
            n.checked_mul(8)
                .ok_or_else(|| Error::Format("size overflow".into()))?
        ];
        self.fill(&mut buf)?;
        Ok(buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.usize()?;
        let mut buf = vec![0u8; n];
        self.fill(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Format(format!("invalid utf-8: {e}")))
    }
}

pub(crate) fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| Error::io(path.display().to_string(), e))
}

pub(crate) fn open(path: &Path) -> Result<std::io::BufReader<std::fs::File>> {
    std::fs::File::open(path)
        .map(std::io::BufReader::new)
        .map_err(|e| Error::io(path.display().to_string(), e))
}
