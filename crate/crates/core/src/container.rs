//! Shared binary container: 4-byte magic, `u32` version, `u32` header
//! length, a UTF-8 JSON header, then a little-endian payload.

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub const VERSION: u32 = 1;

pub(crate) fn encode<H: Serialize>(magic: &[u8; 4], header: &H, payload: &[u8]) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header)?;
    let mut out = Vec::with_capacity(12 + json.len() + payload.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(payload);
    Ok(out)
}

/// Parses magic, version and header; returns the header and a reader
/// positioned at the first payload byte.
pub(crate) fn decode<'a, H: DeserializeOwned>(buf: &'a [u8], magic: &[u8; 4]) -> Result<(H, Reader<'a>)> {
    let mut r = Reader { buf, pos: 0 };
    let got = r.take(4, "magic")?;
    if got != magic {
        return Err(Error::format(
            0,
            format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(magic)
            ),
        ));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported version {version}, expected {VERSION}")));
    }
    let len = r.u32("header length")? as usize;
    let start = r.offset();
    let raw = r.take(len, "header")?;
    let header = serde_json::from_slice(raw).map_err(|e| Error::format(start, format!("invalid header JSON: {e}")))?;
    Ok((header, r))
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::format(
                self.offset(),
                format!("truncated {what}: need {n} bytes, {} left", self.remaining()),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    pub fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let b = self.take(n * 4, what)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }

    pub fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let b = self.take(n * 8, what)?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::format(
                self.offset(),
                format!("{} trailing bytes after last record", self.remaining()),
            ));
        }
        Ok(())
    }
}

pub(crate) fn put_f32s(out: &mut Vec<u8>, data: &[f64]) {
    for &v in data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub(crate) fn put_f64s(out: &mut Vec<u8>, data: &[f64]) {
    for &v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}
