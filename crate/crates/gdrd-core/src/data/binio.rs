//! Little-endian cursor helpers shared by the binary store and checkpoint
//! codecs. Reads are bounds-checked against the in-memory buffer so that a
//! lying header can never trigger an out-of-range slice or a huge
//! pre-allocation.

use std::path::Path;

use super::DataError;

pub(crate) struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(buf: &'a [u8], path: &'a Path) -> Self {
        Cursor { buf, pos: 0, path }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize, section: &'static str) -> Result<&'a [u8], DataError> {
        if self.remaining() < n {
            return Err(DataError::Truncated {
                path: self.path.display().to_string(),
                section,
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn u8(&mut self, section: &'static str) -> Result<u8, DataError> {
        Ok(self.take(1, section)?[0])
    }

    pub(crate) fn u16(&mut self, section: &'static str) -> Result<u16, DataError> {
        let b = self.take(2, section)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    pub(crate) fn u32(&mut self, section: &'static str) -> Result<u32, DataError> {
        let b = self.take(4, section)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub(crate) fn f32_vec(&mut self, n: usize, section: &'static str) -> Result<Vec<f32>, DataError> {
        let bytes = self.take(n.checked_mul(4).unwrap_or(usize::MAX), section)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect())
    }

    pub(crate) fn utf8(&mut self, n: usize, section: &'static str) -> Result<String, DataError> {
        let bytes = self.take(n, section)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| DataError::BadHeader {
            path: self.path.display().to_string(),
            message: format!("{section} is not valid UTF-8"),
        })
    }

    /// Declares the read complete; any leftover bytes are an error.
    pub(crate) fn finish(&self) -> Result<(), DataError> {
        if self.remaining() != 0 {
            return Err(DataError::TrailingBytes {
                path: self.path.display().to_string(),
                extra: self.remaining(),
            });
        }
        Ok(())
    }

    pub(crate) fn bad_header(&self, message: impl Into<String>) -> DataError {
        DataError::BadHeader {
            path: self.path.display().to_string(),
            message: message.into(),
        }
    }
}

pub(crate) fn put_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_f32s(out: &mut Vec<u8>, vs: &[f32]) {
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}
