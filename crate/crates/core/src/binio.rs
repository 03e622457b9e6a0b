//! Little-endian helpers for the EMB1, FMAT1 and MLP1 binary formats.

use std::io::{self, Read, Write};

#[derive(Debug, thiserror::Error)]
pub enum BinError {
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("truncated input while reading {what}")]
    Truncated { what: &'static str },
    #[error("trailing bytes after the last record")]
    TrailingBytes,
    #[error("invalid UTF-8 in {what}")]
    Utf8 { what: &'static str },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Reads from an in-memory buffer, reporting truncation instead of panicking.
pub struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Cursor { buf, pos: 0 }
    }

    pub fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], BinError> {
        if self.buf.len() - self.pos < n {
            return Err(BinError::Truncated { what });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn expect_magic(&mut self, magic: &'static str) -> Result<(), BinError> {
        let bytes = self
            .take(magic.len(), "magic")
            .map_err(|_| BinError::BadMagic { expected: magic })?;
        if bytes != magic.as_bytes() {
            return Err(BinError::BadMagic { expected: magic });
        }
        Ok(())
    }

    pub fn u16(&mut self, what: &'static str) -> Result<u16, BinError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    pub fn u32(&mut self, what: &'static str) -> Result<u32, BinError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub fn f32(&mut self, what: &'static str) -> Result<f32, BinError> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub fn f64(&mut self, what: &'static str) -> Result<f64, BinError> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    /// A u16 length followed by that many UTF-8 bytes.
    pub fn short_str(&mut self, what: &'static str) -> Result<String, BinError> {
        let len = self.u16(what)? as usize;
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| BinError::Utf8 { what })
    }

    pub fn finish(&self) -> Result<(), BinError> {
        if self.pos != self.buf.len() {
            return Err(BinError::TrailingBytes);
        }
        Ok(())
    }
}

pub fn read_all<R: Read>(mut reader: R) -> io::Result<Vec<u8>> {
    let mut buf = Vec::new();
    reader.read_to_end(&mut buf)?;
    Ok(buf)
}

pub fn write_short_str<W: Write>(w: &mut W, s: &str) -> io::Result<()> {
    let len = u16::try_from(s.len()).map_err(|_| {
        io::Error::new(io::ErrorKind::InvalidInput, "string longer than 65535 bytes")
    })?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(s.as_bytes())
}

pub fn write_u32<W: Write>(w: &mut W, v: usize) -> io::Result<()> {
    let v = u32::try_from(v)
        .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "value exceeds u32"))?;
    w.write_all(&v.to_le_bytes())
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &std::path::Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}
