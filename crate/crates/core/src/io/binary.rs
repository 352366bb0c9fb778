//! Byte-offset-aware reading helpers.

use std::io::Read;

use crate::error::{Error, Result};

pub(crate) struct OffsetReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> OffsetReader<R> {
    pub(crate) fn new(inner: R) -> Self {
        OffsetReader { inner, offset: 0 }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.offset
    }

    pub(crate) fn error<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Format {
            offset: self.offset,
            message: message.into(),
        })
    }

    /// Fills `buf` completely or reports truncation at the current offset.
    pub(crate) fn read_exact(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        let mut filled = 0;
        while filled < buf.len() {
            match self.inner.read(&mut buf[filled..]) {
                Ok(0) => {
                    self.offset += filled as u64;
                    return self.error(format!(
                        "truncated {what}: expected {} more bytes",
                        buf.len() - filled
                    ));
                }
                Ok(n) => filled += n,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        self.offset += buf.len() as u64;
        Ok(())
    }

    pub(crate) fn u8(&mut self, what: &str) -> Result<u8> {
        let mut b = [0u8; 1];
        self.read_exact(&mut b, what)?;
        Ok(b[0])
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.read_exact(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    pub(crate) fn bytes(&mut self, len: usize, what: &str) -> Result<Vec<u8>> {
        // Read in bounded chunks so a corrupt length cannot force a huge allocation.
        const CHUNK: usize = 1 << 20;
        let mut out = Vec::with_capacity(len.min(CHUNK));
        let mut remaining = len;
        while remaining > 0 {
            let n = remaining.min(CHUNK);
            let start = out.len();
            out.resize(start + n, 0);
            self.read_exact(&mut out[start..], what)?;
            remaining -= n;
        }
        Ok(out)
    }

    /// True when no bytes remain.
    pub(crate) fn at_end(&mut self) -> Result<bool> {
        let mut b = [0u8; 1];
        loop {
            match self.inner.read(&mut b) {
                Ok(0) => return Ok(true),
                Ok(_) => return Ok(false),
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
    }
}
