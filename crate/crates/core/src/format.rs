//! Little-endian framing shared by the `WTAP`, `WTAW`, `WTAF` and `WTAL` files.
//!
//! Every file starts with a four-byte magic and a `u32` version, followed by
//! a fixed header and a flat payload. Readers reject truncation and trailing
//! bytes so that a successful load is always a bit-exact inverse of a save.

use std::io::{ErrorKind, Read, Write};

use crate::error::{Error, Result};

pub(crate) const VERSION: u32 = 1;

pub(crate) struct LeWriter<W: Write> {
    inner: W,
}

impl<W: Write> LeWriter<W> {
    pub fn new(inner: W) -> Self {
        Self { inner }
    }

    pub fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        self.inner.write_all(magic)?;
        self.u32(VERSION)
    }

    pub fn u32(&mut self, v: u32) -> Result<()> {
        self.inner.write_all(&v.to_le_bytes())?;
        Ok(())
    }

    pub fn u64(&mut self, v: u64) -> Result<()> {
        self.inner.write_all(&v.to_le_bytes())?;
        Ok(())
    }

    pub fn u32_slice(&mut self, vs: &[u32]) -> Result<()> {
        let mut buf = Vec::with_capacity(vs.len() * 4);
        for v in vs {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        self.inner.write_all(&buf)?;
        Ok(())
    }

    pub fn f32_slice(&mut self, vs: &[f32]) -> Result<()> {
        let mut buf = Vec::with_capacity(vs.len() * 4);
        for v in vs {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        self.inner.write_all(&buf)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

pub(crate) struct LeReader<R: Read> {
    inner: R,
    what: &'static str,
}

impl<R: Read> LeReader<R> {
    pub fn new(inner: R, what: &'static str) -> Self {
        Self { inner, what }
    }

    fn fill(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner.read_exact(buf).map_err(|e| match e.kind() {
            ErrorKind::UnexpectedEof => Error::Truncated(self.what),
            _ => Error::Io(e),
        })
    }

    pub fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        let mut found = [0u8; 4];
        self.fill(&mut found)?;
        if &found != magic {
            return Err(Error::BadMagic {
                expected: *magic,
                found,
            });
        }
        let version = self.u32()?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion {
                expected: VERSION,
                found: version,
            });
        }
        Ok(())
    }

    pub fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.fill(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    pub fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.fill(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    /// Reads `n` 4-byte words. Large counts are read in chunks so that a
    /// corrupt header cannot trigger one huge allocation up front.
    fn words(&mut self, n: usize) -> Result<Vec<[u8; 4]>> {
        const CHUNK: usize = 1 << 16;
        let mut out = Vec::with_capacity(n.min(CHUNK));
        let mut buf = vec![0u8; CHUNK.min(n) * 4];
        let mut left = n;
        while left > 0 {
            let take = left.min(CHUNK);
            let bytes = &mut buf[..take * 4];
            self.fill(bytes)?;
            out.extend(bytes.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]));
            left -= take;
        }
        Ok(out)
    }

    pub fn u32_vec(&mut self, n: usize) -> Result<Vec<u32>> {
        Ok(self.words(n)?.into_iter().map(u32::from_le_bytes).collect())
    }

    pub fn f32_vec(&mut self, n: usize) -> Result<Vec<f32>> {
        Ok(self.words(n)?.into_iter().map(f32::from_le_bytes).collect())
    }

    pub fn expect_end(&mut self) -> Result<()> {
        let mut b = [0u8; 1];
        loop {
            match self.inner.read(&mut b) {
                Ok(0) => return Ok(()),
                Ok(_) => return Err(Error::TrailingData),
                Err(e) if e.kind() == ErrorKind::Interrupted => continue,
                Err(e) => return Err(Error::Io(e)),
            }
        }
    }
}

pub(crate) fn to_usize(v: u64, what: &'static str) -> Result<usize> {
    usize::try_from(v).map_err(|_| Error::Config(format!("{what} {v} does not fit in memory")))
}
