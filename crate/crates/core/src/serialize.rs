//! Little-endian binary primitives shared by the corpus, truth and model
//! file formats. Every format starts with its version string as a
//! length-prefixed magic so readers can fail fast on the wrong file kind.

use std::io::{Read, Write};

use crate::error::{Error, Result};

/// FNV-1a 64-bit. Used to fingerprint vocabularies inside model files.
pub(crate) struct Fnv1a(u64);

impl Fnv1a {
    pub(crate) fn new() -> Self {
        Fnv1a(0xcbf2_9ce4_8422_2325)
    }

    pub(crate) fn update(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub(crate) fn finish(&self) -> u64 {
        self.0
    }
}

pub(crate) struct ByteWriter<'a, W: Write> {
    out: &'a mut W,
}

impl<'a, W: Write> ByteWriter<'a, W> {
    pub(crate) fn new(out: &'a mut W) -> Self {
        ByteWriter { out }
    }

    pub(crate) fn magic(&mut self, version: &str) -> Result<()> {
        self.string(version)
    }

    pub(crate) fn u8(&mut self, v: u8) -> Result<()> {
        self.out.write_all(&[v])?;
        Ok(())
    }

    pub(crate) fn u32(&mut self, v: u32) -> Result<()> {
        self.out.write_all(&v.to_le_bytes())?;
        Ok(())
    }

    pub(crate) fn i32(&mut self, v: i32) -> Result<()> {
        self.out.write_all(&v.to_le_bytes())?;
        Ok(())
    }

    pub(crate) fn u64(&mut self, v: u64) -> Result<()> {
        self.out.write_all(&v.to_le_bytes())?;
        Ok(())
    }

    pub(crate) fn f64(&mut self, v: f64) -> Result<()> {
        self.out.write_all(&v.to_bits().to_le_bytes())?;
        Ok(())
    }

    pub(crate) fn string(&mut self, s: &str) -> Result<()> {
        self.u32(s.len() as u32)?;
        self.out.write_all(s.as_bytes())?;
        Ok(())
    }
}

pub(crate) struct ByteReader<'a, R: Read> {
    input: &'a mut R,
    format: &'static str,
}

impl<'a, R: Read> ByteReader<'a, R> {
    pub(crate) fn new(input: &'a mut R, format: &'static str) -> Self {
        ByteReader { input, format }
    }

    pub(crate) fn corrupt(&self, message: impl Into<String>) -> Error {
        Error::Corrupt {
            format: self.format,
            message: message.into(),
        }
    }

    fn fill(&mut self, buf: &mut [u8]) -> Result<()> {
        self.input
            .read_exact(buf)
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::UnexpectedEof => self.corrupt("unexpected end of file"),
                _ => Error::Io(e),
            })
    }

    pub(crate) fn expect_magic(&mut self, version: &str) -> Result<()> {
        let found = self.string()?;
        if found != version {
            return Err(Error::VersionMismatch {
                expected: version.to_string(),
                found,
            });
        }
        Ok(())
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.fill(&mut b)?;
        Ok(b[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.fill(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    pub(crate) fn i32(&mut self) -> Result<i32> {
        let mut b = [0u8; 4];
        self.fill(&mut b)?;
        Ok(i32::from_le_bytes(b))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.fill(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.fill(&mut b)?;
        Ok(f64::from_bits(u64::from_le_bytes(b)))
    }

    pub(crate) fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        if len > (1 << 24) {
            return Err(self.corrupt(format!("string length {len} is implausibly large")));
        }
        let mut buf = vec![0u8; len];
        self.fill(&mut buf)?;
        String::from_utf8(buf).map_err(|_| self.corrupt("string is not valid UTF-8"))
    }
}
