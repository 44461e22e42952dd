//! Little-endian binary framing shared by the on-disk formats.
//!
//! Every file is `magic (4 bytes) | version u32 | payload | crc32 u32`, where
//! the checksum covers everything before it.

use crate::error::{OsrError, Result};

pub const FORMAT_VERSION: u32 = 1;

pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new(magic: &[u8; 4]) -> Self {
        let mut buf = Vec::with_capacity(64);
        buf.extend_from_slice(magic);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        Encoder { buf }
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn f64(&mut self, v: f64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn f64s(&mut self, vs: &[f64]) -> &mut Self {
        self.buf.reserve(vs.len() * 8);
        for v in vs {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
        self
    }

    pub fn bytes(&mut self, bs: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(bs);
        self
    }

    pub fn finish(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.buf);
        self.buf.extend_from_slice(&crc.to_le_bytes());
        self.buf
    }
}

pub struct Decoder<'a> {
    data: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Decoder<'a> {
    /// Verify magic, version and checksum, then position after the header.
    pub fn open(data: &'a [u8], magic: &[u8; 4], what: &'static str) -> Result<Self> {
        if data.len() < 12 {
            return Err(OsrError::Data(format!("{what}: truncated ({} bytes)", data.len())));
        }
        if &data[..4] != magic {
            return Err(OsrError::Data(format!("{what}: bad magic")));
        }
        let (body, tail) = data.split_at(data.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4-byte tail"));
        if crc32fast::hash(body) != stored {
            return Err(OsrError::Data(format!("{what}: checksum mismatch")));
        }
        let mut dec = Decoder { data: body, pos: 4, what };
        let version = dec.u32()?;
        if version != FORMAT_VERSION {
            return Err(OsrError::Data(format!("{what}: unsupported version {version}")));
        }
        Ok(dec)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.data.len())
            .ok_or_else(|| OsrError::Data(format!("{}: unexpected end of data", self.what)))?;
        let out = &self.data[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    /// Reads `n` doubles after checking the remaining length, so a forged
    /// count cannot trigger a huge allocation.
    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| self.overflow())?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    pub fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        self.take(n)
    }

    pub fn usize_u64(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| self.overflow())
    }

    fn overflow(&self) -> OsrError {
        OsrError::Data(format!("{}: size overflow", self.what))
    }

    pub fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    pub fn finish(self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(OsrError::Data(format!("{}: {} trailing bytes", self.what, self.remaining())));
        }
        Ok(())
    }
}

pub fn write_file(path: &std::path::Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| OsrError::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| OsrError::io(path, e))
}

pub fn read_file(path: &std::path::Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| OsrError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_corruption() {
        let mut enc = Encoder::new(b"TEST");
        enc.u32(3).f64(1.5).f64s(&[1.0, -2.0]).u8(9);
        let bytes = enc.finish();
        let mut dec = Decoder::open(&bytes, b"TEST", "test").unwrap();
        assert_eq!(dec.u32().unwrap(), 3);
        assert_eq!(dec.f64().unwrap(), 1.5);
        assert_eq!(dec.f64s(2).unwrap(), vec![1.0, -2.0]);
        assert_eq!(dec.u8().unwrap(), 9);
        dec.finish().unwrap();

        let mut bad = bytes.clone();
        bad[10] ^= 1;
        assert!(Decoder::open(&bad, b"TEST", "test").is_err());
        assert!(Decoder::open(&bytes, b"NOPE", "test").is_err());
        assert!(Decoder::open(&bytes[..5], b"TEST", "test").is_err());
    }

    #[test]
    fn forged_length_does_not_allocate() {
        let bytes = Encoder::new(b"TEST").finish();
        let mut dec = Decoder::open(&bytes, b"TEST", "test").unwrap();
        assert!(dec.f64s(usize::MAX / 4).is_err());
    }
}
