//! Canonical byte encoding for everything that gets hashed or persisted.
//!
//! Layout rules: fields are concatenated in declared order; integers are
//! big-endian fixed width; byte strings and UTF-8 strings carry a u32
//! length prefix; lists carry a u32 count prefix. The same bytes are used
//! for hashing and for the on-disk block files, so hashes can be
//! recomputed from persisted data alone.

use sha2::{Digest, Sha256};

pub const DIGEST_LEN: usize = 32;

pub type Hash32 = [u8; DIGEST_LEN];

pub const ZERO_HASH: Hash32 = [0u8; DIGEST_LEN];

pub fn sha256(data: &[u8]) -> Hash32 {
    let mut h = Sha256::new();
    h.update(data);
    h.finalize().into()
}

/// SHA-256 over the concatenation of several byte slices.
pub fn sha256_concat(parts: &[&[u8]]) -> Hash32 {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    h.finalize().into()
}

#[derive(Default)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put_u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn put_u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    pub fn put_u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    pub fn put_bytes(&mut self, b: &[u8]) {
        self.put_u32(b.len() as u32);
        self.buf.extend_from_slice(b);
    }

    pub fn put_str(&mut self, s: &str) {
        self.put_bytes(s.as_bytes());
    }

    /// Fixed-width raw bytes, no length prefix (digests).
    pub fn put_raw(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn put_count(&mut self, n: usize) {
        self.put_u32(n as u32);
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

/// Sequential decoder over canonical bytes. Every read is bounds-checked so
/// corrupted input yields an error instead of a panic.
pub struct Decoder<'a> {
    data: &'a [u8],
    pos: usize,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("unexpected end of input at offset {0}")]
    Truncated(usize),
    #[error("length prefix {len} exceeds remaining input at offset {at}")]
    BadLength { at: usize, len: usize },
    #[error("invalid utf-8 in string field at offset {0}")]
    BadUtf8(usize),
    #[error("invalid enum tag {tag} at offset {at}")]
    BadTag { at: usize, tag: u8 },
    #[error("trailing bytes after record at offset {0}")]
    Trailing(usize),
}

impl<'a> Decoder<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }

    pub fn offset(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    pub fn is_empty(&self) -> bool {
        self.pos == self.data.len()
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.remaining() < n {
            return Err(DecodeError::Truncated(self.pos));
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn get_u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    pub fn get_u32(&mut self) -> Result<u32, DecodeError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes(b.try_into().unwrap()))
    }

    pub fn get_u64(&mut self) -> Result<u64, DecodeError> {
        let b = self.take(8)?;
        Ok(u64::from_be_bytes(b.try_into().unwrap()))
    }

    pub fn get_bytes(&mut self) -> Result<Vec<u8>, DecodeError> {
        let at = self.pos;
        let len = self.get_u32()? as usize;
        if self.remaining() < len {
            return Err(DecodeError::BadLength { at, len });
        }
        Ok(self.take(len)?.to_vec())
    }

    pub fn get_str(&mut self) -> Result<String, DecodeError> {
        let at = self.pos;
        let b = self.get_bytes()?;
        String::from_utf8(b).map_err(|_| DecodeError::BadUtf8(at))
    }

    pub fn get_raw(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        self.take(n)
    }

    pub fn get_hash(&mut self) -> Result<Hash32, DecodeError> {
        let b = self.take(DIGEST_LEN)?;
        Ok(b.try_into().unwrap())
    }

    pub fn get_count(&mut self) -> Result<usize, DecodeError> {
        Ok(self.get_u32()? as usize)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_scalars() {
        let mut e = Encoder::new();
        e.put_u8(7);
        e.put_u32(0xDEAD_BEEF);
        e.put_u64(42);
        e.put_str("hello");
        e.put_bytes(&[1, 2, 3]);
        let bytes = e.finish();

        let mut d = Decoder::new(&bytes);
        assert_eq!(d.get_u8().unwrap(), 7);
        assert_eq!(d.get_u32().unwrap(), 0xDEAD_BEEF);
        assert_eq!(d.get_u64().unwrap(), 42);
        assert_eq!(d.get_str().unwrap(), "hello");
        assert_eq!(d.get_bytes().unwrap(), vec![1, 2, 3]);
        assert!(d.is_empty());
    }

    #[test]
    fn truncated_input_errors() {
        let mut e = Encoder::new();
        e.put_str("hello");
        let mut bytes = e.finish();
        bytes.truncate(6);
        let mut d = Decoder::new(&bytes);
        assert!(d.get_str().is_err());
    }

    #[test]
    fn oversized_length_prefix_errors() {
        let mut d = Decoder::new(&[0xFF, 0xFF, 0xFF, 0xFF, 1, 2]);
        assert!(matches!(
            d.get_bytes(),
            Err(DecodeError::BadLength { .. })
        ));
    }
}
