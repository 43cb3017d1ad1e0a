//! Canonical length-prefixed binary encoding shared by every wire and file format.
//!
//! Integers are big-endian. Variable-length byte strings carry a `u32` length
//! prefix. A [`Writer`] additionally tracks which byte ranges hold opaque
//! cryptographic material (ciphertext bodies, tags, digests, signatures) so
//! traces of two runs can be compared structurally outside those ranges.

use std::ops::Range;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("input truncated")]
    Truncated,
    #[error("{0} trailing bytes after message")]
    Trailing(usize),
    #[error("invalid {0}")]
    Invalid(&'static str),
}

/// An encoded message together with the byte ranges that hold opaque material.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Frame {
    pub bytes: Vec<u8>,
    pub opaque: Vec<Range<usize>>,
}

impl Frame {
    pub fn clear(bytes: Vec<u8>) -> Self {
        Frame { bytes, opaque: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    /// True when byte `pos` falls inside an opaque range.
    pub fn is_opaque(&self, pos: usize) -> bool {
        self.opaque.iter().any(|r| r.contains(&pos))
    }
}

#[derive(Debug, Default)]
pub struct Writer {
    buf: Vec<u8>,
    opaque: Vec<Range<usize>>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u16(&mut self, v: u16) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn bool(&mut self, v: bool) -> &mut Self {
        self.u8(v as u8)
    }

    /// Raw bytes, no length prefix.
    pub fn raw(&mut self, bytes: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(bytes);
        self
    }

    /// Raw bytes marked opaque.
    pub fn opaque_raw(&mut self, bytes: &[u8]) -> &mut Self {
        let start = self.buf.len();
        self.buf.extend_from_slice(bytes);
        self.push_opaque(start..self.buf.len());
        self
    }

    /// `u32` length prefix followed by the bytes.
    pub fn bytes(&mut self, bytes: &[u8]) -> &mut Self {
        self.u32(bytes.len() as u32);
        self.raw(bytes)
    }

    /// Length prefix in the clear, content marked opaque.
    pub fn opaque_bytes(&mut self, bytes: &[u8]) -> &mut Self {
        self.u32(bytes.len() as u32);
        self.opaque_raw(bytes)
    }

    pub fn str(&mut self, s: &str) -> &mut Self {
        self.bytes(s.as_bytes())
    }

    pub fn put<T: Encode + ?Sized>(&mut self, value: &T) -> &mut Self {
        value.encode(self);
        self
    }

    /// Encodes a `u32` count followed by each item.
    pub fn list<T: Encode>(&mut self, items: &[T]) -> &mut Self {
        self.u32(items.len() as u32);
        for item in items {
            item.encode(self);
        }
        self
    }

    /// Appends a nested frame, carrying over its opaque ranges.
    pub fn frame(&mut self, frame: &Frame) -> &mut Self {
        let base = self.buf.len();
        self.buf.extend_from_slice(&frame.bytes);
        for r in &frame.opaque {
            self.push_opaque(r.start + base..r.end + base);
        }
        self
    }

    fn push_opaque(&mut self, range: Range<usize>) {
        if range.is_empty() {
            return;
        }
        if let Some(last) = self.opaque.last_mut() {
            if last.end == range.start {
                last.end = range.end;
                return;
            }
        }
        self.opaque.push(range);
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }

    pub fn into_frame(self) -> Frame {
        Frame { bytes: self.buf, opaque: self.opaque }
    }
}

#[derive(Debug, Clone)]
pub struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Reader { data, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.remaining() < n {
            return Err(CodecError::Truncated);
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N], CodecError> {
        let mut out = [0u8; N];
        out.copy_from_slice(self.take(N)?);
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, CodecError> {
        Ok(u16::from_be_bytes(self.array()?))
    }

    pub fn u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_be_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64, CodecError> {
        Ok(u64::from_be_bytes(self.array()?))
    }

    pub fn bool(&mut self) -> Result<bool, CodecError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(CodecError::Invalid("bool")),
        }
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], CodecError> {
        let len = self.u32()? as usize;
        self.take(len)
    }

    pub fn vec(&mut self) -> Result<Vec<u8>, CodecError> {
        Ok(self.bytes()?.to_vec())
    }

    pub fn string(&mut self) -> Result<String, CodecError> {
        String::from_utf8(self.vec()?).map_err(|_| CodecError::Invalid("utf-8 string"))
    }

    pub fn get<T: Decode>(&mut self) -> Result<T, CodecError> {
        T::decode(self)
    }

    pub fn list<T: Decode>(&mut self) -> Result<Vec<T>, CodecError> {
        let count = self.u32()? as usize;
        // Every item occupies at least one byte; reject counts the input cannot hold.
        if count > self.remaining() {
            return Err(CodecError::Truncated);
        }
        (0..count).map(|_| T::decode(self)).collect()
    }

    pub fn finish(self) -> Result<(), CodecError> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(CodecError::Trailing(n)),
        }
    }
}

pub trait Encode {
    fn encode(&self, w: &mut Writer);

    fn to_frame(&self) -> Frame {
        let mut w = Writer::new();
        self.encode(&mut w);
        w.into_frame()
    }

    fn to_bytes(&self) -> Vec<u8> {
        self.to_frame().bytes
    }
}

pub trait Decode: Sized {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError>;

    /// Decodes a complete buffer, rejecting trailing bytes.
    fn from_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(bytes);
        let value = Self::decode(&mut r)?;
        r.finish()?;
        Ok(value)
    }
}

impl Encode for u64 {
    fn encode(&self, w: &mut Writer) {
        w.u64(*self);
    }
}

impl Decode for u64 {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        r.u64()
    }
}

impl Encode for String {
    fn encode(&self, w: &mut Writer) {
        w.str(self);
    }
}

impl Decode for String {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        r.string()
    }
}

impl<T: Encode> Encode for Option<T> {
    fn encode(&self, w: &mut Writer) {
        match self {
            None => {
                w.u8(0);
            }
            Some(v) => {
                w.u8(1);
                v.encode(w);
            }
        }
    }
}

impl<T: Decode> Decode for Option<T> {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        match r.u8()? {
            0 => Ok(None),
            1 => Ok(Some(T::decode(r)?)),
            _ => Err(CodecError::Invalid("option tag")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn opaque_ranges_merge_and_nest() {
        let mut inner = Writer::new();
        inner.u8(7).opaque_raw(&[1, 2, 3]);
        let inner = inner.into_frame();
        let mut w = Writer::new();
        w.u32(9).frame(&inner).opaque_raw(&[4]);
        let f = w.into_frame();
        assert_eq!(f.opaque, vec![5..9]);
        assert!(!f.is_opaque(4));
        assert!(f.is_opaque(8));
    }

    #[test]
    fn reader_rejects_oversized_length() {
        let mut w = Writer::new();
        w.u32(1000).raw(&[1, 2]);
        let bytes = w.into_bytes();
        assert_eq!(Reader::new(&bytes).bytes(), Err(CodecError::Truncated));
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let mut w = Writer::new();
        w.u64(5).u8(0);
        assert_eq!(u64::from_bytes(&w.into_bytes()), Err(CodecError::Trailing(1)));
    }
}
