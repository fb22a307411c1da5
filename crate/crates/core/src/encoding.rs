//! Canonical byte encoding shared by everything that is hashed or signed.
//!
//! Every field is written as a 4-byte big-endian length followed by its
//! bytes. Integers are 8-byte big-endian values; an absent optional field is
//! a zero-length field. Decoding is strict: fixed-size fields must carry
//! exactly their size and trailing input is an error, so a single flipped
//! byte either changes a hashed/signed value or fails to parse.

use alloc::string::String;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    #[error("input truncated at byte {offset}")]
    Truncated { offset: usize },
    #[error("field at byte {offset} has length {found}, expected {expected}")]
    FieldLength {
        offset: usize,
        expected: usize,
        found: usize,
    },
    #[error("invalid {what} at byte {offset}")]
    Invalid { offset: usize, what: &'static str },
    #[error("trailing bytes after offset {offset}")]
    Trailing { offset: usize },
}

/// Types with a single canonical byte form.
pub trait Canonical: Sized {
    fn encode(&self, enc: &mut Encoder);
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError>;

    fn to_canonical_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        self.encode(&mut enc);
        enc.finish()
    }

    fn from_canonical_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut dec = Decoder::new(bytes);
        let value = Self::decode(&mut dec)?;
        dec.finish()?;
        Ok(value)
    }
}

#[derive(Debug, Default)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn field(&mut self, bytes: &[u8]) -> &mut Self {
        let len = u32::try_from(bytes.len()).expect("field longer than 4 GiB");
        self.buf.extend_from_slice(&len.to_be_bytes());
        self.buf.extend_from_slice(bytes);
        self
    }

    pub fn u64(&mut self, value: u64) -> &mut Self {
        self.field(&value.to_be_bytes())
    }

    pub fn u8(&mut self, value: u8) -> &mut Self {
        self.field(&[value])
    }

    pub fn opt(&mut self, bytes: Option<&[u8]>) -> &mut Self {
        self.field(bytes.unwrap_or(&[]))
    }

    pub fn opt_u64(&mut self, value: Option<u64>) -> &mut Self {
        match value {
            Some(v) => self.u64(v),
            None => self.field(&[]),
        }
    }

    pub fn str(&mut self, value: &str) -> &mut Self {
        self.field(value.as_bytes())
    }

    /// Writes a nested canonical value as one length-prefixed field.
    pub fn nested<T: Canonical>(&mut self, value: &T) -> &mut Self {
        let inner = value.to_canonical_bytes();
        self.field(&inner)
    }

    pub fn opt_nested<T: Canonical>(&mut self, value: Option<&T>) -> &mut Self {
        match value {
            Some(v) => self.nested(v),
            None => self.field(&[]),
        }
    }

    /// Writes a count followed by each element as a nested field.
    pub fn list<T: Canonical>(&mut self, items: &[T]) -> &mut Self {
        self.u64(items.len() as u64);
        for item in items {
            self.nested(item);
        }
        self
    }

    pub fn raw(&mut self, bytes: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(bytes);
        self
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.buf
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

#[derive(Debug, Clone)]
pub struct Decoder<'a> {
    input: &'a [u8],
    offset: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(input: &'a [u8]) -> Self {
        Self { input, offset: 0 }
    }

    pub fn is_empty(&self) -> bool {
        self.offset == self.input.len()
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        let end = self
            .offset
            .checked_add(n)
            .filter(|end| *end <= self.input.len())
            .ok_or(DecodeError::Truncated {
                offset: self.offset,
            })?;
        let out = &self.input[self.offset..end];
        self.offset = end;
        Ok(out)
    }

    pub fn field(&mut self) -> Result<&'a [u8], DecodeError> {
        let len_bytes = self.take(4)?;
        let len = u32::from_be_bytes(len_bytes.try_into().expect("4 bytes")) as usize;
        self.take(len)
    }

    pub fn fixed<const N: usize>(&mut self) -> Result<[u8; N], DecodeError> {
        let at = self.offset;
        let bytes = self.field()?;
        bytes.try_into().map_err(|_| DecodeError::FieldLength {
            offset: at,
            expected: N,
            found: bytes.len(),
        })
    }

    pub fn opt_fixed<const N: usize>(&mut self) -> Result<Option<[u8; N]>, DecodeError> {
        let at = self.offset;
        let bytes = self.field()?;
        if bytes.is_empty() {
            return Ok(None);
        }
        bytes
            .try_into()
            .map(Some)
            .map_err(|_| DecodeError::FieldLength {
                offset: at,
                expected: N,
                found: bytes.len(),
            })
    }

    pub fn u64(&mut self) -> Result<u64, DecodeError> {
        self.fixed::<8>().map(u64::from_be_bytes)
    }

    pub fn u8(&mut self) -> Result<u8, DecodeError> {
        self.fixed::<1>().map(|b| b[0])
    }

    pub fn opt_u64(&mut self) -> Result<Option<u64>, DecodeError> {
        Ok(self.opt_fixed::<8>()?.map(u64::from_be_bytes))
    }

    pub fn string(&mut self) -> Result<String, DecodeError> {
        let at = self.offset;
        let bytes = self.field()?;
        core::str::from_utf8(bytes)
            .map(String::from)
            .map_err(|_| DecodeError::Invalid {
                offset: at,
                what: "utf-8 string",
            })
    }

    pub fn nested<T: Canonical>(&mut self) -> Result<T, DecodeError> {
        let bytes = self.field()?;
        T::from_canonical_bytes(bytes)
    }

    pub fn opt_nested<T: Canonical>(&mut self) -> Result<Option<T>, DecodeError> {
        let bytes = self.field()?;
        if bytes.is_empty() {
            return Ok(None);
        }
        T::from_canonical_bytes(bytes).map(Some)
    }

    pub fn list<T: Canonical>(&mut self) -> Result<Vec<T>, DecodeError> {
        let at = self.offset;
        let count = self.u64()?;
        // Each element needs at least its 4-byte length prefix.
        if count > (self.input.len() - self.offset) as u64 / 4 {
            return Err(DecodeError::Invalid {
                offset: at,
                what: "list length",
            });
        }
        (0..count).map(|_| self.nested()).collect()
    }

    pub fn invalid<T>(&self, what: &'static str) -> Result<T, DecodeError> {
        Err(DecodeError::Invalid {
            offset: self.offset,
            what,
        })
    }

    pub fn finish(self) -> Result<(), DecodeError> {
        if self.is_empty() {
            Ok(())
        } else {
            Err(DecodeError::Trailing {
                offset: self.offset,
            })
        }
    }
}
