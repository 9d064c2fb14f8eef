//! Self-describing tag/type/value binary encoding and 4-byte length framing.
//!
//! A record is a sequence of fields. Each field is
//!
//! ```text
//! tag: u8 | wire_type: u8 | value
//! ```
//!
//! with wire types
//!
//! | type | value                                   |
//! |------|-----------------------------------------|
//! | 0    | u64, 8 bytes big-endian                 |
//! | 1    | f64, IEEE-754 bits as 8 bytes big-endian|
//! | 2    | bytes: u32 big-endian length, then data |
//! | 3    | nested record: u32 big-endian length, then fields |
//!
//! Decoders skip tags they do not know. On a stream every record is wrapped
//! in a frame: a u32 big-endian payload length followed by the payload.

use std::io::{self, Read, Write};

use thiserror::Error;

pub const WIRE_U64: u8 = 0;
pub const WIRE_F64: u8 = 1;
pub const WIRE_BYTES: u8 = 2;
pub const WIRE_NESTED: u8 = 3;

/// Frames larger than this are rejected before allocation.
pub const MAX_FRAME_LEN: usize = 64 << 20;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("truncated record")]
    Truncated,
    #[error("unknown wire type {0}")]
    UnknownWireType(u8),
    #[error("field {tag}: expected wire type {expected}, found {found}")]
    WrongType { tag: u8, expected: u8, found: u8 },
    #[error("missing required field {0}")]
    Missing(u8),
    #[error("invalid value for field {tag}: {reason}")]
    Invalid { tag: u8, reason: String },
    #[error("frame of {0} bytes exceeds the limit")]
    FrameTooLarge(usize),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Default, Clone)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u64(&mut self, tag: u8, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&[tag, WIRE_U64]);
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn f64(&mut self, tag: u8, v: f64) -> &mut Self {
        self.buf.extend_from_slice(&[tag, WIRE_F64]);
        self.buf.extend_from_slice(&v.to_bits().to_be_bytes());
        self
    }

    pub fn bool(&mut self, tag: u8, v: bool) -> &mut Self {
        self.u64(tag, u64::from(v))
    }

    pub fn bytes(&mut self, tag: u8, v: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(&[tag, WIRE_BYTES]);
        self.buf.extend_from_slice(&(v.len() as u32).to_be_bytes());
        self.buf.extend_from_slice(v);
        self
    }

    pub fn str(&mut self, tag: u8, v: &str) -> &mut Self {
        self.bytes(tag, v.as_bytes())
    }

    pub fn nested(&mut self, tag: u8, inner: &Encoder) -> &mut Self {
        self.buf.extend_from_slice(&[tag, WIRE_NESTED]);
        self.buf.extend_from_slice(&(inner.buf.len() as u32).to_be_bytes());
        self.buf.extend_from_slice(&inner.buf);
        self
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

    pub fn as_bytes(&self) -> &[u8] {
        &self.buf
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Value<'a> {
    U64(u64),
    F64(f64),
    Bytes(&'a [u8]),
    Nested(&'a [u8]),
}

impl Value<'_> {
    fn wire_type(&self) -> u8 {
        match self {
            Value::U64(_) => WIRE_U64,
            Value::F64(_) => WIRE_F64,
            Value::Bytes(_) => WIRE_BYTES,
            Value::Nested(_) => WIRE_NESTED,
        }
    }
}

/// Iterator over the fields of one record.
pub struct Fields<'a> {
    rest: &'a [u8],
}

impl<'a> Fields<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Fields { rest: buf }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.rest.len() < n {
            return Err(CodecError::Truncated);
        }
        let (head, tail) = self.rest.split_at(n);
        self.rest = tail;
        Ok(head)
    }
}

impl<'a> Iterator for Fields<'a> {
    type Item = Result<(u8, Value<'a>), CodecError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.rest.is_empty() {
            return None;
        }
        let mut read = || -> Result<(u8, Value<'a>), CodecError> {
            let hdr = self.take(2)?;
            let (tag, ty) = (hdr[0], hdr[1]);
            let value = match ty {
                WIRE_U64 => Value::U64(u64::from_be_bytes(self.take(8)?.try_into().unwrap())),
                WIRE_F64 => Value::F64(f64::from_bits(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))),
                WIRE_BYTES | WIRE_NESTED => {
                    let len = u32::from_be_bytes(self.take(4)?.try_into().unwrap()) as usize;
                    let data = self.take(len)?;
                    if ty == WIRE_BYTES {
                        Value::Bytes(data)
                    } else {
                        Value::Nested(data)
                    }
                }
                other => return Err(CodecError::UnknownWireType(other)),
            };
            Ok((tag, value))
        };
        let item = read();
        if item.is_err() {
            self.rest = &[];
        }
        Some(item)
    }
}

/// Decoded fields of a record, indexed by tag. Repeated tags keep every
/// occurrence in order.
#[derive(Debug, Default)]
pub struct Record<'a> {
    fields: Vec<(u8, Value<'a>)>,
}

impl<'a> Record<'a> {
    pub fn parse(buf: &'a [u8]) -> Result<Self, CodecError> {
        Ok(Record {
            fields: Fields::new(buf).collect::<Result<_, _>>()?,
        })
    }

    pub fn get(&self, tag: u8) -> Option<Value<'a>> {
        self.fields.iter().find(|(t, _)| *t == tag).map(|(_, v)| *v)
    }

    pub fn all(&self, tag: u8) -> impl Iterator<Item = Value<'a>> + '_ {
        self.fields.iter().filter(move |(t, _)| *t == tag).map(|(_, v)| *v)
    }

    fn typed(&self, tag: u8, expected: u8) -> Result<Value<'a>, CodecError> {
        let v = self.get(tag).ok_or(CodecError::Missing(tag))?;
        if v.wire_type() != expected {
            return Err(CodecError::WrongType {
                tag,
                expected,
                found: v.wire_type(),
            });
        }
        Ok(v)
    }

    pub fn u64(&self, tag: u8) -> Result<u64, CodecError> {
        match self.typed(tag, WIRE_U64)? {
            Value::U64(v) => Ok(v),
            _ => unreachable!(),
        }
    }

    pub fn u64_or(&self, tag: u8, default: u64) -> Result<u64, CodecError> {
        if self.get(tag).is_none() {
            return Ok(default);
        }
        self.u64(tag)
    }

    pub fn u32(&self, tag: u8) -> Result<u32, CodecError> {
        u32::try_from(self.u64(tag)?).map_err(|_| CodecError::Invalid {
            tag,
            reason: "exceeds u32".into(),
        })
    }

    pub fn bool(&self, tag: u8) -> Result<bool, CodecError> {
        Ok(self.u64(tag)? != 0)
    }

    pub fn f64(&self, tag: u8) -> Result<f64, CodecError> {
        match self.typed(tag, WIRE_F64)? {
            Value::F64(v) => Ok(v),
            _ => unreachable!(),
        }
    }

    pub fn bytes(&self, tag: u8) -> Result<&'a [u8], CodecError> {
        match self.typed(tag, WIRE_BYTES)? {
            Value::Bytes(v) => Ok(v),
            _ => unreachable!(),
        }
    }

    pub fn str(&self, tag: u8) -> Result<&'a str, CodecError> {
        std::str::from_utf8(self.bytes(tag)?).map_err(|e| CodecError::Invalid {
            tag,
            reason: e.to_string(),
        })
    }

    pub fn nested(&self, tag: u8) -> Result<Record<'a>, CodecError> {
        match self.typed(tag, WIRE_NESTED)? {
            Value::Nested(v) => Record::parse(v),
            _ => unreachable!(),
        }
    }
}

pub fn write_frame<W: Write>(w: &mut W, payload: &[u8]) -> io::Result<()> {
    w.write_all(&(payload.len() as u32).to_be_bytes())?;
    w.write_all(payload)
}

pub fn frame(payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(payload.len() + 4);
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    out.extend_from_slice(payload);
    out
}

/// Reads one frame. `Ok(None)` on clean end of stream before a header.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Vec<u8>>, CodecError> {
    let mut hdr = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut hdr[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(CodecError::Truncated),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_be_bytes(hdr) as usize;
    if len > MAX_FRAME_LEN {
        return Err(CodecError::FrameTooLarge(len));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => CodecError::Truncated,
        _ => CodecError::Io(e),
    })?;
    Ok(Some(buf))
}

/// Splits a buffer of concatenated frames.
pub fn split_frames(mut buf: &[u8]) -> Result<Vec<&[u8]>, CodecError> {
    let mut out = Vec::new();
    while !buf.is_empty() {
        if buf.len() < 4 {
            return Err(CodecError::Truncated);
        }
        let len = u32::from_be_bytes(buf[..4].try_into().unwrap()) as usize;
        if buf.len() < 4 + len {
            return Err(CodecError::Truncated);
        }
        out.push(&buf[4..4 + len]);
        buf = &buf[4 + len..];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_is_bit_exact() {
        let mut e = Encoder::new();
        e.u64(1, 0x0102).str(2, "ab");
        assert_eq!(
            e.as_bytes(),
            &[1, 0, 0, 0, 0, 0, 0, 0, 1, 2, 2, 2, 0, 0, 0, 2, b'a', b'b']
        );
        assert_eq!(frame(&[9, 9]), vec![0, 0, 0, 2, 9, 9]);
    }

    #[test]
    fn unknown_tags_are_skipped_and_missing_reported() {
        let mut e = Encoder::new();
        e.u64(1, 5).bytes(200, b"future").f64(3, 1.5);
        let r = Record::parse(e.as_bytes()).unwrap();
        assert_eq!(r.u64(1).unwrap(), 5);
        assert_eq!(r.f64(3).unwrap(), 1.5);
        assert!(matches!(r.u64(4), Err(CodecError::Missing(4))));
        assert!(matches!(r.f64(1), Err(CodecError::WrongType { .. })));
    }

    #[test]
    fn truncation_detected() {
        let mut e = Encoder::new();
        e.str(1, "hello");
        let bytes = e.into_bytes();
        assert!(Record::parse(&bytes[..bytes.len() - 1]).is_err());
        assert!(read_frame(&mut &[0u8, 0, 0, 5, 1][..]).is_err());
        assert!(read_frame(&mut &[][..]).unwrap().is_none());
    }

    proptest! {
        #[test]
        fn fields_round_trip(a in any::<u64>(), b in any::<f64>(), s in ".{0,40}", blob in proptest::collection::vec(any::<u8>(), 0..64)) {
            let mut inner = Encoder::new();
            inner.bytes(1, &blob);
            let mut e = Encoder::new();
            e.u64(1, a).f64(2, b).str(3, &s).nested(4, &inner);
            let framed = frame(e.as_bytes());
            let payload = read_frame(&mut framed.as_slice()).unwrap().unwrap();
            let r = Record::parse(&payload).unwrap();
            prop_assert_eq!(r.u64(1).unwrap(), a);
            prop_assert_eq!(r.f64(2).unwrap().to_bits(), b.to_bits());
            prop_assert_eq!(r.str(3).unwrap(), s.as_str());
            prop_assert_eq!(r.nested(4).unwrap().bytes(1).unwrap(), blob.as_slice());
        }
    }
}
