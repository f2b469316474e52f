//! Typed payloads carried inside frames.
//!
//! The first payload byte names the payload class. Field vectors are a `u32`
//! count followed by fixed-width elements; byte strings are `u32`-prefixed.

use serde::Serialize;

use crate::field::{FieldElement, PrimeField};
use crate::paillier::{Ciphertext, PaillierError};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PayloadError {
    #[error("payload is empty")]
    Empty,
    #[error("unknown payload class {0}")]
    UnknownClass(u8),
    #[error("unknown setup message kind {0}")]
    UnknownSetup(u8),
    #[error("payload truncated")]
    Truncated,
    #[error("{0} trailing bytes after payload")]
    Trailing(usize),
    #[error("field element is not canonical")]
    NonCanonical,
    #[error("text is not valid UTF-8")]
    Utf8,
    #[error(transparent)]
    Cipher(#[from] PaillierError),
    #[error("expected a {expected} payload, got {got}")]
    Class { expected: PayloadClass, got: PayloadClass },
}

/// Payload classes, as seen by anyone who can parse the frame.
#[repr(u8)]
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum PayloadClass {
    /// Unmasked field vector. Only ever used for local (self-addressed) records.
    Plain = 0,
    /// Field vector masked with a one-time pad.
    Masked = 1,
    /// Paillier ciphertexts.
    Cipher = 2,
    /// Public key material and round control.
    Setup = 3,
    /// Human-readable abort reason.
    Text = 4,
    /// A client's sum of received union shares.
    ShareSum = 5,
    /// Blinded union aggregate.
    PublicAggregate = 6,
}

impl std::fmt::Display for PayloadClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DirectoryEntry {
    pub party: u16,
    pub dh_public: Vec<u8>,
    pub paillier_n: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SetupMsg {
    KeyAnnounce { dh_public: Vec<u8>, paillier_n: Vec<u8> },
    Directory(Vec<DirectoryEntry>),
    RoundStart,
    RoundDone,
    Finish,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Payload {
    Plain(Vec<FieldElement>),
    Masked(Vec<FieldElement>),
    Cipher(Vec<Ciphertext>),
    Setup(SetupMsg),
    Text(String),
    ShareSum(Vec<FieldElement>),
    PublicAggregate(Vec<FieldElement>),
}

impl Payload {
    pub fn class(&self) -> PayloadClass {
        match self {
            Payload::Plain(_) => PayloadClass::Plain,
            Payload::Masked(_) => PayloadClass::Masked,
            Payload::Cipher(_) => PayloadClass::Cipher,
            Payload::Setup(_) => PayloadClass::Setup,
            Payload::Text(_) => PayloadClass::Text,
            Payload::ShareSum(_) => PayloadClass::ShareSum,
            Payload::PublicAggregate(_) => PayloadClass::PublicAggregate,
        }
    }

    /// Encodes the payload. `cipher_width` is the byte width of `n^2` for the
    /// key the ciphertexts are under; other classes ignore it.
    pub fn encode(&self, field: PrimeField, cipher_width: usize) -> Vec<u8> {
        let mut out = vec![self.class() as u8];
        match self {
            Payload::Plain(v) | Payload::Masked(v) | Payload::ShareSum(v) | Payload::PublicAggregate(v) => {
                out.extend_from_slice(&(v.len() as u32).to_be_bytes());
                for &x in v {
                    field.encode(x, &mut out);
                }
            }
            Payload::Cipher(cs) => {
                out.extend_from_slice(&(cs.len() as u32).to_be_bytes());
                for c in cs {
                    c.encode(cipher_width, &mut out);
                }
            }
            Payload::Setup(s) => encode_setup(s, &mut out),
            Payload::Text(t) => put_bytes(&mut out, t.as_bytes()),
        }
        out
    }

    pub fn decode(bytes: &[u8], field: PrimeField) -> Result<Self, PayloadError> {
        let (&class, rest) = bytes.split_first().ok_or(PayloadError::Empty)?;
        let mut r = Reader { buf: rest };
        let payload = match class {
            0 => Payload::Plain(r.field_vec(field)?),
            1 => Payload::Masked(r.field_vec(field)?),
            2 => {
                let count = r.u32()? as usize;
                let mut cs = Vec::with_capacity(count.min(1 << 16));
                for _ in 0..count {
                    let (c, used) = Ciphertext::decode(r.buf).map_err(|e| match e {
                        PaillierError::Truncated => PayloadError::Truncated,
                        other => PayloadError::Cipher(other),
                    })?;
                    r.buf = &r.buf[used..];
                    cs.push(c);
                }
                Payload::Cipher(cs)
            }
            3 => Payload::Setup(decode_setup(&mut r)?),
            4 => Payload::Text(String::from_utf8(r.bytes()?.to_vec()).map_err(|_| PayloadError::Utf8)?),
            5 => Payload::ShareSum(r.field_vec(field)?),
            6 => Payload::PublicAggregate(r.field_vec(field)?),
            other => return Err(PayloadError::UnknownClass(other)),
        };
        if !r.buf.is_empty() {
            return Err(PayloadError::Trailing(r.buf.len()));
        }
        Ok(payload)
    }

    /// Class byte of an encoded payload without decoding the rest.
    pub fn peek_class(bytes: &[u8]) -> Option<PayloadClass> {
        use PayloadClass::*;
        [Plain, Masked, Cipher, Setup, Text, ShareSum, PublicAggregate]
            .into_iter()
            .find(|c| Some(&(*c as u8)) == bytes.first())
    }

    pub fn into_masked(self) -> Result<Vec<FieldElement>, PayloadError> {
        match self {
            Payload::Masked(v) => Ok(v),
            other => Err(PayloadError::Class {
                expected: PayloadClass::Masked,
                got: other.class(),
            }),
        }
    }

    pub fn into_cipher(self) -> Result<Vec<Ciphertext>, PayloadError> {
        match self {
            Payload::Cipher(v) => Ok(v),
            other => Err(PayloadError::Class {
                expected: PayloadClass::Cipher,
                got: other.class(),
            }),
        }
    }
}

/// Encoded `Text` payload; needs no field parameters.
pub fn text_payload(reason: &str) -> Vec<u8> {
    let mut out = vec![PayloadClass::Text as u8];
    put_bytes(&mut out, reason.as_bytes());
    out
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u32).to_be_bytes());
    out.extend_from_slice(b);
}

fn encode_setup(s: &SetupMsg, out: &mut Vec<u8>) {
    match s {
        SetupMsg::KeyAnnounce { dh_public, paillier_n } => {
            out.push(1);
            put_bytes(out, dh_public);
            put_bytes(out, paillier_n);
        }
        SetupMsg::Directory(entries) => {
            out.push(2);
            out.extend_from_slice(&(entries.len() as u32).to_be_bytes());
            for e in entries {
                out.extend_from_slice(&e.party.to_be_bytes());
                put_bytes(out, &e.dh_public);
                put_bytes(out, &e.paillier_n);
            }
        }
        SetupMsg::RoundStart => out.push(3),
        SetupMsg::RoundDone => out.push(4),
        SetupMsg::Finish => out.push(5),
    }
}

fn decode_setup(r: &mut Reader<'_>) -> Result<SetupMsg, PayloadError> {
    Ok(match r.u8()? {
        1 => SetupMsg::KeyAnnounce {
            dh_public: r.bytes()?.to_vec(),
            paillier_n: r.bytes()?.to_vec(),
        },
        2 => {
            let count = r.u32()? as usize;
            let mut entries = Vec::with_capacity(count.min(1 << 16));
            for _ in 0..count {
                entries.push(DirectoryEntry {
                    party: r.u16()?,
                    dh_public: r.bytes()?.to_vec(),
                    paillier_n: r.bytes()?.to_vec(),
                });
            }
            SetupMsg::Directory(entries)
        }
        3 => SetupMsg::RoundStart,
        4 => SetupMsg::RoundDone,
        5 => SetupMsg::Finish,
        other => return Err(PayloadError::UnknownSetup(other)),
    })
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PayloadError> {
        if self.buf.len() < n {
            return Err(PayloadError::Truncated);
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, PayloadError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, PayloadError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, PayloadError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn bytes(&mut self) -> Result<&'a [u8], PayloadError> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    fn field_vec(&mut self, field: PrimeField) -> Result<Vec<FieldElement>, PayloadError> {
        let count = self.u32()? as usize;
        let w = field.byte_width();
        let body = self.take(count.checked_mul(w).ok_or(PayloadError::Truncated)?)?;
        body.chunks(w)
            .map(|c| field.decode(c).map_err(|_| PayloadError::NonCanonical))
            .collect()
    }
}
