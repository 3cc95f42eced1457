//! Binary codec for SNDEF records and the plaintext payload carried inside them.
//!
//! An SNDEF record travels as a single NDEF external-type record with type
//! name `sndef`. The NDEF framing is a thin envelope; the record payload is
//! the normative layout:
//!
//! ```text
//! ┌───────┬──────────┬─────────────┬──────────────────┬──────────┐
//! │ suite │    IV    │ payload_len │  secret_payload  │   tag    │
//! │  1 B  │   16 B   │  u16 (BE)   │     N bytes      │   16 B   │
//! └───────┴──────────┴─────────────┴──────────────────┴──────────┘
//! ```
//!
//! The plaintext that gets encrypted into `secret_payload` is:
//!
//! ```text
//! ┌────────────┬──────────────┬─────────┬──────────┬──────────┐
//! │ message_id │ message_type │ counter │ data_len │   data   │
//! │  u32 (BE)  │     1 B      │ u32(BE) │ u16 (BE) │ N bytes  │
//! └────────────┴──────────────┴─────────┴──────────┴──────────┘
//! ```
//!
//! All integers are big-endian. Application data is capped at 182 bytes, so
//! the largest plaintext is 193 bytes and the largest CBC ciphertext (after
//! padding) is 208 bytes. Every encodable record fits in the 256-byte tag
//! mailbox.

use thiserror::Error;

/// Record IV width. All suites share one fixed-width field; AEAD modes use a
/// prefix of it as their nonce.
pub const IV_LEN: usize = 16;
/// Authentication tag width.
pub const TAG_LEN: usize = 16;
/// Maximum application data bytes in one message.
pub const MAX_DATA_LEN: usize = 182;
/// Fixed part of an encoded [`PlainMessage`]: id + type + counter + data_len.
pub const PLAIN_HEADER_LEN: usize = 11;
/// Largest plaintext: header plus maximum data.
pub const MAX_PLAIN_LEN: usize = PLAIN_HEADER_LEN + MAX_DATA_LEN;
/// Largest CBC secret payload: `MAX_PLAIN_LEN` padded up to a block boundary.
pub const MAX_CBC_PAYLOAD_LEN: usize = 208;
/// Hard cap on the encoded wire size (tag mailbox capacity).
pub const MAX_WIRE_LEN: usize = 256;

const RECORD_TYPE_NAME: &[u8; 5] = b"sndef";
// MB | ME | SR | TNF=external
const NDEF_HEADER_FLAGS: u8 = 0xD4;
const NDEF_ENVELOPE_LEN: usize = 3 + RECORD_TYPE_NAME.len();
const RECORD_FIXED_LEN: usize = 1 + IV_LEN + 2 + TAG_LEN;

/// Cipher suites an SNDEF record can be protected with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CipherSuiteId {
    /// AES-128-CBC with a separate AES-CMAC tag (encrypt-then-MAC).
    CbcCmac,
    /// AES-128-GCM, 12-byte nonce.
    Gcm,
    /// AES-128-CCM, 13-byte nonce, 16-byte tag.
    Ccm,
    /// AES-128-EAX, 16-byte nonce.
    Eax,
}

impl CipherSuiteId {
    pub const ALL: [CipherSuiteId; 4] = [
        CipherSuiteId::CbcCmac,
        CipherSuiteId::Gcm,
        CipherSuiteId::Ccm,
        CipherSuiteId::Eax,
    ];

    pub fn code(self) -> u8 {
        match self {
            CipherSuiteId::CbcCmac => 0x01,
            CipherSuiteId::Gcm => 0x02,
            CipherSuiteId::Ccm => 0x03,
            CipherSuiteId::Eax => 0x04,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0x01 => Some(CipherSuiteId::CbcCmac),
            0x02 => Some(CipherSuiteId::Gcm),
            0x03 => Some(CipherSuiteId::Ccm),
            0x04 => Some(CipherSuiteId::Eax),
            _ => None,
        }
    }

    /// True for the AEAD modes, which need a single key and carry their own
    /// integrity tag.
    pub fn is_aead(self) -> bool {
        !matches!(self, CipherSuiteId::CbcCmac)
    }

    pub fn name(self) -> &'static str {
        match self {
            CipherSuiteId::CbcCmac => "cbc-cmac",
            CipherSuiteId::Gcm => "gcm",
            CipherSuiteId::Ccm => "ccm",
            CipherSuiteId::Eax => "eax",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "cbc-cmac" => Some(CipherSuiteId::CbcCmac),
            "gcm" => Some(CipherSuiteId::Gcm),
            "ccm" => Some(CipherSuiteId::Ccm),
            "eax" => Some(CipherSuiteId::Eax),
            _ => None,
        }
    }

    fn payload_len_valid(self, len: usize) -> bool {
        if self.is_aead() {
            (PLAIN_HEADER_LEN..=MAX_PLAIN_LEN).contains(&len)
        } else {
            len >= 16 && len <= MAX_CBC_PAYLOAD_LEN && len % 16 == 0
        }
    }
}

/// Message purposes carried in the plaintext header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MessageType {
    ReadStatus,
    StatusData,
    UpdateConfig,
    Ack,
    Error,
}

impl MessageType {
    pub fn code(self) -> u8 {
        match self {
            MessageType::ReadStatus => 0x01,
            MessageType::StatusData => 0x02,
            MessageType::UpdateConfig => 0x03,
            MessageType::Ack => 0x04,
            MessageType::Error => 0x05,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0x01 => Some(MessageType::ReadStatus),
            0x02 => Some(MessageType::StatusData),
            0x03 => Some(MessageType::UpdateConfig),
            0x04 => Some(MessageType::Ack),
            0x05 => Some(MessageType::Error),
            _ => None,
        }
    }
}

/// The on-wire secure record: cipher spec, IV, ciphertext, tag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SndefRecord {
    pub suite: CipherSuiteId,
    pub iv: [u8; IV_LEN],
    pub secret_payload: Vec<u8>,
    pub tag: [u8; TAG_LEN],
}

/// Decrypted message payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlainMessage {
    pub message_id: u32,
    pub message_type: MessageType,
    /// Per-session replay counter; 0 is reserved and never valid.
    pub counter: u32,
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("record truncated: need at least {need} bytes, have {have}")]
    TruncatedRecord { need: usize, have: usize },
    #[error("unknown cipher suite code {0:#04x}")]
    UnknownSuite(u8),
    #[error("length mismatch: declared {declared}, actual {actual}")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("invalid record: {0}")]
    InvalidRecord(&'static str),
    #[error("bad NDEF envelope: {0}")]
    BadEnvelope(&'static str),
    #[error("plain payload truncated: need at least {need} bytes, have {have}")]
    TruncatedPayload { need: usize, have: usize },
    #[error("unknown message type {0:#04x}")]
    UnknownMessageType(u8),
    #[error("message data too long: {0} bytes exceeds {MAX_DATA_LEN}")]
    DataTooLong(usize),
    #[error("message counter is zero (reserved)")]
    ZeroCounter,
}

fn validate_record(rec: &SndefRecord) -> Result<(), CodecError> {
    if !rec.suite.payload_len_valid(rec.secret_payload.len()) {
        return Err(CodecError::InvalidRecord(
            "secret payload length invalid for cipher suite",
        ));
    }
    Ok(())
}

/// Encode the record payload layout (everything inside the NDEF envelope).
pub fn encode_record_payload(rec: &SndefRecord) -> Result<Vec<u8>, CodecError> {
    validate_record(rec)?;
    let mut out = Vec::with_capacity(RECORD_FIXED_LEN + rec.secret_payload.len());
    out.push(rec.suite.code());
    out.extend_from_slice(&rec.iv);
    out.extend_from_slice(&(rec.secret_payload.len() as u16).to_be_bytes());
    out.extend_from_slice(&rec.secret_payload);
    out.extend_from_slice(&rec.tag);
    Ok(out)
}

/// Encode a record as a complete short NDEF external-type record.
pub fn encode_record(rec: &SndefRecord) -> Result<Vec<u8>, CodecError> {
    let inner = encode_record_payload(rec)?;
    debug_assert!(inner.len() <= u8::MAX as usize);
    let mut out = Vec::with_capacity(NDEF_ENVELOPE_LEN + inner.len());
    out.push(NDEF_HEADER_FLAGS);
    out.push(RECORD_TYPE_NAME.len() as u8);
    out.push(inner.len() as u8);
    out.extend_from_slice(RECORD_TYPE_NAME);
    out.extend_from_slice(&inner);
    debug_assert!(out.len() <= MAX_WIRE_LEN);
    Ok(out)
}

fn decode_record_payload(bytes: &[u8]) -> Result<SndefRecord, CodecError> {
    if bytes.len() < RECORD_FIXED_LEN {
        return Err(CodecError::TruncatedRecord {
            need: RECORD_FIXED_LEN,
            have: bytes.len(),
        });
    }
    let suite = CipherSuiteId::from_code(bytes[0]).ok_or(CodecError::UnknownSuite(bytes[0]))?;
    let mut iv = [0u8; IV_LEN];
    iv.copy_from_slice(&bytes[1..1 + IV_LEN]);
    let payload_len = u16::from_be_bytes([bytes[17], bytes[18]]) as usize;
    if bytes.len() != RECORD_FIXED_LEN + payload_len {
        return Err(CodecError::LengthMismatch {
            declared: payload_len,
            actual: bytes.len() - RECORD_FIXED_LEN,
        });
    }
    let secret_payload = bytes[19..19 + payload_len].to_vec();
    let mut tag = [0u8; TAG_LEN];
    tag.copy_from_slice(&bytes[19 + payload_len..]);
    let rec = SndefRecord {
        suite,
        iv,
        secret_payload,
        tag,
    };
    validate_record(&rec)?;
    Ok(rec)
}

/// Decode a complete NDEF-wrapped record. Total over arbitrary input.
pub fn decode_record(bytes: &[u8]) -> Result<SndefRecord, CodecError> {
    if bytes.len() < 3 {
        return Err(CodecError::TruncatedRecord {
            need: 3,
            have: bytes.len(),
        });
    }
    if bytes[0] != NDEF_HEADER_FLAGS {
        return Err(CodecError::BadEnvelope(
            "expected a single short NDEF external-type record",
        ));
    }
    if bytes[1] as usize != RECORD_TYPE_NAME.len() {
        return Err(CodecError::BadEnvelope("unexpected type name length"));
    }
    if bytes.len() < NDEF_ENVELOPE_LEN {
        return Err(CodecError::TruncatedRecord {
            need: NDEF_ENVELOPE_LEN,
            have: bytes.len(),
        });
    }
    if &bytes[3..3 + RECORD_TYPE_NAME.len()] != RECORD_TYPE_NAME {
        return Err(CodecError::BadEnvelope("unexpected record type name"));
    }
    let declared = bytes[2] as usize;
    let actual = bytes.len() - NDEF_ENVELOPE_LEN;
    if declared != actual {
        return Err(CodecError::LengthMismatch { declared, actual });
    }
    decode_record_payload(&bytes[NDEF_ENVELOPE_LEN..])
}

/// Encode a plaintext message. Fails only when `data` exceeds the limit.
pub fn encode_plain(msg: &PlainMessage) -> Result<Vec<u8>, CodecError> {
    if msg.data.len() > MAX_DATA_LEN {
        return Err(CodecError::DataTooLong(msg.data.len()));
    }
    let mut out = Vec::with_capacity(PLAIN_HEADER_LEN + msg.data.len());
    out.extend_from_slice(&msg.message_id.to_be_bytes());
    out.push(msg.message_type.code());
    out.extend_from_slice(&msg.counter.to_be_bytes());
    out.extend_from_slice(&(msg.data.len() as u16).to_be_bytes());
    out.extend_from_slice(&msg.data);
    Ok(out)
}

/// Decode a plaintext message. Total over arbitrary input.
pub fn decode_plain(bytes: &[u8]) -> Result<PlainMessage, CodecError> {
    if bytes.len() < PLAIN_HEADER_LEN {
        return Err(CodecError::TruncatedPayload {
            need: PLAIN_HEADER_LEN,
            have: bytes.len(),
        });
    }
    let message_id = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    let message_type =
        MessageType::from_code(bytes[4]).ok_or(CodecError::UnknownMessageType(bytes[4]))?;
    let counter = u32::from_be_bytes([bytes[5], bytes[6], bytes[7], bytes[8]]);
    if counter == 0 {
        return Err(CodecError::ZeroCounter);
    }
    let data_len = u16::from_be_bytes([bytes[9], bytes[10]]) as usize;
    if data_len > MAX_DATA_LEN {
        return Err(CodecError::DataTooLong(data_len));
    }
    if bytes.len() != PLAIN_HEADER_LEN + data_len {
        return Err(CodecError::LengthMismatch {
            declared: data_len,
            actual: bytes.len() - PLAIN_HEADER_LEN,
        });
    }
    Ok(PlainMessage {
        message_id,
        message_type,
        counter,
        data: bytes[PLAIN_HEADER_LEN..].to_vec(),
    })
}
