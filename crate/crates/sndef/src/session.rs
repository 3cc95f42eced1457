//! The authenticated secure channel: seals application messages into SNDEF
//! records and enforces counters, replay rejection, and the session mode.
//!
//! Counters are tracked per direction. The sender stamps each message with a
//! strictly increasing counter starting at 1; the receiver accepts a record
//! only when its counter is strictly greater than the highest seen so far.
//! NFC is a single-reader, in-order channel, so lost messages simply burn
//! counter values.

use rand::RngCore;
use thiserror::Error;

use crate::auth::{DeviceIdentity, HandshakeSeed};
use crate::codec::{
    self, CipherSuiteId, CodecError, MessageType, PlainMessage, SndefRecord, MAX_DATA_LEN,
};
use crate::crypto::{self, CryptoError, SessionKeys};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionMode {
    ReadOnly,
    ReadWrite,
}

impl SessionMode {
    pub fn code(self) -> u8 {
        match self {
            SessionMode::ReadOnly => 0x01,
            SessionMode::ReadWrite => 0x02,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0x01 => Some(SessionMode::ReadOnly),
            0x02 => Some(SessionMode::ReadWrite),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SessionError {
    #[error("seed was not produced by a completed handshake")]
    InvalidSeed,
    #[error("session is closed")]
    SessionClosed,
    #[error("write not permitted in a read-only session")]
    WriteNotPermitted,
    #[error("message data too long: {0} bytes exceeds {MAX_DATA_LEN}")]
    DataTooLong(usize),
    #[error("send counter exhausted; session must be re-keyed")]
    CounterExhausted,
    #[error("replay detected: counter {counter} not above high water {high_water}")]
    ReplayDetected { counter: u32, high_water: u32 },
    #[error("cipher suite mismatch: session uses {expected:?}, record claims {actual:?}")]
    SuiteMismatch {
        expected: CipherSuiteId,
        actual: CipherSuiteId,
    },
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error("decode failed: {0}")]
    Decode(#[from] CodecError),
}

/// One direction-aware endpoint view of an established channel.
pub struct Session {
    keys: Option<SessionKeys>,
    suite: CipherSuiteId,
    mode: SessionMode,
    send_counter: u32,
    recv_high_water: u32,
    next_message_id: u32,
}

impl Session {
    /// Derive keys from a completed handshake seed and open the channel.
    pub fn open(
        seed: &HandshakeSeed,
        identity: &DeviceIdentity,
        suite: CipherSuiteId,
        mode: SessionMode,
    ) -> Result<Self, SessionError> {
        let keys = crypto::derive_session_keys(
            &identity.master_key,
            &identity.dev_add_data,
            &seed.nonce_reader(),
            &seed.nonce_device(),
            suite,
        )
        .map_err(|_| SessionError::InvalidSeed)?;
        Ok(Session {
            keys: Some(keys),
            suite,
            mode,
            send_counter: 0,
            recv_high_water: 0,
            next_message_id: 0,
        })
    }

    pub fn suite(&self) -> CipherSuiteId {
        self.suite
    }

    pub fn mode(&self) -> SessionMode {
        self.mode
    }

    pub fn is_open(&self) -> bool {
        self.keys.is_some()
    }

    pub fn send_counter(&self) -> u32 {
        self.send_counter
    }

    pub fn recv_high_water(&self) -> u32 {
        self.recv_high_water
    }

    /// Seal an application message into an SNDEF record with a fresh IV and
    /// the next counter value. Returns the record and the exact plaintext
    /// message it protects.
    pub fn seal_message(
        &mut self,
        message_type: MessageType,
        data: &[u8],
        rng: &mut dyn RngCore,
    ) -> Result<(SndefRecord, PlainMessage), SessionError> {
        let keys = self.keys.as_ref().ok_or(SessionError::SessionClosed)?;
        if message_type == MessageType::UpdateConfig && self.mode == SessionMode::ReadOnly {
            return Err(SessionError::WriteNotPermitted);
        }
        if data.len() > MAX_DATA_LEN {
            return Err(SessionError::DataTooLong(data.len()));
        }
        if self.send_counter == u32::MAX {
            return Err(SessionError::CounterExhausted);
        }

        let msg = PlainMessage {
            message_id: self.next_message_id + 1,
            message_type,
            counter: self.send_counter + 1,
            data: data.to_vec(),
        };
        let plaintext = codec::encode_plain(&msg)?;

        let mut iv = [0u8; codec::IV_LEN];
        rng.try_fill_bytes(&mut iv)
            .map_err(|_| SessionError::Crypto(CryptoError::EntropyUnavailable))?;

        let (secret_payload, tag) = crypto::seal(self.suite, keys, &iv, &plaintext)?;
        self.send_counter += 1;
        self.next_message_id += 1;
        let record = SndefRecord {
            suite: self.suite,
            iv,
            secret_payload,
            tag,
        };
        Ok((record, msg))
    }

    /// Verify, decrypt, and replay-check a received record.
    ///
    /// The record's own cipher-spec byte is bound into the tag check, so a
    /// rewritten byte surfaces as a tag mismatch before any suite comparison.
    pub fn open_message(&mut self, record: &SndefRecord) -> Result<PlainMessage, SessionError> {
        let keys = self.keys.as_ref().ok_or(SessionError::SessionClosed)?;

        let plaintext = crypto::unseal_labeled(
            self.suite,
            keys,
            &record.iv,
            &record.secret_payload,
            &record.tag,
            record.suite.code(),
        )?;
        if record.suite != self.suite {
            return Err(SessionError::SuiteMismatch {
                expected: self.suite,
                actual: record.suite,
            });
        }
        let msg = codec::decode_plain(&plaintext)?;
        if msg.counter <= self.recv_high_water {
            return Err(SessionError::ReplayDetected {
                counter: msg.counter,
                high_water: self.recv_high_water,
            });
        }
        self.recv_high_water = msg.counter;
        Ok(msg)
    }

    /// Close the channel and erase key material. Idempotent.
    pub fn close(&mut self) {
        // SessionKeys zeroizes on drop
        self.keys = None;
    }

    #[cfg(test)]
    pub(crate) fn set_send_counter_for_test(&mut self, value: u32) {
        self.send_counter = value;
    }
}
