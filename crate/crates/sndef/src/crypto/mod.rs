//! Cipher primitives behind a uniform interface: record sealing for every
//! cipher suite, nonce handling, and session key derivation.
//!
//! All operations are pure given their inputs except [`random_nonce`], which
//! draws from an injectable entropy source. Key material zeroizes on drop.

mod aead;
pub mod block;
mod cmac;
mod etm;
mod kdf;

use rand::RngCore;
use thiserror::Error;
use zeroize::{Zeroize, ZeroizeOnDrop};

use crate::codec::CipherSuiteId;

pub use block::{cbc_decrypt, cbc_encrypt, AesBlock, BlockCipher128, BLOCK_LEN};
pub use cmac::cmac;
pub use etm::{seal_with, unseal_with};

pub const KEY_LEN: usize = 16;
pub const NONCE_LEN: usize = 16;

/// Attempts a fresh draw from the entropy source before giving up.
const NONCE_ATTEMPTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("entropy source unavailable or degenerate")]
    EntropyUnavailable,
    #[error("nonce rejected by guard checks")]
    InvalidNonce,
    #[error("derived encryption and MAC keys coincide")]
    DegenerateKeys,
    #[error("key material does not fit the requested cipher suite")]
    InvalidKeyMaterial,
    #[error("authentication tag mismatch")]
    TagMismatch,
    #[error("padding invalid after successful tag check")]
    PaddingInvalid,
    #[error("ciphertext length invalid")]
    InvalidLength,
}

/// The pre-embedded 128-bit master key (never logged, zeroized on drop).
#[derive(Clone, PartialEq, Eq, Zeroize, ZeroizeOnDrop)]
pub struct MasterKey([u8; KEY_LEN]);

impl MasterKey {
    pub fn new(key: [u8; KEY_LEN]) -> Self {
        MasterKey(key)
    }

    pub fn as_bytes(&self) -> &[u8; KEY_LEN] {
        &self.0
    }
}

impl std::fmt::Debug for MasterKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("MasterKey(<redacted>)")
    }
}

/// Derived per-session key material. The MAC key is present only for the
/// encrypt-then-MAC suite; AEAD suites need a single key.
#[derive(Clone, Zeroize, ZeroizeOnDrop)]
pub struct SessionKeys {
    enc_key: [u8; KEY_LEN],
    mac_key: Option<[u8; KEY_LEN]>,
}

impl SessionKeys {
    pub fn new(enc_key: [u8; KEY_LEN], mac_key: Option<[u8; KEY_LEN]>) -> Result<Self, CryptoError> {
        if mac_key == Some(enc_key) {
            return Err(CryptoError::DegenerateKeys);
        }
        Ok(SessionKeys { enc_key, mac_key })
    }

    pub fn enc_key(&self) -> &[u8; KEY_LEN] {
        &self.enc_key
    }

    pub fn mac_key(&self) -> Option<&[u8; KEY_LEN]> {
        self.mac_key.as_ref()
    }
}

impl std::fmt::Debug for SessionKeys {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "SessionKeys(<redacted>, mac={})",
            if self.mac_key.is_some() { "yes" } else { "no" }
        )
    }
}

/// A 128-bit challenge nonce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Nonce128([u8; NONCE_LEN]);

impl Nonce128 {
    pub fn new(value: [u8; NONCE_LEN]) -> Self {
        Nonce128(value)
    }

    pub fn from_slice(bytes: &[u8]) -> Option<Self> {
        bytes.try_into().ok().map(Nonce128)
    }

    pub fn as_bytes(&self) -> &[u8; NONCE_LEN] {
        &self.0
    }
}

/// Guard check: all-zero and all-ones nonces are rejected. Equality with the
/// peer's nonce is a handshake-level check made by the caller, which holds
/// both values.
pub fn validate_nonce(nonce: &Nonce128) -> bool {
    let zero = nonce.0.iter().all(|&b| b == 0x00);
    let ones = nonce.0.iter().all(|&b| b == 0xFF);
    !(zero || ones)
}

/// Draw a fresh challenge nonce, re-drawing past guard values.
pub fn random_nonce(rng: &mut dyn RngCore) -> Result<Nonce128, CryptoError> {
    for _ in 0..NONCE_ATTEMPTS {
        let mut buf = [0u8; NONCE_LEN];
        rng.try_fill_bytes(&mut buf)
            .map_err(|_| CryptoError::EntropyUnavailable)?;
        let nonce = Nonce128(buf);
        if validate_nonce(&nonce) {
            return Ok(nonce);
        }
    }
    Err(CryptoError::EntropyUnavailable)
}

/// Derive session keys from the master key, device additional data, and the
/// two handshake nonces. See [`mod@self`] docs and [`kdf`] for the exact
/// message construction.
pub fn derive_session_keys(
    master: &MasterKey,
    dev_add_data: &[u8],
    nonce_reader: &Nonce128,
    nonce_device: &Nonce128,
    suite: CipherSuiteId,
) -> Result<SessionKeys, CryptoError> {
    if !validate_nonce(nonce_reader) || !validate_nonce(nonce_device) {
        return Err(CryptoError::InvalidNonce);
    }
    if nonce_reader == nonce_device {
        return Err(CryptoError::InvalidNonce);
    }
    let kd = kdf::derive(master, dev_add_data, nonce_reader, nonce_device);
    let enc_key: [u8; KEY_LEN] = kd[..KEY_LEN].try_into().unwrap();
    let mac_key: [u8; KEY_LEN] = kd[KEY_LEN..].try_into().unwrap();
    if suite.is_aead() {
        SessionKeys::new(enc_key, None)
    } else {
        SessionKeys::new(enc_key, Some(mac_key))
    }
}

/// Encrypt `plaintext` and compute the record tag under the given suite.
/// The cipher-spec byte and the full IV are authenticated along with the
/// ciphertext.
pub fn seal(
    suite: CipherSuiteId,
    keys: &SessionKeys,
    iv: &[u8; BLOCK_LEN],
    plaintext: &[u8],
) -> Result<(Vec<u8>, [u8; BLOCK_LEN]), CryptoError> {
    seal_labeled(suite, keys, iv, plaintext, suite.code())
}

/// [`seal`] with an explicit cipher-spec label byte bound into the tag.
pub fn seal_labeled(
    suite: CipherSuiteId,
    keys: &SessionKeys,
    iv: &[u8; BLOCK_LEN],
    plaintext: &[u8],
    label: u8,
) -> Result<(Vec<u8>, [u8; BLOCK_LEN]), CryptoError> {
    match suite {
        CipherSuiteId::CbcCmac => {
            let mac_key = keys.mac_key().ok_or(CryptoError::InvalidKeyMaterial)?;
            let enc = AesBlock::new(keys.enc_key());
            let mac = AesBlock::new(mac_key);
            Ok(etm::seal_with(&enc, &mac, label, iv, plaintext))
        }
        _ => aead::seal(suite, keys.enc_key(), label, iv, plaintext),
    }
}

/// Verify the record tag (constant time, before any decryption) and return
/// the plaintext.
pub fn unseal(
    suite: CipherSuiteId,
    keys: &SessionKeys,
    iv: &[u8; BLOCK_LEN],
    ciphertext: &[u8],
    tag: &[u8; BLOCK_LEN],
) -> Result<Vec<u8>, CryptoError> {
    unseal_labeled(suite, keys, iv, ciphertext, tag, suite.code())
}

/// [`unseal`] with an explicit label byte; callers verifying a received
/// record pass the record's own cipher-spec byte here so a rewritten byte
/// fails the tag check.
pub fn unseal_labeled(
    suite: CipherSuiteId,
    keys: &SessionKeys,
    iv: &[u8; BLOCK_LEN],
    ciphertext: &[u8],
    tag: &[u8; BLOCK_LEN],
    label: u8,
) -> Result<Vec<u8>, CryptoError> {
    match suite {
        CipherSuiteId::CbcCmac => {
            let mac_key = keys.mac_key().ok_or(CryptoError::InvalidKeyMaterial)?;
            let enc = AesBlock::new(keys.enc_key());
            let mac = AesBlock::new(mac_key);
            etm::unseal_with(&enc, &mac, label, iv, ciphertext, tag)
        }
        _ => aead::unseal(suite, keys.enc_key(), label, iv, ciphertext, tag),
    }
}
