//! AEAD suites behind the record interface: AES-128-GCM, CCM, and EAX.
//!
//! The record format carries one fixed 16-byte IV field for every suite;
//! each AEAD consumes the prefix its nonce size requires (12 bytes for GCM,
//! 13 for CCM, all 16 for EAX). The full IV plus the cipher-spec label are
//! bound as associated data regardless of the nonce width.

use aes_gcm::aead::{Aead, KeyInit, Payload};
use aes_gcm::Aes128Gcm;
use ccm::consts::{U13, U16};
use ccm::Ccm;
use eax::Eax;

use crate::codec::CipherSuiteId;

use super::block::BLOCK_LEN;
use super::CryptoError;

type Aes128Ccm = Ccm<aes::Aes128, U16, U13>;
type Aes128Eax = Eax<aes::Aes128>;

const TAG_LEN: usize = 16;

fn associated_data(label: u8, iv: &[u8; BLOCK_LEN]) -> [u8; 1 + BLOCK_LEN] {
    let mut ad = [0u8; 1 + BLOCK_LEN];
    ad[0] = label;
    ad[1..].copy_from_slice(iv);
    ad
}

pub fn seal(
    suite: CipherSuiteId,
    key: &[u8; 16],
    label: u8,
    iv: &[u8; BLOCK_LEN],
    plaintext: &[u8],
) -> Result<(Vec<u8>, [u8; TAG_LEN]), CryptoError> {
    let ad = associated_data(label, iv);
    let payload = Payload {
        msg: plaintext,
        aad: &ad,
    };
    let combined = match suite {
        CipherSuiteId::Gcm => Aes128Gcm::new(key.into())
            .encrypt(iv[..12].into(), payload)
            .map_err(|_| CryptoError::InvalidLength)?,
        CipherSuiteId::Ccm => Aes128Ccm::new(key.into())
            .encrypt(iv[..13].into(), payload)
            .map_err(|_| CryptoError::InvalidLength)?,
        CipherSuiteId::Eax => Aes128Eax::new(key.into())
            .encrypt(iv[..].into(), payload)
            .map_err(|_| CryptoError::InvalidLength)?,
        CipherSuiteId::CbcCmac => return Err(CryptoError::InvalidKeyMaterial),
    };
    // RustCrypto AEADs append the tag to the ciphertext
    let split = combined.len() - TAG_LEN;
    let mut tag = [0u8; TAG_LEN];
    tag.copy_from_slice(&combined[split..]);
    Ok((combined[..split].to_vec(), tag))
}

pub fn unseal(
    suite: CipherSuiteId,
    key: &[u8; 16],
    label: u8,
    iv: &[u8; BLOCK_LEN],
    ciphertext: &[u8],
    tag: &[u8; TAG_LEN],
) -> Result<Vec<u8>, CryptoError> {
    let ad = associated_data(label, iv);
    let mut combined = Vec::with_capacity(ciphertext.len() + TAG_LEN);
    combined.extend_from_slice(ciphertext);
    combined.extend_from_slice(tag);
    let payload = Payload {
        msg: &combined,
        aad: &ad,
    };
    let result = match suite {
        CipherSuiteId::Gcm => Aes128Gcm::new(key.into()).decrypt(iv[..12].into(), payload),
        CipherSuiteId::Ccm => Aes128Ccm::new(key.into()).decrypt(iv[..13].into(), payload),
        CipherSuiteId::Eax => Aes128Eax::new(key.into()).decrypt(iv[..].into(), payload),
        CipherSuiteId::CbcCmac => return Err(CryptoError::InvalidKeyMaterial),
    };
    result.map_err(|_| CryptoError::TagMismatch)
}
