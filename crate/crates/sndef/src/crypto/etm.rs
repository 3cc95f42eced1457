//! Encrypt-then-MAC composition: AES-128-CBC with an AES-CMAC tag.
//!
//! The tag covers the cipher-spec label, the IV, and the ciphertext, in that
//! order. Verification happens in constant time and strictly before any
//! decryption; a record that fails the tag check is never fed to the block
//! cipher in decrypt direction.

use subtle::ConstantTimeEq;

use super::block::{cbc_decrypt, cbc_encrypt, pkcs7_pad, pkcs7_unpad, BlockCipher128, BLOCK_LEN};
use super::cmac::cmac;
use super::CryptoError;

fn tag_input(label: u8, iv: &[u8; BLOCK_LEN], ciphertext: &[u8]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(1 + BLOCK_LEN + ciphertext.len());
    buf.push(label);
    buf.extend_from_slice(iv);
    buf.extend_from_slice(ciphertext);
    buf
}

pub fn seal_with<E, M>(
    enc: &E,
    mac: &M,
    label: u8,
    iv: &[u8; BLOCK_LEN],
    plaintext: &[u8],
) -> (Vec<u8>, [u8; BLOCK_LEN])
where
    E: BlockCipher128,
    M: BlockCipher128,
{
    let mut buf = pkcs7_pad(plaintext);
    cbc_encrypt(enc, iv, &mut buf);
    let tag = cmac(mac, &tag_input(label, iv, &buf));
    (buf, tag)
}

pub fn unseal_with<E, M>(
    enc: &E,
    mac: &M,
    label: u8,
    iv: &[u8; BLOCK_LEN],
    ciphertext: &[u8],
    tag: &[u8; BLOCK_LEN],
) -> Result<Vec<u8>, CryptoError>
where
    E: BlockCipher128,
    M: BlockCipher128,
{
    if ciphertext.is_empty() || ciphertext.len() % BLOCK_LEN != 0 {
        return Err(CryptoError::InvalidLength);
    }
    let expected = cmac(mac, &tag_input(label, iv, ciphertext));
    if expected.ct_ne(tag).into() {
        return Err(CryptoError::TagMismatch);
    }
    let mut buf = ciphertext.to_vec();
    cbc_decrypt(enc, iv, &mut buf);
    pkcs7_unpad(buf)
}
