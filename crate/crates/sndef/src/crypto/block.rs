//! 128-bit block cipher abstraction, CBC mode, and PKCS#7 padding.
//!
//! The cipher sits behind a two-method trait so the mode compositions stay
//! generic and tests can substitute an instrumented cipher.

use aes::cipher::{BlockDecrypt, BlockEncrypt, KeyInit};

use super::CryptoError;

pub const BLOCK_LEN: usize = 16;

/// A 128-bit block permutation and its inverse.
pub trait BlockCipher128 {
    fn encrypt_block(&self, block: &mut [u8; BLOCK_LEN]);
    fn decrypt_block(&self, block: &mut [u8; BLOCK_LEN]);
}

/// AES-128 backed by the `aes` crate.
pub struct AesBlock(aes::Aes128);

impl AesBlock {
    pub fn new(key: &[u8; BLOCK_LEN]) -> Self {
        #[cfg(test)]
        instrument::bump();
        AesBlock(aes::Aes128::new(key.into()))
    }
}

impl BlockCipher128 for AesBlock {
    fn encrypt_block(&self, block: &mut [u8; BLOCK_LEN]) {
        #[cfg(test)]
        instrument::bump();
        self.0.encrypt_block(block.into());
    }

    fn decrypt_block(&self, block: &mut [u8; BLOCK_LEN]) {
        #[cfg(test)]
        instrument::bump();
        self.0.decrypt_block(block.into());
    }
}

/// In-place CBC encryption. `buf` must be a whole number of blocks.
pub fn cbc_encrypt<C: BlockCipher128>(cipher: &C, iv: &[u8; BLOCK_LEN], buf: &mut [u8]) {
    assert_eq!(buf.len() % BLOCK_LEN, 0, "CBC input must be block-aligned");
    let mut chain = *iv;
    for block in buf.chunks_exact_mut(BLOCK_LEN) {
        let block: &mut [u8; BLOCK_LEN] = block.try_into().unwrap();
        for (b, c) in block.iter_mut().zip(chain.iter()) {
            *b ^= c;
        }
        cipher.encrypt_block(block);
        chain = *block;
    }
}

/// In-place CBC decryption. `buf` must be a whole number of blocks.
pub fn cbc_decrypt<C: BlockCipher128>(cipher: &C, iv: &[u8; BLOCK_LEN], buf: &mut [u8]) {
    assert_eq!(buf.len() % BLOCK_LEN, 0, "CBC input must be block-aligned");
    let mut chain = *iv;
    for block in buf.chunks_exact_mut(BLOCK_LEN) {
        let block: &mut [u8; BLOCK_LEN] = block.try_into().unwrap();
        let ct = *block;
        cipher.decrypt_block(block);
        for (b, c) in block.iter_mut().zip(chain.iter()) {
            *b ^= c;
        }
        chain = ct;
    }
}

/// PKCS#7: always appends 1..=16 bytes.
pub fn pkcs7_pad(data: &[u8]) -> Vec<u8> {
    let pad = BLOCK_LEN - data.len() % BLOCK_LEN;
    let mut out = Vec::with_capacity(data.len() + pad);
    out.extend_from_slice(data);
    out.resize(data.len() + pad, pad as u8);
    out
}

pub fn pkcs7_unpad(mut buf: Vec<u8>) -> Result<Vec<u8>, CryptoError> {
    let pad = *buf.last().ok_or(CryptoError::PaddingInvalid)? as usize;
    if pad == 0 || pad > BLOCK_LEN || pad > buf.len() {
        return Err(CryptoError::PaddingInvalid);
    }
    if buf[buf.len() - pad..].iter().any(|&b| b as usize != pad) {
        return Err(CryptoError::PaddingInvalid);
    }
    buf.truncate(buf.len() - pad);
    Ok(buf)
}


#[cfg(test)]
mod tests {
    use super::*;

    fn unhex(s: &str) -> Vec<u8> {
        hex::decode(s).unwrap()
    }

    // FIPS-197 appendix C.1
    #[test]
    fn aes128_known_answer() {
        let key: [u8; 16] = unhex("000102030405060708090a0b0c0d0e0f").try_into().unwrap();
        let cipher = AesBlock::new(&key);
        let mut block: [u8; 16] = unhex("00112233445566778899aabbccddeeff").try_into().unwrap();
        cipher.encrypt_block(&mut block);
        assert_eq!(block.to_vec(), unhex("69c4e0d86a7b0430d8cdb78070b4c55a"));
        cipher.decrypt_block(&mut block);
        assert_eq!(block.to_vec(), unhex("00112233445566778899aabbccddeeff"));
    }

    // NIST SP 800-38A, F.2.1 / F.2.2 (CBC-AES128)
    #[test]
    fn cbc_known_answer() {
        let key: [u8; 16] = unhex("2b7e151628aed2a6abf7158809cf4f3c").try_into().unwrap();
        let iv: [u8; 16] = unhex("000102030405060708090a0b0c0d0e0f").try_into().unwrap();
        let pt = unhex(
            "6bc1bee22e409f96e93d7e117393172a\
             ae2d8a571e03ac9c9eb76fac45af8e51\
             30c81c46a35ce411e5fbc1191a0a52ef\
             f69f2445df4f9b17ad2b417be66c3710",
        );
        let expected = unhex(
            "7649abac8119b246cee98e9b12e9197d\
             5086cb9b507219ee95db113a917678b2\
             73bed6b8e3c1743b7116e69e22229516\
             3ff1caa1681fac09120eca307586e1a7",
        );
        let cipher = AesBlock::new(&key);
        let mut buf = pt.clone();
        cbc_encrypt(&cipher, &iv, &mut buf);
        assert_eq!(buf, expected);
        cbc_decrypt(&cipher, &iv, &mut buf);
        assert_eq!(buf, pt);
    }

    #[test]
    fn pkcs7_roundtrip_all_tails() {
        for n in 0..64 {
            let data: Vec<u8> = (0..n as u8).collect();
            let padded = pkcs7_pad(&data);
            assert_eq!(padded.len() % BLOCK_LEN, 0);
            assert!(padded.len() > data.len());
            assert_eq!(pkcs7_unpad(padded).unwrap(), data);
        }
    }

    #[test]
    fn pkcs7_rejects_bad_tails() {
        assert_eq!(pkcs7_unpad(vec![]), Err(CryptoError::PaddingInvalid));
        assert_eq!(pkcs7_unpad(vec![0u8; 16]), Err(CryptoError::PaddingInvalid));
        let mut buf = pkcs7_pad(b"abc");
        let last = buf.len() - 1;
        buf[last] = 17;
        assert_eq!(pkcs7_unpad(buf), Err(CryptoError::PaddingInvalid));
        // pad byte claims more than the buffer holds
        assert_eq!(pkcs7_unpad(vec![5u8, 5, 5]), Err(CryptoError::PaddingInvalid));
    }
}
