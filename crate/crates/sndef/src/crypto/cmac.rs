//! AES-CMAC (RFC 4493) over the [`BlockCipher128`] trait.

use super::block::{BlockCipher128, BLOCK_LEN};

/// Doubling in GF(2^128) with the CMAC reduction polynomial.
fn dbl(block: [u8; BLOCK_LEN]) -> [u8; BLOCK_LEN] {
    let mut out = [0u8; BLOCK_LEN];
    let mut carry = 0u8;
    for i in (0..BLOCK_LEN).rev() {
        out[i] = (block[i] << 1) | carry;
        carry = block[i] >> 7;
    }
    if carry == 1 {
        out[BLOCK_LEN - 1] ^= 0x87;
    }
    out
}

fn subkeys<C: BlockCipher128>(cipher: &C) -> ([u8; BLOCK_LEN], [u8; BLOCK_LEN]) {
    let mut l = [0u8; BLOCK_LEN];
    cipher.encrypt_block(&mut l);
    let k1 = dbl(l);
    let k2 = dbl(k1);
    (k1, k2)
}

pub fn cmac<C: BlockCipher128>(cipher: &C, msg: &[u8]) -> [u8; BLOCK_LEN] {
    let (k1, k2) = subkeys(cipher);

    let n_blocks = msg.len().div_ceil(BLOCK_LEN).max(1);
    let mut state = [0u8; BLOCK_LEN];
    for i in 0..n_blocks - 1 {
        let chunk = &msg[i * BLOCK_LEN..(i + 1) * BLOCK_LEN];
        for (s, m) in state.iter_mut().zip(chunk) {
            *s ^= m;
        }
        cipher.encrypt_block(&mut state);
    }

    let tail = &msg[(n_blocks - 1) * BLOCK_LEN..];
    let mut last = [0u8; BLOCK_LEN];
    if tail.len() == BLOCK_LEN {
        last.copy_from_slice(tail);
        for (l, k) in last.iter_mut().zip(k1.iter()) {
            *l ^= k;
        }
    } else {
        last[..tail.len()].copy_from_slice(tail);
        last[tail.len()] = 0x80;
        for (l, k) in last.iter_mut().zip(k2.iter()) {
            *l ^= k;
        }
    }

    for (s, l) in state.iter_mut().zip(last.iter()) {
        *s ^= l;
    }
    cipher.encrypt_block(&mut state);
    state
}

#[cfg(test)]
mod tests {
    use super::super::block::AesBlock;
    use super::*;

    fn unhex(s: &str) -> Vec<u8> {
        hex::decode(s).unwrap()
    }

    // RFC 4493 section 4 test vectors
    #[test]
    fn rfc4493_vectors() {
        let key: [u8; 16] = unhex("2b7e151628aed2a6abf7158809cf4f3c").try_into().unwrap();
        let cipher = AesBlock::new(&key);
        let msg = unhex(
            "6bc1bee22e409f96e93d7e117393172a\
             ae2d8a571e03ac9c9eb76fac45af8e51\
             30c81c46a35ce411e5fbc1191a0a52ef\
             f69f2445df4f9b17ad2b417be66c3710",
        );
        let cases = [
            (0usize, "bb1d6929e95937287fa37d129b756746"),
            (16, "070a16b46b4d4144f79bdd9dd04a287c"),
            (40, "dfa66747de9ae63030ca32611497c827"),
            (64, "51f0bebf7e3b9d92fc49741779363cfe"),
        ];
        for (len, expected) in cases {
            assert_eq!(cmac(&cipher, &msg[..len]).to_vec(), unhex(expected), "len {len}");
        }
    }

    #[test]
    fn single_bit_changes_tag() {
        let cipher = AesBlock::new(&[0x42; 16]);
        let msg = vec![0x17u8; 50];
        let base = cmac(&cipher, &msg);
        for byte in 0..msg.len() {
            let mut m = msg.clone();
            m[byte] ^= 0x01;
            assert_ne!(cmac(&cipher, &m), base);
        }
    }
}
