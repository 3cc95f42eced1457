//! Session key derivation.
//!
//! Key material is derived with HMAC-SHA256, keyed by the master key, over
//! the device additional data and both handshake nonces:
//!
//! ```text
//! K_d = HMAC-SHA256(K_M, dev_add_data || nonce_reader || nonce_device || pad)
//! ```
//!
//! where `pad` is a 0x80 byte followed by zeros up to the next 64-byte
//! boundary. HMAC shares no primitive with the AES-based authentication
//! step, so observing authentication traffic tells an attacker nothing
//! about the derivation inputs' images.

use hmac::{Hmac, Mac};
use sha2::Sha256;

use super::{MasterKey, Nonce128};

const PAD_BLOCK: usize = 64;

pub fn derive(
    master: &MasterKey,
    dev_add_data: &[u8],
    nonce_reader: &Nonce128,
    nonce_device: &Nonce128,
) -> [u8; 32] {
    let mut msg = Vec::with_capacity(dev_add_data.len() + 32 + PAD_BLOCK);
    msg.extend_from_slice(dev_add_data);
    msg.extend_from_slice(nonce_reader.as_bytes());
    msg.extend_from_slice(nonce_device.as_bytes());
    msg.push(0x80);
    msg.resize(msg.len().div_ceil(PAD_BLOCK) * PAD_BLOCK, 0);

    let mut mac = Hmac::<Sha256>::new_from_slice(master.as_bytes()).expect("any key size fits");
    mac.update(&msg);
    mac.finalize().into_bytes().into()
}
