//! Three-pass symmetric mutual authentication.
//!
//! Message shapes (all under the shared master key, CBC with a zero IV —
//! every plaintext starts with a fresh random nonce block):
//!
//! ```text
//! M1  reader -> device   nonce_R                              16 bytes, plain
//! M2  device -> reader   CBC(K_M, nonce_D || nonce_R)         32 bytes
//! M3  reader -> device   CBC(K_M, nonce_R || nonce_D)         32 bytes
//! ```
//!
//! M3 swaps the block order relative to M2, so a reflected M2 can never
//! verify. The CBC chaining makes the second block of each ciphertext depend
//! on the first, so the encryption of the challenge being answered never
//! appears on the wire as a single AES block. Both sides finish with
//! `seed = nonce_R || nonce_D` for session key derivation.

use rand::RngCore;
use subtle::ConstantTimeEq;
use thiserror::Error;

use crate::crypto::{
    cbc_decrypt, cbc_encrypt, random_nonce, validate_nonce, AesBlock, CryptoError, MasterKey,
    Nonce128, NONCE_LEN,
};

pub const M1_LEN: usize = 16;
pub const M2_LEN: usize = 32;
pub const M3_LEN: usize = 32;
pub const SEED_LEN: usize = 32;

const ZERO_IV: [u8; 16] = [0u8; 16];
const NONCE_REDRAWS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum AuthError {
    #[error("entropy source unavailable")]
    EntropyUnavailable,
    #[error("challenge nonce rejected by guard checks")]
    InvalidNonce,
    #[error("auth message has wrong length: expected {expected}, got {actual}")]
    MalformedMessage { expected: usize, actual: usize },
    #[error("challenge verification failed")]
    ChallengeMismatch,
    #[error("peer reflected our own ciphertext")]
    ReflectionDetected,
    #[error("operation not valid in phase {0:?}")]
    WrongPhase(AuthPhase),
}

impl From<CryptoError> for AuthError {
    fn from(err: CryptoError) -> Self {
        match err {
            CryptoError::InvalidNonce => AuthError::InvalidNonce,
            _ => AuthError::EntropyUnavailable,
        }
    }
}

/// Identity material shared by a reader/device pair.
#[derive(Debug, Clone)]
pub struct DeviceIdentity {
    pub device_serial: [u8; 8],
    pub master_key: MasterKey,
    /// Extra context bound into key derivation; defaults to the serial.
    pub dev_add_data: Vec<u8>,
}

impl DeviceIdentity {
    pub fn new(device_serial: [u8; 8], master_key: MasterKey) -> Self {
        DeviceIdentity {
            device_serial,
            master_key,
            dev_add_data: device_serial.to_vec(),
        }
    }
}

/// Handshake result: both nonces, in reader-then-device order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HandshakeSeed([u8; SEED_LEN]);

impl HandshakeSeed {
    pub fn from_nonces(nonce_reader: &Nonce128, nonce_device: &Nonce128) -> Self {
        let mut seed = [0u8; SEED_LEN];
        seed[..NONCE_LEN].copy_from_slice(nonce_reader.as_bytes());
        seed[NONCE_LEN..].copy_from_slice(nonce_device.as_bytes());
        HandshakeSeed(seed)
    }

    pub fn from_bytes(bytes: [u8; SEED_LEN]) -> Self {
        HandshakeSeed(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; SEED_LEN] {
        &self.0
    }

    pub fn nonce_reader(&self) -> Nonce128 {
        Nonce128::from_slice(&self.0[..NONCE_LEN]).unwrap()
    }

    pub fn nonce_device(&self) -> Nonce128 {
        Nonce128::from_slice(&self.0[NONCE_LEN..]).unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuthPhase {
    Idle,
    ChallengeSent,
    ChallengeReceived,
    Authenticated,
    Failed,
}

fn encrypt_pair(key: &MasterKey, first: &Nonce128, second: &Nonce128) -> [u8; 32] {
    let mut buf = [0u8; 32];
    buf[..16].copy_from_slice(first.as_bytes());
    buf[16..].copy_from_slice(second.as_bytes());
    cbc_encrypt(&AesBlock::new(key.as_bytes()), &ZERO_IV, &mut buf);
    buf
}

fn decrypt_pair(key: &MasterKey, msg: &[u8; 32]) -> (Nonce128, Nonce128) {
    let mut buf = *msg;
    cbc_decrypt(&AesBlock::new(key.as_bytes()), &ZERO_IV, &mut buf);
    (
        Nonce128::from_slice(&buf[..16]).unwrap(),
        Nonce128::from_slice(&buf[16..]).unwrap(),
    )
}

fn nonce_eq(a: &Nonce128, b: &Nonce128) -> bool {
    a.as_bytes().ct_eq(b.as_bytes()).into()
}

/// Reader-side handshake state machine.
#[derive(Debug)]
pub struct ReaderHandshake {
    identity: DeviceIdentity,
    phase: AuthPhase,
    own_nonce: Nonce128,
    peer_nonce: Option<Nonce128>,
}

impl ReaderHandshake {
    /// Start a handshake; returns the state machine and M1.
    pub fn begin(
        identity: &DeviceIdentity,
        rng: &mut dyn RngCore,
    ) -> Result<(Self, [u8; M1_LEN]), AuthError> {
        let own_nonce = random_nonce(rng)?;
        let handshake = ReaderHandshake {
            identity: identity.clone(),
            phase: AuthPhase::ChallengeSent,
            own_nonce,
            peer_nonce: None,
        };
        Ok((handshake, *own_nonce.as_bytes()))
    }

    pub fn phase(&self) -> AuthPhase {
        self.phase
    }

    /// Verify M2 and produce M3 plus the session seed.
    pub fn finish(&mut self, m2: &[u8]) -> Result<([u8; M3_LEN], HandshakeSeed), AuthError> {
        if self.phase != AuthPhase::ChallengeSent {
            return Err(AuthError::WrongPhase(self.phase));
        }
        let m2: [u8; M2_LEN] = m2.try_into().map_err(|_| {
            self.phase = AuthPhase::Failed;
            AuthError::MalformedMessage {
                expected: M2_LEN,
                actual: m2.len(),
            }
        })?;

        let (nonce_device, echoed) = decrypt_pair(&self.identity.master_key, &m2);
        if !nonce_eq(&echoed, &self.own_nonce) {
            self.phase = AuthPhase::Failed;
            return Err(AuthError::ChallengeMismatch);
        }
        if !validate_nonce(&nonce_device) || nonce_eq(&nonce_device, &self.own_nonce) {
            self.phase = AuthPhase::Failed;
            return Err(AuthError::InvalidNonce);
        }

        let m3 = encrypt_pair(&self.identity.master_key, &self.own_nonce, &nonce_device);
        if m3 == m2 {
            self.phase = AuthPhase::Failed;
            return Err(AuthError::ReflectionDetected);
        }

        self.peer_nonce = Some(nonce_device);
        self.phase = AuthPhase::Authenticated;
        Ok((m3, HandshakeSeed::from_nonces(&self.own_nonce, &nonce_device)))
    }
}

/// Device-side handshake state machine.
#[derive(Debug)]
pub struct DeviceHandshake {
    identity: DeviceIdentity,
    phase: AuthPhase,
    own_nonce: Nonce128,
    peer_nonce: Nonce128,
    sent_m2: [u8; M2_LEN],
}

impl DeviceHandshake {
    /// Answer M1; returns the state machine and M2.
    pub fn respond(
        identity: &DeviceIdentity,
        m1: &[u8],
        rng: &mut dyn RngCore,
    ) -> Result<(Self, [u8; M2_LEN]), AuthError> {
        let m1: [u8; M1_LEN] = m1.try_into().map_err(|_| AuthError::MalformedMessage {
            expected: M1_LEN,
            actual: m1.len(),
        })?;
        let peer_nonce = Nonce128::new(m1);
        if !validate_nonce(&peer_nonce) {
            return Err(AuthError::InvalidNonce);
        }

        let mut own_nonce = random_nonce(rng)?;
        let mut redraws = 0;
        while nonce_eq(&own_nonce, &peer_nonce) {
            redraws += 1;
            if redraws > NONCE_REDRAWS {
                return Err(AuthError::EntropyUnavailable);
            }
            own_nonce = random_nonce(rng)?;
        }

        let m2 = encrypt_pair(&identity.master_key, &own_nonce, &peer_nonce);
        let handshake = DeviceHandshake {
            identity: identity.clone(),
            phase: AuthPhase::ChallengeReceived,
            own_nonce,
            peer_nonce,
            sent_m2: m2,
        };
        Ok((handshake, m2))
    }

    pub fn phase(&self) -> AuthPhase {
        self.phase
    }

    /// The challenge this handshake is answering, for duplicate-M1 detection.
    pub fn peer_nonce(&self) -> &Nonce128 {
        &self.peer_nonce
    }

    pub fn sent_m2(&self) -> &[u8; M2_LEN] {
        &self.sent_m2
    }

    /// Verify M3 and produce the session seed.
    pub fn finish(&mut self, m3: &[u8]) -> Result<HandshakeSeed, AuthError> {
        if self.phase != AuthPhase::ChallengeReceived {
            return Err(AuthError::WrongPhase(self.phase));
        }
        let m3: [u8; M3_LEN] = m3.try_into().map_err(|_| {
            self.phase = AuthPhase::Failed;
            AuthError::MalformedMessage {
                expected: M3_LEN,
                actual: m3.len(),
            }
        })?;

        if m3 == self.sent_m2 {
            self.phase = AuthPhase::Failed;
            return Err(AuthError::ReflectionDetected);
        }

        let (first, second) = decrypt_pair(&self.identity.master_key, &m3);
        if !(nonce_eq(&first, &self.peer_nonce) && nonce_eq(&second, &self.own_nonce)) {
            self.phase = AuthPhase::Failed;
            return Err(AuthError::ChallengeMismatch);
        }

        self.phase = AuthPhase::Authenticated;
        Ok(HandshakeSeed::from_nonces(&self.peer_nonce, &self.own_nonce))
    }
}

/// Brute-force throttle for the device side: after
/// [`DeviceAuthGuard::MAX_FAILURES`] consecutive verification failures the
/// device stops answering handshakes until the backoff expires.
#[derive(Debug, Clone)]
pub struct DeviceAuthGuard {
    consecutive_failures: u32,
    locked_until_ms: Option<u64>,
    backoff_ms: u64,
}

impl DeviceAuthGuard {
    pub const MAX_FAILURES: u32 = 5;
    pub const DEFAULT_BACKOFF_MS: u64 = 1_000;

    pub fn new(backoff_ms: u64) -> Self {
        DeviceAuthGuard {
            consecutive_failures: 0,
            locked_until_ms: None,
            backoff_ms,
        }
    }

    pub fn is_locked(&mut self, now_ms: u64) -> bool {
        if let Some(until) = self.locked_until_ms {
            if now_ms >= until {
                self.locked_until_ms = None;
                self.consecutive_failures = 0;
            }
        }
        self.locked_until_ms.is_some()
    }

    pub fn record_failure(&mut self, now_ms: u64) {
        self.consecutive_failures += 1;
        if self.consecutive_failures >= Self::MAX_FAILURES {
            self.locked_until_ms = Some(now_ms + self.backoff_ms);
        }
    }

    pub fn record_success(&mut self) {
        self.consecutive_failures = 0;
    }
}

impl Default for DeviceAuthGuard {
    fn default() -> Self {
        DeviceAuthGuard::new(Self::DEFAULT_BACKOFF_MS)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    use crate::crypto::BlockCipher128;

    use super::*;

    fn identity(key_byte: u8) -> DeviceIdentity {
        DeviceIdentity::new(
            [0x10, 0x11, 0x12, 0x13, 0x14, 0x15, 0x16, 0x17],
            MasterKey::new([key_byte; 16]),
        )
    }

    fn run_handshake(
        reader_id: &DeviceIdentity,
        device_id: &DeviceIdentity,
        rng: &mut ChaCha20Rng,
    ) -> (
        Result<([u8; 32], HandshakeSeed), AuthError>,
        Option<(DeviceHandshake, [u8; 32], [u8; 16])>,
    ) {
        let (mut reader, m1) = ReaderHandshake::begin(reader_id, rng).unwrap();
        let (device, m2) = DeviceHandshake::respond(device_id, &m1, rng).unwrap();
        let result = reader.finish(&m2);
        (result, Some((device, m2, m1)))
    }

    #[test]
    fn honest_handshake_agrees_on_seed() {
        let id = identity(0x42);
        let mut rng = ChaCha20Rng::seed_from_u64(1);

        let (mut reader, m1) = ReaderHandshake::begin(&id, &mut rng).unwrap();
        assert_eq!(m1.len(), M1_LEN);
        assert_eq!(reader.phase(), AuthPhase::ChallengeSent);

        let (mut device, m2) = DeviceHandshake::respond(&id, &m1, &mut rng).unwrap();
        assert_eq!(m2.len(), M2_LEN);

        let (m3, reader_seed) = reader.finish(&m2).unwrap();
        assert_eq!(reader.phase(), AuthPhase::Authenticated);

        let device_seed = device.finish(&m3).unwrap();
        assert_eq!(device.phase(), AuthPhase::Authenticated);
        assert_eq!(reader_seed, device_seed);
        assert_eq!(&reader_seed.as_bytes()[..16], &m1);
    }

    #[test]
    fn begin_is_deterministic_under_a_seeded_rng() {
        let id = identity(0x42);
        let mut rng1 = ChaCha20Rng::seed_from_u64(7);
        let mut rng2 = ChaCha20Rng::seed_from_u64(7);
        let (_, m1a) = ReaderHandshake::begin(&id, &mut rng1).unwrap();
        let (_, m1b) = ReaderHandshake::begin(&id, &mut rng2).unwrap();
        assert_eq!(m1a, m1b);

        let mut direct = ChaCha20Rng::seed_from_u64(7);
        assert_eq!(
            Nonce128::new(m1a),
            random_nonce(&mut direct).unwrap(),
            "M1 is the rng's first valid 16 bytes"
        );
    }

    #[test]
    fn successive_handshakes_use_fresh_nonces() {
        let id = identity(0x42);
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let (_, m1a) = ReaderHandshake::begin(&id, &mut rng).unwrap();
        let (_, m1b) = ReaderHandshake::begin(&id, &mut rng).unwrap();
        assert_ne!(m1a, m1b);
    }

    #[test]
    fn device_rejects_guard_nonces_in_m1() {
        let id = identity(0x42);
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        assert_eq!(
            DeviceHandshake::respond(&id, &[0x00; 16], &mut rng).unwrap_err(),
            AuthError::InvalidNonce
        );
        assert_eq!(
            DeviceHandshake::respond(&id, &[0xFF; 16], &mut rng).unwrap_err(),
            AuthError::InvalidNonce
        );
        assert_eq!(
            DeviceHandshake::respond(&id, &[0x01; 15], &mut rng).unwrap_err(),
            AuthError::MalformedMessage {
                expected: 16,
                actual: 15
            }
        );
    }

    #[test]
    fn m2_decrypts_to_device_then_reader_nonce() {
        let id = identity(0x42);
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let (_, m1) = ReaderHandshake::begin(&id, &mut rng).unwrap();
        let (device, m2) = DeviceHandshake::respond(&id, &m1, &mut rng).unwrap();
        let (first, second) = decrypt_pair(&id.master_key, &m2);
        assert_eq!(second.as_bytes(), &m1);
        assert_eq!(&first, &device.own_nonce);
    }

    #[test]
    fn mismatched_master_keys_fail() {
        let reader_id = identity(0x42);
        let device_id = identity(0x43);
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let (result, _) = run_handshake(&reader_id, &device_id, &mut rng);
        assert_eq!(result.unwrap_err(), AuthError::ChallengeMismatch);
    }

    #[test]
    fn failure_is_terminal() {
        let reader_id = identity(0x42);
        let device_id = identity(0x43);
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let (mut reader, m1) = ReaderHandshake::begin(&reader_id, &mut rng).unwrap();
        let (_, m2) = DeviceHandshake::respond(&device_id, &m1, &mut rng).unwrap();
        assert!(reader.finish(&m2).is_err());
        assert_eq!(reader.phase(), AuthPhase::Failed);
        assert_eq!(
            reader.finish(&m2).unwrap_err(),
            AuthError::WrongPhase(AuthPhase::Failed)
        );
    }

    #[test]
    fn replayed_m2_fails_against_fresh_reader_nonce() {
        let id = identity(0x42);
        let mut rng = ChaCha20Rng::seed_from_u64(7);

        let (mut reader1, m1) = ReaderHandshake::begin(&id, &mut rng).unwrap();
        let (_, m2) = DeviceHandshake::respond(&id, &m1, &mut rng).unwrap();
        reader1.finish(&m2).unwrap();

        // a new handshake has a new nonce_R; the captured M2 embeds the old one
        let (mut reader2, _) = ReaderHandshake::begin(&id, &mut rng).unwrap();
        assert_eq!(reader2.finish(&m2).unwrap_err(), AuthError::ChallengeMismatch);
    }

    #[test]
    fn reflected_m2_as_m3_is_detected() {
        let id = identity(0x42);
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let (mut reader, m1) = ReaderHandshake::begin(&id, &mut rng).unwrap();
        let (mut device, m2) = DeviceHandshake::respond(&id, &m1, &mut rng).unwrap();
        reader.finish(&m2).unwrap();
        assert_eq!(device.finish(&m2).unwrap_err(), AuthError::ReflectionDetected);
        assert_eq!(device.phase(), AuthPhase::Failed);
    }

    #[test]
    fn random_m3_fuzz_never_authenticates() {
        let id = identity(0x42);
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        for _ in 0..500 {
            let (_, m1) = ReaderHandshake::begin(&id, &mut rng).unwrap();
            let (mut device, _) = DeviceHandshake::respond(&id, &m1, &mut rng).unwrap();
            let mut forged = [0u8; 32];
            rng.fill_bytes(&mut forged);
            assert!(device.finish(&forged).is_err());
            assert_ne!(device.phase(), AuthPhase::Authenticated);
        }
    }

    #[test]
    fn wire_blocks_never_expose_the_answered_challenge() {
        // Neither M2 nor M3 may contain a single-block AES encryption of the
        // challenge that the message answers.
        let id = identity(0x42);
        let mut rng = ChaCha20Rng::seed_from_u64(10);
        let cipher = AesBlock::new(id.master_key.as_bytes());
        for _ in 0..200 {
            let (mut reader, m1) = ReaderHandshake::begin(&id, &mut rng).unwrap();
            let (device, m2) = DeviceHandshake::respond(&id, &m1, &mut rng).unwrap();
            let (m3, _) = reader.finish(&m2).unwrap();

            let nonce_r = Nonce128::new(m1);
            let nonce_d = device.own_nonce;
            for chunk in m2.chunks_exact(16) {
                let mut block: [u8; 16] = chunk.try_into().unwrap();
                cipher.decrypt_block(&mut block);
                assert_ne!(&block, nonce_r.as_bytes(), "M2 leaks E(nonce_R)");
            }
            for chunk in m3.chunks_exact(16) {
                let mut block: [u8; 16] = chunk.try_into().unwrap();
                cipher.decrypt_block(&mut block);
                assert_ne!(&block, nonce_d.as_bytes(), "M3 leaks E(nonce_D)");
            }
        }
    }

    #[test]
    fn transcripts_are_pairwise_distinct() {
        let id = identity(0x42);
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let mut transcripts = std::collections::HashSet::new();
        let mut nonces = std::collections::HashSet::new();
        for _ in 0..1_000 {
            let (mut reader, m1) = ReaderHandshake::begin(&id, &mut rng).unwrap();
            let (mut device, m2) = DeviceHandshake::respond(&id, &m1, &mut rng).unwrap();
            let (m3, seed_r) = reader.finish(&m2).unwrap();
            let seed_d = device.finish(&m3).unwrap();
            assert_eq!(seed_r, seed_d);
            assert!(transcripts.insert((m1, m2, m3)), "transcript repeated");
            assert!(nonces.insert(m1), "reader nonce reused");
            assert!(nonces.insert(*device.own_nonce.as_bytes()), "device nonce reused");
        }
    }

    #[test]
    fn device_redraws_nonce_colliding_with_m1() {
        struct RepeatThen([u8; 16], [u8; 16], u32);
        impl RngCore for RepeatThen {
            fn next_u32(&mut self) -> u32 {
                unimplemented!()
            }
            fn next_u64(&mut self) -> u64 {
                unimplemented!()
            }
            fn fill_bytes(&mut self, dest: &mut [u8]) {
                let src = if self.2 == 0 { self.0 } else { self.1 };
                self.2 += 1;
                dest.copy_from_slice(&src);
            }
            fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
                self.fill_bytes(dest);
                Ok(())
            }
        }

        let id = identity(0x42);
        let m1 = [0x3C; 16];
        let mut rng = RepeatThen(m1, [0x77; 16], 0);
        let (device, _) = DeviceHandshake::respond(&id, &m1, &mut rng).unwrap();
        assert_eq!(device.own_nonce.as_bytes(), &[0x77; 16]);
    }

    #[test]
    fn guard_locks_after_five_failures_and_recovers() {
        let mut guard = DeviceAuthGuard::new(500);
        assert!(!guard.is_locked(0));
        for i in 0..4 {
            guard.record_failure(i);
            assert!(!guard.is_locked(i), "failure {i}");
        }
        guard.record_failure(10);
        assert!(guard.is_locked(10));
        assert!(guard.is_locked(509));
        assert!(!guard.is_locked(510));
        // counter reset after the backoff: five more needed to lock again
        guard.record_failure(600);
        assert!(!guard.is_locked(600));
    }
}
