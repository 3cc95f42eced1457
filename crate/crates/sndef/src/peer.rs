//! Protocol drivers: the reader and BMS endpoints that run the full
//! handshake-then-readout flow over a simulated link.
//!
//! The reader polls with AUTH1 until the device answers (an On-Rest pack
//! needs its wake latency first), finishes the handshake, opens the secure
//! channel, and exchanges DATA frames. The device answers handshakes, serves
//! status reads, and applies configuration updates. Both sides keep witness
//! copies of every plaintext they sealed or accepted so a harness can check
//! attack containment after the run.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::auth::{AuthPhase, DeviceAuthGuard, DeviceHandshake, DeviceIdentity, ReaderHandshake};
use crate::codec::{self, CipherSuiteId, MessageType};
use crate::device::{BatteryPackState, BmsDevice, DeviceError, Scenario};
use crate::session::{Session, SessionMode};
use crate::transport::{Endpoint, Frame, FrameType, LinkCtx, Role};

pub const DEFAULT_POLL_INTERVAL_MS: u64 = 25;
pub const DEFAULT_DEADLINE_MS: u64 = 400;

/// Link-level negative acknowledgement codes (NAK frame payload).
pub mod nak {
    pub const AUTH_FAILED: u8 = 0x01;
    pub const LOCKED_OUT: u8 = 0x02;
    pub const MALFORMED: u8 = 0x03;
    pub const CHANNEL_REJECTED: u8 = 0x04;
    pub const WRITE_DENIED: u8 = 0x05;
    pub const UNEXPECTED: u8 = 0x06;

    pub fn describe(code: u8) -> &'static str {
        match code {
            AUTH_FAILED => "authentication failed",
            LOCKED_OUT => "device locked out",
            MALFORMED => "malformed frame",
            CHANNEL_REJECTED => "secure channel rejected the record",
            WRITE_DENIED => "write denied",
            UNEXPECTED => "unexpected frame",
            _ => "unknown",
        }
    }
}

/// Application-level error codes carried in sealed ERROR messages.
pub mod error_code {
    pub const GENERIC: u8 = 0x00;
    pub const UNKNOWN_CONFIG_KEY: u8 = 0x01;
    pub const VALUE_TOO_LONG: u8 = 0x02;
    pub const INVALID_VALUE: u8 = 0x03;
    pub const MALFORMED_REQUEST: u8 = 0x04;

    pub fn from_device_error(err: &super::DeviceError) -> u8 {
        match err {
            super::DeviceError::UnknownConfigKey(_) => UNKNOWN_CONFIG_KEY,
            super::DeviceError::ValueTooLong(_) => VALUE_TOO_LONG,
            super::DeviceError::InvalidValue { .. } => INVALID_VALUE,
            _ => GENERIC,
        }
    }
}

/// How a readout run ended.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReadoutOutcome {
    Success,
    Rejected { phase: FailurePhase, reason: String },
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FailurePhase {
    Auth,
    Channel,
}

/// Witness record of a plaintext that crossed the channel boundary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlainWitness {
    pub message_type: MessageType,
    pub encoded: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ReaderPhase {
    AwaitAuth2,
    AwaitStatus,
    AwaitAck,
    Done,
}

const TIMER_RETRANSMIT: u32 = 1;
const TIMER_DEADLINE: u32 = 2;

pub struct ReaderConfig {
    pub identity: DeviceIdentity,
    pub suite: CipherSuiteId,
    pub mode: SessionMode,
    /// Optional configuration write performed after the status read.
    pub update: Option<(u16, Vec<u8>)>,
    pub raise_field: bool,
    pub poll_interval_ms: u64,
    pub deadline_ms: u64,
    pub seed: u64,
}

impl ReaderConfig {
    pub fn new(identity: DeviceIdentity, suite: CipherSuiteId, seed: u64) -> Self {
        ReaderConfig {
            identity,
            suite,
            mode: SessionMode::ReadOnly,
            update: None,
            raise_field: true,
            poll_interval_ms: DEFAULT_POLL_INTERVAL_MS,
            deadline_ms: DEFAULT_DEADLINE_MS,
            seed,
        }
    }
}

/// The mobile-reader endpoint.
pub struct ReaderPeer {
    config: ReaderConfig,
    rng: ChaCha20Rng,
    phase: ReaderPhase,
    handshake: Option<ReaderHandshake>,
    m1: Option<[u8; 16]>,
    session: Option<Session>,
    outcome: Option<ReadoutOutcome>,
    outcome_tick: Option<u64>,
    telemetry: Option<BatteryPackState>,
    ack_version: Option<u32>,
    sent: Vec<PlainWitness>,
    accepted: Vec<PlainWitness>,
}

impl ReaderPeer {
    pub fn new(config: ReaderConfig) -> Self {
        let rng = ChaCha20Rng::seed_from_u64(config.seed);
        ReaderPeer {
            config,
            rng,
            phase: ReaderPhase::AwaitAuth2,
            handshake: None,
            m1: None,
            session: None,
            outcome: None,
            outcome_tick: None,
            telemetry: None,
            ack_version: None,
            sent: Vec::new(),
            accepted: Vec::new(),
        }
    }

    pub fn outcome(&self) -> Option<&ReadoutOutcome> {
        self.outcome.as_ref()
    }

    pub fn outcome_tick(&self) -> Option<u64> {
        self.outcome_tick
    }

    pub fn telemetry(&self) -> Option<&BatteryPackState> {
        self.telemetry.as_ref()
    }

    pub fn ack_version(&self) -> Option<u32> {
        self.ack_version
    }

    pub fn sent_plaintexts(&self) -> &[PlainWitness] {
        &self.sent
    }

    pub fn accepted_plaintexts(&self) -> &[PlainWitness] {
        &self.accepted
    }

    fn finish_run(&mut self, outcome: ReadoutOutcome, ctx: &mut LinkCtx<'_>) {
        if self.outcome.is_none() {
            ctx.log_event(match &outcome {
                ReadoutOutcome::Success => "reader done: success".to_string(),
                ReadoutOutcome::Rejected { phase, reason } => {
                    format!("reader done: rejected ({phase:?}: {reason})")
                }
                ReadoutOutcome::Timeout => "reader timeout".to_string(),
            });
            self.outcome = Some(outcome);
            self.outcome_tick = Some(ctx.now_ms());
        }
        self.phase = ReaderPhase::Done;
        if let Some(session) = self.session.as_mut() {
            session.close();
        }
    }

    fn send_sealed(
        &mut self,
        message_type: MessageType,
        data: &[u8],
        ctx: &mut LinkCtx<'_>,
    ) -> bool {
        let session = self.session.as_mut().expect("session open");
        match session.seal_message(message_type, data, &mut self.rng) {
            Ok((record, msg)) => {
                let wire = codec::encode_record(&record).expect("sealed record encodes");
                self.sent.push(PlainWitness {
                    message_type,
                    encoded: codec::encode_plain(&msg).expect("witness encodes"),
                });
                ctx.send(FrameType::Data, wire).is_ok()
            }
            Err(err) => {
                self.finish_run(
                    ReadoutOutcome::Rejected {
                        phase: FailurePhase::Channel,
                        reason: err.to_string(),
                    },
                    ctx,
                );
                false
            }
        }
    }
}

impl Endpoint for ReaderPeer {
    fn role(&self) -> Role {
        Role::Reader
    }

    fn on_attach(&mut self, ctx: &mut LinkCtx<'_>) {
        if self.config.raise_field {
            ctx.set_field(true);
        }
        ctx.set_timer(self.config.deadline_ms, TIMER_DEADLINE);
        match ReaderHandshake::begin(&self.config.identity, &mut self.rng) {
            Ok((handshake, m1)) => {
                self.handshake = Some(handshake);
                self.m1 = Some(m1);
                let _ = ctx.send(FrameType::Auth1, m1.to_vec());
                ctx.set_timer(self.config.poll_interval_ms, TIMER_RETRANSMIT);
            }
            Err(err) => {
                self.finish_run(
                    ReadoutOutcome::Rejected {
                        phase: FailurePhase::Auth,
                        reason: err.to_string(),
                    },
                    ctx,
                );
            }
        }
    }

    fn on_timer(&mut self, id: u32, ctx: &mut LinkCtx<'_>) {
        match id {
            TIMER_RETRANSMIT => {
                if self.phase == ReaderPhase::AwaitAuth2 && self.outcome.is_none() {
                    if let Some(m1) = self.m1 {
                        ctx.log_event("reader repolls with AUTH1");
                        let _ = ctx.send(FrameType::Auth1, m1.to_vec());
                    }
                    if ctx.now_ms() + self.config.poll_interval_ms < self.config.deadline_ms {
                        ctx.set_timer(self.config.poll_interval_ms, TIMER_RETRANSMIT);
                    }
                }
            }
            TIMER_DEADLINE => {
                if self.phase != ReaderPhase::Done {
                    self.finish_run(ReadoutOutcome::Timeout, ctx);
                }
            }
            _ => {}
        }
    }

    fn on_frame(&mut self, frame: Frame, ctx: &mut LinkCtx<'_>) {
        match (frame.frame_type, self.phase) {
            (FrameType::Auth2, ReaderPhase::AwaitAuth2) => {
                let handshake = self.handshake.as_mut().expect("handshake in flight");
                match handshake.finish(&frame.payload) {
                    Ok((m3, seed)) => {
                        match Session::open(
                            &seed,
                            &self.config.identity,
                            self.config.suite,
                            self.config.mode,
                        ) {
                            Ok(session) => {
                                self.session = Some(session);
                                ctx.log_event("reader authenticated");
                                let mut auth3 = m3.to_vec();
                                auth3.push(self.config.mode.code());
                                auth3.push(self.config.suite.code());
                                let _ = ctx.send(FrameType::Auth3, auth3);
                                self.phase = ReaderPhase::AwaitStatus;
                                self.send_sealed(MessageType::ReadStatus, &[], ctx);
                            }
                            Err(err) => self.finish_run(
                                ReadoutOutcome::Rejected {
                                    phase: FailurePhase::Auth,
                                    reason: err.to_string(),
                                },
                                ctx,
                            ),
                        }
                    }
                    Err(err) => {
                        ctx.log_event(format!("reader auth failed: {err}"));
                        self.finish_run(
                            ReadoutOutcome::Rejected {
                                phase: FailurePhase::Auth,
                                reason: err.to_string(),
                            },
                            ctx,
                        );
                    }
                }
            }
            (FrameType::Data, ReaderPhase::AwaitStatus | ReaderPhase::AwaitAck) => {
                let session = self.session.as_mut().expect("session open");
                let record = match codec::decode_record(&frame.payload) {
                    Ok(record) => record,
                    Err(err) => {
                        ctx.log_event(format!("reader rejected record: {err}"));
                        self.finish_run(
                            ReadoutOutcome::Rejected {
                                phase: FailurePhase::Channel,
                                reason: err.to_string(),
                            },
                            ctx,
                        );
                        return;
                    }
                };
                let msg = match session.open_message(&record) {
                    Ok(msg) => msg,
                    Err(err) => {
                        ctx.log_event(format!("reader rejected record: {err}"));
                        self.finish_run(
                            ReadoutOutcome::Rejected {
                                phase: FailurePhase::Channel,
                                reason: err.to_string(),
                            },
                            ctx,
                        );
                        return;
                    }
                };
                self.accepted.push(PlainWitness {
                    message_type: msg.message_type,
                    encoded: codec::encode_plain(&msg).expect("accepted message re-encodes"),
                });
                match (msg.message_type, self.phase) {
                    (MessageType::StatusData, ReaderPhase::AwaitStatus) => {
                        match BatteryPackState::parse_status(&msg.data) {
                            Ok(pack) => {
                                ctx.log_event("reader parsed telemetry");
                                self.telemetry = Some(pack);
                                if let Some((key, value)) = self.config.update.clone() {
                                    let mut data = key.to_be_bytes().to_vec();
                                    data.extend_from_slice(&value);
                                    self.phase = ReaderPhase::AwaitAck;
                                    self.send_sealed(MessageType::UpdateConfig, &data, ctx);
                                } else {
                                    self.finish_run(ReadoutOutcome::Success, ctx);
                                }
                            }
                            Err(err) => self.finish_run(
                                ReadoutOutcome::Rejected {
                                    phase: FailurePhase::Channel,
                                    reason: err.to_string(),
                                },
                                ctx,
                            ),
                        }
                    }
                    (MessageType::Ack, ReaderPhase::AwaitAck) => {
                        let version = msg
                            .data
                            .as_slice()
                            .try_into()
                            .map(u32::from_be_bytes)
                            .ok();
                        self.ack_version = version;
                        ctx.log_event(format!(
                            "reader received config ack (version {})",
                            version.map_or("?".to_string(), |v| v.to_string())
                        ));
                        self.finish_run(ReadoutOutcome::Success, ctx);
                    }
                    (MessageType::Error, _) => {
                        let code = msg.data.first().copied().unwrap_or(error_code::GENERIC);
                        self.finish_run(
                            ReadoutOutcome::Rejected {
                                phase: FailurePhase::Channel,
                                reason: format!("device error code {code:#04x}"),
                            },
                            ctx,
                        );
                    }
                    _ => {
                        ctx.log_event("reader ignored unexpected message type");
                    }
                }
            }
            (FrameType::Nak, _) => {
                if self.phase == ReaderPhase::Done {
                    ctx.log_event("reader ignored NAK after completion");
                    return;
                }
                let code = frame.payload.first().copied().unwrap_or(0);
                let phase = if matches!(code, nak::AUTH_FAILED | nak::LOCKED_OUT)
                    || self.phase == ReaderPhase::AwaitAuth2
                {
                    FailurePhase::Auth
                } else {
                    FailurePhase::Channel
                };
                self.finish_run(
                    ReadoutOutcome::Rejected {
                        phase,
                        reason: nak::describe(code).to_string(),
                    },
                    ctx,
                );
            }
            _ => {
                ctx.log_event(format!(
                    "reader ignored {:?} frame in phase {:?}",
                    frame.frame_type, self.phase
                ));
            }
        }
    }
}

/// The BMS endpoint: device model plus protocol state.
pub struct DevicePeer {
    identity: DeviceIdentity,
    device: BmsDevice,
    guard: DeviceAuthGuard,
    rng: ChaCha20Rng,
    handshake: Option<DeviceHandshake>,
    session: Option<Session>,
    wake_pending: bool,
    sent: Vec<PlainWitness>,
    accepted: Vec<PlainWitness>,
}

impl DevicePeer {
    pub fn new(identity: DeviceIdentity, device: BmsDevice, seed: u64) -> Self {
        DevicePeer {
            identity,
            device,
            guard: DeviceAuthGuard::default(),
            rng: ChaCha20Rng::seed_from_u64(seed),
            handshake: None,
            session: None,
            wake_pending: false,
            sent: Vec::new(),
            accepted: Vec::new(),
        }
    }

    pub fn device(&self) -> &BmsDevice {
        &self.device
    }

    pub fn device_mut(&mut self) -> &mut BmsDevice {
        &mut self.device
    }

    pub fn sent_plaintexts(&self) -> &[PlainWitness] {
        &self.sent
    }

    pub fn accepted_plaintexts(&self) -> &[PlainWitness] {
        &self.accepted
    }

    fn send_nak(&mut self, code: u8, ctx: &mut LinkCtx<'_>) {
        let _ = ctx.send(FrameType::Nak, vec![code]);
    }

    fn send_sealed(&mut self, message_type: MessageType, data: &[u8], ctx: &mut LinkCtx<'_>) {
        let session = self.session.as_mut().expect("session open");
        match session.seal_message(message_type, data, &mut self.rng) {
            Ok((record, msg)) => {
                let wire = codec::encode_record(&record).expect("sealed record encodes");
                self.sent.push(PlainWitness {
                    message_type,
                    encoded: codec::encode_plain(&msg).expect("witness encodes"),
                });
                let _ = ctx.send(FrameType::Data, wire);
            }
            Err(err) => {
                ctx.log_event(format!("device seal failed: {err}"));
                self.send_nak(nak::CHANNEL_REJECTED, ctx);
            }
        }
    }

    fn handle_auth1(&mut self, payload: &[u8], ctx: &mut LinkCtx<'_>) {
        if self.guard.is_locked(ctx.now_ms()) {
            ctx.log_event("device locked out, challenge refused");
            self.send_nak(nak::LOCKED_OUT, ctx);
            return;
        }
        // a repolled challenge for the handshake already in flight gets the
        // cached response
        if let Some(handshake) = &self.handshake {
            if handshake.peer_nonce().as_bytes().as_slice() == payload {
                match handshake.phase() {
                    AuthPhase::ChallengeReceived => {
                        ctx.log_event("device resends challenge response");
                        let m2 = *handshake.sent_m2();
                        let _ = ctx.send(FrameType::Auth2, m2.to_vec());
                    }
                    _ => ctx.log_event("device ignored stale challenge"),
                }
                return;
            }
        }
        // fresh challenge: any previous session is torn down
        self.session = None;
        match DeviceHandshake::respond(&self.identity, payload, &mut self.rng) {
            Ok((handshake, m2)) => {
                self.handshake = Some(handshake);
                let _ = ctx.send(FrameType::Auth2, m2.to_vec());
            }
            Err(err) => {
                ctx.log_event(format!("device rejected challenge: {err}"));
                self.send_nak(nak::MALFORMED, ctx);
            }
        }
    }

    fn handle_auth3(&mut self, payload: &[u8], ctx: &mut LinkCtx<'_>) {
        let Some(handshake) = self.handshake.as_mut() else {
            self.send_nak(nak::UNEXPECTED, ctx);
            return;
        };
        if payload.len() != 34 {
            ctx.log_event(format!("device rejected AUTH3 of {} bytes", payload.len()));
            self.send_nak(nak::MALFORMED, ctx);
            return;
        }
        let (m3, trailer) = payload.split_at(32);
        let Some(mode) = SessionMode::from_code(trailer[0]) else {
            self.send_nak(nak::MALFORMED, ctx);
            return;
        };
        let Some(suite) = CipherSuiteId::from_code(trailer[1]) else {
            self.send_nak(nak::MALFORMED, ctx);
            return;
        };
        match handshake.finish(m3) {
            Ok(seed) => match Session::open(&seed, &self.identity, suite, mode) {
                Ok(session) => {
                    self.guard.record_success();
                    self.session = Some(session);
                    ctx.log_event(format!(
                        "device authenticated (suite={}, mode={})",
                        suite.name(),
                        match mode {
                            SessionMode::ReadOnly => "read-only",
                            SessionMode::ReadWrite => "read-write",
                        }
                    ));
                }
                Err(err) => {
                    ctx.log_event(format!("device session open failed: {err}"));
                    self.send_nak(nak::AUTH_FAILED, ctx);
                }
            },
            Err(err) => {
                ctx.log_event(format!("device auth failed: {err}"));
                self.guard.record_failure(ctx.now_ms());
                self.handshake = None;
                self.send_nak(nak::AUTH_FAILED, ctx);
            }
        }
    }

    fn handle_data(&mut self, payload: &[u8], ctx: &mut LinkCtx<'_>) {
        let Some(session) = self.session.as_mut() else {
            self.send_nak(nak::UNEXPECTED, ctx);
            return;
        };
        let record = match codec::decode_record(payload) {
            Ok(record) => record,
            Err(err) => {
                ctx.log_event(format!("device rejected record: {err}"));
                self.send_nak(nak::CHANNEL_REJECTED, ctx);
                return;
            }
        };
        let msg = match session.open_message(&record) {
            Ok(msg) => msg,
            Err(err) => {
                ctx.log_event(format!("device rejected record: {err}"));
                self.send_nak(nak::CHANNEL_REJECTED, ctx);
                return;
            }
        };
        self.accepted.push(PlainWitness {
            message_type: msg.message_type,
            encoded: codec::encode_plain(&msg).expect("accepted message re-encodes"),
        });

        match msg.message_type {
            MessageType::ReadStatus => match self.device.read_status() {
                Ok(status) => {
                    ctx.log_event("device serving status read");
                    self.send_sealed(MessageType::StatusData, &status, ctx);
                }
                Err(err) => {
                    ctx.log_event(format!("device status read failed: {err}"));
                    self.send_sealed(MessageType::Error, &[error_code::GENERIC], ctx);
                }
            },
            MessageType::UpdateConfig => {
                let mode = self.session.as_ref().expect("session open").mode();
                if mode == SessionMode::ReadOnly {
                    ctx.log_event("device denied write in read-only session");
                    self.send_nak(nak::WRITE_DENIED, ctx);
                    return;
                }
                if msg.data.len() < 2 {
                    self.send_sealed(MessageType::Error, &[error_code::MALFORMED_REQUEST], ctx);
                    return;
                }
                let key = u16::from_be_bytes([msg.data[0], msg.data[1]]);
                match self.device.apply_config(key, &msg.data[2..]) {
                    Ok(version) => {
                        ctx.log_event(format!("device config updated to version {version}"));
                        self.send_sealed(MessageType::Ack, &version.to_be_bytes(), ctx);
                    }
                    Err(err) => {
                        ctx.log_event(format!("device config update rejected: {err}"));
                        self.send_sealed(
                            MessageType::Error,
                            &[error_code::from_device_error(&err)],
                            ctx,
                        );
                    }
                }
            }
            _ => {
                ctx.log_event(format!(
                    "device ignored unexpected message type {:?}",
                    msg.message_type
                ));
                self.send_nak(nak::UNEXPECTED, ctx);
            }
        }
    }
}

impl Endpoint for DevicePeer {
    fn role(&self) -> Role {
        Role::Device
    }

    fn on_field(&mut self, on: bool, ctx: &mut LinkCtx<'_>) {
        if on {
            if self.device.scenario() == Scenario::OnRest
                && !self.device.is_powered()
                && !self.wake_pending
            {
                self.wake_pending = true;
                ctx.log_event(format!(
                    "device wake started ({} ms)",
                    self.device.wake_latency_ms()
                ));
                ctx.schedule_power_ready(self.device.wake_latency_ms());
            }
        } else {
            self.wake_pending = false;
            if self.session.take().is_some() || self.handshake.take().is_some() {
                ctx.log_event("device session aborted: field lost");
            }
            self.device.field_lost();
        }
    }

    fn on_power_ready(&mut self, ctx: &mut LinkCtx<'_>) {
        if self.wake_pending {
            self.wake_pending = false;
            self.device.power_on();
            ctx.log_event("device powered");
        }
    }

    fn on_frame(&mut self, frame: Frame, ctx: &mut LinkCtx<'_>) {
        match frame.frame_type {
            FrameType::Auth1 => self.handle_auth1(&frame.payload, ctx),
            FrameType::Auth3 => self.handle_auth3(&frame.payload, ctx),
            FrameType::Data => self.handle_data(&frame.payload, ctx),
            FrameType::Auth2 | FrameType::Nak => {
                ctx.log_event(format!("device ignored {:?} frame", frame.frame_type));
            }
        }
    }

    fn is_powered(&self) -> bool {
        self.device.is_powered()
    }
}
