//! Simulated NFC link between reader and tag: a bounded mailbox with field
//! power semantics, a deterministic discrete-event clock, and a pluggable
//! adversary pipeline.
//!
//! Everything runs on simulated milliseconds. Identical inputs (endpoints,
//! adversary config, seeds) produce byte-identical audit logs; wall-clock
//! time never enters the log.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use thiserror::Error;

use crate::codec::CipherSuiteId;

/// Tag mailbox capacity; frames above this size never leave the sender.
pub const MAX_FRAME_PAYLOAD: usize = 256;
pub const DEFAULT_LINK_LATENCY_MS: u64 = 5;
pub const DEFAULT_LIVELOCK_BOUND: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Role {
    Reader,
    Device,
}

impl Role {
    pub fn peer(self) -> Role {
        match self {
            Role::Reader => Role::Device,
            Role::Device => Role::Reader,
        }
    }

    fn direction(self) -> &'static str {
        match self {
            Role::Reader => "reader->device",
            Role::Device => "device->reader",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FrameType {
    Auth1,
    Auth2,
    Auth3,
    Data,
    Nak,
}

impl FrameType {
    fn name(self) -> &'static str {
        match self {
            FrameType::Auth1 => "AUTH1",
            FrameType::Auth2 => "AUTH2",
            FrameType::Auth3 => "AUTH3",
            FrameType::Data => "DATA",
            FrameType::Nak => "NAK",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub frame_type: FrameType,
    pub payload: Vec<u8>,
    /// Simulated send time.
    pub timestamp_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("frame payload of {0} bytes exceeds the {MAX_FRAME_PAYLOAD}-byte mailbox")]
    FrameTooLarge(usize),
    #[error("endpoint is not powered")]
    EndpointUnpowered,
    #[error("event count exceeded the livelock bound of {bound}")]
    LivelockDetected { bound: usize },
}

/// One adversary is active per link per run.
#[derive(Debug, Clone, PartialEq)]
pub enum AdversaryConfig {
    None,
    /// Passive capture of every frame.
    Eavesdrop,
    /// Flip one bit of the nth DATA frame (0-based; offset wraps modulo the
    /// frame length).
    TamperBit { bit_offset: usize, nth_data_frame: usize },
    /// Deliver the nth DATA frame twice.
    Replay { nth_data_frame: usize },
    /// Rewrite the cipher-spec byte of every DATA frame.
    Downgrade { target: CipherSuiteId },
    /// Drop each frame with the given probability.
    Drop { probability: f64 },
}

impl AdversaryConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            AdversaryConfig::None => "none",
            AdversaryConfig::Eavesdrop => "eavesdrop",
            AdversaryConfig::TamperBit { .. } => "tamper",
            AdversaryConfig::Replay { .. } => "replay",
            AdversaryConfig::Downgrade { .. } => "downgrade",
            AdversaryConfig::Drop { .. } => "drop",
        }
    }
}

/// Offset of the cipher-spec byte inside an encoded DATA frame payload:
/// 3 envelope bytes plus the 5-byte type name.
const SUITE_BYTE_OFFSET: usize = 8;

pub struct AdversaryState {
    config: AdversaryConfig,
    rng: ChaCha20Rng,
    data_frames_seen: usize,
    captures: Vec<Vec<u8>>,
}

impl AdversaryState {
    fn new(config: AdversaryConfig, seed: u64) -> Self {
        AdversaryState {
            config,
            rng: ChaCha20Rng::seed_from_u64(seed),
            data_frames_seen: 0,
            captures: Vec::new(),
        }
    }

    /// Captured frame payloads (Eavesdrop only).
    pub fn captures(&self) -> &[Vec<u8>] {
        &self.captures
    }

    /// Returns the frames to deliver (possibly none, possibly duplicated)
    /// and a description of the action taken, if any.
    fn process(&mut self, frame: Frame) -> (Vec<Frame>, Option<String>) {
        let is_data = frame.frame_type == FrameType::Data;
        let data_index = self.data_frames_seen;
        if is_data {
            self.data_frames_seen += 1;
        }
        match &self.config {
            AdversaryConfig::None => (vec![frame], None),
            AdversaryConfig::Eavesdrop => {
                self.captures.push(frame.payload.clone());
                let action = format!("eavesdrop: captured {} bytes", frame.payload.len());
                (vec![frame], Some(action))
            }
            AdversaryConfig::TamperBit {
                bit_offset,
                nth_data_frame,
            } => {
                if is_data && data_index == *nth_data_frame && !frame.payload.is_empty() {
                    let bit = bit_offset % (frame.payload.len() * 8);
                    let mut frame = frame;
                    frame.payload[bit / 8] ^= 1 << (bit % 8);
                    let action = format!("tamper: flipped bit {bit} of DATA frame {data_index}");
                    (vec![frame], Some(action))
                } else {
                    (vec![frame], None)
                }
            }
            AdversaryConfig::Replay { nth_data_frame } => {
                if is_data && data_index == *nth_data_frame {
                    let copy = frame.clone();
                    let action = format!("replay: duplicated DATA frame {data_index}");
                    (vec![frame, copy], Some(action))
                } else {
                    (vec![frame], None)
                }
            }
            AdversaryConfig::Downgrade { target } => {
                if is_data && frame.payload.len() > SUITE_BYTE_OFFSET {
                    let mut frame = frame;
                    let old = frame.payload[SUITE_BYTE_OFFSET];
                    frame.payload[SUITE_BYTE_OFFSET] = target.code();
                    let action = format!(
                        "downgrade: suite byte {:#04x} -> {:#04x} on DATA frame {data_index}",
                        old,
                        target.code()
                    );
                    (vec![frame], Some(action))
                } else {
                    (vec![frame], None)
                }
            }
            AdversaryConfig::Drop { probability } => {
                if self.rng.gen::<f64>() < *probability {
                    let action = format!("drop: {} frame discarded", frame.frame_type.name());
                    (vec![], Some(action))
                } else {
                    (vec![frame], None)
                }
            }
        }
    }
}

/// One line of the link's ordered audit log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AuditEntry {
    pub tick: u64,
    pub direction: Option<&'static str>,
    pub frame_type: Option<&'static str>,
    pub payload_hex: Option<String>,
    pub adversary_action: Option<String>,
    pub endpoint_event: Option<String>,
}

impl AuditEntry {
    fn at(tick: u64) -> Self {
        AuditEntry {
            tick,
            direction: None,
            frame_type: None,
            payload_hex: None,
            adversary_action: None,
            endpoint_event: None,
        }
    }
}

/// Serialize an audit log as line-delimited JSON.
pub fn audit_to_json_lines(entries: &[AuditEntry]) -> String {
    let mut out = String::new();
    for entry in entries {
        out.push_str(&serde_json::to_string(entry).expect("audit entries always serialize"));
        out.push('\n');
    }
    out
}

#[derive(Debug)]
enum Event {
    Deliver { to: Role, frame: Frame },
    Field { on: bool },
    PowerReady,
    Timer { role: Role, id: u32 },
}

struct Scheduled {
    at: u64,
    seq: u64,
    event: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed: BinaryHeap is a max-heap, we want earliest first
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

/// Callbacks a protocol endpoint implements to live on a [`Link`].
pub trait Endpoint {
    fn role(&self) -> Role;

    /// Called once when the simulation starts.
    fn on_attach(&mut self, _ctx: &mut LinkCtx<'_>) {}

    fn on_frame(&mut self, _frame: Frame, _ctx: &mut LinkCtx<'_>) {}

    fn on_field(&mut self, _on: bool, _ctx: &mut LinkCtx<'_>) {}

    fn on_power_ready(&mut self, _ctx: &mut LinkCtx<'_>) {}

    fn on_timer(&mut self, _id: u32, _ctx: &mut LinkCtx<'_>) {}

    /// Unpowered endpoints neither receive nor emit frames.
    fn is_powered(&self) -> bool {
        true
    }
}

/// The capabilities an endpoint callback gets: the clock, frame transmit
/// through the adversary pipeline, timers, field control, and audit logging.
pub struct LinkCtx<'a> {
    role: Role,
    now_ms: u64,
    sender_powered: bool,
    latency_ms: u64,
    seq: &'a mut u64,
    queue: &'a mut BinaryHeap<Scheduled>,
    audit: &'a mut Vec<AuditEntry>,
    adversary: &'a mut AdversaryState,
}

impl LinkCtx<'_> {
    pub fn now_ms(&self) -> u64 {
        self.now_ms
    }

    fn push(&mut self, at: u64, event: Event) {
        let seq = *self.seq;
        *self.seq += 1;
        self.queue.push(Scheduled { at, seq, event });
    }

    /// Transmit a frame to the peer through the adversary pipeline.
    pub fn send(&mut self, frame_type: FrameType, payload: Vec<u8>) -> Result<(), TransportError> {
        if !self.sender_powered {
            return Err(TransportError::EndpointUnpowered);
        }
        if payload.len() > MAX_FRAME_PAYLOAD {
            return Err(TransportError::FrameTooLarge(payload.len()));
        }
        let frame = Frame {
            frame_type,
            payload,
            timestamp_ms: self.now_ms,
        };
        self.audit.push(AuditEntry {
            direction: Some(self.role.direction()),
            frame_type: Some(frame.frame_type.name()),
            payload_hex: Some(hex::encode(&frame.payload)),
            ..AuditEntry::at(self.now_ms)
        });

        let (frames, action) = self.adversary.process(frame);
        if let Some(action) = action {
            self.audit.push(AuditEntry {
                direction: Some(self.role.direction()),
                adversary_action: Some(action),
                ..AuditEntry::at(self.now_ms)
            });
        }
        let to = self.role.peer();
        let at = self.now_ms + self.latency_ms;
        for frame in frames {
            self.push(at, Event::Deliver { to, frame });
        }
        Ok(())
    }

    /// Schedule a timer callback for the calling endpoint.
    pub fn set_timer(&mut self, delay_ms: u64, id: u32) {
        let role = self.role;
        self.push(self.now_ms + delay_ms, Event::Timer { role, id });
    }

    /// Raise or drop the RF field (reader side). The event reaches the
    /// device without link latency.
    pub fn set_field(&mut self, on: bool) {
        self.audit.push(AuditEntry {
            endpoint_event: Some(format!("field {}", if on { "on" } else { "off" })),
            ..AuditEntry::at(self.now_ms)
        });
        self.push(self.now_ms, Event::Field { on });
    }

    /// Device side: schedule wake completion after the pack's wake latency.
    pub fn schedule_power_ready(&mut self, delay_ms: u64) {
        self.push(self.now_ms + delay_ms, Event::PowerReady);
    }

    /// Record an endpoint event in the audit log.
    pub fn log_event(&mut self, text: impl Into<String>) {
        self.audit.push(AuditEntry {
            endpoint_event: Some(text.into()),
            ..AuditEntry::at(self.now_ms)
        });
    }
}

/// A reader endpoint and a device endpoint joined by a simulated link.
pub struct Link<R: Endpoint, D: Endpoint> {
    reader: R,
    device: D,
    latency_ms: u64,
    livelock_bound: usize,
    adversary: AdversaryState,
    queue: BinaryHeap<Scheduled>,
    audit: Vec<AuditEntry>,
    now_ms: u64,
    seq: u64,
    events_processed: usize,
    data_phase: bool,
    wall_auth_ns: u128,
    wall_data_ns: u128,
}

impl<R: Endpoint, D: Endpoint> Link<R, D> {
    pub fn new(reader: R, device: D, latency_ms: u64, adversary: AdversaryConfig, seed: u64) -> Self {
        Link {
            reader,
            device,
            latency_ms,
            livelock_bound: DEFAULT_LIVELOCK_BOUND,
            adversary: AdversaryState::new(adversary, seed),
            queue: BinaryHeap::new(),
            audit: Vec::new(),
            now_ms: 0,
            seq: 0,
            events_processed: 0,
            data_phase: false,
            wall_auth_ns: 0,
            wall_data_ns: 0,
        }
    }

    pub fn with_livelock_bound(mut self, bound: usize) -> Self {
        self.livelock_bound = bound;
        self
    }

    pub fn audit(&self) -> &[AuditEntry] {
        &self.audit
    }

    pub fn now_ms(&self) -> u64 {
        self.now_ms
    }

    pub fn reader(&self) -> &R {
        &self.reader
    }

    pub fn device(&self) -> &D {
        &self.device
    }

    pub fn into_parts(self) -> (R, D, Vec<AuditEntry>, AdversaryState) {
        (self.reader, self.device, self.audit, self.adversary)
    }

    /// Wall-clock spent processing events up to the first DATA frame
    /// (informational; simulated time is the deterministic measure).
    pub fn wall_auth_ns(&self) -> u128 {
        self.wall_auth_ns
    }

    /// Wall-clock spent processing events from the first DATA frame on.
    pub fn wall_data_ns(&self) -> u128 {
        self.wall_data_ns
    }

    fn ctx<'a>(
        role: Role,
        now_ms: u64,
        sender_powered: bool,
        latency_ms: u64,
        seq: &'a mut u64,
        queue: &'a mut BinaryHeap<Scheduled>,
        audit: &'a mut Vec<AuditEntry>,
        adversary: &'a mut AdversaryState,
    ) -> LinkCtx<'a> {
        LinkCtx {
            role,
            now_ms,
            sender_powered,
            latency_ms,
            seq,
            queue,
            audit,
            adversary,
        }
    }

    /// Process the event queue to quiescence. The audit log then holds every
    /// frame, adversary action, and endpoint event in order.
    pub fn run_until_idle(&mut self) -> Result<(), TransportError> {
        {
            let mut ctx = Self::ctx(
                Role::Device,
                self.now_ms,
                self.device.is_powered(),
                self.latency_ms,
                &mut self.seq,
                &mut self.queue,
                &mut self.audit,
                &mut self.adversary,
            );
            self.device.on_attach(&mut ctx);
            let mut ctx = Self::ctx(
                Role::Reader,
                self.now_ms,
                self.reader.is_powered(),
                self.latency_ms,
                &mut self.seq,
                &mut self.queue,
                &mut self.audit,
                &mut self.adversary,
            );
            self.reader.on_attach(&mut ctx);
        }

        while let Some(scheduled) = self.queue.pop() {
            self.events_processed += 1;
            if self.events_processed > self.livelock_bound {
                let bound = self.livelock_bound;
                self.audit.push(AuditEntry {
                    endpoint_event: Some(format!("livelock detected after {bound} events")),
                    ..AuditEntry::at(self.now_ms)
                });
                return Err(TransportError::LivelockDetected { bound });
            }
            debug_assert!(scheduled.at >= self.now_ms, "clock must be monotone");
            self.now_ms = scheduled.at;
            if let Event::Deliver { frame, .. } = &scheduled.event {
                if frame.frame_type == FrameType::Data {
                    self.data_phase = true;
                }
            }
            let started = std::time::Instant::now();
            self.dispatch(scheduled.event);
            let elapsed = started.elapsed().as_nanos();
            if self.data_phase {
                self.wall_data_ns += elapsed;
            } else {
                self.wall_auth_ns += elapsed;
            }
        }
        Ok(())
    }

    fn dispatch(&mut self, event: Event) {
        match event {
            Event::Deliver { to, frame } => {
                let target_powered = match to {
                    Role::Reader => self.reader.is_powered(),
                    Role::Device => self.device.is_powered(),
                };
                self.audit.push(AuditEntry {
                    direction: Some(to.peer().direction()),
                    frame_type: Some(frame.frame_type.name()),
                    payload_hex: Some(hex::encode(&frame.payload)),
                    endpoint_event: Some(if target_powered {
                        "delivered".to_string()
                    } else {
                        "ignored: endpoint unpowered".to_string()
                    }),
                    ..AuditEntry::at(self.now_ms)
                });
                if !target_powered {
                    return;
                }
                let mut ctx = Self::ctx(
                    to,
                    self.now_ms,
                    target_powered,
                    self.latency_ms,
                    &mut self.seq,
                    &mut self.queue,
                    &mut self.audit,
                    &mut self.adversary,
                );
                match to {
                    Role::Reader => self.reader.on_frame(frame, &mut ctx),
                    Role::Device => self.device.on_frame(frame, &mut ctx),
                }
            }
            Event::Field { on } => {
                if !on {
                    // field tear kills anything still in flight
                    let retained: Vec<Scheduled> = self
                        .queue
                        .drain()
                        .filter(|s| !matches!(s.event, Event::Deliver { .. }))
                        .collect();
                    self.queue.extend(retained);
                }
                let mut ctx = Self::ctx(
                    Role::Device,
                    self.now_ms,
                    self.device.is_powered(),
                    self.latency_ms,
                    &mut self.seq,
                    &mut self.queue,
                    &mut self.audit,
                    &mut self.adversary,
                );
                self.device.on_field(on, &mut ctx);
            }
            Event::PowerReady => {
                let mut ctx = Self::ctx(
                    Role::Device,
                    self.now_ms,
                    true,
                    self.latency_ms,
                    &mut self.seq,
                    &mut self.queue,
                    &mut self.audit,
                    &mut self.adversary,
                );
                self.device.on_power_ready(&mut ctx);
            }
            Event::Timer { role, id } => {
                let powered = match role {
                    Role::Reader => self.reader.is_powered(),
                    Role::Device => self.device.is_powered(),
                };
                let mut ctx = Self::ctx(
                    role,
                    self.now_ms,
                    powered,
                    self.latency_ms,
                    &mut self.seq,
                    &mut self.queue,
                    &mut self.audit,
                    &mut self.adversary,
                );
                match role {
                    Role::Reader => self.reader.on_timer(id, &mut ctx),
                    Role::Device => self.device.on_timer(id, &mut ctx),
                }
            }
        }
    }
}
