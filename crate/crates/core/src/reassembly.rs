//! Fixed-slot reassembly buffer and the receiver admission pipeline.
//!
//! The buffer holds at most `B` concurrent datagram sessions. A session that
//! has not completed within the reassembly timeout is evicted. Every
//! fragment handed to [`Receiver::admit_fragment`] ends in exactly one
//! [`Admission`].

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::baselines::{CsmTracker, StackVariant};
use crate::codec::{Fragment, FragmentKind};
use crate::fsv::{self, HashChainState, Nonce, SharedKey, Validation};
use crate::trust::{BehaviorMonitor, Decision, TrustEngine, TrustParams};
use crate::NodeId;

/// Out-of-order fragments held per session while awaiting their chain
/// predecessor.
pub const PENDING_LIMIT: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    Untrusted,
    Replay,
    BadSignature,
    BufferFull,
    NoSession,
    Timeout,
    Duplicate,
    Malformed,
}

impl DropReason {
    pub const ALL: [DropReason; 8] = [
        DropReason::Untrusted,
        DropReason::Replay,
        DropReason::BadSignature,
        DropReason::BufferFull,
        DropReason::NoSession,
        DropReason::Timeout,
        DropReason::Duplicate,
        DropReason::Malformed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::Untrusted => "untrusted",
            DropReason::Replay => "replay",
            DropReason::BadSignature => "bad_signature",
            DropReason::BufferFull => "buffer_full",
            DropReason::NoSession => "no_session",
            DropReason::Timeout => "timeout",
            DropReason::Duplicate => "duplicate",
            DropReason::Malformed => "malformed",
        }
    }

    /// Drops that reject the sender itself rather than a resource shortage.
    pub fn is_identity_gate(self) -> bool {
        matches!(self, DropReason::Untrusted | DropReason::Replay)
    }

    /// Drops raised by a security check; on legitimate traffic these are
    /// false positives.
    pub fn is_security(self) -> bool {
        matches!(self, DropReason::Untrusted | DropReason::Replay | DropReason::BadSignature)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Admission {
    Stored,
    /// The datagram completed; carries the reassembled payload.
    Delivered(Vec<u8>),
    Dropped(DropReason),
}

/// Per-reason counters. `timeout` counts evicted sessions; every other
/// field counts fragments rejected at admission.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropCounts {
    pub untrusted: u64,
    pub replay: u64,
    pub bad_signature: u64,
    pub buffer_full: u64,
    pub no_session: u64,
    pub timeout: u64,
    pub duplicate: u64,
    pub malformed: u64,
}

impl DropCounts {
    fn slot(&mut self, reason: DropReason) -> &mut u64 {
        match reason {
            DropReason::Untrusted => &mut self.untrusted,
            DropReason::Replay => &mut self.replay,
            DropReason::BadSignature => &mut self.bad_signature,
            DropReason::BufferFull => &mut self.buffer_full,
            DropReason::NoSession => &mut self.no_session,
            DropReason::Timeout => &mut self.timeout,
            DropReason::Duplicate => &mut self.duplicate,
            DropReason::Malformed => &mut self.malformed,
        }
    }

    pub fn record(&mut self, reason: DropReason) {
        *self.slot(reason) += 1;
    }

    pub fn get(&self, reason: DropReason) -> u64 {
        let mut copy = *self;
        *copy.slot(reason)
    }

    /// Fragments rejected at admission (everything except timeouts).
    pub fn admission_total(&self) -> u64 {
        DropReason::ALL
            .iter()
            .filter(|&&r| r != DropReason::Timeout)
            .map(|&r| self.get(r))
            .sum()
    }

    pub fn add(&mut self, other: &DropCounts) {
        for r in DropReason::ALL {
            *self.slot(r) += other.get(r);
        }
    }
}

/// One datagram under reassembly.
#[derive(Debug, Clone)]
pub struct ReassemblySession {
    pub source: NodeId,
    pub tag: u16,
    pub size: usize,
    pub started_at: f64,
    pieces: BTreeMap<usize, Vec<u8>>,
    received_bytes: usize,
    chain: Option<HashChainState>,
    pending: Vec<Fragment>,
}

impl ReassemblySession {
    pub fn new(source: NodeId, tag: u16, size: usize, started_at: f64) -> Self {
        Self {
            source,
            tag,
            size,
            started_at,
            pieces: BTreeMap::new(),
            received_bytes: 0,
            chain: None,
            pending: Vec::new(),
        }
    }

    fn with_chain(mut self, chain: HashChainState) -> Self {
        self.chain = Some(chain);
        self
    }

    /// Place `payload` at byte `offset`.
    pub fn insert(&mut self, offset: usize, payload: &[u8]) -> Result<(), DropReason> {
        let end = offset + payload.len();
        if payload.is_empty() || end > self.size {
            return Err(DropReason::Malformed);
        }
        let overlaps_prev = self
            .pieces
            .range(..=offset)
            .next_back()
            .is_some_and(|(&o, p)| o + p.len() > offset);
        let overlaps_next = self.pieces.range(offset..end).next().is_some();
        if overlaps_prev || overlaps_next {
            return Err(DropReason::Duplicate);
        }
        self.pieces.insert(offset, payload.to_vec());
        self.received_bytes += payload.len();
        Ok(())
    }

    pub fn is_complete(&self) -> bool {
        self.received_bytes == self.size
    }

    /// Byte offset the hash chain expects next.
    pub fn next_offset(&self) -> usize {
        self.pieces.iter().next_back().map(|(&o, p)| o + p.len()).unwrap_or(0)
    }

    pub fn received_bytes(&self) -> usize {
        self.received_bytes
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn assemble(&self) -> Vec<u8> {
        self.pieces.values().flatten().copied().collect()
    }
}

/// Fixed number of session slots with time-weighted occupancy accounting.
#[derive(Debug, Clone)]
pub struct ReassemblyBuffer {
    slots: Vec<Option<ReassemblySession>>,
    timeout: f64,
    clock: f64,
    busy_area: f64,
    completed: u64,
    hold_time_sum: f64,
    allocations: u64,
    peak: usize,
}

impl ReassemblyBuffer {
    pub fn new(slots: usize, timeout: f64) -> Self {
        Self {
            slots: vec![None; slots],
            timeout,
            clock: 0.0,
            busy_area: 0.0,
            completed: 0,
            hold_time_sum: 0.0,
            allocations: 0,
            peak: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.slots.len()
    }

    pub fn timeout(&self) -> f64 {
        self.timeout
    }

    pub fn occupied(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    /// Highest occupancy ever reached.
    pub fn peak(&self) -> usize {
        self.peak
    }

    /// Free fraction of slots right now.
    pub fn buffer_availability(&self) -> f64 {
        if self.slots.is_empty() {
            return 0.0;
        }
        1.0 - self.occupied() as f64 / self.capacity() as f64
    }

    /// Integrate occupancy up to `now`.
    pub fn advance(&mut self, now: f64) {
        if now > self.clock {
            self.busy_area += self.occupied() as f64 * (now - self.clock);
            self.clock = now;
        }
    }

    /// Time-averaged free fraction over `[0, clock]`.
    pub fn mean_availability(&self) -> f64 {
        if self.clock <= 0.0 || self.slots.is_empty() {
            return 1.0;
        }
        1.0 - self.busy_area / (self.clock * self.capacity() as f64)
    }

    pub fn allocations(&self) -> u64 {
        self.allocations
    }

    /// Mean lifetime of every released or evicted session.
    pub fn mean_hold_time(&self) -> Option<f64> {
        (self.completed > 0).then(|| self.hold_time_sum / self.completed as f64)
    }

    pub fn find(&self, source: NodeId, tag: u16) -> Option<usize> {
        self.slots
            .iter()
            .position(|s| s.as_ref().is_some_and(|s| s.source == source && s.tag == tag))
    }

    pub fn session(&self, idx: usize) -> Option<&ReassemblySession> {
        self.slots.get(idx).and_then(Option::as_ref)
    }

    pub fn session_mut(&mut self, idx: usize) -> Option<&mut ReassemblySession> {
        self.slots.get_mut(idx).and_then(Option::as_mut)
    }

    pub fn allocate(&mut self, session: ReassemblySession) -> Result<usize, DropReason> {
        self.advance(session.started_at);
        let idx = self
            .slots
            .iter()
            .position(Option::is_none)
            .ok_or(DropReason::BufferFull)?;
        self.slots[idx] = Some(session);
        self.allocations += 1;
        self.peak = self.peak.max(self.occupied());
        Ok(idx)
    }

    pub fn release(&mut self, idx: usize, now: f64) -> Option<ReassemblySession> {
        self.advance(now);
        let session = self.slots.get_mut(idx)?.take()?;
        self.completed += 1;
        self.hold_time_sum += now - session.started_at;
        Some(session)
    }

    /// Evict every session with `started_at + timeout < now`.
    pub fn expire(&mut self, now: f64) -> Vec<ReassemblySession> {
        let timeout = self.timeout;
        let mut evicted = Vec::new();
        for idx in 0..self.slots.len() {
            let Some(s) = &self.slots[idx] else { continue };
            if s.started_at + timeout < now {
                let deadline = s.started_at + timeout;
                // Occupancy ends at the deadline even if noticed later.
                self.advance(deadline);
                let session = self.slots[idx].take().expect("slot checked above");
                self.completed += 1;
                self.hold_time_sum += timeout;
                evicted.push(session);
            }
        }
        self.advance(now);
        evicted
    }
}

/// Recently accepted `(source, tag, nonce)` triples.
#[derive(Debug, Clone)]
pub struct ReplayLedger {
    horizon: f64,
    capacity: usize,
    entries: VecDeque<(f64, NodeId, u16, Nonce)>,
}

impl ReplayLedger {
    pub fn new(horizon: f64, capacity: usize) -> Self {
        Self {
            horizon,
            capacity,
            entries: VecDeque::new(),
        }
    }

    fn prune(&mut self, now: f64) {
        while self.entries.front().is_some_and(|e| e.0 + self.horizon < now) {
            self.entries.pop_front();
        }
    }

    pub fn contains(&mut self, now: f64, source: NodeId, tag: u16, nonce: Nonce) -> bool {
        self.prune(now);
        self.entries
            .iter()
            .any(|e| e.1 == source && e.2 == tag && e.3 == nonce)
    }

    pub fn insert(&mut self, now: f64, source: NodeId, tag: u16, nonce: Nonce) {
        self.prune(now);
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back((now, source, tag, nonce));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BufferParams {
    pub slots: usize,
    /// Reassembly timeout, seconds.
    pub timeout: f64,
    pub replay_horizon: f64,
    pub replay_capacity: usize,
    /// Consecutive failed reassemblies before the CSM-style baseline
    /// blocks a source.
    pub csm_failure_limit: u32,
    /// Seconds the CSM-style baseline keeps a source blocked.
    pub csm_block_duration: f64,
}

impl Default for BufferParams {
    fn default() -> Self {
        Self {
            slots: 2,
            timeout: 10.0,
            replay_horizon: 60.0,
            replay_capacity: 64,
            csm_failure_limit: 3,
            csm_block_duration: 60.0,
        }
    }
}

/// Keyed-hash invocations performed by a receiver.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CryptoWork {
    /// Chain hash evaluations.
    pub hashes: u64,
    /// Independent per-fragment MAC verifications.
    pub macs: u64,
}

/// Fragment bookkeeping at one receiver.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct AdmissionStats {
    pub received: u64,
    pub buffered: u64,
    pub delivered: u64,
    pub drops: DropCounts,
}

/// The receiving end of one protocol stack.
#[derive(Debug, Clone)]
pub struct Receiver {
    pub(crate) variant: StackVariant,
    pub(crate) buffer: ReassemblyBuffer,
    pub(crate) ledger: ReplayLedger,
    pub(crate) trust: TrustEngine,
    pub(crate) monitor: BehaviorMonitor,
    pub(crate) key: SharedKey,
    pub(crate) csm: CsmTracker,
    pub(crate) stats: AdmissionStats,
    pub(crate) work: CryptoWork,
}

impl Receiver {
    pub fn new(variant: StackVariant, buffer: BufferParams, trust: TrustParams, key: SharedKey) -> Self {
        Self {
            variant,
            buffer: ReassemblyBuffer::new(buffer.slots, buffer.timeout),
            ledger: ReplayLedger::new(buffer.replay_horizon, buffer.replay_capacity),
            monitor: BehaviorMonitor::new(trust.rate_window),
            trust: TrustEngine::new(trust),
            key,
            csm: CsmTracker::new(buffer.csm_failure_limit, buffer.csm_block_duration),
            stats: AdmissionStats::default(),
            work: CryptoWork::default(),
        }
    }

    pub fn with_trust_trace(mut self) -> Self {
        self.trust = self.trust.with_trace();
        self
    }

    pub fn variant(&self) -> StackVariant {
        self.variant
    }

    pub fn buffer(&self) -> &ReassemblyBuffer {
        &self.buffer
    }

    pub fn trust(&self) -> &TrustEngine {
        &self.trust
    }

    pub fn trust_mut(&mut self) -> &mut TrustEngine {
        &mut self.trust
    }

    pub fn stats(&self) -> &AdmissionStats {
        &self.stats
    }

    pub fn work(&self) -> CryptoWork {
        self.work
    }

    pub fn buffer_availability(&self) -> f64 {
        self.buffer.buffer_availability()
    }

    /// Register a neighbor seen during network convergence.
    pub fn register_neighbor(&mut self, node: NodeId) {
        self.trust.register_neighbor(node);
    }

    /// Run one fragment through the stack's admission pipeline.
    pub fn admit_fragment(&mut self, frag: &Fragment, now: f64) -> Admission {
        self.tick(now);
        self.stats.received += 1;
        let result = match self.variant {
            StackVariant::PredictiveCsm => self.admit_pcsm(frag, now),
            StackVariant::Vanilla => self.admit_vanilla(frag, now),
            StackVariant::CsmLike => self.admit_csm_like(frag, now),
            StackVariant::SecuPanLike => self.admit_secupan_like(frag, now),
        };
        match &result {
            Admission::Dropped(r) => self.stats.drops.record(*r),
            Admission::Stored => self.stats.buffered += 1,
            Admission::Delivered(_) => {
                self.stats.buffered += 1;
                self.stats.delivered += 1;
            }
        }
        result
    }

    /// Evict stale sessions and charge their sources. Returns the evicted
    /// sessions.
    pub fn tick(&mut self, now: f64) -> Vec<ReassemblySession> {
        let evicted = self.buffer.expire(now);
        for s in &evicted {
            self.stats.drops.record(DropReason::Timeout);
            match self.variant {
                StackVariant::PredictiveCsm => {
                    self.trust.penalize(s.source, now);
                }
                StackVariant::CsmLike => self.csm.record_failure(s.source, now),
                StackVariant::Vanilla | StackVariant::SecuPanLike => {}
            }
        }
        evicted
    }

    /// Store a structurally checked fragment into a fresh or existing
    /// session without any security processing.
    pub(crate) fn store_plain(&mut self, frag: &Fragment, now: f64) -> Admission {
        let source = frag.source;
        let tag = frag.header.datagram_tag;
        let size = frag.header.datagram_size as usize;
        let idx = match (frag.header.kind, self.buffer.find(source, tag)) {
            (FragmentKind::Frag1, Some(_)) => return Admission::Dropped(DropReason::Duplicate),
            (FragmentKind::Frag1, None) => {
                match self.buffer.allocate(ReassemblySession::new(source, tag, size, now)) {
                    Ok(idx) => idx,
                    Err(r) => return Admission::Dropped(r),
                }
            }
            (FragmentKind::FragN { .. }, None) => return Admission::Dropped(DropReason::NoSession),
            (FragmentKind::FragN { .. }, Some(idx)) => idx,
        };
        let session = self.buffer.session_mut(idx).expect("index from find");
        if session.size != size {
            return Admission::Dropped(DropReason::Malformed);
        }
        if let Err(r) = session.insert(frag.header.byte_offset(), &frag.payload) {
            return Admission::Dropped(r);
        }
        self.finish_if_complete(idx, now)
    }

    pub(crate) fn finish_if_complete(&mut self, idx: usize, now: f64) -> Admission {
        let complete = self.buffer.session(idx).is_some_and(ReassemblySession::is_complete);
        if !complete {
            return Admission::Stored;
        }
        let session = self.buffer.release(idx, now).expect("complete session present");
        match self.variant {
            StackVariant::PredictiveCsm => {
                self.trust.reward(session.source, now);
            }
            StackVariant::CsmLike => self.csm.record_success(session.source),
            StackVariant::Vanilla | StackVariant::SecuPanLike => {}
        }
        Admission::Delivered(session.assemble())
    }

    fn reject(&mut self, source: NodeId, reason: DropReason, now: f64) -> Admission {
        self.trust.penalize(source, now);
        Admission::Dropped(reason)
    }

    fn admit_pcsm(&mut self, frag: &Fragment, now: f64) -> Admission {
        match frag.header.kind {
            FragmentKind::Frag1 => self.admit_pcsm_first(frag, now),
            FragmentKind::FragN { .. } => {
                self.monitor.observe(frag, now);
                self.admit_pcsm_subsequent(frag, now)
            }
        }
    }

    fn admit_pcsm_first(&mut self, frag: &Fragment, now: f64) -> Admission {
        let source = frag.source;
        let tag = frag.header.datagram_tag;
        // A replayed header says nothing about how its claimed source
        // behaves, so it is rejected before behavioral profiling.
        let ext = frag.header.ext.and_then(|e| e.nonce.map(|n| (n, e.signature)));
        if let Some((nonce, _)) = ext {
            if self.ledger.contains(now, source, tag, nonce) {
                return self.reject(source, DropReason::Replay, now);
            }
            // Recorded even if the header is dropped below, so a copy is
            // recognized as a replay whatever became of the original.
            self.ledger.insert(now, source, tag, nonce);
        }
        if self.trust.gate(source, now) == Decision::Drop {
            self.monitor.observe(frag, now);
            return Admission::Dropped(DropReason::Untrusted);
        }
        let obs = self.monitor.observe(frag, now).expect("monitor observes every FRAG1");
        if self.trust.evaluate_frag1(source, &obs, now) == Decision::Drop {
            return Admission::Dropped(DropReason::Untrusted);
        }
        let Some((nonce, signature)) = ext else {
            return self.reject(source, DropReason::BadSignature, now);
        };
        if self.buffer.find(source, tag).is_some() {
            return Admission::Dropped(DropReason::Duplicate);
        }
        self.work.hashes += 1;
        let Some(chain) = fsv::verify_seed(&self.key, &frag.payload, nonce, &signature) else {
            return self.reject(source, DropReason::BadSignature, now);
        };
        let size = frag.header.datagram_size as usize;
        let mut session = ReassemblySession::new(source, tag, size, now).with_chain(chain);
        if let Err(r) = session.insert(0, &frag.payload) {
            return Admission::Dropped(r);
        }
        match self.buffer.allocate(session) {
            Ok(idx) => self.finish_if_complete(idx, now),
            Err(r) => Admission::Dropped(r),
        }
    }

    fn admit_pcsm_subsequent(&mut self, frag: &Fragment, now: f64) -> Admission {
        let source = frag.source;
        if self.trust.gate(source, now) == Decision::Drop {
            return Admission::Dropped(DropReason::Untrusted);
        }
        let Some(idx) = self.buffer.find(source, frag.header.datagram_tag) else {
            return self.reject(source, DropReason::NoSession, now);
        };
        if frag.header.ext.is_none() {
            return self.reject(source, DropReason::BadSignature, now);
        }
        let session = self.buffer.session_mut(idx).expect("index from find");
        if session.size != frag.header.datagram_size as usize {
            return Admission::Dropped(DropReason::Malformed);
        }
        let offset = frag.header.byte_offset();
        let expected = session.next_offset();
        if offset < expected {
            return Admission::Dropped(DropReason::Duplicate);
        }
        if offset > expected {
            if session.pending.len() >= PENDING_LIMIT {
                return Admission::Dropped(DropReason::BufferFull);
            }
            if session.pending.iter().any(|p| p.header.byte_offset() == offset) {
                return Admission::Dropped(DropReason::Duplicate);
            }
            session.pending.push(frag.clone());
            return Admission::Stored;
        }
        if let Err(r) = self.validate_and_store(idx, frag, now) {
            return Admission::Dropped(r);
        }
        self.drain_pending(idx, now);
        self.finish_if_complete(idx, now)
    }

    /// Check the chained tag of an in-order fragment and store it.
    fn validate_and_store(&mut self, idx: usize, frag: &Fragment, now: f64) -> Result<(), DropReason> {
        self.work.hashes += 1;
        let session = self.buffer.session_mut(idx).expect("index from find");
        let signature = frag.header.ext.map(|e| e.signature).unwrap_or_default();
        let chain = session.chain.as_mut().expect("PCSM sessions carry a chain");
        if chain.validate_fragment(&frag.payload, &signature) == Validation::Invalid {
            self.trust.penalize(frag.source, now);
            return Err(DropReason::BadSignature);
        }
        session.insert(frag.header.byte_offset(), &frag.payload)
    }

    /// Validate held fragments that have become in-order.
    fn drain_pending(&mut self, idx: usize, now: f64) {
        loop {
            let session = self.buffer.session_mut(idx).expect("index from find");
            let expected = session.next_offset();
            let Some(pos) = session.pending.iter().position(|p| p.header.byte_offset() == expected) else {
                return;
            };
            let held = session.pending.swap_remove(pos);
            if self.validate_and_store(idx, &held, now).is_err() {
                return;
            }
        }
    }
}
