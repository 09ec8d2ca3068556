//! Discrete-event simulation of a star network: legitimate senders and one
//! attacker transmit to the root, which runs the configured stack.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::adversary::{schedule_attack, AttackContext, LegitTransmission};
use crate::baselines::{prepare_datagram, StackVariant};
use crate::codec::{CodecError, Fragment};
use crate::config::{ConfigError, InterferenceParams, ScenarioConfig, TopologyParams};
use crate::energy::{airtime, EnergyLedger};
use crate::fsv::SharedKey;
use crate::metrics::{compute_detection_latency, compute_pdr, per_hundred, AttackerEvent, AttackerOutcome, RunMetrics};
use crate::reassembly::{Admission, DropCounts, Receiver};
use crate::trust::TrustSample;
use crate::NodeId;

/// IEEE 802.15.4 maximum frame size.
pub const MAX_FRAME_LEN: usize = 127;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("frame of {0} bytes exceeds the {MAX_FRAME_LEN}-byte limit")]
    FrameTooLarge(usize),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Topology {
    pub root: NodeId,
    pub senders: Vec<NodeId>,
    pub attacker: Option<NodeId>,
}

impl Topology {
    pub fn star(params: &TopologyParams) -> Self {
        let senders: Vec<NodeId> = (1..=params.senders).collect();
        Self {
            root: 0,
            attacker: params.attacker.then_some(params.senders + 1),
            senders,
        }
    }

    pub fn node_count(&self) -> usize {
        1 + self.senders.len() + usize::from(self.attacker.is_some())
    }
}

/// Independent RNG stream for one purpose and index, derived from the run
/// seed.
fn stream(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((purpose << 32) | index);
    rng
}

const STREAM_TRAFFIC: u64 = 1;
const STREAM_LOSS: u64 = 2;
const STREAM_INTERFERENCE: u64 = 3;
const STREAM_ATTACK: u64 = 4;

fn exponential(rng: &mut ChaCha8Rng, mean: f64) -> f64 {
    let u: f64 = rng.gen();
    -mean * (1.0 - u).ln()
}

/// One sender-to-root link.
#[derive(Debug, Clone)]
pub struct Link {
    loss: f64,
    delay: f64,
    bitrate: f64,
    rng: ChaCha8Rng,
    bad_loss: f64,
    /// Sorted, disjoint bad-state intervals.
    bad: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TxResult {
    pub airtime: f64,
    /// Arrival time at the receiver, or `None` if the frame was lost.
    pub arrival: Option<f64>,
}

impl Link {
    pub fn new(loss: f64, delay: f64, bitrate: f64, rng: ChaCha8Rng) -> Self {
        Self {
            loss,
            delay,
            bitrate,
            rng,
            bad_loss: 0.0,
            bad: Vec::new(),
        }
    }

    /// Precompute bad-state periods over `[0, horizon]`.
    pub fn with_interference(mut self, p: &InterferenceParams, horizon: f64, mut rng: ChaCha8Rng) -> Self {
        let mut t = exponential(&mut rng, p.mean_good);
        while t < horizon {
            let end = t + exponential(&mut rng, p.mean_bad);
            self.bad.push((t, end));
            t = end + exponential(&mut rng, p.mean_good);
        }
        self.bad_loss = p.bad_loss;
        self
    }

    fn loss_at(&self, now: f64) -> f64 {
        let idx = self.bad.partition_point(|&(start, _)| start <= now);
        let in_bad = idx > 0 && now < self.bad[idx - 1].1;
        if in_bad {
            self.loss.max(self.bad_loss)
        } else {
            self.loss
        }
    }

    /// Put `bytes` on the air at `now`. One loss draw per frame keeps the
    /// stream aligned across stacks.
    pub fn transmit(&mut self, now: f64, bytes: usize) -> Result<TxResult, SimError> {
        if bytes > MAX_FRAME_LEN {
            return Err(SimError::FrameTooLarge(bytes));
        }
        let airtime = airtime(bytes, self.bitrate);
        let draw: f64 = self.rng.gen();
        let arrival = (draw >= self.loss_at(now)).then_some(now + airtime + self.delay);
        Ok(TxResult { airtime, arrival })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Origin {
    Legit(usize),
    Attacker,
}

#[derive(Debug, Clone)]
enum Event {
    Transmit { node: NodeId, fragment: Fragment, origin: Origin },
    Arrive { fragment: Fragment, origin: Origin, airtime: f64 },
    Tick,
}

struct Scheduled {
    time: f64,
    seq: u64,
    event: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    // Reversed so the max-heap pops the earliest (time, seq).
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then(other.seq.cmp(&self.seq))
    }
}

/// Pending events ordered by `(time, insertion sequence)`.
#[derive(Default)]
pub struct EventQueue {
    heap: BinaryHeap<Scheduled>,
    seq: u64,
    now: f64,
}

impl EventQueue {
    fn push(&mut self, time: f64, event: Event) {
        debug_assert!(time >= self.now, "event scheduled in the past");
        self.heap.push(Scheduled { time, seq: self.seq, event });
        self.seq += 1;
    }

    fn pop(&mut self) -> Option<(f64, Event)> {
        let s = self.heap.pop()?;
        self.now = s.time;
        Some((s.time, s.event))
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

/// One line of the event trace: `time node event detail`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceLine {
    pub time: f64,
    pub node: NodeId,
    pub event: &'static str,
    pub detail: String,
}

impl fmt::Display for TraceLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6} {} {} {}", self.time, self.node, self.event, self.detail)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub trace: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: RunMetrics,
    pub trust_trace: Vec<TrustSample>,
    pub events: Vec<TraceLine>,
}

struct Packet {
    payload: Vec<u8>,
    delivered: bool,
}

/// Run one seeded simulation and return its metrics.
pub fn run(config: &ScenarioConfig, seed: u64) -> Result<RunMetrics, SimError> {
    run_with(config, seed, RunOptions::default()).map(|o| o.metrics)
}

pub fn run_with(config: &ScenarioConfig, seed: u64, opts: RunOptions) -> Result<RunOutput, SimError> {
    config.validate()?;
    Simulation::new(config, seed, opts)?.execute()
}

struct Simulation<'a> {
    cfg: &'a ScenarioConfig,
    seed: u64,
    opts: RunOptions,
    topo: Topology,
    queue: EventQueue,
    links: Vec<Link>,
    energy: Vec<EnergyLedger>,
    receiver: Receiver,
    packets: Vec<Packet>,
    packet_index: HashMap<(NodeId, u16), usize>,
    attacker_events: Vec<AttackerEvent>,
    attack_start: Option<f64>,
    attacker_emissions: u64,
    attacker_received: u64,
    attacker_delivered: u64,
    legit_received: u64,
    legit_drops: DropCounts,
    trace: Vec<TraceLine>,
    processed: u64,
}

impl<'a> Simulation<'a> {
    fn new(cfg: &'a ScenarioConfig, seed: u64, opts: RunOptions) -> Result<Self, SimError> {
        let topo = Topology::star(&cfg.topology);
        let key = SharedKey::new(&cfg.key_bytes()?).map_err(|e| ConfigError::Invalid {
            field: "key",
            message: e.to_string(),
        })?;
        let mut receiver = Receiver::new(cfg.stack, cfg.buffer, cfg.trust, key);
        if opts.trace {
            receiver = receiver.with_trust_trace();
        }
        // Every node joins during convergence; the attacker stays passive.
        for &n in topo.senders.iter().chain(topo.attacker.iter()) {
            receiver.register_neighbor(n);
        }
        let t = &cfg.topology;
        let links = (0..topo.node_count() as u64)
            .map(|n| {
                let link = Link::new(t.loss, t.propagation_delay, t.bitrate, stream(seed, STREAM_LOSS, n));
                match &t.interference {
                    Some(p) => link.with_interference(p, cfg.traffic.duration, stream(seed, STREAM_INTERFERENCE, n)),
                    None => link,
                }
            })
            .collect();
        Ok(Self {
            cfg,
            seed,
            opts,
            energy: vec![EnergyLedger::default(); topo.node_count()],
            topo,
            queue: EventQueue::default(),
            links,
            receiver,
            packets: Vec::new(),
            packet_index: HashMap::new(),
            attacker_events: Vec::new(),
            attack_start: None,
            attacker_emissions: 0,
            attacker_received: 0,
            attacker_delivered: 0,
            legit_received: 0,
            legit_drops: DropCounts::default(),
            trace: Vec::new(),
            processed: 0,
        })
    }

    fn log(&mut self, time: f64, node: NodeId, event: &'static str, detail: impl FnOnce() -> String) {
        if self.opts.trace {
            self.trace.push(TraceLine { time, node, event, detail: detail() });
        }
    }

    /// Build every legitimate datagram up front and queue its fragments.
    fn schedule_legit(&mut self) -> Result<Vec<LegitTransmission>, SimError> {
        let cfg = self.cfg;
        let tr = &cfg.traffic;
        let n = self.topo.senders.len() as f64;
        let frag_count = tr.payload_size.div_ceil(crate::codec::MAX_FRAGMENT_PAYLOAD);
        let span = (frag_count.saturating_sub(1)) as f64 * tr.fragment_gap + 0.01;
        let mut visible = Vec::new();
        for (k, &node) in self.topo.senders.clone().iter().enumerate() {
            let mut rng = stream(self.seed, STREAM_TRAFFIC, node as u64);
            let mut tag: u16 = rng.gen();
            let mut t = tr.convergence + k as f64 * tr.send_interval / n;
            while t + span <= tr.duration {
                let mut payload = vec![0u8; tr.payload_size];
                rng.fill(payload.as_mut_slice());
                let nonce: [u8; 4] = rng.gen();
                let mut frags = prepare_datagram(cfg.stack, &self.receiver.key, &payload, tag, nonce, cfg.trust.joined_score)?;
                let idx = self.packets.len();
                for (i, f) in frags.iter_mut().enumerate() {
                    f.source = node;
                    self.queue.push(
                        t + i as f64 * tr.fragment_gap,
                        Event::Transmit { node, fragment: f.clone(), origin: Origin::Legit(idx) },
                    );
                }
                visible.push(LegitTransmission { time: t, frag1: frags.swap_remove(0) });
                self.packet_index.insert((node, tag), idx);
                self.packets.push(Packet { payload, delivered: false });
                tag = tag.wrapping_add(1);
                t += tr.send_interval;
            }
        }
        visible.sort_by(|a, b| a.time.total_cmp(&b.time));
        Ok(visible)
    }

    fn schedule_attack(&mut self, legit: &[LegitTransmission]) {
        let (Some(spec), Some(attacker)) = (&self.cfg.attack, self.topo.attacker) else {
            return;
        };
        let ctx = AttackContext {
            attacker,
            duration: self.cfg.traffic.duration,
            with_extension: self.cfg.stack.uses_extension(),
            legit,
        };
        let mut rng = stream(self.seed, STREAM_ATTACK, 0);
        let emissions = schedule_attack(spec, &ctx, &mut rng);
        self.attack_start = emissions.first().map(|e| e.time);
        self.attacker_emissions = emissions.len() as u64;
        for e in emissions {
            self.queue.push(e.time, Event::Transmit { node: attacker, fragment: e.fragment, origin: Origin::Attacker });
        }
    }

    fn execute(mut self) -> Result<RunOutput, SimError> {
        let duration = self.cfg.traffic.duration;
        if duration > 0.0 {
            let legit = self.schedule_legit()?;
            self.schedule_attack(&legit);
            let tick = self.cfg.traffic.tick_interval;
            let mut t = tick;
            while t <= duration {
                self.queue.push(t, Event::Tick);
                t += tick;
            }
        }
        while let Some((now, event)) = self.queue.pop() {
            if now > duration {
                break;
            }
            self.processed += 1;
            match event {
                Event::Transmit { node, fragment, origin } => self.on_transmit(now, node, fragment, origin)?,
                Event::Arrive { fragment, origin, airtime } => self.on_arrive(now, fragment, origin, airtime),
                Event::Tick => self.on_tick(now),
            }
        }
        self.receiver.buffer.advance(duration);
        Ok(self.finish())
    }

    fn on_transmit(&mut self, now: f64, node: NodeId, fragment: Fragment, origin: Origin) -> Result<(), SimError> {
        let len = fragment.frame_len();
        let res = self.links[node as usize].transmit(now, len)?;
        let e = &self.cfg.energy;
        let ledger = &mut self.energy[node as usize];
        ledger.charge_tx(res.airtime);
        ledger.charge_cpu(e.frame_cpu);
        if origin != Origin::Attacker {
            match self.cfg.stack {
                StackVariant::PredictiveCsm => ledger.charge_cpu(e.hash_cpu),
                StackVariant::SecuPanLike => ledger.charge_cpu(e.mac_cpu),
                StackVariant::Vanilla | StackVariant::CsmLike => {}
            }
        }
        let tag = fragment.header.datagram_tag;
        match res.arrival {
            Some(at) => {
                self.log(now, node, "tx", || format!("tag={tag} off={} len={len}", fragment.header.byte_offset()));
                self.queue.push(at, Event::Arrive { fragment, origin, airtime: res.airtime });
            }
            None => self.log(now, node, "lost", || format!("tag={tag} off={}", fragment.header.byte_offset())),
        }
        Ok(())
    }

    fn on_arrive(&mut self, now: f64, mut fragment: Fragment, origin: Origin, airtime: f64) {
        let root = self.topo.root as usize;
        let e = self.cfg.energy;
        self.energy[root].charge_rx(airtime);
        self.energy[root].charge_cpu(e.frame_cpu);
        fragment.arrival_time = now;
        let before = self.receiver.work();
        let evicted_before = self.receiver.stats().drops.timeout;
        let result = self.receiver.admit_fragment(&fragment, now);
        let after = self.receiver.work();
        self.energy[root].charge_cpu(
            (after.hashes - before.hashes) as f64 * e.hash_cpu + (after.macs - before.macs) as f64 * e.mac_cpu,
        );
        let evicted = self.receiver.stats().drops.timeout - evicted_before;
        if evicted > 0 {
            self.log(now, self.topo.root, "evict", || format!("sessions={evicted}"));
        }
        let source = fragment.source;
        let tag = fragment.header.datagram_tag;
        match origin {
            Origin::Legit(_) => {
                self.legit_received += 1;
                if let Admission::Dropped(r) = result {
                    self.legit_drops.record(r);
                }
            }
            Origin::Attacker => {
                self.attacker_received += 1;
                let outcome = match result {
                    Admission::Dropped(r) => AttackerOutcome::Dropped(r),
                    _ => AttackerOutcome::Buffered,
                };
                self.attacker_events.push(AttackerEvent { time: now, outcome });
            }
        }
        match &result {
            Admission::Stored => self.log(now, source, "stored", || format!("tag={tag}")),
            Admission::Dropped(r) => self.log(now, source, "drop", || format!("tag={tag} reason={}", r.as_str())),
            Admission::Delivered(payload) => {
                let legit = self
                    .packet_index
                    .get(&(source, tag))
                    .copied()
                    .filter(|&i| !self.packets[i].delivered && self.packets[i].payload == *payload);
                match legit {
                    Some(i) => self.packets[i].delivered = true,
                    None => self.attacker_delivered += 1,
                }
                let kind = if legit.is_some() { "delivered" } else { "delivered_forged" };
                self.log(now, source, kind, || format!("tag={tag} len={}", payload.len()));
            }
        }
    }

    fn on_tick(&mut self, now: f64) {
        let evicted = self.receiver.tick(now);
        for s in evicted {
            self.log(now, s.source, "evict", || format!("tag={} bytes={}", s.tag, s.received_bytes()));
        }
    }

    fn finish(mut self) -> RunOutput {
        let cfg = self.cfg;
        let duration = cfg.traffic.duration;
        let stats = *self.receiver.stats();
        let sent = self.packets.len() as u64;
        let delivered = self.packets.iter().filter(|p| p.delivered).count() as u64;
        let dropped = stats.drops.admission_total();
        let legit_dropped = self.legit_drops.admission_total();
        let legit_security: u64 = crate::reassembly::DropReason::ALL
            .iter()
            .filter(|r| r.is_security())
            .map(|&r| self.legit_drops.get(r))
            .sum();
        let honest: Vec<usize> = std::iter::once(self.topo.root)
            .chain(self.topo.senders.iter().copied())
            .map(usize::from)
            .collect();
        let power = |n: usize| self.energy[n].energy_mw(duration, &cfg.energy);
        let avg_power = if duration > 0.0 {
            honest.iter().map(|&n| power(n)).sum::<f64>() / honest.len() as f64
        } else {
            0.0
        };
        let bounds = self.receiver.trust().score_bounds();
        let buffer = self.receiver.buffer();
        let detection = self
            .attack_start
            .and_then(|start| compute_detection_latency(&self.attacker_events, start));
        let metrics = RunMetrics {
            scenario: cfg.name.clone(),
            stack: cfg.stack,
            attack: cfg.attack.as_ref().map(|a| a.kind),
            seed: self.seed,
            duration,
            legit_sent: sent,
            legit_delivered: delivered,
            pdr: compute_pdr(sent, delivered),
            fragments_received: stats.received,
            fragments_buffered: stats.buffered,
            fragments_dropped: dropped,
            fragment_drop_rate: per_hundred(dropped, stats.received),
            drops: stats.drops,
            legit_fragments_received: self.legit_received,
            legit_fragments_dropped: legit_dropped,
            legit_drop_rate: per_hundred(legit_dropped, self.legit_received),
            false_positive_rate: per_hundred(legit_security, self.legit_received),
            legit_drops: self.legit_drops,
            attacker_emissions: self.attacker_emissions,
            attacker_fragments_received: self.attacker_received,
            attacker_datagrams_delivered: self.attacker_delivered,
            detection_latency_s: detection,
            avg_power_mw: avg_power,
            root_power_mw: if duration > 0.0 { power(self.topo.root as usize) } else { 0.0 },
            buffer_slots: buffer.capacity(),
            buffer_peak: buffer.peak(),
            buffer_availability: buffer.mean_availability(),
            sessions_allocated: buffer.allocations(),
            mean_hold_time_s: buffer.mean_hold_time(),
            trust_min: bounds.map(|b| b.0),
            trust_max: bounds.map(|b| b.1),
            crypto: self.receiver.work(),
            events: self.processed,
        };
        RunOutput {
            metrics,
            trust_trace: self.receiver.trust_mut().take_trace(),
            events: std::mem::take(&mut self.trace),
        }
    }
}
