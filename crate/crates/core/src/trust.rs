//! Predictive Trust Engine.
//!
//! Each receiver keeps an exponentially weighted trust score per neighbor,
//! `T <- lambda * T + (1 - lambda) * O`, and drops FRAG1s from neighbors
//! whose score is under `theta`. Crossing below `theta` blacklists the
//! neighbor for a fixed period; on expiry it re-enters on probation with
//! its score reset to `theta`.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::codec::{Fragment, FragmentKind};
use crate::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrustParams {
    /// Forgetting factor.
    pub lambda: f64,
    /// Acceptance threshold.
    pub theta: f64,
    pub anomaly_threshold: f64,
    /// Seconds a neighbor stays blacklisted.
    pub block_duration: f64,
    /// Smoothing constant of the behavioral baseline.
    pub ewma_alpha: f64,
    /// Sliding window for the fragment-rate feature, seconds.
    pub rate_window: f64,
    /// Expected FRAG1 spacing of a well-behaved neighbor, seconds.
    pub nominal_interval: f64,
    /// Score for a neighbor first seen after convergence.
    pub unknown_score: f64,
    /// Score for a neighbor that joined during convergence.
    pub joined_score: f64,
}

impl Default for TrustParams {
    fn default() -> Self {
        Self {
            lambda: 0.9,
            theta: 0.3,
            anomaly_threshold: 2.0,
            block_duration: 60.0,
            ewma_alpha: 0.2,
            rate_window: 10.0,
            nominal_interval: 90.0,
            unknown_score: 0.5,
            joined_score: 0.8,
        }
    }
}

const EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Failure = 0,
    Success = 1,
}

impl Outcome {
    fn value(self) -> f64 {
        match self {
            Outcome::Failure => 0.0,
            Outcome::Success => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Accept,
    Drop,
}

/// Features extracted from one FRAG1 arrival.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BehaviorObservation {
    /// Seconds since the previous FRAG1 from this neighbor, if any.
    pub inter_arrival: Option<f64>,
    /// Fragments per second over the sliding window.
    pub rate: f64,
    pub sequence_ok: bool,
}

impl BehaviorObservation {
    pub fn nominal(params: &TrustParams) -> Self {
        Self {
            inter_arrival: Some(params.nominal_interval),
            rate: 1.0 / params.rate_window,
            sequence_ok: true,
        }
    }
}

/// Learned traffic profile of one neighbor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BehaviorHistory {
    pub ewma_inter_arrival: f64,
    pub ewma_rate: f64,
    pub sequence_violations: u32,
}

impl BehaviorHistory {
    fn nominal(params: &TrustParams) -> Self {
        Self {
            ewma_inter_arrival: params.nominal_interval,
            ewma_rate: 1.0 / params.rate_window,
            sequence_violations: 0,
        }
    }

    /// Max of the normalized feature deviations; any sequence violation is
    /// anomalous outright.
    pub fn deviation(&self, obs: &BehaviorObservation) -> f64 {
        if !obs.sequence_ok {
            return f64::INFINITY;
        }
        let rate = (obs.rate - self.ewma_rate).abs() / (self.ewma_rate + EPSILON);
        let timing = obs
            .inter_arrival
            .map(|ia| (ia - self.ewma_inter_arrival).abs() / (self.ewma_inter_arrival + EPSILON))
            .unwrap_or(0.0);
        rate.max(timing)
    }

    fn learn(&mut self, obs: &BehaviorObservation, alpha: f64) {
        self.ewma_rate = alpha * obs.rate + (1.0 - alpha) * self.ewma_rate;
        if let Some(ia) = obs.inter_arrival {
            self.ewma_inter_arrival = alpha * ia + (1.0 - alpha) * self.ewma_inter_arrival;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrustState {
    pub score: f64,
    pub lambda: f64,
    pub theta: f64,
    pub history: BehaviorHistory,
    pub blacklisted_until: Option<f64>,
    pub last_outcome: Option<Outcome>,
}

impl TrustState {
    pub fn new(score: f64, params: &TrustParams) -> Self {
        Self {
            score,
            lambda: params.lambda,
            theta: params.theta,
            history: BehaviorHistory::nominal(params),
            blacklisted_until: None,
            last_outcome: None,
        }
    }

    /// One step of the trust recurrence. Returns the new score.
    pub fn update_trust(&mut self, outcome: Outcome) -> f64 {
        let next = self.lambda * self.score + (1.0 - self.lambda) * outcome.value();
        self.score = next.clamp(0.0, 1.0);
        self.last_outcome = Some(outcome);
        self.score
    }

    pub fn penalize(&mut self) -> f64 {
        self.update_trust(Outcome::Failure)
    }

    pub fn reward(&mut self) -> f64 {
        self.update_trust(Outcome::Success)
    }

    pub fn below_threshold(&self) -> bool {
        self.score < self.theta
    }

    pub fn is_blocked(&self, now: f64) -> bool {
        self.blacklisted_until.is_some_and(|until| now < until)
    }

    /// Apply blacklist expiry: the neighbor re-enters at `theta`.
    fn refresh(&mut self, now: f64) {
        if let Some(until) = self.blacklisted_until {
            if now >= until {
                self.blacklisted_until = None;
                self.score = self.theta;
            }
        }
    }
}

/// A `(node, time, score)` sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrustSample {
    pub node: NodeId,
    pub time: f64,
    pub score: f64,
}

/// Per-receiver table of neighbor trust.
#[derive(Debug, Clone)]
pub struct TrustEngine {
    params: TrustParams,
    table: BTreeMap<NodeId, TrustState>,
    trace: Option<Vec<TrustSample>>,
    min_seen: f64,
    max_seen: f64,
}

impl TrustEngine {
    pub fn new(params: TrustParams) -> Self {
        Self {
            params,
            table: BTreeMap::new(),
            trace: None,
            min_seen: f64::INFINITY,
            max_seen: f64::NEG_INFINITY,
        }
    }

    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn params(&self) -> &TrustParams {
        &self.params
    }

    /// Register a neighbor that joined during convergence.
    pub fn register_neighbor(&mut self, node: NodeId) {
        let state = TrustState::new(self.params.joined_score, &self.params);
        self.table.insert(node, state);
    }

    pub fn state(&self, node: NodeId) -> Option<&TrustState> {
        self.table.get(&node)
    }

    fn entry(&mut self, node: NodeId, now: f64) -> &mut TrustState {
        let params = self.params;
        let state = self
            .table
            .entry(node)
            .or_insert_with(|| TrustState::new(params.unknown_score, &params));
        state.refresh(now);
        state
    }

    fn after_update(&mut self, node: NodeId, now: f64) {
        let block = self.params.block_duration;
        let state = self.table.get_mut(&node).expect("updated node exists");
        if state.below_threshold() && state.blacklisted_until.is_none() {
            state.blacklisted_until = Some(now + block);
        }
        let score = state.score;
        self.min_seen = self.min_seen.min(score);
        self.max_seen = self.max_seen.max(score);
        if let Some(trace) = &mut self.trace {
            trace.push(TrustSample { node, time: now, score });
        }
    }

    pub fn is_blocked(&self, node: NodeId, now: f64) -> bool {
        self.table.get(&node).is_some_and(|s| s.is_blocked(now))
    }

    /// Gate check for a non-first fragment: drop iff blacklisted.
    pub fn gate(&mut self, node: NodeId, now: f64) -> Decision {
        if self.entry(node, now).is_blocked(now) {
            Decision::Drop
        } else {
            Decision::Accept
        }
    }

    /// Score a FRAG1 against the neighbor's learned profile.
    pub fn evaluate_frag1(&mut self, node: NodeId, obs: &BehaviorObservation, now: f64) -> Decision {
        let (threshold, alpha) = (self.params.anomaly_threshold, self.params.ewma_alpha);
        let state = self.entry(node, now);
        if state.is_blocked(now) || state.below_threshold() {
            return Decision::Drop;
        }
        let delta = state.history.deviation(obs);
        let outcome = if delta < threshold {
            Outcome::Success
        } else {
            Outcome::Failure
        };
        if !obs.sequence_ok {
            state.history.sequence_violations += 1;
        }
        state.update_trust(outcome);
        if outcome == Outcome::Success {
            state.history.learn(obs, alpha);
        }
        self.after_update(node, now);
        if self.table[&node].below_threshold() {
            Decision::Drop
        } else {
            Decision::Accept
        }
    }

    pub fn penalize(&mut self, node: NodeId, now: f64) -> f64 {
        let s = self.entry(node, now).penalize();
        self.after_update(node, now);
        s
    }

    pub fn reward(&mut self, node: NodeId, now: f64) -> f64 {
        let s = self.entry(node, now).reward();
        self.after_update(node, now);
        s
    }

    /// Lowest and highest score ever produced, if any update happened.
    pub fn score_bounds(&self) -> Option<(f64, f64)> {
        (self.min_seen <= self.max_seen).then_some((self.min_seen, self.max_seen))
    }

    pub fn take_trace(&mut self) -> Vec<TrustSample> {
        self.trace.take().unwrap_or_default()
    }
}

#[derive(Debug, Clone, Default)]
struct OpenDatagram {
    tag: u16,
    size: usize,
    next_offset: usize,
}

impl OpenDatagram {
    fn complete(&self) -> bool {
        self.next_offset >= self.size
    }
}

#[derive(Debug, Clone, Default)]
struct SourceTrack {
    arrivals: VecDeque<f64>,
    last_frag1: Option<f64>,
    open: Option<OpenDatagram>,
    orphan_since_frag1: bool,
    recent_tags: VecDeque<(f64, u16)>,
}

/// Structural view of every frame heard from each neighbor, before any
/// admission decision. Produces the FRAG1 feature vector.
#[derive(Debug, Clone)]
pub struct BehaviorMonitor {
    window: f64,
    sources: BTreeMap<NodeId, SourceTrack>,
}

impl BehaviorMonitor {
    pub fn new(window: f64) -> Self {
        Self {
            window,
            sources: BTreeMap::new(),
        }
    }

    /// Record a received fragment. Returns the observation for a FRAG1.
    pub fn observe(&mut self, frag: &Fragment, now: f64) -> Option<BehaviorObservation> {
        let window = self.window;
        let track = self.sources.entry(frag.source).or_default();
        track.arrivals.push_back(now);
        while track.arrivals.front().is_some_and(|&t| t <= now - window) {
            track.arrivals.pop_front();
        }
        while track.recent_tags.front().is_some_and(|&(t, _)| t <= now - window) {
            track.recent_tags.pop_front();
        }
        let tag = frag.header.datagram_tag;
        match frag.header.kind {
            FragmentKind::Frag1 => {
                let previous_incomplete = track.open.as_ref().is_some_and(|d| !d.complete());
                let reused = track.recent_tags.iter().any(|&(_, t)| t == tag);
                let obs = BehaviorObservation {
                    inter_arrival: track.last_frag1.map(|t| now - t),
                    rate: track.arrivals.len() as f64 / window,
                    sequence_ok: !previous_incomplete && !reused && !track.orphan_since_frag1,
                };
                track.last_frag1 = Some(now);
                track.orphan_since_frag1 = false;
                track.recent_tags.push_back((now, tag));
                track.open = Some(OpenDatagram {
                    tag,
                    size: frag.header.datagram_size as usize,
                    next_offset: frag.payload.len(),
                });
                Some(obs)
            }
            FragmentKind::FragN { .. } => {
                let offset = frag.header.byte_offset();
                match &mut track.open {
                    Some(d) if d.tag == tag && offset == d.next_offset && !d.complete() => {
                        d.next_offset += frag.payload.len();
                    }
                    _ => track.orphan_since_frag1 = true,
                }
                None
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params() -> TrustParams {
        TrustParams::default()
    }

    #[test]
    fn single_updates() {
        let mut s = TrustState::new(0.5, &params());
        assert!((s.update_trust(Outcome::Success) - 0.55).abs() < 1e-12);
        let mut s = TrustState::new(0.8, &params());
        assert!((s.update_trust(Outcome::Failure) - 0.72).abs() < 1e-12);
        let mut s = TrustState::new(1.0, &params());
        assert!((s.penalize() - 0.9).abs() < 1e-12);
        let mut s = TrustState::new(0.0, &params());
        assert!((s.reward() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn ten_failures_cross_threshold() {
        let mut s = TrustState::new(0.8, &params());
        let mut crossed_at = None;
        for k in 1..=20 {
            s.penalize();
            if s.below_threshold() && crossed_at.is_none() {
                crossed_at = Some(k);
                assert!((s.score - 0.8 * 0.9f64.powi(10)).abs() < 1e-12);
            }
        }
        assert_eq!(crossed_at, Some(10));
    }

    #[test]
    fn alternating_outcomes_oscillate_in_band() {
        // Fixed points of the two-step map: low = lambda / (1 + lambda),
        // high = 1 / (1 + lambda).
        let lambda: f64 = 0.9;
        let mut s = TrustState::new(0.5, &params());
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..1000 {
            if i % 2 == 0 {
                s.reward();
            } else {
                s.penalize();
            }
            if i >= 900 {
                lo = lo.min(s.score);
                hi = hi.max(s.score);
            }
        }
        assert!((lo - lambda / (1.0 + lambda)).abs() < 1e-9);
        assert!((hi - 1.0 / (1.0 + lambda)).abs() < 1e-9);
        let mid = (lo + hi) / 2.0;
        assert!((mid - 0.5).abs() < 1e-9);
        assert!(((hi - lo) / 2.0 - (1.0 - lambda) / 2.0 / (1.0 + lambda)).abs() < 1e-9);
    }

    #[test]
    fn unknown_node_starts_at_half() {
        let mut e = TrustEngine::new(params());
        let obs = BehaviorObservation::nominal(&params());
        assert_eq!(e.evaluate_frag1(7, &obs, 100.0), Decision::Accept);
        assert!((e.state(7).unwrap().score - 0.55).abs() < 1e-12);
    }

    #[test]
    fn below_threshold_node_is_dropped() {
        let mut e = TrustEngine::new(params());
        e.register_neighbor(3);
        e.table.get_mut(&3).unwrap().score = 0.29;
        let obs = BehaviorObservation::nominal(&params());
        assert_eq!(e.evaluate_frag1(3, &obs, 10.0), Decision::Drop);
        assert_eq!(e.state(3).unwrap().score, 0.29);
    }

    #[test]
    fn flooding_rate_is_anomalous() {
        let p = params();
        let mut h = BehaviorHistory::nominal(&p);
        h.ewma_rate = 1.0 / 90.0;
        let obs = BehaviorObservation {
            inter_arrival: Some(1.0 / 6.0),
            rate: 6.0,
            sequence_ok: true,
        };
        let delta = h.deviation(&obs);
        // |6 - 1/90| / (1/90 + 1e-6)
        let expect = (6.0 - 1.0 / 90.0) / (1.0 / 90.0 + 1e-6);
        assert!((delta - expect).abs() < 1e-6);
        assert!(delta > p.anomaly_threshold);

        let mut e = TrustEngine::new(p);
        e.register_neighbor(9);
        e.table.get_mut(&9).unwrap().history = h;
        e.evaluate_frag1(9, &obs, 60.0);
        assert!(e.state(9).unwrap().score < p.joined_score);
        // The anomaly is not folded into the baseline.
        assert_eq!(e.state(9).unwrap().history.ewma_rate, 1.0 / 90.0);
    }

    #[test]
    fn blacklist_window() {
        let mut e = TrustEngine::new(params());
        e.register_neighbor(1);
        e.table.get_mut(&1).unwrap().score = 0.31;
        e.penalize(1, 100.0);
        assert!(e.is_blocked(1, 130.0));
        assert!(!e.is_blocked(1, 161.0));
        assert!(!e.is_blocked(2, 0.0));
        // Expiry is time based and re-enters at theta.
        assert_eq!(e.gate(1, 161.0), Decision::Accept);
        assert_eq!(e.state(1).unwrap().score, 0.3);
    }

    #[test]
    fn single_failure_from_high_trust_is_tolerated() {
        let mut e = TrustEngine::new(params());
        e.register_neighbor(4);
        e.table.get_mut(&4).unwrap().score = 0.9;
        e.penalize(4, 1.0);
        assert!(!e.is_blocked(4, 1.0));
    }

    #[test]
    fn monitor_flags_incomplete_and_orphans() {
        let mut m = BehaviorMonitor::new(10.0);
        let payload = vec![0u8; 200];
        let mut frags = crate::codec::fragment_packet(&payload, 1, false).unwrap();
        for f in &mut frags {
            f.source = 5;
        }
        let obs = m.observe(&frags[0], 0.0).unwrap();
        assert!(obs.sequence_ok);
        assert_eq!(obs.inter_arrival, None);
        assert_eq!(m.observe(&frags[1], 0.1), None);
        // FRAGN #3 never arrives: the next datagram's FRAG1 sees a gap.
        let mut next = crate::codec::fragment_packet(&payload, 2, false).unwrap();
        next[0].source = 5;
        let obs = m.observe(&next[0], 90.0).unwrap();
        assert!(!obs.sequence_ok);
        assert_eq!(obs.inter_arrival, Some(90.0));
        // Orphan FRAGN for an unknown tag.
        let mut orphan = frags[2].clone();
        orphan.header.datagram_tag = 77;
        m.observe(&orphan, 91.0);
        let mut third = crate::codec::fragment_packet(&[0u8; 50], 3, false).unwrap();
        third[0].source = 5;
        assert!(!m.observe(&third[0], 180.0).unwrap().sequence_ok);
    }

    proptest! {
        #[test]
        fn score_stays_bounded(start in 0.0f64..=1.0, lambda in 0.01f64..0.99, outcomes in proptest::collection::vec(any::<bool>(), 0..200)) {
            let p = TrustParams { lambda, ..params() };
            let mut s = TrustState::new(start, &p);
            for o in outcomes {
                s.update_trust(if o { Outcome::Success } else { Outcome::Failure });
                prop_assert!((0.0..=1.0).contains(&s.score));
            }
        }

        #[test]
        fn dominated_sequences_score_lower(start in 0.0f64..=1.0, pairs in proptest::collection::vec((any::<bool>(), any::<bool>()), 1..100)) {
            let mut hi = TrustState::new(start, &params());
            let mut lo = TrustState::new(start, &params());
            for (a, b) in pairs {
                let better = a || b;
                let worse = a && b;
                hi.update_trust(if better { Outcome::Success } else { Outcome::Failure });
                lo.update_trust(if worse { Outcome::Success } else { Outcome::Failure });
                prop_assert!(lo.score <= hi.score);
            }
        }

        #[test]
        fn geometric_decay_is_exact(start in 0.0f64..=1.0, k in 0usize..60) {
            let mut down = TrustState::new(start, &params());
            let mut up = TrustState::new(start, &params());
            for _ in 0..k {
                down.penalize();
                up.reward();
            }
            let lk = 0.9f64.powi(k as i32);
            prop_assert!((down.score - start * lk).abs() < 1e-12);
            prop_assert!((up.score - (1.0 - (1.0 - start) * lk)).abs() < 1e-12);
        }
    }
}
