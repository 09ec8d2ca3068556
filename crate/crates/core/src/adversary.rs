//! Attack schedules. The adversary is omniscient about legitimate send times
//! and holds no key, so every tag it emits is random.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{self, ExtensionFields, Fragment};
use crate::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    EarlyFrag1,
    CompleteFlooding,
    HeaderReplay,
    #[default]
    BurstInjection,
    LatePhase,
}

impl AttackKind {
    pub const ALL: [AttackKind; 5] = [
        AttackKind::EarlyFrag1,
        AttackKind::CompleteFlooding,
        AttackKind::HeaderReplay,
        AttackKind::BurstInjection,
        AttackKind::LatePhase,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::EarlyFrag1 => "early_frag1",
            AttackKind::CompleteFlooding => "complete_flooding",
            AttackKind::HeaderReplay => "header_replay",
            AttackKind::BurstInjection => "burst_injection",
            AttackKind::LatePhase => "late_phase",
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown attack '{0}'")]
pub struct UnknownAttack(pub String);

impl FromStr for AttackKind {
    type Err = UnknownAttack;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AttackKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| UnknownAttack(s.to_owned()))
    }
}

/// Attack description. Fields not relevant to `kind` are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSpec {
    pub kind: AttackKind,
    /// No emission happens before this time.
    pub start_time: f64,
    /// Optional end of the attack; defaults to the end of the run.
    pub stop_time: Option<f64>,
    /// Receiver under attack.
    pub target: NodeId,
    /// Declared size of forged datagrams, bytes.
    pub datagram_size: usize,
    /// Gap between consecutive fragments of one forged train, seconds.
    pub fragment_spacing: f64,

    /// Lead of the last forged FRAG1 over the victim's FRAG1, seconds.
    pub early_offset: f64,
    pub early_count: usize,
    pub early_spacing: f64,
    /// Fraction of legitimate transmissions the attacker races.
    pub early_target_fraction: f64,

    /// One complete forged train every this many seconds.
    pub flood_interval: f64,

    pub replay_delay: f64,
    pub replay_copies: usize,
    /// Fraction of captured FRAG1s that get replayed.
    pub replay_fraction: f64,

    /// FRAG1s per second while a burst is on.
    pub burst_rate: f64,
    pub burst_duration: f64,
    pub burst_period: f64,

    /// Delay after each legitimate FRAG1, seconds.
    pub late_offset: f64,
    /// Fragments per late train; the train stops short of completing.
    pub late_fragments: usize,
}

impl Default for AttackSpec {
    fn default() -> Self {
        Self {
            kind: AttackKind::default(),
            start_time: 50.0,
            stop_time: None,
            target: 0,
            datagram_size: 1280,
            fragment_spacing: 0.005,
            early_offset: 0.005,
            early_count: 6,
            early_spacing: 0.02,
            early_target_fraction: 0.5,
            flood_interval: 5.0,
            replay_delay: 20.0,
            replay_copies: 2,
            replay_fraction: 0.75,
            burst_rate: 6.0,
            burst_duration: 10.0,
            burst_period: 18.0,
            late_offset: 0.05,
            late_fragments: 13,
        }
    }
}

/// A legitimate FRAG1 transmission the attacker can see.
#[derive(Debug, Clone)]
pub struct LegitTransmission {
    pub time: f64,
    pub frag1: Fragment,
}

pub struct AttackContext<'a> {
    pub attacker: NodeId,
    pub duration: f64,
    /// Whether the network's frames carry the security extension.
    pub with_extension: bool,
    /// Legitimate FRAG1s in time order.
    pub legit: &'a [LegitTransmission],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Emission {
    pub time: f64,
    pub fragment: Fragment,
}

fn random_ext(rng: &mut ChaCha8Rng, first: bool) -> ExtensionFields {
    ExtensionFields {
        trust: u8::MAX,
        nonce: first.then(|| rng.gen()),
        signature: rng.gen(),
    }
}

/// A forged datagram of `size` bytes with random content and tags, cut
/// into fragments.
fn forged_train(rng: &mut ChaCha8Rng, ctx: &AttackContext<'_>, size: usize) -> Vec<Fragment> {
    let tag: u16 = rng.gen();
    let mut payload = vec![0u8; size];
    rng.fill(payload.as_mut_slice());
    let mut frags = codec::fragment_packet(&payload, tag, false).expect("forged size is in range");
    for f in &mut frags {
        f.source = ctx.attacker;
        if ctx.with_extension {
            f.header.ext = Some(random_ext(rng, f.header.is_first()));
        }
    }
    frags
}

/// Generate the full emission list for one run, in time order.
pub fn schedule_attack(spec: &AttackSpec, ctx: &AttackContext<'_>, rng: &mut ChaCha8Rng) -> Vec<Emission> {
    let start = spec.start_time;
    let end = spec.stop_time.unwrap_or(ctx.duration).min(ctx.duration);
    let mut out = Vec::new();
    let push_train = |out: &mut Vec<Emission>, t0: f64, frags: Vec<Fragment>, spacing: f64| {
        for (i, fragment) in frags.into_iter().enumerate() {
            out.push(Emission {
                time: t0 + i as f64 * spacing,
                fragment,
            });
        }
    };
    match spec.kind {
        AttackKind::EarlyFrag1 => {
            for tx in ctx.legit {
                if !rng.gen_bool(spec.early_target_fraction.clamp(0.0, 1.0)) {
                    continue;
                }
                let last = tx.time - spec.early_offset;
                for i in 0..spec.early_count {
                    let t = last - (spec.early_count - 1 - i) as f64 * spec.early_spacing;
                    let frag = forged_train(rng, ctx, spec.datagram_size).swap_remove(0);
                    out.push(Emission { time: t, fragment: frag });
                }
            }
        }
        AttackKind::CompleteFlooding => {
            let mut t = start;
            while t <= end {
                let train = forged_train(rng, ctx, spec.datagram_size);
                push_train(&mut out, t, train, spec.fragment_spacing);
                t += spec.flood_interval;
            }
        }
        AttackKind::HeaderReplay => {
            for tx in ctx.legit {
                if !rng.gen_bool(spec.replay_fraction.clamp(0.0, 1.0)) {
                    continue;
                }
                for copy in 1..=spec.replay_copies {
                    let mut frag = tx.frag1.clone();
                    rng.fill(frag.payload.as_mut_slice());
                    out.push(Emission {
                        time: tx.time + copy as f64 * spec.replay_delay,
                        fragment: frag,
                    });
                }
            }
        }
        AttackKind::BurstInjection => {
            let per_burst = (spec.burst_rate * spec.burst_duration).round() as usize;
            let mut burst = start;
            while burst <= end {
                for i in 0..per_burst {
                    let frag = forged_train(rng, ctx, spec.datagram_size).swap_remove(0);
                    out.push(Emission {
                        time: burst + i as f64 / spec.burst_rate,
                        fragment: frag,
                    });
                }
                burst += spec.burst_period;
            }
        }
        AttackKind::LatePhase => {
            for tx in ctx.legit {
                let mut train = forged_train(rng, ctx, spec.datagram_size);
                train.truncate(spec.late_fragments);
                push_train(&mut out, tx.time + spec.late_offset, train, spec.fragment_spacing);
            }
        }
    }
    out.retain(|e| e.time >= start && e.time <= end);
    out.sort_by(|a, b| a.time.total_cmp(&b.time));
    out
}
