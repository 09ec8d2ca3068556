//! Comparison stacks and the sender-side framing for each.
//!
//! * `Vanilla`: plain fragmentation, first come first served.
//! * `CsmLike`: blacklists a source for a fixed period after repeated
//!   failed reassemblies.
//! * `SecuPanLike`: an independent MAC on every fragment, checked before
//!   buffering, with no trust model.
//! * `PredictiveCsm`: trust gate plus chained fragment hashes.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use subtle::ConstantTimeEq;

use crate::codec::{self, ExtensionFields, Fragment, FragmentKind};
use crate::fsv::{self, Nonce, SharedKey, Tag};
use crate::reassembly::{Admission, DropReason, Receiver};
use crate::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StackVariant {
    #[serde(rename = "vanilla")]
    Vanilla,
    #[serde(rename = "csm", alias = "csm_like")]
    CsmLike,
    #[serde(rename = "secupan", alias = "secupan_like")]
    SecuPanLike,
    #[serde(rename = "pcsm", alias = "predictive_csm")]
    PredictiveCsm,
}

impl StackVariant {
    pub const ALL: [StackVariant; 4] = [
        StackVariant::Vanilla,
        StackVariant::CsmLike,
        StackVariant::SecuPanLike,
        StackVariant::PredictiveCsm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StackVariant::Vanilla => "vanilla",
            StackVariant::CsmLike => "csm",
            StackVariant::SecuPanLike => "secupan",
            StackVariant::PredictiveCsm => "pcsm",
        }
    }

    /// Whether fragments carry the trust/nonce/signature extension.
    pub fn uses_extension(self) -> bool {
        matches!(self, StackVariant::SecuPanLike | StackVariant::PredictiveCsm)
    }
}

impl fmt::Display for StackVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown stack '{0}'")]
pub struct UnknownStack(pub String);

impl FromStr for StackVariant {
    type Err = UnknownStack;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StackVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| UnknownStack(s.to_owned()))
    }
}

/// Consecutive-failure counters for the CSM-style baseline. Reaching the
/// limit blacklists the source for `block_duration` seconds and clears its
/// counter.
#[derive(Debug, Clone)]
pub struct CsmTracker {
    limit: u32,
    block_duration: f64,
    failures: BTreeMap<NodeId, u32>,
    blocked_until: BTreeMap<NodeId, f64>,
}

impl CsmTracker {
    pub fn new(limit: u32, block_duration: f64) -> Self {
        Self {
            limit,
            block_duration,
            failures: BTreeMap::new(),
            blocked_until: BTreeMap::new(),
        }
    }

    pub fn record_failure(&mut self, node: NodeId, now: f64) {
        if self.is_blocked(node, now) {
            return;
        }
        let count = self.failures.entry(node).or_default();
        *count += 1;
        if *count >= self.limit {
            *count = 0;
            self.blocked_until.insert(node, now + self.block_duration);
        }
    }

    pub fn record_success(&mut self, node: NodeId) {
        self.failures.insert(node, 0);
    }

    pub fn is_blocked(&self, node: NodeId, now: f64) -> bool {
        self.blocked_until.get(&node).is_some_and(|&until| now < until)
    }
}

/// Per-fragment MAC used by the SecuPAN-style stack. Covers the header
/// fields, the nonce when present, and the payload.
pub fn fragment_mac(key: &SharedKey, frag: &Fragment) -> Tag {
    let h = &frag.header;
    let (kind, offset) = match h.kind {
        FragmentKind::Frag1 => (1u8, 0u8),
        FragmentKind::FragN { offset } => (2, offset),
    };
    let nonce = h.ext.and_then(|e| e.nonce).unwrap_or_default();
    fsv::truncate(&key.mac(&[
        &[kind, offset],
        &h.datagram_size.to_be_bytes(),
        &h.datagram_tag.to_be_bytes(),
        &nonce,
        &frag.payload,
    ]))
}

/// Fragment `payload` and fill in whatever security fields `variant` uses.
pub fn prepare_datagram(
    variant: StackVariant,
    key: &SharedKey,
    payload: &[u8],
    tag: u16,
    nonce: Nonce,
    trust: f64,
) -> codec::Result<Vec<Fragment>> {
    let mut frags = codec::fragment_packet(payload, tag, variant.uses_extension())?;
    match variant {
        StackVariant::Vanilla | StackVariant::CsmLike => {}
        StackVariant::PredictiveCsm => fsv::sign_datagram(key, nonce, trust, &mut frags),
        StackVariant::SecuPanLike => {
            let trust = codec::quantize_trust(trust);
            for f in &mut frags {
                f.header.ext = Some(ExtensionFields {
                    trust,
                    nonce: f.header.is_first().then_some(nonce),
                    signature: [0; codec::SIGNATURE_LEN],
                });
                let mac = fragment_mac(key, f);
                if let Some(ext) = &mut f.header.ext {
                    ext.signature = mac;
                }
            }
        }
    }
    Ok(frags)
}

impl Receiver {
    pub(crate) fn admit_vanilla(&mut self, frag: &Fragment, now: f64) -> Admission {
        self.store_plain(frag, now)
    }

    pub(crate) fn admit_csm_like(&mut self, frag: &Fragment, now: f64) -> Admission {
        if self.csm.is_blocked(frag.source, now) {
            return Admission::Dropped(DropReason::Untrusted);
        }
        self.store_plain(frag, now)
    }

    pub(crate) fn admit_secupan_like(&mut self, frag: &Fragment, now: f64) -> Admission {
        let Some(ext) = frag.header.ext else {
            return Admission::Dropped(DropReason::BadSignature);
        };
        self.work.macs += 1;
        let expected = fragment_mac(&self.key, frag);
        if !bool::from(expected.ct_eq(&ext.signature)) {
            return Admission::Dropped(DropReason::BadSignature);
        }
        if let Some(nonce) = ext.nonce {
            let (source, tag) = (frag.source, frag.header.datagram_tag);
            if self.ledger.contains(now, source, tag, nonce) {
                return Admission::Dropped(DropReason::Replay);
            }
            let result = self.store_plain(frag, now);
            if !matches!(result, Admission::Dropped(_)) {
                self.ledger.insert(now, source, tag, nonce);
            }
            return result;
        }
        self.store_plain(frag, now)
    }
}
