//! Deterministic golden vectors for the chained hash and the header codec.

use serde::{Deserialize, Serialize};

use crate::codec::{self, ExtensionFields, FragmentHeader, FragmentKind};
use crate::fsv::{self, SharedKey};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainVector {
    pub key: String,
    pub nonce: String,
    pub payloads: Vec<String>,
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeaderVector {
    pub kind: String,
    pub datagram_size: u16,
    pub datagram_tag: u16,
    pub offset: u8,
    pub extension: bool,
    pub bytes: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldenVectors {
    pub chains: Vec<ChainVector>,
    pub headers: Vec<HeaderVector>,
}

/// Payload bytes derived from an index so vectors need no RNG.
fn pattern(len: usize, salt: u8) -> Vec<u8> {
    (0..len).map(|i| (i as u8).wrapping_mul(31).wrapping_add(salt)).collect()
}

fn chain_vector(key: &[u8], nonce: [u8; 4], lens: &[usize]) -> ChainVector {
    let payloads: Vec<Vec<u8>> = lens.iter().enumerate().map(|(i, &l)| pattern(l, i as u8)).collect();
    let shared: SharedKey = SharedKey::new(key).expect("non-empty key");
    let tags = fsv::chain_tags(&shared, nonce, &payloads);
    ChainVector {
        key: hex::encode(key),
        nonce: hex::encode(nonce),
        payloads: payloads.iter().map(hex::encode).collect(),
        tags: tags.iter().map(hex::encode).collect(),
    }
}

fn header_vector(kind: FragmentKind, size: u16, tag: u16, extension: bool) -> HeaderVector {
    let ext = extension.then(|| ExtensionFields {
        trust: codec::quantize_trust(0.8),
        nonce: matches!(kind, FragmentKind::Frag1).then_some([0xde, 0xad, 0xbe, 0xef]),
        signature: [1, 2, 3, 4, 5, 6, 7, 8],
    });
    let header = FragmentHeader {
        kind,
        datagram_size: size,
        datagram_tag: tag,
        ext,
    };
    let (name, offset) = match kind {
        FragmentKind::Frag1 => ("frag1", 0),
        FragmentKind::FragN { offset } => ("fragn", offset),
    };
    HeaderVector {
        kind: name.to_owned(),
        datagram_size: size,
        datagram_tag: tag,
        offset,
        extension,
        bytes: hex::encode(codec::encode_header(&header).expect("valid vector header")),
    }
}

pub fn golden_vectors() -> GoldenVectors {
    let chains = vec![
        chain_vector(b"predictive-csm-shared-key", [0, 0, 0, 1], &[96, 96, 8]),
        chain_vector(&[0x0b; 20], [0xff; 4], &[96]),
        chain_vector(b"k", [1, 2, 3, 4], &[96, 96, 96, 96, 32]),
        chain_vector(&pattern(64, 7), [9, 9, 9, 9], &[0, 5]),
    ];
    let headers = vec![
        header_vector(FragmentKind::Frag1, 200, 7, false),
        header_vector(FragmentKind::FragN { offset: 12 }, 200, 7, false),
        header_vector(FragmentKind::Frag1, 1280, 0xbeef, true),
        header_vector(FragmentKind::FragN { offset: 24 }, 1280, 0xbeef, true),
        header_vector(FragmentKind::Frag1, 2047, 0xffff, true),
    ];
    GoldenVectors { chains, headers }
}

impl GoldenVectors {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("vectors serialize")
    }
}
