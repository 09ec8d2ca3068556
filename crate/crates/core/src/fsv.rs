//! Fragment Signature Validator: chained keyed hashes over fragment payloads.
//!
//! The FRAG1 seeds the chain with `H_0 = HMAC(K, d_0 || nonce)` and carries
//! the truncated `H_0` as its signature. Each following fragment carries the
//! truncation of `H_i = HMAC(K, H_{i-1} || d_i)`. A receiver validates
//! in order and only advances on a match, so one bad fragment poisons the
//! remainder of its datagram.

use hmac::{Hmac, Mac};
use sha1::Sha1;
use subtle::ConstantTimeEq;
use thiserror::Error;

use crate::codec::{quantize_trust, ExtensionFields, Fragment, NONCE_LEN, SIGNATURE_LEN};

pub type Tag = [u8; SIGNATURE_LEN];
pub type Nonce = [u8; NONCE_LEN];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FsvError {
    #[error("shared key must not be empty")]
    EmptyKey,
}

/// A keyed hash with at least 160 bits of output.
pub trait KeyedHash: Clone {
    fn new(key: &[u8]) -> Self;
    fn digest(&self, parts: &[&[u8]]) -> Vec<u8>;
}

#[derive(Clone)]
pub struct HmacSha1(Hmac<Sha1>);

impl std::fmt::Debug for HmacSha1 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("HmacSha1(..)")
    }
}

impl KeyedHash for HmacSha1 {
    fn new(key: &[u8]) -> Self {
        // HMAC accepts keys of any length.
        Self(Hmac::new_from_slice(key).expect("hmac takes any key length"))
    }

    fn digest(&self, parts: &[&[u8]]) -> Vec<u8> {
        let mut mac = self.0.clone();
        for p in parts {
            mac.update(p);
        }
        mac.finalize().into_bytes().to_vec()
    }
}

/// Pre-shared group key.
#[derive(Clone)]
pub struct SharedKey<H: KeyedHash = HmacSha1> {
    hasher: H,
}

impl<H: KeyedHash> SharedKey<H> {
    pub fn new(key: &[u8]) -> Result<Self, FsvError> {
        if key.is_empty() {
            return Err(FsvError::EmptyKey);
        }
        Ok(Self { hasher: H::new(key) })
    }

    pub fn mac(&self, parts: &[&[u8]]) -> Vec<u8> {
        self.hasher.digest(parts)
    }
}

impl<H: KeyedHash> std::fmt::Debug for SharedKey<H> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("SharedKey(..)")
    }
}

pub fn truncate(hash: &[u8]) -> Tag {
    let mut t = [0; SIGNATURE_LEN];
    t.copy_from_slice(&hash[..SIGNATURE_LEN]);
    t
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Validation {
    Valid,
    Invalid,
}

/// Per-datagram chain context.
#[derive(Clone, Debug)]
pub struct HashChainState<H: KeyedHash = HmacSha1> {
    key: SharedKey<H>,
    prev_hash: Vec<u8>,
    nonce: Nonce,
    index: u32,
}

impl<H: KeyedHash> HashChainState<H> {
    pub fn prev_hash(&self) -> &[u8] {
        &self.prev_hash
    }

    pub fn nonce(&self) -> Nonce {
        self.nonce
    }

    /// Number of chain links after the seed.
    pub fn index(&self) -> u32 {
        self.index
    }

    /// Truncated `H_0`, carried by the FRAG1. Only meaningful at index 0.
    pub fn seed_tag(&self) -> Tag {
        truncate(&self.prev_hash)
    }

    fn expected(&self, payload: &[u8]) -> Vec<u8> {
        self.key.mac(&[&self.prev_hash, payload])
    }

    /// Advance the chain over `payload` and return the tag to transmit.
    pub fn next_hash(&mut self, payload: &[u8]) -> Tag {
        let h = self.expected(payload);
        let tag = truncate(&h);
        self.prev_hash = h;
        self.index += 1;
        tag
    }

    /// Check `received` against the next link. The chain only moves on a
    /// match.
    pub fn validate_fragment(&mut self, payload: &[u8], received: &Tag) -> Validation {
        let h = self.expected(payload);
        if bool::from(truncate(&h).ct_eq(received)) {
            self.prev_hash = h;
            self.index += 1;
            Validation::Valid
        } else {
            Validation::Invalid
        }
    }
}

pub fn seed_chain<H: KeyedHash>(key: &SharedKey<H>, frag1_payload: &[u8], nonce: Nonce) -> HashChainState<H> {
    HashChainState {
        key: key.clone(),
        prev_hash: key.mac(&[frag1_payload, &nonce]),
        nonce,
        index: 0,
    }
}

/// Seed from raw key bytes.
pub fn seed_chain_with_key(key: &[u8], frag1_payload: &[u8], nonce: Nonce) -> Result<HashChainState, FsvError> {
    Ok(seed_chain(&SharedKey::new(key)?, frag1_payload, nonce))
}

/// Check a FRAG1's carried seed tag and return the seeded chain if it
/// matches.
pub fn verify_seed<H: KeyedHash>(
    key: &SharedKey<H>,
    frag1_payload: &[u8],
    nonce: Nonce,
    received: &Tag,
) -> Option<HashChainState<H>> {
    let chain = seed_chain(key, frag1_payload, nonce);
    bool::from(chain.seed_tag().ct_eq(received)).then_some(chain)
}

/// Sender side: fill trust metadata and chained signatures into the
/// extension fields of an in-order fragment list.
pub fn sign_datagram<H: KeyedHash>(key: &SharedKey<H>, nonce: Nonce, trust: f64, fragments: &mut [Fragment]) {
    let Some((first, rest)) = fragments.split_first_mut() else {
        return;
    };
    let trust = quantize_trust(trust);
    let mut chain = seed_chain(key, &first.payload, nonce);
    first.header.ext = Some(ExtensionFields {
        trust,
        nonce: Some(nonce),
        signature: chain.seed_tag(),
    });
    for f in rest {
        let signature = chain.next_hash(&f.payload);
        f.header.ext = Some(ExtensionFields {
            trust,
            nonce: None,
            signature,
        });
    }
}

/// Tags for a whole chain: the seed tag followed by one tag per later
/// payload.
pub fn chain_tags<H: KeyedHash>(key: &SharedKey<H>, nonce: Nonce, payloads: &[Vec<u8>]) -> Vec<Tag> {
    let Some((first, rest)) = payloads.split_first() else {
        return Vec::new();
    };
    let mut chain = seed_chain(key, first, nonce);
    let mut tags = vec![chain.seed_tag()];
    tags.extend(rest.iter().map(|p| chain.next_hash(p)));
    tags
}

#[cfg(test)]
pub(crate) mod oracle {
    //! RFC 2104 HMAC-SHA1 built directly on the SHA-1 compression API,
    //! independent of the `hmac` crate.
    use sha1::{Digest, Sha1};

    pub fn hmac_sha1(key: &[u8], msg: &[u8]) -> [u8; 20] {
        let mut k = [0u8; 64];
        if key.len() > 64 {
            k[..20].copy_from_slice(&Sha1::digest(key));
        } else {
            k[..key.len()].copy_from_slice(key);
        }
        let ipad: Vec<u8> = k.iter().map(|b| b ^ 0x36).collect();
        let opad: Vec<u8> = k.iter().map(|b| b ^ 0x5c).collect();
        let inner = Sha1::new().chain_update(&ipad).chain_update(msg).finalize();
        Sha1::new().chain_update(&opad).chain_update(inner).finalize().into()
    }

    pub fn chain(key: &[u8], nonce: &[u8], payloads: &[Vec<u8>]) -> Vec<[u8; 8]> {
        let mut out = Vec::new();
        let mut prev = hmac_sha1(key, &[payloads[0].as_slice(), nonce].concat());
        out.push(prev[..8].try_into().unwrap());
        for p in &payloads[1..] {
            prev = hmac_sha1(key, &[prev.as_slice(), p].concat());
            out.push(prev[..8].try_into().unwrap());
        }
        out
    }
}
