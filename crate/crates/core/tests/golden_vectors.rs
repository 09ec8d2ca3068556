mod common;

use pcsm::codec::{self, FragmentKind};
use pcsm::vectors::{golden_vectors, GoldenVectors};

fn fixture() -> GoldenVectors {
    let text = include_str!("data/golden_vectors.json");
    serde_json::from_str(text).expect("fixture parses")
}

#[test]
fn generator_matches_checked_in_fixture() {
    assert_eq!(golden_vectors(), fixture());
}

#[test]
fn chain_tags_match_reference_hmac() {
    for v in fixture().chains {
        let key = hex::decode(&v.key).unwrap();
        let nonce = hex::decode(&v.nonce).unwrap();
        let payloads: Vec<Vec<u8>> = v.payloads.iter().map(|p| hex::decode(p).unwrap()).collect();
        let expected: Vec<String> = common::chain_oracle(&key, &nonce, &payloads).iter().map(hex::encode).collect();
        assert_eq!(v.tags, expected);
    }
}

#[test]
fn header_bytes_decode_to_their_fields() {
    for v in fixture().headers {
        let bytes = hex::decode(&v.bytes).unwrap();
        let h = codec::decode_header(&bytes).unwrap();
        assert_eq!(h.datagram_size, v.datagram_size);
        assert_eq!(h.datagram_tag, v.datagram_tag);
        assert_eq!(h.ext.is_some(), v.extension);
        match h.kind {
            FragmentKind::Frag1 => assert_eq!((v.kind.as_str(), v.offset), ("frag1", 0)),
            FragmentKind::FragN { offset } => assert_eq!((v.kind.as_str(), v.offset), ("fragn", offset)),
        }
        assert_eq!(codec::encode_header(&h).unwrap(), bytes);
    }
}
