//! RFC 4944 fragmentation headers with the Predictive-CSM extension.
//!
//! Base layout (big-endian, bit-exact):
//!
//! ```text
//! FRAG1: 11000 | size:11 | tag:16                 (4 bytes)
//! FRAGN: 11100 | size:11 | tag:16 | offset:8      (5 bytes)
//! ```
//!
//! The extension, when present, follows the base header:
//! `trust:1 | nonce:4 (FRAG1 only) | signature:8`.

use thiserror::Error;

use crate::NodeId;

pub const MAX_DATAGRAM_SIZE: usize = 2047;
pub const MAX_FRAGMENT_PAYLOAD: usize = 96;
pub const SIGNATURE_LEN: usize = 8;
pub const NONCE_LEN: usize = 4;

pub const FRAG1_HEADER_LEN: usize = 4;
pub const FRAGN_HEADER_LEN: usize = 5;
pub const FRAG1_EXT_LEN: usize = 1 + NONCE_LEN + SIGNATURE_LEN;
pub const FRAGN_EXT_LEN: usize = 1 + SIGNATURE_LEN;

const FRAG1_DISPATCH: u8 = 0b11000;
const FRAGN_DISPATCH: u8 = 0b11100;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("payload of {0} bytes exceeds the 11-bit datagram size field")]
    PayloadTooLarge(usize),
    #[error("cannot fragment an empty payload")]
    EmptyPayload,
    #[error("invalid header: {0}")]
    InvalidHeader(&'static str),
    #[error("input truncated")]
    Truncated,
    #[error("dispatch {0:#07b} is not a fragmentation header")]
    NotAFragment(u8),
}

pub type Result<T> = std::result::Result<T, CodecError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FragmentKind {
    Frag1,
    /// Offset in units of 8 bytes.
    FragN { offset: u8 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ExtensionFields {
    /// Sender's self-assessed trust, `round(T * 255)`.
    pub trust: u8,
    /// Per-datagram nonce; present iff the header is a FRAG1.
    pub nonce: Option<[u8; NONCE_LEN]>,
    /// Leftmost 8 bytes of the keyed hash.
    pub signature: [u8; SIGNATURE_LEN],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FragmentHeader {
    pub kind: FragmentKind,
    pub datagram_size: u16,
    pub datagram_tag: u16,
    pub ext: Option<ExtensionFields>,
}

impl FragmentHeader {
    pub fn is_first(&self) -> bool {
        matches!(self.kind, FragmentKind::Frag1)
    }

    /// Byte offset of this fragment's payload within the datagram.
    pub fn byte_offset(&self) -> usize {
        match self.kind {
            FragmentKind::Frag1 => 0,
            FragmentKind::FragN { offset } => offset as usize * 8,
        }
    }

    pub fn encoded_len(&self) -> usize {
        let base = match self.kind {
            FragmentKind::Frag1 => FRAG1_HEADER_LEN,
            FragmentKind::FragN { .. } => FRAGN_HEADER_LEN,
        };
        base + match self.ext {
            None => 0,
            Some(_) => extension_len(self.kind),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.datagram_size as usize > MAX_DATAGRAM_SIZE {
            return Err(CodecError::InvalidHeader("datagram_size exceeds 11 bits"));
        }
        if let FragmentKind::FragN { offset } = self.kind {
            if offset as usize * 8 >= self.datagram_size as usize {
                return Err(CodecError::InvalidHeader("offset beyond datagram_size"));
            }
        }
        if let Some(ext) = &self.ext {
            if ext.nonce.is_some() != self.is_first() {
                return Err(CodecError::InvalidHeader("nonce must be present iff FRAG1"));
            }
        }
        Ok(())
    }
}

pub fn extension_len(kind: FragmentKind) -> usize {
    match kind {
        FragmentKind::Frag1 => FRAG1_EXT_LEN,
        FragmentKind::FragN { .. } => FRAGN_EXT_LEN,
    }
}

/// A fragment as seen by the receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct Fragment {
    pub header: FragmentHeader,
    pub payload: Vec<u8>,
    pub source: NodeId,
    pub arrival_time: f64,
}

impl Fragment {
    pub fn is_last(&self) -> bool {
        self.header.byte_offset() + self.payload.len() >= self.header.datagram_size as usize
    }

    /// Header plus payload bytes on the air.
    pub fn frame_len(&self) -> usize {
        self.header.encoded_len() + self.payload.len()
    }
}

/// Quantize a trust score in `[0, 1]` to the one-byte wire field.
pub fn quantize_trust(score: f64) -> u8 {
    (score.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn dequantize_trust(byte: u8) -> f64 {
    byte as f64 / 255.0
}

/// Slice `payload` into 96-byte fragments sharing `tag`. Extension fields,
/// when requested, are zeroed; the sender pipeline fills them in.
pub fn fragment_packet(payload: &[u8], tag: u16, with_extension: bool) -> Result<Vec<Fragment>> {
    if payload.is_empty() {
        return Err(CodecError::EmptyPayload);
    }
    if payload.len() > MAX_DATAGRAM_SIZE {
        return Err(CodecError::PayloadTooLarge(payload.len()));
    }
    let size = payload.len() as u16;
    let fragments = payload
        .chunks(MAX_FRAGMENT_PAYLOAD)
        .enumerate()
        .map(|(i, chunk)| {
            let kind = if i == 0 {
                FragmentKind::Frag1
            } else {
                FragmentKind::FragN {
                    offset: (i * MAX_FRAGMENT_PAYLOAD / 8) as u8,
                }
            };
            let ext = with_extension.then(|| ExtensionFields {
                trust: 0,
                nonce: (i == 0).then_some([0; NONCE_LEN]),
                signature: [0; SIGNATURE_LEN],
            });
            Fragment {
                header: FragmentHeader {
                    kind,
                    datagram_size: size,
                    datagram_tag: tag,
                    ext,
                },
                payload: chunk.to_vec(),
                source: 0,
                arrival_time: 0.0,
            }
        })
        .collect();
    Ok(fragments)
}

pub fn encode_header(h: &FragmentHeader) -> Result<Vec<u8>> {
    h.validate()?;
    let mut out = Vec::with_capacity(h.encoded_len());
    let dispatch = match h.kind {
        FragmentKind::Frag1 => FRAG1_DISPATCH,
        FragmentKind::FragN { .. } => FRAGN_DISPATCH,
    };
    let first = ((dispatch as u16) << 11) | h.datagram_size;
    out.extend_from_slice(&first.to_be_bytes());
    out.extend_from_slice(&h.datagram_tag.to_be_bytes());
    if let FragmentKind::FragN { offset } = h.kind {
        out.push(offset);
    }
    if let Some(ext) = &h.ext {
        out.push(ext.trust);
        if let Some(nonce) = ext.nonce {
            out.extend_from_slice(&nonce);
        }
        out.extend_from_slice(&ext.signature);
    }
    Ok(out)
}

/// Parse the base header and return it with the number of bytes consumed.
/// Extension bytes, if any, are left untouched, so a legacy decoder can
/// use this directly.
pub fn decode_base_header(bytes: &[u8]) -> Result<(FragmentHeader, usize)> {
    let first = *bytes.first().ok_or(CodecError::Truncated)?;
    let dispatch = first >> 3;
    let base_len = match dispatch {
        FRAG1_DISPATCH => FRAG1_HEADER_LEN,
        FRAGN_DISPATCH => FRAGN_HEADER_LEN,
        other => return Err(CodecError::NotAFragment(other)),
    };
    if bytes.len() < base_len {
        return Err(CodecError::Truncated);
    }
    let datagram_size = u16::from_be_bytes([bytes[0], bytes[1]]) & 0x07ff;
    let datagram_tag = u16::from_be_bytes([bytes[2], bytes[3]]);
    let kind = if dispatch == FRAG1_DISPATCH {
        FragmentKind::Frag1
    } else {
        FragmentKind::FragN { offset: bytes[4] }
    };
    let header = FragmentHeader {
        kind,
        datagram_size,
        datagram_tag,
        ext: None,
    };
    header.validate()?;
    Ok((header, base_len))
}

fn decode_extension(kind: FragmentKind, bytes: &[u8]) -> Result<ExtensionFields> {
    if bytes.len() < extension_len(kind) {
        return Err(CodecError::Truncated);
    }
    let trust = bytes[0];
    let (nonce, sig_at) = match kind {
        FragmentKind::Frag1 => {
            let mut n = [0; NONCE_LEN];
            n.copy_from_slice(&bytes[1..1 + NONCE_LEN]);
            (Some(n), 1 + NONCE_LEN)
        }
        FragmentKind::FragN { .. } => (None, 1),
    };
    let mut signature = [0; SIGNATURE_LEN];
    signature.copy_from_slice(&bytes[sig_at..sig_at + SIGNATURE_LEN]);
    Ok(ExtensionFields {
        trust,
        nonce,
        signature,
    })
}

/// Decode a header-only buffer. Trailing bytes after the base header must
/// be exactly one extension block for that kind.
pub fn decode_header(bytes: &[u8]) -> Result<FragmentHeader> {
    let (mut header, used) = decode_base_header(bytes)?;
    let rest = &bytes[used..];
    if rest.is_empty() {
        return Ok(header);
    }
    let ext_len = extension_len(header.kind);
    if rest.len() < ext_len {
        return Err(CodecError::Truncated);
    }
    if rest.len() > ext_len {
        return Err(CodecError::InvalidHeader("trailing bytes after extension"));
    }
    header.ext = Some(decode_extension(header.kind, rest)?);
    Ok(header)
}

pub fn encode_frame(header: &FragmentHeader, payload: &[u8]) -> Result<Vec<u8>> {
    let mut out = encode_header(header)?;
    out.extend_from_slice(payload);
    Ok(out)
}

/// Split a received frame into header and payload. `with_extension` is the
/// network-wide setting for whether extension blocks follow base headers.
pub fn decode_frame(bytes: &[u8], with_extension: bool) -> Result<(FragmentHeader, &[u8])> {
    let (mut header, mut used) = decode_base_header(bytes)?;
    if with_extension {
        header.ext = Some(decode_extension(header.kind, &bytes[used..])?);
        used += extension_len(header.kind);
    }
    let payload = &bytes[used..];
    if header.byte_offset() + payload.len() > header.datagram_size as usize {
        return Err(CodecError::InvalidHeader("payload runs past datagram_size"));
    }
    Ok((header, payload))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frag1(size: u16, tag: u16) -> FragmentHeader {
        FragmentHeader {
            kind: FragmentKind::Frag1,
            datagram_size: size,
            datagram_tag: tag,
            ext: None,
        }
    }

    #[test]
    fn fragments_200_bytes_into_three() {
        let payload: Vec<u8> = (0..200).map(|i| i as u8).collect();
        let frags = fragment_packet(&payload, 7, false).unwrap();
        let shape: Vec<_> = frags
            .iter()
            .map(|f| (f.header.kind, f.payload.len()))
            .collect();
        assert_eq!(
            shape,
            vec![
                (FragmentKind::Frag1, 96),
                (FragmentKind::FragN { offset: 12 }, 96),
                (FragmentKind::FragN { offset: 24 }, 8),
            ]
        );
        assert!(frags.iter().all(|f| f.header.datagram_tag == 7));
        assert!(frags.iter().all(|f| f.header.datagram_size == 200));
        assert!(frags[2].is_last() && !frags[1].is_last());
    }

    #[test]
    fn single_frame_payload() {
        let frags = fragment_packet(&[1; 96], 1, true).unwrap();
        assert_eq!(frags.len(), 1);
        assert!(frags[0].header.is_first());
        assert_eq!(frags[0].header.ext.unwrap().nonce, Some([0; 4]));
    }

    #[test]
    fn size_limits() {
        assert_eq!(
            fragment_packet(&[0; 2048], 0, false),
            Err(CodecError::PayloadTooLarge(2048))
        );
        assert_eq!(fragment_packet(&[], 0, false), Err(CodecError::EmptyPayload));
        assert!(fragment_packet(&[0; 2047], 0, false).is_ok());
    }

    #[test]
    fn dispatch_bits() {
        let b = encode_header(&frag1(200, 7)).unwrap();
        assert_eq!(b.len(), 4);
        assert_eq!(b[0] >> 3, 0b11000);
        assert_eq!(b, vec![0xC0, 0xC8, 0x00, 0x07]);

        let n = FragmentHeader {
            kind: FragmentKind::FragN { offset: 12 },
            ..frag1(200, 7)
        };
        let b = encode_header(&n).unwrap();
        assert_eq!(b.len(), 5);
        assert_eq!(b[0] >> 3, 0b11100);
        assert_eq!(b, vec![0xE0, 0xC8, 0x00, 0x07, 12]);
    }

    #[test]
    fn extension_overhead() {
        let ext1 = ExtensionFields {
            trust: 200,
            nonce: Some([1, 2, 3, 4]),
            signature: [9; 8],
        };
        let h = FragmentHeader {
            ext: Some(ext1),
            ..frag1(200, 7)
        };
        assert_eq!(encode_header(&h).unwrap().len(), 4 + 13);
        let n = FragmentHeader {
            kind: FragmentKind::FragN { offset: 1 },
            datagram_size: 200,
            datagram_tag: 7,
            ext: Some(ExtensionFields {
                trust: 1,
                nonce: None,
                signature: [3; 8],
            }),
        };
        let bytes = encode_header(&n).unwrap();
        assert_eq!(bytes.len(), 5 + 9);
        // A legacy decoder still sees the base header.
        let (base, used) = decode_base_header(&bytes).unwrap();
        assert_eq!(used, 5);
        assert_eq!(base, FragmentHeader { ext: None, ..n });
    }

    #[test]
    fn decode_errors() {
        assert_eq!(decode_header(&[]), Err(CodecError::Truncated));
        assert_eq!(
            decode_header(&[0b0100_0000, 0, 0, 0]),
            Err(CodecError::NotAFragment(0b01000))
        );
        assert_eq!(decode_header(&[0xC0, 0xC8, 0x00]), Err(CodecError::Truncated));
        // offset 25 * 8 = 200 is not < 200
        assert!(matches!(
            decode_header(&[0xE0, 0xC8, 0x00, 0x07, 25]),
            Err(CodecError::InvalidHeader(_))
        ));
        // one stray byte after a FRAG1 base header
        assert_eq!(decode_header(&[0xC0, 0xC8, 0, 7, 1]), Err(CodecError::Truncated));
    }

    #[test]
    fn encode_rejects_bad_headers() {
        let bad = FragmentHeader {
            ext: Some(ExtensionFields {
                trust: 0,
                nonce: None,
                signature: [0; 8],
            }),
            ..frag1(10, 1)
        };
        assert!(encode_header(&bad).is_err());
        assert!(encode_header(&frag1(2048, 1)).is_err());
    }

    #[test]
    fn trust_quantization_is_monotone() {
        assert_eq!(quantize_trust(0.0), 0);
        assert_eq!(quantize_trust(1.0), 255);
        assert_eq!(quantize_trust(0.5), 128);
        let mut prev = 0;
        for i in 0..=1000 {
            let q = quantize_trust(i as f64 / 1000.0);
            assert!(q >= prev);
            prev = q;
        }
    }

    #[test]
    fn frame_round_trip() {
        let payload: Vec<u8> = (0..200).map(|i| (i * 3) as u8).collect();
        for f in fragment_packet(&payload, 99, true).unwrap() {
            let bytes = encode_frame(&f.header, &f.payload).unwrap();
            let (h, p) = decode_frame(&bytes, true).unwrap();
            assert_eq!(h, f.header);
            assert_eq!(p, &f.payload[..]);
        }
    }

    pub(crate) fn arb_header() -> impl Strategy<Value = FragmentHeader> {
        (1u16..=2047, any::<u16>(), any::<bool>(), any::<bool>(), any::<u8>(), any::<[u8; 4]>(), any::<[u8; 8]>(), any::<u8>())
            .prop_map(|(size, tag, first, with_ext, trust, nonce, signature, off)| {
                let kind = if first {
                    FragmentKind::Frag1
                } else {
                    let max = ((size as usize - 1) / 8) as u16;
                    FragmentKind::FragN {
                        offset: (off as u16 % (max + 1)) as u8,
                    }
                };
                FragmentHeader {
                    kind,
                    datagram_size: size,
                    datagram_tag: tag,
                    ext: with_ext.then_some(ExtensionFields {
                        trust,
                        nonce: first.then_some(nonce),
                        signature,
                    }),
                }
            })
    }

    proptest! {
        #[test]
        fn header_round_trip(h in arb_header()) {
            let bytes = encode_header(&h).unwrap();
            prop_assert_eq!(bytes.len(), h.encoded_len());
            prop_assert_eq!(decode_header(&bytes).unwrap(), h);
        }

        #[test]
        fn fragments_cover_payload(payload in proptest::collection::vec(any::<u8>(), 1..=2047)) {
            let frags = fragment_packet(&payload, 3, false).unwrap();
            let mut rebuilt = Vec::new();
            for f in &frags {
                prop_assert_eq!(f.header.byte_offset(), rebuilt.len());
                prop_assert!(f.payload.len() <= MAX_FRAGMENT_PAYLOAD);
                rebuilt.extend_from_slice(&f.payload);
            }
            prop_assert_eq!(rebuilt, payload);
        }
    }
}
