use std::collections::BTreeMap;

use pcsm::baselines::{prepare_datagram, StackVariant};
use pcsm::codec::Fragment;
use pcsm::fsv::SharedKey;
use pcsm::reassembly::{Admission, BufferParams, Receiver};
use pcsm::trust::TrustParams;
use proptest::prelude::*;

#[derive(Debug, Clone)]
enum Op {
    Legit { datagram: usize, index: usize },
    Forged { datagram: usize, index: usize, byte: usize },
    Replay { datagram: usize },
}

#[derive(Debug, Clone)]
struct Case {
    payloads: Vec<Vec<u8>>,
    ops: Vec<(Op, f64)>,
}

fn case() -> impl Strategy<Value = Case> {
    prop::collection::vec(prop::collection::vec(any::<u8>(), 1..400), 1..6).prop_flat_map(|payloads| {
        let n = payloads.len();
        let op = prop_oneof![
            4 => (0..n, 0usize..5).prop_map(|(datagram, index)| Op::Legit { datagram, index }),
            1 => (0..n, 0usize..5, any::<usize>()).prop_map(|(datagram, index, byte)| Op::Forged { datagram, index, byte }),
            1 => (0..n).prop_map(|datagram| Op::Replay { datagram }),
        ];
        let ops = prop::collection::vec((op, 0.0f64..4.0), 1..60);
        (Just(payloads), ops).prop_map(|(payloads, ops)| Case { payloads, ops })
    })
}

fn key() -> SharedKey {
    SharedKey::new(b"admission-props").unwrap()
}

fn datagrams(variant: StackVariant, payloads: &[Vec<u8>]) -> Vec<Vec<Fragment>> {
    payloads
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut frags = prepare_datagram(variant, &key(), p, 100 + i as u16, [i as u8, 1, 2, 3], 0.8).unwrap();
            for f in &mut frags {
                f.source = 1 + (i % 3) as u16;
            }
            frags
        })
        .collect()
}

fn fragment_for(op: &Op, sent: &[Vec<Fragment>]) -> Fragment {
    match *op {
        Op::Legit { datagram, index } => {
            let d = &sent[datagram];
            d[index % d.len()].clone()
        }
        Op::Forged { datagram, index, byte } => {
            let d = &sent[datagram];
            let mut f = d[index % d.len()].clone();
            let at = byte % f.payload.len();
            f.payload[at] ^= 0x01;
            f
        }
        Op::Replay { datagram } => sent[datagram][0].clone(),
    }
}

fn drive(variant: StackVariant, c: &Case) -> Result<(), TestCaseError> {
    let sent = datagrams(variant, &c.payloads);
    let mut rx = Receiver::new(variant, BufferParams::default(), TrustParams::default(), key());
    for node in 1..=3 {
        rx.register_neighbor(node);
    }
    let originals: BTreeMap<(u16, u16), &Vec<u8>> = c
        .payloads
        .iter()
        .enumerate()
        .map(|(i, p)| ((1 + (i % 3) as u16, 100 + i as u16), p))
        .collect();
    let horizon = BufferParams::default().replay_horizon;
    let mut admitted_first: BTreeMap<_, f64> = BTreeMap::new();
    let mut now = 0.0;
    for (op, dt) in &c.ops {
        now += dt;
        let f = fragment_for(op, &sent);
        let result = rx.admit_fragment(&f, now);

        let stats = rx.stats();
        prop_assert_eq!(stats.received, stats.buffered + stats.drops.admission_total());
        prop_assert!(rx.buffer().occupied() <= rx.buffer().capacity());

        if variant.uses_extension() {
            if let Admission::Delivered(bytes) = &result {
                let original = originals[&(f.source, f.header.datagram_tag)];
                prop_assert_eq!(bytes, original);
            }
        }
        let admitted = !matches!(result, Admission::Dropped(_));
        if variant == StackVariant::PredictiveCsm && f.header.is_first() && admitted {
            let id = (f.source, f.header.datagram_tag, f.header.ext.and_then(|e| e.nonce));
            if let Some(prev) = admitted_first.insert(id, now) {
                prop_assert!(now - prev >= horizon, "FRAG1 {:?} admitted twice within the replay horizon", id);
            }
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn pcsm_invariants_hold_under_mixed_traffic(c in case()) {
        drive(StackVariant::PredictiveCsm, &c)?;
    }

    #[test]
    fn secupan_invariants_hold_under_mixed_traffic(c in case()) {
        drive(StackVariant::SecuPanLike, &c)?;
    }

    #[test]
    fn plain_stacks_conserve_fragments(c in case()) {
        drive(StackVariant::Vanilla, &c)?;
        drive(StackVariant::CsmLike, &c)?;
    }
}
