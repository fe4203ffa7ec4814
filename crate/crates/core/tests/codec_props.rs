//! Property tests for erasure coding, canonical encoding, signatures and
//! quorum certificates.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rorqual::codec::{
    assemble_cert, decode, digest, encode, encoded_len, keygen, rs_decode, rs_encode, sign, verify, verify_cert,
    KeyDomain, PublicKey, SchemeKind,
};
use rorqual::message::{Envelope, Message};
use rorqual::types::{Edge, PeerId, Vertex};

fn arb_params() -> impl Strategy<Value = (usize, usize)> {
    (1usize..=31).prop_flat_map(|n| (Just(n), 1..=n))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn any_k_shares_reconstruct(
        (n, k) in arb_params(),
        payload in prop::collection::vec(any::<u8>(), 0..600),
        order in Just(()).prop_perturb(|_, mut rng| rng.next_u64()),
    ) {
        let shares = rs_encode(&payload, n, k).unwrap();
        prop_assert_eq!(shares.len(), n);
        let mut idx: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(&mut idx[..], &mut ChaCha8Rng::seed_from_u64(order));
        let subset: Vec<(usize, Vec<u8>)> = idx[..k].iter().map(|&i| (i, shares[i].clone())).collect();
        prop_assert_eq!(rs_decode(&subset, n, k).unwrap(), payload);
    }

    #[test]
    fn too_few_shares_fail((n, k) in arb_params().prop_filter("k > 1", |(_, k)| *k > 1),
                           payload in prop::collection::vec(any::<u8>(), 1..200)) {
        let shares = rs_encode(&payload, n, k).unwrap();
        let subset: Vec<(usize, Vec<u8>)> = (0..k - 1).map(|i| (i, shares[i].clone())).collect();
        prop_assert!(rs_decode(&subset, n, k).is_err());
    }

    #[test]
    fn vertex_roundtrip_and_size(round in 1u64..1000, source in 0u16..16,
                                 block in prop::collection::vec(any::<u8>(), 0..300), delay in 0u64..1000) {
        let mut v = Vertex::genesis(PeerId(source));
        v.round = round;
        v.block = block;
        v.delay = delay;
        v.strong_edges = vec![Edge::bare(Vertex::genesis(PeerId(0)).reference())];
        let bytes = encode(&v);
        prop_assert_eq!(bytes.len() as u64, encoded_len(&v));
        let back: Vertex = decode(&bytes).unwrap();
        prop_assert_eq!(back.digest(), v.digest());
        prop_assert_eq!(back, v);
    }

    #[test]
    fn signatures_bind_message(seed in any::<u64>(), msg in prop::collection::vec(any::<u8>(), 0..64), flip in any::<usize>()) {
        for scheme in [SchemeKind::SimMac, SchemeKind::Ed25519] {
            let key = keygen(&mut ChaCha8Rng::seed_from_u64(seed), scheme, KeyDomain::NormalWorld);
            let other = keygen(&mut ChaCha8Rng::seed_from_u64(seed ^ 1), scheme, KeyDomain::NormalWorld);
            let sig = sign(&msg, &key, PeerId(0));
            prop_assert!(verify(&msg, &sig, &key.public()));
            prop_assert!(!verify(&msg, &sig, &other.public()));
            if !msg.is_empty() {
                let mut bad = msg.clone();
                bad[flip % msg.len()] ^= 0x01;
                prop_assert!(!verify(&bad, &sig, &key.public()));
            }
        }
    }
}

fn committee_keys(n: usize) -> (Vec<rorqual::codec::KeyPair>, Vec<PublicKey>) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let keys: Vec<_> = (0..n).map(|_| keygen(&mut rng, SchemeKind::SimMac, KeyDomain::NormalWorld)).collect();
    let publics = keys.iter().map(|k| k.public()).collect();
    (keys, publics)
}

#[test]
fn cert_thresholds_are_exact() {
    let (keys, publics) = committee_keys(7);
    let subject = digest(b"subject");
    let sigs: Vec<_> = keys.iter().enumerate().map(|(i, k)| sign(subject.as_bytes(), k, PeerId(i as u16))).collect();
    for have in 0..=7 {
        let result = assemble_cert(sigs[..have].to_vec(), subject, 5, &publics);
        assert_eq!(result.is_ok(), have >= 5, "have {have}");
    }
    let cert = assemble_cert(sigs[..5].to_vec(), subject, 5, &publics).unwrap();
    assert!(verify_cert(&cert, subject, 5, &publics).is_ok());
    assert!(verify_cert(&cert, subject, 6, &publics).is_err());
    assert!(verify_cert(&cert, digest(b"other"), 5, &publics).is_err());

    let mut forged = cert.clone();
    forged.signatures[4] = forged.signatures[0].clone();
    assert!(verify_cert(&forged, subject, 5, &publics).is_err());
}

#[test]
fn envelope_size_counts_every_byte() {
    let msg = Message::KeyRequest { peer: PeerId(2) };
    let env = Envelope::new(PeerId(1), msg);
    assert_eq!(env.size(), encode(&env).len() as u64);
}
