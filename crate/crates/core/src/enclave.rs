//! Simulated Secure World of one peer.
//!
//! The enclave owns the SW signing key and the monotonic `round`/`delay`
//! counters. It is the only component able to produce vertex and share
//! signatures, so a compromised Normal World can drop or delay what the
//! enclave emits but cannot equivocate.

use std::collections::{BTreeMap, BTreeSet};

use rand::RngCore;

use crate::codec::{encode, keygen, rs_encode, sign, KeyDomain, KeyPair, PublicKey, SchemeKind, Signature};
use crate::message::{share_subject, vertex_subject, Message, Share};
use crate::types::{Committee, PeerId, Round, Time, Vertex};

/// Dispersal refused because the round does not exceed the last dispersed one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("asynchronous exit: round {requested} not above last dispersed round {last}")]
pub struct AsyncExit {
    pub requested: Round,
    pub last: Round,
}

#[derive(Debug, Clone)]
struct PendingAcks {
    deadline: Time,
    acks: BTreeSet<PeerId>,
    issued: Vec<Signature>,
}

/// Output of a successful dispersal.
#[derive(Debug, Clone)]
pub struct Dispersal {
    pub vertex: Vertex,
    pub vertex_sig: Signature,
    /// One `Vertex` message per peer, in peer order.
    pub messages: Vec<(PeerId, Message)>,
    pub ack_deadline: Time,
}

#[derive(Debug)]
pub struct Enclave {
    id: PeerId,
    committee: Committee,
    sk: KeyPair,
    round: Round,
    delay: Round,
    instance_id: u32,
    pending: BTreeMap<Round, PendingAcks>,
    #[cfg(debug_assertions)]
    signed: BTreeMap<Round, crate::codec::Digest>,
}

impl Enclave {
    /// Boots a fresh instance and returns the key announcement.
    pub fn init<R: RngCore + ?Sized>(
        id: PeerId,
        committee: Committee,
        scheme: SchemeKind,
        entropy: &mut R,
    ) -> (Self, Message) {
        let sk = keygen(entropy, scheme, KeyDomain::SecureWorld);
        let announce = Message::Key { public: sk.public() };
        let enclave = Enclave {
            id,
            committee,
            sk,
            round: 0,
            delay: 0,
            instance_id: 0,
            pending: BTreeMap::new(),
            #[cfg(debug_assertions)]
            signed: BTreeMap::new(),
        };
        (enclave, announce)
    }

    pub fn public(&self) -> PublicKey {
        self.sk.public()
    }

    pub fn round(&self) -> Round {
        self.round
    }

    pub fn delay(&self) -> Round {
        self.delay
    }

    pub fn instance_id(&self) -> u32 {
        self.instance_id
    }

    /// Earliest armed ack deadline, if any dispersal is still waiting.
    pub fn ack_deadline(&self) -> Option<Time> {
        self.pending.values().map(|p| p.deadline).min()
    }

    pub fn acks_seen(&self, round: Round) -> usize {
        self.pending.get(&round).map_or(0, |p| p.acks.len())
    }

    /// Signs and fragments `vertex` for round `vertex.round`, stamping the
    /// current delay. The caller's `delay` field is overwritten.
    pub fn disperse(&mut self, mut vertex: Vertex, now: Time, delta: Time) -> Result<Dispersal, AsyncExit> {
        let r = vertex.round;
        if self.round >= r {
            return Err(AsyncExit { requested: r, last: self.round });
        }
        self.round = r;
        vertex.source = self.id;
        vertex.delay = self.delay;
        let digest = vertex.digest();
        #[cfg(debug_assertions)]
        {
            let prev = self.signed.insert(r, digest);
            debug_assert!(prev.is_none(), "enclave signed two vertices for round {r}");
        }
        let vertex_sig = sign(vertex_subject(&digest).as_bytes(), &self.sk, self.id);
        let payload = encode(&(&vertex, &vertex_sig));
        let fragments = rs_encode(&payload, self.committee.n, self.committee.coding_k())
            .expect("committee parameters are valid coding parameters");

        let mut messages = Vec::with_capacity(self.committee.n);
        let mut issued = Vec::with_capacity(self.committee.n);
        for (j, data) in fragments.into_iter().enumerate() {
            let index = j as u32;
            let sig = sign(share_subject(&data, index, self.id, r).as_bytes(), &self.sk, self.id);
            issued.push(sig.clone());
            let share = Share { index, data, source: self.id, round: r, sig };
            messages.push((
                PeerId(j as u16),
                Message::Vertex { vertex: vertex.clone(), vertex_sig: vertex_sig.clone(), share },
            ));
        }
        let ack_deadline = now + 2 * delta;
        self.pending.insert(r, PendingAcks { deadline: ack_deadline, acks: BTreeSet::new(), issued });
        Ok(Dispersal { vertex, vertex_sig, messages, ack_deadline })
    }

    /// Records an ack for dispersal `round`. Acks must echo the share
    /// signature issued to the acking peer; others are ignored.
    pub fn on_ack(&mut self, from: PeerId, round: Round, share_sig: &Signature) {
        let quorum = self.committee.quorum();
        let Some(pending) = self.pending.get_mut(&round) else {
            return;
        };
        if pending.issued.get(from.idx()) != Some(share_sig) {
            return;
        }
        pending.acks.insert(from);
        if pending.acks.len() >= quorum {
            self.pending.remove(&round);
        }
    }

    /// Fires the 2Δ check for dispersal `round`. Returns true if the enclave
    /// marked itself delayed.
    pub fn timer_expire(&mut self, round: Round, now: Time) -> bool {
        let Some(pending) = self.pending.get(&round) else {
            return false;
        };
        if now < pending.deadline {
            return false;
        }
        let short = pending.acks.len() < self.committee.quorum();
        self.pending.remove(&round);
        if short {
            self.delay = self.round;
        }
        short
    }

    /// Pull request for a vertex the Normal World reports missing.
    pub fn request_missing(&self, source: PeerId, round: Round, missing: bool) -> Option<Message> {
        missing.then_some(Message::Request { source, round })
    }

    /// Kills this instance and boots a successor with fresh keys and zeroed
    /// counters.
    pub fn restart<R: RngCore + ?Sized>(&mut self, entropy: &mut R) -> Message {
        let scheme = self.sk.public().scheme;
        let instance_id = self.instance_id + 1;
        let (mut fresh, announce) = Enclave::init(self.id, self.committee, scheme, entropy);
        fresh.instance_id = instance_id;
        *self = fresh;
        announce
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{rs_decode, verify, decode};
    use crate::types::Edge;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const DELTA: Time = 1000;

    fn enclave(seed: u64) -> Enclave {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Enclave::init(PeerId(0), Committee::new(4, 1), SchemeKind::SimMac, &mut rng).0
    }

    fn vertex(round: Round) -> Vertex {
        let mut v = Vertex::genesis(PeerId(0));
        v.round = round;
        v.block = vec![round as u8; 40];
        v.strong_edges = (0..3)
            .map(|i| Edge::bare(Vertex::genesis(PeerId(i)).reference()))
            .collect();
        v
    }

    fn issued_sig(d: &Dispersal, to: usize) -> Signature {
        match &d.messages[to].1 {
            Message::Vertex { share, .. } => share.sig.clone(),
            _ => unreachable!(),
        }
    }

    #[test]
    fn same_seed_same_key_restart_new_key() {
        let a = enclave(3);
        let b = enclave(3);
        assert_eq!(a.public(), b.public());
        let mut c = enclave(3);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let announce = c.restart(&mut rng);
        assert_ne!(c.public(), a.public());
        assert_eq!(c.instance_id(), 1);
        assert_eq!(c.round(), 0);
        assert_eq!(announce, Message::Key { public: c.public() });
    }

    #[test]
    fn announcement_carries_only_public_key() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (e, announce) = Enclave::init(PeerId(1), Committee::new(4, 1), SchemeKind::SimMac, &mut rng);
        let bytes = encode(&announce);
        // tag(4) + scheme(4) + key(32)
        assert_eq!(bytes.len(), 40);
        assert_eq!(announce, Message::Key { public: e.public() });
    }

    #[test]
    fn first_dispersal_emits_one_message_per_peer() {
        let mut e = enclave(1);
        let d = e.disperse(vertex(1), 0, DELTA).unwrap();
        assert_eq!(d.messages.len(), 4);
        assert_eq!(e.round(), 1);
        assert_eq!(d.ack_deadline, 2 * DELTA);
        for (j, (to, msg)) in d.messages.iter().enumerate() {
            assert_eq!(to.idx(), j);
            let Message::Vertex { vertex, vertex_sig, share } = msg else { panic!() };
            assert_eq!(vertex.delay, 0);
            assert!(verify(vertex_subject(&vertex.digest()).as_bytes(), vertex_sig, &e.public()));
            assert!(verify(share.subject().as_bytes(), &share.sig, &e.public()));
        }
    }

    #[test]
    fn shares_decode_to_signed_vertex() {
        let mut e = enclave(1);
        let d = e.disperse(vertex(1), 0, DELTA).unwrap();
        let shares: Vec<(usize, Vec<u8>)> = d
            .messages
            .iter()
            .skip(2)
            .map(|(_, m)| match m {
                Message::Vertex { share, .. } => (share.index as usize, share.data.clone()),
                _ => unreachable!(),
            })
            .collect();
        let bytes = rs_decode(&shares, 4, 2).unwrap();
        let (v, sig): (Vertex, Signature) = decode(&bytes).unwrap();
        assert_eq!(v, d.vertex);
        assert_eq!(sig, d.vertex_sig);
    }

    #[test]
    fn repeated_or_lower_round_exits() {
        let mut e = enclave(1);
        e.disperse(vertex(5), 0, DELTA).unwrap();
        assert_eq!(e.disperse(vertex(5), 0, DELTA).unwrap_err(), AsyncExit { requested: 5, last: 5 });
        assert!(e.disperse(vertex(3), 0, DELTA).is_err());
        assert_eq!(e.round(), 5);
        assert!(e.disperse(vertex(8), 0, DELTA).is_ok());
    }

    #[test]
    fn quorum_of_acks_disarms_timer() {
        let mut e = enclave(1);
        let d = e.disperse(vertex(1), 0, DELTA).unwrap();
        for j in 0..3 {
            e.on_ack(PeerId(j), 1, &issued_sig(&d, j as usize));
        }
        assert_eq!(e.ack_deadline(), None);
        assert!(!e.timer_expire(1, 2 * DELTA));
        assert_eq!(e.delay(), 0);
    }

    #[test]
    fn duplicate_and_forged_acks_do_not_count() {
        let mut e = enclave(1);
        let d = e.disperse(vertex(1), 0, DELTA).unwrap();
        e.on_ack(PeerId(1), 1, &issued_sig(&d, 1));
        e.on_ack(PeerId(1), 1, &issued_sig(&d, 1));
        e.on_ack(PeerId(2), 1, &issued_sig(&d, 3));
        assert_eq!(e.acks_seen(1), 1);
    }

    #[test]
    fn short_acks_at_deadline_set_delay() {
        let mut e = enclave(1);
        let d = e.disperse(vertex(1), 0, DELTA).unwrap();
        e.on_ack(PeerId(0), 1, &issued_sig(&d, 0));
        e.on_ack(PeerId(1), 1, &issued_sig(&d, 1));
        assert!(!e.timer_expire(1, 2 * DELTA - 1));
        assert!(e.timer_expire(1, 2 * DELTA));
        assert_eq!(e.delay(), 1);
        let next = e.disperse(vertex(2), 3 * DELTA, DELTA).unwrap();
        assert_eq!(next.vertex.delay, 1);
    }

    #[test]
    fn stale_ack_after_new_dispersal_ignored() {
        let mut e = enclave(1);
        let d1 = e.disperse(vertex(1), 0, DELTA).unwrap();
        e.timer_expire(1, 2 * DELTA);
        let _d2 = e.disperse(vertex(2), 2 * DELTA, DELTA).unwrap();
        e.on_ack(PeerId(1), 1, &issued_sig(&d1, 1));
        assert_eq!(e.acks_seen(1), 0);
        assert_eq!(e.acks_seen(2), 0);
    }

    #[test]
    fn request_only_when_missing() {
        let e = enclave(1);
        assert_eq!(
            e.request_missing(PeerId(2), 3, true),
            Some(Message::Request { source: PeerId(2), round: 3 })
        );
        assert_eq!(e.request_missing(PeerId(2), 3, false), None);
    }
}
