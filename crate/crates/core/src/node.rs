//! Interface between a peer state machine and the simulator.
//!
//! Handlers receive a [`Ctx`] through which they emit sends, multicasts and
//! timers, and report observations used for metrics. Protocol code sees Δ
//! through its config but never the actual delay bound δ.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::bullshark::Bullshark;
use crate::codec::{Digest, SchemeKind};
use crate::dag::DagStore;
use crate::message::Message;
use crate::types::{Committee, PeerId, Round, Time, VertexRef};

/// How a Rorqual peer picks strong parents and when it leaves a round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParentPolicy {
    /// Category-ordered parents; advance on n−f admitted vertices.
    Alg5,
    /// Cert-backed parents; advance on n−f certificates.
    Alg7,
}

#[derive(Debug, Clone)]
pub struct ProtocolConfig {
    pub committee: Committee,
    pub delta: Time,
    pub rho: Round,
    pub parent_policy: ParentPolicy,
    /// Run Bullshark and gate round advancement on wave progress.
    pub ordering: bool,
    pub wave_timeout: Time,
    pub block_size: usize,
    pub scheme: SchemeKind,
    /// No proposals at or after this time.
    pub propose_until: Time,
    /// No proposals above this round.
    pub max_round: Round,
    /// Shared seed for the fallback-leader coin.
    pub coin_seed: u64,
    /// Mock attestation outcome per peer.
    pub attested: Vec<bool>,
}

impl ProtocolConfig {
    pub fn new(committee: Committee, delta: Time) -> Self {
        ProtocolConfig {
            committee,
            delta,
            rho: 2,
            parent_policy: ParentPolicy::Alg5,
            ordering: true,
            wave_timeout: 4 * delta,
            block_size: 64,
            scheme: SchemeKind::SimMac,
            propose_until: Time::MAX,
            max_round: Round::MAX,
            coin_seed: 0,
            attested: vec![true; committee.n],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Timer {
    /// Earliest time the first round may start.
    Start,
    /// Enclave ack deadline for an own dispersal.
    AckDeadline(Round),
    /// Slow-path formation check for the round after the given one.
    SlowPath(Round),
    /// Retry fetching a missing vertex.
    Fetch { source: PeerId, round: Round },
    /// Retry fetching a missing key.
    KeyFetch(PeerId),
    /// Timeout sweep 6Δ after an own dispersal.
    TimeoutSweep(Round),
    /// Wave wait-flag expiry for the given round.
    Wave(Round),
}

#[derive(Debug, Clone)]
pub enum Action {
    Send { to: PeerId, msg: Message },
    /// Managed multicast with retransmission until confirmed.
    Multicast { msg: Message },
    SetTimer { at: Time, timer: Timer },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Observation {
    KeyAccepted { peer: PeerId },
    /// Own vertex handed to the network.
    Dispersed { vertex: VertexRef, delay: Round },
    /// Vertex content became known locally.
    Stored { vertex: VertexRef },
    Admitted { vertex: VertexRef },
    /// Availability cert (pull) or share cert (Rorqual) formed locally.
    Certified { source: PeerId, round: Round, digest: Digest },
    RoundStarted { round: Round },
    EnclaveDelayed { round: Round },
    Delivered { vertex: VertexRef },
    /// Message failed verification and was dropped.
    Rejected { from: PeerId, reason: &'static str },
    /// Model violation: should be impossible for correct peers.
    Alarm { what: String },
}

pub struct Ctx<'a> {
    pub now: Time,
    pub id: PeerId,
    pub rng: &'a mut ChaCha8Rng,
    pub actions: Vec<Action>,
    pub observations: Vec<Observation>,
}

impl<'a> Ctx<'a> {
    pub fn new(now: Time, id: PeerId, rng: &'a mut ChaCha8Rng) -> Self {
        Ctx { now, id, rng, actions: Vec::new(), observations: Vec::new() }
    }

    pub fn send(&mut self, to: PeerId, msg: Message) {
        self.actions.push(Action::Send { to, msg });
    }

    /// Plain send to every peer, self included.
    pub fn send_all(&mut self, n: usize, msg: Message) {
        for to in PeerId::all(n) {
            self.send(to, msg.clone());
        }
    }

    pub fn multicast(&mut self, msg: Message) {
        self.actions.push(Action::Multicast { msg });
    }

    pub fn timer(&mut self, at: Time, timer: Timer) {
        self.actions.push(Action::SetTimer { at, timer });
    }

    pub fn observe(&mut self, o: Observation) {
        self.observations.push(o);
    }

    pub fn alarm(&mut self, what: impl Into<String>) {
        self.observations.push(Observation::Alarm { what: what.into() });
    }

    /// Up to `k` distinct random peers other than self.
    pub fn sample_peers(&mut self, n: usize, k: usize) -> Vec<PeerId> {
        let mut others: Vec<PeerId> = PeerId::all(n).filter(|&p| p != self.id).collect();
        others.shuffle(self.rng);
        others.truncate(k);
        others.sort();
        others
    }
}

/// A peer state machine driven by the simulator.
pub trait Replica: Send {
    fn id(&self) -> PeerId;
    fn start(&mut self, ctx: &mut Ctx);
    fn on_message(&mut self, from: PeerId, msg: Message, ctx: &mut Ctx);
    fn on_timer(&mut self, timer: Timer, ctx: &mut Ctx);
    /// Kills the enclave and boots a fresh instance. No-op without a TEE.
    fn restart_enclave(&mut self, _ctx: &mut Ctx) {}
    fn dag(&self) -> &DagStore;
    fn ordering(&self) -> Option<&Bullshark>;
    /// Last-delayed-round map, for backends that keep one.
    fn ldr(&self) -> Option<&[Round]> {
        None
    }
    /// Every (source, round, digest) whose content is known locally.
    fn known_vertices(&self) -> Vec<(PeerId, Round, Digest)>;
    fn current_round(&self) -> Round;
}

/// Instant-delivery driver for unit tests of peer state machines.
#[cfg(test)]
pub(crate) mod testkit {
    use std::collections::VecDeque;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::{Action, Ctx, Observation, ProtocolConfig, Replica};
    use crate::codec::{keygen, KeyDomain, KeyPair, PublicKey, SchemeKind};
    use crate::message::Message;
    use crate::types::{Committee, PeerId};

    pub struct Cluster<T> {
        pub nodes: Vec<T>,
        pub keys: Vec<KeyPair>,
        pub rng: ChaCha8Rng,
        pub observed: Vec<(PeerId, Observation)>,
    }

    impl<T: Replica> Cluster<T> {
        /// Builds `n` peers with ordering off and proposals capped at `max_round`.
        pub fn new(
            n: usize,
            max_round: u64,
            build: impl Fn(PeerId, ProtocolConfig, KeyPair, Vec<PublicKey>, &mut ChaCha8Rng) -> T,
        ) -> Self {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let keys: Vec<KeyPair> =
                (0..n).map(|_| keygen(&mut rng, SchemeKind::SimMac, KeyDomain::NormalWorld)).collect();
            let publics: Vec<PublicKey> = keys.iter().map(|k| k.public()).collect();
            let mut cfg = ProtocolConfig::new(Committee::new(n, (n - 1) / 3), 1000);
            cfg.ordering = false;
            cfg.max_round = max_round;
            let nodes = keys
                .iter()
                .enumerate()
                .map(|(i, k)| build(PeerId(i as u16), cfg.clone(), k.clone(), publics.clone(), &mut rng))
                .collect();
            Cluster { nodes, keys, rng, observed: Vec::new() }
        }

        /// Runs `f` on one node, then delivers every resulting message
        /// instantly in FIFO order. Timers are dropped.
        pub fn drive(&mut self, who: PeerId, f: impl FnOnce(&mut T, &mut Ctx)) {
            let mut queue = VecDeque::new();
            let mut ctx = Ctx::new(0, who, &mut self.rng);
            f(&mut self.nodes[who.idx()], &mut ctx);
            Self::collect(who, ctx, self.nodes.len(), &mut queue, &mut self.observed);
            let mut steps = 0;
            while let Some((from, to, msg)) = queue.pop_front() {
                steps += 1;
                assert!(steps < 1_000_000, "no quiescence");
                let mut ctx = Ctx::new(0, to, &mut self.rng);
                self.nodes[to.idx()].on_message(from, msg, &mut ctx);
                Self::collect(to, ctx, self.nodes.len(), &mut queue, &mut self.observed);
            }
        }

        /// Delivers one message to one node and everything that follows.
        pub fn deliver(&mut self, from: PeerId, to: PeerId, msg: Message) {
            self.drive(to, |node, ctx| node.on_message(from, msg, ctx));
        }

        fn collect(
            who: PeerId,
            ctx: Ctx,
            n: usize,
            queue: &mut VecDeque<(PeerId, PeerId, Message)>,
            observed: &mut Vec<(PeerId, Observation)>,
        ) {
            observed.extend(ctx.observations.into_iter().map(|o| (who, o)));
            for a in ctx.actions {
                match a {
                    Action::Send { to, msg } => queue.push_back((who, to, msg)),
                    Action::Multicast { msg } => queue.extend(PeerId::all(n).map(|to| (who, to, msg.clone()))),
                    Action::SetTimer { .. } => {}
                }
            }
        }

        pub fn rejections(&self, reason: &str) -> usize {
            self.observed
                .iter()
                .filter(|(_, o)| matches!(o, Observation::Rejected { reason: r, .. } if *r == reason))
                .count()
        }
    }
}
