//! Pull-based certified DAG broadcast, the baseline without a TEE.
//!
//! A source signs its vertex and sends it to every peer. Receivers vote on
//! the digest; n−f votes form an availability certificate. Vertices whose
//! certificate is known but whose content is missing are requested from
//! random peers until some holder answers.

use std::collections::{BTreeMap, BTreeSet};

use rand::RngCore;

use crate::bullshark::Bullshark;
use crate::codec::{assemble_cert, sign, verify, verify_cert, Digest, KeyPair, PublicKey, QuorumCert, Signature};
use crate::dag::DagStore;
use crate::message::{pull_vertex_subject, vote_subject, Message};
use crate::node::{Ctx, Observation, ProtocolConfig, Replica, Timer};
use crate::types::{Edge, PeerId, Round, Vertex, VertexRef};

#[derive(Debug)]
pub struct PullNode {
    id: PeerId,
    cfg: ProtocolConfig,
    nw_key: KeyPair,
    nw_keys: Vec<PublicKey>,
    stored: BTreeMap<(Round, PeerId), (Vertex, Signature)>,
    votes: BTreeMap<(Round, PeerId), BTreeMap<Digest, BTreeMap<PeerId, Signature>>>,
    certs: BTreeMap<(Round, PeerId), (Digest, QuorumCert)>,
    voted: BTreeSet<(Round, PeerId)>,
    dag: DagStore,
    buffer: BTreeSet<(Round, PeerId)>,
    fetching: BTreeSet<(Round, PeerId)>,
    start_reached: bool,
    round: Round,
    wait: bool,
    ordering: Option<Bullshark>,
}

impl PullNode {
    pub fn new(id: PeerId, cfg: ProtocolConfig, nw_key: KeyPair, nw_keys: Vec<PublicKey>) -> Self {
        let n = cfg.committee.n;
        let ordering = cfg.ordering.then(|| Bullshark::new(cfg.committee, cfg.coin_seed));
        PullNode {
            id,
            nw_key,
            nw_keys,
            stored: BTreeMap::new(),
            votes: BTreeMap::new(),
            certs: BTreeMap::new(),
            voted: BTreeSet::new(),
            dag: DagStore::new(n),
            buffer: BTreeSet::new(),
            fetching: BTreeSet::new(),
            start_reached: false,
            round: 0,
            wait: true,
            ordering,
            cfg,
        }
    }

    fn n(&self) -> usize {
        self.cfg.committee.n
    }

    fn quorum(&self) -> usize {
        self.cfg.committee.quorum()
    }

    pub fn cert(&self, source: PeerId, round: Round) -> Option<&QuorumCert> {
        self.certs.get(&(round, source)).map(|(_, c)| c)
    }

    fn has_cert(&self, source: PeerId, round: Round) -> bool {
        round == 0 || self.certs.contains_key(&(round, source))
    }

    /// Verifies and records a certificate carried on an edge. Returns false
    /// if the certificate is missing or invalid.
    fn learn_edge_cert(&mut self, e: &Edge, ctx: &mut Ctx) -> bool {
        let t = e.target;
        if t.round == 0 {
            return true;
        }
        let slot = (t.round, t.source);
        if let Some((d, _)) = self.certs.get(&slot) {
            return *d == t.digest;
        }
        let Some(cert) = &e.cert else {
            return false;
        };
        let subject = vote_subject(&t.digest, t.source, t.round);
        if verify_cert(cert, subject, self.quorum(), &self.nw_keys).is_err() {
            return false;
        }
        self.install_cert(t, cert.clone(), ctx);
        true
    }

    fn install_cert(&mut self, target: VertexRef, cert: QuorumCert, ctx: &mut Ctx) {
        let slot = (target.round, target.source);
        if self.certs.contains_key(&slot) {
            return;
        }
        self.certs.insert(slot, (target.digest, cert));
        ctx.observe(Observation::Certified { source: target.source, round: target.round, digest: target.digest });
        match self.stored.get(&slot) {
            Some((v, _)) if v.digest() == target.digest => {
                self.buffer.insert(slot);
            }
            Some(_) => ctx.alarm(format!("stored vertex for {slot:?} differs from its certificate")),
            None => self.fetch(target, ctx),
        }
    }

    fn fetch(&mut self, target: VertexRef, ctx: &mut Ctx) {
        let slot = (target.round, target.source);
        if self.stored.contains_key(&slot) || !self.fetching.insert(slot) {
            return;
        }
        self.send_pull_request(target.source, target.round, ctx);
        ctx.timer(ctx.now + self.cfg.delta, Timer::Fetch { source: target.source, round: target.round });
    }

    fn send_pull_request(&mut self, source: PeerId, round: Round, ctx: &mut Ctx) {
        let Some((digest, cert)) = self.certs.get(&(round, source)).cloned() else {
            return;
        };
        let k = 2 * self.cfg.committee.f + 1;
        for to in ctx.sample_peers(self.n(), k) {
            ctx.send(to, Message::PullRequest { source, round, digest, cert: cert.clone() });
        }
    }

    fn on_pull_vertex(&mut self, from: PeerId, vertex: Vertex, sig: Signature, ctx: &mut Ctx) {
        let source = vertex.source;
        if source.idx() >= self.n() || !vertex.well_formed(self.n(), self.cfg.committee.f) {
            ctx.observe(Observation::Rejected { from, reason: "malformed vertex" });
            return;
        }
        let digest = vertex.digest();
        if sig.signer != source || !verify(pull_vertex_subject(&digest).as_bytes(), &sig, &self.nw_keys[source.idx()]) {
            ctx.observe(Observation::Rejected { from, reason: "bad vertex signature" });
            return;
        }
        let slot = (vertex.round, source);
        if let Some((held, _)) = self.stored.get(&slot) {
            if held.digest() != digest {
                ctx.observe(Observation::Rejected { from, reason: "equivocating vertex" });
            }
            return;
        }
        let edges: Vec<Edge> = vertex.strong_edges.iter().chain(vertex.weak_edges.iter()).cloned().collect();
        for e in &edges {
            if !self.learn_edge_cert(e, ctx) {
                ctx.observe(Observation::Rejected { from, reason: "edge without valid certificate" });
                return;
            }
        }
        self.stored.insert(slot, (vertex.clone(), sig));
        self.fetching.remove(&slot);
        ctx.observe(Observation::Stored { vertex: vertex.reference() });
        if from == source && self.voted.insert(slot) {
            let vsig = sign(vote_subject(&digest, source, vertex.round).as_bytes(), &self.nw_key, self.id);
            ctx.send_all(self.n(), Message::Vote { source, round: vertex.round, digest, sig: vsig });
        }
        if self.certs.get(&slot).is_some_and(|(d, _)| *d == digest) {
            self.buffer.insert(slot);
        }
        self.admit_ready(ctx);
        self.try_propose(ctx);
    }

    fn on_vote(&mut self, from: PeerId, source: PeerId, round: Round, digest: Digest, sig: Signature, ctx: &mut Ctx) {
        let subject = vote_subject(&digest, source, round);
        if source.idx() >= self.n() || sig.signer != from || !verify(subject.as_bytes(), &sig, &self.nw_keys[from.idx()]) {
            ctx.observe(Observation::Rejected { from, reason: "bad vote" });
            return;
        }
        let slot = (round, source);
        if self.certs.contains_key(&slot) {
            return;
        }
        let quorum = self.quorum();
        let pool = self.votes.entry(slot).or_default().entry(digest).or_default();
        pool.insert(from, sig);
        if pool.len() < quorum {
            return;
        }
        let sigs: Vec<Signature> = pool.values().take(quorum).cloned().collect();
        match assemble_cert(sigs, subject, quorum, &self.nw_keys) {
            Ok(cert) => {
                self.install_cert(VertexRef { round, source, digest }, cert, ctx);
                self.admit_ready(ctx);
                self.try_propose(ctx);
            }
            Err(e) => ctx.alarm(format!("vote quorum for {slot:?} failed: {e}")),
        }
    }

    fn admit_ready(&mut self, ctx: &mut Ctx) {
        let slots: Vec<(Round, PeerId)> = self.buffer.iter().copied().collect();
        for slot in slots {
            let vertex = self.stored[&slot].0.clone();
            let missing = self.dag.missing_parents(&vertex);
            if !missing.is_empty() {
                for p in missing {
                    self.fetch(p, ctx);
                }
                continue;
            }
            self.buffer.remove(&slot);
            match self.dag.insert(vertex) {
                Ok(r) => {
                    ctx.observe(Observation::Admitted { vertex: r });
                    if let Some(b) = self.ordering.as_mut() {
                        for d in b.try_ordering(&self.dag, &r) {
                            ctx.observe(Observation::Delivered { vertex: d });
                        }
                    }
                }
                Err(e) => ctx.alarm(format!("admission failed: {e}")),
            }
        }
    }

    fn edge_to(&self, source: PeerId, round: Round) -> Option<Edge> {
        if round == 0 {
            return self.dag.reference(source, 0).map(Edge::bare);
        }
        let (digest, cert) = self.certs.get(&(round, source))?;
        let digest = *digest;
        Some(Edge { target: VertexRef { round, source, digest }, cert: Some(cert.clone()) })
    }

    fn try_propose(&mut self, ctx: &mut Ctx) {
        if !self.start_reached || ctx.now >= self.cfg.propose_until || self.round >= self.cfg.max_round {
            return;
        }
        let r = self.round;
        let certified: Vec<PeerId> = PeerId::all(self.n()).filter(|&p| self.has_cert(p, r)).collect();
        if certified.len() < self.quorum() {
            return;
        }
        if let Some(b) = &self.ordering {
            if self.wait && r > 0 && !b.wave_ready(&self.dag, r) {
                return;
            }
        }
        let strong: Vec<Edge> = certified.iter().filter_map(|&p| self.edge_to(p, r)).collect();
        let mut covered = self.dag.covered_by(strong.iter().map(|e| &e.target));
        let mut weak = Vec::new();
        for wr in (1..r).rev() {
            for u in self.dag.round_refs(wr) {
                if self.dag.is_covered(&covered, u.source, u.round) {
                    continue;
                }
                if let Some((_, cert)) = self.certs.get(&(wr, u.source)) {
                    weak.push(Edge { target: u, cert: Some(cert.clone()) });
                    covered.union_with(&self.dag.covered_by([&u]));
                }
            }
        }
        let mut block = vec![0u8; self.cfg.block_size];
        ctx.rng.fill_bytes(&mut block);
        let vertex = Vertex {
            round: r + 1,
            source: self.id,
            block,
            strong_edges: strong,
            weak_edges: weak,
            delay: 0,
            latency_scores: Vec::new(),
        };
        let sig = sign(pull_vertex_subject(&vertex.digest()).as_bytes(), &self.nw_key, self.id);
        self.round = r + 1;
        self.wait = true;
        ctx.observe(Observation::RoundStarted { round: r + 1 });
        ctx.observe(Observation::Dispersed { vertex: vertex.reference(), delay: 0 });
        ctx.send_all(self.n(), Message::PullVertex { vertex, sig });
        if self.ordering.is_some() {
            ctx.timer(ctx.now + self.cfg.wave_timeout, Timer::Wave(r + 1));
        }
    }
}

impl Replica for PullNode {
    fn id(&self) -> PeerId {
        self.id
    }

    fn start(&mut self, ctx: &mut Ctx) {
        ctx.timer(ctx.now, Timer::Start);
    }

    fn on_message(&mut self, from: PeerId, msg: Message, ctx: &mut Ctx) {
        if from.idx() >= self.n() {
            return;
        }
        match msg {
            Message::PullVertex { vertex, sig } => self.on_pull_vertex(from, vertex, sig, ctx),
            Message::Vote { source, round, digest, sig } => self.on_vote(from, source, round, digest, sig, ctx),
            Message::PullRequest { source, round, digest, .. } => {
                if let Some((v, sig)) = self.stored.get(&(round, source)) {
                    if v.digest() == digest {
                        ctx.send(from, Message::PullVertex { vertex: v.clone(), sig: sig.clone() });
                    }
                }
            }
            _ => ctx.observe(Observation::Rejected { from, reason: "foreign message kind" }),
        }
    }

    fn on_timer(&mut self, timer: Timer, ctx: &mut Ctx) {
        match timer {
            Timer::Start => {
                self.start_reached = true;
                self.try_propose(ctx);
            }
            Timer::Fetch { source, round } => {
                if self.stored.contains_key(&(round, source)) {
                    self.fetching.remove(&(round, source));
                    return;
                }
                self.send_pull_request(source, round, ctx);
                ctx.timer(ctx.now + self.cfg.delta, Timer::Fetch { source, round });
            }
            Timer::Wave(r) if self.round == r => {
                self.wait = false;
                self.try_propose(ctx);
            }
            _ => {}
        }
    }

    fn dag(&self) -> &DagStore {
        &self.dag
    }

    fn ordering(&self) -> Option<&Bullshark> {
        self.ordering.as_ref()
    }

    fn known_vertices(&self) -> Vec<(PeerId, Round, Digest)> {
        self.stored.iter().map(|(&(r, s), (v, _))| (s, r, v.digest())).collect()
    }

    fn current_round(&self) -> Round {
        self.round
    }
}
