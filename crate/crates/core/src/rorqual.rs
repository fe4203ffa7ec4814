//! Normal-World state machine of a Rorqual peer.
//!
//! Setup exchanges enclave keys through echo quorums. Afterwards every
//! vertex reaches peers as a signed vertex plus one coded share per peer;
//! shares are relayed so that any peer can reconstruct the vertex from
//! n−2f of them. Delay evidence (enclave stamps and timeout quorums) feeds
//! the LDR map, which demotes slow sources when choosing parents.

use std::collections::{BTreeMap, BTreeSet};

use rand::RngCore;
use rand_chacha::ChaCha8Rng;

use crate::bullshark::Bullshark;
use crate::codec::{
    assemble_cert, decode, rs_decode, sign, verify, verify_cert, Digest, KeyPair, PublicKey, QuorumCert,
    Signature,
};
use crate::dag::DagStore;
use crate::enclave::Enclave;
use crate::message::{
    echo_subject, share_cert_subject, timeout_subject, vertex_subject, Message, Share,
};
use crate::node::{Ctx, Observation, ParentPolicy, ProtocolConfig, Replica, Timer};
use crate::types::{Edge, PeerId, Round, Time, Vertex, VertexRef};

/// Parent eligibility class; lower is better.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Category {
    I,
    II,
    III,
    IV,
}

#[derive(Debug, Default, Clone)]
struct SlotShares {
    data: BTreeMap<u32, Vec<u8>>,
    relayers: BTreeMap<Digest, BTreeMap<PeerId, Signature>>,
    cert: Option<QuorumCert>,
}

#[derive(Debug)]
pub struct RorqualNode {
    id: PeerId,
    cfg: ProtocolConfig,
    enclave: Enclave,
    nw_key: KeyPair,
    nw_keys: Vec<PublicKey>,
    sw_keys: Vec<Option<PublicKey>>,
    key_certs: Vec<Option<QuorumCert>>,
    echoed: Vec<Option<PublicKey>>,
    echoes: BTreeMap<(PeerId, PublicKey), BTreeMap<PeerId, Signature>>,
    key_fetching: BTreeSet<PeerId>,
    parked: BTreeMap<PeerId, Vec<(PeerId, Message)>>,
    start_reached: bool,
    vstore: BTreeMap<(Round, PeerId), (Vertex, Signature)>,
    shares: BTreeMap<(Round, PeerId), SlotShares>,
    acked: BTreeSet<(Round, PeerId)>,
    ldr: Vec<Round>,
    timeouts: BTreeMap<PeerId, BTreeMap<PeerId, Round>>,
    dag: DagStore,
    buffer: BTreeSet<(Round, PeerId)>,
    rejected: BTreeSet<(Round, PeerId)>,
    fetching: BTreeSet<(Round, PeerId)>,
    round: Round,
    last_sent_at: Time,
    wait: bool,
    ordering: Option<Bullshark>,
}

impl RorqualNode {
    pub fn new(
        id: PeerId,
        cfg: ProtocolConfig,
        nw_key: KeyPair,
        nw_keys: Vec<PublicKey>,
        entropy: &mut ChaCha8Rng,
    ) -> Self {
        let n = cfg.committee.n;
        let (enclave, _) = Enclave::init(id, cfg.committee, cfg.scheme, entropy);
        let ordering = cfg.ordering.then(|| Bullshark::new(cfg.committee, cfg.coin_seed));
        RorqualNode {
            id,
            enclave,
            nw_key,
            nw_keys,
            sw_keys: vec![None; n],
            key_certs: vec![None; n],
            echoed: vec![None; n],
            echoes: BTreeMap::new(),
            key_fetching: BTreeSet::new(),
            parked: BTreeMap::new(),
            start_reached: false,
            vstore: BTreeMap::new(),
            shares: BTreeMap::new(),
            acked: BTreeSet::new(),
            ldr: vec![0; n],
            timeouts: BTreeMap::new(),
            dag: DagStore::new(n),
            buffer: BTreeSet::new(),
            rejected: BTreeSet::new(),
            fetching: BTreeSet::new(),
            round: 0,
            last_sent_at: 0,
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

    pub fn sw_key(&self, peer: PeerId) -> Option<PublicKey> {
        self.sw_keys[peer.idx()]
    }

    pub fn enclave(&self) -> &Enclave {
        &self.enclave
    }

    pub fn share_count(&self, source: PeerId, round: Round) -> usize {
        if round == 0 {
            return self.n();
        }
        self.shares.get(&(round, source)).map_or(0, |s| s.data.len())
    }

    pub fn share_cert(&self, source: PeerId, round: Round) -> Option<&QuorumCert> {
        self.shares.get(&(round, source)).and_then(|s| s.cert.as_ref())
    }

    fn has_share_cert(&self, source: PeerId, round: Round) -> bool {
        round == 0 || self.share_cert(source, round).is_some()
    }

    // ---- setup ----

    fn on_key(&mut self, from: PeerId, public: PublicKey, ctx: &mut Ctx) {
        if !self.cfg.attested.get(from.idx()).copied().unwrap_or(false) {
            ctx.observe(Observation::Rejected { from, reason: "unattested key" });
            return;
        }
        if self.echoed[from.idx()].is_some() {
            return;
        }
        self.echoed[from.idx()] = Some(public);
        let sig = sign(echo_subject(from, &public).as_bytes(), &self.nw_key, self.id);
        ctx.multicast(Message::Echo { peer: from, public, sig });
    }

    fn on_echo(&mut self, from: PeerId, peer: PeerId, public: PublicKey, sig: Signature, ctx: &mut Ctx) {
        if peer.idx() >= self.n() || sig.signer != from {
            return;
        }
        let subject = echo_subject(peer, &public);
        if !verify(subject.as_bytes(), &sig, &self.nw_keys[from.idx()]) {
            ctx.observe(Observation::Rejected { from, reason: "bad echo signature" });
            return;
        }
        let quorum = self.quorum();
        let sigs = self.echoes.entry((peer, public)).or_default();
        sigs.insert(from, sig);
        if sigs.len() < quorum || self.sw_keys[peer.idx()] == Some(public) {
            return;
        }
        let sigs: Vec<Signature> = sigs.values().take(quorum).cloned().collect();
        match assemble_cert(sigs, subject, quorum, &self.nw_keys) {
            Ok(cert) => self.accept_key(peer, public, cert, ctx),
            Err(e) => ctx.alarm(format!("echo quorum for {peer:?} failed to assemble: {e}")),
        }
    }

    fn accept_key(&mut self, peer: PeerId, public: PublicKey, cert: QuorumCert, ctx: &mut Ctx) {
        match self.sw_keys[peer.idx()] {
            Some(k) if k == public => return,
            Some(_) => {
                ctx.alarm(format!("two key quorums for {peer:?}"));
                return;
            }
            None => {}
        }
        self.sw_keys[peer.idx()] = Some(public);
        self.key_certs[peer.idx()] = Some(cert);
        self.key_fetching.remove(&peer);
        ctx.observe(Observation::KeyAccepted { peer });
        if let Some(parked) = self.parked.remove(&peer) {
            for (from, msg) in parked {
                self.on_message(from, msg, ctx);
            }
        }
        if peer == self.id {
            self.try_propose(ctx);
        }
    }

    /// Returns the SW key of `source`, parking `msg` and fetching the key
    /// if it is not known yet.
    fn key_or_park(&mut self, source: PeerId, from: PeerId, msg: &Message, ctx: &mut Ctx) -> Option<PublicKey> {
        if source.idx() >= self.n() {
            return None;
        }
        if let Some(k) = self.sw_keys[source.idx()] {
            return Some(k);
        }
        self.parked.entry(source).or_default().push((from, msg.clone()));
        if self.key_fetching.insert(source) {
            ctx.timer(ctx.now + self.cfg.delta, Timer::KeyFetch(source));
        }
        None
    }

    // ---- dissemination ----

    fn on_vertex(&mut self, from: PeerId, msg: Message, ctx: &mut Ctx) {
        let Message::Vertex { vertex, vertex_sig, share } = &msg else { unreachable!() };
        let source = vertex.source;
        let Some(key) = self.key_or_park(source, from, &msg, ctx) else {
            return;
        };
        let slot = (vertex.round, source);
        if self.acked.contains(&slot) {
            return;
        }
        let digest = vertex.digest();
        if vertex_sig.signer != source
            || !verify(vertex_subject(&digest).as_bytes(), vertex_sig, &key)
            || share.source != source
            || share.round != vertex.round
            || share.index as usize != self.id.idx()
            || !verify(share.subject().as_bytes(), &share.sig, &key)
        {
            ctx.observe(Observation::Rejected { from, reason: "bad vertex signature" });
            return;
        }
        if !vertex.well_formed(self.n(), self.cfg.committee.f) {
            ctx.alarm(format!("signed vertex {:?} is malformed", vertex.reference()));
            return;
        }
        self.acked.insert(slot);
        self.shares.entry(slot).or_default().data.insert(share.index, share.data.clone());
        let relayer_sig = sign(share_cert_subject(&digest, source, vertex.round).as_bytes(), &self.nw_key, self.id);
        ctx.multicast(Message::Share { share: share.clone(), digest, relayer_sig });
        ctx.send(source, Message::Ack { source, round: vertex.round, share_sig: share.sig.clone() });
        self.set_vertex(vertex.clone(), vertex_sig.clone(), ctx);
    }

    fn on_share(&mut self, from: PeerId, msg: Message, ctx: &mut Ctx) {
        let Message::Share { share, digest, relayer_sig } = &msg else { unreachable!() };
        let Share { index, source, round, .. } = *share;
        let Some(key) = self.key_or_park(source, from, &msg, ctx) else {
            return;
        };
        if index as usize >= self.n() || share.sig.signer != source || !verify(share.subject().as_bytes(), &share.sig, &key) {
            ctx.observe(Observation::Rejected { from, reason: "bad share signature" });
            return;
        }
        let cert_subject = share_cert_subject(digest, source, round);
        let relayer_ok = relayer_sig.signer == from && verify(cert_subject.as_bytes(), relayer_sig, &self.nw_keys[from.idx()]);
        let quorum = self.quorum();
        let k = self.cfg.committee.coding_k();
        let n = self.n();
        let slot = (round, source);
        let entry = self.shares.entry(slot).or_default();
        entry.data.entry(index).or_insert_with(|| share.data.clone());
        let mut certified = None;
        if relayer_ok {
            let sigs = entry.relayers.entry(*digest).or_default();
            sigs.insert(from, relayer_sig.clone());
            if entry.cert.is_none() && sigs.len() >= quorum {
                let chosen: Vec<Signature> = sigs.values().take(quorum).cloned().collect();
                match assemble_cert(chosen, cert_subject, quorum, &self.nw_keys) {
                    Ok(cert) => {
                        entry.cert = Some(cert);
                        certified = Some(*digest);
                    }
                    Err(e) => ctx.alarm(format!("share cert for {slot:?} failed: {e}")),
                }
            }
        } else {
            ctx.observe(Observation::Rejected { from, reason: "bad relayer signature" });
        }
        let reconstruct = entry.data.len() >= k && !self.vstore.contains_key(&slot);
        let pieces: Vec<(usize, Vec<u8>)> =
            if reconstruct { entry.data.iter().map(|(&i, d)| (i as usize, d.clone())).collect() } else { Vec::new() };
        if let Some(digest) = certified {
            ctx.observe(Observation::Certified { source, round, digest });
        }
        if reconstruct {
            match rs_decode(&pieces, n, k).and_then(|bytes| decode::<(Vertex, Signature)>(&bytes)) {
                Ok((vertex, sig)) => {
                    let ok = vertex.source == source
                        && vertex.round == round
                        && sig.signer == source
                        && verify(vertex_subject(&vertex.digest()).as_bytes(), &sig, &key)
                        && vertex.well_formed(n, self.cfg.committee.f);
                    if ok {
                        self.set_vertex(vertex, sig, ctx);
                    } else {
                        ctx.alarm(format!("reconstructed vertex for {slot:?} does not verify"));
                    }
                }
                Err(e) => ctx.alarm(format!("decoding {slot:?} failed: {e}")),
            }
        }
        self.try_propose(ctx);
    }

    fn on_relay(&mut self, from: PeerId, msg: Message, ctx: &mut Ctx) {
        let Message::Relay { vertex, vertex_sig } = &msg else { unreachable!() };
        let Some(key) = self.key_or_park(vertex.source, from, &msg, ctx) else {
            return;
        };
        if vertex_sig.signer != vertex.source
            || !verify(vertex_subject(&vertex.digest()).as_bytes(), vertex_sig, &key)
            || !vertex.well_formed(self.n(), self.cfg.committee.f)
        {
            ctx.observe(Observation::Rejected { from, reason: "bad relay" });
            return;
        }
        self.set_vertex(vertex.clone(), vertex_sig.clone(), ctx);
    }

    /// Records verified vertex content for its slot and attempts admission.
    fn set_vertex(&mut self, vertex: Vertex, sig: Signature, ctx: &mut Ctx) {
        let slot = (vertex.round, vertex.source);
        if let Some((held, _)) = self.vstore.get(&slot) {
            if held.digest() != vertex.digest() {
                ctx.alarm(format!("conflicting vertices for slot {slot:?}"));
            }
            return;
        }
        let i = vertex.source.idx();
        self.ldr[i] = self.ldr[i].max(vertex.delay);
        ctx.observe(Observation::Stored { vertex: vertex.reference() });
        self.vstore.insert(slot, (vertex, sig));
        self.fetching.remove(&slot);
        self.buffer.insert(slot);
        self.admit_ready(ctx);
        self.try_propose(ctx);
    }

    fn weak_certs_valid(&self, v: &Vertex) -> bool {
        v.weak_edges.iter().all(|e| {
            e.cert.as_ref().is_some_and(|c| {
                let subject = share_cert_subject(&e.target.digest, e.target.source, e.target.round);
                verify_cert(c, subject, self.quorum(), &self.nw_keys).is_ok()
            })
        })
    }

    /// One ascending pass over buffered slots; parents always sit in lower
    /// rounds so a single pass admits every ready vertex.
    fn admit_ready(&mut self, ctx: &mut Ctx) {
        let slots: Vec<(Round, PeerId)> = self.buffer.iter().copied().collect();
        for slot in slots {
            let vertex = self.vstore[&slot].0.clone();
            let missing = self.dag.missing_parents(&vertex);
            if !missing.is_empty() {
                for p in missing {
                    let pslot = (p.round, p.source);
                    if !self.vstore.contains_key(&pslot) && self.fetching.insert(pslot) {
                        ctx.timer(ctx.now + self.cfg.delta, Timer::Fetch { source: p.source, round: p.round });
                    }
                }
                continue;
            }
            self.buffer.remove(&slot);
            if !self.weak_certs_valid(&vertex) {
                self.rejected.insert(slot);
                ctx.alarm(format!("vertex {:?} carries an invalid weak certificate", vertex.reference()));
                continue;
            }
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

    // ---- delay accounting ----

    fn on_timeout(&mut self, from: PeerId, target: PeerId, round: Round, sig: Signature, ctx: &mut Ctx) {
        if target.idx() >= self.n()
            || sig.signer != from
            || !verify(timeout_subject(target, round).as_bytes(), &sig, &self.nw_keys[from.idx()])
        {
            ctx.observe(Observation::Rejected { from, reason: "bad timeout" });
            return;
        }
        let reports = self.timeouts.entry(target).or_default();
        let e = reports.entry(from).or_insert(0);
        *e = (*e).max(round);
        let mut values: Vec<Round> = reports.values().copied().collect();
        let weak = self.cfg.committee.weak();
        if values.len() >= weak {
            values.sort_unstable_by(|a, b| b.cmp(a));
            let i = target.idx();
            self.ldr[i] = self.ldr[i].max(values[weak - 1]);
            self.try_propose(ctx);
        }
    }

    fn timeout_sweep(&mut self, round: Round, ctx: &mut Ctx) {
        for j in PeerId::all(self.n()) {
            let heard = self.vstore.range((round, PeerId(0))..).any(|(&(_, s), _)| s == j);
            if !heard {
                let sig = sign(timeout_subject(j, round).as_bytes(), &self.nw_key, self.id);
                ctx.multicast(Message::Timeout { target: j, round, sig });
            }
        }
    }

    // ---- vertex formation ----

    /// Parent category of the stored vertex in `(source, round)`.
    pub fn category(&self, source: PeerId, round: Round) -> Category {
        let quorum = self.quorum();
        if self.share_count(source, round) >= quorum {
            return Category::I;
        }
        let parents_ok = self.dag.get(source, round).is_some_and(|v| {
            v.strong_edges.iter().all(|e| self.share_count(e.target.source, e.target.round) >= quorum)
        });
        let fresh = (self.ldr[source.idx()] as i128) <= round as i128 - self.cfg.rho as i128;
        match (parents_ok, fresh) {
            (true, true) => Category::II,
            (true, false) => Category::III,
            _ => Category::IV,
        }
    }

    fn may_start(&self) -> bool {
        self.start_reached && self.sw_keys[self.id.idx()] == Some(self.enclave.public())
    }

    fn base_round(&self) -> Option<Round> {
        let quorum = self.quorum();
        (self.round..=self.dag.max_round()).rev().find(|&r| match self.cfg.parent_policy {
            ParentPolicy::Alg5 => self.dag.round_len(r) >= quorum,
            ParentPolicy::Alg7 => {
                self.dag.round_refs(r).filter(|v| self.has_share_cert(v.source, r)).count() >= quorum
            }
        })
    }

    fn choose_parents(&self, base: Round, fast: bool) -> Option<Vec<VertexRef>> {
        let quorum = self.quorum();
        let refs: Vec<VertexRef> = self.dag.round_refs(base).collect();
        if self.cfg.parent_policy == ParentPolicy::Alg7 {
            return Some(refs.into_iter().filter(|v| self.has_share_cert(v.source, base)).collect());
        }
        let leader = self.ordering.as_ref().and_then(|b| b.steady_leader_of(base));
        let preferred = |v: &VertexRef| v.source == self.id || Some(v.source) == leader;
        // Preferred sources skip the fast-path filter: their shares may land
        // on the same tick as the vertex that completes the round.
        let mut ranked: Vec<(Category, usize, VertexRef)> = refs
            .into_iter()
            .map(|v| {
                let cat = if base == 0 { Category::I } else { self.category(v.source, base) };
                let seq = self.dag.admission_index(v.source, base).unwrap_or(usize::MAX);
                (cat, seq, v)
            })
            .filter(|(cat, _, v)| !fast || *cat <= Category::II || preferred(v))
            .collect();
        if ranked.len() < quorum {
            return None;
        }
        ranked.sort_by_key(|&(cat, seq, v)| (cat, self.ldr[v.source.idx()], seq, v.source));
        let mut chosen: Vec<VertexRef> = ranked.iter().map(|x| x.2).filter(|v| preferred(v)).collect();
        for &(_, _, v) in &ranked {
            if chosen.len() >= quorum {
                break;
            }
            if !preferred(&v) {
                chosen.push(v);
            }
        }
        chosen.sort();
        Some(chosen)
    }

    fn weak_edges(&self, strong: &[VertexRef], base: Round) -> Vec<Edge> {
        let mut covered = self.dag.covered_by(strong.iter());
        let mut out = Vec::new();
        for r in (1..base).rev() {
            for u in self.dag.round_refs(r) {
                if self.dag.is_covered(&covered, u.source, u.round) {
                    continue;
                }
                if let Some(cert) = self.share_cert(u.source, u.round) {
                    out.push(Edge { target: u, cert: Some(cert.clone()) });
                    covered.union_with(&self.dag.covered_by([&u]));
                }
            }
        }
        out
    }

    fn try_propose(&mut self, ctx: &mut Ctx) {
        if !self.may_start() || ctx.now >= self.cfg.propose_until {
            return;
        }
        let Some(base) = self.base_round() else {
            return;
        };
        if base >= self.cfg.max_round {
            return;
        }
        if let Some(b) = &self.ordering {
            if self.wait && self.round > 0 && !b.wave_ready(&self.dag, base) {
                return;
            }
        }
        let fast = self.round > 0 && ctx.now < self.last_sent_at + 2 * self.cfg.delta;
        let Some(strong) = self.choose_parents(base, fast) else {
            return;
        };
        let weak = self.weak_edges(&strong, base);
        let mut block = vec![0u8; self.cfg.block_size];
        ctx.rng.fill_bytes(&mut block);
        let vertex = Vertex {
            round: base + 1,
            source: self.id,
            block,
            strong_edges: strong.into_iter().map(Edge::bare).collect(),
            weak_edges: weak,
            delay: 0,
            latency_scores: self.ldr.clone(),
        };
        self.disperse(vertex, ctx);
    }

    fn disperse(&mut self, vertex: Vertex, ctx: &mut Ctx) {
        let r = vertex.round;
        let d = match self.enclave.disperse(vertex, ctx.now, self.cfg.delta) {
            Ok(d) => d,
            Err(e) => {
                ctx.alarm(format!("{e}"));
                return;
            }
        };
        self.round = r;
        self.last_sent_at = ctx.now;
        self.wait = true;
        ctx.observe(Observation::RoundStarted { round: r });
        ctx.observe(Observation::Dispersed { vertex: d.vertex.reference(), delay: d.vertex.delay });
        for (to, msg) in d.messages {
            ctx.send(to, msg);
        }
        let delta = self.cfg.delta;
        ctx.timer(d.ack_deadline, Timer::AckDeadline(r));
        ctx.timer(ctx.now + 2 * delta, Timer::SlowPath(r));
        ctx.timer(ctx.now + 6 * delta, Timer::TimeoutSweep(r));
        if self.ordering.is_some() {
            ctx.timer(ctx.now + self.cfg.wave_timeout, Timer::Wave(r));
        }
    }
}

impl Replica for RorqualNode {
    fn id(&self) -> PeerId {
        self.id
    }

    fn start(&mut self, ctx: &mut Ctx) {
        ctx.multicast(Message::Key { public: self.enclave.public() });
        ctx.timer(2 * self.cfg.delta, Timer::Start);
    }

    fn on_message(&mut self, from: PeerId, msg: Message, ctx: &mut Ctx) {
        if from.idx() >= self.n() {
            return;
        }
        match msg {
            Message::Key { public } => self.on_key(from, public, ctx),
            Message::Echo { peer, public, sig } => self.on_echo(from, peer, public, sig, ctx),
            Message::KeyRequest { peer } => {
                if let (Some(public), Some(cert)) =
                    (self.sw_keys.get(peer.idx()).copied().flatten(), self.key_certs.get(peer.idx()).cloned().flatten())
                {
                    ctx.send(from, Message::KeyResponse { peer, public, cert });
                }
            }
            Message::KeyResponse { peer, public, cert } => {
                if peer.idx() < self.n()
                    && verify_cert(&cert, echo_subject(peer, &public), self.quorum(), &self.nw_keys).is_ok()
                {
                    self.accept_key(peer, public, cert, ctx);
                } else {
                    ctx.observe(Observation::Rejected { from, reason: "bad key certificate" });
                }
            }
            m @ Message::Vertex { .. } => self.on_vertex(from, m, ctx),
            m @ Message::Share { .. } => self.on_share(from, m, ctx),
            m @ Message::Relay { .. } => self.on_relay(from, m, ctx),
            Message::Ack { source, round, share_sig } => {
                if source == self.id {
                    self.enclave.on_ack(from, round, &share_sig);
                }
            }
            Message::Request { source, round } => {
                if let Some((vertex, vertex_sig)) = self.vstore.get(&(round, source)) {
                    ctx.send(from, Message::Relay { vertex: vertex.clone(), vertex_sig: vertex_sig.clone() });
                }
            }
            Message::Timeout { target, round, sig } => self.on_timeout(from, target, round, sig, ctx),
            Message::PullVertex { .. } | Message::Vote { .. } | Message::PullRequest { .. } => {
                ctx.observe(Observation::Rejected { from, reason: "foreign message kind" });
            }
        }
    }

    fn on_timer(&mut self, timer: Timer, ctx: &mut Ctx) {
        let delta = self.cfg.delta;
        match timer {
            Timer::Start => {
                self.start_reached = true;
                self.try_propose(ctx);
            }
            Timer::AckDeadline(r) => {
                if self.enclave.timer_expire(r, ctx.now) {
                    ctx.observe(Observation::EnclaveDelayed { round: self.enclave.delay() });
                }
            }
            Timer::SlowPath(r) => {
                if self.round == r {
                    self.try_propose(ctx);
                }
            }
            Timer::Fetch { source, round } => {
                if self.vstore.contains_key(&(round, source)) {
                    self.fetching.remove(&(round, source));
                    return;
                }
                if let Some(m) = self.enclave.request_missing(source, round, true) {
                    let k = 2 * self.cfg.committee.f + 1;
                    for to in ctx.sample_peers(self.n(), k) {
                        ctx.send(to, m.clone());
                    }
                }
                ctx.timer(ctx.now + delta, Timer::Fetch { source, round });
            }
            Timer::KeyFetch(peer) => {
                if self.sw_keys[peer.idx()].is_some() {
                    return;
                }
                let k = 2 * self.cfg.committee.f + 1;
                for to in ctx.sample_peers(self.n(), k) {
                    ctx.send(to, Message::KeyRequest { peer });
                }
                ctx.timer(ctx.now + delta, Timer::KeyFetch(peer));
            }
            Timer::TimeoutSweep(r) => self.timeout_sweep(r, ctx),
            Timer::Wave(r) => {
                if self.round == r {
                    self.wait = false;
                    self.try_propose(ctx);
                }
            }
        }
    }

    fn restart_enclave(&mut self, ctx: &mut Ctx) {
        let announce = self.enclave.restart(ctx.rng);
        ctx.multicast(announce);
        // Re-disperse the current round under the fresh key.
        self.round = self.round.saturating_sub(1);
        self.last_sent_at = 0;
        self.start_reached = true;
        let Some(strong) = self.choose_parents(self.round, false) else {
            return;
        };
        let weak = self.weak_edges(&strong, self.round);
        let mut block = vec![0xEE; self.cfg.block_size];
        ctx.rng.fill_bytes(&mut block);
        let vertex = Vertex {
            round: self.round + 1,
            source: self.id,
            block,
            strong_edges: strong.into_iter().map(Edge::bare).collect(),
            weak_edges: weak,
            delay: 0,
            latency_scores: self.ldr.clone(),
        };
        self.disperse(vertex, ctx);
    }

    fn dag(&self) -> &DagStore {
        &self.dag
    }

    fn ordering(&self) -> Option<&Bullshark> {
        self.ordering.as_ref()
    }

    fn ldr(&self) -> Option<&[Round]> {
        Some(&self.ldr)
    }

    fn known_vertices(&self) -> Vec<(PeerId, Round, Digest)> {
        self.vstore.iter().map(|(&(r, s), (v, _))| (s, r, v.digest())).collect()
    }

    fn current_round(&self) -> Round {
        self.round
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::node::testkit::Cluster;

    fn cluster(n: usize) -> Cluster<RorqualNode> {
        Cluster::new(n, 3, RorqualNode::new)
    }

    fn boot(c: &mut Cluster<RorqualNode>) {
        for p in PeerId::all(c.nodes.len()) {
            c.drive(p, |node, ctx| node.start(ctx));
        }
        for p in PeerId::all(c.nodes.len()) {
            c.drive(p, |node, ctx| node.on_timer(Timer::Start, ctx));
        }
    }

    #[test]
    fn setup_and_first_round() {
        let mut c = cluster(4);
        boot(&mut c);
        for node in &c.nodes {
            for p in PeerId::all(4) {
                assert_eq!(node.sw_key(p), Some(c.nodes[p.idx()].enclave().public()));
            }
            assert!(node.dag().round_len(1) >= 3);
            for p in node.dag().round_refs(1).map(|v| v.source) {
                assert_eq!(node.share_count(p, 1), 4);
                assert!(node.share_cert(p, 1).is_some());
                assert_eq!(node.category(p, 1), Category::I);
            }
            assert!(node.current_round() <= 3);
        }
        assert!(c.nodes.iter().filter(|n| n.current_round() == 3).count() >= 3);
    }

    #[test]
    fn restarted_enclave_vertices_are_rejected() {
        let mut c = cluster(4);
        for p in PeerId::all(4) {
            c.drive(p, |node, ctx| node.start(ctx));
        }
        let original = c.nodes[3].enclave().public();
        c.drive(PeerId(3), |node, ctx| node.restart_enclave(ctx));
        assert_ne!(c.nodes[3].enclave().public(), original);
        let rejected = c
            .observed
            .iter()
            .filter(|(p, o)| p.idx() < 3 && matches!(o, Observation::Rejected { reason: "bad vertex signature", .. }))
            .count();
        assert_eq!(rejected, 3);
        for p in PeerId::all(3) {
            c.drive(p, |node, ctx| node.on_timer(Timer::Start, ctx));
        }
        for node in &c.nodes[..3] {
            assert_eq!(node.sw_key(PeerId(3)), Some(original));
            assert!(node.dag().reference(PeerId(3), 1).is_none());
            assert_eq!(node.current_round(), 3);
        }
    }

    #[test]
    fn timeouts_raise_ldr_to_f_plus_one_th_report() {
        let mut c = cluster(4);
        boot(&mut c);
        let target = PeerId(3);
        for (reporter, round) in [(0u16, 9), (1, 7), (2, 4)] {
            let sig = sign(timeout_subject(target, round).as_bytes(), &c.keys[reporter as usize], PeerId(reporter));
            c.drive(PeerId(0), |node, ctx| {
                node.on_message(PeerId(reporter), Message::Timeout { target, round, sig }, ctx)
            });
        }
        // f+1 = 2 reports needed; the second largest of {9, 7, 4} is 7.
        assert_eq!(c.nodes[0].ldr().unwrap()[3], 7);
    }

    #[test]
    fn forged_timeout_is_ignored() {
        let mut c = cluster(4);
        boot(&mut c);
        let target = PeerId(2);
        let forged = sign(timeout_subject(target, 50).as_bytes(), &c.keys[3], PeerId(3));
        for from in [0u16, 1] {
            let sig = forged.clone();
            c.drive(PeerId(0), |node, ctx| node.on_message(PeerId(from), Message::Timeout { target, round: 50, sig }, ctx));
        }
        assert_eq!(c.nodes[0].ldr().unwrap()[2], 0);
    }
}
