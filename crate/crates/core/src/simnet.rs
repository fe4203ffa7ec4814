//! Deterministic discrete-event network.
//!
//! Events fire in `(time, class, seq)` order: message deliveries (class 0)
//! precede timers and adversary actions (class 1) at the same tick, and
//! ties within a class are FIFO. All randomness comes from seeded ChaCha
//! streams, one per peer plus one for the network.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::message::{Envelope, Message};
use crate::node::{Action, Ctx, Observation, Replica, Timer};
use crate::types::{PeerId, Round, Time};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DelayModel {
    /// Every post-GST message takes exactly δ.
    Fixed,
    /// Post-GST delays are uniform in [1, δ] ticks.
    Uniform,
}

#[derive(Debug, Clone)]
pub struct NetConfig {
    pub n: usize,
    /// Bound known to the protocol.
    pub delta: Time,
    /// Actual post-GST bound, δ ≤ Δ.
    pub actual_delta: Time,
    pub gst: Time,
    /// Cap on pre-GST delays.
    pub pre_gst_cap: Time,
    pub delay_model: DelayModel,
    /// Keep a line trace of every network event.
    pub trace: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Behavior {
    None,
    /// Byzantine peers halt at `at`.
    Crash { at: Time },
    /// Byzantine sources hide their own vertices from the victims, withhold
    /// their self-ack and own-share relay, vote for their own vertex towards
    /// one non-victim only, and deliver one tick early.
    SelectiveOmission { victims: Vec<PeerId> },
    /// Byzantine sources hold every message about their own vertices to the
    /// victims for a random time in `[min_hold, max_hold]`.
    Delayer { victims: Vec<PeerId>, min_hold: Time, max_hold: Time },
    /// Byzantine peers restart their enclave at the given times and replay
    /// everything they sent so far.
    Replayer { restarts: Vec<Time> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdversarySpec {
    pub byzantine: Vec<PeerId>,
    pub behavior: Behavior,
    /// Byzantine peers stop entirely at this time.
    pub stop_at: Option<Time>,
}

impl AdversarySpec {
    pub fn none() -> Self {
        AdversarySpec { byzantine: Vec::new(), behavior: Behavior::None, stop_at: None }
    }

    pub fn is_byzantine(&self, p: PeerId) -> bool {
        self.byzantine.contains(&p)
    }

    fn victims(&self) -> &[PeerId] {
        match &self.behavior {
            Behavior::SelectiveOmission { victims } | Behavior::Delayer { victims, .. } => victims,
            _ => &[],
        }
    }
}

enum Verdict {
    Drop,
    Pass { hold: Time, early: bool },
}

/// Whether `msg` from `from` concerns `from`'s own vertex.
fn about_own_vertex(from: PeerId, msg: &Message) -> bool {
    match msg {
        Message::Vertex { vertex, .. } | Message::Relay { vertex, .. } | Message::PullVertex { vertex, .. } => {
            vertex.source == from
        }
        Message::Share { share, .. } => share.source == from,
        Message::Ack { source, .. } | Message::Vote { source, .. } => *source == from,
        _ => false,
    }
}

#[derive(Debug, Clone)]
enum Event {
    Deliver { from: PeerId, to: PeerId, msg: Message, sent: Time, mcast: Option<usize> },
    Release { from: PeerId, to: PeerId, msg: Message, mcast: Option<usize> },
    Timer { peer: PeerId, timer: Timer },
    Retransmit { mcast: usize },
    Restart { peer: PeerId },
}

#[derive(Debug, Clone)]
struct Multicast {
    from: PeerId,
    msg: Message,
    start: Time,
    confirmed: Vec<bool>,
}

/// Byte totals per vertex slot plus unattributed setup traffic.
#[derive(Debug, Clone, Default)]
pub struct ByteLedger {
    pub total: u64,
    pub setup: u64,
    pub per_slot: BTreeMap<(PeerId, Round), u64>,
    pub messages: u64,
}

#[derive(Debug, Clone, Default)]
pub struct RunLog {
    pub observations: Vec<(Time, PeerId, Observation)>,
    pub bytes: ByteLedger,
    pub trace: String,
    /// Correct-to-correct deliveries later than send+δ after GST.
    pub late_deliveries: u64,
    /// Correct-to-correct messages still in flight at the end.
    pub undelivered: u64,
    pub end_time: Time,
}

pub struct Simulation {
    cfg: NetConfig,
    adversary: AdversarySpec,
    nodes: Vec<Box<dyn Replica>>,
    rngs: Vec<ChaCha8Rng>,
    net_rng: ChaCha8Rng,
    queue: BTreeMap<(Time, u8, u64), Event>,
    seq: u64,
    now: Time,
    mcasts: Vec<Multicast>,
    seen: Vec<BTreeSet<usize>>,
    halted: Vec<bool>,
    sent_log: Vec<(PeerId, PeerId, Message)>,
    log: RunLog,
}

impl Simulation {
    pub fn new(cfg: NetConfig, adversary: AdversarySpec, nodes: Vec<Box<dyn Replica>>, seed: u64) -> Self {
        let n = nodes.len();
        assert_eq!(n, cfg.n, "one node per peer");
        let rngs = (0..n).map(|i| ChaCha8Rng::seed_from_u64(seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(i as u64 + 1)))).collect();
        let mut sim = Simulation {
            net_rng: ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5151)),
            rngs,
            queue: BTreeMap::new(),
            seq: 0,
            now: 0,
            mcasts: Vec::new(),
            seen: vec![BTreeSet::new(); n],
            halted: vec![false; n],
            sent_log: Vec::new(),
            log: RunLog::default(),
            nodes,
            adversary,
            cfg,
        };
        if let Behavior::Replayer { restarts } = sim.adversary.behavior.clone() {
            for at in restarts {
                for p in sim.adversary.byzantine.clone() {
                    sim.push(at, 1, Event::Restart { peer: p });
                }
            }
        }
        sim
    }

    pub fn nodes(&self) -> &[Box<dyn Replica>] {
        &self.nodes
    }

    pub fn now(&self) -> Time {
        self.now
    }

    fn push(&mut self, at: Time, class: u8, ev: Event) {
        self.seq += 1;
        self.queue.insert((at, class, self.seq), ev);
    }

    fn is_correct(&self, p: PeerId) -> bool {
        !self.adversary.is_byzantine(p)
    }

    fn halted_at(&self, p: PeerId, t: Time) -> bool {
        if self.halted[p.idx()] || !self.adversary.is_byzantine(p) {
            return self.halted[p.idx()];
        }
        let crash = match self.adversary.behavior {
            Behavior::Crash { at } => Some(at),
            _ => None,
        };
        [crash, self.adversary.stop_at].into_iter().flatten().any(|at| t >= at)
    }

    fn post_gst_draw(&mut self) -> Time {
        match self.cfg.delay_model {
            DelayModel::Fixed => self.cfg.actual_delta,
            DelayModel::Uniform => self.net_rng.gen_range(1..=self.cfg.actual_delta.max(1)),
        }
    }

    fn delivery_time(&mut self, sent: Time, early: bool) -> Time {
        let mut post = self.post_gst_draw();
        if early {
            post = post.saturating_sub(1).max(1);
        }
        if sent >= self.cfg.gst {
            return sent + post;
        }
        let pre = self.net_rng.gen_range(1..=self.cfg.pre_gst_cap.max(1));
        (sent + pre).min(self.cfg.gst + post)
    }

    fn filter(&mut self, from: PeerId, to: PeerId, msg: &Message) -> Verdict {
        if !self.adversary.is_byzantine(from) || from == to && !matches!(msg, Message::Ack { .. }) {
            return Verdict::Pass { hold: 0, early: false };
        }
        let victims = self.adversary.victims().to_vec();
        match self.adversary.behavior.clone() {
            Behavior::SelectiveOmission { .. } => {
                let own = about_own_vertex(from, msg);
                match msg {
                    Message::Ack { source, .. } if *source == from && to == from => return Verdict::Drop,
                    Message::Share { share, .. } if share.source == from => return Verdict::Drop,
                    Message::Vote { source, .. } if *source == from => {
                        let first = PeerId::all(self.cfg.n)
                            .find(|p| !victims.contains(p) && !self.adversary.is_byzantine(*p));
                        if Some(to) != first {
                            return Verdict::Drop;
                        }
                    }
                    _ if own && victims.contains(&to) => return Verdict::Drop,
                    _ => {}
                }
                if from == to {
                    Verdict::Pass { hold: 0, early: false }
                } else {
                    Verdict::Pass { hold: 0, early: true }
                }
            }
            Behavior::Delayer { min_hold, max_hold, .. } => {
                if about_own_vertex(from, msg) && victims.contains(&to) {
                    let hold = self.net_rng.gen_range(min_hold..=max_hold.max(min_hold));
                    Verdict::Pass { hold, early: false }
                } else {
                    Verdict::Pass { hold: 0, early: false }
                }
            }
            _ => Verdict::Pass { hold: 0, early: false },
        }
    }

    fn account(&mut self, event: &str, from: PeerId, to: PeerId, msg: &Message) -> u64 {
        let size = Envelope::new(from, msg.clone()).size();
        if event == "send" {
            let b = &mut self.log.bytes;
            b.total += size;
            b.messages += 1;
            match msg.vertex_slot() {
                Some(slot) => *b.per_slot.entry(slot).or_default() += size,
                None => b.setup += size,
            }
        }
        if self.cfg.trace {
            let _ = writeln!(self.log.trace, "{},{event},{},{},{},{size}", self.now, from, to, msg.kind().tag());
        }
        size
    }

    /// Puts one copy on the wire, subject to the adversary. Returns whether
    /// the copy was not dropped.
    fn transmit(&mut self, from: PeerId, to: PeerId, msg: Message, mcast: Option<usize>) -> bool {
        if from == to {
            if matches!(self.filter(from, to, &msg), Verdict::Drop) {
                return false;
            }
            self.push(self.now, 0, Event::Deliver { from, to, msg, sent: self.now, mcast });
            return true;
        }
        match self.filter(from, to, &msg) {
            Verdict::Drop => {
                if self.cfg.trace {
                    self.account("drop", from, to, &msg);
                }
                false
            }
            Verdict::Pass { hold, .. } if hold > 0 => {
                self.push(self.now + hold, 0, Event::Release { from, to, msg, mcast });
                true
            }
            Verdict::Pass { early, .. } => {
                self.account("send", from, to, &msg);
                if self.adversary.is_byzantine(from) && matches!(self.adversary.behavior, Behavior::Replayer { .. }) {
                    self.sent_log.push((from, to, msg.clone()));
                }
                let at = self.delivery_time(self.now, early);
                self.push(at, 0, Event::Deliver { from, to, msg, sent: self.now, mcast });
                true
            }
        }
    }

    fn apply(&mut self, peer: PeerId, actions: Vec<Action>, observations: Vec<Observation>) {
        for o in observations {
            self.log.observations.push((self.now, peer, o));
        }
        if self.halted_at(peer, self.now) {
            return;
        }
        for a in actions {
            match a {
                Action::Send { to, msg } => {
                    if to.idx() < self.cfg.n {
                        self.transmit(peer, to, msg, None);
                    }
                }
                Action::Multicast { msg } => {
                    let id = self.mcasts.len();
                    self.mcasts.push(Multicast {
                        from: peer,
                        msg: msg.clone(),
                        start: self.now,
                        confirmed: vec![false; self.cfg.n],
                    });
                    for to in PeerId::all(self.cfg.n) {
                        self.transmit(peer, to, msg.clone(), Some(id));
                    }
                    self.push(self.now + self.cfg.delta / 2, 1, Event::Retransmit { mcast: id });
                }
                Action::SetTimer { at, timer } => self.push(at.max(self.now), 1, Event::Timer { peer, timer }),
            }
        }
    }

    fn with_node<F: FnOnce(&mut dyn Replica, &mut Ctx)>(&mut self, peer: PeerId, f: F) {
        let i = peer.idx();
        let mut ctx = Ctx::new(self.now, peer, &mut self.rngs[i]);
        f(self.nodes[i].as_mut(), &mut ctx);
        let Ctx { actions, observations, .. } = ctx;
        self.apply(peer, actions, observations);
    }

    fn retransmit(&mut self, id: usize) {
        let m = self.mcasts[id].clone();
        if self.halted_at(m.from, self.now) {
            return;
        }
        let confirmed = m.confirmed.iter().filter(|&&c| c).count();
        let in_window = self.now <= m.start + self.cfg.delta;
        let quorum = self.cfg.n - (self.cfg.n - 1) / 3;
        if !in_window && confirmed >= quorum {
            return;
        }
        let mut passed = false;
        let mut pending = false;
        for to in PeerId::all(self.cfg.n) {
            if !m.confirmed[to.idx()] {
                pending = true;
                passed |= self.transmit(m.from, to, m.msg.clone(), Some(id));
            }
        }
        if !pending || !passed {
            return;
        }
        let next = if self.now + self.cfg.delta / 2 <= m.start + self.cfg.delta {
            self.now + self.cfg.delta / 2
        } else {
            self.now + self.cfg.delta
        };
        self.push(next, 1, Event::Retransmit { mcast: id });
    }

    fn step(&mut self, key: (Time, u8, u64), ev: Event) {
        self.now = key.0;
        match ev {
            Event::Deliver { from, to, msg, sent, mcast } => {
                if from != to && self.is_correct(from) && self.is_correct(to) && sent >= self.cfg.gst
                    && self.now > sent + self.cfg.actual_delta
                {
                    self.log.late_deliveries += 1;
                }
                if let Some(id) = mcast {
                    self.mcasts[id].confirmed[to.idx()] = true;
                    if !self.seen[to.idx()].insert(id) {
                        return;
                    }
                }
                if from != to {
                    self.account("deliver", from, to, &msg);
                }
                if self.halted_at(to, self.now) {
                    return;
                }
                self.with_node(to, |node, ctx| node.on_message(from, msg, ctx));
            }
            Event::Release { from, to, msg, mcast } => {
                if self.halted_at(from, self.now) {
                    return;
                }
                self.account("send", from, to, &msg);
                let at = self.delivery_time(self.now, false);
                self.push(at, 0, Event::Deliver { from, to, msg, sent: self.now, mcast });
            }
            Event::Timer { peer, timer } => {
                if !self.halted_at(peer, self.now) {
                    self.with_node(peer, |node, ctx| node.on_timer(timer, ctx));
                }
            }
            Event::Retransmit { mcast } => self.retransmit(mcast),
            Event::Restart { peer } => {
                if self.halted_at(peer, self.now) {
                    return;
                }
                self.with_node(peer, |node, ctx| node.restart_enclave(ctx));
                let replay: Vec<(PeerId, PeerId, Message)> =
                    self.sent_log.iter().filter(|(f, _, _)| *f == peer).cloned().collect();
                for (from, to, msg) in replay {
                    self.transmit(from, to, msg, None);
                }
            }
        }
    }

    /// Starts every peer and runs until `end` or until no events remain.
    pub fn run(mut self, end: Time) -> (RunLog, Vec<Box<dyn Replica>>) {
        for p in PeerId::all(self.cfg.n) {
            self.with_node(p, |node, ctx| node.start(ctx));
        }
        while let Some((&key, _)) = self.queue.iter().next() {
            if key.0 > end {
                break;
            }
            let ev = self.queue.remove(&key).expect("key taken from queue");
            self.step(key, ev);
        }
        self.log.undelivered = self
            .queue
            .values()
            .filter(|e| match e {
                Event::Deliver { from, to, .. } => from != to && self.is_correct(*from) && self.is_correct(*to),
                _ => false,
            })
            .count() as u64;
        self.log.end_time = self.now;
        (self.log, self.nodes)
    }
}
