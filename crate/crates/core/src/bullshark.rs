//! Bullshark ordering over a local DAG.
//!
//! Waves are groups of four rounds. Round `4w-3` holds the first steady
//! leader and the fallback leader, round `4w-1` the second steady leader.
//! Every decision here is a function of a vertex's causal history, so two
//! peers that admit the same vertices reach the same decisions regardless
//! of admission timing.

use std::collections::{BTreeMap, BTreeSet};

use crate::codec::digest_of;
use crate::dag::DagStore;
use crate::types::{Committee, PeerId, Round, VertexRef};

#[derive(Debug, Clone)]
pub struct Bullshark {
    committee: Committee,
    coin_seed: u64,
    steady_voters: BTreeMap<u64, BTreeSet<PeerId>>,
    fallback_voters: BTreeMap<u64, BTreeSet<PeerId>>,
    committed_round: Round,
    delivered: BTreeSet<VertexRef>,
    log: Vec<VertexRef>,
    leaders: Vec<VertexRef>,
}

pub fn wave_of(round: Round) -> u64 {
    round.div_ceil(4)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum VoteKind {
    Steady,
    Fallback,
}

impl Bullshark {
    /// `coin_seed` drives the fallback leader choice and must be the same at
    /// every peer.
    pub fn new(committee: Committee, coin_seed: u64) -> Self {
        Bullshark {
            committee,
            coin_seed,
            steady_voters: BTreeMap::new(),
            fallback_voters: BTreeMap::new(),
            committed_round: 0,
            delivered: BTreeSet::new(),
            log: Vec::new(),
            leaders: Vec::new(),
        }
    }

    pub fn first_leader(&self, w: u64) -> PeerId {
        PeerId(((2 * (w - 1)) % self.committee.n as u64) as u16)
    }

    pub fn second_leader(&self, w: u64) -> PeerId {
        PeerId(((2 * (w - 1) + 1) % self.committee.n as u64) as u16)
    }

    pub fn fallback_leader(&self, w: u64) -> PeerId {
        let d = digest_of(&("coin", self.coin_seed, w));
        let x = u64::from_le_bytes(d.as_bytes()[..8].try_into().expect("digest has 32 bytes"));
        PeerId((x % self.committee.n as u64) as u16)
    }

    pub fn committed_round(&self) -> Round {
        self.committed_round
    }

    /// Delivered vertices in output order.
    pub fn log(&self) -> &[VertexRef] {
        &self.log
    }

    /// Committed leaders in commit order.
    pub fn leaders(&self) -> &[VertexRef] {
        &self.leaders
    }

    pub fn is_steady_voter(&self, w: u64, p: PeerId) -> bool {
        w == 1 || self.steady_voters.get(&w).is_some_and(|s| s.contains(&p))
    }

    pub fn is_fallback_voter(&self, w: u64, p: PeerId) -> bool {
        self.fallback_voters.get(&w).is_some_and(|s| s.contains(&p))
    }

    fn first_steady_vertex(&self, dag: &DagStore, w: u64) -> Option<VertexRef> {
        dag.reference(self.first_leader(w), 4 * w - 3)
    }

    fn second_steady_vertex(&self, dag: &DagStore, w: u64) -> Option<VertexRef> {
        dag.reference(self.second_leader(w), 4 * w - 1)
    }

    fn fallback_vertex(&self, dag: &DagStore, w: u64) -> Option<VertexRef> {
        dag.reference(self.fallback_leader(w), 4 * w - 3)
    }

    /// Whether `voter` counts as a `kind` voter of wave `w`. Beyond wave 1 the
    /// classifying vertex of its source must be in its causal history.
    fn counts_as(&self, dag: &DagStore, kind: VoteKind, w: u64, voter: &VertexRef) -> bool {
        let member = match kind {
            VoteKind::Steady => self.is_steady_voter(w, voter.source),
            VoteKind::Fallback => self.is_fallback_voter(w, voter.source),
        };
        if !member {
            return false;
        }
        if w == 1 {
            return true;
        }
        dag.reference(voter.source, 4 * w - 3)
            .is_some_and(|u| dag.path(voter, &u).unwrap_or(false))
    }

    fn count_votes(&self, dag: &DagStore, kind: VoteKind, w: u64, votes: &[VertexRef], leader: &VertexRef) -> usize {
        votes
            .iter()
            .filter(|v| self.counts_as(dag, kind, w, v) && dag.strong_path(v, leader).unwrap_or(false))
            .count()
    }

    fn try_commit(
        &mut self,
        dag: &DagStore,
        kind: VoteKind,
        votes: &[VertexRef],
        leader: Option<VertexRef>,
        w: u64,
    ) -> bool {
        let Some(leader) = leader else {
            return false;
        };
        if self.count_votes(dag, kind, w, votes, &leader) > 2 * self.committee.f {
            self.commit_leader(dag, leader);
            true
        } else {
            false
        }
    }

    /// Processes a newly admitted vertex. Returns the vertices delivered as
    /// a consequence, in output order.
    pub fn try_ordering(&mut self, dag: &DagStore, v: &VertexRef) -> Vec<VertexRef> {
        let before = self.log.len();
        let Some(vertex) = dag.get(v.source, v.round) else {
            return Vec::new();
        };
        if v.round == 0 {
            return Vec::new();
        }
        let w = wave_of(v.round);
        let votes: Vec<VertexRef> = vertex.strong_edges.iter().map(|e| e.target).collect();
        match v.round % 4 {
            1 if w > 1 => self.determine_vote_type(dag, v.source, &votes, w),
            3 => {
                let leader = self.first_steady_vertex(dag, w);
                self.try_commit(dag, VoteKind::Steady, &votes, leader, w);
            }
            _ => {}
        }
        self.log[before..].to_vec()
    }

    fn determine_vote_type(&mut self, dag: &DagStore, p: PeerId, votes: &[VertexRef], w: u64) {
        let vs = self.second_steady_vertex(dag, w - 1);
        let vf = self.fallback_vertex(dag, w - 1);
        let steady = self.try_commit(dag, VoteKind::Steady, votes, vs, w - 1)
            || self.try_commit(dag, VoteKind::Fallback, votes, vf, w - 1);
        let set = if steady { &mut self.steady_voters } else { &mut self.fallback_voters };
        set.entry(w).or_default().insert(p);
    }

    fn commit_leader(&mut self, dag: &DagStore, leader: VertexRef) {
        if leader.round <= self.committed_round {
            return;
        }
        let f = self.committee.f;
        let mut stack = vec![leader];
        let mut v = leader;
        let mut r = leader.round.saturating_sub(2);
        while r > self.committed_round {
            let w = wave_of(r);
            let ss_potential: Vec<VertexRef> =
                dag.round_refs(r + 1).filter(|u| dag.strong_path(&v, u).unwrap_or(false)).collect();
            let (vs, vf, fb_votes) = if r % 4 == 1 {
                let vs = self.first_steady_vertex(dag, w);
                let vf = self.fallback_vertex(dag, w);
                let fb = match vf {
                    Some(vf) if v.round != r + 2 => dag
                        .round_refs(r + 3)
                        .filter(|u| dag.strong_path(&v, u).unwrap_or(false))
                        .filter(|u| {
                            self.counts_as(dag, VoteKind::Fallback, w, u) && dag.strong_path(u, &vf).unwrap_or(false)
                        })
                        .count(),
                    _ => 0,
                };
                (vs, vf, fb)
            } else {
                (self.second_steady_vertex(dag, w), None, 0)
            };
            let ss_votes = vs.map_or(0, |vs| {
                ss_potential
                    .iter()
                    .filter(|u| self.counts_as(dag, VoteKind::Steady, w, u) && dag.strong_path(u, &vs).unwrap_or(false))
                    .count()
            });
            if ss_votes > f && fb_votes <= f {
                let vs = vs.expect("steady votes imply a steady leader");
                stack.push(vs);
                v = vs;
            }
            if ss_votes <= f && fb_votes > f {
                let vf = vf.expect("fallback votes imply a fallback leader");
                stack.push(vf);
                v = vf;
            }
            r = r.saturating_sub(2);
        }
        self.committed_round = leader.round;
        self.order_vertices(dag, stack);
    }

    fn order_vertices(&mut self, dag: &DagStore, mut stack: Vec<VertexRef>) {
        while let Some(leader) = stack.pop() {
            self.leaders.push(leader);
            let mut history = dag.read_causal(&leader).expect("committed leaders are stored");
            history.push(leader);
            history.sort();
            for u in history {
                if self.delivered.insert(u) {
                    self.log.push(u);
                }
            }
        }
    }

    /// Wave-progress condition for leaving `round`, ignoring the wait flag.
    pub fn wave_ready(&self, dag: &DagStore, round: Round) -> bool {
        if round == 0 {
            return true;
        }
        let w = wave_of(round);
        let supported = |leader: Option<VertexRef>| {
            leader.is_some_and(|l| {
                dag.round_refs(round)
                    .filter(|u| {
                        self.counts_as(dag, VoteKind::Steady, w, u) && dag.strong_path(u, &l).unwrap_or(false)
                    })
                    .count()
                    >= self.committee.quorum()
            })
        };
        match round % 4 {
            1 => self.first_steady_vertex(dag, w).is_some(),
            3 => self.second_steady_vertex(dag, w).is_some(),
            2 => supported(self.first_steady_vertex(dag, w)),
            _ => supported(self.second_steady_vertex(dag, w)),
        }
    }

    /// Steady leader of `round`, if it is a leader round.
    pub fn steady_leader_of(&self, round: Round) -> Option<PeerId> {
        match round % 4 {
            1 => Some(self.first_leader(wave_of(round))),
            3 => Some(self.second_leader(wave_of(round))),
            _ => None,
        }
    }
}
