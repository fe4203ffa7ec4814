//! Identifiers and the vertex structure shared by both broadcast backends.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::codec::{digest_of, Digest, QuorumCert};

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
pub struct PeerId(pub u16);

impl PeerId {
    pub fn idx(self) -> usize {
        self.0 as usize
    }

    pub fn all(n: usize) -> impl Iterator<Item = PeerId> {
        (0..n).map(|i| PeerId(i as u16))
    }
}

impl fmt::Debug for PeerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

impl fmt::Display for PeerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub type Round = u64;

/// Simulated time in ticks.
pub type Time = u64;

/// Ticks per simulated time unit. Δ = 1.0 is 1000 ticks.
pub const TICKS_PER_UNIT: Time = 1000;

pub fn to_ticks(units: f64) -> Time {
    (units * TICKS_PER_UNIT as f64).round() as Time
}

pub fn to_units(ticks: Time) -> f64 {
    ticks as f64 / TICKS_PER_UNIT as f64
}

/// Reference to a vertex by position and content digest.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VertexRef {
    pub round: Round,
    pub source: PeerId,
    pub digest: Digest,
}

impl fmt::Debug for VertexRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:?},r{},{})", self.source, self.round, self.digest.short())
    }
}

/// An edge, optionally carrying the certificate that justified it: a share
/// quorum for Rorqual weak edges, an availability cert for pull edges.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub target: VertexRef,
    pub cert: Option<QuorumCert>,
}

impl Edge {
    pub fn bare(target: VertexRef) -> Self {
        Edge { target, cert: None }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vertex {
    pub round: Round,
    pub source: PeerId,
    pub block: Vec<u8>,
    pub strong_edges: Vec<Edge>,
    pub weak_edges: Vec<Edge>,
    /// Last delayed round as stamped by the source enclave.
    pub delay: Round,
    /// Carried for wire compatibility; no logic reads it.
    pub latency_scores: Vec<Round>,
}

impl Vertex {
    pub fn digest(&self) -> Digest {
        digest_of(self)
    }

    pub fn reference(&self) -> VertexRef {
        VertexRef { round: self.round, source: self.source, digest: self.digest() }
    }

    pub fn parents(&self) -> impl Iterator<Item = &VertexRef> {
        self.strong_edges.iter().chain(self.weak_edges.iter()).map(|e| &e.target)
    }

    /// Mock round-0 vertex; identical at every peer.
    pub fn genesis(source: PeerId) -> Self {
        Vertex {
            round: 0,
            source,
            block: Vec::new(),
            strong_edges: Vec::new(),
            weak_edges: Vec::new(),
            delay: 0,
            latency_scores: Vec::new(),
        }
    }

    /// Structural checks every receiver applies before storing.
    pub fn well_formed(&self, n: usize, f: usize) -> bool {
        if self.source.idx() >= n || self.round == 0 {
            return false;
        }
        let mut sources: Vec<PeerId> = self.strong_edges.iter().map(|e| e.target.source).collect();
        sources.sort();
        sources.dedup();
        sources.len() == self.strong_edges.len()
            && self.strong_edges.len() >= n - f
            && self.strong_edges.iter().all(|e| e.target.round + 1 == self.round && e.target.source.idx() < n)
            && self.weak_edges.iter().all(|e| e.target.round + 1 < self.round && e.target.source.idx() < n)
    }
}

/// `n ≥ 3f + 1` quorum arithmetic.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Committee {
    pub n: usize,
    pub f: usize,
}

impl Committee {
    pub fn new(n: usize, f: usize) -> Self {
        assert!(n > 3 * f, "n must be at least 3f+1");
        Committee { n, f }
    }

    pub fn quorum(&self) -> usize {
        self.n - self.f
    }

    pub fn coding_k(&self) -> usize {
        self.n - 2 * self.f
    }

    pub fn weak(&self) -> usize {
        self.f + 1
    }

    pub fn peers(&self) -> impl Iterator<Item = PeerId> {
        PeerId::all(self.n)
    }
}
