//! Per-peer DAG store with memoized reachability.
//!
//! Vertices are indexed densely in admission order. Each stored vertex keeps
//! two ancestor bitsets over those indices: one for reachability over all
//! edges and one over strong edges only. Both include the vertex itself.

use std::collections::BTreeMap;
use std::io::{self, Write};

use fixedbitset::FixedBitSet;

use crate::types::{PeerId, Round, Vertex, VertexRef};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DagError {
    #[error("parent {0:?} is not stored")]
    MissingParent(VertexRef),
    #[error("slot {0:?} already holds this vertex")]
    Duplicate(VertexRef),
    #[error("slot {0:?} already holds a different vertex")]
    Conflict(VertexRef),
    #[error("vertex {0:?} is not stored")]
    Unknown(VertexRef),
}

#[derive(Debug, Clone)]
struct Node {
    vertex: Vertex,
    reference: VertexRef,
    ancestors: FixedBitSet,
    strong: FixedBitSet,
}

#[derive(Debug, Clone)]
pub struct DagStore {
    n: usize,
    slots: BTreeMap<(Round, PeerId), usize>,
    nodes: Vec<Node>,
}

impl DagStore {
    /// Store holding the `n` genesis vertices.
    pub fn new(n: usize) -> Self {
        let mut dag = DagStore { n, slots: BTreeMap::new(), nodes: Vec::new() };
        for p in PeerId::all(n) {
            dag.insert(Vertex::genesis(p)).expect("genesis has no parents");
        }
        dag
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of stored vertices, genesis included.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn get(&self, source: PeerId, round: Round) -> Option<&Vertex> {
        self.slots.get(&(round, source)).map(|&i| &self.nodes[i].vertex)
    }

    pub fn reference(&self, source: PeerId, round: Round) -> Option<VertexRef> {
        self.slots.get(&(round, source)).map(|&i| self.nodes[i].reference)
    }

    pub fn contains(&self, r: &VertexRef) -> bool {
        self.index_of(r).is_some()
    }

    /// Position of the vertex in admission order.
    pub fn admission_index(&self, source: PeerId, round: Round) -> Option<usize> {
        self.slots.get(&(round, source)).copied()
    }

    pub fn has_slot(&self, source: PeerId, round: Round) -> bool {
        self.slots.contains_key(&(round, source))
    }

    fn index_of(&self, r: &VertexRef) -> Option<usize> {
        self.slots
            .get(&(r.round, r.source))
            .copied()
            .filter(|&i| self.nodes[i].reference.digest == r.digest)
    }

    fn require(&self, r: &VertexRef) -> Result<usize, DagError> {
        self.index_of(r).ok_or(DagError::Unknown(*r))
    }

    /// Parents of `v` that are not stored.
    pub fn missing_parents(&self, v: &Vertex) -> Vec<VertexRef> {
        v.parents().filter(|p| !self.contains(p)).copied().collect()
    }

    /// Stores `v`. Every parent must already be present with a matching
    /// digest, so containment holds after every successful call.
    pub fn insert(&mut self, v: Vertex) -> Result<VertexRef, DagError> {
        let reference = v.reference();
        if let Some(&i) = self.slots.get(&(v.round, v.source)) {
            return Err(if self.nodes[i].reference.digest == reference.digest {
                DagError::Duplicate(reference)
            } else {
                DagError::Conflict(reference)
            });
        }
        let idx = self.nodes.len();
        let mut ancestors = FixedBitSet::with_capacity(idx + 1);
        let mut strong = FixedBitSet::with_capacity(idx + 1);
        for e in &v.strong_edges {
            let p = self.index_of(&e.target).ok_or(DagError::MissingParent(e.target))?;
            ancestors.union_with(&self.nodes[p].ancestors);
            strong.union_with(&self.nodes[p].strong);
        }
        for e in &v.weak_edges {
            let p = self.index_of(&e.target).ok_or(DagError::MissingParent(e.target))?;
            ancestors.union_with(&self.nodes[p].ancestors);
        }
        ancestors.grow(idx + 1);
        strong.grow(idx + 1);
        ancestors.insert(idx);
        strong.insert(idx);
        self.slots.insert((v.round, v.source), idx);
        self.nodes.push(Node { vertex: v, reference, ancestors, strong });
        Ok(reference)
    }

    /// Reachability from `from` to `to` over all edges. Reflexive.
    pub fn path(&self, from: &VertexRef, to: &VertexRef) -> Result<bool, DagError> {
        let (a, b) = (self.require(from)?, self.require(to)?);
        Ok(self.nodes[a].ancestors.contains(b))
    }

    /// Reachability from `from` to `to` over strong edges only. Reflexive.
    pub fn strong_path(&self, from: &VertexRef, to: &VertexRef) -> Result<bool, DagError> {
        let (a, b) = (self.require(from)?, self.require(to)?);
        Ok(self.nodes[a].strong.contains(b))
    }

    /// Every non-genesis vertex that `v` causally depends on, excluding `v`,
    /// sorted by (round, source).
    pub fn read_causal(&self, v: &VertexRef) -> Result<Vec<VertexRef>, DagError> {
        let i = self.require(v)?;
        let mut out: Vec<VertexRef> = self.nodes[i]
            .ancestors
            .ones()
            .filter(|&j| j != i)
            .map(|j| self.nodes[j].reference)
            .filter(|r| r.round > 0)
            .collect();
        out.sort();
        Ok(out)
    }

    /// Union of the ancestor sets of `refs`, for excluding already-covered
    /// vertices when choosing weak edges.
    pub fn covered_by<'a>(&self, refs: impl IntoIterator<Item = &'a VertexRef>) -> FixedBitSet {
        let mut acc = FixedBitSet::with_capacity(self.nodes.len());
        for r in refs {
            if let Some(i) = self.index_of(r) {
                acc.union_with(&self.nodes[i].ancestors);
            }
        }
        acc
    }

    /// Whether the vertex in `slot` is inside a bitset from [`Self::covered_by`].
    pub fn is_covered(&self, covered: &FixedBitSet, source: PeerId, round: Round) -> bool {
        self.slots.get(&(round, source)).is_some_and(|&i| covered.contains(i))
    }

    pub fn round_len(&self, round: Round) -> usize {
        self.round_refs(round).count()
    }

    /// Vertices of one round in source order.
    pub fn round_vertices(&self, round: Round) -> impl Iterator<Item = &Vertex> + '_ {
        self.slots
            .range((round, PeerId(0))..=(round, PeerId(u16::MAX)))
            .map(|(_, &i)| &self.nodes[i].vertex)
    }

    pub fn round_refs(&self, round: Round) -> impl Iterator<Item = VertexRef> + '_ {
        self.slots
            .range((round, PeerId(0))..=(round, PeerId(u16::MAX)))
            .map(|(_, &i)| self.nodes[i].reference)
    }

    pub fn max_round(&self) -> Round {
        self.slots.keys().next_back().map_or(0, |&(r, _)| r)
    }

    /// All stored vertices in admission order.
    pub fn vertices(&self) -> impl Iterator<Item = &Vertex> + '_ {
        self.nodes.iter().map(|n| &n.vertex)
    }

    /// References of all non-genesis vertices, sorted.
    pub fn references(&self) -> Vec<VertexRef> {
        let mut out: Vec<VertexRef> =
            self.nodes.iter().map(|n| n.reference).filter(|r| r.round > 0).collect();
        out.sort();
        out
    }

    /// Full containment scan: every parent of every vertex is stored.
    pub fn check_containment(&self) -> Result<(), DagError> {
        for node in &self.nodes {
            if let Some(p) = node.vertex.parents().find(|p| !self.contains(p)) {
                return Err(DagError::MissingParent(*p));
            }
        }
        Ok(())
    }

    /// Writes one line per edge:
    /// `child_source,child_round -> parent_source,parent_round,kind`.
    pub fn write_edge_list<W: Write>(&self, mut w: W) -> io::Result<()> {
        for (&(round, source), &i) in &self.slots {
            let v = &self.nodes[i].vertex;
            for (kind, edges) in [("strong", &v.strong_edges), ("weak", &v.weak_edges)] {
                for e in edges {
                    writeln!(w, "{source},{round} -> {},{},{kind}", e.target.source, e.target.round)?;
                }
            }
        }
        Ok(())
    }
}
