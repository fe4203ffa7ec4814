//! Wire envelope shared by both backends.
//!
//! Every envelope is `{version, sender, body}` serialized canonically; its
//! byte size is the size of that encoding. Signed statements are digests of
//! tagged tuples so that no two message kinds can share a signature.

use serde::{Deserialize, Serialize};

use crate::codec::{digest_of, encoded_len, Digest, PublicKey, QuorumCert, Signature};
use crate::types::{PeerId, Round, Vertex};

pub const WIRE_VERSION: u8 = 1;

/// One Reed-Solomon fragment of a dispersed vertex, signed by the source
/// enclave.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Share {
    pub index: u32,
    pub data: Vec<u8>,
    pub source: PeerId,
    pub round: Round,
    pub sig: Signature,
}

impl Share {
    pub fn subject(&self) -> Digest {
        share_subject(&self.data, self.index, self.source, self.round)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Message {
    Key { public: PublicKey },
    Echo { peer: PeerId, public: PublicKey, sig: Signature },
    Vertex { vertex: Vertex, vertex_sig: Signature, share: Share },
    Share { share: Share, digest: Digest, relayer_sig: Signature },
    Ack { source: PeerId, round: Round, share_sig: Signature },
    Request { source: PeerId, round: Round },
    Relay { vertex: Vertex, vertex_sig: Signature },
    Timeout { target: PeerId, round: Round, sig: Signature },
    KeyRequest { peer: PeerId },
    KeyResponse { peer: PeerId, public: PublicKey, cert: QuorumCert },
    PullVertex { vertex: Vertex, sig: Signature },
    Vote { source: PeerId, round: Round, digest: Digest, sig: Signature },
    PullRequest { source: PeerId, round: Round, digest: Digest, cert: QuorumCert },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MessageKind {
    Key,
    Echo,
    Vertex,
    Share,
    Ack,
    Request,
    Relay,
    Timeout,
    KeyRequest,
    KeyResponse,
    PullVertex,
    Vote,
    PullRequest,
}

impl MessageKind {
    pub fn tag(self) -> &'static str {
        match self {
            MessageKind::Key => "key",
            MessageKind::Echo => "echo",
            MessageKind::Vertex => "vertex",
            MessageKind::Share => "share",
            MessageKind::Ack => "ack",
            MessageKind::Request => "request",
            MessageKind::Relay => "relay",
            MessageKind::Timeout => "timeout",
            MessageKind::KeyRequest => "key_request",
            MessageKind::KeyResponse => "key_response",
            MessageKind::PullVertex => "pull_vertex",
            MessageKind::Vote => "vote",
            MessageKind::PullRequest => "pull_request",
        }
    }
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        match self {
            Message::Key { .. } => MessageKind::Key,
            Message::Echo { .. } => MessageKind::Echo,
            Message::Vertex { .. } => MessageKind::Vertex,
            Message::Share { .. } => MessageKind::Share,
            Message::Ack { .. } => MessageKind::Ack,
            Message::Request { .. } => MessageKind::Request,
            Message::Relay { .. } => MessageKind::Relay,
            Message::Timeout { .. } => MessageKind::Timeout,
            Message::KeyRequest { .. } => MessageKind::KeyRequest,
            Message::KeyResponse { .. } => MessageKind::KeyResponse,
            Message::PullVertex { .. } => MessageKind::PullVertex,
            Message::Vote { .. } => MessageKind::Vote,
            Message::PullRequest { .. } => MessageKind::PullRequest,
        }
    }

    /// The vertex lifecycle this message is accounted to, if any. Setup
    /// traffic (keys, echoes, key pulls) belongs to no vertex.
    pub fn vertex_slot(&self) -> Option<(PeerId, Round)> {
        match self {
            Message::Vertex { vertex, .. }
            | Message::Relay { vertex, .. }
            | Message::PullVertex { vertex, .. } => Some((vertex.source, vertex.round)),
            Message::Share { share, .. } => Some((share.source, share.round)),
            Message::Ack { source, round, .. }
            | Message::Request { source, round }
            | Message::Vote { source, round, .. }
            | Message::PullRequest { source, round, .. } => Some((*source, *round)),
            Message::Timeout { target, round, .. } => Some((*target, *round)),
            Message::Key { .. }
            | Message::Echo { .. }
            | Message::KeyRequest { .. }
            | Message::KeyResponse { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Envelope {
    pub version: u8,
    pub sender: PeerId,
    pub body: Message,
}

impl Envelope {
    pub fn new(sender: PeerId, body: Message) -> Self {
        Envelope { version: WIRE_VERSION, sender, body }
    }

    pub fn size(&self) -> u64 {
        encoded_len(self)
    }
}

pub fn echo_subject(peer: PeerId, public: &PublicKey) -> Digest {
    digest_of(&("echo", peer, public))
}

pub fn vertex_subject(digest: &Digest) -> Digest {
    digest_of(&("vertex", digest))
}

pub fn share_subject(data: &[u8], index: u32, source: PeerId, round: Round) -> Digest {
    digest_of(&("share", data, index, source, round))
}

pub fn share_cert_subject(digest: &Digest, source: PeerId, round: Round) -> Digest {
    digest_of(&("share-cert", digest, source, round))
}

pub fn timeout_subject(target: PeerId, round: Round) -> Digest {
    digest_of(&("timeout", target, round))
}

pub fn vote_subject(digest: &Digest, source: PeerId, round: Round) -> Digest {
    digest_of(&("vote", digest, source, round))
}

pub fn pull_vertex_subject(digest: &Digest) -> Digest {
    digest_of(&("pull-vertex", digest))
}
