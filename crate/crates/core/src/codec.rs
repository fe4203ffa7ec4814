//! Digests, signatures for both key domains, Reed-Solomon dispersal codes and
//! quorum certificates.
//!
//! Everything here is a pure function of its inputs. Canonical serialization is
//! bincode's default layout: little-endian fixed-width integers and `u64`
//! length prefixes for every variable-length field.

use std::collections::BTreeSet;
use std::fmt;

use rand::RngCore;
use reed_solomon_erasure::galois_8::ReedSolomon;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256, Sha512};
use thiserror::Error;

use crate::types::PeerId;

/// Width of a signature in bytes for every supported scheme.
pub const SIGNATURE_LEN: usize = 64;

/// Serializes a value with the canonical wire layout.
pub fn encode<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    bincode::serialize(value).expect("in-memory serialization cannot fail")
}

/// Length of the canonical encoding without materializing it.
pub fn encoded_len<T: Serialize + ?Sized>(value: &T) -> u64 {
    bincode::serialized_size(value).expect("in-memory serialization cannot fail")
}

pub fn decode<T: for<'de> Deserialize<'de>>(bytes: &[u8]) -> Result<T, CodecError> {
    bincode::deserialize(bytes).map_err(|e| CodecError::Malformed(e.to_string()))
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn short(&self) -> String {
        self.0[..4].iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.short())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

/// SHA-256 of `payload`.
pub fn digest(payload: &[u8]) -> Digest {
    Digest(Sha256::digest(payload).into())
}

/// Digest of the canonical encoding of `value`.
pub fn digest_of<T: Serialize + ?Sized>(value: &T) -> Digest {
    digest(&encode(value))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeKind {
    Ed25519,
    /// Keyed SHA-512 stand-in. Cheap, deterministic, and only as unforgeable
    /// as the simulation model makes it: adversaries never get a signing
    /// handle for keys they do not own.
    SimMac,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KeyDomain {
    SecureWorld,
    NormalWorld,
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PublicKey {
    pub scheme: SchemeKind,
    pub bytes: [u8; 32],
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let hex: String = self.bytes[..4].iter().map(|b| format!("{b:02x}")).collect();
        write!(f, "PublicKey({:?}:{hex})", self.scheme)
    }
}

#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Signature {
    pub signer: PeerId,
    pub bytes: Vec<u8>,
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let hex: String = self.bytes.iter().take(4).map(|b| format!("{b:02x}")).collect();
        write!(f, "Signature({:?}:{hex})", self.signer)
    }
}

/// A signing key and its verification key. The secret half has no accessor
/// and is skipped by `Debug`.
#[derive(Clone)]
pub struct KeyPair {
    secret: [u8; 32],
    public: PublicKey,
    domain: KeyDomain,
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("public", &self.public)
            .field("domain", &self.domain)
            .finish_non_exhaustive()
    }
}

impl KeyPair {
    pub fn public(&self) -> PublicKey {
        self.public
    }

    pub fn domain(&self) -> KeyDomain {
        self.domain
    }

    fn from_secret(secret: [u8; 32], scheme: SchemeKind, domain: KeyDomain) -> Self {
        let bytes = match scheme {
            SchemeKind::Ed25519 => ed25519_dalek::SigningKey::from_bytes(&secret)
                .verifying_key()
                .to_bytes(),
            SchemeKind::SimMac => {
                let mut h = Sha256::new();
                h.update(b"rorqual-sim-public");
                h.update(secret);
                h.finalize().into()
            }
        };
        KeyPair {
            secret,
            public: PublicKey { scheme, bytes },
            domain,
        }
    }
}

/// Draws a fresh key pair from `entropy`.
pub fn keygen<R: RngCore + ?Sized>(entropy: &mut R, scheme: SchemeKind, domain: KeyDomain) -> KeyPair {
    let mut secret = [0u8; 32];
    entropy.fill_bytes(&mut secret);
    KeyPair::from_secret(secret, scheme, domain)
}

fn sim_mac(public: &PublicKey, msg: &[u8]) -> Vec<u8> {
    let mut h = Sha512::new();
    h.update(b"rorqual-sim-sig");
    h.update(public.bytes);
    h.update((msg.len() as u64).to_le_bytes());
    h.update(msg);
    h.finalize().to_vec()
}

pub fn sign(msg: &[u8], key: &KeyPair, signer: PeerId) -> Signature {
    let bytes = match key.public.scheme {
        SchemeKind::Ed25519 => {
            use ed25519_dalek::Signer;
            let sk = ed25519_dalek::SigningKey::from_bytes(&key.secret);
            sk.sign(msg).to_bytes().to_vec()
        }
        SchemeKind::SimMac => sim_mac(&key.public, msg),
    };
    Signature { signer, bytes }
}

/// Never panics: malformed keys or signature bytes simply fail verification.
pub fn verify(msg: &[u8], sig: &Signature, public: &PublicKey) -> bool {
    if sig.bytes.len() != SIGNATURE_LEN {
        return false;
    }
    match public.scheme {
        SchemeKind::Ed25519 => {
            let Ok(vk) = ed25519_dalek::VerifyingKey::from_bytes(&public.bytes) else {
                return false;
            };
            let mut raw = [0u8; SIGNATURE_LEN];
            raw.copy_from_slice(&sig.bytes);
            let s = ed25519_dalek::Signature::from_bytes(&raw);
            vk.verify_strict(msg, &s).is_ok()
        }
        SchemeKind::SimMac => sim_mac(public, msg) == sig.bytes,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("invalid coding parameters n={n} k={k}")]
    Parameters { n: usize, k: usize },
    #[error("cannot encode an empty payload")]
    EmptyPayload,
    #[error("need {needed} shares, have {have}")]
    InsufficientShares { needed: usize, have: usize },
    #[error("share index {0} out of range")]
    BadIndex(usize),
    #[error("shares are not from a single codeword")]
    Integrity,
    #[error("malformed encoding: {0}")]
    Malformed(String),
}

fn check_params(n: usize, k: usize) -> Result<(), CodecError> {
    if k == 0 || n == 0 || k > n || n > 256 {
        return Err(CodecError::Parameters { n, k });
    }
    Ok(())
}

/// Splits `payload` into `n` fragments, any `k` of which recover it.
///
/// The code is systematic: fragments `0..k` are the length-prefixed, zero
/// padded payload cut into equal chunks.
pub fn rs_encode(payload: &[u8], n: usize, k: usize) -> Result<Vec<Vec<u8>>, CodecError> {
    check_params(n, k)?;
    if payload.is_empty() {
        return Err(CodecError::EmptyPayload);
    }
    let mut framed = Vec::with_capacity(payload.len() + 8);
    framed.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    framed.extend_from_slice(payload);
    let chunk = framed.len().div_ceil(k);
    framed.resize(chunk * k, 0);
    let mut shards: Vec<Vec<u8>> = framed.chunks(chunk).map(<[u8]>::to_vec).collect();
    shards.resize(n, vec![0u8; chunk]);
    if n > k {
        let rs = ReedSolomon::new(k, n - k).map_err(|_| CodecError::Parameters { n, k })?;
        rs.encode(&mut shards).map_err(|_| CodecError::Parameters { n, k })?;
    }
    Ok(shards)
}

/// Reassembles the payload from at least `k` indexed fragments.
///
/// Every supplied fragment is checked against the re-encoded codeword, so a
/// mix of fragments from different payloads yields [`CodecError::Integrity`].
pub fn rs_decode(shares: &[(usize, Vec<u8>)], n: usize, k: usize) -> Result<Vec<u8>, CodecError> {
    check_params(n, k)?;
    let mut slots: Vec<Option<Vec<u8>>> = vec![None; n];
    let mut width = None;
    for (index, data) in shares {
        if *index >= n {
            return Err(CodecError::BadIndex(*index));
        }
        match width {
            None => width = Some(data.len()),
            Some(w) if w != data.len() => return Err(CodecError::Integrity),
            _ => {}
        }
        slots[*index] = Some(data.clone());
    }
    let have = slots.iter().filter(|s| s.is_some()).count();
    if have < k {
        return Err(CodecError::InsufficientShares { needed: k, have });
    }
    let width = width.unwrap_or(0);
    if width == 0 {
        return Err(CodecError::Integrity);
    }
    let data: Vec<Vec<u8>> = if n > k {
        let rs = ReedSolomon::new(k, n - k).map_err(|_| CodecError::Parameters { n, k })?;
        let mut work = slots.clone();
        rs.reconstruct_data(&mut work).map_err(|_| CodecError::Integrity)?;
        work.into_iter().take(k).map(|s| s.expect("reconstructed")).collect()
    } else {
        slots.iter().take(k).map(|s| s.clone().expect("k == n needs all")).collect()
    };
    let framed: Vec<u8> = data.concat();
    if framed.len() < 8 {
        return Err(CodecError::Integrity);
    }
    let len = u64::from_le_bytes(framed[..8].try_into().expect("8 bytes")) as usize;
    if len == 0 || len > framed.len() - 8 {
        return Err(CodecError::Integrity);
    }
    let payload = framed[8..8 + len].to_vec();
    let recoded = rs_encode(&payload, n, k)?;
    for (index, data) in shares {
        if recoded[*index] != *data {
            return Err(CodecError::Integrity);
        }
    }
    Ok(payload)
}

/// `threshold` distinct signatures over `subject`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuorumCert {
    pub subject: Digest,
    pub threshold: u32,
    pub signatures: Vec<Signature>,
}

impl QuorumCert {
    pub fn signers(&self) -> impl Iterator<Item = PeerId> + '_ {
        self.signatures.iter().map(|s| s.signer)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CertError {
    #[error("{have} signatures below threshold {threshold}")]
    BelowThreshold { have: usize, threshold: usize },
    #[error("signer {0} appears twice")]
    DuplicateSigner(PeerId),
    #[error("signature from {0} does not verify")]
    BadSignature(PeerId),
    #[error("no public key for signer {0}")]
    UnknownSigner(PeerId),
}

/// Looks up verification keys by peer.
pub trait KeyLookup {
    fn key_of(&self, peer: PeerId) -> Option<PublicKey>;
}

impl KeyLookup for [PublicKey] {
    fn key_of(&self, peer: PeerId) -> Option<PublicKey> {
        self.get(peer.idx()).copied()
    }
}

impl KeyLookup for Vec<PublicKey> {
    fn key_of(&self, peer: PeerId) -> Option<PublicKey> {
        self.as_slice().key_of(peer)
    }
}

/// Builds a certificate, rejecting it if any signature is bad or repeated or
/// the set is too small. Errors name the offending signer.
pub fn assemble_cert<K: KeyLookup + ?Sized>(
    sigs: impl IntoIterator<Item = Signature>,
    subject: Digest,
    threshold: usize,
    keys: &K,
) -> Result<QuorumCert, CertError> {
    let mut seen = BTreeSet::new();
    let mut signatures = Vec::new();
    for sig in sigs {
        if !seen.insert(sig.signer) {
            return Err(CertError::DuplicateSigner(sig.signer));
        }
        let key = keys.key_of(sig.signer).ok_or(CertError::UnknownSigner(sig.signer))?;
        if !verify(subject.as_bytes(), &sig, &key) {
            return Err(CertError::BadSignature(sig.signer));
        }
        signatures.push(sig);
    }
    if signatures.len() < threshold {
        return Err(CertError::BelowThreshold { have: signatures.len(), threshold });
    }
    signatures.sort_by_key(|s| s.signer);
    Ok(QuorumCert { subject, threshold: threshold as u32, signatures })
}

/// Checks a received certificate against an expected subject and a minimum
/// threshold (the cert's own threshold field is not trusted).
pub fn verify_cert<K: KeyLookup + ?Sized>(
    cert: &QuorumCert,
    subject: Digest,
    threshold: usize,
    keys: &K,
) -> Result<(), CertError> {
    if cert.subject != subject {
        return Err(CertError::BelowThreshold { have: 0, threshold });
    }
    assemble_cert(cert.signatures.iter().cloned(), subject, threshold, keys).map(|_| ())
}
