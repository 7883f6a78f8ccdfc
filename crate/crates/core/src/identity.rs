//! Self-certifying node identifiers.
//!
//! A [`NodeId`] is the leading `L` bits of the SHA-256 digest of a node's
//! public key. Anyone holding the public key can recompute the identifier,
//! and only the holder of the matching private key can answer a challenge
//! for it, so ownership is provable without any authority.

use std::cmp::Ordering;
use std::fmt;

use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Largest supported identifier width in bits.
pub const MAX_ID_BITS: u16 = 256;
/// Smallest width accepted for generated identities.
pub const MIN_GENERATED_ID_BITS: u16 = 8;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IdentityError {
    #[error("identifier width {0} out of range [{MIN_GENERATED_ID_BITS}, {MAX_ID_BITS}]")]
    WidthOutOfRange(u16),
    #[error("identifier width {0} out of range [1, {MAX_ID_BITS}]")]
    BadWidth(u16),
    #[error("identifier widths differ: {0} vs {1}")]
    WidthMismatch(u16, u16),
    #[error("malformed identifier: {0}")]
    Malformed(String),
}

/// A fixed-width bit string, most significant bit first.
///
/// Bits past `len` are always zero, so equality and ordering over the raw
/// bytes agree with equality and numeric ordering of the bit string.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId {
    bytes: [u8; 32],
    len: u16,
}

impl NodeId {
    /// Builds an identifier from the leading `len` bits of `bytes`.
    pub fn from_bytes(bytes: &[u8], len: u16) -> Result<Self, IdentityError> {
        if len == 0 || len > MAX_ID_BITS {
            return Err(IdentityError::BadWidth(len));
        }
        let nbytes = (len as usize).div_ceil(8);
        if bytes.len() < nbytes {
            return Err(IdentityError::Malformed(format!(
                "need {nbytes} bytes for {len} bits, got {}",
                bytes.len()
            )));
        }
        let mut out = [0u8; 32];
        out[..nbytes].copy_from_slice(&bytes[..nbytes]);
        mask_tail(&mut out, len);
        Ok(NodeId { bytes: out, len })
    }

    /// Parses a string of `0`/`1` characters, e.g. `"1011"`.
    pub fn from_bit_str(bits: &str) -> Result<Self, IdentityError> {
        let len = u16::try_from(bits.len()).map_err(|_| IdentityError::BadWidth(u16::MAX))?;
        if len == 0 || len > MAX_ID_BITS {
            return Err(IdentityError::BadWidth(len));
        }
        let mut out = [0u8; 32];
        for (i, c) in bits.chars().enumerate() {
            match c {
                '0' => {}
                '1' => out[i / 8] |= 0x80 >> (i % 8),
                other => {
                    return Err(IdentityError::Malformed(format!("unexpected character {other:?}")))
                }
            }
        }
        Ok(NodeId { bytes: out, len })
    }

    /// Builds an identifier whose value is `value` right-aligned in `len` bits.
    pub fn from_u64(value: u64, len: u16) -> Result<Self, IdentityError> {
        if len == 0 || len > 64 {
            return Err(IdentityError::BadWidth(len));
        }
        if len < 64 && value >> len != 0 {
            return Err(IdentityError::Malformed(format!("{value} does not fit in {len} bits")));
        }
        let shifted = if len == 64 { value } else { value << (64 - len) };
        NodeId::from_bytes(&shifted.to_be_bytes(), len)
    }

    /// Parses the hex form produced by [`NodeId::to_hex`]: `ceil(len / 4)`
    /// nibbles, most significant first, with zero padding bits.
    pub fn from_hex(s: &str, len: u16) -> Result<Self, IdentityError> {
        if len == 0 || len > MAX_ID_BITS {
            return Err(IdentityError::BadWidth(len));
        }
        let nibbles = (len as usize).div_ceil(4);
        if s.len() != nibbles {
            return Err(IdentityError::Malformed(format!(
                "expected {nibbles} hex digits for {len} bits, got {}",
                s.len()
            )));
        }
        let mut out = [0u8; 32];
        for (i, c) in s.chars().enumerate() {
            let v = c
                .to_digit(16)
                .ok_or_else(|| IdentityError::Malformed(format!("not a hex digit: {c:?}")))?
                as u8;
            out[i / 2] |= if i % 2 == 0 { v << 4 } else { v };
        }
        let id = NodeId { bytes: out, len };
        let mut masked = out;
        mask_tail(&mut masked, len);
        if masked != out {
            return Err(IdentityError::Malformed("nonzero padding bits".into()));
        }
        Ok(id)
    }

    pub fn to_hex(&self) -> String {
        let nibbles = (self.len as usize).div_ceil(4);
        let full = hex::encode(&self.bytes[..nibbles.div_ceil(2)]);
        full[..nibbles].to_string()
    }

    pub fn bit_len(&self) -> u16 {
        self.len
    }

    /// Bit `i`, counting from the most significant.
    pub fn bit(&self, i: u16) -> bool {
        assert!(i < self.len, "bit {i} out of range for width {}", self.len);
        self.bytes[i as usize / 8] & (0x80 >> (i % 8)) != 0
    }

    /// Copy of this identifier with bit `i` inverted.
    pub fn with_bit_flipped(&self, i: u16) -> NodeId {
        assert!(i < self.len);
        let mut out = *self;
        out.bytes[i as usize / 8] ^= 0x80 >> (i % 8);
        out
    }

    /// Keeps the first `prefix` bits of `self` and takes the rest from `tail`.
    pub fn splice(&self, prefix: u16, tail: &NodeId) -> NodeId {
        assert_eq!(self.len, tail.len);
        let mut out = *tail;
        for i in 0..prefix.min(self.len) {
            let byte = i as usize / 8;
            let mask = 0x80 >> (i % 8);
            out.bytes[byte] = (out.bytes[byte] & !mask) | (self.bytes[byte] & mask);
        }
        out
    }

    pub fn bits_string(&self) -> String {
        (0..self.len).map(|i| if self.bit(i) { '1' } else { '0' }).collect()
    }

    /// Numeric comparison; identifiers of different width order by width.
    pub fn cmp_numeric(&self, other: &NodeId) -> Ordering {
        self.len.cmp(&other.len).then_with(|| self.bytes.cmp(&other.bytes))
    }
}

impl PartialOrd for NodeId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for NodeId {
    fn cmp(&self, other: &Self) -> Ordering {
        self.cmp_numeric(other)
    }
}

impl fmt::Debug for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.len < 16 {
            write!(f, "NodeId({})", self.bits_string())
        } else {
            write!(f, "NodeId({})", self.to_hex())
        }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for NodeId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{}:{}", self.len, self.to_hex()))
    }
}

impl<'de> Deserialize<'de> for NodeId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl std::str::FromStr for NodeId {
    type Err = IdentityError;

    /// Parses `"<bits>:<hex>"`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (len, hex) = s
            .split_once(':')
            .ok_or_else(|| IdentityError::Malformed("expected <bits>:<hex>".into()))?;
        let len: u16 = len
            .parse()
            .map_err(|_| IdentityError::Malformed(format!("bad width {len:?}")))?;
        NodeId::from_hex(hex, len)
    }
}

fn mask_tail(bytes: &mut [u8; 32], len: u16) {
    let len = len as usize;
    for (i, b) in bytes.iter_mut().enumerate() {
        let start = i * 8;
        if start >= len {
            *b = 0;
        } else if start + 8 > len {
            *b &= 0xFFu8 << (8 - (len - start));
        }
    }
}

/// Length of the longest common prefix of `a` and `b`.
pub fn proximity(a: &NodeId, b: &NodeId) -> Result<u16, IdentityError> {
    if a.len != b.len {
        return Err(IdentityError::WidthMismatch(a.len, b.len));
    }
    Ok(common_prefix_len(a, b))
}

/// Unchecked form of [`proximity`] for callers that already guarantee equal
/// widths (all identifiers of one world share a width).
pub fn common_prefix_len(a: &NodeId, b: &NodeId) -> u16 {
    debug_assert_eq!(a.len, b.len);
    let mut bits = 0u16;
    for (x, y) in a.bytes.iter().zip(b.bytes.iter()) {
        let d = x ^ y;
        if d != 0 {
            bits += d.leading_zeros() as u16;
            return bits.min(a.len);
        }
        bits += 8;
        if bits >= a.len {
            break;
        }
    }
    a.len
}

/// `SHA-256(public_key)` truncated to `bits`.
pub fn id_from_public_key(public_key: &[u8], bits: u16) -> Result<NodeId, IdentityError> {
    let digest = Sha256::digest(public_key);
    NodeId::from_bytes(&digest, bits)
}

/// A signature scheme used to prove identifier ownership.
pub trait SignatureScheme {
    /// Derives a key pair from 32 bytes of seed material.
    fn keypair_from_seed(&self, seed: &[u8; 32]) -> (Vec<u8>, Vec<u8>);
    fn sign(&self, private_key: &[u8], message: &[u8]) -> Vec<u8>;
    /// Must be total: malformed keys or signatures yield `false`.
    fn verify(&self, public_key: &[u8], message: &[u8], signature: &[u8]) -> bool;
}

/// Ed25519 via `ed25519-dalek`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Ed25519;

impl SignatureScheme for Ed25519 {
    fn keypair_from_seed(&self, seed: &[u8; 32]) -> (Vec<u8>, Vec<u8>) {
        let sk = SigningKey::from_bytes(seed);
        (sk.verifying_key().to_bytes().to_vec(), sk.to_bytes().to_vec())
    }

    fn sign(&self, private_key: &[u8], message: &[u8]) -> Vec<u8> {
        let bytes: [u8; 32] = private_key
            .try_into()
            .expect("ed25519 private keys are 32 bytes");
        SigningKey::from_bytes(&bytes).sign(message).to_bytes().to_vec()
    }

    fn verify(&self, public_key: &[u8], message: &[u8], signature: &[u8]) -> bool {
        let Ok(pk): Result<[u8; 32], _> = public_key.try_into() else {
            return false;
        };
        let Ok(vk) = VerifyingKey::from_bytes(&pk) else {
            return false;
        };
        let Ok(sig) = ed25519_dalek::Signature::from_slice(signature) else {
            return false;
        };
        vk.verify(message, &sig).is_ok()
    }
}

#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentityKeyPair {
    #[serde(with = "hex::serde")]
    pub public_key: Vec<u8>,
    #[serde(with = "hex::serde")]
    pub private_key: Vec<u8>,
    pub node_id: NodeId,
}

impl fmt::Debug for IdentityKeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("IdentityKeyPair")
            .field("public_key", &hex::encode(&self.public_key))
            .field("node_id", &self.node_id)
            .finish_non_exhaustive()
    }
}

impl IdentityKeyPair {
    /// Answers `challenge` with a proof of ownership of `node_id`.
    pub fn prove(&self, challenge: &[u8]) -> IdentityProof {
        self.prove_with(&Ed25519, challenge)
    }

    pub fn prove_with<S: SignatureScheme>(&self, scheme: &S, challenge: &[u8]) -> IdentityProof {
        IdentityProof {
            public_key: self.public_key.clone(),
            challenge: challenge.to_vec(),
            signature: scheme.sign(&self.private_key, challenge),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentityProof {
    #[serde(with = "hex::serde")]
    pub public_key: Vec<u8>,
    #[serde(with = "hex::serde")]
    pub challenge: Vec<u8>,
    #[serde(with = "hex::serde")]
    pub signature: Vec<u8>,
}

impl IdentityProof {
    /// Wire form: three length-prefixed (u16 big-endian) byte strings.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for part in [&self.public_key, &self.challenge, &self.signature] {
            out.extend_from_slice(&(part.len() as u16).to_be_bytes());
            out.extend_from_slice(part);
        }
        out
    }

    pub fn decode(mut data: &[u8]) -> Option<IdentityProof> {
        let mut parts = Vec::with_capacity(3);
        for _ in 0..3 {
            if data.len() < 2 {
                return None;
            }
            let n = u16::from_be_bytes([data[0], data[1]]) as usize;
            data = &data[2..];
            if data.len() < n {
                return None;
            }
            parts.push(data[..n].to_vec());
            data = &data[n..];
        }
        if !data.is_empty() {
            return None;
        }
        let signature = parts.pop()?;
        let challenge = parts.pop()?;
        let public_key = parts.pop()?;
        Some(IdentityProof { public_key, challenge, signature })
    }
}

/// Deterministically derives a key pair and its `bits`-wide identifier from
/// `seed`.
pub fn generate_identity(seed: u64, bits: u16) -> Result<IdentityKeyPair, IdentityError> {
    generate_identity_with(&Ed25519, seed, bits)
}

pub fn generate_identity_with<S: SignatureScheme>(
    scheme: &S,
    seed: u64,
    bits: u16,
) -> Result<IdentityKeyPair, IdentityError> {
    if !(MIN_GENERATED_ID_BITS..=MAX_ID_BITS).contains(&bits) {
        return Err(IdentityError::WidthOutOfRange(bits));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut secret = [0u8; 32];
    rng.fill_bytes(&mut secret);
    let (public_key, private_key) = scheme.keypair_from_seed(&secret);
    let node_id = id_from_public_key(&public_key, bits)?;
    Ok(IdentityKeyPair { public_key, private_key, node_id })
}

/// True iff `proof` is signed by the key that hashes to `claimed`.
pub fn verify_identity_proof(claimed: &NodeId, proof: &IdentityProof) -> bool {
    verify_identity_proof_with(&Ed25519, claimed, proof)
}

pub fn verify_identity_proof_with<S: SignatureScheme>(
    scheme: &S,
    claimed: &NodeId,
    proof: &IdentityProof,
) -> bool {
    match id_from_public_key(&proof.public_key, claimed.bit_len()) {
        Ok(id) if id == *claimed => {}
        _ => return false,
    }
    scheme.verify(&proof.public_key, &proof.challenge, &proof.signature)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(bits: &str) -> NodeId {
        NodeId::from_bit_str(bits).unwrap()
    }

    #[test]
    fn lcp_examples() {
        assert_eq!(proximity(&id("1011"), &id("1001")).unwrap(), 2);
        assert_eq!(proximity(&id("1011"), &id("0011")).unwrap(), 0);
        assert_eq!(proximity(&id("1011"), &id("1011")).unwrap(), 4);
    }

    #[test]
    fn proximity_rejects_mixed_widths() {
        assert_eq!(
            proximity(&id("1011"), &id("10110")),
            Err(IdentityError::WidthMismatch(4, 5))
        );
    }

    #[test]
    fn proximity_crosses_byte_boundaries() {
        let a = NodeId::from_u64(0xFFFF_0000_0000_0000, 64).unwrap();
        let b = NodeId::from_u64(0xFFFE_0000_0000_0000, 64).unwrap();
        assert_eq!(proximity(&a, &b).unwrap(), 15);
        let c = id("1111111100");
        let d = id("1111111101");
        assert_eq!(proximity(&c, &d).unwrap(), 9);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_identity(42, 64).unwrap();
        let b = generate_identity(42, 64).unwrap();
        assert_eq!(a, b);
        let c = generate_identity(43, 64).unwrap();
        assert_ne!(a.node_id, c.node_id);
    }

    #[test]
    fn generation_checks_width() {
        assert_eq!(generate_identity(1, 7), Err(IdentityError::WidthOutOfRange(7)));
        assert_eq!(generate_identity(1, 257), Err(IdentityError::WidthOutOfRange(257)));
        assert!(generate_identity(1, 8).is_ok());
        assert!(generate_identity(1, 256).is_ok());
    }

    #[test]
    fn node_id_is_truncated_hash() {
        let kp = generate_identity(9, 20).unwrap();
        let digest = Sha256::digest(&kp.public_key);
        let full = NodeId::from_bytes(&digest, 256).unwrap();
        for i in 0..20 {
            assert_eq!(kp.node_id.bit(i), full.bit(i));
        }
    }

    #[test]
    fn proofs_round_trip_and_reject_cross_presentation() {
        let a = generate_identity(1, 64).unwrap();
        let b = generate_identity(2, 64).unwrap();
        let proof = a.prove(b"nonce-1");
        assert!(verify_identity_proof(&a.node_id, &proof));
        assert!(!verify_identity_proof(&b.node_id, &proof));

        let mut flipped = proof.clone();
        flipped.signature[0] ^= 1;
        assert!(!verify_identity_proof(&a.node_id, &flipped));
    }

    #[test]
    fn malformed_proofs_are_rejected_not_panicking() {
        let a = generate_identity(1, 64).unwrap();
        let empty = IdentityProof { public_key: vec![], challenge: vec![], signature: vec![] };
        assert!(!verify_identity_proof(&a.node_id, &empty));
        let mut short = a.prove(b"x");
        short.signature.truncate(10);
        assert!(!verify_identity_proof(&a.node_id, &short));
    }

    #[test]
    fn hex_round_trip_and_padding() {
        let x = id("1011011");
        assert_eq!(x.to_hex(), "b6");
        assert_eq!(NodeId::from_hex("b6", 7).unwrap(), x);
        assert!(NodeId::from_hex("b7", 7).is_err());
        assert!(NodeId::from_hex("b", 7).is_err());
        let y = id("10110");
        assert_eq!(y.to_hex(), "b0");
        let parsed: NodeId = "5:b0".parse().unwrap();
        assert_eq!(parsed, y);
    }

    #[test]
    fn proof_wire_form() {
        let a = generate_identity(5, 32).unwrap();
        let p = a.prove(b"hello");
        assert_eq!(IdentityProof::decode(&p.encode()), Some(p.clone()));
        let mut bytes = p.encode();
        bytes.push(0);
        assert_eq!(IdentityProof::decode(&bytes), None);
    }

    #[test]
    fn numeric_order_follows_bits() {
        assert!(id("0111") < id("1000"));
        assert!(id("1001") < id("1010"));
    }
}
