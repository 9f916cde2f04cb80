//! Hashing, the signature scheme interface with its deterministic mock, and
//! the possession-proof challenge used for trail creation and member invites.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

/// Width of a digest, a public key and a challenge nonce.
pub const DIGEST_LEN: usize = 32;

/// Nonce length of a challenge.
pub const NONCE_LEN: usize = 32;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CryptoError {
    #[error("malformed private key: expected {DIGEST_LEN} bytes, got {0}")]
    MalformedKey(usize),
    #[error("public key {0} is not known to the key registry")]
    UnknownKey(PublicKey),
    #[error("invalid hex digest: {0}")]
    BadHex(String),
}

/// A sha256 output. Serialized everywhere as 64 lowercase hex characters.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest([u8; DIGEST_LEN]);

impl Digest {
    pub const ZERO: Digest = Digest([0; DIGEST_LEN]);

    pub fn from_bytes(bytes: [u8; DIGEST_LEN]) -> Self {
        Digest(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
        if s.len() != DIGEST_LEN * 2 || s.bytes().any(|b| b.is_ascii_uppercase()) {
            return Err(CryptoError::BadHex(s.to_string()));
        }
        let mut out = [0u8; DIGEST_LEN];
        hex::decode_to_slice(s, &mut out).map_err(|_| CryptoError::BadHex(s.to_string()))?;
        Ok(Digest(out))
    }

    /// First eight bytes as a little-endian integer, used to derive RNG seeds.
    pub fn low_u64(&self) -> u64 {
        u64::from_le_bytes(self.0[..8].try_into().expect("8 bytes"))
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

impl FromStr for Digest {
    type Err = CryptoError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Digest::from_hex(s)
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Digest::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// sha256 of `data`.
pub fn hash_bytes(data: &[u8]) -> Digest {
    Digest(Sha256::digest(data).into())
}

/// sha256 over the concatenation of `parts`.
pub fn hash_parts(parts: &[&[u8]]) -> Digest {
    let mut hasher = Sha256::new();
    for p in parts {
        hasher.update(p);
    }
    Digest(hasher.finalize().into())
}

/// Verification key. Same wire form as a [`Digest`].
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PublicKey(pub Digest);

impl fmt::Display for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", self.0.to_hex())
    }
}

/// Opaque secret key material. Well-formed keys are exactly 32 bytes.
#[derive(Clone, PartialEq, Eq)]
pub struct PrivateKey(Vec<u8>);

impl PrivateKey {
    pub fn from_bytes(bytes: impl Into<Vec<u8>>) -> Self {
        PrivateKey(bytes.into())
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    fn checked(&self) -> Result<&[u8], CryptoError> {
        if self.0.len() == DIGEST_LEN {
            Ok(&self.0)
        } else {
            Err(CryptoError::MalformedKey(self.0.len()))
        }
    }
}

impl fmt::Debug for PrivateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("PrivateKey(..)")
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyPair {
    pub private_key: PrivateKey,
    pub public_key: PublicKey,
}

impl KeyPair {
    /// Derives the public half from `private_key` (public = hash(private)).
    pub fn from_private(private_key: PrivateKey) -> Result<Self, CryptoError> {
        let public_key = derive_public_key(&private_key)?;
        Ok(KeyPair { private_key, public_key })
    }

    /// Simulation key for a named participant. Anyone who knows the name can
    /// rebuild it, which is what lets a stand-alone validator reconstruct the
    /// mock registry from a chain file.
    pub fn for_name(name: &str) -> Self {
        let sk = hash_parts(&[b"trailchain/mock-key/", name.as_bytes()]);
        KeyPair::from_private(PrivateKey::from_bytes(sk.as_bytes().to_vec())).expect("32-byte key")
    }

    /// Key drawn from a seeded stream.
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut sk = [0u8; DIGEST_LEN];
        rng.fill_bytes(&mut sk);
        KeyPair::from_private(PrivateKey::from_bytes(sk.to_vec())).expect("32-byte key")
    }
}

pub fn derive_public_key(private_key: &PrivateKey) -> Result<PublicKey, CryptoError> {
    Ok(PublicKey(hash_bytes(private_key.checked()?)))
}

/// A signature value plus a reference to the key that produced it.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Signature {
    #[serde(with = "hex_bytes")]
    pub bytes: Vec<u8>,
    pub signer: PublicKey,
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({} by {})", hex::encode(&self.bytes), self.signer)
    }
}

/// A puzzle only the holder of `target_public_key`'s private key can answer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Challenge {
    pub id: Digest,
    pub target_public_key: PublicKey,
    #[serde(with = "hex_bytes")]
    pub sealed_nonce: Vec<u8>,
    /// Hash of the plaintext nonce.
    pub commitment: Digest,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Solution {
    pub challenge_id: Digest,
    #[serde(with = "hex_bytes")]
    pub revealed_nonce: Vec<u8>,
}

/// Signing and sealing primitives. Implementations must be pure so they can
/// be shared across threads.
pub trait SignatureScheme: Send + Sync {
    fn sign(&self, message: &[u8], private_key: &PrivateKey) -> Result<Signature, CryptoError>;

    fn verify(&self, message: &[u8], signature: &Signature, public_key: &PublicKey) -> bool;

    /// Encrypts a nonce to `public_key`. `context` binds the ciphertext to one challenge.
    fn seal(&self, public_key: &PublicKey, nonce: &[u8; NONCE_LEN], context: &Digest) -> Result<Vec<u8>, CryptoError>;

    /// Inverse of [`seal`](Self::seal) for the matching private key. With any
    /// other key the output is unrelated bytes.
    fn unseal(&self, private_key: &PrivateKey, sealed: &[u8], context: &Digest) -> Result<Vec<u8>, CryptoError>;
}

/// Deterministic stand-in scheme for simulation.
///
/// `public = H(private)`, `signature = H(private || message)`. Since a hash
/// cannot be verified from its public half, verification re-derives the
/// signature through a registry of known keys, which only exists inside a
/// simulation. Sealing XORs the nonce with `H(H("shared" || private) || context)`.
#[derive(Clone, Debug, Default)]
pub struct MockScheme {
    keys: HashMap<PublicKey, PrivateKey>,
}

impl MockScheme {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, pair: &KeyPair) {
        self.keys.insert(pair.public_key, pair.private_key.clone());
    }

    pub fn with_keys<'a>(pairs: impl IntoIterator<Item = &'a KeyPair>) -> Self {
        let mut scheme = Self::new();
        for p in pairs {
            scheme.register(p);
        }
        scheme
    }

    /// Registry holding [`KeyPair::for_name`] for every name given.
    pub fn for_names<'a>(names: impl IntoIterator<Item = &'a str>) -> Self {
        let mut scheme = Self::new();
        for n in names {
            scheme.register(&KeyPair::for_name(n));
        }
        scheme
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    fn keystream(private_key: &[u8], context: &Digest) -> Digest {
        let shared = hash_parts(&[b"shared", private_key]);
        hash_parts(&[shared.as_bytes(), context.as_bytes()])
    }
}

impl SignatureScheme for MockScheme {
    fn sign(&self, message: &[u8], private_key: &PrivateKey) -> Result<Signature, CryptoError> {
        let sk = private_key.checked()?;
        Ok(Signature { bytes: hash_parts(&[sk, message]).as_bytes().to_vec(), signer: PublicKey(hash_bytes(sk)) })
    }

    fn verify(&self, message: &[u8], signature: &Signature, public_key: &PublicKey) -> bool {
        if signature.signer != *public_key {
            return false;
        }
        match self.keys.get(public_key) {
            Some(sk) => hash_parts(&[sk.as_bytes(), message]).as_bytes()[..] == signature.bytes[..],
            None => false,
        }
    }

    fn seal(&self, public_key: &PublicKey, nonce: &[u8; NONCE_LEN], context: &Digest) -> Result<Vec<u8>, CryptoError> {
        let sk = self.keys.get(public_key).ok_or(CryptoError::UnknownKey(*public_key))?;
        let ks = Self::keystream(sk.as_bytes(), context);
        Ok(nonce.iter().zip(ks.as_bytes()).map(|(a, b)| a ^ b).collect())
    }

    fn unseal(&self, private_key: &PrivateKey, sealed: &[u8], context: &Digest) -> Result<Vec<u8>, CryptoError> {
        let ks = Self::keystream(private_key.checked()?, context);
        Ok(sealed.iter().zip(ks.as_bytes().iter().cycle()).map(|(a, b)| a ^ b).collect())
    }
}

/// Builds a challenge for `target`. Same `(target, seed)` gives the same challenge.
pub fn make_challenge(
    scheme: &dyn SignatureScheme,
    target: &PublicKey,
    rng_seed: u64,
) -> Result<Challenge, CryptoError> {
    let mut rng = ChaCha20Rng::seed_from_u64(rng_seed);
    let mut nonce = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut nonce);
    let id = hash_parts(&[b"challenge", target.0.as_bytes(), &rng_seed.to_le_bytes()]);
    let sealed_nonce = scheme.seal(target, &nonce, &id)?;
    Ok(Challenge { id, target_public_key: *target, sealed_nonce, commitment: hash_bytes(&nonce) })
}

/// Answers a challenge. A key that does not match the target yields an
/// unverifiable solution rather than an error.
pub fn solve_challenge(
    scheme: &dyn SignatureScheme,
    challenge: &Challenge,
    private_key: &PrivateKey,
) -> Result<Solution, CryptoError> {
    let revealed_nonce = scheme.unseal(private_key, &challenge.sealed_nonce, &challenge.id)?;
    Ok(Solution { challenge_id: challenge.id, revealed_nonce })
}

pub fn verify_solution(challenge: &Challenge, solution: &Solution) -> bool {
    solution.challenge_id == challenge.id && hash_bytes(&solution.revealed_nonce) == challenge.commitment
}

pub(crate) mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(deserializer)?;
        if s.bytes().any(|b| b.is_ascii_uppercase()) {
            return Err(serde::de::Error::custom("hex must be lowercase"));
        }
        hex::decode(&s).map_err(serde::de::Error::custom)
    }
}
