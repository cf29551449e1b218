//! Hashing, base-58 addresses, and deterministic ECDSA signatures.
//!
//! Identifiers throughout the system (transactions, events, markets,
//! reports) are hash-160 digests: RIPEMD160 of SHA256. Addresses are
//! base-58 encodings of a version byte, a hash-160, and a 4-byte
//! double-SHA256 checksum. Signing uses secp256k1 ECDSA with RFC 6979
//! deterministic nonces so that repeated runs produce identical bytes.

use k256::ecdsa::signature::hazmat::PrehashVerifier;
use k256::ecdsa::{signature::hazmat::PrehashSigner, Signature, SigningKey, VerifyingKey};
use ripemd::Ripemd160;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;

/// Version byte for user addresses.
pub const VERSION_USER: u8 = 0x00;
/// Version byte for event, market, and other protocol-derived addresses.
pub const VERSION_PROTOCOL: u8 = 0x23;

const BASE58_ALPHABET: &[u8; 58] = b"123456789ABCDEFGHJKLMNPQRSTUVWXYZabcdefghijkmnopqrstuvwxyz";

/// A 20-byte hash-160 digest.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Hash160(pub [u8; 20]);

impl Hash160 {
    pub fn to_hex(self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
        let bytes = hex::decode(s).map_err(|_| CryptoError::BadDigest)?;
        Self::from_slice(&bytes)
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self, CryptoError> {
        let arr: [u8; 20] = bytes.try_into().map_err(|_| CryptoError::BadDigest)?;
        Ok(Hash160(arr))
    }

    pub fn as_bytes(&self) -> &[u8; 20] {
        &self.0
    }
}

impl fmt::Debug for Hash160 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Hash160({})", self.to_hex())
    }
}

impl fmt::Display for Hash160 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_hex())
    }
}

impl Serialize for Hash160 {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Hash160 {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Hash160::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CryptoError {
    #[error("digest must be exactly 20 bytes of hex")]
    BadDigest,
    #[error("base-58 string contains an invalid character")]
    BadBase58Char,
    #[error("address checksum mismatch")]
    BadChecksum,
    #[error("address payload has wrong length")]
    BadAddressLength,
    #[error("invalid secp256k1 private key")]
    BadPrivateKey,
    #[error("invalid secp256k1 public key")]
    BadPublicKey,
    #[error("invalid signature encoding")]
    BadSignature,
}

/// RIPEMD160(SHA256(data)).
pub fn hash160(data: &[u8]) -> Hash160 {
    let sha = Sha256::digest(data);
    let rip = Ripemd160::digest(sha);
    Hash160(rip.into())
}

/// SHA256(SHA256(data)), used for address checksums and signature digests.
pub fn sha256d(data: &[u8]) -> [u8; 32] {
    Sha256::digest(Sha256::digest(data)).into()
}

/// Base-58 encode a version byte plus 20-byte digest with a 4-byte
/// double-SHA256 checksum. Leading zero bytes map to leading '1's.
pub fn encode_address(digest: Hash160, version: u8) -> String {
    let mut payload = Vec::with_capacity(25);
    payload.push(version);
    payload.extend_from_slice(&digest.0);
    let check = sha256d(&payload);
    payload.extend_from_slice(&check[..4]);
    base58_encode(&payload)
}

/// Decode a base-58 address back to its (digest, version) pair, verifying
/// the checksum.
pub fn decode_address(s: &str) -> Result<(Hash160, u8), CryptoError> {
    let payload = base58_decode(s)?;
    if payload.len() != 25 {
        return Err(CryptoError::BadAddressLength);
    }
    let check = sha256d(&payload[..21]);
    if check[..4] != payload[21..] {
        return Err(CryptoError::BadChecksum);
    }
    let digest = Hash160::from_slice(&payload[1..21])?;
    Ok((digest, payload[0]))
}

fn base58_encode(data: &[u8]) -> String {
    let zeros = data.iter().take_while(|&&b| b == 0).count();
    let mut digits: Vec<u8> = Vec::new();
    for &byte in &data[zeros..] {
        let mut carry = byte as u32;
        for d in digits.iter_mut() {
            carry += (*d as u32) << 8;
            *d = (carry % 58) as u8;
            carry /= 58;
        }
        while carry > 0 {
            digits.push((carry % 58) as u8);
            carry /= 58;
        }
    }
    let mut out = String::with_capacity(zeros + digits.len());
    for _ in 0..zeros {
        out.push('1');
    }
    for &d in digits.iter().rev() {
        out.push(BASE58_ALPHABET[d as usize] as char);
    }
    out
}

fn base58_decode(s: &str) -> Result<Vec<u8>, CryptoError> {
    let zeros = s.bytes().take_while(|&b| b == b'1').count();
    let mut bytes: Vec<u8> = Vec::new();
    for c in s.bytes().skip(zeros) {
        let mut carry = BASE58_ALPHABET
            .iter()
            .position(|&a| a == c)
            .ok_or(CryptoError::BadBase58Char)? as u32;
        for b in bytes.iter_mut() {
            carry += *b as u32 * 58;
            *b = (carry & 0xff) as u8;
            carry >>= 8;
        }
        while carry > 0 {
            bytes.push((carry & 0xff) as u8);
            carry >>= 8;
        }
    }
    let mut out = vec![0u8; zeros];
    out.extend(bytes.iter().rev());
    Ok(out)
}

/// secp256k1 key pair. The public key is held in compressed (33-byte) form.
#[derive(Clone)]
pub struct KeyPair {
    signing: SigningKey,
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KeyPair({})", hex::encode(self.public_key()))
    }
}

impl KeyPair {
    /// Build a key pair from a 32-byte private scalar. Rejects zero and
    /// out-of-range scalars.
    pub fn from_private_bytes(bytes: &[u8; 32]) -> Result<Self, CryptoError> {
        let signing = SigningKey::from_bytes(bytes.into()).map_err(|_| CryptoError::BadPrivateKey)?;
        Ok(KeyPair { signing })
    }

    /// Derive a key pair deterministically from a seed label. Hashes the
    /// label (re-hashing in the negligible case the scalar is invalid).
    pub fn from_seed(label: &[u8]) -> Self {
        let mut material: [u8; 32] = Sha256::digest(label).into();
        loop {
            if let Ok(kp) = KeyPair::from_private_bytes(&material) {
                return kp;
            }
            material = Sha256::digest(material).into();
        }
    }

    /// Compressed 33-byte public key.
    pub fn public_key(&self) -> [u8; 33] {
        self.signing
            .verifying_key()
            .to_encoded_point(true)
            .as_bytes()
            .try_into()
            .expect("compressed point is 33 bytes")
    }

    /// hash-160 of the compressed public key.
    pub fn pubkey_hash(&self) -> Hash160 {
        hash160(&self.public_key())
    }

    /// Base-58 user address for this key.
    pub fn address(&self) -> String {
        encode_address(self.pubkey_hash(), VERSION_USER)
    }

    /// Sign a message with an RFC 6979 deterministic nonce. Returns the
    /// compact 64-byte signature.
    pub fn sign(&self, msg: &[u8]) -> [u8; 64] {
        let digest = sha256d(msg);
        let sig: Signature = self
            .signing
            .sign_prehash(&digest)
            .expect("prehash signing cannot fail for a valid key");
        sig.to_bytes().into()
    }
}

/// Verify a compact 64-byte signature against a compressed public key.
/// Returns false (never panics) on any mismatch or malformed input.
pub fn verify(msg: &[u8], sig: &[u8], public_key: &[u8]) -> bool {
    let Ok(vk) = VerifyingKey::from_sec1_bytes(public_key) else {
        return false;
    };
    let Ok(sig) = Signature::from_slice(sig) else {
        return false;
    };
    let digest = sha256d(msg);
    vk.verify_prehash(&digest, &sig).is_ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    // hash160("") and hash160("abc") chained from the published SHA256
    // test vectors:
    //   SHA256("")    = e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855
    //   SHA256("abc") = ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad
    // then RIPEMD160 of those digests.
    #[test]
    fn hash160_known_vectors() {
        let sha_empty =
            hex::decode("e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855")
                .unwrap();
        let expect_empty = Ripemd160::digest(&sha_empty);
        assert_eq!(hash160(b"").0.as_slice(), &expect_empty[..]);

        let sha_abc =
            hex::decode("ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad")
                .unwrap();
        let expect_abc = Ripemd160::digest(&sha_abc);
        assert_eq!(hash160(b"abc").0.as_slice(), &expect_abc[..]);
    }

    #[test]
    fn hash160_distinct_inputs() {
        assert_ne!(hash160(b"one"), hash160(b"two"));
        assert_eq!(hash160(b"same"), hash160(b"same"));
    }

    #[test]
    fn zero_digest_encodes_with_leading_ones() {
        let addr = encode_address(Hash160([0u8; 20]), VERSION_USER);
        assert!(addr.starts_with("1111111111111111111114"));
        let (digest, version) = decode_address(&addr).unwrap();
        assert_eq!(digest, Hash160([0u8; 20]));
        assert_eq!(version, VERSION_USER);
    }

    #[test]
    fn address_round_trip() {
        let digest = hash160(b"round trip");
        for version in [VERSION_USER, VERSION_PROTOCOL] {
            let addr = encode_address(digest, version);
            assert_eq!(decode_address(&addr).unwrap(), (digest, version));
        }
    }

    #[test]
    fn corrupted_address_fails_checksum() {
        let addr = encode_address(hash160(b"payload"), VERSION_USER);
        let mut chars: Vec<char> = addr.chars().collect();
        // Swap a middle character for a different alphabet character.
        let i = chars.len() / 2;
        chars[i] = if chars[i] == 'x' { 'y' } else { 'x' };
        let mutated: String = chars.into_iter().collect();
        assert!(decode_address(&mutated).is_err());
    }

    #[test]
    fn sign_verify_round_trip() {
        let kp = KeyPair::from_seed(b"alice");
        let msg = b"a signed payload";
        let sig = kp.sign(msg);
        assert!(verify(msg, &sig, &kp.public_key()));

        let other = KeyPair::from_seed(b"bob");
        assert!(!verify(msg, &sig, &other.public_key()));
    }

    #[test]
    fn signing_is_deterministic() {
        let kp = KeyPair::from_seed(b"alice");
        assert_eq!(kp.sign(b"msg"), kp.sign(b"msg"));
    }

    #[test]
    fn flipped_message_bits_fail_verification() {
        let kp = KeyPair::from_seed(b"carol");
        for i in 0..100u32 {
            let msg = format!("message number {i}").into_bytes();
            let sig = kp.sign(&msg);
            let mut mutated = msg.clone();
            let bit = (i as usize * 7) % (mutated.len() * 8);
            mutated[bit / 8] ^= 1 << (bit % 8);
            assert!(verify(&msg, &sig, &kp.public_key()));
            assert!(!verify(&mutated, &sig, &kp.public_key()));
        }
    }

    #[test]
    fn rejects_zero_private_key() {
        assert!(KeyPair::from_private_bytes(&[0u8; 32]).is_err());
    }
}
