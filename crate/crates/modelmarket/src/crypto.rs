//! Cryptographic primitives shared by the whole simulator: hashing,
//! hash-based commitments, ECDSA signatures over secp256k1, symmetric
//! authenticated encryption, asymmetric encryption of small secrets, and a
//! PRF for deriving sealing keys.
//!
//! Sizes are fixed so transcript byte accounting is exact: digests and
//! commitments are 32 bytes, public keys are 64 bytes (raw X || Y), and
//! signatures are 70 bytes on the wire (64-byte compact ECDSA plus a 6-byte
//! checksum tail).

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Nonce};
use hmac::{Hmac, Mac};
use k256::ecdh::diffie_hellman;
use k256::ecdsa::signature::{Signer, Verifier};
use k256::ecdsa::{Signature as EcdsaSignature, SigningKey, VerifyingKey};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

pub const DIGEST_LEN: usize = 32;
pub const COIN_LEN: usize = 32;
pub const PUBLIC_KEY_LEN: usize = 64;
pub const SIGNATURE_LEN: usize = 70;
pub const SYMMETRIC_KEY_LEN: usize = 32;
/// nonce (12) + Poly1305 tag (16) added by symmetric encryption
pub const ENC_OVERHEAD: usize = 28;
/// ephemeral public key (64) + symmetric overhead added by `aenc`
pub const AENC_OVERHEAD: usize = PUBLIC_KEY_LEN + ENC_OVERHEAD;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("authenticated decryption failed")]
    DecryptFailed,
    #[error("malformed key material")]
    MalformedKey,
    #[error("malformed ciphertext")]
    MalformedCiphertext,
}

/// 32-byte hash value. Doubles as a content address and an identifier.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest(pub [u8; DIGEST_LEN]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; DIGEST_LEN]);

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Digest> {
        let raw = hex::decode(s).ok()?;
        let arr: [u8; DIGEST_LEN] = raw.try_into().ok()?;
        Some(Digest(arr))
    }
}

impl std::fmt::Debug for Digest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Digest({})", &self.to_hex()[..12])
    }
}

impl std::fmt::Display for Digest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.to_hex())
    }
}

/// Fixed-size byte newtypes all serialize as hex strings.
macro_rules! hex_serde {
    ($ty:ty, $len:expr) => {
        impl Serialize for $ty {
            fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&hex::encode(self.0))
            }
        }
        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let text = String::deserialize(d)?;
                let raw = hex::decode(&text).map_err(serde::de::Error::custom)?;
                let arr: [u8; $len] = raw
                    .try_into()
                    .map_err(|_| serde::de::Error::custom("wrong length"))?;
                Ok(Self(arr))
            }
        }
    };
}

hex_serde!(Digest, DIGEST_LEN);

pub fn hash(bytes: &[u8]) -> Digest {
    Digest(Sha256::digest(bytes).into())
}

/// Hash a sequence of length-framed parts, so `hash_parts(&[a, b])` never
/// collides with `hash_parts(&[a ++ b])`.
pub fn hash_parts(parts: &[&[u8]]) -> Digest {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    Digest(h.finalize().into())
}

/// Random opening coin for commitments.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Coin(pub [u8; COIN_LEN]);

hex_serde!(Coin, COIN_LEN);

impl Coin {
    pub fn random(rng: &mut impl RngCore) -> Coin {
        let mut c = [0u8; COIN_LEN];
        rng.fill_bytes(&mut c);
        Coin(c)
    }
}

impl std::fmt::Debug for Coin {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Coin(..)")
    }
}

/// Hash commitment `H(msg || coin)`. Binding through collision resistance,
/// hiding through the 32-byte uniform coin.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Commitment {
    pub value: Digest,
}

pub fn commit(msg: &[u8], coin: &Coin) -> Commitment {
    Commitment {
        value: hash_parts(&[b"commit", msg, &coin.0]),
    }
}

pub fn open(com: &Commitment, msg: &[u8], coin: &Coin) -> bool {
    commit(msg, coin) == *com
}

/// Raw uncompressed secp256k1 point (X || Y), 64 bytes.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PublicKey(pub [u8; PUBLIC_KEY_LEN]);

hex_serde!(PublicKey, PUBLIC_KEY_LEN);

impl PublicKey {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    fn verifying_key(&self) -> Result<VerifyingKey, CryptoError> {
        let mut sec1 = [0u8; 65];
        sec1[0] = 0x04;
        sec1[1..].copy_from_slice(&self.0);
        VerifyingKey::from_sec1_bytes(&sec1).map_err(|_| CryptoError::MalformedKey)
    }
}

impl std::fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "PublicKey({})", &self.to_hex()[..12])
    }
}

/// 70-byte wire signature: 64-byte compact ECDSA (r || s) followed by the
/// first 6 bytes of `H(r || s)`. The tail keeps the wire size at the fixed
/// 70 bytes the transcript accounting assumes while still failing closed on
/// any bit flip.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Signature(pub [u8; SIGNATURE_LEN]);

hex_serde!(Signature, SIGNATURE_LEN);

impl Signature {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl std::fmt::Debug for Signature {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Signature({})", &self.to_hex()[..12])
    }
}

/// Signing keypair. The secret half never appears in transcripts or on the
/// simulated chain.
#[derive(Clone)]
pub struct SignatureKeypair {
    signing: SigningKey,
    public: PublicKey,
}

impl std::fmt::Debug for SignatureKeypair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SignatureKeypair(pk={})", &self.public.to_hex()[..12])
    }
}

impl SignatureKeypair {
    pub fn generate(rng: &mut impl RngCore) -> SignatureKeypair {
        loop {
            let mut seed = [0u8; 32];
            rng.fill_bytes(&mut seed);
            if let Ok(sk) = SigningKey::from_bytes(&seed.into()) {
                let vk = VerifyingKey::from(&sk);
                let point = vk.to_encoded_point(false);
                let mut raw = [0u8; PUBLIC_KEY_LEN];
                raw.copy_from_slice(&point.as_bytes()[1..]);
                return SignatureKeypair {
                    signing: sk,
                    public: PublicKey(raw),
                };
            }
        }
    }

    pub fn public(&self) -> PublicKey {
        self.public
    }

    /// Raw secret scalar, used only as PRF key material inside an enclave.
    pub fn secret_bytes(&self) -> [u8; 32] {
        self.signing.to_bytes().into()
    }

    pub fn sign(&self, msg: &[u8]) -> Signature {
        // RFC 6979 deterministic ECDSA over the SHA-256 message hash.
        let sig: EcdsaSignature = self.signing.sign(msg);
        let compact = sig.to_bytes();
        let mut wire = [0u8; SIGNATURE_LEN];
        wire[..64].copy_from_slice(&compact);
        let tail = Sha256::digest(compact);
        wire[64..].copy_from_slice(&tail[..6]);
        Signature(wire)
    }
}

pub fn verify(pk: &PublicKey, msg: &[u8], sig: &Signature) -> bool {
    let compact = &sig.0[..64];
    let tail = Sha256::digest(compact);
    if sig.0[64..] != tail[..6] {
        return false;
    }
    let Ok(vk) = pk.verifying_key() else {
        return false;
    };
    let Ok(parsed) = EcdsaSignature::from_slice(compact) else {
        return false;
    };
    vk.verify(msg, &parsed).is_ok()
}

/// 32-byte symmetric key for the authenticated cipher.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct SymmetricKey(pub [u8; SYMMETRIC_KEY_LEN]);

hex_serde!(SymmetricKey, SYMMETRIC_KEY_LEN);

impl SymmetricKey {
    pub fn random(rng: &mut impl RngCore) -> SymmetricKey {
        let mut k = [0u8; SYMMETRIC_KEY_LEN];
        rng.fill_bytes(&mut k);
        SymmetricKey(k)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl std::fmt::Debug for SymmetricKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SymmetricKey(..)")
    }
}

fn aead(key: &SymmetricKey) -> ChaCha20Poly1305 {
    ChaCha20Poly1305::new(&key.0.into())
}

/// Authenticated encryption. Output is `nonce || ciphertext || tag`; the
/// caller supplies nonce randomness through `rng` so runs stay reproducible.
pub fn enc(key: &SymmetricKey, plaintext: &[u8], rng: &mut impl RngCore) -> Vec<u8> {
    let mut nonce = [0u8; 12];
    rng.fill_bytes(&mut nonce);
    enc_with_nonce(key, plaintext, &nonce)
}

pub fn enc_with_nonce(key: &SymmetricKey, plaintext: &[u8], nonce: &[u8; 12]) -> Vec<u8> {
    let ct = aead(key)
        .encrypt(
            Nonce::from_slice(nonce),
            Payload {
                msg: plaintext,
                aad: b"",
            },
        )
        .expect("encrypt");
    let mut out = Vec::with_capacity(12 + ct.len());
    out.extend_from_slice(nonce);
    out.extend_from_slice(&ct);
    out
}

pub fn dec(key: &SymmetricKey, blob: &[u8]) -> Result<Vec<u8>, CryptoError> {
    if blob.len() < 12 + 16 {
        return Err(CryptoError::MalformedCiphertext);
    }
    let (nonce, ct) = blob.split_at(12);
    aead(key)
        .decrypt(Nonce::from_slice(nonce), Payload { msg: ct, aad: b"" })
        .map_err(|_| CryptoError::DecryptFailed)
}

/// Keypair for receiving asymmetrically encrypted secrets (ECIES over
/// secp256k1: ephemeral ECDH, then the authenticated cipher).
#[derive(Clone)]
pub struct EncryptionKeypair {
    inner: SignatureKeypair,
}

impl std::fmt::Debug for EncryptionKeypair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "EncryptionKeypair(pk={})", &self.public().to_hex()[..12])
    }
}

impl EncryptionKeypair {
    pub fn generate(rng: &mut impl RngCore) -> EncryptionKeypair {
        EncryptionKeypair {
            inner: SignatureKeypair::generate(rng),
        }
    }

    pub fn public(&self) -> PublicKey {
        self.inner.public()
    }
}

fn shared_key(secret: &SigningKey, peer: &PublicKey) -> Result<SymmetricKey, CryptoError> {
    let vk = peer.verifying_key()?;
    let shared = diffie_hellman(secret.as_nonzero_scalar(), vk.as_affine());
    let mut h = Sha256::new();
    h.update(b"aenc-kdf");
    h.update(shared.raw_secret_bytes());
    Ok(SymmetricKey(h.finalize().into()))
}

/// Encrypt `plaintext` to the holder of `pk`. Output is
/// `ephemeral_pk(64) || nonce(12) || ciphertext || tag(16)`.
pub fn aenc(pk: &PublicKey, plaintext: &[u8], rng: &mut impl RngCore) -> Vec<u8> {
    let eph = SignatureKeypair::generate(rng);
    let key = shared_key(&eph.signing, pk).expect("recipient key");
    let mut out = Vec::with_capacity(AENC_OVERHEAD + plaintext.len());
    out.extend_from_slice(&eph.public().0);
    out.extend_from_slice(&enc(&key, plaintext, rng));
    out
}

pub fn adec(keypair: &EncryptionKeypair, blob: &[u8]) -> Result<Vec<u8>, CryptoError> {
    if blob.len() < AENC_OVERHEAD {
        return Err(CryptoError::MalformedCiphertext);
    }
    let mut eph_raw = [0u8; PUBLIC_KEY_LEN];
    eph_raw.copy_from_slice(&blob[..PUBLIC_KEY_LEN]);
    let key = shared_key(&keypair.inner.signing, &PublicKey(eph_raw))?;
    dec(&key, &blob[PUBLIC_KEY_LEN..])
}

/// Deterministic PRF used for enclave state sealing: derives a symmetric
/// key and a fresh coin from the caller's secret and an input anchor.
pub fn prf(secret: &[u8], input: &[u8]) -> (SymmetricKey, Coin) {
    let mut mac = <Hmac<Sha256> as Mac>::new_from_slice(secret).expect("hmac key");
    mac.update(b"prf-key");
    mac.update(input);
    let key: [u8; 32] = mac.finalize().into_bytes().into();

    let mut mac = <Hmac<Sha256> as Mac>::new_from_slice(secret).expect("hmac key");
    mac.update(b"prf-coin");
    mac.update(input);
    let coin: [u8; 32] = mac.finalize().into_bytes().into();

    (SymmetricKey(key), Coin(coin))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn rng() -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(7)
    }

    #[test]
    fn hash_is_deterministic_and_matches_sha256_vector() {
        assert_eq!(hash(b"abc"), hash(b"abc"));
        // Published SHA-256 digest of the empty string.
        assert_eq!(
            hash(b"").to_hex(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn hash_extension_never_collides_in_randomized_trials() {
        let mut r = rng();
        for _ in 0..10_000 {
            let mut msg = vec![0u8; 16];
            r.fill_bytes(&mut msg);
            let mut extended = msg.clone();
            extended.push(0x00);
            assert_ne!(hash(&msg), hash(&extended));
        }
    }

    #[test]
    fn commitment_opens_only_with_exact_message_and_coin() {
        let mut r = rng();
        let coin = Coin::random(&mut r);
        let com = commit(b"model bytes", &coin);
        assert!(open(&com, b"model bytes", &coin));
        assert!(!open(&com, b"model bytez", &coin));
        let other = Coin::random(&mut r);
        assert!(!open(&com, b"model bytes", &other));
    }

    #[test]
    fn commitment_binding_under_randomized_search() {
        let mut r = rng();
        let coin = Coin::random(&mut r);
        let com = commit(b"the committed message", &coin);
        for _ in 0..10_000 {
            let mut msg = vec![0u8; 21];
            r.fill_bytes(&mut msg);
            let c = Coin::random(&mut r);
            assert!(!open(&com, &msg, &c));
        }
    }

    #[test]
    fn commitment_hiding_no_constant_byte_position() {
        // Statistical check only: with random coins no output byte stays
        // fixed across commitments to the same message.
        let mut r = rng();
        let coms: Vec<Commitment> = (0..256)
            .map(|_| commit(b"same message", &Coin::random(&mut r)))
            .collect();
        for pos in 0..DIGEST_LEN {
            let first = coms[0].value.0[pos];
            assert!(coms.iter().any(|c| c.value.0[pos] != first));
        }
    }

    #[test]
    fn signature_sizes_and_roundtrip() {
        let mut r = rng();
        let kp = SignatureKeypair::generate(&mut r);
        assert_eq!(kp.public().0.len(), PUBLIC_KEY_LEN);
        let sig = kp.sign(b"payload");
        assert_eq!(sig.0.len(), SIGNATURE_LEN);
        assert!(verify(&kp.public(), b"payload", &sig));
        assert!(!verify(&kp.public(), b"payloae", &sig));
        let other = SignatureKeypair::generate(&mut r);
        assert!(!verify(&other.public(), b"payload", &sig));
    }

    #[test]
    fn signature_rejects_every_single_bit_flip() {
        let mut r = rng();
        let kp = SignatureKeypair::generate(&mut r);
        let msg = b"attested output".to_vec();
        let sig = kp.sign(&msg);
        for byte in 0..msg.len() {
            for bit in 0..8 {
                let mut m = msg.clone();
                m[byte] ^= 1 << bit;
                assert!(!verify(&kp.public(), &m, &sig), "flip {byte}:{bit}");
            }
        }
        for byte in 0..SIGNATURE_LEN {
            for bit in 0..8 {
                let mut s = sig;
                s.0[byte] ^= 1 << bit;
                assert!(!verify(&kp.public(), &msg, &s), "flip {byte}:{bit}");
            }
        }
    }

    #[test]
    fn signing_is_deterministic() {
        let mut r = rng();
        let kp = SignatureKeypair::generate(&mut r);
        assert_eq!(kp.sign(b"x").0, kp.sign(b"x").0);
    }

    #[test]
    fn symmetric_roundtrip_and_tamper_detection() {
        let mut r = rng();
        let key = SymmetricKey::random(&mut r);
        let ct = enc(&key, b"the model", &mut r);
        assert_eq!(ct.len(), b"the model".len() + ENC_OVERHEAD);
        assert_eq!(dec(&key, &ct).unwrap(), b"the model");

        let mut tampered = ct.clone();
        *tampered.last_mut().unwrap() ^= 1;
        assert_eq!(dec(&key, &tampered), Err(CryptoError::DecryptFailed));

        let wrong = SymmetricKey::random(&mut r);
        assert_eq!(dec(&wrong, &ct), Err(CryptoError::DecryptFailed));
    }

    #[test]
    fn asymmetric_roundtrip() {
        let mut r = rng();
        let buyer = EncryptionKeypair::generate(&mut r);
        let secret = SymmetricKey::random(&mut r);
        let blob = aenc(&buyer.public(), secret.as_bytes(), &mut r);
        assert_eq!(blob.len(), SYMMETRIC_KEY_LEN + AENC_OVERHEAD);
        assert_eq!(adec(&buyer, &blob).unwrap(), secret.as_bytes());

        let mut tampered = blob.clone();
        tampered[80] ^= 1;
        assert!(adec(&buyer, &tampered).is_err());
    }

    #[test]
    fn prf_is_deterministic_and_input_sensitive() {
        let (k1, c1) = prf(b"secret", b"anchor");
        let (k2, c2) = prf(b"secret", b"anchor");
        assert_eq!(k1.0, k2.0);
        assert_eq!(c1.0, c2.0);
        let (k3, _) = prf(b"secret", b"anchob");
        assert_ne!(k1.0, k3.0);
        let (k4, _) = prf(b"secres", b"anchor");
        assert_ne!(k1.0, k4.0);
    }
}
