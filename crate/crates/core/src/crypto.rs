//! Cryptographic building blocks: SHA3-256 hashing, a fixed-size AES-CBC
//! snippet cipher, and a Regev-style additively homomorphic encryption
//! scheme over `Z_q` with `q = 2^56`.
//!
//! The homomorphic scheme is deliberately minimal: it only needs to support
//! ciphertext addition and ciphertext-times-plaintext scaling, which is all
//! the selection-vector PIR in [`crate::pir`] requires. Parameters are
//! plumbing defaults validated by the noise-safety tests, not a vetted
//! security level.

use rand::Rng;
use sha3::{Digest as _, Sha3_256};
use thiserror::Error;

/// Length of every digest, invite, and key identifier in bytes.
pub const DIGEST_LEN: usize = 32;
/// Length of a group master key in bytes.
pub const GMK_LEN: usize = 32;
/// Length of a CBC initialization vector in bytes.
pub const SYM_IV_LEN: usize = 16;

const AES_BLOCK: usize = 16;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CryptoError {
    #[error("plaintext of {got} bytes exceeds snippet capacity {capacity}")]
    OversizePlaintext { got: usize, capacity: usize },
    #[error("ciphertext does not decrypt to validly padded data under this key/iv")]
    MalformedPadding,
    #[error("ciphertext has wrong length: got {got}, expected {expected}")]
    WrongCiphertextLength { got: usize, expected: usize },
    #[error("homomorphic plaintext {0} out of range")]
    PlaintextOutOfRange(u64),
}

/// 32-byte output of the protocol hash function.
///
/// The derived `Ord` compares byte arrays lexicographically, which for
/// fixed-length arrays coincides with comparing the digests as unsigned
/// big-endian integers. Invite tie-breaking relies on this.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Digest(pub [u8; DIGEST_LEN]);

impl Digest {
    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    /// First 16 bytes, used when a digest doubles as an IV.
    pub fn truncate_iv(&self) -> [u8; SYM_IV_LEN] {
        let mut iv = [0u8; SYM_IV_LEN];
        iv.copy_from_slice(&self.0[..SYM_IV_LEN]);
        iv
    }
}

impl std::fmt::Debug for Digest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Digest({})", hex::encode(self.0))
    }
}

/// SHA3-256 of `data`.
pub fn hash(data: &[u8]) -> Digest {
    let mut h = Sha3_256::new();
    h.update(data);
    Digest(h.finalize().into())
}

/// SHA3-256 over the concatenation of `parts`.
pub fn hash_parts(parts: &[&[u8]]) -> Digest {
    let mut h = Sha3_256::new();
    for p in parts {
        h.update(p);
    }
    Digest(h.finalize().into())
}

/// Symmetric secret shared by all members of one group.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct GroupMasterKey(pub [u8; GMK_LEN]);

impl GroupMasterKey {
    pub fn random(rng: &mut impl Rng) -> Self {
        let mut k = [0u8; GMK_LEN];
        rng.fill_bytes(&mut k);
        GroupMasterKey(k)
    }
}

impl std::fmt::Debug for GroupMasterKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "GroupMasterKey(..)")
    }
}

/// Per-round IV: `hash(epoch_iv || round)` truncated to 16 bytes.
///
/// The epoch IV agreed on during dialing is fresh per epoch but would repeat
/// across the many CBC encryptions of one communication phase; hashing in
/// the round index restores per-message IV freshness.
pub fn derive_round_iv(epoch_iv: &[u8; SYM_IV_LEN], round: u32) -> [u8; SYM_IV_LEN] {
    hash_parts(&[epoch_iv, &u64::from(round).to_be_bytes()]).truncate_iv()
}

/// Fixed-length symmetric ciphertext; length depends only on the deployment
/// snippet capacity, never on the plaintext.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct SymCiphertext(pub Vec<u8>);

/// AES-256-CBC with padding to a fixed plaintext length.
///
/// Plaintexts up to `capacity` bytes are padded PKCS-style to the smallest
/// block multiple strictly above `capacity`, so every ciphertext in one
/// deployment has identical length. Decryption rejects anything whose
/// padding does not reconstruct a plaintext of at most `capacity` bytes,
/// which is how a client recognizes "this answer was not for me".
#[derive(Clone, Copy, Debug)]
pub struct SnippetCipher {
    capacity: usize,
    padded_len: usize,
}

impl SnippetCipher {
    pub fn new(capacity: usize) -> Self {
        // Always at least one pad byte, and pad values must fit in u8.
        let padded_len = (capacity / AES_BLOCK + 1) * AES_BLOCK;
        assert!(padded_len - capacity <= u8::MAX as usize && padded_len <= 255);
        SnippetCipher {
            capacity,
            padded_len,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Length of every ciphertext this cipher produces.
    pub fn ciphertext_len(&self) -> usize {
        self.padded_len
    }

    pub fn encrypt(
        &self,
        key: &GroupMasterKey,
        iv: &[u8; SYM_IV_LEN],
        plaintext: &[u8],
    ) -> Result<SymCiphertext, CryptoError> {
        use aes::cipher::{block_padding::NoPadding, BlockEncryptMut, KeyIvInit};
        if plaintext.len() > self.capacity {
            return Err(CryptoError::OversizePlaintext {
                got: plaintext.len(),
                capacity: self.capacity,
            });
        }
        let pad = (self.padded_len - plaintext.len()) as u8;
        let mut buf = Vec::with_capacity(self.padded_len);
        buf.extend_from_slice(plaintext);
        buf.resize(self.padded_len, pad);
        let enc = cbc::Encryptor::<aes::Aes256>::new((&key.0).into(), iv.into());
        let ct = enc.encrypt_padded_vec_mut::<NoPadding>(&buf);
        Ok(SymCiphertext(ct))
    }

    pub fn decrypt(
        &self,
        key: &GroupMasterKey,
        iv: &[u8; SYM_IV_LEN],
        ct: &SymCiphertext,
    ) -> Result<Vec<u8>, CryptoError> {
        use aes::cipher::{block_padding::NoPadding, BlockDecryptMut, KeyIvInit};
        if ct.0.len() != self.padded_len {
            return Err(CryptoError::WrongCiphertextLength {
                got: ct.0.len(),
                expected: self.padded_len,
            });
        }
        let dec = cbc::Decryptor::<aes::Aes256>::new((&key.0).into(), iv.into());
        let mut buf = dec
            .decrypt_padded_vec_mut::<NoPadding>(&ct.0)
            .map_err(|_| CryptoError::MalformedPadding)?;
        let pad = *buf.last().ok_or(CryptoError::MalformedPadding)? as usize;
        let min_pad = self.padded_len - self.capacity;
        if pad < min_pad || pad > self.padded_len {
            return Err(CryptoError::MalformedPadding);
        }
        if buf[self.padded_len - pad..].iter().any(|&b| b as usize != pad) {
            return Err(CryptoError::MalformedPadding);
        }
        buf.truncate(self.padded_len - pad);
        Ok(buf)
    }
}

// ---------------------------------------------------------------------------
// Additively homomorphic encryption (Regev / LWE style, power-of-two modulus)
// ---------------------------------------------------------------------------

/// Parameters of the homomorphic scheme.
///
/// `q = 2^modulus_bits` is a power of two, so modular arithmetic reduces to
/// masking. Plaintexts are `limb_bits`-wide integers scaled by
/// `delta = q / 2^limb_bits`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeParams {
    /// Lattice dimension n.
    pub dimension: usize,
    /// log2 of the ciphertext modulus q.
    pub modulus_bits: u32,
    /// Plaintext limb width t in bits.
    pub limb_bits: u32,
    /// Width of the discrete Gaussian noise.
    pub noise_sigma: f64,
}

impl HeParams {
    pub const fn default_params() -> Self {
        HeParams {
            dimension: 1024,
            modulus_bits: 56,
            limb_bits: 10,
            noise_sigma: 3.2,
        }
    }

    #[inline]
    pub fn modulus_mask(&self) -> u64 {
        (1u64 << self.modulus_bits) - 1
    }

    #[inline]
    pub fn limb_mask(&self) -> u64 {
        (1u64 << self.limb_bits) - 1
    }

    #[inline]
    pub fn delta(&self) -> u64 {
        1u64 << (self.modulus_bits - self.limb_bits)
    }

    /// Bytes needed to serialize one coefficient.
    pub fn coeff_width(&self) -> usize {
        self.modulus_bits.div_ceil(8) as usize
    }
}

impl Default for HeParams {
    fn default() -> Self {
        Self::default_params()
    }
}

/// Secret key: a uniform vector over `Z_q`.
#[derive(Clone)]
pub struct HeSecretKey {
    pub params: HeParams,
    key: Vec<u64>,
}

/// Public part of a key pair.
///
/// Queries are encrypted by the key owner herself, so the scheme is
/// symmetric; the "public" part carries only the evaluation parameters a
/// server needs to add and scale ciphertexts.
#[derive(Clone, Debug)]
pub struct HePublicKey {
    pub params: HeParams,
}

#[derive(Clone)]
pub struct HeKeyPair {
    pub public: HePublicKey,
    pub secret: HeSecretKey,
}

/// One LWE ciphertext: mask vector `a` and body `b = <a,s> + e + delta*m`.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct HeCiphertext {
    pub mask: Vec<u64>,
    pub body: u64,
}

impl HeCiphertext {
    /// Number of serialized coefficients (mask plus body).
    pub fn coeff_count(&self) -> usize {
        self.mask.len() + 1
    }
}

pub fn he_keygen(params: HeParams, rng: &mut impl Rng) -> HeKeyPair {
    let mask = params.modulus_mask();
    let key = (0..params.dimension).map(|_| rng.gen::<u64>() & mask).collect();
    HeKeyPair {
        public: HePublicKey { params },
        secret: HeSecretKey { params, key },
    }
}

/// Rounded-Gaussian noise sample via Box-Muller.
fn sample_noise(sigma: f64, rng: &mut impl Rng) -> i64 {
    let u1: f64 = 1.0 - rng.gen::<f64>(); // (0, 1]
    let u2: f64 = rng.gen();
    let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
    (z * sigma).round() as i64
}

pub fn he_encrypt(
    sk: &HeSecretKey,
    m: u64,
    rng: &mut impl Rng,
) -> Result<HeCiphertext, CryptoError> {
    let p = &sk.params;
    if m > p.limb_mask() {
        return Err(CryptoError::PlaintextOutOfRange(m));
    }
    let qmask = p.modulus_mask();
    let mask: Vec<u64> = (0..p.dimension).map(|_| rng.gen::<u64>() & qmask).collect();
    let mut body = 0u64;
    for (a, s) in mask.iter().zip(&sk.key) {
        body = body.wrapping_add(a.wrapping_mul(*s));
    }
    let e = sample_noise(p.noise_sigma, rng);
    body = body.wrapping_add(e as u64).wrapping_add(p.delta().wrapping_mul(m)) & qmask;
    Ok(HeCiphertext { mask, body })
}

pub fn he_decrypt(sk: &HeSecretKey, ct: &HeCiphertext) -> u64 {
    let p = &sk.params;
    let qmask = p.modulus_mask();
    let mut dot = 0u64;
    for (a, s) in ct.mask.iter().zip(&sk.key) {
        dot = dot.wrapping_add(a.wrapping_mul(*s));
    }
    let phase = ct.body.wrapping_sub(dot) & qmask;
    // Round to the nearest multiple of delta; plaintext wraps mod 2^t.
    (phase.wrapping_add(p.delta() / 2) >> (p.modulus_bits - p.limb_bits)) & p.limb_mask()
}

pub fn he_add(params: &HeParams, x: &HeCiphertext, y: &HeCiphertext) -> HeCiphertext {
    let qmask = params.modulus_mask();
    let mask = x
        .mask
        .iter()
        .zip(&y.mask)
        .map(|(a, b)| a.wrapping_add(*b) & qmask)
        .collect();
    HeCiphertext {
        mask,
        body: x.body.wrapping_add(y.body) & qmask,
    }
}

pub fn he_scale(params: &HeParams, x: &HeCiphertext, s: u64) -> HeCiphertext {
    let qmask = params.modulus_mask();
    HeCiphertext {
        mask: x.mask.iter().map(|a| a.wrapping_mul(s) & qmask).collect(),
        body: x.body.wrapping_mul(s) & qmask,
    }
}

/// `acc += s * x`, the inner loop of PIR answer computation.
///
/// Since q is a power of two, the low bits of the wrapping product are the
/// product mod q; masking is deferred to extraction time.
#[inline]
pub fn he_scale_add_assign(acc: &mut HeCiphertext, x: &HeCiphertext, s: u64) {
    debug_assert_eq!(acc.mask.len(), x.mask.len());
    for (a, b) in acc.mask.iter_mut().zip(&x.mask) {
        *a = a.wrapping_add(b.wrapping_mul(s));
    }
    acc.body = acc.body.wrapping_add(x.body.wrapping_mul(s));
}

/// Reduce all coefficients mod q after a run of deferred-mask accumulation.
pub fn he_reduce(params: &HeParams, ct: &mut HeCiphertext) {
    let qmask = params.modulus_mask();
    for a in ct.mask.iter_mut() {
        *a &= qmask;
    }
    ct.body &= qmask;
}

/// All-zero ciphertext, the additive identity.
pub fn he_zero(params: &HeParams) -> HeCiphertext {
    HeCiphertext {
        mask: vec![0; params.dimension],
        body: 0,
    }
}
