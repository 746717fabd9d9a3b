//! Single-bucket computational PIR built from the additively homomorphic
//! scheme in [`crate::crypto`].
//!
//! A query is a vector of ciphertexts, one per database item, where exactly
//! one component encrypts 1 and the rest encrypt 0. The server scales each
//! component by the corresponding item limb and sums, so the answer decrypts
//! to the selected item. Cover queries use a random index through the exact
//! same generation path, which is what makes them indistinguishable from
//! real ones.

use crate::crypto::{
    he_decrypt, he_encrypt, he_keygen, he_reduce, he_scale_add_assign, he_zero, HeCiphertext,
    HeKeyPair, HeParams, HePublicKey, HeSecretKey,
};
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PirError {
    #[error("index {index} out of range 1..={n_items}")]
    IndexOutOfRange { index: usize, n_items: usize },
    #[error("item has {got} bytes, database stores {expected}-byte items")]
    WrongItemSize { got: usize, expected: usize },
    #[error("query has {got} components, database has {expected} items")]
    LengthMismatch { got: usize, expected: usize },
    #[error("database must be preprocessed before answering")]
    NotPreprocessed,
}

/// Ordered fixed-size items of one bucket, plus the cached limb
/// decomposition used to answer queries.
///
/// The decomposition is recomputed whenever an item changes (mailbox
/// contents change every round) and cached for all queries of that round.
#[derive(Clone, Debug)]
pub struct PirDatabase {
    items: Vec<Vec<u8>>,
    item_size: usize,
    limb_bits: u32,
    limbs: Vec<Vec<u64>>,
    preprocessed: bool,
}

impl PirDatabase {
    /// All-zero database of `n_items` items.
    pub fn new(n_items: usize, item_size: usize, limb_bits: u32) -> Self {
        PirDatabase {
            items: vec![vec![0u8; item_size]; n_items],
            item_size,
            limb_bits,
            limbs: Vec::new(),
            preprocessed: false,
        }
    }

    pub fn from_items(
        items: Vec<Vec<u8>>,
        item_size: usize,
        limb_bits: u32,
    ) -> Result<Self, PirError> {
        for it in &items {
            if it.len() != item_size {
                return Err(PirError::WrongItemSize {
                    got: it.len(),
                    expected: item_size,
                });
            }
        }
        Ok(PirDatabase {
            items,
            item_size,
            limb_bits,
            limbs: Vec::new(),
            preprocessed: false,
        })
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn item_size(&self) -> usize {
        self.item_size
    }

    pub fn item(&self, index: usize) -> &[u8] {
        &self.items[index - 1]
    }

    /// Limbs per item: ceil(item_size * 8 / t).
    pub fn limbs_per_item(&self) -> usize {
        (self.item_size * 8).div_ceil(self.limb_bits as usize)
    }

    /// Replace item `index` (1-based) with `m`; invalidates the limb cache.
    pub fn write(&mut self, m: &[u8], index: usize) -> Result<(), PirError> {
        if index == 0 || index > self.items.len() {
            return Err(PirError::IndexOutOfRange {
                index,
                n_items: self.items.len(),
            });
        }
        if m.len() != self.item_size {
            return Err(PirError::WrongItemSize {
                got: m.len(),
                expected: self.item_size,
            });
        }
        self.items[index - 1].copy_from_slice(m);
        self.preprocessed = false;
        Ok(())
    }

    /// Decompose every item into t-bit limbs; idempotent until the next
    /// write.
    pub fn preprocess(&mut self) {
        if self.preprocessed {
            return;
        }
        self.limbs = self
            .items
            .iter()
            .map(|it| decompose(it, self.limb_bits))
            .collect();
        self.preprocessed = true;
    }

    pub fn is_preprocessed(&self) -> bool {
        self.preprocessed
    }
}

/// Little-endian bit stream of `bytes`, chopped into t-bit limbs.
fn decompose(bytes: &[u8], limb_bits: u32) -> Vec<u64> {
    let t = limb_bits as usize;
    let n_limbs = (bytes.len() * 8).div_ceil(t);
    let mut limbs = vec![0u64; n_limbs];
    for i in 0..bytes.len() * 8 {
        let bit = (bytes[i / 8] >> (i % 8)) & 1;
        limbs[i / t] |= u64::from(bit) << (i % t);
    }
    limbs
}

/// Inverse of [`decompose`], truncated to `item_size` bytes.
fn recompose(limbs: &[u64], limb_bits: u32, item_size: usize) -> Vec<u8> {
    let t = limb_bits as usize;
    let mut bytes = vec![0u8; item_size];
    for i in 0..item_size * 8 {
        let bit = (limbs[i / t] >> (i % t)) & 1;
        bytes[i / 8] |= (bit as u8) << (i % 8);
    }
    bytes
}

/// Per-epoch client key pair bounded to queries of at most `max_items`
/// components.
#[derive(Clone)]
pub struct PirKeyPair {
    pub he: HeKeyPair,
    pub max_items: usize,
}

/// Client-local query state; never serialized to servers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PirState {
    /// 1-based index the query retrieves.
    pub requested_index: usize,
    /// Whether this is a cover query whose answer will be discarded.
    pub is_cover: bool,
}

/// Homomorphic selection vector for one bucket.
#[derive(Clone, Debug, PartialEq)]
pub struct PirQuery {
    pub selection: Vec<HeCiphertext>,
    pub client_tag: u32,
    pub bucket_index: u32,
}

/// Aggregated response: one ciphertext per item limb.
#[derive(Clone, Debug, PartialEq)]
pub struct PirAnswer {
    pub limbs: Vec<HeCiphertext>,
    pub item_size: u32,
    pub client_tag: u32,
    pub bucket_index: u32,
}

/// Key generation; `_security_param` is kept for interface fidelity, the
/// lattice parameters themselves come from [`HeParams::default_params`].
pub fn pir_setup(_security_param: u32, max_items: usize, rng: &mut impl Rng) -> PirKeyPair {
    assert!(max_items >= 1);
    PirKeyPair {
        he: he_keygen(HeParams::default_params(), rng),
        max_items,
    }
}

/// Write `m` to slot `index` of `db` (the "send" algorithm).
pub fn pir_send(db: &mut PirDatabase, m: &[u8], index: usize) -> Result<(), PirError> {
    db.write(m, index)
}

/// Build a selection query for 1-based `index` over `n_items` items.
pub fn pir_query(
    sk: &HeSecretKey,
    index: usize,
    n_items: usize,
    rng: &mut impl Rng,
) -> Result<(PirState, PirQuery), PirError> {
    if index == 0 || index > n_items {
        return Err(PirError::IndexOutOfRange { index, n_items });
    }
    let selection = (1..=n_items)
        .map(|j| he_encrypt(sk, u64::from(j == index), rng).expect("bit plaintext in range"))
        .collect();
    Ok((
        PirState {
            requested_index: index,
            is_cover: false,
        },
        PirQuery {
            selection,
            client_tag: 0,
            bucket_index: 0,
        },
    ))
}

/// Cover query: a uniformly random index through the same generation path.
pub fn pir_cover_query(
    sk: &HeSecretKey,
    n_items: usize,
    rng: &mut impl Rng,
) -> Result<(PirState, PirQuery), PirError> {
    let index = rng.gen_range(1..=n_items);
    let (mut st, q) = pir_query(sk, index, n_items, rng)?;
    st.is_cover = true;
    Ok((st, q))
}

/// Query for an empty bucket: zero components, answered by zero limbs.
pub fn pir_empty_query() -> (PirState, PirQuery) {
    (
        PirState {
            requested_index: 0,
            is_cover: true,
        },
        PirQuery {
            selection: Vec::new(),
            client_tag: 0,
            bucket_index: 0,
        },
    )
}

/// Compute the response: limb l of the answer is sum_j q_j * limb_l(d_j).
pub fn pir_answer(
    pk: &HePublicKey,
    db: &PirDatabase,
    query: &PirQuery,
) -> Result<PirAnswer, PirError> {
    if query.selection.len() != db.n_items() {
        return Err(PirError::LengthMismatch {
            got: query.selection.len(),
            expected: db.n_items(),
        });
    }
    if !db.preprocessed && db.n_items() > 0 {
        return Err(PirError::NotPreprocessed);
    }
    let params = &pk.params;
    let n_limbs = if db.n_items() == 0 { 0 } else { db.limbs_per_item() };
    let mut limbs = Vec::with_capacity(n_limbs);
    for l in 0..n_limbs {
        let mut acc = he_zero(params);
        for (j, item_limbs) in db.limbs.iter().enumerate() {
            he_scale_add_assign(&mut acc, &query.selection[j], item_limbs[l]);
        }
        he_reduce(params, &mut acc);
        limbs.push(acc);
    }
    Ok(PirAnswer {
        limbs,
        item_size: db.item_size as u32,
        client_tag: query.client_tag,
        bucket_index: query.bucket_index,
    })
}

/// Decrypt and reassemble the item recorded in `st`.
pub fn pir_decode(sk: &HeSecretKey, _st: &PirState, answer: &PirAnswer) -> Vec<u8> {
    let limbs: Vec<u64> = answer.limbs.iter().map(|ct| he_decrypt(sk, ct)).collect();
    recompose(&limbs, sk.params.limb_bits, answer.item_size as usize)
}
