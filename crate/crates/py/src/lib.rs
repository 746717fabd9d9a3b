//! Python bindings for the protocol library: hashing and invites, the
//! bucket mapping with index selection, a single-bucket PIR session, the
//! snippet cipher, and the analytic latency/scalability models.

use covercall::client;
use covercall::crypto::{self, GroupMasterKey, SnippetCipher, SymCiphertext};
use covercall::dialing::{self, EpochNumber, GroupDescriptor, PublicKey};
use covercall::mapping::{self, MappingSeed};
use covercall::pir;
use covercall::testbed::latency;
use covercall::testbed::scalability::{self, ScalabilityParams};
use covercall::wire;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::collections::HashSet;
use std::sync::Mutex;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn fixed<const N: usize>(data: &[u8], what: &str) -> PyResult<[u8; N]> {
    data.try_into()
        .map_err(|_| value_err(format!("{what} must be {N} bytes, got {}", data.len())))
}

/// SHA3-256 digest of `data`.
#[pyfunction]
fn hash_bytes<'py>(py: Python<'py>, data: &[u8]) -> Bound<'py, PyBytes> {
    PyBytes::new(py, &crypto::hash(data).0)
}

/// Deterministic invite for (group key, member key, epoch).
#[pyfunction]
fn make_invite<'py>(
    py: Python<'py>,
    gmk: &[u8],
    pubkey: &[u8],
    epoch: u64,
) -> PyResult<Bound<'py, PyBytes>> {
    let gmk = GroupMasterKey(fixed::<32>(gmk, "gmk")?);
    let pk = PublicKey(fixed::<32>(pubkey, "pubkey")?);
    Ok(PyBytes::new(
        py,
        &dialing::make_invite(&gmk, &pk, EpochNumber(epoch)).0,
    ))
}

/// Random cover invite, indistinguishable from a real one.
#[pyfunction]
#[pyo3(signature = (seed=None))]
fn make_cover_invite(py: Python<'_>, seed: Option<u64>) -> Bound<'_, PyBytes> {
    let mut rng = match seed {
        Some(s) => ChaCha20Rng::seed_from_u64(s),
        None => ChaCha20Rng::from_entropy(),
    };
    PyBytes::new(py, &dialing::make_cover_invite(&mut rng).0)
}

/// Group indices (into `groups`) with at least one matched invite, given
/// the received invite set. Each group is `(gmk, [member pubkeys])`.
#[pyfunction]
fn process_invites(
    received: Vec<Vec<u8>>,
    groups: Vec<(Vec<u8>, Vec<Vec<u8>>)>,
    epoch: u64,
) -> PyResult<Vec<usize>> {
    let received: HashSet<dialing::Invite> = received
        .iter()
        .map(|b| Ok(crypto::Digest(fixed::<32>(b, "invite")?)))
        .collect::<PyResult<_>>()?;
    let descriptors: Vec<GroupDescriptor> = groups
        .iter()
        .map(|(gmk, pks)| {
            Ok(GroupDescriptor {
                gmk: GroupMasterKey(fixed::<32>(gmk, "gmk")?),
                member_pubkeys: pks
                    .iter()
                    .map(|p| Ok(PublicKey(fixed::<32>(p, "pubkey")?)))
                    .collect::<PyResult<_>>()?,
                my_index: 0,
            })
        })
        .collect::<PyResult<_>>()?;
    Ok(
        dialing::process_invites(&received, &descriptors, EpochNumber(epoch))
            .into_iter()
            .map(|m| m.group_index)
            .collect(),
    )
}

/// Snippet payload capacity in bytes for a snippet length and bitrate.
#[pyfunction]
#[pyo3(signature = (snippet_ms, bitrate_bps=wire::DEFAULT_BITRATE_BPS))]
fn snippet_capacity(snippet_ms: u32, bitrate_bps: u32) -> usize {
    wire::snippet_capacity(snippet_ms, bitrate_bps)
}

/// Fixed-size snippet cipher bound to one key and deployment capacity.
#[pyclass]
struct SnippetBox {
    cipher: SnippetCipher,
    key: GroupMasterKey,
}

#[pymethods]
impl SnippetBox {
    #[new]
    fn new(key: &[u8], capacity: usize) -> PyResult<Self> {
        Ok(SnippetBox {
            cipher: SnippetCipher::new(capacity),
            key: GroupMasterKey(fixed::<32>(key, "key")?),
        })
    }

    fn ciphertext_len(&self) -> usize {
        self.cipher.ciphertext_len()
    }

    fn encrypt<'py>(
        &self,
        py: Python<'py>,
        iv: &[u8],
        plaintext: &[u8],
    ) -> PyResult<Bound<'py, PyBytes>> {
        let iv = fixed::<16>(iv, "iv")?;
        let ct = self
            .cipher
            .encrypt(&self.key, &iv, plaintext)
            .map_err(value_err)?;
        Ok(PyBytes::new(py, &ct.0))
    }

    fn decrypt<'py>(
        &self,
        py: Python<'py>,
        iv: &[u8],
        ciphertext: &[u8],
    ) -> PyResult<Bound<'py, PyBytes>> {
        let iv = fixed::<16>(iv, "iv")?;
        let pt = self
            .cipher
            .decrypt(&self.key, &iv, &SymCiphertext(ciphertext.to_vec()))
            .map_err(value_err)?;
        Ok(PyBytes::new(py, &pt))
    }
}

/// Seed-derived mailbox-to-bucket assignment, as rebuilt by every client.
#[pyclass]
struct BucketMapping {
    inner: mapping::BucketMapping,
    seed: [u8; 16],
}

#[pymethods]
impl BucketMapping {
    #[new]
    fn new(n_mailboxes: u32, n_buckets: u32, seed: &[u8]) -> PyResult<Self> {
        let seed = fixed::<16>(seed, "seed")?;
        Ok(BucketMapping {
            inner: mapping::build_mapping(n_mailboxes, n_buckets, &MappingSeed(seed)),
            seed,
        })
    }

    fn buckets_of(&self, mailbox: u32) -> PyResult<[u32; 3]> {
        Ok(self.inner.triple(mailbox).map_err(value_err)?.buckets)
    }

    fn bucket_list(&self, bucket: u32) -> PyResult<Vec<u32>> {
        if bucket == 0 || bucket > self.inner.n_buckets() {
            return Err(value_err(format!("bucket {bucket} out of range")));
        }
        Ok(self.inner.bucket_list(bucket).to_vec())
    }

    fn position_in_bucket(&self, bucket: u32, mailbox: u32) -> Option<u32> {
        self.inner.position_in_bucket(bucket, mailbox)
    }

    /// (positions, targets, all_random): one 1-based position per bucket,
    /// the target mailbox per bucket (or None), and the fallback flag.
    #[pyo3(signature = (targets, rng_seed=0))]
    fn select_indices(
        &self,
        targets: Vec<u32>,
        rng_seed: u64,
    ) -> PyResult<(Vec<u32>, Vec<Option<u32>>, bool)> {
        let mut rng = ChaCha20Rng::seed_from_u64(rng_seed);
        let sel = mapping::select_indices(&targets, &self.inner, &mut rng).map_err(value_err)?;
        Ok((
            sel.choices.iter().map(|c| c.position).collect(),
            sel.choices.iter().map(|c| c.target).collect(),
            sel.all_random,
        ))
    }

    fn seed<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.seed)
    }

    fn n_buckets(&self) -> u32 {
        self.inner.n_buckets()
    }
}

/// Bucket count for a maximum group size.
#[pyfunction]
fn n_buckets_for(group_size_max: u32) -> u32 {
    mapping::n_buckets_for(group_size_max)
}

/// Client side of the PIR scheme: keys plus query generation and decoding.
/// Queries and answers travel as the same bytes the wire protocol embeds.
#[pyclass]
struct PirSession {
    keys: pir::PirKeyPair,
    rng: Mutex<ChaCha20Rng>,
}

#[pymethods]
impl PirSession {
    #[new]
    #[pyo3(signature = (max_items, rng_seed=0))]
    fn new(max_items: usize, rng_seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(rng_seed);
        PirSession {
            keys: pir::pir_setup(128, max_items, &mut rng),
            rng: Mutex::new(rng),
        }
    }

    /// Serialized selection-vector query for 1-based `index`.
    fn query<'py>(
        &self,
        py: Python<'py>,
        index: usize,
        n_items: usize,
    ) -> PyResult<Bound<'py, PyBytes>> {
        let mut rng = self.rng.lock().unwrap();
        let (_, q) = pir::pir_query(&self.keys.he.secret, index, n_items, &mut *rng)
            .map_err(value_err)?;
        Ok(PyBytes::new(
            py,
            &wire::encode_pir_query(&q, &self.keys.he.public.params),
        ))
    }

    /// Decode a serialized answer back to the retrieved item.
    fn decode<'py>(&self, py: Python<'py>, answer: &[u8]) -> PyResult<Bound<'py, PyBytes>> {
        let answer = decode_answer_bytes(answer)?;
        let st = pir::PirState {
            requested_index: 0,
            is_cover: false,
        };
        Ok(PyBytes::new(
            py,
            &pir::pir_decode(&self.keys.he.secret, &st, &answer),
        ))
    }
}

/// Parse one bare serialized answer by wrapping it in a one-element
/// answer-set payload.
fn decode_answer_bytes(bytes: &[u8]) -> PyResult<pir::PirAnswer> {
    let mut payload = Vec::with_capacity(bytes.len() + 24);
    payload.extend_from_slice(&0u64.to_be_bytes());
    payload.extend_from_slice(&0u32.to_be_bytes());
    payload.extend_from_slice(&0u64.to_be_bytes());
    payload.extend_from_slice(&1u32.to_be_bytes());
    payload.extend_from_slice(bytes);
    let frame = wire::Frame {
        msg_type: wire::MessageType::AnswerSet,
        payload,
    };
    match wire::Message::decode(&frame).map_err(value_err)? {
        wire::Message::AnswerSet(mut set) if set.answers.len() == 1 => {
            Ok(set.answers.pop().expect("one answer"))
        }
        _ => Err(value_err("not a single serialized answer")),
    }
}

/// Server side of one PIR bucket: fixed-size items, overwritable slots.
#[pyclass]
struct PirBucket {
    db: pir::PirDatabase,
}

#[pymethods]
impl PirBucket {
    #[new]
    fn new(items: Vec<Vec<u8>>, item_size: usize) -> PyResult<Self> {
        let db = pir::PirDatabase::from_items(
            items,
            item_size,
            crypto::HeParams::default().limb_bits,
        )
        .map_err(value_err)?;
        Ok(PirBucket { db })
    }

    fn write(&mut self, item: &[u8], index: usize) -> PyResult<()> {
        pir::pir_send(&mut self.db, item, index).map_err(value_err)
    }

    /// Serialized answer to a serialized query.
    fn answer<'py>(&mut self, py: Python<'py>, query: &[u8]) -> PyResult<Bound<'py, PyBytes>> {
        let mut payload = Vec::with_capacity(query.len() + 16);
        payload.extend_from_slice(&0u32.to_be_bytes());
        payload.extend_from_slice(&0u64.to_be_bytes());
        payload.extend_from_slice(&1u32.to_be_bytes());
        payload.extend_from_slice(query);
        let frame = wire::Frame {
            msg_type: wire::MessageType::QuerySubmit,
            payload,
        };
        let q = match wire::Message::decode(&frame).map_err(value_err)? {
            wire::Message::QuerySubmit(mut qs) if qs.queries.len() == 1 => {
                qs.queries.pop().expect("one query")
            }
            _ => return Err(value_err("not a single serialized query")),
        };
        self.db.preprocess();
        let params = crypto::HeParams::default();
        let pk = crypto::HePublicKey { params };
        let ans = pir::pir_answer(&pk, &self.db, &q)
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        Ok(PyBytes::new(py, &wire::encode_pir_answer(&ans, &params)))
    }
}

/// Saturating 16-bit overlay of equal-length snippets.
#[pyfunction]
fn mix<'py>(py: Python<'py>, snippets: Vec<Vec<u8>>) -> Bound<'py, PyBytes> {
    PyBytes::new(py, &client::mix(&snippets))
}

/// Total seconds to distribute one round and answer all queries under the
/// analytic scalability model. Bandwidth defaults are the binary-unit
/// readings of the reference setup (100 Mib/s clients, 12 Gib/s servers).
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (n_clients, n_workers, n_relays, snippet_bits=400.0,
       client_bw_bps=104857600.0, server_bw_bps=12884901888.0, reply_ms=13.0,
       answer_bytes=65536.0, parallel_slots=48.0))]
fn analytic_scalability(
    n_clients: f64,
    n_workers: f64,
    n_relays: f64,
    snippet_bits: f64,
    client_bw_bps: f64,
    server_bw_bps: f64,
    reply_ms: f64,
    answer_bytes: f64,
    parallel_slots: f64,
) -> f64 {
    scalability::analytic_scalability(&ScalabilityParams {
        n_clients,
        n_workers,
        n_relays,
        snippet_bits,
        client_bw_bps,
        server_bw_bps,
        reply_ms,
        answer_bytes,
        parallel_slots,
    })
}

/// Mouth-to-ear latency from the ten measured pipeline parts (ms) and the
/// snippet length: their sum plus snippet, network, and audio allowances.
#[pyfunction]
fn mouth_to_ear(parts: [f64; 10], snippet_ms: f64) -> f64 {
    let b = latency::LatencyBreakdown {
        voice_encode: parts[0],
        encrypt: parts[1],
        c_to_r: parts[2],
        r_to_w: parts[3],
        preprocess: parts[4],
        pir_reply: parts[5],
        w_to_c: parts[6],
        pir_decode: parts[7],
        decrypt: parts[8],
        voice_decode: parts[9],
        additional: latency::additional_ms(snippet_ms),
    };
    latency::mouth_to_ear(&b)
}

#[pymodule]
fn covercall_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(hash_bytes, m)?)?;
    m.add_function(wrap_pyfunction!(make_invite, m)?)?;
    m.add_function(wrap_pyfunction!(make_cover_invite, m)?)?;
    m.add_function(wrap_pyfunction!(process_invites, m)?)?;
    m.add_function(wrap_pyfunction!(snippet_capacity, m)?)?;
    m.add_function(wrap_pyfunction!(n_buckets_for, m)?)?;
    m.add_function(wrap_pyfunction!(mix, m)?)?;
    m.add_function(wrap_pyfunction!(analytic_scalability, m)?)?;
    m.add_function(wrap_pyfunction!(mouth_to_ear, m)?)?;
    m.add_class::<SnippetBox>()?;
    m.add_class::<BucketMapping>()?;
    m.add_class::<PirSession>()?;
    m.add_class::<PirBucket>()?;
    Ok(())
}
