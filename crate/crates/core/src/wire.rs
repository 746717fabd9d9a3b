//! Bit-exact message framing and payload schemas for all
//! client/relay/worker/coordinator traffic.
//!
//! Frame layout: 4-byte big-endian payload length, 1-byte message type,
//! payload. All multi-byte integers are big-endian; homomorphic ciphertext
//! coefficients are the exception and travel as little-endian fixed-width
//! arrays whose width is recorded next to them. Socket addresses are fixed
//! 6 bytes (IPv4 + port) so that message sizes never depend on address
//! formatting.
//!
//! Payload schemas per message type:
//!
//! | type | payload |
//! |------|---------|
//! | `HELLO` (1) | role, listen addr, pubkey, mailbox id |
//! | `REG_INFO` (2) | mailbox id, auth token, relay addr, worker addr, mailbox count, pubkey |
//! | `PHASE_ANNOUNCE` (3) | phase, schedule, seed, N, B, simulated users, relay addrs, worker addrs |
//! | `INVITE_SUBMIT` (4) | mailbox id, auth token, epoch, 32-byte invite |
//! | `INVITE_BROADCAST` (5) | epoch, invite list |
//! | `QUERY_SUBMIT` (6) | mailbox id, epoch, one selection-vector query per bucket |
//! | `SNIPPET_SUBMIT` (7) | mailbox id, auth token, epoch, round, send timestamp, ciphertext |
//! | `MAILBOX_BROADCAST` (8) | epoch, round, send timestamp, (mailbox id, ciphertext) records |
//! | `ANSWER_SET` (9) | epoch, round, send timestamp, one answer per bucket |
//! | `BUCKET_LISTS` (10) | epoch, seed, N, B, ordered mailbox list per bucket |
//! | `DIRECTORY` (11) | epoch, (pubkey, mailbox id) entries |

use crate::crypto::{Digest, HeCiphertext, HeParams, DIGEST_LEN};
use crate::dialing::{PublicKey, PUBKEY_LEN};
use crate::mapping::{MappingSeed, SEED_LEN};
use crate::pir::{PirAnswer, PirQuery};
use std::io::{Read, Write};
use std::net::SocketAddrV4;
use thiserror::Error;

/// Bytes before the payload: length (4) plus message type (1).
pub const FRAME_HEADER_LEN: usize = 5;
/// Default upper bound on accepted payload sizes.
pub const DEFAULT_MAX_FRAME: usize = 64 << 20;
/// Default voice bitrate in bits per second.
pub const DEFAULT_BITRATE_BPS: u32 = 1600;

pub const AUTH_TOKEN_LEN: usize = 16;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("truncated message")]
    Truncated,
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("frame of {got} bytes exceeds limit {limit}")]
    OversizeFrame { got: usize, limit: usize },
    #[error("snippet of {got} bytes exceeds capacity {capacity} minus length prefix")]
    Oversize { got: usize, capacity: usize },
    #[error("malformed field: {0}")]
    Malformed(&'static str),
}

/// Registered message types; one payload schema each.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, PartialOrd, Ord)]
#[repr(u8)]
pub enum MessageType {
    Hello = 1,
    RegInfo = 2,
    PhaseAnnounce = 3,
    InviteSubmit = 4,
    InviteBroadcast = 5,
    QuerySubmit = 6,
    SnippetSubmit = 7,
    MailboxBroadcast = 8,
    AnswerSet = 9,
    BucketLists = 10,
    Directory = 11,
}

impl MessageType {
    pub fn from_byte(b: u8) -> Result<Self, WireError> {
        Ok(match b {
            1 => MessageType::Hello,
            2 => MessageType::RegInfo,
            3 => MessageType::PhaseAnnounce,
            4 => MessageType::InviteSubmit,
            5 => MessageType::InviteBroadcast,
            6 => MessageType::QuerySubmit,
            7 => MessageType::SnippetSubmit,
            8 => MessageType::MailboxBroadcast,
            9 => MessageType::AnswerSet,
            10 => MessageType::BucketLists,
            11 => MessageType::Directory,
            other => return Err(WireError::UnknownType(other)),
        })
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Frame {
    pub msg_type: MessageType,
    pub payload: Vec<u8>,
}

pub fn encode_frame(msg_type: MessageType, payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(FRAME_HEADER_LEN + payload.len());
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    out.push(msg_type as u8);
    out.extend_from_slice(payload);
    out
}

/// Decode one frame from the front of `buf`; returns the frame and the
/// number of bytes consumed (always payload length + 5).
pub fn decode_frame(buf: &[u8], max_payload: usize) -> Result<(Frame, usize), WireError> {
    if buf.len() < FRAME_HEADER_LEN {
        return Err(WireError::Truncated);
    }
    let len = u32::from_be_bytes([buf[0], buf[1], buf[2], buf[3]]) as usize;
    if len > max_payload {
        return Err(WireError::OversizeFrame {
            got: len,
            limit: max_payload,
        });
    }
    let msg_type = MessageType::from_byte(buf[4])?;
    if buf.len() < FRAME_HEADER_LEN + len {
        return Err(WireError::Truncated);
    }
    Ok((
        Frame {
            msg_type,
            payload: buf[FRAME_HEADER_LEN..FRAME_HEADER_LEN + len].to_vec(),
        },
        FRAME_HEADER_LEN + len,
    ))
}

/// Blocking frame read from a stream.
pub fn read_frame(stream: &mut impl Read, max_payload: usize) -> std::io::Result<Frame> {
    let mut header = [0u8; FRAME_HEADER_LEN];
    stream.read_exact(&mut header)?;
    let len = u32::from_be_bytes([header[0], header[1], header[2], header[3]]) as usize;
    if len > max_payload {
        return Err(std::io::Error::other(WireError::OversizeFrame {
            got: len,
            limit: max_payload,
        }));
    }
    let msg_type = MessageType::from_byte(header[4]).map_err(std::io::Error::other)?;
    let mut payload = vec![0u8; len];
    stream.read_exact(&mut payload)?;
    Ok(Frame { msg_type, payload })
}

pub fn write_frame(
    stream: &mut impl Write,
    msg_type: MessageType,
    payload: &[u8],
) -> std::io::Result<()> {
    stream.write_all(&encode_frame(msg_type, payload))?;
    stream.flush()
}

// ---------------------------------------------------------------------------
// Field readers/writers
// ---------------------------------------------------------------------------

struct Reader<'a>(&'a [u8]);

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.0.len() < n {
            return Err(WireError::Truncated);
        }
        let (head, rest) = self.0.split_at(n);
        self.0 = rest;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], WireError> {
        Ok(self.take(N)?.try_into().unwrap())
    }

    fn addr(&mut self) -> Result<SocketAddrV4, WireError> {
        let ip: [u8; 4] = self.array()?;
        let port = u16::from_be_bytes(self.take(2)?.try_into().unwrap());
        Ok(SocketAddrV4::new(ip.into(), port))
    }

    fn finish(&self) -> Result<(), WireError> {
        if self.0.is_empty() {
            Ok(())
        } else {
            Err(WireError::Malformed("trailing bytes"))
        }
    }
}

fn put_addr(out: &mut Vec<u8>, addr: &SocketAddrV4) {
    out.extend_from_slice(&addr.ip().octets());
    out.extend_from_slice(&addr.port().to_be_bytes());
}

// ---------------------------------------------------------------------------
// Homomorphic ciphertext serialization
// ---------------------------------------------------------------------------

fn put_ciphertext(out: &mut Vec<u8>, ct: &HeCiphertext, width: usize) {
    for c in ct.mask.iter().chain(std::iter::once(&ct.body)) {
        out.extend_from_slice(&c.to_le_bytes()[..width]);
    }
}

fn get_ciphertext(
    r: &mut Reader<'_>,
    dimension: usize,
    width: usize,
) -> Result<HeCiphertext, WireError> {
    let coeff = |r: &mut Reader<'_>| -> Result<u64, WireError> {
        let bytes = r.take(width)?;
        let mut buf = [0u8; 8];
        buf[..width].copy_from_slice(bytes);
        Ok(u64::from_le_bytes(buf))
    };
    let mut mask = Vec::with_capacity(dimension);
    for _ in 0..dimension {
        mask.push(coeff(r)?);
    }
    let body = coeff(r)?;
    Ok(HeCiphertext { mask, body })
}

/// Self-describing query encoding: bucket index, component count, lattice
/// dimension, coefficient width, limb width, then the ciphertexts.
pub fn encode_pir_query(q: &PirQuery, params: &HeParams) -> Vec<u8> {
    let width = params.coeff_width();
    let mut out = Vec::with_capacity(13 + q.selection.len() * (params.dimension + 1) * width);
    out.extend_from_slice(&q.bucket_index.to_be_bytes());
    out.extend_from_slice(&(q.selection.len() as u32).to_be_bytes());
    out.extend_from_slice(&(params.dimension as u32).to_be_bytes());
    out.push(width as u8);
    out.push(params.limb_bits as u8);
    for ct in &q.selection {
        put_ciphertext(&mut out, ct, width);
    }
    out
}

fn decode_pir_query(r: &mut Reader<'_>, client_tag: u32) -> Result<PirQuery, WireError> {
    let bucket_index = r.u32()?;
    let n_items = r.u32()? as usize;
    let dimension = r.u32()? as usize;
    let width = r.u8()? as usize;
    let _limb_bits = r.u8()?;
    if width == 0 || width > 8 {
        return Err(WireError::Malformed("coefficient width"));
    }
    let mut selection = Vec::with_capacity(n_items);
    for _ in 0..n_items {
        selection.push(get_ciphertext(r, dimension, width)?);
    }
    Ok(PirQuery {
        selection,
        client_tag,
        bucket_index,
    })
}

/// Answer encoding mirrors the query: bucket index, limb count, item size,
/// dimension, widths, ciphertexts.
pub fn encode_pir_answer(a: &PirAnswer, params: &HeParams) -> Vec<u8> {
    let width = params.coeff_width();
    let mut out = Vec::with_capacity(18 + a.limbs.len() * (params.dimension + 1) * width);
    out.extend_from_slice(&a.bucket_index.to_be_bytes());
    out.extend_from_slice(&(a.limbs.len() as u32).to_be_bytes());
    out.extend_from_slice(&a.item_size.to_be_bytes());
    out.extend_from_slice(&(params.dimension as u32).to_be_bytes());
    out.push(width as u8);
    out.push(params.limb_bits as u8);
    for ct in &a.limbs {
        put_ciphertext(&mut out, ct, width);
    }
    out
}

fn decode_pir_answer(r: &mut Reader<'_>, client_tag: u32) -> Result<PirAnswer, WireError> {
    let bucket_index = r.u32()?;
    let n_limbs = r.u32()? as usize;
    let item_size = r.u32()?;
    let dimension = r.u32()? as usize;
    let width = r.u8()? as usize;
    let _limb_bits = r.u8()?;
    if width == 0 || width > 8 {
        return Err(WireError::Malformed("coefficient width"));
    }
    let mut limbs = Vec::with_capacity(n_limbs);
    for _ in 0..n_limbs {
        limbs.push(get_ciphertext(r, dimension, width)?);
    }
    Ok(PirAnswer {
        limbs,
        item_size,
        client_tag,
        bucket_index,
    })
}

// ---------------------------------------------------------------------------
// Payload schemas
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
#[repr(u8)]
pub enum NodeRole {
    Client = 0,
    Relay = 1,
    Worker = 2,
}

impl NodeRole {
    fn from_byte(b: u8) -> Result<Self, WireError> {
        Ok(match b {
            0 => NodeRole::Client,
            1 => NodeRole::Relay,
            2 => NodeRole::Worker,
            _ => return Err(WireError::Malformed("node role")),
        })
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
#[repr(u8)]
pub enum PhaseKind {
    Dialing = 1,
    Communication = 2,
}

impl PhaseKind {
    fn from_byte(b: u8) -> Result<Self, WireError> {
        Ok(match b {
            1 => PhaseKind::Dialing,
            2 => PhaseKind::Communication,
            _ => return Err(WireError::Malformed("phase kind")),
        })
    }
}

/// Identification sent on every new connection.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Hello {
    pub role: NodeRole,
    /// Where this node accepts connections; unused (zero) for clients.
    pub listen_addr: SocketAddrV4,
    /// Client identity; zero for servers.
    pub pubkey: PublicKey,
    /// Set on client data connections to relays and workers, zero before
    /// registration.
    pub mailbox_id: u32,
}

/// Registration reply, also used by the coordinator to inform a relay or
/// worker about a client assigned to it.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct RegInfo {
    pub mailbox_id: u32,
    pub auth_token: [u8; AUTH_TOKEN_LEN],
    pub relay_addr: SocketAddrV4,
    pub worker_addr: SocketAddrV4,
    /// Number of mailboxes at the time of registration; the authoritative
    /// per-epoch count arrives with the phase announcement.
    pub n_mailboxes: u32,
    pub pubkey: PublicKey,
}

/// Durations of every phase of one epoch, identical for all nodes.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct EpochSchedule {
    pub epoch: u64,
    pub mapping_ms: u32,
    pub d1_ms: u32,
    pub d2_ms: u32,
    pub d3_ms: u32,
    pub d4_ms: u32,
    pub rounds: u32,
    pub round_ms: u32,
    pub snippet_ms: u32,
}

impl EpochSchedule {
    pub fn dialing_ms(&self) -> u32 {
        self.d1_ms + self.d2_ms + self.d3_ms + self.d4_ms
    }
}

/// Phase start announcement from the coordinator, carrying everything a
/// node needs to participate in the epoch, including the server topology.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct PhaseAnnounce {
    pub phase: PhaseKind,
    pub schedule: EpochSchedule,
    pub seed: MappingSeed,
    pub n_mailboxes: u32,
    pub n_buckets: u32,
    /// Bucket inflation factor for user simulation; 0 disables it.
    pub simulated_users: u32,
    pub relay_addrs: Vec<SocketAddrV4>,
    pub worker_addrs: Vec<SocketAddrV4>,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct InviteSubmit {
    pub mailbox_id: u32,
    pub auth_token: [u8; AUTH_TOKEN_LEN],
    pub epoch: u64,
    pub invite: Digest,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct InviteBroadcast {
    pub epoch: u64,
    pub invites: Vec<Digest>,
}

#[derive(Clone, PartialEq, Debug)]
pub struct QuerySubmit {
    pub mailbox_id: u32,
    pub epoch: u64,
    pub queries: Vec<PirQuery>,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct SnippetSubmit {
    pub mailbox_id: u32,
    pub auth_token: [u8; AUTH_TOKEN_LEN],
    pub epoch: u64,
    pub round: u32,
    /// Sender monotonic timestamp for transmission-latency measurement.
    pub sent_at_us: u64,
    pub ciphertext: Vec<u8>,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct MailboxBroadcast {
    pub epoch: u64,
    pub round: u32,
    pub sent_at_us: u64,
    pub records: Vec<(u32, Vec<u8>)>,
}

#[derive(Clone, PartialEq, Debug)]
pub struct AnswerSet {
    pub epoch: u64,
    pub round: u32,
    pub sent_at_us: u64,
    pub answers: Vec<PirAnswer>,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct BucketLists {
    pub epoch: u64,
    pub seed: MappingSeed,
    pub n_mailboxes: u32,
    pub lists: Vec<Vec<u32>>,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Directory {
    pub epoch: u64,
    pub entries: Vec<(PublicKey, u32)>,
}

/// Decoded payload of any frame.
#[derive(Clone, PartialEq, Debug)]
pub enum Message {
    Hello(Hello),
    RegInfo(RegInfo),
    PhaseAnnounce(PhaseAnnounce),
    InviteSubmit(InviteSubmit),
    InviteBroadcast(InviteBroadcast),
    QuerySubmit(QuerySubmit),
    SnippetSubmit(SnippetSubmit),
    MailboxBroadcast(MailboxBroadcast),
    AnswerSet(AnswerSet),
    BucketLists(BucketLists),
    Directory(Directory),
}

impl Message {
    pub fn msg_type(&self) -> MessageType {
        match self {
            Message::Hello(_) => MessageType::Hello,
            Message::RegInfo(_) => MessageType::RegInfo,
            Message::PhaseAnnounce(_) => MessageType::PhaseAnnounce,
            Message::InviteSubmit(_) => MessageType::InviteSubmit,
            Message::InviteBroadcast(_) => MessageType::InviteBroadcast,
            Message::QuerySubmit(_) => MessageType::QuerySubmit,
            Message::SnippetSubmit(_) => MessageType::SnippetSubmit,
            Message::MailboxBroadcast(_) => MessageType::MailboxBroadcast,
            Message::AnswerSet(_) => MessageType::AnswerSet,
            Message::BucketLists(_) => MessageType::BucketLists,
            Message::Directory(_) => MessageType::Directory,
        }
    }

    pub fn encode_payload(&self, params: &HeParams) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            Message::Hello(m) => {
                out.push(m.role as u8);
                put_addr(&mut out, &m.listen_addr);
                out.extend_from_slice(&m.pubkey.0);
                out.extend_from_slice(&m.mailbox_id.to_be_bytes());
            }
            Message::RegInfo(m) => {
                out.extend_from_slice(&m.mailbox_id.to_be_bytes());
                out.extend_from_slice(&m.auth_token);
                put_addr(&mut out, &m.relay_addr);
                put_addr(&mut out, &m.worker_addr);
                out.extend_from_slice(&m.n_mailboxes.to_be_bytes());
                out.extend_from_slice(&m.pubkey.0);
            }
            Message::PhaseAnnounce(m) => {
                out.push(m.phase as u8);
                let s = &m.schedule;
                out.extend_from_slice(&s.epoch.to_be_bytes());
                for v in [
                    s.mapping_ms,
                    s.d1_ms,
                    s.d2_ms,
                    s.d3_ms,
                    s.d4_ms,
                    s.rounds,
                    s.round_ms,
                    s.snippet_ms,
                ] {
                    out.extend_from_slice(&v.to_be_bytes());
                }
                out.extend_from_slice(&m.seed.0);
                out.extend_from_slice(&m.n_mailboxes.to_be_bytes());
                out.extend_from_slice(&m.n_buckets.to_be_bytes());
                out.extend_from_slice(&m.simulated_users.to_be_bytes());
                out.extend_from_slice(&(m.relay_addrs.len() as u32).to_be_bytes());
                for a in &m.relay_addrs {
                    put_addr(&mut out, a);
                }
                out.extend_from_slice(&(m.worker_addrs.len() as u32).to_be_bytes());
                for a in &m.worker_addrs {
                    put_addr(&mut out, a);
                }
            }
            Message::InviteSubmit(m) => {
                out.extend_from_slice(&m.mailbox_id.to_be_bytes());
                out.extend_from_slice(&m.auth_token);
                out.extend_from_slice(&m.epoch.to_be_bytes());
                out.extend_from_slice(m.invite.as_bytes());
            }
            Message::InviteBroadcast(m) => {
                out.extend_from_slice(&m.epoch.to_be_bytes());
                out.extend_from_slice(&(m.invites.len() as u32).to_be_bytes());
                for i in &m.invites {
                    out.extend_from_slice(i.as_bytes());
                }
            }
            Message::QuerySubmit(m) => {
                out.extend_from_slice(&m.mailbox_id.to_be_bytes());
                out.extend_from_slice(&m.epoch.to_be_bytes());
                out.extend_from_slice(&(m.queries.len() as u32).to_be_bytes());
                for q in &m.queries {
                    out.extend_from_slice(&encode_pir_query(q, params));
                }
            }
            Message::SnippetSubmit(m) => {
                out.extend_from_slice(&m.mailbox_id.to_be_bytes());
                out.extend_from_slice(&m.auth_token);
                out.extend_from_slice(&m.epoch.to_be_bytes());
                out.extend_from_slice(&m.round.to_be_bytes());
                out.extend_from_slice(&m.sent_at_us.to_be_bytes());
                out.extend_from_slice(&(m.ciphertext.len() as u32).to_be_bytes());
                out.extend_from_slice(&m.ciphertext);
            }
            Message::MailboxBroadcast(m) => {
                out.extend_from_slice(&m.epoch.to_be_bytes());
                out.extend_from_slice(&m.round.to_be_bytes());
                out.extend_from_slice(&m.sent_at_us.to_be_bytes());
                let ct_len = m.records.first().map_or(0, |(_, ct)| ct.len());
                out.extend_from_slice(&(ct_len as u32).to_be_bytes());
                out.extend_from_slice(&(m.records.len() as u32).to_be_bytes());
                for (id, ct) in &m.records {
                    debug_assert_eq!(ct.len(), ct_len);
                    out.extend_from_slice(&id.to_be_bytes());
                    out.extend_from_slice(ct);
                }
            }
            Message::AnswerSet(m) => {
                out.extend_from_slice(&m.epoch.to_be_bytes());
                out.extend_from_slice(&m.round.to_be_bytes());
                out.extend_from_slice(&m.sent_at_us.to_be_bytes());
                out.extend_from_slice(&(m.answers.len() as u32).to_be_bytes());
                for a in &m.answers {
                    out.extend_from_slice(&encode_pir_answer(a, params));
                }
            }
            Message::BucketLists(m) => {
                out.extend_from_slice(&m.epoch.to_be_bytes());
                out.extend_from_slice(&m.seed.0);
                out.extend_from_slice(&m.n_mailboxes.to_be_bytes());
                out.extend_from_slice(&(m.lists.len() as u32).to_be_bytes());
                for list in &m.lists {
                    out.extend_from_slice(&(list.len() as u32).to_be_bytes());
                    for id in list {
                        out.extend_from_slice(&id.to_be_bytes());
                    }
                }
            }
            Message::Directory(m) => {
                out.extend_from_slice(&m.epoch.to_be_bytes());
                out.extend_from_slice(&(m.entries.len() as u32).to_be_bytes());
                for (pk, id) in &m.entries {
                    out.extend_from_slice(&pk.0);
                    out.extend_from_slice(&id.to_be_bytes());
                }
            }
        }
        out
    }

    pub fn encode(&self, params: &HeParams) -> Vec<u8> {
        encode_frame(self.msg_type(), &self.encode_payload(params))
    }

    pub fn decode(frame: &Frame) -> Result<Message, WireError> {
        let mut r = Reader(&frame.payload);
        let msg = match frame.msg_type {
            MessageType::Hello => Message::Hello(Hello {
                role: NodeRole::from_byte(r.u8()?)?,
                listen_addr: r.addr()?,
                pubkey: PublicKey(r.array::<PUBKEY_LEN>()?),
                mailbox_id: r.u32()?,
            }),
            MessageType::RegInfo => Message::RegInfo(RegInfo {
                mailbox_id: r.u32()?,
                auth_token: r.array::<AUTH_TOKEN_LEN>()?,
                relay_addr: r.addr()?,
                worker_addr: r.addr()?,
                n_mailboxes: r.u32()?,
                pubkey: PublicKey(r.array::<PUBKEY_LEN>()?),
            }),
            MessageType::PhaseAnnounce => {
                let phase = PhaseKind::from_byte(r.u8()?)?;
                let schedule = EpochSchedule {
                    epoch: r.u64()?,
                    mapping_ms: r.u32()?,
                    d1_ms: r.u32()?,
                    d2_ms: r.u32()?,
                    d3_ms: r.u32()?,
                    d4_ms: r.u32()?,
                    rounds: r.u32()?,
                    round_ms: r.u32()?,
                    snippet_ms: r.u32()?,
                };
                let seed = MappingSeed(r.array::<SEED_LEN>()?);
                let n_mailboxes = r.u32()?;
                let n_buckets = r.u32()?;
                let simulated_users = r.u32()?;
                let nr = r.u32()? as usize;
                let mut relay_addrs = Vec::with_capacity(nr);
                for _ in 0..nr {
                    relay_addrs.push(r.addr()?);
                }
                let nw = r.u32()? as usize;
                let mut worker_addrs = Vec::with_capacity(nw);
                for _ in 0..nw {
                    worker_addrs.push(r.addr()?);
                }
                Message::PhaseAnnounce(PhaseAnnounce {
                    phase,
                    schedule,
                    seed,
                    n_mailboxes,
                    n_buckets,
                    simulated_users,
                    relay_addrs,
                    worker_addrs,
                })
            }
            MessageType::InviteSubmit => Message::InviteSubmit(InviteSubmit {
                mailbox_id: r.u32()?,
                auth_token: r.array::<AUTH_TOKEN_LEN>()?,
                epoch: r.u64()?,
                invite: Digest(r.array::<DIGEST_LEN>()?),
            }),
            MessageType::InviteBroadcast => {
                let epoch = r.u64()?;
                let n = r.u32()? as usize;
                let mut invites = Vec::with_capacity(n);
                for _ in 0..n {
                    invites.push(Digest(r.array::<DIGEST_LEN>()?));
                }
                Message::InviteBroadcast(InviteBroadcast { epoch, invites })
            }
            MessageType::QuerySubmit => {
                let mailbox_id = r.u32()?;
                let epoch = r.u64()?;
                let n = r.u32()? as usize;
                let mut queries = Vec::with_capacity(n);
                for _ in 0..n {
                    queries.push(decode_pir_query(&mut r, mailbox_id)?);
                }
                Message::QuerySubmit(QuerySubmit {
                    mailbox_id,
                    epoch,
                    queries,
                })
            }
            MessageType::SnippetSubmit => {
                let mailbox_id = r.u32()?;
                let auth_token = r.array::<AUTH_TOKEN_LEN>()?;
                let epoch = r.u64()?;
                let round = r.u32()?;
                let sent_at_us = r.u64()?;
                let len = r.u32()? as usize;
                let ciphertext = r.take(len)?.to_vec();
                Message::SnippetSubmit(SnippetSubmit {
                    mailbox_id,
                    auth_token,
                    epoch,
                    round,
                    sent_at_us,
                    ciphertext,
                })
            }
            MessageType::MailboxBroadcast => {
                let epoch = r.u64()?;
                let round = r.u32()?;
                let sent_at_us = r.u64()?;
                let ct_len = r.u32()? as usize;
                let n = r.u32()? as usize;
                let mut records = Vec::with_capacity(n);
                for _ in 0..n {
                    let id = r.u32()?;
                    records.push((id, r.take(ct_len)?.to_vec()));
                }
                Message::MailboxBroadcast(MailboxBroadcast {
                    epoch,
                    round,
                    sent_at_us,
                    records,
                })
            }
            MessageType::AnswerSet => {
                let epoch = r.u64()?;
                let round = r.u32()?;
                let sent_at_us = r.u64()?;
                let n = r.u32()? as usize;
                let mut answers = Vec::with_capacity(n);
                for _ in 0..n {
                    answers.push(decode_pir_answer(&mut r, 0)?);
                }
                Message::AnswerSet(AnswerSet {
                    epoch,
                    round,
                    sent_at_us,
                    answers,
                })
            }
            MessageType::BucketLists => {
                let epoch = r.u64()?;
                let seed = MappingSeed(r.array::<SEED_LEN>()?);
                let n_mailboxes = r.u32()?;
                let n = r.u32()? as usize;
                let mut lists = Vec::with_capacity(n);
                for _ in 0..n {
                    let len = r.u32()? as usize;
                    let mut list = Vec::with_capacity(len);
                    for _ in 0..len {
                        list.push(r.u32()?);
                    }
                    lists.push(list);
                }
                Message::BucketLists(BucketLists {
                    epoch,
                    seed,
                    n_mailboxes,
                    lists,
                })
            }
            MessageType::Directory => {
                let epoch = r.u64()?;
                let n = r.u32()? as usize;
                let mut entries = Vec::with_capacity(n);
                for _ in 0..n {
                    let pk = PublicKey(r.array::<PUBKEY_LEN>()?);
                    entries.push((pk, r.u32()?));
                }
                Message::Directory(Directory { epoch, entries })
            }
        };
        r.finish()?;
        Ok(msg)
    }
}

// ---------------------------------------------------------------------------
// Snippet payload sizing and padding
// ---------------------------------------------------------------------------

/// Bytes of voice payload per snippet: ceil(snippet_ms * bitrate / 8) with
/// the bitrate in bits per second. 250 ms at 1.6 kbit/s gives 50 bytes.
pub fn snippet_capacity(snippet_ms: u32, bitrate_bps: u32) -> usize {
    ((snippet_ms as usize) * (bitrate_bps as usize)).div_ceil(8000)
}

/// Pad `raw` to exactly `capacity` bytes with a recoverable 2-byte length
/// prefix.
pub fn pad_snippet(raw: &[u8], capacity: usize) -> Result<Vec<u8>, WireError> {
    if raw.len() + 2 > capacity {
        return Err(WireError::Oversize {
            got: raw.len(),
            capacity,
        });
    }
    let mut out = Vec::with_capacity(capacity);
    out.extend_from_slice(&(raw.len() as u16).to_be_bytes());
    out.extend_from_slice(raw);
    out.resize(capacity, 0);
    Ok(out)
}

/// Recover the original payload from a padded snippet.
pub fn unpad_snippet(padded: &[u8]) -> Result<Vec<u8>, WireError> {
    if padded.len() < 2 {
        return Err(WireError::Truncated);
    }
    let len = u16::from_be_bytes([padded[0], padded[1]]) as usize;
    if 2 + len > padded.len() {
        return Err(WireError::Malformed("snippet length prefix"));
    }
    Ok(padded[2..2 + len].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn frame_roundtrip_and_exact_consumption() {
        let frame = encode_frame(MessageType::InviteSubmit, b"abc");
        let (decoded, used) = decode_frame(&frame, DEFAULT_MAX_FRAME).unwrap();
        assert_eq!(used, 8);
        assert_eq!(decoded.msg_type, MessageType::InviteSubmit);
        assert_eq!(decoded.payload, b"abc");
    }

    #[test]
    fn empty_payload_is_five_bytes() {
        assert_eq!(encode_frame(MessageType::Hello, b"").len(), 5);
    }

    #[test]
    fn three_concatenated_frames_leave_no_residue() {
        let mut stream = Vec::new();
        stream.extend(encode_frame(MessageType::Hello, b"a"));
        stream.extend(encode_frame(MessageType::Directory, b""));
        stream.extend(encode_frame(MessageType::AnswerSet, &[9; 100]));
        let mut off = 0;
        let mut frames = Vec::new();
        while off < stream.len() {
            let (f, used) = decode_frame(&stream[off..], DEFAULT_MAX_FRAME).unwrap();
            frames.push(f);
            off += used;
        }
        assert_eq!(off, stream.len());
        assert_eq!(frames.len(), 3);
        assert_eq!(frames[2].payload.len(), 100);
    }

    #[test]
    fn frame_error_cases() {
        assert_eq!(
            decode_frame(&[0, 0], DEFAULT_MAX_FRAME).unwrap_err(),
            WireError::Truncated
        );
        let mut bad = encode_frame(MessageType::Hello, b"x");
        bad[4] = 200;
        assert_eq!(
            decode_frame(&bad, DEFAULT_MAX_FRAME).unwrap_err(),
            WireError::UnknownType(200)
        );
        let big = encode_frame(MessageType::Hello, &[0; 100]);
        assert_eq!(
            decode_frame(&big, 10).unwrap_err(),
            WireError::OversizeFrame { got: 100, limit: 10 }
        );
        let short = encode_frame(MessageType::Hello, &[0; 10]);
        assert_eq!(
            decode_frame(&short[..8], DEFAULT_MAX_FRAME).unwrap_err(),
            WireError::Truncated
        );
    }

    #[test]
    fn snippet_capacity_matches_deployment_numbers() {
        assert_eq!(snippet_capacity(250, DEFAULT_BITRATE_BPS), 50); // 400 bits
        assert_eq!(snippet_capacity(60, DEFAULT_BITRATE_BPS), 12);
        assert_eq!(snippet_capacity(80, DEFAULT_BITRATE_BPS), 16);
        assert_eq!(snippet_capacity(40, DEFAULT_BITRATE_BPS), 8);
    }

    #[test]
    fn pad_roundtrip_and_bounds() {
        assert_eq!(unpad_snippet(&pad_snippet(b"", 50).unwrap()).unwrap(), b"");
        let msg = b"voice bits";
        let padded = pad_snippet(msg, 50).unwrap();
        assert_eq!(padded.len(), 50);
        assert_eq!(unpad_snippet(&padded).unwrap(), msg);
        assert!(matches!(
            pad_snippet(&[0; 49], 50),
            Err(WireError::Oversize { .. })
        ));
    }

    fn sample_announce() -> Message {
        Message::PhaseAnnounce(PhaseAnnounce {
            phase: PhaseKind::Dialing,
            schedule: EpochSchedule {
                epoch: 3,
                mapping_ms: 50,
                d1_ms: 100,
                d2_ms: 100,
                d3_ms: 20,
                d4_ms: 150,
                rounds: 10,
                round_ms: 200,
                snippet_ms: 250,
            },
            seed: MappingSeed([7; 16]),
            n_mailboxes: 5,
            n_buckets: 3,
            simulated_users: 0,
            relay_addrs: vec!["127.0.0.1:9001".parse().unwrap()],
            worker_addrs: vec![
                "127.0.0.1:9002".parse().unwrap(),
                "127.0.0.1:9003".parse().unwrap(),
            ],
        })
    }

    #[test]
    fn message_schemas_roundtrip() {
        let params = HeParams::default();
        let token = [3u8; AUTH_TOKEN_LEN];
        let messages = vec![
            Message::Hello(Hello {
                role: NodeRole::Relay,
                listen_addr: "127.0.0.1:8000".parse().unwrap(),
                pubkey: PublicKey([1; 32]),
                mailbox_id: 0,
            }),
            Message::RegInfo(RegInfo {
                mailbox_id: 2,
                auth_token: token,
                relay_addr: "127.0.0.1:8001".parse().unwrap(),
                worker_addr: "127.0.0.1:8002".parse().unwrap(),
                n_mailboxes: 4,
                pubkey: PublicKey([2; 32]),
            }),
            sample_announce(),
            Message::InviteSubmit(InviteSubmit {
                mailbox_id: 1,
                auth_token: token,
                epoch: 3,
                invite: Digest([9; 32]),
            }),
            Message::InviteBroadcast(InviteBroadcast {
                epoch: 3,
                invites: vec![Digest([1; 32]), Digest([2; 32])],
            }),
            Message::SnippetSubmit(SnippetSubmit {
                mailbox_id: 1,
                auth_token: token,
                epoch: 3,
                round: 2,
                sent_at_us: 42,
                ciphertext: vec![5; 64],
            }),
            Message::MailboxBroadcast(MailboxBroadcast {
                epoch: 3,
                round: 2,
                sent_at_us: 43,
                records: vec![(1, vec![0; 64]), (2, vec![1; 64])],
            }),
            Message::BucketLists(BucketLists {
                epoch: 3,
                seed: MappingSeed([7; 16]),
                n_mailboxes: 4,
                lists: vec![vec![1, 2], vec![2, 3, 4], vec![1, 3, 4], vec![1, 2, 3, 4]],
            }),
            Message::Directory(Directory {
                epoch: 3,
                entries: vec![(PublicKey([4; 32]), 1), (PublicKey([5; 32]), 2)],
            }),
        ];
        for msg in messages {
            let bytes = msg.encode(&params);
            let (frame, used) = decode_frame(&bytes, DEFAULT_MAX_FRAME).unwrap();
            assert_eq!(used, bytes.len());
            assert_eq!(Message::decode(&frame).unwrap(), msg);
        }
    }

    #[test]
    fn query_and_answer_messages_roundtrip() {
        use crate::pir::{pir_answer, pir_query, pir_setup, PirDatabase};
        use rand::SeedableRng;
        let mut r = rand_chacha::ChaCha20Rng::seed_from_u64(60);
        let kp = pir_setup(128, 4, &mut r);
        let params = kp.he.public.params;
        let (_, mut q) = pir_query(&kp.he.secret, 2, 4, &mut r).unwrap();
        q.client_tag = 7;
        q.bucket_index = 1;
        let mut db = PirDatabase::new(4, 16, params.limb_bits);
        db.preprocess();
        let ans = pir_answer(&kp.he.public, &db, &q).unwrap();

        let qmsg = Message::QuerySubmit(QuerySubmit {
            mailbox_id: 7,
            epoch: 1,
            queries: vec![q],
        });
        let bytes = qmsg.encode(&params);
        let (frame, _) = decode_frame(&bytes, DEFAULT_MAX_FRAME).unwrap();
        assert_eq!(Message::decode(&frame).unwrap(), qmsg);

        let amsg = Message::AnswerSet(AnswerSet {
            epoch: 1,
            round: 0,
            sent_at_us: 5,
            answers: vec![ans],
        });
        let bytes = amsg.encode(&params);
        let (frame, _) = decode_frame(&bytes, DEFAULT_MAX_FRAME).unwrap();
        // Answers decode with tag 0; the envelope identifies the client.
        match Message::decode(&frame).unwrap() {
            Message::AnswerSet(got) => {
                assert_eq!(got.answers.len(), 1);
                assert_eq!(got.answers[0].limbs, match &amsg {
                    Message::AnswerSet(a) => a.answers[0].limbs.clone(),
                    _ => unreachable!(),
                });
            }
            _ => panic!("wrong type"),
        }
    }

    #[test]
    fn privacy_sensitive_frames_have_content_independent_sizes() {
        let params = HeParams::default();
        let token = [0u8; AUTH_TOKEN_LEN];
        let len = |invite: Digest, mailbox: u32| {
            Message::InviteSubmit(InviteSubmit {
                mailbox_id: mailbox,
                auth_token: token,
                epoch: 9,
                invite,
            })
            .encode(&params)
            .len()
        };
        assert_eq!(len(Digest([0; 32]), 1), len(Digest([255; 32]), 77));

        let snip = |ct: Vec<u8>| {
            Message::SnippetSubmit(SnippetSubmit {
                mailbox_id: 1,
                auth_token: token,
                epoch: 1,
                round: 0,
                sent_at_us: 0,
                ciphertext: ct,
            })
            .encode(&params)
            .len()
        };
        assert_eq!(snip(vec![0; 64]), snip(vec![9; 64]));
    }

    proptest! {
        #[test]
        fn frame_roundtrip_any_payload(type_byte in 1u8..=11, payload in proptest::collection::vec(any::<u8>(), 0..2048)) {
            let t = MessageType::from_byte(type_byte).unwrap();
            let bytes = encode_frame(t, &payload);
            let (frame, used) = decode_frame(&bytes, DEFAULT_MAX_FRAME).unwrap();
            prop_assert_eq!(used, bytes.len());
            prop_assert_eq!(frame.msg_type, t);
            prop_assert_eq!(frame.payload, payload);
        }

        #[test]
        fn pad_roundtrip_any_snippet(capacity in 8usize..128, fill in 0.0f64..1.0) {
            let len = ((capacity - 2) as f64 * fill) as usize;
            let raw: Vec<u8> = (0..len).map(|i| i as u8).collect();
            let padded = pad_snippet(&raw, capacity).unwrap();
            prop_assert_eq!(padded.len(), capacity);
            prop_assert_eq!(unpad_snippet(&padded).unwrap(), raw);
        }
    }
}
