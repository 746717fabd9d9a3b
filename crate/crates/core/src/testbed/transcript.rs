//! Parsing of node log files and the per-phase traffic-shape view used by
//! the privacy tests.
//!
//! A transcript is what one server observes: for every frame, the
//! direction, message type, and size. The shape of a run at a node is the
//! per-phase multiset of `(direction, type, size)` triples; two scenarios
//! are indistinguishable at the traffic layer when these multisets are
//! equal at every server.

use crate::wire::MessageType;
use std::collections::BTreeMap;

/// Protocol step a message belongs to, derived from its type so the
/// assignment never depends on arrival timing.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub enum Phase {
    Registration,
    MappingGeneration,
    InviteSending,
    InviteBroadcast,
    QueryGeneration,
    SnippetSending,
    CiphertextDistribution,
    QueryAnswering,
}

impl Phase {
    pub fn of(msg_type: MessageType) -> Phase {
        match msg_type {
            MessageType::Hello | MessageType::RegInfo => Phase::Registration,
            MessageType::PhaseAnnounce | MessageType::BucketLists | MessageType::Directory => {
                Phase::MappingGeneration
            }
            MessageType::InviteSubmit => Phase::InviteSending,
            MessageType::InviteBroadcast => Phase::InviteBroadcast,
            MessageType::QuerySubmit => Phase::QueryGeneration,
            MessageType::SnippetSubmit => Phase::SnippetSending,
            MessageType::MailboxBroadcast => Phase::CiphertextDistribution,
            MessageType::AnswerSet => Phase::QueryAnswering,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Registration => "registration",
            Phase::MappingGeneration => "mapping",
            Phase::InviteSending => "d1",
            Phase::InviteBroadcast => "d2",
            Phase::QueryGeneration => "d4",
            Phase::SnippetSending => "c1",
            Phase::CiphertextDistribution => "c2",
            Phase::QueryAnswering => "c3",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct TranscriptEntry {
    pub ts_us: u64,
    /// "send" or "recv" as logged.
    pub outbound: bool,
    pub msg_type: MessageType,
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventRecord {
    pub ts_us: u64,
    pub epoch: u64,
    pub round: i64,
    pub key: String,
    pub value: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OutputRecord {
    pub epoch: u64,
    pub round: u32,
    pub sender: u32,
    pub payload: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecisionRecord {
    pub epoch: u64,
    pub dialed: bool,
    pub accepted_group: Option<String>,
    pub all_random: bool,
    pub n_targets: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MissRecord {
    pub epoch: u64,
    pub round: u32,
    /// Target mailbox, or none for a whole-round timeout.
    pub target: Option<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AssignmentRecord {
    pub mailbox_id: u32,
    pub pubkey: [u8; 32],
    pub relay_idx: usize,
    pub worker_idx: usize,
}

/// Everything one node logged during a run.
#[derive(Clone, Debug, Default)]
pub struct NodeLogData {
    pub transcript: Vec<TranscriptEntry>,
    pub events: Vec<EventRecord>,
    pub outputs: Vec<OutputRecord>,
    pub mixes: Vec<(u64, u32, Vec<u8>)>,
    pub decisions: Vec<DecisionRecord>,
    pub misses: Vec<MissRecord>,
    pub assignments: Vec<AssignmentRecord>,
    pub warnings: Vec<String>,
}

/// Per-phase multiset of (direction, message type, size) with counts.
pub type ShapeMultiset = BTreeMap<(Phase, bool, u8, usize), usize>;

impl NodeLogData {
    pub fn shape(&self) -> ShapeMultiset {
        let mut shape = ShapeMultiset::new();
        for e in &self.transcript {
            *shape
                .entry((Phase::of(e.msg_type), e.outbound, e.msg_type as u8, e.size))
                .or_default() += 1;
        }
        shape
    }

    pub fn events_for(&self, epoch: u64, round: i64, key: &str) -> Vec<u64> {
        self.events
            .iter()
            .filter(|e| e.epoch == epoch && e.round == round && e.key == key)
            .map(|e| e.value)
            .collect()
    }

    pub fn event(&self, epoch: u64, round: i64, key: &str) -> Option<u64> {
        self.events_for(epoch, round, key).first().copied()
    }
}

pub fn parse_node_log(text: &str) -> Result<NodeLogData, String> {
    let mut data = NodeLogData::default();
    for (n, line) in text.lines().enumerate() {
        let err = |msg: &str| format!("log line {}: {msg}: {line}", n + 1);
        let mut fields = line.split(',');
        match fields.next() {
            Some("T") => {
                let ts_us = next_u64(&mut fields).map_err(&err)?;
                let dir = fields.next().ok_or_else(|| err("missing direction"))?;
                let ty = next_u64(&mut fields).map_err(&err)? as u8;
                let size = next_u64(&mut fields).map_err(&err)? as usize;
                data.transcript.push(TranscriptEntry {
                    ts_us,
                    outbound: dir == "send",
                    msg_type: MessageType::from_byte(ty).map_err(|_| err("bad type"))?,
                    size,
                });
            }
            Some("E") => {
                let ts_us = next_u64(&mut fields).map_err(&err)?;
                let epoch = next_u64(&mut fields).map_err(&err)?;
                let round = fields
                    .next()
                    .and_then(|f| f.parse::<i64>().ok())
                    .ok_or_else(|| err("bad round"))?;
                let key = fields.next().ok_or_else(|| err("missing key"))?.to_string();
                let value = next_u64(&mut fields).map_err(&err)?;
                data.events.push(EventRecord {
                    ts_us,
                    epoch,
                    round,
                    key,
                    value,
                });
            }
            Some("O") => {
                let epoch = next_u64(&mut fields).map_err(&err)?;
                let round = next_u64(&mut fields).map_err(&err)? as u32;
                let sender = next_u64(&mut fields).map_err(&err)? as u32;
                let payload = hex::decode(fields.next().unwrap_or_default())
                    .map_err(|_| err("bad payload hex"))?;
                data.outputs.push(OutputRecord {
                    epoch,
                    round,
                    sender,
                    payload,
                });
            }
            Some("M") => {
                let epoch = next_u64(&mut fields).map_err(&err)?;
                let round = next_u64(&mut fields).map_err(&err)? as u32;
                let mixed = hex::decode(fields.next().unwrap_or_default())
                    .map_err(|_| err("bad mix hex"))?;
                data.mixes.push((epoch, round, mixed));
            }
            Some("D") => {
                let epoch = next_u64(&mut fields).map_err(&err)?;
                let dialed = next_u64(&mut fields).map_err(&err)? == 1;
                let group = fields.next().ok_or_else(|| err("missing group"))?;
                let all_random = next_u64(&mut fields).map_err(&err)? == 1;
                let n_targets = next_u64(&mut fields).map_err(&err)? as usize;
                data.decisions.push(DecisionRecord {
                    epoch,
                    dialed,
                    accepted_group: (group != "-").then(|| group.to_string()),
                    all_random,
                    n_targets,
                });
            }
            Some("X") => {
                let epoch = next_u64(&mut fields).map_err(&err)?;
                let round = next_u64(&mut fields).map_err(&err)? as u32;
                let target = fields
                    .next()
                    .and_then(|f| f.parse::<u32>().ok());
                data.misses.push(MissRecord {
                    epoch,
                    round,
                    target,
                });
            }
            Some("A") => {
                let mailbox_id = next_u64(&mut fields).map_err(&err)? as u32;
                let pk = hex::decode(fields.next().unwrap_or_default())
                    .map_err(|_| err("bad pubkey hex"))?;
                let relay_idx = next_u64(&mut fields).map_err(&err)? as usize;
                let worker_idx = next_u64(&mut fields).map_err(&err)? as usize;
                data.assignments.push(AssignmentRecord {
                    mailbox_id,
                    pubkey: pk.try_into().map_err(|_| err("pubkey length"))?,
                    relay_idx,
                    worker_idx,
                });
            }
            Some("W") => data.warnings.push(line.to_string()),
            Some("I") | Some("P") => {}
            Some(other) => return Err(err(&format!("unknown record kind {other}"))),
            None => {}
        }
    }
    Ok(data)
}

fn next_u64<'a>(fields: &mut impl Iterator<Item = &'a str>) -> Result<u64, &'static str> {
    fields
        .next()
        .and_then(|f| f.parse::<u64>().ok())
        .ok_or("bad integer field")
}

/// Human-readable differences between two shapes; empty means equal.
pub fn shape_diff(a: &ShapeMultiset, b: &ShapeMultiset) -> Vec<String> {
    let mut out = Vec::new();
    let keys: std::collections::BTreeSet<_> = a.keys().chain(b.keys()).collect();
    for key in keys {
        let ca = a.get(key).copied().unwrap_or(0);
        let cb = b.get(key).copied().unwrap_or(0);
        if ca != cb {
            let (phase, outbound, ty, size) = key;
            out.push(format!(
                "{} {} type={ty} size={size}: {ca} vs {cb}",
                phase.as_str(),
                if *outbound { "send" } else { "recv" },
            ));
        }
    }
    out
}
