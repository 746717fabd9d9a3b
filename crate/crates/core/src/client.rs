//! Full client behavior: registration, per-epoch dialing with cover
//! discipline, per-round snippet submission, answer decoding, and snippet
//! mixing.
//!
//! The client is one sequential state machine; network receive happens on
//! reader threads but every state transition runs on the main loop. Its
//! observable behavior is the same whether or not it is in a call: one
//! invite, one query set, one snippet per round, all of fixed size.

use crate::crypto::{derive_round_iv, GroupMasterKey, HeParams, SnippetCipher, SymCiphertext};
use crate::dialing::{
    choose_call, make_cover_invite, make_invite, process_invites, EpochNumber, GroupDescriptor,
    Invite, PublicKey,
};
use crate::mapping::{build_mapping, select_indices, BucketMapping, IndexSelection};
use crate::net::{self, now_us, Event, NodeLog, Peer};
use crate::nodes::effective_bucket_sizes;
use crate::pir::{
    pir_decode, pir_empty_query, pir_query, pir_setup, PirKeyPair, PirQuery, PirState,
};
use crate::wire::{
    AnswerSet, Directory, InviteSubmit, Message, NodeRole, PhaseAnnounce, PhaseKind, QuerySubmit,
    RegInfo, SnippetSubmit, DEFAULT_BITRATE_BPS, DEFAULT_MAX_FRAME,
};
use rand::{Rng, RngCore};
use std::collections::{BTreeMap, HashMap, HashSet};
use std::net::{SocketAddrV4, TcpListener};
use std::path::PathBuf;
use std::sync::atomic::AtomicUsize;
use std::sync::mpsc;
use std::sync::Arc;
use std::time::{Duration, Instant};

/// What one client learned in one communication round.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoundOutput {
    pub round: u32,
    /// (sender mailbox, recovered payload) for every real retrieval that
    /// decrypted; cover retrievals are discarded before this point.
    pub recovered: Vec<(u32, Vec<u8>)>,
    /// Concatenated (sender, payload) record used by the testbed in place
    /// of audio overlay.
    pub mixed: Vec<u8>,
}

/// Overlay snippets by interpreting them as little-endian signed 16-bit
/// samples and saturating-adding per sample.
pub fn mix(snippets: &[Vec<u8>]) -> Vec<u8> {
    let Some(first) = snippets.first() else {
        return Vec::new();
    };
    let len = first.len();
    debug_assert!(snippets.iter().all(|s| s.len() == len));
    let mut acc: Vec<i16> = vec![0; len / 2];
    for s in snippets {
        for (i, chunk) in s.chunks_exact(2).enumerate() {
            let sample = i16::from_le_bytes([chunk[0], chunk[1]]);
            acc[i] = acc[i].saturating_add(sample);
        }
    }
    let mut out = Vec::with_capacity(len);
    for v in &acc {
        out.extend_from_slice(&v.to_le_bytes());
    }
    // Odd trailing byte passes through from the first snippet.
    if len % 2 == 1 {
        out.push(first[len - 1]);
    }
    out
}

/// Deterministic synthetic voice payload: sender, epoch, and round tags.
/// Fits the smallest deployed snippet capacity (8 bytes at 40 ms).
pub fn make_voice_payload(mailbox_id: u32, epoch: u64, round: u32) -> Vec<u8> {
    let mut p = Vec::with_capacity(4);
    p.extend_from_slice(&(mailbox_id as u16).to_be_bytes());
    p.push(epoch as u8);
    p.push(round as u8);
    p
}

/// Ordered (sender, payload) record: the testbed's stand-in for the audio
/// overlay when payloads are opaque test data.
pub fn mix_record(entries: &[(u32, Vec<u8>)]) -> Vec<u8> {
    let mut out = Vec::new();
    for (sender, payload) in entries {
        out.extend_from_slice(&(*sender as u16).to_be_bytes());
        out.extend_from_slice(&(payload.len() as u16).to_be_bytes());
        out.extend_from_slice(payload);
    }
    out
}

/// Per-bucket query material kept client-side for decoding.
pub struct BucketQueryState {
    pub state: PirState,
    /// Target mailbox when the retrieval is real.
    pub target: Option<u32>,
}

/// Build one query per bucket from an index selection. Real choices use
/// their matched position; cover buckets draw a fresh uniform position over
/// the effective (possibly inflated) bucket size.
pub fn build_queries(
    kp: &PirKeyPair,
    selection: &IndexSelection,
    effective_sizes: &[usize],
    client_tag: u32,
    rng: &mut impl Rng,
) -> (Vec<BucketQueryState>, Vec<PirQuery>) {
    let mut states = Vec::with_capacity(effective_sizes.len());
    let mut queries = Vec::with_capacity(effective_sizes.len());
    for (i, &size) in effective_sizes.iter().enumerate() {
        let choice = &selection.choices[i];
        let (mut st, mut q) = if size == 0 {
            pir_empty_query()
        } else if let (Some(_), false) = (choice.target, selection.all_random) {
            pir_query(&kp.he.secret, choice.position as usize, size, rng)
                .expect("matched position within bucket")
        } else {
            let idx = rng.gen_range(1..=size);
            let (mut st, q) = pir_query(&kp.he.secret, idx, size, rng).expect("index in range");
            st.is_cover = true;
            (st, q)
        };
        let target = if selection.all_random { None } else { choice.target };
        if target.is_none() {
            st.is_cover = true;
        }
        q.client_tag = client_tag;
        q.bucket_index = i as u32 + 1;
        states.push(BucketQueryState { state: st, target });
        queries.push(q);
    }
    (states, queries)
}

pub struct ClientOpts {
    pub coordinator: SocketAddrV4,
    pub pubkey: PublicKey,
    /// (group id, descriptor) pairs from the group file.
    pub groups: Vec<(String, GroupDescriptor)>,
    pub epochs: u64,
    /// epoch -> group id to dial.
    pub dial_plan: HashMap<u64, String>,
    pub log: Option<PathBuf>,
    /// Register and listen but never submit anything; exercises the
    /// servers' substitution paths.
    pub mute: bool,
}

/// Messages a client may have to hold onto until its state machine is
/// ready for them.
#[derive(Default)]
struct Inbox {
    reg_info: Option<RegInfo>,
    directories: HashMap<u64, Directory>,
    announces: HashMap<(u64, u8), PhaseAnnounce>,
    invite_broadcasts: HashMap<u64, Vec<Vec<Invite>>>,
    answers: HashMap<(u64, u32), AnswerSet>,
}

fn stash(inbox: &mut Inbox, msg: Message) {
    match msg {
        Message::RegInfo(m) => inbox.reg_info = Some(m),
        Message::Directory(m) => {
            inbox.directories.insert(m.epoch, m);
        }
        Message::PhaseAnnounce(m) => {
            inbox.announces.insert((m.schedule.epoch, m.phase as u8), m);
        }
        Message::InviteBroadcast(m) => {
            inbox.invite_broadcasts.entry(m.epoch).or_default().push(m.invites);
        }
        Message::AnswerSet(m) => {
            inbox.answers.insert((m.epoch, m.round), m);
        }
        _ => {}
    }
}

/// Pump events until `ready` or the deadline; returns whether `ready`.
fn pump(
    rx: &mpsc::Receiver<Event>,
    inbox: &mut Inbox,
    deadline: Instant,
    mut ready: impl FnMut(&Inbox) -> bool,
) -> bool {
    loop {
        if ready(inbox) {
            return true;
        }
        let now = Instant::now();
        if now >= deadline {
            return false;
        }
        match rx.recv_timeout(deadline - now) {
            Ok(Event::Message { msg, .. }) => stash(inbox, msg),
            Ok(_) => {}
            Err(mpsc::RecvTimeoutError::Timeout) => return false,
            Err(mpsc::RecvTimeoutError::Disconnected) => return false,
        }
    }
}

pub fn run_client(opts: ClientOpts) -> std::io::Result<()> {
    let params = HeParams::default();
    let log = NodeLog::create(opts.log.as_deref())?;
    let (tx, rx) = mpsc::channel();
    let ids = Arc::new(AtomicUsize::new(0));
    // Clients accept no connections; the listener exists only so that the
    // acceptor plumbing is uniform (never advertised).
    drop(TcpListener::bind("127.0.0.1:0")?);

    let mut rng = rand::thread_rng();
    let mut inbox = Inbox::default();

    let coordinator = net::connect(
        opts.coordinator,
        crate::wire::Hello {
            role: NodeRole::Client,
            listen_addr: net::no_addr(),
            pubkey: opts.pubkey,
            mailbox_id: 0,
        },
        tx.clone(),
        log.clone(),
        params,
        ids.clone(),
        Duration::from_secs(20),
        DEFAULT_MAX_FRAME,
    )?;
    let _ = coordinator;

    if !pump(&rx, &mut inbox, Instant::now() + Duration::from_secs(30), |i| {
        i.reg_info.is_some()
    }) {
        return Err(std::io::Error::other("registration timed out"));
    }
    let reg = inbox.reg_info.expect("just checked");
    let mailbox_id = reg.mailbox_id;
    let token = reg.auth_token;
    log.line(&format!("I,registered,{mailbox_id}"));

    let hello = crate::wire::Hello {
        role: NodeRole::Client,
        listen_addr: net::no_addr(),
        pubkey: opts.pubkey,
        mailbox_id,
    };
    let worker = net::connect(
        reg.worker_addr,
        hello,
        tx.clone(),
        log.clone(),
        params,
        ids.clone(),
        Duration::from_secs(20),
        DEFAULT_MAX_FRAME,
    )?;
    let mut relays: HashMap<SocketAddrV4, Peer> = HashMap::new();
    let own_relay_addr = reg.relay_addr;

    for epoch in 1..=opts.epochs {
        let e = epoch;
        // Wait for the dialing announcement and this epoch's directory.
        let got = pump(&rx, &mut inbox, Instant::now() + Duration::from_secs(60), |i| {
            i.announces.contains_key(&(e, PhaseKind::Dialing as u8))
                && i.directories.contains_key(&e)
        });
        if !got {
            log.line(&format!("P,{e},phase_missed"));
            continue;
        }
        let announce = inbox.announces[&(e, PhaseKind::Dialing as u8)].clone();
        let dialing_rx = Instant::now();
        let directory: BTreeMap<PublicKey, u32> = inbox.directories[&e]
            .entries
            .iter()
            .copied()
            .collect();

        // One long-lived connection per relay; the non-assigned ones only
        // deliver their invite broadcasts.
        for addr in &announce.relay_addrs {
            if !relays.contains_key(addr) {
                let peer = net::connect(
                    *addr,
                    hello,
                    tx.clone(),
                    log.clone(),
                    params,
                    ids.clone(),
                    Duration::from_secs(10),
                    DEFAULT_MAX_FRAME,
                )?;
                relays.insert(*addr, peer);
            }
        }

        // D1: exactly one invite, real iff we intend to dial.
        let intent = opts.dial_plan.get(&e).and_then(|gid| {
            opts.groups
                .iter()
                .position(|(name, _)| name == gid)
        });
        let invite = match intent {
            Some(gi) => {
                let g = &opts.groups[gi].1;
                make_invite(&g.gmk, &g.member_pubkeys[g.my_index], EpochNumber(e))
            }
            None => make_cover_invite(&mut rng),
        };
        if !opts.mute {
            let _ = relays[&own_relay_addr].send(&Message::InviteSubmit(InviteSubmit {
                mailbox_id,
                auth_token: token,
                epoch: e,
                invite,
            }));
        }

        // D2/D3: gather every relay's broadcast, then decide.
        let n_relays = announce.relay_addrs.len();
        let d3_deadline = dialing_rx
            + Duration::from_millis(
                (announce.schedule.d1_ms + announce.schedule.d2_ms + announce.schedule.d3_ms)
                    as u64,
            );
        pump(&rx, &mut inbox, d3_deadline, |i| {
            i.invite_broadcasts.get(&e).map_or(0, |v| v.len()) >= n_relays
        });
        let received: HashSet<Invite> = inbox
            .invite_broadcasts
            .remove(&e)
            .unwrap_or_default()
            .into_iter()
            .flatten()
            .collect();
        let descriptors: Vec<GroupDescriptor> =
            opts.groups.iter().map(|(_, g)| g.clone()).collect();
        let candidates = process_invites(&received, &descriptors, EpochNumber(e));
        let decision = choose_call(&candidates);

        // D4: rebuild the mapping locally and select per-bucket indices.
        let mapping: BucketMapping =
            build_mapping(announce.n_mailboxes, announce.n_buckets, &announce.seed);
        let targets: Vec<u32> = match decision.group {
            Some(gi) => {
                let g = &descriptors[gi];
                g.member_pubkeys
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != g.my_index)
                    .filter_map(|(_, pk)| directory.get(pk).copied())
                    .collect()
            }
            None => Vec::new(),
        };
        let selection = select_indices(&targets, &mapping, &mut rng)
            .expect("targets come from the directory");
        let in_call = decision.group.is_some() && !selection.all_random;
        log.line(&format!(
            "D,{e},{},{},{},{}",
            u8::from(intent.is_some()),
            decision
                .group
                .map_or("-".to_string(), |gi| opts.groups[gi].0.clone()),
            u8::from(selection.all_random),
            targets.len()
        ));

        let sizes = effective_bucket_sizes(&mapping, announce.simulated_users);
        let max_items = sizes.iter().copied().max().unwrap_or(1).max(1);
        let kp = pir_setup(128, max_items, &mut rng);
        let (bucket_states, queries) =
            build_queries(&kp, &selection, &sizes, mailbox_id, &mut rng);
        if !opts.mute {
            let _ = worker.send(&Message::QuerySubmit(QuerySubmit {
                mailbox_id,
                epoch: e,
                queries,
            }));
        }

        // Communication phase.
        let got = pump(&rx, &mut inbox, Instant::now() + Duration::from_secs(60), |i| {
            i.announces.contains_key(&(e, PhaseKind::Communication as u8))
        });
        if !got {
            log.line(&format!("P,{e},communication_missed"));
            continue;
        }
        let com_rx = Instant::now();
        let schedule = announce.schedule;
        let capacity = crate::wire::snippet_capacity(schedule.snippet_ms, DEFAULT_BITRATE_BPS);
        let cipher = SnippetCipher::new(capacity);
        let gmk: Option<GroupMasterKey> = decision.group.map(|gi| descriptors[gi].gmk);
        let epoch_iv = decision.epoch_iv;

        for round in 0..schedule.rounds {
            let round_start = com_rx + Duration::from_millis(round as u64 * schedule.round_ms as u64);
            pump(&rx, &mut inbox, round_start, |_| false);

            // C1: one fixed-size submission, real encryption only in a call
            // with successful matching; otherwise random bytes that decrypt
            // to nothing.
            let t0 = Instant::now();
            let payload = make_voice_payload(mailbox_id, e, round);
            let padded = crate::wire::pad_snippet(&payload, capacity).expect("payload fits");
            let voice_encode_us = t0.elapsed().as_micros() as u64;
            let t1 = Instant::now();
            let ct = if in_call {
                let iv = derive_round_iv(&epoch_iv.expect("in call"), round);
                cipher
                    .encrypt(gmk.as_ref().expect("in call"), &iv, &padded)
                    .expect("padded payload within capacity")
                    .0
            } else {
                let mut junk = vec![0u8; cipher.ciphertext_len()];
                rng.fill_bytes(&mut junk);
                junk
            };
            let encrypt_us = t1.elapsed().as_micros() as u64;
            log.event(e, round as i64, "voice_encode_us", voice_encode_us);
            log.event(e, round as i64, "encrypt_us", encrypt_us);
            if !opts.mute {
                let _ = relays[&own_relay_addr].send(&Message::SnippetSubmit(SnippetSubmit {
                    mailbox_id,
                    auth_token: token,
                    epoch: e,
                    round,
                    sent_at_us: now_us(),
                    ciphertext: ct,
                }));
            }

            // C4: decode once our answer set arrives.
            let answer_deadline = round_start
                + Duration::from_millis(2 * schedule.round_ms as u64);
            let got = pump(&rx, &mut inbox, answer_deadline, |i| {
                i.answers.contains_key(&(e, round))
            });
            if !got {
                log.line(&format!("X,{e},{round},timeout"));
                continue;
            }
            let answers = inbox.answers.remove(&(e, round)).expect("just checked");
            let rx_us = now_us();
            log.event(e, round as i64, "w_to_c_us", rx_us.saturating_sub(answers.sent_at_us));
            let output = decode_round(
                &log,
                e,
                round,
                answers,
                &bucket_states,
                &kp,
                &cipher,
                gmk.as_ref(),
                epoch_iv.as_ref(),
                in_call,
            );
            for (sender, payload) in &output.recovered {
                log.line(&format!("O,{e},{round},{sender},{}", hex::encode(payload)));
            }
            log.line(&format!("M,{e},{round},{}", hex::encode(&output.mixed)));
        }
    }
    Ok(())
}

/// Discard cover answers, PIR-decode the real ones, decrypt, unpad, and
/// assemble the round output.
#[allow(clippy::too_many_arguments)]
fn decode_round(
    log: &NodeLog,
    epoch: u64,
    round: u32,
    answers: AnswerSet,
    bucket_states: &[BucketQueryState],
    kp: &PirKeyPair,
    cipher: &SnippetCipher,
    gmk: Option<&GroupMasterKey>,
    epoch_iv: Option<&[u8; 16]>,
    in_call: bool,
) -> RoundOutput {
    let mut recovered: Vec<(u32, Vec<u8>)> = Vec::new();
    if in_call {
        let by_bucket: HashMap<u32, _> = answers
            .answers
            .iter()
            .map(|a| (a.bucket_index, a))
            .collect();
        let t0 = Instant::now();
        let mut decoded: Vec<(u32, Vec<u8>)> = Vec::new();
        for (i, bs) in bucket_states.iter().enumerate() {
            let Some(target) = bs.target else { continue };
            let Some(answer) = by_bucket.get(&(i as u32 + 1)) else {
                continue;
            };
            decoded.push((target, pir_decode(&kp.he.secret, &bs.state, answer)));
        }
        let pir_decode_us = t0.elapsed().as_micros() as u64;
        log.event(epoch, round as i64, "pir_decode_us", pir_decode_us);

        let t1 = Instant::now();
        let mut padded: Vec<(u32, Vec<u8>)> = Vec::new();
        for (target, item) in decoded {
            let iv = derive_round_iv(epoch_iv.expect("in call"), round);
            match cipher.decrypt(gmk.expect("in call"), &iv, &SymCiphertext(item)) {
                Ok(p) => padded.push((target, p)),
                // Partner never wrote real data this round (matching
                // fallback or missed deadline); not for us.
                Err(_) => log.line(&format!("X,{epoch},{round},{target}")),
            }
        }
        let decrypt_us = t1.elapsed().as_micros() as u64;
        log.event(epoch, round as i64, "decrypt_us", decrypt_us);

        let t2 = Instant::now();
        for (target, p) in padded {
            match crate::wire::unpad_snippet(&p) {
                Ok(raw) => recovered.push((target, raw)),
                Err(_) => log.line(&format!("X,{epoch},{round},{target}")),
            }
        }
        let voice_decode_us = t2.elapsed().as_micros() as u64;
        log.event(epoch, round as i64, "voice_decode_us", voice_decode_us);
    }
    recovered.sort_by_key(|(s, _)| *s);
    let mixed = mix_record(&recovered);
    RoundOutput {
        round,
        recovered,
        mixed,
    }
}

/// Parse a group file: one group per line,
/// `<group id> <gmk hex> <member pubkey hex>...`, comments with `#`.
pub fn parse_group_file(
    text: &str,
    my_pubkey: &PublicKey,
) -> Result<Vec<(String, GroupDescriptor)>, String> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split_whitespace();
        let id = fields
            .next()
            .ok_or_else(|| format!("line {}: missing group id", lineno + 1))?
            .to_string();
        let gmk_hex = fields
            .next()
            .ok_or_else(|| format!("line {}: missing group key", lineno + 1))?;
        let gmk_bytes =
            hex::decode(gmk_hex).map_err(|e| format!("line {}: bad key hex: {e}", lineno + 1))?;
        let gmk = GroupMasterKey(
            gmk_bytes
                .try_into()
                .map_err(|_| format!("line {}: key must be 32 bytes", lineno + 1))?,
        );
        let mut member_pubkeys = Vec::new();
        for pk_hex in fields {
            let pk = hex::decode(pk_hex)
                .map_err(|e| format!("line {}: bad pubkey hex: {e}", lineno + 1))?;
            member_pubkeys.push(PublicKey(pk.try_into().map_err(|_| {
                format!("line {}: pubkey must be 32 bytes", lineno + 1)
            })?));
        }
        let my_index = member_pubkeys
            .iter()
            .position(|pk| pk == my_pubkey)
            .ok_or_else(|| format!("line {}: group {id} does not include this client", lineno + 1))?;
        out.push((
            id,
            GroupDescriptor {
                gmk,
                member_pubkeys,
                my_index,
            },
        ));
    }
    Ok(out)
}
