//! Relay: collects invites and snippets from its assigned clients,
//! broadcasts the assembled invite package to every participant, and pushes
//! per-round mailbox contents to every worker.
//!
//! Traffic shape is preserved no matter what clients do: a missing invite is
//! replaced by a relay-generated cover invite, a missing or late snippet by
//! uniformly random bytes of the same fixed size.

use super::NodeError;
use crate::crypto::{Digest, HeParams, SnippetCipher};
use crate::dialing::make_cover_invite;
use crate::net::{self, now_us, Event, NodeLog, Peer};
use crate::wire::{
    InviteBroadcast, MailboxBroadcast, Message, NodeRole, PhaseAnnounce, PhaseKind,
    AUTH_TOKEN_LEN, DEFAULT_MAX_FRAME,
};
use rand::Rng;
use std::collections::{BTreeMap, HashMap};
use std::net::{SocketAddrV4, TcpListener};
use std::path::PathBuf;
use std::sync::atomic::AtomicUsize;
use std::sync::mpsc;
use std::sync::Arc;
use std::time::{Duration, Instant};

/// Pure collection state. Submissions are keyed by epoch (and round), so a
/// client racing ahead of the coordinator's phase announcement can never be
/// dropped by an epoch rollover.
pub struct RelayCore {
    /// mailbox id -> auth token, for the clients assigned to this relay.
    assigned: BTreeMap<u32, [u8; AUTH_TOKEN_LEN]>,
    /// Fixed snippet ciphertext size for the current deployment.
    ct_len: usize,
    /// epoch -> mailbox -> invite.
    invites: HashMap<u64, BTreeMap<u32, Digest>>,
    /// (epoch, round) -> mailbox -> ciphertext.
    snippets: HashMap<(u64, u32), BTreeMap<u32, Vec<u8>>>,
}

impl RelayCore {
    pub fn new(ct_len: usize) -> Self {
        RelayCore {
            assigned: BTreeMap::new(),
            ct_len,
            invites: HashMap::new(),
            snippets: HashMap::new(),
        }
    }

    pub fn assign(&mut self, mailbox_id: u32, token: [u8; AUTH_TOKEN_LEN]) {
        self.assigned.insert(mailbox_id, token);
    }

    pub fn assigned_count(&self) -> usize {
        self.assigned.len()
    }

    pub fn set_ct_len(&mut self, ct_len: usize) {
        self.ct_len = ct_len;
    }

    /// Drop state from epochs before `current`.
    pub fn discard_before(&mut self, current: u64) {
        self.invites.retain(|e, _| *e >= current);
        self.snippets.retain(|(e, _), _| *e >= current);
    }

    fn check_token(&self, mailbox_id: u32, token: &[u8; AUTH_TOKEN_LEN]) -> Result<(), NodeError> {
        match self.assigned.get(&mailbox_id) {
            None => Err(NodeError::UnknownMailbox(mailbox_id)),
            Some(expected) if expected != token => Err(NodeError::BadToken(mailbox_id)),
            Some(_) => Ok(()),
        }
    }

    /// Record an invite; duplicates within the window are last-write-wins.
    pub fn accept_invite(
        &mut self,
        epoch: u64,
        mailbox_id: u32,
        token: &[u8; AUTH_TOKEN_LEN],
        invite: Digest,
    ) -> Result<(), NodeError> {
        self.check_token(mailbox_id, token)?;
        self.invites.entry(epoch).or_default().insert(mailbox_id, invite);
        Ok(())
    }

    pub fn all_invites_in(&self, epoch: u64) -> bool {
        self.invites
            .get(&epoch)
            .is_some_and(|m| m.len() == self.assigned.len())
    }

    /// One invite per assigned client in mailbox order; silent clients are
    /// covered by relay-generated cover invites so the package size never
    /// reveals who dialed.
    pub fn build_invite_broadcast(&self, epoch: u64, rng: &mut impl Rng) -> InviteBroadcast {
        let empty = BTreeMap::new();
        let got = self.invites.get(&epoch).unwrap_or(&empty);
        let invites = self
            .assigned
            .keys()
            .map(|id| match got.get(id) {
                Some(i) => *i,
                None => make_cover_invite(rng),
            })
            .collect();
        InviteBroadcast { epoch, invites }
    }

    /// Deposit a snippet ciphertext if the token matches and the size is
    /// right; last write within the round wins.
    pub fn accept_snippet(
        &mut self,
        epoch: u64,
        mailbox_id: u32,
        token: &[u8; AUTH_TOKEN_LEN],
        round: u32,
        ciphertext: Vec<u8>,
    ) -> Result<(), NodeError> {
        self.check_token(mailbox_id, token)?;
        if ciphertext.len() != self.ct_len {
            return Err(NodeError::WrongSize {
                got: ciphertext.len(),
                expected: self.ct_len,
            });
        }
        self.snippets
            .entry((epoch, round))
            .or_default()
            .insert(mailbox_id, ciphertext);
        Ok(())
    }

    pub fn round_complete(&self, epoch: u64, round: u32) -> bool {
        self.snippets
            .get(&(epoch, round))
            .is_some_and(|m| m.len() == self.assigned.len())
    }

    pub fn snippet(&self, epoch: u64, round: u32, mailbox_id: u32) -> Option<&Vec<u8>> {
        self.snippets
            .get(&(epoch, round))
            .and_then(|m| m.get(&mailbox_id))
    }

    /// One fixed-size record per assigned mailbox in ascending order;
    /// absent submissions are replaced by uniformly random bytes.
    pub fn build_mailbox_broadcast(
        &self,
        epoch: u64,
        round: u32,
        rng: &mut impl Rng,
    ) -> MailboxBroadcast {
        let empty = BTreeMap::new();
        let got = self.snippets.get(&(epoch, round)).unwrap_or(&empty);
        let records = self
            .assigned
            .keys()
            .map(|id| {
                let ct = match got.get(id) {
                    Some(ct) => ct.clone(),
                    None => {
                        let mut junk = vec![0u8; self.ct_len];
                        rng.fill_bytes(&mut junk);
                        junk
                    }
                };
                (*id, ct)
            })
            .collect();
        MailboxBroadcast {
            epoch,
            round,
            sent_at_us: 0,
            records,
        }
    }
}

pub struct RelayOpts {
    pub coordinator: SocketAddrV4,
    pub listen: SocketAddrV4,
    pub log: Option<PathBuf>,
}

struct EpochRun {
    announce: PhaseAnnounce,
    dialing_rx: Instant,
    com_rx: Option<Instant>,
    invites_sent: bool,
    next_round: u32,
}

pub fn run_relay(opts: RelayOpts) -> std::io::Result<()> {
    let params = HeParams::default();
    let log = NodeLog::create(opts.log.as_deref())?;
    let listener = TcpListener::bind(opts.listen)?;
    let local = match listener.local_addr()? {
        std::net::SocketAddr::V4(a) => a,
        _ => unreachable!(),
    };
    println!("LISTENING {local}");
    use std::io::Write as _;
    std::io::stdout().flush().ok();

    let (tx, rx) = mpsc::channel();
    let ids = Arc::new(AtomicUsize::new(0));
    net::spawn_acceptor(listener, tx.clone(), log.clone(), params, ids.clone(), DEFAULT_MAX_FRAME);
    let coord = net::connect(
        opts.coordinator,
        crate::wire::Hello {
            role: NodeRole::Relay,
            listen_addr: local,
            pubkey: crate::dialing::PublicKey([0; 32]),
            mailbox_id: 0,
        },
        tx.clone(),
        log.clone(),
        params,
        ids.clone(),
        Duration::from_secs(10),
        DEFAULT_MAX_FRAME,
    )?;
    let coord_id = coord.id;

    let mut rng = rand::thread_rng();
    let mut core = RelayCore::new(0);
    let mut client_peers: HashMap<usize, Peer> = HashMap::new();
    let mut n_total_clients = 0u32;
    let mut workers: Vec<Peer> = Vec::new();
    let mut workers_connected = false;
    let mut run: Option<EpochRun> = None;

    loop {
        let timeout = next_deadline(&run, &core, n_total_clients, client_peers.len());
        let event = match rx.recv_timeout(timeout) {
            Ok(ev) => Some(ev),
            Err(mpsc::RecvTimeoutError::Timeout) => None,
            Err(mpsc::RecvTimeoutError::Disconnected) => break,
        };
        match event {
            Some(Event::Connected(peer, hello)) => {
                if hello.role == NodeRole::Client {
                    // Late joiner catch-up: if this epoch's invite package
                    // already went out, repeat it for the newcomer.
                    if let Some(r) = &run {
                        if r.invites_sent {
                            let pkg = core.build_invite_broadcast(r.announce.schedule.epoch, &mut rng);
                            let _ = peer.send(&Message::InviteBroadcast(pkg));
                        }
                    }
                    client_peers.insert(peer.id, peer);
                }
            }
            Some(Event::Disconnected { peer }) => {
                client_peers.remove(&peer);
                if peer == coord_id {
                    break; // coordinator gone: shut down
                }
            }
            Some(Event::Message { msg, .. }) => match msg {
                Message::RegInfo(info) => {
                    core.assign(info.mailbox_id, info.auth_token);
                }
                Message::PhaseAnnounce(a) => match a.phase {
                    PhaseKind::Dialing => {
                        let capacity = crate::wire::snippet_capacity(
                            a.schedule.snippet_ms,
                            crate::wire::DEFAULT_BITRATE_BPS,
                        );
                        core.set_ct_len(SnippetCipher::new(capacity).ciphertext_len());
                        core.discard_before(a.schedule.epoch);
                        n_total_clients = a.n_mailboxes;
                        if !workers_connected {
                            for (i, addr) in a.worker_addrs.iter().enumerate() {
                                let peer = net::connect(
                                    *addr,
                                    crate::wire::Hello {
                                        role: NodeRole::Relay,
                                        listen_addr: local,
                                        pubkey: crate::dialing::PublicKey([0; 32]),
                                        mailbox_id: i as u32,
                                    },
                                    tx.clone(),
                                    log.clone(),
                                    params,
                                    ids.clone(),
                                    Duration::from_secs(10),
                                    DEFAULT_MAX_FRAME,
                                )?;
                                workers.push(peer);
                            }
                            workers_connected = true;
                        }
                        run = Some(EpochRun {
                            announce: a,
                            dialing_rx: Instant::now(),
                            com_rx: None,
                            invites_sent: false,
                            next_round: 0,
                        });
                    }
                    PhaseKind::Communication => {
                        if let Some(r) = &mut run {
                            r.com_rx = Some(Instant::now());
                        }
                    }
                },
                Message::InviteSubmit(m) => {
                    if let Err(e) = core.accept_invite(m.epoch, m.mailbox_id, &m.auth_token, m.invite)
                    {
                        log.line(&format!("W,invite_rejected,{},{e}", m.mailbox_id));
                    }
                }
                Message::SnippetSubmit(m) => {
                    let rx_us = now_us();
                    match core.accept_snippet(
                        m.epoch,
                        m.mailbox_id,
                        &m.auth_token,
                        m.round,
                        m.ciphertext,
                    ) {
                        Ok(()) => log.event(
                            m.epoch,
                            m.round as i64,
                            &format!("c_to_r_us:{}", m.mailbox_id),
                            rx_us.saturating_sub(m.sent_at_us),
                        ),
                        Err(e) => log.line(&format!("W,snippet_rejected,{},{e}", m.mailbox_id)),
                    }
                }
                _ => {}
            },
            None => {}
        }

        // Phase actions, on the fast path (everything collected) or at the
        // wall-clock deadline.
        if let Some(r) = &mut run {
            let epoch = r.announce.schedule.epoch;
            if !r.invites_sent {
                let due = r.dialing_rx + Duration::from_millis(r.announce.schedule.d1_ms as u64);
                let fast = core.all_invites_in(epoch)
                    && client_peers.len() as u32 >= n_total_clients
                    && core.assigned_count() > 0;
                if fast || Instant::now() >= due {
                    let pkg = core.build_invite_broadcast(epoch, &mut rng);
                    let msg = Message::InviteBroadcast(pkg);
                    for peer in client_peers.values() {
                        let _ = peer.send(&msg);
                    }
                    r.invites_sent = true;
                }
            }
            if let Some(com_rx) = r.com_rx {
                let schedule = r.announce.schedule;
                while r.next_round < schedule.rounds {
                    let round = r.next_round;
                    let cutoff = com_rx
                        + Duration::from_millis(
                            round as u64 * schedule.round_ms as u64 + schedule.round_ms as u64 / 2,
                        );
                    let fast = core.round_complete(epoch, round);
                    if !fast && Instant::now() < cutoff {
                        break;
                    }
                    let mut broadcast = core.build_mailbox_broadcast(epoch, round, &mut rng);
                    broadcast.sent_at_us = now_us();
                    let msg = Message::MailboxBroadcast(broadcast);
                    for w in &workers {
                        let _ = w.send(&msg);
                    }
                    r.next_round += 1;
                }
            }
        }
    }
    Ok(())
}

/// Earliest pending wall-clock deadline, as a recv timeout.
fn next_deadline(
    run: &Option<EpochRun>,
    core: &RelayCore,
    _n_total: u32,
    _connected: usize,
) -> Duration {
    let far = Duration::from_millis(500);
    let Some(r) = run else { return far };
    let mut due: Option<Instant> = None;
    if !r.invites_sent {
        due = Some(r.dialing_rx + Duration::from_millis(r.announce.schedule.d1_ms as u64));
    } else if let Some(com_rx) = r.com_rx {
        let schedule = r.announce.schedule;
        if r.next_round < schedule.rounds {
            let cutoff = com_rx
                + Duration::from_millis(
                    r.next_round as u64 * schedule.round_ms as u64
                        + schedule.round_ms as u64 / 2,
                );
            due = Some(cutoff);
        }
    }
    let _ = core;
    match due {
        Some(t) => t.saturating_duration_since(Instant::now()).min(far),
        None => far,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn token(b: u8) -> [u8; AUTH_TOKEN_LEN] {
        [b; AUTH_TOKEN_LEN]
    }

    fn core_with_clients(n: u32, ct_len: usize) -> RelayCore {
        let mut core = RelayCore::new(ct_len);
        for id in 1..=n {
            core.assign(id, token(id as u8));
        }
        core
    }

    #[test]
    fn invite_broadcast_covers_silent_clients() {
        let mut rng = ChaCha20Rng::seed_from_u64(80);
        let mut core = core_with_clients(3, 64);
        core.accept_invite(1, 1, &token(1), Digest([1; 32])).unwrap();
        core.accept_invite(1, 3, &token(3), Digest([3; 32])).unwrap();
        let pkg = core.build_invite_broadcast(1, &mut rng);
        assert_eq!(pkg.invites.len(), 3, "silent client still represented");
        assert_eq!(pkg.invites[0], Digest([1; 32]));
        assert_eq!(pkg.invites[2], Digest([3; 32]));
        assert_ne!(pkg.invites[1], Digest([0; 32]), "substituted cover invite");
    }

    #[test]
    fn invite_broadcast_is_sorted_and_deterministic_when_complete() {
        let mut rng = ChaCha20Rng::seed_from_u64(81);
        let mut core = core_with_clients(3, 64);
        for id in [2u32, 3, 1] {
            core.accept_invite(1, id, &token(id as u8), Digest([id as u8; 32]))
                .unwrap();
        }
        let a = core.build_invite_broadcast(1, &mut rng);
        let b = core.build_invite_broadcast(1, &mut rng);
        assert_eq!(a, b, "no randomness once every invite is present");
        assert_eq!(
            a.invites,
            vec![Digest([1; 32]), Digest([2; 32]), Digest([3; 32])]
        );
    }

    #[test]
    fn bad_token_leaves_previous_content() {
        let mut core = core_with_clients(2, 4);
        core.accept_snippet(1, 1, &token(1), 0, vec![9; 4]).unwrap();
        assert_eq!(
            core.accept_snippet(1, 1, &token(99), 0, vec![0; 4]).unwrap_err(),
            NodeError::BadToken(1)
        );
        assert_eq!(core.snippet(1, 0, 1).unwrap(), &vec![9; 4]);
        assert_eq!(
            core.accept_snippet(1, 5, &token(5), 0, vec![0; 4]).unwrap_err(),
            NodeError::UnknownMailbox(5)
        );
    }

    #[test]
    fn wrong_size_snippet_rejected() {
        let mut core = core_with_clients(1, 64);
        assert_eq!(
            core.accept_snippet(1, 1, &token(1), 0, vec![0; 63]).unwrap_err(),
            NodeError::WrongSize {
                got: 63,
                expected: 64
            }
        );
    }

    #[test]
    fn duplicate_snippet_last_write_wins() {
        let mut core = core_with_clients(1, 4);
        core.accept_snippet(1, 1, &token(1), 2, vec![1; 4]).unwrap();
        core.accept_snippet(1, 1, &token(1), 2, vec![2; 4]).unwrap();
        assert_eq!(core.snippet(1, 2, 1).unwrap(), &vec![2; 4]);
    }

    #[test]
    fn mailbox_broadcast_has_fixed_shape() {
        let mut rng = ChaCha20Rng::seed_from_u64(82);
        let mut core = core_with_clients(3, 8);
        core.accept_snippet(1, 2, &token(2), 0, vec![5; 8]).unwrap();
        let b = core.build_mailbox_broadcast(1, 0, &mut rng);
        assert_eq!(b.records.len(), 3);
        assert!(b.records.windows(2).all(|w| w[0].0 < w[1].0));
        assert!(b.records.iter().all(|(_, ct)| ct.len() == 8));
        assert_eq!(b.records[1].1, vec![5; 8]);
        // Substitutes are random, not zero.
        assert_ne!(b.records[0].1, vec![0; 8]);

        // Size is scenario independent: all present vs none present.
        core.accept_snippet(1, 1, &token(1), 0, vec![6; 8]).unwrap();
        core.accept_snippet(1, 3, &token(3), 0, vec![7; 8]).unwrap();
        let full = core.build_mailbox_broadcast(1, 0, &mut rng);
        assert_eq!(full.records.len(), b.records.len());
        let size = |m: &MailboxBroadcast| {
            Message::MailboxBroadcast(m.clone())
                .encode(&HeParams::default())
                .len()
        };
        assert_eq!(size(&full), size(&b));
    }

    #[test]
    fn round_completion_tracks_assigned_set() {
        let mut core = core_with_clients(2, 4);
        assert!(!core.round_complete(1, 0));
        core.accept_snippet(1, 1, &token(1), 0, vec![0; 4]).unwrap();
        assert!(!core.round_complete(1, 0));
        core.accept_snippet(1, 2, &token(2), 0, vec![0; 4]).unwrap();
        assert!(core.round_complete(1, 0));
        assert!(!core.round_complete(1, 1));
    }
}
