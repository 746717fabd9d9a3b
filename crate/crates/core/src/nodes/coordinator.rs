//! Coordinator: registers clients, assigns relays and workers round-robin,
//! and orchestrates epochs by generating the bucket mapping and announcing
//! phase starts.

use super::NodeError;
use crate::crypto::HeParams;
use crate::dialing::PublicKey;
use crate::mapping::{build_mapping, n_buckets_for, BucketMapping, MappingSeed};
use crate::net::{self, Event, NodeLog, Peer};
use crate::wire::{
    BucketLists, Directory, EpochSchedule, Message, NodeRole, PhaseAnnounce, PhaseKind, RegInfo,
    AUTH_TOKEN_LEN, DEFAULT_MAX_FRAME,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use std::collections::HashMap;
use std::net::{SocketAddrV4, TcpListener};
use std::path::PathBuf;
use std::sync::atomic::AtomicUsize;
use std::sync::mpsc;
use std::sync::Arc;
use std::time::{Duration, Instant};

/// Protocol parameters fixed for the lifetime of one coordinator.
#[derive(Clone, Debug)]
pub struct CoordinatorConfig {
    pub n_relays: usize,
    pub n_workers: usize,
    pub group_size: u32,
    pub epochs: u64,
    pub expected_clients: u32,
    pub mapping_ms: u32,
    pub d1_ms: u32,
    pub d2_ms: u32,
    pub d3_ms: u32,
    pub d4_ms: u32,
    pub rounds: u32,
    pub round_ms: u32,
    pub snippet_ms: u32,
    pub simulated_users: u32,
}

#[derive(Clone, Copy, Debug)]
pub struct RegisteredClient {
    pub mailbox_id: u32,
    pub pubkey: PublicKey,
    pub auth_token: [u8; AUTH_TOKEN_LEN],
    pub relay_idx: usize,
    pub worker_idx: usize,
}

/// Pure registration and epoch bookkeeping.
pub struct CoordinatorState {
    config: CoordinatorConfig,
    clients: Vec<RegisteredClient>,
    registration_open: bool,
    epoch: u64,
}

impl CoordinatorState {
    pub fn new(config: CoordinatorConfig) -> Self {
        CoordinatorState {
            config,
            clients: Vec::new(),
            registration_open: true,
            epoch: 0,
        }
    }

    pub fn clients(&self) -> &[RegisteredClient] {
        &self.clients
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn set_registration_open(&mut self, open: bool) {
        self.registration_open = open;
    }

    /// Register one client: mailbox ids are handed out in arrival order,
    /// relays and workers round-robin.
    pub fn register(
        &mut self,
        pubkey: PublicKey,
        rng: &mut impl Rng,
    ) -> Result<RegisteredClient, NodeError> {
        if !self.registration_open {
            return Err(NodeError::RegistrationClosed);
        }
        let mut auth_token = [0u8; AUTH_TOKEN_LEN];
        rng.fill_bytes(&mut auth_token);
        let idx = self.clients.len();
        let client = RegisteredClient {
            mailbox_id: idx as u32 + 1,
            pubkey,
            auth_token,
            relay_idx: idx % self.config.n_relays,
            worker_idx: idx % self.config.n_workers,
        };
        self.clients.push(client);
        Ok(client)
    }

    /// Advance to the next epoch and derive everything it needs.
    pub fn start_epoch(&mut self, rng: &mut impl Rng) -> EpochPlan {
        self.registration_open = false;
        self.epoch += 1;
        let seed = MappingSeed::random(rng);
        let n_mailboxes = self.clients.len() as u32;
        let n_buckets = n_buckets_for(self.config.group_size);
        let mapping = build_mapping(n_mailboxes, n_buckets, &seed);
        let schedule = EpochSchedule {
            epoch: self.epoch,
            mapping_ms: self.config.mapping_ms,
            d1_ms: self.config.d1_ms,
            d2_ms: self.config.d2_ms,
            d3_ms: self.config.d3_ms,
            d4_ms: self.config.d4_ms,
            rounds: self.config.rounds,
            round_ms: self.config.round_ms,
            snippet_ms: self.config.snippet_ms,
        };
        EpochPlan {
            seed,
            schedule,
            mapping,
        }
    }

    pub fn directory(&self) -> Vec<(PublicKey, u32)> {
        self.clients.iter().map(|c| (c.pubkey, c.mailbox_id)).collect()
    }
}

pub struct EpochPlan {
    pub seed: MappingSeed,
    pub schedule: EpochSchedule,
    pub mapping: BucketMapping,
}

/// Socket-facing options.
pub struct CoordinatorOpts {
    pub listen: SocketAddrV4,
    pub config: CoordinatorConfig,
    /// Seeds the mapping/token RNG for reproducible runs.
    pub rng_seed: Option<u64>,
    pub log: Option<PathBuf>,
}

struct Registry {
    relays: Vec<(SocketAddrV4, Peer)>,
    workers: Vec<(SocketAddrV4, Peer)>,
    clients: HashMap<u32, Peer>,
}

pub fn run_coordinator(opts: CoordinatorOpts) -> std::io::Result<()> {
    let params = HeParams::default();
    let log = NodeLog::create(opts.log.as_deref())?;
    let listener = TcpListener::bind(opts.listen)?;
    let local = match listener.local_addr()? {
        std::net::SocketAddr::V4(a) => a,
        _ => unreachable!("bound to v4"),
    };
    println!("LISTENING {local}");
    use std::io::Write as _;
    std::io::stdout().flush().ok();

    let (tx, rx) = mpsc::channel();
    net::spawn_acceptor(
        listener,
        tx,
        log.clone(),
        params,
        Arc::new(AtomicUsize::new(0)),
        DEFAULT_MAX_FRAME,
    );

    let mut rng = match opts.rng_seed {
        Some(seed) => ChaCha20Rng::seed_from_u64(seed),
        None => ChaCha20Rng::from_entropy(),
    };
    let mut state = CoordinatorState::new(opts.config.clone());
    let mut reg = Registry {
        relays: Vec::new(),
        workers: Vec::new(),
        clients: HashMap::new(),
    };

    // Registration: wait until all servers and the expected client count
    // have checked in. Clients that race ahead of the servers are parked
    // until both assignment pools exist.
    let cfg = opts.config;
    let mut parked: Vec<(Peer, crate::wire::Hello)> = Vec::new();
    while reg.relays.len() < cfg.n_relays
        || reg.workers.len() < cfg.n_workers
        || reg.clients.len() < cfg.expected_clients as usize
    {
        let servers_ready =
            reg.relays.len() >= cfg.n_relays && reg.workers.len() >= cfg.n_workers;
        if servers_ready {
            for (peer, hello) in parked.drain(..) {
                handle_hello(&mut state, &mut reg, peer, hello, &mut rng, &log);
            }
        }
        match rx.recv().expect("acceptor alive") {
            Event::Connected(peer, hello) => {
                if hello.role == NodeRole::Client && !servers_ready {
                    parked.push((peer, hello));
                } else {
                    handle_hello(&mut state, &mut reg, peer, hello, &mut rng, &log);
                }
            }
            Event::Message { .. } | Event::Disconnected { .. } => {}
        }
    }
    for (peer, hello) in parked.drain(..) {
        handle_hello(&mut state, &mut reg, peer, hello, &mut rng, &log);
    }

    for epoch in 1..=cfg.epochs {
        state.set_registration_open(false);
        let plan = state.start_epoch(&mut rng);
        log.event(epoch, -1, "epoch_start", 0);

        // Bucket lists go to the workers first; the seed is published with
        // the phase announcement afterwards.
        let bucket_msg = Message::BucketLists(BucketLists {
            epoch,
            seed: plan.seed,
            n_mailboxes: plan.mapping.n_mailboxes(),
            lists: plan.mapping.bucket_lists().to_vec(),
        });
        for (_, w) in &reg.workers {
            let _ = w.send(&bucket_msg);
        }
        serve_clock(&rx, Duration::from_millis(cfg.mapping_ms as u64));

        let directory = Message::Directory(Directory {
            epoch,
            entries: state.directory(),
        });
        for c in reg.clients.values() {
            let _ = c.send(&directory);
        }
        let announce = |phase: PhaseKind| {
            Message::PhaseAnnounce(PhaseAnnounce {
                phase,
                schedule: plan.schedule,
                seed: plan.seed,
                n_mailboxes: plan.mapping.n_mailboxes(),
                n_buckets: plan.mapping.n_buckets(),
                simulated_users: cfg.simulated_users,
                relay_addrs: reg.relays.iter().map(|(a, _)| *a).collect(),
                worker_addrs: reg.workers.iter().map(|(a, _)| *a).collect(),
            })
        };
        broadcast_all(&reg, &announce(PhaseKind::Dialing));
        serve_clock(
            &rx,
            Duration::from_millis(plan.schedule.dialing_ms() as u64),
        );

        broadcast_all(&reg, &announce(PhaseKind::Communication));
        let com_ms = cfg.rounds as u64 * cfg.round_ms as u64 + 2 * cfg.round_ms as u64;
        serve_clock(&rx, Duration::from_millis(com_ms));

        state.set_registration_open(true);
        log.event(epoch, -1, "epoch_end", 0);
    }
    // Grace period so late answer traffic settles before connections drop.
    serve_clock(&rx, Duration::from_millis(200));
    Ok(())
}

fn handle_hello(
    state: &mut CoordinatorState,
    reg: &mut Registry,
    peer: Peer,
    hello: crate::wire::Hello,
    rng: &mut impl Rng,
    log: &NodeLog,
) {
    match hello.role {
        NodeRole::Relay => reg.relays.push((hello.listen_addr, peer)),
        NodeRole::Worker => reg.workers.push((hello.listen_addr, peer)),
        NodeRole::Client => match state.register(hello.pubkey, rng) {
            Ok(client) => {
                let info = RegInfo {
                    mailbox_id: client.mailbox_id,
                    auth_token: client.auth_token,
                    relay_addr: reg.relays[client.relay_idx].0,
                    worker_addr: reg.workers[client.worker_idx].0,
                    n_mailboxes: state.clients().len() as u32,
                    pubkey: client.pubkey,
                };
                let _ = peer.send(&Message::RegInfo(info));
                // Inform the assigned relay (mailbox id + token) and worker
                // (client tag) of their new client.
                let _ = reg.relays[client.relay_idx].1.send(&Message::RegInfo(info));
                let _ = reg.workers[client.worker_idx].1.send(&Message::RegInfo(info));
                reg.clients.insert(client.mailbox_id, peer);
                log.line(&format!(
                    "A,{},{},{},{}",
                    client.mailbox_id,
                    hex::encode(client.pubkey.0),
                    client.relay_idx,
                    client.worker_idx
                ));
            }
            Err(NodeError::RegistrationClosed) => {
                // No reply; the hopeful client times out and retries next
                // registration window.
            }
            Err(_) => unreachable!("register only fails when closed"),
        },
    }
}

fn broadcast_all(reg: &Registry, msg: &Message) {
    for c in reg.clients.values() {
        let _ = c.send(msg);
    }
    for (_, r) in &reg.relays {
        let _ = r.send(msg);
    }
    for (_, w) in &reg.workers {
        let _ = w.send(msg);
    }
}

/// Sleep for `window` while draining the event queue (registrations during
/// an epoch are rejected by the state machine, not by blocking the socket).
fn serve_clock(rx: &mpsc::Receiver<Event>, window: Duration) {
    let deadline = Instant::now() + window;
    loop {
        let now = Instant::now();
        if now >= deadline {
            return;
        }
        match rx.recv_timeout(deadline - now) {
            Ok(_) | Err(mpsc::RecvTimeoutError::Timeout) => continue,
            Err(mpsc::RecvTimeoutError::Disconnected) => return,
        }
    }
}
