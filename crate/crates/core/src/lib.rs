//! Round-based anonymous group calls over untrusted servers.
//!
//! Every client owns a server-side *mailbox* and deposits one fixed-size
//! encrypted voice snippet per round. Call partners fetch each other's
//! mailboxes with computational PIR so the servers never learn who talks to
//! whom; idle clients send cover snippets, cover invites, and cover queries
//! so that the observable traffic is independent of the actual communication
//! pattern. The mailbox database is sharded into buckets by a seed-derived
//! 3-way cuckoo assignment, and clients issue one PIR query per bucket.
//!
//! The crate is organized around the protocol's moving parts:
//!
//! * [`crypto`] — hashing, the fixed-size symmetric snippet cipher, and the
//!   additively homomorphic encryption the PIR scheme is built on.
//! * [`pir`] — the five-algorithm PIR interface (setup / send / query /
//!   answer / decode) over one bucket.
//! * [`mapping`] — seed-derived mailbox-to-bucket assignment and the
//!   client-side per-bucket index selection (bipartite matching).
//! * [`dialing`] — hash-based invites, cover invites, invite processing, and
//!   the encryption-based baseline used for benchmark comparisons.
//! * [`wire`] — length-prefixed binary framing and the payload schema for
//!   every message type.
//! * [`nodes`] — the coordinator, relay, and worker server roles.
//! * [`client`] — the full client state machine (register, dial, exchange
//!   snippets, decode, mix).
//! * [`testbed`] — scenario orchestration, transcript capture, latency
//!   breakdowns, the analytic worker-scalability model, and dialing
//!   benchmarks.

pub mod client;
pub mod crypto;
pub mod dialing;
pub mod mapping;
pub mod net;
pub mod nodes;
pub mod pir;
pub mod testbed;
pub mod wire;
