//! The three server roles: coordinator (registration, epoch orchestration,
//! mapping generation), relay (invite and snippet collection, broadcasts),
//! and worker (query storage, bucket assembly, answer computation).
//!
//! Each role is split into a pure state core, unit-testable without
//! sockets, and a thin socket shell driven by the event queue from
//! [`crate::net`].

pub mod coordinator;
pub mod relay;
pub mod worker;

use crate::mapping::BucketMapping;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NodeError {
    #[error("registration is closed during an epoch")]
    RegistrationClosed,
    #[error("authentication token mismatch for mailbox {0}")]
    BadToken(u32),
    #[error("payload has {got} bytes, expected {expected}")]
    WrongSize { got: usize, expected: usize },
    #[error("expected {expected} queries (one per bucket), got {got}")]
    WrongQueryCount { got: usize, expected: usize },
    #[error("client {0} is not assigned to this node")]
    UnknownClient(u32),
    #[error("mailbox {0} is not assigned to this node")]
    UnknownMailbox(u32),
}

/// Item count each bucket is padded to when simulating `simulated_users`
/// system users: real contents stay, duplicates fill up to
/// ceil(3 * users / buckets). Zero users disables inflation.
pub fn effective_bucket_sizes(mapping: &BucketMapping, simulated_users: u32) -> Vec<usize> {
    let b = mapping.n_buckets() as usize;
    let floor = if simulated_users == 0 {
        0
    } else {
        (3 * simulated_users as usize).div_ceil(b)
    };
    mapping
        .bucket_lists()
        .iter()
        .map(|l| l.len().max(floor))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapping::{build_mapping, MappingSeed};

    #[test]
    fn bucket_inflation_matches_user_simulation_rule() {
        let mapping = build_mapping(3, 3, &MappingSeed([1; 16]));
        // 11 simulated users over 3 buckets: ceil(33/3) = 11.
        let sizes = effective_bucket_sizes(&mapping, 11);
        assert_eq!(sizes, vec![11, 11, 11]);
        // Without simulation the real list lengths win (B=3 puts every
        // mailbox in every bucket).
        assert_eq!(effective_bucket_sizes(&mapping, 0), vec![3, 3, 3]);
        // Real content larger than the floor is never truncated.
        let big = build_mapping(64, 3, &MappingSeed([2; 16]));
        assert_eq!(effective_bucket_sizes(&big, 4), vec![64, 64, 64]);
    }
}
