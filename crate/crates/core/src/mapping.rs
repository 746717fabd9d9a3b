//! Seed-derived assignment of mailboxes to buckets and the client-side
//! selection of one retrieval index per bucket.
//!
//! Every mailbox lands in 3 pairwise-distinct buckets chosen by three
//! seed-initialized hash functions (a 3-way cuckoo variant acting as a
//! probabilistic batch code). The coordinator ships the resulting ordered
//! bucket lists to the workers; clients rebuild the identical mapping
//! locally from the published seed, so both sides agree on which position
//! inside a bucket a mailbox occupies.

use crate::crypto::hash_parts;
use rand::Rng;
use thiserror::Error;

/// Replicas per mailbox.
pub const BUCKET_CHOICES: usize = 3;
/// Nonce trials before giving up on distinctness; for B >= 3 each trial
/// succeeds with probability >= (B-1)(B-2)/B^2, so this is unreachable in
/// practice.
const MAX_NONCE_TRIALS: u64 = 10_000;

pub const SEED_LEN: usize = 16;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MappingError {
    #[error("mailbox {0} is not part of the mapping")]
    UnknownMailbox(u32),
    #[error("more targets ({targets}) than buckets ({buckets})")]
    TooManyTargets { targets: usize, buckets: usize },
}

/// Per-epoch random seed published by the coordinator.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct MappingSeed(pub [u8; SEED_LEN]);

impl MappingSeed {
    pub fn random(rng: &mut impl Rng) -> Self {
        let mut s = [0u8; SEED_LEN];
        rng.fill_bytes(&mut s);
        MappingSeed(s)
    }
}

/// The three buckets a mailbox maps to, plus the nonce that produced them.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct BucketTriple {
    /// Pairwise-distinct bucket ids in 1..=B.
    pub buckets: [u32; BUCKET_CHOICES],
    /// Smallest nonce for which the three hashes are distinct.
    pub nonce: u64,
}

/// `h_k(i | n)`: first 8 bytes of `hash(seed || k || i || n)` as a
/// big-endian integer, reduced mod B, shifted to 1-based ids.
fn bucket_hash(seed: &MappingSeed, k: u8, mailbox: u64, nonce: u64, n_buckets: u32) -> u32 {
    let digest = hash_parts(&[
        &seed.0,
        &[k],
        &mailbox.to_be_bytes(),
        &nonce.to_be_bytes(),
    ]);
    let mut prefix = [0u8; 8];
    prefix.copy_from_slice(&digest.as_bytes()[..8]);
    (u64::from_be_bytes(prefix) % u64::from(n_buckets)) as u32 + 1
}

/// Three pairwise-distinct buckets for `mailbox`, trying nonces from 0.
pub fn assign_buckets(mailbox: u32, seed: &MappingSeed, n_buckets: u32) -> BucketTriple {
    assert!(n_buckets >= BUCKET_CHOICES as u32, "need at least 3 buckets");
    for nonce in 0..MAX_NONCE_TRIALS {
        let b: Vec<u32> = (0..BUCKET_CHOICES as u8)
            .map(|k| bucket_hash(seed, k, u64::from(mailbox), nonce, n_buckets))
            .collect();
        if b[0] != b[1] && b[0] != b[2] && b[1] != b[2] {
            return BucketTriple {
                buckets: [b[0], b[1], b[2]],
                nonce,
            };
        }
    }
    unreachable!("no distinct bucket triple after {MAX_NONCE_TRIALS} nonces");
}

/// Deterministic mailbox-to-bucket assignment for one epoch.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct BucketMapping {
    n_mailboxes: u32,
    n_buckets: u32,
    /// Triple for mailbox id i at index i-1.
    assignment: Vec<BucketTriple>,
    /// Ordered (ascending) mailbox ids per bucket, index b-1.
    bucket_lists: Vec<Vec<u32>>,
}

impl BucketMapping {
    pub fn n_mailboxes(&self) -> u32 {
        self.n_mailboxes
    }

    pub fn n_buckets(&self) -> u32 {
        self.n_buckets
    }

    pub fn triple(&self, mailbox: u32) -> Result<&BucketTriple, MappingError> {
        self.assignment
            .get(mailbox.checked_sub(1).ok_or(MappingError::UnknownMailbox(mailbox))? as usize)
            .ok_or(MappingError::UnknownMailbox(mailbox))
    }

    pub fn bucket_list(&self, bucket: u32) -> &[u32] {
        &self.bucket_lists[(bucket - 1) as usize]
    }

    pub fn bucket_lists(&self) -> &[Vec<u32>] {
        &self.bucket_lists
    }

    /// 1-based position of `mailbox` within `bucket`'s ordered list.
    pub fn position_in_bucket(&self, bucket: u32, mailbox: u32) -> Option<u32> {
        self.bucket_list(bucket)
            .binary_search(&mailbox)
            .ok()
            .map(|p| p as u32 + 1)
    }

    /// Rebuild from lists received over the wire (worker side).
    pub fn from_lists(n_mailboxes: u32, bucket_lists: Vec<Vec<u32>>) -> Self {
        let n_buckets = bucket_lists.len() as u32;
        let mut assignment = vec![
            BucketTriple {
                buckets: [0; BUCKET_CHOICES],
                nonce: 0
            };
            n_mailboxes as usize
        ];
        let mut fill = vec![0usize; n_mailboxes as usize];
        for (b, list) in bucket_lists.iter().enumerate() {
            for &m in list {
                let slot = &mut assignment[(m - 1) as usize];
                slot.buckets[fill[(m - 1) as usize]] = b as u32 + 1;
                fill[(m - 1) as usize] += 1;
            }
        }
        BucketMapping {
            n_mailboxes,
            n_buckets,
            assignment,
            bucket_lists,
        }
    }
}

/// Build the full mapping for mailboxes 1..=N; bit-for-bit reproducible
/// from `(n_mailboxes, n_buckets, seed)`.
pub fn build_mapping(n_mailboxes: u32, n_buckets: u32, seed: &MappingSeed) -> BucketMapping {
    let mut assignment = Vec::with_capacity(n_mailboxes as usize);
    let mut bucket_lists = vec![Vec::new(); n_buckets as usize];
    for mailbox in 1..=n_mailboxes {
        let triple = assign_buckets(mailbox, seed, n_buckets);
        for b in triple.buckets {
            // Mailboxes are visited in ascending order, so each list stays
            // sorted.
            bucket_lists[(b - 1) as usize].push(mailbox);
        }
        assignment.push(triple);
    }
    BucketMapping {
        n_mailboxes,
        n_buckets,
        assignment,
        bucket_lists,
    }
}

/// Number of buckets for a maximum group size G: 1.5 times the retrievals
/// per client (G-1), floored at 3 because the 3-way assignment needs three
/// distinct buckets to exist.
pub fn n_buckets_for(group_size_max: u32) -> u32 {
    assert!(group_size_max >= 2);
    let scaled = (3 * (group_size_max - 1)).div_ceil(2);
    scaled.max(3)
}

/// What a client retrieves from one bucket.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct BucketChoice {
    /// 1-based position within the bucket's ordered list; 0 only for an
    /// empty bucket, which then gets an empty query.
    pub position: u32,
    /// The target mailbox this position retrieves, if the choice is real.
    pub target: Option<u32>,
}

/// Per-bucket retrieval choices for one epoch.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct IndexSelection {
    /// One entry per bucket, index b-1.
    pub choices: Vec<BucketChoice>,
    /// True when the targets could not all be placed and every bucket was
    /// re-drawn at random; the client sits the call out.
    pub all_random: bool,
}

impl IndexSelection {
    pub fn real_count(&self) -> usize {
        self.choices.iter().filter(|c| c.target.is_some()).count()
    }
}

/// Maximum bipartite matching (Hopcroft-Karp) between targets and buckets.
///
/// `adj[t]` lists the 0-based bucket columns target `t` may use. Returns
/// `match_of_target[t] = Some(bucket)` for matched targets.
fn max_bipartite_matching(adj: &[Vec<usize>], n_right: usize) -> Vec<Option<usize>> {
    let n_left = adj.len();
    let mut match_left: Vec<Option<usize>> = vec![None; n_left];
    let mut match_right: Vec<Option<usize>> = vec![None; n_right];
    loop {
        // BFS layering from free left vertices.
        let mut dist = vec![usize::MAX; n_left];
        let mut queue = std::collections::VecDeque::new();
        for (t, m) in match_left.iter().enumerate() {
            if m.is_none() {
                dist[t] = 0;
                queue.push_back(t);
            }
        }
        let mut found_augmenting = false;
        while let Some(t) = queue.pop_front() {
            for &b in &adj[t] {
                match match_right[b] {
                    None => found_augmenting = true,
                    Some(t2) if dist[t2] == usize::MAX => {
                        dist[t2] = dist[t] + 1;
                        queue.push_back(t2);
                    }
                    _ => {}
                }
            }
        }
        if !found_augmenting {
            break;
        }
        fn dfs(
            t: usize,
            adj: &[Vec<usize>],
            dist: &mut [usize],
            match_left: &mut [Option<usize>],
            match_right: &mut [Option<usize>],
        ) -> bool {
            for &b in &adj[t] {
                match match_right[b] {
                    None => {
                        match_right[b] = Some(t);
                        match_left[t] = Some(b);
                        return true;
                    }
                    Some(t2) => {
                        if dist[t2] == dist[t] + 1
                            && dfs(t2, adj, dist, match_left, match_right)
                        {
                            match_right[b] = Some(t);
                            match_left[t] = Some(b);
                            return true;
                        }
                    }
                }
            }
            dist[t] = usize::MAX;
            false
        }
        for t in 0..n_left {
            if match_left[t].is_none() && dist[t] == 0 {
                dfs(t, adj, &mut dist, &mut match_left, &mut match_right);
            }
        }
    }
    match_left
}

/// Choose one position per bucket so that every target mailbox is retrieved
/// from a distinct bucket; remaining buckets get uniformly random positions.
///
/// If no system of distinct representatives exists, all buckets get random
/// positions and the result is flagged `all_random`.
pub fn select_indices(
    targets: &[u32],
    mapping: &BucketMapping,
    rng: &mut impl Rng,
) -> Result<IndexSelection, MappingError> {
    let n_buckets = mapping.n_buckets() as usize;
    if targets.len() > n_buckets {
        return Err(MappingError::TooManyTargets {
            targets: targets.len(),
            buckets: n_buckets,
        });
    }
    let mut adj = Vec::with_capacity(targets.len());
    for &t in targets {
        let triple = mapping.triple(t)?;
        adj.push(triple.buckets.iter().map(|&b| (b - 1) as usize).collect());
    }
    let matched = max_bipartite_matching(&adj, n_buckets);
    let complete = matched.iter().all(|m| m.is_some());

    let mut choices: Vec<BucketChoice> = (1..=mapping.n_buckets())
        .map(|b| {
            let len = mapping.bucket_list(b).len() as u32;
            BucketChoice {
                position: if len == 0 { 0 } else { rng.gen_range(1..=len) },
                target: None,
            }
        })
        .collect();
    if complete {
        for (i, &t) in targets.iter().enumerate() {
            let b = matched[i].unwrap();
            let position = mapping
                .position_in_bucket(b as u32 + 1, t)
                .expect("matched target must be in its bucket");
            choices[b] = BucketChoice {
                position,
                target: Some(t),
            };
        }
    }
    Ok(IndexSelection {
        choices,
        all_random: !complete && !targets.is_empty(),
    })
}
