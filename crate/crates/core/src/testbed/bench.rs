//! Timing benchmarks for the two invite-processing mechanisms, plus the
//! least-squares plumbing used to check their growth shapes.

use crate::crypto::GroupMasterKey;
use crate::dialing::{
    baseline_make_invite, baseline_process, make_cover_invite, process_invites, EpochNumber,
    GroupDescriptor, Invite, PublicKey, BASELINE_INVITE_LEN,
};
use rand::Rng;
use std::collections::HashSet;
use std::time::Instant;

/// Which invite mechanism to time.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum DialingMode {
    /// Hash-set membership tests against the reference invites.
    Hash,
    /// Trial decryption of every received invite (the baseline).
    Baseline,
}

impl DialingMode {
    pub fn parse(s: &str) -> Result<Self, String> {
        match s {
            "hash" => Ok(DialingMode::Hash),
            "baseline" => Ok(DialingMode::Baseline),
            other => Err(format!("unknown mode {other:?} (expected hash|baseline)")),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            DialingMode::Hash => "hash",
            DialingMode::Baseline => "baseline",
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BenchStats {
    pub n_participants: usize,
    pub group_size: usize,
    pub mode: DialingMode,
    pub reps: usize,
    pub mean_us: f64,
    pub stddev_us: f64,
}

fn test_group(group_size: usize, rng: &mut impl Rng) -> GroupDescriptor {
    let member_pubkeys = (0..group_size)
        .map(|_| {
            let mut pk = [0u8; 32];
            rng.fill_bytes(&mut pk);
            PublicKey(pk)
        })
        .collect();
    GroupDescriptor {
        gmk: GroupMasterKey::random(rng),
        member_pubkeys,
        my_index: 0,
    }
}

fn stats_of(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Time invite processing over `reps` randomized corpora of
/// `n_participants` invites, with one `group_size`-member group and no real
/// invite present (the worst case: every reference invite is checked).
pub fn bench_dialing(
    n_participants: usize,
    group_size: usize,
    mode: DialingMode,
    reps: usize,
    rng: &mut impl Rng,
) -> BenchStats {
    let groups = vec![test_group(group_size, rng)];
    let epoch = EpochNumber(7);
    let mut samples = Vec::with_capacity(reps);
    match mode {
        DialingMode::Hash => {
            // The received set is built once per corpus; processing cost is
            // the per-group membership tests against it.
            let received: HashSet<Invite> =
                (0..n_participants).map(|_| make_cover_invite(rng)).collect();
            for _ in 0..reps {
                let t = Instant::now();
                let matches = process_invites(&received, &groups, epoch);
                samples.push(t.elapsed().as_nanos() as f64 / 1000.0);
                assert!(matches.is_empty());
            }
        }
        DialingMode::Baseline => {
            let received: Vec<Vec<u8>> = (0..n_participants)
                .map(|_| {
                    let mut invite = vec![0u8; BASELINE_INVITE_LEN];
                    rng.fill_bytes(&mut invite);
                    invite
                })
                .collect();
            for _ in 0..reps {
                let t = Instant::now();
                let matches = baseline_process(&received, &groups);
                samples.push(t.elapsed().as_nanos() as f64 / 1000.0);
                assert!(matches.is_empty());
            }
        }
    }
    let (mean_us, stddev_us) = stats_of(&samples);
    BenchStats {
        n_participants,
        group_size,
        mode,
        reps,
        mean_us,
        stddev_us,
    }
}

/// Sanity guard used by tests: fabricating a detectable invite still works
/// through both paths (the benchmarks above time the all-miss case).
pub fn bench_detection_works(rng: &mut impl Rng) -> bool {
    let group = test_group(4, rng);
    let epoch = EpochNumber(7);
    let mut received: HashSet<Invite> = (0..64).map(|_| make_cover_invite(rng)).collect();
    received.insert(crate::dialing::make_invite(
        &group.gmk,
        &group.member_pubkeys[1],
        epoch,
    ));
    let hash_hit = !process_invites(&received, std::slice::from_ref(&group), epoch).is_empty();

    let mut baseline: Vec<Vec<u8>> = (0..64)
        .map(|_| {
            let mut invite = vec![0u8; BASELINE_INVITE_LEN];
            rng.fill_bytes(&mut invite);
            invite
        })
        .collect();
    baseline.push(baseline_make_invite(&group.gmk, rng));
    let baseline_hit = !baseline_process(&baseline, std::slice::from_ref(&group)).is_empty();
    hash_hit && baseline_hit
}

/// Ordinary least squares y = a + b*x; returns (intercept, slope, r2).
pub fn linear_fit(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let mean_x = points.iter().map(|(x, _)| x).sum::<f64>() / n;
    let mean_y = points.iter().map(|(_, y)| y).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|(x, _)| (x - mean_x) * (x - mean_x)).sum();
    let sxy: f64 = points
        .iter()
        .map(|(x, y)| (x - mean_x) * (y - mean_y))
        .sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_tot: f64 = points.iter().map(|(_, y)| (y - mean_y) * (y - mean_y)).sum();
    let ss_res: f64 = points
        .iter()
        .map(|(x, y)| {
            let fit = intercept + slope * x;
            (y - fit) * (y - fit)
        })
        .sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    (intercept, slope, r2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn linear_fit_recovers_exact_line() {
        let pts: Vec<(f64, f64)> = (1..=10).map(|x| (x as f64, 3.0 + 2.0 * x as f64)).collect();
        let (a, b, r2) = linear_fit(&pts);
        assert!((a - 3.0).abs() < 1e-9);
        assert!((b - 2.0).abs() < 1e-9);
        assert!((r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn both_mechanisms_detect_a_real_invite() {
        let mut rng = ChaCha20Rng::seed_from_u64(120);
        assert!(bench_detection_works(&mut rng));
    }

    #[test]
    fn bench_produces_sane_stats() {
        let mut rng = ChaCha20Rng::seed_from_u64(121);
        let s = bench_dialing(256, 4, DialingMode::Hash, 50, &mut rng);
        assert_eq!(s.reps, 50);
        assert!(s.mean_us >= 0.0);
        let b = bench_dialing(256, 4, DialingMode::Baseline, 10, &mut rng);
        assert!(b.mean_us > s.mean_us, "trial decryption costs more");
    }
}
