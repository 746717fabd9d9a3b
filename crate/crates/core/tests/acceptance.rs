//! Acceptance suite: one test per criterion, each printing a PASS/FAIL
//! line. Multi-process criteria share a lock so scenario timing never
//! contends with other live runs.

use covercall::client::make_voice_payload;
use covercall::crypto::HeParams;
use covercall::mapping::{build_mapping, select_indices, BucketMapping, MappingSeed};
use covercall::pir::{pir_answer, pir_decode, pir_query, pir_setup, PirDatabase};
use covercall::testbed::bench::{bench_dialing, linear_fit, DialingMode};
use covercall::testbed::latency::{
    additional_ms, find_snippet_length, mouth_to_ear, LatencyBreakdown, PROCESSING_RATIO_BOUND,
};
use covercall::testbed::runner::{mean_worker_processing_ms, run_scenario, BinPaths, RunOptions};
use covercall::testbed::scalability::{
    analytic_scalability, sharded_total, single_relay_total, sweep, ScalabilityParams,
    SHARDED_ANCHORS, SINGLE_RELAY_ANCHORS,
};
use covercall::testbed::scenario::{DialIntent, GroupSpec, Scenario, ScenarioConfig};
use covercall::testbed::transcript::shape_diff;
use covercall::testbed::RunArtifacts;
use covercall::wire::{decode_frame, BucketLists, Message, DEFAULT_MAX_FRAME};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use std::collections::HashSet;
use std::path::PathBuf;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

fn live_lock() -> MutexGuard<'static, ()> {
    static LOCK: OnceLock<Mutex<()>> = OnceLock::new();
    LOCK.get_or_init(|| Mutex::new(()))
        .lock()
        .unwrap_or_else(|poisoned| poisoned.into_inner())
}

fn bins() -> BinPaths {
    BinPaths {
        coordinator: PathBuf::from(env!("CARGO_BIN_EXE_coordinator")),
        relay: PathBuf::from(env!("CARGO_BIN_EXE_relay")),
        worker: PathBuf::from(env!("CARGO_BIN_EXE_worker")),
        client: PathBuf::from(env!("CARGO_BIN_EXE_client")),
    }
}

fn out_dir(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name)
}

fn run(scenario: &Scenario, name: &str) -> RunArtifacts {
    let opts = RunOptions {
        bins: bins(),
        out_dir: out_dir(name),
        grace: Duration::from_secs(20),
    };
    match run_scenario(scenario, &opts) {
        Ok(artifacts) => artifacts,
        Err(e) => panic!("scenario {name} failed: {e}"),
    }
}

fn names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("c{i}")).collect()
}

#[allow(clippy::too_many_arguments)]
fn scenario(
    n_clients: usize,
    n_relays: usize,
    n_workers: usize,
    group_size: u32,
    rounds: u32,
    round_ms: u32,
    epochs: u64,
    seed: u64,
    groups: &[(&str, &[usize])],
    intents: &[(u64, usize, &str)],
) -> Scenario {
    let clients = names(n_clients);
    let s = Scenario {
        config: ScenarioConfig {
            n_relays,
            n_workers,
            group_size,
            epochs,
            rounds,
            round_ms,
            snippet_ms: 250,
            mapping_ms: 50,
            d1_ms: 600,
            d2_ms: 400,
            d3_ms: 50,
            d4_ms: 600,
            seed: Some(seed),
            simulated_users: 0,
            worker_throttle_ms: 0,
        },
        groups: groups
            .iter()
            .map(|(name, members)| GroupSpec {
                name: name.to_string(),
                members: members.iter().map(|i| clients[*i].clone()).collect(),
            })
            .collect(),
        clients: clients.clone(),
        mutes: HashSet::new(),
        intents: intents
            .iter()
            .map(|(epoch, who, group)| DialIntent {
                epoch: *epoch,
                client: clients[*who].clone(),
                group: group.to_string(),
            })
            .collect(),
    };
    s.validate().expect("well-formed scenario");
    s
}

/// Criterion 1: exhaustive retrieval sweep over a 64-item database of
/// 96-byte items, well under the runtime budget.
#[test]
fn criterion_1_pir_correctness_sweep() {
    let start = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(1001);
    let kp = pir_setup(128, 64, &mut rng);
    let mut items = Vec::with_capacity(64);
    for _ in 0..64 {
        let mut item = vec![0u8; 96];
        rng.fill_bytes(&mut item);
        items.push(item);
    }
    let mut db = PirDatabase::from_items(items.clone(), 96, 10).unwrap();
    db.preprocess();
    let mut correct = 0;
    for index in 1..=64 {
        let (st, q) = pir_query(&kp.he.secret, index, 64, &mut rng).unwrap();
        let answer = pir_answer(&kp.he.public, &db, &q).unwrap();
        if pir_decode(&kp.he.secret, &st, &answer) == items[index - 1] {
            correct += 1;
        }
    }
    let elapsed = start.elapsed();
    let pass = correct == 64 && elapsed < Duration::from_secs(300);
    println!(
        "ACCEPTANCE 1 {} — PIR sweep 64x96B: {correct}/64 correct in {elapsed:?}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert_eq!(correct, 64);
    assert!(elapsed < Duration::from_secs(300), "sweep took {elapsed:?}");
}

/// Every (recoverer, partner) pair of the called group must see the
/// partner's tagged payload every round, unless either end fell back to
/// all-random indices.
fn assert_call_complete(run: &RunArtifacts, epoch: u64, group_members: &[String], rounds: u32) {
    let fallback: HashSet<&String> = group_members
        .iter()
        .filter(|m| {
            run.nodes[m.as_str()]
                .decisions
                .iter()
                .any(|d| d.epoch == epoch && d.all_random)
        })
        .collect();
    for member in group_members {
        if fallback.contains(member) {
            continue;
        }
        let log = &run.nodes[member.as_str()];
        for partner in group_members.iter().filter(|p| *p != member) {
            if fallback.contains(partner) {
                continue;
            }
            let partner_mailbox = run.mailbox_of(partner).expect("registered");
            for round in 0..rounds {
                let expected = make_voice_payload(partner_mailbox, epoch, round);
                let got = log.outputs.iter().any(|o| {
                    o.epoch == epoch
                        && o.round == round
                        && o.sender == partner_mailbox
                        && o.payload == expected
                });
                assert!(
                    got,
                    "{member} missing {partner}'s payload in epoch {epoch} round {round}"
                );
            }
        }
    }
}

/// Criterion 2: end-to-end call correctness for G in 2..=5 at up to 16
/// clients over 10 rounds, plus the seeded fallback-rate bound.
#[test]
fn criterion_2_end_to_end_call_correctness() {
    let _guard = live_lock();
    let cases: [(u32, usize, u32); 5] = [
        (2, 4, 250),
        (3, 6, 250),
        (4, 8, 300),
        (5, 10, 350),
        (3, 16, 400),
    ];
    for (i, (g, n, round_ms)) in cases.iter().enumerate() {
        let members: Vec<usize> = (0..*g as usize).collect();
        let s = scenario(
            *n,
            1 + i % 2,
            1 + i % 2,
            *g,
            10,
            *round_ms,
            1,
            2000 + i as u64,
            &[("g1", &members)],
            &[(1, 0, "g1")],
        );
        let artifacts = run(&s, &format!("c2-g{g}-n{n}"));
        let group_members: Vec<String> = members.iter().map(|i| s.clients[*i].clone()).collect();
        assert_call_complete(&artifacts, 1, &group_members, 10);
        println!("  call G={g} N={n}: all partner payloads recovered over 10 rounds");
    }

    // Fallback rate: G=3 retrievals land in B=3 buckets over N=16
    // mailboxes; 200 seeded draws.
    let mut rng = ChaCha20Rng::seed_from_u64(1002);
    let mut fallbacks = 0u32;
    let runs = 200;
    for _ in 0..runs {
        let seed = MappingSeed::random(&mut rng);
        let mapping = build_mapping(16, 3, &seed);
        let mut group = HashSet::new();
        while group.len() < 3 {
            group.insert(rng.gen_range(1..=16u32));
        }
        let group: Vec<u32> = group.into_iter().collect();
        for me in &group {
            let targets: Vec<u32> = group.iter().copied().filter(|t| t != me).collect();
            if select_indices(&targets, &mapping, &mut rng).unwrap().all_random {
                fallbacks += 1;
            }
        }
    }
    let rate = fallbacks as f64 / (runs as f64 * 3.0);
    println!(
        "ACCEPTANCE 2 PASS — calls complete for G in 2..=5 up to N=16; fallback rate {rate:.4} < 0.05"
    );
    assert!(rate < 0.05, "fallback rate {rate}");
}

fn assert_shapes_equal(a: &RunArtifacts, b: &RunArtifacts, pair: &str) {
    let servers = a.server_names();
    assert_eq!(servers, b.server_names(), "{pair}: differing server sets");
    for node in servers {
        let diff = shape_diff(&a.nodes[&node].shape(), &b.nodes[&node].shape());
        assert!(
            diff.is_empty(),
            "{pair}: transcript shape differs at {node}:\n  {}",
            diff.join("\n  ")
        );
    }
}

/// Criterion 3: six scenario pairs over identical participant sets produce
/// exactly equal per-phase (type, size, count) multisets at every server.
#[test]
fn criterion_3_traffic_shape_pairs() {
    let _guard = live_lock();
    type Groups<'a> = &'a [(&'a str, &'a [usize])];
    type Intents<'a> = &'a [(u64, usize, &'a str)];
    struct Pair<'a> {
        name: &'a str,
        relays: usize,
        workers: usize,
        epochs: u64,
        groups: Groups<'a>,
        left: Intents<'a>,
        right: Intents<'a>,
    }
    let trio: Groups = &[("g1", &[0, 1, 2])];
    let two_groups: Groups = &[("g1", &[0, 1, 2]), ("g2", &[0, 2, 3])];
    let pairs_of_two: Groups = &[("g1", &[0, 1]), ("g2", &[2, 3])];
    let pairs = [
        Pair {
            name: "call-vs-idle",
            relays: 1,
            workers: 1,
            epochs: 1,
            groups: trio,
            left: &[(1, 0, "g1")],
            right: &[],
        },
        Pair {
            name: "different-caller",
            relays: 1,
            workers: 1,
            epochs: 1,
            groups: trio,
            left: &[(1, 0, "g1")],
            right: &[(1, 1, "g1")],
        },
        Pair {
            name: "different-composition",
            relays: 1,
            workers: 1,
            epochs: 1,
            groups: two_groups,
            left: &[(1, 0, "g1")],
            right: &[(1, 0, "g2")],
        },
        Pair {
            name: "two-calls-vs-one",
            relays: 2,
            workers: 2,
            epochs: 1,
            groups: pairs_of_two,
            left: &[(1, 0, "g1"), (1, 2, "g2")],
            right: &[(1, 0, "g1")],
        },
        Pair {
            name: "call-ends-early",
            relays: 1,
            workers: 1,
            epochs: 2,
            groups: trio,
            left: &[(1, 0, "g1"), (2, 0, "g1")],
            right: &[(1, 0, "g1")],
        },
        Pair {
            name: "different-pair-communicates",
            relays: 2,
            workers: 1,
            epochs: 1,
            groups: pairs_of_two,
            left: &[(1, 0, "g1")],
            right: &[(1, 2, "g2")],
        },
    ];
    for (i, p) in pairs.iter().enumerate() {
        let seed = 3000 + i as u64;
        let build = |intents: Intents| {
            scenario(4, p.relays, p.workers, 3, 3, 250, p.epochs, seed, p.groups, intents)
        };
        let left = run(&build(p.left), &format!("c3-{}-left", p.name));
        let right = run(&build(p.right), &format!("c3-{}-right", p.name));
        assert_shapes_equal(&left, &right, p.name);
        println!("  pair {}: shapes identical at every server", p.name);
    }
    println!("ACCEPTANCE 3 PASS — 6 scenario pairs shape-identical at every server node");
}

/// Criterion 4: worker-side bucket lists (through the wire codec) equal the
/// client-side locally rebuilt mapping, bit for bit, over 100 seeds.
#[test]
fn criterion_4_mapping_agreement() {
    let mut rng = ChaCha20Rng::seed_from_u64(4000);
    let params = HeParams::default();
    for trial in 0..100 {
        let seed = MappingSeed::random(&mut rng);
        let n = rng.gen_range(1..=64u32);
        let b = rng.gen_range(3..=8u32);
        // Coordinator side: build and ship.
        let coordinator_mapping = build_mapping(n, b, &seed);
        let msg = Message::BucketLists(BucketLists {
            epoch: trial,
            seed,
            n_mailboxes: n,
            lists: coordinator_mapping.bucket_lists().to_vec(),
        });
        let bytes = msg.encode(&params);
        let (frame, _) = decode_frame(&bytes, DEFAULT_MAX_FRAME).unwrap();
        let worker_lists = match Message::decode(&frame).unwrap() {
            Message::BucketLists(m) => m,
            _ => unreachable!(),
        };
        let worker_mapping = BucketMapping::from_lists(worker_lists.n_mailboxes, worker_lists.lists);
        // Client side: rebuild from the announced seed.
        let client_mapping = build_mapping(n, b, &worker_lists.seed);
        assert_eq!(
            worker_mapping.bucket_lists(),
            client_mapping.bucket_lists(),
            "seed {trial}: worker and client disagree"
        );
    }
    println!("ACCEPTANCE 4 PASS — bucket lists agree bit-for-bit over 100 seeds");
}

/// Brute-force satisfiability of a target-to-distinct-buckets assignment.
fn brute_force_satisfiable(targets: &[u32], mapping: &BucketMapping) -> bool {
    fn rec(i: usize, targets: &[u32], mapping: &BucketMapping, used: &mut Vec<u32>) -> bool {
        if i == targets.len() {
            return true;
        }
        for b in mapping.triple(targets[i]).unwrap().buckets {
            if !used.contains(&b) {
                used.push(b);
                if rec(i + 1, targets, mapping, used) {
                    return true;
                }
                used.pop();
            }
        }
        false
    }
    rec(0, targets, mapping, &mut Vec::new())
}

/// Criterion 5: the matching-based index selection agrees with brute force
/// on every sampled instance with N <= 16, B <= 6, up to 4 targets.
#[test]
fn criterion_5_matching_oracle_equivalence() {
    let mut rng = ChaCha20Rng::seed_from_u64(5000);
    let mut instances = 0u32;
    for n in [4u32, 8, 12, 16] {
        for b in [3u32, 4, 5, 6] {
            for k in 1..=4usize {
                if k > b as usize || k > n as usize {
                    continue;
                }
                for _ in 0..40 {
                    let seed = MappingSeed::random(&mut rng);
                    let mapping = build_mapping(n, b, &seed);
                    let mut targets = Vec::new();
                    while targets.len() < k {
                        let t = rng.gen_range(1..=n);
                        if !targets.contains(&t) {
                            targets.push(t);
                        }
                    }
                    let selection = select_indices(&targets, &mapping, &mut rng).unwrap();
                    let feasible = brute_force_satisfiable(&targets, &mapping);
                    assert_eq!(
                        !selection.all_random, feasible,
                        "N={n} B={b} targets={targets:?}"
                    );
                    if feasible {
                        let mut used = HashSet::new();
                        for &t in &targets {
                            let hits: Vec<u32> = selection
                                .choices
                                .iter()
                                .enumerate()
                                .filter(|(_, c)| c.target == Some(t))
                                .map(|(i, _)| i as u32 + 1)
                                .collect();
                            assert_eq!(hits.len(), 1);
                            assert!(used.insert(hits[0]), "bucket reused");
                            assert!(mapping.triple(t).unwrap().buckets.contains(&hits[0]));
                            let pos = selection.choices[(hits[0] - 1) as usize].position;
                            assert_eq!(mapping.bucket_list(hits[0])[(pos - 1) as usize], t);
                        }
                    }
                    instances += 1;
                }
            }
        }
    }
    println!(
        "ACCEPTANCE 5 PASS — selection matches brute force on {instances} instances"
    );
}

/// Criterion 6: the calibrated analytic model reproduces the reference
/// curve anchors within 2%, and the qualitative shapes hold exactly.
#[test]
fn criterion_6_analytic_scalability() {
    let tolerance = 0.02;
    for (w, want) in SINGLE_RELAY_ANCHORS {
        let got = single_relay_total(w);
        let err = (got - want).abs() / want;
        assert!(err < tolerance, "single-relay {w}: {got} vs {want}");
    }
    for (w, want) in SHARDED_ANCHORS {
        let got = sharded_total(w, 20);
        let err = (got - want).abs() / want;
        assert!(err < tolerance, "sharded {w}: {got} vs {want}");
    }
    let sharded_220 = sharded_total(220, 20);
    assert!((sharded_220 - 0.0667).abs() / 0.0667 < tolerance);

    // Models coincide when the sharded topology degenerates to one relay.
    let one_relay = ScalabilityParams::reference(20.0, 1.0);
    assert_eq!(analytic_scalability(&one_relay), single_relay_total(20));
    assert_eq!(single_relay_total(20), sharded_total(20, 20));

    let rows = sweep(20, 220, 40, 20);
    for pair in rows.windows(2) {
        assert!(pair[1].2 <= pair[0].2, "sharded curve increased");
    }
    let min = rows.iter().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    assert_eq!(min.0, 100, "single-relay interior minimum");
    assert!(rows.first().unwrap().1 > min.1 && rows.last().unwrap().1 > min.1);
    println!(
        "ACCEPTANCE 6 PASS — all curve anchors within 2% (max err {:.2e}); shapes hold",
        SINGLE_RELAY_ANCHORS
            .iter()
            .map(|(w, want)| (single_relay_total(*w) - want).abs() / want)
            .fold(0.0, f64::max)
    );
}

/// Criterion 7: invite-processing benchmarks. Shape, not absolute time —
/// hash processing at least 100x faster than trial decryption at 2^15
/// participants and G=8, trial decryption linear in the participant count,
/// hash processing growing at most linearly in the group size.
#[test]
fn criterion_7_dialing_benchmarks() {
    let _guard = live_lock();
    let mut rng = ChaCha20Rng::seed_from_u64(7000);

    let hash = bench_dialing(1 << 15, 8, DialingMode::Hash, 400, &mut rng);
    let baseline = bench_dialing(1 << 15, 8, DialingMode::Baseline, 30, &mut rng);
    let speedup = baseline.mean_us / hash.mean_us.max(1e-3);
    assert!(
        speedup >= 100.0,
        "hash processing only {speedup:.0}x faster ({:.3} us vs {:.3} us)",
        hash.mean_us,
        baseline.mean_us
    );

    // Trial decryption scales linearly in the participant count.
    let points: Vec<(f64, f64)> = (12..=17)
        .map(|log_n| {
            let n = 1usize << log_n;
            let stats = bench_dialing(n, 4, DialingMode::Baseline, 12, &mut rng);
            (n as f64, stats.mean_us)
        })
        .collect();
    let (_, slope, r2) = linear_fit(&points);
    assert!(slope > 0.0);
    assert!(r2 >= 0.98, "baseline linear fit R^2 = {r2:.4}");

    // Hash processing grows at most linearly in the group size.
    let group_sizes = [8usize, 32, 128, 512];
    let times: Vec<f64> = group_sizes
        .iter()
        .map(|g| bench_dialing(1 << 12, *g, DialingMode::Hash, 400, &mut rng).mean_us)
        .collect();
    let growth = times.last().unwrap() / times.first().unwrap().max(1e-3);
    let linear_growth = (group_sizes[3] / group_sizes[0]) as f64;
    assert!(
        growth <= 2.0 * linear_growth,
        "hash processing grew {growth:.1}x over a {linear_growth:.0}x group-size span"
    );
    println!(
        "ACCEPTANCE 7 PASS — speedup {speedup:.0}x at 2^15/G=8; baseline R^2 {r2:.4}; \
         hash growth {growth:.1}x over {linear_growth:.0}x groups"
    );
}

/// Reference breakdown rows (ms): the published three-parameter-set table,
/// used here as an internal-consistency check of the additive model.
const REFERENCE_ROWS: [(&str, [f64; 10], f64, f64); 3] = [
    (
        "LS",
        [14.14, 0.04, 11.72, 1.56, 13.68, 81.53, 1.5, 47.13, 0.03, 37.52],
        225.0,
        433.84,
    ),
    (
        "LG",
        [5.57, 0.02, 1.21, 11.32, 6.31, 107.02, 1.82, 47.01, 0.04, 29.7],
        105.0,
        315.01,
    ),
    (
        "MC",
        [5.97, 0.02, 0.96, 11.14, 6.73, 91.55, 1.42, 46.83, 0.03, 17.23],
        105.0,
        286.98,
    ),
];

/// Criterion 8: the additive mouth-to-ear formula reproduces the reference
/// totals from their parts within rounding, and the snippet-length rule
/// holds on a throttled synthetic worker.
#[test]
fn criterion_8_mouth_to_ear_consistency() {
    // Snippet-search rule on a real, artificially throttled worker: 50 ms
    // of forced processing rejects 40 ms snippets and accepts 60 ms ones.
    {
        let _guard = live_lock();
        let base = scenario(2, 1, 1, 2, 3, 400, 1, 8000, &[("g1", &[0, 1])], &[(1, 0, "g1")]);
        let (chosen, tried) = find_snippet_length(&[40, 60], |snippet_ms| {
            let mut s = base.clone();
            s.config.snippet_ms = snippet_ms;
            s.config.worker_throttle_ms = 50;
            let artifacts = run(&s, &format!("c8-snippet-{snippet_ms}"));
            mean_worker_processing_ms(&artifacts).expect("worker logged processing times")
        })
        .expect("60 ms candidate is feasible");
        assert_eq!(chosen, 60, "ratios tried: {tried:?}");
        assert!(tried[0].1 > PROCESSING_RATIO_BOUND);
        assert!(tried[1].1 <= PROCESSING_RATIO_BOUND);
        println!("  snippet rule: throttled worker rejects 40 ms, accepts 60 ms");
    }

    // Additive-model consistency against the reference table.
    let mut failures = Vec::new();
    for (name, parts, additional, total) in REFERENCE_ROWS {
        let b = LatencyBreakdown {
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
            additional,
        };
        let snippet_ms = additional - 25.0;
        assert_eq!(additional_ms(snippet_ms), additional);
        let got = mouth_to_ear(&b);
        let delta = (got - total).abs();
        println!("  row {name}: parts sum to {got:.2}, reference total {total:.2} (delta {delta:.2})");
        if delta > 0.05 {
            failures.push(format!(
                "{name}: formula gives {got:.2}, reference prints {total:.2} (|delta| {delta:.2} > 0.05)"
            ));
        }
    }
    if failures.is_empty() {
        println!("ACCEPTANCE 8 PASS — additive model reproduces all reference totals within 0.05 ms");
    } else {
        println!(
            "ACCEPTANCE 8 FAIL — reference rows inconsistent with their own columns: {}",
            failures.join("; ")
        );
    }
    assert!(
        failures.is_empty(),
        "reference-table consistency failed: {}",
        failures.join("; ")
    );
}
