//! Multi-process scenario execution: spawn one process per node, wait for
//! the run to finish, and assemble transcripts, round outputs, and latency
//! breakdowns from the node logs.

use super::latency::{additional_ms, LatencyBreakdown};
use super::scenario::{pubkey_for, Scenario};
use super::transcript::{parse_node_log, AssignmentRecord, NodeLogData};
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::net::SocketAddrV4;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TestbedError {
    #[error("failed to spawn {role}: {source}")]
    SpawnFailure {
        role: String,
        source: std::io::Error,
    },
    #[error("run exceeded its deadline; killed {0} processes")]
    DeadlineOverrun(usize),
    #[error("node {node} exited with {status}")]
    NodeFailed { node: String, status: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Parse(String),
}

/// Where the role executables live.
#[derive(Clone, Debug)]
pub struct BinPaths {
    pub coordinator: PathBuf,
    pub relay: PathBuf,
    pub worker: PathBuf,
    pub client: PathBuf,
}

impl BinPaths {
    /// Resolve binaries as siblings of the current executable (the layout
    /// of both a build tree and an installed prefix).
    pub fn from_current_exe() -> Result<Self, TestbedError> {
        let exe = std::env::current_exe()?;
        let dir = exe
            .parent()
            .ok_or_else(|| TestbedError::Parse("executable has no parent dir".into()))?;
        // Test binaries live one level down in deps/.
        let candidates = [dir.to_path_buf(), dir.join(".."), PathBuf::from(".")];
        for base in candidates {
            let paths = BinPaths {
                coordinator: base.join("coordinator"),
                relay: base.join("relay"),
                worker: base.join("worker"),
                client: base.join("client"),
            };
            if paths.coordinator.is_file() {
                return Ok(paths);
            }
        }
        Err(TestbedError::Parse(
            "role binaries not found next to the current executable".into(),
        ))
    }
}

pub struct RunOptions {
    pub bins: BinPaths,
    pub out_dir: PathBuf,
    /// Extra wall-clock slack beyond the scenario's own schedule.
    pub grace: Duration,
}

/// Everything a finished run left behind, keyed by node name
/// (`coordinator`, `relay-0`, `worker-0`, client names).
pub struct RunArtifacts {
    pub scenario: Scenario,
    pub nodes: BTreeMap<String, NodeLogData>,
    pub assignments: Vec<AssignmentRecord>,
    pub breakdowns: Vec<BreakdownRow>,
    pub logs_dir: PathBuf,
    pub wall_time: Duration,
}

impl RunArtifacts {
    pub fn server_names(&self) -> Vec<String> {
        self.nodes
            .keys()
            .filter(|n| {
                *n == "coordinator" || n.starts_with("relay-") || n.starts_with("worker-")
            })
            .cloned()
            .collect()
    }

    pub fn mailbox_of(&self, client: &str) -> Option<u32> {
        let pk = pubkey_for(client);
        self.assignments
            .iter()
            .find(|a| a.pubkey == pk.0)
            .map(|a| a.mailbox_id)
    }

    pub fn client_of_mailbox(&self, mailbox: u32) -> Option<String> {
        let rec = self.assignments.iter().find(|a| a.mailbox_id == mailbox)?;
        self.scenario
            .clients
            .iter()
            .find(|c| pubkey_for(c).0 == rec.pubkey)
            .cloned()
    }
}

/// One measured caller-to-callee pipeline for one round.
#[derive(Clone, Debug)]
pub struct BreakdownRow {
    pub epoch: u64,
    pub round: u32,
    pub caller: String,
    pub callee: String,
    pub breakdown: LatencyBreakdown,
}

struct NodeProc {
    name: String,
    child: Child,
}

fn spawn_node(
    role: &str,
    name: &str,
    bin: &Path,
    args: &[String],
) -> Result<NodeProc, TestbedError> {
    let child = Command::new(bin)
        .args(args)
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit())
        .spawn()
        .map_err(|source| TestbedError::SpawnFailure {
            role: format!("{role} {name}"),
            source,
        })?;
    Ok(NodeProc {
        name: name.to_string(),
        child,
    })
}

/// Read the `LISTENING addr` line a server prints once bound.
fn read_listen_addr(proc: &mut NodeProc) -> Result<SocketAddrV4, TestbedError> {
    let stdout = proc.child.stdout.take().expect("piped stdout");
    let mut reader = BufReader::new(stdout);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    // Keep draining in the background so the child never blocks on a full
    // pipe.
    std::thread::spawn(move || {
        let mut sink = String::new();
        while let Ok(n) = reader.read_line(&mut sink) {
            if n == 0 {
                break;
            }
            sink.clear();
        }
    });
    let addr = line
        .trim()
        .strip_prefix("LISTENING ")
        .ok_or_else(|| TestbedError::Parse(format!("unexpected banner {line:?}")))?;
    addr.parse()
        .map_err(|e| TestbedError::Parse(format!("bad listen addr {addr:?}: {e}")))
}

/// Expected wall time of a scenario plus scheduling headroom.
pub fn scenario_budget(s: &Scenario) -> Duration {
    let c = &s.config;
    let per_epoch = c.mapping_ms as u64
        + (c.d1_ms + c.d2_ms + c.d3_ms + c.d4_ms) as u64
        + (c.rounds as u64 + 3) * c.round_ms as u64;
    Duration::from_millis(c.epochs * per_epoch + 2000)
}

pub fn run_scenario(scenario: &Scenario, opts: &RunOptions) -> Result<RunArtifacts, TestbedError> {
    scenario.validate().map_err(TestbedError::Parse)?;
    let start = Instant::now();
    let dir = &opts.out_dir;
    std::fs::create_dir_all(dir)?;
    let c = &scenario.config;

    let mut procs: Vec<NodeProc> = Vec::new();
    let result = (|| {
        // Coordinator first; everyone else finds it via its printed port.
        let mut args = vec![
            "--listen".into(),
            "127.0.0.1:0".into(),
            "--relays".into(),
            c.n_relays.to_string(),
            "--workers".into(),
            c.n_workers.to_string(),
            "--group-size".into(),
            c.group_size.to_string(),
            "--rounds".into(),
            c.rounds.to_string(),
            "--round-ms".into(),
            c.round_ms.to_string(),
            "--snippet-ms".into(),
            c.snippet_ms.to_string(),
            "--mapping-ms".into(),
            c.mapping_ms.to_string(),
            "--d1-ms".into(),
            c.d1_ms.to_string(),
            "--d2-ms".into(),
            c.d2_ms.to_string(),
            "--d3-ms".into(),
            c.d3_ms.to_string(),
            "--d4-ms".into(),
            c.d4_ms.to_string(),
            "--clients".into(),
            scenario.clients.len().to_string(),
            "--epochs".into(),
            c.epochs.to_string(),
            "--simulated-users".into(),
            c.simulated_users.to_string(),
            "--log".into(),
            dir.join("coordinator.log").display().to_string(),
        ];
        if let Some(seed) = c.seed {
            args.push("--seed".into());
            args.push(seed.to_string());
        }
        let mut coord = spawn_node("coordinator", "coordinator", &opts.bins.coordinator, &args)?;
        let coord_addr = read_listen_addr(&mut coord)?;
        procs.push(coord);

        for i in 0..c.n_relays {
            let name = format!("relay-{i}");
            let args = vec![
                "--coordinator".into(),
                coord_addr.to_string(),
                "--listen".into(),
                "127.0.0.1:0".into(),
                "--log".into(),
                dir.join(format!("{name}.log")).display().to_string(),
            ];
            let mut p = spawn_node("relay", &name, &opts.bins.relay, &args)?;
            read_listen_addr(&mut p)?;
            procs.push(p);
        }
        for i in 0..c.n_workers {
            let name = format!("worker-{i}");
            let args = vec![
                "--coordinator".into(),
                coord_addr.to_string(),
                "--listen".into(),
                "127.0.0.1:0".into(),
                "--throttle-ms".into(),
                c.worker_throttle_ms.to_string(),
                "--log".into(),
                dir.join(format!("{name}.log")).display().to_string(),
            ];
            let mut p = spawn_node("worker", &name, &opts.bins.worker, &args)?;
            read_listen_addr(&mut p)?;
            procs.push(p);
        }

        for client in &scenario.clients {
            let group_file = dir.join(format!("groups-{client}.txt"));
            std::fs::write(&group_file, scenario.group_file_for(client))?;
            let mut args = vec![
                "--coordinator".into(),
                coord_addr.to_string(),
                "--group-file".into(),
                group_file.display().to_string(),
                "--pubkey".into(),
                hex::encode(pubkey_for(client).0),
                "--epochs".into(),
                c.epochs.to_string(),
                "--log".into(),
                dir.join(format!("client-{client}.log")).display().to_string(),
            ];
            let plan = scenario.dial_plan_for(client);
            if plan.is_empty() {
                args.push("--idle".into());
            } else {
                args.push("--dial-plan".into());
                args.push(
                    plan.iter()
                        .map(|(e, g)| format!("{e}:{g}"))
                        .collect::<Vec<_>>()
                        .join(","),
                );
            }
            if scenario.mutes.contains(client) {
                args.push("--mute".into());
            }
            procs.push(spawn_node("client", client, &opts.bins.client, &args)?);
        }

        // Wait for everything to exit within the scenario budget.
        let deadline = Instant::now() + scenario_budget(scenario) + opts.grace;
        loop {
            let mut all_done = true;
            for p in procs.iter_mut() {
                match p.child.try_wait()? {
                    Some(status) if !status.success() => {
                        return Err(TestbedError::NodeFailed {
                            node: p.name.clone(),
                            status: status.to_string(),
                        });
                    }
                    Some(_) => {}
                    None => all_done = false,
                }
            }
            if all_done {
                return Ok(());
            }
            if Instant::now() >= deadline {
                let mut killed = 0;
                for p in procs.iter_mut() {
                    if p.child.try_wait()?.is_none() {
                        let _ = p.child.kill();
                        killed += 1;
                    }
                }
                return Err(TestbedError::DeadlineOverrun(killed));
            }
            std::thread::sleep(Duration::from_millis(25));
        }
    })();
    if result.is_err() {
        for p in procs.iter_mut() {
            let _ = p.child.kill();
        }
    }
    result?;

    let mut nodes = BTreeMap::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let Some(stem) = name.strip_suffix(".log") else {
            continue;
        };
        let text = std::fs::read_to_string(&path)?;
        let parsed = parse_node_log(&text).map_err(TestbedError::Parse)?;
        let key = stem.strip_prefix("client-").unwrap_or(stem).to_string();
        nodes.insert(key, parsed);
    }
    let assignments = nodes
        .get("coordinator")
        .map(|c| c.assignments.clone())
        .unwrap_or_default();

    let mut artifacts = RunArtifacts {
        scenario: scenario.clone(),
        nodes,
        assignments,
        breakdowns: Vec::new(),
        logs_dir: dir.clone(),
        wall_time: start.elapsed(),
    };
    artifacts.breakdowns = assemble_breakdowns(&artifacts);
    Ok(artifacts)
}

/// Build per-(round, callee) latency breakdowns for epochs with a unique
/// caller: caller-side encode/encrypt, transit times from the embedded
/// timestamps, worker preprocessing and reply times, and callee-side decode
/// steps, plus the fixed additional allowances.
fn assemble_breakdowns(run: &RunArtifacts) -> Vec<BreakdownRow> {
    let mut rows = Vec::new();
    let us = |v: Option<u64>| v.map(|x| x as f64 / 1000.0);
    for epoch in 1..=run.scenario.config.epochs {
        let Some(intent) = run.scenario.caller_of(epoch) else {
            continue;
        };
        let caller = &intent.client;
        let Some(caller_mailbox) = run.mailbox_of(caller) else {
            continue;
        };
        let Some(caller_log) = run.nodes.get(caller) else {
            continue;
        };
        let caller_assign = run
            .assignments
            .iter()
            .find(|a| a.mailbox_id == caller_mailbox);
        let relay_log = caller_assign
            .and_then(|a| run.nodes.get(&format!("relay-{}", a.relay_idx)));
        let group = run
            .scenario
            .groups
            .iter()
            .find(|g| g.name == intent.group)
            .expect("validated scenario");
        for callee in group.members.iter().filter(|m| *m != caller) {
            let Some(callee_log) = run.nodes.get(callee) else {
                continue;
            };
            let callee_assign = run
                .mailbox_of(callee)
                .and_then(|m| run.assignments.iter().find(|a| a.mailbox_id == m));
            let worker_log = callee_assign
                .and_then(|a| run.nodes.get(&format!("worker-{}", a.worker_idx)));
            for round in 0..run.scenario.config.rounds {
                let r = round as i64;
                let get = |log: Option<&NodeLogData>, key: &str| {
                    log.and_then(|l| l.event(epoch, r, key))
                };
                let c_to_r = us(get(relay_log, &format!("c_to_r_us:{caller_mailbox}")));
                let r_to_w_all = worker_log
                    .map(|l| l.events_for(epoch, r, "r_to_w_us"))
                    .unwrap_or_default();
                let r_to_w = if r_to_w_all.is_empty() {
                    None
                } else {
                    Some(
                        r_to_w_all.iter().sum::<u64>() as f64
                            / r_to_w_all.len() as f64
                            / 1000.0,
                    )
                };
                let parts = [
                    us(get(Some(caller_log), "voice_encode_us")),
                    us(get(Some(caller_log), "encrypt_us")),
                    c_to_r,
                    r_to_w,
                    us(get(worker_log, "prepro_us")),
                    us(get(worker_log, "pir_reply_us")),
                    us(get(Some(callee_log), "w_to_c_us")),
                    us(get(Some(callee_log), "pir_decode_us")),
                    us(get(Some(callee_log), "decrypt_us")),
                    us(get(Some(callee_log), "voice_decode_us")),
                ];
                if parts.iter().any(|p| p.is_none()) {
                    continue; // timeout or straggler round
                }
                let p: Vec<f64> = parts.iter().map(|x| x.unwrap()).collect();
                rows.push(BreakdownRow {
                    epoch,
                    round,
                    caller: caller.clone(),
                    callee: callee.clone(),
                    breakdown: LatencyBreakdown {
                        voice_encode: p[0],
                        encrypt: p[1],
                        c_to_r: p[2],
                        r_to_w: p[3],
                        preprocess: p[4],
                        pir_reply: p[5],
                        w_to_c: p[6],
                        pir_decode: p[7],
                        decrypt: p[8],
                        voice_decode: p[9],
                        additional: additional_ms(run.scenario.config.snippet_ms as f64),
                    },
                });
            }
        }
    }
    rows
}

/// Mean worker processing time per round (preprocessing plus reply
/// computation plus any throttle), in milliseconds, across all workers.
pub fn mean_worker_processing_ms(run: &RunArtifacts) -> Option<f64> {
    let mut total = 0u64;
    let mut count = 0usize;
    for (name, log) in &run.nodes {
        if !name.starts_with("worker-") {
            continue;
        }
        for e in log.events.iter().filter(|e| e.key == "processing_us") {
            total += e.value;
            count += 1;
        }
    }
    (count > 0).then(|| total as f64 / count as f64 / 1000.0)
}
