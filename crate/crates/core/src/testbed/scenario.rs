//! Scenario files: line-oriented text with `[config]`, `[groups]`,
//! `[clients]`, and `[epochs]` sections.
//!
//! ```text
//! [config]
//! relays = 2
//! workers = 2
//! group_size = 3
//! epochs = 1
//! rounds = 5
//! round_ms = 300
//! snippet_ms = 250
//! seed = 42
//!
//! [groups]
//! g1 = alice bob carol
//!
//! [clients]
//! alice
//! bob
//! carol
//! dave
//! eve mute
//!
//! [epochs]
//! 1: alice dials g1
//! ```
//!
//! Group keys and client identities are derived deterministically from
//! their names, so two scenario files over the same names produce
//! byte-identical key material.

use crate::crypto::{hash_parts, GroupMasterKey};
use crate::dialing::PublicKey;
use std::collections::{HashMap, HashSet};

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub n_relays: usize,
    pub n_workers: usize,
    pub group_size: u32,
    pub epochs: u64,
    pub rounds: u32,
    pub round_ms: u32,
    pub snippet_ms: u32,
    pub mapping_ms: u32,
    pub d1_ms: u32,
    pub d2_ms: u32,
    pub d3_ms: u32,
    pub d4_ms: u32,
    /// Seeds the coordinator's mapping/token randomness; paired scenarios
    /// must pin the same seed so bucket (and hence query) sizes agree.
    pub seed: Option<u64>,
    pub simulated_users: u32,
    pub worker_throttle_ms: u32,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            n_relays: 1,
            n_workers: 1,
            group_size: 3,
            epochs: 1,
            rounds: 3,
            round_ms: 300,
            snippet_ms: 250,
            mapping_ms: 50,
            d1_ms: 500,
            d2_ms: 300,
            d3_ms: 50,
            d4_ms: 500,
            seed: None,
            simulated_users: 0,
            worker_throttle_ms: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupSpec {
    pub name: String,
    pub members: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DialIntent {
    pub epoch: u64,
    pub client: String,
    pub group: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub groups: Vec<GroupSpec>,
    pub clients: Vec<String>,
    /// Clients that register but never submit anything.
    pub mutes: HashSet<String>,
    pub intents: Vec<DialIntent>,
}

/// Deterministic group master key for a named group.
pub fn gmk_for(group: &str) -> GroupMasterKey {
    GroupMasterKey(hash_parts(&[b"gmk:", group.as_bytes()]).0)
}

/// Deterministic identity for a named client.
pub fn pubkey_for(client: &str) -> PublicKey {
    PublicKey(hash_parts(&[b"pk:", client.as_bytes()]).0)
}

impl Scenario {
    /// Group-file line set for one client: every group they belong to.
    pub fn group_file_for(&self, client: &str) -> String {
        let mut out = String::new();
        for g in &self.groups {
            if g.members.iter().any(|m| m == client) {
                out.push_str(&g.name);
                out.push(' ');
                out.push_str(&hex::encode(gmk_for(&g.name).0));
                for m in &g.members {
                    out.push(' ');
                    out.push_str(&hex::encode(pubkey_for(m).0));
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn dial_plan_for(&self, client: &str) -> Vec<(u64, String)> {
        self.intents
            .iter()
            .filter(|i| i.client == client)
            .map(|i| (i.epoch, i.group.clone()))
            .collect()
    }

    /// The dialing client of an epoch, if exactly one exists.
    pub fn caller_of(&self, epoch: u64) -> Option<&DialIntent> {
        let mut found = None;
        for i in self.intents.iter().filter(|i| i.epoch == epoch) {
            if found.is_some() {
                return None;
            }
            found = Some(i);
        }
        found
    }

    pub fn validate(&self) -> Result<(), String> {
        let clients: HashSet<&str> = self.clients.iter().map(|s| s.as_str()).collect();
        if clients.len() != self.clients.len() {
            return Err("duplicate client name".into());
        }
        let groups: HashMap<&str, &GroupSpec> =
            self.groups.iter().map(|g| (g.name.as_str(), g)).collect();
        for g in &self.groups {
            if g.members.len() > self.config.group_size as usize {
                return Err(format!(
                    "group {} has {} members, limit {}",
                    g.name,
                    g.members.len(),
                    self.config.group_size
                ));
            }
            for m in &g.members {
                if !clients.contains(m.as_str()) {
                    return Err(format!("group {} member {m} not declared", g.name));
                }
            }
        }
        let mut seen = HashSet::new();
        for i in &self.intents {
            if i.epoch == 0 || i.epoch > self.config.epochs {
                return Err(format!("intent epoch {} out of range", i.epoch));
            }
            if !clients.contains(i.client.as_str()) {
                return Err(format!("intent client {} not declared", i.client));
            }
            let Some(g) = groups.get(i.group.as_str()) else {
                return Err(format!("intent group {} not declared", i.group));
            };
            if !g.members.contains(&i.client) {
                return Err(format!("{} is not a member of {}", i.client, i.group));
            }
            if !seen.insert((i.epoch, i.client.clone())) {
                return Err(format!(
                    "client {} has two intents in epoch {}",
                    i.client, i.epoch
                ));
            }
        }
        for m in &self.mutes {
            if !clients.contains(m.as_str()) {
                return Err(format!("mute client {m} not declared"));
            }
        }
        Ok(())
    }
}

pub fn parse_scenario(text: &str) -> Result<Scenario, String> {
    let mut scenario = Scenario {
        config: ScenarioConfig::default(),
        groups: Vec::new(),
        clients: Vec::new(),
        mutes: HashSet::new(),
        intents: Vec::new(),
    };
    let mut section = String::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let err = |msg: String| format!("line {}: {msg}", n + 1);
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.to_string();
            continue;
        }
        match section.as_str() {
            "config" => {
                let (key, value) = line
                    .split_once('=')
                    .ok_or_else(|| err("expected key = value".into()))?;
                let key = key.trim();
                let value = value.trim();
                let c = &mut scenario.config;
                let parse_u32 =
                    |v: &str| v.parse::<u32>().map_err(|e| err(format!("bad {key}: {e}")));
                match key {
                    "relays" => c.n_relays = parse_u32(value)? as usize,
                    "workers" => c.n_workers = parse_u32(value)? as usize,
                    "group_size" => c.group_size = parse_u32(value)?,
                    "epochs" => c.epochs = parse_u32(value)? as u64,
                    "rounds" => c.rounds = parse_u32(value)?,
                    "round_ms" => c.round_ms = parse_u32(value)?,
                    "snippet_ms" => c.snippet_ms = parse_u32(value)?,
                    "mapping_ms" => c.mapping_ms = parse_u32(value)?,
                    "d1_ms" => c.d1_ms = parse_u32(value)?,
                    "d2_ms" => c.d2_ms = parse_u32(value)?,
                    "d3_ms" => c.d3_ms = parse_u32(value)?,
                    "d4_ms" => c.d4_ms = parse_u32(value)?,
                    "simulated_users" => c.simulated_users = parse_u32(value)?,
                    "worker_throttle_ms" => c.worker_throttle_ms = parse_u32(value)?,
                    "seed" => {
                        c.seed = Some(
                            value
                                .parse::<u64>()
                                .map_err(|e| err(format!("bad seed: {e}")))?,
                        )
                    }
                    other => return Err(err(format!("unknown config key {other}"))),
                }
            }
            "groups" => {
                let (name, members) = line
                    .split_once('=')
                    .ok_or_else(|| err("expected name = members".into()))?;
                scenario.groups.push(GroupSpec {
                    name: name.trim().to_string(),
                    members: members.split_whitespace().map(str::to_string).collect(),
                });
            }
            "clients" => {
                let mut fields = line.split_whitespace();
                let name = fields.next().expect("non-empty line").to_string();
                for flag in fields {
                    match flag {
                        "mute" => {
                            scenario.mutes.insert(name.clone());
                        }
                        other => return Err(err(format!("unknown client flag {other}"))),
                    }
                }
                scenario.clients.push(name);
            }
            "epochs" => {
                let (epoch, rest) = line
                    .split_once(':')
                    .ok_or_else(|| err("expected `epoch: client dials group`".into()))?;
                let epoch = epoch
                    .trim()
                    .parse::<u64>()
                    .map_err(|e| err(format!("bad epoch: {e}")))?;
                let words: Vec<&str> = rest.split_whitespace().collect();
                match words.as_slice() {
                    [client, "dials", group] => scenario.intents.push(DialIntent {
                        epoch,
                        client: client.to_string(),
                        group: group.to_string(),
                    }),
                    _ => return Err(err("expected `epoch: client dials group`".into())),
                }
            }
            "" => return Err(err("content before first section".into())),
            other => return Err(err(format!("unknown section {other}"))),
        }
    }
    scenario.validate()?;
    Ok(scenario)
}
