use clap::Parser;
use covercall::client::{parse_group_file, run_client, ClientOpts};
use covercall::dialing::PublicKey;
use covercall::net::parse_addr;
use std::collections::HashMap;
use std::path::PathBuf;

/// Protocol client: registers, dials (or covers), exchanges one snippet per
/// round, and decodes its partners' mailboxes.
#[derive(Parser)]
#[command(name = "client")]
struct Args {
    /// Coordinator address.
    #[arg(long)]
    coordinator: String,
    /// Group file: one `id gmk_hex pubkey_hex...` line per group.
    #[arg(long = "group-file")]
    group_file: Option<PathBuf>,
    /// This client's 32-byte identity, hex encoded.
    #[arg(long)]
    pubkey: String,
    /// Epochs to participate in.
    #[arg(long, default_value_t = 1)]
    epochs: u64,
    /// Dial this group every epoch.
    #[arg(long, conflicts_with_all = ["idle", "dial_plan"])]
    dial: Option<String>,
    /// Never dial (cover behavior only). This is the default.
    #[arg(long)]
    idle: bool,
    /// Per-epoch intents: `epoch:group,epoch:group,...`.
    #[arg(long = "dial-plan", conflicts_with = "idle")]
    dial_plan: Option<String>,
    /// Register and listen but never submit; exercises the servers'
    /// substitution paths.
    #[arg(long)]
    mute: bool,
    /// Structured log file.
    #[arg(long)]
    log: Option<PathBuf>,
}

fn main() {
    let args = Args::parse();
    let run = || -> Result<(), String> {
        let coordinator = parse_addr(&args.coordinator)?;
        let pk_bytes = hex::decode(&args.pubkey).map_err(|e| format!("bad pubkey: {e}"))?;
        let pubkey = PublicKey(
            pk_bytes
                .try_into()
                .map_err(|_| "pubkey must be 32 bytes".to_string())?,
        );
        let groups = match &args.group_file {
            Some(path) => {
                let text =
                    std::fs::read_to_string(path).map_err(|e| format!("group file: {e}"))?;
                parse_group_file(&text, &pubkey)?
            }
            None => Vec::new(),
        };
        let mut dial_plan: HashMap<u64, String> = HashMap::new();
        if let Some(group) = &args.dial {
            for e in 1..=args.epochs {
                dial_plan.insert(e, group.clone());
            }
        }
        if let Some(plan) = &args.dial_plan {
            for item in plan.split(',').filter(|s| !s.is_empty()) {
                let (epoch, group) = item
                    .split_once(':')
                    .ok_or_else(|| format!("bad dial-plan item {item:?}"))?;
                let epoch = epoch
                    .parse::<u64>()
                    .map_err(|e| format!("bad dial-plan epoch: {e}"))?;
                dial_plan.insert(epoch, group.to_string());
            }
        }
        for group in dial_plan.values() {
            if !groups.iter().any(|(name, _)| name == group) {
                return Err(format!("dial target {group} not in group file"));
            }
        }
        run_client(ClientOpts {
            coordinator,
            pubkey,
            groups,
            epochs: args.epochs,
            dial_plan,
            log: args.log.clone(),
            mute: args.mute,
        })
        .map_err(|e| e.to_string())
    };
    if let Err(e) = run() {
        eprintln!("client: {e}");
        std::process::exit(1);
    }
}
