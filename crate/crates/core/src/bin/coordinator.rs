use clap::Parser;
use covercall::net::parse_addr;
use covercall::nodes::coordinator::{run_coordinator, CoordinatorConfig, CoordinatorOpts};
use std::path::PathBuf;

/// Epoch orchestrator: registers clients, generates the bucket mapping,
/// and announces phase starts.
#[derive(Parser)]
#[command(name = "coordinator")]
struct Args {
    /// Address to listen on; port 0 picks a free port (printed on stdout).
    #[arg(long, default_value = "127.0.0.1:0")]
    listen: String,
    /// Number of relay servers to wait for.
    #[arg(long, default_value_t = 1)]
    relays: usize,
    /// Number of worker servers to wait for.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Maximum group size G; determines the bucket count.
    #[arg(long = "group-size", default_value_t = 3)]
    group_size: u32,
    /// Communication rounds per epoch.
    #[arg(long, default_value_t = 10)]
    rounds: u32,
    /// Round duration in milliseconds.
    #[arg(long = "round-ms", default_value_t = 300)]
    round_ms: u32,
    /// Snippet length in milliseconds.
    #[arg(long = "snippet-ms", default_value_t = 250)]
    snippet_ms: u32,
    #[arg(long = "mapping-ms", default_value_t = 50)]
    mapping_ms: u32,
    #[arg(long = "d1-ms", default_value_t = 500)]
    d1_ms: u32,
    #[arg(long = "d2-ms", default_value_t = 300)]
    d2_ms: u32,
    #[arg(long = "d3-ms", default_value_t = 50)]
    d3_ms: u32,
    #[arg(long = "d4-ms", default_value_t = 500)]
    d4_ms: u32,
    /// Clients to wait for before the first epoch starts.
    #[arg(long, default_value_t = 1)]
    clients: u32,
    /// Number of epochs to run before shutting down.
    #[arg(long, default_value_t = 1)]
    epochs: u64,
    /// Seed for mapping and token randomness (reproducible runs).
    #[arg(long)]
    seed: Option<u64>,
    /// Inflate buckets as if this many users were registered (0 = off).
    #[arg(long = "simulated-users", default_value_t = 0)]
    simulated_users: u32,
    /// Structured log file.
    #[arg(long)]
    log: Option<PathBuf>,
}

fn main() {
    let args = Args::parse();
    let listen = match parse_addr(&args.listen) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("coordinator: {e}");
            std::process::exit(2);
        }
    };
    let opts = CoordinatorOpts {
        listen,
        config: CoordinatorConfig {
            n_relays: args.relays,
            n_workers: args.workers,
            group_size: args.group_size,
            epochs: args.epochs,
            expected_clients: args.clients,
            mapping_ms: args.mapping_ms,
            d1_ms: args.d1_ms,
            d2_ms: args.d2_ms,
            d3_ms: args.d3_ms,
            d4_ms: args.d4_ms,
            rounds: args.rounds,
            round_ms: args.round_ms,
            snippet_ms: args.snippet_ms,
            simulated_users: args.simulated_users,
        },
        rng_seed: args.seed,
        log: args.log,
    };
    if let Err(e) = run_coordinator(opts) {
        eprintln!("coordinator: {e}");
        std::process::exit(1);
    }
}
