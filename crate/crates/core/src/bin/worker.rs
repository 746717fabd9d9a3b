use clap::Parser;
use covercall::net::parse_addr;
use covercall::nodes::worker::{run_worker, WorkerOpts};
use std::path::PathBuf;

/// Query store and answer computer: assembles buckets from the relays'
/// mailbox broadcasts and answers every stored query each round.
#[derive(Parser)]
#[command(name = "worker")]
struct Args {
    /// Coordinator address.
    #[arg(long)]
    coordinator: String,
    /// Address to listen on; port 0 picks a free port (printed on stdout).
    #[arg(long, default_value = "127.0.0.1:0")]
    listen: String,
    /// Artificial extra processing per round, for snippet-length sweeps.
    #[arg(long = "throttle-ms", default_value_t = 0)]
    throttle_ms: u32,
    /// Structured log file.
    #[arg(long)]
    log: Option<PathBuf>,
}

fn main() {
    let args = Args::parse();
    let run = || -> Result<(), String> {
        let opts = WorkerOpts {
            coordinator: parse_addr(&args.coordinator)?,
            listen: parse_addr(&args.listen)?,
            log: args.log.clone(),
            throttle_ms: args.throttle_ms,
        };
        run_worker(opts).map_err(|e| e.to_string())
    };
    if let Err(e) = run() {
        eprintln!("worker: {e}");
        std::process::exit(1);
    }
}
