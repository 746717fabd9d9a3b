use clap::Parser;
use covercall::net::parse_addr;
use covercall::nodes::relay::{run_relay, RelayOpts};
use std::path::PathBuf;

/// Client-facing collector: gathers invites and snippets, broadcasts the
/// invite package, and distributes mailbox contents to the workers.
#[derive(Parser)]
#[command(name = "relay")]
struct Args {
    /// Coordinator address.
    #[arg(long)]
    coordinator: String,
    /// Address to listen on; port 0 picks a free port (printed on stdout).
    #[arg(long, default_value = "127.0.0.1:0")]
    listen: String,
    /// Structured log file.
    #[arg(long)]
    log: Option<PathBuf>,
}

fn main() {
    let args = Args::parse();
    let run = || -> Result<(), String> {
        let opts = RelayOpts {
            coordinator: parse_addr(&args.coordinator)?,
            listen: parse_addr(&args.listen)?,
            log: args.log.clone(),
        };
        run_relay(opts).map_err(|e| e.to_string())
    };
    if let Err(e) = run() {
        eprintln!("relay: {e}");
        std::process::exit(1);
    }
}
