use clap::{Parser, Subcommand};
use covercall::testbed::csvout;
use covercall::testbed::runner::{mean_worker_processing_ms, scenario_budget};
use covercall::testbed::transcript::shape_diff;
use covercall::testbed::{
    bench_dialing, find_snippet_length, parse_scenario, run_scenario, scalability, BinPaths,
    DialingMode, RunOptions,
};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::path::PathBuf;
use std::time::Duration;

/// Orchestrates scenario runs and the measurement experiments; results go
/// to CSV files with deterministic ordering.
#[derive(Parser)]
#[command(name = "testbed")]
struct Args {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Execute a scenario file and collect transcripts and latency data.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time invite processing for one mechanism.
    BenchDialing {
        /// Number of protocol participants (received invites).
        #[arg(long)]
        n: usize,
        /// Group size.
        #[arg(long)]
        group: usize,
        /// `hash` (membership tests) or `baseline` (trial decryption).
        #[arg(long)]
        mode: String,
        #[arg(long, default_value_t = 100)]
        reps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the analytic worker-scalability model over a worker sweep.
    Scalability {
        /// Sweep spec `workers=FROM..TO:STEP`.
        #[arg(long, default_value = "workers=20..220:40")]
        sweep: String,
        /// Workers per relay for the sharded topology.
        #[arg(long = "relays-per", default_value_t = 20)]
        relays_per: u32,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Find the shortest snippet length whose processing ratio stays
    /// within bounds, by running the scenario once per candidate.
    SweepSnippet {
        scenario: PathBuf,
        #[arg(long, default_value_t = 40)]
        from: u32,
        #[arg(long, default_value_t = 300)]
        to: u32,
        #[arg(long, default_value_t = 20)]
        step: u32,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    if let Err(e) = dispatch(Args::parse()) {
        eprintln!("testbed: {e}");
        std::process::exit(1);
    }
}

fn dispatch(args: Args) -> Result<(), String> {
    match args.command {
        Cmd::Run { scenario, out } => {
            let text = std::fs::read_to_string(&scenario).map_err(|e| e.to_string())?;
            let scenario = parse_scenario(&text)?;
            let opts = RunOptions {
                bins: BinPaths::from_current_exe().map_err(|e| e.to_string())?,
                out_dir: out.clone(),
                grace: Duration::from_secs(10),
            };
            println!(
                "running scenario: {} clients, {} epochs, budget {:?}",
                scenario.clients.len(),
                scenario.config.epochs,
                scenario_budget(&scenario)
            );
            let run = run_scenario(&scenario, &opts).map_err(|e| e.to_string())?;
            csvout::breakdown_csv(&out.join("breakdown.csv"), &run.breakdowns)
                .map_err(|e| e.to_string())?;
            let mut outputs = 0usize;
            for name in &scenario.clients {
                if let Some(log) = run.nodes.get(name) {
                    outputs += log.outputs.len();
                }
            }
            println!(
                "done in {:?}: {} nodes logged, {} recovered snippets, {} breakdown rows",
                run.wall_time,
                run.nodes.len(),
                outputs,
                run.breakdowns.len()
            );
            for name in run.server_names() {
                let shape = run.nodes[&name].shape();
                let total: usize = shape.values().sum();
                println!("  {name}: {total} frames in {} shape classes", shape.len());
            }
            let _ = shape_diff; // linked for the paired-run workflow in tests
            Ok(())
        }
        Cmd::BenchDialing {
            n,
            group,
            mode,
            reps,
            out,
        } => {
            let mode = DialingMode::parse(&mode)?;
            let mut rng = ChaCha20Rng::seed_from_u64(1);
            let stats = bench_dialing(n, group, mode, reps, &mut rng);
            println!(
                "{} n={} G={}: mean {:.3} us, stddev {:.3} us over {} reps",
                mode.as_str(),
                n,
                group,
                stats.mean_us,
                stats.stddev_us,
                reps
            );
            if let Some(path) = out {
                csvout::dialing_csv(&path, &[stats]).map_err(|e| e.to_string())?;
            }
            Ok(())
        }
        Cmd::Scalability {
            sweep,
            relays_per,
            out,
        } => {
            let (from, to, step) = parse_sweep(&sweep)?;
            let rows = scalability::sweep(from, to, step, relays_per);
            // File output first: stdout may be a pipe that goes away.
            if let Some(path) = out {
                csvout::scalability_csv(&path, &rows).map_err(|e| e.to_string())?;
            }
            for (w, single, sharded) in &rows {
                println!("{w} workers: single-relay {single:.6} s, sharded {sharded:.6} s");
            }
            Ok(())
        }
        Cmd::SweepSnippet {
            scenario,
            from,
            to,
            step,
            out,
        } => {
            let text = std::fs::read_to_string(&scenario).map_err(|e| e.to_string())?;
            let base = parse_scenario(&text)?;
            let bins = BinPaths::from_current_exe().map_err(|e| e.to_string())?;
            let candidates: Vec<u32> = (from..=to).step_by(step as usize).collect();
            let mut failures = Vec::new();
            let result = find_snippet_length(&candidates, |snippet_ms| {
                let mut s = base.clone();
                s.config.snippet_ms = snippet_ms;
                let opts = RunOptions {
                    bins: bins.clone(),
                    out_dir: out.join(format!("snippet-{snippet_ms}")),
                    grace: Duration::from_secs(10),
                };
                match run_scenario(&s, &opts).map(|run| mean_worker_processing_ms(&run)) {
                    Ok(Some(ms)) => ms,
                    Ok(None) => {
                        failures.push(format!("snippet {snippet_ms}: no worker timings"));
                        f64::INFINITY
                    }
                    Err(e) => {
                        failures.push(format!("snippet {snippet_ms}: {e}"));
                        f64::INFINITY
                    }
                }
            });
            for f in &failures {
                eprintln!("warning: {f}");
            }
            match result {
                Ok((chosen, tried)) => {
                    for (ms, ratio) in &tried {
                        println!("snippet {ms} ms: processing ratio {ratio:.3}");
                    }
                    println!("chosen: {chosen} ms");
                    csvout::snippet_sweep_csv(&out.join("snippet_sweep.csv"), &tried, Some(chosen))
                        .map_err(|e| e.to_string())?;
                    Ok(())
                }
                Err(e) => Err(e.to_string()),
            }
        }
    }
}

/// Parse `workers=FROM..TO:STEP`.
fn parse_sweep(spec: &str) -> Result<(u32, u32, u32), String> {
    let rest = spec
        .strip_prefix("workers=")
        .ok_or_else(|| format!("sweep must start with workers=: {spec:?}"))?;
    let (range, step) = rest
        .split_once(':')
        .ok_or_else(|| format!("missing :STEP in {spec:?}"))?;
    let (from, to) = range
        .split_once("..")
        .ok_or_else(|| format!("missing FROM..TO in {spec:?}"))?;
    let parse = |s: &str| s.parse::<u32>().map_err(|e| format!("bad number in sweep: {e}"));
    Ok((parse(from)?, parse(to)?, parse(step)?))
}
