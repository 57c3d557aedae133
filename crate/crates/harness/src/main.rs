use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use reconf_harness::{check, run, Scenario, CHECKERS};

#[derive(Parser)]
#[command(name = "reconf", about = "Run reconfiguration scenarios and check their traces")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario file.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the trace lines here.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Comma-separated checkers, replacing the scenario's list.
        #[arg(long, value_delimiter = ',')]
        checkers: Option<Vec<String>>,
        /// Step budget override.
        #[arg(long)]
        budget: Option<u64>,
    },
    /// List the known checkers.
    Checkers,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match cli.cmd {
        Cmd::Checkers => {
            for c in CHECKERS {
                println!("{c}");
            }
            ExitCode::SUCCESS
        }
        Cmd::Run {
            scenario,
            seed,
            trace,
            checkers,
            budget,
        } => {
            let mut sc = match Scenario::load(&scenario) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("{}: {e}", scenario.display());
                    return ExitCode::from(2);
                }
            };
            if let Some(s) = seed {
                sc = sc.with_seed(s);
            }
            if let Some(b) = budget {
                sc.sim.step_budget = b;
            }
            if let Some(list) = checkers {
                if let Some(bad) = list.iter().find(|c| !CHECKERS.contains(&c.as_str())) {
                    eprintln!("unknown checker {bad:?}");
                    return ExitCode::from(2);
                }
                sc.checkers = list;
            }
            let r = run(&sc);
            if let Some(path) = trace {
                if let Err(e) = std::fs::write(&path, r.trace.lines()) {
                    eprintln!("{}: {e}", path.display());
                    return ExitCode::from(2);
                }
            }
            println!("{} seed={} steps={} digest={}", sc.name, sc.sim.seed, r.steps, r.trace.digest());
            let mut ok = true;
            for c in &sc.checkers {
                if let Some(v) = check(c, &sc, &r) {
                    ok &= v.pass;
                    println!("{v}");
                }
            }
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
    }
}
