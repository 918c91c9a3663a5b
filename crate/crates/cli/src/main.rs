//! `repinv`: run scenarios, property checks, parameter sweeps and oracle
//! comparisons.
//!
//! Exit codes: 0 success, 1 I/O failure on outputs, 2 configuration error,
//! 3 runtime physics error (domain, blow-up, failed check).

mod run;
mod scenario;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{error, info};
use rayon::prelude::*;
use serde_json::Value;

use crate::scenario::{ConfigError, Scenario};

#[derive(Parser, Debug)]
#[command(name = "repinv", version, about = "Reparametrization-invariant Lagrangian dynamics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Integrate one scenario and write its trajectory CSV.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Output CSV; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a named property suite, `all`, or `acceptance`.
    Check {
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the Cartesian product of a scenario's `sweep.grid`.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Concurrent rows; defaults to the number of cores.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Compare direct action minimization with shooting.
    Oracle {
        /// A `lagrangian` scenario; the built-in fixtures when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Node counts, each at least 3.
        #[arg(long, value_delimiter = ',', default_value = "16,32,64")]
        nodes: Vec<usize>,
    },
}

const IO_ERROR: u8 = 1;
const CONFIG_ERROR: u8 = 2;
const RUNTIME_ERROR: u8 = 3;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("REPINV_LOG", "error")).init();
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Simulate { config, out } => simulate(&config, out.as_deref()),
        Command::Check { suite, seed } => check(&suite, seed),
        Command::Sweep { config, out, jobs } => sweep(&config, out.as_deref(), jobs),
        Command::Oracle { config, out, nodes } => oracle(config.as_deref(), out.as_deref(), &nodes),
    };
    ExitCode::from(code)
}

fn config_error(e: &ConfigError) -> u8 {
    eprintln!("{e}");
    CONFIG_ERROR
}

fn read_json(path: &Path) -> Result<Value, ConfigError> {
    let text = fs::read_to_string(path).map_err(|e| ConfigError {
        path: String::new(),
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    serde_json::from_str(&text).map_err(|e| ConfigError {
        path: String::new(),
        message: format!("invalid JSON in {}: {e}", path.display()),
    })
}

fn write_output(out: Option<&Path>, text: &str) -> Result<(), u8> {
    let res = match out {
        Some(p) => fs::write(p, text),
        None => std::io::stdout().lock().write_all(text.as_bytes()),
    };
    res.map_err(|e| {
        eprintln!("cannot write output: {e}");
        IO_ERROR
    })
}

fn simulate(config: &Path, out: Option<&Path>) -> u8 {
    let sc = match read_json(config).and_then(|v| Scenario::from_value(&v)) {
        Ok(sc) => sc,
        Err(e) => return config_error(&e),
    };
    info!("simulating {}", config.display());
    let outcome = run::simulate(&sc);
    // rows are flushed even when the run failed part way
    if let Err(code) = write_output(out, &outcome.table.to_csv()) {
        return code;
    }
    match outcome.table.failure {
        None => 0,
        Some(e) => {
            error!("simulation stopped after {} rows", outcome.table.rows.len());
            eprintln!("runtime error: {e}");
            RUNTIME_ERROR
        }
    }
}

fn check(suite: &str, seed: u64) -> u8 {
    let results = match repinv_core::checks::run_suite(suite, seed) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("{e}");
            return CONFIG_ERROR;
        }
    };
    let failed = results.iter().filter(|r| !r.passed).count();
    for r in &results {
        println!("{r}");
    }
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        0
    } else {
        RUNTIME_ERROR
    }
}

fn sweep(config: &Path, out: Option<&Path>, jobs: Option<usize>) -> u8 {
    let base = match read_json(config) {
        Ok(v) => v,
        Err(e) => return config_error(&e),
    };
    let grid = match scenario::sweep_grid(&base) {
        Ok(g) => g,
        Err(e) => return config_error(&e),
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        if j == 0 {
            eprintln!("--jobs must be at least 1");
            return CONFIG_ERROR;
        }
        builder = builder.num_threads(j);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("cannot start worker pool: {e}");
            return RUNTIME_ERROR;
        }
    };
    info!("sweeping {} rows", grid.len());
    let rows: Vec<(bool, Vec<String>)> = pool.install(|| grid.par_iter().map(|a| run::sweep_row(&base, a)).collect());
    let mut text = String::from("row");
    for key in grid[0].keys() {
        text.push(',');
        text.push_str(key);
    }
    for c in run::SWEEP_COLUMNS {
        text.push(',');
        text.push_str(c);
    }
    text.push('\n');
    for (i, (_, cells)) in rows.iter().enumerate() {
        text.push_str(&format!("{i},{}\n", cells.join(",")));
    }
    if let Err(code) = write_output(out, &text) {
        return code;
    }
    let failed = rows.iter().filter(|(ok, _)| !ok).count();
    if failed == 0 {
        0
    } else {
        eprintln!("{failed} of {} rows failed", rows.len());
        RUNTIME_ERROR
    }
}

fn oracle(config: Option<&Path>, out: Option<&Path>, nodes: &[usize]) -> u8 {
    if nodes.is_empty() || nodes.iter().any(|&n| n < 3) {
        eprintln!("--nodes needs counts of at least 3");
        return CONFIG_ERROR;
    }
    let scenario = match config.map(|p| read_json(p).and_then(|v| Scenario::from_value(&v))).transpose() {
        Ok(s) => s,
        Err(e) => return config_error(&e),
    };
    let fixtures = match run::oracle_fixtures(scenario.as_ref()) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("runtime error: {e}");
            return RUNTIME_ERROR;
        }
    };
    let results: Vec<_> = fixtures
        .par_iter()
        .map(|fx| (fx.name.clone(), repinv_core::oracle::compare(fx, nodes)))
        .collect();
    let mut text = format!("{}\n", run::ORACLE_HEADER);
    let mut failures = 0;
    for (name, res) in &results {
        match res {
            Ok(rows) => {
                for r in rows {
                    text.push_str(&run::oracle_row(r));
                    text.push('\n');
                }
                let last = rows.last().expect("at least one node count");
                let ok = repinv_core::oracle::refines(rows) && rows.iter().all(|r| r.converged) && last.distance <= 1e-3;
                if !ok {
                    failures += 1;
                }
                eprintln!(
                    "{} {name}: distance {:.3e} at N={}",
                    if ok { "PASS" } else { "FAIL" },
                    last.distance,
                    last.nodes
                );
            }
            Err(e) => {
                failures += 1;
                eprintln!("FAIL {name}: {e}");
            }
        }
    }
    if let Err(code) = write_output(out, &text) {
        return code;
    }
    if failures == 0 {
        0
    } else {
        RUNTIME_ERROR
    }
}
