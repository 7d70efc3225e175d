//! Command-line front end: run, validate and compare experiments.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Parser, Subcommand};
use transverse::experiment::{compare_tables, run_experiment, ExperimentConfig, ResultsTable, OUTPUT_ROOT_ENV, RESULTS_FILE};
use transverse::Error;

#[derive(Parser)]
#[command(name = "transverse", version, about = "Transverse contraction of space-time tensor networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one or more experiment configs.
    Run {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        /// Worker threads for batch runs.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Compare result tables (files or run directories) against the first one.
    Compare {
        #[arg(required = true, num_args = 2..)]
        paths: Vec<PathBuf>,
        /// Write the report here instead of standard output.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Check configs without running them.
    Validate {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    if e.is_config() {
        1
    } else {
        2
    }
}

fn output_root() -> Option<PathBuf> {
    std::env::var_os(OUTPUT_ROOT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
}

fn run(configs: &[PathBuf], jobs: usize) -> u8 {
    let root = output_root();
    let mut planned = Vec::new();
    for path in configs {
        match ExperimentConfig::load(path) {
            Ok(cfg) => {
                let dir = cfg.output_dir(Some(path), root.as_deref());
                planned.push((path.clone(), cfg, dir));
            }
            Err(e) => {
                eprintln!("error: {e}");
                return exit_code(&e);
            }
        }
    }
    for (i, (pa, _, da)) in planned.iter().enumerate() {
        if let Some((pb, _, _)) = planned[..i].iter().find(|(_, _, db)| db == da) {
            eprintln!("error: config: {} and {} write to the same directory {}", pb.display(), pa.display(), da.display());
            return 1;
        }
    }
    let next = AtomicUsize::new(0);
    let worst = Mutex::new(0u8);
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, planned.len()) {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some((path, cfg, dir)) = planned.get(k) else { break };
                match run_experiment(cfg, dir) {
                    Ok(out) => println!("{}: wrote {}", path.display(), out.dir.join(RESULTS_FILE).display()),
                    Err(e) => {
                        eprintln!("error: {}: {e}", path.display());
                        let mut w = worst.lock().unwrap();
                        *w = (*w).max(exit_code(&e));
                    }
                }
            });
        }
    });
    worst.into_inner().unwrap()
}

fn table_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(RESULTS_FILE)
    } else {
        p.to_path_buf()
    }
}

fn compare(paths: &[PathBuf], output: Option<&Path>) -> Result<(), Error> {
    let tables = paths
        .iter()
        .map(|p| Ok((p.display().to_string(), ResultsTable::read(&table_path(p))?)))
        .collect::<Result<Vec<_>, Error>>()?;
    let report = compare_tables(&tables)?.render();
    match output {
        Some(o) => std::fs::write(o, report)?,
        None => print!("{report}"),
    }
    Ok(())
}

fn validate(configs: &[PathBuf]) -> u8 {
    let mut code = 0;
    for path in configs {
        match ExperimentConfig::load(path) {
            Ok(_) => println!("{}: ok", path.display()),
            Err(e) => {
                eprintln!("error: {e}");
                code = code.max(exit_code(&e));
            }
        }
    }
    code
}

fn main() -> ExitCode {
    // Usage errors count as config errors; exit code 2 is kept for numerics.
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let code = match cli.command {
        Command::Run { configs, jobs } => run(&configs, jobs),
        Command::Compare { paths, output } => match compare(&paths, output.as_deref()) {
            Ok(()) => 0,
            Err(e) => {
                eprintln!("error: {e}");
                exit_code(&e)
            }
        },
        Command::Validate { configs } => validate(&configs),
    };
    ExitCode::from(code)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_kinds_map_to_exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 1);
        assert_eq!(exit_code(&Error::Checkpoint("x".into())), 1);
        assert_eq!(exit_code(&Error::NonFinite("svd".into())), 2);
        assert_eq!(exit_code(&Error::VanishingOverlap(0.0)), 2);
        assert_eq!(exit_code(&Error::Defective(1e9)), 2);
    }
}
