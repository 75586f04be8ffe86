use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cpds_cli::commands::{self, CheckOptions, CliError, ResultDocument};

/// Reachability for collapsible pushdown systems.
#[derive(Parser)]
#[command(name = "cpds", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decide whether a control is reachable from the all-⊥ configuration.
    Check {
        file: PathBuf,
        #[arg(long)]
        from: Option<String>,
        #[arg(long)]
        to: Option<String>,
        /// Decide with the bounded explorer.
        #[arg(long)]
        oracle: bool,
        /// Attach a shortest witness run.
        #[arg(long)]
        witness: bool,
    },
    /// Compute the configurations from which a control is reachable.
    Global {
        file: PathBuf,
        #[arg(long)]
        to: Option<String>,
        /// Write the result document here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write one DOT file per automaton into this directory.
        #[arg(long)]
        dot: Option<PathBuf>,
    },
    /// Test membership of a configuration in the set of a result document.
    Member { set: PathBuf, config: String },
    /// Print a run that always takes the first allowed rule.
    Simulate {
        file: PathBuf,
        /// A control name or a configuration `<q, w_1, ..., w_m>`.
        #[arg(long)]
        from: String,
        #[arg(long, default_value_t = 20)]
        steps: usize,
    },
    /// Compare every solver with the explorer on random systems.
    Selftest {
        #[arg(long, default_value_t = 50)]
        seeds: u64,
        /// Directory for the reproducer of a divergence.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

fn run(cli: Cli) -> Result<u8, CliError> {
    match cli.command {
        Command::Check {
            file,
            from,
            to,
            oracle,
            witness,
        } => {
            let f = commands::load(&file)?;
            let doc = commands::cmd_check(
                &f,
                &CheckOptions {
                    from,
                    to,
                    oracle,
                    witness,
                },
            )?;
            println!("{}", doc.to_json());
            Ok(doc.verdict.map_or(2, |v| v.exit_code() as u8))
        }
        Command::Global { file, to, out, dot } => {
            let f = commands::load(&file)?;
            let doc = commands::cmd_global(&f, to.as_deref())?;
            match out {
                Some(p) => std::fs::write(p, doc.to_json())?,
                None => println!("{}", doc.to_json()),
            }
            if let Some(dir) = dot {
                commands::write_dot(&doc, &dir)?;
            }
            Ok(0)
        }
        Command::Member { set, config } => {
            let text = std::fs::read_to_string(&set)?;
            let doc: ResultDocument = serde_json::from_str(&text)
                .map_err(|e| CliError::Usage(format!("{}: {e}", set.display())))?;
            let member = commands::cmd_member(&doc, &config)?;
            println!("{}", if member { "member" } else { "not a member" });
            Ok(if member { 0 } else { 1 })
        }
        Command::Simulate { file, from, steps } => {
            let f = commands::load(&file)?;
            for line in commands::cmd_simulate(&f, &from, steps)? {
                println!("{line}");
            }
            Ok(0)
        }
        Command::Selftest {
            seeds,
            out_dir,
            inject_fault,
        } => {
            let report = commands::cmd_selftest(seeds, inject_fault, &out_dir)?;
            match report.divergence {
                None => {
                    println!("{} cases agree", report.cases);
                    Ok(0)
                }
                Some((seed, path)) => {
                    println!(
                        "divergence at seed {seed}; reproducer written to {}",
                        path.display()
                    );
                    Ok(1)
                }
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
