use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use issa_core::bench::{self, BenchConfig, Format};
use issa_core::fault::Fault;
use issa_core::{IssaError, Result};

/// Cost and correctness harness for interlaced sparse self-attention.
#[derive(Parser)]
#[command(name = "issa-bench", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the invariant suite; exits non-zero naming any failing property.
    Verify {
        /// Test-only: inject a defect to show the suite can fail.
        #[arg(long, default_value = "none")]
        fault: Fault,
    },
    /// Time and count methods across map sizes.
    Sweep {
        /// Comma-separated `N` or `HxW` sizes.
        #[arg(long, default_value = "16,32,64")]
        sizes: String,
        /// Comma-separated methods: sa, issa, issa-short-first, sa-down<k>.
        #[arg(long, default_value = "sa,issa")]
        methods: String,
        /// `auto` or comma-separated `P` / `PhxPw` partitions.
        #[arg(long, default_value = "auto")]
        partitions: String,
        #[command(flatten)]
        common: Common,
    },
    /// Interlaced cost for every partition in a grid, optimum flagged.
    Ablate {
        /// Comma-separated `N` or `HxW` sizes; one table each.
        #[arg(long, default_value = "32")]
        sizes: String,
        /// Partition counts tried along each axis.
        #[arg(long, default_value = "4,8,16")]
        partitions: String,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long, default_value_t = 64)]
    channels: usize,
    #[arg(long, default_value_t = 1)]
    batch: usize,
    /// Overridden by the ISSA_SEED environment variable.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    #[arg(long, default_value_t = 2)]
    warmup: usize,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

impl Common {
    fn config(&self) -> Result<BenchConfig> {
        let seed = match std::env::var("ISSA_SEED") {
            Ok(s) => s
                .trim()
                .parse()
                .map_err(|_| IssaError::Parameter(format!("ISSA_SEED '{s}' is not a u64")))?,
            Err(_) => self.seed,
        };
        Ok(BenchConfig {
            channels: self.channels,
            batch: self.batch,
            seed,
            reps: self.reps,
            warmup: self.warmup,
            ..BenchConfig::default()
        })
    }

    fn writer(&self) -> Result<Box<dyn Write>> {
        Ok(match &self.out {
            Some(p) => Box::new(BufWriter::new(File::create(p)?)),
            None => Box::new(io::stdout().lock()),
        })
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Verify { fault } => {
            let checks = bench::verify(fault);
            for c in &checks {
                println!("{c}");
            }
            let failing: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
            println!("{} properties, {} failed", checks.len(), failing.len());
            if failing.is_empty() {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("verification failed: {}", failing.join(", "));
                Ok(ExitCode::FAILURE)
            }
        }
        Command::Sweep {
            sizes,
            methods,
            partitions,
            common,
        } => {
            let config = BenchConfig {
                sizes: bench::parse_pairs(&sizes)?,
                methods: bench::parse_methods(&methods)?,
                partitions: bench::parse_partitions(&partitions)?,
                ..common.config()?
            };
            let rows = bench::sweep(&config)?;
            bench::write_cost_rows(common.writer()?, &rows, common.format)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Ablate {
            sizes,
            partitions,
            common,
        } => {
            let config = common.config()?;
            let grid: Vec<usize> = partitions
                .split(',')
                .map(|t| {
                    t.trim()
                        .parse()
                        .map_err(|_| IssaError::Parse(format!("bad partition count '{t}'")))
                })
                .collect::<Result<_>>()?;
            let mut rows = Vec::new();
            for size in bench::parse_pairs(&sizes)? {
                rows.extend(bench::ablate(size, &grid, &config)?);
            }
            bench::write_ablate_rows(common.writer()?, &rows, common.format)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
