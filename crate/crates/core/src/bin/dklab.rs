use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dklab::harness::{self, RunConfig};

#[derive(Parser)]
#[command(name = "dklab", version, about = "Dean-Kawasaki SPDE laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the configured number of realizations
    #[arg(long)]
    realizations: Option<usize>,
    /// Worker threads (default: all cores)
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn load(&self) -> dklab::Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(r) = self.realizations {
            cfg.realizations = r;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run an ensemble and write trajectories and diagnostics
    Simulate(Common),
    /// Run coupled pairs with shared noise and report L¹ distances
    Couple(Common),
    /// Simulate the reflecting particle system
    Particles(Common),
    /// Recompute diagnostics from stored trajectories in --out
    Diagnose {
        #[command(flatten)]
        common: Common,
        /// Hölder exponent for the time-regularity quotients
        #[arg(long, default_value_t = 0.2)]
        beta: f64,
    },
    /// Zero-noise heat benchmark against the analytic solution
    Bench {
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
    },
}

fn report(summary: &harness::RunSummary) -> ExitCode {
    let m = &summary.metadata;
    println!("{}: {} ({} failed), written to {}", m.command, m.status, m.failed.len(), summary.out.display());
    for f in &m.failed {
        eprintln!("realization {}: {}", f.realization, f.error);
    }
    if summary.complete() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn run(cli: Cli) -> dklab::Result<ExitCode> {
    match cli.command {
        Command::Simulate(c) => {
            let cfg = c.load()?;
            let s = harness::with_pool(c.threads, || harness::simulate(&cfg, &c.out))??;
            Ok(report(&s))
        }
        Command::Couple(c) => {
            let cfg = c.load()?;
            let s = harness::with_pool(c.threads, || harness::couple(&cfg, &c.out))??;
            let sm = &s.metadata.summary;
            println!(
                "pass rate {} (verdict {}, asserted {}), median max d/d0 {}",
                sm["pass_rate"], sm["verdict"], sm["asserted"], sm["median_ratio"]
            );
            Ok(report(&s))
        }
        Command::Particles(c) => {
            let cfg = c.load()?;
            let s = harness::with_pool(c.threads, || harness::particles(&cfg, &c.out))??;
            Ok(report(&s))
        }
        Command::Diagnose { common, beta } => {
            let cfg = common.load()?;
            let v = harness::with_pool(common.threads, || harness::diagnose(&cfg, &common.out, beta))??;
            println!("{}", serde_json::to_string_pretty(&v).unwrap_or_default());
            Ok(ExitCode::SUCCESS)
        }
        Command::Bench { out, threads } => {
            let r = harness::with_pool(threads, || harness::bench(&out))??;
            for ((n, e), dt) in r.cells.iter().zip(&r.max_error).zip(&r.dt) {
                println!("cells {n:>5}  dt {dt:.3e}  max error {e:.3e}");
            }
            println!("observed order {:?}", r.observed_order);
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
