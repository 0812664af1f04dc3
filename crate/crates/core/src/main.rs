use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use concave_clf::cli::reproduce::{reproduce, ReproOptions, Target};
use concave_clf::cli::{self, ExperimentConfig, CommandOutput, EXIT_CONFIG, EXIT_TOLERANCE};
use concave_clf::Error;

#[derive(Parser, Debug)]
#[command(name = "concave-clf", version, about = "Windowed decay analysis, tuning and CLF-QP simulation")]
struct Args {
    #[command(subcommand)]
    command: Command,

    /// Output directory (overrides the config's `output`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Seed for sampling-based estimates (overrides the config's `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for parallel runs (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Windowed rates, relaxation ratios and ordering verdicts.
    Analyze {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the rational-factor tuning recipe.
    Tune {
        #[arg(long)]
        config: PathBuf,
    },
    /// Simulate closed-loop runs and compute metrics.
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Reproduce a case-study table or analytic example.
    Reproduce {
        #[arg(value_enum)]
        target: TargetArg,
        /// Multiplies every tolerance.
        #[arg(long, default_value_t = 1.0)]
        tolerance_scale: f64,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TargetArg {
    Table1,
    Table2,
    Integrator,
    Caps,
    All,
}

fn load(path: &Path, args: &Args) -> Result<(ExperimentConfig, PathBuf), Error> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let out = args.out.clone().unwrap_or_else(|| cfg.output.clone());
    Ok((cfg, out))
}

fn report(result: Result<CommandOutput, Error>) -> ExitCode {
    match result {
        Ok(o) => {
            print!("{}", o.summary);
            for f in &o.files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e))
        }
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    if let Some(n) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    match &args.command {
        Command::Analyze { config } => report(load(config, &args).and_then(|(c, o)| cli::cmd_analyze(&c, &o))),
        Command::Tune { config } => report(load(config, &args).and_then(|(c, o)| cli::cmd_tune(&c, &o))),
        Command::Simulate { config } => report(load(config, &args).and_then(|(c, o)| cli::cmd_simulate(&c, &o))),
        Command::Reproduce { target, tolerance_scale } => {
            if tolerance_scale.is_nan() || *tolerance_scale <= 0.0 {
                eprintln!("error: --tolerance-scale must be positive");
                return ExitCode::from(EXIT_CONFIG);
            }
            let targets: Vec<Target> = match target {
                TargetArg::Table1 => vec![Target::Table1],
                TargetArg::Table2 => vec![Target::Table2],
                TargetArg::Integrator => vec![Target::Integrator],
                TargetArg::Caps => vec![Target::Caps],
                TargetArg::All => Target::ALL.to_vec(),
            };
            let out = args.out.clone().unwrap_or_else(|| PathBuf::from("out"));
            let opts = ReproOptions { tolerance_scale: *tolerance_scale, seed: args.seed.unwrap_or(0), ..Default::default() };
            let mut failed = Vec::new();
            for t in targets {
                match reproduce(t, &out, &opts) {
                    Ok(r) => {
                        print!("{}", r.render());
                        failed.extend(r.failures().map(|c| format!("{}: {}", t.name(), c.name)));
                    }
                    Err(e) => {
                        eprintln!("error: {}: {e}", t.name());
                        return ExitCode::from(cli::exit_code(&e));
                    }
                }
            }
            if failed.is_empty() {
                ExitCode::SUCCESS
            } else {
                eprintln!("{} tolerance failure(s):", failed.len());
                for f in &failed {
                    eprintln!("  {f}");
                }
                ExitCode::from(EXIT_TOLERANCE)
            }
        }
    }
}
