use std::path::PathBuf;
use std::process::ExitCode;

use awa_core::attack::WeightVectorQ;
use awa_core::cli::{self, ExperimentConfig};
use clap::{Parser, Subcommand};

/// Data reconstruction experiments against FedAvg clients.
#[derive(Parser, Debug)]
#[command(name = "awa", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// TOML experiment file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `out` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed (overrides `seed` in the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Client setting preset: 1 = (E=1, B=1), 2 = (4, 1), 3 = (1, 4), 4 = (2, 2), all with N = 4.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    case: Option<u8>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the client for one observed round and save what the server sees.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Attack a saved round with a fixed Q.
    Attack {
        #[command(flatten)]
        common: Common,
        /// Directory written by `simulate`.
        #[arg(long)]
        round: PathBuf,
        /// Six comma-separated values q_cv,q_bn,q_fc,q_en,p_mean,p_var.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        q: Option<Vec<f64>>,
        /// Use the weighted loss (the default is the unweighted one unless the config says otherwise).
        #[arg(long)]
        weighted: bool,
        /// Start the dummy batch at the ground truth.
        #[arg(long)]
        init_from_truth: bool,
    },
    /// Tune Q with Bayesian optimization and attack with the result.
    Tune {
        #[command(flatten)]
        common: Common,
        /// Directory written by `simulate`.
        #[arg(long)]
        round: PathBuf,
    },
    /// Gather the metrics of finished runs into one CSV table.
    Report {
        /// Run directories holding metrics.json.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Output CSV path.
        #[arg(long, default_value = "report.csv")]
        out: PathBuf,
    },
}

enum Failure {
    Config(String),
    Runtime(String),
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf), Failure> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p).map_err(|e| Failure::Config(e.to_string()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(case) = common.case {
        cfg.apply_case(case)
            .map_err(|e| Failure::Config(e.to_string()))?;
    }
    cfg.validate().map_err(|e| Failure::Config(e.to_string()))?;
    let out = common
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| {
            Failure::Config("no output directory: pass --out or set `out` in the config".into())
        })?;
    Ok((cfg, out))
}

fn runtime(e: awa_core::Error) -> Failure {
    Failure::Runtime(e.to_string())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate { common } => {
            let (cfg, out) = load(&common)?;
            let s = cli::cmd_simulate(&cfg, &out).map_err(runtime)?;
            println!(
                "round {} saved to {} (labels {:?})",
                s.record.round,
                out.display(),
                s.labels
            );
        }
        Command::Attack {
            common,
            round,
            q,
            weighted,
            init_from_truth,
        } => {
            let (mut cfg, out) = load(&common)?;
            if weighted {
                cfg.attack.loss = awa_core::attack::LossKind::Weighted;
            }
            let q = match q.as_deref() {
                None => None,
                Some(&[a, b, c, d, e, f]) => Some(WeightVectorQ::from_array([a, b, c, d, e, f])),
                Some(v) => {
                    return Err(Failure::Config(format!(
                        "--q takes 6 values, got {}",
                        v.len()
                    )))
                }
            };
            let m = cli::cmd_attack(&cfg, &round, q, init_from_truth, &out).map_err(runtime)?;
            match m.matched {
                Some(b) => println!(
                    "f = {:e}; matched mean: mse {:.6}, psnr {:.3} dB, ssim {:.4}",
                    m.f, b.mean.mse, b.mean.psnr, b.mean.ssim
                ),
                None => println!("f = {:e}", m.f),
            }
        }
        Command::Tune { common, round } => {
            let (cfg, out) = load(&common)?;
            let s = cli::cmd_tune(&cfg, &round, &out).map_err(runtime)?;
            println!(
                "Q* = {:?} (trial {}), f = {:e}",
                s.q_star.to_array(),
                s.best_trial,
                s.metrics.f
            );
        }
        Command::Report { runs, out } => {
            let rows = cli::cmd_report(&runs, &out).map_err(runtime)?;
            let ok = rows.iter().filter(|r| r.status == "ok").count();
            println!("{ok} of {} runs reported in {}", rows.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
