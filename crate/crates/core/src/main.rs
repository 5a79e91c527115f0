use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use mig_rerank::cli;
use mig_rerank::config::AppConfig;
use mig_rerank::Result;

#[derive(Parser)]
#[command(
    name = "migrank",
    version,
    about = "Information-gain reranker training and retrieval"
)]
struct Args {
    /// TOML config file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for scoring (0 = all cores)
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true, default_value = "warn")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fetch with/without-document logprobs for each triplet
    Teach {
        #[arg(long)]
        triplets: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute information gain for each triplet
    Score {
        #[arg(long)]
        triplets: PathBuf,
        /// Logprob records from `teach`; without it the configured teacher is queried
        #[arg(long)]
        logprobs: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Label, drop neutrals and balance
    BuildDataset {
        #[arg(long)]
        scored: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Keep the class imbalance
        #[arg(long)]
        no_balance: bool,
    },
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        model_out: PathBuf,
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Retrieve candidates for a query, rerank them and print the context
    Rerank {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        query: String,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        k: Option<u64>,
        /// Candidate pool size from first-stage retrieval
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        candidates: Option<u64>,
    },
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        scored: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        k: Option<u64>,
        /// Per-query metrics CSV
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Train and evaluate over a grid of loss weights and label thresholds
    Sweep {
        /// Scored (unlabeled) triplets
        #[arg(long)]
        scored: PathBuf,
        #[arg(long, value_delimiter = ',')]
        alphas: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        taus: Option<Vec<f64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(args: Args) -> Result<String> {
    let mut cfg = match &args.config {
        Some(p) => AppConfig::load(p)?,
        None => AppConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.set_seed(seed);
    }
    if let Some(jobs) = args.jobs {
        cfg.jobs = jobs;
    }
    match args.command {
        Command::Teach { triplets, out } => {
            cfg.validate()?;
            cli::cmd_teach(&cfg, &triplets, &out)
        }
        Command::Score {
            triplets,
            logprobs,
            out,
        } => {
            cfg.validate()?;
            cli::cmd_score(&cfg, &triplets, logprobs.as_deref(), &out)
        }
        Command::BuildDataset {
            scored,
            out,
            no_balance,
        } => {
            if no_balance {
                cfg.labeling.balance = false;
            }
            cfg.validate()?;
            cli::cmd_build_dataset(&cfg, &scored, &out)
        }
        Command::Train {
            dataset,
            model_out,
            alpha,
        } => {
            if let Some(a) = alpha {
                cfg.train.alpha = a;
            }
            cfg.validate()?;
            cli::cmd_train(&cfg, &dataset, &model_out)
        }
        Command::Rerank {
            model,
            corpus,
            query,
            k,
            candidates,
        } => {
            if let Some(m) = candidates {
                cfg.pipeline.candidates = m as usize;
            }
            let k = k.map_or(cfg.pipeline.k, |k| k as usize);
            cfg.validate()?;
            cli::cmd_rerank(&cfg, &model, &corpus, &query, k)
        }
        Command::Eval {
            model,
            scored,
            k,
            csv,
        } => {
            if let Some(k) = k {
                cfg.pipeline.k = k as usize;
            }
            cfg.validate()?;
            cli::cmd_eval(&cfg, &model, &scored, csv.as_deref())
        }
        Command::Sweep {
            scored,
            alphas,
            taus,
            out,
        } => {
            cfg.validate()?;
            let alphas = alphas.unwrap_or_else(|| cfg.sweep.alphas.clone());
            let taus = taus.unwrap_or_else(|| cfg.sweep.taus.clone());
            cli::cmd_sweep(&cfg, &scored, &alphas, &taus, out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    env_logger::Builder::new()
        .parse_filters(&args.log_level)
        .format_timestamp(None)
        .init();
    match run(args) {
        Ok(text) => {
            let mut stdout = std::io::stdout().lock();
            // a closed pipe is not an error worth reporting
            let _ = stdout.write_all(text.as_bytes());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", json!({"error": e.kind(), "message": e.to_string()}));
            ExitCode::FAILURE
        }
    }
}
