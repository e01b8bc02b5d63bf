use clap::{Args, Parser, Subcommand};
use conrep_cli::commands::{
    self, cmd_analyze, cmd_eval, cmd_gen, cmd_gradcheck, cmd_sweep, cmd_train, parse_grid,
    Usage,
};
use conrep_cli::config::{resolve, Overrides};
use conrep_cli::synth::SynthSizes;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "conrep",
    about = "Contrastive sentence-representation training and evaluation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct ConfigFlags {
    /// key=value config file; command-line flags take precedence
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Mini-batch size
    #[arg(long)]
    batch: Option<usize>,
    /// Adam learning rate
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// InfoNCE temperature
    #[arg(long)]
    tau: Option<f64>,
    /// Reconstruction weight
    #[arg(long)]
    lambda: Option<f64>,
    /// Dropout probability in [0, 1)
    #[arg(long)]
    dropout: Option<f64>,
}

impl ConfigFlags {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            batch: self.batch,
            lr: self.lr,
            epochs: self.epochs,
            tau: self.tau,
            lambda: self.lambda,
            dropout: self.dropout,
            ..Overrides::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic corpus, STS set and probe set
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1024)]
        corpus_size: usize,
        #[arg(long, default_value_t = 300)]
        sts_size: usize,
        #[arg(long, default_value_t = 400)]
        probe_size: usize,
    },
    /// Train an encoder; writes checkpoint.json, trace.csv and config.txt
    Train {
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Dev STS file used for checkpoint selection
        #[arg(long)]
        sts: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigFlags,
    },
    /// Evaluate a checkpoint; prints and writes the metric report
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        sts: Option<PathBuf>,
        /// Optional probe TSV for linear-probe accuracy
        #[arg(long)]
        probe: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write an (alignment, uniformity, spearman) CSV for a checkpoint
    Analyze {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        sts: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grid-search batch size, learning rate and lambda
    Sweep {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        sts: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated list, e.g. 0,0.4,4
        #[arg(long)]
        grid_lambda: Option<String>,
        /// Comma-separated list, e.g. 16,32
        #[arg(long)]
        grid_batch: Option<String>,
        /// Comma-separated list, e.g. 1e-3,3e-3
        #[arg(long)]
        grid_lr: Option<String>,
        #[command(flatten)]
        cfg: ConfigFlags,
    },
    /// Finite-difference check of the full-model gradient
    Gradcheck {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigFlags,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Gen { out, seed, corpus_size, sts_size, probe_size } => cmd_gen(
            &out,
            seed,
            SynthSizes { corpus: corpus_size, sts: sts_size, probe: probe_size },
        ),
        Command::Train { corpus, sts, out, cfg } => {
            let run_cfg = resolve(cfg.config.as_deref(), &cfg.overrides())
                .map_err(usage)?;
            cmd_train(
                commands::required_path(&corpus, "--corpus")?,
                commands::required_path(&sts, "--sts")?,
                commands::out_dir(&out)?,
                &run_cfg,
            )
        }
        Command::Eval { checkpoint, sts, probe, out } => cmd_eval(
            commands::required_path(&checkpoint, "--checkpoint")?,
            commands::required_path(&sts, "--sts")?,
            probe.as_deref(),
            commands::out_dir(&out)?,
        ),
        Command::Analyze { checkpoint, sts, out } => cmd_analyze(
            commands::required_path(&checkpoint, "--checkpoint")?,
            commands::required_path(&sts, "--sts")?,
            commands::out_dir(&out)?,
        ),
        Command::Sweep { corpus, sts, out, grid_lambda, grid_batch, grid_lr, cfg } => {
            let run_cfg = resolve(cfg.config.as_deref(), &cfg.overrides())
                .map_err(usage)?;
            cmd_sweep(
                commands::required_path(&corpus, "--corpus")?,
                commands::required_path(&sts, "--sts")?,
                commands::out_dir(&out)?,
                &run_cfg,
                &parse_grid::<usize>(&grid_batch, "--grid-batch")?,
                &parse_grid::<f64>(&grid_lr, "--grid-lr")?,
                &parse_grid::<f64>(&grid_lambda, "--grid-lambda")?,
            )
        }
        Command::Gradcheck { corpus, cfg } => {
            let run_cfg = resolve(cfg.config.as_deref(), &cfg.overrides())
                .map_err(usage)?;
            cmd_gradcheck(corpus.as_deref(), &run_cfg)
        }
    }
}

fn usage(e: anyhow::Error) -> anyhow::Error {
    anyhow::anyhow!(Usage(e.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = if e.downcast_ref::<Usage>().is_some() { 2 } else { 1 };
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}
