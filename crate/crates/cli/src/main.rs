//! `asdplda` command-line tool.
//!
//! Exit codes: 0 on success, 1 on usage or configuration errors, 2 on data
//! errors (unreadable or malformed inputs, degenerate data).

mod commands;
mod sets;

use std::path::PathBuf;
use std::process::ExitCode;

use asdplda::config::Config;
use asdplda::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "asdplda", version, about = "Speaker-verification backend with side-information dependent calibration")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand. Flags override config-file values.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Flat `key = value` config file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Comma-separated snapshot epochs; training runs to the largest.
    #[arg(long, global = true, value_delimiter = ',', value_name = "LIST")]
    pub epochs: Option<Vec<usize>>,
    #[arg(long, global = true)]
    pub pi: Option<f64>,
    /// LDA output dim of the model being built (`baseline_lda_dim` for init).
    #[arg(long = "lda-dim", global = true)]
    pub lda_dim: Option<usize>,
    #[arg(long = "z-dim", global = true)]
    pub z_dim: Option<usize>,
    #[arg(long = "m-dim", global = true)]
    pub m_dim: Option<usize>,
    /// Train the quadratic terms of the calibration maps.
    #[arg(long = "use-gamma", global = true)]
    pub use_gamma: bool,
    /// Externally supplied m-vectors (embedding file keyed by sample id).
    #[arg(long = "m-vectors", global = true, value_name = "PATH")]
    pub m_vectors: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the synthetic multi-condition benchmark.
    Generate,
    /// Fit the LDA + PLDA + global calibration baseline.
    Init {
        /// Training set prefix.
        #[arg(long)]
        train: PathBuf,
        /// Calibration set prefixes; sampled training trials when absent.
        #[arg(long)]
        cal: Vec<PathBuf>,
    },
    /// Train an AS-DPLDA model (both stages) and write its snapshots.
    Train {
        #[arg(long)]
        train: PathBuf,
    },
    /// Train one model per seed and select the best snapshot on dev sets.
    Sweep {
        #[arg(long)]
        train: PathBuf,
        #[arg(long, required = true)]
        dev: Vec<PathBuf>,
    },
    /// Score trials with a PLDA or AS-DPLDA model file.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        set: PathBuf,
        /// Trial list; defaults to the set's own trial file.
        #[arg(long)]
        trials: Option<PathBuf>,
    },
    /// Score trials with trial-based calibration of a PLDA model.
    TbcScore {
        #[arg(long)]
        model: PathBuf,
        /// Calibration pool set prefixes.
        #[arg(long, required = true)]
        pool: Vec<PathBuf>,
        #[arg(long)]
        set: PathBuf,
        #[arg(long)]
        trials: Option<PathBuf>,
    },
    /// Actual Cllr, min Cllr and EER of score files.
    Evaluate {
        #[arg(long, required = true)]
        scores: Vec<PathBuf>,
    },
    /// 2-D PCA projection of z-vectors with per-set centroids.
    AnalyzeZ {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long, required = true)]
        set: Vec<PathBuf>,
    },
    /// EER of PLDA on z-vectors against PLDA on embeddings.
    ProbeZ {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long, required = true)]
        set: Vec<PathBuf>,
    },
}

impl Common {
    fn config(&self, init: bool) -> asdplda::Result<Config> {
        let mut cfg = match &self.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.epochs {
            cfg.set("epochs", &v.iter().map(usize::to_string).collect::<Vec<_>>().join(","))?;
        }
        if let Some(v) = self.pi {
            cfg.set("pi", &v.to_string())?;
        }
        if let Some(v) = self.lda_dim {
            if init {
                cfg.baseline_lda_dim = v;
            } else {
                cfg.lda_dim = v;
            }
        }
        if let Some(v) = self.z_dim {
            cfg.z_dim = v;
        }
        if let Some(v) = self.m_dim {
            cfg.m_dim = v;
        }
        if self.use_gamma {
            cfg.use_gamma = true;
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> asdplda::Result<()> {
    let c = &cli.common;
    let cfg = c.config(matches!(cli.command, Command::Init { .. }))?;
    std::fs::create_dir_all(&c.out).map_err(|e| Error::InvalidData(format!("{}: {e}", c.out.display())))?;
    match &cli.command {
        Command::Generate => commands::generate(&cfg, c),
        Command::Init { train, cal } => commands::init(&cfg, c, train, cal),
        Command::Train { train } => commands::train(&cfg, c, train),
        Command::Sweep { train, dev } => commands::sweep(&cfg, c, train, dev),
        Command::Score { model, set, trials } => commands::score(&cfg, c, model, set, trials.as_deref()),
        Command::TbcScore { model, pool, set, trials } => {
            commands::tbc_score(&cfg, c, model, pool, set, trials.as_deref())
        }
        Command::Evaluate { scores } => commands::evaluate(c, scores),
        Command::AnalyzeZ { model, train, set } => commands::analyze_z(&cfg, c, model, train, set),
        Command::ProbeZ { model, train, set } => commands::probe_z(c, model, train, set),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) => 1,
                _ => 2,
            })
        }
    }
}
