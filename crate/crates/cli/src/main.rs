//! `dbiqa`: command-line driver for corpus synthesis, stream pre-training,
//! two-stream fine-tuning and evaluation.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "dbiqa", version, about = "Deep bilinear blind image quality workbench")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (default: `<root>/<command>`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Start from the desk-scale preset instead of the plain defaults.
    #[arg(long, global = true)]
    pub toy: bool,
    /// Data root that default input and output paths live under.
    #[arg(long, global = true, env = "DBIQA_DATA_ROOT", default_value = ".")]
    pub root: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write procedural pristine source images.
    MakeSources {
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        side: Option<usize>,
    },
    /// Distort every source into the 39 classes and write the manifest.
    Synth {
        /// Directory of PPM/PGM (and optionally PNG) sources.
        #[arg(long)]
        sources: Option<PathBuf>,
    },
    /// Pre-train the distortion stream on a corpus, or the auxiliary stream.
    Pretrain {
        #[arg(long, value_enum, default_value_t = StreamKind::Scnn)]
        stream: StreamKind,
        /// Synthesized corpus (distortion stream).
        #[arg(long)]
        data: Option<PathBuf>,
        /// `path,label` CSV for the auxiliary stream; the procedural shape
        /// set is used when absent.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[command(flatten)]
        adam: AdamFlags,
    },
    /// Assemble the two-stream model and train it on quality scores.
    Finetune {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        scnn: Option<PathBuf>,
        #[arg(long)]
        aux: Option<PathBuf>,
        /// `path,score` ground truth; proxy scores from the distortion
        /// level when absent.
        #[arg(long)]
        scores: Option<PathBuf>,
        /// The score column is DMOS-like (lower is better).
        #[arg(long)]
        dmos: bool,
        #[arg(long)]
        session: Option<usize>,
        #[arg(long)]
        sessions: Option<usize>,
        #[command(flatten)]
        adam: AdamFlags,
    },
    /// Score every corpus image with a trained model.
    Predict {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Write the level-oracle reference scores for a corpus.
    OracleScores {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// SRCC/PLCC per session plus D/L/P tests.
    Eval {
        #[arg(long)]
        data: Option<PathBuf>,
        /// One score file per session.
        #[arg(long, required = true)]
        scores: Vec<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        dmos: bool,
        /// Correlations over each session's held-out sources, or over all
        /// records.
        #[arg(long, value_enum, default_value_t = SplitKind::Test)]
        split: SplitKind,
        #[arg(long, default_value = "model")]
        name: String,
    },
    /// gMAD corpus search between two score files.
    Gmad {
        #[arg(long)]
        defender: PathBuf,
        #[arg(long)]
        attacker: PathBuf,
        #[arg(long)]
        bins: Option<usize>,
        #[arg(long)]
        tolerance: Option<f64>,
    },
    /// Finite-difference gradient checks; exits 0 only if all pass.
    Gradcheck {
        #[arg(long)]
        trials: Option<usize>,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum StreamKind {
    Scnn,
    Aux,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitKind {
    Test,
    All,
}

#[derive(Args, Debug, Clone, Default)]
pub struct AdamFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr_start: Option<f64>,
    #[arg(long)]
    pub lr_end: Option<f64>,
}

impl AdamFlags {
    fn apply(&self, adam: &mut dbiqa::nn::AdamConfig) {
        if let Some(v) = self.epochs {
            adam.epochs = v;
        }
        if let Some(v) = self.batch_size {
            adam.batch_size = v;
        }
        if let Some(v) = self.lr_start {
            adam.lr_start = v;
        }
        if let Some(v) = self.lr_end {
            adam.lr_end = v;
        }
    }
}

fn run(cli: Cli) -> error::CliResult<()> {
    use commands as c;
    let common = &cli.common;
    let mut cfg = config::RunConfig::layered(
        &if common.toy { config::RunConfig::toy() } else { config::RunConfig::default() },
        common.config.as_deref(),
    )?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    match cli.command {
        Command::MakeSources { count, side } => {
            cfg.sources.count = count.unwrap_or(cfg.sources.count);
            cfg.sources.side = side.unwrap_or(cfg.sources.side);
            c::make_sources(common, &cfg)
        }
        Command::Synth { sources } => c::synth(common, &cfg, sources),
        Command::Pretrain { stream, data, labels, adam } => {
            match stream {
                StreamKind::Scnn => adam.apply(&mut cfg.pretrain.scnn_adam),
                StreamKind::Aux => adam.apply(&mut cfg.pretrain.aux_adam),
            }
            c::pretrain(common, &cfg, stream, data, labels)
        }
        Command::Finetune { data, scnn, aux, scores, dmos, session, sessions, adam } => {
            adam.apply(&mut cfg.finetune.adam);
            cfg.finetune.sessions = sessions.unwrap_or(cfg.finetune.sessions);
            cfg.finetune.session = session.unwrap_or(cfg.finetune.session);
            c::finetune(common, &cfg, c::FinetuneInputs { data, scnn, aux, scores, dmos })
        }
        Command::Predict { model, data } => c::predict(common, &cfg, model, data),
        Command::OracleScores { data } => c::oracle_scores(common, &cfg, data),
        Command::Eval { data, scores, truth, dmos, split, name } => {
            c::eval(common, &cfg, c::EvalInputs { data, scores, truth, dmos, split, name })
        }
        Command::Gmad { defender, attacker, bins, tolerance } => {
            cfg.eval.gmad_bins = bins.unwrap_or(cfg.eval.gmad_bins);
            cfg.eval.gmad_tolerance = tolerance.or(cfg.eval.gmad_tolerance);
            c::gmad(common, &cfg, &defender, &attacker)
        }
        Command::Gradcheck { trials } => {
            cfg.gradcheck.trials = trials.unwrap_or(cfg.gradcheck.trials);
            c::gradcheck(common, &cfg)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
