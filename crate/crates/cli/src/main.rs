use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use seqpatch::pipeline::{self, PipelineConfig, Summary, TrainSubset};
use seqpatch::synth::Split;
use seqpatch::{Error, Result};

#[derive(Parser)]
#[command(
    name = "seqpatch",
    version,
    about = "Sequential PatchCore pipelines on synthetic water-stain data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline config (JSON); flags override its fields.
    #[arg(long, short)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Nominal training samples.
        #[arg(long)]
        count: Option<usize>,
        /// Emit clean and stained twins of every training sample.
        #[arg(long)]
        paired: bool,
        #[arg(long, value_enum)]
        stains: Option<Toggle>,
        /// Emit the three light variants per sample.
        #[arg(long)]
        dr: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit a coreset bank on the training split.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Save after every epoch and resume from here if it exists.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Which training twins to use.
        #[arg(long, value_enum)]
        subset: Option<SubsetArg>,
        #[arg(long)]
        capacity: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        chunk: Option<usize>,
    },
    /// Merge banks into one of the given size.
    Meld {
        #[command(flatten)]
        common: Common,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write anomaly maps and binary masks.
    Score {
        #[command(flatten)]
        common: Common,
        coreset: Option<PathBuf>,
        /// Standalone grayscale PNGs; without them the dataset split is scored.
        images: Vec<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long, conflicts_with = "estimate_on")]
        threshold: Option<f64>,
        #[arg(long, value_enum)]
        estimate_on: Option<SplitArg>,
        #[arg(long)]
        chunk: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare predicted masks with the dataset annotations.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Directory written by `score`.
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also log the coverage sweep table.
        #[arg(long)]
        sweep: bool,
        #[arg(long)]
        overlays: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Validation,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Validation => Split::Validation,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SubsetArg {
    All,
    Clean,
    Stained,
}

impl From<SubsetArg> for TrainSubset {
    fn from(s: SubsetArg) -> Self {
        match s {
            SubsetArg::All => TrainSubset::All,
            SubsetArg::Clean => TrainSubset::Clean,
            SubsetArg::Stained => TrainSubset::Stained,
        }
    }
}

fn load_config(common: &Common) -> Result<PipelineConfig> {
    match &common.config {
        Some(p) => PipelineConfig::load(p),
        None => Ok(PipelineConfig::default()),
    }
}

fn required(
    flag: Option<PathBuf>,
    fallback: &Option<PathBuf>,
    name: &str,
    key: &str,
) -> Result<PathBuf> {
    flag.or_else(|| fallback.clone())
        .ok_or_else(|| Error::config(format!("missing --{name} (or paths.{key} in the config)")))
}

fn run(command: Command) -> Result<Summary> {
    match command {
        Command::Synth {
            common,
            out,
            count,
            paired,
            stains,
            dr,
            seed,
        } => {
            let mut cfg = load_config(&common)?;
            let out = required(out, &cfg.paths.dataset, "out", "dataset")?;
            let d = &mut cfg.dataset;
            if let Some(n) = count {
                d.count = n;
            }
            d.paired |= paired;
            d.domain_randomization |= dr;
            if let Some(t) = stains {
                d.stains = matches!(t, Toggle::On);
            }
            if let Some(s) = seed {
                d.seed = s;
            }
            pipeline::synth(&cfg, &out)
        }
        Command::Train {
            common,
            dataset,
            out,
            checkpoint,
            subset,
            capacity,
            epochs,
            chunk,
        } => {
            let mut cfg = load_config(&common)?;
            let dataset = required(dataset, &cfg.paths.dataset, "dataset", "dataset")?;
            let out = required(out, &cfg.paths.coreset, "out", "coreset")?;
            if let Some(s) = subset {
                cfg.train.subset = s.into();
            }
            if let Some(c) = capacity {
                cfg.coreset.capacity = c;
            }
            if let Some(e) = epochs {
                cfg.coreset.max_epochs = e;
            }
            if let Some(c) = chunk {
                cfg.coreset.chunk_size = c;
            }
            pipeline::train(&cfg, &dataset, &out, checkpoint.as_deref()).map(|r| r.2)
        }
        Command::Meld {
            common,
            inputs,
            size,
            out,
        } => {
            let cfg = load_config(&common)?;
            pipeline::meld(&cfg, &inputs, size, &out).map(|r| r.1)
        }
        Command::Score {
            common,
            coreset,
            images,
            dataset,
            split,
            threshold,
            estimate_on,
            chunk,
            out,
        } => {
            let mut cfg = load_config(&common)?;
            let coreset = required(coreset, &cfg.paths.coreset, "coreset", "coreset")?;
            let out = required(out, &cfg.paths.scores, "out", "scores")?;
            if let Some(c) = chunk {
                cfg.coreset.chunk_size = c;
            }
            if threshold.is_some() {
                cfg.threshold.value = threshold;
            }
            if let Some(s) = estimate_on {
                cfg.threshold.value = None;
                cfg.threshold.estimate_on = s.into();
            }
            if images.is_empty() {
                let dataset = required(dataset, &cfg.paths.dataset, "dataset", "dataset")?;
                pipeline::score(&cfg, &coreset, &dataset, split.into(), &out).map(|r| r.1)
            } else {
                let t = cfg
                    .threshold
                    .value
                    .ok_or_else(|| Error::config("scoring standalone images needs --threshold"))?;
                pipeline::score_images(&cfg, &coreset, &images, t, &out).map(|r| r.1)
            }
        }
        Command::Eval {
            common,
            scores,
            dataset,
            out,
            sweep,
            overlays,
        } => {
            let mut cfg = load_config(&common)?;
            let scores = required(scores, &cfg.paths.scores, "scores", "scores")?;
            let dataset = required(dataset, &cfg.paths.dataset, "dataset", "dataset")?;
            let out = required(out, &cfg.paths.report, "out", "report")?;
            cfg.metrics.overlays |= overlays;
            let (report, summary) = pipeline::eval(&cfg, &scores, &dataset, &out)?;
            if sweep {
                log_sweep(&report);
            }
            Ok(summary)
        }
    }
}

fn log_sweep(report: &seqpatch::MetricsReport) {
    for row in &report.sweep {
        let classes: Vec<String> = row
            .class_r_dw
            .iter()
            .map(|(c, r)| format!("{c}={r:.4}"))
            .collect();
        let mean = row.mr_dw.map_or("none".into(), |m| format!("{m:.4}"));
        log::info!(
            "sweep t={} mR_dw={mean} {}",
            row.threshold,
            classes.join(" ")
        );
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
