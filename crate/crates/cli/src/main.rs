use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use avloc::ablate::{ablate, table, Axis};
use avloc::checkpoint::Checkpoint;
use avloc::rng::Purpose;
use avloc::synth::{load_dataset, write_dataset, Dataset, GeneratorConfig};
use avloc::train::{evaluate, Trainer};
use avloc::viz::visualize;
use avloc::{Config, Error, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "avloc", version, about = "Self-supervised sound source localization on synthetic scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn resolve(&self, base: Config) -> Result<Config> {
        let mut cfg = match &self.config {
            Some(p) => Config::load(p)?,
            None => base,
        };
        for o in &self.overrides {
            cfg.apply_override(o)?;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate train and test dataset files.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "train.bin")]
        train_out: PathBuf,
        #[arg(long, default_value = "test.bin")]
        test_out: PathBuf,
    },
    /// Train a model and write a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "model.ckpt")]
        out: PathBuf,
        /// Also write the per-epoch log here.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Score a checkpoint on the test set.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Predictive coding cycles at test time.
        #[arg(long)]
        steps: Option<usize>,
        /// Write the report table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and score one variant per value of an axis.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// scaling, stop_gradient, pcm_T, fusion, augmentation or negatives.
        #[arg(long)]
        axis: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export inputs and per-cycle heatmaps as PPM files.
    Viz {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated test-set indices.
        #[arg(long, value_delimiter = ',', default_value = "0")]
        indices: Vec<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value = "viz")]
        out_dir: PathBuf,
    },
}

fn dataset(cfg: &Config, path: &str, purpose: Purpose, count: usize) -> Result<Dataset> {
    if path.is_empty() {
        let gen = GeneratorConfig::from_config(cfg);
        gen.validate()?;
        Ok(Dataset::generate(&gen, cfg.seed, purpose, count))
    } else {
        load_dataset(Path::new(path))
    }
}

fn train_set(cfg: &Config) -> Result<Dataset> {
    dataset(cfg, &cfg.train_data, Purpose::TrainScene, cfg.train_size)
}

fn test_set(cfg: &Config) -> Result<Dataset> {
    dataset(cfg, &cfg.test_data, Purpose::TestScene, cfg.test_size)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Config for a checkpointed model: the saved echo with command-line
/// overrides applied (data paths, seeds, batch size).
fn checkpoint_config(common: &Common, ckpt: &Checkpoint) -> Result<Config> {
    common.resolve(ckpt.config.clone())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { common, train_out, test_out } => {
            let cfg = common.resolve(Config::default())?;
            let gen = GeneratorConfig::from_config(&cfg);
            gen.validate()?;
            write_dataset(&Dataset::generate(&gen, cfg.seed, Purpose::TrainScene, cfg.train_size), &train_out)?;
            write_dataset(&Dataset::generate(&gen, cfg.seed, Purpose::TestScene, cfg.test_size), &test_out)?;
            println!("wrote {} and {}", train_out.display(), test_out.display());
        }
        Command::Train { common, out, log } => {
            let cfg = common.resolve(Config::default())?;
            let data = train_set(&cfg)?;
            let mut sink = match &log {
                Some(p) => Some(File::create(p).map_err(|e| Error::io(p, e))?),
                None => None,
            };
            let mut write_err = None;
            let trained = Trainer::new(cfg.clone(), &data)?.run(&mut |line| {
                println!("{line}");
                if let Some(f) = sink.as_mut() {
                    if let Err(e) = writeln!(f, "{line}") {
                        write_err.get_or_insert(e);
                    }
                }
            })?;
            if let (Some(e), Some(p)) = (write_err, &log) {
                return Err(Error::io(p, e));
            }
            let ckpt = Checkpoint {
                config: cfg,
                epoch: trained.kept_epoch as u32,
                rng_cursor: trained.epochs_run as u64,
                store: trained.store,
                optimizer: trained.optimizer,
            };
            ckpt.save(&out)?;
            println!("saved {}", out.display());
        }
        Command::Eval { common, checkpoint, steps, out } => {
            let (mut ckpt, model) = Checkpoint::load(&checkpoint)?;
            let cfg = checkpoint_config(&common, &ckpt)?;
            let data = test_set(&cfg)?;
            let report = evaluate(&cfg, &model, &mut ckpt.store, &data, steps)?;
            emit(out.as_deref(), &report.to_csv())?;
        }
        Command::Ablate { common, axis, out } => {
            let axis: Axis = axis.parse().map_err(Error::Usage)?;
            let cfg = common.resolve(Config::default())?;
            let (train, test) = (train_set(&cfg)?, test_set(&cfg)?);
            let rows = ablate(axis, &cfg, &train, &test, &mut |line| eprintln!("{line}"))?;
            emit(out.as_deref(), &table(&rows))?;
        }
        Command::Viz { common, checkpoint, indices, steps, out_dir } => {
            let (mut ckpt, model) = Checkpoint::load(&checkpoint)?;
            let cfg = checkpoint_config(&common, &ckpt)?;
            let data = test_set(&cfg)?;
            for p in visualize(&cfg, &model, &mut ckpt.store, &data, &indices, steps, &out_dir)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
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
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
