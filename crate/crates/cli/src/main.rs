use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use copulagraph::par::Execution;
use copulagraph::synth::{self, Setting, SynthConfig};
use copulagraph::trainer::TrainConfig;
use copulagraph_cli::dataset::Dataset;
use copulagraph_cli::reproduce::{default_grid, render, simulation_variants, table_variants, GridRun};
use copulagraph_cli::run::{self, read_json, write_json, Checkpoint, RunConfig, CHECKPOINT, RESULT};
use copulagraph::model::ModelVariant;

#[derive(Parser)]
#[command(name = "copulagraph", version, about = "Copula-coupled graph regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth {
        /// JSON generator config; defaults are used for missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        setting: Option<Setting>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train one variant on a dataset directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        variant: String,
        /// JSON training config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        opts: TrainOpts,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Re-evaluate a checkpoint on the test split of its run.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Monte Carlo draws for copula predictions.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// MLP, GCN and SAGE over a parameter grid of a simulation setting.
    ReproduceSim {
        #[arg(long)]
        setting: Setting,
        /// Comma-separated σ² (setting a) or τ (settings b, c) values.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
        #[command(flatten)]
        grid_opts: GridOpts,
    },
    /// All continuous variants on setting c over a τ grid.
    ReproduceTable1 {
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
        /// Comma-separated variant names; all table variants by default.
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<String>>,
        #[command(flatten)]
        grid_opts: GridOpts,
    },
}

#[derive(Args)]
struct TrainOpts {
    #[arg(long)]
    lr: Option<f64>,
    /// Monte Carlo draws for test predictions of copula variants.
    #[arg(long)]
    samples: Option<usize>,
}

#[derive(Args)]
struct GridOpts {
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    train: TrainOpts,
    #[arg(long)]
    out_dir: PathBuf,
}

impl TrainOpts {
    fn apply(&self, mut cfg: TrainConfig) -> anyhow::Result<TrainConfig> {
        if let Some(lr) = self.lr {
            cfg.learning_rate = lr;
        }
        if let Some(l) = self.samples {
            cfg.test_samples = l;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Synth {
            config,
            setting,
            seed,
            out_dir,
        } => {
            let mut cfg: SynthConfig = match &config {
                Some(path) => read_json(path)?,
                None => SynthConfig::default(),
            };
            if let Some(s) = setting {
                cfg.setting = s;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.validate()?;
            let data = synth::generate(&cfg)?;
            Dataset::from_synth(data, cfg.seed).save(&out_dir)?;
            println!(
                "wrote {} nodes, {} edges to {}",
                cfg.n,
                cfg.s,
                out_dir.display()
            );
        }
        Command::Train {
            data,
            variant,
            config,
            seed,
            opts,
            out_dir,
        } => {
            let dataset = Dataset::load(&data)?;
            let variant = ModelVariant::parse(&variant, dataset.family())?;
            let base: TrainConfig = match &config {
                Some(path) => read_json(path)?,
                None => TrainConfig::default(),
            };
            let run_cfg = RunConfig::new(data.clone(), &variant, seed, opts.apply(base)?);
            let (checkpoint, result) = run::train_run(&dataset, &run_cfg)?;
            std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
            write_json(&out_dir.join(CHECKPOINT), &checkpoint)?;
            write_json(&out_dir.join(RESULT), &result)?;
            println!(
                "{} test {} = {:.6} (best epoch {}, {} epochs)",
                result.variant, result.metric, result.test_metric, result.best_epoch, result.epochs
            );
        }
        Command::Eval {
            data,
            checkpoint,
            samples,
        } => {
            let dataset = Dataset::load(&data)?;
            let ckpt: Checkpoint = read_json(&checkpoint)?;
            let metric = run::evaluate_checkpoint(&dataset, &ckpt, samples)?;
            println!("{} test {} = {metric:.6}", ckpt.variant, run::metric_name(ckpt.family));
        }
        Command::ReproduceSim { setting, grid, grid_opts } => {
            if setting == Setting::C {
                bail!("the simulation study covers settings a and b; use reproduce-table1 for setting c");
            }
            let grid = grid.unwrap_or_else(|| default_grid(setting));
            run_grid(setting, grid, simulation_variants(), &grid_opts)?;
        }
        Command::ReproduceTable1 {
            grid,
            variants,
            grid_opts,
        } => {
            let variants = match variants {
                Some(names) => names
                    .iter()
                    .map(|n| ModelVariant::parse(n, copulagraph::marginals::Family::Normal))
                    .collect::<Result<Vec<_>, _>>()?,
                None => table_variants(),
            };
            let grid = grid.unwrap_or_else(|| default_grid(Setting::C));
            run_grid(Setting::C, grid, variants, &grid_opts)?;
        }
    }
    Ok(())
}

fn run_grid(setting: Setting, grid: Vec<f64>, variants: Vec<ModelVariant>, opts: &GridOpts) -> anyhow::Result<()> {
    let run = GridRun {
        setting,
        grid,
        variants,
        trials: opts.trials,
        seed: opts.seed,
        train: opts.train.apply(TrainConfig::default())?,
    };
    let cells = run.execute(&opts.out_dir, Execution::default())?;
    print!("{}", render(&cells));
    println!("summary written to {}", Path::new(&opts.out_dir).join("summary.csv").display());
    Ok(())
}
