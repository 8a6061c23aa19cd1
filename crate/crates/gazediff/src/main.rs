use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use gazediff::pipeline::{self, Outcome};
use gazediff::RunConfig;

/// Gaze trajectory diffusion: data preparation, training, sampling and evaluation.
#[derive(Parser, Debug)]
#[command(name = "gazediff", version)]
struct Cli {
    /// Key-value config file; see the README for the keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set lr=1e-3`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Print a machine-readable summary to stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Root for default and relative paths.
    #[arg(long, global = true, env = "GAZEDIFF_DATA_DIR", hide_env_values = true)]
    data_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Clean recordings into a trajectory store and split stimuli into train and test.
    Preprocess {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the denoiser on the train split.
    Train {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Output directory of `preprocess`.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Generate trajectories for every test stimulus.
    Sample {
        /// Output directory of `train`.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Trajectories per stimulus.
        #[arg(short = 'n', long)]
        count: Option<usize>,
        #[arg(long)]
        cfg_scale: Option<f64>,
        #[arg(long)]
        ddim_steps: Option<usize>,
    },
    /// Extract fixations from trajectory stores into scanpath files.
    Extract(Io),
    /// Build a saliency map per stimulus from scanpath files.
    Saliency(Io),
    /// Score generated trajectories against ground truth.
    Evaluate {
        /// Ground-truth trajectory stores or directories.
        #[arg(long, required = true, num_args = 1..)]
        gt: Vec<PathBuf>,
        /// Generated trajectory stores or directories.
        #[arg(long, required = true, num_args = 1..)]
        gen: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "dataset")]
        dataset: String,
        /// Also compute the saliency metrics.
        #[arg(long)]
        saliency: bool,
    },
    /// Saccade amplitude, direction and turn-angle histograms.
    Stats(Io),
    /// Write the synthetic two-blob dataset.
    SynthData {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct Io {
    #[arg(long)]
    out: Option<PathBuf>,
    /// Input files or directories.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
}

struct Paths {
    root: Option<PathBuf>,
}

impl Paths {
    /// An explicit input path, or a default under the data root. Relative
    /// inputs that do not exist are looked up under the root.
    fn input(&self, given: Option<&PathBuf>, default: &str, flag: &str) -> anyhow::Result<PathBuf> {
        match (given, &self.root) {
            (Some(p), Some(root)) if p.is_relative() && !p.exists() => Ok(root.join(p)),
            (Some(p), _) => Ok(p.clone()),
            (None, Some(root)) => Ok(root.join(default)),
            (None, None) => bail!("--{flag} is required when GAZEDIFF_DATA_DIR is not set"),
        }
    }

    fn inputs(&self, given: &[PathBuf]) -> Vec<PathBuf> {
        given
            .iter()
            .map(|p| match &self.root {
                Some(root) if p.is_relative() && !p.exists() => root.join(p),
                _ => p.clone(),
            })
            .collect()
    }

    fn output(&self, given: Option<&PathBuf>, default: &str, flag: &str) -> anyhow::Result<PathBuf> {
        match (given, &self.root) {
            (Some(p), _) => Ok(p.clone()),
            (None, Some(root)) => Ok(root.join(default)),
            (None, None) => bail!("--{flag} is required when GAZEDIFF_DATA_DIR is not set"),
        }
    }
}

fn base_config(cli: &Cli, start: RunConfig) -> anyhow::Result<RunConfig> {
    let mut cfg = start;
    if let Some(path) = &cli.config {
        cfg.apply_file(path)?;
    }
    cfg.apply_overrides(&cli.overrides)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> anyhow::Result<Outcome> {
    let paths = Paths {
        root: cli.data_dir.clone(),
    };
    let outcome = match &cli.command {
        Command::SynthData { out } => {
            let cfg = checked(base_config(cli, RunConfig::default())?)?;
            pipeline::synth_data(&cfg, &paths.output(out.as_ref(), ".", "out")?)?
        }
        Command::Preprocess { manifest, out } => {
            let cfg = checked(base_config(cli, RunConfig::default())?)?;
            let manifest = paths.input(manifest.as_ref(), pipeline::MANIFEST, "manifest")?;
            pipeline::preprocess(&cfg, &manifest, &paths.output(out.as_ref(), "preprocessed", "out")?)?
        }
        Command::Train {
            manifest,
            data,
            out,
            steps,
            batch,
            lr,
        } => {
            let mut cfg = base_config(cli, RunConfig::default())?;
            if let Some(s) = steps {
                cfg.train_steps = *s;
            }
            if let Some(b) = batch {
                cfg.batch = *b;
            }
            if let Some(lr) = lr {
                cfg.lr = *lr;
            }
            let cfg = checked(cfg)?;
            let manifest = paths.input(manifest.as_ref(), pipeline::MANIFEST, "manifest")?;
            let data = paths.input(data.as_ref(), "preprocessed", "data")?;
            pipeline::train(&cfg, &manifest, &data, &paths.output(out.as_ref(), "model", "out")?)?
        }
        Command::Sample {
            model,
            manifest,
            split,
            out,
            count,
            cfg_scale,
            ddim_steps,
        } => {
            let model = paths.input(model.as_ref(), "model", "model")?;
            let trained = pipeline::load_model_config(&model)
                .with_context(|| format!("reading the config stored with {}", model.display()))?;
            let mut cfg = base_config(cli, trained.clone())?;
            if let Some(n) = count {
                cfg.samples_per_stimulus = *n;
            }
            if let Some(c) = cfg_scale {
                cfg.cfg_scale = *c;
            }
            if let Some(d) = ddim_steps {
                cfg.ddim_steps = *d;
            }
            if cfg.denoiser() != trained.denoiser() {
                bail!(
                    "config changes the architecture of the trained model in {}",
                    model.display()
                );
            }
            let cfg = checked(cfg)?;
            let manifest = paths.input(manifest.as_ref(), pipeline::MANIFEST, "manifest")?;
            let split = paths.input(split.as_ref(), "preprocessed/split.csv", "split")?;
            pipeline::sample(
                &cfg,
                &model,
                &manifest,
                &split,
                &paths.output(out.as_ref(), "samples", "out")?,
            )?
        }
        Command::Extract(io) => {
            let cfg = checked(base_config(cli, RunConfig::default())?)?;
            pipeline::extract(
                &cfg,
                &paths.inputs(&io.inputs),
                &paths.output(io.out.as_ref(), "scanpaths", "out")?,
            )?
        }
        Command::Saliency(io) => {
            let cfg = checked(base_config(cli, RunConfig::default())?)?;
            pipeline::saliency(
                &cfg,
                &paths.inputs(&io.inputs),
                &paths.output(io.out.as_ref(), "saliency", "out")?,
            )?
        }
        Command::Stats(io) => {
            let cfg = checked(base_config(cli, RunConfig::default())?)?;
            pipeline::stats(
                &cfg,
                &paths.inputs(&io.inputs),
                &paths.output(io.out.as_ref(), "stats", "out")?,
            )?
        }
        Command::Evaluate {
            gt,
            gen,
            out,
            dataset,
            saliency,
        } => {
            let cfg = checked(base_config(cli, RunConfig::default())?)?;
            let out = paths.output(out.as_ref(), "report", "out")?;
            pipeline::evaluate(&cfg, &paths.inputs(gt), &paths.inputs(gen), dataset, *saliency, &out)?.0
        }
    };
    Ok(outcome)
}

fn checked(cfg: RunConfig) -> anyhow::Result<RunConfig> {
    cfg.validate()?;
    Ok(cfg)
}

fn report(outcome: &Outcome, json: bool) {
    if json {
        println!("{}", serde_json::to_string_pretty(outcome).expect("outcome serializes"));
    }
    eprintln!(
        "{}: {} processed, {} skipped, {} failed",
        outcome.command,
        outcome.processed,
        outcome.skipped,
        outcome.failures.len()
    );
    for f in &outcome.failures {
        eprintln!("  {}: {}", f.item, f.error);
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(outcome) => {
            report(&outcome, cli.json);
            if outcome.ok() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            if cli.json {
                println!("{}", serde_json::json!({ "error": format!("{err:#}") }));
            }
            ExitCode::from(2)
        }
    }
}
