use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use rovtl::config::{ExperimentConfig, TaskName};
use rovtl::data::write_dataset;
use rovtl::pipeline::{
    ablate, fit_ranking, finetune_stage, infer_outputs, load_data, pretrain_stage, run_recipe, sweep_stage,
    write_sweeps, Recipe, Splits,
};
use rovtl::report;
use rovtl_core::checkpoint::{self, Checkpoint, SchemaCheck};
use rovtl_core::evaluation::{metric, MetricKind};
use rovtl_core::finetune::MultimodalModel;
use rovtl_core::pretrain::AugmentMode;
use rovtl_core::synth::generate;
use rovtl_core::tabular::ProtocolKind;

#[derive(Parser)]
#[command(name = "rovtl", version, about = "Missingness-robust vision-tabular experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's top-level seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> anyhow::Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            c.seed = s;
        }
        Ok(c)
    }

    /// Config resolved against its data, plus the splits.
    fn prepare(&self) -> anyhow::Result<(ExperimentConfig, Splits)> {
        let mut c = self.load()?;
        let splits = load_data(&c)?;
        c.resolve(infer_outputs(c.finetune.task, &splits.train.labels)?)?;
        Ok((c, splits))
    }
}

fn parse_protocol(s: &str) -> Result<ProtocolKind, String> {
    ProtocolKind::parse(s).ok_or_else(|| format!("unknown protocol {s:?} (random, li, mi)"))
}

fn parse_metric(s: &str) -> Result<MetricKind, String> {
    MetricKind::parse(s).map_err(|e| e.to_string())
}

fn parse_mode(s: &str) -> Result<AugmentMode, String> {
    AugmentMode::parse(s).map_err(|e| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Contrastive pretraining of both encoders on the training split.
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// missing, corrupted or none.
        #[arg(long, value_parser = parse_mode)]
        mode: Option<AugmentMode>,
        /// Checkpoint path; losses are appended to `<stem>_metrics.csv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fine-tune the fused model, optionally from pretrained encoders.
    Finetune {
        #[command(flatten)]
        common: Common,
        /// Pretrained checkpoint. Loaded in transfer mode, so its schema may
        /// differ from the data's.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        task: Option<TaskName>,
        #[arg(long, conflicts_with = "trainable")]
        frozen: bool,
        #[arg(long)]
        trainable: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a fine-tuned checkpoint on the complete test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_parser = parse_metric)]
        metric: Option<MetricKind>,
    },
    /// Missingness sweep of a fine-tuned checkpoint over the test split.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_parser = parse_protocol)]
        protocol: ProtocolKind,
        #[arg(long, value_parser = parse_metric)]
        metric: Option<MetricKind>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-protocol tables (and SVG plots) from run directories.
    Report {
        #[arg(long)]
        results_dir: PathBuf,
        #[arg(long)]
        plots: bool,
    },
    /// Run every recipe (or a chosen few) into one ablation directory.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        recipes: Vec<Recipe>,
        /// Parent directory; the config's `out_dir` otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one recipe end to end: pretrain, fine-tune, sweep, report files.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        recipe: Recipe,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn metrics_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}_metrics.csv"))
}

fn load_multimodal(path: &Path, splits: &Splits) -> anyhow::Result<MultimodalModel> {
    let loaded = checkpoint::load(path, SchemaCheck::Strict(&splits.train.schema))
        .with_context(|| format!("loading {}", path.display()))?;
    match loaded.checkpoint {
        Checkpoint::Multimodal(m) => Ok(m),
        Checkpoint::Pretrain(_) => bail!("{} holds pretrained encoders, not a fine-tuned model", path.display()),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenData { common, out } => {
            let mut c = common.load()?;
            if let Some(s) = common.seed {
                c.data.synth.seed = s;
            }
            let d = generate(&c.data.synth)?;
            write_dataset(&out, &d.data, Some(&d.ground_truth))?;
            std::fs::write(out.join("synth_config.toml"), toml::to_string(&c.data.synth)?)?;
            println!("{} samples -> {}", d.data.len(), out.display());
        }
        Command::Pretrain { common, mode, out } => {
            let (mut c, splits) = common.prepare()?;
            if let Some(m) = mode {
                c.pretrain.mode = m;
            }
            let model = pretrain_stage(&c, &splits.train, Some(&metrics_path(&out)))?;
            checkpoint::save(&out, &Checkpoint::Pretrain(model), &splits.train.schema)?;
            println!("{}", out.display());
        }
        Command::Finetune {
            common,
            checkpoint: pre_path,
            task,
            frozen,
            trainable,
            out,
        } => {
            let mut c = common.load()?;
            if let Some(t) = task {
                c.finetune.task = t;
            }
            if frozen || trainable {
                c.finetune.frozen = frozen;
            }
            let splits = load_data(&c)?;
            c.resolve(infer_outputs(c.finetune.task, &splits.train.labels)?)?;
            let pre = match &pre_path {
                Some(p) => match checkpoint::load(p, SchemaCheck::Transfer(&splits.train.schema))
                    .with_context(|| format!("loading {}", p.display()))?
                    .checkpoint
                {
                    Checkpoint::Pretrain(m) => Some(m),
                    Checkpoint::Multimodal(_) => bail!("{} is not a pretraining checkpoint", p.display()),
                },
                None => None,
            };
            let outcome = finetune_stage(&c, pre.as_ref(), &splits.train, Some(&metrics_path(&out)))?;
            checkpoint::save(&out, &Checkpoint::Multimodal(outcome.model), &splits.train.schema)?;
            println!("learning rate {}", outcome.learning_rate);
        }
        Command::Evaluate {
            common,
            checkpoint,
            metric: kind,
        } => {
            let (c, splits) = common.prepare()?;
            let model = load_multimodal(&checkpoint, &splits)?;
            let kind = kind.or(c.eval.metric).context("no metric")?;
            let images: Vec<_> = splits.test.images.iter().collect();
            let preds = model.predict_batch(&images, &splits.test.tabular)?;
            let value = metric(&preds, &splits.test.labels, kind, &model.task)?;
            println!("{},{value}", kind.as_str());
        }
        Command::Sweep {
            common,
            checkpoint,
            protocol,
            metric: kind,
            out,
        } => {
            let (mut c, splits) = common.prepare()?;
            if let Some(k) = kind {
                c.eval.metric = Some(k);
            }
            let model = load_multimodal(&checkpoint, &splits)?;
            let ranking = match protocol {
                ProtocolKind::Random => None,
                _ => Some(Arc::new(fit_ranking(&c, &splits.train)?)),
            };
            let sweeps = sweep_stage(&c, &model, &splits.test, protocol, ranking.as_ref())?;
            write_sweeps(&out, &sweeps)?;
            for (seed, s) in &sweeps {
                println!("seed {seed}: mean {}", s.mean);
            }
        }
        Command::Report { results_dir, plots } => {
            for p in report::write(&results_dir, plots)? {
                println!("{}", p.display());
            }
        }
        Command::Ablate { common, recipes, out } => {
            let mut c = common.load()?;
            if let Some(o) = out {
                c.out_dir = o;
            }
            let recipes = if recipes.is_empty() { Recipe::ALL.to_vec() } else { recipes };
            let dir = ablate(&recipes, &c)?;
            println!("{}", dir.display());
        }
        Command::Run { common, recipe, out } => {
            let c = common.load()?;
            let parent = out.unwrap_or_else(|| c.out_dir.clone());
            let outcome = run_recipe(recipe, &c, &parent)?;
            println!("{}", outcome.dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // sources already quoted by their parent message are skipped
            let mut parts: Vec<String> = Vec::new();
            for cause in e.chain() {
                let msg = cause.to_string();
                if !parts.last().is_some_and(|p| p.contains(&msg)) {
                    parts.push(msg);
                }
            }
            eprintln!("error: {}", parts.join(": "));
            ExitCode::FAILURE
        }
    }
}
