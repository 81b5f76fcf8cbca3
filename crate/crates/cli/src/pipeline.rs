//! Recipes and the stages they are built from.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use rovtl_core::checkpoint::{self, Checkpoint};
use rovtl_core::evaluation::{interpretability_report, sweep, write_report, MetricKind, SweepResult};
use rovtl_core::finetune::{finetune, FinetuneRecord, MultimodalModel};
use rovtl_core::fusion::{aggregate_attention, FusionKind, GateMode};
use rovtl_core::pretrain::{pretrain, AugmentMode, PretrainModel, PretrainRecord};
use rovtl_core::synth::generate;
use rovtl_core::tabular::{rank_importance, ImportanceRanking, ImportanceTask, ProtocolKind};
use rovtl_core::{Dataset, Label};

use crate::config::{ExperimentConfig, TaskName};
use crate::data::{read_dataset, write_importance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum Recipe {
    Rovtl,
    NoPretrain,
    NoGate,
    NoDownstreamMissingness,
    NoTabmofe,
    NoDgl,
    CorruptedPretrain,
    ConcatFuse,
    MaxFuse,
}

impl Recipe {
    pub const ALL: [Recipe; 9] = [
        Recipe::Rovtl,
        Recipe::NoPretrain,
        Recipe::NoGate,
        Recipe::NoDownstreamMissingness,
        Recipe::NoTabmofe,
        Recipe::NoDgl,
        Recipe::CorruptedPretrain,
        Recipe::ConcatFuse,
        Recipe::MaxFuse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Recipe::Rovtl => "rovtl",
            Recipe::NoPretrain => "no_pretrain",
            Recipe::NoGate => "no_gate",
            Recipe::NoDownstreamMissingness => "no_downstream_missingness",
            Recipe::NoTabmofe => "no_tabmofe",
            Recipe::NoDgl => "no_dgl",
            Recipe::CorruptedPretrain => "corrupted_pretrain",
            Recipe::ConcatFuse => "concat_fuse",
            Recipe::MaxFuse => "max_fuse",
        }
    }

    pub fn parse(s: &str) -> anyhow::Result<Self> {
        Self::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .with_context(|| format!("unknown recipe {s:?}"))
    }

    /// The config this recipe runs with. `rovtl` leaves it untouched.
    pub fn apply(self, base: &ExperimentConfig) -> ExperimentConfig {
        let mut c = base.clone();
        match self {
            Recipe::Rovtl => {}
            Recipe::NoPretrain => c.pretrain.enabled = false,
            Recipe::NoGate => c.fusion.gate = GateMode::Fixed(1.0),
            Recipe::NoDownstreamMissingness => c.finetune.downstream_missingness = false,
            Recipe::NoTabmofe => c.finetune.lambda = Some(0.0),
            Recipe::NoDgl => c.finetune.mode = rovtl_core::finetune::TrainingMode::Joint,
            Recipe::CorruptedPretrain => c.pretrain.mode = AugmentMode::Corrupted,
            Recipe::ConcatFuse => c.fusion.kind = FusionKind::Concat,
            Recipe::MaxFuse => c.fusion.kind = FusionKind::Max,
        }
        c
    }
}

/// Loads or generates the data and splits off the test rows.
pub struct Splits {
    pub train: Dataset,
    pub test: Dataset,
}

pub fn load_data(config: &ExperimentConfig) -> anyhow::Result<Splits> {
    let data = match &config.data.dir {
        Some(dir) => read_dataset(dir).with_context(|| format!("reading dataset {}", dir.display()))?.0,
        None => generate(&config.data.synth)?.data,
    };
    let n_test = ((data.len() as f64) * config.data.test_fraction).round() as usize;
    if n_test == 0 || n_test >= data.len() {
        bail!("{} rows cannot be split with test_fraction {}", data.len(), config.data.test_fraction);
    }
    let (train, test) = data.split_at(data.len() - n_test);
    Ok(Splits { train, test })
}

/// Output width implied by the labels.
pub fn infer_outputs(task: TaskName, labels: &[Label]) -> anyhow::Result<usize> {
    let mut width = 0;
    for l in labels {
        width = match (task, l) {
            (TaskName::Classification, Label::Class(c)) => width.max(c + 1),
            (TaskName::Multilabel, Label::Multi(b)) => b.len(),
            (TaskName::Regression, Label::Real(v)) => v.len(),
            _ => bail!("labels do not fit a {task:?} task"),
        };
    }
    Ok(width)
}

/// Creates `parent/name`, or `parent/name-2`, `-3`, … if taken. Existing
/// directories are never reused.
pub fn fresh_dir(parent: &Path, name: &str) -> anyhow::Result<PathBuf> {
    std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    for k in 1.. {
        let candidate = if k == 1 {
            parent.join(name)
        } else {
            parent.join(format!("{name}-{k}"))
        };
        match std::fs::create_dir(&candidate) {
            Ok(()) => return Ok(candidate),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e).with_context(|| format!("creating {}", candidate.display())),
        }
    }
    unreachable!()
}

pub fn timestamp() -> String {
    chrono::Local::now().format("%Y%m%dT%H%M%S").to_string()
}

/// Opens `path` for appending and writes `header` if the file is new.
fn append_csv(path: &Path, header: &str) -> anyhow::Result<File> {
    let fresh = !path.exists() || std::fs::metadata(path)?.len() == 0;
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    if fresh {
        writeln!(f, "{header}")?;
    }
    Ok(f)
}

pub const PRETRAIN_HEADER: &str = "epoch,step,loss";
pub const FINETUNE_HEADER: &str =
    "epoch,step,task_plus,task_minus,tabmofe,tabmofe_term,multi,unimodal_image,unimodal_tabular,mean_gate";
pub const SWEEP_HEADER: &str = "seed,fraction,value";

pub fn append_pretrain_metrics(path: &Path, records: &[PretrainRecord]) -> anyhow::Result<()> {
    let mut f = append_csv(path, PRETRAIN_HEADER)?;
    for r in records {
        writeln!(f, "{},{},{}", r.epoch, r.step, r.loss)?;
    }
    Ok(())
}

pub fn append_finetune_metrics(path: &Path, records: &[FinetuneRecord]) -> anyhow::Result<()> {
    let mut f = append_csv(path, FINETUNE_HEADER)?;
    for r in records {
        let p = &r.report;
        let gate = p.mean_gate.map(|g| g.to_string()).unwrap_or_default();
        writeln!(
            f,
            "{},{},{},{},{},{},{},{},{},{gate}",
            r.epoch, r.step, p.task_plus, p.task_minus, p.tabmofe, p.tabmofe_term, p.multi, p.unimodal_image, p.unimodal_tabular
        )?;
    }
    Ok(())
}

pub fn write_sweeps(path: &Path, sweeps: &[(u64, SweepResult)]) -> anyhow::Result<()> {
    let mut f = File::create(path)?;
    writeln!(f, "{SWEEP_HEADER}")?;
    for (seed, s) in sweeps {
        for (fr, v) in s.fractions.iter().zip(&s.values) {
            writeln!(f, "{seed},{fr},{v}")?;
        }
    }
    Ok(())
}

/// Reads a sweep CSV back into one result per seed.
pub fn read_sweeps(path: &Path, kind: ProtocolKind, metric: MetricKind) -> anyhow::Result<Vec<(u64, SweepResult)>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut grouped: Vec<(u64, Vec<f64>, Vec<f64>)> = Vec::new();
    for rec in r.deserialize::<(u64, f64, f64)>() {
        let (seed, f, v) = rec?;
        match grouped.last_mut() {
            Some(g) if g.0 == seed => {
                g.1.push(f);
                g.2.push(v);
            }
            _ => grouped.push((seed, vec![f], vec![v])),
        }
    }
    grouped
        .into_iter()
        .map(|(seed, f, v)| Ok((seed, SweepResult::new(kind, metric, f, v)?)))
        .collect()
}

pub fn importance_task(task: TaskName) -> ImportanceTask {
    match task {
        TaskName::Regression => ImportanceTask::Regression,
        _ => ImportanceTask::Classification,
    }
}

/// Forest ranking fitted on the training rows.
pub fn fit_ranking(config: &ExperimentConfig, train: &Dataset) -> anyhow::Result<ImportanceRanking> {
    let labels: Vec<f64> = train.labels.iter().map(Label::as_scalar).collect();
    Ok(rank_importance(&train.tabular, &labels, importance_task(config.finetune.task), &config.eval.forest)?)
}

/// Pretrains on `train` under `config`, appending loss rows to `metrics`.
pub fn pretrain_stage(config: &ExperimentConfig, train: &Dataset, metrics: Option<&Path>) -> anyhow::Result<PretrainModel> {
    let seeds = config.seeds();
    let mut model = PretrainModel::new(config.encoder.clone(), seeds.init)?;
    model.fit_vocabulary(train);
    let records = pretrain(&mut model, train, &config.pretrain.to_core(seeds.pretrain))?;
    if let Some(path) = metrics {
        append_pretrain_metrics(path, &records)?;
    }
    Ok(model)
}

fn fresh_model(config: &ExperimentConfig, pre: Option<&PretrainModel>, train: &Dataset) -> anyhow::Result<MultimodalModel> {
    let task = config.finetune.task_spec()?;
    let seed = config.seeds().init;
    Ok(match pre {
        Some(p) => {
            let mut m = MultimodalModel::from_pretrained(p, config.fusion.clone(), task, seed)?;
            m.fit_vocabulary(train);
            m
        }
        None => {
            let mut m = MultimodalModel::new(config.encoder.clone(), config.fusion.clone(), task, seed)?;
            m.fit_vocabulary(train);
            m
        }
    })
}

/// Mean over the random-protocol sweep, used to pick a learning rate.
fn selection_score(config: &ExperimentConfig, model: &MultimodalModel, data: &Dataset) -> anyhow::Result<f64> {
    let metric = config.eval.metric.context("eval.metric is unresolved")?;
    let s = sweep(model, data, ProtocolKind::Random, None, &config.eval.fractions, metric, config.eval.seeds[0])?;
    Ok(s.mean)
}

pub struct FinetuneOutcome {
    pub model: MultimodalModel,
    pub learning_rate: f64,
    /// `(learning rate, validation score)` for each candidate.
    pub selection: Vec<(f64, f64)>,
}

/// Fine-tunes from `pre` (or random init). With several learning rates each
/// is scored on a validation slice and the winner is retrained on all of
/// `train`.
pub fn finetune_stage(
    config: &ExperimentConfig,
    pre: Option<&PretrainModel>,
    train: &Dataset,
    metrics: Option<&Path>,
) -> anyhow::Result<FinetuneOutcome> {
    let seed = config.seeds().finetune;
    let rates = &config.finetune.learning_rates;
    let mut selection = Vec::new();
    let learning_rate = if rates.len() == 1 {
        rates[0]
    } else {
        let n_val = ((train.len() as f64) * config.finetune.validation_fraction).round() as usize;
        if n_val == 0 || n_val >= train.len() {
            bail!("training split too small for a validation slice");
        }
        let (fit, val) = train.split_at(train.len() - n_val);
        let metric = config.eval.metric.context("eval.metric is unresolved")?;
        let mut best: Option<(f64, f64)> = None;
        for &lr in rates {
            let mut m = fresh_model(config, pre, &fit)?;
            finetune(&mut m, &fit, &config.finetune.to_core(lr, seed))?;
            let score = selection_score(config, &m, &val)?;
            selection.push((lr, score));
            let better = match best {
                None => true,
                Some((_, b)) if metric.higher_is_better() => score > b,
                Some((_, b)) => score < b,
            };
            if better {
                best = Some((lr, score));
            }
        }
        best.expect("at least one rate").0
    };
    let mut model = fresh_model(config, pre, train)?;
    let records = finetune(&mut model, train, &config.finetune.to_core(learning_rate, seed))?;
    if let Some(path) = metrics {
        append_finetune_metrics(path, &records)?;
    }
    Ok(FinetuneOutcome {
        model,
        learning_rate,
        selection,
    })
}

/// One sweep per eval seed for the random protocol; the ranked protocols
/// are deterministic and run once.
pub fn sweep_stage(
    config: &ExperimentConfig,
    model: &MultimodalModel,
    test: &Dataset,
    kind: ProtocolKind,
    ranking: Option<&Arc<ImportanceRanking>>,
) -> anyhow::Result<Vec<(u64, SweepResult)>> {
    let metric = config.eval.metric.context("eval.metric is unresolved")?;
    let seeds: &[u64] = if kind == ProtocolKind::Random {
        &config.eval.seeds
    } else {
        &config.eval.seeds[..1]
    };
    seeds
        .iter()
        .map(|&s| Ok((s, sweep(model, test, kind, ranking.cloned(), &config.eval.fractions, metric, s)?)))
        .collect()
}

/// Everything a recipe run produced.
pub struct RunOutcome {
    pub dir: PathBuf,
    pub config: ExperimentConfig,
    pub sweeps: Vec<(ProtocolKind, Vec<(u64, SweepResult)>)>,
    pub model: MultimodalModel,
    pub test: Dataset,
}

impl RunOutcome {
    pub fn sweeps_for(&self, kind: ProtocolKind) -> Option<&[(u64, SweepResult)]> {
        self.sweeps.iter().find(|(k, _)| *k == kind).map(|(_, s)| s.as_slice())
    }
}

pub const SUMMARY_HEADER: &str = "recipe,protocol,metric,mean,low_availability_mean";

/// Mean over eval seeds of the sweep mean and of the mean over f ≤ 0.2.
pub fn summarise(sweeps: &[(u64, SweepResult)]) -> (f64, f64) {
    let n = sweeps.len().max(1) as f64;
    let mean = sweeps.iter().map(|(_, s)| s.mean).sum::<f64>() / n;
    let low = sweeps.iter().map(|(_, s)| s.mean_upto(0.2)).sum::<f64>() / n;
    (mean, low)
}

fn write_traces(path: &Path, model: &MultimodalModel, test: &Dataset) -> anyhow::Result<()> {
    let mut f = File::create(path)?;
    writeln!(f, "sample,gate,attribute,score")?;
    for (i, (img, t)) in test.images.iter().zip(&test.tabular).enumerate() {
        let (_, trace) = model.predict_with_trace(img, t)?;
        let Some(trace) = trace else { continue };
        let gate = trace.gate.map(|g| g.to_string()).unwrap_or_default();
        if trace.attribute_columns.is_empty() {
            writeln!(f, "{i},{gate},,")?;
            continue;
        }
        for (&c, s) in trace.attribute_columns.iter().zip(aggregate_attention(&trace)?) {
            writeln!(f, "{i},{gate},{},{s}", test.schema.column(c).name)?;
        }
    }
    Ok(())
}

/// Runs one recipe end to end into a new directory under `parent`.
pub fn run_recipe(recipe: Recipe, base: &ExperimentConfig, parent: &Path) -> anyhow::Result<RunOutcome> {
    let mut config = recipe.apply(base);
    let splits = load_data(&config)?;
    let outputs = infer_outputs(config.finetune.task, &splits.train.labels)?;
    config.resolve(outputs)?;
    let dir = fresh_dir(parent, &format!("{}-{}-seed{}", timestamp(), recipe.name(), config.seed))?;
    std::fs::write(dir.join("resolved_config.toml"), config.to_toml()?)?;
    log::info!("{} -> {}", recipe.name(), dir.display());

    let schema = splits.train.schema.clone();
    let pre = if config.pretrain.enabled {
        let m = pretrain_stage(&config, &splits.train, Some(&dir.join("pretrain_metrics.csv")))?;
        checkpoint::save(&dir.join("pretrain.ckpt"), &Checkpoint::Pretrain(m.clone()), &schema)?;
        Some(m)
    } else {
        None
    };
    let outcome = finetune_stage(&config, pre.as_ref(), &splits.train, Some(&dir.join("finetune_metrics.csv")))?;
    if !outcome.selection.is_empty() {
        let mut f = File::create(dir.join("lr_selection.csv"))?;
        writeln!(f, "learning_rate,validation_score")?;
        for (lr, s) in &outcome.selection {
            writeln!(f, "{lr},{s}")?;
        }
    }
    let model = outcome.model;
    checkpoint::save(&dir.join("model.ckpt"), &Checkpoint::Multimodal(model.clone()), &schema)?;

    let needs_ranking = config.eval.protocols.iter().any(|&k| k != ProtocolKind::Random);
    let ranking = if needs_ranking {
        let r = fit_ranking(&config, &splits.train)?;
        write_importance(&dir.join("importance.csv"), &schema, &r)?;
        Some(Arc::new(r))
    } else {
        None
    };
    let metric = config.eval.metric.context("eval.metric is unresolved")?;
    let mut summary = File::create(dir.join("summary.csv"))?;
    writeln!(summary, "{SUMMARY_HEADER}")?;
    let mut sweeps = Vec::new();
    for &kind in &config.eval.protocols {
        let s = sweep_stage(&config, &model, &splits.test, kind, ranking.as_ref())?;
        write_sweeps(&dir.join(format!("sweep_{}.csv", kind.short_name())), &s)?;
        let (mean, low) = summarise(&s);
        writeln!(summary, "{},{},{},{mean},{low}", recipe.name(), kind.short_name(), metric.as_str())?;
        sweeps.push((kind, s));
    }
    if config.fusion.kind == FusionKind::Gated {
        write_traces(&dir.join("traces.csv"), &model, &splits.test)?;
        let report = interpretability_report(&model, &splits.test)?;
        write_report(File::create(dir.join("attention.csv"))?, &report)?;
    }
    Ok(RunOutcome {
        dir,
        config,
        sweeps,
        model,
        test: splits.test,
    })
}

/// Runs every recipe in `recipes` under one ablation directory and writes
/// `ablation.csv` with one summary row per recipe and protocol.
pub fn ablate(recipes: &[Recipe], base: &ExperimentConfig) -> anyhow::Result<PathBuf> {
    let root = fresh_dir(&base.out_dir, &format!("{}-ablation-seed{}", timestamp(), base.seed))?;
    let mut f = File::create(root.join("ablation.csv"))?;
    writeln!(f, "{SUMMARY_HEADER}")?;
    for &r in recipes {
        let out = run_recipe(r, base, &root)?;
        let metric = out.config.eval.metric.map_or("", MetricKind::as_str);
        for (kind, s) in &out.sweeps {
            let (mean, low) = summarise(s);
            writeln!(f, "{},{},{metric},{mean},{low}", r.name(), kind.short_name())?;
        }
    }
    Ok(root)
}

