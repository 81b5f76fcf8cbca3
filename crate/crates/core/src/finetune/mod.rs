//! Downstream model, losses and training.
//!
//! The default step runs two passes. Pass one trains the encoders through
//! per-modality heads; whatever lands on the fusion partition is
//! discarded. Pass two feeds detached encoder features through the fusion
//! module and backpropagates the multimodal loss, which can only reach the
//! fusion partition. A single optimizer update then applies both.

pub mod loss;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rovtl_autograd::{Adam, AdamConfig, Gradients, Graph, Linear, Matrix, ParamStore, Var};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Label};
use crate::encoders::{
    BundleVars, FeatureBundle, Image, ImageEncoder, Modality, TabularEncoder, IMAGE_GROUP, TABULAR_GROUP,
};
use crate::error::{CoreError, Result};
use crate::fusion::{Fusion, FusionConfig, FusionTrace, FUSION_GROUP};
use crate::pretrain::{EncoderConfig, PretrainModel};
use crate::tabular::{sample_nested_pair, TabularSample};

pub use loss::{
    multimodal_loss, tabmofe_graph, tabmofe_loss, task_loss, task_loss_graph, unimodal_loss, LossReport, TaskKind,
    TaskLossKind, TaskSpec,
};

pub const IMAGE_HEAD_GROUP: &str = "image_head";
pub const TABULAR_HEAD_GROUP: &str = "tabular_head";
pub const ENCODER_GROUPS: [&str; 2] = [IMAGE_GROUP, TABULAR_GROUP];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingMode {
    /// Two passes with gradient isolation.
    Disentangled,
    /// One backward of the multimodal loss through everything.
    Joint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Keep encoder weights fixed; heads and fusion still train.
    pub frozen: bool,
    /// Draw nested subsets each step; when off both inputs are the full row.
    pub downstream_missingness: bool,
    pub mode: TrainingMode,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            frozen: false,
            downstream_missingness: true,
            mode: TrainingMode::Disentangled,
            seed: 0,
        }
    }
}

impl FinetuneConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalModel {
    pub encoder_config: EncoderConfig,
    pub task: TaskSpec,
    pub store: ParamStore,
    pub image: ImageEncoder,
    pub tabular: TabularEncoder,
    pub fusion: Fusion,
    pub image_head: Linear,
    pub tabular_head: Linear,
    pub head: Linear,
}

/// One training batch: images, the two nested tabular views and labels.
#[derive(Debug, Clone)]
pub struct StepBatch<'a> {
    pub images: Vec<&'a Image>,
    pub plus: Vec<TabularSample>,
    pub minus: Vec<TabularSample>,
    pub labels: Vec<&'a Label>,
}

impl StepBatch<'_> {
    fn validate(&self) -> Result<()> {
        let n = self.images.len();
        if n == 0 || self.plus.len() != n || self.minus.len() != n || self.labels.len() != n {
            return Err(CoreError::Shape("inconsistent training batch".into()));
        }
        Ok(())
    }
}

/// Encoder outputs held fixed for the fusion pass.
#[derive(Debug, Clone, PartialEq)]
pub struct DetachedFeatures {
    pub image: Vec<FeatureBundle>,
    pub plus: Vec<FeatureBundle>,
    pub minus: Vec<FeatureBundle>,
}

/// Everything a two-pass step computes before the optimizer runs.
#[derive(Debug, Clone)]
pub struct DglGradients {
    /// After pass one, with the fusion partition zeroed.
    pub after_pass_one: Gradients,
    /// Pass one plus pass two.
    pub after_pass_two: Gradients,
    pub features: DetachedFeatures,
    pub report: LossReport,
}

struct MultiPass {
    loss: Var,
    plus: Var,
    minus: Var,
    hinge: Var,
    gates: Vec<f64>,
}

impl MultimodalModel {
    pub fn new(encoder_config: EncoderConfig, fusion: FusionConfig, task: TaskSpec, seed: u64) -> Result<Self> {
        let pre = PretrainModel::new(encoder_config, seed)?;
        Self::from_pretrained(&pre, fusion, task, seed)
    }

    /// Builds a downstream model whose encoders (weights and tabular
    /// vocabulary) are copied from `pre`; projection heads are dropped.
    pub fn from_pretrained(pre: &PretrainModel, fusion: FusionConfig, task: TaskSpec, seed: u64) -> Result<Self> {
        task.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f00d);
        let mut store = ParamStore::new();
        let config = pre.config.clone();
        let image = ImageEncoder::new(&mut store, config.image.clone(), &mut rng)?;
        let mut tabular = TabularEncoder::new(&mut store, config.tabular.clone(), &mut rng)?;
        tabular.vocab = pre.tabular.vocab.clone();
        for (id, p) in store.clone().iter() {
            let src = pre.store.find(&p.name).ok_or_else(|| CoreError::Config(format!("missing {}", p.name)))?;
            *store.value_mut(id) = pre.store.value(src).clone();
        }
        let fusion = Fusion::new(&mut store, fusion, config.image.out_dim, config.tabular.out_dim, &mut rng)?;
        let image_head = Linear::new(&mut store, IMAGE_HEAD_GROUP, IMAGE_HEAD_GROUP, config.image.out_dim, task.outputs, &mut rng);
        let tabular_head =
            Linear::new(&mut store, TABULAR_HEAD_GROUP, TABULAR_HEAD_GROUP, config.tabular.out_dim, task.outputs, &mut rng);
        let head = Linear::new(&mut store, &format!("{FUSION_GROUP}.head"), FUSION_GROUP, fusion.output_dim(), task.outputs, &mut rng);
        Ok(Self {
            encoder_config: config,
            task,
            store,
            image,
            tabular,
            fusion,
            image_head,
            tabular_head,
            head,
        })
    }

    pub fn fit_vocabulary(&mut self, data: &Dataset) {
        self.tabular.vocab.register_schema(&data.schema);
        self.tabular.vocab.standardizer.fit_missing(&data.tabular);
    }

    fn fused(
        &self,
        g: &mut Graph,
        image: &BundleVars,
        tabular: &BundleVars,
        attributes: usize,
    ) -> Result<(Var, crate::fusion::FusionVars)> {
        let f = self.fusion.forward(g, &self.store, image, tabular, attributes)?;
        let logits = self.head.forward(g, &self.store, f.embedding);
        Ok((logits, f))
    }

    /// Prediction for one sample with the fusion internals.
    pub fn predict_with_trace(&self, image: &Image, t: &TabularSample) -> Result<(Vec<f64>, Option<FusionTrace>)> {
        let mut g = Graph::new();
        let iv = self.image.forward(&mut g, &self.store, &[image])?;
        let tv = self.tabular.forward(&mut g, &self.store, t);
        let (logits, f) = self.fused(&mut g, &iv[0], &tv, t.len())?;
        let columns = t.present().collect();
        let trace = FusionTrace::from_vars(&g, &f, columns);
        Ok((g.value(logits).iter().copied().collect(), trace))
    }

    pub fn predict(&self, image: &Image, t: &TabularSample) -> Result<Vec<f64>> {
        Ok(self.predict_with_trace(image, t)?.0)
    }

    /// Raw head outputs, one row per sample.
    pub fn predict_batch(&self, images: &[&Image], tables: &[TabularSample]) -> Result<Matrix> {
        if images.len() != tables.len() {
            return Err(CoreError::Shape(format!("{} images vs {} rows", images.len(), tables.len())));
        }
        let mut out = Matrix::zeros((images.len(), self.task.outputs));
        for (c, (imgs, tabs)) in images.chunks(64).zip(tables.chunks(64)).enumerate() {
            let mut g = Graph::new();
            let iv = self.image.forward(&mut g, &self.store, imgs)?;
            for (k, (iv, t)) in iv.iter().zip(tabs).enumerate() {
                let tv = self.tabular.forward(&mut g, &self.store, t);
                let (logits, _) = self.fused(&mut g, iv, &tv, t.len())?;
                out.row_mut(c * 64 + k).assign(&g.value(logits).row(0));
            }
        }
        Ok(out)
    }

    /// Multimodal loss over given per-sample features inside `g`.
    fn multi_pass(
        &self,
        g: &mut Graph,
        image: &[BundleVars],
        plus: &[BundleVars],
        minus: &[BundleVars],
        batch: &StepBatch<'_>,
    ) -> Result<MultiPass> {
        let mut plus_logits = Vec::with_capacity(image.len());
        let mut minus_logits = Vec::with_capacity(image.len());
        let mut gates = Vec::new();
        for i in 0..image.len() {
            let (lp, fp) = self.fused(g, &image[i], &plus[i], batch.plus[i].len())?;
            if let Some(w) = fp.gate {
                gates.push(g.scalar_value(w));
            }
            let (lm, _) = self.fused(g, &image[i], &minus[i], batch.minus[i].len())?;
            plus_logits.push(lp);
            minus_logits.push(lm);
        }
        let pl = g.concat_rows(&plus_logits);
        let ml = g.concat_rows(&minus_logits);
        let lp = task_loss_graph(g, pl, &batch.labels, &self.task)?;
        let lm = task_loss_graph(g, ml, &batch.labels, &self.task)?;
        let hinge = tabmofe_graph(g, lp, lm);
        let both = g.add(lp, lm);
        let weighted = g.scale(hinge, self.task.lambda);
        let loss = g.add(both, weighted);
        Ok(MultiPass {
            loss,
            plus: lp,
            minus: lm,
            hinge,
            gates,
        })
    }

    fn report(&self, g: &Graph, m: &MultiPass, image: f64, tabular: f64) -> LossReport {
        let hinge = g.scalar_value(m.hinge);
        LossReport {
            task_plus: g.scalar_value(m.plus),
            task_minus: g.scalar_value(m.minus),
            tabmofe: hinge,
            tabmofe_term: self.task.lambda * hinge,
            multi: g.scalar_value(m.loss),
            unimodal_image: image,
            unimodal_tabular: tabular,
            mean_gate: (!m.gates.is_empty()).then(|| m.gates.iter().sum::<f64>() / m.gates.len() as f64),
        }
    }

    /// Pass one: per-modality heads on `(image, t⁺)`. Returns the two head
    /// losses, their gradients with the fusion partition zeroed, and the
    /// encoder features it computed.
    pub fn pass_one(&self, batch: &StepBatch<'_>) -> Result<(f64, f64, Gradients, Vec<FeatureBundle>, Vec<FeatureBundle>)> {
        batch.validate()?;
        let mut g = Graph::new();
        let iv = self.image.forward(&mut g, &self.store, &batch.images)?;
        let tv: Vec<BundleVars> = batch.plus.iter().map(|t| self.tabular.forward(&mut g, &self.store, t)).collect();
        let ip: Vec<Var> = iv.iter().map(|b| b.pooled).collect();
        let tp: Vec<Var> = tv.iter().map(|b| b.pooled).collect();
        let ip = g.concat_rows(&ip);
        let tp = g.concat_rows(&tp);
        let ih = self.image_head.forward(&mut g, &self.store, ip);
        let th = self.tabular_head.forward(&mut g, &self.store, tp);
        let li = task_loss_graph(&mut g, ih, &batch.labels, &self.task)?;
        let lt = task_loss_graph(&mut g, th, &batch.labels, &self.task)?;
        let total = g.add(li, lt);
        let mut grads = g.backward(total);
        grads.zero_group(&self.store, FUSION_GROUP);
        let image_features = iv.iter().map(|v| FeatureBundle::from_vars(&g, v, Modality::Image)).collect();
        let plus_features = tv.iter().map(|v| FeatureBundle::from_vars(&g, v, Modality::Tabular)).collect();
        Ok((g.scalar_value(li), g.scalar_value(lt), grads, image_features, plus_features))
    }

    /// Pass two on fixed features; only the fusion partition can receive
    /// gradient. Returns the gradients and the graph-side losses.
    pub fn pass_two(&self, batch: &StepBatch<'_>, features: &DetachedFeatures) -> Result<(Gradients, LossReport)> {
        let mut g = Graph::new();
        let constant = |g: &mut Graph, f: &FeatureBundle| {
            let tokens = g.constant(f.tokens.clone());
            let pooled = g.constant(Matrix::from_shape_vec((1, f.pooled.len()), f.pooled.clone()).expect("row"));
            BundleVars { tokens, pooled }
        };
        let iv: Vec<_> = features.image.iter().map(|f| constant(&mut g, f)).collect();
        let pv: Vec<_> = features.plus.iter().map(|f| constant(&mut g, f)).collect();
        let mv: Vec<_> = features.minus.iter().map(|f| constant(&mut g, f)).collect();
        let m = self.multi_pass(&mut g, &iv, &pv, &mv, batch)?;
        let grads = g.backward(m.loss).restricted(&self.store, FUSION_GROUP);
        Ok((grads, self.report(&g, &m, 0.0, 0.0)))
    }

    /// Both passes, without touching parameters.
    pub fn dgl_gradients(&self, batch: &StepBatch<'_>) -> Result<DglGradients> {
        let (li, lt, after_pass_one, image, plus) = self.pass_one(batch)?;
        let minus = batch.minus.iter().map(|t| self.tabular.encode(&self.store, t)).collect();
        let features = DetachedFeatures { image, plus, minus };
        let (g2, mut report) = self.pass_two(batch, &features)?;
        report.unimodal_image = li;
        report.unimodal_tabular = lt;
        let mut after_pass_two = after_pass_one.clone();
        after_pass_two.accumulate(&g2);
        Ok(DglGradients {
            after_pass_one,
            after_pass_two,
            features,
            report,
        })
    }

    /// Multimodal loss with live encoders, and its full gradient.
    pub fn joint_gradients(&self, batch: &StepBatch<'_>) -> Result<(Gradients, LossReport)> {
        batch.validate()?;
        let mut g = Graph::new();
        let iv = self.image.forward(&mut g, &self.store, &batch.images)?;
        let pv: Vec<_> = batch.plus.iter().map(|t| self.tabular.forward(&mut g, &self.store, t)).collect();
        let mv: Vec<_> = batch.minus.iter().map(|t| self.tabular.forward(&mut g, &self.store, t)).collect();
        let m = self.multi_pass(&mut g, &iv, &pv, &mv, batch)?;
        Ok((g.backward(m.loss), self.report(&g, &m, 0.0, 0.0)))
    }

    /// Pass-one objective, for finite-difference checks.
    pub fn unimodal_objective(&self, batch: &StepBatch<'_>) -> Result<f64> {
        let (li, lt, ..) = self.pass_one(batch)?;
        Ok(unimodal_loss(li, lt))
    }

    /// Pass-two objective on fixed features.
    pub fn multimodal_objective(&self, batch: &StepBatch<'_>, features: &DetachedFeatures) -> Result<f64> {
        Ok(self.pass_two(batch, features)?.1.multi)
    }

    /// Whether `frozen` training may update the parameter.
    fn trainable(frozen: bool) -> impl Fn(&rovtl_autograd::Param) -> bool {
        move |p| !(frozen && ENCODER_GROUPS.contains(&p.group.as_str()))
    }

    /// One training step in the given mode.
    pub fn train_step(
        &mut self,
        batch: &StepBatch<'_>,
        mode: TrainingMode,
        frozen: bool,
        optimizer: &mut Adam,
    ) -> Result<LossReport> {
        let (grads, report) = match mode {
            TrainingMode::Disentangled => {
                let d = self.dgl_gradients(batch)?;
                (d.after_pass_two, d.report)
            }
            TrainingMode::Joint => self.joint_gradients(batch)?,
        };
        if !report.is_finite() || !grads.all_finite() {
            return Err(CoreError::NonFinite("training loss".into()));
        }
        optimizer.step(&mut self.store, &grads, Self::trainable(frozen));
        Ok(report)
    }
}

/// Nested `(t⁺, t⁻)` for one row, or the full row twice when downstream
/// missingness is off or the row is empty.
pub fn draw_views<R: Rng + ?Sized>(
    full: &TabularSample,
    downstream_missingness: bool,
    rng: &mut R,
) -> Result<(TabularSample, TabularSample)> {
    if !downstream_missingness || full.is_empty() {
        return Ok((full.clone(), full.clone()));
    }
    sample_nested_pair(full, rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinetuneRecord {
    pub epoch: usize,
    pub step: usize,
    pub report: LossReport,
}

/// Full fine-tuning run with fresh nested views every step.
pub fn finetune(model: &mut MultimodalModel, data: &Dataset, config: &FinetuneConfig) -> Result<Vec<FinetuneRecord>> {
    if config.batch_size == 0 {
        return Err(CoreError::Config("batch size must be positive".into()));
    }
    let mut optimizer = Adam::new(config.adam());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut records = Vec::new();
    let mut step = 0;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let mut batch = StepBatch {
                images: Vec::with_capacity(chunk.len()),
                plus: Vec::with_capacity(chunk.len()),
                minus: Vec::with_capacity(chunk.len()),
                labels: Vec::with_capacity(chunk.len()),
            };
            for &i in chunk {
                let (p, m) = draw_views(&data.tabular[i], config.downstream_missingness, &mut rng)?;
                batch.images.push(&data.images[i]);
                batch.plus.push(p);
                batch.minus.push(m);
                batch.labels.push(&data.labels[i]);
            }
            let report = model.train_step(&batch, config.mode, config.frozen, &mut optimizer)?;
            records.push(FinetuneRecord { epoch, step, report });
            step += 1;
        }
    }
    Ok(records)
}
