//! Contrastive image-tabular pretraining with three tabular augmentation
//! regimes: random attribute removal, marginal corruption, or none.

pub mod augment;
pub mod loss;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rovtl_autograd::{Adam, AdamConfig, Graph, ParamStore};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::encoders::{Image, ImageEncoder, ImageEncoderConfig, ProjectionHead, TabularEncoder, TabularEncoderConfig};
use crate::error::{CoreError, Result};
use crate::tabular::{marginal_corrupt, sample_subset, Marginals, TabularSample};

pub use augment::{apply_augmentation, augment_image, draw_augmentation, AugmentDraw, AugmentParams};
pub use loss::{contrastive_loss, contrastive_loss_graph, matryoshka_contrastive_loss, matryoshka_loss_graph};

pub const IMAGE_PROJECTION_GROUP: &str = "image_projection";
pub const TABULAR_PROJECTION_GROUP: &str = "tabular_projection";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentMode {
    Missing,
    Corrupted,
    None,
}

impl AugmentMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "missing" => Ok(Self::Missing),
            "corrupted" => Ok(Self::Corrupted),
            "none" => Ok(Self::None),
            _ => Err(CoreError::Config(format!("unknown augmentation mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub image: ImageEncoderConfig,
    pub tabular: TabularEncoderConfig,
    pub projection_widths: Vec<usize>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            image: ImageEncoderConfig::default(),
            tabular: TabularEncoderConfig::default(),
            projection_widths: vec![8, 16, 32],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub temperature: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub mode: AugmentMode,
    pub corruption_rate: f64,
    pub augment: AugmentParams,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            temperature: 0.1,
            batch_size: 32,
            epochs: 10,
            mode: AugmentMode::Missing,
            corruption_rate: 0.3,
            augment: AugmentParams::default(),
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(CoreError::Config("temperature must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.corruption_rate) {
            return Err(CoreError::Config("corruption rate must lie in [0, 1]".into()));
        }
        if self.batch_size < 2 {
            return Err(CoreError::Config("pretraining batch size must be at least 2".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

/// Both encoders with their projection heads.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainModel {
    pub config: EncoderConfig,
    pub store: ParamStore,
    pub image: ImageEncoder,
    pub tabular: TabularEncoder,
    pub image_projection: ProjectionHead,
    pub tabular_projection: ProjectionHead,
}

impl PretrainModel {
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let image = ImageEncoder::new(&mut store, config.image.clone(), &mut rng)?;
        let tabular = TabularEncoder::new(&mut store, config.tabular.clone(), &mut rng)?;
        let image_projection = ProjectionHead::new(
            &mut store,
            IMAGE_PROJECTION_GROUP,
            IMAGE_PROJECTION_GROUP,
            config.image.out_dim,
            &config.projection_widths,
            &mut rng,
        )?;
        let tabular_projection = ProjectionHead::new(
            &mut store,
            TABULAR_PROJECTION_GROUP,
            TABULAR_PROJECTION_GROUP,
            config.tabular.out_dim,
            &config.projection_widths,
            &mut rng,
        )?;
        Ok(Self {
            config,
            store,
            image,
            tabular,
            image_projection,
            tabular_projection,
        })
    }

    /// Registers categorical levels and fits continuous standardisation on
    /// the training rows.
    pub fn fit_vocabulary(&mut self, data: &Dataset) {
        self.tabular.vocab.register_schema(&data.schema);
        self.tabular.vocab.standardizer.fit_missing(&data.tabular);
    }

    /// Matryoshka loss of a batch of already augmented pairs, with the graph
    /// kept for backpropagation.
    fn batch_loss(&self, g: &mut Graph, images: &[&Image], tables: &[TabularSample], temperature: f64) -> Result<rovtl_autograd::Var> {
        let img = self.image.forward(g, &self.store, images)?;
        let pooled_i: Vec<_> = img.iter().map(|b| b.pooled).collect();
        let pooled_t: Vec<_> = tables.iter().map(|t| self.tabular.forward(g, &self.store, t).pooled).collect();
        let vi = g.concat_rows(&pooled_i);
        let vt = g.concat_rows(&pooled_t);
        let zi = self.image_projection.forward(g, &self.store, vi);
        let zt = self.tabular_projection.forward(g, &self.store, vt);
        matryoshka_loss_graph(g, &zi, &zt, temperature)
    }
}

/// Augments a batch, computes the loss and applies one optimizer step.
///
/// Image and tabular augmentation draw from separate child streams so the
/// image views do not depend on how much randomness the tabular side used.
pub fn pretrain_step<R: Rng + ?Sized>(
    model: &mut PretrainModel,
    batch: &[(&Image, &TabularSample)],
    config: &PretrainConfig,
    marginals: Option<&Marginals>,
    optimizer: &mut Adam,
    rng: &mut R,
) -> Result<f64> {
    if batch.len() < 2 {
        return Err(CoreError::Config(format!("pretraining batch of {} pairs", batch.len())));
    }
    let mut image_rng = ChaCha8Rng::seed_from_u64(rng.random());
    let mut table_rng = ChaCha8Rng::seed_from_u64(rng.random());
    let views: Vec<Image> = batch
        .iter()
        .map(|(img, _)| augment_image(img, &config.augment, &mut image_rng))
        .collect();
    let tables = batch
        .iter()
        .map(|(_, t)| match config.mode {
            AugmentMode::None => Ok((*t).clone()),
            AugmentMode::Missing => sample_subset(t, &mut table_rng),
            AugmentMode::Corrupted => {
                let m = marginals.ok_or_else(|| CoreError::Config("corrupted mode needs marginals".into()))?;
                marginal_corrupt(t, m, config.corruption_rate, &mut table_rng)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Image> = views.iter().collect();
    let mut g = Graph::new();
    let loss = model.batch_loss(&mut g, &refs, &tables, config.temperature)?;
    let value = g.scalar_value(loss);
    if !value.is_finite() {
        return Err(CoreError::NonFinite("pretraining loss".into()));
    }
    let grads = g.backward(loss);
    optimizer.step(&mut model.store, &grads, |_| true);
    Ok(value)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PretrainRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
}

/// Full pretraining run. Each epoch reshuffles; a trailing batch smaller
/// than two pairs is dropped.
pub fn pretrain(model: &mut PretrainModel, data: &Dataset, config: &PretrainConfig) -> Result<Vec<PretrainRecord>> {
    config.validate()?;
    let marginals = Marginals::from_samples(&data.tabular);
    let mut optimizer = Adam::new(config.adam());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut records = Vec::new();
    let mut step = 0;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let batch: Vec<(&Image, &TabularSample)> =
                chunk.iter().map(|&i| (&data.images[i], &data.tabular[i])).collect();
            let loss = pretrain_step(model, &batch, config, Some(&marginals), &mut optimizer, &mut rng)?;
            records.push(PretrainRecord { epoch, step, loss });
            step += 1;
        }
    }
    Ok(records)
}
