//! Synthetic paired data with a planted split of signal between the image
//! and the table.
//!
//! Each sample has a latent image code `u ~ N(0, 1)` and complementary
//! latents `s_j ~ N(0, 1)`. The image renders `u` as a soft blob whose
//! radius and intensity grow with `Φ(u)`. Redundant attributes are
//! deterministic functions of `u`; complementary attributes are the `s_j`
//! themselves; noise attributes are independent of everything. The
//! classification label is `1[α·u + Σ β_j s_j > 0]`, flipped with
//! probability η, so an image-only predictor is capped below the
//! full-information one.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Label};
use crate::encoders::Image;
use crate::error::{CoreError, Result};
use crate::tabular::{AttributeSchema, Column, ImportanceRanking, TabularSample, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthTask {
    Classification,
    Regression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub samples: usize,
    pub image_size: usize,
    pub redundant: usize,
    /// One weight per complementary attribute.
    pub complementary_weights: Vec<f64>,
    pub noise: usize,
    /// Weight of the image code in the label.
    pub image_weight: f64,
    pub task: SynthTask,
    /// Classification: flip probability. Regression: additive noise sd.
    pub label_noise: f64,
    pub pixel_noise: f64,
    /// Shuffle column order so position carries no information.
    pub shuffle_columns: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            samples: 600,
            image_size: 16,
            redundant: 2,
            complementary_weights: vec![0.8, 0.6],
            noise: 4,
            image_weight: 1.0,
            task: SynthTask::Classification,
            label_noise: 0.0,
            pixel_noise: 0.05,
            shuffle_columns: true,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn attribute_count(&self) -> usize {
        self.redundant + self.complementary_weights.len() + self.noise
    }

    pub fn validate(&self) -> Result<()> {
        if self.redundant == 0 || self.complementary_weights.is_empty() || self.noise == 0 {
            return Err(CoreError::Config(
                "need at least one redundant, complementary and noise attribute".into(),
            ));
        }
        if self.samples < 2 || self.image_size < 4 {
            return Err(CoreError::Config("need at least 2 samples and 4x4 images".into()));
        }
        match self.task {
            SynthTask::Classification if !(0.0..0.5).contains(&self.label_noise) => {
                return Err(CoreError::Config(format!("label flip rate {} outside [0, 0.5)", self.label_noise)))
            }
            SynthTask::Regression if !(self.label_noise >= 0.0) => {
                return Err(CoreError::Config("regression noise must be non-negative".into()))
            }
            _ => {}
        }
        if !(self.pixel_noise >= 0.0) || !self.image_weight.is_finite() {
            return Err(CoreError::Config("pixel noise and image weight must be finite".into()));
        }
        if self.complementary_weights.iter().any(|b| !b.is_finite()) {
            return Err(CoreError::Config("complementary weights must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeRole {
    Redundant,
    Complementary,
    Noise,
}

/// Hidden variables behind one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Latent {
    pub image_code: f64,
    pub complementary: Vec<f64>,
    /// `α·u + Σ β_j s_j` before any label noise.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub data: Dataset,
    pub latents: Vec<Latent>,
    /// Role of every schema column.
    pub roles: Vec<AttributeRole>,
    /// Complementary index for complementary columns.
    pub complementary_index: Vec<Option<usize>>,
    /// Planted dependency strength, strongest first.
    pub ground_truth: ImportanceRanking,
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

/// Closed-form Bayes accuracy `(image only, image + table)` of the
/// classification task.
pub fn bayes_accuracy(config: &SynthConfig) -> (f64, f64) {
    let sigma = config.complementary_weights.iter().map(|b| b * b).sum::<f64>().sqrt();
    let p = if sigma == 0.0 {
        1.0
    } else {
        0.5 + (config.image_weight.abs() / sigma).atan() / PI
    };
    let eta = config.label_noise;
    ((1.0 - eta) * p + eta * (1.0 - p), 1.0 - eta)
}

const TERCILES: [&str; 3] = ["low", "mid", "high"];
const NOISE_LEVELS: [&str; 3] = ["red", "green", "blue"];

fn render(size: usize, code: f64, pixel_noise: f64, rng: &mut ChaCha8Rng) -> Image {
    let q = normal_cdf(code);
    let s = size as f64;
    let radius = s * (0.12 + 0.2 * q);
    let intensity = 0.4 + 0.6 * q;
    let margin = s * 0.3;
    let cx = rng.random_range(margin..s - margin);
    let cy = rng.random_range(margin..s - margin);
    let mut pixels = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let d = ((x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2)).sqrt();
            let blob = intensity / (1.0 + (2.0 * (d - radius)).exp());
            let n: f64 = StandardNormal.sample(rng);
            pixels.push(blob + pixel_noise * n);
        }
    }
    Image {
        height: size,
        width: size,
        pixels,
    }
}

pub fn generate(config: &SynthConfig) -> Result<SynthDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    // Column layout: (name, role, role index)
    let mut layout: Vec<(AttributeRole, usize)> = Vec::new();
    layout.extend((0..config.redundant).map(|j| (AttributeRole::Redundant, j)));
    layout.extend((0..config.complementary_weights.len()).map(|j| (AttributeRole::Complementary, j)));
    layout.extend((0..config.noise).map(|j| (AttributeRole::Noise, j)));
    if config.shuffle_columns {
        layout.shuffle(&mut rng);
    }
    let columns: Vec<Column> = layout
        .iter()
        .map(|&(role, j)| match role {
            AttributeRole::Redundant if j % 2 == 1 => Column::categorical(format!("shape_band_{j}"), TERCILES),
            AttributeRole::Redundant => Column::continuous(format!("shape_score_{j}")),
            AttributeRole::Complementary => Column::continuous(format!("marker_{j}")),
            AttributeRole::Noise if j % 2 == 1 => Column::categorical(format!("batch_{j}"), NOISE_LEVELS),
            AttributeRole::Noise => Column::continuous(format!("reading_{j}")),
        })
        .collect();
    let schema = Arc::new(AttributeSchema::new(columns)?);

    let n = config.samples;
    let per_class = [n / 2, n - n / 2];
    let mut counts = [0usize; 2];
    let mut images = Vec::with_capacity(n);
    let mut tabular = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut latents = Vec::with_capacity(n);
    while images.len() < n {
        let u: f64 = StandardNormal.sample(&mut rng);
        let s: Vec<f64> = config
            .complementary_weights
            .iter()
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let score = config.image_weight * u + config.complementary_weights.iter().zip(&s).map(|(b, x)| b * x).sum::<f64>();
        let label = match config.task {
            SynthTask::Classification => {
                let clean = usize::from(score > 0.0);
                let flip = rng.random::<f64>() < config.label_noise;
                let y = if flip { 1 - clean } else { clean };
                if counts[y] >= per_class[y] {
                    continue;
                }
                counts[y] += 1;
                Label::Class(y)
            }
            SynthTask::Regression => {
                let e: f64 = StandardNormal.sample(&mut rng);
                Label::Real(vec![score + config.label_noise * e])
            }
        };
        let q = normal_cdf(u);
        let mut entries = Vec::with_capacity(layout.len());
        for (c, &(role, j)) in layout.iter().enumerate() {
            let v = match role {
                AttributeRole::Redundant if j % 2 == 1 => Value::Level(((q * 3.0) as usize).min(2)),
                AttributeRole::Redundant => Value::Real(40.0 + 10.0 * (j as f64 + 1.0) * u),
                AttributeRole::Complementary => Value::Real(s[j]),
                AttributeRole::Noise if j % 2 == 1 => Value::Level(rng.random_range(0..NOISE_LEVELS.len())),
                AttributeRole::Noise => Value::Real(StandardNormal.sample(&mut rng)),
            };
            entries.push((c, v));
        }
        tabular.push(TabularSample::new(schema.clone(), entries)?);
        images.push(render(config.image_size, u, config.pixel_noise, &mut rng));
        labels.push(label);
        latents.push(Latent {
            image_code: u,
            complementary: s,
            score,
        });
    }

    let roles: Vec<AttributeRole> = layout.iter().map(|&(r, _)| r).collect();
    let complementary_index = layout
        .iter()
        .map(|&(r, j)| (r == AttributeRole::Complementary).then_some(j))
        .collect();
    let scores: Vec<f64> = layout
        .iter()
        .map(|&(role, j)| match role {
            AttributeRole::Redundant => config.image_weight.abs(),
            AttributeRole::Complementary => config.complementary_weights[j].abs(),
            AttributeRole::Noise => 0.0,
        })
        .collect();
    Ok(SynthDataset {
        config: config.clone(),
        data: Dataset::new(schema, images, tabular, labels)?,
        latents,
        roles,
        complementary_index,
        ground_truth: ImportanceRanking::from_scores(scores)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_and_deterministic() {
        let cfg = SynthConfig {
            samples: 101,
            ..Default::default()
        };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.data, b.data);
        let ones = a.data.labels.iter().filter(|l| **l == Label::Class(1)).count();
        assert_eq!(ones, 51);
        assert_eq!(a.data.schema.len(), 8);
    }

    #[test]
    fn closed_form_gap() {
        let cfg = SynthConfig {
            complementary_weights: vec![1.0],
            ..Default::default()
        };
        let (img, full) = bayes_accuracy(&cfg);
        assert!((img - 0.75).abs() < 1e-12);
        assert_eq!(full, 1.0);
        let cfg = SynthConfig {
            complementary_weights: vec![0.0],
            ..Default::default()
        };
        assert_eq!(bayes_accuracy(&cfg).0, 1.0);
    }

    #[test]
    fn rejects_degenerate() {
        let cfg = SynthConfig {
            noise: 0,
            ..Default::default()
        };
        assert!(generate(&cfg).is_err());
        let cfg = SynthConfig {
            label_noise: 0.5,
            ..Default::default()
        };
        assert!(generate(&cfg).is_err());
    }
}
