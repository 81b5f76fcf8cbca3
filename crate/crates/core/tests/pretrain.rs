mod common;

use std::sync::Arc;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rovtl_autograd::Adam;
use rovtl_core::encoders::Image;
use rovtl_core::pretrain::{
    contrastive_loss, draw_augmentation, matryoshka_contrastive_loss, pretrain, pretrain_step, AugmentMode, AugmentParams,
    PretrainConfig, PretrainModel,
};
use rovtl_core::tabular::{AttributeSchema, Column, Marginals, TabularSample, Value};
use rovtl_core::{Dataset, Label};

fn normalized(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m: Array2<f64> = Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(&mut rng));
    for mut r in m.rows_mut() {
        let n = r.dot(&r).sqrt();
        r /= n;
    }
    m
}

/// Direct evaluation of the symmetric InfoNCE definition.
fn clip_oracle(a: &Array2<f64>, b: &Array2<f64>, tau: f64) -> f64 {
    let n = a.nrows();
    let s = a.dot(&b.t()) / tau;
    let mut total = 0.0;
    for i in 0..n {
        let row: f64 = (0..n).map(|j| s[[i, j]].exp()).sum();
        let col: f64 = (0..n).map(|j| s[[j, i]].exp()).sum();
        total += (row.ln() - s[[i, i]]) + (col.ln() - s[[i, i]]);
    }
    total / (2.0 * n as f64)
}

#[test]
fn contrastive_matches_definition_and_is_nonnegative() {
    for seed in 0..5 {
        let a = normalized(6, 4, seed);
        let b = normalized(6, 4, seed + 100);
        let l = contrastive_loss(&a, &b, 0.1).unwrap();
        assert!((l - clip_oracle(&a, &b, 0.1)).abs() < 1e-9);
        assert!(l >= 0.0);
    }
}

#[test]
fn contrastive_is_invariant_to_joint_permutation() {
    let a = normalized(5, 3, 1);
    let b = normalized(5, 3, 2);
    let order = [3, 0, 4, 1, 2];
    let pa = Array2::from_shape_fn((5, 3), |(i, j)| a[[order[i], j]]);
    let pb = Array2::from_shape_fn((5, 3), |(i, j)| b[[order[i], j]]);
    let l1 = contrastive_loss(&a, &b, 0.2).unwrap();
    let l2 = contrastive_loss(&pa, &pb, 0.2).unwrap();
    assert!((l1 - l2).abs() < 1e-12);
}

#[test]
fn matryoshka_is_mean_of_widths() {
    let a8 = normalized(4, 8, 3);
    let b8 = normalized(4, 8, 4);
    let a16 = normalized(4, 16, 5);
    let b16 = normalized(4, 16, 6);
    let m = matryoshka_contrastive_loss(&[a8.clone(), a16.clone()], &[b8.clone(), b16.clone()], 0.1).unwrap();
    let oracle = (clip_oracle(&a8, &b8, 0.1) + clip_oracle(&a16, &b16, 0.1)) / 2.0;
    assert!((m - oracle).abs() < 1e-9);
    let single = matryoshka_contrastive_loss(&[a8.clone()], &[b8.clone()], 0.1).unwrap();
    assert!((single - contrastive_loss(&a8, &b8, 0.1).unwrap()).abs() < 1e-15);
    let same = matryoshka_contrastive_loss(&[a8.clone(), a8.clone()], &[b8.clone(), b8.clone()], 0.1).unwrap();
    assert!((same - single).abs() < 1e-12);
}

#[test]
fn flip_frequency() {
    let img = Image::zeros(8, 8);
    let params = AugmentParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let draws = 10_000;
    let flips = (0..draws).filter(|_| draw_augmentation(&params, &img, &mut rng).flip).count();
    assert!((flips as f64 / draws as f64 - 0.5).abs() < 0.01);
}

fn toy_data(n: usize, attributes: usize, seed: u64) -> Dataset {
    let schema = Arc::new(
        AttributeSchema::new((0..attributes).map(|i| Column::continuous(format!("a{i}"))).collect()).unwrap(),
    );
    let images: Vec<Image> = (0..n)
        .map(|k| {
            let phase = k as f64 * 0.7 + seed as f64;
            Image::new(8, 8, (0..64).map(|p| ((p % 8) as f64 * phase.sin() + (p / 8) as f64 * phase.cos()) / 8.0).collect())
                .unwrap()
        })
        .collect();
    let tabular = (0..n)
        .map(|k| {
            let phase = k as f64 * 0.7 + seed as f64;
            let entries = (0..attributes).map(|c| (c, Value::Real(if c % 2 == 0 { phase.sin() } else { phase.cos() }))).collect();
            TabularSample::new(schema.clone(), entries).unwrap()
        })
        .collect();
    Dataset::new(schema, images, tabular, vec![Label::Class(0); n]).unwrap()
}

fn step_loss(mode: AugmentMode, data: &Dataset) -> f64 {
    let mut model = PretrainModel::new(common::small_encoders(), 1).unwrap();
    model.fit_vocabulary(data);
    let config = PretrainConfig {
        mode,
        augment: AugmentParams { output_size: 8, ..Default::default() },
        ..Default::default()
    };
    let marginals = Marginals::from_samples(&data.tabular);
    let batch: Vec<_> = data.images.iter().zip(&data.tabular).collect();
    let mut adam = Adam::new(config.adam());
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    pretrain_step(&mut model, &batch, &config, Some(&marginals), &mut adam, &mut rng).unwrap()
}

#[test]
fn step_is_deterministic_and_single_attribute_missing_equals_none() {
    let data = toy_data(6, 3, 0);
    assert_eq!(step_loss(AugmentMode::None, &data).to_bits(), step_loss(AugmentMode::None, &data).to_bits());
    let single = toy_data(6, 1, 0);
    assert_eq!(step_loss(AugmentMode::Missing, &single), step_loss(AugmentMode::None, &single));
}

#[test]
fn batch_of_one_is_rejected() {
    let data = toy_data(1, 2, 0);
    let mut model = PretrainModel::new(common::small_encoders(), 1).unwrap();
    let config = PretrainConfig::default();
    let batch: Vec<_> = data.images.iter().zip(&data.tabular).collect();
    let mut adam = Adam::new(config.adam());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(pretrain_step(&mut model, &batch, &config, None, &mut adam, &mut rng).is_err());
}

#[test]
fn training_drives_loss_below_uniform() {
    let data = toy_data(64, 3, 4);
    let mut model = PretrainModel::new(common::small_encoders(), 2).unwrap();
    model.fit_vocabulary(&data);
    let batch = 16;
    let config = PretrainConfig {
        batch_size: batch,
        epochs: 75,
        mode: AugmentMode::None,
        augment: AugmentParams { output_size: 8, flip_probability: 0.0, scale: (1.0, 1.0), ratio: (1.0, 1.0), max_rotation_degrees: 0.0 },
        learning_rate: 3e-3,
        seed: 1,
        ..Default::default()
    };
    let records = pretrain(&mut model, &data, &config).unwrap();
    assert_eq!(records.len(), 300);
    let tail: f64 = records[250..].iter().map(|r| r.loss).sum::<f64>() / 50.0;
    let head: f64 = records[..50].iter().map(|r| r.loss).sum::<f64>() / 50.0;
    assert!(tail < (batch as f64).ln() - 0.5, "final moving average {tail}");
    assert!(tail < head);
}
