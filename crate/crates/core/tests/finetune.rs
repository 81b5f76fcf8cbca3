mod common;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rovtl_autograd::{Adam, AdamConfig, Gradients, ParamId};
use rovtl_core::encoders::{Image, IMAGE_GROUP, TABULAR_GROUP};
use rovtl_core::finetune::{
    draw_views, finetune, FinetuneConfig, MultimodalModel, StepBatch, TaskSpec, TrainingMode, IMAGE_HEAD_GROUP,
    TABULAR_HEAD_GROUP,
};
use rovtl_core::fusion::FUSION_GROUP;
use rovtl_core::tabular::{AttributeSchema, Column, TabularSample, Value};
use rovtl_core::{Dataset, Label};

/// Label = sign of attribute `s`; images carry a weaker copy of it.
fn separable(n: usize, seed: u64) -> Dataset {
    let schema = Arc::new(
        AttributeSchema::new(vec![
            Column::continuous("s"),
            Column::continuous("noise"),
            Column::categorical("site", ["x", "y"]),
        ])
        .unwrap(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::new();
    let mut tabular = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let y = i % 2;
        let s = if y == 1 { rng.random_range(0.2..2.0) } else { rng.random_range(-2.0..-0.2) };
        let brightness = 0.5 + 0.2 * s + rng.random_range(-0.3..0.3);
        images.push(Image::new(8, 8, (0..64).map(|_| brightness + rng.random_range(-0.05..0.05)).collect()).unwrap());
        tabular.push(
            TabularSample::new(
                schema.clone(),
                vec![
                    (0, Value::Real(s)),
                    (1, Value::Real(rng.random_range(-1.0..1.0))),
                    (2, Value::Level(rng.random_range(0..2))),
                ],
            )
            .unwrap(),
        );
        labels.push(Label::Class(y));
    }
    Dataset::new(schema, images, tabular, labels).unwrap()
}

fn toy_model(data: &Dataset, seed: u64) -> MultimodalModel {
    let mut enc = common::small_encoders();
    enc.tabular.name_buckets = 64;
    enc.tabular.level_buckets = 16;
    let mut m = MultimodalModel::new(enc, common::small_fusion(), TaskSpec::classification(2), seed).unwrap();
    m.fit_vocabulary(data);
    m
}

fn batch<'a>(data: &'a Dataset, seed: u64, missingness: bool) -> StepBatch<'a> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = StepBatch {
        images: vec![],
        plus: vec![],
        minus: vec![],
        labels: vec![],
    };
    for i in 0..data.len() {
        let (p, m) = draw_views(&data.tabular[i], missingness, &mut rng).unwrap();
        b.images.push(&data.images[i]);
        b.plus.push(p);
        b.minus.push(m);
        b.labels.push(&data.labels[i]);
    }
    b
}

fn same_bits(a: &Gradients, b: &Gradients) -> bool {
    a.len() == b.len()
        && a.iter().all(|(id, g)| {
            b.get(id)
                .is_some_and(|h| g.iter().zip(h.iter()).all(|(x, y)| x.to_bits() == y.to_bits()))
        })
}

fn first_param(m: &MultimodalModel, group: &str) -> ParamId {
    // the largest-magnitude gradient entry is picked later; any tensor of the group will do
    m.store.ids_in_group(group).next().unwrap()
}

#[test]
fn toy_model_is_small() {
    let data = separable(4, 0);
    let n = toy_model(&data, 0).store.numel();
    assert!(n <= 10_000, "{n} parameters");
}

#[test]
fn pass_one_never_touches_fusion_and_pass_two_never_touches_encoders() {
    let data = separable(8, 1);
    let m = toy_model(&data, 1);
    let b = batch(&data, 2, true);
    let d = m.dgl_gradients(&b).unwrap();
    assert!(d.after_pass_one.group_is_zero(&m.store, FUSION_GROUP));
    for group in [IMAGE_GROUP, TABULAR_GROUP, IMAGE_HEAD_GROUP, TABULAR_HEAD_GROUP] {
        let before = d.after_pass_one.restricted(&m.store, group);
        let after = d.after_pass_two.restricted(&m.store, group);
        assert!(!before.is_empty(), "{group} got no gradient in pass one");
        assert!(same_bits(&before, &after), "{group} changed in pass two");
    }
    assert!(!d.after_pass_two.group_is_zero(&m.store, FUSION_GROUP));
}

/// Central difference of `f` around entry `k` of parameter `id`.
fn finite_difference(m: &MultimodalModel, id: ParamId, k: usize, f: impl Fn(&MultimodalModel) -> f64) -> f64 {
    let h = 1e-5;
    let mut plus = m.clone();
    plus.store.value_mut(id).as_slice_mut().unwrap()[k] += h;
    let mut minus = m.clone();
    minus.store.value_mut(id).as_slice_mut().unwrap()[k] -= h;
    (f(&plus) - f(&minus)) / (2.0 * h)
}

fn largest_entry(g: &Gradients, id: ParamId) -> (usize, f64) {
    let t = g.get(id).unwrap();
    t.iter()
        .enumerate()
        .map(|(k, &v)| (k, v))
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .unwrap()
}

#[test]
fn finite_difference_probe_per_partition() {
    let data = separable(6, 3);
    let m = toy_model(&data, 3);
    let b = batch(&data, 4, true);
    let d = m.dgl_gradients(&b).unwrap();
    let probes = [
        (IMAGE_GROUP, true),
        (TABULAR_GROUP, true),
        (IMAGE_HEAD_GROUP, true),
        (TABULAR_HEAD_GROUP, true),
        (FUSION_GROUP, false),
    ];
    for (group, pass_one) in probes {
        let id = m
            .store
            .ids_in_group(group)
            .find(|&id| d.after_pass_two.get(id).is_some_and(|g| g.iter().any(|v| v.abs() > 1e-4)))
            .unwrap_or_else(|| first_param(&m, group));
        let (k, analytic) = largest_entry(&d.after_pass_two, id);
        let numeric = if pass_one {
            finite_difference(&m, id, k, |mm| mm.unimodal_objective(&b).unwrap())
        } else {
            finite_difference(&m, id, k, |mm| mm.multimodal_objective(&b, &d.features).unwrap())
        };
        let rel = (numeric - analytic).abs() / analytic.abs().max(1e-8);
        assert!(rel < 1e-3, "{group}: analytic {analytic} numeric {numeric}");
    }
    // the unimodal objective does not depend on fusion parameters at all
    let fid = first_param(&m, FUSION_GROUP);
    assert_eq!(finite_difference(&m, fid, 0, |mm| mm.unimodal_objective(&b).unwrap()), 0.0);
}

#[test]
fn report_identities() {
    let data = separable(8, 5);
    let m = toy_model(&data, 5);
    let b = batch(&data, 6, true);
    let r = m.dgl_gradients(&b).unwrap().report;
    assert!(r.tabmofe >= 0.0);
    let lambda = m.task.lambda;
    assert!((r.multi - (r.task_plus + r.task_minus + lambda * r.tabmofe)).abs() < 1e-6);
    assert!((r.tabmofe - (r.task_plus - r.task_minus).max(0.0)).abs() < 1e-12);

    let mut no_rank = m.clone();
    no_rank.task.lambda = 0.0;
    let same = batch(&data, 6, false);
    let r = no_rank.dgl_gradients(&same).unwrap().report;
    assert_eq!(r.task_plus, r.task_minus);
    assert!((r.multi - 2.0 * r.task_plus).abs() < 1e-12);
}

#[test]
fn training_reduces_multimodal_loss() {
    let data = separable(32, 7);
    let mut m = toy_model(&data, 7);
    let config = FinetuneConfig {
        epochs: 50,
        batch_size: 8,
        learning_rate: 3e-3,
        seed: 8,
        ..Default::default()
    };
    let records = finetune(&mut m, &data, &config).unwrap();
    assert_eq!(records.len(), 200);
    let early: f64 = records[..10].iter().map(|r| r.report.multi).sum::<f64>() / 10.0;
    let late: f64 = records[190..].iter().map(|r| r.report.multi).sum::<f64>() / 10.0;
    assert!(late <= 0.5 * early, "early {early} late {late}");
}

#[test]
fn frozen_mode_keeps_encoders_fixed() {
    let data = separable(8, 9);
    let mut m = toy_model(&data, 9);
    let before = m.store.clone();
    let b = batch(&data, 10, true);
    let mut adam = Adam::new(AdamConfig::default());
    m.train_step(&b, TrainingMode::Disentangled, true, &mut adam).unwrap();
    for (id, p) in m.store.iter() {
        let moved = p.value != *before.value(id);
        let encoder = p.group == IMAGE_GROUP || p.group == TABULAR_GROUP;
        if encoder {
            assert!(!moved, "{} moved while frozen", p.name);
        }
    }
    assert!(m.store.ids_in_group(IMAGE_HEAD_GROUP).any(|id| m.store.value(id) != before.value(id)));
}

#[test]
fn joint_mode_differs_from_two_pass() {
    let data = separable(8, 11);
    let base = toy_model(&data, 11);
    let b = batch(&data, 12, true);
    let (joint, _) = base.joint_gradients(&b).unwrap();
    let dgl = base.dgl_gradients(&b).unwrap().after_pass_two;
    let enc = |g: &Gradients| g.restricted(&base.store, TABULAR_GROUP);
    assert!(!same_bits(&enc(&joint), &enc(&dgl)));
    assert!(joint.restricted(&base.store, IMAGE_HEAD_GROUP).is_empty());
}

#[test]
fn prediction_with_any_number_of_attributes() {
    let data = separable(4, 13);
    let mut m = toy_model(&data, 13);
    let img = &data.images[0];
    let full = &data.tabular[0];
    let empty = TabularSample::empty(data.schema.clone());
    let a = m.predict(img, full).unwrap();
    let e = m.predict(img, &empty).unwrap();
    assert_eq!(a.len(), e.len());
    assert_eq!(m.predict(img, full).unwrap(), a);
    // silencing the cross-attention output reduces every input to the image-only path
    for name in ["fusion.block0.cross_attn.o.weight", "fusion.block0.cross_attn.o.bias"] {
        let id = m.store.find(name).unwrap();
        m.store.value_mut(id).fill(0.0);
    }
    assert_eq!(m.predict(img, full).unwrap(), m.predict(img, &empty).unwrap());
    let batch = m.predict_batch(&[img, img], &[full.clone(), empty]).unwrap();
    assert_eq!(batch.row(0).to_vec(), m.predict(img, full).unwrap());
}
