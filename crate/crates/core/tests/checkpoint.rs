mod common;

use std::sync::Arc;

use rovtl_core::checkpoint::{self, from_bytes, Checkpoint, SchemaCheck, MAGIC};
use rovtl_core::encoders::Image;
use rovtl_core::finetune::{MultimodalModel, TaskSpec};
use rovtl_core::pretrain::PretrainModel;
use rovtl_core::tabular::{AttributeSchema, Column, TabularSample, Value};
use rovtl_core::{CoreError, Dataset, Label};

fn dataset(schema: &Arc<AttributeSchema>, n: usize) -> Dataset {
    let images = (0..n)
        .map(|i| Image::new(8, 8, (0..64).map(|p| ((p * (i + 1)) % 9) as f64 / 9.0).collect()).unwrap())
        .collect();
    let tabular = (0..n).map(|i| common::full_row(schema, i as f64 - 1.5)).collect();
    let labels = (0..n).map(|i| Label::Class(i % 2)).collect();
    Dataset::new(schema.clone(), images, tabular, labels).unwrap()
}

fn trained_like(schema: &Arc<AttributeSchema>) -> MultimodalModel {
    let data = dataset(schema, 6);
    let mut m = MultimodalModel::new(common::small_encoders(), common::small_fusion(), TaskSpec::classification(2), 3).unwrap();
    m.fit_vocabulary(&data);
    // perturb away from the deterministic initialisation so a fresh model would differ
    let ids: Vec<_> = m.store.iter().map(|(id, _)| id).collect();
    for (k, id) in ids.into_iter().enumerate() {
        m.store.value_mut(id).mapv_inplace(|v| v + 1e-3 * (k as f64).sin() + 0.1 / 3.0);
    }
    m
}

#[test]
fn multimodal_round_trip_is_bit_exact() {
    let schema = common::schema(3);
    let m = trained_like(&schema);
    let bytes = checkpoint::multimodal_to_bytes(&m, &schema).unwrap();
    assert_eq!(&bytes[..8], MAGIC);
    let loaded = from_bytes(&bytes, SchemaCheck::Strict(&schema)).unwrap();
    assert_eq!(loaded.schema, *schema);
    let Checkpoint::Multimodal(back) = &loaded.checkpoint else { panic!("wrong kind") };
    for ((_, a), (_, b)) in m.store.iter().zip(back.store.iter()) {
        assert_eq!(a.name, b.name);
        assert!(a.value.iter().zip(b.value.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    assert_eq!(back.tabular.vocab, m.tabular.vocab);
    let data = dataset(&schema, 2);
    assert_eq!(
        back.predict(&data.images[0], &data.tabular[0]).unwrap(),
        m.predict(&data.images[0], &data.tabular[0]).unwrap()
    );
    assert_eq!(checkpoint::to_bytes(&loaded.checkpoint, &schema).unwrap(), bytes);
}

#[test]
fn save_load_save_gives_identical_files() {
    let schema = common::schema(2);
    let data = dataset(&schema, 4);
    let mut pre = PretrainModel::new(common::small_encoders(), 9).unwrap();
    pre.fit_vocabulary(&data);
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a.ckpt");
    let second = dir.path().join("b.ckpt");
    checkpoint::save(&first, &Checkpoint::Pretrain(pre.clone()), &schema).unwrap();
    let loaded = checkpoint::load(&first, SchemaCheck::None).unwrap();
    assert_eq!(loaded.checkpoint, Checkpoint::Pretrain(pre));
    checkpoint::save(&second, &loaded.checkpoint, &loaded.schema).unwrap();
    assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());
}

#[test]
fn strict_load_rejects_another_schema() {
    let schema = common::schema(3);
    let other = common::schema(4);
    let bytes = checkpoint::multimodal_to_bytes(&trained_like(&schema), &schema).unwrap();
    assert!(matches!(
        from_bytes(&bytes, SchemaCheck::Strict(&other)),
        Err(CoreError::SchemaMismatch { .. })
    ));
}

#[test]
fn transfer_load_onto_a_new_attribute_set() {
    let source = common::schema(3);
    let data = dataset(&source, 6);
    let mut pre = PretrainModel::new(common::small_encoders(), 4).unwrap();
    pre.fit_vocabulary(&data);
    let bytes = checkpoint::pretrain_to_bytes(&pre, &source).unwrap();

    // one shared column, two unseen ones, one of them with unseen levels
    let target = Arc::new(
        AttributeSchema::new(vec![
            Column::continuous("c0"),
            Column::continuous("ejection_fraction"),
            Column::categorical("vendor", ["siemens", "philips", "ge"]),
        ])
        .unwrap(),
    );
    assert!(from_bytes(&bytes, SchemaCheck::Strict(&target)).is_err());
    let loaded = from_bytes(&bytes, SchemaCheck::Transfer(&target)).unwrap();
    let Checkpoint::Pretrain(pre2) = loaded.checkpoint else { panic!("wrong kind") };
    assert!(pre2.tabular.vocab.known_levels.contains(&("vendor".to_owned(), "ge".to_owned())));
    let m = MultimodalModel::from_pretrained(&pre2, common::small_fusion(), TaskSpec::classification(2), 1).unwrap();
    let row = TabularSample::new(
        target.clone(),
        vec![(0, Value::Real(0.5)), (1, Value::Real(55.0)), (2, Value::Level(2))],
    )
    .unwrap();
    let out = m.predict(&data.images[0], &row).unwrap();
    assert_eq!(out.len(), 2);
    assert!(out.iter().all(|v| v.is_finite()));
}

#[test]
fn damaged_files_are_rejected() {
    let schema = common::schema(1);
    let bytes = checkpoint::multimodal_to_bytes(&trained_like(&schema), &schema).unwrap();

    let mut flipped = bytes.clone();
    let mid = bytes.len() - 20;
    flipped[mid] ^= 0x40;
    assert!(matches!(from_bytes(&flipped, SchemaCheck::None), Err(CoreError::Corrupt(_))));

    let mut version = bytes.clone();
    version[8..12].copy_from_slice(&7u32.to_le_bytes());
    assert!(matches!(from_bytes(&version, SchemaCheck::None), Err(CoreError::Version(7))));

    assert!(from_bytes(&bytes[..bytes.len() / 2], SchemaCheck::None).is_err());
    assert!(from_bytes(b"not a checkpoint at all, just text", SchemaCheck::None).is_err());
}
