#![allow(dead_code)]

use std::sync::Arc;

use rovtl_core::encoders::{ImageEncoderConfig, TabularEncoderConfig};
use rovtl_core::fusion::FusionConfig;
use rovtl_core::pretrain::EncoderConfig;
use rovtl_core::tabular::{AttributeSchema, Column, TabularSample, Value};

pub fn small_encoders() -> EncoderConfig {
    EncoderConfig {
        image: ImageEncoderConfig {
            input_size: 8,
            channels: vec![4],
            out_dim: 8,
        },
        tabular: TabularEncoderConfig {
            token_dim: 8,
            depth: 1,
            heads: 2,
            out_dim: 8,
            name_buckets: 4096,
            level_buckets: 64,
        },
        projection_widths: vec![4, 8],
    }
}

pub fn small_fusion() -> FusionConfig {
    FusionConfig {
        dim: 8,
        self_heads: 2,
        cross_heads: 2,
        gate_hidden: 4,
        ..Default::default()
    }
}

/// `n` continuous columns named `c0..`, plus a categorical `kind` column.
pub fn schema(n: usize) -> Arc<AttributeSchema> {
    let mut cols: Vec<Column> = (0..n).map(|i| Column::continuous(format!("c{i}"))).collect();
    cols.push(Column::categorical("kind", ["a", "b", "c"]));
    Arc::new(AttributeSchema::new(cols).unwrap())
}

pub fn full_row(schema: &Arc<AttributeSchema>, offset: f64) -> TabularSample {
    let n = schema.len();
    let entries = (0..n)
        .map(|c| {
            if c + 1 == n {
                (c, Value::Level((offset.abs() as usize) % 3))
            } else {
                (c, Value::Real(offset + c as f64 * 0.37))
            }
        })
        .collect();
    TabularSample::new(schema.clone(), entries).unwrap()
}
