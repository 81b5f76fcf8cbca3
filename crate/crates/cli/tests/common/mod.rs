#![allow(dead_code)]

use std::path::Path;

use rovtl::config::ExperimentConfig;
use rovtl_core::encoders::{ImageEncoderConfig, TabularEncoderConfig};
use rovtl_core::pretrain::EncoderConfig;

/// A config that runs every stage in well under a second.
pub fn tiny(out: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.seed = 3;
    c.out_dir = out.to_path_buf();
    c.data.synth.samples = 80;
    c.data.synth.image_size = 8;
    c.data.test_fraction = 0.25;
    c.encoder = EncoderConfig {
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
            name_buckets: 64,
            level_buckets: 16,
        },
        projection_widths: vec![4, 8],
    };
    c.pretrain.epochs = 2;
    c.pretrain.batch_size = 16;
    c.fusion.dim = 8;
    c.fusion.gate_hidden = 4;
    c.finetune.epochs = 2;
    c.finetune.batch_size = 16;
    c.finetune.learning_rates = vec![1e-3];
    c.eval.forest.trees = 10;
    c
}

/// Column `name` of a CSV file as strings.
pub fn column(path: &Path, name: &str) -> Vec<String> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let idx = r.headers().unwrap().iter().position(|h| h == name).unwrap();
    r.records().map(|rec| rec.unwrap()[idx].to_owned()).collect()
}
