//! Vision-tabular learning that stays usable from zero to complete tabular
//! input: missingness-augmented contrastive pretraining, gated
//! cross-attention fusion, more-vs-fewer ranking regularisation with
//! disentangled two-pass fine-tuning, plus synthetic data and
//! missingness-sweep evaluation.

pub mod checkpoint;
pub mod dataset;
pub mod encoders;
pub mod error;
pub mod evaluation;
pub mod finetune;
pub mod fusion;
pub mod pretrain;
pub mod synth;
pub mod tabular;

pub use dataset::{Dataset, Label};
pub use error::{CoreError, Result};
