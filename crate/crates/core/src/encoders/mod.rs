//! Image and tabular encoders plus the nested-width projection heads used
//! for contrastive pretraining.

pub mod image;
pub mod projection;
pub mod tabular;

use rovtl_autograd::{Graph, Matrix, Var};

pub use image::{Image, ImageEncoder, ImageEncoderConfig, IMAGE_GROUP};
pub use projection::{ProjectionHead, PROJECTION_EPS};
pub use tabular::{AttrValue, Standardizer, TabularEncoder, TabularEncoderConfig, TabularVocabulary, TABULAR_GROUP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    Image,
    Tabular,
}

/// Graph handles for one encoded sample: token matrix (L × d) and the
/// pooled 1 × d summary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BundleVars {
    pub tokens: Var,
    pub pooled: Var,
}

/// Materialised encoder output.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle {
    pub tokens: Matrix,
    pub pooled: Vec<f64>,
    pub modality: Modality,
}

impl FeatureBundle {
    pub fn from_vars(g: &Graph, v: &BundleVars, modality: Modality) -> Self {
        Self {
            tokens: g.value(v.tokens).clone(),
            pooled: g.value(v.pooled).iter().copied().collect(),
            modality,
        }
    }
}
