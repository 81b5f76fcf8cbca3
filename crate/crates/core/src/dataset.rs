//! Paired image/tabular samples with targets.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::encoders::Image;
use crate::error::{CoreError, Result};
use crate::tabular::{AttributeSchema, TabularSample};

/// Target for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Label {
    Class(usize),
    /// Multi-hot vector.
    Multi(Vec<bool>),
    /// One or more real targets.
    Real(Vec<f64>),
}

impl Label {
    /// Scalar view used for importance fitting: the class id, the first
    /// real target, or the first label bit.
    pub fn as_scalar(&self) -> f64 {
        match self {
            Label::Class(c) => *c as f64,
            Label::Multi(bits) => bits.first().map_or(0.0, |&b| f64::from(u8::from(b))),
            Label::Real(v) => v.first().copied().unwrap_or(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: Arc<AttributeSchema>,
    pub images: Vec<Image>,
    pub tabular: Vec<TabularSample>,
    pub labels: Vec<Label>,
}

impl Dataset {
    pub fn new(
        schema: Arc<AttributeSchema>,
        images: Vec<Image>,
        tabular: Vec<TabularSample>,
        labels: Vec<Label>,
    ) -> Result<Self> {
        if images.len() != tabular.len() || images.len() != labels.len() {
            return Err(CoreError::Shape(format!(
                "{} images, {} tabular rows, {} labels",
                images.len(),
                tabular.len(),
                labels.len()
            )));
        }
        if tabular.iter().any(|t| !Arc::ptr_eq(t.schema(), &schema) && **t.schema() != *schema) {
            return Err(CoreError::Schema("tabular row with a foreign schema".into()));
        }
        Ok(Self {
            schema,
            images,
            tabular,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Rows `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self {
            schema: self.schema.clone(),
            images: self.images[start..end].to_vec(),
            tabular: self.tabular[start..end].to_vec(),
            labels: self.labels[start..end].to_vec(),
        }
    }

    pub fn split_at(&self, n: usize) -> (Self, Self) {
        (self.slice(0, n), self.slice(n, self.len()))
    }
}
