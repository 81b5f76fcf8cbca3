//! Projection head with nested output widths. One linear map produces a
//! `max(widths)`-wide vector; the embedding at width `w` is its first `w`
//! coordinates, L2-normalised.

use rand::Rng;
use rovtl_autograd::{Graph, Linear, ParamStore, Var};

use crate::error::{CoreError, Result};

pub const PROJECTION_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    pub widths: Vec<usize>,
    linear: Linear,
}

impl ProjectionHead {
    /// `widths` must be non-empty and strictly increasing.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        group: &str,
        in_dim: usize,
        widths: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        if widths.is_empty() || widths[0] == 0 || widths.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CoreError::Config(format!(
                "projection widths must be positive and strictly increasing, got {widths:?}"
            )));
        }
        let max = *widths.last().expect("non-empty");
        Ok(Self {
            widths: widths.to_vec(),
            linear: Linear::new(store, name, group, in_dim, max, rng),
        })
    }

    /// Unit-norm embeddings of the rows of `x`, one matrix per width.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Vec<Var> {
        let full = self.linear.forward(g, store, x);
        let max = *self.widths.last().expect("non-empty");
        self.widths
            .iter()
            .map(|&w| {
                let prefix = if w == max { full } else { g.slice_cols(full, 0, w) };
                g.l2_normalize_rows(prefix, PROJECTION_EPS)
            })
            .collect()
    }
}
