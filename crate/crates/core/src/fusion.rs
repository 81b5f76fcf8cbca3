//! Gated cross-attention fusion of image tokens with tabular attribute
//! tokens, plus the concatenation and element-wise max baselines.
//!
//! Gated path, per sample:
//! `v̂ = LN(ṽ_i + SA(ṽ_i))`, `v_m = v̂ + w · CA(v̂, attributes)`,
//! `w = σ(MLP(cls))`, followed by a residual feed-forward layer and mean
//! pooling over image tokens. With no attributes the cross-attention term
//! is skipped and `v_m = v̂`.

use ndarray::Array2;
use rand::Rng;
use rovtl_autograd::{sigmoid, Graph, LayerNorm, Linear, Matrix, Mlp, MultiHeadAttention, ParamStore, Var};
use serde::{Deserialize, Serialize};

use crate::encoders::{BundleVars, FeatureBundle};
use crate::error::{CoreError, Result};

pub const FUSION_GROUP: &str = "fusion";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionKind {
    Gated,
    Concat,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateMode {
    Learned,
    /// Constant gate value, bypassing the gate network.
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub dim: usize,
    pub self_heads: usize,
    pub cross_heads: usize,
    pub gate_hidden: usize,
    pub depth: usize,
    pub kind: FusionKind,
    pub gate: GateMode,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            self_heads: 2,
            cross_heads: 2,
            gate_hidden: 16,
            depth: 1,
            kind: FusionKind::Gated,
            gate: GateMode::Learned,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.self_heads == 0 || self.cross_heads == 0 || self.gate_hidden == 0 || self.depth == 0 {
            return Err(CoreError::Config("fusion widths must be positive".into()));
        }
        if self.dim % self.self_heads != 0 || self.dim % self.cross_heads != 0 {
            return Err(CoreError::Config(format!(
                "fusion width {} not divisible by head counts {}/{}",
                self.dim, self.self_heads, self.cross_heads
            )));
        }
        if let GateMode::Fixed(w) = self.gate {
            if !(0.0..=1.0).contains(&w) {
                return Err(CoreError::Config(format!("fixed gate {w} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Block {
    self_attn: MultiHeadAttention,
    self_norm: LayerNorm,
    cross_attn: MultiHeadAttention,
    gate: Mlp,
    ffn_norm: LayerNorm,
    ffn: Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fusion {
    pub config: FusionConfig,
    image_in: Linear,
    tabular_in: Linear,
    blocks: Vec<Block>,
    image_dim: usize,
    tabular_dim: usize,
}

/// Graph handles produced by one fused forward pass.
#[derive(Debug, Clone)]
pub struct FusionVars {
    /// Pooled 1 × `output_dim` embedding fed to the prediction head.
    pub embedding: Var,
    /// Gated path only, and only when attributes are present.
    pub gate: Option<Var>,
    /// Per-head cross-attention, image tokens × attributes.
    pub attention: Vec<Var>,
    pub v_hat: Option<Var>,
    pub v_m: Option<Var>,
    /// Raw cross-attention output before gating.
    pub cross: Option<Var>,
}

/// Materialised fusion internals for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionTrace {
    pub gate: Option<f64>,
    /// heads × (image tokens × attributes).
    pub attention: Vec<Matrix>,
    pub v_hat: Matrix,
    pub v_m: Matrix,
    /// Schema column of each attention column, in token order.
    pub attribute_columns: Vec<usize>,
}

impl FusionTrace {
    pub fn from_vars(g: &Graph, v: &FusionVars, attribute_columns: Vec<usize>) -> Option<Self> {
        Some(Self {
            gate: v.gate.map(|w| g.scalar_value(w)),
            attention: v.attention.iter().map(|&a| g.value(a).clone()).collect(),
            v_hat: g.value(v.v_hat?).clone(),
            v_m: g.value(v.v_m?).clone(),
            attribute_columns,
        })
    }
}

impl Fusion {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        config: FusionConfig,
        image_dim: usize,
        tabular_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let f = FUSION_GROUP;
        let d = config.dim;
        let image_in = Linear::new(store, &format!("{f}.image_in"), f, image_dim, d, rng);
        let tabular_in = Linear::new(store, &format!("{f}.tabular_in"), f, tabular_dim, d, rng);
        let blocks = if config.kind == FusionKind::Gated {
            (0..config.depth)
                .map(|i| Block {
                    self_attn: MultiHeadAttention::new(store, &format!("{f}.block{i}.self_attn"), f, d, config.self_heads, rng),
                    self_norm: LayerNorm::new(store, &format!("{f}.block{i}.self_norm"), f, d),
                    cross_attn: MultiHeadAttention::new(store, &format!("{f}.block{i}.cross_attn"), f, d, config.cross_heads, rng),
                    gate: Mlp::new(store, &format!("{f}.block{i}.gate"), f, (d, config.gate_hidden, 1), rng),
                    ffn_norm: LayerNorm::new(store, &format!("{f}.block{i}.ffn_norm"), f, d),
                    ffn: Mlp::new(store, &format!("{f}.block{i}.ffn"), f, (d, 2 * d, d), rng),
                })
                .collect()
        } else {
            Vec::new()
        };
        Ok(Self {
            config,
            image_in,
            tabular_in,
            blocks,
            image_dim,
            tabular_dim,
        })
    }

    /// Width of the pooled embedding handed to the multimodal head.
    pub fn output_dim(&self) -> usize {
        match self.config.kind {
            FusionKind::Concat => self.image_dim + self.tabular_dim,
            FusionKind::Gated | FusionKind::Max => self.config.dim,
        }
    }

    /// Fuses one sample. `tabular.tokens` is `[CLS]` followed by the
    /// attribute tokens; `attributes` is their count.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        image: &BundleVars,
        tabular: &BundleVars,
        attributes: usize,
    ) -> Result<FusionVars> {
        let (_, wi) = g.shape(image.tokens);
        let (lt, wt) = g.shape(tabular.tokens);
        if wi != self.image_dim || wt != self.tabular_dim {
            return Err(CoreError::Shape(format!(
                "fusion expects widths {}/{}, got {wi}/{wt}",
                self.image_dim, self.tabular_dim
            )));
        }
        if lt != attributes + 1 {
            return Err(CoreError::Shape(format!("{lt} tabular tokens for {attributes} attributes")));
        }
        match self.config.kind {
            FusionKind::Concat => Ok(Self::pooled_only(g.concat_cols(&[image.pooled, tabular.pooled]))),
            FusionKind::Max => {
                let a = self.image_in.forward(g, store, image.pooled);
                let b = self.tabular_in.forward(g, store, tabular.pooled);
                Ok(Self::pooled_only(g.maximum(a, b)))
            }
            FusionKind::Gated => self.forward_gated(g, store, image, tabular, attributes),
        }
    }

    fn pooled_only(embedding: Var) -> FusionVars {
        FusionVars {
            embedding,
            gate: None,
            attention: Vec::new(),
            v_hat: None,
            v_m: None,
            cross: None,
        }
    }

    fn forward_gated(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        image: &BundleVars,
        tabular: &BundleVars,
        attributes: usize,
    ) -> Result<FusionVars> {
        let mut x = self.image_in.forward(g, store, image.tokens);
        let t = self.tabular_in.forward(g, store, tabular.tokens);
        let (cls, attrs) = if attributes > 0 {
            (g.slice_rows(t, 0, 1), Some(g.slice_rows(t, 1, attributes + 1)))
        } else {
            (t, None)
        };
        let mut out = Self::pooled_only(x);
        for block in &self.blocks {
            let sa = block.self_attn.forward(g, store, x, x).output;
            let res = g.add(x, sa);
            let v_hat = block.self_norm.forward(g, store, res);
            let v_m = match attrs {
                Some(attrs) => {
                    let ca = block.cross_attn.forward(g, store, v_hat, attrs);
                    let w = match self.config.gate {
                        GateMode::Learned => {
                            let h = block.gate.forward(g, store, cls);
                            g.sigmoid(h)
                        }
                        GateMode::Fixed(w) => g.scalar(w),
                    };
                    let gated = g.mul_scalar(ca.output, w);
                    out.gate = Some(w);
                    out.attention = ca.weights;
                    out.cross = Some(ca.output);
                    g.add(v_hat, gated)
                }
                None => v_hat,
            };
            out.v_hat = Some(v_hat);
            out.v_m = Some(v_m);
            let h = block.ffn_norm.forward(g, store, v_m);
            let h = block.ffn.forward(g, store, h);
            x = g.add(v_m, h);
        }
        out.embedding = g.mean_rows(x);
        Ok(out)
    }

    /// Gate value for a raw tabular `[CLS]` vector (first block).
    pub fn gate_weight(&self, store: &ParamStore, cls: &[f64]) -> Result<f64> {
        if cls.len() != self.tabular_dim {
            return Err(CoreError::Shape(format!("cls width {} vs {}", cls.len(), self.tabular_dim)));
        }
        if let GateMode::Fixed(w) = self.config.gate {
            return Ok(w);
        }
        let block = self.blocks.first().ok_or_else(|| CoreError::Config("fusion kind has no gate".into()))?;
        let mut g = Graph::new();
        let x = g.constant(Array2::from_shape_vec((1, cls.len()), cls.to_vec()).expect("row"));
        let p = self.tabular_in.forward(&mut g, store, x);
        let h = block.gate.forward(&mut g, store, p);
        Ok(sigmoid(g.scalar_value(h)))
    }

    /// Gate network parameters of the first block, for inspection.
    pub fn gate_mlp(&self) -> Option<&Mlp> {
        self.blocks.first().map(|b| &b.gate)
    }
}

/// Concatenation of pooled vectors, image first.
pub fn fuse_concat(image: &FeatureBundle, tabular: &FeatureBundle) -> Vec<f64> {
    image.pooled.iter().chain(&tabular.pooled).copied().collect()
}

/// Element-wise maximum of two equally wide vectors.
pub fn fuse_max(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(CoreError::Shape(format!("max fusion of widths {} and {}", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x.max(*y)).collect())
}

/// Per-attribute score: mean over heads, then over image tokens.
pub fn aggregate_attention(trace: &FusionTrace) -> Result<Vec<f64>> {
    let first = trace.attention.first().ok_or(CoreError::NoAttributes)?;
    let (rows, cols) = first.dim();
    if cols == 0 || rows == 0 {
        return Err(CoreError::NoAttributes);
    }
    let mut mean = Array2::<f64>::zeros((rows, cols));
    for head in &trace.attention {
        mean += head;
    }
    mean /= trace.attention.len() as f64;
    Ok((0..cols).map(|j| mean.column(j).sum() / rows as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn trace(attention: Vec<Matrix>) -> FusionTrace {
        FusionTrace {
            gate: Some(0.5),
            attention,
            v_hat: Array2::zeros((1, 1)),
            v_m: Array2::zeros((1, 1)),
            attribute_columns: vec![0, 1],
        }
    }

    #[test]
    fn aggregate_hand_case() {
        let s = aggregate_attention(&trace(vec![array![[0.2, 0.8], [0.4, 0.6]]])).unwrap();
        assert!((s[0] - 0.3).abs() < 1e-12 && (s[1] - 0.7).abs() < 1e-12);
        assert!(matches!(aggregate_attention(&trace(vec![])), Err(CoreError::NoAttributes)));
    }

    #[test]
    fn max_and_concat() {
        assert_eq!(fuse_max(&[1.0, -2.0], &[0.0, 5.0]).unwrap(), vec![1.0, 5.0]);
        assert!(fuse_max(&[1.0], &[1.0, 2.0]).is_err());
        let a = FeatureBundle {
            tokens: Array2::zeros((1, 2)),
            pooled: vec![1.0, 2.0],
            modality: crate::encoders::Modality::Image,
        };
        let b = FeatureBundle {
            tokens: Array2::zeros((1, 1)),
            pooled: vec![0.0],
            modality: crate::encoders::Modality::Tabular,
        };
        assert_eq!(fuse_concat(&a, &b), vec![1.0, 2.0, 0.0]);
    }
}
