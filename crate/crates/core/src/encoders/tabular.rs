//! Set-style tabular encoder. Every present attribute becomes one token
//! built from a hashed column-name embedding plus a value embedding; a
//! learned [CLS] token is prepended and the sequence runs through a small
//! pre-norm transformer without positional encodings, so the [CLS] output
//! does not depend on attribute order.

use std::collections::{BTreeMap, BTreeSet};
use std::hash::Hasher;
use std::rc::Rc;

use ndarray::Array2;
use rand::Rng;
use rovtl_autograd::{Graph, LayerNorm, Linear, Mlp, MultiHeadAttention, ParamId, ParamStore, Var, PAD};
use serde::{Deserialize, Serialize};

use crate::encoders::{BundleVars, FeatureBundle, Modality};
use crate::error::{CoreError, Result};
use crate::tabular::{AttributeSchema, ColumnKind, TabularSample, Value};

pub const TABULAR_GROUP: &str = "tabular_encoder";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TabularEncoderConfig {
    pub token_dim: usize,
    pub depth: usize,
    pub heads: usize,
    /// Output width `d_t`.
    pub out_dim: usize,
    pub name_buckets: usize,
    pub level_buckets: usize,
}

impl Default for TabularEncoderConfig {
    fn default() -> Self {
        Self {
            token_dim: 32,
            depth: 1,
            heads: 2,
            out_dim: 32,
            name_buckets: 4096,
            level_buckets: 1024,
        }
    }
}

impl TabularEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.token_dim == 0 || self.out_dim == 0 || self.heads == 0 || self.name_buckets == 0 || self.level_buckets == 0
        {
            return Err(CoreError::Config("tabular encoder widths must be positive".into()));
        }
        if self.token_dim % self.heads != 0 {
            return Err(CoreError::Config(format!(
                "token width {} not divisible by {} heads",
                self.token_dim, self.heads
            )));
        }
        Ok(())
    }
}

/// Frozen per-column standardisation statistics, keyed by column name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    stats: BTreeMap<String, (f64, f64)>,
}

impl Standardizer {
    /// Mean and standard deviation of each continuous column over the
    /// samples where it is present. Columns already fitted are kept.
    pub fn fit_missing(&mut self, samples: &[TabularSample]) {
        let Some(schema) = samples.first().map(|s| s.schema().clone()) else { return };
        for (c, col) in schema.columns().iter().enumerate() {
            if col.kind != ColumnKind::Continuous || self.stats.contains_key(&col.name) {
                continue;
            }
            let xs: Vec<f64> = samples.iter().filter_map(|s| s.get(c).and_then(Value::as_real)).collect();
            if xs.is_empty() {
                continue;
            }
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / xs.len() as f64;
            let std = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
            self.stats.insert(col.name.clone(), (mean, std));
        }
    }

    pub fn fit(samples: &[TabularSample]) -> Self {
        let mut s = Self::default();
        s.fit_missing(samples);
        s
    }

    /// Unknown columns pass through unscaled.
    pub fn apply(&self, column: &str, x: f64) -> f64 {
        match self.stats.get(column) {
            Some(&(mean, std)) => (x - mean) / std,
            None => x,
        }
    }

    pub fn get(&self, column: &str) -> Option<(f64, f64)> {
        self.stats.get(column).copied()
    }
}

/// Non-parameter state that travels with the encoder weights.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TabularVocabulary {
    pub standardizer: Standardizer,
    /// `(column, level)` pairs with trained embeddings; anything else maps
    /// to the reserved unknown-level row.
    pub known_levels: BTreeSet<(String, String)>,
}

impl TabularVocabulary {
    pub fn register_schema(&mut self, schema: &AttributeSchema) {
        for col in schema.columns() {
            for level in &col.levels {
                self.known_levels.insert((col.name.clone(), level.clone()));
            }
        }
    }
}

fn fnv(parts: &[&str]) -> u64 {
    let mut h = fnv::FnvHasher::default();
    for (i, p) in parts.iter().enumerate() {
        if i > 0 {
            h.write_u8(0x1f);
        }
        h.write(p.as_bytes());
    }
    h.finish()
}

#[derive(Debug, Clone, PartialEq)]
struct Block {
    norm1: LayerNorm,
    attn: MultiHeadAttention,
    norm2: LayerNorm,
    mlp: Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularEncoder {
    pub config: TabularEncoderConfig,
    pub vocab: TabularVocabulary,
    name_table: ParamId,
    /// `level_buckets + 1` rows; the last is the unknown level.
    level_table: ParamId,
    continuous_weight: ParamId,
    continuous_bias: ParamId,
    cls: ParamId,
    blocks: Vec<Block>,
    final_norm: LayerNorm,
    out: Linear,
}

impl TabularEncoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, config: TabularEncoderConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let g = TABULAR_GROUP;
        let d = config.token_dim;
        let name_table = store.normal(format!("{g}.name_table"), g, config.name_buckets, d, 0.5, rng);
        let level_table = store.normal(format!("{g}.level_table"), g, config.level_buckets + 1, d, 0.5, rng);
        let continuous_weight = store.normal(format!("{g}.continuous.weight"), g, 1, d, 0.5, rng);
        let continuous_bias = store.normal(format!("{g}.continuous.bias"), g, 1, d, 0.1, rng);
        let cls = store.normal(format!("{g}.cls"), g, 1, d, 0.5, rng);
        let blocks = (0..config.depth)
            .map(|i| Block {
                norm1: LayerNorm::new(store, &format!("{g}.block{i}.norm1"), g, d),
                attn: MultiHeadAttention::new(store, &format!("{g}.block{i}.attn"), g, d, config.heads, rng),
                norm2: LayerNorm::new(store, &format!("{g}.block{i}.norm2"), g, d),
                mlp: Mlp::new(store, &format!("{g}.block{i}.mlp"), g, (d, 2 * d, d), rng),
            })
            .collect();
        let final_norm = LayerNorm::new(store, &format!("{g}.final_norm"), g, d);
        let out = Linear::new(store, &format!("{g}.out"), g, d, config.out_dim, rng);
        Ok(Self {
            config,
            vocab: TabularVocabulary::default(),
            name_table,
            level_table,
            continuous_weight,
            continuous_bias,
            cls,
            blocks,
            final_norm,
            out,
        })
    }

    pub fn name_bucket(&self, name: &str) -> usize {
        (fnv(&[name]) % self.config.name_buckets as u64) as usize
    }

    /// Row of the level table used for `(column, level)`.
    pub fn level_row(&self, column: &str, level: &str) -> usize {
        if self.vocab.known_levels.contains(&(column.to_owned(), level.to_owned())) {
            (fnv(&[column, level]) % self.config.level_buckets as u64) as usize
        } else {
            self.config.level_buckets
        }
    }

    pub fn name_table(&self) -> ParamId {
        self.name_table
    }

    /// Raw attribute tokens (k × token_dim) for `(name, value)` pairs.
    /// Categorical values are given by level name.
    fn attribute_tokens(&self, g: &mut Graph, store: &ParamStore, attrs: &[(&str, AttrValue<'_>)]) -> Var {
        let k = attrs.len();
        let d = self.config.token_dim;
        let name_rows: Vec<usize> = attrs.iter().map(|(n, _)| self.name_bucket(n)).collect();
        let table = g.param(store, self.name_table);
        let names = g.select_rows(table, &name_rows);

        let mut scalars = Array2::zeros((k, 1));
        let mut is_cont = Array2::zeros((k, 1));
        let mut level_idx: Vec<usize> = Vec::with_capacity(k * d);
        for (i, (name, v)) in attrs.iter().enumerate() {
            match v {
                AttrValue::Continuous(x) => {
                    scalars[[i, 0]] = self.vocab.standardizer.apply(name, *x);
                    is_cont[[i, 0]] = 1.0;
                    level_idx.extend(std::iter::repeat_n(PAD, d));
                }
                AttrValue::Categorical(level) => {
                    let row = self.level_row(name, level);
                    level_idx.extend((row * d)..(row * d + d));
                }
            }
        }
        let levels_t = g.param(store, self.level_table);
        let levels: Var = g.gather(levels_t, Rc::from(level_idx), k, d);
        let scalars = g.constant(scalars);
        let is_cont = g.constant(is_cont);
        let w = g.param(store, self.continuous_weight);
        let b = g.param(store, self.continuous_bias);
        let cont = g.matmul(scalars, w);
        let bias = g.matmul(is_cont, b);
        let cont = g.add(cont, bias);
        let values = g.add(cont, levels);
        g.add(names, values)
    }

    /// Token for a single attribute, outside any transformer context.
    pub fn attribute_token(&self, store: &ParamStore, name: &str, value: AttrValue<'_>) -> Result<Vec<f64>> {
        if name.is_empty() {
            return Err(CoreError::Sample("attribute name is empty".into()));
        }
        if let AttrValue::Continuous(x) = value {
            if !x.is_finite() {
                return Err(CoreError::NonFinite(format!("attribute {name}")));
            }
        }
        let mut g = Graph::new();
        let t = self.attribute_tokens(&mut g, store, &[(name, value)]);
        Ok(g.value(t).row(0).to_vec())
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, t: &TabularSample) -> BundleVars {
        let schema = t.schema();
        let attrs: Vec<(&str, AttrValue<'_>)> = t
            .entries()
            .iter()
            .map(|&(c, v)| {
                let col = schema.column(c);
                let value = match v {
                    Value::Real(x) => AttrValue::Continuous(x),
                    Value::Level(l) => AttrValue::Categorical(&col.levels[l]),
                };
                (col.name.as_str(), value)
            })
            .collect();
        let cls = g.param(store, self.cls);
        let mut x = if attrs.is_empty() {
            cls
        } else {
            let toks = self.attribute_tokens(g, store, &attrs);
            g.concat_rows(&[cls, toks])
        };
        for block in &self.blocks {
            let h = block.norm1.forward(g, store, x);
            let a = block.attn.forward(g, store, h, h).output;
            x = g.add(x, a);
            let h = block.norm2.forward(g, store, x);
            let m = block.mlp.forward(g, store, h);
            x = g.add(x, m);
        }
        let x = self.final_norm.forward(g, store, x);
        let tokens = self.out.forward(g, store, x);
        let pooled = if attrs.is_empty() { tokens } else { g.slice_rows(tokens, 0, 1) };
        BundleVars { tokens, pooled }
    }

    pub fn encode(&self, store: &ParamStore, t: &TabularSample) -> FeatureBundle {
        let mut g = Graph::new();
        let v = self.forward(&mut g, store, t);
        FeatureBundle::from_vars(&g, &v, Modality::Tabular)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttrValue<'a> {
    Continuous(f64),
    Categorical(&'a str),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::Column;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn setup() -> (ParamStore, TabularEncoder, Arc<AttributeSchema>) {
        let schema = Arc::new(
            AttributeSchema::new(vec![
                Column::continuous("age"),
                Column::categorical("smoker", ["no", "yes"]),
                Column::continuous("bmi"),
            ])
            .unwrap(),
        );
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = TabularEncoderConfig {
            token_dim: 16,
            out_dim: 8,
            name_buckets: 64,
            level_buckets: 32,
            ..Default::default()
        };
        let mut enc = TabularEncoder::new(&mut store, cfg, &mut rng).unwrap();
        enc.vocab.register_schema(&schema);
        (store, enc, schema)
    }

    #[test]
    fn empty_sample_yields_cls_only() {
        let (store, enc, schema) = setup();
        let b = enc.encode(&store, &TabularSample::empty(schema));
        assert_eq!(b.tokens.dim(), (1, 8));
        assert_eq!(b.pooled.to_vec(), b.tokens.row(0).to_vec());
    }

    #[test]
    fn standardized_zero_gives_name_plus_bias() {
        let (store, mut enc, _) = setup();
        enc.vocab.standardizer.stats.insert("age".into(), (50.0, 10.0));
        let tok = enc.attribute_token(&store, "age", AttrValue::Continuous(50.0)).unwrap();
        let name = store.value(enc.name_table).row(enc.name_bucket("age")).to_owned();
        let bias = store.value(enc.continuous_bias).row(0).to_owned();
        let expected = &name + &bias;
        assert_eq!(tok, expected.to_vec());
    }

    #[test]
    fn unseen_level_uses_reserved_row() {
        let (store, enc, _) = setup();
        assert_eq!(enc.level_row("smoker", "maybe"), 32);
        assert!(enc.level_row("smoker", "yes") < 32);
        let a = enc.attribute_token(&store, "smoker", AttrValue::Categorical("maybe")).unwrap();
        let b = enc.attribute_token(&store, "smoker", AttrValue::Categorical("sometimes")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn different_names_same_value_differ() {
        let (store, enc, _) = setup();
        let a = enc.attribute_token(&store, "age", AttrValue::Continuous(1.0)).unwrap();
        let b = enc.attribute_token(&store, "bmi", AttrValue::Continuous(1.0)).unwrap();
        assert_ne!(a, b);
        assert!(enc.attribute_token(&store, "", AttrValue::Continuous(1.0)).is_err());
    }
}
