//! Small strided convolutional image encoder. Each cell of the final feature
//! map becomes one token; the pooled vector is their mean.

use std::rc::Rc;

use ndarray::Array2;
use rand::Rng;
use rovtl_autograd::{Graph, Linear, ParamStore, PAD};
use serde::{Deserialize, Serialize};

use crate::encoders::{BundleVars, FeatureBundle, Modality};
use crate::error::{CoreError, Result};

/// Single-channel image, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(CoreError::Shape(format!(
                "{} pixels for a {height}x{width} image",
                pixels.len()
            )));
        }
        Ok(Self { height, width, pixels })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            pixels: vec![0.0; height * width],
        }
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.pixels[y * self.width + x]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageEncoderConfig {
    /// Square input side length.
    pub input_size: usize,
    /// Output channels of each stride-2 3×3 convolution.
    pub channels: Vec<usize>,
    /// Token width `d_i`.
    pub out_dim: usize,
}

impl Default for ImageEncoderConfig {
    fn default() -> Self {
        Self {
            input_size: 16,
            channels: vec![8, 16],
            out_dim: 32,
        }
    }
}

impl ImageEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || self.out_dim == 0 || self.channels.iter().any(|&c| c == 0) {
            return Err(CoreError::Config("image encoder widths must be positive".into()));
        }
        Ok(())
    }

    fn map_side(&self) -> usize {
        self.channels.iter().fold(self.input_size, |s, _| s.div_ceil(2))
    }

    /// Tokens per image.
    pub fn tokens(&self) -> usize {
        let s = self.map_side();
        s * s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageEncoder {
    pub config: ImageEncoderConfig,
    convs: Vec<Linear>,
    head: Linear,
}

pub const IMAGE_GROUP: &str = "image_encoder";

impl ImageEncoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, config: ImageEncoderConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut convs = Vec::new();
        let mut in_ch = 1;
        for (i, &out_ch) in config.channels.iter().enumerate() {
            convs.push(Linear::new(store, &format!("{IMAGE_GROUP}.conv{i}"), IMAGE_GROUP, 9 * in_ch, out_ch, rng));
            in_ch = out_ch;
        }
        let head = Linear::new(store, &format!("{IMAGE_GROUP}.head"), IMAGE_GROUP, in_ch, config.out_dim, rng);
        Ok(Self { config, convs, head })
    }

    fn check(&self, images: &[&Image]) -> Result<()> {
        let s = self.config.input_size;
        for img in images {
            if img.height != s || img.width != s {
                return Err(CoreError::Shape(format!(
                    "expected {s}x{s} image, got {}x{}",
                    img.height, img.width
                )));
            }
            if img.pixels.iter().any(|p| !p.is_finite()) {
                return Err(CoreError::NonFinite("image pixel".into()));
            }
        }
        Ok(())
    }

    /// Encodes a batch inside `g`, returning one bundle per image.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, images: &[&Image]) -> Result<Vec<BundleVars>> {
        self.check(images)?;
        let b = images.len();
        if b == 0 {
            return Ok(Vec::new());
        }
        let s = self.config.input_size;
        let mut data = Vec::with_capacity(b * s * s);
        for img in images {
            data.extend_from_slice(&img.pixels);
        }
        let mut x = g.constant(Array2::from_shape_vec((b * s * s, 1), data).expect("pixel count"));
        let (mut side, mut ch) = (s, 1);
        for conv in &self.convs {
            let (idx, out_side) = im2col_indices(b, side, ch);
            let cols = g.gather(x, idx, b * out_side * out_side, 9 * ch);
            let h = conv.forward(g, store, cols);
            x = g.relu(h);
            side = out_side;
            ch = conv.out_dim;
        }
        let tokens = self.head.forward(g, store, x);
        let per = side * side;
        let mut out = Vec::with_capacity(b);
        for i in 0..b {
            let t = if b == 1 { tokens } else { g.slice_rows(tokens, i * per, (i + 1) * per) };
            let pooled = g.mean_rows(t);
            out.push(BundleVars { tokens: t, pooled });
        }
        Ok(out)
    }

    pub fn encode(&self, store: &ParamStore, images: &[&Image]) -> Result<Vec<FeatureBundle>> {
        let mut g = Graph::new();
        let vars = self.forward(&mut g, store, images)?;
        Ok(vars
            .iter()
            .map(|v| FeatureBundle::from_vars(&g, v, Modality::Image))
            .collect())
    }
}

/// Gather indices for a 3×3, stride-2, padding-1 convolution over a batch
/// laid out as `(b·side·side) × ch` rows. Output columns are ordered
/// (ky, kx, channel).
fn im2col_indices(b: usize, side: usize, ch: usize) -> (Rc<[usize]>, usize) {
    let out_side = side.div_ceil(2);
    let mut idx = Vec::with_capacity(b * out_side * out_side * 9 * ch);
    for n in 0..b {
        for oy in 0..out_side {
            for ox in 0..out_side {
                for ky in 0..3 {
                    for kx in 0..3 {
                        let y = (2 * oy + ky) as isize - 1;
                        let x = (2 * ox + kx) as isize - 1;
                        let inside = y >= 0 && x >= 0 && (y as usize) < side && (x as usize) < side;
                        for c in 0..ch {
                            idx.push(if inside {
                                ((n * side + y as usize) * side + x as usize) * ch + c
                            } else {
                                PAD
                            });
                        }
                    }
                }
            }
        }
    }
    (idx.into(), out_side)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn encoder() -> (ParamStore, ImageEncoder) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = ImageEncoder::new(&mut store, ImageEncoderConfig::default(), &mut rng).unwrap();
        (store, enc)
    }

    #[test]
    fn shapes_and_token_count() {
        let (store, enc) = encoder();
        let imgs: Vec<Image> = (0..3)
            .map(|k| Image::new(16, 16, (0..256).map(|i| ((i * (k + 1)) % 7) as f64 / 7.0).collect()).unwrap())
            .collect();
        let refs: Vec<&Image> = imgs.iter().collect();
        let bundles = enc.encode(&store, &refs).unwrap();
        assert_eq!(bundles.len(), 3);
        for b in &bundles {
            assert_eq!(b.tokens.dim(), (16, 32));
            assert_eq!(b.pooled.len(), 32);
        }
        assert_eq!(enc.config.tokens(), 16);
    }

    #[test]
    fn zero_image_is_finite_and_identical_images_match() {
        let (store, enc) = encoder();
        let z = Image::zeros(16, 16);
        let out = enc.encode(&store, &[&z, &z]).unwrap();
        assert!(out[0].pooled.iter().all(|v| v.is_finite()));
        // zero input through zero biases: every activation is zero
        assert!(out[0].pooled.iter().all(|&v| v == 0.0));
        assert_eq!(out[0], out[1]);
    }

    #[test]
    fn batch_does_not_leak_between_images() {
        let (store, enc) = encoder();
        let a = Image::new(16, 16, (0..256).map(|i| (i % 5) as f64).collect()).unwrap();
        let b = Image::new(16, 16, (0..256).map(|i| (i % 3) as f64).collect()).unwrap();
        let alone = enc.encode(&store, &[&a]).unwrap();
        let pair = enc.encode(&store, &[&b, &a]).unwrap();
        assert_eq!(alone[0].tokens, pair[1].tokens);
    }

    #[test]
    fn rejects_wrong_shape_and_nan() {
        let (store, enc) = encoder();
        assert!(enc.encode(&store, &[&Image::zeros(8, 8)]).is_err());
        let mut bad = Image::zeros(16, 16);
        bad.pixels[3] = f64::NAN;
        assert!(matches!(enc.encode(&store, &[&bad]), Err(CoreError::NonFinite(_))));
    }
}
