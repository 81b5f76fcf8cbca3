//! Image augmentation: horizontal flip, random resized crop and rotation,
//! resolved into a single bilinear resampling pass (zero fill outside).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::Image;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub flip_probability: f64,
    /// Crop area as a fraction of the frame.
    pub scale: (f64, f64),
    /// Crop aspect ratio (width / height).
    pub ratio: (f64, f64),
    pub max_rotation_degrees: f64,
    /// Output side length.
    pub output_size: usize,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            flip_probability: 0.5,
            scale: (0.6, 1.0),
            ratio: (3.0 / 4.0, 4.0 / 3.0),
            max_rotation_degrees: 45.0,
            output_size: 16,
        }
    }
}

/// One sampled augmentation. `crop` is `(x0, y0, width, height)` in source
/// pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentDraw {
    pub flip: bool,
    pub crop: (f64, f64, f64, f64),
    pub angle: f64,
}

impl AugmentDraw {
    pub fn identity(image: &Image) -> Self {
        Self {
            flip: false,
            crop: (0.0, 0.0, image.width as f64, image.height as f64),
            angle: 0.0,
        }
    }
}

pub fn draw_augmentation<R: Rng + ?Sized>(params: &AugmentParams, image: &Image, rng: &mut R) -> AugmentDraw {
    let flip = rng.random::<f64>() < params.flip_probability;
    let (w, h) = (image.width as f64, image.height as f64);
    let area = w * h;
    let mut crop = (0.0, 0.0, w, h);
    // torchvision-style rejection: up to ten tries, then the full frame
    for _ in 0..10 {
        let target = area * uniform(rng, params.scale.0, params.scale.1);
        let log_ratio = uniform(rng, params.ratio.0.ln(), params.ratio.1.ln());
        let aspect = log_ratio.exp();
        let cw = (target * aspect).sqrt();
        let ch = (target / aspect).sqrt();
        if cw <= w && ch <= h {
            let x0 = uniform(rng, 0.0, w - cw);
            let y0 = uniform(rng, 0.0, h - ch);
            crop = (x0, y0, cw, ch);
            break;
        }
    }
    let m = params.max_rotation_degrees;
    let angle = uniform(rng, -m, m).to_radians();
    AugmentDraw { flip, crop, angle }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

pub fn apply_augmentation(image: &Image, draw: &AugmentDraw, output_size: usize) -> Image {
    let n = output_size as f64;
    let (x0, y0, cw, ch) = draw.crop;
    let (cx, cy) = (x0 + cw / 2.0, y0 + ch / 2.0);
    let (sin, cos) = draw.angle.sin_cos();
    let mut pixels = Vec::with_capacity(output_size * output_size);
    for oy in 0..output_size {
        for ox in 0..output_size {
            let dx = ox as f64 + 0.5 - n / 2.0;
            let dy = oy as f64 + 0.5 - n / 2.0;
            let rx = cos * dx + sin * dy;
            let ry = -sin * dx + cos * dy;
            let sx = cx + rx * (cw / n) - 0.5;
            let sy = cy + ry * (ch / n) - 0.5;
            let sx = if draw.flip { image.width as f64 - 1.0 - sx } else { sx };
            pixels.push(bilinear(image, sx, sy));
        }
    }
    Image {
        height: output_size,
        width: output_size,
        pixels,
    }
}

pub fn augment_image<R: Rng + ?Sized>(image: &Image, params: &AugmentParams, rng: &mut R) -> Image {
    let draw = draw_augmentation(params, image, rng);
    apply_augmentation(image, &draw, params.output_size)
}

fn bilinear(image: &Image, x: f64, y: f64) -> f64 {
    let fx = x.floor();
    let fy = y.floor();
    let (ax, ay) = (x - fx, y - fy);
    let px = |yy: f64, xx: f64| -> f64 {
        if xx < 0.0 || yy < 0.0 || xx >= image.width as f64 || yy >= image.height as f64 {
            0.0
        } else {
            image.get(yy as usize, xx as usize)
        }
    };
    let top = px(fy, fx) * (1.0 - ax) + if ax > 0.0 { px(fy, fx + 1.0) * ax } else { 0.0 };
    if ay > 0.0 {
        let bottom = px(fy + 1.0, fx) * (1.0 - ax) + if ax > 0.0 { px(fy + 1.0, fx + 1.0) * ax } else { 0.0 };
        top * (1.0 - ay) + bottom * ay
    } else {
        top
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp() -> Image {
        Image::new(8, 8, (0..64).map(|i| i as f64 * 0.1 - 1.3).collect()).unwrap()
    }

    #[test]
    fn identity_draw_is_pixel_exact() {
        let img = ramp();
        let out = apply_augmentation(&img, &AugmentDraw::identity(&img), 8);
        assert_eq!(out, img);
    }

    #[test]
    fn flip_mirrors_columns() {
        let img = ramp();
        let mut d = AugmentDraw::identity(&img);
        d.flip = true;
        let out = apply_augmentation(&img, &d, 8);
        for y in 0..8 {
            for x in 0..8 {
                assert_eq!(out.get(y, x), img.get(y, 7 - x));
            }
        }
    }

    #[test]
    fn output_has_configured_size() {
        let img = ramp();
        let params = AugmentParams {
            output_size: 5,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let out = augment_image(&img, &params, &mut rng);
            assert_eq!((out.height, out.width, out.pixels.len()), (5, 5, 25));
            assert!(out.pixels.iter().all(|p| p.is_finite()));
        }
    }

    #[test]
    fn draws_respect_ranges() {
        let img = Image::zeros(16, 16);
        let params = AugmentParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..500 {
            let d = draw_augmentation(&params, &img, &mut rng);
            let (x0, y0, w, h) = d.crop;
            assert!(x0 >= 0.0 && y0 >= 0.0 && x0 + w <= 16.0 + 1e-9 && y0 + h <= 16.0 + 1e-9);
            let frac = w * h / 256.0;
            assert!((0.6 - 1e-9..=1.0 + 1e-9).contains(&frac));
            assert!(d.angle.abs() <= 45f64.to_radians());
        }
    }
}
