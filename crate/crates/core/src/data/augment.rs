//! Resizing, mean-image normalisation and crop/mirror augmentation.

use crate::data::manifest::{Manifest, Split};
use crate::data::ppm::decode_ppm;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub resize_to: usize,
    pub crop_to: usize,
    pub mirror_prob: f64,
    /// Multiplier applied after mean subtraction.
    pub pixel_scale: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            resize_to: 36,
            crop_to: 32,
            mirror_prob: 0.5,
            pixel_scale: 1.0 / 255.0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.crop_to == 0 || self.crop_to > self.resize_to {
            return Err(Error::Config(format!(
                "crop_to ({}) must be in 1..=resize_to ({})",
                self.crop_to, self.resize_to
            )));
        }
        if !(0.0..=1.0).contains(&self.mirror_prob) {
            return Err(Error::Config(format!("mirror_prob {} outside [0, 1]", self.mirror_prob)));
        }
        Ok(())
    }
}

/// Bilinear resize of `[C, H, W]` with corner-aligned sampling: output pixel
/// `i` reads source coordinate `i * (H - 1) / (H_out - 1)`.
pub fn resize_bilinear(image: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let [c, h, w] = image.shape()[..] else {
        return Err(Error::shape("resize", format!("need [C,H,W], got {:?}", image.shape())));
    };
    if (h, w) == (out_h, out_w) {
        return Ok(image.clone());
    }
    let coord = |i: usize, n_in: usize, n_out: usize| -> (usize, usize, f64) {
        if n_out == 1 || n_in == 1 {
            return (0, 0, 0.0);
        }
        let s = i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
        let lo = (s.floor() as usize).min(n_in - 1);
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, s - lo as f64)
    };
    let src = image.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for oy in 0..out_h {
            let (y0, y1, fy) = coord(oy, h, out_h);
            for ox in 0..out_w {
                let (x0, x1, fx) = coord(ox, w, out_w);
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out.push(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    Tensor::new(vec![c, out_h, out_w], out)
}

/// Per-pixel, per-channel arithmetic mean of equally shaped images.
pub fn compute_mean_image(images: &[Tensor]) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidArgument("mean image of an empty set".into()))?;
    let mut acc = vec![0.0; first.len()];
    for img in images {
        if img.shape() != first.shape() {
            return Err(Error::shape(
                "mean_image",
                format!("{:?} vs {:?}", img.shape(), first.shape()),
            ));
        }
        acc.iter_mut().zip(img.data()).for_each(|(a, v)| *a += v);
    }
    let n = images.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Tensor::new(first.shape().to_vec(), acc)
}

fn crop(image: &Tensor, top: usize, left: usize, size: usize, mirror: bool) -> Tensor {
    let [c, h, w] = image.shape()[..] else { unreachable!("checked by caller") };
    let src = image.data();
    let mut out = Vec::with_capacity(c * size * size);
    for ch in 0..c {
        for y in 0..size {
            let row = &src[(ch * h + top + y) * w + left..][..size];
            if mirror {
                out.extend(row.iter().rev());
            } else {
                out.extend_from_slice(row);
            }
        }
    }
    Tensor::new(vec![c, size, size], out).expect("crop shape")
}

/// Training: uniform random crop then mirror with `mirror_prob`.
/// Eval: centre crop, no mirror.
pub fn augment(image: &Tensor, cfg: &AugmentConfig, training: bool, rng: &mut Rng) -> Result<Tensor> {
    let [_, h, w] = image.shape()[..] else {
        return Err(Error::shape("augment", format!("need [C,H,W], got {:?}", image.shape())));
    };
    if h < cfg.crop_to || w < cfg.crop_to {
        return Err(Error::shape(
            "augment",
            format!("image {h}x{w} smaller than crop {}", cfg.crop_to),
        ));
    }
    let (slack_y, slack_x) = (h - cfg.crop_to, w - cfg.crop_to);
    if training {
        let top = rng.below(slack_y + 1);
        let left = rng.below(slack_x + 1);
        let mirror = rng.bernoulli(cfg.mirror_prob);
        Ok(crop(image, top, left, cfg.crop_to, mirror))
    } else {
        Ok(crop(image, slack_y / 2, slack_x / 2, cfg.crop_to, false))
    }
}

/// Fitted input normalisation: resize, subtract the training mean image, scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessor {
    pub cfg: AugmentConfig,
    pub mean: Tensor,
}

impl Preprocessor {
    /// Decodes every training image and computes the mean at `resize_to`.
    /// The mean is rounded to `f32` so a checkpointed copy reproduces it exactly.
    pub fn fit(manifest: &Manifest, cfg: AugmentConfig) -> Result<Self> {
        cfg.validate()?;
        let train: Vec<Tensor> = manifest
            .samples
            .iter()
            .filter(|s| s.split == Split::Train)
            .map(|s| load_resized(&manifest.resolve(s), cfg.resize_to))
            .collect::<Result<_>>()?;
        let mut mean = compute_mean_image(&train)?;
        mean.data_mut().iter_mut().for_each(|v| *v = f64::from(*v as f32));
        Ok(Self { cfg, mean })
    }

    pub fn prepare(&self, raw: &Tensor) -> Result<Tensor> {
        let r = self.cfg.resize_to;
        let mut img = resize_bilinear(raw, r, r)?;
        if img.shape() != self.mean.shape() {
            return Err(Error::shape(
                "preprocess",
                format!("image {:?} vs mean {:?}", img.shape(), self.mean.shape()),
            ));
        }
        let scale = self.cfg.pixel_scale;
        img.data_mut()
            .iter_mut()
            .zip(self.mean.data())
            .for_each(|(v, m)| *v = (*v - m) * scale);
        Ok(img)
    }

    pub fn load(&self, path: &std::path::Path) -> Result<Tensor> {
        self.prepare(&decode_ppm(path)?)
    }

    /// Prepared, centre-cropped network input for evaluation.
    pub fn eval_input(&self, path: &std::path::Path) -> Result<Tensor> {
        augment(&self.load(path)?, &self.cfg, false, &mut Rng::new(0))
    }
}

pub fn load_resized(path: &std::path::Path, size: usize) -> Result<Tensor> {
    resize_bilinear(&decode_ppm(path)?, size, size)
}
