//! Synthetic re-identification dataset.
//!
//! Each identity is a two-band image (upper and lower garment colour).
//! Cameras add a fixed brightness offset and Gaussian pixel noise. Training
//! identities are disjoint from the query/gallery identities; each test
//! identity contributes one camera's images to the query split and the rest
//! to the gallery, rotating the query camera across identities.

use std::path::{Path, PathBuf};

use crate::data::manifest::{write_manifest, Sample, Split, DISTRACTOR_ID};
use crate::data::ppm::encode_ppm;
use crate::error::{Error, Result};
use crate::fsutil;
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyConfig {
    /// Training identities.
    pub num_ids: usize,
    /// Query/gallery identities, disjoint from the training ones.
    pub num_test_ids: usize,
    pub images_per_cam: usize,
    pub num_cams: usize,
    pub noise_sigma: f64,
    pub image_size: usize,
    pub num_distractors: usize,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            num_ids: 8,
            num_test_ids: 8,
            images_per_cam: 6,
            num_cams: 2,
            noise_sigma: 2.0,
            image_size: 36,
            num_distractors: 0,
            seed: 42,
        }
    }
}

/// Garment colours of one identity, RGB in `0..=255`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Palette {
    pub upper: [f64; 3],
    pub lower: [f64; 3],
}

impl Palette {
    fn distance(&self, other: &Palette) -> f64 {
        self.upper
            .iter()
            .chain(&self.lower)
            .zip(other.upper.iter().chain(&other.lower))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

const COLOR_LO: f64 = 40.0;
const COLOR_HI: f64 = 215.0;
const MIN_SEPARATION: f64 = 100.0;
const MAX_CAMERA_OFFSET: f64 = 8.0;

fn random_palette(rng: &mut Rng) -> Palette {
    let mut c = || COLOR_LO + rng.uniform() * (COLOR_HI - COLOR_LO);
    Palette {
        upper: [c(), c(), c()],
        lower: [c(), c(), c()],
    }
}

/// Well-separated palettes; the separation requirement relaxes if the colour
/// cube cannot fit `n` identities.
pub fn identity_palettes(n: usize, rng: &Rng) -> Vec<Palette> {
    let mut rng = rng.stream("palettes");
    let mut sep = MIN_SEPARATION;
    let mut out: Vec<Palette> = Vec::with_capacity(n);
    let mut misses = 0;
    while out.len() < n {
        let p = random_palette(&mut rng);
        if out.iter().all(|q| q.distance(&p) >= sep) {
            out.push(p);
            misses = 0;
        } else {
            misses += 1;
            if misses > 2000 {
                sep *= 0.9;
                misses = 0;
            }
        }
    }
    out
}

/// Brightness offset of camera `cam` (1-based) among `num_cams`.
pub fn camera_offset(cam: u32, num_cams: usize) -> f64 {
    if num_cams < 2 {
        return 0.0;
    }
    -MAX_CAMERA_OFFSET + 2.0 * MAX_CAMERA_OFFSET * f64::from(cam - 1) / (num_cams - 1) as f64
}

/// Renders an `h x w` image of a palette under a brightness offset with noise.
/// Values are rounded to integers in `0..=255`.
pub fn render_identity(palette: &Palette, offset: f64, h: usize, w: usize, sigma: f64, rng: &mut Rng) -> Tensor {
    let split = h / 2;
    let mut data = vec![0.0; 3 * h * w];
    for c in 0..3 {
        for y in 0..h {
            let base = if y < split { palette.upper[c] } else { palette.lower[c] } + offset;
            for x in 0..w {
                let noise = if sigma > 0.0 { sigma * rng.normal() } else { 0.0 };
                data[(c * h + y) * w + x] = (base + noise).round().clamp(0.0, 255.0);
            }
        }
    }
    Tensor::new(vec![3, h, w], data).expect("render shape")
}

/// Writes images and `manifest.csv` under `out_dir`; returns the manifest path.
pub fn generate_toy_dataset(cfg: &ToyConfig, out_dir: &Path) -> Result<PathBuf> {
    if cfg.num_ids < 2 || cfg.num_cams < 2 {
        return Err(Error::InvalidArgument(format!(
            "toy dataset needs >= 2 identities and >= 2 cameras (got {} ids, {} cams)",
            cfg.num_ids, cfg.num_cams
        )));
    }
    if cfg.images_per_cam == 0 || cfg.image_size < 2 {
        return Err(Error::InvalidArgument("images_per_cam >= 1 and image_size >= 2 required".into()));
    }
    for sub in ["train", "query", "gallery"] {
        let d = out_dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let rng = Rng::new(cfg.seed);
    let palettes = identity_palettes(cfg.num_ids + cfg.num_test_ids, &rng);
    let size = cfg.image_size;
    let mut samples = Vec::new();
    let mut emit = |rel: String, img: &Tensor, identity: i64, camera: u32, split: Split| -> Result<()> {
        fsutil::write_atomic(&out_dir.join(&rel), &encode_ppm(img)?)?;
        samples.push(Sample {
            path: PathBuf::from(rel),
            identity,
            camera,
            split,
            distractor: identity == DISTRACTOR_ID,
            label: None,
        });
        Ok(())
    };

    for (id, palette) in palettes.iter().enumerate() {
        let test_index = id.checked_sub(cfg.num_ids);
        for cam in 1..=cfg.num_cams as u32 {
            let split = match test_index {
                None => Split::Train,
                Some(t) if (t % cfg.num_cams) as u32 + 1 == cam => Split::Query,
                Some(_) => Split::Gallery,
            };
            for k in 0..cfg.images_per_cam {
                let mut r = rng.stream(&format!("image/{id}/{cam}/{k}"));
                let img = render_identity(palette, camera_offset(cam, cfg.num_cams), size, size, cfg.noise_sigma, &mut r);
                emit(format!("{split}/id{id:04}_c{cam}_{k:03}.ppm"), &img, id as i64, cam, split)?;
            }
        }
    }
    for k in 0..cfg.num_distractors {
        let mut r = rng.stream(&format!("distractor/{k}"));
        let palette = random_palette(&mut r);
        let cam = r.below(cfg.num_cams) as u32 + 1;
        let img = render_identity(&palette, camera_offset(cam, cfg.num_cams), size, size, cfg.noise_sigma, &mut r);
        emit(format!("gallery/distractor_{k:05}.ppm"), &img, DISTRACTOR_ID, cam, Split::Gallery)?;
    }

    let comments = vec![
        format!(
            "toy dataset: train_ids={} test_ids={} images_per_cam={} cams={} sigma={} size={} distractors={} seed={}",
            cfg.num_ids, cfg.num_test_ids, cfg.images_per_cam, cfg.num_cams, cfg.noise_sigma, size, cfg.num_distractors, cfg.seed
        ),
        "train: all cameras of the training identities; query: one camera per test identity (rotating); gallery: the other cameras plus distractors".to_string(),
    ];
    let manifest = out_dir.join("manifest.csv");
    write_manifest(&manifest, &samples, &comments)?;
    Ok(manifest)
}
