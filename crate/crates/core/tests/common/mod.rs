#![allow(dead_code)]

use std::path::{Path, PathBuf};

use idv_core::config::RunConfig;
use idv_core::data::{generate_toy_dataset, ToyConfig};
use idv_core::{Rng, Tensor};

pub fn randn(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal()).collect()).unwrap()
}

/// Desk-scale setup that trains in well under a second per epoch on one core.
pub const DESK: &str = "\
input_size = 16
resize_to = 18
crop_to = 16
backbone = 8:3:pool,16:3:pool
embedding_dim = 32
batch_size = 8
base_lr = 0.01
final_lr = 0.001
momentum = 0.9
dropout = 0.2
checkpoint_every = 10
";

pub fn desk_config(manifest: &Path, extra: &str) -> RunConfig {
    let mut text = format!("{DESK}manifest = {}\n", manifest.display());
    for line in extra.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let key = line.split('=').next().unwrap().trim();
        text = text
            .lines()
            .filter(|l| l.split('=').next().unwrap().trim() != key)
            .map(|l| format!("{l}\n"))
            .collect();
        text.push_str(line);
        text.push('\n');
    }
    RunConfig::parse(&text).unwrap()
}

pub fn toy(dir: &Path, cfg: ToyConfig) -> PathBuf {
    generate_toy_dataset(&cfg, dir).unwrap()
}

pub fn toy_cfg(ids: usize, per_cam: usize, sigma: f64, seed: u64) -> ToyConfig {
    ToyConfig {
        num_ids: ids,
        num_test_ids: ids,
        images_per_cam: per_cam,
        num_cams: 2,
        noise_sigma: sigma,
        image_size: 18,
        num_distractors: 0,
        seed,
    }
}
