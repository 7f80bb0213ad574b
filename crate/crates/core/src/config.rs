//! `key = value` run configuration.
//!
//! One setting per line, `#` starts a comment, no sections. Unknown or
//! repeated keys are rejected. [`RunConfig::to_text`] prints every key in a
//! fixed order, and that text is what checkpoints embed.

use std::collections::HashSet;
use std::fmt::Display;
use std::path::PathBuf;
use std::str::FromStr;

use crate::data::AugmentConfig;
use crate::error::{Error, Result};
use crate::losses::{LossMode, LossWeights};
use crate::model::{format_stages, parse_stages, ModelConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub final_lr: f64,
    pub final_lr_epochs: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub weights: LossWeights,
    pub loss_mode: LossMode,
    pub margin: f64,
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 75,
            batch_size: 48,
            base_lr: 0.001,
            final_lr: 0.0001,
            final_lr_epochs: 5,
            momentum: 0.0,
            weight_decay: 0.0,
            weights: LossWeights::default(),
            loss_mode: LossMode::IdentVerif,
            margin: 1.0,
            checkpoint_every: 10,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.max_epochs <= self.final_lr_epochs {
            return bad(format!(
                "max_epochs ({}) must exceed final_lr_epochs ({})",
                self.max_epochs, self.final_lr_epochs
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if self.base_lr < 0.0 || self.final_lr < 0.0 || self.weight_decay < 0.0 {
            return bad("learning rates and weight decay must be >= 0".into());
        }
        if self.margin <= 0.0 {
            return bad(format!("margin {} must be > 0", self.margin));
        }
        self.weights.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    pub manifest: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    /// Worker threads; 0 picks the machine default. Does not affect results.
    pub workers: usize,
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: Display,
{
    v.parse()
        .map_err(|e| Error::Config(format!("bad value `{v}` for `{key}`: {e}")))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key `{k}`", i + 1)));
            }
            cfg.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {}", i + 1, e.to_string().trim_start_matches("config: "))))?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let m = &mut self.model;
        let t = &mut self.train;
        let a = &mut self.augment;
        match key {
            "seed" => t.seed = parse_value(key, v)?,
            "input_channels" => m.input_channels = parse_value(key, v)?,
            "input_size" => m.input_size = parse_value(key, v)?,
            "backbone" => m.stages = parse_stages(v)?,
            "embedding_dim" => m.embedding_dim = parse_value(key, v)?,
            "num_identities" => m.num_identities = parse_value(key, v)?,
            "dropout" => m.dropout_rate = parse_value(key, v)?,
            "pooling" => m.pooling = parse_value(key, v)?,
            "max_epochs" => t.max_epochs = parse_value(key, v)?,
            "batch_size" => t.batch_size = parse_value(key, v)?,
            "base_lr" => t.base_lr = parse_value(key, v)?,
            "final_lr" => t.final_lr = parse_value(key, v)?,
            "final_lr_epochs" => t.final_lr_epochs = parse_value(key, v)?,
            "momentum" => t.momentum = parse_value(key, v)?,
            "weight_decay" => t.weight_decay = parse_value(key, v)?,
            "w_verif" => t.weights.w_verif = parse_value(key, v)?,
            "w_ident" => t.weights.w_ident = parse_value(key, v)?,
            "loss" => t.loss_mode = parse_value(key, v)?,
            "margin" => t.margin = parse_value(key, v)?,
            "checkpoint_every" => t.checkpoint_every = parse_value(key, v)?,
            "resize_to" => a.resize_to = parse_value(key, v)?,
            "crop_to" => a.crop_to = parse_value(key, v)?,
            "mirror_prob" => a.mirror_prob = parse_value(key, v)?,
            "pixel_scale" => a.pixel_scale = parse_value(key, v)?,
            "manifest" => self.manifest = Some(PathBuf::from(v)),
            "out_dir" => self.out_dir = Some(PathBuf::from(v)),
            "workers" => self.workers = parse_value(key, v)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Every key with its effective value, one per line, fixed order.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let a = &self.augment;
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let entries: Vec<(&str, String)> = vec![
            ("seed", t.seed.to_string()),
            ("input_channels", m.input_channels.to_string()),
            ("input_size", m.input_size.to_string()),
            ("backbone", format_stages(&m.stages)),
            ("embedding_dim", m.embedding_dim.to_string()),
            ("num_identities", m.num_identities.to_string()),
            ("dropout", m.dropout_rate.to_string()),
            ("pooling", m.pooling.to_string()),
            ("max_epochs", t.max_epochs.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("base_lr", t.base_lr.to_string()),
            ("final_lr", t.final_lr.to_string()),
            ("final_lr_epochs", t.final_lr_epochs.to_string()),
            ("momentum", t.momentum.to_string()),
            ("weight_decay", t.weight_decay.to_string()),
            ("w_verif", t.weights.w_verif.to_string()),
            ("w_ident", t.weights.w_ident.to_string()),
            ("loss", t.loss_mode.to_string()),
            ("margin", t.margin.to_string()),
            ("checkpoint_every", t.checkpoint_every.to_string()),
            ("resize_to", a.resize_to.to_string()),
            ("crop_to", a.crop_to.to_string()),
            ("mirror_prob", a.mirror_prob.to_string()),
            ("pixel_scale", a.pixel_scale.to_string()),
            ("manifest", path(&self.manifest)),
            ("out_dir", path(&self.out_dir)),
            ("workers", self.workers.to_string()),
        ];
        entries
            .into_iter()
            .filter(|(_, v)| !v.is_empty())
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.augment.validate()?;
        if self.augment.crop_to != self.model.input_size {
            return Err(Error::Config(format!(
                "crop_to ({}) must equal input_size ({})",
                self.augment.crop_to, self.model.input_size
            )));
        }
        Ok(())
    }
}
