//! The siamese identification+verification network.
//!
//! One backbone and one identity head serve both branches. The two
//! embeddings meet in the square layer `(f1 - f2)^2`, which feeds a
//! two-way verification head. Neither head is followed by a ReLU.

use std::fmt;
use std::str::FromStr;

use crate::autograd::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{ParamStore, Tensor};

pub const IDENT_WEIGHT: &str = "ident.weight";
pub const IDENT_BIAS: &str = "ident.bias";
pub const VERIF_WEIGHT: &str = "verif.weight";
pub const VERIF_BIAS: &str = "verif.bias";
pub const EMBED_WEIGHT: &str = "backbone.embed.weight";
pub const EMBED_BIAS: &str = "backbone.embed.bias";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pooling {
    /// Flatten the last feature map; input size is fixed.
    Flatten,
    /// Per-channel global max ("MAC"); any input at least the minimum size.
    Mac,
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pooling::Flatten => "flatten",
            Pooling::Mac => "mac",
        })
    }
}

impl FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flatten" => Ok(Pooling::Flatten),
            "mac" => Ok(Pooling::Mac),
            _ => Err(Error::Config(format!("unknown pooling mode `{s}` (flatten|mac)"))),
        }
    }
}

/// One conv + ReLU stage, optionally followed by 2x2 max-pooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stage {
    pub channels: usize,
    pub kernel: usize,
    pub pool: bool,
}

/// Parses `16:3:pool,32:3:pool,64:3`.
pub fn parse_stages(s: &str) -> Result<Vec<Stage>> {
    s.split(',')
        .map(|part| {
            let fields: Vec<&str> = part.trim().split(':').collect();
            let bad = || Error::Config(format!("bad backbone stage `{part}` (channels:kernel[:pool])"));
            let (channels, kernel, pool) = match fields.as_slice() {
                [c, k] => (c, k, false),
                [c, k, "pool"] => (c, k, true),
                _ => return Err(bad()),
            };
            Ok(Stage {
                channels: channels.parse().map_err(|_| bad())?,
                kernel: kernel.parse().map_err(|_| bad())?,
                pool,
            })
        })
        .collect()
}

pub fn format_stages(stages: &[Stage]) -> String {
    stages
        .iter()
        .map(|s| {
            if s.pool {
                format!("{}:{}:pool", s.channels, s.kernel)
            } else {
                format!("{}:{}", s.channels, s.kernel)
            }
        })
        .collect::<Vec<_>>()
        .join(",")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub input_channels: usize,
    pub input_size: usize,
    pub stages: Vec<Stage>,
    pub embedding_dim: usize,
    pub num_identities: usize,
    pub dropout_rate: f64,
    pub pooling: Pooling,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_channels: 3,
            input_size: 32,
            stages: vec![
                Stage { channels: 16, kernel: 3, pool: true },
                Stage { channels: 32, kernel: 3, pool: true },
                Stage { channels: 64, kernel: 3, pool: false },
            ],
            embedding_dim: 64,
            num_identities: 2,
            dropout_rate: 0.5,
            pooling: Pooling::Flatten,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_identities < 2 {
            return bad(format!("num_identities must be >= 2, got {}", self.num_identities));
        }
        if self.embedding_dim < 2 {
            return bad(format!("embedding_dim must be >= 2, got {}", self.embedding_dim));
        }
        if self.input_channels == 0 || self.stages.is_empty() {
            return bad("need input channels and at least one backbone stage".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout rate {} outside [0, 1)", self.dropout_rate));
        }
        for s in &self.stages {
            if s.channels == 0 || s.kernel == 0 || s.kernel % 2 == 0 {
                return bad(format!("stage {s:?}: channels > 0 and odd kernel required"));
            }
        }
        let mut size = self.input_size;
        for s in &self.stages {
            if s.pool {
                if size % 2 != 0 || size < 2 {
                    return bad(format!("input size {} not divisible through the pooling stages", self.input_size));
                }
                size /= 2;
            }
        }
        Ok(())
    }

    /// Spatial size after all stages for a square input of `input` pixels.
    pub fn feature_size(&self, input: usize) -> usize {
        self.stages
            .iter()
            .fold(input, |s, st| if st.pool { s / 2 } else { s })
    }

    /// Smallest square input accepted by the backbone.
    pub fn minimum_input_size(&self) -> usize {
        1usize << self.stages.iter().filter(|s| s.pool).count()
    }

    fn backbone_out_dim(&self) -> usize {
        let c = self.stages.last().map_or(self.input_channels, |s| s.channels);
        match self.pooling {
            Pooling::Flatten => {
                let s = self.feature_size(self.input_size);
                c * s * s
            }
            Pooling::Mac => c,
        }
    }
}

/// Node handles produced by one pair forward pass.
#[derive(Debug, Clone, Copy)]
pub struct PairNodes {
    pub f1: NodeId,
    pub f2: NodeId,
    /// Embeddings after dropout (equal to `f1`/`f2` in eval mode).
    pub f1_drop: NodeId,
    pub f2_drop: NodeId,
    pub p1: Option<NodeId>,
    pub p2: Option<NodeId>,
    pub fs: Option<NodeId>,
    pub q: Option<NodeId>,
}

/// Which heads a forward pass needs to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Heads {
    pub ident: bool,
    pub verif: bool,
}

impl Heads {
    pub const ALL: Heads = Heads { ident: true, verif: true };
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairOutput {
    pub p1: Vec<f64>,
    pub p2: Vec<f64>,
    pub q: Vec<f64>,
    pub f1: Vec<f64>,
    pub f2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdvModel {
    pub config: ModelConfig,
    pub params: ParamStore,
}

fn conv_names(i: usize) -> (String, String) {
    (format!("backbone.conv{}.weight", i + 1), format!("backbone.conv{}.bias", i + 1))
}

fn he_normal(shape: Vec<usize>, fan_in: usize, rng: &mut Rng) -> Tensor {
    let std = (2.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| std * rng.normal()).collect();
    Tensor::new(shape, data).expect("shape matches data")
}

impl IdvModel {
    /// Weights ~ N(0, 2/fan_in), biases zero.
    pub fn init(config: ModelConfig, rng: &Rng) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut c_in = config.input_channels;
        for (i, st) in config.stages.iter().enumerate() {
            let (wn, bn) = conv_names(i);
            let fan_in = c_in * st.kernel * st.kernel;
            let mut r = rng.stream(&wn);
            params.insert(wn, he_normal(vec![st.channels, c_in, st.kernel, st.kernel], fan_in, &mut r));
            params.insert(bn, Tensor::zeros(&[st.channels]));
            c_in = st.channels;
        }
        let d = config.embedding_dim;
        let heads = [
            (EMBED_WEIGHT, EMBED_BIAS, d, config.backbone_out_dim()),
            (IDENT_WEIGHT, IDENT_BIAS, config.num_identities, d),
            (VERIF_WEIGHT, VERIF_BIAS, 2, d),
        ];
        for (wn, bn, out, fan_in) in heads {
            let mut r = rng.stream(wn);
            params.insert(wn, he_normal(vec![out, fan_in], fan_in, &mut r));
            params.insert(bn, Tensor::zeros(&[out]));
        }
        Ok(Self { config, params })
    }

    pub fn check_image(&self, image: &Tensor) -> Result<()> {
        let cfg = &self.config;
        let [c, h, w] = image.shape()[..] else {
            return Err(Error::shape("embed", format!("image must be [C,H,W], got {:?}", image.shape())));
        };
        if c != cfg.input_channels {
            return Err(Error::shape(
                "embed",
                format!("channels: model expects {}, image has {c}", cfg.input_channels),
            ));
        }
        match cfg.pooling {
            Pooling::Flatten if h != cfg.input_size || w != cfg.input_size => Err(Error::shape(
                "embed",
                format!("spatial size {h}x{w} != fixed input {0}x{0}", cfg.input_size),
            )),
            Pooling::Mac => {
                let m = cfg.minimum_input_size();
                let pools = cfg.stages.iter().filter(|s| s.pool).count() as u32;
                let div = 1usize << pools;
                if h < m || w < m || h % div != 0 || w % div != 0 {
                    Err(Error::shape(
                        "embed",
                        format!("spatial size {h}x{w}: MAC mode needs dims >= {m} divisible by {div}"),
                    ))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Records the backbone and returns the activations after each stage's
    /// ReLU (before pooling) together with the final feature map.
    fn backbone_graph(&self, g: &mut Graph, image: NodeId) -> Result<(Vec<NodeId>, NodeId)> {
        let mut x = image;
        let mut acts = Vec::with_capacity(self.config.stages.len());
        for (i, st) in self.config.stages.iter().enumerate() {
            let (wn, bn) = conv_names(i);
            let (w, b) = (g.param(&wn)?, g.param(&bn)?);
            let c = g.conv2d(x, w, b, 1, st.kernel / 2)?;
            x = g.relu(c);
            acts.push(x);
            if st.pool {
                x = g.maxpool2(x)?;
            }
        }
        Ok((acts, x))
    }

    /// Raw descriptor `f` (no dropout) recorded on `g`.
    pub fn embed_graph(&self, g: &mut Graph, image: NodeId) -> Result<NodeId> {
        self.check_image(g.value(image))?;
        let (_, feat) = self.backbone_graph(g, image)?;
        let pooled = match self.config.pooling {
            Pooling::Flatten => g.flatten(feat),
            Pooling::Mac => g.global_max_pool(feat)?,
        };
        let (w, b) = (g.param(EMBED_WEIGHT)?, g.param(EMBED_BIAS)?);
        g.linear(pooled, w, b)
    }

    /// Descriptor for one image. In training mode the returned vector has
    /// dropout applied, exactly as it is fed to the heads.
    pub fn embed(&self, image: &Tensor, training: bool, rng: &mut Rng) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.params);
        let x = g.input(image.clone());
        let f = self.embed_graph(&mut g, x)?;
        let f = g.dropout(f, self.config.dropout_rate, training, rng)?;
        Ok(g.value(f).data().to_vec())
    }

    /// Records the full siamese forward pass. Branch `i` draws its dropout
    /// mask from `rngs[i]`.
    pub fn pair_graph(
        &self,
        g: &mut Graph,
        x1: NodeId,
        x2: NodeId,
        training: bool,
        rngs: [&mut Rng; 2],
        heads: Heads,
    ) -> Result<PairNodes> {
        let [r1, r2] = rngs;
        let rate = self.config.dropout_rate;
        let f1 = self.embed_graph(g, x1)?;
        let f2 = self.embed_graph(g, x2)?;
        let f1_drop = g.dropout(f1, rate, training, r1)?;
        let f2_drop = g.dropout(f2, rate, training, r2)?;
        let (mut p1, mut p2, mut fs, mut q) = (None, None, None, None);
        if heads.ident {
            let (w, b) = (g.param(IDENT_WEIGHT)?, g.param(IDENT_BIAS)?);
            let l1 = g.linear(f1_drop, w, b)?;
            p1 = Some(g.softmax(l1)?);
            let l2 = g.linear(f2_drop, w, b)?;
            p2 = Some(g.softmax(l2)?);
        }
        if heads.verif {
            let s = g.square_diff(f1_drop, f2_drop)?;
            let (w, b) = (g.param(VERIF_WEIGHT)?, g.param(VERIF_BIAS)?);
            let l = g.linear(s, w, b)?;
            fs = Some(s);
            q = Some(g.softmax(l)?);
        }
        Ok(PairNodes {
            f1,
            f2,
            f1_drop,
            f2_drop,
            p1,
            p2,
            fs,
            q,
        })
    }

    pub fn forward_pair(
        &self,
        x1: &Tensor,
        x2: &Tensor,
        training: bool,
        rngs: [&mut Rng; 2],
    ) -> Result<PairOutput> {
        let mut g = Graph::new(&self.params);
        let (a, b) = (g.input(x1.clone()), g.input(x2.clone()));
        let n = self.pair_graph(&mut g, a, b, training, rngs, Heads::ALL)?;
        let v = |id: Option<NodeId>, g: &Graph| g.value(id.expect("all heads built")).data().to_vec();
        Ok(PairOutput {
            p1: v(n.p1, &g),
            p2: v(n.p2, &g),
            q: v(n.q, &g),
            f1: g.value(n.f1).data().to_vec(),
            f2: g.value(n.f2).data().to_vec(),
        })
    }

    /// Identity posteriors for a single image in eval mode.
    pub fn identify(&self, image: &Tensor) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.params);
        let x = g.input(image.clone());
        let f = self.embed_graph(&mut g, x)?;
        let (w, b) = (g.param(IDENT_WEIGHT)?, g.param(IDENT_BIAS)?);
        let l = g.linear(f, w, b)?;
        let p = g.softmax(l)?;
        Ok(g.value(p).data().to_vec())
    }

    /// Channel sum of the post-ReLU activation at backbone `stage`, shape `[H', W']`.
    pub fn activation_sum(&self, image: &Tensor, stage: usize) -> Result<Tensor> {
        if stage >= self.config.stages.len() {
            return Err(Error::InvalidArgument(format!(
                "stage {stage} out of range (backbone has {} stages)",
                self.config.stages.len()
            )));
        }
        let act = self.stage_activation(image, stage)?;
        let [c, h, w] = act.shape()[..] else { unreachable!() };
        let mut out = vec![0.0; h * w];
        for plane in act.data().chunks(h * w).take(c) {
            out.iter_mut().zip(plane).for_each(|(o, v)| *o += v);
        }
        Tensor::new(vec![h, w], out)
    }

    /// Post-ReLU activation `[C, H', W']` at a backbone stage.
    pub fn stage_activation(&self, image: &Tensor, stage: usize) -> Result<Tensor> {
        let mut g = Graph::new(&self.params);
        let x = g.input(image.clone());
        let (acts, _) = self.backbone_graph(&mut g, x)?;
        acts.get(stage)
            .map(|&id| g.value(id).clone())
            .ok_or_else(|| Error::InvalidArgument(format!("stage {stage} out of range")))
    }
}
