use rayon::prelude::*;

use crate::autograd::{Graph, ParamGrads};
use crate::config::TrainConfig;
use crate::error::Result;
use crate::losses::{combined_objective, loss_terms, mode_weights, LossMode, LossWeights};
use crate::model::IdvModel;
use crate::rng::Rng;
use crate::tensor::{ParamStore, Tensor};

/// Augmented image pairs with identity labels and same/different flags.
#[derive(Debug, Clone, Default)]
pub struct PairBatch {
    pub images1: Vec<Tensor>,
    pub images2: Vec<Tensor>,
    pub t1: Vec<usize>,
    pub t2: Vec<usize>,
    pub same: Vec<bool>,
}

impl PairBatch {
    pub fn len(&self) -> usize {
        self.same.len()
    }

    pub fn is_empty(&self) -> bool {
        self.same.is_empty()
    }
}

/// Unweighted loss values and correctness flags for one pair.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PairStats {
    pub loss_total: f64,
    pub loss_verif: f64,
    /// Mean of the two identification losses.
    pub loss_id: f64,
    pub correct_id: usize,
    pub correct_verif: usize,
}

/// Sums over the pairs of a batch (or an epoch).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BatchMetrics {
    pub pairs: usize,
    pub loss_total: f64,
    pub loss_verif: f64,
    pub loss_id: f64,
    pub correct_id: usize,
    pub correct_verif: usize,
}

impl BatchMetrics {
    pub fn add(&mut self, s: &PairStats) {
        self.pairs += 1;
        self.loss_total += s.loss_total;
        self.loss_verif += s.loss_verif;
        self.loss_id += s.loss_id;
        self.correct_id += s.correct_id;
        self.correct_verif += s.correct_verif;
    }

    pub fn merge(&mut self, o: &BatchMetrics) {
        self.pairs += o.pairs;
        self.loss_total += o.loss_total;
        self.loss_verif += o.loss_verif;
        self.loss_id += o.loss_id;
        self.correct_id += o.correct_id;
        self.correct_verif += o.correct_verif;
    }

    pub fn mean_loss(&self) -> f64 {
        self.loss_total / self.pairs.max(1) as f64
    }

    pub fn acc_id(&self) -> f64 {
        self.correct_id as f64 / (2 * self.pairs).max(1) as f64
    }

    pub fn acc_verif(&self) -> f64 {
        self.correct_verif as f64 / self.pairs.max(1) as f64
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Gradient of `scale * L` for one pair, where `L` is the weighted objective
/// of `mode`. Returns the gradients and the unweighted loss terms.
#[allow(clippy::too_many_arguments)]
pub fn pair_gradients(
    model: &IdvModel,
    x1: &Tensor,
    x2: &Tensor,
    t1: usize,
    t2: usize,
    same: bool,
    mode: LossMode,
    weights: LossWeights,
    margin: f64,
    scale: f64,
    training: bool,
    rng: &Rng,
) -> Result<(ParamGrads, PairStats)> {
    let mut g = Graph::new(&model.params);
    let (a, b) = (g.input(x1.clone()), g.input(x2.clone()));
    let mut r1 = rng.stream("dropout/1");
    let mut r2 = rng.stream("dropout/2");
    let nodes = model.pair_graph(&mut g, a, b, training, [&mut r1, &mut r2], mode.heads())?;
    let terms = loss_terms(&mut g, &nodes, t1, t2, same, mode, margin)?;
    let objective = combined_objective(&mut g, &terms, mode_weights(mode, weights))?;
    let loss = g.scale(objective, scale);
    g.check_finite()?;

    let val = |id: Option<crate::autograd::NodeId>| id.map_or(0.0, |id| g.value(id).data()[0]);
    let mut stats = PairStats {
        loss_total: g.value(objective).data()[0],
        loss_verif: val(terms.verif),
        loss_id: 0.5 * (val(terms.ident1) + val(terms.ident2)),
        ..Default::default()
    };
    if let (Some(p1), Some(p2)) = (nodes.p1, nodes.p2) {
        stats.correct_id = usize::from(argmax(g.value(p1).data()) == t1)
            + usize::from(argmax(g.value(p2).data()) == t2);
    }
    stats.correct_verif = match (mode, nodes.q) {
        (LossMode::Contrastive, _) => {
            let d2: f64 = g
                .value(nodes.f1)
                .data()
                .iter()
                .zip(g.value(nodes.f2).data())
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            usize::from((d2.sqrt() < margin / 2.0) == same)
        }
        (_, Some(q)) => usize::from((argmax(g.value(q).data()) == 0) == same),
        _ => 0,
    };
    let grads = g.backward(loss)?.into_params();
    Ok((grads, stats))
}

/// Plain SGD with optional momentum and L2 weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    /// Velocity per parameter; empty until the first momentum step.
    pub velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    /// `w -= lr * (grad + wd * w)`, through a velocity buffer when momentum > 0.
    /// Parameters the graph never reached (`None` in `grads`) are left
    /// untouched, weight decay included.
    pub fn apply(&mut self, params: &mut ParamStore, grads: &ParamGrads, lr: f64) {
        if self.momentum > 0.0 && self.velocity.is_empty() {
            self.velocity = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        }
        for (idx, (_, t)) in params.iter_mut().enumerate() {
            let Some(grad) = grads.get(idx) else { continue };
            let wd = self.weight_decay;
            let data = t.data_mut();
            if self.momentum > 0.0 {
                let v = &mut self.velocity[idx];
                for ((w, g), vi) in data.iter_mut().zip(grad).zip(v.iter_mut()) {
                    *vi = self.momentum * *vi + g + wd * *w;
                    *w -= lr * *vi;
                }
            } else {
                for (w, g) in data.iter_mut().zip(grad) {
                    *w -= lr * (g + wd * *w);
                }
            }
        }
    }
}

/// Pairs per reduction chunk. Fixed so the summation order never depends on
/// the number of worker threads.
const CHUNK: usize = 4;

/// One update on the mean objective over the batch. Per-pair gradients are
/// computed in parallel and summed in ascending pair order.
pub fn sgd_step(
    model: &mut IdvModel,
    opt: &mut Sgd,
    batch: &PairBatch,
    cfg: &TrainConfig,
    lr: f64,
    rng: &Rng,
) -> Result<BatchMetrics> {
    let n = batch.len();
    let scale = 1.0 / n as f64;
    let m: &IdvModel = model;
    let chunks: Vec<Result<(ParamGrads, BatchMetrics)>> = (0..n)
        .collect::<Vec<_>>()
        .par_chunks(CHUNK)
        .map(|idxs| {
            let mut acc = ParamGrads::zeros_like(&m.params);
            let mut metrics = BatchMetrics::default();
            for &i in idxs {
                let (g, s) = pair_gradients(
                    m,
                    &batch.images1[i],
                    &batch.images2[i],
                    batch.t1[i],
                    batch.t2[i],
                    batch.same[i],
                    cfg.loss_mode,
                    cfg.weights,
                    cfg.margin,
                    scale,
                    true,
                    &rng.stream(&format!("pair/{i}")),
                )?;
                acc.add_scaled(&g, 1.0);
                metrics.add(&s);
            }
            Ok((acc, metrics))
        })
        .collect();

    let mut total = ParamGrads::zeros_like(&model.params);
    let mut metrics = BatchMetrics::default();
    for c in chunks {
        let (g, m) = c?;
        total.add_scaled(&g, 1.0);
        metrics.merge(&m);
    }
    model.params.zero_grad();
    total.accumulate_into(&mut model.params);
    opt.apply(&mut model.params, &total, lr);
    Ok(metrics)
}
