//! The epoch loop.

use std::path::PathBuf;

use super::checkpoint::{save_checkpoint, Checkpoint, ParamRecord};
use super::lr_at_epoch;
use super::sgd::{sgd_step, BatchMetrics, PairBatch, Sgd};
use crate::config::RunConfig;
use crate::data::{augment, ratio_at_epoch, sample_pairs, AugmentConfig, Manifest, PairIndex, Preprocessor, Split};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::model::IdvModel;
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const LOG_HEADER: &str = "epoch,lr,neg_ratio,loss_total,loss_verif,loss_id,acc_id,acc_verif";
const MEAN_IMAGE: &str = "input.mean_image";
const VELOCITY_PREFIX: &str = "optim.velocity.";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: u32,
    pub lr: f64,
    pub neg_ratio: f64,
    pub loss_total: f64,
    pub loss_verif: f64,
    pub loss_id: f64,
    pub acc_id: f64,
    pub acc_verif: f64,
}

impl EpochLog {
    pub(crate) fn values(&self) -> [f64; 7] {
        [
            self.lr,
            self.neg_ratio,
            self.loss_total,
            self.loss_verif,
            self.loss_id,
            self.acc_id,
            self.acc_verif,
        ]
    }

    pub(crate) fn from_values(epoch: u32, v: [f64; 7]) -> Self {
        Self {
            epoch,
            lr: v[0],
            neg_ratio: v[1],
            loss_total: v[2],
            loss_verif: v[3],
            loss_id: v[4],
            acc_id: v[5],
            acc_verif: v[6],
        }
    }

    pub fn csv_row(&self) -> String {
        let v = self.values();
        format!(
            "{},{},{},{},{},{},{},{}",
            self.epoch, v[0], v[1], v[2], v[3], v[4], v[5], v[6]
        )
    }
}

/// Preprocessed training images (resized, mean-subtracted, scaled) with labels.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub images: Vec<Tensor>,
    pub labels: Vec<usize>,
}

impl TrainData {
    pub fn load(manifest: &Manifest, pre: &Preprocessor) -> Result<Self> {
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for s in manifest.samples.iter().filter(|s| s.split == Split::Train) {
            images.push(pre.load(&manifest.resolve(s))?);
            labels.push(s.label.expect("train samples carry labels"));
        }
        Ok(Self { images, labels })
    }
}

/// Crops and mirrors the images of one batch. Each image draws from its own
/// stream, so the result does not depend on scheduling.
pub fn assemble_batch(data: &TrainData, pairs: &[PairIndex], cfg: &AugmentConfig, rng: &Rng) -> Result<PairBatch> {
    let mut b = PairBatch::default();
    for (i, p) in pairs.iter().enumerate() {
        let mut r1 = rng.stream(&format!("aug/{i}/1"));
        let mut r2 = rng.stream(&format!("aug/{i}/2"));
        b.images1.push(augment(&data.images[p.anchor], cfg, true, &mut r1)?);
        b.images2.push(augment(&data.images[p.partner], cfg, true, &mut r2)?);
        b.t1.push(p.t1);
        b.t2.push(p.t2);
        b.same.push(p.same);
    }
    Ok(b)
}

/// Everything a run needs to continue: config, weights, optimiser state,
/// input normalisation and progress.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub run: RunConfig,
    pub model: IdvModel,
    pub opt: Sgd,
    pub pre: Preprocessor,
    pub epoch: usize,
    pub history: Vec<EpochLog>,
}

fn round_f32(values: &mut [f64]) {
    values.iter_mut().for_each(|v| *v = f64::from(*v as f32));
}

fn record(name: &str, shape: &[usize], data: &[f64]) -> ParamRecord {
    ParamRecord {
        name: name.to_string(),
        shape: shape.to_vec(),
        data: data.iter().map(|&v| v as f32).collect(),
    }
}

impl TrainState {
    /// Fresh state; `num_identities` is taken from the manifest.
    pub fn new(run: &RunConfig, manifest: &Manifest) -> Result<Self> {
        let mut run = run.clone();
        run.model.num_identities = manifest.num_identities();
        run.validate()?;
        let pre = Preprocessor::fit(manifest, run.augment.clone())?;
        let model = IdvModel::init(run.model.clone(), &Rng::new(run.train.seed).stream("init"))?;
        let opt = Sgd::new(run.train.momentum, run.train.weight_decay);
        Ok(Self {
            run,
            model,
            opt,
            pre,
            epoch: 0,
            history: Vec::new(),
        })
    }

    /// Rounds all stored state to `f32`, the checkpoint precision, so that a
    /// run resumed from the checkpoint continues from identical values.
    pub fn round_to_checkpoint_precision(&mut self) {
        for (_, t) in self.model.params.iter_mut() {
            round_f32(t.data_mut());
        }
        for v in &mut self.opt.velocity {
            round_f32(v);
        }
        round_f32(self.pre.mean.data_mut());
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut records: Vec<ParamRecord> = self
            .model
            .params
            .iter()
            .map(|(n, t)| record(n, t.shape(), t.data()))
            .collect();
        for ((n, t), v) in self.model.params.iter().zip(&self.opt.velocity) {
            records.push(record(&format!("{VELOCITY_PREFIX}{n}"), t.shape(), v));
        }
        records.push(record(MEAN_IMAGE, self.pre.mean.shape(), self.pre.mean.data()));
        Checkpoint {
            config_text: self.run.to_text(),
            seed: self.run.train.seed,
            epoch: self.epoch as u32,
            history: self.history.clone(),
            records,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let run = RunConfig::parse(&ckpt.config_text)?;
        run.validate()?;
        if run.train.seed != ckpt.seed {
            return Err(Error::Checkpoint(format!(
                "rng seed {} disagrees with config seed {}",
                ckpt.seed, run.train.seed
            )));
        }
        let mut model = IdvModel::init(run.model.clone(), &Rng::new(0))?;
        let load = |rec: &ParamRecord, expect: &[usize]| -> Result<Vec<f64>> {
            if rec.shape != expect {
                return Err(Error::Checkpoint(format!(
                    "`{}` has shape {:?}, model expects {expect:?}",
                    rec.name, rec.shape
                )));
            }
            Ok(rec.data.iter().map(|&v| f64::from(v)).collect())
        };
        let names: Vec<String> = model.params.names().map(str::to_string).collect();
        let mut velocity = Vec::new();
        for name in &names {
            let t = model.params.get_mut(name).expect("own name");
            let rec = ckpt
                .record(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
            let data = load(rec, t.shape())?;
            t.data_mut().copy_from_slice(&data);
            if let Some(v) = ckpt.record(&format!("{VELOCITY_PREFIX}{name}")) {
                velocity.push(load(v, t.shape())?);
            }
        }
        if !velocity.is_empty() && velocity.len() != names.len() {
            return Err(Error::Checkpoint("incomplete optimiser state".into()));
        }
        let a = &run.augment;
        let mean_rec = ckpt
            .record(MEAN_IMAGE)
            .ok_or_else(|| Error::Checkpoint("missing mean image".into()))?;
        let mean_shape = [run.model.input_channels, a.resize_to, a.resize_to];
        let mean = Tensor::new(mean_shape.to_vec(), load(mean_rec, &mean_shape)?)?;
        let mut opt = Sgd::new(run.train.momentum, run.train.weight_decay);
        opt.velocity = velocity;
        Ok(Self {
            pre: Preprocessor {
                cfg: run.augment.clone(),
                mean,
            },
            run,
            model,
            opt,
            epoch: ckpt.epoch as usize,
            history: ckpt.history.clone(),
        })
    }

    pub fn log_csv(&self) -> String {
        let mut s = format!("{LOG_HEADER}\n");
        for row in &self.history {
            s.push_str(&row.csv_row());
            s.push('\n');
        }
        s
    }

    /// Runs one epoch and appends its log row.
    pub fn run_epoch(&mut self, data: &TrainData) -> Result<EpochLog> {
        let cfg = &self.run.train;
        let e = self.epoch;
        let lr = lr_at_epoch(cfg, e)?;
        let root = Rng::new(cfg.seed);
        let pairs = sample_pairs(&data.labels, e, cfg.batch_size, &root)?;
        let mut total = BatchMetrics::default();
        for (b, batch_pairs) in pairs.batches.iter().enumerate() {
            let brng = root.stream(&format!("epoch/{e}/batch/{b}"));
            let batch = assemble_batch(data, batch_pairs, &self.pre.cfg, &brng)?;
            let m = sgd_step(&mut self.model, &mut self.opt, &batch, cfg, lr, &brng)?;
            total.merge(&m);
        }
        let n = total.pairs.max(1) as f64;
        let row = EpochLog {
            epoch: e as u32,
            lr,
            neg_ratio: ratio_at_epoch(e),
            loss_total: total.loss_total / n,
            loss_verif: total.loss_verif / n,
            loss_id: total.loss_id / n,
            acc_id: total.acc_id(),
            acc_verif: total.acc_verif(),
        };
        self.history.push(row);
        self.epoch += 1;
        Ok(row)
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Where checkpoints and `train_log.csv` go; nothing is written if unset.
    pub out_dir: Option<PathBuf>,
}

pub fn checkpoint_name(epoch: usize) -> String {
    format!("checkpoint_epoch{epoch:04}.idvc")
}

/// Trains from `state.epoch` to `max_epochs`. Every `checkpoint_every`
/// epochs, and at the end, the state is rounded to checkpoint precision and
/// (if an output directory is set) written out. Returns the final checkpoint.
pub fn train(state: &mut TrainState, data: &TrainData, opts: &TrainOptions) -> Result<Checkpoint> {
    let body = |state: &mut TrainState| -> Result<Checkpoint> {
        if let Some(dir) = &opts.out_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let max = state.run.train.max_epochs;
        let every = state.run.train.checkpoint_every;
        let mut last = None;
        while state.epoch < max {
            let row = state.run_epoch(data)?;
            log::info!(
                "epoch {:>4} lr {:.0e} ratio {:.3} loss {:.4} (verif {:.4} id {:.4}) acc_id {:.3} acc_verif {:.3}",
                row.epoch, row.lr, row.neg_ratio, row.loss_total, row.loss_verif, row.loss_id, row.acc_id, row.acc_verif
            );
            let done = state.epoch;
            if (every > 0 && done % every == 0) || done == max {
                state.round_to_checkpoint_precision();
                let ckpt = state.to_checkpoint();
                if let Some(dir) = &opts.out_dir {
                    save_checkpoint(&ckpt, &dir.join(checkpoint_name(done)))?;
                    if done == max {
                        save_checkpoint(&ckpt, &dir.join("final.idvc"))?;
                    }
                    fsutil::write_atomic(&dir.join("train_log.csv"), state.log_csv().as_bytes())?;
                }
                last = Some(ckpt);
            }
        }
        Ok(last.unwrap_or_else(|| state.to_checkpoint()))
    };
    match state.run.workers {
        0 => body(state),
        n => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?
            .install(|| body(state)),
    }
}

/// Eval-mode fit on the training set: identification accuracy over every
/// training image (centre crop) and verification accuracy over one epoch of
/// 1:1 sampled pairs.
pub fn fit_accuracy(model: &IdvModel, data: &TrainData, cfg: &AugmentConfig, rng: &Rng) -> Result<(f64, f64)> {
    use rayon::prelude::*;
    let crops: Vec<Tensor> = data
        .images
        .iter()
        .map(|img| augment(img, cfg, false, &mut Rng::new(0)))
        .collect::<Result<_>>()?;
    let hits: Vec<bool> = crops
        .par_iter()
        .zip(&data.labels)
        .map(|(x, &t)| {
            let p = model.identify(x)?;
            let best = (0..p.len()).fold(0, |b, i| if p[i] > p[b] { i } else { b });
            Ok(best == t)
        })
        .collect::<Result<_>>()?;
    let acc_id = hits.iter().filter(|&&h| h).count() as f64 / hits.len().max(1) as f64;

    let pairs = sample_pairs(&data.labels, 0, usize::MAX, rng)?;
    let pv: Vec<PairIndex> = pairs.pairs().copied().collect();
    let verdicts: Vec<bool> = pv
        .par_iter()
        .map(|p| {
            let out = model.forward_pair(&crops[p.anchor], &crops[p.partner], false, [&mut Rng::new(0), &mut Rng::new(0)])?;
            Ok((out.q[0] > out.q[1]) == p.same)
        })
        .collect::<Result<_>>()?;
    let acc_v = verdicts.iter().filter(|&&h| h).count() as f64 / verdicts.len().max(1) as f64;
    Ok((acc_id, acc_v))
}

