//! Annealed positive/negative pair sampling.

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Negative:positive ratio for an epoch: starts at 1 and grows by 1% per
/// epoch, capped at 4.
pub fn ratio_at_epoch(epoch: usize) -> f64 {
    if epoch >= 140 {
        // 1.01^140 > 4 already
        return 4.0;
    }
    1.01f64.powi(epoch as i32).min(4.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairIndex {
    /// Index into the training image list.
    pub anchor: usize,
    pub partner: usize,
    pub t1: usize,
    pub t2: usize,
    pub same: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochPairs {
    pub batches: Vec<Vec<PairIndex>>,
    /// Anchors drawn as positives whose identity has a single image and were
    /// re-drawn as negatives.
    pub forced_negatives: usize,
}

impl EpochPairs {
    pub fn pairs(&self) -> impl Iterator<Item = &PairIndex> {
        self.batches.iter().flatten()
    }
}

/// One epoch of pairs: every training image is an anchor exactly once, in
/// shuffled order. `labels[i]` is the identity of image `i`.
pub fn sample_pairs(labels: &[usize], epoch: usize, batch_size: usize, rng: &Rng) -> Result<EpochPairs> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be >= 1".into()));
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut by_id: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &t) in labels.iter().enumerate() {
        by_id[t].push(i);
    }
    let present: Vec<usize> = (0..k).filter(|&t| !by_id[t].is_empty()).collect();
    if present.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "pair sampling needs >= 2 identities, found {}",
            present.len()
        )));
    }

    let mut rng = rng.stream(&format!("epoch/{epoch}/pairs"));
    let r = ratio_at_epoch(epoch);
    let p_neg = r / (1.0 + r);
    let mut order: Vec<usize> = (0..labels.len()).collect();
    rng.shuffle(&mut order);

    let mut forced = 0;
    let mut pairs = Vec::with_capacity(order.len());
    for anchor in order {
        let t1 = labels[anchor];
        let mut negative = rng.uniform() < p_neg;
        if !negative && by_id[t1].len() < 2 {
            forced += 1;
            negative = true;
        }
        let partner = if negative {
            let mut j = rng.below(present.len() - 1);
            // skip the anchor's own identity
            if present[j] >= t1 {
                j += 1;
            }
            let imgs = &by_id[present[j]];
            imgs[rng.below(imgs.len())]
        } else {
            let imgs = &by_id[t1];
            let pos = imgs.iter().position(|&i| i == anchor).expect("anchor in its identity");
            let mut j = rng.below(imgs.len() - 1);
            if j >= pos {
                j += 1;
            }
            imgs[j]
        };
        let t2 = labels[partner];
        pairs.push(PairIndex {
            anchor,
            partner,
            t1,
            t2,
            same: t1 == t2,
        });
    }
    if forced > 0 {
        log::warn!("epoch {epoch}: {forced} anchor(s) from single-image identities re-drawn as negatives");
    }
    Ok(EpochPairs {
        batches: pairs.chunks(batch_size).map(<[PairIndex]>::to_vec).collect(),
        forced_negatives: forced,
    })
}
