use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::eval::DescriptorSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relevance {
    Relevant,
    Irrelevant,
    /// Removed from the list before scoring; does not consume a rank.
    Ignored,
}

/// Per-query gallery order, best first, with the matching scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    pub order: Vec<usize>,
    pub scores: Vec<f64>,
}

/// Sorts the gallery by descending inner product for every query; equal
/// scores keep ascending gallery index.
pub fn rank(query: &DescriptorSet, gallery: &DescriptorSet) -> Result<Vec<Ranking>> {
    if query.dim != gallery.dim {
        return Err(Error::Descriptor(format!(
            "dimension mismatch: query {} vs gallery {}",
            query.dim, gallery.dim
        )));
    }
    Ok((0..query.len())
        .into_par_iter()
        .map(|q| {
            let qv = query.row(q);
            let sims: Vec<f64> = (0..gallery.len())
                .map(|g| qv.iter().zip(gallery.row(g)).map(|(a, b)| a * b).sum())
                .collect();
            let mut order: Vec<usize> = (0..gallery.len()).collect();
            order.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]).then(a.cmp(&b)));
            let scores = order.iter().map(|&g| sims[g]).collect();
            Ranking { order, scores }
        })
        .collect())
}

/// Mean of precision at each relevant hit, over `num_relevant` relevant
/// items. `None` when there is nothing relevant to find.
pub fn average_precision(ranked: &[Relevance], num_relevant: usize) -> Option<f64> {
    if num_relevant == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut pos = 0usize;
    let mut sum = 0.0;
    for r in ranked {
        match r {
            Relevance::Ignored => continue,
            Relevance::Relevant => {
                pos += 1;
                hits += 1;
                sum += hits as f64 / pos as f64;
            }
            Relevance::Irrelevant => pos += 1,
        }
    }
    Some(sum / num_relevant as f64)
}

/// 0-based rank of the first relevant item after dropping ignored ones.
pub fn first_hit(ranked: &[Relevance]) -> Option<usize> {
    ranked
        .iter()
        .filter(|r| **r != Relevance::Ignored)
        .position(|r| *r == Relevance::Relevant)
}

/// `cmc[k]` = fraction of queries whose first hit is at rank `<= k` (0-based).
pub fn cmc_from_first_hits(first_hits: &[usize], max_rank: usize) -> Vec<f64> {
    let mut counts = vec![0usize; max_rank];
    for &h in first_hits {
        if h < max_rank {
            counts[h] += 1;
        }
    }
    let n = first_hits.len().max(1) as f64;
    let mut acc = 0;
    counts
        .into_iter()
        .map(|c| {
            acc += c;
            acc as f64 / n
        })
        .collect()
}
