//! Evaluation protocols over a query set and a gallery set.
//!
//! All protocols share the same scoring core: per query, every gallery
//! entry is labelled relevant, irrelevant or ignored, and AP/CMC follow.
//! Gallery entries that are not part of a query's gallery under a given
//! protocol are simply ignored.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use super::descriptors::DescriptorSet;
use super::metrics::{average_precision, cmc_from_first_hits, first_hit, rank, Ranking, Relevance};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    SingleQuery,
    SingleShot,
    MultiShot,
    CameraMatrix,
    DistractorSweep,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::SingleQuery => "single-query",
            Protocol::SingleShot => "single-shot",
            Protocol::MultiShot => "multi-shot",
            Protocol::CameraMatrix => "camera-matrix",
            Protocol::DistractorSweep => "distractor-sweep",
        })
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single-query" => Ok(Protocol::SingleQuery),
            "single-shot" => Ok(Protocol::SingleShot),
            "multi-shot" => Ok(Protocol::MultiShot),
            "camera-matrix" => Ok(Protocol::CameraMatrix),
            "distractor-sweep" => Ok(Protocol::DistractorSweep),
            _ => Err(Error::Protocol(format!("unknown protocol `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    /// CMC length; `None` means the full gallery.
    pub max_rank: Option<usize>,
    /// Single-shot repetitions.
    pub trials: usize,
    pub seed: u64,
    /// Single-shot identity cap.
    pub max_identities: usize,
    /// Total gallery sizes for the distractor sweep.
    pub sizes: Vec<usize>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            max_rank: None,
            trials: 20,
            seed: 0,
            max_identities: 100,
            sizes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraCell {
    pub probe: u32,
    pub gallery: u32,
    pub num_queries: usize,
    /// `None` when no probe in this cell has a match under that gallery camera.
    pub rank1: Option<f64>,
    pub map: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub gallery_size: usize,
    pub num_distractors: usize,
    pub rank1: f64,
    pub map: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub cmc: Vec<f64>,
    pub map: f64,
    /// Aligned with the query set; `None` for excluded queries.
    pub per_query_ap: Vec<Option<f64>>,
    pub excluded_queries: usize,
    pub trials: Option<(usize, u64)>,
    pub camera_matrix: Option<Vec<CameraCell>>,
    /// Mean (rank-1, mAP) over off-diagonal camera cells.
    pub camera_average: Option<(f64, f64)>,
    pub gallery_sweep: Option<Vec<SweepPoint>>,
}

impl EvalReport {
    pub fn rank1(&self) -> f64 {
        self.cmc.first().copied().unwrap_or(0.0)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "protocol: {}", self.protocol);
        let valid = self.per_query_ap.len() - self.excluded_queries;
        let _ = writeln!(s, "queries: {} ({} excluded: no relevant gallery entry)", valid, self.excluded_queries);
        if let Some((t, seed)) = self.trials {
            let _ = writeln!(s, "trials: {t} (seed {seed})");
        }
        let _ = writeln!(s, "mAP: {:.4}", self.map);
        for k in [1usize, 5, 10, 20] {
            if let Some(v) = self.cmc.get(k - 1) {
                let _ = writeln!(s, "rank-{k}: {v:.4}");
            }
        }
        if let Some(cells) = &self.camera_matrix {
            let _ = writeln!(s, "camera pairs (probe -> gallery): rank-1 / mAP / queries");
            for c in cells {
                let f = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
                let _ = writeln!(s, "  {} -> {}: {} / {} / {}", c.probe, c.gallery, f(c.rank1), f(c.map), c.num_queries);
            }
            if let Some((r1, m)) = self.camera_average {
                let _ = writeln!(s, "cross-camera average: rank-1 {r1:.4} mAP {m:.4}");
            }
        }
        if let Some(sweep) = &self.gallery_sweep {
            let _ = writeln!(s, "gallery sweep: size, distractors, rank-1, mAP");
            for p in sweep {
                let _ = writeln!(s, "  {}, {}, {:.4}, {:.4}", p.gallery_size, p.num_distractors, p.rank1, p.map);
            }
        }
        s
    }

    /// `query,path,identity,camera,ap` with an empty `ap` for excluded queries.
    pub fn per_query_csv(&self, query: &DescriptorSet) -> String {
        let mut s = String::from("query,path,identity,camera,ap\n");
        for (i, ap) in self.per_query_ap.iter().enumerate() {
            let q = &query.samples[i];
            let ap = ap.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(s, "{i},{},{},{},{ap}", q.path.display(), q.identity, q.camera);
        }
        s
    }
}

/// Per-query outcome under one gallery definition.
struct Scored {
    ap: Vec<Option<f64>>,
    first: Vec<Option<usize>>,
}

impl Scored {
    fn map(&self) -> Option<f64> {
        let v: Vec<f64> = self.ap.iter().flatten().copied().collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    fn first_hits(&self) -> Vec<usize> {
        self.first.iter().flatten().copied().collect()
    }

    fn rank1(&self) -> Option<f64> {
        let hits = self.first_hits();
        (!hits.is_empty()).then(|| hits.iter().filter(|&&h| h == 0).count() as f64 / hits.len() as f64)
    }
}

fn score<F>(rankings: &[Ranking], queries: &[usize], relevance: F) -> Scored
where
    F: Fn(usize, usize) -> Relevance,
{
    let mut ap = vec![None; rankings.len()];
    let mut first = vec![None; rankings.len()];
    for &q in queries {
        let flags: Vec<Relevance> = rankings[q].order.iter().map(|&g| relevance(q, g)).collect();
        let n_rel = flags.iter().filter(|r| **r == Relevance::Relevant).count();
        ap[q] = average_precision(&flags, n_rel);
        if ap[q].is_some() {
            first[q] = first_hit(&flags);
        }
    }
    Scored { ap, first }
}

/// Standard re-id relevance: distractors are negatives, same identity under
/// the same camera is ignored.
fn single_query_relevance(query: &DescriptorSet, gallery: &DescriptorSet, q: usize, g: usize) -> Relevance {
    let (qs, gs) = (&query.samples[q], &gallery.samples[g]);
    if gs.distractor || qs.identity != gs.identity {
        Relevance::Irrelevant
    } else if qs.camera == gs.camera {
        Relevance::Ignored
    } else {
        Relevance::Relevant
    }
}

fn cameras(set: &DescriptorSet) -> BTreeSet<u32> {
    set.samples.iter().map(|s| s.camera).collect()
}

fn cmc_len(opts: &EvalOptions, gallery: usize) -> usize {
    opts.max_rank.map_or(gallery, |k| k.min(gallery)).max(1)
}

fn report_from(protocol: Protocol, scored: &Scored, max_rank: usize) -> Result<EvalReport> {
    let map = scored
        .map()
        .ok_or_else(|| Error::Protocol("no query has a relevant gallery entry".into()))?;
    let excluded = scored.ap.iter().filter(|a| a.is_none()).count();
    Ok(EvalReport {
        protocol,
        cmc: cmc_from_first_hits(&scored.first_hits(), max_rank),
        map,
        per_query_ap: scored.ap.clone(),
        excluded_queries: excluded,
        trials: None,
        camera_matrix: None,
        camera_average: None,
        gallery_sweep: None,
    })
}

/// Runs `protocol`; both sets should be L2-normalised descriptors of the
/// query and gallery splits.
pub fn evaluate(
    query: &DescriptorSet,
    gallery: &DescriptorSet,
    protocol: Protocol,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if query.is_empty() || gallery.is_empty() {
        return Err(Error::Protocol("query and gallery sets must be non-empty".into()));
    }
    let rankings = rank(query, gallery)?;
    let all_q: Vec<usize> = (0..query.len()).collect();
    let sq = |q: usize, g: usize| single_query_relevance(query, gallery, q, g);
    let max_rank = cmc_len(opts, gallery.len());

    match protocol {
        Protocol::SingleQuery => report_from(protocol, &score(&rankings, &all_q, sq), max_rank),
        Protocol::MultiShot => {
            require_two_cameras(query, gallery, protocol)?;
            let rel = |q: usize, g: usize| {
                if gallery.samples[g].camera == query.samples[q].camera {
                    Relevance::Ignored
                } else {
                    sq(q, g)
                }
            };
            report_from(protocol, &score(&rankings, &all_q, rel), max_rank)
        }
        Protocol::SingleShot => single_shot(query, gallery, &rankings, opts, max_rank),
        Protocol::CameraMatrix => {
            require_two_cameras(query, gallery, protocol)?;
            let mut report = report_from(protocol, &score(&rankings, &all_q, sq), max_rank)?;
            let cams: BTreeSet<u32> = cameras(query).union(&cameras(gallery)).copied().collect();
            let mut cells = Vec::new();
            for &p in &cams {
                let probes: Vec<usize> = all_q.iter().copied().filter(|&q| query.samples[q].camera == p).collect();
                for &c in cams.iter().filter(|&&c| c != p) {
                    let rel = |q: usize, g: usize| {
                        if gallery.samples[g].camera == c {
                            sq(q, g)
                        } else {
                            Relevance::Ignored
                        }
                    };
                    let s = score(&rankings, &probes, rel);
                    cells.push(CameraCell {
                        probe: p,
                        gallery: c,
                        num_queries: s.ap.iter().flatten().count(),
                        rank1: s.rank1(),
                        map: s.map(),
                    });
                }
            }
            let valid: Vec<&CameraCell> = cells.iter().filter(|c| c.map.is_some()).collect();
            if !valid.is_empty() {
                let n = valid.len() as f64;
                report.camera_average = Some((
                    valid.iter().map(|c| c.rank1.unwrap_or(0.0)).sum::<f64>() / n,
                    valid.iter().map(|c| c.map.unwrap_or(0.0)).sum::<f64>() / n,
                ));
            }
            report.camera_matrix = Some(cells);
            Ok(report)
        }
        Protocol::DistractorSweep => {
            let base: Vec<usize> = (0..gallery.len()).filter(|&g| !gallery.samples[g].distractor).collect();
            let distractors: Vec<usize> = (0..gallery.len()).filter(|&g| gallery.samples[g].distractor).collect();
            if opts.sizes.is_empty() {
                return Err(Error::Protocol("distractor sweep needs at least one gallery size".into()));
            }
            let mut points = Vec::new();
            for &size in &opts.sizes {
                if size < base.len() || size - base.len() > distractors.len() {
                    return Err(Error::Protocol(format!(
                        "gallery size {size} outside {}..={} (base gallery + available distractors)",
                        base.len(),
                        base.len() + distractors.len()
                    )));
                }
                let m = size - base.len();
                let included: BTreeSet<usize> = base.iter().chain(&distractors[..m]).copied().collect();
                let rel = |q: usize, g: usize| {
                    if included.contains(&g) {
                        sq(q, g)
                    } else {
                        Relevance::Ignored
                    }
                };
                let s = score(&rankings, &all_q, rel);
                points.push(SweepPoint {
                    gallery_size: size,
                    num_distractors: m,
                    rank1: s.rank1().unwrap_or(0.0),
                    map: s.map().unwrap_or(0.0),
                });
            }
            let mut report = report_from(protocol, &score(&rankings, &all_q, sq), max_rank)?;
            report.gallery_sweep = Some(points);
            Ok(report)
        }
    }
}

fn require_two_cameras(query: &DescriptorSet, gallery: &DescriptorSet, protocol: Protocol) -> Result<()> {
    let cams: BTreeSet<u32> = cameras(query).union(&cameras(gallery)).copied().collect();
    if cams.len() < 2 {
        return Err(Error::Protocol(format!("{protocol} needs at least two cameras, found {}", cams.len())));
    }
    Ok(())
}

/// Per trial: draw up to `max_identities` query identities, then for each of
/// them and each gallery camera keep one random gallery image. A query's
/// gallery is the kept images from cameras other than its own.
fn single_shot(
    query: &DescriptorSet,
    gallery: &DescriptorSet,
    rankings: &[Ranking],
    opts: &EvalOptions,
    max_rank: usize,
) -> Result<EvalReport> {
    require_two_cameras(query, gallery, Protocol::SingleShot)?;
    if opts.trials == 0 {
        return Err(Error::Protocol("single-shot needs at least one trial".into()));
    }
    let ids: Vec<i64> = query
        .samples
        .iter()
        .filter(|s| !s.distractor)
        .map(|s| s.identity)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut by_id_cam: BTreeMap<(i64, u32), Vec<usize>> = BTreeMap::new();
    for (g, s) in gallery.samples.iter().enumerate() {
        if !s.distractor {
            by_id_cam.entry((s.identity, s.camera)).or_default().push(g);
        }
    }

    let root = Rng::new(opts.seed);
    let nq = query.len();
    let mut ap_sum = vec![0.0; nq];
    let mut ap_count = vec![0usize; nq];
    let mut cmc_sum = vec![0.0; max_rank];
    let mut map_sum = 0.0;
    let mut used_trials = 0usize;
    for t in 0..opts.trials {
        let mut rng = root.stream(&format!("single-shot/trial/{t}"));
        let mut chosen = ids.clone();
        rng.shuffle(&mut chosen);
        chosen.truncate(opts.max_identities.min(ids.len()));
        chosen.sort_unstable();
        let mut kept = vec![false; gallery.len()];
        for (&(id, _), imgs) in &by_id_cam {
            if chosen.binary_search(&id).is_ok() {
                kept[imgs[rng.below(imgs.len())]] = true;
            }
        }
        let queries: Vec<usize> = (0..nq)
            .filter(|&q| chosen.binary_search(&query.samples[q].identity).is_ok())
            .collect();
        let rel = |q: usize, g: usize| {
            let (qs, gs) = (&query.samples[q], &gallery.samples[g]);
            if !kept[g] || gs.camera == qs.camera {
                Relevance::Ignored
            } else if gs.identity == qs.identity {
                Relevance::Relevant
            } else {
                Relevance::Irrelevant
            }
        };
        let s = score(rankings, &queries, rel);
        let Some(m) = s.map() else { continue };
        used_trials += 1;
        map_sum += m;
        for (acc, v) in cmc_sum.iter_mut().zip(cmc_from_first_hits(&s.first_hits(), max_rank)) {
            *acc += v;
        }
        for (q, ap) in s.ap.iter().enumerate() {
            if let Some(ap) = ap {
                ap_sum[q] += ap;
                ap_count[q] += 1;
            }
        }
    }
    if used_trials == 0 {
        return Err(Error::Protocol("single-shot: no query has a match under another camera".into()));
    }
    let n = used_trials as f64;
    let per_query_ap: Vec<Option<f64>> = ap_sum
        .iter()
        .zip(&ap_count)
        .map(|(s, &c)| (c > 0).then(|| s / c as f64))
        .collect();
    Ok(EvalReport {
        protocol: Protocol::SingleShot,
        cmc: cmc_sum.iter().map(|v| v / n).collect(),
        map: map_sum / n,
        excluded_queries: per_query_ap.iter().filter(|a| a.is_none()).count(),
        per_query_ap,
        trials: Some((opts.trials, opts.seed)),
        camera_matrix: None,
        camera_average: None,
        gallery_sweep: None,
    })
}
