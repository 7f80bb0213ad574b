//! Training objectives: identity cross-entropy, pair verification
//! cross-entropy, the contrastive baseline and their weighted sum.

use std::fmt;
use std::str::FromStr;

use crate::autograd::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::model::{Heads, PairNodes};

/// Loss weights: 1 for verification and 0.5 for each identification loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub w_verif: f64,
    pub w_ident: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_verif: 1.0,
            w_ident: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.w_verif < 0.0 || self.w_ident < 0.0 || !self.w_verif.is_finite() || !self.w_ident.is_finite() {
            return Err(Error::Config(format!("loss weights must be finite and >= 0, got {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossMode {
    /// Two identification losses plus the verification loss.
    IdentVerif,
    Ident,
    Verif,
    /// Identification losses plus the contrastive loss in place of verification.
    Contrastive,
}

impl LossMode {
    pub fn heads(self) -> Heads {
        match self {
            LossMode::IdentVerif => Heads::ALL,
            LossMode::Ident | LossMode::Contrastive => Heads { ident: true, verif: false },
            LossMode::Verif => Heads { ident: false, verif: true },
        }
    }
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossMode::IdentVerif => "I+V",
            LossMode::Ident => "I",
            LossMode::Verif => "V",
            LossMode::Contrastive => "contrastive",
        })
    }
}

impl FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "I+V" | "i+v" => Ok(LossMode::IdentVerif),
            "I" | "i" => Ok(LossMode::Ident),
            "V" | "v" => Ok(LossMode::Verif),
            "contrastive" => Ok(LossMode::Contrastive),
            _ => Err(Error::Config(format!("unknown loss mode `{s}` (I+V|I|V|contrastive)"))),
        }
    }
}

/// `-ln p[t]`.
pub fn identification_loss(p: &[f64], t: usize) -> Result<f64> {
    if t >= p.len() {
        return Err(Error::InvalidArgument(format!("identity {t} out of range for K = {}", p.len())));
    }
    Ok(-p[t].ln())
}

/// `-ln q[0]` for a same-identity pair, `-ln q[1]` otherwise.
pub fn verification_loss(q: &[f64], same: bool) -> Result<f64> {
    if q.len() != 2 {
        return Err(Error::InvalidArgument(format!("verification output must have 2 entries, got {}", q.len())));
    }
    Ok(-q[if same { 0 } else { 1 }].ln())
}

/// `d^2` for same pairs and `max(0, m - d)^2` for different pairs, `d = ||f1 - f2||`.
pub fn contrastive_loss(f1: &[f64], f2: &[f64], same: bool, margin: f64) -> Result<f64> {
    if f1.len() != f2.len() {
        return Err(Error::shape("contrastive", format!("{} vs {}", f1.len(), f2.len())));
    }
    if margin <= 0.0 {
        return Err(Error::InvalidArgument(format!("margin {margin} must be > 0")));
    }
    let d2: f64 = f1.iter().zip(f2).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(if same {
        d2
    } else {
        (margin - d2.sqrt()).max(0.0).powi(2)
    })
}

/// Unweighted per-pair loss terms recorded on a graph.
#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub ident1: Option<NodeId>,
    pub ident2: Option<NodeId>,
    /// Verification cross-entropy, or the contrastive loss in contrastive mode.
    pub verif: Option<NodeId>,
}

pub fn loss_terms(
    g: &mut Graph,
    pair: &PairNodes,
    t1: usize,
    t2: usize,
    same: bool,
    mode: LossMode,
    margin: f64,
) -> Result<LossNodes> {
    let mut out = LossNodes {
        ident1: None,
        ident2: None,
        verif: None,
    };
    if let (Some(p1), Some(p2)) = (pair.p1, pair.p2) {
        out.ident1 = Some(g.neg_log(p1, t1)?);
        out.ident2 = Some(g.neg_log(p2, t2)?);
    }
    match mode {
        LossMode::Contrastive => {
            // raw embeddings: dropout is not applied in front of a regression loss
            out.verif = Some(g.contrastive(pair.f1, pair.f2, same, margin)?);
        }
        _ => {
            if let Some(q) = pair.q {
                out.verif = Some(g.neg_log(q, if same { 0 } else { 1 })?);
            }
        }
    }
    Ok(out)
}

/// `w_verif * verif + w_ident * ident1 + w_ident * ident2`, over whichever
/// terms are present.
pub fn combined_objective(g: &mut Graph, terms: &LossNodes, weights: LossWeights) -> Result<NodeId> {
    let mut parts = Vec::with_capacity(3);
    if let Some(v) = terms.verif {
        parts.push(g.scale(v, weights.w_verif));
    }
    for id in [terms.ident1, terms.ident2].into_iter().flatten() {
        parts.push(g.scale(id, weights.w_ident));
    }
    let mut acc = *parts
        .first()
        .ok_or_else(|| Error::InvalidArgument("objective has no loss terms".into()))?;
    for &p in &parts[1..] {
        acc = g.add(acc, p)?;
    }
    Ok(acc)
}

/// Effective weights for a loss mode: the unused heads get weight zero.
pub fn mode_weights(mode: LossMode, weights: LossWeights) -> LossWeights {
    match mode {
        LossMode::IdentVerif | LossMode::Contrastive => weights,
        LossMode::Ident => LossWeights { w_verif: 0.0, ..weights },
        LossMode::Verif => LossWeights { w_ident: 0.0, ..weights },
    }
}
