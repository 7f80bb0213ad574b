use std::path::Path;

use rayon::prelude::*;

use crate::data::{Manifest, Preprocessor, Sample};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::model::IdvModel;
use crate::rng::Rng;

pub const MAGIC: &[u8; 4] = b"IDVD";
pub const VERSION: u32 = 1;

/// `N x D` descriptor matrix aligned with the samples it was extracted from.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet {
    pub dim: usize,
    pub data: Vec<f64>,
    pub samples: Vec<Sample>,
    pub normalized: bool,
}

impl DescriptorSet {
    pub fn new(dim: usize, data: Vec<f64>, samples: Vec<Sample>) -> Result<Self> {
        if dim == 0 || data.len() != dim * samples.len() {
            return Err(Error::Descriptor(format!(
                "{} values do not form {} rows of dimension {dim}",
                data.len(),
                samples.len()
            )));
        }
        Ok(Self {
            dim,
            data,
            samples,
            normalized: false,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Rows `idx` (in that order) as a new set.
    pub fn select(&self, idx: &[usize]) -> DescriptorSet {
        DescriptorSet {
            dim: self.dim,
            data: idx.iter().flat_map(|&i| self.row(i).iter().copied()).collect(),
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
            normalized: self.normalized,
        }
    }
}

/// Single-branch, eval-mode descriptors for `samples` (centre crop, mean
/// subtracted). Any unreadable image aborts the run.
pub fn extract_descriptors(
    model: &IdvModel,
    manifest: &Manifest,
    samples: &[Sample],
    pre: &Preprocessor,
) -> Result<DescriptorSet> {
    let rows: Vec<Vec<f64>> = samples
        .par_iter()
        .map(|s| {
            let x = pre.eval_input(&manifest.resolve(s))?;
            model.embed(&x, false, &mut Rng::new(0))
        })
        .collect::<Result<_>>()?;
    let dim = model.config.embedding_dim;
    DescriptorSet::new(dim, rows.concat(), samples.to_vec())
}

pub fn l2_normalize(set: &DescriptorSet) -> Result<DescriptorSet> {
    let mut out = set.clone();
    for (i, row) in out.data.chunks_mut(set.dim).enumerate() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::Descriptor(format!(
                "row {i} ({}) has norm {norm}",
                set.samples[i].path.display()
            )));
        }
        row.iter_mut().for_each(|v| *v /= norm);
    }
    out.normalized = true;
    Ok(out)
}

/// Writes `IDVD`, version, count, dim (all `u32` LE) then `f32` LE rows.
pub fn export_embeddings(set: &DescriptorSet, path: &Path) -> Result<()> {
    if set.is_empty() {
        return Err(Error::Descriptor("refusing to export an empty descriptor set".into()));
    }
    let mut out = Vec::with_capacity(16 + 4 * set.data.len());
    out.extend_from_slice(MAGIC);
    for v in [VERSION, set.len() as u32, set.dim as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in &set.data {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fsutil::write_atomic(path, &out)
}

/// Reads a descriptor file; rows are paired with `samples` in order.
pub fn import_embeddings(path: &Path, samples: &[Sample]) -> Result<DescriptorSet> {
    let bytes = fsutil::read(path)?;
    let err = |m: String| Error::Descriptor(format!("{}: {m}", path.display()));
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(err("bad magic (not an IDVD file)".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4 bytes")) as usize;
    let (version, count, dim) = (word(1), word(2), word(3));
    if version != VERSION as usize {
        return Err(err(format!("unsupported version {version}")));
    }
    if bytes.len() != 16 + 4 * count * dim {
        return Err(err(format!("expected {count}x{dim} values, file has {} bytes", bytes.len())));
    }
    if count != samples.len() {
        return Err(err(format!("{count} rows but {} manifest samples", samples.len())));
    }
    let data = bytes[16..]
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
        .collect();
    DescriptorSet::new(dim, data, samples.to_vec())
}
