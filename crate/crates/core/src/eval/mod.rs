//! Descriptor extraction, cosine ranking and re-identification metrics.

mod descriptors;
mod metrics;
mod protocol;

pub use descriptors::{
    export_embeddings, extract_descriptors, import_embeddings, l2_normalize, DescriptorSet,
};
pub use metrics::{average_precision, cmc_from_first_hits, rank, Ranking, Relevance};
pub use protocol::{evaluate, CameraCell, EvalOptions, EvalReport, Protocol, SweepPoint};
