//! Dataset manifests, image I/O, preprocessing, pair sampling and the
//! synthetic toy-dataset generator.

pub mod augment;
pub mod manifest;
pub mod pairs;
pub mod ppm;
pub mod toy;

pub use augment::{augment, compute_mean_image, resize_bilinear, AugmentConfig, Preprocessor};
pub use manifest::{load_manifest, write_manifest, Manifest, Sample, Split};
pub use pairs::{ratio_at_epoch, sample_pairs, EpochPairs, PairIndex};
pub use ppm::{decode_ppm, decode_ppm_bytes, encode_pgm, encode_ppm};
pub use toy::{generate_toy_dataset, render_identity, ToyConfig};
