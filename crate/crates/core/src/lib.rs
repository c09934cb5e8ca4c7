//! Bot scoring from account metadata.
//!
//! Every account is reduced to a fixed 20-feature vector ([`features`]) and
//! scored by a random forest ([`forest`]). The remaining modules make up the
//! experiment harness used to choose training data: dataset loading and
//! merging ([`datasets`]), characterization and cross-dataset analysis
//! ([`analysis`]), metrics, and rank-product selection ([`selection`]).

pub mod analysis;
pub mod datasets;
pub mod features;
pub mod forest;
pub mod metrics;
pub mod model_file;
pub mod screen_name;
pub mod selection;
pub mod user_model;
pub mod validation;

pub use datasets::{LabeledDataset, Sample};
pub use features::{extract_features, Feature, FeatureVector, N_FEATURES};
pub use forest::{Forest, ForestConfig};
pub use screen_name::BigramModel;
pub use user_model::{Label, UserRecord};

/// Derives an independent child seed (splitmix64 of `seed` mixed with `index`).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
