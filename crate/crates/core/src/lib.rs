//! Class-distribution guided batch acquisition for pool-based active
//! learning on dense per-voxel class probabilities.
//!
//! Each unlabeled sample is reduced to a [`SampleSummary`]: the fraction of
//! its voxels predicted as each class and the per-class entropy mass of its
//! predictions. From those summaries [`select_batch`] greedily picks a batch
//! that balances frequency-weighted uncertainty, divergence from the labeled
//! set and divergence within the batch. Random, entropy and k-center coreset
//! baselines share the same interface, and [`sim`] provides a synthetic
//! long-tail pool with a surrogate learner for end-to-end policy comparisons.
//!
//! Per-candidate scoring runs on rayon when the `parallel` feature is on
//! (the default). Results never depend on the worker count.

use std::fmt;

use serde::{Deserialize, Serialize};

pub mod acquisition;
pub mod ann;
pub mod baselines;
pub mod bench;
pub mod dist;
pub mod error;
pub mod io;
pub mod par;
pub mod sim;

pub use acquisition::{
    combined_score, inter_sample_diversity, intra_set_diversity, robust_normalize, select_batch,
    select_batch_timed, PhaseTimings,
    AcquisitionConfig, ComponentScores, CycleState, Retrieval, SelectionEntry, SelectionResult,
};
pub use ann::{DivergenceIndex, IndexConfig};
pub use baselines::{
    select_coreset, select_entropy, select_random, select_with_policy, CoresetFeature, FeatureSet,
    Policy, PolicyConfig,
};
pub use dist::{
    class_distribution, frequency_weighted_uncertainty, hellinger_embed, jsd,
    per_class_entropy_mass, prevalence_weights, voxel_entropy, ClassDistribution, EmbeddingVector,
    VoxelProbabilityGrid, WeightVector,
};
pub use error::{Error, Result};
pub use io::SampleSummary;
pub use par::ExecMode;

/// Opaque sample identifier; ordering defines every tie-break.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SampleId(pub u64);

impl fmt::Display for SampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// SplitMix64 finalizer over `seed ⊕ stream`; derives independent,
/// reproducible sub-seeds.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
