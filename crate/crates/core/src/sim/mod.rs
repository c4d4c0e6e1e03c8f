//! Synthetic long-tail pools, a surrogate learner and a multi-cycle runner
//! for comparing acquisition policies without training a network.
//!
//! Each sample's true class mix is drawn from a Dirichlet prior. The
//! surrogate predicts each voxel's class correctly with a probability that
//! grows with the number of labeled voxels of that class seen so far, so a
//! policy that labels rare classes improves rare-class predictions.

mod pool;
mod run;
mod spec;

pub use pool::{generate_pool, SurrogateLearner, SyntheticPool};
pub use run::{
    compare_policies, sign_test, simulate_cycles, ComparisonReport, CycleReport, Metric,
    PairedTest, PolicyMean, ReportLine, SimCheckpoint, Simulation,
};
pub use spec::{Concentration, FirstCycle, PoolSpec, SurrogateParams};
