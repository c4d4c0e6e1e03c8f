//! Reference acquisition policies sharing the CAS selection interface.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::{
    candidate_summaries, select_batch, AcquisitionConfig, CycleState, SelectionEntry,
    SelectionResult,
};
use crate::dist::hellinger_embed;
use crate::error::{Error, Result};
use crate::io::SampleSummary;
use crate::par::{self, ExecMode};
use crate::SampleId;

/// Per-sample feature vectors for the coreset baseline.
pub type FeatureSet = BTreeMap<SampleId, Vec<f64>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    Random,
    Entropy,
    Coreset,
    Cas,
}

impl Policy {
    pub const ALL: [Policy; 4] = [Policy::Cas, Policy::Random, Policy::Entropy, Policy::Coreset];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Random => "random",
            Policy::Entropy => "entropy",
            Policy::Coreset => "coreset",
            Policy::Cas => "cas",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Policy::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown policy '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoresetFeature {
    #[default]
    Hellinger,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub policy: Policy,
    pub seed: u64,
    pub coreset_feature: CoresetFeature,
}

impl PolicyConfig {
    pub fn new(policy: Policy, seed: u64) -> Self {
        Self {
            policy,
            seed,
            coreset_feature: CoresetFeature::default(),
        }
    }
}

fn ranked(cycle_index: u32, policy: Policy, picks: Vec<(SampleId, Option<f64>)>) -> SelectionResult {
    SelectionResult {
        cycle_index,
        policy,
        entries: picks
            .into_iter()
            .enumerate()
            .map(|(i, (id, score))| SelectionEntry {
                rank: i + 1,
                id,
                score,
                components: None,
            })
            .collect(),
    }
}

fn check_budget(budget: usize, pool: usize) -> Result<()> {
    if budget == 0 {
        return Err(Error::ZeroBudget);
    }
    if budget > pool {
        return Err(Error::BudgetExceedsPool { budget, pool });
    }
    Ok(())
}

/// Uniform sample of `budget` ids without replacement.
pub fn select_random(pool: &[SampleId], budget: usize, seed: u64) -> Result<SelectionResult> {
    check_budget(budget, pool.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = sample(&mut rng, pool.len(), budget)
        .into_iter()
        .map(|i| (pool[i], None))
        .collect();
    Ok(ranked(0, Policy::Random, picks))
}

/// Top-`budget` candidates by mean voxel entropy `Σ_c S_c`.
pub fn select_entropy(candidates: &[&SampleSummary], budget: usize) -> Result<SelectionResult> {
    check_budget(budget, candidates.len())?;
    let mut scored: Vec<(f64, SampleId)> = candidates
        .iter()
        .map(|s| (s.mean_entropy(), s.id))
        .collect();
    scored.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let picks = scored
        .into_iter()
        .take(budget)
        .map(|(h, id)| (id, Some(h)))
        .collect();
    Ok(ranked(0, Policy::Entropy, picks))
}

#[inline]
fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// k-center greedy: repeatedly picks the pool point farthest from
/// `labeled ∪ selected`; ties go to the lowest id.
///
/// Each entry's score is the max–min distance at the time of the pick, which
/// is non-increasing along the sequence. With nothing labeled the first pick
/// is unbounded (score `None`) and resolves to the lowest id.
pub fn select_coreset(
    labeled: &[&[f64]],
    pool: &[(SampleId, &[f64])],
    budget: usize,
    exec: ExecMode,
) -> Result<SelectionResult> {
    check_budget(budget, pool.len())?;
    let dim = pool[0].1.len();
    if let Some(bad) = pool
        .iter()
        .map(|(_, f)| f.len())
        .chain(labeled.iter().map(|f| f.len()))
        .find(|&d| d != dim)
    {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: bad,
        });
    }

    let mut nearest: Vec<f64> = par::map(exec, pool, |(_, f)| {
        labeled
            .iter()
            .map(|l| euclidean(f, l))
            .fold(f64::INFINITY, f64::min)
    });
    let mut taken = vec![false; pool.len()];
    let mut picks = Vec::with_capacity(budget);
    for _ in 0..budget {
        let score = |i: usize| if taken[i] { f64::NEG_INFINITY } else { nearest[i] };
        let best = par::argmax_by(exec, pool.len(), score, |i| pool[i].0)
            .expect("pool is non-empty");
        let radius = nearest[best];
        picks.push((pool[best].0, radius.is_finite().then_some(radius)));
        taken[best] = true;
        let center = pool[best].1;
        par::update_indexed(exec, &mut nearest, |i, d| {
            let e = euclidean(pool[i].1, center);
            if e < *d {
                *d = e;
            }
        });
    }
    Ok(ranked(0, Policy::Coreset, picks))
}

/// Runs `config.policy` against the current cycle state.
///
/// The random policy mixes the cycle index into its seed so consecutive
/// cycles draw independently. External coreset features must cover every
/// labeled and unlabeled id.
pub fn select_with_policy(
    state: &CycleState,
    summaries: &BTreeMap<SampleId, SampleSummary>,
    budget: usize,
    config: &PolicyConfig,
    acquisition: &AcquisitionConfig,
    features: Option<&FeatureSet>,
) -> Result<SelectionResult> {
    let cycle = state.cycle_index + 1;
    let mut result = match config.policy {
        Policy::Cas => return select_batch(state, summaries, budget, acquisition),
        Policy::Random => {
            let pool: Vec<SampleId> = state.unlabeled.iter().copied().collect();
            let seed = crate::mix_seed(config.seed, cycle as u64);
            select_random(&pool, budget, seed)?
        }
        Policy::Entropy => {
            let candidates = candidate_summaries(state, summaries, budget)?;
            select_entropy(&candidates, budget)?
        }
        Policy::Coreset => coreset_for_state(state, summaries, budget, config, acquisition, features)?,
    };
    result.cycle_index = cycle;
    Ok(result)
}

fn coreset_for_state(
    state: &CycleState,
    summaries: &BTreeMap<SampleId, SampleSummary>,
    budget: usize,
    config: &PolicyConfig,
    acquisition: &AcquisitionConfig,
    features: Option<&FeatureSet>,
) -> Result<SelectionResult> {
    match config.coreset_feature {
        CoresetFeature::Hellinger => {
            let candidates = candidate_summaries(state, summaries, budget)?;
            let pool_feats: Vec<Vec<f64>> = candidates
                .iter()
                .map(|s| hellinger_embed(&s.q).into_inner())
                .collect();
            let labeled_feats: Vec<Vec<f64>> = state
                .labeled_distributions
                .values()
                .map(|q| hellinger_embed(q).into_inner())
                .collect();
            let pool: Vec<(SampleId, &[f64])> = candidates
                .iter()
                .zip(&pool_feats)
                .map(|(s, f)| (s.id, f.as_slice()))
                .collect();
            let labeled: Vec<&[f64]> = labeled_feats.iter().map(Vec::as_slice).collect();
            select_coreset(&labeled, &pool, budget, acquisition.exec)
        }
        CoresetFeature::External => {
            let features = features.ok_or_else(|| {
                Error::InvalidConfig("external coreset features require a feature file".into())
            })?;
            let lookup = |id: &SampleId| {
                features
                    .get(id)
                    .map(Vec::as_slice)
                    .ok_or(Error::MissingFeatures(*id))
            };
            check_budget(budget, state.unlabeled.len())?;
            let pool = state
                .unlabeled
                .iter()
                .map(|id| Ok((*id, lookup(id)?)))
                .collect::<Result<Vec<_>>>()?;
            let labeled = state.labeled.iter().map(lookup).collect::<Result<Vec<_>>>()?;
            select_coreset(&labeled, &pool, budget, acquisition.exec)
        }
    }
}
