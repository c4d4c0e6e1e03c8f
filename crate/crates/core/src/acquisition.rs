//! Combined Acquisition Score (CAS) and greedy batch selection.
//!
//! Every unlabeled candidate carries three raw scores:
//!
//! - `inter`: minimum JSD to any labeled distribution (0 when nothing is labeled),
//! - `intra`: minimum JSD to the samples already picked in this cycle,
//! - `ufw`: frequency-weighted uncertainty.
//!
//! `inter` and `ufw` are computed and normalized once per cycle over the whole
//! candidate pool. `intra` is maintained incrementally: after each pick every
//! remaining candidate evaluates exactly one new divergence against the pick
//! and keeps the running minimum. Its normalization is redone over the
//! remaining candidates at every step. The first pick of a cycle uses a
//! normalized intra term of zero.
//!
//! The CAS is the Euclidean norm of the three normalized scores; the highest
//! score wins and ties go to the lowest sample id.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::ann::{min_jsd_exhaustive, DivergenceIndex, IndexConfig};
use crate::baselines::Policy;
use crate::dist::{frequency_weighted_uncertainty, jsd, jsd_unchecked, ClassDistribution, DEFAULT_EPSILON};
use crate::error::{Error, Result};
use crate::io::SampleSummary;
use crate::par::{self, ExecMode};
use crate::SampleId;

/// Raw and normalized components behind one CAS value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentScores {
    pub inter: f64,
    /// Absent for the first pick of a cycle.
    pub intra: Option<f64>,
    pub ufw: f64,
    pub inter_norm: f64,
    pub intra_norm: f64,
    pub ufw_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionEntry {
    pub rank: usize,
    pub id: SampleId,
    /// Policy-specific score at the time of the pick; `None` where the
    /// policy has none (random) or it is unbounded (first coreset pick with
    /// nothing labeled).
    pub score: Option<f64>,
    pub components: Option<ComponentScores>,
}

/// Ordered picks of one acquisition cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub cycle_index: u32,
    pub policy: Policy,
    pub entries: Vec<SelectionEntry>,
}

impl SelectionResult {
    pub fn budget(&self) -> usize {
        self.entries.len()
    }

    pub fn ids(&self) -> Vec<SampleId> {
        self.entries.iter().map(|e| e.id).collect()
    }

    /// Checks rank order, uniqueness and disjointness from `labeled`.
    pub fn validate(&self, labeled: &BTreeSet<SampleId>) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::InvalidConfig("selection has no entries".into()));
        }
        let mut seen = BTreeSet::new();
        for (i, e) in self.entries.iter().enumerate() {
            if e.rank != i + 1 {
                return Err(Error::InvalidConfig(format!(
                    "entry {i} has rank {}, expected {}",
                    e.rank,
                    i + 1
                )));
            }
            if !seen.insert(e.id) {
                return Err(Error::InvalidConfig(format!("sample {} selected twice", e.id)));
            }
            if labeled.contains(&e.id) {
                return Err(Error::InvalidConfig(format!("sample {} is already labeled", e.id)));
            }
        }
        Ok(())
    }
}

/// Labeled / unlabeled membership carried across cycles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleState {
    pub cycle_index: u32,
    pub labeled: BTreeSet<SampleId>,
    pub unlabeled: BTreeSet<SampleId>,
    pub labeled_distributions: BTreeMap<SampleId, ClassDistribution>,
}

impl CycleState {
    /// Every id unlabeled.
    pub fn new(unlabeled: impl IntoIterator<Item = SampleId>) -> Self {
        Self {
            cycle_index: 0,
            labeled: BTreeSet::new(),
            unlabeled: unlabeled.into_iter().collect(),
            labeled_distributions: BTreeMap::new(),
        }
    }

    /// Builds a state from summaries, marking `labeled` as already annotated.
    pub fn from_summaries(
        summaries: &BTreeMap<SampleId, SampleSummary>,
        labeled: &BTreeSet<SampleId>,
    ) -> Result<Self> {
        let mut state = Self::new(summaries.keys().copied().filter(|id| !labeled.contains(id)));
        for &id in labeled {
            let s = summaries.get(&id).ok_or(Error::MissingSummary(id))?;
            state.labeled.insert(id);
            state.labeled_distributions.insert(id, s.q.clone());
        }
        Ok(state)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(id) = self.labeled.intersection(&self.unlabeled).next() {
            return Err(Error::StateCorrupt(format!(
                "sample {id} is both labeled and unlabeled"
            )));
        }
        if let Some(id) = self
            .labeled
            .iter()
            .find(|id| !self.labeled_distributions.contains_key(id))
        {
            return Err(Error::StateCorrupt(format!(
                "labeled sample {id} has no cached distribution"
            )));
        }
        if let Some(id) = self
            .labeled_distributions
            .keys()
            .find(|id| !self.labeled.contains(id))
        {
            return Err(Error::StateCorrupt(format!(
                "cached distribution for unlabeled sample {id}"
            )));
        }
        Ok(())
    }

    /// Moves the selected ids to the labeled set and advances the cycle.
    pub fn apply_selection(
        &mut self,
        selection: &SelectionResult,
        summaries: &BTreeMap<SampleId, SampleSummary>,
    ) -> Result<()> {
        selection.validate(&self.labeled)?;
        for e in &selection.entries {
            if !self.unlabeled.contains(&e.id) {
                return Err(Error::StateCorrupt(format!(
                    "selected sample {} is not in the unlabeled pool",
                    e.id
                )));
            }
            if !summaries.contains_key(&e.id) {
                return Err(Error::MissingSummary(e.id));
            }
        }
        for e in &selection.entries {
            self.unlabeled.remove(&e.id);
            self.labeled.insert(e.id);
            self.labeled_distributions
                .insert(e.id, summaries[&e.id].q.clone());
        }
        self.cycle_index += 1;
        Ok(())
    }

    /// Replaces cached labeled distributions with fresh predictions, e.g.
    /// after the model was retrained.
    pub fn refresh_labeled(&mut self, summaries: &BTreeMap<SampleId, SampleSummary>) -> Result<()> {
        for (&id, q) in self.labeled_distributions.iter_mut() {
            *q = summaries.get(&id).ok_or(Error::MissingSummary(id))?.q.clone();
        }
        Ok(())
    }
}

/// How the inter-sample minimum over the labeled set is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Retrieval {
    /// Exhaustive below `ann_min_pool` candidates, approximate above.
    #[default]
    Auto,
    Exhaustive,
    Approximate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionConfig {
    pub epsilon: f64,
    pub retrieval: Retrieval,
    /// Candidate-pool size at which `Retrieval::Auto` switches to the index.
    pub ann_min_pool: usize,
    pub index: IndexConfig,
    pub exec: ExecMode,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            retrieval: Retrieval::Auto,
            ann_min_pool: 50_000,
            index: IndexConfig::default(),
            exec: ExecMode::default(),
        }
    }
}

/// Minimum JSD from `q` to the labeled set; 0 for an empty labeled set.
///
/// With an index the answer is exact whenever its rerank width covers the
/// whole labeled set, and never below the exact minimum otherwise.
pub fn inter_sample_diversity(
    q: &ClassDistribution,
    labeled: &[ClassDistribution],
    index: Option<&DivergenceIndex>,
) -> Result<f64> {
    if let Some(index) = index {
        if index.is_empty() {
            return Ok(0.0);
        }
        return Ok(index.min_jsd(q)?.1);
    }
    let mut best = f64::INFINITY;
    for l in labeled {
        best = best.min(jsd(q, l)?);
    }
    Ok(if labeled.is_empty() { 0.0 } else { best })
}

/// Minimum JSD from `q` to the samples already selected this cycle.
pub fn intra_set_diversity(q: &ClassDistribution, selected: &[ClassDistribution]) -> Result<f64> {
    if selected.is_empty() {
        return Err(Error::EmptySelection);
    }
    let mut best = f64::INFINITY;
    for s in selected {
        best = best.min(jsd(q, s)?);
    }
    Ok(best)
}

/// Linear-interpolation quantile of sorted-order statistics, computed by
/// selection on a scratch buffer (reordered in place).
fn quantile(buf: &mut [f64], p: f64) -> f64 {
    let n = buf.len();
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    let (_, &mut lo_v, upper) = buf.select_nth_unstable_by(lo, f64::total_cmp);
    if frac == 0.0 || upper.is_empty() {
        return lo_v;
    }
    let hi_v = upper.iter().copied().fold(f64::INFINITY, f64::min);
    lo_v + frac * (hi_v - lo_v)
}

/// Median/IQR standardization followed by min–max scaling to `[0, 1]`.
///
/// A zero IQR is replaced by 1; a constant input maps to all zeros.
pub fn robust_normalize(scores: &[f64]) -> Vec<f64> {
    if scores.is_empty() {
        return Vec::new();
    }
    let mut buf = scores.to_vec();
    let median = quantile(&mut buf, 0.5);
    let q1 = quantile(&mut buf, 0.25);
    let q3 = quantile(&mut buf, 0.75);
    let iqr = q3 - q1;
    let iqr = if iqr > 0.0 { iqr } else { 1.0 };

    let z: Vec<f64> = scores.iter().map(|x| (x - median) / iqr).collect();
    let (lo, hi) = z
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    if !(span > 0.0) {
        return vec![0.0; scores.len()];
    }
    z.into_iter().map(|v| ((v - lo) / span).clamp(0.0, 1.0)).collect()
}

/// Euclidean norm of the three normalized components.
#[inline]
pub fn combined_score(inter: f64, intra: f64, ufw: f64) -> f64 {
    (inter * inter + intra * intra + ufw * ufw).sqrt()
}

/// Candidates gathered into contiguous arrays for the greedy loop.
struct Pool {
    k: usize,
    ids: Vec<SampleId>,
    probs: Vec<f64>,
    inter: Vec<f64>,
    ufw: Vec<f64>,
    inter_norm: Vec<f64>,
    ufw_norm: Vec<f64>,
    nearest: Vec<f64>,
}

impl Pool {
    fn len(&self) -> usize {
        self.ids.len()
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.probs[i * self.k..(i + 1) * self.k]
    }

    fn swap_remove(&mut self, i: usize) {
        let last = self.len() - 1;
        if i != last {
            let (head, tail) = self.probs.split_at_mut(last * self.k);
            head[i * self.k..(i + 1) * self.k].copy_from_slice(tail);
        }
        self.probs.truncate(last * self.k);
        self.ids.swap_remove(i);
        self.inter.swap_remove(i);
        self.ufw.swap_remove(i);
        self.inter_norm.swap_remove(i);
        self.ufw_norm.swap_remove(i);
        self.nearest.swap_remove(i);
    }
}

pub(crate) fn candidate_summaries<'a>(
    state: &CycleState,
    summaries: &'a BTreeMap<SampleId, SampleSummary>,
    budget: usize,
) -> Result<Vec<&'a SampleSummary>> {
    if budget == 0 {
        return Err(Error::ZeroBudget);
    }
    if budget > state.unlabeled.len() {
        return Err(Error::BudgetExceedsPool {
            budget,
            pool: state.unlabeled.len(),
        });
    }
    let out = state
        .unlabeled
        .iter()
        .map(|id| summaries.get(id).ok_or(Error::MissingSummary(*id)))
        .collect::<Result<Vec<_>>>()?;
    let k = out[0].num_classes();
    if let Some(bad) = out.iter().find(|s| s.num_classes() != k) {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: bad.num_classes(),
        });
    }
    Ok(out)
}

/// Wall time spent in each phase of [`select_batch_timed`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseTimings {
    /// Building the divergence index over the labeled set; zero when the
    /// inter-sample minimum is computed exhaustively.
    pub index_build: Duration,
    /// Raw and normalized `inter` and `ufw` over the candidate pool.
    pub score: Duration,
    /// The greedy loop with incremental intra-set updates.
    pub greedy: Duration,
}

pub(crate) fn uses_index(candidates: usize, labeled: usize, config: &AcquisitionConfig) -> bool {
    match config.retrieval {
        Retrieval::Exhaustive => false,
        Retrieval::Approximate => true,
        Retrieval::Auto => candidates >= config.ann_min_pool && labeled > config.index.rerank_width,
    }
}

/// Raw inter-sample diversity for every candidate.
fn inter_scores(
    candidates: &[&SampleSummary],
    state: &CycleState,
    config: &AcquisitionConfig,
    timings: &mut PhaseTimings,
) -> Result<Vec<f64>> {
    if state.labeled_distributions.is_empty() {
        return Ok(vec![0.0; candidates.len()]);
    }
    let k = candidates[0].num_classes();
    if let Some(bad) = state.labeled_distributions.values().find(|d| d.num_classes() != k) {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: bad.num_classes(),
        });
    }
    if uses_index(candidates.len(), state.labeled_distributions.len(), config) {
        let start = Instant::now();
        let index = DivergenceIndex::build(&state.labeled_distributions, &config.index)?;
        timings.index_build = start.elapsed();
        log::debug!(
            "inter-sample retrieval through index over {} labeled samples",
            index.len()
        );
        return Ok(par::map(config.exec, candidates, |s| {
            index.min_jsd_unchecked(s.q.probs()).1
        }));
    }
    let labeled: Vec<(SampleId, &[f64])> = state
        .labeled_distributions
        .iter()
        .map(|(id, d)| (*id, d.probs()))
        .collect();
    Ok(par::map(config.exec, candidates, |s| {
        min_jsd_exhaustive(s.q.probs(), labeled.iter().copied()).1
    }))
}

/// Greedily selects `budget` candidates from the unlabeled pool by CAS.
pub fn select_batch(
    state: &CycleState,
    summaries: &BTreeMap<SampleId, SampleSummary>,
    budget: usize,
    config: &AcquisitionConfig,
) -> Result<SelectionResult> {
    select_batch_timed(state, summaries, budget, config).map(|(r, _)| r)
}

/// [`select_batch`] that also reports per-phase wall times.
pub fn select_batch_timed(
    state: &CycleState,
    summaries: &BTreeMap<SampleId, SampleSummary>,
    budget: usize,
    config: &AcquisitionConfig,
) -> Result<(SelectionResult, PhaseTimings)> {
    let candidates = candidate_summaries(state, summaries, budget)?;
    let k = candidates[0].num_classes();
    let mut timings = PhaseTimings::default();

    let start = Instant::now();
    let inter = inter_scores(&candidates, state, config, &mut timings)?;
    let ufw = par::map(config.exec, &candidates, |s| {
        frequency_weighted_uncertainty(&s.q, &s.entropy_mass, config.epsilon)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let inter_norm = robust_normalize(&inter);
    let ufw_norm = robust_normalize(&ufw);
    timings.score = start.elapsed().saturating_sub(timings.index_build);

    let start = Instant::now();
    let mut probs = Vec::with_capacity(candidates.len() * k);
    for s in &candidates {
        probs.extend_from_slice(s.q.probs());
    }
    let mut pool = Pool {
        k,
        ids: candidates.iter().map(|s| s.id).collect(),
        probs,
        inter_norm,
        ufw_norm,
        inter,
        ufw,
        nearest: vec![f64::INFINITY; candidates.len()],
    };
    drop(candidates);

    let mut entries = Vec::with_capacity(budget);
    let mut intra_norm: Vec<f64> = vec![0.0; pool.len()];
    let mut last_pick: Option<Vec<f64>> = None;

    for rank in 1..=budget {
        if let Some(pick) = &last_pick {
            let k = pool.k;
            let probs = &pool.probs;
            par::update_indexed(config.exec, &mut pool.nearest, |i, best| {
                let d = jsd_unchecked(&probs[i * k..(i + 1) * k], pick);
                if d < *best {
                    *best = d;
                }
            });
            intra_norm = robust_normalize(&pool.nearest);
        }

        let cas = |i: usize| combined_score(pool.inter_norm[i], intra_norm[i], pool.ufw_norm[i]);
        let best = par::argmax_by(config.exec, pool.len(), cas, |i| pool.ids[i])
            .expect("pool holds at least `budget` candidates");

        entries.push(SelectionEntry {
            rank,
            id: pool.ids[best],
            score: Some(cas(best)),
            components: Some(ComponentScores {
                inter: pool.inter[best],
                intra: last_pick.as_ref().map(|_| pool.nearest[best]),
                ufw: pool.ufw[best],
                inter_norm: pool.inter_norm[best],
                intra_norm: intra_norm[best],
                ufw_norm: pool.ufw_norm[best],
            }),
        });

        last_pick = Some(pool.row(best).to_vec());
        pool.swap_remove(best);
        intra_norm.swap_remove(best);
    }

    timings.greedy = start.elapsed();
    let result = SelectionResult {
        cycle_index: state.cycle_index + 1,
        policy: Policy::Cas,
        entries,
    };
    Ok((result, timings))
}
