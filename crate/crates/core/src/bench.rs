//! Scale harness: one CAS cycle over a synthetic pool with per-phase wall
//! times, index recall against exhaustive search, and peak memory.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Gamma;
use serde::{Deserialize, Serialize};

use crate::acquisition::{select_batch_timed, uses_index, AcquisitionConfig, CycleState, Retrieval};
use crate::ann::{DivergenceIndex, IndexConfig};
use crate::dist::RowAccumulator;
use crate::error::{Error, Result};
use crate::io::SampleSummary;
use crate::par::{self, ExecMode};
use crate::sim::Concentration;
use crate::{mix_seed, SampleId};

const LABELED_STREAM: u64 = 0x6c61_6265;
const QUERY_STREAM: u64 = 0x7175_6572;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub pool_size: usize,
    pub num_classes: usize,
    pub rerank_width: usize,
    pub budget: usize,
    /// Initially labeled samples; defaults to 1% of the pool (at least 1).
    pub labeled: Option<usize>,
    pub voxels_per_sample: usize,
    pub recall_queries: usize,
    pub seed: u64,
    pub exec: ExecMode,
    pub retrieval: Retrieval,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            pool_size: 10_000,
            num_classes: 17,
            rerank_width: IndexConfig::default().rerank_width,
            budget: 100,
            labeled: None,
            voxels_per_sample: 32,
            recall_queries: 1000,
            seed: 0,
            exec: ExecMode::default(),
            retrieval: Retrieval::Auto,
        }
    }
}

impl BenchConfig {
    pub fn labeled_count(&self) -> usize {
        self.labeled.unwrap_or(self.pool_size / 100).max(1)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.num_classes < 2 {
            return bad("need at least 2 classes");
        }
        if self.voxels_per_sample == 0 || self.rerank_width == 0 {
            return bad("voxels per sample and rerank width must be positive");
        }
        if self.labeled_count() >= self.pool_size {
            return bad("labeled set must leave unlabeled candidates");
        }
        if self.budget == 0 {
            return Err(Error::ZeroBudget);
        }
        if self.budget > self.pool_size - self.labeled_count() {
            return Err(Error::BudgetExceedsPool {
                budget: self.budget,
                pool: self.pool_size - self.labeled_count(),
            });
        }
        Ok(())
    }

    /// Rough upper bound on resident memory for a run, for preflight checks.
    pub fn estimated_peak_bytes(&self) -> u64 {
        let k = self.num_classes as u64;
        let per_summary = 2 * (16 * k + 64) + 128;
        let per_candidate = 8 * k + 96;
        self.pool_size as u64 * (per_summary + per_candidate) + (64 << 20)
    }
}

/// Serialized size of `n` summaries: two `K`-vectors of f64 plus id and
/// voxel count.
pub fn raw_payload_bytes(n: usize, num_classes: usize) -> u64 {
    n as u64 * (2 * num_classes as u64 * 8 + 16)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub pool_size: usize,
    pub num_classes: usize,
    pub labeled: usize,
    pub budget: usize,
    pub rerank_width: usize,
    pub used_index: bool,
    pub summarize_secs: f64,
    pub index_build_secs: f64,
    pub score_secs: f64,
    pub greedy_secs: f64,
    pub total_secs: f64,
    pub recall_queries: usize,
    /// Fraction of queries whose index answer equals the exhaustive minimum.
    pub recall: f64,
    /// Queries whose index answer fell below the exhaustive minimum.
    pub below_true_min: usize,
    pub max_abs_error: f64,
    pub index_bytes: u64,
    pub payload_bytes: u64,
    pub peak_rss_bytes: Option<u64>,
    pub selected: Vec<SampleId>,
}

impl BenchReport {
    pub fn memory_ratio(&self) -> Option<f64> {
        self.peak_rss_bytes
            .map(|b| b as f64 / self.payload_bytes as f64)
    }

    pub fn render(&self) -> String {
        let mut lines = vec![
            format!(
                "pool {} (labeled {}), K = {}, budget {}, rerank width {}, retrieval {}",
                self.pool_size,
                self.labeled,
                self.num_classes,
                self.budget,
                self.rerank_width,
                if self.used_index { "index" } else { "exhaustive" }
            ),
            format!("summarize    {:>10.3} s", self.summarize_secs),
            format!("index build  {:>10.3} s", self.index_build_secs),
            format!("score        {:>10.3} s", self.score_secs),
            format!("greedy       {:>10.3} s", self.greedy_secs),
            format!("total        {:>10.3} s", self.total_secs),
            format!(
                "recall {:.4} over {} queries ({} below true minimum, max abs error {:.3e})",
                self.recall, self.recall_queries, self.below_true_min, self.max_abs_error
            ),
        ];
        let mb = |b: u64| b as f64 / (1 << 20) as f64;
        match self.peak_rss_bytes {
            Some(peak) => lines.push(format!(
                "peak rss {:.1} MiB, raw summary payload {:.1} MiB (ratio {:.2})",
                mb(peak),
                mb(self.payload_bytes),
                peak as f64 / self.payload_bytes as f64
            )),
            None => lines.push(format!(
                "peak rss unavailable, raw summary payload {:.1} MiB",
                mb(self.payload_bytes)
            )),
        }
        lines.join("\n")
    }
}

/// Summary of a synthetic long-tail sample, streamed voxel by voxel.
pub fn synthetic_summary(
    id: SampleId,
    num_classes: usize,
    voxels: usize,
    seed: u64,
) -> Result<SampleSummary> {
    let alphas = Concentration::default().alphas(num_classes);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, id.0));
    let mix: Vec<f64> = alphas
        .iter()
        .map(|&a| Gamma::new(a, 1.0).map(|g| g.sample(&mut rng)).unwrap_or(0.0))
        .collect();
    let composition = WeightedIndex::new(&mix)
        .or_else(|_| WeightedIndex::new(&alphas))
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut acc = RowAccumulator::new(num_classes);
    let mut row = vec![0.0; num_classes];
    for _ in 0..voxels {
        let c = composition.sample(&mut rng);
        let top = 0.4 + 0.55 * rng.random::<f64>();
        row.fill((1.0 - top) / num_classes as f64);
        row[c] += top;
        acc.push(&row);
    }
    SampleSummary::from_accumulator(id, &acc)
}

/// Peak resident set size of this process, where the OS reports it.
pub fn peak_rss_bytes() -> Option<u64> {
    proc_kib("/proc/self/status", "VmHWM:")
}

/// Memory the OS considers available for new allocations.
pub fn available_memory_bytes() -> Option<u64> {
    proc_kib("/proc/meminfo", "MemAvailable:")
}

fn proc_kib(path: &str, key: &str) -> Option<u64> {
    let text = std::fs::read_to_string(path).ok()?;
    let line = text.lines().find(|l| l.starts_with(key))?;
    let kib: u64 = line[key.len()..].trim().trim_end_matches("kB").trim().parse().ok()?;
    Some(kib * 1024)
}

/// Summarizes a synthetic pool, runs one CAS cycle and measures index recall.
pub fn run_bench(config: &BenchConfig) -> Result<BenchReport> {
    config.validate()?;
    let total = Instant::now();
    let k = config.num_classes;

    let start = Instant::now();
    let summaries: BTreeMap<SampleId, SampleSummary> =
        par::map_range(config.exec, config.pool_size, |i| {
            synthetic_summary(SampleId(i as u64), k, config.voxels_per_sample, config.seed)
        })
        .into_iter()
        .map(|s| s.map(|s| (s.id, s)))
        .collect::<Result<_>>()?;
    let summarize_secs = start.elapsed().as_secs_f64();

    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, LABELED_STREAM));
    let labeled: BTreeSet<SampleId> =
        rand::seq::index::sample(&mut rng, config.pool_size, config.labeled_count())
            .into_iter()
            .map(|i| SampleId(i as u64))
            .collect();
    let state = CycleState::from_summaries(&summaries, &labeled)?;

    let acquisition = AcquisitionConfig {
        retrieval: config.retrieval,
        index: IndexConfig {
            rerank_width: config.rerank_width,
            ..IndexConfig::default()
        },
        exec: config.exec,
        ..AcquisitionConfig::default()
    };
    let used_index = uses_index(state.unlabeled.len(), labeled.len(), &acquisition);
    let (selection, timings) = select_batch_timed(&state, &summaries, config.budget, &acquisition)?;

    let index = DivergenceIndex::build(&state.labeled_distributions, &acquisition.index)?;
    let queries = config.recall_queries.min(state.unlabeled.len());
    let unlabeled: Vec<SampleId> = state.unlabeled.iter().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, QUERY_STREAM));
    let picks: Vec<SampleId> = rand::seq::index::sample(&mut rng, unlabeled.len(), queries)
        .into_iter()
        .map(|i| unlabeled[i])
        .collect();
    let outcomes = par::map(config.exec, &picks, |id| -> Result<(f64, f64)> {
        let q = &summaries[id].q;
        Ok((index.min_jsd(q)?.1, index.min_jsd_exact(q)?.1))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let hits = outcomes.iter().filter(|(a, e)| a == e).count();
    let below_true_min = outcomes.iter().filter(|(a, e)| a < e).count();
    let max_abs_error = outcomes.iter().map(|(a, e)| (a - e).abs()).fold(0.0, f64::max);

    Ok(BenchReport {
        pool_size: config.pool_size,
        num_classes: k,
        labeled: labeled.len(),
        budget: config.budget,
        rerank_width: config.rerank_width,
        used_index,
        summarize_secs,
        index_build_secs: timings.index_build.as_secs_f64(),
        score_secs: timings.score.as_secs_f64(),
        greedy_secs: timings.greedy.as_secs_f64(),
        total_secs: total.elapsed().as_secs_f64(),
        recall_queries: queries,
        recall: if queries == 0 { 1.0 } else { hits as f64 / queries as f64 },
        below_true_min,
        max_abs_error,
        index_bytes: index.memory_bytes() as u64,
        payload_bytes: raw_payload_bytes(config.pool_size, k),
        peak_rss_bytes: peak_rss_bytes(),
        selected: selection.ids(),
    })
}
