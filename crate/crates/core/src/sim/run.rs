use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::acquisition::{AcquisitionConfig, CycleState, SelectionResult};
use crate::baselines::{select_random, select_with_policy, Policy, PolicyConfig};
use crate::dist::jsd_unchecked;
use crate::error::{Error, Result};
use crate::par;
use crate::sim::pool::{generate_pool, SurrogateLearner, SyntheticPool};
use crate::sim::spec::{FirstCycle, PoolSpec};
use crate::{mix_seed, SampleId};

const FIRST_CYCLE_STREAM: u64 = 0x6669_7273;

/// Metrics after one acquisition cycle and retraining.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleReport {
    pub seed: u64,
    pub policy: Policy,
    pub cycle: u32,
    pub labeled: usize,
    /// Fraction of labeled voxels whose true class is rare.
    pub rare_exposure: f64,
    /// Mean over the still-unlabeled samples of the minimum JSD between
    /// their true class mix and the labeled set's; 0 once the pool is empty.
    pub coverage: f64,
    pub macro_accuracy: f64,
}

/// Everything needed to continue a simulation bit-identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimCheckpoint {
    pub policy: PolicyConfig,
    pub budget: usize,
    pub state: CycleState,
    pub exposure: Vec<u64>,
}

/// One policy's run over a synthetic pool, advanced a cycle at a time.
pub struct Simulation<'a> {
    pool: &'a SyntheticPool,
    policy: PolicyConfig,
    acquisition: AcquisitionConfig,
    budget: usize,
    state: CycleState,
    surrogate: SurrogateLearner,
    evaluated: Vec<SampleId>,
    nearest: Vec<f64>,
    rare_voxels: u64,
    labeled_voxels: u64,
}

impl<'a> Simulation<'a> {
    pub fn new(
        pool: &'a SyntheticPool,
        policy: PolicyConfig,
        budget: usize,
        acquisition: AcquisitionConfig,
    ) -> Result<Self> {
        let checkpoint = SimCheckpoint {
            policy,
            budget,
            state: CycleState::new(pool.ids()),
            exposure: vec![0; pool.num_classes()],
        };
        Self::resume(pool, checkpoint, acquisition)
    }

    pub fn resume(
        pool: &'a SyntheticPool,
        checkpoint: SimCheckpoint,
        acquisition: AcquisitionConfig,
    ) -> Result<Self> {
        if checkpoint.budget == 0 {
            return Err(Error::ZeroBudget);
        }
        checkpoint.state.validate()?;
        let known = checkpoint.state.labeled.len() + checkpoint.state.unlabeled.len();
        if known != pool.len() || checkpoint.exposure.len() != pool.num_classes() {
            return Err(Error::StateCorrupt(
                "checkpoint does not match the synthetic pool".into(),
            ));
        }
        let evaluated: Vec<SampleId> = pool.ids().collect();
        let mut sim = Self {
            pool,
            policy: checkpoint.policy,
            acquisition,
            budget: checkpoint.budget,
            surrogate: SurrogateLearner::with_exposure(
                pool.spec().surrogate.clone(),
                checkpoint.exposure,
            ),
            nearest: vec![1.0; evaluated.len()],
            evaluated,
            state: CycleState::new([]),
            rare_voxels: 0,
            labeled_voxels: 0,
        };
        for &id in &checkpoint.state.labeled {
            sim.track_labeled(id);
        }
        sim.state = checkpoint.state;
        Ok(sim)
    }

    pub fn checkpoint(&self) -> SimCheckpoint {
        SimCheckpoint {
            policy: self.policy.clone(),
            budget: self.budget,
            state: self.state.clone(),
            exposure: self.surrogate.exposure().to_vec(),
        }
    }

    pub fn state(&self) -> &CycleState {
        &self.state
    }

    pub fn surrogate(&self) -> &SurrogateLearner {
        &self.surrogate
    }

    /// Predicts, selects, reveals labels and retrains once.
    pub fn step(&mut self) -> Result<(SelectionResult, CycleReport)> {
        let cycle = self.state.cycle_index + 1;
        if self.budget > self.state.unlabeled.len() {
            return Err(Error::BudgetExceedsPool {
                budget: self.budget,
                pool: self.state.unlabeled.len(),
            });
        }
        let summaries = self.pool.summaries(&self.surrogate, cycle)?;
        self.state.refresh_labeled(&summaries)?;

        let selection = if cycle == 1 && self.pool.spec().first_cycle == FirstCycle::Random {
            let ids: Vec<SampleId> = self.state.unlabeled.iter().copied().collect();
            let seed = mix_seed(self.pool.spec().seed, FIRST_CYCLE_STREAM);
            let mut s = select_random(&ids, self.budget, seed)?;
            s.cycle_index = cycle;
            s
        } else {
            select_with_policy(
                &self.state,
                &summaries,
                self.budget,
                &self.policy,
                &self.acquisition,
                None,
            )?
        };
        self.state.apply_selection(&selection, &summaries)?;
        for id in selection.ids() {
            self.surrogate.observe(self.pool.class_counts(id));
            self.track_labeled(id);
        }

        let report = CycleReport {
            seed: self.policy.seed,
            policy: self.policy.policy,
            cycle,
            labeled: self.state.labeled.len(),
            rare_exposure: self.rare_voxels as f64 / self.labeled_voxels as f64,
            // Labeled samples sit at distance 0, so the full sum is the
            // unlabeled sum.
            coverage: match self.state.unlabeled.len() {
                0 => 0.0,
                n => self.nearest.iter().sum::<f64>() / n as f64,
            },
            macro_accuracy: self.surrogate.macro_accuracy(),
        };
        Ok((selection, report))
    }

    fn track_labeled(&mut self, id: SampleId) {
        let counts = self.pool.class_counts(id);
        self.labeled_voxels += counts.iter().map(|&n| u64::from(n)).sum::<u64>();
        self.rare_voxels += self
            .pool
            .rare_classes()
            .iter()
            .map(|&c| u64::from(counts[c]))
            .sum::<u64>();
        let pool = self.pool;
        let q = pool.true_fractions(id);
        let evaluated = &self.evaluated;
        par::update_indexed(self.acquisition.exec, &mut self.nearest, |i, best| {
            let d = jsd_unchecked(pool.true_fractions(evaluated[i]), q);
            if d < *best {
                *best = d;
            }
        });
    }
}

/// Runs `cycles` acquisition rounds of `budget` samples each.
pub fn simulate_cycles(
    pool: &SyntheticPool,
    policy: &PolicyConfig,
    cycles: usize,
    budget: usize,
    acquisition: &AcquisitionConfig,
) -> Result<Vec<CycleReport>> {
    let needed = cycles.saturating_mul(budget);
    if needed > pool.len() {
        return Err(Error::BudgetExceedsPool {
            budget: needed,
            pool: pool.len(),
        });
    }
    let mut sim = Simulation::new(pool, policy.clone(), budget, acquisition.clone())?;
    (0..cycles).map(|_| sim.step().map(|(_, r)| r)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    RareExposure,
    Coverage,
    MacroAccuracy,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::RareExposure, Metric::Coverage, Metric::MacroAccuracy];

    pub fn of(self, r: &CycleReport) -> f64 {
        match self {
            Metric::RareExposure => r.rare_exposure,
            Metric::Coverage => r.coverage,
            Metric::MacroAccuracy => r.macro_accuracy,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::RareExposure => "rare_exposure",
            Metric::Coverage => "coverage",
            Metric::MacroAccuracy => "macro_accuracy",
        }
    }
}

/// Mean metrics of one policy at one cycle across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyMean {
    pub policy: Policy,
    pub cycle: u32,
    pub rare_exposure: f64,
    pub coverage: f64,
    pub macro_accuracy: f64,
}

/// Paired two-sided sign test of `a - b` across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedTest {
    pub metric: Metric,
    pub cycle: u32,
    pub a: Policy,
    pub b: Policy,
    pub mean_diff: f64,
    pub positive: usize,
    pub negative: usize,
    pub ties: usize,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum ReportLine {
    Run(CycleReport),
    Mean(PolicyMean),
    Test(PairedTest),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub policies: Vec<Policy>,
    pub seeds: Vec<u64>,
    pub cycles: usize,
    pub budget: usize,
    pub runs: Vec<CycleReport>,
    pub means: Vec<PolicyMean>,
    pub tests: Vec<PairedTest>,
}

/// Two-sided exact sign test; ties are dropped, no informative pairs gives 1.
pub fn sign_test(positive: usize, negative: usize) -> f64 {
    let n = (positive + negative) as u64;
    if n == 0 {
        return 1.0;
    }
    let tail = Binomial::new(0.5, n)
        .expect("valid binomial parameters")
        .cdf(positive.min(negative) as u64);
    (2.0 * tail).min(1.0)
}

/// Runs every policy on the same per-seed pools and compares them pairwise.
///
/// Seed `s` uses the pool generated from `mix_seed(spec.seed, s)` and the
/// policy seed `s`. Seeds run in parallel; results do not depend on it.
pub fn compare_policies(
    spec: &PoolSpec,
    policies: &[Policy],
    cycles: usize,
    budget: usize,
    seeds: &[u64],
    acquisition: &AcquisitionConfig,
) -> Result<ComparisonReport> {
    if policies.len() < 2 {
        return Err(Error::InvalidConfig("comparison needs at least 2 policies".into()));
    }
    if seeds.len() < 2 {
        return Err(Error::InvalidConfig("comparison needs at least 2 seeds".into()));
    }
    if cycles == 0 {
        return Err(Error::InvalidConfig("comparison needs at least 1 cycle".into()));
    }
    spec.validate()?;
    if cycles.saturating_mul(budget) > spec.pool_size {
        return Err(Error::BudgetExceedsPool {
            budget: cycles.saturating_mul(budget),
            pool: spec.pool_size,
        });
    }

    let per_seed = par::map_jobs(acquisition.exec, seeds, |&seed| -> Result<Vec<Vec<CycleReport>>> {
        let mut seeded = spec.clone();
        seeded.seed = mix_seed(spec.seed, seed);
        let pool = generate_pool(&seeded)?;
        policies
            .iter()
            .map(|&p| simulate_cycles(&pool, &PolicyConfig::new(p, seed), cycles, budget, acquisition))
            .collect()
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    // table[seed][policy][cycle]
    let table = per_seed;
    let n = seeds.len() as f64;
    let mut means = Vec::new();
    for (pi, &policy) in policies.iter().enumerate() {
        for c in 0..cycles {
            let mean = |m: Metric| table.iter().map(|s| m.of(&s[pi][c])).sum::<f64>() / n;
            means.push(PolicyMean {
                policy,
                cycle: c as u32 + 1,
                rare_exposure: mean(Metric::RareExposure),
                coverage: mean(Metric::Coverage),
                macro_accuracy: mean(Metric::MacroAccuracy),
            });
        }
    }

    let mut tests = Vec::new();
    for ai in 0..policies.len() {
        for bi in ai + 1..policies.len() {
            for metric in Metric::ALL {
                for c in 0..cycles {
                    let diffs: Vec<f64> = table
                        .iter()
                        .map(|s| metric.of(&s[ai][c]) - metric.of(&s[bi][c]))
                        .collect();
                    let positive = diffs.iter().filter(|d| **d > 0.0).count();
                    let negative = diffs.iter().filter(|d| **d < 0.0).count();
                    tests.push(PairedTest {
                        metric,
                        cycle: c as u32 + 1,
                        a: policies[ai],
                        b: policies[bi],
                        mean_diff: diffs.iter().sum::<f64>() / n,
                        positive,
                        negative,
                        ties: diffs.len() - positive - negative,
                        p_value: sign_test(positive, negative),
                    });
                }
            }
        }
    }

    let runs = table.into_iter().flatten().flatten().collect();
    Ok(ComparisonReport {
        policies: policies.to_vec(),
        seeds: seeds.to_vec(),
        cycles,
        budget,
        runs,
        means,
        tests,
    })
}

impl ComparisonReport {
    pub fn mean(&self, policy: Policy, cycle: u32) -> Option<&PolicyMean> {
        self.means.iter().find(|m| m.policy == policy && m.cycle == cycle)
    }

    /// First test comparing `a` against `b` (in either listed order, with
    /// the sign of `mean_diff` and the counts flipped as needed).
    pub fn test(&self, metric: Metric, cycle: u32, a: Policy, b: Policy) -> Option<PairedTest> {
        self.tests
            .iter()
            .filter(|t| t.metric == metric && t.cycle == cycle)
            .find_map(|t| {
                if t.a == a && t.b == b {
                    Some(t.clone())
                } else if t.a == b && t.b == a {
                    Some(PairedTest {
                        a,
                        b,
                        mean_diff: -t.mean_diff,
                        positive: t.negative,
                        negative: t.positive,
                        ..t.clone()
                    })
                } else {
                    None
                }
            })
    }

    /// Every run, mean and test as one JSON object per line.
    pub fn to_jsonl(&self) -> Result<String> {
        let lines = self
            .runs
            .iter()
            .cloned()
            .map(ReportLine::Run)
            .chain(self.means.iter().cloned().map(ReportLine::Mean))
            .chain(self.tests.iter().cloned().map(ReportLine::Test));
        let mut out = String::new();
        for line in lines {
            out.push_str(&serde_json::to_string(&line)?);
            out.push('\n');
        }
        Ok(out)
    }

    /// Plain-text summary: per-cycle means, then the pairwise tests.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{} seeds, {} cycles, budget {}",
            self.seeds.len(),
            self.cycles,
            self.budget
        );
        let _ = writeln!(
            out,
            "\n{:>5}  {:<8} {:>13} {:>10} {:>14}",
            "cycle", "policy", "rare_exposure", "coverage", "macro_accuracy"
        );
        for m in &self.means {
            let _ = writeln!(
                out,
                "{:>5}  {:<8} {:>13.5} {:>10.5} {:>14.5}",
                m.cycle,
                m.policy.name(),
                m.rare_exposure,
                m.coverage,
                m.macro_accuracy
            );
        }
        let _ = writeln!(
            out,
            "\n{:<15} {:>5}  {:<17} {:>11} {:>9} {:>9}",
            "metric", "cycle", "a - b", "mean_diff", "+/-/=", "p"
        );
        for t in &self.tests {
            let _ = writeln!(
                out,
                "{:<15} {:>5}  {:<17} {:>11.6} {:>9} {:>9.4}",
                t.metric.name(),
                t.cycle,
                format!("{} - {}", t.a.name(), t.b.name()),
                t.mean_diff,
                format!("{}/{}/{}", t.positive, t.negative, t.ties),
                t.p_value
            );
        }
        out
    }
}
