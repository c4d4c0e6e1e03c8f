//! Random instance generators and brute-force reference implementations.
//!
//! The references are written from the definitions, deliberately without
//! sharing code paths with the engine: sort-based quantiles, KL-form JSD,
//! class-outer/voxel-inner entropy loops and full recomputation per greedy
//! step.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use cdal_core::{jsd, ClassDistribution, CycleState, SampleId, SampleSummary, VoxelProbabilityGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub mod criteria;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random simplex point; some entries zero with probability `zero_p`.
pub fn random_probs(rng: &mut ChaCha8Rng, k: usize, zero_p: f64) -> Vec<f64> {
    loop {
        let raw: Vec<f64> = (0..k)
            .map(|_| {
                if rng.random::<f64>() < zero_p {
                    0.0
                } else {
                    -rng.random::<f64>().max(1e-300).ln()
                }
            })
            .collect();
        let sum: f64 = raw.iter().sum();
        if sum > 0.0 {
            return raw.iter().map(|v| v / sum).collect();
        }
    }
}

/// Random class distribution that passes the simplex check.
pub fn random_dist(rng: &mut ChaCha8Rng, k: usize, zero_p: f64) -> ClassDistribution {
    loop {
        if let Ok(d) = ClassDistribution::new(random_probs(rng, k, zero_p)) {
            return d;
        }
    }
}

/// Random voxel grid; some rows are exact ties or one-hot.
pub fn random_grid(rng: &mut ChaCha8Rng, id: u64, k: usize, voxels: usize) -> VoxelProbabilityGrid {
    let mut probs = Vec::with_capacity(voxels * k);
    for _ in 0..voxels {
        match rng.random_range(0..10) {
            0 => {
                let mut row = vec![0.0; k];
                row[rng.random_range(0..k)] = 1.0;
                probs.extend(row);
            }
            1 => probs.extend(vec![1.0 / k as f64; k]),
            _ => probs.extend(random_probs(rng, k, 0.3)),
        }
    }
    VoxelProbabilityGrid::new(SampleId(id), k, probs).unwrap()
}

/// Random summary with entropy mass consistent in scale with real grids.
pub fn random_summary(rng: &mut ChaCha8Rng, id: u64, k: usize) -> SampleSummary {
    let q = random_dist(rng, k, 0.3);
    let mass: Vec<f64> = (0..k).map(|_| rng.random::<f64>() * 0.3).collect();
    SampleSummary::new(SampleId(id), 100, q, mass).unwrap()
}

pub fn random_summaries(rng: &mut ChaCha8Rng, n: usize, k: usize) -> BTreeMap<SampleId, SampleSummary> {
    (0..n as u64).map(|i| (SampleId(i), random_summary(rng, i, k))).collect()
}

/// Marks a random `labeled` subset as annotated.
pub fn random_state(
    rng: &mut ChaCha8Rng,
    summaries: &BTreeMap<SampleId, SampleSummary>,
    labeled: usize,
) -> CycleState {
    let ids: Vec<SampleId> = summaries.keys().copied().collect();
    let picked: BTreeSet<SampleId> = rand::seq::index::sample(rng, ids.len(), labeled)
        .into_iter()
        .map(|i| ids[i])
        .collect();
    CycleState::from_summaries(summaries, &picked).unwrap()
}

// ---- oracles -------------------------------------------------------------

/// Argmax histogram by explicit comparison against every other class.
pub fn oracle_class_distribution(grid: &VoxelProbabilityGrid) -> Vec<f64> {
    let k = grid.num_classes();
    let mut counts = vec![0usize; k];
    for row in grid.rows() {
        let winner = (0..k)
            .find(|&c| (0..k).all(|d| row[c] > row[d] || (row[c] == row[d] && c <= d)))
            .unwrap();
        counts[winner] += 1;
    }
    let n = grid.num_voxels() as f64;
    counts.iter().map(|&c| c as f64 / n).collect()
}

/// JSD as the mean KL divergence to the midpoint, base 2.
pub fn oracle_jsd(p: &[f64], q: &[f64]) -> f64 {
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    let kl = |x: &[f64]| -> f64 {
        x.iter()
            .zip(&m)
            .filter(|(a, _)| **a > 0.0)
            .map(|(a, mm)| a * (a / mm).log2())
            .sum()
    };
    0.5 * kl(p) + 0.5 * kl(q)
}

/// Minimum JSD over a list by full scan.
pub fn oracle_min_jsd(q: &[f64], set: &[Vec<f64>]) -> f64 {
    set.iter().map(|p| oracle_jsd(q, p)).fold(f64::INFINITY, f64::min)
}

/// Per-class entropy mass, classes outer, voxels inner.
pub fn oracle_entropy_mass(grid: &VoxelProbabilityGrid) -> Vec<f64> {
    let k = grid.num_classes();
    let rows: Vec<&[f64]> = grid.rows().collect();
    (0..k)
        .map(|c| {
            let mut s = 0.0;
            for row in &rows {
                let p = row[c];
                if p > 0.0 {
                    s -= p * p.ln();
                }
            }
            s / rows.len() as f64
        })
        .collect()
}

pub fn oracle_weights(q: &[f64], eps: f64) -> Vec<f64> {
    let raw: Vec<f64> = q.iter().map(|v| 1.0 / (v + eps)).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|r| r / total).collect()
}

pub fn oracle_ufw(q: &[f64], mass: &[f64], eps: f64) -> f64 {
    oracle_weights(q, eps).iter().zip(mass).map(|(w, s)| w * s).sum()
}

/// Type-7 quantile on a sorted copy.
pub fn oracle_quantile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let frac = h - lo as f64;
    v[lo] + frac * (v[hi] - v[lo])
}

/// Median/IQR standardization then min–max scaling.
pub fn oracle_normalize(values: &[f64]) -> Vec<f64> {
    let median = oracle_quantile(values, 0.5);
    let iqr = oracle_quantile(values, 0.75) - oracle_quantile(values, 0.25);
    let iqr = if iqr > 0.0 { iqr } else { 1.0 };
    let z: Vec<f64> = values.iter().map(|x| (x - median) / iqr).collect();
    let lo = z.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi - lo > 0.0) {
        return vec![0.0; values.len()];
    }
    z.iter().map(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0)).collect()
}

/// Greedy CAS selection recomputing every component from scratch at every
/// step.
pub fn reference_greedy(
    state: &CycleState,
    summaries: &BTreeMap<SampleId, SampleSummary>,
    budget: usize,
    eps: f64,
) -> Vec<SampleId> {
    let labeled: Vec<&ClassDistribution> = state.labeled_distributions.values().collect();
    let pool: Vec<&SampleSummary> = state.unlabeled.iter().map(|id| &summaries[id]).collect();
    let inter: Vec<f64> = pool
        .iter()
        .map(|s| {
            labeled
                .iter()
                .map(|l| jsd(&s.q, l).unwrap())
                .fold(f64::INFINITY, f64::min)
        })
        .map(|v| if v.is_finite() { v } else { 0.0 })
        .collect();
    let ufw: Vec<f64> = pool
        .iter()
        .map(|s| s.frequency_weighted_uncertainty(eps).unwrap())
        .collect();
    let inter_n = oracle_normalize(&inter);
    let ufw_n = oracle_normalize(&ufw);

    let mut chosen: Vec<usize> = Vec::new();
    for _ in 0..budget {
        let remaining: Vec<usize> = (0..pool.len()).filter(|i| !chosen.contains(i)).collect();
        let intra_n = if chosen.is_empty() {
            vec![0.0; remaining.len()]
        } else {
            let intra: Vec<f64> = remaining
                .iter()
                .map(|&i| {
                    chosen
                        .iter()
                        .map(|&j| jsd(&pool[i].q, &pool[j].q).unwrap())
                        .fold(f64::INFINITY, f64::min)
                })
                .collect();
            oracle_normalize(&intra)
        };
        let mut best: Option<(f64, SampleId, usize)> = None;
        for (r, &i) in remaining.iter().enumerate() {
            let score = (inter_n[i] * inter_n[i] + intra_n[r] * intra_n[r] + ufw_n[i] * ufw_n[i]).sqrt();
            let better = match best {
                None => true,
                Some((bs, bid, _)) => score > bs || (score == bs && pool[i].id < bid),
            };
            if better {
                best = Some((score, pool[i].id, i));
            }
        }
        chosen.push(best.unwrap().2);
    }
    chosen.iter().map(|&i| pool[i].id).collect()
}

/// Relative closeness with an absolute floor for values near zero.
pub fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-12)
}
