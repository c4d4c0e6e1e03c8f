//! Class distributions, divergences, entropies and inverse-prevalence weights.
//!
//! Divergences use base-2 logarithms so that Jensen–Shannon lies in `[0, 1]`.
//! Entropies are in nats. `0·log 0` is treated as an exact zero by skipping
//! zero entries rather than shifting probabilities.
//!
//! Reductions over the voxels of a grid run as one sequential pass in row
//! order, so every per-grid quantity is bit-reproducible regardless of how
//! many grids are processed concurrently.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::SampleId;

/// Tolerance on `Σ q_c = 1` for a [`ClassDistribution`].
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// Tolerance on per-voxel row sums for in-memory grids.
pub const ROW_TOLERANCE: f64 = 1e-6;

/// Default stabilizer in the inverse-prevalence weights.
pub const DEFAULT_EPSILON: f64 = 1e-6;

// Largest double strictly below one. Distributions with any shared support
// have JSD < 1, and rounding must not make them look disjoint.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

/// Fraction of a sample's visible voxels predicted as each class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ClassDistribution(Vec<f64>);

impl ClassDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::InvalidDistribution(format!(
                "need at least 2 classes, got {}",
                probs.len()
            )));
        }
        if let Some((c, v)) = probs
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::InvalidDistribution(format!(
                "entry {c} = {v} outside [0, 1]"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::InvalidDistribution(format!("entries sum to {sum}")));
        }
        Ok(Self(probs))
    }

    /// Normalizes nonnegative counts into a distribution.
    pub fn from_counts(counts: &[u64]) -> Result<Self> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::EmptyGrid);
        }
        let n = total as f64;
        Self::new(counts.iter().map(|&c| c as f64 / n).collect())
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }
}

impl TryFrom<Vec<f64>> for ClassDistribution {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ClassDistribution> for Vec<f64> {
    fn from(d: ClassDistribution) -> Self {
        d.0
    }
}

/// Per-voxel class probabilities for the visible voxels of one sample,
/// stored row-major (`N × K`).
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelProbabilityGrid {
    sample_id: SampleId,
    num_classes: usize,
    probs: Vec<f64>,
}

impl VoxelProbabilityGrid {
    pub fn new(sample_id: SampleId, num_classes: usize, probs: Vec<f64>) -> Result<Self> {
        Self::with_tolerance(sample_id, num_classes, probs, ROW_TOLERANCE)
    }

    /// Builds a grid whose rows must sum to one within `tolerance`.
    pub fn with_tolerance(
        sample_id: SampleId,
        num_classes: usize,
        probs: Vec<f64>,
        tolerance: f64,
    ) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::InvalidDistribution(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        if probs.len() % num_classes != 0 {
            return Err(Error::DimensionMismatch {
                expected: num_classes,
                got: probs.len() % num_classes,
            });
        }
        for (row, chunk) in probs.chunks_exact(num_classes).enumerate() {
            let sum: f64 = chunk.iter().sum();
            let in_range = chunk.iter().all(|v| (0.0..=1.0).contains(v));
            if !in_range || (sum - 1.0).abs() > tolerance || !sum.is_finite() {
                return Err(Error::RowNotNormalized { row, sum });
            }
        }
        Ok(Self {
            sample_id,
            num_classes,
            probs,
        })
    }

    pub fn sample_id(&self) -> SampleId {
        self.sample_id
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_voxels(&self) -> usize {
        self.probs.len() / self.num_classes
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.probs.chunks_exact(self.num_classes)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }
}

/// Normalized inverse-prevalence class weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn weights(&self) -> &[f64] {
        &self.0
    }
}

/// Square-root (Hellinger) embedding of a class distribution; unit norm.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Index of the largest entry; ties go to the lowest index.
#[inline]
pub fn argmax_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    for (c, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = c;
        }
    }
    best
}

#[inline]
fn neg_xlogx(p: f64) -> f64 {
    if p > 0.0 {
        -p * p.ln()
    } else {
        0.0
    }
}

/// Single-pass accumulator for the argmax histogram and per-class entropy
/// mass of a stream of voxel rows. Lets callers summarize a sample without
/// materializing its grid.
#[derive(Debug, Clone)]
pub struct RowAccumulator {
    counts: Vec<u64>,
    mass: Vec<f64>,
    rows: u64,
}

impl RowAccumulator {
    pub fn new(num_classes: usize) -> Self {
        Self {
            counts: vec![0; num_classes],
            mass: vec![0.0; num_classes],
            rows: 0,
        }
    }

    /// Adds one row; returns its argmax class.
    #[inline]
    pub fn push(&mut self, row: &[f64]) -> usize {
        debug_assert_eq!(row.len(), self.counts.len());
        let top = argmax_lowest(row);
        self.counts[top] += 1;
        for (m, &p) in self.mass.iter_mut().zip(row) {
            *m += neg_xlogx(p);
        }
        self.rows += 1;
        top
    }

    pub fn num_rows(&self) -> u64 {
        self.rows
    }

    pub fn class_distribution(&self) -> Result<ClassDistribution> {
        ClassDistribution::from_counts(&self.counts)
    }

    /// `S_c = -(1/N) Σ_i p_i(c) ln p_i(c)`.
    pub fn entropy_mass(&self) -> Result<Vec<f64>> {
        if self.rows == 0 {
            return Err(Error::EmptyGrid);
        }
        let n = self.rows as f64;
        Ok(self.mass.iter().map(|m| m / n).collect())
    }
}

fn accumulate(grid: &VoxelProbabilityGrid) -> Result<RowAccumulator> {
    if grid.num_voxels() == 0 {
        return Err(Error::EmptyGrid);
    }
    let mut acc = RowAccumulator::new(grid.num_classes());
    for row in grid.rows() {
        acc.push(row);
    }
    Ok(acc)
}

/// Fraction of voxels whose argmax falls in each class.
pub fn class_distribution(grid: &VoxelProbabilityGrid) -> Result<ClassDistribution> {
    accumulate(grid)?.class_distribution()
}

fn ensure_same_k(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch {
            expected: a,
            got: b,
        });
    }
    Ok(())
}

/// Jensen–Shannon divergence in bits.
pub fn jsd(p: &ClassDistribution, q: &ClassDistribution) -> Result<f64> {
    ensure_same_k(p.num_classes(), q.num_classes())?;
    Ok(jsd_unchecked(p.probs(), q.probs()))
}

/// JSD on raw simplex slices of equal length.
///
/// Each class contributes `a·log2(2a/(a+b)) + b·log2(2b/(a+b))`, which is
/// symmetric in `(a, b)` term by term, so `jsd(p, q)` and `jsd(q, p)` are
/// bit-identical. Classes present in only one distribution contribute their
/// mass exactly; with no shared support the result is exactly 1.
#[inline]
pub fn jsd_unchecked(p: &[f64], q: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    let mut acc = 0.0;
    let mut overlap = false;
    for (&a, &b) in p.iter().zip(q) {
        if a > 0.0 && b > 0.0 {
            overlap = true;
            let s = a + b;
            acc += a * (2.0 * a / s).log2() + b * (2.0 * b / s).log2();
        } else {
            acc += a + b;
        }
    }
    if !overlap {
        return 1.0;
    }
    (0.5 * acc).clamp(0.0, BELOW_ONE)
}

/// `z = sqrt(q)`, a point on the unit sphere.
pub fn hellinger_embed(q: &ClassDistribution) -> EmbeddingVector {
    EmbeddingVector(q.probs().iter().map(|v| v.sqrt()).collect())
}

/// Shannon entropy of one voxel row, in nats.
pub fn voxel_entropy(row: &[f64]) -> Result<f64> {
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > ROW_TOLERANCE || row.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidRow { sum });
    }
    Ok(row.iter().copied().map(neg_xlogx).sum())
}

/// `w_c ∝ 1 / (q_c + ε)`, normalized to sum to one.
///
/// Classes absent from `q` get weight proportional to `1/ε` and therefore
/// dominate; that is the formula, not a bug.
pub fn prevalence_weights(q: &ClassDistribution, epsilon: f64) -> Result<WeightVector> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "epsilon must be positive and finite, got {epsilon}"
        )));
    }
    let raw: Vec<f64> = q.probs().iter().map(|v| 1.0 / (v + epsilon)).collect();
    let total: f64 = raw.iter().sum();
    Ok(WeightVector(raw.into_iter().map(|w| w / total).collect()))
}

/// Per-class entropy mass `S_c`; `Σ_c S_c` is the mean voxel entropy.
pub fn per_class_entropy_mass(grid: &VoxelProbabilityGrid) -> Result<Vec<f64>> {
    accumulate(grid)?.entropy_mass()
}

/// Frequency-weighted uncertainty `U_fw = Σ_c w_c S_c`.
pub fn frequency_weighted_uncertainty(
    q: &ClassDistribution,
    entropy_mass: &[f64],
    epsilon: f64,
) -> Result<f64> {
    ensure_same_k(q.num_classes(), entropy_mass.len())?;
    let w = prevalence_weights(q, epsilon)?;
    Ok(w.weights()
        .iter()
        .zip(entropy_mass)
        .map(|(w, s)| w * s)
        .sum())
}
