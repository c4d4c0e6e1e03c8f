use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Gamma;

use crate::dist::{ClassDistribution, VoxelProbabilityGrid};
use crate::error::{Error, Result};
use crate::io::SampleSummary;
use crate::sim::spec::{PoolSpec, SurrogateParams};
use crate::{mix_seed, SampleId};

// Stream tags keep composition draws and per-cycle prediction draws apart.
const TRUTH_STREAM: u64 = 0x7275_7468;
const PREDICTION_STREAM: u64 = 0x7072_6564;

// Share of the non-top probability placed on the single competing class;
// the remainder is spread evenly over all classes.
const ALT_SHARE: f64 = 0.8;

/// Per-class exposure counts and the accuracy curve they drive.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateLearner {
    params: SurrogateParams,
    exposure: Vec<u64>,
}

impl SurrogateLearner {
    pub fn new(params: SurrogateParams, num_classes: usize) -> Self {
        Self {
            params,
            exposure: vec![0; num_classes],
        }
    }

    pub fn with_exposure(params: SurrogateParams, exposure: Vec<u64>) -> Self {
        Self { params, exposure }
    }

    pub fn exposure(&self) -> &[u64] {
        &self.exposure
    }

    /// Probability that a voxel of class `c` is predicted as `c` before
    /// confusion noise; in `[base, max)`, non-decreasing in exposure.
    pub fn curve_accuracy(&self, c: usize) -> f64 {
        let p = &self.params;
        let e = self.exposure[c] as f64;
        p.base_accuracy + (p.max_accuracy - p.base_accuracy) * e / (e + p.half_saturation)
    }

    /// Correct-prediction probability after confusion noise.
    pub fn accuracy(&self, c: usize) -> f64 {
        1.0 - self.params.noise * (1.0 - self.curve_accuracy(c))
    }

    /// Unweighted mean of per-class accuracy.
    pub fn macro_accuracy(&self) -> f64 {
        let k = self.exposure.len();
        (0..k).map(|c| self.accuracy(c)).sum::<f64>() / k as f64
    }

    /// Adds revealed voxel labels, one count per class.
    pub fn observe(&mut self, class_counts: &[u32]) {
        for (e, &n) in self.exposure.iter_mut().zip(class_counts) {
            *e += u64::from(n);
        }
    }
}

/// One voxel's prediction: `top` on `pred`, `ALT_SHARE · rest` on `alt`,
/// and the remainder spread over every class.
#[derive(Debug, Clone, Copy)]
struct VoxelDraw {
    pred: usize,
    alt: usize,
    top: f64,
    rest: f64,
}

/// Synthetic pool with hidden per-voxel ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticPool {
    spec: PoolSpec,
    alphas: Vec<f64>,
    truth: Vec<u32>,
    fractions: Vec<f64>,
    rare: Vec<usize>,
}

/// Draws every sample's true class mix from the Dirichlet prior and its
/// voxel labels from that mix.
pub fn generate_pool(spec: &PoolSpec) -> Result<SyntheticPool> {
    spec.validate()?;
    let k = spec.num_classes;
    let alphas = spec.concentration.alphas(k);
    let gammas = alphas
        .iter()
        .map(|&a| Gamma::new(a, 1.0).map_err(|e| Error::InvalidSpec(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let prior = WeightedIndex::new(&alphas).map_err(|e| Error::InvalidSpec(e.to_string()))?;

    let mut truth = vec![0u32; spec.pool_size * k];
    for (i, counts) in truth.chunks_exact_mut(k).enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(mix_seed(spec.seed, TRUTH_STREAM), i as u64));
        let mix: Vec<f64> = gammas.iter().map(|g| g.sample(&mut rng)).collect();
        match WeightedIndex::new(&mix) {
            Ok(composition) => {
                for _ in 0..spec.voxels_per_sample {
                    counts[composition.sample(&mut rng)] += 1;
                }
            }
            // Every gamma draw underflowed: the mix degenerates to one class.
            Err(_) => counts[prior.sample(&mut rng)] = spec.voxels_per_sample as u32,
        }
    }

    let mut totals = vec![0u64; k];
    for counts in truth.chunks_exact(k) {
        for (t, &n) in totals.iter_mut().zip(counts) {
            *t += u64::from(n);
        }
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by_key(|&c| (totals[c], c));
    let mut rare: Vec<usize> = order[..(k / 4).max(1)].to_vec();
    rare.sort_unstable();

    let n = spec.voxels_per_sample as f64;
    let fractions = truth.iter().map(|&c| f64::from(c) / n).collect();

    Ok(SyntheticPool {
        spec: spec.clone(),
        alphas,
        truth,
        fractions,
        rare,
    })
}

impl SyntheticPool {
    pub fn spec(&self) -> &PoolSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.spec.pool_size
    }

    pub fn is_empty(&self) -> bool {
        self.spec.pool_size == 0
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    pub fn ids(&self) -> impl Iterator<Item = SampleId> {
        (0..self.len() as u64).map(SampleId)
    }

    /// Bottom quartile of classes by pool-wide true voxel count (at least one).
    pub fn rare_classes(&self) -> &[usize] {
        &self.rare
    }

    /// True voxel count per class for sample `id`.
    pub fn class_counts(&self, id: SampleId) -> &[u32] {
        let k = self.num_classes();
        let i = id.0 as usize;
        &self.truth[i * k..(i + 1) * k]
    }

    /// True label fractions of sample `id`.
    pub fn true_distribution(&self, id: SampleId) -> ClassDistribution {
        let counts: Vec<u64> = self.class_counts(id).iter().map(|&n| u64::from(n)).collect();
        ClassDistribution::from_counts(&counts).expect("every sample has voxels")
    }

    /// True label fractions of sample `id` as a raw slice.
    pub fn true_fractions(&self, id: SampleId) -> &[f64] {
        let k = self.num_classes();
        let i = id.0 as usize;
        &self.fractions[i * k..(i + 1) * k]
    }

    /// Pool-wide true voxel count per class.
    pub fn class_totals(&self) -> Vec<u64> {
        let mut totals = vec![0u64; self.num_classes()];
        for counts in self.truth.chunks_exact(self.num_classes()) {
            for (t, &n) in totals.iter_mut().zip(counts) {
                *t += u64::from(n);
            }
        }
        totals
    }

    fn check_id(&self, id: SampleId) -> Result<()> {
        if id.0 as usize >= self.len() {
            return Err(Error::MissingSummary(id));
        }
        Ok(())
    }

    /// Replays the surrogate's predictions for `id` in cycle `cycle`. The
    /// random stream depends only on `(seed, cycle, id)`, so policies facing
    /// the same pool see common random numbers.
    fn for_each_voxel(
        &self,
        id: SampleId,
        surrogate: &SurrogateLearner,
        cycle: u32,
        mut f: impl FnMut(VoxelDraw),
    ) {
        let k = self.num_classes();
        let stream = mix_seed(mix_seed(self.spec.seed, PREDICTION_STREAM), u64::from(cycle));
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(stream, id.0));
        let noise = self.spec.surrogate.noise;
        let total_alpha: f64 = self.alphas.iter().sum();
        for (c, &n) in self.class_counts(id).iter().enumerate() {
            let curve = surrogate.curve_accuracy(c);
            let accuracy = surrogate.accuracy(c);
            for _ in 0..n {
                let correct = rng.random::<f64>() < accuracy;
                let other = self.confuser(c, total_alpha, rng.random::<f64>());
                let confidence = 0.5 + 0.45 * curve * (0.5 + 0.5 * rng.random::<f64>());
                let top = 1.0 - noise * (1.0 - confidence);
                let (pred, alt) = if correct { (c, other) } else { (other, c) };
                debug_assert!(k >= 2 && pred != alt);
                f(VoxelDraw {
                    pred,
                    alt,
                    top,
                    rest: 1.0 - top,
                });
            }
        }
    }

    // Class drawn from the prior with `c` excluded, by inverting `u`.
    fn confuser(&self, c: usize, total_alpha: f64, u: f64) -> usize {
        let mut target = u * (total_alpha - self.alphas[c]);
        let mut last = if c == 0 { 1 } else { 0 };
        for (d, &a) in self.alphas.iter().enumerate() {
            if d == c {
                continue;
            }
            last = d;
            if target < a {
                return d;
            }
            target -= a;
        }
        last
    }

    /// Materializes the predicted probability grid of `id`.
    pub fn grid(&self, id: SampleId, surrogate: &SurrogateLearner, cycle: u32) -> Result<VoxelProbabilityGrid> {
        self.check_id(id)?;
        let k = self.num_classes();
        let mut probs = Vec::with_capacity(self.spec.voxels_per_sample * k);
        self.for_each_voxel(id, surrogate, cycle, |v| {
            let spread = (1.0 - ALT_SHARE) * v.rest / k as f64;
            let start = probs.len();
            probs.resize(start + k, spread);
            probs[start + v.pred] += v.top;
            probs[start + v.alt] += ALT_SHARE * v.rest;
        });
        VoxelProbabilityGrid::new(id, k, probs)
    }

    /// Summary of `id`'s predictions without materializing the grid; matches
    /// summarizing [`Self::grid`] up to floating-point reassociation.
    pub fn summary(&self, id: SampleId, surrogate: &SurrogateLearner, cycle: u32) -> Result<SampleSummary> {
        self.check_id(id)?;
        let k = self.num_classes();
        let mut counts = vec![0u64; k];
        let mut adjust = vec![0.0f64; k];
        let mut spread_mass = 0.0;
        self.for_each_voxel(id, surrogate, cycle, |v| {
            let spread = (1.0 - ALT_SHARE) * v.rest / k as f64;
            let base = neg_xlogx(spread);
            counts[v.pred] += 1;
            spread_mass += base;
            adjust[v.pred] += neg_xlogx(v.top + spread) - base;
            adjust[v.alt] += neg_xlogx(ALT_SHARE * v.rest + spread) - base;
        });
        let n = self.spec.voxels_per_sample as f64;
        let mass = adjust
            .iter()
            .map(|a| ((spread_mass + a) / n).max(0.0))
            .collect();
        SampleSummary::new(
            id,
            self.spec.voxels_per_sample as u64,
            ClassDistribution::from_counts(&counts)?,
            mass,
        )
    }

    /// Summaries of the whole pool under the current surrogate.
    pub fn summaries(
        &self,
        surrogate: &SurrogateLearner,
        cycle: u32,
    ) -> Result<BTreeMap<SampleId, SampleSummary>> {
        self.ids()
            .map(|id| Ok((id, self.summary(id, surrogate, cycle)?)))
            .collect()
    }
}

fn neg_xlogx(p: f64) -> f64 {
    if p > 0.0 {
        -p * p.ln()
    } else {
        0.0
    }
}
