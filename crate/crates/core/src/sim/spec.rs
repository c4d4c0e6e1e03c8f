use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dirichlet concentration over classes for per-sample compositions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Concentration {
    /// Explicit per-class values; length must equal the class count.
    Values { values: Vec<f64> },
    /// `α_c ∝ (c + 1)^-exponent`, scaled to sum to `total`.
    LongTail { total: f64, exponent: f64 },
    /// Every class gets `value`.
    Symmetric { value: f64 },
}

impl Concentration {
    pub fn alphas(&self, num_classes: usize) -> Vec<f64> {
        match self {
            Self::Values { values } => values.clone(),
            Self::LongTail { total, exponent } => {
                let raw: Vec<f64> = (0..num_classes)
                    .map(|c| ((c + 1) as f64).powf(-exponent))
                    .collect();
                let sum: f64 = raw.iter().sum();
                raw.iter().map(|r| total * r / sum).collect()
            }
            Self::Symmetric { value } => vec![*value; num_classes],
        }
    }
}

impl Default for Concentration {
    fn default() -> Self {
        Self::LongTail {
            total: 4.0,
            exponent: 1.5,
        }
    }
}

/// Saturating accuracy curve of the surrogate learner and its confusion
/// noise.
///
/// Class `c` with `e` labeled voxels is predicted correctly with probability
/// `base + (max - base) · e / (e + half_saturation)`. `noise` scales both the
/// error rate and the spread of probability away from the top class; zero
/// noise yields perfect one-hot predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateParams {
    pub base_accuracy: f64,
    pub max_accuracy: f64,
    pub half_saturation: f64,
    pub noise: f64,
}

impl Default for SurrogateParams {
    fn default() -> Self {
        Self {
            base_accuracy: 0.35,
            max_accuracy: 0.95,
            half_saturation: 2000.0,
            noise: 1.0,
        }
    }
}

/// How the first cycle's batch is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FirstCycle {
    /// A uniformly random batch shared by every policy (the initial labeled
    /// set that trains the first model).
    #[default]
    Random,
    /// The policy itself picks from a cold start.
    Policy,
}

/// Synthetic long-tail pool description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolSpec {
    pub pool_size: usize,
    #[serde(default = "default_classes")]
    pub num_classes: usize,
    #[serde(default = "default_voxels")]
    pub voxels_per_sample: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub concentration: Concentration,
    #[serde(default)]
    pub surrogate: SurrogateParams,
    #[serde(default)]
    pub first_cycle: FirstCycle,
}

fn default_classes() -> usize {
    17
}

fn default_voxels() -> usize {
    256
}

impl PoolSpec {
    /// Long-tail pool with every other field at its default.
    pub fn long_tail(pool_size: usize, seed: u64) -> Self {
        Self {
            pool_size,
            num_classes: default_classes(),
            voxels_per_sample: default_voxels(),
            seed,
            concentration: Concentration::default(),
            surrogate: SurrogateParams::default(),
            first_cycle: FirstCycle::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.pool_size == 0 {
            return bad("pool_size must be at least 1".into());
        }
        if self.num_classes < 2 {
            return bad(format!("num_classes must be at least 2, got {}", self.num_classes));
        }
        if self.voxels_per_sample == 0 {
            return bad("voxels_per_sample must be at least 1".into());
        }
        let alphas = self.concentration.alphas(self.num_classes);
        if alphas.len() != self.num_classes {
            return bad(format!(
                "concentration has {} entries for {} classes",
                alphas.len(),
                self.num_classes
            ));
        }
        if let Some(a) = alphas.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
            return bad(format!("concentration entries must be positive, got {a}"));
        }
        let s = &self.surrogate;
        let chance = 1.0 / self.num_classes as f64;
        if !(s.base_accuracy > chance && s.base_accuracy <= s.max_accuracy && s.max_accuracy < 1.0) {
            return bad(format!(
                "need 1/K < base_accuracy <= max_accuracy < 1, got {} and {}",
                s.base_accuracy, s.max_accuracy
            ));
        }
        if !(s.half_saturation > 0.0 && s.half_saturation.is_finite()) {
            return bad("half_saturation must be positive".into());
        }
        if !(0.0..=1.0).contains(&s.noise) {
            return bad(format!("noise must lie in [0, 1], got {}", s.noise));
        }
        Ok(())
    }
}
