use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dist::{
    frequency_weighted_uncertainty, ClassDistribution, RowAccumulator, VoxelProbabilityGrid,
};
use crate::error::{Error, Result};
use crate::SampleId;

/// Everything the acquisition policies need from one sample's grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSummary", into = "RawSummary")]
pub struct SampleSummary {
    pub id: SampleId,
    pub voxel_count: u64,
    pub q: ClassDistribution,
    /// Per-class entropy mass in nats; sums to the mean voxel entropy.
    pub entropy_mass: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawSummary {
    id: SampleId,
    k: usize,
    voxel_count: u64,
    q: Vec<f64>,
    s: Vec<f64>,
}

impl TryFrom<RawSummary> for SampleSummary {
    type Error = Error;

    fn try_from(r: RawSummary) -> Result<Self> {
        if r.q.len() != r.k {
            return Err(Error::DimensionMismatch {
                expected: r.k,
                got: r.q.len(),
            });
        }
        SampleSummary::new(r.id, r.voxel_count, ClassDistribution::new(r.q)?, r.s)
    }
}

impl From<SampleSummary> for RawSummary {
    fn from(s: SampleSummary) -> Self {
        RawSummary {
            id: s.id,
            k: s.q.num_classes(),
            voxel_count: s.voxel_count,
            q: s.q.into(),
            s: s.entropy_mass,
        }
    }
}

impl SampleSummary {
    pub fn new(
        id: SampleId,
        voxel_count: u64,
        q: ClassDistribution,
        entropy_mass: Vec<f64>,
    ) -> Result<Self> {
        if voxel_count == 0 {
            return Err(Error::EmptyGrid);
        }
        if entropy_mass.len() != q.num_classes() {
            return Err(Error::DimensionMismatch {
                expected: q.num_classes(),
                got: entropy_mass.len(),
            });
        }
        if entropy_mass.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::InvalidConfig(format!(
                "sample {id}: entropy mass must be finite and nonnegative"
            )));
        }
        Ok(Self {
            id,
            voxel_count,
            q,
            entropy_mass,
        })
    }

    /// Builds a summary from a finished row accumulator.
    pub fn from_accumulator(id: SampleId, acc: &RowAccumulator) -> Result<Self> {
        Self::new(id, acc.num_rows(), acc.class_distribution()?, acc.entropy_mass()?)
    }

    pub fn num_classes(&self) -> usize {
        self.q.num_classes()
    }

    /// Mean unweighted voxel entropy, `Σ_c S_c`.
    pub fn mean_entropy(&self) -> f64 {
        self.entropy_mass.iter().sum()
    }

    pub fn frequency_weighted_uncertainty(&self, epsilon: f64) -> Result<f64> {
        frequency_weighted_uncertainty(&self.q, &self.entropy_mass, epsilon)
    }
}

/// Argmax distribution plus per-class entropy mass of a grid.
pub fn summarize_grid(grid: &VoxelProbabilityGrid) -> Result<SampleSummary> {
    if grid.num_voxels() == 0 {
        log::warn!("sample {} has no visible voxels; excluded", grid.sample_id());
        return Err(Error::EmptyGrid);
    }
    let mut acc = RowAccumulator::new(grid.num_classes());
    for row in grid.rows() {
        acc.push(row);
    }
    SampleSummary::from_accumulator(grid.sample_id(), &acc)
}

pub fn write_summaries<'a>(
    path: &Path,
    summaries: impl IntoIterator<Item = &'a SampleSummary>,
) -> Result<()> {
    super::write_atomic(path, super::to_jsonl(summaries)?.as_bytes())
}

/// Reads a summary file; duplicate ids are rejected.
pub fn read_summaries(path: &Path) -> Result<BTreeMap<SampleId, SampleSummary>> {
    let mut out = BTreeMap::new();
    let mut k = None;
    for (line, s) in super::read_jsonl::<SampleSummary>(path)? {
        let kk = *k.get_or_insert(s.num_classes());
        if s.num_classes() != kk {
            return Err(Error::Parse {
                line,
                message: format!("expected {kk} classes, found {}", s.num_classes()),
            });
        }
        if out.insert(s.id, s).is_some() {
            return Err(Error::Parse {
                line,
                message: "duplicate sample id".into(),
            });
        }
    }
    Ok(out)
}
