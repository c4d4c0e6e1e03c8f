use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::acquisition::{ComponentScores, SelectionEntry, SelectionResult};
use crate::baselines::Policy;
use crate::error::{Error, Result};
use crate::SampleId;

/// One line of a selection file.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    cycle: u32,
    policy: Policy,
    rank: usize,
    id: SampleId,
    score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    inter: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    intra: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ufw: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    inter_norm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    intra_norm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ufw_norm: Option<f64>,
}

impl Record {
    fn from_entry(cycle: u32, policy: Policy, e: &SelectionEntry) -> Self {
        let c = e.components.as_ref();
        Record {
            cycle,
            policy,
            rank: e.rank,
            id: e.id,
            score: e.score,
            inter: c.map(|c| c.inter),
            intra: c.and_then(|c| c.intra),
            ufw: c.map(|c| c.ufw),
            inter_norm: c.map(|c| c.inter_norm),
            intra_norm: c.map(|c| c.intra_norm),
            ufw_norm: c.map(|c| c.ufw_norm),
        }
    }

    fn into_entry(self) -> std::result::Result<SelectionEntry, String> {
        let components = match (self.inter, self.ufw, self.inter_norm, self.intra_norm, self.ufw_norm) {
            (Some(inter), Some(ufw), Some(inter_norm), Some(intra_norm), Some(ufw_norm)) => {
                Some(ComponentScores {
                    inter,
                    intra: self.intra,
                    ufw,
                    inter_norm,
                    intra_norm,
                    ufw_norm,
                })
            }
            (None, None, None, None, None) if self.intra.is_none() => None,
            _ => return Err("incomplete component scores".into()),
        };
        Ok(SelectionEntry {
            rank: self.rank,
            id: self.id,
            score: self.score,
            components,
        })
    }
}

/// Serializes a selection as line-delimited records.
pub fn selection_to_string(result: &SelectionResult) -> Result<String> {
    if result.entries.is_empty() {
        return Err(Error::InvalidConfig("refusing to serialize an empty selection".into()));
    }
    super::to_jsonl(
        result
            .entries
            .iter()
            .map(|e| Record::from_entry(result.cycle_index, result.policy, e)),
    )
}

pub fn write_selection(result: &SelectionResult, path: &Path) -> Result<()> {
    super::write_atomic(path, selection_to_string(result)?.as_bytes())
}

/// Reads a selection; ranks must run 1..M and cycle/policy must agree across
/// lines.
pub fn read_selection(path: &Path) -> Result<SelectionResult> {
    let records = super::read_jsonl::<Record>(path)?;
    let Some((_, first)) = records.first() else {
        return Err(Error::Parse {
            line: 1,
            message: "selection file has no entries".into(),
        });
    };
    let (cycle, policy) = (first.cycle, first.policy);
    let mut entries = Vec::with_capacity(records.len());
    let mut seen = std::collections::BTreeSet::new();
    for (i, (line, rec)) in records.into_iter().enumerate() {
        let bad = |message: String| Error::Parse { line, message };
        if rec.cycle != cycle || rec.policy != policy {
            return Err(bad("cycle or policy differs from the first entry".into()));
        }
        if rec.rank != i + 1 {
            return Err(bad(format!("rank {} out of order, expected {}", rec.rank, i + 1)));
        }
        if !seen.insert(rec.id) {
            return Err(bad(format!("sample {} listed twice", rec.id)));
        }
        entries.push(rec.into_entry().map_err(bad)?);
    }
    Ok(SelectionResult {
        cycle_index: cycle,
        policy,
        entries,
    })
}
