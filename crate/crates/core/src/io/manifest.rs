use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::SampleSummary;
use crate::error::{Error, Result};
use crate::SampleId;

/// Where a manifest entry's data lives.
#[derive(Debug, Clone, PartialEq)]
pub enum ManifestSource {
    /// Grid file; relative paths are resolved against the manifest directory.
    Grid(PathBuf),
    /// Precomputed summary carried inline.
    Inline(Box<SampleSummary>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub id: SampleId,
    pub source: ManifestSource,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntry {
    id: SampleId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    grid: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    summary: Option<SampleSummary>,
}

/// Reads a manifest (`{"id": .., "grid": "rel/path"}` or
/// `{"id": .., "summary": {..}}` per line).
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let base = path.parent().unwrap_or(Path::new(""));
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (line, raw) in super::read_jsonl::<RawEntry>(path)? {
        let bad = |message: String| Error::Parse { line, message };
        if !seen.insert(raw.id) {
            return Err(bad(format!("duplicate sample id {}", raw.id)));
        }
        let source = match (raw.grid, raw.summary) {
            (Some(g), None) => ManifestSource::Grid(base.join(g)),
            (None, Some(s)) if s.id == raw.id => ManifestSource::Inline(Box::new(s)),
            (None, Some(s)) => {
                return Err(bad(format!("inline summary id {} differs from entry id", s.id)))
            }
            _ => return Err(bad("entry needs exactly one of `grid` or `summary`".into())),
        };
        out.push(ManifestEntry { id: raw.id, source });
    }
    Ok(out)
}

/// Writes a manifest; grid paths are stored as given.
pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let raw = entries.iter().map(|e| match &e.source {
        ManifestSource::Grid(p) => RawEntry {
            id: e.id,
            grid: Some(p.clone()),
            summary: None,
        },
        ManifestSource::Inline(s) => RawEntry {
            id: e.id,
            grid: None,
            summary: Some((**s).clone()),
        },
    });
    super::write_atomic(path, super::to_jsonl(raw)?.as_bytes())
}
