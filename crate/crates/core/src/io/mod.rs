//! On-disk formats: grid files, manifests, summaries, selections, cycle
//! state and coreset features.
//!
//! Everything except grid payloads is line-delimited JSON (one object per
//! line). Readers reject malformed input with the offending line number
//! instead of repairing it. Doubles are written in shortest round-trip form,
//! so every text format is lossless.

mod features;
mod grid;
mod manifest;
mod selection;
mod state;
mod summary;

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub use features::{read_features, write_features};
pub use grid::{read_grid, write_grid, write_grid_f32, GRID_MAGIC, GRID_ROW_TOLERANCE, GRID_VERSION};
pub use manifest::{read_manifest, write_manifest, ManifestEntry, ManifestSource};
pub use selection::{read_selection, selection_to_string, write_selection};
pub use state::{load_state, save_state};
pub use summary::{read_summaries, summarize_grid, write_summaries, SampleSummary};

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub(crate) fn to_jsonl<T: Serialize>(records: impl IntoIterator<Item = T>) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(&r)?);
        out.push('\n');
    }
    Ok(out)
}

/// Parses one record per non-blank line, tagging errors with 1-based line
/// numbers.
pub(crate) fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((i + 1, rec));
    }
    Ok(out)
}
