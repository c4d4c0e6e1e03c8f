use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::FeatureSet;
use crate::error::{Error, Result};
use crate::SampleId;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: SampleId,
    features: Vec<f64>,
}

/// Reads `{"id": .., "features": [..]}` lines; all vectors share one length.
pub fn read_features(path: &Path) -> Result<FeatureSet> {
    let mut out = FeatureSet::new();
    let mut dim = None;
    for (line, rec) in super::read_jsonl::<Record>(path)? {
        let d = *dim.get_or_insert(rec.features.len());
        if rec.features.len() != d || d == 0 {
            return Err(Error::Parse {
                line,
                message: format!("feature length {} differs from {d}", rec.features.len()),
            });
        }
        if out.insert(rec.id, rec.features).is_some() {
            return Err(Error::Parse {
                line,
                message: "duplicate sample id".into(),
            });
        }
    }
    Ok(out)
}

pub fn write_features(path: &Path, features: &FeatureSet) -> Result<()> {
    let records = features.iter().map(|(id, f)| Record {
        id: *id,
        features: f.clone(),
    });
    super::write_atomic(path, super::to_jsonl(records)?.as_bytes())
}
