use std::path::Path;

use crate::acquisition::CycleState;
use crate::error::{Error, Result};

/// Atomically persists the cycle state as JSON.
pub fn save_state(state: &CycleState, path: &Path) -> Result<()> {
    state.validate()?;
    super::write_atomic(path, &serde_json::to_vec(state)?)
}

/// Loads a cycle state and checks its membership invariants.
pub fn load_state(path: &Path) -> Result<CycleState> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let state: CycleState =
        serde_json::from_slice(&bytes).map_err(|e| Error::StateCorrupt(e.to_string()))?;
    state.validate()?;
    Ok(state)
}
