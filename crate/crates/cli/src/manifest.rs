//! Run manifests: one `manifest.json` per artifact directory recording the
//! command, its fully-resolved configuration, seeds, input/output paths,
//! tool version and wall-clock. Re-running the recorded command reproduces
//! every output byte-for-byte (wall-clock aside).

use anyhow::{Context, Result};
use std::path::{Path, PathBuf};
use std::time::Duration;

pub fn write(
    dir: &Path,
    command: &str,
    config: serde_json::Value,
    seeds: &[u64],
    inputs: &[PathBuf],
    outputs: &[PathBuf],
    wall: Duration,
) -> Result<()> {
    let manifest = serde_json::json!({
        "command": command,
        "config": config,
        "seeds": seeds,
        "inputs": inputs,
        "outputs": outputs,
        "version": env!("CARGO_PKG_VERSION"),
        "wall_clock_secs": wall.as_secs_f64(),
    });
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
