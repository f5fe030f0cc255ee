use anyhow::{Context, Result};
use crossway_core::config::RunConfig;
use std::path::{Path, PathBuf};

/// Environment variable naming the root directory for all outputs.
pub const OUTPUT_ROOT_ENV: &str = "CROSSWAY_OUT";

pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("crossway-out"))
}

/// Load the run configuration: file if given (plus overrides), otherwise
/// pure defaults with overrides applied.
pub fn load_config(path: Option<&Path>, sets: &[String]) -> Result<RunConfig> {
    let cfg = match path {
        Some(p) => RunConfig::load(p, sets)?,
        None => RunConfig::from_toml_with_overrides("", sets)?,
    };
    Ok(cfg)
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))
}
