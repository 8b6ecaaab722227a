pub mod attention;
pub mod eval;
pub mod gen_data;
pub mod inspect;
pub mod probe;
pub mod render_parts;
pub mod train;

use std::path::{Path, PathBuf};

use anyhow::Result;

use crate::config::config_error;

/// A path that must be set by a flag or the config file.
pub fn required<'a>(value: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
    value.as_deref().ok_or_else(|| config_error(format!("`{name}` is required (flag or config file)")))
}
