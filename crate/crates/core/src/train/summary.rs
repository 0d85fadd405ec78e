use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CVResult;
use crate::error::{Error, Result};

/// Contents of `cv_summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub config_hash: String,
    pub results: Vec<CVResult>,
}

pub fn write_cv_summary(path: &Path, summary: &CvSummary) -> Result<()> {
    let mut text = serde_json::to_string_pretty(summary)?;
    text.push('\n');
    std::fs::write(path, text).map_err(Error::io(path))
}

pub fn read_cv_summary(path: &Path) -> Result<CvSummary> {
    let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
    let summary: CvSummary = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{} is not a valid CV summary: {e}", path.display())))?;
    if summary.results.is_empty() {
        return Err(Error::Config(format!("{} contains no results", path.display())));
    }
    Ok(summary)
}
