use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use mammoseg_nn::{read_archive, write_archive};
use serde::{Deserialize, Serialize};

use super::{build_model, ModelSpec, SegModel};
use crate::error::{Error, Result};

/// Provenance stored alongside checkpoint weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub spec: ModelSpec,
    pub epochs: usize,
    pub corpus: String,
    pub config_hash: String,
    pub image_side: usize,
    pub seed: u64,
}

pub fn save_checkpoint(path: &Path, model: &SegModel, meta: &CheckpointMeta) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    let file = File::create(path).map_err(Error::io(path))?;
    let mut w = BufWriter::new(file);
    write_archive(&mut w, model.params(), &serde_json::to_value(meta)?)?;
    w.flush().map_err(Error::io(path))?;
    Ok(())
}

/// Rebuilds the embedded spec and restores every stored tensor.
pub fn load_checkpoint(path: &Path) -> Result<(SegModel, CheckpointMeta)> {
    let file = File::open(path).map_err(Error::io(path))?;
    let archive = read_archive(BufReader::new(file))?;
    let meta: CheckpointMeta = serde_json::from_value(archive.metadata.clone())
        .map_err(|e| Error::Invalid(format!("checkpoint {} has malformed metadata: {e}", path.display())))?;
    let spec = ModelSpec {
        pretrained: false,
        ..meta.spec.clone()
    };
    let mut model = build_model(&spec, 0)?;
    archive.restore_into(model.params_mut())?;
    model.spec = meta.spec.clone();
    Ok((model, meta))
}

/// Compares checkpoint provenance against the current run, logging and
/// returning a warning for each mismatch.
pub fn check_provenance(meta: &CheckpointMeta, corpus: Option<&str>, config_hash: Option<&str>) -> Vec<String> {
    let mut warnings = Vec::new();
    if let Some(c) = corpus.filter(|c| *c != meta.corpus) {
        warnings.push(format!(
            "checkpoint was trained on corpus `{}`, but the configuration names `{c}`",
            meta.corpus
        ));
    }
    if let Some(h) = config_hash.filter(|h| *h != meta.config_hash) {
        warnings.push(format!(
            "checkpoint config hash {} differs from the current configuration {h}",
            meta.config_hash
        ));
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    warnings
}
