use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use super::EpochLog;
use crate::error::{Error, Result};
use crate::metrics::fmt_opt;
use crate::model::{ModelKind, SegModel};

/// Hooks called by the training loops.
pub trait TrainObserver {
    /// `fold` is `None` during full-corpus training.
    fn on_epoch(&mut self, _model: ModelKind, _fold: Option<usize>, _entry: &EpochLog) -> Result<()> {
        Ok(())
    }

    /// Called whenever a fold reaches a new best validation Dice.
    fn on_best(&mut self, _model: ModelKind, _fold: usize, _epoch: usize, _weights: &SegModel) -> Result<()> {
        Ok(())
    }
}

pub struct NoopObserver;

impl TrainObserver for NoopObserver {}

/// Appends rows to `train_log.csv`:
/// `model,fold,epoch,train_loss,val_dice,val_iou,val_recall,lr`.
pub struct CsvTrainLog {
    path: PathBuf,
    file: File,
}

impl CsvTrainLog {
    pub const HEADER: &'static str = "model,fold,epoch,train_loss,val_dice,val_iou,val_recall,lr";

    pub fn open(path: &Path) -> Result<Self> {
        let fresh = !path.exists() || std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(Error::io(path))?;
        if fresh {
            writeln!(file, "{}", Self::HEADER).map_err(Error::io(path))?;
        }
        Ok(Self {
            path: path.to_path_buf(),
            file,
        })
    }
}

impl TrainObserver for CsvTrainLog {
    fn on_epoch(&mut self, model: ModelKind, fold: Option<usize>, e: &EpochLog) -> Result<()> {
        let fold = fold.map(|f| f.to_string()).unwrap_or_else(|| "full".into());
        writeln!(
            self.file,
            "{model},{fold},{},{},{},{},{},{}",
            e.epoch,
            e.train_loss,
            fmt_opt(e.val_dice),
            fmt_opt(e.val_iou),
            fmt_opt(e.val_recall),
            e.lr
        )
        .map_err(Error::io(&self.path))
    }
}

impl<A: TrainObserver, B: TrainObserver> TrainObserver for (A, B) {
    fn on_epoch(&mut self, model: ModelKind, fold: Option<usize>, entry: &EpochLog) -> Result<()> {
        self.0.on_epoch(model, fold, entry)?;
        self.1.on_epoch(model, fold, entry)
    }

    fn on_best(&mut self, model: ModelKind, fold: usize, epoch: usize, weights: &SegModel) -> Result<()> {
        self.0.on_best(model, fold, epoch, weights)?;
        self.1.on_best(model, fold, epoch, weights)
    }
}
