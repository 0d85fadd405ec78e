//! Overfit oracle: train and validate on the same eight phantom samples.
//!
//! `cargo run --release --example train_smoke -- [model] [epochs] [batch] [lr]`

use std::time::Instant;

use mammoseg::dataset::generate_phantom_corpus;
use mammoseg::model::{ModelKind, ModelSpec};
use mammoseg::preprocess::AugmentPolicy;
use mammoseg::train::{train_fold, EpochLog, TrainConfig, TrainObserver};

struct Print(Instant);

impl TrainObserver for Print {
    fn on_epoch(&mut self, _: ModelKind, _: Option<usize>, e: &EpochLog) -> mammoseg::Result<()> {
        println!(
            "epoch {:>2}  loss {:.4}  dice {:.4}  lr {:.1e}  ({:.1}s)",
            e.epoch,
            e.train_loss,
            e.val_dice.unwrap_or(0.0),
            e.lr,
            self.0.elapsed().as_secs_f64()
        );
        Ok(())
    }
}

fn main() -> mammoseg::Result<()> {
    let mut args = std::env::args().skip(1);
    let kind: ModelKind = args.next().as_deref().unwrap_or("fastscnn").parse()?;
    let epochs = args.next().map(|e| e.parse().expect("epochs")).unwrap_or(30);
    let batch_size = args.next().map(|e| e.parse().expect("batch size")).unwrap_or(4);
    let learning_rate = args.next().map(|e| e.parse().expect("learning rate")).unwrap_or(3e-3);
    let corpus = generate_phantom_corpus(8, 128, 0)?;
    let config = TrainConfig {
        epochs,
        batch_size,
        learning_rate,
        image_side: 128,
        augment: AugmentPolicy::identity(),
        ..TrainConfig::default()
    };
    let r = train_fold(
        &ModelSpec::random_init(kind),
        &corpus.samples,
        &corpus.samples,
        &config,
        0,
        &mut Print(Instant::now()),
    )?;
    println!("{kind}: best dice {:.4} at epoch {}", r.best_dice, r.best_epoch);
    Ok(())
}
