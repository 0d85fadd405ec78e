//! k-fold training of two models, selection by mean Dice, and pairwise tests.
//!
//! Small on purpose: 20 phantom samples at 64 px, 3 epochs per fold.

use mammoseg::dataset::generate_phantom_corpus;
use mammoseg::model::{ModelKind, ModelSpec};
use mammoseg::stats::{pairwise_compare, ZeroPolicy};
use mammoseg::train::{run_cv, select_best, NoopObserver, TrainConfig};

fn main() -> mammoseg::Result<()> {
    let corpus = generate_phantom_corpus(20, 64, 1)?;
    let config = TrainConfig {
        epochs: 3,
        learning_rate: 3e-3,
        image_side: 64,
        ..TrainConfig::default()
    };
    let mut results = Vec::new();
    for kind in [ModelKind::FastScnn, ModelKind::EfficientNetLite] {
        let r = run_cv(&ModelSpec::random_init(kind), &corpus, 4, &config, &mut NoopObserver)?;
        println!("{kind}: folds {:.3?} mean {:.4} ± {:.4}", r.fold_dice(), r.mean_dice, r.std_dice);
        results.push(r);
    }
    println!("selected: {}", select_best(&results)?);
    let m = pairwise_compare(&results, ZeroPolicy::WilcoxDrop)?;
    for (a, b, raw, adj) in m.pairs() {
        println!("{a} vs {b}: p {raw:.4}, adjusted {adj:.4}");
    }
    Ok(())
}
