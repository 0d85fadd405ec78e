//! Train on one phantom distribution, then evaluate and sweep thresholds on a
//! lower-contrast one.

use mammoseg::dataset::{generate_phantom_corpus, generate_phantom_corpus_with, PhantomConfig};
use mammoseg::eval::{default_thresholds, evaluate, threshold_sweep, EvalOptions};
use mammoseg::metrics::MetricPolicies;
use mammoseg::model::{ModelKind, ModelSpec};
use mammoseg::preprocess::AugmentPolicy;
use mammoseg::train::{train_full, NoopObserver, TrainConfig};

fn main() -> mammoseg::Result<()> {
    let source = generate_phantom_corpus(24, 128, 1)?;
    let target = generate_phantom_corpus_with(
        12,
        128,
        2,
        &PhantomConfig {
            lesion_contrast: 0.2,
            ..PhantomConfig::default()
        },
    )?;
    let config = TrainConfig {
        epochs: 15,
        learning_rate: 3e-3,
        image_side: 128,
        augment: AugmentPolicy::identity(),
        ..TrainConfig::default()
    };
    let dir = tempfile::tempdir().expect("temp dir");
    let ckpt = dir.path().join("fastscnn.msarc");
    let trained = train_full(&ModelSpec::random_init(ModelKind::FastScnn), &source, &config, &ckpt, "example", &mut NoopObserver)?;

    let opts = EvalOptions {
        threshold: 0.5,
        policies: MetricPolicies::default(),
        image_side: 128,
    };
    for (label, corpus) in [("source", &source), ("shifted", &target)] {
        let out = evaluate(&trained.model, corpus, &opts)?;
        let a = out.aggregates_annotated.expect("phantoms include lesions");
        println!(
            "{label:<8} dice {:.4} (all images {:.4}) iou {:.4} recall {:.4}",
            a.dice.mean.unwrap(),
            out.aggregates.dice.mean.unwrap(),
            a.iou.mean.unwrap(),
            a.recall.mean.unwrap()
        );
    }
    // sweep means are over all images
    let sweep = threshold_sweep(&trained.model, &target, &default_thresholds(), &opts)?;
    for p in &sweep.per_threshold {
        println!("t={:.1}  dice {:.4}  recall {:.4}", p.threshold, p.dice.mean.unwrap(), p.recall.mean.unwrap());
    }
    Ok(())
}
