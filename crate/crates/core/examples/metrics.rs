//! Confusion counts, Dice/IoU/recall, and how empty masks are scored.

use mammoseg::metrics::{
    aggregate, confusion_at, dice_score, iou_score, recall_score, EmptyPolicy, MetricPolicies, MetricRecord,
};

fn main() -> mammoseg::Result<()> {
    let probs = [0.9f32, 0.7, 0.4, 0.2, 0.6, 0.1];
    let gt = [1u8, 1, 1, 0, 0, 0];
    for t in [0.3, 0.5, 0.8] {
        let c = confusion_at(&probs, &gt, t)?;
        println!(
            "threshold {t}: tp {} fp {} fn {} tn {}  dice {:.3} iou {:.3} recall {:.3}",
            c.tp,
            c.fp,
            c.fn_,
            c.tn,
            dice_score(c, EmptyPolicy::One).unwrap(),
            iou_score(c, EmptyPolicy::One).unwrap(),
            recall_score(c, EmptyPolicy::Exclude).unwrap()
        );
    }

    // a normal image predicted empty
    let c = confusion_at(&[0.1f32; 4], &[0u8; 4], 0.5)?;
    for p in [EmptyPolicy::One, EmptyPolicy::Zero, EmptyPolicy::Exclude] {
        println!("empty/empty under {p:?}: dice {:?}, recall {:?}", dice_score(c, p), recall_score(c, p));
    }

    let policies = MetricPolicies::default();
    let records = vec![
        MetricRecord::from_counts("lesion", 0.5, confusion_at(&probs, &gt, 0.5)?, &policies),
        MetricRecord::from_counts("normal", 0.5, c, &policies),
    ];
    let agg = aggregate(&records)?;
    println!(
        "macro mean: dice {:?} (n={}), recall {:?} (n={})",
        agg.dice.mean, agg.dice.n_included, agg.recall.mean, agg.recall.n_included
    );
    Ok(())
}
